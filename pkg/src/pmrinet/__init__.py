"""Calibration-free parallel-MRI reconstruction toolkit.

A complex-valued unrolled reconstruction network (learned coil
combination, image-space and k-space denoisers) together with a training
loop that computes gradients through an explicit state/costate recursion
and certifies them against finite differences.
"""

from .ops import (
    ConvKernel,
    ContractError,
    ShapeError,
    apply_mask,
    cconv2d,
    crelu,
    dft2,
    idft2,
    soft_shrink,
    vjp,
)
from .ctns import FormatError, read_ctns, write_ctns
from .forward_model import SamplingMask, encode, fidelity_grad_step
from .network import (
    DenoiserBank,
    NetParams,
    PhaseParams,
    Trajectory,
    coil_combine,
    denoise_image,
    flatten_grads,
    flatten_params,
    forward,
    init_params,
    init_recon,
    load_params,
    parameter_count,
    phase_step,
    phase_step_image_only,
    refine_kspace,
    rss_combine,
    save_params,
    trainable_mask,
    unflatten_params,
    zero_weights,
)
from .training import (
    AdamState,
    CostateSet,
    LossWeights,
    TrainingDiverged,
    adam_step,
    certify_gradients,
    costate_fd_check,
    evaluate_loss,
    finite_diff_grad,
    kink_margin,
    loss_body,
    loss_coil,
    loss_main,
    mlm_backward,
    train,
)
from .datasim import (
    Sample,
    cartesian_mask,
    coil_sensitivities,
    load_sample,
    make_coil_images,
    phantom,
    save_sample,
    simulate_acquisition,
)
from .metrics import MetricReport, psnr, rmse_image, rmse_multicoil, ssim

__all__ = [name for name in dir() if not name.startswith("_")]
