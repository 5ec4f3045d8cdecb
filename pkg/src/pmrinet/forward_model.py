"""The pMRI encoding operator and the data-fidelity gradient step.

K-space measurements are stored densely: an (m, n, c) complex array with
exact zeros at unsampled locations, so that the sampling projection is a
plain elementwise mask multiply.  Masks live in DFT index space (the DC
coefficient at index (0, 0)), matching :func:`pmrinet.ops.dft2` output.
"""

from dataclasses import dataclass

import numpy as np

from .ops import ShapeError, ContractError, apply_mask, dft2, idft2


@dataclass(frozen=True)
class SamplingMask:
    """Binary k-space sampling mask (1 = sampled location).

    ``mask`` is a real (m, n) array of exact 0.0/1.0 values, in the same
    index convention as the DFT output.
    """

    mask: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.mask, dtype=np.float64)
        if m.ndim != 2:
            raise ShapeError(f"mask must be 2-D, got shape {m.shape}")
        if not np.all((m == 0) | (m == 1)):
            raise ContractError("mask entries must be exactly 0 or 1")
        if not m.any():
            raise ContractError("mask must sample at least one location")
        object.__setattr__(self, "mask", m)

    @property
    def sampled_count(self):
        return int(self.mask.sum())

    @property
    def ratio(self):
        return self.sampled_count / self.mask.size


def encode(u, mask):
    """Undersampled per-coil Fourier encoding: mask * dft2(u).

    Unsampled entries of the result are exactly zero.
    """
    u = np.asarray(u)
    if u.shape[:2] != mask.mask.shape:
        raise ShapeError(f"image {u.shape} does not match mask {mask.mask.shape}")
    return apply_mask(dft2(u), mask.mask)


def fidelity_grad_step(u, f, mask, rho):
    """One gradient-descent step on the data-fidelity term, per coil.

    Returns u - rho * idft2(mask * (dft2(u) - f)).  For f = encode(u, mask)
    the residual vanishes identically and the input is returned exactly.
    """
    if rho <= 0:
        raise ContractError(f"step size must be positive, got {rho}")
    return _fidelity_step_any_rho(u, f, mask, rho)


def _fidelity_step_any_rho(u, f, mask, rho):
    # rho = 0 is permitted here so tests can probe the limit directly
    u = np.asarray(u)
    f = np.asarray(f)
    if u.shape != f.shape or u.shape[:2] != mask.mask.shape:
        raise ShapeError(f"shapes disagree: u {u.shape}, f {f.shape}, mask {mask.mask.shape}")
    return u - rho * idft2(apply_mask(dft2(u) - f, mask.mask))


def fidelity_grad_step_vjp(mask, rho, g):
    """VJP of :func:`fidelity_grad_step` w.r.t. u (the map is self-adjoint)."""
    return g - rho * idft2(apply_mask(dft2(g), mask.mask))
