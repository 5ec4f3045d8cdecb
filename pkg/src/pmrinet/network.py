"""The unrolled reconstruction network.

One phase of the network performs, in order: a gradient step on the
data-fidelity term, a residual image-space denoiser built around a
learned coil-combination operator, and a residual k-space refiner.
The image-space denoiser is

    combine (c -> 1, four 3x3 convs) -> featenc (1 -> N_f, three 9x9 convs)
    -> featdec (N_f -> 1, mirrored) -> expand (1 -> c, mirrored),

with complex ReLU between consecutive convolutions inside each operator
and never after an operator's final convolution.  Denoiser parameter
banks are shared between consecutive pairs of phases; the k-space
refiner and the step size are per-phase.

Variants: an image-domain-only scheme that drops the k-space refiner and
inserts soft shrinkage at the feature-space midpoint, an RSS-based
combination that replaces the learned combine operator, a real-kernel
mode, and a zero-filled initializer that drops the k-space interpolator.
"""

import os
from dataclasses import dataclass, field

import numpy as np

from .ctns import FormatError, read_ctns, write_ctns
from .forward_model import SamplingMask, _fidelity_step_any_rho
from .ops import (
    ConvKernel,
    ContractError,
    ShapeError,
    apply_mask,
    cconv2d,
    cconv2d_vjp_bias,
    cconv2d_vjp_input,
    cconv2d_vjp_weights,
    crelu,
    crelu_vjp,
    dft2,
    idft2,
    soft_shrink,
    soft_shrink_vjp,
)

COMBINE_LAYERS = 4
FEAT_LAYERS = 3
KSPACE_LAYERS = 4
_EPS = 1e-12


@dataclass
class DenoiserBank:
    """One shared parameter set of the image-space denoiser."""

    combine: list | None  # c -> 1; None when the RSS combination is used
    featenc: list  # 1 -> N_f
    featdec: list  # N_f -> 1
    expand: list  # 1 -> c


@dataclass
class PhaseParams:
    """Per-phase parameters; the denoiser bank is a shared reference."""

    rho: float
    kref: list | None  # k-space refiner kernels; None in the image-only scheme
    bank: DenoiserBank
    shared_index: int
    alpha: float = 0.0  # shrinkage threshold, image-only scheme

    def __post_init__(self):
        if self.alpha < 0:
            raise ContractError(f"shrinkage threshold must be >= 0, got {self.alpha}")


@dataclass
class NetParams:
    """Full parameter collection for a T-phase network."""

    coils: int
    n_feat: int
    kinit: list | None  # k-space interpolator of the initializer; None = zero-filled
    banks: list
    phases: list
    scheme: str = "hybrid"  # "hybrid" | "image-only"
    combine_mode: str = "learned"  # "learned" | "rss"
    real_conv: bool = False

    @property
    def T(self):
        return len(self.phases)

    def __post_init__(self):
        if not self.phases:
            raise ContractError("need at least one phase")
        if len(self.banks) != (len(self.phases) + 1) // 2:
            raise ContractError(
                f"{len(self.banks)} banks for T={len(self.phases)} (expected ceil(T/2))"
            )
        for t, ph in enumerate(self.phases):
            if ph.shared_index != t // 2:
                raise ContractError(f"phase {t + 1} references bank {ph.shared_index}")
            if ph.bank is not self.banks[ph.shared_index]:
                raise ContractError(f"phase {t + 1} bank reference is not the shared object")


@dataclass
class Trajectory:
    """States and intermediates of one forward pass.

    ``u`` has T+1 entries (initializer output first); ``b`` and ``ubar``
    have T entries each.  ``v_final`` is the combined image of the last
    retained multi-coil intermediate, ``v_state`` the combined final
    state.  ``tape`` holds backward-pass intermediates when requested.
    """

    u: list
    b: list
    ubar: list
    v_final: np.ndarray
    v_state: np.ndarray
    tape: dict | None = field(default=None, repr=False)


# ---------------------------------------------------------------------------
# layer plans and initialization


def _plans(coils, n_feat, k_combine=3, k_feat=9, k_kspace=3):
    return {
        "combine": [
            (k_combine, k_combine, coils, n_feat),
            (k_combine, k_combine, n_feat, n_feat),
            (k_combine, k_combine, n_feat, n_feat),
            (k_combine, k_combine, n_feat, 1),
        ],
        "featenc": [
            (k_feat, k_feat, 1, n_feat),
            (k_feat, k_feat, n_feat, n_feat),
            (k_feat, k_feat, n_feat, n_feat),
        ],
        "featdec": [
            (k_feat, k_feat, n_feat, n_feat),
            (k_feat, k_feat, n_feat, n_feat),
            (k_feat, k_feat, n_feat, 1),
        ],
        "expand": [
            (k_combine, k_combine, 1, n_feat),
            (k_combine, k_combine, n_feat, n_feat),
            (k_combine, k_combine, n_feat, n_feat),
            (k_combine, k_combine, n_feat, coils),
        ],
        "kref": [
            (k_kspace, k_kspace, coils, n_feat),
            (k_kspace, k_kspace, n_feat, n_feat),
            (k_kspace, k_kspace, n_feat, n_feat),
            (k_kspace, k_kspace, n_feat, coils),
        ],
    }


def _xavier_kernel(rng, shape, dtype, real_only):
    kh, kw, ci, co = shape
    std = np.sqrt(2.0 / (kh * kw * ci + kh * kw * co))
    if real_only:
        w = rng.normal(0.0, std, size=shape)
    else:
        w = rng.normal(0.0, std / np.sqrt(2), size=shape) + 1j * rng.normal(
            0.0, std / np.sqrt(2), size=shape
        )
    return ConvKernel(w.astype(dtype), np.zeros(co, dtype=dtype))


def init_params(
    coils,
    T=4,
    n_feat=64,
    seed=0,
    dtype=np.complex128,
    scheme="hybrid",
    combine_mode="learned",
    init_mode="learned",
    real_conv=False,
    rho0=1.0,
    alpha=0.0,
    k_combine=3,
    k_feat=9,
    k_kspace=3,
):
    """Xavier-initialized network parameters.

    Real and imaginary parts of each kernel are drawn independently so the
    complex variance matches the Xavier fan rule; biases start at zero and
    step sizes at ``rho0``.
    """
    if T < 1:
        raise ContractError(f"need T >= 1 phases, got {T}")
    if rho0 <= 0:
        raise ContractError(f"initial step size must be positive, got {rho0}")
    if scheme not in ("hybrid", "image-only"):
        raise ContractError(f"unknown scheme {scheme!r}")
    if combine_mode not in ("learned", "rss"):
        raise ContractError(f"unknown combine mode {combine_mode!r}")
    if init_mode not in ("learned", "zf"):
        raise ContractError(f"unknown init mode {init_mode!r}")
    rng = np.random.default_rng(seed)
    plans = _plans(coils, n_feat, k_combine, k_feat, k_kspace)

    def stack(name):
        return [_xavier_kernel(rng, s, dtype, real_conv) for s in plans[name]]

    kinit = stack("kref") if init_mode == "learned" else None
    banks = []
    for _ in range((T + 1) // 2):
        banks.append(
            DenoiserBank(
                combine=stack("combine") if combine_mode == "learned" else None,
                featenc=stack("featenc"),
                featdec=stack("featdec"),
                expand=stack("expand"),
            )
        )
    phases = [
        PhaseParams(
            rho=float(rho0),
            kref=stack("kref") if scheme == "hybrid" else None,
            bank=banks[t // 2],
            shared_index=t // 2,
            alpha=float(alpha),
        )
        for t in range(T)
    ]
    return NetParams(
        coils=coils,
        n_feat=n_feat,
        kinit=kinit,
        banks=banks,
        phases=phases,
        scheme=scheme,
        combine_mode=combine_mode,
        real_conv=real_conv,
    )


def parameter_count(coils, T, n_feat, scheme="hybrid", combine_mode="learned",
                    init_mode="learned", real_conv=False,
                    k_combine=3, k_feat=9, k_kspace=3, shared=True):
    """Number of trainable real scalars; ``shared=False`` counts per-phase banks."""
    plans = _plans(coils, n_feat, k_combine, k_feat, k_kspace)
    per_complex = 1 if real_conv else 2

    def stack_count(name):
        return sum(kh * kw * ci * co + co for kh, kw, ci, co in plans[name]) * per_complex

    bank = stack_count("featenc") + stack_count("featdec") + stack_count("expand")
    if combine_mode == "learned":
        bank += stack_count("combine")
    n_banks = (T + 1) // 2 if shared else T
    total = n_banks * bank + T  # one real step size per phase
    if scheme == "hybrid":
        total += T * stack_count("kref")
    if init_mode == "learned":
        total += stack_count("kref")
    return total


# ---------------------------------------------------------------------------
# operator applications (forward, optionally taped)


def _stack_apply(x, kernels, tape=None):
    # conv stack with complex ReLU between layers, none after the last
    h = x
    for li, kern in enumerate(kernels):
        rec = {} if tape is not None else None
        h = cconv2d(h, kern, tape=rec)
        if tape is not None:
            rec["preact"] = h
            tape.append(rec)
        if li < len(kernels) - 1:
            h = crelu(h)
    return h


def _stack_vjp(records, kernels, g, grads=None, prefix=None):
    # walks the taped stack backwards; accumulates kernel grads into `grads`
    for li in range(len(kernels) - 1, -1, -1):
        rec = records[li]
        if grads is not None:
            grads[prefix + (li, "w")] += cconv2d_vjp_weights(rec["xf"], kernels[li], g, rec["shape"])
            grads[prefix + (li, "b")] += cconv2d_vjp_bias(kernels[li], g)
        g = cconv2d_vjp_input(kernels[li], g, rec["shape"])
        if li > 0:
            g = crelu_vjp(records[li - 1]["preact"], g)
    return g


def rss_combine(u):
    """Root of sum of squares across coils: per-pixel sqrt(sum_i |u_i|^2)."""
    u = np.asarray(u)
    if u.ndim == 2:
        return np.abs(u)
    return np.sqrt((u.real**2 + u.imag**2).sum(axis=2))


def _rss_vjp(u, r, g_real):
    # cotangent of rss_combine at u, given a real cotangent on the output
    scale = g_real / np.maximum(r, _EPS)
    return u * scale[:, :, None]


def coil_combine(x, kernels, tape=None):
    """Learned combination of c coil channels into one full-FOV image."""
    x = np.asarray(x)
    if x.ndim != 3:
        raise ShapeError(f"expected (m, n, c) input, got {x.shape}")
    if x.shape[2] != kernels[0].c_in:
        raise ShapeError(f"coil count {x.shape[2]} != kernel c_in {kernels[0].c_in}")
    out = _stack_apply(x, kernels, tape=tape)
    return out[:, :, 0]


def _combined_image(x, bank, combine_mode, tape=None):
    # single-channel combined image plus the tape needed to backprop through it
    if combine_mode == "rss":
        r = rss_combine(x)
        if tape is not None:
            tape.append({"rss_in": x, "rss_out": r})
        return (r + 1j * r)[:, :, None]
    rec = [] if tape is not None else None
    out = _stack_apply(x, bank.combine, tape=rec)
    if tape is not None:
        tape.append({"combine": rec})
    return out


def _combined_image_vjp(tape_entry, bank, combine_mode, g, grads=None, bank_path=None):
    if combine_mode == "rss":
        x = tape_entry["rss_in"]
        r = tape_entry["rss_out"]
        return _rss_vjp(x, r, g[:, :, 0].real + g[:, :, 0].imag)
    prefix = bank_path + ("combine",) if grads is not None else None
    return _stack_vjp(tape_entry["combine"], bank.combine, g, grads, prefix)


def denoise_image(b, bank, combine_mode="learned", alpha=None, tape=None):
    """Residual correction of the image-space denoiser (encoder/decoder stack).

    ``alpha`` switches on soft shrinkage at the feature-space midpoint
    (image-only scheme); ``None`` means no shrinkage step at all.
    """
    z = _combined_image(b, bank, combine_mode, tape=tape)
    enc_rec = [] if tape is not None else None
    h = _stack_apply(z, bank.featenc, tape=enc_rec)
    if alpha is not None:
        if tape is not None:
            tape.append({"preshrink": h})
        h = soft_shrink(h, alpha)
    dec_rec = [] if tape is not None else None
    h = _stack_apply(h, bank.featdec, tape=dec_rec)
    exp_rec = [] if tape is not None else None
    out = _stack_apply(h, bank.expand, tape=exp_rec)
    if tape is not None:
        tape.append({"featenc": enc_rec, "featdec": dec_rec, "expand": exp_rec})
    return out


def _denoise_vjp(tape, bank, combine_mode, alpha, g, grads=None, bank_path=None):
    stacks = tape[-1]
    pfx = (lambda op: bank_path + (op,)) if grads is not None else (lambda op: None)
    g = _stack_vjp(stacks["expand"], bank.expand, g, grads, pfx("expand"))
    g = _stack_vjp(stacks["featdec"], bank.featdec, g, grads, pfx("featdec"))
    if alpha is not None:
        g = soft_shrink_vjp(tape[-2]["preshrink"], alpha, g)
    g = _stack_vjp(stacks["featenc"], bank.featenc, g, grads, pfx("featenc"))
    return _combined_image_vjp(tape[0], bank, combine_mode, g, grads, bank_path)


def refine_kspace(ubar, kernels, tape=None):
    """Residual k-space correction: ubar + idft2(stack(dft2(ubar)))."""
    z = dft2(ubar)
    h = _stack_apply(z, kernels, tape=tape)
    return ubar + idft2(h)


def _refine_vjp(records, kernels, g, grads=None, prefix=None):
    gz = _stack_vjp(records, kernels, dft2(g), grads, prefix)
    return g + idft2(gz)


def init_recon(f, kinit, tape=None):
    """Initial reconstruction: idft2(f + stack(f)); zero-filled when no stack."""
    f = np.asarray(f)
    if f.ndim != 3:
        raise ShapeError(f"expected dense (m, n, c) k-space, got {f.shape}")
    if kinit is None:
        return idft2(f)
    h = _stack_apply(f, kinit, tape=tape)
    return idft2(f + h)


def phase_step(u, f, mask, phase, scheme="hybrid", combine_mode="learned", tape=None):
    """One unrolled phase; returns (u_next, b, ubar) and fills ``tape`` if given.

    Fidelity step, then the residual image-space denoiser; the hybrid
    scheme follows with the residual k-space refiner, the image-only
    scheme applies soft shrinkage inside the denoiser instead.
    """
    if phase.rho <= 0:
        raise ContractError(f"step size must be positive, got {phase.rho}")
    descent = idft2(apply_mask(dft2(u) - f, mask.mask))
    b = u - phase.rho * descent
    if tape is not None:
        tape["descent"] = descent
    alpha = phase.alpha if scheme == "image-only" else None
    dtape = [] if tape is not None else None
    ubar = b + denoise_image(b, phase.bank, combine_mode, alpha=alpha, tape=dtape)
    if tape is not None:
        tape["denoise"] = dtape
    if scheme == "image-only":
        return ubar, b, ubar
    ktape = [] if tape is not None else None
    u_next = refine_kspace(ubar, phase.kref, tape=ktape)
    if tape is not None:
        tape["kref"] = ktape
    return u_next, b, ubar


def phase_step_image_only(u, f, mask, phase, alpha=None, combine_mode="learned"):
    """Image-domain-only phase (fidelity step + shrinkage denoiser, no k-space refiner)."""
    if alpha is not None and alpha != phase.alpha:
        phase = PhaseParams(phase.rho, phase.kref, phase.bank, phase.shared_index, alpha)
    u_next, _, _ = phase_step(u, f, mask, phase, scheme="image-only", combine_mode=combine_mode)
    return u_next


def init_vjp(records, kinit, g_u0, grads=None):
    """Backward pass of :func:`init_recon`: accumulates interpolator grads."""
    if kinit is None:
        return
    _stack_vjp(records, kinit, dft2(g_u0), grads, ("kinit",) if grads is not None else None)


def phase_vjp(tape, phase, mask, scheme, combine_mode, g_next, g_ubar_extra=None,
              grads=None, t=None):
    """Backward pass of one phase: cotangent at the incoming state plus parameter grads.

    ``g_next`` is the cotangent at the phase output; ``g_ubar_extra`` is an
    additional cotangent injected at the retained intermediate (used by
    losses that depend on it directly).
    """
    bank_path = ("bank", phase.shared_index) if grads is not None else None
    kref_path = ("phase", t, "kref") if grads is not None else None
    if scheme == "image-only":
        g_ubar = g_next if g_ubar_extra is None else g_next + g_ubar_extra
    else:
        g_ubar = _refine_vjp(tape["kref"], phase.kref, g_next, grads, kref_path)
        if g_ubar_extra is not None:
            g_ubar = g_ubar + g_ubar_extra
    alpha = phase.alpha if scheme == "image-only" else None
    g_b = g_ubar + _denoise_vjp(tape["denoise"], phase.bank, combine_mode, alpha,
                                g_ubar, grads, bank_path)
    if grads is not None:
        d = tape["descent"]
        grads[("phase", t, "rho")] += -float(
            np.sum(g_b.real * d.real) + np.sum(g_b.imag * d.imag)
        )
    g_u = g_b - phase.rho * idft2(apply_mask(dft2(g_b), mask.mask))
    return g_u


def forward(f, mask, net, keep_tape=False):
    """Run the full T-phase network on dense k-space data ``f``.

    Returns a :class:`Trajectory` with all states and intermediates; with
    ``keep_tape`` the per-phase tapes needed by the costate pass are kept.
    """
    f = np.asarray(f)
    if f.ndim != 3 or f.shape[2] != net.coils:
        raise ShapeError(f"k-space shape {f.shape} does not match a {net.coils}-coil net")
    if f.shape[:2] != mask.mask.shape:
        raise ShapeError(f"k-space {f.shape} does not match mask {mask.mask.shape}")
    tape = {"phases": []} if keep_tape else None
    itape = [] if keep_tape else None
    u0 = init_recon(f, net.kinit, tape=itape)
    if keep_tape:
        tape["init"] = itape
    u_list, b_list, ubar_list = [u0], [], []
    u = u0
    for t, phase in enumerate(net.phases):
        ptape = {} if keep_tape else None
        u, b, ubar = phase_step(u, f, mask, phase, net.scheme, net.combine_mode, tape=ptape)
        if keep_tape:
            tape["phases"].append(ptape)
        u_list.append(u)
        b_list.append(b)
        ubar_list.append(ubar)
    last = net.phases[-1].bank
    vtape = [] if keep_tape else None
    v_final = _combined_image(ubar_list[-1], last, net.combine_mode, tape=vtape)[:, :, 0]
    if net.scheme == "image-only":
        # the retained intermediate is the state itself
        v_state, stape = v_final, vtape
    else:
        stape = [] if keep_tape else None
        v_state = _combined_image(u, last, net.combine_mode, tape=stape)[:, :, 0]
    if keep_tape:
        tape["v_final"] = vtape
        tape["v_state"] = stape
    return Trajectory(u=u_list, b=b_list, ubar=ubar_list,
                      v_final=v_final, v_state=v_state, tape=tape)


# ---------------------------------------------------------------------------
# parameter flattening (shared by the optimizer and the finite-difference oracle)


def param_leaves(net):
    """Deterministic enumeration of trainable leaves as (path, value) pairs."""
    leaves = []
    if net.kinit is not None:
        for li, k in enumerate(net.kinit):
            leaves.append((("kinit", li, "w"), k.weights))
            leaves.append((("kinit", li, "b"), k.bias))
    for bi, bank in enumerate(net.banks):
        for op in ("combine", "featenc", "featdec", "expand"):
            kernels = getattr(bank, op)
            if kernels is None:
                continue
            for li, k in enumerate(kernels):
                leaves.append((("bank", bi, op, li, "w"), k.weights))
                leaves.append((("bank", bi, op, li, "b"), k.bias))
    for t, phase in enumerate(net.phases, start=1):
        leaves.append((("phase", t, "rho"), phase.rho))
        if phase.kref is not None:
            for li, k in enumerate(phase.kref):
                leaves.append((("phase", t, "kref", li, "w"), k.weights))
                leaves.append((("phase", t, "kref", li, "b"), k.bias))
    return leaves


def zero_grads(net):
    """A gradient container with one zero entry per trainable leaf."""
    grads = {}
    for path, val in param_leaves(net):
        grads[path] = 0.0 if path[-1] == "rho" else np.zeros_like(val)
    return grads


def flatten_params(net):
    """Pack all trainable scalars (real view of complex leaves) into one vector."""
    parts = []
    for _, val in param_leaves(net):
        if isinstance(val, float):
            parts.append(np.array([val]))
        else:
            parts.append(val.view(val.real.dtype).ravel())
    return np.concatenate(parts).astype(np.float64)


def flatten_grads(net, grads):
    """Pack a gradient container into a vector aligned with :func:`flatten_params`."""
    parts = []
    for path, val in param_leaves(net):
        g = grads[path]
        if isinstance(val, float):
            parts.append(np.array([float(g)]))
        else:
            g = np.asarray(g, dtype=val.dtype)
            parts.append(g.view(val.real.dtype).ravel())
    return np.concatenate(parts).astype(np.float64)


def unflatten_params(net, vector):
    """Rebuild a NetParams with the same structure from a flat real vector."""
    vector = np.asarray(vector, dtype=np.float64)
    expect = flatten_params(net).size
    if vector.size != expect:
        raise ShapeError(f"vector length {vector.size} != parameter count {expect}")
    pos = 0

    def take_kernel(proto):
        nonlocal pos
        rdt = proto.weights.real.dtype
        nw = proto.weights.size * 2
        w = vector[pos:pos + nw].astype(rdt).view(proto.weights.dtype).reshape(proto.weights.shape)
        pos += nw
        nb = proto.bias.size * 2
        b = vector[pos:pos + nb].astype(rdt).view(proto.bias.dtype).reshape(proto.bias.shape)
        pos += nb
        return ConvKernel(w.copy(), b.copy())

    def take_stack(protos):
        return None if protos is None else [take_kernel(k) for k in protos]

    kinit = take_stack(net.kinit)
    banks = [
        DenoiserBank(
            combine=take_stack(b.combine),
            featenc=take_stack(b.featenc),
            featdec=take_stack(b.featdec),
            expand=take_stack(b.expand),
        )
        for b in net.banks
    ]
    phases = []
    for t, ph in enumerate(net.phases):
        rho = float(vector[pos])
        pos += 1
        kref = take_stack(ph.kref)
        phases.append(PhaseParams(rho, kref, banks[t // 2], t // 2, ph.alpha))
    return NetParams(net.coils, net.n_feat, kinit, banks, phases,
                     net.scheme, net.combine_mode, net.real_conv)


def zero_weights(net):
    """Copy of ``net`` with every kernel weight and bias zeroed, step sizes kept.

    With consistent data the resulting network is an exact identity on its
    input phase after phase, making the zero-filled image a fixed point.
    """
    vec = flatten_params(net)
    pos = 0
    for path, val in param_leaves(net):
        n = 1 if isinstance(val, float) else val.size * 2
        if path[-1] != "rho":
            vec[pos:pos + n] = 0.0
        pos += n
    return unflatten_params(net, vec)


def trainable_mask(net):
    """Boolean vector marking coordinates the optimizer may move.

    In real-kernel mode the imaginary halves of all kernels and biases are
    frozen at zero.
    """
    parts = []
    for path, val in param_leaves(net):
        if isinstance(val, float):
            parts.append(np.ones(1, dtype=bool))
            continue
        m = np.empty(val.size * 2, dtype=bool)
        if net.real_conv:
            m[0::2] = True
            m[1::2] = False
        else:
            m[:] = True
        parts.append(m)
    return np.concatenate(parts)


# ---------------------------------------------------------------------------
# manifest serialization


def _kernel_file_stub(path):
    if path[0] == "kinit":
        return f"theta0_kinit_{path[1] + 1}"
    if path[0] == "bank":
        # bank kernels are filed under the first phase that uses them
        return f"theta{2 * path[1] + 1}_{path[2]}_{path[3] + 1}"
    return f"theta{path[1]}_kref_{path[3] + 1}"


def save_params(dirpath, net):
    """Write a NetParams directory manifest: index.txt plus one CTNS per kernel/bias."""
    os.makedirs(dirpath, exist_ok=True)
    lines = [
        "# pmrinet parameter manifest",
        "format = pmrinet-params",
        "version = 1",
        f"T = {net.T}",
        f"n_feat = {net.n_feat}",
        f"coils = {net.coils}",
        f"scheme = {net.scheme}",
        f"combine = {net.combine_mode}",
        f"init = {'learned' if net.kinit is not None else 'zf'}",
        f"real_conv = {int(net.real_conv)}",
    ]
    if net.combine_mode == "learned":
        kc = net.banks[0].combine[0].ksize[0]
        lines.append(f"k_combine = {kc}")
    lines.append(f"k_feat = {net.banks[0].featenc[0].ksize[0]}")
    ref = net.phases[0].kref or net.kinit
    if ref is not None:
        lines.append(f"k_kspace = {ref[0].ksize[0]}")
    for t, ph in enumerate(net.phases, start=1):
        lines.append(f"rho{t} = {ph.rho!r}")
        lines.append(f"alpha{t} = {ph.alpha!r}")
        lines.append(f"bank_of_phase{t} = {ph.shared_index + 1}")
    for path, val in param_leaves(net):
        if isinstance(val, float):
            continue
        stub = _kernel_file_stub(path)
        if path[-1] == "w":
            lines.append(f"kernel = {stub}")
            write_ctns(os.path.join(dirpath, stub + ".w.ctns"), val)
        else:
            write_ctns(os.path.join(dirpath, stub + ".b.ctns"), val)
    with open(os.path.join(dirpath, "index.txt"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def _parse_kv(path):
    entries = {}
    order = []
    with open(path, encoding="utf-8") as fh:
        for ln, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise FormatError(f"{path}:{ln}: expected 'key = value', got {raw.rstrip()!r}")
            key, val = (s.strip() for s in line.split("=", 1))
            entries.setdefault(key, []).append(val)
            order.append((key, val))
    return entries, order


def load_params(dirpath, dtype=np.complex128):
    """Load a NetParams directory manifest written by :func:`save_params`."""
    index = os.path.join(dirpath, "index.txt")
    entries, _ = _parse_kv(index)

    def one(key, default=None):
        if key not in entries:
            if default is not None:
                return default
            raise FormatError(f"{index}: missing key {key!r}")
        return entries[key][-1]

    if one("format") != "pmrinet-params" or one("version") != "1":
        raise FormatError(f"{index}: not a version-1 pmrinet parameter manifest")
    T = int(one("T"))
    n_feat = int(one("n_feat"))
    coils = int(one("coils"))
    scheme = one("scheme")
    combine_mode = one("combine")
    init_mode = one("init")
    real_conv = bool(int(one("real_conv")))

    def load_kernel(stub):
        wpath = os.path.join(dirpath, stub + ".w.ctns")
        bpath = os.path.join(dirpath, stub + ".b.ctns")
        for p in (wpath, bpath):
            if not os.path.exists(p):
                raise FormatError(f"missing kernel file {p}")
        return ConvKernel(read_ctns(wpath).astype(dtype), read_ctns(bpath).astype(dtype))

    def load_stack(prefix, n_layers):
        return [load_kernel(f"{prefix}_{li + 1}") for li in range(n_layers)]

    kinit = load_stack("theta0_kinit", KSPACE_LAYERS) if init_mode == "learned" else None
    banks = []
    for bi in range((T + 1) // 2):
        t0 = 2 * bi + 1
        banks.append(
            DenoiserBank(
                combine=load_stack(f"theta{t0}_combine", COMBINE_LAYERS)
                if combine_mode == "learned" else None,
                featenc=load_stack(f"theta{t0}_featenc", FEAT_LAYERS),
                featdec=load_stack(f"theta{t0}_featdec", FEAT_LAYERS),
                expand=load_stack(f"theta{t0}_expand", COMBINE_LAYERS),
            )
        )
    phases = []
    for t in range(1, T + 1):
        bank_id = int(one(f"bank_of_phase{t}")) - 1
        if bank_id != (t - 1) // 2:
            raise FormatError(f"{index}: phase {t} maps to bank {bank_id + 1}, expected {(t - 1) // 2 + 1}")
        kref = load_stack(f"theta{t}_kref", KSPACE_LAYERS) if scheme == "hybrid" else None
        phases.append(
            PhaseParams(
                rho=float(one(f"rho{t}")),
                kref=kref,
                bank=banks[(t - 1) // 2],
                shared_index=(t - 1) // 2,
                alpha=float(one(f"alpha{t}", "0.0")),
            )
        )
    return NetParams(coils, n_feat, kinit, banks, phases, scheme, combine_mode, real_conv)
