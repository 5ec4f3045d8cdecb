"""Training by the method of Lagrangian multipliers.

The costate recursion runs the phase VJPs backwards from the terminal
loss cotangent; by construction the multiplier at every phase equals
minus the gradient of the loss with respect to that phase's state, so
the assembled parameter gradient coincides with plain backpropagation.
:func:`certify_gradients` checks both facts numerically against central
finite differences, re-running the forward pass per probed coordinate.

All loss norms are the non-squared l2 norm over the full tensor; their
gradients use x / max(||x||, 1e-12), so the guard only activates at an
exactly-zero residual.
"""

import time
from dataclasses import dataclass, replace

import numpy as np

from .forward_model import SamplingMask
from .network import (
    NetParams,
    Trajectory,
    _combined_image,
    _combined_image_vjp,
    flatten_grads,
    flatten_params,
    forward,
    init_vjp,
    param_leaves,
    phase_step,
    phase_vjp,
    rss_combine,
    trainable_mask,
    unflatten_params,
    zero_grads,
)
from .ops import ContractError, ShapeError

_EPS = 1e-12


@dataclass(frozen=True)
class LossWeights:
    """Weights of the three loss terms (all nonnegative)."""

    gamma: float = 1e-3
    eta: float = 1e-4
    beta: float = 1e-3

    def __post_init__(self):
        if min(self.gamma, self.eta, self.beta) < 0:
            raise ContractError("loss weights must be nonnegative")


def _norm(x):
    return float(np.sqrt(np.sum(np.abs(x) ** 2)))


def _norm_cot(r, scale=1.0):
    # packed cotangent of scale * ||r||
    return (scale / max(_norm(r), _EPS)) * r


def _abs_cot(z, g_real):
    # packed cotangent of |z| given a real cotangent on the modulus
    return g_real * z / np.maximum(np.abs(z), _EPS)


def _rss_cot(u, g_real):
    r = rss_combine(u)
    return u * (g_real / np.maximum(r, _EPS))[:, :, None]


def _coil_term(u, u_star, gamma):
    # sum of per-coil norms; returns (value, packed cotangent)
    diff = u - u_star
    norms = np.sqrt((np.abs(diff) ** 2).sum(axis=(0, 1)))
    cot = diff * (gamma / np.maximum(norms, _EPS))
    return gamma * float(norms.sum()), cot


def loss_main(traj, u_star, weights, net=None):
    """Terminal loss of the hybrid network (per-coil fit, combined image, RSS)."""
    return _loss_main_full(traj, u_star, weights)[0]


def _loss_main_full(traj, u_star, weights):
    u_star = np.asarray(u_star)
    uT = traj.u[-1]
    if uT.shape != u_star.shape:
        raise ShapeError(f"state {uT.shape} vs reference {u_star.shape}")
    rss_star = rss_combine(u_star)
    t1, cot_uT = _coil_term(uT, u_star, weights.gamma)
    r2 = np.abs(traj.v_final) - rss_star
    t2 = _norm(r2)
    cot_v = _abs_cot(traj.v_final, _norm_cot(r2))
    r3 = rss_combine(traj.ubar[-1]) - rss_star
    t3 = weights.eta * _norm(r3)
    cot_ubar = _rss_cot(traj.ubar[-1], _norm_cot(r3, weights.eta))
    cots = {"uT": cot_uT, "ubarT": cot_ubar, "v_final": cot_v}
    return t1 + t2 + t3, cots


def loss_coil(traj, u_star, weights):
    """Ablation loss against multi-coil ground truth, with the initializer term."""
    return _loss_coil_full(traj, u_star, weights)[0]


def _loss_coil_full(traj, u_star, weights):
    u_star = np.asarray(u_star)
    uT = traj.u[-1]
    if uT.shape != u_star.shape:
        raise ShapeError(f"state {uT.shape} vs reference {u_star.shape}")
    rss_star = rss_combine(u_star)
    t1, cot_uT = _coil_term(uT, u_star, weights.gamma)
    r2 = np.abs(traj.v_state) - rss_star
    t2 = _norm(r2)
    cot_v = _abs_cot(traj.v_state, _norm_cot(r2))
    r3 = rss_combine(traj.u[0]) - rss_star
    t3 = weights.beta * _norm(r3)
    cot_u0 = _rss_cot(traj.u[0], _norm_cot(r3, weights.beta))
    cots = {"uT": cot_uT, "u0": cot_u0, "v_state": cot_v}
    return t1 + t2 + t3, cots


def loss_body(traj, v_star, weights):
    """Ablation loss against a single-body (real) ground-truth image."""
    return _loss_body_full(traj, v_star, weights)[0]


def _loss_body_full(traj, v_star, weights):
    v_star = np.asarray(v_star)
    uT = traj.u[-1]
    if uT.shape[:2] != v_star.shape:
        raise ShapeError(f"state {uT.shape} vs reference image {v_star.shape}")
    r1 = rss_combine(uT) - v_star
    t1 = weights.gamma * _norm(r1)
    cot_uT = _rss_cot(uT, _norm_cot(r1, weights.gamma))
    r2 = np.abs(traj.v_state) - v_star
    t2 = _norm(r2)
    cot_v = _abs_cot(traj.v_state, _norm_cot(r2))
    r3 = rss_combine(traj.u[0]) - v_star
    t3 = weights.beta * _norm(r3)
    cot_u0 = _rss_cot(traj.u[0], _norm_cot(r3, weights.beta))
    cots = {"uT": cot_uT, "u0": cot_u0, "v_state": cot_v}
    return t1 + t2 + t3, cots


_LOSS_TABLE = {"main": _loss_main_full, "coil": _loss_coil_full, "body": _loss_body_full}


def evaluate_loss(traj, loss_kind, weights, u_star=None, v_star=None):
    """Loss value plus the packed cotangents at the nodes it touches directly."""
    if loss_kind not in _LOSS_TABLE:
        raise ContractError(f"unknown loss kind {loss_kind!r}")
    if loss_kind == "body":
        if v_star is None:
            raise ContractError("body loss needs the single-body reference image")
        return _LOSS_TABLE[loss_kind](traj, v_star, weights)
    if u_star is None:
        raise ContractError(f"{loss_kind} loss needs the multi-coil reference")
    return _LOSS_TABLE[loss_kind](traj, u_star, weights)


# ---------------------------------------------------------------------------
# costate recursion


@dataclass
class CostateSet:
    """Lagrangian multipliers, one per state (indices 0..T)."""

    lam: list


def mlm_backward(traj, net, f, mask, loss_kind="main", weights=None,
                 u_star=None, v_star=None):
    """Costate pass: multipliers for every state plus the full parameter gradient.

    ``traj`` must come from :func:`pmrinet.network.forward` with
    ``keep_tape=True`` under the same (f, mask, net).  Multipliers carry
    the sign of the Lagrangian stationarity conditions (lam = -dloss/du);
    the returned gradients are dloss/dtheta.
    """
    if traj.tape is None:
        raise ContractError("trajectory was recorded without keep_tape=True")
    if len(traj.u) != net.T + 1:
        raise ContractError(f"trajectory length {len(traj.u)} does not match T={net.T}")
    weights = weights or LossWeights()
    _, cots = evaluate_loss(traj, loss_kind, weights, u_star, v_star)
    grads = zero_grads(net)
    last_bank = net.phases[-1].bank
    bank_path = ("bank", net.phases[-1].shared_index)

    cot_uT = cots["uT"]
    cot_ubar_extra = cots.get("ubarT")
    if "v_final" in cots:
        g = _combined_image_vjp(traj.tape["v_final"][0], last_bank, net.combine_mode,
                                cots["v_final"][:, :, None], grads, bank_path)
        extra = g if cot_ubar_extra is None else cot_ubar_extra + g
        if net.scheme == "image-only":
            # the retained intermediate of the last phase is the state itself
            cot_uT = cot_uT + extra
            cot_ubar_extra = None
        else:
            cot_ubar_extra = extra
    if "v_state" in cots:
        g = _combined_image_vjp(traj.tape["v_state"][0], last_bank, net.combine_mode,
                                cots["v_state"][:, :, None], grads, bank_path)
        cot_uT = cot_uT + g

    lam = [None] * (net.T + 1)
    lam[net.T] = -cot_uT
    cot = cot_uT
    for t in range(net.T, 0, -1):
        extra = cot_ubar_extra if t == net.T else None
        cot = phase_vjp(traj.tape["phases"][t - 1], net.phases[t - 1], mask,
                        net.scheme, net.combine_mode, cot, extra, grads, t)
        if t - 1 == 0 and "u0" in cots:
            cot = cot + cots["u0"]
        lam[t - 1] = -cot
    init_vjp(traj.tape.get("init"), net.kinit, cot, grads)
    return CostateSet(lam), grads


# ---------------------------------------------------------------------------
# finite-difference oracles


def _loss_of_net(net, f, mask, loss_kind, weights, u_star, v_star):
    traj = forward(f, mask, net)
    return evaluate_loss(traj, loss_kind, weights, u_star, v_star)[0]


def _fd_coordinate(vec, idx, h, eval_fn):
    probe = vec.copy()
    probe[idx] = vec[idx] + h
    up = eval_fn(probe)
    probe[idx] = vec[idx] - h
    down = eval_fn(probe)
    return (up - down) / (2 * h)


def _slope_jump_excuses(central, analytic, fwd, bwd):
    # a central difference is only a derivative estimate on a smooth segment;
    # a large one-sided slope disagreement identifies a crossed activation
    # kink.  A wrong analytic gradient keeps fwd ~ bwd, so real defects are
    # never excused by this test.
    return abs(fwd - bwd) >= 0.5 * abs(central - analytic)


def _refined_probe(eval_fn, base, analytic, scale, steps, accept=1e-6):
    """Central difference with kink-aware step refinement.

    Shrinks the step when the estimate disagrees with the analytic value:
    a kink inside the difference window leaves the window as the step
    shrinks, while a genuine gradient defect keeps the error at every
    step.  Keeps the best (smallest-error) step, since the smallest steps
    can be roundoff-dominated.  Returns (error, excused); ``excused`` is
    set only when the best step still shows one-sided slope disagreement.
    """
    best = (np.inf, False)
    for h_c in steps:
        up = eval_fn(h_c)
        down = eval_fn(-h_c)
        central = (up - down) / (2 * h_c)
        fwd = (up - base) / h_c
        bwd = (base - down) / h_c
        if abs(central) < 1e-12 and abs(analytic) < 1e-12:
            return 0.0, False
        err = abs(central - analytic) / max(scale, abs(central))
        if err <= accept:
            return err, False
        if err < best[0]:
            best = (err, _slope_jump_excuses(central, analytic, fwd, bwd))
    return best


def finite_diff_grad(f, mask, net, loss_kind="main", weights=None,
                     u_star=None, v_star=None, h=1e-5):
    """Central finite differences of the loss over every scalar parameter.

    Real and imaginary parts are perturbed independently; each probe
    re-runs the forward pass.  Intended for small instances and as the
    independent oracle for the costate gradients.
    """
    weights = weights or LossWeights()
    vec = flatten_params(net)

    def eval_at(v):
        return _loss_of_net(unflatten_params(net, v), f, mask, loss_kind, weights,
                            u_star, v_star)

    flat = np.array([_fd_coordinate(vec, i, h, eval_at) for i in range(vec.size)])
    return _unflatten_grads(net, flat)


def _unflatten_grads(net, flat):
    grads = {}
    pos = 0
    for path, val in param_leaves(net):
        if isinstance(val, float):
            grads[path] = float(flat[pos])
            pos += 1
        else:
            n = val.size * 2
            grads[path] = (
                flat[pos:pos + n].astype(val.real.dtype).view(val.dtype).reshape(val.shape).copy()
            )
            pos += n
    return grads


def _replay_loss_from(net, f, mask, traj, t, u_t, loss_kind, weights, u_star, v_star):
    # replay phases t+1..T from a perturbed state u(t); earlier states stay taped
    u = [*traj.u[: t + 1]]
    u[t] = u_t
    b, ubar = list(traj.b[:t]), list(traj.ubar[:t])
    cur = u_t
    for k in range(t, net.T):
        cur, bk, uk = phase_step(cur, f, mask, net.phases[k], net.scheme, net.combine_mode)
        u.append(cur)
        b.append(bk)
        ubar.append(uk)
    if net.scheme == "image-only":
        # the retained intermediates are the states themselves, including u(t)
        ubar = u[1:]
    last = net.phases[-1].bank
    v_final = _combined_image(ubar[-1], last, net.combine_mode)[:, :, 0]
    v_state = v_final if net.scheme == "image-only" else \
        _combined_image(u[-1], last, net.combine_mode)[:, :, 0]
    sub = Trajectory(u=u, b=b, ubar=ubar, v_final=v_final, v_state=v_state)
    return evaluate_loss(sub, loss_kind, weights, u_star, v_star)[0]


def costate_fd_check(traj, net, f, mask, lam, loss_kind, weights,
                     u_star=None, v_star=None, h=1e-5, probes_per_state=24, rng=None):
    """Verify lam(t) = -dloss/du(t) by suffix-replay finite differences.

    Probes a deterministic random subset of real/imag state entries at
    every t and returns the worst relative error over probes whose
    difference path stays on a smooth segment (kink crossings excused by
    the one-sided slope test).
    """
    rng = rng or np.random.default_rng(0)
    worst = 0.0
    base = _replay_loss_from(net, f, mask, traj, 0, traj.u[0],
                             loss_kind, weights, u_star, v_star)
    for t in range(net.T + 1):
        target = -lam.lam[t]
        view = traj.u[t].astype(np.complex128).view(np.float64).ravel()
        tview = target.astype(np.complex128).view(np.float64).ravel()
        n = view.size
        idxs = np.arange(n) if n <= probes_per_state else rng.choice(n, probes_per_state, replace=False)
        scale = max(float(np.abs(tview).max()), _EPS)

        f32 = np.asarray(f).dtype == np.complex64
        steps = (h, h / 4) if f32 else (h, h / 8, h / 64)
        for idx in idxs:
            def eval_state(delta, idx=idx):
                probe = view.copy()
                probe[idx] += delta
                state = probe.view(np.complex128).reshape(traj.u[t].shape)
                return _replay_loss_from(net, f, mask, traj, t, state,
                                         loss_kind, weights, u_star, v_star)

            err, was_excused = _refined_probe(eval_state, base, tview[idx], scale, steps,
                                              accept=1e-7 if not f32 else 1e-4)
            if not was_excused:
                worst = max(worst, err)
    return worst


def kink_margin(traj, net):
    """Smallest distance of any activation input to its nondifferentiable point.

    Covers the real/imag parts at every complex-ReLU site and the
    shrinkage thresholds in the image-only scheme.  Used to re-draw
    certification instances whose finite differences would straddle a kink.
    """
    if traj.tape is None:
        raise ContractError("kink margin needs a taped trajectory")
    margin = np.inf

    def stack_margin(records):
        nonlocal margin
        for rec in records[:-1]:  # last layer output is not activated
            p = rec["preact"]
            margin = min(margin, float(np.abs(p.real).min()), float(np.abs(p.imag).min()))

    def denoise_margin(dtape, alpha):
        nonlocal margin
        first = dtape[0]
        if "combine" in first:
            stack_margin(first["combine"])
        else:
            margin = min(margin, float(first["rss_out"].min()))
        stacks = dtape[-1]
        for op in ("featenc", "featdec", "expand"):
            stack_margin(stacks[op])
        if alpha is not None:
            p = dtape[-2]["preshrink"]
            margin = min(margin, float(np.abs(np.abs(p.real) - alpha).min()),
                         float(np.abs(np.abs(p.imag) - alpha).min()))

    if net.kinit is not None:
        stack_margin(traj.tape["init"])
    for t, ptape in enumerate(traj.tape["phases"]):
        alpha = net.phases[t].alpha if net.scheme == "image-only" else None
        denoise_margin(ptape["denoise"], alpha)
        if net.scheme == "hybrid":
            stack_margin(ptape["kref"])
    for key in ("v_final", "v_state"):
        entry = traj.tape[key]
        if entry and "combine" in entry[-1]:
            stack_margin(entry[-1]["combine"])
    # modulus factors in the losses are nondifferentiable at 0 as well
    margin = min(margin, float(np.abs(traj.v_final).min()), float(np.abs(traj.v_state).min()))
    return margin


def certify_gradients(f, mask, net, loss_kind="main", weights=None,
                      u_star=None, v_star=None, h=1e-5,
                      param_probes=160, state_probes=24, seed=0):
    """Cross-check the costate gradients against finite differences.

    Probes a seeded random subset of parameter coordinates (plus random
    full-vector directional derivatives) and the costate identity at every
    phase.  Kernel weights and step sizes are probed at ``h``; biases,
    directions, and state entries fan out to whole channels at once, so
    their probes use h/10 to keep the difference path on one smooth
    segment.  Probes that still cross an activation kink are excused by
    the one-sided slope test; coordinates whose finite difference and
    analytic gradient are both below 1e-12 are skipped, and frozen
    coordinates (real-kernel mode) are never probed.  Errors are relative
    to max(gradient scale, |finite difference|).
    """
    weights = weights or LossWeights()
    rng = np.random.default_rng(seed)
    traj = forward(f, mask, net, keep_tape=True)
    lam, grads = mlm_backward(traj, net, f, mask, loss_kind, weights, u_star, v_star)
    gvec = flatten_grads(net, grads)
    vec = flatten_params(net)
    mask_free = trainable_mask(net)
    bias_mask = _bias_coordinate_mask(net)

    def eval_at(v):
        return _loss_of_net(unflatten_params(net, v), f, mask, loss_kind, weights,
                            u_star, v_star)

    free = np.flatnonzero(mask_free)
    if param_probes is None or free.size <= param_probes:
        chosen = free
    else:
        # stratify probes over parameter blocks so every operator is covered
        chosen = set()
        pos = 0
        per_block = max(2, param_probes // max(len(param_leaves(net)), 1))
        for path, val in param_leaves(net):
            n = 1 if isinstance(val, float) else val.size * 2
            block = np.arange(pos, pos + n)
            block = block[mask_free[block]]
            if block.size:
                take = min(per_block, block.size)
                chosen.update(rng.choice(block, take, replace=False).tolist())
            pos += n
        extra = param_probes - len(chosen)
        if extra > 0:
            chosen.update(rng.choice(free, min(extra, free.size), replace=False).tolist())
        chosen = np.array(sorted(chosen))

    base = eval_at(vec)
    scale = max(float(np.abs(gvec[mask_free]).max()), _EPS)
    f32 = np.asarray(f).dtype == np.complex64
    per_block = {}
    worst = 0.0
    excused = 0
    for idx in chosen:
        h0 = h / 10 if bias_mask[idx] else h
        steps = (h0, h0 / 4) if f32 else (h0, h0 / 8, h0 / 64)

        def eval_coord(delta, idx=idx):
            probe = vec.copy()
            probe[idx] = vec[idx] + delta
            return eval_at(probe)

        err, was_excused = _refined_probe(eval_coord, base, gvec[idx], scale, steps)
        if was_excused and err > worst:
            excused += 1
            continue
        block = _block_of(net, idx)
        per_block[block] = max(per_block.get(block, 0.0), err)
        worst = max(worst, err)

    # a directional derivative touches every coordinate at once; draw a few
    # directions and keep the first whose path stays on a smooth segment
    dir_err = np.inf
    h_d = h / 10
    dir_steps = (h_d, h_d / 4) if f32 else (h_d, h_d / 8)
    for _ in range(8):
        d = rng.standard_normal(vec.size)
        d[~mask_free] = 0.0
        d /= np.linalg.norm(d)
        an_dir = float(gvec @ d)
        err, was_excused = _refined_probe(
            lambda delta, d=d: eval_at(vec + delta * d), base, an_dir, scale, dir_steps
        )
        dir_err = min(dir_err, err)
        if not was_excused or err < 1e-7:
            break

    costate_err = costate_fd_check(traj, net, f, mask, lam, loss_kind, weights,
                                   u_star, v_star, h / 10, state_probes, rng)
    return {
        "max_rel_err": max(worst, dir_err),
        "param_max_rel_err": worst,
        "directional_rel_err": dir_err,
        "costate_max_rel_err": costate_err,
        "per_block": per_block,
        "n_param_probes": int(len(chosen)),
        "n_excused": excused,
        "kink_margin": kink_margin(traj, net),
    }


def _block_of(net, idx):
    pos = 0
    for path, val in param_leaves(net):
        n = 1 if isinstance(val, float) else val.size * 2
        if idx < pos + n:
            return path if isinstance(val, float) else path[:-2] + (path[-1],)
        pos += n
    raise IndexError(idx)


def _bias_coordinate_mask(net):
    parts = []
    for path, val in param_leaves(net):
        n = 1 if isinstance(val, float) else val.size * 2
        parts.append(np.full(n, path[-1] == "b"))
    return np.concatenate(parts)


# ---------------------------------------------------------------------------
# optimizer and training loop


@dataclass
class AdamState:
    """Adam moment accumulators over the flat real parameter vector."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lr: float = 1e-4

    @classmethod
    def create(cls, net, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        n = flatten_params(net).size
        return cls(m=np.zeros(n), v=np.zeros(n), beta1=beta1, beta2=beta2, eps=eps, lr=lr)


def adam_step(net, grads, state):
    """One Adam update applied independently to real and imaginary parts.

    Returns the updated parameters and optimizer state; frozen coordinates
    (real-kernel mode) keep their value and their moments stay zero.
    """
    vec = flatten_params(net)
    g = grads if isinstance(grads, np.ndarray) else flatten_grads(net, grads)
    if g.shape != vec.shape:
        raise ShapeError(f"gradient vector {g.shape} != parameter vector {vec.shape}")
    free = trainable_mask(net)
    g = np.where(free, g, 0.0)
    step = state.step + 1
    m = state.beta1 * state.m + (1 - state.beta1) * g
    v = state.beta2 * state.v + (1 - state.beta2) * g * g
    mhat = m / (1 - state.beta1**step)
    vhat = v / (1 - state.beta2**step)
    vec = vec - state.lr * mhat / (np.sqrt(vhat) + state.eps)
    new_state = replace(state, m=m, v=v, step=step)
    return unflatten_params(net, vec), new_state


class TrainingDiverged(RuntimeError):
    """Raised when a non-finite loss or state appears during training."""


def _first_nonfinite(traj):
    for t, u in enumerate(traj.u):
        if not np.all(np.isfinite(u)):
            return f"u({t})"
    for t, b in enumerate(traj.b, start=1):
        if not np.all(np.isfinite(b)):
            return f"b({t})"
    for t, ub in enumerate(traj.ubar, start=1):
        if not np.all(np.isfinite(ub)):
            return f"ubar({t})"
    if not np.all(np.isfinite(traj.v_final)):
        return "v_final"
    return None


def train(samples, net, loss_kind="main", weights=None, epochs=1, batch_size=2,
          lr=1e-4, decay=0.995, seed=0, adam_beta1=0.9, adam_beta2=0.999,
          adam_eps=1e-8, validation=None, stop_loss=None, stop_metric=None,
          max_steps=None, callback=None):
    """Mini-batch training loop: forward pass, costate pass, Adam update.

    The learning rate decays exponentially per epoch (lr * decay**epoch);
    batch gradients are averaged over samples.  ``stop_loss`` /
    ``stop_metric`` allow early exit once target values are reached.
    Returns the trained parameters and a per-epoch history list.
    """
    if not samples:
        raise ContractError("dataset is empty")
    weights = weights or LossWeights()
    state = AdamState.create(net, lr=lr, beta1=adam_beta1, beta2=adam_beta2, eps=adam_eps)
    rng = np.random.default_rng(seed)
    history = []
    steps = 0
    for epoch in range(epochs):
        state.lr = lr * decay**epoch
        order = rng.permutation(len(samples))
        epoch_losses = []
        for start in range(0, len(order), batch_size):
            batch = [samples[i] for i in order[start:start + batch_size]]
            gsum = None
            for sample in batch:
                traj = forward(sample.f, sample.mask, net, keep_tape=True)
                loss, _ = evaluate_loss(traj, loss_kind, weights,
                                        sample.u_star, sample.v_star)
                if not np.isfinite(loss):
                    name = _first_nonfinite(traj) or "loss"
                    raise TrainingDiverged(
                        f"non-finite loss at epoch {epoch}, step {steps}: first bad tensor {name}"
                    )
                _, grads = mlm_backward(traj, net, sample.f, sample.mask,
                                        loss_kind, weights, sample.u_star, sample.v_star)
                gv = flatten_grads(net, grads)
                gsum = gv if gsum is None else gsum + gv
                epoch_losses.append(loss)
            net, state = adam_step(net, gsum / len(batch), state)
            steps += 1
            if max_steps is not None and steps >= max_steps:
                break
        entry = {"epoch": epoch, "loss": float(np.mean(epoch_losses)), "lr": state.lr}
        if validation is not None:
            entry["val"] = validation(net)
        history.append(entry)
        if callback is not None:
            callback(epoch, net, entry)
        if stop_loss is not None and entry["loss"] <= stop_loss:
            break
        if stop_metric is not None and validation is not None and stop_metric(entry["val"]):
            break
        if max_steps is not None and steps >= max_steps:
            break
    return net, history
