"""Synthetic ground truth, masks, and acquisition simulation.

The phantom is a fixed table of ellipses evaluated at pixel centers of
the normalized square [-1, 1]^2, so renders at different resolutions
agree on ellipse membership.  Coil sensitivities are smooth Gaussian
magnitude bumps at equally spaced angles with seeded linear phase ramps,
normalized so the per-pixel power sums to one; with that normalization
the RSS of the coil images reproduces the body image exactly.

Masks sample full phase-encode lines (columns by default).  They are
constructed in the DC-centered display picture (contiguous central ACS
block plus evenly spread extra lines) and stored in DFT index space,
matching :func:`pmrinet.ops.dft2`; ``np.fft.fftshift`` recovers the
display picture.
"""

import os
from dataclasses import dataclass

import numpy as np

from .ctns import FormatError, read_ctns, write_ctns
from .forward_model import SamplingMask, encode
from .ops import ContractError, ShapeError, apply_mask, dft2

# (intensity, half-axis a, half-axis b, center x, center y, rotation degrees)
_ELLIPSES = [
    (1.00, 0.6900, 0.9200, 0.00, 0.0000, 0.0),
    (-0.80, 0.6624, 0.8740, 0.00, -0.0184, 0.0),
    (-0.20, 0.1100, 0.3100, 0.22, 0.0000, -18.0),
    (-0.20, 0.1600, 0.4100, -0.22, 0.0000, 18.0),
    (0.10, 0.2100, 0.2500, 0.00, 0.3500, 0.0),
    (0.10, 0.0460, 0.0460, 0.00, 0.1000, 0.0),
    (0.10, 0.0460, 0.0460, 0.00, -0.1000, 0.0),
    (0.10, 0.0460, 0.0230, -0.08, -0.6050, 0.0),
    (0.10, 0.0230, 0.0230, 0.00, -0.6060, 0.0),
    (0.10, 0.0230, 0.0460, 0.06, -0.6050, 0.0),
]


def phantom(m, n):
    """Piecewise-smooth ellipse phantom with intensities in [0, 1]."""
    if m < 8 or n < 8:
        raise ContractError(f"phantom extents must be >= 8, got {m}x{n}")
    ys = (2 * np.arange(m) + 1) / m - 1
    xs = (2 * np.arange(n) + 1) / n - 1
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    img = np.zeros((m, n))
    for amp, a, b, x0, y0, phi in _ELLIPSES:
        th = np.deg2rad(phi)
        xr = (xx - x0) * np.cos(th) + (yy - y0) * np.sin(th)
        yr = -(xx - x0) * np.sin(th) + (yy - y0) * np.cos(th)
        img[(xr / a) ** 2 + (yr / b) ** 2 <= 1.0] += amp
    return np.clip(img, 0.0, 1.0)


def ellipse_membership(x, y):
    """Number of phantom ellipses containing the normalized point (x, y)."""
    count = 0
    for _, a, b, x0, y0, phi in _ELLIPSES:
        th = np.deg2rad(phi)
        xr = (x - x0) * np.cos(th) + (y - y0) * np.sin(th)
        yr = -(x - x0) * np.sin(th) + (y - y0) * np.cos(th)
        count += (xr / a) ** 2 + (yr / b) ** 2 <= 1.0
    return count


def coil_sensitivities(m, n, c, seed=0):
    """Smooth normalized complex sensitivity profiles for ``c`` coils.

    Gaussian magnitude bumps sit at equally spaced angles around the field
    of view; each coil gets a seeded linear phase ramp.  After per-pixel
    normalization sum_i |s_i|^2 = 1 everywhere.
    """
    if c < 1:
        raise ContractError(f"need at least one coil, got {c}")
    rng = np.random.default_rng(seed)
    ys = (2 * np.arange(m) + 1) / m - 1
    xs = (2 * np.arange(n) + 1) / n - 1
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    width = 1.2
    s = np.empty((m, n, c), dtype=np.complex128)
    for i in range(c):
        ang = 2 * np.pi * i / c
        cx, cy = np.cos(ang), np.sin(ang)
        mag = np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * width**2))
        ax, ay, phi0 = rng.uniform(-np.pi, np.pi, size=3)
        s[:, :, i] = mag * np.exp(1j * (ax * xx + ay * yy + phi0))
    power = np.sqrt((np.abs(s) ** 2).sum(axis=2))
    return s / power[:, :, None]


def make_coil_images(v_star, s):
    """Multi-coil ground truth u_i = s_i * v (entrywise, per coil)."""
    v_star = np.asarray(v_star)
    if v_star.shape != s.shape[:2]:
        raise ShapeError(f"image {v_star.shape} vs sensitivities {s.shape}")
    return s * v_star[:, :, None]


def cartesian_mask(m, n, target_ratio, acs_lines, axis=1):
    """Deterministic Cartesian line mask with a central ACS block.

    Fully samples ``acs_lines`` central lines, then spreads the number of
    extra lines that brings the total closest to ``target_ratio`` evenly
    over the remaining positions.  ``axis=1`` samples columns (the
    default phase-encode direction), ``axis=0`` rows.  The returned mask
    is in DFT index space; view with fftshift for the centered picture.
    """
    if not 0 < target_ratio <= 1:
        raise ContractError(f"target ratio must be in (0, 1], got {target_ratio}")
    size = n if axis == 1 else m
    if not 0 <= acs_lines < size * target_ratio:
        raise ContractError(
            f"acs_lines={acs_lines} infeasible for size {size} at ratio {target_ratio}"
        )
    want = int(round(target_ratio * size))
    want = max(want, acs_lines if acs_lines > 0 else 1, 1)
    lines = np.zeros(size, dtype=bool)
    center = size // 2
    lo = center - acs_lines // 2
    lines[lo:lo + acs_lines] = True
    extra = want - acs_lines
    if extra > 0:
        rest = np.flatnonzero(~lines)
        picks = (np.arange(extra) * rest.size) // extra
        lines[rest[picks]] = True
    shifted = np.zeros((m, n))
    if axis == 1:
        shifted[:, lines] = 1.0
    else:
        shifted[lines, :] = 1.0
    return SamplingMask(np.fft.ifftshift(shifted))


def simulate_acquisition(u_star, mask, sigma_noise=0.0, seed=0):
    """Noisy undersampled k-space: mask * (dft2(u_star) + n).

    The noise is circularly symmetric Gaussian with standard deviation
    ``sigma_noise`` per real/imaginary component; entries off the mask are
    exactly zero.  With ``sigma_noise=0`` this equals :func:`encode`.
    """
    if sigma_noise < 0:
        raise ContractError(f"noise level must be >= 0, got {sigma_noise}")
    if sigma_noise == 0.0:
        return encode(u_star, mask)
    rng = np.random.default_rng(seed)
    shape = u_star.shape
    noise = rng.normal(0.0, sigma_noise, shape) + 1j * rng.normal(0.0, sigma_noise, shape)
    return apply_mask(dft2(u_star) + noise, mask.mask)


@dataclass
class Sample:
    """One training pair: dense k-space, mask, and ground truth."""

    f: np.ndarray
    mask: SamplingMask
    u_star: np.ndarray | None = None
    v_star: np.ndarray | None = None
    seed: int = 0

    def __post_init__(self):
        if self.u_star is None and self.v_star is None:
            raise ContractError("sample needs at least one of u_star / v_star")
        off = apply_mask(self.f, 1.0 - self.mask.mask)
        if np.any(off != 0):
            raise ContractError("k-space data must be exactly zero off the mask")


def make_sample(m, n, c, target_ratio=0.3156, acs_lines=None, sigma_noise=0.0, seed=0):
    """Full synthetic sample: phantom body, coil images, mask, acquisition."""
    if acs_lines is None:
        acs_lines = max(2, int(round(24 * n / 320)))
    v = phantom(m, n)
    s = coil_sensitivities(m, n, c, seed=seed)
    u = make_coil_images(v, s)
    mask = cartesian_mask(m, n, target_ratio, acs_lines)
    f = simulate_acquisition(u, mask, sigma_noise, seed=seed + 1)
    return Sample(f=f, mask=mask, u_star=u, v_star=v, seed=seed)


def save_sample(dirpath, sample):
    """Write a sample as a directory of CTNS files plus a ``meta`` key-value file."""
    os.makedirs(dirpath, exist_ok=True)
    m, n, c = sample.f.shape
    lines = [
        "# pmrinet sample",
        f"m = {m}",
        f"n = {n}",
        f"c = {c}",
        f"ratio = {sample.mask.ratio!r}",
        f"seed = {sample.seed}",
        f"has_u_star = {int(sample.u_star is not None)}",
        f"has_v_star = {int(sample.v_star is not None)}",
    ]
    with open(os.path.join(dirpath, "meta"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    write_ctns(os.path.join(dirpath, "f.ctns"), sample.f)
    write_ctns(os.path.join(dirpath, "mask.ctns"), sample.mask.mask.astype(np.complex128))
    if sample.u_star is not None:
        write_ctns(os.path.join(dirpath, "u_star.ctns"), sample.u_star)
    if sample.v_star is not None:
        write_ctns(os.path.join(dirpath, "v_star.ctns"), sample.v_star.astype(np.complex128))


def load_sample(dirpath):
    """Read back a sample directory written by :func:`save_sample`."""
    meta_path = os.path.join(dirpath, "meta")
    if not os.path.exists(meta_path):
        raise FormatError(f"missing meta file {meta_path}")
    meta = {}
    with open(meta_path, encoding="utf-8") as fh:
        for raw in fh:
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise FormatError(f"{meta_path}: malformed line {raw.rstrip()!r}")
            k, v = (p.strip() for p in line.split("=", 1))
            meta[k] = v

    def tensor(name, required=True):
        path = os.path.join(dirpath, name)
        if not os.path.exists(path):
            if required:
                raise FormatError(f"missing tensor file {path}")
            return None
        return read_ctns(path)

    f = tensor("f.ctns")
    mask = SamplingMask(tensor("mask.ctns").real)
    u_star = tensor("u_star.ctns", required=meta.get("has_u_star") == "1")
    v = tensor("v_star.ctns", required=meta.get("has_v_star") == "1")
    v_star = v.real if v is not None else None
    return Sample(f=f, mask=mask, u_star=u_star, v_star=v_star,
                  seed=int(meta.get("seed", "0")))
