"""Task-specific image degradation operators.

Two families:

* super-resolution: area-downsample by an integer factor, then bilinear
  upsample back to the original grid (pre-upsampled input convention), so
  low-quality inputs keep the network-friendly original size;
* low-dose CT: parallel-beam ray integration, Poisson photon statistics on
  ``I0 * exp(-mu * p)``, log conversion, and filtered back-projection.

Ray integration and back-projection are precomputed sparse matrices, so both
are exactly linear, their adjoints are exact transposes, and the whole
differentiable path composes cleanly with the autodiff graph.  For
distillation a Gaussian surrogate replaces Poisson sampling: the projection
noise is computed from a detached copy of the photon counts and enters the
graph as an additive constant, which keeps gradients flowing through the
linear chain while the noise level still tracks the current image.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from .autodiff import DiffNode, SparseLinearOperator, Tensor

NOISE_MODES = ("poisson", "gaussian_surrogate", "none")


@dataclass(frozen=True)
class DegradationSpec:
    kind: str = "sr"                 # "sr" | "ldct"
    sr_factor: int = 4
    photons: float = 1e4             # I0 for ldct
    n_angles: int = 90
    n_detectors: int = 0             # 0 = derive from image size
    ramp_filter: bool = True
    noise: str = "poisson"
    atten_scale: float = 0.1         # line integral -> attenuation units

    def __post_init__(self):
        if self.kind not in ("sr", "ldct"):
            raise ValueError(f"unknown degradation kind {self.kind!r}")
        if self.kind == "sr" and self.sr_factor not in (2, 4):
            raise ValueError(f"sr_factor must be 2 or 4, got {self.sr_factor}")
        if self.photons <= 0:
            raise ValueError("photon count must be positive")
        if self.n_angles < 1:
            raise ValueError("n_angles must be >= 1")
        if self.noise not in NOISE_MODES:
            raise ValueError(f"noise must be one of {NOISE_MODES}")
        if self.atten_scale <= 0:
            raise ValueError("atten_scale must be positive")

    def detectors_for(self, h: int) -> int:
        if self.n_detectors:
            return self.n_detectors
        n = math.ceil(h * math.sqrt(2.0))
        return n if n % 2 == 1 else n + 1


# ---------------------------------------------------------------------------
# parallel-beam geometry
# ---------------------------------------------------------------------------

class CTGeometry:
    """Sparse ray-integration and back-projection operators for one grid."""

    def __init__(self, h: int, w: int, n_angles: int, n_det: int):
        if h != w:
            raise ad.ShapeError("radon", "image must be square", (h, w))
        self.h, self.w = h, w
        self.n_angles, self.n_det = n_angles, n_det
        self.angles = np.arange(n_angles) * np.pi / n_angles
        self.forward_op = self._build_forward()
        self.backproject_op = self._build_backproject()
        freqs = np.abs(np.fft.rfftfreq(n_det))
        freqs[0] = 1.0 / (4.0 * n_det)   # Ram-Lak DC correction
        self.ramp_response = freqs

    def _build_forward(self) -> SparseLinearOperator:
        """Rays sample the image at unit steps with bilinear interpolation."""
        h, w, n_det = self.h, self.w, self.n_det
        cr, cc = (h - 1) / 2.0, (w - 1) / 2.0
        t = np.arange(n_det) - (n_det - 1) / 2.0
        s = np.arange(n_det) - (n_det - 1) / 2.0
        rows, cols, vals = [], [], []
        for a, theta in enumerate(self.angles):
            ca, sa = np.cos(theta), np.sin(theta)
            r = cr + t[:, None] * sa + s[None, :] * ca
            c = cc + t[:, None] * ca - s[None, :] * sa
            r0 = np.floor(r).astype(np.int64)
            c0 = np.floor(c).astype(np.int64)
            fr, fc = r - r0, c - c0
            det_rows = a * n_det + np.broadcast_to(
                np.arange(n_det)[:, None], r.shape)
            for dr, dc, wgt in ((0, 0, (1 - fr) * (1 - fc)),
                                (0, 1, (1 - fr) * fc),
                                (1, 0, fr * (1 - fc)),
                                (1, 1, fr * fc)):
                rr, cc2 = r0 + dr, c0 + dc
                ok = (rr >= 0) & (rr < h) & (cc2 >= 0) & (cc2 < w) & (wgt > 0)
                rows.append(det_rows[ok])
                cols.append((rr * w + cc2)[ok])
                vals.append(wgt[ok])
        m = sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(self.n_angles * n_det, h * w))
        return SparseLinearOperator(m, (h, w), (self.n_angles, n_det))

    def _build_backproject(self) -> SparseLinearOperator:
        """Pixel-driven back-projection with linear detector interpolation."""
        h, w, n_det = self.h, self.w, self.n_det
        cr, cc = (h - 1) / 2.0, (w - 1) / 2.0
        t_center = (n_det - 1) / 2.0
        rr, cc2 = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
        pix = (rr * w + cc2).ravel()
        rows, cols, vals = [], [], []
        for a, theta in enumerate(self.angles):
            ca, sa = np.cos(theta), np.sin(theta)
            t = (cc2.ravel() - cc) * ca + (rr.ravel() - cr) * sa + t_center
            t0 = np.floor(t).astype(np.int64)
            ft = t - t0
            for dt, wgt in ((0, 1 - ft), (1, ft)):
                tt = t0 + dt
                ok = (tt >= 0) & (tt < n_det) & (wgt > 0)
                rows.append(pix[ok])
                cols.append(a * n_det + tt[ok])
                vals.append(wgt[ok])
        m = sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(h * w, self.n_angles * n_det))
        return SparseLinearOperator(m, (self.n_angles, n_det), (h, w))


_geometry_cache: dict[tuple[int, int, int, int], CTGeometry] = {}


def geometry(h: int, w: int, spec: DegradationSpec) -> CTGeometry:
    n_det = spec.detectors_for(h)
    key = (h, w, spec.n_angles, n_det)
    if key not in _geometry_cache:
        _geometry_cache[key] = CTGeometry(h, w, spec.n_angles, n_det)
    return _geometry_cache[key]


# ---------------------------------------------------------------------------
# tensor-level CT operators
# ---------------------------------------------------------------------------

def radon(image: Tensor, spec: DegradationSpec) -> Tensor:
    """Line integrals of a square [h, w] image: sinogram [n_angles, n_det]."""
    image = np.asarray(image)
    if image.ndim != 2 or image.shape[0] != image.shape[1]:
        raise ad.ShapeError("radon", "image must be square 2-d", image.shape)
    return geometry(*image.shape, spec).forward_op.apply(image)


def fbp(sinogram: Tensor, spec: DegradationSpec, h: int | None = None) -> Tensor:
    """(Optionally ramp-filtered) back-projection, scaled by pi / n_angles.

    When ``h`` is omitted it is inferred as the largest image size whose
    derived detector count fits the sinogram width; neighboring sizes can
    share a detector count, so callers that know ``h`` should pass it.
    """
    sinogram = np.asarray(sinogram)
    if h is None:
        h = int(round(sinogram.shape[1] / math.sqrt(2.0)))
        while spec.detectors_for(h) > sinogram.shape[1]:
            h -= 1
        while spec.detectors_for(h + 1) <= sinogram.shape[1]:
            h += 1
    geo = geometry(h, h, spec)
    if sinogram.shape != (geo.n_angles, geo.n_det):
        raise ad.ShapeError("fbp", "sinogram does not match geometry",
                            sinogram.shape, (geo.n_angles, geo.n_det))
    filtered = sinogram
    if spec.ramp_filter:
        spec_f = np.fft.rfft(sinogram, axis=-1)
        filtered = np.fft.irfft(spec_f * geo.ramp_response,
                                n=geo.n_det, axis=-1).astype(sinogram.dtype)
    out = geo.backproject_op.apply(filtered)
    return out * sinogram.dtype.type(np.pi / geo.n_angles)


# ---------------------------------------------------------------------------
# differentiable degradation paths
# ---------------------------------------------------------------------------

def sr_degrade(y: DiffNode, factor: int) -> DiffNode:
    """Area-downsample by ``factor`` then bilinear-upsample back."""
    h, w = y.value.shape[-2:]
    if h % factor or w % factor:
        raise ad.ShapeError("sr_degrade", f"factor {factor} must divide extents",
                            y.value.shape)
    return ad.interpolate_bilinear(ad.downsample_area(y, factor), h, w)


def _projection_noise(p_raw: Tensor, spec: DegradationSpec,
                      rng: np.random.Generator, mode: str) -> Tensor:
    """Additive projection-domain noise, in raw line-integral units.

    Computed entirely from detached values: the Poisson path applies the exact
    log conversion, the Gaussian surrogate applies the linearized one
    (delta_p = (N_noisy - N) * (-1 / N)) so the result is the constant that
    the differentiable path adds to the clean projections.
    """
    mu = spec.atten_scale
    p_s = mu * p_raw.astype(np.float64)
    counts = spec.photons * np.exp(-p_s)
    if mode == "poisson":
        noisy = rng.poisson(counts).astype(np.float64)
        p_hat = -np.log(np.maximum(noisy, 1.0) / spec.photons)
        delta = p_hat - p_s
    elif mode == "gaussian_surrogate":
        eps = rng.standard_normal(counts.shape)
        # N_noisy = N + sqrt(N) * eps, linearized log: delta = -eps / sqrt(N)
        delta = -eps / np.sqrt(counts)
    else:
        raise ValueError(f"unknown noise mode {mode!r}")
    return (delta / mu).astype(p_raw.dtype)


def ldct_degrade(y: DiffNode, spec: DegradationSpec,
                 rng: np.random.Generator | None,
                 noise_mode: str | None = None,
                 frozen_noise: Tensor | None = None) -> DiffNode:
    """Low-dose CT degradation: noisy projections, then back-projection.

    ``noise_mode`` overrides ``spec.noise``.  ``frozen_noise`` injects a
    precomputed projection-noise field (raw units); callers use it to probe
    the differentiable path with the randomness held fixed.
    """
    if y.value.ndim != 4 or y.value.shape[:2] != (1, 1):
        raise ad.ShapeError("ldct_degrade", "input must be [1, 1, h, w]",
                            y.value.shape)
    h, w = y.value.shape[2:]
    geo = geometry(h, w, spec)
    mode = spec.noise if noise_mode is None else noise_mode
    if mode not in NOISE_MODES:
        raise ValueError(f"unknown noise mode {mode!r}")

    p = ad.sparse_linear(ad.reshape(y, (h, w)), geo.forward_op)
    if frozen_noise is not None:
        p = ad.add(p, ad.constant(frozen_noise.astype(y.value.dtype)))
    elif mode != "none":
        if rng is None:
            raise ValueError(f"noise mode {mode!r} requires an rng")
        eta = _projection_noise(p.value, spec, rng, mode)
        p = ad.add(p, ad.constant(eta))
    if spec.ramp_filter:
        p = ad.row_filter(p, geo.ramp_response)
    out = ad.scalar_mul(np.pi / geo.n_angles,
                        ad.sparse_linear(p, geo.backproject_op))
    return ad.reshape(out, (1, 1, h, w))


def apply(spec: DegradationSpec, y: DiffNode,
          rng: np.random.Generator | None = None,
          differentiable: bool = False) -> DiffNode:
    """Dispatch to the task degradation.

    ``differentiable=True`` swaps Poisson sampling for the Gaussian surrogate
    so gradient flow from output to input is never blocked; the sr path is
    deterministic and identical in both modes.
    """
    if spec.kind == "sr":
        return sr_degrade(y, spec.sr_factor)
    if spec.kind == "ldct":
        mode = spec.noise
        if differentiable and mode == "poisson":
            mode = "gaussian_surrogate"
        return ldct_degrade(y, spec, rng, noise_mode=mode)
    raise ValueError(f"unknown degradation kind {spec.kind!r}")
