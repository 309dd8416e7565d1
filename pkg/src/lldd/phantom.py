"""Procedural multi-patient phantom cohorts.

Every cohort shares one template of additive ellipses (a body outline plus
interior features) drawn from the cohort seed.  Each patient perturbs the
template parameters by ``patient_jitter``; each slice then applies a smooth
sinusoidal drift of magnitude ``slice_drift`` across the slice index.  The
result mimics the key dataset property the pipeline relies on: patients share
anatomy-like structure while remaining individually distinguishable.

All structural randomness comes from the package's fixed xoshiro256** stream
(see ``_rng``), so a spec maps to exactly one cohort, forever.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tds
from ._rng import Xoshiro256StarStar, derive_seed


@dataclass(frozen=True)
class CohortSpec:
    patients: int = 10
    slices_per_patient: int = 50
    height: int = 64
    width: int = 64
    seed: int = 0
    template_ellipse_count: int = 6
    patient_jitter: float = 0.08
    slice_drift: float = 0.03

    def __post_init__(self):
        if self.patients < 1:
            raise ValueError("patients must be >= 1")
        if self.slices_per_patient < 1:
            raise ValueError("slices_per_patient must be >= 1")
        if min(self.height, self.width) < 16:
            raise ValueError("slice size must be at least 16x16")
        for name in ("patient_jitter", "slice_drift"):
            v = getattr(self, name)
            if not 0.0 <= v <= 0.5:
                raise ValueError(f"{name} must be in [0, 0.5], got {v}")
        if self.template_ellipse_count < 1:
            raise ValueError("template_ellipse_count must be >= 1")


@dataclass
class PatientVolume:
    patient_id: int
    slices: np.ndarray  # [n, h, w] float32 in [0, 1]
    provenance: str = "generated"

    @property
    def n_slices(self) -> int:
        return self.slices.shape[0]


# per-ellipse parameter vector: cx, cy, ax, ay, angle, intensity
_N_PARAMS = 6


def _template(spec: CohortSpec) -> np.ndarray:
    stream = Xoshiro256StarStar(derive_seed(spec.seed, "template"))
    ellipses = np.zeros((spec.template_ellipse_count, _N_PARAMS))
    # body outline first: large, centered, moderately bright
    ellipses[0] = (stream.uniform(0.48, 0.52), stream.uniform(0.48, 0.52),
                   stream.uniform(0.36, 0.44), stream.uniform(0.32, 0.40),
                   stream.uniform(0.0, np.pi), stream.uniform(0.28, 0.38))
    for k in range(1, spec.template_ellipse_count):
        inten = stream.uniform(0.12, 0.35)
        if stream.random() < 0.3:
            inten = -inten
        ellipses[k] = (stream.uniform(0.28, 0.72), stream.uniform(0.28, 0.72),
                       stream.uniform(0.06, 0.20), stream.uniform(0.06, 0.20),
                       stream.uniform(0.0, np.pi), inten)
    return ellipses


def _patient_params(spec: CohortSpec, template: np.ndarray,
                    patient: int) -> tuple[np.ndarray, np.ndarray]:
    """Jittered ellipse parameters plus per-(ellipse, param) drift phases."""
    stream = Xoshiro256StarStar(derive_seed(spec.seed, "patient", patient))
    jit = spec.patient_jitter
    params = template.copy()
    for k in range(params.shape[0]):
        u = np.array([stream.uniform(-1.0, 1.0) for _ in range(_N_PARAMS)])
        params[k, 0] += jit * 0.5 * u[0]          # centers move additively
        params[k, 1] += jit * 0.5 * u[1]
        params[k, 2] *= 1.0 + jit * u[2]          # sizes and intensity scale
        params[k, 3] *= 1.0 + jit * u[3]
        params[k, 4] += jit * np.pi * u[4]
        params[k, 5] *= 1.0 + jit * u[5]
    phases = np.array([[stream.uniform(0.0, 2.0 * np.pi)
                        for _ in range(_N_PARAMS)]
                       for _ in range(params.shape[0])])
    return params, phases


def _drifted(params: np.ndarray, phases: np.ndarray, drift: float,
             frac: float) -> np.ndarray:
    if drift == 0.0:
        return params
    wave = np.sin(2.0 * np.pi * frac + phases)
    out = params.copy()
    out[:, 0] += drift * 0.3 * wave[:, 0]
    out[:, 1] += drift * 0.3 * wave[:, 1]
    out[:, 2] *= 1.0 + drift * wave[:, 2]
    out[:, 3] *= 1.0 + drift * wave[:, 3]
    out[:, 4] += drift * np.pi * 0.5 * wave[:, 4]
    out[:, 5] *= 1.0 + drift * wave[:, 5]
    return out


def _rasterize(params: np.ndarray, h: int, w: int) -> np.ndarray:
    ys = (np.arange(h) + 0.5)[:, None] / h
    xs = (np.arange(w) + 0.5)[None, :] / w
    img = np.zeros((h, w))
    for cx, cy, axx, axy, ang, inten in params:
        dx = xs - cx
        dy = ys - cy
        ca, sa = np.cos(ang), np.sin(ang)
        u = (dx * ca + dy * sa) / max(axx, 1e-6)
        v = (-dx * sa + dy * ca) / max(axy, 1e-6)
        img += inten * (u * u + v * v <= 1.0)
    return np.clip(img, 0.0, 1.0)


def generate_patient(spec: CohortSpec, template: np.ndarray,
                     patient: int) -> PatientVolume:
    params, phases = _patient_params(spec, template, patient)
    n = spec.slices_per_patient
    vol = np.empty((n, spec.height, spec.width), dtype=np.float32)
    for s in range(n):
        drifted = _drifted(params, phases, spec.slice_drift, s / n)
        vol[s] = _rasterize(drifted, spec.height, spec.width)
    return PatientVolume(patient_id=patient, slices=vol)


def generate_cohort(spec: CohortSpec) -> list[PatientVolume]:
    """All patients of a cohort; depends on nothing but the spec."""
    template = _template(spec)
    return [generate_patient(spec, template, p) for p in range(spec.patients)]


def cohort_entries(cohort: list[PatientVolume]) -> tds.Entries:
    return [(f"patient{v.patient_id:03d}", v.slices) for v in cohort]


def write_cohort(path: str | Path, cohort: list[PatientVolume]) -> int:
    return tds.write(path, cohort_entries(cohort))


def read_cohort(path: str | Path) -> list[PatientVolume]:
    data = tds.read(path)
    cohort = []
    for name, arr in data.items():
        if not name.startswith("patient"):
            raise tds.TDSFormatError(f"unexpected entry {name!r} in cohort file")
        if arr.ndim != 3:
            raise tds.TDSFormatError(f"entry {name!r} must be rank 3")
        cohort.append(PatientVolume(patient_id=int(name[len("patient"):]),
                                    slices=arr.astype(np.float32)))
    return cohort


def ingest_volume(path: str | Path, patient_id: int = 0) -> PatientVolume:
    """Load an external volume stored as a single 'slices' entry.

    Values outside [0, 1] are min-max normalized first; everything is clamped
    afterwards, so the result always satisfies the range invariant.
    """
    data = tds.read(path)
    if "slices" not in data:
        raise tds.TDSFormatError("container has no 'slices' entry")
    arr = data["slices"].astype(np.float32)
    if arr.ndim != 3:
        raise tds.TDSFormatError(
            f"'slices' must be rank 3 [n, h, w], got rank {arr.ndim}")
    lo, hi = float(arr.min()), float(arr.max())
    if lo < 0.0 or hi > 1.0:
        arr = (arr - lo) / (hi - lo) if hi > lo else np.zeros_like(arr)
    arr = np.clip(arr, 0.0, 1.0)
    return PatientVolume(patient_id=patient_id, slices=arr,
                         provenance="ingested")
