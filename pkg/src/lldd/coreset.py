"""Subset-selection baselines over a cohort.

Every selector returns a list of (patient_id, slice_id) references of the
requested budget.  Feature-based selectors (herding, k-center) work on
area-downsampled, flattened slices in float64; the feature definition is
pixel-level on purpose so selections are deterministic and portable.
"""

from __future__ import annotations

import numpy as np

from ._rng import np_generator
from .phantom import PatientVolume

Selection = list[tuple[int, int]]


def _all_refs(cohort: list[PatientVolume]) -> Selection:
    refs = []
    for vol in cohort:
        refs.extend((vol.patient_id, s) for s in range(vol.n_slices))
    return refs


def _check_budget(k: int, total: int) -> None:
    if not 1 <= k <= total:
        raise ValueError(f"budget {k} outside [1, {total}]")


def features(cohort: list[PatientVolume], downsample_to: int = 16) -> np.ndarray:
    """[N, d] float64 feature matrix: block-averaged, flattened slices."""
    rows = []
    for vol in cohort:
        n, h, w = vol.slices.shape
        fh = max(1, h // downsample_to)
        fw = max(1, w // downsample_to)
        th, tw = fh * downsample_to, fw * downsample_to
        block = vol.slices[:, :th, :tw].astype(np.float64)
        block = block.reshape(n, downsample_to, fh, downsample_to, fw)
        rows.append(block.mean(axis=(2, 4)).reshape(n, -1))
    return np.concatenate(rows, axis=0)


def select_random(cohort: list[PatientVolume], k: int, seed: int) -> Selection:
    """Uniform sample without replacement over all slices of all patients."""
    refs = _all_refs(cohort)
    _check_budget(k, len(refs))
    gen = np_generator(seed, "select-random")
    idx = gen.choice(len(refs), size=k, replace=False)
    return [refs[i] for i in idx]


def select_random_star(cohort: list[PatientVolume], k: int, seed: int,
                       patient: int = 0) -> Selection:
    """Uniform sample from a single patient's slices."""
    vol = next((v for v in cohort if v.patient_id == patient), None)
    if vol is None:
        raise ValueError(f"patient {patient} not in cohort")
    _check_budget(k, vol.n_slices)
    gen = np_generator(seed, "select-random-star", patient)
    idx = gen.choice(vol.n_slices, size=k, replace=False)
    return [(patient, int(i)) for i in idx]


def select_uniform(cohort: list[PatientVolume], k: int) -> Selection:
    """Equal-interval indices over the patient-concatenated ordering."""
    refs = _all_refs(cohort)
    _check_budget(k, len(refs))
    return [refs[(j * len(refs)) // k] for j in range(k)]


def select_herding(cohort: list[PatientVolume], k: int,
                   downsample_to: int = 16) -> Selection:
    """Greedy kernel herding toward the feature mean.

    Classical recurrence w <- w + mu - x_chosen starting from w = mu; at each
    step the remaining point maximizing <w, x> is taken (ties broken by
    smallest (patient_id, slice_id)).  The iterate is kept in the closed form
    w_j = (j + 1) * mu - sum(selected), which the recurrence unrolls to, so
    the invariant holds exactly in float64.
    """
    refs = _all_refs(cohort)
    _check_budget(k, len(refs))
    feats = features(cohort, downsample_to)
    mu = feats.mean(axis=0)
    chosen: list[int] = []
    chosen_sum = np.zeros_like(mu)
    available = np.ones(len(refs), dtype=bool)
    for j in range(k):
        w = (j + 1) * mu - chosen_sum
        scores = feats @ w
        scores[~available] = -np.inf
        best = int(np.argmax(scores))   # argmax takes the first (smallest ref)
        chosen.append(best)
        chosen_sum = chosen_sum + feats[best]
        available[best] = False
    return [refs[i] for i in chosen]


def select_kcenter(cohort: list[PatientVolume], k: int,
                   downsample_to: int = 16) -> Selection:
    """Greedy 2-approximation of the minimax facility-location problem.

    The first center is the point nearest the feature mean; each subsequent
    center is the point farthest from its nearest selected center.
    """
    refs = _all_refs(cohort)
    _check_budget(k, len(refs))
    feats = features(cohort, downsample_to)
    mu = feats.mean(axis=0)
    d_mu = np.linalg.norm(feats - mu, axis=1)
    first = int(np.argmin(d_mu))
    chosen = [first]
    dists = np.linalg.norm(feats - feats[first], axis=1)
    for _ in range(1, k):
        dists[chosen] = -np.inf
        nxt = int(np.argmax(dists))
        chosen.append(nxt)
        dists = np.minimum(dists, np.linalg.norm(feats - feats[nxt], axis=1))
    return [refs[i] for i in chosen]


SELECTORS = ("random", "random_star", "uniform", "herding", "kcenter")


def select(method: str, cohort: list[PatientVolume], k: int,
           seed: int = 0) -> Selection:
    """Dispatch by method name."""
    if method == "random":
        return select_random(cohort, k, seed)
    if method == "random_star":
        return select_random_star(cohort, k, seed)
    if method == "uniform":
        return select_uniform(cohort, k)
    if method == "herding":
        return select_herding(cohort, k)
    if method == "kcenter":
        return select_kcenter(cohort, k)
    raise ValueError(f"unknown selection method {method!r}")


def gather(cohort: list[PatientVolume], selection: Selection) -> np.ndarray:
    """Stack the selected slices into [k, h, w]."""
    by_id = {v.patient_id: v for v in cohort}
    return np.stack([by_id[p].slices[s] for p, s in selection])
