"""Patient-personalized synthesis of distilled training images.

The shareable artifact is tiny: a stack of prior images taken from one
representative patient, a per-patient modulation code, one patient-agnostic
3x3 convolution, and one fixed "fidelity" prior slice per patient.  A
patient's synthetic images are

    personalize(p) = conv(concat(code[0] * prior, ..., code[q-1] * prior))
                     + prior[fidelity_index[p]]

broadcast over the convolution's output channels (the per-patient image
count).  The prior stays frozen by default; learning happens in the codes and
the convolution, driven by the gradient-matching loop in ``distill``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import degrade as deg
from . import tds
from ._rng import Xoshiro256StarStar, derive_seed, np_generator
from .degrade import DegradationSpec
from .phantom import PatientVolume


@dataclass
class SharedPrior:
    images: np.ndarray            # [v, h, w] float32
    source_patient: int
    slice_indices: list[int]      # empty when initialized from noise

    @property
    def size(self) -> int:
        return self.images.shape[0]


@dataclass
class DistilledState:
    """Everything a downstream user receives; never raw cohort slices."""

    prior: SharedPrior
    codes: np.ndarray             # [P, q] float32
    conv_weight: np.ndarray       # [ipp, v*q, 3, 3] float32
    conv_bias: np.ndarray         # [ipp] float32
    fidelity_indices: np.ndarray  # [P] int64, each in [0, v)
    degradation: DegradationSpec
    random_noise_init: bool = False
    fidelity_enabled: bool = True
    meta: dict = field(default_factory=dict)

    @property
    def n_patients(self) -> int:
        return self.codes.shape[0]

    @property
    def code_dim(self) -> int:
        return self.codes.shape[1]

    @property
    def images_per_patient(self) -> int:
        return self.conv_weight.shape[0]

    def element_count(self) -> int:
        return (self.prior.images.size + self.codes.size
                + self.conv_weight.size + self.conv_bias.size
                + self.fidelity_indices.size)

    def copy(self) -> "DistilledState":
        return DistilledState(
            prior=SharedPrior(self.prior.images.copy(),
                              self.prior.source_patient,
                              list(self.prior.slice_indices)),
            codes=self.codes.copy(),
            conv_weight=self.conv_weight.copy(),
            conv_bias=self.conv_bias.copy(),
            fidelity_indices=self.fidelity_indices.copy(),
            degradation=self.degradation,
            random_noise_init=self.random_noise_init,
            fidelity_enabled=self.fidelity_enabled,
            meta=dict(self.meta),
        )


def init_prior(cohort: list[PatientVolume], size: int, seed: int,
               random_noise_init: bool = False,
               source_patient: int = 0) -> SharedPrior:
    """Prior = ``size`` distinct slices of one representative patient.

    The noise-init ablation replaces them with i.i.d. uniform [0, 1] values of
    the same shape.
    """
    vol = None
    for v in cohort:
        if v.patient_id == source_patient:
            vol = v
            break
    if vol is None:
        raise ValueError(f"source patient {source_patient} not in cohort")
    h, w = vol.slices.shape[1:]
    if random_noise_init:
        gen = np_generator(seed, "prior-noise")
        images = gen.random((size, h, w)).astype(np.float32)
        return SharedPrior(images, source_patient, [])
    if size > vol.n_slices:
        raise ValueError(
            f"prior size {size} exceeds patient {source_patient}'s "
            f"{vol.n_slices} slices")
    stream = Xoshiro256StarStar(derive_seed(seed, "prior-slices"))
    indices = stream.choice_without_replacement(vol.n_slices, size)
    return SharedPrior(vol.slices[indices].copy(), source_patient, indices)


def init_state(cohort: list[PatientVolume], prior_size: int, code_dim: int,
               images_per_patient: int, seed: int,
               degradation: DegradationSpec,
               random_noise_init: bool = False,
               fidelity_enabled: bool = True,
               source_patient: int = 0) -> DistilledState:
    """Fresh distilled state: all-ones codes, small He conv, fixed fidelity slices."""
    prior = init_prior(cohort, prior_size, seed,
                       random_noise_init=random_noise_init,
                       source_patient=source_patient)
    n_patients = len(cohort)
    codes = np.ones((n_patients, code_dim), dtype=np.float32)
    fan_in = prior_size * code_dim * 9
    gen = np_generator(seed, "personalizer")
    weight = (0.1 * np.sqrt(2.0 / fan_in)
              * gen.standard_normal((images_per_patient,
                                     prior_size * code_dim, 3, 3)))
    stream = Xoshiro256StarStar(derive_seed(seed, "fidelity"))
    fidelity = np.array([stream.randint(prior_size) for _ in range(n_patients)],
                        dtype=np.int64)
    return DistilledState(
        prior=prior,
        codes=codes,
        conv_weight=weight.astype(np.float32),
        conv_bias=np.zeros(images_per_patient, dtype=np.float32),
        fidelity_indices=fidelity,
        degradation=degradation,
        random_noise_init=random_noise_init,
        fidelity_enabled=fidelity_enabled,
        meta={"seed": seed, "steps_trained": 0},
    )


@dataclass
class StateNodes:
    """Graph-attached view of a state; leaves are shared across uses."""

    prior: ad.DiffNode
    codes: list[ad.DiffNode]
    weight: ad.DiffNode
    bias: ad.DiffNode

    def learnables(self, learn_prior: bool) -> list[ad.DiffNode]:
        out = list(self.codes) + [self.weight, self.bias]
        if learn_prior:
            out.append(self.prior)
        return out


def state_nodes(state: DistilledState, trainable: bool = False,
                learn_prior: bool = False) -> StateNodes:
    wrap = ad.leaf if trainable else ad.constant
    return StateNodes(
        prior=ad.leaf(state.prior.images) if (trainable and learn_prior)
        else ad.constant(state.prior.images),
        codes=[wrap(state.codes[p]) for p in range(state.n_patients)],
        weight=wrap(state.conv_weight),
        bias=wrap(state.conv_bias),
    )


def write_back(state: DistilledState, nodes: StateNodes) -> None:
    """Copy (possibly updated) node values into the state arrays."""
    state.prior.images[...] = nodes.prior.value
    for p, c in enumerate(nodes.codes):
        state.codes[p] = c.value
    state.conv_weight[...] = nodes.weight.value
    state.conv_bias[...] = nodes.bias.value


def adjust(prior: ad.DiffNode, code: ad.DiffNode) -> ad.DiffNode:
    """Code-modulated prior: concat(code[0]*U, ..., code[q-1]*U) on axis 0."""
    q = code.value.shape[0]
    blocks = [ad.broadcast_scalar_mul(ad.getitem_scalar(code, j), prior)
              for j in range(q)]
    return ad.concat(blocks, axis=0) if q > 1 else blocks[0]


def personalize(state: DistilledState, patient: int,
                nodes: StateNodes | None = None) -> ad.DiffNode:
    """Synthetic image stack [ipp, h, w] for one patient."""
    if not 0 <= patient < state.n_patients:
        raise IndexError(f"patient {patient} out of range")
    if nodes is None:
        nodes = state_nodes(state)
    v, h, w = state.prior.images.shape
    mixed = adjust(nodes.prior, nodes.codes[patient])
    out = ad.conv2d(ad.reshape(mixed, (1, mixed.value.shape[0], h, w)),
                    nodes.weight, nodes.bias, padding=1)
    out = ad.reshape(out, (state.images_per_patient, h, w))
    if state.fidelity_enabled:
        u_p = ad.narrow(nodes.prior, 0, int(state.fidelity_indices[patient]), 1)
        out = ad.add(out, ad.stack_repeat(ad.reshape(u_p, (h, w)),
                                          state.images_per_patient))
    return out


def make_pair_batch(state: DistilledState, patient: int,
                    rng: np.random.Generator | None,
                    differentiable: bool = False,
                    nodes: StateNodes | None = None
                    ) -> tuple[ad.DiffNode, ad.DiffNode]:
    """Low/high-quality training pair batches [ipp, 1, h, w]."""
    v, h, w = state.prior.images.shape
    ipp = state.images_per_patient
    hq = ad.reshape(personalize(state, patient, nodes), (ipp, 1, h, w))
    if state.degradation.kind == "sr":
        lq = deg.apply(state.degradation, hq, rng, differentiable=differentiable)
    else:
        parts = [deg.apply(state.degradation, ad.narrow(hq, 0, m, 1), rng,
                           differentiable=differentiable)
                 for m in range(ipp)]
        lq = ad.concat(parts, axis=0) if ipp > 1 else parts[0]
    return lq, hq


def make_pairs(state: DistilledState, patient: int,
               rng: np.random.Generator | None,
               differentiable: bool = False,
               nodes: StateNodes | None = None
               ) -> list[tuple[ad.DiffNode, ad.DiffNode]]:
    """Per-image view of the pair batch; length equals images-per-patient."""
    lq, hq = make_pair_batch(state, patient, rng, differentiable, nodes)
    return [(ad.narrow(lq, 0, m, 1), ad.narrow(hq, 0, m, 1))
            for m in range(state.images_per_patient)]


# ---------------------------------------------------------------------------
# serialization (TDS + JSON sidecar)
# ---------------------------------------------------------------------------

def state_entries(state: DistilledState) -> tds.Entries:
    return [
        ("U", state.prior.images.astype(np.float32)),
        ("codes", state.codes.astype(np.float32)),
        ("conv_w", state.conv_weight.astype(np.float32)),
        ("conv_b", state.conv_bias.astype(np.float32)),
        ("fidelity_idx", state.fidelity_indices.astype(np.float64)),
    ]


def state_byte_size(state: DistilledState) -> int:
    return len(tds.dump_bytes(state_entries(state)))


def _sidecar(state: DistilledState) -> dict:
    return {
        "source_patient": state.prior.source_patient,
        "prior_slice_indices": list(map(int, state.prior.slice_indices)),
        "random_noise_init": state.random_noise_init,
        "fidelity_enabled": state.fidelity_enabled,
        "degradation": {f: getattr(state.degradation, f)
                        for f in state.degradation.__dataclass_fields__},
        "meta": state.meta,
    }


def write_state(path: str | Path, state: DistilledState) -> int:
    path = Path(path)
    n = tds.write(path, state_entries(state))
    path.with_suffix(path.suffix + ".json").write_text(
        json.dumps(_sidecar(state), indent=2, sort_keys=True))
    return n


def read_state(path: str | Path) -> DistilledState:
    path = Path(path)
    data = tds.read(path)
    for key in ("U", "codes", "conv_w", "conv_b", "fidelity_idx"):
        if key not in data:
            raise tds.TDSFormatError(f"distilled state missing entry {key!r}")
    sidecar_path = path.with_suffix(path.suffix + ".json")
    if not sidecar_path.exists():
        raise tds.TDSFormatError(f"missing metadata sidecar {sidecar_path}")
    side = json.loads(sidecar_path.read_text())
    degr = DegradationSpec(**side["degradation"])
    prior = SharedPrior(data["U"].astype(np.float32),
                        int(side["source_patient"]),
                        list(side["prior_slice_indices"]))
    return DistilledState(
        prior=prior,
        codes=data["codes"].astype(np.float32),
        conv_weight=data["conv_w"].astype(np.float32),
        conv_bias=data["conv_b"].astype(np.float32),
        fidelity_indices=data["fidelity_idx"].astype(np.int64),
        degradation=degr,
        random_noise_init=bool(side["random_noise_init"]),
        fidelity_enabled=bool(side["fidelity_enabled"]),
        meta=dict(side.get("meta", {})),
    )
