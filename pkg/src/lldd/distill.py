"""Patient-aware gradient matching.

Each outer step draws a fresh network, computes per-patient task gradients on
a real minibatch (constants) and on that patient's synthetic pairs (with the
graph kept alive), and accumulates one cosine-distance matching loss per
patient.  After every chunk of patients the accumulated loss is pushed back
into the patient codes of that chunk and the shared personalizer convolution,
and one adaptive update is applied.  Everything is keyed off derived seeds, so
a run is a pure function of (cohort, initial state, config).
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import degrade as deg
from . import nets
from ._rng import derive_seed, np_generator
from .optim import Adam
from .personalization import (DistilledState, make_pair_batch, state_nodes,
                              write_back)
from .phantom import PatientVolume


class DistillDivergence(RuntimeError):
    """Matching loss became non-finite; carries a diagnostic snapshot."""

    def __init__(self, step: int, patient: int, snapshot: dict):
        self.step = step
        self.patient = patient
        self.snapshot = snapshot
        super().__init__(f"non-finite matching loss at step {step}, "
                         f"patient {patient}")


@dataclass(frozen=True)
class DistillConfig:
    steps: int = 2000
    lr: float = 1e-3
    real_batch: int = 4
    net: nets.NetworkSpec = field(default_factory=nets.srcnn_lite)
    reinit_period: int = 1
    chunk_size: int = 5
    matching: str = "global"          # "global" | "per_layer"
    seed: int = 0
    inner_train_steps: int = 0
    learn_prior: bool = False

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.chunk_size < 1:
            raise ValueError("chunk_size must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.matching not in ("global", "per_layer"):
            raise ValueError(f"unknown matching mode {self.matching!r}")
        if self.reinit_period < 1:
            raise ValueError("reinit_period must be >= 1")


@dataclass
class LossTrace:
    step_mean: np.ndarray               # [steps]
    per_patient_final: np.ndarray       # [P]

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "mean_loss"])
            for i, v in enumerate(self.step_mean):
                writer.writerow([i, f"{v:.8f}"])


def batch_pairs(pairs) -> tuple[ad.DiffNode, ad.DiffNode]:
    """Stack a list of ([1,1,h,w], [1,1,h,w]) pairs into [B,1,h,w] batches."""
    xs, ys = zip(*pairs)
    x = xs[0] if len(xs) == 1 else ad.concat(list(xs), axis=0)
    y = ys[0] if len(ys) == 1 else ad.concat(list(ys), axis=0)
    return x, y


def task_gradients(net_spec: nets.NetworkSpec, params: nets.ParamSet,
                   pairs, create_graph: bool = False,
                   mode: str = "global"):
    """Gradients of the pairwise MSE task loss w.r.t. the network parameters.

    ``pairs`` is either a list of (lq, hq) nodes or a prebatched (lq, hq)
    tuple.  Returns one flattened gradient node in ``global`` mode or the
    per-tensor list in ``per_layer`` mode.
    """
    if isinstance(pairs, tuple):
        x, y = pairs
    else:
        if not pairs:
            raise ValueError("task_gradients requires at least one pair")
        x, y = batch_pairs(pairs)
    pred = nets.forward(net_spec, params, x)
    loss = ad.tmean(ad.square(ad.sub(pred, y)))
    grads = ad.grad(loss, params.nodes(), create_graph=create_graph)
    if mode == "per_layer":
        return grads
    flat = [ad.reshape(g, (g.value.size,)) for g in grads]
    return flat[0] if len(flat) == 1 else ad.concat(flat, axis=0)


def _cosine_distance(g_real: ad.DiffNode, g_syn: ad.DiffNode) -> ad.DiffNode:
    nr = float(np.linalg.norm(g_real.value.ravel()))
    ns = float(np.linalg.norm(g_syn.value.ravel()))
    if nr == 0.0 or ns == 0.0:
        warnings.warn("zero-norm gradient in matching loss; "
                      "returning orthogonal distance 1", RuntimeWarning)
        return ad.constant(np.asarray(1.0, dtype=g_syn.value.dtype))
    cos = ad.div(ad.dot(g_syn, g_real),
                 ad.mul(ad.l2_norm(g_syn), ad.l2_norm(g_real)))
    return ad.sub(ad.constant(np.asarray(1.0, dtype=g_syn.value.dtype)), cos)


def matching_loss(g_real, g_syn, mode: str = "global") -> ad.DiffNode:
    """Cosine distance between real and synthetic task gradients, in [0, 2].

    The real side is detached: no gradient ever flows toward real data.
    """
    if mode == "global":
        return _cosine_distance(g_real.detach(), g_syn)
    if mode == "per_layer":
        if len(g_real) != len(g_syn):
            raise ValueError("per-layer gradient lists differ in length")
        terms = [_cosine_distance(r.detach(), s) for r, s in zip(g_real, g_syn)]
        total = terms[0]
        for t in terms[1:]:
            total = ad.add(total, t)
        return ad.scalar_mul(1.0 / len(terms), total)
    raise ValueError(f"unknown matching mode {mode!r}")


def _real_pair_batch(vol: PatientVolume, idx: np.ndarray,
                     spec: deg.DegradationSpec,
                     rng: np.random.Generator) -> tuple[ad.DiffNode, ad.DiffNode]:
    hq_arr = vol.slices[idx][:, None, :, :].astype(np.float32)
    hq = ad.constant(hq_arr)
    if spec.kind == "sr":
        lq = deg.apply(spec, hq, rng)
    else:
        parts = [deg.apply(spec, ad.constant(hq_arr[m:m + 1]), rng)
                 for m in range(hq_arr.shape[0])]
        lq = parts[0] if len(parts) == 1 else ad.concat(parts, axis=0)
    return lq, hq


def _chunks(n: int, size: int) -> list[list[int]]:
    return [list(range(i, min(i + size, n))) for i in range(0, n, size)]


def _inner_train(net_spec, params, state, nodes, config, step):
    """Optional refinement of the sampled network on current synthetic data."""
    snapshot = state.copy()
    write_back(snapshot, nodes)
    opt = Adam(params.nodes(), lr=1e-3)
    for it in range(config.inner_train_steps):
        rng = np_generator(config.seed, "inner", step, it)
        p = int(rng.integers(state.n_patients))
        lq, hq = make_pair_batch(snapshot, p, rng)
        pred = nets.forward(net_spec, params, lq)
        loss = ad.tmean(ad.square(ad.sub(pred, hq)))
        grads = ad.grad(loss, params.nodes())
        opt.step([g.value for g in grads])


def distill(cohort: list[PatientVolume], state: DistilledState,
            config: DistillConfig) -> tuple[DistilledState, LossTrace]:
    """Optimize a distilled state against a cohort; returns (state, trace)."""
    n_patients = len(cohort)
    if state.n_patients != n_patients:
        raise ValueError(
            f"state holds {state.n_patients} patients, cohort has {n_patients}")
    state = state.copy()
    spec = state.degradation
    nodes = state_nodes(state, trainable=True, learn_prior=config.learn_prior)
    learnables = nodes.learnables(config.learn_prior)
    opt = Adam(learnables, lr=config.lr)

    params = None
    trace = np.zeros(config.steps)
    final_losses = np.zeros(n_patients)
    for step in range(config.steps):
        if step % config.reinit_period == 0:
            params = nets.build(config.net,
                                derive_seed(config.seed, "net", step))
            if config.inner_train_steps:
                _inner_train(config.net, params, state, nodes, config, step)
        step_losses = np.zeros(n_patients)
        for chunk in _chunks(n_patients, config.chunk_size):
            chunk_loss = None
            for p in chunk:
                mb_rng = np_generator(config.seed, "minibatch", step, p)
                idx = mb_rng.choice(cohort[p].n_slices,
                                    size=min(config.real_batch,
                                             cohort[p].n_slices),
                                    replace=False)
                real_rng = np_generator(config.seed, "real-noise", step, p)
                g_real = task_gradients(
                    config.net, params,
                    _real_pair_batch(cohort[p], idx, spec, real_rng),
                    create_graph=False, mode=config.matching)
                syn_rng = np_generator(config.seed, "syn-noise", step, p)
                g_syn = task_gradients(
                    config.net, params,
                    make_pair_batch(state, p, syn_rng, differentiable=True,
                                    nodes=nodes),
                    create_graph=True, mode=config.matching)
                loss_p = matching_loss(g_real, g_syn, config.matching)
                value = float(loss_p.value)
                if not np.isfinite(value):
                    raise DistillDivergence(step, p, {
                        "step": step, "patient": p,
                        "codes": state.codes.copy(),
                        "trace_so_far": trace[:step].copy()})
                step_losses[p] = value
                final_losses[p] = value
                chunk_loss = loss_p if chunk_loss is None \
                    else ad.add(chunk_loss, loss_p)
            grads = ad.grad(chunk_loss, learnables)
            chunk_set = set(chunk)
            grad_values = []
            for i, g in enumerate(grads):
                if i < n_patients and i not in chunk_set:
                    grad_values.append(None)   # out-of-chunk codes untouched
                else:
                    grad_values.append(g.value)
            opt.step(grad_values)
        trace[step] = step_losses.mean()
    write_back(state, nodes)
    state.meta = dict(state.meta)
    state.meta["steps_trained"] = int(state.meta.get("steps_trained", 0)
                                      + config.steps)
    state.meta["distill_seed"] = config.seed
    return state, LossTrace(trace, final_losses)


# ---------------------------------------------------------------------------
# per-patient gradient export (for external embedding / similarity analysis)
# ---------------------------------------------------------------------------

def export_patient_gradients(cohort: list[PatientVolume],
                             net_spec: nets.NetworkSpec,
                             degradation: deg.DegradationSpec,
                             seed: int, samples_per_patient: int,
                             batch: int = 4) -> tuple[np.ndarray, np.ndarray]:
    """Flattened task gradients per patient under one fixed network init.

    Minibatch indices and degradation noise are keyed by (sample index, slice
    count) only, so patients with identical volumes produce identical rows.
    Returns (patient_ids [R], gradients [R, n_params]).
    """
    params = nets.build(net_spec, derive_seed(seed, "export-net"))
    ids, rows = [], []
    for s in range(samples_per_patient):
        for vol in cohort:
            mb_rng = np_generator(seed, "export-batch", s, vol.n_slices)
            idx = mb_rng.choice(vol.n_slices, size=min(batch, vol.n_slices),
                                replace=False)
            noise_rng = np_generator(seed, "export-noise", s, vol.n_slices)
            g = task_gradients(net_spec, params,
                               _real_pair_batch(vol, idx, degradation,
                                                noise_rng))
            ids.append(vol.patient_id)
            rows.append(g.value.astype(np.float64))
    return np.asarray(ids), np.stack(rows)


def write_gradient_csv(path: str | Path, ids: np.ndarray,
                       grads: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["patient_id"] + [f"g{i}" for i in range(grads.shape[1])])
        for pid, row in zip(ids, grads):
            writer.writerow([int(pid)] + [f"{v:.8e}" for v in row])


def gradient_cosine_stats(ids: np.ndarray, grads: np.ndarray,
                          center: bool = False) -> tuple[float, float]:
    """Mean within-patient and across-patient cosine similarity of rows.

    Gradients at a random network init share one dominant direction, so raw
    similarities sit near 1 for every pair; ``center=True`` removes the mean
    row first, exposing the per-patient structure.
    """
    if center:
        grads = grads - grads.mean(axis=0, keepdims=True)
    norms = np.linalg.norm(grads, axis=1, keepdims=True)
    unit = grads / np.maximum(norms, 1e-300)
    sim = unit @ unit.T
    same = ids[:, None] == ids[None, :]
    off_diag = ~np.eye(len(ids), dtype=bool)
    intra = float(sim[same & off_diag].mean())
    inter = float(sim[~same].mean())
    return intra, inter
