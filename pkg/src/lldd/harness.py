"""Downstream training, evaluation, and the benchmark experiment runner.

The runner reproduces the comparison-table structure: a full-data reference,
coreset baselines at matched slice budgets, and distilled datasets at one or
more images-per-patient settings, each trained and scored over several seeds
on held-out patients.  Held-out patients never reach selectors, the prior, or
distillation; the runner hard-errors on any overlap.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import coreset as cs
from . import degrade as deg
from . import nets
from . import personalization as pers
from ._rng import derive_seed, np_generator
from .distill import DistillConfig, distill
from .metrics import psnr, ssim
from .optim import Adam
from .personalization import DistilledState
from .phantom import CohortSpec, PatientVolume, generate_cohort


class TrainDivergence(RuntimeError):
    """Downstream training loss became non-finite."""


class OverlapError(ValueError):
    """A held-out patient leaked into training, selection, or the prior."""


@dataclass(frozen=True)
class MetricPair:
    psnr: float
    ssim: float          # in [0, 1]; tables report x100

    @property
    def ssim_x100(self) -> float:
        return 100.0 * self.ssim


def degrade_stack(hq: np.ndarray, spec: deg.DegradationSpec,
                  rng: np.random.Generator | None) -> np.ndarray:
    """Sampling-mode low-quality versions of a [N, h, w] stack."""
    hq4 = hq[:, None, :, :].astype(np.float32)
    if spec.kind == "sr":
        return deg.apply(spec, ad.constant(hq4), rng).value
    out = np.empty_like(hq4)
    for i in range(hq4.shape[0]):
        out[i] = deg.apply(spec, ad.constant(hq4[i:i + 1]), rng).value[0]
    return out


def train_downstream(net_spec: nets.NetworkSpec, pairs, epochs: int,
                     batch: int = 4, lr: float = 1e-3,
                     seed: int = 0) -> nets.ParamSet:
    """Minibatch MSE training; a pure function of (inputs, seed).

    ``pairs`` is (lq, hq) as [N, 1, h, w] float32 arrays.  Zero epochs
    returns the seeded initialization untouched.
    """
    lq, hq = pairs
    if lq.shape != hq.shape or lq.ndim != 4:
        raise ad.ShapeError("train_downstream", "pairs must be [N,1,h,w]",
                            lq.shape, hq.shape)
    n = lq.shape[0]
    if n == 0:
        raise ValueError("training set is empty")
    params = nets.build(net_spec, derive_seed(seed, "downstream-init"))
    opt = Adam(params.nodes(), lr=lr)
    for epoch in range(epochs):
        order = np_generator(seed, "shuffle", epoch).permutation(n)
        for start in range(0, n, batch):
            idx = order[start:start + batch]
            x = ad.constant(np.ascontiguousarray(lq[idx]))
            y = ad.constant(np.ascontiguousarray(hq[idx]))
            pred = nets.forward(net_spec, params, x)
            loss = ad.tmean(ad.square(ad.sub(pred, y)))
            if not np.isfinite(loss.value):
                raise TrainDivergence(
                    f"loss became {float(loss.value)} at epoch {epoch}")
            grads = ad.grad(loss, params.nodes())
            opt.step([g.value for g in grads])
    return params


def evaluate(net_spec: nets.NetworkSpec, params: nets.ParamSet,
             test_pairs, batch: int = 8) -> MetricPair:
    """Mean PSNR/SSIM of clipped network outputs over held-out pairs."""
    lq, hq = test_pairs
    if lq.shape[0] == 0:
        raise ValueError("empty test set")
    psnrs, ssims = [], []
    for start in range(0, lq.shape[0], batch):
        x = ad.constant(np.ascontiguousarray(lq[start:start + batch]))
        with ad.pause_recording():
            pred = nets.forward(net_spec, params, x).value
        pred = np.clip(pred, 0.0, 1.0)
        for i in range(pred.shape[0]):
            ref = hq[start + i, 0]
            psnrs.append(psnr(pred[i, 0], ref, 1.0))
            ssims.append(ssim(pred[i, 0], ref, 1.0))
    return MetricPair(float(np.mean(psnrs)), float(np.mean(ssims)))


@dataclass
class StorageReport:
    distilled_bytes: int
    raw_bytes: int

    @property
    def reduction_rate(self) -> float:
        return self.distilled_bytes / self.raw_bytes


def storage_report(state: DistilledState,
                   cohort: list[PatientVolume]) -> StorageReport:
    raw = sum(v.slices.size for v in cohort) * 4
    return StorageReport(pers.state_byte_size(state), raw)


# ---------------------------------------------------------------------------
# experiment grid
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentConfig:
    task: str = "sr"                       # "sr" | "ldct"
    cohort: CohortSpec = field(default_factory=CohortSpec)
    held_out: int = 2
    degradation: deg.DegradationSpec = field(
        default_factory=lambda: deg.DegradationSpec(kind="sr", sr_factor=4))
    net: nets.NetworkSpec = field(default_factory=nets.srcnn_lite)
    downstream_nets: tuple[nets.NetworkSpec, ...] = ()
    budgets: tuple[int, ...] = (5, 10)     # prior sizes / coreset budgets
    methods: tuple[str, ...] = ("random", "random_star", "uniform",
                                "herding", "kcenter", "ours")
    ipp_values: tuple[int, ...] = (1, 5)
    code_dim: int = 2
    ablations: tuple[str, ...] = ()        # "no_fidelity", "noise_init"
    include_full_data: bool = True
    n_distill_seeds: int = 3
    n_train_seeds: int = 5
    distill_steps: int = 300
    distill_lr: float = 1e-3
    chunk_size: int = 5
    train_epochs: int = 60
    train_batch: int = 4
    train_lr: float = 1e-3
    test_slices_per_patient: int = 0       # 0 = all
    seed: int = 0

    def __post_init__(self):
        if self.task not in ("sr", "ldct"):
            raise ValueError(f"unknown task {self.task!r}")
        if not 0 < self.held_out < self.cohort.patients:
            raise ValueError("held_out must leave at least one training patient")


@dataclass
class MethodRow:
    label: str
    arch: str
    psnr_mean: float
    psnr_std: float
    ssim_mean: float                       # x100 convention
    ssim_std: float
    n_runs: int
    storage_bytes: int | None = None
    reduction_rate: float | None = None
    runs: list[dict] = field(default_factory=list)


@dataclass
class ExperimentReport:
    rows: list[MethodRow]
    config: dict
    runtime_seconds: float

    def row(self, label: str, arch: str | None = None) -> MethodRow:
        for r in self.rows:
            if r.label == label and (arch is None or r.arch == arch):
                return r
        raise KeyError(label)

    def to_text(self) -> str:
        lines = [f"{'method':34s} {'arch':12s} {'PSNR (dB)':>14s} "
                 f"{'SSIM (x100)':>14s} {'runs':>5s} {'storage':>10s}"]
        for r in self.rows:
            storage = f"{r.storage_bytes}" if r.storage_bytes else "-"
            lines.append(
                f"{r.label:34s} {r.arch:12s} "
                f"{r.psnr_mean:7.2f}±{r.psnr_std:<5.2f} "
                f"{r.ssim_mean:7.2f}±{r.ssim_std:<5.2f} {r.n_runs:5d} "
                f"{storage:>10s}")
        return "\n".join(lines)

    def write(self, outdir: str | Path) -> None:
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        (outdir / "report.txt").write_text(self.to_text() + "\n")
        with open(outdir / "report.csv", "w") as fh:
            fh.write("label,arch,psnr_mean,psnr_std,ssim_mean_x100,"
                     "ssim_std_x100,n_runs,storage_bytes,reduction_rate\n")
            for r in self.rows:
                fh.write(f"{r.label},{r.arch},{r.psnr_mean:.4f},"
                         f"{r.psnr_std:.4f},{r.ssim_mean:.4f},"
                         f"{r.ssim_std:.4f},{r.n_runs},"
                         f"{r.storage_bytes or ''},"
                         f"{'' if r.reduction_rate is None else f'{r.reduction_rate:.6f}'}\n")
        meta = {"config": self.config, "runtime_seconds": self.runtime_seconds,
                "rows": [{**vars(r)} for r in self.rows]}
        (outdir / "meta.json").write_text(json.dumps(meta, indent=2,
                                                     default=str))


def split_cohort(cohort: list[PatientVolume], held_out: int
                 ) -> tuple[list[PatientVolume], list[PatientVolume]]:
    """Last ``held_out`` patients are the test set; the rest train."""
    if held_out < 1 or held_out >= len(cohort):
        raise ValueError("invalid held_out count")
    train, test = cohort[:-held_out], cohort[-held_out:]
    train_ids = {v.patient_id for v in train}
    test_ids = {v.patient_id for v in test}
    if train_ids & test_ids:
        raise OverlapError(
            f"test/train patient overlap: {sorted(train_ids & test_ids)}")
    return train, test


def _test_pairs(test: list[PatientVolume], cfg: ExperimentConfig
                ) -> tuple[np.ndarray, np.ndarray]:
    slices = []
    for vol in test:
        arr = vol.slices
        if cfg.test_slices_per_patient:
            arr = arr[:cfg.test_slices_per_patient]
        slices.append(arr)
    hq = np.concatenate(slices, axis=0)
    rng = np_generator(cfg.seed, "test-noise")
    lq = degrade_stack(hq, cfg.degradation, rng)
    return lq, hq[:, None, :, :].astype(np.float32)


def _real_training_pairs(hq: np.ndarray, cfg: ExperimentConfig,
                         tag: str) -> tuple[np.ndarray, np.ndarray]:
    rng = np_generator(cfg.seed, "train-noise", tag)
    lq = degrade_stack(hq, cfg.degradation, rng)
    return lq, hq[:, None, :, :].astype(np.float32)


def materialize_state_pairs(state: DistilledState, seed: int
                            ) -> tuple[np.ndarray, np.ndarray]:
    """Sampling-mode pair export for every patient of a distilled state."""
    xs, ys = [], []
    for p in range(state.n_patients):
        rng = np_generator(seed, "export-pairs", p)
        lq, hq = pers.make_pair_batch(state, p, rng)
        xs.append(lq.value)
        ys.append(hq.value)
    return (np.concatenate(xs, axis=0).astype(np.float32),
            np.concatenate(ys, axis=0).astype(np.float32))


def _summarize(label, arch, results, storage=None, rate=None) -> MethodRow:
    ps = np.array([r["psnr"] for r in results], dtype=np.float64)
    ss = np.array([r["ssim"] for r in results], dtype=np.float64)
    std = ps.std(ddof=1) if len(ps) > 1 else 0.0
    sstd = ss.std(ddof=1) if len(ss) > 1 else 0.0
    return MethodRow(label, arch, float(ps.mean()), float(std),
                     float(100 * ss.mean()), float(100 * sstd), len(results),
                     storage, rate, results)


def _train_eval_runs(net_spec, pairs, test_pairs, cfg, seeds, tag):
    out = []
    for s in seeds:
        params = train_downstream(net_spec, pairs, cfg.train_epochs,
                                  cfg.train_batch, cfg.train_lr,
                                  seed=derive_seed(cfg.seed, tag, s))
        m = evaluate(net_spec, params, test_pairs)
        out.append({"train_seed": s, "psnr": m.psnr, "ssim": m.ssim})
    return out


def distill_state_for(train: list[PatientVolume], cfg: ExperimentConfig,
                      budget: int, ipp: int, dseed: int,
                      ablation: str = "") -> tuple[DistilledState, object]:
    state = pers.init_state(
        train, prior_size=budget, code_dim=cfg.code_dim,
        images_per_patient=ipp,
        seed=derive_seed(cfg.seed, "state", budget, ipp, dseed, ablation),
        degradation=cfg.degradation,
        random_noise_init=(ablation == "noise_init"),
        fidelity_enabled=(ablation != "no_fidelity"))
    dcfg = DistillConfig(steps=cfg.distill_steps, lr=cfg.distill_lr,
                         net=cfg.net, chunk_size=cfg.chunk_size,
                         seed=derive_seed(cfg.seed, "distill",
                                          budget, ipp, dseed, ablation))
    return distill(train, state, dcfg)


def run_experiment(cfg: ExperimentConfig,
                   outdir: str | Path | None = None) -> ExperimentReport:
    t0 = time.time()
    cohort = generate_cohort(cfg.cohort)
    train, test = split_cohort(cohort, cfg.held_out)
    test_pairs = _test_pairs(test, cfg)
    raw_bytes = sum(v.slices.size for v in train) * 4
    train_seeds = list(range(cfg.n_train_seeds))
    downstream = cfg.downstream_nets or (cfg.net,)
    rows: list[MethodRow] = []

    if cfg.include_full_data:
        hq = np.concatenate([v.slices for v in train], axis=0)
        pairs = _real_training_pairs(hq, cfg, "full")
        for net_spec in downstream:
            res = _train_eval_runs(net_spec, pairs, test_pairs, cfg,
                                   train_seeds, f"full-{net_spec.arch}")
            rows.append(_summarize("full_data", net_spec.arch, res,
                                   storage=raw_bytes, rate=1.0))

    for budget in cfg.budgets:
        for method in cfg.methods:
            if method == "ours":
                continue
            res_by_arch = {n.arch: [] for n in downstream}
            train_ids = {v.patient_id for v in train}
            for dseed in range(cfg.n_distill_seeds):
                sel = cs.select(method, train, budget,
                                seed=derive_seed(cfg.seed, "select",
                                                 budget, dseed))
                leaked = {p for p, _ in sel} - train_ids
                if leaked:
                    raise OverlapError(
                        f"selector {method} returned held-out patients "
                        f"{sorted(leaked)}")
                hq = cs.gather(train, sel)
                pairs = _real_training_pairs(hq, cfg,
                                             f"{method}-{budget}-{dseed}")
                for net_spec in downstream:
                    res_by_arch[net_spec.arch].extend(_train_eval_runs(
                        net_spec, pairs, test_pairs, cfg, train_seeds,
                        f"{method}-{budget}-{dseed}-{net_spec.arch}"))
                if method in ("uniform", "herding", "kcenter"):
                    break   # deterministic selectors: one selection
            for net_spec in downstream:
                rows.append(_summarize(
                    f"{method}(budget={budget})", net_spec.arch,
                    res_by_arch[net_spec.arch],
                    storage=budget * train[0].slices[0].size * 4,
                    rate=budget * train[0].slices[0].size * 4 / raw_bytes))

        if "ours" in cfg.methods:
            variants = [("ours", "")] + [(f"ours_{a}", a)
                                         for a in cfg.ablations]
            for label_base, ablation in variants:
                for ipp in cfg.ipp_values:
                    res_by_arch = {n.arch: [] for n in downstream}
                    storage = None
                    for dseed in range(cfg.n_distill_seeds):
                        state, _ = distill_state_for(train, cfg, budget, ipp,
                                                     dseed, ablation)
                        storage = storage_report(state, train)
                        pairs = materialize_state_pairs(
                            state, derive_seed(cfg.seed, "pairs", dseed))
                        for net_spec in downstream:
                            res_by_arch[net_spec.arch].extend(_train_eval_runs(
                                net_spec, pairs, test_pairs, cfg, train_seeds,
                                f"{label_base}-{budget}-{ipp}-{dseed}-"
                                f"{net_spec.arch}"))
                    for net_spec in downstream:
                        rows.append(_summarize(
                            f"{label_base}(budget={budget},ipp={ipp})",
                            net_spec.arch, res_by_arch[net_spec.arch],
                            storage=storage.distilled_bytes,
                            rate=storage.reduction_rate))

    report = ExperimentReport(rows, config={
        "task": cfg.task, "seed": cfg.seed,
        "budgets": list(cfg.budgets), "ipp_values": list(cfg.ipp_values),
        "methods": list(cfg.methods),
        "cohort": {f: getattr(cfg.cohort, f)
                   for f in cfg.cohort.__dataclass_fields__},
        "degradation": {f: getattr(cfg.degradation, f)
                        for f in cfg.degradation.__dataclass_fields__},
        "n_distill_seeds": cfg.n_distill_seeds,
        "n_train_seeds": cfg.n_train_seeds,
        "distill_steps": cfg.distill_steps,
        "train_epochs": cfg.train_epochs,
    }, runtime_seconds=time.time() - t0)
    if outdir is not None:
        report.write(outdir)
    return report
