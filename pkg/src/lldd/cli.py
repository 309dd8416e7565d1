"""Command-line front end.

Subcommands map one-to-one onto pipeline stages::

    lldd phantom-gen -c cfg.json -o cohort.tds
    lldd distill     -c cfg.json -o state.tds [--cohort cohort.tds]
    lldd select      -c cfg.json -m herding -o selection.json
    lldd train       -c cfg.json --data state.tds -o model.tds
    lldd eval        -c cfg.json --model model.tds --testset cohort.tds
    lldd experiment  -c cfg.json -o outdir/
    lldd export      -c cfg.json --state state.tds -o outdir/

Every command is reproducible from its config and seeds alone.  Failures
print a machine-parsable JSON object on stderr and exit with a class-specific
code: 2 config/schema, 3 file format, 4 train/test overlap, 5 divergence,
1 anything else.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import coreset as cs
from . import distill as ds
from . import harness, nets, tds
from . import personalization as pers
from . import phantom
from ._rng import np_generator
from .config import ConfigError, RunConfig

EXIT_CONFIG = 2
EXIT_FORMAT = 3
EXIT_OVERLAP = 4
EXIT_DIVERGENCE = 5


def write_pgm(path: str | Path, image: np.ndarray) -> tuple[float, float]:
    """8-bit binary PGM preview with min-max scaling; returns (lo, hi)."""
    lo, hi = float(image.min()), float(image.max())
    scale = 255.0 / (hi - lo) if hi > lo else 0.0
    data = np.clip((image - lo) * scale, 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{image.shape[1]} {image.shape[0]}\n255\n".encode())
        fh.write(data.tobytes())
    return lo, hi


def _load_cohort(cfg: RunConfig, path: str | None) -> list[phantom.PatientVolume]:
    if path:
        return phantom.read_cohort(path)
    return phantom.generate_cohort(cfg.cohort)


def _experiment_config(cfg: RunConfig) -> harness.ExperimentConfig:
    e = cfg.eval
    downstream = tuple(nets.spec_from_name(a) for a in e.downstream_archs)
    try:
        return _build_experiment_config(cfg, e, downstream)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _build_experiment_config(cfg, e, downstream) -> harness.ExperimentConfig:
    return harness.ExperimentConfig(
        task=cfg.degradation.kind,
        cohort=cfg.cohort,
        held_out=e.held_out,
        degradation=cfg.degradation,
        net=cfg.network_spec(),
        downstream_nets=downstream,
        budgets=e.budgets,
        methods=e.methods,
        ipp_values=e.ipp_values,
        code_dim=cfg.spg.code_dim,
        ablations=e.ablations,
        include_full_data=e.include_full_data,
        n_distill_seeds=e.n_distill_seeds,
        n_train_seeds=e.n_train_seeds,
        distill_steps=e.distill_steps,
        distill_lr=cfg.distill.lr,
        chunk_size=cfg.distill.chunk_size,
        train_epochs=e.train_epochs,
        train_batch=e.train_batch,
        train_lr=e.train_lr,
        test_slices_per_patient=e.test_slices_per_patient,
        seed=cfg.seeds["root"],
    )


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_phantom_gen(cfg: RunConfig, args) -> int:
    cohort = phantom.generate_cohort(cfg.cohort)
    n = phantom.write_cohort(args.out, cohort)
    print(json.dumps({"patients": len(cohort),
                      "slices": sum(v.n_slices for v in cohort),
                      "bytes": n, "out": str(args.out)}))
    return 0


def cmd_distill(cfg: RunConfig, args) -> int:
    cohort = _load_cohort(cfg, args.cohort)
    state = pers.init_state(
        cohort, prior_size=cfg.spg.prior_size, code_dim=cfg.spg.code_dim,
        images_per_patient=cfg.spg.images_per_patient,
        seed=cfg.seeds["distill"], degradation=cfg.degradation,
        random_noise_init=cfg.spg.random_noise_init,
        fidelity_enabled=cfg.spg.fidelity_enabled,
        source_patient=cfg.spg.source_patient)
    dcfg = ds.DistillConfig(
        steps=args.steps if args.steps is not None else cfg.distill.steps,
        lr=cfg.distill.lr, real_batch=cfg.distill.real_batch,
        net=cfg.network_spec(), reinit_period=cfg.distill.reinit_period,
        chunk_size=cfg.distill.chunk_size, matching=cfg.distill.matching,
        seed=cfg.seeds["distill"],
        inner_train_steps=cfg.distill.inner_train_steps,
        learn_prior=cfg.distill.learn_prior)
    state, trace = ds.distill(cohort, state, dcfg)
    n = pers.write_state(args.out, state)
    trace_path = args.trace or str(Path(args.out).with_suffix(".loss.csv"))
    trace.write_csv(trace_path)
    print(json.dumps({"steps": dcfg.steps, "bytes": n, "out": str(args.out),
                      "trace": trace_path,
                      "final_loss": (float(trace.step_mean[-1])
                                     if dcfg.steps else None)}))
    return 0


def cmd_select(cfg: RunConfig, args) -> int:
    cohort = _load_cohort(cfg, args.cohort)
    method = args.method or cfg.coreset.method
    budget = args.budget or cfg.coreset.budget
    sel = cs.select(method, cohort, budget, seed=cfg.seeds["select"])
    Path(args.out).write_text(json.dumps(
        {"method": method, "budget": budget,
         "selection": [[int(p), int(s)] for p, s in sel]}, indent=2))
    print(json.dumps({"method": method, "selected": len(sel),
                      "out": str(args.out)}))
    return 0


def _load_pairs(cfg: RunConfig, path: str) -> tuple[np.ndarray, np.ndarray]:
    data = tds.read(path)
    if "lq" in data and "hq" in data:
        return (data["lq"].astype(np.float32), data["hq"].astype(np.float32))
    if "U" in data:   # a distilled state: materialize its pairs
        state = pers.read_state(path)
        return harness.materialize_state_pairs(state, cfg.seeds["export"])
    raise tds.TDSFormatError(
        f"{path} holds neither ('lq', 'hq') pairs nor a distilled state")


def cmd_train(cfg: RunConfig, args) -> int:
    pairs = _load_pairs(cfg, args.data)
    spec = (nets.spec_from_name(args.arch) if args.arch
            else cfg.network_spec())
    params = harness.train_downstream(
        spec, pairs, epochs=cfg.eval.train_epochs,
        batch=cfg.eval.train_batch, lr=cfg.eval.train_lr,
        seed=cfg.seeds["train"])
    entries = [(name, p.value) for name, p in params.params]
    n = tds.write(args.out, entries)
    side = {"arch": spec.arch, "channels": list(spec.channels),
            "kernels": list(spec.kernels), "depth": spec.depth,
            "pairs": int(pairs[0].shape[0]),
            "epochs": cfg.eval.train_epochs, "seed": cfg.seeds["train"]}
    Path(str(args.out) + ".json").write_text(json.dumps(side, indent=2))
    print(json.dumps({"params": params.size, "bytes": n,
                      "out": str(args.out)}))
    return 0


def _load_model(path: str) -> tuple[nets.NetworkSpec, nets.ParamSet]:
    side_path = Path(str(path) + ".json")
    if not side_path.exists():
        raise tds.TDSFormatError(f"missing model sidecar {side_path}")
    side = json.loads(side_path.read_text())
    spec = nets.NetworkSpec(side["arch"], tuple(side["channels"]),
                            tuple(side["kernels"]), side["depth"])
    data = tds.read(path)
    params = nets.build(spec, 0)
    from . import autodiff as ad
    rebuilt = []
    for name, _ in params.params:
        if name not in data:
            raise tds.TDSFormatError(f"model file missing parameter {name!r}")
        rebuilt.append((name, ad.leaf(data[name].astype(np.float32))))
    return spec, nets.ParamSet(spec, rebuilt)


def cmd_eval(cfg: RunConfig, args) -> int:
    spec, params = _load_model(args.model)
    test_cohort = phantom.read_cohort(args.testset)
    hq = np.concatenate([v.slices for v in test_cohort], axis=0)
    rng = np_generator(cfg.seeds["test"], "test-noise")
    lq = harness.degrade_stack(hq, cfg.degradation, rng)
    m = harness.evaluate(spec, params, (lq, hq[:, None].astype(np.float32)))
    print(json.dumps({"psnr_db": round(m.psnr, 4),
                      "ssim_x100": round(m.ssim_x100, 4),
                      "images": int(hq.shape[0])}))
    return 0


def cmd_experiment(cfg: RunConfig, args) -> int:
    report = harness.run_experiment(_experiment_config(cfg), outdir=args.out)
    print(report.to_text())
    print(json.dumps({"rows": len(report.rows),
                      "runtime_seconds": round(report.runtime_seconds, 1),
                      "outdir": str(args.out)}))
    return 0


def cmd_export(cfg: RunConfig, args) -> int:
    """Write the shareable bundle: synthetic pairs, gradients, previews.

    Raw cohort slices never enter the output directory; only synthesized
    images and derived gradient vectors do.
    """
    state = pers.read_state(args.state)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    lq, hq = harness.materialize_state_pairs(state, cfg.seeds["export"])
    tds.write(outdir / "pairs.tds", [("lq", lq), ("hq", hq)])

    scaling = {}
    for i in range(min(hq.shape[0], args.previews)):
        lo, hi = write_pgm(outdir / f"distilled{i:03d}.pgm", hq[i, 0])
        scaling[f"distilled{i:03d}.pgm"] = {"min": lo, "max": hi}
    (outdir / "preview_scaling.json").write_text(
        json.dumps(scaling, indent=2))

    cohort = _load_cohort(cfg, args.cohort)
    ids, grads = ds.export_patient_gradients(
        cohort, cfg.network_spec(), cfg.degradation,
        seed=cfg.seeds["export"],
        samples_per_patient=cfg.eval.samples_per_patient)
    ds.write_gradient_csv(outdir / "patient_gradients.csv", ids, grads)
    print(json.dumps({"pairs": int(hq.shape[0]),
                      "gradient_rows": int(len(ids)),
                      "outdir": str(outdir)}))
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lldd",
        description="Per-patient dataset distillation for low-level "
                    "image enhancement")
    parser.add_argument("--threads", type=int, default=1,
                        help="worker cap (current pipeline runs serially)")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, **kw):
        p = sub.add_parser(name, **kw)
        p.add_argument("-c", "--config", default=None,
                       help="JSON run configuration (defaults used if omitted)")
        p.set_defaults(fn=fn)
        return p

    p = add("phantom-gen", cmd_phantom_gen, help="generate a phantom cohort")
    p.add_argument("-o", "--out", required=True)

    p = add("distill", cmd_distill, help="run gradient-matching distillation")
    p.add_argument("-o", "--out", required=True)
    p.add_argument("--cohort", default=None, help="cohort TDS (else generated)")
    p.add_argument("--steps", type=int, default=None,
                   help="override distill.steps")
    p.add_argument("--trace", default=None, help="loss trace CSV path")

    p = add("select", cmd_select, help="run a coreset selector")
    p.add_argument("-o", "--out", required=True)
    p.add_argument("-m", "--method", default=None, choices=cs.SELECTORS)
    p.add_argument("-k", "--budget", type=int, default=None)
    p.add_argument("--cohort", default=None)

    p = add("train", cmd_train, help="train a network on pairs or a state")
    p.add_argument("--data", required=True,
                   help="pairs TDS or distilled-state TDS")
    p.add_argument("-o", "--out", required=True)
    p.add_argument("--arch", default=None, choices=nets.ARCHS)

    p = add("eval", cmd_eval, help="evaluate a model checkpoint")
    p.add_argument("--model", required=True)
    p.add_argument("--testset", required=True, help="cohort TDS of HQ slices")

    p = add("experiment", cmd_experiment, help="run the benchmark grid")
    p.add_argument("-o", "--out", required=True, help="report directory")

    p = add("export", cmd_export, help="write the shareable artifact bundle")
    p.add_argument("--state", required=True)
    p.add_argument("-o", "--out", required=True)
    p.add_argument("--cohort", default=None)
    p.add_argument("--previews", type=int, default=8)
    return parser


def _fail(exc: Exception, code: int) -> int:
    sys.stderr.write(json.dumps({
        "error": type(exc).__name__,
        "exit_code": code,
        "message": str(exc)}) + "\n")
    return code


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = cfgmod.load(args.config) if args.config else cfgmod.default()
        return args.fn(cfg, args)
    except ConfigError as exc:
        return _fail(exc, EXIT_CONFIG)
    except tds.TDSFormatError as exc:
        return _fail(exc, EXIT_FORMAT)
    except harness.OverlapError as exc:
        return _fail(exc, EXIT_OVERLAP)
    except (ds.DistillDivergence, harness.TrainDivergence) as exc:
        return _fail(exc, EXIT_DIVERGENCE)
    except (ValueError, OSError) as exc:
        return _fail(exc, 1)


if __name__ == "__main__":
    sys.exit(main())
