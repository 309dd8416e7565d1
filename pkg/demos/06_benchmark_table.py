"""A miniature of the full method-comparison table.

Runs the experiment grid at reduced scale: every coreset baseline plus the
distilled generator at two images-per-patient settings, on one budget, with
two seeds per stage.  The full-scale table lives in the acceptance suite.

Run:  python demos/06_benchmark_table.py     (~4 minutes)
"""

from lldd import harness, nets
from lldd.degrade import DegradationSpec
from lldd.phantom import CohortSpec

cfg = harness.ExperimentConfig(
    task="sr",
    cohort=CohortSpec(patients=6, slices_per_patient=20,
                      height=64, width=64, seed=0),
    held_out=2,
    degradation=DegradationSpec(kind="sr", sr_factor=4),
    net=nets.srcnn_lite(),
    budgets=(5,),
    methods=("random", "random_star", "uniform", "herding", "kcenter",
             "ours"),
    ipp_values=(1, 5),
    include_full_data=True,
    n_distill_seeds=1,
    n_train_seeds=2,
    distill_steps=150,
    train_epochs=40,
    seed=0,
)

report = harness.run_experiment(cfg, outdir="demo_report")
print(report.to_text())
print(f"\nfinished in {report.runtime_seconds:.0f}s; "
      f"full report files in demo_report/")
