"""The five comparison selectors, side by side on one cohort.

Run:  python demos/05_coreset_baselines.py
"""

import numpy as np

from lldd import coreset
from lldd.phantom import CohortSpec, generate_cohort

cohort = generate_cohort(CohortSpec(patients=4, slices_per_patient=12,
                                    height=48, width=48, seed=11))
feats = coreset.features(cohort)
mu = feats.mean(axis=0)
refs = [(v.patient_id, s) for v in cohort for s in range(v.n_slices)]
index = {r: i for i, r in enumerate(refs)}

k = 6
print(f"selecting {k} of {len(refs)} slices with each method:\n")
for method in coreset.SELECTORS:
    sel = coreset.select(method, cohort, k, seed=0)
    pts = np.stack([feats[index[r]] for r in sel])
    to_mean = np.linalg.norm(pts.mean(axis=0) - mu)
    spread = np.linalg.norm(pts[:, None] - pts[None], axis=2)
    min_pair = spread[np.triu_indices(k, 1)].min()
    patients = sorted({p for p, _ in sel})
    print(f"{method:12s} -> {sel}")
    print(f"{'':12s}    coreset-mean residual {to_mean:.3f}, "
          f"min pairwise distance {min_pair:.3f}, patients {patients}\n")
