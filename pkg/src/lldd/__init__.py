"""Per-patient dataset distillation for low-level image enhancement.

A numpy/scipy toolkit that synthesizes a compact per-patient dataset from a
cohort of procedurally generated patient volumes, matches task gradients
between synthetic and real pairs, and benchmarks tiny enhancement networks
trained on the distilled data against coreset-selection baselines.
"""

from . import (autodiff, cli, config, coreset, degrade, distill, harness,
               metrics, nets, personalization, phantom, tds)
from .autodiff import DiffNode, Tensor, grad
from .degrade import DegradationSpec, fbp, radon
from .distill import DistillConfig, distill as run_distillation
from .harness import ExperimentConfig, run_experiment
from .metrics import psnr, ssim
from .nets import NetworkSpec
from .personalization import DistilledState
from .phantom import CohortSpec, PatientVolume, generate_cohort

__version__ = "0.1.0"
