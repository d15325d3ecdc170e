"""skillstream: continual behavior cloning on a synthetic skill stream.

A self-contained float64 stack: a small reverse-mode autodiff core, a
procedural manipulation benchmark with frozen text/semantic encoders, a
latent-routing policy with per-skill low-rank adapters, a voxel-conditioned
rendering branch, teacher distillation, and a continual-learning evaluation
harness with replay and fine-tuning baselines.
"""

from .autodiff import Tensor, check_gradients, gradients
from .suite import SuiteConfig, generate_suite
from .training import RunConfig, Trainer, apply_method
from .harness import bench_run, train_run

__version__ = "0.1.0"

__all__ = ["Tensor", "check_gradients", "gradients", "SuiteConfig",
           "generate_suite", "RunConfig", "Trainer", "apply_method",
           "bench_run", "train_run", "__version__"]
