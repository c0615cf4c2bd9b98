"""Few-shot classification by linear distillation.

Per-class linear predictors are distilled from a shared random target network.
A sample is assigned to the class whose predictor best reproduces the
target's output on it.
"""
from ldl import kernels
from ldl.data import LabeledSet, load_mnist, load_omniglot
from ldl.distill import TrainConfig, TrainedModel, bidirectional_train, fit_bidirectional, fit_o2md
from ldl.linalg import make_rng
from ldl.model import LinearNet, PredictorBank, TeacherBank, class_scores

__version__ = "0.1.0"

__all__ = [
    "kernels",
    "LabeledSet",
    "load_mnist",
    "load_omniglot",
    "TrainConfig",
    "TrainedModel",
    "bidirectional_train",
    "fit_bidirectional",
    "fit_o2md",
    "make_rng",
    "LinearNet",
    "PredictorBank",
    "TeacherBank",
    "class_scores",
    "__version__",
]
