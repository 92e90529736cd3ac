"""Margin-softmax loss laboratory for speaker verification embeddings."""

from .errors import (
    ConfigError,
    DegenerateInputError,
    MarginLabError,
    NumericalError,
    ParseError,
    ShapeError,
)
from .losses import (
    FLOOR_MODES,
    VARIANTS,
    HardnessReport,
    LabeledLogits,
    LossOutput,
    MarginConfig,
    am_loss_from_gaps,
    am_softmax,
    am_softmax_factored,
    am_softmax_reformulated,
    easy_set_approximation,
    evaluate,
    hard_set_approximation,
    hardness_report,
    loss_gradient_check,
    ram_loss_from_gaps,
    ram_softmax,
    softmax_ce,
    triplet_margin,
)
from .numerics import cosine, cosine_logits, l2_normalize, log1p_sum_exp

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DegenerateInputError",
    "MarginLabError",
    "NumericalError",
    "ParseError",
    "ShapeError",
    "FLOOR_MODES",
    "VARIANTS",
    "HardnessReport",
    "LabeledLogits",
    "LossOutput",
    "MarginConfig",
    "am_loss_from_gaps",
    "am_softmax",
    "am_softmax_factored",
    "am_softmax_reformulated",
    "easy_set_approximation",
    "evaluate",
    "hard_set_approximation",
    "hardness_report",
    "loss_gradient_check",
    "ram_loss_from_gaps",
    "ram_softmax",
    "softmax_ce",
    "triplet_margin",
    "cosine",
    "cosine_logits",
    "l2_normalize",
    "log1p_sum_exp",
    "__version__",
]
