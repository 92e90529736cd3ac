"""Margin-based softmax losses over cosine logits, with analytic gradients.

Five variants share one calling convention:

* ``softmax``          - plain cross entropy with a temperature ``s``.
* ``am``               - additive margin: ``m`` subtracted from the target
                         cosine before the scaled softmax.
* ``am_reformulated``  - the same loss written as
                         ``log(1 + sum_j exp(-s * (gap_j - m)))`` where
                         ``gap_j`` is target cosine minus non-target cosine.
* ``am_factored``      - the margin pulled out as a constant factor
                         ``exp(s*m)`` multiplying the gap sum.
* ``ram``              - a true hinge per non-target term: a non-target that
                         is separated by more than ``m`` contributes nothing
                         and receives exactly zero gradient.

The three ``am*`` forms are algebraically identical and are kept as separate
code paths so they can be checked against each other. All values are batch
means; all gradients are with respect to the raw cosine logits and validated
against central finite differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .numerics import as_finite_array, log1p_sum_exp

VARIANTS = ("softmax", "am", "am_reformulated", "am_factored", "ram")
FLOOR_MODES = ("literal", "zero_floor")


@dataclass(frozen=True)
class MarginConfig:
    """Loss-variant selector plus hyperparameters.

    Attributes:
        variant: one of ``VARIANTS``.
        m: additive margin on the cosine scale, in [0, 2] (cosine differences
            cannot exceed 2).
        s: positive scale (temperature) applied to the logits.
        floor_mode: ``"literal"`` keeps every satisfied non-target term at
            ``exp(0) = 1`` so a fully satisfied sample contributes
            ``log(C)``; ``"zero_floor"`` subtracts the 1 inside the sum so it
            contributes 0. Only meaningful for the ``ram`` variant.
    """

    variant: str = "am"
    m: float = 0.20
    s: float = 30.0
    floor_mode: str = "literal"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown loss variant {self.variant!r}; expected one of {VARIANTS}")
        if not (0.0 <= self.m <= 2.0):
            raise ConfigError(f"margin m must be in [0, 2], got {self.m}")
        if not self.s > 0.0:
            raise ConfigError(f"scale s must be > 0, got {self.s}")
        if self.floor_mode not in FLOOR_MODES:
            raise ConfigError(
                f"unknown floor_mode {self.floor_mode!r}; expected one of {FLOOR_MODES}"
            )


@dataclass(frozen=True)
class LabeledLogits:
    """A batch of cosine logits (N x C, entries in [-1, 1]) with labels.

    ``unbounded=True`` skips the cosine range check (entries must still be
    finite); the easy/hard limit analysis probes gap magnitudes no cosine
    pair could produce.
    """

    logits: np.ndarray
    labels: np.ndarray
    unbounded: bool = False

    def __post_init__(self):
        logits = as_finite_array(self.logits, "logits", ndim=2)
        labels = np.asarray(self.labels, dtype=np.int64)
        if labels.ndim != 1 or labels.shape[0] != logits.shape[0]:
            raise ShapeError(
                f"labels must be one index per row, got {labels.shape} for {logits.shape[0]} rows"
            )
        n_classes = logits.shape[1]
        if n_classes < 2:
            raise ShapeError(f"need at least 2 classes, got {n_classes}")
        if logits.shape[0] < 1:
            raise ShapeError("need at least one sample")
        if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
            raise ConfigError(f"labels must lie in [0, {n_classes}), got range "
                              f"[{labels.min()}, {labels.max()}]")
        if not self.unbounded and np.abs(logits).max(initial=0.0) > 1.0:
            raise ConfigError("logits are cosines and must lie in [-1, 1]")
        object.__setattr__(self, "logits", logits)
        object.__setattr__(self, "labels", labels)

    @property
    def batch_size(self) -> int:
        return self.logits.shape[0]

    @property
    def num_classes(self) -> int:
        return self.logits.shape[1]


@dataclass(frozen=True)
class LossOutput:
    """Batch-mean loss value and its gradient with respect to the logits."""

    value: float
    grad: np.ndarray


@dataclass(frozen=True)
class HardnessReport:
    """Per-sample partition into easy / hard / unclassified sets.

    ``posterior`` is the margin-adjusted target posterior at unit scale.
    ``easy_error`` / ``hard_error`` hold, for every sample, the absolute gap
    between the exact unit-scale loss and the dominant-target respectively
    weak-target closed-form approximations.
    """

    posterior: np.ndarray
    easy: np.ndarray
    hard: np.ndarray
    easy_error: np.ndarray
    hard_error: np.ndarray

    @property
    def labels(self) -> list[str]:
        out = []
        for e, h in zip(self.easy, self.hard):
            out.append("easy" if e else ("hard" if h else "unclassified"))
        return out


def _nontarget_gaps(logits: np.ndarray, labels: np.ndarray, i: int) -> np.ndarray:
    """Gaps ``target_cosine - nontarget_cosine`` for sample ``i``, in column order."""
    row = logits[i]
    return np.delete(row[labels[i]] - row, labels[i])


def _margin_posterior(z: np.ndarray, y: np.ndarray, m: float, s: float) -> np.ndarray:
    """Max-shifted softmax of ``s * z`` with ``m`` subtracted from the target
    column; the ratios stay stable however saturated the batch is."""
    n = z.shape[0]
    rows = np.arange(n)
    a = s * z
    a[rows, y] = s * (z[rows, y] - m)
    e = np.exp(a - a.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def _am_family_grad(z: np.ndarray, y: np.ndarray, m: float, s: float) -> np.ndarray:
    """Gradient shared by the softmax/am family: ``(q - onehot) * s / N``."""
    n = z.shape[0]
    grad = _margin_posterior(z, y, m, s)
    grad[np.arange(n), y] -= 1.0
    grad *= s / n
    return grad


def _value_am_direct(z: np.ndarray, y: np.ndarray, m: float, s: float) -> np.ndarray:
    """Negative log of the margin-shifted target softmax, one sample at a time.

    Shifting at the target activation (rather than the row max) keeps full
    relative precision when the target dominates and the loss is tiny.
    """
    out = np.empty(z.shape[0])
    for i in range(z.shape[0]):
        label = int(y[i])
        activations = s * z[i]
        target = s * (z[i, label] - m)
        out[i] = log1p_sum_exp(np.delete(activations, label) - target)
    return out


def _value_softmax(z: np.ndarray, y: np.ndarray, s: float) -> np.ndarray:
    return _value_am_direct(z, y, 0.0, s)


def _value_am_reformulated(z: np.ndarray, y: np.ndarray, m: float, s: float) -> np.ndarray:
    return np.array([
        log1p_sum_exp(-s * (_nontarget_gaps(z, y, i) - m)) for i in range(z.shape[0])
    ])


def _value_am_factored(z: np.ndarray, y: np.ndarray, m: float, s: float) -> np.ndarray:
    return np.array([
        log1p_sum_exp(-s * _nontarget_gaps(z, y, i), log_scale=s * m)
        for i in range(z.shape[0])
    ])


def _ram_sample_value(hinges: np.ndarray, floor_mode: str) -> float:
    """Per-sample hinged loss given non-target hinge exponents ``max(0, .)``."""
    if floor_mode == "literal":
        return log1p_sum_exp(hinges)
    peak = float(hinges.max(initial=0.0))
    if peak > 700.0:
        # expm1 would overflow; fall back to the shifted form.
        scaled = np.exp(hinges - peak) - math.exp(-peak)
        return peak + math.log(math.exp(-peak) + float(np.sum(scaled)))
    return math.log1p(float(np.sum(np.expm1(hinges))))


def _value_ram(z: np.ndarray, y: np.ndarray, m: float, s: float, floor_mode: str) -> np.ndarray:
    out = np.empty(z.shape[0])
    for i in range(z.shape[0]):
        hinges = np.maximum(0.0, -s * (_nontarget_gaps(z, y, i) - m))
        out[i] = _ram_sample_value(hinges, floor_mode)
    return out


def _ram_grad(z: np.ndarray, y: np.ndarray, m: float, s: float, floor_mode: str) -> np.ndarray:
    n, c = z.shape
    rows = np.arange(n)
    gaps = z[rows, y][:, None] - z
    nontarget = np.ones((n, c), dtype=bool)
    nontarget[rows, y] = False
    raw = -s * (gaps - m)
    # Subgradient 0 at the hinge: a term is active only for a strict violation.
    active = nontarget & (raw > 0.0)
    hinges = np.where(active, raw, 0.0)
    peak = np.maximum(0.0, hinges.max(axis=1, keepdims=True))
    scaled = np.where(nontarget, np.exp(hinges - peak), 0.0)
    if floor_mode == "literal":
        denom = np.exp(-peak) + scaled.sum(axis=1, keepdims=True)
    else:
        denom = np.exp(-peak) + (scaled - np.exp(-peak) * nontarget).sum(axis=1, keepdims=True)
    q = scaled / denom
    grad = np.where(active, q, 0.0) * (s / n)
    grad[rows, y] = -grad.sum(axis=1)
    return grad


def _value_per_sample(z: np.ndarray, y: np.ndarray, cfg: MarginConfig) -> np.ndarray:
    """Per-sample loss values on a raw logit matrix (no range validation)."""
    if cfg.variant == "softmax":
        return _value_softmax(z, y, cfg.s)
    if cfg.variant == "am":
        return _value_am_direct(z, y, cfg.m, cfg.s)
    if cfg.variant == "am_reformulated":
        return _value_am_reformulated(z, y, cfg.m, cfg.s)
    if cfg.variant == "am_factored":
        return _value_am_factored(z, y, cfg.m, cfg.s)
    return _value_ram(z, y, cfg.m, cfg.s, cfg.floor_mode)


def _grad(z: np.ndarray, y: np.ndarray, cfg: MarginConfig) -> np.ndarray:
    if cfg.variant == "softmax":
        return _am_family_grad(z, y, 0.0, cfg.s)
    if cfg.variant == "ram":
        return _ram_grad(z, y, cfg.m, cfg.s, cfg.floor_mode)
    return _am_family_grad(z, y, cfg.m, cfg.s)


def _output(data: LabeledLogits, cfg: MarginConfig) -> LossOutput:
    z, y = data.logits, data.labels
    per_sample = _value_per_sample(z, y, cfg)
    if np.all(per_sample == per_sample[0]):
        # The exact mean of identical values is that value; summing and
        # dividing would round the batch floor off by an ulp.
        value = float(per_sample[0])
    else:
        value = float(np.mean(per_sample))
    return LossOutput(value=value, grad=_grad(z, y, cfg))


def softmax_ce(data: LabeledLogits, cfg: MarginConfig) -> LossOutput:
    """Cross entropy of the scaled-cosine softmax; ``cfg.m`` is ignored."""
    return _output(data, MarginConfig("softmax", 0.0, cfg.s))


def am_softmax(data: LabeledLogits, cfg: MarginConfig) -> LossOutput:
    """Additive-margin softmax, evaluated in its direct fraction form."""
    return _output(data, MarginConfig("am", cfg.m, cfg.s))


def am_softmax_reformulated(data: LabeledLogits, cfg: MarginConfig) -> LossOutput:
    """Additive-margin softmax as a log of 1 plus exponentiated margin gaps."""
    return _output(data, MarginConfig("am_reformulated", cfg.m, cfg.s))


def am_softmax_factored(data: LabeledLogits, cfg: MarginConfig) -> LossOutput:
    """Additive-margin softmax with the margin isolated as an ``exp(s*m)`` factor."""
    return _output(data, MarginConfig("am_factored", cfg.m, cfg.s))


def ram_softmax(data: LabeledLogits, cfg: MarginConfig) -> LossOutput:
    """Hinged margin loss: well-separated non-targets contribute no gradient."""
    return _output(data, MarginConfig("ram", cfg.m, cfg.s, cfg.floor_mode))


def evaluate(data: LabeledLogits, cfg: MarginConfig) -> LossOutput:
    """Dispatch on ``cfg.variant``."""
    return _output(data, cfg)


def raw_loss_value(logits: np.ndarray, labels: np.ndarray, cfg: MarginConfig) -> float:
    """Batch-mean loss on a raw logit matrix, skipping the [-1, 1] range check.

    Finite-difference checkers perturb logits (or the weights that produce
    them) by eps and need the loss to stay defined marginally outside the
    cosine bound.
    """
    return float(np.mean(_value_per_sample(logits, np.asarray(labels), cfg)))


def raw_loss_grad(logits: np.ndarray, labels: np.ndarray, cfg: MarginConfig) -> np.ndarray:
    """Analytic logit gradient on a raw logit matrix (companion of
    :func:`raw_loss_value`)."""
    return _grad(np.asarray(logits, dtype=np.float64), np.asarray(labels), cfg)


def margin_gap_clearance(logits: np.ndarray, labels: np.ndarray, m: float) -> float:
    """Smallest ``|gap - m|`` over all non-target entries of a batch.

    The hinged loss is non-differentiable where a gap equals the margin;
    finite-difference checks are only meaningful when this clearance
    comfortably exceeds the probe step.
    """
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels)
    worst = math.inf
    for i in range(z.shape[0]):
        gaps = _nontarget_gaps(z, y, i)
        worst = min(worst, float(np.abs(gaps - m).min()))
    return worst


def triplet_margin(d_p: float, d_n: float, m: float) -> float:
    """Classic triplet hinge ``max(0, d_p - d_n + m)`` on pair distances."""
    if m < 0.0:
        raise ConfigError(f"triplet margin must be >= 0, got {m}")
    return max(0.0, d_p - d_n + m)


def loss_gradient_check(data: LabeledLogits, cfg: MarginConfig, eps: float = 1e-5) -> float:
    """Max deviation of the analytic logit gradient from central differences.

    Uses relative deviation, falling back to absolute deviation where the
    analytic entry is below 1e-8. For the hinged variant, entries whose gap
    sits within ``2 * eps`` of the hinge are excluded (the loss is not
    differentiable there); a target-column entry is excluded when any gap in
    its row is that close, since perturbing the target moves every gap.
    """
    if not (1e-7 <= eps <= 1e-4):
        raise ConfigError(f"eps must be in [1e-7, 1e-4], got {eps}")
    z, y = data.logits.copy(), data.labels
    analytic = _grad(z.copy(), y, cfg)
    n, c = z.shape
    rows = np.arange(n)

    skip = np.zeros((n, c), dtype=bool)
    if cfg.variant == "ram":
        gaps = z[rows, y][:, None] - z
        near = np.abs(gaps - cfg.m) <= 2.0 * eps
        near[rows, y] = False
        skip = near.copy()
        skip[rows, y] = near.any(axis=1)

    worst = 0.0
    for i in range(n):
        row = z[i : i + 1].copy()
        label = y[i : i + 1]
        for j in range(c):
            if skip[i, j]:
                continue
            orig = row[0, j]
            # Only sample i depends on this entry, so differencing its own
            # loss avoids rounding noise from the rest of the batch.
            row[0, j] = orig + eps
            plus = float(_value_per_sample(row, label, cfg)[0])
            row[0, j] = orig - eps
            minus = float(_value_per_sample(row, label, cfg)[0])
            row[0, j] = orig
            fd = (plus - minus) / (2.0 * eps * n)
            a = analytic[i, j]
            err = abs(a - fd) if abs(a) < 1e-8 else abs(a - fd) / abs(a)
            worst = max(worst, err)
    return worst


# --- unit-scale analysis helpers -------------------------------------------
#
# These operate on a single sample's margin gaps directly, so limiting
# behavior can be probed at gap magnitudes no cosine pair could produce.

def am_loss_from_gaps(gaps, m: float, s: float = 1.0) -> float:
    """Single-sample additive-margin loss from its non-target gaps."""
    arr = as_finite_array(gaps, "gaps", ndim=1)
    return log1p_sum_exp(-s * (arr - m))


def ram_loss_from_gaps(gaps, m: float, s: float = 1.0, floor_mode: str = "literal") -> float:
    """Single-sample hinged loss from its non-target gaps."""
    arr = as_finite_array(gaps, "gaps", ndim=1)
    if floor_mode not in FLOOR_MODES:
        raise ConfigError(f"unknown floor_mode {floor_mode!r}")
    return _ram_sample_value(np.maximum(0.0, -s * (arr - m)), floor_mode)


def easy_set_approximation(gaps, m: float) -> float:
    """Closed form the unit-scale loss approaches when the target dominates:
    ``exp(m) * sum_j exp(-gap_j)``."""
    arr = as_finite_array(gaps, "gaps", ndim=1)
    return math.exp(m) * float(np.sum(np.exp(-arr)))


def hard_set_approximation(gaps, m: float) -> float:
    """Closed form the unit-scale loss approaches when the target is weak:
    ``m + log(sum_j exp(-gap_j))``."""
    arr = as_finite_array(gaps, "gaps", ndim=1)
    peak = float((-arr).max())
    return m + peak + math.log(float(np.sum(np.exp(-arr - peak))))


def hardness_report(
    data: LabeledLogits,
    cfg: MarginConfig,
    easy_threshold: float = 0.99,
    hard_threshold: float = 0.5,
) -> HardnessReport:
    """Partition a batch by margin-adjusted target posterior at unit scale.

    A sample is easy when its posterior reaches ``easy_threshold``, hard when
    it falls to ``hard_threshold``, unclassified in between. Approximation
    errors compare the exact unit-scale loss of each sample against the
    dominant-target and weak-target closed forms.
    """
    if not (0.0 < hard_threshold < easy_threshold < 1.0):
        raise ConfigError(
            f"need 0 < hard_threshold < easy_threshold < 1, got "
            f"({easy_threshold}, {hard_threshold})"
        )
    z, y = data.logits, data.labels
    n = z.shape[0]
    posterior = np.empty(n)
    easy_error = np.empty(n)
    hard_error = np.empty(n)
    for i in range(n):
        gaps = _nontarget_gaps(z, y, i)
        exact = am_loss_from_gaps(gaps, cfg.m, s=1.0)
        posterior[i] = math.exp(-exact)
        easy_error[i] = abs(exact - easy_set_approximation(gaps, cfg.m))
        hard_error[i] = abs(exact - hard_set_approximation(gaps, cfg.m))
    easy = posterior >= easy_threshold
    hard = posterior <= hard_threshold
    return HardnessReport(
        posterior=posterior,
        easy=easy,
        hard=hard,
        easy_error=easy_error,
        hard_error=hard_error,
    )
