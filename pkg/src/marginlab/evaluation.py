"""Trial scoring with cosine similarity and equal-error-rate computation.

The EER is interpolated at the crossing of FAR and FRR: walking the
operating points of the sorted unique-score grid, the first sign change of
FAR - FRR is resolved linearly between the two adjacent points. On small
trial sets this removes the quantization bias of picking the nearest
discrete threshold, and it never strays more than one inter-point step from
the exhaustive midpoint-sweep oracle.

Conventions: a trial is accepted when its score is >= the threshold, so
FAR(t) is the fraction of non-target scores >= t and FRR(t) the fraction of
target scores < t.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import EmbeddingStore, Trial
from .errors import ConfigError, NumericalError, ShapeError
from .numerics import as_finite_array, cosine


@dataclass
class ScoreSet:
    """Trials with their cosine scores, in trial order."""

    trials: list[Trial]
    scores: np.ndarray

    def __post_init__(self):
        self.scores = as_finite_array(self.scores, "scores", ndim=1)
        if len(self.trials) != self.scores.shape[0]:
            raise ShapeError(
                f"{len(self.trials)} trials but {self.scores.shape[0]} scores"
            )

    @property
    def target_scores(self) -> np.ndarray:
        mask = np.array([t.is_target for t in self.trials], dtype=bool)
        return self.scores[mask]

    @property
    def nontarget_scores(self) -> np.ndarray:
        mask = np.array([not t.is_target for t in self.trials], dtype=bool)
        return self.scores[mask]


@dataclass(frozen=True)
class EerResult:
    eer: float
    threshold: float
    num_target: int
    num_nontarget: int


def score_trials(store: EmbeddingStore, trials) -> ScoreSet:
    """Cosine score for each trial, preserving order.

    Raises:
        LookupError: naming the first utterance id missing from the store.
    """
    trials = list(trials)
    scores = np.array([
        cosine(store.vector(t.enroll_utt), store.vector(t.test_utt)) for t in trials
    ]) if trials else np.empty(0)
    return ScoreSet(trials=trials, scores=scores)


def _operating_points(tar: np.ndarray, non: np.ndarray):
    """(thresholds, far, frr) on the sorted unique-score grid."""
    thresholds = np.unique(np.concatenate([tar, non]))
    tar_sorted = np.sort(tar)
    non_sorted = np.sort(non)
    far = (non.size - np.searchsorted(non_sorted, thresholds, side="left")) / non.size
    frr = np.searchsorted(tar_sorted, thresholds, side="left") / tar.size
    return thresholds, far, frr


def _check_classes(tar: np.ndarray, non: np.ndarray) -> None:
    if tar.size == 0 or non.size == 0:
        raise ConfigError(
            f"need at least one trial of each class, got {tar.size} target "
            f"and {non.size} non-target"
        )


def eer_from_scores(target_scores, nontarget_scores) -> EerResult:
    """Interpolated EER of two score populations."""
    tar = as_finite_array(target_scores, "target_scores", ndim=1)
    non = as_finite_array(nontarget_scores, "nontarget_scores", ndim=1)
    _check_classes(tar, non)
    thresholds, far, frr = _operating_points(tar, non)
    # Sentinel above the largest score: reject everything. With it the
    # points run from (FAR 1, FRR 0) to (FAR 0, FRR 1), so FAR - FRR must
    # cross zero somewhere along the grid.
    span = thresholds[-1] - thresholds[0]
    sentinel = thresholds[-1] + (span if span > 0.0 else 1.0)
    points = list(zip(thresholds.tolist(), far.tolist(), frr.tolist()))
    points.append((float(sentinel), 0.0, 1.0))

    for prev, point in zip(points, points[1:]):
        gap = point[1] - point[2]
        if gap > 0.0:
            continue
        if gap == 0.0:
            eer, threshold = point[1], point[0]
        else:
            prev_gap = prev[1] - prev[2]
            alpha = prev_gap / (prev_gap - gap)
            eer = prev[1] + alpha * (point[1] - prev[1])
            threshold = prev[0] + alpha * (point[0] - prev[0])
        return EerResult(float(eer), float(threshold), tar.size, non.size)
    raise NumericalError("FAR/FRR crossing not found")  # pragma: no cover


def compute_eer(scores: ScoreSet) -> EerResult:
    """EER of a scored trial list."""
    return eer_from_scores(scores.target_scores, scores.nontarget_scores)


def det_from_scores(target_scores, nontarget_scores) -> list[tuple[float, float, float]]:
    """(threshold, FAR, FRR) at every unique score value, threshold ascending."""
    tar = as_finite_array(target_scores, "target_scores", ndim=1)
    non = as_finite_array(nontarget_scores, "nontarget_scores", ndim=1)
    _check_classes(tar, non)
    thresholds, far, frr = _operating_points(tar, non)
    return list(zip(thresholds.tolist(), far.tolist(), frr.tolist()))


def det_points(scores: ScoreSet) -> list[tuple[float, float, float]]:
    """Detection trade-off points of a scored trial list."""
    return det_from_scores(scores.target_scores, scores.nontarget_scores)


def sweep_eer(target_scores, nontarget_scores) -> float:
    """Discrete EER oracle: exhaustive sweep over midpoint thresholds.

    Evaluates FAR/FRR at the midpoints between adjacent unique scores (plus
    one threshold below and one above everything) and returns the mean of
    FAR and FRR where their absolute difference is smallest.
    """
    tar = as_finite_array(target_scores, "target_scores", ndim=1)
    non = as_finite_array(nontarget_scores, "nontarget_scores", ndim=1)
    _check_classes(tar, non)
    uniq = np.unique(np.concatenate([tar, non]))
    mids = (uniq[:-1] + uniq[1:]) / 2.0
    sweep = np.concatenate([[uniq[0] - 1.0], mids, [uniq[-1] + 1.0]])
    best = None
    for t in sweep:
        far = float(np.mean(non >= t))
        frr = float(np.mean(tar < t))
        diff = abs(far - frr)
        if best is None or diff < best[0]:
            best = (diff, (far + frr) / 2.0)
    return best[1]


def write_scores_csv(path, scores: ScoreSet) -> None:
    """Emit ``enroll,test,label,score`` rows."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("enroll,test,label,score\n")
        for trial, value in zip(scores.trials, scores.scores):
            label = "target" if trial.is_target else "nontarget"
            fh.write(f"{trial.enroll_utt},{trial.test_utt},{label},{value:.17g}\n")


def write_det_csv(path, points) -> None:
    """Emit ``threshold,far,frr`` rows."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("threshold,far,frr\n")
        for threshold, far, frr in points:
            fh.write(f"{threshold:.17g},{far:.17g},{frr:.17g}\n")
