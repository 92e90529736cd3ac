"""Synthetic speaker data, embedding-file persistence, and trial lists.

Speakers are isotropic Gaussian clusters: a seeded centroid per speaker plus
per-utterance noise. The ratio between_std / within_std controls task
difficulty, and nearest-centroid classification provides a known-good oracle
for it. Everything is a pure function of its spec and seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ParseError, ShapeError
from .numerics import as_finite_array


@dataclass(frozen=True)
class SyntheticSpec:
    """Generator knobs for a synthetic speaker dataset."""

    num_speakers: int = 20
    utts_per_speaker: int = 50
    d_in: int = 20
    within_std: float = 1.0
    between_std: float = 3.0
    seed: int = 7

    def __post_init__(self):
        if self.num_speakers < 2:
            raise ConfigError(f"num_speakers must be >= 2, got {self.num_speakers}")
        if self.utts_per_speaker < 2:
            raise ConfigError(f"utts_per_speaker must be >= 2, got {self.utts_per_speaker}")
        if self.d_in < 1:
            raise ConfigError(f"d_in must be >= 1, got {self.d_in}")
        if not self.within_std > 0.0:
            raise ConfigError(f"within_std must be > 0, got {self.within_std}")
        if not self.between_std > 0.0:
            raise ConfigError(f"between_std must be > 0, got {self.between_std}")


def utt_id(speaker: int, utt: int) -> str:
    return f"spk{speaker:04d}-utt{utt:04d}"


@dataclass
class Dataset:
    """Feature rows with speaker labels, utterance ids and a train/heldout split."""

    features: np.ndarray
    labels: np.ndarray
    utt_ids: list[str]
    heldout: np.ndarray  # boolean mask, aligned with rows

    def __post_init__(self):
        self.features = as_finite_array(self.features, "features", ndim=2)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.heldout = np.asarray(self.heldout, dtype=bool)
        rows = self.features.shape[0]
        if not (self.labels.shape[0] == rows == len(self.utt_ids) == self.heldout.shape[0]):
            raise ShapeError("features, labels, utt_ids and split masks disagree in length")

    @property
    def num_speakers(self) -> int:
        return int(self.labels.max()) + 1 if self.labels.size else 0

    @property
    def train_indices(self) -> np.ndarray:
        return np.nonzero(~self.heldout)[0]

    @property
    def heldout_indices(self) -> np.ndarray:
        return np.nonzero(self.heldout)[0]


def heldout_count(utts_per_speaker: int) -> int:
    """Rows held out per speaker: the last 20% rounded up, at least 2 when
    that still leaves a training row."""
    want = max(2, math.ceil(utts_per_speaker / 5))
    return min(utts_per_speaker - 1, want)


def generate_synthetic(spec: SyntheticSpec) -> Dataset:
    """Draw a dataset from the spec; bitwise deterministic per seed."""
    rng = np.random.default_rng(spec.seed)
    centroids = rng.normal(0.0, spec.between_std, size=(spec.num_speakers, spec.d_in))
    noise = rng.normal(
        0.0, spec.within_std,
        size=(spec.num_speakers, spec.utts_per_speaker, spec.d_in),
    )
    features = (centroids[:, None, :] + noise).reshape(-1, spec.d_in)
    labels = np.repeat(np.arange(spec.num_speakers), spec.utts_per_speaker)
    ids = [utt_id(s, u)
           for s in range(spec.num_speakers)
           for u in range(spec.utts_per_speaker)]
    held = np.zeros(features.shape[0], dtype=bool)
    n_held = heldout_count(spec.utts_per_speaker)
    for s in range(spec.num_speakers):
        start = s * spec.utts_per_speaker
        held[start + spec.utts_per_speaker - n_held : start + spec.utts_per_speaker] = True
    return Dataset(features, labels, ids, held)


def speaker_centroids(dataset: Dataset) -> np.ndarray:
    """Per-speaker mean of the training rows."""
    n_spk = dataset.num_speakers
    out = np.empty((n_spk, dataset.features.shape[1]))
    for s in range(n_spk):
        mask = (~dataset.heldout) & (dataset.labels == s)
        if not mask.any():
            raise ConfigError(f"speaker {s} has no training rows")
        out[s] = dataset.features[mask].mean(axis=0)
    return out


def nearest_centroid_accuracy(dataset: Dataset) -> float:
    """Heldout accuracy of brute-force nearest-centroid classification."""
    centroids = speaker_centroids(dataset)
    idx = dataset.heldout_indices
    if idx.size == 0:
        raise ConfigError("dataset has no heldout rows")
    feats = dataset.features[idx]
    d2 = ((feats[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    pred = d2.argmin(axis=1)
    return float(np.mean(pred == dataset.labels[idx]))


# --- embedding store ---------------------------------------------------------

@dataclass
class EmbeddingStore:
    """Ordered utterance-id -> (speaker-id, vector) mapping."""

    ids: list[str] = field(default_factory=list)
    speakers: list[str] = field(default_factory=list)
    vectors: np.ndarray = field(default_factory=lambda: np.empty((0, 0)))
    _index: dict[str, int] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._index = {u: i for i, u in enumerate(self.ids)}

    def __len__(self) -> int:
        return len(self.ids)

    def __contains__(self, utt: str) -> bool:
        return utt in self._index

    def vector(self, utt: str) -> np.ndarray:
        if utt not in self._index:
            raise LookupError(f"utterance {utt!r} not present in the store")
        return self.vectors[self._index[utt]]

    def speaker(self, utt: str) -> str:
        if utt not in self._index:
            raise LookupError(f"utterance {utt!r} not present in the store")
        return self.speakers[self._index[utt]]


def save_embeddings(path, ids, speaker_ids, vectors) -> None:
    """Write one ``<utt-id> <speaker-id> <v1> ... <vD>`` line per utterance.

    Values carry 17 significant digits so that load(save(x)) reproduces the
    doubles exactly.
    """
    arr = as_finite_array(vectors, "vectors", ndim=2)
    ids = [str(u) for u in ids]
    speaker_ids = [str(s) for s in speaker_ids]
    if not (len(ids) == len(speaker_ids) == arr.shape[0]):
        raise ShapeError("ids, speaker_ids and vectors disagree in length")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for u, s, row in zip(ids, speaker_ids, arr):
            fh.write(f"{u} {s} " + " ".join(f"{v:.17g}" for v in row) + "\n")


def load_embeddings(path) -> EmbeddingStore:
    """Read a store written by :func:`save_embeddings`. An empty file yields
    an empty store; malformed lines and dimension changes raise with the
    1-based line number."""
    ids: list[str] = []
    speakers: list[str] = []
    rows: list[np.ndarray] = []
    dim: int | None = None
    with open(path, encoding="utf-8") as fh:
        for lineno, text in enumerate(fh, start=1):
            text = text.strip()
            if not text:
                continue
            tokens = text.split()
            if len(tokens) < 3:
                raise ParseError(
                    f"expected '<utt> <speaker> <v1> ...', got {len(tokens)} fields",
                    line=lineno,
                )
            utt, speaker = tokens[0], tokens[1]
            try:
                values = np.array([float(t) for t in tokens[2:]])
            except ValueError as exc:
                raise ParseError(f"bad numeric value: {exc}", line=lineno) from exc
            if dim is None:
                dim = values.size
            elif values.size != dim:
                raise ShapeError(
                    f"line {lineno}: vector has dimension {values.size}, expected {dim}"
                )
            if utt in ids:
                raise ParseError(f"duplicate utterance id {utt!r}", line=lineno)
            ids.append(utt)
            speakers.append(speaker)
            rows.append(values)
    vectors = np.vstack(rows) if rows else np.empty((0, 0))
    return EmbeddingStore(ids=ids, speakers=speakers, vectors=vectors)


def write_split(path, utt_ids, heldout_mask) -> None:
    """One ``<utt-id> <train|heldout>`` line per utterance."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for utt, held in zip(utt_ids, heldout_mask):
            fh.write(f"{utt} {'heldout' if held else 'train'}\n")


def load_split(path) -> dict[str, bool]:
    """Utterance-id -> heldout flag, from a split manifest."""
    split: dict[str, bool] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, text in enumerate(fh, start=1):
            text = text.strip()
            if not text:
                continue
            tokens = text.split()
            if len(tokens) != 2 or tokens[1] not in ("train", "heldout"):
                raise ParseError(
                    f"expected '<utt-id> <train|heldout>', got {text!r}", line=lineno
                )
            split[tokens[0]] = tokens[1] == "heldout"
    return split


def dataset_from_store(store: EmbeddingStore, split: dict[str, bool]) -> Dataset:
    """Rebuild a Dataset from a persisted feature store plus split manifest.

    Speaker ids are mapped to contiguous integer labels: numerically when
    every id parses as an integer, by first appearance otherwise.
    """
    try:
        labels = np.array([int(s) for s in store.speakers], dtype=np.int64)
    except ValueError:
        seen: dict[str, int] = {}
        labels = np.array([seen.setdefault(s, len(seen)) for s in store.speakers],
                          dtype=np.int64)
    missing = [u for u in store.ids if u not in split]
    if missing:
        raise ConfigError(f"split manifest is missing {missing[0]!r} "
                          f"(and {len(missing) - 1} more)" if len(missing) > 1
                          else f"split manifest is missing {missing[0]!r}")
    held = np.array([split[u] for u in store.ids], dtype=bool)
    return Dataset(store.vectors.copy(), labels, list(store.ids), held)


# --- trials ------------------------------------------------------------------

@dataclass(frozen=True)
class Trial:
    """An (enrollment, test) utterance pair labeled by speaker identity."""

    enroll_utt: str
    test_utt: str
    is_target: bool

    def __post_init__(self):
        if self.enroll_utt == self.test_utt:
            raise ConfigError(f"trial pairs an utterance with itself: {self.enroll_utt!r}")


def make_trials(dataset: Dataset, num_target: int, num_nontarget: int,
                seed: int) -> list[Trial]:
    """Sample heldout trial pairs without replacement, deterministically.

    Target trials round-robin the speakers so no speaker dominates tiny
    sets; non-target trials are drawn uniformly from all cross-speaker
    heldout pairs.
    """
    if num_target < 0 or num_nontarget < 0:
        raise ConfigError("trial counts must be non-negative")
    if num_target == 0 and num_nontarget == 0:
        return []
    rng = np.random.default_rng(seed)
    held = dataset.heldout_indices
    by_speaker: dict[int, list[int]] = {}
    for idx in held:
        by_speaker.setdefault(int(dataset.labels[idx]), []).append(int(idx))

    same_pairs: dict[int, list[tuple[int, int]]] = {}
    for spk, members in sorted(by_speaker.items()):
        pairs = [(a, b) for k, a in enumerate(members) for b in members[k + 1:]]
        if pairs:
            same_pairs[spk] = pairs
    max_target = sum(len(p) for p in same_pairs.values())

    cross_pairs = []
    for k, a in enumerate(held):
        for b in held[k + 1:]:
            if dataset.labels[a] != dataset.labels[b]:
                cross_pairs.append((int(a), int(b)))
    if num_target > max_target or num_nontarget > len(cross_pairs):
        raise ConfigError(
            f"requested ({num_target} target, {num_nontarget} nontarget) trials but the "
            f"heldout split supports at most ({max_target}, {len(cross_pairs)})"
        )

    trials: list[Trial] = []
    remaining = {spk: list(rng.permutation(len(p))) for spk, p in same_pairs.items()}
    order = sorted(same_pairs)
    while len(trials) < num_target:
        progressed = False
        for spk in order:
            if len(trials) >= num_target:
                break
            if remaining[spk]:
                a, b = same_pairs[spk][remaining[spk].pop()]
                trials.append(Trial(dataset.utt_ids[a], dataset.utt_ids[b], True))
                progressed = True
        if not progressed:
            break

    chosen = rng.choice(len(cross_pairs), size=num_nontarget, replace=False)
    for k in chosen:
        a, b = cross_pairs[int(k)]
        trials.append(Trial(dataset.utt_ids[a], dataset.utt_ids[b], False))
    return trials


def write_trials(path, trials) -> None:
    """One ``<enroll> <test> <target|nontarget>`` line per trial."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for t in trials:
            label = "target" if t.is_target else "nontarget"
            fh.write(f"{t.enroll_utt} {t.test_utt} {label}\n")


def load_trials(path) -> list[Trial]:
    trials = []
    with open(path, encoding="utf-8") as fh:
        for lineno, text in enumerate(fh, start=1):
            text = text.strip()
            if not text:
                continue
            tokens = text.split()
            if len(tokens) != 3:
                raise ParseError(
                    f"expected '<enroll> <test> <target|nontarget>', got {len(tokens)} fields",
                    line=lineno,
                )
            if tokens[2] not in ("target", "nontarget"):
                raise ParseError(f"unknown trial label {tokens[2]!r}", line=lineno)
            trials.append(Trial(tokens[0], tokens[1], tokens[2] == "target"))
    return trials
