"""Desk-scale embedding encoder with manual forward and backward passes.

Two affine layers with an elementwise ``max(0, .)`` between them, followed by
row-wise L2 normalization, produce unit embeddings. Cosine logits against a
unit-row class weight matrix feed the losses. The class weight constraint is
maintained by projection (renormalization) after every optimizer step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError, ParseError, ShapeError
from .numerics import as_finite_array, cosine_logits

CHECKPOINT_MAGIC = "marginlab checkpoint v1"


@dataclass
class EncoderParams:
    """Weights of the two-layer encoder.

    ``w1`` is (d_in, hidden), ``w2`` is (hidden, d_emb); biases are row
    vectors. The forward pass computes ``relu(x @ w1 + b1) @ w2 + b2`` and
    normalizes each row of the result.
    """

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def __post_init__(self):
        self.w1 = as_finite_array(self.w1, "w1", ndim=2)
        self.b1 = as_finite_array(self.b1, "b1", ndim=1)
        self.w2 = as_finite_array(self.w2, "w2", ndim=2)
        self.b2 = as_finite_array(self.b2, "b2", ndim=1)
        if self.w1.shape[1] != self.b1.shape[0] or self.w1.shape[1] != self.w2.shape[0]:
            raise ShapeError("layer widths disagree between w1, b1 and w2")
        if self.w2.shape[1] != self.b2.shape[0]:
            raise ShapeError("w2 and b2 disagree on the embedding dimension")
        if self.d_emb < 2:
            raise ShapeError(f"embedding dimension must be >= 2, got {self.d_emb}")

    @property
    def d_in(self) -> int:
        return self.w1.shape[0]

    @property
    def hidden(self) -> int:
        return self.w1.shape[1]

    @property
    def d_emb(self) -> int:
        return self.w2.shape[1]

    def copy(self) -> "EncoderParams":
        return EncoderParams(self.w1.copy(), self.b1.copy(), self.w2.copy(), self.b2.copy())

    def tensors(self):
        """(name, array) pairs in the fixed checkpoint order."""
        return (("w1", self.w1), ("b1", self.b1), ("w2", self.w2), ("b2", self.b2))


@dataclass
class EncoderGrads:
    """Gradients matching EncoderParams layout."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def tensors(self):
        return (("w1", self.w1), ("b1", self.b1), ("w2", self.w2), ("b2", self.b2))


@dataclass
class ForwardTrace:
    """Intermediate activations cached for exact backpropagation."""

    features: np.ndarray
    pre_act: np.ndarray
    post_act: np.ndarray
    raw_emb: np.ndarray
    norms: np.ndarray
    embeddings: np.ndarray
    params: EncoderParams


def init_encoder(d_in: int, hidden: int, d_emb: int, rng: np.random.Generator) -> EncoderParams:
    """Seeded uniform init scaled by 1/sqrt(fan_in); biases start at zero."""
    lim1 = 1.0 / np.sqrt(d_in)
    lim2 = 1.0 / np.sqrt(hidden)
    return EncoderParams(
        w1=rng.uniform(-lim1, lim1, size=(d_in, hidden)),
        b1=np.zeros(hidden),
        w2=rng.uniform(-lim2, lim2, size=(hidden, d_emb)),
        b2=np.zeros(d_emb),
    )


def init_class_weights(num_classes: int, d_emb: int, rng: np.random.Generator) -> np.ndarray:
    """Random unit rows, iterated to a renormalization fixed point so that a
    no-op training run leaves them bit-identical."""
    w = rng.normal(size=(num_classes, d_emb))
    for _ in range(8):
        renewed = renormalize_class_weights(w)
        if np.array_equal(renewed, w):
            break
        w = renewed
    return w


def init_model(d_in: int, hidden: int, d_emb: int, num_classes: int, seed: int):
    """Deterministic (EncoderParams, class weight matrix) pair for ``seed``."""
    rng = np.random.default_rng(seed)
    params = init_encoder(d_in, hidden, d_emb, rng)
    weights = init_class_weights(num_classes, d_emb, rng)
    return params, weights


def encoder_forward(params: EncoderParams, features) -> tuple[np.ndarray, ForwardTrace]:
    """Map features (N x d_in) to unit embeddings (N x d_emb).

    Raises:
        DegenerateInputError: when a sample maps to the zero vector before
            normalization (names the sample index).
    """
    x = as_finite_array(features, "features", ndim=2)
    if x.shape[1] != params.d_in:
        raise ShapeError(f"features have dim {x.shape[1]}, encoder expects {params.d_in}")
    pre = x @ params.w1 + params.b1
    post = np.maximum(pre, 0.0)
    raw = post @ params.w2 + params.b2
    norms = np.linalg.norm(raw, axis=1)
    zero = np.nonzero(norms == 0.0)[0]
    if zero.size:
        raise DegenerateInputError(
            f"sample {int(zero[0])} maps to the zero vector before normalization"
        )
    emb = raw / norms[:, None]
    trace = ForwardTrace(x, pre, post, raw, norms, emb, params)
    return emb, trace


def model_forward(params: EncoderParams, class_weights: np.ndarray, features,
                  validate: bool = True):
    """Cosine logits of encoded features against the class weight rows.

    With ``validate=False`` the unit-row check and the [-1, 1] clamp are
    skipped; the finite-difference checker uses that to probe perturbed
    weights without triggering the precondition.
    """
    emb, trace = encoder_forward(params, features)
    if validate:
        logits = cosine_logits(emb, class_weights)
    else:
        logits = emb @ np.asarray(class_weights, dtype=np.float64).T
    return logits, trace


def model_backward(trace: ForwardTrace, class_weights: np.ndarray,
                   d_logits: np.ndarray) -> tuple[EncoderGrads, np.ndarray]:
    """Backpropagate d(loss)/d(logits) to parameter and class-weight gradients.

    The normalization layer uses the projection form
    ``dL/du = (dL/de - (dL/de . e) e) / |u|`` which removes the radial
    component of the upstream gradient.
    """
    d_logits = as_finite_array(d_logits, "d_logits", ndim=2)
    n, c = d_logits.shape
    if n != trace.embeddings.shape[0] or c != class_weights.shape[0]:
        raise ShapeError(
            f"gradient shape {d_logits.shape} does not match trace/weights "
            f"({trace.embeddings.shape[0]} samples, {class_weights.shape[0]} classes)"
        )
    d_emb = d_logits @ class_weights
    d_weights = d_logits.T @ trace.embeddings

    e = trace.embeddings
    radial = np.sum(d_emb * e, axis=1, keepdims=True)
    d_raw = (d_emb - radial * e) / trace.norms[:, None]

    d_b2 = d_raw.sum(axis=0)
    d_w2 = trace.post_act.T @ d_raw
    d_post = d_raw @ trace.params.w2.T
    d_pre = d_post * (trace.pre_act > 0.0)
    d_b1 = d_pre.sum(axis=0)
    d_w1 = trace.features.T @ d_pre
    return EncoderGrads(d_w1, d_b1, d_w2, d_b2), d_weights


def renormalize_class_weights(class_weights: np.ndarray) -> np.ndarray:
    """Project every class weight row back onto the unit sphere."""
    w = as_finite_array(class_weights, "class_weights", ndim=2)
    norms = np.linalg.norm(w, axis=1)
    zero = np.nonzero(norms == 0.0)[0]
    if zero.size:
        raise DegenerateInputError(f"class weight row {int(zero[0])} has zero norm")
    return w / norms[:, None]


@dataclass
class Checkpoint:
    params: EncoderParams
    class_weights: np.ndarray
    seed: int
    step: int


def save_checkpoint(path, params: EncoderParams, class_weights: np.ndarray,
                    seed: int, step: int) -> None:
    """Write a plain-text checkpoint.

    Layout: magic line; ``dims d_in hidden d_emb num_classes``; ``seed N``;
    ``step N``; then parameter values as whitespace-separated decimals with
    17 significant digits, one tensor row per line, in the order
    w1, b1, w2, b2, class weights. The decimal width makes the round trip
    bit-exact.
    """
    w = as_finite_array(class_weights, "class_weights", ndim=2)
    lines = [
        CHECKPOINT_MAGIC,
        f"dims {params.d_in} {params.hidden} {params.d_emb} {w.shape[0]}",
        f"seed {seed}",
        f"step {step}",
    ]
    for _, tensor in params.tensors():
        for row in np.atleast_2d(tensor):
            lines.append(" ".join(f"{v:.17g}" for v in row))
    for row in w:
        lines.append(" ".join(f"{v:.17g}" for v in row))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def load_checkpoint(path) -> Checkpoint:
    """Read a checkpoint written by ``save_checkpoint``."""
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].strip() != CHECKPOINT_MAGIC:
        raise ParseError(f"not a checkpoint file (missing {CHECKPOINT_MAGIC!r} header)", line=1)
    try:
        dims = lines[1].split()
        if dims[0] != "dims":
            raise IndexError
        d_in, hidden, d_emb, num_classes = (int(v) for v in dims[1:5])
        seed = int(lines[2].split()[1])
        step = int(lines[3].split()[1])
    except (IndexError, ValueError) as exc:
        raise ParseError(f"malformed checkpoint header: {exc}", line=2) from exc
    values = []
    for text in lines[4:]:
        values.extend(float(tok) for tok in text.split())
    sizes = [d_in * hidden, hidden, hidden * d_emb, d_emb, num_classes * d_emb]
    if len(values) != sum(sizes):
        raise ParseError(
            f"expected {sum(sizes)} parameter values, found {len(values)}"
        )
    flat = np.array(values)
    cuts = np.cumsum(sizes)[:-1]
    v_w1, v_b1, v_w2, v_b2, v_cw = np.split(flat, cuts)
    params = EncoderParams(
        w1=v_w1.reshape(d_in, hidden),
        b1=v_b1,
        w2=v_w2.reshape(hidden, d_emb),
        b2=v_b2,
    )
    return Checkpoint(params, v_cw.reshape(num_classes, d_emb), seed, step)
