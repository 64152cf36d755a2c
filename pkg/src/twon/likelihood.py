"""Reply-likelihood scorer: a two-branch network over frozen embeddings.

Both branches stack two square (d x d) linear layers with ReLU. The post
branch output is multiplied element-wise into every transformed history
row, the interaction rows are mean-pooled, and a linear head plus sigmoid
yields the score. Gradients are derived by hand below (no autograd), and
the optimizer is AdamW written out explicitly; a central finite-difference
oracle (finite_difference_grad) exists to check the analytic gradients.
"""

from __future__ import annotations

import json
import math
import random
import struct
from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InputError, NumericError, TrainingError

PARAMS_MAGIC = b"TWONSCOR"
PARAMS_VERSION = 1

# Serialization and traversal order for the parameter tensors. Frozen:
# the binary params format depends on it.
TENSOR_NAMES = (
    "w_h1", "b_h1", "w_h2", "b_h2",
    "w_p1", "b_p1", "w_p2", "b_p2",
    "w_out", "b_out",
)


@dataclass
class ScorerParams:
    """Weights of the scorer; see TENSOR_NAMES for the canonical order."""

    d: int
    w_h1: np.ndarray
    b_h1: np.ndarray
    w_h2: np.ndarray
    b_h2: np.ndarray
    w_p1: np.ndarray
    b_p1: np.ndarray
    w_p2: np.ndarray
    b_p2: np.ndarray
    w_out: np.ndarray
    b_out: np.ndarray

    def __post_init__(self) -> None:
        d = self.d
        if d < 1:
            raise InputError(f"dimension must be >= 1, got {d}")
        expected = _shapes(d)
        for name in TENSOR_NAMES:
            arr = getattr(self, name)
            if arr.shape != expected[name]:
                raise InputError(
                    f"{name} has shape {arr.shape}, expected {expected[name]} for d={d}"
                )
            if not np.all(np.isfinite(arr)):
                raise InputError(f"{name} contains non-finite entries")

    def tensors(self) -> list[tuple[str, np.ndarray]]:
        return [(name, getattr(self, name)) for name in TENSOR_NAMES]

    def copy(self) -> ScorerParams:
        return ScorerParams(
            self.d, *(getattr(self, name).copy() for name in TENSOR_NAMES)
        )

    @classmethod
    def zeros(cls, d: int) -> ScorerParams:
        shapes = _shapes(d)
        return cls(d, *(np.zeros(shapes[name]) for name in TENSOR_NAMES))


def _shapes(d: int) -> dict[str, tuple[int, ...]]:
    return {
        "w_h1": (d, d), "b_h1": (d,), "w_h2": (d, d), "b_h2": (d,),
        "w_p1": (d, d), "b_p1": (d,), "w_p2": (d, d), "b_p2": (d,),
        "w_out": (d,), "b_out": (1,),
    }


def init_params(d: int, seed: int) -> ScorerParams:
    """Seeded uniform init in [-1/sqrt(d), +1/sqrt(d)] for every tensor."""
    if d < 1:
        raise InputError(f"dimension must be >= 1, got {d}")
    rng = np.random.default_rng(seed)
    bound = 1.0 / math.sqrt(d)
    shapes = _shapes(d)
    return ScorerParams(
        d, *(rng.uniform(-bound, bound, shapes[name]) for name in TENSOR_NAMES)
    )


@dataclass(frozen=True)
class LikelihoodExample:
    """One decision instance: did this user reply to this post?"""

    history: np.ndarray  # (n, d), one row per replied-to post embedding
    post: np.ndarray  # (d,)
    label: int

    def __post_init__(self) -> None:
        if self.label not in (0, 1):
            raise InputError(f"label must be 0 or 1, got {self.label!r}")
        if self.history.ndim != 2 or self.history.shape[0] < 1:
            raise InputError("history must be a (n, d) array with n >= 1")
        if self.post.ndim != 1 or self.post.shape[0] != self.history.shape[1]:
            raise InputError(
                f"post dimension {self.post.shape} does not match history "
                f"{self.history.shape}"
            )
        if not (np.all(np.isfinite(self.history)) and np.all(np.isfinite(self.post))):
            raise InputError("embeddings must be finite")


def _as_inputs(params: ScorerParams, history: np.ndarray, post: np.ndarray):
    h = np.asarray(history, dtype=np.float64)
    p = np.asarray(post, dtype=np.float64)
    if h.ndim != 2 or h.shape[0] < 1:
        raise InputError(f"history must be (n, d) with n >= 1, got shape {h.shape}")
    if p.ndim != 1:
        raise InputError(f"post must be a vector, got shape {p.shape}")
    if h.shape[1] != params.d or p.shape[0] != params.d:
        raise InputError(
            f"inputs have dimension {h.shape[1]}/{p.shape[0]}, params expect {params.d}"
        )
    if not (np.all(np.isfinite(h)) and np.all(np.isfinite(p))):
        raise InputError("inputs must be finite")
    return h, p


def _forward_cache(params: ScorerParams, h: np.ndarray, p: np.ndarray) -> dict:
    a1h = h @ params.w_h1 + params.b_h1
    r1h = np.maximum(a1h, 0.0)
    a2h = r1h @ params.w_h2 + params.b_h2
    hp = np.maximum(a2h, 0.0)

    a1p = p @ params.w_p1 + params.b_p1
    r1p = np.maximum(a1p, 0.0)
    a2p = r1p @ params.w_p2 + params.b_p2
    pp = np.maximum(a2p, 0.0)

    pooled = (hp * pp).mean(axis=0)
    z = float(params.w_out @ pooled + params.b_out[0])
    if not math.isfinite(z):
        raise NumericError("pre-sigmoid activation is non-finite")
    # Numerically stable on both tails.
    score = 0.5 * (1.0 + math.tanh(0.5 * z))
    return {
        "h": h, "p": p, "a1h": a1h, "r1h": r1h, "a2h": a2h, "hp": hp,
        "a1p": a1p, "r1p": r1p, "a2p": a2p, "pp": pp,
        "pooled": pooled, "z": z, "score": score,
    }


def forward(params: ScorerParams, history: np.ndarray, post: np.ndarray) -> float:
    """Score in (0, 1): the modeled probability that the user replies."""
    h, p = _as_inputs(params, history, post)
    return _forward_cache(params, h, p)["score"]


def _bce(z: float, label: int) -> float:
    # softplus(z) - y*z == -log sigmoid(z) for y=1, -log(1-sigmoid(z)) for y=0
    return float(np.logaddexp(0.0, z) - label * z)


def loss_and_grad(
    params: ScorerParams, batch: Sequence[LikelihoodExample]
) -> tuple[float, ScorerParams]:
    """Mean BCE over the batch and its gradient, accumulated in batch order.

    Derivation sketch, per example (y = label, s = sigmoid(z), n = rows):
      dL/dz = s - y
      dL/dpooled = (s - y) * w_out
      pooled = mean_rows(H' * p')  =>  dL/dH'[r] = dL/dpooled * p' / n
                                       dL/dp'    = dL/dpooled * mean_rows(H')
    and each branch is a plain two-layer backprop from there, with the
    ReLU mask taken on the pre-activations.
    """
    if not batch:
        raise InputError("batch must be non-empty")
    grads = ScorerParams.zeros(params.d)
    total = 0.0
    inv_b = 1.0 / len(batch)
    for ex in batch:
        h, p = _as_inputs(params, ex.history, ex.post)
        c = _forward_cache(params, h, p)
        total += _bce(c["z"], ex.label)

        n = h.shape[0]
        dz = (c["score"] - ex.label) * inv_b
        grads.w_out += dz * c["pooled"]
        grads.b_out += dz

        dpooled = dz * params.w_out
        # Every interaction row receives the same dpooled / n.
        dhp_row = dpooled * c["pp"] / n
        dhp = np.broadcast_to(dhp_row, c["hp"].shape)
        dpp = dpooled * c["hp"].mean(axis=0)

        da2h = dhp * (c["a2h"] > 0.0)
        grads.w_h2 += c["r1h"].T @ da2h
        grads.b_h2 += da2h.sum(axis=0)
        dr1h = da2h @ params.w_h2.T
        da1h = dr1h * (c["a1h"] > 0.0)
        grads.w_h1 += h.T @ da1h
        grads.b_h1 += da1h.sum(axis=0)

        da2p = dpp * (c["a2p"] > 0.0)
        grads.w_p2 += np.outer(c["r1p"], da2p)
        grads.b_p2 += da2p
        dr1p = da2p @ params.w_p2.T
        da1p = dr1p * (c["a1p"] > 0.0)
        grads.w_p1 += np.outer(p, da1p)
        grads.b_p1 += da1p

    return total * inv_b, grads


def batch_loss(params: ScorerParams, batch: Sequence[LikelihoodExample]) -> float:
    """Mean BCE via the forward pass alone; the FD oracle differentiates this."""
    if not batch:
        raise InputError("batch must be non-empty")
    total = 0.0
    for ex in batch:
        h, p = _as_inputs(params, ex.history, ex.post)
        total += _bce(_forward_cache(params, h, p)["z"], ex.label)
    return total / len(batch)


def finite_difference_grad(
    params: ScorerParams, batch: Sequence[LikelihoodExample], step: float = 1e-4
) -> ScorerParams:
    """Central-difference gradient of batch_loss, entry by entry.

    Independent of the analytic backward pass; exists to verify it.
    """
    probe = params.copy()
    grads = ScorerParams.zeros(params.d)
    for name in TENSOR_NAMES:
        tensor = getattr(probe, name)
        grad = getattr(grads, name)
        for idx in np.ndindex(*tensor.shape):
            original = tensor[idx]
            tensor[idx] = original + step
            plus = batch_loss(probe, batch)
            tensor[idx] = original - step
            minus = batch_loss(probe, batch)
            tensor[idx] = original
            grad[idx] = (plus - minus) / (2.0 * step)
    return grads


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.01
    weight_decay: float = 0.01
    epochs: int = 20
    batch_size: int = 32
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self) -> None:
        if self.epochs < 0:
            raise InputError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise InputError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr <= 0:
            raise InputError(f"lr must be > 0, got {self.lr}")

    def to_dict(self) -> dict[str, object]:
        return {
            "lr": self.lr, "weight_decay": self.weight_decay,
            "epochs": self.epochs, "batch_size": self.batch_size,
            "seed": self.seed, "beta1": self.beta1, "beta2": self.beta2,
            "eps": self.eps,
        }


@dataclass(frozen=True)
class TrainResult:
    params: ScorerParams
    epoch_losses: tuple[float, ...]


def train(dataset: Sequence[LikelihoodExample], config: TrainConfig) -> TrainResult:
    """AdamW on mean BCE, deterministic given the seed.

    Decoupled weight decay: the decay term is applied directly to the
    weights, outside the moment estimates. epochs=0 returns the seeded
    initialization untouched.
    """
    if not dataset:
        raise InputError("dataset must be non-empty")
    d = dataset[0].history.shape[1]
    for ex in dataset:
        if ex.history.shape[1] != d:
            raise InputError("dataset mixes embedding dimensions")
    params = init_params(d, config.seed)
    if config.epochs == 0:
        return TrainResult(params=params, epoch_losses=())

    m = ScorerParams.zeros(d)
    v = ScorerParams.zeros(d)
    t = 0
    order = list(range(len(dataset)))
    shuffle_rng = random.Random(config.seed)
    losses: list[float] = []

    for epoch in range(config.epochs):
        shuffle_rng.shuffle(order)
        epoch_total = 0.0
        for lo in range(0, len(order), config.batch_size):
            batch = [dataset[i] for i in order[lo : lo + config.batch_size]]
            loss, grads = loss_and_grad(params, batch)
            epoch_total += loss * len(batch)
            t += 1
            bc1 = 1.0 - config.beta1**t
            bc2 = 1.0 - config.beta2**t
            for name in TENSOR_NAMES:
                g = getattr(grads, name)
                m_t = getattr(m, name)
                v_t = getattr(v, name)
                m_t *= config.beta1
                m_t += (1.0 - config.beta1) * g
                v_t *= config.beta2
                v_t += (1.0 - config.beta2) * g * g
                update = (m_t / bc1) / (np.sqrt(v_t / bc2) + config.eps)
                theta = getattr(params, name)
                theta *= 1.0 - config.lr * config.weight_decay
                theta -= config.lr * update
        epoch_loss = epoch_total / len(dataset)
        if not math.isfinite(epoch_loss):
            raise TrainingError(
                f"training loss became non-finite at epoch {epoch}", epoch=epoch
            )
        losses.append(epoch_loss)

    return TrainResult(params=params, epoch_losses=tuple(losses))


@dataclass(frozen=True)
class ClassifierMetrics:
    f1: float
    precision: float
    recall: float
    accuracy: float

    def to_dict(self) -> dict[str, float]:
        return {
            "f1": self.f1, "precision": self.precision,
            "recall": self.recall, "accuracy": self.accuracy,
        }


def evaluate_classifier(
    params: ScorerParams,
    dataset: Sequence[LikelihoodExample],
    threshold: float = 0.5,
) -> ClassifierMetrics:
    """Confusion-matrix metrics at the threshold; score >= threshold is
    a positive prediction. Undefined ratios degrade to 0, never error."""
    if not dataset:
        raise InputError("dataset must be non-empty")
    tp = fp = fn = tn = 0
    for ex in dataset:
        predicted = forward(params, ex.history, ex.post) >= threshold
        if predicted and ex.label == 1:
            tp += 1
        elif predicted and ex.label == 0:
            fp += 1
        elif not predicted and ex.label == 1:
            fn += 1
        else:
            tn += 1
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = (
        2.0 * precision * recall / (precision + recall)
        if precision + recall
        else 0.0
    )
    accuracy = (tp + tn) / len(dataset)
    return ClassifierMetrics(f1=f1, precision=precision, recall=recall, accuracy=accuracy)


def save_params(
    params: ScorerParams,
    path: str | Path,
    *,
    config: Mapping[str, object] | None = None,
    loss_curve: Sequence[float] = (),
) -> None:
    """Write the binary params file plus its JSON sidecar ("<path>.json").

    Layout: magic, u32 version, u32 d (little-endian), then each tensor
    from TENSOR_NAMES as little-endian float64 in C order.
    """
    path = Path(path)
    blob = bytearray(struct.pack("<8sII", PARAMS_MAGIC, PARAMS_VERSION, params.d))
    for _, tensor in params.tensors():
        blob += np.ascontiguousarray(tensor, dtype="<f8").tobytes()
    path.write_bytes(bytes(blob))
    sidecar = {
        "d": params.d,
        "tensor_order": list(TENSOR_NAMES),
        "config": dict(config or {}),
        "loss_curve": [float(x) for x in loss_curve],
    }
    Path(str(path) + ".json").write_text(
        json.dumps(sidecar, indent=2) + "\n", encoding="utf-8"
    )


def load_params(path: str | Path) -> ScorerParams:
    """Read a params file written by save_params, validating the header."""
    raw = Path(path).read_bytes()
    header = struct.calcsize("<8sII")
    if len(raw) < header:
        raise InputError(f"{path}: too short to hold a params header")
    magic, version, d = struct.unpack_from("<8sII", raw)
    if magic != PARAMS_MAGIC:
        raise InputError(f"{path}: bad magic {magic!r}")
    if version != PARAMS_VERSION:
        raise InputError(f"{path}: unsupported version {version}")
    shapes = _shapes(d)
    expected = header + 8 * sum(
        int(np.prod(shapes[name])) for name in TENSOR_NAMES
    )
    if len(raw) != expected:
        raise InputError(f"{path}: expected {expected} bytes for d={d}, got {len(raw)}")
    offset = header
    tensors = []
    for name in TENSOR_NAMES:
        shape = shapes[name]
        count = int(np.prod(shape))
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=offset)
        tensors.append(arr.astype(np.float64).reshape(shape))
        offset += 8 * count
    return ScorerParams(d, *tensors)
