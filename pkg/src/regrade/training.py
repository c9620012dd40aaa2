"""Description-supervised training of the image encoder.

Supervision is indirect: the only trainable path is image -> embedding,
scored against frozen text embeddings. The target vector stacks a one-hot
grade with binary lesion flags and is L1-normalized, so multi-label images
split their probability mass. Only positive entries contribute to the loss;
absent lesions exert no gradient.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from . import encoder as enc
from .errors import InvalidInputError, MissingArtifactError, TrainingDivergedError
from .seeds import make_rng
from .textenc import N_CLASSES, N_GRADES, N_LESIONS, TextEmbeddings

CHECKPOINT_VERSION = "twlr-ckpt-1"
TAU_FLOOR = 1e-3


# ---------------------------------------------------------------- targets


def build_target(grade: int, lesion_flags) -> np.ndarray:
    """9-vector: one-hot grade followed by 0/1 lesion flags."""
    flags = np.asarray(lesion_flags)
    if not 0 <= int(grade) < N_GRADES:
        raise InvalidInputError(f"grade {grade} out of range")
    if flags.shape != (N_LESIONS,) or not np.isin(flags, (0, 1)).all():
        raise InvalidInputError("lesion flags must be four 0/1 values")
    y = np.zeros(N_CLASSES)
    y[int(grade)] = 1.0
    y[N_GRADES:] = flags
    return y


def normalize_target(y: np.ndarray) -> np.ndarray:
    total = y.sum()
    if total <= 0:
        raise InvalidInputError("target vector has no positive entries")
    return y / total


# ---------------------------------------------------------------- loss


def probability_rows(scores: np.ndarray, tau: float) -> np.ndarray:
    """Per-sample heads: softmax over grade scores, sigmoid over lesion scores."""
    s = np.asarray(scores, dtype=np.float64)
    logits = tau * s[:, :N_GRADES]
    logits = logits - logits.max(axis=1, keepdims=True)
    eg = np.exp(logits)
    pg = eg / eg.sum(axis=1, keepdims=True)
    pl = expit(tau * s[:, N_GRADES:])
    return np.concatenate([pg, pl], axis=1)


def semantic_loss(probs: np.ndarray, targets: np.ndarray) -> float:
    """Mean weighted cross-entropy against L1-normalized targets."""
    probs = np.asarray(probs, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if probs.shape != targets.shape or probs.ndim != 2 or probs.shape[1] != N_CLASSES:
        raise InvalidInputError(
            f"probs {probs.shape} and targets {targets.shape} must both be (B,9)"
        )
    weights = targets / targets.sum(axis=1, keepdims=True)
    logp = np.log(np.maximum(probs, enc.PROB_EPS))
    return float(-(weights * logp).sum(axis=1).mean())


def loss_and_grads(
    images: np.ndarray,
    targets: np.ndarray,
    params: enc.EncoderParams,
    text: TextEmbeddings,
):
    """Loss plus gradients for every tensor in named_tensors(params)."""
    emb, cache = enc.forward_batch(images, params)
    rows = text.all_rows
    scores = emb @ rows.T  # (B, 9)
    tau = float(params.tau_temp)
    probs = probability_rows(scores, tau)
    targets = np.asarray(targets, dtype=np.float64)
    loss = semantic_loss(probs, targets)

    b = scores.shape[0]
    weights = targets / targets.sum(axis=1, keepdims=True)
    clipped = np.maximum(probs, enc.PROB_EPS)
    dprobs = np.where(probs >= enc.PROB_EPS, -weights / clipped, 0.0) / b

    pg = probs[:, :N_GRADES]
    dlogit_g = pg * (dprobs[:, :N_GRADES] - (dprobs[:, :N_GRADES] * pg).sum(axis=1, keepdims=True))
    pl = probs[:, N_GRADES:]
    dlogit_l = dprobs[:, N_GRADES:] * pl * (1.0 - pl)
    dlogits = np.concatenate([dlogit_g, dlogit_l], axis=1)

    dscores = tau * dlogits
    dtau = float((dlogits * scores).sum())
    demb = dscores @ rows
    grads, _ = enc.backward_batch(demb, params, cache)
    grads["tau_temp"] = np.array(dtau)
    return loss, grads


# ---------------------------------------------------------------- training


@dataclass
class TrainConfig:
    epochs: int = 40
    batch_size: int = 16
    learning_rate: float = 0.05
    seed: int = 0
    optimizer: str = "sgd"  # "sgd" (fixed lr) | "adam" (adaptive steps)
    augment: str = "off"  # "off" | "basic"
    warmup_epochs: int = 0  # epochs trained plain before augmentation turns on
    divergence_factor: float = 1e3

    def __post_init__(self) -> None:
        if self.epochs < 0 or self.batch_size < 1 or self.learning_rate <= 0:
            raise InvalidInputError("epochs >= 0, batch_size >= 1, learning_rate > 0 required")
        if self.optimizer not in ("sgd", "adam"):
            raise InvalidInputError(f"unknown optimizer {self.optimizer!r}")
        if self.augment not in ("off", "basic"):
            raise InvalidInputError(f"unknown augment mode {self.augment!r}")
        if self.warmup_epochs < 0:
            raise InvalidInputError("warmup_epochs must be >= 0")


class _Adam:
    """Standard Adam with bias correction; state keyed by tensor name."""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def update(self, tensors: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.step += 1
        bc1 = 1.0 - self.beta1**self.step
        bc2 = 1.0 - self.beta2**self.step
        for name, grad in grads.items():
            m = self.m.setdefault(name, np.zeros_like(grad))
            v = self.v.setdefault(name, np.zeros_like(grad))
            m += (1.0 - self.beta1) * (grad - m)
            v += (1.0 - self.beta2) * (grad * grad - v)
            tensors[name] -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


@dataclass
class TrainHistory:
    initial_loss: float
    epoch_losses: list[float] = field(default_factory=list)

    @property
    def final_loss(self) -> float:
        return self.epoch_losses[-1] if self.epoch_losses else self.initial_loss


def _augment_one(image: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    out = image.astype(np.float64)
    if rng.random() < 0.5:
        out = out[:, ::-1, :]
    out = np.rot90(out, k=int(rng.integers(4)), axes=(0, 1))
    out = np.clip(out * rng.uniform(0.9, 1.1), 0.0, 255.0)
    return out


def mean_loss(images, targets, params, text) -> float:
    emb, _ = enc.forward_batch(images, params)
    probs = probability_rows(emb @ text.all_rows.T, float(params.tau_temp))
    return semantic_loss(probs, np.asarray(targets, dtype=np.float64))


def train(
    images: np.ndarray,
    targets: np.ndarray,
    params: enc.EncoderParams,
    text: TextEmbeddings,
    config: TrainConfig,
):
    """Mini-batch SGD; returns (new params, TrainHistory). The input params
    object is never mutated. Zero epochs returns an identical copy."""
    images = np.asarray(images)
    targets = np.asarray(targets, dtype=np.float64)
    if len(images) != len(targets) or len(images) == 0:
        raise InvalidInputError("need a non-empty, aligned image/target set")

    params = enc.clone_params(params)
    tensors = enc.named_tensors(params)
    history = TrainHistory(initial_loss=mean_loss(images, targets, params, text))
    limit = config.divergence_factor * max(history.initial_loss, 1.0)
    adam = _Adam(config.learning_rate) if config.optimizer == "adam" else None

    for epoch in range(config.epochs):
        order = make_rng(config.seed, "shuffle", epoch).permutation(len(images))
        epoch_losses = []
        augmenting = config.augment == "basic" and epoch >= config.warmup_epochs
        for start in range(0, len(order), config.batch_size):
            idx = order[start : start + config.batch_size]
            if augmenting:
                batch = np.stack(
                    [_augment_one(images[i], make_rng(config.seed, "augment", epoch, int(i))) for i in idx]
                )
            else:
                batch = images[idx]
            loss, grads = loss_and_grads(batch, targets[idx], params, text)
            if not np.isfinite(loss) or loss > limit:
                raise TrainingDivergedError(epoch, loss)
            epoch_losses.append(loss)
            if adam is not None:
                adam.update(tensors, grads)
            else:
                for name, grad in grads.items():
                    tensors[name] -= config.learning_rate * grad
            if float(params.tau_temp) < TAU_FLOOR:
                params.tau_temp[...] = TAU_FLOOR
        history.epoch_losses.append(float(np.mean(epoch_losses)))
    return params, history


# ---------------------------------------------------------------- checkpoints


def save_checkpoint(params: enc.EncoderParams, path) -> None:
    """Single-file container: one JSON header line, then raw little-endian
    float64 tensor bytes in header order. Byte-identical for equal params."""
    tensors = enc.named_tensors(params)
    header = {
        "version": CHECKPOINT_VERSION,
        "meta": {
            "patch_size": params.patch_size,
            "dim": params.dim,
            "n_layers": params.n_layers,
            "n_heads": params.n_heads,
            "image_size": params.image_size,
            "tau_temp": float(params.tau_temp),
        },
        "tensors": [
            {"name": name, "shape": list(arr.shape)} for name, arr in tensors.items()
        ],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8") + b"\n"
    blob += b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in tensors.values())
    Path(path).write_bytes(blob)


def load_checkpoint(path) -> enc.EncoderParams:
    path = Path(path)
    if not path.is_file():
        raise MissingArtifactError(f"checkpoint not found: {path}")
    raw = path.read_bytes()
    nl = raw.index(b"\n")
    header = json.loads(raw[:nl].decode("utf-8"))
    if header.get("version") != CHECKPOINT_VERSION:
        raise InvalidInputError(f"unsupported checkpoint version {header.get('version')!r}")
    meta = header["meta"]

    counts = [
        int(np.prod(entry["shape"])) if entry["shape"] else 1 for entry in header["tensors"]
    ]
    expected = nl + 1 + 8 * sum(counts)
    if len(raw) != expected:
        raise InvalidInputError(
            f"checkpoint payload length mismatch: {len(raw)} bytes, expected {expected}"
        )

    arrays: dict[str, np.ndarray] = {}
    offset = nl + 1
    for entry, count in zip(header["tensors"], counts):
        shape = tuple(entry["shape"])
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=offset)
        offset += count * 8
        arrays[entry["name"]] = arr.reshape(shape).astype(np.float64)

    layers = []
    for i in range(meta["n_layers"]):
        fields = {
            k: arrays[f"layers.{i}.{k}"]
            for k in ("ln1_g", "ln1_b", "wq", "bq", "wk", "bk", "wv", "bv",
                      "wo", "bo", "ln2_g", "ln2_b", "w1", "b1", "w2", "b2")
        }
        layers.append(enc.LayerParams(**fields))
    return enc.EncoderParams(
        patch_size=meta["patch_size"],
        dim=meta["dim"],
        n_heads=meta["n_heads"],
        image_size=meta["image_size"],
        w_patch=arrays["w_patch"],
        e_pos=arrays["e_pos"],
        z_cls=arrays["z_cls"],
        layers=layers,
        tau_temp=arrays["tau_temp"].reshape(()),
    )
