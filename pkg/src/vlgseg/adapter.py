"""Residual two-layer adapter over fused 2D embeddings.

    A = alpha * (W2 @ relu(W1 @ x + b1) + b2) + (1 - alpha) * x

trained with cross-entropy of cosine logits against pseudo labels.  The text
bank is an input only and is never updated.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .config import AdapterConfig
from .losses import cosine_ce
from .optim import Adam, check_finite, step_decay_lr
from .scene import IGNORE, TextEmbeddingBank
from .tensorio import PathLike, load_array, save_array

PARAM_NAMES = ("W1", "b1", "W2", "b2")


class CheckpointError(FileNotFoundError):
    pass


@dataclass
class AdapterParams:
    W1: np.ndarray  # h x d
    b1: np.ndarray  # h
    W2: np.ndarray  # d x h
    b2: np.ndarray  # d
    alpha: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        h, d = self.W1.shape
        if self.b1.shape != (h,) or self.W2.shape != (d, h) or self.b2.shape != (d,):
            raise ValueError("inconsistent adapter parameter shapes")

    @property
    def dim(self) -> int:
        return int(self.W1.shape[1])

    @property
    def hidden(self) -> int:
        return int(self.W1.shape[0])

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in PARAM_NAMES}

    def copy(self) -> "AdapterParams":
        return AdapterParams(**{k: v.copy() for k, v in self.as_dict().items()}, alpha=self.alpha)

    @classmethod
    def init(cls, dim: int, hidden: Optional[int] = None, alpha: float = 0.5, seed: int = 0) -> "AdapterParams":
        h = dim if hidden is None else hidden
        rng = np.random.default_rng(seed)
        return cls(
            W1=rng.normal(0.0, np.sqrt(2.0 / dim), size=(h, dim)),
            b1=np.zeros(h),
            W2=rng.normal(0.0, np.sqrt(1.0 / h), size=(dim, h)),
            b2=np.zeros(dim),
            alpha=alpha,
        )


def _forward(p: np.ndarray, params: AdapterParams):
    x = np.asarray(p, dtype=np.float64)
    pre = x @ params.W1.T + params.b1
    hid = np.maximum(pre, 0.0)
    mlp = hid @ params.W2.T + params.b2
    out = params.alpha * mlp + (1.0 - params.alpha) * x
    return out, (x, pre, hid)


def adapter_forward(p: np.ndarray, params: AdapterParams, valid=None) -> np.ndarray:
    """Apply the residual adapter row-wise; rows flagged invalid come out as zeros."""
    p = np.asarray(p)
    if p.ndim != 2 or p.shape[1] != params.dim:
        raise ValueError(f"adapter expects N x {params.dim} input, got {p.shape}")
    out, _ = _forward(p, params)
    if valid is not None:
        out[~np.asarray(valid, dtype=bool)] = 0.0
    return out


def specialization_loss(adapted: np.ndarray, bank: TextEmbeddingBank, labels: np.ndarray, temperature: float):
    """Cross-entropy of cosine logits against pseudo labels. Returns ``(loss, logits)``."""
    labels = np.asarray(labels)
    if not np.any(labels != IGNORE):
        raise ValueError("all points are IGNORE; nothing to supervise")
    loss, _, logits = cosine_ce(adapted, bank.normalized(), labels, temperature)
    return loss, logits


def adapter_loss_and_grads(p: np.ndarray, labels: np.ndarray, params: AdapterParams,
                           bank_normed: np.ndarray, temperature: float):
    """Loss and exact gradients w.r.t. W1, b1, W2, b2 for one batch."""
    out, (x, pre, hid) = _forward(p, params)
    loss, dout, _ = cosine_ce(out, bank_normed, labels, temperature)
    dmlp = params.alpha * dout
    grads = {"W2": dmlp.T @ hid, "b2": dmlp.sum(axis=0)}
    dpre = (dmlp @ params.W2) * (pre > 0)
    grads["W1"] = dpre.T @ x
    grads["b1"] = dpre.sum(axis=0)
    return loss, grads


def adapter_backward(p: np.ndarray, labels: np.ndarray, params: AdapterParams,
                     bank: TextEmbeddingBank, temperature: float) -> dict:
    return adapter_loss_and_grads(p, labels, params, bank.normalized(), temperature)[1]


@dataclass
class AdapterTrainResult:
    params: AdapterParams
    losses: list = field(default_factory=list)  # mean loss per epoch
    lrs: list = field(default_factory=list)


def train_adapter(samples: Sequence, bank: TextEmbeddingBank, config: AdapterConfig,
                  temperature: float, seed: int = 0) -> AdapterTrainResult:
    """Fit the adapter on ``samples``, a list of ``(P2D, pseudo_labels)`` per scene.

    Each step consumes ``config.batch`` scenes (IGNORE points dropped); the
    learning rate decays by ``config.decay`` every ``config.decay_every`` epochs.
    """
    data = []
    for emb, labels in samples:
        keep = np.asarray(labels) != IGNORE
        if keep.any():
            data.append((np.asarray(emb, dtype=np.float64)[keep], np.asarray(labels)[keep]))
    if not data:
        raise ValueError("no scene has labeled points")
    dim = data[0][0].shape[1]
    if dim != bank.dim:
        raise ValueError(f"embedding dimension {dim} does not match bank dimension {bank.dim}")

    rng = np.random.default_rng(seed)
    params = AdapterParams.init(dim, config.hidden, config.alpha, seed=int(rng.integers(2**31)))
    bank_normed = bank.normalized()
    weights = params.as_dict()
    opt = Adam(weights, lr=config.lr)
    result = AdapterTrainResult(params=params)
    step = 0
    for epoch in range(config.epochs):
        lr = step_decay_lr(config.lr, epoch, config.decay, config.decay_every)
        order = rng.permutation(len(data))
        epoch_loss, n_batches = 0.0, 0
        for start in range(0, len(order), config.batch):
            chunk = [data[i] for i in order[start : start + config.batch]]
            x = np.concatenate([c[0] for c in chunk])
            y = np.concatenate([c[1] for c in chunk])
            loss, grads = adapter_loss_and_grads(x, y, params, bank_normed, temperature)
            check_finite(loss, "adapter loss", step)
            opt.step(grads, lr=lr)
            epoch_loss += loss
            n_batches += 1
            step += 1
        result.losses.append(epoch_loss / n_batches)
        result.lrs.append(lr)
    return result


def _config_hash(meta: dict) -> str:
    return hashlib.sha256(json.dumps(meta, sort_keys=True).encode()).hexdigest()[:16]


def save_adapter(directory: PathLike, params: AdapterParams, meta: Optional[dict] = None) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for k, v in params.as_dict().items():
        save_array(d / f"{k}.tnsr", v.astype(np.float32))
    info = {"kind": "adapter", "alpha": params.alpha, "hidden": params.hidden, "dim": params.dim}
    info.update(meta or {})
    info["config_hash"] = _config_hash(info)
    (d / "meta.json").write_text(json.dumps(info, indent=2, sort_keys=True) + "\n")
    return d


def load_adapter(directory: PathLike) -> AdapterParams:
    d = Path(directory)
    meta_path = d / "meta.json"
    if not meta_path.exists():
        raise CheckpointError(f"adapter checkpoint not found at {d}")
    meta = json.loads(meta_path.read_text())
    arrays = {k: load_array(d / f"{k}.tnsr").astype(np.float64) for k in PARAM_NAMES}
    return AdapterParams(**arrays, alpha=float(meta["alpha"]))
