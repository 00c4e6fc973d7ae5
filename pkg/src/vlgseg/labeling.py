"""Zero-shot point classification against text embeddings and scene-mask filtering."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .fusion import FusedEmbeddings
from .scene import IGNORE, TextEmbeddingBank

MASKED = -np.inf


@dataclass(frozen=True)
class PseudoLabels:
    labels: np.ndarray  # N int64, IGNORE for uncovered points
    filtered_logits: np.ndarray  # N x K

    def coverage(self) -> float:
        return float(np.mean(self.labels != IGNORE)) if len(self.labels) else 0.0


def normalize_rows(x: np.ndarray, eps: float = 0.0) -> np.ndarray:
    """L2-normalise rows; zero rows stay zero."""
    x = np.asarray(x, dtype=np.float64)
    norm = np.linalg.norm(x, axis=1, keepdims=True)
    return np.divide(x, norm, out=np.zeros_like(x), where=norm > eps)


def cosine_logits(rows: np.ndarray, bank: TextEmbeddingBank) -> np.ndarray:
    rows = np.asarray(rows)
    if rows.shape[1] != bank.dim:
        raise ValueError(f"embedding dimension {rows.shape[1]} does not match bank dimension {bank.dim}")
    return normalize_rows(rows) @ bank.normalized().T


def class_logits(fused: FusedEmbeddings, bank: TextEmbeddingBank) -> np.ndarray:
    """Cosine similarity of every fused row against every class; invalid rows give zeros."""
    logits = cosine_logits(fused.embeddings, bank)
    logits[~fused.valid] = 0.0
    return logits


def apply_scene_mask(logits: np.ndarray, mask) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (logits.shape[1],):
        raise ValueError(f"mask has {mask.shape} entries, logits have K={logits.shape[1]}")
    if not mask.any():
        raise ValueError("scene mask has no present class")
    out = np.array(logits, dtype=np.float64, copy=True)
    out[:, ~mask] = MASKED
    return out


def pseudo_labels(filtered: np.ndarray, valid: np.ndarray) -> PseudoLabels:
    """Masked argmax (ties go to the lowest class index); uncovered points get IGNORE."""
    valid = np.asarray(valid, dtype=bool)
    labels = np.full(len(valid), IGNORE, dtype=np.int64)
    if valid.any():
        labels[valid] = np.argmax(filtered[valid], axis=1)
    return PseudoLabels(labels=labels, filtered_logits=filtered)


def label_scene(fused: FusedEmbeddings, bank: TextEmbeddingBank, mask: Optional[np.ndarray]) -> PseudoLabels:
    """Logits, optional scene-mask filter and argmax in one call; ``mask=None`` disables filtering."""
    logits = class_logits(fused, bank)
    if mask is not None:
        logits = apply_scene_mask(logits, mask)
    return pseudo_labels(logits, fused.valid)


def label_report(pl: PseudoLabels, class_names) -> dict:
    counts = np.bincount(pl.labels[pl.labels != IGNORE], minlength=len(class_names))
    return {
        "num_points": int(len(pl.labels)),
        "num_labeled": int((pl.labels != IGNORE).sum()),
        "coverage": pl.coverage(),
        "class_counts": {name: int(c) for name, c in zip(class_names, counts)},
    }
