"""Cosine-logit cross-entropy and the cosine soft-guidance loss, with gradients."""

from __future__ import annotations

import logging

import numpy as np

from .scene import IGNORE

logger = logging.getLogger(__name__)


def _float(x) -> np.ndarray:
    """Keep float32/float64 inputs as they are; promote anything else to float64."""
    x = np.asarray(x)
    return x if x.dtype in (np.float32, np.float64) else x.astype(np.float64)


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray, temperature: float = 1.0):
    """Mean ``-log softmax(logits / temperature)[label]`` over non-IGNORE rows.

    Returns ``(loss, dloss/dlogits)``.
    """
    labels = np.asarray(labels)
    keep = labels != IGNORE
    m = int(keep.sum())
    if m == 0:
        raise ValueError("cross-entropy needs at least one labeled point")
    z = _float(logits) / temperature
    z = z - z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    rows = np.flatnonzero(keep)
    loss = -logp[rows, labels[rows]].sum() / m
    grad = np.zeros_like(z)
    p = np.exp(logp[rows])
    p[np.arange(m), labels[rows]] -= 1.0
    grad[rows] = p / (m * temperature)
    return float(loss), grad


def cosine_ce(rows: np.ndarray, bank_normed: np.ndarray, labels: np.ndarray, temperature: float):
    """Cross-entropy on cosine logits ``normalize(rows) @ bank_normed.T``.

    Returns ``(loss, dloss/drows, logits)``.  Zero-norm rows get zero logits
    and zero gradient.
    """
    rows = _float(rows)
    bank_normed = bank_normed.astype(rows.dtype, copy=False)
    norm = np.linalg.norm(rows, axis=1, keepdims=True)
    nz = norm > 0
    unit = np.divide(rows, norm, out=np.zeros_like(rows), where=nz)
    logits = unit @ bank_normed.T
    loss, dlogits = softmax_cross_entropy(logits, labels, temperature)
    dunit = dlogits @ bank_normed
    radial = np.sum(unit * dunit, axis=1, keepdims=True)
    drows = np.divide(dunit - unit * radial, norm, out=np.zeros_like(rows), where=nz)
    return loss, drows, logits


def soft_guidance_loss(f3d: np.ndarray, target: np.ndarray, valid=None, with_grad: bool = False):
    """Mean of ``1 - cos(f3d[i], target[i])`` over valid points.

    Points where either row has zero norm are skipped and counted.  Returns
    ``(loss, skipped)`` or ``(loss, skipped, dloss/df3d)`` with ``with_grad``.
    """
    f = _float(f3d)
    a = _float(target).astype(f.dtype, copy=False)
    if f.shape != a.shape:
        raise ValueError(f"shape mismatch {f.shape} vs {a.shape}")
    valid = np.ones(len(f), dtype=bool) if valid is None else np.asarray(valid, dtype=bool)
    nf = np.linalg.norm(f, axis=1)
    na = np.linalg.norm(a, axis=1)
    use = valid & (nf > 0) & (na > 0)
    skipped = int((valid & ~use).sum())
    if skipped:
        logger.warning("soft guidance skipped %d zero-norm rows", skipped)
    m = int(use.sum())
    grad = np.zeros_like(f)
    if m == 0:
        return (0.0, skipped, grad) if with_grad else (0.0, skipped)
    fu = f[use] / nf[use, None]
    au = a[use] / na[use, None]
    cos = np.clip(np.sum(fu * au, axis=1), -1.0, 1.0)
    loss = float(np.sum(1.0 - cos) / m)
    if not with_grad:
        return loss, skipped
    grad[use] = -(au - cos[:, None] * fu) / (nf[use, None] * m)
    return loss, skipped, grad
