"""Central finite-difference checks of the hand-written adapter and encoder gradients."""

from __future__ import annotations

from typing import Callable

import numpy as np
import scipy.sparse as sp

from .adapter import AdapterParams, adapter_loss_and_grads
from .distill import EncoderInput, PointEncoderParams, Supervision, loss_and_grads

ADAPTER_SHAPES = [(d, h) for d in (4, 8, 16) for h in (8, 32)]
ENCODER_SHAPES = [(8, 4, 3), (12, 4, 4), (16, 8, 5)]  # (points, d, k)
ENCODER_MODES = ("ce", "cosine")


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """``||a - n|| / max(||a||, ||n||)``; zero when both vanish."""
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    return 0.0 if scale == 0 else float(np.linalg.norm(analytic - numeric) / scale)


def numeric_grad(f: Callable[[], float], x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central differences of ``f`` w.r.t. every entry of ``x`` (perturbed in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        orig = x[i]
        x[i] = orig + eps
        fp = f()
        x[i] = orig - eps
        fm = f()
        x[i] = orig
        g[i] = (fp - fm) / (2 * eps)
    return g


def _unit_rows(rng, k, d):
    b = rng.normal(size=(k, d))
    return b / np.linalg.norm(b, axis=1, keepdims=True)


def check_adapter(d: int, hidden: int, seed: int = 0, n: int = 12, k: int = 5, temperature: float = 0.1) -> dict:
    rng = np.random.default_rng(seed)
    params = AdapterParams.init(d, hidden, alpha=0.5, seed=seed)
    params.b1[:] = rng.normal(scale=0.1, size=hidden)
    params.b2[:] = rng.normal(scale=0.1, size=d)
    p = rng.normal(size=(n, d))
    labels = rng.integers(0, k, size=n)
    labels[0] = 255
    bank = _unit_rows(rng, k, d)
    _, grads = adapter_loss_and_grads(p, labels, params, bank, temperature)
    tensors = params.as_dict()
    errors = {}
    for name in ("W1", "b1", "W2", "b2"):
        num = numeric_grad(lambda: adapter_loss_and_grads(p, labels, params, bank, temperature)[0], tensors[name])
        errors[name] = relative_error(grads[name], num)
    return errors


def _encoder_case(n: int, d: int, k: int, mode: str, seed: int):
    rng = np.random.default_rng(seed)
    params = PointEncoderParams.init(d, pre_widths=(5, 4), post_widths=(6,), k=k, seed=seed)
    for name, w in params.weights.items():
        if name.endswith(".b"):
            w[:] = rng.normal(scale=0.1, size=w.shape)
    feats = rng.uniform(size=(n, 6))
    nbrs = np.stack([rng.choice(n, size=k, replace=False) for _ in range(n)])
    agg = sp.csr_matrix((np.full(n * k, 1.0 / k), (np.repeat(np.arange(n), k), nbrs.ravel())), shape=(n, n))
    inp = EncoderInput(feats, agg)
    valid = np.ones(n, dtype=bool)
    valid[0] = False
    if mode == "ce":
        labels = rng.integers(0, 4, size=n)
        labels[0] = 255
        sup = Supervision(inp, valid, labels=labels)
    else:
        sup = Supervision(inp, valid, target=rng.normal(size=(n, d)))
    return params, sup, _unit_rows(rng, 4, d)


def check_encoder(n: int, d: int, k: int, mode: str, seed: int = 0, temperature: float = 0.1) -> dict:
    params, sup, bank = _encoder_case(n, d, k, mode, seed)
    _, grads = loss_and_grads(sup, params, bank, temperature)
    errors = {}
    for name, w in params.weights.items():
        num = numeric_grad(lambda: loss_and_grads(sup, params, bank, temperature)[0], w)
        errors[name] = relative_error(grads[name], num)
    return errors


def run_suite(seeds=(0, 1, 2)) -> list:
    """Every shape in the suite; each entry reports the worst relative error over its tensors."""
    out = []
    for seed in seeds:
        for d, h in ADAPTER_SHAPES:
            err = check_adapter(d, h, seed)
            out.append({"model": "adapter", "d": d, "hidden": h, "seed": seed, "max_rel_error": max(err.values())})
        for n, d, k in ENCODER_SHAPES:
            for mode in ENCODER_MODES:
                err = check_encoder(n, d, k, mode, seed)
                out.append({"model": "encoder", "points": n, "d": d, "k": k, "loss": mode, "seed": seed,
                            "max_rel_error": max(err.values())})
    return out
