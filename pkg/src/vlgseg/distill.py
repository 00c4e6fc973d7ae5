"""Reference point encoder and the 3D training stage.

The encoder maps per-point features (bounding-box-normalised xyz, rgb)
through an affine+ReLU stack, one k-NN mean-aggregation layer that
concatenates each point's feature with the mean over its k nearest
neighbours, and a second affine stack ending in a linear d-dim output.

Training modes (rows of the component ablation):

=========================  ====  =========================================
mode                       row   supervision
=========================  ====  =========================================
``direct_ce_unfiltered``   (a)   CE vs pseudo labels without scene mask
``soft_guidance_raw``      (b)   1 - cos vs fused 2D embeddings
``direct_ce_filtered``     (c)   CE vs scene-mask-filtered pseudo labels
``soft_guidance_adapter``  (d)   1 - cos vs frozen adapter output
=========================  ====  =========================================
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .adapter import AdapterParams, CheckpointError, _config_hash, adapter_forward
from .config import MODES, DistillConfig
from .knn import knn
from .losses import cosine_ce, soft_guidance_loss
from .optim import Adam, check_finite, poly_lr
from .scene import IGNORE, PointCloud, TextEmbeddingBank
from .tensorio import PathLike, load_array, save_array

IN_DIM = 6


@dataclass
class PointEncoderParams:
    weights: dict  # "pre0.W", "pre0.b", ..., "post0.W", ..., "out.W", "out.b"
    pre_widths: tuple
    post_widths: tuple
    k: int
    out_dim: int

    @classmethod
    def init(cls, out_dim: int, pre_widths=(32, 32), post_widths=(64,), k: int = 16,
             seed: int = 0) -> "PointEncoderParams":
        rng = np.random.default_rng(seed)
        weights = {}
        fan_in = IN_DIM
        for i, w in enumerate(pre_widths):
            weights[f"pre{i}.W"] = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(w, fan_in))
            weights[f"pre{i}.b"] = np.zeros(w)
            fan_in = w
        fan_in *= 2
        for i, w in enumerate(post_widths):
            weights[f"post{i}.W"] = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(w, fan_in))
            weights[f"post{i}.b"] = np.zeros(w)
            fan_in = w
        weights["out.W"] = rng.normal(0.0, np.sqrt(1.0 / fan_in), size=(out_dim, fan_in))
        weights["out.b"] = np.zeros(out_dim)
        return cls(weights, tuple(pre_widths), tuple(post_widths), int(k), int(out_dim))

    def copy(self) -> "PointEncoderParams":
        return PointEncoderParams({k: v.copy() for k, v in self.weights.items()},
                                  self.pre_widths, self.post_widths, self.k, self.out_dim)


@dataclass(frozen=True)
class EncoderInput:
    features: np.ndarray  # N x 6
    aggregator: sp.csr_matrix  # N x N, row i averages i's neighbours

    def astype(self, dtype) -> "EncoderInput":
        return EncoderInput(self.features.astype(dtype), self.aggregator.astype(dtype))


def point_features(cloud: PointCloud) -> np.ndarray:
    """xyz scaled per axis to [0, 1] over the scene bounding box, followed by rgb."""
    xyz = np.asarray(cloud.xyz, dtype=np.float64)
    lo = xyz.min(axis=0)
    ext = xyz.max(axis=0) - lo
    ext = np.where(ext > 0, ext, 1.0)
    return np.concatenate([(xyz - lo) / ext, np.asarray(cloud.rgb, dtype=np.float64)], axis=1)


def neighbor_mean_matrix(neighbors: np.ndarray, n: int) -> sp.csr_matrix:
    k = neighbors.shape[1]
    rows = np.repeat(np.arange(n), k)
    data = np.full(n * k, 1.0 / k)
    return sp.csr_matrix((data, (rows, neighbors.ravel())), shape=(n, n))


def prepare(cloud: PointCloud, k: int, method: str = "grid") -> EncoderInput:
    if len(cloud) < 1:
        raise ValueError("encoder needs at least one point")
    nbrs = knn(cloud.xyz, k, method=method)
    return EncoderInput(point_features(cloud), neighbor_mean_matrix(nbrs, len(cloud)))


def _forward(inp: EncoderInput, params: PointEncoderParams):
    w = params.weights
    h = inp.features
    pre_cache, post_cache = [], []
    for i in range(len(params.pre_widths)):
        z = h @ w[f"pre{i}.W"].T + w[f"pre{i}.b"]
        pre_cache.append((h, z))
        h = np.maximum(z, 0.0)
    h = np.concatenate([h, inp.aggregator @ h], axis=1)
    for i in range(len(params.post_widths)):
        z = h @ w[f"post{i}.W"].T + w[f"post{i}.b"]
        post_cache.append((h, z))
        h = np.maximum(z, 0.0)
    out = h @ w["out.W"].T + w["out.b"]
    return out, (h, pre_cache, post_cache)


def encode(inp: EncoderInput, params: PointEncoderParams) -> np.ndarray:
    return _forward(inp, params)[0]


def encode_points(cloud: PointCloud, params: PointEncoderParams, method: str = "grid") -> np.ndarray:
    """Per-point d-dim embeddings for every point of ``cloud``."""
    return encode(prepare(cloud, params.k, method), params)


def _dense_backward(prefix: str, cache, dh, w, grads):
    for i in reversed(range(len(cache))):
        h_in, z = cache[i]
        dz = dh * (z > 0)
        grads[f"{prefix}{i}.W"] = dz.T @ h_in
        grads[f"{prefix}{i}.b"] = dz.sum(axis=0)
        dh = dz @ w[f"{prefix}{i}.W"]
    return dh


def _backward(inp: EncoderInput, params: PointEncoderParams, dout: np.ndarray, state) -> dict:
    w = params.weights
    h_last, pre_cache, post_cache = state
    grads = {"out.W": dout.T @ h_last, "out.b": dout.sum(axis=0)}
    dh = _dense_backward("post", post_cache, dout @ w["out.W"], w, grads)
    width = dh.shape[1] // 2
    dh = dh[:, :width] + inp.aggregator.T @ dh[:, width:]
    _dense_backward("pre", pre_cache, dh, w, grads)
    return grads


@dataclass(frozen=True)
class Supervision:
    """Per-scene training target: ``target`` rows for cosine modes, ``labels`` for CE modes."""

    inp: EncoderInput
    valid: np.ndarray
    target: Optional[np.ndarray] = None
    labels: Optional[np.ndarray] = None

    def astype(self, dtype) -> "Supervision":
        target = None if self.target is None else self.target.astype(dtype)
        return Supervision(self.inp.astype(dtype), self.valid, target, self.labels)

    def count(self) -> int:
        if self.labels is not None:
            return int((self.labels != IGNORE).sum())
        nz = np.linalg.norm(self.target, axis=1) > 0
        return int((self.valid & nz).sum())


def loss_and_grads(sup: Supervision, params: PointEncoderParams, bank_normed: Optional[np.ndarray],
                   temperature: float):
    """Scene loss (mean over supervised points) and parameter gradients."""
    f3d, state = _forward(sup.inp, params)
    if sup.labels is not None:
        loss, dout, _ = cosine_ce(f3d, bank_normed, sup.labels, temperature)
    else:
        loss, _, dout = soft_guidance_loss(f3d, sup.target, sup.valid, with_grad=True)
    return loss, _backward(sup.inp, params, dout, state)


def build_supervision(mode: str, inp: EncoderInput, fused_embeddings: np.ndarray, valid: np.ndarray,
                      labels_filtered: np.ndarray, labels_unfiltered: np.ndarray,
                      adapter: Optional[AdapterParams]) -> Supervision:
    if mode == "soft_guidance_adapter":
        if adapter is None:
            raise CheckpointError("mode soft_guidance_adapter needs a trained adapter checkpoint")
        target = adapter_forward(fused_embeddings, adapter, valid)
        return Supervision(inp, valid, target=target)
    if mode == "soft_guidance_raw":
        return Supervision(inp, valid, target=np.asarray(fused_embeddings, dtype=np.float64))
    if mode == "direct_ce_filtered":
        return Supervision(inp, valid, labels=labels_filtered)
    if mode == "direct_ce_unfiltered":
        return Supervision(inp, valid, labels=labels_unfiltered)
    raise ValueError(f"unknown mode {mode!r}; choose from {MODES}")


@dataclass
class EncoderTrainResult:
    params: PointEncoderParams
    losses: list = field(default_factory=list)
    lrs: list = field(default_factory=list)


def train_3d(supervision: Sequence[Supervision], bank: TextEmbeddingBank, config: DistillConfig,
             temperature: float, seed: int = 0) -> EncoderTrainResult:
    """Adam with poly decay; each iteration averages the loss over ``config.batch`` scenes' points."""
    dtype = np.dtype(config.precision)
    sups = [s.astype(dtype) for s in supervision if s.count() > 0]
    if not sups:
        raise ValueError("no scene has supervised points")
    rng = np.random.default_rng(seed)
    params = PointEncoderParams.init(bank.dim, config.pre_widths, config.post_widths, config.k,
                                     seed=int(rng.integers(2**31)))
    params.weights = {k: v.astype(dtype) for k, v in params.weights.items()}
    bank_normed = bank.normalized().astype(dtype)
    opt = Adam(params.weights, lr=config.lr)
    result = EncoderTrainResult(params=params)
    queue: list = []
    for it in range(config.iters):
        batch = []
        while len(batch) < min(config.batch, len(sups)):
            if not queue:
                queue = list(rng.permutation(len(sups)))
            batch.append(queue.pop(0))
        counts = np.array([sups[i].count() for i in batch], dtype=np.float64)
        total = counts.sum()
        grads = {k: np.zeros_like(v) for k, v in params.weights.items()}
        loss = 0.0
        for i, c in zip(batch, counts):
            l_s, g_s = loss_and_grads(sups[i], params, bank_normed, temperature)
            loss += float(l_s) * c / total
            for k in grads:
                grads[k] += g_s[k] * dtype.type(c / total)
        check_finite(loss, f"train_3d loss ({config.mode})", it)
        lr = poly_lr(config.lr, it, config.iters, config.poly_power)
        opt.step(grads, lr=lr)
        result.losses.append(loss)
        result.lrs.append(lr)
    return result


def save_encoder(directory: PathLike, params: PointEncoderParams, meta: Optional[dict] = None) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for k, v in sorted(params.weights.items()):
        save_array(d / f"{k}.tnsr", v.astype(np.float32))
    info = {
        "kind": "point_encoder",
        "pre_widths": list(params.pre_widths),
        "post_widths": list(params.post_widths),
        "k": params.k,
        "out_dim": params.out_dim,
        "nonlinearity": "relu",
        "parameters": sorted(params.weights),
    }
    info.update(meta or {})
    info["config_hash"] = _config_hash(info)
    (d / "meta.json").write_text(json.dumps(info, indent=2, sort_keys=True) + "\n")
    return d


def load_encoder(directory: PathLike) -> PointEncoderParams:
    d = Path(directory)
    meta_path = d / "meta.json"
    if not meta_path.exists():
        raise CheckpointError(f"encoder checkpoint not found at {d}")
    meta = json.loads(meta_path.read_text())
    weights = {k: load_array(d / f"{k}.tnsr").astype(np.float64) for k in meta["parameters"]}
    return PointEncoderParams(weights, tuple(meta["pre_widths"]), tuple(meta["post_widths"]),
                              int(meta["k"]), int(meta["out_dim"]))
