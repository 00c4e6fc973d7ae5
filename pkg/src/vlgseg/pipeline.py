"""In-memory orchestration of the stages, shared by the CLI and the ablation harness."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .adapter import AdapterParams, AdapterTrainResult, train_adapter
from .config import ABLATION_ROWS, PipelineConfig
from .distill import EncoderInput, EncoderTrainResult, PointEncoderParams, build_supervision, prepare, train_3d
from .evalkit import MetricsReport, evaluate, infer
from .fusion import FusedEmbeddings, fuse
from .labeling import PseudoLabels, label_scene
from .scene import Scene, TextEmbeddingBank

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PreparedScene:
    scene: Scene
    fused: FusedEmbeddings
    filtered: PseudoLabels
    unfiltered: PseudoLabels
    inp: EncoderInput


def prepare_scene(scene: Scene, bank: TextEmbeddingBank, config: PipelineConfig) -> PreparedScene:
    if tuple(scene.class_names) != tuple(bank.class_names):
        raise ValueError(f"scene {scene.name} class list differs from the text bank")
    fused = fuse(scene.cloud, scene.views, config.geometry.tau)
    return PreparedScene(
        scene=scene,
        fused=fused,
        filtered=label_scene(fused, bank, scene.scene_mask()),
        unfiltered=label_scene(fused, bank, None),
        inp=prepare(scene.cloud, config.distill.k),
    )


def fit_adapter(prepared: Sequence[PreparedScene], bank: TextEmbeddingBank, config: PipelineConfig,
                seed: Optional[int] = None) -> AdapterTrainResult:
    samples = [(p.fused.embeddings, p.filtered.labels) for p in prepared]
    return train_adapter(samples, bank, config.adapter, config.labeling.temperature,
                         seed=config.seed if seed is None else seed)


def fit_encoder(prepared: Sequence[PreparedScene], bank: TextEmbeddingBank, config: PipelineConfig,
                mode: str, adapter: Optional[AdapterParams] = None, seed: Optional[int] = None) -> EncoderTrainResult:
    sups = [
        build_supervision(mode, p.inp, p.fused.embeddings, p.fused.valid, p.filtered.labels,
                          p.unfiltered.labels, adapter)
        for p in prepared
    ]
    return train_3d(sups, bank, config.distill, config.labeling.temperature,
                    seed=config.seed if seed is None else seed)


def evaluate_encoder(encoder: PointEncoderParams, scenes: Sequence[Scene], bank: TextEmbeddingBank) -> MetricsReport:
    pairs = [(infer(s.cloud, encoder, bank).labels, s.cloud.gt) for s in scenes]
    return evaluate(pairs, bank.K, bank.class_names)


@dataclass
class ModeRun:
    mode: str
    encoder: PointEncoderParams
    metrics: MetricsReport
    losses: list


@dataclass
class SeedRun:
    seed: int
    adapter: Optional[AdapterParams]
    adapter_losses: list
    modes: dict  # row letter -> ModeRun


def run_seed(train: Sequence[Scene], test: Sequence[Scene], bank: TextEmbeddingBank, config: PipelineConfig,
             seed: int, rows: Sequence[str] = tuple(ABLATION_ROWS)) -> SeedRun:
    """Train every requested ablation row on one suite; all rows share the same seed."""
    prepared = [prepare_scene(s, bank, config) for s in train]
    adapter, adapter_losses = None, []
    if any(ABLATION_ROWS[r] == "soft_guidance_adapter" for r in rows):
        res = fit_adapter(prepared, bank, config, seed=seed)
        adapter, adapter_losses = res.params, res.losses
    out = {}
    for row in rows:
        mode = ABLATION_ROWS[row]
        res = fit_encoder(prepared, bank, config, mode, adapter, seed=seed)
        metrics = evaluate_encoder(res.params, test, bank)
        logger.info("seed %d row (%s) %s: mIoU %.4f", seed, row, mode, metrics.miou)
        out[row] = ModeRun(mode, res.params, metrics, res.losses)
    return SeedRun(seed, adapter, adapter_losses, out)


def run_ablation(suite_factory: Callable, seeds: Sequence[int], config: PipelineConfig,
                 rows: Sequence[str] = tuple(ABLATION_ROWS), on_seed: Optional[Callable] = None) -> dict:
    """Run rows (a)-(d) for each seed; ``suite_factory(seed)`` returns ``(train, test, bank)``."""
    table = {"seeds": [int(s) for s in seeds],
             "rows": {r: {"mode": ABLATION_ROWS[r], "miou": {}, "macc": {}} for r in rows}}
    for seed in seeds:
        train, test, bank = suite_factory(seed)
        run = run_seed(train, test, bank, config, seed, rows)
        for r, m in run.modes.items():
            table["rows"][r]["miou"][str(seed)] = m.metrics.miou
            table["rows"][r]["macc"][str(seed)] = m.metrics.macc
        if on_seed is not None:
            on_seed(run)
    for r, entry in table["rows"].items():
        entry["mean_miou"] = float(np.mean(list(entry["miou"].values())))
    return table
