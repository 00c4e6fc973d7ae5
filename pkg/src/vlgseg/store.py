"""On-disk layout of intermediate stage artifacts under a run directory.

::

    <out>/fused/<scene>/{embeddings,valid,view_counts}.tnsr + stats.json
    <out>/pseudo/<scene>/{labels,labels_unfiltered}.tnsr + report.json
    <out>/adapter/                 adapter checkpoint
    <out>/encoder/<mode>/          encoder checkpoint
    <out>/infer/<mode>/<scene>/labels.tnsr
    <out>/eval/<mode>/metrics.{json,md}
    <out>/manifests/<command>.json run manifests
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .fusion import FusedEmbeddings
from .tensorio import PathLike, load_array, save_array


class MissingArtifactError(FileNotFoundError):
    """An upstream stage has not been run; the message names the command that produces it."""

    def __init__(self, what: str, path: PathLike, command: str):
        super().__init__(f"{what} not found at {path}; run `vlgseg {command}` first")
        self.command = command


def write_json(path: PathLike, obj) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    return p


def fused_dir(out: PathLike, scene: str) -> Path:
    return Path(out) / "fused" / scene


def pseudo_dir(out: PathLike, scene: str) -> Path:
    return Path(out) / "pseudo" / scene


def adapter_dir(out: PathLike) -> Path:
    return Path(out) / "adapter"


def encoder_dir(out: PathLike, mode: str) -> Path:
    return Path(out) / "encoder" / mode


def infer_dir(out: PathLike, mode: str, scene: str) -> Path:
    return Path(out) / "infer" / mode / scene


def save_fused(out: PathLike, scene: str, fused: FusedEmbeddings) -> Path:
    d = fused_dir(out, scene)
    d.mkdir(parents=True, exist_ok=True)
    save_array(d / "embeddings.tnsr", fused.embeddings)
    save_array(d / "valid.tnsr", fused.valid)
    save_array(d / "view_counts.tnsr", fused.view_counts)
    return d


def load_fused(out: PathLike, scene: str) -> FusedEmbeddings:
    d = fused_dir(out, scene)
    if not (d / "embeddings.tnsr").exists():
        raise MissingArtifactError(f"fused embeddings for scene {scene!r}", d, "fuse")
    return FusedEmbeddings(
        embeddings=load_array(d / "embeddings.tnsr").astype(np.float32),
        valid=load_array(d / "valid.tnsr").astype(bool),
        view_counts=load_array(d / "view_counts.tnsr").astype(np.int64),
    )


def save_pseudo(out: PathLike, scene: str, filtered: np.ndarray, unfiltered: np.ndarray) -> Path:
    d = pseudo_dir(out, scene)
    d.mkdir(parents=True, exist_ok=True)
    save_array(d / "labels.tnsr", filtered)
    save_array(d / "labels_unfiltered.tnsr", unfiltered)
    return d


def load_pseudo(out: PathLike, scene: str) -> tuple:
    """Returns ``(filtered, unfiltered)`` label arrays."""
    d = pseudo_dir(out, scene)
    if not (d / "labels.tnsr").exists():
        raise MissingArtifactError(f"pseudo labels for scene {scene!r}", d, "pseudo")
    return (load_array(d / "labels.tnsr").astype(np.int64),
            load_array(d / "labels_unfiltered.tnsr").astype(np.int64))


def load_predictions(out: PathLike, mode: str, scene: str) -> np.ndarray:
    p = infer_dir(out, mode, scene) / "labels.tnsr"
    if not p.exists():
        raise MissingArtifactError(f"predictions for scene {scene!r} (mode {mode})", p, "infer")
    return load_array(p).astype(np.int64)
