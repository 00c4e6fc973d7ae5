"""Open-vocabulary inference, segmentation metrics and report rendering."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .distill import PointEncoderParams, encode_points
from .labeling import cosine_logits
from .scene import IGNORE, PointCloud, TextEmbeddingBank


@dataclass(frozen=True)
class SegmentationResult:
    labels: np.ndarray
    logits: np.ndarray


@dataclass
class MetricsReport:
    class_names: tuple
    iou: np.ndarray  # K, nan where a class is absent from both GT and prediction
    acc: np.ndarray  # K, nan where a class is absent from GT
    miou: float
    macc: float
    confusion: np.ndarray  # K x K, rows = GT, columns = prediction
    num_scored: int

    def to_dict(self) -> dict:
        def clean(x):
            return None if np.isnan(x) else float(x)

        return {
            "mIoU": self.miou,
            "mAcc": self.macc,
            "num_scored": self.num_scored,
            "per_class": {
                n: {"iou": clean(i), "acc": clean(a)} for n, i, a in zip(self.class_names, self.iou, self.acc)
            },
            "confusion": self.confusion.tolist(),
            "class_names": list(self.class_names),
            "notes": "mIoU averages classes present in GT or prediction; mAcc averages classes present in GT; "
                     "GT points labeled IGNORE are not scored",
        }

    def to_markdown(self) -> str:
        lines = ["| class | IoU | Acc |", "|---|---|---|"]
        for n, i, a in zip(self.class_names, self.iou, self.acc):
            lines.append(f"| {n} | {_fmt(i)} | {_fmt(a)} |")
        lines.append(f"| **mean** | **{_fmt(self.miou)}** | **{_fmt(self.macc)}** |")
        return "\n".join(lines) + "\n"


def _fmt(x: float) -> str:
    return "-" if np.isnan(x) else f"{100 * x:.1f}"


def predict(f3d: np.ndarray, bank: TextEmbeddingBank) -> SegmentationResult:
    """Argmax of cosine logits against every bank class (no scene mask)."""
    logits = cosine_logits(f3d, bank)
    return SegmentationResult(labels=np.argmax(logits, axis=1), logits=logits)


def infer(cloud: PointCloud, encoder: PointEncoderParams, bank: TextEmbeddingBank) -> SegmentationResult:
    if encoder.out_dim != bank.dim:
        raise ValueError(f"encoder outputs d={encoder.out_dim} but bank has d={bank.dim}")
    return predict(encode_points(cloud, encoder), bank)


def confusion_matrix(pred: np.ndarray, gt: np.ndarray, K: int) -> np.ndarray:
    pred = np.asarray(pred, dtype=np.int64)
    gt = np.asarray(gt, dtype=np.int64)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction and GT lengths differ: {pred.shape} vs {gt.shape}")
    keep = gt != IGNORE
    if (gt[keep] < 0).any() or (gt[keep] >= K).any() or (pred[keep] < 0).any() or (pred[keep] >= K).any():
        raise ValueError(f"labels outside [0, {K})")
    return np.bincount(gt[keep] * K + pred[keep], minlength=K * K).reshape(K, K)


def metrics_from_confusion(conf: np.ndarray, class_names: Sequence[str]) -> MetricsReport:
    conf = np.asarray(conf, dtype=np.int64)
    total = int(conf.sum())
    if total == 0:
        raise ValueError("no scored points (every GT label is IGNORE)")
    tp = np.diag(conf).astype(np.float64)
    gt_count = conf.sum(axis=1).astype(np.float64)
    pred_count = conf.sum(axis=0).astype(np.float64)
    union = gt_count + pred_count - tp
    with np.errstate(invalid="ignore", divide="ignore"):
        iou = np.where(union > 0, tp / union, np.nan)
        acc = np.where(gt_count > 0, tp / gt_count, np.nan)
    return MetricsReport(
        class_names=tuple(class_names),
        iou=iou,
        acc=acc,
        miou=float(np.nanmean(iou)),
        macc=float(np.nanmean(acc)),
        confusion=conf,
        num_scored=total,
    )


def compute_metrics(pred, gt, K: int, class_names: Sequence[str] | None = None) -> MetricsReport:
    names = class_names if class_names is not None else [str(i) for i in range(K)]
    return metrics_from_confusion(confusion_matrix(pred, gt, K), names)


def evaluate(pairs: Sequence, K: int, class_names: Sequence[str]) -> MetricsReport:
    """Pool ``(pred, gt)`` pairs from several scenes into one report."""
    conf = np.zeros((K, K), dtype=np.int64)
    for pred, gt in pairs:
        conf += confusion_matrix(pred, gt, K)
    return metrics_from_confusion(conf, class_names)


def remap_labels(gt: np.ndarray, src_names: Sequence[str], dst_names: Sequence[str]) -> np.ndarray:
    """Re-index GT from one label set to another; classes missing from ``dst`` become IGNORE."""
    lut = np.full(max(len(src_names), IGNORE + 1), IGNORE, dtype=np.int64)
    for i, n in enumerate(src_names):
        if n in dst_names:
            lut[i] = list(dst_names).index(n)
    return lut[np.asarray(gt, dtype=np.int64)]


def cross_domain_eval(encoder: PointEncoderParams, scenes: Sequence, bank: TextEmbeddingBank) -> MetricsReport:
    """Evaluate a trained encoder on another domain's scenes and text bank."""
    if encoder.out_dim != bank.dim:
        raise ValueError(f"encoder outputs d={encoder.out_dim} but bank has d={bank.dim}")
    pairs = []
    for scene in scenes:
        gt = remap_labels(scene.cloud.gt, scene.class_names, bank.class_names)
        pairs.append((infer(scene.cloud, encoder, bank).labels, gt))
    return evaluate(pairs, bank.K, bank.class_names)


def ablation_markdown(table: dict) -> str:
    """Render ``{"rows": {row: {"mode":..., "miou": {seed: value}}}, "seeds": [...]}`` as markdown."""
    seeds = table["seeds"]
    head = "| row | mode | " + " | ".join(f"seed {s}" for s in seeds) + " | mean |"
    lines = [head, "|" + "---|" * (len(seeds) + 3)]
    for row, entry in table["rows"].items():
        vals = [entry["miou"][str(s)] for s in seeds]
        cells = " | ".join(f"{100 * v:.1f}" for v in vals)
        lines.append(f"| ({row}) | {entry['mode']} | {cells} | {100 * float(np.mean(vals)):.1f} |")
    return "\n".join(lines) + "\n"


def dump_json(obj, path) -> None:
    with open(path, "w") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")
