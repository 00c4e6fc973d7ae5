"""Scene containers and the JSON scene manifest.

Manifest schema (paths relative to the manifest's directory)::

    {
      "points_file": "points.tnsr",          # N x 6 f32: xyz (m), rgb in [0, 1]
      "gt_labels_file": "gt.tnsr",           # optional, N i32, IGNORE = 255
      "class_names": ["floor", "wall", ...], # K ordered names
      "scene_labels": ["floor", ...],        # classes present in the scene
      "views": [
        {
          "embedding_file": "view0_emb.tnsr",  # H x W x d f32
          "intrinsics": [[fx, 0, cx], [0, fy, cy], [0, 0, 1]],
          "extrinsics": [[...4x4 world-to-camera...]],
          "depth_file": "view0_depth.tnsr"     # optional, H x W f32 metres
        }
      ]
    }
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .geometry import CameraPose
from .tensorio import PathLike, load_array, save_array

IGNORE = 255


class SceneError(ValueError):
    """Malformed or inconsistent scene inputs."""


@dataclass(frozen=True)
class PointCloud:
    xyz: np.ndarray
    rgb: np.ndarray
    gt: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self.xyz)

    @property
    def features(self) -> np.ndarray:
        return np.concatenate([self.xyz, self.rgb], axis=1)


@dataclass(frozen=True)
class View:
    embedding: np.ndarray  # H x W x d
    camera: CameraPose
    depth: Optional[np.ndarray] = None

    @property
    def dim(self) -> int:
        return int(self.embedding.shape[2])


@dataclass(frozen=True)
class Scene:
    name: str
    cloud: PointCloud
    views: tuple
    scene_labels: tuple
    class_names: tuple

    def scene_mask(self) -> np.ndarray:
        present = set(self.scene_labels)
        return np.array([c in present for c in self.class_names], dtype=bool)

    @property
    def dim(self) -> int:
        return self.views[0].dim if self.views else 0


@dataclass(frozen=True)
class TextEmbeddingBank:
    class_names: tuple
    embeddings: np.ndarray  # K x d

    def __post_init__(self):
        names = tuple(self.class_names)
        emb = np.asarray(self.embeddings, dtype=np.float64)
        object.__setattr__(self, "class_names", names)
        object.__setattr__(self, "embeddings", emb)
        if len(set(names)) != len(names):
            raise SceneError("duplicate class names in text bank")
        if emb.ndim != 2 or emb.shape[0] != len(names):
            raise SceneError(f"bank has {len(names)} names but embedding shape {emb.shape}")
        if np.any(np.linalg.norm(emb, axis=1) == 0):
            raise SceneError("text bank contains a zero-norm row")

    @property
    def K(self) -> int:
        return len(self.class_names)

    @property
    def dim(self) -> int:
        return int(self.embeddings.shape[1])

    def normalized(self) -> np.ndarray:
        return self.embeddings / np.linalg.norm(self.embeddings, axis=1, keepdims=True)

    def subset(self, names: Sequence[str]) -> "TextEmbeddingBank":
        idx = [self.class_names.index(n) for n in names]
        return TextEmbeddingBank(tuple(names), self.embeddings[idx])


def save_bank(path: PathLike, bank: TextEmbeddingBank) -> None:
    """Write ``<path>`` (K x d tensor) plus the ``<path>.json`` name sidecar."""
    path = Path(path)
    save_array(path, bank.embeddings.astype(np.float32))
    sidecar = path.with_suffix(path.suffix + ".json")
    sidecar.write_text(json.dumps({"class_names": list(bank.class_names)}, indent=2) + "\n")


def load_bank(path: PathLike) -> TextEmbeddingBank:
    path = Path(path)
    sidecar = path.with_suffix(path.suffix + ".json")
    if not sidecar.exists():
        raise SceneError(f"missing class-name sidecar {sidecar}")
    names = json.loads(sidecar.read_text())["class_names"]
    return TextEmbeddingBank(tuple(names), load_array(path))


def _read(base: Path, rel: str, what: str) -> np.ndarray:
    p = base / rel
    if not p.exists():
        raise SceneError(f"{what} file not found: {p}")
    return load_array(p)


def load_scene(manifest_path: PathLike) -> Scene:
    """Load and validate a scene manifest and every tensor it references."""
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise SceneError(f"manifest not found: {manifest_path}")
    try:
        m = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise SceneError(f"invalid manifest JSON {manifest_path}: {exc}") from exc
    base = manifest_path.parent

    class_names = tuple(m["class_names"])
    if len(set(class_names)) != len(class_names):
        raise SceneError("duplicate entries in class_names")
    scene_labels = tuple(m["scene_labels"])
    unknown = [s for s in scene_labels if s not in class_names]
    if unknown:
        raise SceneError(f"scene labels not in class_names: {unknown}")

    pts = _read(base, m["points_file"], "points")
    if pts.ndim != 2 or pts.shape[1] != 6:
        raise SceneError(f"points tensor must be N x 6, got {pts.shape}")
    pts = pts.astype(np.float64)
    gt = None
    if m.get("gt_labels_file"):
        gt = _read(base, m["gt_labels_file"], "gt labels").astype(np.int64)
        if gt.shape != (len(pts),):
            raise SceneError(f"gt labels shape {gt.shape} does not match N={len(pts)}")
        bad = (gt != IGNORE) & ((gt < 0) | (gt >= len(class_names)))
        if bad.any():
            raise SceneError(f"{int(bad.sum())} gt labels outside [0, K) and not IGNORE")

    views = []
    dim = None
    for i, rec in enumerate(m["views"]):
        emb = _read(base, rec["embedding_file"], f"view {i} embedding")
        if emb.ndim != 3:
            raise SceneError(f"view {i} embedding must be H x W x d, got {emb.shape}")
        if dim is None:
            dim = emb.shape[2]
        elif emb.shape[2] != dim:
            raise SceneError(f"embedding dimension mismatch: view {i} has d={emb.shape[2]}, expected {dim}")
        H, W = emb.shape[:2]
        depth = None
        if rec.get("depth_file"):
            depth = _read(base, rec["depth_file"], f"view {i} depth").astype(np.float64)
            if depth.shape != (H, W):
                raise SceneError(f"view {i} depth shape {depth.shape} != embedding {(H, W)}")
        try:
            cam = CameraPose(np.array(rec["intrinsics"]), np.array(rec["extrinsics"]), W, H)
        except ValueError as exc:
            raise SceneError(f"view {i}: {exc}") from exc
        views.append(View(embedding=emb, camera=cam, depth=depth))

    cloud = PointCloud(xyz=pts[:, :3].copy(), rgb=pts[:, 3:].copy(), gt=gt)
    name = m.get("name") or manifest_path.parent.name
    return Scene(name=name, cloud=cloud, views=tuple(views), scene_labels=scene_labels, class_names=class_names)


def save_scene(directory: PathLike, scene: Scene) -> Path:
    """Write a scene as a manifest plus tensor files; returns the manifest path."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    save_array(d / "points.tnsr", scene.cloud.features.astype(np.float32))
    manifest = {"name": scene.name, "points_file": "points.tnsr"}
    if scene.cloud.gt is not None:
        save_array(d / "gt.tnsr", scene.cloud.gt.astype(np.int32))
        manifest["gt_labels_file"] = "gt.tnsr"
    manifest["class_names"] = list(scene.class_names)
    manifest["scene_labels"] = list(scene.scene_labels)
    records = []
    for i, view in enumerate(scene.views):
        rec = {
            "embedding_file": f"view{i}_emb.tnsr",
            "intrinsics": view.camera.intrinsics.tolist(),
            "extrinsics": view.camera.world_to_camera.tolist(),
        }
        save_array(d / rec["embedding_file"], view.embedding.astype(np.float32))
        if view.depth is not None:
            rec["depth_file"] = f"view{i}_depth.tnsr"
            save_array(d / rec["depth_file"], view.depth.astype(np.float32))
        records.append(rec)
    manifest["views"] = records
    path = d / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path
