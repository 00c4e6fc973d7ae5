"""Seeded synthetic indoor scenes with exact geometry.

A scene is an axis-aligned room (floor and four walls carry points, the
ceiling only occludes) holding axis-aligned box objects.  Cameras sit on a
ring looking inward.  Every pixel is ray-cast against the geometry: its depth
is exact and its embedding is the class prototype of the surface it hits plus
gaussian noise.  Text embeddings are the prototypes themselves, so the
generator doubles as the ground-truth oracle for the whole pipeline.

Prototypes and colours are functions of the class *name* (through a fixed
vocabulary), so two suites that share a class name share its embedding and
appearance.  Optional ``confusion`` entries ``[cls, other, w]`` render ``cls``
surfaces as ``normalize((1 - w) * proto[cls] + w * proto[other])``, imitating
a vision-language model that mistakes ``cls`` for ``other``.
"""

from __future__ import annotations

import dataclasses
import json
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .geometry import CameraPose, look_at
from .scene import PointCloud, Scene, TextEmbeddingBank, View, save_bank, save_scene
from .tensorio import PathLike

STRUCTURE = ("floor", "wall")
VOCABULARY = (
    "floor", "wall", "table", "chair", "cabinet", "sofa", "bed", "bookshelf",
    "door", "window", "desk", "sink", "board", "clutter", "column", "beam",
)
PALETTE = {
    "floor": (0.55, 0.45, 0.35),
    "wall": (0.85, 0.85, 0.80),
    "table": (0.60, 0.30, 0.10),
    "chair": (0.20, 0.40, 0.85),
    "cabinet": (0.25, 0.65, 0.30),
    "sofa": (0.75, 0.15, 0.20),
    "bed": (0.95, 0.75, 0.40),
    "bookshelf": (0.45, 0.25, 0.55),
    "door": (0.40, 0.20, 0.05),
    "window": (0.60, 0.85, 0.95),
    "desk": (0.80, 0.55, 0.25),
    "sink": (0.90, 0.90, 0.95),
}
# footprint x, footprint y, height ranges in metres
SIZES = {
    "table": ((1.0, 1.6), (0.6, 1.0), (0.70, 0.80)),
    "chair": ((0.45, 0.60), (0.45, 0.60), (0.80, 1.00)),
    "cabinet": ((0.50, 1.00), (0.40, 0.60), (1.00, 1.60)),
    "sofa": ((1.50, 2.00), (0.80, 1.00), (0.70, 0.90)),
    "bed": ((1.40, 2.00), (1.00, 1.60), (0.50, 0.60)),
    "bookshelf": ((0.60, 1.20), (0.30, 0.40), (1.20, 1.80)),
}
DEFAULT_SIZE = ((0.5, 1.0), (0.5, 1.0), (0.5, 1.2))
MAX_PROTOTYPE_COSINE = 0.3


class SynthError(ValueError):
    pass


@dataclass
class SynthSpec:
    seed: int = 0
    num_train: int = 8
    num_test: int = 2
    dim: int = 16
    object_classes: list = field(default_factory=lambda: ["table", "chair", "cabinet"])
    distractors: list = field(default_factory=lambda: ["sofa", "bed", "bookshelf"])
    confusion: list = field(default_factory=list)  # [[cls, other, weight], ...]
    objects_per_scene: list = field(default_factory=lambda: [3, 5])
    room_min: list = field(default_factory=lambda: [4.0, 4.0, 2.5])
    room_max: list = field(default_factory=lambda: [5.5, 5.5, 3.0])
    num_points: int = 8192
    num_cameras: int = 6
    image_size: int = 64
    hfov_deg: float = 70.0
    ring_fraction: float = 0.75
    camera_height: float = 1.6
    sigma: float = 0.05
    color_jitter: float = 0.03
    depth_step: float = 0.0  # 0 keeps exact depths
    prototype_seed: int = 0

    @property
    def class_names(self) -> list:
        return list(STRUCTURE) + list(self.object_classes) + list(self.distractors)

    def validate(self) -> "SynthSpec":
        names = self.class_names
        if len(set(names)) != len(names):
            raise SynthError(f"duplicate class names in {names}")
        if self.num_train + self.num_test < 1:
            raise SynthError("spec produces no scenes")
        if self.num_cameras < 1:
            raise SynthError("spec needs at least one camera")
        if self.objects_per_scene[1] < 1 or not self.object_classes:
            raise SynthError("spec needs at least one object per scene")
        if self.objects_per_scene[0] > self.objects_per_scene[1] or self.objects_per_scene[0] < 0:
            raise SynthError("objects_per_scene must be [min, max] with 0 <= min <= max")
        if self.num_points < 1:
            raise SynthError("num_points must be positive")
        for entry in self.confusion:
            cls, other, w = entry
            if cls not in names or other not in names:
                raise SynthError(f"confusion entry {entry} names an unknown class")
            if not 0.0 <= float(w) <= 1.0:
                raise SynthError(f"confusion weight must lie in [0, 1]: {entry}")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "SynthSpec":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise SynthError(f"unknown synth spec keys: {sorted(unknown)}")
        return cls(**data).validate()


def default_suite(seed: int = 0, **overrides) -> SynthSpec:
    """Desk-scale benchmark: 8 train / 2 test scenes, 3 distractors, two confused classes."""
    spec = SynthSpec(seed=seed, confusion=[["chair", "sofa", 0.6], ["cabinet", "bookshelf", 0.6]])
    return dataclasses.replace(spec, **overrides).validate()


# ---------------------------------------------------------------------------
# vocabulary-level oracle embeddings


def _vocabulary(names: Sequence[str]) -> list:
    vocab = list(VOCABULARY)
    vocab += [n for n in names if n not in vocab]
    return vocab


def prototypes(names: Sequence[str], dim: int, seed: int = 0) -> np.ndarray:
    """Unit-norm, near-orthogonal prototype per class name (pairwise cosine <= 0.3)."""
    vocab = _vocabulary(names)
    rng = np.random.default_rng(np.random.SeedSequence([seed, dim, len(vocab)]))
    n = len(vocab)
    if n <= dim:
        q, _ = np.linalg.qr(rng.normal(size=(dim, n)))
        base = q.T
        protos = base + 0.05 * rng.normal(size=base.shape) / np.sqrt(dim)
    else:
        protos = rng.normal(size=(n, dim))
    protos /= np.linalg.norm(protos, axis=1, keepdims=True)
    rows = protos[[vocab.index(c) for c in names]]
    gram = rows @ rows.T
    np.fill_diagonal(gram, 0.0)
    if gram.size and gram.max() > MAX_PROTOTYPE_COSINE:
        raise SynthError(f"cannot make {len(names)} prototypes near-orthogonal in d={dim}")
    return rows


def class_color(name: str) -> np.ndarray:
    if name in PALETTE:
        return np.array(PALETTE[name])
    h = zlib.crc32(name.encode())
    return np.array([(h & 0xFF) / 255.0, ((h >> 8) & 0xFF) / 255.0, ((h >> 16) & 0xFF) / 255.0])


def make_bank(spec: SynthSpec) -> TextEmbeddingBank:
    return TextEmbeddingBank(tuple(spec.class_names), prototypes(spec.class_names, spec.dim, spec.prototype_seed))


def render_embeddings(spec: SynthSpec, bank: TextEmbeddingBank) -> np.ndarray:
    """Noise-free pixel embedding for each class after applying ``spec.confusion``."""
    emb = bank.normalized().copy()
    names = list(bank.class_names)
    for cls, other, w in spec.confusion:
        i, j = names.index(cls), names.index(other)
        mix = (1.0 - w) * bank.normalized()[i] + w * bank.normalized()[j]
        emb[i] = mix / np.linalg.norm(mix)
    return emb


# ---------------------------------------------------------------------------
# geometry


@dataclass(frozen=True)
class Box:
    lo: tuple
    hi: tuple
    label: int


@dataclass(frozen=True)
class Layout:
    room: tuple  # (Lx, Ly, Lz); room spans [0, L]
    boxes: tuple  # object boxes

    def to_dict(self) -> dict:
        return {"room": list(self.room), "boxes": [{"lo": list(b.lo), "hi": list(b.hi), "label": b.label}
                                                   for b in self.boxes]}

    @classmethod
    def from_dict(cls, d: dict) -> "Layout":
        return cls(tuple(d["room"]), tuple(Box(tuple(b["lo"]), tuple(b["hi"]), int(b["label"])) for b in d["boxes"]))


@dataclass(frozen=True)
class SynthScene:
    scene: Scene
    layout: Layout


def _slab(origins: np.ndarray, dirs: np.ndarray, lo, hi):
    """Entry/exit ray parameters for an axis-aligned box (nan-free for axis-parallel rays)."""
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        t1 = (np.asarray(lo) - origins) * inv
        t2 = (np.asarray(hi) - origins) * inv
    tmin = np.where(np.isnan(t1), -np.inf, np.minimum(t1, t2))
    tmax = np.where(np.isnan(t2), np.inf, np.maximum(t1, t2))
    return tmin.max(axis=-1), tmax.min(axis=-1)


def ray_cast(layout: Layout, origins: np.ndarray, dirs: np.ndarray, wall_label: int, floor_label: int):
    """First hit of rays starting inside the room. Returns ``(t, label)``."""
    origins = np.broadcast_to(origins, dirs.shape)
    room = np.asarray(layout.room, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        t_axis = np.where(dirs > 0, (room - origins) / dirs, np.where(dirs < 0, -origins / dirs, np.inf))
    exit_axis = np.argmin(t_axis, axis=-1)
    t = np.take_along_axis(t_axis, exit_axis[..., None], axis=-1)[..., 0]
    label = np.full(t.shape, wall_label, dtype=np.int64)
    label[(exit_axis == 2) & (dirs[..., 2] < 0)] = floor_label
    for box in layout.boxes:
        tn, tf = _slab(origins, dirs, box.lo, box.hi)
        hit = (tn <= tf) & (tn > 0) & (tn < t)
        t = np.where(hit, tn, t)
        label = np.where(hit, box.label, label)
    return t, label


def _in_image(pts_cam: np.ndarray, camera: CameraPose):
    """Frustum test written out independently of the geometry module."""
    K = np.asarray(camera.intrinsics, dtype=np.float64)
    x, y, z = pts_cam[..., 0], pts_cam[..., 1], pts_cam[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = K[0, 0] * x / z + K[0, 2]
        v = K[1, 1] * y / z + K[1, 2]
        return (z > 0) & (u >= 0) & (u < camera.width - 0.5) & (v >= 0) & (v < camera.height - 0.5)


def oracle_visibility_many(layout: Layout, points: np.ndarray, camera: CameraPose, eps: float = 1e-6) -> np.ndarray:
    """Exact per-point visibility: inside the image and no object box crossed before the point."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    E = np.asarray(camera.world_to_camera, dtype=np.float64)
    seen = _in_image(pts @ E[:3, :3].T + E[:3, 3], camera)
    R = E[:3, :3]
    origin = -R.T @ E[:3, 3]
    seg = pts - origin
    for box in layout.boxes:
        tn, tf = _slab(origin[None], seg, box.lo, box.hi)
        crossed = (tn <= tf) & (tn > eps) & (tn < 1.0 - eps)
        inside = (tn <= 0.0) & (tf > eps)  # camera inside the box
        seen &= ~(crossed | inside)
    return seen


def oracle_visibility(layout: Layout, point, camera: CameraPose, eps: float = 1e-6) -> bool:
    return bool(oracle_visibility_many(layout, np.asarray(point, dtype=np.float64)[None], camera, eps)[0])


def rescaled_camera(camera: CameraPose, size: int) -> CameraPose:
    """Same pose and field of view rendered at ``size`` x ``size`` pixels."""
    s = size / camera.width
    K = np.array(camera.intrinsics, dtype=np.float64)
    K[0, 0] *= s
    K[1, 1] *= s
    K[0, 2] = (size - 1) / 2.0
    K[1, 2] = (size - 1) / 2.0
    return CameraPose(K, camera.world_to_camera, size, size)


def point_depth_map(layout: Layout, camera: CameraPose, points: np.ndarray, wall_label: int, floor_label: int,
                    depth_step: float = 0.0) -> np.ndarray:
    """Exact depth map ray-cast only at the pixels that ``points`` fall into (0 elsewhere).

    Equivalent to a fully rendered map for every lookup made by those points,
    but cheap enough for very large images.
    """
    E = np.asarray(camera.world_to_camera, dtype=np.float64)
    pc = np.asarray(points, dtype=np.float64) @ E[:3, :3].T + E[:3, 3]
    ok = _in_image(pc, camera)
    K = camera.intrinsics
    col = np.floor(K[0, 0] * pc[ok, 0] / pc[ok, 2] + K[0, 2] + 0.5).astype(np.int64)
    row = np.floor(K[1, 1] * pc[ok, 1] / pc[ok, 2] + K[1, 2] + 0.5).astype(np.int64)
    d_cam = np.stack([(col - K[0, 2]) / K[0, 0], (row - K[1, 2]) / K[1, 1], np.ones(len(col))], axis=-1)
    c2w = camera.camera_to_world
    t, _ = ray_cast(layout, c2w[:3, 3], d_cam @ c2w[:3, :3].T, wall_label, floor_label)
    if depth_step > 0:
        t = np.round(t / depth_step) * depth_step
    depth = np.zeros((camera.height, camera.width), dtype=np.float32)
    depth[row, col] = t
    return depth


def _intrinsics(spec: SynthSpec) -> np.ndarray:
    s = spec.image_size
    f = (s / 2.0) / np.tan(np.deg2rad(spec.hfov_deg) / 2.0)
    c = (s - 1) / 2.0
    return np.array([[f, 0.0, c], [0.0, f, c], [0.0, 0.0, 1.0]])


def ring_cameras(spec: SynthSpec, room, rng: np.random.Generator) -> list:
    Lx, Ly, _ = room
    centre = np.array([Lx / 2, Ly / 2])
    radius = spec.ring_fraction * min(Lx, Ly) / 2.0
    phase = rng.uniform(0, 2 * np.pi)
    K = _intrinsics(spec)
    cams = []
    for i in range(spec.num_cameras):
        a = phase + 2 * np.pi * i / spec.num_cameras
        eye = np.array([*(centre + radius * np.array([np.cos(a), np.sin(a)])), spec.camera_height])
        target = np.array([*(centre - 0.3 * radius * np.array([np.cos(a), np.sin(a)])), 1.0])
        cams.append(CameraPose(K, look_at(eye, target), spec.image_size, spec.image_size))
    return cams


def _pixel_rays(cam: CameraPose):
    """World-space rays through every pixel centre, with unit camera-frame z."""
    W, H = cam.width, cam.height
    jj, ii = np.meshgrid(np.arange(W, dtype=np.float64), np.arange(H, dtype=np.float64))
    d_cam = np.stack([(jj - cam.cx) / cam.fx, (ii - cam.cy) / cam.fy, np.ones_like(jj)], axis=-1)
    c2w = cam.camera_to_world
    return c2w[:3, 3], d_cam @ c2w[:3, :3].T


def ray_cast_labels(layout: Layout, cam: CameraPose, wall_label: int, floor_label: int) -> np.ndarray:
    """Class of the first surface behind every pixel centre (H x W)."""
    return ray_cast(layout, *_pixel_rays(cam), wall_label, floor_label)[1]


def render_view(layout: Layout, cam: CameraPose, proto_rows: np.ndarray, sigma: float, depth_step: float,
                rng: np.random.Generator, wall_label: int, floor_label: int):
    """Exact depth map and noisy embedding map for one camera."""
    t, label = ray_cast(layout, *_pixel_rays(cam), wall_label, floor_label)
    depth = t  # camera-frame z because the rays have unit z
    if depth_step > 0:
        depth = np.round(depth / depth_step) * depth_step
    emb = proto_rows[label] + sigma * rng.normal(size=(cam.height, cam.width, proto_rows.shape[1]))
    return emb.astype(np.float32), depth.astype(np.float32), label


def _box_faces(box: Box):
    (x0, y0, z0), (x1, y1, z1) = box.lo, box.hi
    # (origin, edge u, edge v) for top and four sides; the bottom rests on the floor
    return [
        ((x0, y0, z1), (x1 - x0, 0, 0), (0, y1 - y0, 0)),
        ((x0, y0, z0), (x1 - x0, 0, 0), (0, 0, z1 - z0)),
        ((x0, y1, z0), (x1 - x0, 0, 0), (0, 0, z1 - z0)),
        ((x0, y0, z0), (0, y1 - y0, 0), (0, 0, z1 - z0)),
        ((x1, y0, z0), (0, y1 - y0, 0), (0, 0, z1 - z0)),
    ]


def sample_points(layout: Layout, n: int, labels_color: dict, jitter: float, rng: np.random.Generator,
                  wall_label: int, floor_label: int):
    """Uniform surface samples on floor (outside footprints), walls and object faces."""
    Lx, Ly, Lz = layout.room
    faces = [((0, 0, 0), (Lx, 0, 0), (0, Ly, 0), floor_label)]
    faces += [
        ((0, 0, 0), (Lx, 0, 0), (0, 0, Lz), wall_label),
        ((0, Ly, 0), (Lx, 0, 0), (0, 0, Lz), wall_label),
        ((0, 0, 0), (0, Ly, 0), (0, 0, Lz), wall_label),
        ((Lx, 0, 0), (0, Ly, 0), (0, 0, Lz), wall_label),
    ]
    for box in layout.boxes:
        faces += [(o, u, v, box.label) for o, u, v in _box_faces(box)]
    areas = np.array([np.linalg.norm(np.cross(u, v)) for _, u, v, _ in faces])
    counts = rng.multinomial(n, areas / areas.sum())
    xyz, lab = [], []
    for (o, u, v, label), c in zip(faces, counts):
        if c == 0:
            continue
        st = rng.uniform(size=(c, 2))
        pts = np.asarray(o) + st[:, :1] * np.asarray(u) + st[:, 1:] * np.asarray(v)
        if label == floor_label:
            under = np.zeros(c, dtype=bool)
            for box in layout.boxes:
                under |= ((pts[:, 0] >= box.lo[0]) & (pts[:, 0] <= box.hi[0])
                          & (pts[:, 1] >= box.lo[1]) & (pts[:, 1] <= box.hi[1]))
            pts = pts[~under]
        xyz.append(pts)
        lab.append(np.full(len(pts), label, dtype=np.int64))
    xyz = np.concatenate(xyz)
    lab = np.concatenate(lab)
    base = np.stack([labels_color[int(l)] for l in lab])
    rgb = np.clip(base + jitter * rng.normal(size=base.shape), 0.0, 1.0)
    return xyz, rgb, lab


def place_objects(spec: SynthSpec, room, cams: Sequence[CameraPose], rng: np.random.Generator,
                  class_names: Sequence[str]) -> list:
    Lx, Ly, _ = room
    n_obj = int(rng.integers(spec.objects_per_scene[0], spec.objects_per_scene[1] + 1))
    cam_xy = [c.camera_to_world[:2, 3] for c in cams]
    boxes = []
    margin = 0.15
    for _ in range(n_obj):
        name = spec.object_classes[int(rng.integers(len(spec.object_classes)))]
        (sx, sy, sz) = SIZES.get(name, DEFAULT_SIZE)
        for _attempt in range(200):
            w, dpt, h = rng.uniform(*sx), rng.uniform(*sy), rng.uniform(*sz)
            if rng.uniform() < 0.5:
                w, dpt = dpt, w
            x0 = rng.uniform(margin, Lx - margin - w)
            y0 = rng.uniform(margin, Ly - margin - dpt)
            lo, hi = (x0, y0, 0.0), (x0 + w, y0 + dpt, h)
            clear = all(
                hi[0] + margin < b.lo[0] or b.hi[0] + margin < lo[0]
                or hi[1] + margin < b.lo[1] or b.hi[1] + margin < lo[1]
                for b in boxes
            ) and all(
                not (lo[0] - 0.3 < c[0] < hi[0] + 0.3 and lo[1] - 0.3 < c[1] < hi[1] + 0.3) for c in cam_xy
            )
            if clear:
                boxes.append(Box(tuple(_f32(lo)), tuple(_f32(hi)), class_names.index(name)))
                break
    return boxes


def _f32(x):
    return [float(np.float32(v)) for v in x]


def build_scene(name: str, spec: SynthSpec, bank: TextEmbeddingBank, rng: np.random.Generator,
                layout: Optional[Layout] = None, cameras: Optional[Sequence[CameraPose]] = None) -> SynthScene:
    """Generate one scene; ``layout``/``cameras`` override the random room, objects and ring."""
    names = list(bank.class_names)
    wall, floor = names.index("wall"), names.index("floor")
    if layout is None:
        room = tuple(_f32(rng.uniform(spec.room_min, spec.room_max)))
        cams = list(cameras) if cameras is not None else ring_cameras(spec, room, rng)
        layout = Layout(room, tuple(place_objects(spec, room, cams, rng, names)))
    else:
        cams = list(cameras) if cameras is not None else ring_cameras(spec, layout.room, rng)
    if not cams:
        raise SynthError("scene has no cameras")
    colors = {i: class_color(n) for i, n in enumerate(names)}
    xyz, rgb, gt = sample_points(layout, spec.num_points, colors, spec.color_jitter, rng, wall, floor)
    proto_rows = render_embeddings(spec, bank)
    views = []
    for cam in cams:
        emb, depth, _ = render_view(layout, cam, proto_rows, spec.sigma, spec.depth_step, rng, wall, floor)
        views.append(View(embedding=emb, camera=cam, depth=depth.astype(np.float64)))
    present = sorted({int(l) for l in gt})
    cloud = PointCloud(xyz=xyz.astype(np.float32).astype(np.float64),
                       rgb=rgb.astype(np.float32).astype(np.float64), gt=gt)
    scene = Scene(name=name, cloud=cloud, views=tuple(views),
                  scene_labels=tuple(names[i] for i in present), class_names=tuple(names))
    return SynthScene(scene, layout)


def scene_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


@dataclass
class Suite:
    spec: SynthSpec
    bank: TextEmbeddingBank
    train: list  # SynthScene
    test: list


def build(spec: SynthSpec) -> Suite:
    """Generate a whole suite in memory; scene ``i`` depends only on ``(seed, i)``."""
    spec.validate()
    bank = make_bank(spec)
    scenes = []
    for i in range(spec.num_train + spec.num_test):
        split = "train" if i < spec.num_train else "test"
        idx = i if split == "train" else i - spec.num_train
        scenes.append(build_scene(f"{split}_{idx:03d}", spec, bank, scene_rng(spec.seed, i)))
    return Suite(spec, bank, scenes[: spec.num_train], scenes[spec.num_train :])


def generate(spec: SynthSpec, out_dir: PathLike) -> Path:
    """Write a suite to ``out_dir``; returns the path of ``suite.json``."""
    suite = build(spec)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_bank(out / "bank.tnsr", suite.bank)
    entries = {"train": [], "test": []}
    for split, items in (("train", suite.train), ("test", suite.test)):
        for s in items:
            manifest = save_scene(out / s.scene.name, s.scene)
            (out / s.scene.name / "layout.json").write_text(json.dumps(s.layout.to_dict(), indent=2) + "\n")
            entries[split].append(str(manifest.relative_to(out)))
    doc = {"spec": spec.to_dict(), "bank": "bank.tnsr", **entries}
    path = out / "suite.json"
    path.write_text(json.dumps(doc, indent=2) + "\n")
    return path


def load_layout(manifest_path: PathLike) -> Layout:
    return Layout.from_dict(json.loads((Path(manifest_path).parent / "layout.json").read_text()))
