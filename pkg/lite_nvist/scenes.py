"""
Procedural toy scenes, the analytic ray tracer that renders their ground-truth
views, and the on-disk dataset (manifest.json + images/<scene>/<view>.ppm).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import numpy as np
from PIL import Image, UnidentifiedImageError
from tqdm import tqdm

from .camera import (CameraPose, SceneNormalization, default_principal, generate_rays, look_at,
                     normalize_scene, pixel_grid)
from .common import (DatasetIOError, MANIFEST_NAME, ValidationError, log_debug, log_info, read_json,
                     view_path, write_json)

MANIFEST_VERSION = 1
SCENE_BOUND = 0.8
MAX_PRIMITIVES = 6
FLOOR_Y = -SCENE_BOUND
CHECKER_SIZE = 0.2
CHECKER_ALBEDO = ((0.8, 0.8, 0.8), (0.35, 0.35, 0.35))
LIGHT_DIR = np.array([0.4, 1.0, -0.3]) / np.linalg.norm([0.4, 1.0, -0.3])
AMBIENT = 0.3
HIT_EPS = 1e-9

# documented draw ranges
SPHERE_RADIUS = (0.1, 0.35)
BOX_HALF_EXTENT = (0.08, 0.3)
ALBEDO_RANGE = (0.15, 0.95)
GROUND_PROBABILITY = 0.5


# =========================
# Scene types
# =========================

@dataclass(frozen=True)
class Primitive:
    kind: str                    # "sphere" | "box"
    center: Tuple[float, float, float]
    size: Tuple[float, float, float]   # radius repeated for spheres, half extents for boxes
    albedo: Tuple[float, float, float]

    @property
    def half_extent(self) -> np.ndarray:
        return np.asarray(self.size, dtype=np.float64)


@dataclass(frozen=True)
class ToyScene:
    primitives: Tuple[Primitive, ...] = ()
    ground: bool = False
    background: Tuple[float, float, float] = (1.0, 1.0, 1.0)

    def bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        """Axis-aligned box around every primitive (and the floor tile when present)."""
        los, his = [], []
        for p in self.primitives:
            c = np.asarray(p.center)
            los.append(c - p.half_extent)
            his.append(c + p.half_extent)
        if self.ground:
            los.append(np.array([-SCENE_BOUND, FLOOR_Y, -SCENE_BOUND]))
            his.append(np.array([SCENE_BOUND, FLOOR_Y, SCENE_BOUND]))
        if not los:
            return -np.full(3, SCENE_BOUND), np.full(3, SCENE_BOUND)
        return np.min(los, axis=0), np.max(his, axis=0)

    def corner_points(self) -> np.ndarray:
        lo, hi = self.bounds()
        # a flat floor alone has zero height; pad so normalization stays defined
        hi = np.where(hi - lo <= 0, lo + 1e-3, hi)
        return np.array([[x, y, z] for x in (lo[0], hi[0]) for y in (lo[1], hi[1]) for z in (lo[2], hi[2])])


def generate_scene(seed: int, background: Sequence[float] = (1.0, 1.0, 1.0)) -> ToyScene:
    """
    1-6 spheres/boxes with radius U(0.1, 0.35) or half extents U(0.08, 0.3), albedo
    U(0.15, 0.95) per channel, centers placed so every primitive stays inside
    [-0.8, 0.8]^3; a checkered floor tile at y = -0.8 with probability 0.5.
    """
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, MAX_PRIMITIVES + 1))
    prims = []
    for _ in range(n):
        if rng.random() < 0.5:
            r = float(rng.uniform(*SPHERE_RADIUS))
            ext = np.full(3, r)
            kind = "sphere"
        else:
            ext = rng.uniform(*BOX_HALF_EXTENT, size=3)
            kind = "box"
        center = rng.uniform(-SCENE_BOUND + ext, SCENE_BOUND - ext)
        albedo = rng.uniform(*ALBEDO_RANGE, size=3)
        prims.append(Primitive(kind=kind, center=tuple(float(c) for c in center),
                               size=tuple(float(s) for s in ext), albedo=tuple(float(a) for a in albedo)))
    ground = bool(rng.random() < GROUND_PROBABILITY)
    return ToyScene(primitives=tuple(prims), ground=ground, background=tuple(float(b) for b in background))


# =========================
# Analytic ray tracing
# =========================

def _hit_sphere(o: np.ndarray, d: np.ndarray, c: np.ndarray, r: float) -> Tuple[np.ndarray, np.ndarray]:
    oc = o - c
    b = np.einsum("ij,ij->i", d, oc)
    cc = np.einsum("ij,ij->i", oc, oc) - r * r
    disc = b * b - cc
    ok = disc >= 0
    sq = np.sqrt(np.where(ok, disc, 0.0))
    t0, t1 = -b - sq, -b + sq
    t = np.where(t0 > HIT_EPS, t0, t1)
    t = np.where(ok & (t > HIT_EPS), t, np.inf)
    t_safe = np.where(np.isfinite(t), t, 0.0)
    normal = (o + t_safe[:, None] * d - c) / r
    return t, normal


def _hit_box(o: np.ndarray, d: np.ndarray, c: np.ndarray, half: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    lo, hi = c - half, c + half
    safe = np.where(np.abs(d) < 1e-12, np.copysign(1e-12, d), d)
    t1, t2 = (lo - o) / safe, (hi - o) / safe
    tmin, tmax = np.minimum(t1, t2), np.maximum(t1, t2)
    t_near, t_far = tmin.max(axis=1), tmax.min(axis=1)
    ok = t_far >= np.maximum(t_near, 0.0)
    t = np.where(t_near > HIT_EPS, t_near, t_far)
    t = np.where(ok & (t > HIT_EPS), t, np.inf)
    entering = t_near > HIT_EPS
    axis = np.where(entering, tmin.argmax(axis=1), tmax.argmin(axis=1))
    normal = np.zeros_like(o)
    rows = np.arange(len(o))
    sign = np.where(entering, -np.sign(d[rows, axis]), np.sign(d[rows, axis]))
    normal[rows, axis] = sign
    return t, normal


def _hit_floor(o: np.ndarray, d: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    dy = np.where(np.abs(d[:, 1]) < 1e-12, np.copysign(1e-12, d[:, 1]), d[:, 1])
    t = (FLOOR_Y - o[:, 1]) / dy
    p = o + np.where(np.isfinite(t), t, 0.0)[:, None] * d
    inside = (np.abs(p[:, 0]) <= SCENE_BOUND) & (np.abs(p[:, 2]) <= SCENE_BOUND)
    t = np.where(inside & (t > HIT_EPS), t, np.inf)
    normal = np.zeros_like(o)
    normal[:, 1] = np.where(d[:, 1] < 0, 1.0, -1.0)
    return t, normal


def checker_albedo(points: np.ndarray) -> np.ndarray:
    cell = (np.floor(points[:, 0] / CHECKER_SIZE) + np.floor(points[:, 2] / CHECKER_SIZE)).astype(np.int64) % 2
    return np.asarray(CHECKER_ALBEDO)[cell]


def trace(scene: ToyScene, origins: np.ndarray, directions: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Nearest-hit shading for unit rays: (rgb (P, 3), depth (P,) with +inf on miss)."""
    o = np.asarray(origins, dtype=np.float64)
    d = np.asarray(directions, dtype=np.float64)
    p = len(o)
    best_t = np.full(p, np.inf)
    normal = np.zeros((p, 3))
    albedo = np.tile(np.asarray(scene.background, dtype=np.float64), (p, 1))
    is_floor = np.zeros(p, dtype=bool)
    for prim in scene.primitives:
        c = np.asarray(prim.center)
        if prim.kind == "sphere":
            t, n = _hit_sphere(o, d, c, float(prim.size[0]))
        elif prim.kind == "box":
            t, n = _hit_box(o, d, c, prim.half_extent)
        else:
            raise ValidationError(f"unknown primitive kind '{prim.kind}'")
        closer = t < best_t
        best_t = np.where(closer, t, best_t)
        normal[closer] = n[closer]
        albedo[closer] = prim.albedo
        is_floor[closer] = False
    if scene.ground:
        t, n = _hit_floor(o, d)
        closer = t < best_t
        best_t = np.where(closer, t, best_t)
        normal[closer] = n[closer]
        is_floor |= closer
    hit = np.isfinite(best_t)
    if is_floor.any():
        pts = o[is_floor] + best_t[is_floor, None] * d[is_floor]
        albedo[is_floor] = checker_albedo(pts)
    shade = AMBIENT + (1.0 - AMBIENT) * np.maximum(0.0, normal @ LIGHT_DIR)
    rgb = np.where(hit[:, None], albedo * shade[:, None], albedo)
    return np.clip(rgb, 0.0, 1.0), best_t


def raytrace_oracle(scene: ToyScene, pose: CameraPose) -> Tuple[np.ndarray, np.ndarray]:
    """Ground-truth view: rgb (H, W, 3) in [0, 1] and ray-distance depth (H, W), +inf on miss."""
    pose.validate()
    rays = generate_rays(pose, pixel_grid(pose.width, pose.height))
    rgb, depth = trace(scene, rays.origins, rays.directions)
    return rgb.reshape(pose.height, pose.width, 3), depth.reshape(pose.height, pose.width)


def surface_distance(scene: ToyScene, points: np.ndarray) -> np.ndarray:
    """Distance from each point to the nearest primitive surface (floor tile included)."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    best = np.full(len(pts), np.inf)
    for prim in scene.primitives:
        q = pts - np.asarray(prim.center)
        if prim.kind == "sphere":
            dist = np.abs(np.linalg.norm(q, axis=1) - prim.size[0])
        else:
            a = np.abs(q) - prim.half_extent
            outside = np.linalg.norm(np.maximum(a, 0.0), axis=1)
            dist = np.abs(outside + np.minimum(a.max(axis=1), 0.0))
        best = np.minimum(best, dist)
    if scene.ground:
        on_tile = (np.abs(pts[:, 0]) <= SCENE_BOUND + 1e-9) & (np.abs(pts[:, 2]) <= SCENE_BOUND + 1e-9)
        best = np.minimum(best, np.where(on_tile, np.abs(pts[:, 1] - FLOOR_Y), np.inf))
    return best


# =========================
# PPM images
# =========================

def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.round(np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def write_ppm(path: Path, image: np.ndarray) -> None:
    """Binary P6, maxval 255. Grayscale (H, W) input is written as three equal channels."""
    arr = to_uint8(image)
    if arr.ndim == 2:
        arr = np.repeat(arr[..., None], 3, axis=-1)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray(arr).save(path, format="PPM")
    except OSError as e:
        raise DatasetIOError(f"Cannot write image {path}: {e}") from e


def read_ppm(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            if im.format != "PPM":
                raise DatasetIOError(f"{path} is not a PPM image (format {im.format})")
            return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    except FileNotFoundError as e:
        raise DatasetIOError(f"Image not found: {path}") from e
    except (UnidentifiedImageError, OSError) as e:
        raise DatasetIOError(f"Cannot read image {path}: {e}") from e


# =========================
# Dataset generation
# =========================

@dataclass(frozen=True)
class DataConfig:
    scenes: int = 64
    views: int = 12
    size: int = 64
    seed: int = 7
    holdout_stride: int = 8
    focal: float = 0.9
    dist_min: float = 1.5
    dist_max: float = 2.5
    elevation_min: float = 0.1
    elevation_max: float = 0.6
    background: Tuple[float, float, float] = (1.0, 1.0, 1.0)

    def validate(self) -> "DataConfig":
        if self.scenes <= 0:
            raise ValidationError(f"scenes must be positive, got {self.scenes}")
        if self.views < 3:
            raise ValidationError(f"views must be at least 3, got {self.views}")
        if self.size <= 0:
            raise ValidationError(f"size must be positive, got {self.size}")
        if self.holdout_stride < 0:
            raise ValidationError(f"holdout_stride must be >= 0, got {self.holdout_stride}")
        if not 0 < self.dist_min <= self.dist_max:
            raise ValidationError(f"bad camera distance range [{self.dist_min}, {self.dist_max}]")
        return self


def split_for(index: int, holdout_stride: int) -> str:
    """Every holdout_stride-th scene (1-based) is held out; stride 0 keeps everything in train."""
    if holdout_stride > 0 and (index + 1) % holdout_stride == 0:
        return "test"
    return "train"


def orbit_cameras(rng: np.random.Generator, cfg: DataConfig, target: np.ndarray) -> List[CameraPose]:
    """Views spread around the target at random distances/elevations, all looking at it."""
    az0 = rng.uniform(0.0, 2.0 * np.pi)
    poses = []
    for i in range(cfg.views):
        az = az0 + 2.0 * np.pi * i / cfg.views + rng.uniform(-0.2, 0.2)
        el = rng.uniform(cfg.elevation_min, cfg.elevation_max)
        dist = rng.uniform(cfg.dist_min, cfg.dist_max)
        offset = dist * np.array([np.cos(el) * np.sin(az), np.sin(el), -np.cos(el) * np.cos(az)])
        center = target + offset
        poses.append(CameraPose(rotation=look_at(center, target), center=center, focal=cfg.focal,
                                principal_point=default_principal(cfg.size, cfg.size),
                                image_size=(cfg.size, cfg.size)))
    return poses


def pose_to_json(pose: CameraPose) -> Dict:
    return {
        "rotation": [float(x) for x in np.asarray(pose.rotation).reshape(-1)],
        "center": [float(x) for x in pose.center],
        "focal_normalized": float(pose.focal),
        "principal": [float(x) for x in pose.principal_point],
        "size": [int(x) for x in pose.image_size],
    }


def pose_from_json(obj: Dict) -> CameraPose:
    try:
        return CameraPose(rotation=np.asarray(obj["rotation"], dtype=np.float64).reshape(3, 3),
                          center=np.asarray(obj["center"], dtype=np.float64),
                          focal=float(obj["focal_normalized"]),
                          principal_point=tuple(float(x) for x in obj["principal"]),
                          image_size=tuple(int(x) for x in obj["size"]))
    except (KeyError, ValueError, TypeError) as e:
        raise DatasetIOError(f"Malformed pose entry: {e}") from e


def generate_dataset(out_dir: Path, cfg: DataConfig, progress: bool = False) -> Path:
    """
    Render every scene/view with the oracle, normalize each scene to the unit-box
    convention and write images plus manifest.json. Returns the manifest path.
    """
    cfg.validate()
    out_dir = Path(out_dir)
    master = np.random.default_rng(cfg.seed)
    scenes_json = []
    for i in tqdm(range(cfg.scenes), desc="scenes", disable=not progress):
        scene_seed = int(master.integers(0, 2 ** 31 - 1))
        scene = generate_scene(scene_seed, cfg.background)
        lo, hi = scene.bounds()
        target = (lo + hi) / 2.0
        poses = orbit_cameras(np.random.default_rng([cfg.seed, i]), cfg, target)
        norm, norm_poses = normalize_scene(scene.corner_points(), poses, input_index=0)
        scene_id = f"scene_{i:04d}"
        log_debug(f"{scene_id}: seed {scene_seed}, {len(scene.primitives)} primitives, z {norm.z:.4f}")
        views = []
        for v, (raw, pose) in enumerate(zip(poses, norm_poses)):
            rgb, _ = raytrace_oracle(scene, raw)
            path = view_path(out_dir, scene_id, v)
            write_ppm(path, rgb)
            views.append({"file": path.relative_to(out_dir).as_posix(), **pose_to_json(pose)})
        scenes_json.append({
            "id": scene_id,
            "seed": scene_seed,
            "split": split_for(i, cfg.holdout_stride),
            "normalization": {"scale": float(norm.scale), "translation": [float(x) for x in norm.translation],
                              "z": float(norm.z)},
            "views": views,
        })
    manifest = {"version": MANIFEST_VERSION, "holdout_stride": cfg.holdout_stride,
                "image_size": [cfg.size, cfg.size], "background": list(cfg.background), "scenes": scenes_json}
    path = out_dir / MANIFEST_NAME
    write_json(path, manifest)
    n_test = sum(1 for s in scenes_json if s["split"] == "test")
    log_info(f"Wrote {cfg.scenes} scenes ({cfg.scenes - n_test} train, {n_test} test) x {cfg.views} views to {out_dir}")
    return path


# =========================
# Dataset loading
# =========================

@dataclass
class ViewRecord:
    file: Path
    pose: CameraPose


@dataclass
class SceneRecord:
    id: str
    seed: int
    split: str
    normalization: SceneNormalization
    views: List[ViewRecord] = field(default_factory=list)


class Dataset:
    """Manifest-backed view of a generated dataset; images load lazily and are cached."""

    def __init__(self, root: Path, scenes: List[SceneRecord], image_size: Tuple[int, int],
                 background: Tuple[float, float, float]):
        self.root = root
        self.scenes = scenes
        self.image_size = image_size   # (W, H)
        self.background = background
        self._load = lru_cache(maxsize=4096)(self._read)

    def split(self, name: str) -> List[SceneRecord]:
        return [s for s in self.scenes if s.split == name]

    def _read(self, path: Path) -> np.ndarray:
        return read_ppm(path)

    def image(self, scene: SceneRecord, view: int) -> np.ndarray:
        return self._load(scene.views[view].file)


def load_dataset(root: Path) -> Dataset:
    root = Path(root)
    manifest = read_json(root / MANIFEST_NAME)
    version = manifest.get("version") if isinstance(manifest, dict) else None
    if version != MANIFEST_VERSION:
        raise DatasetIOError(f"Unsupported manifest version {version}, expected {MANIFEST_VERSION}")
    scenes = []
    for s in manifest.get("scenes", []):
        try:
            norm = SceneNormalization(scale=float(s["normalization"]["scale"]),
                                      translation=np.asarray(s["normalization"]["translation"], dtype=np.float64),
                                      z=float(s["normalization"]["z"]))
            views = []
            for v in s["views"]:
                pose = pose_from_json(v).validate()
                path = root / v["file"]
                if not path.exists():
                    raise DatasetIOError(f"Missing image {path}")
                views.append(ViewRecord(file=path, pose=pose))
            record = SceneRecord(id=s["id"], seed=int(s["seed"]), split=s.get("split", "train"),
                                 normalization=norm, views=views)
        except (KeyError, TypeError) as e:
            raise DatasetIOError(f"Malformed scene entry in {root / MANIFEST_NAME}: {e}") from e
        if len(record.views) < 3:
            raise DatasetIOError(f"Scene {record.id} has {len(record.views)} views, need at least 3")
        scenes.append(record)
    size = tuple(int(x) for x in manifest.get("image_size", scenes[0].views[0].pose.image_size if scenes else (0, 0)))
    background = tuple(float(x) for x in manifest.get("background", (1.0, 1.0, 1.0)))
    return Dataset(root, scenes, size, background)


def load_mvimgnet_stub(root: Path) -> Dataset:
    """
    Attachment point for a real multi-view video loader: frames, SfM poses and the
    same unit-box normalization as generate_dataset. Not bundled.
    """
    raise DatasetIOError(f"No MVImgNet loader is bundled; convert {root} to manifest.json + PPM views first")


def load_shapenet_stub(root: Path) -> Dataset:
    """Attachment point for a ShapeNet-style renderings loader. Not bundled."""
    raise DatasetIOError(f"No ShapeNet loader is bundled; convert {root} to manifest.json + PPM views first")
