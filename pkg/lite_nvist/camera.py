"""
Pinhole cameras, scene normalization, relative poses and camera conditioning.

Conventions: camera-to-world rotation, camera looks along its +z axis, image x to the
right and y down, pixel centers at +0.5. Focal lengths are stored normalized by image
width.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .common import ContractError, NormalizationError, ValidationError

ORTHO_TOL = 1e-6
N_FREQS = 4
COND_DIM = 2 + 4 * N_FREQS


# =========================
# Types
# =========================

@dataclass(frozen=True)
class CameraPose:
    rotation: np.ndarray                 # (3, 3) camera-to-world
    center: np.ndarray                   # (3,) camera position
    focal: float                         # focal pixels / image width
    principal_point: Tuple[float, float]
    image_size: Tuple[int, int]          # (width, height)

    @property
    def width(self) -> int:
        return int(self.image_size[0])

    @property
    def height(self) -> int:
        return int(self.image_size[1])

    @property
    def focal_px(self) -> float:
        return self.focal * self.width

    def validate(self) -> "CameraPose":
        check_rotation(self.rotation)
        if not np.all(np.isfinite(self.center)) or np.shape(self.center) != (3,):
            raise ValidationError(f"camera center must be a finite 3-vector, got {self.center!r}")
        if not self.focal > 0:
            raise ValidationError(f"focal must be positive, got {self.focal}")
        if self.width <= 0 or self.height <= 0:
            raise ValidationError(f"image size must be positive, got {self.image_size}")
        return self


@dataclass(frozen=True)
class SceneNormalization:
    """p_normalized = scale * (p + translation)"""

    scale: float
    translation: np.ndarray
    z: float

    def apply_points(self, points: np.ndarray) -> np.ndarray:
        return self.scale * (np.asarray(points, dtype=np.float64) + self.translation)

    def apply_pose(self, pose: CameraPose) -> CameraPose:
        return replace(pose, center=self.apply_points(pose.center))


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray
    t_near: float = 0.0
    t_far: float = np.inf


@dataclass
class RayBundle:
    """Struct-of-arrays form of many rays."""

    origins: np.ndarray                        # (P, 3)
    directions: np.ndarray                     # (P, 3), unit
    t_near: Optional[np.ndarray] = None        # (P,)
    t_far: Optional[np.ndarray] = None         # (P,)
    hit: Optional[np.ndarray] = field(default=None)  # (P,) bool

    def __len__(self) -> int:
        return self.origins.shape[0]

    def ray(self, i: int) -> Ray:
        tn = float(self.t_near[i]) if self.t_near is not None else 0.0
        tf = float(self.t_far[i]) if self.t_far is not None else np.inf
        return Ray(self.origins[i], self.directions[i], tn, tf)


# =========================
# Rotations
# =========================

def check_rotation(rotation: np.ndarray, tol: float = ORTHO_TOL) -> None:
    r = np.asarray(rotation, dtype=np.float64)
    if r.shape != (3, 3):
        raise ValidationError(f"rotation must be 3x3, got shape {r.shape}")
    if not np.allclose(r.T @ r, np.eye(3), atol=tol) or abs(np.linalg.det(r) - 1.0) > tol:
        raise ValidationError("rotation is not orthonormal with det +1")


def rotation_y(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def look_at(center: Sequence[float], target: Sequence[float] = (0.0, 0.0, 0.0),
            up: Sequence[float] = (0.0, 1.0, 0.0)) -> np.ndarray:
    """Camera-to-world rotation whose +z points from center to target, image y down."""
    center = np.asarray(center, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - center
    norm = np.linalg.norm(forward)
    if norm == 0:
        raise ValidationError("look_at: camera center coincides with target")
    forward /= norm
    right = np.cross(forward, -np.asarray(up, dtype=np.float64))
    rn = np.linalg.norm(right)
    if rn < 1e-9:
        raise ValidationError("look_at: viewing direction is parallel to the up vector")
    right /= rn
    down = np.cross(forward, right)
    return np.stack([right, down, forward], axis=1)


def conditioned_center(z: float) -> np.ndarray:
    """Where the input camera sits in the relative frame: on the optical axis, distance z behind the origin."""
    return np.array([0.0, 0.0, -float(z)])


# =========================
# Scene normalization
# =========================

def normalize_scene(points: np.ndarray, poses: Sequence[CameraPose],
                    input_index: int = 0) -> Tuple[SceneNormalization, List[CameraPose]]:
    """
    Center the bounding box of `points` at the origin and rescale so its longest
    axis is 1. Camera centers move with the points; rotations are unchanged.
    """
    if len(poses) < 2:
        raise ValidationError(f"normalize_scene needs at least 2 poses, got {len(poses)}")
    if not 0 <= input_index < len(poses):
        raise ValidationError(f"input_index {input_index} out of range for {len(poses)} poses")
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    extent = hi - lo
    if np.any(extent <= 0):
        raise NormalizationError(f"degenerate point cloud, bounding box extent {extent.tolist()}")
    scale = 1.0 / float(extent.max())
    translation = -(lo + hi) / 2.0
    norm = SceneNormalization(scale=scale, translation=translation, z=0.0)
    new_poses = [norm.apply_pose(p) for p in poses]
    z = float(np.linalg.norm(new_poses[input_index].center))
    if z <= 0:
        raise NormalizationError("input camera sits at the scene centroid (z = 0)")
    return replace(norm, z=z), new_poses


# =========================
# Relative pose
# =========================

def relativize_pose(input_pose: CameraPose, target: CameraPose, z: float) -> CameraPose:
    """
    Express `target` in the frame where the input camera has identity rotation and
    sits at conditioned_center(z).
    """
    check_rotation(input_pose.rotation)
    check_rotation(target.rotation)
    if not z > 0:
        raise ValidationError(f"z must be positive, got {z}")
    r_in_t = np.asarray(input_pose.rotation, dtype=np.float64).T
    if np.array_equal(input_pose.rotation, target.rotation):
        rotation = np.eye(3)
    else:
        rotation = r_in_t @ np.asarray(target.rotation, dtype=np.float64)
    center = r_in_t @ (np.asarray(target.center, dtype=np.float64) - input_pose.center) + conditioned_center(z)
    return replace(target, rotation=rotation, center=center)


# =========================
# Conditioning
# =========================

def encode_conditioning(f: float, z: float, allow_zero: bool = False) -> np.ndarray:
    """(f, z) followed by sin/cos of 2^k f and 2^k z for k = 1..4; 18 values."""
    if not allow_zero and (not f > 0 or not z > 0):
        raise ValidationError(f"conditioning needs f > 0 and z > 0, got f={f}, z={z}")
    out = [float(f), float(z)]
    for k in range(1, N_FREQS + 1):
        s = 2.0 ** k
        out += [np.sin(s * f), np.cos(s * f), np.sin(s * z), np.cos(s * z)]
    return np.asarray(out, dtype=np.float64)


# =========================
# Rays
# =========================

def pixel_grid(width: int, height: int) -> np.ndarray:
    """All (u, v) integer pixel coordinates in row-major order, shape (H*W, 2)."""
    v, u = np.meshgrid(np.arange(height), np.arange(width), indexing="ij")
    return np.stack([u.reshape(-1), v.reshape(-1)], axis=1)


def generate_rays(pose: CameraPose, pixels: np.ndarray) -> RayBundle:
    pixels = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    u, v = pixels[:, 0], pixels[:, 1]
    if np.any(u < 0) or np.any(v < 0) or np.any(u >= pose.width) or np.any(v >= pose.height):
        raise ContractError(f"pixel coordinates outside image {pose.image_size}")
    cx, cy = pose.principal_point
    fpx = pose.focal_px
    d_cam = np.stack([(u + 0.5 - cx) / fpx, (v + 0.5 - cy) / fpx, np.ones_like(u)], axis=1)
    d_cam /= np.linalg.norm(d_cam, axis=1, keepdims=True)
    dirs = d_cam @ np.asarray(pose.rotation, dtype=np.float64).T
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    origins = np.broadcast_to(np.asarray(pose.center, dtype=np.float64), dirs.shape).copy()
    return RayBundle(origins=origins, directions=dirs)


def project_points(pose: CameraPose, points: np.ndarray) -> np.ndarray:
    """World points (P, 3) -> continuous pixel coordinates (P, 2) on the integer pixel lattice."""
    cam = (np.asarray(points, dtype=np.float64) - pose.center) @ np.asarray(pose.rotation)
    cx, cy = pose.principal_point
    fpx = pose.focal_px
    u = fpx * cam[:, 0] / cam[:, 2] + cx - 0.5
    v = fpx * cam[:, 1] / cam[:, 2] + cy - 0.5
    return np.stack([u, v], axis=1)


def intersect_box(origins: np.ndarray, directions: np.ndarray, lo: Sequence[float],
                  hi: Sequence[float]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Slab test for many rays. Returns (t_near, t_far, hit); t_near is clamped to >= 0."""
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    if np.any(hi <= lo):
        raise ContractError(f"box must have positive volume, got {lo.tolist()} .. {hi.tolist()}")
    o = np.asarray(origins, dtype=np.float64)
    d = np.asarray(directions, dtype=np.float64)
    parallel = np.abs(d) < 1e-12
    safe = np.where(parallel, 1.0, d)
    t1 = (lo - o) / safe
    t2 = (hi - o) / safe
    tmin = np.where(parallel, -np.inf, np.minimum(t1, t2))
    tmax = np.where(parallel, np.inf, np.maximum(t1, t2))
    # a ray parallel to a slab misses unless its origin lies inside that slab
    outside = parallel & ((o < lo) | (o > hi))
    t_near = np.maximum(tmin.max(axis=1), 0.0)
    t_far = tmax.min(axis=1)
    # spans that only graze an edge or corner are misses
    hit = (~outside.any(axis=1)) & ((t_far - t_near) > 1e-9 * np.maximum(1.0, np.abs(t_far)))
    return t_near, t_far, hit


def ray_box_intersect(ray: Ray, lo: Sequence[float] = (-1, -1, -1),
                      hi: Sequence[float] = (1, 1, 1)) -> Optional[Tuple[float, float]]:
    t_near, t_far, hit = intersect_box(ray.origin[None], ray.direction[None], lo, hi)
    if not hit[0]:
        return None
    return float(t_near[0]), float(t_far[0])


def bound_rays(rays: RayBundle, lo: Sequence[float], hi: Sequence[float]) -> RayBundle:
    t_near, t_far, hit = intersect_box(rays.origins, rays.directions, lo, hi)
    return replace(rays, t_near=t_near, t_far=t_far, hit=hit)


# =========================
# Pose helpers
# =========================

def default_principal(width: int, height: int) -> Tuple[float, float]:
    return (width / 2.0, height / 2.0)


def orbit_poses(n: int, z: float, focal: float, image_size: Tuple[int, int],
                elevation: float = 0.0) -> List[CameraPose]:
    """
    n relative poses on a circle about the y axis through the origin, starting at the
    input camera (identity rotation at conditioned_center(z)).
    """
    width, height = image_size
    poses = []
    tilt = np.array([[1.0, 0.0, 0.0],
                     [0.0, np.cos(elevation), -np.sin(elevation)],
                     [0.0, np.sin(elevation), np.cos(elevation)]])
    for i in range(n):
        rot = rotation_y(2.0 * np.pi * i / n) @ tilt
        poses.append(CameraPose(rotation=rot, center=rot @ conditioned_center(z), focal=focal,
                                principal_point=default_principal(width, height),
                                image_size=(width, height)))
    return poses
