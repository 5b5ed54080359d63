"""Pinhole projection and reprojection-based label validation.

The camera model is the classic K [I|0] pinhole with the perspective divide
and no lens distortion: a world point is moved into the camera frame with the
object pose (p_cam = R p + t), then u = fx*X/Z + cx, v = fy*Y/Z + cy.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np
from scipy import ndimage

from .geometry import Pose, rotation_matrix

BEHIND_EPS = 1e-6
# pixels with any signal count as object; background is exactly zero
MASK_THRESHOLD = 0.5 / 255.0
MIN_MASK_COMPONENT = 4  # isolated star-noise specks are smaller than this


class BehindCamera(ValueError):
    """Point has camera-frame depth at or below the near-plane epsilon."""


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole K matrix parameters plus sensor size, all in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError(f"focal lengths must be positive, got fx={self.fx} fy={self.fy}")
        if not (0 <= self.cx < self.width) or not (0 <= self.cy < self.height):
            raise ValueError(
                f"principal point ({self.cx}, {self.cy}) outside {self.width}x{self.height}"
            )

    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    def scaled(self, width: int, height: int) -> "CameraIntrinsics":
        """Intrinsics of the same camera at a resampled resolution."""
        sx = width / self.width
        sy = height / self.height
        return CameraIntrinsics(
            self.fx * sx, self.fy * sy, self.cx * sx, self.cy * sy, width, height
        )

    def frustum_planes(self, margin_px: float = 0.0) -> np.ndarray:
        """Inward unit normals of the four side planes of the view frustum.

        A point p is inside the (margin-inset) image frustum iff
        dot(n_i, p) >= 0 for all four rows.
        """
        lo_u, hi_u = margin_px, self.width - margin_px
        lo_v, hi_v = margin_px, self.height - margin_px
        planes = np.array(
            [
                [1.0, 0.0, (self.cx - lo_u) / self.fx],
                [-1.0, 0.0, (hi_u - self.cx) / self.fx],
                [0.0, 1.0, (self.cy - lo_v) / self.fy],
                [0.0, -1.0, (hi_v - self.cy) / self.fy],
            ]
        )
        return planes / np.linalg.norm(planes, axis=1, keepdims=True)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "CameraIntrinsics":
        return cls(**d)


def default_intrinsics(size: int = 224, focal: float = 100.0) -> CameraIntrinsics:
    """Square synthetic camera used by the dataset generator.

    The default focal length is wide enough that the whole default truss fits
    in frame at the nearest sampling distance (0.3 m).
    """
    return CameraIntrinsics(
        fx=focal, fy=focal, cx=size / 2.0, cy=size / 2.0, width=size, height=size
    )


@dataclass(frozen=True)
class PixelPoint:
    """Continuous pixel coordinates plus camera-frame depth (meters).

    Depth is recorded even when the point lands outside the image bounds;
    u and v are NaN for points behind the camera.
    """

    u: float
    v: float
    depth: float

    @property
    def behind(self) -> bool:
        return self.depth <= BEHIND_EPS

    def in_frame(self, intrinsics: CameraIntrinsics) -> bool:
        return (
            not self.behind
            and 0 <= self.u < intrinsics.width
            and 0 <= self.v < intrinsics.height
        )


def transform_points(pose: Pose, points: np.ndarray) -> np.ndarray:
    """Object-frame points (N, 3) into the camera frame."""
    R = rotation_matrix(pose.rotation)
    return np.asarray(points, dtype=float) @ R.T + pose.translation.as_array()


def project_points(intrinsics: CameraIntrinsics, pose: Pose, points: np.ndarray):
    """Vectorized projection; returns (uv (N, 2), depth (N,)).

    Points behind the camera get NaN pixel coordinates instead of raising.
    """
    cam = transform_points(pose, np.atleast_2d(points))
    depth = cam[:, 2]
    safe = np.where(depth > BEHIND_EPS, depth, np.nan)
    uv = np.empty((len(cam), 2))
    uv[:, 0] = intrinsics.fx * cam[:, 0] / safe + intrinsics.cx
    uv[:, 1] = intrinsics.fy * cam[:, 1] / safe + intrinsics.cy
    return uv, depth


def project(intrinsics: CameraIntrinsics, pose: Pose, p_world) -> PixelPoint:
    """Project a single object-frame point; raises BehindCamera for Z <= eps."""
    uv, depth = project_points(intrinsics, pose, np.asarray(p_world, dtype=float))
    if depth[0] <= BEHIND_EPS:
        raise BehindCamera(f"point has camera-frame depth {depth[0]:.3g} m")
    return PixelPoint(float(uv[0, 0]), float(uv[0, 1]), float(depth[0]))


def reproject_vertices(intrinsics: CameraIntrinsics, pose: Pose, mesh) -> list[PixelPoint]:
    """Project every mesh vertex; behind-camera vertices are flagged, not fatal."""
    uv, depth = project_points(intrinsics, pose, mesh.vertices)
    return [PixelPoint(float(u), float(v), float(d)) for (u, v), d in zip(uv, depth)]


def sphere_in_frustum(
    intrinsics: CameraIntrinsics, center, radius: float, margin_px: float = 0.0
) -> bool:
    """True when the whole sphere projects inside the (inset) image bounds."""
    center = np.asarray(center, dtype=float)
    if center[2] - radius <= BEHIND_EPS:
        return False
    planes = intrinsics.frustum_planes(margin_px)
    return bool(np.all(planes @ center >= radius))


def object_mask(image: np.ndarray, min_component: int = MIN_MASK_COMPONENT) -> np.ndarray:
    """Binary object mask from a rendered image.

    Any nonzero pixel is object or star noise; connected components smaller
    than min_component pixels are treated as stars and dropped.
    """
    gray = image.mean(axis=2) if image.ndim == 3 else image
    mask = gray > MASK_THRESHOLD
    labels, count = ndimage.label(mask)
    if count:
        sizes = ndimage.sum_labels(mask, labels, index=np.arange(1, count + 1))
        keep = np.flatnonzero(sizes >= min_component) + 1
        mask = np.isin(labels, keep)
    return mask


@dataclass
class ValidationReport:
    """Per-sample reprojection check result."""

    passed: bool
    fraction: float
    n_vertices: int
    n_inside: int
    n_in_frame: int
    overlay_path: str | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def validate_label(
    sample,
    mesh,
    intrinsics: CameraIntrinsics,
    pass_fraction: float = 0.95,
    dilation_px: int = 2,
    overlay_path=None,
) -> ValidationReport:
    """Check a sample's pose label by reprojecting mesh vertices into its image.

    The rendered object's pixel mask is dilated by dilation_px and the report
    carries the fraction of vertices landing inside it; the sample passes at
    pass_fraction or above. ``sample`` needs ``image`` (H, W[, C] floats in
    0..1) and ``pose`` attributes (see scenegen.Sample).
    """
    image = np.asarray(sample.image)
    h, w = image.shape[:2]
    mask = object_mask(image)
    if dilation_px > 0:
        size = 2 * dilation_px + 1
        mask = ndimage.binary_dilation(mask, structure=np.ones((size, size), bool))

    points = reproject_vertices(intrinsics, sample.pose, mesh)
    inside = []
    n_in_frame = 0
    for p in points:
        if p.behind or not np.isfinite(p.u) or not np.isfinite(p.v):
            inside.append(False)
            continue
        iu, iv = int(round(p.u)), int(round(p.v))
        if 0 <= iu < w and 0 <= iv < h:
            n_in_frame += 1
            inside.append(bool(mask[iv, iu]))
        else:
            inside.append(False)
    fraction = sum(inside) / max(len(points), 1)
    report = ValidationReport(
        passed=fraction >= pass_fraction,
        fraction=fraction,
        n_vertices=len(points),
        n_inside=sum(inside),
        n_in_frame=n_in_frame,
        overlay_path=str(overlay_path) if overlay_path else None,
    )
    if overlay_path is not None:
        _write_overlay(image, points, inside, overlay_path)
    return report


def _write_overlay(image, points, inside, path):
    from PIL import Image

    rgb = np.asarray(image)
    if rgb.ndim == 2:
        rgb = np.repeat(rgb[:, :, None], 3, axis=2)
    canvas = (np.clip(rgb, 0.0, 1.0) * 255).astype(np.uint8).copy()
    h, w = canvas.shape[:2]
    for p, ok in zip(points, inside):
        if p.behind or not np.isfinite(p.u) or not np.isfinite(p.v):
            continue
        iu, iv = int(round(p.u)), int(round(p.v))
        if 0 <= iu < w and 0 <= iv < h:
            canvas[iv, iu] = (0, 255, 0) if ok else (255, 0, 0)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(canvas).save(path)
