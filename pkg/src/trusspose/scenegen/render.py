"""Software rasterizer for the synthetic dataset.

Triangles are z-buffered with perspective-correct depth and flat-shaded per
face: intensity = ambient + (1 - ambient) * max(0, n . light). The harsh
single-light model with a tiny ambient floor reproduces in-space contrast:
surfaces are either lit or nearly black. Frames are rendered at a high
resolution (720x1280 by default) and box-downsampled to the training size.
"""

from __future__ import annotations

import numpy as np
from PIL import Image

from ..camera import BEHIND_EPS, CameraIntrinsics, transform_points
from ..geometry import Pose
from .mesh import MeshModel

DEFAULT_RENDER_SIZE = (720, 1280)  # (height, width)
DEFAULT_AMBIENT = 0.02


class ObjectOutOfFrame(ValueError):
    """No triangle rasterized to any pixel."""


class EmptyBBox(ValueError):
    """Bounding box too small to crop a bounded image from."""


def _rasterize(vertices_cam, triangles, shades, intrinsics: CameraIntrinsics):
    height, width = intrinsics.height, intrinsics.width
    depth_buf = np.full((height, width), np.inf, dtype=np.float64)
    image = np.zeros((height, width), dtype=np.float64)

    z = vertices_cam[:, 2]
    u = intrinsics.fx * vertices_cam[:, 0] / z + intrinsics.cx
    v = intrinsics.fy * vertices_cam[:, 1] / z + intrinsics.cy
    inv_z = 1.0 / z

    drew_any = False
    for tri, shade in zip(triangles, shades):
        if np.any(z[tri] <= BEHIND_EPS):
            continue  # no near-plane clipping; struts are either in front or skipped
        tu, tv = u[tri], v[tri]
        x0 = max(int(np.floor(tu.min())), 0)
        x1 = min(int(np.ceil(tu.max())), width - 1)
        y0 = max(int(np.floor(tv.min())), 0)
        y1 = min(int(np.ceil(tv.max())), height - 1)
        if x0 > x1 or y0 > y1:
            continue

        # signed area of the screen-space triangle; degenerate ones are skipped
        d01 = (tu[1] - tu[0], tv[1] - tv[0])
        d02 = (tu[2] - tu[0], tv[2] - tv[0])
        area = d01[0] * d02[1] - d01[1] * d02[0]
        if abs(area) < 1e-12:
            continue

        xs = np.arange(x0, x1 + 1, dtype=np.float64)
        ys = np.arange(y0, y1 + 1, dtype=np.float64)
        px, py = np.meshgrid(xs, ys)
        w1 = ((px - tu[0]) * d02[1] - (py - tv[0]) * d02[0]) / area
        w2 = ((py - tv[0]) * d01[0] - (px - tu[0]) * d01[1]) / area
        w0 = 1.0 - w1 - w2
        inside = (w0 >= 0) & (w1 >= 0) & (w2 >= 0)
        if not inside.any():
            continue

        pixel_inv_z = w0 * inv_z[tri[0]] + w1 * inv_z[tri[1]] + w2 * inv_z[tri[2]]
        pixel_depth = np.where(pixel_inv_z > 0, 1.0 / np.maximum(pixel_inv_z, 1e-300), np.inf)
        window_depth = depth_buf[y0 : y1 + 1, x0 : x1 + 1]
        win = inside & (pixel_depth < window_depth)
        if not win.any():
            continue
        window_depth[win] = pixel_depth[win]
        image[y0 : y1 + 1, x0 : x1 + 1][win] = shade
        drew_any = True

    return image, drew_any


def _box_downsample(image: np.ndarray, width: int, height: int) -> np.ndarray:
    pil = Image.fromarray(image.astype(np.float32), mode="F")
    return np.asarray(pil.resize((width, height), Image.BOX), dtype=np.float32)


def add_star_noise(image: np.ndarray, star_p: float, rng: np.random.Generator) -> np.ndarray:
    """Turn empty background pixels white with probability star_p (in place)."""
    stars = (rng.random(image.shape) < star_p) & (image == 0.0)
    image[stars] = 1.0
    return image


def render(
    mesh: MeshModel,
    pose: Pose,
    intrinsics: CameraIntrinsics,
    light_dir,
    ambient: float = DEFAULT_AMBIENT,
    render_size: tuple[int, int] = DEFAULT_RENDER_SIZE,
    star_p: float = 0.0,
    rng: np.random.Generator | None = None,
    return_hires: bool = False,
):
    """Render the mesh under a single directional light.

    ``intrinsics`` describes the output frame; rasterization happens at
    ``render_size`` (height, width) with rescaled intrinsics and the result
    is box-filtered down. ``light_dir`` points from the surface toward the
    light, in the camera frame. With ``star_p`` > 0, background pixels turn
    white with that probability (needs ``rng``). Returns (H, W) float32 in
    [0, 1], plus the noise-free high-resolution frame when ``return_hires``
    is set; raises ObjectOutOfFrame when nothing rasterizes.
    """
    light = np.asarray(light_dir, dtype=float)
    light = light / np.linalg.norm(light)

    hi_h, hi_w = render_size
    hi_intrinsics = intrinsics.scaled(hi_w, hi_h)

    cam_vertices = transform_points(pose, mesh.vertices)
    tri = cam_vertices[mesh.triangles]
    normals = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    lengths = np.linalg.norm(normals, axis=1, keepdims=True)
    normals = normals / np.maximum(lengths, 1e-300)
    shades = ambient + (1.0 - ambient) * np.maximum(0.0, normals @ light)

    hi_image, drew_any = _rasterize(cam_vertices, mesh.triangles, shades, hi_intrinsics)
    if not drew_any:
        raise ObjectOutOfFrame("no triangle rasterized to any pixel")

    image = _box_downsample(hi_image, intrinsics.width, intrinsics.height)
    image = np.clip(image, 0.0, 1.0)

    if star_p > 0.0:
        if rng is None:
            raise ValueError("star_p > 0 requires an rng")
        add_star_noise(image, star_p, rng)
    image = image.astype(np.float32)
    if return_hires:
        return image, hi_image.astype(np.float32)
    return image


def vertex_bbox(uv: np.ndarray, width: int, height: int):
    """Integer pixel rectangle [x0, y0, x1, y1) covering projected vertices."""
    finite = np.isfinite(uv).all(axis=1)
    if not finite.any():
        raise EmptyBBox("no projected vertex is in front of the camera")
    pts = uv[finite]
    x0 = int(np.clip(np.floor(pts[:, 0].min()), 0, width - 1))
    y0 = int(np.clip(np.floor(pts[:, 1].min()), 0, height - 1))
    x1 = int(np.clip(np.ceil(pts[:, 0].max()) + 1, 1, width))
    y1 = int(np.clip(np.ceil(pts[:, 1].max()) + 1, 1, height))
    if x1 <= x0 or y1 <= y0:
        raise EmptyBBox(f"degenerate bbox [{x0}, {y0}, {x1}, {y1})")
    return x0, y0, x1, y1


def make_bounded_image(
    image: np.ndarray, bbox, margin: float = 0.1, out_size: tuple[int, int] | None = None
) -> np.ndarray:
    """Crop the bbox (expanded by ``margin`` per side, clamped to the frame)
    and bilinearly resize back to ``out_size`` (defaults to the input size)."""
    arr = np.asarray(image)
    h, w = arr.shape[:2]
    x0, y0, x1, y1 = bbox
    pad_x = margin * (x1 - x0)
    pad_y = margin * (y1 - y0)
    cx0 = int(np.clip(round(x0 - pad_x), 0, w))
    cy0 = int(np.clip(round(y0 - pad_y), 0, h))
    cx1 = int(np.clip(round(x1 + pad_x), 0, w))
    cy1 = int(np.clip(round(y1 + pad_y), 0, h))
    if (cx1 - cx0) * (cy1 - cy0) < 4:
        raise EmptyBBox(f"bbox {bbox} with margin yields area < 4 px^2")

    out_h, out_w = out_size if out_size is not None else (h, w)
    crop = arr[cy0:cy1, cx0:cx1]
    if crop.ndim == 2:
        channels = [crop]
        squeeze = True
    else:
        channels = [crop[:, :, c] for c in range(crop.shape[2])]
        squeeze = False
    resized = [
        np.asarray(
            Image.fromarray(ch.astype(np.float32), mode="F").resize(
                (out_w, out_h), Image.BILINEAR
            ),
            dtype=np.float32,
        )
        for ch in channels
    ]
    if squeeze:
        return resized[0]
    return np.stack(resized, axis=2)
