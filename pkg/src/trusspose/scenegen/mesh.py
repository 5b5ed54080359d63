"""Triangle-mesh model of the asymmetric truss target.

The truss is a rectangular lattice of box-shaped struts: four longitudinal
chords, vertical posts and cross beams at evenly spaced stations, and
alternating diagonals on the top and bottom faces. One corner post is left
out so that no 180-degree rotation about a principal axis maps the shape
onto itself, which keeps pose labels unambiguous.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

ASYMMETRY_MIN_DISTANCE = 1e-3


class InvalidDimensions(ValueError):
    """Requested truss dimensions cannot produce a valid lattice."""


def _directed_hausdorff(a: np.ndarray, b: np.ndarray) -> float:
    return float(cdist(a, b).min(axis=1).max())


def asymmetry_margin(vertices: np.ndarray) -> float:
    """Smallest directed Hausdorff distance to the vertex set after a
    180-degree rotation about each principal axis."""
    flips = [np.diag(s) for s in ((1, -1, -1), (-1, 1, -1), (-1, -1, 1))]
    return min(_directed_hausdorff(vertices @ f.T, vertices) for f in flips)


@dataclass(frozen=True, eq=False)
class MeshModel:
    """Watertight-enough triangle soup in the object frame (meters)."""

    vertices: np.ndarray
    triangles: np.ndarray
    name: str = "mesh"

    def __post_init__(self):
        vertices = np.ascontiguousarray(self.vertices, dtype=float)
        triangles = np.ascontiguousarray(self.triangles, dtype=np.int64)
        object.__setattr__(self, "vertices", vertices)
        object.__setattr__(self, "triangles", triangles)
        if vertices.ndim != 2 or vertices.shape[1] != 3:
            raise ValueError(f"vertices must be (V, 3), got {vertices.shape}")
        if triangles.ndim != 2 or triangles.shape[1] != 3:
            raise ValueError(f"triangles must be (T, 3), got {triangles.shape}")
        if triangles.size and (triangles.min() < 0 or triangles.max() >= len(vertices)):
            raise ValueError("triangle indices out of range")
        margin = asymmetry_margin(vertices)
        if margin <= ASYMMETRY_MIN_DISTANCE:
            raise ValueError(
                f"mesh is near-symmetric under a 180-degree principal rotation "
                f"(margin {margin:.2g} m); pose labels would be ambiguous"
            )

    @property
    def bounding_radius(self) -> float:
        return float(np.linalg.norm(self.vertices, axis=1).max())

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def face_normals(self) -> np.ndarray:
        tri = self.vertices[self.triangles]
        n = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
        lengths = np.linalg.norm(n, axis=1, keepdims=True)
        return n / np.maximum(lengths, 1e-300)


# Box corners indexed as p0 +/- a +/- b (0..3) then p1 +/- a +/- b (4..7);
# windings are normalized outward afterwards by _orient_outward.
_BOX_TRIANGLES = np.array(
    [
        (0, 1, 3), (0, 3, 2),
        (4, 7, 5), (4, 6, 7),
        (0, 5, 1), (0, 4, 5),
        (2, 3, 7), (2, 7, 6),
        (0, 2, 6), (0, 6, 4),
        (1, 5, 7), (1, 7, 3),
    ],
    dtype=np.int64,
)


def _strut(start, end, thickness: float):
    """Oriented box of square cross-section between two end points."""
    start = np.asarray(start, dtype=float)
    end = np.asarray(end, dtype=float)
    axis = end - start
    length = np.linalg.norm(axis)
    if length <= 0:
        raise InvalidDimensions("strut has zero length")
    axis = axis / length
    helper = np.array([0.0, 0.0, 1.0])
    if abs(axis @ helper) > 0.9:
        helper = np.array([0.0, 1.0, 0.0])
    n1 = np.cross(axis, helper)
    n1 /= np.linalg.norm(n1)
    n2 = np.cross(axis, n1)
    a = n1 * (thickness / 2.0)
    b = n2 * (thickness / 2.0)
    corners = np.array(
        [p + sa * a + sb * b for p in (start, end) for sa in (-1, 1) for sb in (-1, 1)]
    )
    return corners, _BOX_TRIANGLES.copy()


def _orient_outward(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    """Flip any triangle whose normal points toward the box centroid."""
    center = vertices.mean(axis=0)
    tri = vertices[triangles]
    normals = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    outward = np.einsum("ij,ij->i", normals, tri.mean(axis=1) - center)
    flipped = triangles.copy()
    flip = outward < 0
    flipped[flip] = flipped[flip][:, [0, 2, 1]]
    return flipped


def build_truss(
    length: float = 0.38,
    width: float = 0.2,
    depth: float = 0.05,
    bays: int = 4,
    thickness_ratio: float = 0.45,
    name: str = "truss",
) -> MeshModel:
    """Truss lattice with the given outer bounding dimensions (meters).

    The axis-aligned bounding box is exactly length x width x depth; one
    corner post is removed so the shape has no 180-degree rotational
    symmetry about any principal axis.
    """
    if length <= 0 or width <= 0 or depth <= 0:
        raise InvalidDimensions(
            f"dimensions must be positive, got {length} x {width} x {depth}"
        )
    if bays < 1:
        raise InvalidDimensions(f"need at least one bay, got {bays}")
    t = thickness_ratio * min(width, depth)
    if t >= min(width, depth) or 2 * t >= length:
        raise InvalidDimensions(
            f"strut thickness {t:.3g} too large for {length} x {width} x {depth}"
        )

    y_side = (width - t) / 2.0
    z_side = (depth - t) / 2.0
    stations = np.linspace(-(length - t) / 2.0, (length - t) / 2.0, bays + 1)

    struts = []
    # longitudinal chords at the four corners of the cross-section
    for ys in (-y_side, y_side):
        for zs in (-z_side, z_side):
            struts.append(((-length / 2.0, ys, zs), (length / 2.0, ys, zs)))
    # vertical posts, skipping one corner for asymmetry
    for i, xs in enumerate(stations):
        for ys in (-y_side, y_side):
            if i == 0 and ys > 0:
                continue  # the removed corner strut
            struts.append(((xs, ys, -z_side), (xs, ys, z_side)))
    # cross beams between the two side faces
    for xs in stations:
        for zs in (-z_side, z_side):
            struts.append(((xs, -y_side, zs), (xs, y_side, zs)))
    # alternating diagonals on the top and bottom faces
    for i in range(bays):
        sign = 1 if i % 2 == 0 else -1
        struts.append(
            ((stations[i], -sign * y_side, z_side), (stations[i + 1], sign * y_side, z_side))
        )
        struts.append(
            ((stations[i], sign * y_side, -z_side), (stations[i + 1], -sign * y_side, -z_side))
        )

    all_vertices = []
    all_triangles = []
    offset = 0
    for start, end in struts:
        verts, tris = _strut(start, end, t)
        tris = _orient_outward(verts, tris)
        all_vertices.append(verts)
        all_triangles.append(tris + offset)
        offset += len(verts)
    return MeshModel(
        vertices=np.vstack(all_vertices),
        triangles=np.vstack(all_triangles),
        name=name,
    )
