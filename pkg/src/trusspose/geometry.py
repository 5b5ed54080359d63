"""Quaternion and pose algebra plus the translation/rotation loss functions.

Quaternions are stored in (k, vx, vy, vz) order: scalar part first. A pose is
a translation in meters plus a unit quaternion, the seven-number label used
throughout the dataset and model code.

All functions here are pure and operate on immutable values; batch variants
take ``(N, 3)`` / ``(N, 4)`` float arrays and are what the training loop uses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

NORM_EPS = 1e-12
# |k| is clipped to 1 - ACOS_GRAD_CLIP inside gradients only, so the acos
# derivative stays finite near coincident rotations.
ACOS_GRAD_CLIP = 1e-7

# Rotation-difference conventions: "geodesic" compares against the conjugate
# (zero loss when prediction equals label); "paper" feeds the plain product's
# real part into the same fold, matching the printed source formula (zero
# loss when the prediction equals the label's conjugate).
ROTATION_CONVENTIONS = {"geodesic": True, "paper": False}


def convention_uses_conjugate(name: str) -> bool:
    try:
        return ROTATION_CONVENTIONS[name]
    except KeyError:
        raise ValueError(
            f"unknown rotation convention {name!r}; expected one of "
            f"{sorted(ROTATION_CONVENTIONS)}"
        ) from None


class DegenerateQuaternion(ValueError):
    """Quaternion magnitude too small to normalize (e.g. an untrained network output)."""


@dataclass(frozen=True)
class Quaternion:
    """Quaternion with real part ``k`` and imaginary part ``v``."""

    k: float
    v: tuple[float, float, float]

    def __post_init__(self):
        object.__setattr__(self, "k", float(self.k))
        object.__setattr__(self, "v", tuple(float(c) for c in self.v))
        if len(self.v) != 3:
            raise ValueError("imaginary part must have exactly 3 components")

    @classmethod
    def identity(cls) -> "Quaternion":
        return cls(1.0, (0.0, 0.0, 0.0))

    @classmethod
    def from_array(cls, arr) -> "Quaternion":
        arr = np.asarray(arr, dtype=float).reshape(4)
        return cls(arr[0], (arr[1], arr[2], arr[3]))

    def as_array(self) -> np.ndarray:
        return np.array([self.k, *self.v], dtype=float)

    def norm(self) -> float:
        return math.sqrt(self.k * self.k + sum(c * c for c in self.v))

    def conjugate(self) -> "Quaternion":
        return Quaternion(self.k, (-self.v[0], -self.v[1], -self.v[2]))

    def __neg__(self) -> "Quaternion":
        return Quaternion(-self.k, (-self.v[0], -self.v[1], -self.v[2]))

    def is_unit(self, tol: float = 1e-9) -> bool:
        return abs(self.k * self.k + sum(c * c for c in self.v) - 1.0) <= tol


@dataclass(frozen=True)
class Translation:
    """Offset in meters along the camera-frame x, y, z axes."""

    x: float
    y: float
    z: float

    def __post_init__(self):
        for name in ("x", "y", "z"):
            val = float(getattr(self, name))
            if not math.isfinite(val):
                raise ValueError(f"translation component {name} is not finite: {val}")
            object.__setattr__(self, name, val)

    @classmethod
    def from_array(cls, arr) -> "Translation":
        arr = np.asarray(arr, dtype=float).reshape(3)
        return cls(arr[0], arr[1], arr[2])

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=float)

    def norm(self) -> float:
        return math.sqrt(self.x * self.x + self.y * self.y + self.z * self.z)


@dataclass(frozen=True)
class Pose:
    """Object pose in the camera frame: translation plus unit rotation quaternion."""

    translation: Translation
    rotation: Quaternion

    def seven(self) -> np.ndarray:
        """The seven-number label: [tx, ty, tz, k, vx, vy, vz]."""
        return np.concatenate([self.translation.as_array(), self.rotation.as_array()])

    @classmethod
    def from_seven(cls, arr) -> "Pose":
        arr = np.asarray(arr, dtype=float).reshape(7)
        return cls(Translation.from_array(arr[:3]), Quaternion.from_array(arr[3:]))


def quat_multiply(a: Quaternion, b: Quaternion) -> Quaternion:
    """Hamilton product a*b."""
    k1, (x1, y1, z1) = a.k, a.v
    k2, (x2, y2, z2) = b.k, b.v
    return Quaternion(
        k1 * k2 - x1 * x2 - y1 * y2 - z1 * z2,
        (
            k1 * x2 + x1 * k2 + y1 * z2 - z1 * y2,
            k1 * y2 + y1 * k2 + z1 * x2 - x1 * z2,
            k1 * z2 + z1 * k2 + x1 * y2 - y1 * x2,
        ),
    )


def normalize(q: Quaternion) -> Quaternion:
    """Divide each component by the quaternion's magnitude.

    Raises DegenerateQuaternion when the magnitude is at or below 1e-12.
    """
    n = q.norm()
    if n <= NORM_EPS:
        raise DegenerateQuaternion(f"quaternion magnitude {n!r} too small to normalize")
    return Quaternion(q.k / n, (q.v[0] / n, q.v[1] / n, q.v[2] / n))


def rotation_matrix(q: Quaternion) -> np.ndarray:
    """3x3 rotation matrix of a unit quaternion."""
    k, (x, y, z) = q.k, q.v
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - k * z), 2 * (x * z + k * y)],
            [2 * (x * y + k * z), 1 - 2 * (x * x + z * z), 2 * (y * z - k * x)],
            [2 * (x * z - k * y), 2 * (y * z + k * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def random_unit_quaternion(rng: np.random.Generator) -> Quaternion:
    """Uniform rotation: normalized 4-dimensional Gaussian sample."""
    vec = rng.normal(size=4)
    return normalize(Quaternion(vec[0], tuple(vec[1:])))


_CONJ_SIGNS = np.array([1.0, -1.0, -1.0, -1.0])


def _hamilton(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Batched Hamilton product over (..., 4) arrays."""
    k1, x1, y1, z1 = np.moveaxis(a, -1, 0)
    k2, x2, y2, z2 = np.moveaxis(b, -1, 0)
    return np.stack(
        [
            k1 * k2 - x1 * x2 - y1 * y2 - z1 * z2,
            k1 * x2 + x1 * k2 + y1 * z2 - z1 * y2,
            k1 * y2 + y1 * k2 + z1 * x2 - x1 * z2,
            k1 * z2 + z1 * k2 + x1 * y2 - y1 * x2,
        ],
        axis=-1,
    )


def _folded_angle(Q: np.ndarray, q: np.ndarray, conjugate: bool) -> np.ndarray:
    """min(theta, 2*pi - theta) for theta = 2*acos(Re(Q*q)), unit inputs.

    Evaluated as 2*atan2(|vec|, |re|) of the full product, which is the same
    folded angle but stays accurate where acos is ill-conditioned (|re| -> 1).
    """
    prod = _hamilton(Q, q * _CONJ_SIGNS if conjugate else q)
    vec_norm = np.linalg.norm(prod[..., 1:], axis=-1)
    return 2.0 * np.arctan2(vec_norm, np.abs(prod[..., 0]))


def _product_real_part(Q: np.ndarray, q: np.ndarray, conjugate: bool) -> np.ndarray:
    """Real part of Q*q (or Q*conj(q)) for (..., 4) arrays of quaternions."""
    if conjugate:
        return np.sum(Q * q, axis=-1)
    return np.sum(Q * _CONJ_SIGNS * q, axis=-1)


def rotation_angle(Q: Quaternion, q: Quaternion, conjugate: bool = True) -> float:
    """Rotational difference angle between two unit quaternions, in [0, pi].

    With ``conjugate=True`` (default) the angle is the geodesic distance
    2*acos(|Q . q|), which is zero when the quaternions encode the same
    rotation. ``conjugate=False`` instead feeds the real part of the plain
    product Q*q into the same fold, the convention printed in the source
    formulation; it is zero when q matches the conjugate of Q. Both are valid
    distances as long as training and evaluation agree on the convention.
    """
    return float(_folded_angle(Q.as_array(), q.as_array(), conjugate))


def translation_loss(T: Translation, t: Translation) -> float:
    """Euclidean distance between actual translation T and prediction t."""
    return float(np.linalg.norm(T.as_array() - t.as_array()))


def rotation_loss(Q: Quaternion, q_raw: Quaternion, conjugate: bool = True) -> float:
    """Rotational difference between actual Q and raw predicted quaternion.

    The prediction is normalized to a unit quaternion first, then the folded
    difference angle is computed; see rotation_angle for the convention flag.
    """
    return rotation_angle(Q, normalize(q_raw), conjugate=conjugate)


def combined_loss(l_t: float, l_r: float, beta: float = 10.0) -> float:
    """Total loss L_T + beta * L_R."""
    return float(l_t) + float(beta) * float(l_r)


# ---------------------------------------------------------------------------
# Batch losses with analytic gradients (what the training loop consumes).
# ---------------------------------------------------------------------------


def translation_loss_batch(T: np.ndarray, t: np.ndarray):
    """Per-sample Euclidean loss and its gradient w.r.t. the prediction.

    T, t: (N, 3) actual and predicted translations.
    Returns (loss (N,), grad (N, 3)).
    """
    T = np.asarray(T, dtype=float)
    t = np.asarray(t, dtype=float)
    diff = t - T
    loss = np.linalg.norm(diff, axis=-1)
    # Subgradient 0 at the (non-differentiable) exact match.
    safe = np.maximum(loss, NORM_EPS)
    grad = diff / safe[:, None]
    grad[loss <= NORM_EPS] = 0.0
    return loss, grad


def rotation_loss_batch(Q: np.ndarray, q_raw: np.ndarray, conjugate: bool = True):
    """Per-sample folded rotation loss and its gradient w.r.t. the raw prediction.

    Q: (N, 4) unit label quaternions; q_raw: (N, 4) unnormalized predictions.
    The gradient flows through the normalization map, with the acos derivative
    clipped at |k| = 1 - 1e-7 to stay finite near coincident rotations.
    Returns (loss (N,), grad (N, 4)).
    """
    Q = np.asarray(Q, dtype=float)
    q_raw = np.asarray(q_raw, dtype=float)
    n = np.linalg.norm(q_raw, axis=-1)
    bad = np.nonzero(n <= NORM_EPS)[0]
    if bad.size:
        raise DegenerateQuaternion(
            f"prediction {bad[0]} has quaternion magnitude {n[bad[0]]!r}"
        )
    q_hat = q_raw / n[:, None]
    w = Q if conjugate else Q * _CONJ_SIGNS
    k = np.sum(w * q_hat, axis=-1)
    loss = _folded_angle(Q, q_hat, conjugate)

    # dL/dk = -2*sign(k)/sqrt(1-k^2): the fold flips the acos branch for k < 0.
    k_clipped = np.clip(k, -(1.0 - ACOS_GRAD_CLIP), 1.0 - ACOS_GRAD_CLIP)
    sign = np.where(k >= 0.0, 1.0, -1.0)
    dl_dk = -2.0 * sign / np.sqrt(1.0 - k_clipped * k_clipped)
    # dk/dq_raw through the normalization map: (w - k*q_hat) / n.
    dk_dq = (w - k[:, None] * q_hat) / n[:, None]
    return loss, dl_dk[:, None] * dk_dq


def combined_loss_batch(
    T: np.ndarray,
    t: np.ndarray,
    Q: np.ndarray,
    q_raw: np.ndarray,
    beta: float = 10.0,
    conjugate: bool = True,
):
    """Per-sample combined loss L_T + beta*L_R with gradients for both heads.

    Returns (loss (N,), l_t (N,), l_r (N,), grad_t (N, 3), grad_q (N, 4)).
    """
    l_t, grad_t = translation_loss_batch(T, t)
    l_r, grad_q = rotation_loss_batch(Q, q_raw, conjugate=conjugate)
    return l_t + beta * l_r, l_t, l_r, grad_t, beta * grad_q
