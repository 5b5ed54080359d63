"""Synthetic labeled dataset generation.

Directory layout:
    manifest.json
    images/NNNNNN.png     full frame, RGB
    bounded/NNNNNN.png    object crop resized to the frame size
    labels/NNNNNN.json    pose as [tx, ty, tz, k, vx, vy, vz], bbox, split

Every sample is derived from a per-index child of the manifest seed, so
regeneration from the manifest seed is byte-identical and generation could
be parallelized over indices.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .. import camera as cam
from ..geometry import Pose, Quaternion, Translation, random_unit_quaternion
from .mesh import MeshModel, build_truss
from .render import add_star_noise, make_bounded_image, render, vertex_bbox

MANIFEST_NAME = "manifest.json"


class DatasetGenerationError(RuntimeError):
    """Rendering or validation failed for a specific sample index."""


@dataclass(frozen=True)
class DatasetConfig:
    """Everything needed to regenerate a dataset byte-for-byte."""

    count: int = 5000
    seed: int = 0
    image_size: int = 64
    focal_224: float = 100.0  # focal length in pixels at a 224px frame
    distance_range: tuple[float, float] = (0.3, 1.0)
    split_fraction: float = 0.8
    star_p: float = 0.001
    ambient: float = 0.02
    render_size: tuple[int, int] = (720, 1280)
    truss_length: float = 0.38
    truss_width: float = 0.2
    truss_depth: float = 0.05
    truss_bays: int = 4
    truss_thickness_ratio: float = 0.45
    frame_margin_px: float = 0.25
    # "fixed" = one sun direction for the whole dataset; "random" = a fresh
    # camera-side hemisphere direction per sample
    light_mode: str = "fixed"
    fixed_light: tuple[float, float, float] = (0.35, -0.45, -0.82)

    def intrinsics(self) -> cam.CameraIntrinsics:
        focal = self.focal_224 * self.image_size / 224.0
        return cam.default_intrinsics(self.image_size, focal)

    def mesh(self) -> MeshModel:
        return build_truss(
            self.truss_length,
            self.truss_width,
            self.truss_depth,
            bays=self.truss_bays,
            thickness_ratio=self.truss_thickness_ratio,
        )

    def to_dict(self) -> dict:
        return {
            "count": self.count,
            "seed": self.seed,
            "image_size": self.image_size,
            "focal_224": self.focal_224,
            "distance_range": list(self.distance_range),
            "split_fraction": self.split_fraction,
            "star_p": self.star_p,
            "ambient": self.ambient,
            "render_size": list(self.render_size),
            "truss_length": self.truss_length,
            "truss_width": self.truss_width,
            "truss_depth": self.truss_depth,
            "truss_bays": self.truss_bays,
            "truss_thickness_ratio": self.truss_thickness_ratio,
            "frame_margin_px": self.frame_margin_px,
            "light_mode": self.light_mode,
            "fixed_light": list(self.fixed_light),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetConfig":
        d = dict(d)
        d["distance_range"] = tuple(d["distance_range"])
        d["render_size"] = tuple(d["render_size"])
        d["fixed_light"] = tuple(d["fixed_light"])
        return cls(**d)


@dataclass
class Sample:
    """One rendered, labeled sample."""

    index: int
    image: np.ndarray         # (H, W, 3) float32 in [0, 1]
    bounded_image: np.ndarray  # same shape, crop of the object region
    pose: Pose
    bbox: tuple[int, int, int, int]
    distance: float
    split: str = "train"


class PoseSampler:
    """Draws object poses visible in full inside the camera frame.

    The distance is uniform over ``distance_range`` by construction: it is
    drawn once, then only the viewing direction is rejection-sampled until
    the object's bounding sphere fits inside the (margin-inset) frustum.
    Rotations are uniform on SO(3) via normalized 4D Gaussian samples.
    """

    MAX_TRIES = 200_000

    def __init__(self, intrinsics, object_radius, distance_range=(0.3, 1.0), margin_px=0.25):
        self.intrinsics = intrinsics
        self.object_radius = float(object_radius)
        self.distance_range = distance_range
        self.margin_px = float(margin_px)
        lo = distance_range[0]
        if lo <= self.object_radius:
            raise ValueError(
                f"nearest distance {lo} must exceed object radius {self.object_radius}"
            )
        if not cam.sphere_in_frustum(
            intrinsics, [0.0, 0.0, lo], self.object_radius, margin_px
        ):
            raise ValueError(
                f"object of radius {self.object_radius:.3f} m cannot fit in frame at "
                f"{lo} m even when centered; widen the field of view"
            )

    def sample(self, rng: np.random.Generator) -> Pose:
        K = self.intrinsics
        distance = rng.uniform(*self.distance_range)
        for _ in range(self.MAX_TRIES):
            u = rng.uniform(0.0, K.width)
            v = rng.uniform(0.0, K.height)
            direction = np.array([(u - K.cx) / K.fx, (v - K.cy) / K.fy, 1.0])
            direction /= np.linalg.norm(direction)
            center = distance * direction
            if cam.sphere_in_frustum(K, center, self.object_radius, self.margin_px):
                rotation = random_unit_quaternion(rng)
                return Pose(Translation(*center), rotation)
        raise RuntimeError(
            f"no visible pose found at distance {distance:.3f} m after "
            f"{self.MAX_TRIES} direction draws"
        )


def sample_pose(rng: np.random.Generator, sampler: PoseSampler) -> Pose:
    return sampler.sample(rng)


def random_light_direction(rng: np.random.Generator) -> np.ndarray:
    """Random light direction (surface toward light, camera frame).

    Uniform over the camera-side hemisphere (z <= 0): the sun is never
    directly behind the object, so camera-facing surfaces range from fully
    lit to grazing side light, while faces turned away stay at the ambient
    floor. Fully backlit silhouettes would carry almost no orientation
    signal at desk-scale training sizes.
    """
    vec = rng.normal(size=3)
    vec /= np.linalg.norm(vec)
    vec[2] = -abs(vec[2])
    return vec


def _sample_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0, index)))


def _split_assignment(seed: int, count: int, split_fraction: float) -> list[str]:
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1,)))
    perm = rng.permutation(count)
    n_train = int(round(split_fraction * count))
    split = np.empty(count, dtype=object)
    split[perm[:n_train]] = "train"
    split[perm[n_train:]] = "test"
    return list(split)


def _to_uint8(image: np.ndarray) -> np.ndarray:
    return np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8)


def _save_rgb(path: Path, image: np.ndarray) -> None:
    arr = _to_uint8(image)
    if arr.ndim == 2:
        arr = np.repeat(arr[:, :, None], 3, axis=2)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr, mode="RGB").save(path)


def _load_rgb_u8(path: Path) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.uint8)


def render_sample(config: DatasetConfig, index: int, mesh=None, sampler=None,
                  split: str = "train") -> tuple[Sample, np.ndarray]:
    """Generate one sample deterministically from (config.seed, index).

    Returns (sample, light_dir). Raises DatasetGenerationError on failure.
    """
    mesh = mesh if mesh is not None else config.mesh()
    intrinsics = config.intrinsics()
    if sampler is None:
        sampler = PoseSampler(
            intrinsics, mesh.bounding_radius, config.distance_range, config.frame_margin_px
        )
    rng = _sample_rng(config.seed, index)
    pose = sampler.sample(rng)
    if config.light_mode == "random":
        light = random_light_direction(rng)
    else:
        light = np.asarray(config.fixed_light, dtype=float)
        light = light / np.linalg.norm(light)
    try:
        gray, hires = render(
            mesh,
            pose,
            intrinsics,
            light,
            ambient=config.ambient,
            render_size=config.render_size,
            star_p=config.star_p,
            rng=rng,
            return_hires=True,
        )
        image = np.repeat(gray[:, :, None], 3, axis=2)
        uv, _ = cam.project_points(intrinsics, pose, mesh.vertices)
        bbox = vertex_bbox(uv, intrinsics.width, intrinsics.height)
        # crop the object region from the high-resolution frame so the
        # bounded image keeps detail that the full-frame downsample loses
        sx = hires.shape[1] / intrinsics.width
        sy = hires.shape[0] / intrinsics.height
        hi_bbox = (bbox[0] * sx, bbox[1] * sy, bbox[2] * sx, bbox[3] * sy)
        bounded_gray = make_bounded_image(
            hires, hi_bbox, out_size=(intrinsics.height, intrinsics.width)
        )
        bounded_gray = np.clip(bounded_gray, 0.0, 1.0)
        if config.star_p > 0.0:
            add_star_noise(bounded_gray, config.star_p, rng)
        bounded = np.repeat(bounded_gray[:, :, None], 3, axis=2)
    except ValueError as exc:
        raise DatasetGenerationError(f"sample {index}: {exc}") from exc
    sample = Sample(
        index=index,
        image=image,
        bounded_image=bounded,
        pose=pose,
        bbox=bbox,
        distance=pose.translation.norm(),
        split=split,
    )
    return sample, light


@dataclass
class DatasetManifest:
    config: DatasetConfig
    records: list[dict] = field(default_factory=list)
    version: int = 1

    def to_dict(self) -> dict:
        return {"version": self.version, "config": self.config.to_dict(),
                "records": self.records}

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetManifest":
        return cls(
            config=DatasetConfig.from_dict(d["config"]),
            records=list(d["records"]),
            version=d.get("version", 1),
        )

    def save(self, path: Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        return cls.from_dict(json.loads(Path(path).read_text()))


def generate_dataset(config: DatasetConfig, out_dir, progress=None) -> DatasetManifest:
    """Generate, validate, and write the full dataset; returns the manifest."""
    out_dir = Path(out_dir)
    mesh = config.mesh()
    intrinsics = config.intrinsics()
    sampler = PoseSampler(
        intrinsics, mesh.bounding_radius, config.distance_range, config.frame_margin_px
    )
    splits = _split_assignment(config.seed, config.count, config.split_fraction)

    records = []
    for i in range(config.count):
        sample, light = render_sample(config, i, mesh=mesh, sampler=sampler,
                                      split=splits[i])
        report = cam.validate_label(sample, mesh, intrinsics)
        if not report.passed:
            raise DatasetGenerationError(
                f"sample {i}: reprojection validation failed "
                f"(fraction {report.fraction:.3f})"
            )
        stem = f"{i:06d}"
        image_rel = f"images/{stem}.png"
        bounded_rel = f"bounded/{stem}.png"
        label_rel = f"labels/{stem}.json"
        _save_rgb(out_dir / image_rel, sample.image)
        _save_rgb(out_dir / bounded_rel, sample.bounded_image)
        pose7 = [float(x) for x in sample.pose.seven()]
        label = {
            "index": i,
            "pose": pose7,
            "bbox": [int(b) for b in sample.bbox],
            "distance": float(sample.distance),
            "split": sample.split,
        }
        label_path = out_dir / label_rel
        label_path.parent.mkdir(parents=True, exist_ok=True)
        label_path.write_text(json.dumps(label, sort_keys=True) + "\n")
        records.append(
            {
                "index": i,
                "image": image_rel,
                "bounded": bounded_rel,
                "label": label_rel,
                "pose": pose7,
                "bbox": [int(b) for b in sample.bbox],
                "distance": float(sample.distance),
                "split": sample.split,
                "light_dir": [float(x) for x in light],
                "validation_fraction": report.fraction,
            }
        )
        if progress is not None:
            progress(i + 1, config.count)

    manifest = DatasetManifest(config=config, records=records)
    manifest.save(out_dir / MANIFEST_NAME)
    return manifest


def load_sample(dataset_dir, record: dict) -> Sample:
    dataset_dir = Path(dataset_dir)
    image = _load_rgb_u8(dataset_dir / record["image"]).astype(np.float32) / 255.0
    bounded = _load_rgb_u8(dataset_dir / record["bounded"]).astype(np.float32) / 255.0
    return Sample(
        index=record["index"],
        image=image,
        bounded_image=bounded,
        pose=Pose.from_seven(record["pose"]),
        bbox=tuple(record["bbox"]),
        distance=record["distance"],
        split=record["split"],
    )


@dataclass
class DatasetArrays:
    """Whole split loaded into memory; images stay uint8 until batched."""

    images: np.ndarray    # (N, H, W, 3) uint8
    bounded: np.ndarray   # (N, H, W, 3) uint8
    poses: np.ndarray     # (N, 7) float64
    distances: np.ndarray  # (N,) float64
    indices: np.ndarray   # (N,) int64
    manifest: DatasetManifest

    def __len__(self):
        return len(self.indices)


def load_arrays(dataset_dir, split: str | None = None) -> DatasetArrays:
    dataset_dir = Path(dataset_dir)
    manifest = DatasetManifest.load(dataset_dir / MANIFEST_NAME)
    records = [r for r in manifest.records if split is None or r["split"] == split]
    images = np.stack([_load_rgb_u8(dataset_dir / r["image"]) for r in records])
    bounded = np.stack([_load_rgb_u8(dataset_dir / r["bounded"]) for r in records])
    poses = np.array([r["pose"] for r in records], dtype=np.float64)
    distances = np.array([r["distance"] for r in records], dtype=np.float64)
    indices = np.array([r["index"] for r in records], dtype=np.int64)
    return DatasetArrays(images, bounded, poses, distances, indices, manifest)


def validate_dataset(dataset_dir, overlays_dir=None, report_path=None,
                     pass_fraction: float = 0.95):
    """Re-run reprojection validation on every stored sample.

    Returns the list of ValidationReports; optionally writes overlay images
    and a JSON-lines report file.
    """
    dataset_dir = Path(dataset_dir)
    manifest = DatasetManifest.load(dataset_dir / MANIFEST_NAME)
    mesh = manifest.config.mesh()
    intrinsics = manifest.config.intrinsics()
    reports = []
    lines = []
    for record in manifest.records:
        sample = load_sample(dataset_dir, record)
        overlay = None
        if overlays_dir is not None:
            overlay = Path(overlays_dir) / f"{record['index']:06d}.png"
        report = cam.validate_label(
            sample, mesh, intrinsics, pass_fraction=pass_fraction, overlay_path=overlay
        )
        reports.append(report)
        payload = json.loads(report.to_json())
        payload["index"] = record["index"]
        lines.append(json.dumps(payload, sort_keys=True))
    if report_path is not None:
        report_path = Path(report_path)
        report_path.parent.mkdir(parents=True, exist_ok=True)
        report_path.write_text("\n".join(lines) + "\n")
    return reports
