"""Test-split metrics, distance-binned error statistics, and heatmaps.

Rotation error per sample is the folded quaternion difference angle between
the label and the normalized prediction, reported in degrees; translation
error is the Euclidean distance in meters. "Combined error" used for ranking
and the distance profile mirrors the training objective: translation error
plus beta times the rotation error in radians.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import (
    Quaternion,
    convention_uses_conjugate,
    normalize,
    rotation_angle,
    translation_loss,
    Translation,
)
from .models import PoseOutput
from .nn.layers import Conv2d, UnknownLayer
from .scenegen import load_arrays
from .training import _batch_images, load_model_from_checkpoint

DEG_PER_RAD = 180.0 / math.pi


@dataclass
class MetricsReport:
    """Aggregate pose-accuracy metrics plus per-sample records."""

    variant: str
    checkpoint: str
    dataset: str
    split: str
    beta: float
    rotation_convention: str
    mean_rotation_error_deg: float
    median_rotation_error_deg: float
    mean_translation_error_m: float
    distance_range: tuple[float, float]
    records: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["distance_range"] = list(self.distance_range)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        d = dict(d)
        d["distance_range"] = tuple(d["distance_range"])
        return cls(**d)

    def save_json(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load_json(cls, path) -> "MetricsReport":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def save_csv(self, path) -> None:
        import csv

        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        fields = ["index", "rotation_error_deg", "translation_error_m", "distance_m",
                  "combined_error", "image"]
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=fields)
            writer.writeheader()
            for record in self.records:
                writer.writerow({k: record[k] for k in fields})


def pose_errors(labels: np.ndarray, predictions: PoseOutput,
                rotation_convention: str = "geodesic"):
    """Per-sample (rotation error radians, translation error meters)."""
    conjugate = convention_uses_conjugate(rotation_convention)
    rot = np.empty(len(labels))
    trans = np.empty(len(labels))
    for i, label in enumerate(labels):
        q_label = Quaternion.from_array(label[3:])
        q_pred = normalize(Quaternion.from_array(predictions.quaternion_raw[i]))
        rot[i] = rotation_angle(q_label, q_pred, conjugate=conjugate)
        trans[i] = translation_loss(
            Translation.from_array(label[:3]),
            Translation.from_array(predictions.translation[i]),
        )
    return rot, trans


def evaluate(checkpoint, dataset_dir, variant: str | None = None, split: str = "test",
             batch_size: int = 64) -> MetricsReport:
    """Run a checkpoint over a dataset split and aggregate Table-1-style metrics."""
    model, meta = load_model_from_checkpoint(checkpoint)
    if variant is not None and variant != model.variant:
        raise ValueError(
            f"checkpoint holds a {model.variant!r} model, requested {variant!r}"
        )
    train_meta = meta.get("train", {})
    beta = float(train_meta.get("beta", 10.0))
    convention = train_meta.get("rotation_convention", "geodesic")

    data = load_arrays(dataset_dir, split=split)
    rot_all = []
    trans_all = []
    for start in range(0, len(data), batch_size):
        sel = slice(start, start + batch_size)
        output = model.predict(_batch_images(data.images[sel]),
                               _batch_images(data.bounded[sel]))
        rot, trans = pose_errors(data.poses[sel], output, convention)
        rot_all.append(rot)
        trans_all.append(trans)
    rot = np.concatenate(rot_all) if rot_all else np.empty(0)
    trans = np.concatenate(trans_all) if trans_all else np.empty(0)

    record_by_index = {r["index"]: r for r in data.manifest.records}
    records = []
    for i, index in enumerate(data.indices):
        records.append(
            {
                "index": int(index),
                "rotation_error_deg": float(rot[i] * DEG_PER_RAD),
                "translation_error_m": float(trans[i]),
                "distance_m": float(data.distances[i]),
                "combined_error": float(trans[i] + beta * rot[i]),
                "image": record_by_index[int(index)]["image"],
            }
        )
    return MetricsReport(
        variant=model.variant,
        checkpoint=str(checkpoint),
        dataset=str(dataset_dir),
        split=split,
        beta=beta,
        rotation_convention=convention,
        mean_rotation_error_deg=float(np.mean(rot) * DEG_PER_RAD) if len(rot) else 0.0,
        median_rotation_error_deg=float(np.median(rot) * DEG_PER_RAD) if len(rot) else 0.0,
        mean_translation_error_m=float(np.mean(trans)) if len(trans) else 0.0,
        distance_range=tuple(data.manifest.config.distance_range),
        records=records,
    )


@dataclass
class DistanceProfile:
    """Mean and one standard deviation of combined error per distance bin."""

    bin_edges: list[float]
    means: list[float]
    stds: list[float]
    counts: list[int]

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    def save_json(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


def distance_profile(report: MetricsReport, bin_width: float = 0.1) -> DistanceProfile:
    """Bin per-sample combined error by label distance.

    Bin edges span the dataset's configured distance range; the last bin
    absorbs the upper edge. Standard deviations are population (1-sigma).
    """
    if not report.records:
        raise ValueError("report has no per-sample records")
    lo, hi = report.distance_range
    n_bins = max(1, int(math.ceil((hi - lo) / bin_width - 1e-9)))
    edges = [lo + i * bin_width for i in range(n_bins)] + [hi]
    distances = np.array([r["distance_m"] for r in report.records])
    errors = np.array([r["combined_error"] for r in report.records])
    idx = np.clip(np.searchsorted(edges, distances, side="right") - 1, 0, n_bins - 1)
    means, stds, counts = [], [], []
    for b in range(n_bins):
        sel = errors[idx == b]
        counts.append(int(sel.size))
        means.append(float(sel.mean()) if sel.size else float("nan"))
        stds.append(float(sel.std()) if sel.size else float("nan"))
    return DistanceProfile(bin_edges=[float(e) for e in edges], means=means,
                           stds=stds, counts=counts)


def render_distance_profile(profile: DistanceProfile, path, title: str = "") -> None:
    """Mean and 1-sigma band of combined error vs distance, as a PNG."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    edges = np.asarray(profile.bin_edges)
    centers = (edges[:-1] + edges[1:]) / 2.0
    means = np.asarray(profile.means)
    stds = np.asarray(profile.stds)
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(centers, means, marker="o", color="tab:blue", label="mean error")
    ax.fill_between(centers, means - stds, means + stds, alpha=0.3,
                    color="tab:blue", label="1 std dev")
    ax.set_xlabel("distance from camera (m)")
    ax.set_ylabel("combined pose error")
    if title:
        ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120)
    plt.close(fig)


def rank_by_error(report: MetricsReport, k: int):
    """Top-k worst and best samples by combined error.

    Ties break on the sample's position in the report (stable). Returns
    (worst, best) lists of per-sample records.
    """
    if k > len(report.records):
        raise ValueError(f"k={k} exceeds sample count {len(report.records)}")
    order = sorted(range(len(report.records)),
                   key=lambda i: (report.records[i]["combined_error"], i))
    best = [report.records[i] for i in order[:k]]
    worst_order = sorted(range(len(report.records)),
                         key=lambda i: (-report.records[i]["combined_error"], i))
    worst = [report.records[i] for i in worst_order[:k]]
    return worst, best


def _pick_heatmap_node(model, layer: str | None):
    """Resolve (graph key, node name) for a conv layer; default: last conv of
    the attitude stream (parallel) or of the single graph."""
    if layer is not None and "/" in layer:
        key, node = layer.split("/", 1)
        if key not in model.graphs:
            raise UnknownLayer(f"no stream named {key!r}; have {sorted(model.graphs)}")
        graph = model.graphs[key]
        if node not in graph.node_names() or not isinstance(graph.node(node).layer, Conv2d):
            raise UnknownLayer(f"{layer!r} is not a convolutional layer")
        return key, node
    default_key = "attitude" if "attitude" in model.graphs else sorted(model.graphs)[0]
    if layer is None:
        return default_key, model.graphs[default_key].conv_node_names()[-1]
    matches = [
        (key, layer)
        for key, graph in sorted(model.graphs.items())
        if layer in graph.node_names() and isinstance(graph.node(layer).layer, Conv2d)
    ]
    if not matches:
        raise UnknownLayer(f"no convolutional layer named {layer!r}")
    return matches[0]


def activation_heatmap(checkpoint, sample, layer: str | None = None):
    """Spatial activation-energy map for one sample.

    Returns (heat (H, W) float in [0, 1], overlay (H, W, 3) uint8, node id).
    The map is the channel mean of absolute activations at the chosen conv
    layer, min-max normalized (all zeros when constant), bilinearly upsampled
    to the input size, and blended onto the input image at 50% opacity.
    """
    model, _ = load_model_from_checkpoint(checkpoint)
    key, node = _pick_heatmap_node(model, layer)
    graph = model.graphs[key]
    input_name = graph.input_names()[0]
    image = sample.bounded_image if input_name == "bounded" else sample.image
    batch = np.ascontiguousarray(
        np.asarray(image, dtype=np.float32).transpose(2, 0, 1)[None]
    )
    values = graph.forward({input_name: batch}, keep_all=True)
    act = np.abs(values[node].data[0]).mean(axis=0)

    lo, hi = float(act.min()), float(act.max())
    if hi - lo < 1e-12:
        heat_small = np.zeros_like(act)
    else:
        heat_small = (act - lo) / (hi - lo)

    from PIL import Image

    h, w = image.shape[:2]
    heat = np.asarray(
        Image.fromarray(heat_small.astype(np.float32), mode="F").resize(
            (w, h), Image.BILINEAR
        ),
        dtype=np.float32,
    )
    heat = np.clip(heat, 0.0, 1.0)

    import matplotlib

    matplotlib.use("Agg")

    colored = matplotlib.colormaps["jet"](heat)[:, :, :3]
    base = np.asarray(image, dtype=np.float32)
    overlay = np.clip(0.5 * base + 0.5 * colored, 0.0, 1.0)
    overlay_u8 = (overlay * 255).round().astype(np.uint8)
    return heat, overlay_u8, f"{key}/{node}"


def save_heatmap(checkpoint, sample, path, layer: str | None = None) -> str:
    """Write the heatmap overlay PNG; returns the resolved layer id."""
    from PIL import Image

    heat, overlay, node_id = activation_heatmap(checkpoint, sample, layer)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(overlay).save(path)
    return node_id


def heatmap_peak_in_bbox_rate(checkpoint, dataset_dir, report: MetricsReport,
                              k: int = 20, layer: str | None = None) -> float:
    """Fraction of the k lowest-error test samples whose heatmap peak falls
    inside the ground-truth bbox.

    Uses a full-image stream (the translation stream for parallel models),
    where the object occupies only part of the frame, so the peak location
    is informative. Intended for well-trained checkpoints.
    """
    from .scenegen import DatasetManifest, load_sample

    model, _ = load_model_from_checkpoint(checkpoint)
    if layer is None:
        key = "translation" if "translation" in model.graphs else "pose"
        layer = f"{key}/{model.graphs[key].conv_node_names()[-1]}"
    manifest = DatasetManifest.load(Path(dataset_dir) / "manifest.json")
    by_index = {r["index"]: r for r in manifest.records}
    _, best = rank_by_error(report, k=min(k, len(report.records)))
    hits = 0
    for entry in best:
        record = by_index[entry["index"]]
        sample = load_sample(dataset_dir, record)
        heat, _, _ = activation_heatmap(checkpoint, sample, layer)
        v, u = np.unravel_index(int(np.argmax(heat)), heat.shape)
        x0, y0, x1, y1 = record["bbox"]
        hits += int(x0 <= u < x1 and y0 <= v < y1)
    return hits / len(best)
