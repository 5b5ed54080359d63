"""Training loop: combined translation/rotation loss, Adam, per-epoch logging.

The loss is L = L_T + beta * L_R averaged over the batch, with beta = 10 by
default. Predicted quaternions are normalized inside the loss (gradients flow
through the normalization map), so the network is free to emit raw 4-vectors.
Runs are exactly reproducible from (dataset, config): shuffling derives from
the config seed and epoch index, and the model initialization from the seed.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import combined_loss_batch, convention_uses_conjugate
from .models import PoseOutput, TopologyConfig, build_model
from .nn import Adam, save_checkpoint
from .scenegen import DatasetArrays, load_arrays

CHECKPOINT_NAME = "checkpoint.tpck"
TRAIN_LOG_NAME = "train_log.csv"


class DatasetMissing(FileNotFoundError):
    """Dataset directory or manifest not found."""


class NonFiniteLoss(RuntimeError):
    """Loss became NaN or infinite during training."""


@dataclass(frozen=True)
class TrainConfig:
    dataset: str = "dataset"
    variant: str = "plain"
    epochs: int = 100
    batch_size: int = 32
    learning_rate: float = 1e-3
    beta: float = 10.0
    seed: int = 0
    rotation_convention: str = "geodesic"
    max_samples: int | None = None  # cap on training samples (overfit tests)
    stage_channels: tuple = (8, 16, 32, 32, 32)
    convs_per_stage: int = 2
    branch_width: int = 64
    head_widths: tuple = (64, 64)
    pool_mode: str = "max"

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.beta < 0:
            raise ValueError(f"beta must be >= 0, got {self.beta}")
        convention_uses_conjugate(self.rotation_convention)

    def topology(self, image_size: int) -> TopologyConfig:
        return TopologyConfig(
            variant=self.variant,
            image_size=image_size,
            stage_channels=tuple(self.stage_channels),
            convs_per_stage=self.convs_per_stage,
            branch_width=self.branch_width,
            head_widths=tuple(self.head_widths),
            pool_mode=self.pool_mode,
            seed=self.seed,
        )

    def to_dict(self) -> dict:
        return {
            "dataset": str(self.dataset),
            "variant": self.variant,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "beta": self.beta,
            "seed": self.seed,
            "rotation_convention": self.rotation_convention,
            "max_samples": self.max_samples,
            "stage_channels": list(self.stage_channels),
            "convs_per_stage": self.convs_per_stage,
            "branch_width": self.branch_width,
            "head_widths": list(self.head_widths),
            "pool_mode": self.pool_mode,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["stage_channels"] = tuple(d["stage_channels"])
        d["head_widths"] = tuple(d["head_widths"])
        return cls(**d)


@dataclass
class EpochRecord:
    epoch: int
    mean_translation_loss: float
    mean_rotation_loss: float
    mean_combined_loss: float
    wall_time_s: float


@dataclass
class TrainLog:
    records: list[EpochRecord] = field(default_factory=list)
    checkpoint_path: str = ""

    def loss_columns(self):
        """The reproducible part of the log (wall time excluded)."""
        return [
            (r.epoch, r.mean_translation_loss, r.mean_rotation_loss, r.mean_combined_loss)
            for r in self.records
        ]

    def save_csv(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["epoch", "mean_translation_loss", "mean_rotation_loss",
                 "mean_combined_loss", "wall_time_s"]
            )
            for r in self.records:
                writer.writerow(
                    [r.epoch, repr(r.mean_translation_loss), repr(r.mean_rotation_loss),
                     repr(r.mean_combined_loss), f"{r.wall_time_s:.3f}"]
                )

    @classmethod
    def load_csv(cls, path) -> "TrainLog":
        records = []
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                records.append(
                    EpochRecord(
                        epoch=int(row["epoch"]),
                        mean_translation_loss=float(row["mean_translation_loss"]),
                        mean_rotation_loss=float(row["mean_rotation_loss"]),
                        mean_combined_loss=float(row["mean_combined_loss"]),
                        wall_time_s=float(row["wall_time_s"]),
                    )
                )
        return cls(records=records)


def labels_to_array(labels) -> np.ndarray:
    """Pose batch (list of Pose or (N, 7) array) to a (N, 7) float array."""
    if isinstance(labels, np.ndarray):
        return np.asarray(labels, dtype=float).reshape(-1, 7)
    return np.stack([p.seven() for p in labels])


def loss_batch(pred: PoseOutput, labels, beta: float = 10.0,
               rotation_convention: str = "geodesic"):
    """Batch loss per the combined objective.

    Returns (L, mean L_T, mean L_R) where L = mean(L_T) + beta * mean(L_R).
    Raises DegenerateQuaternion (with the sample index) for unusable
    quaternion predictions.
    """
    loss, l_t, l_r, _, _ = _loss_and_grads(pred, labels, beta, rotation_convention)
    return loss, l_t, l_r


def _loss_and_grads(pred: PoseOutput, labels, beta, rotation_convention):
    arr = labels_to_array(labels)
    if len(arr) != len(pred.translation):
        raise ValueError(
            f"batch size mismatch: {len(pred.translation)} predictions, {len(arr)} labels"
        )
    conjugate = convention_uses_conjugate(rotation_convention)
    _, l_t, l_r, grad_t, grad_q = combined_loss_batch(
        arr[:, :3], pred.translation, arr[:, 3:], pred.quaternion_raw,
        beta=beta, conjugate=conjugate,
    )
    n = len(arr)
    mean_t = float(np.mean(l_t, dtype=np.float64))
    mean_r = float(np.mean(l_r, dtype=np.float64))
    total = mean_t + beta * mean_r
    # gradients of the batch mean
    return total, mean_t, mean_r, grad_t / n, grad_q / n


def _batch_images(u8: np.ndarray) -> np.ndarray:
    """uint8 (B, H, W, 3) to float32 NCHW in [0, 1]."""
    return np.ascontiguousarray(u8.transpose(0, 3, 1, 2), dtype=np.float32) / np.float32(255.0)


def _epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(2, epoch)))


def load_train_split(config: TrainConfig) -> DatasetArrays:
    dataset_dir = Path(config.dataset)
    if not (dataset_dir / "manifest.json").exists():
        raise DatasetMissing(f"no manifest.json under {dataset_dir}")
    data = load_arrays(dataset_dir, split="train")
    if config.max_samples is not None and len(data) > config.max_samples:
        sel = slice(0, config.max_samples)
        data = DatasetArrays(
            data.images[sel], data.bounded[sel], data.poses[sel],
            data.distances[sel], data.indices[sel], data.manifest,
        )
    return data


def run_training_loop(model, get_batch, n_samples: int, poses: np.ndarray,
                      config: TrainConfig, progress=None) -> TrainLog:
    """Shared optimizer loop over an arbitrary batch source.

    ``get_batch(idx)`` returns (images, bounded) float32 NCHW arrays for the
    given sample indices; ``poses`` is the (N, 7) label array.
    """
    optimizer = Adam(model.parameters(), lr=config.learning_rate)
    log = TrainLog()
    for epoch in range(config.epochs):
        started = time.perf_counter()
        order = _epoch_rng(config.seed, epoch).permutation(n_samples)
        sum_t = sum_r = 0.0
        for start in range(0, n_samples, config.batch_size):
            idx = order[start : start + config.batch_size]
            images, bounded = get_batch(idx)
            output, heads = model.forward(images, bounded)
            total, mean_t, mean_r, grad_t, grad_q = _loss_and_grads(
                output, poses[idx], config.beta, config.rotation_convention
            )
            if not np.isfinite(total):
                raise NonFiniteLoss(
                    f"non-finite loss {total!r} at epoch {epoch}, "
                    f"batch {start // config.batch_size}"
                )
            optimizer.zero_grad()
            model.backward(heads, grad_t, grad_q)
            optimizer.step()
            sum_t += mean_t * len(idx)
            sum_r += mean_r * len(idx)
        mean_t_epoch = sum_t / n_samples
        mean_r_epoch = sum_r / n_samples
        log.records.append(
            EpochRecord(
                epoch=epoch,
                mean_translation_loss=mean_t_epoch,
                mean_rotation_loss=mean_r_epoch,
                mean_combined_loss=mean_t_epoch + config.beta * mean_r_epoch,
                wall_time_s=time.perf_counter() - started,
            )
        )
        if progress is not None:
            progress(epoch + 1, config.epochs, log.records[-1])
    return log


def train(config: TrainConfig, out_dir, progress=None) -> TrainLog:
    """Train the configured variant on the dataset's train split.

    Writes checkpoint.tpck and train_log.csv under out_dir and returns the
    TrainLog. Aborts with NonFiniteLoss (reporting epoch and batch) if the
    loss leaves the reals.
    """
    out_dir = Path(out_dir)
    data = load_train_split(config)
    if len(data) == 0:
        raise DatasetMissing(f"train split of {config.dataset} is empty")

    image_size = data.manifest.config.image_size
    model = build_model(config.topology(image_size))

    def get_batch(idx):
        return _batch_images(data.images[idx]), _batch_images(data.bounded[idx])

    log = run_training_loop(model, get_batch, len(data), data.poses, config, progress)

    checkpoint_path = out_dir / CHECKPOINT_NAME
    meta = {
        "topology": model.config.to_dict(),
        "train": config.to_dict(),
        "image_size": image_size,
        "final_mean_translation_loss": log.records[-1].mean_translation_loss,
        "final_mean_rotation_loss": log.records[-1].mean_rotation_loss,
    }
    save_checkpoint(checkpoint_path, model.state_dict(), meta=meta)
    log.checkpoint_path = str(checkpoint_path)
    log.save_csv(out_dir / TRAIN_LOG_NAME)
    return log


def load_model_from_checkpoint(path):
    """Rebuild a PoseModel from a checkpoint; returns (model, meta)."""
    from .nn import load_checkpoint

    tensors, meta = load_checkpoint(path)
    topology = TopologyConfig.from_dict(meta["topology"])
    model = build_model(topology)
    model.load_state_dict(tensors)
    return model, meta
