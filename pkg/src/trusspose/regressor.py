"""Scikit-learn-style estimator wrapping the pose-regression pipeline.

PoseRegressor follows the fit/predict/get_params conventions so it composes
with sklearn tooling (clone, grid search over its hyperparameters, etc.).
X holds images: either (N, H, W, C) floats in [0, 1], or (N, 2, H, W, C)
stacking the full frame and the bounded crop on axis 1 (required for the
parallel variant); y is the (N, 7) pose label [tx, ty, tz, k, vx, vy, vz].
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin

from .models import build_model
from .training import TrainConfig, loss_batch, run_training_loop
from .validation import check_image_batch, check_pose_labels


class PoseRegressor(BaseEstimator, RegressorMixin):
    """CNN regressor from images to 7-number relative poses.

    Parameters mirror TrainConfig/TopologyConfig; ``variant`` selects the
    plain, branched, or parallel topology. Predictions are [tx, ty, tz,
    k, vx, vy, vz] with the quaternion part normalized to unit length.
    """

    def __init__(self, variant="plain", epochs=100, batch_size=32,
                 learning_rate=1e-3, beta=10.0, seed=0,
                 rotation_convention="geodesic",
                 stage_channels=(8, 16, 32, 32, 32), convs_per_stage=2,
                 branch_width=64, head_widths=(64, 64), pool_mode="max"):
        self.variant = variant
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.beta = beta
        self.seed = seed
        self.rotation_convention = rotation_convention
        self.stage_channels = stage_channels
        self.convs_per_stage = convs_per_stage
        self.branch_width = branch_width
        self.head_widths = head_widths
        self.pool_mode = pool_mode

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            variant=self.variant,
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            beta=self.beta,
            seed=self.seed,
            rotation_convention=self.rotation_convention,
            stage_channels=tuple(self.stage_channels),
            convs_per_stage=self.convs_per_stage,
            branch_width=self.branch_width,
            head_widths=tuple(self.head_widths),
            pool_mode=self.pool_mode,
        )

    def fit(self, X, y):
        full, bounded = check_image_batch(X, require_bounded=self.variant == "parallel")
        y = check_pose_labels(y, n_samples=len(full))
        if bounded is None:
            bounded = full
        if full.shape[2] != full.shape[3]:
            raise ValueError(f"images must be square, got {full.shape[2]}x{full.shape[3]}")

        config = self._train_config()
        self.image_size_ = int(full.shape[2])
        self.n_features_in_ = int(np.prod(full.shape[1:]))
        model = build_model(config.topology(self.image_size_))

        def get_batch(idx):
            return full[idx], bounded[idx]

        self.train_log_ = run_training_loop(model, get_batch, len(full), y, config)
        self.model_ = model
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise RuntimeError("this PoseRegressor is not fitted yet; call fit first")

    def predict(self, X) -> np.ndarray:
        """Predicted poses (N, 7); the quaternion part is unit-normalized."""
        self._check_fitted()
        full, bounded = check_image_batch(X, require_bounded=self.variant == "parallel")
        if bounded is None:
            bounded = full
        if full.shape[2] != self.image_size_:
            raise ValueError(
                f"image size {full.shape[2]} differs from fitted size {self.image_size_}"
            )
        outputs = []
        for start in range(0, len(full), self.batch_size):
            sel = slice(start, start + self.batch_size)
            out = self.model_.predict(full[sel], bounded[sel])
            seven = out.seven().astype(np.float64)
            norms = np.linalg.norm(seven[:, 3:], axis=1, keepdims=True)
            seven[:, 3:] /= np.maximum(norms, 1e-12)
            outputs.append(seven)
        return np.concatenate(outputs, axis=0)

    def score(self, X, y) -> float:
        """Negative mean combined loss (greater is better)."""
        self._check_fitted()
        full, bounded = check_image_batch(X, require_bounded=self.variant == "parallel")
        if bounded is None:
            bounded = full
        y = check_pose_labels(y, n_samples=len(full))
        total = 0.0
        for start in range(0, len(full), self.batch_size):
            sel = slice(start, start + self.batch_size)
            out = self.model_.predict(full[sel], bounded[sel])
            loss, _, _ = loss_batch(out, y[sel], beta=self.beta,
                                    rotation_convention=self.rotation_convention)
            total += loss * (min(start + self.batch_size, len(full)) - start)
        return -total / len(full)


def load_design_matrix(dataset_dir, split: str | None = None):
    """Dataset split as estimator inputs: X (N, 2, H, W, C) float32, y (N, 7)."""
    from .scenegen import load_arrays

    data = load_arrays(dataset_dir, split=split)
    full = data.images.astype(np.float32) / np.float32(255.0)
    bounded = data.bounded.astype(np.float32) / np.float32(255.0)
    X = np.stack([full, bounded], axis=1)
    return X, data.poses.copy()
