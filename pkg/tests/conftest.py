import numpy as np
import pytest


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """24-sample dataset shared by training/evaluation/CLI tests."""
    from trusspose.scenegen import DatasetConfig, generate_dataset

    path = tmp_path_factory.mktemp("data") / "tiny"
    generate_dataset(DatasetConfig(count=24, seed=11), path)
    return path


@pytest.fixture(scope="session")
def tiny_checkpoints(tiny_dataset, tmp_path_factory):
    """Short plain + parallel training runs on the tiny dataset."""
    from trusspose.training import TrainConfig, train

    root = tmp_path_factory.mktemp("runs")
    out = {}
    for variant in ("plain", "parallel"):
        run_dir = root / variant
        log = train(
            TrainConfig(dataset=str(tiny_dataset), variant=variant, epochs=3,
                        batch_size=8, seed=2),
            run_dir,
        )
        out[variant] = {"dir": run_dir, "log": log,
                        "checkpoint": run_dir / "checkpoint.tpck"}
    return out


def numerical_gradient(f, x, step=1e-5):
    """Central finite differences of a scalar function at x, elementwise."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for i in range(x.size):
        hi = x.copy()
        lo = x.copy()
        hi.flat[i] += step
        lo.flat[i] -= step
        grad.flat[i] = (f(hi) - f(lo)) / (2.0 * step)
    return grad


def gradient_relative_error(analytic, numeric):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
    return np.linalg.norm(analytic - numeric) / denom
