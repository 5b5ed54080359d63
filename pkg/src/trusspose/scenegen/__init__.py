"""Synthetic truss dataset generation: mesh, rasterizer, samples, manifest."""

from .mesh import InvalidDimensions, MeshModel, asymmetry_margin, build_truss
from .render import (
    EmptyBBox,
    ObjectOutOfFrame,
    make_bounded_image,
    render,
    vertex_bbox,
)
from .dataset import (
    DatasetArrays,
    DatasetConfig,
    DatasetGenerationError,
    DatasetManifest,
    PoseSampler,
    Sample,
    generate_dataset,
    load_arrays,
    load_sample,
    random_light_direction,
    render_sample,
    sample_pose,
    validate_dataset,
)

__all__ = [
    "DatasetArrays",
    "DatasetConfig",
    "DatasetGenerationError",
    "DatasetManifest",
    "EmptyBBox",
    "InvalidDimensions",
    "MeshModel",
    "ObjectOutOfFrame",
    "PoseSampler",
    "Sample",
    "asymmetry_margin",
    "build_truss",
    "generate_dataset",
    "load_arrays",
    "load_sample",
    "make_bounded_image",
    "random_light_direction",
    "render",
    "render_sample",
    "sample_pose",
    "validate_dataset",
    "vertex_bbox",
]
