"""Micro-CT segmentation, edge-enhancement removal and petrophysics."""

from ._rockseg import (
    Labels,
    Model,
    RocksegError,
    Volume,
    analyze,
    anisotropic_diffusion,
    contrast_stretch,
    crop,
    downsample,
    dual_cluster_pipeline,
    fcm,
    kmeans,
    labels_to_vtk,
    load_raw,
    load_tiff_stack,
    nlm_filter,
    porosity,
    replay,
    run_config,
    smooth,
    to_vtk,
    train,
    volume_fractions,
)

__all__ = [
    "Labels",
    "Model",
    "RocksegError",
    "Volume",
    "analyze",
    "anisotropic_diffusion",
    "contrast_stretch",
    "crop",
    "downsample",
    "dual_cluster_pipeline",
    "fcm",
    "kmeans",
    "labels_to_vtk",
    "load_raw",
    "load_tiff_stack",
    "nlm_filter",
    "porosity",
    "replay",
    "run_config",
    "smooth",
    "to_vtk",
    "train",
    "volume_fractions",
]

__version__ = "1.0.0"
