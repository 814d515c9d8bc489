"""Crowd counting by detection masking plus density estimation.

The heavy lifting lives in the compiled ``_core`` extension; this package
re-exports it.
"""

from ._core import (
    IoError,
    Model,
    ShapeError,
    ValidationError,
    combined_loss,
    counting_loss,
    density_map,
    euclidean_loss,
    gradcheck,
    load_grid,
    mae_mse,
    mock_detect,
    save_grid,
    synthesize,
)

__all__ = [
    "IoError",
    "Model",
    "ShapeError",
    "ValidationError",
    "combined_loss",
    "counting_loss",
    "density_map",
    "euclidean_loss",
    "gradcheck",
    "load_grid",
    "mae_mse",
    "mock_detect",
    "save_grid",
    "synthesize",
]
