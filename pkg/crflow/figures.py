"""
Density previews: grayscale PNGs of an energy-density field.

The image shows the (x1, y1) plane at t-index 0 (and x2 = y2 = 0 when m = 2),
scaled linearly from 0 to the field's maximum over that slice; x1 runs left
to right and y1 bottom to top.
"""

from __future__ import annotations

from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from .geometry import NilmanifoldGrid

PREVIEW_MIN_SIZE = 256


def density_slice(grid: NilmanifoldGrid, density: np.ndarray) -> np.ndarray:
    if density.shape != grid.shape:
        raise ValueError(f"density shape {density.shape} != grid shape {grid.shape}")
    index = (slice(None), slice(None)) + (0,) * (grid.dim - 2)
    return density[index]


def save_density_preview(grid: NilmanifoldGrid,
                         density: np.ndarray,
                         path: str | Path,
                         vmax: Optional[float] = None) -> Path:
    plane = density_slice(grid, density)
    top = float(np.max(plane)) if vmax is None else float(vmax)
    if top > 0:
        scaled = np.clip(plane / top, 0.0, 1.0)
    else:
        scaled = np.zeros_like(plane)
    # rows are y (flipped so y grows upward), columns are x
    pixels = np.ascontiguousarray(np.flipud((scaled * 255.0).round().astype(np.uint8).T))
    img = Image.fromarray(pixels)
    scale = max(1, PREVIEW_MIN_SIZE // grid.N)
    if scale > 1:
        img = img.resize((grid.N * scale, grid.N * scale), resample=Image.Resampling.NEAREST)
    path = Path(path)
    img.save(path)
    return path
