"""Image tiling and netpbm export.

An ImageGrid holds equally sized tiles in row-major order.  compose_grid
assembles them into a single canvas with one-pixel black separators between
adjacent tiles, and export_grid writes the canvas as binary PGM (grayscale,
magic P5) or PPM (RGB, magic P6) with 8-bit samples.  Intensities in [0, 1]
map to [0, 255]; out-of-range values are clamped.
"""

from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, ParameterError

SEPARATOR_VALUE = 0.0


@dataclass(frozen=True)
class ImageGrid:
    """Row-major tiles of identical shape, (H, W) grayscale or (H, W, 3) RGB."""

    rows: int
    cols: int
    tiles: tuple = field(compare=False)

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ParameterError(
                f"grid must have positive extents, got {self.rows}x{self.cols}"
            )
        if len(self.tiles) != self.rows * self.cols:
            raise DimensionError(
                f"grid of {self.rows}x{self.cols} needs {self.rows * self.cols} "
                f"tiles, got {len(self.tiles)}"
            )
        first = self.tiles[0].shape
        if len(first) not in (2, 3) or (len(first) == 3 and first[2] != 3):
            raise DimensionError(
                f"tiles must be (H, W) or (H, W, 3), got {first}"
            )
        for tile in self.tiles:
            if tile.shape != first:
                raise DimensionError(
                    f"all tiles must share one shape, got {tile.shape} vs {first}"
                )

    @property
    def tile_shape(self):
        return self.tiles[0].shape


def grid_from_images(images, rows: int, cols: int) -> ImageGrid:
    """Build a grid from a stack shaped (n, C, H, W) with C equal to 1 or 3."""
    array = np.asarray(images, dtype=np.float64)
    if array.ndim != 4:
        raise DimensionError(f"expected (n, C, H, W) images, got shape {array.shape}")
    n, channels, _, _ = array.shape
    if channels not in (1, 3):
        raise DimensionError(f"images must have 1 or 3 channels, got {channels}")
    if n != rows * cols:
        raise DimensionError(
            f"grid of {rows}x{cols} needs {rows * cols} images, got {n}"
        )
    if channels == 1:
        tiles = tuple(array[i, 0] for i in range(n))
    else:
        tiles = tuple(array[i].transpose(1, 2, 0) for i in range(n))
    return ImageGrid(rows=rows, cols=cols, tiles=tiles)


def compose_grid(grid: ImageGrid) -> np.ndarray:
    """Assemble tiles into one canvas with 1-pixel separators between tiles.

    r rows of h-pixel tiles compose to r*h + (r-1) pixels tall; likewise for
    width.  Separator pixels take SEPARATOR_VALUE (black).
    """
    tile_h, tile_w = grid.tile_shape[:2]
    has_color = len(grid.tile_shape) == 3
    height = grid.rows * tile_h + (grid.rows - 1)
    width = grid.cols * tile_w + (grid.cols - 1)
    shape = (height, width, 3) if has_color else (height, width)
    canvas = np.full(shape, SEPARATOR_VALUE, dtype=np.float64)
    for index, tile in enumerate(grid.tiles):
        row, col = divmod(index, grid.cols)
        top = row * (tile_h + 1)
        left = col * (tile_w + 1)
        canvas[top : top + tile_h, left : left + tile_w] = tile
    return canvas


def _quantize(canvas: np.ndarray) -> np.ndarray:
    return np.clip(np.round(canvas * 255.0), 0, 255).astype(np.uint8)


def export_grid(grid: ImageGrid, path: str) -> None:
    """Write the composed grid as binary PGM (grayscale) or PPM (RGB).

    The write is atomic: the payload lands in a temporary file that is
    renamed over the destination.
    """
    canvas = compose_grid(grid)
    payload = _quantize(canvas)
    magic = b"P6" if payload.ndim == 3 else b"P5"
    height, width = payload.shape[:2]
    header = b"%s\n%d %d\n255\n" % (magic, width, height)

    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(header)
            handle.write(np.ascontiguousarray(payload).tobytes())
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.unlink(tmp_path)
        raise
