"""Multi-view grid images: V equally sized tiles in a rows x cols mosaic."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class GridImage:
    """tiles: (V, H, W, C) in row-major view order; V must equal rows*cols."""

    tiles: np.ndarray
    rows: int = 2
    cols: int = 2

    def __post_init__(self):
        tiles = np.ascontiguousarray(self.tiles, dtype=np.float64)
        if tiles.ndim != 4:
            raise ValueError(f"tiles must be (V, H, W, C), got shape {tiles.shape}")
        if tiles.shape[0] != self.rows * self.cols:
            raise ValueError(
                f"{tiles.shape[0]} tiles do not fill a {self.rows}x{self.cols} grid"
            )
        object.__setattr__(self, "tiles", tiles)

    @property
    def view_count(self) -> int:
        return self.tiles.shape[0]

    @property
    def tile_shape(self) -> tuple[int, int, int]:
        return self.tiles.shape[1:]

    def assemble(self) -> np.ndarray:
        """Mosaic of shape (rows*H, cols*W, C)."""
        v, h, w, c = self.tiles.shape
        return (
            self.tiles.reshape(self.rows, self.cols, h, w, c)
            .transpose(0, 2, 1, 3, 4)
            .reshape(self.rows * h, self.cols * w, c)
        )

    @classmethod
    def from_assembled(cls, array: np.ndarray, rows: int = 2, cols: int = 2) -> "GridImage":
        array = np.asarray(array, dtype=np.float64)
        if array.ndim == 2:
            array = array[..., None]
        gh, gw, c = array.shape
        if gh % rows or gw % cols:
            raise ValueError(f"array of shape {array.shape} does not split {rows}x{cols}")
        h, w = gh // rows, gw // cols
        tiles = (
            array.reshape(rows, h, cols, w, c).transpose(0, 2, 1, 3, 4).reshape(-1, h, w, c)
        )
        return cls(tiles=tiles, rows=rows, cols=cols)


def default_layout(view_count: int) -> tuple[int, int]:
    """Squarest rows x cols factorization; 4 views -> 2x2."""
    r = int(np.sqrt(view_count))
    while r > 1 and view_count % r:
        r -= 1
    return r, view_count // r
