"""
World-view types: crop geometry, training triplets and target mask blocks
"""

from dataclasses import dataclass, field

import numpy as np


@dataclass(slots=True, frozen=True)
class CropSpec:
    """
    Crop rectangle of a source view.
    x, y - top-left corner in pixels
    crop_scale - area fraction s_c of the original image
    aspect - width/height ratio r_c
    width, height - crop extent in pixels
    """
    x: int
    y: int
    crop_scale: float
    aspect: float
    width: int
    height: int

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1:
            raise ValueError(f'empty crop {self.width}x{self.height}')
        if self.x < 0 or self.y < 0:
            raise ValueError(f'negative crop offset ({self.x}, {self.y})')

    def fits(self, width: int, height: int) -> bool:
        """ Whether the rectangle lies inside a width x height image """
        return self.x + self.width <= width and self.y + self.height <= height

    def cut(self, image: np.ndarray) -> np.ndarray:
        """ Copy the covered subarray out of an (H, W, C) raster """
        return image[self.y:self.y + self.height, self.x:self.x + self.width].copy()


@dataclass(slots=True, eq=False)
class ViewTriplet:
    """
    Training triplet <source view, action, target view>.
    source_image - the crop (or the masked original under the mask-source ablation)
    target_image - the original image, untouched
    action_text - caption acting as the manipulation intent
    crop_spec - where the source view was cut from
    """
    source_image: np.ndarray
    target_image: np.ndarray
    action_text: str
    crop_spec: CropSpec
    id: str
    masked: bool = False

    def __post_init__(self) -> None:
        if self.masked:
            expected = self.target_image.shape[:2]
        else:
            expected = (self.crop_spec.height, self.crop_spec.width)
        if self.source_image.shape[:2] != expected:
            raise ValueError(f'triplet {self.id}: source view {self.source_image.shape[:2]} '
                             f'does not match {expected}')


@dataclass(slots=True, frozen=True)
class MaskBlock:
    """
    Rectangle of patch-grid positions whose target features get predicted.
    indices - (row, col) pairs in row-major order
    grid - side g of the patch grid
    block_scale, block_aspect - the (s, r) drawn for the block
    entire - block covers the whole grid on purpose
    """
    indices: tuple[tuple[int, int], ...]
    grid: int
    block_scale: float = 1.0
    block_aspect: float = 1.0
    entire: bool = False
    flat: tuple[int, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if not self.indices:
            raise ValueError('mask block must contain at least one position')
        rows = sorted({r for r, _ in self.indices})
        cols = sorted({c for _, c in self.indices})
        if min(rows) < 0 or min(cols) < 0 or max(rows) >= self.grid or max(cols) >= self.grid:
            raise ValueError(f'mask block leaves the {self.grid}x{self.grid} grid')
        expected = tuple((r, c) for r in range(rows[0], rows[-1] + 1)
                         for c in range(cols[0], cols[-1] + 1))
        if self.indices != expected:
            raise ValueError('mask block is not a contiguous row-major rectangle')
        if len(self.indices) == self.grid ** 2 and not self.entire:
            raise ValueError('mask block covers the entire grid without the entire flag')
        object.__setattr__(self, 'flat',
                           tuple(r * self.grid + c for r, c in self.indices))

    @classmethod
    def rectangle(cls, grid: int, top: int, left: int, height: int, width: int,
                  block_scale: float = 1.0, block_aspect: float = 1.0) -> 'MaskBlock':
        """ Block of height x width positions with top-left corner (top, left) """
        indices = tuple((r, c) for r in range(top, top + height)
                        for c in range(left, left + width))
        return cls(indices, grid, block_scale, block_aspect,
                   entire=len(indices) == grid ** 2)

    @classmethod
    def full(cls, grid: int) -> 'MaskBlock':
        """ Block covering every grid position """
        return cls.rectangle(grid, 0, 0, grid, grid)

    def __len__(self) -> int:
        return len(self.indices)
