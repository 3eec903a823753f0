"""
World-view generation.

Turns image-caption pairs into <source view, action, target view> triplets by
random cropping, samples the target mask block, and produces a procedural
corpus so everything runs without downloads.

Crop geometry: for crop scale s and aspect r on a W x H image the crop spans
W_c = round(sqrt(s r W H)) by H_c = round(sqrt(s W H / r)) pixels, placed
uniformly at random over the valid offsets.
"""

import itertools
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image, ImageDraw

from predmap.config import TrainConfig
from predmap.errors import ArtifactError, CropRejectedError
from predmap.models.pair import MIN_IMAGE_SIDE, RawPair
from predmap.models.views import CropSpec, MaskBlock, ViewTriplet
from predmap.utils import Stream, derive_rng, round_half_up


logger = logging.getLogger(__name__)

MAX_REDRAWS = 10


@dataclass(slots=True, frozen=True)
class CropRanges:
    """
    Sampling ranges of crop scale s and aspect r, inclusive.
    min_side - smallest crop side in pixels (ignored for mask blocks)
    """
    scale: tuple[float, float] = (0.2, 0.25)
    aspect: tuple[float, float] = (0.75, 1.5)
    min_side: int = 8

    def __post_init__(self) -> None:
        if not 0 < self.scale[0] <= self.scale[1] <= 1:
            raise ValueError(f'degenerate crop scale range {self.scale}')
        if not 0 < self.aspect[0] <= self.aspect[1]:
            raise ValueError(f'degenerate crop aspect range {self.aspect}')

    @classmethod
    def for_crops(cls, cfg: TrainConfig) -> 'CropRanges':
        """ Source-view crop ranges of a run """
        return cls(cfg.crop_scale, cfg.crop_aspect, cfg.min_crop_side)

    @classmethod
    def for_blocks(cls, cfg: TrainConfig) -> 'CropRanges':
        """ Mask-block ranges of a run """
        return cls(cfg.block_scale, cfg.block_aspect, 1)


def _crop_sides(scale: float, aspect: float, width: int, height: int) -> tuple[float, float]:
    area = scale * width * height
    return math.sqrt(area * aspect), math.sqrt(area / aspect)


def sample_crop_spec(width: int, height: int, ranges: CropRanges,
                     rng: np.random.Generator) -> CropSpec:
    """
    Draw a crop rectangle for a width x height image.

    Out-of-bounds draws are redrawn up to MAX_REDRAWS times; after that the
    aspect of the last draw is pulled toward 1 until the crop fits, keeping
    its area.

    Parameters
    ----------
    width, height - image size in pixels, both at least 32
    ranges - scale and aspect ranges
    rng - seeded generator

    Returns
    -------
    CropSpec lying inside the image
    """
    if width < MIN_IMAGE_SIDE or height < MIN_IMAGE_SIDE:
        raise ValueError(f'image {width}x{height} below the {MIN_IMAGE_SIDE} px minimum')
    scale = aspect = 0.0
    raw_w = raw_h = 0.0
    for _ in range(MAX_REDRAWS + 1):
        scale = float(rng.uniform(*ranges.scale))
        aspect = float(rng.uniform(*ranges.aspect))
        raw_w, raw_h = _crop_sides(scale, aspect, width, height)
        if round_half_up(raw_w) <= width and round_half_up(raw_h) <= height:
            break
    else:
        # widest aspect that fits is width / (s H), narrowest is s W / H
        low, high = scale * width / height, width / (scale * height)
        clamped = min(max(aspect, low), high)
        logger.debug('crop aspect %.3f clamped to %.3f for %dx%d image',
                     aspect, clamped, width, height)
        aspect = clamped
        raw_w, raw_h = _crop_sides(scale, aspect, width, height)

    crop_w, crop_h = round_half_up(raw_w), round_half_up(raw_h)
    if crop_w == 0:
        raise CropRejectedError('width', crop_w)
    if crop_h == 0:
        raise CropRejectedError('height', crop_h)
    crop_w = min(max(crop_w, ranges.min_side), width)
    crop_h = min(max(crop_h, ranges.min_side), height)
    x = int(rng.integers(0, width - crop_w + 1))
    y = int(rng.integers(0, height - crop_h + 1))
    return CropSpec(x=x, y=y, crop_scale=scale, aspect=aspect, width=crop_w, height=crop_h)


def identity_crop(width: int, height: int) -> CropSpec:
    """ Crop covering the whole image (no-crop ablation) """
    return CropSpec(x=0, y=0, crop_scale=1.0, aspect=width / height,
                    width=width, height=height)


def make_triplet(pair: RawPair, cfg: TrainConfig, rng: np.random.Generator) -> ViewTriplet:
    """
    Forge a training triplet from a pair.

    The source view is the pixel-exact crop; under `no_crop` it is the whole
    image, under `mask_source` it is the full-size image with everything
    outside the sampled rectangle zeroed.
    """
    if cfg.no_crop:
        spec = identity_crop(pair.width, pair.height)
    else:
        spec = sample_crop_spec(pair.width, pair.height, CropRanges.for_crops(cfg), rng)
    if cfg.mask_source and not cfg.no_crop:
        source = np.zeros_like(pair.image)
        source[spec.y:spec.y + spec.height, spec.x:spec.x + spec.width] = spec.cut(pair.image)
        masked = True
    else:
        source = spec.cut(pair.image)
        masked = False
    return ViewTriplet(source_image=source, target_image=pair.image,
                       action_text=pair.caption, crop_spec=spec, id=pair.id, masked=masked)


def forge_batch(pairs: Sequence[RawPair], cfg: TrainConfig, step: int,
                workers: int = 0) -> list[ViewTriplet]:
    """
    Triplets for one training step.
    Item i draws from the generator keyed (seed, FORGE, step, i), so the result does
    not depend on the number of workers.
    """
    def forge(index: int) -> ViewTriplet:
        rng = derive_rng(cfg.seed, Stream.FORGE, step, index)
        return make_triplet(pairs[index], cfg, rng)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(forge, range(len(pairs))))
    return [forge(i) for i in range(len(pairs))]


def sample_mask_block(grid: int, ranges: CropRanges, rng: np.random.Generator,
                      entire: bool = False) -> MaskBlock:
    """
    Draw the rectangle of target patches to predict.

    Block sides follow the crop geometry on the patch grid,
    bw = max(1, round(sqrt(s r g^2))) and bh = max(1, round(sqrt(s g^2 / r))),
    clamped to the grid. A draw covering the whole grid loses one row (or
    column) unless `entire` is set, in which case the whole grid is returned.
    """
    if grid < 2:
        raise ValueError(f'patch grid side must be >= 2, got {grid}')
    if entire:
        return MaskBlock.full(grid)
    scale = float(rng.uniform(*ranges.scale))
    aspect = float(rng.uniform(*ranges.aspect))
    area = scale * grid * grid
    block_w = min(grid, max(1, round_half_up(math.sqrt(area * aspect))))
    block_h = min(grid, max(1, round_half_up(math.sqrt(area / aspect))))
    if block_w * block_h == grid * grid:
        block_h -= 1
    top = int(rng.integers(0, grid - block_h + 1))
    left = int(rng.integers(0, grid - block_w + 1))
    return MaskBlock.rectangle(grid, top, left, block_h, block_w,
                               block_scale=scale, block_aspect=aspect)


# procedural corpus

SHAPES = ('circle', 'square', 'triangle', 'diamond', 'ring', 'cross')

COLORS = {
    'red': (220, 40, 40),
    'green': (40, 200, 60),
    'blue': (40, 80, 230),
    'yellow': (240, 220, 40),
    'purple': (150, 60, 200),
    'orange': (250, 140, 20),
    'white': (250, 250, 250),
    'pink': (250, 130, 190),
}

BACKGROUNDS = {
    'green field': (70, 120, 60),
    'blue sky': (110, 160, 220),
    'yellow sand': (200, 180, 120),
    'gray wall': (120, 120, 125),
    'black night': (15, 15, 30),
}

SYNTH_VOCABULARY = frozenset(
    {'a', 'on'} | set(SHAPES) | set(COLORS)
    | {word for name in BACKGROUNDS for word in name.split()}
)


def _scene_caption(shape: str, color: str, background: str) -> str:
    return f'a {color} {shape} on a {background}'


def _draw_shape(draw: ImageDraw.ImageDraw, shape: str, box: tuple[int, int, int, int],
                fill: tuple[int, int, int]) -> None:
    x0, y0, x1, y1 = box
    cx, cy = (x0 + x1) // 2, (y0 + y1) // 2
    side = x1 - x0
    if shape == 'circle':
        draw.ellipse(box, fill=fill)
    elif shape == 'square':
        draw.rectangle(box, fill=fill)
    elif shape == 'triangle':
        draw.polygon([(cx, y0), (x1, y1), (x0, y1)], fill=fill)
    elif shape == 'diamond':
        draw.polygon([(cx, y0), (x1, cy), (cx, y1), (x0, cy)], fill=fill)
    elif shape == 'ring':
        draw.ellipse(box, outline=fill, width=max(2, side // 6))
    else:
        bar = max(2, side // 4)
        draw.rectangle((cx - bar // 2, y0, cx + bar // 2, y1), fill=fill)
        draw.rectangle((x0, cy - bar // 2, x1, cy + bar // 2), fill=fill)


def synth_dataset(n: int, rng: np.random.Generator, size: int = 64) -> list[RawPair]:
    """
    Procedural image-caption pairs: one colored shape on a plain background.

    Every pair gets a distinct (shape, color, background) scene, so captions are
    unique; size and position of the shape vary per pair.

    Parameters
    ----------
    n - number of pairs, 1 <= n <= number of distinct scenes
    rng - seeded generator
    size - square image side in pixels

    Returns
    -------
    List of RawPair with ids synth-00000, synth-00001, ...
    """
    scenes = list(itertools.product(SHAPES, COLORS, BACKGROUNDS))
    if not 1 <= n <= len(scenes):
        raise ValueError(f'n must lie in [1, {len(scenes)}], got {n}')
    chosen = rng.choice(len(scenes), size=n, replace=False)
    pairs = []
    for i, scene_index in enumerate(chosen):
        shape, color, background = scenes[int(scene_index)]
        canvas = Image.new('RGB', (size, size), BACKGROUNDS[background])
        side = int(rng.integers(size // 3, size // 2 + 1))
        x0 = int(rng.integers(0, size - side))
        y0 = int(rng.integers(0, size - side))
        _draw_shape(ImageDraw.Draw(canvas), shape, (x0, y0, x0 + side, y0 + side),
                    COLORS[color])
        image = np.asarray(canvas, dtype=np.float32) / 255.0
        pairs.append(RawPair(image=image, caption=_scene_caption(shape, color, background),
                             id=f'synth-{i:05d}'))
    return pairs


# manifests

def load_image(path: str | Path) -> np.ndarray:
    """ Read an image file as an (H, W, 3) float32 raster in [0, 1] """
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert('RGB'), dtype=np.float32) / 255.0
    except OSError as exc:
        raise ArtifactError(path, f'unreadable image ({exc})') from exc


def save_image(image: np.ndarray, path: str | Path) -> None:
    """ Write a [0, 1] raster as a lossless PNG """
    pixels = np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8)
    try:
        Image.fromarray(pixels).save(path, format='PNG')
    except OSError as exc:
        raise ArtifactError(path, f'cannot write image ({exc})') from exc


def write_dataset(pairs: Sequence[RawPair], out_dir: str | Path) -> Path:
    """
    Store pairs as PNG files plus a manifest.jsonl with
    {"id", "image", "caption"} per line, image paths relative to out_dir.
    """
    out = Path(out_dir)
    (out / 'images').mkdir(parents=True, exist_ok=True)
    manifest = out / 'manifest.jsonl'
    with open(manifest, 'w', encoding='utf-8') as f:
        for pair in pairs:
            rel = f'images/{pair.id}.png'
            save_image(pair.image, out / rel)
            f.write(json.dumps({'id': pair.id, 'image': rel, 'caption': pair.caption}) + '\n')
    logger.info('wrote %d pairs to %s', len(pairs), manifest)
    return manifest


def read_manifest(path: str | Path) -> list[RawPair]:
    """ Load every pair listed in a manifest.jsonl """
    manifest = Path(path)
    pairs = []
    try:
        with open(manifest, encoding='utf-8') as f:
            lines = [line for line in f if line.strip()]
    except OSError as exc:
        raise ArtifactError(manifest, exc.strerror or 'unreadable') from exc
    for lineno, line in enumerate(lines, start=1):
        try:
            entry = json.loads(line)
            image_path = manifest.parent / entry['image']
            caption, pair_id = entry['caption'], entry['id']
        except (ValueError, KeyError) as exc:
            raise ArtifactError(manifest, f'bad entry on line {lineno}: {exc}') from exc
        pairs.append(RawPair(image=load_image(image_path), caption=caption, id=pair_id))
    ids = [p.id for p in pairs]
    if len(set(ids)) != len(ids):
        raise ArtifactError(manifest, 'duplicate pair ids')
    return pairs
