"""
Exception hierarchy of the package.

Every error raised on purpose derives from PredmapError, so callers (the CLI in
particular) can tell validation problems from genuine runtime failures.
"""

from pathlib import Path
from typing import Iterable


class PredmapError(Exception):
    """ Base class for all package errors """


class ConfigError(PredmapError, ValueError):
    """ Bad configuration key or value """


class ShapeError(PredmapError, ValueError):
    """ Tensor or raster of unexpected shape """


class CropRejectedError(PredmapError, ValueError):
    """ Crop geometry degenerated to an empty side """

    def __init__(self, dimension: str, value: float) -> None:
        super().__init__(f'crop {dimension} rounds to {value}; image too small '
                         f'for the configured crop scale')
        self.dimension = dimension


class PromptError(PredmapError, ValueError):
    """ Placeholder slot missing, duplicated or left unfilled """


class QueryError(PredmapError, ValueError):
    """ Malformed retrieval query or ground truth """


class NonFiniteError(PredmapError, FloatingPointError):
    """
    Loss or activation stopped being finite.
    batch_ids - ids of the items in the offending batch (if known)
    block_index - predictor block where activations blew up (if known)
    """

    def __init__(self, message: str,
                 batch_ids: Iterable[str] = (),
                 block_index: int | None = None) -> None:
        self.batch_ids = tuple(batch_ids)
        self.block_index = block_index
        if self.batch_ids:
            message = f'{message} (batch ids: {", ".join(self.batch_ids)})'
        super().__init__(message)


class ArtifactError(PredmapError, OSError):
    """ Artifact file could not be read or written """

    def __init__(self, path: str | Path, reason: str) -> None:
        super().__init__(f'{path}: {reason}')
        self.path = str(path)


class FrozenEncoderError(PredmapError, RuntimeError):
    """ Frozen encoder weights changed during a run """
