"""
Helper functions shared across the pipeline
"""

import hashlib
import math
import subprocess
from datetime import datetime, timezone
from enum import IntEnum
from importlib import metadata
from pathlib import Path
from typing import Any

import numpy as np
import torch


class Stream(IntEnum):
    """ Leading key of each independent random stream """
    SYNTH = 1
    FORGE = 2
    MASK = 3
    BATCH = 4
    PROBE = 5
    COMPOSITE = 6


def round_half_up(value: float) -> int:
    """ Round to the nearest integer, halves away from zero for positives """
    return int(math.floor(value + 0.5))


def derive_rng(seed: int, *stream: int) -> np.random.Generator:
    """
    Independent generator for a (seed, stream...) key.

    Every random draw in the pipeline goes through a generator keyed this way,
    so results depend only on the key and not on worker count or call order.
    """
    return np.random.default_rng([seed, *stream])


def module_checksum(module: torch.nn.Module) -> str:
    """ sha256 over every parameter and buffer, in state-dict order """
    digest = hashlib.sha256()
    for name, tensor in module.state_dict().items():
        digest.update(name.encode())
        digest.update(tensor.detach().cpu().contiguous().numpy().tobytes())
    return digest.hexdigest()


def version_string() -> str:
    """ git-describe output when run from a checkout, package version otherwise """
    try:
        out = subprocess.run(['git', 'describe', '--tags', '--always', '--dirty'],
                             capture_output=True, text=True, check=True, timeout=5,
                             cwd=Path(__file__).parent)
        if out.stdout.strip():
            return out.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    try:
        return metadata.version('predmap')
    except metadata.PackageNotFoundError:
        return '0.0.0+unknown'


def utc_now() -> str:
    """ Current time as an ISO-8601 string """
    return datetime.now(timezone.utc).isoformat(timespec='seconds')


def py2sqlite_type_converter(smth: Any) -> Any:
    """ Convert python values to sqlite3-storable ones """
    if type(smth) in [int, float, str]:
        return smth
    return str(smth)
