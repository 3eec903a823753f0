"""
Run configuration.

A config file is flat TOML whose keys mirror TrainConfig fields, e.g.

    preset = "toy"
    lr = 0.001
    crop_scale = [0.2, 0.25]
    no_gate = true

An optional `preset` key ("toy" or "paper") picks the base values the file
overrides.
"""

import difflib
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Any, Callable

from predmap.errors import ConfigError
from predmap.models.features import EncoderProfile


ABLATION_FLAGS = ('no_crop', 'no_action', 'no_gate', 'mask_source',
                  'predict_entire', 'eq5_order', 'standard_residual')

_PAIR_FIELDS = ('crop_scale', 'crop_aspect', 'block_scale', 'block_aspect', 'betas')


def _unit_range(pair: tuple[float, float]) -> bool:
    return 0 < pair[0] <= pair[1] <= 1


def _positive_range(pair: tuple[float, float]) -> bool:
    return 0 < pair[0] <= pair[1]


_FIELD_RULES: tuple[tuple[str, Callable[[Any], bool], str], ...] = (
    ('lr', lambda v: v > 0, 'must be positive'),
    ('warmup_steps', lambda v: v >= 0, 'must be >= 0'),
    ('batch_size', lambda v: v >= 2, 'must be >= 2'),
    ('max_steps', lambda v: v >= 0, 'must be >= 0'),
    ('depth', lambda v: v >= 0, 'must be >= 0'),
    ('tau', lambda v: v > 0, 'must be positive'),
    ('similarity', lambda v: v in ('cosine', 'dot'), 'must be "cosine" or "dot"'),
    ('grad_clip', lambda v: v >= 0, 'must be >= 0 (0 disables)'),
    ('crop_scale', _unit_range, 'must satisfy 0 < low <= high <= 1'),
    ('block_scale', _unit_range, 'must satisfy 0 < low <= high <= 1'),
    ('crop_aspect', _positive_range, 'must satisfy 0 < low <= high'),
    ('block_aspect', _positive_range, 'must satisfy 0 < low <= high'),
    ('min_crop_side', lambda v: v >= 1, 'must be >= 1'),
    ('checkpoint_every', lambda v: v >= 1, 'must be >= 1'),
    ('log_every', lambda v: v >= 1, 'must be >= 1'),
    ('workers', lambda v: v >= 0, 'must be >= 0'),
)


@dataclass(slots=True, frozen=True)
class TrainConfig:  # pylint: disable=too-many-instance-attributes
    """
    Every knob of a run. Defaults are the full-scale values; see toy_config()
    for the desk-scale preset.
    """
    # optimizer
    lr: float = 1e-5
    weight_decay: float = 0.1
    warmup_steps: int = 10000
    batch_size: int = 1024
    max_steps: int = 100000
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    grad_clip: float = 0.0
    seed: int = 0
    # world views
    crop_scale: tuple[float, float] = (0.2, 0.25)
    crop_aspect: tuple[float, float] = (0.75, 1.5)
    block_scale: tuple[float, float] = (0.2, 0.25)
    block_aspect: tuple[float, float] = (0.75, 1.5)
    min_crop_side: int = 8
    # encoders
    encoder: str = 'toy'
    embed_dim: int = 1024
    grid: int = 16
    image_size: int = 224
    encoder_seed: int = 0
    # predictor and fusion
    depth: int = 12
    width: int = 384
    heads: int = 8
    tau: float = 100.0
    similarity: str = 'cosine'
    # ablations
    no_crop: bool = False
    no_action: bool = False
    no_gate: bool = False
    mask_source: bool = False
    predict_entire: bool = False
    eq5_order: bool = False
    standard_residual: bool = False
    # run plumbing
    float64: bool = False
    checkpoint_every: int = 1000
    log_every: int = 50
    workers: int = 0

    def __post_init__(self) -> None:
        for name, valid, rule in _FIELD_RULES:
            value = getattr(self, name)
            if not valid(value):
                raise ConfigError(f'{name} {rule}, got {value!r}')
        if self.heads < 1 or self.width % self.heads:
            raise ConfigError(f'heads={self.heads} must divide width={self.width}')
        try:
            self.encoder_profile()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def encoder_profile(self) -> EncoderProfile:
        """ Profile of the frozen encoder pair this run uses """
        return EncoderProfile(name=self.encoder, embed_dim=self.embed_dim, grid=self.grid,
                              image_size=self.image_size, seed=self.encoder_seed)

    def ablations(self) -> list[str]:
        """ Names of the enabled ablation flags """
        return [name for name in ABLATION_FLAGS if getattr(self, name)]

    def to_dict(self) -> dict[str, Any]:
        """ Plain snapshot (tuples become lists) """
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> 'TrainConfig':
        """ Inverse of to_dict; rejects unknown keys """
        return replace(cls(), **_coerce(data))


def toy_config(**overrides: Any) -> TrainConfig:
    """ Desk-scale preset: small encoders, narrow predictor, short warmup """
    base = TrainConfig(lr=1e-3, warmup_steps=100, batch_size=16, max_steps=300,
                       embed_dim=32, grid=4, image_size=64, depth=4, width=64,
                       checkpoint_every=100, log_every=25)
    return replace(base, **_coerce(overrides)) if overrides else base


PRESETS: dict[str, Callable[..., TrainConfig]] = {'paper': TrainConfig, 'toy': toy_config}


def _is_number(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _typed(key: str, value: Any, default: Any) -> Any:
    """ value as the type of the field's default; ints widen to floats """
    if key in _PAIR_FIELDS:
        if (not isinstance(value, (list, tuple)) or len(value) != 2
                or not all(_is_number(v) for v in value)):
            raise ConfigError(f'{key} expects a [low, high] pair of numbers, got {value!r}')
        return (float(value[0]), float(value[1]))
    kind = type(default)
    if kind is float and _is_number(value):
        return float(value)
    if kind is bool and isinstance(value, bool):
        return value
    if kind in (int, str) and isinstance(value, kind) and not isinstance(value, bool):
        return value
    raise ConfigError(f'{key} expects {kind.__name__}, got {value!r}')


def _coerce(data: dict[str, Any]) -> dict[str, Any]:
    """ Check keys against TrainConfig fields and values against the field types """
    defaults = {f.name: f.default for f in fields(TrainConfig)}
    out: dict[str, Any] = {}
    for key, value in data.items():
        if key not in defaults:
            near = difflib.get_close_matches(key, list(defaults), n=1)
            hint = f'; did you mean {near[0]!r}?' if near else ''
            raise ConfigError(f'unknown config key {key!r}{hint}')
        out[key] = _typed(key, value, defaults[key])
    return out


def parse_override(item: str) -> tuple[str, Any]:
    """ Parse a `key=value` command-line override; value uses TOML syntax """
    key, sep, raw = item.partition('=')
    if not sep or not key.strip():
        raise ConfigError(f'override {item!r} is not of the form key=value')
    try:
        value = tomllib.loads(f'v = {raw.strip()}')['v']
    except tomllib.TOMLDecodeError:
        value = raw.strip()
    return key.strip(), value


def load_config(path: str | Path | None = None,
                overrides: dict[str, Any] | None = None) -> TrainConfig:
    """
    Build a config from an optional flat TOML file plus overrides (overrides win).

    Parameters
    ----------
    path - config file, None for the toy preset alone
    overrides - field values taking precedence over the file

    Returns
    -------
    Validated TrainConfig
    """
    data: dict[str, Any] = {}
    if path is not None:
        try:
            with open(path, 'rb') as f:
                data = tomllib.load(f)
        except OSError as exc:
            raise ConfigError(f'cannot read config {path}: {exc.strerror}') from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f'config {path} is not valid TOML: {exc}') from exc
        nested = [k for k, v in data.items() if isinstance(v, dict)]
        if nested:
            raise ConfigError(f'config {path} must be flat; found tables {nested}')
    data.update(overrides or {})
    preset = data.pop('preset', 'toy')
    if preset not in PRESETS:
        raise ConfigError(f'unknown preset {preset!r}; expected one of {sorted(PRESETS)}')
    return replace(PRESETS[preset](), **_coerce(data))
