"""
Training loop: batching, AdamW with linear warmup, checkpoints and metrics.

Every random draw of a step comes from a generator keyed by (seed, stream,
step), so a run resumed from a checkpoint at step k repeats steps k, k+1, ...
of the uninterrupted run exactly.
"""

import logging
import math
import os
import pickle
from dataclasses import dataclass, field, replace
from functools import partial
from pathlib import Path
from typing import Any, Sequence

import torch
from torch import nn

from predmap.config import TrainConfig
from predmap.encoders import AbstractEncoderPair, build_encoders
from predmap.errors import ArtifactError, FrozenEncoderError, NonFiniteError
from predmap.mapper import PredictiveMapper, encode_triplets
from predmap.models.features import VisualFeatures
from predmap.models.pair import RawPair
from predmap.models.records import StepMetrics, record_from_json, record_to_json
from predmap.models.views import MaskBlock, ViewTriplet
from predmap.repository.abstract_repository import AbstractRepository
from predmap.repository.jsonl_repository import JsonLinesRepository
from predmap.utils import Stream, derive_rng
from predmap.world_views import CropRanges, forge_batch, sample_mask_block


logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = 1
FINAL_CHECKPOINT = 'checkpoint.pt'
METRICS_LOG = 'metrics.jsonl'

# knobs a resumed run may change without altering the trajectory
RESUMABLE_OVERRIDES = ('max_steps', 'checkpoint_every', 'log_every', 'workers')


@dataclass(eq=False)
class TrainState:
    """
    Mutable training state.
    step - number of completed optimizer updates
    """
    cfg: TrainConfig
    encoders: AbstractEncoderPair
    mapper: PredictiveMapper
    optimizer: torch.optim.Optimizer
    step: int = 0


@dataclass(slots=True, eq=False)
class Checkpoint:
    """ Contents of a checkpoint archive """
    step: int
    config: TrainConfig
    manifest: list[dict[str, Any]]
    mapper_state: dict[str, torch.Tensor]
    optimizer_state: dict[str, Any]
    rng_state: dict[str, Any] = field(default_factory=dict)


@dataclass(slots=True, eq=False)
class TrainResult:
    """ Outcome of run_training """
    state: TrainState
    checkpoint: Path
    metrics: list[StepMetrics]


def learning_rate(cfg: TrainConfig, step: int) -> float:
    """ lr * min(1, step / warmup_steps); full lr when warmup is off """
    if cfg.warmup_steps == 0:
        return cfg.lr
    return cfg.lr * min(1.0, step / cfg.warmup_steps)


def build_optimizer(cfg: TrainConfig, mapper: PredictiveMapper) -> torch.optim.Optimizer:
    """ AdamW over the mapper; gate, mask token and positions are not decayed """
    return torch.optim.AdamW(mapper.parameter_groups(cfg.weight_decay), lr=cfg.lr,
                             betas=cfg.betas, eps=cfg.eps)


def init_state(cfg: TrainConfig) -> TrainState:
    """ Fresh encoders, mapper and optimizer for cfg """
    dtype = torch.float64 if cfg.float64 else torch.float32
    encoders = build_encoders(cfg.encoder_profile(), dtype)
    mapper = PredictiveMapper.from_config(cfg)
    return TrainState(cfg=cfg, encoders=encoders, mapper=mapper,
                      optimizer=build_optimizer(cfg, mapper))


def step_block(cfg: TrainConfig, step: int) -> MaskBlock:
    """ Mask block of a step, shared by the whole batch """
    rng = derive_rng(cfg.seed, Stream.MASK, step)
    return sample_mask_block(cfg.grid, CropRanges.for_blocks(cfg), rng,
                             entire=cfg.predict_entire)


def step_pairs(cfg: TrainConfig, pairs: Sequence[RawPair], step: int) -> list[RawPair]:
    """ Pairs drawn without replacement for a step """
    size = min(cfg.batch_size, len(pairs))
    chosen = derive_rng(cfg.seed, Stream.BATCH, step).choice(len(pairs), size, replace=False)
    return [pairs[i] for i in chosen]


def train_step(state: TrainState, triplets: Sequence[ViewTriplet],
               block: MaskBlock | None = None) -> StepMetrics:
    """
    One optimizer update on the mapper parameters.

    Parameters
    ----------
    state - training state, advanced in place
    triplets - the batch
    block - mask block; drawn from the step's stream if None

    Returns
    -------
    Metrics of the update (step is the 0-based update index)
    """
    cfg = state.cfg
    if block is None:
        block = step_block(cfg, state.step)
    lr = learning_rate(cfg, state.step)
    for group in state.optimizer.param_groups:
        group['lr'] = lr

    batch = encode_triplets(state.encoders, triplets, no_action=cfg.no_action)
    state.mapper.train()
    state.optimizer.zero_grad(set_to_none=True)
    try:
        terms = state.mapper.losses(state.encoders, batch, block, cfg.tau)
    except NonFiniteError as exc:
        raise NonFiniteError(f'step {state.step}: {exc}', batch_ids=batch.ids,
                             block_index=exc.block_index) from exc
    terms.loss.backward()
    max_norm = cfg.grad_clip if cfg.grad_clip > 0 else math.inf
    grad_norm = float(nn.utils.clip_grad_norm_(state.mapper.parameters(), max_norm))
    if not math.isfinite(grad_norm):
        raise NonFiniteError(f'step {state.step}: gradient norm is {grad_norm}',
                             batch_ids=batch.ids)
    gate_value = state.mapper.fusion.gate_value
    state.optimizer.step()

    metrics = StepMetrics(step=state.step, l_pred=float(terms.l_pred.detach()),
                          l_align=float(terms.l_align.detach()), loss=float(terms.loss.detach()),
                          gate_value=gate_value,
                          grad_norm=grad_norm, lr=lr)
    state.step += 1
    return metrics


def metrics_repository(out_dir: str | Path) -> JsonLinesRepository[StepMetrics]:
    """ JSON-lines metrics log of a run directory """
    return JsonLinesRepository(Path(out_dir) / METRICS_LOG, record_to_json,
                               partial(record_from_json, StepMetrics))


def save_checkpoint(state: TrainState, path: str | Path) -> Path:
    """ Write the trainable state to a single archive, atomically """
    path = Path(path)
    mapper_state = state.mapper.state_dict()
    archive = {
        'format_version': CHECKPOINT_FORMAT,
        'step': state.step,
        'config': state.cfg.to_dict(),
        'rng_state': {'seed': state.cfg.seed, 'next_step': state.step,
                      'torch': torch.get_rng_state()},
        'manifest': [{'name': name, 'shape': list(t.shape), 'dtype': str(t.dtype)}
                     for name, t in mapper_state.items()],
        'mapper': mapper_state,
        'optimizer': state.optimizer.state_dict(),
    }
    tmp = path.with_name(path.name + '.tmp')
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        torch.save(archive, tmp)
        os.replace(tmp, path)
    except OSError as exc:
        raise ArtifactError(path, f'cannot write checkpoint ({exc})') from exc
    logger.info('checkpoint at step %d written to %s', state.step, path)
    return path


def load_checkpoint(path: str | Path) -> Checkpoint:
    """ Read and validate a checkpoint archive """
    try:
        archive = torch.load(path, map_location='cpu', weights_only=True)
    except (OSError, RuntimeError, EOFError, pickle.UnpicklingError) as exc:
        raise ArtifactError(path, f'unreadable checkpoint ({exc})') from exc
    version = archive.get('format_version') if isinstance(archive, dict) else None
    if version != CHECKPOINT_FORMAT:
        raise ArtifactError(path, f'unsupported checkpoint format {version}')
    try:
        config = TrainConfig.from_dict(archive['config'])
        ckpt = Checkpoint(step=int(archive['step']), config=config,
                          manifest=list(archive['manifest']),
                          mapper_state=archive['mapper'],
                          optimizer_state=archive['optimizer'],
                          rng_state=archive.get('rng_state', {}))
    except (KeyError, ValueError, TypeError) as exc:
        raise ArtifactError(path, f'malformed checkpoint ({exc})') from exc
    for entry in ckpt.manifest:
        tensor = ckpt.mapper_state.get(entry['name'])
        if tensor is None or list(tensor.shape) != entry['shape'] \
                or str(tensor.dtype) != entry['dtype']:
            raise ArtifactError(path, f'array {entry["name"]} does not match its manifest entry')
    return ckpt


def restore(ckpt: Checkpoint, cfg: TrainConfig | None = None) -> TrainState:
    """
    Training state of a checkpoint. Fields named in RESUMABLE_OVERRIDES are
    taken from cfg when given; everything else comes from the checkpoint.
    """
    run_cfg = ckpt.config
    if cfg is not None:
        run_cfg = replace(run_cfg, **{k: getattr(cfg, k) for k in RESUMABLE_OVERRIDES})
    state = init_state(run_cfg)
    state.mapper.load_state_dict(ckpt.mapper_state)
    state.optimizer.load_state_dict(ckpt.optimizer_state)
    state.step = ckpt.step
    return state


def _probe_output(state: TrainState) -> torch.Tensor:
    """ Mapper output on a fixed synthetic input, for round-trip comparison """
    cfg = state.cfg
    dtype = next(state.mapper.parameters()).dtype
    gen = torch.Generator().manual_seed(int(derive_rng(cfg.seed, Stream.PROBE).integers(2**31)))
    action = torch.randn(2, cfg.embed_dim, generator=gen, dtype=dtype)
    source = VisualFeatures(global_=torch.randn(2, cfg.embed_dim, generator=gen, dtype=dtype),
                            patches=torch.randn(2, cfg.grid ** 2, cfg.embed_dim,
                                                generator=gen, dtype=dtype))
    state.mapper.eval()
    with torch.no_grad():
        tokens, _ = state.mapper(action, source, MaskBlock.full(cfg.grid))
    return tokens


def check_round_trip(state: TrainState, path: str | Path) -> None:
    """ Reload the checkpoint at path and require bitwise-equal mapper output """
    expected = _probe_output(state)
    reloaded = restore(load_checkpoint(path), state.cfg)
    if not torch.equal(expected, _probe_output(reloaded)):
        raise ArtifactError(path, 'reloaded checkpoint does not reproduce the mapper output')


def run_training(cfg: TrainConfig, pairs: Sequence[RawPair], out_dir: str | Path,
                 resume: str | Path | None = None,
                 registry: AbstractRepository[StepMetrics] | None = None) -> TrainResult:
    """
    Train until cfg.max_steps updates are done.

    Parameters
    ----------
    cfg - run configuration
    pairs - training pairs, at least two
    out_dir - receives periodic and final checkpoints plus the metrics log
    resume - checkpoint to continue from; metrics at or after its step are dropped
    registry - optional extra repository receiving every StepMetrics

    Returns
    -------
    TrainResult with the final state, checkpoint path and the full metrics sequence
    """
    if len(pairs) < 2:
        raise ValueError(f'training needs at least 2 pairs, got {len(pairs)}')
    out = Path(out_dir)
    if resume is not None:
        state = restore(load_checkpoint(resume), cfg)
        logger.info('resuming from %s at step %d', resume, state.step)
    else:
        state = init_state(cfg)
    cfg = state.cfg
    if cfg.batch_size > len(pairs):
        logger.warning('batch size %d exceeds %d pairs; using %d',
                       cfg.batch_size, len(pairs), len(pairs))

    log = metrics_repository(out)
    dropped = log.delete_where({'step': lambda s: s >= state.step})
    if dropped:
        logger.info('dropped %d metric rows at or after step %d', dropped, state.step)

    frozen_before = state.encoders.checksum()
    while state.step < cfg.max_steps:
        triplets = forge_batch(step_pairs(cfg, pairs, state.step), cfg, state.step,
                               workers=cfg.workers)
        metrics = train_step(state, triplets)
        log.add(metrics)
        if registry is not None:
            registry.add(replace(metrics, pk=0))
        if state.step % cfg.log_every == 0 or state.step == cfg.max_steps:
            logger.info('step %d L_pred %.4f L_align %.4f L %.4f gate %.4f lr %.2e',
                        metrics.step, metrics.l_pred, metrics.l_align, metrics.loss,
                        metrics.gate_value, metrics.lr)
        if state.step % cfg.checkpoint_every == 0 and state.step < cfg.max_steps:
            save_checkpoint(state, out / f'checkpoint-{state.step:06d}.pt')

    if state.encoders.checksum() != frozen_before:
        raise FrozenEncoderError('encoder weights changed during training')
    final = save_checkpoint(state, out / FINAL_CHECKPOINT)
    check_round_trip(state, final)
    return TrainResult(state=state, checkpoint=final,
                       metrics=sorted(log.get_all(), key=lambda m: m.step))
