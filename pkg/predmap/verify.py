"""
Property suites run by `predmap verify`.

grad        finite differences against autograd on a float64 toy graph
oracle      losses and retrieval metrics against naive loop implementations
invariants  seeded sweeps over crop geometry, mask blocks, gate-zero fusion
            and predictor output partitions
"""

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import torch

from predmap.alignment import AlignmentBatch, FusionHead, build_training_prompt, contrastive_loss
from predmap.config import toy_config
from predmap.encoders import build_encoders
from predmap.mapper import PredictiveMapper, encode_triplets
from predmap.models.features import PseudoToken
from predmap.models.retrieval import Gallery
from predmap.models.views import MaskBlock
from predmap.predictor import ContentPredictor, prediction_loss
from predmap.retrieval import map_at_k, rank, recall_at_k
from predmap.utils import derive_rng
from predmap.world_views import (CropRanges, forge_batch, sample_crop_spec, sample_mask_block,
                                 synth_dataset)


logger = logging.getLogger(__name__)

GRAD_TOLERANCE = 1e-4
ORACLE_TOLERANCE = 1e-10


@dataclass(slots=True)
class SuiteResult:
    """
    Outcome of one suite.
    checks - number of individual comparisons made
    failures - description of every failed comparison
    stats - headline numbers (max errors, mismatch counts)
    """
    name: str
    checks: int = 0
    failures: list[str] = field(default_factory=list)
    stats: dict[str, float] = field(default_factory=dict)
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        """ No failed comparison """
        return not self.failures

    def check(self, ok: bool, message: str) -> None:
        """ Count a comparison, remembering it when it failed """
        self.checks += 1
        if not ok:
            self.failures.append(message)


def _mixed_error(numeric: float, analytic: float) -> float:
    """ |a - b| relative to max(|a|, |b|, 1) """
    return abs(numeric - analytic) / max(abs(numeric), abs(analytic), 1.0)


# gradients

def grad_suite(seed: int = 0, eps: float = 1e-6) -> SuiteResult:
    """
    Directional central differences of L = L_pred + L_align for every trainable
    parameter, plus a Jacobian-vector check of the prompt encoder in S*.
    Toy graph: N=2, p=16, g=4, |B|=4, batch 4, float64, gate alpha 0.5.
    """
    result = SuiteResult('grad')
    started = time.perf_counter()
    cfg = toy_config(depth=2, width=16, heads=4, batch_size=4, float64=True, seed=seed)
    encoders = build_encoders(cfg.encoder_profile(), torch.float64)
    mapper = PredictiveMapper.from_config(cfg)
    with torch.no_grad():
        mapper.fusion.gate_alpha.fill_(0.5)
    pairs = synth_dataset(4, derive_rng(seed))
    batch = encode_triplets(encoders, forge_batch(pairs, cfg, step=0))
    block = MaskBlock.rectangle(cfg.grid, 1, 1, 2, 2)
    mapper.train()

    def loss() -> torch.Tensor:
        return mapper.losses(encoders, batch, block, cfg.tau).loss

    mapper.zero_grad()
    loss().backward()
    gen = torch.Generator().manual_seed(seed)
    worst = 0.0
    for name, param in mapper.named_parameters():
        direction = torch.randn(param.shape, generator=gen, dtype=param.dtype)
        direction /= direction.norm()
        analytic = float((param.grad * direction).sum())
        with torch.no_grad():
            param.add_(eps * direction)
            upper = float(loss())
            param.sub_(2 * eps * direction)
            lower = float(loss())
            param.add_(eps * direction)
        error = _mixed_error((upper - lower) / (2 * eps), analytic)
        worst = max(worst, error)
        result.check(error < GRAD_TOLERANCE, f'{name}: relative error {error:.3e}')

    token = torch.randn(cfg.embed_dim, generator=gen, dtype=torch.float64)
    direction = torch.randn(cfg.embed_dim, generator=gen, dtype=torch.float64)

    def embed(vector: torch.Tensor) -> torch.Tensor:
        return encoders.encode_prompt([build_training_prompt(encoders, PseudoToken(vector))])[0]

    _, jvp = torch.autograd.functional.jvp(embed, token, direction)
    with torch.no_grad():
        numeric = (embed(token + eps * direction) - embed(token - eps * direction)) / (2 * eps)
    error = max(_mixed_error(float(n), float(a)) for n, a in zip(numeric, jvp))
    worst = max(worst, error)
    result.check(error < GRAD_TOLERANCE, f'dt_p/dS*: relative error {error:.3e}')

    result.stats['max_relative_error'] = worst
    result.seconds = time.perf_counter() - started
    return result


# oracles

def naive_prediction_loss(predicted: np.ndarray, target: np.ndarray) -> float:
    """ Double loop over rows and coordinates """
    total = 0.0
    for i in range(predicted.shape[0]):
        for j in range(predicted.shape[1]):
            total += (predicted[i, j] - target[i, j]) ** 2
    return total


def naive_contrastive_loss(t: np.ndarray, v: np.ndarray, tau: float) -> float:
    """ Text-to-image plus image-to-text InfoNCE, written out per pair """
    size = t.shape[0]
    t = [row / math.sqrt(sum(x * x for x in row)) for row in t]
    v = [row / math.sqrt(sum(x * x for x in row)) for row in v]
    sim = [[tau * sum(a * b for a, b in zip(t[i], v[j])) for j in range(size)]
           for i in range(size)]
    t2i = i2t = 0.0
    for i in range(size):
        t2i -= sim[i][i] - math.log(sum(math.exp(sim[i][j]) for j in range(size)))
        i2t -= sim[i][i] - math.log(sum(math.exp(sim[j][i]) for j in range(size)))
    return (t2i + i2t) / size


def naive_ranking(query: np.ndarray, ids: list[str], features: np.ndarray) -> list[str]:
    """ Python sort on (-cosine, id) """
    scores = {}
    for cid, row in zip(ids, features):
        dot = sum(a * b for a, b in zip(query, row))
        norm = math.sqrt(sum(a * a for a in query)) * math.sqrt(sum(b * b for b in row))
        scores[cid] = dot / norm
    return sorted(ids, key=lambda cid: (-scores[cid], cid))


def naive_recall(ranked: list[list[str]], truths: list[set[str]], k: int) -> float:
    """ Count of queries hit within the top k """
    hits = 0
    for ids, truth in zip(ranked, truths):
        if any(cid in truth for cid in ids[:k]):
            hits += 1
    return hits / len(ranked)


def naive_map(ranked: list[list[str]], truths: list[set[str]], k: int) -> float:
    """ AP@k walking the ranked list position by position """
    total = 0.0
    for ids, truth in zip(ranked, truths):
        hits, ap = 0, 0.0
        for j in range(1, k + 1):
            if ids[j - 1] in truth:
                hits += 1
                ap += hits / j
        total += ap / min(k, len(truth))
    return total / len(ranked)


def _loss_oracles(result: SuiteResult, rng: np.random.Generator, instances: int) -> None:
    worst = 0.0
    for _ in range(instances):
        rows, cols = int(rng.integers(1, 6)), int(rng.integers(1, 9))
        pred, target = rng.normal(size=(rows, cols)), rng.normal(size=(rows, cols))
        got = float(prediction_loss(torch.from_numpy(pred), torch.from_numpy(target)))
        err = abs(got - naive_prediction_loss(pred, target))
        worst = max(worst, err)
        result.check(err <= ORACLE_TOLERANCE, f'prediction loss off by {err:.3e}')

        size, dim = int(rng.integers(2, 7)), int(rng.integers(2, 9))
        tau = float(rng.uniform(0.5, 20.0))
        t, v = rng.normal(size=(size, dim)), rng.normal(size=(size, dim))
        got = float(contrastive_loss(AlignmentBatch(torch.from_numpy(t), torch.from_numpy(v),
                                                    tau)))
        err = abs(got - naive_contrastive_loss(t, v, tau))
        worst = max(worst, err)
        result.check(err <= ORACLE_TOLERANCE, f'contrastive loss off by {err:.3e}')
    result.stats['max_loss_error'] = worst

    for size in (2, 4, 16):
        t, v = rng.normal(size=(size, 8)), rng.normal(size=(size, 8))
        limit = float(contrastive_loss(AlignmentBatch(torch.from_numpy(t), torch.from_numpy(v),
                                                      1e-9)))
        err = abs(limit - 2 * math.log(size))
        result.check(err < 1e-6, f'tau->0 limit at |B|={size} off by {err:.3e}')


def _metric_oracles(result: SuiteResult, rng: np.random.Generator, instances: int) -> None:
    mismatches = 0
    for _ in range(instances):
        ids = [f'g{i:03d}' for i in rng.permutation(50)]
        features = rng.normal(size=(50, 8))
        gallery = Gallery(ids=tuple(ids), features=features)
        queries = rng.normal(size=(5, 8))
        truths = [set(rng.choice(ids, size=int(rng.integers(1, 4)), replace=False))
                  for _ in queries]
        rankings = [rank(q, gallery) for q in queries]
        naive = [naive_ranking(list(q), ids, features) for q in queries]
        same_order = all(list(r.ids) == n for r, n in zip(rankings, naive))
        result.check(same_order, 'ranking differs from the sort oracle')
        mismatches += not same_order
        previous = 0.0
        for k in (1, 2, 5, 10, 25, 50):
            recall = recall_at_k(rankings, truths, k)
            ok = recall == naive_recall(naive, truths, k) \
                and map_at_k(rankings, truths, k) == naive_map(naive, truths, k)
            result.check(ok, f'metric mismatch at K={k}')
            result.check(recall >= previous, f'Recall@{k} decreased')
            mismatches += not ok
            previous = recall
    result.stats['metric_mismatches'] = mismatches


def oracle_suite(seed: int = 0, instances: int = 100) -> SuiteResult:
    """ Loss and metric implementations against naive loops on random instances """
    result = SuiteResult('oracle')
    started = time.perf_counter()
    rng = derive_rng(seed)
    _loss_oracles(result, rng, instances)
    _metric_oracles(result, rng, instances)
    result.stats['mismatches'] = len(result.failures)
    result.seconds = time.perf_counter() - started
    return result


# invariants

def _crop_invariants(result: SuiteResult, rng: np.random.Generator) -> None:
    ranges = CropRanges()
    width, height = int(rng.integers(32, 129)), int(rng.integers(32, 129))
    spec = sample_crop_spec(width, height, ranges, rng)
    result.check(spec.fits(width, height), f'crop {spec} leaves {width}x{height}')
    slack = 0.5 * (spec.width + spec.height) + 0.75
    area = spec.crop_scale * width * height
    result.check(abs(spec.width * spec.height - area) <= slack,
                 f'crop area {spec.width * spec.height} vs {area:.2f} for {width}x{height}')
    result.check(ranges.scale[0] <= spec.crop_scale <= ranges.scale[1],
                 f'crop scale {spec.crop_scale} out of range')


def _block_invariants(result: SuiteResult, rng: np.random.Generator) -> None:
    grid = int(rng.integers(2, 17))
    block = sample_mask_block(grid, CropRanges(), rng)
    result.check(0 < len(block) < grid * grid, f'block of {len(block)} on a {grid} grid')
    rows = {r for r, _ in block.indices}
    cols = {c for _, c in block.indices}
    result.check(len(rows) * len(cols) == len(block), 'block is not a rectangle')


def _gate_invariants(result: SuiteResult, head: FusionHead, gen: torch.Generator) -> None:
    enhanced = torch.randn(1, 4, 8, generator=gen, dtype=torch.float64)
    predicted = torch.randn(1, 3, 8, generator=gen, dtype=torch.float64)
    source = torch.randn(1, 8, generator=gen, dtype=torch.float64)
    with torch.no_grad():
        fused = head(enhanced, predicted, source)
        perturbed = head(enhanced, predicted + 10 * torch.randn(predicted.shape, generator=gen,
                                                                dtype=torch.float64), source)
        baseline = head.map_source(source)
    result.check(torch.equal(fused, baseline) and torch.equal(fused, perturbed),
                 'gate-zero fusion depends on predictor output')


def _shape_invariants(result: SuiteResult, predictor: ContentPredictor,
                      rng: np.random.Generator, gen: torch.Generator) -> None:
    block = sample_mask_block(predictor.grid, CropRanges(), rng)
    batch = int(rng.integers(1, 4))
    action = torch.randn(batch, predictor.embed_dim, generator=gen, dtype=torch.float64)
    patches = torch.randn(batch, predictor.grid ** 2, predictor.embed_dim, generator=gen,
                          dtype=torch.float64)
    with torch.no_grad():
        out = predictor(action, patches, block)
    sizes = (out.action_out.shape[0], out.enhanced_source.shape[1], out.predicted.shape[1])
    result.check(out.action_out.ndim == 2 and sizes == (batch, predictor.grid ** 2, len(block)),
                 f'predictor partition {sizes} for block of {len(block)}')


def invariants_suite(seed: int = 0, samples: int = 1000) -> SuiteResult:
    """ Seeded property sweep; every sample runs every property """
    result = SuiteResult('invariants')
    started = time.perf_counter()
    gen = torch.Generator().manual_seed(seed)
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        head = FusionHead(8, 8).double()
        predictor = ContentPredictor(8, 8, 1, 2, 4).double().eval()
    for index in range(samples):
        rng = derive_rng(seed, index)
        _crop_invariants(result, rng)
        _block_invariants(result, rng)
        _gate_invariants(result, head, gen)
        _shape_invariants(result, predictor, rng, gen)
    result.stats['samples'] = samples
    result.seconds = time.perf_counter() - started
    return result


SUITES: dict[str, Callable[..., SuiteResult]] = {
    'grad': grad_suite,
    'oracle': oracle_suite,
    'invariants': invariants_suite,
}


def run_suites(name: str, seed: int = 0) -> list[SuiteResult]:
    """ Run one suite by name, or all of them for 'all' """
    names = list(SUITES) if name == 'all' else [name]
    unknown = [n for n in names if n not in SUITES]
    if unknown:
        raise ValueError(f'unknown suite {unknown[0]!r}; expected one of {sorted(SUITES)} '
                         f'or "all"')
    results = []
    for suite in names:
        logger.info('running %s suite', suite)
        results.append(SUITES[suite](seed=seed))
    return results
