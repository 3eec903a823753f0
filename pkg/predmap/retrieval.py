"""
Composed-query retrieval: prompt templates, query composition through a trained
mapper, gallery embedding, ranking and Recall@K / mAP@K.
"""

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np
import torch

from predmap.config import TrainConfig
from predmap.encoders import AbstractEncoderPair
from predmap.errors import ArtifactError, QueryError, ShapeError
from predmap.mapper import PredictiveMapper
from predmap.models.features import PseudoToken
from predmap.models.pair import RawPair
from predmap.models.retrieval import EvalReport, Gallery, QuerySpec, RankedRetrieval, Template
from predmap.models.views import MaskBlock
from predmap.training import load_checkpoint, restore
from predmap.utils import Stream, derive_rng
from predmap.world_views import load_image, make_triplet, save_image


logger = logging.getLogger(__name__)

GALLERY_CACHE_VERSION = 1
EMBED_CHUNK = 64


@dataclass(slots=True, eq=False)
class QueryModel:
    """ Frozen encoders plus a trained mapper, ready for inference """
    cfg: TrainConfig
    encoders: AbstractEncoderPair
    mapper: PredictiveMapper

    @classmethod
    def from_checkpoint(cls, path: str | Path) -> 'QueryModel':
        """ Load a training checkpoint for inference """
        state = restore(load_checkpoint(path))
        state.mapper.eval()
        return cls(cfg=state.cfg, encoders=state.encoders, mapper=state.mapper)


def prompt_text(spec: QuerySpec) -> str:
    """
    Prompt sentence of a query.
    domain conversion    "a {tag} of [*]"
    object composition   "a photo of [*], [o1] and [o2], [o3], ..., [on]"
    sentence             "a photo of [*], {text}" ("a photo of [*]" for empty text)
    """
    if any(not tag.strip() for tag in spec.slots):
        raise QueryError(f'query {spec.id}: empty template slot')
    if spec.template is Template.DOMAIN_CONVERSION:
        if len(spec.slots) != 1:
            raise QueryError(f'query {spec.id}: domain conversion needs one domain tag')
        return f'a {spec.slots[0]} of [*]'
    if spec.template is Template.OBJECT_COMPOSITION:
        if not spec.slots:
            raise QueryError(f'query {spec.id}: object composition needs object tags')
        tags = [f'[{tag}]' for tag in spec.slots]
        objects = tags[0] if len(tags) == 1 else f'{tags[0]} and {tags[1]}'
        if len(tags) > 2:
            objects += ''.join(f', {tag}' for tag in tags[2:])
        return f'a photo of [*], {objects}'
    text = spec.text.strip()
    return f'a photo of [*], {text}' if text else 'a photo of [*]'


def compose_query(spec: QuerySpec, model: QueryModel) -> np.ndarray:
    """
    Embed a composed query as a d-vector.

    The template sentence is both the action fed to the predictor and the
    prompt whose placeholder receives S*. The mask block covers the full grid.
    """
    text = prompt_text(spec)
    encoders, cfg = model.encoders, model.cfg
    source = encoders.encode_image(encoders.prepare_images([spec.reference]))
    if cfg.no_action:
        action = torch.zeros_like(source.global_)
    else:
        action = encoders.encode_text([text]).cls.vectors
    model.mapper.eval()
    with torch.no_grad():
        tokens, _ = model.mapper(action, source, MaskBlock.full(cfg.grid))
        prompt = encoders.prompt(text).inject(PseudoToken(tokens[0]))
        embedding = encoders.encode_prompt([prompt])[0]
    return embedding.double().numpy()


def similarity_scores(query: np.ndarray, features: np.ndarray,
                      similarity: str = 'cosine') -> np.ndarray:
    """ Scores of one query against feature rows, in float64 """
    q = np.asarray(query, dtype=np.float64)
    rows = np.asarray(features, dtype=np.float64)
    scores = rows @ q
    if similarity == 'cosine':
        norms = np.maximum(np.linalg.norm(rows, axis=1) * np.linalg.norm(q), 1e-12)
        scores = scores / norms
    elif similarity != 'dot':
        raise ValueError(f'unknown similarity {similarity!r}')
    return scores


def rank(query: np.ndarray, gallery: Gallery, similarity: str = 'cosine') -> RankedRetrieval:
    """ Full gallery ranking by descending score, ties by ascending id """
    if len(gallery) == 0:
        raise QueryError('cannot rank against an empty gallery')
    if np.shape(query) != (gallery.dim,):
        raise ShapeError(f'query of shape {np.shape(query)} against a d={gallery.dim} gallery')
    scores = similarity_scores(query, gallery.features, similarity)
    id_order = np.empty(len(gallery), dtype=np.int64)
    id_order[np.argsort(np.array(gallery.ids))] = np.arange(len(gallery))
    order = np.lexsort((id_order, -scores))
    return RankedRetrieval(ids=tuple(gallery.ids[i] for i in order),
                           scores=tuple(float(scores[i]) for i in order))


def _truth_ranks(rankings: Sequence[RankedRetrieval], truths: Sequence[Iterable[str]],
                 names: Sequence[str] | None = None) -> list[list[int]]:
    """ Sorted 1-based ranks of every truth id, per query """
    if len(rankings) != len(truths):
        raise QueryError(f'{len(rankings)} rankings but {len(truths)} truth sets')
    out = []
    for i, (ranking, truth) in enumerate(zip(rankings, truths)):
        name = names[i] if names else f'#{i}'
        truth = set(truth)
        if not truth:
            raise QueryError(f'query {name} has no ground-truth ids')
        position = {cid: r for r, cid in enumerate(ranking.ids, start=1)}
        missing = sorted(truth - position.keys())
        if missing:
            raise QueryError(f'query {name}: truth ids {missing} are not in the gallery')
        out.append(sorted(position[t] for t in truth))
    return out


def recall_at_k(rankings: Sequence[RankedRetrieval], truths: Sequence[Iterable[str]],
                k: int, names: Sequence[str] | None = None) -> float:
    """ Fraction of queries with any truth id in the top k """
    if k < 1:
        raise ValueError(f'K must be >= 1, got {k}')
    ranks = _truth_ranks(rankings, truths, names)
    return sum(r[0] <= k for r in ranks) / len(ranks)


def _average_precision(ranks: list[int], k: int) -> float:
    hits = [r for r in ranks if r <= k]
    precision = sum((j + 1) / r for j, r in enumerate(hits))
    return precision / min(k, len(ranks))


def map_at_k(rankings: Sequence[RankedRetrieval], truths: Sequence[Iterable[str]],
             k: int, names: Sequence[str] | None = None) -> float:
    """ Mean over queries of AP truncated at k, normalized by min(k, |truth|) """
    if k < 1:
        raise ValueError(f'K must be >= 1, got {k}')
    ranks = _truth_ranks(rankings, truths, names)
    return sum(_average_precision(r, k) for r in ranks) / len(ranks)


def evaluate(rankings: Sequence[RankedRetrieval], truths: Sequence[Iterable[str]],
             ks: Iterable[int], names: Sequence[str] | None = None) -> EvalReport:
    """ Recall@K and mAP@K for every K (ascending), plus per-query best ranks """
    ks = sorted(set(ks))
    if not ks or ks[0] < 1:
        raise ValueError(f'K values must be >= 1, got {ks}')
    truths = [set(t) for t in truths]
    ranks = _truth_ranks(rankings, truths, names)
    return EvalReport(recall={k: recall_at_k(rankings, truths, k, names) for k in ks},
                      map={k: map_at_k(rankings, truths, k, names) for k in ks},
                      ranks=[r[0] for r in ranks])


def evaluate_queries(model: QueryModel, queries: Sequence[QuerySpec], gallery: Gallery,
                     ks: Iterable[int]) -> tuple[EvalReport, list[RankedRetrieval]]:
    """ Compose, rank and score every query against the gallery """
    if gallery.dim != model.cfg.embed_dim:
        raise ShapeError(f'checkpoint embeds into d={model.cfg.embed_dim} but the gallery '
                         f'has d={gallery.dim}')
    rankings = [rank(compose_query(q, model), gallery, model.cfg.similarity) for q in queries]
    report = evaluate(rankings, [q.truths for q in queries], ks, [q.id for q in queries])
    return report, rankings


def embed_gallery(pairs: Sequence[RawPair], encoders: AbstractEncoderPair,
                  workers: int = 0) -> Gallery:
    """ One global feature per pair, rows in input order """
    chunks = [pairs[i:i + EMBED_CHUNK] for i in range(0, len(pairs), EMBED_CHUNK)]

    def embed(chunk: Sequence[RawPair]) -> np.ndarray:
        feats = encoders.encode_image(encoders.prepare_images([p.image for p in chunk]))
        return feats.global_.double().numpy()

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            blocks = list(pool.map(embed, chunks))
    else:
        blocks = [embed(c) for c in chunks]
    features = np.concatenate(blocks) if blocks else np.zeros((0, encoders.profile.embed_dim))
    logger.info('embedded %d gallery images', len(pairs))
    return Gallery(ids=tuple(p.id for p in pairs), features=features)


def save_gallery(gallery: Gallery, path: str | Path) -> Path:
    """ Write the gallery cache (.npz with version, ids, features) """
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'wb') as f:
            np.savez(f, version=np.array(GALLERY_CACHE_VERSION),
                     ids=np.array(gallery.ids, dtype=str), features=gallery.features)
    except OSError as exc:
        raise ArtifactError(path, f'cannot write gallery cache ({exc})') from exc
    return path


def load_gallery(path: str | Path) -> Gallery:
    """ Read a gallery cache written by save_gallery """
    try:
        with np.load(path, allow_pickle=False) as data:
            version = int(data['version'])
            ids = tuple(str(i) for i in data['ids'])
            features = data['features']
    except (OSError, KeyError, ValueError) as exc:
        raise ArtifactError(path, f'unreadable gallery cache ({exc})') from exc
    if version != GALLERY_CACHE_VERSION:
        raise ArtifactError(path, f'gallery cache version {version} is not supported')
    return Gallery(ids=ids, features=features)


def _query_from_json(entry: dict[str, Any], base: Path, default_id: str) -> QuerySpec:
    template = Template.parse(entry.get('template', Template.SENTENCE_MANIPULATION.value))
    return QuerySpec(reference=load_image(base / entry['reference']),
                     text=entry.get('text', ''), template=template,
                     slots=tuple(entry.get('slots', ())),
                     truths=frozenset(entry.get('truths', ())),
                     id=str(entry.get('id', default_id)))


def read_queries(path: str | Path) -> list[QuerySpec]:
    """
    Read query JSON-lines {reference, text, template, slots, truths[, id]};
    reference paths are relative to the file.
    """
    path = Path(path)
    try:
        with open(path, encoding='utf-8') as f:
            lines = [line for line in f if line.strip()]
    except OSError as exc:
        raise ArtifactError(path, exc.strerror or 'unreadable') from exc
    queries = []
    for lineno, line in enumerate(lines, start=1):
        try:
            entry = json.loads(line)
            queries.append(_query_from_json(entry, path.parent, f'q{lineno:05d}'))
        except ArtifactError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise QueryError(f'{path} line {lineno}: {exc}') from exc
    return queries


def write_queries(queries: Sequence[QuerySpec], out_dir: str | Path) -> Path:
    """ Store queries as queries.jsonl plus reference PNGs under out_dir """
    out = Path(out_dir)
    (out / 'references').mkdir(parents=True, exist_ok=True)
    path = out / 'queries.jsonl'
    with open(path, 'w', encoding='utf-8') as f:
        for query in queries:
            rel = f'references/{query.id}.png'
            save_image(query.reference, out / rel)
            f.write(json.dumps({'id': query.id, 'reference': rel, 'text': query.text,
                                'template': query.template.value, 'slots': list(query.slots),
                                'truths': sorted(query.truths)}) + '\n')
    return path


def train_composites(pairs: Sequence[RawPair], cfg: TrainConfig) -> list[QuerySpec]:
    """
    Queries built from training pairs: the reference is a forged source view,
    the sentence is the caption, the truth is the original image.
    """
    queries = []
    for index, pair in enumerate(pairs):
        triplet = make_triplet(pair, cfg, derive_rng(cfg.seed, Stream.COMPOSITE, index))
        queries.append(QuerySpec(reference=triplet.source_image, text=pair.caption,
                                 template=Template.SENTENCE_MANIPULATION,
                                 truths=frozenset({pair.id}), id=pair.id))
    return queries


def rankings_to_json(queries: Sequence[QuerySpec], rankings: Sequence[RankedRetrieval],
                     top: int = 10) -> list[dict[str, Any]]:
    """ Per-query top candidates as JSON-ready dicts """
    return [{'query': q.id, 'ids': list(r.ids[:top]), 'scores': list(r.scores[:top])}
            for q, r in zip(queries, rankings)]
