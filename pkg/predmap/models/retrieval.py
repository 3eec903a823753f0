"""
Retrieval-side types: composed queries, galleries, rankings and reports
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Any

import numpy as np


class Template(Enum):
    """ Inference prompt templates """
    DOMAIN_CONVERSION = 'domain_conversion'
    OBJECT_COMPOSITION = 'object_composition'
    SENTENCE_MANIPULATION = 'sentence_manipulation'

    @classmethod
    def parse(cls, name: str) -> 'Template':
        """ Template by name; ValueError lists the valid names """
        try:
            return cls(name)
        except ValueError:
            valid = ', '.join(t.value for t in cls)
            raise ValueError(f'unknown template {name!r}; expected one of: {valid}') from None


@dataclass(slots=True, eq=False)
class QuerySpec:
    """
    Composed query.
    reference - reference raster (H, W, 3) in [0, 1]
    text - manipulation sentence (sentence template only, may be empty)
    template - prompt template
    slots - domain tag (exactly one) or object tags (one or more)
    truths - ids of the ground-truth gallery items (evaluation only)
    """
    reference: np.ndarray
    text: str
    template: Template
    slots: tuple[str, ...] = ()
    truths: frozenset[str] = frozenset()
    id: str = ''

    def __post_init__(self) -> None:
        if self.template is Template.DOMAIN_CONVERSION and len(self.slots) != 1:
            raise ValueError(f'query {self.id}: domain conversion needs exactly one '
                             f'domain tag, got {len(self.slots)}')
        if self.template is Template.OBJECT_COMPOSITION and not self.slots:
            raise ValueError(f'query {self.id}: object composition needs object tags')
        if self.template is Template.SENTENCE_MANIPULATION and self.slots:
            raise ValueError(f'query {self.id}: sentence manipulation takes no slots')


@dataclass(slots=True, eq=False)
class Gallery:
    """
    Embedded candidate images.
    ids - candidate ids in manifest order
    features - (n, d) global visual features, one row per candidate
    """
    ids: tuple[str, ...]
    features: np.ndarray

    def __post_init__(self) -> None:
        if len(set(self.ids)) != len(self.ids):
            raise ValueError('gallery ids are not unique')
        if self.features.ndim != 2 or self.features.shape[0] != len(self.ids):
            raise ValueError(f'{len(self.ids)} ids but features of shape '
                             f'{self.features.shape}')
        if not np.isfinite(self.features).all():
            raise ValueError('gallery features contain non-finite entries')

    @property
    def dim(self) -> int:
        """ Feature width d """
        return int(self.features.shape[1])

    def __len__(self) -> int:
        return len(self.ids)


@dataclass(slots=True, frozen=True)
class RankedRetrieval:
    """ Candidate ids by descending score, ties broken by ascending id """
    ids: tuple[str, ...]
    scores: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.ids) != len(self.scores):
            raise ValueError('ids and scores differ in length')
        for i in range(1, len(self.ids)):
            prev, cur = self.scores[i - 1], self.scores[i]
            if cur > prev or (cur == prev and self.ids[i] < self.ids[i - 1]):
                raise ValueError(f'ranking out of order at position {i}')

    def rank_of(self, candidate: str) -> int:
        """ 1-based rank of a candidate id """
        return self.ids.index(candidate) + 1


@dataclass(slots=True)
class EvalReport:
    """
    Evaluation summary.
    recall, map - metric value per K, keys ascending
    ranks - per query, 1-based rank of its best-ranked truth
    """
    recall: dict[int, float]
    map: dict[int, float]
    ranks: list[int] = field(default_factory=list)

    def __post_init__(self) -> None:
        values = list(self.recall.values()) + list(self.map.values())
        if any(not 0.0 <= v <= 1.0 for v in values):
            raise ValueError('metrics must lie in [0, 1]')
        ordered = [self.recall[k] for k in sorted(self.recall)]
        if any(b < a for a, b in zip(ordered, ordered[1:])):
            raise ValueError('Recall@K must be non-decreasing in K')

    @property
    def ks(self) -> list[int]:
        """ Evaluated K values, ascending """
        return sorted(self.recall)

    def to_json(self) -> dict[str, Any]:
        """ JSON-ready dict """
        return {
            'k': self.ks,
            'recall': {str(k): self.recall[k] for k in self.ks},
            'map': {str(k): self.map[k] for k in self.ks},
            'ranks': self.ranks,
        }
