"""
Data models of the pipeline
"""

from predmap.models.features import (ActionEmbedding, EncoderProfile, PromptSequence,
                                     PseudoToken, VisualFeatures)
from predmap.models.pair import RawPair
from predmap.models.records import RunManifest, StepMetrics
from predmap.models.retrieval import EvalReport, Gallery, QuerySpec, RankedRetrieval, Template
from predmap.models.views import CropSpec, MaskBlock, ViewTriplet

__all__ = [
    'ActionEmbedding', 'CropSpec', 'EncoderProfile', 'EvalReport', 'Gallery', 'MaskBlock',
    'PromptSequence', 'PseudoToken', 'QuerySpec', 'RankedRetrieval', 'RawPair',
    'RunManifest', 'StepMetrics', 'Template', 'ViewTriplet', 'VisualFeatures',
]
