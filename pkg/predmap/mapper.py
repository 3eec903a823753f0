"""
The trainable image-to-word mapper: content predictor + fusion head, and the
end-to-end loss graph over frozen encoders.
"""

import logging
from dataclasses import dataclass
from typing import Sequence

import torch
from torch import nn

from predmap.alignment import (AlignmentBatch, FusionHead, build_training_prompt,
                               contrastive_loss, total_loss)
from predmap.config import TrainConfig
from predmap.encoders import AbstractEncoderPair
from predmap.errors import NonFiniteError
from predmap.models.features import PseudoToken, VisualFeatures
from predmap.models.views import MaskBlock, ViewTriplet
from predmap.predictor import ContentPredictor, PredictorOutput, prediction_loss


logger = logging.getLogger(__name__)

NO_DECAY = ('gate_alpha', 'mask_token', 'pos_embed')


@dataclass(slots=True, eq=False)
class EncodedBatch:
    """ Frozen-encoder features of one batch of triplets """
    source: VisualFeatures
    target: VisualFeatures
    action: torch.Tensor
    ids: tuple[str, ...] = ()


@dataclass(slots=True, eq=False)
class LossTerms:
    """ Scalar loss tensors of one forward pass, plus the fused tokens """
    l_pred: torch.Tensor
    l_align: torch.Tensor
    loss: torch.Tensor
    tokens: torch.Tensor


class PredictiveMapper(nn.Module):
    """ Predictor and fusion head; the only trainable parameters of a run """

    def __init__(self, predictor: ContentPredictor, fusion: FusionHead) -> None:
        super().__init__()
        self.predictor = predictor
        self.fusion = fusion

    @classmethod
    def from_config(cls, cfg: TrainConfig) -> 'PredictiveMapper':
        """ Fresh mapper for cfg; parameter init is seeded by cfg.seed """
        with torch.random.fork_rng():
            torch.manual_seed(cfg.seed)
            predictor = ContentPredictor(cfg.embed_dim, cfg.width, cfg.depth, cfg.heads,
                                         cfg.grid, standard_residual=cfg.standard_residual)
            fusion = FusionHead(cfg.width, cfg.embed_dim, gated=not cfg.no_gate,
                                eq5_order=cfg.eq5_order)
        mapper = cls(predictor, fusion)
        return mapper.to(torch.float64 if cfg.float64 else torch.float32)

    def forward(self, action: torch.Tensor, source: VisualFeatures,
                block: MaskBlock) -> tuple[torch.Tensor, PredictorOutput]:
        """ (B, d) action + source features -> ((B, d) pseudo tokens, predictor rows) """
        out = self.predictor(action, source.patches, block)
        tokens = self.fusion(out.enhanced_source, out.predicted, source.global_)
        if not torch.isfinite(tokens).all():
            raise NonFiniteError('fused pseudo tokens are not finite')
        return tokens, out

    def losses(self, encoders: AbstractEncoderPair, batch: EncodedBatch, block: MaskBlock,
               tau: float) -> LossTerms:
        """ L_pred, L_align and their sum for one encoded batch """
        tokens, out = self(batch.action, batch.source, block)
        target = self.predictor.project_targets(batch.target.patches, block)
        l_pred = prediction_loss(out.predicted, target)
        prompts = [build_training_prompt(encoders, PseudoToken(row)) for row in tokens]
        t_p = encoders.encode_prompt(prompts)
        if not torch.isfinite(t_p).all():
            raise NonFiniteError('prompt embeddings are not finite')
        l_align = contrastive_loss(AlignmentBatch(t_p, batch.target.global_, tau))
        return LossTerms(l_pred=l_pred, l_align=l_align, loss=total_loss(l_pred, l_align),
                         tokens=tokens)

    def parameter_groups(self, weight_decay: float) -> list[dict]:
        """ Optimizer groups; structural parameters get no weight decay """
        decay, no_decay = [], []
        for name, param in self.named_parameters():
            (no_decay if name.rsplit('.', 1)[-1] in NO_DECAY else decay).append(param)
        return [{'params': decay, 'weight_decay': weight_decay},
                {'params': no_decay, 'weight_decay': 0.0}]


def encode_triplets(encoders: AbstractEncoderPair, triplets: Sequence[ViewTriplet],
                    no_action: bool = False) -> EncodedBatch:
    """ Run the frozen encoders over source views, target views and captions """
    source = encoders.encode_image(encoders.prepare_images([t.source_image for t in triplets]))
    target = encoders.encode_image(encoders.prepare_images([t.target_image for t in triplets]))
    if no_action:
        action = torch.zeros_like(source.global_)
    else:
        action = encoders.encode_text([t.action_text for t in triplets]).cls.vectors
    return EncodedBatch(source=source, target=target, action=action,
                        ids=tuple(t.id for t in triplets))
