"""
Predictive alignment: gated fusion into the pseudo token and the losses
"""

import logging
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from predmap.encoders import AbstractEncoderPair
from predmap.errors import NonFiniteError, ShapeError
from predmap.models.features import PromptSequence, PseudoToken


logger = logging.getLogger(__name__)

TRAINING_PROMPT = 'a photo of [*]'


def _three_layer(inp: int, out: int) -> nn.Sequential:
    return nn.Sequential(nn.Linear(inp, out), nn.GELU(), nn.Linear(out, out), nn.GELU(),
                         nn.Linear(out, out))


class FusionHead(nn.Module):
    """
    Maps predictor rows and the source global feature into S*.

    S* = f_Ms(v_xg) + tanh(alpha) * mean_rows(f_Mp([enhanced; predicted]))

    gated=False drops the tanh factor (plain sum); eq5_order averages the rows
    before mapping and puts the gate inside f_Mp's argument.
    """

    def __init__(self, width: int, embed_dim: int, gated: bool = True,
                 eq5_order: bool = False) -> None:
        super().__init__()
        self.gated = gated
        self.eq5_order = eq5_order
        self.map_predicted = _three_layer(width, embed_dim)
        self.map_source = _three_layer(embed_dim, embed_dim)
        self.gate_alpha = nn.Parameter(torch.zeros(()))

    @property
    def gate_value(self) -> float:
        """ tanh(alpha), or 1 when ungated """
        return float(torch.tanh(self.gate_alpha.detach())) if self.gated else 1.0

    def forward(self, enhanced_source: torch.Tensor, predicted: torch.Tensor,
                global_source: torch.Tensor) -> torch.Tensor:
        if enhanced_source.shape[-1] != predicted.shape[-1]:
            raise ShapeError(f'enhanced {tuple(enhanced_source.shape)} and predicted '
                             f'{tuple(predicted.shape)} widths differ')
        rows = torch.cat([enhanced_source, predicted], dim=-2)
        gate = torch.tanh(self.gate_alpha) if self.gated else None
        if self.eq5_order:
            pooled = rows.mean(dim=-2)
            branch = self.map_predicted(pooled if gate is None else gate * pooled)
        else:
            branch = self.map_predicted(rows).mean(dim=-2)
            if gate is not None:
                branch = gate * branch
        return self.map_source(global_source) + branch


def fuse_pseudo_token(head: FusionHead, enhanced_source: torch.Tensor,
                      predicted: torch.Tensor, global_source: torch.Tensor) -> PseudoToken:
    """ Single-item fusion: (n, p), (k, p), (d,) -> S* """
    return PseudoToken(head(enhanced_source[None], predicted[None], global_source[None])[0])


@dataclass(slots=True, eq=False)
class AlignmentBatch:
    """
    t_p - (B, d) prompt sentence embeddings
    v_yg - (B, d) global target features
    tau - temperature multiplying the cosine logits
    """
    t_p: torch.Tensor
    v_yg: torch.Tensor
    tau: float = 100.0

    def __post_init__(self) -> None:
        if self.t_p.shape != self.v_yg.shape or self.t_p.ndim != 2:
            raise ShapeError(f'prompt {tuple(self.t_p.shape)} and target '
                             f'{tuple(self.v_yg.shape)} batches differ')
        if self.tau <= 0:
            raise ValueError(f'temperature must be positive, got {self.tau}')


def contrastive_loss(batch: AlignmentBatch) -> torch.Tensor:
    """ Symmetric InfoNCE over L2-normalized rows: text-to-image plus image-to-text """
    size = batch.t_p.shape[0]
    if size < 2:
        raise ValueError(f'contrastive loss needs a batch of at least 2, got {size}')
    t = F.normalize(batch.t_p, dim=-1)
    v = F.normalize(batch.v_yg, dim=-1)
    logits = batch.tau * t @ v.T
    labels = torch.arange(size, device=logits.device)
    return F.cross_entropy(logits, labels) + F.cross_entropy(logits.T, labels)


def total_loss(l_pred: torch.Tensor, l_align: torch.Tensor) -> torch.Tensor:
    """ Unweighted sum; fails fast on a non-finite term """
    for name, value in (('L_pred', l_pred), ('L_align', l_align)):
        value = torch.as_tensor(value).detach()
        if not torch.isfinite(value).all():
            raise NonFiniteError(f'{name} is not finite: {float(value)}')
    return l_pred + l_align


def build_training_prompt(encoders: AbstractEncoderPair, token: PseudoToken) -> PromptSequence:
    """ "a photo of [*]" with token injected in the trailing slot """
    return encoders.prompt(TRAINING_PROMPT).inject(token)
