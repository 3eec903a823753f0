"""
Target content predictor.

A narrow pre-norm transformer reads [action; source patches; mask tokens],
all projected into the predictor width p, and returns the rows routed by
position: the action row, the enhanced source patches and the predicted
target patches at the mask block positions.
"""

import logging
from dataclasses import dataclass
from typing import Sequence

import torch
from torch import nn

from predmap.errors import NonFiniteError, ShapeError
from predmap.models.views import MaskBlock


logger = logging.getLogger(__name__)


@dataclass(slots=True, eq=False)
class PredictorOutput:
    """
    Rows of the last block, split by position.
    action_out - (B, p), unused downstream
    enhanced_source - (B, g*g, p)
    predicted - (B, |block|, p) in mask block index order
    """
    action_out: torch.Tensor
    enhanced_source: torch.Tensor
    predicted: torch.Tensor


class PredictorBlock(nn.Module):
    """
    Pre-norm self-attention block.

    Default wiring: X_att = MHA(LN(X)); X' = FFW(LN(X_att + X)) + X_att.
    standard_residual switches the second residual to X_att + X.
    """

    def __init__(self, width: int, heads: int, standard_residual: bool = False) -> None:
        super().__init__()
        self.standard_residual = standard_residual
        self.norm1 = nn.LayerNorm(width)
        self.attn = nn.MultiheadAttention(width, heads, batch_first=True)
        self.norm2 = nn.LayerNorm(width)
        self.ffw = nn.Sequential(nn.Linear(width, 4 * width), nn.GELU(),
                                 nn.Linear(4 * width, width))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.norm1(x)
        x_att, _ = self.attn(h, h, h, need_weights=False)
        hidden = x_att + x
        out = self.ffw(self.norm2(hidden))
        return out + hidden if self.standard_residual else out + x_att


class ContentPredictor(nn.Module):
    """
    Predicts target-view patch features from a source view and an action.
    embed_dim - encoder width d
    width - predictor width p
    depth - number of blocks N (0 is the identity after projection)
    heads - attention heads, must divide width
    grid - patch grid side g
    """

    def __init__(self, embed_dim: int, width: int, depth: int, heads: int, grid: int,
                 standard_residual: bool = False) -> None:
        super().__init__()
        if width % heads:
            raise ValueError(f'heads={heads} must divide width={width}')
        self.embed_dim = embed_dim
        self.width = width
        self.grid = grid
        self.input_proj = nn.Linear(embed_dim, width)
        self.mask_token = nn.Parameter(torch.zeros(width))
        self.pos_embed = nn.Parameter(torch.zeros(grid * grid, width))
        nn.init.trunc_normal_(self.mask_token, std=0.02)
        nn.init.trunc_normal_(self.pos_embed, std=0.02)
        self.blocks = nn.ModuleList(PredictorBlock(width, heads, standard_residual)
                                    for _ in range(depth))

    def build_mask_tokens(self, block: MaskBlock) -> torch.Tensor:
        """ (|block|, p) rows: shared mask vector + positional embedding per index """
        if block.grid != self.grid:
            raise ShapeError(f'mask block grid {block.grid} != predictor grid {self.grid}')
        return self.mask_token + self.pos_embed[list(block.flat)]

    def project_targets(self, target_patches: torch.Tensor, block: MaskBlock) -> torch.Tensor:
        """ Target patch rows at the block positions, projected to width p """
        return self.input_proj(target_patches[:, list(block.flat)])

    def forward(self, action: torch.Tensor, source_patches: torch.Tensor, block: MaskBlock,
                source_positions: Sequence[int] | None = None) -> PredictorOutput:
        """
        Run the blocks over [action; source; mask tokens].

        Parameters
        ----------
        action - (B, d) action embeddings (zeros for the no-action ablation)
        source_patches - (B, g*g, d) source patch features
        block - target positions to predict, shared across the batch
        source_positions - grid index of each source row, row-major order if None

        Returns
        -------
        PredictorOutput
        """
        batch, cells = action.shape[0], self.grid ** 2
        if action.shape != (batch, self.embed_dim):
            raise ShapeError(f'action {tuple(action.shape)} != (B, {self.embed_dim})')
        if source_patches.shape != (batch, cells, self.embed_dim):
            raise ShapeError(f'source patches {tuple(source_patches.shape)} != '
                             f'({batch}, {cells}, {self.embed_dim})')
        positions = list(range(cells)) if source_positions is None else list(source_positions)
        source = self.input_proj(source_patches) + self.pos_embed[positions]
        masks = self.build_mask_tokens(block).expand(batch, -1, -1)
        x = torch.cat([self.input_proj(action)[:, None], source, masks], dim=1)
        for index, blk in enumerate(self.blocks):
            x = blk(x)
            if not torch.isfinite(x).all():
                raise NonFiniteError(f'non-finite activations after predictor block {index}',
                                     block_index=index)
        return PredictorOutput(action_out=x[:, 0], enhanced_source=x[:, 1:1 + cells],
                               predicted=x[:, 1 + cells:])


def prediction_loss(predicted: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """
    Sum of squared L2 distances over block rows, mean over the batch.
    Accepts (|block|, p) or (B, |block|, p).
    """
    if predicted.shape != target.shape:
        raise ShapeError(f'prediction {tuple(predicted.shape)} and target '
                         f'{tuple(target.shape)} differ')
    if predicted.ndim == 2:
        return ((predicted - target) ** 2).sum()
    return ((predicted - target) ** 2).sum(dim=(1, 2)).mean()
