"""
Encoder-side types: feature containers, prompts with a placeholder slot and
the encoder profile
"""

from dataclasses import dataclass, replace

import torch


@dataclass(slots=True, frozen=True)
class EncoderProfile:
    """
    Declares a frozen encoder pair.
    name - registered encoder name
    embed_dim - shared width d of vision and text embeddings
    grid - patch grid side g, so the vision encoder emits m = g*g + 1 vectors
    image_size - square input resolution the vision encoder expects
    seed - weight seed (toy encoders only)
    """
    name: str = 'toy'
    embed_dim: int = 32
    grid: int = 4
    image_size: int = 64
    seed: int = 0
    frozen: bool = True

    def __post_init__(self) -> None:
        if not self.frozen:
            raise ValueError('encoders are frozen by contract')
        if self.embed_dim < 1 or self.grid < 2:
            raise ValueError(f'bad encoder dims d={self.embed_dim}, g={self.grid}')
        if self.image_size % self.grid:
            raise ValueError(f'image size {self.image_size} is not divisible '
                             f'into a {self.grid}x{self.grid} patch grid')

    @property
    def num_vectors(self) -> int:
        """ m, the global vector plus one vector per patch """
        return self.grid ** 2 + 1


@dataclass(slots=True, eq=False)
class VisualFeatures:
    """
    Batched vision encoder output.
    global_ - (B, d) global vectors v_g
    patches - (B, g*g, d) patch vectors in row-major grid order
    """
    global_: torch.Tensor
    patches: torch.Tensor

    def __post_init__(self) -> None:
        if self.global_.ndim != 2 or self.patches.ndim != 3:
            raise ValueError('expected (B, d) global and (B, g*g, d) patch features')
        if self.global_.shape[0] != self.patches.shape[0] \
                or self.global_.shape[1] != self.patches.shape[2]:
            raise ValueError(f'global {tuple(self.global_.shape)} and patch '
                             f'{tuple(self.patches.shape)} features disagree')
        if not (torch.isfinite(self.global_).all() and torch.isfinite(self.patches).all()):
            raise ValueError('visual features contain non-finite entries')

    def __len__(self) -> int:
        return int(self.global_.shape[0])


@dataclass(slots=True, eq=False)
class ActionEmbedding:
    """ Batched text summary vectors t, shape (B, d) """
    vectors: torch.Tensor

    def __post_init__(self) -> None:
        if self.vectors.ndim != 2:
            raise ValueError(f'expected (B, d) action, got {tuple(self.vectors.shape)}')
        if not torch.isfinite(self.vectors).all():
            raise ValueError('action embedding contains non-finite entries')


@dataclass(slots=True, eq=False)
class PseudoToken:
    """ Mapped word-token embedding S*, a d-vector """
    vector: torch.Tensor

    def __post_init__(self) -> None:
        if self.vector.ndim != 1:
            raise ValueError(f'pseudo token must be a vector, got {tuple(self.vector.shape)}')
        if not torch.isfinite(self.vector).all():
            raise ValueError('pseudo token contains non-finite entries')


@dataclass(slots=True, frozen=True, eq=False)
class PromptSequence:
    """
    Tokenized prompt with exactly one placeholder slot.
    token_ids - ids including the leading summary token
    slot - position of the placeholder inside token_ids
    injected - pseudo token put into the slot, None while unfilled
    """
    token_ids: tuple[int, ...]
    slot: int
    injected: PseudoToken | None = None

    def inject(self, token: PseudoToken) -> 'PromptSequence':
        """ Copy of the sequence with the slot filled; length is unchanged """
        return replace(self, injected=token)

    def __len__(self) -> int:
        return len(self.token_ids)
