"""
Frozen dual encoders.

An encoder pair turns images into one global vector plus a grid of patch
vectors, turns text into per-token states plus a summary vector, and encodes
prompts whose placeholder slot carries an injected pseudo token. Encoder weights
never train; gradients flow through the prompt encoder into the injected token
only.

The toy pair (registered as "toy") is the cheapest architecture keeping those
contracts: seeded embeddings or patch projections followed by one frozen
self-attention layer. Text is summarised at the leading [SOS] position, images by
the mean of their patch states.
"""

import logging
import re
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from predmap.errors import PromptError, ShapeError
from predmap.models.features import (ActionEmbedding, EncoderProfile, PromptSequence,
                                     VisualFeatures)
from predmap.utils import module_checksum
from predmap.world_views import SYNTH_VOCABULARY


logger = logging.getLogger(__name__)

PLACEHOLDER = '[*]'
PIXEL_MEAN = 0.5
PIXEL_STD = 0.25
EMBEDDING_STD = 0.02

PROMPT_VOCABULARY = frozenset({
    'a', 'an', 'the', 'photo', 'of', 'and', 'with', 'in', 'on',
    'cartoon', 'origami', 'toy', 'sculpture', 'painting', 'sketch',
})


@dataclass(slots=True, eq=False)
class TextEncoding:
    """
    Batched text encoder output.
    token_states - (B, L, d) per-token states, padded
    cls - summary vectors
    padding - (B, L) True at padded positions
    """
    token_states: torch.Tensor
    cls: ActionEmbedding
    padding: torch.Tensor


class Tokenizer:
    """
    Whitespace/punctuation tokenizer over a closed vocabulary.
    Every sequence starts with the summary token; unknown words map to [UNK].
    """
    SPECIALS = ('[PAD]', '[UNK]', '[SOS]', PLACEHOLDER)
    _WORD = re.compile(r'\[\*\]|[a-z0-9]+')

    def __init__(self, words: frozenset[str] | set[str], max_len: int = 64) -> None:
        self.vocab = list(self.SPECIALS) + sorted(set(words) - set(self.SPECIALS))
        self.index = {w: i for i, w in enumerate(self.vocab)}
        self.max_len = max_len

    @property
    def pad_id(self) -> int:
        """ Id of the padding token """
        return self.index['[PAD]']

    @property
    def placeholder_id(self) -> int:
        """ Id of the placeholder slot token """
        return self.index[PLACEHOLDER]

    def words(self, text: str) -> list[str]:
        """ Lower-cased word tokens of text """
        return self._WORD.findall(text.lower())

    def encode(self, text: str) -> tuple[int, ...]:
        """ Token ids with the leading summary token, truncated to max_len """
        words = self.words(text)
        if not words:
            raise ValueError(f'text {text!r} has no tokens')
        unk = self.index['[UNK]']
        ids = [self.index['[SOS]']] + [self.index.get(w, unk) for w in words]
        if len(ids) > self.max_len:
            logger.debug('text truncated from %d to %d tokens', len(ids), self.max_len)
            ids = ids[:self.max_len]
        return tuple(ids)

    def decode(self, ids: Sequence[int]) -> str:
        """ Text of the ids without summary and padding tokens """
        skip = {self.index['[SOS]'], self.pad_id}
        return ' '.join(self.vocab[i] for i in ids if i not in skip)


class AbstractEncoderPair(ABC):
    """
    Frozen vision + text encoder pair sharing embedding width d.
    Abstract methods:
    encode_image
    encode_text
    prompt
    encode_prompt
    frozen_modules
    """
    profile: EncoderProfile
    dtype: torch.dtype

    @abstractmethod
    def encode_image(self, images: torch.Tensor) -> VisualFeatures:
        """ (B, 3, S, S) images -> global + patch features; no gradient """

    @abstractmethod
    def encode_text(self, texts: Sequence[str]) -> TextEncoding:
        """ Texts -> per-token states and summary vectors; no gradient """

    @abstractmethod
    def prompt(self, text: str) -> PromptSequence:
        """ Tokenize a prompt containing exactly one placeholder """

    @abstractmethod
    def encode_prompt(self, prompts: Sequence[PromptSequence]) -> torch.Tensor:
        """ Filled prompts -> (B, d) sentence embeddings, differentiable in the tokens """

    @abstractmethod
    def frozen_modules(self) -> list[nn.Module]:
        """ Every module holding encoder weights """

    def prepare_images(self, images: Sequence[np.ndarray]) -> torch.Tensor:
        """ Resize (H, W, 3) rasters to the encoder resolution, stacked as (B, 3, S, S) """
        size = self.profile.image_size
        out = []
        for image in images:
            tensor = torch.from_numpy(np.ascontiguousarray(image)).permute(2, 0, 1)
            tensor = tensor.unsqueeze(0).to(self.dtype)
            if tensor.shape[-2:] != (size, size):
                tensor = F.interpolate(tensor, size=(size, size), mode='bilinear',
                                       align_corners=False, antialias=True)
            out.append(tensor)
        return torch.cat(out, dim=0)

    def checksum(self) -> str:
        """ Digest of all encoder weights """
        return ''.join(module_checksum(m) for m in self.frozen_modules())


class PretrainedEncoderAdapter(AbstractEncoderPair):
    """
    Contract for wrapping real pretrained dual encoders.

    Implementations load weights in load_weights and expose the same
    operations as the toy pair. patch_features selects whether patch vectors
    are read before ('pre') or after ('post') the backbone's final projection.
    """
    patch_features: str = 'post'

    @abstractmethod
    def load_weights(self, path: str) -> None:
        """ Load pretrained weights and freeze them """


class _FrozenMixer(nn.Module):
    """ Single-head pre-norm self-attention with a residual connection """

    def __init__(self, dim: int) -> None:
        super().__init__()
        self.norm = nn.LayerNorm(dim)
        self.query = nn.Linear(dim, dim)
        self.key = nn.Linear(dim, dim)
        self.value = nn.Linear(dim, dim)
        self.out = nn.Linear(dim, dim)

    def forward(self, x: torch.Tensor, padding: torch.Tensor | None = None) -> torch.Tensor:
        h = self.norm(x)
        q, k, v = self.query(h), self.key(h), self.value(h)
        scores = q @ k.transpose(-2, -1) / k.shape[-1] ** 0.5
        if padding is not None:
            scores = scores.masked_fill(padding[:, None, :], float('-inf'))
        return x + self.out(torch.softmax(scores, dim=-1) @ v)


def _seeded_init(module: nn.Module, gen: torch.Generator) -> None:
    """
    Overwrite every parameter from gen, in registration order.
    Projections get unit-gain normal weights, embedding tables std 0.02, biases zero.
    """
    with torch.no_grad():
        for name, param in module.named_parameters():
            if 'norm' in name:
                continue
            if param.ndim == 1:
                param.zero_()
                continue
            std = EMBEDDING_STD if 'embedding' in name else param.shape[1] ** -0.5
            param.copy_(torch.randn(param.shape, generator=gen) * std)
        module.requires_grad_(False)


class ToyTextEncoder(nn.Module):
    """ Seeded token table + positions + one frozen self-attention layer """

    def __init__(self, vocab_size: int, dim: int, max_len: int) -> None:
        super().__init__()
        self.token_embedding = nn.Embedding(vocab_size, dim)
        self.position_embedding = nn.Parameter(torch.zeros(max_len, dim))
        self.mixer = _FrozenMixer(dim)

    def forward(self, embeddings: torch.Tensor, padding: torch.Tensor) -> torch.Tensor:
        x = embeddings + self.position_embedding[:embeddings.shape[1]]
        return self.mixer(x, padding)


class ToyVisionEncoder(nn.Module):
    """
    Centred pixels -> non-overlapping patches -> seeded projection -> one frozen
    mixing layer. Returns (B, g*g, d) patch states; the global vector is their mean.
    """

    def __init__(self, dim: int, grid: int, image_size: int) -> None:
        super().__init__()
        self.grid = grid
        self.patch = image_size // grid
        self.patch_projection = nn.Linear(3 * self.patch ** 2, dim)
        self.position_embedding = nn.Parameter(torch.zeros(grid ** 2, dim))
        self.mixer = _FrozenMixer(dim)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        batch, g, p = images.shape[0], self.grid, self.patch
        pixels = (images - PIXEL_MEAN) / PIXEL_STD
        patches = pixels.reshape(batch, 3, g, p, g, p).permute(0, 2, 4, 1, 3, 5)
        patches = self.patch_projection(patches.reshape(batch, g * g, 3 * p * p))
        return self.mixer(patches + self.position_embedding)


_REGISTRY: dict[str, Callable[[EncoderProfile, torch.dtype], AbstractEncoderPair]] = {}


def register_encoder(name: str) -> Callable[[type], type]:
    """ Class decorator adding an encoder pair to the registry """
    def wrap(cls: type) -> type:
        _REGISTRY[name] = cls
        return cls
    return wrap


@register_encoder('toy')
class ToyEncoderPair(AbstractEncoderPair):
    """
    Deterministic toy encoders.
    Bit-identical weights for equal (profile, dtype); nothing ever trains.
    """

    def __init__(self, profile: EncoderProfile, dtype: torch.dtype = torch.float32,
                 vocabulary: frozenset[str] = SYNTH_VOCABULARY | PROMPT_VOCABULARY) -> None:
        self.profile = profile
        self.dtype = dtype
        self.tokenizer = Tokenizer(vocabulary)
        gen = torch.Generator().manual_seed(profile.seed)
        self.text = ToyTextEncoder(len(self.tokenizer.vocab), profile.embed_dim,
                                   self.tokenizer.max_len)
        _seeded_init(self.text, gen)
        self.vision = ToyVisionEncoder(profile.embed_dim, profile.grid, profile.image_size)
        _seeded_init(self.vision, gen)
        self.text.to(dtype).eval()
        self.vision.to(dtype).eval()

    def frozen_modules(self) -> list[nn.Module]:
        return [self.text, self.vision]

    def encode_image(self, images: torch.Tensor) -> VisualFeatures:
        size = self.profile.image_size
        g = self.profile.grid
        if images.ndim != 4 or tuple(images.shape[1:]) != (3, size, size):
            raise ShapeError(f'expected (B, 3, {size}, {size}) images for the {g}x{g} '
                             f'patch grid, got {tuple(images.shape)}')
        with torch.no_grad():
            out = self.vision(images.to(self.dtype))
        return VisualFeatures(global_=out.mean(dim=1), patches=out)

    def _pad(self, sequences: Sequence[tuple[int, ...]]) -> tuple[torch.Tensor, torch.Tensor]:
        length = max(len(s) for s in sequences)
        ids = torch.full((len(sequences), length), self.tokenizer.pad_id, dtype=torch.long)
        for row, seq in enumerate(sequences):
            ids[row, :len(seq)] = torch.tensor(seq, dtype=torch.long)
        return ids, ids == self.tokenizer.pad_id

    def encode_text(self, texts: Sequence[str]) -> TextEncoding:
        if not texts:
            raise ValueError('no texts to encode')
        for text in texts:
            if not text.strip():
                raise ValueError('cannot encode empty text')
        ids, padding = self._pad([self.tokenizer.encode(t) for t in texts])
        with torch.no_grad():
            states = self.text(self.text.token_embedding(ids), padding)
        return TextEncoding(token_states=states, cls=ActionEmbedding(states[:, 0]),
                            padding=padding)

    def prompt(self, text: str) -> PromptSequence:
        ids = self.tokenizer.encode(text)
        slots = [i for i, t in enumerate(ids) if t == self.tokenizer.placeholder_id]
        if len(slots) != 1:
            raise PromptError(f'prompt {text!r} must hold exactly one {PLACEHOLDER}, '
                              f'found {len(slots)}')
        return PromptSequence(token_ids=ids, slot=slots[0])

    def encode_prompt(self, prompts: Sequence[PromptSequence]) -> torch.Tensor:
        if not prompts:
            raise ValueError('no prompts to encode')
        tokens = []
        for prompt in prompts:
            if prompt.injected is None:
                raise PromptError('prompt placeholder is not filled')
            if prompt.injected.vector.shape[-1] != self.profile.embed_dim:
                raise ShapeError(f'pseudo token width {prompt.injected.vector.shape[-1]} '
                                 f'!= text width {self.profile.embed_dim}')
            tokens.append(prompt.injected.vector)
        ids, padding = self._pad([p.token_ids for p in prompts])
        slot = torch.zeros(ids.shape, dtype=torch.bool)
        for row, prompt in enumerate(prompts):
            slot[row, prompt.slot] = True
        embeddings = self.text.token_embedding(ids)
        injected = torch.stack(tokens).to(self.dtype)[:, None, :].expand_as(embeddings)
        embeddings = torch.where(slot[..., None], injected, embeddings)
        return self.text(embeddings, padding)[:, 0]


def build_encoders(profile: EncoderProfile,
                   dtype: torch.dtype = torch.float32) -> AbstractEncoderPair:
    """ Instantiate the registered encoder pair named by the profile """
    try:
        factory = _REGISTRY[profile.name]
    except KeyError:
        raise ValueError(f'unknown encoder {profile.name!r}; '
                         f'registered: {sorted(_REGISTRY)}') from None
    return factory(profile, dtype)
