import itertools

import numpy as np
import pytest
import torch
import torch.nn.functional as F

from predmap.encoders import PLACEHOLDER, Tokenizer, ToyEncoderPair, build_encoders
from predmap.errors import PromptError, ShapeError
from predmap.models.features import EncoderProfile, PseudoToken
from predmap.utils import derive_rng
from predmap.world_views import BACKGROUNDS, COLORS, SHAPES, synth_dataset


@pytest.fixture
def images(pairs, encoders):
    return encoders.prepare_images([p.image for p in pairs[:2]])


def test_image_features_layout(encoders, images):
    feats = encoders.encode_image(images[:1])
    assert tuple(feats.patches.shape) == (1, 16, 32)
    assert tuple(feats.global_.shape) == (1, 32)
    assert not feats.patches.requires_grad


def test_image_features_deterministic(encoders, images):
    a = encoders.encode_image(images)
    b = encoders.encode_image(images)
    assert torch.equal(a.patches, b.patches)
    assert torch.equal(a.global_, b.global_)


def test_global_follows_image_content(encoders):
    images = encoders.prepare_images([np.ones((64, 64, 3), dtype=np.float32),
                                      np.zeros((64, 64, 3), dtype=np.float32)])
    white, black = encoders.encode_image(images).global_
    assert float(F.cosine_similarity(white, black, dim=0)) < -0.9


def test_gallery_globals_are_spread(encoders):
    images = encoders.prepare_images([p.image for p in synth_dataset(32, derive_rng(0))])
    unit = F.normalize(encoders.encode_image(images).global_, dim=-1)
    cos = unit @ unit.T
    off_diagonal = cos[~torch.eye(32, dtype=torch.bool)]
    assert float(off_diagonal.mean()) < 0.8


def test_image_size_checked(encoders):
    with pytest.raises(ShapeError, match='4x4'):
        encoders.encode_image(torch.zeros(1, 3, 32, 32))


def test_prepare_images_resizes(encoders):
    batch = encoders.prepare_images([np.zeros((80, 100, 3), dtype=np.float32),
                                     np.ones((64, 64, 3), dtype=np.float32)])
    assert tuple(batch.shape) == (2, 3, 64, 64)
    assert torch.equal(batch[1], torch.ones(3, 64, 64))


def test_float64_encoders(encoders64, images):
    assert encoders64.encode_image(images).global_.dtype == torch.float64


def test_text_summary_deterministic(encoders):
    a = encoders.encode_text(['a red circle on a blue sky'])
    b = encoders.encode_text(['a red circle on a blue sky'])
    assert torch.equal(a.cls.vectors, b.cls.vectors)


def test_distinct_captions_get_distinct_summaries(encoders):
    captions = [f'a {c} {s} on a {b}' for s, c, b in itertools.product(SHAPES, COLORS,
                                                                        BACKGROUNDS)]
    vectors = encoders.encode_text(captions).cls.vectors
    assert torch.unique(vectors, dim=0).shape[0] == len(captions)


def test_padding_does_not_leak(encoders):
    alone = encoders.encode_text(['a red circle']).cls.vectors
    padded = encoders.encode_text(['a red circle', 'a green square on a gray wall']).cls.vectors
    assert torch.allclose(alone[0], padded[0], atol=1e-5)


@pytest.mark.parametrize('texts', [[], [''], ['   ']])
def test_empty_text_rejected(encoders, texts):
    with pytest.raises(ValueError):
        encoders.encode_text(texts)


def test_prompt_slot(encoders):
    seq = encoders.prompt('a photo of [*]')
    assert encoders.tokenizer.decode(seq.token_ids) == 'a photo of [*]'
    assert seq.slot == 4
    assert seq.token_ids[seq.slot] == encoders.tokenizer.placeholder_id


@pytest.mark.parametrize('text', ['a photo of a cat', 'a [*] of [*]'])
def test_prompt_needs_one_placeholder(encoders, text):
    with pytest.raises(PromptError):
        encoders.prompt(text)


def test_unfilled_prompt_rejected(encoders):
    with pytest.raises(PromptError):
        encoders.encode_prompt([encoders.prompt('a photo of [*]')])


def test_token_width_checked(encoders):
    seq = encoders.prompt('a photo of [*]').inject(PseudoToken(torch.zeros(8)))
    with pytest.raises(ShapeError):
        encoders.encode_prompt([seq])


def test_injected_token_matters(encoders):
    seq = encoders.prompt('a photo of [*]')
    one_hot = torch.zeros(32)
    one_hot[0] = 1.0
    zero = encoders.encode_prompt([seq.inject(PseudoToken(torch.zeros(32)))])
    hot = encoders.encode_prompt([seq.inject(PseudoToken(one_hot))])
    again = encoders.encode_prompt([seq.inject(PseudoToken(one_hot))])
    assert tuple(hot.shape) == (1, 32)
    assert not torch.equal(zero, hot)
    assert torch.equal(hot, again)


def test_gradient_reaches_token_only(encoders):
    token = torch.randn(32, requires_grad=True)
    seq = encoders.prompt('a cartoon of [*]').inject(PseudoToken(token))
    encoders.encode_prompt([seq]).sum().backward()
    assert token.grad is not None
    assert token.grad.abs().sum() > 0
    for module in encoders.frozen_modules():
        assert all(p.grad is None and not p.requires_grad for p in module.parameters())


def test_checksum_depends_on_seed():
    a = build_encoders(EncoderProfile(seed=0))
    b = build_encoders(EncoderProfile(seed=0))
    c = build_encoders(EncoderProfile(seed=1))
    assert isinstance(a, ToyEncoderPair)
    assert a.checksum() == b.checksum()
    assert a.checksum() != c.checksum()


def test_unknown_encoder():
    with pytest.raises(ValueError, match='toy'):
        build_encoders(EncoderProfile(name='clip-vit-l'))


def test_tokenizer():
    tok = Tokenizer({'red', 'circle'}, max_len=4)
    ids = tok.encode('Red circle, blue!')
    assert len(ids) == 4
    assert tok.decode(ids) == 'red circle [UNK]'
    assert tok.vocab[:4] == list(Tokenizer.SPECIALS)
    assert PLACEHOLDER in tok.index
    with pytest.raises(ValueError):
        tok.encode('!!')
