import pytest
import torch

from predmap.models.features import (ActionEmbedding, EncoderProfile, PromptSequence,
                                     PseudoToken, VisualFeatures)


def test_profile_defaults():
    p = EncoderProfile()
    assert p.embed_dim == 32
    assert p.grid == 4
    assert p.num_vectors == 17


def test_full_scale_profile():
    p = EncoderProfile(embed_dim=1024, grid=16, image_size=224)
    assert p.num_vectors == 257


def test_profile_is_frozen_by_contract():
    with pytest.raises(ValueError):
        EncoderProfile(frozen=False)


def test_profile_grid_must_divide_image():
    with pytest.raises(ValueError):
        EncoderProfile(grid=5, image_size=64)


def test_visual_features_shapes():
    f = VisualFeatures(global_=torch.zeros(2, 8), patches=torch.zeros(2, 16, 8))
    assert len(f) == 2
    with pytest.raises(ValueError):
        VisualFeatures(global_=torch.zeros(2, 8), patches=torch.zeros(2, 16, 4))
    with pytest.raises(ValueError):
        VisualFeatures(global_=torch.zeros(3, 8), patches=torch.zeros(2, 16, 8))


def test_visual_features_finite():
    patches = torch.zeros(1, 4, 2)
    patches[0, 1, 1] = float('nan')
    with pytest.raises(ValueError):
        VisualFeatures(global_=torch.zeros(1, 2), patches=patches)


def test_action_embedding_checks():
    ActionEmbedding(torch.ones(3, 4))
    with pytest.raises(ValueError):
        ActionEmbedding(torch.ones(4))
    with pytest.raises(ValueError):
        ActionEmbedding(torch.full((1, 4), float('inf')))


def test_pseudo_token_is_vector():
    PseudoToken(torch.zeros(8))
    with pytest.raises(ValueError):
        PseudoToken(torch.zeros(1, 8))


def test_inject_keeps_length():
    seq = PromptSequence(token_ids=(2, 5, 6, 3), slot=3)
    filled = seq.inject(PseudoToken(torch.ones(4)))
    assert len(filled) == len(seq)
    assert seq.injected is None
    assert filled.injected is not None
    assert filled.slot == 3
