"""Confidence selection, erasure semantics, and dual-branch behavior."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from parefine import rce
from parefine.config import TrainConfig
from parefine.rng import Rng


def _image(seed, hw=(16, 16)):
    return Rng(seed).split("img").uniform(0.05, 1.0, (3,) + hw).astype(np.float32)


def test_topk_example_foreground_and_background():
    coarse = np.array([[0.9, 0.5], [0.1, 0.6]], dtype=np.float32)[None]
    es = rce.select_topk_confident(coarse, 2)
    got = {tuple(p) for p in es.positions.tolist()}
    assert got == {(0, 0), (1, 0)}  # 0.9 and 0.1 are the most confident


def test_topk_zero_k_empty():
    es = rce.select_topk_confident(np.full((1, 3, 3), 0.7, np.float32), 0)
    assert len(es) == 0


def test_topk_uniform_ties_row_major():
    es = rce.select_topk_confident(np.full((1, 2, 3), 0.5, np.float32), 3)
    assert es.positions.tolist() == [[0, 0], [0, 1], [0, 2]]


def test_topk_saturates():
    es = rce.select_topk_confident(np.full((1, 2, 2), 0.1, np.float32), 99)
    assert len(es) == 4


def test_topk_ordering_descending_confidence():
    coarse = Rng(0).split("c").uniform(0, 1, (1, 8, 8)).astype(np.float32)
    es = rce.select_topk_confident(coarse, 10)
    conf = np.abs(coarse[0][es.positions[:, 0], es.positions[:, 1]] - 0.5)
    assert (np.diff(conf) <= 1e-7).all()


def test_erase_empty_set_bitwise_copy():
    x = _image(1)
    es = rce.select_topk_confident(np.full((1, 16, 16), 0.5, np.float32), 0)
    out = rce.erase(x, es)
    assert out is not x
    np.testing.assert_array_equal(out, x)


def test_erase_single_position_changes_three_scalars():
    x = _image(2)
    es = rce.ErasureSet(np.array([[0, 0]], dtype=np.int64))
    out = rce.erase(x, es)
    changed = np.sum(out != x)
    assert changed == 3
    assert (out[:, 0, 0] == 0.0).all()


def test_erase_count_matches_k():
    x = _image(3)
    coarse = Rng(4).split("c").uniform(0, 1, (1, 16, 16)).astype(np.float32)
    es = rce.select_topk_confident(coarse, 5)
    out = rce.erase(x, es)
    modified_pixels = np.sum(np.any(out != x, axis=0))
    assert modified_pixels == 5


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 9999), k=st.integers(0, 40))
def test_erase_idempotent_and_size(seed, k):
    coarse = Rng(seed).split("c").uniform(0, 1, (1, 6, 6)).astype(np.float32)
    es = rce.select_topk_confident(coarse, k)
    assert len(es) == min(k, 36)
    x = _image(seed, (6, 6))
    once = rce.erase(x, es)
    twice = rce.erase(once, es)
    np.testing.assert_array_equal(once, twice)


def test_selection_concentrates_on_confident_stripe():
    """A high-confidence vessel stripe should absorb the selections."""
    coarse = np.full((1, 32, 32), 0.5, dtype=np.float32)
    noise = Rng(5).split("n").uniform(-0.05, 0.05, (32, 32)).astype(np.float32)
    coarse[0] += noise
    coarse[0, 14:18, :] = 0.98  # stripe of near-certain foreground
    es = rce.select_topk_confident(coarse, 100)
    inside = sum(1 for r, c in es.positions.tolist() if 14 <= r < 18)
    assert inside / len(es) >= 0.8


def test_dual_branch_k0_bitwise_identity():
    cfg = TrainConfig(depth=2, base_width=2, d_filter=3, k=0)
    from parefine.train import init_model
    store = init_model(cfg, Rng(1).split("weights"))
    x = np.stack([_image(10), _image(11)])
    outs = rce.dual_branch_forward(x, store, cfg)
    np.testing.assert_array_equal(outs.aux_coarse, outs.main_coarse)
    np.testing.assert_array_equal(outs.aux_refined, outs.main_refined)


def test_dual_branch_shapes_match():
    cfg = TrainConfig(depth=2, base_width=2, d_filter=3, k=6)
    from parefine.train import init_model
    store = init_model(cfg, Rng(2).split("weights"))
    x = np.stack([_image(12)])
    outs = rce.dual_branch_forward(x, store, cfg)
    assert outs.main_refined.shape == outs.aux_refined.shape == (1, 1, 16, 16)
    assert all(len(es) == 6 for es in outs.erasure_sets)


def test_dual_branch_shares_weights():
    """Perturbing theta changes both branches (no frozen copy)."""
    cfg = TrainConfig(depth=2, base_width=2, d_filter=3, k=4)
    from parefine.train import init_model
    store = init_model(cfg, Rng(3).split("weights"))
    x = np.stack([_image(13)])
    base = rce.dual_branch_forward(x, store, cfg)
    store["head.b"].value += 0.25
    bumped = rce.dual_branch_forward(x, store, cfg)
    assert not np.array_equal(base.main_refined, bumped.main_refined)
    assert not np.array_equal(base.aux_refined, bumped.aux_refined)


def test_inference_never_invokes_rce():
    cfg = TrainConfig(depth=2, base_width=2, d_filter=3)
    from parefine.train import infer, init_model
    store = init_model(cfg, Rng(4).split("weights"))
    rce.reset_call_counts()
    infer(_image(14), store, cfg)
    assert rce.CALL_COUNTS == {"select": 0, "erase": 0, "dual_branch": 0}
