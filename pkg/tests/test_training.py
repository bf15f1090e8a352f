"""Patch protocol, Adam, the training loop, checkpointing, and inference."""

import numpy as np
import pytest

from parefine import checkpoint
from parefine.config import TrainConfig, config_from_kv, config_to_kv_text, parse_kv_text
from parefine.data import Sample, SynthConfig, synth_dataset
from parefine.errors import ParameterError
from parefine.params import ParamStore
from parefine.rng import Rng
from parefine.train import (adam_step, augment_flip, infer, init_model,
                            patch_size, sample_patch, train)


# -- patch protocol -------------------------------------------------------------

@pytest.mark.parametrize("h,w,expect", [
    (565, 584, (169, 175)),
    (999, 960, (299, 288)),
    (700, 605, (210, 181)),
])
def test_patch_size_protocol_values(h, w, expect):
    assert patch_size(h, w, 0.3) == expect


def test_patch_size_too_small_rejected():
    with pytest.raises(ParameterError, match="16"):
        patch_size(40, 40, 0.3)


def _sample(seed, hw=(20, 20)):
    img = Rng(seed).split("i").uniform(0, 1, (3,) + hw).astype(np.float32)
    lab = (Rng(seed).split("l").random((1,) + hw) < 0.2).astype(np.float32)
    return Sample(img, lab, np.ones_like(lab), f"s{seed}")


def test_sample_patch_full_size_identity():
    s = _sample(0)
    img, lab, msk = sample_patch(s, (20, 20), Rng(1).split("p"))
    np.testing.assert_array_equal(img, s.image)
    np.testing.assert_array_equal(lab, s.label)


def test_sample_patch_seeded_sequence_identical():
    s = _sample(1, (50, 50))
    crops1 = [sample_patch(s, (10, 10), r)[0] for r in [Rng(7).split("p")] for _ in range(5)]
    crops2 = [sample_patch(s, (10, 10), r)[0] for r in [Rng(7).split("p")] for _ in range(5)]
    for a, b in zip(crops1, crops2):
        np.testing.assert_array_equal(a, b)


def test_sample_patch_uniform_coverage():
    s = _sample(2, (100, 100))
    rng = Rng(3).split("p")
    tops = []
    for _ in range(10_000):
        h, w = s.image.shape[1:]
        top = int(rng.integers(0, h - 30 + 1))
        tops.append(top)
        rng.integers(0, w - 30 + 1)
    counts = np.bincount(tops, minlength=71)
    assert counts.min() > 0
    expected = 10_000 / 71
    chi2 = float(((counts - expected) ** 2 / expected).sum())
    # 70 dof; 99.9th percentile is ~112
    assert chi2 < 130


def test_sample_patch_too_large():
    with pytest.raises(ParameterError):
        sample_patch(_sample(3), (21, 21), Rng(0).split("p"))


class _FixedRng:
    """Stub emitting a fixed sequence of uniform draws."""

    def __init__(self, values):
        self.values = list(values)

    def random(self, shape=None):
        return self.values.pop(0)


def test_flips_are_involutions():
    s = _sample(4)
    once = augment_flip(s.image, s.label, s.fov_mask, _FixedRng([0.0, 0.0]))
    twice = augment_flip(*once, _FixedRng([0.0, 0.0]))
    for a, b in zip(twice, (s.image, s.label, s.fov_mask)):
        np.testing.assert_array_equal(a, b)


def test_flip_preserves_foreground_count():
    s = _sample(5)
    for draws in ([0.0, 0.9], [0.9, 0.0], [0.0, 0.0]):
        _, lab, _ = augment_flip(s.image, s.label, s.fov_mask, _FixedRng(list(draws)))
        assert lab.sum() == s.label.sum()


def test_flip_seeded_deterministic():
    s = _sample(6)
    out1 = augment_flip(s.image, s.label, s.fov_mask, Rng(9).split("a"))
    out2 = augment_flip(s.image, s.label, s.fov_mask, Rng(9).split("a"))
    np.testing.assert_array_equal(out1[0], out2[0])


# -- Adam -------------------------------------------------------------------------

def test_adam_zero_grad_no_move():
    store = ParamStore()
    p = store.add("w", np.array([1.0, -2.0]))
    adam_step(store, lr=0.1, t=1)
    np.testing.assert_array_equal(p.value, [1.0, -2.0])


def test_adam_zero_grad_decays_moments():
    store = ParamStore()
    p = store.add("w", np.array([1.0, -2.0]))
    p.m[...] = 0.5
    p.v[...] = 0.25
    for t in range(1, 6):
        adam_step(store, lr=0.0, t=t)  # lr 0 isolates the moment dynamics
    np.testing.assert_allclose(p.m, np.full(2, 0.5 * 0.9 ** 5), rtol=1e-6)
    np.testing.assert_allclose(p.v, np.full(2, 0.25 * 0.999 ** 5), rtol=1e-6)


def test_adam_hand_recurrence_first_step():
    store = ParamStore()
    p = store.add("w", np.array([0.0]))
    p.grad[...] = 1.0
    adam_step(store, lr=0.1, t=1, eps=1e-8)
    # m_hat = 1, v_hat = 1 -> step = -0.1 / (1 + 1e-8)
    np.testing.assert_allclose(p.value, [-0.1], rtol=1e-6)
    assert p.grad[0] == 0.0  # zeroed after the step


def test_adam_two_runs_identical():
    def run():
        store = ParamStore()
        p = store.add("w", np.zeros(3))
        rng = Rng(11).split("g")
        for t in range(1, 20):
            p.grad[...] = rng.normal(0, 1, 3)
            adam_step(store, lr=0.01, t=t)
        return p.value.copy()
    np.testing.assert_array_equal(run(), run())


# -- training loop ------------------------------------------------------------------

def _tiny_cfg(**kw):
    base = dict(depth=2, base_width=2, d_filter=3, seed=3, batch=2,
                max_iters=6, eval_every=0, patch_ratio=0.5)
    base.update(kw)
    return TrainConfig(**base)


def _tiny_data(n=4, hw=48):
    return synth_dataset(SynthConfig(height=hw, width=hw), n, seed0=100)


def test_lambda_zero_k_zero_matches_single_branch():
    data = _tiny_data()
    res_dual = train(data, [], _tiny_cfg(lam=0.0, k=0, use_rce=True))
    res_single = train(data, [], _tiny_cfg(lam=0.0, k=0, use_rce=False))
    for (i1, t1, s1, r1), (i2, t2, s2, r2) in zip(res_dual.loss_rows, res_single.loss_rows):
        assert t1 == t2 and s1 == s2
    for (n1, p1), (n2, p2) in zip(res_dual.store.params(), res_single.store.params()):
        np.testing.assert_array_equal(p1.value, p2.value)


def test_training_loss_decreases_on_synthetic():
    data = synth_dataset(SynthConfig(), 12, seed0=40)
    cfg = TrainConfig(seed=5, max_iters=500, eval_every=0)
    res = train(data, [], cfg)
    totals = np.array([r[1] for r in res.loss_rows])
    ma = np.convolve(totals, np.ones(50) / 50, mode="valid")
    assert ma[-1] < ma[0]
    # downward trend overall
    slope = np.polyfit(np.arange(ma.size), ma, 1)[0]
    assert slope < 0


def test_loss_decomposition_exact_in_log():
    data = _tiny_data()
    res = train(data, [], _tiny_cfg(lam=0.05, use_rce=True))
    for _, total, l_s, l_r in res.loss_rows:
        assert total == l_s + 0.05 * l_r


# -- checkpointing --------------------------------------------------------------------

def test_checkpoint_roundtrip_bytes(tmp_path):
    cfg = _tiny_cfg()
    store = init_model(cfg, Rng(cfg.seed).split("weights"))
    rngs = {"patches": Rng(1).split("patches"), "augment": Rng(1).split("augment")}
    rngs["patches"].random(13)
    blob1 = checkpoint.serialize(cfg, 7, rngs, store)
    ck = checkpoint.deserialize(blob1)
    blob2 = checkpoint.serialize(ck.config, ck.iteration, ck.restore_rngs(), ck.store)
    assert blob1 == blob2
    assert ck.iteration == 7


def test_checkpoint_bad_magic(tmp_path):
    from parefine.errors import CheckpointError
    with pytest.raises(CheckpointError):
        checkpoint.deserialize(b"NOPE" + bytes(64))


def test_resume_matches_uninterrupted(tmp_path):
    data = _tiny_data(6)
    cfg = _tiny_cfg(max_iters=12, seed=8)
    full = train(data, [], cfg, out_dir=tmp_path / "full")

    half = train(data, [], cfg, out_dir=tmp_path / "half", stop_at=6)
    resumed = train(data, [], cfg, out_dir=tmp_path / "resumed",
                    resume_from=half.checkpoint_path)
    assert (tmp_path / "full" / "checkpoint.parf").read_bytes() == \
           (tmp_path / "resumed" / "checkpoint.parf").read_bytes()


def test_identical_seeds_identical_outputs(tmp_path):
    data = _tiny_data(5)
    cfg = _tiny_cfg(max_iters=8, seed=21)
    r1 = train(data, data[:2], cfg, out_dir=tmp_path / "a")
    r2 = train(data, data[:2], cfg, out_dir=tmp_path / "b")
    assert (tmp_path / "a" / "checkpoint.parf").read_bytes() == \
           (tmp_path / "b" / "checkpoint.parf").read_bytes()
    assert (tmp_path / "a" / "metrics.log").read_bytes() == \
           (tmp_path / "b" / "metrics.log").read_bytes()
    assert (tmp_path / "a" / "loss.csv").read_bytes() == \
           (tmp_path / "b" / "loss.csv").read_bytes()


# -- inference ---------------------------------------------------------------------

def test_infer_bitwise_deterministic():
    cfg = _tiny_cfg()
    store = init_model(cfg, Rng(2).split("weights"))
    img = Rng(3).split("x").uniform(0, 1, (3, 30, 34)).astype(np.float32)
    _, r1 = infer(img, store, cfg)
    _, r2 = infer(img, store, cfg)
    np.testing.assert_array_equal(r1, r2)


def test_infer_preserves_odd_dims():
    cfg = TrainConfig(seed=0)
    store = init_model(cfg, Rng(4).split("weights"))
    img = np.zeros((3, 93, 107), dtype=np.float32)
    coarse, refined = infer(img, store, cfg)
    assert coarse.shape == (1, 93, 107)
    assert refined.shape == (1, 93, 107)


# -- config file --------------------------------------------------------------------

def test_config_kv_roundtrip():
    cfg = TrainConfig(lam=0.05, k=17, seed=99, use_rce=False)
    text = config_to_kv_text(cfg)
    back = config_from_kv(parse_kv_text(text))
    assert back == cfg


def test_config_file_comments_and_overrides():
    kv = parse_kv_text("# comment\nlr = 0.01  # inline\nbatch=2\n")
    cfg = config_from_kv(kv)
    assert cfg.lr == 0.01 and cfg.batch == 2
    cfg2 = config_from_kv({"batch": "8"}, base=cfg)
    assert cfg2.lr == 0.01 and cfg2.batch == 8


def test_config_unknown_key_rejected():
    with pytest.raises(ParameterError, match="unknown"):
        config_from_kv({"nope": "1"})


def test_config_validation():
    with pytest.raises(ParameterError):
        TrainConfig(d_filter=4)
    with pytest.raises(ParameterError):
        TrainConfig(patch_ratio=0.0)
