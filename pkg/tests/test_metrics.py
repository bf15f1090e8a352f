"""Confusion counts, F1/ACC, and the two AUC modes."""

import numpy as np
import pytest

from parefine import metrics
from parefine.errors import DataError
from parefine.rng import Rng


def auc_pairwise(scores, labels):
    """Brute-force O(N^2) pairwise comparison oracle, percent."""
    pos = scores[labels]
    neg = scores[~labels]
    wins = 0.0
    for p in pos:
        for n in neg:
            if p > n:
                wins += 1.0
            elif p == n:
                wins += 0.5
    return 100.0 * wins / (len(pos) * len(neg))


def test_perfect_prediction():
    g = (Rng(0).split("g").random(200) < 0.4).astype(np.float32)
    rep = metrics.evaluate(g, g)
    assert rep.f1 == 100.0 and rep.acc == 100.0 and rep.auc == 100.0


def test_hand_counted_four_pixels():
    g = np.array([1, 1, 0, 0], dtype=np.float32)
    s = np.array([0.9, 0.2, 0.8, 0.1], dtype=np.float32)
    rep = metrics.confusion_metrics(s, g)
    assert (rep.tp, rep.fn, rep.fp, rep.tn) == (1, 1, 1, 1)
    assert rep.f1 == 50.0 and rep.acc == 50.0


def test_degenerate_all_background():
    g = np.zeros(50, dtype=np.float32)
    s = np.zeros(50, dtype=np.float32)
    rep = metrics.confusion_metrics(s, g)
    assert rep.f1 == 0.0 and rep.degenerate_f1
    assert rep.acc == 100.0


def test_mask_excludes_pixels():
    g = np.array([1, 1, 0, 0], dtype=np.float32)
    s = np.array([0.9, 0.2, 0.8, 0.1], dtype=np.float32)
    mask = np.array([1, 0, 0, 1], dtype=np.float32)  # drop the two mistakes
    rep = metrics.confusion_metrics(s, g, mask)
    assert rep.acc == 100.0 and rep.pixels == 2


def test_empty_mask_is_error():
    with pytest.raises(DataError):
        metrics.confusion_metrics(np.ones(4), np.ones(4), np.zeros(4))


def test_threshold_monotonicity():
    s = Rng(1).split("s").random(500).astype(np.float32)
    g = (Rng(2).split("g").random(500) < 0.5).astype(np.float32)
    prev_tp, prev_fp = None, None
    for t in np.linspace(0.0, 1.0, 21):
        rep = metrics.confusion_metrics(s, g, threshold=float(t))
        if prev_tp is not None:
            assert rep.tp <= prev_tp and rep.fp <= prev_fp
        prev_tp, prev_fp = rep.tp, rep.fp


def test_auc_perfect_separation():
    s = np.concatenate([np.full(40, 0.8), np.full(60, 0.2)]).astype(np.float32)
    g = np.concatenate([np.ones(40), np.zeros(60)]).astype(np.float32)
    assert metrics.auc(s, g) == 100.0
    assert metrics.auc(s, g, method="exact") == 100.0


def test_auc_inverted_scores():
    s = np.concatenate([np.full(40, 0.1), np.full(60, 0.9)]).astype(np.float32)
    g = np.concatenate([np.ones(40), np.zeros(60)]).astype(np.float32)
    assert metrics.auc(s, g) == 0.0
    assert metrics.auc(s, g, method="exact") == 0.0


def test_auc_random_scores_near_fifty():
    rng = Rng(3)
    s = rng.split("s").random(100_000).astype(np.float32)
    g = (rng.split("g").random(100_000) < 0.5).astype(np.float32)
    a = metrics.auc(s, g)
    assert abs(a - 50.0) < 2.0
    exact = metrics.auc(s, g, method="exact")
    assert abs(a - exact) < 0.5


def test_histogram_close_to_exact_rank():
    for seed in range(5):
        rng = Rng(seed + 10)
        s = rng.split("s").random(10_000).astype(np.float32)
        shift = rng.split("shift").random(10_000).astype(np.float32)
        g = (shift < 0.4).astype(np.float32)
        s = np.clip(s + 0.15 * g, 0, 1)  # informative scores
        hist = metrics.auc(s, g)
        exact = metrics.auc(s, g, method="exact")
        assert abs(hist - exact) < 0.5


def test_exact_rank_matches_pairwise_oracle():
    rng = Rng(20)
    s = np.round(rng.split("s").random(120), 2).astype(np.float32)  # force ties
    g = rng.split("g").random(120) < 0.35
    exact = metrics.auc(s, g.astype(np.float32), method="exact")
    assert abs(exact - auc_pairwise(s, g)) < 1e-9


def test_auc_single_class_error():
    with pytest.raises(DataError):
        metrics.auc(np.ones(10), np.ones(10))


def test_report_serialization_roundtrip():
    g = np.array([1, 1, 0, 0], dtype=np.float32)
    s = np.array([0.9, 0.6, 0.8, 0.1], dtype=np.float32)
    rep = metrics.evaluate(s, g)
    text = rep.to_text()
    assert "f1=" in text and "pixels=4" in text
    d = rep.to_dict()
    assert d["tp"] + d["fp"] + d["tn"] + d["fn"] == 4
    import json
    assert json.loads(rep.to_json()) == d
