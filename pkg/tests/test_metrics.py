import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bayesrx import metrics


def brute_ece(conf, correct, bins):
    """Plain-loop binned calibration error with (lo, hi] intervals."""
    total = len(conf)
    out = 0.0
    for r in range(bins):
        lo, hi = r / bins, (r + 1) / bins
        members = [i for i, c in enumerate(conf) if (lo < c <= hi) or (r == 0 and c <= 0)]
        if not members:
            continue
        acc = sum(correct[i] for i in members) / len(members)
        cf = sum(conf[i] for i in members) / len(members)
        out += len(members) / total * abs(acc - cf)
    return out


def test_ser_and_ber_examples():
    est = np.zeros((10, 4), dtype=int)
    true = est.copy()
    true[0, 0] = true[3, 2] = true[9, 1] = 1
    assert metrics.ser(est, true) == 0.075
    bits = np.zeros(128, dtype=np.uint8)
    assert metrics.ber(bits, bits) == 0.0
    assert metrics.ber(bits, 1 - bits) == 1.0
    flipped = bits.copy()
    flipped[[1, 20, 40, 77, 127]] = 1
    assert metrics.ber(flipped, bits) == 0.0390625
    with pytest.raises(ValueError):
        metrics.ser(np.zeros(3), np.zeros(4))


def test_ece_hand_examples():
    value, _ = metrics.ece(np.full(50, 0.95), np.ones(50))
    assert value == pytest.approx(0.05)
    correct = np.r_[np.ones(80), np.zeros(20)]
    value, _ = metrics.ece(np.full(100, 0.9), correct)
    assert value == pytest.approx(0.1)
    assert metrics.ece(np.full(4, 0.5), [1, 0, 1, 0])[0] == 0.0
    with pytest.raises(ValueError):
        metrics.ece([], [])


def test_boundary_goes_to_lower_bin():
    assert metrics.bin_index(np.array([0.1, 0.1000001, 1.0, 0.05]), 10).tolist() == [0, 1, 9, 0]


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(0.0, 1.0), st.booleans()), min_size=1, max_size=60),
       st.integers(1, 12))
def test_ece_matches_brute_force(records, bins):
    conf = [c for c, _ in records]
    correct = [int(k) for _, k in records]
    assert metrics.ece(conf, correct, bins)[0] == pytest.approx(brute_ece(conf, correct, bins), abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_ece_order_and_merge_invariance(seed):
    rng = np.random.default_rng(seed)
    conf = rng.uniform(size=200)
    correct = rng.uniform(size=200) < conf
    whole, table = metrics.ece(conf, correct)
    perm = rng.permutation(200)
    assert metrics.ece(conf[perm], correct[perm])[0] == pytest.approx(whole, abs=1e-12)
    cut = int(rng.integers(1, 199))
    merged = metrics.reliability_table(conf[:cut], correct[:cut]).merge(
        metrics.reliability_table(conf[cut:], correct[cut:]))
    assert merged.ece() == pytest.approx(whole, abs=1e-12)
    assert np.array_equal(merged.counts, table.counts)
    assert 0.0 <= whole <= 1.0


def test_prediction_records():
    soft = np.array([[[0.1, 0.9], [0.5, 0.5]]])
    conf, correct = metrics.prediction_records(soft, np.array([[1, 1]]))
    assert conf.tolist() == [0.9, 0.5]
    assert correct.tolist() == [True, False]  # tie resolves to index 0


def test_reliability_csv(tmp_path):
    _, table = metrics.ece([0.95, 0.95, 0.35], [1, 0, 1], bins=10)
    table.to_csv(tmp_path / "r.csv")
    rows = list(csv.DictReader(open(tmp_path / "r.csv")))
    assert len(rows) == 10
    assert rows[9]["count"] == "2" and float(rows[9]["acc"]) == 0.5 and float(rows[9]["conf"]) == 0.95
    assert rows[0]["acc"] == "" and rows[0]["count"] == "0"
    assert float(rows[3]["bin_low"]) == pytest.approx(0.3)
    with pytest.raises(ValueError):
        table.merge(metrics.reliability_table([0.5], [1], bins=5))
