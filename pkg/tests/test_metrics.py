import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bdn.arch import Head
from bdn.data import DatasetManifest, Record
from bdn.metrics import Predictions, compute_metrics
from bdn.rating import fit_gaussians

FLAGS = (False,) * 14


def hist(**votes):
    h = [0] * 10
    for rating, count in votes.items():
        h[int(rating[1:]) - 1] = count
    return tuple(h)


# mu: 7, 3, 5, 6 ; sigma: floor, floor, 1, 1
FOUR = DatasetManifest([
    Record("i1", "", hist(r7=200), FLAGS),
    Record("i2", "", hist(r3=200), FLAGS),
    Record("i3", "", hist(r4=100, r6=100), FLAGS),
    Record("i4", "", hist(r5=100, r7=100), FLAGS),
])
IDS = ["i1", "i2", "i3", "i4"]


def test_binary_fixture_delta_zero():
    pred = Predictions(IDS, "binary", p_high=np.array([0.9, 0.6, 0.2, 0.7]))
    r = compute_metrics(pred, FOUR, 0.0)
    assert r.n_scored == 3  # i3 sits exactly on 5
    assert r.binary_accuracy == pytest.approx(2 / 3)
    assert r.confusion == {"tp": 2, "tn": 0, "fp": 1, "fn": 0}
    assert r.average_kl is None


def test_binary_fixture_delta_one():
    pred = Predictions(IDS, "binary", p_high=np.array([0.9, 0.6, 0.2, 0.7]))
    r = compute_metrics(pred, FOUR, 1.0)
    assert r.n_scored == 2  # i4 (mean 6) is inside the closed band
    assert r.binary_accuracy == 0.5


def test_gaussian_fixture():
    pred = Predictions(IDS, "gaussian", mu=np.array([7.0, 4.0, 5.0, 6.5]),
                       sigma=np.array([0.1, 1.0, 1.0, 1.0]))
    r = compute_metrics(pred, FOUR, 0.0)
    # i2: log(1/0.1) + (0.01 + 1)/2 - 1/2 ; i4: (1 + 0.25)/2 - 1/2
    assert r.average_kl == pytest.approx((math.log(10) + 0.005 + 0.125) / 4, abs=1e-14)
    assert r.mean_within_1 == 0.75
    assert r.rebinarized_accuracy == 1.0
    assert r.binary_accuracy is None


def test_perfect_gaussian_prediction():
    mu, sigma = fit_gaussians(FOUR.histograms)
    r = compute_metrics(Predictions(IDS, "gaussian", mu=mu, sigma=sigma), FOUR, 0.0)
    assert r.average_kl == 0.0 and r.mean_within_1 == 1.0


@given(st.lists(st.lists(st.integers(0, 30), min_size=10, max_size=10).filter(lambda c: sum(c) > 0),
                min_size=1, max_size=12), st.floats(0, 2))
@settings(max_examples=60, deadline=None)
def test_perfect_mean_predictor_rebinarizes_exactly(hists, delta):
    m = DatasetManifest([Record(f"x{k}", "", tuple(h), FLAGS) for k, h in enumerate(hists)])
    mu, sigma = fit_gaussians(m.histograms)
    r = compute_metrics(Predictions(m.ids, "dist10", mu=mu, sigma=sigma), m, delta)
    assert r.rebinarized_accuracy in (None, 1.0)
    assert r.rebinarized_accuracy is None or r.n_scored > 0


def test_report_is_pure_and_serializable():
    pred = Predictions(IDS, "binary", p_high=np.array([0.9, 0.6, 0.2, 0.7]))
    a, b = compute_metrics(pred, FOUR, 0.0), compute_metrics(pred, FOUR, 0.0)
    assert a == b
    recs = a.to_records()
    assert "binary_accuracy,0.6666666666666666" in recs and "confusion.tp,2" in recs
    assert "binary accuracy" in a.summary()


def test_prediction_lines_round_trip():
    pred = Predictions(IDS, "binary", p_high=np.array([0.9, 0.6, 0.2, 0.7]))
    lines = pred.to_lines()
    assert lines[0] == "i1,high,0.9" and lines[2] == "i3,low,0.2"
    back = Predictions.from_lines(lines, "binary")
    np.testing.assert_array_equal(back.p_high, pred.p_high)
    g = Predictions(IDS, Head.GAUSSIAN, mu=np.array([7.0, 4.0, 5.0, 6.5]), sigma=np.ones(4))
    back = Predictions.from_lines(g.to_lines(), "gaussian")
    np.testing.assert_array_equal(back.mu, g.mu)


def test_metric_errors():
    with pytest.raises(ValueError, match="unknown"):
        compute_metrics(Predictions(["zz"], "binary", p_high=np.array([0.5])), FOUR)
    with pytest.raises(ValueError, match="non-negative"):
        compute_metrics(Predictions(IDS, "binary", p_high=np.zeros(4)), FOUR, -1)
    with pytest.raises(ValueError, match="no predictions"):
        compute_metrics(Predictions([], "binary", p_high=np.zeros(0)), FOUR)
    with pytest.raises(ValueError, match="expected 3 fields"):
        Predictions.from_lines(["a,high"], "binary")
    with pytest.raises(ValueError):
        Predictions(IDS, "gaussian", mu=np.zeros(4))
