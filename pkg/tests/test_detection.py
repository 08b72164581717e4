import math

import numpy as np
import pytest
from scipy import stats

from ca43sim import detection
from ca43sim.atomic import level
from ca43sim.detection import DetectionConfig, ShelvingScheme
from ca43sim.errors import DomainError, StructureError
from ca43sim.rng import stream

DEFAULT = DetectionConfig()


# --- shelving -------------------------------------------------------------------


def test_shelving_error():
    one = ShelvingScheme((0.99,), (level("D5/2", 6, 0),))
    assert detection.shelving_error(one) == pytest.approx(1e-2)
    assert detection.shelving_error(ShelvingScheme()) == pytest.approx(1e-4)
    assert detection.shelving_error(ShelvingScheme((1.0, 1.0))) == 0.0


def test_shelving_scheme_validation():
    with pytest.raises(StructureError):
        ShelvingScheme((0.99, 0.99), (level("D5/2", 6, 0), level("D5/2", 6, 0)))
    with pytest.raises(StructureError):
        ShelvingScheme((0.99,), (level("D5/2", 6, 3),))
    with pytest.raises(StructureError):
        ShelvingScheme((0.99,), (level("D3/2", 3, 0),))
    with pytest.raises(DomainError):
        ShelvingScheme((1.2,), (level("D5/2", 6, 0),))


# --- thresholds -------------------------------------------------------------------


def test_threshold_is_exhaustive_minimum():
    choice = detection.set_threshold(DEFAULT)
    grid = np.arange(0, 200)
    err = detection.overlap_error(grid, DEFAULT.bright_mean, DEFAULT.dark_mean)
    assert choice.threshold == int(grid[np.argmin(err)])
    assert choice.error < 1e-5
    assert not choice.degenerate


def test_overlap_falls_then_rises_around_optimum():
    err = detection.overlap_error(np.arange(8, 60), 120.0, 2.4)
    best = int(np.argmin(err))
    assert np.all(np.diff(err[: best + 1]) < 0)
    assert np.all(np.diff(err[best:]) > 0)
    # every threshold from 12 up to well past the optimum separates below 1e-5
    assert np.all(detection.overlap_error(np.arange(12, 60), 120.0, 2.4) < 1e-5)


def test_threshold_edge_cases():
    flat = detection.set_threshold(DetectionConfig(snr=1.0))
    assert flat.degenerate and flat.error == 0.5
    for th in (1, 5, 50):
        assert detection.overlap_error(th, 120.0, 120.0) == pytest.approx(0.5)
    assert detection.set_threshold(DetectionConfig(snr=math.inf)).threshold == 1


def test_bright_tail_below_twelve():
    assert stats.poisson.cdf(11, DEFAULT.bright_mean) < 1e-6
    counts, flags = detection.simulate_detection_batch(np.zeros(20_000, bool), DEFAULT, seed=3)
    assert counts.mean() == pytest.approx(120, rel=0.01)
    assert np.all(counts >= 12)


def test_perfect_dark_ion():
    cfg = DetectionConfig(snr=math.inf, d52_lifetime=math.inf)
    for seed in range(5):
        assert detection.simulate_detection(True, cfg, seed) == (0, "dark")


# --- decay during the window ----------------------------------------------------------


def test_decay_probability():
    p = detection.decay_probability(DEFAULT)
    assert p == pytest.approx(1 - math.exp(-5e-3 / 1.168))
    assert 0.004 <= p <= 0.005


def test_decay_misclassification_against_monte_carlo():
    th = DEFAULT.resolved_threshold()
    n = 400_000
    counts, bright = detection.simulate_detection_batch(np.ones(n, bool), DEFAULT, seed=8)
    want = detection.shelved_bright_probability(DEFAULT, th)
    assert bright.mean() == pytest.approx(want, abs=4 * math.sqrt(want / n))
    assert detection.decay_misclassification(DEFAULT) < detection.decay_probability(DEFAULT)


def test_shelved_pmf_normalized():
    k = np.arange(0, 400)
    assert detection.shelved_count_pmf(k, DEFAULT).sum() == pytest.approx(1.0, abs=1e-9)
    assert detection.bright_count_pmf(k, DEFAULT).sum() == pytest.approx(1.0, abs=1e-9)


def test_count_histogram_chi_square():
    rng = stream(21)
    n = 10_000
    shelved = rng.random(n) < 0.5
    counts = detection.simulate_counts(shelved, DEFAULT, rng)
    k = np.arange(0, counts.max() + 60)
    frac = shelved.mean()
    pmf = frac * detection.shelved_count_pmf(k, DEFAULT) + (1 - frac) * detection.bright_count_pmf(k, DEFAULT)
    observed = np.bincount(counts, minlength=len(k))[: len(k)].astype(float)
    expected = pmf * n
    # pool adjacent bins until every expected count is at least 5
    obs_b, exp_b, o, e = [], [], 0.0, 0.0
    for oi, ei in zip(observed, expected):
        o, e = o + oi, e + ei
        if e >= 5:
            obs_b.append(o)
            exp_b.append(e)
            o = e = 0.0
    obs_b[-1] += o
    exp_b[-1] += e
    exp_b = np.array(exp_b) * np.sum(obs_b) / np.sum(exp_b)
    # one fitted parameter: the mixture weight taken from the sample
    _, p = stats.chisquare(obs_b, exp_b, ddof=1)
    assert p > 0.01


# --- budgets ------------------------------------------------------------------------------


def test_default_error_budget():
    b = detection.error_budget()
    assert b["total"] <= 0.007
    assert 0.004 <= b["decay"] <= 0.005
    assert b["decay_misclassification"] > b["shelving"] + b["overlap"]
    assert b["total"] == pytest.approx(b["shelving"] + b["decay_misclassification"] + b["overlap"])


def test_error_against_window_length():
    durations = np.geomspace(0.2e-3, 40e-3, 40)
    err = detection.error_vs_duration(durations)
    best = int(np.argmin(err))
    assert 0 < best < len(durations) - 1
    assert np.all(np.diff(err[: best + 1]) < 0)
    assert np.all(np.diff(err[best:]) > 0)
    ref = detection.error_vs_duration([5e-3])[0]
    # longer windows lose to the 5 ms error once decay dominates
    assert err[-1] > ref


# --- estimates --------------------------------------------------------------------------


def test_estimate_population():
    p, s = detection.estimate_population(["bright"] * 25 + ["dark"] * 25)
    assert p == 0.5 and s == pytest.approx(0.0707, abs=1e-4)
    p, s = detection.estimate_population(np.ones(50, bool))
    assert p == 1.0 and s == pytest.approx(0.5 / 50)
    s100 = detection.estimate_population(np.r_[np.ones(50), np.zeros(50)])[1]
    assert s100 / detection.binomial_sigma(0.5, 50) == pytest.approx(1 / math.sqrt(2))
    with pytest.raises(DomainError):
        detection.estimate_population([])


def test_batch_reproducible():
    shelved = np.arange(3000) % 3 == 0
    a = detection.simulate_detection_batch(shelved, DEFAULT, seed=5)[0]
    b = detection.simulate_detection_batch(shelved, DEFAULT, seed=5)[0]
    assert a.tobytes() == b.tobytes()


def test_read_out_respects_probabilities():
    rng = stream(4)
    bright = detection.read_out(np.full(20_000, 0.3), DEFAULT, ShelvingScheme(), rng)
    assert (~bright).mean() == pytest.approx(0.3, abs=0.015)


def test_config_validation():
    with pytest.raises(DomainError):
        DetectionConfig(duration=0)
    with pytest.raises(DomainError):
        DetectionConfig(snr=0.5)
    with pytest.raises(DomainError):
        DetectionConfig(threshold=-1)
