import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from entropic.errors import (
    DimensionMismatch,
    EmptySample,
    FrequencySumError,
    InvalidGrid,
    UnknownCatalogName,
)
from entropic.model import (
    EmpiricalSample,
    PotentialSet,
    SupportGrid,
    bin_observations,
    discretize_continuous,
    dnorm_general_to_simple,
    entropy,
    log_likelihood,
    model_moment,
    moment_gap,
    normalize,
    sample_moment,
)
from entropic.potential import parse_potential


def _pots(*src, T=0):
    return PotentialSet.parse(src, T)


def test_zero_lambda_is_uniform():
    s = SupportGrid([0.0, 1.0, 2.5, 4.0])
    model = normalize(s, _pots("x", "x^2"), [0.0, 0.0])
    np.testing.assert_allclose(model.probs, 0.25, rtol=0, atol=1e-15)
    assert entropy(model) == pytest.approx(math.log(4), abs=1e-15)


def test_dn_mode_at_zero():
    s = SupportGrid([-2.0, -1.0, 0.0, 1.0, 2.0])
    model = normalize(s, _pots("(x - a1)^2", T=1), [1.0], [0.0])
    expected = np.exp(-s.points ** 2) / np.exp(-s.points ** 2).sum()
    np.testing.assert_allclose(model.probs, expected, rtol=1e-14)
    assert np.argmax(model.probs) == 2
    assert model_moment(model, parse_potential("x")) == pytest.approx(0.0, abs=1e-15)
    # direct-sum entropy oracle
    assert entropy(model) == pytest.approx(-np.sum(expected * np.log(expected)), rel=1e-13)


def test_extreme_lambda_against_extended_precision():
    model = normalize(SupportGrid([0.0, 1.0]), _pots("x"), [1000.0])
    mpmath.mp.dps = 600
    z = 1 + mpmath.exp(-1000)
    exact = [1 / z, mpmath.exp(-1000) / z]
    assert np.all(np.isfinite(model.probs))
    assert model.probs.sum() == pytest.approx(1.0, abs=1e-15)
    for got, want in zip(model.probs, exact):
        assert got == pytest.approx(float(want), rel=1e-14, abs=0)
    assert model.log_norm == pytest.approx(float(mpmath.log(z)), abs=1e-300)


def test_normalization_over_random_draws():
    rng = np.random.default_rng(0)
    s = SupportGrid(np.linspace(-3, 3, 17))
    pots = _pots("(x - a1)^2", "ln(1 + exp(x - a2))", T=2)
    for _ in range(1000):
        lam = rng.normal(0, 20, 2)
        model = normalize(s, pots, lam, rng.normal(0, 2, 2))
        assert abs(model.probs.sum() - 1.0) <= 1e-12
        assert np.all(model.probs >= 0)


def test_probabilities_positive():
    model = normalize(SupportGrid(np.arange(5.0)), _pots("x"), [5.0])
    assert np.all(model.probs > 0)


def test_model_is_immutable_and_renormalized():
    s = SupportGrid([-1.0, 0.0, 1.0])
    pots = _pots("(x - a1)^2", T=1)
    model = normalize(s, pots, [1.0], [0.0])
    with pytest.raises(Exception):
        model.lam = np.array([2.0])
    p = model.probs
    p[0] = 0.5
    assert model.probs[0] != 0.5
    other = model.with_params(alpha=[1.0])
    assert other.log_norm != model.log_norm
    assert other.probs[2] > other.probs[0]


def test_dn_reparameterization_identity():
    rng = np.random.default_rng(1)
    s = SupportGrid(np.arange(-5.0, 6.0))
    simple, general = _pots("x", "x^2"), _pots("(x - a1)^2", T=1)
    for _ in range(100):
        lam, alpha = rng.uniform(0.05, 3.0), rng.uniform(-4, 4)
        p_gen = normalize(s, general, [lam], [alpha]).probs
        p_sim = normalize(s, simple, dnorm_general_to_simple(lam, alpha)).probs
        assert np.max(np.abs(p_gen - p_sim)) <= 1e-12


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-30, 30), min_size=2, max_size=2), st.integers(2, 40))
def test_entropy_bounds(lam, m):
    model = normalize(SupportGrid(np.linspace(-1, 1, m)), _pots("x", "x^2"), lam)
    H = entropy(model)
    assert -1e-12 <= H <= math.log(m) + 1e-12


def test_weighted_entropy_bounded_by_log_total_weight():
    s, pots = discretize_continuous("gamma", (0.1, 10.0, 50))
    H = entropy(normalize(s, pots, [0.0, 0.0]))
    assert H == pytest.approx(math.log(s.weights.sum()), abs=1e-12)


def test_entropy_decreases_toward_point_mass():
    s = SupportGrid(np.arange(-5.0, 6.0))
    pots = _pots("(x - a1)^2", T=1)
    H = [entropy(normalize(s, pots, [lam], [0.0])) for lam in (1, 2, 4, 8)]
    assert all(a > b for a, b in zip(H, H[1:]))
    assert 0 < H[-1] < 0.01


def test_moments():
    s = SupportGrid([1.0, 2.0, 3.0])
    x = parse_potential("x")
    assert model_moment(normalize(s, _pots("x"), [0.0]), x) == pytest.approx(2.0)
    assert sample_moment(EmpiricalSample([0, 1, 0]), s, x) == 2.0
    s2 = SupportGrid([-1.0, 0.0, 1.0])
    assert sample_moment(EmpiricalSample(np.full(3, 1 / 3)), s2, parse_potential("x^2")) == pytest.approx(2 / 3)


def test_gamma_moment_matches_direct_sum():
    s, pots = discretize_continuous("gamma", (0.01, 30, 500))
    model = normalize(s, pots, [0.5, -1.0])
    dens = s.weights * np.exp(-0.5 * s.points + np.log(s.points))
    p = dens / dens.sum()
    assert model_moment(model, parse_potential("ln(x)")) == pytest.approx(float(p @ np.log(s.points)), rel=1e-13)


def test_moment_gap():
    rng = np.random.default_rng(2)
    s = SupportGrid(np.linspace(-2, 2, 9))
    pots = _pots("x", "x^2")
    model = normalize(s, pots, rng.normal(size=2))
    np.testing.assert_allclose(moment_gap(model, EmpiricalSample.from_probs(model.probs)), 0, atol=1e-12)
    r = EmpiricalSample(rng.dirichlet(np.ones(9)))
    u = np.stack([s.points, s.points ** 2], axis=1)
    np.testing.assert_allclose(moment_gap(model, r), r.freq @ u - model.probs @ u, rtol=1e-13)
    with pytest.raises(DimensionMismatch):
        moment_gap(model, EmpiricalSample([0.5, 0.5]))


def test_log_likelihood_oracles():
    rng = np.random.default_rng(3)
    s = SupportGrid(np.linspace(-2, 2, 7))
    pots = _pots("(x - a1)^2", "abs(x)", T=1)
    zero = normalize(s, pots, [0.0, 0.0], [0.4])
    r = EmpiricalSample(rng.dirichlet(np.ones(7)))
    assert log_likelihood(zero, r) == pytest.approx(-math.log(7), abs=1e-14)
    model = normalize(s, pots, rng.normal(size=2), [0.4])
    assert log_likelihood(model, EmpiricalSample.from_probs(model.probs)) == pytest.approx(-entropy(model), abs=1e-12)
    assert log_likelihood(model, r) == pytest.approx(float(r.freq @ np.log(model.probs)), abs=1e-12)


def test_sample_validation():
    with pytest.raises(FrequencySumError):
        EmpiricalSample([0.5, 0.6])
    with pytest.raises(FrequencySumError):
        EmpiricalSample([1.5, -0.5])
    with pytest.raises(EmptySample):
        EmpiricalSample.from_counts([0, 0])
    assert EmpiricalSample.from_counts([1, 3]).n == 4


@pytest.mark.parametrize("points", [[0.0], [0.0, 0.0], [1.0, 0.0], [0.0, np.inf]])
def test_invalid_support(points):
    with pytest.raises(InvalidGrid):
        SupportGrid(points)


def test_invalid_weights():
    with pytest.raises(InvalidGrid):
        SupportGrid([0.0, 1.0], [1.0, 0.0])


def test_catalog():
    s, pots = discretize_continuous("dnorm_general", {"lo": -5, "hi": 5, "m": 11})
    np.testing.assert_array_equal(s.points, np.arange(-5.0, 6.0))
    assert s.unit_weights and pots.J == 1 and pots.T == 1
    assert pots.sources() == ["(x - a1)^2"]
    s, pots = discretize_continuous("gamma", (0.01, 30, 500))
    assert (pots.J, pots.T, pots.sources()) == (2, 0, ["x", "ln(x)"])
    assert s.weights[0] == pytest.approx(s.weights[1] / 2)
    s, pots = discretize_continuous("logistic", (-10, 10, 101))
    assert (pots.J, pots.T) == (2, 2)
    with pytest.raises(UnknownCatalogName):
        discretize_continuous("cauchy", (0, 1, 5))
    with pytest.raises(InvalidGrid):
        discretize_continuous("gamma", (0.0, 1, 5))
    with pytest.raises(InvalidGrid):
        discretize_continuous("gamma", (1.0, 2.0, 1))


def test_binning():
    s = SupportGrid([0.0, 1.0, 2.0])
    on_grid = bin_observations([0.0, 1.0, 1.0, 2.0], s)
    np.testing.assert_array_equal(on_grid.freq, [0.25, 0.5, 0.25])
    assert on_grid.n == 4 and on_grid.binning_error == 0.0
    # hand-binned: 0.4 -> 0, 0.6 -> 1, 2.7 -> 2, -1 -> 0
    off = bin_observations([0.4, 0.6, 2.7, -1.0], s)
    np.testing.assert_array_equal(off.freq, [0.5, 0.25, 0.25])
    assert off.binning_error == pytest.approx(1.0)
