import math

import numpy as np
import pytest
from scipy.special import logsumexp

from entropic import fd
from entropic.errors import InfeasibleMoments, NonConvergence, WrongTask
from entropic.model import (
    EmpiricalSample,
    PotentialSet,
    SupportGrid,
    dnorm_general_to_simple,
    entropy,
    log_likelihood,
    moment_gap,
    normalize,
)
from entropic.solvers import (
    SolverConfig,
    compact_residuals,
    foc_residuals,
    solve_me_simple,
    solve_minimax_ent,
    solve_ml_general,
    solve_ml_simple,
)

SIMPLE = PotentialSet.parse(["x", "x^2"])
FIVE = SupportGrid(np.arange(-2.0, 3.0))


def _nonincreasing(trace):
    obj = [row.objective for row in trace]
    return all(b <= a + 64 * np.finfo(float).eps * max(1.0, abs(a)) for a, b in zip(obj, obj[1:]))


@pytest.mark.parametrize("solver", [solve_me_simple, solve_ml_simple])
def test_inverts_dn_frequencies(solver):
    sample = EmpiricalSample.from_probs(normalize(FIVE, SIMPLE, [0.0, 1.0]).probs)
    rep = solver(FIVE, SIMPLE, sample)
    assert rep.converged
    np.testing.assert_allclose(rep.lambda_hat, [0.0, 1.0], atol=1e-8)
    assert rep.residual_norm <= rep.tol
    assert _nonincreasing(rep.trace)


@pytest.mark.parametrize("solver", [solve_me_simple, solve_ml_simple])
def test_uniform_sample_gives_zero_lambda(solver):
    rep = solver(FIVE, SIMPLE, EmpiricalSample(np.full(5, 0.2)))
    np.testing.assert_allclose(rep.lambda_hat, 0.0, atol=1e-12)
    assert rep.entropy == pytest.approx(math.log(5), abs=1e-12)


def test_moment_system_is_satisfied():
    r = EmpiricalSample([0.1, 0.15, 0.3, 0.25, 0.2])
    rep = solve_me_simple(FIVE, SIMPLE, r)
    lam1, lam2 = rep.lambda_hat
    x = FIVE.points
    p = np.exp(-lam1 * x - lam2 * x ** 2)
    p /= p.sum()
    assert p @ x == pytest.approx(r.freq @ x, abs=1e-10)
    assert p @ x ** 2 == pytest.approx(r.freq @ x ** 2, abs=1e-10)


@pytest.mark.parametrize("solver", [solve_me_simple, solve_ml_simple])
def test_two_point_closed_form(solver):
    rep = solver(SupportGrid([0.0, 1.0]), PotentialSet.parse(["x"]), EmpiricalSample([0.75, 0.25]))
    assert rep.lambda_hat[0] == pytest.approx(math.log(3), abs=1e-10)


def test_identity_and_entropy_relation():
    rng = np.random.default_rng(5)
    for _ in range(50):
        m = int(rng.integers(5, 30))
        s = SupportGrid(np.sort(rng.choice(np.linspace(0.1, 5, 200), m, replace=False)))
        pots = PotentialSet.parse(["x", "ln(x)"])
        sample = EmpiricalSample(rng.dirichlet(np.ones(m)))
        me, ml = solve_me_simple(s, pots, sample), solve_ml_simple(s, pots, sample)
        assert np.max(np.abs(me.lambda_hat - ml.lambda_hat)) <= 1e-8
        assert me.entropy == pytest.approx(-me.log_likelihood, abs=1e-10)


def test_ml_simple_is_global_maximum():
    rng = np.random.default_rng(6)
    sample = EmpiricalSample(rng.dirichlet(np.ones(5)))
    rep = solve_ml_simple(FIVE, SIMPLE, sample)
    for _ in range(100):
        lam = rep.lambda_hat + rng.normal(0, 0.1, 2)
        assert log_likelihood(normalize(FIVE, SIMPLE, lam), sample) <= rep.log_likelihood


def test_dual_convexity():
    rng = np.random.default_rng(7)
    u = np.stack([FIVE.points, FIVE.points ** 2], axis=1)
    target = EmpiricalSample(rng.dirichlet(np.ones(5))).freq @ u

    def D(lam):
        return logsumexp(-u @ lam) + lam @ target

    for _ in range(1000):
        a, b = rng.normal(0, 3, 2), rng.normal(0, 3, 2)
        t = rng.uniform()
        assert D((1 - t) * a + t * b) <= (1 - t) * D(a) + t * D(b) + 1e-10


def test_point_mass_is_infeasible():
    with pytest.raises(InfeasibleMoments):
        solve_me_simple(FIVE, SIMPLE, EmpiricalSample([0, 0, 1, 0, 0]))


@pytest.mark.parametrize("solver", [solve_me_simple, solve_ml_simple])
def test_face_of_moment_set_is_infeasible(solver):
    # mean 0.5 and second moment 0.5 sit on the segment between (0, 0) and (1, 1)
    with pytest.raises(InfeasibleMoments) as info:
        solver(FIVE, SIMPLE, EmpiricalSample([0, 0, 0.5, 0.5, 0]))
    assert info.value.exit_code == 4
    assert info.value.report is not None and info.value.report.trace


def test_wrong_task():
    general = PotentialSet.parse(["(x - a1)^2"], 1)
    sample = EmpiricalSample(np.full(5, 0.2))
    with pytest.raises(WrongTask, match="solve_me_simple"):
        solve_minimax_ent(FIVE, SIMPLE, sample)
    with pytest.raises(WrongTask):
        solve_me_simple(FIVE, general, sample)
    with pytest.raises(WrongTask):
        solve_ml_general(FIVE, SIMPLE, sample)


def test_ml_general_dn(dn_general):
    support, pots, sample = dn_general
    rep = solve_ml_general(support, pots, sample)
    np.testing.assert_allclose(rep.lambda_hat, [0.7], atol=1e-6)
    np.testing.assert_allclose(rep.alpha_hat, [0.3], atol=1e-6)
    assert rep.residual_norm <= 1e-10
    model = normalize(support, pots, rep.lambda_hat, rep.alpha_hat)
    assert np.max(np.abs(compact_residuals(model, sample) - foc_residuals(model, sample))) <= 1e-12
    simple = solve_ml_simple(support, SIMPLE, sample)
    mapped = dnorm_general_to_simple(rep.lambda_hat[0], rep.alpha_hat[0])
    np.testing.assert_allclose(mapped, simple.lambda_hat, atol=1e-6)
    assert _nonincreasing(rep.trace)
    assert len(rep.candidates) == SolverConfig().n_starts


def test_minimax_matches_ml_on_dn(dn_general):
    support, pots, sample = dn_general
    mm = solve_minimax_ent(support, pots, sample)
    np.testing.assert_allclose(mm.alpha_hat, [0.3], atol=1e-6)
    np.testing.assert_allclose(mm.lambda_hat, [0.7], atol=1e-6)
    assert mm.residual_norm <= SolverConfig().outer_tol
    assert _nonincreasing(mm.trace)


def test_foc_residuals_definition():
    rng = np.random.default_rng(8)
    s = SupportGrid(np.linspace(-3, 3, 13))
    pots = PotentialSet.parse(["(x - a1)^2", "ln(1 + exp(x - a2))"], 2)
    sample = EmpiricalSample(rng.dirichlet(np.ones(13)))
    zero = normalize(s, pots, [0.0, 0.0], rng.normal(size=2))
    np.testing.assert_array_equal(foc_residuals(zero, sample)[2:], 0.0)
    for _ in range(5):
        model = normalize(s, pots, rng.uniform(0.1, 1, 2), rng.normal(size=2))
        res = foc_residuals(model, sample)
        np.testing.assert_allclose(res[:2], moment_gap(model, sample), atol=1e-15)

        def loglik(theta):
            return log_likelihood(normalize(s, pots, theta[:2], theta[2:]), sample)

        theta = np.concatenate([model.lam, model.alpha])
        g = fd.central_gradient(loglik, theta, 1e-5)
        # residuals are the gradient of -l
        np.testing.assert_allclose(res, -g, atol=1e-6)


def test_multistart_is_deterministic(dn_general):
    support, pots, sample = dn_general
    cfg = SolverConfig(seed=3)
    a = solve_ml_general(support, pots, sample, cfg)
    b = solve_ml_general(support, pots, sample, cfg)
    assert a.to_dict() == b.to_dict()


@pytest.mark.parametrize("solver", [solve_ml_general, solve_minimax_ent])
def test_runaway_alpha_is_nonconvergence(dn_general, solver):
    support, pots, sample = dn_general
    cfg = SolverConfig(alpha_radius=0.05, alpha_init=[0.0], n_starts=1)
    with pytest.raises(NonConvergence):
        solver(support, pots, sample, cfg)


def test_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(tol=0.0)
    with pytest.raises(ValueError):
        SolverConfig(inner_tol=1e-6, outer_tol=1e-8)
