"""Maximum Entropy, Maximum Likelihood and MiniMax Entropy solvers.

The simple-form ME and ML solvers are deliberately separate code paths:
ME runs damped Newton on the convex dual ``log_norm(lambda) + lambda'm(u)``
over raw arrays, ML runs a Levenberg-Marquardt ascent on the
log-likelihood through :class:`~entropic.model.ExponentialModel`.  Their
agreement is therefore a real cross-check.

General-form ML minimizes ``-l(lambda, alpha)`` jointly with a modified
Newton method from several seeded starts.  MiniMax Entropy is bilevel: an
inner ME solve for every ``alpha`` and an outer descent on the entropy of
the inner solution.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np
from scipy import linalg, optimize
from scipy.special import logsumexp

from . import fd
from .errors import (
    DimensionMismatch,
    DomainError,
    InfeasibleMoments,
    InnerInfeasible,
    NonConvergence,
    WrongTask,
)
from .model import (
    EmpiricalSample,
    ExponentialModel,
    PotentialSet,
    SupportGrid,
    entropy,
    log_likelihood,
    moment_gap,
    normalize,
)
from .potential import BinOp, Num, PotentialExpr

log = logging.getLogger(__name__)
EPS = np.finfo(float).eps


@dataclass
class SolverConfig:
    tol: float = 1e-10
    max_iter: int = 200
    armijo: float = 1e-4
    backtrack: float = 0.5
    min_step: float = 1e-12
    lm_damping: float = 1e-3
    inner_tol: float = 1e-12
    outer_tol: float = 1e-8
    n_starts: int = 8
    seed: int = 0
    start_spread: Optional[float] = None
    stagnation_window: int = 20
    fd_rel_tol: float = 1e-4
    lambda_init: Optional[list] = None
    alpha_init: Optional[list] = None
    alpha_bounds: Optional[list] = None
    alpha_radius: Optional[float] = None  # |alpha| beyond this counts as a runaway start

    def __post_init__(self):
        if not self.tol > 0 or not self.inner_tol > 0 or not self.outer_tol > 0:
            raise ValueError("tolerances must be positive")
        if self.inner_tol > self.outer_tol:
            raise ValueError("inner_tol must not exceed outer_tol")
        if self.max_iter < 1 or self.n_starts < 1:
            raise ValueError("max_iter and n_starts must be at least 1")


@dataclass
class TraceRow:
    objective: float  # the minimized objective
    step_norm: float
    residual_norm: float
    fd_rel_err: Optional[float] = None


@dataclass
class SolveReport:
    task: str
    lambda_hat: np.ndarray
    alpha_hat: np.ndarray
    foc_residual: np.ndarray
    entropy: float
    log_likelihood: float
    iterations: int
    converged: bool
    tol: float
    trace: list = field(default_factory=list)
    candidates: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    notes: dict = field(default_factory=dict)

    @property
    def residual_norm(self) -> float:
        return float(np.max(np.abs(self.foc_residual), initial=0.0))

    def to_dict(self) -> dict:
        out = {
            "task": self.task,
            "lambda_hat": [float(v) for v in self.lambda_hat],
            "alpha_hat": [float(v) for v in self.alpha_hat],
            "foc_residual": [float(v) for v in self.foc_residual],
            "residual_norm": self.residual_norm,
            "entropy": float(self.entropy),
            "log_likelihood": float(self.log_likelihood),
            "iterations": int(self.iterations),
            "converged": bool(self.converged),
            "tol": float(self.tol),
            "trace": [asdict(r) for r in self.trace],
            "candidates": self.candidates,
            "warnings": list(self.warnings),
        }
        if self.notes:
            out["notes"] = self.notes
        return out


def _require(support, potentials, sample):
    if sample.freq.shape[0] != support.m:
        raise DimensionMismatch(f"sample has {sample.freq.shape[0]} frequencies for {support.m} support points")


def _check_moment_hull(u, target):
    """Reject sample moments on or outside the range of each potential."""
    for j in range(u.shape[1]):
        lo, hi = u[:, j].min(), u[:, j].max()
        scale = max(abs(lo), abs(hi), 1.0)
        if hi - lo <= 1e-14 * scale:
            continue
        if target[j] <= lo + 1e-12 * scale or target[j] >= hi - 1e-12 * scale:
            raise InfeasibleMoments(
                f"sample moment {float(target[j])!r} of potential {j + 1} is not inside ({float(lo)!r}, {float(hi)!r})"
            )


def _check_interior(u, p, tol, report):
    """Reject a 'converged' fit that only approaches a face of the moment set.

    There the multipliers run off to infinity while the gap shrinks
    geometrically, so the residual can dip under tol at a finite lambda.
    The tell is a potential covariance whose smallest correlation-scale
    eigenvalue is no larger than the residual scale itself.
    """
    if u.shape[1] < 2:
        return
    c = u - p @ u
    C = (c.T * p) @ c
    d = np.sqrt(np.diag(C))
    keep = d > 0
    if keep.sum() < 2:
        return
    R = C[np.ix_(keep, keep)] / np.outer(d[keep], d[keep])
    smallest = float(np.linalg.eigvalsh(R)[0])
    if smallest <= 1e3 * tol:
        raise InfeasibleMoments(
            f"moments lie on the boundary of the achievable set (potential correlation eigenvalue "
            f"{smallest:.3e}; multipliers diverge)", report)


def _solve_sym(A, b):
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", linalg.LinAlgWarning)
            x = linalg.solve(A, b, assume_a="sym")
        if np.all(np.isfinite(x)):
            return x
    except (linalg.LinAlgError, ValueError):
        pass
    return np.linalg.lstsq(A, b, rcond=None)[0]


def _modified_newton_step(H, g):
    """Newton step on a Hessian shifted until it is positive definite."""
    n = g.shape[0]
    scale = max(np.max(np.abs(H)), 1e-300)
    tau = 0.0
    for _ in range(80):
        try:
            c = linalg.cho_factor(H + tau * np.eye(n))
            step = -linalg.cho_solve(c, g)
            if np.all(np.isfinite(step)):
                return step, tau
        except (linalg.LinAlgError, ValueError):
            pass
        tau = max(2.0 * tau, 1e-10 * scale)
    return -g, np.inf


def _flat(new, old):
    """True when two objective values differ only by rounding."""
    return bool(np.isfinite(new)) and abs(new - old) <= 64 * EPS * max(1.0, abs(old))


def _stagnated(history, window):
    return len(history) > window and history[-1] > 0.1 * history[-1 - window]


# ---------------------------------------------------------------------------
# Maximum Entropy via the convex dual

@dataclass
class _DualResult:
    lam: np.ndarray
    probs: np.ndarray
    log_norm: float
    iterations: int
    trace: list
    status: str

    @property
    def residual(self):
        return self.trace[-1].residual_norm


def _dual_newton(u, log_w, target, lam0, tol, cfg: SolverConfig, polish=2) -> _DualResult:
    """Minimize D(lam) = logsumexp(log_w - u lam) + lam'target.

    grad D = target - E_p[u] (the moment gap), hess D = Cov_p(u).
    """
    lam = np.array(lam0, dtype=float)
    # moments of size |u| cannot be matched closer than a few ulps of |u|
    tol = max(tol, 64 * EPS * max(1.0, float(np.max(np.abs(u)))))

    def dual(l):
        logits = log_w - u @ l
        lz = float(logsumexp(logits))
        return lz + float(l @ target), np.exp(logits - lz), lz

    D, p, lz = dual(lam)
    trace, history = [], []
    status = "max_iter"
    step_norm = 0.0
    polishing = 0
    it = 0
    while True:
        mean = p @ u
        grad = target - mean
        res = float(np.max(np.abs(grad)))
        trace.append(TraceRow(D, step_norm, res))
        history.append(res)
        if res <= tol:
            status = "converged"
            if polishing >= polish:
                break
        if it >= cfg.max_iter:
            break
        if status != "converged" and _stagnated(history, cfg.stagnation_window):
            status = "stagnated"
            break
        centered = u - mean
        cov = centered.T @ (p[:, None] * centered)
        step = _solve_sym(cov, -grad)
        if status == "converged":
            polishing += 1
            D_new, p_new, lz_new = dual(lam + step)
            if np.max(np.abs(target - p_new @ u)) >= res:
                break
            lam, D, p, lz = lam + step, min(D, D_new), p_new, lz_new
            step_norm = float(np.linalg.norm(step))
            it += 1
            continue
        slope = float(grad @ step)
        t = 1.0
        while t >= cfg.min_step:
            D_new, p_new, lz_new = dual(lam + t * step)
            if np.isfinite(D_new) and D_new <= D + cfg.armijo * t * slope:
                break
            # Near the optimum D is flat to rounding; judge by the moment gap instead.
            if _flat(D_new, D) and np.max(np.abs(target - p_new @ u)) < res:
                break
            t *= cfg.backtrack
        else:
            status = "stalled"
            break
        lam = lam + t * step
        D, p, lz = D_new, p_new, lz_new
        step_norm = float(t * np.linalg.norm(step))
        it += 1
    return _DualResult(lam, p, lz, it, trace, status)


def _me_at_alpha(support, potentials, sample, alpha, lam0, tol, cfg) -> _DualResult:
    u = potentials.values(support.points, alpha)
    target = sample.freq @ u
    lam0 = np.zeros(potentials.J) if lam0 is None else lam0
    return _dual_newton(u, np.log(support.weights), target, lam0, tol, cfg)


def _finish(task, support, potentials, sample, lam, alpha, iterations, converged, tol, trace, **extra):
    model = normalize(support, potentials, lam, alpha)
    residual = foc_residuals(model, sample)
    return SolveReport(
        task=task,
        lambda_hat=np.array(model.lam),
        alpha_hat=np.array(model.alpha),
        foc_residual=residual,
        entropy=entropy(model),
        log_likelihood=log_likelihood(model, sample),
        iterations=iterations,
        converged=converged,
        tol=tol,
        trace=trace,
        **extra,
    )


def _alpha_radius(support, cfg):
    if cfg.alpha_radius is not None:
        return float(cfg.alpha_radius)
    pts = support.points
    scale = max(1.0, float(np.max(np.abs(pts))))
    if pts.size > 1:
        scale = max(scale, float(1.0 / np.min(np.diff(pts))))
    return 10.0 * scale


def _raise_for_status(status, report, what):
    if status in ("stagnated", "stalled"):
        raise InfeasibleMoments(
            f"{what}: {status} at residual {report.residual_norm:.3e}; sample moments look unachievable",
            report,
        )
    raise NonConvergence(f"{what}: no convergence in {report.iterations} iterations "
                         f"(residual {report.residual_norm:.3e})", report)


def solve_me(support, potentials, sample, alpha=None, config: SolverConfig = None) -> SolveReport:
    """Most entropic distribution matching the u-moments, for fixed alpha."""
    cfg = config or SolverConfig()
    _require(support, potentials, sample)
    alpha = np.zeros(0) if alpha is None else np.asarray(alpha, dtype=float)
    u = potentials.values(support.points, alpha)
    target = sample.freq @ u
    _check_moment_hull(u, target)
    lam0 = np.zeros(potentials.J) if cfg.lambda_init is None else np.asarray(cfg.lambda_init, dtype=float)
    res = _dual_newton(u, np.log(support.weights), target, lam0, cfg.tol, cfg)
    report = _finish("me", support, potentials, sample, res.lam, alpha, res.iterations,
                     res.status == "converged", cfg.tol, res.trace)
    if res.status != "converged":
        _raise_for_status(res.status, report, "ME dual Newton")
    _check_interior(u, res.probs, cfg.tol, report)
    return report


def solve_me_simple(support: SupportGrid, potentials: PotentialSet, sample: EmpiricalSample,
                    config: SolverConfig = None) -> SolveReport:
    if not potentials.is_simple:
        raise WrongTask("solve_me_simple needs simple potentials (T = 0); use solve_minimax_ent")
    return solve_me(support, potentials, sample, None, config)


# ---------------------------------------------------------------------------
# Maximum Likelihood, simple form

def solve_ml_simple(support: SupportGrid, potentials: PotentialSet, sample: EmpiricalSample,
                    config: SolverConfig = None) -> SolveReport:
    """Levenberg-Marquardt ascent on l(lambda) = -log_norm - lambda'm(u)."""
    cfg = config or SolverConfig()
    if not potentials.is_simple:
        raise WrongTask("solve_ml_simple needs simple potentials (T = 0); use solve_ml_general")
    _require(support, potentials, sample)
    sample_means = sample.freq @ potentials.values(support.points)
    _check_moment_hull(potentials.values(support.points), sample_means)

    def state(lam):
        model = normalize(support, potentials, lam)
        p = model.probs
        grad = -moment_gap(model, sample)
        centered = model.u - p @ model.u
        hess = -(centered.T * p) @ centered
        return model, log_likelihood(model, sample), grad, hess

    lam = np.zeros(potentials.J) if cfg.lambda_init is None else np.asarray(cfg.lambda_init, dtype=float)
    model, ll, grad, hess = state(lam)
    mu = cfg.lm_damping
    trace, history = [], []
    status = "max_iter"
    step_norm = 0.0
    polishing = 0
    it = 0
    while True:
        res = float(np.max(np.abs(grad)))
        trace.append(TraceRow(-ll, step_norm, res))
        history.append(res)
        if res <= cfg.tol:
            status = "converged"
            if polishing >= 2:
                break
        if it >= cfg.max_iter:
            break
        if status != "converged" and _stagnated(history, cfg.stagnation_window):
            status = "stagnated"
            break
        neg = -hess
        if status == "converged":
            polishing += 1
            step = _solve_sym(neg, grad)
            cand = state(model.lam + step)
            if np.max(np.abs(cand[2])) >= res:
                break
            model, ll, grad, hess = cand
            step_norm = float(np.linalg.norm(step))
            it += 1
            continue
        diag = np.maximum(np.diag(neg), 1e-300)
        while True:
            step = _solve_sym(neg + mu * np.diag(diag), grad)
            predicted = float(grad @ step + 0.5 * step @ hess @ step)
            cand = state(model.lam + step)
            gain = cand[1] - ll
            if predicted > 0 and gain >= 1e-4 * predicted:
                mu = mu / 3.0 if mu > 1e-12 else 0.0
                break
            if _flat(cand[1], ll) and np.max(np.abs(cand[2])) < res:
                break
            mu = max(4.0 * mu, 1e-8)
            if mu > 1e16:
                status = "stalled"
                break
        if status == "stalled":
            break
        model, ll, grad, hess = cand
        step_norm = float(np.linalg.norm(step))
        it += 1
    report = _finish("ml", support, potentials, sample, model.lam, None, it, status == "converged",
                     cfg.tol, trace)
    if status != "converged":
        _raise_for_status(status, report, "ML Levenberg-Marquardt")
    _check_interior(model.u, model.probs, cfg.tol, report)
    return report


# ---------------------------------------------------------------------------
# Joint (lambda, alpha) derivatives of the negative log-likelihood

@dataclass
class JointDerivatives:
    value: float
    grad: np.ndarray
    hess: Optional[np.ndarray]
    probs: np.ndarray


def neg_loglik_derivatives(support, potentials, freq, lam, alpha, hessian=True) -> JointDerivatives:
    """-l(lambda, alpha) with its gradient and Hessian over (lambda, alpha).

    With U = lambda'u and G its gradient over (lambda, alpha), the gradient is
    m(G) - mu(G) and the Hessian is Cov_p(G) + (m - mu)(d2U).
    """
    lam = np.asarray(lam, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    J, T = potentials.J, potentials.T
    jets = potentials.jets(support.points, alpha)
    U = jets.u @ lam
    logits = np.log(support.weights) - U
    lz = float(logsumexp(logits))
    p = np.exp(logits - lz)
    G = np.concatenate([jets.u, np.einsum("mjt,j->mt", jets.du, lam)], axis=1)
    value = lz + float(freq @ U)
    grad = freq @ G - p @ G
    hess = None
    if hessian:
        centered = G - p @ G
        hess = (centered.T * p) @ centered
        diff = freq - p
        S = np.zeros((J + T, J + T))
        cross = np.einsum("m,mjt->jt", diff, jets.du)
        S[:J, J:] = cross
        S[J:, :J] = cross.T
        S[J:, J:] = np.einsum("m,mjts,j->ts", diff, jets.d2u, lam)
        hess = hess + S
    return JointDerivatives(value, grad, hess, p)


def foc_residuals(model: ExponentialModel, sample: EmpiricalSample) -> np.ndarray:
    """Moment gaps m(u_j) - mu(u_j), then lambda'(m(du/da_t) - mu(du/da_t))."""
    gap = moment_gap(model, sample)
    if model.T == 0:
        return gap
    du = model.jets().du
    diff = sample.freq @ du.reshape(du.shape[0], -1) - model.probs @ du.reshape(du.shape[0], -1)
    return np.concatenate([gap, model.lam @ diff.reshape(model.J, model.T)])


def total_potential(model: ExponentialModel) -> PotentialExpr:
    """U(x, alpha) = sum_j lambda_j u_j(x, alpha) as a single expression."""
    ast = None
    for lam_j, expr in zip(model.lam, model.potentials.exprs):
        term = BinOp("*", Num(float(lam_j)), expr.ast)
        ast = term if ast is None else BinOp("+", ast, term)
    return PotentialExpr(ast, model.T)


def compact_residuals(model: ExponentialModel, sample: EmpiricalSample) -> np.ndarray:
    """m(dU/dtheta) - mu(dU/dtheta) over theta = (lambda, alpha).

    dU/dlambda_j is u_j itself; dU/dalpha_t comes from differentiating the
    total potential as one expression.
    """
    pts = model.support.points
    p = model.probs
    r = sample.freq
    lam_part = [r @ e.values(pts, model.alpha) - p @ e.values(pts, model.alpha) for e in model.potentials.exprs]
    if model.T == 0:
        return np.array(lam_part)
    dU = total_potential(model).jet(pts, model.alpha).d1
    return np.concatenate([lam_part, r @ dU - p @ dU])


# ---------------------------------------------------------------------------
# Maximum Likelihood, general form

def _clip(alpha, bounds):
    if bounds is None:
        return alpha
    lo = np.array([b[0] if b[0] is not None else -np.inf for b in bounds])
    hi = np.array([b[1] if b[1] is not None else np.inf for b in bounds])
    return np.clip(alpha, lo, hi)


def _evaluates(potentials, support, alpha):
    try:
        potentials.jets(support.points, alpha)
        return True
    except DomainError:
        return False


def start_points(support, potentials, cfg: SolverConfig) -> list:
    """Deterministic alpha starts: the base point, then seeded perturbations."""
    T = potentials.T
    if cfg.alpha_init is not None:
        base = np.asarray(cfg.alpha_init, dtype=float)
        if base.shape != (T,):
            raise DimensionMismatch(f"alpha_init has {base.size} entries, expected {T}")
    else:
        base = np.zeros(T)
        if not _evaluates(potentials, support, base):
            base = np.ones(T)
    base = _clip(base, cfg.alpha_bounds)
    rng = np.random.default_rng(cfg.seed)
    spread = cfg.start_spread
    if spread is None:
        spread = (support.points[-1] - support.points[0]) / 4.0
    starts = [base]
    for _ in range(cfg.n_starts - 1):
        starts.append(_clip(base + spread * rng.standard_normal(T), cfg.alpha_bounds))
    return starts


def _joint_newton(support, potentials, freq, theta0, cfg: SolverConfig):
    J = potentials.J

    def evaluate(theta, hessian=True):
        try:
            d = neg_loglik_derivatives(support, potentials, freq, theta[:J], theta[J:], hessian)
        except DomainError:
            return None
        if not np.isfinite(d.value):
            return None
        return d

    theta = np.array(theta0, dtype=float)
    radius = _alpha_radius(support, cfg)
    d = evaluate(theta)
    if d is None:
        return theta, None, [], 0, "domain"
    trace = []
    status = "max_iter"
    step_norm = 0.0
    polishing = 0
    it = 0
    while True:
        res = float(np.max(np.abs(d.grad)))
        trace.append(TraceRow(d.value, step_norm, res))
        if res <= cfg.tol:
            status = "converged"
            if polishing >= 2:
                break
        if it >= cfg.max_iter:
            break
        step, _ = _modified_newton_step(d.hess, d.grad)
        if status == "converged":
            polishing += 1
            new = evaluate(_project(theta + step, J, cfg))
            if new is None or np.max(np.abs(new.grad)) >= res:
                break
            theta, d = _project(theta + step, J, cfg), new
            step_norm = float(np.linalg.norm(step))
            it += 1
            continue
        slope = float(d.grad @ step)
        t = 1.0
        while t >= cfg.min_step:
            trial = _project(theta + t * step, J, cfg)
            new = evaluate(trial)
            if new is not None and new.value <= d.value + cfg.armijo * float(d.grad @ (trial - theta)):
                break
            if new is not None and _flat(new.value, d.value) and np.max(np.abs(new.grad)) < res:
                break
            t *= cfg.backtrack
        else:
            status = "stalled" if status != "converged" else status
            break
        step_norm = float(np.linalg.norm(trial - theta))
        theta, d = trial, new
        it += 1
        if np.max(np.abs(theta[J:]), initial=0.0) > radius:
            status = "diverged"
            break
        if slope >= 0 and step_norm == 0.0:
            status = "stalled"
            break
    return theta, d, trace, it, status


def _project(theta, J, cfg):
    if cfg.alpha_bounds is None:
        return theta
    out = theta.copy()
    out[J:] = _clip(theta[J:], cfg.alpha_bounds)
    return out


def _quasi_newton(support, potentials, freq, theta0, cfg: SolverConfig):
    """Secant-updated fallback when the analytic Hessian fails its FD audit."""
    J = potentials.J
    trace = []

    def fun(theta):
        try:
            d = neg_loglik_derivatives(support, potentials, freq, theta[:J], theta[J:], hessian=False)
        except DomainError:
            return np.inf, np.zeros_like(theta)
        trace.append(TraceRow(d.value, 0.0, float(np.max(np.abs(d.grad)))))
        return d.value, d.grad

    bounds = None
    if cfg.alpha_bounds is not None:
        bounds = [(None, None)] * J + [tuple(b) for b in cfg.alpha_bounds]
    res = optimize.minimize(fun, theta0, jac=True, method="L-BFGS-B" if bounds else "BFGS", bounds=bounds,
                            options={"gtol": cfg.tol, "maxiter": 20 * cfg.max_iter})
    d = neg_loglik_derivatives(support, potentials, freq, res.x[:J], res.x[J:], hessian=False)
    status = "converged" if np.max(np.abs(d.grad)) <= cfg.tol else "max_iter"
    return res.x, d, trace, int(res.nit), status


def hessian_passes_fd(support, potentials, freq, lam, alpha, rel_tol=1e-4) -> float:
    """Relative error of the analytic joint Hessian against FD of the gradient."""
    J = potentials.J
    theta = np.concatenate([lam, alpha])

    def grad(t):
        return neg_loglik_derivatives(support, potentials, freq, t[:J], t[J:], hessian=False).grad

    analytic = neg_loglik_derivatives(support, potentials, freq, lam, alpha).hess
    return fd.fd_check(grad, theta, analytic, kind="jacobian", floor=1e-8)


def _profile_lambda(support, potentials, sample, alpha, cfg):
    try:
        res = _me_at_alpha(support, potentials, sample, alpha, None, cfg.tol, cfg)
        if res.status == "converged":
            return res.lam
    except DomainError:
        pass
    return np.zeros(potentials.J)


def _pick(candidates, key, tol):
    good = [c for c in candidates if c["converged"]]
    if not good:
        return None, False
    values = [key(c) for c in good]
    lowest = min(values)
    # ties within tol go to the earliest start, not to rounding noise
    best = next(c for c, v in zip(good, values) if v <= lowest + tol)
    return best, (max(values) - lowest) > tol


def solve_ml_general(support: SupportGrid, potentials: PotentialSet, sample: EmpiricalSample,
                     config: SolverConfig = None) -> SolveReport:
    cfg = config or SolverConfig()
    if potentials.is_simple:
        raise WrongTask("solve_ml_general needs general potentials (T >= 1); use solve_ml_simple")
    _require(support, potentials, sample)
    J = potentials.J
    freq = sample.freq
    candidates, runs = [], []
    hess_ok = None
    for k, alpha0 in enumerate(start_points(support, potentials, cfg)):
        if not _evaluates(potentials, support, alpha0):
            candidates.append({"start": k, "alpha_start": alpha0.tolist(), "converged": False,
                               "status": "domain"})
            runs.append(None)
            continue
        if k == 0 and cfg.lambda_init is not None:
            lam0 = np.asarray(cfg.lambda_init, dtype=float)
        else:
            lam0 = _profile_lambda(support, potentials, sample, alpha0, cfg)
        if hess_ok is None:
            err = hessian_passes_fd(support, potentials, freq, lam0, alpha0)
            hess_ok = err <= cfg.fd_rel_tol
            if not hess_ok:
                log.warning("analytic Hessian disagrees with FD (rel err %.2e); using quasi-Newton", err)
        method = _joint_newton if hess_ok else _quasi_newton
        theta, d, trace, it, status = method(support, potentials, freq, np.concatenate([lam0, alpha0]), cfg)
        if d is None:
            candidates.append({"start": k, "alpha_start": alpha0.tolist(), "converged": False,
                               "status": status})
            runs.append(None)
            continue
        candidates.append({
            "start": k,
            "alpha_start": alpha0.tolist(),
            "lambda_hat": theta[:J].tolist(),
            "alpha_hat": theta[J:].tolist(),
            "log_likelihood": -d.value,
            "residual_norm": float(np.max(np.abs(d.grad))),
            "iterations": it,
            "converged": status == "converged",
            "status": status,
        })
        runs.append((theta, trace, it, status))

    best, multiple = _pick(candidates, lambda c: -c["log_likelihood"], cfg.tol)
    warnings = []
    if multiple:
        warnings.append("MultipleCriticalPoints: starts converged to FOC points with different likelihoods")
        log.warning(warnings[-1])
    notes = {"hessian": "analytic" if hess_ok else "quasi-newton"}
    if best is None:
        tried = [(c["residual_norm"], c["start"]) for c in candidates if "residual_norm" in c]
        if not tried:
            raise NonConvergence("general ML: no start could be evaluated")
        k = min(tried)[1]
        theta, trace, it, status = runs[k]
        report = _finish("ml_general", support, potentials, sample, theta[:J], theta[J:], it, False,
                         cfg.tol, trace, candidates=candidates, warnings=warnings, notes=notes)
        raise NonConvergence("general ML: no start converged", report)
    theta, trace, it, status = runs[best["start"]]
    notes["best_start"] = best["start"]
    return _finish("ml_general", support, potentials, sample, theta[:J], theta[J:], it, True, cfg.tol, trace,
                   candidates=candidates, warnings=warnings, notes=notes)


# ---------------------------------------------------------------------------
# MiniMax Entropy

@dataclass
class InnerSolution:
    alpha: np.ndarray
    lam: np.ndarray
    probs: np.ndarray
    entropy: float
    gap: np.ndarray


def inner_me(support, potentials, sample, alpha, lam0=None, config: SolverConfig = None) -> InnerSolution:
    """Most entropic p*(alpha) with its multipliers lambda*(alpha)."""
    cfg = config or SolverConfig()
    alpha = np.asarray(alpha, dtype=float)
    try:
        u = potentials.values(support.points, alpha)
    except DomainError as exc:
        raise InnerInfeasible(f"potentials undefined at alpha={alpha.tolist()}: {exc}") from exc
    target = sample.freq @ u
    try:
        _check_moment_hull(u, target)
    except InfeasibleMoments as exc:
        raise InnerInfeasible(str(exc)) from exc
    log_w = np.log(support.weights)
    lam0 = np.zeros(potentials.J) if lam0 is None else np.asarray(lam0, dtype=float)
    res = _dual_newton(u, log_w, target, lam0, cfg.inner_tol, cfg)
    if res.status != "converged" and lam0.any():
        res = _dual_newton(u, log_w, target, np.zeros(potentials.J), cfg.inner_tol, cfg)
    if res.status != "converged":
        # The floor of attainable accuracy may sit just above inner_tol.
        if not (res.status == "stalled" and res.residual <= 100 * cfg.inner_tol):
            raise InnerInfeasible(f"inner ME solve {res.status} at alpha={alpha.tolist()} "
                                  f"(residual {res.residual:.3e})")
    p = res.probs
    log_density = (log_w - u @ res.lam) - res.log_norm - log_w
    H = float(-(p @ log_density))
    return InnerSolution(alpha, res.lam, p, H, target - p @ u)


def envelope_gradient(support, potentials, sample, inner: InnerSolution) -> np.ndarray:
    """dH(p*(alpha))/dalpha = lambda*'(m(du/dalpha) - mu(du/dalpha))."""
    du = potentials.jets(support.points, inner.alpha).du
    diff = np.einsum("m,mjt->jt", sample.freq - inner.probs, du)
    return inner.lam @ diff


def profile_hessian(support, potentials, sample, inner: InnerSolution) -> np.ndarray:
    """Second derivative of the inner-optimal entropy with respect to alpha."""
    J = potentials.J
    H = neg_loglik_derivatives(support, potentials, sample.freq, inner.lam, inner.alpha).hess
    Hll, Hla, Haa = H[:J, :J], H[:J, J:], H[J:, J:]
    return Haa - Hla.T @ _solve_sym(Hll, Hla)


def profile_entropy(support, potentials, sample, alpha, lam0=None, config=None) -> float:
    return inner_me(support, potentials, sample, alpha, lam0, config).entropy


def _fd_outer_gradient(support, potentials, sample, inner, cfg):
    alpha = inner.alpha
    g = np.empty(alpha.size)
    for t in range(alpha.size):
        h = 1e-4 * max(1.0, abs(alpha[t]))
        e = np.zeros(alpha.size)
        e[t] = h
        up = inner_me(support, potentials, sample, alpha + e, inner.lam, cfg).entropy
        down = inner_me(support, potentials, sample, alpha - e, inner.lam, cfg).entropy
        g[t] = (up - down) / (2 * h)
    return g


def _outer_descent(support, potentials, sample, alpha0, cfg: SolverConfig):
    inner = inner_me(support, potentials, sample, alpha0, None, cfg)
    trace = []
    status = "max_iter"
    step_norm = 0.0
    span = float(support.points[-1] - support.points[0])
    radius = _alpha_radius(support, cfg)
    fallbacks = 0
    polishing = 0
    it = 0
    while True:
        g = envelope_gradient(support, potentials, sample, inner)
        try:
            g_fd = _fd_outer_gradient(support, potentials, sample, inner, cfg)
            err = fd.rel_err(g, g_fd, floor=1.0)
        except InnerInfeasible:
            g_fd, err = None, None
        if err is not None and err > cfg.fd_rel_tol:
            fallbacks += 1
            log.warning("envelope gradient disagrees with FD (rel err %.2e); using FD gradient", err)
            g = g_fd
        res = float(np.max(np.abs(g)))
        trace.append(TraceRow(inner.entropy, step_norm, res, err))
        if res <= cfg.outer_tol:
            status = "converged"
            if polishing >= 1:
                break
        if it >= cfg.max_iter:
            break
        step, _ = _modified_newton_step(profile_hessian(support, potentials, sample, inner), g)
        # where the profile is concave the shifted Newton step can be huge; keep trials near the support
        length = float(np.linalg.norm(step))
        if length > span:
            step *= span / length
        if status == "converged":
            polishing += 1
            try:
                cand = inner_me(support, potentials, sample, _clip(inner.alpha + step, cfg.alpha_bounds),
                                inner.lam, cfg)
            except InnerInfeasible:
                break
            g_new = envelope_gradient(support, potentials, sample, cand)
            if np.max(np.abs(g_new)) >= res:
                break
            step_norm = float(np.linalg.norm(cand.alpha - inner.alpha))
            inner = cand
            it += 1
            continue
        t = 1.0
        accepted = None
        while t >= cfg.min_step:
            trial = _clip(inner.alpha + t * step, cfg.alpha_bounds)
            try:
                cand = inner_me(support, potentials, sample, trial, inner.lam, cfg)
            except InnerInfeasible:
                t *= cfg.backtrack
                continue
            if cand.entropy <= inner.entropy + cfg.armijo * float(g @ (trial - inner.alpha)):
                accepted = cand
                break
            if (_flat(cand.entropy, inner.entropy)
                    and np.max(np.abs(envelope_gradient(support, potentials, sample, cand))) < res):
                accepted = cand
                break
            t *= cfg.backtrack
        if accepted is None:
            status = "stalled"
            break
        step_norm = float(np.linalg.norm(accepted.alpha - inner.alpha))
        inner = accepted
        it += 1
        if np.max(np.abs(inner.alpha), initial=0.0) > radius:
            status = "diverged"
            break
    return inner, trace, it, status, fallbacks


def solve_minimax_ent(support: SupportGrid, potentials: PotentialSet, sample: EmpiricalSample,
                      config: SolverConfig = None) -> SolveReport:
    """Among the most entropic p*(alpha), the one with the smallest entropy."""
    cfg = config or SolverConfig()
    if potentials.is_simple:
        raise WrongTask("MiniMax Entropy with simple potentials is the plain ME task; use solve_me_simple")
    _require(support, potentials, sample)
    J = potentials.J
    candidates, runs = [], []
    for k, alpha0 in enumerate(start_points(support, potentials, cfg)):
        try:
            inner, trace, it, status, fallbacks = _outer_descent(support, potentials, sample, alpha0, cfg)
        except InnerInfeasible as exc:
            candidates.append({"start": k, "alpha_start": alpha0.tolist(), "converged": False,
                               "status": f"infeasible: {exc}"})
            runs.append(None)
            continue
        candidates.append({
            "start": k,
            "alpha_start": alpha0.tolist(),
            "lambda_hat": inner.lam.tolist(),
            "alpha_hat": inner.alpha.tolist(),
            "entropy": inner.entropy,
            "outer_residual": trace[-1].residual_norm,
            "iterations": it,
            "fd_fallbacks": fallbacks,
            "converged": status == "converged",
            "status": status,
        })
        runs.append((inner, trace, it, status))

    best, multiple = _pick(candidates, lambda c: c["entropy"], cfg.outer_tol)
    warnings = []
    if multiple:
        warnings.append("MultipleCriticalPoints: outer starts converged to stationary points with different entropy")
        log.warning(warnings[-1])
    if best is None:
        tried = [(c["outer_residual"], c["start"]) for c in candidates if "outer_residual" in c]
        if not tried:
            raise InnerInfeasible("MiniMax Entropy: every start had unachievable inner moments")
        k = min(tried)[1]
        inner, trace, it, status = runs[k]
        report = _finish("minimaxent", support, potentials, sample, inner.lam, inner.alpha, it, False,
                         cfg.outer_tol, trace, candidates=candidates, warnings=warnings)
        raise NonConvergence("MiniMax Entropy: no start converged", report)
    inner, trace, it, status = runs[best["start"]]
    report = _finish("minimaxent", support, potentials, sample, inner.lam, inner.alpha, it, True,
                     cfg.outer_tol, trace, candidates=candidates, warnings=warnings,
                     notes={"best_start": best["start"], "inner_tol": cfg.inner_tol})
    report.entropy = inner.entropy
    return report
