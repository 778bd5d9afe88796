"""Second-derivative diagnostics, finite-difference audits and entropy sweeps.

The general-form ML and ME Hessians are assembled block by block from
their closed-form expressions exactly as written, then compared against a
finite-difference Hessian of the true objective.  Blocks that disagree are
logged and replaced by the FD value in ``HessianReport.resolved``; the
as-written matrix is kept in ``HessianReport.matrix``.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import fd
from .errors import EntropicError, InnerInfeasible
from .fd import fd_check  # noqa: F401  (public re-export)
from .model import (
    EmpiricalSample,
    ExponentialModel,
    entropy,
    log_likelihood,
    normalize,
)
from .solvers import (
    SolverConfig,
    compact_residuals,
    envelope_gradient,
    foc_residuals,
    inner_me,
    neg_loglik_derivatives,
    solve_me_simple,
    solve_minimax_ent,
    solve_ml_general,
    solve_ml_simple,
)

log = logging.getLogger(__name__)

BLOCK_TOL = 1e-4


def _cov(p, A, B):
    return ((A - p @ A).T * p) @ (B - p @ B)


def classify(eigenvalues, scale=None) -> str:
    ev = np.asarray(eigenvalues, dtype=float)
    if ev.size == 0:
        return "semidefinite"
    scale = np.max(np.abs(ev)) if scale is None else scale
    thr = 1e-10 * scale
    if np.all(ev < -thr):
        return "negative-definite"
    if np.all(ev > thr):
        return "positive-definite"
    if np.any(ev < -thr) and np.any(ev > thr):
        return "indefinite"
    return "semidefinite"


@dataclass
class HessianReport:
    kind: str
    matrix: np.ndarray  # as written
    resolved: np.ndarray  # FD substituted in disagreeing blocks
    eigenvalues: np.ndarray
    definiteness: str
    fd_max_rel_err: Optional[float]
    fd_matrix: Optional[np.ndarray] = None
    blocks: list = field(default_factory=list)
    p_block: Optional[np.ndarray] = None
    notes: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "kind": self.kind,
            "matrix": np.asarray(self.matrix).tolist(),
            "resolved": np.asarray(self.resolved).tolist(),
            "eigenvalues": [float(v) for v in self.eigenvalues],
            "definiteness": self.definiteness,
            "fd_max_rel_err": None if self.fd_max_rel_err is None else float(self.fd_max_rel_err),
            "blocks": self.blocks,
        }
        if self.p_block is not None:
            out["p_block_diagonal"] = [float(v) for v in self.p_block]
        if self.notes:
            out["notes"] = self.notes
        return out


def _finish_report(kind, matrix, resolved, fd_matrix, blocks, p_block=None, notes=None):
    ev = np.linalg.eigvalsh(resolved) if resolved.size else np.zeros(0)
    definiteness = classify(ev)
    if p_block is not None and resolved.size == 0:
        definiteness = "negative-definite" if np.all(p_block < 0) else "indefinite"
    err = None if fd_matrix is None or matrix.size == 0 else fd.rel_err(matrix, fd_matrix)
    return HessianReport(kind, matrix, resolved, ev, definiteness, err, fd_matrix, blocks, p_block,
                         notes or {})


def _loglik_fn(model, sample):
    J = model.J

    def f(theta):
        return log_likelihood(model.with_params(theta[:J], theta[J:]), sample)

    return f


def _fd_reference(f, x):
    """Richardson-extrapolated FD Hessian from steps 1e-3 and 1e-4."""
    return fd.fd_estimates(f, x, steps=(1e-3, 1e-4), kind="hessian")[-1]


def _fd_reference_from_gradient(model, sample):
    """FD Jacobian of the log-likelihood gradient -foc_residuals.

    The gradient itself is checked against FD of l in the derivative audit;
    differencing it once instead of differencing l twice keeps roundoff
    near 1e-12 so small blocks can be adjudicated.
    """
    J = model.J

    def grad(theta):
        return -foc_residuals(model.with_params(theta[:J], theta[J:]), sample)

    theta = np.concatenate([model.lam, model.alpha])
    H = fd.fd_estimates(grad, theta, steps=(1e-3, 1e-4), kind="jacobian")[-1]
    return 0.5 * (H + H.T)


def _adjudicate(names_and_masks, printed, reference, exact=None):
    """Per-block discrepancy rows and the FD-resolved matrix."""
    resolved = printed.copy()
    scale = np.max(np.abs(reference), initial=0.0)
    rows = []
    for name, mask in names_and_masks:
        if not mask.any():
            rows.append({"block": name, "entries": 0, "rel_err": None, "agrees": None})
            continue
        ref = reference[mask]
        denom = max(np.max(np.abs(ref)), 1e-6 * scale, 1e-12)
        err = float(np.max(np.abs(printed[mask] - ref)) / denom)
        row = {"block": name, "entries": int(mask.sum()), "rel_err": err, "agrees": err <= BLOCK_TOL}
        if exact is not None:
            row["covariance_form_rel_err"] = float(np.max(np.abs(exact[mask] - ref)) / denom)
        if err > BLOCK_TOL:
            log.warning("Hessian block %s: as-written formula disagrees with FD (rel err %.3e); "
                        "using FD value", name, err)
            resolved[mask] = reference[mask]
        rows.append(row)
    return rows, resolved


# ---------------------------------------------------------------------------
# ML Hessians

def hessian_ml_simple(model: ExponentialModel, sample: EmpiricalSample, check_fd=True) -> HessianReport:
    """-Cov(u) under the model probabilities."""
    p = model.probs
    H = -_cov(p, model.u, model.u)
    H = 0.5 * (H + H.T)
    fd_matrix = None
    blocks = []
    if check_fd:
        f = _loglik_fn(model, sample)
        fd_matrix = _fd_reference(f, np.asarray(model.lam))
        blocks, _ = _adjudicate([("lambda_lambda", np.ones(H.shape, dtype=bool))], H, fd_matrix)
    return _finish_report("ml_simple", H, H, fd_matrix, blocks)


def _general_parts(model, sample):
    jets = model.jets()
    lam = np.asarray(model.lam)
    Ua = np.einsum("mjt,j->mt", jets.du, lam)
    Uaa = np.einsum("mjts,j->mts", jets.d2u, lam)
    return jets, lam, Ua, Uaa, model.probs, sample.freq


def ml_general_blocks(model: ExponentialModel, sample: EmpiricalSample) -> np.ndarray:
    """The five second-derivative blocks of l(lambda, alpha), as written.

    lambda_j^2 and lambda_j lambda_i:  -Var(u_j), -Cov(u_j, u_i)
    alpha_t^2:                          -(Var(U_t) + m(U_tt) - mu(U_tt))
    alpha_t alpha_s:                    -mu(U_t)mu(U_s) - sum_j lambda_j mu(du_jt U_ts) - m(U_ts) + mu(U_ts)
    lambda_j alpha_t:                   -lambda_j Cov(u_j, du_jt) - sum_{k!=j} lambda_k mu(u_j du_kt)
                                        - m(du_jt) + mu(du_jt)
    where U_t = dU/dalpha_t and U_ts = d2U/dalpha_t dalpha_s.
    """
    jets, lam, Ua, Uaa, p, r = _general_parts(model, sample)
    J, T = model.J, model.T
    u, du = jets.u, jets.du
    H = np.zeros((J + T, J + T))
    H[:J, :J] = -_cov(p, u, u)
    for t in range(T):
        for s in range(T):
            if t == s:
                var = _cov(p, Ua[:, [t]], Ua[:, [t]])[0, 0]
                H[J + t, J + t] = -(var + r @ Uaa[:, t, t] - p @ Uaa[:, t, t])
            else:
                cross = sum(lam[j] * (p @ (du[:, j, t] * Uaa[:, t, s])) for j in range(J))
                H[J + t, J + s] = (-(p @ Ua[:, t]) * (p @ Ua[:, s]) - cross
                                   - r @ Uaa[:, t, s] + p @ Uaa[:, t, s])
    for j in range(J):
        for t in range(T):
            v = -lam[j] * _cov(p, u[:, [j]], du[:, [j], t])[0, 0]
            v -= sum(lam[k] * (p @ (u[:, j] * du[:, k, t])) for k in range(J) if k != j)
            v += -(r @ du[:, j, t]) + p @ du[:, j, t]
            H[j, J + t] = H[J + t, j] = v
    return H


def _general_masks(J, T):
    n = J + T
    idx = np.arange(n)
    is_lam = idx < J
    diag = np.eye(n, dtype=bool)
    ll = np.outer(is_lam, is_lam)
    aa = np.outer(~is_lam, ~is_lam)
    return [
        ("lambda_diag", ll & diag),
        ("lambda_offdiag", ll & ~diag),
        ("alpha_diag", aa & diag),
        ("alpha_offdiag", aa & ~diag),
        ("lambda_alpha", np.outer(is_lam, ~is_lam) | np.outer(~is_lam, is_lam)),
    ]


def hessian_ml_general(model: ExponentialModel, sample: EmpiricalSample) -> HessianReport:
    H = ml_general_blocks(model, sample)
    fd_matrix = _fd_reference_from_gradient(model, sample)
    exact = -neg_loglik_derivatives(model.support, model.potentials, sample.freq, model.lam, model.alpha).hess
    blocks, resolved = _adjudicate(_general_masks(model.J, model.T), H, fd_matrix, exact)
    resolved = 0.5 * (resolved + resolved.T)
    return _finish_report("ml_general", H, resolved, fd_matrix, blocks)


# ---------------------------------------------------------------------------
# ME Hessian

def lagrangean(model: ExponentialModel, sample: EmpiricalSample) -> float:
    """H(p) + lambda'(m(u) - mu(u)) at the model's exponential-form p."""
    gap = sample.freq @ model.u - model.probs @ model.u
    return entropy(model) + float(model.lam @ gap)


def me_alpha_block(model: ExponentialModel, sample: EmpiricalSample) -> np.ndarray:
    """alpha-block of the ME Lagrangean second derivatives, as written.

    diagonal:     Var(U_t) + m(U_tt) - mu(U_tt)
    off-diagonal: m(U_ts) - mu(U_ts) + Cov(U_t, U_s)
    """
    T = model.T
    if T == 0:
        return np.zeros((0, 0))
    _, _, Ua, Uaa, p, r = _general_parts(model, sample)
    C = _cov(p, Ua, Ua)
    corr = np.einsum("m,mts->ts", r, Uaa) - np.einsum("m,mts->ts", p, Uaa)
    return C + corr


def hessian_me(model: ExponentialModel, sample: EmpiricalSample, check_fd=True) -> HessianReport:
    p = model.probs
    p_block = -1.0 / p
    A = me_alpha_block(model, sample)
    fd_matrix = None
    blocks = []
    notes = {}
    resolved = A
    if model.T and check_fd:
        def L(alpha):
            return lagrangean(model.with_params(alpha=alpha), sample)

        fd_matrix = _fd_reference(L, np.asarray(model.alpha))
        T = model.T
        masks = [("alpha_diag", np.eye(T, dtype=bool)), ("alpha_offdiag", ~np.eye(T, dtype=bool))]
        blocks, resolved = _adjudicate(masks, A, fd_matrix)
        err_same = fd.rel_err(A, fd_matrix)
        err_flip = fd.rel_err(-A, fd_matrix)
        if err_same <= BLOCK_TOL:
            notes["alpha_block_sign"] = "as written"
        elif err_flip <= BLOCK_TOL:
            notes["alpha_block_sign"] = "negated"
        else:
            notes["alpha_block_sign"] = "neither"
    return _finish_report("me", A, resolved, fd_matrix, blocks, p_block, notes)


# ---------------------------------------------------------------------------
# Entropy landscape

@dataclass
class SweepRow:
    alpha: np.ndarray
    lam: np.ndarray
    entropy: float
    loglik: float
    feasible: bool
    tv_uniform: float


@dataclass
class SweepTable:
    J: int
    T: int
    rows: list

    def column(self, name) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows], dtype=float)

    def alphas(self) -> np.ndarray:
        return np.array([r.alpha for r in self.rows])

    def header(self) -> list:
        return ([f"alpha{t + 1}" for t in range(self.T)] + [f"lambda{j + 1}" for j in range(self.J)]
                + ["entropy", "loglik", "feasible", "tv_uniform"])

    def to_csv(self, stream=None) -> str:
        buf = stream if stream is not None else io.StringIO()
        writer = csv.writer(buf, lineterminator="\r\n")
        writer.writerow(self.header())
        for r in self.rows:
            writer.writerow([repr(float(v)) for v in r.alpha] + [repr(float(v)) for v in r.lam]
                            + [repr(float(r.entropy)), repr(float(r.loglik)),
                               "true" if r.feasible else "false", repr(float(r.tv_uniform))])
        return buf.getvalue() if stream is None else ""


def entropy_sweep(support, potentials, sample, alpha_grid, config: SolverConfig = None) -> SweepTable:
    """One inner ME solve per grid point, emitted in grid order."""
    cfg = config or SolverConfig()
    grid = np.asarray(alpha_grid, dtype=float)
    if grid.ndim == 1:
        grid = grid[:, None]
    if grid.shape[1] != potentials.T:
        raise ValueError(f"alpha grid has {grid.shape[1]} columns, expected {potentials.T}")
    uniform = support.weights / support.weights.sum()
    rows = []
    lam = None
    for alpha in grid:
        try:
            sol = inner_me(support, potentials, sample, alpha, lam, cfg)
        except InnerInfeasible:
            nan = np.full(potentials.J, np.nan)
            rows.append(SweepRow(alpha.copy(), nan, np.nan, np.nan, False, np.nan))
            continue
        lam = sol.lam
        ll = log_likelihood(normalize(support, potentials, sol.lam, alpha), sample)
        tv = 0.5 * float(np.abs(sol.probs - uniform).sum())
        rows.append(SweepRow(alpha.copy(), sol.lam.copy(), sol.entropy, ll, True, tv))
    return SweepTable(potentials.J, potentials.T, rows)


# ---------------------------------------------------------------------------
# Bundled checks

def identity_check(support, potentials, sample, config: SolverConfig = None, lam_tol=1e-8) -> dict:
    """ME dual and direct ML on simple potentials must land on the same lambda."""
    cfg = config or SolverConfig()
    me = solve_me_simple(support, potentials, sample, cfg)
    ml = solve_ml_simple(support, potentials, sample, cfg)
    diff = float(np.max(np.abs(me.lambda_hat - ml.lambda_hat)))
    ok = diff <= lam_tol and me.residual_norm <= cfg.tol and ml.residual_norm <= cfg.tol
    return {"pass": bool(ok), "max_lambda_diff": diff, "me": me, "ml": ml}


def complementarity_check(support, potentials, sample, config: SolverConfig = None, tol=1e-6) -> dict:
    """ML on the general form against MiniMax Entropy on the general potentials.

    Disagreement is not an error: it yields a structured counterexample.
    """
    cfg = config or SolverConfig()
    out = {"agree": False, "counterexample": None}
    try:
        ml = solve_ml_general(support, potentials, sample, cfg)
        mm = solve_minimax_ent(support, potentials, sample, cfg)
    except EntropicError as exc:
        out["counterexample"] = {"reason": f"{type(exc).__name__}: {exc}"}
        rep = getattr(exc, "report", None)
        if rep is not None:
            out["counterexample"]["partial_report"] = rep.to_dict()
        return out
    dl = float(np.max(np.abs(ml.lambda_hat - mm.lambda_hat)))
    da = float(np.max(np.abs(ml.alpha_hat - mm.alpha_hat)))
    out.update(ml=ml, minimaxent=mm, max_lambda_diff=dl, max_alpha_diff=da, agree=dl <= tol and da <= tol)
    if not out["agree"]:
        out["counterexample"] = {
            "reason": "estimates differ",
            "ml": {"lambda_hat": ml.lambda_hat.tolist(), "alpha_hat": ml.alpha_hat.tolist(),
                   "foc_residual": ml.foc_residual.tolist(), "log_likelihood": ml.log_likelihood},
            "minimaxent": {"lambda_hat": mm.lambda_hat.tolist(), "alpha_hat": mm.alpha_hat.tolist(),
                           "foc_residual": mm.foc_residual.tolist(), "entropy": mm.entropy},
        }
        log.warning("ML and MiniMax Entropy disagree: dlambda=%.3e dalpha=%.3e", dl, da)
    return out


def derivative_audit(model: ExponentialModel, sample: EmpiricalSample, config: SolverConfig = None) -> dict:
    """FD check of every analytic derivative path at one (lambda, alpha) point."""
    cfg = config or SolverConfig()
    support, pots = model.support, model.potentials
    J, T = model.J, model.T
    lam, alpha = np.asarray(model.lam), np.asarray(model.alpha)
    theta = np.concatenate([lam, alpha])
    results = {}

    def nll(t):
        return neg_loglik_derivatives(support, pots, sample.freq, t[:J], t[J:], hessian=False).value

    def dual(l):
        m = model.with_params(lam=l)
        return m.log_norm + float(l @ (sample.freq @ m.u))

    dual_grad = sample.freq @ model.u - model.probs @ model.u
    results["dual_gradient"] = fd.fd_check(dual, lam, dual_grad)
    results["foc_residuals"] = fd.fd_check(nll, theta, foc_residuals(model, sample))
    results["compact_residuals"] = fd.fd_check(nll, theta, compact_residuals(model, sample))
    results["joint_hessian"] = fd.fd_check(
        nll, theta, neg_loglik_derivatives(support, pots, sample.freq, lam, alpha).hess, kind="hessian")
    if T == 0:
        results["ml_simple_hessian"] = hessian_ml_simple(model, sample).fd_max_rel_err
        table = []
    else:
        hg = hessian_ml_general(model, sample)
        table = hg.blocks
        for row in table:
            if row["agrees"]:
                results[f"ml_block_{row['block']}"] = row["rel_err"]
        he = hessian_me(model, sample)
        results["me_alpha_block"] = he.fd_max_rel_err
        try:
            inner = inner_me(support, pots, sample, alpha, lam, cfg)
            g = envelope_gradient(support, pots, sample, inner)

            def outer(a):
                return inner_me(support, pots, sample, a, inner.lam, cfg).entropy

            results["envelope_gradient"] = fd.fd_check(outer, alpha, g, steps=(1e-3, 1e-4), floor=1e-6)
        except InnerInfeasible:
            results["envelope_gradient"] = None
    disagreements = [row["block"] for row in table if row["agrees"] is False]
    return {
        "rel_errors": results,
        "pass": all(v is None or v <= cfg.fd_rel_tol for v in results.values()),
        "block_table": table,
        "as_written_disagreements": disagreements,
    }
