"""Exponential-form models on a finite support.

Probabilities are ``p_i = w_i exp(-lambda'u(x_i, alpha) - log_norm)``.  The
weights ``w_i`` are 1 on a natively discrete support and quadrature
weights when a continuous density is discretized, so both cases share one
formula.  ``log_norm`` is always recomputed on construction; there is no
way to hold a model with a stale normalizer.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .errors import DimensionMismatch, EmptySample, FrequencySumError, InvalidGrid, UnknownCatalogName
from .potential import PotentialExpr, parse_potential

SUM_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class SupportGrid:
    points: np.ndarray
    weights: np.ndarray = None

    def __post_init__(self):
        pts = np.array(self.points, dtype=float).reshape(-1)
        w = np.ones_like(pts) if self.weights is None else np.asarray(self.weights, dtype=float).reshape(-1)
        if pts.shape[0] < 2:
            raise InvalidGrid("support needs at least 2 points")
        if not np.all(np.isfinite(pts)):
            raise InvalidGrid("support points must be finite")
        if np.any(np.diff(pts) <= 0):
            raise InvalidGrid("support points must be strictly increasing")
        if w.shape != pts.shape:
            raise InvalidGrid(f"{w.shape[0]} weights for {pts.shape[0]} points")
        if np.any(~(w > 0)) or not np.all(np.isfinite(w)):
            raise InvalidGrid("weights must be positive and finite")
        pts.flags.writeable = False
        w = w.copy()
        w.flags.writeable = False
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @property
    def m(self) -> int:
        return self.points.shape[0]

    @property
    def unit_weights(self) -> bool:
        return bool(np.all(self.weights == 1.0))

    @classmethod
    def uniform(cls, lo: float, hi: float, m: int, trapezoid: bool = True) -> "SupportGrid":
        if not (np.isfinite(lo) and np.isfinite(hi)) or hi <= lo:
            raise InvalidGrid(f"grid needs lo < hi, got ({lo}, {hi})")
        if int(m) != m or m < 2:
            raise InvalidGrid(f"grid needs an integer m >= 2, got {m}")
        pts = np.linspace(lo, hi, int(m))
        if not trapezoid:
            return cls(pts)
        h = (hi - lo) / (m - 1)
        w = np.full(int(m), h)
        w[0] = w[-1] = h / 2
        return cls(pts, w)

    def __eq__(self, other):
        return (
            isinstance(other, SupportGrid)
            and np.array_equal(self.points, other.points)
            and np.array_equal(self.weights, other.weights)
        )

    __hash__ = None


@dataclass(frozen=True)
class PotentialSet:
    exprs: tuple
    num_params: int = 0

    def __post_init__(self):
        exprs = tuple(self.exprs)
        if not exprs:
            raise DimensionMismatch("at least one potential is required")
        for e in exprs:
            if not isinstance(e, PotentialExpr):
                raise TypeError(f"expected PotentialExpr, got {type(e).__name__}")
            if e.params_used and max(e.params_used) > self.num_params:
                raise DimensionMismatch(f"potential {e} uses parameters beyond T={self.num_params}")
        object.__setattr__(self, "exprs", exprs)

    @classmethod
    def parse(cls, sources: Sequence[str], num_params: int = 0) -> "PotentialSet":
        return cls(tuple(parse_potential(s, num_params) for s in sources), num_params)

    @property
    def J(self) -> int:
        return len(self.exprs)

    @property
    def T(self) -> int:
        return self.num_params

    @property
    def is_simple(self) -> bool:
        return self.num_params == 0

    def sources(self) -> list:
        return [str(e) for e in self.exprs]

    def values(self, points, alpha=()) -> np.ndarray:
        """Matrix of u_j(x_i, alpha), shape (m, J)."""
        return np.column_stack([e.values(points, alpha) for e in self.exprs])

    def jets(self, points, alpha=()) -> "PotentialJets":
        js = [e.jet(points, alpha) for e in self.exprs]
        return PotentialJets(
            np.stack([j.v for j in js], axis=1),
            np.stack([j.d1 for j in js], axis=1),
            np.stack([j.d2 for j in js], axis=1),
        )


@dataclass(frozen=True)
class PotentialJets:
    """u (m, J), du/dalpha (m, J, T) and d2u/dalpha2 (m, J, T, T)."""

    u: np.ndarray
    du: np.ndarray
    d2u: np.ndarray


def _as_vector(values, n, name):
    v = np.asarray(values if values is not None else np.zeros(n), dtype=float).reshape(-1)
    if v.shape[0] != n:
        raise DimensionMismatch(f"{name} has {v.shape[0]} entries, expected {n}")
    return v


@dataclass(frozen=True, eq=False)
class ExponentialModel:
    support: SupportGrid
    potentials: PotentialSet
    lam: np.ndarray
    alpha: np.ndarray = None
    log_norm: float = field(init=False)
    log_probs: np.ndarray = field(init=False, repr=False)
    u: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        lam = _as_vector(self.lam, self.potentials.J, "lambda")
        alpha = _as_vector(self.alpha, self.potentials.T, "alpha")
        u = self.potentials.values(self.support.points, alpha)
        logits = np.log(self.support.weights) - u @ lam
        log_norm = float(logsumexp(logits))
        log_probs = logits - log_norm
        for name, value in (("lam", lam), ("alpha", alpha), ("u", u), ("log_probs", log_probs)):
            value.flags.writeable = False
            object.__setattr__(self, name, value)
        object.__setattr__(self, "log_norm", log_norm)

    @property
    def probs(self) -> np.ndarray:
        return np.exp(self.log_probs)

    @property
    def J(self) -> int:
        return self.potentials.J

    @property
    def T(self) -> int:
        return self.potentials.T

    def with_params(self, lam=None, alpha=None) -> "ExponentialModel":
        return ExponentialModel(
            self.support,
            self.potentials,
            self.lam if lam is None else lam,
            self.alpha if alpha is None else alpha,
        )

    def jets(self) -> PotentialJets:
        return self.potentials.jets(self.support.points, self.alpha)


@dataclass(frozen=True, eq=False)
class EmpiricalSample:
    freq: np.ndarray
    n: int = 0
    binning_error: float = 0.0

    def __post_init__(self):
        f = np.array(self.freq, dtype=float).reshape(-1)
        if np.any(f < 0) or not np.all(np.isfinite(f)):
            raise FrequencySumError("frequencies must be finite and non-negative")
        if abs(f.sum() - 1.0) > SUM_TOL:
            raise FrequencySumError(f"frequencies sum to {float(f.sum())!r}, not 1")
        f.flags.writeable = False
        object.__setattr__(self, "freq", f)

    @classmethod
    def from_counts(cls, counts, binning_error: float = 0.0) -> "EmpiricalSample":
        counts = np.asarray(counts, dtype=float)
        n = int(counts.sum())
        if n <= 0:
            raise EmptySample("no observations")
        return cls(counts / counts.sum(), n, binning_error)

    @classmethod
    def from_probs(cls, probs) -> "EmpiricalSample":
        """Infinite-sample mode: the model probabilities are the frequencies."""
        p = np.asarray(probs, dtype=float)
        return cls(p / p.sum(), 0)


def normalize(support: SupportGrid, potentials: PotentialSet, lam, alpha=None) -> ExponentialModel:
    return ExponentialModel(support, potentials, lam, alpha)


def model_moment(model: ExponentialModel, expr: PotentialExpr) -> float:
    v = expr.values(model.support.points, model.alpha if expr.num_params else ())
    return float(model.probs @ v)


def sample_moment(sample: EmpiricalSample, support: SupportGrid, expr: PotentialExpr, alpha=None) -> float:
    v = expr.values(support.points, alpha if alpha is not None else ())
    return float(sample.freq @ v)


def moment_gap(model: ExponentialModel, sample: EmpiricalSample) -> np.ndarray:
    """m(u_j) - mu(u_j) for every potential."""
    _check_sample(model, sample)
    return sample.freq @ model.u - model.probs @ model.u


def entropy(model: ExponentialModel) -> float:
    """Entropy of the model; reduces to -sum p ln p on unit weights.

    With quadrature weights this is the discretized differential entropy
    -sum p_i ln(p_i / w_i).
    """
    p = model.probs
    log_density = model.log_probs - np.log(model.support.weights)
    return float(-(p @ log_density))


def log_likelihood(model: ExponentialModel, sample: EmpiricalSample) -> float:
    """Per-observation log-likelihood -log_norm - lambda'm(u)."""
    _check_sample(model, sample)
    return float(-model.log_norm - model.lam @ (sample.freq @ model.u))


def _check_sample(model, sample):
    if sample.freq.shape[0] != model.support.m:
        raise DimensionMismatch(f"sample has {sample.freq.shape[0]} frequencies for {model.support.m} support points")


# ---------------------------------------------------------------------------
# Catalog

@dataclass(frozen=True)
class CatalogEntry:
    potentials: tuple
    num_params: int
    discrete: bool
    note: str = ""


CATALOG = {
    "gamma": CatalogEntry(
        ("x", "ln(x)"), 0, False, "lambda1 = 1/beta, lambda2 = 1 - shape"
    ),
    "logistic": CatalogEntry(
        ("(x - a1)/a2", "ln(1 + exp(-(x - a1)/a2))"),
        2,
        False,
        "logistic(mu, beta) corresponds to lambda = [1/a2, 2] with alpha = [mu, beta]",
    ),
    "dnorm_simple": CatalogEntry(("x", "x^2"), 0, True, "lambda1 = -2*alpha*lambda, lambda2 = lambda"),
    "dnorm_general": CatalogEntry(("(x - a1)^2",), 1, True, "u(x, alpha) = (x - alpha)^2"),
}


def discretize_continuous(catalog_name: str, grid_spec) -> tuple:
    """Support and potentials for a catalog model on a uniform grid.

    Continuous families get trapezoid weights; the discrete normal family
    keeps unit weights on its grid points.
    """
    try:
        entry = CATALOG[catalog_name]
    except KeyError:
        raise UnknownCatalogName(f"unknown catalog model {catalog_name!r}; choose from {sorted(CATALOG)}") from None
    if isinstance(grid_spec, dict):
        lo, hi, m = grid_spec["lo"], grid_spec["hi"], grid_spec["m"]
    else:
        lo, hi, m = grid_spec
    if catalog_name == "gamma" and lo <= 0:
        raise InvalidGrid("gamma grid must start above 0")
    support = SupportGrid.uniform(float(lo), float(hi), m, trapezoid=not entry.discrete)
    return support, PotentialSet.parse(entry.potentials, entry.num_params)


def dnorm_general_to_simple(lam: float, alpha: float) -> np.ndarray:
    """(lambda, alpha) of lambda*(x - alpha)^2 as coefficients of (x, x^2)."""
    return np.array([-2.0 * alpha * lam, lam])


def bin_observations(observations, support: SupportGrid) -> EmpiricalSample:
    """Assign raw observations to the nearest support point."""
    obs = np.asarray(observations, dtype=float).reshape(-1)
    if obs.size == 0:
        raise EmptySample("no observations")
    pts = support.points
    idx = np.clip(np.searchsorted(pts, obs), 1, pts.shape[0] - 1)
    left = pts[idx - 1]
    right = pts[idx]
    idx = np.where(np.abs(obs - left) <= np.abs(right - obs), idx - 1, idx)
    counts = np.bincount(idx, minlength=pts.shape[0])
    return EmpiricalSample.from_counts(counts, float(np.max(np.abs(obs - pts[idx]))))
