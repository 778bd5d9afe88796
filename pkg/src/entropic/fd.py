"""Central finite differences with Richardson extrapolation.

These are the independent oracles for every analytic derivative in the
package.  Step sizes are scaled per coordinate by ``max(1, |x_i|)``.
"""

from __future__ import annotations

import numpy as np

DEFAULT_STEPS = (1e-3, 1e-4, 1e-5)


def _steps(x, h):
    return h * np.maximum(1.0, np.abs(x))


def central_gradient(f, x, h=1e-5):
    x = np.asarray(x, dtype=float)
    hs = _steps(x, h)
    out = []
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = hs[i]
        out.append((np.asarray(f(x + e)) - np.asarray(f(x - e))) / (2 * hs[i]))
    return np.array(out)


def central_jacobian(f, x, h=1e-5):
    """Rows are outputs, columns are inputs."""
    g = central_gradient(f, x, h)
    return g.T if g.ndim == 2 else g


def central_hessian(f, x, h=1e-4):
    x = np.asarray(x, dtype=float)
    n = x.size
    hs = _steps(x, h)
    f0 = f(x)
    H = np.empty((n, n))
    for i in range(n):
        ei = np.zeros(n)
        ei[i] = hs[i]
        H[i, i] = (f(x + ei) - 2 * f0 + f(x - ei)) / hs[i] ** 2
        for j in range(i):
            ej = np.zeros(n)
            ej[j] = hs[j]
            v = (f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej)) / (4 * hs[i] * hs[j])
            H[i, j] = H[j, i] = v
    return H


_KINDS = {
    "gradient": central_gradient,
    "jacobian": central_jacobian,
    "hessian": central_hessian,
}


def fd_estimates(f, x, steps=DEFAULT_STEPS, kind="gradient"):
    """Raw estimates at each step plus Richardson combinations of neighbours."""
    method = _KINDS[kind]
    raw = [method(f, x, h) for h in steps]
    out = list(raw)
    for (h1, d1), (h2, d2) in zip(zip(steps, raw), zip(steps[1:], raw[1:])):
        r2 = (h1 / h2) ** 2
        out.append((r2 * d2 - d1) / (r2 - 1.0))
    return out


def rel_err(analytic, reference, floor=0.0) -> float:
    a = np.asarray(analytic, dtype=float)
    b = np.asarray(reference, dtype=float)
    scale = max(np.max(np.abs(b), initial=0.0), np.max(np.abs(a), initial=0.0), floor)
    if scale == 0.0:
        return 0.0
    return float(np.max(np.abs(a - b), initial=0.0) / scale)


def fd_check(func, point, analytic, steps=DEFAULT_STEPS, kind="gradient", floor=0.0) -> float:
    """Worst-component relative error of ``analytic`` against finite differences.

    The best of the per-step and extrapolated estimates is used, so a
    poorly chosen single step does not produce a false alarm.
    """
    ests = fd_estimates(func, np.asarray(point, dtype=float), steps, kind)
    return min(rel_err(analytic, est, floor) for est in ests)
