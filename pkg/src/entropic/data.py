"""Sample ingestion and synthetic sample generation."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .errors import EmptySample, FrequencySumError, UnmatchedSupportPoint
from .model import EmpiricalSample, ExponentialModel, SupportGrid, bin_observations

MATCH_TOL = 1e-9


def generate_sample(model: ExponentialModel, n: int, seed: int) -> EmpiricalSample:
    """n i.i.d. draws by inverse CDF on the support; n=0 returns p itself."""
    if n < 0:
        raise ValueError("n must be non-negative")
    p = model.probs
    if n == 0:
        return EmpiricalSample.from_probs(p)
    rng = np.random.default_rng(seed)
    cdf = np.cumsum(p)
    cdf[-1] = 1.0
    idx = np.searchsorted(cdf, rng.random(n), side="right")
    counts = np.bincount(np.minimum(idx, p.size - 1), minlength=p.size)
    return EmpiricalSample.from_counts(counts)


def _read_rows(path):
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise EmptySample(f"{path}: no rows")
    header = [c.strip().lower() for c in rows[0]]
    return header, rows[1:]


def ingest_sample(path, support: SupportGrid) -> EmpiricalSample:
    """Load a sample CSV.

    ``x,freq`` rows are relative frequencies matched to support points; a
    single ``x`` column is a list of raw observations, binned to the
    nearest support point.
    """
    header, rows = _read_rows(path)
    if not rows:
        raise EmptySample(f"{path}: header only")
    if header[:2] == ["x", "freq"]:
        freq = np.zeros(support.m)
        for line, row in enumerate(rows, start=2):
            x, f = float(row[0]), float(row[1])
            k = int(np.argmin(np.abs(support.points - x)))
            if abs(support.points[k] - x) > MATCH_TOL * max(1.0, abs(x)):
                raise UnmatchedSupportPoint(f"{path}:{line}: x={x!r} is not a support point")
            freq[k] += f
        total = freq.sum()
        if total <= 0:
            raise EmptySample(f"{path}: all frequencies are zero")
        if abs(total - 1.0) > 1e-9:
            raise FrequencySumError(f"{path}: frequencies sum to {float(total)!r}, not 1")
        if abs(total - 1.0) > 1e-12:
            freq = freq / total
        return EmpiricalSample(freq, 0)
    if header == ["x"]:
        obs = [float(r[0]) for r in rows]
        return bin_observations(obs, support)
    raise UnmatchedSupportPoint(f"{path}: expected header 'x,freq' or 'x', got {','.join(header)!r}")


def write_frequencies(path, support: SupportGrid, sample: EmpiricalSample) -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(["x", "freq"])
        for x, f in zip(support.points, sample.freq):
            w.writerow([repr(float(x)), repr(float(f))])
