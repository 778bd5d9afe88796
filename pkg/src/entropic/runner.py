"""Execute a manifest and assemble the JSON report."""

from __future__ import annotations

import datetime as _dt
import json
import math
import platform
from importlib import metadata
from pathlib import Path

import numpy as np
import scipy

from . import analysis
from .data import generate_sample, ingest_sample
from .errors import ConfigError, EntropicError
from .manifest import RunManifest, parse_grid
from .model import CATALOG, EmpiricalSample, dnorm_general_to_simple, normalize, PotentialSet
from .solvers import (
    solve_me,
    solve_me_simple,
    solve_minimax_ent,
    solve_ml_general,
    solve_ml_simple,
)

SCHEMA_VERSION = "1.0"
EXIT_OK = 0
EXIT_CHECK_FAILED = 6


def _version():
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def _clean(obj):
    """JSON-safe copy: arrays to lists, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if hasattr(obj, "to_dict"):
        return _clean(obj.to_dict())
    return obj


def load_sample(manifest: RunManifest, support, potentials) -> EmpiricalSample:
    spec = manifest.sample
    if spec.freq is not None:
        return EmpiricalSample(spec.freq, 0)
    if spec.file is not None:
        path = Path(spec.file)
        if not path.is_absolute():
            path = manifest.base_dir / path
        return ingest_sample(path, support)
    g = spec.generate
    true = normalize(support, potentials, g["true_lambda"], g.get("true_alpha") or None)
    return generate_sample(true, int(g.get("n", 0)), manifest.seed)


def _perturbed(model, seed):
    """A deterministic non-stationary point near ``model`` for gradient audits."""
    rng = np.random.default_rng(seed)
    lam = model.lam + 0.1 * rng.standard_normal(model.J) * np.maximum(1.0, np.abs(model.lam))
    alpha = model.alpha + 0.1 * rng.standard_normal(model.T) * np.maximum(1.0, np.abs(model.alpha))
    return model.with_params(lam, alpha)


def _task_me(manifest, support, pots, sample):
    cfg = manifest.config
    if pots.is_simple:
        rep = solve_me_simple(support, pots, sample, cfg)
    else:
        if cfg.alpha_init is None:
            raise ConfigError("task 'me' on general potentials needs config.alpha_init", manifest.source,
                              "config.alpha_init")
        rep = solve_me(support, pots, sample, cfg.alpha_init, cfg)
    model = normalize(support, pots, rep.lambda_hat, rep.alpha_hat)
    return {"solve": rep, "hessian_me": analysis.hessian_me(model, sample)}, EXIT_OK


def _ml_comparison(ml, mm, tol=1e-6):
    dl = float(np.max(np.abs(ml.lambda_hat - mm.lambda_hat)))
    da = float(np.max(np.abs(ml.alpha_hat - mm.alpha_hat)))
    return {"lambda_hat": ml.lambda_hat, "alpha_hat": ml.alpha_hat, "foc_residual": ml.foc_residual,
            "max_lambda_diff": dl, "max_alpha_diff": da, "agree": dl <= tol and da <= tol}


def _task_ml(manifest, support, pots, sample):
    cfg = manifest.config
    if pots.is_simple:
        rep = solve_ml_simple(support, pots, sample, cfg)
        model = normalize(support, pots, rep.lambda_hat)
        return {"solve": rep, "hessian_ml": analysis.hessian_ml_simple(model, sample)}, EXIT_OK
    rep = solve_ml_general(support, pots, sample, cfg)
    model = normalize(support, pots, rep.lambda_hat, rep.alpha_hat)
    return {"solve": rep, "hessian_ml": analysis.hessian_ml_general(model, sample),
            "hessian_me": analysis.hessian_me(model, sample)}, EXIT_OK


def _task_minimaxent(manifest, support, pots, sample):
    cfg = manifest.config
    rep = solve_minimax_ent(support, pots, sample, cfg)
    ml = solve_ml_general(support, pots, sample, cfg)
    model = normalize(support, pots, rep.lambda_hat, rep.alpha_hat)
    return {"solve": rep, "hessian_me": analysis.hessian_me(model, sample),
            "ml": _ml_comparison(ml, rep)}, EXIT_OK


def _task_check(manifest, support, pots, sample):
    cfg = manifest.config
    out = {}
    ok = True
    if pots.is_simple:
        ident = analysis.identity_check(support, pots, sample, cfg)
        model = normalize(support, pots, ident["me"].lambda_hat)
        h_ml = analysis.hessian_ml_simple(model, sample)
        h_me = analysis.hessian_me(model, sample)
        out["identity_check"] = "pass" if ident["pass"] else "fail"
        out["max_lambda_discrepancy"] = ident["max_lambda_diff"]
        out["me"] = ident["me"]
        out["ml"] = ident["ml"]
        out["hessian_ml"] = h_ml
        out["hessian_me"] = h_me
        ok &= ident["pass"] and h_ml.definiteness == "negative-definite"
    else:
        comp = analysis.complementarity_check(support, pots, sample, cfg)
        out["hypothesis_check"] = "agree" if comp["agree"] else "counterexample"
        if comp["counterexample"] is not None:
            out["counterexample"] = comp["counterexample"]
        if "ml" in comp:
            ml, mm = comp["ml"], comp["minimaxent"]
            out["ml"], out["minimaxent"] = ml, mm
            out["max_lambda_discrepancy"] = comp["max_lambda_diff"]
            out["max_alpha_discrepancy"] = comp["max_alpha_diff"]
            foc_ok = ml.residual_norm <= cfg.tol and mm.residual_norm <= cfg.outer_tol
            out["general_foc_check"] = "pass" if foc_ok else "fail"
            ok &= foc_ok
            model = normalize(support, pots, ml.lambda_hat, ml.alpha_hat)
            out["hessian_ml"] = analysis.hessian_ml_general(model, sample)
            out["hessian_me"] = analysis.hessian_me(model, sample)
            if manifest.model.catalog == "dnorm_general":
                simple = PotentialSet.parse(CATALOG["dnorm_simple"].potentials, 0)
                ref = solve_ml_simple(support, simple, sample, cfg)
                mapped = dnorm_general_to_simple(ml.lambda_hat[0], ml.alpha_hat[0])
                diff = float(np.max(np.abs(mapped - ref.lambda_hat)))
                out["simple_form_check"] = {"mapped_lambda": mapped, "simple_lambda": ref.lambda_hat,
                                            "max_diff": diff, "pass": diff <= 1e-6}
                ok &= diff <= 1e-6
        else:
            model = None
    if model is not None:
        audit = analysis.derivative_audit(_perturbed(model, manifest.seed), sample, cfg)
        out["derivative_audit"] = audit
        ok &= audit["pass"]
    out["status"] = "pass" if ok else "fail"
    return out, EXIT_OK if ok else EXIT_CHECK_FAILED


def _task_sweep(manifest, support, pots, sample, grid_text=None):
    cfg = manifest.config
    if pots.T != 1:
        raise ConfigError("sweep needs exactly one alpha parameter", manifest.source, "model.num_params")
    text = grid_text or manifest.sweep_grid
    centre = None
    if text is not None:
        grid = parse_grid(text, manifest.source)
    else:
        ml = solve_ml_general(support, pots, sample, cfg)
        centre = float(ml.alpha_hat[0])
        grid = np.linspace(centre - 3.0, centre + 3.0, 101)
    table = analysis.entropy_sweep(support, pots, sample, grid, cfg)
    alphas = table.alphas()[:, 0]
    H = table.column("entropy")
    L = table.column("loglik")
    tv = table.column("tv_uniform")
    feasible = ~np.isnan(H)
    summary = {"rows": len(table.rows), "infeasible_rows": int((~feasible).sum())}
    if feasible.any():
        summary.update(
            alpha_min_entropy=float(alphas[np.nanargmin(H)]),
            alpha_max_loglik=float(alphas[np.nanargmax(L)]),
            alpha_max_entropy=float(alphas[np.nanargmax(H)]),
            alpha_min_tv_uniform=float(alphas[np.nanargmin(tv)]),
        )
    if centre is not None:
        summary["centre_alpha_ml"] = centre
    return {"sweep_summary": summary, "sweep_table": table}, EXIT_OK


TASK_RUNNERS = {
    "me": _task_me,
    "ml": _task_ml,
    "minimaxent": _task_minimaxent,
    "check": _task_check,
    "sweep": _task_sweep,
}


def build_report(manifest: RunManifest, grid_text=None) -> tuple:
    """Returns (report dict, exit code, sweep table or None)."""
    support, pots = manifest.model.build()
    sample = load_sample(manifest, support, pots)
    if manifest.task == "sweep":
        results, code = _task_sweep(manifest, support, pots, sample, grid_text)
    else:
        results, code = TASK_RUNNERS[manifest.task](manifest, support, pots, sample)
    table = results.pop("sweep_table", None)
    model_info = {"m": support.m, "potentials": pots.sources(), "num_params": pots.T,
                  "weights": "unit" if support.unit_weights else "quadrature"}
    if manifest.model.catalog:
        model_info["catalog"] = manifest.model.catalog
        model_info["catalog_note"] = CATALOG[manifest.model.catalog].note
    report = {
        "schema_version": SCHEMA_VERSION,
        "task": manifest.task,
        "seed": manifest.seed,
        "manifest": manifest.to_dict(),
        "model": model_info,
        "sample": {"n": sample.n, "binning_error": sample.binning_error, "freq": sample.freq},
        "results": results,
        "environment": {"package": _version(), "python": platform.python_version(),
                        "numpy": np.__version__, "scipy": scipy.__version__},
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "exit_code": code,
    }
    return _clean(report), code, table


def error_report(manifest_dict, exc: EntropicError) -> dict:
    out = {
        "schema_version": SCHEMA_VERSION,
        "error": {"type": type(exc).__name__, "message": str(exc), "exit_code": exc.exit_code},
        "manifest": manifest_dict,
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(),
    }
    rep = getattr(exc, "report", None)
    if rep is not None:
        out["error"]["partial_report"] = rep.to_dict()
    return _clean(out)


def dumps(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=2) + "\n"
