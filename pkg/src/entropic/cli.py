"""Command line entry point: ``entropic run|check|sweep|gen``.

Exit codes: 0 success, 1 unexpected error, 2 invalid manifest / input,
3 non-convergence, 4 infeasible moments, 5 expression error,
6 a ``check`` criterion failed.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import sys
from pathlib import Path

from .data import write_frequencies
from .errors import EntropicError
from .manifest import load_manifest
from .runner import build_report, dumps, error_report, load_sample


def _apply_overrides(manifest, args):
    if args.seed is not None:
        manifest.seed = args.seed
        manifest.config = dataclasses.replace(manifest.config, seed=args.seed)
    if args.tol is not None:
        manifest.config = dataclasses.replace(manifest.config, tol=args.tol)
    return manifest


def _summary_csv(report, stream):
    solve = report.get("results", {}).get("solve") or report.get("results", {}).get("ml")
    w = csv.writer(stream, lineterminator="\r\n")
    if not solve or "lambda_hat" not in solve:
        w.writerow(["status"])
        w.writerow([report.get("results", {}).get("status", "")])
        return
    lam, alpha = solve["lambda_hat"], solve.get("alpha_hat", [])
    w.writerow([f"lambda{j + 1}" for j in range(len(lam))] + [f"alpha{t + 1}" for t in range(len(alpha))]
               + ["entropy", "loglik", "converged"])
    w.writerow([repr(v) for v in lam + alpha] + [repr(solve["entropy"]), repr(solve["log_likelihood"]),
                                                  "true" if solve["converged"] else "false"])


def _run_one(path: Path, args, task=None, out_dir: Path = None) -> int:
    out_dir = out_dir or Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = path.stem
    manifest_dict = None
    try:
        manifest = _apply_overrides(load_manifest(path), args)
        if task is not None:
            manifest.task = task
        manifest_dict = manifest.to_dict()
        report, code, table = build_report(manifest, getattr(args, "grid", None))
    except EntropicError as exc:
        (out_dir / f"{stem}.error.json").write_text(dumps(error_report(manifest_dict, exc)))
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    (out_dir / f"{stem}.report.json").write_text(dumps(report))
    if table is not None:
        with open(out_dir / f"{stem}.sweep.csv", "w", newline="") as fh:
            table.to_csv(fh)
    if args.format == "json":
        sys.stdout.write(dumps(report))
    elif table is not None:
        sys.stdout.write(table.to_csv())
    else:
        _summary_csv(report, sys.stdout)
    return code


def cmd_run(args, task=None) -> int:
    path = Path(args.manifest)
    if path.is_dir():
        codes = [_run_one(p, args, task, Path(args.out_dir) / p.stem) for p in sorted(path.glob("*.toml"))]
        if not codes:
            print(f"error: no *.toml manifests in {path}", file=sys.stderr)
            return 2
        return max(codes)
    return _run_one(path, args, task)


def cmd_gen(args) -> int:
    try:
        manifest = _apply_overrides(load_manifest(args.manifest), args)
        support, pots = manifest.model.build()
        sample = load_sample(manifest, support, pots)
    except EntropicError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    write_frequencies(args.output, support, sample)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="entropic", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log solver warnings")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("manifest", help="manifest TOML file (or a directory of them for 'run')")
        p.add_argument("--tol", type=float, default=None, help="override config.tol")
        p.add_argument("--seed", type=int, default=None, help="override the manifest seed")
        p.add_argument("--out-dir", default=".", help="where reports are written")
        p.add_argument("--format", choices=("json", "csv"), default="json", help="stdout format")

    common(sub.add_parser("run", help="run the manifest's task"))
    common(sub.add_parser("check", help="run the bundled identity, FOC, hypothesis and Hessian checks"))
    p = sub.add_parser("sweep", help="entropy/likelihood landscape over an alpha grid")
    common(p)
    p.add_argument("--grid", default=None, help="lo:hi:n (default: 101 points spanning +-3 around the ML alpha)")
    p = sub.add_parser("gen", help="write the manifest's sample as an x,freq CSV")
    p.add_argument("manifest")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--tol", type=float, default=None)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "gen":
            return cmd_gen(args)
        return cmd_run(args, None if args.command == "run" else args.command)
    except Exception as exc:  # last-resort: never exit with a bare traceback
        print(f"error: unexpected {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
