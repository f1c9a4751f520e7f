"""Benchmark command line: instance generation, recovery runs, span
diagnostics, the matched-moment fixture check, and accuracy sweeps.

Exit codes: 0 on success, 2 for configuration errors caught at load time,
3 for numerical failures (strict mode or unrecoverable rank problems),
4 when the fixture check does not reproduce its contract.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from concurrent import futures
from typing import Any

import numpy as np
import scipy

from .decomp import PowerMethodConfig
from .diagnostics import RunLog, config_digest
from .errors import InvalidRho, MixmomError
from .instances import PRESETS, counterexample_pair, random_instance, x4_matrix
from .model import GmmParams, SmoothingConfig, sample, smooth_perturb
from .moments import empirical_moments, exact_moments
from .pipeline import PipelineConfig, learn_general, learn_zero_mean, match_and_score
from .spans import find_matrix_span
from .unfold import build_h4, build_h6

SPAN_CSV_FIELDS = ["seed", "rho", "step", "rank_target", "sigma_r", "sigma_next", "cond_ratio"]
LEARN_CSV_FIELDS = [
    "mode", "n", "k", "rho", "seed", "source", "h_size",
    "max_error", "weight_err", "mean_err", "cov_err", "problems", "seconds",
]


def _parse_seeds(spec: str) -> list[int]:
    spec = spec.strip()
    if ":" in spec:
        lo, hi = spec.split(":", 1)
        return list(range(int(lo), int(hi)))
    return [int(tok) for tok in spec.split(",") if tok]


def _parse_rhos(spec: str) -> list[float]:
    return [float(tok) for tok in spec.split(",") if tok]


def _parse_moments(spec: str) -> list[int | None]:
    """"exact" -> [None]; "empirical:10000,100000" -> sample sizes."""
    spec = spec.strip()
    if spec == "exact":
        return [None]
    if spec.startswith("empirical:"):
        sizes = [int(tok) for tok in spec[len("empirical:"):].split(",") if tok]
        if not sizes or any(s <= 0 for s in sizes):
            raise ValueError("empirical moment spec needs positive sample sizes")
        return sizes
    raise ValueError(f"moment source must be 'exact' or 'empirical:N[,N...]', got {spec!r}")


def _versions() -> dict[str, str]:
    from . import __version__

    return {
        "python": sys.version.split()[0],
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "mixmom": __version__,
    }


def _write_manifest(out: str, command: str, config: dict[str, Any]) -> None:
    doc = {
        "command": command,
        "config": config,
        "config_digest": config_digest(config),
        "versions": _versions(),
        "created_unix": int(time.time()),
    }
    with open(os.path.join(out, "manifest.json"), "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)


def _ensure_out(path: str) -> None:
    os.makedirs(path, exist_ok=True)


def _n_workers() -> int:
    try:
        return max(1, int(os.environ.get("MIXMOM_WORKERS", "1")))
    except ValueError:
        return 1


def _pool_map(fn, jobs: list[dict]) -> list:
    w = _n_workers()
    if w <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with futures.ProcessPoolExecutor(max_workers=w) as ex:
        return list(ex.map(fn, jobs))


def _make_instance(job: dict) -> tuple[GmmParams, GmmParams]:
    zero_mean = job["mode"] == "zero_mean"
    pre = random_instance(
        job["n"],
        job["k"],
        job["seed"],
        zero_mean=zero_mean,
        preset=job["preset"],
        uniform_weights=job["uniform_weights"],
    )
    cfg = SmoothingConfig(
        rho=job["rho"],
        seed=job["seed"],
        diag_margin=job["diag_margin"],
        zero_mean=zero_mean,
    )
    return pre, smooth_perturb(pre, cfg)


def _compute_moments(smoothed: GmmParams, job: dict):
    orders = (4, 6) if job["mode"] == "zero_mean" else (3, 4, 6)
    if job["n_samples"] is None:
        return exact_moments(smoothed, orders=orders)
    batch = sample(smoothed, job["n_samples"], seed=job["seed"])
    return empirical_moments(batch, orders=orders)


def _learn_job(job: dict) -> dict:
    t0 = time.perf_counter()
    try:
        pre, smoothed = _make_instance(job)
        moments = _compute_moments(smoothed, job)
        cfg = PipelineConfig(
            strict=job["strict"],
            h_size=job["h_size"],
            power=PowerMethodConfig(seed=job["seed"]),
        )
        if job["mode"] == "zero_mean":
            est, report = learn_zero_mean(moments, job["k"], cfg)
        else:
            est, report = learn_general(moments, job["k"], cfg)
        match = match_and_score(smoothed, est)
        report.match = match.to_dict()
    except MixmomError as exc:
        return {
            "ok": False,
            "error_kind": type(exc).__name__,
            "error": str(exc),
            "seed": job["seed"],
            "source": "exact" if job["n_samples"] is None else str(job["n_samples"]),
            "rho": job["rho"],
        }
    problems = sorted({ev["kind"] for ev in report.events if ev["kind"] != "info"})
    row = {
        "mode": job["mode"],
        "n": job["n"],
        "k": job["k"],
        "rho": job["rho"],
        "seed": job["seed"],
        "source": "exact" if job["n_samples"] is None else str(job["n_samples"]),
        "h_size": len(report.index_sets["h1"]),
        "max_error": match.max_error,
        "weight_err": max(match.weight_errors),
        "mean_err": max(match.mean_errors),
        "cov_err": max(match.cov_errors),
        "problems": ";".join(problems),
        "seconds": round(time.perf_counter() - t0, 3),
    }
    return {
        "ok": True,
        "row": row,
        "report_json": report.to_json(),
        "seed": job["seed"],
        "source": row["source"],
        "rho": job["rho"],
    }


def _diag_job(job: dict) -> dict:
    try:
        pre, smoothed = _make_instance(job)
        moments = exact_moments(
            smoothed, orders=(4, 6) if job["mode"] == "zero_mean" else (3, 4, 6)
        )
        log = RunLog(strict=job["strict"])
        span = find_matrix_span(
            moments,
            job["k"],
            job["mode"],
            h_size=job["h_size"],
            log=log,
        )
        basis = span.u if job["mode"] == "zero_mean" else span.sigma_o
        rows = [dict(r) for r in log.tables.get("span", [])]
        for name, builder in (("h4", build_h4), ("h6", build_h6)):
            h = builder(basis)
            sing = np.linalg.svd(h, compute_uv=False)
            smin, smax = float(sing[-1]), float(sing[0])
            rows.append(
                {
                    "step": name,
                    "rank_target": h.shape[1],
                    "sigma_r": smin,
                    "sigma_next": 0.0,
                    "cond_ratio": smax / smin if smin > 0 else float("inf"),
                }
            )
        for r in rows:
            r["seed"] = job["seed"]
            r["rho"] = job["rho"]
        problems = sorted({ev.kind for ev in log.events if ev.kind != "info"})
        return {
            "ok": True,
            "rows": rows,
            "h_size": span.index_sets.h_size,
            "problems": problems,
            "seed": job["seed"],
            "rho": job["rho"],
        }
    except MixmomError as exc:
        return {
            "ok": False,
            "error_kind": type(exc).__name__,
            "error": str(exc),
            "seed": job["seed"],
            "rho": job["rho"],
        }


def _base_job(ns: argparse.Namespace, seed: int, rho: float, n_samples: int | None) -> dict:
    return {
        "n": ns.n,
        "k": ns.k,
        "mode": ns.mode,
        "preset": ns.preset,
        "uniform_weights": getattr(ns, "uniform_weights", False),
        "diag_margin": ns.diag_margin,
        "rho": rho,
        "seed": seed,
        "n_samples": n_samples,
        "h_size": getattr(ns, "h_size", None),
        "strict": getattr(ns, "strict", False),
    }


def cmd_gen(ns: argparse.Namespace) -> int:
    _ensure_out(ns.out)
    seeds = _parse_seeds(ns.seeds)
    rho = _parse_rhos(ns.rho)[0]
    for seed in seeds:
        pre, smoothed = _make_instance(_base_job(ns, seed, rho, None))
        doc = {
            "n": ns.n,
            "k": ns.k,
            "mode": ns.mode,
            "preset": ns.preset,
            "rho": rho,
            "seed": seed,
            "diag_margin": ns.diag_margin,
            "pre": pre.to_json(),
            "smoothed": smoothed.to_json(),
        }
        path = os.path.join(ns.out, f"instance_seed{seed}.json")
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
    _write_manifest(
        ns.out,
        "gen",
        {k: v for k, v in vars(ns).items() if k not in ("func", "out")},
    )
    print(f"wrote {len(seeds)} instances to {ns.out}")
    return 0


def _run_learn_like(ns: argparse.Namespace, command: str) -> int:
    _ensure_out(ns.out)
    seeds = _parse_seeds(ns.seeds)
    rhos = _parse_rhos(ns.rho)
    sources = _parse_moments(ns.moments)
    jobs = [
        _base_job(ns, seed, rho, src)
        for rho in rhos
        for src in sources
        for seed in seeds
    ]
    results = _pool_map(_learn_job, jobs)

    report_dir = os.path.join(ns.out, "reports")
    _ensure_out(report_dir)
    rows = []
    failures = []
    for res in results:
        if not res["ok"]:
            failures.append(res)
            continue
        rows.append(res["row"])
        name = f"report_seed{res['seed']}_rho{res['rho']}_{res['source']}.json"
        with open(os.path.join(report_dir, name), "w") as fh:
            fh.write(res["report_json"])

    csv_path = os.path.join(ns.out, f"{command}.csv")
    with open(csv_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=LEARN_CSV_FIELDS)
        writer.writeheader()
        writer.writerows(rows)
    _write_manifest(
        ns.out,
        command,
        {k: v for k, v in vars(ns).items() if k not in ("func", "out")},
    )

    for res in failures:
        print(
            f"{res['error_kind']}: seed {res['seed']} source {res['source']}: {res['error']}",
            file=sys.stderr,
        )
    if rows:
        worst = max(r["max_error"] for r in rows)
        print(
            f"{command}: {len(rows)} runs ok, {len(failures)} failed, "
            f"worst matched error {worst:.3e}; rows in {csv_path}"
        )
    else:
        print(f"{command}: all {len(failures)} runs failed", file=sys.stderr)
    return 3 if failures else 0


def cmd_learn(ns: argparse.Namespace) -> int:
    return _run_learn_like(ns, "learn")


def cmd_sweep(ns: argparse.Namespace) -> int:
    return _run_learn_like(ns, "sweep")


def cmd_diagnose(ns: argparse.Namespace) -> int:
    _ensure_out(ns.out)
    seeds = _parse_seeds(ns.seeds)
    rhos = _parse_rhos(ns.rho)
    jobs = [_base_job(ns, seed, rho, None) for rho in rhos for seed in seeds]
    results = _pool_map(_diag_job, jobs)

    failures = [r for r in results if not r["ok"]]
    rows = [row for r in results if r["ok"] for row in r["rows"]]
    csv_path = os.path.join(ns.out, "diagnose.csv")
    with open(csv_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SPAN_CSV_FIELDS, extrasaction="ignore")
        writer.writeheader()
        writer.writerows(rows)

    # headline sigma per (seed, rho): minimum over the two index-set runs
    def headline(result: dict, prefix: str) -> float:
        vals = [
            row["sigma_r"] for row in result["rows"] if row["step"].startswith(prefix)
        ]
        return min(vals) if vals else float("nan")

    summary: dict[str, Any] = {
        "n": ns.n,
        "k": ns.k,
        "mode": ns.mode,
        "rho_values": rhos,
        "per_rho": {},
        "halving_ratios": {},
    }
    table: dict[str, dict[float, list[float]]] = {}
    for group, prefix in (("qs", "qs"), ("qus", "qus"), ("h4", "h4"), ("h6", "h6")):
        table[group] = {rho: [] for rho in rhos}
        for res in results:
            if res["ok"]:
                table[group][res["rho"]].append(headline(res, prefix))
    for rho in rhos:
        summary["per_rho"][str(rho)] = {
            g: {
                "median": float(np.median(table[g][rho])) if table[g][rho] else None,
                "min": float(np.min(table[g][rho])) if table[g][rho] else None,
            }
            for g in table
        }
    for g in table:
        pairs = []
        for r_hi, r_lo in zip(rhos, rhos[1:]):
            per_seed = [
                hi / lo
                for hi, lo in zip(table[g][r_hi], table[g][r_lo])
                if lo > 0 and np.isfinite(hi)
            ]
            if per_seed:
                pairs.append(
                    {
                        "rho_from": r_hi,
                        "rho_to": r_lo,
                        "median_ratio": float(np.median(per_seed)),
                    }
                )
        summary["halving_ratios"][g] = pairs
    with open(os.path.join(ns.out, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    _write_manifest(
        ns.out,
        "diagnose",
        {k: v for k, v in vars(ns).items() if k not in ("func", "out")},
    )

    for res in failures:
        print(
            f"{res['error_kind']}: seed {res['seed']} rho {res['rho']}: {res['error']}",
            file=sys.stderr,
        )
    print(
        f"diagnose: {len(results) - len(failures)} runs ok, {len(failures)} failed; "
        f"rows in {csv_path}"
    )
    return 3 if failures else 0


def cmd_fixture(ns: argparse.Namespace) -> int:
    a, b = counterexample_pair()
    ma = exact_moments(a, orders=(4,))
    mb = exact_moments(b, orders=(4,))
    dm4 = float(np.max(np.abs(ma.m4.values - mb.m4.values)))
    dx4 = float(np.linalg.norm(x4_matrix(a) - x4_matrix(b), "fro"))
    ok = dm4 < ns.moment_tol and dx4 > ns.min_x4_gap
    doc = {
        "max_abs_m4_difference": dm4,
        "x4_frobenius_gap": dx4,
        "moment_tol": ns.moment_tol,
        "min_x4_gap": ns.min_x4_gap,
        "ok": ok,
    }
    if ns.out:
        _ensure_out(ns.out)
        with open(os.path.join(ns.out, "fixture.json"), "w") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
    state = "ok" if ok else "MISMATCH"
    print(f"fixture {state}: max |dM4| = {dm4:.3e}, ||dX4||_F = {dx4:.3f}")
    return 0 if ok else 4


def _add_common(p: argparse.ArgumentParser, *, rho_default: str | None = None) -> None:
    p.add_argument("-n", type=int, required=True, help="ambient dimension")
    p.add_argument("-k", type=int, required=True, help="number of components")
    p.add_argument("--mode", choices=("zero_mean", "general"), default="zero_mean")
    p.add_argument("--preset", choices=PRESETS, default="random")
    p.add_argument("--rho", default=rho_default, required=rho_default is None,
                   help="perturbation size (comma list where it makes sense)")
    p.add_argument("--seeds", default="0:1", help="'lo:hi' range or comma list")
    p.add_argument("--diag-margin", type=float, default=5.0, dest="diag_margin")
    p.add_argument("--uniform-weights", action="store_true", dest="uniform_weights")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mixmom",
        description="moment-based recovery of smoothed Gaussian mixtures",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate perturbed benchmark instances")
    _add_common(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    for name, help_text in (
        ("learn", "run recovery on generated instances"),
        ("sweep", "accuracy sweep over rho / sample-size grids"),
    ):
        p = sub.add_parser(name, help=help_text)
        _add_common(p)
        p.add_argument("--moments", default="exact",
                       help="'exact' or 'empirical:N[,N...]'")
        p.add_argument("--H", type=int, default=None, dest="h_size",
                       help="override the index-set size")
        p.add_argument("--strict", action="store_true")
        p.add_argument("--out", required=True)
        p.set_defaults(func=cmd_learn if name == "learn" else cmd_sweep)

    p = sub.add_parser("diagnose", help="span and unfolding conditioning report")
    _add_common(p)
    p.add_argument("--H", type=int, default=None, dest="h_size")
    p.add_argument("--strict", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("fixture", help="check the matched-fourth-moment pair")
    p.add_argument("--moment-tol", type=float, default=1e-12, dest="moment_tol")
    p.add_argument("--min-x4-gap", type=float, default=0.5, dest="min_x4_gap")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_fixture)
    return parser


def _validate(ns: argparse.Namespace) -> str | None:
    if ns.command == "fixture":
        return None
    if ns.n < 4:
        return "dimension must be at least 4"
    if ns.k < 1:
        return "need at least one component"
    try:
        rhos = _parse_rhos(ns.rho)
    except ValueError:
        return f"could not parse rho list {ns.rho!r}"
    for rho in rhos:
        if rho < 0:
            return f"rho must be nonnegative, got {rho}"
        if rho * rho * ns.n >= 1.0:
            return f"rho {rho} is not below 1/sqrt(n) = {ns.n ** -0.5:.4g}"
    try:
        _parse_seeds(ns.seeds)
    except ValueError:
        return f"could not parse seed spec {ns.seeds!r}"
    if hasattr(ns, "moments"):
        try:
            _parse_moments(ns.moments)
        except ValueError as exc:
            return str(exc)
    return None


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    err = _validate(ns)
    if err is not None:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    try:
        return ns.func(ns)
    except InvalidRho as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except MixmomError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
