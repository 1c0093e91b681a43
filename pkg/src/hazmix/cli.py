"""Command-line pipeline orchestration.

Subcommands: simulate, ingest, discretize, features, fit, grid, select,
report, diagnose. Every stage reads and writes files so each step is
independently re-runnable, and every run writes a RunManifest next to its
outputs.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import advi as advi_mod
from . import ingest as ingest_mod
from .analysis import assign_clusters, curve_band, occupancy_curve, rank_effects
from .diagnostics import convergence_report, waic
from .discretize import DiscretizationSpec, assign_states, compute_cutoffs, event_rate
from .features import (
    FEATURE_NAMES,
    compute_feature_matrix,
    fit_pca,
    standardize,
    CovariateRow,
)
from .manifest import RunManifest
from .model import MIXTURE, RANDOM_EFFECT, ModelSpec, pointwise_log_likelihood, to_constrained
from .nuts import NutsConfig, sample_nuts
from .selection import SelectionConfig, grid_search, rows_from_grid, select_model
from .synthetic import GeneratorConfig, simulate_records, write_records_csv
from .trace import SampleTrace

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_USAGE = 2


def _spec_from_intervals(data, args) -> ModelSpec:
    n_states = args.n_states or int(max(data.prev_state.max() + 1, 2))
    kind = RANDOM_EFFECT if args.model == "re" else MIXTURE
    return ModelSpec(
        kind=kind,
        n_states=n_states,
        n_covariates=data.n_covariates,
        n_pumps=data.n_pumps,
        n_clusters=getattr(args, "clusters", 0) or 0,
    )


def _write_json(path: Path, text: str, manifest: RunManifest) -> None:
    path.write_text(text)
    manifest.add_output(path)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    manifest = RunManifest("simulate", vars(args).copy(), args.seed)
    t0 = time.perf_counter()
    if args.mixture:
        cfg = GeneratorConfig(
            n_pumps=args.pumps, seed=args.seed,
            sigma_u=None, pi=np.array(args.pi), mu=np.array(args.mu), sigma=args.sigma,
        )
    else:
        cfg = GeneratorConfig(n_pumps=args.pumps, seed=args.seed, sigma_u=args.sigma_u)
    records, u, labels = simulate_records(cfg, n_records=args.records_per_pump)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_records_csv(records, out)
    manifest.add_output(out)
    truth = out.with_suffix(".truth.json")
    truth.write_text(
        json.dumps({"u": u.tolist(), "labels": labels.tolist() if labels is not None else None})
    )
    manifest.add_output(truth)
    manifest.wall_clock_s = time.perf_counter() - t0
    manifest.write(out.with_suffix(".manifest.json"))
    print(f"wrote {len(records)} records for {args.pumps} pumps -> {out}")
    return EXIT_OK


def cmd_discretize(args) -> int:
    manifest = RunManifest("discretize", vars(args).copy(), None)
    t0 = time.perf_counter()
    manifest.add_input(args.input)
    records = ingest_mod.parse_records(args.input)
    spec = compute_cutoffs([r.value for r in records], args.n_states)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    spec.save(out)
    manifest.add_output(out)
    if args.states_out:
        states = assign_states([r.value for r in records], spec)
        with open(args.states_out, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["equipment_id", "item_id", "date", "state"])
            for r, s in zip(records, states):
                writer.writerow([r.equipment_id, r.item_id, r.timestamp.isoformat(), s])
        manifest.add_output(args.states_out)
    manifest.wall_clock_s = time.perf_counter() - t0
    manifest.write(out.with_suffix(".manifest.json"))
    print(f"cutoffs: {spec.cutoffs.tolist()}")
    return EXIT_OK


def cmd_features(args) -> int:
    manifest = RunManifest("features", vars(args).copy(), None)
    t0 = time.perf_counter()
    manifest.add_input(args.input)
    records = ingest_mod.parse_records(args.input)
    y_max = max(r.value for r in records)
    pca = None
    embs = [r.embedding for r in records if r.embedding is not None]
    if len(embs) >= 3:
        pca = fit_pca(np.array(embs), k=3)
    rows = []
    order = []
    for key, series in ingest_mod.group_series(records).items():
        mat = compute_feature_matrix(series, window_days=args.window, y_max=y_max, pca=pca)
        for j, rec in enumerate(series):
            order.append((rec.equipment_id, rec.item_id, rec.timestamp))
            rows.append(CovariateRow(x=mat[j]))
    std_rows, std = standardize(rows)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["equipment_id", "item_id", "date"] + list(FEATURE_NAMES))
        for (eq, item, ts), row in zip(order, std_rows):
            writer.writerow([eq, item, ts.isoformat()] + [repr(float(v)) for v in row.x])
    manifest.add_output(out)
    _write_json(out.with_suffix(".names.json"), json.dumps(list(FEATURE_NAMES)), manifest)
    _write_json(out.with_suffix(".standardizer.json"), std.to_json(), manifest)
    if pca is not None:
        _write_json(out.with_suffix(".pca.json"), pca.to_json(), manifest)
    manifest.wall_clock_s = time.perf_counter() - t0
    manifest.write(out.with_suffix(".manifest.json"))
    print(f"wrote {len(std_rows)} covariate rows -> {out}")
    return EXIT_OK


def _load_feature_map(path: str) -> dict[tuple, np.ndarray]:
    feats = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        names = [c for c in reader.fieldnames if c in FEATURE_NAMES]
        for row in reader:
            key = (row["equipment_id"], row["item_id"], row["date"])
            feats[key] = np.array([float(row[c]) for c in names])
    return feats


def cmd_ingest(args) -> int:
    manifest = RunManifest("ingest", vars(args).copy(), None)
    t0 = time.perf_counter()
    manifest.add_input(args.input)
    manifest.add_input(args.disc_spec)
    records = ingest_mod.parse_records(args.input)
    spec = DiscretizationSpec.load(args.disc_spec)
    states = assign_states([r.value for r in records], spec)
    covariates = None
    if args.features:
        manifest.add_input(args.features)
        fmap = _load_feature_map(args.features)
        covariates = np.array(
            [fmap[(r.equipment_id, r.item_id, r.timestamp.isoformat())] for r in records]
        )
    intervals = ingest_mod.build_intervals(records, states, covariates, n_states=spec.n_states)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if args.format == "jsonl":
        ingest_mod.write_intervals_jsonl(intervals, out)
    else:
        ingest_mod.write_intervals_csv(intervals, out)
    manifest.add_output(out)
    manifest.wall_clock_s = time.perf_counter() - t0
    manifest.write(out.with_suffix(".manifest.json"))
    rate = event_rate(intervals) if intervals else float("nan")
    print(f"wrote {len(intervals)} intervals (event rate {rate:.4f}) -> {out}")
    return EXIT_OK


def cmd_fit(args) -> int:
    manifest = RunManifest("fit", vars(args).copy(), args.seed)
    t0 = time.perf_counter()
    manifest.add_input(args.intervals)
    intervals = ingest_mod.read_intervals_csv(args.intervals)
    data = ingest_mod.IntervalData.from_intervals(intervals)
    spec = _spec_from_intervals(data, args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    try:
        if args.method == "advi":
            cfg = advi_mod.AdviConfig.from_env(seed=args.seed, iterations=args.iters)
            q = advi_mod.fit_advi(data, spec, cfg)
            q.save(out_dir / "posterior.json")
            manifest.add_output(out_dir / "posterior.json")
            rng = np.random.default_rng(cfg.seed + 1)
            trace = advi_mod.draw_posterior(q, cfg.draws, spec, rng)
            trace.save(out_dir / "trace")
            manifest.add_output(out_dir / "trace")
        else:
            warmstart = None
            ncfg = NutsConfig.from_env(seed=args.seed, init=args.init)
            if args.init == "advi":
                acfg = advi_mod.AdviConfig.from_env(seed=args.seed, iterations=args.iters)
                warmstart = advi_mod.fit_advi(data, spec, acfg)
            trace = sample_nuts(data, spec, ncfg, warmstart=warmstart)
            trace.save(out_dir / "trace")
            manifest.add_output(out_dir / "trace")
            report = convergence_report(trace)
            _write_json(out_dir / "convergence.json", report.to_json(), manifest)
            print(f"max rhat {report.max_rhat:.4f}  min ess {report.min_ess:.0f}  "
                  f"divergences {report.divergence_count}")

        ll = np.array(
            [
                pointwise_log_likelihood(data, to_constrained(th, spec)[0])
                for th in trace.stacked()[:: max(1, trace.stacked().shape[0] // 1000)]
            ]
        )
        _write_json(out_dir / "waic.json", waic(ll).to_json(), manifest)
        _write_json(out_dir / "model_spec.json", json.dumps(asdict(spec)), manifest)
    except Exception as exc:
        (out_dir / "failure.json").write_text(json.dumps({"error": str(exc)}))
        print(f"fit failed: {exc} (diagnostics at {out_dir / 'failure.json'})", file=sys.stderr)
        return EXIT_FAIL
    manifest.wall_clock_s = time.perf_counter() - t0
    manifest.write(out_dir / "manifest.json")
    return EXIT_OK


def _parse_cluster_range(text: str) -> list[int]:
    if ".." in text:
        lo, hi = text.split("..")
        return list(range(int(lo), int(hi) + 1))
    return [int(c) for c in text.split(",")]


def cmd_grid(args) -> int:
    manifest = RunManifest("grid", vars(args).copy(), args.seed)
    t0 = time.perf_counter()
    manifest.add_input(args.intervals)
    intervals = ingest_mod.read_intervals_csv(args.intervals)
    data = ingest_mod.IntervalData.from_intervals(intervals)
    n_states = args.n_states or int(max(data.prev_state.max() + 1, 2))
    template = ModelSpec(
        kind=MIXTURE, n_states=n_states, n_covariates=data.n_covariates,
        n_pumps=data.n_pumps, n_clusters=2,
    )
    cs = _parse_cluster_range(args.clusters)
    cfg = advi_mod.AdviConfig.from_env(seed=args.seed, iterations=args.iters)
    grid = grid_search(data, template, cs, cfg, jobs=args.jobs)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = rows_from_grid(grid)
    for c, entry in grid.items():
        if entry.posterior is not None:
            entry.posterior.save(out_dir / f"posterior_C{c}.json")
            manifest.add_output(out_dir / f"posterior_C{c}.json")
    grid_json = {
        "rows": [asdict(r) for r in rows],
        "seed": args.seed,
    }
    _write_json(out_dir / "grid.json", json.dumps(grid_json, indent=2), manifest)

    sel_cfg = SelectionConfig(
        candidate_cs=tuple(cs), waic_tolerance=args.waic_tol,
        min_share=args.min_share, min_gap=args.min_gap,
    )
    report = select_model(rows, sel_cfg)
    _write_json(out_dir / "selection.json", report.to_json(), manifest)
    print(report.table())
    manifest.wall_clock_s = time.perf_counter() - t0
    manifest.write(out_dir / "manifest.json")
    return EXIT_OK


def cmd_select(args) -> int:
    from .selection import CandidateRow

    manifest = RunManifest("select", vars(args).copy(), None)
    t0 = time.perf_counter()
    manifest.add_input(args.grid)
    obj = json.loads(Path(args.grid).read_text())
    rows = [
        CandidateRow(
            n_clusters=r["n_clusters"], waic=r["waic"],
            min_share=r["min_share"], min_gap=r["min_gap"],
            failed=r.get("failed", False),
        )
        for r in obj["rows"]
    ]
    cfg = SelectionConfig(
        waic_tolerance=args.waic_tol, min_share=args.min_share, min_gap=args.min_gap
    )
    report = select_model(rows, cfg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    _write_json(out, report.to_json(), manifest)
    print(report.table())
    manifest.wall_clock_s = time.perf_counter() - t0
    manifest.write(out.with_suffix(".manifest.json"))
    return EXIT_OK


def _deterministic_savefig(fig, path: Path) -> None:
    fig.savefig(path, metadata={"Date": None})


def cmd_report(args) -> int:
    import matplotlib

    matplotlib.use("Agg")
    matplotlib.rcParams["svg.hashsalt"] = "hazmix"
    import matplotlib.pyplot as plt

    manifest = RunManifest("report", vars(args).copy(), None)
    t0 = time.perf_counter()
    trace = SampleTrace.load(args.trace_dir)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    u = trace.stacked_block("u")
    l0 = trace.stacked_block("log_lambda0")
    ranking = rank_effects(u)
    with open(out_dir / "ranking.csv", "w", newline="") as fh:
        writer = csv.DictWriter(
            fh, fieldnames=["pump", "mean", "lower", "upper", "significant", "factor"]
        )
        writer.writeheader()
        writer.writerows(ranking)
    manifest.add_output(out_dir / "ranking.csv")

    horizon = args.horizon
    means = u.mean(axis=0)
    fast = int(np.argmax(means))
    slow = int(np.argmin(means))
    curves = {}
    for label, offs in (
        ("fast", u[:, fast]),
        ("benchmark", np.zeros(u.shape[0])),
        ("slow", u[:, slow]),
    ):
        curves[label] = curve_band(trace, offs, horizon)
    with open(out_dir / "curves.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        qs = sorted(next(iter(curves.values())).keys())
        writer.writerow(["day"] + [f"{lab}_q{q}" for lab in curves for q in qs])
        days = np.arange(0.0, horizon + 1.0, 1.0)
        for i, day in enumerate(days):
            writer.writerow(
                [day] + [repr(float(curves[lab][q][i])) for lab in curves for q in qs]
            )
    manifest.add_output(out_dir / "curves.csv")

    fig, ax = plt.subplots(figsize=(7, 4.5))
    days = np.arange(0.0, horizon + 1.0, 1.0)
    for label, color in (("fast", "tab:red"), ("benchmark", "tab:blue"), ("slow", "tab:green")):
        band = curves[label]
        qs = sorted(band.keys())
        ax.plot(days, band[qs[len(qs) // 2]], color=color, label=label)
        ax.fill_between(days, band[qs[0]], band[qs[-1]], color=color, alpha=0.2)
    ax.set_xlabel("days")
    ax.set_ylabel("expected state")
    ax.legend()
    _deterministic_savefig(fig, out_dir / "degradation_curves.svg")
    plt.close(fig)
    manifest.add_output(out_dir / "degradation_curves.svg")

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.hist(means, bins=30, color="tab:blue", alpha=0.8)
    ax.set_xlabel("posterior mean random effect")
    ax.set_ylabel("pumps")
    _deterministic_savefig(fig, out_dir / "effect_histogram.svg")
    plt.close(fig)
    manifest.add_output(out_dir / "effect_histogram.svg")

    fig, ax = plt.subplots(figsize=(6, 4))
    sorted_means = np.sort(means)[::-1]
    ax.plot(sorted_means, np.arange(sorted_means.size), lw=1)
    ax.set_xlabel("posterior mean random effect")
    ax.set_ylabel("rank")
    _deterministic_savefig(fig, out_dir / "effect_ranking.svg")
    plt.close(fig)
    manifest.add_output(out_dir / "effect_ranking.svg")

    if "pi" in trace.constrained[0]:
        c = trace.constrained[0]["pi"].shape[1]
        assignment = assign_clusters(trace, u.shape[1], c)
        shares = assignment.shares()
        fig, ax = plt.subplots(figsize=(5, 4))
        ax.bar(np.arange(1, c + 1), shares, color="tab:orange")
        ax.set_xlabel("cluster")
        ax.set_ylabel("share of pumps")
        _deterministic_savefig(fig, out_dir / "cluster_composition.svg")
        plt.close(fig)
        manifest.add_output(out_dir / "cluster_composition.svg")

        mu_mean = trace.stacked_block("mu").mean(axis=0)
        fig, ax = plt.subplots(figsize=(7, 4.5))
        for ci in range(c):
            curve = occupancy_curve(l0.mean(axis=0), float(mu_mean[ci]), horizon)
            ax.plot(curve.time_days, curve.expected_state, label=f"cluster {ci + 1}")
        ax.set_xlabel("days")
        ax.set_ylabel("expected state")
        ax.legend()
        _deterministic_savefig(fig, out_dir / "cluster_curves.svg")
        plt.close(fig)
        manifest.add_output(out_dir / "cluster_curves.svg")

    manifest.wall_clock_s = time.perf_counter() - t0
    manifest.write(out_dir / "manifest.json")
    print(f"report written to {out_dir}")
    return EXIT_OK


def cmd_diagnose(args) -> int:
    trace = SampleTrace.load(args.trace_dir)
    report = convergence_report(trace)
    print(f"{'parameter':<16} {'rhat':>8} {'ess':>10}")
    for name, r, e in zip(report.parameters, report.rhat, report.ess_bulk):
        print(f"{name:<16} {r:>8.4f} {e:>10.1f}")
    print(f"max rhat {report.max_rhat:.4f}  min ess {report.min_ess:.1f}  "
          f"divergences {report.divergence_count} ({report.divergence_rate:.2%})")
    if args.out:
        Path(args.out).write_text(report.to_json())
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hazmix", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate synthetic inspection records")
    p.add_argument("--out", required=True)
    p.add_argument("--pumps", type=int, default=50)
    p.add_argument("--records-per-pump", type=int, default=60)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--sigma-u", type=float, default=1.0)
    p.add_argument("--mixture", action="store_true")
    p.add_argument("--pi", type=float, nargs="+", default=[0.6, 0.4])
    p.add_argument("--mu", type=float, nargs="+", default=[-1.5, 0.5])
    p.add_argument("--sigma", type=float, default=0.5)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("discretize", help="compute global percentile cutoffs")
    p.add_argument("--input", required=True)
    p.add_argument("--n-states", type=int, default=8)
    p.add_argument("--out", required=True)
    p.add_argument("--states-out")
    p.set_defaults(func=cmd_discretize)

    p = sub.add_parser("features", help="compute standardized covariates")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--window", type=int, default=90)
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("ingest", help="build the transition-interval table")
    p.add_argument("--input", required=True)
    p.add_argument("--disc-spec", required=True)
    p.add_argument("--features")
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=["csv", "jsonl"], default="csv")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("fit", help="fit one model")
    p.add_argument("--intervals", required=True)
    p.add_argument("--model", choices=["re", "mix"], default="re")
    p.add_argument("--method", choices=["advi", "nuts"], default="advi")
    p.add_argument("--clusters", type=int, default=2)
    p.add_argument("--n-states", type=int)
    p.add_argument("--iters", type=int, default=20_000)
    p.add_argument("--init", choices=["prior", "advi"], default="prior")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("grid", help="mixture grid search over cluster counts")
    p.add_argument("--intervals", required=True)
    p.add_argument("--clusters", default="2..5")
    p.add_argument("--n-states", type=int)
    p.add_argument("--iters", type=int, default=20_000)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--waic-tol", type=float, default=50.0)
    p.add_argument("--min-share", type=float, default=0.05)
    p.add_argument("--min-gap", type=float, default=0.15)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("select", help="apply the three selection rules to grid rows")
    p.add_argument("--grid", required=True)
    p.add_argument("--waic-tol", type=float, default=50.0)
    p.add_argument("--min-share", type=float, default=0.05)
    p.add_argument("--min-gap", type=float, default=0.15)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("report", help="emit tables and figures from a trace")
    p.add_argument("--trace-dir", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--horizon", type=float, default=3650.0)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("diagnose", help="print per-parameter convergence table")
    p.add_argument("--trace-dir", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_diagnose)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
