"""Command line entry point.

Four subcommands: ``gen`` writes synthetic delay matrices, ``analyze`` runs
the delay-space analytics battery, ``simulate`` runs one search campaign,
and ``compare`` runs several algorithms (optionally sweeping one parameter)
against paired seeds.  Every output CSV starts with comment lines carrying
the seed and a config hash, so results are always attributable.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import __version__
from .config import (
    SWEEPABLE,
    config_digest,
    load_config_file,
    make_sim_config,
)
from .delay_space import (
    DelayDataError,
    compute_inframetric_stats,
    gen_synthetic,
    growth_stats,
    instance_rho,
    load_matrix,
    required_samples,
    save_matrix,
)
from .metrics import summarize, write_records_csv, write_table_csv
from .simulator import ConfigError, RunReport, load_or_generate, run


def _header(cmd: str, seed: int, digest: str) -> list[str]:
    return [f"dnnsim {__version__} {cmd}", f"seed = {seed}", f"config_hash = {digest}"]


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out", type=Path, default=Path("."), help="output directory")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override a config key (repeatable)",
    )


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dnnsim", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="write a synthetic delay matrix")
    g.add_argument("--kind", choices=("euclidean", "clustered", "asymmetric"), default="euclidean")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--noise", type=float, default=0.0)
    g.add_argument("--asym", type=float, default=0.0)
    g.add_argument("--clusters", type=int, default=3)
    g.add_argument("--scale", type=float, default=200.0)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--format", choices=("king-text", "csv"), default="king-text")
    g.add_argument("--out", type=Path, required=True, help="output matrix file")

    a = sub.add_parser("analyze", help="delay-space analytics to CSV")
    a.add_argument("--matrix", type=Path, required=True)
    a.add_argument("--format", choices=("king-text", "csv"), default="king-text")
    a.add_argument("--rho", type=float, default=3.0)
    a.add_argument("--triples", type=int, default=100_000)
    a.add_argument("--node-fraction", type=float, default=1.0)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--out", type=Path, default=Path("."))

    s = sub.add_parser("simulate", help="run one search campaign from a config file")
    s.add_argument("--config", type=Path, required=True)
    _add_common(s)

    c = sub.add_parser("compare", help="paired-seed multi-algorithm campaign")
    c.add_argument("--config", type=Path, required=True)
    _add_common(c)
    return ap


def _apply_overrides(kv: dict[str, str], args) -> dict[str, str]:
    for item in args.overrides:
        if "=" not in item:
            raise ConfigError(item, "override must look like KEY=VALUE")
        key, val = item.split("=", 1)
        kv[key.strip()] = val.strip()
    if args.seed is not None:
        kv["seed"] = str(args.seed)
    return kv


def _cmd_gen(args) -> int:
    m = gen_synthetic(
        args.n,
        args.kind,
        noise=args.noise,
        asym_factor=args.asym,
        seed=args.seed,
        clusters=args.clusters,
        scale=args.scale,
    )
    args.out.parent.mkdir(parents=True, exist_ok=True)
    save_matrix(m, args.out, fmt=args.format)
    rho = instance_rho(m, sample_triples=min(100_000, args.n**2 * 4), seed=args.seed)
    pos = m.values[(m.values > 0)]
    radii = [float(x) for x in (
        0.1 * pos.max(), 0.25 * pos.max(), 0.5 * pos.max(),
    )]
    growth = growth_stats(m, rho=3.0, radii=radii, seed=args.seed)
    print(f"wrote {args.out} (n={m.n}, symmetric={m.symmetric})")
    print(f"instance rho (sampled, +slack): {rho:.4f}")
    for r, med, p90 in growth:
        print(f"growth at r={r:.1f} ms: median {med:.3f}, p90 {p90:.3f}")
    return 0


def _cmd_analyze(args) -> int:
    m = load_matrix(args.matrix, args.format)
    stats = compute_inframetric_stats(
        m,
        rho=args.rho,
        sample_triples=args.triples,
        node_fraction=args.node_fraction,
        seed=args.seed,
    )
    digest = config_digest(
        {
            "matrix": str(args.matrix),
            "rho": str(args.rho),
            "triples": str(args.triples),
            "node_fraction": str(args.node_fraction),
        }
    )
    hdr = _header("analyze", args.seed, digest)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)

    rho_rows = [{"stat": f"pct_{p:g}", "value": v} for p, v in sorted(stats.rho.quantiles.items())]
    rho_rows += [
        {"stat": "frac_gt2", "value": stats.rho.frac_gt2},
        {"stat": "frac_gt3", "value": stats.rho.frac_gt3},
        {"stat": "sampled", "value": stats.rho.sampled},
        {"stat": "skipped", "value": stats.rho.skipped},
        {"stat": "delta_ratio", "value": stats.delta_ratio},
    ]
    write_table_csv(out / "rho.csv", rho_rows, hdr)
    write_table_csv(
        out / "growth.csv",
        [
            {"radius_ms": r, "growth_median": med, "growth_p90": p90}
            for r, med, p90 in stats.growth_by_radius
        ],
        hdr,
    )
    write_table_csv(
        out / "alpha.csv",
        [{"radius_ms": r, "x": x, "alpha_median": a} for r, x, a in stats.alpha_by_radius_and_x],
        hdr,
    )
    write_table_csv(
        out / "ring_occupancy.csv",
        [{"ring": i, "fraction": f} for i, f in stats.ring_occupancy],
        hdr,
    )
    samples_rows = []
    for beta in (0.2, 0.4, 0.6, 0.8, 1.0):
        for alpha_i in range(9):
            alpha = alpha_i * 0.25
            samples_rows.append(
                {
                    "rho": args.rho,
                    "beta": beta,
                    "alpha": alpha,
                    "samples": required_samples(args.rho, beta, alpha),
                }
            )
    write_table_csv(out / "samples_table.csv", samples_rows, hdr)
    print(f"wrote rho.csv growth.csv alpha.csv ring_occupancy.csv samples_table.csv to {out}")
    return 0


def _write_campaign(out: Path, tag: str, report: RunReport, hdr: list[str]) -> list[dict]:
    write_records_csv(out / f"records_{tag}.csv", report.records, hdr)
    write_table_csv(out / f"overhead_{tag}.csv", report.overhead, hdr)
    rows = summarize(report.records)
    if report.trace is not None:
        lines = [f"# {h}" for h in hdr]
        lines += ["\t".join(str(x) for x in t) for t in report.trace]
        (out / f"trace_{tag}.tsv").write_text("\n".join(lines) + "\n")
    return rows


def _cmd_simulate(args) -> int:
    kv = _apply_overrides(load_config_file(args.config), args)
    config = make_sim_config(kv)
    digest = config_digest(kv)
    hdr = _header("simulate", config.seed, digest)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    report = run(config)
    rows = _write_campaign(out, config.algorithm, report, hdr)
    write_table_csv(out / "summary.csv", rows, hdr)
    print(f"wrote records_{config.algorithm}.csv and summary.csv to {out}")
    return 0


def _cmd_compare(args) -> int:
    kv = _apply_overrides(load_config_file(args.config), args)
    algorithms = [a.strip() for a in kv.get("algorithms", "hybrid,coordinate,direct,meridian").split(",") if a.strip()]
    sweep_key = kv.get("sweep")
    sweep_values = [v.strip() for v in kv.get("sweep_values", "").split(",") if v.strip()]
    if sweep_key and sweep_key not in SWEEPABLE:
        raise ConfigError("sweep", f"{sweep_key!r} is not a sweepable key")
    if sweep_key and not sweep_values:
        raise ConfigError("sweep_values", "sweep requires a comma-separated value list")
    digest = config_digest(kv)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    base_kv = {k: v for k, v in kv.items() if k not in ("algorithms", "sweep", "sweep_values")}
    hdr = _header("compare", int(kv.get("seed", "1")), digest)

    # the matrix is shared across all runs so comparisons are paired
    probe_config = make_sim_config({**base_kv, "algorithm": algorithms[0]})
    matrix = load_or_generate(probe_config)

    all_rows: list[dict] = []
    points = [(sweep_key, v) for v in sweep_values] if sweep_key else [(None, None)]
    for key, value in points:
        for algo in algorithms:
            run_kv = dict(base_kv)
            run_kv["algorithm"] = algo
            if key is not None:
                run_kv[key] = value
            config = make_sim_config(run_kv)
            report = run(config, matrix=matrix)
            tag = algo if key is None else f"{algo}_{key}{value}"
            rows = _write_campaign(out, tag, report, hdr)
            for row in rows:
                if key is not None:
                    row = {"sweep_key": key, "sweep_value": value, **row}
                all_rows.append(row)
    write_table_csv(out / "summary.csv", all_rows, hdr)
    print(f"wrote {len(all_rows)} summary rows to {out / 'summary.csv'}")
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "gen":
            return _cmd_gen(args)
        if args.command == "analyze":
            return _cmd_analyze(args)
        if args.command == "simulate":
            return _cmd_simulate(args)
        if args.command == "compare":
            return _cmd_compare(args)
    except (ConfigError, DelayDataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    raise AssertionError("unreachable")


if __name__ == "__main__":
    sys.exit(main())
