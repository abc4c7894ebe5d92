"""Command-line entry point.

Every subcommand reads one YAML config (``--config``) on top of the
defaults and an optional ``--preset``. Any config key can be overridden
with a flag of the same dotted name, e.g. ``--stage1.ais.N 200`` or
``--prior.fit=laplace``.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import pipeline
from .config import PRESETS, ConfigError, build_config, parse_value

logger = logging.getLogger("periodprior")

COMMANDS = {
    "simulate": "write the configured data source to data.csv",
    "periodogram": "Lomb-Scargle periodogram and top peaks",
    "stage1": "GP hyperparameter posterior and period prior",
    "prior-fit": "refit prior.json from existing stage-1 samples",
    "stage2": "parametric model posterior using prior.json",
    "baseline": "parametric model posterior with a uniform period prior",
    "pipeline": "stage 1, prior transfer, stage 2 and manifest",
    "mmse-study": "stage-1 period MMSE error against sample size",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="periodprior",
        description="Two-stage period inference with a GP-derived informative prior.",
        epilog="Unrecognised --dotted.key VALUE flags override config entries.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", type=Path, help="YAML config file (a run manifest also works)")
        p.add_argument("--preset", choices=sorted(PRESETS))
        p.add_argument("--output-dir", type=Path, help="directory for all outputs")
        p.add_argument("--threads", type=int, help="worker threads for target evaluation")
        p.add_argument("--no-plots", action="store_true", help="skip SVG figures")
        if name == "stage2":
            p.add_argument("--prior", type=Path, help="prior file (default <output-dir>/prior.json)")
    return parser


def parse_overrides(tokens) -> list:
    """Turn ``--a.b 1 --c=x`` into ``[("a.b", 1), ("c", "x")]``."""
    out = []
    i = 0
    while i < len(tokens):
        tok = tokens[i]
        if not tok.startswith("--") or len(tok) == 2:
            raise ConfigError(f"{tok}: unexpected argument")
        key = tok[2:]
        if "=" in key:
            key, text = key.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(tokens):
                raise ConfigError(f"{key}: missing value")
            text = tokens[i + 1]
            i += 2
        out.append((key, parse_value(text)))
    return out


def load(args, extra) -> dict:
    overrides = parse_overrides(extra)
    if args.output_dir is not None:
        overrides.append(("output_dir", str(args.output_dir)))
    if args.threads is not None:
        overrides.append(("threads", args.threads))
    if args.no_plots:
        overrides.append(("plots", False))
    return build_config(args.config, args.preset, overrides)


def _print_summary(title, summary):
    print(title)
    for s in summary.values():
        print(f"  {s.name:>8s}  mean={s.mmse_mean:.6g}  map={s.map:.6g}  "
              f"{int(round(100 * s.cred_level))}%=[{s.cred_lo:.6g}, {s.cred_hi:.6g}]")


def run(args, cfg) -> None:
    out = Path(cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    cmd = args.command
    if cmd == "simulate":
        from .timeseries import save_timeseries
        series = pipeline.load_data(cfg)
        save_timeseries(series, out / "data.csv")
        print(f"wrote {series.M} points to {out / 'data.csv'}")
    elif cmd == "periodogram":
        res = pipeline.run_periodogram(cfg, out)["result"]
        print(f"best period {res.best_period:.6g}")
        for f, p in res.peaks:
            print(f"  period={1 / f:.6g}  power={p:.4f}")
    elif cmd == "stage1":
        r = pipeline.run_stage1(cfg, out)
        _print_summary("stage 1", r["result"].summary)
        print(f"prior written to {out / 'prior.json'}")
    elif cmd == "prior-fit":
        r = pipeline.run_prior_fit(cfg, out)
        print(json.dumps(r["prior_meta"]["density"], indent=2))
    elif cmd == "stage2":
        r = pipeline.run_stage2(cfg, args.prior, out)
        _print_summary("stage 2", r["result"].summary)
    elif cmd == "baseline":
        r = pipeline.run_baseline_uniform(cfg, out)
        _print_summary("baseline", r["result"].summary)
    elif cmd == "pipeline":
        r = pipeline.run_pipeline(cfg, out)
        _print_summary("stage 1", r["stage1"]["result"].summary)
        _print_summary("stage 2", r["stage2"]["result"].summary)
        if r["baseline"] is not None:
            _print_summary("baseline", r["baseline"]["result"].summary)
        print(f"manifest {r['manifest']['manifest_hash']}")
    elif cmd == "mmse-study":
        from .sim import SimConfig, TRUE_PERIOD, mmse_study, write_study
        s = cfg["data"]["sim"]
        study_cfg = cfg["mmse_study"]
        sc = SimConfig(n_points=study_cfg["n_points"], sigma_e=s["sigma_e"],
                       x_range=s["x_range"], n_replicates=int(study_cfg["n_replicates"]),
                       seed=cfg["seed"])
        stage1 = dict(cfg["stage1"])
        if study_cfg["fix_sigma_e"]:
            stage1["sigma_e"] = float(s["sigma_e"])
        with pipeline.parallel_map(int(cfg["threads"])) as pmap:
            study = mmse_study(sc, stage1, cfg["data"]["detrend"], map_fn=pmap)
        write_study(study, out / "mmse_table.csv", out / "mmse_summary.csv")
        if cfg["plots"]:
            from .plotting import plot_mmse_box
            plot_mmse_box(study, out / "mmse_box.svg", TRUE_PERIOD)
        for n, row in study.summary.items():
            print(f"  n={n:<5d} median={row.get('median', float('nan')):.6g}  "
                  f"median |error|={row['median_abs_error']:.6g}  missing={row['n_missing']}")


def main(argv=None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load(args, extra)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        run(args, cfg)
    except pipeline.StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
