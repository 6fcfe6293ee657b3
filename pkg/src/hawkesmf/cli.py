"""Command-line front end: simulate event streams, fit them, and drive the
sweep / benchmark experiment recipes."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .estimators import nll_from_theta
from .experiments import (
    BENCH_COLUMNS,
    SWEEP_COLUMNS,
    ConfigError,
    ExperimentConfig,
    build_params,
    run_bench,
    run_fit,
    run_sweep,
    write_rows_csv,
)
from .kernels import ExponentialBasis
from .simulation import EventSequence, StabilityError, simulate_hawkes

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hawkesmf",
        description="Simulate and calibrate networks of self-exciting point processes.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", type=Path, help="experiment config JSON")
        sp.add_argument("--out", type=Path, help="output path")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--threads", type=int, help="worker pool width "
                        "(HAWKESMF_THREADS as fallback)")
        sp.add_argument("--T", type=float, dest="horizon",
                        help="override the observation window")
        sp.add_argument("--d", type=int, dest="n_nodes",
                        help="override the node count")

    sp = sub.add_parser("simulate", help="draw one event stream to CSV")
    common(sp)

    sp = sub.add_parser("fit", help="calibrate one estimator on an event CSV")
    common(sp)
    sp.add_argument("--events", type=Path, required=True, help="event CSV path")
    sp.add_argument("--method", required=True,
                    choices=["mf", "mf_approx", "mle", "cf"])

    sp = sub.add_parser("sweep", help="run the configured parameter sweep")
    common(sp)

    sp = sub.add_parser("bench", help="time every method against a shared "
                        "likelihood target")
    common(sp)
    return parser


def _load_config(args, required: bool = True) -> ExperimentConfig | None:
    if args.config is None:
        if required:
            raise ConfigError("--config is required for this command")
        return None
    try:
        raw = json.loads(Path(args.config).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {args.config}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    overrides = {"seed": args.seed, "T": args.horizon, "d": args.n_nodes,
                 "threads": args.threads}
    for key, value in overrides.items():
        if value is not None:
            raw[key] = value
    return ExperimentConfig.from_dict(raw)


def cmd_simulate(args) -> int:
    cfg = _load_config(args)
    out = args.out or Path("events.csv")
    params = build_params(cfg)
    events = simulate_hawkes(params, cfg.horizon, seed=cfg.seed)
    events.to_csv(out, extra_meta={
        "config": cfg.resolved(),
        "seed": cfg.seed,
        "phi_norm": params.spectral_norm(),
        "realized_rates": events.rates().tolist(),
    })
    print(f"wrote {len(events)} events to {out}")
    print(f"seed {cfg.seed}  mean rate {events.rates().mean():.6g}  "
          f"coupling norm {params.spectral_norm():.6g}")
    return EXIT_OK


def cmd_fit(args) -> int:
    cfg = _load_config(args, required=False)
    events = EventSequence.from_csv(args.events)
    if cfg is not None:
        betas = cfg.betas
    else:
        sidecar = Path(args.events).with_suffix(".json")
        meta = json.loads(sidecar.read_text()) if sidecar.exists() else {}
        betas = meta.get("config", {}).get("betas")
        if betas is None:
            raise ConfigError("kernel decays unknown: pass --config")
    basis = ExponentialBasis(betas)
    res = run_fit(events, args.method, basis, cfg)
    nll = nll_from_theta(res.theta, basis, events)
    walls = "  ".join(f"{k} {v:.4g}s" for k, v in res.wall_time.items())
    print(f"method {res.method}  converged {res.converged}  nll {nll:.10g}")
    if res.residual is not None:
        print(f"residual {res.residual:.6g}")
    print(f"wall: {walls}")
    if args.out is not None:
        doc = {
            "config": cfg.resolved() if cfg is not None else None,
            "events": str(args.events),
            "nll": nll,
            "result": res.to_json_dict(),
        }
        with open(args.out, "w") as f:
            json.dump(doc, f, indent=2)
            f.write("\n")
        print(f"wrote {args.out}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load_config(args)
    out = args.out or Path("sweep.csv")
    rows = run_sweep(cfg, threads=args.threads)
    write_rows_csv(out, rows, SWEEP_COLUMNS, config=cfg.resolved())
    n_err = sum(1 for r in rows if r.get("error"))
    print(f"wrote {len(rows)} rows to {out}" +
          (f" ({n_err} failed, see error column)" if n_err else ""))
    return EXIT_OK


def cmd_bench(args) -> int:
    cfg = _load_config(args)
    out = args.out or Path("bench.csv")
    rows = run_bench(cfg)
    write_rows_csv(out, rows, BENCH_COLUMNS, config=cfg.resolved())
    for row in rows:
        if row["phase"] == "total":
            flag = "" if row["reached"] else "  (target not reached)"
            print(f"seed {row['seed']}  {row['method']:9s} "
                  f"total {row['seconds']:.4g}s{flag}")
    print(f"wrote {len(rows)} rows to {out}")
    return EXIT_OK


_COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "sweep": cmd_sweep,
    "bench": cmd_bench,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, StabilityError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
