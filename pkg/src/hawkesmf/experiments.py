"""Experiment drivers behind the CLI: validated configs, parameter sweeps,
benchmark timing runs, and their CSV sinks."""
from __future__ import annotations

import csv
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from itertools import product
from pathlib import Path

import numpy as np

from .aux_stats import compute_aux_stats
from .diagnostics import (
    default_grid_step,
    fluctuation_ratio_empirical,
    fluctuation_ratio_theoretical,
    mf_error_bound,
    rel_error,
    abs_error,
)
from .estimators import (
    FitResult,
    _channel_values,
    fit_contrast,
    fit_mean_field,
    fit_mean_field_approx,
    fit_mle,
    nll_from_theta,
)
from .kernels import ExponentialBasis
from .simulation import (
    EventSequence,
    HawkesParams,
    StabilityError,
    make_block_alpha,
    simulate_hawkes,
)

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "build_params",
    "run_sweep",
    "run_bench",
    "run_fit",
    "write_rows_csv",
    "SWEEP_COLUMNS",
    "BENCH_COLUMNS",
]


class ConfigError(ValueError):
    """Invalid experiment configuration (exit code 2 territory)."""


METHOD_NAMES = ("mf", "mf_approx", "mle", "cf")
AXIS_NAMES = ("T", "d", "phi_norm", "beta_in")

SWEEP_COLUMNS = [
    "T", "d", "phi_norm", "beta_in", "seed", "method", "n_events",
    "delta_alpha_rel", "delta_alpha_abs", "nll",
    "wall_preprocess", "wall_solve", "wall_total",
    "r_empirical", "r_theoretical", "mf_bound_max", "error",
]

BENCH_COLUMNS = [
    "seed", "method", "phase", "seconds", "nll", "target_nll",
    "reached", "error",
]

_FIELD_DEFAULTS = {
    "betas": (1.0,),
    "phi_norm": 0.0,
    "n_blocks": 1,
    "slots": None,
    "lambda_target": None,
    "seed": 0,
    "n_seeds": 1,
    "methods": ("mf",),
    "sweep": {},
    "tol": 1e-8,
    "max_iter": 1000,
    "mf_order": 0,
    "grid_step": None,
    "lag_max": 0.0,
    "bin_width": 0.1,
    "quad_step": None,
    "threads": None,
}


@dataclass
class ExperimentConfig:
    """Fully explicit description of one experiment; everything that affects
    the output lives here and is echoed into every artifact."""

    n_nodes: int
    horizon: float
    mu: float | None
    betas: tuple = _FIELD_DEFAULTS["betas"]
    phi_norm: float = _FIELD_DEFAULTS["phi_norm"]
    n_blocks: int = _FIELD_DEFAULTS["n_blocks"]
    slots: tuple | None = _FIELD_DEFAULTS["slots"]
    lambda_target: float | None = _FIELD_DEFAULTS["lambda_target"]
    seed: int = _FIELD_DEFAULTS["seed"]
    n_seeds: int = _FIELD_DEFAULTS["n_seeds"]
    methods: tuple = _FIELD_DEFAULTS["methods"]
    sweep: dict = None
    tol: float = _FIELD_DEFAULTS["tol"]
    max_iter: int = _FIELD_DEFAULTS["max_iter"]
    mf_order: int | str = _FIELD_DEFAULTS["mf_order"]
    grid_step: float | None = _FIELD_DEFAULTS["grid_step"]
    lag_max: float = _FIELD_DEFAULTS["lag_max"]
    bin_width: float = _FIELD_DEFAULTS["bin_width"]
    quad_step: float | None = _FIELD_DEFAULTS["quad_step"]
    threads: int | None = _FIELD_DEFAULTS["threads"]

    def __post_init__(self):
        if self.sweep is None:
            self.sweep = {}
        self.betas = tuple(float(b) for b in self.betas)
        self.methods = tuple(self.methods)
        if self.slots is not None:
            self.slots = tuple(
                {"norm": float(s["norm"]), "complement": bool(s.get("complement", False))}
                for s in self.slots
            )
        self.validate()

    # -- construction --------------------------------------------------------

    _JSON_KEYS = {
        "d": "n_nodes", "T": "horizon", "mu": "mu", "betas": "betas",
        "phi_norm": "phi_norm", "n_blocks": "n_blocks", "slots": "slots",
        "lambda_target": "lambda_target", "seed": "seed", "n_seeds": "n_seeds",
        "methods": "methods", "sweep": "sweep", "tol": "tol",
        "max_iter": "max_iter", "mf_order": "mf_order",
        "grid_step": "grid_step", "lag_max": "lag_max",
        "bin_width": "bin_width", "quad_step": "quad_step", "threads": "threads",
    }

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        unknown = sorted(set(raw) - set(cls._JSON_KEYS))
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        missing = [k for k in ("d", "T") if k not in raw]
        if missing:
            raise ConfigError(f"missing required config keys: {missing}")
        kwargs = {cls._JSON_KEYS[k]: v for k, v in raw.items()}
        kwargs.setdefault("mu", None)
        try:
            return cls(**kwargs)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc

    def resolved(self) -> dict:
        """Every field, explicitly, in the JSON spelling."""
        inv = {v: k for k, v in self._JSON_KEYS.items()}
        out = {}
        for attr, key in sorted(inv.items(), key=lambda kv: kv[1]):
            value = getattr(self, attr)
            if isinstance(value, tuple):
                value = list(value)
            out[key] = value
        return out

    def validate(self) -> None:
        if self.n_nodes < 1:
            raise ConfigError("d must be >= 1")
        if self.horizon <= 0.0:
            raise ConfigError("T must be positive")
        if not self.betas or any(b <= 0.0 for b in self.betas):
            raise ConfigError("betas must be a nonempty list of positive decays")
        if self.mu is None and self.lambda_target is None:
            raise ConfigError("either mu or lambda_target is required")
        if not self.methods:
            raise ConfigError("methods must be nonempty")
        bad = sorted(set(self.methods) - set(METHOD_NAMES))
        if bad:
            raise ConfigError(f"unknown methods: {bad} (choose from {list(METHOD_NAMES)})")
        if self.slots is None:
            if not 0.0 <= self.phi_norm < 1.0:
                raise ConfigError(
                    f"coupling norm per-block phi_norm={self.phi_norm} must lie in [0, 1)"
                )
        elif len(self.slots) != len(self.betas):
            raise ConfigError("slots must match betas one-to-one")
        for axis, values in self.sweep.items():
            if axis not in AXIS_NAMES:
                raise ConfigError(f"unknown sweep axis {axis!r} (choose from {list(AXIS_NAMES)})")
            if not isinstance(values, (list, tuple)) or not values:
                raise ConfigError(f"sweep axis {axis!r} must be a nonempty list")
        if "beta_in" in self.sweep and len(self.betas) != 1:
            raise ConfigError("the beta_in axis requires a single true decay")
        if self.n_seeds < 1:
            raise ConfigError("n_seeds must be >= 1")
        if self.max_iter < 0:
            raise ConfigError("max_iter must be >= 0")

    # -- derived helpers -----------------------------------------------------

    def seeds(self) -> list[int]:
        return [self.seed + k for k in range(self.n_seeds)]

    def effective_dimension(self, n_nodes: int) -> float:
        """Node count governing the fluctuation prediction: disconnected
        equal blocks behave as independent copies of one block."""
        if self.slots is not None and any(s["complement"] for s in self.slots):
            return float(n_nodes)
        return n_nodes / self.n_blocks


def resolve_threads(cli_value: int | None, config_value: int | None) -> int:
    """--threads beats the config, which beats HAWKESMF_THREADS, default 1."""
    for value in (cli_value, config_value, os.environ.get("HAWKESMF_THREADS")):
        if value is not None:
            n = int(value)
            if n < 1:
                raise ConfigError("threads must be >= 1")
            return n
    return 1


def build_params(cfg: ExperimentConfig, n_nodes: int | None = None,
                 phi_norm: float | None = None) -> HawkesParams:
    """Materialize the generating process at one sweep point."""
    d = cfg.n_nodes if n_nodes is None else int(n_nodes)
    phi = cfg.phi_norm if phi_norm is None else float(phi_norm)
    p = len(cfg.betas)
    basis = ExponentialBasis(cfg.betas)
    if cfg.slots is not None:
        alpha = np.zeros((d, d, p))
        for q, slot in enumerate(cfg.slots):
            alpha += make_block_alpha(d, cfg.n_blocks, slot["norm"], p,
                                      slot=q, complement=slot["complement"])
    elif phi > 0.0:
        alpha = make_block_alpha(d, cfg.n_blocks, phi, p, slot=0)
    else:
        alpha = np.zeros((d, d, p))
    mu_value = cfg.mu if cfg.lambda_target is None else cfg.lambda_target * (1.0 - phi)
    params = HawkesParams(np.full(d, float(mu_value)), alpha, basis)
    norm = params.spectral_norm()
    if norm >= 1.0:
        raise StabilityError(f"coupling spectral norm {norm:.6g} >= 1: process is unstable")
    return params


# -- sweep -------------------------------------------------------------------


def _axis_points(cfg: ExperimentConfig) -> list[dict]:
    axes = [(name, list(cfg.sweep[name])) for name in AXIS_NAMES if name in cfg.sweep]
    if not axes:
        return [{}]
    names = [a[0] for a in axes]
    return [dict(zip(names, combo)) for combo in product(*(a[1] for a in axes))]


def _fit_one(method: str, cfg: ExperimentConfig, events: EventSequence,
             basis_fit: ExponentialBasis, aux_cache: dict) -> FitResult:
    if method in ("mf", "mf_approx", "cf") and "aux" not in aux_cache:
        t0 = time.perf_counter()
        aux_cache["aux"] = compute_aux_stats(events, basis_fit)
        aux_cache["wall"] = time.perf_counter() - t0
    if method == "mf":
        return fit_mean_field(aux_cache["aux"], want_covariance=True,
                              preprocess_seconds=aux_cache["wall"])
    if method == "mf_approx":
        return fit_mean_field_approx(aux_cache["aux"], order=cfg.mf_order,
                                     want_covariance=True,
                                     preprocess_seconds=aux_cache["wall"])
    if method == "mle":
        return fit_mle(events, basis_fit, tol=cfg.tol, max_iter=cfg.max_iter)
    if method == "cf":
        return fit_contrast(events, basis_fit, quad_step=cfg.quad_step,
                            aux=aux_cache["aux"])
    raise ConfigError(f"unknown method {method!r}")


def _sweep_point_rows(cfg: ExperimentConfig, point: dict, seed: int) -> list[dict]:
    """All method rows for one (axis point, seed); never raises."""
    base = {c: "" for c in SWEEP_COLUMNS}
    base["T"] = point.get("T", cfg.horizon)
    base["d"] = int(point.get("d", cfg.n_nodes))
    base["phi_norm"] = point.get("phi_norm", cfg.phi_norm)
    base["beta_in"] = point.get("beta_in", "")
    base["seed"] = seed
    try:
        params = build_params(cfg, n_nodes=base["d"], phi_norm=base["phi_norm"])
        events = simulate_hawkes(params, float(base["T"]), seed=seed)
        base["n_events"] = len(events)
        basis_fit = (ExponentialBasis([float(base["beta_in"])])
                     if base["beta_in"] != "" else params.basis)
        grid_step = cfg.grid_step or default_grid_step(events, params.basis)
        r_emp = fluctuation_ratio_empirical(events, params, grid_step)
        base["r_empirical"] = float(np.nanmean(r_emp))
        if len(cfg.betas) == 1:
            lam = float(np.mean(params.stationary_rates()))
            base["r_theoretical"] = fluctuation_ratio_theoretical(
                max(1, round(cfg.effective_dimension(base["d"]))),
                float(base["phi_norm"]) if cfg.slots is None else params.spectral_norm(),
                cfg.betas[0], lam)
        channel_values = _channel_values(events, basis_fit)
    except Exception as exc:  # noqa: BLE001 - partial failure becomes data
        rows = []
        for method in cfg.methods:
            row = dict(base)
            row["method"] = method
            row["error"] = f"{type(exc).__name__}: {exc}"
            rows.append(row)
        return rows

    alpha_true = params.alpha
    aux_cache: dict = {}
    rows = []
    for method in cfg.methods:
        row = dict(base)
        row["method"] = method
        try:
            res = _fit_one(method, cfg, events, basis_fit, aux_cache)
            row["wall_preprocess"] = res.wall_time.get("preprocess", 0.0)
            row["wall_solve"] = res.wall_time.get("solve", 0.0)
            row["wall_total"] = sum(res.wall_time.values())
            row["nll"] = nll_from_theta(res.theta, basis_fit, events,
                                        channel_values=channel_values)
            if res.alpha.shape == alpha_true.shape:
                row["delta_alpha_abs"] = abs_error(res.alpha, alpha_true)
                if np.any(alpha_true != 0.0):
                    row["delta_alpha_rel"] = rel_error(res.alpha, alpha_true)
            if method in ("mf", "mf_approx") and res.covariance is not None:
                bound = mf_error_bound(aux_cache["aux"], res.theta, events,
                                       grid_step=grid_step,
                                       covariance=res.covariance)
                row["mf_bound_max"] = float(np.nanmax(bound))
        except Exception as exc:  # noqa: BLE001
            row["error"] = f"{type(exc).__name__}: {exc}"
        rows.append(row)
    return rows


def _sweep_task(payload: tuple) -> list[dict]:
    raw, point, seed = payload
    return _sweep_point_rows(ExperimentConfig.from_dict(raw), point, seed)


def run_sweep(cfg: ExperimentConfig, threads: int | None = None) -> list[dict]:
    """One row per (axis point, seed, method), deterministically ordered."""
    width = resolve_threads(threads, cfg.threads)
    tasks = [(cfg.resolved(), point, seed)
             for point in _axis_points(cfg) for seed in cfg.seeds()]
    if width == 1 or len(tasks) == 1:
        chunks = [_sweep_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=width) as pool:
            chunks = list(pool.map(_sweep_task, tasks))
    rows = [row for chunk in chunks for row in chunk]

    def key(row):
        return tuple(_sort_value(row[c]) for c in
                     ("T", "d", "phi_norm", "beta_in", "seed", "method"))

    rows.sort(key=key)
    return rows


def _sort_value(v):
    if isinstance(v, str):
        return (1, v)
    return (0, float(v))


# -- bench -------------------------------------------------------------------


def run_bench(cfg: ExperimentConfig) -> list[dict]:
    """Wall-time split per method against the likelihood target set by a
    converged MLE run (within 0.1 percent)."""
    rows = []
    for seed in cfg.seeds():
        params = build_params(cfg)
        events = simulate_hawkes(params, cfg.horizon, seed=seed)
        basis = params.basis
        channel_values = _channel_values(events, basis)

        mle = fit_mle(events, basis, tol=cfg.tol, max_iter=cfg.max_iter,
                      record_trace=True)
        nll_star = mle.meta["nll"]
        target = nll_star + 1e-3 * abs(nll_star)
        init_theta = np.zeros_like(mle.theta)
        init_theta[:, 0] = events.rates()
        nll_init = nll_from_theta(init_theta, basis, events, channel_values)
        trace = mle.meta.get("trace", [])
        t_reach = mle.wall_time["solve"]
        nll_reach = nll_star
        for elapsed, value in trace:
            if value <= target:
                t_reach, nll_reach = elapsed, value
                break

        def emit(method, phase, seconds, nll="", reached="", error=""):
            rows.append({
                "seed": seed, "method": method, "phase": phase,
                "seconds": seconds, "nll": nll, "target_nll": target,
                "reached": reached, "error": error,
            })

        emit("mle", "precompute", mle.wall_time["preprocess"], nll=nll_init)
        emit("mle", "iterate", t_reach, nll=nll_reach)
        emit("mle", "total", mle.wall_time["preprocess"] + t_reach,
             nll=nll_star, reached=bool(nll_reach <= target))

        aux_cache: dict = {}
        for method in cfg.methods:
            if method == "mle":
                continue
            try:
                res = _fit_one(method, cfg, events, basis, aux_cache)
            except Exception as exc:  # noqa: BLE001
                emit(method, "total", "", error=f"{type(exc).__name__}: {exc}")
                continue
            nll = nll_from_theta(res.theta, basis, events, channel_values)
            pre = res.wall_time.get("preprocess", 0.0)
            solve = res.wall_time.get("solve", 0.0)
            emit(method, "preprocess", pre)
            emit(method, "solve", solve, nll=nll)
            emit(method, "total", pre + solve, nll=nll,
                 reached=bool(nll <= target))
    return rows


# -- single fits (cmd_fit) ---------------------------------------------------


def run_fit(events: EventSequence, method: str, basis: ExponentialBasis,
            cfg: ExperimentConfig | None = None) -> FitResult:
    """Run one named estimator with the config's tolerances (or defaults)."""
    if method not in METHOD_NAMES:
        raise ConfigError(f"unknown method {method!r} (choose from {list(METHOD_NAMES)})")
    tol = cfg.tol if cfg else _FIELD_DEFAULTS["tol"]
    max_iter = cfg.max_iter if cfg else _FIELD_DEFAULTS["max_iter"]
    mf_order = cfg.mf_order if cfg else _FIELD_DEFAULTS["mf_order"]
    quad_step = cfg.quad_step if cfg else None
    if method == "mle":
        return fit_mle(events, basis, tol=tol, max_iter=max_iter)
    if method == "cf":
        return fit_contrast(events, basis, quad_step=quad_step)
    t0 = time.perf_counter()
    aux = compute_aux_stats(events, basis)
    wall = time.perf_counter() - t0
    if method == "mf":
        return fit_mean_field(aux, want_covariance=True, preprocess_seconds=wall)
    return fit_mean_field_approx(aux, order=mf_order, want_covariance=True,
                                 preprocess_seconds=wall)


# -- CSV sink ----------------------------------------------------------------


def _format_cell(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        return f"{v:.17g}"
    return str(v)


def write_rows_csv(path, rows: list[dict], columns: list[str],
                   config: dict | None = None) -> None:
    """Write a tidy CSV, with the resolved config embedded as a comment line."""
    path = Path(path)
    with open(path, "w", newline="") as f:
        if config is not None:
            f.write("# config " + json.dumps(config, sort_keys=True) + "\n")
        writer = csv.writer(f)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_format_cell(row.get(c, "")) for c in columns])


def read_embedded_config(path) -> dict | None:
    """Recover the resolved config echoed into a CSV written by this module."""
    with open(path) as f:
        first = f.readline()
    if first.startswith("# config "):
        return json.loads(first[len("# config "):])
    return None
