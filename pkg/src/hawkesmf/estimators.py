"""Estimators: quadratic-surrogate (direct, closed-form approximate), maximum
likelihood, and grid-quadrature least squares.

All of them return per-node parameter rows in the flattened channel layout
(baseline first).  The surrogate fits consume :class:`~hawkesmf.aux_stats.AuxStats`;
the likelihood-based fits work on the raw events with per-event channel values
precomputed once.
"""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg
from scipy.optimize import minimize

from . import _core
from .aux_stats import AuxStats, _conv_rows_generic, _time_avg_exact, _time_avg_generic, compute_aux_stats
from .kernels import ExponentialBasis, KernelBasis
from .simulation import EventSequence, HawkesParams

__all__ = [
    "FitResult",
    "fit_mean_field",
    "fit_mean_field_approx",
    "fit_mle",
    "fit_contrast",
    "neg_log_likelihood",
    "nll_from_theta",
    "nll_gradient",
]

logger = logging.getLogger("hawkesmf")


@dataclass
class FitResult:
    """Outcome of one calibration run.

    theta rows are (baseline, channel weights); ``covariance`` holds the
    per-node sampling-covariance blocks (inverse statistics matrix divided by
    the horizon) when requested.
    """

    theta: np.ndarray
    method: str
    wall_time: dict
    covariance: np.ndarray | None = None
    residual: float | None = None
    iterations: int | None = None
    converged: bool = True
    order: int | str | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n_nodes(self) -> int:
        return self.theta.shape[0]

    @property
    def n_basis(self) -> int:
        return (self.theta.shape[1] - 1) // self.theta.shape[0]

    @property
    def mu(self) -> np.ndarray:
        return self.theta[:, 0]

    @property
    def alpha(self) -> np.ndarray:
        d, p = self.n_nodes, self.n_basis
        return self.theta[:, 1:].reshape(d, d, p)

    def clipped_theta(self) -> np.ndarray:
        """Componentwise max(theta, 0); unconstrained fits may dip below zero."""
        return np.clip(self.theta, 0.0, None)

    def params(self, basis: KernelBasis, clip: bool = False) -> HawkesParams:
        theta = self.clipped_theta() if clip else self.theta
        return HawkesParams.from_theta(theta, basis)

    def to_json_dict(self) -> dict:
        out = {
            "method": self.method,
            "theta": self.theta.tolist(),
            "wall_time": self.wall_time,
            "residual": self.residual,
            "iterations": self.iterations,
            "converged": self.converged,
            "order": self.order,
            "meta": self.meta,
        }
        if self.covariance is not None:
            out["covariance"] = self.covariance.tolist()
        return out

    def save(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_json_dict(), f, indent=2)
            f.write("\n")

    @classmethod
    def load(cls, path) -> "FitResult":
        doc = json.loads(Path(path).read_text())
        cov = doc.get("covariance")
        return cls(
            theta=np.asarray(doc["theta"], dtype=np.float64),
            method=doc["method"],
            wall_time=doc["wall_time"],
            covariance=None if cov is None else np.asarray(cov, dtype=np.float64),
            residual=doc.get("residual"),
            iterations=doc.get("iterations"),
            converged=doc.get("converged", True),
            order=doc.get("order"),
            meta=doc.get("meta", {}),
        )


# -- shared helpers ----------------------------------------------------------


def _solve_spd(mat: np.ndarray, rhs: np.ndarray, label: str):
    """Cholesky solve; semidefinite matrices get a logged ridge, indefinite
    ones an error naming the offender and its smallest eigenvalue."""
    try:
        cf = scipy.linalg.cho_factor(mat, check_finite=False)
        return scipy.linalg.cho_solve(cf, rhs, check_finite=False)
    except scipy.linalg.LinAlgError:
        w_min = float(scipy.linalg.eigvalsh(mat, check_finite=False)[0])
        trace = float(np.trace(mat))
        if w_min < -1e-10 * trace:
            raise np.linalg.LinAlgError(
                f"{label}: statistics matrix is indefinite "
                f"(smallest eigenvalue {w_min:.6e})"
            ) from None
        ridge = 1e-10 * trace / mat.shape[0]
        logger.warning("%s: near-singular statistics matrix, adding ridge %.3e",
                       label, ridge)
        return scipy.linalg.solve(mat + ridge * np.eye(mat.shape[0]), rhs,
                                  assume_a="sym", check_finite=False)


def _time_avg(events: EventSequence, basis: KernelBasis) -> np.ndarray:
    if isinstance(basis, ExponentialBasis):
        return _time_avg_exact(events, basis)
    return _time_avg_generic(events, basis)


def _channel_values(events: EventSequence, basis: KernelBasis) -> np.ndarray:
    """Per-event channel values (constant channel first)."""
    if isinstance(basis, ExponentialBasis):
        return _core._conv_matrix(events.times, events.nodes, basis.decays,
                                  events.n_nodes)
    return _conv_rows_generic(events, basis)


def _require_all_nodes(aux: AuxStats, what: str) -> None:
    bad = np.flatnonzero(~aux.valid_nodes()).tolist()
    if bad:
        raise ValueError(f"{what} needs events on every node; empty: {bad}")


# -- quadratic surrogate -----------------------------------------------------


def fit_mean_field(aux: AuxStats, want_covariance: bool = False,
                   preprocess_seconds: float = 0.0) -> FitResult:
    """Solve the per-node surrogate systems  gram_i @ theta_i = 2 event_avg_i - time_avg.

    The solution is unconstrained: small negative entries are statistical
    fluctuations and are reported as-is (see :meth:`FitResult.clipped_theta`).
    Nodes skipped during accumulation stay NaN.
    """
    t0 = time.perf_counter()
    d, size = aux.n_nodes, aux.size
    theta = np.full((d, size), np.nan)
    cov = np.full((d, size, size), np.nan) if want_covariance else None
    residual = 0.0
    eye = np.eye(size)
    for i in range(d):
        if not aux.valid_nodes()[i]:
            logger.warning("node %d has no events; leaving its row NaN", i)
            continue
        mat = aux.gram[i]
        rhs = 2.0 * aux.event_avg[i] - aux.time_avg
        theta[i] = _solve_spd(mat, rhs, f"node {i}")
        residual = max(residual, float(np.linalg.norm(mat @ theta[i] - rhs)))
        if want_covariance:
            cov[i] = _solve_spd(mat, eye, f"node {i} covariance") / aux.horizon
    return FitResult(
        theta=theta,
        method="mf",
        wall_time={"preprocess": preprocess_seconds,
                   "solve": time.perf_counter() - t0},
        covariance=cov,
        residual=residual,
    )


def _nu_matrix(basis: KernelBasis) -> np.ndarray:
    if isinstance(basis, ExponentialBasis):
        return basis.cross_integral_matrix()
    p = basis.n_basis
    return np.array([[basis.cross_integral(q, q2) for q2 in range(p)]
                     for q in range(p)])


def _zero_order_inverse_factor(rates: np.ndarray, nu: np.ndarray, p: int) -> np.ndarray:
    """Node-independent factor B of the closed-form inverse: C0_i = rates[i] * B.

    B has a bordered block structure: per-node diagonal blocks inv(rate_j * nu),
    border entries tied to their row sums, and a corner collecting the total.
    """
    d = rates.shape[0]
    size = d * p + 1
    b = np.zeros((size, size))
    nu_inv = np.linalg.inv(nu)
    corner = 1.0
    for j in range(d):
        z = nu_inv / rates[j]
        sl = slice(1 + j * p, 1 + (j + 1) * p)
        b[sl, sl] = z
        border = -rates[j] * z.sum(axis=1)
        b[0, sl] = border
        b[sl, 0] = border
        corner += rates[j] ** 2 * z.sum()
    b[0, 0] = corner
    return b


def _zero_order_gram(rates: np.ndarray, nu: np.ndarray, p: int) -> np.ndarray:
    """Node-independent factor of the decorrelated statistics matrix:
    gram0_i = A / rates[i] with A = outer(ext, ext) + per-node nu blocks."""
    d = rates.shape[0]
    ext = np.concatenate(([1.0], np.repeat(rates, p)))
    a = np.outer(ext, ext)
    for j in range(d):
        sl = slice(1 + j * p, 1 + (j + 1) * p)
        a[sl, sl] += rates[j] * nu
    return a


def fit_mean_field_approx(aux: AuxStats, order: int | str = 0,
                          want_covariance: bool = False,
                          preprocess_seconds: float = 0.0) -> FitResult:
    """Surrogate fit through the closed-form inverse of the decorrelated
    statistics matrix.

    order=0 uses that inverse directly; order=1 adds the first correction of
    the perturbative series; order='exact_identity' solves the full system in
    the shifted form (baseline at the empirical rate plus a correction driven
    by event_avg - time_avg) and records its gap to the direct solve.
    """
    if order not in (0, 1, "exact_identity"):
        raise ValueError("order must be 0, 1 or 'exact_identity'")
    _require_all_nodes(aux, "closed-form surrogate")
    t0 = time.perf_counter()
    d, p, size = aux.n_nodes, aux.n_basis, aux.size
    rates = aux.rates
    nu = _nu_matrix(aux.basis)
    theta = np.empty((d, size))
    cov = np.empty((d, size, size)) if want_covariance else None
    meta: dict = {}
    if order == "exact_identity":
        gap = 0.0
        for i in range(d):
            diff = aux.event_avg[i] - aux.time_avg
            shift = _solve_spd(aux.gram[i], diff, f"node {i}")
            theta[i] = shift
            theta[i, 0] += rates[i]
            direct = _solve_spd(aux.gram[i],
                                2.0 * aux.event_avg[i] - aux.time_avg,
                                f"node {i}")
            gap = max(gap, float(np.max(np.abs(theta[i] - direct))))
            if want_covariance:
                cov[i] = _solve_spd(aux.gram[i], np.eye(size),
                                    f"node {i} covariance") / aux.horizon
        meta["identity_gap"] = gap
    else:
        b = _zero_order_inverse_factor(rates, nu, p)
        a0 = _zero_order_gram(rates, nu, p) if order == 1 else None
        for i in range(d):
            c = rates[i] * b
            if order == 1:
                delta = aux.gram[i] - a0 / rates[i]
                c = c - c @ delta @ c
            diff = aux.event_avg[i] - aux.time_avg
            theta[i] = c @ diff
            theta[i, 0] += rates[i]
            if want_covariance:
                cov[i] = c / aux.horizon
    return FitResult(
        theta=theta,
        method="mf_approx",
        wall_time={"preprocess": preprocess_seconds,
                   "solve": time.perf_counter() - t0},
        covariance=cov,
        order=order,
        meta=meta,
    )


# -- likelihood --------------------------------------------------------------


def neg_log_likelihood(params: HawkesParams, events: EventSequence,
                       channel_values: np.ndarray | None = None) -> float:
    """Negative log-likelihood of the events under ``params``.

    Returns +inf (with a logged diagnostic) if the model assigns a
    nonpositive intensity to any observed event.
    """
    return nll_from_theta(params.theta(), params.basis, events, channel_values)


def nll_from_theta(theta: np.ndarray, basis: KernelBasis, events: EventSequence,
                   channel_values: np.ndarray | None = None) -> float:
    """:func:`neg_log_likelihood` on raw parameter rows, which unconstrained
    fits may take below zero."""
    theta = np.asarray(theta, dtype=np.float64)
    n_nodes = theta.shape[0]
    g = _channel_values(events, basis) if channel_values is None else channel_values
    h = _time_avg(events, basis)
    total = events.horizon * float(h @ theta.sum(axis=0))
    for i in range(n_nodes):
        rows = g[events.nodes == i]
        if not rows.size:
            continue
        lam = rows @ theta[i]
        if np.any(lam <= 0.0):
            m = int(np.flatnonzero(events.nodes == i)[int(np.argmin(lam))])
            logger.warning(
                "nonpositive intensity at event %d (t=%g, node %d): "
                "likelihood is -inf", m, events.times[m], i,
            )
            return math.inf
        total -= float(np.log(lam).sum())
    return total


def nll_gradient(params: HawkesParams, events: EventSequence,
                 channel_values: np.ndarray | None = None) -> np.ndarray:
    """Gradient of :func:`neg_log_likelihood` in the flattened layout."""
    theta = params.theta()
    g = _channel_values(events, params.basis) if channel_values is None else channel_values
    h = _time_avg(events, params.basis)
    grad = np.tile(events.horizon * h, (params.n_nodes, 1))
    for i in range(params.n_nodes):
        rows = g[events.nodes == i]
        if not rows.size:
            continue
        lam = rows @ theta[i]
        if np.any(lam <= 0.0):
            m = int(np.flatnonzero(events.nodes == i)[int(np.argmin(lam))])
            raise ValueError(
                f"nonpositive intensity at event {m} "
                f"(t={events.times[m]:g}, node {i}): gradient undefined"
            )
        grad[i] -= rows.T @ (1.0 / lam)
    return grad


def fit_mle(events: EventSequence, basis: KernelBasis,
            init: HawkesParams | None = None, tol: float = 1e-8,
            max_iter: int = 1000, record_trace: bool = False) -> FitResult:
    """Maximum-likelihood fit over the nonnegative orthant.

    The objective separates over target nodes; it is minimized jointly with
    bound-constrained quasi-Newton steps (projected feasibility).  Per-event
    channel values are computed once up front, which dominates preprocessing.
    Initialized at the empirical rates with zero couplings unless ``init`` is
    given.
    """
    if max_iter < 0:
        raise ValueError("max_iter must be >= 0")
    counts = events.counts()
    if np.any(counts == 0):
        empty = np.flatnonzero(counts == 0).tolist()
        raise ValueError(f"likelihood fit needs events on every node; empty: {empty}")
    t0 = time.perf_counter()
    d = events.n_nodes
    size = d * basis.n_basis + 1
    horizon = events.horizon
    g = _channel_values(events, basis)
    h = _time_avg(events, basis)
    order = np.argsort(events.nodes, kind="stable")
    g_sorted = np.ascontiguousarray(g[order])
    starts = np.concatenate(([0], np.cumsum(counts)))
    if init is None:
        x0 = np.zeros((d, size))
        x0[:, 0] = counts / horizon
        x0 = x0.ravel()
    else:
        if init.theta().shape != (d, size):
            raise ValueError("init has incompatible dimensions")
        x0 = init.theta().ravel()
    base_grad = horizon * h
    preprocess = time.perf_counter() - t0

    last_f = [math.inf]

    def objective(x):
        theta = x.reshape(d, size)
        f = horizon * float(h @ theta.sum(axis=0))
        grad = np.tile(base_grad, (d, 1))
        bad = False
        for i in range(d):
            rows = g_sorted[starts[i]:starts[i + 1]]
            lam = rows @ theta[i]
            floor = 1e-12 * max(1.0, float(np.abs(lam).max(initial=0.0)))
            if lam.size and lam.min() <= 0.0:
                bad = True
                lam = np.maximum(lam, floor)
            f -= float(np.log(lam).sum())
            grad[i] -= rows.T @ (1.0 / lam)
        if bad:
            f = math.inf
        last_f[0] = f
        return f, grad.ravel()

    trace: list[tuple[float, float]] = []
    t1 = time.perf_counter()

    def callback(_xk):
        trace.append((time.perf_counter() - t1, last_f[0]))

    if max_iter == 0:
        f0, grad0 = objective(x0)
        theta = x0.reshape(d, size)
        projected = np.where(theta > 0.0, grad0.reshape(d, size),
                             np.minimum(grad0.reshape(d, size), 0.0))
        return FitResult(
            theta=theta,
            method="mle",
            wall_time={"preprocess": preprocess,
                       "solve": time.perf_counter() - t1},
            iterations=0,
            converged=False,
            meta={"nll": f0,
                  "projected_gradient_norm": float(np.max(np.abs(projected))),
                  "message": "iteration limit is zero"},
        )

    res = minimize(
        objective, x0, jac=True, method="L-BFGS-B",
        bounds=[(0.0, None)] * x0.size,
        options={"maxiter": max_iter, "gtol": tol, "ftol": 1e-11},
        callback=callback if record_trace else None,
    )
    solve = time.perf_counter() - t1
    theta = res.x.reshape(d, size)
    _, grad = objective(res.x)
    grad = grad.reshape(d, size)
    projected = np.where(theta > 0.0, grad, np.minimum(grad, 0.0))
    result = FitResult(
        theta=theta,
        method="mle",
        wall_time={"preprocess": preprocess, "solve": solve},
        iterations=int(res.nit),
        converged=bool(res.status == 0),
        meta={
            "nll": float(res.fun),
            "projected_gradient_norm": float(np.max(np.abs(projected))),
            "message": str(res.message),
        },
    )
    if record_trace:
        result.meta["trace"] = trace
    return result


# -- grid-quadrature least squares -------------------------------------------


def fit_contrast(events: EventSequence, basis: KernelBasis,
                 quad_step: float | None = None,
                 aux: AuxStats | None = None) -> FitResult:
    """Least-squares fit of the intensity against the counting differential.

    The channel-product integrals are accumulated on a uniform grid over the
    whole window (states advanced exactly between grid points), then one
    shared system is solved per node with the event averages on the
    right-hand side, scaled by that node's empirical rate.
    """
    if not isinstance(basis, ExponentialBasis):
        raise TypeError("grid quadrature requires an ExponentialBasis")
    t0 = time.perf_counter()
    if aux is None:
        aux = compute_aux_stats(events, basis, on_empty="skip")
    if quad_step is None:
        quad_step = 0.1 / float(np.max(basis.decays))
    if quad_step <= 0.0:
        raise ValueError("quad_step must be positive")
    d, size = aux.n_nodes, aux.size
    n_steps = int(np.ceil(events.horizon / quad_step))
    step = events.horizon / n_steps
    preprocess = time.perf_counter() - t0
    t1 = time.perf_counter()
    gram = _core._grid_conv_gram(events.times, events.nodes, basis.decays,
                                 d, step, n_steps)
    gram = (gram + np.triu(gram, 1).T) / n_steps
    theta = np.full((d, size), np.nan)
    residual = 0.0
    for i in range(d):
        if not aux.valid_nodes()[i]:
            logger.warning("node %d has no events; leaving its row NaN", i)
            continue
        rhs = aux.rates[i] * aux.event_avg[i]
        theta[i] = _solve_spd(gram, rhs, f"node {i} (grid)")
        residual = max(residual, float(np.linalg.norm(gram @ theta[i] - rhs)))
    return FitResult(
        theta=theta,
        method="cf",
        wall_time={"preprocess": preprocess,
                   "solve": time.perf_counter() - t1},
        residual=residual,
        meta={"quad_step": step, "n_steps": n_steps},
    )
