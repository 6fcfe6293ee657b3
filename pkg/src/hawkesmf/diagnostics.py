"""Validity diagnostics: intensity-fluctuation ratios, coupling error metrics,
surrogate error bounds, and the empirical covariance density of the stream."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from . import _core
from .aux_stats import AuxStats
from .kernels import ExponentialBasis
from .simulation import EventSequence, HawkesParams

__all__ = [
    "FluctuationReport",
    "CovarianceDensity",
    "fluctuation_ratio_empirical",
    "fluctuation_ratio_theoretical",
    "fluctuation_report",
    "rel_error",
    "abs_error",
    "mf_error_bound",
    "mf_validity_horizon",
    "empirical_covariance_density",
    "apriori_error_bounds",
    "inverse_stats",
]

logger = logging.getLogger("hawkesmf")


def default_grid_step(events: EventSequence, basis: ExponentialBasis) -> float:
    """Resolve both the fastest kernel decay and the mean event spacing."""
    max_rate = float(events.rates().max())
    step = 0.1 / float(np.max(basis.decays))
    if max_rate > 0.0:
        step = min(step, 1.0 / (10.0 * max_rate))
    return step


def _grid_layout(horizon: float, grid_step: float) -> tuple[float, int]:
    n_steps = max(1, int(np.ceil(horizon / grid_step)))
    return horizon / n_steps, n_steps


def _intensity_variance(events: EventSequence, theta: np.ndarray,
                        basis: ExponentialBasis, grid_step: float):
    """Sample variance of each reconstructed intensity over a uniform grid,
    with left limits at the grid points."""
    step, n_steps = _grid_layout(events.horizon, grid_step)
    s1, s2 = _core._grid_intensity_moments(events.times, events.nodes,
                                           basis.decays, theta, step, n_steps)
    var = s2 / n_steps - (s1 / n_steps) ** 2
    return np.clip(var, 0.0, None), step


@dataclass
class FluctuationReport:
    """Per-node fluctuation ratios with the homogeneous prediction attached."""

    r_empirical: np.ndarray
    r_theoretical: float | None
    grid_step: float
    params_used: HawkesParams


def fluctuation_ratio_empirical(events: EventSequence, params: HawkesParams,
                                grid_step: float | None = None) -> np.ndarray:
    """Std/mean of each node's intensity reconstructed under ``params``.

    The mean is taken as the node's empirical rate; nodes without events get
    NaN.  Events contribute strictly after their timestamp.
    """
    if not isinstance(params.basis, ExponentialBasis):
        raise TypeError("grid reconstruction requires an ExponentialBasis")
    if grid_step is None:
        grid_step = default_grid_step(events, params.basis)
    if grid_step <= 0.0:
        raise ValueError("grid_step must be positive")
    var, _ = _intensity_variance(events, params.theta(), params.basis, grid_step)
    rates = events.rates()
    out = np.full(params.n_nodes, np.nan)
    ok = rates > 0.0
    if not ok.all():
        logger.warning("nodes %s have no events; fluctuation ratio undefined",
                       np.flatnonzero(~ok).tolist())
    out[ok] = np.sqrt(var[ok]) / rates[ok]
    return out


def fluctuation_ratio_theoretical(n_nodes: int, phi_norm: float, beta: float,
                                  rate: float) -> float:
    """Homogeneous fully-connected prediction of the fluctuation ratio for the
    exponential family; decays as 1/sqrt(n_nodes)."""
    if not 0.0 <= phi_norm < 1.0:
        raise ValueError("phi_norm must lie in [0, 1)")
    if beta <= 0.0 or rate <= 0.0 or n_nodes < 1:
        raise ValueError("beta, rate must be positive and n_nodes >= 1")
    return phi_norm * np.sqrt(beta) / np.sqrt(2.0 * n_nodes * rate * (1.0 - phi_norm))


def fluctuation_report(events: EventSequence, params: HawkesParams,
                       grid_step: float | None = None) -> FluctuationReport:
    """Bundle the empirical ratios with the matching homogeneous prediction
    (single-decay bases only)."""
    if grid_step is None:
        grid_step = default_grid_step(events, params.basis)
    r_emp = fluctuation_ratio_empirical(events, params, grid_step)
    r_theo = None
    if params.n_basis == 1:
        rate = float(np.mean(events.rates()))
        if rate > 0.0:
            r_theo = fluctuation_ratio_theoretical(
                params.n_nodes, params.spectral_norm(),
                float(params.basis.decays[0]), rate,
            )
    return FluctuationReport(r_emp, r_theo, grid_step, params)


# -- coupling error metrics --------------------------------------------------


def rel_error(alpha_inf: np.ndarray, alpha_true: np.ndarray) -> float:
    """Root sum of squared relative deviations over the true nonzero couplings."""
    alpha_inf = np.asarray(alpha_inf, dtype=np.float64)
    alpha_true = np.asarray(alpha_true, dtype=np.float64)
    if alpha_inf.shape != alpha_true.shape:
        raise ValueError("shape mismatch")
    mask = alpha_true != 0.0
    if not mask.any():
        raise ValueError("alpha_true has no nonzero entries")
    return float(np.sqrt(np.sum((alpha_inf[mask] / alpha_true[mask] - 1.0) ** 2)))


def abs_error(alpha_inf: np.ndarray, alpha_true: np.ndarray) -> float:
    """Root sum of squared deviations over all couplings."""
    alpha_inf = np.asarray(alpha_inf, dtype=np.float64)
    alpha_true = np.asarray(alpha_true, dtype=np.float64)
    if alpha_inf.shape != alpha_true.shape:
        raise ValueError("shape mismatch")
    return float(np.sqrt(np.sum((alpha_inf - alpha_true) ** 2)))


# -- surrogate error bounds --------------------------------------------------


def inverse_stats(aux: AuxStats) -> np.ndarray:
    """Per-node inverses of the statistics matrices (sampling covariance times
    the horizon)."""
    d, size = aux.n_nodes, aux.size
    out = np.full((d, size, size), np.nan)
    eye = np.eye(size)
    for i in range(d):
        if aux.rates[i] > 0.0:
            out[i] = scipy.linalg.solve(aux.gram[i], eye, assume_a="pos")
    return out


def _bound_value(var_ratio: float, inv_norm: float, rate_norm: float) -> float:
    """Variance ratio times the inverse-statistics and rate-vector norms."""
    return var_ratio * inv_norm * rate_norm


def mf_error_bound(aux: AuxStats, theta: np.ndarray, events: EventSequence,
                   grid_step: float | None = None,
                   covariance: np.ndarray | None = None) -> np.ndarray:
    """Per-node bound on the distance between the surrogate and likelihood fits.

    Evaluates (variance of the reconstructed intensity) / rate**2 times the
    spectral norm of the inverse statistics matrix times the Euclidean norm of
    the extended rate vector.  ``covariance`` takes fit-result blocks
    (inverse statistics / horizon); it is computed from ``aux`` when missing.
    """
    theta = np.asarray(theta, dtype=np.float64)
    basis = aux.basis
    if grid_step is None:
        grid_step = default_grid_step(events, basis)
    inv = covariance * aux.horizon if covariance is not None else inverse_stats(aux)
    var, _ = _intensity_variance(events, theta, basis, grid_step)
    rate_norm = float(np.linalg.norm(aux.extended_rates()))
    out = np.full(aux.n_nodes, np.nan)
    for i in range(aux.n_nodes):
        if aux.rates[i] <= 0.0:
            continue
        inv_norm = float(np.linalg.norm(inv[i], 2))
        out[i] = _bound_value(var[i] / aux.rates[i] ** 2, inv_norm, rate_norm)
    return out


def mf_validity_horizon(rate: float, beta: float, n_nodes: int,
                        phi_norm: float, eta: float = 1.0) -> float:
    """Horizon below which the surrogate's systematic error stays under the
    statistical one; grows like the fourth inverse power of the coupling norm."""
    if not 0.0 <= phi_norm < 1.0:
        raise ValueError("phi_norm must lie in [0, 1)")
    if rate <= 0.0 or beta <= 0.0 or n_nodes < 1 or eta <= 0.0:
        raise ValueError("rate, beta, eta must be positive and n_nodes >= 1")
    if phi_norm == 0.0:
        return np.inf
    tau = 2.0 / beta
    return float(rate * tau**2 * n_nodes
                 * (1.0 - phi_norm) ** (4.0 - 2.0 / eta) / phi_norm**4)


# -- empirical covariance density --------------------------------------------


@dataclass
class CovarianceDensity:
    """Binned connected pair-correlation density per ordered node pair."""

    lags: np.ndarray      # bin centers
    values: np.ndarray    # (d, d, n_bins); [i, j] pairs a later i-event with an earlier j-event
    bin_width: float
    c_max_l1: float       # largest absolute mass over node pairs

    def write_csv(self, path) -> None:
        d = self.values.shape[0]
        with open(path, "w") as f:
            f.write("lag,node_to,node_from,value\n")
            for i in range(d):
                for j in range(d):
                    for b, lag in enumerate(self.lags):
                        f.write(f"{lag:.17g},{i},{j},{self.values[i, j, b]:.17g}\n")


def empirical_covariance_density(events: EventSequence, lag_max: float,
                                 bin_width: float) -> CovarianceDensity:
    """Histogram of ordered event-pair lags minus the product of rates.

    ``lag_max`` must be a whole number of bins.  The estimate ignores window
    borders, which is accurate for lags far below the horizon.
    """
    if bin_width <= 0.0:
        raise ValueError("bin_width must be positive")
    if lag_max < 0.0:
        raise ValueError("lag_max must be nonnegative")
    n_bins = int(round(lag_max / bin_width))
    if abs(n_bins * bin_width - lag_max) > 1e-9 * max(1.0, lag_max):
        raise ValueError("lag_max must be a multiple of bin_width")
    d = events.n_nodes
    rates = events.rates()
    if n_bins == 0:
        return CovarianceDensity(np.empty(0), np.empty((d, d, 0)), bin_width, 0.0)
    counts = _core._pair_lag_histogram(events.times, events.nodes, d,
                                       float(n_bins) * bin_width, bin_width, n_bins)
    values = counts / (events.horizon * bin_width) - np.multiply.outer(rates, rates)[:, :, None]
    lags = (np.arange(n_bins) + 0.5) * bin_width
    c_max = float(np.max(np.sum(np.abs(values), axis=2)) * bin_width)
    return CovarianceDensity(lags, values, bin_width, c_max)


def apriori_error_bounds(c_max_l1: float, k_max_l1: float, g_max: float,
                         nu_max: float, rate_min: float, rate_max: float,
                         theta: np.ndarray,
                         covariance: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Cumulant-based a-priori bounds: (coupling-magnitude bound, surrogate-gap
    bound) per node.

    ``covariance`` takes the per-node inverse statistics matrices (see
    :func:`inverse_stats`).  ``k_max_l1`` is the caller's bound on the
    third-order correlation mass; it is accepted for completeness but the
    displayed bounds do not involve it, and a zero value flags that no such
    control was supplied.
    """
    if rate_min <= 0.0:
        raise ValueError("rate_min must be positive")
    if k_max_l1 == 0.0:
        warnings.warn("no third-order correlation mass supplied; "
                      "the gap bound is partial", stacklevel=2)
    theta = np.asarray(theta, dtype=np.float64)
    d, size = theta.shape
    dp = size - 1
    if dp % d:
        raise ValueError("theta width is not 1 + n_nodes * n_basis")
    chan_nodes = np.repeat(np.arange(d), dp // d)
    bound_theta = np.empty(d)
    bound_gap = np.empty(d)
    scale = np.sqrt(dp)
    for i in range(d):
        inv_norm = float(np.linalg.norm(covariance[i], 2))
        bound_theta[i] = scale * inv_norm * g_max * c_max_l1 / rate_min
        row_sum = float(theta[i].sum())
        couplings = theta[i, 1:]
        same = 0.0
        for j in range(d):
            s = couplings[chan_nodes == j].sum()
            same += s * s
        same += theta[i, 0] ** 2  # the baseline channel only pairs with itself
        bound_gap[i] = scale * inv_norm * (
            c_max_l1 * g_max * rate_max / rate_min**2 * row_sum**2
            + nu_max * rate_max**2 / rate_min**2 * same
        )
    return bound_theta, bound_gap
