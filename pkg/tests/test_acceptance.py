"""End-to-end acceptance gates.

Each test prints one summary line (run with ``pytest tests/test_acceptance.py
-v -s`` to see them) and enforces the stated tolerance and runtime budget.
"""
import time

import numpy as np
import pytest

from hawkesmf import (
    EventSequence,
    ExponentialBasis,
    HawkesParams,
    make_block_alpha,
    simulate_hawkes,
)
from hawkesmf.aux_stats import compute_aux_stats
from hawkesmf.estimators import (
    _nu_matrix,
    _zero_order_gram,
    _zero_order_inverse_factor,
    fit_mean_field,
    fit_mean_field_approx,
    fit_mle,
    nll_from_theta,
    nll_gradient,
)
from hawkesmf.diagnostics import (
    fluctuation_ratio_empirical,
    fluctuation_ratio_theoretical,
    mf_error_bound,
    rel_error,
    abs_error,
)
from hawkesmf.experiments import ExperimentConfig, run_bench, run_sweep


def report(n, message):
    print(f"\ncriterion {n}: PASS — {message}")


def two_block(d, phi, mu=1.0, beta=1.0):
    alpha = make_block_alpha(d, 2, phi)
    return HawkesParams(np.full(d, mu), alpha, ExponentialBasis([beta]))


# --------------------------------------------------------------------------


def brute_force_stats(events, basis):
    d, p = events.n_nodes, basis.n_basis
    size = d * p + 1
    n, horizon = len(events), events.horizon
    g = np.zeros((n, size))
    g[:, 0] = 1.0
    for m in range(n):
        lags = events.times[m] - events.times
        for j in np.flatnonzero(lags > 0.0):
            col = 1 + events.nodes[j] * p
            for q in range(p):
                g[m, col + q] += basis.evaluate(q, lags[j])
    h = np.zeros(size)
    h[0] = 1.0
    for j in range(n):
        col = 1 + events.nodes[j] * p
        for q in range(p):
            h[col + q] += basis.integral_to(q, horizon - events.times[j]) / horizon
    k = np.empty((d, size))
    gram = np.empty((d, size, size))
    for i in range(d):
        rows = g[events.nodes == i]
        k[i] = rows.mean(axis=0)
        gram[i] = horizon / rows.shape[0] ** 2 * (rows.T @ rows)
    return h, k, gram


def max_rel(a, b):
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(b), 1e-12)))


def test_criterion_01_streaming_stats_match_brute_force():
    t0 = time.perf_counter()
    rng = np.random.default_rng(1001)
    worst = 0.0
    for _ in range(20):
        d = int(rng.integers(1, 5))
        p = int(rng.integers(1, 3))
        basis = ExponentialBasis(rng.uniform(0.3, 3.0, size=p))
        n = int(rng.integers(d, 201))
        times = np.sort(rng.uniform(0.0, 25.0, size=n))
        nodes = rng.integers(0, d, size=n)
        nodes[:d] = np.arange(d)
        order = np.argsort(times, kind="stable")
        events = EventSequence(times[order], nodes[order], 25.0, d)
        aux = compute_aux_stats(events, basis)
        h, k, gram = brute_force_stats(events, basis)
        worst = max(worst,
                    max_rel(aux.time_avg, h),
                    max_rel(aux.event_avg, k),
                    max_rel(aux.gram, gram))
    elapsed = time.perf_counter() - t0
    assert worst <= 1e-9
    assert elapsed < 10.0
    report(1, f"20 sequences, max relative deviation {worst:.2e} [{elapsed:.1f}s]")


def test_criterion_02_poisson_recovery_within_three_sigma():
    t0 = time.perf_counter()
    params = HawkesParams(np.full(4, 2.0), np.zeros((4, 4, 1)),
                          ExponentialBasis([1.0]))
    events = simulate_hawkes(params, 1e5, seed=202)
    aux = compute_aux_stats(events, params.basis)
    res = fit_mean_field(aux, want_covariance=True)
    rates = events.rates()
    worst_sigma = 0.0
    for i in range(4):
        se = np.sqrt(np.diag(res.covariance[i]))
        worst_sigma = max(worst_sigma, abs(res.mu[i] - rates[i]) / se[0])
        worst_sigma = max(worst_sigma,
                          float(np.max(np.abs(res.theta[i, 1:]) / se[1:])))
    elapsed = time.perf_counter() - t0
    assert worst_sigma <= 3.0
    assert elapsed < 30.0
    report(2, f"all parameters within {worst_sigma:.2f} standard errors "
              f"[{elapsed:.1f}s]")


def test_criterion_03_gradient_matches_finite_differences():
    t0 = time.perf_counter()
    rng = np.random.default_rng(303)
    worst = 0.0
    for _ in range(20):
        d = int(rng.integers(1, 4))
        p = int(rng.integers(1, 3))
        basis = ExponentialBasis(rng.uniform(0.5, 2.0, size=p))
        n = int(rng.integers(20, 120))
        times = np.sort(rng.uniform(0.0, 50.0, size=n))
        nodes = rng.integers(0, d, size=n)
        nodes[:d] = np.arange(d)
        order = np.argsort(times, kind="stable")
        events = EventSequence(times[order], nodes[order], 50.0, d)
        theta = np.empty((d, d * p + 1))
        theta[:, 0] = rng.uniform(0.3, 1.5, size=d)
        theta[:, 1:] = rng.uniform(0.0, 0.3, size=(d, d * p))
        params = HawkesParams.from_theta(theta, basis)
        grad = nll_gradient(params, events)
        for idx in np.ndindex(theta.shape):
            step = 1e-6 * max(1.0, abs(theta[idx]))
            up, dn = theta.copy(), theta.copy()
            up[idx] += step
            dn[idx] -= step
            fd = (nll_from_theta(up, basis, events)
                  - nll_from_theta(dn, basis, events)) / (2.0 * step)
            worst = max(worst, abs(grad[idx] - fd) / max(1.0, abs(fd)))
    elapsed = time.perf_counter() - t0
    assert worst <= 1e-5
    assert elapsed < 30.0
    report(3, f"20 instances, max gradient deviation {worst:.2e} [{elapsed:.1f}s]")


def test_criterion_04_fluctuation_scaling_in_dimension():
    t0 = time.perf_counter()
    phi, lam, beta = 0.5, 1.0, 1.0
    dims = np.array([4, 8, 16, 32, 64])
    means = []
    worst_point = 0.0
    for d in dims:
        params = two_block(d, phi, mu=lam * (1.0 - phi), beta=beta)
        events = simulate_hawkes(params, 1e5, seed=400 + d)
        r = float(np.mean(fluctuation_ratio_empirical(events, params)))
        means.append(r)
        # disconnected equal blocks fluctuate like one block of half the size
        predicted = fluctuation_ratio_theoretical(d // 2, phi, beta, lam)
        worst_point = max(worst_point, abs(r / predicted - 1.0))
    slope = np.polyfit(np.log(dims), np.log(means), 1)[0]
    elapsed = time.perf_counter() - t0
    assert abs(slope + 0.5) <= 0.1
    assert worst_point <= 0.2
    assert elapsed < 600.0
    report(4, f"log-log slope {slope:.3f}, worst pointwise deviation "
              f"{100 * worst_point:.1f}% [{elapsed:.0f}s]")


def test_criterion_05_error_scaling_against_likelihood():
    t0 = time.perf_counter()
    base = {"d": 8, "T": 1e5, "mu": 1.0, "betas": [1.0], "n_blocks": 2,
            "phi_norm": 0.3, "seed": 500, "n_seeds": 3,
            "methods": ["mf", "mle"], "sweep": {"T": [1e3, 1e4, 1e5]}}
    rows = run_sweep(ExperimentConfig.from_dict(base))
    assert all(r["error"] == "" for r in rows)

    def mean_rel(rows, method, horizon):
        vals = [r["delta_alpha_rel"] for r in rows
                if r["method"] == method and r["T"] == horizon]
        assert len(vals) == 3
        return float(np.mean(vals))

    horizons = [1e3, 1e4, 1e5]
    mle_means = [mean_rel(rows, "mle", T) for T in horizons]
    mf_means = [mean_rel(rows, "mf", T) for T in horizons]
    slope = np.polyfit(np.log(horizons), np.log(mle_means), 1)[0]
    assert abs(slope + 0.5) <= 0.15, f"MLE error slope {slope}"
    gaps = [abs(mf / mle - 1.0) for mf, mle in zip(mf_means, mle_means)]
    assert max(gaps) <= 0.3, f"surrogate within-30% check failed: {gaps}"

    strong = dict(base, phi_norm=0.7, seed=550, sweep={"T": [1e3, 1e5]})
    rows7 = run_sweep(ExperimentConfig.from_dict(strong))
    assert all(r["error"] == "" for r in rows7)
    ratio_short = mean_rel(rows7, "mf", 1e3) / mean_rel(rows7, "mle", 1e3)
    ratio_long = mean_rel(rows7, "mf", 1e5) / mean_rel(rows7, "mle", 1e5)
    assert ratio_long > ratio_short, (ratio_short, ratio_long)
    elapsed = time.perf_counter() - t0
    assert elapsed < 1200.0
    report(5, f"MLE slope {slope:.3f}, surrogate gap ≤ {100 * max(gaps):.0f}%, "
              f"plateau ratio {ratio_short:.2f} → {ratio_long:.2f} [{elapsed:.0f}s]")


def test_criterion_06_closed_form_inverse_identities():
    rng = np.random.default_rng(606)
    worst = 0.0
    for d, p in [(2, 1), (4, 1), (8, 1), (3, 2), (8, 2)]:
        basis = ExponentialBasis(rng.uniform(0.4, 3.0, size=p))
        rates = rng.uniform(0.4, 2.5, size=d)
        nu = _nu_matrix(basis)
        factor = _zero_order_inverse_factor(rates, nu, p)
        gram = _zero_order_gram(rates, nu, p)
        for lam in rates[:2]:
            eye = (lam * factor) @ (gram / lam)
            worst = max(worst, float(np.max(np.abs(eye - np.eye(d * p + 1)))))
    assert worst <= 1e-10

    params = two_block(4, 0.4)
    events = simulate_hawkes(params, 1e4, seed=660)
    aux = compute_aux_stats(events, params.basis)
    direct = fit_mean_field(aux)
    shifted = fit_mean_field_approx(aux, order="exact_identity")
    gap = float(np.max(np.abs(direct.theta - shifted.theta)))
    assert gap <= 1e-8
    report(6, f"inverse identity to {worst:.1e}, solver-route gap {gap:.1e}")


def test_criterion_07_error_bound_dominates_observed_gap():
    t0 = time.perf_counter()
    margins = []
    for k in range(10):
        params = two_block(8, 0.1)
        events = simulate_hawkes(params, 1e4, seed=700 + k)
        aux = compute_aux_stats(events, params.basis)
        mf = fit_mean_field(aux, want_covariance=True)
        mle = fit_mle(events, params.basis)
        gap = np.linalg.norm(mf.theta - mle.theta, axis=1)
        bound = mf_error_bound(aux, mf.theta, events, covariance=mf.covariance)
        assert np.all(bound >= gap), f"sample {k}: bound {bound} < gap {gap}"
        margins.append(float(np.min(bound / gap)))
    elapsed = time.perf_counter() - t0
    assert elapsed < 600.0
    report(7, f"bound dominates on 10 samples (min bound/gap {min(margins):.1f}) "
              f"[{elapsed:.0f}s]")


def test_criterion_08_surrogate_is_faster_than_likelihood():
    cfg = ExperimentConfig.from_dict({
        "d": 16, "T": 1e4, "mu": 1.0, "phi_norm": 0.3, "n_blocks": 2,
        "seed": 800, "methods": ["mf", "mle"]})
    rows = run_bench(cfg)
    totals = {r["method"]: r["seconds"] for r in rows if r["phase"] == "total"}
    reached = {r["method"]: r["reached"] for r in rows if r["phase"] == "total"}
    assert reached["mle"] is True
    assert totals["mf"] < totals["mle"], totals
    report(8, f"surrogate {totals['mf']:.3f}s vs likelihood {totals['mle']:.3f}s "
              f"to the same target")


def test_criterion_09_decay_misspecification_bias():
    t0 = time.perf_counter()
    cfg = ExperimentConfig.from_dict({
        "d": 8, "T": 1e4, "mu": 1.0, "betas": [1.0], "n_blocks": 2,
        "phi_norm": 0.5, "seed": 900, "methods": ["mf", "mle"],
        "sweep": {"beta_in": [0.25, 0.5, 1.0, 2.0, 4.0]}})
    rows = run_sweep(cfg)
    assert all(r["error"] == "" for r in rows)
    mle_rows = sorted((r for r in rows if r["method"] == "mle"),
                      key=lambda r: r["beta_in"])
    grid = [r["beta_in"] for r in mle_rows]
    assert grid == [0.25, 0.5, 1.0, 2.0, 4.0]
    nll = np.array([r["nll"] for r in mle_rows])
    spread = (nll.max() - nll.min()) / abs(np.median(nll))
    assert spread < 0.05, f"likelihood varied by {100 * spread:.1f}%"
    err = np.array([r["delta_alpha_abs"] for r in mle_rows])
    assert np.argmin(err) == 2, f"coupling error not minimized at the true decay: {err}"
    assert err[0] >= err[1] >= err[2] and err[2] <= err[3] <= err[4], \
        f"error not monotone in the mismatch: {err}"
    elapsed = time.perf_counter() - t0
    assert elapsed < 900.0
    report(9, f"NLL spread {100 * spread:.2f}%, coupling error "
              f"{np.round(err, 3).tolist()} minimized at the true decay "
              f"[{elapsed:.0f}s]")


def test_criterion_10_multi_kernel_support_recovery():
    t0 = time.perf_counter()
    basis = ExponentialBasis([1.0, 2.0])
    within = make_block_alpha(8, 2, 0.25, n_basis=2, slot=0)
    across = make_block_alpha(8, 2, 0.25, n_basis=2, slot=1, complement=True)
    alpha = within + across
    params = HawkesParams(np.ones(8), alpha, basis)
    events = simulate_hawkes(params, 1e5, seed=1000)
    aux = compute_aux_stats(events, basis)
    res = fit_mean_field(aux)
    block_value = 0.25 / 4.0
    correct = 0
    for q in range(2):
        found = res.alpha[:, :, q] > block_value / 2.0
        truth = alpha[:, :, q] > 0.0
        correct += int(np.sum(found == truth))
    accuracy = correct / 128.0
    elapsed = time.perf_counter() - t0
    assert accuracy >= 0.9
    assert elapsed < 600.0
    report(10, f"per-slot support accuracy {100 * accuracy:.1f}% over 128 "
               f"entries [{elapsed:.0f}s]")
