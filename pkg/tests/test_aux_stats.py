import numpy as np
import pytest

from hawkesmf import EventSequence, ExponentialBasis, simulate_hawkes, HawkesParams
from hawkesmf.aux_stats import AuxStats, compute_aux_stats
from hawkesmf.kernels import KernelBasis


def brute_aux(events, basis):
    """Reference implementation by explicit pair summation (O(n^2))."""
    d, p = events.n_nodes, basis.n_basis
    size = d * p + 1
    horizon = events.horizon
    n = len(events)
    g = np.zeros((n, size))
    g[:, 0] = 1.0
    for m in range(n):
        for j in range(n):
            if events.times[j] < events.times[m]:
                base = 1 + events.nodes[j] * p
                for q in range(p):
                    g[m, base + q] += basis.evaluate(q, events.times[m] - events.times[j])
    h = np.zeros(size)
    h[0] = 1.0
    for j in range(n):
        base = 1 + events.nodes[j] * p
        for q in range(p):
            h[base + q] += basis.integral_to(q, horizon - events.times[j]) / horizon
    counts = events.counts()
    k = np.full((d, size), np.nan)
    gram = np.full((d, size, size), np.nan)
    for i in range(d):
        rows = g[events.nodes == i]
        if counts[i]:
            k[i] = rows.mean(axis=0)
            gram[i] = horizon / counts[i] ** 2 * (rows.T @ rows)
    return h, k, gram


def random_events(rng, d, n, horizon, with_ties=False):
    times = np.sort(rng.uniform(0.0, horizon, size=n))
    if with_ties and n > 3:
        times = np.round(times, 1)
        times.sort()
    nodes = rng.integers(0, d, size=n)
    # ensure every node fires at least once so nothing is skipped
    nodes[:d] = np.arange(d)
    order = np.argsort(times, kind="stable")
    return EventSequence(times[order], nodes[order], horizon, d)


class TestAgainstBruteForce:
    @pytest.mark.parametrize("seed", range(6))
    def test_random_sequences(self, seed):
        rng = np.random.default_rng(seed)
        d = int(rng.integers(1, 4))
        basis = ExponentialBasis(rng.uniform(0.3, 3.0, size=rng.integers(1, 3)))
        events = random_events(rng, d, int(rng.integers(d, 60)), 20.0,
                               with_ties=seed % 2 == 0)
        aux = compute_aux_stats(events, basis, on_empty="skip")
        h, k, gram = brute_aux(events, basis)
        np.testing.assert_allclose(aux.time_avg, h, rtol=1e-12, atol=1e-14)
        np.testing.assert_allclose(aux.event_avg, k, rtol=1e-12, atol=1e-14)
        np.testing.assert_allclose(aux.gram, gram, rtol=1e-11, atol=1e-13)

    def test_tied_events_see_only_strictly_earlier_ones(self):
        events = EventSequence(np.array([1.0, 1.0, 2.0]), np.array([0, 1, 0]), 4.0, 2)
        basis = ExponentialBasis([1.0])
        aux = compute_aux_stats(events, basis)
        g = np.exp(-1.0)  # decayed weight of a unit-decay kernel after lag 1
        # node-0 events: one at t=1 (sees nothing), one at t=2 (sees both t=1 events)
        np.testing.assert_allclose(aux.event_avg[0], [1.0, g / 2.0, g / 2.0],
                                   rtol=1e-12)
        # node 1 fired once, at t=1, before anything else
        np.testing.assert_allclose(aux.event_avg[1], [1.0, 0.0, 0.0])


class TestHandValues:
    def test_pair_on_one_node(self):
        # two events on a single node, lag s apart
        s, beta, horizon = 0.75, 2.0, 10.0
        events = EventSequence(np.array([1.0, 1.0 + s]), np.array([0, 0]), horizon, 1)
        aux = compute_aux_stats(events, ExponentialBasis([beta]))
        g = beta * np.exp(-beta * s)
        assert aux.event_avg[0, 1] == pytest.approx(g / 2.0, rel=1e-12)
        assert aux.gram[0, 1, 1] == pytest.approx(horizon * g**2 / 4.0, rel=1e-12)

    def test_time_avg_exact_tail(self):
        events = EventSequence(np.array([3.0]), np.array([0]), 5.0, 1)
        aux = compute_aux_stats(events, ExponentialBasis([0.5]))
        assert aux.time_avg[1] == pytest.approx((1.0 - np.exp(-1.0)) / 5.0, rel=1e-12)
        assert aux.time_avg[0] == 1.0

    def test_baseline_identities(self):
        params = HawkesParams(np.full(2, 1.0), np.full((2, 2, 1), 0.2),
                              ExponentialBasis([1.5]))
        events = simulate_hawkes(params, 500.0, seed=4)
        aux = compute_aux_stats(events, params.basis)
        rates = events.rates()
        for i in range(2):
            assert aux.event_avg[i, 0] == 1.0
            assert aux.gram[i, 0, 0] == pytest.approx(1.0 / rates[i], rel=1e-12)
            np.testing.assert_allclose(aux.gram[i, 0, :],
                                       aux.event_avg[i] / rates[i], rtol=1e-12)

    def test_poisson_gram_matches_stationary_prediction(self):
        # For independent streams the statistics matrix concentrates around
        # its closed-form stationary limit.
        params = HawkesParams(np.array([2.0]), np.zeros((1, 1, 1)),
                              ExponentialBasis([1.0]))
        events = simulate_hawkes(params, 1e4, seed=77)
        aux = compute_aux_stats(events, params.basis)
        lam = events.rates()[0]
        predicted = lam + 0.5  # rate + half the decay, per the overlap integral
        assert aux.gram[0, 1, 1] == pytest.approx(predicted, rel=0.05)


class TestStructure:
    def test_symmetry_and_psd(self):
        rng = np.random.default_rng(10)
        events = random_events(rng, 3, 120, 40.0)
        aux = compute_aux_stats(events, ExponentialBasis([0.5, 2.0]))
        for i in range(3):
            block = aux.gram[i]
            np.testing.assert_allclose(block, block.T, atol=0.0)
            w = np.linalg.eigvalsh(block)
            assert w.min() >= -1e-12 * np.trace(block)

    def test_empty_sequence_skip(self):
        events = EventSequence(np.empty(0), np.empty(0, dtype=np.int64), 10.0, 2)
        aux = compute_aux_stats(events, ExponentialBasis([1.0]), on_empty="skip")
        np.testing.assert_allclose(aux.time_avg, [1.0, 0.0, 0.0])
        assert np.isnan(aux.event_avg).all()
        np.testing.assert_array_equal(aux.valid_nodes(), [False, False])

    def test_empty_node_raise_names_nodes(self):
        events = EventSequence(np.array([0.5]), np.array([0]), 10.0, 3)
        with pytest.raises(ValueError, match=r"\[1, 2\]"):
            compute_aux_stats(events, ExponentialBasis([1.0]))

    def test_extended_rates_layout(self):
        events = EventSequence(np.array([1.0, 2.0]), np.array([0, 1]), 10.0, 2)
        aux = compute_aux_stats(events, ExponentialBasis([1.0, 3.0]))
        ext = aux.extended_rates()
        np.testing.assert_allclose(ext, [1.0, 0.1, 0.1, 0.1, 0.1])


class BoxcarBasis(KernelBasis):
    """Unit-mass flat kernel on (0, width]: exercises the generic code path."""

    def __init__(self, width):
        self.width = float(width)
        self.n_basis = 1

    def evaluate(self, q, t):
        t = np.asarray(t, dtype=np.float64)
        out = np.where((t > 0.0) & (t <= self.width), 1.0 / self.width, 0.0)
        return out if out.ndim else float(out)


class TestGenericPath:
    def test_generic_matches_exact_for_exponentials(self):
        class OpaqueExp(KernelBasis):
            def __init__(self, decays):
                self._inner = ExponentialBasis(decays)
                self.n_basis = self._inner.n_basis

            def evaluate(self, q, t):
                return self._inner.evaluate(q, t)

        rng = np.random.default_rng(2)
        events = random_events(rng, 2, 80, 30.0)
        exact = compute_aux_stats(events, ExponentialBasis([1.0, 2.0]))
        generic = compute_aux_stats(events, OpaqueExp([1.0, 2.0]))
        np.testing.assert_allclose(generic.time_avg, exact.time_avg, rtol=1e-7)
        np.testing.assert_allclose(generic.event_avg, exact.event_avg,
                                   rtol=1e-6, atol=1e-8)
        np.testing.assert_allclose(generic.gram, exact.gram, rtol=1e-5, atol=1e-7)

    def test_boxcar_against_brute_force(self):
        rng = np.random.default_rng(5)
        events = random_events(rng, 2, 50, 20.0)
        basis = BoxcarBasis(2.5)
        aux = compute_aux_stats(events, basis)
        h, k, gram = brute_aux(events, basis)
        np.testing.assert_allclose(aux.event_avg, k, rtol=1e-9, atol=1e-12)
        np.testing.assert_allclose(aux.gram, gram, rtol=1e-9, atol=1e-12)
        np.testing.assert_allclose(aux.time_avg, h, rtol=1e-6)


class TestPersistence:
    def test_binary_round_trip(self, tmp_path):
        rng = np.random.default_rng(6)
        events = random_events(rng, 3, 90, 25.0)
        aux = compute_aux_stats(events, ExponentialBasis([0.7, 1.9]))
        path = tmp_path / "stats.bin"
        aux.save(path)
        back = AuxStats.load(path)
        np.testing.assert_array_equal(back.time_avg, aux.time_avg)
        np.testing.assert_array_equal(back.event_avg, aux.event_avg)
        np.testing.assert_array_equal(back.gram, aux.gram)
        np.testing.assert_array_equal(back.rates, aux.rates)
        assert back.horizon == aux.horizon
        np.testing.assert_array_equal(back.basis.decays, aux.basis.decays)

    def test_reject_foreign_file(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"not a stats dump at all")
        with pytest.raises(ValueError):
            AuxStats.load(path)
