"""Single-pass auxiliary statistics feeding the quadratic surrogate fits.

For every channel a (baseline first, then one per (node, basis) pair) the
module accumulates

* ``time_avg``  — the time average over [0, horizon) of the channel's
  kernel-smoothed event rate (exact tail integrals, no cutoff),
* ``event_avg`` — for each target node, the average channel value seen just
  before that node's events,
* ``gram``      — for each target node, the matching second-moment matrix,
  scaled so that the baseline corner equals horizon / count.

The baseline channel is the constant 1, which makes the first row/column of
every Gram block carry the event averages automatically.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _core
from .kernels import ChannelIndex, ExponentialBasis, KernelBasis
from .simulation import EventSequence

__all__ = ["AuxStats", "compute_aux_stats"]

_MAGIC = b"HMFAUX01"


@dataclass
class AuxStats:
    """Sufficient statistics of one event stream for the linear estimators."""

    time_avg: np.ndarray   # (dp+1,)
    event_avg: np.ndarray  # (d, dp+1); NaN rows mark skipped empty nodes
    gram: np.ndarray       # (d, dp+1, dp+1)
    rates: np.ndarray      # (d,) empirical mean intensities
    horizon: float
    basis: KernelBasis

    @property
    def n_nodes(self) -> int:
        return self.rates.shape[0]

    @property
    def n_basis(self) -> int:
        return self.basis.n_basis

    @property
    def size(self) -> int:
        return self.n_nodes * self.n_basis + 1

    @property
    def index(self) -> ChannelIndex:
        return ChannelIndex(self.n_nodes, self.n_basis)

    def valid_nodes(self) -> np.ndarray:
        """Nodes with at least one event (the only ones that can be fitted)."""
        return self.rates > 0.0

    def extended_rates(self) -> np.ndarray:
        """Empirical rate of each channel's source, with 1 for the baseline."""
        return np.concatenate(([1.0], np.repeat(self.rates, self.n_basis)))

    # -- persistence ---------------------------------------------------------

    def save(self, path) -> None:
        """Binary dump: versioned header, little-endian float64, row-major."""
        d, p = self.n_nodes, self.n_basis
        with open(path, "wb") as f:
            f.write(_MAGIC)
            f.write(struct.pack("<qqd", d, p, self.horizon))
            for arr in (np.asarray(self.basis.decays), self.rates,
                        self.time_avg, self.event_avg, self.gram):
                f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path) -> "AuxStats":
        raw = Path(path).read_bytes()
        if raw[:8] != _MAGIC:
            raise ValueError(f"{path} is not an auxiliary-statistics dump")
        d, p, horizon = struct.unpack_from("<qqd", raw, 8)
        off = 8 + 24
        size = d * p + 1

        def take(shape):
            nonlocal off
            n = int(np.prod(shape))
            arr = np.frombuffer(raw, dtype="<f8", count=n, offset=off)
            off += 8 * n
            return arr.reshape(shape).astype(np.float64)

        decays = take((p,))
        rates = take((d,))
        time_avg = take((size,))
        event_avg = take((d, size))
        gram = take((d, size, size))
        return cls(time_avg, event_avg, gram, rates, horizon,
                   ExponentialBasis(decays))

    def to_json_dict(self) -> dict:
        """Plain-list export for small systems."""
        return {
            "horizon": self.horizon,
            "n_nodes": self.n_nodes,
            "decays": np.asarray(self.basis.decays).tolist(),
            "rates": self.rates.tolist(),
            "time_avg": self.time_avg.tolist(),
            "event_avg": self.event_avg.tolist(),
            "gram": self.gram.tolist(),
        }


def _time_avg_exact(events: EventSequence, basis: ExponentialBasis) -> np.ndarray:
    d, p = events.n_nodes, basis.n_basis
    out = np.empty(d * p + 1)
    out[0] = 1.0
    horizon = events.horizon
    for q in range(p):
        tail = 1.0 - np.exp(-basis.decays[q] * (horizon - events.times))
        per_node = np.bincount(events.nodes, weights=tail, minlength=d)
        out[1 + q::p] = per_node / horizon
    return out


def _time_avg_generic(events: EventSequence, basis: KernelBasis) -> np.ndarray:
    d, p = events.n_nodes, basis.n_basis
    out = np.empty(d * p + 1)
    out[0] = 1.0
    horizon = events.horizon
    for q in range(p):
        tail = np.array([basis.integral_to(q, horizon - t) for t in events.times])
        per_node = np.bincount(events.nodes, weights=tail, minlength=d)
        out[1 + q::p] = per_node / horizon
    return out


def _conv_rows_generic(events: EventSequence, basis: KernelBasis) -> np.ndarray:
    """Reference channel values at each event via truncated direct summation.

    Sums kernel values over past events inside each kernel's cutoff window;
    quadratic cost, intended for small inputs and non-exponential families.
    """
    d, p = events.n_nodes, basis.n_basis
    times, nodes = events.times, events.nodes
    n = times.size
    out = np.zeros((n, d * p + 1))
    out[:, 0] = 1.0
    windows = [basis.cutoff_time(q) for q in range(p)]
    for m in range(n):
        for q in range(p):
            lo = np.searchsorted(times, times[m] - windows[q], side="left")
            for mp in range(lo, m):
                lag = times[m] - times[mp]
                if lag <= 0.0:
                    continue  # ties never interact: kernels vanish at zero lag
                out[m, 1 + nodes[mp] * p + q] += basis.evaluate(q, lag)
    return out


def compute_aux_stats(events: EventSequence, basis: KernelBasis,
                      on_empty: str = "raise") -> AuxStats:
    """Stream the events once and return all auxiliary statistics.

    ``on_empty`` controls nodes without events: "raise" (default) aborts,
    "skip" leaves NaN rows in ``event_avg`` / ``gram`` so callers can drop
    those nodes explicitly.
    """
    if on_empty not in ("raise", "skip"):
        raise ValueError("on_empty must be 'raise' or 'skip'")
    d = events.n_nodes
    p = basis.n_basis
    size = d * p + 1
    counts = events.counts()
    if on_empty == "raise" and np.any(counts == 0):
        empty = np.flatnonzero(counts == 0).tolist()
        raise ValueError(
            f"nodes {empty} have no events on [0, {events.horizon}); their "
            "statistics are undefined (use on_empty='skip' to drop them)"
        )
    if isinstance(basis, ExponentialBasis):
        time_avg = _time_avg_exact(events, basis)
        chan_sums, gram_sums, _ = _core._aux_accumulate(
            events.times, events.nodes, basis.decays, d, events.horizon
        )
        # the recursion fills the upper triangle only
        gram_sums = gram_sums + np.triu(gram_sums, 1).transpose(0, 2, 1)
    else:
        time_avg = _time_avg_generic(events, basis)
        rows = _conv_rows_generic(events, basis)
        chan_sums = np.zeros((d, size))
        gram_sums = np.zeros((d, size, size))
        for i in range(d):
            sel = rows[events.nodes == i]
            if sel.size:
                chan_sums[i] = sel.sum(axis=0)
                gram_sums[i] = sel.T @ sel
    event_avg = np.full((d, size), np.nan)
    gram = np.full((d, size, size), np.nan)
    nz = counts > 0
    event_avg[nz] = chan_sums[nz] / counts[nz, None]
    gram[nz] = gram_sums[nz] * (events.horizon / counts[nz, None, None] ** 2)
    return AuxStats(time_avg, event_avg, gram, counts / events.horizon,
                    events.horizon, basis)
