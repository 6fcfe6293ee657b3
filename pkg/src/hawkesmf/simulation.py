"""Process parameters, event containers, structured couplings, and the sampler."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _core
from .kernels import ChannelIndex, ExponentialBasis, KernelBasis

__all__ = [
    "HawkesParams",
    "EventSequence",
    "make_block_alpha",
    "simulate_hawkes",
]


class StabilityError(ValueError):
    """Raised when a coupling tensor violates the stationarity condition."""


@dataclass
class HawkesParams:
    """Baseline rates and kernel weights of a linear self-exciting process.

    Fields
    ------
    mu : (d,) nonnegative baseline intensities (events per unit time).
    alpha : (d, d, p) nonnegative dimensionless weights; entry [i, j, q] is the
        influence of node j's events on node i through basis kernel q.
    basis : the kernel family (normalized, causal).
    """

    mu: np.ndarray
    alpha: np.ndarray
    basis: KernelBasis

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64)
        self.alpha = np.asarray(self.alpha, dtype=np.float64)
        d = self.mu.shape[0]
        if self.mu.ndim != 1:
            raise ValueError("mu must be a 1-d vector")
        if self.alpha.shape != (d, d, self.basis.n_basis):
            raise ValueError(
                f"alpha shape {self.alpha.shape} does not match "
                f"(d, d, p) = ({d}, {d}, {self.basis.n_basis})"
            )
        if np.any(self.mu < 0.0) or np.any(self.alpha < 0.0):
            raise ValueError("mu and alpha must be componentwise nonnegative")

    @property
    def n_nodes(self) -> int:
        return self.mu.shape[0]

    @property
    def n_basis(self) -> int:
        return self.alpha.shape[2]

    @property
    def index(self) -> ChannelIndex:
        return ChannelIndex(self.n_nodes, self.n_basis)

    def coupling_matrix(self) -> np.ndarray:
        """Integrated-kernel matrix: total weight of j on i (kernels have unit mass)."""
        return self.alpha.sum(axis=2)

    def spectral_norm(self) -> float:
        """Largest singular value of the integrated-kernel matrix."""
        return float(np.linalg.norm(self.coupling_matrix(), 2))

    def stationary_rates(self) -> np.ndarray:
        """Mean intensities: solve (I - A) rates = mu for the integrated matrix A."""
        norm = self.spectral_norm()
        if norm >= 1.0:
            raise StabilityError(
                f"coupling spectral norm {norm:.6g} >= 1: process is unstable"
            )
        a = self.coupling_matrix()
        return np.linalg.solve(np.eye(self.n_nodes) - a, self.mu)

    def theta(self) -> np.ndarray:
        """Per-node flattened parameter rows: column 0 is mu, then channel weights."""
        d, p = self.n_nodes, self.n_basis
        out = np.empty((d, d * p + 1))
        out[:, 0] = self.mu
        out[:, 1:] = self.alpha.reshape(d, d * p)
        return out

    @classmethod
    def from_theta(cls, theta: np.ndarray, basis: KernelBasis) -> "HawkesParams":
        """Inverse of :meth:`theta`; rejects negative entries."""
        theta = np.asarray(theta, dtype=np.float64)
        d = theta.shape[0]
        p = basis.n_basis
        if theta.shape != (d, d * p + 1):
            raise ValueError("theta must have shape (d, d*p + 1)")
        return cls(theta[:, 0].copy(), theta[:, 1:].reshape(d, d, p).copy(), basis)


@dataclass
class EventSequence:
    """Node-labelled event times on the window [0, horizon).

    Times are sorted ascending; ties are permitted and kept in generation or
    file order.
    """

    times: np.ndarray
    nodes: np.ndarray
    horizon: float
    n_nodes: int

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        self.nodes = np.asarray(self.nodes, dtype=np.int64)
        if self.times.shape != self.nodes.shape or self.times.ndim != 1:
            raise ValueError("times and nodes must be parallel 1-d arrays")
        if self.horizon <= 0.0:
            raise ValueError("horizon must be positive")
        if self.times.size:
            if np.any(np.diff(self.times) < 0.0):
                raise ValueError("event times must be sorted ascending")
            if self.times[0] < 0.0 or self.times[-1] >= self.horizon:
                raise ValueError("event times must lie in [0, horizon)")
            if self.nodes.min() < 0 or self.nodes.max() >= self.n_nodes:
                raise ValueError("node labels out of range")

    def __len__(self) -> int:
        return self.times.size

    def counts(self) -> np.ndarray:
        """Events per node over the full window."""
        return np.bincount(self.nodes, minlength=self.n_nodes).astype(np.int64)

    def rates(self) -> np.ndarray:
        """Empirical mean intensity per node (counts / horizon)."""
        return self.counts() / self.horizon

    # -- persistence ---------------------------------------------------------

    def to_csv(self, path, extra_meta: dict | None = None) -> None:
        """Write events as 't,node' rows plus a JSON sidecar with the window."""
        path = Path(path)
        with open(path, "w") as f:
            f.write("t,node\n")
            np.savetxt(f, np.column_stack([self.times, self.nodes]), fmt="%.17g,%d")
        meta = {"horizon": self.horizon, "n_nodes": int(self.n_nodes)}
        if extra_meta:
            meta.update(extra_meta)
        with open(path.with_suffix(".json"), "w") as f:
            json.dump(meta, f, indent=2)
            f.write("\n")

    @classmethod
    def from_csv(cls, path, horizon: float | None = None,
                 n_nodes: int | None = None) -> "EventSequence":
        """Read an event CSV; window metadata comes from arguments or the sidecar."""
        path = Path(path)
        if horizon is None or n_nodes is None:
            sidecar = path.with_suffix(".json")
            if not sidecar.exists():
                raise FileNotFoundError(
                    f"no sidecar {sidecar} and no horizon/n_nodes given"
                )
            meta = json.loads(sidecar.read_text())
            horizon = meta["horizon"] if horizon is None else horizon
            n_nodes = meta["n_nodes"] if n_nodes is None else n_nodes
        raw = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        if raw.size == 0:
            return cls(np.empty(0), np.empty(0, dtype=np.int64), horizon, n_nodes)
        return cls(raw[:, 0], raw[:, 1].astype(np.int64), horizon, n_nodes)


def make_block_alpha(n_nodes: int, n_blocks: int, norm: float,
                     n_basis: int = 1, slot: int = 0,
                     complement: bool = False) -> np.ndarray:
    """Coupling tensor with contiguous clusters and a prescribed spectral norm.

    Nodes are split into ``n_blocks`` contiguous clusters (sizes differ by at
    most one).  With ``complement=False`` every within-cluster entry of basis
    slot ``slot`` is norm / cluster_size, so each cluster contributes spectral
    norm ``norm`` exactly.  With ``complement=True`` the value is placed on
    every *cross*-cluster entry instead (equal cluster sizes required), again
    normalized so the spectral norm is ``norm``.
    """
    if not 1 <= n_blocks <= n_nodes:
        raise ValueError("need 1 <= n_blocks <= n_nodes")
    if norm < 0.0:
        raise ValueError("norm must be nonnegative")
    if norm >= 1.0:
        raise StabilityError(f"requested coupling norm {norm} >= 1 violates stationarity")
    if not 0 <= slot < n_basis:
        raise ValueError("slot out of range")
    sizes = [len(chunk) for chunk in np.array_split(np.arange(n_nodes), n_blocks)]
    alpha = np.zeros((n_nodes, n_nodes, n_basis))
    if complement:
        if len(set(sizes)) > 1:
            raise ValueError("complement pattern requires equal cluster sizes")
        c = sizes[0]
        if n_nodes == c:
            raise ValueError("complement of a single cluster is empty")
        mask = np.ones((n_nodes, n_nodes), dtype=bool)
    else:
        mask = np.zeros((n_nodes, n_nodes), dtype=bool)
    start = 0
    for c in sizes:
        block = slice(start, start + c)
        if complement:
            mask[block, block] = False
        else:
            alpha[block, block, slot] = norm / c
        start += c
    if complement:
        alpha[:, :, slot][mask] = norm / (n_nodes - sizes[0])
    return alpha


def simulate_hawkes(params: HawkesParams, horizon: float, seed: int,
                    burn_in: float = 0.0) -> EventSequence:
    """Draw one exact trajectory on [0, horizon) by Ogata thinning.

    Requires the exponential basis (states decay exactly between candidates).
    Deterministic for a given seed.  ``burn_in`` prepends a discarded warm-up
    window so the kept window starts closer to stationarity.
    """
    if not isinstance(params.basis, ExponentialBasis):
        raise TypeError("simulation requires an ExponentialBasis")
    if horizon <= 0.0:
        raise ValueError("horizon must be positive")
    if burn_in < 0.0:
        raise ValueError("burn_in must be nonnegative")
    rates = params.stationary_rates()  # also rejects unstable couplings
    total = horizon + burn_in
    expected = float(rates.sum()) * total
    cap = int(expected + 10.0 * np.sqrt(expected + 9.0) + 64.0)
    while True:
        times, nodes, n = _core._simulate_thinning(
            params.mu, params.alpha, params.basis.decays, total, seed, cap
        )
        if n >= 0:
            break
        cap *= 2
    times, nodes = times[:n], nodes[:n]
    if burn_in > 0.0:
        keep = times >= burn_in
        times = times[keep] - burn_in
        nodes = nodes[keep]
    return EventSequence(times.copy(), nodes.copy(), horizon, params.n_nodes)
