"""Basis kernel families and the flattened channel indexing used across the package."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad

__all__ = ["KernelBasis", "ExponentialBasis", "ChannelIndex"]


class KernelBasis:
    """A family of normalized causal basis kernels.

    Every kernel integrates to one over (0, inf) and vanishes on t <= 0, so
    interaction weights are dimensionless.  Subclasses must implement
    ``evaluate``; the remaining methods fall back to generic quadrature /
    bisection and should be overridden when closed forms exist.
    """

    n_basis: int = 0
    cutoff_epsilon: float = 1e-6

    def evaluate(self, q: int, t):
        """Kernel value g_q(t); zero for t <= 0."""
        raise NotImplementedError

    def cutoff_time(self, q: int, epsilon: float | None = None) -> float:
        """Smallest t with g_q(t) <= epsilon, assuming g_q nonincreasing on t > 0."""
        eps = self.cutoff_epsilon if epsilon is None else epsilon
        if self.evaluate(q, 1e-12) <= eps:
            return 0.0
        lo, hi = 0.0, 1.0
        while self.evaluate(q, hi) > eps:
            hi *= 2.0
            if hi > 1e18:
                raise RuntimeError("kernel does not decay below epsilon")
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if self.evaluate(q, mid) > eps:
                lo = mid
            else:
                hi = mid
        return hi

    def cross_integral(self, q: int, q2: int) -> float:
        """Overlap integral of g_q and g_q2 over (0, inf)."""
        upper = max(self.cutoff_time(q), self.cutoff_time(q2))
        val, _ = quad(lambda t: self.evaluate(q, t) * self.evaluate(q2, t), 0.0, upper, limit=200)
        return val

    def integral_to(self, q: int, s: float) -> float:
        """Mass of g_q on (0, s]."""
        if s <= 0.0:
            return 0.0
        val, _ = quad(lambda t: self.evaluate(q, t), 0.0, s, limit=200)
        return val


class ExponentialBasis(KernelBasis):
    """Exponential kernels g_q(t) = beta_q exp(-beta_q t) for t > 0.

    The only family shipped with exact recursions; all integrals are analytic.
    """

    def __init__(self, decays, cutoff_epsilon: float = 1e-6):
        decays = np.atleast_1d(np.asarray(decays, dtype=np.float64))
        if decays.ndim != 1 or decays.size < 1:
            raise ValueError("decays must be a non-empty 1-d sequence")
        if np.any(decays <= 0.0):
            raise ValueError("all decay rates must be positive")
        if cutoff_epsilon <= 0.0:
            raise ValueError("cutoff_epsilon must be positive")
        self.decays = decays
        self.n_basis = decays.size
        self.cutoff_epsilon = float(cutoff_epsilon)

    def __repr__(self) -> str:
        return f"ExponentialBasis(decays={self.decays.tolist()})"

    def __len__(self) -> int:
        return self.n_basis

    def evaluate(self, q: int, t):
        beta = self.decays[q]
        t = np.asarray(t, dtype=np.float64)
        out = np.where(t > 0.0, beta * np.exp(-beta * np.clip(t, 0.0, None)), 0.0)
        return out if out.ndim else float(out)

    def cutoff_time(self, q: int, epsilon: float | None = None) -> float:
        # g_q(0+) = beta_q, so the threshold is crossed at log(beta/eps)/beta.
        eps = self.cutoff_epsilon if epsilon is None else epsilon
        beta = self.decays[q]
        if eps >= beta:
            return 0.0
        return float(np.log(beta / eps) / beta)

    def cross_integral(self, q: int, q2: int) -> float:
        b1, b2 = self.decays[q], self.decays[q2]
        return float(b1 * b2 / (b1 + b2))

    def integral_to(self, q: int, s: float) -> float:
        if s <= 0.0:
            return 0.0
        return float(1.0 - np.exp(-self.decays[q] * s))

    def cross_integral_matrix(self) -> np.ndarray:
        """Symmetric matrix of pairwise overlap integrals."""
        b = self.decays
        return b[:, None] * b[None, :] / (b[:, None] + b[None, :])


@dataclass(frozen=True)
class ChannelIndex:
    """Bijection between flat channel labels and (node, basis) pairs.

    Channel 0 is the deterministic baseline; channel a >= 1 maps to node
    (a-1) // n_basis and basis kernel (a-1) % n_basis.
    """

    n_nodes: int
    n_basis: int

    def __post_init__(self):
        if self.n_nodes < 1 or self.n_basis < 1:
            raise ValueError("n_nodes and n_basis must be >= 1")

    @property
    def size(self) -> int:
        """Number of channels including the baseline."""
        return self.n_nodes * self.n_basis + 1

    def node_of(self, a: int) -> int:
        if not 1 <= a < self.size:
            raise IndexError(f"channel {a} has no source node")
        return (a - 1) // self.n_basis

    def basis_of(self, a: int) -> int:
        if not 1 <= a < self.size:
            raise IndexError(f"channel {a} has no basis kernel")
        return (a - 1) % self.n_basis

    def index_of(self, j: int, q: int) -> int:
        if not 0 <= j < self.n_nodes:
            raise IndexError(f"node {j} out of range")
        if not 0 <= q < self.n_basis:
            raise IndexError(f"basis {q} out of range")
        return 1 + j * self.n_basis + q

    def channel_nodes(self) -> np.ndarray:
        """Source node of every non-baseline channel, in channel order."""
        return np.repeat(np.arange(self.n_nodes), self.n_basis)

    def channel_bases(self) -> np.ndarray:
        """Basis kernel of every non-baseline channel, in channel order."""
        return np.tile(np.arange(self.n_basis), self.n_nodes)
