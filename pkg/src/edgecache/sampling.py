"""Probabilistic neighbor selection with importance-rescaled combination weights.

Each node keeps a row-stochastic reference-weight row over all nodes (matrix
D, initialized from a doubly-stochastic B).  Per round it samples each
neighbor with an appear probability driven by the sampling rate z, rescales
the sampled reference weights by 1/p so the realized weights stay unbiased,
closes the row through the self weight, and updates D from gradient-alignment
feedback so consistently similar neighbors gain weight over time.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def make_uniform_b(n: int) -> np.ndarray:
    """All-1/n matrix; doubly stochastic by construction."""
    if n < 1:
        raise ValueError("n must be at least 1")
    return np.full((n, n), 1.0 / n)


def random_doubly_stochastic(n: int, rng, iters: int = 200) -> np.ndarray:
    """Sinkhorn-normalized random positive matrix."""
    A = rng.uniform(0.1, 1.0, size=(n, n))
    for _ in range(iters):
        A /= A.sum(axis=1, keepdims=True)
        A /= A.sum(axis=0, keepdims=True)
    return A


def z_upper_bound(B: np.ndarray) -> float:
    """min over nonzero entries of [B^2]_ij / (2 b_ij)."""
    B = np.asarray(B, dtype=float)
    B2 = B @ B
    nz = B > 0
    return float(np.min(B2[nz] / (2.0 * B[nz])))


def appear_probability(b_ij: float, z: float) -> float:
    """Bernoulli sampling probability 1 / (1 + z / b_ij), in (0, 1]."""
    if b_ij <= 0:
        raise ValueError("b_ij must be positive")
    if z < 0:
        raise ValueError("z must be non-negative")
    return 1.0 / (1.0 + z / b_ij)


@dataclass
class CombinationMatrix:
    """Reference matrix B, evolving weights D, and the sampling rate z.

    Rows index the local node, columns the source node whose gradient is
    weighted.  Appear probabilities are recomputed from the current D each
    round, so feedback that concentrates weight on a neighbor also makes it
    more likely to be sampled.
    """

    B: np.ndarray
    z: float
    D: np.ndarray = field(default=None)

    def __post_init__(self):
        self.B = np.asarray(self.B, dtype=float)
        n = self.B.shape[0]
        if self.B.shape != (n, n):
            raise ValueError("B must be square")
        if np.any(self.B < 0):
            raise ValueError("B must be non-negative")
        if not (np.allclose(self.B.sum(axis=0), 1.0, atol=1e-9)
                and np.allclose(self.B.sum(axis=1), 1.0, atol=1e-9)):
            raise ValueError("B must be doubly stochastic")
        bound = z_upper_bound(self.B)
        if not 0.0 <= self.z <= bound + 1e-12:
            raise ValueError(f"z={self.z} outside [0, {bound}]")
        if self.D is None:
            self.D = self.B.copy()
        else:
            self.D = np.asarray(self.D, dtype=float)

    @property
    def n(self) -> int:
        return self.B.shape[0]

    def appear_probabilities(self, local: int) -> np.ndarray:
        """Per-source appear probabilities for one local node (self entry is 1)."""
        p = np.ones(self.n)
        for j in range(self.n):
            if j != local:
                p[j] = appear_probability(self.D[local, j], self.z)
        return p

    @classmethod
    def uniform(cls, n: int, z_frac: float = 0.5) -> "CombinationMatrix":
        B = make_uniform_b(n)
        return cls(B=B, z=z_frac * z_upper_bound(B))


def sample_neighbors(M: CombinationMatrix, local: int, rng) -> np.ndarray:
    """One round of Bernoulli neighbor selection with 1/p importance rescaling.

    Returns the realized weight row (self entry left at 0; close it with
    :func:`self_weight`).  The rescaling is applied to a per-round copy of the
    reference weights, so E[w_j] = d_j for every neighbor.
    """
    n = M.n
    w = np.zeros(n)
    for j in range(n):
        if j == local:
            continue
        d = M.D[local, j]
        if d <= 0:
            continue
        p = appear_probability(d, M.z)
        if rng.random() < p:
            w[j] = d / p
    return w


def self_weight(w_row: np.ndarray, local: int) -> float:
    """Close the realized row through the local node: w_ii = 1 - sum of others.

    A negative self weight (over-weighted sampled neighbors) is clamped to 0
    and the row renormalized, keeping every realized row a convex combination.
    """
    others = float(w_row.sum() - w_row[local])
    w_row[local] = 1.0 - others
    if w_row[local] < 0.0:
        w_row[local] = 0.0
        w_row /= w_row.sum()
    return float(w_row[local])


def combine_update(theta_local, grads, w_row: np.ndarray, eta: float):
    """Weighted-gradient descent step: theta - eta * sum_j w_j grad_j.

    ``grads`` maps node index to a gradient ParamVector (or None for nodes
    that were not sampled); zero-weight entries are skipped.
    """
    out = theta_local.copy()
    for j, wj in enumerate(w_row):
        if wj == 0.0:
            continue
        g = grads[j]
        if g is None:
            continue
        if g.layout != theta_local.layout:
            raise ValueError("gradient layout mismatch")
        out.data -= eta * wj * g.data
    return out


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(a @ b / (na * nb))


def feedback_update(M: CombinationMatrix, local: int, grad_local, grads_sampled, step: float) -> np.ndarray:
    """Multiplicative-weights feedback on the local reference row.

    Each sampled neighbor's weight is scaled by exp(step * cos(g_j, g_local));
    the row is then renormalized to sum 1.  Aligned neighbors gain weight
    round over round, unsampled entries only move through renormalization.
    """
    row = M.D[local]
    for j, g in grads_sampled.items():
        if j == local:
            continue
        row[j] *= np.exp(step * _cosine(g.data, grad_local.data))
    row /= row.sum()
    return row


def dump_matrix(A: np.ndarray, path) -> None:
    """Debug dump: comma-delimited rows, 17 significant digits."""
    with open(path, "w", newline="\n") as fh:
        for row in np.atleast_2d(A):
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")
