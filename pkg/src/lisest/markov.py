"""Equivalent Markov jump system of a block LIS and its moment recursions.

For blocks Gamma_ij(k) with neighbor sets N_i = In_i + {i}, the jump system

    xi(k+1) = |N_i| Gamma_{w(k+1) w(k)} xi(k),  Pr(w(k+1)=i | w(k)=j) = 1/|N_i| on N_i

has conditional means xi_i(k) = Pr(w=i) E[xi | w=i] that reproduce the LIS
trajectory zeta(k+1) = Gamma zeta(k) exactly.  The table need not be a proper
kernel (columns may not sum to 1); the algebraic recursions stay exact either
way, and sampling is only offered when every column sums to 1.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from ._linalg import block_slices, sym
from .model import LisModel

__all__ = [
    "MarkovEquivalent",
    "SecondMomentState",
    "build_markov_equivalent",
    "closed_loop_blocks",
    "lis_step",
    "mean_recursion_step",
    "second_moment_step",
    "seed_second_moment",
    "error_trace_bound",
    "sample_chains",
]


@dataclass(frozen=True, eq=False)
class MarkovEquivalent:
    """Transition table and block map for one time index.

    ``gamma[(i, j)]`` holds the nonzero blocks (all diagonal blocks are kept);
    ``p[i, j] = Pr(w(k+1) = i | w(k) = j)``.
    """

    dims: tuple[int, ...]
    gamma: dict
    neighbors: tuple[frozenset, ...]
    p: np.ndarray
    scale: np.ndarray
    column_sums: np.ndarray

    @property
    def s(self) -> int:
        return len(self.dims)

    @property
    def stochastic(self) -> bool:
        return bool(np.allclose(self.column_sums, 1.0, atol=1e-12))

    def flagged_columns(self) -> list[tuple[int, float, str]]:
        out = []
        for j, c in enumerate(self.column_sums):
            if abs(c - 1.0) > 1e-12:
                out.append((j, float(c), "sub-stochastic" if c < 1 else "super-stochastic"))
        return out


def build_markov_equivalent(gamma_blocks, dims: Sequence[int] | None = None, tol: float = 0.0) -> MarkovEquivalent:
    """Build from a mapping (i, j) -> Gamma_ij or a global block matrix with ``dims``."""
    if isinstance(gamma_blocks, np.ndarray):
        if dims is None:
            raise ValueError("a global matrix needs dims")
        sl = block_slices(dims)
        G = gamma_blocks
        blocks = {(i, j): G[sl[i], sl[j]].copy() for i in range(len(dims)) for j in range(len(dims))}
    else:
        blocks = {(int(i), int(j)): np.asarray(b, dtype=float) for (i, j), b in gamma_blocks.items()}
        if dims is None:
            s = 1 + max(max(i, j) for i, j in blocks)
            dims = [None] * s
            for (i, j), b in blocks.items():
                dims[i] = b.shape[0]
                dims[j] = b.shape[1]
    dims = tuple(int(d) for d in dims)
    s = len(dims)
    gamma = {}
    for i in range(s):
        gamma[(i, i)] = blocks.get((i, i), np.zeros((dims[i], dims[i])))
    for (i, j), b in blocks.items():
        if b.shape != (dims[i], dims[j]):
            raise ValueError(f"Gamma block ({i}, {j}) has shape {b.shape}")
        if i != j and b.size and np.max(np.abs(b)) > tol:
            gamma[(i, j)] = b
    nbrs = tuple(frozenset(j for (ii, j) in gamma if ii == i and j != i) for i in range(s))
    scale = np.array([len(nb) + 1 for nb in nbrs], dtype=float)
    p = np.zeros((s, s))
    for i in range(s):
        for j in nbrs[i] | {i}:
            p[i, j] = 1.0 / scale[i]
    return MarkovEquivalent(dims, gamma, nbrs, p, scale, p.sum(axis=0))


def closed_loop_blocks(model: LisModel, k: int, gains) -> dict:
    """Gamma_ij(k) = A_ij(k) (I - K_j(k) C_j(k)) on the model's sparsity."""
    K = gains.K if hasattr(gains, "K") else gains
    out = {}
    for (i, j), Aij in model.epoch_at(k).A_blocks.items():
        Cj = model.C_block(j, k)
        out[(i, j)] = Aij - Aij @ K[j] @ Cj
    return out


def lis_step(me: MarkovEquivalent, zeta: Sequence[np.ndarray]) -> list[np.ndarray]:
    """Direct block recursion zeta_i(k+1) = sum_j Gamma_ij zeta_j."""
    out = []
    for i in range(me.s):
        acc = np.zeros(me.dims[i])
        for j in range(me.s):
            b = me.gamma.get((i, j))
            if b is not None:
                acc = acc + b @ zeta[j]
        out.append(acc)
    return out


def mean_recursion_step(me: MarkovEquivalent, xi: Sequence[np.ndarray]) -> list[np.ndarray]:
    """xi_i(k+1) = sum_j p_ij |N_i| Gamma_ij xi_j, i.e. the conditional-mean update."""
    out = []
    for i in range(me.s):
        acc = np.zeros(me.dims[i])
        for j in sorted(me.neighbors[i] | {i}):
            acc = acc + me.p[i, j] * me.scale[i] * (me.gamma[(i, j)] @ xi[j])
        out.append(acc)
    return out


@dataclass(frozen=True, eq=False)
class SecondMomentState:
    k: int
    Xi: tuple[np.ndarray, ...]

    def total_trace(self) -> float:
        return float(sum(np.trace(X) for X in self.Xi))


def second_moment_step(me: MarkovEquivalent, sm: SecondMomentState) -> SecondMomentState:
    """Xi_i(k+1) = sum_{j in N_i} |N_i| Gamma_ij Xi_j Gamma_ij^T."""
    out = []
    for i in range(me.s):
        acc = np.zeros((me.dims[i], me.dims[i]))
        for j in sorted(me.neighbors[i] | {i}):
            G = me.gamma[(i, j)]
            acc += me.scale[i] * (G @ sm.Xi[j] @ G.T)
        out.append(sym(acc))
    return SecondMomentState(sm.k + 1, tuple(out))


def seed_second_moment(ebar: Sequence[np.ndarray], k: int = 1) -> SecondMomentState:
    """Xi_i = e_i e_i^T: the degenerate seed whose trace bound is tight."""
    return SecondMomentState(k, tuple(np.outer(e, e) for e in ebar))


def error_trace_bound(sm: SecondMomentState, ebar) -> dict:
    """Compare ||e||^2 with sum_i Tr(Xi_i)."""
    e = np.concatenate([np.ravel(b) for b in ebar]) if not isinstance(ebar, np.ndarray) or ebar.ndim != 1 else ebar
    lhs = float(e @ e)
    rhs = sm.total_trace()
    return {"lhs": lhs, "rhs": rhs, "holds": bool(lhs <= rhs * (1 + 1e-12) + 1e-300)}


def sample_chains(tables: Sequence[MarkovEquivalent] | Callable[[int], MarkovEquivalent], xi0: Sequence[np.ndarray],
                  steps: int, n_chains: int, seed: int = 0) -> dict:
    """Monte Carlo realization of the jump system.

    Needs a proper kernel at every step and equal block dims.  The initial mode
    is uniform with xi(0) | w(0)=i equal to s * xi_i(0), so the conditional
    means start at xi_i(0).  Returns per-step arrays ``mean[k, i]`` and
    ``second[k, i]`` of Pr(w=i) E[. | w=i] estimates plus standard errors.
    """
    get = tables if callable(tables) else (lambda k: tables[k])
    me0 = get(0)
    s = me0.s
    if len(set(me0.dims)) != 1:
        raise ValueError("sampling needs equal block dimensions")
    d = me0.dims[0]
    rng = np.random.default_rng(seed)
    mode = rng.integers(0, s, size=n_chains)
    x = s * np.stack([np.asarray(xi0[i], dtype=float) for i in range(s)])[mode]
    means = np.zeros((steps + 1, s, d))
    means_se = np.zeros((steps + 1, s, d))
    seconds = np.zeros((steps + 1, s, d, d))
    seconds_se = np.zeros((steps + 1, s, d, d))

    def record(k):
        for i in range(s):
            ind = (mode == i)[:, None]
            v = np.where(ind, x, 0.0)
            means[k, i] = v.mean(axis=0)
            means_se[k, i] = v.std(axis=0, ddof=1) / np.sqrt(n_chains)
            outer = np.einsum("ba,bc->bac", v, v)
            seconds[k, i] = outer.mean(axis=0)
            seconds_se[k, i] = outer.std(axis=0, ddof=1) / np.sqrt(n_chains)

    record(0)
    for k in range(steps):
        me = get(k)
        if not me.stochastic:
            raise ValueError(f"transition table at step {k} is not a proper kernel: {me.flagged_columns()}")
        G = np.zeros((s, s, d, d))
        for (i, j), b in me.gamma.items():
            G[i, j] = b
        # next mode drawn from column mode of p
        cdf = np.cumsum(me.p[:, mode], axis=0)
        u = rng.random(n_chains)
        new = np.minimum((u[None, :] > cdf).sum(axis=0), s - 1)
        x = me.scale[new][:, None] * np.einsum("bij,bj->bi", G[new, mode], x)
        mode = new
        record(k + 1)
    return {"mean": means, "mean_se": means_se, "second": seconds, "second_se": seconds_se}

