"""Distributed Kalman-like estimator driven by the distributed modified Riccati equation.

Every subsystem ``i`` keeps its own prior/posterior pair and gain:

    K_i(k)      = Pb_i(k) C_i^T (C_i Pb_i(k) C_i^T + R_i)^{-1}
    P_i(k)      = Pb_i(k) - K_i(k) C_i Pb_i(k)
    Pb_i(k+1)   = theta_i(k)^2 * sum_{j in In_i(k) + {i}} A_ij P_j(k) A_ij^T + Q_i(k)

and estimates

    xb_i(k) = sum_{j in In_i(k-1) + {i}} A_ij(k-1) xh_j(k-1)
    xh_i(k) = xb_i(k) + K_i(k) (z_i(k) - C_i(k) xb_i(k)).

Rounds are synchronous: a step reads only the previous round's blocks, and the
per-subsystem row updates inside a round are independent of one another.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from ._linalg import (
    block_diag,
    block_slices,
    kalman_gain,
    riccati_update,
    split_diag_blocks,
    sym,
    innovation_factor,
)
from .model import LisModel, ModelError, decoupling_variables
import scipy.linalg as sla

__all__ = [
    "DmreState",
    "GainSet",
    "EstimatorState",
    "SteadyState",
    "MissingEstimateError",
    "theta_at",
    "dmre_row",
    "dmre_step",
    "local_gains",
    "estimator_row",
    "estimator_step",
    "omega_mask",
    "scaled_transition",
    "compact_dmre_map",
    "compact_dmre_step",
    "steady_state_solve",
    "steady_gain_set",
    "steady_estimator_step",
    "run_dmre",
]


class MissingEstimateError(RuntimeError):
    """A neighbor's estimate from the previous round was not available."""


@dataclass(frozen=True, eq=False)
class DmreState:
    """Prior ``P_bar`` and posterior ``P`` blocks at time ``k``."""

    k: int
    P: tuple[np.ndarray, ...]
    P_bar: tuple[np.ndarray, ...]

    @classmethod
    def initial(cls, model: LisModel, P0=None) -> "DmreState":
        """State at k = 0.  ``P0`` is a scalar multiple of identity, a list of
        blocks, or ``None`` for identity blocks.  There is no prior at k = 0, so
        ``P_bar`` mirrors ``P``."""
        if P0 is None:
            P0 = 1.0
        if np.isscalar(P0):
            blocks = tuple(float(P0) * np.eye(d) for d in model.dims)
        else:
            blocks = tuple(sym(np.asarray(b, dtype=float)) for b in P0)
            if len(blocks) != model.s or any(b.shape != (d, d) for b, d in zip(blocks, model.dims)):
                raise ModelError("initial covariance blocks do not match the model dims")
        return cls(0, blocks, blocks)

    def P_global(self) -> np.ndarray:
        return block_diag(self.P)

    def P_bar_global(self) -> np.ndarray:
        return block_diag(self.P_bar)

    def trace(self) -> float:
        return float(sum(np.trace(b) for b in self.P_bar))


@dataclass(frozen=True, eq=False)
class GainSet:
    """Block gains K_i for time ``k``."""

    K: tuple[np.ndarray, ...]
    k: int | None = None

    def global_matrix(self) -> np.ndarray:
        return block_diag(self.K)


@dataclass(frozen=True, eq=False)
class EstimatorState:
    k: int
    x_hat: tuple[np.ndarray, ...]
    x_bar: tuple[np.ndarray, ...]

    @classmethod
    def initial(cls, model: LisModel, x_hat0=None) -> "EstimatorState":
        if x_hat0 is None:
            blocks = tuple(np.zeros(d) for d in model.dims)
        else:
            x = np.asarray(x_hat0, dtype=float)
            if x.ndim == 1 and x.shape[0] == model.n:
                blocks = tuple(x[sl].copy() for sl in block_slices(model.dims))
            else:
                blocks = tuple(np.asarray(b, dtype=float) for b in x_hat0)
        return cls(0, blocks, blocks)

    def x_hat_global(self) -> np.ndarray:
        return np.concatenate(self.x_hat)


@dataclass(frozen=True, eq=False)
class SteadyState:
    P_bar_star: np.ndarray
    K_star: GainSet
    theta: np.ndarray
    iterations: int
    residual: float
    converged: bool
    diverged: bool


def theta_at(theta, model: LisModel, k: int, policy: str = "out") -> np.ndarray:
    """Resolve a decoupling-variable spec to the vector theta(k)."""
    if theta is None:
        return decoupling_variables(model, policy, k)
    if callable(theta):
        th = np.asarray(theta(k), dtype=float)
    else:
        th = np.asarray(theta, dtype=float)
        if th.ndim == 0:
            th = np.full(model.s, float(th))
    if th.shape != (model.s,):
        raise ModelError(f"theta must have {model.s} entries")
    if np.any(th == 0) or not np.all(np.isfinite(th)):
        raise ModelError("decoupling variables must be finite and nonzero")
    return th


# ---------------------------------------------------------------------------
# blockwise recursion
# ---------------------------------------------------------------------------

def dmre_row(i: int, model: LisModel, k: int, P: Mapping[int, np.ndarray], theta_i: float) -> np.ndarray:
    """Prior Pb_i(k+1) from the posteriors of subsystem i and its in-neighbors at k.

    Only ``P[j]`` for j in In_i(k) + {i} and row i of A(k) are read.
    """
    acc = np.zeros((model.dims[i], model.dims[i]))
    for j in sorted(model.in_neighbors(i, k) | {i}):
        Aij = model.A_block(i, j, k)
        acc += Aij @ P[j] @ Aij.T
    return sym(theta_i ** 2 * acc + model.Q_block(i, k))


def dmre_step(state: DmreState, model: LisModel, theta=None, *, policy: str = "out") -> DmreState:
    """Advance the DMRE from ``state.k`` to ``state.k + 1``.

    Returns the new prior Pb(k+1) together with its measurement update P(k+1).
    Raises SingularInnovationError if C_i Pb_i C_i^T + R_i is not PD.
    """
    k = state.k
    th = theta_at(theta, model, k, policy)
    P_prev = dict(enumerate(state.P))
    P_bar = tuple(dmre_row(i, model, k, P_prev, th[i]) for i in range(model.s))
    P = tuple(riccati_update(P_bar[i], model.C_block(i, k + 1), model.R_block(i, k + 1)) for i in range(model.s))
    return DmreState(k + 1, P, P_bar)


def local_gains(state: DmreState, model: LisModel) -> GainSet:
    """K_i(k) = Pb_i(k) C_i(k)^T (C_i Pb_i C_i^T + R_i)^{-1} for k = ``state.k``."""
    k = state.k
    return GainSet(tuple(kalman_gain(state.P_bar[i], model.C_block(i, k), model.R_block(i, k))
                         for i in range(model.s)), k)


def estimator_row(i: int, model: LisModel, k: int, x_hat_prev: Mapping[int, np.ndarray],
                  K_i: np.ndarray, z_i: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(xb_i(k), xh_i(k)) from the previous estimates of i and its in-neighbors."""
    xb = np.zeros(model.dims[i])
    for j in sorted(model.in_neighbors(i, k - 1) | {i}):
        xj = x_hat_prev.get(j) if isinstance(x_hat_prev, Mapping) else x_hat_prev[j]
        if xj is None:
            raise MissingEstimateError(f"subsystem {i} lacks the estimate of neighbor {j} at k={k - 1}")
        xb = xb + model.A_block(i, j, k - 1) @ xj
    Ci = model.C_block(i, k)
    xh = xb + K_i @ (np.asarray(z_i, dtype=float) - Ci @ xb)
    return xb, xh


def _z_blocks(z, model: LisModel) -> list[np.ndarray]:
    z = z if not isinstance(z, np.ndarray) or z.ndim != 1 or len(z) != model.m else \
        [z[sl] for sl in block_slices(model.mdims)]
    z = list(z)
    if len(z) != model.s:
        raise ModelError("measurement must be a global vector or one block per subsystem")
    return z


def estimator_step(est: EstimatorState, z, model: LisModel, gains: GainSet) -> EstimatorState:
    """One round of the distributed estimator, producing estimates at ``est.k + 1``."""
    k = est.k + 1
    if gains.k is not None and gains.k != k:
        raise MissingEstimateError(f"gains are for k={gains.k} but the estimator is advancing to k={k}")
    prev = dict(enumerate(est.x_hat))
    zb = _z_blocks(z, model)
    rows = [estimator_row(i, model, k, prev, gains.K[i], zb[i]) for i in range(model.s)]
    return EstimatorState(k, tuple(r[1] for r in rows), tuple(r[0] for r in rows))


# ---------------------------------------------------------------------------
# compact (global) form
# ---------------------------------------------------------------------------

def omega_mask(dims: Sequence[int]) -> np.ndarray:
    """Block-diagonal all-ones mask; Hadamard product with it keeps diagonal blocks."""
    return block_diag([np.ones((d, d)) for d in dims])


def scaled_transition(A: np.ndarray, theta: np.ndarray, dims: Sequence[int]) -> np.ndarray:
    """A with block row i multiplied by theta_i."""
    scale = np.repeat(np.asarray(theta, dtype=float), dims)
    return scale[:, None] * A


def compact_dmre_map(P_bar: np.ndarray, Acal: np.ndarray, C: np.ndarray, Q: np.ndarray,
                     R: np.ndarray, omega: np.ndarray) -> np.ndarray:
    """Omega o (Acal Pb Acal^T + Q - Acal Pb C^T (C Pb C^T + R)^{-1} C Pb Acal^T)."""
    if C.shape[0]:
        fac = innovation_factor(C @ P_bar @ C.T + R)
        CPA = C @ P_bar @ Acal.T
        inner = Acal @ P_bar @ Acal.T - CPA.T @ sla.cho_solve(fac, CPA)
    else:
        inner = Acal @ P_bar @ Acal.T
    return sym(omega * (inner + Q))


def compact_dmre_step(P_bar: np.ndarray, model: LisModel, k: int, theta=None, *, policy: str = "out") -> np.ndarray:
    """Global prior Pb(k+1) from Pb(k) in one matrix expression.

    Uses C(k), R(k) for the measurement update and A(k), Q(k), theta(k) for the
    prediction, matching ``dmre_step`` applied to a state whose prior is Pb(k).
    """
    th = theta_at(theta, model, k, policy)
    Acal = scaled_transition(model.A(k), th, model.dims)
    return compact_dmre_map(np.asarray(P_bar, dtype=float), Acal, model.C(k), model.Q(k), model.R(k),
                            omega_mask(model.dims))


def steady_gain_set(model: LisModel, P_bar: np.ndarray) -> GainSet:
    """Block gains K_i = Pb_i C_i^T (C_i Pb_i C_i^T + R_i)^{-1} of a global prior."""
    blocks = split_diag_blocks(P_bar, model.dims)
    return GainSet(tuple(kalman_gain(blocks[i], model.C_block(i), model.R_block(i)) for i in range(model.s)))


def steady_state_solve(
    model: LisModel,
    theta=None,
    *,
    policy: str = "out",
    tol: float = 1e-12,
    max_iter: int = 10_000,
    ceiling: float = 1e12,
    P_bar_init=None,
) -> SteadyState:
    """Fixed point of the compact DMRE for a time-invariant model.

    Iterates from Pb(1) = Q unless ``P_bar_init`` is given, stopping when
    successive iterates differ by less than ``tol * max(1, |Pb|_max)`` in max
    norm.  ``diverged`` is set once trace(Pb) exceeds ``ceiling * trace(Q)``;
    neither flag set after ``max_iter`` means the run was inconclusive.
    """
    if not model.time_invariant:
        raise ModelError("steady-state solution needs a time-invariant model")
    th = theta_at(theta, model, 0, policy)
    Acal = scaled_transition(model.A(0), th, model.dims)
    C, Q, R = model.C(0), model.Q(0), model.R(0)
    omega = omega_mask(model.dims)
    X = Q.copy() if P_bar_init is None else sym(omega * np.asarray(P_bar_init, dtype=float))
    trQ = float(np.trace(Q))
    limit = ceiling * trQ if trQ > 0 else ceiling
    residual = np.inf
    for it in range(1, max_iter + 1):
        X_new = compact_dmre_map(X, Acal, C, Q, R, omega)
        tr = float(np.trace(X_new))
        if not np.isfinite(tr) or tr > limit:
            return SteadyState(X_new, GainSet(tuple(np.full((d, md), np.nan) for d, md in zip(model.dims, model.mdims))),
                               th, it, float("inf"), False, True)
        residual = float(np.max(np.abs(X_new - X)))
        X = X_new
        if residual < tol * max(1.0, float(np.max(np.abs(X)))):
            return SteadyState(X, steady_gain_set(model, X), th, it, residual, True, False)
    return SteadyState(X, steady_gain_set(model, X), th, max_iter, residual, False, False)


def steady_estimator_step(est: EstimatorState, z, model: LisModel, K_star: GainSet) -> EstimatorState:
    """Constant-gain version of ``estimator_step``; no covariance exchange is needed."""
    return estimator_step(est, z, model, GainSet(K_star.K, None))


def run_dmre(model: LisModel, horizon: int, theta=None, *, policy: str = "out", P0=None) -> list[DmreState]:
    """States for k = 0..horizon."""
    states = [DmreState.initial(model, P0)]
    for _ in range(horizon):
        states.append(dmre_step(states[-1], model, theta, policy=policy))
    return states
