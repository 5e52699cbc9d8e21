"""Stability and boundedness analysis for the DMRE and the distributed estimator.

The central object is the lifted positive map

    L_G(X) = sum_i (A_i - G_i C) X (A_i - G_i C)^T,    A_i = theta_i E_i A,

where ``E_i`` keeps block row ``i``.  For a time-invariant model satisfying the
local reachability condition, the DMRE is bounded iff some gain set G makes
rho(L_G) < 1, iff a block LMI in (X, Y_1..Y_s) is feasible.  No SDP solver is
used: feasibility is certified constructively through the operator.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
import scipy.linalg as sla
from scipy.sparse.linalg import ArpackNoConvergence, LinearOperator, eigs

from ._linalg import (
    block_diag,
    block_slices,
    kalman_gain,
    max_eig,
    min_eig,
    psd_sqrt,
    spectral_radius,
    split_diag_blocks,
    sym,
)
from .estimator import run_dmre, steady_state_solve, theta_at
from .model import LisModel, ModelError, scale_coupling

__all__ = [
    "ReachabilityResult",
    "DetectabilityResult",
    "UniformReport",
    "LiftedOperator",
    "StabilityReport",
    "ConditionReport",
    "RowLmiResult",
    "SweepPoint",
    "SweepResult",
    "reachability_check",
    "detectability_check",
    "uniform_reachability_gramian",
    "uniform_detectability_probe",
    "block_row_selector",
    "build_lifted_operator",
    "steady_gain_terms",
    "operator_spectral_radius",
    "adjoint_apply",
    "undetectable_mode",
    "boundedness_check",
    "distributed_lmi_check",
    "centralized_lmi_feasibility",
    "weak_coupling_sweep",
    "verify_conditions",
]

YES, NO, INCONCLUSIVE = "yes", "no", "inconclusive"


# ---------------------------------------------------------------------------
# time-invariant pair checks
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ReachabilityResult:
    reachable: bool
    gramian_min_eig: float
    gramian: np.ndarray


def _check_finite(*mats):
    for M in mats:
        if not np.all(np.isfinite(M)):
            raise ValueError("matrix has nonfinite entries")


def reachability_check(X, Y, tol: float = 1e-9) -> ReachabilityResult:
    """Gramian sum_{i<n} X^i Y Y^T X^iT; reachable iff its least eigenvalue > tol.

    By Cayley-Hamilton no longer window can add rank.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.asarray(Y, dtype=float).reshape(X.shape[0], -1)
    _check_finite(X, Y)
    n = X.shape[0]
    G = np.zeros((n, n))
    T = Y.copy()
    for _ in range(n):
        G += T @ T.T
        T = X @ T
    lam = min_eig(G)
    return ReachabilityResult(bool(lam > tol), lam, G)


@dataclass(frozen=True, eq=False)
class DetectabilityResult:
    detectable: bool
    witness_K: np.ndarray | None
    witness_radius: float | None
    unstable_eigs: tuple[complex, ...] = ()


def detectability_check(Y, X, tol: float = 1e-9) -> DetectabilityResult:
    """PBH test on the modes of X with |lambda| >= 1, plus a Riccati witness K
    with rho(X + K Y) < 1 when the test passes."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n = X.shape[0]
    Y = np.asarray(Y, dtype=float).reshape(-1, n)
    _check_finite(X, Y)
    eigs_ = np.linalg.eigvals(X)
    bad = []
    for lam in eigs_:
        if abs(lam) < 1.0 - tol:
            continue
        pbh = np.vstack([lam * np.eye(n) - X, Y.astype(complex)])
        sv = np.linalg.svd(pbh, compute_uv=False)
        if sv[-1] <= tol * max(1.0, sv[0]):
            bad.append(complex(lam))
    if bad:
        return DetectabilityResult(False, None, None, tuple(bad))
    m = Y.shape[0]
    if m == 0:
        return DetectabilityResult(True, np.zeros((n, 0)), spectral_radius(X))
    try:
        P = sla.solve_discrete_are(X.T, Y.T, np.eye(n), np.eye(m))
        K = -X @ P @ Y.T @ np.linalg.inv(Y @ P @ Y.T + np.eye(m))
        rad = spectral_radius(X + K @ Y)
    except (np.linalg.LinAlgError, ValueError):
        return DetectabilityResult(True, None, None)
    if rad >= 1.0:
        return DetectabilityResult(True, None, rad)
    return DetectabilityResult(True, K, rad)


# ---------------------------------------------------------------------------
# time-varying (finite-horizon) checks
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class UniformReport:
    """Finite-horizon evidence for a uniform property; never a proof."""

    verdict: str
    worst_value: float
    worst_k: int
    per_k: np.ndarray
    finite_horizon: bool = True
    diagnostics: tuple[str, ...] = ()


def _pair_seq(seq) -> Callable[[int], tuple[np.ndarray, np.ndarray]]:
    if callable(seq):
        return seq
    if isinstance(seq, tuple) and len(seq) == 2 and np.ndim(seq[0]) == 2:
        pair = (np.asarray(seq[0], dtype=float), np.asarray(seq[1], dtype=float))
        return lambda k: pair
    items = list(seq)

    def get(k):
        if k >= len(items):
            raise ValueError(f"window needs index {k} but the sequence has {len(items)} entries")
        X, Y = items[k]
        return np.asarray(X, dtype=float), np.asarray(Y, dtype=float)
    return get


def _transition(get, X_first: bool, k0: int, k1: int, n: int) -> np.ndarray:
    """Phi_X(k1, k0) = X(k1-1) ... X(k0)."""
    Phi = np.eye(n)
    for j in range(k0, k1):
        Xj = get(j)[0] if X_first else get(j)[1]
        Phi = np.atleast_2d(Xj) @ Phi
    return Phi


def uniform_reachability_gramian(seq, t: int, r: float, horizon: int) -> UniformReport:
    """Least eigenvalue over k in [0, horizon] of
    sum_{i=0}^t Phi_X(k+t+1, k+i+1) Y(k+i) Y(k+i)^T Phi_X(k+t+1, k+i+1)^T.

    ``seq`` maps k to (X(k), Y(k)); it may be a callable, a list, or one pair.
    """
    get = _pair_seq(seq)
    X0, Y0 = get(0)
    n = np.atleast_2d(X0).shape[0]
    vals = np.empty(horizon + 1)
    for k in range(horizon + 1):
        G = np.zeros((n, n))
        for i in range(t + 1):
            Phi = _transition(get, True, k + i + 1, k + t + 1, n)
            Y = np.asarray(get(k + i)[1], dtype=float).reshape(n, -1)
            PY = Phi @ Y
            G += PY @ PY.T
        vals[k] = min_eig(G)
    kw = int(np.argmin(vals))
    verdict = "certified-on-horizon" if vals[kw] >= r else "falsified"
    return UniformReport(verdict, float(vals[kw]), kw, vals)


def _s_procedure(G: np.ndarray, F: np.ndarray, gamma: float, sigma: float) -> float:
    """max over a tau grid of lambda_min(G - sigma I + tau (gamma^2 I - F))."""
    n = G.shape[0]
    best = -np.inf
    for tau in np.concatenate([[0.0], np.logspace(-6, 6, 121)]):
        best = max(best, min_eig(G - sigma * np.eye(n) + tau * (gamma ** 2 * np.eye(n) - F)))
        if best >= 0:
            break
    return best


def uniform_detectability_probe(seq, mu: int, nu: int, gamma: float, sigma: float, horizon: int,
                                samples: int = 256, seed: int = 0, tol: float = 1e-12) -> UniformReport:
    """Check, for k in [0, horizon], that ||Phi_X(k+mu,k) xi|| >= gamma ||xi||
    implies xi^T W(k) xi >= sigma ||xi||^2, W the observability Gramian over
    [k, k+nu].

    ``seq`` maps k to (Y(k), X(k)).  Each k is certified through an S-procedure
    multiplier or falsified by a sampled counterexample.
    """
    if not (nu >= mu >= 0 and 0 <= gamma < 1 and sigma > 0):
        raise ValueError("need nu >= mu >= 0, 0 <= gamma < 1 and sigma > 0")
    get = _pair_seq(seq)
    n = np.atleast_2d(get(0)[1]).shape[0]
    rng = np.random.default_rng(seed)
    verdicts = []
    margins = np.empty(horizon + 1)
    for k in range(horizon + 1):
        W = np.zeros((n, n))
        Phi = np.eye(n)
        Phi_mu = np.eye(n) if mu == 0 else None
        for i in range(nu + 1):
            Y = np.asarray(get(k + i)[0], dtype=float).reshape(-1, n)
            YP = Y @ Phi
            W += YP.T @ YP
            Phi = np.atleast_2d(get(k + i)[1]) @ Phi
            if i + 1 == mu:
                Phi_mu = Phi.copy()
        F = Phi_mu.T @ Phi_mu
        margin = _s_procedure(W, F, gamma, sigma)
        margins[k] = margin
        if margin >= -tol:
            verdicts.append("certified")
            continue
        cand = rng.standard_normal((samples, n))
        cand = np.vstack([cand, np.linalg.eigh(W)[1].T])
        cand /= np.linalg.norm(cand, axis=1, keepdims=True)
        prem = np.einsum("bi,ij,bj->b", cand, F, cand) >= gamma ** 2
        concl = np.einsum("bi,ij,bj->b", cand, W, cand) >= sigma
        verdicts.append("falsified" if np.any(prem & ~concl) else "inconclusive")
    if "falsified" in verdicts:
        verdict = "falsified"
    elif all(v == "certified" for v in verdicts):
        verdict = "certified-on-horizon"
    else:
        verdict = "inconclusive"
    kw = int(np.argmin(margins))
    return UniformReport(verdict, float(margins[kw]), kw, margins)


# ---------------------------------------------------------------------------
# lifted operator
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class LiftedOperator:
    """X -> sum_i M_i X M_i^T with square terms M_i."""

    terms: tuple[np.ndarray, ...]

    @property
    def n(self) -> int:
        return self.terms[0].shape[0]

    def apply(self, X: np.ndarray) -> np.ndarray:
        out = np.zeros((self.n, self.n), dtype=np.result_type(X, float))
        for M in self.terms:
            out += M @ X @ M.T
        return out

    def adjoint(self, X: np.ndarray) -> np.ndarray:
        out = np.zeros((self.n, self.n), dtype=np.result_type(X, float))
        for M in self.terms:
            out += M.T @ X @ M
        return out

    @cached_property
    def kron_matrix(self) -> np.ndarray:
        """sum_i M_i kron M_i; valid for both row- and column-major vec."""
        n2 = self.n ** 2
        K = np.zeros((n2, n2))
        for M in self.terms:
            K += np.kron(M, M)
        return K

    def spectral_radius(self, **kw) -> float:
        return operator_spectral_radius(self, **kw)[0]

    def power_iteration(self, tol: float = 1e-12, max_iter: int = 100_000) -> tuple[float, bool]:
        """Growth ratio of trace(L^k(I)); converges to rho since L is positive."""
        X = np.eye(self.n)
        prev = np.inf
        for it in range(max_iter):
            Y = self.apply(X)
            tr = float(np.trace(Y))
            if tr <= 0:
                return 0.0, True
            est = tr / float(np.trace(X))
            X = Y / tr
            if abs(est - prev) <= tol * max(est, 1e-300):
                return est, True
            prev = est
        return est, False


def block_row_selector(dims: Sequence[int], i: int) -> np.ndarray:
    """E_i: identity on block i, zero elsewhere (n x n)."""
    n = int(sum(dims))
    E = np.zeros((n, n))
    sl = block_slices(dims)[i]
    E[sl, sl] = np.eye(sl.stop - sl.start)
    return E


def build_lifted_operator(model: LisModel, theta=None, gains=None, *, policy: str = "out") -> LiftedOperator:
    """Terms M_i = theta_i E_i A - G_i C for a time-invariant model.

    ``gains`` is ``None`` (all G_i = 0) or a sequence of ``s`` matrices n x m.
    """
    if not model.time_invariant:
        raise ModelError("the lifted operator needs a time-invariant model")
    th = theta_at(theta, model, 0, policy)
    A, C = model.A(0), model.C(0)
    n, m = model.n, model.m
    if gains is None:
        gains = [np.zeros((n, m))] * model.s
    gains = [np.asarray(g, dtype=float) for g in gains]
    if len(gains) != model.s or any(g.shape != (n, m) for g in gains):
        raise ModelError(f"need {model.s} gains of shape {(n, m)}")
    terms = []
    for i in range(model.s):
        Ai = th[i] * (block_row_selector(model.dims, i) @ A)
        terms.append(Ai - gains[i] @ C)
    return LiftedOperator(tuple(terms))


def steady_gain_terms(model: LisModel, theta, K_global: np.ndarray) -> list[np.ndarray]:
    """G_i = A_i Pb C^T S^{-1} = theta_i E_i A K for a block-diagonal gain K."""
    th = theta_at(theta, model, 0)
    A = model.A(0)
    return [th[i] * (block_row_selector(model.dims, i) @ A @ K_global) for i in range(model.s)]


def operator_spectral_radius(op: LiftedOperator, *, dense_limit: int = 48, tol: float = 1e-10,
                             max_iter: int = 100_000) -> tuple[float, str]:
    """(rho, method).  Dense eigenvalues of the Kronecker matrix when n is at
    most ``dense_limit``; otherwise ARPACK on the map, then power iteration."""
    n = op.n
    if n <= dense_limit:
        try:
            return spectral_radius(op.kron_matrix), "kronecker-dense"
        except np.linalg.LinAlgError:
            pass
    else:
        lin = LinearOperator((n * n, n * n), matvec=lambda v: op.apply(v.reshape(n, n)).ravel(), dtype=float)
        try:
            vals = eigs(lin, k=1, which="LM", tol=tol, maxiter=max(1000, n * n), return_eigenvectors=False)
            return float(np.max(np.abs(vals))), "arpack"
        except (ArpackNoConvergence, ValueError):
            pass
    rho, _ = op.power_iteration(tol=tol, max_iter=max_iter)
    return rho, "power-iteration"


def adjoint_apply(op: LiftedOperator, X: np.ndarray) -> np.ndarray:
    return op.adjoint(X)


# ---------------------------------------------------------------------------
# boundedness
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class StabilityReport:
    bounded: str
    spectral_radius: float | None
    method: str
    witness: dict = field(default_factory=dict)
    diagnostics: tuple[str, ...] = ()
    condition1: bool | None = None
    iterations: int | None = None

    def to_dict(self) -> dict:
        wit = {k: (v.tolist() if isinstance(v, np.ndarray) else
                   [x.tolist() for x in v] if isinstance(v, (list, tuple)) and v and isinstance(v[0], np.ndarray) else v)
               for k, v in self.witness.items()}
        return {
            "bounded": self.bounded,
            "spectral_radius": self.spectral_radius,
            "method": self.method,
            "witness": wit,
            "diagnostics": list(self.diagnostics),
            "condition1": self.condition1,
            "iterations": self.iterations,
        }


def _condition1(model: LisModel, tol: float = 1e-9) -> bool:
    for e in range(len(model.epochs)):
        k = model.epochs[e].start_k
        for i in range(model.s):
            if not reachability_check(model.A_block(i, i, k), psd_sqrt(model.Q_block(i, k)), tol).reachable:
                return False
    return True


def undetectable_mode(model: LisModel, theta=None, *, policy: str = "out", tol: float = 1e-9):
    """An unstable mode of some theta_i A_ii invisible to C_i, or ``None``.

    Such a mode u (embedded in block i) satisfies M_i u = theta_i lambda u for
    every gain set, so rho(L_G) >= |theta_i lambda|^2 >= 1 whatever G is.
    """
    th = theta_at(theta, model, 0, policy)
    for i in range(model.s):
        res = detectability_check(model.C_block(i), th[i] * model.A_block(i, i), tol)
        if not res.detectable:
            lam = max(res.unstable_eigs, key=abs)
            return {"subsystem": i, "eigenvalue": complex(lam), "lower_bound": float(abs(lam) ** 2)}
    return None


def boundedness_check(model: LisModel, theta=None, *, policy: str = "out", tol: float = 1e-9,
                      max_iter: int = 10_000, ceiling: float = 1e12, solve_tol: float = 1e-12,
                      dense_limit: int = 48) -> StabilityReport:
    """Tri-state DMRE boundedness verdict for a time-invariant model.

    Runs the steady-state iteration; on convergence the steady gains give a
    witness operator whose spectral radius must fall below 1 - tol.  Divergence
    past the ceiling means unbounded.  Anything else is inconclusive.
    """
    if not model.time_invariant:
        raise ModelError("boundedness_check needs a time-invariant model")
    th = theta_at(theta, model, 0, policy)
    cond1 = _condition1(model)
    diag = []
    if not cond1:
        diag.append("local reachability fails: the spectral test is sufficient but not necessary")
    ss = steady_state_solve(model, th, tol=solve_tol, max_iter=max_iter, ceiling=ceiling)
    K = None if ss.diverged else ss.K_star.global_matrix()
    if K is None:
        # gains from the last finite iterate still give a valid operator
        Pb = split_diag_blocks(ss.P_bar_star, model.dims)
        try:
            K = block_diag([kalman_gain(Pb[i], model.C_block(i), model.R_block(i)) for i in range(model.s)])
        except np.linalg.LinAlgError:
            K = None
    rho = method = None
    if K is not None and np.all(np.isfinite(K)):
        op = build_lifted_operator(model, th, steady_gain_terms(model, th, K))
        rho, method = operator_spectral_radius(op, dense_limit=dense_limit)
    witness = {}
    if ss.converged:
        witness = {"K": [k for k in ss.K_star.K], "P_bar": ss.P_bar_star}
        if rho is not None and rho < 1 - tol:
            verdict = YES
        else:
            verdict = INCONCLUSIVE
            diag.append(f"fixed point found but rho(L_K) = {rho} is not below 1 - {tol}")
    elif ss.diverged:
        verdict = NO
        diag.append(f"trace of P_bar exceeded {ceiling:g} x trace(Q) after {ss.iterations} iterations")
        cert = undetectable_mode(model, th)
        if cert is not None:
            witness = {"undetectable_mode": {k: (str(v) if isinstance(v, complex) else v) for k, v in cert.items()}}
    else:
        verdict = INCONCLUSIVE
        diag.append(f"no convergence within {max_iter} iterations (residual {ss.residual:.3g})")
    return StabilityReport(verdict, rho, f"dmre-probe+{method or 'none'}", witness, tuple(diag), cond1, ss.iterations)


@dataclass(frozen=True, eq=False)
class RowLmiResult:
    row: int
    feasible: bool
    residual_radius: float
    X_blocks: dict


def distributed_lmi_check(model: LisModel, i: int, theta_i: float | None = None, *, policy: str = "out",
                          tol: float = 0.0) -> RowLmiResult:
    """Exact test of sum_j (theta_i A_ij - X_ij C_j)(...)^T < I over X_ij.

    X_ij = theta_i A_ij C_j^+ is Loewner-minimal: any other choice adds a term
    whose rows lie in row(C_j), orthogonal to the residual theta_i A_ij (I - C_j^+ C_j).
    Only row i of A and the C_j of i's in-neighbors are read.
    """
    if theta_i is None:
        theta_i = float(theta_at(None, model, 0, policy)[i])
    S = np.zeros((model.dims[i], model.dims[i]))
    X = {}
    for j in sorted(model.in_neighbors(i) | {i}):
        Aij = theta_i * model.A_block(i, j)
        Cj = model.C_block(j)
        Cp = np.linalg.pinv(Cj)
        X[j] = Aij @ Cp
        res = Aij - X[j] @ Cj
        S += res @ res.T
    lam = max_eig(S)
    return RowLmiResult(i, bool(lam < 1.0 - tol), lam, X)


def centralized_lmi_feasibility(model: LisModel, theta=None, *, policy: str = "out", tol: float = 1e-9,
                                dense_limit: int = 48, verify_block: bool = True) -> StabilityReport:
    """Certify the centralized block LMI through a gain set with rho(L_G) < 1.

    Gains come from stacking the distributed row witnesses when every row
    passes, otherwise from the steady-state DMRE gains.  With Z solving
    Z - L_G(Z) = I, the pair X = Z^{-1}, Y_i = X G_i satisfies the LMI.
    """
    th = theta_at(theta, model, 0, policy)
    rows = [distributed_lmi_check(model, i, th[i]) for i in range(model.s)]
    n, m = model.n, model.m
    ss_, ms_ = block_slices(model.dims), block_slices(model.mdims)
    diag = []
    gains = None
    source = ""
    if all(r.feasible for r in rows):
        gains = []
        for r in rows:
            G = np.zeros((n, m))
            for j, Xij in r.X_blocks.items():
                G[ss_[r.row], ms_[j]] = Xij
            gains.append(G)
        source = "distributed-rows"
    else:
        rep = boundedness_check(model, th, tol=tol, dense_limit=dense_limit)
        if rep.bounded == YES:
            K = np.zeros((n, m))
            for i, Ki in enumerate(rep.witness["K"]):
                K[ss_[i], ms_[i]] = Ki
            gains = steady_gain_terms(model, th, K)
            source = "steady-gains"
        else:
            diag.extend(rep.diagnostics)
            verdict = NO if rep.bounded == NO and rep.condition1 else INCONCLUSIVE
            if rep.bounded == NO and not rep.condition1:
                diag.append("local reachability fails, so unboundedness does not rule out the LMI")
            return StabilityReport(verdict, rep.spectral_radius, "operator-equivalence", {}, tuple(diag), rep.condition1)
    op = build_lifted_operator(model, th, gains)
    rho, method = operator_spectral_radius(op, dense_limit=dense_limit)
    if rho >= 1 - tol:
        return StabilityReport(INCONCLUSIVE, rho, f"operator-equivalence/{source}/{method}", {},
                               (f"candidate gains give rho = {rho}",), None)
    Z = _lyapunov_fixed_point(op, np.eye(n))
    # the LMI is homogeneous in (X, Y); normalize X to unit spectral norm
    Xl = sym(np.linalg.inv(Z))
    Xl /= max_eig(Xl)
    Ys = [Xl @ G for G in gains]
    witness = {"X": Xl, "Y": Ys, "gains": gains}
    if verify_block:
        lam = _lmi_min_eig(Xl, [Xl @ M for M in op.terms])
        witness["lmi_min_eig"] = lam
        if lam <= 0:
            return StabilityReport(INCONCLUSIVE, rho, f"operator-equivalence/{source}/{method}", witness,
                                   (f"reconstructed LMI has min eigenvalue {lam:.3g}",), None)
    return StabilityReport(YES, rho, f"operator-equivalence/{source}/{method}", witness, tuple(diag), None)


def _lyapunov_fixed_point(op: LiftedOperator, Q: np.ndarray, tol: float = 1e-13, max_iter: int = 1_000_000) -> np.ndarray:
    """Z = Q + L(Z) by Neumann iteration; needs rho(L) < 1."""
    Z = Q.copy()
    term = Q.copy()
    for _ in range(max_iter):
        term = op.apply(term)
        Z += term
        if np.max(np.abs(term)) <= tol * np.max(np.abs(Z)):
            break
    return sym(Z)


def _lmi_min_eig(X: np.ndarray, off: list[np.ndarray]) -> float:
    n, s = X.shape[0], len(off)
    B = np.zeros((n * (s + 1), n * (s + 1)))
    B[:n, :n] = X
    for i, Oi in enumerate(off):
        sl = slice(n * (i + 1), n * (i + 2))
        B[:n, sl] = Oi
        B[sl, :n] = Oi.T
        B[sl, sl] = X
    return min_eig(B)


# ---------------------------------------------------------------------------
# coupling sweep
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SweepPoint:
    a: float
    bounded: str
    sup_trace: float
    precondition: bool


@dataclass(frozen=True)
class SweepResult:
    points: tuple[SweepPoint, ...]
    threshold: float | None
    prefix_property: bool

    def rows(self) -> list[dict]:
        return [p.__dict__.copy() for p in self.points]


def weak_coupling_sweep(base: LisModel, a_grid: Sequence[float], *, policy: str = "out", horizon: int = 200,
                        ceiling: float = 1e12, max_iter: int = 10_000) -> SweepResult:
    """Scale every off-diagonal block by a and probe DMRE boundedness.

    Time-invariant models get the steady-state probe; time-varying ones a
    finite-horizon trace probe.  ``precondition`` records detectability of
    (C_i, sqrt(2) theta_i A_ii) with theta from the scaled model's topology.
    ``threshold`` is the first grid value found unbounded.
    """
    pts = []
    for a in sorted(float(x) for x in a_grid):
        m = scale_coupling(base, a)
        th0 = theta_at(None, m, 0, policy)
        pre = all(detectability_check(m.C_block(i), np.sqrt(2) * th0[i] * m.A_block(i, i)).detectable
                  for i in range(m.s))
        trQ = float(np.trace(m.Q(0))) or 1.0
        states = run_dmre(m, horizon, policy=policy) if _safe_horizon(m, horizon, policy) else None
        sup_tr = max(st.trace() for st in states[1:]) if states else float("nan")
        if m.time_invariant:
            ss = steady_state_solve(m, th0, max_iter=max_iter, ceiling=ceiling)
            verdict = YES if ss.converged else NO if ss.diverged else INCONCLUSIVE
        else:
            verdict = YES if np.isfinite(sup_tr) and sup_tr < ceiling * trQ else NO
        pts.append(SweepPoint(a, verdict, float(sup_tr), bool(pre)))
    first_no = next((p.a for p in pts if p.bounded == NO), None)
    seen_no = False
    prefix = True
    for p in pts:
        if p.bounded == NO:
            seen_no = True
        elif p.bounded == YES and seen_no:
            prefix = False
    return SweepResult(tuple(pts), first_no, prefix)


def _safe_horizon(model: LisModel, horizon: int, policy: str) -> bool:
    last = horizon + (1 if policy == "out" else 0)
    return model.horizon is None or last <= model.horizon


# ---------------------------------------------------------------------------
# condition verifier
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ConditionReport:
    condition1: bool
    condition1_min_eig: float
    q_u: np.ndarray
    r_l: np.ndarray
    r_u: np.ndarray
    condition2: bool
    p_u: np.ndarray | None
    theta_l: np.ndarray
    theta_u: np.ndarray
    condition4: bool

    def to_dict(self) -> dict:
        f = lambda x: None if x is None else np.asarray(x).tolist()
        return {
            "condition1": self.condition1, "condition1_min_eig": self.condition1_min_eig,
            "q_u": f(self.q_u), "r_l": f(self.r_l), "r_u": f(self.r_u), "condition2": self.condition2,
            "p_u": f(self.p_u), "theta_l": f(self.theta_l), "theta_u": f(self.theta_u),
            "condition4": self.condition4,
        }


def verify_conditions(model: LisModel, theta=None, dmre_states=None, *, policy: str = "out",
                      horizon: int | None = None, r: float = 1e-9) -> ConditionReport:
    """Evaluate the four standing conditions on the model's schedule.

    Local reachability uses a window t = n_i - 1 on every k up to ``horizon``
    (default: the model horizon, or 0 for a time-invariant model).  Bounds on
    Q, R are exact eigenvalue extrema over the epochs; the covariance bound is
    read from ``dmre_states`` when given.
    """
    s = model.s
    if horizon is None:
        horizon = 0 if model.horizon is None else model.horizon
    cond1_min = np.inf
    for i in range(s):
        t = model.dims[i] - 1
        kmax = horizon if model.horizon is None else max(0, min(horizon, model.horizon - t))

        def pair(k, i=i):
            return model.A_block(i, i, k), psd_sqrt(model.Q_block(i, k))
        if model.time_invariant:
            rep = uniform_reachability_gramian(pair(0), t, r, 0)
        else:
            # the Gramian only changes when a window crosses an epoch switch
            rep = uniform_reachability_gramian(pair, t, r, kmax)
        cond1_min = min(cond1_min, rep.worst_value)
    cond1 = bool(cond1_min >= r)
    q_u = np.zeros(s)
    r_l = np.full(s, np.inf)
    r_u = np.zeros(s)
    for e in model.epochs:
        for i in range(s):
            q_u[i] = max(q_u[i], max_eig(e.Q[i]))
            if model.mdims[i]:
                w = np.linalg.eigvalsh(e.R[i])
                r_l[i] = min(r_l[i], w[0])
                r_u[i] = max(r_u[i], w[-1])
    qmin = min(min_eig(e.Q[i]) for e in model.epochs for i in range(s))
    cond2 = bool(qmin >= -1e-12 and np.all(r_l[np.isfinite(r_l)] > 0))
    p_u = None
    if dmre_states:
        p_u = np.array([max(max_eig(st.P[i]) for st in dmre_states) for i in range(s)])
    ks = range(max(1, horizon)) if model.horizon is not None else [0]
    ths = np.array([theta_at(theta, model, k, policy) for k in ks
                    if model.horizon is None or k + (policy == "out") <= model.horizon])
    th_abs = np.abs(ths)
    theta_l, theta_u = th_abs.min(axis=0), th_abs.max(axis=0)
    return ConditionReport(cond1, float(cond1_min), q_u, r_l, r_u, cond2, p_u, theta_l, theta_u,
                           bool(np.all(theta_l > 0) and np.all(np.isfinite(theta_u))))
