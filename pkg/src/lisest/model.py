"""Block-structured large-scale interconnected system (LIS) models.

A model is a global linear system

    x(k) = A(k-1) x(k-1) + w(k-1),    z(k) = C(k) x(k) + v(k)

partitioned into ``s`` subsystems.  ``A(k)`` is a full block matrix whose
off-diagonal blocks encode the interconnection graph, while ``C``, ``Q`` and
``R`` are block diagonal.  Parameters are piecewise constant over epochs;
a single epoch means the model is time-invariant.

Models are immutable once built and may be shared between workers.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.linalg as sla

from ._linalg import block_diag, block_slices, min_eig, readonly

__all__ = [
    "ModelError",
    "HorizonError",
    "BlockPattern",
    "Epoch",
    "Topology",
    "LisModel",
    "build_topology",
    "decoupling_variables",
    "theta_from_topology",
    "discretize",
    "PowerSystemParams",
    "PowerSystemRanges",
    "PowerSystemConfig",
    "power_system_continuous",
    "sample_power_system_params",
    "generate_power_system",
    "random_model",
    "scalar_model",
    "scale_coupling",
]


class ModelError(ValueError):
    """Invalid model data (dimensions, definiteness, sparsity)."""


class HorizonError(ModelError):
    """A time index outside the model's defined horizon was requested."""


def _is_zero(block: np.ndarray, tol: float) -> bool:
    return block.size == 0 or float(np.max(np.abs(block))) <= tol


@dataclass(frozen=True)
class BlockPattern:
    s: int
    dims: tuple[int, ...]
    mdims: tuple[int, ...]
    nonzero_offdiag: frozenset[tuple[int, int]] = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "mdims", tuple(int(d) for d in self.mdims))
        object.__setattr__(self, "nonzero_offdiag", frozenset((int(i), int(j)) for i, j in self.nonzero_offdiag))
        if self.s < 1:
            raise ModelError("need at least one subsystem")
        if len(self.dims) != self.s or len(self.mdims) != self.s:
            raise ModelError(f"expected {self.s} state and measurement dims, got {len(self.dims)} and {len(self.mdims)}")
        if any(d < 1 for d in self.dims) or any(d < 0 for d in self.mdims):
            raise ModelError("state dims must be positive and measurement dims nonnegative")
        for i, j in self.nonzero_offdiag:
            if i == j or not (0 <= i < self.s and 0 <= j < self.s):
                raise ModelError(f"invalid off-diagonal pair ({i}, {j})")

    @property
    def n(self) -> int:
        return sum(self.dims)

    @property
    def m(self) -> int:
        return sum(self.mdims)

    @cached_property
    def state_slices(self) -> list[slice]:
        return block_slices(self.dims)

    @cached_property
    def meas_slices(self) -> list[slice]:
        return block_slices(self.mdims)


@dataclass(frozen=True)
class Topology:
    """In- and out-neighbor sets of every subsystem at one time index."""

    in_neighbors: tuple[frozenset[int], ...]
    out_neighbors: tuple[frozenset[int], ...]

    @property
    def s(self) -> int:
        return len(self.in_neighbors)

    def edges(self) -> set[tuple[int, int]]:
        """Pairs (i, j), i != j, with A_ij nonzero."""
        return {(i, j) for i, nb in enumerate(self.in_neighbors) for j in nb}

    def is_dual(self) -> bool:
        for i in range(self.s):
            if i in self.in_neighbors[i] or i in self.out_neighbors[i]:
                return False
            for j in self.in_neighbors[i]:
                if i not in self.out_neighbors[j]:
                    return False
            for j in self.out_neighbors[i]:
                if i not in self.in_neighbors[j]:
                    return False
        return True


@dataclass(frozen=True, eq=False)
class Epoch:
    """Parameter set active from ``start_k`` until the next epoch starts.

    ``A_blocks`` holds every diagonal block plus the off-diagonal blocks named
    in the pattern; absent off-diagonal blocks are zero.
    """

    start_k: int
    A_blocks: Mapping[tuple[int, int], np.ndarray]
    C: tuple[np.ndarray, ...]
    Q: tuple[np.ndarray, ...]
    R: tuple[np.ndarray, ...]

    @cached_property
    def dims(self) -> tuple[int, ...]:
        return tuple(c.shape[1] for c in self.C)

    def A_block(self, i: int, j: int) -> np.ndarray:
        blk = self.A_blocks.get((i, j))
        if blk is None:
            return np.zeros((self.dims[i], self.dims[j]))
        return blk

    @cached_property
    def A(self) -> np.ndarray:
        sl = block_slices(self.dims)
        n = sum(self.dims)
        A = np.zeros((n, n))
        for (i, j), blk in self.A_blocks.items():
            A[sl[i], sl[j]] = blk
        return readonly(A)

    @cached_property
    def C_global(self) -> np.ndarray:
        return readonly(block_diag(self.C))

    @cached_property
    def Q_global(self) -> np.ndarray:
        return readonly(block_diag(self.Q))

    @cached_property
    def R_global(self) -> np.ndarray:
        return readonly(block_diag(self.R))


@dataclass(frozen=True, eq=False)
class LisModel:
    """Time-indexed block state-space model.

    ``horizon`` is the last time index at which parameters are defined; ``None``
    means the final epoch extends forever.  Blocks whose largest entry is at
    most ``zero_tol`` in magnitude count as absent when deriving topology.
    """

    pattern: BlockPattern
    epochs: tuple[Epoch, ...]
    horizon: int | None = None
    zero_tol: float = 0.0
    _starts: tuple[int, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.epochs:
            raise ModelError("model needs at least one epoch")
        starts = tuple(e.start_k for e in self.epochs)
        if starts[0] != 0 or any(b <= a for a, b in zip(starts, starts[1:])):
            raise ModelError(f"epoch starts must begin at 0 and increase strictly, got {starts}")
        if self.horizon is not None and self.horizon < starts[-1]:
            raise ModelError("horizon ends before the last epoch starts")
        object.__setattr__(self, "_starts", starts)
        for e in self.epochs:
            self._validate_epoch(e)

    # construction -----------------------------------------------------------
    @classmethod
    def from_blocks(
        cls,
        dims: Sequence[int],
        mdims: Sequence[int],
        epochs: Sequence[Mapping],
        *,
        pattern: Iterable[tuple[int, int]] | None = None,
        horizon: int | None = None,
        zero_tol: float = 0.0,
    ) -> "LisModel":
        """Build from per-epoch dicts with keys ``start_k`` (optional for the
        first), ``A`` (mapping (i, j) -> block), ``C``, ``Q``, ``R`` (lists).

        Without an explicit ``pattern`` the off-diagonal sparsity is the union
        of supplied nonzero blocks over all epochs.
        """
        dims = tuple(int(d) for d in dims)
        mdims = tuple(int(d) for d in mdims)
        s = len(dims)
        built = []
        offdiag: set[tuple[int, int]] = set()
        for idx, ep in enumerate(epochs):
            start = int(ep.get("start_k", 0 if idx == 0 else -1))
            if start < 0:
                raise ModelError(f"epoch {idx} lacks start_k")
            A_in = {(int(i), int(j)): np.asarray(b, dtype=float) for (i, j), b in ep["A"].items()}
            for (i, j), b in A_in.items():
                if not (0 <= i < s and 0 <= j < s):
                    raise ModelError(f"A block ({i}, {j}) outside {s} subsystems")
                if b.shape != (dims[i], dims[j]):
                    raise ModelError(f"A block ({i}, {j}) has shape {b.shape}, expected {(dims[i], dims[j])}")
                if not np.all(np.isfinite(b)):
                    raise ModelError(f"A block ({i}, {j}) has nonfinite entries")
                if i != j and not _is_zero(b, 0.0):
                    offdiag.add((i, j))
            A_blocks = {}
            for i in range(s):
                A_blocks[(i, i)] = readonly(A_in.get((i, i), np.zeros((dims[i], dims[i]))))
            for (i, j), b in A_in.items():
                if i != j and not _is_zero(b, 0.0):
                    A_blocks[(i, j)] = readonly(b)
            C = tuple(readonly(np.asarray(c, dtype=float).reshape(mdims[i], dims[i])) for i, c in enumerate(_per_block(ep["C"], s, "C")))
            Q = tuple(readonly(np.asarray(q, dtype=float).reshape(dims[i], dims[i])) for i, q in enumerate(_per_block(ep["Q"], s, "Q")))
            R = tuple(readonly(np.asarray(r, dtype=float).reshape(mdims[i], mdims[i])) for i, r in enumerate(_per_block(ep["R"], s, "R")))
            built.append(Epoch(start, A_blocks, C, Q, R))
        if pattern is None:
            pat = BlockPattern(s, dims, mdims, frozenset(offdiag))
        else:
            pat = BlockPattern(s, dims, mdims, frozenset(pattern))
        return cls(pat, tuple(built), horizon=horizon, zero_tol=zero_tol)

    @classmethod
    def from_global(
        cls,
        A,
        C,
        Q,
        R,
        dims: Sequence[int],
        mdims: Sequence[int],
        *,
        zero_tol: float = 0.0,
    ) -> "LisModel":
        """Time-invariant model from global matrices; ``C``, ``Q``, ``R`` must be
        block diagonal (off-diagonal blocks are dropped after a check)."""
        A = np.asarray(A, dtype=float)
        C = np.asarray(C, dtype=float).reshape(sum(mdims), sum(dims))
        Q = np.asarray(Q, dtype=float)
        R = np.asarray(R, dtype=float)
        xs = block_slices(dims)
        zs = block_slices(mdims)
        s = len(dims)
        for name, X, rs, cs in (("C", C, zs, xs), ("Q", Q, xs, xs), ("R", R, zs, zs)):
            for i in range(s):
                for j in range(s):
                    if i != j and not _is_zero(X[rs[i], cs[j]], 0.0):
                        raise ModelError(f"{name} must be block diagonal; block ({i}, {j}) is nonzero")
        blocks = {(i, j): A[xs[i], xs[j]] for i in range(s) for j in range(s) if i == j or not _is_zero(A[xs[i], xs[j]], zero_tol)}
        ep = {
            "start_k": 0,
            "A": blocks,
            "C": [C[zs[i], xs[i]] for i in range(s)],
            "Q": [Q[xs[i], xs[i]] for i in range(s)],
            "R": [R[zs[i], zs[i]] for i in range(s)],
        }
        return cls.from_blocks(dims, mdims, [ep], zero_tol=zero_tol)

    def _validate_epoch(self, e: Epoch) -> None:
        p = self.pattern
        for (i, j), b in e.A_blocks.items():
            if b.shape != (p.dims[i], p.dims[j]):
                raise ModelError(f"A block ({i}, {j}) has shape {b.shape}, expected {(p.dims[i], p.dims[j])}")
            if i != j and (i, j) not in p.nonzero_offdiag and not _is_zero(b, 0.0):
                raise ModelError(f"A block ({i}, {j}) is nonzero but not declared in the pattern")
        for i in range(p.s):
            if (i, i) not in e.A_blocks:
                raise ModelError(f"missing diagonal block A_{i}{i}")
            if e.C[i].shape != (p.mdims[i], p.dims[i]):
                raise ModelError(f"C_{i} has shape {e.C[i].shape}, expected {(p.mdims[i], p.dims[i])}")
            if e.Q[i].shape != (p.dims[i], p.dims[i]) or e.R[i].shape != (p.mdims[i], p.mdims[i]):
                raise ModelError(f"Q_{i} or R_{i} has the wrong shape")
            for name, X in (("C", e.C[i]), ("Q", e.Q[i]), ("R", e.R[i])):
                if not np.all(np.isfinite(X)):
                    raise ModelError(f"{name}_{i} has nonfinite entries")
            if not np.allclose(e.Q[i], e.Q[i].T, atol=1e-12) or min_eig(e.Q[i]) < -1e-10:
                raise ModelError(f"Q_{i} at epoch starting {e.start_k} is not symmetric PSD")
            if p.mdims[i] and (not np.allclose(e.R[i], e.R[i].T, atol=1e-12) or min_eig(e.R[i]) <= 0):
                raise ModelError(f"R_{i} at epoch starting {e.start_k} is not symmetric PD")

    # queries ----------------------------------------------------------------
    @property
    def s(self) -> int:
        return self.pattern.s

    @property
    def dims(self) -> tuple[int, ...]:
        return self.pattern.dims

    @property
    def mdims(self) -> tuple[int, ...]:
        return self.pattern.mdims

    @property
    def n(self) -> int:
        return self.pattern.n

    @property
    def m(self) -> int:
        return self.pattern.m

    @property
    def time_invariant(self) -> bool:
        return len(self.epochs) == 1

    def epoch_index(self, k: int) -> int:
        if k < 0:
            raise HorizonError(f"negative time index {k}")
        if self.horizon is not None and k > self.horizon:
            raise HorizonError(f"time index {k} is beyond the model horizon {self.horizon}")
        return bisect.bisect_right(self._starts, k) - 1

    def epoch_at(self, k: int) -> Epoch:
        return self.epochs[self.epoch_index(k)]

    def A_block(self, i: int, j: int, k: int = 0) -> np.ndarray:
        return self.epoch_at(k).A_block(i, j)

    def C_block(self, i: int, k: int = 0) -> np.ndarray:
        return self.epoch_at(k).C[i]

    def Q_block(self, i: int, k: int = 0) -> np.ndarray:
        return self.epoch_at(k).Q[i]

    def R_block(self, i: int, k: int = 0) -> np.ndarray:
        return self.epoch_at(k).R[i]

    def A(self, k: int = 0) -> np.ndarray:
        return self.epoch_at(k).A

    def C(self, k: int = 0) -> np.ndarray:
        return self.epoch_at(k).C_global

    def Q(self, k: int = 0) -> np.ndarray:
        return self.epoch_at(k).Q_global

    def R(self, k: int = 0) -> np.ndarray:
        return self.epoch_at(k).R_global

    @cached_property
    def _topologies(self) -> tuple[Topology, ...]:
        return tuple(_epoch_topology(e, self.s, self.zero_tol) for e in self.epochs)

    def topology(self, k: int = 0) -> Topology:
        return self._topologies[self.epoch_index(k)]

    def in_neighbors(self, i: int, k: int = 0) -> frozenset[int]:
        return self.topology(k).in_neighbors[i]

    def with_epochs(self, epochs: Sequence[Epoch], **kw) -> "LisModel":
        pattern = kw.pop("pattern", self.pattern)
        return LisModel(pattern, tuple(epochs), horizon=kw.pop("horizon", self.horizon),
                        zero_tol=kw.pop("zero_tol", self.zero_tol))


def _per_block(x, s: int, name: str) -> list:
    if isinstance(x, np.ndarray) and x.ndim <= 2:
        raise ModelError(f"{name} must be given as a list of {s} blocks")
    x = list(x)
    if len(x) != s:
        raise ModelError(f"{name} has {len(x)} blocks, expected {s}")
    return x


def _epoch_topology(e: Epoch, s: int, tol: float) -> Topology:
    ins: list[set[int]] = [set() for _ in range(s)]
    outs: list[set[int]] = [set() for _ in range(s)]
    for (i, j), b in e.A_blocks.items():
        if i != j and not _is_zero(b, tol):
            ins[i].add(j)
            outs[j].add(i)
    return Topology(tuple(frozenset(x) for x in ins), tuple(frozenset(x) for x in outs))


def build_topology(model: LisModel, k: int = 0, tol: float | None = None) -> Topology:
    """In-neighbors {j != i : A_ij(k) != 0} and out-neighbors {j != i : A_ji(k) != 0}.

    ``tol`` overrides the model's zero threshold: a block is treated as zero
    iff its largest absolute entry is ``<= tol``.
    """
    e = model.epoch_at(k)
    if tol is None:
        return model.topology(k)
    if tol < 0:
        raise ModelError("zero threshold must be nonnegative")
    return _epoch_topology(e, model.s, tol)


def theta_from_topology(topology: Topology, policy: str = "out") -> np.ndarray:
    """sqrt(|neighbor set| + 1) per subsystem for the given policy."""
    if policy == "out":
        sets = topology.out_neighbors
    elif policy == "in":
        sets = topology.in_neighbors
    else:
        raise ValueError(f"unknown decoupling policy {policy!r}; use 'out' or 'in'")
    return np.sqrt(np.array([len(x) + 1 for x in sets], dtype=float))


def decoupling_variables(model: LisModel, policy: str = "out", k: int = 0) -> np.ndarray:
    """Decoupling variables theta_i(k).

    The out-neighbor policy reads the topology at ``k + 1`` (the step the
    prediction feeds into); the in-neighbor policy reads it at ``k``.
    """
    if policy == "out":
        return theta_from_topology(model.topology(k + 1), "out")
    return theta_from_topology(model.topology(k), policy)


def discretize(Ac, Bc, Ts: float, *, method: str = "euler", dims: Sequence[int] | None = None):
    """Sparsity-preserving discretization of continuous-time block dynamics.

    ``euler``: A = I + Ts Ac, B = Ts Bc.

    ``blockwise``: for each block row i, the diagonal block is discretized
    exactly, A_ii = expm(Ts Ac_ii), and the coupling and input blocks are
    propagated through the same row's integrated exponential,
    A_ij = G_i Ac_ij and B_i = G_i Bc_i with G_i = int_0^Ts expm(tau Ac_ii) dtau.
    Needs ``dims``.  Off-diagonal zero blocks stay exactly zero under both.
    """
    Ac = np.asarray(Ac, dtype=float)
    Bc = np.asarray(Bc, dtype=float)
    if Ts <= 0:
        raise ModelError("sampling period must be positive")
    if not (np.all(np.isfinite(Ac)) and np.all(np.isfinite(Bc))):
        raise ModelError("continuous-time matrices have nonfinite entries")
    n = Ac.shape[0]
    if Ac.shape != (n, n) or Bc.shape[0] != n:
        raise ModelError("Ac must be square with as many rows as Bc")
    if method == "euler":
        return np.eye(n) + Ts * Ac, Ts * Bc
    if method != "blockwise":
        raise ValueError(f"unknown discretization method {method!r}")
    if dims is None:
        raise ModelError("blockwise discretization needs the block dims")
    A = np.zeros_like(Ac)
    B = np.zeros_like(Bc)
    for sl in block_slices(dims):
        ni = sl.stop - sl.start
        aug = np.zeros((2 * ni, 2 * ni))
        aug[:ni, :ni] = Ac[sl, sl] * Ts
        aug[:ni, ni:] = np.eye(ni) * Ts
        E = sla.expm(aug)
        Phi, G = E[:ni, :ni], E[:ni, ni:]
        A[sl, :] = G @ Ac[sl, :]
        A[sl, sl] = Phi
        B[sl, :] = G @ Bc[sl, :]
    # exact zeros where the continuous coupling is zero
    for i, si in enumerate(block_slices(dims)):
        for j, sj in enumerate(block_slices(dims)):
            if i != j and not np.any(Ac[si, sj]):
                A[si, sj] = 0.0
    return A, B


# ---------------------------------------------------------------------------
# multi-area power system
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PowerSystemParams:
    """Per-area load-frequency parameters for one epoch.

    ``P`` is the symmetric matrix of tie-line synchronizing coefficients;
    a zero entry means no tie-line between the two areas.
    """

    H: np.ndarray
    R: np.ndarray
    Tt: np.ndarray
    Tg: np.ndarray
    D: np.ndarray
    P: np.ndarray
    Ts: float = 1.0

    def __post_init__(self):
        for name in ("H", "R", "Tt", "Tg", "D"):
            object.__setattr__(self, name, readonly(np.atleast_1d(getattr(self, name))))
        object.__setattr__(self, "P", readonly(self.P))
        s = self.H.shape[0]
        for name in ("R", "Tt", "Tg", "D"):
            if getattr(self, name).shape != (s,):
                raise ModelError(f"{name} must have one entry per area")
        if self.P.shape != (s, s):
            raise ModelError("tie-line matrix must be s x s")
        for name in ("H", "Tt", "Tg", "R"):
            if np.any(getattr(self, name) <= 0):
                raise ModelError(f"{name} must be strictly positive")
        if np.any(self.D < 0):
            raise ModelError("damping must be nonnegative")
        if np.any((self.P == 0) != (self.P.T == 0)) or np.any(np.diag(self.P) != 0):
            raise ModelError("tie-line sparsity must be symmetric with zero diagonal")
        if self.Ts <= 0:
            raise ModelError("sampling period must be positive")

    @property
    def s(self) -> int:
        return int(self.H.shape[0])


@dataclass(frozen=True)
class PowerSystemRanges:
    """Uniform sampling ranges; defaults are configurable guesses, not measured data."""

    H: tuple[float, float] = (4.0, 8.0)
    D: tuple[float, float] = (0.5, 1.5)
    Tt: tuple[float, float] = (0.3, 0.6)
    Tg: tuple[float, float] = (0.1, 0.3)
    R: tuple[float, float] = (0.03, 0.07)
    P: tuple[float, float] = (0.05, 0.2)


@dataclass(frozen=True)
class PowerSystemConfig:
    s: int = 10
    ties: str | tuple[tuple[int, int], ...] = "ring"
    Ts: float = 1.0
    switch_every: int | None = 100
    horizon: int | None = 500
    ranges: PowerSystemRanges = PowerSystemRanges()
    q: float = 1.0
    r: float = 1.0
    discretization: str = "blockwise"


def _tie_edges(s: int, ties) -> list[tuple[int, int]]:
    if isinstance(ties, str):
        if ties == "ring":
            if s == 1:
                return []
            if s == 2:
                return [(0, 1)]
            return [(i, (i + 1) % s) for i in range(s)]
        if ties == "line":
            return [(i, i + 1) for i in range(s - 1)]
        if ties == "mesh":
            return [(i, j) for i in range(s) for j in range(i + 1, s)]
        if ties == "none":
            return []
        raise ModelError(f"unknown tie-line layout {ties!r}")
    edges = []
    for i, j in ties:
        if i == j or not (0 <= i < s and 0 <= j < s):
            raise ModelError(f"invalid tie-line ({i}, {j})")
        edges.append((min(i, j), max(i, j)))
    return sorted(set(edges))


def sample_power_system_params(s: int, ties, ranges: PowerSystemRanges, rng: np.random.Generator,
                               Ts: float = 1.0) -> PowerSystemParams:
    def u(bounds, size=s):
        return rng.uniform(bounds[0], bounds[1], size)

    P = np.zeros((s, s))
    for i, j in _tie_edges(s, ties):
        P[i, j] = P[j, i] = u(ranges.P, None)
    return PowerSystemParams(H=u(ranges.H), R=u(ranges.R), Tt=u(ranges.Tt), Tg=u(ranges.Tg),
                             D=u(ranges.D), P=P, Ts=Ts)


def power_system_continuous(params: PowerSystemParams) -> tuple[np.ndarray, np.ndarray]:
    """Global continuous-time (Ac, Bc) with 4 states and 2 inputs per area.

    State per area: rotor angle, speed deviation, mechanical power, valve
    position.  Inputs: reference power, load change.
    """
    s = params.s
    Ac = np.zeros((4 * s, 4 * s))
    Bc = np.zeros((4 * s, 2 * s))
    for i in range(s):
        H, D, Tt, Tg, R = params.H[i], params.D[i], params.Tt[i], params.Tg[i], params.R[i]
        r = slice(4 * i, 4 * i + 4)
        Ac[r, r] = [
            [0.0, 1.0, 0.0, 0.0],
            [-params.P[i].sum() / (2 * H), -D / (2 * H), 1 / (2 * H), 0.0],
            [0.0, 0.0, -1 / Tt, 1 / Tt],
            [0.0, -1 / (R * Tg), 0.0, -1 / Tg],
        ]
        for j in range(s):
            if j != i and params.P[i, j] != 0:
                Ac[4 * i + 1, 4 * j] = params.P[i, j] / (2 * H)
        Bc[r, 2 * i:2 * i + 2] = [[0.0, 0.0], [0.0, -1 / (2 * H)], [0.0, 0.0], [1 / Tg, 0.0]]
    return Ac, Bc


_POWER_C = np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]])


def _power_epoch(params: PowerSystemParams, start_k: int, q: float, r: float, method: str) -> dict:
    s = params.s
    Ac, Bc = power_system_continuous(params)
    A, _ = discretize(Ac, Bc, params.Ts, method=method, dims=[4] * s)
    blocks = {}
    for i in range(s):
        for j in range(s):
            blk = A[4 * i:4 * i + 4, 4 * j:4 * j + 4]
            if i == j or np.any(blk):
                blocks[(i, j)] = blk
    return {
        "start_k": start_k,
        "A": blocks,
        "C": [_POWER_C] * s,
        "Q": [q * np.eye(4)] * s,
        "R": [r * np.eye(2)] * s,
    }


def generate_power_system(config: PowerSystemConfig = PowerSystemConfig(), seed: int = 0,
                          params: PowerSystemParams | Sequence[PowerSystemParams] | None = None) -> LisModel:
    """Multi-area load-frequency model with per-area dims (4, 2).

    With ``params`` given (one set, or one per epoch) no sampling happens.
    Otherwise parameters are drawn from ``config.ranges``, resampled every
    ``config.switch_every`` steps up to ``config.horizon``; ``switch_every``
    of ``None`` yields a time-invariant model.  The tie-line graph is fixed
    across epochs; only its coefficients change.
    """
    rng = np.random.default_rng(seed)
    if params is not None:
        plist = [params] if isinstance(params, PowerSystemParams) else list(params)
        if len(plist) > 1 and config.switch_every is None:
            raise ModelError("several parameter sets need a switching period")
    elif config.switch_every is None:
        plist = [sample_power_system_params(config.s, config.ties, config.ranges, rng, config.Ts)]
    else:
        if config.horizon is None:
            raise ModelError("a time-varying power system needs a finite horizon")
        n_ep = config.horizon // config.switch_every + 1
        plist = [sample_power_system_params(config.s, config.ties, config.ranges, rng, config.Ts)
                 for _ in range(n_ep)]
    s = plist[0].s
    step = config.switch_every or 1
    epochs = [_power_epoch(p, idx * step, config.q, config.r, config.discretization) for idx, p in enumerate(plist)]
    horizon = None if len(epochs) == 1 else config.horizon
    pattern = {(i, j) for ep in epochs for (i, j) in ep["A"] if i != j}
    return LisModel.from_blocks([4] * s, [2] * s, epochs, pattern=pattern, horizon=horizon)


# ---------------------------------------------------------------------------
# small generators used by tests, the CLI and the experiment scripts
# ---------------------------------------------------------------------------

def scalar_model(a: float = 1.0, c: float = 1.0, q: float = 1.0, r: float = 1.0) -> LisModel:
    return LisModel.from_blocks([1], [1], [{
        "A": {(0, 0): [[a]]}, "C": [[[c]]], "Q": [[[q]]], "R": [[[r]]],
    }])


def random_model(
    s: int = 3,
    dims: Sequence[int] | int = 2,
    mdims: Sequence[int] | int = 1,
    *,
    density: float = 0.5,
    diag_radius: float | None = None,
    coupling: float = 1.0,
    seed: int | np.random.Generator = 0,
    epochs: int = 1,
    switch_every: int = 10,
    q: float = 1.0,
    r: float = 1.0,
) -> LisModel:
    """Random block model.  Off-diagonal blocks are present with probability
    ``density`` and scaled by ``coupling``; with ``diag_radius`` set, each
    diagonal block is rescaled to that spectral radius."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    dims = [dims] * s if np.isscalar(dims) else list(dims)
    mdims = [mdims] * s if np.isscalar(mdims) else list(mdims)
    present = {(i, j) for i in range(s) for j in range(s) if i != j and rng.random() < density}
    eps = []
    for e in range(epochs):
        blocks = {}
        for i in range(s):
            Aii = rng.standard_normal((dims[i], dims[i])) / np.sqrt(dims[i])
            if diag_radius is not None:
                rad = np.max(np.abs(np.linalg.eigvals(Aii)))
                Aii = Aii * (diag_radius / rad) if rad > 0 else Aii
            blocks[(i, i)] = Aii
        for i, j in present:
            blocks[(i, j)] = coupling * rng.standard_normal((dims[i], dims[j])) / np.sqrt(dims[j])
        eps.append({
            "start_k": e * switch_every,
            "A": blocks,
            "C": [rng.standard_normal((mdims[i], dims[i])) for i in range(s)],
            "Q": [q * np.eye(dims[i]) for i in range(s)],
            "R": [r * np.eye(mdims[i]) for i in range(s)],
        })
    horizon = None if epochs == 1 else epochs * switch_every
    return LisModel.from_blocks(dims, mdims, eps, pattern=present, horizon=horizon)


def scale_coupling(model: LisModel, a: float) -> LisModel:
    """Copy of ``model`` with every off-diagonal A block multiplied by ``a``."""
    eps = []
    for e in model.epochs:
        blocks = {(i, j): (b if i == j else readonly(a * b)) for (i, j), b in e.A_blocks.items()}
        if a == 0:
            blocks = {(i, j): b for (i, j), b in blocks.items() if i == j}
        eps.append(Epoch(e.start_k, blocks, e.C, e.Q, e.R))
    return model.with_epochs(eps)
