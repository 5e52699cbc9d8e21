"""Monte Carlo harness: trajectories, RMSE, centralized baseline, decay fits.

All gain sequences are deterministic functions of the model, so they are
computed once per configuration and the trials are then propagated as one
batched array.  Every trial draws from its own stream, seeded by
``SeedSequence(seed, spawn_key=(trial,))``, in a fixed order (initial state,
process noise, measurement noise).  Results therefore do not depend on the
chunking, the thread count, or which configurations are run together.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.linalg as sla

from ._linalg import block_slices, innovation_factor, psd_sqrt, sym
from .estimator import local_gains, run_dmre, steady_state_solve
from .model import LisModel, ModelError

__all__ = [
    "NoiseSpec",
    "EstimatorConfig",
    "GainSchedule",
    "TrialEnsemble",
    "SimulationError",
    "gain_schedule",
    "constant_schedule",
    "simulate_trial",
    "monte_carlo_rmse",
    "centralized_baseline",
    "noise_free_decay",
    "bootstrap_mean_difference",
    "write_rmse_csv",
    "write_metadata",
]

SQRT3 = math.sqrt(3.0)
DIVERGENCE_LIMIT = 1e150


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class NoiseSpec:
    """Process/measurement noise.  ``kind`` is none, uniform or gaussian.

    Covariances default to the model's Q(k), R(k); pass global matrices to
    override.  Uniform noise is U[-sqrt3, sqrt3] per coordinate (unit variance)
    mapped through the symmetric covariance square root.
    """

    kind: str = "uniform"
    w_cov: tuple | None = None
    v_cov: tuple | None = None

    def __post_init__(self):
        if self.kind not in ("none", "uniform", "gaussian"):
            raise ModelError(f"unknown noise kind {self.kind!r}")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "w_cov": self.w_cov, "v_cov": self.v_cov}


@dataclass(frozen=True)
class EstimatorConfig:
    """``kind`` is distributed (online DMRE), steady (fixed-point gains) or
    centralized (global Kalman filter).  ``theta`` overrides the policy."""

    kind: str = "distributed"
    policy: str = "out"
    P0: float = 1.0
    theta: float | tuple | None = None
    name: str | None = None

    def __post_init__(self):
        if self.kind not in ("distributed", "steady", "centralized"):
            raise ModelError(f"unknown estimator kind {self.kind!r}")
        if self.policy not in ("out", "in"):
            raise ModelError(f"unknown policy {self.policy!r}")

    @property
    def label(self) -> str:
        if self.name:
            return self.name
        return self.kind if self.kind == "centralized" else f"{self.kind}-{self.policy}"

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class GainSchedule:
    """Global gains K(k) for k = 1..horizon (index 0 unused) and prior traces."""

    K: np.ndarray
    prior_trace: np.ndarray
    posterior: list | None = None


def _theta_arg(cfg: EstimatorConfig):
    if cfg.theta is None:
        return None
    return np.asarray(cfg.theta, dtype=float)


def constant_schedule(K_global: np.ndarray, horizon: int) -> GainSchedule:
    """Schedule holding one gain for every k, e.g. from a steady checkpoint."""
    K = np.broadcast_to(np.asarray(K_global, dtype=float), (horizon + 1,) + np.shape(K_global)).copy()
    return GainSchedule(K, np.full(horizon + 1, np.nan))


def gain_schedule(model: LisModel, cfg: EstimatorConfig, horizon: int, keep_posterior: bool = False) -> GainSchedule:
    n, m = model.n, model.m
    K = np.zeros((horizon + 1, n, m))
    tr = np.zeros(horizon + 1)
    post = [] if keep_posterior else None
    if cfg.kind == "distributed":
        states = run_dmre(model, horizon, _theta_arg(cfg), policy=cfg.policy, P0=cfg.P0)
        for k in range(1, horizon + 1):
            K[k] = local_gains(states[k], model).global_matrix()
            tr[k] = states[k].trace()
        if keep_posterior:
            post = [st.P_global() for st in states]
    elif cfg.kind == "steady":
        ss = steady_state_solve(model, _theta_arg(cfg), policy=cfg.policy)
        if not ss.converged:
            raise SimulationError("steady gains are unavailable: the DMRE fixed point was not reached")
        K[1:] = ss.K_star.global_matrix()
        tr[1:] = np.trace(ss.P_bar_star)
    else:
        P = cfg.P0 * np.eye(n)
        if keep_posterior:
            post.append(P.copy())
        for k in range(1, horizon + 1):
            A = model.A(k - 1)
            Pb = sym(A @ P @ A.T + model.Q(k - 1))
            C, R = model.C(k), model.R(k)
            if m:
                fac = innovation_factor(C @ Pb @ C.T + R)
                Kk = sla.cho_solve(fac, C @ Pb).T
            else:
                Kk = np.zeros((n, 0))
            P = sym(Pb - Kk @ C @ Pb)
            K[k] = Kk
            tr[k] = np.trace(Pb)
            if keep_posterior:
                post.append(P.copy())
    return GainSchedule(K, tr, post)


@dataclass(frozen=True, eq=False)
class TrialEnsemble:
    label: str
    M: int
    horizon: int
    rmse: np.ndarray
    trials_used: int
    diverged: int
    per_trial_sq: np.ndarray  # (M, H+1) squared error divided by s
    used_mask: np.ndarray
    config: dict = field(default_factory=dict)

    def mean_rmse(self) -> float:
        return float(np.mean(self.rmse))


def _trial_seed(seed: int, t: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(seed), spawn_key=(int(t),))


def _draw_trial(model: LisModel, noise: NoiseSpec, horizon: int, seed: int, t: int):
    rng = np.random.default_rng(_trial_seed(seed, t))
    n, m = model.n, model.m
    x0 = rng.standard_normal(n)
    for sl in block_slices(model.dims):
        nrm = np.linalg.norm(x0[sl])
        x0[sl] = x0[sl] / nrm if nrm > 0 else 0.0
    if noise.kind == "none":
        return x0, np.zeros((horizon, n)), np.zeros((horizon, m))
    if noise.kind == "uniform":
        W = rng.uniform(-SQRT3, SQRT3, size=(horizon, n))
        V = rng.uniform(-SQRT3, SQRT3, size=(horizon, m))
    else:
        W = rng.standard_normal((horizon, n))
        V = rng.standard_normal((horizon, m))
    return x0, W, V


class _NoiseShaper:
    """Caches covariance square roots per epoch."""

    def __init__(self, model: LisModel, noise: NoiseSpec):
        self.model = model
        self.noise = noise
        self._cache: dict = {}

    def w(self, k: int) -> np.ndarray:
        if self.noise.w_cov is not None:
            key = ("w", None)
            if key not in self._cache:
                self._cache[key] = psd_sqrt(np.asarray(self.noise.w_cov, dtype=float))
            return self._cache[key]
        e = self.model.epoch_index(k)
        key = ("w", e)
        if key not in self._cache:
            self._cache[key] = psd_sqrt(self.model.Q(k))
        return self._cache[key]

    def v(self, k: int) -> np.ndarray:
        if self.noise.v_cov is not None:
            key = ("v", None)
            if key not in self._cache:
                self._cache[key] = psd_sqrt(np.asarray(self.noise.v_cov, dtype=float))
            return self._cache[key]
        e = self.model.epoch_index(k)
        key = ("v", e)
        if key not in self._cache:
            self._cache[key] = psd_sqrt(self.model.R(k))
        return self._cache[key]


def _run_chunk(model: LisModel, schedules: list[GainSchedule], noise: NoiseSpec, horizon: int, seed: int,
               trials: Sequence[int], x_hat0: np.ndarray | None, keep: bool):
    """Propagate a batch of trials through all estimators.

    Returns per-config squared-error sums (B, H+1), per-trial divergence flags
    and, with ``keep``, the full trajectories.
    """
    B = len(trials)
    n = model.n
    draws = [_draw_trial(model, noise, horizon, seed, t) for t in trials]
    x = np.stack([d[0] for d in draws])
    W = np.stack([d[1] for d in draws])
    V = np.stack([d[2] for d in draws])
    shaper = _NoiseShaper(model, noise)
    xh = [np.zeros((B, n)) if x_hat0 is None else np.broadcast_to(x_hat0, (B, n)).copy() for _ in schedules]
    sq = [np.zeros((B, horizon + 1)) for _ in schedules]
    bad_state = np.zeros(B, dtype=bool)
    bad_est = [np.zeros(B, dtype=bool) for _ in schedules]
    traj = None
    if keep:
        traj = {"x": np.zeros((B, horizon + 1, n)), "z": np.zeros((B, horizon + 1, model.m)),
                "x_hat": [np.zeros((B, horizon + 1, n)) for _ in schedules]}
        traj["x"][:, 0] = x
        for c in range(len(schedules)):
            traj["x_hat"][c][:, 0] = xh[c]
    for c in range(len(schedules)):
        sq[c][:, 0] = np.sum((x - xh[c]) ** 2, axis=1)
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(1, horizon + 1):
            A = model.A(k - 1)
            C = model.C(k)
            x = x @ A.T
            if noise.kind != "none":
                x = x + W[:, k - 1] @ shaper.w(k - 1).T
            z = x @ C.T
            if noise.kind != "none":
                z = z + V[:, k - 1] @ shaper.v(k).T
            bad_state |= ~np.all(np.isfinite(x), axis=1) | (np.max(np.abs(x), axis=1) > DIVERGENCE_LIMIT)
            for c, sch in enumerate(schedules):
                xb = xh[c] @ A.T
                xh[c] = xb + (z - xb @ C.T) @ sch.K[k].T
                e = x - xh[c]
                sq[c][:, k] = np.sum(e * e, axis=1)
                bad_est[c] |= ~np.isfinite(sq[c][:, k]) | (sq[c][:, k] > DIVERGENCE_LIMIT)
                if keep:
                    traj["x_hat"][c][:, k] = xh[c]
            if keep:
                traj["x"][:, k] = x
                traj["z"][:, k] = z
    return sq, bad_state, bad_est, traj


def _chunks(M: int, size: int) -> list[list[int]]:
    return [list(range(a, min(M, a + size))) for a in range(0, M, size)]


def monte_carlo_rmse(model: LisModel, configs: Sequence[EstimatorConfig] | EstimatorConfig, noise: NoiseSpec,
                     M: int, horizon: int, seed: int = 0, *, threads: int = 1, chunk: int = 64,
                     x_hat0: np.ndarray | None = None,
                     precomputed: dict[str, GainSchedule] | None = None) -> dict[str, TrialEnsemble]:
    """RMSE(k) = sqrt( sum_{trials, i} ||x_i(k) - xh_i(k)||^2 / (s M_used) ).

    All configurations see the same initial states and noise realizations.
    Diverged trials are dropped per configuration and counted.  ``precomputed``
    maps a config label to a gain schedule used instead of recomputing it.
    """
    if isinstance(configs, EstimatorConfig):
        configs = [configs]
    if M < 1:
        raise ModelError("the trial count M must be at least 1")
    if horizon < 0:
        raise ModelError("horizon must be nonnegative")
    if model.horizon is not None and horizon > model.horizon:
        raise ModelError(f"horizon {horizon} exceeds the model horizon {model.horizon}")
    precomputed = precomputed or {}
    schedules = [precomputed.get(c.label) or gain_schedule(model, c, horizon) for c in configs]
    batches = _chunks(M, chunk)

    def work(trials):
        return _run_chunk(model, schedules, noise, horizon, seed, trials, x_hat0, False)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(work, batches))
    else:
        results = [work(b) for b in batches]
    out = {}
    s = model.s
    for c, cfg in enumerate(configs):
        sq = np.concatenate([r[0][c] for r in results])
        bad = np.concatenate([r[1] | r[2][c] for r in results])
        used = ~bad
        n_used = int(used.sum())
        if n_used == 0:
            raise SimulationError(f"all {M} trials diverged for {cfg.label}")
        sq = sq / s
        rmse = np.sqrt(sq[used].sum(axis=0) / n_used)
        out[cfg.label] = TrialEnsemble(cfg.label, M, horizon, rmse, n_used, int(bad.sum()), sq, used,
                                       cfg.to_dict())
    return out


def simulate_trial(model: LisModel, configs: Sequence[EstimatorConfig] | EstimatorConfig, noise: NoiseSpec,
                   horizon: int, seed: int = 0, *, trial: int = 0, x_hat0: np.ndarray | None = None) -> dict:
    """One trial with full trajectories: ``x``, ``z`` and ``x_hat[label]``.

    A trial whose state or estimate blows up is reported through ``diverged``.
    """
    if isinstance(configs, EstimatorConfig):
        configs = [configs]
    schedules = [gain_schedule(model, c, horizon) for c in configs]
    sq, bad_state, bad_est, traj = _run_chunk(model, schedules, noise, horizon, seed, [trial], x_hat0, True)
    return {
        "x": traj["x"][0],
        "z": traj["z"][0],
        "x_hat": {c.label: traj["x_hat"][i][0] for i, c in enumerate(configs)},
        "sq_error": {c.label: sq[i][0] for i, c in enumerate(configs)},
        "diverged": {c.label: bool(bad_state[0] or bad_est[i][0]) for i, c in enumerate(configs)},
    }


def centralized_baseline(model: LisModel, noise: NoiseSpec, M: int, horizon: int, seed: int = 0,
                         **kw) -> TrialEnsemble:
    return monte_carlo_rmse(model, [EstimatorConfig("centralized")], noise, M, horizon, seed, **kw)["centralized"]


def noise_free_decay(model: LisModel, config: EstimatorConfig, horizon: int, seed: int = 0, M: int = 1,
                     x_hat0: np.ndarray | None = None, rel_floor: float = 1e-13) -> dict:
    """Noise-free error run with a log-linear decay fit over the tail half.

    Points below ``rel_floor`` times the initial RMSE are treated as numerical
    zero and excluded; if the tail holds fewer than three usable points the fit
    falls back to every usable point after k = 0.
    """
    ens = monte_carlo_rmse(model, [config], NoiseSpec("none"), M, horizon, seed, x_hat0=x_hat0)[config.label]
    r = ens.rmse
    r0 = float(r[0])
    floor = rel_floor * r0
    ks = np.arange(len(r))
    tail = (ks >= horizon // 2) & (r > floor)
    if tail.sum() < 3:
        tail = (ks >= 1) & (r > floor)
    if tail.sum() >= 2:
        slope = np.polyfit(ks[tail], np.log(r[tail]), 1)[0]
        b = float(np.exp(slope))
    else:
        b = 0.0
    rel = r / r0 if r0 > 0 else np.zeros_like(r)
    below = np.nonzero(rel < 1e-6)[0]
    if b < 1 - 1e-3 or rel[-1] <= rel_floor:
        verdict = "exponential"
    elif b <= 1 + 1e-3 and np.max(rel) < 1e6:
        verdict = "marginal"
    else:
        verdict = "unstable"
    return {
        "rmse": r,
        "ratio": b,
        "verdict": verdict,
        "relative_final": float(rel[-1]),
        "first_below_1e-6": int(below[0]) if below.size else None,
        "max_relative": float(np.max(rel)),
    }


def bootstrap_mean_difference(reference: TrialEnsemble, other: TrialEnsemble, n_boot: int = 2000,
                              level: float = 0.95, seed: int = 0) -> dict:
    """Paired bootstrap of mean_k RMSE_other(k) - mean_k RMSE_reference(k).

    Trials are resampled jointly (same indices for both ensembles) over the
    trials usable by both.  ``lower`` is the one-sided lower bound at ``level``.
    """
    used = reference.used_mask & other.used_mask
    a = reference.per_trial_sq[used]
    b = other.per_trial_sq[used]
    n = a.shape[0]
    if n == 0:
        raise SimulationError("no trial is usable by both ensembles")
    rng = np.random.default_rng(seed)
    counts = rng.multinomial(n, np.full(n, 1.0 / n), size=n_boot).astype(float)
    ra = np.sqrt(counts @ a / n)
    rb = np.sqrt(counts @ b / n)
    diff = (rb.mean(axis=1) - ra.mean(axis=1))
    point = float(np.sqrt(b.mean(axis=0)).mean() - np.sqrt(a.mean(axis=0)).mean())
    return {
        "estimate": point,
        "lower": float(np.quantile(diff, 1 - level)),
        "upper": float(np.quantile(diff, level)),
        "prob_nonpositive": float(np.mean(diff <= 0)),
        "n_boot": n_boot,
        "trials": n,
    }


def write_rmse_csv(path: str | Path, ensemble: TrialEnsemble) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["config", "k", "rmse", "trials_used", "diverged"])
        for k, v in enumerate(ensemble.rmse):
            w.writerow([ensemble.label, k, repr(float(v)), ensemble.trials_used, ensemble.diverged])
    return path


def write_metadata(path: str | Path, meta: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(meta, indent=2, sort_keys=True, default=_json_default) + "\n")
    return path


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, (set, frozenset)):
        return sorted(o)
    raise TypeError(f"cannot serialize {type(o).__name__}")
