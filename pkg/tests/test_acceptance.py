"""Acceptance criteria, one test each, at their stated tolerances and time budgets.

A pass/fail line per criterion is printed in the terminal summary.
"""

import time

import numpy as np
import pytest

from helpers import (
    kalman_reference,
    kron_operator,
    lifted_terms,
    random_gamma,
    random_psd,
    spectral_radius,
    undetectable_model,
)
from lisest import LisModel, steady_state_solve
from lisest.estimator import compact_dmre_map, omega_mask, run_dmre, scaled_transition
from lisest.markov import build_markov_equivalent, lis_step, mean_recursion_step
from lisest.model import (
    PowerSystemConfig,
    decoupling_variables,
    generate_power_system,
    random_model,
)
from lisest.sim import (
    EstimatorConfig,
    NoiseSpec,
    bootstrap_mean_difference,
    monte_carlo_rmse,
    noise_free_decay,
)
from lisest.stability import (
    LiftedOperator,
    YES,
    NO,
    boundedness_check,
    distributed_lmi_check,
    undetectable_mode,
    weak_coupling_sweep,
)


def report(num, ok, detail):
    print(f"criterion {num}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.mark.criterion(1, "single-subsystem DMRE equals the classical filter")
def test_classical_reduction():
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    worst = 0.0
    for _ in range(20):
        n = int(rng.integers(1, 7))
        m = int(rng.integers(1, n + 1))
        A = rng.standard_normal((n, n)) / np.sqrt(n) * rng.uniform(0.5, 1.3)
        C = rng.standard_normal((m, n))
        Q = random_psd(rng, n) + 0.1 * np.eye(n)
        R = random_psd(rng, m) + 0.1 * np.eye(m)
        P0 = random_psd(rng, n)
        model = LisModel.from_global(A, C, Q, R, [n], [m])
        assert decoupling_variables(model)[0] == 1.0
        states = run_dmre(model, 100, P0=[P0])
        priors, posts = kalman_reference(A, C, Q, R, P0, 100)
        for st, Pb, P in zip(states[1:], priors[1:], posts[1:]):
            worst = max(worst,
                        np.max(np.abs(st.P_bar[0] - Pb)) / np.max(np.abs(Pb)),
                        np.max(np.abs(st.P[0] - P)) / np.max(np.abs(P)))
    dt = time.perf_counter() - t0
    ok = worst < 1e-10 and dt < 5
    report(1, ok, f"max relative deviation {worst:.2e}, {dt:.2f} s")
    assert worst < 1e-10
    assert dt < 5


@pytest.mark.criterion(2, "golden-ratio fixed point")
def test_golden_ratio():
    t0 = time.perf_counter()
    model = LisModel.from_global([[1.0]], [[1.0]], [[1.0]], [[1.0]], [1], [1])
    ss = steady_state_solve(model)
    Pb = float(ss.P_bar_star[0, 0])
    K = float(ss.K_star.K[0][0, 0])
    # closed form: Pb = 1 + Pb / (1 + Pb) gives the golden ratio, K = Pb / (1 + Pb)
    phi = (1 + np.sqrt(5)) / 2
    op = LiftedOperator((np.array([[1.0 - K]]),))
    rho = op.spectral_radius()
    dt = time.perf_counter() - t0
    ok = abs(Pb - 1.6180339887) < 1e-8 and abs(K - 0.6180) < 1e-4 and abs(rho - 0.1459) < 1e-3 and dt < 1
    report(2, ok, f"P_bar* = {Pb:.10f}, K* = {K:.6f}, rho = {rho:.6f}, {dt:.3f} s")
    assert abs(Pb - phi) < 1e-8 and abs(Pb - 1.6180339887) < 1e-8
    assert abs(K - 0.6180) < 1e-4
    assert abs(rho - 0.1459) < 1e-3
    assert dt < 1


@pytest.mark.criterion(3, "Markov mean recursion reproduces the LIS")
def test_markov_mean_equivalence():
    t0 = time.perf_counter()
    rng = np.random.default_rng(303)
    worst = 0.0
    for _ in range(50):
        s = int(rng.integers(1, 6))
        dims = [int(d) for d in rng.integers(1, 4, size=s)]
        zeta = [rng.standard_normal(d) for d in dims]
        xi = [z.copy() for z in zeta]
        for _k in range(25):
            me = build_markov_equivalent(random_gamma(rng, s, dims, density=rng.uniform(0, 1), gain=1.5), dims)
            zeta = lis_step(me, zeta)
            xi = mean_recursion_step(me, xi)
            worst = max(worst, max(float(np.max(np.abs(a - b))) for a, b in zip(zeta, xi)))
    dt = time.perf_counter() - t0
    ok = worst < 1e-11 and dt < 5
    report(3, ok, f"max abs deviation {worst:.2e}, {dt:.2f} s")
    assert worst < 1e-11
    assert dt < 5


def _rho_oracle(model, theta, K_blocks):
    K = np.zeros((model.n, model.m))
    r = c = 0
    for Ki in K_blocks:
        K[r:r + Ki.shape[0], c:c + Ki.shape[1]] = Ki
        r += Ki.shape[0]
        c += Ki.shape[1]
    return spectral_radius(kron_operator(lifted_terms(model, theta, K)))


@pytest.mark.criterion(4, "DMRE probe and lifted spectral test agree")
def test_boundedness_dichotomy():
    t0 = time.perf_counter()
    rng = np.random.default_rng(404)
    models = []
    for t in range(15):
        models.append(("weak", random_model(3, 2, 1, density=0.5, diag_radius=rng.uniform(0.5, 1.4),
                                            coupling=0.05, seed=rng)))
        models.append(("undetectable", undetectable_model(rng, s=3, lam=rng.uniform(1.2, 2.0))))
    disagreements = 0
    counts = {YES: 0, NO: 0}
    for kind, model in models:
        rep = boundedness_check(model)
        assert rep.condition1, "every instance must satisfy local reachability"
        theta = decoupling_variables(model)
        if rep.bounded == YES:
            rho = _rho_oracle(model, theta, rep.witness["K"])
            agree = rho < 1
        elif rep.bounded == NO:
            # no fixed point exists; any gain set leaves rho >= 1 when a mode is undetectable,
            # and the operator at the last iterate must not certify boundedness
            cert = undetectable_mode(model)
            agree = rep.spectral_radius is None or rep.spectral_radius >= 1
            if cert is not None:
                agree = agree and cert["lower_bound"] >= 1
        else:
            agree = False
        counts[rep.bounded] = counts.get(rep.bounded, 0) + 1
        if kind == "undetectable":
            agree = agree and rep.bounded == NO
        disagreements += not agree
    dt = time.perf_counter() - t0
    ok = disagreements == 0 and dt < 60
    report(4, ok, f"{disagreements} disagreements over 30 models, verdicts {counts}, {dt:.1f} s")
    assert disagreements == 0
    assert dt < 60


@pytest.mark.criterion(5, "steady state is unique and stabilizing")
def test_steady_state_uniqueness():
    t0 = time.perf_counter()
    rng = np.random.default_rng(505)
    worst_gap = 0.0
    worst_rho = 0.0
    done = 0
    while done < 10:
        model = random_model(3, 2, 1, density=0.5, diag_radius=rng.uniform(0.5, 1.2), coupling=0.2, seed=rng)
        base = steady_state_solve(model)
        if not base.converged:
            continue
        done += 1
        for _ in range(5):
            init = random_psd(rng, model.n, scale=rng.uniform(0.1, 50.0))
            ss = steady_state_solve(model, P_bar_init=init)
            assert ss.converged
            worst_gap = max(worst_gap, float(np.max(np.abs(ss.P_bar_star - base.P_bar_star))))
        A, C = model.A(0), model.C(0)
        K = base.K_star.global_matrix()
        worst_rho = max(worst_rho, spectral_radius(A - K @ C @ A))
    dt = time.perf_counter() - t0
    ok = worst_gap < 1e-8 and worst_rho < 1 and dt < 30
    report(5, ok, f"max fixed-point gap {worst_gap:.2e}, max rho(A - KCA) {worst_rho:.4f}, {dt:.2f} s")
    assert worst_gap < 1e-8
    assert worst_rho < 1
    assert dt < 30


@pytest.mark.criterion(6, "row-wise LMI feasibility implies boundedness")
def test_distributed_lmi_implication():
    t0 = time.perf_counter()
    rng = np.random.default_rng(606)
    found = counterexamples = attempts = 0
    while found < 20 and attempts < 2000:
        attempts += 1
        mdims = [int(x) for x in rng.integers(1, 3, size=3)]
        model = random_model(3, 2, mdims, density=0.6, diag_radius=rng.uniform(0.2, 1.5),
                             coupling=rng.uniform(0.05, 0.6), seed=rng)
        if not all(distributed_lmi_check(model, i).feasible for i in range(model.s)):
            continue
        found += 1
        counterexamples += boundedness_check(model).bounded != YES
    dt = time.perf_counter() - t0
    ok = found == 20 and counterexamples == 0 and dt < 30
    report(6, ok, f"{found} feasible models, {counterexamples} counterexamples, {dt:.2f} s")
    assert found == 20
    assert counterexamples == 0
    assert dt < 30


@pytest.mark.criterion(7, "adjoint, Kronecker norm and monotonicity properties")
def test_appendix_properties():
    t0 = time.perf_counter()
    rng = np.random.default_rng(707)
    adj_err = 0.0
    for _ in range(100):
        n = int(rng.integers(1, 7))
        op = LiftedOperator(tuple(rng.standard_normal((n, n)) for _ in range(int(rng.integers(1, 5)))))
        X = rng.standard_normal((n, n))
        Y = rng.standard_normal((n, n))
        X, Y = X + X.T, Y + Y.T
        lhs = float(np.sum(op.apply(X) * Y))
        rhs = float(np.sum(X * op.adjoint(Y)))
        adj_err = max(adj_err, abs(lhs - rhs) / max(1.0, abs(lhs)))

    norm_slack = np.inf
    for _ in range(50):
        n = int(rng.integers(1, 6))
        N = int(rng.integers(1, 8))
        Xs = [rng.standard_normal((n, n)) for _ in range(N)]
        prod = np.eye(n)
        lifted = np.eye(n * n)
        for X in Xs:
            prod = X @ prod
            lifted = np.kron(X, X) @ lifted
        alpha = np.linalg.norm(prod, 2)
        norm_slack = min(norm_slack, np.sqrt(n) * alpha ** 2 + 1e-9 - np.linalg.norm(lifted, 2))

    mono = np.inf
    for _ in range(50):
        model = random_model(int(rng.integers(1, 4)), int(rng.integers(1, 3)), 1, density=0.5, seed=rng)
        th = decoupling_variables(model)
        Acal = scaled_transition(model.A(0), th, model.dims)
        om = omega_mask(model.dims)
        P2 = om * random_psd(rng, model.n)
        P1 = P2 + om * random_psd(rng, model.n, rank=1)
        f1 = compact_dmre_map(P1, Acal, model.C(0), model.Q(0), model.R(0), om)
        f2 = compact_dmre_map(P2, Acal, model.C(0), model.Q(0), model.R(0), om)
        mono = min(mono, float(np.min(np.linalg.eigvalsh(f1 - f2))))
    dt = time.perf_counter() - t0
    ok = adj_err < 1e-10 and norm_slack >= 0 and mono > -1e-9 and dt < 10
    report(7, ok, f"adjoint err {adj_err:.1e}, min norm slack {norm_slack:.2e}, "
                  f"min monotone eig {mono:.2e}, {dt:.2f} s")
    assert adj_err < 1e-10
    assert norm_slack >= 0
    assert mono > -1e-9
    assert dt < 10


@pytest.mark.criterion(8, "power-system experiment")
def test_power_system_experiment():
    t0 = time.perf_counter()
    model = generate_power_system(PowerSystemConfig(s=10, switch_every=100, horizon=500), seed=2024)
    configs = [EstimatorConfig("distributed", "out"), EstimatorConfig("centralized")]
    res = monte_carlo_rmse(model, configs, NoiseSpec("uniform"), M=500, horizon=500, seed=7)
    dist, cent = res["distributed-out"], res["centralized"]
    finite = bool(np.all(np.isfinite(dist.rmse))) and dist.diverged == 0
    bounded = float(np.max(dist.rmse)) < 1e3 * max(float(dist.rmse[0]), 1.0)
    boot = bootstrap_mean_difference(cent, dist, n_boot=2000, level=0.95, seed=11)
    decay = noise_free_decay(model, EstimatorConfig("distributed", "out"), 500, seed=13)
    dt = time.perf_counter() - t0
    ok = finite and bounded and boot["lower"] > 0 and decay["first_below_1e-6"] is not None and dt < 600
    report(8, ok, f"mean RMSE distributed {dist.mean_rmse():.3f} centralized {cent.mean_rmse():.3f}, "
                  f"bootstrap lower {boot['lower']:.3f}, noise-free below 1e-6 at k={decay['first_below_1e-6']}, "
                  f"{dt:.1f} s")
    assert finite and bounded
    assert boot["lower"] > 0
    assert decay["first_below_1e-6"] is not None
    assert dt < 600


@pytest.mark.criterion(9, "weak-coupling sweep")
def test_weak_coupling_sweep():
    t0 = time.perf_counter()
    base = random_model(4, 2, 1, density=0.6, diag_radius=0.8, coupling=1.0, seed=910)
    grid = np.linspace(0.0, 1.5, 16)
    res = weak_coupling_sweep(base, grid)
    first = res.points[0]
    below = [p for p in res.points if res.threshold is None or p.a < res.threshold]
    dt = time.perf_counter() - t0
    ok = (first.a == 0 and first.precondition and first.bounded == YES
          and all(p.bounded == YES for p in below) and dt < 60)
    report(9, ok, f"threshold {res.threshold}, prefix {res.prefix_property}, "
                  f"{len(below)} grid points below it bounded, {dt:.2f} s")
    assert first.a == 0 and first.precondition
    assert first.bounded == YES
    assert all(p.bounded == YES for p in below)
    assert dt < 60
