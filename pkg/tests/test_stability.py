import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings, strategies as st
from scipy.optimize import minimize

from helpers import kron_operator, random_psd, spectral_radius
from lisest.estimator import run_dmre, steady_state_solve
from lisest.model import (
    LisModel,
    PowerSystemConfig,
    decoupling_variables,
    generate_power_system,
    random_model,
    scalar_model,
)
from lisest.stability import (
    INCONCLUSIVE,
    NO,
    YES,
    LiftedOperator,
    adjoint_apply,
    boundedness_check,
    build_lifted_operator,
    centralized_lmi_feasibility,
    detectability_check,
    distributed_lmi_check,
    operator_spectral_radius,
    reachability_check,
    steady_gain_terms,
    undetectable_mode,
    uniform_detectability_probe,
    uniform_reachability_gramian,
    verify_conditions,
    weak_coupling_sweep,
)

PHI = (1 + np.sqrt(5)) / 2


def small_power(s=3, seed=1):
    return generate_power_system(PowerSystemConfig(s=s, switch_every=None, horizon=None), seed=seed)


# pair checks --------------------------------------------------------------

def test_reachability_examples():
    res = reachability_check(np.zeros((2, 2)), np.eye(2))
    assert res.reachable and np.allclose(res.gramian, np.eye(2))
    assert not reachability_check(np.diag([0.5, 0.7]), np.array([[1.0], [0.0]])).reachable
    with pytest.raises(ValueError):
        reachability_check(np.full((2, 2), np.nan), np.eye(2))


@given(st.integers(0, 10_000), st.integers(1, 2))
def test_reachability_matches_rank_test(seed, q):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((4, 4))
    Y = rng.standard_normal((4, q))
    if seed % 3 == 0:
        # make one mode undriven
        V = np.linalg.qr(rng.standard_normal((4, 4)))[0]
        X = V @ np.diag([0.3, -0.5, 0.9, 1.2]) @ V.T
        Y = V[:, :3] @ rng.standard_normal((3, q))
    ctrb = np.hstack([np.linalg.matrix_power(X, i) @ Y for i in range(4)])
    rank_ok = np.linalg.matrix_rank(ctrb, tol=1e-8 * max(1.0, np.abs(ctrb).max())) == 4
    assert reachability_check(X, Y, tol=1e-10).reachable == rank_ok


def test_detectability_examples():
    X = np.diag([0.5, 2.0])
    yes = detectability_check(np.array([[0.0, 1.0]]), X)
    assert yes.detectable and yes.witness_radius < 1
    no = detectability_check(np.array([[1.0, 0.0]]), X)
    assert not no.detectable and no.witness_K is None
    assert no.unstable_eigs == (2.0,)


@settings(max_examples=60)
@given(st.integers(0, 10_000), st.booleans())
def test_detectability_matches_witness_search(seed, hide):
    rng = np.random.default_rng(seed)
    V = rng.standard_normal((6, 6))
    lam = np.concatenate([rng.uniform(1.05, 2.0, 2), rng.uniform(-0.9, 0.9, 4)])
    X = V @ np.diag(lam) @ np.linalg.inv(V)
    Y = rng.standard_normal((2, 6))
    if hide:
        # move the first unstable eigenvector into the kernel of Y
        u = V[:, 0] / np.linalg.norm(V[:, 0])
        Y = Y - np.outer(Y @ u, u)
    res = detectability_check(Y, X)
    assert res.detectable == (not hide)
    if res.detectable:
        assert spectral_radius(X + res.witness_K @ Y) < 1
    else:
        # no gain moves the hidden mode
        for _ in range(20):
            K = rng.standard_normal((6, 2)) * 3
            assert spectral_radius(X + K @ Y) >= lam[0] - 1e-6


# uniform checks -----------------------------------------------------------

def test_uniform_reachability_examples():
    rep = uniform_reachability_gramian((np.zeros((2, 2)), np.eye(2)), 0, 1.0, 10)
    assert rep.verdict == "certified-on-horizon" and np.allclose(rep.per_k, 1.0)
    rep = uniform_reachability_gramian((np.eye(2), np.zeros((2, 1))), 1, 1e-6, 5)
    assert rep.verdict == "falsified"
    with pytest.raises(ValueError):
        uniform_reachability_gramian([(np.eye(1), np.eye(1))] * 3, 2, 0.1, 5)


def test_uniform_reachability_time_varying_list():
    seq = [(np.array([[0.0, 1.0], [0.0, 0.0]]), np.array([[0.0], [1.0]]))] * 8
    rep = uniform_reachability_gramian(seq, 1, 0.5, 6)
    assert rep.verdict == "certified-on-horizon"
    assert rep.worst_value == pytest.approx(1.0)


def test_power_system_condition1():
    m = small_power()
    for i in range(m.s):
        rep = uniform_reachability_gramian((m.A_block(i, i), np.eye(4)), 3, 1e-6, 0)
        assert rep.verdict == "certified-on-horizon"


def test_detectability_probe_examples():
    contraction = uniform_detectability_probe((np.zeros((1, 2)), 0.5 * np.eye(2)), 1, 1, 0.9, 0.1, 5)
    assert contraction.verdict == "certified-on-horizon"
    expanding = uniform_detectability_probe((np.zeros((1, 1)), np.array([[2.0]])), 1, 2, 0.5, 1e-3, 3)
    assert expanding.verdict == "falsified"
    with pytest.raises(ValueError):
        uniform_detectability_probe((np.zeros((1, 1)), np.eye(1)), 2, 1, 0.5, 0.1, 1)


def test_detectability_probe_grid_finds_certificate():
    X = np.array([[1.2, 1.0], [0.0, 0.5]])
    Y = np.array([[1.0, 0.0]])
    found = [(g, s) for g in (0.3, 0.6, 0.9) for s in (1e-3, 1e-2, 1e-1)
             if uniform_detectability_probe((Y, X), 1, 2, g, s, 4).verdict == "certified-on-horizon"]
    assert found


# lifted operator ----------------------------------------------------------

def test_lifted_scalar_examples():
    assert operator_spectral_radius(LiftedOperator((np.array([[0.5]]),)))[0] == pytest.approx(0.25)
    op = LiftedOperator((np.array([[0.5]]), np.array([[0.3]])))
    assert op.apply(np.array([[2.0]]))[0, 0] == pytest.approx(2 * 0.34)
    assert op.spectral_radius() == pytest.approx(0.34)
    m = scalar_model(a=0.5, c=0.0)
    assert build_lifted_operator(m, 1.0).apply(np.eye(1))[0, 0] == pytest.approx(0.25)


def test_nilpotent_lift():
    rng = np.random.default_rng(0)
    terms = tuple(np.tril(rng.standard_normal((4, 4)), -1) for _ in range(3))
    assert operator_spectral_radius(LiftedOperator(terms))[0] < 1e-12


def test_dense_vs_power_iteration():
    m = random_model(2, 2, 1, density=1.0, diag_radius=0.7, seed=3)
    op = build_lifted_operator(m, decoupling_variables(m))
    dense, method = operator_spectral_radius(op)
    assert method == "kronecker-dense"
    pw, ok = op.power_iteration(tol=1e-14)
    assert ok and pw == pytest.approx(dense, abs=1e-8)


def test_large_operator_uses_iterative_method():
    m = random_model(3, 3, 1, density=0.6, diag_radius=0.8, seed=4)
    op = build_lifted_operator(m, decoupling_variables(m))
    dense, _ = operator_spectral_radius(op)
    rho, method = operator_spectral_radius(op, dense_limit=4)
    assert method in ("arpack", "power-iteration")
    assert rho == pytest.approx(dense, abs=1e-7)


def test_golden_ratio_operator():
    ss = steady_state_solve(scalar_model())
    m = scalar_model()
    op = build_lifted_operator(m, 1.0, steady_gain_terms(m, 1.0, ss.K_star.global_matrix()))
    assert op.spectral_radius() == pytest.approx((1 - 1 / PHI) ** 2, abs=1e-10)


def test_identity_terms_self_adjoint():
    op = LiftedOperator((np.eye(3), 2 * np.eye(3)))
    X = random_psd(np.random.default_rng(0), 3)
    assert np.allclose(adjoint_apply(op, X), op.apply(X))


@given(st.integers(0, 10_000))
def test_adjoint_identity_and_spectrum(seed):
    rng = np.random.default_rng(seed)
    op = LiftedOperator(tuple(rng.standard_normal((4, 4)) for _ in range(3)))
    X, Y = rng.standard_normal((4, 4)), rng.standard_normal((4, 4))
    X, Y = X + X.T, Y + Y.T
    lhs, rhs = np.sum(op.apply(X) * Y), np.sum(X * adjoint_apply(op, Y))
    assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs))
    adj = kron_operator([M.T for M in op.terms])
    assert spectral_radius(adj) == pytest.approx(op.spectral_radius(), rel=1e-9)


@given(st.integers(0, 10_000), st.integers(1, 4))
def test_lift_consistency_and_psd_preservation(seed, n):
    rng = np.random.default_rng(seed)
    op = LiftedOperator(tuple(rng.standard_normal((n, n)) for _ in range(2)))
    X = random_psd(rng, n)
    vec = op.kron_matrix @ X.ravel(order="F")
    assert np.allclose(vec.reshape((n, n), order="F"), op.apply(X))
    assert np.allclose(op.kron_matrix @ X.ravel(), op.apply(X).ravel())
    assert np.min(np.linalg.eigvalsh(op.apply(X))) > -1e-10 * max(1.0, np.abs(X).max())


def test_lifted_operator_dimension_errors():
    m = random_model(2, 2, 1, seed=0)
    with pytest.raises(ValueError):
        build_lifted_operator(m, None, [np.zeros((4, 2))])


# boundedness --------------------------------------------------------------

def test_boundedness_examples():
    rep = boundedness_check(scalar_model())
    assert rep.bounded == YES and rep.spectral_radius == pytest.approx(0.1459, abs=1e-3)
    rep = boundedness_check(scalar_model(a=2.0, c=0.0))
    assert rep.bounded == NO
    assert rep.witness["undetectable_mode"]["lower_bound"] == pytest.approx(4.0)


def test_boundedness_lyapunov_case():
    rng = np.random.default_rng(2)
    blocks = {(i, i): 0.8 * np.linalg.qr(rng.standard_normal((2, 2)))[0] * [1.0, 0.5] for i in range(2)}
    m = LisModel.from_blocks([2, 2], [1, 1], [{
        "A": blocks, "C": [np.zeros((1, 2))] * 2, "Q": [np.eye(2)] * 2, "R": [np.eye(1)] * 2}])
    rep = boundedness_check(m, 1.0)
    assert rep.bounded == YES
    assert rep.spectral_radius == pytest.approx(spectral_radius(m.A(0)) ** 2, abs=1e-9)
    assert all(np.allclose(K, 0) for K in rep.witness["K"])


def test_boundedness_inconclusive_on_iteration_cap():
    rep = boundedness_check(random_model(2, 2, 1, diag_radius=0.9, coupling=0.3, seed=1), max_iter=2)
    assert rep.bounded == INCONCLUSIVE


def test_boundedness_power_system():
    rep = boundedness_check(small_power())
    assert rep.bounded == YES and rep.spectral_radius < 1 and rep.condition1


def test_boundedness_flags_missing_reachability():
    m = LisModel.from_blocks([1], [1], [{"A": {(0, 0): [[0.5]]}, "C": [[[1.0]]], "Q": [[[0.0]]],
                                         "R": [[[1.0]]]}])
    rep = boundedness_check(m)
    assert not rep.condition1 and rep.diagnostics


def test_undetectable_mode_none_when_detectable():
    assert undetectable_mode(scalar_model()) is None


# LMI checks ---------------------------------------------------------------

def test_lmi_full_measurement():
    rng = np.random.default_rng(1)
    m = LisModel.from_blocks([2, 2], [2, 2], [{
        "A": {(0, 0): rng.standard_normal((2, 2)), (0, 1): rng.standard_normal((2, 2)),
              (1, 1): rng.standard_normal((2, 2))},
        "C": [rng.standard_normal((2, 2)) + 3 * np.eye(2) for _ in range(2)],
        "Q": [np.eye(2)] * 2, "R": [np.eye(2)] * 2}])
    for i in range(2):
        row = distributed_lmi_check(m, i)
        assert row.feasible and row.residual_radius < 1e-20


@pytest.mark.parametrize("scale", [0.3, 0.8])
def test_lmi_no_measurement(scale):
    rng = np.random.default_rng(5)
    A01 = scale * rng.standard_normal((2, 2))
    A00 = scale * rng.standard_normal((2, 2))
    m = LisModel.from_blocks([2, 2], [1, 1], [{
        "A": {(0, 0): A00, (0, 1): A01, (1, 1): np.eye(2) * 0.1},
        "C": [np.zeros((1, 2))] * 2, "Q": [np.eye(2)] * 2, "R": [np.eye(1)] * 2}])
    th = 1.3
    expected = th ** 2 * np.max(np.linalg.eigvalsh(A00 @ A00.T + A01 @ A01.T))
    row = distributed_lmi_check(m, 0, th)
    assert row.residual_radius == pytest.approx(expected)
    assert row.feasible == (expected < 1)


def test_lmi_power_row_matches_search():
    m = small_power(s=3, seed=2)
    th = decoupling_variables(m)
    rng = np.random.default_rng(0)
    for i in range(m.s):
        row = distributed_lmi_check(m, i, th[i])
        nb = sorted(m.in_neighbors(i) | {i})

        def objective(v):
            Xs = v.reshape(len(nb), 4, 2)
            res = [th[i] * m.A_block(i, j) - X @ m.C_block(j) for j, X in zip(nb, Xs)]
            w, V = np.linalg.eigh(sum(r @ r.T for r in res))
            u = V[:, -1]
            grad = [-2 * np.outer(u, u) @ r @ m.C_block(j).T for j, r in zip(nb, res)]
            return w[-1], np.concatenate([g.ravel() for g in grad])
        found = minimize(objective, rng.standard_normal(8 * len(nb)), jac=True, method="BFGS",
                         options={"gtol": 1e-10, "maxiter": 10_000}).fun
        assert found >= row.residual_radius - 1e-9
        assert found == pytest.approx(row.residual_radius, rel=1e-4)
        assert (found < 1) == row.feasible


def test_lmi_row_locality():
    from helpers import LoggingModel
    m = random_model(4, 2, 1, density=0.5, seed=3)
    for i in range(4):
        spy = LoggingModel(m)
        distributed_lmi_check(spy, i, 1.5)
        nb = m.in_neighbors(i) | {i}
        assert set(spy.log) <= {("A", i, j) for j in nb} | {("C", j, j) for j in nb}


def test_centralized_golden_ratio():
    rep = centralized_lmi_feasibility(scalar_model())
    assert rep.bounded == YES
    # C = 1 makes the row feasible with gain G = theta A / C = 1, so M = A - G C = 0
    # and the 1-d Lyapunov equation z - m^2 z = 1 gives x = 1/z = 1
    assert rep.witness["X"][0, 0] == pytest.approx(1.0)
    assert rep.witness["Y"][0][0, 0] == pytest.approx(1.0)
    # 1-d LMI [[x, x m], [m x, x]] has least eigenvalue x (1 - |m|)
    assert rep.witness["lmi_min_eig"] == pytest.approx(1.0)


def test_centralized_undetectable():
    assert centralized_lmi_feasibility(scalar_model(a=2.0, c=0.0)).bounded == NO


@settings(max_examples=25)
@given(st.integers(0, 10_000))
def test_rows_feasible_implies_centralized(seed):
    rng = np.random.default_rng(seed)
    m = random_model(3, 2, [int(x) for x in rng.integers(1, 3, 3)], density=0.5,
                     diag_radius=rng.uniform(0.2, 1.2), coupling=0.3, seed=rng)
    if all(distributed_lmi_check(m, i).feasible for i in range(3)):
        rep = centralized_lmi_feasibility(m)
        assert rep.bounded == YES and rep.witness["lmi_min_eig"] > 0


def test_centralized_power_system():
    rep = centralized_lmi_feasibility(small_power())
    assert rep.bounded == YES
    assert rep.witness["lmi_min_eig"] > 0


# sweep --------------------------------------------------------------------

def test_sweep_zero_coupling_is_decoupled():
    base = random_model(3, 2, 1, density=0.7, diag_radius=1.3, coupling=1.0, seed=17)
    pt = weak_coupling_sweep(base, [0.0]).points[0]
    classical = True
    for i in range(3):
        A, C = base.A_block(i, i), base.C_block(i)
        try:
            sla.solve_discrete_are(A.T, C.T, np.eye(2), np.eye(1))
        except (np.linalg.LinAlgError, ValueError):
            classical = False
    assert (pt.bounded == YES) == classical


def test_sweep_prefix_and_threshold():
    base = random_model(4, 2, 1, density=0.6, diag_radius=0.8, coupling=1.0, seed=910)
    res = weak_coupling_sweep(base, np.linspace(0, 1.5, 16))
    assert res.prefix_property
    assert res.threshold is not None and res.threshold > 0
    assert all(p.bounded == YES for p in res.points if p.a < res.threshold)


def test_sweep_power_system_paper_coupling():
    res = weak_coupling_sweep(small_power(), [1.0])
    assert res.points[0].bounded == YES
    tv = generate_power_system(PowerSystemConfig(s=3, switch_every=20, horizon=60), seed=1)
    res = weak_coupling_sweep(tv, [0.0, 1.0], horizon=50)
    assert all(p.bounded == YES for p in res.points)


# conditions ---------------------------------------------------------------

def test_conditions_identity_covariances():
    m = random_model(3, 2, 1, density=0.5, seed=2)
    rep = verify_conditions(m)
    assert rep.condition1 and rep.condition2
    assert np.allclose(rep.q_u, 1) and np.allclose(rep.r_l, 1) and np.allclose(rep.r_u, 1)


def test_conditions_zero_process_noise():
    m = LisModel.from_blocks([2], [1], [{"A": {(0, 0): np.eye(2)}, "C": [np.ones((1, 2))],
                                         "Q": [np.zeros((2, 2))], "R": [np.eye(1)]}])
    assert not verify_conditions(m).condition1


def test_conditions_theta_bounds_and_trace():
    m = random_model(4, 2, 1, density=0.5, seed=6)
    topo = m.topology(0)
    rep = verify_conditions(m, dmre_states=run_dmre(m, 10))
    assert np.allclose(rep.theta_u, [np.sqrt(len(o) + 1) for o in topo.out_neighbors])
    assert np.all(rep.theta_l >= 1) and np.max(rep.theta_u) <= np.sqrt(max(len(o) for o in topo.out_neighbors) + 1)
    assert rep.condition4 and rep.p_u is not None and np.all(rep.p_u > 0)


def test_conditions_time_varying_power_system():
    m = generate_power_system(PowerSystemConfig(s=3, switch_every=10, horizon=30), seed=0)
    rep = verify_conditions(m, horizon=30)
    assert rep.condition1 and rep.condition2 and rep.condition4
