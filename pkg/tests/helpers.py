"""Independent oracles and model builders shared by the test modules.

Oracles avoid the package's own linear algebra helpers: covariances use the
Joseph form with explicit solves, operators are assembled from Kronecker
products by hand.
"""

import numpy as np

from lisest import LisModel


def kalman_reference(A, C, Q, R, P0, horizon):
    """Classical filter covariances: returns lists of priors P_bar(k) and
    posteriors P(k) for k = 0..horizon, with P_bar(0) = P(0) = P0."""
    n = A.shape[0]
    P = np.array(P0, dtype=float)
    priors, posts = [P.copy()], [P.copy()]
    for _ in range(horizon):
        Pb = A @ P @ A.T + Q
        S = C @ Pb @ C.T + R
        K = np.linalg.solve(S, C @ Pb).T
        IKC = np.eye(n) - K @ C
        P = IKC @ Pb @ IKC.T + K @ R @ K.T
        priors.append(Pb)
        posts.append(P)
    return priors, posts


def kron_operator(terms):
    """sum_i M_i (x) M_i acting on column-major vec(X)."""
    return sum(np.kron(M, M) for M in terms)


def lifted_terms(model, theta, K_global):
    """M_i = theta_i E_i A - theta_i E_i A K C with E_i the block-row selector."""
    A, C = model.A(0), model.C(0)
    out = []
    start = 0
    for i, d in enumerate(model.dims):
        E = np.zeros((model.n, model.n))
        E[start:start + d, start:start + d] = np.eye(d)
        out.append(theta[i] * E @ A - theta[i] * E @ A @ K_global @ C)
        start += d
    return out


def spectral_radius(M):
    return float(np.max(np.abs(np.linalg.eigvals(M))))


def random_psd(rng, n, scale=1.0, rank=None):
    W = rng.standard_normal((n, rank or n))
    return scale * W @ W.T / (rank or n)


def random_gamma(rng, s, dims, density=0.5, gain=0.6):
    """Random block map Gamma as a dict (i, j) -> block, diagonal always present."""
    blocks = {}
    for i in range(s):
        for j in range(s):
            if i == j or rng.random() < density:
                blocks[(i, j)] = gain * rng.standard_normal((dims[i], dims[j])) / np.sqrt(dims[j] * s)
    return blocks


def undetectable_model(rng, s=3, lam=1.5, coupling=0.3, density=0.5):
    """Time-invariant model with 2-state subsystems; subsystem 0 has an
    eigenvalue ``lam`` whose eigenvector lies in null(C_0)."""
    blocks = {}
    Cs = []
    for i in range(s):
        U, _ = np.linalg.qr(rng.standard_normal((2, 2)))
        u, w = U[:, 0], U[:, 1]
        if i == 0:
            blocks[(0, 0)] = lam * np.outer(u, u) + rng.uniform(-0.5, 0.5) * np.outer(w, w)
            Cs.append(w[None, :])
        else:
            blocks[(i, i)] = 0.6 * rng.standard_normal((2, 2)) / np.sqrt(2)
            Cs.append(rng.standard_normal((1, 2)))
    for i in range(s):
        for j in range(s):
            if i != j and rng.random() < density:
                blocks[(i, j)] = coupling * rng.standard_normal((2, 2)) / np.sqrt(2)
    return LisModel.from_blocks([2] * s, [1] * s, [{
        "A": blocks, "C": Cs, "Q": [np.eye(2)] * s, "R": [np.eye(1)] * s,
    }])


class LoggingModel:
    """Proxy recording every (kind, i, j) block access made through the block getters."""

    def __init__(self, model):
        self._m = model
        self.log = []

    def A_block(self, i, j, k=0):
        self.log.append(("A", i, j))
        return self._m.A_block(i, j, k)

    def C_block(self, i, k=0):
        self.log.append(("C", i, i))
        return self._m.C_block(i, k)

    def Q_block(self, i, k=0):
        self.log.append(("Q", i, i))
        return self._m.Q_block(i, k)

    def R_block(self, i, k=0):
        self.log.append(("R", i, i))
        return self._m.R_block(i, k)

    def in_neighbors(self, i, k=0):
        return self._m.in_neighbors(i, k)

    def __getattr__(self, name):
        # global accessors would bypass locality; fail loudly if used
        if name in ("A", "C", "Q", "R"):
            raise AssertionError(f"global accessor {name} used")
        return getattr(self._m, name)
