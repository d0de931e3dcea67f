"""Closed-form and semi-closed-form test problems.

Quadratics come with exact minimisers and exact convex conjugates, which
makes them the reference instances for every solver certificate.  The
entropic optimal-transport dual is the log-sum-exp functional

    ``W*(lam) = mu sum_j q_j log((1/q_j) sum_i exp((lam_i - C_ij)/mu))``

whose gradient is a transport marginal (non-negative, sums to one); the
smoothed transport distance is recovered by maximising
``<lam, p> - W*(lam)`` over the zero-sum subspace.
"""

from __future__ import annotations

import numpy as np

from .oracles import FirstOrderOracle

__all__ = [
    "QuadraticProblem",
    "quadratic_problem",
    "random_quadratic",
    "constrained_quadratic_optimum",
    "min_norm_dual_solution",
    "entropic_ot_dual_value",
    "entropic_ot_dual_grad",
    "entropic_ot_stoch_grad",
    "entropic_wasserstein",
    "simplex_project",
    "barycenter_local_oracle",
    "barycenter_problem",
    "projected_gradient_barycenter",
    "load_measures_csv",
    "load_cost_csv",
]


# ---------------------------------------------------------------------------
# quadratics


class QuadraticProblem:
    """``f(x) = 0.5 x^T Q x - b^T x`` with SPD ``Q``.

    Exposes the exact minimiser ``x* = Q^{-1} b``, the conjugate argmax
    ``x(y) = Q^{-1}(y + b)`` and the conjugate value
    ``phi(y) = 0.5 (y+b)^T Q^{-1} (y+b)``.
    """

    def __init__(self, Q, b):
        Q = np.asarray(Q, dtype=float)
        b = np.asarray(b, dtype=float)
        if Q.ndim != 2 or Q.shape[0] != Q.shape[1] or b.shape != (Q.shape[0],):
            raise ValueError("Q must be square and b conforming")
        if not np.allclose(Q, Q.T, atol=1e-12 * max(1.0, np.abs(Q).max())):
            raise ValueError("Q must be symmetric")
        evals = np.linalg.eigvalsh(Q)
        if evals[0] <= 0:
            raise ValueError("Q must be positive definite")
        self.Q = Q
        self.b = b
        self.L = float(evals[-1])
        self.mu = float(evals[0])
        self.x_star = np.linalg.solve(Q, b)
        self.f_star = float(0.5 * self.x_star @ Q @ self.x_star - b @ self.x_star)

    def value(self, x):
        return float(0.5 * x @ self.Q @ x - self.b @ x)

    def gradient(self, x):
        return self.Q @ x - self.b

    def conjugate_argmax(self, y):
        return np.linalg.solve(self.Q, y + self.b)

    def phi_value(self, y):
        w = y + self.b
        return float(0.5 * w @ np.linalg.solve(self.Q, w))

    def oracle(self, counter=None) -> FirstOrderOracle:
        oracle = FirstOrderOracle(self.Q.shape[0], self.value, self.gradient,
                                  self.L, self.mu, counter=counter)
        oracle.Q = self.Q
        oracle.b = self.b
        oracle.conjugate_argmax = self.conjugate_argmax
        oracle.conjugate_value = self.phi_value
        return oracle


def quadratic_problem(Q, b) -> QuadraticProblem:
    """Validated quadratic instance with its closed-form dual pieces."""
    return QuadraticProblem(Q, b)


def random_quadratic(dim: int, cond: float, rng: np.random.Generator,
                     b_scale: float = 1.0) -> QuadraticProblem:
    """Random SPD quadratic with prescribed condition number."""
    M = rng.standard_normal((dim, dim))
    U, _ = np.linalg.qr(M)
    evals = np.logspace(0.0, np.log10(cond), dim)
    Q = (U * evals) @ U.T
    Q = (Q + Q.T) / 2.0
    b = b_scale * rng.standard_normal(dim)
    return QuadraticProblem(Q, b)


def constrained_quadratic_optimum(Q, b, A):
    """Exact solution of ``min 0.5 x^T Q x - b^T x  s.t.  A x = 0``.

    Brute-force null-space solve: parametrise ``x = Z t`` with ``Z`` an
    orthonormal basis of ``Ker A`` and solve the reduced normal equations.
    """
    Q = np.asarray(Q, dtype=float)
    b = np.asarray(b, dtype=float)
    A = np.asarray(A, dtype=float)
    _, s, Vt = np.linalg.svd(A)
    rank = int(np.sum(s > 1e-12 * (s[0] if s.size else 1.0)))
    Z = Vt[rank:].T
    if Z.shape[1] == 0:
        x = np.zeros(Q.shape[0])
        return x, 0.0
    t = np.linalg.solve(Z.T @ Q @ Z, Z.T @ b)
    x = Z @ t
    return x, float(0.5 * x @ Q @ x - b @ x)


def min_norm_dual_solution(Q, b, A):
    """Smallest-norm ``y*`` with ``A^T y* = grad f(x*)`` at the constrained optimum."""
    x_c, _ = constrained_quadratic_optimum(Q, b, A)
    grad = np.asarray(Q, dtype=float) @ x_c - np.asarray(b, dtype=float)
    y_star, *_ = np.linalg.lstsq(np.asarray(A, dtype=float).T, grad, rcond=None)
    return y_star, x_c


# ---------------------------------------------------------------------------
# entropic optimal transport


def _check_simplex(q, tol=1e-12):
    q = np.asarray(q, dtype=float)
    if np.any(q < -tol) or abs(q.sum() - 1.0) > max(tol, 1e-12 * q.size):
        raise ValueError("measure must lie in the probability simplex")
    return np.clip(q, 0.0, None)


def _column_lse(lam, C, mu):
    """Per-column stabilised ``log sum_i exp((lam_i - C_ij)/mu)``."""
    E = (lam[:, None] - C) / mu
    m = E.max(axis=0)
    return m + np.log(np.exp(E - m[None, :]).sum(axis=0)), E, m


def entropic_ot_dual_value(lam, q, C, mu: float) -> float:
    """Smoothed-transport dual value; zero-mass atoms contribute zero."""
    if mu <= 0:
        raise ValueError("mu must be positive")
    q = _check_simplex(q)
    lam = np.asarray(lam, dtype=float)
    C = np.asarray(C, dtype=float)
    lse, _, _ = _column_lse(lam, C, mu)
    mask = q > 0
    return float(mu * np.sum(q[mask] * (lse[mask] - np.log(q[mask]))))


def _column_softmax(lam, C, mu):
    E = (lam[:, None] - C) / mu
    E -= E.max(axis=0, keepdims=True)
    P = np.exp(E)
    return P / P.sum(axis=0, keepdims=True)


def entropic_ot_dual_grad(lam, q, C, mu: float) -> np.ndarray:
    """Gradient of the dual: the row marginal of the softmax transport plan.

    Component ``i`` is ``sum_j q_j softmax_i((lam - C_:j)/mu)``; the result
    is a probability vector.
    """
    if mu <= 0:
        raise ValueError("mu must be positive")
    q = _check_simplex(q)
    lam = np.asarray(lam, dtype=float)
    C = np.asarray(C, dtype=float)
    return _column_softmax(lam, C, mu) @ q


def entropic_ot_stoch_grad(lam, q, C, mu: float, rng: np.random.Generator) -> np.ndarray:
    """Unbiased single-column estimate: draw ``j ~ q``, return that column's softmax."""
    if mu <= 0:
        raise ValueError("mu must be positive")
    q = _check_simplex(q)
    lam = np.asarray(lam, dtype=float)
    C = np.asarray(C, dtype=float)
    j = rng.choice(q.size, p=q / q.sum())
    E = (lam - C[:, j]) / mu
    E -= E.max()
    w = np.exp(E)
    return w / w.sum()


def entropic_wasserstein(p, q, C, mu: float, tol: float = 1e-8,
                         max_iter: int = 500_000):
    """Smoothed transport distance and its optimal dual potential.

    Maximises the concave dual ``<lam, p> - W*(lam)`` by gradient ascent on
    the zero-sum subspace (the gradient ``p - grad W*`` already sums to
    zero, and the value is invariant under constant shifts, so the
    zero-mean representative is returned).  Raises on non-convergence.
    """
    p = _check_simplex(p)
    q = _check_simplex(q)
    C = np.asarray(C, dtype=float)
    lam = np.zeros(p.size)
    step = mu  # ascent step 1/L; the dual gradient is (1/mu)-Lipschitz
    for _ in range(max_iter):
        g = p - entropic_ot_dual_grad(lam, q, C, mu)
        if np.linalg.norm(g) <= tol:
            break
        lam = lam + step * g
        lam -= lam.mean()
    else:
        raise RuntimeError(
            f"entropic dual ascent did not reach tol={tol:g} in {max_iter} iterations "
            f"(residual {np.linalg.norm(g):.3e})")
    lam -= lam.mean()
    value = float(lam @ p - entropic_ot_dual_value(lam, q, C, mu))
    return value, lam


def simplex_project(v) -> np.ndarray:
    """Euclidean projection onto the probability simplex."""
    v = np.asarray(v, dtype=float)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    idx = np.arange(1, v.size + 1)
    rho = np.max(np.where(u - css / idx > 0, idx, 0))
    theta = css[rho - 1] / rho
    return np.maximum(v - theta, 0.0)


# ---------------------------------------------------------------------------
# barycenter instances


def barycenter_local_oracle(q, C, mu: float, tol: float = 1e-10,
                            counter=None) -> FirstOrderOracle:
    """Oracle for ``p -> W_mu(p, q)`` with its closed-form conjugate attached.

    The conjugate of the smoothed transport distance in ``p`` is exactly
    the log-sum-exp dual, so ``conjugate_argmax`` (the transport marginal)
    and ``conjugate_value`` need no inner solves.  Values/gradients in
    ``p`` run the dual ascent and are meant for diagnostics only.
    """
    q = _check_simplex(q)
    C = np.asarray(C, dtype=float)
    n = q.size

    def value(p):
        val, _ = entropic_wasserstein(p, q, C, mu, tol=max(tol, 1e-10))
        return val

    def gradient(p):
        _, lam = entropic_wasserstein(p, q, C, mu, tol=max(tol, 1e-10))
        return lam

    # L is unknown in closed form (the conjugate is only strictly convex);
    # the dual pipeline needs only mu.
    oracle = FirstOrderOracle(n, value, gradient, L=0.0, mu=mu, counter=counter)
    oracle.conjugate_argmax = lambda u: entropic_ot_dual_grad(u, q, C, mu)
    oracle.conjugate_value = lambda u: entropic_ot_dual_value(u, q, C, mu)
    oracle.measure = q
    # minimiser of W_mu(., q) over the simplex: the zero-potential marginal
    oracle.x_star = entropic_ot_dual_grad(np.zeros(n), q, C, mu)
    return oracle


def barycenter_problem(measures, C, mu: float, topology):
    """Decentralized instance of the empirical smoothed-barycenter problem.

    One node per measure; node ``i`` owns ``p -> W_mu(p, q^i)`` and its
    closed-form conjugate oracle.  Solving the lifted dual and recovering
    the primal per node yields the empirical barycenter.
    """
    from .network import lift_problem

    measures = np.atleast_2d(np.asarray(measures, dtype=float))
    locals_ = [barycenter_local_oracle(q, C, mu) for q in measures]
    instance = lift_problem(locals_, topology, measures.shape[1])
    instance.measures = measures
    instance.cost = np.asarray(C, dtype=float)
    instance.mu_entropy = float(mu)
    return instance


def projected_gradient_barycenter(measures, C, mu: float, iters: int = 2000,
                                  tol: float = 1e-10, inner_tol: float = 1e-10):
    """Centralized verification baseline: projected gradient on the barycenter objective.

    Minimises ``(1/m) sum_i W_mu(p, q^i)`` over the simplex with Armijo
    backtracking; each gradient is the mean of the optimal dual potentials.
    """
    measures = np.atleast_2d(np.asarray(measures, dtype=float))
    m, n = measures.shape
    p = np.full(n, 1.0 / n)

    def fval(point):
        return np.mean([entropic_wasserstein(point, q, C, mu, tol=inner_tol)[0]
                        for q in measures])

    def grad(point):
        return np.mean([entropic_wasserstein(point, q, C, mu, tol=inner_tol)[1]
                        for q in measures], axis=0)

    fp = fval(p)
    step = 1.0
    for _ in range(iters):
        g = grad(p)
        while step > 1e-12:
            cand = simplex_project(p - step * g)
            fc = fval(cand)
            if fc <= fp - 1e-4 * float(g @ (p - cand)):
                break
            step *= 0.5
        move = float(np.linalg.norm(cand - p))
        p, fp = cand, fc
        step = min(step * 2.0, 1e6)
        if move <= tol:
            break
    return p


# ---------------------------------------------------------------------------
# file formats


def load_measures_csv(path) -> np.ndarray:
    """Measures file: one row per measure, ``n`` columns summing to one."""
    M = np.atleast_2d(np.loadtxt(path, delimiter=","))
    for row in M:
        _check_simplex(row, tol=1e-9)
    return M


def load_cost_csv(path) -> np.ndarray:
    """Cost file: a non-negative ``n x n`` matrix."""
    C = np.atleast_2d(np.loadtxt(path, delimiter=","))
    if C.shape[0] != C.shape[1] or np.any(C < 0):
        raise ValueError("cost matrix must be square and non-negative")
    return C
