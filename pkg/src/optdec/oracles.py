"""First-order oracles, noise models and call accounting.

Every solver in this package consumes one of three oracle flavours:

* :class:`FirstOrderOracle` -- exact value/gradient access to a smooth
  convex function together with its smoothness ``L`` and strong-convexity
  ``mu`` constants.
* :class:`StochasticGradientOracle` -- gradient samples contaminated by a
  deterministic bias field (scaled by ``delta``) and sub-Gaussian noise
  (scale ``sigma``).
* :class:`DualOracle` -- access to the Fenchel-type dual of a strongly
  convex function composed with a linear map ``A``; its gradient is
  ``A x(A^T y)`` where ``x(u)`` maximises ``<u, x> - f(x)``.

Randomness is organised in explicit streams: the generator used for sample
``l`` of iteration ``k`` of a run with seed ``s`` depends only on
``(s, ..., k, l)``, so batches may be evaluated in any order (or in
parallel) without changing results.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "CallCounter",
    "RngStreams",
    "NoiseSpec",
    "FirstOrderOracle",
    "StochasticGradientOracle",
    "DualOracle",
    "eval_grad",
    "sample_stoch_grad",
    "batch_grad",
    "dual_from_primal",
]

# Eigenvalues below RANK_TOL * lambda_max are treated as exact zeros when
# deciding the rank / kernel of A^T A.
RANK_TOL = 1e-10


class CallCounter:
    """Monotone counters for oracle and communication accounting.

    Counters only grow during a run; ``reset`` is meant to be called once
    at run start.  Increments are plain integer additions, safe to share
    between threads under CPython for the accounting purposes here.
    """

    __slots__ = ("grad_calls", "stoch_samples", "matvec_AtA", "comm_rounds")

    def __init__(self):
        self.reset()

    def reset(self):
        self.grad_calls = 0
        self.stoch_samples = 0
        self.matvec_AtA = 0
        self.comm_rounds = 0

    def snapshot(self) -> dict:
        return {
            "grad_calls": self.grad_calls,
            "stoch_samples": self.stoch_samples,
            "matvec_AtA": self.matvec_AtA,
            "comm_rounds": self.comm_rounds,
        }

    def __repr__(self):
        return f"CallCounter({self.snapshot()})"


class RngStreams:
    """Factory of deterministic random generator streams.

    A stream is addressed by a tuple of non-negative integers appended to
    the run seed, e.g. ``streams.generator(k, l)`` is the generator for
    sample ``l`` of iteration ``k``.  ``child(...)`` fixes a path prefix,
    which lets nested procedures (restarts, trajectories) own disjoint
    stream families.
    """

    __slots__ = ("seed", "path")

    def __init__(self, seed: int, path: tuple = ()):
        self.seed = int(seed)
        self.path = tuple(int(p) for p in path)

    def generator(self, *index: int) -> np.random.Generator:
        return np.random.default_rng((self.seed, *self.path, *(int(i) for i in index)))

    def child(self, *index: int) -> "RngStreams":
        return RngStreams(self.seed, self.path + tuple(int(i) for i in index))


@dataclass(frozen=True)
class NoiseSpec:
    """Bias level and sub-Gaussian scale of a stochastic oracle.

    ``delta`` bounds the norm of the systematic error of the sample mean;
    ``sigma`` is the sub-Gaussian scale of the zero-mean part.  ``kind``
    selects the zero-mean distribution: ``gaussian`` draws from
    N(0, (sigma^2/dim) I) so that E||eta||^2 = sigma^2, ``bounded`` draws
    uniformly from the radius-``sigma`` sphere, ``none`` disables noise.
    """

    delta: float = 0.0
    sigma: float = 0.0
    kind: str = "gaussian"

    def __post_init__(self):
        if self.delta < 0 or self.sigma < 0:
            raise ValueError("noise levels must be non-negative")
        if self.kind not in ("gaussian", "bounded", "none"):
            raise ValueError(f"unknown noise kind {self.kind!r}")

    @property
    def silent(self) -> bool:
        return self.delta == 0.0 and self.sigma == 0.0

    def sample_eta(self, dim: int, rng: np.random.Generator) -> np.ndarray:
        if self.sigma == 0.0 or self.kind == "none":
            return np.zeros(dim)
        if self.kind == "gaussian":
            return rng.standard_normal(dim) * (self.sigma / np.sqrt(dim))
        # bounded: uniform on the sphere of radius sigma
        u = rng.standard_normal(dim)
        return u * (self.sigma / np.linalg.norm(u))


def _default_bias_direction(x: np.ndarray) -> np.ndarray:
    e = np.zeros_like(x)
    e[0] = 1.0
    return e


class FirstOrderOracle:
    """Exact first-order oracle for an L-smooth, mu-strongly convex function.

    ``value`` and ``gradient`` are raw callables; use :func:`eval_grad` (or
    the ``eval_grad`` method) inside solvers so that calls are counted.
    Diagnostic code may call the raw attributes freely without polluting
    the counters.
    """

    def __init__(self, dim, value, gradient, L, mu=0.0, counter=None):
        if L < 0 or mu < 0:
            raise ValueError("L and mu must be non-negative")
        self.dim = int(dim)
        self.value = value
        self.gradient = gradient
        self.L = float(L)
        self.mu = float(mu)
        self.counter = counter if counter is not None else CallCounter()

    def _check_dim(self, x):
        if np.shape(x) != (self.dim,):
            raise ValueError(f"expected vector of length {self.dim}, got shape {np.shape(x)}")

    def eval_grad(self, x: np.ndarray) -> np.ndarray:
        self._check_dim(x)
        self.counter.grad_calls += 1
        return np.asarray(self.gradient(x), dtype=float)


class StochasticGradientOracle:
    """Gradient sampler with deterministic bias and sub-Gaussian noise.

    A sample at ``x`` is ``gradient(x) + delta * bias_direction(x) + eta``
    with ``eta`` drawn from the :class:`NoiseSpec` distribution.  The bias
    field is a deterministic unit vector (worst-case direction ``e_1`` by
    default) so the bias bound holds with equality and is testable.
    """

    def __init__(self, base: FirstOrderOracle, noise: NoiseSpec, bias_direction=None):
        self.base = base
        self.noise = noise
        self.bias_direction = bias_direction or _default_bias_direction
        self.counter = base.counter

    @property
    def dim(self):
        return self.base.dim

    def sample(self, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        self.base._check_dim(x)
        self.counter.stoch_samples += 1
        g = np.asarray(self.base.gradient(x), dtype=float)
        if self.noise.silent:
            return g
        out = g
        if self.noise.delta > 0:
            out = out + self.noise.delta * self.bias_direction(x)
        return out + self.noise.sample_eta(self.dim, rng)

    def batch(self, x: np.ndarray, r: int, streams: RngStreams) -> np.ndarray:
        if r < 1:
            raise ValueError("batch size must be >= 1")
        acc = np.zeros(self.dim)
        for l in range(r):
            acc += self.sample(x, streams.generator(l))
        return acc / r


class DualOracle:
    """Oracle for the dual ``psi(y) = max_x {<A^T y, x> - f(x)}``.

    The dual gradient is ``A x(A^T y)``; noisy access perturbs the inner
    maximiser ``x`` by ``delta * bias_direction + eta`` before mapping
    through ``A``, so the dual-side bias and noise scale with
    ``sqrt(lambda_max(A^T A))``.

    ``apply_A`` / ``apply_At`` are overridable hooks: the decentralized
    layer replaces them with communication-counting multiplications.
    """

    def __init__(self, primal: FirstOrderOracle, A: np.ndarray, argmax_solver,
                 noise: NoiseSpec | None = None, bias_direction=None, counter=None):
        if primal.mu <= 0:
            raise ValueError("dual oracle requires a strongly convex primal (mu > 0)")
        A = np.asarray(A, dtype=float)
        if A.ndim != 2 or A.shape[1] != primal.dim:
            raise ValueError("A must be a (m_rows x dim) matrix")
        if not np.any(A):
            raise ValueError("A must not be identically zero")
        self.primal = primal
        self.A = A
        self.argmax_solver = argmax_solver
        self.noise = noise if noise is not None else NoiseSpec(0.0, 0.0, "none")
        self.bias_direction = bias_direction or _default_bias_direction
        self.counter = counter if counter is not None else primal.counter

        AtA = A.T @ A
        evals = np.linalg.eigvalsh((AtA + AtA.T) / 2.0)
        lam_max = float(evals[-1])
        positive = evals[evals > RANK_TOL * lam_max]
        self.lam_max_AtA = lam_max
        self.lam_min_plus_AtA = float(positive[0])
        self.L_psi = lam_max / primal.mu
        self.mu_psi = self.lam_min_plus_AtA / primal.L if primal.L > 0 else 0.0

    # -- linear maps (hooks for the communication simulator) ---------------

    def apply_A(self, v: np.ndarray) -> np.ndarray:
        return self.A @ v

    def apply_At(self, y: np.ndarray) -> np.ndarray:
        return self.A.T @ y

    # -- noise transfer constants ------------------------------------------

    @property
    def sigma_psi(self) -> float:
        return float(np.sqrt(self.lam_max_AtA) * self.noise.sigma)

    @property
    def delta_psi(self) -> float:
        return float(np.sqrt(self.lam_max_AtA) * self.noise.delta)

    @property
    def dual_dim(self) -> int:
        return self.A.shape[0]

    # -- exact access (diagnostics are free, solver steps go via ops) ------

    def x_exact(self, u: np.ndarray) -> np.ndarray:
        return np.asarray(self.argmax_solver(u), dtype=float)

    def psi_value(self, y: np.ndarray) -> float:
        # diagnostic path: raw multiplications, nothing is counted
        u = self.A.T @ np.asarray(y, dtype=float)
        x = self.x_exact(u)
        return float(u @ x - self.primal.value(x))

    def grad(self, y: np.ndarray) -> np.ndarray:
        """Exact dual gradient ``A x(A^T y)`` (counted as one gradient call)."""
        self.counter.grad_calls += 1
        u = self.apply_At(np.asarray(y, dtype=float))
        return self.apply_A(self.x_exact(u))

    # -- sampled access ------------------------------------------------------

    def sample_x(self, u: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """One noisy inner maximiser ``x(u) + delta * b(u) + eta``."""
        self.counter.stoch_samples += 1
        x = self.x_exact(u)
        if self.noise.silent:
            return x
        if self.noise.delta > 0:
            x = x + self.noise.delta * self.bias_direction(x)
        return x + self.noise.sample_eta(x.shape[0], rng)

    def sample_grad(self, y: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        u = self.apply_At(np.asarray(y, dtype=float))
        return self.apply_A(self.sample_x(u, rng))

    def batch_grad_and_x(self, y, r, streams: RngStreams):
        """Batched dual gradient together with the batched inner maximiser.

        Returns ``(mean_l A xtilde_l, mean_l xtilde_l)``; the same samples
        feed both, which is what primal recovery by averaging requires.
        """
        if r < 1:
            raise ValueError("batch size must be >= 1")
        u = self.apply_At(np.asarray(y, dtype=float))
        acc = np.zeros(self.primal.dim)
        for l in range(r):
            acc += self.sample_x(u, streams.generator(l))
        x_mean = acc / r
        return self.apply_A(x_mean), x_mean


# ---------------------------------------------------------------------------
# operations


def eval_grad(oracle: FirstOrderOracle, x: np.ndarray) -> np.ndarray:
    """Exact gradient of ``oracle`` at ``x``; increments ``grad_calls``."""
    return oracle.eval_grad(x)


def sample_stoch_grad(oracle: StochasticGradientOracle, x, rng_stream) -> np.ndarray:
    """One stochastic gradient sample drawn from ``rng_stream``.

    ``rng_stream`` must be the generator derived from (run seed, iteration,
    sample index); the same stream always reproduces the same sample.
    """
    return oracle.sample(x, rng_stream)


def batch_grad(oracle, x_or_y, r: int, streams: RngStreams) -> np.ndarray:
    """Mean of ``r`` independent samples; one sub-stream per sample.

    Works for both the primal :class:`StochasticGradientOracle` (returns a
    batched gradient of ``f``) and the :class:`DualOracle` (returns a
    batched dual gradient ``A xtilde``).
    """
    if r < 1:
        raise ValueError("batch size must be >= 1")
    if isinstance(oracle, DualOracle):
        g, _ = oracle.batch_grad_and_x(x_or_y, r, streams)
        return g
    return oracle.batch(x_or_y, r, streams)


def dual_from_primal(primal: FirstOrderOracle, A, argmax_solver,
                     noise: NoiseSpec | None = None, **kwargs) -> DualOracle:
    """Construct the dual oracle of a strongly convex primal under ``A``.

    Rejects ``primal.mu == 0`` (the dual gradient is Lipschitz only for a
    strongly convex primal).
    """
    return DualOracle(primal, A, argmax_solver, noise=noise, **kwargs)
