"""Consensus-constrained instances over graph Laplacians.

A decentralized problem ``min (1/m) sum_k f_k(x_k)  s.t.  x_1 = ... = x_m``
is encoded as the affinely constrained problem ``sqrt(W) x = 0`` where
``W = W_bar (x) I_n`` lifts the graph Laplacian blockwise.  The dual
oracle of the lifted problem evaluates blockwise local conjugate argmaxes
between two ``sqrt(W)`` multiplications; each multiplication is one
synchronous, lossless communication round and is counted.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .dual import restarted_rrma, spdstm, sstm_sc, sstm_sc_batch_rule
from .oracles import CallCounter, DualOracle, FirstOrderOracle, NoiseSpec, RngStreams

__all__ = [
    "Topology",
    "LaplacianPair",
    "DecentralizedInstance",
    "CommStats",
    "laplacian",
    "lift_laplacian",
    "sqrt_psd",
    "chi",
    "laplacian_pair",
    "consensus_check",
    "lift_problem",
    "build_distributed_dual",
    "run_distributed",
]


# ---------------------------------------------------------------------------
# topologies


@dataclass(frozen=True)
class Topology:
    """Undirected simple graph on nodes ``0..m-1``."""

    m: int
    edges: tuple

    def __post_init__(self):
        seen = set()
        for i, j in self.edges:
            if i == j:
                raise ValueError("self-loops are not allowed")
            if not (0 <= i < self.m and 0 <= j < self.m):
                raise ValueError("edge endpoint out of range")
            key = (min(i, j), max(i, j))
            if key in seen:
                raise ValueError("duplicate edge")
            seen.add(key)

    @property
    def connected(self) -> bool:
        if self.m == 1:
            return True
        adj = {i: [] for i in range(self.m)}
        for i, j in self.edges:
            adj[i].append(j)
            adj[j].append(i)
        seen = {0}
        stack = [0]
        while stack:
            for nb in adj[stack.pop()]:
                if nb not in seen:
                    seen.add(nb)
                    stack.append(nb)
        return len(seen) == self.m

    # -- constructors --------------------------------------------------------

    @staticmethod
    def normalized(m, edges) -> "Topology":
        return Topology(m, tuple(sorted((min(i, j), max(i, j)) for i, j in edges)))

    @staticmethod
    def ring(m: int) -> "Topology":
        if m < 3:
            raise ValueError("ring needs m >= 3")
        return Topology.normalized(m, [(i, (i + 1) % m) for i in range(m)])

    @staticmethod
    def path(m: int) -> "Topology":
        if m < 2:
            raise ValueError("path needs m >= 2")
        return Topology.normalized(m, [(i, i + 1) for i in range(m - 1)])

    @staticmethod
    def star(m: int) -> "Topology":
        if m < 2:
            raise ValueError("star needs m >= 2")
        return Topology.normalized(m, [(0, i) for i in range(1, m)])

    @staticmethod
    def complete(m: int) -> "Topology":
        if m < 2:
            raise ValueError("complete needs m >= 2")
        return Topology.normalized(m, [(i, j) for i in range(m) for j in range(i + 1, m)])

    @staticmethod
    def erdos_renyi(m: int, p: float, rng: np.random.Generator,
                    max_attempts: int = 10_000) -> "Topology":
        """Random graph resampled until connected; fails after ``max_attempts``."""
        if m < 2 or not (0.0 <= p <= 1.0):
            raise ValueError("need m >= 2 and p in [0, 1]")
        for _ in range(max_attempts):
            mask = rng.random((m, m)) < p
            edges = [(i, j) for i in range(m) for j in range(i + 1, m) if mask[i, j]]
            topo = Topology.normalized(m, edges)
            if topo.connected:
                return topo
        raise RuntimeError(f"no connected sample in {max_attempts} attempts (p={p})")

    # -- file format (1-indexed nodes) ----------------------------------------

    def to_json(self) -> str:
        payload = {"m": self.m, "edges": [[i + 1, j + 1] for i, j in self.edges]}
        return json.dumps(payload, sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "Topology":
        payload = json.loads(text)
        edges = [(i - 1, j - 1) for i, j in payload["edges"]]
        return Topology.normalized(int(payload["m"]), edges)


def laplacian(topology: Topology) -> np.ndarray:
    """Integer-valued graph Laplacian (degree on the diagonal, -1 per edge)."""
    if not topology.connected:
        raise ValueError("topology must be connected")
    W = np.zeros((topology.m, topology.m))
    for i, j in topology.edges:
        W[i, j] -= 1.0
        W[j, i] -= 1.0
        W[i, i] += 1.0
        W[j, j] += 1.0
    return W


def lift_laplacian(W_bar: np.ndarray, n: int) -> np.ndarray:
    """Blockwise lift ``W_bar (x) I_n`` acting on stacked per-node vectors."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return np.kron(np.asarray(W_bar, dtype=float), np.eye(n))


def sqrt_psd(W: np.ndarray, sym_tol: float = 1e-10) -> np.ndarray:
    """Symmetric PSD square root by dense eigendecomposition.

    Eigenvalues below ``1e-10 * lambda_max`` are zeroed (they define the
    kernel); a negative eigenvalue beyond that tolerance is rejected.
    """
    W = np.asarray(W, dtype=float)
    if np.max(np.abs(W - W.T)) > sym_tol * max(1.0, np.max(np.abs(W))):
        raise ValueError("matrix is not symmetric")
    evals, U = np.linalg.eigh((W + W.T) / 2.0)
    lam_max = float(evals[-1])
    if evals[0] < -1e-10 * max(1.0, lam_max):
        raise ValueError("matrix is not positive semidefinite")
    d = np.where(evals < 1e-10 * lam_max, 0.0, evals)
    return (U * np.sqrt(d)) @ U.T


def chi(M: np.ndarray) -> float:
    """Condition number ``lambda_max / lambda_min_plus`` of a PSD matrix."""
    evals = np.linalg.eigvalsh(np.asarray(M, dtype=float))
    lam_max = float(evals[-1])
    positive = evals[evals > 1e-10 * lam_max]
    return lam_max / float(positive[0])


@dataclass
class LaplacianPair:
    """Node Laplacian, its blockwise lift and the lift's square root."""

    W_bar: np.ndarray
    W: np.ndarray
    sqrtW: np.ndarray
    lambda_max: float
    lambda_min_plus: float
    chi: float


def laplacian_pair(topology: Topology, n: int) -> LaplacianPair:
    W_bar = laplacian(topology)
    W = lift_laplacian(W_bar, n)
    evals = np.linalg.eigvalsh(W_bar)
    lam_max = float(evals[-1])
    positive = evals[evals > 1e-10 * max(lam_max, 1e-300)]
    lam_min_plus = float(positive[0]) if positive.size else 0.0
    return LaplacianPair(
        W_bar=W_bar, W=W, sqrtW=sqrt_psd(W), lambda_max=lam_max,
        lambda_min_plus=lam_min_plus,
        chi=lam_max / lam_min_plus if lam_min_plus > 0 else math.inf)


def consensus_check(x_stacked, W, tol: float) -> bool:
    """True iff ``||W x|| <= tol * max(1, ||x||)``."""
    x = np.asarray(x_stacked, dtype=float)
    return float(np.linalg.norm(W @ x)) <= tol * max(1.0, float(np.linalg.norm(x)))


# ---------------------------------------------------------------------------
# lifted instances


class CommStats:
    """Synchronous communication accounting: one round per W/sqrt(W) product."""

    def __init__(self, payload_dim: int):
        self.rounds = 0
        self.per_round_payload = int(payload_dim)

    def tick(self):
        self.rounds += 1


class DecentralizedInstance:
    """Per-node objectives plus the consensus constraint ``sqrt(W) x = 0``.

    The stacked objective is ``f(x) = (1/m) sum_k f_k(x_k)``; it inherits
    ``L/m`` smoothness and ``mu/m`` strong convexity from the worst local
    constants.  ``local_argmax`` maps stacked dual inputs through the
    blockwise conjugate maximisers ``x_k(m u_k)``.
    """

    def __init__(self, locals_, topology: Topology, n: int, counter=None):
        if any(f.dim != n for f in locals_):
            raise ValueError("all local oracles must share dimension n")
        self.locals = list(locals_)
        self.topology = topology
        self.n = int(n)
        self.m = topology.m
        self.pair = laplacian_pair(topology, n)
        self.counter = counter if counter is not None else CallCounter()
        m = self.m

        def value(x):
            blocks = x.reshape(m, n)
            return sum(f.value(blocks[k]) for k, f in enumerate(self.locals)) / m

        def gradient(x):
            blocks = x.reshape(m, n)
            return np.concatenate(
                [np.asarray(f.gradient(blocks[k]), dtype=float) for k, f in enumerate(self.locals)]) / m

        L = max(f.L for f in self.locals) / m
        mu = min(f.mu for f in self.locals) / m
        self.stacked = FirstOrderOracle(m * n, value, gradient, L, mu, counter=self.counter)
        self.A = self.pair.sqrtW

    def local_argmax(self, u_stacked: np.ndarray) -> np.ndarray:
        blocks = u_stacked.reshape(self.m, self.n)
        out = np.empty_like(blocks)
        for k, f in enumerate(self.locals):
            out[k] = f.conjugate_argmax(self.m * blocks[k])
        return out.reshape(-1)

    def blocks(self, x_stacked) -> np.ndarray:
        return np.asarray(x_stacked, dtype=float).reshape(self.m, self.n)


def lift_problem(locals_, topology: Topology, n: int) -> DecentralizedInstance:
    """Stack per-node objectives into a consensus-constrained instance."""
    missing = [k for k, f in enumerate(locals_) if not hasattr(f, "conjugate_argmax")]
    if missing:
        from .primal import argmax_solver_via_stm
        for k in missing:
            locals_[k].conjugate_argmax = argmax_solver_via_stm(locals_[k])
    return DecentralizedInstance(locals_, topology, n)


class DistributedDualOracle(DualOracle):
    """Dual oracle of a lifted instance with communication accounting.

    One gradient evaluation is ``sqrt(W) x(sqrt(W) y)`` with blockwise
    local argmax solves in between: exactly two counted multiplications.
    Noise is applied per node block (scale ``sigma`` per node), so the
    stacked noise level is ``sqrt(m) sigma`` and the dual one picks up an
    extra ``sqrt(lambda_max(W))``.
    """

    def __init__(self, instance: DecentralizedInstance, noise: NoiseSpec | None = None):
        self.instance = instance
        self.comm = CommStats(instance.n)
        self.node_noise = noise if noise is not None else NoiseSpec(0.0, 0.0, "none")
        # per-node levels stack to sqrt(m) times the node level (norm-wise)
        stacked_noise = NoiseSpec(
            math.sqrt(instance.m) * self.node_noise.delta,
            math.sqrt(instance.m) * self.node_noise.sigma,
            self.node_noise.kind)
        super().__init__(instance.stacked, instance.pair.sqrtW,
                         instance.local_argmax, noise=stacked_noise,
                         counter=instance.counter)

    def _comm_mult(self, v):
        self.comm.tick()
        self.counter.comm_rounds += 1
        return self.A @ v

    def apply_A(self, v):
        return self._comm_mult(v)

    def apply_At(self, y):
        return self._comm_mult(y)

    def sample_x(self, u, rng):
        """Blockwise noisy local maximisers (independent noise per node)."""
        self.counter.stoch_samples += 1
        x = self.x_exact(u)
        if self.node_noise.silent:
            return x
        inst = self.instance
        blocks = x.reshape(inst.m, inst.n).copy()
        for k in range(inst.m):
            if self.node_noise.delta > 0:
                blocks[k] += self.node_noise.delta * self.bias_direction(blocks[k])
            blocks[k] += self.node_noise.sample_eta(inst.n, rng)
        return blocks.reshape(-1)


def build_distributed_dual(instance: DecentralizedInstance,
                           noise: NoiseSpec | None = None) -> DistributedDualOracle:
    """Dual oracle whose gradient costs two counted ``sqrt(W)`` rounds."""
    return DistributedDualOracle(instance, noise)


_RUN_DEFAULTS = {
    "N": None,
    "eps": 1e-4,
    "beta": 0.1,
    "seed": 0,
    "noise": None,
    "C": 1.0,
    "C_hat": 1.0,
    "metric_every": 1,
    "recovery_batch": 1,
    "stop_grad_norm": None,
    "stop_gap": None,
    "max_N": 200_000,
    "R_y": None,
}


def run_distributed(method: str, instance: DecentralizedInstance, config: dict):
    """Run a dual solver on the lifted instance over the simulated network.

    ``method`` is one of ``spdstm``, ``sstm_sc``, ``restarted_rrma``.
    Returns ``(x_per_node, trace, comm_stats)`` where ``x_per_node`` has
    one row per node.  Every counted communication round is one ``W`` or
    ``sqrt(W)`` multiplication; metric evaluations are computed centrally
    by the simulator and are free.
    """
    cfg = dict(_RUN_DEFAULTS)
    unknown = set(config) - set(cfg)
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    cfg.update(config)

    dual = build_distributed_dual(instance, cfg["noise"])
    instance.counter.reset()
    seed = cfg["seed"]
    eps, beta = cfg["eps"], cfg["beta"]
    R_y = cfg["R_y"] if cfg["R_y"] is not None else _dual_norm_bound(instance)

    if method == "sstm_sc":
        N = cfg["N"] if cfg["N"] is not None else _auto_N_sstm_sc(dual, eps, R_y, cfg["max_N"])
        rule = sstm_sc_batch_rule(dual, N, eps, beta, cfg["C"])
        y0 = np.zeros(dual.dual_dim)
        y, trace = sstm_sc(dual, y0, N, rule, seed=seed,
                           metric_every=cfg["metric_every"],
                           stop_grad_norm=cfg["stop_grad_norm"])
        x = _recover(dual, y, cfg["recovery_batch"], seed)
    elif method == "spdstm":
        N = cfg["N"] if cfg["N"] is not None else _auto_N_spdstm(dual, eps, R_y, cfg["max_N"])
        y, x, trace = spdstm(dual, N, eps, beta, C_hat=cfg["C_hat"], seed=seed,
                             metric_every=cfg["metric_every"],
                             y_star_norm_estimate=R_y, stop_gap=cfg["stop_gap"])
    elif method == "restarted_rrma":
        y0 = np.zeros(dual.dual_dim)
        y, trace = restarted_rrma(dual, y0, eps, beta, R_y=R_y, C=cfg["C"], seed=seed)
        x = _recover(dual, y, cfg["recovery_batch"], seed)
    else:
        raise ValueError(f"unknown distributed method {method!r}")

    # closing row: primal recovery rounds happen after the last iteration
    final = trace.final
    trace.record(final.get("iter", 0), final.get("A_k", 0.0), instance.counter)
    return instance.blocks(x), trace, dual.comm


def _recover(dual: DistributedDualOracle, y, r: int, seed: int):
    from .dual import primal_recovery
    return primal_recovery(dual, y, r, RngStreams(seed).child(999_999))


def _dual_norm_bound(instance: DecentralizedInstance) -> float:
    """Bound on the minimal dual solution norm from local gradients at consensus.

    Uses ``||y*||^2 <= ||grad f(x*)||^2 / lambda_min_plus`` with the
    stacked gradient evaluated at the consensus average of the local
    minimisers (a cheap over-estimate adequate for batch sizing).
    """
    # crude stationary point estimate: average of local argmins when known,
    # otherwise the origin
    n, m = instance.n, instance.m
    centers = []
    for f in instance.locals:
        if hasattr(f, "x_star"):
            centers.append(np.asarray(f.x_star, dtype=float))
    center = np.mean(centers, axis=0) if centers else np.zeros(n)
    x = np.tile(center, m)
    g = instance.stacked.gradient(x)
    lam = instance.pair.lambda_min_plus
    return max(1e-12, float(np.linalg.norm(g)) / math.sqrt(max(lam, 1e-300)))


def _auto_N_sstm_sc(dual, eps, R_y, max_N):
    """Iterations until the geometric certificate reaches the gradient target."""
    from .schedules import next_alpha_strongly_convex
    target = (eps / max(R_y, 1e-12)) ** 2
    A = 1.0 / dual.L_psi
    R0sq = R_y ** 2
    for k in range(1, max_N + 1):
        _, A = next_alpha_strongly_convex(A, dual.L_psi, dual.mu_psi)
        if dual.L_psi ** 2 * R0sq * dual.L_psi / A <= target:
            return k
    return max_N


def _auto_N_spdstm(dual, eps, R_y, max_N):
    """Iterations until ``3 R_y^2 / (2 A_N)`` reaches the gap target."""
    from .schedules import next_alpha_spdstm
    A = 0.0
    for k in range(1, max_N + 1):
        _, A = next_alpha_spdstm(A, 2.0 * dual.L_psi)
        if 1.5 * R_y ** 2 / A <= eps:
            return k
    return max_N
