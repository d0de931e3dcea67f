import numpy as np
import pytest

from conftest import fd_grad, rel_err
from optdec import (NoiseSpec, RngStreams, Topology, build_distributed_dual,
                    chi, consensus_check, laplacian, laplacian_pair,
                    lift_laplacian, lift_problem, quadratic_problem,
                    run_distributed, sqrt_psd, stm)
from optdec.problems import constrained_quadratic_optimum


def consensus_instance(m, n, topo=None, seed=0, counter=None):
    rng = np.random.default_rng(seed)
    cs = rng.standard_normal((m, n))
    locals_ = []
    for k in range(m):
        qp = quadratic_problem(np.eye(n), cs[k])
        o = qp.oracle()
        o.x_star = qp.x_star
        locals_.append(o)
    topo = topo or Topology.ring(m)
    return lift_problem(locals_, topo, n), cs


# ---------------------------------------------------------------------------
# Laplacians and lifting


def test_laplacian_path():
    W = laplacian(Topology.path(3))
    assert np.array_equal(W, [[1, -1, 0], [-1, 2, -1], [0, -1, 1]])


def test_laplacian_complete_k3():
    W = laplacian(Topology.complete(3))
    assert np.array_equal(W, [[2, -1, -1], [-1, 2, -1], [-1, -1, 2]])


def test_laplacian_star():
    W = laplacian(Topology.star(4))
    expected = np.diag([3.0, 1.0, 1.0, 1.0])
    for j in range(1, 4):
        expected[0, j] = expected[j, 0] = -1.0
    assert np.array_equal(W, expected)


def test_laplacian_rejects_disconnected():
    topo = Topology.normalized(4, [(0, 1), (2, 3)])
    with pytest.raises(ValueError):
        laplacian(topo)


def test_laplacian_row_sums_zero():
    rng = np.random.default_rng(3)
    topo = Topology.erdos_renyi(6, 0.5, rng)
    W = laplacian(topo)
    assert np.allclose(W @ np.ones(6), 0.0)
    assert np.allclose(W, W.T)


def test_lift_swap_blocks():
    W = lift_laplacian(np.array([[0.0, 1.0], [1.0, 0.0]]), 2)
    x = np.array([1.0, 2.0, 3.0, 4.0])
    assert np.allclose(W @ x, [3.0, 4.0, 1.0, 2.0])


def test_lift_n1_is_identity_lift():
    W_bar = laplacian(Topology.ring(4))
    assert np.array_equal(lift_laplacian(W_bar, 1), W_bar)


def test_lift_kills_consensus_vectors():
    W_bar = laplacian(Topology.path(3))
    W = lift_laplacian(W_bar, 2)
    c = np.array([0.3, -0.8])
    assert np.allclose(W @ np.tile(c, 3), 0.0, atol=1e-14)


def test_sqrt_psd_diagonal():
    assert np.allclose(sqrt_psd(np.diag([0.0, 4.0])), np.diag([0.0, 2.0]))


def test_sqrt_psd_pair_laplacian():
    W = np.array([[1.0, -1.0], [-1.0, 1.0]])
    expected = W / np.sqrt(2.0)
    assert np.allclose(sqrt_psd(W), expected)


def test_sqrt_psd_reconstruction_random_laplacians():
    rng = np.random.default_rng(4)
    for m in (5, 15, 50):
        topo = Topology.erdos_renyi(m, 0.3, rng)
        W = laplacian(topo)
        S = sqrt_psd(W)
        err = np.linalg.norm(S @ S - W) / np.linalg.norm(W)
        assert err <= 1e-8


def test_sqrt_psd_rejects_indefinite():
    with pytest.raises(ValueError):
        sqrt_psd(np.diag([1.0, -0.5]))
    with pytest.raises(ValueError):
        sqrt_psd(np.array([[1.0, 2.0], [0.0, 1.0]]))


def test_chi_values():
    assert chi(laplacian(Topology.path(3))) == pytest.approx(3.0)
    assert chi(laplacian(Topology.complete(3))) == pytest.approx(1.0)
    assert chi(laplacian(Topology.star(5))) == pytest.approx(5.0)


def test_chi_invariant_under_relabeling():
    rng = np.random.default_rng(5)
    topo = Topology.erdos_renyi(6, 0.4, rng)
    W = laplacian(topo)
    perm = rng.permutation(6)
    W_perm = W[np.ix_(perm, perm)]
    assert chi(W_perm) == pytest.approx(chi(W))


def test_kernel_dimension_of_lift():
    pair = laplacian_pair(Topology.ring(4), 3)
    evals = np.linalg.eigvalsh(pair.W)
    nullity = int(np.sum(evals < 1e-10 * evals[-1]))
    assert nullity == 3  # one consensus direction per coordinate


# ---------------------------------------------------------------------------
# consensus checks


def test_consensus_check_identical_blocks():
    W = lift_laplacian(laplacian(Topology.complete(3)), 2)
    x = np.tile([1.0, -2.0], 3)
    assert consensus_check(x, W, 1e-12)


def test_consensus_check_distinct_blocks():
    W = lift_laplacian(laplacian(Topology.complete(2)), 2)
    x = np.array([0.0, 0.0, 1.0, 1.0])
    assert not consensus_check(x, W, 1e-6)


def test_consensus_check_sqrt_agrees():
    rng = np.random.default_rng(6)
    pair = laplacian_pair(Topology.ring(5), 2)
    for _ in range(100):
        x = rng.standard_normal(10)
        a = consensus_check(x, pair.W, 1e-8)
        b = consensus_check(x, pair.sqrtW, 1e-8)
        # the zero sets coincide: agreement up to tolerance scaling
        if np.linalg.norm(pair.W @ x) < 1e-10 or np.linalg.norm(pair.W @ x) > 1e-6:
            assert a == b


# ---------------------------------------------------------------------------
# lifted instances


def test_lift_problem_consensus_mean():
    inst, cs = consensus_instance(2, 1, topo=Topology.complete(2), seed=7)
    x_c, f_c = constrained_quadratic_optimum(
        np.eye(2) / 2.0, np.concatenate(cs) / 2.0, inst.pair.sqrtW)
    assert np.allclose(x_c, np.full(2, cs.mean()), atol=1e-10)


def test_lift_problem_stacked_constants():
    inst, _ = consensus_instance(4, 3)
    assert inst.stacked.L == pytest.approx(1.0 / 4.0)
    assert inst.stacked.mu == pytest.approx(1.0 / 4.0)


def test_lift_problem_gradient_matches_fd():
    inst, _ = consensus_instance(3, 2)
    rng = np.random.default_rng(8)
    x = rng.standard_normal(6)
    assert rel_err(inst.stacked.gradient(x), fd_grad(inst.stacked.value, x)) <= 1e-6


def test_lift_problem_consensus_point_in_kernel():
    inst, _ = consensus_instance(4, 2)
    x = np.tile([0.5, -1.5], 4)
    assert np.linalg.norm(inst.pair.sqrtW @ x) <= 1e-12


def test_single_node_rejected_for_dual():
    inst, cs = consensus_instance(1, 2, topo=Topology(1, ()))
    with pytest.raises(ValueError):
        build_distributed_dual(inst)
    # the degenerate instance is still solvable directly
    x, _ = stm(inst.locals[0], np.zeros(2), 60)
    assert np.allclose(x, cs[0], atol=1e-6)


# ---------------------------------------------------------------------------
# distributed dual oracle


def test_distributed_dual_two_rounds_per_gradient():
    inst, _ = consensus_instance(3, 2)
    dual = build_distributed_dual(inst)
    before = dual.comm.rounds
    dual.grad(np.zeros(6))
    assert dual.comm.rounds - before == 2
    assert inst.counter.comm_rounds == dual.comm.rounds


def test_distributed_dual_consensus_at_optimum():
    # minimiser of the lifted dual maps to a consensus primal point
    inst, cs = consensus_instance(2, 2, topo=Topology.complete(2), seed=9)
    dual = build_distributed_dual(inst)
    # closed-form solve of the dual: grad Psi(y) = sqrtW x(sqrtW y) = 0
    from optdec import sstm_sc
    y, _ = sstm_sc(dual, np.zeros(4), 80, metric_every=0)
    x = dual.x_exact(dual.A.T @ y)
    assert np.linalg.norm(inst.pair.sqrtW @ x) <= 1e-8
    assert np.allclose(x.reshape(2, 2), np.tile(cs.mean(axis=0), (2, 1)), atol=1e-6)


def test_distributed_dual_constant_on_kernel_cosets():
    inst, _ = consensus_instance(3, 2)
    dual = build_distributed_dual(inst)
    y = np.random.default_rng(10).standard_normal(6)
    shift = np.tile([1.0, -0.5], 3)  # consensus direction spans Ker(sqrtW)
    g1 = dual.A @ dual.x_exact(dual.A.T @ y)
    g2 = dual.A @ dual.x_exact(dual.A.T @ (y + shift))
    assert np.allclose(g1, g2, atol=1e-10)


def test_distributed_noise_transfer_scaling():
    # complete graph: the dual noise scale sqrt(lambda_max(W)) sigma_Phi is
    # near-tight for isotropic per-node noise (within factor 1.3)
    m, n = 6, 2
    inst, _ = consensus_instance(m, n, topo=Topology.complete(m))
    sigma_node = 0.7
    dual = build_distributed_dual(inst, NoiseSpec(0.0, sigma_node, "gaussian"))
    streams = RngStreams(11)
    y = np.zeros(m * n)
    u = dual.A.T @ y
    samples = np.array([dual.A @ dual.sample_x(u, streams.generator(t))
                        for t in range(4000)])
    emp_var = samples.var(axis=0).sum()
    sigma_phi = np.sqrt(m) * sigma_node
    bound = inst.pair.lambda_max * sigma_phi ** 2
    assert emp_var <= bound * 1.05
    assert emp_var >= bound / 1.3 ** 2


# ---------------------------------------------------------------------------
# distributed runs


def test_run_distributed_sstm_sc_reaches_consensus_mean():
    inst, cs = consensus_instance(4, 3)
    x_nodes, trace, comm = run_distributed(
        "sstm_sc", inst, {"eps": 1e-5, "stop_grad_norm": 1e-7, "max_N": 5000})
    mean = cs.mean(axis=0)
    assert np.abs(x_nodes - mean).max() <= 1e-3
    assert comm.rounds == trace.final["comm_rounds"]


def test_run_distributed_round_accounting():
    inst, _ = consensus_instance(3, 2)
    N = 17
    x_nodes, trace, comm = run_distributed("sstm_sc", inst, {"N": N, "metric_every": 0,
                                                             "recovery_batch": 1})
    # one gradient per iteration plus the defining one, 2 rounds each, plus
    # one recovery evaluation (2 rounds)
    assert comm.rounds == 2 * (N + 1) + 2


def test_metric_evaluations_are_free():
    # traces with and without per-iteration metrics count the same rounds
    N = 12
    inst_a, _ = consensus_instance(3, 2, seed=21)
    _, _, comm_a = run_distributed("spdstm", inst_a, {"N": N, "metric_every": 1})
    inst_b, _ = consensus_instance(3, 2, seed=21)
    _, _, comm_b = run_distributed("spdstm", inst_b, {"N": N, "metric_every": 0})
    assert comm_a.rounds == comm_b.rounds
    inst_c, _ = consensus_instance(3, 2, seed=21)
    _, tr_c, comm_c = run_distributed("sstm_sc", inst_c, {"N": N, "metric_every": 1})
    inst_d, _ = consensus_instance(3, 2, seed=21)
    _, _, comm_d = run_distributed("sstm_sc", inst_d, {"N": N, "metric_every": 0})
    assert comm_c.rounds == comm_d.rounds


def test_run_distributed_spdstm_barycenterless_quadratic():
    inst, cs = consensus_instance(3, 2, seed=12)
    x_nodes, trace, comm = run_distributed(
        "spdstm", inst, {"eps": 1e-4, "beta": 0.1, "metric_every": 0, "max_N": 4000})
    assert np.abs(x_nodes - cs.mean(axis=0)).max() <= 1e-2


def test_run_distributed_restarted_rrma():
    inst, cs = consensus_instance(3, 2, seed=13)
    x_nodes, trace, comm = run_distributed(
        "restarted_rrma", inst, {"eps": 1e-4, "beta": 0.1})
    assert np.abs(x_nodes - cs.mean(axis=0)).max() <= 1e-3


def test_run_distributed_rejects_unknown_keys():
    inst, _ = consensus_instance(3, 2)
    with pytest.raises(ValueError):
        run_distributed("sstm_sc", inst, {"bogus": 1})


def test_run_distributed_reproducible_rounds():
    cfg = {"N": 12, "eps": 0.1, "noise": NoiseSpec(0.0, 0.03), "seed": 5,
           "metric_every": 0}
    inst1, _ = consensus_instance(3, 2, seed=14)
    _, _, comm1 = run_distributed("sstm_sc", inst1, dict(cfg))
    inst2, _ = consensus_instance(3, 2, seed=14)
    _, _, comm2 = run_distributed("sstm_sc", inst2, dict(cfg))
    assert comm1.rounds == comm2.rounds


def test_chi_monotonicity_path_vs_complete():
    # the badly conditioned path topology needs more iterations than the
    # complete graph for the same gradient target
    iters = {}
    for name, topo in (("path", Topology.path(8)), ("complete", Topology.complete(8))):
        inst, _ = consensus_instance(8, 2, topo=topo, seed=15)
        _, trace, _ = run_distributed(
            "sstm_sc", inst, {"eps": 1e-4, "stop_grad_norm": 1e-5, "max_N": 20000})
        iters[name] = trace.final["iter"]
    assert iters["path"] >= 1.3 * iters["complete"]


def test_topology_rejects_self_loops_and_duplicates():
    with pytest.raises(ValueError):
        Topology(3, ((0, 0),))
    with pytest.raises(ValueError):
        Topology(3, ((0, 1), (1, 0)))
    with pytest.raises(ValueError):
        Topology(3, ((0, 5),))


def test_topology_json_round_trip():
    topo = Topology.ring(5)
    text = topo.to_json()
    assert '"m": 5' in text
    back = Topology.from_json(text)
    assert back == topo
