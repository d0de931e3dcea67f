"""Configuration-driven experiment runner.

Subcommands::

    optdec run <config.json> [--out DIR] [--seed S]
    optdec gen-topology --kind K --m M [--p P] [--seed S] [--out DIR]
    optdec sweep <config.json> --param P --values v1,v2,... [--out DIR]

``run`` executes one configured solve and writes ``<hash>.trace.csv`` and
``<hash>.summary.json`` named by the config hash; identical (config, seed)
pairs produce byte-identical files.  ``sweep`` re-runs a base config over
one swept parameter and writes an aggregated CSV of final metrics.  The
output directory is ``--out``, else ``$OPTDEC_OUT``, else the current
directory.  Exit codes: 0 ok, 2 config error, 3 runtime error/divergence.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from .dual import (DivergenceError, RegularizedDual, ac_sa, restarted_rrma,
                   rrma_ac_sa2, spdstm, sstm_sc, sstm_sc_batch_rule,
                   default_rrma_lambda)
from .network import Topology, laplacian, chi, lift_problem, run_distributed
from .oracles import NoiseSpec, RngStreams, dual_from_primal
from .primal import build_penalty, sstm, stm, stm_ips
from .problems import (load_cost_csv, load_measures_csv, min_norm_dual_solution,
                       quadratic_problem, random_quadratic, barycenter_problem)
from .schedules import next_alpha_spdstm, next_alpha_stm
from .trace import RunTrace, summary_from_trace

METHODS = ("stm", "stm_ips", "sstm", "spdstm", "sstm_sc", "ac_sa", "rrma",
           "restarted_rrma")
PROBLEM_KINDS = ("quadratic", "consensus_quadratic", "penalty", "barycenter", "custom")
TOPOLOGY_KINDS = ("ring", "path", "star", "complete", "erdos_renyi")
DECENTRALIZED_KINDS = ("consensus_quadratic", "barycenter")
SWEEP_PARAMS = ("eps", "sigma", "m", "chi-topology", "N")


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# config schema


_TOP_KEYS = {"method", "problem", "noise", "eps", "beta", "N", "seed", "constants"}
_NOISE_KEYS = {"delta", "sigma", "kind"}
_CONSTANT_KEYS = {"C", "C_hat", "step_factor", "L_tilde_factor", "lambda",
                  "inner_T", "m_iters", "R_y", "stop_gap", "stop_grad_norm",
                  "metric_every", "max_N"}
_PROBLEM_KEYS = {
    "quadratic": {"kind", "dim", "cond", "b_scale"},
    "penalty": {"kind", "dim", "cond", "m_rows", "b_scale"},
    "consensus_quadratic": {"kind", "n", "cond", "topology", "spread"},
    "barycenter": {"kind", "measures", "cost", "mu", "topology"},
    "custom": {"kind", "Q_csv", "b_csv", "A_csv"},
}
_TOPOLOGY_INLINE_KEYS = {"kind", "m", "p"}


def _reject_unknown(obj: dict, allowed: set, where: str):
    unknown = set(obj) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")


def validate_config(cfg: dict) -> dict:
    """Schema-check a run config and fill defaults; raises ConfigError."""
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    _reject_unknown(cfg, _TOP_KEYS, "config")
    out = {
        "method": cfg.get("method"),
        "problem": cfg.get("problem"),
        "noise": dict(cfg.get("noise") or {}),
        "eps": float(cfg.get("eps", 1e-3)),
        "beta": float(cfg.get("beta", 0.1)),
        "N": cfg.get("N", "auto"),
        "seed": int(cfg.get("seed", 0)),
        "constants": dict(cfg.get("constants") or {}),
    }
    if out["method"] not in METHODS:
        raise ConfigError(f"method must be one of {METHODS}, got {out['method']!r}")
    problem = out["problem"]
    if not isinstance(problem, dict) or problem.get("kind") not in PROBLEM_KINDS:
        raise ConfigError(f"problem.kind must be one of {PROBLEM_KINDS}")
    kind = problem["kind"]
    _reject_unknown(problem, _PROBLEM_KEYS[kind], f"problem ({kind})")
    _reject_unknown(out["noise"], _NOISE_KEYS, "noise")
    _reject_unknown(out["constants"], _CONSTANT_KEYS, "constants")
    if out["N"] != "auto" and (not isinstance(out["N"], int) or out["N"] < 0):
        raise ConfigError("N must be a non-negative integer or \"auto\"")
    if out["eps"] <= 0 or not (0 < out["beta"] < 1):
        raise ConfigError("need eps > 0 and beta in (0, 1)")

    if kind in DECENTRALIZED_KINDS:
        if out["method"] not in ("spdstm", "sstm_sc", "restarted_rrma"):
            raise ConfigError(f"method {out['method']} cannot run a decentralized problem")
        if "topology" not in problem or problem["topology"] is None:
            raise ConfigError(f"problem kind {kind!r} requires a topology")
        topo = problem["topology"]
        if isinstance(topo, dict):
            _reject_unknown(topo, _TOPOLOGY_INLINE_KEYS, "problem.topology")
            if topo.get("kind") not in TOPOLOGY_KINDS:
                raise ConfigError(f"topology.kind must be one of {TOPOLOGY_KINDS}")
        elif not isinstance(topo, str):
            raise ConfigError("topology must be a file path or an inline spec")
    elif out["method"] in ("stm", "sstm") and kind not in ("quadratic", "custom"):
        raise ConfigError(f"method {out['method']} expects a quadratic or custom problem")
    elif out["method"] in ("stm_ips",) and kind not in ("penalty", "custom"):
        raise ConfigError("stm_ips expects a penalty (or custom + A) problem")
    elif out["method"] in ("spdstm", "sstm_sc", "ac_sa", "rrma", "restarted_rrma") \
            and kind not in ("penalty", "custom") + DECENTRALIZED_KINDS:
        raise ConfigError(f"method {out['method']} needs an affinely constrained problem")
    return out


def config_hash(cfg: dict) -> str:
    canon = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# problem construction


def _resolve_topology(spec, seed) -> Topology:
    if isinstance(spec, str):
        return Topology.from_json(Path(spec).read_text())
    kind, m = spec["kind"], int(spec["m"])
    if kind == "erdos_renyi":
        return Topology.erdos_renyi(m, float(spec.get("p", 0.5)),
                                    np.random.default_rng((seed, 7)))
    return getattr(Topology, kind)(m)


def _build_quadratic(problem, seed):
    rng = RngStreams(seed).generator(0)
    qp = random_quadratic(int(problem.get("dim", 10)), float(problem.get("cond", 10.0)),
                          rng, b_scale=float(problem.get("b_scale", 1.0)))
    x0 = RngStreams(seed).generator(1).standard_normal(qp.Q.shape[0])
    return qp, x0


def _build_custom(problem):
    Q = np.atleast_2d(np.loadtxt(problem["Q_csv"], delimiter=","))
    b = np.atleast_1d(np.loadtxt(problem["b_csv"], delimiter=","))
    qp = quadratic_problem(Q, b)
    A = None
    if problem.get("A_csv"):
        A = np.atleast_2d(np.loadtxt(problem["A_csv"], delimiter=","))
    return qp, A


def _build_constraint(problem, dim, seed):
    m_rows = int(problem.get("m_rows", max(1, dim // 2)))
    rng = RngStreams(seed).generator(2)
    return rng.standard_normal((m_rows, dim))


def _build_consensus(problem, seed):
    topo_spec = problem["topology"]
    topo = _resolve_topology(topo_spec, seed)
    n = int(problem.get("n", 2))
    cond = float(problem.get("cond", 1.0))
    spread = float(problem.get("spread", 1.0))
    rng = RngStreams(seed).generator(3)
    locals_ = []
    for k in range(topo.m):
        if cond == 1.0:
            qp = quadratic_problem(np.eye(n), spread * rng.standard_normal(n))
        else:
            qp = random_quadratic(n, cond, rng, b_scale=spread)
        o = qp.oracle()
        o.x_star = qp.x_star
        locals_.append(o)
    return lift_problem(locals_, topo, n), topo


def _noise_spec(noise_cfg) -> NoiseSpec:
    if not noise_cfg:
        return NoiseSpec(0.0, 0.0, "none")
    return NoiseSpec(float(noise_cfg.get("delta", 0.0)),
                     float(noise_cfg.get("sigma", 0.0)),
                     noise_cfg.get("kind", "gaussian"))


def _auto_N_gap_certificate(R0, L, eps, factor=2.0, max_N=500_000):
    A = 0.0
    for k in range(1, max_N + 1):
        _, A = next_alpha_stm(A, L, 0.0, factor=factor)
        if 1.5 * R0 * R0 / A <= eps:
            return k
    return max_N


# ---------------------------------------------------------------------------
# run execution


def execute_run(cfg: dict):
    """Run a validated config; returns (trace, summary)."""
    method = cfg["method"]
    problem = cfg["problem"]
    kind = problem["kind"]
    seed = cfg["seed"]
    eps, beta = cfg["eps"], cfg["beta"]
    consts = cfg["constants"]
    noise = _noise_spec(cfg["noise"])
    meta = {"config_hash": config_hash(cfg), "seed": seed, "version": "optdec-0.1.0"}
    extra: dict = {}

    if kind in DECENTRALIZED_KINDS:
        if kind == "consensus_quadratic":
            instance, topo = _build_consensus(problem, seed)
        else:
            measures = load_measures_csv(problem["measures"])
            cost = load_cost_csv(problem["cost"])
            topo = _resolve_topology(problem["topology"], seed)
            instance = barycenter_problem(measures, cost, float(problem["mu"]), topo)
        run_cfg = {
            "N": None if cfg["N"] == "auto" else cfg["N"],
            "eps": eps, "beta": beta, "seed": seed,
            "noise": None if noise.silent and noise.kind == "none" else noise,
            "C": float(consts.get("C", 1.0)), "C_hat": float(consts.get("C_hat", 1.0)),
            "metric_every": int(consts.get("metric_every", 1)),
            "stop_gap": consts.get("stop_gap"),
            "stop_grad_norm": consts.get("stop_grad_norm"),
            "max_N": int(consts.get("max_N", 200_000)),
            "R_y": consts.get("R_y"),
        }
        x_nodes, trace, comm = run_distributed(method, instance, run_cfg)
        trace.metadata.update(meta)
        extra = {
            "chi": chi(laplacian(topo)),
            "m": topo.m,
            "consensus_residual": float(np.linalg.norm(instance.pair.sqrtW @ x_nodes.reshape(-1))),
        }
        return trace, {**summary_from_trace(trace), **extra}

    # single-machine problems
    if kind == "custom":
        qp, A = _build_custom(problem)
        x0 = RngStreams(seed).generator(1).standard_normal(qp.Q.shape[0])
    else:
        qp, x0 = _build_quadratic(problem, seed)
        A = _build_constraint(problem, qp.Q.shape[0], seed) if kind == "penalty" else None

    oracle = qp.oracle()

    if method in ("stm", "sstm"):
        N = cfg["N"]
        if N == "auto":
            R0 = float(np.linalg.norm(x0 - qp.x_star))
            N = _auto_N_gap_certificate(R0, oracle.L, eps,
                                        factor=float(consts.get("step_factor", 2.0)))
        if method == "stm":
            x, trace = stm(oracle, x0, N, f_star=qp.f_star, x_star=qp.x_star,
                           step_factor=float(consts.get("step_factor", 2.0)), metadata=meta)
        else:
            from .oracles import StochasticGradientOracle
            stoch = StochasticGradientOracle(oracle, noise)
            x, trace = sstm(stoch, x0, N, eps, beta, seed=seed,
                            step_factor=float(consts.get("step_factor", 2.0)),
                            f_star=qp.f_star, x_star=qp.x_star, metadata=meta)
        return trace, summary_from_trace(trace)

    if A is None:
        raise ConfigError(f"method {method} needs a constraint matrix")

    y_star, x_c = min_norm_dual_solution(qp.Q, qp.b, A)
    R_y = float(consts.get("R_y", max(np.linalg.norm(y_star), 1e-12)))

    if method == "stm_ips":
        pen = build_penalty(oracle, A, R_y, eps)
        M = qp.Q + 2.0 * pen.coeff * pen.AtA
        x_F = np.linalg.solve(M, qp.b)
        F_star = pen.F_value(x_F)
        N = cfg["N"]
        if N == "auto":
            R0 = float(np.linalg.norm(x0 - x_F))
            N = _auto_N_gap_certificate(R0, oracle.L, eps)
        x, trace = stm_ips(pen, x0, N, inner_T=consts.get("inner_T"),
                           F_star=F_star, x_star=x_F, metadata=meta)
        trace.metadata["R_y"] = format(R_y, ".17g")
        return trace, summary_from_trace(trace)

    dual = dual_from_primal(oracle, A, qp.conjugate_argmax, noise=noise)
    if method == "spdstm":
        N = cfg["N"]
        if N == "auto":
            A_run, k = 0.0, 0
            L_t = float(consts.get("L_tilde_factor", 2.0)) * dual.L_psi
            while 1.5 * R_y * R_y / max(A_run, 1e-300) > eps and k < 500_000:
                k += 1
                _, A_run = next_alpha_spdstm(A_run, L_t)
            N = k
        y, x, trace = spdstm(dual, N, eps, beta, C_hat=float(consts.get("C_hat", 1.0)),
                             L_tilde_factor=float(consts.get("L_tilde_factor", 2.0)),
                             seed=seed, metric_every=int(consts.get("metric_every", 1)),
                             y_star_norm_estimate=R_y, metadata=meta)
    elif method == "sstm_sc":
        N = cfg["N"]
        if N == "auto":
            N = 50 + int(math.ceil(math.sqrt(dual.L_psi / dual.mu_psi)
                                   * math.log(max(dual.L_psi * R_y ** 2 / eps, 2.0))))
        rule = sstm_sc_batch_rule(dual, N, eps, beta, float(consts.get("C", 1.0)))
        y, trace = sstm_sc(dual, np.zeros(dual.dual_dim), N, rule, seed=seed,
                           metric_every=int(consts.get("metric_every", 1)), metadata=meta)
    elif method == "restarted_rrma":
        y, trace = restarted_rrma(dual, np.zeros(dual.dual_dim), eps, beta, R_y=R_y,
                                  C=float(consts.get("C", 1.0)), seed=seed, metadata=meta)
    elif method in ("ac_sa", "rrma"):
        m_iters = int(consts.get("m_iters", 100 if cfg["N"] == "auto" else cfg["N"]))
        lam = float(consts.get("lambda", default_rrma_lambda(dual.L_psi, max(m_iters, 2))))
        streams = RngStreams(seed)
        if method == "ac_sa":
            obj = RegularizedDual(dual, lam, np.zeros(dual.dual_dim))
            y = ac_sa(obj, np.zeros(dual.dual_dim), m_iters, streams=streams)
        else:
            y = rrma_ac_sa2(dual, np.zeros(dual.dual_dim), m_iters, lam, streams=streams)
        trace = RunTrace(meta)
        gn = float(np.linalg.norm(dual.A @ dual.x_exact(dual.A.T @ y)))
        trace.record(m_iters, 0.0, dual.counter, grad_norm=gn)
    else:  # pragma: no cover
        raise ConfigError(f"unhandled method {method}")
    summary = summary_from_trace(trace)
    summary["R_y"] = R_y
    return trace, summary


# ---------------------------------------------------------------------------
# sweep


def apply_sweep_value(cfg: dict, param: str, value: str) -> dict:
    out = json.loads(json.dumps(cfg))  # deep copy
    if param == "eps":
        out["eps"] = float(value)
    elif param == "sigma":
        out.setdefault("noise", {})
        out["noise"]["sigma"] = float(value)
    elif param == "N":
        out["N"] = int(value)
    elif param == "m":
        topo = out["problem"].get("topology")
        if not isinstance(topo, dict):
            raise ConfigError("m sweep needs an inline topology spec")
        topo["m"] = int(value)
    elif param == "chi-topology":
        topo = out["problem"].get("topology")
        if not isinstance(topo, dict):
            raise ConfigError("chi-topology sweep needs an inline topology spec")
        if value not in TOPOLOGY_KINDS:
            raise ConfigError(f"unknown topology kind {value!r}")
        topo["kind"] = value
    else:
        raise ConfigError(f"sweep param must be one of {SWEEP_PARAMS}")
    return out


_SWEEP_COLUMNS = ("param", "value", "iterations", "final_f_gap", "final_dual_gap",
                  "final_grad_norm", "final_constraint_norm", "grad_calls",
                  "stoch_samples", "comm_rounds", "chi")


def run_sweep(cfg: dict, param: str, values: list[str]):
    rows = []
    for value in values:
        sub = validate_config(apply_sweep_value(cfg, param, value))
        _, summary = execute_run(sub)
        rows.append({
            "param": param,
            "value": value,
            "iterations": summary.get("iterations"),
            "final_f_gap": summary.get("final_f_gap"),
            "final_dual_gap": summary.get("final_dual_gap"),
            "final_grad_norm": summary.get("final_grad_norm"),
            "final_constraint_norm": summary.get("final_constraint_norm"),
            "grad_calls": summary.get("grad_calls"),
            "stoch_samples": summary.get("stoch_samples"),
            "comm_rounds": summary.get("comm_rounds"),
            "chi": summary.get("chi"),
        })
    return rows


def sweep_csv_text(rows) -> str:
    def fmt(v):
        if v is None:
            return ""
        if isinstance(v, float):
            return format(v, ".17g")
        return str(v)

    lines = [",".join(_SWEEP_COLUMNS)]
    for row in rows:
        lines.append(",".join(fmt(row[c]) for c in _SWEEP_COLUMNS))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# entry points


def _out_dir(arg) -> Path:
    out = Path(arg or os.environ.get("OPTDEC_OUT") or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_config_file(path) -> dict:
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    return raw


def cmd_run(args) -> int:
    try:
        raw = _load_config_file(args.config)
        if args.seed is not None:
            raw["seed"] = args.seed
        cfg = validate_config(raw)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    out = _out_dir(args.out)
    h = config_hash(cfg)
    try:
        trace, summary = execute_run(cfg)
    except DivergenceError as exc:
        if exc.trace is not None:
            exc.trace.metadata.setdefault("config_hash", h)
            exc.trace.to_csv(out / f"{h}.trace.csv")
        print(f"runtime error: {exc}", file=sys.stderr)
        return 3
    except (RuntimeError, np.linalg.LinAlgError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 3
    trace.to_csv(out / f"{h}.trace.csv")
    (out / f"{h}.summary.json").write_text(
        json.dumps(summary, sort_keys=True, indent=1, default=float) + "\n")
    print(out / f"{h}.summary.json")
    return 0


def cmd_gen_topology(args) -> int:
    if args.kind not in TOPOLOGY_KINDS:
        print(f"config error: unknown kind {args.kind!r}", file=sys.stderr)
        return 2
    if args.m < 2:
        print("config error: need m >= 2", file=sys.stderr)
        return 2
    try:
        if args.kind == "erdos_renyi":
            topo = Topology.erdos_renyi(args.m, args.p, np.random.default_rng(args.seed))
        else:
            topo = getattr(Topology, args.kind)(args.m)
    except RuntimeError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    out = _out_dir(args.out)
    path = out / f"topology_{args.kind}_{args.m}.json"
    path.write_text(topo.to_json() + "\n")
    print(path)
    return 0


def cmd_sweep(args) -> int:
    try:
        raw = _load_config_file(args.config)
        if args.param not in SWEEP_PARAMS:
            raise ConfigError(f"sweep param must be one of {SWEEP_PARAMS}")
        values = [v for v in args.values.split(",") if v]
        if not values:
            raise ConfigError("no sweep values given")
        base = validate_config(apply_sweep_value(raw, args.param, values[0]))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    out = _out_dir(args.out)
    try:
        rows = run_sweep(raw, args.param, values)
    except DivergenceError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 3
    h = config_hash({"base": base, "param": args.param, "values": values})
    path = out / f"{h}.sweep.csv"
    path.write_text(sweep_csv_text(rows))
    print(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="optdec",
                                     description="accelerated (de)centralized convex solvers")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute one configured run")
    p_run.add_argument("config")
    p_run.add_argument("--out", default=None)
    p_run.add_argument("--seed", type=int, default=None)
    p_run.set_defaults(func=cmd_run)

    p_gen = sub.add_parser("gen-topology", help="write a topology JSON file")
    p_gen.add_argument("--kind", required=True)
    p_gen.add_argument("--m", type=int, required=True)
    p_gen.add_argument("--p", type=float, default=0.5)
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("--out", default=None)
    p_gen.set_defaults(func=cmd_gen_topology)

    p_sweep = sub.add_parser("sweep", help="run a config across one parameter")
    p_sweep.add_argument("config")
    p_sweep.add_argument("--param", required=True)
    p_sweep.add_argument("--values", required=True)
    p_sweep.add_argument("--out", default=None)
    p_sweep.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
