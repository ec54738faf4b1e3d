"""Command-line front end: ``aggbounds <command> [options]``.

Commands
  build                       state/partition counts, state table and partition map
  solve exact|ublp|lblp|rlp|ib|lp
                              value CSVs (exact, RLP: per state/partition; IB: one column per v_j)
  policy extract|eval         greedy policy CSV from a value source; evaluate a policy CSV
  bounds compare              per-partition w*(i), min/max V* over the block, v*(i)
  simulate                    Monte Carlo run of a named policy or a policy CSV
  verify                      model and bound invariant suites
  oracle nlp                  brute-force disjunctive lower bound vs the lower-bound LP

Every run writes ``manifest.json`` into ``--out`` listing the command, inputs,
the sha256 of each artifact and wall-clock timings. Exit status: 0 success,
2 invalid input, 1 numerical failure or violated bound ordering.

A generic MDP can be given to ``solve exact`` and ``policy eval`` with
``--mdp FILE`` instead of ``--config``. The JSON document holds::

    {"discount": 0.9,
     "num_states": 2,                      # optional, inferred from pairs
     "pairs": [{"state": 0, "action": 0, "reward": 1.0,
                "transition": {"0": 0.5, "1": 0.5}}, ...]}

with pairs listed grouped by state. ``solve lp --lp FILE`` reads the plain
text LP format written by :meth:`LpProblem.to_text`.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from .aggregation import solve_iterated_bellman_lp, solve_nlp_bruteforce, solve_rlp, write_aggregate_csv
from .errors import AggBoundsError, NumericalError, PolicyError, StructureError, ValidationError
from .mdp_core import (Mdp, greedy_policy, policy_evaluation, porteus_bound, read_policy_csv,
                       value_iteration, write_policy_csv, write_values_csv)
from .patrol_model import (PatrolConfig, build_lblp, build_patrol_mdp, build_reward_partitioning,
                           build_ublp, enumerate_states, lifted_greedy_policy, num_partitions_formula,
                           num_states_formula)
from .sim_harness import simulate
from .solver import LpProblem, solve_lp

LARGE_STATES = 200_000
BYTES_PER_STATE = 400  # rough peak for the full model build and value iteration


class BoundViolation(AggBoundsError):
    pass


class Run:
    """Collects artifacts and timings for the manifest."""

    def __init__(self, args):
        self.args = args
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.artifacts: list[Path] = []
        self.timings: dict = {}
        self._t = time.perf_counter()

    def path(self, name: str) -> Path:
        p = self.out / name
        self.artifacts.append(p)
        return p

    def lap(self, label: str):
        now = time.perf_counter()
        self.timings[label] = round(now - self._t, 6)
        self._t = now

    def write_json(self, name: str, doc):
        with open(self.path(name), "w") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True, default=_jsonable)
            fh.write("\n")

    def manifest(self, argv):
        params = {k: v for k, v in vars(self.args).items() if k not in ("func", "out")}
        doc = {
            "command": " ".join(argv),
            "config": params.pop("config", None),
            "parameters": params,
            "seed": params.get("seed"),
            "output_dir": str(self.out),
            "artifacts": {p.name: _sha256(p) for p in self.artifacts if p.exists()},
            "timings_s": self.timings,
        }
        with open(self.out / "manifest.json", "w") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True, default=_jsonable)
            fh.write("\n")


def _jsonable(x):
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, Path):
        return str(x)
    raise TypeError(type(x).__name__)


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _config(args) -> PatrolConfig:
    if not args.config:
        raise ValidationError("--config is required for this command")
    return PatrolConfig.load(args.config)


def _guard_size(cfg: PatrolConfig, args, what: str):
    n = num_states_formula(cfg)
    if n > LARGE_STATES:
        est = n * BYTES_PER_STATE / 2 ** 30
        print(f"{what}: {n} states, estimated peak memory {est:.1f} GiB", file=sys.stderr)
        if not args.allow_large:
            raise ValidationError(f"{what}: {n} states exceed the limit {LARGE_STATES}; "
                                  "pass --allow-large to proceed")


def _values_csv(run: Run, name: str, values, per_partition: bool):
    path = run.path(name)
    if per_partition:
        write_aggregate_csv(path, values)
    else:
        write_values_csv(path, values)


# commands ---------------------------------------------------------------------------

def cmd_build(args, run: Run):
    cfg = _config(args)
    space = enumerate_states(cfg)
    rp = build_reward_partitioning(cfg, space)
    run.lap("enumerate")
    stats = {"num_states": space.size, "num_partitions": rp.num_partitions,
             "num_states_formula": num_states_formula(cfg),
             "num_partitions_formula": num_partitions_formula(cfg)}
    if space.size <= LARGE_STATES or args.allow_large:
        pm = build_patrol_mdp(cfg, space)
        run.lap("build_mdp")
        stats["num_pairs"] = pm.mdp.num_pairs
        stats["nnz"] = int(pm.mdp.P.nnz)
        stats["max_row_sum_error"] = float(np.abs(np.asarray(pm.mdp.P.sum(axis=1)).ravel() - 1).max())
    delays = space.delays
    table = np.column_stack([np.arange(space.size), space.loc, space.direction, space.dwell, delays,
                             rp.partitioning.partition_of])
    header = ["state_index", "loc", "direction", "dwell"] + [f"tau_{s}" for s in cfg.stations] + ["partition_index"]
    np.savetxt(run.path("states.csv"), table, fmt="%d", delimiter=",", header=",".join(header), comments="")
    keys = rp.keys
    with open(run.path("partitions.csv"), "w") as fh:
        fh.write("partition_index,loc,direction,dwell," + ",".join(f"A_{s}" for s in cfg.stations)
                 + ",max_delay,size\n")
        for i, k in enumerate(keys):
            fh.write(",".join(map(str, (i, k.loc, k.direction, k.dwell, *k.alerts, k.max_delay,
                                        rp.partitioning.sizes[i]))) + "\n")
    run.write_json("stats.json", stats)
    for k, v in stats.items():
        print(f"{k}: {v}")


def _load_mdp(args) -> tuple[Mdp, bool]:
    if args.mdp:
        return Mdp.load(args.mdp), False
    cfg = _config(args)
    _guard_size(cfg, args, "full model")
    return build_patrol_mdp(cfg).mdp, True


def cmd_solve(args, run: Run):
    kind = args.kind
    if kind == "lp":
        if not args.lp:
            raise ValidationError("solve lp needs --lp FILE")
        problem = LpProblem.from_text(Path(args.lp).read_text())
        sol = solve_lp(problem)
        run.lap("solve")
        run.write_json("lp_solution.json", {"status": sol.status, "objective": sol.objective_value,
                                            "primal": None if sol.primal is None else sol.primal.tolist(),
                                            "dual": None if sol.dual is None else sol.dual.tolist(),
                                            "iterations": sol.iterations, "residuals": sol.residuals})
        print(f"status: {sol.status}, objective: {sol.objective_value}")
        if sol.status != "optimal":
            raise NumericalError(f"LP is {sol.status}")
        return
    if kind in ("ublp", "lblp"):
        cfg = _config(args)
        rp = build_reward_partitioning(cfg)
        red = (build_ublp if kind == "ublp" else build_lblp)(cfg, rp)
        run.lap("build")
        v, it = value_iteration(red, args.tol)
        run.lap("solve")
        _values_csv(run, f"{kind}_values.csv", v, True)
        print(f"{kind}: {rp.num_partitions} partitions, {it} iterations")
        return
    if kind == "exact":
        mdp, _ = _load_mdp(args)
        run.lap("build")
        v, it = value_iteration(mdp, args.tol)
        run.lap("solve")
        _values_csv(run, "exact_values.csv", v, False)
        write_policy_csv(run.path("exact_policy.csv"), greedy_policy(mdp, v))
        print(f"exact: {mdp.num_states} states, {it} iterations")
        return
    cfg = _config(args)
    _guard_size(cfg, args, "restricted LP")
    pm = build_patrol_mdp(cfg)
    rp = build_reward_partitioning(cfg, pm.space)
    run.lap("build")
    c = np.ones(pm.space.size)
    if kind == "rlp":
        res = solve_rlp(pm.mdp, rp.partitioning, c)
        run.lap("solve")
        _values_csv(run, "rlp_values.csv", res.values, True)
        with open(run.path("rlp_duals.csv"), "w") as fh:
            fh.write("pair_index,state_index,action,dual\n")
            for k, (x, u, mu) in enumerate(zip(pm.mdp.pair_state, pm.mdp.pair_action, res.duals)):
                fh.write(f"{k},{x},{u},{mu:.17g}\n")
        print(f"rlp: {rp.num_partitions} partitions, {res.solution.iterations} simplex iterations")
    else:
        vs = solve_iterated_bellman_lp(pm.mdp, rp.partitioning, c, args.L)
        run.lap("solve")
        with open(run.path("ib_values.csv"), "w") as fh:
            fh.write("partition_index," + ",".join(f"v{j + 1}" for j in range(args.L)) + "\n")
            for i in range(vs.shape[1]):
                fh.write(f"{i}," + ",".join(f"{x:.17g}" for x in vs[:, i]) + "\n")
        print(f"ib: L={args.L}, {rp.num_partitions} partitions")


def cmd_policy(args, run: Run):
    if args.action == "extract":
        cfg = _config(args)
        _guard_size(cfg, args, "policy extraction")
        pm = build_patrol_mdp(cfg)
        rp = build_reward_partitioning(cfg, pm.space)
        if args.source == "exact":
            v = value_iteration(pm.mdp, args.tol)[0]
        else:
            red = (build_ublp if args.source == "ublp" else build_lblp)(cfg, rp, pm=pm)
            v = rp.partitioning.lift(value_iteration(red, args.tol)[0])
        run.lap("solve")
        pi = greedy_policy(pm.mdp, v)
        write_policy_csv(run.path("policy.csv"), pi)
        print(f"greedy policy from {args.source} values over {len(pi)} states")
        return
    if not args.policy:
        raise ValidationError("policy eval needs --policy FILE")
    mdp, _ = _load_mdp(args)
    pi = read_policy_csv(args.policy, mdp)
    v = policy_evaluation(mdp, pi)
    run.lap("evaluate")
    write_values_csv(run.path("policy_values.csv"), v)
    _, lower = porteus_bound(mdp, v)
    print(f"policy value: min {v.min():.6g}, max {v.max():.6g}; one-step bound gap "
          f"{float(np.max(np.abs(lower - v))):.2e}")


def cmd_bounds(args, run: Run):
    cfg = _config(args)
    rp = build_reward_partitioning(cfg)
    exact = num_states_formula(cfg) <= LARGE_STATES or args.allow_large
    pm = build_patrol_mdp(cfg) if exact else None
    verify = None if exact else False
    w = value_iteration(build_lblp(cfg, rp, verify=verify, pm=pm), args.tol)[0]
    v = value_iteration(build_ublp(cfg, rp, verify=verify, pm=pm), args.tol)[0]
    run.lap("bounds")
    slack = 1e-6
    violations = int(np.sum(w > v + slack))
    with open(run.path("bounds.csv"), "w") as fh:
        fh.write("partition_index,w_star,v_min,v_max,v_star\n")
        if exact:
            V = value_iteration(pm.mdp, args.tol)[0]
            run.lap("exact")
            vmin, vmax = rp.partitioning.block_min(V), rp.partitioning.block_max(V)
            violations = int(np.sum((w > vmin + slack) | (vmax > v + slack) | (w > v + slack)))
            for i in range(rp.num_partitions):
                fh.write(f"{i},{w[i]:.17g},{vmin[i]:.17g},{vmax[i]:.17g},{v[i]:.17g}\n")
        else:
            for i in range(rp.num_partitions):
                fh.write(f"{i},{w[i]:.17g},,,{v[i]:.17g}\n")
    report = {"num_partitions": rp.num_partitions, "exact_solved": exact, "ordering_violations": violations,
              "slack": slack, "max_gap": float((v - w).max()), "mean_gap": float((v - w).mean())}
    run.write_json("bounds_report.json", report)
    print(f"{rp.num_partitions} partitions, {violations} ordering violations, "
          f"max gap {report['max_gap']:.4g}")
    if violations:
        raise BoundViolation(f"{violations} partitions violate w* <= V* <= v*")


def _sim_policy(args, cfg: PatrolConfig):
    name = args.policy
    if name in ("lblp-greedy", "ublp-greedy"):
        rp = build_reward_partitioning(cfg)
        build = build_lblp if name == "lblp-greedy" else build_ublp
        w = value_iteration(build(cfg, rp, verify=False), args.tol)[0]
        return lifted_greedy_policy(cfg, rp, w), None
    _guard_size(cfg, args, f"policy '{name}'")
    pm = build_patrol_mdp(cfg)
    if name == "optimal":
        return greedy_policy(pm.mdp, value_iteration(pm.mdp, args.tol)[0]), pm.space
    if Path(name).is_file():
        return read_policy_csv(name, pm.mdp), pm.space
    raise ValidationError(f"--policy: expected lblp-greedy, ublp-greedy, optimal or a policy CSV, got {name!r}")


def cmd_simulate(args, run: Run):
    cfg = _config(args)
    pol, space = _sim_policy(args, cfg)
    run.lap("policy")
    res = simulate(cfg, pol, args.horizon, args.seed, space=space)
    run.lap("simulate")
    names = [p.name for p in res.write(run.out)]
    run.artifacts.extend(run.out / n for n in names)
    s = res.summary()
    print(f"serviced {s['serviced_count']}, mean dwell {s['mean_dwell']}, "
          f"mean delay {s['mean_service_delay']}, worst delay {s['worst_service_delay']}")


def cmd_verify(args, run: Run):
    from .verify import VERIFY_LIMIT, run_suite

    cfg = _config(args)
    if num_states_formula(cfg) > VERIFY_LIMIT and not args.allow_large:
        raise ValidationError(f"verify builds the full model; {num_states_formula(cfg)} states exceed "
                              f"{VERIFY_LIMIT}, pass --allow-large")
    checks = run_suite(cfg, tol=args.tol, seed=args.seed)
    run.lap("verify")
    for c in checks:
        print(c.line())
    run.write_json("verify.json", [{"name": c.name, "passed": c.passed, "detail": c.detail,
                                    "metrics": c.metrics} for c in checks])
    failed = [c.name for c in checks if not c.passed]
    if failed:
        raise BoundViolation(f"{len(failed)} check(s) failed: {', '.join(failed)}")


def cmd_oracle(args, run: Run):
    cfg = _config(args)
    _guard_size(cfg, args, "disjunctive oracle")
    pm = build_patrol_mdp(cfg)
    rp = build_reward_partitioning(cfg, pm.space)
    c_bar = rp.partitioning.aggregate_cost(np.ones(pm.space.size))
    nlp = solve_nlp_bruteforce(pm.mdp, rp.partitioning, c_bar, cap=args.cap)
    run.lap("enumerate")
    w = value_iteration(build_lblp(cfg, rp, pm=pm), args.tol)[0]
    err = float(np.abs(nlp.values - w).max())
    write_aggregate_csv(run.path("nlp_values.csv"), nlp.values)
    run.write_json("nlp_report.json", {"selections": nlp.num_selections, "objective": nlp.objective,
                                       "lblp_objective": float(c_bar @ w), "max_abs_diff": err})
    print(f"{nlp.num_selections} selections, objective {nlp.objective:.10g}, "
          f"max |nlp - lblp| = {err:.2e}")


# parser -------------------------------------------------------------------------------

def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="patrol config JSON")
    p.add_argument("--out", default="out", help="output directory (default: out)")
    p.add_argument("--tol", type=float, default=1e-9, help="value-iteration tolerance")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--horizon", type=int, default=60_000)
    p.add_argument("--allow-large", action="store_true", help="permit full builds above the size limit")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aggbounds", description="Aggregation LP bounds for MDPs.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build", help="enumerate states and partitions, build the MDP")
    _common(p)
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("solve", help="solve for a value function")
    p.add_argument("kind", choices=["exact", "ublp", "lblp", "rlp", "ib", "lp"])
    _common(p)
    p.add_argument("--mdp", help="generic MDP JSON (solve exact)")
    p.add_argument("--lp", help="LP text file (solve lp)")
    p.add_argument("--L", type=int, default=2, help="cycle length for solve ib")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("policy", help="extract or evaluate a policy")
    p.add_argument("action", choices=["extract", "eval"])
    _common(p)
    p.add_argument("--source", choices=["exact", "ublp", "lblp"], default="lblp")
    p.add_argument("--policy", help="policy CSV (policy eval)")
    p.add_argument("--mdp", help="generic MDP JSON (policy eval)")
    p.set_defaults(func=cmd_policy)

    p = sub.add_parser("bounds", help="compare lower and upper bounds")
    p.add_argument("action", choices=["compare"])
    _common(p)
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("simulate", help="Monte Carlo run of a policy")
    _common(p)
    p.add_argument("--policy", default="lblp-greedy",
                   help="lblp-greedy, ublp-greedy, optimal, or a policy CSV")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("verify", help="run the invariant suites")
    _common(p)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("oracle", help="brute-force oracles")
    p.add_argument("which", choices=["nlp"])
    _common(p)
    p.add_argument("--cap", type=int, default=10 ** 6, help="maximum number of selections")
    p.set_defaults(func=cmd_oracle)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    try:
        if args.horizon < 1:
            raise ValidationError(f"--horizon must be >= 1, got {args.horizon}")
        if not args.tol > 0:
            raise ValidationError(f"--tol must be positive, got {args.tol}")
        run = Run(args)
        args.func(args, run)
        run.manifest(argv)
        return 0
    except (ValidationError, PolicyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (NumericalError, StructureError, BoundViolation) as exc:
        if "run" in locals():
            run.manifest(argv)
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
