"""Invariant suites for the patrol model and the bounds built on it.

Each check returns a :class:`Check`; :func:`run_suite` runs them all on one
configuration. The suites are meant for desk-scale configs where the full
MDP fits comfortably in memory.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .aggregation import solve_iterated_bellman_lp, solve_rlp
from .mdp_core import (bellman_inequality_residuals, greedy_policy, policy_evaluation, porteus_bound,
                       value_iteration)
from .patrol_model import (PatrolConfig, PatrolMdp, PatrolState, RewardPartitioning, admissible_actions,
                           build_lblp, build_patrol_mdp, build_reward_partitioning, build_ublp,
                           num_partitions_formula, num_states_formula, partition_dominates,
                           partition_key_arrays, state_partial_order, transition)

VERIFY_LIMIT = 200_000


@dataclass
class Check:
    name: str
    passed: bool
    detail: str = ""
    metrics: dict = field(default_factory=dict)
    seconds: float = 0.0

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail}"


@dataclass
class Context:
    """Lazily built artifacts shared between checks."""

    config: PatrolConfig
    tol: float = 1e-9
    _cache: dict = field(default_factory=dict)

    def _get(self, key, fn):
        if key not in self._cache:
            self._cache[key] = fn()
        return self._cache[key]

    @property
    def pm(self) -> PatrolMdp:
        return self._get("pm", lambda: build_patrol_mdp(self.config))

    @property
    def rp(self) -> RewardPartitioning:
        return self._get("rp", lambda: build_reward_partitioning(self.config, self.pm.space))

    @property
    def v_star(self) -> np.ndarray:
        return self._get("V", lambda: value_iteration(self.pm.mdp, self.tol)[0])

    @property
    def ublp(self):
        return self._get("ublp", lambda: build_ublp(self.config, self.rp, verify=True, pm=self.pm))

    @property
    def lblp(self):
        return self._get("lblp", lambda: build_lblp(self.config, self.rp, verify=True, pm=self.pm))

    @property
    def v_up(self) -> np.ndarray:
        return self._get("v_up", lambda: value_iteration(self.ublp, self.tol)[0])

    @property
    def w_low(self) -> np.ndarray:
        return self._get("w_low", lambda: value_iteration(self.lblp, self.tol)[0])


# individual checks ----------------------------------------------------------------

def check_counts(ctx: Context) -> Check:
    S, M = ctx.pm.space.size, ctx.rp.num_partitions
    fs, fm = num_states_formula(ctx.config), num_partitions_formula(ctx.config)
    ok = S == fs and M == fm
    return Check("counts", ok, f"states {S} (formula {fs}), partitions {M} (formula {fm})",
                 {"states": S, "partitions": M})


def check_row_sums(ctx: Context) -> Check:
    rows = np.asarray(ctx.pm.mdp.P.sum(axis=1)).ravel()
    err = float(np.abs(rows - 1).max())
    return Check("row_sums", err <= 1e-12, f"max |row sum - 1| = {err:.2e}", {"max_error": err})


def check_reward_blocks(ctx: Context) -> Check:
    mdp, part = ctx.pm.mdp, ctx.rp.partitioning
    head = part.partition_of[mdp.pair_state]
    bad = 0
    for u in (0, 1, -1):
        sel = mdp.pair_action == u
        h, r = head[sel], mdp.rewards[sel]
        lo = np.full(part.num_partitions, np.inf)
        hi = np.full(part.num_partitions, -np.inf)
        np.minimum.at(lo, h, r)
        np.maximum.at(hi, h, r)
        live = np.isfinite(lo)
        bad += int(np.sum(hi[live] - lo[live] > 1e-15))
    return Check("reward_per_block", bad == 0, f"{bad} (block, action) groups with varying reward")


def check_tuple_structure(ctx: Context) -> Check:
    _ = ctx.ublp, ctx.lblp  # construction runs the cross-check and raises on mismatch
    return Check("tuple_cardinality", True, f"{ctx.ublp.num_pairs} (block, action) tuple sets match")


def random_ordered_pair(config: PatrolConfig, space, rng) -> tuple[PatrolState, PatrolState]:
    """x1 >= x2: same (loc, direction, dwell), x1's delays raised where allowed."""
    x2 = space.state(int(rng.integers(space.size)))
    d1 = list(x2.delays)
    for j, s in enumerate(config.stations):
        if x2.dwell >= 1 and s == x2.loc:
            continue
        d1[j] = int(rng.integers(d1[j], config.Gamma + 1))
    return PatrolState(x2.loc, x2.direction, x2.dwell, tuple(d1)), x2


def check_state_monotonicity(ctx: Context, pairs: int = 1000, steps: int = 20, seed: int = 0) -> Check:
    """Shared admissible inputs and disturbances keep ordered states ordered."""
    cfg = ctx.config
    rng = np.random.Generator(np.random.PCG64(seed))
    probs = np.full(cfg.m + 1, 1.0 / (cfg.m + 1))
    bad = 0
    for _ in range(pairs):
        x1, x2 = random_ordered_pair(cfg, ctx.pm.space, rng)
        for _ in range(steps):
            common = [u for u in admissible_actions(x1, cfg) if u in admissible_actions(x2, cfg)]
            u = common[int(rng.integers(len(common)))]
            l = int(rng.choice(cfg.m + 1, p=probs))
            x1, x2 = transition(x1, u, l, cfg), transition(x2, u, l, cfg)
            if state_partial_order(x1, x2) not in (">=", "equal"):
                bad += 1
                break
    return Check("state_order", bad == 0, f"{bad} of {pairs} trajectory pairs lost the order")


def check_value_monotonicity(ctx: Context, tol: float = 1e-7) -> Check:
    """x1 >= x2 implies V*(x1) <= V*(x2), over all comparable pairs."""
    sp_, V = ctx.pm.space, ctx.v_star
    group = (sp_.loc * 2 + (sp_.direction == -1)) * (ctx.config.D + 1) + sp_.dwell
    order = np.argsort(group, kind="stable")
    bounds = np.flatnonzero(np.diff(group[order])) + 1
    pairs = bad = 0
    worst = 0.0
    for idx in np.split(order, bounds):
        T = sp_.delays[idx].astype(np.int64)
        ge = np.all(T[:, None, :] >= T[None, :, :], axis=2)
        np.fill_diagonal(ge, False)
        a, b = np.nonzero(ge)
        pairs += a.size
        gap = V[idx[a]] - V[idx[b]]
        bad += int(np.sum(gap > tol))
        if gap.size:
            worst = max(worst, float(gap.max()))
    return Check("value_order", bad == 0,
                 f"{bad} violations over {pairs} comparable pairs (worst excess {max(worst, 0):.2e})",
                 {"pairs": pairs, "violations": bad, "worst": worst})


def check_block_monotonicity(ctx: Context, min_pairs: int = 100, tol: float = 1e-7) -> Check:
    """S_i >= S_j implies min over S_i of V* <= min over S_j of V*."""
    rp, part, V = ctx.rp, ctx.rp.partitioning, ctx.v_star
    loc, w, d, A, tbar = partition_key_arrays(ctx.config, rp)
    vmin = part.block_min(V)
    members = [part.members(i) for i in range(rp.num_partitions)]
    tested = bad = 0
    for i in range(rp.num_partitions):
        cand = np.flatnonzero((loc == loc[i]) & (w == w[i]) & (d == d[i]) & (tbar <= tbar[i])
                              & np.all(A <= A[i], axis=1))
        for j in cand:
            if j == i or not partition_dominates(ctx.pm.space, members[i], members[j]):
                continue
            tested += 1
            bad += int(vmin[i] > vmin[j] + tol)
    ok = bad == 0 and tested >= min(min_pairs, 1)
    return Check("block_order", ok, f"{bad} violations over {tested} ordered block pairs",
                 {"pairs": tested, "violations": bad})


def check_sandwich(ctx: Context, slack: float = 1e-6) -> Check:
    part, V = ctx.rp.partitioning, ctx.v_star
    lo = float((part.lift(ctx.w_low) - V).max())
    hi = float((V - part.lift(ctx.v_up)).max())
    ok = lo <= slack and hi <= slack
    return Check("sandwich", ok, f"max(Phi w - V*) = {lo:.2e}, max(V* - Phi v) = {hi:.2e}")


def check_lower_blockwise(ctx: Context, slack: float = 1e-7) -> Check:
    gap = float((ctx.w_low - ctx.rp.partitioning.block_min(ctx.v_star)).max())
    return Check("lower_vs_block_min", gap <= slack, f"max(w(i) - min_S_i V*) = {gap:.2e}")


def check_rlp_collapse(ctx: Context, tol: float = 1e-6) -> Check:
    rlp = solve_rlp(ctx.pm.mdp, ctx.rp.partitioning, np.ones(ctx.pm.space.size))
    err = float(np.abs(rlp.values - ctx.v_up).max())
    return Check("rlp_equals_ublp", err <= tol, f"max |v_rlp - v_ublp| = {err:.2e}", {"error": err})


def check_iterated_bellman(ctx: Context, Ls=(2, 3), tol: float = 1e-6) -> Check:
    worst = -np.inf
    for L in Ls:
        vs = solve_iterated_bellman_lp(ctx.pm.mdp, ctx.rp.partitioning, np.ones(ctx.pm.space.size), L)
        worst = max(worst, float((ctx.v_up[None, :] - vs).max()))
    return Check("iterated_bellman", worst <= tol, f"max(v* - v_j) = {worst:.2e} for L in {list(Ls)}")


def check_bellman_feasible(ctx: Context, tol: float = 1e-6) -> Check:
    r = bellman_inequality_residuals(ctx.pm.mdp, ctx.rp.partitioning.lift(ctx.v_up))
    return Check("upper_bellman_feasible", r <= tol, f"max Bellman violation of Phi v = {r:.2e}")


def check_porteus(ctx: Context, slack: float = 1e-6) -> Check:
    mdp, V = ctx.pm.mdp, ctx.v_star
    v_low = ctx.rp.partitioning.lift(ctx.w_low)
    pi = greedy_policy(mdp, v_low)
    v_sub = policy_evaluation(mdp, pi)
    _, lower = porteus_bound(mdp, v_low)
    a = float((lower - v_sub).max())
    b = float((v_sub - V).max())
    return Check("porteus", a <= slack and b <= slack,
                 f"max(bound - V_sub) = {a:.2e}, max(V_sub - V*) = {b:.2e}")


CHECKS = (check_counts, check_row_sums, check_reward_blocks, check_tuple_structure,
          check_state_monotonicity, check_value_monotonicity, check_block_monotonicity, check_sandwich,
          check_lower_blockwise, check_rlp_collapse, check_iterated_bellman, check_bellman_feasible,
          check_porteus)


def run_suite(config: PatrolConfig, tol: float = 1e-9, seed: int = 0, checks=CHECKS) -> list[Check]:
    """Run every check; exceptions are reported as failures rather than raised."""
    ctx = Context(config, tol)
    out = []
    for fn in checks:
        t0 = time.perf_counter()
        try:
            res = fn(ctx, seed=seed) if fn is check_state_monotonicity else fn(ctx)
        except Exception as exc:  # noqa: BLE001 - surfaced in the report
            res = Check(fn.__name__.removeprefix("check_"), False, f"{type(exc).__name__}: {exc}")
        res.seconds = time.perf_counter() - t0
        out.append(res)
    return out
