"""Single-UAV perimeter patrol MDP.

A state is ``(loc, direction, dwell, delays)``: UAV node on an N-node ring,
travel direction (+1 clockwise, -1 counter-clockwise), completed loiter
orbits at the current station, and the capped service delay of every alert
station. Actions are 0 (loiter), +1 (keep direction) and -1 (reverse).

States are indexed in a mixed-radix layout. Non-dwell states come first,
ordered by (direction, loc, delays little-endian base Gamma+1) with
direction +1 before -1. Dwell states follow, ordered by (station position,
dwell, delays of the other stations little-endian).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Callable, NamedTuple

import numpy as np

from .aggregation import Partitioning, build_tuple_table
from .errors import PolicyError, StructureError, ValidationError
from .mdp_core import Mdp

ACTIONS = (0, 1, -1)
MAX_STATES = 50_000_000


@dataclass(frozen=True)
class OperatorModel:
    """Confusion-matrix model of the human operator classifying an alert."""

    a: float = 0.5
    b: float = 0.45
    mu1: float = 1.0
    c: float = 0.5
    g: float = 0.45
    mu2: float = 1.0
    p_target: float = 0.01

    def __post_init__(self):
        if not 0 < self.a + self.b <= 1:
            raise ValidationError(f"operator: need 0 < a+b <= 1, got a+b={self.a + self.b}")
        if not 0 < self.c + self.g <= 1:
            raise ValidationError(f"operator: need 0 < c+g <= 1, got c+g={self.c + self.g}")
        if self.mu1 < 0 or self.mu2 < 0:
            raise ValidationError("operator: mu1 and mu2 must be nonnegative")
        if not 0 < self.p_target < 1:
            raise ValidationError(f"operator: p_target must lie in (0, 1), got {self.p_target}")

    def p_tr(self, d):
        return self.a + self.b * (1 - np.exp(-self.mu1 * np.asarray(d, dtype=float)))

    def p_ftr(self, d):
        return self.c + self.g * (1 - np.exp(-self.mu2 * np.asarray(d, dtype=float)))


@dataclass(frozen=True)
class PatrolConfig:
    N: int
    stations: tuple
    D: int
    Gamma: int
    alpha: float = 1 / 60
    rho: float = 0.005
    discount: float = 0.9
    operator: OperatorModel = field(default_factory=OperatorModel)
    log_base: str = "e"
    loiter_requires_alert: bool = False

    def __post_init__(self):
        object.__setattr__(self, "stations", tuple(int(s) for s in self.stations))
        if self.N < 1:
            raise ValidationError(f"N must be >= 1, got {self.N}")
        m = len(self.stations)
        if m < 1 or m > self.N:
            raise ValidationError(f"stations: need 1 <= m <= N, got m={m}, N={self.N}")
        if len(set(self.stations)) != m:
            raise ValidationError("stations must be distinct")
        if any(s < 0 or s >= self.N for s in self.stations):
            raise ValidationError(f"stations must lie in 0..{self.N - 1}")
        if self.D < 1:
            raise ValidationError(f"D must be >= 1, got {self.D}")
        if self.Gamma < 2:
            raise ValidationError(f"Gamma must be >= 2, got {self.Gamma}")
        if not 0 <= self.discount < 1:
            raise ValidationError(f"lambda must lie in [0, 1), got {self.discount}")
        if not self.alpha > 0:
            raise ValidationError(f"alpha must be positive, got {self.alpha}")
        if self.rho < 0:
            raise ValidationError(f"rho must be nonnegative, got {self.rho}")
        if self.log_base not in ("e", "2"):
            raise ValidationError(f"log_base must be 'e' or '2', got {self.log_base!r}")

    @property
    def m(self) -> int:
        return len(self.stations)

    @classmethod
    def from_dict(cls, doc: dict) -> "PatrolConfig":
        required = ("N", "stations", "D", "Gamma", "alpha", "rho", "lambda")
        missing = [k for k in required if k not in doc]
        if missing:
            raise ValidationError(f"config missing field(s): {', '.join(missing)}")
        op = doc.get("operator", {})
        try:
            operator = OperatorModel(**op)
        except TypeError as exc:
            raise ValidationError(f"config field 'operator': {exc}") from None
        return cls(
            N=int(doc["N"]), stations=tuple(doc["stations"]), D=int(doc["D"]),
            Gamma=int(doc["Gamma"]), alpha=float(doc["alpha"]), rho=float(doc["rho"]),
            discount=float(doc["lambda"]), operator=operator,
            log_base=str(doc.get("log_base", "e")),
            loiter_requires_alert=bool(doc.get("loiter_requires_alert", False)),
        )

    def to_dict(self) -> dict:
        op = self.operator
        return {
            "N": self.N, "stations": list(self.stations), "D": self.D, "Gamma": self.Gamma,
            "alpha": self.alpha, "rho": self.rho, "lambda": self.discount,
            "operator": {"a": op.a, "b": op.b, "mu1": op.mu1, "c": op.c, "g": op.g,
                         "mu2": op.mu2, "p_target": op.p_target},
            "log_base": self.log_base,
            "loiter_requires_alert": self.loiter_requires_alert,
        }

    @classmethod
    def load(cls, path) -> "PatrolConfig":
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config {path}: invalid JSON ({exc})") from None
        return cls.from_dict(doc)


DESK_A = PatrolConfig(N=6, stations=(0, 3), D=2, Gamma=5)
TINY = PatrolConfig(N=4, stations=(0, 2), D=1, Gamma=3)
FULL = PatrolConfig(N=15, stations=(0, 3, 7, 11), D=5, Gamma=15)


class PatrolState(NamedTuple):
    loc: int
    direction: int
    dwell: int
    delays: tuple

    @property
    def max_delay(self) -> int:
        return max(self.delays)

    @property
    def alerts(self) -> tuple:
        return tuple(int(t > 0) for t in self.delays)


class PartitionKey(NamedTuple):
    loc: int
    direction: int
    dwell: int
    alerts: tuple
    max_delay: int

    def is_type1(self, config: PatrolConfig) -> bool:
        """UAV at an alerted station, zero dwell, and some other station alerted."""
        if self.dwell != 0 or self.loc not in config.stations:
            return False
        s = config.stations.index(self.loc)
        return self.alerts[s] == 1 and any(a for j, a in enumerate(self.alerts) if j != s)


# counts ----------------------------------------------------------------------

def num_states_formula(config: PatrolConfig) -> int:
    B = config.Gamma + 1
    return 2 * config.N * B ** config.m + config.D * config.m * B ** (config.m - 1)


def num_partitions_formula(config: PatrolConfig) -> int:
    N, m, D, G = config.N, config.m, config.D, config.Gamma
    return 2 * N + 2 * N * (2 ** m - 1) * G + m * D + m * D * (2 ** (m - 1) - 1) * G


# operator information --------------------------------------------------------

def info_gain(d, op: OperatorModel, log_base: str = "e"):
    """Mutual information between the alert's nature and the operator's report
    after ``d`` loiter orbits. Works elementwise on arrays."""
    p = op.p_target
    ptr = op.p_tr(d)
    pftr = op.p_ftr(d)
    z1 = p * ptr + (1 - p) * (1 - pftr)
    z2 = p * (1 - ptr) + (1 - p) * pftr
    terms = [
        (p * ptr, ptr / z1),
        (p * (1 - ptr), (1 - ptr) / z2),
        ((1 - p) * (1 - pftr), (1 - pftr) / z1),
        ((1 - p) * pftr, pftr / z2),
    ]
    total = 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        for w, ratio in terms:
            total = total + np.where(w > 0, w * np.log(np.where(w > 0, ratio, 1.0)), 0.0)
    if log_base == "2":
        total = total / math.log(2)
    return total if np.ndim(total) else float(total)


def alert_probabilities(config: PatrolConfig) -> np.ndarray:
    """(p_0, ..., p_m): no alert, or one alert at the l-th station."""
    p0 = math.exp(-config.alpha)
    probs = np.full(config.m + 1, (1 - p0) / config.m)
    probs[0] = p0
    return probs


# state space -------------------------------------------------------------------

class StateSpace:
    """All admissible patrol states of a config, as parallel arrays."""

    def __init__(self, config: PatrolConfig, max_states: int = MAX_STATES):
        self.config = config
        n = num_states_formula(config)
        if n > max_states:
            raise ValidationError(f"state count {n} exceeds limit {max_states}")
        N, m, D, B = config.N, config.m, config.D, config.Gamma + 1
        self.base = B
        self.num_nondwell = 2 * N * B ** m
        self.size = n
        st = np.asarray(config.stations)
        self._station_pos = np.full(N, -1, dtype=np.int64)
        self._station_pos[st] = np.arange(m)
        self._pow = B ** np.arange(m, dtype=np.int64)
        # weights for the other-station code of dwell states
        W = np.zeros((m, m), dtype=np.int64)
        for s in range(m):
            others = [j for j in range(m) if j != s]
            for r, j in enumerate(others):
                W[s, j] = B ** r
        self._dwell_w = W

        dt = np.int16 if B < 30000 else np.int32
        codes = np.arange(B ** m, dtype=np.int64)
        digits = (codes[:, None] // self._pow[None, :]) % B
        nd_dir = np.repeat(np.array([1, -1]), N * B ** m)
        nd_loc = np.tile(np.repeat(np.arange(N), B ** m), 2)
        nd_tau = np.tile(digits, (2 * N, 1))
        if m > 1:
            ocodes = np.arange(B ** (m - 1), dtype=np.int64)
            odigits = (ocodes[:, None] // self._pow[None, :m - 1]) % B
        else:
            odigits = np.zeros((1, 0), dtype=np.int64)
        nb = odigits.shape[0]
        dw_loc, dw_d, dw_tau = [], [], []
        for s in range(m):
            tau = np.zeros((D * nb, m), dtype=np.int64)
            tau[:, [j for j in range(m) if j != s]] = np.tile(odigits, (D, 1))
            dw_loc.append(np.full(D * nb, st[s]))
            dw_d.append(np.repeat(np.arange(1, D + 1), nb))
            dw_tau.append(tau)
        self.loc = np.concatenate([nd_loc] + dw_loc).astype(np.int64)
        self.direction = np.concatenate([nd_dir, np.ones(m * D * nb, dtype=np.int64)])
        self.dwell = np.concatenate([np.zeros(nd_loc.size, dtype=np.int64)] + dw_d)
        self.delays = np.concatenate([nd_tau] + dw_tau).astype(dt)
        for a in (self.loc, self.direction, self.dwell, self.delays):
            a.setflags(write=False)
        if self.loc.size != n:
            raise StructureError(f"enumerated {self.loc.size} states, formula gives {n}")

    def __len__(self):
        return self.size

    @property
    def max_delay(self) -> np.ndarray:
        return self.delays.max(axis=1)

    def index_array(self, loc, direction, dwell, delays) -> np.ndarray:
        cfg = self.config
        loc = np.asarray(loc, dtype=np.int64)
        direction = np.asarray(direction, dtype=np.int64)
        dwell = np.asarray(dwell, dtype=np.int64)
        delays = np.asarray(delays, dtype=np.int64)
        B, N, D = self.base, cfg.N, cfg.D
        nd = (np.where(direction == 1, 0, 1) * N + loc) * B ** cfg.m + delays @ self._pow
        s = self._station_pos[loc]
        sc = np.maximum(s, 0)
        code = (delays * self._dwell_w[sc]).sum(axis=-1)
        dw = self.num_nondwell + (sc * D + dwell - 1) * B ** (cfg.m - 1) + code
        return np.where(dwell == 0, nd, dw)

    def index(self, state: PatrolState) -> int:
        """Index of a single state; validates membership."""
        cfg = self.config
        loc, w, d, tau = state
        if not 0 <= loc < cfg.N or w not in (1, -1) or not 0 <= d <= cfg.D:
            raise ValidationError(f"invalid patrol state {state}")
        if len(tau) != cfg.m or any(t < 0 or t > cfg.Gamma for t in tau):
            raise ValidationError(f"invalid delays in state {state}")
        if d >= 1:
            if loc not in cfg.stations or w != 1 or tau[cfg.stations.index(loc)] != 0:
                raise ValidationError(f"dwell state {state} violates the dwell invariants")
        return int(self.index_array([loc], [w], [d], [list(tau)])[0])

    def state(self, i: int) -> PatrolState:
        return PatrolState(int(self.loc[i]), int(self.direction[i]), int(self.dwell[i]),
                           tuple(int(t) for t in self.delays[i]))

    def __iter__(self):
        for i in range(self.size):
            yield self.state(i)


def enumerate_states(config: PatrolConfig, max_states: int = MAX_STATES) -> StateSpace:
    return StateSpace(config, max_states)


# dynamics ----------------------------------------------------------------------

def loiter_allowed(config: PatrolConfig, loc, dwell, delays):
    """Vectorized admissibility of u = 0."""
    loc = np.asarray(loc)
    dwell = np.asarray(dwell)
    delays = np.atleast_2d(delays)
    pos = np.full(config.N, -1)
    pos[list(config.stations)] = np.arange(config.m)
    s = pos[loc]
    ok = (s >= 0) & (dwell < config.D)
    if config.loiter_requires_alert:
        here = np.take_along_axis(delays, np.maximum(s, 0).reshape(-1, 1), axis=1).ravel()
        ok &= (here.reshape(np.shape(s)) > 0) | (dwell >= 1)
    return ok


def admissible_actions(state: PatrolState, config: PatrolConfig) -> list[int]:
    if state.loc in config.stations and state.dwell < config.D:
        here = state.delays[config.stations.index(state.loc)]
        if not config.loiter_requires_alert or here > 0 or state.dwell >= 1:
            return list(ACTIONS)
    return list(ACTIONS[1:])


def step_arrays(config: PatrolConfig, loc, direction, dwell, delays, u, l, cap: bool = True):
    """Vectorized one-step dynamics. ``l`` = 0 means no alert, ``l`` = j means an
    alert at the j-th configured station. With ``cap=False`` delays are not
    saturated at Gamma."""
    loc = np.asarray(loc, dtype=np.int64)
    direction = np.asarray(direction, dtype=np.int64)
    dwell = np.asarray(dwell, dtype=np.int64)
    tau = np.asarray(delays, dtype=np.int64)
    u = np.asarray(u, dtype=np.int64)
    l = np.asarray(l, dtype=np.int64)
    loiter = u == 0
    new_loc = np.mod(loc + direction * u, config.N)
    new_dir = direction * u + loiter
    new_dwell = (dwell + 1) * loiter
    st = np.asarray(config.stations)
    alert = (l[..., None] == np.arange(1, config.m + 1))
    serviced = (loc[..., None] == st) & loiter[..., None]
    grow = tau + 1
    if cap:
        grow = np.minimum(grow, config.Gamma)
    new_tau = np.where(serviced, 0, np.where((tau > 0) | alert, grow, 0))
    return new_loc, new_dir, new_dwell, new_tau


def step_scalar(config: PatrolConfig, loc, w, d, tau, u, l, cap=True):
    """Plain-Python one-step dynamics on ints; ``cap=False`` leaves delays unsaturated."""
    new_tau = []
    for j, s in enumerate(config.stations):
        if u == 0 and loc == s:
            new_tau.append(0)
        elif tau[j] > 0 or l == j + 1:
            t = tau[j] + 1
            new_tau.append(min(t, config.Gamma) if cap else t)
        else:
            new_tau.append(0)
    return (loc + w * u) % config.N, w * u + (u == 0), (d + 1) * (u == 0), new_tau


def transition(state: PatrolState, u: int, l: int, config: PatrolConfig) -> PatrolState:
    """Successor of ``state`` under action ``u`` and disturbance Y_l."""
    if u not in admissible_actions(state, config):
        raise PolicyError(f"action {u} is not admissible in state {state}")
    if not 0 <= l <= config.m:
        raise ValidationError(f"disturbance index must lie in 0..{config.m}, got {l}")
    nl, nw, nd, nt = step_arrays(config, state.loc, state.direction, state.dwell,
                                 list(state.delays), u, l)
    return PatrolState(int(nl), int(nw), int(nd), tuple(int(t) for t in nt))


def reward_array(config: PatrolConfig, dwell, max_delay, u):
    dwell = np.asarray(dwell)
    info = info_gain(dwell + 1, config.operator, config.log_base) - \
        info_gain(dwell, config.operator, config.log_base)
    penalty = config.rho * np.minimum(np.asarray(max_delay), config.Gamma)
    return np.where(np.asarray(u) == 0, info, 0.0) - penalty


def reward(state: PatrolState, u: int, config: PatrolConfig) -> float:
    """Information increment from one more loiter, minus the max-delay penalty."""
    return float(reward_array(config, state.dwell, state.max_delay, u))


# MDP construction ----------------------------------------------------------------

@dataclass
class PatrolMdp:
    """Patrol MDP plus the state table it was built from."""

    config: PatrolConfig
    space: StateSpace
    mdp: Mdp


def _pairs_for(config, loc, dwell, delays):
    """Pair layout: for each state the admissible actions in canonical order."""
    n = np.size(loc)
    can0 = loiter_allowed(config, loc, dwell, delays)
    counts = 2 + can0.astype(np.int64)
    owner = np.repeat(np.arange(n), counts)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    rank = np.arange(owner.size) - starts[owner]
    acts = np.where(can0[owner], np.array(ACTIONS)[rank],
                    np.array(ACTIONS[1:] + (0,))[rank])
    return owner, acts


def build_patrol_mdp(config: PatrolConfig, space: StateSpace | None = None) -> PatrolMdp:
    space = space or enumerate_states(config)
    owner, acts = _pairs_for(config, space.loc, space.dwell, space.delays)
    loc, w, d = space.loc[owner], space.direction[owner], space.dwell[owner]
    tau = space.delays[owner]
    succ = np.empty((owner.size, config.m + 1), dtype=np.int64)
    for l in range(config.m + 1):
        nl, nw, nd, nt = step_arrays(config, loc, w, d, tau, acts, np.full(owner.size, l))
        succ[:, l] = space.index_array(nl, nw, nd, nt)
    rewards = reward_array(config, d, tau.max(axis=1), acts)
    mdp = Mdp.from_disturbances(owner, acts, rewards, succ, alert_probabilities(config),
                                config.discount, num_states=space.size)
    return PatrolMdp(config, space, mdp)


# partitioning ---------------------------------------------------------------------

def _key_codes(config: PatrolConfig, loc, direction, dwell, delays) -> np.ndarray:
    delays = np.atleast_2d(delays)
    bits = ((delays > 0).astype(np.int64) * (2 ** np.arange(config.m))).sum(axis=1)
    code = np.asarray(loc, dtype=np.int64) * 2 + (np.asarray(direction) == -1)
    code = code * (config.D + 1) + np.asarray(dwell)
    code = code * 2 ** config.m + bits
    return code * (config.Gamma + 1) + delays.max(axis=1)


def _decode_key(config: PatrolConfig, code: int) -> PartitionKey:
    code, tbar = divmod(int(code), config.Gamma + 1)
    code, bits = divmod(code, 2 ** config.m)
    code, d = divmod(code, config.D + 1)
    loc, wbit = divmod(code, 2)
    alerts = tuple((bits >> j) & 1 for j in range(config.m))
    return PartitionKey(loc, -1 if wbit else 1, d, alerts, tbar)


def partition_key(state: PatrolState) -> PartitionKey:
    return PartitionKey(state.loc, state.direction, state.dwell, state.alerts, state.max_delay)


@dataclass
class RewardPartitioning:
    """Reward-structure partitioning with decoded keys per block."""

    partitioning: Partitioning
    codes: np.ndarray
    keys: list

    @property
    def num_partitions(self) -> int:
        return self.partitioning.num_partitions

    def index_of_codes(self, codes) -> np.ndarray:
        idx = np.searchsorted(self.codes, codes)
        if np.any(idx >= self.codes.size) or np.any(self.codes[np.minimum(idx, self.codes.size - 1)] != codes):
            raise StructureError("successor key outside the partition table")
        return idx


def build_reward_partitioning(config: PatrolConfig, space: StateSpace | None = None) -> RewardPartitioning:
    """Aggregate states sharing (loc, direction, dwell, alert statuses, max delay)."""
    space = space or enumerate_states(config)
    codes = _key_codes(config, space.loc, space.direction, space.dwell, space.delays)
    uniq, inv = np.unique(codes, return_inverse=True)
    part = Partitioning(inv)
    return RewardPartitioning(part, uniq, [_decode_key(config, c) for c in uniq])


def partition_key_arrays(config: PatrolConfig, rp: RewardPartitioning):
    keys = rp.keys
    return (np.array([k.loc for k in keys]), np.array([k.direction for k in keys]),
            np.array([k.dwell for k in keys]), np.array([k.alerts for k in keys]).reshape(len(keys), config.m),
            np.array([k.max_delay for k in keys]))


def tuple_cardinality(key: PartitionKey, u: int, config: PatrolConfig) -> int:
    """Number of distinct successor-partition tuples of a block under ``u``.

    A type-1 block under loiter reaches one tuple per possible largest delay
    among the other alerted stations; at the delay cap the top two coincide.
    """
    if u == 0 and key.is_type1(config):
        return min(key.max_delay, config.Gamma - 1)
    return 1


# collapsed reduced MDPs ------------------------------------------------------------

def _representatives(config: PatrolConfig, rp: RewardPartitioning, mode: str):
    """Block member whose tuple under loiter is extremal.

    ``lower``: every alerted station at the block's max delay (largest
    successor delay). ``upper``: for type-1 blocks the UAV's own station at the
    max delay and the other alerted stations at 1 (successor max delay 2).
    """
    loc, w, d, A, tbar = partition_key_arrays(config, rp)
    tau = A * tbar[:, None]
    if mode == "upper":
        pos = np.full(config.N, -1)
        pos[list(config.stations)] = np.arange(config.m)
        type1 = np.array([k.is_type1(config) for k in rp.keys])
        for i in np.flatnonzero(type1):
            s = pos[loc[i]]
            tau[i] = A[i]
            tau[i, s] = tbar[i]
    return loc, w, d, tau


def _collapsed_mdp(config: PatrolConfig, rp: RewardPartitioning, mode: str):
    loc, w, d, tau = _representatives(config, rp, mode)
    owner, acts = _pairs_for(config, loc, d, tau)
    m = config.m
    succ = np.empty((owner.size, m + 1), dtype=np.int64)
    for l in range(m + 1):
        nl, nw, nd, nt = step_arrays(config, loc[owner], w[owner], d[owner], tau[owner], acts,
                                     np.full(owner.size, l))
        succ[:, l] = rp.index_of_codes(_key_codes(config, nl, nw, nd, nt))
    rewards = reward_array(config, d[owner], tau[owner].max(axis=1), acts)
    return Mdp.from_disturbances(owner, acts, rewards, succ, alert_probabilities(config),
                                 config.discount, num_states=rp.num_partitions)


def check_collapse(pm: PatrolMdp, rp: RewardPartitioning, reduced: Mdp, mode: str):
    """Verify the selected tuples against the enumerated tuple table.

    Checks, for every (block, action): the tuple count matches
    :func:`tuple_cardinality`, the selected tuple is realized by some member,
    and it has the smallest (``upper``) or largest (``lower``) successor max
    delay in the table. Raises :class:`StructureError` otherwise.
    """
    config = pm.config
    table = build_tuple_table(pm.mdp, rp.partitioning)
    tbar = np.array([k.max_delay for k in rp.keys])
    for k in range(reduced.num_pairs):
        i, u = int(reduced.pair_state[k]), int(reduced.pair_action[k])
        tuples = table.tuples(i, u)
        expect = tuple_cardinality(rp.keys[i], u, config)
        if len(tuples) != expect:
            raise StructureError(f"block {i} action {u}: {len(tuples)} tuples, expected {expect}")
        chosen = tuple(int(z) for z in reduced.successors[k])
        if chosen not in tuples:
            raise StructureError(f"block {i} action {u}: selected tuple not realized")
        score = [tbar[list(t)].max() for t in tuples]
        target = min(score) if mode == "upper" else max(score)
        if tbar[list(chosen)].max() != target:
            raise StructureError(f"block {i} action {u}: selected tuple is not extremal")
    if len(table.keys()) != reduced.num_pairs:
        raise StructureError("block/action sets of the reduced MDP differ from the original")


def _build_collapsed(config, mode, rp, verify, pm):
    rp = rp or build_reward_partitioning(config)
    reduced = _collapsed_mdp(config, rp, mode)
    if verify is None:
        verify = num_states_formula(config) <= 20_000
    if verify:
        pm = pm or build_patrol_mdp(config)
        check_collapse(pm, rp, reduced, mode)
    return reduced


def build_ublp(config: PatrolConfig, rp: RewardPartitioning | None = None,
               verify: bool | None = None, pm: PatrolMdp | None = None) -> Mdp:
    """Reduced MDP whose exact LP is the restricted LP (least upper bound).

    ``verify`` cross-checks against the enumerated tuple table; by default it
    runs when the full MDP has at most 20,000 states.
    """
    return _build_collapsed(config, "upper", rp, verify, pm)


def build_lblp(config: PatrolConfig, rp: RewardPartitioning | None = None,
               verify: bool | None = None, pm: PatrolMdp | None = None) -> Mdp:
    """Reduced MDP whose value function lower-bounds V* blockwise."""
    return _build_collapsed(config, "lower", rp, verify, pm)


# partial orders -----------------------------------------------------------------------

def state_partial_order(x1: PatrolState, x2: PatrolState) -> str:
    """``'equal'``, ``'>='`` (x1 >= x2), ``'<='`` or ``'incomparable'``."""
    if (x1.loc, x1.direction, x1.dwell) != (x2.loc, x2.direction, x2.dwell):
        return "incomparable"
    ge = all(a >= b for a, b in zip(x1.delays, x2.delays))
    le = all(a <= b for a, b in zip(x1.delays, x2.delays))
    if ge and le:
        return "equal"
    if ge:
        return ">="
    if le:
        return "<="
    return "incomparable"


def partition_dominates(space: StateSpace, members_i, members_j) -> bool:
    """S_i >= S_j: every z in S_j is dominated by some x in S_i."""
    Xi = space.delays[members_i].astype(np.int64)
    for z in members_j:
        same = ((space.loc[members_i] == space.loc[z]) & (space.direction[members_i] == space.direction[z])
                & (space.dwell[members_i] == space.dwell[z]))
        if not np.any(same & np.all(Xi >= space.delays[z], axis=1)):
            return False
    return True


def lifted_greedy_policy(config: PatrolConfig, rp: RewardPartitioning, values) -> Callable:
    """Greedy policy w.r.t. a block-constant value function, evaluated lazily.

    Returns a function of :class:`PatrolState`; usable on configs too large to
    build the full MDP. Ties go to the first action in canonical order.
    """
    values = np.asarray(values, dtype=float)
    if values.size != rp.num_partitions:
        raise ValidationError(f"values: expected length {rp.num_partitions}, got {values.size}")
    index = dict(zip(rp.codes.tolist(), range(rp.num_partitions)))
    probs = alert_probabilities(config).tolist()
    lam = config.discount
    G = config.Gamma
    cache: dict = {}

    def code(loc, w, d, tau):
        bits = sum(1 << j for j, t in enumerate(tau) if t > 0)
        c = ((loc * 2 + (w == -1)) * (config.D + 1) + d) * 2 ** config.m + bits
        return c * (G + 1) + max(tau)

    def act(state: PatrolState) -> int:
        hit = cache.get(state)
        if hit is not None:
            return hit
        best_u, best_q = None, -np.inf
        for u in admissible_actions(state, config):
            q = reward(state, u, config)
            for l, p in enumerate(probs):
                nl, nw, nd, nt = step_scalar(config, state.loc, state.direction, state.dwell, state.delays, u, l)
                q += lam * p * values[index[code(nl, nw, nd, nt)]]
            if q > best_q:
                best_u, best_q = u, q
        cache[state] = best_u
        return best_u

    return act


def with_params(config: PatrolConfig, **changes) -> PatrolConfig:
    return replace(config, **changes)
