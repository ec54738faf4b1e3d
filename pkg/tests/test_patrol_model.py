import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aggbounds.aggregation import build_tuple_table
from aggbounds.errors import PolicyError, ValidationError
from aggbounds.mdp_core import value_iteration
from aggbounds.patrol_model import (DESK_A, FULL, OperatorModel, PartitionKey, PatrolConfig, PatrolState,
                                    admissible_actions, alert_probabilities, build_lblp, build_patrol_mdp,
                                    build_reward_partitioning, build_ublp, enumerate_states, info_gain,
                                    lifted_greedy_policy, num_partitions_formula, num_states_formula,
                                    partition_key, reward, state_partial_order, transition, tuple_cardinality,
                                    with_params)
from aggbounds.verify import Context, check_block_monotonicity, check_state_monotonicity, check_value_monotonicity

I6 = 0.025437117076423446  # four-term formula at d = 6, natural log


def direct_info(d, a=0.5, b=0.45, mu1=1.0, c=0.5, g=0.45, mu2=1.0, p=0.01):
    """Independent scalar transcription of the mutual information."""
    ptr = a + b * (1 - math.exp(-mu1 * d))
    pftr = c + g * (1 - math.exp(-mu2 * d))
    joint = {("T", "T"): p * ptr, ("T", "F"): p * (1 - ptr),
             ("F", "T"): (1 - p) * (1 - pftr), ("F", "F"): (1 - p) * pftr}
    px = {"T": p, "F": 1 - p}
    pz = {z: joint[("T", z)] + joint[("F", z)] for z in "TF"}
    return sum(q * math.log(q / (px[x] * pz[z])) for (x, z), q in joint.items() if q > 0)


# counts ------------------------------------------------------------------------------

def test_counts_examples():
    assert num_states_formula(FULL) == 2_048_000
    assert num_partitions_formula(FULL) == 8_900
    assert enumerate_states(DESK_A).size == 456
    assert build_reward_partitioning(DESK_A).num_partitions == 216
    tiny1 = PatrolConfig(N=1, stations=(0,), D=1, Gamma=2)
    assert enumerate_states(tiny1).size == 7


def test_m1_partition_count():
    cfg = PatrolConfig(N=5, stations=(2,), D=3, Gamma=4)
    assert num_partitions_formula(cfg) == 2 * 5 + 2 * 5 * 4 + 3
    assert build_reward_partitioning(cfg).num_partitions == num_partitions_formula(cfg)


@st.composite
def small_configs(draw):
    N = draw(st.integers(1, 6))
    m = draw(st.integers(1, min(N, 3)))
    stations = draw(st.permutations(range(N)))[:m]
    return PatrolConfig(N=N, stations=tuple(stations), D=draw(st.integers(1, 3)), Gamma=draw(st.integers(2, 4)),
                        loiter_requires_alert=draw(st.booleans()))


@settings(max_examples=25, deadline=None)
@given(small_configs())
def test_counts_match_enumeration(cfg):
    space = enumerate_states(cfg)
    assert space.size == num_states_formula(cfg)
    states = list(space)
    assert len(set(states)) == space.size
    assert all(space.index(s) == i for i, s in enumerate(states))
    assert build_reward_partitioning(cfg, space).num_partitions == num_partitions_formula(cfg)


@settings(max_examples=15, deadline=None)
@given(small_configs())
def test_transitions_stay_in_census(cfg):
    pm = build_patrol_mdp(cfg)
    rows = np.asarray(pm.mdp.P.sum(axis=1)).ravel()
    assert np.abs(rows - 1).max() <= 1e-12
    for x in range(0, pm.space.size, max(1, pm.space.size // 40)):
        s = pm.space.state(x)
        for u in admissible_actions(s, cfg):
            for l in range(cfg.m + 1):
                t = transition(s, u, l, cfg)
                assert pm.space.index(t) >= 0
                if t.dwell >= 1:
                    assert t.loc in cfg.stations and t.direction == 1
                    assert t.delays[cfg.stations.index(t.loc)] == 0


# dynamics ----------------------------------------------------------------------------

def test_transition_examples():
    assert transition(PatrolState(2, 1, 0, (0, 4)), 1, 0, DESK_A) == PatrolState(3, 1, 0, (0, 5))
    assert transition(PatrolState(0, 1, 0, (2, 1)), 0, 1, DESK_A) == PatrolState(0, 1, 1, (0, 2))
    assert transition(PatrolState(0, -1, 0, (0, 0)), 1, 0, DESK_A) == PatrolState(5, -1, 0, (0, 0))


def test_saturation_at_cap():
    s = transition(PatrolState(1, 1, 0, (5, 5)), -1, 2, DESK_A)
    assert s == PatrolState(0, -1, 0, (5, 5))


def test_admissible_examples():
    assert admissible_actions(PatrolState(1, 1, 0, (0, 0)), DESK_A) == [1, -1]
    assert admissible_actions(PatrolState(0, 1, 2, (0, 3)), DESK_A) == [1, -1]
    assert admissible_actions(PatrolState(0, 1, 0, (2, 0)), DESK_A) == [0, 1, -1]
    strict = with_params(DESK_A, loiter_requires_alert=True)
    assert admissible_actions(PatrolState(0, 1, 0, (0, 2)), strict) == [1, -1]
    assert admissible_actions(PatrolState(0, 1, 1, (0, 2)), strict) == [0, 1, -1]
    assert admissible_actions(PatrolState(0, 1, 0, (0, 2)), DESK_A) == [0, 1, -1]


def test_inadmissible_transition_errors():
    with pytest.raises(PolicyError, match="not admissible"):
        transition(PatrolState(1, 1, 0, (0, 0)), 0, 0, DESK_A)


def test_alert_probabilities():
    p = alert_probabilities(FULL)
    assert p[0] == pytest.approx(0.9834714, abs=1e-7)
    np.testing.assert_allclose(p[1:], 0.0041321, atol=1e-7)
    assert abs(p.sum() - 1) <= 1e-15
    one = PatrolConfig(N=3, stations=(1,), D=1, Gamma=2, alpha=50.0)
    q = alert_probabilities(one)
    assert q[1] == pytest.approx(1 - q[0]) and q[0] < 1e-20


# information gain and reward --------------------------------------------------------------

def test_info_gain_values():
    op = OperatorModel()
    assert info_gain(0, op) == pytest.approx(0.0, abs=1e-15)
    assert info_gain(6, op) == pytest.approx(I6, rel=1e-12)
    for d in range(11):
        assert info_gain(d, op) == pytest.approx(direct_info(d), rel=1e-12, abs=1e-15)
        assert info_gain(d + 1, op) >= info_gain(d, op)
    entropy = -(0.01 * math.log(0.01) + 0.99 * math.log(0.99))
    assert 0 <= info_gain(50, op) <= entropy
    assert info_gain(6, op, "2") == pytest.approx(I6 / math.log(2), rel=1e-12)


def test_reward_examples():
    cfg = DESK_A
    assert reward(PatrolState(1, 1, 0, (0, 0)), 1, cfg) == 0.0
    op = cfg.operator
    r = reward(PatrolState(0, 1, 0, (3, 1)), 0, cfg)
    assert r == pytest.approx(info_gain(1, op) - info_gain(0, op) - 0.015, abs=1e-15)
    assert reward(PatrolState(3, 1, 1, (2, 0)), 0, cfg) != reward(PatrolState(3, 1, 1, (1, 0)), 0, cfg)
    assert reward(PatrolState(2, -1, 0, (2, 1)), 1, cfg) == reward(PatrolState(2, -1, 0, (1, 2)), 1, cfg)


def test_zero_discount_value_is_best_reward():
    cfg = with_params(DESK_A, discount=0.0)
    pm = build_patrol_mdp(cfg)
    v, _ = value_iteration(pm.mdp, 1e-12)
    best = np.maximum.reduceat(pm.mdp.rewards, pm.mdp.pair_ptr[:-1])
    np.testing.assert_allclose(v, best, atol=1e-15)


# partitions and tuples --------------------------------------------------------------------

def test_partition_key_and_type1():
    k = partition_key(PatrolState(0, 1, 0, (3, 1)))
    assert k == PartitionKey(0, 1, 0, (1, 1), 3)
    assert k.is_type1(DESK_A)
    assert not PartitionKey(0, 1, 0, (1, 0), 3).is_type1(DESK_A)
    assert not PartitionKey(1, 1, 0, (1, 1), 3).is_type1(DESK_A)


def test_tuple_cardinality_examples():
    k = PartitionKey(0, 1, 0, (1, 1), 3)
    assert tuple_cardinality(k, 0, DESK_A) == 3
    assert tuple_cardinality(k, 1, DESK_A) == 1
    assert tuple_cardinality(PartitionKey(2, -1, 0, (0, 0), 0), -1, DESK_A) == 1
    # at the cap the two largest successor delays coincide
    assert tuple_cardinality(PartitionKey(0, 1, 0, (1, 1), 5), 0, DESK_A) == 4


def test_tuple_cardinality_matches_table():
    pm = build_patrol_mdp(DESK_A)
    rp = build_reward_partitioning(DESK_A, pm.space)
    table = build_tuple_table(pm.mdp, rp.partitioning)
    for i, u in table.keys():
        assert table.cardinality(i, u) == tuple_cardinality(rp.keys[i], u, DESK_A)


def test_reward_constant_on_blocks():
    pm = build_patrol_mdp(DESK_A)
    rp = build_reward_partitioning(DESK_A, pm.space)
    head = rp.partitioning.partition_of[pm.mdp.pair_state]
    seen = {}
    for k in range(pm.mdp.num_pairs):
        key = (int(head[k]), int(pm.mdp.pair_action[k]))
        seen.setdefault(key, pm.mdp.rewards[k])
        assert seen[key] == pm.mdp.rewards[k]


def test_collapsed_bounds_sandwich():
    pm = build_patrol_mdp(DESK_A)
    rp = build_reward_partitioning(DESK_A, pm.space)
    V, _ = value_iteration(pm.mdp, 1e-11)
    up = value_iteration(build_ublp(DESK_A, rp, pm=pm), 1e-11)[0]
    lo = value_iteration(build_lblp(DESK_A, rp, pm=pm), 1e-11)[0]
    assert np.all(rp.partitioning.lift(up) >= V - 1e-7)
    assert np.all(lo <= rp.partitioning.block_min(V) + 1e-7)


def test_m1_collapse_trivial():
    cfg = PatrolConfig(N=4, stations=(1,), D=2, Gamma=3)
    pm = build_patrol_mdp(cfg)
    rp = build_reward_partitioning(cfg, pm.space)
    up = value_iteration(build_ublp(cfg, rp, pm=pm), 1e-12)[0]
    lo = value_iteration(build_lblp(cfg, rp, pm=pm), 1e-12)[0]
    np.testing.assert_allclose(up, lo, atol=1e-10)


def test_lifted_greedy_matches_indexed():
    from aggbounds.mdp_core import greedy_policy
    pm = build_patrol_mdp(DESK_A)
    rp = build_reward_partitioning(DESK_A, pm.space)
    w = value_iteration(build_lblp(DESK_A, rp, pm=pm), 1e-11)[0]
    pi = greedy_policy(pm.mdp, rp.partitioning.lift(w))
    lazy = lifted_greedy_policy(DESK_A, rp, w)
    for x, s in enumerate(pm.space):
        assert lazy(s) == pi(x)


# partial orders -----------------------------------------------------------------------------

def test_partial_order_examples():
    s = PatrolState(2, 1, 0, (3, 1))
    assert state_partial_order(s, s) == "equal"
    assert state_partial_order(s, PatrolState(2, 1, 0, (2, 1))) == ">="
    assert state_partial_order(PatrolState(2, 1, 0, (2, 1)), s) == "<="
    assert state_partial_order(PatrolState(2, 1, 0, (3, 0)), PatrolState(2, 1, 0, (2, 1))) == "incomparable"
    assert state_partial_order(s, PatrolState(3, 1, 0, (3, 1))) == "incomparable"


def test_state_order_preserved():
    res = check_state_monotonicity(Context(DESK_A), pairs=1000, steps=20, seed=3)
    assert res.passed, res.detail


def test_value_order_preserved():
    ctx = Context(DESK_A)
    res = check_value_monotonicity(ctx)
    assert res.passed and res.metrics["pairs"] > 0, res.detail
    blocks = check_block_monotonicity(ctx)
    assert blocks.passed and blocks.metrics["pairs"] >= 100, blocks.detail


# config handling ----------------------------------------------------------------------------

@pytest.mark.parametrize("changes, field", [
    (dict(N=0), "N"), (dict(stations=(0, 0)), "distinct"), (dict(stations=(0, 9)), "stations"),
    (dict(D=0), "D"), (dict(Gamma=1), "Gamma"), (dict(discount=1.0), "lambda"),
    (dict(alpha=0.0), "alpha"), (dict(rho=-1.0), "rho"), (dict(log_base="10"), "log_base"),
])
def test_config_validation(changes, field):
    with pytest.raises(ValidationError, match=field):
        with_params(DESK_A, **changes)


def test_operator_validation():
    with pytest.raises(ValidationError, match="a\\+b"):
        OperatorModel(a=0.8, b=0.5)
    with pytest.raises(ValidationError, match="p_target"):
        OperatorModel(p_target=1.0)


def test_config_json(tmp_path):
    doc = DESK_A.to_dict()
    path = tmp_path / "c.json"
    path.write_text(json.dumps(doc))
    assert PatrolConfig.load(path) == DESK_A
    del doc["rho"]
    path.write_text(json.dumps(doc))
    with pytest.raises(ValidationError, match="rho"):
        PatrolConfig.load(path)
    path.write_text("{not json")
    with pytest.raises(ValidationError, match="invalid JSON"):
        PatrolConfig.load(path)
