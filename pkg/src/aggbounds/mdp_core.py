"""Finite discounted MDPs and the classical dynamic-programming operators.

An :class:`Mdp` stores its state-action pairs in one flat array, grouped by
state and ordered within each state in the canonical action enumeration
order. Value functions are plain ``numpy`` vectors over states.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConvergenceError, DimensionError, NumericalError, PolicyError, ValidationError

ROW_SUM_TOL = 1e-12
DIRECT_SOLVE_LIMIT = 20_000


def _frozen(a, dtype=None):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


class Mdp:
    """Finite MDP with sparse transition rows, one row per state-action pair.

    Parameters
    ----------
    pair_state : int array (K,)
        State owning each pair; nondecreasing, every state present.
    pair_action : int array (K,)
        Action label of each pair, distinct within a state.
    rewards : float array (K,)
    transitions : sparse (K, S)
        Row k is the successor distribution of pair k.
    discount : float in [0, 1)
    successors, disturbance_probs : optional
        Disturbance table: ``successors[k, l]`` is f(x, u, Y_l) and
        ``disturbance_probs[l]`` is p_l. Needed for tuple-set construction.
    """

    def __init__(self, pair_state, pair_action, rewards, transitions, discount,
                 successors=None, disturbance_probs=None):
        pair_state = np.asarray(pair_state, dtype=np.int64)
        K = pair_state.size
        if K == 0:
            raise ValidationError("an MDP needs at least one state-action pair")
        if not 0.0 <= discount < 1.0:
            raise ValidationError(f"discount must lie in [0, 1), got {discount}")
        if np.any(np.diff(pair_state) < 0):
            raise ValidationError("pairs must be grouped by state in increasing order")
        num_states = int(pair_state[-1]) + 1
        counts = np.bincount(pair_state, minlength=num_states)
        if pair_state[0] != 0 or np.any(counts == 0):
            missing = int(np.flatnonzero(counts == 0)[0]) if np.any(counts == 0) else 0
            raise ValidationError(f"state {missing} has no admissible action")
        pair_action = np.asarray(pair_action, dtype=np.int64)
        rewards = np.asarray(rewards, dtype=float)
        if pair_action.size != K:
            raise DimensionError("pair_action", K, pair_action.size)
        if rewards.size != K:
            raise DimensionError("rewards", K, rewards.size)
        if not np.all(np.isfinite(rewards)):
            raise ValidationError("rewards must be finite")
        ptr = np.concatenate([[0], np.cumsum(counts)])
        # duplicate labels within a state
        order = np.lexsort((pair_action, pair_state))
        dup = (np.diff(pair_state[order]) == 0) & (np.diff(pair_action[order]) == 0)
        if np.any(dup):
            k = order[np.flatnonzero(dup)[0]]
            raise ValidationError(f"state {pair_state[k]} lists action {pair_action[k]} twice")

        P = sp.csr_matrix(transitions, dtype=float)
        P.sum_duplicates()
        if P.shape != (K, num_states):
            raise ValidationError(f"transition matrix shape {P.shape} != {(K, num_states)}")
        if P.nnz and P.data.min() < 0:
            raise ValidationError("transition probabilities must be nonnegative")
        sums = np.asarray(P.sum(axis=1)).ravel()
        bad = np.flatnonzero(np.abs(sums - 1.0) > ROW_SUM_TOL)
        if bad.size:
            k = int(bad[0])
            raise ValidationError(
                f"transition row of state {pair_state[k]} action {pair_action[k]} sums to {sums[k]!r}")
        P.data.setflags(write=False)

        self.num_states = num_states
        self.num_pairs = K
        self.discount = float(discount)
        self.pair_state = _frozen(pair_state)
        self.pair_action = _frozen(pair_action)
        self.rewards = _frozen(rewards)
        self.P = P
        self.pair_ptr = _frozen(ptr)
        self.successors = None
        self.disturbance_probs = None
        if successors is not None:
            successors = np.asarray(successors, dtype=np.int64)
            probs = np.asarray(disturbance_probs, dtype=float)
            if successors.ndim != 2 or successors.shape[0] != K or successors.shape[1] != probs.size:
                raise ValidationError("disturbance table shape mismatch")
            self.successors = _frozen(successors)
            self.disturbance_probs = _frozen(probs)

    @classmethod
    def from_disturbances(cls, pair_state, pair_action, rewards, successors, probs, discount,
                          num_states=None):
        """Build from f(x, u, Y_l) tables, merging coinciding successors."""
        successors = np.asarray(successors, dtype=np.int64)
        probs = np.asarray(probs, dtype=float)
        K, L = successors.shape
        if num_states is None:
            num_states = int(np.max(pair_state)) + 1
        rows = np.repeat(np.arange(K), L)
        P = sp.coo_matrix((np.tile(probs, K), (rows, successors.ravel())), shape=(K, num_states)).tocsr()
        return cls(pair_state, pair_action, rewards, P, discount, successors, probs)

    @classmethod
    def from_rows(cls, rows: Iterable[tuple], discount: float):
        """Build from ``(state, action, reward, {successor: prob})`` tuples."""
        rows = sorted(rows, key=lambda r: r[0])
        data, ri, ci = [], [], []
        for k, (_, _, _, dist) in enumerate(rows):
            items = dist.items() if isinstance(dist, dict) else dist
            for y, p in items:
                ri.append(k)
                ci.append(int(y))
                data.append(float(p))
        num_states = max(max(r[0] for r in rows), max(ci)) + 1
        P = sp.coo_matrix((data, (ri, ci)), shape=(len(rows), num_states)).tocsr()
        return cls([r[0] for r in rows], [r[1] for r in rows], [r[2] for r in rows], P, discount)

    # accessors -----------------------------------------------------------
    def pairs(self, x: int) -> range:
        return range(int(self.pair_ptr[x]), int(self.pair_ptr[x + 1]))

    def actions(self, x: int) -> list[int]:
        return [int(a) for a in self.pair_action[self.pair_ptr[x]:self.pair_ptr[x + 1]]]

    def pair_index(self, x: int, u: int) -> int:
        for k in self.pairs(x):
            if self.pair_action[k] == u:
                return k
        raise PolicyError(f"action {u} is not admissible in state {x}")

    def transition(self, x: int, u: int) -> dict[int, float]:
        k = self.pair_index(x, u)
        lo, hi = self.P.indptr[k], self.P.indptr[k + 1]
        return dict(zip(self.P.indices[lo:hi].tolist(), self.P.data[lo:hi].tolist()))

    def reward(self, x: int, u: int) -> float:
        return float(self.rewards[self.pair_index(x, u)])

    @property
    def has_disturbances(self) -> bool:
        return self.successors is not None

    def __repr__(self):
        return f"Mdp(num_states={self.num_states}, num_pairs={self.num_pairs}, discount={self.discount})"

    # serialization -------------------------------------------------------
    def to_json(self) -> dict:
        doc = {
            "num_states": self.num_states,
            "discount": self.discount,
            "pairs": [],
        }
        for k in range(self.num_pairs):
            lo, hi = self.P.indptr[k], self.P.indptr[k + 1]
            doc["pairs"].append({
                "state": int(self.pair_state[k]),
                "action": int(self.pair_action[k]),
                "reward": float(self.rewards[k]),
                "transition": [[int(y), float(p)] for y, p in
                               zip(self.P.indices[lo:hi], self.P.data[lo:hi])],
            })
        if self.has_disturbances:
            doc["disturbance_probs"] = self.disturbance_probs.tolist()
            doc["successors"] = self.successors.tolist()
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "Mdp":
        try:
            pairs = doc["pairs"]
            rows = [(p["state"], p["action"], p["reward"], p["transition"]) for p in pairs]
            discount = doc["discount"]
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed MDP document: missing {exc}") from None
        mdp = cls.from_rows(rows, discount)
        if "successors" in doc:
            mdp = cls(mdp.pair_state, mdp.pair_action, mdp.rewards, mdp.P, mdp.discount,
                      doc["successors"], doc["disturbance_probs"])
        return mdp

    def dump(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh)

    @classmethod
    def load(cls, path) -> "Mdp":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


@dataclass(frozen=True)
class Policy:
    """Stationary deterministic policy: one pair index and action label per state."""

    pairs: np.ndarray
    actions: np.ndarray

    @classmethod
    def from_pairs(cls, mdp: Mdp, pairs) -> "Policy":
        pairs = np.asarray(pairs, dtype=np.int64)
        if pairs.size != mdp.num_states:
            raise DimensionError("policy", mdp.num_states, pairs.size)
        if np.any(mdp.pair_state[pairs] != np.arange(mdp.num_states)):
            x = int(np.flatnonzero(mdp.pair_state[pairs] != np.arange(mdp.num_states))[0])
            raise PolicyError(f"policy pair for state {x} belongs to another state")
        return cls(_frozen(pairs), _frozen(mdp.pair_action[pairs]))

    @classmethod
    def from_actions(cls, mdp: Mdp, actions: Sequence[int]) -> "Policy":
        actions = np.asarray(actions, dtype=np.int64)
        if actions.size != mdp.num_states:
            raise DimensionError("policy", mdp.num_states, actions.size)
        return cls.from_pairs(mdp, [mdp.pair_index(x, int(u)) for x, u in enumerate(actions)])

    def __len__(self):
        return self.pairs.size

    def __call__(self, x: int) -> int:
        return int(self.actions[x])


def _check_values(mdp: Mdp, v, name="value function") -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or v.size != mdp.num_states:
        raise DimensionError(name, mdp.num_states, v.size)
    return v


def q_values(mdp: Mdp, v) -> np.ndarray:
    """R_u(x) + lambda * sum_y P_u(x, y) v(y) for every pair."""
    v = _check_values(mdp, v)
    return mdp.rewards + mdp.discount * (mdp.P @ v)


def _segment_max(mdp: Mdp, q: np.ndarray) -> np.ndarray:
    return np.maximum.reduceat(q, mdp.pair_ptr[:-1])


def bellman_backup(mdp: Mdp, v) -> np.ndarray:
    """Apply the Bellman optimality operator T once."""
    return _segment_max(mdp, q_values(mdp, v))


def value_iteration(mdp: Mdp, tol: float = 1e-9, max_iters: int = 100_000, v0=None):
    """Iterate T until ``||T v - v||_inf <= tol``.

    Returns ``(v, iterations)``. The returned v is within
    ``tol * lambda / (1 - lambda)`` of V* in sup-norm.
    """
    if tol <= 0:
        raise ValidationError("tol must be positive")
    v = np.zeros(mdp.num_states) if v0 is None else _check_values(mdp, v0).copy()
    residual = np.inf
    for it in range(1, max_iters + 1):
        tv = bellman_backup(mdp, v)
        residual = float(np.max(np.abs(tv - v)))
        v = tv
        if residual <= tol:
            return v, it
    raise ConvergenceError("value iteration did not converge", max_iters, residual)


def greedy_policy(mdp: Mdp, v, tie_tol: float = 0.0) -> Policy:
    """Greedy policy w.r.t. v; ties go to the first action in canonical order."""
    q = q_values(mdp, v)
    best = _segment_max(mdp, q)
    hit = q >= np.repeat(best, np.diff(mdp.pair_ptr)) - tie_tol
    idx = np.where(hit, np.arange(mdp.num_pairs), mdp.num_pairs)
    pairs = np.minimum.reduceat(idx, mdp.pair_ptr[:-1])
    return Policy(_frozen(pairs), _frozen(mdp.pair_action[pairs]))


def policy_matrices(mdp: Mdp, pi: Policy):
    """(P_pi, R_pi) for a stationary policy."""
    if len(pi) != mdp.num_states:
        raise DimensionError("policy", mdp.num_states, len(pi))
    return mdp.P[pi.pairs], mdp.rewards[pi.pairs]


def policy_evaluation(mdp: Mdp, pi: Policy, max_iters: int = 1_000_000) -> np.ndarray:
    """Solve (I - lambda P_pi) V = R_pi."""
    P, R = policy_matrices(mdp, pi)
    lam = mdp.discount
    S = mdp.num_states
    A = (sp.identity(S, format="csc") - lam * P).tocsc()
    if S <= DIRECT_SOLVE_LIMIT:
        try:
            v = spla.splu(A).solve(R)
        except RuntimeError as exc:
            raise NumericalError(f"policy evaluation factorization failed: {exc}") from None
    else:
        v = np.zeros(S)
        stop = 1e-12 * (1 + np.max(np.abs(R))) * (1 - lam)
        for _ in range(max_iters):
            nv = R + lam * (P @ v)
            if np.max(np.abs(nv - v)) <= stop:
                v = nv
                break
            v = nv
    residual = float(np.max(np.abs(A @ v - R)))
    if not np.all(np.isfinite(v)) or residual > 1e-9 * (1 + np.max(np.abs(R))):
        raise NumericalError(f"policy evaluation residual {residual:.3e} too large")
    return v


def policy_iteration(mdp: Mdp, improve_tol: float = 1e-12, max_iters: int = 10_000):
    """Howard policy iteration. Returns ``(V*, optimal policy, iterations)``.

    A state switches action only on a strict improvement above
    ``improve_tol``, which rules out cycling between tied actions.
    """
    pi = greedy_policy(mdp, np.zeros(mdp.num_states))
    for it in range(1, max_iters + 1):
        v = policy_evaluation(mdp, pi)
        q = q_values(mdp, v)
        cand = greedy_policy(mdp, v)
        gain = q[cand.pairs] - q[pi.pairs]
        switch = gain > improve_tol * (1 + np.abs(v))
        if not np.any(switch):
            return v, pi, it
        pi = Policy.from_pairs(mdp, np.where(switch, cand.pairs, pi.pairs))
    raise ConvergenceError("policy iteration did not converge", max_iters, float("nan"))


def bellman_residual_vector(mdp: Mdp, v) -> np.ndarray:
    """Per-pair slack R_u(x) + lambda P_u v - v(x); nonpositive means feasible."""
    v = _check_values(mdp, v)
    return q_values(mdp, v) - v[mdp.pair_state]


def bellman_inequality_residuals(mdp: Mdp, v) -> float:
    """Worst Bellman-inequality violation. A value <= 0 certifies v >= V*."""
    return float(np.max(bellman_residual_vector(mdp, v)))


def iterated_bellman_feasible(mdp: Mdp, vs: Sequence, tol: float = 0.0):
    """Check the cyclic iterated Bellman inequalities for ``vs = (V_1..V_L)``.

    Returns ``(feasible, worst_residual)``.
    """
    if len(vs) < 1:
        raise ValidationError("need at least one value function")
    vs = [_check_values(mdp, v, f"V_{j + 1}") for j, v in enumerate(vs)]
    L = len(vs)
    worst = -np.inf
    for j in range(L):
        # V_{j+1} >= R + lambda P V_j ; V_1 >= R + lambda P V_L
        lhs = vs[(j + 1) % L]
        r = q_values(mdp, vs[j]) - lhs[mdp.pair_state]
        worst = max(worst, float(np.max(r)))
    return worst <= tol, worst


def porteus_bound(mdp: Mdp, v_tilde):
    """Improvement vector under greedy(v_tilde) and the constant-shift lower bound.

    Returns ``(alpha, lower)`` with ``lower = v_tilde + min(alpha) / (1 - lambda)``,
    which lower-bounds the value of the greedy policy.
    """
    v_tilde = _check_values(mdp, v_tilde)
    pi = greedy_policy(mdp, v_tilde)
    alpha = q_values(mdp, v_tilde)[pi.pairs] - v_tilde
    lower = v_tilde + alpha.min() / (1.0 - mdp.discount)
    return alpha, lower


# CSV -----------------------------------------------------------------------

def write_values_csv(path, values, header=("state_index", "value")):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i, val in enumerate(np.asarray(values, dtype=float)):
            w.writerow([i, f"{val:.17g}"])


def read_values_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    out = np.empty(len(rows))
    for r in rows:
        out[int(r[0])] = float(r[1])
    return out


def write_policy_csv(path, pi: Policy):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["state_index", "action"])
        for i, a in enumerate(pi.actions):
            w.writerow([i, int(a)])


def read_policy_csv(path, mdp: Mdp) -> Policy:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    actions = np.empty(len(rows), dtype=np.int64)
    for r in rows:
        actions[int(r[0])] = int(r[1])
    return Policy.from_actions(mdp, actions)
