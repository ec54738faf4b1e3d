"""Hard state aggregation: restricted LP, surrogate reduced MDPs, iterated
Bellman lifting, successor-tuple tables and the disjunctive lower-bound
program solved by exhaustive selection enumeration.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .errors import DimensionError, LpError, ValidationError
from .mdp_core import Mdp
from .solver import LpProblem, LpSolution, _check_cost, solve_lp

DEFAULT_SELECTION_CAP = 10 ** 6


class Partitioning:
    """Surjective map from states onto blocks ``0..M-1``."""

    def __init__(self, partition_of):
        labels = np.asarray(partition_of, dtype=np.int64)
        if labels.ndim != 1 or labels.size == 0:
            raise ValidationError("partition map must be a nonempty vector")
        M = int(labels.max()) + 1
        sizes = np.bincount(labels, minlength=M)
        if labels.min() < 0 or np.any(sizes == 0):
            raise ValidationError("partition indices must cover 0..M-1 with nonempty blocks")
        labels.setflags(write=False)
        self.partition_of = labels
        self.num_partitions = M
        self.sizes = sizes
        order = np.argsort(labels, kind="stable")
        self._members = np.split(order, np.cumsum(sizes)[:-1])

    def __len__(self):
        return self.num_partitions

    @property
    def num_states(self) -> int:
        return self.partition_of.size

    def members(self, i: int) -> np.ndarray:
        return self._members[i]

    def basis_matrix(self) -> sp.csr_matrix:
        """Phi with Phi[x, i] = 1 iff x is in block i."""
        S = self.num_states
        return sp.csr_matrix((np.ones(S), (np.arange(S), self.partition_of)),
                             shape=(S, self.num_partitions))

    def lift(self, values) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        if values.size != self.num_partitions:
            raise DimensionError("aggregate value", self.num_partitions, values.size)
        return values[self.partition_of]

    def aggregate_cost(self, c) -> np.ndarray:
        """c_bar(i) = sum of c over block i."""
        return np.bincount(self.partition_of, weights=np.asarray(c, dtype=float),
                           minlength=self.num_partitions)

    def block_min(self, v) -> np.ndarray:
        out = np.full(self.num_partitions, np.inf)
        np.minimum.at(out, self.partition_of, np.asarray(v, dtype=float))
        return out

    def block_max(self, v) -> np.ndarray:
        out = np.full(self.num_partitions, -np.inf)
        np.maximum.at(out, self.partition_of, np.asarray(v, dtype=float))
        return out


def build_partitioning(mdp: Mdp, key: Callable[[int], object] | np.ndarray) -> Partitioning:
    """Blocks are the equivalence classes of ``key`` (a callable or a label array).

    Blocks are numbered in order of their smallest member state.
    """
    if callable(key):
        labels = [key(x) for x in range(mdp.num_states)]
    else:
        labels = list(np.asarray(key))
        if len(labels) != mdp.num_states:
            raise DimensionError("partition key", mdp.num_states, len(labels))
    index: dict = {}
    out = np.empty(mdp.num_states, dtype=np.int64)
    for x, lab in enumerate(labels):
        out[x] = index.setdefault(lab, len(index))
    return Partitioning(out)


def _check_match(mdp: Mdp, part: Partitioning):
    if part.num_states != mdp.num_states:
        raise DimensionError("partitioning", mdp.num_states, part.num_states)


def _restricted_rows(mdp: Mdp, part: Partitioning):
    """Head block and aggregated successor rows (P Phi) of every pair."""
    head = part.partition_of[mdp.pair_state]
    PPhi = (mdp.P @ part.basis_matrix()).tocsr()
    return head, PPhi


def build_rlp(mdp: Mdp, part: Partitioning, c) -> LpProblem:
    """Restricted LP: one row ``v(i) - lambda sum_l p_l v(block of f(x,u,Y_l)) >= R_u(x)``
    per pair, with block costs c_bar(i) = sum_{x in S_i} c(x)."""
    _check_match(mdp, part)
    c = _check_cost(c, mdp.num_states)
    head, PPhi = _restricted_rows(mdp, part)
    M = part.num_partitions
    H = sp.csr_matrix((np.ones(mdp.num_pairs), (np.arange(mdp.num_pairs), head)), shape=(mdp.num_pairs, M))
    return LpProblem(part.aggregate_cost(c), (H - mdp.discount * PPhi).tocsr(), mdp.rewards.copy(), head)


@dataclass
class RlpResult:
    values: np.ndarray
    duals: np.ndarray
    solution: LpSolution

    def block_mass(self, mdp: Mdp, part: Partitioning) -> np.ndarray:
        """Total dual mass per block, summed over actions."""
        return np.bincount(part.partition_of[mdp.pair_state], weights=self.duals,
                           minlength=part.num_partitions)


def solve_rlp(mdp: Mdp, part: Partitioning, c) -> RlpResult:
    """Optimal v* and duals of the restricted LP.

    Raises :class:`LpError` if some block receives no dual mass from any of
    its constraints, since no reduced MDP could then be formed.
    """
    problem = build_rlp(mdp, part, c)
    sol = solve_lp(problem)
    if not sol.optimal:
        raise LpError(f"restricted LP is {sol.status}", sol.iterations)
    res = RlpResult(sol.primal, sol.dual, sol)
    mass = res.block_mass(mdp, part)
    if np.any(mass <= 0):
        i = int(np.flatnonzero(mass <= 0)[0])
        raise LpError(f"block {i} has zero dual mass under every action", sol.iterations)
    return res


def build_surrogate_mdp(mdp: Mdp, part: Partitioning, mu) -> Mdp:
    """Reduced MDP on blocks obtained by mixing each block's constraints with weights ``mu``.

    For every block i and action u with positive mass, the member weights
    h(x) = mu(x, u) / sum mu give the reward sum h R_u and the block
    transition sum h P_u(x, S_j).
    """
    _check_match(mdp, part)
    mu = np.asarray(mu, dtype=float)
    if mu.size != mdp.num_pairs:
        raise DimensionError("dual weights", mdp.num_pairs, mu.size)
    if np.any(mu < 0):
        raise ValidationError("dual weights must be nonnegative")
    head, PPhi = _restricted_rows(mdp, part)
    keys = np.stack([head, mdp.pair_action], axis=1)
    uniq, group = np.unique(keys, axis=0, return_inverse=True)
    group = group.ravel()
    mass = np.bincount(group, weights=mu, minlength=len(uniq))
    block_mass = np.bincount(uniq[:, 0], weights=mass, minlength=part.num_partitions)
    if np.any(block_mass <= 0):
        i = int(np.flatnonzero(block_mass <= 0)[0])
        raise ValidationError(f"block {i} has zero mass under every action; its value would be unbounded below")
    keep = np.flatnonzero(mass > 0)
    h = np.where(mass[group] > 0, mu / np.where(mass[group] > 0, mass[group], 1.0), 0.0)
    G = sp.csr_matrix((h, (group, np.arange(mdp.num_pairs))), shape=(len(uniq), mdp.num_pairs))
    rewards = G @ mdp.rewards
    Pt = (G @ PPhi).tocsr()
    # renormalize away rounding so rows sum to one exactly enough
    Pt = sp.diags(1.0 / np.asarray(Pt.sum(axis=1)).ravel().clip(min=1e-300)) @ Pt
    Pt = Pt.tocsr()[keep]
    return Mdp(uniq[keep, 0], uniq[keep, 1], rewards[keep], Pt, mdp.discount)


def uniform_weights(mdp: Mdp, part: Partitioning) -> np.ndarray:
    """mu(x, u) = 1 / |S_i|: the hard-aggregation weights."""
    return 1.0 / part.sizes[part.partition_of[mdp.pair_state]]


def hard_aggregation_mdp(mdp: Mdp, part: Partitioning) -> Mdp:
    return build_surrogate_mdp(mdp, part, uniform_weights(mdp, part))


def build_iterated_bellman_lp(mdp: Mdp, part: Partitioning, c, L: int) -> LpProblem:
    """Lifted LP over (v_1, ..., v_L), variable ``j*M + i`` holding v_{j+1}(i).

    Rows ``v_{j+1}(i) >= R_u(x) + lambda sum_l p_l v_j(...)`` for j < L and the
    cyclic closure ``v_1(i) >= R_u(x) + lambda sum_l p_l v_L(...)``.
    """
    if L < 2:
        raise ValidationError(f"L must be >= 2, got {L}")
    _check_match(mdp, part)
    c = _check_cost(c, mdp.num_states)
    head, PPhi = _restricted_rows(mdp, part)
    M, K = part.num_partitions, mdp.num_pairs
    blocks_A, heads = [], []
    for j in range(L):
        src, dst = j, (j + 1) % L  # rows bounding v_dst via v_src
        H = sp.csr_matrix((np.ones(K), (np.arange(K), dst * M + head)), shape=(K, L * M))
        S = sp.csr_matrix((PPhi.data, PPhi.indices + src * M, PPhi.indptr), shape=(K, L * M))
        blocks_A.append(H - mdp.discount * S)
        heads.append(dst * M + head)
    A = sp.vstack(blocks_A).tocsr()
    b = np.tile(mdp.rewards, L)
    return LpProblem(np.tile(part.aggregate_cost(c), L), A, b, np.concatenate(heads))


def solve_iterated_bellman_lp(mdp: Mdp, part: Partitioning, c, L: int) -> np.ndarray:
    """Optimal (v_1, ..., v_L) as an (L, M) array."""
    sol = solve_lp(build_iterated_bellman_lp(mdp, part, c, L))
    if not sol.optimal:
        raise LpError(f"iterated Bellman LP is {sol.status}", sol.iterations)
    return sol.primal.reshape(L, part.num_partitions)


# successor tuples ----------------------------------------------------------------

class TupleTable:
    """Distinct successor-block tuples T(i, u), each with a witness state."""

    def __init__(self, entries: dict):
        self._entries = entries  # (i, u) -> list[(tuple, witness)]

    def keys(self):
        return list(self._entries)

    def tuples(self, i: int, u: int) -> list:
        return [t for t, _ in self._entries[(i, u)]]

    def entries(self, i: int, u: int) -> list:
        return list(self._entries[(i, u)])

    def cardinality(self, i: int, u: int) -> int:
        return len(self._entries[(i, u)])

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            m1 = len(next(iter(self._entries.values()))[0][0]) if self._entries else 0
            w.writerow(["partition", "action", "tuple_id"] + [f"k{l}" for l in range(m1)]
                       + ["witness_state", "cardinality"])
            for (i, u), items in sorted(self._entries.items()):
                for tid, (t, x) in enumerate(items):
                    w.writerow([i, u, tid, *t, x, len(items)])


def build_tuple_table(mdp: Mdp, part: Partitioning) -> TupleTable:
    """Group pairs by (block, action) and collect distinct successor-block tuples."""
    if not mdp.has_disturbances:
        raise ValidationError("tuple tables need an MDP with an explicit disturbance table")
    _check_match(mdp, part)
    Z = part.partition_of[mdp.successors]
    head = part.partition_of[mdp.pair_state]
    rows = np.column_stack([head, mdp.pair_action, Z])
    uniq, first = np.unique(rows, axis=0, return_index=True)
    entries: dict = {}
    for r, k in zip(uniq, first):
        entries.setdefault((int(r[0]), int(r[1])), []).append(
            (tuple(int(z) for z in r[2:]), int(mdp.pair_state[k])))
    return TupleTable(entries)


# disjunctive lower bound ------------------------------------------------------------

@dataclass
class NlpResult:
    values: np.ndarray
    objective: float
    selection: tuple
    num_selections: int
    groups: list


def _disjuncts(mdp: Mdp, part: Partitioning):
    """Per (block, action): distinct (reward, aggregated successor row) options."""
    head = part.partition_of[mdp.pair_state]
    PPhi = (mdp.P @ part.basis_matrix()).tocsr()
    groups: dict = {}
    for k in range(mdp.num_pairs):
        lo, hi = PPhi.indptr[k], PPhi.indptr[k + 1]
        row = tuple(sorted(zip(PPhi.indices[lo:hi].tolist(), np.round(PPhi.data[lo:hi], 15).tolist())))
        opt = (float(mdp.rewards[k]), row)
        lst = groups.setdefault((int(head[k]), int(mdp.pair_action[k])), [])
        if opt not in lst:
            lst.append(opt)
    return sorted(groups.items())


def solve_nlp_bruteforce(mdp: Mdp, part: Partitioning, c_bar, cap: int = DEFAULT_SELECTION_CAP,
                         reverse: bool = False) -> NlpResult:
    """Minimize c_bar.w subject to, for every (block i, action u),
    ``w(i) >= min_{x in S_i} [R_u(x) + lambda sum_l p_l w(block of f(x,u,Y_l))]``.

    Every way of picking one disjunct per (i, u) yields an ordinary LP; the
    program's optimum is the smallest of those LP optima. All selections are
    solved, lexicographically over (i, u) then disjunct index (``reverse``
    walks the same set backwards).
    """
    _check_match(mdp, part)
    M = part.num_partitions
    c_bar = _check_cost(c_bar, M)
    groups = _disjuncts(mdp, part)
    sizes = [len(opts) for _, opts in groups]
    total = int(np.prod(sizes, dtype=object))
    if total > cap:
        raise ValidationError(f"{total} selections exceed the cap {cap}; use the structured lower-bound LP")
    lam = mdp.discount
    heads = np.array([i for (i, _), _ in groups])
    best = None
    ranges = [range(s) for s in sizes]
    if reverse:
        ranges = [range(s - 1, -1, -1) for s in sizes]
    for sel in itertools.product(*ranges):
        rows, cols, vals, b = [], [], [], []
        for g, ((i, _), opts) in enumerate(groups):
            r, succ = opts[sel[g]]
            rows.append(g)
            cols.append(i)
            vals.append(1.0)
            for j, p in succ:
                rows.append(g)
                cols.append(j)
                vals.append(-lam * p)
            b.append(r)
        A = sp.coo_matrix((vals, (rows, cols)), shape=(len(groups), M)).tocsr()
        sol = solve_lp(LpProblem(c_bar, A, np.array(b), heads))
        if not sol.optimal:
            raise LpError(f"selection LP {sel} is {sol.status}", sol.iterations)
        if best is None or sol.objective_value < best[0] - 1e-12:
            best = (sol.objective_value, sel, sol.primal)
    return NlpResult(best[2], best[0], best[1], total, [key for key, _ in groups])


def write_aggregate_csv(path, values):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["partition_index", "value"])
        for i, val in enumerate(np.asarray(values, dtype=float)):
            w.writerow([i, f"{val:.17g}"])
