"""Linear programs ``min c.v  s.t.  A v >= b`` (v free) with primal and dual optima.

:func:`solve_lp` runs a revised simplex method on the dual problem

    max b.mu  s.t.  A^T mu = c,  mu >= 0,

whose basis has one column per constraint row of the primal. The simplex
multipliers of an optimal dual basis are an optimal primal vector, so both
solutions come out of the same factorization. Dantzig pricing is used, with a
switch to Bland's rule after a run of degenerate pivots.

:func:`solve_mdp_exact_lp` handles the exact LP of an MDP by policy iteration
and recovers the duals as discounted state-action occupancies.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .errors import DimensionError, LpError, ValidationError
from .mdp_core import Mdp, Policy, policy_iteration

FEAS_TOL = 1e-8
OPT_TOL = 1e-10
PIVOT_TOL = 1e-11


@dataclass
class LpProblem:
    """``min objective.v s.t. A v >= b``.

    ``heads`` optionally names, per row, a variable the row bounds from below
    with a positive coefficient (as in Bellman-type rows). One row per head
    gives the solver a dual-feasible starting basis.
    """

    objective: np.ndarray
    A: sp.csr_matrix
    b: np.ndarray
    heads: np.ndarray | None = None

    def __post_init__(self):
        self.objective = np.asarray(self.objective, dtype=float)
        self.A = sp.csr_matrix(self.A, dtype=float)
        self.b = np.asarray(self.b, dtype=float)
        n = self.objective.size
        if self.A.shape[1] != n:
            raise DimensionError("constraint rows", n, self.A.shape[1])
        if self.b.size != self.A.shape[0]:
            raise DimensionError("right-hand side", self.A.shape[0], self.b.size)
        if not np.all(np.isfinite(self.objective)):
            raise ValidationError("objective entries must be finite")
        if self.heads is not None:
            self.heads = np.asarray(self.heads, dtype=np.int64)
            if self.heads.size != self.A.shape[0]:
                raise DimensionError("heads", self.A.shape[0], self.heads.size)

    @property
    def num_vars(self) -> int:
        return self.objective.size

    @property
    def num_constraints(self) -> int:
        return self.A.shape[0]

    # text format ---------------------------------------------------------
    def to_text(self) -> str:
        lines = ["min " + " ".join(f"{x:.17g}" for x in self.objective)]
        for k in range(self.num_constraints):
            lo, hi = self.A.indptr[k], self.A.indptr[k + 1]
            terms = " ".join(f"{j}:{a:.17g}" for j, a in zip(self.A.indices[lo:hi], self.A.data[lo:hi]))
            lines.append(f"{terms} >= {self.b[k]:.17g}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "LpProblem":
        lines = [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
        if not lines or not lines[0].startswith("min"):
            raise ValidationError("LP text must start with a 'min' line")
        c = np.array([float(t) for t in lines[0].split()[1:]])
        n = c.size
        rows, cols, vals, b = [], [], [], []
        for k, ln in enumerate(lines[1:]):
            if ">=" not in ln:
                raise ValidationError(f"constraint line {k + 1} lacks '>='")
            lhs, rhs = ln.split(">=")
            toks = lhs.split()
            if any(":" in t for t in toks):
                for t in toks:
                    j, a = t.split(":")
                    rows.append(k)
                    cols.append(int(j))
                    vals.append(float(a))
            else:
                if len(toks) != n:
                    raise DimensionError(f"constraint line {k + 1}", n, len(toks))
                for j, t in enumerate(toks):
                    if float(t) != 0.0:
                        rows.append(k)
                        cols.append(j)
                        vals.append(float(t))
            b.append(float(rhs))
        if cols and max(cols) >= n:
            raise ValidationError(f"variable index {max(cols)} out of range for {n} variables")
        A = sp.coo_matrix((vals, (rows, cols)), shape=(len(b), n)).tocsr()
        return cls(c, A, np.array(b))


@dataclass
class LpSolution:
    status: str
    primal: np.ndarray | None = None
    dual: np.ndarray | None = None
    objective_value: float = float("nan")
    iterations: int = 0
    ray: np.ndarray | None = None
    farkas: np.ndarray | None = None
    residuals: dict = field(default_factory=dict)

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


def certify(problem: LpProblem, primal, dual) -> dict:
    """Primal/dual feasibility, complementary slackness and duality gap."""
    v = np.asarray(primal, dtype=float)
    mu = np.asarray(dual, dtype=float)
    slack = problem.A @ v - problem.b
    cv = float(problem.objective @ v)
    return {
        "primal_infeasibility": float(max(0.0, -slack.min())) if slack.size else 0.0,
        "dual_infeasibility": float(np.max(np.abs(problem.A.T @ mu - problem.objective), initial=0.0)),
        "dual_negativity": float(max(0.0, -mu.min())) if mu.size else 0.0,
        "complementarity": float(np.max(np.abs(mu * slack), initial=0.0)),
        "duality_gap": abs(cv - float(problem.b @ mu)) / (1 + abs(cv)),
    }


def _check_certificate(res: dict, tol: float) -> bool:
    return all(val <= tol for val in res.values())


class _DualSimplex:
    """Revised simplex over ``max cost.mu, Acol mu = rhs, mu >= 0``.

    Columns ``0..K-1`` are the primal constraint rows; ``K..K+n-1`` are
    artificial columns ``sign_i e_i``.
    """

    def __init__(self, A: sp.csr_matrix, rhs: np.ndarray, b: np.ndarray, max_iters: int,
                 refactor_every: int = 64, degenerate_limit: int = 50):
        self.A = A
        self.K, self.n = A.shape
        self.rhs = rhs
        self.b = b
        self.sign = np.where(rhs < 0, -1.0, 1.0)
        self.max_iters = max_iters
        self.refactor_every = refactor_every
        self.degenerate_limit = degenerate_limit
        self.iterations = 0

    def column(self, j: int) -> np.ndarray:
        if j < self.K:
            col = np.zeros(self.n)
            lo, hi = self.A.indptr[j], self.A.indptr[j + 1]
            col[self.A.indices[lo:hi]] = self.A.data[lo:hi]
            return col
        col = np.zeros(self.n)
        col[j - self.K] = self.sign[j - self.K]
        return col

    def basis_matrix(self, basis) -> np.ndarray:
        return np.column_stack([self.column(j) for j in basis])

    def set_basis(self, basis) -> bool:
        self.basis = np.array(basis, dtype=np.int64)
        try:
            self.Binv = sla.inv(self.basis_matrix(self.basis))
        except (sla.LinAlgError, ValueError):
            return False
        if not np.all(np.isfinite(self.Binv)):
            return False
        self.x = self.Binv @ self.rhs
        return True

    def refactor(self):
        if not self.set_basis(self.basis):
            raise LpError("singular basis on refactorization", self.iterations)

    def multipliers(self, cost_basic: np.ndarray) -> np.ndarray:
        return self.Binv.T @ cost_basic

    def run(self, cost_fn, allow_artificial_entry: bool):
        """Iterate to optimality. ``cost_fn(indices)`` gives column costs.

        Returns ``("optimal", y)`` or ``("unbounded", entering, w)``.
        """
        K, n = self.K, self.n
        ks = np.arange(K)
        art = np.arange(K, K + n)
        cost_rows = cost_fn(ks)
        cost_art = cost_fn(art)
        degenerate_run = 0
        since_refactor = 0
        while True:
            if self.iterations >= self.max_iters:
                raise LpError("simplex iteration limit reached", self.iterations,
                              {"max_basic_negativity": float(max(0.0, -self.x.min()))})
            cb = np.where(self.basis < K, cost_rows[np.minimum(self.basis, K - 1)],
                          cost_art[np.maximum(self.basis - K, 0)])
            y = self.multipliers(cb)
            d = cost_rows - self.A @ y
            basic_mask = np.zeros(K + n, dtype=bool)
            basic_mask[self.basis] = True
            d_all = np.concatenate([d, cost_art - self.sign * y])
            d_all[basic_mask] = -np.inf
            if not allow_artificial_entry:
                d_all[K:] = -np.inf
            bland = degenerate_run >= self.degenerate_limit
            candidates = np.flatnonzero(d_all > OPT_TOL * (1 + np.abs(np.concatenate([self.b, np.zeros(n)]))))
            if candidates.size == 0:
                return ("optimal", y)
            e = int(candidates[0]) if bland else int(candidates[np.argmax(d_all[candidates])])
            w = self.Binv @ self.column(e)
            # artificial basics stuck at zero must leave before they could go positive
            art_rows = np.flatnonzero((self.basis >= K) & (np.abs(w) > PIVOT_TOL) & (self.x <= FEAS_TOL)) \
                if not allow_artificial_entry else np.array([], dtype=np.int64)
            if art_rows.size:
                r = int(art_rows[0])
                theta = 0.0
            else:
                pos = np.flatnonzero(w > PIVOT_TOL)
                if pos.size == 0:
                    return ("unbounded", e, w)
                ratios = np.maximum(self.x[pos], 0.0) / w[pos]
                tmin = ratios.min()
                ties = pos[ratios <= tmin + 1e-12 * (1 + tmin)]
                if bland:
                    r = int(ties[np.argmin(self.basis[ties])])
                else:
                    r = int(ties[np.argmax(w[ties])])
                theta = float(max(self.x[r], 0.0) / w[r])
            self.x = self.x - theta * w
            self.x[r] = theta
            self.basis[r] = e
            piv = w[r]
            row = self.Binv[r] / piv
            self.Binv -= np.outer(w, row)
            self.Binv[r] = row
            self.iterations += 1
            since_refactor += 1
            degenerate_run = degenerate_run + 1 if theta <= 1e-14 else 0
            if since_refactor >= self.refactor_every:
                self.refactor()
                since_refactor = 0


def _initial_basis_from_heads(problem: LpProblem):
    if problem.heads is None:
        return None
    first = np.full(problem.num_vars, -1, dtype=np.int64)
    order = np.arange(problem.num_constraints)[::-1]
    first[problem.heads[order]] = order
    if np.any(first < 0):
        return None
    return first


def solve_lp(problem: LpProblem, tol: float = FEAS_TOL, max_iters: int = 200_000,
             initial_basis=None) -> LpSolution:
    """Solve ``min c.v s.t. A v >= b``.

    ``initial_basis`` (one constraint row per variable) warm-starts the dual
    simplex; when absent, one is derived from ``problem.heads`` if possible,
    otherwise a phase-1 start from artificial columns is used.
    """
    A, b, c = problem.A, problem.b, problem.objective
    K, n = A.shape
    if n == 0:
        feasible = bool(np.all(b <= tol))
        return LpSolution("optimal" if feasible else "infeasible", np.zeros(0), np.zeros(K), 0.0)
    core = _DualSimplex(A, c, b, max_iters)
    if initial_basis is None:
        initial_basis = _initial_basis_from_heads(problem)
    started = False
    if initial_basis is not None and len(initial_basis) == n:
        if core.set_basis(initial_basis) and core.x.min() >= -tol:
            core.x = np.maximum(core.x, 0.0)
            started = True
    if not started:
        core.set_basis(np.arange(K, K + n))
        # phase 1: maximize -sum(artificials)
        phase1_cost = lambda idx: np.where(idx >= K, -1.0, 0.0)  # noqa: E731
        status = core.run(phase1_cost, allow_artificial_entry=True)
        core.refactor()
        infeas = float(np.sum(np.where(core.basis >= K, core.x, 0.0)))
        if infeas > tol * (1 + np.abs(c).sum()):
            return _dual_infeasible(problem, core, status[1], tol, max_iters)
        _drive_out_artificials(core)
    phase2_cost = lambda idx: np.where(idx < K, b[np.minimum(idx, K - 1)], 0.0)  # noqa: E731
    status = core.run(phase2_cost, allow_artificial_entry=False)
    if status[0] == "unbounded":
        _, e, w = status
        farkas = np.zeros(K)
        farkas[e] = 1.0
        rows = core.basis < K
        farkas[core.basis[rows]] = -w[rows]
        return LpSolution("infeasible", iterations=core.iterations, farkas=farkas,
                          residuals={"farkas_ascent": float(b @ farkas)})
    core.refactor()
    cb = np.where(core.basis < K, b[np.minimum(core.basis, K - 1)], 0.0)
    v = core.multipliers(cb)
    mu = np.zeros(K)
    rows = core.basis < K
    mu[core.basis[rows]] = np.maximum(core.x[rows], 0.0)
    res = certify(problem, v, mu)
    if not _check_certificate(res, tol):
        raise LpError("optimal basis failed certification", core.iterations, res)
    return LpSolution("optimal", v, mu, float(c @ v), core.iterations, residuals=res)


def _drive_out_artificials(core: _DualSimplex):
    K = core.K
    for r in np.flatnonzero(core.basis >= K):
        row = core.Binv[r]
        alpha = core.A @ row
        alpha[core.basis[core.basis < K]] = 0.0
        cand = np.flatnonzero(np.abs(alpha) > 1e-9)
        if cand.size == 0:
            continue  # redundant row of A^T; artificial stays basic at zero
        e = int(cand[np.argmax(np.abs(alpha[cand]))])
        core.basis[r] = e
        core.refactor()


def _dual_infeasible(problem: LpProblem, core: _DualSimplex, y, tol, max_iters) -> LpSolution:
    """A^T mu = c has no nonnegative solution: primal unbounded or infeasible."""
    ray = np.asarray(y, dtype=float)
    feas = solve_lp(LpProblem(np.zeros(problem.num_vars), problem.A, problem.b), tol, max_iters)
    if feas.status == "infeasible":
        return LpSolution("infeasible", iterations=core.iterations + feas.iterations,
                          farkas=feas.farkas, residuals=feas.residuals)
    return LpSolution("unbounded", primal=feas.primal, iterations=core.iterations + feas.iterations,
                      ray=ray, residuals={"ray_descent": float(problem.objective @ ray),
                                          "ray_infeasibility": float(max(0.0, -(problem.A @ ray).min()))})


# MDP exact LP ------------------------------------------------------------------------

def build_exact_lp(mdp: Mdp, c) -> LpProblem:
    """Exact LP ``min c.V s.t. V >= R_u + lambda P_u V`` with one row per pair."""
    c = _check_cost(c, mdp.num_states)
    H = sp.csr_matrix((np.ones(mdp.num_pairs), (np.arange(mdp.num_pairs), mdp.pair_state)),
                      shape=(mdp.num_pairs, mdp.num_states))
    return LpProblem(c, (H - mdp.discount * mdp.P).tocsr(), mdp.rewards.copy(), mdp.pair_state)


def _check_cost(c, n) -> np.ndarray:
    c = np.asarray(c, dtype=float)
    if c.ndim != 1 or c.size != n:
        raise DimensionError("cost vector", n, c.size)
    if np.any(c < 0):
        raise ValidationError(f"cost vector has a negative entry at index {int(np.argmax(c < 0))}")
    return c


def occupancy_duals(mdp: Mdp, pi: Policy, c) -> np.ndarray:
    """Dual of the exact LP at the basis of ``pi``: mu = (I - lambda P_pi)^{-T} c on pi's pairs."""
    import scipy.sparse.linalg as spla

    P = mdp.P[pi.pairs]
    M = (sp.identity(mdp.num_states, format="csc") - mdp.discount * P).T.tocsc()
    occ = spla.splu(M).solve(np.asarray(c, dtype=float))
    mu = np.zeros(mdp.num_pairs)
    mu[pi.pairs] = np.maximum(occ, 0.0)
    return mu


def solve_mdp_exact_lp(mdp: Mdp, c, tol: float = FEAS_TOL) -> LpSolution:
    """Exact LP of an MDP via policy iteration.

    The primal is V* whatever the nonnegative ``c``; at ``c = 0`` it is still
    returned as a Bellman-feasible point.
    """
    c = _check_cost(c, mdp.num_states)
    v, pi, iters = policy_iteration(mdp)
    mu = occupancy_duals(mdp, pi, c)
    problem = build_exact_lp(mdp, c)
    res = certify(problem, v, mu)
    if not _check_certificate(res, tol):
        raise LpError("exact-LP certificate failed", iters, res)
    return LpSolution("optimal", v, mu, float(c @ v), iters, residuals=res)
