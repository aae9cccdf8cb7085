"""Dense numerical kernels: rank, minimum-norm solves, LP and QP solvers.

Everything here works on small dense problems (tens of variables, a few
thousand constraints at most) and is deterministic for a fixed input.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ResidualTooLarge, ShapeMismatch

Bounds = Optional[Sequence[tuple[Optional[float], Optional[float]]]]

LP_FEAS_TOL = 1e-8
KKT_TOL = 1e-6


class StatusKind(str, enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"
    NUMERICAL_FAILURE = "NumericalFailure"


@dataclass
class SolveStatus:
    kind: StatusKind
    solution: Optional[np.ndarray] = None
    objective_value: Optional[float] = None
    # inequality multipliers (>= 0), one per row of the stacked constraints
    multipliers: Optional[np.ndarray] = None
    active_set: tuple[int, ...] = ()
    iterations: int = 0
    # largest right-hand-side relaxation (in units of 1 + |b_i|) the QP
    # needed to become feasible; nonzero only below LP_FEAS_TOL
    relaxation: float = 0.0

    def __post_init__(self):
        if (self.kind is StatusKind.OPTIMAL) != (self.solution is not None):
            raise ValueError("solution must be present iff the status is Optimal")

    @property
    def ok(self) -> bool:
        return self.kind is StatusKind.OPTIMAL


def _as_problem_arrays(n_z, ineq_lhs, ineq_rhs):
    if ineq_lhs is None or len(np.atleast_1d(ineq_rhs)) == 0:
        return np.zeros((0, n_z)), np.zeros(0)
    lhs = np.atleast_2d(np.asarray(ineq_lhs, dtype=float))
    rhs = np.atleast_1d(np.asarray(ineq_rhs, dtype=float)).ravel()
    if lhs.shape != (rhs.size, n_z):
        raise ShapeMismatch(
            f"constraint matrix has shape {lhs.shape}, expected ({rhs.size}, {n_z})"
        )
    return lhs, rhs


def _bound_rows(n_z: int, bounds: Bounds):
    rows, rhs = [], []
    if bounds is None:
        return np.zeros((0, n_z)), np.zeros(0)
    if len(bounds) != n_z:
        raise ShapeMismatch(f"expected {n_z} bounds, got {len(bounds)}")
    for j, (lo, hi) in enumerate(bounds):
        if hi is not None and np.isfinite(hi):
            e = np.zeros(n_z)
            e[j] = 1.0
            rows.append(e)
            rhs.append(float(hi))
        if lo is not None and np.isfinite(lo):
            e = np.zeros(n_z)
            e[j] = -1.0
            rows.append(e)
            rhs.append(-float(lo))
    if not rows:
        return np.zeros((0, n_z)), np.zeros(0)
    return np.array(rows), np.array(rhs)


@dataclass
class LpProblem:
    """min objective @ z  s.t.  ineq_lhs @ z <= ineq_rhs,  lo <= z <= hi."""

    objective: np.ndarray
    ineq_lhs: np.ndarray
    ineq_rhs: np.ndarray
    bounds: Bounds = None

    def __post_init__(self):
        self.objective = np.atleast_1d(np.asarray(self.objective, dtype=float)).ravel()
        self.ineq_lhs, self.ineq_rhs = _as_problem_arrays(
            self.objective.size, self.ineq_lhs, self.ineq_rhs
        )
        for arr in (self.objective, self.ineq_lhs, self.ineq_rhs):
            if not np.all(np.isfinite(arr)):
                raise ValueError("LP data must be finite")

    def stacked(self):
        """Constraint rows with the variable bounds appended as half-spaces."""
        b_lhs, b_rhs = _bound_rows(self.objective.size, self.bounds)
        return np.vstack([self.ineq_lhs, b_lhs]), np.concatenate([self.ineq_rhs, b_rhs])


@dataclass
class QpProblem:
    """min 0.5 z' quad z + lin' z  s.t.  ineq_lhs z <= ineq_rhs, bounds."""

    quad: np.ndarray
    lin: np.ndarray
    ineq_lhs: Optional[np.ndarray] = None
    ineq_rhs: Optional[np.ndarray] = None
    bounds: Bounds = None

    def __post_init__(self):
        self.quad = np.atleast_2d(np.asarray(self.quad, dtype=float))
        self.lin = np.atleast_1d(np.asarray(self.lin, dtype=float)).ravel()
        n = self.lin.size
        if self.quad.shape != (n, n):
            raise ShapeMismatch(f"quad has shape {self.quad.shape}, expected ({n}, {n})")
        if not np.allclose(self.quad, self.quad.T, rtol=0.0, atol=1e-12 * max(1.0, np.abs(self.quad).max())):
            raise ValueError("quad must be symmetric")
        if np.linalg.eigvalsh(self.quad).min() < -1e-10:
            raise ValueError("quad must be positive semidefinite")
        self.ineq_lhs, self.ineq_rhs = _as_problem_arrays(n, self.ineq_lhs, self.ineq_rhs)
        for arr in (self.quad, self.lin, self.ineq_lhs, self.ineq_rhs):
            if not np.all(np.isfinite(arr)):
                raise ValueError("QP data must be finite")

    def stacked(self):
        b_lhs, b_rhs = _bound_rows(self.lin.size, self.bounds)
        return np.vstack([self.ineq_lhs, b_lhs]), np.concatenate([self.ineq_rhs, b_rhs])

    def objective(self, z) -> float:
        z = np.asarray(z, dtype=float)
        return float(0.5 * z @ self.quad @ z + self.lin @ z)


# ---------------------------------------------------------------------------
# rank and least squares


def default_rank_tol(m: np.ndarray, s: Optional[np.ndarray] = None) -> float:
    if m.size == 0:
        return 0.0
    if s is None:
        s = np.linalg.svd(m, compute_uv=False)
    return max(m.shape) * np.finfo(float).eps * (s[0] if s.size else 0.0)


def numeric_rank(m, tol: Optional[float] = None) -> int:
    """Number of singular values strictly above ``tol``."""
    m = np.atleast_2d(np.asarray(m, dtype=float))
    if m.size == 0:
        return 0
    s = np.linalg.svd(m, compute_uv=False)
    if tol is None:
        tol = default_rank_tol(m, s)
    return int(np.sum(s > tol))


def min_norm_solve(w, target, rtol: float = 1e-9, rank_tol: Optional[float] = None) -> np.ndarray:
    """Minimum Frobenius-norm ``R`` with ``R @ w = target``.

    Raises ResidualTooLarge if the system has no exact solution within
    ``rtol * ||target||_F``.
    """
    w = np.atleast_2d(np.asarray(w, dtype=float))
    target = np.atleast_2d(np.asarray(target, dtype=float))
    if target.shape[1] != w.shape[1]:
        raise ShapeMismatch(f"target has {target.shape[1]} columns, w has {w.shape[1]}")
    u, s, vt = np.linalg.svd(w, full_matrices=False)
    tol = default_rank_tol(w, s) if rank_tol is None else rank_tol
    keep = s > tol
    # R = target pinv(w), pinv(w) = V S^-1 U'
    r = (target @ vt[keep].T / s[keep]) @ u[:, keep].T
    resid = np.linalg.norm(r @ w - target)
    scale = np.linalg.norm(target)
    if resid > rtol * scale and resid > np.finfo(float).tiny:
        raise ResidualTooLarge(
            f"no exact solution: residual {resid:.3e} exceeds {rtol:g} x {scale:.3e}"
        )
    return r


# ---------------------------------------------------------------------------
# linear programming

_PIV_TOL = 1e-9
_COST_TOL = 1e-10
_DEGENERATE_STREAK = 20


def _revised_simplex(mat, q, cost, basis, allowed, artificial, max_iter):
    """Minimize ``cost @ y`` s.t. ``mat @ y = q, y >= 0`` from a feasible basis.

    The basis matrix is refactorized every iteration; with one row per
    primal variable it is tiny, so this costs little and avoids drift.
    Pricing is Dantzig's rule, switching to Bland's rule after a streak of
    degenerate pivots so cycling cannot occur.  Basic artificial columns
    (value zero) block any step that would move them.
    Returns (status, basis, multipliers, iterations).
    """
    degenerate = 0
    pi = None
    for it in range(max_iter):
        bmat = mat[:, basis]
        try:
            x_b = np.linalg.solve(bmat, q)
            pi = np.linalg.solve(bmat.T, cost[basis])
        except np.linalg.LinAlgError:
            return "singular", basis, None, it
        d = cost - pi @ mat
        cand = np.flatnonzero((d < -_COST_TOL * (1.0 + np.abs(cost).max())) & allowed)
        if cand.size:
            in_basis = np.zeros(mat.shape[1], dtype=bool)
            in_basis[basis] = True
            cand = cand[~in_basis[cand]]
        if cand.size == 0:
            return "optimal", basis, pi, it
        bland = degenerate >= _DEGENERATE_STREAK
        col = int(cand[0]) if bland else int(cand[np.argmin(d[cand])])
        direction = np.linalg.solve(bmat, mat[:, col])
        tol = _PIV_TOL * max(1.0, np.abs(direction).max())
        art = artificial[basis]
        blocking = (direction > tol) | (art & (np.abs(direction) > tol))
        rows = np.flatnonzero(blocking)
        if rows.size == 0:
            return "unbounded", basis, pi, it
        ratios = np.where(art[rows], 0.0, np.maximum(x_b[rows], 0.0) / np.abs(direction[rows]))
        best = ratios.min()
        ties = rows[ratios <= best + 1e-12 * (1.0 + best)]
        row = int(ties[np.argmin(basis[ties])])
        degenerate = degenerate + 1 if best <= 1e-12 else 0
        basis = basis.copy()
        basis[row] = col
    return "iterlimit", basis, pi, max_iter


def _dual_standard_form(a, b, c, max_iter):
    """Solve ``min b'y s.t. a'y = -c, y >= 0`` by the two-phase method.

    Returns (status, y, primal_z, iterations); ``primal_z`` are the simplex
    multipliers of the optimal basis, i.e. the primal minimizer.
    """
    n_c, n = a.shape
    mat = a.T.copy()
    q = -c.copy()
    sign = np.where(q < 0, -1.0, 1.0)
    mat *= sign[:, None]
    q *= sign
    full = np.hstack([mat, np.eye(n)])
    artificial = np.zeros(n_c + n, dtype=bool)
    artificial[n_c:] = True
    basis = np.arange(n_c, n_c + n)
    cost1 = artificial.astype(float)
    allowed = np.ones(n_c + n, dtype=bool)
    art_none = np.zeros(n_c + n, dtype=bool)
    status, basis, _, it1 = _revised_simplex(full, q, cost1, basis, allowed, art_none, max_iter)
    if status != "optimal":
        return ("iterlimit" if status == "iterlimit" else "singular"), None, None, it1
    x_b = np.linalg.solve(full[:, basis], q)
    infeas = float(np.sum(x_b[artificial[basis]]))
    if infeas > 1e-9 * (1.0 + np.abs(q).max()):
        return "infeasible", None, None, it1
    # push zero-level artificials out where a structural column can replace them
    for r in np.flatnonzero(artificial[basis]):
        binv_row = np.linalg.solve(full[:, basis].T, np.eye(n)[r])
        coeffs = binv_row @ mat
        in_basis = np.zeros(n_c, dtype=bool)
        in_basis[basis[basis < n_c]] = True
        ok = np.flatnonzero((np.abs(coeffs) > 1e-7) & ~in_basis)
        if ok.size:
            basis = basis.copy()
            basis[r] = int(ok[np.argmax(np.abs(coeffs[ok]))])
    cost2 = np.concatenate([b, np.zeros(n)])
    allowed = ~artificial
    status, basis, pi, it2 = _revised_simplex(full, q, cost2, basis, allowed, artificial, max_iter)
    if status != "optimal":
        return status, None, None, it1 + it2
    x_b = np.linalg.solve(full[:, basis], q)
    y = np.zeros(n_c + n)
    y[basis] = np.maximum(x_b, 0.0)
    # multipliers of the sign-flipped system map back to the primal point
    z = pi * sign
    return "optimal", y[:n_c], z, it1 + it2


def _lp_rows(a, b, c, max_iter):
    n_c, n = a.shape
    if n_c == 0:
        if np.any(c != 0):
            return SolveStatus(StatusKind.UNBOUNDED)
        return SolveStatus(StatusKind.OPTIMAL, np.zeros(n), 0.0, np.zeros(0))
    status, y, z, its = _dual_standard_form(a, b, c, max_iter)
    if status in ("iterlimit", "singular"):
        return SolveStatus(StatusKind.NUMERICAL_FAILURE, iterations=its)
    if status == "unbounded":
        # dual unbounded: primal infeasible
        return SolveStatus(StatusKind.INFEASIBLE, iterations=its)
    if status == "infeasible":
        # dual infeasible: primal is infeasible or unbounded; decide with
        # min s  s.t.  a z - s <= b,  s >= 0  (always feasible and bounded)
        aux_a = np.vstack([np.hstack([a, -np.ones((n_c, 1))]), -np.eye(1, n + 1, n)])
        aux_b = np.concatenate([b, [0.0]])
        aux = _lp_rows(aux_a, aux_b, np.eye(1, n + 1, n).ravel(), max_iter)
        if not aux.ok:
            return SolveStatus(StatusKind.NUMERICAL_FAILURE, iterations=its)
        if aux.objective_value > LP_FEAS_TOL * (1.0 + np.abs(b).max()):
            return SolveStatus(StatusKind.INFEASIBLE, iterations=its)
        return SolveStatus(StatusKind.UNBOUNDED, iterations=its)
    scale = 1.0 + np.abs(b)
    if np.any(a @ z - b > LP_FEAS_TOL * scale):
        return SolveStatus(StatusKind.NUMERICAL_FAILURE, iterations=its)
    if np.linalg.norm(c + a.T @ y, np.inf) > KKT_TOL * (1.0 + np.abs(c).max()):
        return SolveStatus(StatusKind.NUMERICAL_FAILURE, iterations=its)
    active = tuple(int(i) for i in np.flatnonzero(y > 0))
    return SolveStatus(StatusKind.OPTIMAL, z, float(c @ z), y, active, its)



def solve_lp(p: LpProblem, max_iter: int = 5000) -> SolveStatus:
    """Solve an inequality-form LP with a dense two-phase simplex.

    The simplex runs on the dual standard form, whose tableau has one row
    per variable; the primal minimizer is recovered from the optimal dual
    basis by solving its active constraints.  ``multipliers`` holds the dual
    certificate (rows first, then the bound rows in the order produced by
    :meth:`LpProblem.stacked`).
    """
    a, b = p.stacked()
    return _lp_rows(a, b, p.objective, max_iter)


def linprog_max(direction, lhs, rhs, max_iter: int = 5000) -> SolveStatus:
    """Maximize ``direction @ x`` over ``lhs x <= rhs``.

    The returned objective_value is the maximum (not its negation).
    """
    st = _lp_rows(np.asarray(lhs, float), np.asarray(rhs, float), -np.asarray(direction, float), max_iter)
    if st.ok:
        st.objective_value = -st.objective_value
    return st


# ---------------------------------------------------------------------------
# quadratic programming


_QP_START_TOL = 1e-12


@dataclass
class QpWarmStart:
    """Previous solution and working set, reused by the next solve."""

    solution: np.ndarray
    active_set: tuple[int, ...] = field(default_factory=tuple)


def _elastic_start(a, b, scale):
    """Lexicographic least-violation point of ``a z <= b``.

    First minimize the largest scaled violation ``t``; rows with a positive
    multiplier are violated by ``t`` in every minimizer, so they are fixed
    at that relaxation and the remaining rows are minimized again.  Rows
    that can be satisfied exactly are never relaxed, which keeps the
    inconsistency on the rows that force it.

    Returns ``(z, t)`` with ``t`` the per-row relaxation, ``(None, t_max)``
    when the largest violation exceeds LP_FEAS_TOL, and ``(None, None)`` if
    an LP fails.
    """
    n_c, n = a.shape
    relax = np.zeros(n_c)
    fixed = np.zeros(n_c, dtype=bool)
    cost = np.eye(1, n + 1, n).ravel()
    z = None
    for _ in range(n_c):
        free = ~fixed
        lhs = np.vstack([np.hstack([a, -(scale * free)[:, None]]), -cost])
        rhs = np.concatenate([b + relax * scale, [0.0]])
        st = _lp_rows(lhs, rhs, cost, 5000)
        if not st.ok:
            return None, None
        z, t = st.solution[:n], float(st.solution[n])
        if z is not None and t > LP_FEAS_TOL:
            return None, t
        if t <= 1e-15:
            break
        y = st.multipliers[:n_c]
        forced = free & (y > 1e-9 * max(y.max(), 1.0))
        if not forced.any():
            forced = free
        relax[forced] = t
        fixed |= forced
    # the LP point satisfies its rows only to rounding; absorb that too
    relax = np.maximum(relax, (a @ z - b) / scale)
    return z, np.maximum(relax, 0.0)


def _eqp_step(g_mat, grad, a_w):
    """Step and multipliers of the equality-constrained subproblem.

    Null-space method: with ``a_w' = Q R`` and ``Z`` spanning the null
    space of ``a_w``, the step is ``Z y`` where ``(Z' G Z) y = -Z' grad``.
    A full working set gives an exact zero step.
    """
    n = g_mat.shape[0]
    k = a_w.shape[0]
    if k == 0:
        return np.linalg.solve(g_mat, -grad), np.zeros(0)
    q_full, r_full = np.linalg.qr(a_w.T, mode="complete")
    y_basis, z_basis = q_full[:, :k], q_full[:, k:]
    if z_basis.shape[1]:
        reduced = z_basis.T @ g_mat @ z_basis
        step = z_basis @ np.linalg.solve(reduced, -(z_basis.T @ grad))
    else:
        step = np.zeros(n)
    # a_w' lam = -(grad + G step)  ->  R lam = -Y' (grad + G step)
    lam = np.linalg.solve(r_full[:k], -(y_basis.T @ (grad + g_mat @ step)))
    return step, lam


def solve_qp(
    p: QpProblem,
    warm_start: Optional[QpWarmStart] = None,
    max_iter: Optional[int] = None,
) -> SolveStatus:
    """Primal active-set method for a strictly convex QP.

    A feasible starting point comes from ``warm_start`` when it is still
    feasible, otherwise from an LP feasibility problem.  The working set is
    carried in the result so consecutive, nearly identical solves can start
    from it.
    """
    a, b = p.stacked()
    g_mat, q = p.quad, p.lin
    n = q.size
    n_c = b.size
    scale = 1.0 + np.abs(b)
    if max_iter is None:
        max_iter = 50 * (n + n_c) + 100
    try:
        x_free = np.linalg.solve(g_mat, -q)
    except np.linalg.LinAlgError:
        return SolveStatus(StatusKind.NUMERICAL_FAILURE)
    # shortcuts must be feasible to rounding, not to the reporting tolerance
    strict = _QP_START_TOL * scale
    if n_c == 0 or np.all(a @ x_free - b <= strict):
        return SolveStatus(
            StatusKind.OPTIMAL, x_free, p.objective(x_free), np.zeros(n_c), (), 0
        )

    x = None
    work: list[int] = []
    if warm_start is not None and warm_start.solution.shape == (n,):
        x0 = np.asarray(warm_start.solution, dtype=float)
        if np.all(a @ x0 - b <= strict):
            x = x0.copy()
            slack = b - a @ x
            for i in warm_start.active_set:
                if 0 <= i < n_c and abs(slack[i]) <= 1e-9 * scale[i]:
                    cand = work + [i]
                    if numeric_rank(a[cand]) == len(cand):
                        work = cand
    relax = 0.0
    if x is None:
        x, row_relax = _elastic_start(a, b, scale)
        if x is None:
            kind = StatusKind.NUMERICAL_FAILURE if row_relax is None else StatusKind.INFEASIBLE
            return SolveStatus(kind)
        # nearly infeasible problems: only the rows that force the
        # inconsistency are relaxed, each by its least possible amount
        b = b + row_relax * scale
        relax = float(row_relax.max(initial=0.0))

    lam = np.zeros(0)
    for it in range(max_iter):
        grad = g_mat @ x + q
        a_w = a[work] if work else np.zeros((0, n))
        try:
            step, lam = _eqp_step(g_mat, grad, a_w)
        except np.linalg.LinAlgError:
            return SolveStatus(StatusKind.NUMERICAL_FAILURE, iterations=it)
        if np.linalg.norm(step, np.inf) <= 1e-12 * (1.0 + np.linalg.norm(x, np.inf)):
            if lam.size == 0 or lam.min() >= -1e-10 * (1.0 + np.abs(lam).max()):
                break
            drop = int(np.argmin(lam))
            work.pop(drop)
            continue
        ap = a @ step
        slack = np.maximum(b - a @ x, 0.0)
        mask = ap > 1e-14 * (1.0 + np.abs(a).max(axis=1) * np.linalg.norm(step, np.inf))
        if work:
            mask[work] = False
        alpha, block = 1.0, -1
        if np.any(mask):
            idx = np.flatnonzero(mask)
            ratios = slack[idx] / ap[idx]
            k = int(np.argmin(ratios))
            if ratios[k] < 1.0:
                alpha, block = float(ratios[k]), int(idx[k])
        x = x + alpha * step
        if block >= 0:
            work.append(block)
    else:
        return SolveStatus(StatusKind.NUMERICAL_FAILURE, iterations=max_iter)

    mult = np.zeros(n_c)
    if work:
        mult[work] = np.maximum(lam, 0.0)
    if np.any(a @ x - b > LP_FEAS_TOL * scale):
        return SolveStatus(StatusKind.NUMERICAL_FAILURE, iterations=it)
    resid = g_mat @ x + q + a.T @ mult
    if np.linalg.norm(resid, np.inf) > KKT_TOL * (1.0 + np.abs(q).max() + np.abs(g_mat).max()):
        return SolveStatus(StatusKind.NUMERICAL_FAILURE, iterations=it)
    return SolveStatus(
        StatusKind.OPTIMAL, x, p.objective(x), mult, tuple(sorted(work)), it, relax
    )
