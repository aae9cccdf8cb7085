"""Barrier function on the invariant set and the QP safety filters.

The barrier is the smallest slack of the invariant set's inequalities,
``h(xi) = min(c - H xi)``.  The filter picks the input closest to the
nominal one such that ``h`` decays by at most the factor ``1 - lambda``,
with ``lambda`` itself a decision variable in ``[lambda_min, 1]``.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ShapeMismatch
from .geometry import Polytope, box_polytope
from .model import DataDrivenModel
from .numkit import QpProblem, QpWarmStart, StatusKind, solve_qp

DEFAULT_BETA = 1e6
MPSF_REGULARIZATION = 1e-9


@dataclass(frozen=True)
class FilterConfig:
    lambda_min: float = 1.0
    beta: float = DEFAULT_BETA
    u_set: Polytope = field(default_factory=lambda: box_polytope([-1.0], [1.0]))
    qp_tol: float = 1e-8
    # keep u in U as explicit QP rows (it is already implied by the safe set)
    explicit_input_constraints: bool = True

    def __post_init__(self):
        if not 0.0 < self.lambda_min <= 1.0:
            raise ValueError(f"lambda_min must lie in (0, 1], got {self.lambda_min}")
        if not (np.isfinite(self.beta) and self.beta > 0):
            raise ValueError(f"beta must be positive and finite, got {self.beta}")


@dataclass
class FilterResult:
    u_safe: Optional[np.ndarray]
    lam: float
    h_before: float
    h_after_predicted: float
    status: StatusKind
    objective: float
    active_set: tuple = ()
    # right-hand-side relaxation the solver needed (nonzero only at rounding level)
    relaxation: float = 0.0

    @property
    def ok(self) -> bool:
        return self.status is StatusKind.OPTIMAL

    def to_dict(self) -> dict:
        return {
            "u_safe": None if self.u_safe is None else self.u_safe.tolist(),
            "lambda": self.lam,
            "h_before": self.h_before,
            "h_after_predicted": self.h_after_predicted,
            "status": self.status.value,
            "objective": self.objective,
            "relaxation": self.relaxation,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def h_value(safe_set: Polytope, xi) -> float:
    """``min(c - H xi)``: positive inside, zero on the boundary, negative outside."""
    xi = np.asarray(xi, dtype=float).ravel()
    if xi.size != safe_set.dim:
        raise ShapeMismatch(f"state has {xi.size} entries, set dimension is {safe_set.dim}")
    if safe_set.empty:
        return -np.inf
    if safe_set.n_rows == 0:
        return np.inf
    return float(np.min(safe_set.rhs - safe_set.lhs @ xi))


def h_values(safe_set: Polytope, xis) -> np.ndarray:
    xis = np.atleast_2d(np.asarray(xis, dtype=float))
    return np.min(safe_set.rhs[None, :] - xis @ safe_set.lhs.T, axis=1)


def safe_input_hyperplane(model: DataDrivenModel, safe_set: Polytope, xi):
    """``(H b_e, c - H a_e xi)``: inputs satisfying these rows keep xi+ in the set."""
    xi = np.asarray(xi, dtype=float).ravel()
    if xi.size != model.n_xi or safe_set.dim != model.n_xi:
        raise ShapeMismatch("state, model and safe set dimensions disagree")
    return safe_set.lhs @ model.b_e, safe_set.rhs - safe_set.lhs @ (model.a_e @ xi)


def _filter_qp(model, safe_set, cfg, xi, u_nominal, h0):
    m = model.m
    g_u, b_xi = safe_input_hyperplane(model, safe_set, xi)
    # H b_e u - h0 * lambda <= c - H a_e xi - h0
    rows = [np.hstack([g_u, np.full((g_u.shape[0], 1), -h0)])]
    rhs = [b_xi - h0]
    if cfg.explicit_input_constraints:
        rows.append(np.hstack([cfg.u_set.lhs, np.zeros((cfg.u_set.n_rows, 1))]))
        rhs.append(cfg.u_set.rhs)
    quad = 2.0 * np.diag(np.concatenate([np.ones(m), [cfg.beta]]))
    lin = np.concatenate([-2.0 * u_nominal, [0.0]])
    bounds = [(None, None)] * m + [(cfg.lambda_min, 1.0)]
    return QpProblem(quad, lin, np.vstack(rows), np.concatenate(rhs), bounds)


def cbf_filter(
    model: DataDrivenModel,
    safe_set: Polytope,
    cfg: FilterConfig,
    xi,
    u_nominal,
    warm_start: Optional[QpWarmStart] = None,
) -> FilterResult:
    """Minimally invasive filter with adaptive decay rate.

    Solves, over ``(u, lambda)``::

        min ||u - u_nominal||^2 + beta * lambda^2
        s.t. H (a_e xi + b_e u) <= c - (1 - lambda) h(xi) 1
             u in U,  lambda_min <= lambda <= 1

    ``h(xi)`` is a number at solve time, so the problem is a QP.  An
    infeasible problem means ``xi`` is outside the invariant set; it is
    reported, never patched over.
    """
    xi = np.asarray(xi, dtype=float).ravel()
    u_nominal = np.atleast_1d(np.asarray(u_nominal, dtype=float)).ravel()
    if xi.size != model.n_xi or u_nominal.size != model.m:
        raise ShapeMismatch("state or nominal input has the wrong size")
    h0 = h_value(safe_set, xi)
    qp = _filter_qp(model, safe_set, cfg, xi, u_nominal, h0)
    st = solve_qp(qp, warm_start=warm_start)
    if not st.ok:
        return FilterResult(None, float("nan"), h0, float("nan"), st.kind, float("nan"))
    u = st.solution[: model.m]
    lam = float(np.clip(st.solution[model.m], cfg.lambda_min, 1.0))
    h1 = h_value(safe_set, model.a_e @ xi + model.b_e @ u)
    obj = float(np.sum((u - u_nominal) ** 2) + cfg.beta * lam ** 2)
    return FilterResult(u, lam, h0, h1, st.kind, obj, st.active_set, st.relaxation)


class SafetyFilterSession:
    """Stateful wrapper that warm-starts each QP from the previous solve.

    Not thread-safe; use one session per closed loop.
    """

    def __init__(self, model: DataDrivenModel, safe_set: Polytope, cfg: FilterConfig):
        self.model = model
        self.safe_set = safe_set
        self.cfg = cfg
        self._warm: Optional[QpWarmStart] = None

    def __call__(self, xi, u_nominal) -> FilterResult:
        res = cbf_filter(self.model, self.safe_set, self.cfg, xi, u_nominal, self._warm)
        if res.ok:
            self._warm = QpWarmStart(np.concatenate([res.u_safe, [res.lam]]), res.active_set)
        else:
            self._warm = None
        return res

    def reset(self):
        self._warm = None


def mpsf(
    model: DataDrivenModel,
    ambient: Polytope,
    u_set: Polytope,
    terminal: Polytope,
    horizon: int,
    xi,
    u_nominal,
    regularization: float = MPSF_REGULARIZATION,
) -> FilterResult:
    """Predictive safety filter: nearest first input of a safe backup plan.

    Minimizes ``||u_0 - u_nominal||^2`` subject to the predicted extended
    states staying in ``ambient`` for ``k < horizon``, inputs in ``u_set``
    and the final state in ``terminal``.  Later inputs carry a tiny
    quadratic weight so the QP stays strictly convex.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    xi = np.asarray(xi, dtype=float).ravel()
    u_nominal = np.atleast_1d(np.asarray(u_nominal, dtype=float)).ravel()
    n, m = model.n_xi, model.m
    if xi.size != n or u_nominal.size != m:
        raise ShapeMismatch("state or nominal input has the wrong size")
    nz = horizon * m
    nan = float("nan")
    if not ambient.contains(xi, 1e-9):
        return FilterResult(None, nan, nan, nan, StatusKind.INFEASIBLE, nan)

    # xi_k = free[k] + forced[k] @ z
    free = [xi]
    forced = [np.zeros((n, nz))]
    for k in range(horizon):
        f = model.a_e @ forced[-1]
        f[:, k * m:(k + 1) * m] += model.b_e
        forced.append(f)
        free.append(model.a_e @ free[-1])

    rows, rhs = [], []
    for k in range(1, horizon):
        rows.append(ambient.lhs @ forced[k])
        rhs.append(ambient.rhs - ambient.lhs @ free[k])
    for k in range(horizon):
        blk = np.zeros((u_set.n_rows, nz))
        blk[:, k * m:(k + 1) * m] = u_set.lhs
        rows.append(blk)
        rhs.append(u_set.rhs)
    rows.append(terminal.lhs @ forced[horizon])
    rhs.append(terminal.rhs - terminal.lhs @ free[horizon])

    weights = np.full(nz, regularization)
    weights[:m] = 1.0
    lin = np.zeros(nz)
    lin[:m] = -2.0 * u_nominal
    st = solve_qp(QpProblem(2.0 * np.diag(weights), lin, np.vstack(rows), np.concatenate(rhs)))
    if not st.ok:
        return FilterResult(None, nan, nan, nan, st.kind, nan)
    u0 = st.solution[:m]
    obj = float(np.sum((u0 - u_nominal) ** 2))
    h1 = nan
    if terminal.dim == n and horizon == 1:
        h1 = h_value(terminal, model.a_e @ xi + model.b_e @ u0)
    return FilterResult(u0, 1.0, nan, h1, st.kind, obj, st.active_set, st.relaxation)


def filter_batch(model: DataDrivenModel, safe_set: Polytope, cfg: FilterConfig,
                 in_path, out_path) -> int:
    """Filter every ``(xi, u_nominal)`` row of a CSV; returns the row count.

    Input columns are ``xi_0..xi_{n-1}, ul_0..ul_{m-1}``.
    """
    with open(in_path, newline="") as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
    n, m = model.n_xi, model.m
    out_cols = [f"u_{i}" for i in range(m)] + ["lambda", "h_before", "h_after_predicted",
                                                "status", "objective"]
    count = 0
    with open(out_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(out_cols)
        for row in rows:
            xi = np.array([float(row[f"xi_{i}"]) for i in range(n)])
            ul = np.array([float(row[f"ul_{i}"]) for i in range(m)])
            res = cbf_filter(model, safe_set, cfg, xi, ul)
            u = res.u_safe if res.ok else np.full(m, np.nan)
            w.writerow([repr(float(v)) for v in u]
                       + [repr(res.lam), repr(res.h_before), repr(res.h_after_predicted),
                          res.status.value, repr(res.objective)])
            count += 1
    return count
