"""H-representation polytopes and the maximal control-invariant set.

A :class:`Polytope` is ``{x : lhs @ x <= rhs}``.  Emptiness is an explicit
flag rather than an inconsistent row.  All set operations are exact up to
LP tolerances: projection is Fourier-Motzkin elimination followed by
LP-based redundancy removal.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import BadBounds, EmptySet, NotConverged, ShapeMismatch, ZeroRow
from .model import DataDrivenModel
from .numkit import StatusKind, linprog_max, solve_lp, LpProblem

log = logging.getLogger(__name__)

ROW_TOL = 1e-12
REDUNDANCY_TOL = 1e-9
CONVERGENCE_TOL = 1e-7


@dataclass(frozen=True)
class Polytope:
    lhs: np.ndarray
    rhs: np.ndarray
    empty: bool = False
    normalized: bool = False

    def __post_init__(self):
        lhs = np.atleast_2d(np.asarray(self.lhs, dtype=float))
        rhs = np.atleast_1d(np.asarray(self.rhs, dtype=float)).ravel()
        if lhs.shape[0] != rhs.size:
            raise ShapeMismatch(f"{lhs.shape[0]} rows but {rhs.size} right-hand sides")
        if not (np.all(np.isfinite(lhs)) and np.all(np.isfinite(rhs))):
            raise ValueError("polytope data must be finite")
        empty = self.empty
        if lhs.size:
            zero = np.all(np.abs(lhs) <= ROW_TOL, axis=1)
            if np.any(zero & (rhs < 0)):
                empty = True
            if np.any(zero):
                lhs, rhs = lhs[~zero], rhs[~zero]
        if empty:
            lhs, rhs = np.zeros((0, lhs.shape[1])), np.zeros(0)
        lhs.flags.writeable = False
        rhs.flags.writeable = False
        object.__setattr__(self, "lhs", lhs)
        object.__setattr__(self, "rhs", rhs)
        object.__setattr__(self, "empty", bool(empty))

    @property
    def dim(self) -> int:
        return self.lhs.shape[1]

    @property
    def n_rows(self) -> int:
        return self.lhs.shape[0]

    @classmethod
    def empty_set(cls, dim: int) -> "Polytope":
        return cls(np.zeros((0, dim)), np.zeros(0), empty=True)

    def contains(self, x, tol: float = 1e-9) -> bool:
        return contains(self, x, tol)

    # -- serialization -----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "rows": [list(map(float, h)) + [float(c)] for h, c in zip(self.lhs, self.rhs)],
            "normalized": self.normalized,
            "empty": self.empty,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Polytope":
        unknown = set(d) - {"dim", "rows", "normalized", "empty"}
        if unknown:
            raise ValueError(f"unknown polytope keys: {sorted(unknown)}")
        dim = int(d["dim"])
        rows = np.asarray(d["rows"], dtype=float).reshape(-1, dim + 1)
        return cls(rows[:, :dim], rows[:, dim], bool(d.get("empty", False)),
                   bool(d.get("normalized", False)))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n")

    @classmethod
    def load(cls, path) -> "Polytope":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class InvariantSetReport:
    set: Polytope
    iterations: int
    converged: bool
    per_iteration_constraint_counts: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "converged": self.converged,
            "per_iteration_constraint_counts": list(self.per_iteration_constraint_counts),
            "n_rows": self.set.n_rows,
            "dim": self.set.dim,
            "empty": self.set.empty,
        }


# ---------------------------------------------------------------------------
# construction


def box_polytope(lower, upper) -> Polytope:
    lo = np.atleast_1d(np.asarray(lower, dtype=float)).ravel()
    hi = np.atleast_1d(np.asarray(upper, dtype=float)).ravel()
    if lo.shape != hi.shape:
        raise BadBounds("lower and upper bounds differ in length")
    if np.any(lo > hi):
        raise BadBounds(f"lower bound exceeds upper bound: {lo} > {hi}")
    n = lo.size
    eye = np.eye(n)
    return Polytope(np.vstack([eye, -eye]), np.concatenate([hi, -lo]), normalized=True)


def halfspace(normal, offset) -> Polytope:
    return Polytope(np.atleast_2d(normal), [offset])


def extended_constraints(u_set: Polytope, y_set: Polytope, t_ini: int) -> Polytope:
    """Apply ``u_set`` to every past input and ``y_set`` to every past output."""
    m, p = u_set.dim, y_set.dim
    n = (m + p) * t_ini
    blocks, rhs = [], []
    for i in range(t_ini):
        rows = np.zeros((u_set.n_rows, n))
        rows[:, i * m:(i + 1) * m] = u_set.lhs
        blocks.append(rows)
        rhs.append(u_set.rhs)
    for i in range(t_ini):
        rows = np.zeros((y_set.n_rows, n))
        off = m * t_ini + i * p
        rows[:, off:off + p] = y_set.lhs
        blocks.append(rows)
        rhs.append(y_set.rhs)
    return Polytope(np.vstack(blocks), np.concatenate(rhs),
                    empty=u_set.empty or y_set.empty,
                    normalized=u_set.normalized and y_set.normalized)


# ---------------------------------------------------------------------------
# queries


def contains(p: Polytope, x, tol: float = 1e-9) -> bool:
    x = np.asarray(x, dtype=float).ravel()
    if x.size != p.dim:
        raise ShapeMismatch(f"point has {x.size} entries, polytope dimension is {p.dim}")
    if p.empty:
        return False
    return bool(np.all(p.lhs @ x <= p.rhs + tol))


def contains_many(p: Polytope, xs, tol: float = 1e-9) -> np.ndarray:
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    if p.empty:
        return np.zeros(xs.shape[0], dtype=bool)
    return np.all(xs @ p.lhs.T <= p.rhs + tol, axis=1)


def chebyshev_center(p: Polytope, radius_cap: float = 1e6) -> tuple[Optional[np.ndarray], float]:
    """Center and radius of the largest inscribed ball; (None, -inf) if empty."""
    if p.empty:
        return None, -np.inf
    n = p.dim
    norms = np.linalg.norm(p.lhs, axis=1)
    lhs = np.hstack([p.lhs, norms[:, None]])
    st = solve_lp(LpProblem(np.eye(1, n + 1, n).ravel() * -1.0, lhs, p.rhs,
                            bounds=[(None, None)] * n + [(None, radius_cap)]))
    if st.kind is StatusKind.INFEASIBLE:
        return None, -np.inf
    if not st.ok:
        raise RuntimeError(f"Chebyshev center LP failed: {st.kind}")
    return st.solution[:n], float(st.solution[n])


def is_empty(p: Polytope) -> bool:
    if p.empty:
        return True
    if p.n_rows == 0:
        return False
    st = solve_lp(LpProblem(np.zeros(p.dim), p.lhs, p.rhs))
    if st.kind is StatusKind.INFEASIBLE:
        return True
    if not st.ok:
        raise RuntimeError(f"feasibility LP failed: {st.kind}")
    return False


def support(p: Polytope, direction) -> float:
    """max direction @ x over p (inf when unbounded, -inf when empty)."""
    if p.empty:
        return -np.inf
    st = linprog_max(direction, p.lhs, p.rhs)
    if st.kind is StatusKind.UNBOUNDED:
        return np.inf
    if st.kind is StatusKind.INFEASIBLE:
        return -np.inf
    if not st.ok:
        raise RuntimeError(f"support LP failed: {st.kind}")
    return st.objective_value


def is_subset(p: Polytope, q: Polytope, tol: float = CONVERGENCE_TOL) -> bool:
    """True iff every row of ``q`` holds on all of ``p`` (one LP per row)."""
    if p.dim != q.dim:
        raise ShapeMismatch("dimension mismatch")
    if p.empty:
        return True
    if q.empty:
        return is_empty(p)
    for h, c in zip(q.lhs, q.rhs):
        if support(p, h) > c + tol * max(1.0, np.linalg.norm(h)):
            return False
    return True


def bounding_box(p: Polytope) -> tuple[np.ndarray, np.ndarray]:
    n = p.dim
    lo, hi = np.empty(n), np.empty(n)
    for j in range(n):
        e = np.zeros(n)
        e[j] = 1.0
        hi[j] = support(p, e)
        lo[j] = -support(p, -e)
    return lo, hi


# ---------------------------------------------------------------------------
# transformations


def normalize_rows(p: Polytope) -> Polytope:
    """Scale every row to unit Euclidean norm."""
    if p.empty:
        return Polytope(p.lhs, p.rhs, empty=True, normalized=True)
    norms = np.linalg.norm(p.lhs, axis=1)
    if np.any(norms <= ROW_TOL):
        raise ZeroRow("cannot normalize an all-zero row")
    return Polytope(p.lhs / norms[:, None], p.rhs / norms, normalized=True)


def _dedupe(lhs, rhs):
    """Normalize rows and keep the tightest of parallel duplicates."""
    norms = np.linalg.norm(lhs, axis=1)
    zero = norms <= ROW_TOL
    if np.any(zero & (rhs < -REDUNDANCY_TOL)):
        return None, None
    lhs, rhs, norms = lhs[~zero], rhs[~zero], norms[~zero]
    lhs = lhs / norms[:, None]
    rhs = rhs / norms
    if lhs.shape[0] == 0:
        return lhs, rhs
    key = np.round(lhs, 10)
    order = np.lexsort(np.vstack([rhs, key.T[::-1]]))
    key, lhs, rhs = key[order], lhs[order], rhs[order]
    first = np.ones(len(rhs), dtype=bool)
    first[1:] = np.any(key[1:] != key[:-1], axis=1)
    return lhs[first], rhs[first]


def remove_redundancy(p: Polytope, tol: float = REDUNDANCY_TOL) -> Polytope:
    """Drop every row implied by the others; the result is row-normalized.

    Cheap filters run first (parallel duplicates, rows slack over the
    bounding box); the remaining rows are tested one LP each, in index
    order, against the rows kept so far plus the untested ones.
    """
    if p.empty:
        return Polytope.empty_set(p.dim)
    lhs, rhs = _dedupe(p.lhs, p.rhs)
    if lhs is None:
        return Polytope.empty_set(p.dim)
    if lhs.shape[0] == 0:
        return Polytope(lhs, rhs, normalized=True)
    cand = Polytope(lhs, rhs)
    if is_empty(cand):
        return Polytope.empty_set(p.dim)
    lo, hi = bounding_box(cand)
    if np.all(np.isfinite(lo)) and np.all(np.isfinite(hi)):
        worst = np.maximum(lhs * lo, lhs * hi).sum(axis=1)
        strict = worst < rhs - tol
        lhs, rhs = lhs[~strict], rhs[~strict]
    keep = np.ones(len(rhs), dtype=bool)
    for i in range(len(rhs)):
        keep[i] = False
        others = np.flatnonzero(keep)
        st = linprog_max(lhs[i], lhs[others], rhs[others])
        if st.kind is StatusKind.OPTIMAL and st.objective_value <= rhs[i] + tol:
            continue
        if st.kind not in (StatusKind.OPTIMAL, StatusKind.UNBOUNDED):
            raise RuntimeError(f"redundancy LP failed on row {i}: {st.kind}")
        keep[i] = True
    return Polytope(lhs[keep], rhs[keep], normalized=True)


def intersect(p: Polytope, q: Polytope) -> Polytope:
    if p.dim != q.dim:
        raise ShapeMismatch("dimension mismatch")
    if p.empty or q.empty:
        return Polytope.empty_set(p.dim)
    return remove_redundancy(Polytope(np.vstack([p.lhs, q.lhs]), np.concatenate([p.rhs, q.rhs])))


def _fourier_motzkin(lhs, rhs, index):
    a = lhs[:, index]
    scale = np.abs(lhs).max(axis=1)
    zero = np.abs(a) <= ROW_TOL * np.maximum(scale, 1.0)
    pos = np.flatnonzero((a > 0) & ~zero)
    neg = np.flatnonzero((a < 0) & ~zero)
    keep_l = [lhs[zero]]
    keep_r = [rhs[zero]]
    if pos.size and neg.size:
        lp = lhs[pos] / a[pos, None]
        rp = rhs[pos] / a[pos]
        ln = lhs[neg] / -a[neg, None]
        rn = rhs[neg] / -a[neg]
        comb = (lp[:, None, :] + ln[None, :, :]).reshape(-1, lhs.shape[1])
        keep_l.append(comb)
        keep_r.append((rp[:, None] + rn[None, :]).ravel())
    out_l = np.delete(np.vstack(keep_l), index, axis=1)
    return out_l, np.concatenate(keep_r)


def eliminate_variable(p: Polytope, index: int) -> Polytope:
    """Project out coordinate ``index`` by Fourier-Motzkin elimination."""
    if not 0 <= index < p.dim:
        raise IndexError(f"index {index} out of range for dimension {p.dim}")
    if p.empty:
        return Polytope.empty_set(p.dim - 1)
    lhs, rhs = _fourier_motzkin(p.lhs, p.rhs, index)
    return remove_redundancy(Polytope(lhs, rhs))


def project(p: Polytope, dims: Sequence[int]) -> Polytope:
    """Orthogonal projection onto the coordinates ``dims`` (in that order)."""
    dims = [int(d) for d in dims]
    if len(set(dims)) != len(dims) or any(not 0 <= d < p.dim for d in dims):
        raise ValueError(f"invalid projection coordinates {dims}")
    cur = p
    alive = list(range(p.dim))
    # eliminate from the highest index down so earlier positions stay valid
    for d in sorted(set(range(p.dim)) - set(dims), reverse=True):
        cur = eliminate_variable(cur, alive.index(d))
        alive.remove(d)
    order = [alive.index(d) for d in dims]
    if cur.empty:
        return Polytope.empty_set(len(dims))
    return Polytope(cur.lhs[:, order], cur.rhs, normalized=cur.normalized)


def lifted_successor_constraints(target: Polytope, model: DataDrivenModel, u_set: Polytope):
    """Rows of ``{(xi, u) : a_e xi + b_e u in target, u in u_set}``."""
    n = model.n_xi
    top = np.hstack([target.lhs @ model.a_e, target.lhs @ model.b_e])
    bottom = np.hstack([np.zeros((u_set.n_rows, n)), u_set.lhs])
    return np.vstack([top, bottom]), np.concatenate([target.rhs, u_set.rhs])


def pre_set(target: Polytope, model: DataDrivenModel, u_set: Polytope,
            ambient: Optional[Polytope] = None) -> Polytope:
    """States with some admissible input that lands in ``target``.

    Lifts to ``(xi, u)``, eliminates the inputs, then intersects with
    ``ambient`` when given.
    """
    n, m = model.n_xi, model.m
    if target.dim != n or u_set.dim != m or (ambient is not None and ambient.dim != n):
        raise ShapeMismatch("pre_set dimensions do not match the model")
    if target.empty or u_set.empty or (ambient is not None and ambient.empty):
        return Polytope.empty_set(n)
    lhs, rhs = lifted_successor_constraints(target, model, u_set)
    cur = Polytope(lhs, rhs)
    for k in range(m):
        # inputs sit in the trailing coordinates; remove the last each time
        cur = eliminate_variable(cur, cur.dim - 1)
        if cur.empty:
            return Polytope.empty_set(n)
    if ambient is not None:
        cur = intersect(cur, ambient)
    return cur


def invariant_set(
    ambient: Polytope,
    model: DataDrivenModel,
    u_set: Polytope,
    max_iter: int = 100,
    tol: float = CONVERGENCE_TOL,
    raise_on_failure: bool = True,
) -> InvariantSetReport:
    """Maximal control-invariant subset of ``ambient`` by backward iteration.

    ``omega_{k+1} = pre(omega_k) & omega_k`` from ``omega_0 = ambient``,
    stopped when consecutive iterates contain each other within ``tol``.
    The result is stored row-normalized.
    """
    omega = remove_redundancy(ambient)
    if omega.empty:
        raise EmptySet("the constraint set is empty")
    counts = [omega.n_rows]
    for k in range(1, max_iter + 1):
        nxt = intersect(pre_set(omega, model, u_set, ambient), omega)
        counts.append(nxt.n_rows)
        log.info("invariant-set iteration %d: %d rows", k, nxt.n_rows)
        if nxt.empty:
            rep = InvariantSetReport(nxt, k, False, counts)
            if raise_on_failure:
                raise EmptySet("invariant-set iteration produced an empty set")
            return rep
        if is_subset(omega, nxt, tol):
            return InvariantSetReport(normalize_rows(nxt), k, True, counts)
        omega = nxt
    rep = InvariantSetReport(normalize_rows(omega), max_iter, False, counts)
    if raise_on_failure:
        raise NotConverged(f"no convergence after {max_iter} iterations", report=rep)
    return rep


# ---------------------------------------------------------------------------
# sampling and export


def ray_exit(p: Polytope, origin, direction) -> float:
    """Largest ``t`` with ``origin + t * direction`` in ``p`` (inf if unbounded)."""
    hd = p.lhs @ direction
    slack = p.rhs - p.lhs @ origin
    pos = hd > 1e-14
    if not np.any(pos):
        return np.inf
    return float(np.min(slack[pos] / hd[pos]))


def hit_and_run(p: Polytope, n_samples: int, seed=0, start=None, burn_in: int = 200,
                thin: int = 10) -> np.ndarray:
    """Approximately uniform interior samples of a bounded polytope.

    Starts from the Chebyshev center unless ``start`` is given; the random
    stream is fixed by ``seed``.
    """
    if p.empty:
        raise EmptySet("cannot sample an empty polytope")
    rng = np.random.default_rng(seed)
    x = chebyshev_center(p)[0] if start is None else np.asarray(start, dtype=float).copy()
    out = np.empty((n_samples, p.dim))
    total = burn_in + n_samples * thin
    k = 0
    for it in range(total):
        d = rng.standard_normal(p.dim)
        d /= np.linalg.norm(d)
        hi = ray_exit(p, x, d)
        lo = -ray_exit(p, x, -d)
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise ValueError("hit-and-run needs a bounded polytope")
        x = x + rng.uniform(lo, hi) * d
        if it >= burn_in and (it - burn_in) % thin == thin - 1:
            out[k] = x
            k += 1
    return out


def vertices(p: Polytope) -> np.ndarray:
    """Vertices of a bounded, full-dimensional polytope (2-D output is ordered)."""
    from scipy.spatial import ConvexHull, HalfspaceIntersection

    center, radius = chebyshev_center(p)
    if center is None or radius <= 1e-12:
        return np.zeros((0, p.dim))
    hs = HalfspaceIntersection(np.hstack([p.lhs, -p.rhs[:, None]]), center)
    pts = hs.intersections
    hull = ConvexHull(pts)
    pts = pts[hull.vertices]
    if p.dim == 2:
        return pts  # ConvexHull returns 2-D vertices counter-clockwise
    return pts[np.lexsort(pts.T[::-1])]


def export_vertices_csv(p: Polytope, path, names: Optional[Sequence[str]] = None) -> int:
    import csv

    pts = vertices(p)
    names = list(names) if names else [f"x{i}" for i in range(p.dim)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for v in pts:
            w.writerow([repr(float(c)) for c in v])
    return len(pts)


def coordinate_names(m: int, p: int, t_ini: int) -> list:
    """Labels of the extended-state coordinates, e.g. ``u0[t-5]``."""
    names = [f"u{j}[t-{t_ini - i}]" for i in range(t_ini) for j in range(m)]
    names += [f"y{j}[t-{t_ini - i}]" for i in range(t_ini) for j in range(p)]
    return names


def successor_input_exists(target: Polytope, model: DataDrivenModel, u_set: Polytope, xi,
                           tol: float = 1e-7) -> bool:
    """LP test: is there ``u`` in ``u_set`` with ``a_e xi + b_e u`` in ``target``?"""
    xi = np.asarray(xi, dtype=float).ravel()
    lhs = np.vstack([target.lhs @ model.b_e, u_set.lhs])
    rhs = np.concatenate([target.rhs - target.lhs @ (model.a_e @ xi) + tol, u_set.rhs + tol])
    st = solve_lp(LpProblem(np.zeros(model.m), lhs, rhs))
    return st.ok
