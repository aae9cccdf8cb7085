"""Plant simulation, nominal input schedules and the closed-loop harness."""
from __future__ import annotations

import csv
import hashlib
import json
import warnings
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import FilterInfeasible, HistoryMismatch, ShapeMismatch
from .model import DataDrivenModel, pack_history, predict_output

SAMPLE_TIME = 0.1


class StateSpacePlant:
    """Discrete LTI plant with an input queue.

    ``step(u)`` returns the output measured *before* ``u`` takes effect,
    then advances ``x <- A x + B u_{t - delay}``.
    """

    def __init__(self, a, b, c_out, input_delay: int = 0, x0=None):
        self.a = np.atleast_2d(np.asarray(a, dtype=float))
        self.b = np.atleast_2d(np.asarray(b, dtype=float))
        self.c_out = np.atleast_2d(np.asarray(c_out, dtype=float))
        n = self.a.shape[0]
        if self.a.shape != (n, n) or self.b.shape[0] != n or self.c_out.shape[1] != n:
            raise ShapeMismatch("inconsistent plant matrices")
        if input_delay < 0:
            raise ValueError("input_delay must be >= 0")
        self.input_delay = int(input_delay)
        self.state = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).copy()
        self.pending_inputs = deque(np.zeros(self.m) for _ in range(self.input_delay))

    @property
    def m(self) -> int:
        return self.b.shape[1]

    @property
    def p(self) -> int:
        return self.c_out.shape[0]

    def output(self) -> np.ndarray:
        return self.c_out @ self.state

    def step(self, u) -> np.ndarray:
        u = np.atleast_1d(np.asarray(u, dtype=float)).ravel()
        if u.size != self.m:
            raise ShapeMismatch(f"input has {u.size} entries, expected {self.m}")
        if not np.all(np.isfinite(u)):
            raise ValueError("non-finite plant input")
        y = self.output()
        self.pending_inputs.append(u)
        applied = self.pending_inputs.popleft()
        self.state = self.a @ self.state + self.b @ applied
        return y

    def copy(self) -> "StateSpacePlant":
        other = StateSpacePlant(self.a, self.b, self.c_out, self.input_delay, self.state)
        other.pending_inputs = deque(v.copy() for v in self.pending_inputs)
        return other


def plant_step(plant: StateSpacePlant, u) -> np.ndarray:
    return plant.step(u)


def delayed_double_integrator(delay: int = 2, ts: float = SAMPLE_TIME) -> StateSpacePlant:
    """Double integrator with an input delay; the default is the benchmark plant."""
    return StateSpacePlant([[1.0, ts], [0.0, 1.0]], [[0.0], [ts]], [[1.0, 0.0]], input_delay=delay)


def simulate_open_loop(plant: StateSpacePlant, inputs) -> np.ndarray:
    inputs = np.asarray(inputs, dtype=float)
    if inputs.ndim == 1:
        inputs = inputs[:, None]
    return np.array([plant.step(u) for u in inputs]).reshape(len(inputs), plant.p)


def warmup_history(plant: StateSpacePlant, u_sequence, t_ini: int, constraints=None) -> np.ndarray:
    """Drive the plant with ``u_sequence`` and pack the last ``t_ini`` samples.

    If ``constraints`` (the extended constraint polytope) is given, a
    RuntimeWarning flags a history that lies outside it.
    """
    u = np.asarray(u_sequence, dtype=float)
    if u.ndim == 1:
        u = u[:, None]
    if u.shape[0] < t_ini:
        raise ValueError(f"warm-up needs at least {t_ini} inputs, got {u.shape[0]}")
    y = simulate_open_loop(plant, u)
    xi = pack_history(u[-t_ini:], y[-t_ini:])
    if constraints is not None and np.any(constraints.lhs @ xi > constraints.rhs + 1e-9):
        warnings.warn("warm-up history lies outside the constraint set", RuntimeWarning)
    return xi


# ---------------------------------------------------------------------------
# nominal schedules


@dataclass(frozen=True)
class PiecewiseRandom:
    """Uniform random level held for ``hold_steps`` samples."""

    hold_steps: int
    amplitude: float
    seed: int = 0

    def build(self, m: int, start: int, end: int) -> Callable[[int, np.ndarray], np.ndarray]:
        rng = np.random.default_rng(self.seed)
        n_holds = -(-(end - start) // self.hold_steps)
        levels = rng.uniform(-self.amplitude, self.amplitude, size=(max(n_holds, 0), m))

        def gen(step, xi):
            return levels[(step - start) // self.hold_steps]

        return gen


@dataclass(frozen=True)
class StaticFeedback:
    """``u = -gain @ xi``."""

    gain: tuple

    def build(self, m: int, start: int, end: int):
        k = np.atleast_2d(np.asarray(self.gain, dtype=float))

        def gen(step, xi):
            return -(k @ xi)

        return gen


@dataclass(frozen=True)
class Constant:
    value: tuple

    def build(self, m: int, start: int, end: int):
        v = np.asarray(self.value, dtype=float).ravel()

        def gen(step, xi):
            return v

        return gen


@dataclass
class NominalSchedule:
    """Contiguous segments ``(start_step, end_step, generator)``, end exclusive."""

    segments: list = field(default_factory=list)

    def __post_init__(self):
        prev_end = None
        for start, end, _ in self.segments:
            if end < start:
                raise ValueError(f"segment [{start}, {end}) is reversed")
            if prev_end is not None and start != prev_end:
                raise ValueError("schedule segments must be contiguous and non-overlapping")
            prev_end = end

    @property
    def n_steps(self) -> int:
        return self.segments[-1][1] if self.segments else 0

    def compile(self, m: int):
        built = [(s, e, g.build(m, s, e)) for s, e, g in self.segments]

        def nominal(step: int, xi: np.ndarray) -> np.ndarray:
            for s, e, gen in built:
                if s <= step < e:
                    return np.atleast_1d(np.asarray(gen(step, xi), dtype=float)).ravel()
            raise IndexError(f"step {step} outside the schedule")

        return nominal


def benchmark_schedule(seed: int, steps: int = 4000, switch: int = 2000, gain=None,
                       hold_steps: int = 20, amplitude: float = 1.5) -> NominalSchedule:
    """Random nominal input up to ``switch``, static feedback afterwards."""
    if gain is None:
        gain = BENCHMARK_GAIN
    return NominalSchedule([
        (0, switch, PiecewiseRandom(hold_steps, amplitude, seed)),
        (switch, steps, StaticFeedback(tuple(gain))),
    ])


BENCHMARK_GAIN = (0.05, 0.16, 0.15, 0.143, 0.13, 0.0, 0.0, -5.44, -5.16, 11.46)


# ---------------------------------------------------------------------------
# closed loop

LOG_COLUMNS = ("step", "time_s", "u_nominal", "u_applied", "y", "h", "lambda", "qp_status")


@dataclass
class SimLog:
    rows: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)
    aborted: Optional[str] = None

    def __len__(self):
        return len(self.rows)

    def column(self, name: str) -> np.ndarray:
        i = LOG_COLUMNS.index(name)
        return np.array([r[i] for r in self.rows])

    def summary(self) -> dict:
        if not self.rows:
            return {"steps": 0, "max_abs_y": 0.0, "max_abs_u": 0.0, "min_h": None,
                    "infeasible_count": 0, "first_intervention": None, "aborted": self.aborted}
        u_l = np.vstack(self.column("u_nominal"))
        u = np.vstack(self.column("u_applied"))
        y = np.vstack(self.column("y"))
        changed = np.flatnonzero(np.any(np.abs(u - u_l) > 1e-9, axis=1))
        status = self.column("qp_status")
        return {
            "steps": len(self.rows),
            "max_abs_y": float(np.abs(y).max()),
            "max_abs_u": float(np.abs(u).max()),
            "min_h": float(self.column("h").min()),
            "infeasible_count": int(np.sum(status != "Optimal")),
            "first_intervention": int(changed[0]) if changed.size else None,
            "aborted": self.aborted,
        }

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(LOG_COLUMNS)
            for row in self.rows:
                w.writerow([
                    row[0], f"{row[1]:.6g}",
                    *(";".join(repr(float(v)) for v in np.ravel(x)) for x in row[2:5]),
                    repr(float(row[5])), repr(float(row[6])), row[7],
                ])


def config_hash(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def run_closed_loop(
    plant: StateSpacePlant,
    model: DataDrivenModel,
    safe_set,
    cfg,
    schedule: NominalSchedule,
    steps: Optional[int] = None,
    xi_init=None,
    ts: float = SAMPLE_TIME,
    history_tol: float = 1e-6,
    metadata: Optional[dict] = None,
    safety_filter=None,
) -> SimLog:
    """Filter the scheduled nominal input every step and log the loop.

    By default a warm-started ``SafetyFilterSession(model, safe_set, cfg)``
    is used; any callable ``safety_filter(xi, u_nominal) -> FilterResult``
    may replace it.  The plant must already hold the history that
    ``xi_init`` describes.  An infeasible filter raises FilterInfeasible
    carrying the partial log in ``.log``.
    """
    if safety_filter is None:
        from .filter import SafetyFilterSession

        safety_filter = SafetyFilterSession(model, safe_set, cfg)
    steps = schedule.n_steps if steps is None else steps
    m, p, t_ini = model.m, model.p, model.t_ini
    xi = np.zeros(model.n_xi) if xi_init is None else np.asarray(xi_init, dtype=float).copy()
    u_hist = deque(xi[: m * t_ini].reshape(t_ini, m), maxlen=t_ini)
    y_hist = deque(xi[m * t_ini:].reshape(t_ini, p), maxlen=t_ini)
    nominal = schedule.compile(m)
    log = SimLog(metadata=dict(metadata or {}))
    log.metadata.setdefault("steps", steps)
    for t in range(steps):
        u_l = nominal(t, xi)
        res = safety_filter(xi, u_l)
        if not res.ok:
            log.aborted = f"filter {res.status} at step {t}"
            log.rows.append((t, t * ts, u_l, np.full(m, np.nan), np.full(p, np.nan),
                             float("nan"), float("nan"), res.status.value))
            err = FilterInfeasible(log.aborted)
            err.log = log
            raise err
        u = res.u_safe
        y_pred = predict_output(model, xi)
        y = plant.step(u)
        if np.max(np.abs(y - y_pred), initial=0.0) > history_tol * (1.0 + np.abs(y).max()):
            log.aborted = f"history mismatch at step {t}"
            err = HistoryMismatch(
                f"plant output {y} differs from model prediction {y_pred} at step {t}"
            )
            err.log = log
            raise err
        log.rows.append((t, t * ts, u_l, u, y, res.h_before, res.lam, res.status.value))
        u_hist.append(u)
        y_hist.append(y)
        xi = pack_history(np.array(u_hist), np.array(y_hist))
    return log
