"""One-step data-driven predictor and the extended-state dynamics.

The extended state stacks the last ``t_ini`` inputs, then the last ``t_ini``
outputs, oldest sample first::

    xi_t = [u_{t-T}, ..., u_{t-1}, y_{t-T}, ..., y_{t-1}]

and evolves as ``xi_{t+1} = a_e @ xi_t + b_e @ u_t``: both blocks shift one
sample, the newest input slot receives ``u_t`` and the newest output slot
receives the prediction ``r @ xi_t``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import HankelPartition
from .errors import InconsistentData, ResidualTooLarge, ShapeMismatch
from .numkit import min_norm_solve

PREDICTOR_RTOL = 1e-9


def extended_dim(m: int, p: int, t_ini: int) -> int:
    return (m + p) * t_ini


def pack_history(u_hist, y_hist) -> np.ndarray:
    """Build an extended state from (t_ini, m) inputs and (t_ini, p) outputs."""
    u = np.asarray(u_hist, dtype=float)
    y = np.asarray(y_hist, dtype=float)
    u = u[:, None] if u.ndim == 1 else u
    y = y[:, None] if y.ndim == 1 else y
    if u.shape[0] != y.shape[0]:
        raise ShapeMismatch("input and output histories differ in length")
    return np.concatenate([u.ravel(), y.ravel()])


def unpack_history(xi, m: int, p: int, t_ini: int) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of :func:`pack_history`; returns (t_ini, m) and (t_ini, p) arrays."""
    xi = np.asarray(xi, dtype=float).ravel()
    if xi.size != extended_dim(m, p, t_ini):
        raise ShapeMismatch(f"extended state has {xi.size} entries, expected {extended_dim(m, p, t_ini)}")
    return xi[: m * t_ini].reshape(t_ini, m), xi[m * t_ini:].reshape(t_ini, p)


def fit_predictor(part: HankelPartition, rtol: float = PREDICTOR_RTOL) -> tuple[np.ndarray, float]:
    """Minimum-norm solution ``r`` of ``r @ [U_p; Y_p] = Y_f`` and its relative residual."""
    w = part.w
    if not np.any(w):
        raise InconsistentData("past data matrix is identically zero")
    try:
        r = min_norm_solve(w, part.y_future, rtol=rtol)
    except ResidualTooLarge as exc:
        raise InconsistentData(
            f"{exc}; the data are noisy or t_ini={part.t_ini} is below the lag"
        ) from exc
    residual = float(np.linalg.norm(r @ w - part.y_future) / max(1.0, np.linalg.norm(part.y_future)))
    if residual > rtol:
        raise InconsistentData(f"predictor residual {residual:.3e} exceeds {rtol:g}")
    return r, residual


@dataclass(frozen=True)
class DataDrivenModel:
    r: np.ndarray
    a_e: np.ndarray
    b_e: np.ndarray
    m: int
    p: int
    t_ini: int
    residual: float = 0.0

    @property
    def n_xi(self) -> int:
        return extended_dim(self.m, self.p, self.t_ini)

    def to_dict(self) -> dict:
        return {
            "m": self.m,
            "p": self.p,
            "t_ini": self.t_ini,
            "r": self.r.tolist(),
            "residual": self.residual,
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def from_dict(cls, d: dict) -> "DataDrivenModel":
        unknown = set(d) - {"m", "p", "t_ini", "r", "residual"}
        if unknown:
            raise ValueError(f"unknown model keys: {sorted(unknown)}")
        r = np.atleast_2d(np.asarray(d["r"], dtype=float))
        return build_extended_dynamics(r, int(d["m"]), int(d["p"]), int(d["t_ini"]),
                                       residual=float(d.get("residual", 0.0)))

    @classmethod
    def load(cls, path) -> "DataDrivenModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def build_extended_dynamics(r, m: int, p: int, t_ini: int, residual: float = 0.0) -> DataDrivenModel:
    r = np.atleast_2d(np.asarray(r, dtype=float))
    n = extended_dim(m, p, t_ini)
    if r.shape != (p, n):
        raise ShapeMismatch(f"r has shape {r.shape}, expected ({p}, {n})")
    a_e = np.zeros((n, n))
    b_e = np.zeros((n, m))
    mu = m * t_ini
    # shift the input block, newest slot is fed by b_e
    a_e[: m * (t_ini - 1), m: mu] = np.eye(m * (t_ini - 1))
    b_e[m * (t_ini - 1): mu, :] = np.eye(m)
    # shift the output block, newest slot is the prediction
    a_e[mu: mu + p * (t_ini - 1), mu + p:] = np.eye(p * (t_ini - 1))
    a_e[n - p:, :] = r
    for arr in (r, a_e, b_e):
        arr.flags.writeable = False
    return DataDrivenModel(r=r, a_e=a_e, b_e=b_e, m=m, p=p, t_ini=t_ini, residual=residual)


def _check_xi(model: DataDrivenModel, xi) -> np.ndarray:
    xi = np.asarray(xi, dtype=float).ravel()
    if xi.size != model.n_xi:
        raise ShapeMismatch(f"extended state has {xi.size} entries, expected {model.n_xi}")
    return xi


def step_extended(model: DataDrivenModel, xi, u) -> np.ndarray:
    xi = _check_xi(model, xi)
    u = np.atleast_1d(np.asarray(u, dtype=float)).ravel()
    if u.size != model.m:
        raise ShapeMismatch(f"input has {u.size} entries, expected {model.m}")
    return model.a_e @ xi + model.b_e @ u


def predict_output(model: DataDrivenModel, xi) -> np.ndarray:
    return model.r @ _check_xi(model, xi)
