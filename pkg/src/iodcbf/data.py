"""Trajectory datasets, Hankel matrices and persistency-of-excitation checks."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import DepthTooLarge, InsufficientData, ShapeMismatch
from .numkit import numeric_rank


def _as_series(x) -> np.ndarray:
    """Coerce to an (N, dim) float array; 1-D input means a scalar signal."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ShapeMismatch(f"series must be 1-D or 2-D, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class TrajectoryDataset:
    """One input/output trajectory; rows are time samples."""

    inputs: np.ndarray
    outputs: np.ndarray

    def __post_init__(self):
        u = _as_series(self.inputs)
        y = _as_series(self.outputs)
        if u.shape[0] != y.shape[0]:
            raise ShapeMismatch(
                f"inputs have {u.shape[0]} samples but outputs have {y.shape[0]}"
            )
        if u.shape[0] == 0:
            raise InsufficientData("empty trajectory")
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(y))):
            raise ValueError("trajectory contains non-finite values")
        u.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "inputs", u)
        object.__setattr__(self, "outputs", y)

    @property
    def m(self) -> int:
        return self.inputs.shape[1]

    @property
    def p(self) -> int:
        return self.outputs.shape[1]

    @property
    def n_samples(self) -> int:
        return self.inputs.shape[0]

    def to_csv(self, path) -> None:
        header = ["t"] + [f"u_{i}" for i in range(self.m)] + [f"y_{i}" for i in range(self.p)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for t in range(self.n_samples):
                w.writerow([t] + [repr(float(v)) for v in self.inputs[t]]
                           + [repr(float(v)) for v in self.outputs[t]])

    @classmethod
    def from_csv(cls, path) -> "TrajectoryDataset":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows:
            raise InsufficientData(f"{path} is empty")
        header = [h.strip() for h in rows[0]]
        u_cols = [i for i, h in enumerate(header) if h.startswith("u_")]
        y_cols = [i for i, h in enumerate(header) if h.startswith("y_")]
        if header[0] != "t" or not u_cols or not y_cols:
            raise ValueError(f"{path}: expected header 't, u_0.., y_0..', got {header}")
        body = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
        if body.size == 0:
            raise InsufficientData(f"{path} has no samples")
        return cls(body[:, u_cols], body[:, y_cols])


@dataclass(frozen=True)
class HankelPartition:
    """Past/future split of depth ``t_ini + 1`` Hankel matrices."""

    u_past: np.ndarray
    y_past: np.ndarray
    u_future: np.ndarray
    y_future: np.ndarray
    t_ini: int

    @property
    def n_cols(self) -> int:
        return self.u_past.shape[1]

    @property
    def w(self) -> np.ndarray:
        """Stacked past data ``[U_p; Y_p]``; its columns are extended states."""
        return np.vstack([self.u_past, self.y_past])


@dataclass(frozen=True)
class PeReport:
    stacked_rank: int
    required_order: int
    input_hankel_rank: int
    satisfied: bool
    m: int
    p: int
    n_samples: int

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")


def build_hankel(series, depth: int) -> np.ndarray:
    """Block-Hankel matrix: column ``j`` stacks ``series[j : j + depth]``.

    >>> build_hankel([1, 2, 3, 4], 2)
    array([[1., 2., 3.],
           [2., 3., 4.]])
    """
    x = _as_series(series)
    n, dim = x.shape
    if depth < 1:
        raise ValueError("depth must be positive")
    if depth > n:
        raise DepthTooLarge(f"depth {depth} exceeds series length {n}")
    cols = n - depth + 1
    h = np.empty((dim * depth, cols))
    for i in range(depth):
        h[i * dim:(i + 1) * dim, :] = x[i:i + cols].T
    return h


def partition(dataset: TrajectoryDataset, t_ini: int) -> HankelPartition:
    if t_ini < 1:
        raise ValueError("t_ini must be a positive integer")
    if dataset.n_samples < t_ini + 1:
        raise InsufficientData(
            f"{dataset.n_samples} samples cannot fill a depth-{t_ini + 1} Hankel matrix"
        )
    hu = build_hankel(dataset.inputs, t_ini + 1)
    hy = build_hankel(dataset.outputs, t_ini + 1)
    m, p = dataset.m, dataset.p
    return HankelPartition(
        u_past=hu[: m * t_ini],
        y_past=hy[: p * t_ini],
        u_future=hu[m * t_ini:],
        y_future=hy[p * t_ini:],
        t_ini=t_ini,
    )


def check_pe(dataset: TrajectoryDataset, t_ini: int, rank_tol=None) -> PeReport:
    """Rank test of the depth ``t_ini + 1`` Hankel matrices.

    ``satisfied`` uses the input-Hankel criterion (full row rank
    ``m * (t_ini + 1)``); the stacked input/output rank is reported as well.
    """
    if dataset.n_samples < t_ini + 1:
        raise InsufficientData(
            f"{dataset.n_samples} samples cannot fill a depth-{t_ini + 1} Hankel matrix"
        )
    depth = t_ini + 1
    hu = build_hankel(dataset.inputs, depth)
    hy = build_hankel(dataset.outputs, depth)
    in_rank = numeric_rank(hu, rank_tol)
    st_rank = numeric_rank(np.vstack([hu, hy]), rank_tol)
    return PeReport(
        stacked_rank=st_rank,
        required_order=depth,
        input_hankel_rank=in_rank,
        satisfied=in_rank == dataset.m * depth,
        m=dataset.m,
        p=dataset.p,
        n_samples=dataset.n_samples,
    )


def excitation_signal(n_samples: int, m: int = 1, seed=None, scale: float = 1.0) -> np.ndarray:
    """I.i.d. zero-mean normal excitation of shape (n_samples, m)."""
    rng = np.random.default_rng(seed)
    return scale * rng.standard_normal((n_samples, m))
