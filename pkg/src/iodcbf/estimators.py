"""scikit-learn style estimators over the data-driven pipeline.

``DataDrivenPredictor`` fits the one-step predictor from one trajectory.
``IOBarrierSafetyFilter`` additionally computes the invariant set and
exposes the barrier as ``decision_function`` and the filter as
``filter_input``.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .data import TrajectoryDataset, build_hankel, check_pe, partition
from .errors import PersistencyOfExcitationError
from .filter import FilterConfig, SafetyFilterSession, cbf_filter, h_values
from .geometry import box_polytope, contains_many, extended_constraints, invariant_set
from .model import PREDICTOR_RTOL, build_extended_dynamics, fit_predictor


def _trajectory(u, y) -> TrajectoryDataset:
    u = check_array(u, ensure_2d=False, dtype=float)
    y = check_array(y, ensure_2d=False, dtype=float)
    return TrajectoryDataset(u, y)


class DataDrivenPredictor(RegressorMixin, BaseEstimator):
    """One-step output predictor ``y_t = r @ xi_t`` fitted from a trajectory.

    ``fit(u, y)`` takes the input and output samples of one trajectory;
    ``transform(u, y)`` returns its extended-state windows and
    ``predict(xi)`` maps extended states to the next output.

    Parameters
    ----------
    t_ini : int
        History length; must be at least the system lag.
    rtol : float
        Relative residual accepted for ``r @ W = Y_f``.
    require_pe : bool
        Raise if the input is not persistently exciting of order ``t_ini + 1``.
    """

    def __init__(self, t_ini=5, rtol=PREDICTOR_RTOL, require_pe=True):
        self.t_ini = t_ini
        self.rtol = rtol
        self.require_pe = require_pe

    def fit(self, u, y):
        ds = _trajectory(u, y)
        self.pe_report_ = check_pe(ds, self.t_ini)
        if self.require_pe and not self.pe_report_.satisfied:
            raise PersistencyOfExcitationError(
                f"input Hankel rank {self.pe_report_.input_hankel_rank} < "
                f"{ds.m * (self.t_ini + 1)}: input is not persistently exciting"
            )
        r, residual = fit_predictor(partition(ds, self.t_ini), rtol=self.rtol)
        self.model_ = build_extended_dynamics(r, ds.m, ds.p, self.t_ini, residual)
        self.coef_ = self.model_.r
        self.residual_ = residual
        self.n_inputs_, self.n_outputs_ = ds.m, ds.p
        self.n_features_in_ = self.model_.n_xi
        return self

    def transform(self, u, y):
        """Extended states ``xi_t`` for every full window; shape (N - t_ini, n_xi).

        Row ``j`` holds samples ``j .. j + t_ini - 1``, i.e. the state at
        time ``t = j + t_ini``.
        """
        check_is_fitted(self)
        ds = _trajectory(u, y)
        hu = build_hankel(ds.inputs[:-1], self.t_ini)
        hy = build_hankel(ds.outputs[:-1], self.t_ini)
        return np.vstack([hu, hy]).T

    def predict(self, xi):
        check_is_fitted(self)
        xi = check_array(xi, dtype=float)
        if xi.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {xi.shape[1]}")
        out = xi @ self.model_.r.T
        return out[:, 0] if self.n_outputs_ == 1 else out


class IOBarrierSafetyFilter(BaseEstimator):
    """Input-output barrier function and safety filter learned from data.

    ``fit(u, y)`` builds the predictor, the extended constraint set from
    the input/output boxes and its maximal control-invariant subset.
    ``decision_function(xi)`` is the barrier value (positive inside),
    ``predict(xi)`` the membership test and ``filter_input(xi, u_nominal)``
    the QP filter.
    """

    def __init__(self, t_ini=5, u_lower=-1.0, u_upper=1.0, y_lower=-1.0, y_upper=1.0,
                 lambda_min=1.0, beta=1e6, max_iter=200, tol=1e-7, require_pe=True):
        self.t_ini = t_ini
        self.u_lower = u_lower
        self.u_upper = u_upper
        self.y_lower = y_lower
        self.y_upper = y_upper
        self.lambda_min = lambda_min
        self.beta = beta
        self.max_iter = max_iter
        self.tol = tol
        self.require_pe = require_pe

    def _input_set(self, m):
        return box_polytope(np.broadcast_to(self.u_lower, m), np.broadcast_to(self.u_upper, m))

    def fit(self, u, y):
        pred = DataDrivenPredictor(t_ini=self.t_ini, require_pe=self.require_pe).fit(u, y)
        self.predictor_ = pred
        self.model_ = pred.model_
        m, p = pred.n_inputs_, pred.n_outputs_
        self.u_set_ = self._input_set(m)
        y_set = box_polytope(np.broadcast_to(self.y_lower, p), np.broadcast_to(self.y_upper, p))
        self.constraint_set_ = extended_constraints(self.u_set_, y_set, self.t_ini)
        self.invariant_report_ = invariant_set(
            self.constraint_set_, self.model_, self.u_set_, self.max_iter, self.tol
        )
        self.safe_set_ = self.invariant_report_.set
        self.n_features_in_ = self.model_.n_xi
        return self

    @property
    def filter_config_(self) -> FilterConfig:
        check_is_fitted(self)
        return FilterConfig(lambda_min=self.lambda_min, beta=self.beta, u_set=self.u_set_)

    def _check_xi(self, xi):
        check_is_fitted(self)
        xi = check_array(xi, dtype=float)
        if xi.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {xi.shape[1]}")
        return xi

    def decision_function(self, xi):
        return h_values(self.safe_set_, self._check_xi(xi))

    def predict(self, xi):
        return contains_many(self.safe_set_, self._check_xi(xi), tol=1e-9)

    def filter_input(self, xi, u_nominal):
        """Single filter call; returns a FilterResult."""
        check_is_fitted(self)
        return cbf_filter(self.model_, self.safe_set_, self.filter_config_, xi, u_nominal)

    def session(self) -> SafetyFilterSession:
        """Warm-started filter for a closed loop."""
        check_is_fitted(self)
        return SafetyFilterSession(self.model_, self.safe_set_, self.filter_config_)
