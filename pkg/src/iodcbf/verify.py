"""Property checks for a fitted model and its safe set.

Each check returns a ``PropertyCheck``; ``verify_all`` bundles them into a
JSON-ready report.  Checks are sample based and fully seeded.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .filter import FilterConfig, cbf_filter, h_values, mpsf
from .geometry import (
    Polytope,
    chebyshev_center,
    hit_and_run,
    is_subset,
    ray_exit,
    successor_input_exists,
)
from .model import DataDrivenModel


@dataclass
class PropertyCheck:
    name: str
    passed: bool
    n_samples: int
    max_violation: float
    details: dict = field(default_factory=dict)


@dataclass
class VerificationReport:
    checks: list

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_dict(self) -> dict:
        return {"passed": self.passed, "checks": [asdict(c) for c in self.checks]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def check_containment(safe_set: Polytope, ambient: Polytope, tol: float = 1e-7) -> PropertyCheck:
    ok = is_subset(safe_set, ambient, tol)
    return PropertyCheck("subset_of_constraints", ok, 0, 0.0 if ok else float("inf"))


def check_sampled_invariance(model: DataDrivenModel, safe_set: Polytope, u_set: Polytope,
                             n_samples: int = 1000, seed: int = 0,
                             tol: float = 1e-7) -> PropertyCheck:
    """Every sampled state of the set has an admissible input keeping it inside."""
    pts = hit_and_run(safe_set, n_samples, seed=seed)
    failed = [i for i, xi in enumerate(pts)
              if not successor_input_exists(safe_set, model, u_set, xi, tol)]
    return PropertyCheck("sampled_invariance", not failed, n_samples, float(len(failed)),
                         {"failed_samples": len(failed)})


def _boundary_rays(safe_set: Polytope, n: int, rng):
    center = chebyshev_center(safe_set)[0]
    dirs = rng.standard_normal((n, safe_set.dim))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    t = np.array([ray_exit(safe_set, center, d) for d in dirs])
    return center, dirs, t


def check_sign_conditions(safe_set: Polytope, n_interior: int = 1000, n_boundary: int = 100,
                          n_exterior: int = 1000, seed: int = 0,
                          boundary_tol: float = 1e-9) -> PropertyCheck:
    """``h > 0`` inside, ``h = 0`` on the boundary and ``h < 0`` outside."""
    rng = np.random.default_rng(seed)
    h_in = h_values(safe_set, hit_and_run(safe_set, n_interior, seed=seed))

    center, dirs, t = _boundary_rays(safe_set, n_boundary, rng)
    h_bd = h_values(safe_set, center + t[:, None] * dirs)

    c_out, d_out, t_out = _boundary_rays(safe_set, n_exterior, rng)
    scale = 1.0 + rng.uniform(0.01, 1.0, n_exterior)
    h_out = h_values(safe_set, c_out + (scale * t_out)[:, None] * d_out)

    worst = max(float(np.max(-h_in, initial=-np.inf)),
                float(np.max(np.abs(h_bd), initial=0.0)) - boundary_tol,
                float(np.max(h_out, initial=-np.inf)))
    ok = bool(np.all(h_in > 0) and np.all(np.abs(h_bd) <= boundary_tol) and np.all(h_out < 0))
    return PropertyCheck(
        "sign_conditions", ok, n_interior + n_boundary + n_exterior, max(worst, 0.0),
        {"min_h_interior": float(h_in.min()), "max_abs_h_boundary": float(np.abs(h_bd).max()),
         "max_h_exterior": float(h_out.max())},
    )


def check_mpsf_equivalence(model: DataDrivenModel, safe_set: Polytope, ambient: Polytope,
                           u_set: Polytope, n_samples: int = 100, seed: int = 0,
                           tol: float = 1e-6, nominal_scale: float = 2.0) -> PropertyCheck:
    """The one-step predictive filter and the barrier filter with ``lambda = 1`` agree."""
    rng = np.random.default_rng(seed)
    pts = hit_and_run(safe_set, n_samples, seed=seed)
    cfg = FilterConfig(lambda_min=1.0, u_set=u_set)
    dev, failures = 0.0, 0
    for xi in pts:
        u_l = rng.uniform(-nominal_scale, nominal_scale, model.m)
        a = cbf_filter(model, safe_set, cfg, xi, u_l)
        b = mpsf(model, ambient, u_set, safe_set, 1, xi, u_l)
        if not (a.ok and b.ok):
            failures += 1
            continue
        dev = max(dev, float(np.max(np.abs(a.u_safe - b.u_safe))))
    ok = failures == 0 and dev <= tol
    return PropertyCheck("mpsf_equivalence", ok, n_samples, dev, {"solver_failures": failures})


def verify_all(model: DataDrivenModel, safe_set: Polytope, ambient: Polytope, u_set: Polytope,
               seed: int = 0, n_invariance: int = 1000) -> VerificationReport:
    return VerificationReport([
        check_containment(safe_set, ambient),
        check_sampled_invariance(model, safe_set, u_set, n_invariance, seed),
        check_sign_conditions(safe_set, seed=seed),
        check_mpsf_equivalence(model, safe_set, ambient, u_set, seed=seed),
    ])
