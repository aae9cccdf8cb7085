import csv
import json

import numpy as np
import pytest

from iodcbf.filter import (
    FilterConfig,
    SafetyFilterSession,
    cbf_filter,
    filter_batch,
    h_value,
    h_values,
    mpsf,
    safe_input_hyperplane,
)
from iodcbf.geometry import Polytope, box_polytope, hit_and_run
from iodcbf.model import step_extended
from iodcbf.numkit import StatusKind


@pytest.fixture(scope="module")
def samples(safe_set):
    return hit_and_run(safe_set, 200, seed=3)


def unit_interval():
    return box_polytope([-1.0], [1.0])


# --- barrier value ----------------------------------------------------------


def test_h_value_sign_examples():
    s = unit_interval()
    assert h_value(s, [0.0]) == 1.0
    assert h_value(s, [1.0]) == 0.0
    assert h_value(s, [2.0]) == -1.0
    assert np.array_equal(h_values(s, [[0.0], [1.0], [2.0]]), [1.0, 0.0, -1.0])


# --- filter on the 1-D integrator ------------------------------------------


def test_integrator_boundary_filter(integrator, unit_box_2d):
    # the safe set of the integrator is the unit box cut by |u + y| <= 1
    s = Polytope([[1, 0], [-1, 0], [0, 1], [0, -1], [1, 1], [-1, -1]], [1, 1, 1, 1, 1, 1])
    res = cbf_filter(integrator, s, FilterConfig(lambda_min=1.0), [0.0, 1.0], [1.0])
    assert res.ok
    assert res.u_safe == pytest.approx([0.0], abs=1e-10)
    assert res.lam == 1.0


def test_integrator_safe_input_set(integrator):
    s = Polytope([[1, 0], [-1, 0], [0, 1], [0, -1], [1, 1], [-1, -1]], [1, 1, 1, 1, 1, 1])
    g, b = safe_input_hyperplane(integrator, s, [0.0, 1.0])
    us = np.linspace(-1, 1, 201)
    ok = np.all(np.outer(us, g[:, 0]) <= b + 1e-12, axis=1)
    assert us[ok].min() == pytest.approx(-1.0)
    assert us[ok].max() == pytest.approx(0.0, abs=1e-12)


# --- filter on the benchmark -----------------------------------------------


def test_deep_interior_keeps_nominal(model, safe_set):
    for lam_min in (0.01, 0.1, 1.0):
        res = cbf_filter(model, safe_set, FilterConfig(lambda_min=lam_min), np.zeros(10), [0.0])
        assert res.ok
        assert res.u_safe == pytest.approx([0.0], abs=1e-12)
        assert res.lam == pytest.approx(lam_min)


def test_interior_hyperplane_is_nonbinding(model, safe_set):
    g, b = safe_input_hyperplane(model, safe_set, np.zeros(10))
    for u in (-1.0, 1.0):
        assert np.all(g[:, 0] * u <= b + 1e-12)


def test_filter_result_invariants(model, safe_set, samples):
    rng = np.random.default_rng(0)
    for lam_min in (0.01, 0.1, 1.0):
        cfg = FilterConfig(lambda_min=lam_min)
        for xi in samples[:60]:
            res = cbf_filter(model, safe_set, cfg, xi, rng.uniform(-2, 2, 1))
            assert res.ok
            assert lam_min - 1e-12 <= res.lam <= 1.0
            assert abs(res.u_safe[0]) <= 1.0 + 1e-8
            # decay condition
            assert res.h_after_predicted >= (1 - res.lam) * res.h_before - 1e-7


def test_minimal_invasiveness(model, safe_set, samples):
    rng = np.random.default_rng(1)
    cfg = FilterConfig(lambda_min=0.1)
    for xi in samples[:60]:
        u_l = rng.uniform(-2, 2, 1)
        res = cbf_filter(model, safe_set, cfg, xi, u_l)
        if np.abs(res.u_safe - u_l).max() > 1e-9:
            g, b = safe_input_hyperplane(model, safe_set, xi)
            bound = b - (1 - res.lam) * res.h_before
            violates_barrier = np.any(g @ u_l > bound + 1e-12)
            assert violates_barrier or abs(u_l[0]) > 1.0


def test_outside_set_is_reported_infeasible(model, safe_set):
    xi = np.zeros(10)
    xi[8], xi[9] = 0.8, 1.0  # rising through the upper bound
    res = cbf_filter(model, safe_set, FilterConfig(lambda_min=1.0), xi, [0.0])
    assert res.status is StatusKind.INFEASIBLE
    assert not res.ok and res.u_safe is None


def test_scale_invariance_at_unit_decay(model, safe_set, samples):
    rng = np.random.default_rng(2)
    scale = rng.uniform(0.2, 5.0, safe_set.n_rows)
    scaled = Polytope(safe_set.lhs * scale[:, None], safe_set.rhs * scale)
    cfg = FilterConfig(lambda_min=1.0)
    for xi in samples[:50]:
        u_l = rng.uniform(-2, 2, 1)
        a = cbf_filter(model, safe_set, cfg, xi, u_l)
        b = cbf_filter(model, scaled, cfg, xi, u_l)
        assert np.abs(a.u_safe - b.u_safe).max() <= 1e-7


def test_explicit_input_bounds_are_implied(model, safe_set, samples):
    rng = np.random.default_rng(3)
    with_u = FilterConfig(lambda_min=1.0)
    without = FilterConfig(lambda_min=1.0, explicit_input_constraints=False)
    for xi in samples[:50]:
        u_l = rng.uniform(-3, 3, 1)
        a = cbf_filter(model, safe_set, with_u, xi, u_l)
        b = cbf_filter(model, safe_set, without, xi, u_l)
        assert np.abs(a.u_safe - b.u_safe).max() <= 1e-7


def test_recursive_feasibility_long_run(model, safe_set):
    rng = np.random.default_rng(4)
    session = SafetyFilterSession(model, safe_set, FilterConfig(lambda_min=0.1))
    xi = np.zeros(10)
    for _ in range(10_000):
        res = session(xi, rng.uniform(-3, 3, 1))
        assert res.ok
        xi = step_extended(model, xi, res.u_safe)
    assert h_value(safe_set, xi) >= -1e-8


@pytest.mark.parametrize("u_l", [1.0, -1.0])
def test_boundary_riding_does_not_drift(model, safe_set, u_l):
    # at unit decay the state settles on the boundary and must stay there
    session = SafetyFilterSession(model, safe_set, FilterConfig(lambda_min=1.0))
    xi = np.zeros(10)
    worst = np.inf
    for _ in range(2000):
        res = session(xi, [u_l])
        assert res.ok
        xi = step_extended(model, xi, res.u_safe)
        worst = min(worst, h_value(safe_set, xi))
    assert -1e-10 <= worst <= 1e-6


def test_session_matches_cold_solves(model, safe_set, samples):
    cfg = FilterConfig(lambda_min=0.1)
    session = SafetyFilterSession(model, safe_set, cfg)
    for xi in samples[:30]:
        a = session(xi, [0.7])
        b = cbf_filter(model, safe_set, cfg, xi, [0.7])
        assert np.abs(a.u_safe - b.u_safe).max() <= 1e-9


def test_filter_config_validation():
    with pytest.raises(ValueError):
        FilterConfig(lambda_min=0.0)
    with pytest.raises(ValueError):
        FilterConfig(lambda_min=1.5)
    with pytest.raises(ValueError):
        FilterConfig(beta=-1.0)


def test_filter_result_json(model, safe_set):
    res = cbf_filter(model, safe_set, FilterConfig(), np.zeros(10), [0.5])
    d = json.loads(res.to_json())
    assert d["status"] == "Optimal" and d["u_safe"] == pytest.approx([0.5])


def test_filter_batch(tmp_path, model, safe_set, samples):
    src = tmp_path / "in.csv"
    with open(src, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"xi_{i}" for i in range(10)] + ["ul_0"])
        for xi in samples[:5]:
            w.writerow(list(xi) + [1.0])
    n = filter_batch(model, safe_set, FilterConfig(), src, tmp_path / "out.csv")
    rows = list(csv.DictReader(open(tmp_path / "out.csv")))
    assert n == 5 and len(rows) == 5
    assert all(r["status"] == "Optimal" for r in rows)
    ref = cbf_filter(model, safe_set, FilterConfig(), samples[0], [1.0])
    assert float(rows[0]["u_0"]) == ref.u_safe[0]


# --- predictive filter -------------------------------------------------------


def test_mpsf_one_step_equivalence(model, safe_set, ambient, u_set, samples):
    rng = np.random.default_rng(5)
    cfg = FilterConfig(lambda_min=1.0)
    for xi in samples[:50]:
        u_l = rng.uniform(-2, 2, 1)
        a = cbf_filter(model, safe_set, cfg, xi, u_l)
        b = mpsf(model, ambient, u_set, safe_set, 1, xi, u_l)
        assert np.abs(a.u_safe - b.u_safe).max() <= 1e-6


def test_mpsf_keeps_safe_nominal(model, safe_set, ambient, u_set):
    res = mpsf(model, ambient, u_set, safe_set, 3, np.zeros(10), [0.0])
    assert res.ok and res.u_safe == pytest.approx([0.0], abs=1e-9)


def test_mpsf_horizon_three_grid_oracle(integrator, unit_box_2d):
    u_set = box_polytope([-1], [1])
    xi0 = np.array([0.0, 0.9])
    res = mpsf(integrator, unit_box_2d, u_set, unit_box_2d, 3, xi0, [1.0])
    # exhaustive grid over (u0, u1, u2)
    g = np.round(np.linspace(-1, 1, 201), 10)
    best = None
    u1, u2 = np.meshgrid(g, g, indexing="ij")
    for u0 in g:
        xs = [(u0, 0.9 + 0.0), (u1, 0.9 + u0), (u2, 0.9 + u0 + u1)]
        ok = np.ones_like(u1, dtype=bool)
        for uu, yy in xs:
            ok &= (np.abs(uu) <= 1 + 1e-12) & (np.abs(yy) <= 1 + 1e-12)
        if ok.any() and (best is None or abs(u0 - 1) < abs(best - 1)):
            best = u0
    assert res.ok
    assert abs(res.u_safe[0] - best) <= 0.01


def test_mpsf_infeasible_outside(model, safe_set, ambient, u_set):
    xi = np.zeros(10)
    xi[8], xi[9] = 0.8, 1.0
    assert not mpsf(model, ambient, u_set, safe_set, 1, xi, [0.0]).ok
