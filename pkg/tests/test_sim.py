import numpy as np
import pytest

from iodcbf.errors import FilterInfeasible, HistoryMismatch, ShapeMismatch
from iodcbf.filter import FilterConfig, h_value
from iodcbf.model import build_extended_dynamics, pack_history, predict_output, step_extended
from iodcbf.numkit import StatusKind
from iodcbf.sim import (
    Constant,
    NominalSchedule,
    PiecewiseRandom,
    SimLog,
    StateSpacePlant,
    StaticFeedback,
    benchmark_schedule,
    delayed_double_integrator,
    run_closed_loop,
    simulate_open_loop,
    warmup_history,
)

from test_model import arx_outputs


def constant_schedule(value, steps):
    return NominalSchedule([(0, steps, Constant((value,)))])


# --- plant ------------------------------------------------------------------


def test_impulse_response():
    u = np.zeros(8)
    u[0] = 1.0
    y = simulate_open_loop(delayed_double_integrator(), u)[:, 0]
    assert np.array_equal(y[:4], np.zeros(4))
    assert y[4] == pytest.approx(0.01, abs=1e-15)
    assert y[5] == pytest.approx(0.02, abs=1e-15)


def test_output_is_measured_before_input():
    plant = StateSpacePlant([[1.0]], [[1.0]], [[1.0]])
    assert plant.step([5.0]) == pytest.approx([0.0])
    assert plant.step([0.0]) == pytest.approx([5.0])


def test_plant_copy_is_independent():
    plant = delayed_double_integrator()
    plant.step([1.0])
    twin = plant.copy()
    a = [plant.step([0.0]) for _ in range(6)]
    b = [twin.step([0.0]) for _ in range(6)]
    assert np.array_equal(a, b)


def test_plant_rejects_bad_input():
    plant = delayed_double_integrator()
    with pytest.raises(ShapeMismatch):
        plant.step([1.0, 2.0])
    with pytest.raises(ValueError):
        plant.step([np.nan])


def test_open_loop_matches_arx():
    u = np.random.default_rng(3).uniform(-1, 1, 400)
    y = simulate_open_loop(delayed_double_integrator(), u)[:, 0]
    assert np.abs(y - arx_outputs(u)).max() <= 1e-10


def test_warmup_history_windows():
    u = np.random.default_rng(0).standard_normal(9)
    xi = warmup_history(delayed_double_integrator(), u, 5)
    y = arx_outputs(u)
    assert np.allclose(xi, pack_history(u[-5:], y[-5:]), atol=1e-14)
    with pytest.raises(ValueError):
        warmup_history(delayed_double_integrator(), u[:3], 5)


def test_zero_warmup_is_zero_state():
    assert np.array_equal(warmup_history(delayed_double_integrator(), np.zeros(7), 5), np.zeros(10))


def test_warmup_outside_constraints_is_flagged(ambient):
    with pytest.warns(RuntimeWarning):
        warmup_history(delayed_double_integrator(), [0, 0, 0, 0, 1.5], 5, ambient)


# --- schedules --------------------------------------------------------------


def test_schedule_contiguity():
    NominalSchedule([(0, 5, Constant((0.0,))), (5, 9, Constant((1.0,)))])
    with pytest.raises(ValueError):
        NominalSchedule([(0, 5, Constant((0.0,))), (6, 9, Constant((1.0,)))])
    with pytest.raises(ValueError):
        NominalSchedule([(0, 5, Constant((0.0,))), (4, 9, Constant((1.0,)))])
    with pytest.raises(ValueError):
        NominalSchedule([(5, 0, Constant((0.0,)))])


def test_piecewise_random_holds_levels():
    gen = NominalSchedule([(0, 100, PiecewiseRandom(20, 1.5, seed=2))]).compile(1)
    vals = np.array([gen(t, None)[0] for t in range(100)])
    assert np.all(np.abs(vals) <= 1.5)
    for k in range(5):
        assert np.all(vals[20 * k:20 * (k + 1)] == vals[20 * k])
    assert len(np.unique(vals)) == 5


def test_feedback_segment():
    gen = NominalSchedule([(0, 3, StaticFeedback((1.0, -2.0)))]).compile(1)
    assert gen(1, np.array([3.0, 1.0])) == pytest.approx([-1.0])
    with pytest.raises(IndexError):
        gen(3, np.zeros(2))


def test_benchmark_schedule_layout():
    s = benchmark_schedule(0)
    assert s.n_steps == 4000
    assert [seg[:2] for seg in s.segments] == [(0, 2000), (2000, 4000)]


# --- closed loop --------------------------------------------------------------


def test_zero_nominal_passes_through(model, safe_set):
    log = run_closed_loop(delayed_double_integrator(), model, safe_set,
                          FilterConfig(lambda_min=0.1), constant_schedule(0.0, 200))
    assert len(log) == 200
    assert np.all(np.vstack(log.column("u_applied")) == 0.0)
    assert np.allclose(log.column("lambda"), 0.1)
    assert np.all(log.column("qp_status") == "Optimal")


def test_adversarial_nominal_stays_safe(model, safe_set):
    for lam_min in (0.01, 1.0):
        log = run_closed_loop(delayed_double_integrator(), model, safe_set,
                              FilterConfig(lambda_min=lam_min), constant_schedule(1.0, 600))
        s = log.summary()
        assert s["infeasible_count"] == 0
        assert s["min_h"] >= -1e-8
        assert s["max_abs_y"] <= 1.0 + 1e-8
        assert s["first_intervention"] is not None


def test_closed_loop_state_matches_model(model, safe_set):
    # the measured history must follow the extended dynamics exactly
    log = run_closed_loop(delayed_double_integrator(), model, safe_set,
                          FilterConfig(lambda_min=0.1), benchmark_schedule(1, steps=300, switch=150))
    u = np.vstack(log.column("u_applied"))[:, 0]
    y = np.vstack(log.column("y"))[:, 0]
    xi = np.zeros(10)
    for t in range(300):
        assert h_value(safe_set, xi) == pytest.approx(log.column("h")[t], abs=1e-12)
        # measured output equals the one-step prediction
        assert abs(y[t] - predict_output(model, xi)[0]) <= 1e-8
        xi = step_extended(model, xi, [u[t]])


def test_closed_loop_is_deterministic(tmp_path, model, safe_set):
    paths = []
    for k in range(2):
        log = run_closed_loop(delayed_double_integrator(), model, safe_set,
                              FilterConfig(lambda_min=0.01), benchmark_schedule(4, steps=400, switch=200))
        paths.append(tmp_path / f"log{k}.csv")
        log.to_csv(paths[-1])
    assert paths[0].read_bytes() == paths[1].read_bytes()


def test_empty_schedule_gives_empty_log(model, safe_set):
    log = run_closed_loop(delayed_double_integrator(), model, safe_set, FilterConfig(),
                          NominalSchedule([]))
    assert len(log) == 0
    assert log.summary()["steps"] == 0


def test_wrong_model_raises_history_mismatch(safe_set):
    wrong = build_extended_dynamics(np.full((1, 10), 0.05), 1, 1, 5)
    xi0 = np.zeros(10)
    plant = delayed_double_integrator()
    # a nonzero history that the plant does not actually hold
    xi0[9] = 0.1
    with pytest.raises(HistoryMismatch) as exc:
        run_closed_loop(plant, wrong, safe_set, FilterConfig(), constant_schedule(0.0, 10),
                        xi_init=xi0)
    assert exc.value.log.aborted.startswith("history mismatch")


def test_infeasible_state_aborts_with_log(model, safe_set):
    xi0 = np.zeros(10)
    xi0[8], xi0[9] = 0.8, 1.0
    with pytest.raises(FilterInfeasible) as exc:
        run_closed_loop(delayed_double_integrator(), model, safe_set, FilterConfig(),
                        constant_schedule(0.0, 10), xi_init=xi0)
    log = exc.value.log
    assert len(log) == 1 and log.rows[0][-1] == StatusKind.INFEASIBLE.value


def test_custom_filter_callable(model, safe_set):
    calls = []

    def passthrough(xi, u_l):
        from iodcbf.filter import cbf_filter

        calls.append(1)
        return cbf_filter(model, safe_set, FilterConfig(), xi, u_l)

    log = run_closed_loop(delayed_double_integrator(), model, safe_set, FilterConfig(),
                          constant_schedule(0.0, 5), safety_filter=passthrough)
    assert len(calls) == 5 and len(log) == 5


def test_simlog_csv_columns(tmp_path, model, safe_set):
    log = run_closed_loop(delayed_double_integrator(), model, safe_set, FilterConfig(),
                          constant_schedule(0.5, 3), metadata={"seed": 7})
    log.to_csv(tmp_path / "l.csv")
    lines = (tmp_path / "l.csv").read_text().splitlines()
    assert lines[0] == "step,time_s,u_nominal,u_applied,y,h,lambda,qp_status"
    assert len(lines) == 4
    assert log.metadata["seed"] == 7
    assert SimLog().summary()["min_h"] is None
