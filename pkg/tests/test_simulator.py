import numpy as np
import pytest
from numpy.testing import assert_allclose

from ukmp import simulator
from ukmp.errors import NoConfidenceError, NumericalError, ValidationError
from ukmp.scenarios import (HAND_HANDOVER, ROBOT_HANDOVER, ROBOT_START, TASK_R, handover_demos,
                            make_scenario, painting_demos)
from ukmp.simulator import (ControllerSpec, PointMassState, ScenarioConfig, gains_vs_distance,
                            half_decay_distance, run_scenario, run_time_driven, step_dynamics)

from conftest import assert_sym_psd


def hold_config(model, point, start, duration=5.0, dt=0.01, name="hold"):
    return ScenarioConfig(
        controllers=(ControllerSpec("robot", model, R=TASK_R),),
        input_times=[0.0, duration], input_values=np.vstack([point, point]), dt=dt,
        duration=duration, initial_state=PointMassState(start, np.zeros(len(start))), name=name)


class TestDynamics:
    def test_free_flight(self):
        s = step_dynamics(PointMassState([0.0], [2.0]), [0.0], 0.5)
        assert_allclose(s.position, [1.0])
        assert_allclose(s.velocity, [2.0])

    def test_constant_acceleration_exact(self):
        s = step_dynamics(PointMassState([1.0, 0.0], [0.0, -1.0]), [2.0, 4.0], 0.1)
        assert_allclose(s.position, [1.01, -0.08])
        assert_allclose(s.velocity, [0.2, -0.6])

    def test_two_half_steps_equal_one_step(self):
        s0, u = PointMassState([0.3, -0.2], [1.0, 0.5]), np.array([-2.0, 3.0])
        one = step_dynamics(s0, u, 0.2)
        two = step_dynamics(step_dynamics(s0, u, 0.1), u, 0.1)
        assert_allclose(two.position, one.position, atol=1e-15)
        assert_allclose(two.velocity, one.velocity, atol=1e-15)

    def test_work_energy(self):
        rng = np.random.default_rng(0)
        s = PointMassState(np.zeros(3), rng.standard_normal(3))
        for _ in range(50):
            u = rng.standard_normal(3)
            nxt = step_dynamics(s, u, 0.01)
            work = u @ (nxt.position - s.position)
            dke = 0.5 * (nxt.velocity @ nxt.velocity - s.velocity @ s.velocity)
            assert abs(work - dke) < 1e-14
            s = nxt

    def test_energy_conserved_without_force(self):
        s = PointMassState(np.zeros(2), np.array([0.3, -0.4]))
        for _ in range(100):
            s = step_dynamics(s, np.zeros(2), 0.01)
        assert_allclose(s.velocity @ s.velocity, 0.25, rtol=1e-14)

    def test_non_finite_detected(self):
        with pytest.raises(NumericalError):
            step_dynamics(PointMassState([0.0], [0.0]), [np.inf], 0.01)

    def test_bad_dt(self):
        with pytest.raises(ValidationError):
            step_dynamics(PointMassState([0.0], [0.0]), [0.0], 0.0)


class TestConfig:
    def test_input_must_cover_duration(self, handover_models):
        model = handover_models[1]["handover"].model
        with pytest.raises(ValidationError):
            ScenarioConfig((ControllerSpec("r", model, R=TASK_R),), [0.0, 1.0],
                           np.zeros((2, 3)), 0.01, 2.0, PointMassState(np.zeros(3), np.zeros(3)))

    def test_duplicate_names(self, handover_models):
        model = handover_models[1]["handover"].model
        spec = ControllerSpec("r", model, R=TASK_R)
        with pytest.raises(ValidationError):
            ScenarioConfig((spec, spec), [0.0, 1.0], np.zeros((2, 3)), 0.01, 1.0,
                           PointMassState(np.zeros(3), np.zeros(3)))

    def test_scalar_r_broadcasts(self, handover_models):
        spec = ControllerSpec("r", handover_models[1]["handover"].model, R=0.5)
        assert_allclose(spec.R, 0.5 * np.eye(3))


class TestClosedLoop:
    def test_settles_on_held_input(self, handover_models):
        model = handover_models[1]["handover"].model
        trace = run_scenario(hold_config(model, HAND_HANDOVER, ROBOT_START))
        assert trace.tracking_error[-1] < 1e-2
        assert np.all(np.isfinite(trace.position))

    def test_deterministic(self, handover_models):
        model = handover_models[1]["handover"].model
        cfg = hold_config(model, HAND_HANDOVER, ROBOT_START, duration=1.0)
        a, b = run_scenario(cfg), run_scenario(cfg)
        assert np.array_equal(a.position, b.position)
        assert np.array_equal(a.kp, b.kp)

    def test_gain_cache_matches_direct_solve(self, handover_models):
        model = handover_models[1]["handover"].model
        trace = run_scenario(hold_config(model, HAND_HANDOVER, ROBOT_START, duration=0.2))
        from ukmp import lqr
        direct = lqr.infinite_horizon_gains(lqr.double_integrator(3),
                                            lqr.weight_from_cov(trace.cov[-1, 0]), TASK_R)
        assert_allclose(trace.kp[-1, 0], direct.Kp, rtol=1e-8)

    def test_no_confidence_applies_zero_command(self, handover_models, monkeypatch):
        def refuse(outputs):
            raise NoConfidenceError("forced")
        monkeypatch.setattr(simulator, "fuse", refuse)
        model = handover_models[1]["handover"].model
        trace = run_scenario(hold_config(model, HAND_HANDOVER, ROBOT_START, duration=0.05))
        assert len(trace.events) == len(trace)
        assert "no-confidence" in trace.events[0][1]
        assert_allclose(trace.fused, 0.0)
        assert_allclose(trace.position, np.tile(ROBOT_START, (len(trace), 1)))

    def test_trace_shapes(self, scenario_run):
        run = scenario_run("handover")
        tr = run.trace
        n = run.config.n_steps
        assert tr.controller_ids == ("handover",)
        assert tr.kp.shape == (n, 1, 3, 3) and tr.fused.shape == (n, 3) and len(tr.phase) == n
        assert_allclose(tr.share, 1.0)

    @pytest.mark.parametrize("name", ["handover", "painting_full"])
    def test_bounded(self, scenario_run, name):
        run = scenario_run(name)
        samples = np.vstack([d.outputs for demos in run.data.values() for d in demos])
        box = np.linalg.norm(samples.max(axis=0) - samples.min(axis=0))
        assert np.max(np.linalg.norm(run.trace.position, axis=1)) < 10 * box
        assert np.all(np.isfinite(run.trace.fused))

    def test_time_driven_agrees_with_event_driven(self):
        _, cfg = make_scenario("toy1d", 0)
        timed, event = run_time_driven(cfg), run_scenario(cfg)
        assert timed.kp.shape == (cfg.n_steps, 1, 1, 1)
        assert np.all(np.isfinite(timed.position))
        # the finite-horizon gains match the stationary ones away from the end
        mid = cfg.n_steps // 4
        assert_allclose(timed.kp[mid], event.kp[mid], rtol=0.1)
        assert np.max(np.abs(timed.position - event.position)) < 0.02

    def test_time_driven_needs_one_controller(self, scenario_run):
        with pytest.raises(ValidationError):
            run_time_driven(scenario_run("painting_full").config)


class TestProbe:
    def test_far_field_floor(self, handover_models):
        model = handover_models[1]["handover"].model
        s = gains_vs_distance(model, HAND_HANDOVER, [1, 0, 0], 10.0, 21, TASK_R)
        floor = np.sqrt(1.0 / (500.0 * 1e-2))
        assert_allclose(s[-1].kp_diag, floor, rtol=1e-3)
        assert s[0].kp_diag[0] > s[-1].kp_diag[0]

    def test_half_decay_interpolates(self):
        samples = [simulator.ProbeSample(d, np.array([k]), 0.0)
                   for d, k in ((0.0, 4.0), (1.0, 3.0), (2.0, 1.0))]
        assert_allclose(half_decay_distance(samples), 1.5)

    def test_half_decay_never(self):
        samples = [simulator.ProbeSample(d, np.array([1.0]), 0.0) for d in (0.0, 1.0)]
        assert half_decay_distance(samples) == float("inf")

    def test_zero_direction(self, handover_models):
        with pytest.raises(ValidationError):
            gains_vs_distance(handover_models[1]["handover"].model, HAND_HANDOVER, [0, 0, 0], 1.0, 3, TASK_R)


class TestScenarioData:
    def test_fixture_counts(self):
        assert len(handover_demos(0)) == 7
        assert len(painting_demos(0)) == 5

    def test_handover_endpoints_converge(self):
        demos = handover_demos(0)
        ends = np.array([d.outputs[-1] for d in demos])
        starts = np.array([d.outputs[0] for d in demos])
        assert np.max(np.linalg.norm(ends - ROBOT_HANDOVER, axis=1)) < 0.02
        assert np.trace(np.cov(ends.T)) < 0.05 * np.trace(np.cov(starts.T))

    def test_hand_path_reaches_handover(self):
        ends = np.array([d.inputs[-1] for d in handover_demos(0)])
        assert np.max(np.linalg.norm(ends - HAND_HANDOVER, axis=1)) < 0.03

    @pytest.mark.parametrize("name", ["toy1d", "handover", "painting"])
    def test_seeded_data_reproducible(self, name):
        a, _ = make_scenario(name, 3)
        b, _ = make_scenario(name, 3)
        for key in a:
            for da, db in zip(a[key], b[key]):
                assert np.array_equal(da.inputs, db.inputs)
                assert np.array_equal(da.outputs, db.outputs)

    def test_scenario_run_reproducible(self, scenario_run):
        first = scenario_run("handover").trace
        _, cfg = make_scenario("handover", 0)
        again = run_scenario(cfg)
        assert np.array_equal(first.position, again.position)
        assert np.array_equal(first.kp, again.kp)

    def test_trace_covariances_clean(self, scenario_run):
        assert_sym_psd(scenario_run("handover").trace.cov)
