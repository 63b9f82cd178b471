import csv
import io

import numpy as np
import pytest

from bgmm_policy.control import ConservativePolicy
from bgmm_policy.distributions import MvnDist
from bgmm_policy.fusion import ProductPolicy
from bgmm_policy.regression import moment_match_mixture
from bgmm_policy.simlab.experiments import (
    FAILURE,
    SUCCESS,
    TOUCH,
    Grid,
    RecipeParams,
    ShiftSettings,
    build_policy,
    classify,
    entropy_map,
    entropy_ratio,
    flow_field,
    parse_recipe,
    rollout_trajectory,
    shift_experiment,
    thread_count,
    trial_start,
)
from bgmm_policy.simlab.policies import CONDITIONAL, GLOBAL, ImitationPolicy, ScriptedGoalPolicy, ZeroPolicy, regressor_for
from bgmm_policy.simlab.rollout import CONVERGED, DIVERGED, HORIZON, PointMassSystem, RolloutResult, rollout
from bgmm_policy.simlab.scenarios import SCENARIOS, Band, Trajectory, generate_demos

from conftest import gaussian_model

MU = np.array([0.3, -0.4, 0.0, 0.0])
COV = np.array([[0.2, 0.05, 0.0, 0.0], [0.05, 0.1, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]])


class TestPointMassSystem:
    def test_linear_system(self):
        lsys = PointMassSystem(dt=0.02).linear_system()
        np.testing.assert_array_equal(lsys.A, np.eye(2))
        np.testing.assert_array_equal(lsys.B, 0.02 * np.eye(2))

    def test_validation(self):
        for kwargs in ({"dt": 0.0}, {"control_mode": "force"}, {"noise_std": -1.0}):
            with pytest.raises(ValueError):
                PointMassSystem(**kwargs)


class TestScenarios:
    @pytest.mark.parametrize("name", SCENARIOS)
    def test_deterministic(self, name):
        a, b = generate_demos(name, 3, 7), generate_demos(name, 3, 7)
        for ta, tb in zip(a.trajectories, b.trajectories):
            np.testing.assert_array_equal(ta.states, tb.states)
            np.testing.assert_array_equal(ta.controls, tb.controls)
        assert not np.array_equal(a.states, generate_demos(name, 3, 8).states)

    @pytest.mark.parametrize("name", SCENARIOS)
    def test_controls_are_finite_differences(self, name):
        demos = generate_demos(name, 4, 0)
        for tr in demos.trajectories:
            fd = np.diff(tr.states, axis=0) / demos.dt
            assert np.max(np.abs(fd - tr.controls[:-1])) <= 3 * demos.noise_std

    def test_obstacle_alternates_passages(self):
        demos = generate_demos("obstacle_bimodal", 8, 0)
        band = demos.band
        sides = []
        for tr in demos.trajectories:
            inside = (tr.states[:, 0] >= band.x0) & (tr.states[:, 0] <= band.x1)
            y = tr.states[inside, 1]
            assert np.all(np.abs(y) > band.y1)
            sides.append(np.sign(y.mean()))
        assert sides.count(1.0) == 4 and sides.count(-1.0) == 4

    def test_limit_cycle_orbits(self):
        demos = generate_demos("limit_cycle", 4, 0)
        r = np.linalg.norm(demos.states, axis=1)
        assert 0.8 < r.min() and r.max() < 1.2
        for tr in demos.trajectories:
            ang = np.unwrap(np.arctan2(tr.states[:, 1], tr.states[:, 0]))
            assert ang[-1] - ang[0] > 2 * np.pi

    def test_validation(self):
        with pytest.raises(ValueError):
            generate_demos("maze", 2, 0)
        with pytest.raises(ValueError):
            generate_demos("s_curve", 0, 0)
        with pytest.raises(ValueError):
            Trajectory(np.zeros((3, 2)), np.zeros((2, 2)), np.arange(3.0))
        with pytest.raises(ValueError):
            Trajectory(np.full((2, 2), np.nan), np.zeros((2, 2)), np.arange(2.0))


class TestBand:
    def test_contains_and_margin(self):
        band = Band(-1.0, 1.0, -0.5, 0.5)
        np.testing.assert_array_equal(band.contains(np.array([[0.0, 0.0], [0.0, 0.6]])), [True, False])
        assert band.contains(np.array([0.0, 0.6]), margin=0.2)[0]

    def test_segment_crossing(self):
        band = Band(-0.1, 0.1, -1.0, 1.0)
        assert band.path_hits(np.array([[-1.0, 0.0], [1.0, 0.0]]))
        assert not band.path_hits(np.array([[-1.0, 2.0], [1.0, 2.0]]))


class TestRollout:
    def test_zero_policy_is_constant(self):
        x0 = np.array([0.4, -1.2])
        res = rollout(ZeroPolicy(2), PointMassSystem(), x0, 50)
        assert res.termination == HORIZON
        np.testing.assert_array_equal(res.states, np.tile(x0, (51, 1)))

    def test_conservative_converges_to_mean(self):
        model = gaussian_model(MU, COV)
        sys = PointMassSystem()
        pol = ConservativePolicy(model, sys.linear_system(), 0.1 * np.eye(2), 50)
        res = rollout(pol, sys, np.array([2.0, 2.5]), 500)
        assert np.linalg.norm(res.states[-1] - MU[:2]) < 1e-3

    def test_diverged_on_bound_and_non_finite(self):
        def blowup(x, t=0):
            return MvnDist(np.full(2, 1e308), np.eye(2))

        res = rollout(blowup, PointMassSystem(dt=1.0), np.zeros(2), 10)
        assert res.termination == DIVERGED
        res = rollout(ScriptedGoalPolicy(np.array([100.0, 0.0])), PointMassSystem(), np.zeros(2), 500, bound=5.0)
        assert res.termination == DIVERGED
        assert np.linalg.norm(res.states[-1]) > 5.0 >= np.max(np.linalg.norm(res.states[:-1], axis=1))

    def test_converged(self):
        res = rollout(ScriptedGoalPolicy(np.ones(2)), PointMassSystem(), np.zeros(2), 1000, converge_tol=1e-6)
        assert res.termination == CONVERGED and len(res.states) < 1001

    def test_sampled_rollout_seeded(self):
        demos = generate_demos("s_curve", 2, 0)
        pol = ScriptedGoalPolicy(demos.goal, var=0.1)
        a = rollout(pol, PointMassSystem(), demos.starts[0], 30, "sample", seed=3)
        b = rollout(pol, PointMassSystem(), demos.starts[0], 30, "sample", seed=3)
        np.testing.assert_array_equal(a.states, b.states)

    def test_records_entropy(self, s_curve):
        demos, post = s_curve
        res = rollout(ImitationPolicy(post, CONDITIONAL), PointMassSystem(), demos.starts[0], 5, "sample", seed=0)
        reg = regressor_for(post)
        h0 = moment_match_mixture(reg.condition(demos.starts[0])).entropy_proxy
        assert res.entropy.shape == (5,) and abs(res.entropy[0] - h0) < 1e-12

    def test_validation(self):
        with pytest.raises(ValueError):
            rollout(ZeroPolicy(2), PointMassSystem(), np.zeros(2), 0)
        with pytest.raises(ValueError):
            rollout(ZeroPolicy(2), PointMassSystem(), np.zeros(2), 3, action_mode="mode")

    def test_trajectory_drops_final_state(self):
        res = rollout(ScriptedGoalPolicy(np.ones(2)), PointMassSystem(), np.zeros(2), 4)
        tr = rollout_trajectory(res, 0.05)
        assert len(tr.states) == len(tr.controls) == 4
        np.testing.assert_allclose(tr.timestamps, 0.05 * np.arange(4))


class TestMaps:
    def test_entropy_lower_on_data_than_far(self, s_curve):
        demos, post = s_curve
        c, R = demos.centroid, demos.radius
        grid = Grid(c[0] - 5 * R, c[0] + 5 * R, c[1] - 5 * R, c[1] + 5 * R, 11, 11)
        h = entropy_map(post, grid)
        reg = regressor_for(post)
        near = moment_match_mixture(reg.condition(demos.states[len(demos.states) // 3])).entropy_proxy
        assert near < h[5, 0] and near < h[5, -1] and near < h[0, 5]

    def test_entropy_map_deterministic(self, s_curve):
        demos, post = s_curve
        grid = Grid.around(demos, n=7)
        np.testing.assert_array_equal(entropy_map(post, grid), entropy_map(post, grid))

    def test_bayesian_far_near_ratio_exceeds_gaussian_limit(self, s_curve):
        demos, post = s_curve
        near = demos.states[len(demos.states) // 3]
        far = demos.centroid + np.array([5 * demos.radius, 0.0])
        bayes, limit = entropy_ratio(post, near, far), entropy_ratio(post, near, far, dof=1e8)
        assert bayes >= 2 * limit

    def test_flow_field_matches_condition(self, s_curve):
        demos, post = s_curve
        grid = Grid.around(demos, n=5)
        field = flow_field(post, grid)
        reg = regressor_for(post)
        node = grid.nodes()[2, 3]
        np.testing.assert_allclose(field[2, 3], moment_match_mixture(reg.condition(node)).mean, rtol=1e-12)

    def test_grid_parse(self):
        g = Grid.parse("-2:2:41,-1.5:1.5:31")
        assert (g.x0, g.x1, g.nx, g.y0, g.y1, g.ny) == (-2.0, 2.0, 41, -1.5, 1.5, 31)
        assert g.nodes().shape == (31, 41, 2)
        for bad in ("-2:2", "1:0:5,0:1:5", "0:1:1,0:1:5"):
            with pytest.raises(ValueError):
                Grid.parse(bad)


def _result(states, termination=HORIZON):
    states = np.asarray(states, dtype=float)
    return RolloutResult(states, np.zeros((len(states) - 1, 2)), np.zeros(len(states) - 1), termination)


class TestShiftExperiment:
    def test_classify(self):
        band, goal = Band(-0.1, 0.1, -0.5, 0.5), np.array([1.0, 0.0])
        assert classify(_result([[-1, 1], [1, 1], [1, 0]]), goal, band, 0.1, 0.05).label == SUCCESS
        # passes 0.03 above the band: inside the margin, never inside the band
        assert classify(_result([[-1, 0.53], [1, 0.53], [1, 0]]), goal, band, 0.1, 0.05).label == TOUCH
        assert classify(_result([[-1, 0], [1, 0]]), goal, band, 0.1, 0.05).label == FAILURE
        assert classify(_result([[-1, 1], [1, 1]]), goal, band, 0.1, 0.05).label == FAILURE
        out = classify(_result([[0, 0], [50, 0]], DIVERGED), None, None, 0.1, 0.05)
        assert out.diverged and out.label == FAILURE

    def test_trial_start(self):
        demos = generate_demos("obstacle_bimodal", 4, 0)
        a, sa = trial_start(demos, 0.1, 5, 3)
        b, sb = trial_start(demos, 0.1, 5, 3)
        np.testing.assert_array_equal(a, b)
        assert sa == sb
        dist = np.min(np.linalg.norm(demos.starts - a, axis=1))
        assert dist <= 0.1 * demos.radius
        np.testing.assert_array_equal(trial_start(demos, 0.0, 5, 3)[0], demos.starts[0])

    @pytest.mark.parametrize("name", ["s_curve", "endpoint_reach"])
    def test_scripted_oracle_succeeds(self, name):
        demos = generate_demos(name, 4, 0)
        rep = shift_experiment({"oracle": ScriptedGoalPolicy(demos.goal)}, demos, ShiftSettings(n_trials=30, steps=150))
        assert rep.rates("oracle")[SUCCESS] == 1.0

    @pytest.mark.parametrize("fixture,steps", [("s_curve", 170), ("endpoint_reach", 130)])
    def test_imitation_succeeds_without_perturbation(self, fixture, steps, request):
        demos, post = request.getfixturevalue(fixture)
        settings = ShiftSettings(n_trials=10, perturbation_scale=0.0, steps=steps, action_mode="mean")
        rep = shift_experiment({"imitation": ImitationPolicy(post, GLOBAL)}, demos, settings)
        assert rep.rates("imitation")[SUCCESS] == 1.0

    def test_thread_count_independent(self, obstacle):
        demos, post = obstacle
        pols = {"imitation": ImitationPolicy(post, CONDITIONAL), "oracle": ScriptedGoalPolicy(demos.goal)}
        settings = ShiftSettings(n_trials=8, steps=40)
        serial = shift_experiment(pols, demos, settings, seed=4, threads=1)
        parallel = shift_experiment(pols, demos, settings, seed=4, threads=4)
        assert serial.to_csv() == parallel.to_csv()
        for a, b in zip(serial.records, parallel.records):
            assert (a.policy, a.trial) == (b.policy, b.trial)
            np.testing.assert_array_equal(a.result.states, b.result.states)

    def test_csv_schema(self, obstacle):
        demos, post = obstacle
        rep = shift_experiment({"oracle": ScriptedGoalPolicy(demos.goal)}, demos, ShiftSettings(n_trials=5, steps=20))
        rows = list(csv.DictReader(io.StringIO(rep.to_csv())))
        assert list(rows[0]) == ["policy", "n_trials", SUCCESS, TOUCH, FAILURE, "diverged"]
        r = rows[0]
        assert r["policy"] == "oracle" and int(r["n_trials"]) == 5
        assert abs(float(r[SUCCESS]) + float(r[TOUCH]) + float(r[FAILURE]) - 1.0) < 1e-12

    def test_thread_env(self, monkeypatch):
        monkeypatch.setenv("BGMM_THREADS", "3")
        assert thread_count() == 3
        for bad in ("0", "many"):
            monkeypatch.setenv("BGMM_THREADS", bad)
            with pytest.raises(ValueError):
                thread_count()

    def test_settings_validation(self):
        with pytest.raises(ValueError):
            ShiftSettings(n_trials=0)


class TestRecipes:
    def test_parse(self):
        assert parse_recipe("imitation+conservative+oc") == ("imitation", "conservative", "endpoint")
        for bad in ("imitation+magic", "imitation+imitation"):
            with pytest.raises(ValueError):
                parse_recipe(bad)

    def test_build(self, obstacle):
        demos, post = obstacle
        sys = PointMassSystem(dt=demos.dt)
        single = build_policy("imitation", post, sys)
        assert isinstance(single, ImitationPolicy)
        fused = build_policy("imitation+conservative+endpoint+goal", post, sys, demos.goal, RecipeParams())
        assert isinstance(fused, ProductPolicy) and len(fused.experts) == 4
        out = fused(demos.starts[0], 0)
        assert np.all(np.isfinite(out.means))
        with pytest.raises(ValueError):
            build_policy("imitation+endpoint", post, sys)


class TestLimitCycle:
    def test_fused_rollout_persists(self, limit_cycle):
        demos, post = limit_cycle
        sys = PointMassSystem(dt=demos.dt)
        fused = ProductPolicy([ImitationPolicy(post, GLOBAL),
                               ConservativePolicy(post, sys.linear_system(), 0.1 * np.eye(2), 50)])
        res = rollout(fused, sys, demos.starts[0], 10**4)
        assert res.termination == HORIZON
        assert np.max(np.linalg.norm(res.states - demos.centroid, axis=1)) <= 2 * demos.radius
