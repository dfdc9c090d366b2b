import math

import numpy as np
import pytest

from conftest import random_zonotope
from reachzono.conformal import (
    CoverageReport,
    InsufficientCalibrationError,
    QuantileTable,
    ScoreMatrix,
    calibrate,
    coverage_eval,
    filter_indices,
    inflate,
    quantile,
    score,
)
from reachzono.setalg import Zonotope, interval_hull, sample_member
from reachzono.sysim import Trajectory
from test_linsolve import grid_min_inflation


class TestScore:
    def test_center_scores_zero(self, rng):
        Z = random_zonotope(rng, 2, 3)
        assert score(Z, Z.center) == pytest.approx(0.0, abs=1e-12)

    def test_no_generators_inf_norm(self, rng):
        c = rng.normal(0, 1, 3)
        y = rng.normal(0, 1, 3)
        Z = Zonotope.point(c)
        assert score(Z, y) == pytest.approx(np.abs(y - c).max())

    def test_grid_oracle(self, rng):
        for _ in range(5):
            Z = random_zonotope(rng, 2, 2)
            y = rng.normal(0, 2, 2)
            t_grid, _ = grid_min_inflation(y - Z.center, Z.generators)
            assert abs(score(Z, y) - t_grid) <= 2e-3

    def test_sampled_members_score_zero(self, rng):
        Z = random_zonotope(rng, 3, 6)
        for _ in range(50):
            assert score(Z, sample_member(Z, rng)) <= 1e-9


class TestQuantile:
    def test_order_statistic_at_experiment_size(self, rng):
        scores = rng.uniform(0, 1, 200)
        q = quantile(scores, 0.05)
        assert q == np.sort(scores)[190]  # 191st smallest

    def test_insufficient_data_inf(self, rng):
        assert quantile(rng.uniform(0, 1, 4), 0.05) == math.inf

    def test_ascending_sequence(self):
        assert quantile(np.arange(1.0, 201.0), 0.05, n_cal=200) == 191.0

    def test_monotone_in_delta(self, rng):
        scores = rng.uniform(0, 1, 50)
        qs = [quantile(scores, d) for d in (0.3, 0.2, 0.1)]
        assert qs[0] <= qs[1] <= qs[2]

    def test_exact_integer_product(self):
        # (n+1)(1-delta) = 9 exactly: index must be 9, not 10
        scores = np.arange(1.0, 10.0)
        assert quantile(scores, 0.1) == 9.0

    def test_empty_error(self):
        with pytest.raises(ValueError):
            quantile([], 0.1)


class TestCalibrate:
    def test_perfect_predictor_zero_quantiles(self, rng):
        Z = Zonotope.point([1.0, 2.0])
        realized = {5: np.tile([1.0, 2.0], (30, 1)), 6: np.tile([1.0, 2.0], (30, 1))}
        table, sm = calibrate({5: Z, 6: Z}, realized, delta=0.1)
        assert table.per_step == {5: 0.0, 6: 0.0}
        assert table.joint == 0.0
        assert sm.scores.shape == (30, 2)

    def test_single_step_joint_equals_per_step(self, rng):
        Z = random_zonotope(rng, 2, 3)
        realized = {4: rng.normal(0, 1, (25, 2))}
        table, _ = calibrate({4: Z}, realized, delta=0.2)
        assert table.joint == table.per_step[4]

    def test_per_trial_predictions(self, rng):
        preds = {3: [random_zonotope(rng, 2, 2) for _ in range(10)]}
        realized = {3: rng.normal(0, 1, (10, 2))}
        table, sm = calibrate(preds, realized, delta=0.5)
        assert sm.scores.shape == (10, 1)

    def test_fresh_draw_exceedance(self, rng):
        # split conformal guarantee on synthetic exchangeable scores
        n_cal, delta = 60, 0.1
        miss = []
        for _ in range(20):
            cal = rng.uniform(0, 1, n_cal)
            q = quantile(cal, delta)
            fresh = rng.uniform(0, 1, 10_000)
            miss.append(np.mean(fresh > q))
        se = math.sqrt(delta * (1 - delta) / 10_000)
        assert np.mean(miss) <= delta + 3 * se

    def test_mode_validation(self, rng):
        with pytest.raises(ValueError):
            calibrate({0: Zonotope.point([0.0])}, {0: np.zeros((3, 1))}, 0.1, mode="bogus")

    def test_mismatched_trial_counts(self, rng):
        Z = Zonotope.point([0.0])
        realized = {0: np.zeros((3, 1)), 1: np.zeros((4, 1))}
        with pytest.raises(ValueError, match="trial count"):
            calibrate({0: Z, 1: Z}, realized, 0.2)


class TestInflate:
    def test_zero_identity(self, rng):
        Z = random_zonotope(rng, 2, 3)
        assert inflate(Z, 0.0) is Z

    def test_point_becomes_cube(self):
        Z = inflate(Zonotope.point([1.0, -1.0]), 1.0)
        hull = interval_hull(Z)
        np.testing.assert_allclose(hull.lower, [0.0, -2.0])
        np.testing.assert_allclose(hull.upper, [2.0, 0.0])

    def test_width_grows_by_2q(self, rng):
        Z = random_zonotope(rng, 3, 4)
        q = 0.37
        before = interval_hull(Z).width
        after = interval_hull(inflate(Z, q)).width
        np.testing.assert_allclose(after - before, 2 * q)

    def test_infinite_quantile_error(self, rng):
        with pytest.raises(InsufficientCalibrationError):
            inflate(random_zonotope(rng, 2, 1), math.inf)


class TestCoverage:
    def test_calibration_set_coverage_at_least_level(self, rng):
        Z = random_zonotope(rng, 2, 3)
        realized = {7: rng.normal(0, 2, (40, 2))}
        table, _ = calibrate({7: Z}, realized, delta=0.25)
        rep = coverage_eval({7: Z}, realized, table)
        assert rep.per_step[7] >= 0.75

    def test_joint_not_above_min_per_step(self, rng):
        Z = {k: random_zonotope(rng, 2, 2) for k in (3, 4, 5)}
        realized = {k: rng.normal(0, 1.5, (50, 2)) for k in (3, 4, 5)}
        table, _ = calibrate(Z, realized, delta=0.2)
        rep = coverage_eval(Z, realized, table)
        # under the joint quantile, the joint event is the intersection of
        # per-step events, so its frequency cannot exceed any single one
        joint_qt = QuantileTable(delta=table.delta, n_cal=table.n_cal,
                                 per_step={k: table.joint for k in Z}, joint=table.joint)
        rep_joint = coverage_eval(Z, realized, joint_qt)
        assert rep_joint.joint <= min(rep_joint.per_step.values()) + 1e-12

    def test_joint_event_is_intersection(self, rng):
        # joint-quantile set logic on data: containment at qbar for all steps equals
        # the conjunction of per-step containments at qbar
        Z = {k: random_zonotope(rng, 2, 2) for k in (3, 4)}
        realized = {k: rng.normal(0, 1.0, (30, 2)) for k in (3, 4)}
        table, sm = calibrate(Z, realized, delta=0.2)
        joint_events = np.all(sm.scores <= table.joint + 1e-9, axis=1)
        per_step_events = [sm.scores[:, j] <= table.joint + 1e-9 for j in range(2)]
        np.testing.assert_array_equal(joint_events, np.logical_and(*per_step_events))

    def test_mode_restriction(self, rng):
        Z = random_zonotope(rng, 2, 2)
        realized = {1: rng.normal(0, 1, (12, 2))}
        table, _ = calibrate({1: Z}, realized, delta=0.3)
        rep = coverage_eval({1: Z}, realized, table, mode="per_step")
        assert math.isnan(rep.joint) and 1 in rep.per_step


class TestFiltering:
    def test_filter_by_context_membership(self, rng):
        ctx = [Zonotope.box(np.zeros(2), 1.0)]
        inside = Trajectory(seed=0, inputs=np.zeros((2, 1)), outputs=np.array([[0.5, -0.5], [3.0, 3.0]]))
        outside = Trajectory(seed=1, inputs=np.zeros((2, 1)), outputs=np.array([[2.0, 0.0], [0.0, 0.0]]))
        assert filter_indices([inside, outside], ctx) == [0]

    def test_json_round_trip(self):
        t = QuantileTable(delta=0.05, n_cal=200, per_step={6: 0.1, 7: 0.2}, joint=0.25)
        back = QuantileTable.from_json_dict(t.to_json_dict())
        assert back.per_step == t.per_step and back.joint == t.joint

    def test_score_matrix_csv(self):
        sm = ScoreMatrix(steps=(5, 6), scores=np.array([[0.1, 0.2], [0.3, 0.4]]))
        csv = sm.to_csv()
        assert csv.splitlines()[0] == "trial,step,score"
        assert len(csv.splitlines()) == 5
