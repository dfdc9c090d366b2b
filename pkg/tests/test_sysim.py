import numpy as np
import pytest

from conftest import exact_score_batch, random_observable_system
from reachzono.setalg import Zonotope
from reachzono.sysim import (
    C_VARIANTS,
    LtiSystem,
    NoiseSpec,
    ObservabilityError,
    Trajectory,
    default_noise,
    default_system,
    gen_dataset,
    mc_hull,
    model_based_reach,
    oracle_from_system,
    residual_check,
    residuals,
    simulate,
    worst_case_residual_bound,
)


def noise_free_sim(sys, x0, inputs):
    return simulate(sys, x0, inputs, noise=None, seed=0)


class TestSimulate:
    def test_equilibrium_constant_output(self):
        sys = LtiSystem(A=np.eye(2), B=np.zeros((2, 1)), C=np.eye(2))
        p = np.array([1.0, -2.0])
        t = noise_free_sim(sys, p, np.zeros((5, 1)))
        np.testing.assert_allclose(t.outputs, np.tile(p, (5, 1)))

    def test_zero_dynamics_collapse(self):
        # A = 0 drains the state after the first step
        sys = LtiSystem(A=np.zeros((2, 2)), B=np.zeros((2, 1)), C=np.eye(2))
        p = np.array([1.0, -2.0])
        t = noise_free_sim(sys, p, np.zeros((3, 1)))
        np.testing.assert_allclose(t.outputs[0], p)
        np.testing.assert_allclose(t.outputs[1:], 0.0)

    def test_geometric_recursion(self):
        sys = LtiSystem(A=[[0.5]], B=[[1.0]], C=[[1.0]])
        t = noise_free_sim(sys, np.zeros(1), np.ones((4, 1)))
        np.testing.assert_allclose(t.outputs[:, 0], [0.0, 1.0, 1.5, 1.75])

    def test_deterministic_under_seed(self):
        sys = default_system("a")
        noise = default_noise()
        u = np.full((10, 1), 10.0)
        a = simulate(sys, np.ones(5), u, noise, seed=42)
        b = simulate(sys, np.ones(5), u, noise, seed=42)
        assert a.outputs.tobytes() == b.outputs.tobytes()
        c = simulate(sys, np.ones(5), u, noise, seed=43)
        assert c.outputs.tobytes() != a.outputs.tobytes()

    def test_shape_mismatch(self):
        sys = default_system("a")
        with pytest.raises(ValueError):
            simulate(sys, np.ones(4), np.ones((3, 1)), None, seed=0)


class TestGenDataset:
    def test_single_trajectory(self):
        sys = default_system("a")
        trajs = gen_dataset(sys, Zonotope.box(np.ones(5), 0.1), Zonotope.box([10.0], 0.25),
                            default_noise(), count=1, length=10, master_seed=1)
        assert len(trajs) == 1 and len(trajs[0]) == 10

    def test_inputs_within_set(self):
        sys = default_system("a")
        trajs = gen_dataset(sys, Zonotope.box(np.ones(5), 0.1), Zonotope.box([10.0], 0.25),
                            default_noise(), count=20, length=30, master_seed=2)
        u = np.concatenate([t.inputs.ravel() for t in trajs])
        assert u.min() >= 9.75 and u.max() <= 10.25

    def test_seed_separation(self):
        sys = default_system("a")
        args = (sys, Zonotope.box(np.ones(5), 0.1), Zonotope.box([10.0], 0.25), default_noise())
        a = gen_dataset(*args, count=3, length=5, master_seed=7)
        b = gen_dataset(*args, count=3, length=5, master_seed=7)
        c = gen_dataset(*args, count=3, length=5, master_seed=8)
        for x, y in zip(a, b):
            assert x.outputs.tobytes() == y.outputs.tobytes()
        assert a[0].outputs.tobytes() != c[0].outputs.tobytes()


class TestObservability:
    def test_rejects_unobservable(self):
        with pytest.raises(ObservabilityError):
            LtiSystem(A=np.diag([0.5, 0.5]), B=np.ones((2, 1)), C=np.array([[1.0, 0.0]]))

    def test_default_variants_observable(self):
        for v in "abc":
            default_system(v)


class TestOracle:
    def test_scalar_char_poly(self):
        sys = LtiSystem(A=[[0.5]], B=[[1.0]], C=[[1.0]])
        o = oracle_from_system(sys)
        np.testing.assert_allclose(o.a, [-0.5])

    def test_repeated_pole_char_poly(self):
        # Jordan block at 0.5: (lambda - 0.5)^2 = lambda^2 - lambda + 0.25
        sys = LtiSystem(A=np.array([[0.5, 1.0], [0.0, 0.5]]), B=np.ones((2, 1)), C=np.array([[1.0, 0.0]]))
        o = oracle_from_system(sys)
        np.testing.assert_allclose(o.a, [-1.0, 0.25], atol=1e-12)

    def test_replay_noise_free(self, rng):
        # autoregressive identity holds on noise-free data for random systems
        for _ in range(50):
            n_x = int(rng.integers(1, 7))
            n_y = int(rng.integers(1, 3))
            n_u = int(rng.integers(1, 3))
            sys = random_observable_system(rng, n_x, n_y, n_u)
            o = oracle_from_system(sys)
            t = noise_free_sim(sys, rng.normal(0, 1, n_x), rng.normal(0, 1, (n_x + 6, n_u)))
            eps = residuals(t, o)
            assert np.abs(eps).max() <= 1e-8

    def test_theta_replay_on_lifted_data(self, rng):
        from reachzono.ddreach import build_lifted

        sys = random_observable_system(rng, 3, 2, 1)
        o = oracle_from_system(sys)
        t = noise_free_sim(sys, rng.normal(0, 1, 3), rng.normal(0, 1, (20, 1)))
        lr = build_lifted([t], n_o=3)
        err = np.abs(o.theta_t @ lr.Phi_minus - lr.Z_plus).max()
        assert err <= 1e-8


class TestResidualCheck:
    def test_noise_free_inside_any_bound(self, rng):
        sys = default_system("a")
        o = oracle_from_system(sys)
        t = noise_free_sim(sys, np.ones(5), np.full((30, 1), 10.0))
        rep = residual_check([t], o, Zonotope.box(np.zeros(2), 1e-12))
        assert rep.inside_fraction == 1.0

    def test_default_config_all_inside(self):
        # 1e5 residual steps, all inside the shipped bound
        sys = default_system("a")
        noise = default_noise()
        o = oracle_from_system(sys)
        trajs = gen_dataset(sys, Zonotope.box(np.ones(5), 0.1), Zonotope.box([10.0], 0.25),
                            noise, count=2500, length=45, master_seed=3)
        rep = residual_check(trajs, o, noise.eps_bound)
        assert rep.total == 2500 * 40
        assert rep.inside_fraction == 1.0

    def test_inflation_monotone(self):
        sys = default_system("b")
        noise = default_noise()
        o = oracle_from_system(sys)
        trajs = gen_dataset(sys, Zonotope.box(np.ones(5), 0.1), Zonotope.box([10.0], 0.25),
                            noise, count=10, length=30, master_seed=4)
        small = residual_check(trajs, o, Zonotope.box(np.zeros(2), 1e-4))
        big = residual_check(trajs, o, Zonotope.box(np.zeros(2), 6e-3))
        assert big.inside >= small.inside

    def test_worst_case_bound_dominates_empirical(self):
        sys = default_system("c")
        noise = default_noise()
        o = oracle_from_system(sys)
        trajs = gen_dataset(sys, Zonotope.box(np.ones(5), 0.1), Zonotope.box([10.0], 0.25),
                            noise, count=50, length=40, master_seed=5)
        bound = worst_case_residual_bound(sys, noise.w_box, noise.v_box)
        rep = residual_check(trajs, o, noise.eps_bound)
        assert np.all(rep.per_coord_max <= bound)
        assert np.all(rep.per_coord_min >= -bound)
        assert np.all(bound < 0.006)  # shipped defaults leave slack to the residual bound


class TestMcHull:
    def test_single_trajectory_degenerate(self):
        t = Trajectory(seed=0, inputs=np.zeros((3, 1)), outputs=np.arange(6.0).reshape(3, 2))
        hull = mc_hull([t], 1)
        np.testing.assert_array_equal(hull.lower, hull.upper)

    def test_monotone_in_set(self, rng):
        trajs = [
            Trajectory(seed=i, inputs=np.zeros((3, 1)), outputs=rng.normal(0, 1, (3, 2)))
            for i in range(10)
        ]
        small = mc_hull(trajs[:5], 2)
        big = mc_hull(trajs, 2)
        assert np.all(big.lower <= small.lower) and np.all(big.upper >= small.upper)

    def test_width_stability_across_seeds(self):
        sys = default_system("a")
        noise = default_noise()
        widths = []
        for seed in (11, 12):
            trajs = gen_dataset(sys, Zonotope.box(np.ones(5), 0.1), Zonotope.box([10.0], 0.25),
                                noise, count=10_000, length=7, master_seed=seed)
            widths.append(mc_hull(trajs, 6).width.mean())
        assert abs(widths[0] - widths[1]) <= 0.05 * max(widths)

    def test_empty_error(self):
        with pytest.raises(ValueError):
            mc_hull([], 0)


class TestModelBasedReach:
    def test_noise_free_points(self, rng):
        sys = random_observable_system(rng, 3, 2, 1)
        x0 = rng.normal(0, 1, 3)
        u = np.full((6, 1), 0.7)
        sets = model_based_reach(sys, Zonotope.point(x0), Zonotope.point([0.7]), None, None, 5)
        t = noise_free_sim(sys, x0, u)
        for k in range(6):
            assert sets[k].n_generators == 0
            np.testing.assert_allclose(sets[k].center, t.outputs[k], atol=1e-10)

    def test_contains_simulated_outputs(self):
        sys = default_system("a")
        noise = default_noise()
        x0_set = Zonotope.box(np.ones(5), 0.1)
        u_set = Zonotope.box([10.0], 0.25)
        sets = model_based_reach(sys, x0_set, u_set, noise.w_box, noise.v_box, 6)
        trajs = gen_dataset(sys, x0_set, u_set, noise, count=10_000, length=7, master_seed=6)
        for k in range(7):
            pts = np.array([t.outputs[k] for t in trajs])
            assert exact_score_batch(sets[k], pts).max() <= 1e-9


class TestNoiseSpec:
    def test_eps_must_contain_origin(self):
        with pytest.raises(ValueError):
            NoiseSpec(
                w_box=Zonotope.box(np.zeros(5), 1e-4),
                v_box=Zonotope.box(np.zeros(2), 1e-4),
                eps_bound=Zonotope.point([1.0, 1.0]),
            )

    def test_trajectory_json_round_trip(self):
        t = Trajectory(seed=9, inputs=np.ones((2, 1)), outputs=np.zeros((2, 2)))
        back = Trajectory.from_json_dict(t.to_json_dict())
        assert back.seed == 9
        np.testing.assert_array_equal(back.outputs, t.outputs)

    def test_c_variants_match_shapes(self):
        for v, C in C_VARIANTS.items():
            assert C.shape == (2, 5)
