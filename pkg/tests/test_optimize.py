import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from userdp import (
    FeasibleSet,
    LocalizationConfig,
    LossModel,
    OptimizerState,
    PrivacyBudget,
    RandomSource,
    UserDataset,
    gradient_concentration_radius,
    gradient_mapping,
    localization_schedule,
    localize_strongly_convex,
    make_loss,
    project,
    sgd_convex,
    sgd_nonconvex,
    sgd_strongly_convex,
    winsorized_first_order,
)

UNIT_BALL_2D = FeasibleSet(center=np.zeros(2), radius=1.0)


class TestProjection:
    def test_frozen_example(self):
        assert np.allclose(project(UNIT_BALL_2D, np.array([3.0, 4.0])), [0.6, 0.8])

    def test_interior_unchanged(self):
        y = np.array([0.1, -0.2])
        assert np.array_equal(project(UNIT_BALL_2D, y), y)

    def test_offcenter_ball(self):
        ball = FeasibleSet(center=np.array([1.0, 1.0]), radius=2.0)
        out = project(ball, np.array([1.0, 5.0]))
        assert np.allclose(out, [1.0, 3.0])

    def test_contains_after_projection(self):
        gen = np.random.default_rng(0)
        for _ in range(200):
            y = gen.standard_normal(3) * 10
            ball = FeasibleSet(center=gen.standard_normal(3), radius=float(gen.uniform(0.1, 3)))
            assert ball.contains(project(ball, y))

    @settings(max_examples=80, deadline=None)
    @given(
        hnp.arrays(np.float64, 3, elements=st.floats(-50, 50)),
        hnp.arrays(np.float64, 3, elements=st.floats(-50, 50)),
    )
    def test_non_expansive(self, a, b):
        ball = FeasibleSet(center=np.zeros(3), radius=1.5)
        pa, pb = project(ball, a), project(ball, b)
        assert np.linalg.norm(pa - pb) <= np.linalg.norm(a - b) + 1e-9


class TestGradientMapping:
    def test_equals_gradient_when_step_stays_inside(self):
        theta = np.array([0.1, 0.1])
        g = np.array([0.2, -0.1])
        out = gradient_mapping(UNIT_BALL_2D, theta, g, 0.5)
        assert np.allclose(out, g)

    def test_zero_at_constrained_stationary_point(self):
        # on the boundary with an outward gradient pull the mapping vanishes
        theta = np.array([1.0, 0.0])
        g = np.array([-1.0, 0.0])  # descent step pushes further outside
        out = gradient_mapping(UNIT_BALL_2D, theta, g, 1.0)
        assert np.allclose(out, 0.0, atol=1e-12)

    def test_scaling(self):
        theta = np.array([0.9, 0.0])
        g = np.array([-4.0, 0.0])
        out = gradient_mapping(UNIT_BALL_2D, theta, g, 0.25)
        # step lands at [1.9,0] -> projected to [1,0]; mapping = (theta - proj)/gamma
        assert np.allclose(out, [-0.4, 0.0])


class TestLossModel:
    def test_requires_positive_lipschitz(self):
        with pytest.raises(ValueError):
            LossModel(
                evaluate=lambda t, z: 0.0,
                gradient=lambda t, z: np.zeros(1),
                lipschitz_G=0.0,
                smoothness_H=1.0,
            )

    def test_strong_convexity_implies_convex_flag(self):
        with pytest.raises(ValueError):
            LossModel(
                evaluate=lambda t, z: 0.0,
                gradient=lambda t, z: np.zeros(1),
                lipschitz_G=1.0,
                smoothness_H=1.0,
                strong_convexity_mu=0.5,
                convex=False,
            )

    def test_user_average_gradients_match_loop(self):
        model = make_loss("quadratic", gradient_bound=3.0)
        gen = np.random.default_rng(1)
        users = tuple(0.3 * gen.standard_normal((4, 3)) for _ in range(6))
        data = UserDataset(users=users, dim=3, item_bound=2.0)
        theta = np.array([0.1, -0.2, 0.05])
        fast = model.user_average_gradients(data, theta)
        for i, rec in enumerate(users):
            slow = np.mean([model.gradient(theta, z) for z in rec], axis=0)
            assert np.allclose(fast[i], slow)

    def test_dataset_loss_matches_loop(self):
        model = make_loss("quadratic", gradient_bound=3.0)
        gen = np.random.default_rng(2)
        users = tuple(0.3 * gen.standard_normal((2, 2)) for _ in range(4))
        data = UserDataset(users=users, dim=2, item_bound=2.0)
        theta = np.array([0.0, 0.1])
        total = np.mean([model.evaluate(theta, z) for rec in users for z in rec])
        assert model.dataset_loss(data, theta) == pytest.approx(total)


def quadratic_oracle(target):
    def oracle(theta, t):
        return theta - target

    return oracle


class TestSgdVariants:
    def test_convex_exact_oracle_converges(self):
        ball = FeasibleSet(center=np.zeros(1), radius=1.0)
        theta = sgd_convex(
            quadratic_oracle(np.zeros(1)), ball, 200, RandomSource(0),
            smoothness=1.0, noise_bound=0.0, start=np.array([0.9]),
        )
        assert abs(theta[0]) <= 1e-2

    def test_convex_linear_approaches_pole(self):
        g = np.array([0.6, -0.8])
        ball = FeasibleSet(center=np.zeros(2), radius=1.0)
        theta = sgd_convex(
            lambda th, t: g, ball, 400, RandomSource(0),
            smoothness=1e-9, noise_bound=0.1,
        )
        assert np.linalg.norm(theta - (-g)) < 0.15

    def test_zero_gradient_start_never_moves(self):
        ball = FeasibleSet(center=np.zeros(2), radius=1.0)
        seen = []

        def oracle(theta, t):
            seen.append(theta.copy())
            return np.zeros(2)

        start = np.array([0.3, 0.1])
        theta = sgd_convex(oracle, ball, 50, RandomSource(0), smoothness=1.0, start=start)
        # averaging the iterates reintroduces float rounding, hence atol
        assert np.allclose(theta, start, rtol=0.0, atol=1e-12)
        assert all(np.array_equal(s, start) for s in seen)

    def test_strongly_convex_converges(self):
        target = np.array([0.2, -0.3])
        ball = FeasibleSet(center=np.zeros(2), radius=1.0)
        theta = sgd_strongly_convex(
            quadratic_oracle(target), ball, 300, RandomSource(0),
            smoothness=1.0, strong_convexity=1.0,
        )
        assert np.linalg.norm(theta - target) < 5e-2

    def test_nonconvex_returns_queried_iterate(self):
        ball = FeasibleSet(center=np.zeros(1), radius=1.0)
        iterates = []

        def oracle(theta, t):
            iterates.append(theta.copy())
            return theta  # gradient of theta^2/2

        theta = sgd_nonconvex(oracle, ball, 60, RandomSource(5), smoothness=1.0, start=np.array([0.8]))
        assert any(np.array_equal(theta, it) for it in iterates)

    def test_nonconvex_seed_dependence(self):
        # only the nonconvex variant consumes randomness (for its output index);
        # a constant gradient keeps every iterate distinct so the choice shows
        ball = FeasibleSet(center=np.zeros(1), radius=1.0)
        oracle = lambda theta, t: np.array([0.05])
        outs = {
            float(sgd_nonconvex(oracle, ball, 40, RandomSource(s), smoothness=1.0, start=np.array([0.8]))[0])
            for s in range(8)
        }
        assert len(outs) > 1

    def test_deterministic_repeat(self):
        ball = FeasibleSet(center=np.zeros(2), radius=1.0)
        args = (quadratic_oracle(np.array([0.1, 0.2])), ball, 100)
        a = sgd_strongly_convex(*args, RandomSource(3), smoothness=1.0, strong_convexity=0.5)
        b = sgd_strongly_convex(*args, RandomSource(3), smoothness=1.0, strong_convexity=0.5)
        assert np.array_equal(a, b)


class TestOptimizerState:
    def test_zero_steps_returns_start(self):
        start = np.array([0.2])
        state = OptimizerState("convex", FeasibleSet(np.zeros(1), 1.0), 0, smoothness=1.0, start=start)
        assert np.array_equal(state.aggregate(RandomSource(0)), start)

    def test_query_past_budget_raises(self):
        state = OptimizerState("convex", FeasibleSet(np.zeros(1), 1.0), 2, smoothness=1.0)
        for _ in range(2):
            state.query()
            state.update(np.array([0.1]))
        with pytest.raises(RuntimeError):
            state.query()

    def test_convex_aggregate_is_mean_of_queried(self):
        state = OptimizerState("convex", UNIT_BALL_2D, 5, smoothness=1.0, noise_bound=0.5)
        qs = []
        for _ in range(5):
            qs.append(state.query().copy())
            state.update(np.array([0.3, 0.0]))
        assert np.allclose(state.aggregate(RandomSource(0)), np.mean(qs, axis=0))

    def test_unknown_variant(self):
        with pytest.raises(ValueError):
            OptimizerState("other", UNIT_BALL_2D, 3, smoothness=1.0)


class TestConcentrationRadius:
    def test_frozen_value(self):
        out = gradient_concentration_radius(0.5, 4, 16, 1.0, 2.0, 100, 0.1)
        assert out == pytest.approx(0.5303022453036402, rel=1e-12)

    def test_quadrupling_m_halves_in_floor_regime(self):
        # with the log argument pinned at its floor the 1/sqrt(m) scaling is exact
        kw = dict(sigma=1.0, d=2, radius=0.1, smoothness=0.01, n=50, alpha=0.1)
        assert gradient_concentration_radius(m=4, **kw) == pytest.approx(
            2 * gradient_concentration_radius(m=16, **kw), rel=1e-12
        )

    def test_monotone(self):
        base = gradient_concentration_radius(0.5, 4, 16, 1.0, 2.0, 100, 0.1)
        assert gradient_concentration_radius(1.0, 4, 16, 1.0, 2.0, 100, 0.1) > base
        assert gradient_concentration_radius(0.5, 8, 16, 1.0, 2.0, 100, 0.1) > base
        assert gradient_concentration_radius(0.5, 4, 16, 1.0, 2.0, 1000, 0.1) > base

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            gradient_concentration_radius(0.0, 4, 16, 1.0, 2.0, 100, 0.1)
        with pytest.raises(ValueError):
            gradient_concentration_radius(0.5, 4, 16, 1.0, 2.0, 100, 1.5)

    def test_covers_observed_gradient_spread(self):
        # Monte-Carlo check: per-user average gradients stay within 3x the radius
        model = make_loss("logistic", feature_bound=1.0)
        gen = np.random.default_rng(11)
        n, m, d = 50, 64, 4
        users = []
        for _ in range(n):
            x = gen.standard_normal((m, d - 1))
            x /= np.maximum(1.0, np.linalg.norm(x, axis=1, keepdims=True))
            y = np.where(gen.random(m) < 0.5, -1.0, 1.0)
            users.append(np.column_stack([x, y]))
        data = UserDataset(users=tuple(users), dim=d, item_bound=1.0)
        theta = np.array([0.2, -0.1, 0.3])
        grads = model.user_average_gradients(data, theta)
        center = grads.mean(axis=0)
        radius = gradient_concentration_radius(1.0, d - 1, m, 1.0, model.smoothness_H, n, 0.01)
        spread = np.linalg.norm(grads - center, axis=1).max()
        assert spread <= 3 * radius


class TestWinsorizedFirstOrder:
    def setup_method(self):
        gen = np.random.default_rng(4)
        users = tuple(np.clip(0.3 + 0.05 * gen.standard_normal((8, 2)), -1, 1) for _ in range(120))
        self.data = UserDataset(users=users, dim=2, item_bound=1.0)
        self.model = make_loss("quadratic", gradient_bound=3.0)
        self.ball = FeasibleSet(center=np.zeros(2), radius=1.0)

    def test_moves_toward_minimizer(self):
        theta = winsorized_first_order(
            self.data, self.model, self.ball, 30, PrivacyBudget(20.0, 1e-5),
            tau=0.5, gamma=0.05, variant="strongly_convex", rng=RandomSource(0),
        )
        target = self.data.per_user_means().mean(axis=0)
        assert np.linalg.norm(theta - target) < 0.25

    def test_on_step_hook_sees_every_step(self):
        calls = []
        winsorized_first_order(
            self.data, self.model, self.ball, 7, PrivacyBudget(5.0, 1e-5),
            tau=0.5, gamma=0.05, variant="convex", rng=RandomSource(1),
            on_step=lambda t, theta, est: calls.append((t, theta.copy(), est.clean_event)),
        )
        assert [c[0] for c in calls] == list(range(7))

    def test_warns_when_dataset_too_small(self):
        small = self.data.subset(range(4))
        with pytest.warns(RuntimeWarning):
            winsorized_first_order(
                small, self.model, self.ball, 50, PrivacyBudget(0.1, 1e-5),
                tau=0.5, gamma=0.05, variant="convex", rng=RandomSource(2),
            )

    def test_deterministic(self):
        kw = dict(tau=0.5, gamma=0.05, variant="nonconvex")
        a = winsorized_first_order(self.data, self.model, self.ball, 10,
                                   PrivacyBudget(5.0, 1e-5), rng=RandomSource(7), **kw)
        b = winsorized_first_order(self.data, self.model, self.ball, 10,
                                   PrivacyBudget(5.0, 1e-5), rng=RandomSource(7), **kw)
        assert np.array_equal(a, b)

    def test_unknown_variant_raises(self):
        with pytest.raises(ValueError):
            winsorized_first_order(
                self.data, self.model, self.ball, 5, PrivacyBudget(1.0, 1e-5),
                tau=0.5, gamma=0.05, variant="quasi", rng=RandomSource(0),
            )


class TestLocalization:
    def test_schedule_fields(self):
        model = make_loss("quadratic", gradient_bound=3.0)
        sched = localization_schedule(model, FeasibleSet(np.zeros(3), 1.0), 500, 8, 3, 1.0, 0.5)
        assert sched.t_max >= 1
        assert 1e-12 <= sched.gamma <= 0.5
        assert sched.tau > 0

    def test_config_scales_apply(self):
        model = make_loss("quadratic", gradient_bound=3.0)
        ball = FeasibleSet(np.zeros(3), 1.0)
        base = localization_schedule(model, ball, 500, 8, 3, 1.0, 0.5)
        scaled = localization_schedule(
            model, ball, 500, 8, 3, 1.0, 0.5, LocalizationConfig(tau_scale=0.5)
        )
        assert scaled.tau == pytest.approx(base.tau / 2)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            LocalizationConfig(t_scale=0.0)
        with pytest.raises(ValueError):
            LocalizationConfig(gamma_scale=-1.0)

    def test_localize_recovers_mean_at_high_epsilon(self):
        gen = np.random.default_rng(9)
        users = tuple(np.clip(0.25 + 0.04 * gen.standard_normal((64, 2)), -1, 1) for _ in range(2000))
        data = UserDataset(users=users, dim=2, item_bound=1.0)
        model = make_loss("quadratic", gradient_bound=3.0)
        ball = FeasibleSet(center=np.zeros(2), radius=1.0)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            theta = localize_strongly_convex(
                data, model, ball, PrivacyBudget(100.0, 1e-6), 0.04, RandomSource(3)
            )
        target = data.per_user_means().mean(axis=0)
        assert np.linalg.norm(theta - target) < 0.2

    def test_requires_strong_convexity(self):
        model = make_loss("linear", gradient_bound=1.0)
        data = UserDataset(users=(np.full((2, 1), 0.1),) * 10, dim=1, item_bound=1.0)
        with pytest.raises(ValueError):
            localize_strongly_convex(
                data, model, FeasibleSet(np.zeros(1), 1.0), PrivacyBudget(1.0, 1e-5), 0.1, RandomSource(0)
            )
