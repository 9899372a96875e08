import numpy as np
import pytest
from scipy import stats

from userdp.core import RandomSource, UserDataset
from userdp.select import (
    HypothesisClass,
    default_tau_for_selection,
    default_trial_cap,
    private_select,
    select_from_cover,
)


def scalar_data(n, m, mean, seed, spread=0.1):
    gen = np.random.default_rng(seed)
    users = tuple(np.clip(mean + spread * gen.standard_normal((m, 1)), -1, 1) for _ in range(n))
    return UserDataset(users=users, dim=1, item_bound=1.0)


def dot_loss(theta, z):
    return float(theta[0] * z[0])


FOUR_POINT = HypothesisClass(
    params=np.array([[-1.0], [0.5], [0.8], [1.0]]), loss=dot_loss, bound=1.0
)


class TestHypothesisClass:
    def test_per_user_losses_match_loop(self):
        data = scalar_data(12, 5, 0.3, 0)
        hyp = FOUR_POINT
        for j in range(hyp.k):
            got = hyp.per_user_losses(data, j)
            want = [np.mean([dot_loss(hyp.params[j], z) for z in rec]) for rec in data.users]
            assert np.allclose(got, want)

    def test_batch_loss_matches_scalar(self):
        data = scalar_data(10, 4, 0.2, 1)
        batched = HypothesisClass(
            params=FOUR_POINT.params, loss=dot_loss, bound=1.0,
            loss_batch=lambda th, zs: th[0] * zs[:, 0],
        )
        for j in range(batched.k):
            assert np.allclose(batched.per_user_losses(data, j), FOUR_POINT.per_user_losses(data, j))

    def test_loss_outside_bound_rejected(self):
        data = scalar_data(6, 2, 0.5, 2)
        hyp = HypothesisClass(params=np.array([[3.0]]), loss=dot_loss, bound=1.0)
        with pytest.raises(ValueError, match="outside"):
            hyp.per_user_losses(data, 0)

    def test_one_dim_params_promoted(self):
        hyp = HypothesisClass(params=np.array([0.1, 0.2, 0.3]), loss=dot_loss, bound=1.0)
        assert hyp.k == 1
        assert hyp.params.shape == (1, 3)

    def test_rejects_bad_bound(self):
        with pytest.raises(ValueError):
            HypothesisClass(params=np.array([[0.1]]), loss=dot_loss, bound=0.0)


class TestDefaults:
    def test_trial_cap_frozen(self):
        assert default_trial_cap(16, 0.05) == 9587

    def test_tau_frozen(self):
        assert default_tau_for_selection(1, 16, 400, 16, 0.05) == pytest.approx(
            0.4687478439266381, rel=1e-12
        )

    def test_tau_halves_when_m_quadruples(self):
        base = default_tau_for_selection(1.0, 8, 100, 16, 0.1)
        assert default_tau_for_selection(1.0, 8, 100, 64, 0.1) == pytest.approx(base / 2)

    def test_tau_validation(self):
        with pytest.raises(ValueError):
            default_tau_for_selection(0.0, 8, 100, 16, 0.1)
        with pytest.raises(ValueError):
            default_tau_for_selection(1.0, 8, 100, 16, 1.5)


class TestPrivateSelect:
    def setup_method(self):
        self.data = scalar_data(8, 1, 0.5, 0)

    def test_single_hypothesis_always_chosen(self):
        hyp = HypothesisClass(params=np.array([[0.5]]), loss=dot_loss, bound=1.0)
        res = private_select(self.data, hyp, 1.0, 0.5, 0.5, RandomSource(3))
        assert res.index == 0

    def test_certain_stop_runs_one_round(self):
        res = private_select(self.data, FOUR_POINT, 1.0, 1.0, 0.5, RandomSource(4))
        assert res.rounds == 1
        assert not res.capped

    def test_round_count_is_geometric(self):
        rounds = [
            private_select(self.data, FOUR_POINT, 1.0, 0.2, 0.5, RandomSource(t)).rounds
            for t in range(2000)
        ]
        assert np.mean(rounds) == pytest.approx(5.0, rel=0.1)

    def test_candidates_drawn_uniformly(self):
        firsts = [
            private_select(self.data, FOUR_POINT, 1.0, 0.2, 0.5, RandomSource(t)).trace[0][0]
            for t in range(2000)
        ]
        counts = np.bincount(firsts, minlength=4)
        assert stats.chisquare(counts).pvalue > 1e-3

    def test_result_is_trace_argmin(self):
        res = private_select(self.data, FOUR_POINT, 1.0, 0.1, 0.5, RandomSource(9))
        values = [v for _, v in res.trace]
        best = int(np.argmin(values))
        assert res.value == values[best]
        assert res.index == res.trace[best][0]
        assert res.rounds == len(res.trace)

    def test_trial_cap_flags_run(self):
        res = private_select(self.data, FOUR_POINT, 1.0, 1e-9, 0.5, RandomSource(5), trial_cap=3)
        assert res.capped
        assert res.rounds == 3

    def test_loss_bound_violation_propagates(self):
        hyp = HypothesisClass(params=np.array([[5.0], [0.1]]), loss=dot_loss, bound=1.0)
        with pytest.raises(ValueError, match="outside"):
            private_select(self.data, hyp, 1.0, 1e-6, 0.5, RandomSource(6), trial_cap=50)

    def test_validation(self):
        with pytest.raises(ValueError):
            private_select(self.data, FOUR_POINT, 0.0, 0.5, 0.5, RandomSource(0))
        with pytest.raises(ValueError):
            private_select(self.data, FOUR_POINT, 1.0, 0.0, 0.5, RandomSource(0))
        with pytest.raises(ValueError):
            private_select(self.data, FOUR_POINT, 1.0, 1.5, 0.5, RandomSource(0))
        with pytest.raises(ValueError):
            private_select(self.data, FOUR_POINT, 1.0, 0.5, -0.1, RandomSource(0))
        with pytest.raises(ValueError):
            private_select(self.data, FOUR_POINT, 1.0, 0.5, 0.5, RandomSource(0), trial_cap=0)

    def test_deterministic(self):
        a = private_select(self.data, FOUR_POINT, 1.0, 0.2, 0.5, RandomSource(11))
        b = private_select(self.data, FOUR_POINT, 1.0, 0.2, 0.5, RandomSource(11))
        assert a == b


class TestSelectFromCover:
    def test_picks_clear_winner(self):
        # population item mean near 0.7, so theta = -1 has by far the lowest loss
        data = scalar_data(200, 16, 0.7, 1)
        cover = np.array([[-1.0], [0.9], [0.95], [1.0]])
        for s in range(3):
            res = select_from_cover(data, cover, dot_loss, 1.0, 1.0, 0.05, RandomSource(400 + s))
            assert res.index == 0

    def test_handles_ragged_items(self):
        gen = np.random.default_rng(7)
        users = tuple(
            np.clip(0.5 + 0.1 * gen.standard_normal((m, 1)), -1, 1) for m in (2, 5, 9) * 20
        )
        data = UserDataset(users=users, dim=1, item_bound=1.0)
        res = select_from_cover(data, np.array([[-1.0], [1.0]]), dot_loss, 1.0, 1.0, 0.1,
                                RandomSource(8))
        assert res.index in (0, 1)

    def test_batch_loss_equivalent(self):
        data = scalar_data(50, 8, 0.4, 3)
        cover = np.array([[-1.0], [0.5]])
        plain = select_from_cover(data, cover, dot_loss, 1.0, 1.0, 0.1, RandomSource(21))
        fast = select_from_cover(data, cover, dot_loss, 1.0, 1.0, 0.1, RandomSource(21),
                                 loss_batch=lambda th, zs: th[0] * zs[:, 0])
        assert plain == fast
