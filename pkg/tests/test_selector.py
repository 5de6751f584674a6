import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rp1.selector import DEFAULT_GRID, SCORE_CLAMP, LambdaSelector, SelectorConfig


def bandit_probability(seed, means, rounds=200, noise=0.5, eta=0.2, epsilon=0.1):
    """Run the selector on a stationary problem; return the final distribution."""
    rng = np.random.default_rng(seed)
    sel = LambdaSelector(grid=np.linspace(0, 0.5, len(means)), eta=eta, epsilon=epsilon)
    for _ in range(rounds):
        i, _ = sel.sample_lambda(rng)
        sel.update(i, means[i] + noise * rng.standard_normal())
    return sel.probabilities()


class TestSampling:
    def test_fresh_is_uniform(self):
        sel = LambdaSelector(epsilon=0.0)
        np.testing.assert_allclose(sel.probabilities(), np.full(5, 0.2))

    def test_dominant_score(self):
        sel = LambdaSelector(epsilon=0.0)
        sel.scores[0] = 50.0
        assert sel.probabilities()[0] >= 1 - 1e-15

    def test_epsilon_near_one_is_uniform(self):
        sel = LambdaSelector(epsilon=1.0 - 1e-15)
        sel.scores[:] = [50, 0, -50, 3, 1]
        np.testing.assert_allclose(sel.probabilities(), np.full(5, 0.2), atol=1e-14)

    def test_deterministic_given_rng(self):
        a = [LambdaSelector().sample_lambda(np.random.default_rng(3)) for _ in range(2)]
        assert a[0] == a[1]

    def test_returns_grid_value(self):
        i, lam = LambdaSelector().sample_lambda(np.random.default_rng(0))
        assert lam == DEFAULT_GRID[i]

    def test_invalid_construction(self):
        with pytest.raises(ValueError):
            LambdaSelector(grid=(0.0, 0.7))
        with pytest.raises(ValueError):
            LambdaSelector(eta=0.0)
        with pytest.raises(ValueError):
            LambdaSelector(epsilon=1.0)
        with pytest.raises(ValueError):
            LambdaSelector(grid=())


class TestNormalizeLoss:
    def setup_method(self):
        self.sel = LambdaSelector()
        for _ in range(5):
            self.sel.record(1.0)

    def test_zero_numerator(self):
        assert self.sel.normalize_loss(1.0, l_val=2.0) == 0.0

    def test_example(self):
        assert self.sel.normalize_loss(2.0, l_val=0.5) == 2.0

    def test_appends_and_rolls(self):
        self.sel.normalize_loss(3.0, l_val=1.0)
        assert list(self.sel.g_history) == [1.0, 1.0, 1.0, 1.0, 3.0]

    def test_short_history_uses_present_entries(self):
        sel = LambdaSelector()
        sel.record(1.0)
        sel.record(3.0)
        assert sel.normalize_loss(4.0, l_val=1.0) == 2.0

    def test_bad_l_val(self):
        with pytest.raises(ValueError):
            self.sel.normalize_loss(1.0, l_val=0.0)
        with pytest.raises(ValueError):
            LambdaSelector().normalize_loss(1.0)

    def test_empty_history(self):
        with pytest.raises(ValueError, match="history"):
            LambdaSelector().normalize_loss(1.0, l_val=1.0)


class TestUpdate:
    def test_zero_loss_no_change(self):
        sel = LambdaSelector()
        sel.update(3, 0.0)
        assert np.all(sel.scores == 0)

    def test_example(self):
        sel = LambdaSelector(eta=0.1, epsilon=0.0)
        sel.update(2, 1.0)
        np.testing.assert_allclose(sel.scores, [0, 0, 0.5, 0, 0])

    def test_only_chosen_changes(self):
        sel = LambdaSelector()
        sel.scores[:] = [0.3, -0.2, 0.1, 0.0, 0.9]
        before = sel.scores.copy()
        sel.update(1, 0.7)
        changed = np.flatnonzero(sel.scores != before)
        assert changed.tolist() == [1]

    def test_uses_sampling_distribution(self):
        sel = LambdaSelector(eta=1.0)
        i, _ = sel.sample_lambda(np.random.default_rng(0))
        p = sel.last_probs[i]
        sel.scores[:] = 5.0  # a later change to the scores must not alter the weight
        sel.scores[i] = 0.0
        sel.update(i, 1.0)
        assert sel.scores[i] == pytest.approx(1.0 / p)

    def test_updates_commute(self):
        a, b = LambdaSelector(), LambdaSelector()
        p = a.probabilities()
        a.update(0, 0.4, probs=p)
        a.update(3, -1.1, probs=p)
        b.update(3, -1.1, probs=p)
        b.update(0, 0.4, probs=p)
        np.testing.assert_array_equal(a.scores, b.scores)

    def test_clamped(self):
        sel = LambdaSelector(eta=1.0)
        sel.update(0, 1e6)
        assert sel.scores[0] == SCORE_CLAMP
        assert np.all(np.isfinite(sel.probabilities()))

    def test_zero_probability_rejected(self):
        sel = LambdaSelector()
        with pytest.raises(ValueError):
            sel.update(0, 1.0, probs=np.array([0.0, 0.25, 0.25, 0.25, 0.25]))
        with pytest.raises(IndexError):
            sel.update(5, 1.0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 4), st.floats(-100, 100)), max_size=30), st.floats(0.0, 0.99))
def test_simplex_after_every_update(updates, eps):
    sel = LambdaSelector(epsilon=eps)
    for i, g in updates:
        if sel.probabilities()[i] <= 0:
            continue
        sel.update(i, g)
        p = sel.probabilities()
        assert abs(p.sum() - 1.0) <= 1e-12
        assert np.all(p >= 0)
        assert np.all(np.isfinite(sel.scores))


def test_importance_weighted_increments_are_unbiased():
    losses = np.array([0.2, -0.5, 1.0, 0.0, 0.4])
    rng = np.random.default_rng(0)
    sel = LambdaSelector(eta=0.2, epsilon=0.1)
    sel.scores[:] = [1.0, 0.0, -1.0, 0.5, 0.2]
    p = sel.probabilities()
    rounds = 40000
    total = np.zeros(5)
    for _ in range(rounds):
        i = rng.choice(5, p=p)
        total[i] += sel.eta * losses[i] / p[i]
    mean = total / rounds
    # per-arm increment has variance eta^2 l^2 (1 - p) / p per round
    se = np.sqrt(sel.eta**2 * losses**2 * (1 - p) / p / rounds)
    assert np.all(np.abs(mean - sel.eta * losses) <= 4 * se + 1e-12)


def test_concentrates_on_highest_loss_arm():
    hits = sum(bandit_probability(seed, [0.0, 0.0, 0.3])[2] > 0.5 for seed in range(20))
    assert hits >= 18


def test_persistence_roundtrip(tmp_path):
    cfg = SelectorConfig()
    sel = LambdaSelector.from_config(cfg)
    rng = np.random.default_rng(0)
    path = tmp_path / "selector.csv"
    sel.record(0.3)
    for it in range(1, 4):
        i, _ = sel.sample_lambda(rng)
        sel.update(i, sel.normalize_loss(0.1 * it, l_val=0.05))
        sel.append_state(path, it)
    restored = LambdaSelector.restore(path, cfg)
    np.testing.assert_array_equal(restored.scores, sel.scores)
    assert list(restored.g_history) == list(sel.g_history)
    assert restored.l_val == sel.l_val
    assert len(path.read_text().splitlines()) == 4
