import math

import numpy as np
import pytest

from oracles import central_diff, rel_error
from rp1 import nn
from rp1.ensemble import (
    EnsembleConfig,
    EnsembleModel,
    generalization_rmse,
    info_gain_from_rewards,
    info_gain_gaussian,
    model_loss_and_grads,
    predict,
    reward_variance_per_step,
    state_variance_per_step,
    train,
    validation_loss,
)
from rp1.envs import Dataset, EnvSpec, make_env, rollout, uniform_random_policy


def zero_model(env, M=2):
    model = EnsembleModel(env, n_models=M, hidden=4, rng=np.random.default_rng(0))
    model.params = [np.zeros_like(p) for p in model.params]
    return model


def first_coordinate_env():
    """1-D toy env whose reward is the next state's first coordinate."""
    return EnvSpec(
        name="toy",
        state_dim=1,
        action_dim=1,
        horizon=5,
        action_low=np.array([-1.0]),
        action_high=np.array([1.0]),
        dynamics=lambda s, a: s + a,
        reward_fn=lambda s, a, s2: s2[..., 0],
        init_fn=lambda rng, n=None: np.zeros(1) if n is None else np.zeros((n, 1)),
        state_bound=10.0,
    )


def linear_dataset(n, rng):
    A = np.array([[0.9, 0.1], [-0.2, 0.8]])
    B = np.array([[0.5], [0.1]])
    s = rng.uniform(-1, 1, (n, 2))
    a = rng.uniform(-1, 1, (n, 1))
    s2 = s @ A.T + a @ B.T
    return Dataset(s, a, s2, np.zeros(n))


def linear_env():
    return EnvSpec(
        name="linear", state_dim=2, action_dim=1, horizon=10,
        action_low=np.array([-1.0]), action_high=np.array([1.0]),
        dynamics=None, reward_fn=lambda s, a, s2: -np.sum(s2**2, axis=-1),
        init_fn=None, state_bound=10.0,
    )


def random_dataset(env, n, seed):
    rng = np.random.default_rng(seed)
    trans = []
    while len(trans) < n:
        trans.extend(rollout(env, uniform_random_policy(env), env.horizon, rng).transitions)
    return Dataset.from_transitions(trans[:n])


class TestGradients:
    def test_model_gradients_match_finite_differences(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            params = nn.init_mlp((3, 2, 2, 2), rng, n_stack=1)
            for p in params[1::2]:
                p += rng.normal(0, 0.1, p.shape)
            x = rng.standard_normal((1, 3, 3))
            y = rng.standard_normal((1, 3, 2))
            _, grads = model_loss_and_grads(params, x, y)
            numeric = central_diff(lambda: float(model_loss_and_grads(params, x, y)[0].sum()), params)
            assert rel_error(grads, numeric) <= 1e-4


class TestPredict:
    def test_zero_network_predicts_target_mean(self):
        env = make_env("point_mass")
        model = zero_model(env)
        model.out_mean = np.array([0.1, -0.2, 0.3, 0.0])
        s = np.array([0.5, 0.5, 0.0, 1.0])
        np.testing.assert_allclose(predict(model, 0, s, np.zeros(2)), s + model.out_mean)

    def test_distinct_seeds_distinct_outputs(self):
        env = make_env("pendulum")
        model = EnsembleModel(env, n_models=5, hidden=16, rng=np.random.default_rng(1))
        out = model.predict_all(np.array([1.0, 0.0, 0.5]), np.array([0.3]))
        assert len({tuple(np.round(o, 12)) for o in out}) >= 2

    def test_index_checked(self):
        model = zero_model(make_env("pendulum"))
        with pytest.raises(IndexError):
            predict(model, 2, np.zeros(3), np.zeros(1))

    def test_non_finite_rejected(self):
        model = zero_model(make_env("pendulum"))
        with pytest.raises(ValueError):
            model.predict_all(np.array([np.nan, 0, 0]), np.zeros(1))

    def test_normalization_roundtrip(self):
        env = make_env("point_mass")
        model = EnsembleModel(env, 2, 8, np.random.default_rng(0))
        ds = random_dataset(env, 200, 0)
        model.set_normalization(ds.states, ds.actions, ds.next_states)
        d = ds.next_states - ds.states
        np.testing.assert_allclose(model.denormalize_targets(model.normalize_targets(d)), d, atol=1e-10)
        assert np.all(model.in_std > 0) and np.all(model.out_std > 0)


class TestTrain:
    def test_overfits_tiny_dataset(self):
        env = make_env("point_mass")
        # ten distinct points, each repeated so the held-out rows are also seen in training
        base = random_dataset(env, 10, 3)
        ds = base.merge(base).merge(base)
        model = EnsembleModel(env, 2, 64, np.random.default_rng(0))
        cfg = EnsembleConfig(n_models=2, hidden=64, lr=3e-3, batch_size=32, max_epochs=3000, patience=3000)
        report = train(model, ds, cfg, np.random.default_rng(0))
        # the split permutation is the first draw from the training rng
        tr = np.random.default_rng(0).permutation(30)[: report.n_train]
        for m in range(2):
            err = np.abs(predict(model, m, ds.states[tr], ds.actions[tr]) - ds.next_states[tr])
            assert err.max() < 1e-2

    def test_deterministic(self):
        env = make_env("pendulum")
        ds = random_dataset(env, 300, 1)
        cfg = EnsembleConfig(n_models=3, hidden=16, max_epochs=10)
        outs = []
        for _ in range(2):
            model = EnsembleModel(env, 3, 16, np.random.default_rng(5))
            train(model, ds, cfg, np.random.default_rng(6))
            outs.append(model.params)
        for a, b in zip(*outs):
            np.testing.assert_array_equal(a, b)

    def test_linear_dynamics_fit(self):
        rng = np.random.default_rng(0)
        ds = linear_dataset(3000, rng)
        model = EnsembleModel(linear_env(), 2, 64, np.random.default_rng(1))
        cfg = EnsembleConfig(n_models=2, hidden=64, lr=3e-3, batch_size=64, max_epochs=200, patience=200)
        report = train(model, ds, cfg, np.random.default_rng(2))
        assert report.train_loss < 1e-4

    def test_reported_validation_loss_is_recomputable(self):
        env = make_env("point_mass")
        ds = random_dataset(env, 90, 2)
        model = EnsembleModel(env, 3, 16, np.random.default_rng(0))
        report = train(model, ds, EnsembleConfig(n_models=3, hidden=16, max_epochs=20), np.random.default_rng(11))
        perm = np.random.default_rng(11).permutation(90)
        va = perm[report.n_train:]
        held = Dataset(ds.states[va], ds.actions[va], ds.next_states[va], ds.rewards[va])
        assert report.l_val == pytest.approx(validation_loss(model, held), rel=1e-12)
        assert report.n_train == 60 and report.n_val == 30

    def test_too_small(self):
        env = make_env("point_mass")
        with pytest.raises(ValueError, match="too small"):
            train(zero_model(env), random_dataset(env, 2, 0), EnsembleConfig(), np.random.default_rng(0))

    def test_mean_prediction_no_worse_than_worst_member(self):
        env = make_env("pendulum")
        ds = random_dataset(env, 400, 4)
        model = EnsembleModel(env, 5, 32, np.random.default_rng(0))
        train(model, ds, EnsembleConfig(hidden=32, max_epochs=30), np.random.default_rng(1))
        preds = model.predict_all(ds.states, ds.actions)
        member_mse = np.mean((preds - ds.next_states) ** 2, axis=(1, 2))
        mean_mse = np.mean((preds.mean(axis=0) - ds.next_states) ** 2)
        assert mean_mse <= member_mse.max()


class TestVariance:
    def test_identical_members_zero_std(self):
        env = make_env("point_mass")
        model = EnsembleModel(env, 3, 8, np.random.default_rng(0))
        model.params = [np.repeat(p[:1], 3, axis=0) for p in model.params]
        _, std = reward_variance_per_step(model, np.ones(4), np.ones(2))
        assert std == 0.0
        assert state_variance_per_step(model, np.ones(4), np.ones(2)) == 0.0

    def test_two_member_rewards_zero_and_two(self):
        model = zero_model(first_coordinate_env())
        model.params[-1][1, 0, 0] = 2.0
        rewards, std = reward_variance_per_step(model, np.zeros(1), np.zeros(1))
        np.testing.assert_array_equal(rewards, [0.0, 2.0])
        assert std == pytest.approx(math.sqrt(2.0))

    def test_std_scales_with_rewards(self):
        model = zero_model(first_coordinate_env())
        model.params[-1][1, 0, 0] = 2.0
        _, std = reward_variance_per_step(model, np.zeros(1), np.zeros(1))
        model.params[-1][1, 0, 0] = 2.0 * 3.5
        _, std_c = reward_variance_per_step(model, np.zeros(1), np.zeros(1))
        assert std_c == pytest.approx(3.5 * std)

    def test_state_variance_example_and_symmetry(self):
        env = EnvSpec("toy2", 2, 1, 5, np.array([-1.0]), np.array([1.0]), None,
                      lambda s, a, s2: s2[..., 0], None, 10.0)
        model = zero_model(env)
        model.params[-1][1, 0, 0] = 2.0
        v = state_variance_per_step(model, np.zeros(2), np.zeros(1))
        assert v == pytest.approx(math.sqrt(2.0))
        model.params = [p[::-1].copy() for p in model.params]
        assert state_variance_per_step(model, np.zeros(2), np.zeros(1)) == pytest.approx(v)

    def test_needs_two_models(self):
        model = zero_model(make_env("point_mass"), M=1)
        with pytest.raises(ValueError, match="undefined"):
            reward_variance_per_step(model, np.zeros(4), np.zeros(2))
        with pytest.raises(ValueError):
            state_variance_per_step(model, np.zeros(4), np.zeros(2))


class TestGeneralization:
    def test_perfect_model(self):
        model = zero_model(first_coordinate_env())
        s = np.array([[0.0], [1.0], [2.0]])
        a = np.zeros((3, 1))
        assert generalization_rmse(model, Dataset(s, a, s.copy(), np.zeros(3))) == 0.0

    def test_constant_offset(self):
        env = make_env("point_mass")
        model = zero_model(env)
        v = np.array([0.3, -0.4, 1.2, 0.0])
        model.out_mean = v.copy()
        rng = np.random.default_rng(0)
        s = rng.standard_normal((7, 4))
        a = rng.standard_normal((7, 2))
        g = generalization_rmse(model, Dataset(s, a, s, np.zeros(7)))
        assert g == pytest.approx(np.linalg.norm(v) / 2.0)

    def test_order_invariant(self):
        env = make_env("pendulum")
        model = EnsembleModel(env, 3, 8, np.random.default_rng(0))
        ds = random_dataset(env, 40, 1)
        perm = np.random.default_rng(2).permutation(40)
        shuffled = Dataset(ds.states[perm], ds.actions[perm], ds.next_states[perm], ds.rewards[perm])
        assert generalization_rmse(model, ds) == pytest.approx(generalization_rmse(model, shuffled), rel=1e-12)

    def test_empty(self):
        model = zero_model(make_env("pendulum"))
        with pytest.raises(ValueError):
            generalization_rmse(model, Dataset(np.zeros((0, 3)), np.zeros((0, 1)), np.zeros((0, 3)), np.zeros(0)))


class TestInfoGain:
    def test_identical(self):
        assert info_gain_gaussian(0.3, 1.2, 0.3, 1.2) == 0.0

    def test_mean_shift(self):
        assert info_gain_gaussian(0.0, 1.0, 1.0, 1.0) == pytest.approx(0.5)

    def test_nonnegative(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            m1, m2 = rng.normal(size=2)
            s1, s2 = rng.uniform(0.05, 3, size=2)
            assert info_gain_gaussian(m1, s1, m2, s2) >= -1e-12

    def test_matches_quadrature(self):
        from scipy import integrate, stats

        p = stats.norm(0.4, 0.7)
        q = stats.norm(-0.2, 1.3)
        kl, _ = integrate.quad(lambda x: p.pdf(x) * (p.logpdf(x) - q.logpdf(x)), -15, 15)
        assert info_gain_gaussian(-0.2, 1.3, 0.4, 0.7) == pytest.approx(kl, rel=1e-8)

    def test_from_member_rewards(self):
        prior = [0.0, 1.0, 2.0]
        assert info_gain_from_rewards(prior, prior) == 0.0

    def test_rejects_bad_std(self):
        with pytest.raises(ValueError):
            info_gain_gaussian(0, 0, 0, 1)


def test_out_of_distribution_disagreement():
    env = make_env("point_mass")
    wins = 0
    for seed in range(5):
        rng = np.random.default_rng(seed)
        n = 300
        s = np.hstack([rng.uniform(-0.5, 0.5, (n, 2)), rng.uniform(-0.5, 0.5, (n, 2))])
        a = rng.uniform(-1, 1, (n, 2))
        s2 = env.dynamics(s, a)
        ds = Dataset(s, a, s2, env.reward_fn(s, a, s2))
        model = EnsembleModel(env, 5, 32, np.random.default_rng(seed + 100))
        train(model, ds, EnsembleConfig(hidden=32, max_epochs=40), np.random.default_rng(seed + 200))
        s_in = np.hstack([rng.uniform(-0.5, 0.5, (50, 2)), rng.uniform(-0.5, 0.5, (50, 2))])
        s_out = np.hstack([rng.uniform(3, 4, (50, 2)), rng.uniform(3, 4, (50, 2))])
        a_p = rng.uniform(-1, 1, (50, 2))
        _, v_in = reward_variance_per_step(model, s_in, a_p)
        _, v_out = reward_variance_per_step(model, s_out, a_p)
        wins += v_out.mean() > v_in.mean()
    assert wins == 5


def test_checkpoint_roundtrip(tmp_path):
    env = make_env("pendulum")
    model = EnsembleModel(env, 3, 8, np.random.default_rng(0))
    train(model, random_dataset(env, 60, 0), EnsembleConfig(n_models=3, hidden=8, max_epochs=3), np.random.default_rng(0))
    path = tmp_path / "model.txt"
    model.save(path)
    loaded = EnsembleModel.load(path, env)
    for a, b in zip(model.params, loaded.params):
        np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(model.in_std, loaded.in_std)
    x = np.array([0.2, 0.9, -1.0])
    np.testing.assert_array_equal(model.predict_all(x, [0.5]), loaded.predict_all(x, [0.5]))
    with pytest.raises(ValueError):
        EnsembleModel.load(path, make_env("point_mass"))
