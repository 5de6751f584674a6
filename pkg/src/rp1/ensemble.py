"""Ensemble of deterministic MLP dynamics models.

Each member predicts the normalized state delta from the normalized
(state, action) input. All M members are stored stacked and trained
simultaneously with batched matmuls; each still gets its own initialization,
its own minibatch order and its own early-stopping decision.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from rp1 import nn
from rp1.envs import Dataset, EnvSpec
from rp1.serialization import load_checkpoint, save_checkpoint

log = logging.getLogger(__name__)

STD_FLOOR = 1e-8


@dataclass
class EnsembleConfig:
    n_models: int = 5
    hidden: int = 64
    lr: float = 1e-3
    batch_size: int = 256
    max_epochs: int = 200
    patience: int = 5
    train_fraction: float = 2.0 / 3.0


@dataclass
class ModelTrainReport:
    l_val: float
    epochs_run: int
    n_train: int
    n_val: int
    val_losses: list = field(default_factory=list)
    train_loss: float = float("nan")


class EnsembleModel:
    """M MLPs ``(state_dim + action_dim) -> hidden -> hidden -> state_dim``."""

    def __init__(self, env: EnvSpec, n_models: int = 5, hidden: int = 64, rng: np.random.Generator | None = None):
        if n_models < 1:
            raise ValueError("n_models must be positive")
        rng = np.random.default_rng(0) if rng is None else rng
        self.env = env
        self.n_models = n_models
        self.hidden = hidden
        self.in_dim = env.state_dim + env.action_dim
        self.out_dim = env.state_dim
        # each member draws from its own stream
        member_params = [
            nn.init_mlp(self.sizes, r) for r in rng.spawn(n_models)
        ]
        self.params = [np.stack([mp[i] for mp in member_params]) for i in range(len(member_params[0]))]
        self.in_mean = np.zeros(self.in_dim)
        self.in_std = np.ones(self.in_dim)
        self.out_mean = np.zeros(self.out_dim)
        self.out_std = np.ones(self.out_dim)

    @property
    def sizes(self):
        return (self.in_dim, self.hidden, self.hidden, self.out_dim)

    # -- normalization ------------------------------------------------------

    def normalize_inputs(self, states, actions):
        x = np.concatenate([states, actions], axis=-1)
        return (x - self.in_mean) / self.in_std

    def normalize_targets(self, delta):
        return (delta - self.out_mean) / self.out_std

    def denormalize_targets(self, y):
        return y * self.out_std + self.out_mean

    def set_normalization(self, states, actions, next_states):
        x = np.concatenate([states, actions], axis=-1)
        d = next_states - states
        self.in_mean = x.mean(axis=0)
        self.in_std = np.maximum(x.std(axis=0), STD_FLOOR)
        self.out_mean = d.mean(axis=0)
        self.out_std = np.maximum(d.std(axis=0), STD_FLOOR)

    # -- prediction ---------------------------------------------------------

    def predict_all(self, states, actions) -> np.ndarray:
        """Next-state predictions of every member, shape ``(M, n, state_dim)``."""
        states = np.asarray(states, dtype=np.float64)
        actions = np.asarray(actions, dtype=np.float64)
        single = states.ndim == 1
        if single:
            states, actions = states[None], actions[None]
        if not (np.all(np.isfinite(states)) and np.all(np.isfinite(actions))):
            raise ValueError("non-finite input to dynamics model")
        x = self.normalize_inputs(states, actions)
        y, _ = nn.forward(self.params, np.broadcast_to(x, (self.n_models,) + x.shape))
        out = states + self.denormalize_targets(y)
        return out[:, 0] if single else out

    def predict_mean(self, states, actions) -> np.ndarray:
        return self.predict_all(states, actions).mean(axis=0)

    def member_params(self, index: int):
        return [p[index] for p in self.params]

    # -- persistence --------------------------------------------------------

    def save(self, path) -> None:
        meta = {"kind": "ensemble", "env": self.env.name, "n_models": self.n_models, "hidden": self.hidden,
                "sizes": ",".join(str(s) for s in self.sizes)}
        arrays = {"in_mean": self.in_mean, "in_std": self.in_std,
                  "out_mean": self.out_mean, "out_std": self.out_std}
        for i, p in enumerate(self.params):
            arrays[f"param{i}"] = p
        save_checkpoint(path, meta, arrays)

    @classmethod
    def load(cls, path, env: EnvSpec) -> "EnsembleModel":
        meta, arrays = load_checkpoint(path)
        if meta.get("kind") != "ensemble":
            raise ValueError(f"{path} is not an ensemble checkpoint")
        if meta["env"] != env.name:
            raise ValueError(f"checkpoint is for env {meta['env']!r}, not {env.name!r}")
        model = cls(env, n_models=int(meta["n_models"]), hidden=int(meta["hidden"]))
        for name in ("in_mean", "in_std", "out_mean", "out_std"):
            setattr(model, name, arrays[name])
        model.params = [arrays[f"param{i}"] for i in range(len(model.params))]
        return model


def predict(ensemble: EnsembleModel, model_index: int, state, action) -> np.ndarray:
    """Next state predicted by a single ensemble member."""
    if not 0 <= model_index < ensemble.n_models:
        raise IndexError(f"model_index {model_index} out of range for M={ensemble.n_models}")
    return ensemble.predict_all(state, action)[model_index]


def _mse_per_model(ensemble, params, x, y):
    pred, _ = nn.forward(params, np.broadcast_to(x, (ensemble.n_models,) + x.shape))
    return np.mean((pred - y) ** 2, axis=(1, 2))


def model_loss_and_grads(params, x, y):
    """Mean squared error of stacked nets on a shared batch, with gradients.

    ``x`` is ``(M, B, in)`` and ``y`` is ``(M, B, out)``; the loss of each net is
    averaged over batch and output dims, and the returned scalar is their sum
    so each net's gradient is that of its own loss.
    """
    pred, acts = nn.forward(params, x)
    diff = pred - y
    denom = diff.shape[-2] * diff.shape[-1]
    losses = np.sum(diff * diff, axis=(-2, -1)) / denom
    grads = nn.backward(params, acts, 2.0 * diff / denom)
    return losses, grads


def train(ensemble: EnsembleModel, dataset: Dataset, config: EnsembleConfig, rng: np.random.Generator) -> ModelTrainReport:
    """Fit every member on a 2:1 train/validation split with early stopping.

    Members stop individually once their validation loss has not improved for
    ``config.patience`` epochs; each is restored to its best-validation
    parameters. ``l_val`` is the mean of those best validation losses, in
    normalized-target units.
    """
    n = len(dataset)
    if n < 3:
        raise ValueError(f"dataset too small to split: {n} transitions (need >= 3)")
    perm = rng.permutation(n)
    n_train = min(n - 1, max(1, int(round(n * config.train_fraction))))
    tr, va = perm[:n_train], perm[n_train:]

    s, a, s2 = dataset.states, dataset.actions, dataset.next_states
    ensemble.set_normalization(s[tr], a[tr], s2[tr])
    x_all = ensemble.normalize_inputs(s, a)
    y_all = ensemble.normalize_targets(s2 - s)
    x_tr, y_tr = x_all[tr], y_all[tr]
    x_va, y_va = x_all[va], y_all[va]

    M = ensemble.n_models
    member_rngs = rng.spawn(M)
    opt = nn.Adam(ensemble.params, lr=config.lr)
    best_params = nn.copy_params(ensemble.params)
    best_val = _mse_per_model(ensemble, ensemble.params, x_va, y_va)
    stale = np.zeros(M, dtype=int)
    active = np.ones(M, dtype=bool)
    bs = min(config.batch_size, n_train)
    n_batches = int(np.ceil(n_train / bs))
    epochs = 0
    for epoch in range(config.max_epochs):
        if not active.any():
            break
        epochs = epoch + 1
        perms = np.stack([r.permutation(n_train) for r in member_rngs])
        mask = active[:, None, None].astype(np.float64)
        for b in range(n_batches):
            idx = perms[:, b * bs : (b + 1) * bs]
            _, grads = model_loss_and_grads(ensemble.params, x_tr[idx], y_tr[idx])
            opt.step(ensemble.params, grads, mask=mask)
        val = _mse_per_model(ensemble, ensemble.params, x_va, y_va)
        improved = active & (val < best_val)
        for m in np.flatnonzero(improved):
            for bp, p in zip(best_params, ensemble.params):
                bp[m] = p[m]
        best_val = np.where(improved, val, best_val)
        stale = np.where(improved, 0, stale + active)
        active &= stale < config.patience

    ensemble.params = best_params
    train_loss = float(np.mean(_mse_per_model(ensemble, ensemble.params, x_tr, y_tr)))
    l_val = float(np.mean(best_val))
    log.debug("ensemble trained: epochs=%d l_val=%.4g train=%.4g", epochs, l_val, train_loss)
    return ModelTrainReport(l_val=l_val, epochs_run=epochs, n_train=len(tr), n_val=len(va),
                            val_losses=[float(v) for v in best_val], train_loss=train_loss)


def validation_loss(ensemble: EnsembleModel, dataset: Dataset) -> float:
    """Mean over members of the normalized-delta MSE on ``dataset``."""
    x = ensemble.normalize_inputs(dataset.states, dataset.actions)
    y = ensemble.normalize_targets(dataset.next_states - dataset.states)
    return float(np.mean(_mse_per_model(ensemble, ensemble.params, x, y)))


def member_std(values) -> np.ndarray:
    """Sample std (ddof=1) across axis 0, exactly zero when all members agree.

    Shifting by the first member first keeps identical predictions from
    picking up rounding noise in the mean.
    """
    values = np.asarray(values, dtype=np.float64)
    return np.std(values - values[:1], axis=0, ddof=1)


def rewards_under_members(ensemble: EnsembleModel, states, actions, next_all=None) -> np.ndarray:
    """Reward of each member's predicted triple, shape ``(M, n)`` (or ``(M,)``)."""
    if next_all is None:
        next_all = ensemble.predict_all(states, actions)
    return ensemble.env.reward_fn(np.asarray(states), np.asarray(actions), next_all)


def reward_variance_per_step(ensemble: EnsembleModel, state, action):
    """Per-member rewards and their sample standard deviation (ddof=1)."""
    if ensemble.n_models < 2:
        raise ValueError("variance undefined for fewer than 2 models")
    r = rewards_under_members(ensemble, state, action)
    return r, member_std(r)


def state_variance_per_step(ensemble: EnsembleModel, state, action):
    """Sum over state dims of the member-wise sample std of next-state predictions."""
    if ensemble.n_models < 2:
        raise ValueError("variance undefined for fewer than 2 models")
    preds = ensemble.predict_all(state, action)
    return np.sum(member_std(preds), axis=-1)


def generalization_rmse(ensemble: EnsembleModel, new_data: Dataset) -> float:
    """RMSE of the ensemble-mean next-state prediction over transitions and dims."""
    if len(new_data) == 0:
        raise ValueError("empty data")
    pred = ensemble.predict_mean(new_data.states, new_data.actions)
    return float(np.sqrt(np.mean((pred - new_data.next_states) ** 2)))


def info_gain_gaussian(prior_mean, prior_std, post_mean, post_std) -> float:
    """KL(posterior || prior) between two univariate Gaussians."""
    if prior_std <= 0 or post_std <= 0:
        raise ValueError("standard deviations must be positive")
    return float(
        np.log(prior_std / post_std)
        + (post_std**2 + (post_mean - prior_mean) ** 2) / (2.0 * prior_std**2)
        - 0.5
    )


def info_gain_from_rewards(prior_rewards, post_rewards) -> float:
    """Information gain diagnostic from member rewards before and after an update."""
    prior_rewards = np.asarray(prior_rewards, dtype=np.float64)
    post_rewards = np.asarray(post_rewards, dtype=np.float64)
    return info_gain_gaussian(prior_rewards.mean(), prior_rewards.std(ddof=1),
                              post_rewards.mean(), post_rewards.std(ddof=1))
