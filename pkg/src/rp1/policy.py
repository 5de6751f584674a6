"""Gaussian MLP policy trained inside the ensemble with the PPO clipped surrogate."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from rp1 import nn
from rp1.ensemble import member_std
from rp1.envs import EnvSpec
from rp1.serialization import load_checkpoint, save_checkpoint

log = logging.getLogger(__name__)

VARIANCE_SOURCES = ("reward", "state")


@dataclass
class PolicyConfig:
    hidden: int = 32
    action_std: float = 0.5
    lr: float = 3e-4
    gamma: float = 0.99
    clip: float = 0.2
    epochs: int = 10
    minibatch_size: int = 256
    batch_size: int = 4000
    min_updates: int = 10
    policy_patience: int = 5
    max_policy_iters: int = 40


@dataclass(frozen=True)
class HybridRewardConfig:
    lam: float = 0.0
    gamma: float = 0.99
    variance_source: str = "reward"

    def __post_init__(self):
        if not 0.0 <= self.lam <= 0.5:
            raise ValueError(f"lambda must lie in [0, 0.5], got {self.lam}")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in (0, 1], got {self.gamma}")
        if self.variance_source not in VARIANCE_SOURCES:
            raise ValueError(f"variance_source must be one of {VARIANCE_SOURCES}")


def hybrid_reward(lam: float, env_reward, variance_bonus):
    """``(1 - lam) * env_reward + lam * variance_bonus``; the only place it is formed."""
    return (1.0 - lam) * env_reward + lam * variance_bonus


class GaussianPolicy:
    """Diagonal Gaussian around an MLP mean with a fixed action std."""

    def __init__(self, state_dim: int, action_dim: int, hidden: int = 32, action_std=0.5,
                 rng: np.random.Generator | None = None, lr: float = 3e-4):
        rng = np.random.default_rng(0) if rng is None else rng
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.hidden = hidden
        self.std = np.broadcast_to(np.asarray(action_std, dtype=np.float64), (action_dim,)).copy()
        if np.any(self.std <= 0):
            raise ValueError("action std must be positive")
        self.params = nn.init_mlp(self.sizes, rng, out_scale=0.01)
        self.opt = nn.Adam(self.params, lr=lr)

    @classmethod
    def for_env(cls, env: EnvSpec, config: PolicyConfig, rng: np.random.Generator) -> "GaussianPolicy":
        return cls(env.state_dim, env.action_dim, config.hidden, config.action_std, rng, config.lr)

    @property
    def sizes(self):
        return (self.state_dim, self.hidden, self.hidden, self.action_dim)

    def mean(self, states) -> np.ndarray:
        out, _ = nn.forward(self.params, np.asarray(states, dtype=np.float64))
        return out

    def log_prob(self, states, actions, std=None) -> np.ndarray:
        return gaussian_log_prob(self.mean(states), actions, self.std if std is None else std)

    def sample(self, states, rng: np.random.Generator, noise_std=None):
        std = self.std if noise_std is None else np.broadcast_to(noise_std, self.std.shape)
        mu = self.mean(states)
        actions = mu + std * rng.standard_normal(mu.shape)
        return actions, gaussian_log_prob(mu, actions, std)

    def act(self, state, rng: np.random.Generator, deterministic: bool = False, noise_std=None) -> np.ndarray:
        state = np.asarray(state, dtype=np.float64)
        if deterministic:
            return self.mean(state[None])[0]
        actions, _ = self.sample(state[None], rng, noise_std)
        return actions[0]

    def get_params(self):
        return nn.copy_params(self.params)

    def set_params(self, params) -> None:
        self.params = nn.copy_params(params)

    def save(self, path) -> None:
        meta = {"kind": "policy", "sizes": ",".join(str(s) for s in self.sizes)}
        arrays = {"std": self.std}
        arrays.update({f"param{i}": p for i, p in enumerate(self.params)})
        save_checkpoint(path, meta, arrays)

    @classmethod
    def load(cls, path) -> "GaussianPolicy":
        meta, arrays = load_checkpoint(path)
        if meta.get("kind") != "policy":
            raise ValueError(f"{path} is not a policy checkpoint")
        sd, hidden, _, ad = (int(s) for s in meta["sizes"].split(","))
        pol = cls(sd, ad, hidden, arrays["std"])
        pol.params = [arrays[f"param{i}"] for i in range(len(pol.params))]
        pol.opt = nn.Adam(pol.params, lr=pol.opt.lr)
        return pol


def gaussian_log_prob(mu, actions, std) -> np.ndarray:
    z = (actions - mu) / std
    return -0.5 * np.sum(z * z, axis=-1) - np.sum(np.log(std)) - 0.5 * mu.shape[-1] * math.log(2.0 * math.pi)


def log_prob_grads(params, std, states, actions, weights):
    """Gradient of ``sum_i weights_i * log pi(a_i | s_i)`` w.r.t. the mean-net params."""
    mu, acts = nn.forward(params, states)
    dmu = weights[:, None] * (actions - mu) / (std * std)
    return nn.backward(params, acts, dmu)


def ppo_surrogate(params, std, states, actions, old_logp, adv, clip):
    """Clipped surrogate loss (to minimize) and its gradient.

    The gradient w.r.t. each log-prob is ``-A r / n`` where the unclipped term
    attains the minimum, zero where the clipped term does.
    """
    mu, acts = nn.forward(params, states)
    logp = gaussian_log_prob(mu, actions, std)
    ratio = np.exp(logp - old_logp)
    surr1 = ratio * adv
    surr2 = np.clip(ratio, 1.0 - clip, 1.0 + clip) * adv
    n = states.shape[0]
    loss = -float(np.mean(np.minimum(surr1, surr2)))
    dlogp = np.where(surr1 <= surr2, -adv * ratio / n, 0.0)
    dmu = dlogp[:, None] * (actions - mu) / (std * std)
    grads = nn.backward(params, acts, dmu)
    clipped = float(np.mean(np.abs(ratio - 1.0) > clip))
    return loss, grads, clipped


@dataclass
class ModelRolloutBatch:
    """Trajectories generated inside the ensemble, arrays shaped ``(n_traj, H, ...)``.

    ``actions`` are the raw Gaussian samples (what ``log_probs`` refer to);
    ``applied_actions`` are those clipped to bounds and fed to the model.
    ``valid`` marks steps that exist; a trajectory whose predicted state went
    non-finite stops there and is listed in ``truncated``.
    """

    lam: float
    gamma: float
    states: np.ndarray
    actions: np.ndarray
    applied_actions: np.ndarray
    log_probs: np.ndarray
    hybrid_rewards: np.ndarray
    env_rewards: np.ndarray
    variance_bonus: np.ndarray
    members: np.ndarray
    valid: np.ndarray
    truncated: list = field(default_factory=list)

    @property
    def n_steps(self) -> int:
        return int(self.valid.sum())

    def mean_hybrid_return(self) -> float:
        return float(np.mean(np.sum(np.where(self.valid, self.hybrid_rewards, 0.0), axis=1)))

    def mean_variance_bonus(self) -> float:
        return float(np.mean(self.variance_bonus[self.valid]))

    def advantages(self) -> np.ndarray:
        return discounted_advantages(self.hybrid_rewards, self.valid, self.gamma)


def discounted_advantages(rewards, valid, gamma) -> np.ndarray:
    """Discounted reward-to-go minus the per-timestep mean over live trajectories."""
    rewards = np.where(valid, rewards, 0.0)
    N, H = rewards.shape
    ret = np.zeros((N, H))
    running = np.zeros(N)
    for t in reversed(range(H)):
        running = rewards[:, t] + gamma * running
        ret[:, t] = running
    counts = valid.sum(axis=0)
    baseline = np.where(counts > 0, np.where(valid, ret, 0.0).sum(axis=0) / np.maximum(counts, 1), 0.0)
    return np.where(valid, ret - baseline[None, :], 0.0)


def model_rollout(ensemble, policy: GaussianPolicy, env: EnvSpec, lam: float, H: int, rng: np.random.Generator,
                  n_traj: int | None = None, variance_source: str = "reward", gamma: float = 0.99) -> ModelRolloutBatch:
    """Roll the policy out inside the ensemble from fresh initial states.

    At every step a member is drawn uniformly per trajectory to propagate the
    state; all members are evaluated so the disagreement bonus can be formed.
    """
    cfg = HybridRewardConfig(lam, gamma, variance_source)
    if H < 1:
        raise ValueError("H must be >= 1")
    if ensemble.n_models < 2 and lam > 0:
        raise ValueError("variance bonus needs at least 2 models")
    N = n_traj or 1
    sd, ad, M = env.state_dim, env.action_dim, ensemble.n_models
    states = np.zeros((N, H, sd))
    raw = np.zeros((N, H, ad))
    applied = np.zeros((N, H, ad))
    logps = np.zeros((N, H))
    env_r = np.zeros((N, H))
    bonus = np.zeros((N, H))
    hyb = np.zeros((N, H))
    members = np.zeros((N, H), dtype=np.int64)
    valid = np.zeros((N, H), dtype=bool)
    alive = np.ones(N, dtype=bool)
    truncated = []

    s = np.asarray(env.init_fn(rng, N), dtype=np.float64)
    for t in range(H):
        a_raw, lp = policy.sample(s, rng)
        a = env.clip_action(a_raw)
        member = rng.integers(M, size=N)
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        next_all = ensemble.predict_all(s[idx], a[idx])
        s_next = next_all[member[idx], np.arange(idx.size)]
        # a diverging member may produce inf; those steps are dropped below
        with np.errstate(invalid="ignore", over="ignore"):
            r_env = env.reward_fn(s[idx], a[idx], s_next)
            if M < 2:
                v = np.zeros(idx.size)
            elif cfg.variance_source == "reward":
                v = member_std(env.reward_fn(s[idx], a[idx], next_all))
            else:
                v = np.sum(member_std(next_all), axis=-1)
        ok = np.all(np.isfinite(s_next), axis=-1) & np.isfinite(r_env) & np.isfinite(v)
        for j in idx[~ok]:
            truncated.append(int(j))
            log.warning("model rollout %d produced a non-finite state at step %d; truncating", j, t)
        keep = idx[ok]
        states[keep, t] = s[keep]
        raw[keep, t] = a_raw[keep]
        applied[keep, t] = a[keep]
        logps[keep, t] = lp[keep]
        env_r[keep, t] = r_env[ok]
        bonus[keep, t] = v[ok]
        hyb[keep, t] = hybrid_reward(lam, r_env[ok], v[ok])
        members[keep, t] = member[keep]
        valid[keep, t] = True
        alive[idx[~ok]] = False
        s = s.copy()
        s[keep] = s_next[ok]
    return ModelRolloutBatch(lam, gamma, states, raw, applied, logps, hyb, env_r, bonus, members, valid, truncated)


def ppo_update(policy: GaussianPolicy, batch: ModelRolloutBatch, config: PolicyConfig, rng: np.random.Generator,
               advantages=None) -> dict:
    """Several epochs of clipped-surrogate Adam steps on one batch.

    Advantages are normalized within the batch. A batch whose advantages are
    all equal carries no signal and leaves the policy untouched.
    """
    if batch.n_steps == 0:
        raise ValueError("empty batch")
    adv = batch.advantages() if advantages is None else np.asarray(advantages, dtype=np.float64)
    valid = batch.valid
    S = batch.states[valid]
    A = batch.actions[valid]
    old_logp = batch.log_probs[valid]
    adv = adv[valid] if adv.shape == valid.shape else adv
    std = float(np.std(adv))
    if not np.isfinite(std) or std < 1e-8:
        log.warning("degenerate batch (all advantages equal); skipping update")
        return {"skipped": True, "loss": 0.0, "clip_frac": 0.0, "n": int(S.shape[0])}
    adv = (adv - adv.mean()) / std
    n = S.shape[0]
    mb = min(config.minibatch_size, n)
    losses, clips = [], []
    for _ in range(config.epochs):
        perm = rng.permutation(n)
        for start in range(0, n, mb):
            j = perm[start : start + mb]
            loss, grads, clipped = ppo_surrogate(policy.params, policy.std, S[j], A[j], old_logp[j], adv[j], config.clip)
            policy.opt.step(policy.params, grads)
            losses.append(loss)
            clips.append(clipped)
    return {"skipped": False, "loss": float(np.mean(losses)), "clip_frac": float(np.mean(clips)), "n": n}


def train_policy_in_model(ensemble, policy: GaussianPolicy, env: EnvSpec, lam: float, config: PolicyConfig,
                          rng: np.random.Generator, H: int | None = None, variance_source: str = "reward",
                          on_batch=None) -> dict:
    """Alternate model rollouts and PPO updates until the hybrid return plateaus.

    Runs at least ``config.min_updates`` updates, then stops once the mean
    hybrid return has not improved for ``config.policy_patience`` iterations,
    or after ``config.max_policy_iters``. The policy is left holding the
    parameters whose rollout batch scored best. ``on_batch`` sees every batch.
    """
    H = H or env.horizon
    n_traj = max(1, int(math.ceil(config.batch_size / H)))
    best = -np.inf
    best_params = policy.get_params()
    stale = 0
    returns, best_curve = [], []
    updates = 0
    while updates < config.max_policy_iters:
        batch = model_rollout(ensemble, policy, env, lam, H, rng, n_traj=n_traj,
                              variance_source=variance_source, gamma=config.gamma)
        if on_batch is not None:
            on_batch(batch)
        ret = batch.mean_hybrid_return()
        returns.append(ret)
        if ret > best:
            best, best_params, stale = ret, policy.get_params(), 0
        else:
            stale += 1
        best_curve.append(best)
        if updates >= config.min_updates and stale >= config.policy_patience:
            break
        ppo_update(policy, batch, config, rng)
        updates += 1
    policy.set_params(best_params)
    return {"updates": updates, "returns": returns, "best_returns": best_curve, "best": best}
