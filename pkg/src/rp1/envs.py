"""Deterministic continuous-control environments with recoverable rewards.

Every environment exposes the velocity terms its reward depends on as part of
the observation, so ``reward_fn(state, action, next_state)`` reproduces the
logged reward of any transition. Dynamics and reward functions are written
against the trailing axis, so they accept a single state ``(state_dim,)`` or a
batch ``(n, state_dim)``. Constants are documented in ``docs/environments.md``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np


@dataclass(frozen=True)
class EnvSpec:
    name: str
    state_dim: int
    action_dim: int
    horizon: int
    action_low: np.ndarray
    action_high: np.ndarray
    dynamics: Callable[[np.ndarray, np.ndarray], np.ndarray]
    reward_fn: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]
    init_fn: Callable[[np.random.Generator, int | None], np.ndarray]
    state_bound: float
    episode_termination: bool = False
    params: dict = field(default_factory=dict)

    def clip_action(self, action: np.ndarray) -> np.ndarray:
        return np.clip(action, self.action_low, self.action_high)


class StepResult(NamedTuple):
    next_state: np.ndarray
    reward: float
    clipped: bool


@dataclass(frozen=True)
class Transition:
    state: np.ndarray
    action: np.ndarray
    next_state: np.ndarray
    reward: float
    clipped: bool = False


@dataclass
class TrajectoryBatch:
    """Transitions of one trajectory, in time order."""

    transitions: list[Transition]

    def __len__(self) -> int:
        return len(self.transitions)

    def __iter__(self):
        return iter(self.transitions)

    def states(self) -> np.ndarray:
        return np.array([t.state for t in self.transitions])

    def actions(self) -> np.ndarray:
        return np.array([t.action for t in self.transitions])

    def next_states(self) -> np.ndarray:
        return np.array([t.next_state for t in self.transitions])

    def rewards(self) -> np.ndarray:
        return np.array([t.reward for t in self.transitions])

    def features(self) -> np.ndarray:
        """(state, action) concatenations, one row per timestep."""
        return np.hstack([self.states(), self.actions()])


# --- pendulum swing-up ---------------------------------------------------

PENDULUM = dict(g=10.0, m=1.0, l=1.0, dt=0.05, max_speed=8.0, max_torque=2.0)


def _angle_normalize(x):
    return ((x + np.pi) % (2 * np.pi)) - np.pi


def _pendulum_dynamics(state, action):
    p = PENDULUM
    cos_th, sin_th, thdot = state[..., 0], state[..., 1], state[..., 2]
    th = np.arctan2(sin_th, cos_th)
    u = action[..., 0]
    thddot = 3.0 * p["g"] / (2.0 * p["l"]) * np.sin(th) + 3.0 / (p["m"] * p["l"] ** 2) * u
    new_th = th + thdot * p["dt"]
    new_thdot = np.clip(thdot + thddot * p["dt"], -p["max_speed"], p["max_speed"])
    return np.stack([np.cos(new_th), np.sin(new_th), new_thdot], axis=-1)


def _pendulum_reward(state, action, next_state):
    th = np.arctan2(next_state[..., 1], next_state[..., 0])
    thdot = next_state[..., 2]
    u = action[..., 0]
    return -(_angle_normalize(th) ** 2 + 0.1 * thdot**2 + 0.001 * u**2)


def _pendulum_init(rng, n=None, noise=1.0):
    shape = () if n is None else (n,)
    th = rng.uniform(-np.pi, np.pi, size=shape) * noise
    thdot = rng.uniform(-1.0, 1.0, size=shape) * noise
    return np.stack([np.cos(th), np.sin(th), thdot], axis=-1)


# --- point-mass navigation -----------------------------------------------

POINT_MASS = dict(dt=0.1, goal=(1.0, 1.0), init_noise=0.1)


def _point_mass_dynamics(state, action):
    dt = POINT_MASS["dt"]
    pos, vel = state[..., 0:2], state[..., 2:4]
    new_pos = pos + dt * vel
    new_vel = vel + dt * action
    return np.concatenate([new_pos, new_vel], axis=-1)


def _point_mass_reward(state, action, next_state):
    goal = np.asarray(POINT_MASS["goal"])
    dist = np.sqrt(np.sum((next_state[..., 0:2] - goal) ** 2, axis=-1))
    return -dist - 0.01 * np.sum(action**2, axis=-1)


def _point_mass_init(rng, n=None, noise=POINT_MASS["init_noise"]):
    shape = (4,) if n is None else (n, 4)
    pos_vel = rng.uniform(-1.0, 1.0, size=shape) * noise
    pos_vel[..., 2:4] = 0.0
    return pos_vel


# --- continuous mountain car ---------------------------------------------

MOUNTAIN_CAR = dict(
    min_position=-1.2, max_position=0.6, max_speed=0.07, goal_position=0.45, power=0.0015
)


def _mountain_car_dynamics(state, action):
    p = MOUNTAIN_CAR
    pos, vel = state[..., 0], state[..., 1]
    force = action[..., 0]
    new_vel = np.clip(vel + force * p["power"] - 0.0025 * np.cos(3 * pos), -p["max_speed"], p["max_speed"])
    new_pos = np.clip(pos + new_vel, p["min_position"], p["max_position"])
    # inelastic wall on the left
    new_vel = np.where((new_pos <= p["min_position"]) & (new_vel < 0), 0.0, new_vel)
    return np.stack([new_pos, new_vel], axis=-1)


def _mountain_car_reward(state, action, next_state):
    at_goal = next_state[..., 0] >= MOUNTAIN_CAR["goal_position"]
    return np.where(at_goal, 100.0, 0.0) - 0.1 * action[..., 0] ** 2


def _mountain_car_init(rng, n=None, noise=1.0):
    shape = () if n is None else (n,)
    pos = -0.5 + rng.uniform(-0.1, 0.1, size=shape) * noise
    return np.stack([pos, np.zeros_like(pos)], axis=-1)


def _spec(name, **kwargs) -> EnvSpec:
    lo = np.asarray(kwargs.pop("action_low"), dtype=np.float64)
    hi = np.asarray(kwargs.pop("action_high"), dtype=np.float64)
    return EnvSpec(name=name, action_low=lo, action_high=hi, **kwargs)


def make_env(name: str, horizon: int | None = None, init_noise: float | None = None) -> EnvSpec:
    """Build an environment by name, optionally overriding horizon and init noise."""
    if name == "pendulum":
        noise = 1.0 if init_noise is None else init_noise
        return _spec(
            "pendulum",
            state_dim=3,
            action_dim=1,
            horizon=horizon or 100,
            action_low=[-PENDULUM["max_torque"]],
            action_high=[PENDULUM["max_torque"]],
            dynamics=_pendulum_dynamics,
            reward_fn=_pendulum_reward,
            init_fn=lambda rng, n=None: _pendulum_init(rng, n, noise),
            state_bound=np.sqrt(1.0 + PENDULUM["max_speed"] ** 2),
            params=dict(PENDULUM, init_noise=noise),
        )
    if name == "point_mass":
        noise = POINT_MASS["init_noise"] if init_noise is None else init_noise
        H = horizon or 50
        dt = POINT_MASS["dt"]
        # |v| <= H*dt*sqrt(2), |p| <= noise*sqrt(2) + H*dt*|v|max
        vmax = H * dt * np.sqrt(2.0)
        return _spec(
            "point_mass",
            state_dim=4,
            action_dim=2,
            horizon=H,
            action_low=[-1.0, -1.0],
            action_high=[1.0, 1.0],
            dynamics=_point_mass_dynamics,
            reward_fn=_point_mass_reward,
            init_fn=lambda rng, n=None: _point_mass_init(rng, n, noise),
            state_bound=float(np.hypot(noise * np.sqrt(2.0) + H * dt * vmax, vmax)),
            params=dict(POINT_MASS, init_noise=noise),
        )
    if name == "mountain_car":
        noise = 1.0 if init_noise is None else init_noise
        return _spec(
            "mountain_car",
            state_dim=2,
            action_dim=1,
            horizon=horizon or 200,
            action_low=[-1.0],
            action_high=[1.0],
            dynamics=_mountain_car_dynamics,
            reward_fn=_mountain_car_reward,
            init_fn=lambda rng, n=None: _mountain_car_init(rng, n, noise),
            state_bound=float(np.hypot(1.2, 0.07)),
            params=dict(MOUNTAIN_CAR, init_noise=noise),
        )
    raise ValueError(f"unknown environment {name!r}; choose from {ENV_NAMES}")


ENV_NAMES = ("pendulum", "point_mass", "mountain_car")


def reset(env: EnvSpec, rng: np.random.Generator) -> np.ndarray:
    return np.asarray(env.init_fn(rng), dtype=np.float64)


def step(env: EnvSpec, state, action) -> StepResult:
    """Advance one step. Out-of-bounds actions are clipped and flagged."""
    state = np.asarray(state, dtype=np.float64)
    action = np.asarray(action, dtype=np.float64)
    if not (np.all(np.isfinite(state)) and np.all(np.isfinite(action))):
        raise ValueError("non-finite state or action")
    clipped_action = env.clip_action(action)
    clipped = bool(np.any(clipped_action != action))
    next_state = env.dynamics(state, clipped_action)
    reward = float(env.reward_fn(state, clipped_action, next_state))
    return StepResult(next_state, reward, clipped)


def rollout(env: EnvSpec, policy, H: int, rng: np.random.Generator, deterministic: bool = False,
            noise_std=None) -> TrajectoryBatch:
    """Run ``policy`` for ``H`` steps from a fresh initial state.

    None of the bundled environments terminate early, so the batch always
    holds exactly ``H`` transitions.

    ``policy`` is either a :class:`~rp1.policy.GaussianPolicy` (anything with
    an ``act(state, rng, deterministic, noise_std)`` method) or a plain
    callable ``policy(state, rng) -> action``. Stored actions are the clipped
    actions actually applied, so stored rewards stay recoverable.
    """
    if H > env.horizon:
        raise ValueError(f"H={H} exceeds the environment horizon {env.horizon}")
    act = getattr(policy, "act", None)
    state = reset(env, rng)
    out = []
    for _ in range(H):
        if act is not None:
            action = act(state, rng, deterministic=deterministic, noise_std=noise_std)
        else:
            action = policy(state, rng)
        next_state, reward, clipped = step(env, state, action)
        applied = env.clip_action(np.asarray(action, dtype=np.float64))
        out.append(Transition(state, applied, next_state, reward, clipped))
        state = next_state
    return TrajectoryBatch(out)


def uniform_random_policy(env: EnvSpec):
    """Policy drawing actions uniformly within the action bounds."""

    def policy(state, rng):
        return rng.uniform(env.action_low, env.action_high)

    return policy


@dataclass
class Dataset:
    """Column-stacked transitions: ``states``, ``actions``, ``next_states``, ``rewards``."""

    states: np.ndarray
    actions: np.ndarray
    next_states: np.ndarray
    rewards: np.ndarray

    def __len__(self) -> int:
        return self.states.shape[0]

    @classmethod
    def from_transitions(cls, transitions) -> "Dataset":
        transitions = list(transitions)
        if not transitions:
            raise ValueError("no transitions")
        return cls(
            states=np.array([t.state for t in transitions], dtype=np.float64),
            actions=np.array([t.action for t in transitions], dtype=np.float64),
            next_states=np.array([t.next_state for t in transitions], dtype=np.float64),
            rewards=np.array([t.reward for t in transitions], dtype=np.float64),
        )

    def merge(self, other: "Dataset") -> "Dataset":
        return Dataset(
            np.concatenate([self.states, other.states]),
            np.concatenate([self.actions, other.actions]),
            np.concatenate([self.next_states, other.next_states]),
            np.concatenate([self.rewards, other.rewards]),
        )

    def features(self) -> np.ndarray:
        return np.hstack([self.states, self.actions])
