"""Real-environment data collection with active-subspace early stopping."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Iterator

import numpy as np

from rp1 import linalg
from rp1.envs import EnvSpec, Transition, rollout

log = logging.getLogger(__name__)

DEFAULT_ALPHA = 0.0005


@dataclass
class CollectorConfig:
    alpha: float = DEFAULT_ALPHA
    delta: float = 0.01
    max_samples: int = 3000
    action_noise_std: float | None = None
    # adaptive per-iteration alpha is recorded but not supported
    adaptive_alpha: bool = False

    def __post_init__(self):
        if self.adaptive_alpha:
            raise ValueError("adaptive_alpha is not supported; alpha stays fixed")


@dataclass
class CollectionPhase:
    """Report of one collection phase."""

    alpha: float
    delta: float
    max_samples: int
    n_samples: int = 0
    n_batches: int = 0
    stopped_early: bool = False
    stop_reason: str = ""
    residual_trace: list = field(default_factory=list)
    subspace_dims: list = field(default_factory=list)
    features: np.ndarray | None = None


def early_stop_stream(batches: Iterator[np.ndarray] | Callable[[], np.ndarray], alpha: float, delta: float,
                      max_samples: int) -> tuple[list, CollectionPhase]:
    """Consume feature batches until a batch is explained by the data so far.

    Each batch is ``(n_i, d)`` with samples as rows. Before consuming every batch
    after the first, the active subspace of everything accumulated is formed
    and the batch's residual computed; collection stops when it drops below
    ``alpha``, or when the next batch would not fit under ``max_samples``
    (batches are truncated to the cap). The batch that triggers the stop is
    kept. Returns the list of consumed batches (possibly truncated) and the
    phase report.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    if max_samples < 1:
        raise ValueError("max_samples must be >= 1")
    next_batch = batches if callable(batches) else (lambda it=iter(batches): next(it))
    phase = CollectionPhase(alpha=alpha, delta=delta, max_samples=max_samples)
    kept = []
    X = None
    while phase.n_samples < max_samples:
        try:
            batch = np.atleast_2d(np.asarray(next_batch(), dtype=np.float64))
        except StopIteration:
            phase.stop_reason = "stream_exhausted"
            break
        room = max_samples - phase.n_samples
        if batch.shape[0] > room:
            batch = batch[:room]
        r = None
        if X is not None:
            try:
                subspace = linalg.extract_active_subspace(linalg.covariance(X), delta)
            except linalg.DegenerateCovariance:
                subspace = None
            if subspace is not None:
                try:
                    r = linalg.residual(subspace, batch.T)
                except linalg.ZeroEnergyBatch:
                    r = 0.0
                phase.residual_trace.append(r)
                phase.subspace_dims.append(subspace.k)
        kept.append(batch)
        X = batch if X is None else np.vstack([X, batch])
        phase.n_samples += batch.shape[0]
        phase.n_batches += 1
        if r is not None and r < alpha:
            phase.stopped_early = True
            phase.stop_reason = "residual_below_alpha"
            break
    else:
        phase.stop_reason = "max_samples"
    phase.features = X
    return kept, phase


def collect_with_early_stop(env: EnvSpec, policy, alpha: float, delta: float, max_samples: int,
                            rng: np.random.Generator, noise_std=None, H: int | None = None):
    """Roll out whole trajectories until a new one is explained by the ones before it.

    Features are raw ``(state, action)`` concatenations. Returns the collected
    transitions and the :class:`CollectionPhase` report.
    """
    H = H or env.horizon
    trajectories: list[list[Transition]] = []

    def next_batch():
        traj = rollout(env, policy, H, rng, noise_std=noise_std)
        trajectories.append(traj.transitions)
        return traj.features()

    kept, phase = early_stop_stream(next_batch, alpha, delta, max_samples)
    transitions = []
    for traj, batch in zip(trajectories, kept):
        transitions.extend(traj[: batch.shape[0]])
    return transitions, phase


def collect_fixed(env: EnvSpec, policy, n_samples: int, rng: np.random.Generator, noise_std=None,
                  H: int | None = None) -> list[Transition]:
    """Exactly ``n_samples`` transitions; the last trajectory is truncated."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    H = H or env.horizon
    out: list[Transition] = []
    while len(out) < n_samples:
        traj = rollout(env, policy, H, rng, noise_std=noise_std)
        out.extend(traj.transitions[: n_samples - len(out)])
    return out
