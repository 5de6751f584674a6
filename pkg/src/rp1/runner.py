"""End-to-end experiment loop, run modes and metrics persistence."""
from __future__ import annotations

import csv
import logging
import math
import os
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from rp1 import collector, ensemble as ens
from rp1.config import RunConfig
from rp1.envs import Dataset, EnvSpec, make_env, uniform_random_policy
from rp1.policy import GaussianPolicy, ModelRolloutBatch, hybrid_reward, ppo_update, train_policy_in_model
from rp1.selector import LambdaSelector

log = logging.getLogger(__name__)

METRICS_COLUMNS = (
    "iteration", "timesteps_cumulative", "lambda", "n_collected", "stopped_early",
    "G", "G_hat", "l_val", "eval_return_mean", "best_so_far", "wall_clock_s",
)
ROLLOUT_LOG_COLUMNS = ("iteration", "update", "lambda", "env_reward", "variance_bonus", "hybrid_reward")


class RunAborted(RuntimeError):
    """A module error stopped the run; metrics written so far are on disk."""


@dataclass
class IterationRecord:
    iteration: int
    timesteps_cumulative: int
    lam: float | None
    n_collected: int
    stopped_early: bool | None
    G: float | None
    G_hat: float | None
    l_val: float | None
    eval_return_mean: float
    best_so_far: float
    wall_clock_s: float

    def row(self, log_wall_clock: bool) -> list[str]:
        def f(x):
            return "" if x is None else repr(float(x))

        return [
            str(self.iteration), str(self.timesteps_cumulative), f(self.lam), str(self.n_collected),
            "" if self.stopped_early is None else str(int(self.stopped_early)),
            f(self.G), f(self.G_hat), f(self.l_val), f(self.eval_return_mean), f(self.best_so_far),
            f"{self.wall_clock_s:.3f}" if log_wall_clock else "",
        ]


class MetricsWriter:
    """Appends one CSV row per iteration and flushes it to disk immediately."""

    def __init__(self, out_dir: Path, log_wall_clock: bool):
        self.path = out_dir / "metrics.csv"
        self.timing_path = out_dir / "timing.csv"
        self.log_wall_clock = log_wall_clock
        self.records: list[IterationRecord] = []
        with open(self.path, "w", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerow(METRICS_COLUMNS)
        with open(self.timing_path, "w", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerow(["iteration", "wall_clock_s"])

    def write(self, rec: IterationRecord) -> None:
        if self.records and rec.best_so_far < self.records[-1].best_so_far:
            raise AssertionError("best-so-far decreased")
        self.records.append(rec)
        with open(self.path, "a", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerow(rec.row(self.log_wall_clock))
        with open(self.timing_path, "a", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerow([rec.iteration, f"{rec.wall_clock_s:.3f}"])


class _RolloutLog:
    def __init__(self, path: Path):
        self.path = path
        with open(path, "w", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerow(ROLLOUT_LOG_COLUMNS)
        self.iteration = 0
        self.update = 0

    def __call__(self, batch: ModelRolloutBatch) -> None:
        v = batch.valid
        with open(self.path, "a", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            for er, vb, hr in zip(batch.env_rewards[v], batch.variance_bonus[v], batch.hybrid_rewards[v]):
                w.writerow([self.iteration, self.update, repr(batch.lam), repr(float(er)), repr(float(vb)),
                            repr(float(hr))])
        self.update += 1


def _rngs(seed: int):
    names = ("init", "model_init", "model_train", "policy_init", "policy_train", "collect", "selector", "eval")
    children = np.random.SeedSequence(seed).spawn(len(names))
    return {name: child for name, child in zip(names, children)}


def evaluate(env: EnvSpec, policy: GaussianPolicy, episodes: int, seed_seq: np.random.SeedSequence,
             H: int | None = None) -> float:
    """Mean undiscounted return of the deterministic (mean-action) policy.

    Episodes run in lockstep; the same initial states are used at every call.
    """
    H = H or env.horizon
    rng = np.random.default_rng(seed_seq)
    s = np.asarray(env.init_fn(rng, episodes), dtype=np.float64)
    total = np.zeros(episodes)
    for _ in range(H):
        a = env.clip_action(policy.mean(s))
        s2 = env.dynamics(s, a)
        total += env.reward_fn(s, a, s2)
        s = s2
    return float(total.mean())


def env_rollout_batch(env: EnvSpec, policy: GaussianPolicy, n_samples: int, rng: np.random.Generator,
                      gamma: float, H: int | None = None) -> ModelRolloutBatch:
    """Vectorized true-environment rollouts packed as a PPO batch (no bonus)."""
    H = H or env.horizon
    N = int(math.ceil(n_samples / H))
    valid = (np.arange(N * H) < n_samples).reshape(N, H)
    sd, ad = env.state_dim, env.action_dim
    states = np.zeros((N, H, sd))
    raw = np.zeros((N, H, ad))
    applied = np.zeros((N, H, ad))
    logps = np.zeros((N, H))
    rew = np.zeros((N, H))
    s = np.asarray(env.init_fn(rng, N), dtype=np.float64)
    for t in range(H):
        a_raw, lp = policy.sample(s, rng)
        a = env.clip_action(a_raw)
        s2 = env.dynamics(s, a)
        states[:, t], raw[:, t], applied[:, t], logps[:, t] = s, a_raw, a, lp
        rew[:, t] = env.reward_fn(s, a, s2)
        s = s2
    zeros = np.zeros((N, H))
    return ModelRolloutBatch(0.0, gamma, states, raw, applied, logps, hybrid_reward(0.0, rew, zeros), rew, zeros,
                             np.zeros((N, H), dtype=np.int64), valid)


def _prepare_dir(config: RunConfig, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for stale in ("metrics.csv", "timing.csv", "selector_state.csv", "collection.csv", "model_rollouts.csv"):
        if (out / stale).exists():
            (out / stale).unlink()
    (out / "config.json").write_text(config.dumps())
    if config.save_checkpoints:
        (out / "checkpoints").mkdir(exist_ok=True)
    return out


def run(config: RunConfig, out_dir) -> Path:
    """Execute the model-based loop for ``config.mode`` and write the run directory.

    Layout: ``config.json``, ``metrics.csv`` (one row per iteration, row 0 is
    the random-data initialization), ``timing.csv``, ``collection.csv``,
    ``selector_state.csv`` (selector modes only), optional
    ``model_rollouts.csv`` and ``checkpoints/``.
    """
    config.validate()
    if config.mode == "model_free":
        return run_model_free(config, out_dir)
    out = _prepare_dir(config, out_dir)
    t0 = time.perf_counter()
    writer = MetricsWriter(out, config.log_wall_clock)
    try:
        _run_loop(config, out, writer, t0)
    except Exception as exc:
        log.error("run aborted: %s", exc)
        raise RunAborted(str(exc)) from exc
    return out


def _run_loop(config: RunConfig, out: Path, writer: MetricsWriter, t0: float) -> None:
    env = make_env(config.env, config.horizon, config.env_init_noise)
    seeds = _rngs(config.seed)
    rng = {k: np.random.default_rng(v) for k, v in seeds.items() if k != "eval"}
    ecfg, pcfg, ccfg = config.ensemble, config.policy, config.collector

    model = ens.EnsembleModel(env, ecfg.n_models, ecfg.hidden, rng["model_init"])
    policy = GaussianPolicy.for_env(env, pcfg, rng["policy_init"])
    selector = LambdaSelector.from_config(config.selector) if config.uses_selector else None
    rollout_log = _RolloutLog(out / "model_rollouts.csv") if config.log_model_rollouts else None
    noise = ccfg.action_noise_std

    init = collector.collect_fixed(env, uniform_random_policy(env), config.n_initial, rng["init"])
    dataset = Dataset.from_transitions(init)
    timesteps = len(dataset)
    best = evaluate(env, policy, config.eval_episodes, seeds["eval"])
    writer.write(IterationRecord(0, timesteps, None, len(dataset), None, None, None, None, best, best,
                                 time.perf_counter() - t0))
    coll_path = out / "collection.csv"
    with open(coll_path, "w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerow(
            ["iteration", "n_samples", "n_batches", "stop_reason", "subspace_dims", "residual_trace"])

    for it in range(1, config.iterations + 1):
        if config.max_timesteps is not None and timesteps >= config.max_timesteps:
            break
        report = ens.train(model, dataset, ecfg, rng["model_train"])

        if selector is not None:
            idx, lam = selector.sample_lambda(rng["selector"])
        else:
            idx, lam = None, config.fixed_lambda

        if rollout_log is not None:
            rollout_log.iteration, rollout_log.update = it, 0
        train_policy_in_model(model, policy, env, lam, pcfg, rng["policy_train"],
                              variance_source=config.variance_source, on_batch=rollout_log)

        cap = ccfg.max_samples
        if config.max_timesteps is not None:
            cap = max(1, min(cap, config.max_timesteps - timesteps))
        if config.uses_early_stop:
            new, phase = collector.collect_with_early_stop(env, policy, ccfg.alpha, ccfg.delta, cap,
                                                           rng["collect"], noise_std=noise)
            stopped = phase.stopped_early
            with open(coll_path, "a", newline="") as fh:
                csv.writer(fh, lineterminator="\n").writerow(
                    [it, phase.n_samples, phase.n_batches, phase.stop_reason,
                     ";".join(str(k) for k in phase.subspace_dims),
                     ";".join(repr(r) for r in phase.residual_trace)])
        else:
            new = collector.collect_fixed(env, policy, cap, rng["collect"], noise_std=noise)
            stopped = False
            with open(coll_path, "a", newline="") as fh:
                csv.writer(fh, lineterminator="\n").writerow([it, len(new), "", "fixed", "", ""])
        new_data = Dataset.from_transitions(new)

        # generalization error of the model that planned this collection
        g = ens.generalization_rmse(model, new_data)
        g_hat = None
        if selector is not None:
            if selector.g_history:
                g_hat = selector.normalize_loss(g, report.l_val)
                selector.update(idx, g_hat)
            else:
                selector.l_val = report.l_val
                selector.record(g)
            selector.append_state(out / "selector_state.csv", it)

        before = len(dataset)
        dataset = dataset.merge(new_data)
        assert len(dataset) == before + len(new_data)
        timesteps += len(new_data)

        ret = evaluate(env, policy, config.eval_episodes, seeds["eval"])
        best = max(best, ret)
        writer.write(IterationRecord(it, timesteps, lam, len(new_data), stopped, g, g_hat, report.l_val, ret, best,
                                     time.perf_counter() - t0))
        if config.save_checkpoints:
            model.save(out / "checkpoints" / f"model_{it:04d}.txt")
            policy.save(out / "checkpoints" / f"policy_{it:04d}.txt")
        log.info("iter %d: lambda=%s n=%d G=%.4g eval=%.3f best=%.3f", it, lam, len(new_data), g, ret, best)


def run_model_free(config: RunConfig, out_dir) -> Path:
    """Train the same PPO machinery directly on the true environment.

    Each update consumes ``policy.batch_size`` environment steps (the last one
    is cut to the remaining budget); the metrics schema matches model-based
    runs, with model-related columns left empty.
    """
    config.validate()
    out = _prepare_dir(config, out_dir)
    t0 = time.perf_counter()
    writer = MetricsWriter(out, config.log_wall_clock)
    try:
        env = make_env(config.env, config.horizon, config.env_init_noise)
        seeds = _rngs(config.seed)
        policy = GaussianPolicy.for_env(env, config.policy, np.random.default_rng(seeds["policy_init"]))
        rng = np.random.default_rng(seeds["policy_train"])
        best = evaluate(env, policy, config.eval_episodes, seeds["eval"])
        writer.write(IterationRecord(0, 0, None, 0, None, None, None, None, best, best, time.perf_counter() - t0))
        timesteps, it = 0, 0
        while timesteps < config.model_free_budget:
            it += 1
            n = min(config.policy.batch_size, config.model_free_budget - timesteps)
            batch = env_rollout_batch(env, policy, n, rng, config.policy.gamma)
            ppo_update(policy, batch, config.policy, rng)
            timesteps += n
            ret = evaluate(env, policy, config.eval_episodes, seeds["eval"])
            best = max(best, ret)
            writer.write(IterationRecord(it, timesteps, 0.0, n, None, None, None, None, ret, best,
                                         time.perf_counter() - t0))
            if config.save_checkpoints:
                policy.save(out / "checkpoints" / f"policy_{it:04d}.txt")
    except Exception as exc:
        log.error("run aborted: %s", exc)
        raise RunAborted(str(exc)) from exc
    return out


def run_seeds(config: RunConfig, seeds, out_root, jobs: int = 1) -> list[Path]:
    """Run one directory per seed (``<out_root>/seed_<n>``), optionally in parallel processes."""
    out_root = Path(out_root)
    tasks = [(config.replace(seed=int(s)), out_root / f"seed_{int(s)}") for s in seeds]
    if jobs <= 1:
        return [run(c, d) for c, d in tasks]
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_run_task, tasks))


def _run_task(task):
    cfg, out = task
    return run(cfg, out)


def cpu_count() -> int:
    return len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1)
