"""Cross-seed summaries: median/IQR curves, Welch's t-test, per-lambda improvement."""
from __future__ import annotations

import csv
import json
import math
from collections import defaultdict
from pathlib import Path

import numpy as np
from scipy import stats as sps


def read_metrics(run_dir) -> dict[str, np.ndarray]:
    """Columns of ``metrics.csv`` as float arrays (empty cells become NaN)."""
    with open(Path(run_dir) / "metrics.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{run_dir}: empty metrics")
    cols = {}
    for key in rows[0]:
        cols[key] = np.array([float(r[key]) if r[key] != "" else math.nan for r in rows])
    return cols


def read_run_config(run_dir) -> dict:
    return json.loads((Path(run_dir) / "config.json").read_text())


def best_so_far_at(metrics: dict, budget: float) -> float:
    """Best evaluation return among records taken within ``budget`` env steps."""
    ts, best = metrics["timesteps_cumulative"], metrics["best_so_far"]
    ok = ts <= budget
    if not ok.any():
        raise ValueError(f"no record within {budget} timesteps")
    return float(best[ok][-1])


def interpolate_curve(metrics: dict, grid) -> np.ndarray:
    """Best-so-far linearly interpolated onto ``grid`` (held flat past either end)."""
    return np.interp(np.asarray(grid, dtype=np.float64), metrics["timesteps_cumulative"], metrics["best_so_far"])


def welch_t_test(a, b) -> dict:
    """Welch's unequal-variance t statistic, Welch-Satterthwaite dof and two-sided p."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size < 2 or b.size < 2:
        raise ValueError("need at least 2 samples per group")
    ma, mb = a.mean(), b.mean()
    va, vb = a.var(ddof=1) / a.size, b.var(ddof=1) / b.size
    se2 = va + vb
    if se2 == 0.0:
        if ma == mb:
            return {"t": 0.0, "df": math.nan, "p": 1.0}
        return {"t": math.copysign(math.inf, ma - mb), "df": math.nan, "p": 0.0}
    t = (ma - mb) / math.sqrt(se2)
    df = se2**2 / (va**2 / (a.size - 1) + vb**2 / (b.size - 1))
    p = float(2.0 * sps.t.sf(abs(t), df))
    return {"t": float(t), "df": float(df), "p": min(1.0, p)}


def _summary(curves: np.ndarray) -> dict:
    q25, med, q75 = np.percentile(curves, [25, 50, 75], axis=0)
    return {"median": med, "q25": q25, "q75": q75}


def _check_same_env(dirs) -> str:
    envs = {read_run_config(d)["env"] for d in dirs}
    if len(envs) != 1:
        raise ValueError(f"runs mix environments: {sorted(envs)}")
    return envs.pop()


def aggregate(group_a, group_b=None, at_timesteps: float | None = None, grid=None, n_grid: int = 50) -> dict:
    """Median and IQR of best-so-far per timestep, plus Welch's test at a budget.

    ``grid`` defaults to ``n_grid`` evenly spaced points up to the smallest
    final timestep shared by all runs.
    """
    group_a = [Path(d) for d in group_a]
    group_b = [Path(d) for d in group_b] if group_b else []
    if not group_a:
        raise ValueError("group A is empty")
    env = _check_same_env(group_a + group_b)
    ma = [read_metrics(d) for d in group_a]
    mb = [read_metrics(d) for d in group_b]
    if grid is None:
        lo = max(m["timesteps_cumulative"][0] for m in ma + mb)
        hi = min(m["timesteps_cumulative"][-1] for m in ma + mb)
        grid = np.linspace(lo, max(lo, hi), n_grid)
    grid = np.asarray(grid, dtype=np.float64)
    out = {"env": env, "grid": grid, "a": _summary(np.array([interpolate_curve(m, grid) for m in ma]))}
    if mb:
        out["b"] = _summary(np.array([interpolate_curve(m, grid) for m in mb]))
    if at_timesteps is not None:
        va = [best_so_far_at(m, at_timesteps) for m in ma]
        out["a_at"] = {"values": va, "median": float(np.median(va))}
        if mb:
            vb = [best_so_far_at(m, at_timesteps) for m in mb]
            out["b_at"] = {"values": vb, "median": float(np.median(vb))}
            out["welch"] = welch_t_test(va, vb)
    return out


def lambda_improvement_report(run_dirs) -> dict[float, float]:
    """Mean normalized one-step change in evaluation return after each lambda.

    For a run with evaluation returns ``R_t`` and lambda ``lam_t`` chosen at
    iteration t, the change ``(R_{t+1} - R_t) / (max R - min R)`` is credited to
    ``lam_t``; changes are pooled over iterations and runs. A run whose returns
    never vary contributes zeros.
    """
    pooled: dict[float, list[float]] = defaultdict(list)
    n_runs = 0
    for d in run_dirs:
        if read_run_config(d).get("mode") not in ("rp1", "rp1_no_earlystop", "rp1_statevar"):
            continue
        n_runs += 1
        m = read_metrics(d)
        lam, ret = m["lambda"], m["eval_return_mean"]
        span = float(np.nanmax(ret) - np.nanmin(ret))
        for t in range(len(ret) - 1):
            if math.isnan(lam[t]):
                continue
            delta = (ret[t + 1] - ret[t]) / span if span > 0 else 0.0
            pooled[float(lam[t])].append(float(delta))
    if n_runs == 0:
        raise ValueError("no rp1 runs with lambda logs")
    return {k: float(np.mean(v)) for k, v in sorted(pooled.items())}
