"""Exponential Weights over a grid of exploration temperatures.

The selector keeps one cumulative score per grid value. Sampling uses the
softmax of the scores mixed with a uniform distribution; after the chosen
value's policy has collected data, its score is increased by the
importance-weighted normalized generalization error. Larger errors therefore
make the chosen value *more* likely to be drawn again.
"""
from __future__ import annotations

import csv
import os
from collections import deque
from dataclasses import dataclass

import numpy as np

DEFAULT_GRID = (0.0, 0.125, 0.25, 0.375, 0.5)
SCORE_CLAMP = 50.0


@dataclass
class SelectorConfig:
    grid: tuple = DEFAULT_GRID
    eta: float = 0.2
    epsilon: float = 0.1
    history: int = 5


class LambdaSelector:
    def __init__(self, grid=DEFAULT_GRID, eta: float = 0.2, epsilon: float = 0.1, history: int = 5):
        grid = tuple(float(g) for g in grid)
        if not grid:
            raise ValueError("empty lambda grid")
        if any(not 0.0 <= g <= 0.5 for g in grid):
            raise ValueError("lambda grid values must lie in [0, 0.5]")
        if eta <= 0:
            raise ValueError("eta must be positive")
        if not 0.0 <= epsilon < 1.0:
            raise ValueError("epsilon must lie in [0, 1)")
        self.grid = grid
        self.eta = float(eta)
        self.epsilon = float(epsilon)
        self.scores = np.zeros(len(grid))
        self.g_history: deque = deque(maxlen=history)
        self.l_val: float | None = None
        self.last_probs: np.ndarray | None = None

    @classmethod
    def from_config(cls, config: SelectorConfig) -> "LambdaSelector":
        return cls(config.grid, config.eta, config.epsilon, config.history)

    @property
    def k(self) -> int:
        return len(self.grid)

    def probabilities(self) -> np.ndarray:
        z = self.scores - self.scores.max()
        w = np.exp(z)
        soft = w / w.sum()
        return (1.0 - self.epsilon) * soft + self.epsilon / self.k

    def sample_lambda(self, rng: np.random.Generator) -> tuple[int, float]:
        p = self.probabilities()
        self.last_probs = p
        i = int(rng.choice(self.k, p=p))
        return i, self.grid[i]

    def normalize_loss(self, g: float, l_val: float | None = None) -> float:
        """``(g - mean(recent g)) / l_val``, then record ``g`` in the history.

        With fewer than ``history`` past values the mean runs over those present.
        """
        if l_val is not None:
            self.l_val = float(l_val)
        if self.l_val is None or self.l_val <= 0:
            raise ValueError(f"validation loss must be positive, got {self.l_val}")
        if not self.g_history:
            raise ValueError("no generalization-error history to normalize against")
        g_hat = (float(g) - float(np.mean(self.g_history))) / self.l_val
        self.g_history.append(float(g))
        return g_hat

    def record(self, g: float) -> None:
        """Append ``g`` to the history without normalizing."""
        self.g_history.append(float(g))

    def update(self, index: int, g_hat: float, probs=None) -> None:
        """Importance-weighted score increment for the chosen index only.

        ``probs`` defaults to the distribution used at the most recent
        :meth:`sample_lambda` call (or the current one if none).
        """
        if not 0 <= index < self.k:
            raise IndexError(f"index {index} out of range")
        p = self.last_probs if probs is None else np.asarray(probs, dtype=np.float64)
        if p is None:
            p = self.probabilities()
        if p[index] <= 0:
            raise ValueError("chosen index has zero probability")
        self.scores[index] = np.clip(self.scores[index] + self.eta * g_hat / p[index], -SCORE_CLAMP, SCORE_CLAMP)

    # -- persistence --------------------------------------------------------

    def state_row(self, iteration: int) -> dict:
        p = self.probabilities()
        row = {"iteration": iteration}
        row.update({f"score_{i}": repr(float(s)) for i, s in enumerate(self.scores)})
        row.update({f"p_{i}": repr(float(x)) for i, x in enumerate(p)})
        row["g_history"] = ";".join(repr(g) for g in self.g_history)
        row["l_val"] = "" if self.l_val is None else repr(self.l_val)
        return row

    def append_state(self, path, iteration: int) -> None:
        row = self.state_row(iteration)
        new = not os.path.exists(path)
        with open(path, "a", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(row))
            if new:
                w.writeheader()
            w.writerow(row)

    @classmethod
    def restore(cls, path, config: SelectorConfig) -> "LambdaSelector":
        """Rebuild the selector from the last row of a state file."""
        sel = cls.from_config(config)
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            return sel
        last = rows[-1]
        sel.scores = np.array([float(last[f"score_{i}"]) for i in range(sel.k)])
        if last["g_history"]:
            sel.g_history.extend(float(g) for g in last["g_history"].split(";"))
        sel.l_val = float(last["l_val"]) if last["l_val"] else None
        return sel
