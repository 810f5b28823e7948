"""Aggregate statistics over seeds and tasks.

Confidence intervals are Student-t intervals over seeds. Scores are min-max
normalised per task before anything is averaged across tasks.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np
from scipy import stats

N_EVAL_POINTS = 201
FINAL_WINDOW = 10


def mean_and_ci(samples, confidence=0.95):
    """``(mean, lo, hi)`` with half-width ``t_{(1+c)/2, n-1} * s / sqrt(n)``.

    One sample, or zero spread, gives a zero-width interval.
    """
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size == 0:
        raise ValueError("mean_and_ci needs at least one sample")
    m = float(x.mean())
    if x.size == 1:
        return m, m, m
    s = float(x.std(ddof=1))
    half = float(stats.t.ppf(0.5 + confidence / 2.0, x.size - 1)) * s / np.sqrt(x.size)
    return m, m - half, m + half


def minmax_normalize(scores):
    """Map scores of one task onto ``[0, 1]``; a constant task maps to zeros."""
    x = np.asarray(scores, dtype=np.float64)
    lo, hi = x.min(), x.max()
    if hi == lo:
        return np.zeros_like(x)
    return (x - lo) / (hi - lo)


def _poi_single(x, y):
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    gt = (x[:, None] > y[None, :]).sum()
    eq = (x[:, None] == y[None, :]).sum()
    return (gt + 0.5 * eq) / (x.size * y.size)


def probability_of_improvement(X, Y):
    """Chance that a run of X beats a run of Y, ties counted half, averaged over tasks.

    ``X`` and ``Y`` are either one sequence of scores (a single task) or a list
    of per-task sequences of equal task count.
    """
    X_tasks = _as_tasks(X)
    Y_tasks = _as_tasks(Y)
    if len(X_tasks) != len(Y_tasks):
        raise ValueError(f"task count differs: {len(X_tasks)} vs {len(Y_tasks)}")
    return float(np.mean([_poi_single(x, y) for x, y in zip(X_tasks, Y_tasks)]))


def _as_tasks(scores):
    if len(scores) and np.ndim(scores[0]) > 0:
        return [np.asarray(s, dtype=np.float64) for s in scores]
    return [np.asarray(scores, dtype=np.float64)]


def final_score(returns, window=FINAL_WINDOW):
    """Mean return over the last ``window`` evaluation points."""
    r = np.asarray(returns, dtype=np.float64)
    return float(r[-window:].mean())


@dataclass
class MetricSeries:
    """Evaluation curve of one task: ``returns[seed, point]`` at ``steps[point]``."""

    steps: np.ndarray
    returns: np.ndarray

    def __post_init__(self):
        self.steps = np.asarray(self.steps)
        self.returns = np.atleast_2d(np.asarray(self.returns, dtype=np.float64))
        if self.returns.shape[1] != len(self.steps):
            raise ValueError("returns must be (n_seeds, n_points) matching steps")

    def summary(self, confidence=0.95):
        rows = [mean_and_ci(self.returns[:, j], confidence) for j in range(len(self.steps))]
        return np.asarray(rows)


def sample_efficiency_curve(tasks, confidence=0.95, bounds=None):
    """Normalised curve averaged over tasks, with a CI over seeds.

    ``tasks`` is a list of :class:`MetricSeries` sharing step indices and seed
    count. Each task is min-max normalised over all its seeds and points (or
    with explicit ``bounds[i] = (lo, hi)``), averaged across tasks per seed,
    then summarised over seeds. Returns ``(steps, table)`` with table columns
    ``mean, lo, hi``.
    """
    if not tasks:
        raise ValueError("no tasks given")
    steps = tasks[0].steps
    per_task = []
    for i, series in enumerate(tasks):
        if len(series.steps) != len(steps):
            raise ValueError("all tasks must share evaluation indices")
        r = series.returns
        if bounds is not None:
            lo, hi = bounds[i]
            norm = (r - lo) / (hi - lo) if hi != lo else np.zeros_like(r)
        else:
            norm = minmax_normalize(r)
        per_task.append(norm)
    per_seed = np.mean(per_task, axis=0)  # (n_seeds, n_points)
    table = np.asarray([mean_and_ci(per_seed[:, j], confidence) for j in range(len(steps))])
    return steps, table


def curve_to_csv(steps, table) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["step", "mean", "ci_lo", "ci_hi"])
    for s, (m, lo, hi) in zip(steps, table):
        w.writerow([int(s), repr(float(m)), repr(float(lo)), repr(float(hi))])
    return buf.getvalue()
