"""Behavioural diagnostics: policy entropy, update divergence, task switching.

All functions work on probability arrays whose last axis indexes actions, so
they apply equally to one distribution, one per agent, or a whole training
batch of shape ``(B, T, n_agents, n_actions)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyLog, ShapeMismatch

PROB_FLOOR = 1e-8
TASK_SWITCH_MODES = ("paper_exact", "frequency_normalized")


def policy_entropy(probs):
    """Shannon entropy in nats along the last axis, with ``0 log 0 = 0``."""
    p = np.asarray(probs, dtype=np.float64)
    logp = np.log(np.where(p > 0, p, 1.0))
    return 0.0 - (p * logp).sum(axis=-1)  # avoids -0.0 for deterministic policies


def update_divergence(current, old):
    """KL(current || old) = cross-entropy(current, old) - entropy(current).

    Both distributions are floored at ``1e-8`` before taking logs, which keeps
    the value finite when ``old`` puts zero mass on an action ``current`` uses.
    The two terms are combined as ``sum p (log p - log q)`` so that identical
    inputs give exactly zero.
    """
    p = np.asarray(current, dtype=np.float64)
    q = np.asarray(old, dtype=np.float64)
    if p.shape != q.shape:
        raise ShapeMismatch(f"action distributions differ in shape: {p.shape} vs {q.shape}")
    lp = np.log(np.maximum(p, PROB_FLOOR))
    lq = np.log(np.maximum(q, PROB_FLOOR))
    return (p * (lp - lq)).sum(axis=-1)


def cross_entropy(current, old):
    p = np.asarray(current, dtype=np.float64)
    q = np.asarray(old, dtype=np.float64)
    return -(p * np.log(np.maximum(q, PROB_FLOOR))).sum(axis=-1)


def softmax(x, axis=-1):
    x = np.asarray(x, dtype=np.float64)
    # ufunc reductions directly; the ndarray method wrappers dominate on small inputs
    e = np.exp(x - np.maximum.reduce(x, axis=axis, keepdims=True))
    return e / np.add.reduce(e, axis=axis, keepdims=True)


def epsilon_greedy_probs(q_values, epsilon):
    q = np.asarray(q_values, dtype=np.float64)
    n_actions = q.shape[-1]
    probs = np.full(q.shape, epsilon / n_actions)
    best = np.argmax(q, axis=-1)
    np.put_along_axis(probs, best[..., None], 1.0 - epsilon + epsilon / n_actions, axis=-1)
    return probs


def extract_policy(learner_kind, outputs, evaluation_epsilon=0.0):
    """Action distribution implied by a network's outputs.

    ``learner_kind`` is ``"pg"`` (outputs are actor logits, softmaxed) or
    ``"q"`` (outputs are Q-values, turned into the epsilon-greedy policy with
    ``evaluation_epsilon``).
    """
    if learner_kind == "pg":
        return softmax(outputs)
    if learner_kind == "q":
        return epsilon_greedy_probs(outputs, evaluation_epsilon)
    raise ValueError(f"unknown learner kind {learner_kind!r}")


@dataclass
class TaskSwitchProfile:
    counts: np.ndarray   # (n_agents, n_actions)
    probs: np.ndarray    # (n_agents, n_actions)
    mode: str
    n_steps: list = field(default_factory=list)


def task_switch_profile(action_log, n_actions, mode="paper_exact"):
    """Softmax of each agent's accumulated one-hot actions.

    ``action_log`` is a ``(T, n_agents)`` array of action indices, or a list
    with one action sequence per agent. In ``paper_exact`` mode the softmax is
    taken over raw counts; ``frequency_normalized`` divides the counts by the
    number of logged steps first, which avoids saturation on long logs.
    """
    if mode not in TASK_SWITCH_MODES:
        raise ValueError(f"unknown task switching mode {mode!r}")
    if isinstance(action_log, np.ndarray):
        if action_log.ndim != 2:
            raise ShapeMismatch("action_log array must be (T, n_agents)")
        T, n = action_log.shape
        if T == 0 or n == 0:
            raise EmptyLog("task switching needs at least one logged action per agent")
        log = action_log.astype(np.int64, copy=False)
        if log.min() < 0 or log.max() >= n_actions:
            raise ShapeMismatch(f"action index outside 0..{n_actions - 1}")
        # one bincount over agent-offset indices instead of one per agent
        flat = (log + n_actions * np.arange(n)).ravel()
        counts = np.bincount(flat, minlength=n * n_actions).reshape(n, n_actions)
        n_steps = [int(T)] * n
    else:
        per_agent = [np.asarray(seq, dtype=np.int64) for seq in action_log]
        if not per_agent or any(len(seq) == 0 for seq in per_agent):
            raise EmptyLog("task switching needs at least one logged action per agent")
        if any(seq.min() < 0 or seq.max() >= n_actions for seq in per_agent):
            raise ShapeMismatch(f"action index outside 0..{n_actions - 1}")
        counts = np.stack([np.bincount(seq, minlength=n_actions) for seq in per_agent])
        n_steps = [int(len(seq)) for seq in per_agent]
    scores = counts.astype(np.float64)
    if mode == "frequency_normalized":
        scores = scores / np.asarray(n_steps, dtype=np.float64)[:, None]
    return TaskSwitchProfile(counts=counts, probs=softmax(scores), mode=mode, n_steps=n_steps)


def mean_over_agents(values):
    return float(np.mean(np.asarray(values, dtype=np.float64)))
