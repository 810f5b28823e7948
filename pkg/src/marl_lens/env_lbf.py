"""Level-Based Foraging grid world.

Agents and food carry levels. A food item is collected when the agents that
stand next to it (4-neighbourhood) and choose ``LOAD`` have a combined level
at least as high as the food's. Rewards are normalised so that a perfect
episode returns 1 in total.

Coordinates are ``(x, y)`` with ``y`` growing downwards, so ``UP`` is ``y - 1``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from ._grid import resolve_moves
from .errors import GridTooSmall, InvalidAction, SteppedAfterDone, ShapeMismatch
from .scenario import EnvKind, Scenario, parse_scenario

DEFAULT_HORIZON = 50
MAX_AGENT_LEVEL = 3


class Action(IntEnum):
    NOOP = 0
    UP = 1
    DOWN = 2
    LEFT = 3
    RIGHT = 4
    LOAD = 5


_DELTAS = np.array([(0, 0), (0, -1), (0, 1), (-1, 0), (1, 0), (0, 0)], dtype=np.int64)


@dataclass
class LbfState:
    scenario: Scenario
    horizon: int
    agent_pos: np.ndarray
    agent_level: np.ndarray
    food_pos: np.ndarray
    food_level: np.ndarray
    food_present: np.ndarray
    rng: np.random.Generator
    step_count: int = 0
    done: bool = False
    food_total: int = field(default=0)

    @property
    def n_agents(self):
        return len(self.agent_pos)

    @property
    def all_collected(self):
        return not bool(self.food_present.any())

    def to_record(self) -> str:
        """One-line JSON snapshot, including the generator state."""
        return json.dumps(
            {
                "env": "lbf",
                "scenario": self.scenario.name,
                "horizon": self.horizon,
                "step_count": self.step_count,
                "done": self.done,
                "agents": [
                    {"pos": [int(x), int(y)], "level": int(lv)}
                    for (x, y), lv in zip(self.agent_pos, self.agent_level)
                ],
                "foods": [
                    {"pos": [int(x), int(y)], "level": int(lv), "present": bool(p)}
                    for (x, y), lv, p in zip(self.food_pos, self.food_level, self.food_present)
                ],
                "rng": self.rng.bit_generator.state,
            },
            sort_keys=True,
        )

    @classmethod
    def from_record(cls, line: str) -> "LbfState":
        d = json.loads(line)
        rng = np.random.default_rng()
        rng.bit_generator.state = d["rng"]
        foods = d["foods"]
        agents = d["agents"]
        food_level = np.array([f["level"] for f in foods], dtype=np.int64)
        return cls(
            scenario=parse_scenario(d["scenario"]),
            horizon=d["horizon"],
            agent_pos=np.array([a["pos"] for a in agents], dtype=np.int64).reshape(-1, 2),
            agent_level=np.array([a["level"] for a in agents], dtype=np.int64),
            food_pos=np.array([f["pos"] for f in foods], dtype=np.int64).reshape(-1, 2),
            food_level=food_level,
            food_present=np.array([f["present"] for f in foods], dtype=bool),
            rng=rng,
            step_count=d["step_count"],
            done=d["done"],
            food_total=int(food_level.sum()),
        )


def obs_size(scenario: Scenario) -> int:
    return 3 * (scenario.n_agents + scenario.n_food)


def lbf_reset(scenario: Scenario, seed, horizon: int = DEFAULT_HORIZON):
    """Sample a fresh episode. Returns ``(state, obs)`` with obs shaped ``(n, D)``."""
    if scenario.env_kind != EnvKind.LBF:
        raise ValueError(f"{scenario.name} is not a foraging scenario")
    w, h = scenario.grid_w, scenario.grid_h
    n, m = scenario.n_agents, scenario.n_food
    if n + m > w * h:
        raise GridTooSmall(f"{n} agents + {m} food do not fit on a {w}x{h} grid")

    rng = np.random.default_rng(seed)
    cells = rng.choice(w * h, size=n + m, replace=False)
    pos = np.stack([cells % w, cells // w], axis=1).astype(np.int64)
    agent_level = rng.integers(1, MAX_AGENT_LEVEL + 1, size=n).astype(np.int64)
    cap = int(agent_level.sum())
    if scenario.coop:
        food_level = np.full(m, cap, dtype=np.int64)
    else:
        food_level = rng.integers(1, cap + 1, size=m).astype(np.int64)

    state = LbfState(
        scenario=scenario,
        horizon=horizon,
        agent_pos=pos[:n].copy(),
        agent_level=agent_level,
        food_pos=pos[n:].copy(),
        food_level=food_level,
        food_present=np.ones(m, dtype=bool),
        rng=rng,
        food_total=int(food_level.sum()),
    )
    return state, observe_all(state)


def lbf_step(state: LbfState, actions):
    """Advance ``state`` in place by one joint action.

    Returns ``(state, obs, rewards, done)``.
    """
    if state.done:
        raise SteppedAfterDone("episode is over; call lbf_reset")
    actions = np.asarray(actions)
    n = state.n_agents
    if actions.shape != (n,):
        raise ShapeMismatch(f"expected {n} actions, got shape {actions.shape}")
    if not np.issubdtype(actions.dtype, np.integer) or ((actions < 0) | (actions > 5)).any():
        raise InvalidAction(f"actions must be integers in 0..5, got {actions.tolist()}")

    sc = state.scenario
    food_cells = {
        (int(x), int(y))
        for (x, y), p in zip(state.food_pos, state.food_present)
        if p
    }
    targets = state.agent_pos + _DELTAS[actions]
    state.agent_pos = resolve_moves(
        state.agent_pos, targets, sc.grid_w, sc.grid_h,
        blocked=lambda i, x, y: (x, y) in food_cells,
    )

    rewards = np.zeros(n, dtype=np.float64)
    loading = actions == Action.LOAD
    for f in np.flatnonzero(state.food_present):
        dist = np.abs(state.agent_pos - state.food_pos[f]).sum(axis=1)
        loaders = np.flatnonzero(loading & (dist == 1))
        if len(loaders) == 0:
            continue
        loader_levels = state.agent_level[loaders]
        if loader_levels.sum() < state.food_level[f]:
            continue
        state.food_present[f] = False
        rewards[loaders] += (
            state.food_level[f] * loader_levels / (loader_levels.sum() * state.food_total)
        )

    state.step_count += 1
    state.done = state.all_collected or state.step_count >= state.horizon
    return state, observe_all(state), rewards, state.done


def lbf_observe(state: LbfState, agent_index: int) -> np.ndarray:
    """Observation of one agent.

    Layout: one ``(x, y, level)`` triple per entity. The first triple is the
    agent itself in absolute coordinates; the other agents (index order, self
    skipped) and then the food items follow, relative to the observer. Entities
    that are out of sight or already collected read ``(0, 0, 0)``.
    """
    n = state.n_agents
    if not 0 <= agent_index < n:
        raise IndexError(f"agent index {agent_index} out of range for {n} agents")
    sight = state.scenario.sight
    me = state.agent_pos[agent_index]
    out = np.zeros((n + len(state.food_pos), 3), dtype=np.float32)
    out[0] = (me[0], me[1], state.agent_level[agent_index])

    others = [j for j in range(n) if j != agent_index]
    rel = np.concatenate([state.agent_pos[others] - me, state.food_pos - me])
    levels = np.concatenate([state.agent_level[others], state.food_level])
    present = np.concatenate([np.ones(len(others), dtype=bool), state.food_present])
    if sight is not None:
        present &= np.abs(rel).max(axis=1) <= sight
    out[1:][present] = np.column_stack([rel, levels])[present]
    return out.reshape(-1)


def observe_all(state: LbfState) -> np.ndarray:
    return np.stack([lbf_observe(state, i) for i in range(state.n_agents)])


class LbfEnv:
    """Stateful wrapper used by the training loops."""

    n_actions = len(Action)
    shared_reward = False

    def __init__(self, scenario, horizon: int = DEFAULT_HORIZON):
        if isinstance(scenario, str):
            scenario = parse_scenario(scenario)
        if scenario.env_kind != EnvKind.LBF:
            raise ValueError(f"{scenario.name} is not a foraging scenario")
        self.scenario = scenario
        self.horizon = horizon
        self.n_agents = scenario.n_agents
        self.obs_dim = obs_size(scenario)
        self.state = None

    def reset(self, seed):
        self.state, obs = lbf_reset(self.scenario, seed, self.horizon)
        return obs

    def step(self, actions):
        _, obs, rewards, done = lbf_step(self.state, actions)
        return obs, rewards, done

    @property
    def terminated(self):
        """True when the episode ended by collecting every food item."""
        return self.state.all_collected

    def team_reward(self, rewards):
        return float(np.sum(rewards))
