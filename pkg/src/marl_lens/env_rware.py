"""Multi-robot warehouse grid world.

Robots have a heading and move forward, turn, or toggle load. Shelves sit on
rack cells; a fixed number of them (one per robot) is requested at any time.
Carrying a requested shelf onto a goal cell pays +1 to every robot and a new
shelf is requested in its place. Nothing else is rewarded.

The rack layout is generated from the grid size: pairs of rack columns
separated by single corridors, horizontal bands of at most 8 rack rows, two
free rows above the bottom edge, and two goal cells in the middle of the
bottom edge.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from ._grid import resolve_moves
from .errors import InvalidAction, ShapeMismatch, SteppedAfterDone, UnsupportedSizeClass
from .scenario import EnvKind, Scenario, parse_scenario

DEFAULT_HORIZON = 500

EMPTY, RACK, GOAL = 0, 1, 2
MAX_BAND = 8


class Action(IntEnum):
    NOOP = 0
    FORWARD = 1
    TURN_LEFT = 2
    TURN_RIGHT = 3
    TOGGLE_LOAD = 4


class Heading(IntEnum):
    N = 0
    E = 1
    S = 2
    W = 3


_HEADING_DELTA = np.array([(0, -1), (1, 0), (0, 1), (-1, 0)], dtype=np.int64)

CELL_FEATURES = 8  # wall, agent, heading one-hot (4), shelf, requested
SELF_FEATURES = 5  # carrying, heading one-hot (4)


def rack_layout(grid_w: int, grid_h: int) -> np.ndarray:
    """Cell-kind grid of shape ``(grid_h, grid_w)``; index as ``layout[y, x]``."""
    if grid_w < 4 or grid_h < 5:
        raise ValueError(f"warehouse grid {grid_w}x{grid_h} is too small for a rack layout")
    layout = np.full((grid_h, grid_w), EMPTY, dtype=np.int8)
    cols = []
    k = 0
    while 2 + 3 * k <= grid_w - 2:
        cols += [1 + 3 * k, 2 + 3 * k]
        k += 1
    last_rack_row = grid_h - 4
    y = 1
    while y <= last_rack_row:
        band_end = min(y + MAX_BAND - 1, last_rack_row)
        layout[y : band_end + 1, cols] = RACK
        y = band_end + 2
    mid = grid_w // 2
    layout[grid_h - 1, [mid - 1, mid]] = GOAL
    return layout


@dataclass
class RwareState:
    scenario: Scenario
    horizon: int
    layout: np.ndarray
    agent_pos: np.ndarray
    agent_dir: np.ndarray
    carrying: np.ndarray
    shelf_home: np.ndarray
    shelf_pos: np.ndarray
    requested: np.ndarray
    rng: np.random.Generator
    step_count: int = 0
    done: bool = False

    @property
    def n_agents(self):
        return len(self.agent_pos)

    @property
    def request_queue(self):
        return [int(i) for i in np.flatnonzero(self.requested)]

    def to_record(self) -> str:
        return json.dumps(
            {
                "env": "rware",
                "scenario": self.scenario.name,
                "horizon": self.horizon,
                "step_count": self.step_count,
                "done": self.done,
                "agents": [
                    {"pos": [int(p[0]), int(p[1])], "heading": Heading(int(d)).name,
                     "carrying": None if c < 0 else int(c)}
                    for p, d, c in zip(self.agent_pos, self.agent_dir, self.carrying)
                ],
                "shelves": [
                    {"home": [int(h[0]), int(h[1])], "pos": [int(p[0]), int(p[1])],
                     "requested": bool(r)}
                    for h, p, r in zip(self.shelf_home, self.shelf_pos, self.requested)
                ],
                "rng": self.rng.bit_generator.state,
            },
            sort_keys=True,
        )

    @classmethod
    def from_record(cls, line: str) -> "RwareState":
        d = json.loads(line)
        sc = parse_scenario(d["scenario"])
        rng = np.random.default_rng()
        rng.bit_generator.state = d["rng"]
        agents, shelves = d["agents"], d["shelves"]
        return cls(
            scenario=sc,
            horizon=d["horizon"],
            layout=rack_layout(sc.grid_w, sc.grid_h),
            agent_pos=np.array([a["pos"] for a in agents], dtype=np.int64),
            agent_dir=np.array([Heading[a["heading"]] for a in agents], dtype=np.int64),
            carrying=np.array([-1 if a["carrying"] is None else a["carrying"] for a in agents],
                              dtype=np.int64),
            shelf_home=np.array([s["home"] for s in shelves], dtype=np.int64),
            shelf_pos=np.array([s["pos"] for s in shelves], dtype=np.int64),
            requested=np.array([s["requested"] for s in shelves], dtype=bool),
            rng=rng,
            step_count=d["step_count"],
            done=d["done"],
        )


def _check_scenario(scenario: Scenario):
    if scenario.env_kind != EnvKind.RWARE:
        raise ValueError(f"{scenario.name} is not a warehouse scenario")
    if scenario.size_class not in ("tiny", "small"):
        raise UnsupportedSizeClass(
            f"size class {scenario.size_class!r} has no known layout; use tiny or small"
        )


def obs_size(scenario: Scenario) -> int:
    return 9 * CELL_FEATURES + SELF_FEATURES


def rware_reset(scenario: Scenario, seed, horizon: int = DEFAULT_HORIZON):
    _check_scenario(scenario)
    w, h = scenario.grid_w, scenario.grid_h
    n = scenario.n_agents
    layout = rack_layout(w, h)
    rack_ys, rack_xs = np.nonzero(layout == RACK)
    shelf_home = np.stack([rack_xs, rack_ys], axis=1).astype(np.int64)
    free_ys, free_xs = np.nonzero(layout == EMPTY)
    if n > len(free_xs):
        raise ValueError(f"{n} robots do not fit in {len(free_xs)} free cells")
    if n > len(shelf_home):
        raise ValueError(f"cannot request {n} of {len(shelf_home)} shelves")

    rng = np.random.default_rng(seed)
    cells = rng.choice(len(free_xs), size=n, replace=False)
    agent_pos = np.stack([free_xs[cells], free_ys[cells]], axis=1).astype(np.int64)
    agent_dir = rng.integers(0, 4, size=n).astype(np.int64)
    requested = np.zeros(len(shelf_home), dtype=bool)
    requested[rng.choice(len(shelf_home), size=n, replace=False)] = True

    state = RwareState(
        scenario=scenario,
        horizon=horizon,
        layout=layout,
        agent_pos=agent_pos,
        agent_dir=agent_dir,
        carrying=np.full(n, -1, dtype=np.int64),
        shelf_home=shelf_home,
        shelf_pos=shelf_home.copy(),
        requested=requested,
        rng=rng,
    )
    return state, observe_all(state)


def _shelf_at(state: RwareState):
    return {(int(p[0]), int(p[1])): s for s, p in enumerate(state.shelf_pos)}


def rware_step(state: RwareState, actions):
    """Advance ``state`` in place. Returns ``(state, obs, rewards, done)``."""
    if state.done:
        raise SteppedAfterDone("episode is over; call rware_reset")
    actions = np.asarray(actions)
    n = state.n_agents
    if actions.shape != (n,):
        raise ShapeMismatch(f"expected {n} actions, got shape {actions.shape}")
    if not np.issubdtype(actions.dtype, np.integer) or ((actions < 0) | (actions > 4)).any():
        raise InvalidAction(f"actions must be integers in 0..4, got {actions.tolist()}")

    state.agent_dir = np.where(actions == Action.TURN_LEFT, (state.agent_dir - 1) % 4,
                               state.agent_dir)
    state.agent_dir = np.where(actions == Action.TURN_RIGHT, (state.agent_dir + 1) % 4,
                               state.agent_dir)

    forward = actions == Action.FORWARD
    targets = state.agent_pos + _HEADING_DELTA[state.agent_dir] * forward[:, None]
    shelf_at = _shelf_at(state)
    carrying = state.carrying

    def blocked(i, x, y):
        # A loaded robot cannot pass under a rack cell that holds a shelf.
        return carrying[i] >= 0 and (x, y) in shelf_at

    old_pos = state.agent_pos
    state.agent_pos = resolve_moves(old_pos, targets, state.scenario.grid_w,
                                    state.scenario.grid_h, blocked=blocked)
    moved = (state.agent_pos != old_pos).any(axis=1)
    for i in np.flatnonzero(carrying >= 0):
        state.shelf_pos[carrying[i]] = state.agent_pos[i]

    shelf_at = _shelf_at(state)
    for i in np.flatnonzero(actions == Action.TOGGLE_LOAD):
        x, y = (int(v) for v in state.agent_pos[i])
        if carrying[i] < 0:
            s = shelf_at.get((x, y))
            if s is not None and s not in carrying:
                carrying[i] = s
        elif state.layout[y, x] == RACK:
            # Drop only on a rack cell that holds no other shelf.
            others = [s for s, p in enumerate(state.shelf_pos)
                      if s != carrying[i] and p[0] == x and p[1] == y]
            if not others:
                carrying[i] = -1

    deliveries = 0
    for i in range(n):
        s = carrying[i]
        if s < 0 or not moved[i] or not state.requested[s]:
            continue
        x, y = state.agent_pos[i]
        if state.layout[y, x] != GOAL:
            continue
        deliveries += 1
        state.requested[s] = False
        candidates = [k for k in range(len(state.requested))
                      if not state.requested[k] and k not in carrying]
        state.requested[state.rng.choice(candidates)] = True

    state.step_count += 1
    state.done = state.step_count >= state.horizon
    rewards = np.full(n, float(deliveries))
    return state, observe_all(state), rewards, state.done


def rware_observe(state: RwareState, agent_index: int) -> np.ndarray:
    """3x3 window around the robot (row-major, north first) plus self features.

    Per cell: ``wall, agent, heading N/E/S/W, shelf, requested``. Cells beyond
    the grid edge read as walls. Self: ``carrying, heading N/E/S/W``.
    """
    n = state.n_agents
    if not 0 <= agent_index < n:
        raise IndexError(f"agent index {agent_index} out of range for {n} agents")
    w, h = state.scenario.grid_w, state.scenario.grid_h
    cx, cy = (int(v) for v in state.agent_pos[agent_index])
    agent_at = {(int(p[0]), int(p[1])): j for j, p in enumerate(state.agent_pos)}
    shelf_at = _shelf_at(state)
    cells = np.zeros((9, CELL_FEATURES), dtype=np.float32)
    k = 0
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            x, y = cx + dx, cy + dy
            if not (0 <= x < w and 0 <= y < h):
                cells[k, 0] = 1.0
            else:
                j = agent_at.get((x, y))
                if j is not None:
                    cells[k, 1] = 1.0
                    cells[k, 2 + int(state.agent_dir[j])] = 1.0
                s = shelf_at.get((x, y))
                if s is not None:
                    cells[k, 6] = 1.0
                    cells[k, 7] = float(state.requested[s])
            k += 1
    me = np.zeros(SELF_FEATURES, dtype=np.float32)
    me[0] = float(state.carrying[agent_index] >= 0)
    me[1 + int(state.agent_dir[agent_index])] = 1.0
    return np.concatenate([cells.reshape(-1), me])


def observe_all(state: RwareState) -> np.ndarray:
    return np.stack([rware_observe(state, i) for i in range(state.n_agents)])


class RwareEnv:
    n_actions = len(Action)
    shared_reward = True

    def __init__(self, scenario, horizon: int = DEFAULT_HORIZON):
        if isinstance(scenario, str):
            scenario = parse_scenario(scenario)
        _check_scenario(scenario)
        self.scenario = scenario
        self.horizon = horizon
        self.n_agents = scenario.n_agents
        self.obs_dim = obs_size(scenario)
        self.state = None

    def reset(self, seed):
        self.state, obs = rware_reset(self.scenario, seed, self.horizon)
        return obs

    def step(self, actions):
        _, obs, rewards, done = rware_step(self.state, actions)
        return obs, rewards, done

    @property
    def terminated(self):
        # Episodes only end at the horizon.
        return False

    def team_reward(self, rewards):
        return float(rewards[0])
