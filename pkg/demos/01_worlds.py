"""
Scenario names and the two grid worlds
======================================

Scenario names encode everything about a task. Parsing one gives the grid,
the number of agents and food, and flags such as cooperative mode.
"""

import numpy as np

from marl_lens import LbfEnv, RwareEnv, parse_scenario
from marl_lens.env_rware import rack_layout

# A cooperative foraging task: every food item needs all agents to load it.
sc = parse_scenario("Foraging-8x8-2p-2f-coop-v2")
print(sc)
print("renders back to", sc.name)

# Step it with random actions until the horizon (50 steps) ends the episode.
env = LbfEnv(sc)
obs = env.reset(seed=0)
print("observation shape", obs.shape, "levels", env.state.agent_level, env.state.food_level)
rng = np.random.default_rng(0)
total, done = 0.0, False
while not done:
    obs, rewards, done = env.step(rng.integers(env.n_actions, size=env.n_agents))
    total += env.team_reward(rewards)
print("random team return", total)

# The warehouse layout is generated from the grid size.
# '#' rack, 'G' goal, '.' corridor.
tiny = parse_scenario("rware-tiny-2ag-v1")
layout = rack_layout(tiny.grid_w, tiny.grid_h)
for row in layout:
    print("".join(".#G"[c] for c in row))

# Robots are rewarded only for delivering requested shelves, so random play
# in the warehouse almost never scores.
env = RwareEnv(tiny)
env.reset(seed=1)
done, deliveries = False, 0.0
while not done:
    _, rewards, done = env.step(rng.integers(env.n_actions, size=env.n_agents))
    deliveries += env.team_reward(rewards)
print("random deliveries in 500 steps:", deliveries)
