import numpy as np
import pytest

from marl_lens.env_lbf import (Action, LbfEnv, LbfState, lbf_observe, lbf_reset, lbf_step,
                               obs_size, observe_all)
from marl_lens.errors import GridTooSmall, InvalidAction, SteppedAfterDone
from marl_lens.scenario import parse_scenario

COOP = parse_scenario("Foraging-8x8-2p-2f-coop-v2")


def make_state(scenario, agents, foods, horizon=50):
    """State with agents/foods given as ``((x, y), level)`` pairs."""
    state, _ = lbf_reset(scenario, 0, horizon)
    state.agent_pos = np.array([p for p, _ in agents], dtype=np.int64)
    state.agent_level = np.array([lv for _, lv in agents], dtype=np.int64)
    state.food_pos = np.array([p for p, _ in foods], dtype=np.int64).reshape(-1, 2)
    state.food_level = np.array([lv for _, lv in foods], dtype=np.int64)
    state.food_present = np.ones(len(foods), dtype=bool)
    state.food_total = int(state.food_level.sum())
    return state


@pytest.mark.parametrize("seed", range(20))
def test_coop_food_level_is_sum_of_agent_levels(seed):
    state, obs = lbf_reset(COOP, seed)
    assert (state.food_level == state.agent_level.sum()).all()
    assert obs.shape == (2, obs_size(COOP))


@pytest.mark.parametrize("seed", range(20))
def test_reset_places_on_distinct_cells(seed):
    sc = parse_scenario("Foraging-15x15-4p-5f-v2")
    state, _ = lbf_reset(sc, seed)
    cells = {tuple(p) for p in state.agent_pos} | {tuple(p) for p in state.food_pos}
    assert len(cells) == 9
    assert set(state.agent_level.tolist()) <= {1, 2, 3}
    assert (state.food_level >= 1).all() and (state.food_level <= state.agent_level.sum()).all()


def test_reset_deterministic():
    a, oa = lbf_reset(COOP, 5)
    b, ob = lbf_reset(COOP, 5)
    assert a.to_record() == b.to_record()
    assert np.array_equal(oa, ob)


def test_grid_too_small():
    with pytest.raises(GridTooSmall):
        lbf_reset(parse_scenario("Foraging-1x1-2p-1f-v2"), 0)


def test_joint_load_reward():
    sc = parse_scenario("Foraging-5x5-2p-2f-v2")
    # food (2,2) level 3 with loaders at (1,2) level 1 and (3,2) level 2; another food level 2.
    state = make_state(sc, [((1, 2), 1), ((3, 2), 2)], [((2, 2), 3), ((0, 0), 2)])
    _, _, rewards, done = lbf_step(state, np.array([Action.LOAD, Action.LOAD]))
    # r_i = 3 * level_i / (3 * 5)
    np.testing.assert_allclose(rewards, [1 / 5, 2 / 5])
    assert rewards.sum() == pytest.approx(3 / 5)
    assert not state.food_present[0] and state.food_present[1]
    assert not done


def test_single_weak_agent_cannot_load():
    sc = parse_scenario("Foraging-5x5-1p-1f-v2")
    state = make_state(sc, [((1, 2), 1)], [((2, 2), 3)])
    _, _, rewards, _ = lbf_step(state, np.array([Action.LOAD]))
    assert rewards.tolist() == [0.0]
    assert state.food_present[0]


def test_diagonal_is_not_adjacent():
    sc = parse_scenario("Foraging-5x5-1p-1f-v2")
    state = make_state(sc, [((1, 1), 3)], [((2, 2), 1)])
    _, _, rewards, _ = lbf_step(state, np.array([Action.LOAD]))
    assert rewards.sum() == 0


def test_noop_keeps_positions():
    state, _ = lbf_reset(COOP, 3)
    before = state.agent_pos.copy()
    _, _, rewards, _ = lbf_step(state, np.zeros(2, dtype=np.int64))
    assert np.array_equal(state.agent_pos, before)
    assert rewards.tolist() == [0.0, 0.0]


def test_collisions():
    sc = parse_scenario("Foraging-5x5-2p-1f-v2")
    # both target (2,2): both stay
    state = make_state(sc, [((1, 2), 1), ((3, 2), 1)], [((4, 4), 1)])
    lbf_step(state, np.array([Action.RIGHT, Action.LEFT]))
    assert state.agent_pos.tolist() == [[1, 2], [3, 2]]
    # swap is blocked
    state = make_state(sc, [((1, 2), 1), ((2, 2), 1)], [((4, 4), 1)])
    lbf_step(state, np.array([Action.RIGHT, Action.LEFT]))
    assert state.agent_pos.tolist() == [[1, 2], [2, 2]]
    # following a mover into its vacated cell works
    state = make_state(sc, [((1, 2), 1), ((2, 2), 1)], [((4, 4), 1)])
    lbf_step(state, np.array([Action.RIGHT, Action.RIGHT]))
    assert state.agent_pos.tolist() == [[2, 2], [3, 2]]
    # walls and food block
    state = make_state(sc, [((0, 0), 1), ((3, 4), 1)], [((4, 4), 1)])
    lbf_step(state, np.array([Action.UP, Action.RIGHT]))
    assert state.agent_pos.tolist() == [[0, 0], [3, 4]]


def test_errors():
    state, _ = lbf_reset(COOP, 0, horizon=1)
    with pytest.raises(InvalidAction):
        lbf_step(state, np.array([0, 6]))
    with pytest.raises(InvalidAction):
        lbf_step(state, np.array([0.0, 1.0]))
    lbf_step(state, np.array([0, 0]))
    assert state.done
    with pytest.raises(SteppedAfterDone):
        lbf_step(state, np.array([0, 0]))


def test_sight_hides_far_entities():
    sc = parse_scenario("Foraging-2s-8x8-2p-2f-v2")
    state = make_state(sc, [((0, 0), 1), ((2, 2), 1)], [((3, 0), 1), ((1, 1), 1)])
    obs = lbf_observe(state, 0).reshape(-1, 3)
    assert obs[0].tolist() == [0, 0, 1]      # self, absolute
    assert obs[1].tolist() == [2, 2, 1]      # other agent, distance 2
    assert obs[2].tolist() == [0, 0, 0]      # food at Chebyshev distance 3
    assert obs[3].tolist() == [1, 1, 1]


def test_full_sight_equals_max_radius():
    full = parse_scenario("Foraging-8x8-2p-2f-v2")
    wide = parse_scenario("Foraging-8s-8x8-2p-2f-v2")
    for seed in range(10):
        a, oa = lbf_reset(full, seed)
        b, ob = lbf_reset(wide, seed)
        assert np.array_equal(oa, ob)


def test_mirrored_observation():
    sc = parse_scenario("Foraging-5x5-2p-1f-v2")
    state = make_state(sc, [((1, 2), 2), ((3, 2), 2)], [((2, 2), 1)])
    o0 = lbf_observe(state, 0).reshape(-1, 3)
    o1 = lbf_observe(state, 1).reshape(-1, 3)
    # reflect x -> 4 - x for absolute self coords, dx -> -dx for relative ones
    reflected = o1.copy()
    reflected[0, 0] = 4 - reflected[0, 0]
    reflected[1:, 0] = -reflected[1:, 0]
    assert np.array_equal(o0, reflected)


def test_collected_food_reads_sentinel():
    sc = parse_scenario("Foraging-5x5-1p-2f-v2")
    state = make_state(sc, [((1, 2), 3)], [((2, 2), 1), ((4, 4), 1)])
    _, obs, _, _ = lbf_step(state, np.array([Action.LOAD]))
    assert obs[0].reshape(-1, 3)[1].tolist() == [0, 0, 0]


def _random_episode(scenario, seed, action_seed, steps):
    env = LbfEnv(scenario, horizon=steps)
    rng = np.random.default_rng(action_seed)
    obs = [env.reset(seed)]
    rewards = []
    done = False
    while not done:
        o, r, done = env.step(rng.integers(6, size=env.n_agents))
        obs.append(o)
        rewards.append(r)
    return np.stack(obs), np.stack(rewards), env.state.to_record()


def test_seed_determinism_long_trajectory():
    sc = parse_scenario("Foraging-15x15-4p-5f-v2")
    a = _random_episode(sc, 11, 3, 1000)
    b = _random_episode(sc, 11, 3, 1000)
    assert a[0].tobytes() == b[0].tobytes()
    assert a[1].tobytes() == b[1].tobytes()
    assert a[2] == b[2]


def test_episode_return_bounded_and_no_teleport():
    sc = parse_scenario("Foraging-6x6-3p-3f-v2")
    rng = np.random.default_rng(0)
    for seed in range(30):
        state, _ = lbf_reset(sc, seed, horizon=200)
        total = 0.0
        while not state.done:
            before = state.agent_pos.copy()
            _, _, r, _ = lbf_step(state, rng.integers(6, size=3))
            assert (np.abs(state.agent_pos - before).sum(axis=1) <= 1).all()
            total += r.sum()
        assert total <= 1 + 1e-12
        if state.all_collected:
            assert total == pytest.approx(1.0)


def test_coop_pickup_requires_all_agents():
    sc = parse_scenario("Foraging-5x5-3p-1f-coop-v2")
    rng = np.random.default_rng(42)
    for seed in range(300):
        state, _ = lbf_reset(sc, seed)
        while not state.done:
            actions = rng.integers(6, size=3)
            # bias towards loading so pickups actually get attempted
            actions[rng.random(3) < 0.5] = Action.LOAD
            present = state.food_present.copy()
            _, _, r, _ = lbf_step(state, actions)
            for f in np.flatnonzero(present & ~state.food_present):
                dist = np.abs(state.agent_pos - state.food_pos[f]).sum(axis=1)
                assert ((dist == 1) & (actions == Action.LOAD)).all()
                assert (r > 0).all()


def test_record_round_trip_continues_identically():
    state, _ = lbf_reset(COOP, 9)
    rng = np.random.default_rng(1)
    for _ in range(5):
        lbf_step(state, rng.integers(6, size=2))
    clone = LbfState.from_record(state.to_record())
    assert clone.to_record() == state.to_record()
    for _ in range(10):
        if state.done:
            break
        a = rng.integers(6, size=2)
        _, o1, r1, _ = lbf_step(state, a)
        _, o2, r2, _ = lbf_step(clone, a)
        assert np.array_equal(o1, o2) and np.array_equal(r1, r2)
    assert observe_all(state).dtype == np.float32
