"""World dynamics: task setup, macro execution, reward, BFS, oracle state."""

import numpy as np
import pytest

from coopgrid import scripted
from coopgrid import world as w


def make_env(task="tidy_house", layout_seed=1, **kw):
    return w.create_env(task, layout_seed, w.WorldConfig(**kw))


# ------------------------------------------------------------------ #
# construction and task-specific initial constraints

def test_action_table_is_fixed():
    env = make_env()
    assert env.n_actions == w.N_ACTIONS == 20
    # 10 navigation targets + 6 manipulations + 4 primitives
    assert w.ACT_NOOP == 16 and w.ACT_TURN_RIGHT == 19


def test_create_env_validates_config():
    with pytest.raises(ValueError):
        w.create_env("tidy_house", 1, w.WorldConfig(horizon=10))
    with pytest.raises(ValueError):
        w.create_env("tidy_house", 1, w.WorldConfig(width=5, height=5))
    with pytest.raises(ValueError):
        w.create_env("mop_floor", 1)


def test_generation_fails_after_retry_budget():
    # cluttering every interior cell leaves nowhere for receptacles
    with pytest.raises(w.LayoutError):
        w.create_env("tidy_house", 1, w.WorldConfig(width=7, height=7, clutter=25))


def test_set_table_receptacles_start_closed():
    env = make_env("set_table", layout_seed=1)
    state, _ = env.reset(0)
    assert state.recep_open[0] is False and state.recep_open[1] is False
    assert state.objects[0].location == ("recep", 0)
    assert state.objects[1].location == ("recep", 1)
    # goals on the table pair
    assert state.objects[0].goal == ("recep", 2)
    assert state.objects[1].goal == ("recep", 3)
    ta, tb = env.layout.receptacles[2].cell, env.layout.receptacles[3].cell
    assert abs(ta[0] - tb[0]) + abs(ta[1] - tb[1]) == 1, "table cells must be adjacent"


@pytest.mark.parametrize("seed", [0, 3, 17])
def test_tidy_house_goal_differs_from_start(seed):
    env = make_env("tidy_house", layout_seed=2)
    state, _ = env.reset(seed)
    for obj in state.objects:
        assert obj.location[0] == "recep" and obj.goal[0] == "recep"
        assert obj.goal[1] != obj.location[1]
    assert state.objects[0].location != state.objects[1].location
    assert state.objects[0].goal != state.objects[1].goal


@pytest.mark.parametrize("seed", [0, 5])
def test_prepare_groceries_fridge_setup(seed):
    env = make_env("prepare_groceries", layout_seed=4)
    state, _ = env.reset(seed)
    fridge = env.layout.receptacles[0]
    assert fridge.label == "fridge"
    assert state.objects[0].location == ("recep", 0)
    assert state.recep_open[0] is True
    assert state.objects[1].goal == ("recep", 0)


def test_layout_invariants():
    for task in w.TASKS:
        env = make_env(task, layout_seed=9)
        lay = env.layout
        for x in range(lay.width):
            assert (x, 0) in lay.walls and (x, lay.height - 1) in lay.walls
        for y in range(lay.height):
            assert (0, y) in lay.walls and (lay.width - 1, y) in lay.walls
        for rec in lay.receptacles:
            assert rec.cell not in lay.walls
        assert len(lay.receptacles) == w.N_RECEPTACLES


def test_receptacle_invariant():
    with pytest.raises(ValueError):
        w.Receptacle(0, (1, 1), "shelf", openable=False, initially_open=False)


# ------------------------------------------------------------------ #
# reset

def test_reset_spawn_distance():
    env = make_env()
    for seed in range(10):
        state, _ = env.reset(seed)
        a, b = state.agents[0].pos, state.agents[1].pos
        assert abs(a[0] - b[0]) + abs(a[1] - b[1]) >= 3


def test_reset_is_deterministic():
    e1 = make_env("set_table", layout_seed=5)
    e2 = make_env("set_table", layout_seed=5)
    s1, o1 = e1.reset(7)
    s2, o2 = e2.reset(7)
    assert s1.agents[0].pos == s2.agents[0].pos
    assert s1.agents[1].heading == s2.agents[1].heading
    assert s1.episode == s2.episode
    assert np.array_equal(o1[0], o2[0]) and np.array_equal(o1[1], o2[1])


def test_reset_after_done_is_fresh():
    env = make_env(horizon=20, solo_check=False)
    state, _ = env.reset(0)
    while not state.done:
        env.step_joint(state, (w.ACT_NOOP, w.ACT_NOOP), obs_mask=(False, False))
    state2, _ = env.reset(1)
    assert state2.tick == 0 and not state2.done


# ------------------------------------------------------------------ #
# stepping, reward, collision

def test_noop_tick_reward():
    env = make_env()
    state, _ = env.reset(0)
    out = env.step_joint(state, (w.ACT_NOOP, w.ACT_NOOP))
    assert out.reward == pytest.approx(-0.01, abs=1e-12)
    assert out.decision_flags == (True, True)
    assert not out.done


def test_pick_event_reward():
    env = make_env("tidy_house", layout_seed=2)
    state, _ = env.reset(0)
    # teleport agent 0 next to object 0 and pick it
    cell = w._object_cell(state, env.layout, 0)
    state.agents[0].pos = _free_neighbor(env, state, cell)
    out = env.step_joint(state, (w.ACT_PICK_0, w.ACT_NOOP))
    assert [e.key for e in out.events] == ["pick0"]
    assert out.reward == pytest.approx(0.5 - 0.01, abs=1e-12)
    assert state.agents[0].holding == 0


def test_same_cell_collision_fails_episode():
    env = make_env(solo_check=False)
    state, _ = env.reset(3)
    # put the agents orthogonally adjacent, agent 0 walks into agent 1
    a1 = state.agents[1].pos
    nb = _free_neighbor(env, state, a1)
    state.agents[0].pos = nb
    dx, dy = a1[0] - nb[0], a1[1] - nb[1]
    state.agents[0].heading = w.HEADING_DELTAS.index((dx, dy))
    # MoveForward into the partner degrades to no-op, so drive a navigate
    # macro through the partner's cell instead: force a path manually.
    state.agents[0].macro_action = 0
    state.agents[0].macro_path = [a1]
    state.agents[0].macro_step = 0
    out = env.step_joint(state, (w.ACT_NOOP, w.ACT_NOOP))
    assert out.done and not out.success
    assert out.reward == pytest.approx(-0.01, abs=1e-12), "no success bonus on collision"


def test_swap_collision():
    env = make_env(solo_check=False)
    state, _ = env.reset(3)
    a1 = state.agents[1].pos
    nb = _free_neighbor(env, state, a1)
    state.agents[0].pos = nb
    state.agents[0].macro_path = [a1]
    state.agents[0].macro_action = 0
    state.agents[1].macro_path = [nb]
    state.agents[1].macro_action = 0
    out = env.step_joint(state, (w.ACT_NOOP, w.ACT_NOOP))
    assert out.done and not out.success


def test_final_placement_reward_includes_success_and_event():
    env = make_env("tidy_house", layout_seed=2)
    state, _ = env.reset(0)
    # hand-deliver object 1, then let agent 0 place object 0 at its goal
    state.objects[1].location = state.objects[1].goal
    state.objects[0].location = ("held", 0)
    state.agents[0].holding = 0
    goal_cell = state.episode.goal_cells[0]
    state.agents[0].pos = _free_neighbor(env, state, goal_cell)
    out = env.step_joint(state, (w.ACT_PLACE_0, w.ACT_NOOP))
    assert out.success and out.done
    assert out.reward == pytest.approx(10.0 + 0.5 - 0.01, abs=1e-12)


def test_step_done_episode_raises():
    env = make_env(horizon=20, solo_check=False)
    state, _ = env.reset(0)
    while not state.done:
        env.step_joint(state, (w.ACT_NOOP, w.ACT_NOOP), obs_mask=(False, False))
    with pytest.raises(w.SteppingDoneEpisode):
        env.step_joint(state, (w.ACT_NOOP, w.ACT_NOOP))


def test_turns_and_forward():
    env = make_env(solo_check=False)
    state, _ = env.reset(0)
    h0 = state.agents[0].heading
    env.step_joint(state, (w.ACT_TURN_LEFT, w.ACT_TURN_RIGHT))
    assert state.agents[0].heading == (h0 - 1) % 4


# ------------------------------------------------------------------ #
# shortest path

def _open_layout(size=5):
    walls = {(x, 0) for x in range(size)} | {(x, size - 1) for x in range(size)}
    walls |= {(0, y) for y in range(size)} | {(size - 1, y) for y in range(size)}
    rec = (w.Receptacle(0, (3, 3), "shelf", False, True),) + tuple(
        w.Receptacle(i, (1, 3), "shelf", False, True) for i in range(1, 6)
    )
    free = {
        (x, y) for x in range(1, size - 1) for y in range(1, size - 1)
    }
    return w.GridLayout(size, size, frozenset(walls), rec, frozenset(free))


def test_shortest_path_already_adjacent():
    lay = _open_layout()
    path = w.shortest_path(lay, [True] * 6, (3, 2), (3, 3))
    assert path == []


def test_shortest_path_unreachable():
    size = 7
    walls = {(x, 0) for x in range(size)} | {(x, size - 1) for x in range(size)}
    walls |= {(0, y) for y in range(size)} | {(size - 1, y) for y in range(size)}
    # box in the target at (5,5)
    walls |= {(4, 4), (4, 5), (5, 4)}
    rec = tuple(w.Receptacle(i, (1, 1), "shelf", False, True) for i in range(6))
    lay = w.GridLayout(size, size, frozenset(walls), rec, frozenset())
    with pytest.raises(w.NoPathError):
        w.shortest_path(lay, [True] * 6, (1, 2), (5, 5))


def test_shortest_path_five_by_five():
    # 5x5 bordered grid, from (1,1) to a cell adjacent to (3,3): 3 moves
    lay = _open_layout(5)
    path = w.shortest_path(lay, [True] * 6, (1, 1), (3, 3))
    assert len(path) == 3
    tx, ty = path[-1]
    assert abs(tx - 3) + abs(ty - 3) == 1


def test_closed_receptacle_blocks_path():
    env = make_env("set_table", layout_seed=1)
    state, _ = env.reset(0)
    closed_cell = env.layout.receptacles[0].cell
    path = w.shortest_path(env.layout, state.recep_open, state.agents[0].pos, closed_cell)
    assert closed_cell not in path


# ------------------------------------------------------------------ #
# preconditions / postconditions

def test_pick_while_holding_is_infeasible():
    env = make_env("tidy_house", layout_seed=2)
    state, _ = env.reset(0)
    state.objects[1].location = ("held", 0)
    state.agents[0].holding = 1
    state.agents[0].pos = _free_neighbor(env, state, w._object_cell(state, env.layout, 0))
    assert env.check_preconditions(state, 0, w.ACT_PICK_0) is False


def test_open_when_already_open_is_infeasible():
    env = make_env("set_table", layout_seed=1)
    state, _ = env.reset(0)
    state.recep_open[0] = True
    state.agents[0].pos = _free_neighbor(env, state, env.layout.receptacles[0].cell)
    assert env.check_preconditions(state, 0, w.ACT_OPEN_0) is False
    state.recep_open[0] = False
    assert env.check_preconditions(state, 0, w.ACT_OPEN_0) is True


def test_place_adjacent_while_holding_is_feasible():
    env = make_env("tidy_house", layout_seed=2)
    state, _ = env.reset(0)
    state.objects[0].location = ("held", 0)
    state.agents[0].holding = 0
    state.agents[0].pos = _free_neighbor(env, state, state.episode.goal_cells[0])
    assert env.check_preconditions(state, 0, w.ACT_PLACE_0) is True


def test_event_fires_once_per_object():
    env = make_env("tidy_house", layout_seed=2)
    state, _ = env.reset(0)
    cell = w._object_cell(state, env.layout, 0)
    state.agents[0].pos = _free_neighbor(env, state, cell)
    out1 = env.step_joint(state, (w.ACT_PICK_0, w.ACT_NOOP))
    assert [e.key for e in out1.events] == ["pick0"]
    # place it back at its start receptacle by hand, then pick again
    state.objects[0].location = ("recep", state.episode.start_locs[0][1])
    state.agents[0].holding = None
    out2 = env.step_joint(state, (w.ACT_PICK_0, w.ACT_NOOP))
    assert out2.events == [] and state.agents[0].holding == 0


def test_open_postcondition_and_event():
    env = make_env("set_table", layout_seed=1)
    state, _ = env.reset(0)
    state.agents[0].pos = _free_neighbor(env, state, env.layout.receptacles[1].cell)
    out = env.step_joint(state, (w.ACT_OPEN_1, w.ACT_NOOP))
    assert state.recep_open[1] is True
    assert [e.key for e in out.events] == ["open1"]


def test_conflicting_same_tick_pick_resolves_to_one_grab():
    env = make_env("tidy_house", layout_seed=2)
    state, _ = env.reset(0)
    cell = w._object_cell(state, env.layout, 0)
    nbs = _free_neighbors(env, state, cell)
    assert len(nbs) >= 2
    state.agents[0].pos = nbs[0]
    state.agents[1].pos = nbs[1]
    out = env.step_joint(state, (w.ACT_PICK_0, w.ACT_PICK_0))
    assert [e.key for e in out.events] == ["pick0"]
    assert state.agents[0].holding == 0 and state.agents[1].holding is None


# ------------------------------------------------------------------ #
# oracle predicates

def test_oracle_vector():
    env = make_env("tidy_house", layout_seed=2, oracle_obs=True)
    state, _ = env.reset(0)
    vec = env.oracle_state(state)
    assert vec.shape == (env.oracle_dim,) == (38,)
    # nobody holds anything at reset
    assert vec[20] == 0.0 and vec[21] == 0.0
    # object 0 sits on its start receptacle
    j = state.objects[0].location[1]
    assert vec[22 + j] == 1.0
    # adjacency: teleport agent 0 next to receptacle 2 and recheck
    state.agents[0].pos = _free_neighbor(env, state, env.layout.receptacles[2].cell)
    vec = env.oracle_state(state)
    assert vec[4 + 2] == 1.0  # robot_at(agent0, receptacle 2)
    # object 1 moved to its goal -> object_at(1, goal1) = 1
    state.objects[1].location = state.objects[1].goal
    vec = env.oracle_state(state)
    assert vec[22 + 8 + 6 + 1] == 1.0
    both = [env.observe(state, 0)[-38:], env.observe(state, 1)[-38:]]
    assert np.array_equal(both[0], both[1]), "oracle block must be shared"


def test_observation_layout_and_bounds():
    env = make_env("set_table", layout_seed=1)
    state, obs = env.reset(0)
    assert obs[0].shape == (21,)
    assert np.all(obs[0] >= -1.0 - 1e-12) and np.all(obs[0] <= 1.0 + 1e-12)
    assert obs[0][2:6].sum() == 1.0  # heading one-hot
    assert obs[0][6] == 1.0  # holding nothing
    # receptacle open flags are the last two entries; closed at start
    assert obs[0][19] == 0.0 and obs[0][20] == 0.0


def test_local_patch_dim():
    env = make_env(local_patch=True)
    state, obs = env.reset(0)
    assert obs[0].shape == (46,)


# ------------------------------------------------------------------ #
# properties

def test_reward_accounting_random_episodes():
    rng = np.random.default_rng(0)
    for task in w.TASKS:
        env = make_env(task, layout_seed=3, solo_check=False)
        for ep in range(30):
            state, _ = env.reset(ep)
            ret, events, ticks = 0.0, 0, 0
            while not state.done:
                out = env.step_joint(
                    state, (rng.integers(20), rng.integers(20)), obs_mask=(False, False)
                )
                ret += out.reward
                events += len(out.events)
                ticks += 1
            expected = 10.0 * state.success + 0.5 * events - 0.01 * ticks
            assert ret == pytest.approx(expected, abs=1e-9)


def test_determinism_bitwise():
    rng = np.random.default_rng(4)
    actions = [(int(rng.integers(20)), int(rng.integers(20))) for _ in range(120)]

    def trace(seed):
        env = make_env("set_table", layout_seed=seed)
        state, _ = env.reset(11)
        out = []
        for a in actions:
            o = env.step_joint(state, a, obs_mask=(False, False))
            out.append((state.agents[0].pos, state.agents[1].pos, o.reward, o.done))
            if state.done:
                break
        return out

    assert trace(6) == trace(6)


def test_collision_symmetry_reward_sequence():
    rng = np.random.default_rng(9)
    actions = [(int(rng.integers(20)), int(rng.integers(20))) for _ in range(100)]

    def run(swap):
        env = make_env("tidy_house", layout_seed=5)
        state, _ = env.reset(2)
        if swap:
            state.agents = [state.agents[1], state.agents[0]]
        rewards, pos = [], []
        for a0, a1 in actions:
            a = (a1, a0) if swap else (a0, a1)
            out = env.step_joint(state, a, obs_mask=(False, False))
            rewards.append(out.reward)
            pos.append((state.agents[0].pos, state.agents[1].pos))
            if state.done:
                break
        return rewards, pos

    r0, p0 = run(False)
    r1, p1 = run(True)
    assert r0 == r1
    assert [(b, a) for a, b in p0] == p1


def test_solo_completability_of_generated_episodes():
    for task in w.TASKS:
        env = make_env(task, layout_seed=8)
        for ep in range(5):
            state, _ = env.reset(ep)
            assert scripted.solo_run_succeeds(env, state, 0)
            assert scripted.solo_run_succeeds(env, state, 1)


# ------------------------------------------------------------------ #
# helpers

def _free_neighbors(env, state, cell):
    out = []
    for dx, dy in w.HEADING_DELTAS:
        c = (cell[0] + dx, cell[1] + dy)
        if env._passable(state, c) and c != state.agents[0].pos and c != state.agents[1].pos:
            out.append(c)
    return out


def _free_neighbor(env, state, cell):
    nbs = _free_neighbors(env, state, cell)
    assert nbs, f"no free neighbor around {cell}"
    return nbs[0]
