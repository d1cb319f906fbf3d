"""Two-agent cooperative rearrangement gridworld.

Three tasks (set_table, tidy_house, prepare_groceries) on a walled grid with
six receptacles.  Agents act through macro actions (navigate-to-entity, pick,
place, open) plus four primitives (no-op, move-forward, turn-left,
turn-right).  Navigation runs one cell per tick along a BFS path over static
obstacles; pick/place/open resolve in a single tick once the agent is within
reach.  Reward is shared: +10 on task success, +0.5 per first-time subgoal
event, -0.01 every tick.  Agents colliding (same cell, or swapping cells in
one tick) ends the episode in failure.

Coordinates are (x, y) with (0, 0) the top-left corner; headings are indexed
N=0, E=1, S=2, W=3.  Every environment is a self-contained deterministic
state machine: identical (layout_seed, episode_seed, action sequence) gives
bit-identical outcomes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .seeding import derive_seed, make_rng

Cell = tuple[int, int]

TASKS = ("set_table", "tidy_house", "prepare_groceries")

N_RECEPTACLES = 6
N_OBJECTS = 2
N_ENTITIES = 10  # 2 object starts, 2 goals, 6 receptacles

# Fixed discrete action table (identical for every episode of a task).
ACT_NAVIGATE_BASE = 0  # 0..9: navigate to entity index
ACT_PICK_0 = 10
ACT_PICK_1 = 11
ACT_PLACE_0 = 12
ACT_PLACE_1 = 13
ACT_OPEN_0 = 14
ACT_OPEN_1 = 15
ACT_NOOP = 16
ACT_FORWARD = 17
ACT_TURN_LEFT = 18
ACT_TURN_RIGHT = 19
N_ACTIONS = 20

HEADING_NAMES = ("N", "E", "S", "W")
HEADING_DELTAS = ((0, -1), (1, 0), (0, 1), (-1, 0))

# Subgoal event kinds, row order used by the analysis matrix.
EVENT_KINDS = ("pick0", "pick1", "place0", "place1", "open0", "open1")


def action_name(action: int) -> str:
    if 0 <= action < N_ENTITIES:
        return f"nav{action}"
    return {
        ACT_PICK_0: "pick0",
        ACT_PICK_1: "pick1",
        ACT_PLACE_0: "place0",
        ACT_PLACE_1: "place1",
        ACT_OPEN_0: "open0",
        ACT_OPEN_1: "open1",
        ACT_NOOP: "noop",
        ACT_FORWARD: "fwd",
        ACT_TURN_LEFT: "left",
        ACT_TURN_RIGHT: "right",
    }[action]


class WorldError(Exception):
    """Base class for environment errors."""


class LayoutError(WorldError):
    """Layout generation failed after the retry budget."""


class NoPathError(WorldError):
    """BFS target unreachable from the source cell."""


class SteppingDoneEpisode(WorldError):
    """step_joint was called on a finished episode."""


@dataclass(frozen=True)
class Receptacle:
    id: int
    cell: Cell
    label: str
    openable: bool
    initially_open: bool

    def __post_init__(self):
        if not self.openable and not self.initially_open:
            raise ValueError("non-openable receptacle must start open")


@dataclass(frozen=True)
class GridLayout:
    width: int
    height: int
    walls: frozenset[Cell]
    receptacles: tuple[Receptacle, ...]
    spawn_region: frozenset[Cell]


@dataclass(frozen=True)
class WorldConfig:
    width: int = 11
    height: int = 11
    horizon: int = 200
    local_patch: bool = False
    oracle_obs: bool = False
    clutter: int | None = None  # None -> scaled with grid size
    spawn_min_dist: int = 3  # Manhattan cells between agent spawns
    solo_check: bool = True  # reject spawns where a lone scripted agent cannot finish
    max_gen_retries: int = 100


@dataclass(frozen=True)
class EpisodeSpec:
    """Per-episode task assignment, shared (immutable) by all state clones."""

    episode_seed: int
    start_locs: tuple[tuple, ...]  # initial object locations, ("recep", j) or ("cell", c)
    goals: tuple[tuple, ...]  # per object, ("recep", j) or ("cell", c)
    obj_start_cells: tuple[Cell, ...]
    goal_cells: tuple[Cell, ...]
    entity_cells: tuple[Cell, ...]  # 10 navigate targets


@dataclass
class AgentState:
    pos: Cell
    heading: int
    holding: int | None = None
    # Remaining navigate path; only navigate macros span multiple ticks.
    macro_action: int | None = None
    macro_path: list[Cell] | None = None
    macro_step: int = 0

    def clone(self) -> "AgentState":
        return AgentState(
            self.pos,
            self.heading,
            self.holding,
            self.macro_action,
            None if self.macro_path is None else list(self.macro_path),
            self.macro_step,
        )


@dataclass
class ObjectState:
    id: int
    location: tuple  # ("recep", j) | ("held", agent) | ("cell", c)
    goal: tuple  # ("recep", j) | ("cell", c)

    def clone(self) -> "ObjectState":
        return ObjectState(self.id, self.location, self.goal)


@dataclass
class WorldState:
    episode: EpisodeSpec
    agents: list[AgentState]
    objects: list[ObjectState]
    recep_open: list[bool]
    tick: int = 0
    done: bool = False
    success: bool = False
    fired_events: set = field(default_factory=set)  # (kind, idx) fired this episode

    def clone(self) -> "WorldState":
        return WorldState(
            self.episode,
            [a.clone() for a in self.agents],
            [o.clone() for o in self.objects],
            list(self.recep_open),
            self.tick,
            self.done,
            self.success,
            set(self.fired_events),
        )


@dataclass(frozen=True)
class SubgoalEvent:
    kind: str  # one of EVENT_KINDS without the index, e.g. "pick"
    index: int  # object or receptacle index
    agent: int

    @property
    def key(self) -> str:
        return f"{self.kind}{self.index}"

    def __str__(self) -> str:
        return f"{self.kind}{self.index}:a{self.agent}"


@dataclass
class StepOutcome:
    obs: list  # per-agent observation vectors (None where masked out)
    reward: float
    done: bool
    success: bool
    events: list[SubgoalEvent]
    decision_flags: tuple[bool, bool]


def _object_cell(state: WorldState, layout: GridLayout, i: int) -> Cell | None:
    loc = state.objects[i].location
    if loc[0] == "recep":
        return layout.receptacles[loc[1]].cell
    if loc[0] == "cell":
        return loc[1]
    return None  # held


def _goal_cell(layout: GridLayout, goal: tuple) -> Cell:
    if goal[0] == "recep":
        return layout.receptacles[goal[1]].cell
    return goal[1]


def _chebyshev(a: Cell, b: Cell) -> int:
    return max(abs(a[0] - b[0]), abs(a[1] - b[1]))


def shortest_path(
    layout: GridLayout,
    open_flags,
    from_cell: Cell,
    target_cell: Cell,
) -> list[Cell]:
    """BFS path from ``from_cell`` to any cell 4-adjacent to ``target_cell``.

    Obstacles are walls and closed-receptacle cells; other agents are
    deliberately ignored.  Neighbor expansion order N, E, S, W makes both the
    chosen terminal cell and the path deterministic.  Returns the list of
    cells to traverse (empty when already adjacent); raises NoPathError when
    no adjacent cell is reachable.
    """
    blocked = set(layout.walls)
    for rec in layout.receptacles:
        if not open_flags[rec.id]:
            blocked.add(rec.cell)

    tx, ty = target_cell
    goal_cells = set()
    for dx, dy in HEADING_DELTAS:
        c = (tx + dx, ty + dy)
        if c not in blocked and 0 <= c[0] < layout.width and 0 <= c[1] < layout.height:
            goal_cells.add(c)
    if not goal_cells:
        raise NoPathError(f"no free cell adjacent to {target_cell}")
    if from_cell in goal_cells:
        return []

    prev: dict[Cell, Cell] = {from_cell: from_cell}
    queue = [from_cell]
    head = 0
    while head < len(queue):
        cur = queue[head]
        head += 1
        cx, cy = cur
        for dx, dy in HEADING_DELTAS:
            nxt = (cx + dx, cy + dy)
            if nxt in prev or nxt in blocked:
                continue
            if not (0 <= nxt[0] < layout.width and 0 <= nxt[1] < layout.height):
                continue
            prev[nxt] = cur
            if nxt in goal_cells:
                path = [nxt]
                back = cur
                while back != from_cell:
                    path.append(back)
                    back = prev[back]
                path.reverse()
                return path
            queue.append(nxt)
    raise NoPathError(f"{target_cell} unreachable from {from_cell}")


def _generate_layout(task: str, layout_seed: int, config: WorldConfig) -> GridLayout:
    """Sample walls and receptacle cells; retry until connectivity holds."""
    width, height = config.width, config.height
    n_clutter = config.clutter
    if n_clutter is None:
        n_clutter = max(0, (width - 7) // 2 + (height - 7) // 2)

    labels, openable, init_open = _receptacle_roles(task)

    for attempt in range(config.max_gen_retries):
        rng = make_rng(layout_seed, "layout", attempt)
        walls = {(x, 0) for x in range(width)} | {(x, height - 1) for x in range(width)}
        walls |= {(0, y) for y in range(height)} | {(width - 1, y) for y in range(height)}
        interior = [
            (x, y) for y in range(1, height - 1) for x in range(1, width - 1)
        ]

        clutter_pool = list(interior)
        rng.shuffle(clutter_pool)
        walls |= set(clutter_pool[:n_clutter])

        free = [c for c in interior if c not in walls]
        rng.shuffle(free)

        cells = _place_receptacles(task, free, rng)
        if cells is None:
            continue

        receptacles = tuple(
            Receptacle(i, cells[i], labels[i], openable[i], init_open[i])
            for i in range(N_RECEPTACLES)
        )
        spawn = frozenset(c for c in free if c not in cells)
        layout = GridLayout(width, height, frozenset(walls), receptacles, spawn)
        if _layout_ok(layout):
            return layout
    raise LayoutError(
        f"could not generate a valid {task} layout from seed {layout_seed} "
        f"within {config.max_gen_retries} attempts"
    )


def _receptacle_roles(task: str):
    if task == "set_table":
        labels = ("fridge", "drawer", "table", "table", "shelf", "shelf")
        openable = (True, True, False, False, False, False)
        init_open = (False, False, True, True, True, True)
    elif task == "prepare_groceries":
        labels = ("fridge", "counter", "table", "shelf", "shelf", "shelf")
        openable = (True, False, False, False, False, False)
        init_open = (True, True, True, True, True, True)
    elif task == "tidy_house":
        labels = tuple(f"shelf{i}" for i in range(N_RECEPTACLES))
        openable = (False,) * N_RECEPTACLES
        init_open = (True,) * N_RECEPTACLES
    else:
        raise ValueError(f"unknown task {task!r}, expected one of {TASKS}")
    return labels, openable, init_open


def _place_receptacles(task: str, free: list[Cell], rng) -> list[Cell] | None:
    """Pick 6 receptacle cells: pairwise non-adjacent except set_table's
    two table cells, which must be orthogonal neighbors."""
    chosen: list[Cell] = []

    def adjacent(a: Cell, b: Cell) -> bool:
        return abs(a[0] - b[0]) + abs(a[1] - b[1]) == 1

    table_pair: tuple[Cell, Cell] | None = None
    if task == "set_table":
        pairs = [
            (a, b)
            for a in free
            for b in free
            if adjacent(a, b) and a < b
        ]
        if not pairs:
            return None
        table_pair = pairs[rng.integers(len(pairs))]

    def conflicts(c: Cell) -> bool:
        return any(adjacent(c, o) or c == o for o in chosen)

    if task == "set_table":
        # Slots 2 and 3 are the table pair; fill 0,1,4,5 around them.
        chosen = [table_pair[0], table_pair[1]]
        remaining_slots = 4
    else:
        remaining_slots = N_RECEPTACLES

    for c in free:
        if remaining_slots == 0:
            break
        if c in chosen or conflicts(c):
            continue
        chosen.append(c)
        remaining_slots -= 1
    if remaining_slots > 0:
        return None

    if task == "set_table":
        # chosen = [table_a, table_b, r0, r1, r4, r5] -> reorder to slot ids
        table_a, table_b, c0, c1, c4, c5 = chosen
        return [c0, c1, table_a, table_b, c4, c5]
    return chosen


def _layout_ok(layout: GridLayout) -> bool:
    """All free cells connected and every receptacle reachable, with the
    openable receptacles treated as blocked (their worst case)."""
    blocked = set(layout.walls)
    for rec in layout.receptacles:
        if rec.openable:
            blocked.add(rec.cell)
    free = [
        (x, y)
        for y in range(layout.height)
        for x in range(layout.width)
        if (x, y) not in blocked
    ]
    if not free or len(layout.spawn_region) < 8:
        return False
    seen = {free[0]}
    stack = [free[0]]
    while stack:
        x, y = stack.pop()
        for dx, dy in HEADING_DELTAS:
            n = (x + dx, y + dy)
            if n not in seen and n not in blocked and 0 <= n[0] < layout.width and 0 <= n[1] < layout.height:
                seen.add(n)
                stack.append(n)
    if len(seen) != len(free):
        return False
    for rec in layout.receptacles:
        rx, ry = rec.cell
        if not any((rx + dx, ry + dy) in seen for dx, dy in HEADING_DELTAS):
            return False
    return True


class Environment:
    """One task instance: a generated layout plus episode machinery.

    A single Environment must only be stepped by one caller at a time;
    independent instances are safe to run concurrently.
    """

    def __init__(self, task: str, layout_seed: int, config: WorldConfig | None = None):
        config = config or WorldConfig()
        if task not in TASKS:
            raise ValueError(f"unknown task {task!r}, expected one of {TASKS}")
        if config.horizon < 20:
            raise ValueError("horizon must be at least 20 ticks")
        if config.width < 7 or config.height < 7:
            raise ValueError("grid must be at least 7x7")
        self.task = task
        self.layout_seed = layout_seed
        self.config = config
        self.layout = _generate_layout(task, layout_seed, config)
        self.state: WorldState | None = None
        self._path_cache: dict = {}
        self._norm = (1.0 / (config.width - 1), 1.0 / (config.height - 1))

    # ------------------------------------------------------------------ #
    # observation geometry

    @property
    def n_actions(self) -> int:
        return N_ACTIONS

    @property
    def norm(self) -> tuple[float, float]:
        """Per-axis factors that map cell deltas into [-1, 1]."""
        return self._norm

    def observe(self, state: WorldState, agent: int) -> np.ndarray:
        """The agent's current observation vector."""
        return self._build_obs(state, agent)

    @property
    def obs_dim(self) -> int:
        base = 2 + 4 + 3 + 4 + 4 + 2 + 2
        if self.config.local_patch:
            base += 25
        if self.config.oracle_obs:
            base += self.oracle_dim
        return base

    @property
    def oracle_dim(self) -> int:
        # robot_at(2 x 10) + is_holding(2) + object_at(2 x 8)
        return 2 * N_ENTITIES + 2 + N_OBJECTS * (N_RECEPTACLES + 2)

    # ------------------------------------------------------------------ #
    # episode setup

    def reset(self, episode_seed: int) -> tuple[WorldState, list[np.ndarray]]:
        """Start a fresh episode: task-defined object placement plus agent
        spawns at Manhattan distance >= spawn_min_dist, re-sampled until a
        lone scripted agent could still finish the task from this setup."""
        layout = self.layout
        for attempt in range(200):
            rng = make_rng(
                derive_seed(self.layout_seed, "ep", episode_seed), "spawn", attempt
            )
            episode = self._sample_episode(episode_seed, rng)
            spawn_cells = sorted(layout.spawn_region)
            rng.shuffle(spawn_cells)
            spawns = self._pick_spawns(spawn_cells)
            if spawns is None:
                continue
            agents = [
                AgentState(pos=spawns[i], heading=int(rng.integers(4)))
                for i in range(2)
            ]
            objects = [
                ObjectState(i, episode.start_locs[i], episode.goals[i])
                for i in range(N_OBJECTS)
            ]
            state = WorldState(
                episode=episode,
                agents=agents,
                objects=objects,
                recep_open=[r.initially_open for r in layout.receptacles],
            )
            if self.config.solo_check and not self._solo_completable(state):
                continue
            self.state = state
            return state, [self._build_obs(state, i) for i in range(2)]
        raise LayoutError(
            f"no workable spawn found for episode seed {episode_seed} "
            f"(layout seed {self.layout_seed})"
        )

    def _pick_spawns(self, cells: list[Cell]) -> tuple[Cell, Cell] | None:
        min_d = self.config.spawn_min_dist
        for i, a in enumerate(cells):
            for b in cells[i + 1 :]:
                if abs(a[0] - b[0]) + abs(a[1] - b[1]) >= min_d:
                    return a, b
        return None

    def _sample_episode(self, episode_seed: int, rng) -> EpisodeSpec:
        if self.task == "set_table":
            start_locs = (("recep", 0), ("recep", 1))
            goals = (("recep", 2), ("recep", 3))
        elif self.task == "prepare_groceries":
            start_locs = (("recep", 0), ("recep", 2))
            goals = (("recep", 1), ("recep", 0))
        else:  # tidy_house: 4 distinct receptacles out of 6
            picks = rng.permutation(N_RECEPTACLES)[:4]
            start_locs = (("recep", int(picks[0])), ("recep", int(picks[1])))
            goals = (("recep", int(picks[2])), ("recep", int(picks[3])))

        rec = self.layout.receptacles
        start_cells = tuple(rec[loc[1]].cell for loc in start_locs)
        goal_cells = tuple(_goal_cell(self.layout, g) for g in goals)
        entity_cells = start_cells + goal_cells + tuple(r.cell for r in rec)
        return EpisodeSpec(
            episode_seed=episode_seed,
            start_locs=start_locs,
            goals=goals,
            obj_start_cells=start_cells,
            goal_cells=goal_cells,
            entity_cells=entity_cells,
        )

    def _solo_completable(self, state: WorldState) -> bool:
        from .scripted import solo_run_succeeds  # local import: scripted builds on world

        return solo_run_succeeds(self, state, 0) and solo_run_succeeds(self, state, 1)

    # ------------------------------------------------------------------ #
    # dynamics

    def step_joint(
        self,
        state: WorldState,
        actions,
        obs_mask: tuple[bool, bool] = (True, True),
    ) -> StepOutcome:
        """Advance one tick.  ``actions`` supplies each agent's newly selected
        action; an agent still inside a navigate macro ignores it."""
        if state.done:
            raise SteppingDoneEpisode(f"episode already done at tick {state.tick}")

        layout = self.layout
        moves: list[Cell | None] = [None, None]
        manips: list[tuple[int, int]] = []
        decided = [False, False]

        for i in (0, 1):
            ag = state.agents[i]
            if ag.macro_path is not None:
                moves[i] = ag.macro_path[ag.macro_step]
                continue
            a = int(actions[i])
            if not 0 <= a < N_ACTIONS:
                raise ValueError(f"action id {a} out of range")
            if a < N_ENTITIES:  # navigate macro
                path = self._nav_path(state, ag.pos, a)
                if path is None or len(path) == 0:
                    decided[i] = True  # degrades to no-op / completes instantly
                else:
                    ag.macro_action = a
                    ag.macro_path = path
                    ag.macro_step = 0
                    moves[i] = path[0]
            elif a in (ACT_PICK_0, ACT_PICK_1, ACT_PLACE_0, ACT_PLACE_1, ACT_OPEN_0, ACT_OPEN_1):
                manips.append((i, a))
                decided[i] = True
            elif a == ACT_NOOP:
                decided[i] = True
            elif a == ACT_FORWARD:
                dx, dy = HEADING_DELTAS[state.agents[i].heading]
                target = (ag.pos[0] + dx, ag.pos[1] + dy)
                if self._passable(state, target) and target != state.agents[1 - i].pos:
                    moves[i] = target
                decided[i] = True
            elif a == ACT_TURN_LEFT:
                ag.heading = (ag.heading - 1) % 4
                decided[i] = True
            elif a == ACT_TURN_RIGHT:
                ag.heading = (ag.heading + 1) % 4
                decided[i] = True

        # Moves resolve simultaneously from the pre-tick configuration.
        before = (state.agents[0].pos, state.agents[1].pos)
        for i in (0, 1):
            if moves[i] is not None:
                ag = state.agents[i]
                dx = moves[i][0] - ag.pos[0]
                dy = moves[i][1] - ag.pos[1]
                if (dx, dy) in HEADING_DELTAS:
                    ag.heading = HEADING_DELTAS.index((dx, dy))
                ag.pos = moves[i]
                if ag.macro_path is not None:
                    ag.macro_step += 1
                    if ag.macro_step >= len(ag.macro_path):
                        ag.macro_action = None
                        ag.macro_path = None
                        ag.macro_step = 0
                        decided[i] = True

        after = (state.agents[0].pos, state.agents[1].pos)
        collided = after[0] == after[1] or (after[0] == before[1] and after[1] == before[0])

        # Manipulations apply in agent index order; preconditions re-checked
        # so that e.g. two same-tick picks of one object resolve to a single
        # grab and one degraded no-op.
        events: list[SubgoalEvent] = []
        for i, a in manips:
            ev = self.apply_postconditions(state, i, a)
            if ev is not None:
                events.append(ev)

        success_now = False
        if not collided and all(
            o.location == o.goal for o in state.objects
        ):
            success_now = True

        state.tick += 1
        if collided:
            state.done = True
            state.success = False
        elif success_now:
            state.done = True
            state.success = True
        elif state.tick >= self.config.horizon:
            state.done = True
            state.success = False

        reward = (10.0 if state.success else 0.0) + 0.5 * len(events) - 0.01

        obs = [
            self._build_obs(state, i) if obs_mask[i] else None for i in range(2)
        ]
        return StepOutcome(
            obs=obs,
            reward=reward,
            done=state.done,
            success=state.success,
            events=events,
            decision_flags=(decided[0], decided[1]),
        )

    def _passable(self, state: WorldState, cell: Cell) -> bool:
        if cell in self.layout.walls:
            return False
        if not (0 <= cell[0] < self.layout.width and 0 <= cell[1] < self.layout.height):
            return False
        for rec in self.layout.receptacles:
            if rec.cell == cell and not state.recep_open[rec.id]:
                return False
        return True

    def _open_bits(self, state: WorldState) -> int:
        bits = 0
        for j, flag in enumerate(state.recep_open):
            if flag:
                bits |= 1 << j
        return bits

    def _nav_path(self, state: WorldState, from_cell: Cell, entity: int) -> list[Cell] | None:
        key = (self._open_bits(state), from_cell, entity, state.episode.entity_cells[entity])
        hit = self._path_cache.get(key, -1)
        if hit != -1:
            return None if hit is None else list(hit)
        try:
            path = shortest_path(
                self.layout, state.recep_open, from_cell, state.episode.entity_cells[entity]
            )
        except NoPathError:
            self._path_cache[key] = None
            return None
        self._path_cache[key] = tuple(path)
        return path

    def check_preconditions(self, state: WorldState, agent: int, action: int) -> bool:
        """Feasibility of an action for ``agent`` in the current state."""
        ag = state.agents[agent]
        if action < N_ENTITIES:
            return self._nav_path(state, ag.pos, action) is not None
        if action in (ACT_PICK_0, ACT_PICK_1):
            i = action - ACT_PICK_0
            if ag.holding is not None:
                return False
            loc = state.objects[i].location
            if loc[0] == "held":
                return False
            if loc[0] == "recep" and not state.recep_open[loc[1]]:
                return False
            cell = _object_cell(state, self.layout, i)
            return cell is not None and _chebyshev(ag.pos, cell) <= 1
        if action in (ACT_PLACE_0, ACT_PLACE_1):
            i = action - ACT_PLACE_0
            if ag.holding != i:
                return False
            return _chebyshev(ag.pos, state.episode.goal_cells[i]) <= 1
        if action in (ACT_OPEN_0, ACT_OPEN_1):
            j = action - ACT_OPEN_0
            rec = self.layout.receptacles[j]
            if not rec.openable or state.recep_open[j]:
                return False
            return _chebyshev(ag.pos, rec.cell) <= 1
        if action == ACT_FORWARD:
            dx, dy = HEADING_DELTAS[ag.heading]
            target = (ag.pos[0] + dx, ag.pos[1] + dy)
            return self._passable(state, target) and target != state.agents[1 - agent].pos
        return True  # no-op and turns are always feasible

    def apply_postconditions(self, state: WorldState, agent: int, action: int) -> SubgoalEvent | None:
        """Apply a manipulation's postconditions; no-op when its
        preconditions no longer hold.  The subgoal event fires at most once
        per object/receptacle per episode."""
        if not self.check_preconditions(state, agent, action):
            return None
        ag = state.agents[agent]
        if action in (ACT_PICK_0, ACT_PICK_1):
            i = action - ACT_PICK_0
            state.objects[i].location = ("held", agent)
            ag.holding = i
            return self._fire_event(state, "pick", i, agent)
        if action in (ACT_PLACE_0, ACT_PLACE_1):
            i = action - ACT_PLACE_0
            state.objects[i].location = state.objects[i].goal
            ag.holding = None
            return self._fire_event(state, "place", i, agent)
        j = action - ACT_OPEN_0
        state.recep_open[j] = True
        return self._fire_event(state, "open", j, agent)

    def _fire_event(self, state: WorldState, kind: str, idx: int, agent: int) -> SubgoalEvent | None:
        key = (kind, idx)
        if key in state.fired_events:
            return None
        state.fired_events.add(key)
        return SubgoalEvent(kind, idx, agent)

    # ------------------------------------------------------------------ #
    # observations

    def _build_obs(self, state: WorldState, agent: int) -> np.ndarray:
        nx, ny = self._norm
        ag = state.agents[agent]
        partner = state.agents[1 - agent]
        out = np.zeros(self.obs_dim, dtype=np.float64)
        out[0] = 2.0 * ag.pos[0] * nx - 1.0
        out[1] = 2.0 * ag.pos[1] * ny - 1.0
        out[2 + ag.heading] = 1.0
        out[6 + (0 if ag.holding is None else ag.holding + 1)] = 1.0
        k = 9
        ep = state.episode
        for cell in ep.obj_start_cells + ep.goal_cells:
            out[k] = (cell[0] - ag.pos[0]) * nx
            out[k + 1] = (cell[1] - ag.pos[1]) * ny
            k += 2
        out[k] = (partner.pos[0] - ag.pos[0]) * nx
        out[k + 1] = (partner.pos[1] - ag.pos[1]) * ny
        out[k + 2] = 1.0 if state.recep_open[0] else 0.0
        out[k + 3] = 1.0 if state.recep_open[1] else 0.0
        k += 4
        if self.config.local_patch:
            for dy in range(-2, 3):
                for dx in range(-2, 3):
                    c = (ag.pos[0] + dx, ag.pos[1] + dy)
                    blocked = not self._passable(state, c) or c == partner.pos
                    out[k] = 1.0 if blocked else 0.0
                    k += 1
        if self.config.oracle_obs:
            out[k : k + self.oracle_dim] = self.oracle_state(state)
        return out

    def oracle_state(self, state: WorldState) -> np.ndarray:
        """Ground-truth binary predicate vector, identical for both agents:
        robot-adjacency to every entity, holding flags, and object placement
        on every receptacle and goal."""
        vec = np.zeros(self.oracle_dim, dtype=np.float64)
        obj_cells = [_object_cell(state, self.layout, i) for i in range(N_OBJECTS)]
        ent_cells = (
            obj_cells[0],
            obj_cells[1],
            state.episode.goal_cells[0],
            state.episode.goal_cells[1],
        ) + tuple(r.cell for r in self.layout.receptacles)
        k = 0
        for a in range(2):
            pos = state.agents[a].pos
            for cell in ent_cells:
                if cell is not None and _chebyshev(pos, cell) <= 1:
                    vec[k] = 1.0
                k += 1
        for a in range(2):
            vec[k] = 1.0 if state.agents[a].holding is not None else 0.0
            k += 1
        for i in range(N_OBJECTS):
            loc = state.objects[i].location
            for j in range(N_RECEPTACLES):
                if loc == ("recep", j):
                    vec[k] = 1.0
                k += 1
            for g in range(N_OBJECTS):
                cell = obj_cells[i]
                if cell is not None and cell == state.episode.goal_cells[g]:
                    vec[k] = 1.0
                k += 1
        return vec


def create_env(task: str, layout_seed: int, config: WorldConfig | None = None) -> Environment:
    return Environment(task, layout_seed, config)
