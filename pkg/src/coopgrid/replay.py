"""Episode replay logs and the ASCII grid renderer.

Log format (documented in the README): a `#`-prefixed header carrying the
seeds needed to rebuild the environment, then one line per tick:

    tick a0_x a0_y a0_h a1_x a1_y a1_h act0 act1 reward events

``events`` is `-` or a `;`-joined list like ``pick0:a1``.  Because the
world is deterministic, `coopgrid replay` rebuilds the environment from the
header, re-applies the logged actions, verifies the reward stream, and
renders each tick.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from . import world as w


@dataclass
class ReplayHeader:
    task: str
    layout_seed: int
    episode_seed: int
    width: int
    height: int
    horizon: int


class ReplayRecorder:
    """Collects per-tick lines for one episode; drivers call ``record``
    after every step_joint."""

    def __init__(self, env: w.Environment, episode_seed: int):
        self.header = ReplayHeader(
            env.task, env.layout_seed, episode_seed,
            env.config.width, env.config.height, env.config.horizon,
        )
        self.lines: list[str] = []

    def record(self, state: w.WorldState, actions, outcome: w.StepOutcome) -> None:
        a0, a1 = state.agents
        events = ";".join(str(e) for e in outcome.events) or "-"
        self.lines.append(
            f"{state.tick - 1} {a0.pos[0]} {a0.pos[1]} {w.HEADING_NAMES[a0.heading]} "
            f"{a1.pos[0]} {a1.pos[1]} {w.HEADING_NAMES[a1.heading]} "
            f"{int(actions[0])} {int(actions[1])} {outcome.reward:.10g} {events}"
        )

    def dump(self, path) -> None:
        h = self.header
        text = (
            "# coopgrid replay v1\n"
            f"# task={h.task} layout_seed={h.layout_seed} episode_seed={h.episode_seed} "
            f"width={h.width} height={h.height} horizon={h.horizon}\n"
            + "\n".join(self.lines)
            + "\n"
        )
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text, encoding="utf-8")


def parse_replay(path) -> tuple[ReplayHeader, list[dict]]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if len(lines) < 2 or not lines[0].startswith("# coopgrid replay"):
        raise ValueError(f"{path} is not a coopgrid replay log")
    kv = dict(item.split("=") for item in lines[1].lstrip("# ").split(" "))
    header = ReplayHeader(
        task=kv["task"],
        layout_seed=int(kv["layout_seed"]),
        episode_seed=int(kv["episode_seed"]),
        width=int(kv["width"]),
        height=int(kv["height"]),
        horizon=int(kv["horizon"]),
    )
    ticks = []
    for line in lines[2:]:
        if not line.strip():
            continue
        f = line.split(" ")
        ticks.append(
            {
                "tick": int(f[0]),
                "a0": (int(f[1]), int(f[2]), f[3]),
                "a1": (int(f[4]), int(f[5]), f[6]),
                "actions": (int(f[7]), int(f[8])),
                "reward": float(f[9]),
                "events": f[10],
            }
        )
    return header, ticks


def render_ascii(env: w.Environment, state: w.WorldState) -> str:
    """One frame: walls '#', receptacles A-F (lowercase while closed),
    goals '*', objects 'o'/'q', agents '0'/'1' (uppercased when holding)."""
    grid = [["." for _ in range(env.config.width)] for _ in range(env.config.height)]
    for (x, y) in env.layout.walls:
        grid[y][x] = "#"
    for rec in env.layout.receptacles:
        ch = chr(ord("A") + rec.id)
        if not state.recep_open[rec.id]:
            ch = ch.lower()
        grid[rec.cell[1]][rec.cell[0]] = ch
    for cell in state.episode.goal_cells:
        x, y = cell
        if grid[y][x] == ".":
            grid[y][x] = "*"
    for i, sym in enumerate(("o", "q")):
        cell = w._object_cell(state, env.layout, i)
        if cell is not None:
            grid[cell[1]][cell[0]] = sym
    for i, ag in enumerate(state.agents):
        sym = str(i)
        if ag.holding is not None:
            sym = "H" if i == 0 else "G"
        grid[ag.pos[1]][ag.pos[0]] = sym
    rows = ["".join(r) for r in grid]
    status = (
        f"tick={state.tick} open={''.join('1' if f else '0' for f in state.recep_open)} "
        f"holding={[a.holding for a in state.agents]} done={state.done} success={state.success}"
    )
    return "\n".join(rows + [status])


def replay_episode(path, out=print) -> bool:
    """Re-simulate a logged episode, rendering each tick; returns True when
    the logged rewards match the re-simulated ones exactly."""
    header, ticks = parse_replay(path)
    env = w.create_env(
        header.task,
        header.layout_seed,
        w.WorldConfig(width=header.width, height=header.height, horizon=header.horizon),
    )
    state, _ = env.reset(header.episode_seed)
    out(render_ascii(env, state))
    ok = True
    for row in ticks:
        outcome = env.step_joint(state, row["actions"], obs_mask=(False, False))
        out(render_ascii(env, state))
        if f"{outcome.reward:.10g}" != f"{row['reward']:.10g}":
            ok = False
    return ok
