"""Evaluation: pairing runs, ZSC and train-pop success, cooperation
efficiency gain, sub-goal completion analysis, and report files.

Episodes run greedily (argmax) on layouts whose seeds live in an
``eval-layout`` namespace disjoint from training layouts; the default 100
episodes per pairing spread over 20 layouts x 5 object configurations.
Efficiency gain compares how fast a partner finishes alongside the
evaluated agent versus alongside a no-op partner:
100 * (t_solo - t_pair) / t_solo, means over successful episodes only.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nets
from . import scripted
from . import world as w
from .holdout import HoldoutAgent
from .replay import ReplayRecorder
from .runio import fmt_num, manifest_add, write_json
from .seeding import derive_seed

EVAL_LAYOUT_GROUP = 5  # episodes per eval layout


class EvalError(Exception):
    pass


@dataclass
class EvalAgent:
    """A frozen participant: either a policy bank or a scripted plan."""

    name: str
    kind: str  # "policy" | "scripted"
    bank: nets.ParamBank | None = None
    layout: dict | None = None
    z: int | None = None
    latent_dim: int = 0
    plan_id: str | None = None
    group: str = ""  # reporting split: "scripted" / "learned" / "trainpop" / ""


def noop_agent() -> EvalAgent:
    return EvalAgent(name="scripted_noop", kind="scripted", plan_id="noop", group="scripted")


def agent_from_holdout(h: HoldoutAgent) -> EvalAgent:
    if h.kind == "scripted":
        return EvalAgent(name=h.name, kind="scripted", plan_id=h.plan_id, group="scripted")
    return EvalAgent(name=h.name, kind="policy", bank=h.bank, group="learned")


def agent_from_member(pop, member: int, name: str | None = None) -> EvalAgent:
    ref = pop.members[member]
    return EvalAgent(
        name=name or f"member{member}",
        kind="policy",
        bank=pop.banks[ref.bank_index],
        layout=ref.layout,
        z=ref.z,
        latent_dim=pop.latent_dim,
        group="trainpop",
    )


def _plan_for(agent: EvalAgent, env: w.Environment) -> scripted.ScriptedPlan:
    return HoldoutAgent(agent.name, "scripted", plan_id=agent.plan_id).make_plan(env)


@dataclass
class EpisodeRecord:
    success: bool
    ticks: int
    collision: bool
    ret: float
    events_by_agent: tuple[set, set]


def run_episode(
    env: w.Environment,
    episode_seed: int,
    agents: tuple[EvalAgent, EvalAgent],
    mode: str = "argmax",
    rng: np.random.Generator | None = None,
    recorder: ReplayRecorder | None = None,
) -> EpisodeRecord:
    for agent in agents:
        if agent.kind == "policy":
            expected = int(agent.bank.meta.get("obs_dim", env.obs_dim))
            if expected != env.obs_dim:
                raise EvalError(
                    f"{agent.name} expects {expected}-dim observations but the "
                    f"environment produces {env.obs_dim} (oracle vs standard mismatch)"
                )
    state, obs = env.reset(episode_seed)
    hidden = [
        np.zeros(a.bank.meta.get("hidden", 64)) if a.kind == "policy" else None
        for a in agents
    ]
    plans = [
        _plan_for(a, env) if a.kind == "scripted" else None for a in agents
    ]
    need = (True, True)
    events: tuple[set, set] = (set(), set())
    ret = 0.0
    ticks = 0
    actions = [w.ACT_NOOP, w.ACT_NOOP]
    while not state.done:
        for i, agent in enumerate(agents):
            if not need[i]:
                continue
            if agent.kind == "scripted":
                actions[i] = scripted.scripted_step(plans[i], env, state, i)
            else:
                out = nets.forward_policy(agent.bank, obs[i], agent.z, hidden[i], agent.layout)
                hidden[i] = out.next_hidden
                actions[i], _ = nets.sample_action(out.logits, rng, mode=mode)
        outcome = env.step_joint(state, actions, obs_mask=(False, False))
        if recorder is not None:
            recorder.record(state, actions, outcome)
        ret += outcome.reward
        ticks += 1
        for ev in outcome.events:
            events[ev.agent].add(ev.key)
        need = outcome.decision_flags
        if not state.done:
            for i, agent in enumerate(agents):
                if need[i] and agent.kind == "policy":
                    obs[i] = env.observe(state, i)
    collision = not state.success and state.tick < env.config.horizon
    return EpisodeRecord(state.success, ticks, collision, ret, events)


@dataclass
class PartnerRecord:
    partner: str
    group: str
    episodes: int
    successes: int
    success_rate: float
    mean_steps_success: float | None
    collision_rate: float
    coord_event_rates: dict  # event kind -> fraction of episodes coord did it
    efficiency_gain: float | None = None
    t_solo: float | None = None
    t_pair: float | None = None

    def to_json(self) -> dict:
        return {
            "partner": self.partner,
            "group": self.group,
            "episodes": self.episodes,
            "successes": self.successes,
            "success_rate": self.success_rate,
            "mean_steps_success": self.mean_steps_success,
            "collision_rate": self.collision_rate,
            "coord_event_rates": self.coord_event_rates,
            "efficiency_gain": self.efficiency_gain,
            "t_solo": self.t_solo,
            "t_pair": self.t_pair,
        }


def _eval_env(task: str, eval_seed: int, layout_index: int, wc: w.WorldConfig,
              cache: dict) -> w.Environment:
    layout_seed = derive_seed(eval_seed, "eval-layout", layout_index)
    if layout_seed not in cache:
        cache[layout_seed] = w.create_env(task, layout_seed, wc)
    return cache[layout_seed]


def evaluate_pairing(
    coord: EvalAgent,
    partner: EvalAgent,
    task: str,
    n_episodes: int = 100,
    eval_seed: int = 0,
    world_config: w.WorldConfig | None = None,
    replay_dir=None,
) -> PartnerRecord:
    """Greedy episodes of (coord, partner) over unseen eval layouts."""
    wc = world_config or w.WorldConfig()
    cache: dict = {}
    succ: list[EpisodeRecord] = []
    records: list[EpisodeRecord] = []
    for e in range(n_episodes):
        env = _eval_env(task, eval_seed, e // EVAL_LAYOUT_GROUP, wc, cache)
        episode_seed = derive_seed(eval_seed, "eval-ep", e)
        recorder = ReplayRecorder(env, episode_seed) if replay_dir is not None else None
        rec = run_episode(env, episode_seed, (coord, partner), recorder=recorder)
        if recorder is not None:
            from pathlib import Path

            path = Path(replay_dir) / f"{coord.name}__{partner.name}__ep{e:03d}.log"
            recorder.dump(path)
        records.append(rec)
        if rec.success:
            succ.append(rec)
    n = len(records)
    rates = {
        kind: float(np.mean([1.0 if kind in r.events_by_agent[0] else 0.0 for r in records]))
        for kind in w.EVENT_KINDS
    }
    return PartnerRecord(
        partner=partner.name,
        group=partner.group,
        episodes=n,
        successes=len(succ),
        success_rate=len(succ) / n if n else 0.0,
        mean_steps_success=float(np.mean([r.ticks for r in succ])) if succ else None,
        collision_rate=float(np.mean([1.0 if r.collision else 0.0 for r in records])) if n else 0.0,
        coord_event_rates=rates,
    )


def efficiency_gain(t_solo: float, t_pair: float) -> float:
    """Percent speedup of the partner when the evaluated agent helps:
    positive when the pair finishes faster than the partner alone."""
    if t_solo is None or t_pair is None:
        raise ValueError("efficiency gain needs successful episodes on both sides")
    if t_solo <= 0:
        raise ValueError("t_solo must be positive")
    return 100.0 * (t_solo - t_pair) / t_solo


@dataclass
class EvalReport:
    method: str
    task: str
    kind: str  # "zsc" | "trainpop"
    partners: list
    aggregates: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "method": self.method,
            "task": self.task,
            "kind": self.kind,
            "partners": [p.to_json() for p in self.partners],
            "aggregates": self.aggregates,
        }


def _weighted_success(records: list[PartnerRecord]) -> float | None:
    total = sum(r.episodes for r in records)
    if total == 0:
        return None
    return sum(r.successes for r in records) / total


def run_eval(
    method: str,
    coord: EvalAgent,
    partners: list[EvalAgent],
    task: str,
    kind: str,
    n_episodes: int = 100,
    eval_seed: int = 0,
    world_config: w.WorldConfig | None = None,
    with_efficiency: bool = True,
    replay_dir=None,
    threads: int = 1,
) -> EvalReport:
    """Evaluate coord against each partner; aggregate success rates
    (episode-weighted) and efficiency gains (weighted by pair successes).

    Partners evaluate independently, so ``threads > 1`` fans them out over a
    thread pool; per-partner results are identical either way (frozen
    policies, per-episode seeds)."""
    if not partners:
        raise EvalError("no partners to evaluate against")

    def one(partner: EvalAgent) -> PartnerRecord:
        rec = evaluate_pairing(
            coord, partner, task, n_episodes, eval_seed, world_config, replay_dir
        )
        if with_efficiency:
            solo = evaluate_pairing(
                partner, noop_agent(), task, n_episodes, eval_seed, world_config
            )
            rec.t_solo = solo.mean_steps_success
            rec.t_pair = rec.mean_steps_success
            if rec.t_solo is not None and rec.t_pair is not None:
                rec.efficiency_gain = efficiency_gain(rec.t_solo, rec.t_pair)
        return rec

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            records = list(pool.map(one, partners))
    else:
        records = [one(p) for p in partners]

    agg = {"success": _weighted_success(records)}
    for group in ("scripted", "learned"):
        sub = [r for r in records if r.group == group]
        agg[f"success_{group}"] = _weighted_success(sub) if sub else None
    gains = [(r.efficiency_gain, r.successes) for r in records if r.efficiency_gain is not None]
    if gains:
        weights = np.array([g[1] for g in gains], dtype=np.float64)
        vals = np.array([g[0] for g in gains], dtype=np.float64)
        agg["efficiency_gain"] = float((vals * weights).sum() / weights.sum()) if weights.sum() else None
    else:
        agg["efficiency_gain"] = None
    return EvalReport(method, task, kind, records, agg)


# --------------------------------------------------------------------- #
# sub-goal analysis

@dataclass
class SubgoalMatrix:
    method: str
    task: str
    rows: tuple  # event kinds
    partners: list[str]
    cells: np.ndarray  # (len(rows), len(partners)) completion probabilities

    def to_json(self) -> dict:
        return {
            "method": self.method,
            "task": self.task,
            "rows": list(self.rows),
            "partners": self.partners,
            "cells": [[float(v) for v in row] for row in self.cells],
        }


def subgoal_matrix(
    coord: EvalAgent,
    partners: list[EvalAgent],
    task: str,
    method: str = "",
    n_episodes: int = 100,
    eval_seed: int = 0,
    world_config: w.WorldConfig | None = None,
) -> SubgoalMatrix:
    """p(coord completed event E_i | partner) per partner column."""
    if not partners:
        raise EvalError("no partners for the sub-goal analysis")
    cells = np.zeros((len(w.EVENT_KINDS), len(partners)))
    for j, partner in enumerate(partners):
        rec = evaluate_pairing(coord, partner, task, n_episodes, eval_seed, world_config)
        for i, kind in enumerate(w.EVENT_KINDS):
            cells[i, j] = rec.coord_event_rates[kind]
    return SubgoalMatrix(method, task, w.EVENT_KINDS, [p.name for p in partners], cells)


# --------------------------------------------------------------------- #
# report emission

SUMMARY_COLUMNS = (
    "method", "task", "train_pop_success", "zsc_success",
    "zsc_scripted_success", "zsc_learned_success", "efficiency_gain",
)


def _heatmap_svg(matrix: SubgoalMatrix) -> str:
    cell = 46
    left, top = 90, 70
    width = left + cell * len(matrix.partners) + 10
    height = top + cell * len(matrix.rows) + 10
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<text x="4" y="16" font-size="13">{matrix.method} / {matrix.task}</text>',
    ]
    for j, name in enumerate(matrix.partners):
        x = left + j * cell + cell // 2
        out.append(
            f'<text x="{x}" y="{top - 8}" font-size="9" text-anchor="middle">{name[:14]}</text>'
        )
    for i, kind in enumerate(matrix.rows):
        y = top + i * cell + cell // 2 + 4
        out.append(f'<text x="{left - 6}" y="{y}" font-size="11" text-anchor="end">{kind}</text>')
        for j in range(len(matrix.partners)):
            v = float(matrix.cells[i, j])
            shade = int(round(255 * (1.0 - v)))
            x, y0 = left + j * cell, top + i * cell
            out.append(
                f'<rect x="{x}" y="{y0}" width="{cell - 2}" height="{cell - 2}" '
                f'fill="rgb({shade},{shade},255)" stroke="black" stroke-width="0.5"/>'
            )
            tcol = "black" if v < 0.6 else "white"
            out.append(
                f'<text x="{x + (cell - 2) / 2}" y="{y0 + cell / 2 + 3}" font-size="10" '
                f'text-anchor="middle" fill="{tcol}">{v:.2f}</text>'
            )
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_report(reports: list[EvalReport], matrices: list[SubgoalMatrix], out_dir) -> list[str]:
    """Write report.json, summary.csv, and one SVG heatmap per matrix.
    Returns the relative paths written."""
    from pathlib import Path

    for rep in reports:
        if not rep.partners:
            raise EvalError(f"report for {rep.method}/{rep.task} has no partners")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    payload = {
        "schema_version": 1,
        "reports": [r.to_json() for r in reports],
        "matrices": [m.to_json() for m in matrices],
    }
    write_json(out_dir / "report.json", payload)
    written = ["report.json"]

    merged: dict = {}
    for rep in reports:
        row = merged.setdefault((rep.method, rep.task), {})
        if rep.kind == "trainpop":
            row["train_pop_success"] = rep.aggregates.get("success")
        else:
            row["zsc_success"] = rep.aggregates.get("success")
            row["zsc_scripted_success"] = rep.aggregates.get("success_scripted")
            row["zsc_learned_success"] = rep.aggregates.get("success_learned")
        if rep.aggregates.get("efficiency_gain") is not None and rep.kind == "zsc":
            row["efficiency_gain"] = rep.aggregates["efficiency_gain"]
    lines = [",".join(SUMMARY_COLUMNS)]
    for (method, task) in sorted(merged):
        row = merged[(method, task)]
        values = [method, task] + [
            fmt_num(row.get(c)) if row.get(c) is not None else ""
            for c in SUMMARY_COLUMNS[2:]
        ]
        lines.append(",".join(str(v) for v in values))
    (out_dir / "summary.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    written.append("summary.csv")

    for m in matrices:
        name = f"subgoals_{m.method or 'agent'}_{m.task}.svg"
        (out_dir / name).write_text(_heatmap_svg(m), encoding="utf-8")
        written.append(name)
    manifest_add(out_dir, *written)
    return written
