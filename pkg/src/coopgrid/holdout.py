"""Unseen-partner evaluation set: scripted plan agents plus jointly trained
policy pairs.

Per task the scripted side is one agent that only no-ops and two agents
that each rearrange exactly one of the objects.  The learned side is both
members of independently seeded gtcoord runs (4 seeds -> 8 policies), whose
seeds must be disjoint from the evaluated coordination agent's.  A registry
JSON file lists every holdout so the eval harness can load the set.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from . import checkpoints as ckpt
from . import scripted
from .scripted import scripted_step  # noqa: F401  (holdout agents step through this)
from . import world as w
from .nets import ParamBank

SCRIPTED_KINDS = ("noop", "object0", "object1")


@dataclass
class HoldoutAgent:
    name: str
    kind: str  # "scripted" | "learned"
    plan_id: str | None = None  # for scripted agents
    checkpoint: str | None = None  # for learned agents
    seed: int | None = None  # training seed of a learned agent
    bank: ParamBank | None = None

    def make_plan(self, env: w.Environment) -> scripted.ScriptedPlan:
        if self.kind != "scripted":
            raise ValueError(f"{self.name} is not scripted")
        if self.plan_id == "noop":
            return scripted.noop_plan()
        if self.plan_id == "object0":
            return scripted.object_plan(env, 0)
        if self.plan_id == "object1":
            return scripted.object_plan(env, 1)
        if self.plan_id == "full":
            return scripted.full_task_plan(env)
        raise ValueError(f"unknown plan id {self.plan_id!r}")


def build_scripted_holdouts(task: str) -> list[HoldoutAgent]:
    """The three scripted holdouts: a no-op agent and one single-object
    agent per object."""
    if task not in w.TASKS:
        raise ValueError(f"unknown task {task!r}")
    return [
        HoldoutAgent(name=f"scripted_{kind}", kind="scripted", plan_id=kind)
        for kind in SCRIPTED_KINDS
    ]


def full_task_agent() -> HoldoutAgent:
    """Scripted agent that completes the whole task alone (the environment
    sanity oracle; not part of the holdout set)."""
    return HoldoutAgent(name="scripted_full", kind="scripted", plan_id="full")


def build_learned_holdouts(task: str, run_dirs: list, seeds: list[int] | None = None) -> list[HoldoutAgent]:
    """Both members of each gtcoord run directory, frozen.

    ``run_dirs`` must point at completed gtcoord runs for this task; their
    final m0/m1 checkpoints become 2 holdout agents each.
    """
    agents: list[HoldoutAgent] = []
    for run_dir in run_dirs:
        run_dir = Path(run_dir)
        report = run_dir / "report.json"
        seed = None
        if report.exists():
            payload = json.loads(report.read_text(encoding="utf-8"))
            seed = payload.get("seed")
            if payload.get("task") not in (None, task):
                raise ValueError(
                    f"{run_dir} trained on task {payload.get('task')!r}, expected {task!r}"
                )
        for m in (0, 1):
            path = run_dir / "checkpoints" / f"stage1_final_m{m}.ckpt"
            if not path.exists():
                raise FileNotFoundError(f"missing gtcoord checkpoint {path}")
            bank, _, _ = ckpt.load(path)
            agents.append(
                HoldoutAgent(
                    name=f"learned_s{seed if seed is not None else '?'}_m{m}",
                    kind="learned",
                    checkpoint=str(path),
                    seed=seed,
                    bank=bank,
                )
            )
    return agents


def build_holdout_set(task: str, gtcoord_run_dirs: list) -> list[HoldoutAgent]:
    """Scripted and learned holdouts together (3 + 2 per run)."""
    return build_scripted_holdouts(task) + build_learned_holdouts(task, gtcoord_run_dirs)


def write_registry(path, task: str, agents: list[HoldoutAgent]) -> None:
    payload = {
        "task": task,
        "agents": [
            {
                "name": a.name,
                "kind": a.kind,
                "plan": a.plan_id,
                "checkpoint": a.checkpoint,
                "seed": a.seed,
            }
            for a in agents
        ],
    }
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_registry(path) -> tuple[str, list[HoldoutAgent]]:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    agents = []
    for entry in payload["agents"]:
        agent = HoldoutAgent(
            name=entry["name"],
            kind=entry["kind"],
            plan_id=entry.get("plan"),
            checkpoint=entry.get("checkpoint"),
            seed=entry.get("seed"),
        )
        if agent.kind == "learned":
            agent.bank, _, _ = ckpt.load(agent.checkpoint)
        agents.append(agent)
    return payload["task"], agents


def check_seed_disjoint(agents: list[HoldoutAgent], coord_seed: int) -> None:
    """Learned holdout training seeds must not include the coordination
    agent's seed."""
    clashes = [a.name for a in agents if a.kind == "learned" and a.seed == coord_seed]
    if clashes:
        raise ValueError(
            f"holdout agents {clashes} were trained with seed {coord_seed}, "
            "which is the coordination agent's seed"
        )
