"""Command-line entry point.

Subcommands: train, eval-zsc, eval-trainpop, analyze-subgoals, replay,
report.  Exit codes: 0 success, 1 usage error, 2 runtime failure.  Every
command takes a lock on its run directory, writes a config snapshot when it
trains, and registers the files it produces in the directory manifest.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from filelock import FileLock, Timeout


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 1, not argparse's 2
        raise UsageError(message)


def _out_root() -> Path:
    return Path(os.environ.get("COOPGRID_OUT", "runs"))


def _build_parser() -> _Parser:
    p = _Parser(prog="coopgrid", description=__doc__)
    p.add_argument("--threads", type=int, default=1, help="worker cap for eval episodes")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="run stage-1 (and stage-2) training")
    t.add_argument("--algo", required=True)
    t.add_argument("--task", required=True)
    t.add_argument("--seed", type=int, default=1)
    t.add_argument("--config", help="INI config file")
    t.add_argument("--out", help="run directory (default under $COOPGRID_OUT)")
    t.add_argument("--deterministic", action="store_true", default=None,
                   help="force sequential, bit-reproducible execution (default on)")
    t.add_argument("--stage", choices=("all", "1", "2"), default="all")
    t.add_argument("--resume", action="store_true",
                   help="continue in an existing run directory")

    for name in ("eval-zsc", "analyze-subgoals"):
        e = sub.add_parser(name)
        e.add_argument("--coord", required=True,
                       help="run directory or policy checkpoint of the evaluated agent")
        e.add_argument("--holdouts", required=True,
                       help="'scripted', a registry json, or comma-joined gtcoord run dirs")
        e.add_argument("--episodes", type=int, default=100)
        e.add_argument("--eval-seed", type=int, default=0)
        e.add_argument("--out")
        e.add_argument("--replay", action="store_true", help="dump per-episode replay logs")

    e = sub.add_parser("eval-trainpop")
    e.add_argument("--run", required=True, help="training run directory")
    e.add_argument("--episodes", type=int, default=100)
    e.add_argument("--eval-seed", type=int, default=0)
    e.add_argument("--out")
    e.add_argument("--replay", action="store_true")

    r = sub.add_parser("replay", help="render a logged episode as ASCII frames")
    r.add_argument("--episode-log", required=True)

    rp = sub.add_parser("report", help="merge eval outputs into one summary")
    rp.add_argument("--runs", nargs="+", required=True, help="eval output directories")
    rp.add_argument("--out", required=True)
    return p


# ------------------------------------------------------------------ #
# helpers

def _load_run_config(args):
    from .config import RunConfig, load_config

    cfg = load_config(args.config) if args.config else RunConfig()
    cfg.algo = args.algo
    cfg.task = args.task
    cfg.seed = args.seed
    if args.deterministic is not None:
        cfg.deterministic = args.deterministic
    cfg.validate()
    return cfg


def _coord_agent(coord_arg: str):
    """Resolve --coord to (EvalAgent, RunConfig-or-None, seed-or-None)."""
    import json

    from . import checkpoints as ckpt
    from .config import load_config
    from .evalkit import EvalAgent

    path = Path(coord_arg)
    if path.is_dir():
        cfg = load_config(path / "config.ini")
        seed = cfg.seed
        report = path / "report.json"
        if report.exists():
            seed = json.loads(report.read_text(encoding="utf-8")).get("seed", seed)
        candidates = [
            path / "checkpoints" / "stage2_final_m0.ckpt",
            path / "checkpoints" / "stage1_final_m0.ckpt",
        ]
        for c in candidates:
            if c.exists():
                bank, _, _ = ckpt.load(c)
                return EvalAgent(name=f"coord_{cfg.algo}_s{seed}", kind="policy", bank=bank), cfg, seed
        raise FileNotFoundError(f"no final checkpoint found under {path}/checkpoints")
    bank, _, _ = ckpt.load(path)
    return EvalAgent(name=path.stem, kind="policy", bank=bank), None, None


def _holdout_agents(holdouts_arg: str, task: str, out_dir: Path):
    from . import holdout as ho

    if holdouts_arg == "scripted":
        return [*ho.build_scripted_holdouts(task)]
    path = Path(holdouts_arg)
    if path.suffix == ".json" and path.exists():
        reg_task, agents = ho.load_registry(path)
        if reg_task != task:
            raise ValueError(f"holdout registry is for task {reg_task!r}, not {task!r}")
        return agents
    run_dirs = [Path(p) for p in holdouts_arg.split(",") if p]
    agents = ho.build_holdout_set(task, run_dirs)
    ho.write_registry(out_dir / "holdouts.json", task, agents)
    return agents


def _world_config_for(cfg):
    return cfg.world_config()


def _default_out(kind: str, *parts) -> Path:
    return _out_root() / ("-".join([kind, *[str(p) for p in parts]]))


# ------------------------------------------------------------------ #
# commands

def _cmd_train(args) -> int:
    from .pipeline import train_full, train_stage1, train_stage2, load_stage1_artifacts
    from .config import base_algo, save_config
    from .runio import manifest_add, write_json

    cfg = _load_run_config(args)
    out = Path(args.out) if args.out else _default_out("train", cfg.algo, cfg.task, f"s{cfg.seed}")
    out.mkdir(parents=True, exist_ok=True)
    with _lock(out):
        if args.stage == "all" and not args.resume:
            train_full(cfg, out)
        else:
            save_config(cfg, out / "config.ini")
            manifest_add(out, "config.ini")
            stage1_done = (out / "checkpoints" / "stage1_final_m0.ckpt").exists()
            if args.stage in ("all", "1") and not (args.resume and stage1_done):
                train_stage1(cfg, out)
            if args.stage in ("all", "2") and base_algo(cfg.algo) != "gtcoord":
                art = load_stage1_artifacts(cfg, out)
                train_stage2(cfg, out, art)
            write_json(out / "report.json", {"algo": cfg.algo, "task": cfg.task, "seed": cfg.seed})
            manifest_add(out, "report.json")
    print(f"run directory: {out}")
    return 0


def _cmd_eval_zsc(args) -> int:
    from .evalkit import agent_from_holdout, emit_report, run_eval
    from .holdout import check_seed_disjoint

    coord, cfg, seed = _coord_agent(args.coord)
    if cfg is None:
        raise UsageError("--coord must be a run directory (config needed for the task)")
    out = Path(args.out) if args.out else _default_out("eval-zsc", cfg.algo, cfg.task, f"s{cfg.seed}")
    out.mkdir(parents=True, exist_ok=True)
    with _lock(out):
        agents = _holdout_agents(args.holdouts, cfg.task, out)
        if seed is not None:
            check_seed_disjoint(agents, seed)
        partners = [agent_from_holdout(a) for a in agents]
        replay_dir = out / "replays" if args.replay else None
        report = run_eval(
            coord.name, coord, partners, cfg.task, "zsc",
            n_episodes=args.episodes, eval_seed=args.eval_seed,
            world_config=_world_config_for(cfg), replay_dir=replay_dir,
            threads=max(1, args.threads),
        )
        emit_report([report], [], out)
    print(f"zsc success {report.aggregates['success']:.4f} -> {out}")
    return 0


def _cmd_eval_trainpop(args) -> int:
    from .config import load_config
    from .evalkit import agent_from_member, emit_report, run_eval
    from .pipeline import load_stage1_artifacts

    run_dir = Path(args.run)
    cfg = load_config(run_dir / "config.ini")
    coord, _, _ = _coord_agent(str(run_dir))
    art = load_stage1_artifacts(cfg, run_dir)
    partners = [agent_from_member(art.population, m) for m in range(art.population.n_members)]
    out = Path(args.out) if args.out else _default_out("eval-trainpop", cfg.algo, cfg.task, f"s{cfg.seed}")
    out.mkdir(parents=True, exist_ok=True)
    with _lock(out):
        replay_dir = out / "replays" if args.replay else None
        report = run_eval(
            coord.name, coord, partners, cfg.task, "trainpop",
            n_episodes=args.episodes, eval_seed=args.eval_seed,
            world_config=_world_config_for(cfg), replay_dir=replay_dir,
            threads=max(1, args.threads),
        )
        emit_report([report], [], out)
    print(f"train-pop success {report.aggregates['success']:.4f} -> {out}")
    return 0


def _cmd_analyze_subgoals(args) -> int:
    from .evalkit import agent_from_holdout, emit_report, subgoal_matrix

    coord, cfg, seed = _coord_agent(args.coord)
    if cfg is None:
        raise UsageError("--coord must be a run directory (config needed for the task)")
    out = Path(args.out) if args.out else _default_out("subgoals", cfg.algo, cfg.task, f"s{cfg.seed}")
    out.mkdir(parents=True, exist_ok=True)
    with _lock(out):
        agents = _holdout_agents(args.holdouts, cfg.task, out)
        partners = [agent_from_holdout(a) for a in agents]
        matrix = subgoal_matrix(
            coord, partners, cfg.task, method=coord.name,
            n_episodes=args.episodes, eval_seed=args.eval_seed,
            world_config=_world_config_for(cfg),
        )
        emit_report([], [matrix], out)
    print(f"sub-goal matrix -> {out}")
    return 0


def _cmd_replay(args) -> int:
    from .replay import replay_episode

    ok = replay_episode(args.episode_log)
    if not ok:
        print("warning: logged rewards do not match the re-simulated episode", file=sys.stderr)
        return 2
    return 0


def _cmd_report(args) -> int:
    import json

    from .evalkit import EvalReport, PartnerRecord, SubgoalMatrix, emit_report
    import numpy as np

    reports, matrices = [], []
    for d in args.runs:
        payload = json.loads((Path(d) / "report.json").read_text(encoding="utf-8"))
        for rj in payload.get("reports", []):
            partners = [PartnerRecord(**p) for p in rj["partners"]]
            reports.append(EvalReport(rj["method"], rj["task"], rj["kind"], partners, rj["aggregates"]))
        for mj in payload.get("matrices", []):
            matrices.append(
                SubgoalMatrix(mj["method"], mj["task"], tuple(mj["rows"]),
                              mj["partners"], np.asarray(mj["cells"]))
            )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with _lock(out):
        emit_report(reports, matrices, out)
    print(f"merged {len(reports)} reports, {len(matrices)} matrices -> {out}")
    return 0


def _lock(run_dir: Path) -> FileLock:
    lock = FileLock(str(Path(run_dir) / ".lock"), timeout=1.0)
    return lock


_COMMANDS = {
    "train": _cmd_train,
    "eval-zsc": _cmd_eval_zsc,
    "eval-trainpop": _cmd_eval_trainpop,
    "analyze-subgoals": _cmd_analyze_subgoals,
    "replay": _cmd_replay,
    "report": _cmd_report,
}


def run_command(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    try:
        return _COMMANDS[args.command](args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except Timeout:
        print("run directory is locked by another command", file=sys.stderr)
        return 2
    except Exception as e:  # runtime failure -> exit 2 with the message
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run_command())


if __name__ == "__main__":
    main()
