"""Two-stage training orchestration.

Stage 1 trains a population (or the latent-conditioned behavior policy) by
pairing members per the algorithm's schedule, attaching diversity rewards
where applicable, and running PPO updates; the discriminator trains
alongside from its replay buffer.  Stage 2 freezes the stage-1 policies and
trains a fresh coordination agent against partners drawn from them (or from
the start/middle/end checkpoint pool for FCP).  The jointly trained oracle
(gtcoord) runs a single stage where both parameter sets update together.

Run directory layout:

    config.ini  manifest.json  report.json
    checkpoints/stage{1,2}_pct{000,050,100}_m*.ckpt, *_final_m*.ckpt
    logs/stage1.csv, logs/stage2.csv
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import checkpoints as ckpt
from . import diversity as dv
from . import nets
from . import world as w
from .config import RunConfig, base_algo
from .population import (
    PairingSchedule,
    Population,
    PopulationSpec,
    build_population,
    fcp_checkpoint_set,
)
from .ppo import ActorSpec, JsdSpec, PpoConfig, RolloutPool, collect_rollouts, compute_gae, ppo_update, build_group
from .runio import CsvLog, manifest_add, write_json
from .seeding import derive_seed, make_rng


class TrainAbort(Exception):
    """Training hit a non-finite loss; diagnostics were dumped."""


@dataclass
class StageArtifacts:
    run_dir: Path
    population: Population
    disc: nets.ParamBank | None
    checkpoint_paths: dict  # fraction -> [relative path per member]
    updates: int
    ticks: int
    rolling_success: float


STAGE1_COLUMNS = (
    "update", "ticks", "episodes", "mean_return", "success_rate",
    "policy_loss", "value_loss", "entropy", "clip_frac",
    "div_reward_mean", "disc_ce", "disc_acc", "heldout_disc_acc",
)
STAGE2_COLUMNS = (
    "update", "ticks", "episodes", "mean_return", "success_rate",
    "policy_loss", "value_loss", "entropy", "clip_frac", "partner",
)


def training_layout_seed(cfg: RunConfig, index: int = 0) -> int:
    root = cfg.layout_seed if cfg.layout_seed >= 0 else cfg.seed
    return derive_seed(root, "train-layout", index % cfg.train_layouts)


def make_training_envs(cfg: RunConfig) -> list[w.Environment]:
    wc = cfg.world_config()
    return [
        w.create_env(cfg.task, training_layout_seed(cfg, i), wc)
        for i in range(cfg.ppo.envs_per_update)
    ]


def member_actor(
    pop: Population,
    member: int,
    mode: str = "sample",
    store: bool = True,
    collect_windows: bool = False,
    with_jsd: bool = False,
) -> ActorSpec:
    ref = pop.members[member]
    jsd = None
    if with_jsd:
        jsd = JsdSpec(
            banks=[pop.banks[m.bank_index] for m in pop.members],
            layouts=[m.layout for m in pop.members],
            own_index=member,
        )
    return ActorSpec(
        bank=pop.banks[ref.bank_index],
        layout=ref.layout,
        z=ref.z,
        latent_dim=pop.latent_dim,
        mode=mode,
        store=store,
        collect_windows=collect_windows,
        label=ref.label,
        jsd=jsd,
    )


def _checkpoint_population(run_dir: Path, stage: str, tag: str, pop: Population,
                           rng_state, updates: int) -> list[str]:
    rels = []
    for m, bank in enumerate(pop.banks):
        rel = f"checkpoints/{stage}_{tag}_m{m}.ckpt"
        ckpt.save(run_dir / rel, bank, rng_state, updates)
        rels.append(rel)
    manifest_add(run_dir, *rels)
    return rels


def _finite(*values) -> bool:
    return all(np.isfinite(v) for v in values if isinstance(v, float))


def _abort_dump(run_dir: Path, stage: str, update: int, stats: dict) -> None:
    write_json(run_dir / f"abort_{stage}.json", {"update": update, "stats": stats})
    manifest_add(run_dir, f"abort_{stage}.json")


def train_stage1(cfg: RunConfig, run_dir, stop_when=None) -> StageArtifacts:
    """Population / behavior-policy training (Stage 1), or the full joint
    training loop when algo is gtcoord.

    ``stop_when(update_idx, rolling_success)`` may end training early; the
    0/50/100% checkpoints are still all written.
    """
    run_dir = Path(run_dir)
    algo = base_algo(cfg.algo)
    envs = make_training_envs(cfg)
    obs_dim, n_actions = envs[0].obs_dim, envs[0].n_actions
    horizon = cfg.horizon

    spec = cfg.population_spec()
    pop = build_population(spec, obs_dim, n_actions, cfg.hidden, derive_seed(cfg.seed, "stage1-init"))
    if algo == "trajedi":
        pop.alpha = spec.alpha  # JSD bonus weight
    gtcoord = algo == "gtcoord"

    disc = None
    buffer = None
    disc_rng = None
    if pop.disc_classes is not None:
        disc = dv.make_discriminator(
            pop.disc_classes, make_rng(cfg.seed, "stage1-disc-init"),
            hidden=cfg.disc_hidden, dim=cfg.window * dv.WINDOW_FEATURES,
        )
        buffer = dv.DiscBuffer(cfg.buffer_capacity, cfg.window * dv.WINDOW_FEATURES)
        disc_rng = make_rng(cfg.seed, "stage1-disc-sample")

    schedule = PairingSchedule(pop.spec, make_rng(cfg.seed, "stage1-pairing"))
    pool = RolloutPool(envs, derive_seed(cfg.seed, "stage1-rollouts"), cfg.hidden, cfg.window)
    sample_rng = make_rng(cfg.seed, "stage1-actions")
    update_rng = make_rng(cfg.seed, "stage1-minibatch")
    log = CsvLog(run_dir / "logs" / "stage1.csv", STAGE1_COLUMNS)
    manifest_add(run_dir, "logs/stage1.csv")

    def rng_snapshot():
        return sample_rng.bit_generator.state

    paths: dict = {}
    paths[0] = _checkpoint_population(run_dir, "stage1", "pct000", pop, rng_snapshot(), 0)
    rolling: deque = deque(maxlen=cfg.success_window)
    total_ticks = 0
    updates_done = 0
    half = max(1, cfg.stage1_updates // 2)
    use_windows = disc is not None
    need_jsd = algo == "trajedi"

    for u in range(cfg.stage1_updates):
        left, right = (0, 1) if gtcoord else schedule.draw_pairing(u)
        actors = (
            member_actor(pop, left, collect_windows=use_windows, with_jsd=need_jsd),
            member_actor(pop, right, collect_windows=use_windows, with_jsd=need_jsd),
        )
        res = collect_rollouts(pool, actors, cfg.ppo, sample_rng)
        total_ticks += res.ticks

        all_trans = [t for stream in res.streams.values() for t in stream]
        div_mean = ""
        if disc is not None and all_trans:
            wins = np.stack([t.window for t in all_trans])
            labels = np.array([t.label for t in all_trans], dtype=np.int64)
            ticks_end = np.array([t.tick_end for t in all_trans], dtype=np.int64)
            rewards = dv.diversity_rewards_batch(disc, wins, labels, ticks_end, horizon)
            for t, r in zip(all_trans, rewards):
                t.reward += pop.alpha * float(r)
            div_mean = float(rewards.mean())
        elif need_jsd and all_trans:
            for t in all_trans:
                t.reward += pop.alpha * t.jsd_bonus
            div_mean = float(np.mean([t.jsd_bonus for t in all_trans]))

        # assemble per-bank update groups (layout-aware)
        by_bank: dict = {}
        for (slot, agent), stream in res.streams.items():
            member = left if agent == 0 else right
            ref = pop.members[member]
            adv, ret = compute_gae(
                [t.reward for t in stream],
                [t.value_old for t in stream],
                [t.done for t in stream],
                res.bootstraps[(slot, agent)],
                cfg.ppo.gamma,
                cfg.ppo.gae_lambda,
            )
            key = (ref.bank_index, -1 if ref.layout is None else member)
            by_bank.setdefault(key, []).append((ref.layout, stream, adv, ret))

        grouped: dict = {}
        for (bank_idx, _), parts in sorted(by_bank.items()):
            layout = parts[0][0]
            trans = [t for _, stream, _, _ in parts for t in stream]
            adv = np.concatenate([a for _, _, a, _ in parts])
            ret = np.concatenate([r for _, _, _, r in parts])
            grouped.setdefault(bank_idx, []).append(build_group(layout, trans, adv, ret))

        stat_rows = []
        try:
            for bank_idx in sorted(grouped):
                stats = ppo_update(pop.banks[bank_idx], grouped[bank_idx], cfg.ppo, update_rng)
                stat_rows.append(stats)
        except nets.GradientError as e:
            _abort_dump(run_dir, "stage1", u, {"error": str(e)})
            raise TrainAbort(str(e)) from e
        mean_stats = {
            k: float(np.mean([s[k] for s in stat_rows])) if stat_rows else ""
            for k in ("policy_loss", "value_loss", "entropy", "clip_frac")
        }
        if stat_rows and not _finite(*mean_stats.values()):
            _abort_dump(run_dir, "stage1", u, mean_stats)
            raise TrainAbort(f"non-finite loss at update {u}")

        disc_ce = disc_acc = heldout_acc = ""
        if disc is not None and all_trans:
            # windows from the first 10% of the horizon are not attributable
            # to a latent yet; keep them out of the buffer like the reward
            live = ticks_end >= 0.1 * horizon
            if u % cfg.heldout_every == 0 and live.any():
                _, heldout_acc = dv.disc_accuracy(disc, wins[live], labels[live])
            if live.any():
                buffer.add_batch(wins[live].astype(np.float32), labels[live])
            if buffer.size > 0:
                for _ in range(cfg.disc_passes):
                    disc_ce, disc_acc = dv.disc_update(disc, buffer, cfg.disc_batch, disc_rng, lr=cfg.ppo.lr)

        for ep in res.episodes:
            rolling.append(1.0 if ep.success else 0.0)
        success_rate = float(np.mean(rolling)) if rolling else ""
        mean_return = float(np.mean([e.ret for e in res.episodes])) if res.episodes else ""
        log.append(
            update=u, ticks=total_ticks, episodes=len(res.episodes),
            mean_return=mean_return, success_rate=success_rate,
            div_reward_mean=div_mean, disc_ce=disc_ce, disc_acc=disc_acc,
            heldout_disc_acc=heldout_acc, **mean_stats,
        )
        updates_done = u + 1
        if updates_done == half:
            paths[50] = _checkpoint_population(run_dir, "stage1", "pct050", pop, rng_snapshot(), updates_done)
        if stop_when is not None and rolling and stop_when(u, float(np.mean(rolling))):
            break

    if 50 not in paths:
        paths[50] = _checkpoint_population(run_dir, "stage1", "pct050", pop, rng_snapshot(), updates_done)
    paths[100] = _checkpoint_population(run_dir, "stage1", "pct100", pop, rng_snapshot(), updates_done)
    _checkpoint_population(run_dir, "stage1", "final", pop, rng_snapshot(), updates_done)
    if disc is not None:
        ckpt.save(run_dir / "checkpoints" / "stage1_disc.ckpt", disc, rng_snapshot(), updates_done)
        manifest_add(run_dir, "checkpoints/stage1_disc.ckpt")
    return StageArtifacts(
        run_dir=run_dir,
        population=pop,
        disc=disc,
        checkpoint_paths=paths,
        updates=updates_done,
        ticks=total_ticks,
        rolling_success=float(np.mean(rolling)) if rolling else 0.0,
    )


def train_gt_coord(cfg: RunConfig, run_dir, stop_when=None) -> StageArtifacts:
    """Jointly trained policy pair (the no-ZSC oracle); both parameter sets
    update every round."""
    if base_algo(cfg.algo) != "gtcoord":
        raise ValueError(f"train_gt_coord requires a gtcoord algo, got {cfg.algo!r}")
    return train_stage1(cfg, run_dir, stop_when=stop_when)


def load_stage1_artifacts(cfg: RunConfig, run_dir) -> StageArtifacts:
    """Rebuild stage-1 artifacts from final checkpoints on disk."""
    run_dir = Path(run_dir)
    envs_probe = w.create_env(cfg.task, training_layout_seed(cfg, 0), cfg.world_config())
    spec = cfg.population_spec()
    pop = build_population(
        spec, envs_probe.obs_dim, envs_probe.n_actions, cfg.hidden,
        derive_seed(cfg.seed, "stage1-init"),
    )
    paths: dict = {}
    for frac, tag in ((0, "pct000"), (50, "pct050"), (100, "pct100")):
        rels = [f"checkpoints/stage1_{tag}_m{m}.ckpt" for m in range(len(pop.banks))]
        if all((run_dir / r).exists() for r in rels):
            paths[frac] = rels
    finals = [
        run_dir / f"checkpoints/stage1_final_m{m}.ckpt" for m in range(len(pop.banks))
    ]
    missing = [str(p) for p in finals if not p.exists()]
    if missing:
        raise FileNotFoundError(f"missing stage-1 checkpoints: {missing}")
    for m, path in enumerate(finals):
        bank, _, _ = ckpt.load(path, expect_table=pop.banks[m].table)
        pop.banks[m] = bank
    disc = None
    disc_path = run_dir / "checkpoints" / "stage1_disc.ckpt"
    if disc_path.exists():
        disc, _, _ = ckpt.load(disc_path)
    return StageArtifacts(run_dir, pop, disc, paths, 0, 0, 0.0)


def train_stage2(cfg: RunConfig, run_dir, stage1: StageArtifacts, stop_when=None) -> Path:
    """Coordination-agent training against the frozen stage-1 population.

    Partners: the behavior policy at a block-resampled latent (bdp family),
    a block-resampled frozen member (sp/pbt/trajedi), or a draw from the
    3N start/middle/end checkpoint pool (fcp).  The coordination agent sees
    task reward only.
    """
    run_dir = Path(run_dir)
    algo = base_algo(cfg.algo)
    if algo == "gtcoord":
        raise ValueError("gtcoord has no stage 2: both agents already train jointly")
    envs = make_training_envs(cfg)
    obs_dim, n_actions = envs[0].obs_dim, envs[0].n_actions
    pop = stage1.population

    coord = nets.init_bank(
        nets.policy_shapes(obs_dim, cfg.hidden, n_actions),
        make_rng(cfg.seed, "stage2-init"),
        {"latent_dim": 0, "obs_dim": obs_dim, "n_actions": n_actions, "hidden": cfg.hidden},
    )
    coord_pop = Population(PopulationSpec("sp", 1), banks=[coord])

    if algo == "fcp":
        pool_entries = fcp_checkpoint_set(
            {frac: [run_dir / rel for rel in rels] for frac, rels in stage1.checkpoint_paths.items()}
        )
        partners = [
            ActorSpec(bank=b, latent_dim=0, store=False) for b, _, _ in pool_entries
        ]
        partner_names = [f"ckpt{frac}_m{m}" for _, frac, m in pool_entries]
    else:
        partners = [
            member_actor(pop, m, store=False, collect_windows=False)
            for m in range(pop.n_members)
        ]
        partner_names = [f"member{m}" for m in range(pop.n_members)]
    frozen_hashes = [ckpt.params_digest(a.bank) for a in partners]

    rollout_pool = RolloutPool(envs, derive_seed(cfg.seed, "stage2-rollouts"), cfg.hidden, cfg.window)
    sample_rng = make_rng(cfg.seed, "stage2-actions")
    update_rng = make_rng(cfg.seed, "stage2-minibatch")
    partner_rng = make_rng(cfg.seed, "stage2-partner")
    log = CsvLog(run_dir / "logs" / "stage2.csv", STAGE2_COLUMNS)
    manifest_add(run_dir, "logs/stage2.csv")

    def rng_snapshot():
        return sample_rng.bit_generator.state

    _checkpoint_population(run_dir, "stage2", "pct000", coord_pop, rng_snapshot(), 0)
    rolling: deque = deque(maxlen=cfg.success_window)
    total_ticks = 0
    updates_done = 0
    half = max(1, cfg.stage2_updates // 2)
    partner_idx = 0

    for u in range(cfg.stage2_updates):
        if u % cfg.latent_resample_period == 0:
            partner_idx = int(partner_rng.integers(len(partners)))
        actors = (
            ActorSpec(bank=coord, latent_dim=0, store=True),
            partners[partner_idx],
        )
        res = collect_rollouts(rollout_pool, actors, cfg.ppo, sample_rng)
        total_ticks += res.ticks

        groups = []
        for (slot, agent), stream in sorted(res.streams.items()):
            if agent != 0:
                continue
            adv, ret = compute_gae(
                [t.reward for t in stream],
                [t.value_old for t in stream],
                [t.done for t in stream],
                res.bootstraps[(slot, agent)],
                cfg.ppo.gamma,
                cfg.ppo.gae_lambda,
            )
            groups.append((stream, adv, ret))
        trans = [t for s, _, _ in groups for t in s]
        stats = {"policy_loss": "", "value_loss": "", "entropy": "", "clip_frac": ""}
        if trans:
            adv = np.concatenate([a for _, a, _ in groups])
            ret = np.concatenate([r for _, _, r in groups])
            try:
                stats = ppo_update(coord, [build_group(None, trans, adv, ret)], cfg.ppo, update_rng)
            except nets.GradientError as e:
                _abort_dump(run_dir, "stage2", u, {"error": str(e)})
                raise TrainAbort(str(e)) from e
            stats.pop("passes", None)
            if not _finite(*[v for v in stats.values() if isinstance(v, float)]):
                _abort_dump(run_dir, "stage2", u, stats)
                raise TrainAbort(f"non-finite loss at update {u}")

        for ep in res.episodes:
            rolling.append(1.0 if ep.success else 0.0)
        log.append(
            update=u, ticks=total_ticks, episodes=len(res.episodes),
            mean_return=float(np.mean([e.ret for e in res.episodes])) if res.episodes else "",
            success_rate=float(np.mean(rolling)) if rolling else "",
            partner=partner_names[partner_idx], **stats,
        )
        updates_done = u + 1
        if updates_done == half:
            _checkpoint_population(run_dir, "stage2", "pct050", coord_pop, rng_snapshot(), updates_done)
        if stop_when is not None and rolling and stop_when(u, float(np.mean(rolling))):
            break

    current = [ckpt.params_digest(a.bank) for a in partners]
    if current != frozen_hashes:
        raise TrainAbort("stage-2 partner parameters changed; they must stay frozen")
    pct50 = run_dir / "checkpoints" / "stage2_pct050_m0.ckpt"
    if not pct50.exists():
        _checkpoint_population(run_dir, "stage2", "pct050", coord_pop, rng_snapshot(), updates_done)
    _checkpoint_population(run_dir, "stage2", "pct100", coord_pop, rng_snapshot(), updates_done)
    rels = _checkpoint_population(run_dir, "stage2", "final", coord_pop, rng_snapshot(), updates_done)
    return run_dir / rels[0]


def heldout_disc_accuracy(cfg: RunConfig, art: StageArtifacts, updates_per_member: int = 1) -> float:
    """Discriminator accuracy on fresh rollouts of the final stage-1 policy
    (windows never seen by a discriminator update), balanced over members."""
    if art.disc is None:
        raise ValueError("run has no discriminator")
    pop = art.population
    envs = make_training_envs(cfg)
    pool = RolloutPool(envs, derive_seed(cfg.seed, "heldout-rollouts"), cfg.hidden, cfg.window)
    rng = make_rng(cfg.seed, "heldout-actions")
    wins, labels = [], []
    for member in range(pop.n_members):
        actors = (
            member_actor(pop, member, collect_windows=True),
            member_actor(pop, member, collect_windows=True),
        )
        for _ in range(updates_per_member):
            res = collect_rollouts(pool, actors, cfg.ppo, rng)
            for stream in res.streams.values():
                for t in stream:
                    if t.tick_end >= 0.1 * cfg.horizon:
                        wins.append(t.window)
                        labels.append(t.label)
    if not wins:
        return 0.0
    _, acc = dv.disc_accuracy(art.disc, np.stack(wins), np.array(labels, dtype=np.int64))
    return float(acc)


def member_event_rates(
    cfg: RunConfig,
    pop: Population,
    member: int,
    n_episodes: int = 100,
    probe_tag: str = "latent-probe",
) -> np.ndarray:
    """Sub-goal completion rates of one member on the training layout: the
    member's behavioral signature.  The member plays both seats (the
    stage-1 self-pair distribution); rates count seat-0 completions."""
    from .evalkit import agent_from_member, run_episode

    env = w.create_env(cfg.task, training_layout_seed(cfg, 0), cfg.world_config())
    agent = agent_from_member(pop, member)
    rates = np.zeros(len(w.EVENT_KINDS))
    for e in range(n_episodes):
        rec = run_episode(env, derive_seed(cfg.seed, probe_tag, e), (agent, agent))
        for i, kind in enumerate(w.EVENT_KINDS):
            if kind in rec.events_by_agent[0]:
                rates[i] += 1.0
    return rates / n_episodes


def train_full(cfg: RunConfig, run_dir, stop_when=None) -> dict:
    """Config snapshot, stage 1, stage 2 (when the algo has one), report."""
    from .config import save_config

    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    save_config(cfg, run_dir / "config.ini")
    manifest_add(run_dir, "config.ini")

    stage1 = train_stage1(cfg, run_dir, stop_when=stop_when)
    report = {
        "algo": cfg.algo,
        "task": cfg.task,
        "seed": cfg.seed,
        "stage1": {
            "updates": stage1.updates,
            "ticks": stage1.ticks,
            "rolling_success": stage1.rolling_success,
        },
    }
    if base_algo(cfg.algo) != "gtcoord":
        coord_path = train_stage2(cfg, run_dir, stage1)
        report["stage2"] = {"coord_checkpoint": str(coord_path.relative_to(run_dir))}
    write_json(run_dir / "report.json", report)
    manifest_add(run_dir, "report.json")
    return report
