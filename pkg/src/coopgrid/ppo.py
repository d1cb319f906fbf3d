"""PPO with GAE over decision-step transitions.

The high-level policy only acts when an agent has no running macro, so the
rollout collector writes a transition per decision, accumulating the shared
per-tick rewards of the whole macro onto it (undiscounted within the macro;
gamma applies per decision step).  A transition still pending when the
rollout window truncates is carried into the next window, and its stored
value estimate serves as the bootstrap for the stream it left behind.

Updates replay each stored transition from its hidden-state snapshot,
normalize advantages per update, and take ``epochs x minibatches`` clipped
surrogate steps per bank with Adam and a global gradient-norm clip.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nets
from . import world as w
from .seeding import derive_seed, make_rng


@dataclass(frozen=True)
class PpoConfig:
    lr: float = 3e-4
    epochs: int = 2
    minibatches: int = 2
    clip: float = 0.2
    entropy_coef: float = 0.001
    value_coef: float = 0.5
    gamma: float = 0.99
    gae_lambda: float = 0.95
    grad_clip: float = 0.2
    envs_per_update: int = 16
    ticks_per_update: int = 128

    def __post_init__(self):
        if not 0.0 < self.clip < 1.0:
            raise ValueError("clip must lie in (0, 1)")
        for name in ("lr", "epochs", "minibatches", "gamma", "gae_lambda",
                     "grad_clip", "envs_per_update", "ticks_per_update"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class Transition:
    x: np.ndarray  # policy input (obs plus latent one-hot)
    h0: np.ndarray  # hidden snapshot before this decision
    action: int
    logp_old: float
    value_old: float
    reward: float = 0.0  # per-tick rewards accumulated until the macro ends
    done: bool = False
    tick_end: int = 0  # 0-based index of the last tick this decision covered
    window: np.ndarray | None = None  # trajectory window at commit time
    label: int | None = None  # discriminator class (latent / member id)
    jsd_bonus: float = 0.0


@dataclass
class EpisodeStat:
    ret: float
    ticks: int
    success: bool


@dataclass
class RolloutResult:
    streams: dict  # (slot, agent) -> list[Transition]
    bootstraps: dict  # (slot, agent) -> float, value after the stream's last entry
    episodes: list[EpisodeStat]
    ticks: int


def compute_gae(rewards, values, dones, bootstrap_value, gamma, lam):
    """Advantages A_t = sum_l (gamma*lam)^l delta_{t+l} with terminal
    masking, and returns = advantages + values."""
    n = len(rewards)
    adv = np.zeros(n, dtype=np.float64)
    next_v = float(bootstrap_value)
    acc = 0.0
    for t in range(n - 1, -1, -1):
        nonterm = 0.0 if dones[t] else 1.0
        delta = rewards[t] + gamma * next_v * nonterm - values[t]
        acc = delta + gamma * lam * nonterm * acc
        adv[t] = acc
        next_v = values[t]
    returns = adv + np.asarray(values, dtype=np.float64)
    return adv, returns


# --------------------------------------------------------------------- #
# actors and rollout collection

@dataclass
class JsdSpec:
    """Population handles for the per-decision action-distribution JSD
    bonus: all member banks are evaluated on the acting agent's inputs."""

    banks: list
    layouts: list
    own_index: int


@dataclass
class ActorSpec:
    bank: nets.ParamBank
    layout: dict | None = None
    z: int | None = None
    latent_dim: int = 0
    mode: str = "sample"
    store: bool = True  # keep transitions for learning
    collect_windows: bool = False
    label: int | None = None  # discriminator label for collected windows
    jsd: JsdSpec | None = None

    def identity(self) -> tuple:
        return (id(self.bank), id(self.layout), self.z, self.label,
                None if self.jsd is None else self.jsd.own_index)


class _Slot:
    """One environment plus the per-agent bookkeeping of the collector."""

    def __init__(self, env: w.Environment, index: int, seed_root: int, window_len: int):
        self.env = env
        self.index = index
        self.seed_root = seed_root
        self.window_len = window_len
        self.episode_idx = 0
        self.state = None
        self.obs = [None, None]
        self.need = [True, True]
        self.hidden = [None, None]
        self.jsd_hidden = [None, None]
        self.pending: list[Transition | None] = [None, None]
        self.ring = [np.zeros((window_len, 3)), np.zeros((window_len, 3))]
        self.ring_idx = [0, 0]
        self.exec_action = [w.ACT_NOOP, w.ACT_NOOP]
        self.chosen = [w.ACT_NOOP, w.ACT_NOOP]
        self.ep_return = 0.0
        self.ep_ticks = 0

    def start_episode(self, hidden_dim: int, jsd_k: int | None):
        seed = derive_seed(self.seed_root, "rollout-ep", self.index, self.episode_idx)
        self.episode_idx += 1
        self.state, obs = self.env.reset(seed)
        self.obs = obs
        self.need = [True, True]
        self.hidden = [np.zeros(hidden_dim), np.zeros(hidden_dim)]
        if jsd_k is not None:
            self.jsd_hidden = [np.zeros((jsd_k, hidden_dim)), np.zeros((jsd_k, hidden_dim))]
        self.pending = [None, None]
        for a in (0, 1):
            self.ring[a][:] = 0.0
            self.ring_idx[a] = 0
            self.exec_action[a] = w.ACT_NOOP
        self.ep_return = 0.0
        self.ep_ticks = 0

    def window_snapshot(self, agent: int) -> np.ndarray:
        i = self.ring_idx[agent]
        ring = self.ring[agent]
        return np.concatenate((ring[i:], ring[:i])).ravel()


class RolloutPool:
    """Persistent environments stepped in lockstep by collect_rollouts.

    Episodes continue across update boundaries; whenever the actor pairing
    changes (new latents or members), all slots restart so that recurrent
    states never cross a policy switch.
    """

    def __init__(self, envs: list[w.Environment], seed_root: int,
                 hidden_dim: int, window_len: int = 40):
        self.slots = [_Slot(env, i, seed_root, window_len) for i, env in enumerate(envs)]
        self.hidden_dim = hidden_dim
        self.window_len = window_len
        self._actor_ids: tuple | None = None
        self.total_ticks = 0

    def ensure_actors(self, actors: tuple[ActorSpec, ActorSpec]):
        ids = (actors[0].identity(), actors[1].identity())
        if ids != self._actor_ids:
            self._actor_ids = ids
            jsd_k = None
            for a in actors:
                if a.jsd is not None:
                    jsd_k = len(a.jsd.banks)
            for slot in self.slots:
                slot.start_episode(self.hidden_dim, jsd_k)


def _softmax_sample_rows(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    u = rng.random(probs.shape[0])
    cum = np.cumsum(probs, axis=1)
    return (cum < u[:, None]).sum(axis=1).clip(0, probs.shape[1] - 1)


def _jsd_of_rows(prob_rows: np.ndarray) -> float:
    mean = prob_rows.mean(axis=0)
    h = lambda p: float(-(p * np.log(np.clip(p, 1e-300, None))).sum())  # noqa: E731
    return h(mean) - float(np.mean([h(p) for p in prob_rows]))


def collect_rollouts(
    pool: RolloutPool,
    actors: tuple[ActorSpec, ActorSpec],
    cfg: PpoConfig,
    rng: np.random.Generator,
) -> RolloutResult:
    """Step every slot for ticks_per_update ticks under the given actor
    pair, writing transitions only at decision steps."""
    pool.ensure_actors(actors)
    slots = pool.slots
    streams: dict = {}
    episodes: list[EpisodeStat] = []
    jsd_k = None
    for aspec in actors:
        if aspec.jsd is not None:
            jsd_k = len(aspec.jsd.banks)

    for _ in range(cfg.ticks_per_update):
        # 1. batch forward per agent role over the slots that need decisions
        for agent in (0, 1):
            spec = actors[agent]
            deciders = [s for s in slots if s.need[agent]]
            if not deciders:
                continue
            X = np.stack([
                nets.assemble_input(s.obs[agent], spec.z, spec.latent_dim)
                for s in deciders
            ])
            H0 = np.stack([s.hidden[agent] for s in deciders])
            logits, values, H1, _ = nets.policy_forward_batch(spec.bank, X, H0, spec.layout)
            logp_all = nets.log_softmax(logits)
            if spec.mode == "argmax":
                acts = logits.argmax(axis=1)
            else:
                acts = _softmax_sample_rows(np.exp(logp_all), rng)
            bonuses = None
            if spec.jsd is not None:
                bonuses = np.zeros(len(deciders))
                own = spec.jsd.own_index
                probs_by_member = []
                h1_by_member = []
                for k, (bk, lo) in enumerate(zip(spec.jsd.banks, spec.jsd.layouts)):
                    Hk = np.stack([s.jsd_hidden[agent][k] for s in deciders])
                    lg, _, h1k, _ = nets.policy_forward_batch(bk, X, Hk, lo)
                    probs_by_member.append(nets.softmax(lg))
                    h1_by_member.append(h1k)
                for row, s in enumerate(deciders):
                    rows = np.stack([pm[row] for pm in probs_by_member])
                    bonuses[row] = _jsd_of_rows(rows)
                    for k in range(len(probs_by_member)):
                        s.jsd_hidden[agent][k] = h1_by_member[k][row]
                    s.hidden[agent] = h1_by_member[own][row]
            for row, s in enumerate(deciders):
                a = int(acts[row])
                if spec.store:
                    s.pending[agent] = Transition(
                        x=X[row],
                        h0=H0[row],
                        action=a,
                        logp_old=float(logp_all[row, a]),
                        value_old=float(values[row]),
                        label=spec.label,
                        jsd_bonus=float(bonuses[row]) if bonuses is not None else 0.0,
                    )
                if spec.jsd is None:
                    s.hidden[agent] = H1[row]
                s.exec_action[agent] = a
                s.need[agent] = False
                s.chosen[agent] = a

        # 2. step each environment one tick
        for s in slots:
            out = s.env.step_joint(s.state, s.chosen, obs_mask=(False, False))
            pool.total_ticks += 1
            s.ep_return += out.reward
            s.ep_ticks += 1
            nx, ny = s.env.norm
            for agent in (0, 1):
                t = s.pending[agent]
                if t is not None:
                    t.reward += out.reward
                ag = s.state.agents[agent]
                act = ag.macro_action if ag.macro_path is not None else s.exec_action[agent]
                ring = s.ring[agent]
                i = s.ring_idx[agent]
                ring[i, 0] = 2.0 * ag.pos[0] * nx - 1.0
                ring[i, 1] = 2.0 * ag.pos[1] * ny - 1.0
                ring[i, 2] = act / w.N_ACTIONS
                s.ring_idx[agent] = (i + 1) % s.window_len

            done = s.state.done
            for agent in (0, 1):
                finished = out.decision_flags[agent] or done
                if finished and s.pending[agent] is not None:
                    t = s.pending[agent]
                    t.done = done
                    t.tick_end = s.state.tick - 1
                    spec = actors[agent]
                    if spec.collect_windows:
                        t.window = s.window_snapshot(agent)
                    streams.setdefault((s.index, agent), []).append(t)
                    s.pending[agent] = None
                if finished:
                    s.need[agent] = True
            if done:
                episodes.append(EpisodeStat(s.ep_return, s.ep_ticks, s.state.success))
                s.start_episode(pool.hidden_dim, jsd_k)
            else:
                # refresh observations for the agents that decide next tick
                for agent in (0, 1):
                    if s.need[agent]:
                        s.obs[agent] = s.env.observe(s.state, agent)

    # carried pendings bootstrap the streams they interrupt
    bootstraps = {}
    for (slot_idx, agent), stream in streams.items():
        s = slots[slot_idx]
        if stream and not stream[-1].done:
            pend = s.pending[agent]
            bootstraps[(slot_idx, agent)] = pend.value_old if pend is not None else 0.0
        else:
            bootstraps[(slot_idx, agent)] = 0.0
    return RolloutResult(streams, bootstraps, episodes, len(slots) * cfg.ticks_per_update)


# --------------------------------------------------------------------- #
# update

@dataclass
class UpdateGroup:
    """Flattened transitions that share a parameter layout."""

    layout: dict | None
    X: np.ndarray
    H0: np.ndarray
    actions: np.ndarray
    logp_old: np.ndarray
    adv: np.ndarray
    ret: np.ndarray

    @property
    def size(self) -> int:
        return self.actions.shape[0]


def build_group(layout, transitions, advantages, returns) -> UpdateGroup:
    return UpdateGroup(
        layout=layout,
        X=np.stack([t.x for t in transitions]),
        H0=np.stack([t.h0 for t in transitions]),
        actions=np.array([t.action for t in transitions], dtype=np.int64),
        logp_old=np.array([t.logp_old for t in transitions], dtype=np.float64),
        adv=np.asarray(advantages, dtype=np.float64),
        ret=np.asarray(returns, dtype=np.float64),
    )


def ppo_pass(
    bank: nets.ParamBank,
    layout,
    X, H0, actions, logp_old, adv, ret,
    cfg: PpoConfig,
    inv_n: float,
    grad: np.ndarray | None = None,
):
    """Loss contribution of one sample block, scaled by ``inv_n`` (the
    reciprocal of the full minibatch size); accumulates gradients when
    ``grad`` is given.  Returns (loss_sum, stat sums)."""
    n = actions.shape[0]
    rows = np.arange(n)
    logits, values, _, cache = nets.policy_forward_batch(
        bank, X, H0, layout, need_cache=grad is not None
    )
    logp_all = nets.log_softmax(logits)
    p = np.exp(logp_all)
    logp = logp_all[rows, actions]
    entropy = -(p * logp_all).sum(axis=1)
    ratio = np.exp(logp - logp_old)
    clipped = np.clip(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip)
    s1 = ratio * adv
    s2 = clipped * adv
    surr = np.minimum(s1, s2)
    vdiff = values - ret
    loss_sum = float(
        (-surr + cfg.value_coef * vdiff * vdiff - cfg.entropy_coef * entropy).sum()
    ) * inv_n
    if grad is not None:
        take = (s1 <= s2).astype(np.float64)
        dlogp = -(adv * ratio * take) * inv_n
        dlogits = (-dlogp[:, None]) * p
        dlogits[rows, actions] += dlogp
        dlogits += (cfg.entropy_coef * inv_n) * p * (logp_all + entropy[:, None])
        dvalues = (2.0 * cfg.value_coef * inv_n) * vdiff
        nets.policy_backward_batch(bank, cache, dlogits, dvalues, grad, layout)
    stats = {
        "policy_loss": float(-surr.sum()),
        "value_loss": float((vdiff * vdiff).sum()),
        "entropy": float(entropy.sum()),
        "clip_count": float((np.abs(ratio - 1.0) > cfg.clip).sum()),
    }
    return loss_sum, stats


def ppo_update(
    bank: nets.ParamBank,
    groups: list[UpdateGroup],
    cfg: PpoConfig,
    rng: np.random.Generator,
) -> dict:
    """Clipped-surrogate update of one bank over its transition groups.

    Advantages are normalized jointly across the whole update batch
    (mean 0, std 1, eps 1e-8) before the epochs/minibatch passes.
    """
    total = sum(g.size for g in groups)
    if total == 0:
        raise ValueError("ppo_update called with an empty batch")
    all_adv = np.concatenate([g.adv for g in groups])
    mean, std = all_adv.mean(), all_adv.std()
    for g in groups:
        g.adv = (g.adv - mean) / (std + 1e-8)

    # global index -> (group, row)
    owners = np.concatenate([np.full(g.size, gi) for gi, g in enumerate(groups)])
    rows = np.concatenate([np.arange(g.size) for g in groups])

    agg = {"policy_loss": 0.0, "value_loss": 0.0, "entropy": 0.0, "clip_count": 0.0}
    passes = 0
    samples_seen = 0
    grad = np.zeros_like(bank.flat)
    for _ in range(cfg.epochs):
        perm = rng.permutation(total)
        for chunk in np.array_split(perm, cfg.minibatches):
            if chunk.size == 0:
                continue
            grad[:] = 0.0
            inv_n = 1.0 / chunk.size
            for gi, g in enumerate(groups):
                sel = rows[chunk[owners[chunk] == gi]]
                if sel.size == 0:
                    continue
                _, stats = ppo_pass(
                    bank, g.layout,
                    g.X[sel], g.H0[sel], g.actions[sel], g.logp_old[sel],
                    g.adv[sel], g.ret[sel],
                    cfg, inv_n, grad,
                )
                for k in agg:
                    agg[k] += stats[k]
            nets.adam_step(bank, grad, lr=cfg.lr, grad_clip=cfg.grad_clip)
            passes += 1
            samples_seen += chunk.size
    return {
        "policy_loss": agg["policy_loss"] / samples_seen,
        "value_loss": agg["value_loss"] / samples_seen,
        "entropy": agg["entropy"] / samples_seen,
        "clip_frac": agg["clip_count"] / samples_seen,
        "passes": passes,
    }
