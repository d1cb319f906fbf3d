"""Population parameterizations and pairing schedules.

Algorithms differ along two axes: how members are parameterized (N separate
networks, one latent-conditioned network, or partially shared stacks) and
how partners are paired per update (self-play round-robin, uniform random,
or block-constant latent pairs redrawn every ``latent_resample_period``
updates).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nets
from .seeding import make_rng

ALGOS = (
    "sp",
    "pbt",
    "fcp",
    "trajedi",
    "bdp",
    "bdp_no_discrim",
    "bdp_no_latent",
    "bdp_latent_shared_enc",
    "bdp_latent_sep_enc",
)

BDP_VARIANTS = (
    "bdp",
    "bdp_no_discrim",
    "bdp_no_latent",
    "bdp_latent_shared_enc",
    "bdp_latent_sep_enc",
)

SHARED_LAYERS = ("w_in", "b_in")
RECURRENT_LAYERS = ("w_r", "u_r", "b_r", "w_u", "u_u", "b_u", "w_c", "u_c", "b_c")
HEAD_LAYERS = ("w_pi", "b_pi", "w_v", "b_v")


@dataclass(frozen=True)
class PopulationSpec:
    algo: str
    size: int = 4  # population size N, or latent count K for bdp variants
    alpha: float = 0.01  # diversity reward weight
    latent_resample_period: int = 10
    # Init gain on the latent input columns.  The one-hot is 1 of ~25 input
    # dims; at unit gain a small shared net learns to ignore it before the
    # discriminator can reward latent-conditioned behavior, so the latent
    # pathway starts amplified.
    latent_init_gain: float = 4.0

    def __post_init__(self):
        if self.algo not in ALGOS:
            raise ValueError(f"unknown algo {self.algo!r}, expected one of {ALGOS}")
        if self.size < 1:
            raise ValueError("population size must be >= 1")


@dataclass(frozen=True)
class MemberRef:
    """How one population member maps onto bank storage."""

    bank_index: int
    layout: dict | None  # None = the bank's identity layout
    z: int | None  # latent fed to the policy input
    label: int | None  # discriminator class, None when untracked


@dataclass
class Population:
    spec: PopulationSpec
    banks: list = field(default_factory=list)
    members: list = field(default_factory=list)  # MemberRef per member
    latent_dim: int = 0
    disc_classes: int | None = None  # discriminator output size, None = no disc
    alpha: float = 0.0

    @property
    def n_members(self) -> int:
        return len(self.members)


def _full_table(in_dim: int, hidden: int, n_actions: int):
    return nets.policy_shapes(in_dim, hidden, n_actions)


def _multi_head_bank(obs_dim, hidden, n_actions, n_members, split, rng, meta):
    """One bank holding shared sections plus per-member copies of ``split``
    layers; returns (bank, member layouts)."""
    shapes = dict(_full_table(obs_dim, hidden, n_actions))
    table = [(name, shapes[name]) for name in nets.POLICY_LAYERS if name not in split]
    for m in range(n_members):
        table += [(f"m{m}.{name}", shapes[name]) for name in nets.POLICY_LAYERS if name in split]
    bank = nets.init_bank(table, rng, meta)
    layouts = []
    for m in range(n_members):
        layouts.append(
            {name: (f"m{m}.{name}" if name in split else name) for name in nets.POLICY_LAYERS}
        )
    return bank, layouts


def build_population(
    spec: PopulationSpec,
    obs_dim: int,
    n_actions: int,
    hidden: int,
    seed: int,
) -> Population:
    """Instantiate banks and member references for any algorithm."""
    if spec.algo in BDP_VARIANTS:
        return materialize_ablation(spec, obs_dim, n_actions, hidden, seed)
    pop = Population(spec)
    for m in range(spec.size):
        rng = make_rng(seed, "bank", m)
        bank = nets.init_bank(
            _full_table(obs_dim, hidden, n_actions),
            rng,
            {"latent_dim": 0, "obs_dim": obs_dim, "n_actions": n_actions, "hidden": hidden},
        )
        pop.banks.append(bank)
        pop.members.append(MemberRef(m, None, None, None))
    return pop


def materialize_ablation(
    spec: PopulationSpec,
    obs_dim: int,
    n_actions: int,
    hidden: int,
    seed: int,
) -> Population:
    """Wiring for bdp and its ablations.

    bdp                   one latent-conditioned bank, discriminator on z.
    bdp_no_discrim        same bank, diversity weight forced to 0.
    bdp_no_latent         shared trunk+recurrent cell, per-member heads,
                          no latent, no discriminator.
    bdp_latent_shared_enc shared trunk, per-member recurrent+head stacks,
                          discriminator on the member id.
    bdp_latent_sep_enc    fully separate networks plus the discriminator
                          reward (PBT + discriminator).
    """
    if spec.algo not in BDP_VARIANTS:
        raise ValueError(f"{spec.algo!r} is not a bdp variant")
    pop = Population(spec)
    k = spec.size
    if spec.algo in ("bdp", "bdp_no_discrim"):
        rng = make_rng(seed, "bank", 0)
        bank = nets.init_bank(
            _full_table(obs_dim + k, hidden, n_actions),
            rng,
            {"latent_dim": k, "obs_dim": obs_dim, "n_actions": n_actions, "hidden": hidden},
        )
        bank.view("w_in")[obs_dim:] *= spec.latent_init_gain
        pop.banks = [bank]
        pop.members = [MemberRef(0, None, z, z if spec.algo == "bdp" else None) for z in range(k)]
        pop.latent_dim = k
        if spec.algo == "bdp":
            pop.disc_classes = k
            pop.alpha = spec.alpha
    elif spec.algo == "bdp_no_latent":
        rng = make_rng(seed, "bank", 0)
        bank, layouts = _multi_head_bank(
            obs_dim, hidden, n_actions, k, set(HEAD_LAYERS), rng,
            {"latent_dim": 0, "obs_dim": obs_dim, "n_actions": n_actions, "hidden": hidden},
        )
        pop.banks = [bank]
        pop.members = [MemberRef(0, layouts[m], None, None) for m in range(k)]
    elif spec.algo == "bdp_latent_shared_enc":
        rng = make_rng(seed, "bank", 0)
        bank, layouts = _multi_head_bank(
            obs_dim, hidden, n_actions, k, set(RECURRENT_LAYERS + HEAD_LAYERS), rng,
            {"latent_dim": 0, "obs_dim": obs_dim, "n_actions": n_actions, "hidden": hidden},
        )
        pop.banks = [bank]
        pop.members = [MemberRef(0, layouts[m], None, m) for m in range(k)]
        pop.disc_classes = k
        pop.alpha = spec.alpha
    else:  # bdp_latent_sep_enc
        for m in range(k):
            rng = make_rng(seed, "bank", m)
            pop.banks.append(
                nets.init_bank(
                    _full_table(obs_dim, hidden, n_actions),
                    rng,
                    {"latent_dim": 0, "obs_dim": obs_dim, "n_actions": n_actions, "hidden": hidden},
                )
            )
            pop.members.append(MemberRef(m, None, None, m))
        pop.disc_classes = k
        pop.alpha = spec.alpha
    return pop


class PairingSchedule:
    """Draws (left, right) member ids per update.

    self-play cycles members round-robin so all receive equal experience;
    pbt/trajedi draw an independent uniform ordered pair every update; bdp
    variants hold their pair fixed for latent_resample_period updates.
    """

    def __init__(self, spec: PopulationSpec, rng: np.random.Generator):
        self.spec = spec
        self.rng = rng
        self._cached: tuple[int, int] | None = None

    def draw_pairing(self, update_counter: int) -> tuple[int, int]:
        spec = self.spec
        n = spec.size
        if spec.algo in ("sp", "fcp"):
            m = update_counter % n
            return (m, m)
        if spec.algo in ("pbt", "trajedi"):
            return (int(self.rng.integers(n)), int(self.rng.integers(n)))
        # bdp family: block-constant pairs
        if self._cached is None or update_counter % spec.latent_resample_period == 0:
            self._cached = (int(self.rng.integers(n)), int(self.rng.integers(n)))
        return self._cached


def fcp_checkpoint_set(checkpoint_paths: dict) -> list:
    """Frozen stage-2 partner pool for FCP: the start/middle/end stage-1
    checkpoints of every member.

    ``checkpoint_paths`` maps fraction (0, 50, 100) -> list of paths, one
    per member.  Returns a list of (bank, fraction, member) triples.
    """
    from . import checkpoints as ckpt

    pool = []
    for fraction in (0, 50, 100):
        paths = checkpoint_paths.get(fraction)
        if not paths:
            raise FileNotFoundError(f"missing stage-1 checkpoint at {fraction}% of training")
        for member, path in enumerate(paths):
            bank, _, _ = ckpt.load(path)
            pool.append((bank, fraction, member))
    return pool
