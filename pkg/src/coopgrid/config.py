"""Run configuration: flat key = value sections, INI syntax.

Defaults carry the reference hyperparameters (lr 3e-4, 2 epochs, 2
minibatches, clip 0.2, entropy 0.001, grad clip 0.2, gamma 0.99, GAE lambda
0.95, diversity weight 0.01, latent resample period 10, 40-tick windows,
100k discriminator buffer).  A config file overrides defaults; command-line
flags override the file.  Every run writes its effective config back out as
``config.ini`` so results can be reproduced exactly.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

from .population import PopulationSpec
from .ppo import PpoConfig
from .world import WorldConfig

# Algorithms accepted by `train`: population algos plus the jointly trained
# oracle and the oracle-state variants.
TRAIN_ALGOS = (
    "sp",
    "pbt",
    "pbt_state",
    "fcp",
    "trajedi",
    "bdp",
    "bdp_no_discrim",
    "bdp_no_latent",
    "bdp_latent_shared_enc",
    "bdp_latent_sep_enc",
    "gtcoord",
    "gtcoord_state",
)


def base_algo(algo: str) -> str:
    """Population algorithm behind an oracle-state alias."""
    return {"pbt_state": "pbt", "gtcoord_state": "gtcoord"}.get(algo, algo)


def uses_oracle_obs(algo: str) -> bool:
    return algo.endswith("_state")


@dataclass
class RunConfig:
    # [run]
    task: str = "tidy_house"
    algo: str = "bdp"
    seed: int = 1
    deterministic: bool = True
    stage1_updates: int = 976  # ~2M env ticks at 16 envs x 128 ticks
    stage2_updates: int = 976
    train_layouts: int = 1
    success_window: int = 100  # episodes in the rolling success rate
    heldout_every: int = 50  # updates between held-out discriminator checks
    # [world]
    width: int = 11
    height: int = 11
    horizon: int = 200
    local_patch: bool = False
    layout_seed: int = -1  # -1: derive training layouts from the run seed
    # [model]
    hidden: int = 64
    # [ppo]
    ppo: PpoConfig = field(default_factory=PpoConfig)
    # [population]
    pop_size: int = 4
    alpha: float = 0.01
    latent_resample_period: int = 10
    latent_init_gain: float = 4.0
    # [diversity]
    window: int = 40
    disc_hidden: int = 128
    disc_batch: int = 256
    disc_passes: int = 4  # minibatch steps per discriminator update (PPO's own update is 2x2)
    buffer_capacity: int = 100_000

    def world_config(self) -> WorldConfig:
        return WorldConfig(
            width=self.width,
            height=self.height,
            horizon=self.horizon,
            local_patch=self.local_patch,
            oracle_obs=uses_oracle_obs(self.algo),
        )

    def population_spec(self) -> PopulationSpec:
        return PopulationSpec(
            algo=base_algo(self.algo) if base_algo(self.algo) != "gtcoord" else "pbt",
            size=2 if base_algo(self.algo) == "gtcoord" else self.pop_size,
            alpha=self.alpha,
            latent_resample_period=self.latent_resample_period,
            latent_init_gain=self.latent_init_gain,
        )

    def validate(self) -> None:
        if self.algo not in TRAIN_ALGOS:
            raise ValueError(
                f"unknown algo {self.algo!r}; valid: {', '.join(TRAIN_ALGOS)}"
            )
        from .world import TASKS

        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}; valid: {', '.join(TASKS)}")


_SECTIONS = {
    "run": (
        "task", "algo", "seed", "deterministic", "stage1_updates",
        "stage2_updates", "train_layouts", "success_window", "heldout_every",
    ),
    "world": ("width", "height", "horizon", "local_patch", "layout_seed"),
    "model": ("hidden",),
    "population": ("pop_size", "alpha", "latent_resample_period", "latent_init_gain"),
    "diversity": ("window", "disc_hidden", "disc_batch", "disc_passes", "buffer_capacity"),
}

_PPO_KEYS = (
    "lr", "epochs", "minibatches", "clip", "entropy_coef", "value_coef",
    "gamma", "gae_lambda", "grad_clip", "envs_per_update", "ticks_per_update",
)


def _convert(value: str, like) -> object:
    if isinstance(like, bool):
        return value.strip().lower() in ("1", "true", "yes", "on")
    if isinstance(like, int):
        return int(value)
    if isinstance(like, float):
        return float(value)
    return value.strip()


def load_config(path) -> RunConfig:
    cfg = RunConfig()
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise FileNotFoundError(f"config file {path} not found")
    updates: dict = {}
    for section, keys in _SECTIONS.items():
        if not parser.has_section(section):
            continue
        for key in keys:
            if parser.has_option(section, key):
                updates[key] = _convert(parser.get(section, key), getattr(cfg, key))
    ppo_kwargs = {}
    if parser.has_section("ppo"):
        defaults = PpoConfig()
        for key in _PPO_KEYS:
            if parser.has_option("ppo", key):
                ppo_kwargs[key] = _convert(parser.get("ppo", key), getattr(defaults, key))
    for section in parser.sections():
        if section not in (*_SECTIONS, "ppo"):
            raise ValueError(f"unknown config section [{section}]")
        expected = _PPO_KEYS if section == "ppo" else _SECTIONS[section]
        for key, _ in parser.items(section):
            if key not in expected:
                raise ValueError(f"unknown key {key!r} in section [{section}]")
    out = RunConfig(**{k: v for k, v in updates.items() if k != "ppo"})
    if ppo_kwargs:
        out.ppo = PpoConfig(**ppo_kwargs)
    return out


def save_config(cfg: RunConfig, path) -> None:
    """Write the effective configuration; deterministic byte output."""
    lines = []
    for section, keys in _SECTIONS.items():
        lines.append(f"[{section}]")
        for key in keys:
            lines.append(f"{key} = {_fmt(getattr(cfg, key))}")
        lines.append("")
    lines.append("[ppo]")
    for key in _PPO_KEYS:
        lines.append(f"{key} = {_fmt(getattr(cfg.ppo, key))}")
    lines.append("")
    Path(path).write_text("\n".join(lines), encoding="utf-8")


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return f"{v:.10g}"
    return str(v)
