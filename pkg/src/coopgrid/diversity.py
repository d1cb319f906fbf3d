"""Trajectory discriminator, diversity reward, and the action-distribution
JSD bonus used by the TrajeDi baseline.

The discriminator reads a flat window of per-tick (x, y, action) features
covering the last 40 ticks of one agent's trajectory and predicts which
behavior latent produced it.  Its log-probability of the true latent is the
diversity reward, withheld for the first 10% of the episode horizon where
behaviors are not yet distinguishable, then scaled by ``alpha`` and added to
the task reward at decision steps.
"""

from __future__ import annotations

import numpy as np

from . import nets
from .nets import disc_forward  # noqa: F401  (this module owns the operation)

WINDOW_TICKS = 40
WINDOW_FEATURES = 3  # x, y, action id / |A|
WINDOW_DIM = WINDOW_TICKS * WINDOW_FEATURES

DISC_HIDDEN = 128
BUFFER_CAPACITY = 100_000


class DiscBuffer:
    """FIFO ring of (window, latent) pairs, newest overwrite oldest."""

    def __init__(self, capacity: int = BUFFER_CAPACITY, dim: int = WINDOW_DIM):
        self.capacity = capacity
        self.dim = dim
        self._x = np.zeros((capacity, dim), dtype=np.float32)
        self._y = np.zeros(capacity, dtype=np.int64)
        self._next = 0
        self.size = 0

    def add(self, window: np.ndarray, label: int) -> None:
        self._x[self._next] = window
        self._y[self._next] = label
        self._next = (self._next + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def add_batch(self, windows: np.ndarray, labels) -> None:
        for win, lab in zip(windows, labels):
            self.add(win, int(lab))

    def contains_window(self, window: np.ndarray) -> bool:
        target = np.asarray(window, dtype=np.float32)
        return bool((np.abs(self._x[: self.size] - target) < 1e-12).all(axis=1).any())

    def sample(self, batch_size: int, rng: np.random.Generator):
        if self.size == 0:
            raise ValueError("cannot sample from an empty discriminator buffer")
        n = min(batch_size, self.size)
        idx = rng.choice(self.size, size=n, replace=False)
        return self._x[idx].astype(np.float64), self._y[idx].copy()


def make_discriminator(n_latents: int, rng: np.random.Generator,
                       hidden: int = DISC_HIDDEN, dim: int = WINDOW_DIM) -> nets.ParamBank:
    table = nets.disc_shapes(dim, hidden, n_latents)
    return nets.init_bank(table, rng, {"kind": "disc", "n_latents": n_latents})


def disc_update(
    bank: nets.ParamBank,
    buffer: DiscBuffer,
    batch_size: int,
    rng: np.random.Generator,
    lr: float = 3e-4,
) -> tuple[float, float]:
    """One cross-entropy gradient step on a uniform random buffer batch.
    Returns (cross_entropy, batch accuracy) of the pre-step forward."""
    X, y = buffer.sample(batch_size, rng)
    grad = np.zeros_like(bank.flat)
    loss, acc = nets.cross_entropy_loss(bank, X, y, grad)
    nets.adam_step(bank, grad, lr=lr, grad_clip=None)
    return loss, acc


def disc_accuracy(bank: nets.ParamBank, X: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    """Cross-entropy and accuracy on held-out windows (no update)."""
    loss, acc = nets.cross_entropy_loss(bank, np.asarray(X, dtype=np.float64), y)
    return loss, acc


def diversity_reward(
    bank: nets.ParamBank,
    window: np.ndarray,
    z: int,
    tick: int,
    horizon: int,
) -> float:
    """log q(z | window), or 0 while tick is inside the first 10% of the
    horizon.  The caller scales by alpha before adding to the task reward."""
    if tick < 0.1 * horizon:
        return 0.0
    logits = nets.disc_forward(bank, np.asarray(window, dtype=np.float64))
    return float(nets.log_softmax(logits[None, :])[0, int(z)])


def diversity_rewards_batch(
    bank: nets.ParamBank,
    windows: np.ndarray,
    zs: np.ndarray,
    ticks: np.ndarray,
    horizon: int,
) -> np.ndarray:
    """Vectorized diversity_reward over aligned arrays."""
    out = np.zeros(len(zs), dtype=np.float64)
    live = np.asarray(ticks) >= 0.1 * horizon
    if live.any():
        logits, _ = nets.disc_forward_batch(bank, np.asarray(windows, dtype=np.float64)[live])
        logp = nets.log_softmax(logits)
        out[live] = logp[np.arange(int(live.sum())), np.asarray(zs)[live]]
    return out


def trajedi_jsd(action_dists) -> float:
    """Jensen-Shannon divergence of K action distributions:
    H(mean) - mean(H).  Bounded by [0, log K]."""
    dists = np.asarray(action_dists, dtype=np.float64)
    if dists.ndim != 2:
        raise ValueError("expected K probability vectors")
    sums = dists.sum(axis=1)
    if np.abs(sums - 1.0).max() > 1e-6:
        raise ValueError("action distributions must each sum to 1")

    def entropy(p: np.ndarray) -> float:
        nz = p > 0
        return float(-(p[nz] * np.log(p[nz])).sum())

    mixture = dists.mean(axis=0)
    return entropy(mixture) - float(np.mean([entropy(p) for p in dists]))
