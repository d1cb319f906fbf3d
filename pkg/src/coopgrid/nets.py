"""Tiny trainable networks with exact hand-derived gradients.

Policy: obs (+ one-hot behavior latent) -> tanh trunk -> single gated
recurrent cell -> categorical action logits + scalar value.  Discriminator:
flat trajectory window -> 2 tanh hidden layers -> latent logits.

Parameters live in one flat float64 vector per bank, addressed through a
named shape table; reshaped numpy views of the flat vector are used for the
matmuls, so optimizer steps, checkpointing, and finite-difference probing
all operate on the same storage.  Recurrent state snapshots are treated as
constants during the backward pass (updates replay single steps from stored
hidden states, there is no backprop through time across decisions).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

POLICY_LAYERS = (
    "w_in", "b_in",
    "w_r", "u_r", "b_r",
    "w_u", "u_u", "b_u",
    "w_c", "u_c", "b_c",
    "w_pi", "b_pi",
    "w_v", "b_v",
)

DISC_LAYERS = ("w1", "b1", "w2", "b2", "w3", "b3")


class NetError(Exception):
    pass


class GradientError(NetError):
    """Non-finite gradient; message names the offending layer."""


def policy_shapes(in_dim: int, hidden: int, n_actions: int) -> list[tuple[str, tuple]]:
    h = hidden
    return [
        ("w_in", (in_dim, h)), ("b_in", (h,)),
        ("w_r", (h, h)), ("u_r", (h, h)), ("b_r", (h,)),
        ("w_u", (h, h)), ("u_u", (h, h)), ("b_u", (h,)),
        ("w_c", (h, h)), ("u_c", (h, h)), ("b_c", (h,)),
        ("w_pi", (h, n_actions)), ("b_pi", (n_actions,)),
        ("w_v", (h, 1)), ("b_v", (1,)),
    ]


def disc_shapes(in_dim: int, hidden: int, n_latents: int) -> list[tuple[str, tuple]]:
    return [
        ("w1", (in_dim, hidden)), ("b1", (hidden,)),
        ("w2", (hidden, hidden)), ("b2", (hidden,)),
        ("w3", (hidden, n_latents)), ("b3", (n_latents,)),
    ]


@dataclass
class ParamBank:
    """Flat parameter vector plus its shape table and Adam state."""

    flat: np.ndarray
    table: tuple  # ((name, shape), ...) in storage order
    meta: dict = field(default_factory=dict)
    adam_m: np.ndarray | None = None
    adam_v: np.ndarray | None = None
    adam_t: int = 0

    def __post_init__(self):
        self._offsets: dict[str, tuple[int, tuple]] = {}
        off = 0
        for name, shape in self.table:
            size = int(np.prod(shape))
            self._offsets[name] = (off, shape)
            off += size
        if off != self.flat.size:
            raise NetError(
                f"parameter count {self.flat.size} does not match shape table total {off}"
            )

    @property
    def n_params(self) -> int:
        return self.flat.size

    def view(self, name: str) -> np.ndarray:
        off, shape = self._offsets[name]
        return self.flat[off : off + int(np.prod(shape))].reshape(shape)

    def grad_view(self, grad: np.ndarray, name: str) -> np.ndarray:
        """View into an external flat gradient, shaped like layer ``name``."""
        off, shape = self._offsets[name]
        return grad[off : off + int(np.prod(shape))].reshape(shape)

    def slice_of(self, name: str) -> tuple[int, int]:
        off, shape = self._offsets[name]
        return off, off + int(np.prod(shape))

    def layer_of_index(self, i: int) -> str:
        for name, _ in self.table:
            lo, hi = self.slice_of(name)
            if lo <= i < hi:
                return name
        return "?"


def bank_size(table) -> int:
    return int(sum(np.prod(s) for _, s in table))


def _orthogonal(rng: np.random.Generator, shape: tuple, gain: float) -> np.ndarray:
    rows, cols = shape
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return (gain * q[:rows, :cols]).astype(np.float64)


def init_bank(table, rng: np.random.Generator, meta: dict | None = None) -> ParamBank:
    """Orthogonal init for weight matrices, zeros for biases.  Output heads
    (action logits, value, discriminator logits) are scaled down 100x so a
    fresh policy starts near the uniform distribution."""
    flat = np.zeros(bank_size(table), dtype=np.float64)
    bank = ParamBank(flat, tuple(table), dict(meta or {}))
    for name, shape in table:
        if len(shape) != 2:
            continue
        short = name.split(".")[-1]
        gain = 0.01 if short in ("w_pi", "w_v", "w3") else 1.0
        bank.view(name)[:] = _orthogonal(rng, shape, gain)
    return bank


# --------------------------------------------------------------------- #
# activations

def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


# --------------------------------------------------------------------- #
# policy network

@dataclass
class PolicyOutput:
    logits: np.ndarray
    value: float
    next_hidden: np.ndarray


IDENTITY_LAYOUT = {name: name for name in POLICY_LAYERS}


def policy_forward_batch(
    bank: ParamBank,
    X: np.ndarray,
    H0: np.ndarray,
    layout: dict[str, str] | None = None,
    need_cache: bool = False,
):
    """Batched forward pass.  X already contains the latent one-hot columns
    when the bank was built with latent_dim > 0."""
    lo = layout or IDENTITY_LAYOUT
    V = lambda k: bank.view(lo[k])  # noqa: E731
    T = np.tanh(X @ V("w_in") + V("b_in"))
    r = _sigmoid(T @ V("w_r") + H0 @ V("u_r") + V("b_r"))
    u = _sigmoid(T @ V("w_u") + H0 @ V("u_u") + V("b_u"))
    rh = r * H0
    c = np.tanh(T @ V("w_c") + rh @ V("u_c") + V("b_c"))
    H1 = u * c + (1.0 - u) * H0
    logits = H1 @ V("w_pi") + V("b_pi")
    values = H1 @ V("w_v")
    values = values[:, 0] + V("b_v")[0]
    cache = (X, T, r, u, rh, c, H0, H1) if need_cache else None
    return logits, values, H1, cache


def policy_backward_batch(
    bank: ParamBank,
    cache,
    dlogits: np.ndarray,
    dvalues: np.ndarray,
    grad: np.ndarray,
    layout: dict[str, str] | None = None,
) -> None:
    """Accumulate d(loss)/d(params) into ``grad`` (same indexing as
    bank.flat) given upstream gradients at the logits and value outputs."""
    lo = layout or IDENTITY_LAYOUT
    X, T, r, u, rh, c, H0, H1 = cache

    def V(k):
        return bank.view(lo[k])

    def G(k):
        return bank.grad_view(grad, lo[k])

    dv = dvalues[:, None]
    G("w_pi")[:] += H1.T @ dlogits
    G("b_pi")[:] += dlogits.sum(axis=0)
    G("w_v")[:] += H1.T @ dv
    G("b_v")[:] += dv.sum()
    dH1 = dlogits @ V("w_pi").T + dv @ V("w_v").T

    du = dH1 * (c - H0)
    dc = dH1 * u
    dac = dc * (1.0 - c * c)
    dau = du * u * (1.0 - u)
    drh = dac @ V("u_c").T
    dar = (drh * H0) * r * (1.0 - r)

    G("w_c")[:] += T.T @ dac
    G("u_c")[:] += rh.T @ dac
    G("b_c")[:] += dac.sum(axis=0)
    G("w_u")[:] += T.T @ dau
    G("u_u")[:] += H0.T @ dau
    G("b_u")[:] += dau.sum(axis=0)
    G("w_r")[:] += T.T @ dar
    G("u_r")[:] += H0.T @ dar
    G("b_r")[:] += dar.sum(axis=0)

    dT = dac @ V("w_c").T + dau @ V("w_u").T + dar @ V("w_r").T
    daT = dT * (1.0 - T * T)
    G("w_in")[:] += X.T @ daT
    G("b_in")[:] += daT.sum(axis=0)


def assemble_input(obs: np.ndarray, z: int | None, latent_dim: int) -> np.ndarray:
    if latent_dim > 0:
        if z is None or not 0 <= int(z) < latent_dim:
            raise NetError(f"latent index {z} out of range [0, {latent_dim})")
        x = np.zeros(obs.shape[0] + latent_dim, dtype=np.float64)
        x[: obs.shape[0]] = obs
        x[obs.shape[0] + int(z)] = 1.0
        return x
    return np.asarray(obs, dtype=np.float64)


def forward_policy(
    bank: ParamBank,
    obs: np.ndarray,
    z: int | None,
    hidden: np.ndarray,
    layout: dict[str, str] | None = None,
) -> PolicyOutput:
    """Single-step policy evaluation; deterministic given its inputs."""
    latent_dim = int(bank.meta.get("latent_dim", 0))
    obs_dim = int(bank.meta.get("obs_dim", obs.shape[0]))
    if obs.shape[0] != obs_dim:
        raise NetError(f"observation length {obs.shape[0]}, expected {obs_dim}")
    x = assemble_input(np.asarray(obs, dtype=np.float64), z, latent_dim)
    logits, values, H1, _ = policy_forward_batch(
        bank, x[None, :], hidden[None, :], layout
    )
    return PolicyOutput(logits[0], float(values[0]), H1[0])


def sample_action(logits: np.ndarray, rng: np.random.Generator, mode: str = "sample"):
    """Draw an action; argmax mode breaks ties toward the lowest index.
    Returns (action, log-probability of that action)."""
    if not np.all(np.isfinite(logits)):
        raise NetError("non-finite logits")
    logp = log_softmax(logits[None, :])[0]
    if mode == "argmax":
        a = int(np.argmax(logits))
    elif mode == "sample":
        p = np.exp(logp)
        a = int(rng.choice(p.shape[0], p=p / p.sum()))
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return a, float(logp[a])


def logprob_entropy(logits: np.ndarray, action: int) -> tuple[float, float]:
    logp = log_softmax(logits[None, :])[0]
    p = np.exp(logp)
    entropy = float(-(p * logp).sum())
    return float(logp[int(action)]), entropy


# --------------------------------------------------------------------- #
# discriminator network

def disc_forward_batch(bank: ParamBank, X: np.ndarray, need_cache: bool = False):
    h1 = np.tanh(X @ bank.view("w1") + bank.view("b1"))
    h2 = np.tanh(h1 @ bank.view("w2") + bank.view("b2"))
    logits = h2 @ bank.view("w3") + bank.view("b3")
    cache = (X, h1, h2) if need_cache else None
    return logits, cache


def disc_forward(bank: ParamBank, window: np.ndarray) -> np.ndarray:
    expected = bank.table[0][1][0]
    if window.shape[-1] != expected:
        raise NetError(f"window length {window.shape[-1]}, expected {expected}")
    logits, _ = disc_forward_batch(bank, np.asarray(window, dtype=np.float64)[None, :])
    return logits[0]


def disc_backward_batch(bank: ParamBank, cache, dlogits: np.ndarray, grad: np.ndarray) -> None:
    X, h1, h2 = cache

    def G(k):
        return bank.grad_view(grad, k)

    G("w3")[:] += h2.T @ dlogits
    G("b3")[:] += dlogits.sum(axis=0)
    dh2 = (dlogits @ bank.view("w3").T) * (1.0 - h2 * h2)
    G("w2")[:] += h1.T @ dh2
    G("b2")[:] += dh2.sum(axis=0)
    dh1 = (dh2 @ bank.view("w2").T) * (1.0 - h1 * h1)
    G("w1")[:] += X.T @ dh1
    G("b1")[:] += dh1.sum(axis=0)


def cross_entropy_loss(bank: ParamBank, X: np.ndarray, labels: np.ndarray, grad: np.ndarray | None = None):
    """Mean cross-entropy of the discriminator on (window, latent) pairs;
    optionally accumulates the parameter gradient."""
    logits, cache = disc_forward_batch(bank, X, need_cache=grad is not None)
    logp = log_softmax(logits)
    n = X.shape[0]
    loss = float(-logp[np.arange(n), labels].mean())
    if grad is not None:
        p = np.exp(logp)
        p[np.arange(n), labels] -= 1.0
        disc_backward_batch(bank, cache, p / n, grad)
    acc = float((logits.argmax(axis=1) == labels).mean())
    return loss, acc


# --------------------------------------------------------------------- #
# optimization

def clip_grad_norm(grad: np.ndarray, max_norm: float) -> float:
    """Global-norm clip in place; returns the pre-clip norm."""
    norm = float(np.sqrt((grad * grad).sum()))
    if norm > max_norm and norm > 0.0:
        grad *= max_norm / norm
    return norm


def adam_step(
    bank: ParamBank,
    grad: np.ndarray,
    lr: float = 3e-4,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-5,
    grad_clip: float | None = 0.2,
) -> float:
    """One Adam update on the bank's flat vector; gradient is global-norm
    clipped first.  Returns the pre-clip gradient norm."""
    if not np.all(np.isfinite(grad)):
        bad = int(np.flatnonzero(~np.isfinite(grad))[0])
        raise GradientError(f"non-finite gradient in layer {bank.layer_of_index(bad)!r}")
    if bank.adam_m is None:
        bank.adam_m = np.zeros_like(bank.flat)
        bank.adam_v = np.zeros_like(bank.flat)
    norm = clip_grad_norm(grad, grad_clip) if grad_clip is not None else float(
        np.sqrt((grad * grad).sum())
    )
    bank.adam_t += 1
    bank.adam_m *= beta1
    bank.adam_m += (1.0 - beta1) * grad
    bank.adam_v *= beta2
    bank.adam_v += (1.0 - beta2) * grad * grad
    mhat = bank.adam_m / (1.0 - beta1 ** bank.adam_t)
    vhat = bank.adam_v / (1.0 - beta2 ** bank.adam_t)
    bank.flat -= lr * mhat / (np.sqrt(vhat) + eps)
    return norm


# --------------------------------------------------------------------- #
# verification

def finite_diff_check(params: np.ndarray, loss_fn, epsilon: float = 1e-4) -> float:
    """Central-difference check of an analytic gradient.

    ``loss_fn(params) -> (loss, grad)`` must be deterministic.  Returns the
    max over parameters of |analytic - numeric| / max(|analytic|, 1e-8).
    """
    _, grad = loss_fn(params)
    worst = 0.0
    work = params.copy()
    for i in range(params.size):
        orig = work[i]
        work[i] = orig + epsilon
        lp, _ = loss_fn(work)
        work[i] = orig - epsilon
        lm, _ = loss_fn(work)
        work[i] = orig
        fd = (lp - lm) / (2.0 * epsilon)
        rel = abs(grad[i] - fd) / max(abs(grad[i]), 1e-8)
        if rel > worst:
            worst = rel
    return worst
