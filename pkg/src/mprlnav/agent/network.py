"""Two-trunk tanh MLP (actor and critic) with hand-written backpropagation."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from ..simenv import EnvAction, EnvConfig, Observation

POOL = 4
COARSE = 16
FEATURES = 3 + COARSE * COARSE
HIDDEN = 64
ACTION_DIM = 2
LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0

# (name, shape) in checkpoint order
LAYOUT: tuple[tuple[str, tuple[int, ...]], ...] = (
    ("pi_w1", (HIDDEN, FEATURES)),
    ("pi_b1", (HIDDEN,)),
    ("pi_w2", (HIDDEN, HIDDEN)),
    ("pi_b2", (HIDDEN,)),
    ("pi_w3", (2 * ACTION_DIM, HIDDEN)),
    ("pi_b3", (2 * ACTION_DIM,)),
    ("v_w1", (HIDDEN, FEATURES)),
    ("v_b1", (HIDDEN,)),
    ("v_w2", (HIDDEN, HIDDEN)),
    ("v_b2", (HIDDEN,)),
    ("v_w3", (1, HIDDEN)),
    ("v_b3", (1,)),
)
POLICY_KEYS = tuple(k for k, _ in LAYOUT if k.startswith("pi_"))
VALUE_KEYS = tuple(k for k, _ in LAYOUT if k.startswith("v_"))
ARCHITECTURE = f"mlp-tanh:{FEATURES}-{HIDDEN}-{HIDDEN}:pi{2 * ACTION_DIM}:v1"


@dataclass(frozen=True, eq=False)
class MlpParams:
    tensors: dict[str, np.ndarray]

    def __post_init__(self) -> None:
        for name, shape in LAYOUT:
            t = self.tensors.get(name)
            if t is None or t.shape != shape:
                got = None if t is None else t.shape
                raise ValueError(f"parameter {name} has shape {got}, expected {shape}")

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def __iter__(self) -> Iterator[str]:
        return iter(name for name, _ in LAYOUT)

    def copy(self) -> "MlpParams":
        return MlpParams({k: v.copy() for k, v in self.tensors.items()})

    def flat(self) -> np.ndarray:
        return np.concatenate([self.tensors[k].ravel() for k in self])

    @classmethod
    def from_flat(cls, vec: np.ndarray) -> "MlpParams":
        tensors, pos = {}, 0
        for name, shape in LAYOUT:
            n = int(np.prod(shape))
            tensors[name] = np.array(vec[pos : pos + n], dtype=float).reshape(shape)
            pos += n
        if pos != vec.size:
            raise ValueError(f"flat vector has {vec.size} entries, expected {pos}")
        return cls(tensors)

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(t)) for t in self.tensors.values())


def init_params(rng: np.random.Generator) -> MlpParams:
    tensors: dict[str, np.ndarray] = {}
    for name, shape in LAYOUT:
        if len(shape) == 1:
            tensors[name] = np.zeros(shape)
            continue
        gain = math.sqrt(2.0)
        if name == "pi_w3":
            gain = 0.01
        elif name == "v_w3":
            gain = 1.0
        q, r = np.linalg.qr(rng.standard_normal((max(shape), min(shape))))
        q = q * np.sign(np.diag(r))
        w = q if q.shape == shape else q.T
        tensors[name] = gain * w[: shape[0], : shape[1]]
    return MlpParams(tensors)


def zero_params() -> MlpParams:
    return MlpParams({name: np.zeros(shape) for name, shape in LAYOUT})


def encode(obs: Observation, cfg: EnvConfig, v_max: float = 5.0) -> np.ndarray:
    """Feature vector: normalised heading, distance, speed, then a 16x16 obstacle map.

    A coarse cell reads 1 if any of its 4x4 fine cells is obstacle, else 0.
    """
    coarse = obs.patch.reshape(COARSE, POOL, COARSE, POOL).min(axis=(1, 3))
    x = np.empty(FEATURES)
    x[0] = obs.rel_heading / math.pi
    x[1] = min(obs.distance / cfg.d_max, 1.0)
    x[2] = min(obs.speed / v_max, 1.0)
    x[3:] = 1.0 - coarse.ravel()
    return x


@dataclass
class ForwardCache:
    x: np.ndarray
    pi_h1: np.ndarray
    pi_h2: np.ndarray
    v_h1: np.ndarray
    v_h2: np.ndarray
    raw_log_std: np.ndarray


def forward_batch(params: MlpParams, x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, ForwardCache]:
    """Batched forward pass over rows of ``x``; returns mean, log-std, value, cache."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[1] != FEATURES:
        raise ValueError(f"expected {FEATURES} features, got {x.shape[1]}")
    p = params.tensors
    h1 = np.tanh(x @ p["pi_w1"].T + p["pi_b1"])
    h2 = np.tanh(h1 @ p["pi_w2"].T + p["pi_b2"])
    out = h2 @ p["pi_w3"].T + p["pi_b3"]
    g1 = np.tanh(x @ p["v_w1"].T + p["v_b1"])
    g2 = np.tanh(g1 @ p["v_w2"].T + p["v_b2"])
    value = (g2 @ p["v_w3"].T + p["v_b3"])[:, 0]
    mean = out[:, :ACTION_DIM]
    raw_log_std = out[:, ACTION_DIM:]
    log_std = np.clip(raw_log_std, LOG_STD_MIN, LOG_STD_MAX)
    return mean, log_std, value, ForwardCache(x, h1, h2, g1, g2, raw_log_std)


def forward(params: MlpParams, x: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    mean, log_std, value, _ = forward_batch(params, x)
    return mean[0], log_std[0], float(value[0])


def backward_batch(
    params: MlpParams,
    cache: ForwardCache,
    d_mean: np.ndarray,
    d_log_std: np.ndarray,
    d_value: np.ndarray,
) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss given its partials w.r.t. the three outputs."""
    p = params.tensors
    grads: dict[str, np.ndarray] = {}
    d_log_std = np.where(
        (cache.raw_log_std >= LOG_STD_MIN) & (cache.raw_log_std <= LOG_STD_MAX), d_log_std, 0.0
    )
    d_out = np.concatenate([d_mean, d_log_std], axis=1)
    grads["pi_w3"] = d_out.T @ cache.pi_h2
    grads["pi_b3"] = d_out.sum(axis=0)
    d_a2 = (d_out @ p["pi_w3"]) * (1.0 - cache.pi_h2**2)
    grads["pi_w2"] = d_a2.T @ cache.pi_h1
    grads["pi_b2"] = d_a2.sum(axis=0)
    d_a1 = (d_a2 @ p["pi_w2"]) * (1.0 - cache.pi_h1**2)
    grads["pi_w1"] = d_a1.T @ cache.x
    grads["pi_b1"] = d_a1.sum(axis=0)

    d_v = np.asarray(d_value, dtype=float).reshape(-1, 1)
    grads["v_w3"] = d_v.T @ cache.v_h2
    grads["v_b3"] = d_v.sum(axis=0)
    d_g2 = (d_v @ p["v_w3"]) * (1.0 - cache.v_h2**2)
    grads["v_w2"] = d_g2.T @ cache.v_h1
    grads["v_b2"] = d_g2.sum(axis=0)
    d_g1 = (d_g2 @ p["v_w2"]) * (1.0 - cache.v_h1**2)
    grads["v_w1"] = d_g1.T @ cache.x
    grads["v_b1"] = d_g1.sum(axis=0)
    return grads


# --------------------------------------------------------------------------
# Squashed Gaussian policy

_LOG_2PI = math.log(2.0 * math.pi)


def gaussian_log_prob(u: np.ndarray, mean: np.ndarray, log_std: np.ndarray) -> np.ndarray:
    z = (u - mean) * np.exp(-log_std)
    return np.sum(-0.5 * z * z - log_std - 0.5 * _LOG_2PI, axis=-1)


def squash_correction(u: np.ndarray) -> np.ndarray:
    """Sum of log(1 - tanh(u)^2), computed stably."""
    return np.sum(2.0 * (math.log(2.0) - u - np.logaddexp(0.0, -2.0 * u)), axis=-1)


def squashed_to_action(y: np.ndarray, v_max: float, a_max: float) -> EnvAction:
    return EnvAction(
        desired_speed=float(0.5 * (y[0] + 1.0) * v_max),
        heading_change=float(y[1] * a_max),
    )


def sample_action(
    params: MlpParams,
    x: np.ndarray,
    rng: np.random.Generator,
    v_max: float = 5.0,
    a_max: float = 0.3,
) -> tuple[EnvAction, float, np.ndarray]:
    mean, log_std, _ = forward(params, x)
    u = mean + np.exp(log_std) * rng.standard_normal(ACTION_DIM)
    log_prob = float(gaussian_log_prob(u, mean, log_std) - squash_correction(u))
    return squashed_to_action(np.tanh(u), v_max, a_max), log_prob, u


def deterministic_action(params: MlpParams, x: np.ndarray, v_max: float = 5.0, a_max: float = 0.3) -> EnvAction:
    mean, _, _ = forward(params, x)
    return squashed_to_action(np.tanh(mean), v_max, a_max)
