"""PPO with a clipped surrogate, GAE(lambda) and Adam, all in numpy."""

from __future__ import annotations

import csv
import hashlib
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from ..simenv import NavEnv
from .network import (
    ARCHITECTURE,
    LAYOUT,
    POLICY_KEYS,
    VALUE_KEYS,
    MlpParams,
    backward_batch,
    encode,
    forward,
    forward_batch,
    gaussian_log_prob,
    init_params,
    sample_action,
    squash_correction,
)

log = logging.getLogger(__name__)


class NonFiniteLoss(FloatingPointError):
    pass


@dataclass(frozen=True)
class PpoConfig:
    clip_epsilon: float = 0.2
    learning_rate: float = 3e-4
    epochs: int = 4
    minibatch_size: int = 64
    rollout_length: int = 2048
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    gamma: float = 0.99
    gae_lambda: float = 0.95
    max_env_steps: int = 500_000
    max_grad_norm: float = 0.5
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 < self.clip_epsilon < 1.0:
            raise ValueError("clip_epsilon must lie in (0, 1)")
        if not (0.0 < self.gamma <= 1.0 and 0.0 < self.gae_lambda <= 1.0):
            raise ValueError("gamma and gae_lambda must lie in (0, 1]")


@dataclass
class RolloutBatch:
    features: list[np.ndarray] = field(default_factory=list)
    raw_actions: list[np.ndarray] = field(default_factory=list)
    log_probs: list[float] = field(default_factory=list)
    rewards: list[float] = field(default_factory=list)
    values: list[float] = field(default_factory=list)
    dones: list[bool] = field(default_factory=list)
    last_value: float | None = None
    returns: np.ndarray | None = None
    advantages: np.ndarray | None = None

    def add(self, x, u, log_prob, reward, value, done) -> None:
        if self.sealed:
            raise RuntimeError("cannot add to a sealed batch")
        self.features.append(np.asarray(x, dtype=float))
        self.raw_actions.append(np.asarray(u, dtype=float))
        self.log_probs.append(float(log_prob))
        self.rewards.append(float(reward))
        self.values.append(float(value))
        self.dones.append(bool(done))

    def seal(self, last_value: float) -> None:
        """Close the batch with the value estimate of the state after the last step."""
        self.last_value = float(last_value)

    @property
    def sealed(self) -> bool:
        return self.last_value is not None

    def __len__(self) -> int:
        return len(self.rewards)


def compute_advantages(batch: RolloutBatch, gamma: float, gae_lambda: float) -> tuple[np.ndarray, np.ndarray]:
    """GAE(lambda) advantages and bootstrapped returns; ``done`` resets accumulation."""
    if not batch.sealed:
        raise RuntimeError("batch must be sealed with a bootstrap value first")
    rewards = np.asarray(batch.rewards)
    values = np.asarray(batch.values)
    dones = np.asarray(batch.dones, dtype=float)
    n = rewards.size
    adv = np.zeros(n)
    next_value = batch.last_value
    running = 0.0
    for t in range(n - 1, -1, -1):
        live = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_value * live - values[t]
        running = delta + gamma * gae_lambda * live * running
        adv[t] = running
        next_value = values[t]
    batch.advantages = adv
    batch.returns = adv + values
    return batch.returns, batch.advantages


@dataclass(frozen=True)
class LossStats:
    loss: float
    policy_loss: float
    value_loss: float
    entropy: float
    clip_fraction: float
    surrogate: float


def ppo_loss(
    params: MlpParams,
    x: np.ndarray,
    u: np.ndarray,
    old_log_prob: np.ndarray,
    advantages: np.ndarray,
    returns: np.ndarray,
    cfg: PpoConfig,
) -> tuple[LossStats, dict[str, np.ndarray]]:
    """Clipped-surrogate loss and its gradient for one minibatch.

    The tanh squash correction is constant in the parameters, so ratios are
    formed from the Gaussian log-densities of the stored raw samples.
    """
    n = x.shape[0]
    mean, log_std, value, cache = forward_batch(params, x)
    new_lp = gaussian_log_prob(u, mean, log_std)
    ratio = np.exp(new_lp - old_log_prob)
    eps = cfg.clip_epsilon
    clipped = np.clip(ratio, 1.0 - eps, 1.0 + eps)
    surr = np.minimum(ratio * advantages, clipped * advantages)
    policy_loss = -surr.mean()
    value_loss = np.mean((value - returns) ** 2)
    entropy = np.mean(np.sum(log_std + 0.5 * (1.0 + math.log(2.0 * math.pi)), axis=1))
    loss = policy_loss + cfg.value_coef * value_loss - cfg.entropy_coef * entropy
    if not math.isfinite(loss):
        raise NonFiniteLoss(
            f"non-finite loss (policy={policy_loss}, value={value_loss}, entropy={entropy})"
        )

    unclipped = ratio * advantages <= clipped * advantages
    d_lp = np.where(unclipped, -advantages * ratio / n, 0.0)
    inv_var = np.exp(-2.0 * log_std)
    diff = u - mean
    d_mean = d_lp[:, None] * diff * inv_var
    d_log_std = d_lp[:, None] * (diff * diff * inv_var - 1.0) - cfg.entropy_coef / n
    d_value = cfg.value_coef * 2.0 * (value - returns) / n
    grads = backward_batch(params, cache, d_mean, d_log_std, d_value)
    stats = LossStats(
        loss=float(loss),
        policy_loss=float(policy_loss),
        value_loss=float(value_loss),
        entropy=float(entropy),
        clip_fraction=float(np.mean(np.abs(ratio - 1.0) > eps)),
        surrogate=float(surr.mean()),
    )
    return stats, grads


class Adam:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: MlpParams, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for k, g in grads.items():
            m = self.m.setdefault(k, np.zeros_like(g))
            v = self.v.setdefault(k, np.zeros_like(g))
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            params.tensors[k] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def _clip_grads(grads: dict[str, np.ndarray], max_norm: float) -> None:
    # actor and critic trunks are clipped independently
    for keys in (POLICY_KEYS, VALUE_KEYS):
        norm = math.sqrt(sum(float(np.sum(grads[k] ** 2)) for k in keys))
        if norm > max_norm > 0:
            scale = max_norm / (norm + 1e-12)
            for k in keys:
                grads[k] *= scale


def ppo_update(
    params: MlpParams,
    batch: RolloutBatch,
    cfg: PpoConfig,
    rng: np.random.Generator | None = None,
    optimizer: Adam | None = None,
) -> tuple[MlpParams, dict[str, float]]:
    """Run ``cfg.epochs`` passes of minibatch Adam on the clipped objective.

    Returns new parameters (the input is left untouched) and averaged stats.
    """
    if batch.advantages is None or batch.returns is None:
        raise RuntimeError("compute_advantages must run before ppo_update")
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    optimizer = optimizer or Adam(cfg.learning_rate)
    new = params.copy()
    x = np.stack(batch.features)
    u = np.stack(batch.raw_actions)
    # stored log-probs include the squash term; ratios use the Gaussian part only
    old_lp = np.asarray(batch.log_probs) + squash_correction(u)
    adv = batch.advantages
    adv = (adv - adv.mean()) / max(adv.std(), 1e-8)
    ret = batch.returns
    n = len(batch)
    totals: dict[str, float] = {}
    count = 0
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for lo in range(0, n, cfg.minibatch_size):
            idx = order[lo : lo + cfg.minibatch_size]
            stats, grads = ppo_loss(new, x[idx], u[idx], old_lp[idx], adv[idx], ret[idx], cfg)
            _clip_grads(grads, cfg.max_grad_norm)
            optimizer.step(new, grads)
            for k, val in stats.__dict__.items():
                totals[k] = totals.get(k, 0.0) + val
            count += 1
    if not new.all_finite():
        raise NonFiniteLoss("parameters became non-finite during the update")
    return new, {k: v / max(count, 1) for k, v in totals.items()}


# --------------------------------------------------------------------------
# Checkpoints

_MAGIC = b"MPRLNAV\x00"
_VERSION = 1


def architecture_hash() -> bytes:
    spec = ARCHITECTURE + ";" + ";".join(f"{k}{s}" for k, s in LAYOUT)
    return hashlib.sha256(spec.encode()).digest()


def save_checkpoint(params: MlpParams, path: str | Path, seed: int) -> None:
    flat = params.flat().astype("<f8")
    header = _MAGIC + struct.pack("<I", _VERSION) + architecture_hash() + struct.pack("<qQ", seed, flat.size)
    Path(path).write_bytes(header + flat.tobytes())


def load_checkpoint(path: str | Path) -> tuple[MlpParams, int]:
    data = Path(path).read_bytes()
    if data[:8] != _MAGIC:
        raise ValueError(f"{path} is not a parameter checkpoint")
    (version,) = struct.unpack_from("<I", data, 8)
    if version != _VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    if data[12:44] != architecture_hash():
        raise ValueError("checkpoint was written for a different network architecture")
    seed, count = struct.unpack_from("<qQ", data, 44)
    flat = np.frombuffer(data, dtype="<f8", offset=60, count=count)
    return MlpParams.from_flat(flat.astype(float)), seed


# --------------------------------------------------------------------------
# Training loop

EnvFactory = Callable[[int], NavEnv]


@dataclass
class TrainResult:
    params: MlpParams
    curve: list[tuple[int, int, float]]


def train(
    env_factory: EnvFactory,
    cfg: PpoConfig,
    out_dir: str | Path | None = None,
    init: MlpParams | None = None,
) -> TrainResult:
    """Alternate rollout collection and PPO updates until ``max_env_steps``.

    ``env_factory(k)`` must return an environment already reset for episode
    ``k``. A checkpoint and a CSV of (iteration, env_steps, mean_return) are
    written to ``out_dir`` after every iteration.
    """
    rng = np.random.default_rng(cfg.seed)
    params = init.copy() if init is not None else init_params(rng)
    optimizer = Adam(cfg.learning_rate)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        _write_curve(out / "training_curve.csv", [])
        save_checkpoint(params, out / "params.ckpt", cfg.seed)

    curve: list[tuple[int, int, float]] = []
    steps = 0
    episode = 0
    env = env_factory(episode)
    ep_return = 0.0
    iteration = 0
    while steps < cfg.max_env_steps:
        batch = RolloutBatch()
        finished: list[float] = []
        horizon = min(cfg.rollout_length, cfg.max_env_steps - steps)
        for _ in range(horizon):
            obs = env.observe()
            x = encode(obs, env.cfg, env.params.v_max)
            action, logp, u = sample_action(params, x, rng, env.params.v_max, env.cfg.a_max)
            _, _, value = forward(params, x)
            res = env.step(action)
            batch.add(x, u, logp, res.reward, value, res.done)
            ep_return += res.reward
            steps += 1
            if res.done:
                finished.append(ep_return)
                ep_return = 0.0
                episode += 1
                env = env_factory(episode)
        _, _, last_value = forward(params, encode(env.observe(), env.cfg, env.params.v_max))
        batch.seal(last_value)
        compute_advantages(batch, cfg.gamma, cfg.gae_lambda)
        params, stats = ppo_update(params, batch, cfg, rng, optimizer)
        iteration += 1
        mean_ret = float(np.mean(finished)) if finished else float("nan")
        curve.append((iteration, steps, mean_ret))
        log.info(
            "iter %d steps %d episodes %d mean_return %.3f value_loss %.3f entropy %.3f",
            iteration, steps, len(finished), mean_ret, stats["value_loss"], stats["entropy"],
        )
        if out is not None:
            _write_curve(out / "training_curve.csv", curve)
            save_checkpoint(params, out / "params.ckpt", cfg.seed)
    return TrainResult(params, curve)


def _write_curve(path: Path, curve: list[tuple[int, int, float]]) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "env_steps", "mean_return"])
        for row in curve:
            w.writerow(row)
