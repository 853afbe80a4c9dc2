"""Proximal policy optimization for the room environment.

Advantages are the plain discounted sum of TD residuals over the rest of
the episode (or rollout), computed by a backward recursion. The quantity
minimized is

    loss = -mean(clipped surrogate) + c1 * mean(value error^2) - c2 * mean(entropy)

i.e. the negated PPO objective.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import net
from .errors import ConfigError, InvalidInputError, TrainingError
from .net import AdamState, MlpParams
from .room import SUCCESS, EnvState, make_observation, reset, step
from .seeding import derive_seed

log = logging.getLogger(__name__)

ADV_STD_FLOOR = 1e-8


@dataclass(frozen=True)
class PpoConfig:
    gamma: float = 0.99
    c1: float = 0.95
    c2: float = 0.001
    epsilon: float = 0.2
    horizon_T: int = 2048
    epochs_per_update: int = 4
    minibatch_size: int = 512
    lr: float = 3e-4
    total_steps: int = 6_000_000
    n_envs: int = 4

    def validate(self) -> None:
        if not 0 < self.gamma <= 1:
            raise ConfigError("gamma", f"must lie in (0, 1], got {self.gamma}")
        if not self.epsilon > 0:
            raise ConfigError("epsilon", f"must be > 0, got {self.epsilon}")
        for name in ("horizon_T", "epochs_per_update", "minibatch_size", "n_envs", "total_steps"):
            if getattr(self, name) < 1:
                raise ConfigError(name, f"must be >= 1, got {getattr(self, name)}")
        if not self.lr > 0:
            raise ConfigError("lr", f"must be > 0, got {self.lr}")
        if self.c1 < 0 or self.c2 < 0:
            raise ConfigError("c1" if self.c1 < 0 else "c2", "must be >= 0")
        if self.minibatch_size > self.batch_size:
            raise ConfigError("minibatch_size", f"must not exceed horizon_T * n_envs = {self.batch_size}")
        if self.total_steps < self.batch_size:
            raise ConfigError("total_steps", f"must be at least horizon_T * n_envs = {self.batch_size}")

    @property
    def batch_size(self) -> int:
        return self.horizon_T * self.n_envs

    @property
    def n_updates(self) -> int:
        return self.total_steps // self.batch_size


# --- advantage estimation -------------------------------------------------------

def compute_deltas(rewards, values, next_values, dones, gamma: float) -> np.ndarray:
    """TD residuals r_t + gamma * V(s_{t+1}) - V(s_t); no bootstrap through terminal steps."""
    rewards, values, next_values = (np.asarray(a, dtype=np.float64) for a in (rewards, values, next_values))
    dones = np.asarray(dones, dtype=bool)
    if not rewards.shape == values.shape == next_values.shape == dones.shape:
        raise InvalidInputError("rewards, values, next_values and dones must have equal shapes")
    return rewards + gamma * np.where(dones, 0.0, next_values) - values


def compute_advantages(deltas, dones, gamma: float) -> np.ndarray:
    """A_t = delta_t + gamma * A_{t+1} * (1 - done_t), along axis 0."""
    deltas = np.asarray(deltas, dtype=np.float64)
    keep = 1.0 - np.asarray(dones, dtype=np.float64)
    adv = np.empty_like(deltas)
    running = np.zeros_like(deltas[0])
    for t in range(deltas.shape[0] - 1, -1, -1):
        running = deltas[t] + gamma * running * keep[t]
        adv[t] = running
    return adv


def value_targets(advantages, values) -> np.ndarray:
    return np.asarray(advantages, dtype=np.float64) + np.asarray(values, dtype=np.float64)


# --- objective ------------------------------------------------------------------

def clipped_objective(ratio, advantage, epsilon: float):
    """min(r * A, clip(r, 1 - eps, 1 + eps) * A), elementwise (to be maximized)."""
    ratio = np.asarray(ratio, dtype=np.float64)
    advantage = np.asarray(advantage, dtype=np.float64)
    return np.minimum(ratio * advantage, np.clip(ratio, 1.0 - epsilon, 1.0 + epsilon) * advantage)


def total_loss(policy_terms, value_terms, entropy, c1: float, c2: float) -> float:
    """Quantity minimized: -mean(L^C) + c1 * mean(L^VF) - c2 * mean(S)."""
    policy_terms = np.asarray(policy_terms, dtype=np.float64)
    if policy_terms.size == 0:
        raise InvalidInputError("empty minibatch")
    return float(-np.mean(policy_terms) + c1 * np.mean(value_terms) - c2 * np.mean(entropy))


@dataclass
class LossInfo:
    loss: float
    policy_loss: float
    value_loss: float
    entropy: float
    clip_fraction: float
    ratio_mean: float
    ratio_max_dev: float


def loss_and_grads(params: MlpParams, obs, actions, logp_old, advantages, targets,
                   c1: float, c2: float, epsilon: float) -> tuple[LossInfo, MlpParams]:
    """Full PPO loss on a minibatch and its exact gradient w.r.t. every parameter."""
    mean, value, cache = net.forward(params, obs)
    actions = np.asarray(actions, dtype=np.float64)
    advantages = np.asarray(advantages, dtype=np.float64)
    k = mean.shape[0]
    inv_var = np.exp(-2.0 * params.log_std)
    diff = actions - mean
    logp = net.gaussian_log_prob(actions, mean, params.log_std)
    ratio = np.exp(logp - logp_old)
    surrogate = clipped_objective(ratio, advantages, epsilon)
    value_err = value - targets
    entropy = np.full(k, net.gaussian_entropy(params.log_std))
    loss = total_loss(surrogate, value_err ** 2, entropy, c1, c2)

    # d(min(rA, clip(r)A))/dr is A where the unclipped branch is selected, else 0.
    unclipped = ratio * advantages <= np.clip(ratio, 1.0 - epsilon, 1.0 + epsilon) * advantages
    d_logp = -(unclipped * advantages) * ratio / k
    d_mean = d_logp[:, None] * diff * inv_var
    d_log_std = np.sum(d_logp[:, None] * (diff * diff * inv_var - 1.0), axis=0) - c2
    d_value = 2.0 * c1 * value_err / k
    grads = net.backward(params, cache, obs, d_mean, d_value, d_log_std)

    info = LossInfo(
        loss=loss,
        policy_loss=float(-np.mean(surrogate)),
        value_loss=float(np.mean(value_err ** 2)),
        entropy=float(entropy[0]),
        clip_fraction=float(np.mean(np.abs(ratio - 1.0) > epsilon)),
        ratio_mean=float(np.mean(ratio)),
        ratio_max_dev=float(np.max(np.abs(ratio - 1.0))),
    )
    return info, grads


# --- rollouts -------------------------------------------------------------------

@dataclass
class EpisodeSummary:
    outcome: str
    length: int
    reward: float


@dataclass
class RolloutBuffer:
    obs: np.ndarray            # [T, N, D] float32
    actions: np.ndarray        # [T, N, 2]
    log_probs: np.ndarray      # [T, N]
    rewards: np.ndarray        # [T, N]
    values: np.ndarray         # [T, N]
    dones: np.ndarray          # [T, N] bool
    last_values: np.ndarray    # [N], V of the state after the final step
    episodes: list[EpisodeSummary] = field(default_factory=list)
    deltas: np.ndarray | None = None
    advantages: np.ndarray | None = None
    targets: np.ndarray | None = None

    @property
    def size(self) -> int:
        return self.rewards.size

    def finish(self, gamma: float) -> None:
        """Compute deltas, advantages and value targets in place."""
        next_values = np.concatenate([self.values[1:], self.last_values[None, :]], axis=0)
        self.deltas = compute_deltas(self.rewards, self.values, next_values, self.dones, gamma)
        self.advantages = compute_advantages(self.deltas, self.dones, gamma)
        self.targets = value_targets(self.advantages, self.values)


def collect_rollout(envs: list[EnvState], params: MlpParams, horizon_T: int,
                    rng: np.random.Generator) -> RolloutBuffer:
    """Run the stochastic policy for horizon_T steps in every env.

    Finished episodes are reset in place (envs[i] is replaced) using the
    env's own config, pools and rng, so envs stay independent.
    """
    n = len(envs)
    dim = envs[0].config.obs_dim
    buf = RolloutBuffer(
        obs=np.empty((horizon_T, n, dim), dtype=np.float32),
        actions=np.empty((horizon_T, n, 2)),
        log_probs=np.empty((horizon_T, n)),
        rewards=np.empty((horizon_T, n)),
        values=np.empty((horizon_T, n)),
        dones=np.empty((horizon_T, n), dtype=bool),
        last_values=np.empty(n),
    )
    obs = np.stack([make_observation(env) for env in envs])
    for t in range(horizon_T):
        mean, value, _ = net.forward(params, obs)
        actions, logp = net.sample_action(mean, params.log_std, rng)
        buf.obs[t] = obs
        buf.actions[t] = actions
        buf.log_probs[t] = logp
        buf.values[t] = value
        for i, env in enumerate(envs):
            result = step(env, actions[i])
            buf.rewards[t, i] = result.reward
            buf.dones[t, i] = result.done
            if result.done:
                buf.episodes.append(EpisodeSummary(result.outcome, env.step_count, env.episode_reward))
                envs[i], obs[i] = reset(env.config, env.pools, env.rng, env.clip_transform)
            else:
                obs[i] = result.observation
    _, buf.last_values[:], _ = net.forward(params, obs)
    return buf


# --- optimization ---------------------------------------------------------------

def update(params: MlpParams, adam: AdamState, buffer: RolloutBuffer, config: PpoConfig,
           rng: np.random.Generator) -> tuple[MlpParams, dict]:
    """Several epochs of shuffled minibatch Adam steps on one rollout."""
    if buffer.advantages is None:
        buffer.finish(config.gamma)
    obs = buffer.obs.reshape(buffer.size, -1)
    actions = buffer.actions.reshape(buffer.size, -1)
    logp_old = buffer.log_probs.reshape(-1)
    targets = buffer.targets.reshape(-1)
    adv = buffer.advantages.reshape(-1)
    adv = (adv - adv.mean()) / max(adv.std(), ADV_STD_FLOOR)

    infos: list[LossInfo] = []
    first_ratio_dev = None
    for _ in range(config.epochs_per_update):
        order = rng.permutation(buffer.size)
        for start in range(0, buffer.size - config.minibatch_size + 1, config.minibatch_size):
            idx = order[start:start + config.minibatch_size]
            info, grads = loss_and_grads(params, obs[idx], actions[idx], logp_old[idx], adv[idx],
                                         targets[idx], config.c1, config.c2, config.epsilon)
            if not np.isfinite(info.loss):
                raise TrainingError("non-finite loss", asdict(info))
            if first_ratio_dev is None:
                first_ratio_dev = info.ratio_max_dev
            params = net.adam_step(params, grads, adam, config.lr)
            infos.append(info)

    stats = {
        "policy_loss": float(np.mean([i.policy_loss for i in infos])),
        "value_loss": float(np.mean([i.value_loss for i in infos])),
        "entropy": infos[-1].entropy,
        "clip_fraction": float(np.mean([i.clip_fraction for i in infos])),
        "first_ratio_max_dev": first_ratio_dev,
    }
    return params, stats


EnvFactory = Callable[[int], EnvState]


def train(env_factory: EnvFactory, params: MlpParams, config: PpoConfig, run_seed: int, *,
          checkpoint_dir=None, checkpoint_every: int = 0, stats_path=None, resume: bool = False,
          on_update: Callable[[dict], None] | None = None) -> tuple[MlpParams, list[dict]]:
    """Collect -> estimate advantages -> update, until total_steps env steps are consumed.

    env_factory(seed) must return a freshly reset EnvState. With a
    checkpoint_dir, a resumable training state is written every
    `checkpoint_every` updates (and at the end); `resume` restarts from it.
    """
    config.validate()
    policy_rng = np.random.default_rng(derive_seed(run_seed, "policy"))
    shuffle_rng = np.random.default_rng(derive_seed(run_seed, "shuffle"))
    adam = AdamState.fresh(params)
    history: list[dict] = []
    successes = episodes = 0
    start_update = 0
    env_epoch = 0

    if resume and checkpoint_dir is not None and (Path(checkpoint_dir) / TRAIN_STATE).exists():
        params, adam, meta = load_train_state(Path(checkpoint_dir) / TRAIN_STATE)
        start_update = meta["update"]
        history = meta["history"]
        successes, episodes = meta["successes"], meta["episodes"]
        policy_rng.bit_generator.state = meta["policy_rng"]
        shuffle_rng.bit_generator.state = meta["shuffle_rng"]
        env_epoch = meta["env_epoch"] + 1
        log.info("resuming at update %d", start_update)

    # Environments restart from fresh episodes after a resume; env_epoch keeps their streams distinct.
    envs = [env_factory(derive_seed(run_seed, f"env/{i}/{env_epoch}")) for i in range(config.n_envs)]
    stats_file = open(stats_path, "a" if resume else "w") if stats_path else None
    try:
        for u in range(start_update, config.n_updates):
            buffer = collect_rollout(envs, params, config.horizon_T, policy_rng)
            buffer.finish(config.gamma)
            params, stats = update(params, adam, buffer, config, shuffle_rng)
            episodes += len(buffer.episodes)
            successes += sum(e.outcome == SUCCESS for e in buffer.episodes)
            rewards = [e.reward for e in buffer.episodes]
            stats = {
                "update": u + 1,
                "steps": (u + 1) * config.batch_size,
                "episodes": len(buffer.episodes),
                "mean_episode_reward": float(np.mean(rewards)) if rewards else 0.0,
                "rollout_success_rate": (sum(e.outcome == SUCCESS for e in buffer.episodes) / len(rewards)
                                         if rewards else 0.0),
                "success_rate_so_far": successes / episodes if episodes else 0.0,
                **stats,
            }
            history.append(stats)
            if stats_file:
                stats_file.write(json.dumps(stats) + "\n")
                stats_file.flush()
            if on_update:
                on_update(stats)
            log.info("update %d/%d steps=%d reward=%.3f success=%.2f", u + 1, config.n_updates,
                     stats["steps"], stats["mean_episode_reward"], stats["rollout_success_rate"])
            last = u + 1 == config.n_updates
            if checkpoint_dir is not None and (last or (checkpoint_every and (u + 1) % checkpoint_every == 0)):
                ckdir = Path(checkpoint_dir)
                ckdir.mkdir(parents=True, exist_ok=True)
                net.save_params(params, ckdir / f"ckpt_{u + 1:05d}.bin", {"update": u + 1})
                save_train_state(ckdir / TRAIN_STATE, params, adam, {
                    "update": u + 1, "history": history, "successes": successes, "episodes": episodes,
                    "policy_rng": policy_rng.bit_generator.state,
                    "shuffle_rng": shuffle_rng.bit_generator.state, "env_epoch": env_epoch,
                })
    finally:
        if stats_file:
            stats_file.close()
    return params, history


TRAIN_STATE = "train_state.bin"


def save_train_state(path, params: MlpParams, adam: AdamState, meta: dict) -> None:
    arrays = dict(params.items())
    arrays.update({f"adam.m.{k}": v for k, v in adam.m.items()})
    arrays.update({f"adam.v.{k}": v for k, v in adam.v.items()})
    net.save_arrays(path, arrays, {"kind": "train_state", "adam_t": adam.t, **meta})


def load_train_state(path) -> tuple[MlpParams, AdamState, dict]:
    meta, arrays = net.load_arrays(path)
    params = net.params_from_arrays(arrays)
    adam = AdamState(net.params_from_arrays(arrays, "adam.m."), net.params_from_arrays(arrays, "adam.v."),
                     int(meta["adam_t"]))
    return params, adam, meta


def policy_action(params: MlpParams, obs, deterministic: bool, rng: np.random.Generator | None) -> np.ndarray:
    """Single-observation action: the mean, or a sample from the policy."""
    mean, _, _ = net.forward(params, obs)
    if deterministic:
        return mean[0]
    action, _ = net.sample_action(mean, params.log_std, rng)
    return action[0]


def episode_segments(dones: Sequence[bool]) -> list[tuple[int, int]]:
    """Half-open [start, end) index ranges of the episodes in one env's done sequence."""
    segments = []
    start = 0
    for t, d in enumerate(dones):
        if d:
            segments.append((start, t + 1))
            start = t + 1
    if start < len(dones):
        segments.append((start, len(dones)))
    return segments
