"""
Policies driven by extrinsic plus intrinsic rewards: a uniform random policy
for the toy grid and a minimal PPO actor-critic with GAE for MultiRoom.

The clipped surrogate, value and entropy gradients are derived in closed form
with respect to the network outputs and backpropagated with
`farcuriosity_lab.nnkit`.
"""

from dataclasses import dataclass
from typing import Any, Dict, Optional, Tuple

import numpy as np

from farcuriosity_lab.constants import (
    DEFAULT_HIDDEN,
    INTRINSIC_COEF,
    N_ACTIONS,
    PPO_CLIP,
    PPO_ENTROPY_COEF,
    PPO_EPOCHS,
    PPO_GAMMA,
    PPO_LAMBDA,
    PPO_LR,
    PPO_MINIBATCHES,
    PPO_N_ENVS,
    PPO_ROLLOUT,
    PPO_VALUE_COEF,
)
from farcuriosity_lab.exceptions import InvalidArgumentError, StateFormatError
from farcuriosity_lab.nnkit import (
    AdamState,
    DenseNet,
    Grads,
    Rng,
    adam_from_dict,
    adam_step,
    adam_to_dict,
    dense_init,
    forward,
    loss_and_grads,
    net_from_dict,
    net_to_dict,
)

ADV_STD_FLOOR = 1e-8
HYPER_FIELDS = (
    "lr",
    "gamma",
    "gae_lambda",
    "clip",
    "value_coef",
    "entropy_coef",
    "epochs",
    "minibatches",
    "rollout_length",
    "n_envs",
)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(logits))


def entropy(probs: np.ndarray) -> np.ndarray:
    """Shannon entropy (nats) along the last axis."""
    probs = np.asarray(probs, dtype=np.float64)
    logs = np.log(np.where(probs > 0.0, probs, 1.0))
    return -(probs * logs).sum(axis=-1)


def sample_categorical(probs: np.ndarray, rng: Rng) -> np.ndarray:
    """Inverse-CDF sampling, one draw per row."""
    probs = np.atleast_2d(probs)
    cdf = np.cumsum(probs, axis=1)
    u = rng.random(probs.shape[0]) * cdf[:, -1]
    actions = (cdf <= u[:, None]).sum(axis=1)
    return np.minimum(actions, probs.shape[1] - 1)


def combine_rewards(extrinsic, intrinsic, c_int: float = INTRINSIC_COEF):
    """`r_ext + c_int * r_int`; the intrinsic part is normalized upstream."""
    if c_int < 0:
        raise InvalidArgumentError(f"c_int must be non-negative, got {c_int}.")
    return extrinsic + c_int * intrinsic


def gae(
    rewards,
    values,
    dones,
    gamma: float = PPO_GAMMA,
    lam: float = PPO_LAMBDA,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Generalized advantage estimation over a fixed horizon.

    Args:
        rewards: `(T,)` or `(T, n_envs)` rewards.
        values: Value estimates with one bootstrap row beyond the horizon,
            `(T + 1,)` or `(T + 1, n_envs)`.
        dones: Episode-end flags aligned with `rewards`; a done step does not
            bootstrap from the next value.

    Returns:
        Advantages and returns (`advantages + values[:-1]`).
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=np.float64)
    if dones.shape != rewards.shape or values.shape[0] != rewards.shape[0] + 1:
        raise InvalidArgumentError(
            f"Misaligned GAE inputs: rewards {rewards.shape}, values {values.shape}, "
            f"dones {dones.shape}."
        )
    advantages = np.zeros_like(rewards)
    running = np.zeros_like(rewards[0]) if rewards.ndim > 1 else 0.0
    for t in range(rewards.shape[0] - 1, -1, -1):
        live = 1.0 - dones[t]
        delta = rewards[t] + gamma * live * values[t + 1] - values[t]
        running = delta + gamma * lam * live * running
        advantages[t] = running
    return advantages, advantages + values[:-1]


class RandomPolicy:
    """Uniform policy over `n_actions`; value estimates are zero."""

    def __init__(self, n_actions: int = 4):
        self.n_actions = n_actions

    def act(self, obs, rng: Rng) -> Tuple[int, float, float]:
        return int(rng.integers(self.n_actions)), -float(np.log(self.n_actions)), 0.0


@dataclass
class LossReport:
    policy: float
    value: float
    entropy: float
    approx_kl: float
    clip_fraction: float


def surrogate_loss_and_grads(
    net: DenseNet,
    obs: np.ndarray,
    actions: np.ndarray,
    old_log_probs: np.ndarray,
    advantages: np.ndarray,
    clip: float = PPO_CLIP,
    entropy_coef: float = PPO_ENTROPY_COEF,
) -> Tuple[Dict[str, float], Grads]:
    """
    Loss `-(clipped surrogate) - entropy_coef * entropy` (batch means) and its
    gradient with respect to the policy parameters.
    """
    actions = np.asarray(actions, dtype=np.intp)

    def grad_fn(logits):
        batch = logits.shape[0]
        rows = np.arange(batch)
        logp_all = log_softmax(logits)
        probs = np.exp(logp_all)
        ratio = np.exp(logp_all[rows, actions] - old_log_probs)
        unclipped = ratio * advantages
        clipped = np.clip(ratio, 1.0 - clip, 1.0 + clip) * advantages
        surrogate = np.minimum(unclipped, clipped)
        ent = -(probs * logp_all).sum(axis=1)

        onehot = np.zeros_like(probs)
        onehot[rows, actions] = 1.0
        d_logp = np.where(unclipped <= clipped, ratio * advantages, 0.0)
        d_logits = -d_logp[:, None] * (onehot - probs)
        d_logits += entropy_coef * probs * (logp_all + ent[:, None])
        info = {
            "loss": float(-surrogate.mean() - entropy_coef * ent.mean()),
            "policy": float(-surrogate.mean()),
            "entropy": float(ent.mean()),
            "approx_kl": float(np.mean(old_log_probs - logp_all[rows, actions])),
            "clip_fraction": float(np.mean(np.abs(ratio - 1.0) > clip)),
        }
        return info, d_logits / batch

    return loss_and_grads(net, obs, grad_fn)


def value_loss_and_grads(
    net: DenseNet, obs: np.ndarray, returns: np.ndarray, value_coef: float
) -> Tuple[float, Grads]:
    """`value_coef * mean((V - returns)^2)` and its gradient."""

    def grad_fn(out):
        diff = out[:, 0] - returns
        grad = np.zeros_like(out)
        grad[:, 0] = 2.0 * value_coef * diff / diff.size
        return float(value_coef * np.mean(diff**2)), grad

    return loss_and_grads(net, obs, grad_fn)


class PpoAgent:
    """
    Categorical actor-critic with separate policy and value nets (two hidden
    relu layers each) and one Adam state per net.
    """

    def __init__(
        self,
        obs_dim: int,
        n_actions: int = N_ACTIONS,
        hidden: int = DEFAULT_HIDDEN,
        seed: int = 0,
        lr: float = PPO_LR,
        gamma: float = PPO_GAMMA,
        gae_lambda: float = PPO_LAMBDA,
        clip: float = PPO_CLIP,
        value_coef: float = PPO_VALUE_COEF,
        entropy_coef: float = PPO_ENTROPY_COEF,
        epochs: int = PPO_EPOCHS,
        minibatches: int = PPO_MINIBATCHES,
        rollout_length: int = PPO_ROLLOUT,
        n_envs: int = PPO_N_ENVS,
    ):
        self.obs_dim = obs_dim
        self.n_actions = n_actions
        self.hidden = hidden
        self.seed = seed
        self.lr = lr
        self.gamma = gamma
        self.gae_lambda = gae_lambda
        self.clip = clip
        self.value_coef = value_coef
        self.entropy_coef = entropy_coef
        self.epochs = epochs
        self.minibatches = minibatches
        self.rollout_length = rollout_length
        self.n_envs = n_envs
        policy_seed, value_seed = np.random.SeedSequence(seed).generate_state(2)
        self.policy = dense_init(
            [obs_dim, hidden, hidden, n_actions], seed=int(policy_seed)
        )
        self.value = dense_init([obs_dim, hidden, hidden, 1], seed=int(value_seed))
        self.policy_adam = AdamState.for_params(self.policy.params(), lr=lr)
        self.value_adam = AdamState.for_params(self.value.params(), lr=lr)

    @property
    def hyper(self) -> Dict[str, Any]:
        return {name: getattr(self, name) for name in HYPER_FIELDS}

    def policy_probs(self, obs) -> np.ndarray:
        return softmax(forward(self.policy, obs))

    def evaluate(self, obs) -> np.ndarray:
        return forward(self.value, obs)[..., 0]

    def act(self, obs, rng: Rng):
        """
        Sample actions from the policy for one observation `(D,)` or a batch
        `(B, D)`.

        Returns:
            Actions, their log-probabilities and value estimates (scalars for a
            single observation, arrays for a batch).
        """
        obs = np.asarray(obs, dtype=np.float64)
        logp_all = log_softmax(forward(self.policy, np.atleast_2d(obs)))
        actions = sample_categorical(np.exp(logp_all), rng)
        log_probs = logp_all[np.arange(actions.size), actions]
        values = self.evaluate(np.atleast_2d(obs))
        if obs.ndim == 1:
            return int(actions[0]), float(log_probs[0]), float(values[0])
        return actions, log_probs, values

    def to_dict(self) -> Dict[str, Any]:
        return {
            "obs_dim": self.obs_dim,
            "n_actions": self.n_actions,
            "hidden": self.hidden,
            "seed": self.seed,
            "hyper": dict(self.hyper),
            "policy": net_to_dict(self.policy),
            "value": net_to_dict(self.value),
            "policy_adam": adam_to_dict(self.policy_adam),
            "value_adam": adam_to_dict(self.value_adam),
        }

    @classmethod
    def from_dict(cls, doc: Dict[str, Any]) -> "PpoAgent":
        try:
            agent = cls(
                obs_dim=int(doc["obs_dim"]),
                n_actions=int(doc["n_actions"]),
                hidden=int(doc["hidden"]),
                seed=int(doc["seed"]),
                **doc["hyper"],
            )
            agent.policy = net_from_dict(doc["policy"])
            agent.value = net_from_dict(doc["value"])
            agent.policy_adam = adam_from_dict(doc["policy_adam"])
            agent.value_adam = adam_from_dict(doc["value_adam"])
        except (KeyError, TypeError) as exc:
            raise StateFormatError(f"Malformed agent checkpoint: {exc}") from exc
        return agent


class RolloutBuffer:
    """Fixed-horizon `(n_steps, n_envs)` storage consumed by `ppo_update`."""

    def __init__(self, n_steps: int, n_envs: int, obs_dim: int):
        if n_steps < 1 or n_envs < 1:
            raise InvalidArgumentError("A rollout needs at least one step and env.")
        self.n_steps = n_steps
        self.n_envs = n_envs
        self.obs = np.zeros((n_steps, n_envs, obs_dim))
        self.actions = np.zeros((n_steps, n_envs), dtype=np.intp)
        self.log_probs = np.zeros((n_steps, n_envs))
        self.values = np.zeros((n_steps, n_envs))
        self.ext_rewards = np.zeros((n_steps, n_envs))
        self.int_rewards = np.zeros((n_steps, n_envs))
        self.dones = np.zeros((n_steps, n_envs))
        self.advantages: Optional[np.ndarray] = None
        self.returns: Optional[np.ndarray] = None
        self.ptr = 0

    def __len__(self) -> int:
        return self.ptr * self.n_envs

    @property
    def full(self) -> bool:
        return self.ptr == self.n_steps

    def add(self, obs, actions, log_probs, values, ext_rewards, int_rewards, dones):
        if self.full:
            raise InvalidArgumentError("Rollout buffer is full.")
        t = self.ptr
        self.obs[t] = obs
        self.actions[t] = actions
        self.log_probs[t] = log_probs
        self.values[t] = values
        self.ext_rewards[t] = ext_rewards
        self.int_rewards[t] = int_rewards
        self.dones[t] = dones
        self.ptr += 1

    def finish(
        self,
        last_values,
        c_int: float = INTRINSIC_COEF,
        gamma: float = PPO_GAMMA,
        lam: float = PPO_LAMBDA,
    ) -> None:
        """Form combined rewards and compute advantages and returns."""
        if not self.full:
            raise InvalidArgumentError(
                f"Rollout holds {self.ptr} of {self.n_steps} steps."
            )
        rewards = combine_rewards(self.ext_rewards, self.int_rewards, c_int)
        values = np.vstack([self.values, np.asarray(last_values)[None, :]])
        self.advantages, self.returns = gae(rewards, values, self.dones, gamma, lam)

    def flat(self) -> Dict[str, np.ndarray]:
        size = self.n_steps * self.n_envs
        return {
            "obs": self.obs.reshape(size, -1),
            "actions": self.actions.reshape(size),
            "log_probs": self.log_probs.reshape(size),
            "advantages": self.advantages.reshape(size),
            "returns": self.returns.reshape(size),
        }

    def reset(self) -> None:
        self.ptr = 0
        self.advantages = None
        self.returns = None


def ppo_update(agent: PpoAgent, buffer: RolloutBuffer, rng: Rng) -> LossReport:
    """
    `epochs` passes of `minibatches` shuffled minibatches, one Adam step per
    minibatch on each net. Advantages are standardized per update batch unless
    their spread is below 1e-8.
    """
    if len(buffer) == 0 or buffer.advantages is None:
        raise InvalidArgumentError("ppo_update needs a finished, non-empty rollout.")
    data = buffer.flat()
    advantages = data["advantages"]
    std = advantages.std()
    if std >= ADV_STD_FLOOR:
        advantages = (advantages - advantages.mean()) / std
    size = advantages.size
    totals = np.zeros(5)
    n_batches = 0
    for _ in range(agent.epochs):
        for batch in np.array_split(rng.permutation(size), agent.minibatches):
            if batch.size == 0:
                continue
            info, policy_grads = surrogate_loss_and_grads(
                agent.policy,
                data["obs"][batch],
                data["actions"][batch],
                data["log_probs"][batch],
                advantages[batch],
                agent.clip,
                agent.entropy_coef,
            )
            value_loss, value_grads = value_loss_and_grads(
                agent.value,
                data["obs"][batch],
                data["returns"][batch],
                agent.value_coef,
            )
            adam_step(agent.policy_adam, agent.policy.params(), policy_grads)
            adam_step(agent.value_adam, agent.value.params(), value_grads)
            totals += (
                info["policy"],
                value_loss,
                info["entropy"],
                info["approx_kl"],
                info["clip_fraction"],
            )
            n_batches += 1
    return LossReport(*(totals / max(n_batches, 1)))
