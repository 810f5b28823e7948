"""On-policy actor-critic learners: IA2C, IPPO, MAA2C and MAPPO.

The independent variants give every agent a critic on its own observation;
the multi-agent variants use one critic on the concatenation of all agents'
observations. PPO reuses each rollout for several clipped epochs, A2C uses it
once. Advantages are n-step returns (bootstrapped from a slowly updated
target critic) minus the online critic's estimate.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import nn
from .agents import AgentGroup
from .diagnostics import policy_entropy, softmax, update_divergence
from .errors import StaleRollout
from .nn import Adam, NetSpec, TargetUpdate, Tensor, forward, init_params
from .qlearn import RunningMeanStd

ALGORITHMS = ("ia2c", "ippo", "maa2c", "mappo")


@dataclass
class PgConfig:
    algorithm: str = "maa2c"
    param_sharing: bool = True
    hidden_dim: int = 128
    network: str = "gru"
    lr: float = 5e-4
    gamma: float = 0.99
    entropy_coef: float = 0.001
    n_step: int = 10
    ppo_clip: float = 0.2
    ppo_epochs: int = 4
    max_grad_norm: float = 10.0
    reward_standardisation: bool = True
    target_update: tuple = ("soft", 0.01)
    n_workers: int = 10
    evaluation_epsilon: float = 0.01

    def __post_init__(self):
        self.algorithm = self.algorithm.lower()
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown policy-gradient algorithm {self.algorithm!r}")

    @property
    def centralized_critic(self):
        return self.algorithm in ("maa2c", "mappo")

    @property
    def is_ppo(self):
        return self.algorithm in ("ippo", "mappo")


def n_step_returns(rewards, values, dones, gamma, n):
    """n-step bootstrapped returns along the last (time) axis.

    ``rewards`` and ``dones`` have ``T`` steps, ``values`` has ``T + 1`` (the
    last one estimates the state after the final step). Summation stops at a
    terminal step, where the bootstrap is dropped, and at the end of the
    rollout, where ``values[..., T]`` is used.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=bool)
    T = rewards.shape[-1]
    out = np.zeros_like(rewards)
    for t in range(T):
        acc = np.zeros(rewards.shape[:-1])
        alive = np.ones(rewards.shape[:-1], dtype=bool)
        for k in range(n):
            idx = t + k
            if idx >= T:
                acc += np.where(alive, gamma ** k * values[..., T], 0.0)
                alive = np.zeros_like(alive)
                break
            acc += np.where(alive, gamma ** k * rewards[..., idx], 0.0)
            alive &= ~dones[..., idx]
        else:
            acc += np.where(alive, gamma ** n * values[..., min(t + n, T)], 0.0)
        out[..., t] = acc
    return out


def critic_input(algorithm, obs):
    """Critic features for ``obs`` of shape ``(..., n_agents, obs_dim)``.

    Independent learners see their own observation ``(..., n, d)``; the
    centralised critic sees every agent's observation in agent order,
    ``(..., n * d)``.
    """
    obs = np.asarray(obs)
    if algorithm in ("maa2c", "mappo"):
        return obs.reshape(obs.shape[:-2] + (-1,))
    if algorithm in ("ia2c", "ippo"):
        return obs
    raise ValueError(f"unknown policy-gradient algorithm {algorithm!r}")


class CentralCritic:
    def __init__(self, n_agents, obs_dim, hidden_dim, rng, dtype=np.float32):
        self.spec = NetSpec(n_agents * obs_dim, hidden_dim, 1, "fc", n_hidden_layers=2)
        self.stores = [init_params(self.spec, rng, 1.0, dtype)]
        self.dtype = np.dtype(dtype)

    def unroll(self, obs_seq):
        """Values ``(B, T, 1)`` for ``(B, T, n, d)`` observations."""
        x = critic_input("maa2c", np.asarray(obs_seq, dtype=self.dtype))
        out, _ = forward(self.spec, self.stores[0], x)
        return out

    def copy(self):
        other = object.__new__(CentralCritic)
        other.__dict__.update(self.__dict__)
        other.stores = [s.copy() for s in self.stores]
        return other

    def arrays(self, prefix):
        return {f"{prefix}0/{k}": v for k, v in self.stores[0].arrays().items()}

    def load_arrays(self, arrays, prefix):
        self.stores[0].load_arrays({k: arrays[f"{prefix}0/{k}"] for k in self.stores[0].names()})


class IndependentCritic:
    def __init__(self, n_agents, obs_dim, hidden_dim, shared, rng, dtype=np.float32):
        self.group = AgentGroup(n_agents, obs_dim, 1, hidden_dim, "fc", shared, rng, dtype=dtype)
        self.stores = self.group.stores

    def unroll(self, obs_seq):
        """Values ``(B, T, n)`` for ``(B, T, n, d)`` observations."""
        out = self.group.unroll(obs_seq)
        return out.reshape(out.shape[:-1])

    def copy(self):
        other = object.__new__(IndependentCritic)
        other.group = self.group.copy()
        other.stores = other.group.stores
        return other

    def arrays(self, prefix):
        return self.group.arrays(prefix)

    def load_arrays(self, arrays, prefix):
        self.group.load_arrays(arrays, prefix)


@dataclass
class Rollout:
    """Full episodes from the parallel workers, padded to a common length."""

    obs: np.ndarray            # (W, T+1, n, d)
    actions: np.ndarray        # (W, T, n)
    rewards: np.ndarray        # (W, T) team reward
    terminated: np.ndarray     # (W, T)
    mask: np.ndarray           # (W, T)
    old_log_probs: np.ndarray  # (W, T, n) behaviour log-probabilities
    consumed: bool = False

    @classmethod
    def from_episodes(cls, episodes, dtype=np.float32):
        T = max(len(ep["actions"]) for ep in episodes)
        W = len(episodes)
        n, d = episodes[0]["obs"].shape[1:]
        r = cls(
            obs=np.zeros((W, T + 1, n, d), dtype=dtype),
            actions=np.zeros((W, T, n), dtype=np.int64),
            rewards=np.zeros((W, T), dtype=dtype),
            terminated=np.zeros((W, T), dtype=dtype),
            mask=np.zeros((W, T), dtype=dtype),
            old_log_probs=np.zeros((W, T, n), dtype=dtype),
        )
        for w, ep in enumerate(episodes):
            L = len(ep["actions"])
            r.obs[w, : L + 1] = ep["obs"]
            r.actions[w, :L] = ep["actions"]
            r.rewards[w, :L] = ep["rewards"]
            r.terminated[w, :L] = ep["terminated"]
            r.mask[w, :L] = 1.0
            r.old_log_probs[w, :L] = ep["log_probs"]
        return r


@dataclass
class PgBatch:
    """Differentiable pieces of one pass over a rollout."""

    log_probs: Tensor          # (W, T, n) log pi(a_t | o_t)
    entropy: Tensor            # (W, T, n)
    values: Tensor             # (W, T, k), k = 1 (central) or n
    returns: np.ndarray        # (W, T, k)
    advantages: np.ndarray     # (W, T, n), detached
    mask: np.ndarray           # (W, T)
    old_log_probs: np.ndarray  # (W, T, n)
    logits: Optional[np.ndarray] = None


def _masked_mean(x: Tensor, mask):
    m = np.broadcast_to(mask.reshape(mask.shape + (1,) * (x.ndim - mask.ndim)), x.shape)
    m = m.astype(x.data.dtype)
    return (x * m).sum() * (1.0 / max(float(m.sum()), 1.0))


def _value_and_entropy_terms(batch: PgBatch, config: PgConfig):
    value_loss = _masked_mean(nn.square(batch.values - batch.returns.astype(batch.values.data.dtype)),
                              batch.mask)
    entropy = _masked_mean(batch.entropy, batch.mask)
    return value_loss, entropy * config.entropy_coef


def a2c_loss(batch: PgBatch, config: PgConfig):
    """``(policy_loss, value_loss, entropy_bonus)``; total is ``p + v - bonus``."""
    adv = batch.advantages.astype(batch.log_probs.data.dtype)
    policy_loss = -_masked_mean(batch.log_probs * adv, batch.mask)
    value_loss, bonus = _value_and_entropy_terms(batch, config)
    return policy_loss, value_loss, bonus


def ppo_loss(batch: PgBatch, config: PgConfig):
    """Clipped surrogate: ``-mean(min(rho * A, clip(rho, 1 - c, 1 + c) * A))``."""
    dtype = batch.log_probs.data.dtype
    adv = batch.advantages.astype(dtype)
    ratio = nn.exp(batch.log_probs - batch.old_log_probs.astype(dtype))
    c = config.ppo_clip
    surrogate = nn.minimum(ratio * adv, nn.clip(ratio, 1.0 - c, 1.0 + c) * adv)
    policy_loss = -_masked_mean(surrogate, batch.mask)
    value_loss, bonus = _value_and_entropy_terms(batch, config)
    return policy_loss, value_loss, bonus


class PgLearner:
    def __init__(self, config: PgConfig, n_agents, obs_dim, n_actions, rng=None,
                 dtype=np.float32):
        rng = np.random.default_rng(0) if rng is None else rng
        self.config = config
        self.n_agents = n_agents
        self.obs_dim = obs_dim
        self.n_actions = n_actions
        self.dtype = np.dtype(dtype)
        self.actors = AgentGroup(n_agents, obs_dim, n_actions, config.hidden_dim, config.network,
                                 config.param_sharing, rng, head_gain=0.01, dtype=dtype)
        if config.centralized_critic:
            self.critic = CentralCritic(n_agents, obs_dim, config.hidden_dim, rng, dtype)
        else:
            self.critic = IndependentCritic(n_agents, obs_dim, config.hidden_dim,
                                            config.param_sharing, rng, dtype)
        self.target_critic = self.critic.copy()
        self.optimizer = Adam(self.actors.stores + self.critic.stores, lr=config.lr,
                              max_grad_norm=config.max_grad_norm)
        mode, value = config.target_update
        self.target_updater = TargetUpdate(mode, value)
        self.reward_stats = RunningMeanStd()
        self.train_steps = 0

    # acting ---------------------------------------------------------------

    def init_hidden(self, batch=1):
        return self.actors.init_hidden(batch)

    def act(self, obs, hidden, rng, greedy=False):
        """Sample actions for a batch of joint observations ``(W, n, d)``.

        Returns ``(actions, log_probs, probs, hidden)``.
        """
        with nn.no_grad():
            logits, hidden = self.actors.step(obs, hidden)
        probs = softmax(logits.data)
        if greedy:
            actions = probs.argmax(axis=-1)
        else:
            cdf = probs.cumsum(axis=-1)
            u = rng.random(probs.shape[:-1])[..., None] * cdf[..., -1:]
            actions = np.minimum((u >= cdf).sum(axis=-1), self.n_actions - 1)
        logp = np.log(np.maximum(np.take_along_axis(probs, actions[..., None], -1)[..., 0], 1e-30))
        return actions, logp, probs, hidden

    def observe_rewards(self, team_rewards):
        self.reward_stats.update(team_rewards)

    # training -------------------------------------------------------------

    def returns(self, rollout: Rollout):
        rewards = rollout.rewards.astype(np.float64)
        if self.config.reward_standardisation:
            rewards = self.reward_stats.standardize(rewards)
        with nn.no_grad():
            tv = self.target_critic.unroll(rollout.obs).data.astype(np.float64)  # (W, T+1, k)
        k = tv.shape[-1]
        r = np.repeat(rewards[..., None], k, axis=-1)
        d = np.repeat(rollout.terminated[..., None].astype(bool), k, axis=-1)
        g = n_step_returns(np.moveaxis(r, 1, -1), np.moveaxis(tv, 1, -1), np.moveaxis(d, 1, -1),
                           self.config.gamma, self.config.n_step)
        return np.moveaxis(g, -1, 1)  # (W, T, k)

    def batch(self, rollout: Rollout, returns=None) -> PgBatch:
        T = rollout.actions.shape[1]
        if returns is None:
            returns = self.returns(rollout)
        logits = self.actors.unroll(rollout.obs)[:, :T]
        logp_all = nn.log_softmax(logits)
        log_probs = nn.take_last(logp_all, rollout.actions)
        entropy = -(nn.exp(logp_all) * logp_all).sum(axis=-1)
        values = self.critic.unroll(rollout.obs)[:, :T]
        adv = returns - values.data
        if adv.shape[-1] != self.n_agents:
            adv = np.broadcast_to(adv, adv.shape[:-1] + (self.n_agents,))
        return PgBatch(log_probs, entropy, values, returns, np.array(adv), rollout.mask,
                       rollout.old_log_probs, logits=logits.data)

    def loss_terms(self, batch: PgBatch):
        fn = ppo_loss if self.config.is_ppo else a2c_loss
        return fn(batch, self.config)

    def train(self, rollout: Rollout):
        """Update on ``rollout`` (one A2C step, or ``ppo_epochs`` PPO epochs).

        Returns loss components, the number of epochs run, and per-agent
        policy entropy and update divergence on the rollout.
        """
        if rollout.consumed:
            raise StaleRollout("rollout was already used for an update; collect a new one")
        cfg = self.config
        T = rollout.actions.shape[1]
        returns = self.returns(rollout)
        epochs = cfg.ppo_epochs if cfg.is_ppo else 1
        old_logits = None
        for _ in range(epochs):
            self.optimizer.zero_grad()
            batch = self.batch(rollout, returns)
            if old_logits is None:
                old_logits = batch.logits
            pl, vl, bonus = self.loss_terms(batch)
            total = pl + vl - bonus
            nn.backward(total)
            grad_norm = self.optimizer.step()
        self.target_updater(self.critic.stores, self.target_critic.stores)
        rollout.consumed = True
        self.train_steps += 1

        with nn.no_grad():
            new_logits = self.actors.unroll(rollout.obs).data[:, :T]
        new, old = softmax(new_logits), softmax(old_logits)
        ent = policy_entropy(new)
        div = update_divergence(new, old)
        w = rollout.mask[..., None]
        denom = max(float(rollout.mask.sum()), 1.0)
        return {
            "loss": float(total.data),
            "policy_loss": float(pl.data),
            "value_loss": float(vl.data),
            "entropy_bonus": float(bonus.data),
            "grad_norm": grad_norm,
            "epochs": epochs,
            "entropy": ((ent * w).sum(axis=(0, 1)) / denom).tolist(),
            "divergence": ((div * w).sum(axis=(0, 1)) / denom).tolist(),
        }

    # persistence ----------------------------------------------------------

    def arrays(self):
        out = self.actors.arrays("actor")
        out.update(self.critic.arrays("critic"))
        return out

    def load_arrays(self, arrays):
        self.actors.load_arrays(arrays, "actor")
        self.critic.load_arrays(arrays, "critic")
        self.target_critic.load_arrays(arrays, "critic")


def pg_train_step(learner: PgLearner, rollout: Rollout):
    return learner.train(rollout)
