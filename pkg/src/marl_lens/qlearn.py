"""Value-based learners: IQL, VDN and QMIX.

All three share a recurrent (or feed-forward) per-agent Q network trained on
whole episodes sampled from a replay buffer. They differ only in how the
chosen per-agent values are combined before the TD error is formed: IQL keeps
them separate, VDN adds them, QMIX passes them through a state-conditioned
monotonic mixing network.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import nn
from .agents import AgentGroup
from .diagnostics import extract_policy, policy_entropy, update_divergence
from .errors import BufferUnderflow, ShapeMismatch
from .nn import Adam, ParamStore, TargetUpdate, Tensor, orthogonal

ALGORITHMS = ("iql", "vdn", "qmix")


@dataclass
class EpsilonSchedule:
    start: float = 1.0
    end: float = 0.05
    decay_steps: float = 2e6

    def at(self, step):
        if step >= self.decay_steps:
            return self.end
        frac = max(step, 0) / self.decay_steps
        return self.start + frac * (self.end - self.start)


def epsilon_at(schedule: EpsilonSchedule, step) -> float:
    return schedule.at(step)


def select_actions(q_values, epsilon, rng):
    """Epsilon-greedy choice per agent; greedy ties go to the lowest index."""
    q_values = np.asarray(q_values)
    n, n_actions = q_values.shape
    greedy = np.argmax(q_values, axis=1)
    explore = rng.random(n) < epsilon
    random_actions = rng.integers(0, n_actions, size=n)
    return np.where(explore, random_actions, greedy)


@dataclass
class QLearnerConfig:
    algorithm: str = "iql"
    param_sharing: bool = True
    hidden_dim: int = 128
    network: str = "gru"
    lr: float = 3e-4
    gamma: float = 0.99
    batch_size: int = 32
    buffer_size: int = 5000
    target_update: tuple = ("hard", 200)
    reward_standardisation: bool = True
    evaluation_epsilon: float = 0.05
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_decay_steps: float = 2e6
    max_grad_norm: float = 10.0
    mixing_embed_dim: int = 32
    hypernet_embed: int = 64
    hypernet_layers: int = 2

    def __post_init__(self):
        self.algorithm = self.algorithm.lower()
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown Q-learning algorithm {self.algorithm!r}")

    @property
    def epsilon_schedule(self):
        return EpsilonSchedule(self.epsilon_start, self.epsilon_end, self.epsilon_decay_steps)


# --------------------------------------------------------------------------- #
# Replay


@dataclass
class EpisodeBatch:
    obs: np.ndarray          # (B, T+1, n, d)
    actions: np.ndarray      # (B, T, n)
    rewards: np.ndarray      # (B, T) team reward
    terminated: np.ndarray   # (B, T)
    mask: np.ndarray         # (B, T) 1 on real steps

    @classmethod
    def from_episodes(cls, episodes, dtype=np.float32):
        T = max(len(ep["actions"]) for ep in episodes)
        B = len(episodes)
        n, d = episodes[0]["obs"].shape[1:]
        obs = np.zeros((B, T + 1, n, d), dtype=dtype)
        actions = np.zeros((B, T, n), dtype=np.int64)
        rewards = np.zeros((B, T), dtype=dtype)
        term = np.zeros((B, T), dtype=dtype)
        mask = np.zeros((B, T), dtype=dtype)
        for b, ep in enumerate(episodes):
            L = len(ep["actions"])
            obs[b, : L + 1] = ep["obs"]
            actions[b, :L] = ep["actions"]
            rewards[b, :L] = ep["rewards"]
            term[b, :L] = ep["terminated"]
            mask[b, :L] = 1.0
        return cls(obs, actions, rewards, term, mask)


class ReplayBuffer:
    """Ring buffer of whole episodes."""

    def __init__(self, capacity=5000):
        self.capacity = int(capacity)
        self.episodes = []
        self._next = 0
        self.inserted = 0

    def __len__(self):
        return len(self.episodes)

    def insert(self, episode):
        """``episode`` holds ``obs (T+1,n,d)``, ``actions (T,n)``, ``rewards (T,)``, ``terminated (T,)``."""
        if len(self.episodes) < self.capacity:
            self.episodes.append(episode)
        else:
            self.episodes[self._next] = episode
        self._next = (self._next + 1) % self.capacity
        self.inserted += 1

    def sample(self, batch_size, rng) -> EpisodeBatch:
        if len(self.episodes) < batch_size:
            raise BufferUnderflow(f"buffer holds {len(self.episodes)} episodes, need {batch_size}")
        idx = rng.choice(len(self.episodes), size=batch_size, replace=False)
        return EpisodeBatch.from_episodes([self.episodes[i] for i in idx])


class RunningMeanStd:
    """Streaming mean and variance (Chan et al. parallel update)."""

    def __init__(self):
        self.mean = 0.0
        self.var = 0.0
        self.count = 0

    def update(self, values):
        values = np.asarray(values, dtype=np.float64).ravel()
        if values.size == 0:
            return
        b_mean, b_var, b_n = values.mean(), values.var(), values.size
        n = self.count + b_n
        delta = b_mean - self.mean
        self.mean += delta * b_n / n
        self.var = (self.var * self.count + b_var * b_n + delta ** 2 * self.count * b_n / n) / n
        self.count = n

    def standardize(self, values):
        std = np.sqrt(self.var)
        if std < 1e-8:
            return np.asarray(values) - self.mean
        return (np.asarray(values) - self.mean) / std


# --------------------------------------------------------------------------- #
# Mixing


def mix_vdn(agent_qs):
    """Sum of the chosen per-agent values along the last axis."""
    if isinstance(agent_qs, Tensor):
        return agent_qs.sum(axis=-1)
    return np.sum(agent_qs, axis=-1)


class QMixer:
    """Monotonic mixing network whose weights come from hypernetworks on the global state."""

    def __init__(self, n_agents, state_dim, embed_dim=32, hypernet_embed=64, hypernet_layers=2,
                 rng=None, dtype=np.float32):
        if hypernet_layers not in (1, 2):
            raise ValueError("hypernet_layers must be 1 or 2")
        rng = np.random.default_rng(0) if rng is None else rng
        self.n_agents = n_agents
        self.state_dim = state_dim
        self.embed_dim = embed_dim
        self.hypernet_layers = hypernet_layers
        g = np.sqrt(2.0)
        H, E, S = hypernet_embed, embed_dim, state_dim
        p = ParamStore(dtype=dtype)
        if hypernet_layers == 2:
            p.add("hw1.0.w", orthogonal(rng, (S, H), g)); p.add("hw1.0.b", np.zeros(H))
            p.add("hw1.1.w", orthogonal(rng, (H, n_agents * E))); p.add("hw1.1.b", np.zeros(n_agents * E))
            p.add("hwf.0.w", orthogonal(rng, (S, H), g)); p.add("hwf.0.b", np.zeros(H))
            p.add("hwf.1.w", orthogonal(rng, (H, E))); p.add("hwf.1.b", np.zeros(E))
        else:
            p.add("hw1.1.w", orthogonal(rng, (S, n_agents * E))); p.add("hw1.1.b", np.zeros(n_agents * E))
            p.add("hwf.1.w", orthogonal(rng, (S, E))); p.add("hwf.1.b", np.zeros(E))
        p.add("hb1.w", orthogonal(rng, (S, E))); p.add("hb1.b", np.zeros(E))
        p.add("v.0.w", orthogonal(rng, (S, H), g)); p.add("v.0.b", np.zeros(H))
        p.add("v.1.w", orthogonal(rng, (H, 1))); p.add("v.1.b", np.zeros(1))
        self.params = p

    def _hyper(self, s, name):
        p = self.params
        if self.hypernet_layers == 2:
            s = nn.relu(s @ p[f"{name}.0.w"] + p[f"{name}.0.b"])
        return s @ p[f"{name}.1.w"] + p[f"{name}.1.b"]

    def __call__(self, agent_qs, state):
        return mix_qmix(agent_qs, state, self)

    def copy(self):
        other = object.__new__(QMixer)
        other.__dict__.update(self.__dict__)
        other.params = self.params.copy()
        return other


def mix_qmix(agent_qs, state, mixer: QMixer):
    """Joint value for ``agent_qs`` of shape ``(B, n)`` given ``state`` ``(B, state_dim)``.

    Both mixing-layer weight sets pass through ``abs`` so the output is
    non-decreasing in every agent's value.
    """
    agent_qs = nn.as_tensor(agent_qs)
    state = nn.as_tensor(np.asarray(state.data if isinstance(state, Tensor) else state,
                                    dtype=mixer.params.dtype))
    if agent_qs.ndim != 2 or agent_qs.shape[1] != mixer.n_agents:
        raise ShapeMismatch(f"agent_qs shape {agent_qs.shape}, expected (B, {mixer.n_agents})")
    if state.ndim != 2 or state.shape != (agent_qs.shape[0], mixer.state_dim):
        raise ShapeMismatch(f"state shape {state.shape}, expected ({agent_qs.shape[0]}, {mixer.state_dim})")
    p = mixer.params
    B, n, E = agent_qs.shape[0], mixer.n_agents, mixer.embed_dim
    w1 = nn.tabs(mixer._hyper(state, "hw1")).reshape(B, n, E)
    b1 = (state @ p["hb1.w"] + p["hb1.b"]).reshape(B, 1, E)
    hidden = nn.relu(nn.matmul(agent_qs.reshape(B, 1, n), w1) + b1)
    w_final = nn.tabs(mixer._hyper(state, "hwf")).reshape(B, E, 1)
    v = nn.relu(state @ p["v.0.w"] + p["v.0.b"]) @ p["v.1.w"] + p["v.1.b"]
    return (nn.matmul(hidden, w_final).reshape(B, 1) + v).reshape(B)


# --------------------------------------------------------------------------- #
# Learner


class QLearner:
    def __init__(self, config: QLearnerConfig, n_agents, obs_dim, n_actions, rng=None,
                 dtype=np.float32):
        rng = np.random.default_rng(0) if rng is None else rng
        self.config = config
        self.n_agents = n_agents
        self.obs_dim = obs_dim
        self.n_actions = n_actions
        self.agents = AgentGroup(n_agents, obs_dim, n_actions, config.hidden_dim, config.network,
                                 config.param_sharing, rng, dtype=dtype)
        self.target_agents = self.agents.copy()
        self.mixer = None
        stores = list(self.agents.stores)
        if config.algorithm == "qmix":
            self.mixer = QMixer(n_agents, n_agents * obs_dim, config.mixing_embed_dim,
                                config.hypernet_embed, config.hypernet_layers, rng, dtype)
            self.target_mixer = self.mixer.copy()
            stores.append(self.mixer.params)
        self.optimizer = Adam(stores, lr=config.lr, max_grad_norm=config.max_grad_norm)
        mode, value = config.target_update
        self.target_updater = TargetUpdate(mode, value)
        self.reward_stats = RunningMeanStd()
        self.train_steps = 0

    # acting ---------------------------------------------------------------

    def init_hidden(self, batch=1):
        return self.agents.init_hidden(batch)

    def q_values(self, obs, hidden=None):
        """Q-values ``(n, A)`` for one joint observation ``(n, d)``; no gradient tape."""
        with nn.no_grad():
            q, hidden = self.agents.step(np.asarray(obs)[None], hidden)
        return q.data[0], hidden

    def observe_rewards(self, team_rewards):
        self.reward_stats.update(team_rewards)

    # training -------------------------------------------------------------

    def _targets(self, batch, rewards):
        T = batch.actions.shape[1]
        cfg = self.config
        with nn.no_grad():
            tq = self.target_agents.unroll(batch.obs).data[:, 1:].max(axis=-1)  # (B, T, n)
            cont = cfg.gamma * (1.0 - batch.terminated)
            if cfg.algorithm == "iql":
                return rewards[..., None] + cont[..., None] * tq
            if cfg.algorithm == "vdn":
                return rewards + cont * tq.sum(axis=-1)
            B = tq.shape[0]
            states = batch.obs[:, 1:].reshape(B * T, -1)
            t_tot = mix_qmix(tq.reshape(B * T, -1), states, self.target_mixer).data.reshape(B, T)
            return rewards + cont * t_tot

    def loss(self, batch: EpisodeBatch):
        """Masked mean squared TD error; returns ``(loss_tensor, online_q_tensor)``."""
        cfg = self.config
        B, T = batch.actions.shape[:2]
        rewards = batch.rewards
        if cfg.reward_standardisation:
            rewards = self.reward_stats.standardize(rewards).astype(batch.rewards.dtype)
        y = self._targets(batch, rewards)
        q_all = self.agents.unroll(batch.obs)
        chosen = nn.take_last(q_all[:, :T], batch.actions)  # (B, T, n)
        mask = batch.mask
        if cfg.algorithm == "iql":
            td = chosen - y
            m = np.broadcast_to(mask[..., None], td.shape)
            loss = nn.square(td * m).sum() * (1.0 / (m.sum() or 1.0))
            return loss, q_all
        if cfg.algorithm == "vdn":
            q_tot = mix_vdn(chosen)
        else:
            states = batch.obs[:, :T].reshape(B * T, -1)
            q_tot = mix_qmix(chosen.reshape(B * T, self.n_agents), states, self.mixer).reshape(B, T)
        td = (q_tot - y) * mask
        return nn.square(td).sum() * (1.0 / (mask.sum() or 1.0)), q_all

    def train(self, batch: EpisodeBatch, diag_epsilon: Optional[float] = None):
        """One gradient step on ``batch``.

        Returns a dict with ``loss`` and ``grad_norm``; when ``diag_epsilon`` is
        given, also per-agent ``entropy`` and ``divergence`` of the
        epsilon-greedy policy on the batch (after vs. before the update).
        """
        T = batch.actions.shape[1]
        self.optimizer.zero_grad()
        loss, q_all = self.loss(batch)
        nn.backward(loss)
        grad_norm = self.optimizer.step()
        stores = list(self.agents.stores)
        targets = list(self.target_agents.stores)
        if self.mixer is not None:
            stores.append(self.mixer.params)
            targets.append(self.target_mixer.params)
        self.target_updater(stores, targets)
        self.train_steps += 1
        out = {"loss": float(loss.data), "grad_norm": grad_norm}
        if diag_epsilon is not None:
            with nn.no_grad():
                q_new = self.agents.unroll(batch.obs).data[:, :T]
            old = extract_policy("q", q_all.data[:, :T], diag_epsilon)
            new = extract_policy("q", q_new, diag_epsilon)
            out.update(_batch_diagnostics(new, old, batch.mask))
        return out

    # persistence ----------------------------------------------------------

    def arrays(self):
        out = self.agents.arrays("agent")
        if self.mixer is not None:
            out.update({f"mixer/{k}": v for k, v in self.mixer.params.arrays().items()})
        return out

    def load_arrays(self, arrays):
        self.agents.load_arrays(arrays, "agent")
        self.target_agents.load_arrays(arrays, "agent")
        if self.mixer is not None:
            mix = {k[len("mixer/"):]: v for k, v in arrays.items() if k.startswith("mixer/")}
            self.mixer.params.load_arrays(mix)
            self.target_mixer.params.load_arrays(mix)


def _batch_diagnostics(new_probs, old_probs, mask):
    """Per-agent entropy of ``new_probs`` and divergence from ``old_probs``, masked means."""
    ent = policy_entropy(new_probs)                   # (B, T, n)
    div = update_divergence(new_probs, old_probs)     # (B, T, n)
    w = mask[..., None]
    denom = max(float(mask.sum()), 1.0)
    return {
        "entropy": ((ent * w).sum(axis=(0, 1)) / denom).tolist(),
        "divergence": ((div * w).sum(axis=(0, 1)) / denom).tolist(),
    }


def q_train_step(learner: QLearner, buffer: ReplayBuffer, rng, diag_epsilon=None):
    batch = buffer.sample(learner.config.batch_size, rng)
    return learner.train(batch, diag_epsilon)
