"""Per-agent networks with or without parameter sharing."""

from __future__ import annotations

import numpy as np

from . import nn
from .nn import NetSpec, forward, init_params


class AgentGroup:
    """One network per agent, or a single shared one fed a one-hot agent id.

    Inputs are batched as ``(B, n_agents, obs_dim)``; outputs come back as a
    Tensor of shape ``(B, n_agents, out_dim)``. The hidden state returned by
    :meth:`init_hidden` and :meth:`step` is opaque to callers.
    """

    def __init__(self, n_agents, obs_dim, out_dim, hidden_dim, body="fc", shared=True,
                 rng=None, head_gain=1.0, dtype=np.float32):
        rng = np.random.default_rng(0) if rng is None else rng
        self.n_agents = n_agents
        self.obs_dim = obs_dim
        self.out_dim = out_dim
        self.shared = shared
        self.dtype = np.dtype(dtype)
        in_dim = obs_dim + (n_agents if shared else 0)
        self.spec = NetSpec(in_dim, hidden_dim, out_dim, body)
        n_nets = 1 if shared else n_agents
        self.stores = [init_params(self.spec, rng, head_gain, dtype) for _ in range(n_nets)]
        self._ids = np.eye(n_agents, dtype=self.dtype)

    @property
    def recurrent(self):
        return self.spec.body == "gru"

    def init_hidden(self, batch):
        if not self.recurrent:
            return None
        H = self.spec.hidden_dim
        if self.shared:
            return nn.Tensor(np.zeros((batch * self.n_agents, H), dtype=self.dtype))
        return [nn.Tensor(np.zeros((batch, H), dtype=self.dtype)) for _ in range(self.n_agents)]

    def _with_ids(self, obs):
        B = obs.shape[0]
        ids = np.broadcast_to(self._ids, (B, self.n_agents, self.n_agents))
        return np.concatenate([obs, ids], axis=-1).reshape(B * self.n_agents, -1)

    def step(self, obs, hidden=None):
        obs = np.asarray(obs, dtype=self.dtype)
        B = obs.shape[0]
        if self.shared:
            out, h = forward(self.spec, self.stores[0], self._with_ids(obs), hidden)
            return out.reshape(B, self.n_agents, self.out_dim), h
        outs, hs = [], []
        for i, store in enumerate(self.stores):
            out, h = forward(self.spec, store, obs[:, i], None if hidden is None else hidden[i])
            outs.append(out)
            hs.append(h)
        return nn.stack(outs, axis=1), (hs if self.recurrent else None)

    def unroll(self, obs_seq):
        """Outputs for every step of ``(B, T, n, d)`` sequences, as ``(B, T, n, out)``.

        Recurrent bodies start from a zero hidden state at ``t = 0``.
        """
        obs_seq = np.asarray(obs_seq, dtype=self.dtype)
        B, T = obs_seq.shape[:2]
        if not self.recurrent:
            out, _ = self.step(obs_seq.reshape(B * T, self.n_agents, -1))
            return out.reshape(B, T, self.n_agents, self.out_dim)
        h = self.init_hidden(B)
        outs = []
        for t in range(T):
            out, h = self.step(obs_seq[:, t], h)
            outs.append(out)
        return nn.stack(outs, axis=1)

    def copy(self):
        other = object.__new__(AgentGroup)
        other.__dict__.update(self.__dict__)
        other.stores = [s.copy() for s in self.stores]
        return other

    def arrays(self, prefix):
        out = {}
        for k, store in enumerate(self.stores):
            for name, arr in store.arrays().items():
                out[f"{prefix}{k}/{name}"] = arr
        return out

    def load_arrays(self, arrays, prefix):
        for k, store in enumerate(self.stores):
            store.load_arrays({name: arrays[f"{prefix}{k}/{name}"] for name in store.names()})
