"""Default hyperparameters per algorithm, sharing mode and environment family."""

from __future__ import annotations

import dataclasses
import re
from dataclasses import dataclass

from .errors import ConfigInvalid
from .pg import PgConfig
from .qlearn import QLearnerConfig

Q_ALGORITHMS = ("iql", "vdn", "qmix")
PG_ALGORITHMS = ("ia2c", "ippo", "maa2c", "mappo")
ALGORITHMS = Q_ALGORITHMS + PG_ALGORITHMS


@dataclass
class HyperParams:
    hidden_dim: int = 128
    network: str = "gru"
    lr: float = 3e-4
    gamma: float = 0.99
    max_grad_norm: float = 10.0
    reward_standardisation: bool = True
    evaluation_epsilon: float = 0.05
    target_update: tuple = ("hard", 200)
    # value-based
    batch_size: int = 32
    buffer_size: int = 5000
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_decay_steps: float = 2e6
    mixing_embed_dim: int = 32
    hypernet_embed: int = 64
    hypernet_layers: int = 2
    # policy gradient
    entropy_coef: float = 0.001
    n_step: int = 5
    ppo_clip: float = 0.2
    ppo_epochs: int = 4
    n_workers: int = 10


def _q_shared(sharing):
    return dict(
        network="gru", gamma=0.99, max_grad_norm=10.0, reward_standardisation=True,
        epsilon_decay_steps=2e6 if sharing else 5e4, epsilon_end=0.05,
        batch_size=32, buffer_size=5000,
    )


def _pg_shared():
    return dict(gamma=0.99, max_grad_norm=10.0, entropy_coef=0.001, n_workers=10)


SOFT = ("soft", 0.01)
HARD = ("hard", 200)


def default_hyperparams(algorithm: str, param_sharing: bool, family: str) -> HyperParams:
    """Tuned defaults keyed by ``(algorithm, param_sharing, family)``.

    ``family`` is ``"lbf"`` or ``"rware"``. IA2C and IPPO reuse the MAA2C and
    MAPPO rows respectively.
    """
    alg = algorithm.lower()
    fam = family.lower()
    if alg not in ALGORITHMS:
        raise ConfigInvalid(f"unknown algorithm {algorithm!r}; expected one of {ALGORITHMS}")
    if fam not in ("lbf", "rware"):
        raise ConfigInvalid(f"unknown environment family {family!r}")
    ps = bool(param_sharing)
    lbf = fam == "lbf"

    if alg == "iql":
        d = _q_shared(ps)
        d.update(hidden_dim=128 if ps else 64, lr=3e-4, evaluation_epsilon=0.05, target_update=HARD)
    elif alg == "vdn":
        d = _q_shared(ps)
        d.update(hidden_dim=128 if ps else 64, lr=3e-4 if ps else 1e-4,
                 evaluation_epsilon=0.0 if ps else 0.05, target_update=SOFT if ps else HARD)
    elif alg == "qmix":
        d = _q_shared(ps)
        lr = {(True, True): 3e-4, (True, False): 5e-4, (False, True): 1e-4, (False, False): 3e-4}
        d.update(hidden_dim=64, network="gru" if lbf else "fc", lr=lr[(ps, lbf)],
                 evaluation_epsilon=0.05, target_update=SOFT, mixing_embed_dim=32,
                 hypernet_embed=64, hypernet_layers=2)
    elif alg in ("mappo", "ippo"):
        d = _pg_shared()
        lr = {(True, True): 3e-4, (True, False): 5e-4, (False, True): 1e-4, (False, False): 5e-4}
        target = HARD if (not ps and lbf) else SOFT
        n_step = 5 if (ps and lbf) else 10
        d.update(hidden_dim=128, lr=lr[(ps, lbf)], reward_standardisation=False, network="fc",
                 evaluation_epsilon=0.05, ppo_clip=0.2, ppo_epochs=4, target_update=target,
                 n_step=n_step)
    else:  # maa2c, ia2c
        d = _pg_shared()
        n_step = 10 if (ps and lbf) else 5
        d.update(hidden_dim=128 if lbf else 64, lr=5e-4, reward_standardisation=True,
                 network="gru" if lbf else "fc", evaluation_epsilon=0.01, target_update=SOFT,
                 n_step=n_step)
    return HyperParams(**d)


_TARGET_RE = re.compile(r"^\s*(?:(soft|hard)\s*:\s*([0-9.eE+-]+)|([0-9.eE+-]+)\s*\(\s*(soft|hard)\s*\))\s*$")


def parse_target_update(text):
    """Accept ``soft:0.01``, ``hard:200`` or the table style ``0.01(soft)``."""
    if isinstance(text, tuple):
        return text
    m = _TARGET_RE.match(str(text))
    if m is None:
        raise ConfigInvalid(f"bad target_update {text!r}; use soft:<tau> or hard:<interval>")
    mode = m.group(1) or m.group(4)
    value = float(m.group(2) or m.group(3))
    if mode == "hard":
        if value < 1 or value != int(value):
            raise ConfigInvalid(f"hard target interval must be a positive integer, got {value}")
        return ("hard", int(value))
    if not 0.0 <= value <= 1.0:
        raise ConfigInvalid(f"soft target tau must lie in [0, 1], got {value}")
    return ("soft", value)


def _parse_bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigInvalid(f"not a boolean: {text!r}")


def apply_overrides(hp: HyperParams, overrides: dict) -> HyperParams:
    fields = {f.name: f for f in dataclasses.fields(HyperParams)}
    values = {}
    for key, raw in overrides.items():
        if key not in fields:
            raise ConfigInvalid(f"unknown hyperparameter {key!r}")
        default = getattr(hp, key)
        try:
            if key == "target_update":
                values[key] = parse_target_update(raw)
            elif isinstance(default, bool):
                values[key] = _parse_bool(raw)
            elif isinstance(default, int):
                values[key] = int(float(raw)) if isinstance(raw, str) else int(raw)
            elif isinstance(default, float):
                values[key] = float(raw)
            else:
                values[key] = str(raw).strip().lower()
        except ValueError as exc:
            raise ConfigInvalid(f"{key}: {exc}") from exc
    if values.get("network", hp.network) not in ("gru", "fc"):
        raise ConfigInvalid(f"network must be gru or fc, got {values['network']!r}")
    return dataclasses.replace(hp, **values)


def q_config(algorithm, param_sharing, hp: HyperParams) -> QLearnerConfig:
    return QLearnerConfig(
        algorithm=algorithm, param_sharing=param_sharing, hidden_dim=hp.hidden_dim,
        network=hp.network, lr=hp.lr, gamma=hp.gamma, batch_size=hp.batch_size,
        buffer_size=hp.buffer_size, target_update=hp.target_update,
        reward_standardisation=hp.reward_standardisation,
        evaluation_epsilon=hp.evaluation_epsilon, epsilon_start=hp.epsilon_start,
        epsilon_end=hp.epsilon_end, epsilon_decay_steps=hp.epsilon_decay_steps,
        max_grad_norm=hp.max_grad_norm, mixing_embed_dim=hp.mixing_embed_dim,
        hypernet_embed=hp.hypernet_embed, hypernet_layers=hp.hypernet_layers,
    )


def pg_config(algorithm, param_sharing, hp: HyperParams) -> PgConfig:
    return PgConfig(
        algorithm=algorithm, param_sharing=param_sharing, hidden_dim=hp.hidden_dim,
        network=hp.network, lr=hp.lr, gamma=hp.gamma, entropy_coef=hp.entropy_coef,
        n_step=hp.n_step, ppo_clip=hp.ppo_clip, ppo_epochs=hp.ppo_epochs,
        max_grad_norm=hp.max_grad_norm, reward_standardisation=hp.reward_standardisation,
        target_update=hp.target_update, n_workers=hp.n_workers,
        evaluation_epsilon=hp.evaluation_epsilon,
    )
