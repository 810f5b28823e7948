"""Experiment orchestration: config files, training loops, evaluation, export.

A run directory holds ``config.ini``, ``metrics.jsonl`` and ``checkpoint.bin``.
Everything written there is a function of the config (seed included), so two
runs of the same config produce byte-identical files.
"""

from __future__ import annotations

import configparser
import csv
import io
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import diagnostics, eval_stats
from .env_lbf import DEFAULT_HORIZON as LBF_HORIZON, LbfEnv
from .env_rware import DEFAULT_HORIZON as RWARE_HORIZON, RwareEnv
from .errors import ConfigInvalid, MarlLensError
from .hyperparams import (ALGORITHMS, PG_ALGORITHMS, Q_ALGORITHMS, HyperParams,
                          apply_overrides, default_hyperparams, pg_config, q_config)
from .metrics import (DiagnosticsRecord, EvalPoint, MetricsWriter, TaskSwitchEvent, TrainLoss,
                      read_metrics)
from .nn import load_checkpoint, save_checkpoint
from .pg import PgLearner, Rollout
from .qlearn import QLearner, ReplayBuffer, select_actions
from .scenario import EnvKind, Scenario, parse_scenario

CONFIG_FILE = "config.ini"
CHECKPOINT_FILE = "checkpoint.bin"
THREADS_ENV = "MARL_LENS_THREADS"


# ---------------------------------------------------------------------------
# Config


@dataclass
class ExperimentConfig:
    scenario: str
    algorithm: str
    param_sharing: bool = True
    total_steps: int = 200_000
    n_eval_points: int = eval_stats.N_EVAL_POINTS
    eval_episodes: int = 10
    seed: int = 0
    horizon: int | None = None
    task_switch_mode: str = "paper_exact"
    overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        self.algorithm = self.algorithm.strip().lower()
        if self.algorithm not in ALGORITHMS:
            raise ConfigInvalid(f"unknown algorithm {self.algorithm!r}; expected one of "
                                f"{', '.join(ALGORITHMS)}")
        try:
            self._scenario = parse_scenario(self.scenario)
        except MarlLensError as exc:
            raise ConfigInvalid(f"scenario: {exc}") from exc
        if self.total_steps < 1:
            raise ConfigInvalid("total_steps must be positive")
        if self.n_eval_points < 2:
            raise ConfigInvalid("n_eval_points must be at least 2")
        if self.eval_episodes < 1:
            raise ConfigInvalid("eval_episodes must be positive")
        if self.horizon is not None and self.horizon < 1:
            raise ConfigInvalid("horizon must be positive")
        if self.task_switch_mode not in diagnostics.TASK_SWITCH_MODES:
            raise ConfigInvalid(f"task_switch_mode must be one of {diagnostics.TASK_SWITCH_MODES}")
        self.hyperparams  # validate overrides eagerly

    @property
    def scenario_spec(self) -> Scenario:
        return self._scenario

    @property
    def family(self):
        return "lbf" if self._scenario.env_kind == EnvKind.LBF else "rware"

    @property
    def hyperparams(self) -> HyperParams:
        hp = default_hyperparams(self.algorithm, self.param_sharing, self.family)
        return apply_overrides(hp, self.overrides)

    @property
    def is_q(self):
        return self.algorithm in Q_ALGORITHMS

    def to_ini(self) -> str:
        cp = configparser.ConfigParser()
        cp["experiment"] = {
            "scenario": self.scenario,
            "algorithm": self.algorithm,
            "param_sharing": str(self.param_sharing).lower(),
            "total_steps": str(self.total_steps),
            "n_eval_points": str(self.n_eval_points),
            "eval_episodes": str(self.eval_episodes),
            "seed": str(self.seed),
            "task_switch_mode": self.task_switch_mode,
        }
        if self.horizon is not None:
            cp["experiment"]["horizon"] = str(self.horizon)
        cp["hyperparams"] = {k: _fmt_override(v) for k, v in sorted(self.overrides.items())}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()


def _fmt_override(v):
    if isinstance(v, tuple):
        return f"{v[0]}:{v[1]}"
    if isinstance(v, bool):
        return str(v).lower()
    return str(v)


_EXPERIMENT_KEYS = {"scenario", "algorithm", "param_sharing", "total_steps", "n_eval_points",
                    "eval_episodes", "seed", "horizon", "task_switch_mode"}


def config_from_ini(text: str, seed=None) -> ExperimentConfig:
    """Parse an INI config; ``seed`` (e.g. from the command line) wins over the file."""
    cp = configparser.ConfigParser()
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigInvalid(f"cannot parse config: {exc}") from exc
    if "experiment" not in cp:
        raise ConfigInvalid("config needs an [experiment] section")
    unknown = set(cp.sections()) - {"experiment", "hyperparams"}
    if unknown:
        raise ConfigInvalid(f"unknown config sections: {sorted(unknown)}")
    ex = cp["experiment"]
    extra = set(ex.keys()) - _EXPERIMENT_KEYS
    if extra:
        raise ConfigInvalid(f"unknown [experiment] keys: {sorted(extra)}")
    for key in ("scenario", "algorithm"):
        if key not in ex:
            raise ConfigInvalid(f"[experiment] is missing {key!r}")
    try:
        kwargs = dict(
            scenario=ex["scenario"].strip(),
            algorithm=ex["algorithm"],
            param_sharing=ex.getboolean("param_sharing", True),
            total_steps=int(float(ex.get("total_steps", "200000"))),
            n_eval_points=ex.getint("n_eval_points", eval_stats.N_EVAL_POINTS),
            eval_episodes=ex.getint("eval_episodes", 10),
            seed=ex.getint("seed", 0) if seed is None else int(seed),
            horizon=ex.getint("horizon") if "horizon" in ex else None,
            task_switch_mode=ex.get("task_switch_mode", "paper_exact").strip(),
        )
    except ValueError as exc:
        raise ConfigInvalid(f"[experiment]: {exc}") from exc
    overrides = dict(cp["hyperparams"]) if "hyperparams" in cp else {}
    return ExperimentConfig(overrides=overrides, **kwargs)


def load_config(path, seed=None) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigInvalid(f"cannot read config {path}: {exc}") from exc
    return config_from_ini(text, seed)


# ---------------------------------------------------------------------------
# Environments and episodes


def make_env(config: ExperimentConfig):
    sc = config.scenario_spec
    if sc.env_kind == EnvKind.LBF:
        return LbfEnv(sc, config.horizon or LBF_HORIZON)
    return RwareEnv(sc, config.horizon or RWARE_HORIZON)


def _seed(rng):
    return int(rng.integers(2**63 - 1))


def thread_count(n_workers):
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigInvalid(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    return max(1, min(n, n_workers))


def run_q_episode(env, learner: QLearner, epsilon, act_rng, env_seed):
    """Play one episode with epsilon-greedy actions; returns ``(episode, agent_returns)``."""
    obs = env.reset(env_seed)
    hidden = learner.init_hidden(1)
    obs_seq, actions, rewards, terms = [obs], [], [], []
    agent_ret = np.zeros(env.n_agents)
    done = False
    while not done:
        q, hidden = learner.q_values(obs, hidden)
        a = select_actions(q, epsilon, act_rng)
        obs, r, done = env.step(a)
        agent_ret += r
        obs_seq.append(obs)
        actions.append(a)
        rewards.append(env.team_reward(r))
        terms.append(float(done and env.terminated))
    episode = {
        "obs": np.stack(obs_seq),
        "actions": np.stack(actions),
        "rewards": np.asarray(rewards),
        "terminated": np.asarray(terms),
    }
    return episode, agent_ret


def run_pg_episodes(envs, learner: PgLearner, act_rng, env_seeds, pool=None, greedy=False):
    """Run one episode per env in lockstep with a batched actor forward pass.

    Env stepping is fanned out to ``pool`` when given; each env owns its RNG so
    results do not depend on the thread count.
    """
    W = len(envs)
    obs = np.stack([env.reset(s) for env, s in zip(envs, env_seeds)])
    hidden = learner.init_hidden(W)
    episodes = [{"obs": [obs[w]], "actions": [], "rewards": [], "terminated": [],
                 "log_probs": []} for w in range(W)]
    agent_ret = np.zeros((W, envs[0].n_agents))
    active = list(range(W))

    def step(w, a):
        return envs[w].step(a)

    while active:
        actions, logp, _, hidden = learner.act(obs, hidden, act_rng, greedy=greedy)
        if pool is not None:
            results = list(pool.map(step, active, [actions[w] for w in active]))
        else:
            results = [step(w, actions[w]) for w in active]
        still = []
        for w, (o, r, done) in zip(active, results):
            ep = episodes[w]
            ep["obs"].append(o)
            ep["actions"].append(actions[w])
            ep["rewards"].append(envs[w].team_reward(r))
            ep["terminated"].append(float(done and envs[w].terminated))
            ep["log_probs"].append(logp[w])
            agent_ret[w] += r
            obs[w] = o
            if not done:
                still.append(w)
        active = still
    for ep in episodes:
        for k in ("obs", "actions", "log_probs"):
            ep[k] = np.stack(ep[k])
        ep["rewards"] = np.asarray(ep["rewards"])
        ep["terminated"] = np.asarray(ep["terminated"])
    return episodes, agent_ret


def random_baseline(config: ExperimentConfig, episodes=100, seed=None):
    """Mean team return of uniformly random joint actions over ``episodes`` episodes."""
    env = make_env(config)
    ss = np.random.SeedSequence(config.seed if seed is None else seed)
    env_rng, act_rng = (np.random.default_rng(s) for s in ss.spawn(2))
    totals = []
    for _ in range(episodes):
        env.reset(_seed(env_rng))
        total, done = 0.0, False
        while not done:
            a = act_rng.integers(env.n_actions, size=env.n_agents)
            _, r, done = env.step(a)
            total += env.team_reward(r)
        totals.append(total)
    return float(np.mean(totals))


# ---------------------------------------------------------------------------
# Learners


def build_learner(config: ExperimentConfig, env, rng):
    hp = config.hyperparams
    if config.is_q:
        return QLearner(q_config(config.algorithm, config.param_sharing, hp), env.n_agents,
                        env.obs_dim, env.n_actions, rng)
    return PgLearner(pg_config(config.algorithm, config.param_sharing, hp), env.n_agents,
                     env.obs_dim, env.n_actions, rng)


def evaluate(config: ExperimentConfig, learner, env, rng, episodes):
    """Evaluation episodes on a dedicated env and RNG.

    Returns ``(agent_returns (n,), team_return, action_log (T_total, n))``.
    Q-learners act epsilon-greedily with the evaluation epsilon; policy
    gradient learners sample from their policy.
    """
    agent_totals, team_totals, logs = [], [], []
    for _ in range(episodes):
        if config.is_q:
            ep, ar = run_q_episode(env, learner, learner.config.evaluation_epsilon, rng, _seed(rng))
        else:
            eps, ar = run_pg_episodes([env], learner, rng, [_seed(rng)])
            ep, ar = eps[0], ar[0]
        agent_totals.append(ar)
        team_totals.append(ep["rewards"].sum())
        logs.append(ep["actions"])
    return (np.mean(agent_totals, axis=0), float(np.mean(team_totals)),
            np.concatenate(logs, axis=0))


# ---------------------------------------------------------------------------
# Training


class _Evaluator:
    """Fires evaluation at steps ``k * total / (n_points - 1)``."""

    def __init__(self, config, learner, writer, rng):
        self.config = config
        self.learner = learner
        self.writer = writer
        self.rng = rng
        self.env = make_env(config)
        self.interval = config.total_steps / (config.n_eval_points - 1)
        self.index = 0

    def due(self, step):
        return self.index < self.config.n_eval_points and step >= self.index * self.interval

    def run(self, step):
        cfg = self.config
        agent_ret, team_ret, log = evaluate(cfg, self.learner, self.env, self.rng,
                                            cfg.eval_episodes)
        self.writer.emit(EvalPoint(step=int(step), index=self.index,
                                   agent_returns=[float(x) for x in agent_ret],
                                   team_return=float(team_ret)))
        prof = diagnostics.task_switch_profile(log, self.env.n_actions, cfg.task_switch_mode)
        self.writer.emit(TaskSwitchEvent(step=int(step), index=self.index, mode=prof.mode,
                                         counts=prof.counts.tolist(), probs=prof.probs.tolist(),
                                         n_steps=prof.n_steps))
        self.index += 1

    def catch_up(self, step):
        while self.due(step):
            self.run(step)

    def finish(self, step):
        while self.index < self.config.n_eval_points:
            self.run(step)


def _emit_update(writer, step, stats, epsilon):
    writer.emit(TrainLoss(step=int(step), loss=float(stats["loss"]),
                          epsilon=None if epsilon is None else float(epsilon)))
    if "entropy" in stats:
        writer.emit(DiagnosticsRecord(
            step=int(step), entropy=[float(x) for x in stats["entropy"]],
            divergence=[float(x) for x in stats["divergence"]],
            mean_entropy=diagnostics.mean_over_agents(stats["entropy"]),
            mean_divergence=diagnostics.mean_over_agents(stats["divergence"])))


def run_experiment(config: ExperimentConfig, run_dir, progress=None):
    """Train, evaluate and checkpoint; returns the run directory path.

    The seed is split into independent streams for initialisation, acting,
    environment resets, minibatch sampling and evaluation, so evaluation never
    perturbs training.
    """
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / CONFIG_FILE).write_text(config.to_ini(), encoding="utf-8")

    streams = np.random.SeedSequence(config.seed).spawn(5)
    init_rng, act_rng, env_rng, train_rng, eval_rng = (np.random.default_rng(s) for s in streams)
    env = make_env(config)
    learner = build_learner(config, env, init_rng)

    with MetricsWriter(run_dir) as writer:
        evaluator = _Evaluator(config, learner, writer, eval_rng)
        if config.is_q:
            _train_q(config, learner, env, evaluator, writer, act_rng, env_rng, train_rng,
                     progress)
        else:
            _train_pg(config, learner, evaluator, writer, act_rng, env_rng, progress)

    _save_run_checkpoint(run_dir / CHECKPOINT_FILE, config, learner, env)
    return run_dir


def _train_q(config, learner, env, evaluator, writer, act_rng, env_rng, train_rng, progress):
    schedule = learner.config.epsilon_schedule
    buffer = ReplayBuffer(learner.config.buffer_size)
    step = 0
    evaluator.catch_up(step)
    while step < config.total_steps:
        eps = schedule.at(step)
        episode, _ = run_q_episode(env, learner, eps, act_rng, _seed(env_rng))
        step += len(episode["actions"])
        buffer.insert(episode)
        learner.observe_rewards(episode["rewards"])
        if len(buffer) >= learner.config.batch_size:
            batch = buffer.sample(learner.config.batch_size, train_rng)
            # Diagnostics use the behaviour policy, i.e. the current exploration epsilon.
            stats = learner.train(batch, diag_epsilon=eps)
            _emit_update(writer, step, stats, eps)
        evaluator.catch_up(step)
        if progress:
            progress(step)
    evaluator.finish(step)


def _train_pg(config, learner, evaluator, writer, act_rng, env_rng, progress):
    n_workers = learner.config.n_workers
    envs = [make_env(config) for _ in range(n_workers)]
    threads = thread_count(n_workers)
    pool = ThreadPoolExecutor(threads) if threads > 1 else None
    step = 0
    try:
        evaluator.catch_up(step)
        while step < config.total_steps:
            seeds = [_seed(env_rng) for _ in range(n_workers)]
            episodes, _ = run_pg_episodes(envs, learner, act_rng, seeds, pool)
            step += sum(len(ep["actions"]) for ep in episodes)
            for ep in episodes:
                learner.observe_rewards(ep["rewards"])
            stats = learner.train(Rollout.from_episodes(episodes))
            _emit_update(writer, step, stats, None)
            evaluator.catch_up(step)
            if progress:
                progress(step)
        evaluator.finish(step)
    finally:
        if pool is not None:
            pool.shutdown()


# ---------------------------------------------------------------------------
# Checkpoints


def _save_run_checkpoint(path, config, learner, env):
    arrays = dict(learner.arrays())
    arrays["__config__"] = np.frombuffer(config.to_ini().encode("utf-8"), dtype=np.uint8)
    arrays["__dims__"] = np.array([env.n_agents, env.obs_dim, env.n_actions], dtype=np.int64)
    save_checkpoint(path, arrays)


def load_run_checkpoint(path):
    """Rebuild ``(config, learner)`` from a checkpoint written by :func:`run_experiment`."""
    arrays = load_checkpoint(path)
    if "__config__" not in arrays:
        raise ConfigInvalid(f"{path} carries no embedded experiment config")
    config = config_from_ini(arrays.pop("__config__").tobytes().decode("utf-8"))
    arrays.pop("__dims__", None)
    env = make_env(config)
    learner = build_learner(config, env, np.random.default_rng(0))
    learner.load_arrays(arrays)
    return config, learner


def evaluate_checkpoint(path, episodes=10, seed=0):
    config, learner = load_run_checkpoint(path)
    env = make_env(config)
    agent_ret, team_ret, log = evaluate(config, learner, env, np.random.default_rng(seed), episodes)
    prof = diagnostics.task_switch_profile(log, env.n_actions, config.task_switch_mode)
    return {
        "scenario": config.scenario,
        "algorithm": config.algorithm,
        "episodes": episodes,
        "team_return": team_ret,
        "agent_returns": [float(x) for x in agent_ret],
        "task_switch": prof.probs.tolist(),
    }


# ---------------------------------------------------------------------------
# Reading runs back


def eval_curve(events):
    """``(steps, team_returns, agent_returns)`` from a run's EvalPoints, by index."""
    points = sorted((e for e in events if isinstance(e, EvalPoint)), key=lambda e: e.index)
    if not points:
        raise ConfigInvalid("run has no evaluation points")
    return (np.array([p.step for p in points]), np.array([p.team_return for p in points]),
            np.array([p.agent_returns for p in points]))


def diagnostics_curve(events):
    recs = [e for e in events if isinstance(e, DiagnosticsRecord)]
    return (np.array([r.step for r in recs]), np.array([r.entropy for r in recs]),
            np.array([r.divergence for r in recs]))


def diagnose(run_dir, fraction=0.1):
    """Summary of a finished run: returns, entropy and divergence trends, final task switching."""
    events = read_metrics(run_dir)
    steps, team, _ = eval_curve(events)
    _, ent, div = diagnostics_curve(events)
    out = {
        "eval_points": int(len(steps)),
        "final_step": int(steps[-1]),
        "final_score": eval_stats.final_score(team),
        "best_return": float(team.max()),
        "updates": int(len(ent)),
    }
    if len(ent):
        k = max(1, int(round(fraction * len(ent))))
        out["entropy_first"] = ent[:k].mean(axis=0).tolist()
        out["entropy_last"] = ent[-k:].mean(axis=0).tolist()
        out["divergence_first"] = div[:k].mean(axis=0).tolist()
        out["divergence_last"] = div[-k:].mean(axis=0).tolist()
        if ent.shape[1] > 1 and len(ent) > 2:
            corr = np.corrcoef(ent.T)
            out["entropy_agent_correlation_min"] = float(np.nanmin(corr[np.triu_indices_from(corr, 1)]))
    ts = [e for e in events if isinstance(e, TaskSwitchEvent)]
    if ts:
        out["task_switch_final"] = ts[-1].probs
    return out


def _config_of(run_dir):
    path = Path(run_dir) / CONFIG_FILE
    return config_from_ini(path.read_text(encoding="utf-8")) if path.exists() else None


EXPORT_METRICS = ("returns", "entropy", "kl", "taskswitch", "poi")


def export_plot_data(run_dirs, metric) -> str:
    """CSV for plotting.

    ``returns``/``entropy``/``kl`` give ``step, mean, ci_lo, ci_hi`` aggregated
    over the runs (seeds). ``returns`` is in raw units for one scenario and
    min-max normalised per scenario when runs span several. ``taskswitch``
    gives the final evaluation's per-agent action probabilities. ``poi`` gives
    the probability of improvement between every pair of algorithms, using
    final scores.
    """
    if metric not in EXPORT_METRICS:
        raise ConfigInvalid(f"unknown metric {metric!r}; expected one of {EXPORT_METRICS}")
    run_dirs = [Path(d) for d in run_dirs]
    if not run_dirs:
        raise ConfigInvalid("no run directories given")
    if metric == "returns":
        return _export_returns(run_dirs)
    if metric in ("entropy", "kl"):
        return _export_diagnostic(run_dirs, metric)
    if metric == "taskswitch":
        return _export_taskswitch(run_dirs)
    return _export_poi(run_dirs)


def _export_returns(run_dirs):
    by_task = {}
    steps = None
    for d in run_dirs:
        s, team, _ = eval_curve(read_metrics(d))
        cfg = _config_of(d)
        by_task.setdefault(cfg.scenario if cfg else str(d), []).append(team)
        if steps is None:
            steps = s
        elif len(s) != len(steps):
            raise ConfigInvalid("runs have different numbers of evaluation points")
    if len(by_task) == 1:
        (curves,) = by_task.values()
        table = eval_stats.MetricSeries(steps, np.stack(curves)).summary()
    else:
        series = [eval_stats.MetricSeries(steps, np.stack(c)) for c in by_task.values()]
        if len({s.returns.shape[0] for s in series}) != 1:
            raise ConfigInvalid("every scenario needs the same number of seeds to aggregate")
        _, table = eval_stats.sample_efficiency_curve(series)
    return eval_stats.curve_to_csv(steps, table)


def _export_diagnostic(run_dirs, metric):
    curves, steps = [], None
    for d in run_dirs:
        s, ent, div = diagnostics_curve(read_metrics(d))
        if not len(s):
            raise ConfigInvalid(f"{d} has no diagnostics records")
        vals = (ent if metric == "entropy" else div).mean(axis=1)
        if steps is None:
            steps = s
        n = min(len(steps), len(s))
        steps, curves = steps[:n], [c[:n] for c in curves] + [vals[:n]]
    table = eval_stats.MetricSeries(steps, np.stack(curves)).summary()
    return eval_stats.curve_to_csv(steps, table)


def _export_taskswitch(run_dirs):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    header = None
    for d in run_dirs:
        ts = [e for e in read_metrics(d) if isinstance(e, TaskSwitchEvent)]
        if not ts:
            raise ConfigInvalid(f"{d} has no task switching profiles")
        last = ts[-1]
        n_actions = len(last.probs[0])
        if header is None:
            header = ["run", "agent"] + [f"action_{a}" for a in range(n_actions)]
            w.writerow(header)
        for agent, row in enumerate(last.probs):
            w.writerow([str(d), agent] + [repr(float(p)) for p in row])
    return buf.getvalue()


def _export_poi(run_dirs):
    scores = {}
    for d in run_dirs:
        cfg = _config_of(d)
        if cfg is None:
            raise ConfigInvalid(f"{d} has no {CONFIG_FILE}; cannot tell its algorithm")
        _, team, _ = eval_curve(read_metrics(d))
        key = cfg.algorithm + ("" if cfg.param_sharing else "-nps")
        scores.setdefault(key, {}).setdefault(cfg.scenario, []).append(eval_stats.final_score(team))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["algorithm_x", "algorithm_y", "probability_of_improvement"])
    algs = sorted(scores)
    for a in algs:
        for b in algs:
            if a == b:
                continue
            tasks = sorted(set(scores[a]) & set(scores[b]))
            if not tasks:
                continue
            p = eval_stats.probability_of_improvement([scores[a][t] for t in tasks],
                                                      [scores[b][t] for t in tasks])
            w.writerow([a, b, repr(p)])
    return buf.getvalue()


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True)
