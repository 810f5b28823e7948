"""
Comparing algorithms across seeds
=================================

Runs IQL and VDN for three seeds each on a small task, then reports the mean
learning curve with a t-based confidence interval and the probability that
one algorithm improves on the other. About twenty seconds on one core.
"""

import tempfile
from pathlib import Path

from marl_lens import runner

TEMPLATE = """
[experiment]
scenario = Foraging-5x5-2p-1f-v2
algorithm = {alg}
total_steps = 4000
n_eval_points = 5
eval_episodes = 5
seed = {seed}

[hyperparams]
hidden_dim = 32
epsilon_decay_steps = 2000
"""

root = Path(tempfile.mkdtemp())
runs = {"iql": [], "vdn": []}
for alg in runs:
    for seed in range(3):
        cfg = runner.config_from_ini(TEMPLATE.format(alg=alg, seed=seed))
        runs[alg].append(runner.run_experiment(cfg, root / f"{alg}_{seed}"))

for alg, dirs in runs.items():
    print(alg)
    print(runner.export_plot_data(dirs, "returns"))

# P(X > Y) over final scores, ties counted as one half.
print(runner.export_plot_data(runs["iql"] + runs["vdn"], "poi"))
