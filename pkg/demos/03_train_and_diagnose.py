"""
A short training run, read back
===============================

Trains IQL for a few thousand steps on a small foraging task, then reads the
metrics file back and summarises it. Takes well under a minute.
"""

import tempfile
from pathlib import Path

from marl_lens import runner

config = runner.config_from_ini("""
[experiment]
scenario = Foraging-5x5-2p-1f-v2
algorithm = iql
total_steps = 5000
n_eval_points = 11
eval_episodes = 5
seed = 0

[hyperparams]
hidden_dim = 32
epsilon_decay_steps = 3000
""")

out = Path(tempfile.mkdtemp()) / "iql"
runner.run_experiment(config, out)
print("wrote", sorted(p.name for p in out.iterdir()))

# The summary has the per-agent entropy at the start and end of training, and
# the last task switching profile.
summary = runner.diagnose(out)
for key in ("final_score", "entropy_first", "entropy_last", "entropy_agent_correlation_min"):
    print(f"{key:>30}: {summary[key]}")

# Plot-ready tables come out as CSV.
print(runner.export_plot_data([out], "returns"))

# The checkpoint carries its own config and can be evaluated directly.
print(runner.evaluate_checkpoint(out / "checkpoint.bin", episodes=20))
