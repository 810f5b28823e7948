"""Cooperative multi-agent RL workbench with explainability diagnostics."""

from .diagnostics import extract_policy, policy_entropy, task_switch_profile, update_divergence
from .env_lbf import LbfEnv, lbf_reset, lbf_step
from .env_rware import RwareEnv, rware_reset, rware_step
from .eval_stats import mean_and_ci, probability_of_improvement, sample_efficiency_curve
from .runner import ExperimentConfig, export_plot_data, load_config, run_experiment
from .scenario import BENCHMARK_SCENARIOS, Scenario, parse_scenario, render_scenario

__version__ = "0.1.0"
