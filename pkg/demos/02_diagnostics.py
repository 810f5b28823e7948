"""
Policy entropy, update divergence and task switching
====================================================

The three behavioural diagnostics work on plain probability arrays, so they
can be tried without training anything.
"""

import numpy as np

from marl_lens.diagnostics import (extract_policy, policy_entropy, task_switch_profile,
                                   update_divergence)

# Entropy is ln(6) for a uniform policy over six actions and 0 for a
# deterministic one.
uniform = np.full(6, 1 / 6)
greedy = np.eye(6)[2]
print("H(uniform) =", policy_entropy(uniform), " ln 6 =", np.log(6))
print("H(greedy)  =", policy_entropy(greedy))

# A value-based agent acts epsilon-greedily, which induces a categorical
# policy. As epsilon decays the entropy falls, which is the drop seen early
# in training.
q = np.array([0.1, 0.9, 0.3, 0.0, -0.2, 0.4])
for eps in (1.0, 0.5, 0.05):
    p = extract_policy("q", q, eps)
    print(f"eps={eps:<4}  H={policy_entropy(p):.3f}")

# The divergence between successive policies is a KL with a 1e-8 floor. It is
# zero while the greedy action stays put and spikes when the argmax flips.
before = extract_policy("q", q, 0.05)
after = extract_policy("q", q[::-1], 0.05)
print("KL(same)    =", update_divergence(before, before))
print("KL(flipped) =", update_divergence(after, before))

# Task switching summarises which actions each agent used during evaluation.
# On raw counts the softmax saturates quickly, the normalised mode keeps it graded.
rng = np.random.default_rng(0)
log = np.stack([rng.choice(6, 200, p=[.5, .2, .1, .1, .05, .05]),
                rng.choice(6, 200)], axis=1)
for mode in ("paper_exact", "frequency_normalized"):
    prof = task_switch_profile(log, 6, mode)
    print(mode, np.round(prof.probs, 3))
