"""
Scoring trials and reading off the equal error rate
===================================================

A verification system accepts a trial when its score clears a threshold.
The equal error rate is the point where false accepts and false rejects
balance.
"""

import numpy as np

from avjca.features import Trial
from avjca.metrics import compute_eer, eer_oracle, score_trials

# Four target and four nontarget scores; one of each lands on the wrong side.
scores = [0.9, 0.8, 0.7, 0.3, 0.6, 0.2, 0.1, 0.05]
labels = [1, 1, 1, 1, 0, 0, 0, 0]
result = compute_eer(scores, labels)
print(result.line())

# The brute-force reference sweeps every threshold directly and agrees.
print("oracle:", eer_oracle(scores, labels).line())

# EER only depends on the ranking of the scores.
print("after 3x + 1:", compute_eer(3 * np.array(scores) + 1, labels).line())

# Scoring a trial list against a table of embeddings uses cosine similarity.
embeddings = {"a1": np.array([1.0, 0.1]), "a2": np.array([0.9, 0.2]), "b1": np.array([-0.2, 1.0])}
trials = [Trial(1, "a1", "a2"), Trial(0, "a1", "b1"), Trial(0, "a2", "b1")]
for enroll, test, score, label in score_trials(embeddings, trials):
    print(f"{label} {enroll} {test} {score:.6f}")

rng = np.random.default_rng(6)
labels = rng.integers(0, 2, size=5000)
noisy = rng.normal(size=5000) + 1.5 * labels
print(f"5000 random trials: fast {compute_eer(noisy, labels).eer:.6f}, brute force {eer_oracle(noisy, labels).eer:.6f}")
