"""Null versus shifted posterior on the 3-D Gaussian task.

Trains a small CoLT model on one batch from a mean-shifted q, then tests
fresh batches from both the true posterior and the shifted one.

    python demos/quickstart.py
"""

import numpy as np

from colt import PerturbationSpec, TrainConfig, colt_test, colt_train, make_task, perturbed_sampler, sample_joint, true_sampler

task = make_task("gaussian", 3, 3)
shifted = perturbed_sampler(task, PerturbationSpec("mean_shift", 0.5))
config = TrainConfig(epochs=200, learning_rate=1e-3, hidden=(64, 64), seed=0)

model = colt_train(sample_joint(task, shifted, 100, 200, seed=0), config, variant="id")
print(f"trained {len(model.history)} epochs, final objective {model.history[-1]:.4f}")

for name, q in [("true posterior", true_sampler(task)), ("shift 0.5", shifted)]:
    reports = [colt_test(sample_joint(task, q, 100, 200, seed=[1, b]), model) for b in range(20)]
    power = np.mean([r.reject_at_05 for r in reports])
    stat = np.mean([r.statistic for r in reports])
    print(f"{name:>15}: rejection rate {power:.2f}, mean KS statistic {stat:.3f}")
