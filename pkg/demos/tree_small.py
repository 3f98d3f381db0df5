"""Scaled-down tree mixture run.

The full tree experiment (N=1000, 5000 epochs) takes hours on one core.
This keeps the task and perturbation but cuts sizes and training, so it
finishes in about a minute.  Expect few rejections at this budget: the thin
branches are only resolved after long training of the full variant.

    python demos/tree_small.py
"""

from colt import PerturbationSpec, TrainConfig, colt_test, colt_train, make_task, perturbed_sampler, sample_joint

task = make_task("tree")
wide = perturbed_sampler(task, PerturbationSpec("cov_scale", 4.0))
config = TrainConfig(epochs=100, learning_rate=1e-3, hidden=(64, 64))

for variant in ("id", "full"):
    model = colt_train(sample_joint(task, wide, 200, 50, seed=0), config, variant)
    rejections = sum(colt_test(sample_joint(task, wide, 200, 50, seed=[1, b]), model).reject_at_05 for b in range(10))
    print(f"colt_{variant}: rejected {rejections}/10 batches at sigma x5")
