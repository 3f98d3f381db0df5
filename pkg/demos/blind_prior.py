"""A posterior that ignores x fools SBC and TARP but not CoLT.

q(theta | x) = p(theta) has the right marginals, so rank histograms pooled
over x look uniform.  Conditional ball ranks do not.

    python demos/blind_prior.py
"""

from colt import C2stConfig, PerturbationSpec, TrainConfig, c2st_test, colt_test, colt_train, make_task
from colt import perturbed_sampler, sample_joint, sbc_test, tarp_test

task = make_task("gaussian", 3, 3)
blind = perturbed_sampler(task, PerturbationSpec("blind_prior", 1.0))

model = colt_train(sample_joint(task, blind, 100, 200, seed=0), TrainConfig(epochs=100, learning_rate=1e-3, hidden=(64, 64)), "id")
batch = sample_joint(task, blind, 100, 200, seed=1)

for report in (
    colt_test(batch, model),
    sbc_test(batch),
    tarp_test(batch, seed=0),
    c2st_test(batch, C2stConfig(epochs=200, learning_rate=1e-3, hidden=(64, 64))),
):
    verdict = "reject" if report.reject_at_05 else "accept"
    print(f"{report.method:>8}: statistic {report.statistic:.3f}  p {report.p_value:.2e}  -> {verdict}")
