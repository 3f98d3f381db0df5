"""Comparison tests: SBC, TARP and the classifier two-sample test."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from colt import autodiff as ad
from colt.autodiff import AdamState, Tape, adam_step, net_forward, net_init
from colt.core import SampleBatch, batch_ranks
from colt.errors import ConfigurationError, InsufficientDataError
from colt.stats import TestReport, c2st_pvalue, ks_pvalue, ks_statistic, ks_test


def sbc_ranks(batch: SampleBatch) -> np.ndarray:
    """``(N, d)`` marginal ranks: fraction of draws strictly below the anchor."""
    return np.mean(batch.synthetic < batch.theta[:, None, :], axis=1)


def sbc_test(batch: SampleBatch) -> TestReport:
    """Per-dimension KS tests of the marginal ranks with Bonferroni correction."""
    if batch.k < 2:
        raise ConfigurationError("SBC needs at least two draws per anchor")
    ranks = sbc_ranks(batch)
    d = ranks.shape[1]
    stats = [ks_statistic(ranks[:, j]) for j in range(d)]
    pvals = [ks_pvalue(s, batch.n) for s in stats]
    return TestReport("sbc", max(stats), min(1.0, min(pvals) * d))


def tarp_references(theta, rng) -> np.ndarray:
    """Permute each coordinate of the anchors independently (keeps the marginals)."""
    n, d = theta.shape
    return np.stack([theta[rng.permutation(n), j] for j in range(d)], axis=1)


def tarp_test(batch: SampleBatch, seed=0) -> TestReport:
    """Ball ranks around random reference points, tested against Uniform(0, 1)."""
    rng = np.random.default_rng(seed)
    refs = tarp_references(batch.theta, rng)
    ranks = batch_ranks(batch.theta, batch.synthetic, refs, None, hard=True)
    return ks_test(ranks, "tarp")


@dataclass(frozen=True)
class C2stConfig:
    epochs: int = 1000
    learning_rate: float = 1e-5
    train_fraction: float = 0.5
    seed: int = 0
    hidden: tuple = (256, 256, 256)

    def __post_init__(self):
        if int(self.epochs) < 1:
            raise ConfigurationError("C2ST needs at least one epoch")
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigurationError("train_fraction must lie in (0, 1)")
        if not self.learning_rate > 0:
            raise ConfigurationError("learning_rate must be positive")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))


def _logistic_loss(logits, labels):
    # mean(softplus(z) - y z)
    return ad.mean(ad.sub(ad.softplus(logits), ad.mul(logits, labels)))


def c2st_test(batch: SampleBatch, config: C2stConfig = C2stConfig(), shuffle_labels: bool = False) -> TestReport:
    """Classifier two-sample test on ``(x, theta)`` pairs.

    Each anchor contributes its real pair (label 1) and one synthetic pair
    built from its first q draw (label 0).  Anchors are split into train and
    test halves; the classifier is a ReLU MLP trained with full-batch Adam on
    the logistic loss, and the held-out accuracy is turned into a one-sided
    z-test.  ``shuffle_labels`` permutes the labels (a null-by-construction
    check).
    """
    n = batch.n
    if n < 4:
        raise InsufficientDataError(f"C2ST needs at least 4 anchors, got {n}")
    rng = np.random.default_rng(config.seed)
    order = rng.permutation(n)
    n_train = min(max(int(round(n * config.train_fraction)), 1), n - 1)
    train_idx, test_idx = order[:n_train], order[n_train:]

    def features(idx):
        real = np.hstack([batch.x[idx], batch.theta[idx]])
        fake = np.hstack([batch.x[idx], batch.synthetic[idx, 0, :]])
        return np.vstack([real, fake]), np.concatenate([np.ones(idx.size), np.zeros(idx.size)])

    x_tr, y_tr = features(train_idx)
    x_te, y_te = features(test_idx)
    if shuffle_labels:
        y_tr = rng.permutation(y_tr)
        y_te = rng.permutation(y_te)
    mu, sd = x_tr.mean(axis=0), x_tr.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    x_tr, x_te = (x_tr - mu) / sd, (x_te - mu) / sd

    net = net_init([x_tr.shape[1], *config.hidden, 1], "relu", int(rng.integers(2**32)))
    opt = AdamState.zeros(net.weights.size, lr=config.learning_rate)
    for _ in range(config.epochs):
        tape = Tape()
        w = tape.watch(net.weights)
        logits = ad.reshape(net_forward(net, x_tr, weights=w), (-1,))
        loss = _logistic_loss(logits, y_tr)
        (grad,) = ad.backprop(tape, loss)
        net, opt = adam_step(opt, net, grad)
    pred = net_forward(net, x_te)[:, 0] > 0
    accuracy = float(np.mean(pred == (y_te > 0.5)))
    return TestReport("c2st", accuracy, c2st_pvalue(accuracy, y_te.size))
