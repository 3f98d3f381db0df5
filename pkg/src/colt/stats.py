"""Rank-uniformity statistics: embedding distances, KS test, Sinkhorn loss, C2ST z-test."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp, ndtr

from colt import autodiff as ad
from colt.autodiff import NetworkParams, Var
from colt.errors import ContractError, ShapeError, TrainingDivergedError

METHODS = ("colt_full", "colt_id", "sbc", "tarp", "c2st")


@dataclass(frozen=True)
class RankVector:
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64).ravel()
        if v.size < 1:
            raise ContractError("rank vector must be non-empty")
        if np.any(~np.isfinite(v)) or np.any(v < 0) or np.any(v > 1):
            raise ContractError("ranks must lie in [0, 1]")
        object.__setattr__(self, "values", v)

    @property
    def n(self):
        return self.values.size


def _as_ranks(ranks):
    return ranks.values if isinstance(ranks, RankVector) else RankVector(ranks).values


@dataclass(frozen=True)
class TestReport:
    """Outcome of one hypothesis test at the 5% level."""

    __test__ = False  # not a pytest class

    method: str
    statistic: float
    p_value: float

    def __post_init__(self):
        if self.method not in METHODS:
            raise ContractError(f"unknown method tag {self.method!r}")
        if not np.isfinite(self.statistic):
            raise ContractError("test statistic must be finite")
        object.__setattr__(self, "statistic", float(self.statistic))
        object.__setattr__(self, "p_value", float(np.clip(self.p_value, 0.0, 1.0)))

    @property
    def reject_at_05(self) -> bool:
        return self.p_value < 0.05


# ---------------------------------------------------------------------------
# Embedding metric
# ---------------------------------------------------------------------------


def embed(phi, theta, phi_weights=None):
    """Apply the embedding; ``phi=None`` (or "identity") is the identity map."""
    if phi is None or (isinstance(phi, str) and phi == "identity"):
        return theta
    if not isinstance(phi, NetworkParams):
        raise ContractError(f"embedding must be a NetworkParams or identity, got {type(phi).__name__}")
    tv = ad.value_of(theta)
    flat = ad.reshape(theta, (-1, tv.shape[-1])) if tv.ndim != 2 else theta
    out = ad.net_forward(phi, flat, weights=phi_weights)
    return ad.reshape(out, tv.shape[:-1] + (phi.out_dim,)) if tv.ndim != 2 else out


def norm_last(diff):
    return ad.sqrt(ad.sum_(ad.square(diff), axis=-1))


def embed_distance(phi, a, b, phi_weights=None):
    """``||phi(a) - phi(b)||_2`` along the last axis (broadcasting over the rest)."""
    av, bv = ad.value_of(a), ad.value_of(b)
    if av.shape[-1] != bv.shape[-1]:
        raise ShapeError(f"theta dimensions differ: {av.shape[-1]} vs {bv.shape[-1]}")
    if isinstance(phi, NetworkParams) and av.shape[-1] != phi.in_dim:
        raise ShapeError(f"embedding expects dim {phi.in_dim}, got {av.shape[-1]}")
    return norm_last(ad.sub(embed(phi, a, phi_weights), embed(phi, b, phi_weights)))


# ---------------------------------------------------------------------------
# Kolmogorov-Smirnov against Uniform(0, 1)
# ---------------------------------------------------------------------------


def ks_statistic(ranks) -> float:
    u = np.sort(_as_ranks(ranks))
    n = u.size
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - u), np.max(u - (i - 1) / n)))


def kolmogorov_sf(lam: float, tol: float = 1e-12) -> float:
    """Survival function of the Kolmogorov distribution, ``P(K > lam)``.

    Uses the alternating series for ``lam >= 1`` and the theta-function
    form (which converges fast near zero) below that.
    """
    if lam < 0.1:
        # 1 - Q(0.1) is below 1e-50
        return 1.0
    if lam >= 1.0:
        total, k = 0.0, 1
        while True:
            term = np.exp(-2.0 * k * k * lam * lam)
            total += term if k % 2 else -term
            if term < tol:
                break
            k += 1
        return float(np.clip(2.0 * total, 0.0, 1.0))
    total, k = 0.0, 1
    c = np.pi**2 / (8.0 * lam * lam)
    while True:
        term = np.exp(-((2 * k - 1) ** 2) * c)
        total += term
        if term < tol:
            break
        k += 1
    return float(np.clip(1.0 - np.sqrt(2.0 * np.pi) / lam * total, 0.0, 1.0))


def ks_pvalue(d: float, n: int) -> float:
    """Asymptotic KS p-value with Stephens' small-sample correction."""
    if n < 1:
        raise ContractError("n must be >= 1")
    sn = np.sqrt(n)
    return kolmogorov_sf((sn + 0.12 + 0.11 / sn) * float(d))


def ks_test(ranks, method="colt_id") -> TestReport:
    u = _as_ranks(ranks)
    d = ks_statistic(u)
    return TestReport(method, d, ks_pvalue(d, u.size))


# ---------------------------------------------------------------------------
# Debiased 1-D Sinkhorn divergence to a uniform grid
# ---------------------------------------------------------------------------


def uniform_grid(n):
    return (np.arange(1, n + 1) - 0.5) / n


def _softmin(eps, cost, h):
    # -eps * log sum_j exp(h_j - C_ij / eps)
    return -eps * logsumexp(h[None, :] - cost / eps, axis=1)


def _eps_schedule(eps, iterations, diameter2=1.0):
    if iterations <= 1 or eps >= diameter2:
        return [eps] * iterations
    n_anneal = max(1, iterations // 2)
    ratio = (eps / diameter2) ** (1.0 / n_anneal)
    sched = [diameter2 * ratio**k for k in range(n_anneal)]
    return [max(eps, e) for e in sched] + [eps] * (iterations - n_anneal)


def sinkhorn_potentials(x, y, eps, iterations):
    """Symmetric Sinkhorn loop with epsilon annealing for 1-D point clouds.

    Returns the final potentials ``(f_xy, g_xy, f_xx, g_yy)`` and the cost
    matrices used for the last extrapolation step.
    """
    n, m = x.size, y.size
    la, lb = np.full(n, -np.log(n)), np.full(m, -np.log(m))
    cxy = (x[:, None] - y[None, :]) ** 2
    cxx = (x[:, None] - x[None, :]) ** 2
    cyy = (y[:, None] - y[None, :]) ** 2
    diam2 = max(1.0, float(max(x.max(), y.max()) - min(x.min(), y.min())) ** 2)
    sched = _eps_schedule(eps, iterations, diam2)
    e0 = sched[0]
    f_xy, g_xy = _softmin(e0, cxy, lb), _softmin(e0, cxy.T, la)
    f_xx, g_yy = _softmin(e0, cxx, la), _softmin(e0, cyy, lb)
    for e in sched:
        ft = _softmin(e, cxy, lb + g_xy / e)
        gt = _softmin(e, cxy.T, la + f_xy / e)
        fxt = _softmin(e, cxx, la + f_xx / e)
        gyt = _softmin(e, cyy, lb + g_yy / e)
        f_xy, g_xy = 0.5 * (f_xy + ft), 0.5 * (g_xy + gt)
        f_xx, g_yy = 0.5 * (f_xx + fxt), 0.5 * (g_yy + gyt)
    # final extrapolation at the target epsilon
    f_new = _softmin(eps, cxy, lb + g_xy / eps)
    g_new = _softmin(eps, cxy.T, la + f_xy / eps)
    f_xx = _softmin(eps, cxx, la + f_xx / eps)
    g_yy = _softmin(eps, cyy, lb + g_yy / eps)
    return f_new, g_new, f_xx, g_yy, (cxy, cxx, la, lb)


def _sinkhorn_value_and_grad(x, y, eps, iterations):
    f_xy, g_xy, f_xx, g_yy, (cxy, cxx, la, lb) = sinkhorn_potentials(x, y, eps, iterations)
    value = float(np.mean(f_xy - f_xx) + np.mean(g_xy - g_yy))
    # envelope gradient: transport plans with exact row marginals
    p_xy = np.exp(lb[None, :] + (g_xy[None, :] - cxy) / eps)
    p_xy /= p_xy.sum(axis=1, keepdims=True)
    p_xx = np.exp(la[None, :] + (f_xx[None, :] - cxx) / eps)
    p_xx /= p_xx.sum(axis=1, keepdims=True)
    n = x.size
    grad = (2.0 / n) * (np.sum(p_xy * (x[:, None] - y[None, :]), axis=1) - np.sum(p_xx * (x[:, None] - x[None, :]), axis=1))
    return value, grad


def sinkhorn_divergence(x, y, epsilon=0.01, iterations=100):
    """Debiased entropic OT ``S(x, y)`` between two uniform 1-D point clouds.

    Squared-distance cost; differentiable w.r.t. ``x`` when it is a recorded
    :class:`~colt.autodiff.Var` (``y`` is treated as fixed).
    """
    if not epsilon > 0:
        raise ContractError("epsilon must be positive")
    if iterations < 1:
        raise ContractError("need at least one Sinkhorn iteration")
    xv = np.asarray(ad.value_of(x), dtype=np.float64).ravel()
    yv = np.asarray(y, dtype=np.float64).ravel()
    if not np.all(np.isfinite(xv)):
        raise TrainingDivergedError("non-finite ranks passed to the Sinkhorn divergence")
    value, grad = _sinkhorn_value_and_grad(xv, yv, float(epsilon), int(iterations))
    if not np.isfinite(value):
        raise TrainingDivergedError("Sinkhorn divergence is not finite", diagnostics={"epsilon": epsilon})
    shape = ad.value_of(x).shape
    return ad.custom_op(np.array(value), [(x, lambda g: (g * grad).reshape(shape))])


def sinkhorn_uniform_divergence(ranks, epsilon=0.01, iterations=100):
    """Sinkhorn divergence between ranks and the midpoint grid ``(j - 1/2) / n``."""
    rv = ad.value_of(ranks)
    if not isinstance(ranks, Var):
        _as_ranks(rv)
    return sinkhorn_divergence(ranks, uniform_grid(np.size(rv)), epsilon, iterations)


def sorted_w2(x, y) -> float:
    """Exact squared 2-Wasserstein distance between equal-size 1-D samples."""
    x, y = np.sort(np.ravel(x)), np.sort(np.ravel(y))
    if x.size != y.size:
        raise ShapeError("sorted transport needs equal sample sizes")
    return float(np.mean((x - y) ** 2))


# ---------------------------------------------------------------------------
# Classifier two-sample test
# ---------------------------------------------------------------------------


def c2st_pvalue(accuracy: float, n_test: int) -> float:
    """One-sided normal-approximation p-value for held-out accuracy."""
    if not 0.0 <= accuracy <= 1.0:
        raise ContractError("accuracy must lie in [0, 1]")
    if n_test < 1:
        raise ContractError("n_test must be >= 1")
    z = (accuracy - 0.5) * np.sqrt(4.0 * n_test)
    return float(ndtr(-z))
