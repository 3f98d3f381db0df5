import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.special import kolmogorov, ndtr

from colt import autodiff as ad
from colt.autodiff import Tape, net_init
from colt.core import batch_ranks
from colt.errors import ContractError, ShapeError, TrainingDivergedError
from colt.stats import (
    RankVector,
    TestReport,
    c2st_pvalue,
    embed_distance,
    kolmogorov_sf,
    ks_pvalue,
    ks_statistic,
    ks_test,
    sinkhorn_divergence,
    sinkhorn_uniform_divergence,
    sorted_w2,
    uniform_grid,
)

rank_vectors = arrays(np.float64, st.integers(1, 40), elements=st.floats(0, 1))


def brute_force_ks(u):
    """sup |F_n - F| checked at both one-sided limits of every breakpoint."""
    u = np.asarray(u, dtype=np.float64)
    n = u.size
    best = 0.0
    for t in np.unique(np.concatenate([u, [0.0, 1.0]])):
        right = np.sum(u <= t) / n
        left = np.sum(u < t) / n
        best = max(best, abs(right - t), abs(left - t))
    return best


# ------------------------------------------------------------------ distances


def test_identity_distance_is_euclidean():
    assert float(embed_distance(None, np.array([0.0, 0.0]), np.array([3.0, 4.0]))) == 5.0


def test_distance_to_self_is_zero():
    phi = net_init([3, 8, 3], "relu", seed=1)
    a = np.array([0.3, -1.0, 2.0])
    assert float(embed_distance(phi, a, a)) == 0.0


def test_distance_dimension_mismatch():
    with pytest.raises(ShapeError):
        embed_distance(None, np.zeros(2), np.zeros(3))
    phi = net_init([3, 4, 3], seed=0)
    with pytest.raises(ShapeError):
        embed_distance(phi, np.zeros(2), np.zeros(2))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000))
def test_triangle_inequality_under_random_embedding(seed):
    rng = np.random.default_rng(seed)
    phi = net_init([2, 16, 16, 2], "relu", seed=seed)
    a, b, c = rng.standard_normal((3, 2)) * 3
    dac = float(embed_distance(phi, a, c))
    dab = float(embed_distance(phi, a, b))
    dbc = float(embed_distance(phi, b, c))
    assert dac <= dab + dbc + 1e-12


def test_distance_is_differentiable_in_embedding_weights():
    phi = net_init([2, 5, 2], "sine", seed=4)
    a, b = np.array([0.1, 0.7]), np.array([-0.4, 0.2])
    tape = Tape()
    w = tape.watch(phi.weights)
    (g,) = ad.backprop(tape, embed_distance(phi, a, b, phi_weights=w))
    i = int(np.argmax(np.abs(g)))
    e = np.zeros_like(phi.weights)
    e[i] = 1e-6
    fd = (
        float(embed_distance(phi.with_weights(phi.weights + e), a, b))
        - float(embed_distance(phi.with_weights(phi.weights - e), a, b))
    ) / 2e-6
    assert g[i] == pytest.approx(fd, rel=1e-6)


# ------------------------------------------------------------------------ KS


def test_ks_single_rank():
    assert ks_statistic([0.5]) == 0.5


@pytest.mark.parametrize("n", [1, 2, 7, 100])
def test_ks_midpoint_grid(n):
    assert ks_statistic(uniform_grid(n)) == pytest.approx(1 / (2 * n), abs=1e-15)


def test_ks_three_ranks():
    assert ks_statistic([0.1, 0.2, 0.3]) == pytest.approx(0.7, abs=1e-15)


def test_ks_rejects_out_of_range():
    with pytest.raises(ContractError):
        ks_statistic([0.2, 1.1])
    with pytest.raises(ContractError):
        ks_statistic([])


def test_ks_matches_brute_force_on_random_vectors():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        n = int(rng.integers(1, 60))
        u = rng.random(n) if rng.random() < 0.7 else rng.integers(0, 6, n) / 5
        assert ks_statistic(u) == brute_force_ks(u)


@settings(max_examples=100, deadline=None)
@given(rank_vectors, st.randoms(use_true_random=False))
def test_ks_permutation_invariant(u, rnd):
    perm = list(range(u.size))
    rnd.shuffle(perm)
    assert ks_statistic(u) == ks_statistic(u[perm])


def test_ks_pvalue_boundaries():
    assert ks_pvalue(0.0, 50) == 1.0
    assert ks_pvalue(1.0, 1000) < 1e-100


def test_ks_pvalue_matches_stephens_oracle():
    # scipy.special.kolmogorov is an independent implementation of Q(lambda)
    for n in (5, 30, 100, 500):
        for d in np.linspace(0.0, 0.6, 25):
            lam = (np.sqrt(n) + 0.12 + 0.11 / np.sqrt(n)) * d
            assert ks_pvalue(d, n) == pytest.approx(float(kolmogorov(lam)), abs=1e-10)


def test_ks_pvalue_example_value():
    assert ks_pvalue(0.136, 100) == pytest.approx(0.04489, abs=5e-5)
    assert 0.045 <= ks_pvalue(1.358 / np.sqrt(100), 100) <= 0.055


def test_kolmogorov_sf_branches_agree_at_switch():
    assert kolmogorov_sf(1.0 - 1e-12) == pytest.approx(kolmogorov_sf(1.0), abs=1e-10)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 2000), st.floats(0, 1), st.floats(0, 1))
def test_ks_pvalue_monotone_in_d(n, d1, d2):
    lo, hi = min(d1, d2), max(d1, d2)
    assert ks_pvalue(hi, n) <= ks_pvalue(lo, n)
    assert 0.0 <= ks_pvalue(hi, n) <= 1.0


def test_ks_test_builds_report():
    rep = ks_test(np.full(50, 0.01), "tarp")
    assert rep.method == "tarp" and rep.reject_at_05


def test_pit_uniformity_of_exchangeable_ranks():
    rng = np.random.default_rng(42)
    n, k, reps = 100, 500, 500
    rejections = 0
    for _ in range(reps):
        draws = rng.standard_normal((n, k, 2))
        anchors = rng.standard_normal((n, 2))
        centers = np.tile([0.5, -0.3], (n, 1))
        u = batch_ranks(anchors, draws, centers)
        rejections += ks_test(u).reject_at_05
    assert 0.02 <= rejections / reps <= 0.09


# ------------------------------------------------------------------ reports


def test_report_rejection_flag():
    assert TestReport("sbc", 0.1, 0.049).reject_at_05
    assert not TestReport("sbc", 0.1, 0.05).reject_at_05


def test_report_clips_and_validates():
    assert TestReport("c2st", 0.6, 1.0000001).p_value == 1.0
    with pytest.raises(ContractError):
        TestReport("nope", 0.1, 0.5)
    with pytest.raises(ContractError):
        TestReport("sbc", np.nan, 0.5)


def test_rank_vector_contract():
    assert RankVector([0.0, 1.0]).n == 2
    with pytest.raises(ContractError):
        RankVector([-0.1])


# ------------------------------------------------------------------ Sinkhorn


@pytest.mark.parametrize("n", [1, 4, 16, 100])
def test_sinkhorn_zero_on_grid(n):
    assert abs(float(sinkhorn_uniform_divergence(uniform_grid(n)))) <= 1e-10


def test_sinkhorn_all_zero_ranks_small_eps():
    # sorted transport of {0,0,0,0} onto {1/8,3/8,5/8,7/8}
    exact = np.mean(uniform_grid(4) ** 2)
    assert exact == 21 / 64
    assert float(sinkhorn_uniform_divergence(np.zeros(4), epsilon=1e-3)) == pytest.approx(exact, abs=1e-3)


def test_sinkhorn_matches_sorted_transport_for_small_n():
    rng = np.random.default_rng(3)
    for n in range(1, 17):
        for _ in range(5):
            u = rng.random(n)
            s = float(sinkhorn_uniform_divergence(u, epsilon=1e-3))
            assert s == pytest.approx(sorted_w2(u, uniform_grid(n)), abs=1e-3)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.integers(1, 30), elements=st.floats(0, 1)))
def test_sinkhorn_nonnegative(u):
    assert float(sinkhorn_uniform_divergence(u)) >= -1e-10


def test_sinkhorn_approaches_transport_cost_as_eps_shrinks():
    rng = np.random.default_rng(8)
    for _ in range(20):
        u = rng.random(int(rng.integers(2, 30)))
        w2 = sorted_w2(u, uniform_grid(u.size))
        gaps = [abs(float(sinkhorn_uniform_divergence(u, epsilon=e)) - w2) for e in (1.0, 0.1, 0.01)]
        assert gaps[1] <= gaps[0] + 1e-6
        assert gaps[2] <= gaps[1] + 1e-6


def test_sinkhorn_gradient_matches_finite_differences():
    # the envelope gradient is exact at the fixed point, so iterate to convergence
    rng = np.random.default_rng(5)
    iters = 2000
    for n in (10, 25):
        u = rng.random(n)
        tape = Tape()
        uv = tape.watch(u)
        (g,) = ad.backprop(tape, sinkhorn_uniform_divergence(uv, epsilon=0.01, iterations=iters))
        fd = np.empty(n)
        for i in range(n):
            e = np.zeros(n)
            e[i] = 1e-6
            fd[i] = (
                float(sinkhorn_uniform_divergence(u + e, 0.01, iters))
                - float(sinkhorn_uniform_divergence(u - e, 0.01, iters))
            ) / 2e-6
        assert np.linalg.norm(g - fd) <= 1e-4 * np.linalg.norm(fd)


def test_sinkhorn_rejects_bad_input():
    with pytest.raises(ContractError):
        sinkhorn_uniform_divergence(np.array([0.1, 0.5]), epsilon=0.0)
    with pytest.raises(ContractError):
        sinkhorn_uniform_divergence(np.array([0.1, 0.5]), iterations=0)
    tape = Tape()
    with pytest.raises(TrainingDivergedError):
        sinkhorn_divergence(tape.watch(np.array([0.1, np.nan])), uniform_grid(2))


def test_sorted_w2_size_mismatch():
    with pytest.raises(ShapeError):
        sorted_w2([0.1], [0.1, 0.2])


# ---------------------------------------------------------------------- C2ST


def test_c2st_chance_level():
    assert c2st_pvalue(0.5, 37) == 0.5


def test_c2st_normal_quantile():
    n = 100
    assert c2st_pvalue(0.5 + 1.645 / np.sqrt(4 * n), n) == pytest.approx(0.05, abs=1e-4)


def test_c2st_example():
    # z = 0.1 * sqrt(400) = 2
    assert c2st_pvalue(0.6, 100) == pytest.approx(float(ndtr(-2.0)), abs=1e-15)
    assert c2st_pvalue(0.6, 100) == pytest.approx(0.02275, abs=1e-5)


def test_c2st_contract():
    with pytest.raises(ContractError):
        c2st_pvalue(1.2, 10)
    with pytest.raises(ContractError):
        c2st_pvalue(0.5, 0)
