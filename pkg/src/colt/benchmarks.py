"""Synthetic posterior benchmarks with known truth and perturbed samplers.

Three families share one interface:

* ``gaussian``  -- ``theta | x ~ N(W1 x, |W2^T x| * Sigma)`` with a Toeplitz
  correlation matrix ``Sigma_ij = rho^|i-j|`` and ``x ~ N(1_m, I_m)``.
* ``manifold``  -- the same latent Gaussian pushed through a frozen
  ``s -> 128 -> d`` sine network; perturbations act on the latent draw.
* ``tree``      -- a two-class 2-D Gaussian mixture laid out along a random
  binary tree; ``x ~ N(0, 1)`` selects class A (``x >= 0``) or B.

A :class:`PerturbationSpec` turns a task into a pair of conditional samplers
``(p, q)``; :func:`sample_joint` draws anchors from ``p`` and synthetic draws
from ``q``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from colt.autodiff import NetworkParams, net_forward, net_init
from colt.core import SampleBatch
from colt.errors import ConfigurationError

FAMILIES = ("gaussian", "manifold", "tree")
KINDS = ("none", "mean_shift", "cov_scale", "anisotropic", "t_tail", "extra_modes", "mode_collapse", "blind_prior")
SCALE_FLOOR = 1e-8
MANIFOLD_HIDDEN = 128


def toeplitz_corr(s, rho=0.9):
    idx = np.arange(s)
    return rho ** np.abs(idx[:, None] - idx[None, :])


# ---------------------------------------------------------------------------
# Tree-shaped Gaussian mixture
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TreeGeometry:
    """Branching constants for the tree mixture (tunable reproduction parameters)."""

    depth: int = 7
    components_per_branch: int = 8
    root_length: float = 1.0
    length_decay: float = 0.8
    thick: float = 0.3
    child_angle: float = np.pi / 5
    angle_jitter: float = np.pi / 20
    class_angles: tuple = (np.pi / 4, 5 * np.pi / 4)


@dataclass(frozen=True)
class TreeGMM:
    """Per-class mixtures: ``means[c]`` is ``(n_comp, 2)``, ``covs[c]`` ``(n_comp, 2, 2)``."""

    means: tuple
    covs: tuple
    weights: tuple

    def n_components(self, cls=0):
        return self.means[cls].shape[0]


def build_tree(seed, geometry: TreeGeometry = TreeGeometry()) -> TreeGMM:
    rng = np.random.default_rng(seed)
    all_means, all_covs, all_weights = [], [], []
    g = geometry
    for angle0 in g.class_angles:
        means, covs, weights = [], [], []

        def grow(depth, pos, angle):
            if depth >= g.depth:
                return
            direction = np.array([np.cos(angle), np.sin(angle)])
            length = g.root_length * g.length_decay**depth
            size = length / g.components_per_branch
            outer = np.outer(direction, direction)
            cov = (outer + (np.eye(2) - outer) * g.thick**2) * size**2
            # components spread evenly along the branch; each branch carries
            # mass proportional to its length and halves per level
            for t in (np.arange(g.components_per_branch) + 0.5) / g.components_per_branch:
                means.append(pos + direction * length * t)
                covs.append(cov)
                weights.append(length * 0.5**depth)
            tip = pos + direction * length
            for sign in (1.0, -1.0):
                jitter = rng.uniform(-g.angle_jitter, g.angle_jitter)
                grow(depth + 1, tip, angle + sign * (g.child_angle + jitter))

        grow(0, np.zeros(2), angle0)
        w = np.asarray(weights)
        all_means.append(np.asarray(means))
        all_covs.append(np.asarray(covs))
        all_weights.append(w / w.sum())
    return TreeGMM(tuple(all_means), tuple(all_covs), tuple(all_weights))


def _tree_chols(tree: TreeGMM, sigma):
    return tuple(np.linalg.cholesky(c + sigma**2 * np.eye(2)) for c in tree.covs)


# ---------------------------------------------------------------------------
# Tasks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BenchmarkTask:
    """Frozen generator state; the perturbation never alters it."""

    family: str
    m: int
    s: int
    d: int
    seed: int
    w1: np.ndarray | None = field(default=None, repr=False)
    w2: np.ndarray | None = field(default=None, repr=False)
    rho: float = 0.9
    transform: NetworkParams | None = field(default=None, repr=False)
    tree: TreeGMM | None = field(default=None, repr=False)
    tree_sigma: float = 1e-2

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigurationError(f"unknown family {self.family!r}")
        if min(self.m, self.s, self.d) < 1:
            raise ConfigurationError("dimensions must be positive")

    @property
    def corr(self):
        return toeplitz_corr(self.s, self.rho)

    @property
    def corr_chol(self):
        return np.linalg.cholesky(self.corr)

    @property
    def theta_dim(self):
        return self.d

    def sample_x(self, n, rng):
        if self.family == "tree":
            return rng.standard_normal((n, 1))
        return 1.0 + rng.standard_normal((n, self.m))

    def posterior_mean(self, x):
        """Latent conditional mean ``W1 x`` (Gaussian/manifold families)."""
        return np.atleast_2d(x) @ self.w1.T

    def posterior_scale(self, x):
        """The scalar ``max(|W2^T x|, 1e-8)`` multiplying the Toeplitz matrix."""
        return np.maximum(np.abs(np.atleast_2d(x) @ self.w2[:, 0]), SCALE_FLOOR)

    def to_json(self) -> dict:
        doc = {"family": self.family, "m": self.m, "s": self.s, "d": self.d, "seed": self.seed, "rho": self.rho}
        if self.w1 is not None:
            doc["w1"] = self.w1.tolist()
            doc["w2"] = self.w2.tolist()
        if self.transform is not None:
            doc["transform"] = self.transform.to_json()
        if self.tree is not None:
            doc["tree_sigma"] = self.tree_sigma
            doc["tree"] = {
                "means": [m.tolist() for m in self.tree.means],
                "covs": [c.tolist() for c in self.tree.covs],
                "weights": [w.tolist() for w in self.tree.weights],
            }
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> BenchmarkTask:
        tree = None
        if "tree" in doc:
            t = doc["tree"]
            tree = TreeGMM(
                tuple(np.array(m) for m in t["means"]),
                tuple(np.array(c) for c in t["covs"]),
                tuple(np.array(w) for w in t["weights"]),
            )
        return cls(
            doc["family"],
            doc["m"],
            doc["s"],
            doc["d"],
            doc["seed"],
            None if "w1" not in doc else np.array(doc["w1"]),
            None if "w2" not in doc else np.array(doc["w2"]),
            doc.get("rho", 0.9),
            None if "transform" not in doc else NetworkParams.from_json(doc["transform"]),
            tree,
            doc.get("tree_sigma", 1e-2),
        )

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path):
        return cls.from_json(json.loads(Path(path).read_text()))


def make_gaussian_task(m: int, s: int, seed: int = 0, rho: float = 0.9) -> BenchmarkTask:
    if m < 1 or s < 1:
        raise ConfigurationError("m and s must be >= 1")
    rng = np.random.default_rng(seed)
    w1 = rng.standard_normal((s, m))
    w2 = rng.standard_normal((m, 1))
    return BenchmarkTask("gaussian", m, s, s, seed, w1, w2, rho)


def make_manifold_task(m: int, s: int, d: int, seed: int = 0, rho: float = 0.9) -> BenchmarkTask:
    if min(m, s, d) < 1:
        raise ConfigurationError("m, s and d must be >= 1")
    base = make_gaussian_task(m, s, seed, rho)
    transform_seed = int(np.random.SeedSequence([seed, 1]).generate_state(1)[0])
    transform = net_init([s, MANIFOLD_HIDDEN, d], "sine", transform_seed)
    return BenchmarkTask("manifold", m, s, d, seed, base.w1, base.w2, rho, transform)


def make_tree_task(sigma: float = 1e-2, seed: int = 0, geometry: TreeGeometry = TreeGeometry()) -> BenchmarkTask:
    if not sigma > 0:
        raise ConfigurationError(f"tree sigma must be positive, got {sigma}")
    return BenchmarkTask("tree", 1, 2, 2, seed, tree=build_tree(seed, geometry), tree_sigma=float(sigma))


def make_task(family, m=3, s=3, d=None, seed=0, **kw) -> BenchmarkTask:
    if family == "gaussian":
        return make_gaussian_task(m, s, seed, **kw)
    if family == "manifold":
        return make_manifold_task(m, s, d or s, seed, **kw)
    if family == "tree":
        return make_tree_task(seed=seed, **kw)
    raise ConfigurationError(f"unknown family {family!r}")


# ---------------------------------------------------------------------------
# Perturbations and samplers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PerturbationSpec:
    kind: str = "none"
    alpha: float = 0.0
    epsilon_t: float = 1e-3

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown perturbation kind {self.kind!r}")
        if not self.alpha >= 0:
            raise ConfigurationError("alpha must be non-negative")
        if self.kind in ("extra_modes", "mode_collapse", "blind_prior") and self.alpha > 1:
            raise ConfigurationError("mixture weight alpha must be <= 1")
        if not self.epsilon_t > 0:
            raise ConfigurationError("epsilon_t must be positive")


TREE_KINDS = ("none", "cov_scale")


@dataclass(frozen=True)
class ConditionalSampler:
    """Draws ``theta ~ law(. | x)`` for one side (``p`` or ``q``) of a comparison.

    On the tree family ``cov_scale`` means the component noise ``sigma`` is
    inflated to ``(1 + alpha) sigma``.
    """

    task: BenchmarkTask
    spec: PerturbationSpec
    role: str = "q"

    def __post_init__(self):
        fam, kind = self.task.family, self.spec.kind
        if fam == "tree" and kind not in TREE_KINDS:
            raise ConfigurationError(f"tree tasks support only {TREE_KINDS}, got {kind!r}")

    @property
    def is_truth(self):
        return self.role == "p"

    def sample(self, x, k, rng) -> np.ndarray:
        """Return ``(n, k, d)`` draws for the ``n`` rows of ``x``."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if self.task.family == "tree":
            return self._sample_tree(x, k, rng)
        latent = self.sample_latent(x, k, rng)
        return apply_transform(self.task, latent)

    def sample_latent(self, x, k, rng):
        task, kind, alpha = self.task, self.spec.kind, self.spec.alpha
        n = x.shape[0]
        if self.is_truth:
            if kind == "mode_collapse":
                return _gaussian_mixture(task, x, k, rng, alpha)
            return _gaussian(task, x, k, rng)
        if kind in ("none", "mode_collapse"):
            return _gaussian(task, x, k, rng)
        if kind == "mean_shift":
            return _gaussian(task, x, k, rng, mean_factor=1.0 + alpha)
        if kind == "cov_scale":
            return _gaussian(task, x, k, rng, cov_factor=1.0 + alpha)
        if kind == "anisotropic":
            base = _gaussian(task, x, k, rng)
            v = min_variance_direction(task.corr)
            return base + np.sqrt(alpha) * rng.standard_normal((n, k, 1)) * v
        if kind == "t_tail":
            nu = 1.0 / (alpha + self.spec.epsilon_t)
            z = _gaussian(task, x, k, rng, centered=True)
            g = rng.chisquare(nu, size=(n, k, 1))
            return task.posterior_mean(x)[:, None, :] + z / np.sqrt(g / nu)
        if kind == "extra_modes":
            return _gaussian_mixture(task, x, k, rng, alpha)
        if kind == "blind_prior":
            # each draw ignores x with probability alpha; alpha=1 is q(theta|x) = p(theta)
            xp = task.sample_x(n * k, rng).reshape(n, k, task.m)
            keep = rng.random((n, k, 1)) >= alpha
            xp = np.where(keep, x[:, None, :], xp).reshape(n * k, task.m)
            return _gaussian(task, xp, 1, rng).reshape(n, k, task.s)
        raise ConfigurationError(f"unsupported perturbation {kind!r}")

    def _sample_tree(self, x, k, rng):
        task = self.task
        sigma = task.tree_sigma
        if not self.is_truth and self.spec.kind == "cov_scale":
            sigma = (1.0 + self.spec.alpha) * sigma
        chols = _tree_chols(task.tree, sigma)
        n = x.shape[0]
        cls = np.where(x[:, 0] >= 0, 0, 1)
        out = np.empty((n, k, 2))
        for c in (0, 1):
            rows = np.flatnonzero(cls == c)
            if rows.size == 0:
                continue
            comp = rng.choice(task.tree.weights[c].size, size=(rows.size, k), p=task.tree.weights[c])
            z = rng.standard_normal((rows.size, k, 2))
            out[rows] = task.tree.means[c][comp] + np.einsum("nkij,nkj->nki", chols[c][comp], z)
        return out


def _gaussian(task, x, k, rng, mean_factor=1.0, cov_factor=1.0, centered=False):
    n = x.shape[0]
    scale = np.sqrt(cov_factor * task.posterior_scale(x))
    z = rng.standard_normal((n, k, task.s)) @ task.corr_chol.T
    z *= scale[:, None, None]
    if centered:
        return z
    return mean_factor * task.posterior_mean(x)[:, None, :] + z


def _gaussian_mixture(task, x, k, rng, alpha):
    n = x.shape[0]
    draws = _gaussian(task, x, k, rng, centered=True)
    sign = np.where(rng.uniform(size=(n, k, 1)) < alpha, -1.0, 1.0)
    return sign * task.posterior_mean(x)[:, None, :] + draws


def min_variance_direction(cov):
    """Unit eigenvector of the smallest eigenvalue (lowest index wins ties)."""
    vals, vecs = np.linalg.eigh(cov)
    return vecs[:, int(np.argmin(vals))]


def apply_transform(task: BenchmarkTask, latent):
    if task.family != "manifold":
        return latent
    shape = latent.shape
    out = net_forward(task.transform, latent.reshape(-1, shape[-1]))
    return out.reshape(shape[:-1] + (task.d,))


def true_sampler(task: BenchmarkTask, spec: PerturbationSpec | None = None) -> ConditionalSampler:
    return ConditionalSampler(task, spec or PerturbationSpec(), role="p")


def perturbed_sampler(task: BenchmarkTask, spec: PerturbationSpec) -> ConditionalSampler:
    """The candidate posterior ``q(theta | x; alpha)`` for ``spec``."""
    if spec.kind == "blind_prior" and task.family == "tree":
        raise ConfigurationError("blind prior is defined for gaussian and manifold tasks")
    return ConditionalSampler(task, spec, role="q")


def sample_joint(task: BenchmarkTask, q: ConditionalSampler, n: int, k: int, seed) -> SampleBatch:
    """Anchors from the true joint and ``k`` draws per anchor from ``q``.

    ``x``, anchors and synthetic draws use independent child streams of
    ``seed`` so that two samplers given the same seed see the same anchors.
    """
    if n < 1 or k < 1:
        raise ConfigurationError("n and k must be >= 1")
    sx, sp, sq = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3))
    p = true_sampler(task, q.spec)
    x = task.sample_x(n, sx)
    theta = p.sample(x, 1, sp)[:, 0, :]
    synthetic = q.sample(x, k, sq)
    return SampleBatch(x, theta, synthetic)
