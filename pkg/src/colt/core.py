"""Ball-probability ranks, localization/embedding training, and the KS test."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from colt import autodiff as ad
from colt.autodiff import (
    AdamState,
    NetworkParams,
    Tape,
    adam_step,
    net_forward,
    net_init,
)
from colt.errors import (
    ConfigurationError,
    ContractError,
    ShapeError,
    TrainingDivergedError,
)
from colt.stats import (
    TestReport,
    embed,
    ks_test,
    norm_last,
    sinkhorn_uniform_divergence,
)

VARIANTS = ("full", "id")


@dataclass(frozen=True)
class SampleBatch:
    """Anchors ``(x_i, theta_i)`` from the true joint plus ``K`` draws per anchor from q.

    Shapes: ``x`` is ``(N, m)``, ``theta`` is ``(N, d)``, ``synthetic`` is ``(N, K, d)``.
    """

    x: np.ndarray
    theta: np.ndarray
    synthetic: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64)
        theta = np.asarray(self.theta, dtype=np.float64)
        syn = np.asarray(self.synthetic, dtype=np.float64)
        if x.ndim == 1:
            x = x[:, None]
        if theta.ndim == 1:
            theta = theta[:, None]
        if syn.ndim == 2:
            syn = syn[:, :, None]
        if x.ndim != 2 or theta.ndim != 2 or syn.ndim != 3:
            raise ShapeError("batch arrays must be (N, m), (N, d), (N, K, d)")
        n = x.shape[0]
        if n < 1 or syn.shape[1] < 1:
            raise ShapeError("batch needs N >= 1 anchors and K >= 1 draws")
        if theta.shape[0] != n or syn.shape[0] != n:
            raise ShapeError(f"anchor counts disagree: x {x.shape}, theta {theta.shape}, synthetic {syn.shape}")
        if syn.shape[2] != theta.shape[1]:
            raise ShapeError(f"theta dims disagree: anchors {theta.shape[1]}, synthetic {syn.shape[2]}")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "synthetic", syn)

    @property
    def n(self):
        return self.x.shape[0]

    @property
    def k(self):
        return self.synthetic.shape[1]

    @property
    def x_dim(self):
        return self.x.shape[1]

    @property
    def theta_dim(self):
        return self.theta.shape[1]


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 1000
    learning_rate: float = 1e-5
    ste_temperature: float = 0.1
    sinkhorn_epsilon: float = 0.01
    sinkhorn_iterations: int = 100
    seed: int = 0
    hidden: tuple = (256, 256, 256)
    embed_dim: int | None = None

    def __post_init__(self):
        if int(self.epochs) < 1:
            raise ConfigurationError(f"must train for at least one epoch, got {self.epochs}")
        for name in ("learning_rate", "ste_temperature", "sinkhorn_epsilon"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be positive")
        if int(self.sinkhorn_iterations) < 1:
            raise ConfigurationError("sinkhorn_iterations must be >= 1")
        if any(int(h) < 1 for h in self.hidden):
            raise ConfigurationError(f"hidden widths must be positive, got {self.hidden}")
        if self.embed_dim is not None and int(self.embed_dim) < 1:
            raise ConfigurationError("embed_dim must be positive")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))


@dataclass(frozen=True)
class ColtModel:
    localization: NetworkParams
    embedding: NetworkParams | None = None
    variant: str = "id"
    config: TrainConfig | None = None
    history: tuple = field(default=(), compare=False, repr=False)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.variant == "id" and self.embedding is not None:
            raise ConfigurationError("the id variant uses the identity embedding")
        if self.variant == "full" and self.embedding is None:
            raise ConfigurationError("the full variant needs an embedding network")
        if self.embedding is not None and self.embedding.in_dim != self.localization.out_dim:
            raise ShapeError("embedding input dim must equal the theta dim")

    @property
    def method(self):
        return "colt_full" if self.variant == "full" else "colt_id"

    def localize(self, x):
        return net_forward(self.localization, np.asarray(x, dtype=np.float64))

    def to_json(self) -> dict:
        return {
            "variant": self.variant,
            "localization": self.localization.to_json(),
            "embedding": None if self.embedding is None else self.embedding.to_json(),
            "config": None if self.config is None else asdict(self.config),
        }

    @classmethod
    def from_json(cls, doc: dict) -> ColtModel:
        cfg = doc.get("config")
        if cfg is not None:
            cfg = TrainConfig(**{**cfg, "hidden": tuple(cfg["hidden"])})
        emb = doc.get("embedding")
        return cls(
            NetworkParams.from_json(doc["localization"]),
            None if emb is None else NetworkParams.from_json(emb),
            doc["variant"],
            cfg,
        )

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path) -> ColtModel:
        return cls.from_json(json.loads(Path(path).read_text()))


# ---------------------------------------------------------------------------
# Ranks
# ---------------------------------------------------------------------------


def ball_rank(theta_star, q_draws, theta_l, embedding=None, hard=True, temperature=0.1):
    """Fraction of q draws strictly closer to ``theta_l`` than ``theta_star`` is.

    Single-anchor form of :func:`batch_ranks`.
    """
    theta_star = np.atleast_1d(np.asarray(theta_star, dtype=np.float64))
    draws = np.asarray(q_draws, dtype=np.float64)
    if draws.ndim == 1:
        draws = draws[:, None] if theta_star.size == 1 else draws[None, :]
    theta_l = np.atleast_1d(np.asarray(theta_l, dtype=np.float64))
    if not (theta_star.shape[-1] == draws.shape[-1] == theta_l.shape[-1]):
        raise ShapeError("theta_star, q_draws and theta_l must share the theta dimension")
    if draws.shape[0] < 1:
        raise ContractError("need at least one q draw")
    u = batch_ranks(theta_star[None], draws[None], theta_l[None], embedding, hard=hard, temperature=temperature)
    return float(ad.value_of(u)[0])


def batch_ranks(theta, synthetic, centers, embedding=None, *, hard=True, temperature=0.1, phi_weights=None):
    """Ball-probability ranks for every anchor.

    ``theta`` is ``(N, d)``, ``synthetic`` ``(N, K, d)`` and ``centers`` ``(N, d)``
    (plain or recorded).  With ``hard=False`` each indicator carries the
    straight-through surrogate gradient, so the result is differentiable with
    respect to ``centers`` and ``phi_weights``.
    """
    tv, sv, cv = ad.value_of(theta), ad.value_of(synthetic), ad.value_of(centers)
    if not (tv.shape[-1] == sv.shape[-1] == cv.shape[-1]):
        raise ShapeError("theta dimensions of anchors, draws and centers differ")
    if isinstance(embedding, NetworkParams) and tv.shape[-1] != embedding.in_dim:
        raise ShapeError(f"embedding expects theta dim {embedding.in_dim}, got {tv.shape[-1]}")
    n = sv.shape[0]
    e_theta = embed(embedding, theta, phi_weights)
    e_center = embed(embedding, centers, phi_weights)
    e_syn = embed(embedding, synthetic, phi_weights)
    r_star = norm_last(ad.sub(e_theta, e_center))
    r_syn = norm_last(ad.sub(e_syn, ad.reshape(e_center, (n, 1, -1))))
    if hard:
        ind = (ad.value_of(r_syn) < ad.value_of(r_star)[:, None]).astype(np.float64)
        return ind.mean(axis=1)
    ind = ad.ste_indicator(r_syn, ad.reshape(r_star, (n, 1)), temperature)
    return ad.mean(ind, axis=1)


def model_ranks(batch: SampleBatch, model: ColtModel) -> np.ndarray:
    """Hard test-time ranks of ``batch`` under a trained model."""
    _check_model_batch(batch, model)
    centers = model.localize(batch.x)
    return batch_ranks(batch.theta, batch.synthetic, centers, model.embedding, hard=True)


def _check_model_batch(batch, model):
    loc = model.localization
    if loc.in_dim != batch.x_dim or loc.out_dim != batch.theta_dim:
        raise ShapeError(
            f"model maps {loc.in_dim} -> {loc.out_dim} but batch has x dim {batch.x_dim}, theta dim {batch.theta_dim}"
        )


# ---------------------------------------------------------------------------
# Training and testing
# ---------------------------------------------------------------------------


def init_model(x_dim, theta_dim, variant="id", config: TrainConfig | None = None) -> ColtModel:
    """Untrained networks, seeded from ``config.seed``."""
    config = config or TrainConfig()
    if variant not in VARIANTS:
        raise ConfigurationError(f"variant must be one of {VARIANTS}, got {variant!r}")
    loc_seed, emb_seed = np.random.SeedSequence(config.seed).generate_state(2)
    loc = net_init([x_dim, *config.hidden, theta_dim], "relu", int(loc_seed))
    emb = None
    if variant == "full":
        emb = net_init([theta_dim, *config.hidden, config.embed_dim or theta_dim], "relu", int(emb_seed))
    return ColtModel(loc, emb, variant, config)


def training_loss(batch: SampleBatch, model: ColtModel, tape: Tape, config: TrainConfig):
    """Record ``-S(U, Uniform)`` on ``tape``; returns ``(loss, watched vars)``."""
    w_loc = tape.watch(model.localization.weights)
    w_emb = tape.watch(model.embedding.weights) if model.embedding is not None else None
    centers = net_forward(model.localization, batch.x, weights=w_loc)
    ranks = batch_ranks(
        batch.theta,
        batch.synthetic,
        centers,
        model.embedding,
        hard=False,
        temperature=config.ste_temperature,
        phi_weights=w_emb,
    )
    div = sinkhorn_uniform_divergence(ranks, config.sinkhorn_epsilon, config.sinkhorn_iterations)
    return ad.neg(div), ranks


def colt_train(batch: SampleBatch, config: TrainConfig, variant: str = "full", model: ColtModel | None = None) -> ColtModel:
    """Train the localization (and, for ``full``, embedding) networks.

    Full-batch Adam ascent on the Sinkhorn divergence between the soft ranks
    and the uniform grid, for ``config.epochs`` steps.  Returns the
    final-epoch model; its ``history`` holds the divergence per epoch.
    """
    if not isinstance(config, TrainConfig):
        raise ConfigurationError("config must be a TrainConfig")
    model = model or init_model(batch.x_dim, batch.theta_dim, variant, config)
    _check_model_batch(batch, model)
    loc, emb = model.localization, model.embedding
    opt_loc = AdamState.zeros(loc.weights.size, lr=config.learning_rate)
    opt_emb = AdamState.zeros(emb.weights.size, lr=config.learning_rate) if emb is not None else None
    history = []
    for epoch in range(1, config.epochs + 1):
        tape = Tape()
        current = ColtModel(loc, emb, variant, config)
        loss, _ = training_loss(batch, current, tape, config)
        value = float(ad.value_of(loss))
        if not np.isfinite(value):
            raise TrainingDivergedError(f"loss became non-finite at epoch {epoch}", epoch=epoch)
        grads = ad.backprop(tape, loss)
        try:
            loc, opt_loc = adam_step(opt_loc, loc, grads[0])
            if emb is not None:
                emb, opt_emb = adam_step(opt_emb, emb, grads[1])
        except TrainingDivergedError as exc:
            raise TrainingDivergedError(f"training diverged at epoch {epoch}: {exc}", epoch=epoch, diagnostics=exc.diagnostics) from exc
        history.append(-value)
    return ColtModel(loc, emb, variant, config, tuple(history))


def colt_test(batch: SampleBatch, model: ColtModel) -> TestReport:
    """KS test of the hard ranks of a fresh batch against Uniform(0, 1)."""
    return ks_test(model_ranks(batch, model), model.method)


def acld_distance(report: TestReport) -> float:
    """Plug-in estimate of the averaged conditionally localized distance."""
    return float(np.clip(report.statistic, 0.0, 1.0))
