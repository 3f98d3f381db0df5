"""Seeded power / Type-I sweeps, CSV results and SVG power curves."""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from colt.baselines import C2stConfig, c2st_test, sbc_test, tarp_test
from colt.benchmarks import (
    FAMILIES,
    KINDS,
    PerturbationSpec,
    make_task,
    perturbed_sampler,
    sample_joint,
)
from colt.core import TrainConfig, colt_test, colt_train
from colt.errors import ConfigurationError, TrainingDivergedError
from colt.stats import METHODS

log = logging.getLogger(__name__)

OUTPUT_DIR_ENV = "COLT_OUTPUT_DIR"
CSV_COLUMNS = (
    "method",
    "family",
    "kind",
    "m",
    "s",
    "d",
    "alpha",
    "seed",
    "power",
    "mean_statistic",
    "mean_pvalue",
    "wall_time_seconds",
)

# Sampling and training hyperparameters per perturbation family.
PRESETS = {
    "mean_shift": dict(
        kind="mean_shift", alphas=[0.0, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3],
        colt=dict(epochs=25, learning_rate=1e-5), c2st=dict(epochs=1000, learning_rate=1e-5),
    ),
    "cov_scale": dict(
        kind="cov_scale", alphas=[0.0, 0.2, 0.4, 0.6, 0.8, 1.0, 1.2, 1.4],
        colt=dict(epochs=1000, learning_rate=1e-5), c2st=dict(epochs=1000, learning_rate=1e-5),
    ),
    "anisotropic": dict(
        kind="anisotropic", alphas=[0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0],
        colt=dict(epochs=1000, learning_rate=1e-5), c2st=dict(epochs=1000, learning_rate=1e-5),
    ),
    "t_tail": dict(
        kind="t_tail", alphas=[0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6],
        colt=dict(epochs=1000, learning_rate=1e-5), c2st=dict(epochs=1000, learning_rate=1e-5),
    ),
    "extra_modes": dict(
        kind="extra_modes", alphas=[0.0, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4],
        colt=dict(epochs=1000, learning_rate=5e-5), c2st=dict(epochs=1000, learning_rate=5e-5),
    ),
    "mode_collapse": dict(
        kind="mode_collapse", alphas=[0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6],
        colt=dict(epochs=1000, learning_rate=1e-5), c2st=dict(epochs=1000, learning_rate=1e-5),
    ),
    "blind_prior": dict(
        kind="blind_prior", alphas=[0.0, 1.0],
        colt=dict(epochs=1000, learning_rate=1e-3), c2st=dict(epochs=1000, learning_rate=1e-5),
    ),
    "tree": dict(
        kind="cov_scale", alphas=[0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0],
        n=1000, k=100, task=dict(family="tree", m=1, s=2, d=2),
        colt=dict(epochs=5000, learning_rate=1e-5), c2st=dict(epochs=5000, learning_rate=1e-5),
    ),
}
FAST_PROFILE = dict(n=100, k=100, eval_batches=50)


@dataclass(frozen=True)
class TaskSpec:
    family: str = "gaussian"
    m: int = 3
    s: int = 3
    d: int | None = None
    seed: int = 0

    def build(self):
        if self.family == "tree":
            return make_task("tree", seed=self.seed)
        return make_task(self.family, self.m, self.s, self.d, self.seed)


@dataclass(frozen=True)
class ExperimentConfig:
    task: TaskSpec = field(default_factory=TaskSpec)
    kind: str = "none"
    alphas: tuple = (0.0,)
    methods: tuple = ("colt_full", "colt_id", "sbc", "tarp", "c2st")
    n: int = 100
    k: int = 500
    eval_batches: int = 200
    seeds: tuple = (0, 1, 2)
    root_seed: int = 0
    colt: TrainConfig = field(default_factory=TrainConfig)
    c2st: C2stConfig = field(default_factory=C2stConfig)
    epsilon_t: float = 1e-3
    output_dir: str = "results"
    workers: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "alphas", tuple(float(a) for a in self.alphas))
        object.__setattr__(self, "methods", tuple(self.methods))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if not self.alphas:
            raise ConfigurationError("alpha list must be non-empty")
        if any(a < 0 for a in self.alphas) or list(self.alphas) != sorted(self.alphas):
            raise ConfigurationError("alphas must be non-negative and sorted ascending")
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown or not self.methods:
            raise ConfigurationError(f"unknown methods {unknown}; choose from {METHODS}")
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown perturbation kind {self.kind!r}")
        if self.task.family not in FAMILIES:
            raise ConfigurationError(f"unknown task family {self.task.family!r}")
        if self.eval_batches < 1 or self.n < 1 or self.k < 1:
            raise ConfigurationError("n, k and eval_batches must be >= 1")
        if not self.seeds:
            raise ConfigurationError("need at least one seed")
        # surfaces kind/family incompatibilities before any compute
        perturbed_sampler(self.task.build(), PerturbationSpec(self.kind, self.alphas[-1], self.epsilon_t))

    @classmethod
    def from_dict(cls, doc: dict, fast: bool = False) -> ExperimentConfig:
        doc = dict(doc)
        preset_name = doc.pop("preset", None)
        merged: dict = {}
        if preset_name is not None:
            if preset_name not in PRESETS:
                raise ConfigurationError(f"unknown preset {preset_name!r}; choose from {sorted(PRESETS)}")
            merged = json.loads(json.dumps(PRESETS[preset_name]))
        for key, value in doc.items():
            if isinstance(value, dict) and isinstance(merged.get(key), dict):
                merged[key] = {**merged[key], **value}
            else:
                merged[key] = value
        if "perturbation" in merged:
            merged["kind"] = merged.pop("perturbation")
        if fast:
            merged.update(FAST_PROFILE)
        known = {f.name for f in fields(cls)}
        extra = set(merged) - known
        if extra:
            raise ConfigurationError(f"unknown config keys {sorted(extra)}")
        try:
            if "task" in merged:
                merged["task"] = TaskSpec(**merged["task"])
            if "colt" in merged:
                colt = dict(merged["colt"])
                if "hidden" in colt:
                    colt["hidden"] = tuple(colt["hidden"])
                merged["colt"] = TrainConfig(**colt)
            if "c2st" in merged:
                c2 = dict(merged["c2st"])
                if "hidden" in c2:
                    c2["hidden"] = tuple(c2["hidden"])
                merged["c2st"] = C2stConfig(**c2)
        except TypeError as exc:
            raise ConfigurationError(str(exc)) from exc
        return cls(**merged)

    @classmethod
    def load(cls, path, fast: bool = False) -> ExperimentConfig:
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(doc, fast=fast)

    def resolved_output_dir(self) -> Path:
        return Path(os.environ.get(OUTPUT_DIR_ENV) or self.output_dir)


@dataclass(frozen=True)
class ResultRow:
    method: str
    family: str
    kind: str
    m: int
    s: int
    d: int
    alpha: float
    seed: int
    power: float
    mean_statistic: float
    mean_pvalue: float
    wall_time_seconds: float

    @property
    def failed(self):
        return math.isnan(self.power)


# ---------------------------------------------------------------------------
# Random streams
# ---------------------------------------------------------------------------


def _alpha_key(alpha):
    return int(round(alpha * 1_000_000))


def data_seed(config: ExperimentConfig, alpha, seed, batch=None):
    """Entropy for a data batch; shared by all methods in the same cell."""
    base = [config.root_seed, _alpha_key(alpha), seed]
    return base + [0] if batch is None else base + [1, batch]


def method_seed(config: ExperimentConfig, method, alpha, seed, batch=0) -> int:
    ss = np.random.SeedSequence([config.root_seed, METHODS.index(method) + 1, _alpha_key(alpha), seed, batch])
    return int(ss.generate_state(1)[0])


# ---------------------------------------------------------------------------
# Sweep
# ---------------------------------------------------------------------------


def _run_cell(config: ExperimentConfig, method: str, alpha: float, seed: int) -> ResultRow:
    task = config.task.build()
    spec = PerturbationSpec(config.kind, alpha, config.epsilon_t)
    q = perturbed_sampler(task, spec)
    start = time.perf_counter()

    def row(power, stat, pval):
        return ResultRow(
            method, task.family, config.kind, task.m, task.s, task.d, alpha, seed,
            power, stat, pval, time.perf_counter() - start,
        )

    try:
        if method in ("colt_full", "colt_id"):
            train_batch = sample_joint(task, q, config.n, config.k, data_seed(config, alpha, seed))
            cfg = replace(config.colt, seed=method_seed(config, method, alpha, seed))
            model = colt_train(train_batch, cfg, "full" if method == "colt_full" else "id")
            tester = lambda batch, b: colt_test(batch, model)
        elif method == "sbc":
            tester = lambda batch, b: sbc_test(batch)
        elif method == "tarp":
            tester = lambda batch, b: tarp_test(batch, method_seed(config, method, alpha, seed, b))
        else:
            tester = lambda batch, b: c2st_test(
                batch, replace(config.c2st, seed=method_seed(config, method, alpha, seed, b))
            )
        reports = []
        for b in range(config.eval_batches):
            batch = sample_joint(task, q, config.n, config.k, data_seed(config, alpha, seed, b))
            reports.append(tester(batch, b))
    except TrainingDivergedError as exc:
        log.warning("cell (%s, alpha=%g, seed=%d) failed: %s", method, alpha, seed, exc)
        return row(float("nan"), float("nan"), float("nan"))
    rejections = sum(r.reject_at_05 for r in reports)
    return row(
        rejections / config.eval_batches,
        float(np.mean([r.statistic for r in reports])),
        float(np.mean([r.p_value for r in reports])),
    )


def _cell_args(config):
    return [(config, m, a, s) for m in config.methods for a in config.alphas for s in config.seeds]


def _star_cell(args):
    return _run_cell(*args)


def run_experiment(config: ExperimentConfig) -> list[ResultRow]:
    """Every (method, alpha, seed) cell: train once, test on fresh batches.

    Cells are independent; with more than one worker they run in a process
    pool.  Rows come back sorted by (method, alpha, seed).
    """
    cells = _cell_args(config)
    workers = config.workers or os.cpu_count() or 1
    if workers > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_star_cell, cells))
    else:
        rows = []
        for i, cell in enumerate(cells, 1):
            rows.append(_run_cell(*cell))
            log.info("cell %d/%d %s alpha=%g seed=%d power=%.3f", i, len(cells), cell[1], cell[2], cell[3], rows[-1].power)
    return sort_rows(rows)


def sort_rows(rows):
    return sorted(rows, key=lambda r: (r.method, r.alpha, r.seed))


# ---------------------------------------------------------------------------
# Output
# ---------------------------------------------------------------------------


def _fmt(value):
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return str(int(value))
    if isinstance(value, float):
        return format(value, ".6g")
    return str(value)


def emit_csv(rows, path) -> Path:
    """Header plus one line per row, 6 significant digits, sorted rows."""
    rows = list(rows)
    if not rows:
        raise ConfigurationError("no result rows to write")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for r in sort_rows(rows):
            writer.writerow([_fmt(getattr(r, c)) for c in CSV_COLUMNS])
    return path


def read_csv(path) -> list[ResultRow]:
    casts = dict(m=int, s=int, d=int, seed=int, alpha=float, power=float, mean_statistic=float, mean_pvalue=float, wall_time_seconds=float)
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
            raise ConfigurationError(f"{path} does not have the result columns {CSV_COLUMNS}")
        return [ResultRow(**{k: casts.get(k, str)(v) for k, v in rec.items()}) for rec in reader]


def aggregate(rows):
    """``{method: [(alpha, mean power, stderr), ...]}`` over seeds, failed cells skipped."""
    by_cell: dict = {}
    for r in rows:
        if not r.failed:
            by_cell.setdefault(r.method, {}).setdefault(r.alpha, []).append(r.power)
    out = {}
    for method, cells in sorted(by_cell.items()):
        pts = []
        for alpha in sorted(cells):
            p = np.asarray(cells[alpha])
            se = float(p.std(ddof=1) / np.sqrt(p.size)) if p.size > 1 else 0.0
            pts.append((alpha, float(p.mean()), se))
        out[method] = pts
    return out


PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def emit_power_svg(rows, path, title=None, width=480, height=320) -> Path:
    """Power-vs-alpha curves (mean over seeds, stderr bars) with a 0.05 line."""
    curves = aggregate(rows)
    alphas = sorted({r.alpha for r in rows})
    if not curves:
        raise ConfigurationError("no successful rows to plot")
    if len(alphas) < 2:
        raise ConfigurationError("need at least two alpha values for a power curve; use the CSV instead")
    a0, a1 = alphas[0], alphas[-1]
    left, right, top, bottom = 56, 130, 30, 44
    pw, ph = width - left - right, height - top - bottom

    def sx(a):
        return left + (a - a0) / (a1 - a0) * pw

    def sy(p):
        return top + (1.0 - p) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    if title:
        out.append(f'<text x="{left + pw / 2:.1f}" y="18" text-anchor="middle" font-size="13">{escape(title)}</text>')
    for i in range(6):
        p = i / 5
        out.append(f'<text x="{left - 6}" y="{sy(p) + 4:.1f}" text-anchor="end" font-size="10">{p:.1f}</text>')
    for a in alphas:
        out.append(f'<text x="{sx(a):.1f}" y="{top + ph + 14}" text-anchor="middle" font-size="10">{a:g}</text>')
    out.append(f'<text x="{left + pw / 2:.1f}" y="{height - 8}" text-anchor="middle" font-size="12">alpha</text>')
    out.append(
        f'<text x="14" y="{top + ph / 2:.1f}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 14 {top + ph / 2:.1f})">power</text>'
    )
    out.append(
        f'<line class="reference" x1="{left}" y1="{sy(0.05):.2f}" x2="{left + pw}" y2="{sy(0.05):.2f}" '
        'stroke="gray" stroke-dasharray="4 3"/>'
    )
    for i, (method, pts) in enumerate(curves.items()):
        color = PALETTE[i % len(PALETTE)]
        coords = " ".join(f"{sx(a):.2f},{sy(p):.2f}" for a, p, _ in pts)
        out.append(f'<polyline class="curve" points="{coords}" fill="none" stroke="{color}" stroke-width="2"><title>{escape(method)}</title></polyline>')
        for a, p, se in pts:
            if se > 0:
                out.append(
                    f'<line class="errbar" x1="{sx(a):.2f}" y1="{sy(min(1, p + se)):.2f}" x2="{sx(a):.2f}" '
                    f'y2="{sy(max(0, p - se)):.2f}" stroke="{color}"/>'
                )
        ly = top + 14 + 16 * i
        out.append(f'<rect x="{left + pw + 10}" y="{ly - 8}" width="12" height="3" fill="{color}"/>')
        out.append(f'<text x="{left + pw + 26}" y="{ly - 3}" font-size="11">{escape(method)}</text>')
    out.append("</svg>")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(out) + "\n")
    return path


def config_to_dict(config: ExperimentConfig) -> dict:
    doc = asdict(config)
    doc["alphas"] = list(config.alphas)
    return doc
