"""Experiment orchestration: train a grid of models, attack each one, and
aggregate the measurements into tables and plots.

A run walks the model grid (family x Bayesian flag), trains each variant on
the configured dataset, measures test accuracy, runs both decision-based
attacks on a fixed panel of correctly classified test inputs, runs the
membership-inference pipeline, and collects one result row per model.
"""

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .attacks import BoundaryConfig, HsjConfig, boundary_attack, hsj_attack
from .data import Dataset, load_cifar_binary, load_idx, split, synth_blobs
from .mi import (
    RocCurve,
    build_attack_dataset,
    evaluate_mi,
    make_shadow_split,
    train_attack_classifier,
    train_shadow,
)
from .models import FAMILIES, ModelSpec, build, predict_probs_batch
from .nn import TrainConfig, evaluate, train
from .oracle import Oracle

DATASETS = ("mnist", "cifar10", "synth")

CSV_HEADER = "dataset,model,bayesian,test_acc,hsj_pct,boundary_pct,mi_acc,mi_auc,q_hsj,q_boundary"

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f")


class GridCellError(RuntimeError):
    """A grid cell failed; the message carries the (dataset, model) context."""


def round_half_up(value, digits):
    """Round to `digits` decimals with ties going up, as printed tables do.

    The value is first snapped to 9 decimals so that a float sitting a hair
    below a tie point (e.g. 72.005 stored as 72.00499...) still counts as
    the tie a reader would see.
    """
    q = Decimal(1).scaleb(-int(digits))
    snapped = repr(round(float(value), 9))
    return float(Decimal(snapped).quantize(q, rounding=ROUND_HALF_UP))


@dataclass
class ResultRow:
    """One model's measurements. Percent fields are on a 0-100 scale."""

    dataset: str
    model: str
    bayesian: bool
    test_accuracy: float
    hsj_efficacy: float
    boundary_efficacy: float
    mi_accuracy: float
    mi_auc: float
    queries_mean_hsj: float
    queries_mean_boundary: float

    def __post_init__(self):
        if not self.dataset or not self.model:
            raise ValueError("dataset and model must be non-empty")
        self.bayesian = bool(self.bayesian)
        for name in ("test_accuracy", "hsj_efficacy", "boundary_efficacy", "mi_accuracy"):
            v = float(getattr(self, name))
            setattr(self, name, v)
            if not 0.0 <= v <= 100.0:
                raise ValueError(f"{name} must be a percent in [0, 100], got {v}")
        self.mi_auc = float(self.mi_auc)
        if not 0.0 <= self.mi_auc <= 1.0:
            raise ValueError(f"mi_auc must be in [0, 1], got {self.mi_auc}")
        for name in ("queries_mean_hsj", "queries_mean_boundary"):
            v = float(getattr(self, name))
            setattr(self, name, v)
            if v < 0:
                raise ValueError(f"{name} must be >= 0, got {v}")


@dataclass
class ExperimentConfig:
    """Full description of one experiment run."""

    dataset: str = "synth"
    data_dir: str = None
    synth_n: int = 600
    synth_classes: int = 4
    synth_side: int = 16
    synth_noise: float = 0.1
    families: tuple = ("lenet5",)
    bayesian_flags: tuple = (False, True)
    train: TrainConfig = field(default_factory=TrainConfig)
    boundary: BoundaryConfig = field(default_factory=BoundaryConfig)
    hsj: HsjConfig = field(default_factory=HsjConfig)
    samples_per_attack: int = 100
    mi_frac: float = 0.5
    mi_k: int = 3
    mi_T: int = 30
    mc_samples: int = 30
    dropout_rate: float = 0.5
    seed: int = 0
    out_dir: str = "out"
    workers: int = 1

    def __post_init__(self):
        if self.dataset not in DATASETS:
            raise ValueError(f"unknown dataset {self.dataset!r}, expected one of {DATASETS}")
        self.families = tuple(self.families)
        self.bayesian_flags = tuple(bool(b) for b in self.bayesian_flags)
        if not self.families or not self.bayesian_flags:
            raise ValueError("model grid is empty: need at least one family and one Bayesian flag")
        for fam in self.families:
            if fam not in FAMILIES:
                raise ValueError(f"unknown model family {fam!r}, expected one of {FAMILIES}")
        if self.samples_per_attack < 1:
            raise ValueError("samples_per_attack must be positive")
        if self.workers < 1:
            raise ValueError("workers must be positive")
        if not 0.0 < self.mi_frac < 1.0:
            raise ValueError("mi_frac must be in (0, 1)")
        if self.mi_k < 1 or self.mi_T < 1 or self.mc_samples < 1:
            raise ValueError("mi_k, mi_T and mc_samples must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")
        if self.synth_n < 1 or self.synth_classes < 2 or self.synth_side < 4:
            raise ValueError("synth dataset parameters out of range")


def load_dataset(cfg: ExperimentConfig) -> Dataset:
    """Materialize the configured dataset, from disk or synthetically."""
    if cfg.dataset == "synth":
        return synth_blobs(cfg.synth_n, cfg.synth_classes, cfg.synth_side,
                           cfg.synth_noise, seed=cfg.seed)
    root = Path(cfg.data_dir or os.environ.get("BSB_DATA_DIR", "data"))
    if cfg.dataset == "mnist":
        images = root / "train-images-idx3-ubyte"
        labels = root / "train-labels-idx1-ubyte"
        if not images.exists() or not labels.exists():
            raise FileNotFoundError(
                f"mnist IDX files not found under {root}; expected "
                f"train-images-idx3-ubyte and train-labels-idx1-ubyte "
                f"(set BSB_DATA_DIR or data_dir)")
        return load_idx(images, labels)
    batches = sorted(root.glob("data_batch_*.bin"))
    if not batches:
        raise FileNotFoundError(
            f"cifar10 batch files (data_batch_*.bin) not found under {root} "
            f"(set BSB_DATA_DIR or data_dir)")
    return load_cifar_binary(batches)


def attack_efficacy(results) -> float:
    """Percent of attack results that count as successes."""
    results = list(results)
    if not results:
        raise ValueError("no attack results to aggregate")
    return 100.0 * sum(1 for r in results if r.success) / len(results)


def _grouped(rows, key, value):
    rows = list(rows)
    if not rows:
        raise ValueError("no result rows to aggregate")
    groups = {}
    for r in rows:
        groups.setdefault(key(r), []).append(value(r))
    return groups


def aggregate_mi_by_variant(rows):
    """Mean membership-inference accuracy keyed by (dataset, bayesian).

    Means are taken on the raw values; only the returned figures carry the
    2-decimal half-up display rounding.
    """
    groups = _grouped(rows, lambda r: (r.dataset, r.bayesian), lambda r: r.mi_accuracy)
    return {k: round_half_up(float(np.mean(v)), 2) for k, v in groups.items()}


def aggregate_adv_by_dataset(rows):
    """Mean attack efficacy per dataset, one figure per attack."""
    groups = _grouped(rows, lambda r: r.dataset,
                      lambda r: (r.hsj_efficacy, r.boundary_efficacy))
    out = {}
    for ds, pairs in groups.items():
        arr = np.asarray(pairs, dtype=np.float64)
        out[ds] = {
            "hsj": round_half_up(float(arr[:, 0].mean()), 2),
            "boundary": round_half_up(float(arr[:, 1].mean()), 2),
        }
    return out


def _fmt(value, digits):
    return f"{round_half_up(value, digits):.{digits}f}"


def emit_csv(rows, path):
    """Write result rows as CSV, sorted by (dataset, model, bayesian).

    Percent and query columns carry 2 decimals, the AUC column 4; the file
    ends with a newline, and an empty row list produces a header-only file.
    """
    rows = list(rows)
    for r in rows:
        if not isinstance(r, ResultRow):
            raise ValueError(f"emit_csv expects ResultRow values, got {type(r).__name__}")
    ordered = sorted(rows, key=lambda r: (r.dataset, r.model, r.bayesian))
    lines = [CSV_HEADER]
    for r in ordered:
        lines.append(",".join([
            r.dataset,
            r.model,
            "true" if r.bayesian else "false",
            _fmt(r.test_accuracy, 2),
            _fmt(r.hsj_efficacy, 2),
            _fmt(r.boundary_efficacy, 2),
            _fmt(r.mi_accuracy, 2),
            _fmt(r.mi_auc, 4),
            _fmt(r.queries_mean_hsj, 2),
            _fmt(r.queries_mean_boundary, 2),
        ]))
    Path(path).write_text("\n".join(lines) + "\n")


def parse_csv(path):
    """Read back a results CSV written by emit_csv."""
    text = Path(path).read_text()
    lines = [ln for ln in text.split("\n") if ln]
    if not lines or lines[0] != CSV_HEADER:
        raise ValueError(f"unexpected CSV header in {path}: "
                         f"got {lines[0] if lines else '<empty>'!r}")
    rows = []
    for ln in lines[1:]:
        fields = ln.split(",")
        if len(fields) != 10:
            raise ValueError(f"malformed CSV row (expected 10 fields): {ln!r}")
        if fields[2] not in ("true", "false"):
            raise ValueError(f"bayesian column must be true/false, got {fields[2]!r}")
        rows.append(ResultRow(
            dataset=fields[0], model=fields[1], bayesian=fields[2] == "true",
            test_accuracy=float(fields[3]), hsj_efficacy=float(fields[4]),
            boundary_efficacy=float(fields[5]), mi_accuracy=float(fields[6]),
            mi_auc=float(fields[7]), queries_mean_hsj=float(fields[8]),
            queries_mean_boundary=float(fields[9]),
        ))
    return rows


def emit_roc_svg(curves, path):
    """Plot named ROC curves into a single SVG file.

    The plot is a unit square with FPR/TPR axes, a dashed chance diagonal,
    one polyline per curve, and a legend carrying each curve's AUC. All
    curves are validated before anything is written.
    """
    if not curves:
        raise ValueError("no curves to plot")
    for name, curve in curves.items():
        if not isinstance(curve, RocCurve):
            raise ValueError(f"curve {name!r} is not a RocCurve")
    side = 420.0
    ml, mt = 70.0, 24.0
    width = ml + side + 250.0
    height = mt + side + 64.0

    def sx(f):
        return ml + f * side

    def sy(t):
        return mt + (1.0 - t) * side

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0f}" '
        f'height="{height:.0f}" font-family="sans-serif" font-size="13">',
        f'<rect x="{ml}" y="{mt}" width="{side}" height="{side}" fill="none" stroke="#333"/>',
    ]
    for v in (0.0, 0.25, 0.5, 0.75, 1.0):
        parts.append(f'<text x="{sx(v):.1f}" y="{mt + side + 18:.1f}" '
                     f'text-anchor="middle">{v:g}</text>')
        parts.append(f'<text x="{ml - 8:.1f}" y="{sy(v) + 4:.1f}" '
                     f'text-anchor="end">{v:g}</text>')
        if 0.0 < v < 1.0:
            parts.append(f'<line x1="{sx(v):.1f}" y1="{mt}" x2="{sx(v):.1f}" '
                         f'y2="{mt + side}" stroke="#eee"/>')
            parts.append(f'<line x1="{ml}" y1="{sy(v):.1f}" x2="{ml + side}" '
                         f'y2="{sy(v):.1f}" stroke="#eee"/>')
    parts.append(f'<text x="{ml + side / 2:.1f}" y="{height - 14:.1f}" '
                 f'text-anchor="middle">False positive rate</text>')
    parts.append(f'<text x="18" y="{mt + side / 2:.1f}" text-anchor="middle" '
                 f'transform="rotate(-90 18 {mt + side / 2:.1f})">True positive rate</text>')
    parts.append(f'<polyline points="{sx(0):.1f},{sy(0):.1f} {sx(1):.1f},{sy(1):.1f}" '
                 f'fill="none" stroke="#999" stroke-dasharray="5,4"/>')
    for i, (name, curve) in enumerate(curves.items()):
        color = _PALETTE[i % len(_PALETTE)]
        pts = " ".join(f"{sx(f):.2f},{sy(t):.2f}" for f, t in curve.points)
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.8"/>')
        ly = mt + 14 + 22 * i
        lx = ml + side + 16
        parts.append(f'<line x1="{lx:.1f}" y1="{ly:.1f}" x2="{lx + 24:.1f}" '
                     f'y2="{ly:.1f}" stroke="{color}" stroke-width="3"/>')
        parts.append(f'<text x="{lx + 32:.1f}" y="{ly + 4:.1f}">'
                     f'{escape(str(name))} (AUC {curve.auc:.4f})</text>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")


def _cell_seed(seed, family, bayes):
    """Deterministic per-cell seed; stays clear of Python's salted hash()."""
    h = 0
    for ch in f"{family}:{int(bayes)}":
        h = (h * 131 + ord(ch)) % (1 << 31)
    return (int(seed) * 2654435761 + h) % (1 << 31)


def _sample_seed(seed, index):
    return (int(seed) ^ int(index)) & 0x7FFFFFFF


def _make_oracle(net, mc_samples, budget, rng_seed):
    if net.has_dropout():
        return Oracle.for_network(net, mc_samples=mc_samples,
                                  rng=np.random.default_rng(rng_seed), budget=budget)
    return Oracle.for_network(net, mc_samples=1, budget=budget)


def _select_attack_samples(net, test_set, n, seed, mc_samples):
    """First n correctly classified test inputs, in seeded shuffle order."""
    order = np.random.default_rng(seed).permutation(len(test_set))
    rng = np.random.default_rng(seed + 1) if net.has_dropout() else None
    t = mc_samples if net.has_dropout() else 1
    probs = predict_probs_batch(net, test_set.images[order], T=t, rng=rng)
    good = order[probs.argmax(axis=1) == test_set.labels[order]]
    if len(good) == 0:
        raise RuntimeError("no correctly classified test inputs to attack")
    return good[:n]


def _run_attacks(net, images, labels, kind, cfg):
    """Attack each input independently; results come back in input order."""
    base = cfg.boundary if kind == "boundary" else cfg.hsj
    run = boundary_attack if kind == "boundary" else hsj_attack

    def work(i):
        s = _sample_seed(cfg.seed, i)
        oracle = _make_oracle(net, cfg.mc_samples, base.max_queries, s + 0x9E3779B9)
        acfg = replace(base, seed=s)
        return i, run(oracle, images[i], acfg, true_label=int(labels[i]))

    indices = range(len(images))
    if cfg.workers == 1:
        done = [work(i) for i in indices]
    else:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            done = list(pool.map(work, indices))
    done.sort(key=lambda pair: pair[0])
    return [r for _, r in done]


def run_attack_panel(cfg, net, test_set, kind):
    """Select the attack panel for a trained model and run one attack kind."""
    picked = _select_attack_samples(net, test_set, cfg.samples_per_attack,
                                    cfg.seed, cfg.mc_samples)
    return _run_attacks(net, test_set.images[picked], test_set.labels[picked], kind, cfg)


def train_target(cfg, full, family, bayes):
    """Train one grid model on its slice of the data.

    Returns (net, spec, fit_train, test_set, shadow_pool, cell_seed,
    test_acc). fit_train holds the inputs actually used for gradient
    updates, which is what membership inference treats as members; the
    shadow pool is disjoint from everything the target saw.
    """
    cell_seed = _cell_seed(cfg.seed, family, bayes)
    target_train, test_set, shadow_pool = split(full, [0.4, 0.2, 0.4], seed=cfg.seed)
    fit_train, fit_val = split(target_train, [0.85, 0.15], seed=cell_seed)

    spec = ModelSpec(family, bayesian=bayes, dropout_rate=cfg.dropout_rate,
                     mc_samples=cfg.mc_samples, input_shape=full.input_shape,
                     num_classes=full.class_count)
    net = build(spec, seed=cell_seed)
    net, _ = train(net, fit_train, fit_val, replace(cfg.train, seed=cell_seed))
    _, test_acc = evaluate(net, test_set)
    return net, spec, fit_train, test_set, shadow_pool, cell_seed, test_acc


def run_mi_pipeline(cfg, net, spec, fit_train, test_set, shadow_pool, cell_seed):
    """Shadow-model membership inference against one trained target.

    Returns (accuracy in [0, 1], RocCurve)."""
    sh_split = make_shadow_split(shadow_pool, cfg.mi_frac, seed=cell_seed + 1)
    shadow = train_shadow(replace(spec), sh_split, replace(cfg.train, seed=cell_seed + 2))
    attack_ds = build_attack_dataset(shadow, sh_split, k=cfg.mi_k, T=cfg.mi_T,
                                     seed=cell_seed + 3)
    attacker = train_attack_classifier(attack_ds, replace(cfg.train, seed=cell_seed + 4))
    target_oracle = _make_oracle(net, cfg.mi_T, None, cell_seed + 5)
    return evaluate_mi(attacker, target_oracle, fit_train, test_set,
                       k=cfg.mi_k, T=cfg.mi_T)


def _run_cell(cfg, full, family, bayes):
    net, spec, fit_train, test_set, shadow_pool, cell_seed, test_acc = train_target(
        cfg, full, family, bayes)

    picked = _select_attack_samples(net, test_set, cfg.samples_per_attack,
                                    cfg.seed, cfg.mc_samples)
    images = test_set.images[picked]
    labels = test_set.labels[picked]
    hsj_results = _run_attacks(net, images, labels, "hsj", cfg)
    boundary_results = _run_attacks(net, images, labels, "boundary", cfg)

    mi_acc, roc = run_mi_pipeline(cfg, net, spec, fit_train, test_set,
                                  shadow_pool, cell_seed)

    row = ResultRow(
        dataset=cfg.dataset, model=family, bayesian=bayes,
        test_accuracy=100.0 * test_acc,
        hsj_efficacy=attack_efficacy(hsj_results),
        boundary_efficacy=attack_efficacy(boundary_results),
        mi_accuracy=100.0 * mi_acc,
        mi_auc=roc.auc,
        queries_mean_hsj=float(np.mean([r.queries_used for r in hsj_results])),
        queries_mean_boundary=float(np.mean([r.queries_used for r in boundary_results])),
    )
    return row, roc


def cell_name(dataset, family, bayes):
    return f"{dataset}-{family}" + ("-bayes" if bayes else "")


def run_experiment(cfg: ExperimentConfig):
    """Run the full grid; returns (result rows, {model name: RocCurve})."""
    if not cfg.families or not cfg.bayesian_flags:
        raise ValueError("model grid is empty: need at least one family and one Bayesian flag")
    full = load_dataset(cfg)
    rows, curves = [], {}
    for family in cfg.families:
        for bayes in cfg.bayesian_flags:
            name = cell_name(cfg.dataset, family, bayes)
            try:
                row, roc = _run_cell(cfg, full, family, bayes)
            except Exception as exc:
                raise GridCellError(f"grid cell {name}: {exc}") from exc
            rows.append(row)
            curves[name] = roc
    return rows, curves
