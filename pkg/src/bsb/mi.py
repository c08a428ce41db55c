"""Membership inference with a single shadow model.

The attacker never sees target internals: a disjoint shadow split stands
in for the unknown training distribution, and the binary attack
classifier reads only sorted top-k posterior vectors. ROC/AUC reporting
runs on raw scores so threshold choice stays auditable.
"""

import math
from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .models import ModelSpec, build, predict_probs_batch
from .nn import Dense, Network, ReLU, TrainConfig, softmax, train
from .oracle import Oracle


@dataclass
class ShadowSplit:
    """Disjoint shadow-model training set and held-out 'out' set."""

    shadow_train: Dataset
    shadow_out: Dataset


def make_shadow_split(pool: Dataset, frac: float, seed) -> ShadowSplit:
    """Seeded partition; shadow_train receives ceil(frac * |pool|) samples."""
    if not 0.0 < frac < 1.0:
        raise ValueError("frac must lie strictly between 0 and 1")
    n = len(pool)
    if n < 2:
        raise ValueError("pool needs at least 2 samples")
    n_in = math.ceil(frac * n)
    if n_in >= n:
        raise ValueError(f"frac {frac} leaves the shadow_out side empty")
    perm = np.random.default_rng(seed).permutation(n)
    return ShadowSplit(pool.subset(perm[:n_in]), pool.subset(perm[n_in:]))


def train_shadow(spec: ModelSpec, split: ShadowSplit, cfg: TrainConfig) -> Network:
    """Train a shadow of the target's family, early-stopped on shadow_out
    (the classifier never trains on that side)."""
    net = build(spec, seed=cfg.seed)
    net, _ = train(net, split.shadow_train, split.shadow_out, cfg)
    return net


def featurize_posteriors(probs, k: int):
    """Sorted-descending top-k posterior entries, zero-padded past the
    class count; invariant under any permutation of the posterior."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2:
        raise ValueError("probs must be [n, classes]")
    if k < 1:
        raise ValueError("k must be positive")
    sorted_desc = -np.sort(-probs, axis=1)
    if k <= probs.shape[1]:
        return sorted_desc[:, :k].copy()
    out = np.zeros((len(probs), k))
    out[:, : probs.shape[1]] = sorted_desc
    return out


@dataclass
class AttackDataset:
    """Sorted top-k posterior features with binary membership labels.

    The builder balances label counts by down-sampling the larger side;
    the type itself checks shape, range, ordering, and label validity.
    """

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or len(self.features) != len(self.labels):
            raise ValueError("features must be [n, k] aligned with labels")
        if len(self.labels) == 0:
            raise ValueError("attack dataset is empty")
        if self.features.min() < 0.0 or self.features.max() > 1.0:
            raise ValueError("features must lie in [0, 1]")
        if np.any(np.diff(self.features, axis=1) > 1e-12):
            raise ValueError("feature rows must be sorted non-increasing")
        if not np.isin(self.labels, (0, 1)).all():
            raise ValueError("labels must be binary membership indicators")

    def __len__(self):
        return len(self.labels)


def build_attack_dataset(shadow: Network, split: ShadowSplit, k: int, T: int,
                         seed=0) -> AttackDataset:
    """Label shadow_train posteriors 1 and shadow_out posteriors 0, then
    balance by truncating the larger side; dropout shadows answer with
    T-sample MC-averaged posteriors."""
    if T < 1:
        raise ValueError("T must be >= 1")
    rng = np.random.default_rng(seed)
    t_eff = T if shadow.has_dropout() else 1
    in_probs = predict_probs_batch(shadow, split.shadow_train.images, T=t_eff, rng=rng)
    out_probs = predict_probs_batch(shadow, split.shadow_out.images, T=t_eff, rng=rng)
    in_f = featurize_posteriors(in_probs, k)
    out_f = featurize_posteriors(out_probs, k)
    m = min(len(in_f), len(out_f))
    features = np.concatenate([in_f[:m], out_f[:m]])
    labels = np.concatenate([np.ones(m, dtype=np.int64), np.zeros(m, dtype=np.int64)])
    return AttackDataset(features, labels)


def train_attack_classifier(ds: AttackDataset, cfg: TrainConfig) -> Network:
    """Dense k -> 64 -> 2 attacker, early-stopped on a held-out fifth."""
    if len(np.unique(ds.labels)) < 2:
        raise ValueError("attack dataset must contain both classes")
    n = len(ds)
    if n < 2:
        raise ValueError("attack dataset too small to hold out validation data")
    k = ds.features.shape[1]
    rng = np.random.default_rng(cfg.seed)
    net = Network([Dense(k, 64, rng=rng), ReLU(), Dense(64, 2, rng=rng)], (k,), 2)
    perm = rng.permutation(n)
    n_val = max(1, n // 5)
    val_idx, train_idx = perm[:n_val], perm[n_val:]
    net, _ = train(
        net,
        (ds.features[train_idx], ds.labels[train_idx]),
        (ds.features[val_idx], ds.labels[val_idx]),
        cfg,
    )
    return net


def attack_scores(attacker: Network, features):
    """Member-class probability for each feature row."""
    feats = np.asarray(features, dtype=np.float64)
    return softmax(attacker.forward(feats))[:, 1]


@dataclass
class RocCurve:
    """(FPR, TPR) sweep from (0,0) to (1,1) with its trapezoidal area."""

    points: list
    auc: float

    def __post_init__(self):
        pts = [(float(f), float(t)) for f, t in self.points]
        if len(pts) < 2:
            raise ValueError("a ROC curve needs at least two points")
        coords = [v for p in pts for v in p]
        if any(not 0.0 <= v <= 1.0 for v in coords):
            raise ValueError("ROC coordinates must lie in [0, 1]")
        fprs = [p[0] for p in pts]
        if any(b < a for a, b in zip(fprs, fprs[1:])):
            raise ValueError("ROC points must be sorted by false positive rate")
        if pts[0] != (0.0, 0.0) or pts[-1] != (1.0, 1.0):
            raise ValueError("ROC must start at (0,0) and end at (1,1)")
        if not 0.0 <= self.auc <= 1.0:
            raise ValueError("auc must lie in [0, 1]")
        self.points = pts

    def to_csv(self) -> str:
        lines = ["fpr,tpr"]
        lines.extend(f"{f!r},{t!r}" for f, t in self.points)
        return "\n".join(lines) + "\n"


def roc_curve(member_scores, non_member_scores) -> RocCurve:
    """Empirical ROC over all distinct score thresholds, highest first."""
    ms = np.asarray(member_scores, dtype=np.float64).ravel()
    ns = np.asarray(non_member_scores, dtype=np.float64).ravel()
    if ms.size == 0 or ns.size == 0:
        raise ValueError("both score sets must be non-empty")
    thresholds = np.unique(np.concatenate([ms, ns]))[::-1]
    tprs = (ms[None, :] >= thresholds[:, None]).mean(axis=1)
    fprs = (ns[None, :] >= thresholds[:, None]).mean(axis=1)
    points = [(0.0, 0.0)] + list(zip(fprs.tolist(), tprs.tolist()))
    xs = np.array([p[0] for p in points])
    ys = np.array([p[1] for p in points])
    auc = min(max(float(np.trapezoid(ys, xs)), 0.0), 1.0)
    return RocCurve(points, auc)


def auc_pairwise(member_scores, non_member_scores) -> float:
    """P(member score > non-member score) + half the tie probability,
    computed by direct enumeration of all pairs."""
    ms = np.asarray(member_scores, dtype=np.float64).ravel()
    ns = np.asarray(non_member_scores, dtype=np.float64).ravel()
    if ms.size == 0 or ns.size == 0:
        raise ValueError("both score sets must be non-empty")
    gt = (ms[:, None] > ns[None, :]).mean()
    eq = (ms[:, None] == ns[None, :]).mean()
    return float(gt + 0.5 * eq)


def evaluate_mi(attacker: Network, target, members: Dataset, non_members: Dataset,
                k: int, T: int = 1):
    """Score target posteriors for equal-sized member/non-member sets.

    ``target`` is an oracle (or a network, wrapped with T MC samples);
    returns (accuracy at threshold 0.5, RocCurve). The larger side is
    truncated so both sets contribute equally.
    """
    if len(members) == 0 or len(non_members) == 0:
        raise ValueError("member and non-member sets must be non-empty")
    oracle = target if isinstance(target, Oracle) else Oracle.for_network(
        target, mc_samples=T, rng=np.random.default_rng(0)
    )
    m = min(len(members), len(non_members))
    mem_probs = oracle.query_probs_batch(members.images[:m])
    non_probs = oracle.query_probs_batch(non_members.images[:m])
    mem_scores = attack_scores(attacker, featurize_posteriors(mem_probs, k))
    non_scores = attack_scores(attacker, featurize_posteriors(non_probs, k))
    accuracy = 0.5 * float((mem_scores > 0.5).mean() + (non_scores <= 0.5).mean())
    return accuracy, roc_curve(mem_scores, non_scores)
