"""Decision-based adversarial attacks: boundary walk and HopSkipJump.

Both attacks see the model only through label queries on an oracle, track
every query against a hard cap, and return the best adversarial example
found when any budget runs out.
"""

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .oracle import QueryBudgetError

L2_BUDGET_DEFAULT = 3.0
LINF_BUDGET_DEFAULT = 0.1
_INIT_BISECT_STEPS = 12
_HSJ_INIT_TRIALS = 200
_STEP_HALVINGS = 12


class InitializationError(RuntimeError):
    """No adversarial starting point was found within the trial budget."""


@dataclass
class BoundaryConfig:
    rel_orth_step: float = 0.1
    rel_source_step: float = 0.1
    max_queries: int = 5000
    adapt_every: int = 30
    target_orth_success: float = 0.5
    init_trials: int = 200
    seed: int = 0
    distance_budget: float = L2_BUDGET_DEFAULT

    def __post_init__(self):
        if self.rel_orth_step <= 0:
            raise ValueError("rel_orth_step must be positive")
        if not 0 < self.rel_source_step < 1:
            raise ValueError("rel_source_step must lie in (0, 1)")
        if not 0 < self.target_orth_success < 1:
            raise ValueError("target_orth_success must lie in (0, 1)")
        for name in ("max_queries", "adapt_every", "init_trials"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.distance_budget <= 0:
            raise ValueError("distance_budget must be positive")


@dataclass
class HsjConfig:
    norm: str = "l2"
    bin_search_tol: float = 1e-3
    grad_batch_init: int = 20
    max_outer_iters: int = 20
    max_queries: int = 5000
    seed: int = 0
    distance_budget: Optional[float] = None

    def __post_init__(self):
        if self.norm not in ("l2", "linf"):
            raise ValueError(f"norm must be 'l2' or 'linf', got {self.norm!r}")
        if self.bin_search_tol <= 0:
            raise ValueError("bin_search_tol must be positive")
        if self.grad_batch_init < 2:
            raise ValueError("grad_batch_init must be at least 2")
        if self.max_outer_iters < 1 or self.max_queries < 1:
            raise ValueError("iteration and query caps must be positive")
        if self.distance_budget is None:
            self.distance_budget = (
                L2_BUDGET_DEFAULT if self.norm == "l2" else LINF_BUDGET_DEFAULT
            )
        elif self.distance_budget <= 0:
            raise ValueError("distance_budget must be positive")


@dataclass
class AttackResult:
    success: bool
    adversarial_example: Optional[np.ndarray]
    distance: float
    queries_used: int
    original_label: int
    final_label: int


def distance(a, b, norm: str = "l2") -> float:
    diff = (np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)).ravel()
    if norm == "l2":
        return float(np.linalg.norm(diff))
    if norm == "linf":
        return float(np.max(np.abs(diff)))
    raise ValueError(f"unknown norm {norm!r}")


class _Budgeted:
    """Oracle facade charging this attack's own query cap on top of the
    oracle's ledger; exhaustion raises the same budget error."""

    def __init__(self, oracle, max_queries):
        self._oracle = oracle
        self._start = oracle.ledger.count
        self._max = max_queries
        self.lo = oracle.lo
        self.hi = oracle.hi

    @property
    def used(self):
        return self._oracle.ledger.count - self._start

    @property
    def remaining(self):
        return self._max - self.used

    def _check(self, n):
        if self.used + n > self._max:
            raise QueryBudgetError(f"attack query cap of {self._max} exhausted")

    def query_label(self, x):
        self._check(1)
        return self._oracle.query_label(x)

    def query_labels(self, xs):
        self._check(len(xs))
        return self._oracle.query_labels(xs)

    def clip_to_domain(self, x):
        return self._oracle.clip_to_domain(x)


def _check_original(o, x, true_label):
    original = o.query_label(x)
    if true_label is not None and original != int(true_label):
        raise ValueError(
            f"input is classified {original}, expected {int(true_label)}; "
            "attacks require a correctly classified input"
        )
    return original


def _search_start(o, x, original, trials, rng):
    """Find any misclassified domain point within the trial budget."""
    pure = max(trials // 2, 1)
    for i in range(max(trials, 0)):
        cand = rng.uniform(o.lo, o.hi, size=x.shape)
        if i >= pure:
            # fallback: blend partway from the random image toward x
            cand = x + rng.uniform(0.5, 1.0) * (cand - x)
        cand = o.clip_to_domain(cand)
        label = o.query_label(cand)
        if label != original:
            return cand, int(label)
    raise InitializationError(f"no adversarial point found in {trials} trials")


def init_adversarial(o, x, trials, rng, true_label=None):
    """Sample a random adversarial starting point; one query checks the
    precondition, then at most ``trials`` queries probe candidates."""
    x = np.asarray(x, dtype=np.float64)
    original = _check_original(o, x, true_label)
    point, _ = _search_start(o, x, original, trials, rng)
    return point


def orthogonal_perturbation(x, x_adv, delta, rng, lo=0.0, hi=1.0):
    """Gaussian step of length delta * d(x, x_adv), projected back onto the
    sphere around x through x_adv, then clipped to the domain."""
    x = np.asarray(x, dtype=np.float64)
    x_adv = np.asarray(x_adv, dtype=np.float64)
    if delta < 0:
        raise ValueError("delta must be non-negative")
    v = x_adv - x
    d = float(np.linalg.norm(v.ravel()))
    if d == 0.0:
        raise ValueError("x and x_adv coincide; no sphere to walk on")
    if delta > 0:
        eta = rng.standard_normal(x.shape)
        nrm = float(np.linalg.norm(eta.ravel()))
        eta = eta * (delta * d / nrm) if nrm > 0 else np.zeros_like(x)
    else:
        eta = np.zeros_like(x)
    diff = (x_adv + eta) - x
    dn = float(np.linalg.norm(diff.ravel()))
    cand = x_adv if dn == 0.0 else x + diff * (d / dn)
    return np.clip(cand, lo, hi)


def source_step(x, x_adv, eps, lo=0.0, hi=1.0):
    """Move x_adv a relative step eps toward x, clipped to the domain."""
    if not 0.0 <= eps <= 1.0:
        raise ValueError("relative source step must lie in [0, 1]")
    x = np.asarray(x, dtype=np.float64)
    x_adv = np.asarray(x_adv, dtype=np.float64)
    return np.clip(x_adv + eps * (x - x_adv), lo, hi)


def _adapt(value, rate, target, hi):
    if rate > target:
        value *= 1.5
    elif rate < target:
        value *= 0.66
    return float(min(max(value, 1e-8), hi))


def boundary_attack(o, x, cfg: BoundaryConfig, true_label=None) -> AttackResult:
    """Random walk along the decision boundary shrinking l2 distance.

    Alternates sphere-preserving orthogonal proposals with radial source
    steps; rejected candidates are discarded, so every retained iterate is
    adversarial and the distance to x never increases.
    """
    x = np.asarray(x, dtype=np.float64)
    b = _Budgeted(o, cfg.max_queries)
    rng = np.random.default_rng(cfg.seed)
    original = -1
    x_adv = None
    cur_label = -1
    delta, eps = cfg.rel_orth_step, cfg.rel_source_step
    try:
        original = _check_original(b, x, true_label)
        x_adv, cur_label = _search_start(
            b, x, original, min(cfg.init_trials, max(b.remaining, 0)), rng
        )
        # pull the start onto the boundary along the initial chord so the
        # walk begins from a competitive distance
        low = x
        for _ in range(_INIT_BISECT_STEPS):
            if b.remaining < 1:
                break
            mid = 0.5 * (low + x_adv)
            lab = b.query_label(mid)
            if lab != original:
                x_adv, cur_label = mid, int(lab)
            else:
                low = mid
        orth_n = orth_ok = src_n = src_ok = 0
        while b.remaining >= 1:
            if distance(x, x_adv) == 0.0:
                break
            cand = orthogonal_perturbation(x, x_adv, delta, rng, b.lo, b.hi)
            lab = b.query_label(cand)
            orth_n += 1
            if lab != original:
                orth_ok += 1
                x_adv, cur_label = cand, int(lab)
                if b.remaining >= 1:
                    stepped = source_step(x, x_adv, eps, b.lo, b.hi)
                    lab2 = b.query_label(stepped)
                    src_n += 1
                    if lab2 != original:
                        src_ok += 1
                        x_adv, cur_label = stepped, int(lab2)
            if orth_n == cfg.adapt_every:
                delta = _adapt(delta, orth_ok / orth_n, cfg.target_orth_success, hi=1e3)
                if src_n:
                    eps = _adapt(eps, src_ok / src_n, cfg.target_orth_success, hi=0.95)
                orth_n = orth_ok = src_n = src_ok = 0
    except (QueryBudgetError, InitializationError):
        pass
    if x_adv is None:
        return AttackResult(False, None, float("inf"), b.used, original, original)
    d = distance(x, x_adv)
    success = cur_label != original and d <= cfg.distance_budget
    return AttackResult(success, x_adv, d, b.used, original, cur_label)


def _blend(x, x_adv, alpha, norm):
    if norm == "l2":
        return (1.0 - alpha) * x + alpha * x_adv
    dinf = distance(x, x_adv, "linf")
    return np.clip(x_adv, x - alpha * dinf, x + alpha * dinf)


def _bisect(o, x, x_adv, tol, norm, original, adv_label):
    """Shrink the interpolation interval [non-adversarial, adversarial]
    below tol; returns the adversarial end and its label."""
    lo_a, hi_a = 0.0, 1.0
    while hi_a - lo_a > tol:
        mid = 0.5 * (lo_a + hi_a)
        lab = o.query_label(_blend(x, x_adv, mid, norm))
        if lab != original:
            hi_a, adv_label = mid, int(lab)
        else:
            lo_a = mid
    return _blend(x, x_adv, hi_a, norm), adv_label


def binary_search_to_boundary(o, x, x_adv, tol, norm="l2", original_label=None):
    """Interpolate between x and an adversarial x_adv down to parameter
    tolerance tol; l2 blends along the segment, linf clips per coordinate."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    if norm not in ("l2", "linf"):
        raise ValueError(f"norm must be 'l2' or 'linf', got {norm!r}")
    x = np.asarray(x, dtype=np.float64)
    x_adv = np.asarray(x_adv, dtype=np.float64)
    original = o.query_label(x) if original_label is None else int(original_label)
    adv_label = o.query_label(x_adv)
    if adv_label == original:
        raise ValueError("x_adv is not adversarial against this oracle")
    point, _ = _bisect(o, x, x_adv, tol, norm, original, adv_label)
    return point


def estimate_gradient_direction(o, x_b, radius, B, rng, original_label=None):
    """Monte-Carlo boundary-normal estimate from B label flips at the given
    probing radius; returns a unit vector pointing into the adversarial side."""
    x_b = np.asarray(x_b, dtype=np.float64)
    if B < 2:
        raise ValueError("need at least two probes")
    if radius <= 0:
        raise ValueError("radius must be positive")
    original = o.query_label(x_b) if original_label is None else int(original_label)
    for _ in range(2):
        raw = np.asarray(rng.standard_normal((B,) + x_b.shape), dtype=np.float64)
        flat = raw.reshape(B, -1)
        flat = flat / np.maximum(np.linalg.norm(flat, axis=1, keepdims=True), 1e-300)
        probes = x_b[None] + radius * flat.reshape((B,) + x_b.shape)
        labels = o.query_labels(probes)
        phi = np.where(labels != original, 1.0, -1.0)
        if np.all(phi == phi[0]):
            est = phi[0] * flat.mean(axis=0)
        else:
            est = ((phi - phi.mean())[:, None] * flat).sum(axis=0) / (B - 1)
        nrm = float(np.linalg.norm(est))
        if nrm > 1e-12:
            return (est / nrm).reshape(x_b.shape)
    raise RuntimeError("gradient direction estimate vanished after resampling")


def hsj_attack(o, x, cfg: HsjConfig, true_label=None) -> AttackResult:
    """Boundary projection, gradient-direction estimation, and geometric
    step-size descent under the configured norm."""
    x = np.asarray(x, dtype=np.float64)
    b = _Budgeted(o, cfg.max_queries)
    rng = np.random.default_rng(cfg.seed)
    original = -1
    best = None
    n = x.size
    try:
        original = _check_original(b, x, true_label)
        x_adv, cur_label = _search_start(
            b, x, original, min(_HSJ_INIT_TRIALS, max(b.remaining, 0)), rng
        )
        best = (distance(x, x_adv, cfg.norm), x_adv, cur_label)
        for t in range(1, cfg.max_outer_iters + 1):
            if b.remaining < 2:
                break
            xb, xb_label = _bisect(
                b, x, x_adv, cfg.bin_search_tol, cfg.norm, original, cur_label
            )
            d_t = distance(x, xb, cfg.norm)
            if d_t <= best[0]:
                best = (d_t, xb, xb_label)
            else:
                # never let an outer iteration worsen the incumbent
                d_t, xb, xb_label = best
            if d_t == 0.0:
                break
            batch = min(int(cfg.grad_batch_init * math.sqrt(t)), b.remaining - 1)
            if batch < 2:
                break
            radius = cfg.bin_search_tol * math.sqrt(n) * d_t
            grad = estimate_gradient_direction(
                b, xb, max(radius, 1e-12), batch, rng, original_label=original
            )
            direction = grad if cfg.norm == "l2" else np.sign(grad)
            xi = d_t / math.sqrt(t)
            stepped = None
            for _ in range(_STEP_HALVINGS):
                if b.remaining < 1:
                    break
                cand = np.clip(xb + xi * direction, b.lo, b.hi)
                lab = b.query_label(cand)
                if lab != original:
                    stepped = (cand, int(lab))
                    break
                xi /= 2.0
            if stepped is None:
                x_adv, cur_label = best[1], best[2]
            else:
                x_adv, cur_label = stepped
        if best is not None and b.remaining >= 2 and best[0] > 0.0:
            xb, xb_label = _bisect(
                b, x, x_adv, cfg.bin_search_tol, cfg.norm, original, cur_label
            )
            d_f = distance(x, xb, cfg.norm)
            if d_f <= best[0]:
                best = (d_f, xb, xb_label)
    except (QueryBudgetError, InitializationError):
        pass
    if best is None:
        return AttackResult(False, None, float("inf"), b.used, original, original)
    d, x_fin, lab_fin = best
    success = lab_fin != original and d <= cfg.distance_budget
    return AttackResult(success, x_fin, d, b.used, original, lab_fin)
