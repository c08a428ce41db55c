"""Closed-box query boundary between attacks and models.

An oracle exposes label-only and posterior interfaces over any batch
predictor, counts every query in a ledger, and can truncate posteriors to
their top-k entries. Attacks see queries, never parameters.
"""

import threading

import numpy as np

from .models import predict_probs_batch


class QueryBudgetError(RuntimeError):
    """The query budget is exhausted; attacks must catch this and finalize."""


class QueryLedger:
    """Monotone query counter with an optional hard budget.

    Updates are lock-protected so one oracle can serve concurrent callers.
    """

    def __init__(self, budget=None):
        if budget is not None and budget < 1:
            raise ValueError("budget must be positive when set")
        self.budget = budget
        self._count = 0
        self._lock = threading.Lock()

    @property
    def count(self):
        return self._count

    @property
    def remaining(self):
        if self.budget is None:
            return None
        return self.budget - self._count

    def charge(self, n=1):
        if n < 0:
            raise ValueError("cannot charge a negative query count")
        with self._lock:
            if self.budget is not None and self._count + n > self.budget:
                raise QueryBudgetError(
                    f"budget of {self.budget} queries exhausted ({self._count} used, {n} requested)"
                )
            self._count += n


def truncate_posterior(probs, k):
    """Keep the k largest entries (ties to the lowest index), renormalize,
    zero the rest."""
    probs = np.asarray(probs, dtype=np.float64)
    if k >= probs.shape[-1]:
        return probs.copy()
    out = np.zeros_like(probs)
    if probs.ndim == 1:
        keep = np.argsort(-probs, kind="stable")[:k]
        out[keep] = probs[keep]
        return out / out.sum()
    keep = np.argsort(-probs, axis=1, kind="stable")[:, :k]
    np.put_along_axis(out, keep, np.take_along_axis(probs, keep, axis=1), axis=1)
    return out / out.sum(axis=1, keepdims=True)


class Oracle:
    """Query interface over a batch predictor ``predict(xs) -> probs``.

    ``top_k`` truncates posteriors returned by the probability interface;
    labels are computed before truncation (the argmax entry always
    survives truncation, so both views agree).
    """

    def __init__(self, predict, num_classes, lo=0.0, hi=1.0, top_k=None, budget=None):
        if top_k is not None and top_k < 1:
            raise ValueError("top_k must be positive when set")
        if not lo < hi:
            raise ValueError("domain bounds must satisfy lo < hi")
        self._predict = predict
        self.num_classes = int(num_classes)
        self.lo = float(lo)
        self.hi = float(hi)
        self.top_k = top_k
        self.ledger = QueryLedger(budget)

    @classmethod
    def for_network(cls, net, mc_samples=1, rng=None, lo=0.0, hi=1.0, top_k=None, budget=None):
        """Oracle over a trained network; dropout networks answer with the
        mean of ``mc_samples`` stochastic passes per query."""

        def predict(xs):
            return predict_probs_batch(net, xs, T=mc_samples, rng=rng)

        return cls(predict, net.num_classes, lo=lo, hi=hi, top_k=top_k, budget=budget)

    def clip_to_domain(self, x):
        return np.clip(np.asarray(x, dtype=np.float64), self.lo, self.hi)

    def _probs_batch(self, xs):
        xs = np.asarray(xs, dtype=np.float64)
        self.ledger.charge(len(xs))
        probs = np.asarray(self._predict(xs), dtype=np.float64)
        if probs.shape != (len(xs), self.num_classes):
            raise ValueError(f"predictor returned shape {probs.shape}, expected {(len(xs), self.num_classes)}")
        return probs

    def query_label(self, x):
        """Predicted class index for one input; one ledger charge."""
        return int(self._probs_batch(np.asarray(x)[None])[0].argmax())

    def query_labels(self, xs):
        """Predicted classes for a batch; charges one query per row."""
        return self._probs_batch(xs).argmax(axis=1)

    def query_probs(self, x):
        """Posterior for one input, truncated/renormalized when configured."""
        probs = self._probs_batch(np.asarray(x)[None])[0]
        if self.top_k is not None:
            probs = truncate_posterior(probs, self.top_k)
        return probs

    def query_probs_batch(self, xs):
        probs = self._probs_batch(xs)
        if self.top_k is not None:
            probs = truncate_posterior(probs, self.top_k)
        return probs
