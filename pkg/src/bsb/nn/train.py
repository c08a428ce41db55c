"""Cross-entropy loss, SGD, and the early-stopping training loop."""

from dataclasses import dataclass, field

import numpy as np

from .layers import Network


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""


@dataclass
class TrainConfig:
    learning_rate: float = 0.01
    batch_size: int = 64
    max_epochs: int = 50
    early_stop_patience: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.max_epochs < 0:
            raise ValueError("max_epochs must be >= 0")
        if self.early_stop_patience < 1:
            raise ValueError("early_stop_patience must be positive")
        # max_epochs == 0 is the explicit no-op configuration, exempt from
        # the patience bound.
        if self.max_epochs > 0 and self.early_stop_patience > self.max_epochs:
            raise ValueError("early_stop_patience must not exceed max_epochs")
        if self.seed < 0:
            raise ValueError("seed must be a non-negative integer")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float


def softmax(logits):
    """Row-wise softmax with max subtraction for stability."""
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy over the batch and its gradient wrt logits."""
    labels = np.asarray(labels)
    n, k = logits.shape
    if labels.shape != (n,):
        raise ValueError(f"labels shape {labels.shape} does not match batch of {n}")
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"labels must lie in [0, {k}), got range [{labels.min()}, {labels.max()}]")
    z = logits - logits.max(axis=1, keepdims=True)
    log_probs = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = -log_probs[np.arange(n), labels].mean()
    grad = softmax(logits)
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


def backward(net: Network, batch, labels, rng=None):
    """One paired forward/backward pass in train mode.

    Returns (loss, grads) where grads match ``net.params()`` order. The
    dropout masks drawn in the forward pass are the ones differentiated.
    """
    logits, tape = net.forward_tape(batch, train=True, rng=rng)
    loss, grad_logits = softmax_cross_entropy(logits, labels)
    return loss, net.backward(tape, grad_logits)


def sgd_step(net: Network, grads, lr):
    """In-place SGD update: p -= lr * g for every parameter."""
    params = net.params()
    if len(grads) != len(params):
        raise ValueError(f"got {len(grads)} gradients for {len(params)} parameters")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        p -= lr * g
    return net


def _as_xy(dataset):
    if hasattr(dataset, "images"):
        return dataset.images, dataset.labels
    x, y = dataset
    return np.asarray(x, dtype=np.float64), np.asarray(y)


def evaluate(net: Network, dataset, batch_size=256):
    """(mean cross-entropy, accuracy) of a network in eval mode."""
    x, y = _as_xy(dataset)
    n = len(y)
    if n == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    total_loss = 0.0
    correct = 0
    for start in range(0, n, batch_size):
        xb = x[start : start + batch_size]
        yb = y[start : start + batch_size]
        logits = net.forward(xb, train=False)
        loss, _ = softmax_cross_entropy(logits, yb)
        total_loss += loss * len(yb)
        correct += int((logits.argmax(axis=1) == yb).sum())
    return total_loss / n, correct / n


def train(net: Network, train_set, val_set, cfg: TrainConfig):
    """Train with SGD and early stopping on validation cross-entropy.

    Stops when validation loss has not improved for
    ``cfg.early_stop_patience`` consecutive epochs or at ``cfg.max_epochs``,
    and restores the parameters of the best-validation-loss epoch.
    Returns (net, history). Bit-reproducible for a fixed seed.
    """
    x, y = _as_xy(train_set)
    n = len(y)
    if n == 0:
        raise ValueError("training set is empty")
    if cfg.max_epochs == 0:
        return net, []
    vx, vy = _as_xy(val_set)
    if len(vy) == 0:
        raise ValueError("validation set is empty")

    rng = np.random.default_rng(cfg.seed)
    best_loss = np.inf
    best_weights = net.get_weights()
    epochs_since_best = 0
    history = []

    for epoch in range(cfg.max_epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        correct = 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            xb, yb = x[idx], y[idx]
            try:
                logits, tape = net.forward_tape(xb, train=True, rng=rng)
            except FloatingPointError as e:
                raise DivergenceError(f"epoch {epoch}: {e}") from e
            loss, grad_logits = softmax_cross_entropy(logits, yb)
            if not np.isfinite(loss):
                raise DivergenceError(f"epoch {epoch}: non-finite training loss")
            grads = net.backward(tape, grad_logits)
            sgd_step(net, grads, cfg.learning_rate)
            epoch_loss += loss * len(yb)
            correct += int((logits.argmax(axis=1) == yb).sum())

        val_loss, val_acc = evaluate(net, (vx, vy))
        if not np.isfinite(val_loss):
            raise DivergenceError(f"epoch {epoch}: non-finite validation loss")
        history.append(
            EpochRecord(epoch, epoch_loss / n, correct / n, val_loss, val_acc)
        )
        if val_loss < best_loss:
            best_loss = val_loss
            best_weights = net.get_weights()
            epochs_since_best = 0
        else:
            epochs_since_best += 1
            if epochs_since_best >= cfg.early_stop_patience:
                break

    net.set_weights(best_weights)
    return net, history
