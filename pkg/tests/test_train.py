"""Training loop, SGD, and early-stopping behavior."""

import numpy as np
import pytest

from bsb.nn import (
    Dense,
    DivergenceError,
    Network,
    ReLU,
    TrainConfig,
    backward,
    evaluate,
    sgd_step,
    softmax_cross_entropy,
    train,
)


def _two_blob_data(n_per_class, sigma, seed):
    rng = np.random.default_rng(seed)
    a = rng.normal((-1.0, -1.0), sigma, size=(n_per_class, 2))
    b = rng.normal((1.0, 1.0), sigma, size=(n_per_class, 2))
    x = np.concatenate([a, b])
    y = np.concatenate([np.zeros(n_per_class, int), np.ones(n_per_class, int)])
    order = rng.permutation(len(y))
    return x[order], y[order]


def _mlp(seed=0, n_in=2, hidden=16, classes=2):
    rng = np.random.default_rng(seed)
    return Network(
        [Dense(n_in, hidden, rng=rng), ReLU(), Dense(hidden, classes, rng=rng)],
        (n_in,),
        classes,
    )


def test_sgd_zero_lr_leaves_parameters_unchanged():
    net = _mlp(1)
    before = net.get_weights()
    grads = [np.ones_like(p) for p in net.params()]
    sgd_step(net, grads, 0.0)
    for p, b in zip(net.params(), before):
        np.testing.assert_array_equal(p, b)


def test_sgd_scalar_arithmetic():
    net = Network([Dense(1, 1)], (1,), 1)
    net.set_weights([np.array([[1.0]]), np.array([0.0])])
    sgd_step(net, [np.array([[2.0]]), np.array([0.0])], 0.1)
    assert net.params()[0][0, 0] == pytest.approx(0.8)


def test_sgd_rejects_mismatched_shapes():
    net = _mlp(2)
    grads = [np.zeros((1, 1)) for _ in net.params()]
    with pytest.raises(ValueError):
        sgd_step(net, grads, 0.1)


def test_sgd_step_decreases_loss_on_quadratic_surrogate():
    # one step on a smooth convex objective must reduce it (lr small enough)
    net = _mlp(3)
    x, y = _two_blob_data(32, 0.3, 0)
    loss_before, grads = backward(net, x, y)
    sgd_step(net, grads, 0.05)
    logits = net.forward(x)
    loss_after, _ = softmax_cross_entropy(logits, y)
    assert loss_after < loss_before


def test_train_zero_epochs_is_noop():
    net = _mlp(4)
    before = net.get_weights()
    x, y = _two_blob_data(8, 0.3, 1)
    net, history = train(net, (x, y), (x, y), TrainConfig(max_epochs=0, seed=1))
    assert history == []
    for p, b in zip(net.params(), before):
        np.testing.assert_array_equal(p, b)


def test_train_separable_blobs_to_perfect_accuracy():
    x, y = _two_blob_data(60, 0.25, 7)
    vx, vy = _two_blob_data(20, 0.25, 8)
    net = _mlp(5)
    cfg = TrainConfig(learning_rate=0.1, batch_size=16, max_epochs=50,
                      early_stop_patience=50, seed=9)
    net, history = train(net, (x, y), (vx, vy), cfg)
    _, acc = evaluate(net, (x, y))
    assert acc == 1.0
    assert len(history) <= 50


def test_train_is_deterministic_for_fixed_seed():
    x, y = _two_blob_data(30, 0.4, 2)
    results = []
    for _ in range(2):
        net = _mlp(6)
        cfg = TrainConfig(learning_rate=0.05, batch_size=8, max_epochs=5,
                          early_stop_patience=5, seed=123)
        net, history = train(net, (x, y), (x, y), cfg)
        results.append((net.get_weights(), [r.val_loss for r in history]))
    for a, b in zip(results[0][0], results[1][0]):
        np.testing.assert_array_equal(a, b)
    assert results[0][1] == results[1][1]


def test_train_restores_best_epoch_weights():
    x, y = _two_blob_data(40, 0.35, 3)
    vx, vy = _two_blob_data(15, 0.35, 4)
    net = _mlp(7)
    cfg = TrainConfig(learning_rate=0.2, batch_size=8, max_epochs=30,
                      early_stop_patience=3, seed=11)
    net, history = train(net, (x, y), (vx, vy), cfg)
    best = min(r.val_loss for r in history)
    final_loss, _ = evaluate(net, (vx, vy))
    assert final_loss == pytest.approx(best, abs=1e-12)


def test_train_empty_dataset_rejected():
    net = _mlp(8)
    with pytest.raises(ValueError, match="empty"):
        train(net, (np.zeros((0, 2)), np.zeros(0, int)), (np.zeros((0, 2)), np.zeros(0, int)),
              TrainConfig(max_epochs=1, early_stop_patience=1))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_train_divergence_raises():
    x, y = _two_blob_data(20, 0.3, 5)
    net = _mlp(9)
    cfg = TrainConfig(learning_rate=1e12, batch_size=8, max_epochs=20,
                      early_stop_patience=20, seed=0)
    with pytest.raises(DivergenceError):
        train(net, (x, y), (x, y), cfg)


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0.0)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(max_epochs=-1)
    with pytest.raises(ValueError):
        TrainConfig(early_stop_patience=0)
    with pytest.raises(ValueError):
        TrainConfig(max_epochs=3, early_stop_patience=4)
    TrainConfig(max_epochs=0)  # explicit no-op config is allowed
