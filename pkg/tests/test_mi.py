"""Membership inference: shadow split, featurization, attacker, ROC/AUC.

The trapezoidal AUC is cross-checked against the brute-force pairwise
probability P(member score > non-member score) + half the tie mass, which
is an independent definition of the same quantity.
"""

import numpy as np
import pytest

from bsb.data import synth_blobs
from bsb.mi import (
    AttackDataset,
    RocCurve,
    ShadowSplit,
    auc_pairwise,
    build_attack_dataset,
    evaluate_mi,
    featurize_posteriors,
    make_shadow_split,
    roc_curve,
    train_attack_classifier,
    train_shadow,
)
from bsb.models import ModelSpec
from bsb.nn import Dense, Flatten, Network, TrainConfig
from bsb.oracle import Oracle


def test_make_shadow_split_even():
    pool = synth_blobs(100, 4, 8, 0.1, seed=0)
    split = make_shadow_split(pool, 0.5, seed=1)
    assert len(split.shadow_train) == 50 and len(split.shadow_out) == 50
    sig = lambda imgs: {tuple(np.round(im.ravel(), 9)) for im in imgs}
    a, b = sig(split.shadow_train.images), sig(split.shadow_out.images)
    assert not a & b
    assert a | b == sig(pool.images)


def test_make_shadow_split_ceil_rule():
    pool = synth_blobs(10, 2, 8, 0.1, seed=2)
    split = make_shadow_split(pool, 0.9, seed=3)
    assert len(split.shadow_train) == 9 and len(split.shadow_out) == 1


def test_make_shadow_split_deterministic():
    pool = synth_blobs(40, 4, 8, 0.1, seed=4)
    s1 = make_shadow_split(pool, 0.6, seed=5)
    s2 = make_shadow_split(pool, 0.6, seed=5)
    np.testing.assert_array_equal(s1.shadow_train.images, s2.shadow_train.images)
    np.testing.assert_array_equal(s1.shadow_out.labels, s2.shadow_out.labels)


def test_make_shadow_split_validation():
    pool = synth_blobs(10, 2, 8, 0.1, seed=6)
    with pytest.raises(ValueError):
        make_shadow_split(pool, 0.0, seed=0)
    with pytest.raises(ValueError):
        make_shadow_split(pool, 1.0, seed=0)
    with pytest.raises(ValueError):
        make_shadow_split(pool, 0.99, seed=0)  # ceil leaves shadow_out empty


def test_featurize_sorts_descending():
    feats = featurize_posteriors(np.array([[0.1, 0.7, 0.2]]), 3)
    np.testing.assert_allclose(feats, [[0.7, 0.2, 0.1]])


def test_featurize_pads_with_zeros():
    feats = featurize_posteriors(np.array([[0.6, 0.4]]), 3)
    np.testing.assert_allclose(feats, [[0.6, 0.4, 0.0]])


def test_featurize_truncates_to_k():
    feats = featurize_posteriors(np.array([[0.5, 0.1, 0.15, 0.25]]), 2)
    np.testing.assert_allclose(feats, [[0.5, 0.25]])


def test_featurize_permutation_invariant():
    rng = np.random.default_rng(7)
    probs = rng.dirichlet(np.ones(6), size=20)
    perm = rng.permutation(6)
    np.testing.assert_array_equal(
        featurize_posteriors(probs, 3), featurize_posteriors(probs[:, perm], 3)
    )


def _flat_net(side, classes, seed):
    rng = np.random.default_rng(seed)
    return Network(
        [Flatten(), Dense(side * side, classes, rng=rng)], (1, side, side), classes
    )


def test_build_attack_dataset_balances_by_downsampling():
    pool = synth_blobs(200, 4, 8, 0.1, seed=8)
    split = make_shadow_split(pool, 0.4, seed=9)  # 80 in / 120 out
    net = _flat_net(8, 4, seed=10)
    ds = build_attack_dataset(net, split, k=3, T=1)
    assert len(ds.labels) == 160
    assert int(ds.labels.sum()) == 80
    assert ds.features.shape == (160, 3)
    assert np.all(np.diff(ds.features, axis=1) <= 0)
    assert ds.features.min() >= 0.0 and ds.features.max() <= 1.0


def test_build_attack_dataset_pads_small_class_count():
    pool = synth_blobs(40, 2, 8, 0.1, seed=11)
    split = make_shadow_split(pool, 0.5, seed=12)
    net = _flat_net(8, 2, seed=13)
    ds = build_attack_dataset(net, split, k=4, T=1)
    assert ds.features.shape == (40, 4)
    np.testing.assert_array_equal(ds.features[:, 2:], 0.0)


def test_attack_dataset_validation():
    with pytest.raises(ValueError):
        AttackDataset(np.array([[0.2, 0.5]]), np.array([1]))  # not sorted
    with pytest.raises(ValueError):
        AttackDataset(np.array([[1.2, 0.5]]), np.array([1]))  # out of range
    with pytest.raises(ValueError):
        AttackDataset(np.array([[0.5, 0.2]]), np.array([2]))  # non-binary label
    with pytest.raises(ValueError):
        AttackDataset(np.array([[0.5, 0.2]]), np.array([0, 1]))  # length mismatch


def _cluster_features(n_per, k, seed, gap=True):
    rng = np.random.default_rng(seed)
    members = rng.dirichlet(np.full(k, 0.08), size=n_per)  # peaked posteriors
    non = rng.dirichlet(np.full(k, 8.0), size=n_per)  # flat posteriors
    if not gap:
        both = np.concatenate([members, non])
        perm = rng.permutation(len(both))
        members, non = both[perm[:n_per]], both[perm[n_per:]]
    feats = np.concatenate([members, non])
    feats = -np.sort(-feats, axis=1)
    labels = np.concatenate([np.ones(n_per, int), np.zeros(n_per, int)])
    return AttackDataset(feats, labels)


def test_train_attack_classifier_separable():
    ds = _cluster_features(250, 3, seed=14)
    cfg = TrainConfig(learning_rate=0.5, batch_size=32, max_epochs=40,
                      early_stop_patience=8, seed=15)
    net = train_attack_classifier(ds, cfg)
    from bsb.mi import attack_scores

    scores = attack_scores(net, ds.features)
    acc = 0.5 * ((scores[ds.labels == 1] > 0.5).mean() + (scores[ds.labels == 0] <= 0.5).mean())
    assert acc >= 0.95


def test_train_attack_classifier_null_labels():
    rng = np.random.default_rng(16)
    ds = _cluster_features(500, 3, seed=17)
    shuffled = AttackDataset(ds.features, rng.permutation(ds.labels))
    cfg = TrainConfig(learning_rate=0.3, batch_size=64, max_epochs=15,
                      early_stop_patience=4, seed=18)
    net = train_attack_classifier(shuffled, cfg)
    from bsb.mi import attack_scores

    scores = attack_scores(net, ds.features)
    acc = 0.5 * (
        (scores[shuffled.labels == 1] > 0.5).mean()
        + (scores[shuffled.labels == 0] <= 0.5).mean()
    )
    assert 0.43 <= acc <= 0.57


def test_train_attack_classifier_single_class_error():
    feats = -np.sort(-np.random.default_rng(19).dirichlet(np.ones(3), size=10), axis=1)
    ds = AttackDataset(feats, np.ones(10, int))
    with pytest.raises(ValueError, match="both classes"):
        train_attack_classifier(ds, TrainConfig(seed=0))


def test_train_attack_classifier_deterministic():
    ds = _cluster_features(100, 3, seed=20)
    cfg = TrainConfig(learning_rate=0.4, batch_size=32, max_epochs=10,
                      early_stop_patience=3, seed=21)
    from bsb.mi import attack_scores

    s1 = attack_scores(train_attack_classifier(ds, cfg), ds.features)
    s2 = attack_scores(train_attack_classifier(ds, cfg), ds.features)
    np.testing.assert_array_equal(s1, s2)


def test_train_shadow_on_separable_data():
    pool = synth_blobs(300, 4, 16, 0.05, seed=22)
    split = make_shadow_split(pool, 0.5, seed=23)
    spec = ModelSpec(family="lenet5", input_shape=(1, 16, 16), num_classes=4)
    cfg = TrainConfig(learning_rate=0.1, batch_size=32, max_epochs=8,
                      early_stop_patience=3, seed=24)
    net = train_shadow(spec, split, cfg)
    from bsb.nn import evaluate

    _, acc = evaluate(net, split.shadow_out)
    assert acc > 0.5  # far above 4-class chance


def test_roc_perfect_separation():
    roc = roc_curve([0.9, 0.8], [0.1, 0.2])
    assert roc.auc == 1.0
    assert roc.points[0] == (0.0, 0.0)
    assert roc.points[-1] == (1.0, 1.0)


def test_roc_constant_scores_is_chance():
    roc = roc_curve([0.5, 0.5, 0.5], [0.5, 0.5, 0.5])
    assert abs(roc.auc - 0.5) < 1e-12


def test_roc_monotone_and_bounded():
    rng = np.random.default_rng(25)
    for _ in range(20):
        ms = rng.choice([0.1, 0.3, 0.5, 0.7, 0.9], size=30)
        ns = rng.choice([0.1, 0.3, 0.5, 0.7, 0.9], size=40)
        roc = roc_curve(ms, ns)
        pts = np.array(roc.points)
        assert np.all(np.diff(pts[:, 0]) >= 0)
        assert np.all(np.diff(pts[:, 1]) >= 0)
        assert pts.min() >= 0.0 and pts.max() <= 1.0
        assert 0.0 <= roc.auc <= 1.0


def test_auc_matches_pairwise_oracle():
    rng = np.random.default_rng(26)
    for trial in range(40):
        n_m = int(rng.integers(2, 50))
        n_n = int(rng.integers(2, 50))
        if trial % 2:
            # discrete scores force ties across the two sets
            ms = rng.choice([0.0, 0.25, 0.5, 0.75, 1.0], size=n_m)
            ns = rng.choice([0.0, 0.25, 0.5, 0.75, 1.0], size=n_n)
        else:
            ms = rng.uniform(0, 1, n_m)
            ns = rng.uniform(0, 1, n_n)
        roc = roc_curve(ms, ns)
        assert abs(roc.auc - auc_pairwise(ms, ns)) < 1e-9


def test_roc_csv_round_trip():
    roc = roc_curve([0.9, 0.4, 0.6], [0.1, 0.4, 0.3])
    text = roc.to_csv()
    lines = text.strip().split("\n")
    assert lines[0] == "fpr,tpr"
    parsed = [tuple(float(v) for v in line.split(",")) for line in lines[1:]]
    assert parsed == [(float(f), float(t)) for f, t in roc.points]


def test_roc_curve_validation():
    with pytest.raises(ValueError):
        roc_curve([], [0.5])
    with pytest.raises(ValueError):
        RocCurve([(0.0, 0.0), (0.5, 0.5)], 0.5)  # does not end at (1,1)
    with pytest.raises(ValueError):
        RocCurve([(0.5, 0.5), (0.0, 0.0), (1.0, 1.0)], 0.5)  # unsorted


def test_evaluate_mi_constant_attacker_is_chance():
    members = synth_blobs(20, 2, 8, 0.1, seed=27)
    non_members = synth_blobs(20, 2, 8, 0.1, seed=28)
    target = _flat_net(8, 2, seed=29)
    oracle = Oracle.for_network(target)
    constant = Network([Dense(3, 2)], (3,), 2)  # zero weights: logits all equal
    acc, roc = evaluate_mi(constant, oracle, members, non_members, k=3)
    assert acc == 0.5
    assert abs(roc.auc - 0.5) < 1e-12


def test_evaluate_mi_truncates_to_equal_sizes_and_charges_ledger():
    members = synth_blobs(30, 2, 8, 0.1, seed=30)
    non_members = synth_blobs(20, 2, 8, 0.1, seed=31)
    oracle = Oracle.for_network(_flat_net(8, 2, seed=32))
    constant = Network([Dense(2, 2)], (2,), 2)
    evaluate_mi(constant, oracle, members, non_members, k=2)
    assert oracle.ledger.count == 40  # 20 members + 20 non-members


def test_evaluate_mi_detects_memorized_scores():
    # target memorizes its 40-sample training set: very peaked posteriors on
    # members, flat elsewhere, so the full pipeline must find signal
    pool = synth_blobs(400, 4, 8, 0.25, seed=33)
    target_train = pool.subset(np.arange(40))
    rest = pool.subset(np.arange(40, 400))
    member_keys = {tuple(np.round(im.ravel(), 6)) for im in target_train.images}

    def predict(xs):
        out = np.full((len(xs), 4), 0.25)
        for i, row in enumerate(xs):
            if tuple(np.round(row.ravel(), 6)) in member_keys:
                out[i] = [0.97, 0.01, 0.01, 0.01]
        return out

    target_oracle = Oracle(predict, 4)
    shadow_split = make_shadow_split(rest.subset(np.arange(200)), 0.5, seed=34)

    # featurize through a memorizing stand-in shadow with the same behavior
    shadow_keys = {tuple(np.round(im.ravel(), 6)) for im in shadow_split.shadow_train.images}

    def shadow_predict(xs):
        out = np.full((len(xs), 4), 0.25)
        for i, row in enumerate(xs):
            if tuple(np.round(row.ravel(), 6)) in shadow_keys:
                out[i] = [0.97, 0.01, 0.01, 0.01]
        return out

    in_f = featurize_posteriors(shadow_predict(shadow_split.shadow_train.images), 3)
    out_f = featurize_posteriors(shadow_predict(shadow_split.shadow_out.images), 3)
    m = min(len(in_f), len(out_f))
    ds = AttackDataset(
        np.concatenate([in_f[:m], out_f[:m]]),
        np.concatenate([np.ones(m, int), np.zeros(m, int)]),
    )
    cfg = TrainConfig(learning_rate=0.5, batch_size=25, max_epochs=30,
                      early_stop_patience=6, seed=36)
    attacker = train_attack_classifier(ds, cfg)
    non_members = rest.subset(np.arange(200, 240))
    acc, roc = evaluate_mi(attacker, target_oracle, target_train, non_members, k=3)
    assert roc.auc > 0.9
    assert acc > 0.9
