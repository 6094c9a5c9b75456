import numpy as np
import pytest

from sere import tric
from sere.errors import MissingClassError, PairingError, PreconditionError
from sere.idfe import EnhancedRepresentation
from sere.irf import IrfParams


def sample(rng, i, label=None, T=None, d=4):
    T = T or int(rng.integers(2, 7))
    return tric.Sample(f"s{i}", rng.normal(size=(T, d)), rng.normal(size=(T, 4)), label)


def small_batch(rng, d=4):
    return tric.Batch([sample(rng, 0, 0, d=d), sample(rng, 1, 0, d=d),
                       sample(rng, 2, 1, d=d), sample(rng, 3, 1, d=d)],
                      [sample(rng, 4, d=d), sample(rng, 5, d=d)],
                      [sample(rng, 6, d=d), sample(rng, 7, d=d)], 2)


def test_initial_prototypes_are_class_means():
    z = np.array([[0.0, 0], [2, 0], [0, 4]])
    p = tric.initial_prototypes(z, [0, 0, 1])
    assert np.array_equal(p, [[1, 0], [0, 4]])
    with pytest.raises(MissingClassError):
        tric.initial_prototypes(z, [0, 0, 2], n_classes=3)


def test_enhanced_prototypes_blend_anchor_embeddings():
    z = np.array([[0.0, 0], [2, 0], [0, 4]])
    anchors = np.array([[5.0, 5.0]])
    p = tric.enhanced_prototypes(z, [0, 0, 1], anchors, [0])
    np.testing.assert_allclose(p.enhanced[0], [7 / 3, 5 / 3])
    np.testing.assert_allclose(p.enhanced[1], [0, 4])
    assert list(p.n_pseudo) == [1, 0]


def test_proto_loss_by_hand():
    z = np.array([[0.0], [2.0], [4.0]])
    protos = tric.enhanced_prototypes(z, [0, 0, 1], np.zeros((0, 1)), [])
    # class 0: mean of 1 and 1; class 1: 0; one pseudo term for class 1 at distance 2
    loss = tric.proto_loss(z, [0, 0, 1], np.array([[6.0]]), [1], protos)
    assert loss == pytest.approx((1.0 + 0.0 + 4.0) / 2)


def test_dual_loss_by_hand():
    loss = tric.dual_loss([0.5, 1.0], np.array([[1.0, 1.0], [3.0, 0.0]]), np.zeros((2, 2)))
    assert loss == pytest.approx((0.5 * 2 + 0.0) / 2)
    with pytest.raises(PairingError):
        tric.dual_loss([], np.zeros((0, 2)), np.zeros((0, 2)))


def test_pseudo_anchor_picks_highest_irf(rng):
    x = EnhancedRepresentation(rng.normal(size=(4, 6)))
    other = EnhancedRepresentation(rng.normal(size=(4, 6)))
    idx, label, irf = tric.select_pseudo_anchor(x, [other, x], [3, 7], IrfParams())
    assert (idx, label) == (1, 7) and irf == pytest.approx(1.0)


def test_classify_returns_memorised_class(rng):
    refs = [EnhancedRepresentation(rng.normal(size=(5, 6)) + 10 * k) for k in range(3)]
    protos = np.stack([r.U.mean(axis=0) for r in refs])
    for k in range(3):
        assert tric.classify(refs[k], protos, refs, IrfParams()) == k


def test_ablation_structure(rng):
    batch, params = small_batch(rng), tric.init_params(4)
    t = tric.TricParams(0.3, 2.5)
    full, diag = tric.total_loss(batch, params, t)
    assert full == pytest.approx(0.3 * diag["proto"] + 2.5 * diag["dual"], rel=1e-12)
    only_dual, d2 = tric.total_loss(batch, params, t, use_proto=False)
    assert only_dual == 2.5 * d2["dual"] and d2["proto"] == 0.0
    assert tric.total_loss(batch, params, t, False, False)[0] == 0.0
    grads = tric.grad_total_loss(batch, params, t, False, False)
    assert all(not np.any(g) for g in grads.values())


def test_mini_batch_without_targets(rng):
    batch, params = small_batch(rng), tric.init_params(4)
    ch = tric.select_choices(batch, params)
    terms, grads = tric.objective(batch, params, ch, active=batch.src_idx[:1])
    assert np.isfinite(terms.total) and set(grads) == set(params)


def test_targets_need_source_pool(rng):
    b = tric.Batch([sample(rng, 0, 0)], [], [sample(rng, 1)], 1)
    with pytest.raises(PairingError):
        tric.select_choices(b, tric.init_params(4))


def test_gradient_with_projection_head(rng):
    batch = small_batch(rng)
    params = tric.init_params(4, projection_dim=3, rng=rng)
    params["w"] = rng.normal(size=3)
    params["delta"][...] = 0.6
    ch = tric.select_choices(batch, params)
    _, grads = tric.objective(batch, params, ch)
    h = 1e-6
    for name, value in params.items():
        for idx in np.ndindex(value.shape):
            old = value[idx].copy()
            value[idx] = old + h
            up = tric.objective(batch, params, ch, with_grad=False)[0].total
            value[idx] = old - h
            down = tric.objective(batch, params, ch, with_grad=False)[0].total
            value[idx] = old
            assert grads[name][idx] == pytest.approx((up - down) / (2 * h), rel=1e-4, abs=1e-8)


def test_project_params_clips():
    p = tric.init_params(2)
    p["alpha"][...] = -0.1
    p["delta"][...] = -3.0
    tric.project_params(p)
    assert float(p["alpha"]) == 0.0 and float(p["delta"]) == tric.MIN_DELTA


def test_batch_needs_labels(rng):
    with pytest.raises(PreconditionError):
        tric.Batch([sample(rng, 0)])


def test_no_pseudo_labels_keeps_initial_prototypes(rng):
    z = rng.normal(size=(6, 3))
    labels = [0, 1, 2, 0, 1, 2]
    p = tric.enhanced_prototypes(z, labels, np.zeros((0, 3)), [])
    assert np.array_equal(p.enhanced, tric.initial_prototypes(z, labels))


def test_nearest_prototype_examples():
    protos = np.array([[0.0, 0.0], [10.0, 10.0]])
    assert tric.nearest_prototype([1.0, 1.0], protos) == 0
    assert tric.nearest_prototype([5.0, 5.0], protos) == 0
    assert tric.nearest_prototype([10.0, 10.0], protos) == 1


def test_nearest_prototype_translation_invariant(rng):
    for _ in range(20):
        protos, v, shift = rng.normal(size=(5, 4)), rng.normal(size=4), rng.normal(size=4) * 10
        assert tric.nearest_prototype(v, protos) == tric.nearest_prototype(v + shift, protos + shift)


def test_identical_sample_inherits_label(rng):
    batch, params = small_batch(rng), tric.init_params(4)
    twin = batch.labeled[2]
    b = tric.Batch(batch.labeled, batch.unlabeled_source,
                   [tric.Sample("twin", twin.H, twin.D)], 2)
    ch = tric.select_choices(b, params)
    assert ch.pseudo_labels[0] == twin.label


def test_losses_non_negative(rng):
    for _ in range(5):
        loss, diag = tric.total_loss(small_batch(rng), tric.init_params(4))
        assert diag["proto"] >= 0 and diag["dual"] >= 0 and loss >= 0
