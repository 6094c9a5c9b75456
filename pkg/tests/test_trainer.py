import dataclasses
import json

import numpy as np
import pytest

from oracles import confusion_uar
from sere import trainer, tric
from sere.errors import (CompatibilityError, DivergenceError, ParseError, PreconditionError,
                         StratificationError)
from sere.synthetic import ToySpec, make_toy_dataset
from sere.trainer import AdamState, TrainConfig, adam_step


@pytest.fixture(scope="module")
def small_toy():
    spec = ToySpec(n_unlabeled_source=8, n_unlabeled_target=8, n_eval=20)
    return make_toy_dataset(1, spec)


class TestAdam:
    def test_first_step_is_lr_times_sign(self):
        p = {"x": np.array(1.0), "y": np.array([2.0, -1.0])}
        adam_step(p, {"x": np.array(0.3), "y": np.array([-5.0, 1e-3])}, AdamState(), lr=0.01)
        assert float(p["x"]) == pytest.approx(0.99, abs=1e-8)
        np.testing.assert_allclose(p["y"], [2.01, -1.01], atol=1e-6)

    def test_zero_gradient(self):
        p = {"x": np.array([1.0, 2.0])}
        st = AdamState()
        adam_step(p, {"x": np.array([4.0, 4.0])}, st, lr=0.1)
        m, v = st.m["x"].copy(), st.v["x"].copy()
        before = p["x"].copy()
        adam_step(p, {"x": np.zeros(2)}, st, lr=0.1, beta1=0.9, beta2=0.999)
        np.testing.assert_allclose(st.m["x"], 0.9 * m)
        np.testing.assert_allclose(st.v["x"], 0.999 * v)
        assert np.all(p["x"] < before)  # momentum keeps moving

    def test_two_steps_match_recurrence(self):
        lr, b1, b2, eps = 0.05, 0.8, 0.95, 1e-8
        g1, g2 = 0.7, -0.2
        p = {"x": np.array(0.0)}
        st = AdamState()
        adam_step(p, {"x": np.array(g1)}, st, lr, b1, b2, eps)
        adam_step(p, {"x": np.array(g2)}, st, lr, b1, b2, eps)
        x, m, v = 0.0, 0.0, 0.0
        for t, g in enumerate([g1, g2], start=1):
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            x -= lr * (m / (1 - b1 ** t)) / ((v / (1 - b2 ** t)) ** 0.5 + eps)
        assert float(p["x"]) == pytest.approx(x, abs=1e-15)


class TestConfig:
    def test_unknown_field(self):
        with pytest.raises(ParseError):
            TrainConfig.from_dict({"epochz": 3})

    def test_json_error_has_line(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text('{\n  "epochs": 3,\n  "seed": ,\n}\n')
        with pytest.raises(ParseError) as info:
            TrainConfig.from_json(p)
        assert info.value.line == 3

    def test_round_trip(self, tmp_path):
        cfg = TrainConfig(epochs=7, lambda2=0.25, batch_size=4)
        p = tmp_path / "c.json"
        p.write_text(json.dumps(cfg.to_dict()))
        assert TrainConfig.from_json(p) == cfg


class TestShotsAndFolds:
    def test_shots_per_class(self, small_toy):
        shots = trainer.select_shots(small_toy.labeled, 4, 3, seed=5)
        labels = [s.label for s in shots]
        assert sorted(labels) == [0, 0, 0, 1, 1, 1, 2, 2, 2, 3, 3, 3]
        assert shots == trainer.select_shots(small_toy.labeled, 4, 3, seed=5)
        with pytest.raises(PreconditionError):
            trainer.select_shots(small_toy.labeled, 4, 6, seed=0)

    def test_folds_are_stratified_partition(self, rng):
        labels = rng.integers(0, 3, size=60)
        labels[:15] = [0] * 5 + [1] * 5 + [2] * 5
        folds = trainer.make_folds(labels, 5, seed=2)
        joined = np.sort(np.concatenate(folds))
        assert np.array_equal(joined, np.arange(60))
        for c in range(3):
            counts = [np.sum(labels[f] == c) for f in folds]
            assert max(counts) - min(counts) <= 1

    def test_too_few_for_folds(self):
        with pytest.raises(StratificationError):
            trainer.make_folds([0, 0, 1, 1, 1], 3)


class TestUar:
    def test_examples(self):
        assert trainer.uar_report([0, 1, 1], [0, 1, 1], 2).uar == 1.0
        assert trainer.uar_report([0, 0, 1, 1], [0, 1, 1, 1], 2).uar == pytest.approx(0.75)
        assert trainer.uar_report([0, 0, 1, 1], [1, 1, 1, 1], 2).uar == pytest.approx(0.5)

    def test_absent_class_is_nan(self):
        rep = trainer.uar_report([0, 0], [0, 1], 3)
        assert np.isnan(rep.recall[2]) and rep.uar == pytest.approx(0.5)

    def test_imbalance_invariance(self, rng):
        y = rng.integers(0, 3, size=40)
        pred = rng.integers(0, 3, size=40)
        extra = y == 1
        y2 = np.concatenate([y, y[extra], y[extra]])
        p2 = np.concatenate([pred, pred[extra], pred[extra]])
        assert trainer.uar_report(y, pred, 3).uar == pytest.approx(trainer.uar_report(y2, p2, 3).uar)

    def test_matches_oracle(self, rng):
        y = rng.integers(0, 5, size=77)
        pred = rng.integers(0, 5, size=77)
        assert trainer.uar_report(y, pred, 5).uar == pytest.approx(confusion_uar(y, pred, 5)[0], abs=1e-12)

    def test_empty(self):
        with pytest.raises(PreconditionError):
            trainer.uar_report([], [], 2)


class TestTraining:
    def test_history_and_determinism(self, small_toy):
        cfg = TrainConfig(epochs=4, seed=3)
        a = trainer.train(cfg, small_toy)
        b = trainer.train(cfg, small_toy)
        assert len(a.history) == 4 and a.history == b.history
        assert all(a.model.params[k].tobytes() == b.model.params[k].tobytes() for k in a.model.params)
        assert a.initial_loss == pytest.approx(a.history[0]["total"])

    def test_minibatch_history_is_finite(self, small_toy):
        res = trainer.train(TrainConfig(epochs=2, batch_size=3), small_toy)
        assert all(np.isfinite(h["total"]) for h in res.history)

    def test_intensities_stay_feasible(self, small_toy):
        res = trainer.train(TrainConfig(epochs=5, learning_rate=0.5, batch_size=2), small_toy)
        p = res.model.params
        assert min(float(p[k]) for k in ("alpha", "beta", "gamma")) >= 0.0
        assert float(p["delta"]) >= tric.MIN_DELTA

    def test_divergence(self, small_toy):
        labeled = list(small_toy.labeled)
        s = labeled[0]
        labeled[0] = tric.Sample(s.id, s.H * 1e170, s.D, s.label, s.language)
        bad = dataclasses.replace(small_toy, labeled=labeled)
        with np.errstate(all="ignore"), pytest.raises(DivergenceError) as info:
            trainer.train(TrainConfig(epochs=2), bad)
        assert info.value.epoch == 0

    def test_needs_unlabeled(self, small_toy):
        with pytest.raises(PreconditionError):
            trainer.train(TrainConfig(epochs=1), dataclasses.replace(small_toy, unlabeled_target=[]))

    def test_cross_validate(self, small_toy):
        reports = trainer.cross_validate(TrainConfig(epochs=2, folds=5), small_toy)
        assert [r.fold for r in reports] == list(range(5))
        assert all(0.0 <= r.uar <= 1.0 for r in reports)


class TestCheckpoint:
    def test_round_trip(self, small_toy, tmp_path):
        model = trainer.train(TrainConfig(epochs=2, projection_dim=3), small_toy).model
        trainer.save_checkpoint(model, tmp_path / "ck", TrainConfig(epochs=2))
        back = trainer.load_checkpoint(tmp_path / "ck")
        assert back.classes == model.classes
        for k in model.params:
            np.testing.assert_allclose(back.params[k], model.params[k], rtol=1e-6, atol=1e-7)
        assert [s.id for s in back.references] == [s.id for s in model.references]
        assert list(trainer.predict(back, small_toy.eval_target)) == \
            list(trainer.predict(model, small_toy.eval_target))

    def test_overwrite_and_no_temp_left(self, small_toy, tmp_path):
        model = trainer.train(TrainConfig(epochs=1), small_toy).model
        trainer.save_checkpoint(model, tmp_path / "ck")
        trainer.save_checkpoint(model, tmp_path / "ck")
        assert sorted(p.name for p in tmp_path.iterdir()) == ["ck"]

    def test_not_a_checkpoint(self, tmp_path):
        with pytest.raises(CompatibilityError):
            trainer.load_checkpoint(tmp_path)
