import numpy as np
import pytest
from sklearn.base import clone

from conftest import small_config
from dartvae import training
from dartvae.exceptions import NumericError, TrainingError
from dartvae.features import AttributeEncoder, SyntheticSpec, generate_synthetic
from dartvae.model import ModelParams
from dartvae.rules import violation_targets
from dartvae.training import (
    HISTORY_COLUMNS,
    DartVAE,
    TrainConfig,
    _batches,
    evaluate_loss,
    history_csv,
    load_checkpoint,
    prepare_batch,
    read_history_csv,
    rule_weight_schedule,
    save_checkpoint,
    train,
    train_config_from_dict,
)


@pytest.fixture(scope="module")
def dataset(aircraft):
    spec = SyntheticSpec(schema=aircraft.schema, seed=11, group_count=2, samples_per_group=12,
                         visual_dim=16, semantic_dim=6,
                         templates=[{"is_uav": True, "is_combat": True, "is_turbofan": True},
                                    {"has_crew": True, "is_transport": True}])
    return generate_synthetic(spec)


@pytest.fixture(scope="module")
def prepared(dataset):
    enc = AttributeEncoder(dataset.schema).fit(dataset.attributes)
    batch, _ = prepare_batch(dataset, enc)
    return batch, small_config(attr_dim=enc.n_features_out_)


def run(prepared, dataset, aircraft, **kw):
    batch, config = prepared
    base = dict(epochs=3, batch_size=8, learning_rate=5e-3, seed=2)
    base.update(kw)
    return train(batch, aircraft, dataset.attributes, config, TrainConfig(**base))


class TestSchedule:
    def test_default_ramp(self):
        cfg = TrainConfig()
        assert rule_weight_schedule(1, cfg) == 0.0
        assert rule_weight_schedule(20, cfg) == pytest.approx(0.15)
        assert rule_weight_schedule(40, cfg) == pytest.approx(0.15)
        assert rule_weight_schedule(11, cfg) == pytest.approx(0.15 * 10 / 19)

    def test_monotone(self):
        cfg = TrainConfig(epochs=17, warmup_fraction=0.7)
        values = [rule_weight_schedule(e, cfg) for e in range(1, 18)]
        assert values == sorted(values) and values[-1] == 0.15

    def test_no_warmup_is_constant(self):
        cfg = TrainConfig(epochs=5, warmup_fraction=0.0)
        assert {rule_weight_schedule(e, cfg) for e in range(1, 6)} == {0.15}

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            rule_weight_schedule(0, TrainConfig())

    @pytest.mark.parametrize("bad", [dict(epochs=0), dict(warmup_fraction=1.5), dict(beta=-1.0),
                                     dict(provisional_period=0), dict(provisional_k=0)])
    def test_invalid_config(self, bad):
        with pytest.raises(ValueError):
            TrainConfig(**bad)


class TestBatches:
    def test_singleton_tail_folded(self):
        chunks = _batches(9, 4, np.arange(9))
        assert [c.size for c in chunks] == [4, 5]

    def test_regular(self):
        assert [c.size for c in _batches(10, 4, np.arange(10))] == [4, 4, 2]

    def test_single_batch(self):
        assert [c.size for c in _batches(1, 4, np.arange(1))] == [1]


class TestTrain:
    def test_same_seed_same_history(self, prepared, dataset, aircraft):
        a = run(prepared, dataset, aircraft, provisional_k=2, provisional_period=2)
        b = run(prepared, dataset, aircraft, provisional_k=2, provisional_period=2)
        assert a.history == b.history
        for name in a.params.arrays:
            assert np.array_equal(a.params.arrays[name], b.params.arrays[name])

    def test_seed_changes_result(self, prepared, dataset, aircraft):
        assert run(prepared, dataset, aircraft).history != run(prepared, dataset, aircraft, seed=3).history

    def test_recon_decreases(self, prepared, dataset, aircraft):
        batch, config = prepared
        result = run(prepared, dataset, aircraft, epochs=5, rule_weight=0.0)
        targets = violation_targets(aircraft, dataset.attributes)
        after = evaluate_loss(result.params, batch, targets, 0.0, 1.0, seed=2)
        assert after.recon < result.initial.recon

    def test_history_alpha_follows_schedule(self, prepared, dataset, aircraft):
        result = run(prepared, dataset, aircraft, epochs=4, warmup_fraction=1.0)
        cfg = TrainConfig(epochs=4, warmup_fraction=1.0)
        assert [h.alpha for h in result.history] == [rule_weight_schedule(e, cfg) for e in range(1, 5)]
        assert all(np.isfinite(h.total) for h in result.history)

    def test_non_finite_input_rejected_before_training(self, prepared, dataset, aircraft):
        batch, config = prepared
        visual = batch.visual.copy()
        visual[3, 2] = np.nan
        bad = type(batch)(visual, batch.semantic, batch.attrs)
        with pytest.raises(NumericError, match="visual"):
            train(bad, aircraft, dataset.attributes, config, TrainConfig(epochs=1))

    def test_numeric_failure_names_epoch_and_batch(self, prepared, dataset, aircraft, monkeypatch):
        calls = []
        real = training.loss_and_gradients

        def flaky(*args, **kw):
            calls.append(1)
            if len(calls) == 5:
                raise NumericError("decoder", "overflow")
            return real(*args, **kw)

        monkeypatch.setattr(training, "loss_and_gradients", flaky)
        with pytest.raises(TrainingError) as info:
            run(prepared, dataset, aircraft)
        # call 1 is the initial evaluation; 24 samples / 8 gives 3 batches per epoch
        assert (info.value.epoch, info.value.batch) == (2, 0)

    def test_rule_count_mismatch(self, prepared, dataset, aircraft):
        batch, config = prepared
        with pytest.raises(ValueError):
            train(batch, aircraft.subset(["uav_separation"]), dataset.attributes, config, TrainConfig(epochs=1))


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        params = ModelParams.init(small_config(), np.random.default_rng(0))
        save_checkpoint(tmp_path / "m.dvae", params)
        back = load_checkpoint(tmp_path / "m.dvae")
        assert back.config == params.config
        for name in params.arrays:
            assert np.array_equal(back.arrays[name], params.arrays[name])

    def test_bad_magic(self, tmp_path):
        (tmp_path / "x").write_bytes(b"NOPE" + bytes(20))
        with pytest.raises(ValueError, match="magic"):
            load_checkpoint(tmp_path / "x")

    def test_truncated(self, tmp_path):
        params = ModelParams.init(small_config(), np.random.default_rng(0))
        save_checkpoint(tmp_path / "m.dvae", params)
        blob = (tmp_path / "m.dvae").read_bytes()
        (tmp_path / "m.dvae").write_bytes(blob[:-8])
        with pytest.raises(ValueError, match="truncated"):
            load_checkpoint(tmp_path / "m.dvae")

    def test_trailing_bytes(self, tmp_path):
        params = ModelParams.init(small_config(), np.random.default_rng(0))
        save_checkpoint(tmp_path / "m.dvae", params)
        with open(tmp_path / "m.dvae", "ab") as fh:
            fh.write(b"\0")
        with pytest.raises(ValueError, match="trailing"):
            load_checkpoint(tmp_path / "m.dvae")


class TestHistoryCsv:
    def test_columns_and_rows(self, prepared, dataset, aircraft):
        result = run(prepared, dataset, aircraft)
        text = history_csv(result.history)
        assert text.splitlines()[0] == ",".join(HISTORY_COLUMNS)
        rows = read_history_csv(text)
        assert [r["epoch"] for r in rows] == [1, 2, 3]
        for row, h in zip(rows, result.history):
            assert row["recon"] == h.recon and row["total"] == h.total


class TestEstimator:
    def test_get_params_round_trip(self, aircraft):
        est = DartVAE(ruleset=aircraft, latent_dim=4, epochs=2)
        params = est.get_params()
        assert params["latent_dim"] == 4 and params["rule_weight"] == 0.15
        assert clone(est).get_params()["epochs"] == 2

    def test_fit_transform_shape(self, dataset, aircraft):
        est = DartVAE(ruleset=aircraft, semantic_dim=4, rule_dim=3, hidden1=10, hidden2=8,
                      latent_dim=3, epochs=2, batch_size=8, provisional_k=2)
        Z = est.fit_transform(dataset)
        assert Z.shape == (len(dataset), 3)
        assert len(est.history_) == 2
        np.testing.assert_array_equal(est.transform(dataset), Z)

    def test_requires_ruleset(self, dataset):
        with pytest.raises(ValueError):
            DartVAE().fit(dataset)

    def test_config_dict_round_trip(self, aircraft):
        est = DartVAE(ruleset=aircraft, epochs=7, provisional_k=3)
        assert train_config_from_dict(est.train_config_dict()) == TrainConfig(epochs=7, provisional_k=3)

    def test_unknown_config_field(self):
        with pytest.raises(ValueError, match="unknown"):
            train_config_from_dict({"epochz": 3})
