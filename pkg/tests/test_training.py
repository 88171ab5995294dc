import numpy as np
import pytest

from opforge.campaign import Dataset, LhsDesign, Scaler, lhs_sample, split_dataset
from opforge.models import DeepOnetConfig, DnnConfig, FnoConfig, RomModel
from opforge.thermal import SimulationRecord
from opforge.training import (
    DivergenceError, TrainConfig, default_model_config, default_train_config, evaluate,
    five_number, grid_search, loss_curve_rows, monotonicity_violation, predict_scalar,
    predict_series, r2, rel_err, relative_l2, rmse, hyper_groups, train,
)

STEPS = 8


def smooth_dataset(n=40, seed=0):
    """Records whose QoIs are smooth closed-form functions of the inputs."""
    t = np.arange(1, STEPS + 1) / STEPS
    recs = []
    for p in lhs_sample(LhsDesign(n, seed=seed)):
        u = (p.as_array() - [250, 0.004, 0.25, 0.3, 1.0]) / [150, 0.016, 0.15, 0.1, 1.0]
        growth = 0.02 + 0.05 * u[0] + 0.02 * u[3] - 0.01 * u[1]
        v = growth * t
        temp = 2000 + 800 * u[0] + 300 * u[4] - 200 * u[2] + 100 * t
        recs.append(SimulationRecord(p, t * 100.0, v, temp, True))
    return split_dataset(recs, seed=seed)


@pytest.fixture(scope="module")
def ds():
    return smooth_dataset()


# -- metrics ---------------------------------------------------------------------------

def test_rmse_and_r2_by_hand():
    truth = np.array([1.0, 2.0, 3.0, 4.0])
    pred = np.array([1.0, 2.0, 3.0, 6.0])
    assert rmse(pred, truth) == pytest.approx(1.0)
    assert r2(pred, truth) == pytest.approx(1 - 4.0 / 5.0)
    assert r2(truth, truth) == 1.0
    with pytest.raises(ValueError):
        r2(truth, np.ones(4))
    with pytest.raises(ValueError):
        rmse(truth, truth[:3])


def test_rel_err():
    np.testing.assert_allclose(rel_err([1.1, -2.0], [1.0, -4.0]), [10.0, 50.0])
    with pytest.raises(ValueError):
        rel_err([1.0, 1.0], [0.0, 1.0])
    errs, skipped = rel_err([1.0, 1.0], [0.0, 2.0], skip_zero=True)
    assert skipped == 1
    np.testing.assert_allclose(errs, [50.0])


def test_five_number():
    s = five_number(np.arange(1.0, 10.0))
    assert s.as_tuple() == (1.0, 3.0, 5.0, 7.0, 9.0)
    assert s.n_outliers == 0
    s = five_number([1.0, 2.0, 3.0, 4.0, 100.0])
    assert s.n_outliers == 1
    with pytest.raises(ValueError):
        five_number([])


def test_relative_l2_and_monotonicity():
    truth = np.array([[3.0, 4.0]])
    np.testing.assert_allclose(relative_l2(truth * 1.1, truth), [0.1])
    series = np.array([[0.0, 1.0, 0.7, 1.2, 1.1], [0.0, 1.0, 2.0, 3.0, 4.0]])
    np.testing.assert_allclose(monotonicity_violation(series), [0.3, 0.0])


# -- configs ---------------------------------------------------------------------------

def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        TrainConfig(loss="huber")
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)


def test_defaults():
    assert default_model_config("fno").modes == 50
    don = default_model_config("deeponet")
    assert don.branch_widths == [130, 130, 130, 130] and don.latent_dim == 130
    assert default_train_config("fno").loss == "mae"
    assert default_train_config("dnn").batch_size is None


def test_hyper_groups():
    groups = hyper_groups()
    assert len(groups) == 6
    assert groups[0]["dnn"].layer_widths == [100, 150, 200, 150, 100]
    assert groups[5]["dnn"].layer_widths == [300] * 4
    assert groups[3]["deeponet"].branch_widths == [150] * 4
    assert groups[3]["deeponet"].trunk_widths == [150] * 3
    assert [(g["fno"].modes, g["fno"].n_layers) for g in groups] == \
        [(1, 4), (5, 4), (9, 4), (1, 1), (1, 2), (1, 3)]


# -- training ----------------------------------------------------------------------------

def test_dnn_learns_smooth_map():
    ds = smooth_dataset(150, seed=2)
    model = RomModel.initialize("dnn", DnnConfig([32, 32]), seed=0)
    res = train(model, ds, TrainConfig(epochs=1500, lr=3e-3, seed=0, patience=1500))
    assert res.val_loss[res.best_epoch] == min(res.val_loss)
    assert res.train_loss[-1] < 0.05 * res.train_loss[0]
    rep = evaluate(res.model, ds, "test", "scalar")
    assert min(q.r2 for q in rep.qois.values()) > 0.95
    assert predict_scalar(res.model, ds.inputs("test")).shape == (len(ds.split["test"]), 2)


@pytest.mark.parametrize("kind,cfg", [
    ("deeponet", DeepOnetConfig.from_layers(16, 2, 2)),
    ("fno", FnoConfig(modes=3, width=6, n_layers=2, grid_len=STEPS, proj_hidden=8)),
])
def test_series_models_train(ds, kind, cfg):
    model = RomModel.initialize(kind, cfg, seed=0, target="series")
    res = train(model, ds, TrainConfig(epochs=150, batch_size=8, lr=3e-3, seed=1, patience=150))
    assert min(res.val_loss) < res.val_loss[0]
    series = predict_series(res.model, ds.inputs("test"))
    assert series.shape == (len(ds.split["test"]), STEPS, 2)
    rep = evaluate(res.model, ds, "test", "series")
    assert len(rep.qois["v_bead"].rel_l2) == len(ds.split["test"])
    scal = evaluate(res.model, ds, "test", "scalar")
    assert scal.target == "scalar"


def test_training_is_deterministic(ds):
    def run():
        m = RomModel.initialize("dnn", DnnConfig([8]), seed=3)
        return train(m, ds, TrainConfig(epochs=30, batch_size=7, seed=4)).model.weights
    assert run().tobytes() == run().tobytes()


def test_early_stopping(ds):
    m = RomModel.initialize("dnn", DnnConfig([8]), seed=0)
    res = train(m, ds, TrainConfig(epochs=5000, lr=5e-2, patience=5, seed=0))
    assert len(res.val_loss) < 5000
    assert len(res.val_loss) - 1 - res.best_epoch == 5
    rows = loss_curve_rows(res)
    assert rows[0]["epoch"] == 0 and len(rows) == len(res.val_loss)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_reported(ds):
    m = RomModel.initialize("dnn", DnnConfig([8]), seed=0)
    m.weights = m.weights * 1e150
    with pytest.raises(DivergenceError):
        train(m, ds, TrainConfig(epochs=3, seed=0))


def test_dnn_rejects_series_target(ds):
    m = RomModel.initialize("dnn", DnnConfig([8]), seed=0, target="series")
    with pytest.raises(ValueError):
        train(m, ds, TrainConfig(epochs=1))


def test_grid_search_ranks_by_validation(ds):
    configs = [DnnConfig([2]), DnnConfig([32, 32])]
    ranked = grid_search("dnn", ds, configs, TrainConfig(epochs=300, lr=3e-3, seed=0))
    assert [e.rank for e in ranked] == [1, 2]
    assert ranked[0].val_rmse <= ranked[1].val_rmse
    assert all(e.report is not None for e in ranked)


# -- worked examples -------------------------------------------------------------------

def sorted_quantile(values, q):
    """Linear interpolation between order statistics."""
    v = sorted(values)
    pos = q * (len(v) - 1)
    lo = int(pos)
    hi = min(lo + 1, len(v) - 1)
    return v[lo] + (pos - lo) * (v[hi] - v[lo])


def test_metric_examples():
    truth = np.array([2.0, 4.0])
    assert rmse(truth, truth) == 0.0 and r2(truth, truth) == 1.0
    np.testing.assert_array_equal(rel_err(truth, truth), [0.0, 0.0])
    assert rmse([1.0, 2.0], truth) == pytest.approx(np.sqrt(5 / 2), rel=1e-15)
    np.testing.assert_allclose(rel_err([1.0, 2.0], truth), [50.0, 50.0])
    y = np.array([1.0, 5.0, 2.0, 8.0])
    assert r2(np.full(4, y.mean()), y) == pytest.approx(0.0, abs=1e-15)


def test_five_number_examples():
    assert five_number([1.0, 2.0, 3.0, 4.0, 5.0]).as_tuple() == (1.0, 2.0, 3.0, 4.0, 5.0)
    assert set(five_number([7.5] * 6).as_tuple()) == {7.5}
    v = np.random.default_rng(0).normal(size=37)
    got = five_number(v).as_tuple()
    want = tuple(sorted_quantile(v.tolist(), q) for q in (0, 0.25, 0.5, 0.75, 1))
    np.testing.assert_allclose(got, want, rtol=1e-14)


def one_sample_dataset():
    rec = smooth_dataset(10).records[0]
    unit = Scaler(np.zeros(2), np.ones(2))
    return Dataset([rec], {"train": [0], "val": [0], "test": [0]}, unit, unit)


def test_zero_learning_rate_keeps_weights(ds):
    m = RomModel.initialize("dnn", DnnConfig([8]), seed=0)
    res = train(m, ds, TrainConfig(epochs=5, lr=0.0, seed=0))
    assert res.model.weights.tobytes() == m.weights.tobytes()


def test_single_sample_memorized():
    one = one_sample_dataset()
    m = RomModel.initialize("dnn", DnnConfig([16, 16]), seed=0)
    res = train(m, one, TrainConfig(epochs=3000, lr=1e-3, seed=0, patience=3000))
    assert min(res.train_loss) <= 1e-6


def test_loss_curves_finite_and_reproducible(ds):
    def run(epochs):
        m = RomModel.initialize("dnn", DnnConfig([8]), seed=1)
        return train(m, ds, TrainConfig(epochs=epochs, seed=2, patience=epochs))
    a, b = run(40), run(40)
    assert np.isfinite(a.train_loss).all() and np.isfinite(a.val_loss).all()
    assert np.array_equal(a.train_loss, b.train_loss) and np.array_equal(a.val_loss, b.val_loss)
    assert run(400).training_time_s > run(4).training_time_s


def test_grid_search_single_and_duplicate(ds):
    cfg = TrainConfig(epochs=20, seed=0)
    only = grid_search("dnn", ds, [DnnConfig([4])], cfg)
    assert len(only) == 1 and only[0].rank == 1
    a, b = grid_search("dnn", ds, [DnnConfig([4]), DnnConfig([4])], cfg)
    assert a.val_rmse == b.val_rmse
    assert a.report.to_json() == b.report.to_json()
