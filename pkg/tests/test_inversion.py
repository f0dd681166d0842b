import numpy as np
import pytest
from sklearn.base import clone

from fwikit.dataset import ShotDataset
from fwikit.exceptions import FormatError, NotFittedError, ShapeError
from fwikit.experiments import gradient_check_problem
from fwikit.forward import simulate_shots
from fwikit.grid import SpeedModel, model_mse
from fwikit.inversion import WaveformInversion, check_bounds, invert
from fwikit.optimize import OptimizerConfig

BOUNDS = (1000.0, 2100.0)


@pytest.fixture(scope="module")
def problem():
    return gradient_check_problem(n=48, n_steps=400)


@pytest.fixture(scope="module")
def dataset(problem):
    sim, truth, _, src, rec, obs = problem
    return ShotDataset(np.stack([g.data for g in obs]), sim, rec, src[0].cells, src[0].traces[0],
                       meta={"name": "bump"})


def test_self_generated_data_stops_at_start(problem):
    sim, truth, _, src, rec, obs = problem
    res = invert(sim, src, rec, obs, truth, bounds=BOUNDS)
    assert res.n_iterations == 0
    np.testing.assert_array_equal(res.model.values, truth.values)


@pytest.mark.parametrize("misfit", ["l2", "w2"])
def test_inversion_reduces_misfit(problem, misfit):
    sim, truth, start, src, rec, obs = problem
    logs = []
    res = invert(sim, src, rec, obs, start, misfit, optimizer=OptimizerConfig(max_iterations=4),
                 bounds=BOUNDS, truth=truth, callback=lambda log, m: logs.append(log))
    assert 1 <= res.n_iterations <= 4
    fs = [h.f for h in res.history]
    assert all(b <= a for a, b in zip(fs, fs[1:]))
    assert fs[-1] < fs[0]
    assert res.history[0].model_mse == pytest.approx(model_mse(start, truth))
    assert len(logs) == len(res.history)
    assert BOUNDS[0] <= res.model.values.min() and res.model.values.max() <= BOUNDS[1]
    # cells outside the replay region keep their starting values
    outside = ~sim.replay_mask()
    np.testing.assert_array_equal(res.model.values[outside], start.values[outside])
    assert len(res.gradient_seconds) == res.optimizer.evaluations


def test_invert_rejects_bad_input(problem):
    sim, truth, start, src, rec, obs = problem
    with pytest.raises(ValueError):
        invert(sim, src, rec, obs, start, bounds=(1000.0, 7000.0))  # dt unstable at 7000 m/s
    with pytest.raises(ValueError):
        invert(sim, src, rec, obs, SpeedModel.uniform(sim.grid, 900.0), bounds=BOUNDS)
    with pytest.raises(ShapeError):
        invert(sim, src * 2, rec, obs, start, bounds=BOUNDS)
    with pytest.raises(ValueError):
        check_bounds((5.0, 1.0))


# --- estimator ---------------------------------------------------------------


def test_params_and_clone():
    est = WaveformInversion(misfit="w2", bounds=BOUNDS, initial_speed=1500.0)
    params = est.get_params()
    assert params["misfit"] == "w2" and params["bounds"] == BOUNDS
    twin = clone(est)
    assert twin.get_params() == params
    est.set_params(misfit="l2")
    assert est.misfit == "l2"


def test_not_fitted(dataset):
    with pytest.raises(NotFittedError):
        WaveformInversion().predict(dataset)


def test_fit_predict_score(problem, dataset):
    sim, truth, start, *_ = problem
    est = WaveformInversion(bounds=BOUNDS, initial_speed=1500.0, optimizer=OptimizerConfig(max_iterations=2))
    assert est.fit(dataset, truth=truth) is est
    assert est.n_iter_ == len(est.history_) - 1 <= 2
    pred = est.predict(dataset)
    assert pred.shape == dataset.shape
    direct = simulate_shots(sim, est.model_, dataset.injections(), dataset.receivers)[0][0].data
    np.testing.assert_array_equal(pred[0], direct)
    assert est.score(dataset) == pytest.approx(-est.history_[-1].f, rel=1e-9)


def test_validation(dataset):
    with pytest.raises(TypeError):
        WaveformInversion().fit(np.zeros((1, 2, 3)))
    with pytest.raises(ValueError):
        WaveformInversion(misfit="l1").fit(dataset)
    with pytest.raises(ValueError):
        WaveformInversion(bounds=(2.0, 1.0)).fit(dataset)


def test_dataset_roundtrip_bitwise(tmp_path, dataset):
    ds = ShotDataset(dataset.data.astype(np.float32), dataset.config, dataset.receivers, dataset.emitters,
                     dataset.source_trace, dataset.meta)
    ds.save(tmp_path / "obs")
    back = ShotDataset.load(tmp_path / "obs.json")
    np.testing.assert_array_equal(back.data, ds.data)
    np.testing.assert_array_equal(back.receivers, ds.receivers)
    np.testing.assert_array_equal(back.source_trace, ds.source_trace)
    assert back.config == ds.config and back.meta == ds.meta


def test_dataset_corrupt_payload(tmp_path, dataset):
    meta, binp = dataset.save(tmp_path / "obs")
    binp.write_bytes(binp.read_bytes()[:-4])
    with pytest.raises(FormatError):
        ShotDataset.load(meta)


def test_dataset_shape_check(dataset):
    with pytest.raises(ShapeError):
        ShotDataset(dataset.data[:, :2], dataset.config, dataset.receivers, dataset.emitters, dataset.source_trace)
