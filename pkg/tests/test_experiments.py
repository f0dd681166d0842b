import csv
import json

import numpy as np
import pytest

from fwikit.dataset import ShotDataset
from fwikit.experiments import (
    ExperimentConfig,
    experiment_setup,
    misfit_shift_scan,
    run_forward_experiment,
    run_gradient_check,
    run_inversion_experiment,
)
from fwikit.grid import load_field
from fwikit.optimize import OptimizerConfig
from fwikit.signals import RickerParams
from fwikit.specimens import SpecimenKind


def _green_template(src, dt, delay):
    """Source convolved with the 2-D Green's function, shifted so the ray arrives at t = 0."""
    tau = np.arange(src.size + 1) * dt
    prim = 2 * np.log(np.sqrt(tau) + np.sqrt(tau + 2 * delay))
    return np.convolve(src, np.diff(prim) / (2 * np.pi))[: src.size]


def test_config_roundtrip(tmp_path):
    cfg = ExperimentConfig(specimen="II", scale=0.25, misfit="l2", optimizer=OptimizerConfig(max_iterations=7))
    path = cfg.save(tmp_path / "cfg.json")
    back = ExperimentConfig.load(path)
    assert back.to_dict() == cfg.to_dict()
    assert back.specimen == "acrylic_sdh2" and back.optimizer.max_iterations == 7
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict({"specimen": "camembert", "sclae": 0.3})
    with pytest.raises(ValueError):
        ExperimentConfig(scale=1.5)


def test_initial_speeds():
    assert ExperimentConfig(specimen="camembert").start_speed == 3000.0
    for kind in SpecimenKind:
        if kind is not SpecimenKind.CAMEMBERT:
            assert ExperimentConfig(specimen=kind.value).start_speed == 1450.0


def test_full_scale_dimensions():
    setup = experiment_setup(ExperimentConfig(scale=1.0))
    assert (len(setup.emitters), len(setup.receivers), setup.sim.time.n_steps) == (10, 128, 8000)
    assert setup.sim.grid.shape == (540, 540)


def test_zero_amplitude_gives_zero_data():
    cfg = ExperimentConfig(specimen="steel_hole", scale=0.15, source_amplitude=0.0, emitter_elements=(1,))
    ds = run_forward_experiment(cfg, write=False)
    assert ds.shape == (2, 128, 1200)
    assert not ds.data.any()


def test_water_arrival_time():
    # all-water specimen; a 0.5 MHz pulse keeps grid dispersion well below one step
    cfg = ExperimentConfig(specimen="steel_square", scale=0.2, materials={"steel": 1450.0},
                           emitter_elements=(32,), f0=0.5e6)
    ds = run_forward_experiment(cfg, write=False)
    dt = ds.config.time.dt
    src = ds.emitters[0]
    r = np.flatnonzero((ds.receivers[:, 0] == src[0]) & (ds.receivers[:, 1] != src[1]))[0]
    dist = abs(ds.receivers[r, 1] - src[1]) * cfg.h
    assert dist == pytest.approx(110e-3 * cfg.scale, abs=cfg.h)
    expected = dist / 1450.0
    tmpl = _green_template(ds.source_trace, dt, expected)
    xc = np.correlate(ds.data[0, r], tmpl, "full")[tmpl.size - 1:]
    k = int(np.argmax(xc))
    y0, y1, y2 = xc[k - 1:k + 2]
    lag = (k + 0.5 * (y0 - y2) / (y0 - 2 * y1 + y2)) * dt
    assert abs(lag - expected) <= 2 * dt


def test_forward_writes_files(tmp_path):
    cfg = ExperimentConfig(specimen="acrylic_star", scale=0.15, emitter_elements=(1,), output_dir=str(tmp_path))
    ds = run_forward_experiment(cfg)
    back = ShotDataset.load(tmp_path / "observed")
    np.testing.assert_array_equal(back.data, ds.data.astype(np.float32))
    truth = load_field(tmp_path / "truth")
    assert truth.values.max() == 2730.0
    assert back.meta["specimen"] == "acrylic_star"


def test_shift_scan(tmp_path):
    rows = misfit_shift_scan(RickerParams(), path=tmp_path / "scan.csv")
    assert rows.shape == (241, 3)
    mid = 120
    assert rows[mid, 0] == 0.0
    assert rows[mid, 1] == 0.0 and abs(rows[mid, 2]) <= 1e-12
    assert rows[:, 1].max() == 1.0 and rows[:, 2].max() == 1.0
    with open(tmp_path / "scan.csv") as fh:
        header = next(csv.reader(fh))
    assert header == ["shift_seconds", "l2_misfit", "w2_misfit"]
    with pytest.raises(ValueError):
        misfit_shift_scan(RickerParams(), max_shift=9e-6)


def test_gradient_check_helper():
    rows = run_gradient_check("l2", n_directions=1)
    assert rows[0]["rel_error"] <= 1e-2


@pytest.mark.parametrize("kind", [k.value for k in SpecimenKind])
def test_pipeline_smoke(tmp_path, kind):
    for misfit in ("l2", "w2"):
        out = tmp_path / misfit
        cfg = ExperimentConfig(specimen=kind, scale=0.2, misfit=misfit, emitter_elements=(32,),
                               optimizer=OptimizerConfig(max_iterations=5), output_dir=str(out),
                               model_snapshot_every=2)
        report = run_inversion_experiment(cfg)
        assert 0 <= report["iterations"] <= 5
        assert report["initial_speed"] == (3000.0 if kind == "camembert" else 1450.0)
        for name in ("report.json", "iterations.csv", "final_model.json", "config.json", "observed.json",
                     "models/model_0000.json"):
            assert (out / name).exists(), name
        saved = json.loads((out / "report.json").read_text())
        assert set(saved) >= {"final_l2_misfit", "final_w2_misfit", "model_mse", "mean_gradient_seconds"}
        with open(out / "iterations.csv") as fh:
            lines = list(csv.reader(fh))
        assert lines[0] == ["iter", "J", "grad_inf_norm", "model_mse", "seconds"]
        assert len(lines) == report["iterations"] + 2
