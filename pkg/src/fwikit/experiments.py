"""End-to-end experiment drivers: synthetic data, inversion runs and misfit scans.

Desk scale: the scale factor ``s`` shrinks the physical domain (150 mm at
``s = 1``), the array geometry, the specimen and the record length, while the
grid spacing stays at 300 um so the number of cells per wavelength does not
change. The absorbing band is added outside the physical domain.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import _kernels
from .adjoint import finite_difference_check
from .dataset import ShotDataset
from .forward import AbsorberSpec, SimConfig, SourceInjection, max_stable_dt, simulate_forward, simulate_shots, stencil_coefficients
from .grid import GridSpec, SpeedModel, TimeAxis, model_mse, save_field
from .inversion import DEFAULT_BOUNDS, invert
from .misfit import OffsetRule, W2Config, gather_misfit, l2_misfit, w2_misfit
from .optimize import OptimizerConfig
from .signals import RickerParams, ShotGather, Trace, ricker_sample, ricker_trace
from .specimens import DEFAULT_GEOMETRY, DEFAULT_MATERIALS, SpecimenKind, build_acquisition, build_specimen

__all__ = [
    "ExperimentConfig",
    "experiment_setup",
    "run_forward_experiment",
    "run_inversion_experiment",
    "misfit_shift_scan",
    "gradient_check_problem",
    "run_gradient_check",
    "write_history_csv",
]

logger = logging.getLogger(__name__)

FULL_DOMAIN = 150e-3
FULL_STEPS = 8000
DT_SAFETY = 0.9
HISTORY_HEADER = ("iter", "J", "grad_inf_norm", "model_mse", "seconds")


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce one synthetic experiment.

    Serialized as JSON; unknown keys are rejected so typos surface early.
    """

    specimen: str = "camembert"
    scale: float = 1.0
    misfit: str = "w2"
    w2: W2Config = field(default_factory=W2Config)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    materials: dict = field(default_factory=lambda: dict(DEFAULT_MATERIALS))
    geometry: dict = field(default_factory=lambda: dict(DEFAULT_GEOMETRY))
    output_dir: str = "runs"
    workers: int | None = None
    h: float = 300e-6
    absorber_width: int = 20
    absorber_strength: float = 5.0
    stencil_radius: int = 4
    f0: float = 1.0e6
    bandwidth: float = 0.9
    source_amplitude: float | None = None
    emitter_elements: tuple = (1, 16, 32, 48, 64)
    bounds: tuple = DEFAULT_BOUNDS
    initial_speed: float | None = None
    dt_reference_speed: float = 7000.0
    max_batch: int | None = None
    model_snapshot_every: int = 0
    seed: int = 0

    def __post_init__(self):
        self.specimen = SpecimenKind.parse(self.specimen).value
        if not 0 < self.scale <= 1:
            raise ValueError(f"scale must lie in (0, 1], got {self.scale}")
        self.misfit = str(self.misfit).lower()
        if self.misfit not in ("l2", "w2"):
            raise ValueError(f"misfit must be 'l2' or 'w2', got {self.misfit!r}")
        if isinstance(self.w2, dict):
            self.w2 = W2Config(**self.w2)
        if isinstance(self.optimizer, dict):
            self.optimizer = OptimizerConfig(**self.optimizer)
        self.materials = {**DEFAULT_MATERIALS, **self.materials}
        self.geometry = {**DEFAULT_GEOMETRY, **self.geometry}
        self.emitter_elements = tuple(int(e) for e in self.emitter_elements)
        self.bounds = tuple(float(b) for b in self.bounds)

    @property
    def kind(self) -> SpecimenKind:
        return SpecimenKind.parse(self.specimen)

    @property
    def background_speed(self) -> float:
        if self.kind is SpecimenKind.CAMEMBERT:
            return self.materials["camembert_medium"]
        return self.materials["water"]

    @property
    def start_speed(self) -> float:
        return self.background_speed if self.initial_speed is None else float(self.initial_speed)

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        w2 = asdict(self.w2)
        w2["offset_rule"] = self.w2.offset_rule.value
        d["w2"] = w2
        d["optimizer"] = self.optimizer.to_dict()
        d["emitter_elements"] = list(self.emitter_elements)
        d["bounds"] = list(self.bounds)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown experiment keys: {sorted(extra)}")
        d = dict(d)
        if "w2" in d and isinstance(d["w2"], dict) and "offset_rule" in d["w2"]:
            d["w2"] = {**d["w2"], "offset_rule": OffsetRule(d["w2"]["offset_rule"])}
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2))
        return path


@dataclass(eq=False)
class ExperimentSetup:
    """Resolved simulation objects for an :class:`ExperimentConfig`."""

    sim: SimConfig
    truth: SpeedModel
    receivers: np.ndarray
    emitters: np.ndarray
    source_trace: np.ndarray

    def injections(self) -> list[SourceInjection]:
        return [SourceInjection.point(tuple(c), self.source_trace) for c in self.emitters]


def experiment_setup(cfg: ExperimentConfig) -> ExperimentSetup:
    """Build grid, time axis, true model, acquisition and source for ``cfg``."""
    w = cfg.absorber_width
    n_phys = int(round(FULL_DOMAIN / cfg.h * cfg.scale))
    grid = GridSpec(n_phys + 2 * w, n_phys + 2 * w, cfg.h)
    truth = build_specimen(cfg.kind, grid, cfg.materials, cfg.geometry, cfg.scale, w)
    stencil = stencil_coefficients(cfg.stencil_radius)
    c_dt = max(cfg.dt_reference_speed, truth.c_max, cfg.bounds[1])
    dt = DT_SAFETY * max_stable_dt(np.array([c_dt]), cfg.h, stencil)
    axis = TimeAxis(dt, int(round(FULL_STEPS * cfg.scale)))
    absorber = AbsorberSpec(width=w, strength=cfg.absorber_strength, reference_speed=cfg.background_speed)
    sim = SimConfig(grid, axis, stencil, absorber)
    acq = build_acquisition(grid, cfg.scale, emitter_elements=cfg.emitter_elements, absorber_width=w)
    amp = 1.0 / (dt * dt) if cfg.source_amplitude is None else float(cfg.source_amplitude)
    pulse = ricker_trace(RickerParams(cfg.f0, cfg.bandwidth), axis, amplitude=amp).samples
    return ExperimentSetup(sim, truth, acq.receivers, acq.emitters, np.array(pulse))


def _apply_workers(n):
    return _kernels.set_workers(n) if n else None


def _output_dir(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def run_forward_experiment(cfg: ExperimentConfig, write: bool = True) -> ShotDataset:
    """Simulate every emission against the true specimen.

    Writes ``observed.json``/``observed.bin`` and ``truth.json``/``truth.bin``
    into ``cfg.output_dir`` unless ``write`` is false.
    """
    setup = experiment_setup(cfg)
    old = _apply_workers(cfg.workers)
    try:
        shots = simulate_shots(setup.sim, setup.truth, setup.injections(), setup.receivers)
    finally:
        if old is not None:
            _kernels.set_workers(old)
    data = np.stack([g.data for g, _ in shots])
    meta = {"specimen": cfg.specimen, "scale": cfg.scale, "materials": cfg.materials, "geometry": cfg.geometry}
    ds = ShotDataset(data, setup.sim, setup.receivers, setup.emitters, setup.source_trace, meta)
    if write:
        out = _output_dir(cfg)
        ds.save(out / "observed")
        save_field(setup.truth, out / "truth")
    return ds


def write_history_csv(history, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(HISTORY_HEADER)
        for log in history:
            mse = "" if log.model_mse is None else repr(log.model_mse)
            wr.writerow([log.iteration, repr(log.f), repr(log.grad_inf_norm), mse, f"{log.seconds:.6f}"])
    return path


def final_misfits(sim: SimConfig, model: SpeedModel, dataset: ShotDataset, w2: W2Config) -> dict:
    """L2 and W2 misfit of ``model`` against the dataset, summed over shots."""
    shots = simulate_shots(sim, model, dataset.injections(), dataset.receivers)
    sims = [g for g, _ in shots]
    obs = dataset.gathers()
    return {"l2": gather_misfit(sims, obs, "l2")[0], "w2": gather_misfit(sims, obs, "w2", w2)[0]}


def run_inversion_experiment(cfg: ExperimentConfig, dataset: ShotDataset | None = None, write: bool = True) -> dict:
    """Invert synthetic data for ``cfg.specimen`` and summarize the run.

    Returns the report dictionary (also written to ``report.json``) holding
    the final L2 and W2 misfits, the model MSE against the truth and the mean
    gradient time. With ``write`` the iteration CSV, the final model and
    optional model snapshots are stored in ``cfg.output_dir``.
    """
    setup = experiment_setup(cfg)
    if dataset is None:
        dataset = run_forward_experiment(cfg, write=write)
    out = _output_dir(cfg) if write else None
    start = SpeedModel.uniform(setup.sim.grid, cfg.start_speed)
    every = int(cfg.model_snapshot_every or 0)

    def snapshot(log, model):
        if out is not None and every > 0 and log.iteration % every == 0:
            save_field(model, out / "models" / f"model_{log.iteration:04d}")
        logger.info("iter %d J=%.6e mse=%s", log.iteration, log.f, log.model_mse)

    old = _apply_workers(cfg.workers)
    t0 = time.perf_counter()
    try:
        result = invert(
            setup.sim,
            dataset.injections(),
            dataset.receivers,
            dataset.gathers(),
            start,
            misfit=cfg.misfit,
            w2=cfg.w2,
            optimizer=cfg.optimizer,
            bounds=cfg.bounds,
            truth=setup.truth,
            callback=snapshot,
            max_batch=cfg.max_batch,
        )
        wall = time.perf_counter() - t0
        fm = final_misfits(setup.sim, result.model, dataset, cfg.w2)
    finally:
        if old is not None:
            _kernels.set_workers(old)
    grad_t = np.asarray(result.gradient_seconds)
    report = {
        "specimen": cfg.specimen,
        "misfit": cfg.misfit,
        "scale": cfg.scale,
        "grid": [setup.sim.grid.nx, setup.sim.grid.ny],
        "n_steps": setup.sim.time.n_steps,
        "dt": setup.sim.time.dt,
        "n_emitters": dataset.n_emitters,
        "initial_speed": cfg.start_speed,
        "iterations": result.n_iterations,
        "evaluations": len(grad_t),
        "optimizer_message": result.optimizer.message,
        "final_l2_misfit": fm["l2"],
        "final_w2_misfit": fm["w2"],
        "initial_model_mse": result.history[0].model_mse,
        "model_mse": model_mse(result.model, setup.truth),
        "mean_gradient_seconds": float(grad_t.mean()) if grad_t.size else 0.0,
        "wall_seconds": wall,
    }
    if out is not None:
        write_history_csv(result.history, out / "iterations.csv")
        save_field(result.model, out / "final_model")
        cfg.save(out / "config.json")
        (out / "report.json").write_text(json.dumps(report, indent=2))
    report["result"] = result
    return report


def misfit_shift_scan(
    params: RickerParams = RickerParams(),
    max_shift: float = 3e-6,
    step: float = 25e-9,
    dt: float = 5e-9,
    window: float = 20e-6,
    w2: W2Config = W2Config(),
    path=None,
) -> np.ndarray:
    """L2 and W2 misfit between a pulse and time-shifted copies of it.

    Returns rows ``(shift_seconds, l2, w2)`` with both curves divided by their
    maximum. ``path`` optionally receives the rows as CSV.
    """
    n_shift = int(round(max_shift / step))
    shifts = np.arange(-n_shift, n_shift + 1) * step
    n = int(round(window / dt)) + 1
    t = np.arange(n) * dt
    mid = 0.5 * window
    support = 2.0 * params.default_center
    if mid - max_shift - support < 0:
        raise ValueError("shift range does not fit inside the trace window")
    ref = Trace(ricker_sample(t - mid, params), dt)
    rows = np.empty((shifts.size, 3))
    for k, s in enumerate(shifts):
        moved = Trace(ricker_sample(t - mid - s, params), dt)
        rows[k] = (s, l2_misfit(moved, ref), w2_misfit(moved, ref, w2))
    for col in (1, 2):
        peak = rows[:, col].max()
        if peak > 0:
            rows[:, col] /= peak
    if path is not None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(("shift_seconds", "l2_misfit", "w2_misfit"))
            for r in rows:
                wr.writerow([repr(float(v)) for v in r])
    return rows


def gradient_check_problem(n: int = 60, n_steps: int = 600, seed: int = 0):
    """Small single-shot problem for checking the adjoint gradient.

    A smooth Gaussian speed bump in water is the truth and a uniform
    1500 m/s map the starting point; one source faces four receivers.

    Returns ``(sim, truth, start, sources, receivers, observed)``.
    """
    rng = np.random.default_rng(seed)
    grid = GridSpec(n, n, 3e-4)
    X, Y = grid.coordinates()
    cx, cy = grid.h * (n / 2 + rng.uniform(-3, 3)), grid.h * (n / 2 + rng.uniform(-3, 3))
    bump = 600.0 * np.exp(-((X - cx) ** 2 + (Y - cy) ** 2) / (10 * grid.h) ** 2)
    truth = SpeedModel(grid, 1450.0 + bump)
    start = SpeedModel.uniform(grid, 1500.0)
    stencil = stencil_coefficients(4)
    dt = DT_SAFETY * max_stable_dt(np.array([2100.0]), grid.h, stencil)
    sim = SimConfig(grid, TimeAxis(dt, n_steps), stencil, AbsorberSpec(width=10))
    lo, hi = 16, n - 16
    src = SourceInjection.point((n // 3, lo), ricker_trace(RickerParams(), sim.time), 1.0 / dt**2)
    receivers = np.array([(i, hi) for i in np.linspace(lo, hi - 1, 4).round().astype(int)])
    observed = [simulate_forward(sim, truth, src, receivers)[0]]
    return sim, truth, start, [src], receivers, observed


def run_gradient_check(misfit: str = "l2", n_directions: int = 3, seed: int = 0, w2: W2Config = W2Config()):
    """Finite-difference check of the adjoint gradient on :func:`gradient_check_problem`."""
    sim, _, start, sources, receivers, observed = gradient_check_problem(seed=seed)
    return finite_difference_check(sim, start, sources, receivers, observed, misfit, w2, n_directions, seed=seed)
