"""Waveform inversion: the optimizer loop around the adjoint gradient.

Only cells of the replay region are optimized; the absorbing band and the
stencil halo next to it keep their starting values, because the gradient
there is not available (see :mod:`fwikit.adjoint`). Internally the optimizer
works on speeds in km/s and on the misfit divided by its starting value, so
its tolerances and first step are independent of the data amplitude.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from sklearn.base import BaseEstimator

from . import _kernels
from .adjoint import compute_gradient
from .dataset import ShotDataset
from .exceptions import NotFittedError, ShapeError
from .forward import SimConfig, SourceInjection, max_stable_dt, simulate_shots
from .grid import SpeedModel, model_mse
from .misfit import W2Config, gather_misfit
from .optimize import IterationLog, OptimizeResult, OptimizerConfig, lbfgsb_minimize, projected_gradient
from .signals import ShotGather

__all__ = ["InversionResult", "invert", "WaveformInversion", "check_bounds"]

SPEED_SCALE = 1000.0
DEFAULT_BOUNDS = (1000.0, 7000.0)


@dataclass(eq=False)
class InversionResult:
    """Final model and iteration history of :func:`invert`.

    ``history[0]`` describes the starting model. ``gradient_seconds`` holds
    the wall time of every misfit-and-gradient evaluation.
    """

    model: SpeedModel
    history: list = field(repr=False)
    gradient_seconds: list = field(repr=False)
    optimizer: OptimizeResult = field(repr=False)
    misfit_scale: float = 1.0

    @property
    def n_iterations(self) -> int:
        return len(self.history) - 1

    @property
    def final_misfit(self) -> float:
        return self.history[-1].f


def check_bounds(bounds) -> tuple[float, float]:
    lo, hi = (float(b) for b in bounds)
    if not 0 < lo < hi:
        raise ValueError(f"bounds must satisfy 0 < lo < hi, got ({lo}, {hi})")
    return lo, hi


def invert(
    cfg: SimConfig,
    sources: Sequence[SourceInjection],
    receivers,
    observed: Sequence[ShotGather],
    theta0: SpeedModel,
    misfit: str = "l2",
    w2: W2Config = W2Config(),
    optimizer: OptimizerConfig = OptimizerConfig(),
    bounds=DEFAULT_BOUNDS,
    truth: SpeedModel | None = None,
    callback: Callable[[IterationLog, SpeedModel], None] | None = None,
    max_batch: int | None = None,
) -> InversionResult:
    """Fit a speed model to ``observed`` starting from ``theta0``.

    ``callback(log, model)`` runs after the start and every accepted
    iteration; ``log.model_mse`` is filled when ``truth`` is given.
    """
    lo, hi = check_bounds(bounds)
    sources = list(sources)
    observed = list(observed)
    if len(sources) != len(observed):
        raise ShapeError(f"{len(sources)} sources but {len(observed)} observed gathers")
    for g in observed:
        if g.n_samples != cfg.time.n_steps or g.dt != cfg.time.dt:
            raise ShapeError("observed data were not sampled on the configured time axis")
    if theta0.values.min() < lo or theta0.values.max() > hi:
        raise ValueError(f"starting model leaves the bounds [{lo:g}, {hi:g}]")
    limit = max_stable_dt(np.array([hi]), cfg.grid.h, cfg.stencil)
    if cfg.time.dt > limit * (1 + 1e-12):
        raise ValueError(f"dt={cfg.time.dt:.4g}s is unstable for the upper bound {hi:g} m/s (limit {limit:.4g}s)")

    mask = cfg.replay_mask()
    base = np.array(theta0.values)
    x0 = base[mask] / SPEED_SCALE
    state = {"scale": None}
    grad_seconds: list[float] = []
    history: list[IterationLog] = []
    t_start = time.perf_counter()

    def model_of(x) -> SpeedModel:
        theta = base.copy()
        # untouched cells keep their exact starting value despite the rescaling
        theta[mask] = np.where(x == x0, base[mask], x * SPEED_SCALE)
        return SpeedModel(cfg.grid, theta)

    def objective(x):
        t0 = time.perf_counter()
        res = compute_gradient(cfg, model_of(x), sources, receivers, observed, misfit, w2, max_batch)
        grad_seconds.append(time.perf_counter() - t0)
        if state["scale"] is None:
            state["scale"] = res.misfit if res.misfit > 0 else 1.0
        scale = state["scale"]
        return res.misfit / scale, res.gradient[mask] * (SPEED_SCALE / scale)

    def record(log: IterationLog, x):
        scale = state["scale"]
        model = model_of(x)
        entry = IterationLog(
            log.iteration,
            log.f * scale,
            log.grad_inf_norm * scale / SPEED_SCALE,
            log.step,
            log.evaluations,
            time.perf_counter() - t_start,
            model_mse(model, truth) if truth is not None else None,
        )
        history.append(entry)
        if callback is not None:
            callback(entry, model)

    # evaluate the start once so it can be logged; the optimizer reuses it
    f0, g0 = objective(x0)
    lower = np.full_like(x0, lo / SPEED_SCALE)
    upper = np.full_like(x0, hi / SPEED_SCALE)
    pg0 = float(np.abs(projected_gradient(x0, g0, lower, upper)).max()) if x0.size else 0.0
    record(IterationLog(0, f0, pg0, 0.0, 1, 0.0), x0)
    first = {"pending": True}

    def cached(x):
        if first["pending"] and np.array_equal(x, x0):
            first["pending"] = False
            return f0, g0
        first["pending"] = False
        return objective(x)

    result = lbfgsb_minimize(cached, x0, lower, upper, optimizer, callback=record)
    return InversionResult(model_of(result.x), history, grad_seconds, result, state["scale"])


def _check_fitted(est):
    if not hasattr(est, "model_"):
        raise NotFittedError(f"{type(est).__name__} is not fitted yet; call fit first")


class WaveformInversion(BaseEstimator):
    """Full-waveform inversion as an estimator.

    ``fit`` takes a :class:`~fwikit.dataset.ShotDataset` (observed data plus
    acquisition) and stores the recovered speed map in ``model_``;
    ``predict`` simulates the dataset's shots through that map.

    Parameters
    ----------
    misfit : {"l2", "w2"}
    w2_config : W2Config, optional
    optimizer : OptimizerConfig, optional
    bounds : tuple of float
        Box constraint on the speed in m/s.
    initial_speed : float or SpeedModel
        Uniform starting speed, or a full starting model.
    max_batch : int, optional
        Shots marched together; all at once by default.
    workers : int, optional
        Thread count of the compiled kernels during ``fit``/``predict``.
    """

    def __init__(
        self,
        misfit="l2",
        w2_config=None,
        optimizer=None,
        bounds=DEFAULT_BOUNDS,
        initial_speed=1450.0,
        max_batch=None,
        workers=None,
    ):
        self.misfit = misfit
        self.w2_config = w2_config
        self.optimizer = optimizer
        self.bounds = bounds
        self.initial_speed = initial_speed
        self.max_batch = max_batch
        self.workers = workers

    def _validate(self, dataset):
        if not isinstance(dataset, ShotDataset):
            raise TypeError(f"expected a ShotDataset, got {type(dataset).__name__}")
        if str(self.misfit).lower() not in ("l2", "w2"):
            raise ValueError(f"misfit must be 'l2' or 'w2', got {self.misfit!r}")
        check_bounds(self.bounds)

    def _start_model(self, dataset) -> SpeedModel:
        if isinstance(self.initial_speed, SpeedModel):
            if self.initial_speed.grid != dataset.config.grid:
                raise ShapeError("starting model does not match the dataset grid")
            return self.initial_speed
        return SpeedModel.uniform(dataset.config.grid, float(self.initial_speed))

    def fit(self, X: ShotDataset, y=None, truth: SpeedModel | None = None, callback=None):
        """Invert the observed data in ``X``; ``truth`` only feeds the MSE diagnostic."""
        self._validate(X)
        old = _kernels.set_workers(self.workers) if self.workers else None
        try:
            result = invert(
                X.config,
                X.injections(),
                X.receivers,
                X.gathers(),
                self._start_model(X),
                misfit=str(self.misfit).lower(),
                w2=self.w2_config or W2Config(),
                optimizer=self.optimizer or OptimizerConfig(),
                bounds=self.bounds,
                truth=truth,
                callback=callback,
                max_batch=self.max_batch,
            )
        finally:
            if old is not None:
                _kernels.set_workers(old)
        self.model_ = result.model
        self.history_ = result.history
        self.n_iter_ = result.n_iterations
        self.result_ = result
        return self

    def predict(self, X: ShotDataset) -> np.ndarray:
        """Simulated data ``(n_emitters, n_receivers, n_steps)`` through ``model_``."""
        _check_fitted(self)
        self._validate(X)
        out = simulate_shots(X.config, self.model_, X.injections(), X.receivers)
        return np.stack([g.data for g, _ in out])

    def score(self, X: ShotDataset, y=None) -> float:
        """Negative misfit of the fitted model against ``X`` (higher is better)."""
        pred = self.predict(X)
        dt = X.config.time.dt
        sims = [ShotGather(p, dt, X.receivers) for p in pred]
        j, _ = gather_misfit(sims, X.gathers(), str(self.misfit).lower(), self.w2_config or W2Config())
        return -j
