"""Adjoint-state gradient of a data misfit with respect to the speed model.

For the discrete update used by :mod:`fwikit.forward` the exact adjoint is
the same damped leapfrog run forward in reversed time, driven at the
receivers by ``theta^2`` times the time-reversed misfit derivative. Writing
``w^q`` for the adjoint field after ``q`` steps, the gradient is::

    dJ/dtheta = 2 dt^2 / (theta h^2) * sum_{q=1}^{N-1} w^q * L u^{N-1-q}

with ``L`` the raw stencil sum. The forward field is rebuilt backwards from
the boundary tape in lockstep with the adjoint march, so only a handful of
full-field buffers per shot are alive at any time. Replay is exact only
away from the absorber, hence the gradient is returned on the replay region
and is zero elsewhere.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .exceptions import ShapeError
from .forward import Propagator, SimConfig, SourceInjection
from .grid import SpeedModel
from .misfit import W2Config, gather_misfit
from .signals import ShotGather

__all__ = [
    "GradientResult",
    "compute_gradient",
    "total_gradient",
    "shot_gradient",
    "adjoint_injection",
    "adjoint_simulate",
    "finite_difference_check",
]


@dataclass(eq=False)
class GradientResult:
    """Misfit, gradient and bookkeeping of one gradient evaluation.

    Attributes
    ----------
    misfit : float
        Total misfit summed over shots.
    gradient : ndarray, shape (ny, nx)
        ``dJ/dtheta`` in misfit units per (m/s); zero outside the replay region.
    shot_misfits : list of float
    gathers : list of ShotGather
        Simulated data at the evaluated model.
    timings : dict
        Wall-clock seconds of the ``forward``, ``misfit`` and ``adjoint`` phases.
    """

    misfit: float
    gradient: np.ndarray = field(repr=False)
    shot_misfits: list
    gathers: list = field(repr=False)
    timings: dict


def adjoint_injection(theta: SpeedModel, source_gather: ShotGather, dt: float) -> SourceInjection:
    """Reverse the adjoint-source traces and scale them for the adjoint march."""
    rec = source_gather.receivers
    theta2 = theta.values[rec[:, 1], rec[:, 0]] ** 2
    traces = source_gather.data[:, ::-1] * theta2[:, None] / (dt * dt)
    return SourceInjection(rec, traces)


def adjoint_simulate(cfg: SimConfig, theta: SpeedModel, source_gather: ShotGather):
    """March the adjoint field from rest; yields ``(q, w^q)`` for ``q = 0 .. N-1``.

    ``w^q`` pairs with the forward field at step ``N - 1 - q``. The yielded
    arrays are views of live buffers; copy them to keep them.
    """
    prop = Propagator(cfg, theta)
    ab, aj, ai, aamp = prop.pack_sources([adjoint_injection(theta, source_gather, cfg.time.dt)])
    prev, curr = prop.new_buffers(1, 2)
    yield 0, prop.interior(curr)[0]
    for q in range(1, cfg.time.n_steps):
        prop.advance(prev, curr)
        if aamp.shape[1]:
            prev[ab, aj, ai] += aamp[q - 1]
        prev, curr = curr, prev
        yield q, prop.interior(curr)[0]


def _shot_batches(n: int, max_batch: int | None):
    size = n if not max_batch else max(1, int(max_batch))
    return [range(s, min(n, s + size)) for s in range(0, n, size)]


def compute_gradient(
    cfg: SimConfig,
    theta: SpeedModel,
    sources: Sequence[SourceInjection],
    receivers,
    observed: Sequence[ShotGather],
    misfit: str = "l2",
    w2: W2Config = W2Config(),
    max_batch: int | None = None,
) -> GradientResult:
    """Misfit and its gradient over all shots.

    Shots are marched together in batches of ``max_batch`` (all at once by
    default); results do not depend on the batching or the thread count.
    """
    sources = list(sources)
    observed = list(observed)
    if len(sources) != len(observed):
        raise ShapeError(f"{len(sources)} sources but {len(observed)} observed gathers")
    receivers = np.asarray(receivers, dtype=np.int64).reshape(-1, 2)
    prop = Propagator(cfg, theta)
    dt, h = cfg.time.dt, cfg.grid.h
    timings = {"forward": 0.0, "misfit": 0.0, "adjoint": 0.0}
    total_acc = np.zeros(cfg.grid.shape)
    shot_j = [0.0] * len(sources)
    gathers = [None] * len(sources)

    for batch in _shot_batches(len(sources), max_batch):
        inj = [sources[b] for b in batch]
        t0 = time.perf_counter()
        records, halo, final = prop.forward(inj, receivers, record_tape=True)
        t1 = time.perf_counter()
        adj_inj = []
        for pos, b in enumerate(batch):
            sim = ShotGather(records[pos], dt, receivers)
            gathers[b] = sim
            j, src = gather_misfit(sim, observed[b], misfit, w2)
            shot_j[b] = j
            adj_inj.append(adjoint_injection(theta, src, dt))
        t2 = time.perf_counter()
        del records

        ab, aj, ai, aamp = prop.pack_sources(adj_inj)
        aprev, acurr, acc = prop.new_buffers(len(inj), 3)
        state = [aprev, acurr]

        def adjoint_step(q):
            # advance w^{q-1} -> w^q; kernel step q-1 injects sample q-1 of the reversed source
            prev, curr = state
            prop.advance(prev, curr)
            if aamp.shape[1]:
                prev[ab, aj, ai] += aamp[q - 1]
            state[0], state[1] = curr, prev
            return prev

        for _ in prop.reverse_stream(inj, halo, final, adjoint_step, acc, consume=True):
            pass
        prop._check_finite(state[1], k=0)
        for pos in range(len(inj)):
            total_acc += prop.interior(acc[pos])
        del halo, final, aprev, acurr, acc, state
        timings["forward"] += t1 - t0
        timings["misfit"] += t2 - t1
        timings["adjoint"] += time.perf_counter() - t2

    grad = 2.0 * dt * dt / (theta.values * h * h) * total_acc
    grad[~cfg.replay_mask()] = 0.0
    timings["total"] = timings["forward"] + timings["misfit"] + timings["adjoint"]
    return GradientResult(float(sum(shot_j)), grad, shot_j, gathers, timings)


total_gradient = compute_gradient


def shot_gradient(cfg, theta, source: SourceInjection, receivers, observed: ShotGather, misfit="l2", w2=W2Config()):
    """Gradient of a single shot; same as :func:`compute_gradient` with one source."""
    return compute_gradient(cfg, theta, [source], receivers, [observed], misfit, w2)


def _misfit_only(cfg, theta, sources, receivers, observed, misfit, w2, max_batch=None) -> float:
    prop = Propagator(cfg, theta)
    total = 0.0
    for batch in _shot_batches(len(sources), max_batch):
        records, _, _ = prop.forward([sources[b] for b in batch], receivers)
        for pos, b in enumerate(batch):
            sim = ShotGather(records[pos], cfg.time.dt, receivers)
            total += gather_misfit(sim, observed[b], misfit, w2)[0]
    return total


def finite_difference_check(
    cfg: SimConfig,
    theta: SpeedModel,
    sources: Sequence[SourceInjection],
    receivers,
    observed: Sequence[ShotGather],
    misfit: str = "l2",
    w2: W2Config = W2Config(),
    n_directions: int = 3,
    rel_step: float = 1e-4,
    seed: int = 0,
    directions=None,
) -> list[dict]:
    """Compare ``<grad, d>`` against central differences along random directions.

    Directions are smooth random fields supported on the replay region and
    scaled to ``rel_step * max(theta)`` in max norm.
    """
    sources = list(sources)
    res = compute_gradient(cfg, theta, sources, receivers, observed, misfit, w2)
    if directions is None:
        rng = np.random.default_rng(seed)
        mask = cfg.replay_mask()
        directions = []
        for _ in range(n_directions):
            d = rng.standard_normal(cfg.grid.shape)
            # cheap smoothing keeps the perturbation resolvable by the stencil
            for axis in (0, 1):
                d = (np.roll(d, 1, axis) + 2 * d + np.roll(d, -1, axis)) / 4
            d[~mask] = 0.0
            directions.append(d / np.abs(d).max())
    out = []
    for d in directions:
        eps = rel_step * theta.c_max
        plus = SpeedModel(cfg.grid, theta.values + eps * d)
        minus = SpeedModel(cfg.grid, theta.values - eps * d)
        jp = _misfit_only(cfg, plus, sources, receivers, observed, misfit, w2)
        jm = _misfit_only(cfg, minus, sources, receivers, observed, misfit, w2)
        fd = (jp - jm) / (2 * eps)
        ad = float(np.sum(res.gradient * d))
        out.append({"fd": fd, "adjoint": ad, "rel_error": abs(fd - ad) / max(abs(fd), 1e-300)})
    return out
