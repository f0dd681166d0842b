"""Projected limited-memory BFGS for box-constrained minimization.

Bounds are handled by projecting trial points onto the box and freezing
variables that sit on a bound with the gradient pushing outwards. The
quasi-Newton direction is built from curvature pairs restricted to the free
variables, so it is always a descent direction on that subspace.
"""

from __future__ import annotations

import logging
import time
from collections import deque
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

__all__ = ["OptimizerConfig", "IterationLog", "OptimizeResult", "lbfgsb_minimize", "projected_gradient"]

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class OptimizerConfig:
    """Settings of :func:`lbfgsb_minimize`.

    Parameters
    ----------
    max_iterations : int
        Outer iterations (each one accepted step).
    memory : int
        Number of curvature pairs kept.
    pgtol : float
        Stop when the projected gradient's max norm drops below
        ``pgtol * max(1, |f|)``.
    ftol : float
        Relative decrease below which an iteration counts as stalled.
    stall_iterations : int
        Consecutive stalled iterations that end the run.
    initial_step : float or None
        Max-norm length of the very first step; defaults to ``1 / |g|_inf``
        capped at 1.
    c1, c2 : float
        Sufficient-decrease and curvature constants of the line search.
    max_evaluations_per_iteration : int
    """

    max_iterations: int = 200
    memory: int = 10
    pgtol: float = 1e-12
    ftol: float = 1e-9
    stall_iterations: int = 3
    initial_step: float | None = None
    c1: float = 1e-4
    c2: float = 0.9
    max_evaluations_per_iteration: int = 20

    def __post_init__(self):
        if self.max_iterations < 1 or self.memory < 1:
            raise ValueError("max_iterations and memory must be >= 1")
        if not 0 < self.c1 < self.c2 < 1:
            raise ValueError("line-search constants need 0 < c1 < c2 < 1")
        if self.initial_step is not None and not self.initial_step > 0:
            raise ValueError("initial_step must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class IterationLog:
    """One accepted iterate. ``model_mse`` is filled in by callers that know the truth."""

    iteration: int
    f: float
    grad_inf_norm: float
    step: float
    evaluations: int
    seconds: float
    model_mse: float | None = None


@dataclass(eq=False)
class OptimizeResult:
    x: np.ndarray = field(repr=False)
    f: float
    grad: np.ndarray = field(repr=False)
    iterations: int
    evaluations: int
    converged: bool
    message: str
    history: list = field(default_factory=list, repr=False)


def projected_gradient(x, g, lower, upper) -> np.ndarray:
    """``x - P(x - g)``: zero exactly at a KKT point of the box problem."""
    return x - np.clip(x - g, lower, upper)


def _free_mask(x, g, lower, upper):
    at_lo = (x <= lower) & (g > 0)
    at_hi = (x >= upper) & (g < 0)
    return ~(at_lo | at_hi)


def _two_loop(q, pairs, free):
    """Apply the inverse-Hessian estimate to ``q`` on the free variables."""
    q = q * free
    used = []
    for s, y in pairs:
        sf, yf = s * free, y * free
        sy = float(sf @ yf)
        if sy > 1e-12 * np.sqrt(float(sf @ sf) * float(yf @ yf)):
            used.append((sf, yf, 1.0 / sy))
    alphas = []
    for sf, yf, rho in reversed(used):
        a = rho * float(sf @ q)
        alphas.append(a)
        q = q - a * yf
    if used:
        sf, yf, _ = used[-1]
        q = q * (float(sf @ yf) / float(yf @ yf))
    for (sf, yf, rho), a in zip(used, reversed(alphas)):
        b = rho * float(yf @ q)
        q = q + (a - b) * sf
    return q * free, len(used)


def lbfgsb_minimize(
    fun: Callable[[np.ndarray], tuple[float, np.ndarray]],
    x0,
    lower,
    upper,
    config: OptimizerConfig = OptimizerConfig(),
    callback: Callable[[IterationLog, np.ndarray], None] | None = None,
) -> OptimizeResult:
    """Minimize ``fun`` over the box ``[lower, upper]``.

    ``fun(x)`` must return ``(f, grad)``. ``callback(log, x)`` runs after
    every accepted iteration.
    """
    x = np.array(x0, dtype=np.float64).ravel()
    lower = np.broadcast_to(np.asarray(lower, dtype=np.float64), x.shape).copy()
    upper = np.broadcast_to(np.asarray(upper, dtype=np.float64), x.shape).copy()
    if np.any(lower > upper):
        raise ValueError("lower bound exceeds upper bound")
    x = np.clip(x, lower, upper)
    t_start = time.perf_counter()
    f, g = fun(x)
    f = float(f)
    g = np.asarray(g, dtype=np.float64).ravel()
    if not (np.isfinite(f) and np.all(np.isfinite(g))):
        raise FloatingPointError(f"objective is not finite at the starting point (f={f})")
    n_eval = 1
    pairs: deque = deque(maxlen=config.memory)
    history: list[IterationLog] = []
    stalled = 0
    message = "maximum iterations reached"
    converged = False

    for it in range(1, config.max_iterations + 1):
        pg = projected_gradient(x, g, lower, upper)
        if np.abs(pg).max() <= config.pgtol * max(1.0, abs(f)):
            message, converged = "projected gradient below tolerance", True
            break
        free = _free_mask(x, g, lower, upper)
        d, n_used = _two_loop(-g, pairs, free)
        if not float(g @ d) < 0:
            d, n_used = -g * free, 0
            pairs.clear()
        if n_used == 0:
            gmax = np.abs(d).max()
            length = config.initial_step if (config.initial_step and it == 1) else min(1.0, 1.0 / gmax)
            d = d * (length / gmax)

        # backtracking along the projected path, expanding while curvature is too weak
        alpha, best = 1.0, None
        lo_alpha, hi_alpha = 0.0, np.inf
        for _ in range(config.max_evaluations_per_iteration):
            xt = np.clip(x + alpha * d, lower, upper)
            step = xt - x
            slope = float(g @ step)
            if not slope < 0:
                hi_alpha = alpha
                alpha *= 0.5
                continue
            ft, gt = fun(xt)
            ft = float(ft)
            gt = np.asarray(gt, dtype=np.float64).ravel()
            n_eval += 1
            if not np.isfinite(ft) or ft > f + config.c1 * slope:
                hi_alpha = alpha
                alpha = 0.5 * (lo_alpha + alpha)
                continue
            best = (xt, ft, gt, alpha)
            clipped = np.any(xt != x + alpha * d)
            if clipped or float(gt @ step) >= config.c2 * slope or np.isfinite(hi_alpha):
                break
            lo_alpha = alpha
            alpha *= 2.0
        if best is None:
            message = "line search failed to find a decrease"
            break
        xt, ft, gt, alpha = best
        s, y = xt - x, gt - g
        if float(s @ y) > 1e-12 * np.sqrt(float(s @ s) * float(y @ y)):
            pairs.append((s, y))
        rel_drop = (f - ft) / max(abs(f), abs(ft), 1.0)
        x, f, g = xt, ft, gt
        log = IterationLog(it, f, float(np.abs(projected_gradient(x, g, lower, upper)).max()), alpha, n_eval,
                           time.perf_counter() - t_start)
        history.append(log)
        logger.debug("iter %d f=%.6e |pg|=%.3e step=%.3g", it, f, log.grad_inf_norm, alpha)
        if callback is not None:
            callback(log, x)
        stalled = stalled + 1 if rel_drop < config.ftol else 0
        if stalled >= config.stall_iterations:
            message, converged = "relative decrease below tolerance", True
            break
    else:
        it = config.max_iterations
    return OptimizeResult(x, f, g, len(history), n_eval, converged, message, history)
