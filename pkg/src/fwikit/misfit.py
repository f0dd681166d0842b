"""Misfit functionals between gathers and their adjoint sources.

Two families are provided:

* L2: ``J = 1/2 sum_r int (u - u_0)^2 dt`` with trapezoid time weights.
* W2: the quadratic Wasserstein distance between traces mapped to
  probability densities by an affine offset and normalization. Time is mapped
  to ``x = k / (N - 1)`` on ``[0, 1]`` and each density is treated as
  constant on every cell ``[x_k, x_{k+1}]`` (value = mean of the two node
  densities). That makes the CDF piecewise linear, so the distance and its
  first variation can be integrated exactly over the merged CDF breakpoints.

Adjoint sources are returned as gradients with respect to the raw samples,
i.e. ``J(s + eps * d) - J(s) ~ eps * sum(source * d)``.
"""

from __future__ import annotations

import enum
import logging
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numba import njit, prange

from .exceptions import ShapeError, TransformError
from .signals import ShotGather, Trace

logger = logging.getLogger(__name__)

__all__ = [
    "OffsetRule",
    "W2Config",
    "PdfTrace",
    "AdjointSourceGather",
    "trapezoid_weights",
    "l2_misfit",
    "l2_adjoint_source",
    "pdf_transform",
    "cdf",
    "quantile",
    "w2_distance",
    "w2_misfit",
    "discrete_ot_oracle",
    "w2_adjoint_source",
    "gather_misfit",
]


class OffsetRule(str, enum.Enum):
    OBSERVED_ONLY = "observed_only"
    PAIR_MAX = "pair_max"


@dataclass(frozen=True)
class W2Config:
    """Options of the Wasserstein misfit.

    chain_rule_through_normalization
        Differentiate through the offset/normalization map so the adjoint
        source is the exact gradient of the implemented functional. When
        off, the source is the bare tail integral of the transport residual.
    epsilon_floor
        Smallest admitted density, relative to the mean density (which is 1).
    offset_rule
        ``OBSERVED_ONLY``: ``c = 1.1 |min g|``. ``PAIR_MAX`` uses the larger
        of the two minima so simulated traces cannot drop below ``-c``; the
        gradient then treats ``c`` as a constant.
    offset_factor
        The 1.1 above.
    pin_terminal
        Treat the last sample of both traces as zero. The functional then does
        not depend on it and every adjoint trace ends exactly at zero.
    """

    chain_rule_through_normalization: bool = True
    epsilon_floor: float = 1e-12
    offset_rule: OffsetRule = OffsetRule.OBSERVED_ONLY
    offset_factor: float = 1.1
    pin_terminal: bool = True

    def __post_init__(self):
        if not self.epsilon_floor > 0:
            raise ValueError("epsilon_floor must be positive")
        object.__setattr__(self, "offset_rule", OffsetRule(self.offset_rule))


@dataclass(frozen=True, eq=False)
class PdfTrace:
    """Strictly positive density sampled at ``x_k = k / (N - 1)``.

    ``density`` integrates to one under the trapezoid rule and ``cdf`` holds
    the trapezoid accumulation at the nodes (first value 0, last value 1).
    """

    density: np.ndarray = field(repr=False)
    cdf: np.ndarray = field(repr=False)
    normalizer: float = 1.0
    floored: int = 0

    @classmethod
    def from_density(cls, density) -> "PdfTrace":
        density = np.array(density, dtype=np.float64).ravel()
        if density.size < 2 or not np.all(density > 0) or not np.all(np.isfinite(density)):
            raise TransformError("density must be finite and strictly positive")
        z = float(trapezoid_weights(density.size) @ density)
        density = density / z
        return cls(density, _cdf_nodes(density[None, :])[0], z, 0)

    def __len__(self):
        return self.density.size

    @property
    def x(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.density.size)

    @property
    def cell_density(self) -> np.ndarray:
        return 0.5 * (self.density[:-1] + self.density[1:])


class AdjointSourceGather(ShotGather):
    """Per-receiver adjoint source traces on the gather's time axis."""


def _warn_floored(n: int):
    # fixed text so the default filter reports it once per call site
    logger.info("%d samples floored while forming densities", n)
    warnings.warn("trace samples floored while forming densities (simulated trace below -c)", RuntimeWarning, stacklevel=4)


def trapezoid_weights(n: int, dx: float | None = None) -> np.ndarray:
    """Trapezoid weights of ``n`` nodes spaced ``dx`` (default ``1 / (n - 1)``)."""
    dx = 1.0 / (n - 1) if dx is None else dx
    w = np.full(n, dx)
    w[0] = w[-1] = 0.5 * dx
    return w


def _data(g) -> np.ndarray:
    if isinstance(g, ShotGather):
        return g.data
    if isinstance(g, Trace):
        return g.samples[None, :]
    return np.asarray(g, dtype=np.float64)


def _check_aligned(sim, obs):
    if isinstance(sim, ShotGather) and isinstance(obs, ShotGather):
        if sim.dt != obs.dt:
            raise ShapeError(f"gathers sampled at different dt ({sim.dt} vs {obs.dt})")
        if not np.array_equal(sim.receivers, obs.receivers):
            raise ShapeError("gathers recorded at different receivers")
    a, b = _data(sim), _data(obs)
    if a.shape != b.shape:
        raise ShapeError(f"gather shapes differ: {a.shape} vs {b.shape}")
    return a, b


# ---------------------------------------------------------------------------
# L2
# ---------------------------------------------------------------------------


def l2_misfit(sim: ShotGather, obs: ShotGather) -> float:
    """``1/2 sum_r sum_k w_k (sim - obs)^2`` with trapezoid weights ``w_k`` in seconds."""
    a, b = _check_aligned(sim, obs)
    w = trapezoid_weights(a.shape[-1], sim.dt)
    res = a - b
    return float(0.5 * np.sum((res * res) @ w))


def l2_adjoint_source(sim: ShotGather, obs: ShotGather) -> AdjointSourceGather:
    """Weighted residual ``w_k (sim - obs)``: the exact sample gradient of :func:`l2_misfit`."""
    a, b = _check_aligned(sim, obs)
    w = trapezoid_weights(a.shape[-1], sim.dt)
    return AdjointSourceGather((a - b) * w, sim.dt, sim.receivers)


# ---------------------------------------------------------------------------
# density transform, CDF and quantiles
# ---------------------------------------------------------------------------


def _cdf_nodes(p: np.ndarray) -> np.ndarray:
    n = p.shape[-1]
    dx = 1.0 / (n - 1)
    F = np.zeros_like(p)
    np.cumsum(0.5 * (p[..., :-1] + p[..., 1:]) * dx, axis=-1, out=F[..., 1:])
    # the total is 1 up to rounding; pin it so both CDFs end on the same breakpoint
    F[..., -1] = 1.0
    return F


def _offsets(f: np.ndarray, g: np.ndarray, cfg: W2Config) -> np.ndarray:
    gmin = np.abs(g.min(axis=-1))
    if cfg.offset_rule is OffsetRule.PAIR_MAX:
        gmin = np.maximum(gmin, np.abs(f.min(axis=-1)))
    return cfg.offset_factor * gmin


def _to_density(f: np.ndarray, c: np.ndarray, cfg: W2Config):
    """Return ``(p, Z, active)`` for rows of ``f`` offset by ``c``."""
    n = f.shape[-1]
    w = trapezoid_weights(n)
    num = f + c[:, None]
    z0 = num @ w
    if np.any(~(z0 > 0)):
        raise TransformError("offset trace has non-positive mean; cannot normalize")
    floor = cfg.epsilon_floor * z0
    active = num > floor[:, None]
    n_floored = int(np.count_nonzero(~active))
    if n_floored:
        num = np.where(active, num, floor[:, None])
        _warn_floored(n_floored)
    z = num @ w
    return num / z[:, None], z, active


def pdf_transform(f: Trace, g_reference: Trace, cfg: W2Config = W2Config()) -> PdfTrace:
    """Offset ``f`` by ``c`` (from ``g_reference``) and normalize to unit trapezoid mass."""
    fs = np.asarray(f.samples if isinstance(f, Trace) else f, dtype=np.float64)[None, :]
    gs = np.asarray(g_reference.samples if isinstance(g_reference, Trace) else g_reference, dtype=np.float64)[None, :]
    if fs.shape != gs.shape:
        raise ShapeError("trace and reference differ in length")
    c = _offsets(fs, gs, cfg)
    p, z, active = _to_density(fs, c, cfg)
    return PdfTrace(p[0], _cdf_nodes(p)[0], float(z[0]), int(np.count_nonzero(~active)))


def cdf(p: PdfTrace) -> np.ndarray:
    """CDF values at the nodes (trapezoid accumulation)."""
    return p.cdf


def quantile(cdf_samples, prob):
    """Inverse of the piecewise-linear CDF on ``x_k = k / (N - 1)``."""
    F = np.asarray(cdf_samples, dtype=np.float64)
    q = np.asarray(prob, dtype=np.float64)
    if np.any((q < 0) | (q > 1)) or np.any(np.isnan(q)):
        raise ValueError("probabilities must lie in [0, 1]")
    n = F.size
    dx = 1.0 / (n - 1)
    k = np.clip(np.searchsorted(F, q, side="right") - 1, 0, n - 2)
    width = F[k + 1] - F[k]
    frac = np.where(width > 0, (q - F[k]) / np.where(width > 0, width, 1.0), 0.0)
    x = (k + np.clip(frac, 0.0, 1.0)) * dx
    return float(x) if x.ndim == 0 else x


# ---------------------------------------------------------------------------
# W2 core: exact integration over merged CDF breakpoints
# ---------------------------------------------------------------------------


@njit(cache=True)
def _w2_row(F, G, dx, want_grad, cell_grad, piece_cell, piece_span, piece_d):
    """Distance and (optionally) cell integrals of the transport potential.

    Walks the merged breakpoints of the two piecewise-linear CDFs; on every
    piece both inverse CDFs are linear, so ``int (X - Y)^2 dt`` is exact.
    ``piece_*`` are scratch arrays of length ``2N`` (``piece_d`` one longer)
    holding the cell, x span and transport residual ``x - T(x)`` at each
    breakpoint.
    """
    n = F.shape[0]
    a = 0
    b = 0
    t = 0.0
    X = 0.0
    d = 0.0
    total = 0.0
    m = 0
    if want_grad:
        piece_d[0] = 0.0
    while a < n - 1 and b < n - 1:
        tF = F[a + 1]
        tG = G[b + 1]
        t_end = tF if tF <= tG else tG
        X_end = a * dx + (t_end - F[a]) / (F[a + 1] - F[a]) * dx
        Y_end = b * dx + (t_end - G[b]) / (G[b + 1] - G[b]) * dx
        d_end = X_end - Y_end
        total += (t_end - t) * (d * d + d * d_end + d_end * d_end)
        if want_grad:
            piece_cell[m] = a
            piece_span[m] = X_end - X
            piece_d[m + 1] = d_end
            m += 1
        a += tF <= tG
        b += tG <= tF
        t = t_end
        X = X_end
        d = d_end
    if want_grad:
        for c in range(n - 1):
            cell_grad[c] = 0.0
        # potential phi(x) = -2 int_x^1 (y - T(y)) dy, zero at x = 1
        phi_e = 0.0
        for s in range(m - 1, -1, -1):
            span = piece_span[s]
            ds = piece_d[s]
            de = piece_d[s + 1]
            phi_s = phi_e - span * (ds + de)
            phi_m = phi_s + 0.25 * span * (3.0 * ds + de)
            cell_grad[piece_cell[s]] += span * (phi_s + 4.0 * phi_m + phi_e) / 6.0
            phi_e = phi_s
    return total / 3.0


@njit(parallel=True, cache=True)
def _w2_rows(F, G, want_grad, cell_grad):
    R, n = F.shape
    dx = 1.0 / (n - 1)
    out = np.empty(R)
    for r in prange(R):
        m = 2 * n if want_grad else 1
        pc = np.empty(m, dtype=np.int64)
        out[r] = _w2_row(F[r], G[r], dx, want_grad, cell_grad[r], pc, np.empty(m), np.empty(m + 1))
    return out


@njit(cache=True, inline="always")
def _row_density(v, c, eps, dx, p, active):
    """Offset, floor and normalize one trace in place into ``p``; returns ``(Z, floored)``."""
    n = v.shape[0]
    z0 = 0.0
    for k in range(n):
        p[k] = v[k] + c
        z0 += p[k]
    z0 = (z0 - 0.5 * (p[0] + p[n - 1])) * dx
    if not z0 > 0:
        return np.nan, 0
    floor = eps * z0
    floored = 0
    for k in range(n):
        if p[k] > floor:
            active[k] = True
        else:
            active[k] = False
            p[k] = floor
            floored += 1
    z = 0.0
    for k in range(n):
        z += p[k]
    z = (z - 0.5 * (p[0] + p[n - 1])) * dx
    for k in range(n):
        p[k] /= z
    return z, floored


@njit(cache=True, inline="always")
def _row_cdf(p, dx, F):
    n = p.shape[0]
    F[0] = 0.0
    acc = 0.0
    for k in range(n - 1):
        acc += 0.5 * (p[k] + p[k + 1]) * dx
        F[k + 1] = acc
    F[n - 1] = 1.0


@njit(parallel=True, cache=True)
def _w2_fused(f, g, pin, pair_max, factor, eps, want_grad, grad):
    """Transform, distance and chain-rule gradient for every row in one pass.

    Returns per-row distances and floored-sample counts; a NaN distance
    marks a row whose offset trace has non-positive mass.
    """
    R, n = f.shape
    dx = 1.0 / (n - 1)
    dist = np.empty(R)
    floored = np.zeros(R, dtype=np.int64)
    for r in prange(R):
        fr = f[r].copy()
        gr = g[r].copy()
        if pin:
            fr[n - 1] = 0.0
            gr[n - 1] = 0.0
        c = abs(gr.min())
        if pair_max:
            c = max(c, abs(fr.min()))
        c *= factor
        pf = np.empty(n)
        pg = np.empty(n)
        act_f = np.empty(n, dtype=np.bool_)
        act_g = np.empty(n, dtype=np.bool_)
        zf, nf = _row_density(fr, c, eps, dx, pf, act_f)
        zg, ng = _row_density(gr, c, eps, dx, pg, act_g)
        floored[r] = nf + ng
        if np.isnan(zf) or np.isnan(zg):
            dist[r] = np.nan
            continue
        F = np.empty(n)
        G = np.empty(n)
        _row_cdf(pf, dx, F)
        _row_cdf(pg, dx, G)
        m = 2 * n if want_grad else 1
        cell = np.empty(n - 1) if want_grad else np.empty(1)
        pc = np.empty(m, dtype=np.int64)
        dist[r] = _w2_row(F, G, dx, want_grad, cell, pc, np.empty(m), np.empty(m + 1))
        if want_grad:
            out = grad[r]
            mean = 0.0
            for k in range(n):
                dp = 0.0
                if k > 0:
                    dp += 0.5 * cell[k - 1]
                if k < n - 1:
                    dp += 0.5 * cell[k]
                out[k] = dp
                mean += dp * pf[k]
            for k in range(n):
                wk = 0.5 * dx if (k == 0 or k == n - 1) else dx
                out[k] = (out[k] - wk * mean) / zf if act_f[k] else 0.0
            if pin:
                out[n - 1] = 0.0
    return dist, floored


def w2_distance(f: PdfTrace, g: PdfTrace) -> float:
    """``int_0^1 |x - G^{-1}(F(x))|^2 f(x) dx`` for the cellwise-constant densities."""
    if len(f) != len(g):
        raise ShapeError(f"densities on different grids ({len(f)} vs {len(g)} nodes)")
    F = np.ascontiguousarray(f.cdf[None, :])
    G = np.ascontiguousarray(g.cdf[None, :])
    return float(_w2_rows(F, G, False, np.zeros((1, 1)))[0])


def _tail_residual_integral(F, G):
    """Node-wise ``-2 int_x^1 [y - G^{-1}(F(y))] dy`` by a reverse trapezoid sum."""
    n = F.shape[-1]
    x = np.linspace(0.0, 1.0, n)
    resid = np.empty_like(F)
    for r in range(F.shape[0]):
        resid[r] = x - quantile(G[r], np.clip(F[r], 0.0, 1.0))
    seg = 0.5 * (resid[:, :-1] + resid[:, 1:]) / (n - 1)
    tail = np.zeros_like(F)
    tail[:, :-1] = np.cumsum(seg[:, ::-1], axis=-1)[:, ::-1]
    return -2.0 * tail


def _w2_batch(f: np.ndarray, g: np.ndarray, cfg: W2Config, want_grad: bool = True):
    """Per-row W2 misfit and its sample gradient for aligned trace arrays."""
    f = np.array(f, dtype=np.float64, ndmin=2)
    g = np.array(g, dtype=np.float64, ndmin=2)
    if f.shape != g.shape:
        raise ShapeError(f"trace arrays differ: {f.shape} vs {g.shape}")
    if cfg.chain_rule_through_normalization or not want_grad:
        grad = np.empty(f.shape) if want_grad else np.empty((1, 1))
        dist, floored = _w2_fused(
            f, g, cfg.pin_terminal, cfg.offset_rule is OffsetRule.PAIR_MAX, cfg.offset_factor,
            cfg.epsilon_floor, want_grad, grad,
        )
        if np.isnan(dist).any():
            raise TransformError("offset trace has non-positive mean; cannot normalize")
        if floored.sum():
            _warn_floored(int(floored.sum()))
        return dist, (grad if want_grad else None)
    if cfg.pin_terminal:
        f[:, -1] = 0.0
        g[:, -1] = 0.0
    c = _offsets(f, g, cfg)
    pf, zf, active = _to_density(f, c, cfg)
    pg, _, _ = _to_density(g, c, cfg)
    F = _cdf_nodes(pf)
    G = _cdf_nodes(pg)
    R, n = f.shape
    dist = _w2_rows(F, G, False, np.zeros((R, 1)))
    # literal source: tail integral of the transport residual, no normalization terms
    grad = _tail_residual_integral(F, G) * trapezoid_weights(n)
    grad = np.where(active, grad, 0.0)
    if cfg.pin_terminal:
        grad[:, -1] = 0.0
    return dist, grad


def w2_misfit(f: Trace, g: Trace, cfg: W2Config = W2Config()) -> float:
    """W2 misfit between a simulated trace ``f`` and an observed trace ``g``."""
    fs = f.samples if isinstance(f, Trace) else f
    gs = g.samples if isinstance(g, Trace) else g
    return float(_w2_batch(fs, gs, cfg, want_grad=False)[0][0])


def w2_adjoint_source(f: Trace, g: Trace, cfg: W2Config = W2Config()) -> np.ndarray:
    """Sample gradient of :func:`w2_misfit` with respect to ``f``."""
    fs = f.samples if isinstance(f, Trace) else f
    gs = g.samples if isinstance(g, Trace) else g
    return _w2_batch(fs, gs, cfg)[1][0]


def discrete_ot_oracle(x_f, m_f, x_g, m_g) -> float:
    """Squared W2 between two discrete measures via the north-west-corner coupling.

    Atoms are sorted by position and mass is shipped greedily from left to
    right, which is the optimal plan in 1-D for the squared distance cost.
    """
    x_f = np.asarray(x_f, dtype=np.float64)
    x_g = np.asarray(x_g, dtype=np.float64)
    m_f = np.asarray(m_f, dtype=np.float64)
    m_g = np.asarray(m_g, dtype=np.float64)
    if abs(m_f.sum() - m_g.sum()) > 1e-12 * max(1.0, abs(m_f.sum())):
        raise ValueError(f"total masses differ: {m_f.sum()} vs {m_g.sum()}")
    of = np.argsort(x_f, kind="stable")
    og = np.argsort(x_g, kind="stable")
    xs, ms = x_f[of].tolist(), m_f[of].tolist()
    ys, ns = x_g[og].tolist(), m_g[og].tolist()
    i = j = 0
    left_f, left_g = (ms[0] if ms else 0.0), (ns[0] if ns else 0.0)
    cost = 0.0
    while i < len(xs) and j < len(ys):
        moved = min(left_f, left_g)
        diff = xs[i] - ys[j]
        cost += moved * diff * diff
        left_f -= moved
        left_g -= moved
        if left_f <= left_g:
            i += 1
            if i < len(xs):
                left_f = ms[i]
        else:
            j += 1
            if j < len(ys):
                left_g = ns[j]
    return cost


# ---------------------------------------------------------------------------
# gathers
# ---------------------------------------------------------------------------


def _as_list(x) -> list:
    return list(x) if isinstance(x, (list, tuple)) else [x]


def gather_misfit(sim, obs, kind: str = "l2", cfg: W2Config = W2Config()):
    """Total misfit and adjoint gathers for one gather or a list of them.

    Returns ``(J, sources)`` where ``sources`` mirrors the input (a single
    :class:`AdjointSourceGather` or a list). W2 is evaluated trace by trace
    and summed.
    """
    single = isinstance(sim, ShotGather)
    sims, obss = _as_list(sim), _as_list(obs)
    if len(sims) != len(obss):
        raise ShapeError(f"{len(sims)} simulated vs {len(obss)} observed gathers")
    kind = kind.lower()
    total = 0.0
    sources = []
    for s, o in zip(sims, obss):
        a, b = _check_aligned(s, o)
        if kind == "l2":
            total += l2_misfit(s, o)
            sources.append(l2_adjoint_source(s, o))
        elif kind == "w2":
            dist, grad = _w2_batch(a, b, cfg)
            total += float(np.sum(dist))
            sources.append(AdjointSourceGather(grad, s.dt, s.receivers))
        else:
            raise ValueError(f"unknown misfit kind {kind!r}; expected 'l2' or 'w2'")
    return total, (sources[0] if single else sources)


def trace_misfits(sim: ShotGather, obs: ShotGather, kind: str = "l2", cfg: W2Config = W2Config()) -> np.ndarray:
    """Per-receiver misfit values of one gather."""
    a, b = _check_aligned(sim, obs)
    if kind == "l2":
        w = trapezoid_weights(a.shape[-1], sim.dt)
        return 0.5 * ((a - b) ** 2) @ w
    return _w2_batch(a, b, cfg, want_grad=False)[0]
