"""Explicit time marching for the 2-D constant-density acoustic wave equation.

The update at every cell is::

    (1 + a) u^{k+1} = 2 u^k - (1 - a) u^{k-1} + (c dt / h)^2 L u^k + dt^2 f^k

with ``L`` the cross stencil of :func:`stencil_coefficients` and
``a = sigma dt`` a sponge damping that is zero outside the absorbing band.
Time index ``k`` runs over ``0 .. n_steps - 1``; the field starts at rest
(``u^{-1} = u^0 = 0``) and receivers record ``u^k`` at every sample.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Callable, Iterator, Sequence

import numpy as np

from . import _kernels
from .exceptions import ConsistencyError, GeometryError, InstabilityError, ShapeError
from .grid import Field2D, GridSpec, SpeedModel, TimeAxis
from .signals import ShotGather, Trace

__all__ = [
    "StencilSpec",
    "stencil_coefficients",
    "laplacian",
    "AbsorberSpec",
    "SimConfig",
    "SourceInjection",
    "BoundaryTape",
    "max_stable_dt",
    "step",
    "simulate_forward",
    "simulate_shots",
    "replay_reverse",
    "Propagator",
]

# Checking for NaN every step costs more than the step on small grids.
_FINITE_CHECK_EVERY = 64


@dataclass(frozen=True, eq=False)
class StencilSpec:
    """Symmetric second-derivative stencil ``c_{-n} .. c_n``."""

    radius: int
    coefficients: np.ndarray = field(repr=False)
    exact: tuple = field(default=(), repr=False, compare=False)

    def __post_init__(self):
        coeffs = np.array(self.coefficients, dtype=np.float64).ravel()
        if coeffs.size != 2 * self.radius + 1:
            raise ValueError(f"radius {self.radius} needs {2 * self.radius + 1} coefficients")
        if not np.array_equal(coeffs, coeffs[::-1]):
            raise ValueError("stencil coefficients must be symmetric")
        coeffs.flags.writeable = False
        object.__setattr__(self, "coefficients", coeffs)

    @property
    def half(self) -> np.ndarray:
        """``[c_0, c_1, .., c_n]``, the layout the kernels consume."""
        return np.ascontiguousarray(self.coefficients[self.radius:])

    @property
    def abs_sum(self) -> float:
        return float(np.abs(self.coefficients).sum())

    def __eq__(self, other):
        return isinstance(other, StencilSpec) and np.array_equal(self.coefficients, other.coefficients)

    __hash__ = None


def stencil_coefficients(radius: int = 4) -> StencilSpec:
    """Maximal-order central second-derivative weights on ``2 * radius + 1`` nodes.

    Uses the closed form ``c_k = 2 (-1)^{k+1} (n!)^2 / (k^2 (n-k)! (n+k)!)``
    evaluated in exact rational arithmetic, with ``c_0 = -2 sum_{k>0} c_k``.
    """
    if int(radius) != radius or not 1 <= radius <= 8:
        raise ValueError(f"stencil radius must be an integer in [1, 8], got {radius}")
    n = int(radius)
    nf2 = math.factorial(n) ** 2
    side = [
        Fraction(2 * (-1) ** (k + 1) * nf2, k * k * math.factorial(n - k) * math.factorial(n + k))
        for k in range(1, n + 1)
    ]
    center = -2 * sum(side)
    exact = tuple(side[::-1]) + (center,) + tuple(side)
    return StencilSpec(n, np.array([float(c) for c in exact]), exact)


def _padded(values, r: int) -> np.ndarray:
    """Copy ``(ny, nx)`` or ``(b, ny, nx)`` values into zero-framed buffers."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None]
    out = np.zeros(arr.shape[:1] + (arr.shape[1] + 2 * r, arr.shape[2] + 2 * r))
    out[:, r:r + arr.shape[1], r:r + arr.shape[2]] = arr
    return out


def _tile_shape(tile) -> tuple[int, int]:
    if np.isscalar(tile):
        return (int(tile), int(tile))
    ty, tx = tile
    return (int(ty), int(tx))


def laplacian(u: Field2D, stencil: StencilSpec, h: float | None = None, tile=(32, 512)) -> Field2D:
    """Cross-stencil Laplacian with zero padding beyond the array edge."""
    h = u.grid.h if h is None else float(h)
    support = 2 * stencil.radius + 1
    if u.grid.nx < support or u.grid.ny < support:
        raise ShapeError(f"field {u.grid.shape} smaller than the {support}-point stencil")
    r = stencil.radius
    src = _padded(u.values, r)
    out = np.zeros_like(src)
    ny, nx = u.grid.shape
    _kernels.laplacian_kernel(src, out, stencil.half, *_tile_shape(tile), r, r + ny, r, r + nx)
    return Field2D(u.grid, out[0, r:r + ny, r:r + nx] / (h * h))


@dataclass(frozen=True)
class AbsorberSpec:
    """Sponge layer along all four edges.

    The damping rate at normalized depth ``d`` into the layer is
    ``sigma(d) = strength * reference_speed / (width * h) * d ** exponent``
    (1/s), summed over the x and y directions in the corners. It does not
    depend on the speed model so that the model gradient stays exact.
    """

    width: int = 20
    exponent: float = 3.0
    strength: float = 5.0
    reference_speed: float = 1450.0

    def __post_init__(self):
        if self.width < 0:
            raise ValueError("absorber width must be non-negative")
        if self.exponent <= 0 or self.strength < 0 or self.reference_speed <= 0:
            raise ValueError("absorber exponent, strength and reference speed must be positive")

    def profile(self, depth) -> np.ndarray:
        """``sigma`` (1/s per unit h) as a function of normalized depth in [0, 1]."""
        depth = np.clip(np.asarray(depth, dtype=np.float64), 0.0, 1.0)
        return self.strength * self.reference_speed / max(self.width, 1) * depth**self.exponent

    def damping(self, grid: GridSpec) -> np.ndarray:
        """Per-cell ``sigma`` in 1/s, shape ``(ny, nx)``."""
        if self.width == 0:
            return np.zeros(grid.shape)

        def depth(n):
            idx = np.arange(n)
            layer = np.maximum(self.width - idx, idx - (n - 1 - self.width))
            return np.clip(layer, 0, None) / self.width

        sx = self.profile(depth(grid.nx)) / grid.h
        sy = self.profile(depth(grid.ny)) / grid.h
        return sy[:, None] + sx[None, :]


@dataclass(frozen=True)
class SimConfig:
    grid: GridSpec
    time: TimeAxis
    stencil: StencilSpec = field(default_factory=lambda: stencil_coefficients(4))
    absorber: AbsorberSpec = field(default_factory=AbsorberSpec)
    tile: tuple = (32, 512)

    def __post_init__(self):
        w, r = self.absorber.width, self.stencil.radius
        if 0 < w < r:
            raise ValueError(f"absorber width {w} is thinner than the stencil radius {r}")
        object.__setattr__(self, "tile", _tile_shape(self.tile))
        if min(self.tile) < 1:
            raise ValueError("tile sizes must be positive")
        inner = min(self.grid.nx, self.grid.ny) - 2 * w
        if inner < 2 * r + 1:
            raise ValueError("grid leaves no room for a physical region inside the absorber")

    @property
    def physical_region(self) -> tuple[slice, slice]:
        """Rows/columns of the non-absorbing region."""
        w = self.absorber.width
        return slice(w, self.grid.ny - w), slice(w, self.grid.nx - w)

    @property
    def replay_region(self) -> tuple[slice, slice]:
        """Cells rebuilt by reverse stepping: physical region minus a stencil-radius halo."""
        w, r = self.absorber.width, self.stencil.radius
        return slice(w + r, self.grid.ny - w - r), slice(w + r, self.grid.nx - w - r)

    def physical_mask(self) -> np.ndarray:
        mask = np.zeros(self.grid.shape, dtype=bool)
        mask[self.physical_region] = True
        return mask

    def replay_mask(self) -> np.ndarray:
        mask = np.zeros(self.grid.shape, dtype=bool)
        mask[self.replay_region] = True
        return mask

    def halo_indices(self) -> np.ndarray:
        """Flat indices of the halo band, row-major."""
        halo = self.physical_mask() & ~self.replay_mask()
        return np.flatnonzero(halo)

    def to_dict(self) -> dict:
        return {
            "grid": {"nx": self.grid.nx, "ny": self.grid.ny, "h": self.grid.h},
            "time": {"dt": self.time.dt, "n_steps": self.time.n_steps},
            "stencil_radius": self.stencil.radius,
            "absorber": {
                "width": self.absorber.width,
                "exponent": self.absorber.exponent,
                "strength": self.absorber.strength,
                "reference_speed": self.absorber.reference_speed,
            },
            "tile": list(self.tile),
        }


class SourceInjection:
    """Additive point sources: one trace per ``(i, j)`` cell.

    ``scale`` multiplies every trace; the forward update adds ``dt^2 * f``.
    """

    def __init__(self, cells, traces, scale: float = 1.0):
        cells = np.asarray(cells, dtype=np.int64).reshape(-1, 2)
        if isinstance(traces, Trace):
            traces = [traces]
        if len(traces) and isinstance(traces[0], Trace):
            traces = np.stack([t.samples for t in traces])
        traces = np.asarray(traces, dtype=np.float64)
        if traces.ndim == 1:
            traces = traces[None, :]
        if traces.shape[0] != cells.shape[0]:
            raise ShapeError(f"{cells.shape[0]} source cells but {traces.shape[0]} traces")
        self.cells = cells
        self.traces = traces * float(scale)

    @classmethod
    def empty(cls, n_steps: int) -> "SourceInjection":
        return cls(np.zeros((0, 2), dtype=np.int64), np.zeros((0, n_steps)))

    @classmethod
    def point(cls, cell, trace, scale: float = 1.0) -> "SourceInjection":
        return cls([cell], [trace], scale)

    def __len__(self):
        return self.cells.shape[0]

    def fingerprint(self) -> str:
        h = hashlib.sha1()
        h.update(self.cells.tobytes())
        h.update(self.traces.tobytes())
        return h.hexdigest()


@dataclass(eq=False)
class BoundaryTape:
    """Halo values at every step plus the last two full snapshots of one shot.

    ``halo`` has shape ``(n_steps, halo_cell_count)``; ``final`` holds
    ``u^{N-2}`` and ``u^{N-1}`` stacked along axis 0.
    """

    halo: np.ndarray = field(repr=False)
    final: np.ndarray = field(repr=False)
    halo_index: np.ndarray = field(repr=False)
    radius: int
    fingerprint: str

    @property
    def n_steps(self) -> int:
        return self.halo.shape[0]

    @property
    def halo_cell_count(self) -> int:
        return self.halo.shape[1]

    @property
    def nbytes(self) -> int:
        return self.halo.nbytes + self.final.nbytes

    def save(self, path) -> tuple[Path, Path]:
        """Raw little-endian float32 halo stream plus JSON sidecar."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        meta = {"n_steps": self.n_steps, "halo_cell_count": self.halo_cell_count, "radius": self.radius}
        meta_path, bin_path = path.with_suffix(".json"), path.with_suffix(".bin")
        meta_path.write_text(json.dumps(meta, indent=2))
        self.halo.astype("<f4").tofile(bin_path)
        return meta_path, bin_path


def max_stable_dt(theta: SpeedModel, h: float, stencil: StencilSpec) -> float:
    """Largest non-growing time step of the leapfrog scheme with the 2-D cross stencil.

    The symbol of the discrete Laplacian peaks at ``2 * sum|c_i| / h^2`` (the
    checkerboard mode), giving ``dt <= (h / c_max) * 2 / sqrt(2 * sum|c_i|)``.
    """
    c_max = float(np.max(np.asarray(theta.values if isinstance(theta, Field2D) else theta)))
    return (h / c_max) * 2.0 / math.sqrt(2.0 * stencil.abs_sum)


def _courant(cfg: SimConfig, c_max: float) -> float:
    return c_max * cfg.time.dt / cfg.grid.h


def _check_cells(cells: np.ndarray, mask: np.ndarray, what: str):
    if cells.size == 0:
        return
    ny, nx = mask.shape
    i, j = cells[:, 0], cells[:, 1]
    if np.any((i < 0) | (i >= nx) | (j < 0) | (j >= ny)):
        raise GeometryError(f"{what} outside the grid")
    if not np.all(mask[j, i]):
        raise GeometryError(f"{what} must lie inside the non-absorbing region")


def _model_fingerprint(cfg: SimConfig, theta: SpeedModel, sources: SourceInjection) -> str:
    h = hashlib.sha1()
    h.update(json.dumps(cfg.to_dict(), sort_keys=True).encode())
    h.update(np.ascontiguousarray(theta.values).tobytes())
    h.update(sources.fingerprint().encode())
    return h.hexdigest()


class Propagator:
    """Precomputed coefficients for one (config, speed model) pair.

    Runs batches of shots in lockstep: field buffers have shape
    ``(n_shots, ny + 2r, nx + 2r)`` with a zero frame of the stencil radius
    ``r``; :meth:`interior` returns the grid-sized view.
    """

    def __init__(self, cfg: SimConfig, theta: SpeedModel, check_stability: bool = True):
        if theta.grid != cfg.grid:
            raise ShapeError(f"model grid {theta.grid} differs from config grid {cfg.grid}")
        self.cfg = cfg
        self.theta = theta
        dt, h = cfg.time.dt, cfg.grid.h
        self.courant = _courant(cfg, theta.c_max)
        limit = max_stable_dt(theta, h, cfg.stencil)
        if check_stability and dt > limit * (1 + 1e-12):
            raise InstabilityError(
                f"dt={dt:.4g}s exceeds the stable limit {limit:.4g}s (Courant number {self.courant:.4f})",
                courant=self.courant,
            )
        r = self.r = cfg.stencil.radius
        ny, nx = cfg.grid.shape
        self.shape = (ny + 2 * r, nx + 2 * r)
        sigma_dt = cfg.absorber.damping(cfg.grid) * dt
        self.vel2 = _padded((theta.values * dt / h) ** 2, r)[0]
        self.keep = _padded(1.0 - sigma_dt, r)[0]
        self.inv = _padded(1.0 / (1.0 + sigma_dt), r)[0]
        self.coeffs = cfg.stencil.half
        self.dt2 = dt * dt
        self.full = (r, r + ny, r, r + nx)
        rj, ri = cfg.replay_region
        self.replay = (rj.start + r, rj.stop + r, ri.start + r, ri.stop + r)
        self.physical_mask = cfg.physical_mask()
        pj, pi = np.divmod(cfg.halo_indices(), nx)
        # halo cells as flat indices into a padded buffer
        self.halo_index = (pj + r) * self.shape[1] + (pi + r)

    def new_buffers(self, n_shots: int, count: int = 1) -> list[np.ndarray]:
        return [np.zeros((n_shots,) + self.shape) for _ in range(count)]

    def interior(self, buf: np.ndarray) -> np.ndarray:
        r = self.r
        return buf[..., r:self.shape[0] - r, r:self.shape[1] - r]

    # -- source handling -------------------------------------------------
    def pack_sources(self, injections: Sequence[SourceInjection], damped: bool = True):
        """Merge per-shot injections into ``(b, j, i, increments)`` with unique cells.

        Indices address padded buffers; ``increments[k]`` is what gets added
        to ``u^{k+1}`` at those cells.
        """
        rows = {}
        n_steps = self.cfg.time.n_steps
        for b, inj in enumerate(injections):
            if inj.traces.shape[1] != n_steps:
                raise ShapeError(f"source traces have {inj.traces.shape[1]} samples, expected {n_steps}")
            _check_cells(inj.cells, self.physical_mask, "source")
            for (i, j), tr in zip(inj.cells, inj.traces):
                key = (b, int(j), int(i))
                rows[key] = rows.get(key, 0.0) + tr
        if not rows:
            empty = np.zeros(0, dtype=np.int64)
            return empty, empty, empty, np.zeros((n_steps, 0))
        keys = sorted(rows)
        bb = np.array([k[0] for k in keys], dtype=np.int64)
        jj = np.array([k[1] for k in keys], dtype=np.int64) + self.r
        ii = np.array([k[2] for k in keys], dtype=np.int64) + self.r
        scale = self.dt2 * (self.inv[jj, ii] if damped else 1.0)
        amp = np.stack([rows[k] for k in keys]) * np.atleast_1d(scale)[:, None]
        # (n_steps, n_src) so the per-step slice is contiguous
        return bb, jj, ii, np.ascontiguousarray(amp.T)

    def _check_finite(self, *bufs, k=None):
        for buf in bufs:
            if not np.isfinite(buf).all():
                raise InstabilityError(
                    f"non-finite field at step {k} (Courant number {self.courant:.4f})", courant=self.courant
                )

    def advance(self, prev: np.ndarray, curr: np.ndarray):
        """One damped step over the whole grid, written into ``prev``."""
        _kernels.step_kernel(prev, curr, self.vel2, self.keep, self.inv, self.coeffs, self.cfg.tile, *self.full)

    # -- forward ---------------------------------------------------------
    def forward(
        self,
        injections: Sequence[SourceInjection],
        receivers: np.ndarray,
        record_tape: bool = False,
        snapshot_every: int = 0,
        snapshot_callback: Callable[[int, np.ndarray], None] | None = None,
    ):
        """March all shots from rest; returns ``(records, halo, final)``.

        ``records`` has shape ``(n_shots, n_receivers, n_steps)``. With
        ``record_tape`` the halo array is ``(n_steps, n_shots, n_halo)`` and
        ``final`` is the pair of padded buffers ``(u^{N-2}, u^{N-1})``.
        ``snapshot_callback(k, u)`` receives a grid-sized view of ``u^k``.
        """
        cfg = self.cfg
        n_steps = cfg.time.n_steps
        nb = len(injections)
        receivers = np.asarray(receivers, dtype=np.int64).reshape(-1, 2)
        _check_cells(receivers, self.physical_mask, "receiver")
        ri, rj = receivers[:, 0] + self.r, receivers[:, 1] + self.r
        sb, sj, si, samp = self.pack_sources(injections)

        prev, curr = self.new_buffers(nb, 2)
        records = np.zeros((n_steps, nb, receivers.shape[0]))
        halo = np.empty((n_steps, nb, self.halo_index.size)) if record_tape else None
        if record_tape:
            halo[0] = 0.0
        for k in range(n_steps - 1):
            self.advance(prev, curr)
            if samp.shape[1]:
                prev[sb, sj, si] += samp[k]
            prev, curr = curr, prev
            records[k + 1] = curr[:, rj, ri]
            if record_tape:
                halo[k + 1] = curr.reshape(nb, -1)[:, self.halo_index]
            if snapshot_every and snapshot_callback is not None and (k + 1) % snapshot_every == 0:
                snapshot_callback(k + 1, self.interior(curr))
            if (k + 1) % _FINITE_CHECK_EVERY == 0:
                self._check_finite(curr, k=k + 1)
        self._check_finite(prev, curr, k=n_steps - 1)
        final = (prev, curr) if record_tape else None
        return np.ascontiguousarray(records.transpose(1, 2, 0)), halo, final

    # -- reverse replay --------------------------------------------------
    def reverse_stream(self, injections, halo, final, adjoint_step=None, accumulator=None, consume=False):
        """Step the recorded shots backwards from their final two snapshots.

        ``final`` is ``(u^{N-2}, u^{N-1})``, either padded buffers or
        grid-sized arrays. Yields ``(k, u^k)`` for ``k = N-1 .. 0`` where
        ``u^k`` is a grid-sized view of the live buffer (valid inside the
        physical region; do not keep references). If ``adjoint_step`` is
        given it is called before each backward step with the step count
        ``q`` and must return the padded adjoint buffer that pairs with the
        Laplacian of the field about to be differentiated; ``accumulator``
        (padded) then receives ``sum_k adj * lap(u^k)`` over the replay
        region. With ``consume`` padded ``final`` buffers are stepped in place.
        """
        cfg = self.cfg
        n_steps = cfg.time.n_steps
        sb, sj, si, samp = self.pack_sources(injections, damped=False)
        j_lo, j_hi, i_lo, i_hi = self.replay
        before, last = final
        if last.shape[-2:] == self.shape and consume:
            nxt, curr = last, before
        elif last.shape[-2:] == self.shape:
            nxt, curr = last.copy(), before.copy()
        else:
            nxt, curr = _padded(last, self.r), _padded(before, self.r)
        nb = nxt.shape[0]
        outside = ~self.physical_mask
        self.interior(nxt)[:, outside] = 0.0
        self.interior(curr)[:, outside] = 0.0
        yield n_steps - 1, self.interior(nxt)
        yield n_steps - 2, self.interior(curr)
        scratch = self.new_buffers(nb)[0] if accumulator is None else accumulator
        zero_adj = None
        for k in range(n_steps - 2, 0, -1):
            if adjoint_step is not None:
                adj = adjoint_step(n_steps - 1 - k)
            else:
                if zero_adj is None:
                    zero_adj = np.zeros_like(curr)
                adj = zero_adj
            _kernels.reverse_step_accumulate(
                nxt, curr, self.vel2, self.coeffs, cfg.tile, j_lo, j_hi, i_lo, i_hi, adj, scratch
            )
            if samp.shape[1]:
                nxt[sb, sj, si] += samp[k]
            nxt.reshape(nb, -1)[:, self.halo_index] = halo[k - 1]
            nxt, curr = curr, nxt
            if (n_steps - k) % _FINITE_CHECK_EVERY == 0:
                self._check_finite(curr, k=k - 1)
            yield k - 1, self.interior(curr)


def _as_injections(sources) -> list[SourceInjection]:
    if isinstance(sources, SourceInjection):
        return [sources]
    return list(sources)


def step(u_prev: Field2D, u_curr: Field2D, theta: SpeedModel, src: Field2D, cfg: SimConfig) -> Field2D:
    """One update ``u^{k+1}`` from ``u^{k-1}``, ``u^k`` and the source field ``f^k``."""
    for f in (u_prev, u_curr, src):
        if f.grid != cfg.grid:
            raise ShapeError("all fields must share the configuration grid")
    prop = Propagator(cfg, theta)
    prev = _padded(u_prev.values, prop.r)
    curr = _padded(u_curr.values, prop.r)
    prop.advance(prev, curr)
    prev[0] += prop.dt2 * prop.inv * _padded(src.values, prop.r)[0]
    prop._check_finite(prev, k=None)
    return Field2D(cfg.grid, prop.interior(prev)[0])


def simulate_shots(
    cfg: SimConfig,
    theta: SpeedModel,
    sources: Sequence[SourceInjection],
    receivers,
    record_tape: bool = False,
    snapshot_every: int = 0,
    snapshot_callback=None,
):
    """Simulate several shots sharing one receiver set.

    Returns a list of ``(ShotGather, BoundaryTape | None)``.
    """
    injections = _as_injections(sources)
    prop = Propagator(cfg, theta)
    records, halo, final = prop.forward(injections, receivers, record_tape, snapshot_every, snapshot_callback)
    out = []
    for b, inj in enumerate(injections):
        gather = ShotGather(records[b], cfg.time.dt, receivers)
        tape = None
        if record_tape:
            tape = BoundaryTape(
                halo=np.ascontiguousarray(halo[:, b]),
                final=np.stack([prop.interior(final[0][b]), prop.interior(final[1][b])]),
                halo_index=cfg.halo_indices(),
                radius=cfg.stencil.radius,
                fingerprint=_model_fingerprint(cfg, theta, inj),
            )
        out.append((gather, tape))
    return out


def simulate_forward(
    cfg: SimConfig,
    theta: SpeedModel,
    sources: SourceInjection,
    receivers,
    record_tape: bool = False,
    snapshot_every: int = 0,
    snapshot_callback=None,
):
    """Simulate one shot; returns ``(ShotGather, BoundaryTape | None)``."""
    return simulate_shots(cfg, theta, [sources], receivers, record_tape, snapshot_every, snapshot_callback)[0]


def replay_reverse(
    cfg: SimConfig, theta: SpeedModel, tape: BoundaryTape, sources: SourceInjection
) -> Iterator[np.ndarray]:
    """Yield ``u(T), u(T - dt), .., u(0)`` on the physical region, rebuilt from ``tape``."""
    expected = _model_fingerprint(cfg, theta, sources)
    if tape.fingerprint != expected:
        raise ConsistencyError("boundary tape was recorded with a different configuration, model or source")
    if tape.n_steps != cfg.time.n_steps or not np.array_equal(tape.halo_index, cfg.halo_indices()):
        raise ConsistencyError("boundary tape geometry does not match the configuration")
    prop = Propagator(cfg, theta)
    region = cfg.physical_region
    stream = prop.reverse_stream([sources], tape.halo[:, None, :], (tape.final[0][None], tape.final[1][None]))
    for _, u in stream:
        yield u[0][region].copy()
