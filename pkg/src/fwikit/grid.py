"""Regular-grid containers, field arithmetic and the on-disk field format.

Arrays are stored with shape ``(ny, nx)``: y is the slow (row) axis and x the
fast one, so ``values[j, i]`` is the cell centred at ``(i * h, j * h)``.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import FormatError, ShapeError

__all__ = [
    "GridSpec",
    "Field2D",
    "SpeedModel",
    "TimeAxis",
    "field_axpy",
    "model_mse",
    "save_field",
    "load_field",
]


@dataclass(frozen=True)
class GridSpec:
    """Uniform 2-D grid.

    Parameters
    ----------
    nx, ny : int
        Cell counts along x and y.
    h : float
        Grid spacing in meters, shared by both axes.
    """

    nx: int
    ny: int
    h: float

    def __post_init__(self):
        if int(self.nx) != self.nx or int(self.ny) != self.ny:
            raise ValueError("nx and ny must be integers")
        object.__setattr__(self, "nx", int(self.nx))
        object.__setattr__(self, "ny", int(self.ny))
        object.__setattr__(self, "h", float(self.h))
        if self.nx < 1 or self.ny < 1:
            raise ValueError(f"grid needs at least one cell per axis, got {self.nx}x{self.ny}")
        if not self.h > 0:
            raise ValueError(f"grid spacing must be positive, got {self.h}")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.ny, self.nx)

    @property
    def size(self) -> int:
        return self.nx * self.ny

    def cell_center(self, i: int, j: int) -> tuple[float, float]:
        return (i * self.h, j * self.h)

    def coordinates(self) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(X, Y)`` meshgrids of cell-center coordinates, shape ``(ny, nx)``."""
        x = np.arange(self.nx) * self.h
        y = np.arange(self.ny) * self.h
        return np.meshgrid(x, y)


def _frozen(values) -> np.ndarray:
    arr = np.array(values, dtype=np.float64, copy=True)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class Field2D:
    """One real value per grid cell."""

    grid: GridSpec
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim == 1 and values.size == self.grid.size:
            values = values.reshape(self.grid.shape)
        if values.shape != self.grid.shape:
            raise ShapeError(f"values of shape {values.shape} do not fit grid {self.grid.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("field values must be finite")
        object.__setattr__(self, "values", _frozen(values))

    @classmethod
    def zeros(cls, grid: GridSpec) -> "Field2D":
        return cls(grid, np.zeros(grid.shape))

    @classmethod
    def full(cls, grid: GridSpec, value: float) -> "Field2D":
        return cls(grid, np.full(grid.shape, float(value)))

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self.values
        return self.values.astype(dtype)

    def __eq__(self, other):
        if not isinstance(other, Field2D):
            return NotImplemented
        return self.grid == other.grid and np.array_equal(self.values, other.values)

    __hash__ = None


class SpeedModel(Field2D):
    """Wave-speed map in m/s; every value strictly positive.

    ``bounds`` optionally pins the admissible physical range ``(c_lo, c_hi)``.
    """

    def __init__(self, grid: GridSpec, values, bounds: tuple[float, float] | None = None):
        super().__init__(grid, values)
        if not np.all(self.values > 0):
            raise ValueError("speed model must be strictly positive")
        if bounds is not None:
            lo, hi = bounds
            if self.values.min() < lo or self.values.max() > hi:
                raise ValueError(
                    f"speeds [{self.values.min():g}, {self.values.max():g}] outside bounds [{lo:g}, {hi:g}]"
                )
        object.__setattr__(self, "bounds", None if bounds is None else (float(bounds[0]), float(bounds[1])))

    @classmethod
    def uniform(cls, grid: GridSpec, speed: float) -> "SpeedModel":
        return cls(grid, np.full(grid.shape, float(speed)))

    @property
    def c_max(self) -> float:
        return float(self.values.max())


@dataclass(frozen=True)
class TimeAxis:
    """Uniform sampling ``t_k = k * dt`` for ``k = 0 .. n_steps - 1``."""

    dt: float
    n_steps: int

    def __post_init__(self):
        object.__setattr__(self, "dt", float(self.dt))
        object.__setattr__(self, "n_steps", int(self.n_steps))
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.n_steps < 2:
            raise ValueError(f"need at least two time samples, got {self.n_steps}")

    @property
    def duration(self) -> float:
        return self.dt * (self.n_steps - 1)

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps) * self.dt


def _check_same_grid(a: Field2D, b: Field2D):
    if a.grid != b.grid:
        raise ShapeError(f"grid mismatch: {a.grid} vs {b.grid}")


def field_axpy(a: float, x: Field2D, y: Field2D) -> Field2D:
    """Return ``a * x + y`` on the shared grid."""
    _check_same_grid(x, y)
    return Field2D(x.grid, a * x.values + y.values)


def model_mse(a: Field2D, b: Field2D) -> float:
    """Mean over cells of ``(a - b) ** 2`` in (m/s)^2.

    Multiply by ``grid.size`` to get the pixel-wise sum of squared errors.
    """
    _check_same_grid(a, b)
    diff = a.values - b.values
    return float(np.mean(diff * diff))


_DTYPE = "f32le"
_ORDER = "row-major-y-slow"


def _paths(path) -> tuple[Path, Path]:
    base = Path(os.fspath(path))
    if base.suffix in (".json", ".bin"):
        base = base.with_suffix("")
    return base.with_suffix(".json"), base.with_suffix(".bin")


def save_field(f: Field2D, path) -> tuple[Path, Path]:
    """Write ``<path>.json`` and ``<path>.bin`` (little-endian float32 payload)."""
    meta_path, bin_path = _paths(path)
    meta_path.parent.mkdir(parents=True, exist_ok=True)
    meta = {"nx": f.grid.nx, "ny": f.grid.ny, "h_m": f.grid.h, "dtype": _DTYPE, "order": _ORDER}
    meta_path.write_text(json.dumps(meta, indent=2))
    f.values.astype("<f4").tofile(bin_path)
    return meta_path, bin_path


def load_field(path) -> Field2D:
    meta_path, bin_path = _paths(path)
    meta = json.loads(meta_path.read_text())
    if meta.get("dtype") != _DTYPE or meta.get("order") != _ORDER:
        raise FormatError(f"unsupported field encoding {meta.get('dtype')}/{meta.get('order')}")
    grid = GridSpec(meta["nx"], meta["ny"], meta["h_m"])
    payload = np.fromfile(bin_path, dtype="<f4")
    if payload.size != grid.size:
        raise FormatError(f"{bin_path} holds {payload.size} values, header expects {grid.size}")
    return Field2D(grid, payload.astype(np.float64).reshape(grid.shape))
