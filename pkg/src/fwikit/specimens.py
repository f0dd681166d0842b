"""Test specimens and the twin-array acquisition geometry.

Every length here is given at full scale in meters and multiplied by the
scale factor ``s``. Shapes are centered on the physical (non-absorbing)
region and rasterized by cell-center membership.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .exceptions import GeometryError
from .grid import GridSpec, SpeedModel

__all__ = [
    "SpecimenKind",
    "DEFAULT_MATERIALS",
    "DEFAULT_GEOMETRY",
    "build_specimen",
    "AcquisitionGeometry",
    "build_acquisition",
    "star_polygon",
    "points_in_polygon",
]


class SpecimenKind(str, enum.Enum):
    CAMEMBERT = "camembert"
    ACRYLIC_SDH2 = "acrylic_sdh2"
    STEEL_SQUARE = "steel_square"
    STEEL_HOLE = "steel_hole"
    STEEL_SDH2 = "steel_sdh2"
    ACRYLIC_STAR = "acrylic_star"

    @classmethod
    def parse(cls, value) -> "SpecimenKind":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower()
        roman = {"i": 0, "ii": 1, "iii": 2, "iv": 3, "v": 4, "vi": 5}
        if key in roman:
            return list(cls)[roman[key]]
        try:
            return cls(key)
        except ValueError:
            try:
                return cls[key.upper()]
            except KeyError:
                raise ValueError(f"unknown specimen {value!r}; choose from {[k.value for k in cls]}") from None


# m/s
DEFAULT_MATERIALS = {
    "water": 1450.0,
    "camembert_medium": 3000.0,
    "camembert_inclusion": 3600.0,
    "steel": 5900.0,
    "acrylic": 2730.0,
}

# meters at scale 1
DEFAULT_GEOMETRY = {
    "camembert_radius": 30e-3,
    "square_side": 60e-3,
    "sdh_radius": 2e-3,
    "sdh_spacing": 20e-3,
    "hole_radius": 10e-3,
    "star_outer": 35e-3,
    "star_inner": 14e-3,
}


def star_polygon(cx, cy, outer, inner, points=5, rotation=np.pi / 2) -> np.ndarray:
    """Vertices ``(k, 2)`` of a star alternating between the two radii."""
    k = np.arange(2 * points)
    ang = rotation + k * np.pi / points
    rad = np.where(k % 2 == 0, outer, inner)
    return np.column_stack([cx + rad * np.cos(ang), cy - rad * np.sin(ang)])


def points_in_polygon(x, y, poly) -> np.ndarray:
    """Even-odd rule membership of the points ``(x, y)`` in a closed polygon."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    inside = np.zeros(np.broadcast(x, y).shape, dtype=bool)
    xa, ya = poly[:, 0], poly[:, 1]
    xb, yb = np.roll(xa, -1), np.roll(ya, -1)
    for x0, y0, x1, y1 in zip(xa, ya, xb, yb):
        crosses = (y0 > y) != (y1 > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            x_cut = x0 + (y - y0) * (x1 - x0) / (y1 - y0)
        inside ^= crosses & (x < x_cut)
    return inside


def _physical_box(grid: GridSpec, absorber_width: int):
    w = absorber_width
    if 2 * w >= min(grid.nx, grid.ny):
        raise GeometryError("absorber leaves no physical region")
    x_lo, x_hi = w * grid.h, (grid.nx - 1 - w) * grid.h
    y_lo, y_hi = w * grid.h, (grid.ny - 1 - w) * grid.h
    return x_lo, x_hi, y_lo, y_hi


def _require_inside(box, extent, what):
    x_lo, x_hi, y_lo, y_hi = box
    ex_lo, ex_hi, ey_lo, ey_hi = extent
    if ex_lo < x_lo or ex_hi > x_hi or ey_lo < y_lo or ey_hi > y_hi:
        raise GeometryError(f"{what} does not fit inside the physical region")


def build_specimen(
    kind,
    grid: GridSpec,
    materials: dict | None = None,
    geometry_params: dict | None = None,
    scale: float = 1.0,
    absorber_width: int = 20,
) -> SpeedModel:
    """Rasterize a specimen onto ``grid``.

    Parameters
    ----------
    kind : SpecimenKind or str
    materials : dict, optional
        Overrides of :data:`DEFAULT_MATERIALS`.
    geometry_params : dict, optional
        Overrides of :data:`DEFAULT_GEOMETRY` (full-scale meters).
    scale : float
        Multiplies every length in ``geometry_params``.
    absorber_width : int
        Cells of absorbing band; the shape must stay clear of it.

    Raises
    ------
    GeometryError
        If the scaled shape leaves the physical region.
    """
    kind = SpecimenKind.parse(kind)
    mat = {**DEFAULT_MATERIALS, **(materials or {})}
    geo = {k: v * scale for k, v in {**DEFAULT_GEOMETRY, **(geometry_params or {})}.items()}
    box = _physical_box(grid, absorber_width)
    cx, cy = 0.5 * (box[0] + box[1]), 0.5 * (box[2] + box[3])
    X, Y = grid.coordinates()

    def disk(x0, y0, rad):
        return (X - x0) ** 2 + (Y - y0) ** 2 <= rad * rad

    if kind is SpecimenKind.CAMEMBERT:
        rad = geo["camembert_radius"]
        _require_inside(box, (cx - rad, cx + rad, cy - rad, cy + rad), "camembert inclusion")
        values = np.full(grid.shape, mat["camembert_medium"])
        values[disk(cx, cy, rad)] = mat["camembert_inclusion"]
        return SpeedModel(grid, values)

    values = np.full(grid.shape, mat["water"])
    if kind is SpecimenKind.ACRYLIC_STAR:
        outer = geo["star_outer"]
        poly = star_polygon(cx, cy, outer, geo["star_inner"])
        _require_inside(box, (poly[:, 0].min(), poly[:, 0].max(), poly[:, 1].min(), poly[:, 1].max()), "star")
        values[points_in_polygon(X, Y, poly)] = mat["acrylic"]
        return SpeedModel(grid, values)

    half = 0.5 * geo["square_side"]
    _require_inside(box, (cx - half, cx + half, cy - half, cy + half), "block")
    material = mat["acrylic"] if kind is SpecimenKind.ACRYLIC_SDH2 else mat["steel"]
    values[(np.abs(X - cx) <= half) & (np.abs(Y - cy) <= half)] = material
    if kind is SpecimenKind.STEEL_HOLE:
        values[disk(cx, cy, geo["hole_radius"])] = mat["water"]
    elif kind in (SpecimenKind.ACRYLIC_SDH2, SpecimenKind.STEEL_SDH2):
        off = 0.5 * geo["sdh_spacing"]
        for x0 in (cx - off, cx + off):
            values[disk(x0, cy, geo["sdh_radius"])] = mat["water"]
    return SpeedModel(grid, values)


@dataclass(eq=False)
class AcquisitionGeometry:
    """Receiver cells of both arrays and the subset that also emits.

    ``receivers[:64]`` is the upper array, ``receivers[64:]`` the lower one,
    each ordered by element number. ``emitter_index`` points into
    ``receivers``.
    """

    receivers: np.ndarray = field(repr=False)
    emitter_index: np.ndarray
    element_x: np.ndarray = field(repr=False)
    array_y: tuple

    @property
    def emitters(self) -> np.ndarray:
        return self.receivers[self.emitter_index]

    @property
    def n_receivers(self) -> int:
        return self.receivers.shape[0]

    @property
    def n_emitters(self) -> int:
        return self.emitter_index.size


def build_acquisition(
    grid: GridSpec,
    scale: float = 1.0,
    n_elements: int = 64,
    pitch: float = 1.59e-3,
    separation: float = 110e-3,
    emitter_elements=(1, 16, 32, 48, 64),
    absorber_width: int = 20,
) -> AcquisitionGeometry:
    """Two facing horizontal arrays centered on the physical region.

    Element positions are snapped to the nearest cell. ``emitter_elements``
    uses 1-based element numbers and applies to both arrays.
    """
    h = grid.h
    box = _physical_box(grid, absorber_width)
    cx, cy = 0.5 * (box[0] + box[1]), 0.5 * (box[2] + box[3])
    offsets = (np.arange(n_elements) - 0.5 * (n_elements - 1)) * pitch * scale
    xs = cx + offsets
    ys = (cy - 0.5 * separation * scale, cy + 0.5 * separation * scale)
    _require_inside(box, (xs.min(), xs.max(), ys[0], ys[1]), "transducer arrays")
    cols = np.rint(xs / h).astype(np.int64)
    rows = [int(np.rint(y / h)) for y in ys]
    receivers = np.array([(i, j) for j in rows for i in cols], dtype=np.int64)
    elems = np.asarray(emitter_elements, dtype=np.int64)
    if np.any((elems < 1) | (elems > n_elements)):
        raise GeometryError(f"emitter elements must lie in 1..{n_elements}")
    emitter_index = np.concatenate([elems - 1, elems - 1 + n_elements])
    return AcquisitionGeometry(receivers, emitter_index, xs, (ys[0], ys[1]))
