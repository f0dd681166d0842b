import numpy as np
import pytest

from fwikit.exceptions import GeometryError
from fwikit.grid import GridSpec
from fwikit.specimens import (
    DEFAULT_MATERIALS,
    SpecimenKind,
    build_acquisition,
    build_specimen,
    points_in_polygon,
    star_polygon,
)

W = 20


def _grid(scale=1.0, h=300e-6):
    n = int(round(150e-3 * scale / h)) + 2 * W
    return GridSpec(n, n, h)


def _center(grid):
    return grid.ny // 2, grid.nx // 2


def test_parse_names():
    assert SpecimenKind.parse("I") is SpecimenKind.CAMEMBERT
    assert SpecimenKind.parse("vi") is SpecimenKind.ACRYLIC_STAR
    assert SpecimenKind.parse("STEEL_HOLE") is SpecimenKind.STEEL_HOLE
    with pytest.raises(ValueError):
        SpecimenKind.parse("granite")


def test_camembert_values():
    grid = _grid(0.3)
    m = build_specimen("camembert", grid, scale=0.3)
    assert m.values[_center(grid)] == 3600.0
    assert m.values[W + 1, W + 1] == 3000.0
    assert set(np.unique(m.values)) == {3000.0, 3600.0}


@pytest.mark.parametrize("kind", [k for k in SpecimenKind if k is not SpecimenKind.CAMEMBERT])
def test_far_corner_is_water(kind):
    grid = _grid(0.3)
    m = build_specimen(kind, grid, scale=0.3)
    assert m.values[0, 0] == 1450.0 and m.values[-1, -1] == 1450.0


def test_steel_hole():
    grid = _grid(0.3)
    m = build_specimen("steel_hole", grid, scale=0.3)
    cy, cx = _center(grid)
    assert m.values[cy, cx] == 1450.0
    # 6 mm off-center at s = 0.3: outside the 3 mm hole, inside the 18 mm block
    assert m.values[cy, cx + 20] == DEFAULT_MATERIALS["steel"]


def test_side_drilled_holes():
    grid = _grid(1.0)
    m = build_specimen("steel_sdh2", grid)
    X, Y = grid.coordinates()
    cy, cx = _center(grid)
    x_mid = X[cy, cx]
    for sign in (-1, 1):
        col = np.argmin(np.abs(X[cy] - (x_mid + sign * 10e-3 - 0.5 * grid.h)))
        assert m.values[cy, col] == 1450.0
    assert m.values[cy, cx] == DEFAULT_MATERIALS["steel"]


def test_star_polygon_membership():
    poly = star_polygon(0.0, 0.0, 1.0, 0.4)
    assert poly.shape == (10, 2)
    assert points_in_polygon(0.0, 0.0, poly)
    assert not points_in_polygon(0.9, 0.9, poly)
    # a point just inside a tip
    tip = poly[0] * 0.95
    assert points_in_polygon(tip[0], tip[1], poly)


def test_geometry_too_large():
    with pytest.raises(GeometryError):
        build_specimen("camembert", _grid(0.3), geometry_params={"camembert_radius": 100e-3}, scale=0.3)
    with pytest.raises(GeometryError):
        build_specimen("camembert", GridSpec(30, 30, 3e-4))


def test_rasterization_deterministic_and_resolution_consistent():
    for kind in SpecimenKind:
        coarse = build_specimen(kind, _grid(0.5), scale=0.5)
        again = build_specimen(kind, _grid(0.5), scale=0.5)
        np.testing.assert_array_equal(coarse.values, again.values)
        fine = build_specimen(kind, _grid(0.5, 150e-6), scale=0.5)

        def area(m):
            bg = m.values[0, 0]
            return np.count_nonzero(m.values != bg) * m.grid.h**2

        # allowed change: two layers of coarse perimeter cells
        bg = coarse.values[0, 0]
        inside = coarse.values != bg
        edge = inside ^ np.roll(inside, 1, 0) | inside ^ np.roll(inside, 1, 1)
        perimeter_cells = np.count_nonzero(edge)
        assert abs(area(fine) - area(coarse)) <= 2 * perimeter_cells * coarse.grid.h**2


def test_acquisition_counts_and_pitch():
    grid = _grid(1.0)
    acq = build_acquisition(grid)
    assert acq.n_receivers == 128 and acq.n_emitters == 10
    steps = np.diff(acq.receivers[:64, 0])
    assert set(steps) <= {5, 6}
    assert np.mean(steps) == pytest.approx(1.59e-3 / grid.h, abs=0.05)
    np.testing.assert_array_equal(acq.emitter_index, [0, 15, 31, 47, 63, 64, 79, 95, 111, 127])
    assert (acq.element_x.max() - acq.element_x.min()) == pytest.approx(63 * 1.59e-3)


def test_acquisition_mirror_symmetry():
    grid = _grid(0.3)
    acq = build_acquisition(grid, 0.3)
    upper, lower = acq.receivers[:64], acq.receivers[64:]
    np.testing.assert_array_equal(upper[:, 0], lower[:, 0])
    mid = 0.5 * (upper[0, 1] + lower[0, 1])
    assert mid == pytest.approx((grid.ny - 1) / 2, abs=0.5)
    assert lower[0, 1] - upper[0, 1] == pytest.approx(110e-3 * 0.3 / grid.h, abs=1)
    e = acq.emitter_index
    np.testing.assert_array_equal(e[:5] + 64, e[5:])


def test_acquisition_errors():
    with pytest.raises(GeometryError):
        build_acquisition(_grid(0.3), 1.0)
    with pytest.raises(GeometryError):
        build_acquisition(_grid(1.0), emitter_elements=(0, 65))
