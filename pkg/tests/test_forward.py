from fractions import Fraction

import numpy as np
import pytest

from fwikit import _kernels
from fwikit.exceptions import ConsistencyError, GeometryError, InstabilityError, ShapeError
from fwikit.forward import (
    AbsorberSpec,
    Propagator,
    SimConfig,
    SourceInjection,
    laplacian,
    max_stable_dt,
    replay_reverse,
    simulate_forward,
    simulate_shots,
    step,
    stencil_coefficients,
)
from fwikit.grid import Field2D, GridSpec, SpeedModel, TimeAxis
from fwikit.signals import RickerParams, ricker_trace


def _sealed(n=40, n_steps=200, c=1500.0, frac=0.9):
    grid = GridSpec(n, n, 1e-3)
    st = stencil_coefficients(4)
    dt = frac * max_stable_dt(np.array([c]), grid.h, st)
    return SimConfig(grid, TimeAxis(dt, n_steps), st, AbsorberSpec(width=0)), SpeedModel.uniform(grid, c)


# --- stencil ---------------------------------------------------------------


def test_radius_one_is_classic():
    np.testing.assert_array_equal(stencil_coefficients(1).coefficients, [1.0, -2.0, 1.0])


@pytest.mark.parametrize("radius", range(1, 9))
def test_stencil_symmetric_zero_sum(radius):
    st = stencil_coefficients(radius)
    assert sum(st.exact) == 0
    assert st.coefficients.size == 2 * radius + 1
    assert abs(st.coefficients.sum()) < 1e-12
    # x^2 on integer nodes gives exactly 2
    assert sum(c * k * k for c, k in zip(st.exact, range(-radius, radius + 1))) == 2


def test_radius_four_exact_rationals():
    assert stencil_coefficients(4).exact[4:] == (
        Fraction(-205, 72),
        Fraction(8, 5),
        Fraction(-1, 5),
        Fraction(8, 315),
        Fraction(-1, 560),
    )


def test_bad_radius():
    with pytest.raises(ValueError):
        stencil_coefficients(0)


# --- laplacian -------------------------------------------------------------


def test_laplacian_constant_interior_zero():
    g = GridSpec(20, 20, 1.0)
    out = laplacian(Field2D.full(g, 3.0), stencil_coefficients(4)).values
    np.testing.assert_allclose(out[4:-4, 4:-4], 0.0, atol=1e-12)


def test_laplacian_quadratic_is_four():
    g = GridSpec(21, 21, 1.0)
    X, Y = g.coordinates()
    out = laplacian(Field2D(g, X**2 + Y**2), stencil_coefficients(4)).values
    np.testing.assert_allclose(out[4:-4, 4:-4], 4.0, rtol=0, atol=1e-9)


def test_laplacian_spike():
    g = GridSpec(11, 11, 0.5)
    u = np.zeros(g.shape)
    u[5, 5] = 1.0
    st = stencil_coefficients(4)
    out = laplacian(Field2D(g, u), st).values
    assert out[5, 5] == pytest.approx(2 * st.half[0] / 0.25, rel=1e-14)
    assert out[5, 7] == pytest.approx(st.half[2] / 0.25, rel=1e-14)


def test_laplacian_tiles_agree(rng):
    g = GridSpec(70, 45, 1.0)
    u = Field2D(g, rng.standard_normal(g.shape))
    st = stencil_coefficients(4)
    ref = laplacian(u, st).values
    for tile in [(1, 1), (7, 13), (64, 64), 5]:
        np.testing.assert_array_equal(laplacian(u, st, tile=tile).values, ref)


def test_laplacian_too_small():
    with pytest.raises(ShapeError):
        laplacian(Field2D.zeros(GridSpec(8, 20, 1.0)), stencil_coefficients(4))


def test_generic_radius_matches_numpy(rng):
    g = GridSpec(30, 25, 1.0)
    u = rng.standard_normal(g.shape)
    st = stencil_coefficients(3)
    out = laplacian(Field2D(g, u), st).values
    p = np.pad(u, 3)
    ref = np.zeros_like(u)
    for k, c in zip(range(-3, 4), st.coefficients):
        ref += c * p[3 + k:3 + k + 25, 3:33] + c * p[3:28, 3 + k:3 + k + 30]
    np.testing.assert_allclose(out, ref, atol=1e-12)


# --- step / stability --------------------------------------------------------


def test_step_zero_and_constant():
    cfg, theta = _sealed()
    z = Field2D.zeros(cfg.grid)
    np.testing.assert_array_equal(step(z, z, theta, z, cfg).values, 0.0)
    k = Field2D.full(cfg.grid, 2.5)
    out = step(k, k, theta, z, cfg).values
    np.testing.assert_allclose(out[4:-4, 4:-4], 2.5, rtol=1e-14)


def test_step_matches_update_formula(rng):
    cfg, theta = _sealed(n=24)
    a, b, f = (Field2D(cfg.grid, rng.standard_normal(cfg.grid.shape)) for _ in range(3))
    dt, h = cfg.time.dt, cfg.grid.h
    lap = laplacian(b, cfg.stencil).values
    expect = (theta.values * dt) ** 2 * lap + 2 * b.values - a.values + dt * dt * f.values
    np.testing.assert_allclose(step(a, b, theta, f, cfg).values, expect, rtol=1e-12, atol=1e-12)


def test_first_arrival_time():
    n, c = 120, 1500.0
    grid = GridSpec(n, n, 1e-3)
    st = stencil_coefficients(4)
    dt = 0.9 * max_stable_dt(np.array([c]), grid.h, st)
    cfg = SimConfig(grid, TimeAxis(dt, 200), st, AbsorberSpec(width=20))
    impulse = np.zeros(cfg.time.n_steps)
    impulse[0] = 1.0
    src = (45, 60)
    gather, _ = simulate_forward(cfg, SpeedModel.uniform(grid, c), SourceInjection.point(src, impulse), [(75, 60)])
    tr = np.abs(gather.data[0])
    # leading-edge half-maximum pick
    onset = np.argmax(tr > 0.5 * tr.max())
    assert abs(onset * dt - 30 * grid.h / c) <= 2 * dt


def test_paper_operating_point_is_stable():
    limit = max_stable_dt(np.array([5900.0]), 300e-6, stencil_coefficients(4))
    assert 5900.0 * 25e-9 / 300e-6 == pytest.approx(0.4917, abs=1e-4)
    assert 25e-9 < limit


def test_max_dt_scales_with_h():
    st = stencil_coefficients(4)
    a = max_stable_dt(np.array([1500.0]), 1e-3, st)
    assert max_stable_dt(np.array([1500.0]), 2e-3, st) == pytest.approx(2 * a, rel=1e-14)


def _blowup_run(frac):
    cfg, theta = _sealed(n=40, n_steps=1000, frac=frac)
    prop = Propagator(cfg, theta, check_stability=False)
    rng = np.random.default_rng(0)
    prev, curr = prop.new_buffers(1, 2)
    prop.interior(curr)[0] = rng.standard_normal(cfg.grid.shape) * 1e-3
    prop.interior(prev)[0] = prop.interior(curr)[0]
    start = np.abs(curr).max()
    peak = start
    for _ in range(cfg.time.n_steps):
        prop.advance(prev, curr)
        prev, curr = curr, prev
        peak = max(peak, np.abs(curr).max())
        if not np.isfinite(peak) or peak > 1e6 * start:
            return np.inf
    return peak / start


def test_stability_boundary():
    assert _blowup_run(0.99) < 100
    assert _blowup_run(1.05) == np.inf


def test_unstable_dt_rejected():
    cfg, theta = _sealed(frac=1.05)
    with pytest.raises(InstabilityError):
        Propagator(cfg, theta)


def test_energy_bounded_after_cutoff():
    # leapfrog invariant |u^{k+1} - u^k|^2 - c^2 dt^2 <u^{k+1}, L u^k> on a sealed grid
    cfg, theta = _sealed(n=60, n_steps=2200, frac=0.95)
    trace = ricker_trace(RickerParams(1e5, 0.9), cfg.time).samples.copy()
    cut = 200
    trace[cut:] = 0.0
    snaps = []
    simulate_forward(
        cfg, theta, SourceInjection.point((30, 30), trace, 1.0 / cfg.time.dt**2), [(30, 30)],
        snapshot_every=1, snapshot_callback=lambda k, u: snaps.append(u[0].copy()),
    )
    k2 = (theta.values[0, 0] * cfg.time.dt) ** 2
    energy = []
    for k in range(cut, len(snaps) - 1):
        lap = laplacian(Field2D(cfg.grid, snaps[k]), cfg.stencil, h=cfg.grid.h).values
        d = snaps[k + 1] - snaps[k]
        energy.append(np.sum(d * d) - k2 * np.sum(snaps[k + 1] * lap))
    energy = np.array(energy)
    assert energy[0] > 0
    assert energy.max() <= 1.05 * energy[0]
    assert energy.min() >= 0.95 * energy[0]


# --- simulation --------------------------------------------------------------


def test_zero_source_zero_gather(small_config, water):
    g, _ = simulate_forward(small_config, water, SourceInjection.point((24, 24), np.zeros(300)), [(20, 20), (30, 25)])
    assert not g.data.any()


def test_reciprocity():
    n = 100
    grid = GridSpec(n, n, 3e-4)
    st = stencil_coefficients(4)
    dt = 0.9 * max_stable_dt(np.array([1450.0]), grid.h, st)
    cfg = SimConfig(grid, TimeAxis(dt, 500), st, AbsorberSpec())
    theta = SpeedModel.uniform(grid, 1450.0)
    w = ricker_trace(RickerParams(), cfg.time).samples
    a, b = (30, 40), (65, 58)
    ab, _ = simulate_forward(cfg, theta, SourceInjection.point(a, w), [b])
    ba, _ = simulate_forward(cfg, theta, SourceInjection.point(b, w), [a])
    np.testing.assert_allclose(ab.data, ba.data, rtol=0, atol=1e-6 * np.abs(ab.data).max())


def test_source_in_absorber_rejected(small_config, water):
    with pytest.raises(GeometryError):
        simulate_forward(small_config, water, SourceInjection.point((2, 24), np.ones(300)), [(24, 24)])


def test_source_length_mismatch(small_config, water):
    with pytest.raises(ShapeError):
        simulate_forward(small_config, water, SourceInjection.point((24, 24), np.ones(10)), [(24, 24)])


def test_batched_shots_equal_single(small_config, water):
    w = ricker_trace(RickerParams(), small_config.time).samples
    srcs = [SourceInjection.point((18, 20), w), SourceInjection.point((28, 26), 2 * w)]
    rec = [(15, 30), (33, 30)]
    both = simulate_shots(small_config, water, srcs, rec)
    for s, (g, _) in zip(srcs, both):
        single, _ = simulate_forward(small_config, water, s, rec)
        np.testing.assert_array_equal(single.data, g.data)


def test_worker_count_bitwise(small_config, water):
    w = ricker_trace(RickerParams(), small_config.time).samples
    src = SourceInjection.point((20, 22), w)
    old = _kernels.set_workers(1)
    try:
        one, _ = simulate_forward(small_config, water, src, [(30, 30)])
        _kernels.set_workers(4)
        many, _ = simulate_forward(small_config, water, src, [(30, 30)])
    finally:
        _kernels.set_workers(old)
    np.testing.assert_array_equal(one.data, many.data)


# --- replay --------------------------------------------------------------


def _stored(cfg, theta, src):
    snaps = []
    simulate_forward(cfg, theta, src, [(24, 24)], snapshot_every=1, snapshot_callback=lambda k, u: snaps.append(u[0].copy()))
    return [np.zeros(cfg.grid.shape)] + snaps


def test_replay_sealed_exact():
    cfg, theta = _sealed(n=48, n_steps=300)
    src = SourceInjection.point((20, 24), ricker_trace(RickerParams(1e5, 0.9), cfg.time).samples)
    snaps = _stored(cfg, theta, src)
    _, tape = simulate_forward(cfg, theta, src, [(24, 24)], record_tape=True)
    scale = max(np.abs(s).max() for s in snaps)
    worst = 0.0
    for k, u in zip(range(cfg.time.n_steps - 1, -1, -1), replay_reverse(cfg, theta, tape, src)):
        worst = max(worst, np.abs(u - snaps[k]).max())
    assert worst <= 1e-10 * scale


def test_replay_with_absorber(small_config, water):
    src = SourceInjection.point((20, 24), ricker_trace(RickerParams(), small_config.time).samples)
    snaps = _stored(small_config, water, src)
    _, tape = simulate_forward(small_config, water, src, [(24, 24)], record_tape=True)
    region = small_config.physical_region
    scale = max(np.abs(s).max() for s in snaps)
    out = list(replay_reverse(small_config, water, tape, src))
    assert len(out) == small_config.time.n_steps
    worst = max(np.abs(u - snaps[k][region]).max() for k, u in zip(range(len(out) - 1, -1, -1), out))
    assert worst <= 1e-5 * scale


def test_replay_wrong_model(small_config, water):
    src = SourceInjection.point((20, 24), ricker_trace(RickerParams(), small_config.time).samples)
    _, tape = simulate_forward(small_config, water, src, [(24, 24)], record_tape=True)
    other = SpeedModel.uniform(small_config.grid, 1500.0)
    with pytest.raises(ConsistencyError):
        next(replay_reverse(small_config, other, tape, src))


def test_tape_memory_is_halo_sized(small_config, water):
    src = SourceInjection.point((20, 24), ricker_trace(RickerParams(), small_config.time).samples)
    _, tape = simulate_forward(small_config, water, src, [(24, 24)], record_tape=True)
    n_phys = small_config.grid.nx - 2 * small_config.absorber.width
    n_rep = n_phys - 2 * small_config.stencil.radius
    assert tape.halo_cell_count == n_phys**2 - n_rep**2
    assert tape.halo.shape == (small_config.time.n_steps, tape.halo_cell_count)


def test_absorber_profile():
    ab = AbsorberSpec(width=20)
    d = np.linspace(0, 1, 11)
    prof = ab.profile(d)
    assert prof[0] == 0.0
    assert np.all(np.diff(prof) >= 0)
    sigma = ab.damping(GridSpec(60, 60, 3e-4))
    assert sigma[30, 30] == 0.0 and sigma[0, 0] > 0


def test_thin_absorber_rejected():
    with pytest.raises(ValueError):
        SimConfig(GridSpec(40, 40, 1e-3), TimeAxis(1e-7, 10), stencil_coefficients(4), AbsorberSpec(width=2))
