import numpy as np
import pytest
from hypothesis import given, strategies as st

from wpscatter.foundation import make_grid, norm
from wpscatter.potentials import PotentialModel, make_coulomb_like, make_short_range, make_zero_potential
from wpscatter.scattering import (CutoffSpec, ConvergenceReport, annulus_mass_outside, band_limited_data,
                                  low_energy_cutoff, outgoing_decay_check, outgoing_sup, phase_space_mass_outside,
                                  short_range_remainder_check, wave_operator_trace)
from wpscatter.propagators import free_propagate
from wpscatter.wpt import WindowPair, band_limited_window, forward_wpt, gaussian_window, make_lattice

ZERO = make_zero_potential()
SHORT = PotentialModel(ZERO, make_short_range(0.1, 0.5))
MIXED = PotentialModel(make_coulomb_like(0.1, 0.5), make_short_range(0.1, 0.5))


@pytest.fixture(scope="module")
def big():
    g = make_grid(1, 200.0, 2048)
    pair = WindowPair(gaussian_window(g, 2.0), band_limited_window(g, 0.12))
    return g, pair, make_lattice(g, 8.0, 4.0, pair), band_limited_data(g, 1.0, 4.0)


# ---------------------------------------------------------------- data


@pytest.mark.parametrize("n,L,N", [(1, 100.0, 1024), (2, 40.0, 256)])
def test_band_limited_data(n, L, N):
    g = make_grid(n, L, N)
    f = band_limited_data(g, 1.0, 4.0)
    assert norm(f) == pytest.approx(1.0, abs=1e-13)
    assert annulus_mass_outside(f, 1.0, 4.0) < 1e-12


def test_band_limited_data_direction():
    g = make_grid(1, 100.0, 1024)
    f = band_limited_data(g, 1.0, 4.0, direction=1)
    p = np.abs(np.fft.fft(f.values)) ** 2
    assert p[g.k_coords[0] < 0].sum() < 1e-25 * p.sum()
    g2 = make_grid(2, 40.0, 128)
    h = band_limited_data(g2, 1.0, 4.0, direction=(1.0, 0.0))
    q = np.abs(np.fft.fftn(h.values)) ** 2
    kx = g2.k_coords[0] * np.ones(g2.shape)
    assert q[kx > 0].sum() > 0.99 * q.sum()
    with pytest.raises(ValueError):
        band_limited_data(g, 4.0, 1.0)
    with pytest.raises(ValueError):
        band_limited_data(make_grid(1, 100.0, 64), 1.0, 4.0)


def test_phase_space_mass():
    g = make_grid(1, 100.0, 1024)
    pair = WindowPair(gaussian_window(g, 4.0), gaussian_window(g, 4.0))
    lat = make_lattice(g, 8.0, 4.0, pair)
    f = band_limited_data(g, 1.0, 4.0, x0=5.0)
    F = forward_wpt(f, pair.phi, lat)
    wide = phase_space_mass_outside(F, 0.5, 4.5, x_radius=40.0)
    assert wide < 1e-3
    # shrinking the region can only add mass outside it
    assert phase_space_mass_outside(F, 1.0, 4.0) >= wide


# ---------------------------------------------------------------- cutoff


def test_cutoff_validation():
    for d, w in ((0.0, None), (-1.0, None), (1.0, 0.5)):
        with pytest.raises(ValueError):
            CutoffSpec(d, w)
    assert CutoffSpec(0.5).width == 0.125


@given(d=st.floats(0.05, 0.5), sharp=st.booleans())
def test_cutoff_keeps_high_energy(d, sharp):
    g = make_grid(1, 100.0, 1024)
    f = band_limited_data(g, 2 * d + 0.2, 4.0)
    out = low_energy_cutoff(f, CutoffSpec(d), sharp=sharp)
    assert norm(out - f) < 1e-12


def test_cutoff_small_d_identity():
    g = make_grid(1, 100.0, 1024)
    f = band_limited_data(g, 1.0, 4.0, x0=10.0) + band_limited_data(g, 0.3, 0.6)
    errs = [norm(low_energy_cutoff(f, CutoffSpec(d)) - f) for d in (0.5, 0.4, 0.3, 0.05)]
    assert errs[0] > 0.3 and errs[-1] < 1e-12
    assert all(b <= a + 1e-15 for a, b in zip(errs, errs[1:]))


def test_sharp_cutoff_idempotent():
    g = make_grid(2, 20.0, 64)
    f = band_limited_data(g, 0.2, 4.0)
    P = CutoffSpec(1.0)
    once = low_energy_cutoff(f, P, sharp=True)
    assert norm(low_energy_cutoff(once, P, sharp=True) - once) < 1e-14
    assert norm(once) < norm(f)


# ---------------------------------------------------------------- Cauchy traces


def test_trace_zero_potential(big):
    g, pair, lat, f = big
    rep = wave_operator_trace(f, ZERO, pair, [2, 4, 8], lat)
    assert max(rep.diffs) < 1e-5
    assert all(abs(r - 1) < 1e-10 for r in rep.norms)


@pytest.fixture(scope="module")
def short_traces(big):
    g, pair, lat, f = big
    kw = dict(ladder=[2, 4, 8, 16, 32], exponent_max=-0.2)
    mod = wave_operator_trace(f, SHORT, pair, lattice=lat, **kw)
    free = wave_operator_trace(f, SHORT, pair, lattice=lat, comparison="free", **kw)
    rho8 = wave_operator_trace(f, SHORT, pair, lattice=make_lattice(g, 8.0, 8.0, pair), **kw)
    return mod, free, rho8


def test_trace_short_range_only(short_traces):
    mod, free, _ = short_traces
    # no long-range part: the modified comparison is the free one
    assert np.allclose(mod.diffs, free.diffs, rtol=1e-9, atol=0)
    assert mod.convergent and free.convergent
    # Cook rate t^(-delta_S) is an upper bound; the measured slope is steeper
    assert mod.exponent < -0.5 + 0.2


def test_trace_rho_stability(short_traces):
    mod, _, rho8 = short_traces
    assert np.allclose(mod.diffs, rho8.diffs, rtol=1e-8, atol=0)


def test_trace_validation_and_csv(big, tmp_path):
    g, pair, lat, f = big
    with pytest.raises(ValueError):
        wave_operator_trace(f, ZERO, pair, [4, 2], lat)
    with pytest.raises(ValueError):
        wave_operator_trace(f, ZERO, pair, [2, 4], lat, comparison="dollard")
    rep = ConvergenceReport([1.0, 2.0, 4.0], [0.5, 0.25], [1.0, 1.0, 1.0], -1.0, 0.0, True, True, 0.0)
    rep.write_csv(tmp_path / "r.csv")
    rows = (tmp_path / "r.csv").read_text().splitlines()
    assert rows[0] == "t,diff,norm_ratio" and rows[1].startswith("1.000000000000e+00,,")
    assert "convergent=1" in rep.summary()


def test_trace_truncates_on_escape():
    g = make_grid(1, 50.0, 512)
    pair = WindowPair(gaussian_window(g, 2.0), gaussian_window(g, 2.0))
    lat = make_lattice(g, 8.0, 4.0, pair)
    f = band_limited_data(g, 1.0, 4.0)
    rep = wave_operator_trace(f, make_coulomb_like(0.1, 0.5), pair, [1, 2, 64], lat)
    assert rep.truncated and not rep.convergent and "escaped" in rep.diagnosis


# ---------------------------------------------------------------- decay checks


@pytest.fixture(scope="module")
def decay_grid():
    g = make_grid(1, 200.0, 1024)
    return g, band_limited_window(g, 1.0)


def test_outgoing_t0_and_monotone_region(decay_grid):
    g, phi0 = decay_grid
    assert outgoing_sup(phi0.profile, 0.0) == pytest.approx(np.max(np.abs(phi0.profile.values)))
    u = free_propagate(phi0.profile, 8.0)
    sups = [outgoing_sup(u, a * 8.0) for a in (1.5, 2.0, 3.0)]
    assert all(b < a for a, b in zip(sups, sups[1:]))


def test_outgoing_check(decay_grid):
    g, phi0 = decay_grid
    rep = outgoing_decay_check(phi0, 1.0, 1.5, [4, 8, 16, 32])
    assert rep.passed and rep.exponent <= -4
    with pytest.raises(ValueError):
        outgoing_decay_check(phi0, 1.0, 0.9, [4, 8])
    with pytest.raises(ValueError):
        outgoing_decay_check(phi0, 0.5, 1.5, [4, 8])
    cut = outgoing_decay_check(phi0, 1.0, 1.5, [4, 8, 16, 32, 256])
    assert cut.truncated and len(cut.values) == 4


@pytest.fixture(scope="module")
def remainder_setup():
    g = make_grid(1, 256.0, 2048)
    return g, band_limited_data(g, 1.0, 4.0), gaussian_window(g, 4.0)


def test_remainder_zero_and_linear(remainder_setup):
    g, f, w = remainder_setup
    args = (16.0, [[0.0], [0.0]], [[2.5], [-2.5]], [2, 4, 8, 16])
    zero = PotentialModel(make_coulomb_like(0.1, 0.5), make_short_range(0.0, 0.5))
    assert all(v == 0 for v in short_range_remainder_check(f, zero, w, *args).values)
    a = np.array(short_range_remainder_check(f, MIXED, w, *args, fit_range=(2, 16)).values)
    b = np.array(short_range_remainder_check(f * 2.0, MIXED, w, *args, fit_range=(2, 16)).values)
    assert np.allclose(b, 2 * a, rtol=1e-12)
    with pytest.raises(ValueError):
        short_range_remainder_check(f, make_coulomb_like(0.1, 0.5), w, *args)


def test_remainder_decays(remainder_setup):
    g, f, w = remainder_setup
    rep = short_range_remainder_check(f, MIXED, w, 16.0, [[0.0], [0.0]], [[2.5], [-2.5]], [2, 4, 8, 16],
                                      fit_range=(2, 16))
    assert rep.passed and rep.exponent <= -1.3
    assert np.isfinite(rep.sup_weighted)
