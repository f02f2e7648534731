import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import FOOT_16
from wpscatter.errors import PicardDivergenceError, RefinementError
from wpscatter.potentials import japanese, make_coulomb_like, make_zero_potential
from wpscatter.trajectories import (PhaseSpaceRegion, UnboundedThresholdError, asymptotic_diagnostics,
                                    check_conjugation, foot_jacobian, free_ratio_inf, loglog_fit, solve_bvp_picard,
                                    solve_ivp, threshold_T, write_trajectory_csv)

V01 = make_coulomb_like(0.1, 0.5)
ZERO = make_zero_potential()


@given(t=st.floats(0.5, 50), x=st.floats(-4, 4), xi=st.floats(-4, 4))
def test_free_trajectories_exact(t, x, xi):
    b = solve_ivp(t, x, xi, ZERO, 128)
    assert np.max(np.abs(b.X[:, 0, 0] - (x + (b.s - t) * xi))) <= 1e-12 * (1 + abs(x) + t * abs(xi))
    assert np.all(b.K == xi)
    assert b.X[-1, 0, 0] == x and b.K[-1, 0, 0] == xi


def test_terminal_conditions_exact():
    X = np.array([[0.3], [-2.0]])
    K = np.array([[1.2], [-3.1]])
    b = solve_ivp(20.0, X, K, V01, 256)
    assert np.array_equal(b.X[-1], X) and np.array_equal(b.K[-1], K)
    z = solve_ivp(0.0, X, K, V01, 64)
    assert np.array_equal(z.X[0], X)


def test_foot_oracle():
    b = solve_ivp(16.0, 0.0, 1.0, V01, 4096)
    assert b.foot[0, 0] == pytest.approx(FOOT_16[0], abs=1e-10)
    assert b.foot_xi[0, 0] == pytest.approx(FOOT_16[1], abs=1e-10)


def test_energy_drift():
    region = PhaseSpaceRegion(1.0, 4.0)
    X, K = region.anchors(1)
    b = solve_ivp(64.0, X, K, V01, 4096)
    E = b.energy(V01)
    assert np.max(np.abs(E - E[-1]) / np.abs(E[-1])) < 1e-8


def test_rk4_order():
    V = make_coulomb_like(1.0, 0.5)
    ref = solve_ivp(32.0, 0.5, 0.8, V, 8192, tol=None).foot
    errs = [np.abs(solve_ivp(32.0, 0.5, 0.8, V, M, tol=None).foot - ref).max() for M in (128, 256, 512)]
    slope, _ = loglog_fit([128, 256, 512], errs)
    assert -4.5 < slope < -3.5


def test_refinement_failure():
    with pytest.raises(RefinementError) as e:
        solve_ivp(64.0, 0.0, 0.2, make_coulomb_like(20.0, 1.0), 64, tol=1e-12)
    assert e.value.error > 0
    with pytest.raises(ValueError):
        solve_ivp(1.0, 0.0, 1.0, V01, 32)


def test_picard_free():
    sol = solve_bvp_picard(10.0, 1.0, 2.0, ZERO)
    assert sol.iterations == 0
    assert np.allclose(sol.Y[:, 0, 0], 1.0 + 2.0 * sol.s)
    assert np.all(sol.E == 2.0)


def test_picard_anchor_11():
    sol = solve_bvp_picard(32.0, 1.0, 1.0, V01, M=4096, N_max=30, tol=1e-10)
    assert sol.residual < 1e-10
    assert sol.iterations <= 30
    assert sol.iterations == 8
    assert sol.Y[0, 0, 0] == 1.0
    assert abs(sol.E[-1, 0, 0] - 1.0) <= 1e-10


def test_picard_lower_bound_on_region():
    region = PhaseSpaceRegion(1.0, 4.0)
    X, K = region.anchors(1)
    sol = solve_bvp_picard(32.0, X, K, V01, M=4096, N_max=30, tol=1e-10)
    assert sol.min_ratio > 0
    ratio = japanese(sol.Y) / japanese(sol.s[:, None])[:, None]
    assert np.min(ratio) >= sol.min_ratio


def test_picard_divergence_error():
    with pytest.raises(PicardDivergenceError) as e:
        solve_bvp_picard(32.0, 1.0, 1.0, V01, M=1024, N_max=2, tol=1e-14)
    assert len(e.value.history) == 2


def test_conjugation_free_rounding():
    r = check_conjugation(16.0, np.array([[0.5]]), np.array([[1.5]]), ZERO, M=512)
    assert r.max() < 1e-12


def test_conjugation_anchor_01():
    assert check_conjugation(32.0, 0.0, 1.0, V01, M=4096).max() < 1e-7


def test_conjugation_random_anchors():
    region = PhaseSpaceRegion(1.0, 4.0)
    x, k = region.random_anchors(1, 100, seed=7)
    assert check_conjugation(32.0, x, k, V01, M=4096).max() <= 1e-7


def test_conjugation_order():
    r = [check_conjugation(32.0, 0.0, 1.0, V01, M=M).max() for M in (512, 1024, 2048)]
    slope, _ = loglog_fit([512, 1024, 2048], r)
    assert slope < -3.3


def test_asymptotics_free():
    region = PhaseSpaceRegion(1.0, 4.0)
    rep = asymptotic_diagnostics(region, ZERO, [64.0, 256.0])
    assert rep.eta_sup == 0.0
    assert rep.c == pytest.approx(free_ratio_inf(region), rel=1e-2)


def test_asymptotics_coulomb_exponent():
    rep = asymptotic_diagnostics(PhaseSpaceRegion(1.0, 4.0), V01, [64.0, 1024.0, 16384.0])
    assert abs(rep.eta_exponent + 0.5) <= 0.1
    assert rep.c > 0


def test_c_monotone_in_a():
    cs = [asymptotic_diagnostics(PhaseSpaceRegion(a, 4.0), V01, [256.0]).c for a in (2.0, 1.5, 1.0, 0.75)]
    assert all(b <= a + 1e-12 for a, b in zip(cs, cs[1:]))


def test_threshold():
    region = PhaseSpaceRegion(1.0, 4.0)
    assert threshold_T(region, ZERO) == 1.0
    T = threshold_T(region, make_coulomb_like(1.0, 0.5))
    assert np.isfinite(T) and T == 8.0
    Ts = [threshold_T((a, 4.0), make_coulomb_like(1.0, 0.5)) for a in (0.5, 1.0, 2.0, 3.0)]
    assert all(b <= a for a, b in zip(Ts, Ts[1:]))
    with pytest.raises(UnboundedThresholdError):
        threshold_T((0.0, 4.0), V01)


def test_jacobian_continuity():
    x = np.array([0.5, 0.501, 0.502])
    J = foot_jacobian(16.0, x[:, None], np.full((3, 1), 1.2), V01, M=1024)
    for a, b in zip(J, J[1:]):
        assert np.linalg.norm(b - a) / np.linalg.norm(a) < 0.1


def test_region_validation_and_anchors():
    with pytest.raises(ValueError):
        PhaseSpaceRegion(2.0, 1.0)
    region = PhaseSpaceRegion(1.0, 4.0)
    for n in (1, 2):
        X, K = region.anchors(n)
        s = np.linalg.norm(K, axis=1)
        assert np.all((s >= 1.0 - 1e-12) & (s <= 4.0 + 1e-12))
        assert np.all(np.linalg.norm(X, axis=1) <= 4.0 + 1e-12)
        x, k = region.random_anchors(n, 50, seed=1)
        assert np.all((np.linalg.norm(k, axis=1) > 1.0) & (np.linalg.norm(k, axis=1) < 4.0))


def test_two_dimensional_conjugation():
    # outgoing slow anchors send the foot path through the core, where the map stops contracting
    region = PhaseSpaceRegion(1.0, 4.0)
    x, k = region.random_anchors(2, 30, seed=0)
    converged = 0
    for j in range(len(x)):
        try:
            r = check_conjugation(32.0, x[j:j + 1], k[j:j + 1], V01, M=4096)
        except PicardDivergenceError:
            assert x[j] @ k[j] > 0
            continue
        assert r.max() < 1e-7
        converged += 1
    assert converged >= 25


def test_trajectory_csv(tmp_path):
    b = solve_ivp(4.0, 0.0, 1.0, V01, 64)
    m = solve_bvp_picard(4.0, 0.0, 1.0, V01, M=64)
    write_trajectory_csv(tmp_path / "t.csv", b, 0, m)
    rows = (tmp_path / "t.csv").read_text().splitlines()
    assert rows[0] == "s,x1,xi1,y1,eta1" and len(rows) == 66
