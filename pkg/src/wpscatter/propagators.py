"""Free flow, split-step full flow, and the trajectory-transport propagator.

``modified_propagate`` realises

    U_M(t, 0) f = W^{-1}_{psi(t), phi(t)} [ exp(-i Theta(t, x, xi)) W_{phi0} f(x(0; t, x, xi), xi) ]

where ``(x(s; t), xi(s; t))`` solves the Newton system backward from the
lattice node ``(x, xi)`` at ``s = t`` and ``Theta = int_0^t p ds`` with
``p = |xi|^2 / 2 + V_L - x . grad V_L``.  Only nodes whose free feet
``x - t xi`` land near the support of ``W_{phi0} f`` are transported; a
coverage check on the boundary of that set guards the truncation.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import _parallel
from .errors import AliasingError, CoverageError, QuadratureError, RefinementError
from .foundation import WaveFunction, inner, norm, spectral_edge_mass
from .potentials import as_model, long_part
from .trajectories import TrajectoryBundle, feet_and_phase, simpson_weights, solve_ivp
from .wpt import PhaseField, PhaseLattice, Window, WindowPair, forward_wpt, forward_wpt_at, inverse_wpt

CACHE_ENV = "WPSCATTER_CACHE_DIR"


# --------------------------------------------------------------------------- free and full flows


def _kinetic(grid, dt):
    return np.exp(-0.5j * dt * grid.k_squared)


def check_aliasing(f: WaveFunction, tol: float = 1e-12, fraction: float = 0.9) -> float:
    """Relative spectral mass beyond ``fraction * k_max``; raises above ``tol``."""
    m = spectral_edge_mass(f, fraction)
    if m > tol:
        raise AliasingError(f"{m:.3e} of the spectral mass lies near the band edge")
    return m


def free_propagate(f: WaveFunction, t: float, check: bool = True) -> WaveFunction:
    """``exp(-i t H0) f`` with ``H0 = -Delta / 2`` by Fourier multiplication."""
    if check:
        check_aliasing(f)
    if t == 0:
        return f
    v = np.fft.ifftn(_kinetic(f.grid, t) * np.fft.fftn(f.values))
    return WaveFunction(f.grid, v, f.t + t)


def _strang(values, grid, V, t0, t, steps):
    dt = t / steps
    K = _kinetic(grid, dt)
    u = values
    if V.autonomous:
        P = np.exp(-0.5j * dt * V.on_grid(t0, grid))
        P2 = P * P
        u = P * u
        for k in range(steps):
            u = np.fft.ifftn(K * np.fft.fftn(u))
            u = (P2 if k < steps - 1 else P) * u
        return u
    for k in range(steps):
        P = np.exp(-0.5j * dt * V.on_grid(t0 + (k + 0.5) * dt, grid))
        u = P * u
        u = np.fft.ifftn(K * np.fft.fftn(u))
        u = P * u
    return u


def default_steps(t: float, V, grid, dt: float = 0.02) -> int:
    """Steps with ``|dt| <= dt`` and ``|dt| max|V| <= 0.1``."""
    vmax = float(np.max(np.abs(V.on_grid(0.0, grid))))
    n1 = int(np.ceil(abs(t) / dt))
    n2 = int(np.ceil(abs(t) * vmax / 0.1)) if vmax > 0 else 0
    return max(1, n1, n2)


def full_propagate(f: WaveFunction, t: float, V, steps: Optional[int] = None, dt: float = 0.02,
                   tol: Optional[float] = None, check: bool = True) -> WaveFunction:
    """Strang split-step realisation of ``U(f.t + t, f.t) f`` for ``H0 + V(t)``.

    Each step applies the half potential phase at the step midpoint time, the
    full kinetic step and the half potential phase again.  A negative ``t``
    runs the same scheme backward; that is the exact adjoint of the forward
    run over the same interval.  With ``tol`` set the run is repeated with
    twice the steps and ``(4/3) ||u_n - u_2n|| <= tol ||f||`` is required.
    """
    V = as_model(V)
    if check:
        check_aliasing(f)
    if t == 0:
        return f
    if steps is None:
        steps = default_steps(t, V, f.grid, dt)
    if V.zero:
        return WaveFunction(f.grid, np.fft.ifftn(_kinetic(f.grid, t) * np.fft.fftn(f.values)), f.t + t)
    u = _strang(f.values, f.grid, V, f.t, t, steps)
    if tol is not None:
        u2 = _strang(f.values, f.grid, V, f.t, t, 2 * steps)
        err = 4.0 / 3.0 * np.sqrt(np.sum(np.abs(u - u2) ** 2) * f.grid.weight)
        if err > tol * norm(f):
            raise RefinementError(f"step-doubling error {err:.3e} exceeds {tol * norm(f):.3e}", err)
    return WaveFunction(f.grid, u, f.t + t)


# --------------------------------------------------------------------------- phase integral


@dataclass
class PhaseIntegral:
    """``Theta = int p ds`` per anchor with a grid-halving error estimate."""

    value: np.ndarray
    error: np.ndarray


def phase_integral(traj: TrajectoryBundle, V=None, interval=None, tol: Optional[float] = 1e-8) -> PhaseIntegral:
    """Composite Simpson quadrature of the phase density along trajectories.

    ``interval = (i0, i1)`` restricts to grid indices ``i0..i1``.  The error is
    ``|S_h - S_2h| / 15``; with ``tol`` set it must stay below
    ``tol * (1 + |Theta|)``.
    """
    p = traj.p if V is None else long_part(V).phase_density(traj.s[:, None], traj.X, traj.K)
    i0, i1 = (0, traj.M) if interval is None else interval
    m = i1 - i0
    if m % 2:
        raise QuadratureError(f"Simpson needs an even number of intervals, got {m}")
    h = traj.s[1] - traj.s[0]
    seg = p[i0 : i1 + 1]
    val = simpson_weights(m, h) @ seg
    if m % 4 == 0 and m >= 4:
        coarse = simpson_weights(m // 2, 2 * h) @ seg[::2]
        err = np.abs(val - coarse) / 15.0
    else:
        err = np.full(val.shape, np.nan)
    if tol is not None and np.any(err > tol * (1.0 + np.abs(val))):
        raise QuadratureError(f"phase quadrature error {np.nanmax(err):.3e} above tolerance")
    return PhaseIntegral(np.asarray(val), np.asarray(err))


# --------------------------------------------------------------------------- windows


def evolve_window(w: Window, t: float) -> Window:
    """Freely evolved window; closed form when available, else spectral."""
    if t == 0:
        return w
    if w.evolver is not None:
        return w.evolver(t)
    return Window(free_propagate(w.profile, t, check=False), w.band_limit, None, None, f"{w.label}@{t}")


@dataclass
class EvolvedWindowPair:
    phi: Window
    psi: Window
    overlap: complex
    overlap0: complex

    @property
    def overlap_drift(self) -> float:
        return abs(self.overlap - self.overlap0)


def evolve_pair(pair: WindowPair, t: float) -> EvolvedWindowPair:
    phi = evolve_window(pair.phi, t)
    psi = evolve_window(pair.psi, t)
    ov = inner(psi.profile, phi.profile)
    return EvolvedWindowPair(phi, psi, ov, pair.overlap)


# --------------------------------------------------------------------------- foot cache


def config_hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=repr).encode()).hexdigest()[:20]


class FootCache:
    """Disk cache of trajectory feet and phases keyed by ``(t, lattice, V_L, M)``.

    File layout: the line ``WPSFEET1``, one JSON header line carrying the
    config hash, dimension and record count, then little-endian float64
    records ``(x[n], xi[n], x_foot[n], theta)``.
    """

    MAGIC = b"WPSFEET1\n"

    def __init__(self, root=None):
        root = root or os.environ.get(CACHE_ENV) or Path.home() / ".cache" / "wpscatter"
        self.root = Path(root)

    @staticmethod
    def key(t, lattice: PhaseLattice, V, M) -> str:
        return config_hash({"t": float(t), "lattice": lattice.describe(), "V": long_part(V).spec,
                            "M": int(M), "scheme": "rk4-simpson"})

    def path(self, key) -> Path:
        return self.root / f"feet-{key}.bin"

    def load(self, key):
        p = self.path(key)
        if not p.exists():
            return None
        with open(p, "rb") as fh:
            if fh.readline() != self.MAGIC:
                return None
            head = json.loads(fh.readline())
            if head.get("hash") != key:
                return None
            n = head["n"]
            rec = np.frombuffer(fh.read(), dtype="<f8").reshape(-1, 3 * n + 1)
        return n, rec

    def store(self, key, n, records):
        self.root.mkdir(parents=True, exist_ok=True)
        p = self.path(key)
        tmp = p.with_suffix(".tmp")
        with open(tmp, "wb") as fh:
            fh.write(self.MAGIC)
            fh.write((json.dumps({"hash": key, "n": n, "records": len(records),
                                  "fields": ["x", "xi", "x_foot", "theta"]}) + "\n").encode())
            fh.write(np.ascontiguousarray(records, dtype="<f8").tobytes())
        os.replace(tmp, p)


# --------------------------------------------------------------------------- modified propagator


def _dilate(mask, r, axes):
    """Binary dilation by ``r`` nodes along each listed axis (no wrap)."""
    out = mask
    for ax in axes:
        c = np.cumsum(np.moveaxis(out, ax, 0).astype(np.int32), axis=0)
        c = np.concatenate([np.zeros((1,) + c.shape[1:], np.int32), c], axis=0)
        n = out.shape[ax]
        lo = np.clip(np.arange(n) - r, 0, n)
        hi = np.clip(np.arange(n) + r + 1, 0, n)
        out = np.moveaxis((c[hi] - c[lo]) > 0, 0, ax)
    return out


def _active_mask(support, lattice: PhaseLattice, t: float, pad_nodes: int):
    """Nodes whose free foot ``x - t xi`` lands within ``pad_nodes`` of the support."""
    n = lattice.n
    D = _dilate(support, pad_nodes + 1, range(n))
    nx = lattice.nx
    idx = []
    valid = np.ones(lattice.shape, bool)
    for j in range(n):
        fi = np.rint((lattice.x_nodes[:, None] - t * lattice.xi_nodes[None, :] + lattice.grid.L)
                     / lattice.dx_lat).astype(int)
        shape = [1] * (2 * n)
        shape[j] = nx
        shape[n + j] = lattice.nxi
        fi = fi.reshape(shape)
        valid &= (fi >= 0) & (fi < nx)
        idx.append(np.clip(fi, 0, nx - 1))
    ks = [np.arange(lattice.nxi).reshape([lattice.nxi if i == n + j else 1 for i in range(2 * n)])
          for j in range(n)]
    return valid & D[tuple(idx) + tuple(ks)]


def _escaped_mass(A0, support, lattice, t):
    """Relative ``|A0|^2`` mass whose free image leaves the lattice x-range."""
    n = lattice.n
    gone = np.zeros(lattice.shape, bool)
    lo, hi = lattice.x_nodes[0], lattice.x_nodes[-1]
    for j in range(n):
        img = lattice.x_nodes[:, None] + t * lattice.xi_nodes[None, :]
        shape = [1] * (2 * n)
        shape[j] = lattice.nx
        shape[n + j] = lattice.nxi
        gone |= ((img < lo) | (img > hi)).reshape(shape)
    w = np.abs(A0) ** 2
    tot = w.sum()
    return 0.0 if tot == 0 else float(w[support & gone].sum() / tot)


def _boundary(mask, n):
    inner_ = mask.copy()
    for ax in range(n):
        for sh in (1, -1):
            nb = np.roll(mask, sh, axis=ax)
            edge = [slice(None)] * mask.ndim
            edge[ax] = 0 if sh == 1 else -1
            nb[tuple(edge)] = False
            inner_ &= nb
    return mask & ~inner_


@dataclass
class ModifiedInfo:
    t: float
    M: int
    active: int
    pad: float
    boundary_ratio: float
    theta_error: float
    escaped: float
    cache_hits: int = 0
    expansions: int = 0


def default_trajectory_steps(t: float) -> int:
    return max(64, 4 * int(np.ceil(8.0 * t)))


def modified_propagate(
    f: WaveFunction,
    t: float,
    pair: WindowPair,
    V,
    lattice: PhaseLattice,
    M: Optional[int] = None,
    threshold: float = 1e-11,
    pad: Optional[float] = None,
    coverage_tol: float = 1e-8,
    escape_tol: float = 1e-10,
    max_expansions: int = 5,
    cache: Optional[FootCache] = None,
    threads: Optional[int] = None,
    chunk: int = 16384,
    return_info: bool = False,
):
    """Trajectory-transport propagator ``U_M(t, 0) f``.

    Parameters
    ----------
    threshold : float
        Support of ``W_{phi0} f`` is where ``|W| > threshold * max|W|``.
    pad : float
        Initial x-margin around the transported support; doubled until
        ``|G|`` on the boundary of the transported set is below
        ``coverage_tol * max|G|``.
    cache : FootCache, optional
        Persists feet and phases; results do not depend on it.

    Raises
    ------
    CoverageError
        When transported content reaches the lattice edge or the coverage
        check keeps failing; ``escaped`` carries the measured fraction.
    """
    L = long_part(V)
    g = lattice.grid
    n = lattice.n
    phi0, psi0 = pair.phi, pair.psi
    if t == 0:
        out = inverse_wpt(forward_wpt(f, phi0, lattice, threads), psi0, phi0, threads, t=f.t)
        info = ModifiedInfo(0.0, 0, lattice.size, 0.0, 0.0, 0.0, 0.0)
        return (out, info) if return_info else out
    M = default_trajectory_steps(t) if M is None else int(M)
    A0 = forward_wpt(f, phi0, lattice, threads).values
    amax = np.max(np.abs(A0))
    if amax == 0:
        out = WaveFunction(g, np.zeros(g.shape), f.t + t)
        info = ModifiedInfo(t, M, 0, 0.0, 0.0, 0.0, 0.0)
        return (out, info) if return_info else out
    support = np.abs(A0) > threshold * amax
    escaped = _escaped_mass(A0, support, lattice, t)
    if escaped > escape_tol:
        raise CoverageError(f"{escaped:.3e} of the phase-space mass leaves the lattice by t={t}", escaped)

    X, K = lattice.node_arrays()
    X = X.reshape(-1, n)
    K = K.reshape(-1, n)
    size = lattice.size
    feet = np.full((size, n), np.nan)
    theta = np.full(size, np.nan)
    terr = np.zeros(size)
    key = FootCache.key(t, lattice, L, M) if cache is not None else None
    hits = 0
    if cache is not None:
        got = cache.load(key)
        if got is not None and got[0] == n:
            rec = got[1]
            ix = np.rint((rec[:, :n] + g.L) / lattice.dx_lat).astype(int)
            ik = np.rint(rec[:, n : 2 * n] / lattice.dxi_lat).astype(int) + (lattice.nxi - 1) // 2
            flat = np.ravel_multi_index(tuple(ix.T) + tuple(ik.T), lattice.shape)
            feet[flat] = rec[:, 2 * n : 3 * n]
            theta[flat] = rec[:, 3 * n]
            hits = len(flat)
    radius = phi0.radius if phi0.radius is not None else g.L
    safe = g.L - radius - 2 * g.dx

    pad = 4.0 * lattice.dx_lat + 8.0 if pad is None else float(pad)
    G = np.zeros(size, dtype=complex)
    done = np.zeros(size, bool)
    for expansion in range(max_expansions + 1):
        pad_nodes = int(np.ceil(pad / lattice.dx_lat))
        act = _active_mask(support, lattice, t, pad_nodes)
        flat = np.flatnonzero(act.ravel())
        need = flat[np.isnan(theta[flat])]
        if len(need):
            parts = _parallel.pmap(
                lambda sl: feet_and_phase(t, X[need[sl]], K[need[sl]], L, M),
                _parallel.chunks(len(need), chunk), threads)
            feet[need] = np.concatenate([p[0] for p in parts])
            theta[need] = np.concatenate([p[2] for p in parts])
            terr[need] = np.concatenate([p[3] for p in parts])
        todo = flat[~done[flat]]
        ok = np.all(np.abs(feet[todo]) <= safe, axis=1)
        pts = todo[ok]
        if len(pts):
            G[pts] = np.exp(-1j * theta[pts]) * forward_wpt_at(f, phi0, feet[pts], K[pts])
        done[todo] = True
        Gm = np.where(act.ravel(), G, 0.0).reshape(lattice.shape)
        gmax = np.max(np.abs(Gm))
        bnd = _boundary(act, n)
        bratio = float(np.max(np.abs(Gm[bnd])) / gmax) if np.any(bnd) and gmax > 0 else 0.0
        if bratio <= coverage_tol:
            break
        edge = np.zeros(lattice.shape, bool)
        for ax in range(n):
            sl = [slice(None)] * (2 * n)
            sl[ax] = [0, lattice.nx - 1]
            edge[tuple(sl)] = True
        if np.max(np.abs(Gm[edge]), initial=0.0) > coverage_tol * gmax:
            lost = float(np.sum(np.abs(Gm[edge]) ** 2) / np.sum(np.abs(Gm) ** 2))
            raise CoverageError(f"transported field reaches the lattice edge at t={t}", lost)
        pad *= 2.0
    else:
        lost = float(np.sum(np.abs(Gm[bnd]) ** 2) / np.sum(np.abs(Gm) ** 2))
        raise CoverageError(f"coverage check failed after {max_expansions} expansions "
                            f"(boundary ratio {bratio:.2e})", lost)
    if cache is not None:
        have = np.flatnonzero(~np.isnan(theta))
        if len(have) > hits:
            cache.store(key, n, np.concatenate([X[have], K[have], feet[have], theta[have, None]], axis=1))
    ev = evolve_pair(pair, t)
    out = inverse_wpt(PhaseField(lattice, Gm), ev.psi, ev.phi, threads, t=f.t + t)
    info = ModifiedInfo(t, M, int(act.sum()), pad, bratio, float(np.max(terr[flat], initial=0.0)),
                        escaped, hits, expansion)
    return (out, info) if return_info else out


# --------------------------------------------------------------------------- characteristic representation


def _cumulative_simpson(p, s, sub):
    """Integral of ``p`` from 0 to every ``sub``-th grid point; ``sub`` even."""
    h = s[1] - s[0]
    w = simpson_weights(sub, h)
    Q = (len(s) - 1) // sub
    seg = np.stack([w @ p[q * sub : (q + 1) * sub + 1] for q in range(Q)])
    return np.concatenate([np.zeros((1,) + seg.shape[1:]), np.cumsum(seg, axis=0)])


@dataclass
class RepresentationInfo:
    residual: float
    relative: float
    nodes: int
    quad: int
    steps: int


def representation_residual(
    f: WaveFunction,
    t: float,
    phi0: Window,
    V,
    lattice: PhaseLattice,
    quad: int = 64,
    steps_per_quad: int = 4,
    sub: int = 8,
    node_threshold: float = 1e-8,
    return_info: bool = False,
):
    """Lattice-max gap between the two sides of the characteristic representation.

    Left side: ``W_{phi(t)}[U(t, 0) f]`` with ``phi(t)`` the freely evolved
    window.  Right side:

        exp(-i Theta(t)) W_{phi0} f(x(0), xi(0))
          - i int_0^t exp(-i (Theta(t) - Theta(s))) R(s, x(s), xi(s)) ds,

    ``R = W_{phi(s)}[V_S u(s)] + int conj(phi(s, y - x)) T(s; x, y) u(s, y) exp(-i y xi) dy``
    with ``T`` the exact second-order Taylor remainder of ``V_L`` about ``x``.
    ``quad`` Simpson intervals sample ``s``; ``U`` uses ``steps_per_quad``
    split steps per interval; trajectories use ``sub`` RK4 steps per interval.
    Only nodes with ``|LHS| > node_threshold * max|LHS|`` whose trajectories
    keep the window inside the grid are compared.
    """
    Vm = as_model(V)
    VL = Vm.long
    g = lattice.grid
    n = lattice.n
    if phi0.evaluate is None:
        raise ValueError("the representation check needs an analytic window")
    if quad % 2 or sub % 2 or quad * sub < 64:
        raise ValueError("quad and sub must be even with quad * sub >= 64")
    s_q = np.linspace(0.0, t, quad + 1)
    us = [f]
    for q in range(quad):
        us.append(full_propagate(us[-1], t / quad, Vm, steps=steps_per_quad))
    phis = [evolve_window(phi0, s) for s in s_q]
    lhs = forward_wpt(us[-1], phis[-1], lattice).values.reshape(-1)
    X, K = lattice.node_arrays()
    X = X.reshape(-1, n)
    K = K.reshape(-1, n)
    sel = np.flatnonzero(np.abs(lhs) > node_threshold * np.max(np.abs(lhs)))
    traj = solve_ivp(t, X[sel], K[sel], VL, M=quad * sub, tol=None)
    reach = np.array([w.radius for w in phis])
    path = traj.X[::sub]
    inside = np.all(np.abs(path) <= (g.L - reach - 2 * g.dx)[:, None, None], axis=(0, 2))
    sel = sel[inside]
    Xs, Ks = traj.X[:, inside], traj.K[:, inside]
    pth = traj.p[:, inside]
    cum = _cumulative_simpson(pth, traj.s, sub)
    Theta = cum[-1]

    def taylor(z, x0):
        x0b = x0[:, None, :]
        gv = VL.grad(s_cur, x0)[:, None, :]
        return VL.value(s_cur, z) - VL.value(s_cur, x0)[:, None] - np.sum((z - x0b) * gv, axis=-1)

    rhs = np.exp(-1j * Theta) * forward_wpt_at(f, phi0, Xs[0], Ks[0])
    w = simpson_weights(quad, t / quad)
    acc = np.zeros(len(sel), dtype=complex)
    for q in range(quad + 1):
        s_cur = s_q[q]
        xq, kq = Xs[q * sub], Ks[q * sub]
        u = us[q]
        R = forward_wpt_at(u, phis[q], xq, kq, weight=taylor)
        if Vm.short is not None:
            vs = u.replace(u.values * Vm.short.value(s_cur, g.points))
            R = R + forward_wpt_at(vs, phis[q], xq, kq)
        acc += w[q] * np.exp(-1j * (Theta - cum[q])) * R
    rhs = rhs - 1j * acc
    diff = np.abs(lhs[sel] - rhs)
    res = float(np.max(diff)) if len(diff) else 0.0
    info = RepresentationInfo(res, res / float(np.max(np.abs(lhs))), len(sel), quad, quad * steps_per_quad)
    return (res, info) if return_info else res


# --------------------------------------------------------------------------- snapshots


def write_snapshot_csv(path, u: WaveFunction) -> None:
    """Columns ``x1..xn, abs2, arg`` of ``u`` on its grid."""
    n = u.grid.n
    pts = u.grid.points.reshape(-1, n)
    v = u.values.reshape(-1)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{j + 1}" for j in range(n)] + ["abs2", "arg"])
        for p, z in zip(pts, v):
            w.writerow([repr(float(c)) for c in p] + [repr(float(abs(z) ** 2)), repr(float(np.angle(z)))])
