"""Wave packet transform on an oversampled phase-space lattice.

Conventions
-----------
``W_phi f(x, xi) = int conj(phi(y - x)) f(y) exp(-i y.xi) dy`` and the left
inverse

    W^{-1}_{psi,phi} F(x) = ((2pi)^n (psi, phi))^{-1} iint psi(x - y) F(y, xi) exp(i x.xi) dy dxi

with ``(psi, phi) = int psi conj(phi)``.  This ordering of the overlap makes
``W^{-1}_{psi,phi} W_phi f = f`` exact.  With the flat lattice weight
``(dx_lat dxi_lat)^n`` the transform satisfies

    (W_phi f, W_psi g) = (2pi)^n (psi, phi) (f, g),

i.e. the ``(2pi)^n`` disappears only under the normalised phase-space measure
``dx dxi / (2pi)^n`` (``phase_inner(..., normalized=True)``).

The lattice x-nodes are grid points (stride ``x_stride``) covering the whole
torus and the xi-nodes are dual-grid frequencies (stride ``xi_stride``) with
``|xi_j| <= Xi``.  Both transforms are then sums of FFTs.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Optional

import numpy as np

from . import _parallel
from .errors import DegeneratePairError, LatticeError
from .foundation import SpatialGrid, WaveFunction, fourier, inner, norm, spectral_derivative

# |phi| < 1e-16 max beyond this many Gaussian widths
_GAUSS_RADIUS = np.sqrt(2.0 * np.log(1e16))
_GAUSS_BAND = np.sqrt(2.0 * np.log(1e12))
_OVERLAP_FLOOR = 1e-10


# --------------------------------------------------------------------------- windows


@dataclass(frozen=True, eq=False)
class Window:
    """A window profile sampled on the grid (centred at the origin).

    ``evaluate`` optionally gives exact values at arbitrary offsets (shape
    ``(..., n)``); it is what makes off-lattice evaluation cheap.  ``radius``
    bounds the spatial support used by direct quadrature.  ``evolver(t)``, when
    present, returns the freely evolved window in closed form.
    """

    profile: WaveFunction
    band_limit: float
    evaluate: Optional[Callable[[np.ndarray], np.ndarray]] = None
    radius: Optional[float] = None
    label: str = ""
    evolver: Optional[Callable[[float], "Window"]] = None

    def __post_init__(self):
        if norm(self.profile) <= 0:
            raise ValueError("window profile must be nonzero")
        tail = spectral_mass_outside(self.profile, self.band_limit)
        if tail >= 1e-12:
            raise ValueError(
                f"band_limit {self.band_limit} inconsistent: {tail:.2e} of the spectral mass lies outside"
            )

    @property
    def grid(self) -> SpatialGrid:
        return self.profile.grid

    def norm(self) -> float:
        return norm(self.profile)

    def derivative(self, axis: int = 0) -> "Window":
        """Spatial derivative window (sampled, spectral differentiation)."""
        return Window(spectral_derivative(self.profile, axis), self.band_limit, None, self.radius, self.label + "'")


def spectral_mass_outside(f: WaveFunction, radius: float) -> float:
    g = f.grid
    p = np.abs(np.fft.fftn(f.values)) ** 2
    total = p.sum()
    if total == 0:
        return 0.0
    return float(p[np.sqrt(g.k_squared) > radius].sum() / total)


def evolved_gaussian(z, sigma: float, t: float = 0.0, normalize: bool = True):
    """Free evolution ``exp(-itH0)`` of ``exp(-|z|^2 / (2 sigma^2))`` in closed form."""
    z = np.asarray(z, dtype=float)
    n = z.shape[-1]
    s2 = sigma**2 + 1j * t
    amp = (sigma**2 / s2) ** (n / 2.0)
    if normalize:
        amp = amp * (np.pi * sigma**2) ** (-n / 4.0)
    return amp * np.exp(-np.sum(z**2, axis=-1) / (2.0 * s2))


def gaussian_window(grid: SpatialGrid, sigma: float = 1.0, t: float = 0.0, normalize: bool = True) -> Window:
    """Isotropic Gaussian window of width ``sigma``, freely evolved to time ``t``."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")

    def evaluate(z, sigma=sigma, t=t, normalize=normalize):
        return evolved_gaussian(z, sigma, t, normalize)

    sigma_t = sigma * np.sqrt(1.0 + (t / sigma**2) ** 2)
    radius = _GAUSS_RADIUS * sigma_t
    if radius >= grid.L:
        raise LatticeError(f"Gaussian window of radius {radius:.3g} does not fit in the grid (L={grid.L})")
    prof = WaveFunction(grid, evaluate(grid.points), t)

    def evolver(dt, sigma=sigma, t=t, normalize=normalize):
        return gaussian_window(grid, sigma, t + dt, normalize)

    return Window(prof, _GAUSS_BAND / sigma, evaluate, radius, f"gauss(sigma={sigma},t={t})", evolver)


def band_limited_window(grid: SpatialGrid, band: float, sharpness: float = 8.0) -> Window:
    """Gaussian truncated in frequency to ``|xi| < band``.

    The Gaussian has Fourier width ``band / sharpness`` so the discarded tail is
    ``exp(-sharpness^2 / 2)`` relative to the peak.  The profile is built on the
    dual grid and is exactly periodic on the torus.
    """
    if not 0 < band < grid.k_max:
        raise ValueError(f"band must lie in (0, {grid.k_max}), got {band}")
    sk = band / sharpness
    k2 = grid.k_squared
    hat = np.where(np.sqrt(k2) < band, np.exp(-k2 / (2.0 * sk**2)), 0.0)
    phase = np.exp(-1j * grid.L * sum(grid.k_coords))
    vals = np.fft.ifftn(hat * phase)
    vals = vals / np.sqrt(np.sum(np.abs(vals) ** 2) * grid.weight)
    return Window(WaveFunction(grid, vals), float(band), None, None, f"bandlimited(band={band})")


def spatial_spread(w: Window) -> float:
    """sqrt(2 * per-axis variance of |w|^2); equals sigma for a Gaussian."""
    p = np.abs(w.profile.values) ** 2
    p = p / p.sum()
    var = [np.sum(p * c**2) - np.sum(p * c) ** 2 for c in w.grid.coords]
    return float(np.sqrt(2.0 * np.mean(var)))


def spectral_spread(w: Window) -> float:
    p = np.abs(np.fft.fftn(w.profile.values)) ** 2
    p = p / p.sum()
    var = [np.sum(p * k**2) - np.sum(p * k) ** 2 for k in w.grid.k_coords]
    return float(np.sqrt(2.0 * np.mean(var)))


@dataclass(frozen=True, eq=False)
class WindowPair:
    """Analysis window ``phi`` and synthesis window ``psi``; ``overlap = (psi, phi)``."""

    phi: Window
    psi: Window

    def __post_init__(self):
        if self.phi.grid != self.psi.grid:
            raise ValueError("windows live on different grids")
        ov = inner(self.psi.profile, self.phi.profile)
        if abs(ov) <= _OVERLAP_FLOOR * self.phi.norm() * self.psi.norm():
            raise DegeneratePairError(f"window overlap {ov:.3e} is numerically zero")
        object.__setattr__(self, "_overlap", ov)

    @property
    def overlap(self) -> complex:
        return self._overlap


# --------------------------------------------------------------------------- lattice


def _largest_pow2(ratio: float, cap: int) -> int:
    m = 1
    while 2 * m <= ratio and 2 * m <= cap:
        m *= 2
    return m


@dataclass(frozen=True)
class PhaseLattice:
    """Uniform (x, xi) lattice tied to a grid.

    ``x_stride`` and ``xi_stride`` are powers of two (so they divide ``N``);
    ``rho`` records the design oversampling.
    """

    grid: SpatialGrid
    x_stride: int
    xi_stride: int
    Xi: float
    rho: float = 4.0

    def __post_init__(self):
        N = self.grid.N
        for name in ("x_stride", "xi_stride"):
            m = getattr(self, name)
            if m < 1 or (m & (m - 1)) or N % m:
                raise LatticeError(f"{name} must be a power of two dividing N, got {m}")
        if not 0 < self.Xi < self.grid.k_max:
            raise LatticeError(f"Xi must lie in (0, {self.grid.k_max:.4g}), got {self.Xi}")
        if self.rho < 4:
            raise LatticeError(f"oversampling rho must be >= 4, got {self.rho}")
        if self.dx_lat * self.dxi_lat > 2.0 * np.pi / self.rho * (1 + 1e-12):
            raise LatticeError(
                f"lattice cell {self.dx_lat * self.dxi_lat:.4g} exceeds 2pi/rho = {2 * np.pi / self.rho:.4g}"
            )

    @property
    def n(self) -> int:
        return self.grid.n

    @property
    def dx_lat(self) -> float:
        return self.x_stride * self.grid.dx

    @property
    def dxi_lat(self) -> float:
        return self.xi_stride * self.grid.dk

    @property
    def weight(self) -> float:
        return (self.dx_lat * self.dxi_lat) ** self.n

    @cached_property
    def x_index(self) -> np.ndarray:
        return np.arange(0, self.grid.N, self.x_stride)

    @cached_property
    def x_nodes(self) -> np.ndarray:
        return self.grid.coord_of(self.x_index)

    @cached_property
    def xi_int(self) -> np.ndarray:
        """Integer frequency labels ``m`` with ``xi = m dk``."""
        mmax = int(np.floor(self.Xi / self.grid.dk + 1e-9))
        mmax = min(mmax, self.grid.N // 2 - 1)
        mmax -= mmax % self.xi_stride
        return np.arange(-mmax, mmax + 1, self.xi_stride)

    @cached_property
    def xi_index(self) -> np.ndarray:
        """FFT indices of the xi-nodes."""
        return np.mod(self.xi_int, self.grid.N)

    @cached_property
    def xi_nodes(self) -> np.ndarray:
        return self.xi_int * self.grid.dk

    @property
    def nx(self) -> int:
        return len(self.x_index)

    @property
    def nxi(self) -> int:
        return len(self.xi_index)

    @property
    def shape(self):
        return (self.nx,) * self.n + (self.nxi,) * self.n

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    def node_arrays(self):
        """Return ``(X, Xi)`` arrays of shape ``lattice.shape + (n,)``."""
        axes = [self.x_nodes] * self.n + [self.xi_nodes] * self.n
        mesh = np.meshgrid(*axes, indexing="ij")
        X = np.stack(mesh[: self.n], axis=-1)
        K = np.stack(mesh[self.n :], axis=-1)
        return X, K

    def describe(self) -> dict:
        return {
            "n": self.n,
            "L": self.grid.L,
            "N": self.grid.N,
            "x_stride": self.x_stride,
            "xi_stride": self.xi_stride,
            "Xi": self.Xi,
            "rho": self.rho,
        }


def make_lattice(
    grid: SpatialGrid,
    Xi: float,
    rho: float = 4.0,
    pair: Optional[WindowPair] = None,
    x_spacing: Optional[float] = None,
    xi_spacing: Optional[float] = None,
) -> PhaseLattice:
    """Choose lattice strides for a window pair.

    Each axis is oversampled by ``rho`` relative to the critical Gabor
    spacing of the pair: ``dx_lat <= sqrt(2pi) / (rho s_k)`` and
    ``dxi_lat <= sqrt(2pi) / (rho s_x)``, where ``s_x`` and ``s_k`` are the
    RMS spatial and spectral spreads of the two windows.  Explicit spacings
    override the pair-based targets.
    """
    if rho < 4:
        raise LatticeError(f"oversampling rho must be >= 4, got {rho}")
    if pair is not None:
        s_x = np.sqrt(0.5 * (spatial_spread(pair.phi) ** 2 + spatial_spread(pair.psi) ** 2))
        s_k = np.sqrt(0.5 * (spectral_spread(pair.phi) ** 2 + spectral_spread(pair.psi) ** 2))
    else:
        s_x = s_k = 1.0
    tx = x_spacing if x_spacing is not None else np.sqrt(2 * np.pi) / (rho * s_k)
    tk = xi_spacing if xi_spacing is not None else np.sqrt(2 * np.pi) / (rho * s_x)
    mx = _largest_pow2(tx / grid.dx, grid.N // 4)
    mk = _largest_pow2(tk / grid.dk, grid.N // 4)
    return PhaseLattice(grid, mx, mk, float(Xi), float(rho))


@dataclass(frozen=True, eq=False)
class PhaseField:
    """Complex samples of ``F(x, xi)`` on a lattice."""

    lattice: PhaseLattice
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=complex)
        if v.shape != self.lattice.shape:
            raise LatticeError(f"field shape {v.shape} does not match lattice {self.lattice.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("phase field has non-finite values")
        object.__setattr__(self, "values", v)

    def norm(self, normalized: bool = False) -> float:
        return float(np.sqrt(phase_inner(self, self, normalized).real))

    def truncated(self, rel: float = 1e-12) -> "PhaseField":
        """Copy with entries below ``rel * max|F|`` set to zero."""
        m = self.max_abs()
        return PhaseField(self.lattice, np.where(np.abs(self.values) > rel * m, self.values, 0.0))

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values))) if self.values.size else 0.0


def phase_inner(F: PhaseField, G: PhaseField, normalized: bool = False) -> complex:
    """Lattice quadrature of ``iint F conj(G) dx dxi`` (over ``(2pi)^n`` if normalized)."""
    if F.lattice != G.lattice:
        raise LatticeError("fields live on different lattices")
    w = F.lattice.weight
    if normalized:
        w = w / (2.0 * np.pi) ** F.lattice.n
    return complex(np.vdot(G.values, F.values) * w)


# --------------------------------------------------------------------------- kernels


def _node_list(lattice: PhaseLattice) -> np.ndarray:
    """All x-node grid indices, shape ``(nx^n, n)``."""
    idx = np.meshgrid(*([lattice.x_index] * lattice.n), indexing="ij")
    return np.stack([i.ravel() for i in idx], axis=-1)


def _rolled(profile: np.ndarray, nodes: np.ndarray, N: int) -> np.ndarray:
    """Window values ``w(x_j - y_l)`` for each node ``l``: shape ``(c,) + grid``."""
    j = np.arange(N)
    half = N // 2
    if nodes.shape[1] == 1:
        I = (j[None, :] - nodes[:, 0:1] + half) % N
        return profile[I]
    I1 = (j[None, :] - nodes[:, 0:1] + half) % N
    I2 = (j[None, :] - nodes[:, 1:2] + half) % N
    return profile[I1[:, :, None], I2[:, None, :]]


def _check_compatible(f: WaveFunction, w: Window, lattice: PhaseLattice):
    if f.grid != lattice.grid or w.grid != lattice.grid:
        raise LatticeError("function, window and lattice must share one grid")


def forward_wpt(
    f: WaveFunction,
    phi: Window,
    lattice: PhaseLattice,
    threads: Optional[int] = None,
    chunk: int = 64,
) -> PhaseField:
    """Wave packet transform on every lattice node (one FFT per x-node)."""
    _check_compatible(f, phi, lattice)
    g = lattice.grid
    n = g.n
    nodes = _node_list(lattice)
    prof = np.conj(phi.profile.values)
    kx = lattice.xi_index
    xi = lattice.xi_nodes
    if n == 1:
        phase = g.weight * np.exp(1j * g.L * xi)
    else:
        phase = g.weight * np.exp(1j * g.L * (xi[:, None] + xi[None, :]))
    axes = tuple(range(1, n + 1))
    fv = f.values

    def work(sl):
        w = _rolled(prof, nodes[sl], g.N) * fv
        sp = np.fft.fftn(w, axes=axes)
        if n == 1:
            return sp[:, kx] * phase
        return sp[:, kx[:, None], kx[None, :]] * phase

    parts = _parallel.pmap(work, _parallel.chunks(len(nodes), chunk), threads)
    out = np.concatenate(parts, axis=0).reshape(lattice.shape)
    return PhaseField(lattice, out)


def _stencil(grid: SpatialGrid, radius: float):
    r = int(np.ceil(radius / grid.dx)) + 1
    return np.arange(-r, r + 2)


def forward_wpt_at(
    f: WaveFunction,
    phi: Window,
    xs,
    xis,
    chunk_elems: int = 2_000_000,
    weight: Optional[Callable] = None,
) -> np.ndarray:
    """Wave packet transform at arbitrary points by direct quadrature.

    ``xs`` and ``xis`` have shape ``(P, n)`` (or ``(P,)`` for ``n = 1``).
    Windows with a closed form are evaluated exactly at the shifted nodes;
    sampled windows are shifted spectrally, one FFT per point.

    ``weight(z, x0)``, if given, multiplies the integrand by a factor that may
    depend on the evaluation point: ``z`` has shape ``(c, S, n)`` (stencil
    nodes) and ``x0`` shape ``(c, n)``; it must return shape ``(c, S)``.
    """
    g = f.grid
    n = g.n
    xs = np.asarray(xs, dtype=float).reshape(-1, n)
    xis = np.asarray(xis, dtype=float).reshape(-1, n)
    if xs.shape != xis.shape:
        raise ValueError("xs and xis must have the same shape")
    if phi.grid != g:
        raise LatticeError("function and window must share one grid")
    if phi.evaluate is None:
        if weight is not None:
            raise ValueError("point-dependent weights need an analytic window")
        return _forward_at_spectral(f, phi, xs, xis)
    radius = phi.radius
    if radius is None:
        raise ValueError("analytic window needs a support radius")
    if len(xs) and np.max(np.abs(xs)) > g.L - radius - 2 * g.dx:
        worst = xs[np.argmax(np.max(np.abs(xs), axis=1))]
        raise LatticeError(f"point x={worst} is closer than the window radius {radius:.3g} to the boundary")
    off = _stencil(g, radius)
    fv = f.values
    # the stencil tail may cross the seam; the grid is periodic
    out = np.empty(len(xs), dtype=complex)
    if n == 1:
        per = len(off)
        size = max(1, chunk_elems // per)
        for sl in _parallel.chunks(len(xs), size):
            x0 = xs[sl, 0]
            base = np.floor((x0 + g.L) / g.dx).astype(int)
            ii = base[:, None] + off[None, :]
            z = g.coord_of(ii)
            w = np.conj(phi.evaluate((z - x0[:, None])[..., None]))
            if weight is not None:
                w = w * weight(z[..., None], xs[sl])
            out[sl] = g.weight * np.sum(w * fv[ii % g.N] * np.exp(-1j * z * xis[sl, 0:1]), axis=1)
        return out
    o1, o2 = np.meshgrid(off, off, indexing="ij")
    o1 = o1.ravel()
    o2 = o2.ravel()
    per = len(o1)
    size = max(1, chunk_elems // per)
    for sl in _parallel.chunks(len(xs), size):
        x0 = xs[sl]
        base = np.floor((x0 + g.L) / g.dx).astype(int)
        i1 = base[:, 0:1] + o1[None, :]
        i2 = base[:, 1:2] + o2[None, :]
        z1 = g.coord_of(i1)
        z2 = g.coord_of(i2)
        dz = np.stack([z1 - x0[:, 0:1], z2 - x0[:, 1:2]], axis=-1)
        w = np.conj(phi.evaluate(dz))
        if weight is not None:
            w = w * weight(np.stack([z1, z2], axis=-1), x0)
        ph = np.exp(-1j * (z1 * xis[sl, 0:1] + z2 * xis[sl, 1:2]))
        out[sl] = g.weight * np.sum(w * fv[i1 % g.N, i2 % g.N] * ph, axis=1)
    return out


def _forward_at_spectral(f, phi, xs, xis):
    g = f.grid
    hat = np.fft.fftn(phi.profile.values)
    kdot = lambda v: sum(v[j] * g.k_coords[j] for j in range(g.n))  # noqa: E731
    out = np.empty(len(xs), dtype=complex)
    for p in range(len(xs)):
        shifted = np.fft.ifftn(hat * np.exp(-1j * kdot(xs[p])))
        ph = np.exp(-1j * sum(g.coords[j] * xis[p, j] for j in range(g.n)))
        out[p] = g.weight * np.sum(np.conj(shifted) * f.values * ph)
    return out


def inverse_wpt(
    F: PhaseField,
    psi: Window,
    phi: Window,
    threads: Optional[int] = None,
    chunk: int = 64,
    t: Optional[float] = None,
) -> WaveFunction:
    """Left inverse ``W^{-1}_{psi,phi} F`` by lattice quadrature.

    Rows of ``F`` that vanish identically are skipped.
    """
    lattice = F.lattice
    g = lattice.grid
    n = g.n
    if psi.grid != g or phi.grid != g:
        raise LatticeError("windows and lattice must share one grid")
    ov = inner(psi.profile, phi.profile)
    if abs(ov) <= _OVERLAP_FLOOR * psi.norm() * phi.norm():
        raise DegeneratePairError(f"window overlap {ov:.3e} is numerically zero")
    nodes = _node_list(lattice)
    vals = F.values.reshape((len(nodes),) + (lattice.nxi,) * n)
    live = np.flatnonzero(np.any(vals.reshape(len(nodes), -1) != 0, axis=1))
    kx = lattice.xi_index
    xi = lattice.xi_nodes
    if n == 1:
        phase = np.exp(-1j * g.L * xi)
    else:
        phase = np.exp(-1j * g.L * (xi[:, None] + xi[None, :]))
    prof = psi.profile.values
    axes = tuple(range(1, n + 1))
    scale = g.N**n * lattice.weight / ((2.0 * np.pi) ** n * ov)

    def work(sl):
        idx = live[sl]
        buf = np.zeros((len(idx),) + g.shape, dtype=complex)
        if n == 1:
            buf[:, kx] = vals[idx] * phase
        else:
            buf[:, kx[:, None], kx[None, :]] = vals[idx] * phase
        s = np.fft.ifftn(buf, axes=axes)
        return np.sum(_rolled(prof, nodes[idx], g.N) * s, axis=0)

    out = np.zeros(g.shape, dtype=complex)
    for part in _parallel.pmap(work, _parallel.chunks(len(live), chunk), threads):
        out += part
    return WaveFunction(g, out * scale, psi.profile.t if t is None else t)


def wpt_via_fourier(
    f: WaveFunction,
    phi: Window,
    lattice: PhaseLattice,
    threads: Optional[int] = None,
    chunk: int = 16,
) -> PhaseField:
    """Same field as :func:`forward_wpt`, computed from ``hat f`` and ``hat phi``.

    ``W_phi f(x, xi) = exp(-i x.xi) int conj(hat phi(eta - xi)) hat f(eta) exp(i x.eta) d eta``.
    """
    _check_compatible(f, phi, lattice)
    g = lattice.grid
    n = g.n
    fh = fourier(f).values
    ph = np.conj(fourier(phi.profile).values)
    mm = lattice.xi_int
    if n == 1:
        labels = mm[:, None]
    else:
        a, b = np.meshgrid(mm, mm, indexing="ij")
        labels = np.stack([a.ravel(), b.ravel()], axis=-1)
    xs = lattice.x_index
    N = g.N
    x_nodes = lattice.x_nodes
    inv_scale = (2.0 * np.pi) ** (n / 2.0) / (g.weight / (2.0 * np.pi) ** (n / 2.0))
    shift = np.exp(-1j * g.L * sum(g.k_coords))
    j = np.arange(N)

    def work(sl):
        lab = labels[sl]
        if n == 1:
            idx = (j[None, :] - lab[:, 0:1]) % N
            h = ph[idx] * fh
            v = np.fft.ifft(h * shift, axis=1) * inv_scale
            v = v[:, xs] * np.exp(-1j * np.outer(lab[:, 0] * g.dk, x_nodes))
            return v
        i1 = (j[None, :] - lab[:, 0:1]) % N
        i2 = (j[None, :] - lab[:, 1:2]) % N
        h = ph[i1[:, :, None], i2[:, None, :]] * fh
        v = np.fft.ifftn(h * shift, axes=(1, 2)) * inv_scale
        v = v[:, xs[:, None], xs[None, :]]
        e1 = np.exp(-1j * np.outer(lab[:, 0] * g.dk, x_nodes))
        e2 = np.exp(-1j * np.outer(lab[:, 1] * g.dk, x_nodes))
        return v * e1[:, :, None] * e2[:, None, :]

    parts = _parallel.pmap(work, _parallel.chunks(len(labels), chunk), threads)
    out = np.concatenate(parts, axis=0)
    if n == 1:
        out = out.T
    else:
        nk = lattice.nxi
        nx = lattice.nx
        out = out.reshape(nk, nk, nx, nx).transpose(2, 3, 0, 1)
    return PhaseField(lattice, out)


def derivative_identity_residuals(f_path, phi_path, t: float, lattice: PhaseLattice, dt: float = 1e-3):
    """Residuals of the two derivative identities at time ``t``.

    ``f_path(t)`` returns a :class:`WaveFunction` and ``phi_path(t)`` a
    :class:`Window`.  Returns ``(r1, r2)``: the lattice-max of

    * ``W_phi[d_x f] - i xi W_phi f + W_{d_x phi} f`` (spectral ``d_x``, max over axes), and
    * ``W_phi[d_t f] - d_t W_phi f + W_{d_t phi} f`` (centred differences in ``t``).
    """
    f0 = f_path(t)
    p0 = phi_path(t)
    n = lattice.n
    _, K = lattice.node_arrays()
    W0 = forward_wpt(f0, p0, lattice).values
    r1 = 0.0
    for ax in range(n):
        lhs = forward_wpt(spectral_derivative(f0, ax), p0, lattice).values
        rhs = 1j * K[..., ax] * W0 - forward_wpt(f0, p0.derivative(ax), lattice).values
        r1 = max(r1, float(np.max(np.abs(lhs - rhs))))
    fp, fm = f_path(t + dt), f_path(t - dt)
    pp, pm = phi_path(t + dt), phi_path(t - dt)
    dft = f0.replace((fp.values - fm.values) / (2 * dt))
    dphi_vals = (pp.profile.values - pm.profile.values) / (2 * dt)
    dW = (forward_wpt(fp, pp, lattice).values - forward_wpt(fm, pm, lattice).values) / (2 * dt)
    lhs = forward_wpt(dft, p0, lattice).values
    rhs = dW
    if np.any(dphi_vals != 0):
        rhs = rhs - forward_wpt(f0, Window(p0.profile.replace(dphi_vals), p0.band_limit), lattice).values
    r2 = float(np.max(np.abs(lhs - rhs)))
    return r1, r2


# --------------------------------------------------------------------------- dense subspace


def smooth_step(u):
    """C-infinity step: 0 for u <= 0, 1 for u >= 1."""
    u = np.clip(np.asarray(u, dtype=float), 0.0, 1.0)
    a = np.where(u > 0, np.exp(-1.0 / np.where(u > 0, u, 1.0)), 0.0)
    b = np.where(u < 1, np.exp(-1.0 / np.where(u < 1, 1.0 - u, 1.0)), 0.0)
    return a / (a + b)


def _smooth_box(v, lo, hi, width):
    return smooth_step((v - lo) / width) * smooth_step((hi - v) / width)


@dataclass(frozen=True)
class CutoffRegion:
    """Box ``[x_lo, x_hi]^n x [xi_lo, xi_hi]`` (per axis) with smooth edges.

    The mask is 1 inside the box shrunk by ``width`` and 0 outside the box.
    Bounds may be scalars (same on each axis) or length-``n`` sequences.
    """

    x_lo: object
    x_hi: object
    xi_lo: object
    xi_hi: object
    width: float = 0.5

    def bounds(self, n):
        def vec(v):
            a = np.broadcast_to(np.asarray(v, dtype=float), (n,))
            return a

        return vec(self.x_lo), vec(self.x_hi), vec(self.xi_lo), vec(self.xi_hi)

    def xi_distance_from_origin(self, n) -> float:
        _, _, lo, hi = self.bounds(n)
        d = np.where(lo > 0, lo, np.where(hi < 0, -hi, 0.0))
        return float(np.sqrt(np.sum(d**2)))

    def mask(self, lattice: PhaseLattice) -> np.ndarray:
        n = lattice.n
        xlo, xhi, klo, khi = self.bounds(n)
        X, K = lattice.node_arrays()
        m = np.ones(lattice.shape)
        for j in range(n):
            m = m * _smooth_box(X[..., j], xlo[j], xhi[j], self.width)
            m = m * _smooth_box(K[..., j], klo[j], khi[j], self.width)
        return m


def dense_prep(f: WaveFunction, phi0: Window, lattice: PhaseLattice, region: CutoffRegion) -> WaveFunction:
    """``g = W^{-1}_{phi0,phi0}[chi W_{phi0} f]`` with ``chi`` the smooth region mask.

    The mask vanishes on a neighbourhood of ``{xi = 0}``.
    """
    if region.xi_distance_from_origin(lattice.n) <= 0:
        raise ValueError("cutoff region touches {xi = 0}")
    F = forward_wpt(f, phi0, lattice)
    omega = PhaseField(lattice, F.values * region.mask(lattice))
    return inverse_wpt(omega, phi0, phi0, t=f.t)


def inverse_norm_constant(psi: Window, phi: Window) -> float:
    """Operator norm bound ``||psi|| / ((2pi)^{n/2} |(phi, psi)|)`` of the left inverse."""
    n = psi.grid.n
    return psi.norm() / ((2.0 * np.pi) ** (n / 2.0) * abs(inner(phi.profile, psi.profile)))


# --------------------------------------------------------------------------- I/O


def write_phase_field_csv(F: PhaseField, path, threshold: float = 0.0) -> None:
    """CSV with columns ``x1..xn, xi1..xin, re, im``; nodes with ``|F| <= threshold`` skipped."""
    n = F.lattice.n
    X, K = F.lattice.node_arrays()
    v = F.values.ravel()
    X = X.reshape(-1, n)
    K = K.reshape(-1, n)
    keep = np.abs(v) > threshold if threshold > 0 else np.ones(v.shape, bool)
    header = [f"x{j + 1}" for j in range(n)] + [f"xi{j + 1}" for j in range(n)] + ["re", "im"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i in np.flatnonzero(keep):
            w.writerow([repr(float(c)) for c in X[i]] + [repr(float(c)) for c in K[i]] + [repr(float(v[i].real)), repr(float(v[i].imag))])


def read_phase_field_csv(path, lattice: PhaseLattice) -> PhaseField:
    """Inverse of :func:`write_phase_field_csv`; missing nodes read as zero."""
    n = lattice.n
    out = np.zeros(lattice.shape, dtype=complex)
    g = lattice.grid
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        next(r)
        for row in r:
            vals = [float(c) for c in row]
            xi_ = np.rint((np.array(vals[:n]) + g.L) / lattice.dx_lat).astype(int)
            ki = np.rint(np.array(vals[n : 2 * n]) / lattice.dxi_lat).astype(int) + (lattice.nxi - 1) // 2
            out[tuple(xi_) + tuple(ki)] = vals[2 * n] + 1j * vals[2 * n + 1]
    return PhaseField(lattice, out)


def save_phase_field(F: PhaseField, path) -> None:
    """Flat binary (``.npz``) export: values plus lattice parameters."""
    d = F.lattice.describe()
    np.savez(path, values=F.values, **{k: np.asarray(v) for k, v in d.items()})


def load_phase_field(path) -> PhaseField:
    from .foundation import make_grid

    z = np.load(path)
    grid = make_grid(int(z["n"]), float(z["L"]), int(z["N"]))
    lat = PhaseLattice(grid, int(z["x_stride"]), int(z["xi_stride"]), float(z["Xi"]), float(z["rho"]))
    return PhaseField(lat, z["values"])
