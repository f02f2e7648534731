"""Uniform periodic grids, the discrete unitary Fourier transform, and L2 quadrature.

Everything downstream samples functions on the torus ``[-L, L)^n`` with ``N``
points per axis.  Integrals are rectangle-rule sums, which are spectrally
accurate for smooth integrands that decay before reaching the boundary.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import GridError

UNITARY = "unitary"
ASYMMETRIC = "asymmetric"
_CONVENTIONS = (UNITARY, ASYMMETRIC)


def _is_power_of_two(N):
    return N > 0 and (N & (N - 1)) == 0


@dataclass(frozen=True)
class SpatialGrid:
    """Uniform grid on ``[-L, L)^n`` with ``N`` points per axis."""

    n: int
    L: float
    N: int

    def __post_init__(self):
        if self.n not in (1, 2):
            raise GridError(f"dimension must be 1 or 2, got {self.n}")
        if not isinstance(self.N, (int, np.integer)) or not _is_power_of_two(int(self.N)):
            raise GridError(f"N must be a power of two, got {self.N}")
        if self.N < 16:
            raise GridError(f"N must be at least 16, got {self.N}")
        if not self.L > 0:
            raise GridError(f"L must be positive, got {self.L}")

    @property
    def dx(self) -> float:
        return 2.0 * self.L / self.N

    @property
    def dk(self) -> float:
        """Spacing of the dual frequency grid."""
        return np.pi / self.L

    @property
    def k_max(self) -> float:
        return np.pi / self.dx

    @property
    def shape(self):
        return (self.N,) * self.n

    @property
    def weight(self) -> float:
        """Quadrature weight dx**n."""
        return self.dx**self.n

    @cached_property
    def axis(self) -> np.ndarray:
        a = -self.L + self.dx * np.arange(self.N)
        a.setflags(write=False)
        return a

    @cached_property
    def k_axis(self) -> np.ndarray:
        """Dual frequencies in FFT (natural) order."""
        k = 2.0 * np.pi * np.fft.fftfreq(self.N, self.dx)
        k.setflags(write=False)
        return k

    @cached_property
    def coords(self) -> tuple:
        """Meshgrid of coordinates, ``indexing='ij'``."""
        c = np.meshgrid(*([self.axis] * self.n), indexing="ij")
        for a in c:
            a.setflags(write=False)
        return tuple(c)

    @cached_property
    def points(self) -> np.ndarray:
        """Coordinates stacked on a trailing axis, shape ``shape + (n,)``."""
        p = np.stack(self.coords, axis=-1)
        p.setflags(write=False)
        return p

    @cached_property
    def k_coords(self) -> tuple:
        c = np.meshgrid(*([self.k_axis] * self.n), indexing="ij")
        for a in c:
            a.setflags(write=False)
        return tuple(c)

    @cached_property
    def k_squared(self) -> np.ndarray:
        k2 = sum(kc**2 for kc in self.k_coords)
        k2.setflags(write=False)
        return k2

    def index_of(self, x):
        """Nearest grid index (per axis) of coordinate(s) ``x``."""
        return np.rint((np.asarray(x) + self.L) / self.dx).astype(int)

    def coord_of(self, i):
        return -self.L + self.dx * np.asarray(i)


def make_grid(n: int, L: float, N: int) -> SpatialGrid:
    """Build a :class:`SpatialGrid`; see the class for the accepted values."""
    return SpatialGrid(int(n), float(L), int(N))


@dataclass(frozen=True, eq=False)
class WaveFunction:
    """Complex samples of a function on a grid, stamped with a time."""

    grid: SpatialGrid
    values: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        v = np.array(self.values, dtype=complex)
        if v.shape != self.grid.shape:
            raise GridError(f"values shape {v.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("wave function has non-finite samples")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def norm(self) -> float:
        return norm(self)

    def replace(self, values=None, t=None) -> "WaveFunction":
        return WaveFunction(
            self.grid,
            self.values if values is None else values,
            self.t if t is None else t,
        )

    def __add__(self, other):
        _check_same(self, other)
        return self.replace(self.values + other.values)

    def __sub__(self, other):
        _check_same(self, other)
        return self.replace(self.values - other.values)

    def __mul__(self, c):
        return self.replace(self.values * c)

    __rmul__ = __mul__


@dataclass(frozen=True, eq=False)
class SpectralFunction:
    """Frequency samples on the dual grid, stored in FFT order."""

    grid: SpatialGrid
    values: np.ndarray
    t: float = 0.0
    convention: str = UNITARY

    def __post_init__(self):
        v = np.array(self.values, dtype=complex)
        if v.shape != self.grid.shape:
            raise GridError(f"values shape {v.shape} does not match grid {self.grid.shape}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        if self.convention not in _CONVENTIONS:
            raise ValueError(f"unknown Fourier convention {self.convention!r}")

    @property
    def xi(self):
        return self.grid.k_coords

    def norm(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.values) ** 2) * self.grid.dk**self.grid.n))


def _check_same(f, g):
    if f.grid != g.grid:
        raise GridError("functions live on different grids")


def _shift_phase(grid: SpatialGrid) -> np.ndarray:
    # exp(i L sum_j k_j): the grid starts at -L, FFT indices start at 0
    return np.exp(1j * grid.L * sum(grid.k_coords))


def fourier(f: WaveFunction, convention: str = UNITARY) -> SpectralFunction:
    """Discrete Fourier transform approximating ``(2pi)^{-n/2} int e^{-ix.xi} f dx``.

    With ``convention='asymmetric'`` the forward transform carries no
    normalisation and the inverse carries ``(2pi)^{-n}``.
    """
    g = f.grid
    scale = g.weight
    if convention == UNITARY:
        scale = scale / (2.0 * np.pi) ** (g.n / 2)
    elif convention != ASYMMETRIC:
        raise ValueError(f"unknown Fourier convention {convention!r}")
    vals = scale * _shift_phase(g) * np.fft.fftn(f.values)
    return SpectralFunction(g, vals, f.t, convention)


def inverse_fourier(F: SpectralFunction) -> WaveFunction:
    """Inverse of :func:`fourier` under the convention stored on ``F``."""
    g = F.grid
    scale = g.weight
    if F.convention == UNITARY:
        scale = scale / (2.0 * np.pi) ** (g.n / 2)
    vals = np.fft.ifftn(F.values / _shift_phase(g)) / scale
    return WaveFunction(g, vals, F.t)


def inner(f: WaveFunction, g: WaveFunction) -> complex:
    """Rectangle-rule ``int f conj(g) dx``."""
    _check_same(f, g)
    return complex(np.vdot(g.values, f.values) * f.grid.weight)


def norm(f: WaveFunction) -> float:
    return float(np.sqrt(np.sum(np.abs(f.values) ** 2) * f.grid.weight))


def spectral_derivative(f: WaveFunction, axis: int = 0) -> WaveFunction:
    """``d f / d x_axis`` computed by Fourier multiplication."""
    k = f.grid.k_coords[axis]
    return f.replace(np.fft.ifftn(1j * k * np.fft.fftn(f.values)))


def edge_mass(f: WaveFunction, margin: float) -> float:
    """Fraction of ``|f|^2`` within ``margin`` of the periodic boundary."""
    g = f.grid
    inside = np.ones(g.shape, dtype=bool)
    for c in g.coords:
        inside &= np.abs(c) < g.L - margin
    total = np.sum(np.abs(f.values) ** 2)
    if total == 0:
        return 0.0
    return float(np.sum(np.abs(f.values[~inside]) ** 2) / total)


def warn_if_near_boundary(f: WaveFunction, window_width: float, tol: float = 1e-10) -> float:
    """Warn when mass sits within five window widths of the boundary."""
    frac = edge_mass(f, 5.0 * window_width)
    if frac > tol:
        warnings.warn(
            f"{frac:.3e} of the mass lies within 5 window widths of the boundary at t={f.t}",
            RuntimeWarning,
            stacklevel=2,
        )
    return frac


def spectral_edge_mass(f: WaveFunction, fraction: float = 0.9) -> float:
    """Relative spectral mass with some ``|k_j| > fraction * k_max``."""
    g = f.grid
    fh = np.abs(np.fft.fftn(f.values)) ** 2
    edge = np.zeros(g.shape, dtype=bool)
    for k in g.k_coords:
        edge |= np.abs(k) > fraction * g.k_max
    total = fh.sum()
    return 0.0 if total == 0 else float(fh[edge].sum() / total)
