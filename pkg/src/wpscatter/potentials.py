"""Long-range and short-range potential families with derivatives and decay checks.

Positions are arrays of shape ``(..., n)``; ``n`` is inferred from the last
axis.  Derivatives of the built-in families are generated symbolically once
per dimension and evaluated through numpy.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional

import numpy as np
import sympy as sp

from .errors import DecayValidationError

MAX_ORDER = 4


def multi_indices(n: int, order: int):
    """All multi-indices ``alpha`` in ``N^n`` with ``|alpha| = order``."""
    return [a for a in itertools.product(range(order + 1), repeat=n) if sum(a) == order]


def japanese(x):
    """``<x> = sqrt(1 + |x|^2)`` over the last axis."""
    x = np.asarray(x, dtype=float)
    return np.sqrt(1.0 + np.sum(x**2, axis=-1))


@lru_cache(maxsize=None)
def _radial_family(kind: str, n: int, exponent: float):
    """Lambdified derivatives of ``(1 + |x|^2)^(-exponent/2)`` up to order 4."""
    xs = sp.symbols(f"x1:{n + 1}", real=True)
    expr = (1 + sum(v**2 for v in xs)) ** (-sp.nsimplify(exponent) / 2)
    table = {}
    for order in range(MAX_ORDER + 1):
        for a in multi_indices(n, order):
            d = expr
            for j, k in enumerate(a):
                if k:
                    d = sp.diff(d, xs[j], k)
            table[a] = sp.lambdify(xs, sp.simplify(d), "numpy", cse=True)
    return table


def _fd_derivative(fun, alpha, x, h=1e-2):
    """Tensor-product 5-point central differences; error O(h^4) per axis."""
    w1 = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / (12.0 * h)
    w2 = np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / (12.0 * h * h)
    off = np.array([-2.0, -1.0, 0.0, 1.0, 2.0]) * h
    x = np.asarray(x, dtype=float)

    def apply(f, axis, k):
        if k == 0:
            return f
        w = w1 if k == 1 else w2

        def g(z):
            out = 0.0
            for c, o in zip(w, off):
                if c == 0.0:
                    continue
                zz = np.array(z, dtype=float, copy=True)
                zz[..., axis] += o
                out = out + c * f(zz)
            return out

        return apply(g, axis, k - 2) if k > 2 else g

    f = fun
    for j, k in enumerate(alpha):
        f = apply(f, j, k)
    return f(x)


@dataclass(frozen=True, eq=False)
class LongRangePotential:
    """``V_L(t, x)`` with derivatives through order four.

    Parameters
    ----------
    value : callable ``(t, x) -> array``
    delta : float
        Decay exponent in ``(0, 1]``.
    derivative : callable ``(alpha, t, x) -> array``, optional
        Falls back to 5-point finite differences when absent.
    spatial : callable ``x -> array``, optional
        Time-independent factor for separable potentials ``m(t) * spatial(x)``;
        lets grid samples be cached.
    modulation : callable ``t -> float``, optional
    spec : dict
        Canonical description used for hashing.
    """

    value: Callable
    delta: float
    derivative: Optional[Callable] = None
    spatial: Optional[Callable] = None
    modulation: Optional[Callable] = None
    spec: dict = field(default_factory=dict)
    zero: bool = False
    constants: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0 < self.delta <= 1:
            raise ValueError(f"decay exponent must lie in (0, 1], got {self.delta}")

    @property
    def autonomous(self) -> bool:
        return self.modulation is None and self.spec.get("time_independent", False)

    def __call__(self, t, x):
        return self.value(t, x)

    def deriv(self, alpha, t, x):
        alpha = tuple(int(a) for a in alpha)
        if sum(alpha) == 0:
            return self.value(t, x)
        if self.derivative is not None:
            return self.derivative(alpha, t, x)
        return _fd_derivative(lambda z: self.value(t, z), alpha, x)

    def grad(self, t, x):
        x = np.asarray(x, dtype=float)
        n = x.shape[-1]
        comps = []
        for j in range(n):
            a = [0] * n
            a[j] = 1
            comps.append(np.broadcast_to(self.deriv(a, t, x), x.shape[:-1]))
        return np.stack(comps, axis=-1)

    def tilde(self, t, x):
        """``V_L - x . grad V_L``."""
        x = np.asarray(x, dtype=float)
        return self.value(t, x) - np.sum(x * self.grad(t, x), axis=-1)

    def phase_density(self, t, x, xi):
        """``|xi|^2 / 2 + V_L - x . grad V_L``."""
        return 0.5 * np.sum(np.asarray(xi) ** 2, axis=-1) + self.tilde(t, x)


@dataclass(frozen=True, eq=False)
class ShortRangePotential:
    """``V_S(t, x)`` bounded by ``C (1 + |x|)^(-1 - delta_s)``."""

    value: Callable
    delta_s: float
    spatial: Optional[Callable] = None
    spec: dict = field(default_factory=dict)
    bound: float = float("nan")

    def __post_init__(self):
        if not self.delta_s > 0:
            raise ValueError(f"short-range exponent must be positive, got {self.delta_s}")

    def __call__(self, t, x):
        return self.value(t, x)


def _as_points(x):
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x[None]
    return x


def _radial_callables(c, exponent, kind):
    def value(t, x):
        x = _as_points(x)
        return c * (1.0 + np.sum(x**2, axis=-1)) ** (-exponent / 2.0)

    def derivative(alpha, t, x):
        x = _as_points(x)
        n = x.shape[-1]
        f = _radial_family(kind, n, float(exponent))[tuple(alpha)]
        out = f(*[x[..., j] for j in range(n)])
        return c * np.broadcast_to(np.asarray(out, dtype=float), x.shape[:-1])

    return value, derivative


def make_coulomb_like(c: float, delta: float) -> LongRangePotential:
    """``V_L(x) = c <x>^(-delta)``, time independent."""
    if not 0 < delta <= 1:
        raise ValueError(f"decay exponent must lie in (0, 1], got {delta}")
    value, derivative = _radial_callables(float(c), float(delta), "long")
    spec = {"family": "coulomb_like", "c": float(c), "delta": float(delta), "time_independent": True}
    V = LongRangePotential(value, float(delta), derivative, lambda x: value(0.0, x), None, spec, c == 0)
    object.__setattr__(V, "constants", validate_decay(V).constants)
    return V


def make_zero_potential(delta: float = 1.0) -> LongRangePotential:
    V = make_coulomb_like(0.0, delta)
    return V


def make_time_modulated(base: LongRangePotential, m: Callable, name: str = "custom",
                        t_check: float = 200.0, samples: int = 20001) -> LongRangePotential:
    """``V(t, x) = m(t) base(x)`` for a bounded profile with bounded derivatives.

    The profile is checked on ``[0, t_check]``: ``sup |m| <= 1`` and its first
    four finite-difference derivatives must stay bounded.
    """
    if base.modulation is not None or not base.autonomous:
        raise ValueError("base potential must be time independent")
    ts = np.linspace(0.0, t_check, samples)
    mv = np.asarray([m(t) for t in ts], dtype=float)
    if not np.all(np.isfinite(mv)) or np.max(np.abs(mv)) > 1.0 + 1e-12:
        raise ValueError("time profile must satisfy sup |m| <= 1")
    h = ts[1] - ts[0]
    d = mv
    for k in range(1, 5):
        d = np.diff(d) / h
        if not np.all(np.isfinite(d)) or np.max(np.abs(d)) > 1e6:
            raise ValueError(f"time profile has an unbounded derivative of order {k}")

    def value(t, x):
        return m(t) * base.value(0.0, x)

    def derivative(alpha, t, x):
        return m(t) * base.deriv(alpha, 0.0, x)

    spec = dict(base.spec)
    spec.update({"time_independent": False, "modulation": name})
    V = LongRangePotential(value, base.delta, derivative, base.spatial, m, spec, base.zero or bool(np.all(mv == 0)))
    object.__setattr__(V, "constants", dict(base.constants))
    return V


def make_long_range(value: Callable, delta: float, derivative: Optional[Callable] = None,
                    name: str = "user", time_independent: bool = False) -> LongRangePotential:
    """User-supplied long-range potential; missing derivatives use finite differences."""
    spec = {"family": name, "delta": float(delta), "time_independent": bool(time_independent)}
    V = LongRangePotential(value, float(delta), derivative, None, None, spec)
    object.__setattr__(V, "constants", validate_decay(V).constants)
    return V


def make_short_range(c: float, delta_s: float) -> ShortRangePotential:
    """``V_S(x) = c (1 + |x|^2)^(-(1 + delta_s)/2)``."""
    if not delta_s > 0:
        raise ValueError(f"short-range exponent must be positive, got {delta_s}")
    value, _ = _radial_callables(float(c), 1.0 + float(delta_s), "short")
    spec = {"family": "short_range", "c": float(c), "delta_s": float(delta_s)}
    V = ShortRangePotential(value, float(delta_s), lambda x: value(0.0, x), spec)
    object.__setattr__(V, "bound", validate_decay(V).constants[0])
    return V


# --------------------------------------------------------------------------- validation


@dataclass
class DecayReport:
    """Measured decay constants per derivative order."""

    constants: dict
    weight: str
    passed: bool
    failure: str = ""
    argmax: dict = field(default_factory=dict)

    def __str__(self):
        parts = [f"C_{k}={v:.6g}" for k, v in sorted(self.constants.items())]
        return f"DecayReport({self.weight}: {', '.join(parts)}, passed={self.passed})"


def sample_box(n: int, r_max: float = 1e4, n_radii: int = 400, n_angles: int = 16) -> np.ndarray:
    """Sample points with log-spaced radii in ``[0, r_max]``; shape ``(P, n)``."""
    r = np.concatenate([[0.0], np.logspace(-3, np.log10(r_max), n_radii)])
    if n == 1:
        return np.concatenate([-r[::-1], r[1:]])[:, None]
    th = np.linspace(0, 2 * np.pi, n_angles, endpoint=False)
    pts = np.stack([np.outer(r[1:], np.cos(th)).ravel(), np.outer(r[1:], np.sin(th)).ravel()], axis=-1)
    return np.concatenate([np.zeros((1, 2)), pts])


def validate_decay(V, orders=range(MAX_ORDER + 1), box=None, t_samples=(0.0,), n: int = 1,
                   r_max: float = 1e4) -> DecayReport:
    """Measure ``sup <x>^(delta + k) |d^alpha V|`` per order ``k``.

    For a :class:`ShortRangePotential` only order 0 is measured, with weight
    ``(1 + |x|)^(1 + delta_s)``.  Non-finite samples make the report fail and
    name the offending point.
    """
    pts = sample_box(n, r_max) if box is None else np.asarray(box, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    n = pts.shape[-1]
    out, arg = {}, {}
    if isinstance(V, ShortRangePotential):
        w = (1.0 + np.sqrt(np.sum(pts**2, axis=-1))) ** (1.0 + V.delta_s)
        best, where = 0.0, None
        for t in t_samples:
            v = np.asarray(V.value(t, pts), dtype=float)
            if not np.all(np.isfinite(v)):
                i = int(np.flatnonzero(~np.isfinite(v))[0])
                return DecayReport({}, "short", False, f"non-finite value at t={t}, x={pts[i].tolist()}")
            m = w * np.abs(v)
            i = int(np.argmax(m))
            if m[i] > best:
                best, where = float(m[i]), (t, pts[i].tolist())
        return DecayReport({0: best}, "short", True, "", {0: where})
    jx = japanese(pts)
    for k in orders:
        best, where = 0.0, None
        for a in multi_indices(n, k):
            for t in t_samples:
                v = np.asarray(np.broadcast_to(V.deriv(a, t, pts), jx.shape), dtype=float)
                if not np.all(np.isfinite(v)):
                    i = int(np.flatnonzero(~np.isfinite(v))[0])
                    return DecayReport(out, "long", False,
                                       f"non-finite derivative {a} at t={t}, x={pts[i].tolist()}")
                m = jx ** (V.delta + k) * np.abs(v)
                i = int(np.argmax(m))
                if m[i] > best:
                    best, where = float(m[i]), (a, t, pts[i].tolist())
        out[k] = best
        arg[k] = where
    return DecayReport(out, "long", True, "", arg)


@dataclass(frozen=True, eq=False)
class PotentialModel:
    """``V = V_L + V_S``; both parts are validated on construction."""

    long: LongRangePotential
    short: Optional[ShortRangePotential] = None

    def __post_init__(self):
        for part in (self.long, self.short):
            if part is None:
                continue
            rep = validate_decay(part)
            if not rep.passed:
                raise DecayValidationError(rep.failure)
        object.__setattr__(self, "_grid_cache", {})

    @property
    def autonomous(self) -> bool:
        return self.long.autonomous and (self.short is None or self.short.spatial is not None)

    @property
    def zero(self) -> bool:
        return self.long.zero and (self.short is None or self.short.spec.get("c", 1.0) == 0.0)

    def __call__(self, t, x):
        v = self.long.value(t, x)
        if self.short is not None:
            v = v + self.short.value(t, x)
        return v

    def on_grid(self, t, grid):
        """Samples of ``V(t)`` on a grid; separable parts are cached."""
        cache = self._grid_cache
        key = (grid, "L")
        if self.long.spatial is not None:
            if key not in cache:
                cache[key] = np.asarray(self.long.spatial(grid.points), dtype=float)
            m = 1.0 if self.long.modulation is None else self.long.modulation(t)
            v = m * cache[key]
        else:
            v = np.asarray(self.long.value(t, grid.points), dtype=float)
        if self.short is not None:
            key = (grid, "S")
            if self.short.spatial is not None:
                if key not in cache:
                    cache[key] = np.asarray(self.short.spatial(grid.points), dtype=float)
                v = v + cache[key]
            else:
                v = v + np.asarray(self.short.value(t, grid.points), dtype=float)
        return v

    def spec(self) -> dict:
        return {"long": self.long.spec, "short": None if self.short is None else self.short.spec}


def as_model(V) -> PotentialModel:
    if isinstance(V, PotentialModel):
        return V
    if isinstance(V, LongRangePotential):
        return PotentialModel(V)
    if isinstance(V, ShortRangePotential):
        return PotentialModel(make_zero_potential(), V)
    raise TypeError(f"not a potential: {V!r}")


def long_part(V) -> LongRangePotential:
    return V.long if isinstance(V, PotentialModel) else V


def tilde_bound_check(V: LongRangePotential, n: int = 1) -> float:
    """Max over the sample box of ``|V - x.grad V| <x>^delta / (C_0 + n C_1)``."""
    pts = sample_box(n)
    C0, C1 = V.constants.get(0, 0.0), V.constants.get(1, 0.0)
    if C0 + n * C1 == 0:
        return 0.0 if np.all(V.tilde(0.0, pts) == 0) else math.inf
    return float(np.max(np.abs(V.tilde(0.0, pts)) * japanese(pts) ** V.delta) / (C0 + n * C1))
