"""Scattering experiments: data preparation, energy cutoff, Cauchy traces, decay checks."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import CoverageError
from .foundation import SpatialGrid, SpectralFunction, WaveFunction, inverse_fourier, norm
from .potentials import as_model, japanese, long_part
from .propagators import free_propagate, full_propagate, evolve_window, modified_propagate
from .trajectories import PhaseSpaceRegion, loglog_fit, solve_bvp_picard, threshold_T
from .wpt import PhaseField, Window, WindowPair, forward_wpt_at, smooth_step, spectral_mass_outside


# --------------------------------------------------------------------------- data


def band_limited_data(grid: SpatialGrid, a: float, R: float, x0=0.0, direction=None,
                      sharpness: float = 8.0) -> WaveFunction:
    """Unit-norm data with ``hat f`` concentrated in the annulus ``a < |xi| < R``.

    ``hat f(k) = exp(-(|k| - k_c)^2 / (2 s^2)) exp(-i k . x0)`` with
    ``k_c = (a + R) / 2`` and ``s = (R - a) / (2 sharpness)``, so the annulus
    edges sit ``sharpness`` widths from the centre.  In one dimension
    ``direction`` selects ``+1`` or ``-1`` moving content (default both); in two
    dimensions a unit vector adds the smooth angular weight
    ``exp(-|k/|k| - d|^2 / 0.18)``.
    """
    if not 0 < a < R:
        raise ValueError(f"annulus needs 0 < a < R, got a={a}, R={R}")
    if R >= 0.9 * grid.k_max:
        raise ValueError(f"annulus outer radius {R} exceeds the grid band {0.9 * grid.k_max:.4g}")
    kk = np.sqrt(grid.k_squared)
    kc = 0.5 * (a + R)
    s = (R - a) / (2.0 * sharpness)
    hat = np.exp(-((kk - kc) ** 2) / (2 * s * s))
    x0 = np.broadcast_to(np.asarray(x0, dtype=float), (grid.n,))
    hat = hat * np.exp(-1j * sum(x0[j] * grid.k_coords[j] for j in range(grid.n)))
    if direction is not None:
        if grid.n == 1:
            hat = np.where(np.sign(direction) * grid.k_coords[0] > 0, hat, 0.0)
        else:
            d = np.asarray(direction, dtype=float)
            d = d / np.linalg.norm(d)
            safe = np.where(kk > 0, kk, 1.0)
            u = [grid.k_coords[j] / safe for j in range(2)]
            hat = hat * np.exp(-((u[0] - d[0]) ** 2 + (u[1] - d[1]) ** 2) / 0.18)
    f = inverse_fourier(SpectralFunction(grid, hat))
    return f * (1.0 / norm(f))


def annulus_mass_outside(f: WaveFunction, a: float, R: float) -> float:
    p = np.abs(np.fft.fftn(f.values)) ** 2
    kk = np.sqrt(f.grid.k_squared)
    return float(p[(kk <= a) | (kk >= R)].sum() / p.sum())


def phase_space_mass_outside(F: PhaseField, a: float, R: float, x_radius: Optional[float] = None) -> float:
    """Relative ``|F|^2`` mass outside ``{a < |xi| < R, |x| < x_radius}`` (default ``R``)."""
    X, K = F.lattice.node_arrays()
    xr = R if x_radius is None else x_radius
    kk = np.linalg.norm(K, axis=-1)
    inside = (kk > a) & (kk < R) & (np.linalg.norm(X, axis=-1) < xr)
    w = np.abs(F.values) ** 2
    return float(w[~inside].sum() / w.sum())


# --------------------------------------------------------------------------- low-energy cutoff


@dataclass(frozen=True)
class CutoffSpec:
    """Projection onto ``|xi| >= d`` with a smooth transition on ``[d - width, d]``."""

    d: float
    width: Optional[float] = None

    def __post_init__(self):
        if not self.d > 0:
            raise ValueError(f"cutoff radius must be positive, got {self.d}")
        w = self.d / 4 if self.width is None else self.width
        if not 0 <= w <= self.d / 4:
            raise ValueError(f"transition width must lie in [0, d/4], got {w}")
        object.__setattr__(self, "width", float(w))


def low_energy_cutoff(f: WaveFunction, spec: CutoffSpec, sharp: bool = False) -> WaveFunction:
    """Fourier multiplier by the (smoothed) indicator of ``{|xi| >= d}``."""
    kk = np.sqrt(f.grid.k_squared)
    if sharp or spec.width == 0:
        m = (kk >= spec.d).astype(float)
    else:
        m = smooth_step((kk - (spec.d - spec.width)) / spec.width)
    return f.replace(np.fft.ifftn(m * np.fft.fftn(f.values)))


# --------------------------------------------------------------------------- Cauchy trace


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    return "nan" if np.isnan(v) else format(v, ".12e")


@dataclass
class ConvergenceReport:
    """Cauchy differences of ``w(t_k) = U(0, t_k) U_M(t_k, 0) f`` on a ladder."""

    ladder: list
    diffs: list
    norms: list
    exponent: float
    fit_rms: float
    monotone: bool
    convergent: bool
    T: float
    comparison: str = "modified"
    truncated: bool = False
    diagnosis: str = ""
    limit: Optional[WaveFunction] = None
    extras: dict = field(default_factory=dict)

    def rows(self):
        out = []
        for k, t in enumerate(self.ladder[: len(self.norms)]):
            d = self.diffs[k - 1] if k >= 1 else None
            out.append([_fmt(t), _fmt(d), _fmt(self.norms[k])])
        return out

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "diff", "norm_ratio"])
            w.writerows(self.rows())

    def summary(self) -> str:
        items = {
            "comparison": self.comparison,
            "convergent": _fmt(self.convergent),
            "monotone": _fmt(self.monotone),
            "exponent": _fmt(self.exponent),
            "fit_rms": _fmt(self.fit_rms),
            "T": _fmt(self.T),
            "truncated": _fmt(self.truncated),
        }
        items.update({k: _fmt(v) for k, v in sorted(self.extras.items())})
        if self.diagnosis:
            items["diagnosis"] = '"' + self.diagnosis.replace('"', "'") + '"'
        return " ".join(f"{k}={v}" for k, v in items.items())


def wave_operator_trace(
    f: WaveFunction,
    V,
    pair: WindowPair,
    ladder,
    lattice,
    comparison: str = "modified",
    region: Optional[PhaseSpaceRegion] = None,
    exponent_max: float = 0.0,
    dt: float = 0.02,
    cache=None,
    threads=None,
    M=None,
) -> ConvergenceReport:
    """Cauchy-difference trace of the comparison dynamics on a dyadic ladder.

    ``comparison='modified'`` uses :func:`modified_propagate`; ``'free'``
    replaces it with the free flow.  The return leg ``U(0, t)`` is the split-step
    scheme run backward.  The verdict is CONVERGENT iff the differences are
    strictly decreasing for ``t_k >= T`` (``T`` from :func:`threshold_T` on
    ``region``) and the log-log slope of the differences is below
    ``exponent_max``.
    """
    Vm = as_model(V)
    ladder = [float(t) for t in ladder]
    if any(b <= a for a, b in zip(ladder, ladder[1:])):
        raise ValueError("ladder must be strictly increasing")
    if comparison not in ("modified", "free"):
        raise ValueError(f"unknown comparison {comparison!r}")
    T = threshold_T(region, Vm.long, f.grid.n) if region is not None else 0.0
    f0 = norm(f)
    ws, norms, infos = [], [], []
    truncated, diagnosis = False, ""
    for t in ladder:
        try:
            if comparison == "modified":
                v, info = modified_propagate(f, t, pair, Vm.long, lattice, M=M, cache=cache,
                                             threads=threads, return_info=True)
                infos.append(info)
            else:
                v = free_propagate(f, t)
        except CoverageError as e:
            truncated = True
            diagnosis = f"t={t}: {e} (escaped {e.escaped:.3e})"
            break
        w = full_propagate(v, -t, Vm, dt=dt)
        ws.append(w)
        norms.append(norm(w) / f0)
    diffs = [norm(b - a) for a, b in zip(ws, ws[1:])]
    ts = ladder[: len(diffs)]
    expo, rms = loglog_fit(ts, diffs) if len(diffs) >= 2 else (float("nan"), float("nan"))
    tail = [d for t, d in zip(ts, diffs) if t >= T]
    monotone = len(tail) >= 2 and all(b < a for a, b in zip(tail, tail[1:]))
    convergent = bool(monotone and np.isfinite(expo) and expo < exponent_max and not truncated)
    extras = {}
    if infos:
        extras["max_active"] = max(i.active for i in infos)
        extras["max_boundary_ratio"] = max(i.boundary_ratio for i in infos)
        extras["max_theta_error"] = max(i.theta_error for i in infos)
    return ConvergenceReport(ladder, diffs, norms, expo, rms, monotone, convergent, T, comparison,
                             truncated, diagnosis, ws[-1] if ws else None, extras)


# --------------------------------------------------------------------------- decay checks


@dataclass
class DecayFitReport:
    """Measured values on a ladder with a log-log decay fit."""

    ladder: list
    values: list
    exponent: float
    fit_rms: float
    passed: bool
    target: float
    sup_weighted: float = float("nan")
    truncated: bool = False
    diagnosis: str = ""
    fit_range: tuple = ()

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "value"])
            for t, v in zip(self.ladder, self.values):
                w.writerow([_fmt(t), _fmt(v)])

    def summary(self) -> str:
        items = {"passed": _fmt(self.passed), "exponent": _fmt(self.exponent), "fit_rms": _fmt(self.fit_rms),
                 "target": _fmt(self.target), "sup_weighted": _fmt(self.sup_weighted),
                 "truncated": _fmt(self.truncated)}
        if self.diagnosis:
            items["diagnosis"] = '"' + self.diagnosis + '"'
        return " ".join(f"{k}={v}" for k, v in items.items())


def outgoing_sup(phi_t: WaveFunction, radius: float) -> float:
    r = np.sqrt(sum(c**2 for c in phi_t.grid.coords))
    sel = r >= radius
    return float(np.max(np.abs(phi_t.values[sel]))) if np.any(sel) else 0.0


def outgoing_decay_check(phi0: Window, a: float, a_prime: float, ladder, N_target: float = 4.0,
                         fit_range=(4.0, 32.0), margin: float = 0.0) -> DecayFitReport:
    """``sup_{|x| >= a' t} |exp(-i t H0) phi0|`` on a ladder with a log-log fit.

    Requires ``hat phi0`` inside ``|xi| < a`` to ``1e-12`` relative mass.  The
    ladder stops (truncated report) once ``a' t`` comes within ``margin`` of the
    grid edge.
    """
    if not a_prime > a:
        raise ValueError("need a' > a")
    tail = spectral_mass_outside(phi0.profile, a)
    if tail >= 1e-12:
        raise ValueError(f"window spectrum leaks {tail:.2e} outside |xi| < {a}")
    g = phi0.grid
    ts, vals = [], []
    truncated, diag = False, ""
    for t in ladder:
        t = float(t)
        if a_prime * t >= g.L - margin:
            truncated, diag = True, f"a' t = {a_prime * t:g} reaches the grid edge"
            break
        ph = free_propagate(phi0.profile, t)
        ts.append(t)
        vals.append(outgoing_sup(ph, a_prime * t))
    ts_a, vals_a = np.array(ts), np.array(vals)
    sel = (ts_a >= fit_range[0]) & (ts_a <= fit_range[1])
    expo, rms = loglog_fit(ts_a[sel], vals_a[sel])
    passed = bool(np.isfinite(expo) and expo <= -N_target)
    return DecayFitReport(ts, vals, expo, rms, passed, -N_target, truncated=truncated, diagnosis=diag,
                          fit_range=tuple(fit_range))


def short_range_remainder_check(f: WaveFunction, V, pair, t: float, x, xi, s_values,
                                fit_range=(2.0, 32.0), target: float = -1.3, dt: float = 0.02,
                                M_per_unit: int = 16) -> DecayFitReport:
    """``|W_{phi(s)}[V_S(s) u(s)](y(s; t), eta(s; t))|`` along outgoing anchors.

    ``u(s) = U(s, 0) f`` by the split-step scheme and ``(y, eta)`` solve the
    mixed problem for ``V_L`` with ``y(0) = x``, ``eta(t) = xi``.  The value at
    each ``s`` is the max over anchors.  Reported: the values, the log-log slope
    over ``fit_range``, and ``sup <s>^(1 + delta_S) value``.
    """
    Vm = as_model(V)
    if Vm.short is None:
        raise ValueError("model has no short-range part")
    phi0 = pair.phi if isinstance(pair, WindowPair) else pair
    s_values = np.asarray(sorted(float(s) for s in s_values))
    M = int(np.ceil(M_per_unit * t))
    s_grid = np.unique(np.concatenate([np.linspace(0.0, t, M + 1), s_values]))
    sol = solve_bvp_picard(t, x, xi, Vm.long, s=s_grid, N_max=60, tol=1e-10)
    g = f.grid
    u = f
    vals = []
    for s in s_values:
        u = full_propagate(u, s - u.t, Vm, dt=dt) if s > u.t else u
        k = int(np.searchsorted(s_grid, s))
        ph = evolve_window(phi0, s)
        vs = u.replace(u.values * Vm.short.value(s, g.points))
        w = forward_wpt_at(vs, ph, sol.Y[k], sol.E[k])
        vals.append(float(np.max(np.abs(w))))
    vals = np.array(vals)
    sel = (s_values >= fit_range[0]) & (s_values <= fit_range[1])
    expo, rms = loglog_fit(s_values[sel], vals[sel])
    sup_w = float(np.max(japanese(s_values[:, None]) ** (1 + Vm.short.delta_s) * vals))
    passed = bool(np.isfinite(expo) and expo <= target)
    return DecayFitReport(list(s_values), list(vals), expo, rms, passed, target, sup_w,
                          fit_range=tuple(fit_range))
