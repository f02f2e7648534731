"""Classical trajectories under a long-range potential.

Two problems are solved for batches of anchors ``(t, x, xi)``:

* the terminal-value Newton system ``x' = xi, xi' = -grad V(s, x)`` with
  ``x(t) = x, xi(t) = xi``, integrated backward from ``s = t`` by RK4;
* the mixed problem ``y' = eta, eta' = -grad V(s, y)`` with ``y(0) = x`` and
  ``eta(t) = xi``, solved by Picard iteration of

      y(s) = x + s xi + int_0^t min(tau, s) grad V(tau, y(tau)) d tau.

Anchors have shape ``(P, n)``; samples have shape ``(M + 1, P, n)`` with
index ``k`` at ``s_k = k t / M``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import PicardDivergenceError, RefinementError
from .potentials import japanese, long_part


def _anchors(x, xi):
    """Anchors as ``(P, n)`` arrays; scalars and 1-d vectors are single anchors."""
    x = np.asarray(x, dtype=float)
    xi = np.asarray(xi, dtype=float)
    x = x.reshape(1, -1) if x.ndim < 2 else x
    xi = xi.reshape(1, -1) if xi.ndim < 2 else xi
    x, xi = np.broadcast_arrays(x, xi)
    return np.array(x), np.array(xi)


@dataclass
class TrajectoryBundle:
    """Backward Newton trajectories for a batch of anchors."""

    t: float
    x: np.ndarray
    xi: np.ndarray
    s: np.ndarray
    X: np.ndarray
    K: np.ndarray
    p: np.ndarray
    error: float = 0.0

    @property
    def M(self) -> int:
        return len(self.s) - 1

    @property
    def foot(self) -> np.ndarray:
        return self.X[0]

    @property
    def foot_xi(self) -> np.ndarray:
        return self.K[0]

    def energy(self, V) -> np.ndarray:
        V = long_part(V)
        return 0.5 * np.sum(self.K**2, axis=-1) + V.value(self.t, self.X)


@dataclass
class ModifiedTrajectory:
    """Solution of the mixed boundary problem by Picard iteration."""

    t: float
    x: np.ndarray
    xi: np.ndarray
    s: np.ndarray
    Y: np.ndarray
    E: np.ndarray
    iterations: int
    residual: float
    history: list = field(default_factory=list)
    min_ratio: float = np.inf


@dataclass(frozen=True)
class PhaseSpaceRegion:
    """``Gamma_{a,R} = {a < |xi| < R, |x| < R}``."""

    a: float
    R: float

    def __post_init__(self):
        if not 0 < self.a < self.R:
            raise ValueError(f"region needs 0 < a < R, got a={self.a}, R={self.R}")

    def anchors(self, n: int, kx: int = 9, kxi: int = 7, n_dir: int = 8):
        """Deterministic anchors on and inside the closure of the region."""
        xs = np.linspace(-self.R, self.R, kx)
        sp = np.linspace(self.a, self.R, kxi)
        if n == 1:
            ks = np.concatenate([-sp[::-1], sp])
            X, K = np.meshgrid(xs, ks, indexing="ij")
            return X.reshape(-1, 1), K.reshape(-1, 1)
        th = np.linspace(0, 2 * np.pi, n_dir, endpoint=False)
        r = np.linspace(0, self.R, (kx + 1) // 2)
        xp = np.concatenate([[[0.0, 0.0]], np.stack([np.outer(r[1:], np.cos(th)).ravel(),
                                                     np.outer(r[1:], np.sin(th)).ravel()], -1)])
        kp = np.stack([np.outer(sp, np.cos(th)).ravel(), np.outer(sp, np.sin(th)).ravel()], -1)
        X = np.repeat(xp, len(kp), axis=0)
        K = np.tile(kp, (len(xp), 1))
        return X, K

    def random_anchors(self, n: int, count: int, seed: int = 0):
        rng = np.random.default_rng(seed)
        if n == 1:
            x = rng.uniform(-self.R, self.R, (count, 1))
            k = rng.uniform(self.a, self.R, (count, 1)) * rng.choice([-1.0, 1.0], (count, 1))
            return x, k
        r = self.R * np.sqrt(rng.uniform(0, 1, count))
        th = rng.uniform(0, 2 * np.pi, count)
        x = np.stack([r * np.cos(th), r * np.sin(th)], -1)
        sp = rng.uniform(self.a, self.R, count)
        ph = rng.uniform(0, 2 * np.pi, count)
        return x, np.stack([sp * np.cos(ph), sp * np.sin(ph)], -1)


# --------------------------------------------------------------------------- IVP


def _rk4_backward(t, x, xi, V, M, keep=True):
    """RK4 from s = t down to s = 0; returns samples in increasing-s order."""
    h = -t / M
    X = np.array(x, dtype=float)
    K = np.array(xi, dtype=float)
    zero = V.zero
    if keep:
        Xs = np.empty((M + 1,) + X.shape)
        Ks = np.empty((M + 1,) + K.shape)
        Xs[M], Ks[M] = X, K
    s = t
    for k in range(M, 0, -1):
        if zero:
            X = X + h * K
        else:
            g1 = V.grad(s, X)
            g2 = V.grad(s + h / 2, X + h / 2 * K)
            K2 = K - h / 2 * g1
            g3 = V.grad(s + h / 2, X + h / 2 * K2)
            K3 = K - h / 2 * g2
            g4 = V.grad(s + h, X + h * K3)
            K4 = K - h * g3
            X = X + h / 6 * (K + 2 * K2 + 2 * K3 + K4)
            K = K - h / 6 * (g1 + 2 * g2 + 2 * g3 + g4)
        s = t + (M - k + 1) * h
        if keep:
            Xs[k - 1], Ks[k - 1] = X, K
    if keep:
        return Xs, Ks
    return X, K


def solve_ivp(t: float, x, xi, V, M: int = 1024, tol: Optional[float] = 1e-8) -> TrajectoryBundle:
    """Integrate the Newton system backward from the anchor ``(t, x, xi)``.

    With ``tol`` set, the run is repeated with ``2 M`` steps and the maximal
    discrepancy (scaled by 16/15, the RK4 Richardson factor) must not exceed
    ``tol * (1 + max|x|)``.
    """
    V = long_part(V)
    if t < 0:
        raise ValueError("t must be non-negative")
    if M < 64:
        raise ValueError("M must be at least 64")
    x, xi = _anchors(x, xi)
    s = np.linspace(0.0, t, M + 1)
    if t == 0:
        X = np.broadcast_to(x, (M + 1,) + x.shape).copy()
        K = np.broadcast_to(xi, (M + 1,) + xi.shape).copy()
        return TrajectoryBundle(t, x, xi, s, X, K, V.phase_density(s[:, None], X, K))
    X, K = _rk4_backward(t, x, xi, V, M)
    err = 0.0
    if tol is not None and not V.zero:
        X2, K2 = _rk4_backward(t, x, xi, V, 2 * M)
        err = 16.0 / 15.0 * max(np.max(np.abs(X2[::2] - X)), np.max(np.abs(K2[::2] - K)))
        scale = 1.0 + np.max(np.abs(X))
        if err > tol * scale:
            raise RefinementError(f"step-doubling discrepancy {err:.3e} exceeds {tol * scale:.3e}", err)
    p = V.phase_density(s[:, None], X, K)
    return TrajectoryBundle(t, x, xi, s, X, K, p, err)


def simpson_weights(M: int, h: float) -> np.ndarray:
    if M % 2:
        raise ValueError("composite Simpson needs an even number of intervals")
    w = np.ones(M + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w * h / 3.0


def feet_and_phase(t: float, x, xi, V, M: int):
    """Trajectory feet ``x(0; t, x, xi)``, ``xi(0; ...)`` and the phase integral.

    Memory-light variant of :func:`solve_ivp` for large batches: the phase
    density is accumulated on the fly with Simpson weights on the ``M`` grid and
    on the ``M / 2`` subgrid; their difference over 15 estimates the error.
    """
    V = long_part(V)
    x, xi = np.asarray(x, dtype=float), np.asarray(xi, dtype=float)
    if t == 0:
        return x.copy(), xi.copy(), np.zeros(len(x)), np.zeros(len(x))
    if V.zero:
        th = 0.5 * t * np.sum(xi**2, axis=-1)
        return x - t * xi, xi.copy(), th, np.zeros(len(x))
    if M % 4:
        M += 4 - M % 4
    h = -t / M
    w = simpson_weights(M, t / M)
    w2 = np.zeros(M + 1)
    w2[::2] = simpson_weights(M // 2, 2 * t / M)
    X = np.array(x)
    K = np.array(xi)
    p = V.phase_density(t, X, K)
    th = w[M] * p
    th2 = w2[M] * p
    s = t
    for k in range(M, 0, -1):
        g1 = V.grad(s, X)
        g2 = V.grad(s + h / 2, X + h / 2 * K)
        K2 = K - h / 2 * g1
        g3 = V.grad(s + h / 2, X + h / 2 * K2)
        K3 = K - h / 2 * g2
        g4 = V.grad(s + h, X + h * K3)
        K4 = K - h * g3
        X = X + h / 6 * (K + 2 * K2 + 2 * K3 + K4)
        K = K - h / 6 * (g1 + 2 * g2 + 2 * g3 + g4)
        s = t + (M - k + 1) * h
        p = V.phase_density(s, X, K)
        th = th + w[k - 1] * p
        if w2[k - 1]:
            th2 = th2 + w2[k - 1] * p
    return X, K, th, np.abs(th - th2) / 15.0


# --------------------------------------------------------------------------- BVP


def _cumtrapz(f, s):
    """Cumulative trapezoid along axis 0, starting at 0."""
    ds = np.diff(s).reshape((-1,) + (1,) * (f.ndim - 1))
    out = np.zeros_like(f)
    out[1:] = np.cumsum(0.5 * ds * (f[1:] + f[:-1]), axis=0)
    return out


def picard_map(Y, x, xi, s, V):
    """One application of the integral map; returns ``(p_new, eta)``."""
    g = V.grad(s[:, None], Y)
    A = _cumtrapz(s[:, None, None] * g, s)
    B = _cumtrapz(g, s)
    tail = B[-1][None] - B
    Ynew = x[None] + s[:, None, None] * xi[None] + A + s[:, None, None] * tail
    E = xi[None] + tail
    return Ynew, E


def solve_bvp_picard(t: float, x, xi, V, M: int = 4096, N_max: int = 30, tol: float = 1e-10,
                     s=None) -> ModifiedTrajectory:
    """Picard iteration for the mixed problem, starting from ``p_0 = x + s xi``.

    ``s`` may be any increasing grid on ``[0, t]`` (default uniform with
    ``M`` intervals); the integrals use the composite trapezoid rule on it
    with the ``min(tau, s)`` kernel split exactly at ``tau = s``.
    """
    V = long_part(V)
    x, xi = _anchors(x, xi)
    s = np.linspace(0.0, t, M + 1) if s is None else np.asarray(s, dtype=float)
    js = japanese(s[:, None])[:, None]
    Y = x[None] + s[:, None, None] * xi[None]
    E = np.broadcast_to(xi[None], Y.shape).copy()
    history = []
    min_ratio = float(np.min(japanese(Y) / js))
    if V.zero:
        return ModifiedTrajectory(t, x, xi, s, Y, E, 0, 0.0, history, min_ratio)
    for it in range(1, N_max + 1):
        Ynew, E = picard_map(Y, x, xi, s, V)
        res = float(np.max(np.abs(Ynew - Y)))
        history.append(res)
        Y = Ynew
        min_ratio = min(min_ratio, float(np.min(japanese(Y) / js)))
        if not np.isfinite(res):
            break
        if res < tol:
            return ModifiedTrajectory(t, x, xi, s, Y, E, it, res, history, min_ratio)
    raise PicardDivergenceError(f"Picard iteration did not reach {tol:g} in {N_max} steps", history)


def check_conjugation(t: float, x, xi, V, M: int = 4096, tol_ivp: Optional[float] = None,
                      tol_bvp: float = 1e-13, N_max: int = 200, extrapolate: bool = True) -> np.ndarray:
    """Per-anchor ``sup_s |y - x(s)| + sup_s |eta - xi(s)|``, with ``y`` started at the foot.

    The mixed problem uses the trapezoid rule, whose error is ``O(M^-2)``.  With
    ``extrapolate`` the solutions on ``M`` and ``M / 2`` intervals are combined
    by Richardson extrapolation, ``(4 y_M - y_{M/2}) / 3``, which brings the
    boundary-problem error to the ``O(M^-4)`` level of the RK4 side.
    """
    V = long_part(V)
    ivp = solve_ivp(t, x, xi, V, M, tol_ivp)
    bvp = solve_bvp_picard(t, ivp.foot, ivp.xi, V, M, N_max, tol_bvp)
    Y, E = bvp.Y, bvp.E
    if extrapolate and not V.zero:
        if M % 2:
            raise ValueError("extrapolation needs an even M")
        coarse = solve_bvp_picard(t, ivp.foot, ivp.xi, V, M // 2, N_max, tol_bvp)
        Y = Y.copy()
        E = E.copy()
        Y[::2] = (4.0 * Y[::2] - coarse.Y) / 3.0
        E[::2] = (4.0 * E[::2] - coarse.E) / 3.0
        Y, E = Y[::2], E[::2]
        X, K = ivp.X[::2], ivp.K[::2]
    else:
        X, K = ivp.X, ivp.K
    dy = np.max(np.linalg.norm(Y - X, axis=-1), axis=0)
    de = np.max(np.linalg.norm(E - K, axis=-1), axis=0)
    return dy + de


def foot_jacobian(t: float, x, xi, V, M: int = 1024, h: float = 1e-4) -> np.ndarray:
    """Centred-difference Jacobian of ``(x, xi) -> (x(0;t), xi(0;t))``; shape ``(P, 2n, 2n)``."""
    V = long_part(V)
    x, xi = _anchors(x, xi)
    n = x.shape[1]
    z = np.concatenate([x, xi], axis=1)
    J = np.empty((len(z), 2 * n, 2 * n))
    for j in range(2 * n):
        dz = np.zeros(2 * n)
        dz[j] = h
        zp, zm = z + dz, z - dz
        Xp, Kp = _rk4_backward(t, zp[:, :n], zp[:, n:], V, M, keep=False)
        Xm, Km = _rk4_backward(t, zm[:, :n], zm[:, n:], V, M, keep=False)
        J[:, :, j] = np.concatenate([Xp - Xm, Kp - Km], axis=1) / (2 * h)
    return J


# --------------------------------------------------------------------------- diagnostics


def free_ratio_inf(region: PhaseSpaceRegion, n: int = 1, s_max: float = 1e6) -> float:
    """``inf <x + s xi> / <s>`` over region anchors and a log-spaced ``s`` set."""
    X, K = region.anchors(n)
    s = np.concatenate([[0.0], np.logspace(-3, np.log10(s_max), 3000)])
    best = np.inf
    for j in range(len(X)):
        y = X[j][None] + s[:, None] * K[j][None]
        best = min(best, float(np.min(japanese(y) / japanese(s[:, None]))))
    return best


class UnboundedThresholdError(ValueError):
    pass


def threshold_T(region, V, n: int = 1, max_power: int = 40) -> float:
    """Smallest dyadic ``T = 2^k`` (``k >= 0``) with ``C_1 <T>^(-delta) < c_0``.

    ``region`` is a :class:`PhaseSpaceRegion` or an ``(a, R)`` pair; ``c_0`` is
    0.99 of the measured ``inf <x + s xi> / <s>``.
    """
    V = long_part(V)
    if not isinstance(region, PhaseSpaceRegion):
        a, R = region
        if a <= 0:
            raise UnboundedThresholdError("region touches {xi = 0}: c_0 = 0, no finite threshold")
        region = PhaseSpaceRegion(a, R)
    c0 = 0.99 * free_ratio_inf(region, n)
    if c0 <= 0:
        raise UnboundedThresholdError("c_0 = 0, no finite threshold")
    C1 = V.constants.get(1, 0.0)
    for k in range(max_power + 1):
        T = 2.0**k
        if C1 * (1 + T * T) ** (-V.delta / 2) < c0:
            return T
    raise UnboundedThresholdError(f"no dyadic T below 2^{max_power}")


def loglog_fit(s, y):
    """Least-squares slope and intercept of ``log y`` against ``log s``; returns ``(slope, rms)``."""
    s = np.asarray(s, dtype=float)
    y = np.asarray(y, dtype=float)
    ok = (s > 0) & (y > 0) & np.isfinite(y)
    if ok.sum() < 2:
        return float("nan"), float("nan")
    A = np.stack([np.log(s[ok]), np.ones(ok.sum())], axis=-1)
    coef, *_ = np.linalg.lstsq(A, np.log(y[ok]), rcond=None)
    res = np.log(y[ok]) - A @ coef
    return float(coef[0]), float(np.sqrt(np.mean(res**2)))


def diagnostic_grid(t: float, h0: float = 0.02, per_octave: int = 256) -> np.ndarray:
    """Uniform grid on ``[0, 1]`` joined to a geometric grid on ``[1, t]``."""
    head = np.linspace(0.0, 1.0, int(round(1.0 / h0)) + 1)
    if t <= 1:
        return np.linspace(0.0, t, int(round(t / h0)) + 2)
    tail = np.geomspace(1.0, t, int(np.ceil(np.log2(t) * per_octave)) + 1)
    return np.concatenate([head, tail[1:]])


@dataclass
class AsymptoticsReport:
    a: float
    R: float
    ladder: list
    c: float
    eta_sup: float
    eta_exponent: float
    eta_fit_rms: float
    y_exponent: float
    y_fit_rms: float
    per_t: list = field(default_factory=list)
    fit_window: tuple = ()


def asymptotic_diagnostics(region: PhaseSpaceRegion, V, ladder, n: int = 1, s_lo: float = 16.0,
                           tail_ratio: float = 64.0, anchors=None, tol: float = 1e-10) -> AsymptoticsReport:
    """Empirical asymptotics of the mixed-problem trajectories on a region.

    For each ``t`` on the ladder the mixed problem is solved on a graded
    ``s``-grid for deterministic region anchors.  Reported:

    * ``c = inf <p_N(s)> / <s>`` over anchors, ``s``, ladder and every Picard
      iterate (so each accepted iterate respects it);
    * ``eta_sup = sup <s>^delta |eta(s) - xi|``;
    * log-log exponents of the anchor-median ``|eta(s) - xi|`` and of
      ``|y(s) - (x + s xi)| / <s>``, fitted on ``s in [s_lo, t_max / tail_ratio]``
      for the largest ``t``.  Near ``s = t`` the deviation is pinned to zero by
      ``eta(t) = xi``; the window stays clear of that end.
    """
    V = long_part(V)
    if anchors is None:
        X, K = region.anchors(n)
    else:
        X, K = anchors
    ladder = [float(t) for t in ladder]
    c = np.inf
    eta_sup = 0.0
    per_t = []
    last = None
    for t in ladder:
        s = diagnostic_grid(t)
        sol = solve_bvp_picard(t, X, K, V, s=s, N_max=60, tol=tol)
        js = japanese(s[:, None])[:, None]
        ct = sol.min_ratio
        de = np.linalg.norm(sol.E - K[None], axis=-1)
        es = float(np.max(js ** V.delta * de))
        c = min(c, ct)
        eta_sup = max(eta_sup, es)
        per_t.append({"t": t, "c": ct, "eta_sup": es, "iterations": sol.iterations})
        last = (s, sol)
    s, sol = last
    t = ladder[-1]
    hi = t / tail_ratio
    sel = (s >= s_lo) & (s <= hi)
    de = np.median(np.linalg.norm(sol.E - K[None], axis=-1), axis=1)
    dy = np.median(np.linalg.norm(sol.Y - X[None] - s[:, None, None] * K[None], axis=-1), axis=1)
    dy = dy / japanese(s[:, None])
    e_exp, e_rms = loglog_fit(s[sel], de[sel])
    y_exp, y_rms = loglog_fit(s[sel], dy[sel])
    return AsymptoticsReport(region.a, region.R, ladder, float(c), eta_sup, e_exp, e_rms, y_exp, y_rms,
                             per_t, (s_lo, hi))


# --------------------------------------------------------------------------- I/O


def write_trajectory_csv(path, bundle: TrajectoryBundle, anchor: int = 0,
                         modified: Optional[ModifiedTrajectory] = None) -> None:
    """Columns ``s, x1.., xi1.. [, y1.., eta1..]`` for one anchor."""
    n = bundle.x.shape[1]
    head = ["s"] + [f"x{j + 1}" for j in range(n)] + [f"xi{j + 1}" for j in range(n)]
    if modified is not None:
        if len(modified.s) != len(bundle.s):
            raise ValueError("trajectory grids differ")
        head += [f"y{j + 1}" for j in range(n)] + [f"eta{j + 1}" for j in range(n)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(head)
        for k, sk in enumerate(bundle.s):
            row = [sk, *bundle.X[k, anchor], *bundle.K[k, anchor]]
            if modified is not None:
                row += [*modified.Y[k, anchor], *modified.E[k, anchor]]
            w.writerow([repr(float(v)) for v in row])
