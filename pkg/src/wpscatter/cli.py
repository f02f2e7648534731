"""Command-line harness.

Every subcommand reads one YAML config, validates it, and writes its outputs
under ``<out>/<config hash>/``::

    config.yaml     completed config (defaults filled in)
    reports/        key=value summaries and CSV tables
    snapshots/      wave functions and trajectories as CSV
    cache/          trajectory feet (unless WPSCATTER_CACHE_DIR points elsewhere)

Exit status is 0 iff every invariant asserted by the subcommand holds; a
config that fails validation exits with status 2 and names the field.
"""

from __future__ import annotations

import functools
import os
from pathlib import Path

import click
import numpy as np

from . import _parallel
from . import config as cfgmod
from .errors import ConfigError, CoverageError, PicardDivergenceError, RefinementError
from .scattering import _fmt

CONFIG_ERROR = 2


class Run:
    """Run directory and shared resources of one invocation."""

    def __init__(self, cfg, out, no_cache):
        self.cfg = cfg
        self.hash = cfgmod.config_hash(cfg)
        self.dir = Path(out) / self.hash
        self.reports = self.dir / "reports"
        self.snapshots = self.dir / "snapshots"
        for d in (self.reports, self.snapshots, self.dir / "cache"):
            d.mkdir(parents=True, exist_ok=True)
        (self.dir / "config.yaml").write_text(cfgmod.dump_config(cfg))
        self.cache = None
        if not no_cache:
            from .propagators import CACHE_ENV, FootCache

            self.cache = FootCache(os.environ.get(CACHE_ENV) or self.dir / "cache")

    def write_report(self, name, items: dict, checks: dict) -> bool:
        """Write ``key=value`` lines followed by one line per check and the overall status."""
        ok = all(checks.values())
        lines = [f"{k}={v if isinstance(v, str) else _fmt(v)}" for k, v in items.items()]
        lines += [f"check.{k}={'pass' if v else 'fail'}" for k, v in checks.items()]
        lines.append(f"status={'pass' if ok else 'fail'}")
        (self.reports / f"{name}.txt").write_text("\n".join(lines) + "\n")
        for line in lines:
            click.echo(line)
        return ok


def _common(fn):
    @click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None,
                  help="YAML experiment config (defaults when omitted).")
    @click.option("--threads", type=click.IntRange(min=1), default=None, help="Worker cap for parallel maps.")
    @click.option("--out", type=click.Path(file_okay=False), default="runs", show_default=True,
                  help="Root of the run directories.")
    @click.option("--no-cache", is_flag=True, help="Do not read or write the trajectory cache.")
    @functools.wraps(fn)
    def wrapper(config_path, threads, out, no_cache):
        try:
            cfg = cfgmod.load_config(config_path)
        except ConfigError as e:
            click.echo(f"config error: {e}", err=True)
            raise SystemExit(CONFIG_ERROR)
        if threads is not None:
            _parallel.set_default_threads(threads)
        run = Run(cfg, out, no_cache)
        click.echo(f"run_dir={run.dir}")
        try:
            ok = fn(run)
        except ConfigError as e:
            click.echo(f"config error: {e}", err=True)
            raise SystemExit(CONFIG_ERROR)
        raise SystemExit(0 if ok else 1)

    return wrapper


def _setup(run, with_pair=True):
    cfg = run.cfg
    grid = cfgmod.build_grid(cfg)
    V = cfgmod.build_potential(cfg)
    if not with_pair:
        return grid, V, None, None
    pair = cfgmod.build_pair(cfg, grid, V)
    lattice = cfgmod.build_lattice(cfg, grid, pair)
    return grid, V, pair, lattice


def _random_packets(grid, rng, count, width, kmax):
    from .foundation import WaveFunction, norm

    vals = np.zeros(grid.shape, dtype=complex)
    for _ in range(count):
        x0 = rng.uniform(-grid.L / 4, grid.L / 4, grid.n)
        k0 = rng.uniform(-kmax, kmax, grid.n)
        amp = rng.normal() + 1j * rng.normal()
        z2 = sum((c - x0[j]) ** 2 for j, c in enumerate(grid.coords))
        ph = sum(k0[j] * c for j, c in enumerate(grid.coords))
        vals += amp * np.exp(-z2 / (2 * width**2) + 1j * ph)
    f = WaveFunction(grid, vals)
    return f * (1.0 / norm(f))


@click.group()
def main():
    """Wave packet transform scattering experiments."""


@main.command("wpt-selftest")
@_common
def wpt_selftest(run):
    """Parseval, left inverse, Fourier-side and Gaussian closed-form checks."""
    from .foundation import WaveFunction, inner, norm
    from .wpt import WindowPair, forward_wpt, gaussian_window, inverse_wpt, make_lattice, phase_inner, wpt_via_fourier

    cfg = run.cfg
    tol = cfg["tolerances"]
    st = cfg["selftest"]
    grid, V, pair, lat = _setup(run)
    phi, psi = pair.phi, pair.psi
    rng = np.random.default_rng(cfg["seed"])
    kmax = 0.25 * cfg["lattice"]["Xi"]
    scale = phi.norm() * psi.norm()
    parseval = 0.0
    inv = 0.0
    for _ in range(st["pairs"]):
        f = _random_packets(grid, rng, st["packets"], st["width"], kmax)
        g = _random_packets(grid, rng, st["packets"], st["width"], kmax)
        Wf = forward_wpt(f, phi, lat)
        Wg = forward_wpt(g, psi, lat)
        lhs = phase_inner(Wf, Wg, normalized=True)
        rhs = pair.overlap * inner(f, g)
        parseval = max(parseval, abs(lhs - rhs) / scale)
        rec = inverse_wpt(Wf, psi, phi)
        inv = max(inv, norm(rec - f) / norm(f))
    f = _random_packets(grid, rng, st["packets"], st["width"], kmax)
    Wd = forward_wpt(f, phi, lat).values
    Wq = wpt_via_fourier(f, phi, lat).values
    fourier = float(np.max(np.abs(Wd - Wq)) / np.max(np.abs(Wd)))

    g1 = gaussian_window(grid, 1.0, normalize=False)
    lat1 = make_lattice(grid, cfg["lattice"]["Xi"], cfg["lattice"]["rho"], WindowPair(g1, g1))
    X, K = lat1.node_arrays()
    exact = np.pi ** (grid.n / 2) * np.exp(-np.sum(X**2, -1) / 4 - np.sum(K**2, -1) / 4
                                          - 0.5j * np.sum(X * K, -1))
    gauss = float(np.max(np.abs(forward_wpt(g1.profile, g1, lat1).values - exact)))

    items = {"lattice_shape": "x".join(map(str, lat.shape)), "psi_band": psi.band_limit,
             "overlap_abs": abs(pair.overlap), "pairs": st["pairs"],
             "parseval_max_rel": parseval, "inverse_max_rel": inv,
             "fourier_max_rel": fourier, "gaussian_max_abs": gauss}
    checks = {"parseval": parseval <= tol["parseval"], "inverse": inv <= tol["inverse"],
              "fourier": fourier <= tol["fourier"], "gaussian": gauss <= tol["gaussian"]}
    return run.write_report("wpt_selftest", items, checks)


@main.command()
@_common
def trajectories(run):
    """Newton and mixed-problem trajectories with asymptotic diagnostics."""
    from .trajectories import (asymptotic_diagnostics, check_conjugation, solve_bvp_picard, solve_ivp,
                               threshold_T, write_trajectory_csv)

    cfg = run.cfg
    tol = cfg["tolerances"]
    tc = cfg["trajectories"]
    n = cfg["grid"]["n"]
    V = cfgmod.build_potential(cfg).long
    region = cfgmod.build_region(cfg)
    t, M = float(tc["t"]), int(tc["M"])
    X, K = region.anchors(n)
    items, checks = {"t": t, "M": M, "anchors": len(X)}, {}

    try:
        ivp = solve_ivp(t, X, K, V, M)
        items["ivp_step_doubling"] = ivp.error
        checks["ivp_refinement"] = True
    except RefinementError as e:
        items["ivp_step_doubling"] = e.error
        checks["ivp_refinement"] = False
        ivp = solve_ivp(t, X, K, V, M, tol=None)
    if V.zero:
        exact = X[None] - (t - ivp.s)[:, None, None] * K[None]
        err = float(np.max(np.abs(ivp.X - exact)))
        items["free_exactness"] = err
        checks["free_exactness"] = err <= 1e-12 * (1 + np.max(np.abs(X)) + t * np.max(np.abs(K)))
    if V.autonomous:
        E = ivp.energy(V)
        drift = float(np.max(np.abs(E - E[-1])))
        items["energy_drift"] = drift
        checks["energy"] = drift <= tol["energy"]

    try:
        bvp = solve_bvp_picard(t, X, K, V, M, N_max=int(tol["picard_iterations"]), tol=tol["picard"])
        items["picard_iterations"] = bvp.iterations
        items["picard_residual"] = bvp.residual
        checks["picard"] = True
    except PicardDivergenceError as e:
        items["picard_iterations"] = len(e.history)
        items["picard_residual"] = e.history[-1] if e.history else float("nan")
        checks["picard"] = False
        bvp = None

    xr, kr = region.random_anchors(n, int(tc["anchors"]), seed=cfg["seed"])
    conj = float(np.max(check_conjugation(t, xr, kr, V, M)))
    items["conjugation_max"] = conj
    checks["conjugation"] = conj <= tol["conjugation"]

    rep = asymptotic_diagnostics(region, V, tc["ladder"], n=n)
    items.update({"c": rep.c, "eta_sup": rep.eta_sup, "eta_exponent": rep.eta_exponent,
                  "eta_fit_rms": rep.eta_fit_rms, "y_exponent": rep.y_exponent,
                  "fit_window": f"{rep.fit_window[0]:g}:{rep.fit_window[1]:g}",
                  "threshold_T": threshold_T(region, V, n)})
    checks["c_positive"] = rep.c > 0
    if not V.zero:
        checks["eta_exponent"] = abs(rep.eta_exponent + V.delta) <= 0.1

    with open(run.reports / "trajectories_asymptotics.csv", "w") as fh:
        fh.write("t,c,eta_sup,iterations\n")
        for row in rep.per_t:
            fh.write(f"{_fmt(row['t'])},{_fmt(row['c'])},{_fmt(row['eta_sup'])},{row['iterations']}\n")
    for j in np.linspace(0, len(X) - 1, 3).astype(int):
        write_trajectory_csv(run.snapshots / f"trajectory_{j}.csv", ivp, int(j), bvp)
    return run.write_report("trajectories", items, checks)


@main.command()
@_common
def propagate(run):
    """Snapshots of the free, full and modified evolutions."""
    from .foundation import norm
    from .propagators import free_propagate, full_propagate, modified_propagate, write_snapshot_csv

    cfg = run.cfg
    tol = cfg["tolerances"]
    grid, V, pair, lat = _setup(run)
    f = cfgmod.build_data(cfg, grid)
    items = {"lattice_shape": "x".join(map(str, lat.shape)), "psi_band": pair.psi.band_limit}
    checks = {}
    ok_iso, ok_full, ok_free = True, True, True
    for t in cfg["propagate"]["t"]:
        tag = f"t{t:g}"
        u0 = free_propagate(f, t)
        u1 = full_propagate(f, t, V, dt=cfg["propagate"]["dt"])
        try:
            u2, info = modified_propagate(f, t, pair, V.long, lat, cache=run.cache, return_info=True)
        except CoverageError as e:
            items[f"{tag}.coverage"] = f'"{e}"'
            checks[f"{tag}.coverage"] = False
            continue
        for name, u in (("free", u0), ("full", u1), ("modified", u2)):
            write_snapshot_csv(run.snapshots / f"{name}_{tag}.csv", u)
        r1 = norm(u1) / norm(f)
        r2 = norm(u2) / norm(f)
        items[f"{tag}.full_norm_ratio"] = r1
        items[f"{tag}.modified_norm_ratio"] = r2
        items[f"{tag}.active_nodes"] = info.active
        items[f"{tag}.theta_error"] = info.theta_error
        ok_full &= abs(r1 - 1) <= 1e-10
        ok_iso &= abs(r2 - 1) <= tol["isometry"]
        if V.long.zero:
            d = norm(u2 - u0) / norm(f)
            items[f"{tag}.free_identity"] = d
            ok_free &= d <= tol["free_identity"]
    checks["full_unitary"] = ok_full
    checks["modified_isometry"] = ok_iso
    if V.long.zero:
        checks["free_identity"] = ok_free
    return run.write_report("propagate", items, checks)


@main.command()
@_common
def scattering(run):
    """Cauchy traces of the modified and unmodified wave-operator surrogates."""
    from .scattering import wave_operator_trace

    cfg = run.cfg
    tol = cfg["tolerances"]
    grid, V, pair, lat = _setup(run)
    f = cfgmod.build_data(cfg, grid)
    region = cfgmod.build_region(cfg)
    ladder = cfg["ladder"]["t"]
    kw = dict(region=region, exponent_max=tol["exponent"], cache=run.cache)
    mod = wave_operator_trace(f, V, pair, ladder, lat, comparison="modified", **kw)
    free = wave_operator_trace(f, V, pair, ladder, lat, comparison="free", **kw)
    mod.write_csv(run.reports / "scattering_modified.csv")
    free.write_csv(run.reports / "scattering_free.csv")
    items = {"lattice_shape": "x".join(map(str, lat.shape)), "psi_band": pair.psi.band_limit,
             "modified": mod.summary(), "free": free.summary()}
    checks = {"modified_convergent": mod.convergent,
              "norms": all(abs(r - 1) <= tol["w_norm"] for r in mod.norms)}
    if not V.long.zero:
        checks["free_comparison_fails"] = not free.convergent
    return run.write_report("scattering", items, checks)


@main.command()
@_common
def decay(run):
    """Outgoing-region decay of a free window and the short-range remainder."""
    from .foundation import make_grid
    from .scattering import band_limited_data, outgoing_decay_check, short_range_remainder_check
    from .wpt import band_limited_window, gaussian_window

    cfg = run.cfg
    dc = cfg["decay"]
    g = dc["grid"]
    grid = make_grid(g["n"], g["L"], g["N"])
    phi0 = band_limited_window(grid, float(dc["a"]))
    out = outgoing_decay_check(phi0, float(dc["a"]), float(dc["a_prime"]), dc["ladder"], float(dc["N_target"]))
    out.write_csv(run.reports / "decay_outgoing.csv")
    items = {"outgoing": out.summary()}
    checks = {"outgoing": out.passed}
    V = cfgmod.build_potential(cfg)
    if V.short is None:
        items["remainder"] = "skipped"
    else:
        rc = dc["remainder"]
        rg = make_grid(1, rc["L"], rc["N"])
        d = cfg["data"]
        f = band_limited_data(rg, float(d["a"]), float(d["R"]))
        win = gaussian_window(rg, float(rc["sigma"]))
        xi = float(rc["xi"])
        rem = short_range_remainder_check(f, V, win, float(rc["t"]), [[0.0], [0.0]], [[xi], [-xi]],
                                          rc["s"], target=float(rc["target"]))
        rem.write_csv(run.reports / "decay_remainder.csv")
        items["remainder"] = rem.summary()
        checks["remainder"] = rem.passed
    return run.write_report("decay", items, checks)


if __name__ == "__main__":
    main()
