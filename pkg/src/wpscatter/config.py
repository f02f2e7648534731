"""Experiment configuration: YAML file, defaults, validation, and object builders.

Every block is checked against the preconditions of the code that consumes
it before anything runs; failures raise :class:`ConfigError` naming the
offending field as ``block.key``.
"""

from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path

import numpy as np
import yaml

from .errors import ConfigError, DegeneratePairError, GridError

DEFAULTS = {
    "seed": 0,
    "grid": {"n": 1, "L": 600.0, "N": 4096},
    "lattice": {"Xi": 8.0, "rho": 4.0, "xi_spacing": None},
    "potential": {
        "long": {"family": "coulomb_like", "c": 0.1, "delta": 0.5, "modulation": None},
        "short": None,
    },
    "data": {"a": 1.0, "R": 4.0, "center": 0.0, "direction": None},
    "windows": {
        "phi": {"family": "gaussian", "sigma": 2.0},
        "psi": {"family": "band_limited", "band": "auto"},
    },
    "ladder": {"t": [4.0, 8.0, 16.0, 32.0, 64.0]},
    "cutoff": {"d": None, "width": None, "sharp": False},
    "selftest": {"pairs": 8, "packets": 3, "width": 2.0},
    "propagate": {"t": [1.0, 4.0, 16.0], "dt": 0.02},
    "trajectories": {"t": 32.0, "anchors": 100, "M": 4096, "ladder": [64.0, 1024.0, 16384.0]},
    "decay": {
        "a": 1.0, "a_prime": 1.5, "ladder": [0.0, 4.0, 8.0, 16.0, 32.0], "N_target": 4.0,
        "grid": {"n": 1, "L": 200.0, "N": 1024},
        "remainder": {"L": 256.0, "N": 2048, "sigma": 4.0, "t": 32.0, "xi": 2.5,
                      "s": [2.0, 2.83, 4.0, 5.66, 8.0, 11.3, 16.0, 22.6, 32.0], "target": -1.3},
    },
    "tolerances": {
        "parseval": 1e-8, "inverse": 1e-6, "fourier": 1e-8, "gaussian": 1e-8,
        "energy": 1e-8, "conjugation": 1e-7, "picard": 1e-10, "picard_iterations": 30,
        "free_identity": 1e-5, "isometry": 0.05, "exponent": -0.2, "w_norm": 0.1,
    },
}

_FAMILIES_LONG = ("zero", "coulomb_like")
_MODULATIONS = (None, "sin")


def _merge(base, over, path=""):
    """Overlay ``over`` on ``base``, rejecting unknown keys."""
    if over is None:
        return copy.deepcopy(base)
    if not isinstance(over, dict):
        raise ConfigError(path.rstrip(".") or "config", "expected a mapping")
    out = copy.deepcopy(base)
    for k, v in over.items():
        key = f"{path}{k}"
        if k not in base:
            raise ConfigError(key, "unknown key")
        if isinstance(base[k], dict) and v is not None:
            out[k] = _merge(base[k], v, key + ".")
        elif base[k] is None and isinstance(v, dict) and key == "potential.short":
            out[k] = dict(v)
        else:
            out[k] = v
    return out


def _num(cfg, path, positive=False, integer=False, allow_none=False):
    cur = cfg
    for part in path.split("."):
        cur = cur[part]
    if cur is None and allow_none:
        return None
    if isinstance(cur, bool) or not isinstance(cur, (int, float)):
        raise ConfigError(path, f"expected a number, got {cur!r}")
    if integer and int(cur) != cur:
        raise ConfigError(path, f"expected an integer, got {cur!r}")
    if positive and not cur > 0:
        raise ConfigError(path, f"must be positive, got {cur!r}")
    return int(cur) if integer else float(cur)


def _ladder(cfg, path, strictly=True, allow_zero=False):
    cur = cfg
    for part in path.split("."):
        cur = cur[part]
    if not isinstance(cur, list) or not cur:
        raise ConfigError(path, "expected a non-empty list of times")
    vals = []
    for v in cur:
        if isinstance(v, bool) or not isinstance(v, (int, float)) or v < 0 or (v == 0 and not allow_zero):
            raise ConfigError(path, f"invalid time {v!r}")
        vals.append(float(v))
    if strictly and any(b <= a for a, b in zip(vals, vals[1:])):
        raise ConfigError(path, "times must be strictly increasing")
    return vals


def _check_grid(block, path):
    n = block.get("n")
    N = block.get("N")
    L = block.get("L")
    if n not in (1, 2):
        raise ConfigError(f"{path}.n", f"dimension must be 1 or 2, got {n!r}")
    if isinstance(N, bool) or not isinstance(N, int) or N < 16 or N & (N - 1):
        raise ConfigError(f"{path}.N", f"must be a power of two >= 16, got {N!r}")
    if isinstance(L, bool) or not isinstance(L, (int, float)) or not L > 0:
        raise ConfigError(f"{path}.L", f"must be positive, got {L!r}")


def validate(cfg: dict) -> dict:
    """Fill defaults and check every block; returns the completed config."""
    cfg = _merge(DEFAULTS, cfg)
    if isinstance(cfg["seed"], bool) or not isinstance(cfg["seed"], int):
        raise ConfigError("seed", f"expected an integer, got {cfg['seed']!r}")
    _check_grid(cfg["grid"], "grid")
    g = cfg["grid"]
    kmax = np.pi * g["N"] / (2.0 * g["L"])
    Xi = _num(cfg, "lattice.Xi", positive=True)
    if Xi >= kmax:
        raise ConfigError("lattice.Xi", f"must be below the grid band {kmax:.4g}")
    rho = _num(cfg, "lattice.rho", positive=True)
    if rho < 4:
        raise ConfigError("lattice.rho", f"oversampling must be >= 4, got {rho}")
    _num(cfg, "lattice.xi_spacing", positive=True, allow_none=True)

    lp = cfg["potential"]["long"]
    if lp["family"] not in _FAMILIES_LONG:
        raise ConfigError("potential.long.family", f"unknown family {lp['family']!r}; use one of {_FAMILIES_LONG}")
    if lp["family"] == "coulomb_like":
        _num(cfg, "potential.long.c")
        d = _num(cfg, "potential.long.delta")
        if not 0 < d <= 1:
            raise ConfigError("potential.long.delta", f"must lie in (0, 1], got {d}")
    if lp.get("modulation") not in _MODULATIONS:
        raise ConfigError("potential.long.modulation", f"unknown profile {lp['modulation']!r}")
    sp = cfg["potential"]["short"]
    if sp is not None:
        for k in sp:
            if k not in ("c", "delta_s"):
                raise ConfigError(f"potential.short.{k}", "unknown key")
        _num(cfg, "potential.short.c")
        if _num(cfg, "potential.short.delta_s") <= 0:
            raise ConfigError("potential.short.delta_s", "must be positive")

    a = _num(cfg, "data.a", positive=True)
    R = _num(cfg, "data.R", positive=True)
    if not a < R:
        raise ConfigError("data.R", f"annulus needs a < R, got a={a}, R={R}")
    if R >= 0.9 * kmax:
        raise ConfigError("data.R", f"annulus exceeds the grid band {0.9 * kmax:.4g}")

    n = g["n"]
    for key in ("center", "direction"):
        v = cfg["data"][key]
        if v is None and key == "direction":
            continue
        arr = np.atleast_1d(np.asarray(v, dtype=object))
        if arr.size not in (1, n) or not all(isinstance(c, (int, float)) and not isinstance(c, bool) for c in arr):
            raise ConfigError(f"data.{key}", f"expected a number or a list of {n} numbers, got {v!r}")
    if n == 1 and cfg["data"]["direction"] is not None and cfg["data"]["direction"] == 0:
        raise ConfigError("data.direction", "must be nonzero")

    phi = cfg["windows"]["phi"]
    if phi.get("family") != "gaussian":
        raise ConfigError("windows.phi.family", "analysis window must be 'gaussian' (closed-form evaluation)")
    _num(cfg, "windows.phi.sigma", positive=True)
    psi = cfg["windows"]["psi"]
    if psi.get("family") not in ("gaussian", "band_limited"):
        raise ConfigError("windows.psi.family", f"unknown family {psi.get('family')!r}")
    if psi["family"] == "gaussian":
        _num(cfg, "windows.psi.sigma", positive=True)
    elif psi.get("band") != "auto":
        b = _num(cfg, "windows.psi.band", positive=True)
        if b >= kmax:
            raise ConfigError("windows.psi.band", "exceeds the grid band")

    _ladder(cfg, "ladder.t")
    d = cfg["cutoff"]["d"]
    if d is not None:
        d = _num(cfg, "cutoff.d", positive=True)
        w = _num(cfg, "cutoff.width", allow_none=True)
        if w is not None and not 0 <= w <= d / 4:
            raise ConfigError("cutoff.width", f"must lie in [0, d/4], got {w}")
    _ladder(cfg, "propagate.t")
    _num(cfg, "propagate.dt", positive=True)
    for k in ("pairs", "packets"):
        _num(cfg, f"selftest.{k}", positive=True, integer=True)
    _num(cfg, "selftest.width", positive=True)
    _num(cfg, "trajectories.t", positive=True)
    _num(cfg, "trajectories.anchors", positive=True, integer=True)
    M = _num(cfg, "trajectories.M", positive=True, integer=True)
    if M < 64 or M % 2:
        raise ConfigError("trajectories.M", f"must be an even count >= 64, got {M}")
    _ladder(cfg, "trajectories.ladder")
    _check_grid(cfg["decay"]["grid"], "decay.grid")
    if _num(cfg, "decay.a_prime", positive=True) <= _num(cfg, "decay.a", positive=True):
        raise ConfigError("decay.a_prime", "must exceed decay.a")
    _ladder(cfg, "decay.ladder", allow_zero=True)
    _num(cfg, "decay.N_target", positive=True)
    rem = cfg["decay"]["remainder"]
    _check_grid({"n": 1, "L": rem["L"], "N": rem["N"]}, "decay.remainder")
    _ladder(cfg, "decay.remainder.s")
    for k in DEFAULTS["tolerances"]:
        _num(cfg, f"tolerances.{k}", positive=k != "exponent")
    return cfg


def load_config(path=None) -> dict:
    """Read and validate a YAML config; ``None`` gives the defaults."""
    if path is None:
        return validate({})
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as e:
        raise ConfigError("config", f"not valid YAML: {e}") from None
    except OSError as e:
        raise ConfigError("config", str(e)) from None
    return validate(raw or {})


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()[:16]


def dump_config(cfg: dict) -> str:
    return yaml.safe_dump(cfg, sort_keys=True, default_flow_style=False)


# --------------------------------------------------------------------------- builders


def build_grid(cfg):
    from .foundation import make_grid

    g = cfg["grid"]
    try:
        return make_grid(g["n"], g["L"], g["N"])
    except GridError as e:
        raise ConfigError("grid", str(e)) from None


def build_potential(cfg):
    from .potentials import PotentialModel, make_coulomb_like, make_short_range, make_time_modulated, make_zero_potential

    lp = cfg["potential"]["long"]
    V = make_zero_potential() if lp["family"] == "zero" else make_coulomb_like(lp["c"], lp["delta"])
    if lp.get("modulation") == "sin":
        V = make_time_modulated(V, lambda t: (2.0 + np.sin(t)) / 3.0, "sin")
    sp = cfg["potential"]["short"]
    S = None if sp is None else make_short_range(sp["c"], sp["delta_s"])
    return PotentialModel(V, S)


def build_region(cfg):
    from .trajectories import PhaseSpaceRegion

    return PhaseSpaceRegion(float(cfg["data"]["a"]), float(cfg["data"]["R"]))


def psi_band(cfg, V) -> float:
    """Synthesis band: explicit, or half the measured trajectory constant."""
    band = cfg["windows"]["psi"].get("band")
    if band != "auto":
        return float(band)
    from .trajectories import asymptotic_diagnostics

    rep = asymptotic_diagnostics(build_region(cfg), V.long, [max(cfg["ladder"]["t"])], n=cfg["grid"]["n"])
    return 0.5 * rep.c


def build_pair(cfg, grid, V):
    from .wpt import WindowPair, band_limited_window, gaussian_window

    phi = gaussian_window(grid, float(cfg["windows"]["phi"]["sigma"]))
    ps = cfg["windows"]["psi"]
    if ps["family"] == "gaussian":
        psi = gaussian_window(grid, float(ps["sigma"]))
    else:
        psi = band_limited_window(grid, psi_band(cfg, V))
    try:
        return WindowPair(phi, psi)
    except DegeneratePairError as e:
        raise ConfigError("windows", str(e)) from None


def build_lattice(cfg, grid, pair):
    from .wpt import make_lattice

    lc = cfg["lattice"]
    return make_lattice(grid, float(lc["Xi"]), float(lc["rho"]), pair, xi_spacing=lc.get("xi_spacing"))


def build_data(cfg, grid):
    from .scattering import CutoffSpec, band_limited_data, low_energy_cutoff

    d = cfg["data"]
    f = band_limited_data(grid, float(d["a"]), float(d["R"]), d["center"], d["direction"])
    c = cfg["cutoff"]
    if c["d"] is not None:
        f = low_energy_cutoff(f, CutoffSpec(float(c["d"]), c["width"]), sharp=bool(c["sharp"]))
    return f
