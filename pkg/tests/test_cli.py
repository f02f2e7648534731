from pathlib import Path

import pytest
import yaml
from click.testing import CliRunner

from wpscatter.cli import main
from wpscatter.config import DEFAULTS, ConfigError, config_hash, load_config, validate

SMALL = Path(__file__).resolve().parents[1] / "configs" / "small.yaml"


def _write(tmp_path, cfg, name="c.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(cfg))
    return str(p)


def _small(**over):
    cfg = yaml.safe_load(SMALL.read_text())
    for k, v in over.items():
        node = cfg
        *head, last = k.split(".")
        for h in head:
            node = node.setdefault(h, {})
        node[last] = v
    return cfg


def _invoke(*args):
    return CliRunner().invoke(main, list(args))


def _report(out, name):
    (run,) = [p for p in Path(out).iterdir() if p.is_dir()]
    return run, dict(l.split("=", 1) for l in (run / "reports" / f"{name}.txt").read_text().splitlines())


# ---------------------------------------------------------------- config


def test_defaults_validate():
    cfg = load_config()
    assert cfg["grid"] == DEFAULTS["grid"]
    assert config_hash(cfg) == config_hash(load_config())
    assert len(config_hash(cfg)) == 16


@pytest.mark.parametrize("over,field", [
    ({"grid": {"N": 1000}}, "grid.N"),
    ({"grid": {"n": 3}}, "grid.n"),
    ({"lattice": {"rho": 2}}, "lattice.rho"),
    ({"potential": {"long": {"delta": 1.5}}}, "potential.long.delta"),
    ({"data": {"a": 5.0}}, "data.R"),
    ({"ladder": {"t": [8, 4]}}, "ladder.t"),
    ({"windows": {"phi": {"family": "band_limited"}}}, "windows.phi.family"),
    ({"trajectories": {"M": 63}}, "trajectories.M"),
    ({"bogus": 1}, "bogus"),
    ({"grid": {"size": 4}}, "grid.size"),
])
def test_validation_names_field(over, field):
    with pytest.raises(ConfigError) as e:
        validate(over)
    assert field in str(e.value)


@pytest.mark.parametrize("over", [{"grid": {"N": 1000}}, {"unknown_block": {}}])
def test_cli_config_error_exit(tmp_path, over):
    r = _invoke("wpt-selftest", "--config", _write(tmp_path, over), "--out", str(tmp_path / "o"))
    assert r.exit_code == 2
    assert "config error" in r.output
    assert not (tmp_path / "o").exists()


def test_cli_bad_yaml(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text("grid: [1, 2\n")
    assert _invoke("decay", "--config", str(p), "--out", str(tmp_path)).exit_code == 2


# ---------------------------------------------------------------- subcommands


def test_wpt_selftest_layout(tmp_path):
    out = tmp_path / "o"
    r = _invoke("wpt-selftest", "--config", str(SMALL), "--out", str(out))
    assert r.exit_code == 0, r.output
    run, rep = _report(out, "wpt_selftest")
    assert {p.name for p in run.iterdir()} == {"config.yaml", "reports", "snapshots", "cache"}
    assert rep["status"] == "pass" and float(rep["parseval_max_rel"]) <= 1e-8
    assert float(rep["inverse_max_rel"]) <= 1e-6
    assert yaml.safe_load((run / "config.yaml").read_text()) == load_config(str(SMALL))
    assert run.name == config_hash(load_config(str(SMALL)))


def test_failing_check_exits_one(tmp_path):
    cfg = _small(**{"tolerances.parseval": 1e-30})
    r = _invoke("wpt-selftest", "--config", _write(tmp_path, cfg), "--out", str(tmp_path / "o"))
    assert r.exit_code == 1
    assert _report(tmp_path / "o", "wpt_selftest")[1]["check.parseval"] == "fail"


def test_trajectories_command(tmp_path):
    out = tmp_path / "o"
    r = _invoke("trajectories", "--config", str(SMALL), "--out", str(out), "--threads", "1")
    assert r.exit_code == 0, r.output
    run, rep = _report(out, "trajectories")
    assert float(rep["conjugation_max"]) <= 1e-7
    assert abs(float(rep["eta_exponent"]) + 0.5) <= 0.1
    assert len(list((run / "snapshots").glob("trajectory_*.csv"))) == 3


def test_propagate_free_identity(tmp_path):
    cfg = _small(**{"potential.long": {"family": "zero"}, "potential.short": None})
    out = tmp_path / "o"
    r = _invoke("propagate", "--config", _write(tmp_path, cfg), "--out", str(out))
    assert r.exit_code == 0, r.output
    run, rep = _report(out, "propagate")
    assert rep["check.free_identity"] == "pass"
    assert float(rep["t4.free_identity"]) <= 1e-5
    assert (run / "snapshots" / "modified_t4.csv").exists()


def test_decay_command(tmp_path):
    out = tmp_path / "o"
    r = _invoke("decay", "--config", str(SMALL), "--out", str(out))
    assert r.exit_code == 0, r.output
    run, rep = _report(out, "decay")
    assert "passed=1" in rep["outgoing"] and "passed=1" in rep["remainder"]


def test_determinism(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        for cmd in ("trajectories", "propagate"):
            assert _invoke(cmd, "--config", str(SMALL), "--out", str(out), "--no-cache").exit_code == 0
    ra, rb = _report(a, "propagate")[0], _report(b, "propagate")[0]
    files = sorted(p.relative_to(ra) for p in ra.rglob("*") if p.is_file())
    assert files and files == sorted(p.relative_to(rb) for p in rb.rglob("*") if p.is_file())
    for f in files:
        assert (ra / f).read_bytes() == (rb / f).read_bytes(), f


def test_default_selftest(tmp_path):
    r = _invoke("wpt-selftest", "--out", str(tmp_path))
    assert r.exit_code == 0, r.output
    rep = _report(tmp_path, "wpt_selftest")[1]
    assert float(rep["parseval_max_rel"]) <= 1e-8 and float(rep["inverse_max_rel"]) <= 1e-6
