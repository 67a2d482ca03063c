import hashlib
import json

import pytest

from wptsim import cli
from wptsim import config as cfgmod


def _digest(d):
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(d.iterdir())}


# ---- config -----------------------------------------------------------------

@pytest.mark.parametrize("text,val", [("1", 1.0), ("616n", 616e-9), ("616nH", 616e-9),
                                      ("40.68meg", 40.68e6), ("40.68MEGHz", 40.68e6),
                                      ("10k", 1e4), ("1m", 1e-3), ("2.5u", 2.5e-6),
                                      ("3p", 3e-12), ("1e-9", 1e-9), ("-0.5", -0.5),
                                      ("1F", 1e-15), ("1g", 1e9)])
def test_parse_number(text, val):
    assert cfgmod.parse_number(text) == pytest.approx(val)


@pytest.mark.parametrize("text", ["", "abc", "1..2", "n5"])
def test_parse_number_rejects(text):
    with pytest.raises(ValueError):
        cfgmod.parse_number(text)


def test_default_config_is_valid():
    assert cfgmod.validate_config(cfgmod.default_config_text()) == []
    cfg = cfgmod.load_config()
    assert cfg.rectifier.r_load == 700.0
    assert cfg.link.resonance_residual()[0] < 1e-9


def test_partial_file_uses_defaults(tmp_path):
    p = tmp_path / "c.ini"
    p.write_text("[rectifier]\nr_load = 300\n")
    cfg = cfgmod.load_config(p)
    assert cfg.rectifier.r_load == 300.0 and cfg.rectifier.c_filter == 0.5e-9


def test_coupling_bound_named():
    errs = cfgmod.validate_config("[link]\nk = 1.2\n")
    assert any("link.k" in e and "coupling" in e for e in errs)


def test_all_errors_reported_at_once():
    errs = cfgmod.validate_config("[link]\nk = 1.2\nbogus = 1\n[rectifier]\nr_load = x\n[nope]\na=1\n")
    joined = "\n".join(errs)
    for piece in ("link.k", "link.bogus", "rectifier.r_load", "[nope]"):
        assert piece in joined


def test_off_resonance_is_a_warning():
    cfg, errs = cfgmod.parse_config("[link]\nc_tx = 1.3n\n")
    assert errs == []
    assert any("c_tx" in w and "resonance" in w for w in cfg.warnings)


def test_overrides():
    cfg = cfgmod.load_config(None, ["rectifier.r_load=1k", "sweep.load_points=3"])
    assert cfg.rectifier.r_load == 1000.0 and len(cfg.load_grid()) == 3
    assert cfgmod.validate_config(cfgmod.default_config_text(), ["r_load=5"])


def test_single_point_axis():
    cfg = cfgmod.load_config(None, ["sweep.load_points=1"])
    assert cfg.load_grid() == [120.0]


def test_echo_round_trips():
    cfg = cfgmod.load_config(None, ["rectifier.r_load=333", "sweep.delays=0, 1n"])
    again = cfgmod.load_config(cfg.to_ini())
    assert again.values == cfg.values


def test_missing_file():
    with pytest.raises(cfgmod.ConfigError):
        cfgmod.load_config("/nonexistent/x.ini")


# ---- CLI --------------------------------------------------------------------

def test_cli_validate(capsys):
    assert cli.main(["validate", "--config", "default"]) == cli.EXIT_OK
    assert "ok" in capsys.readouterr().out


def test_cli_config_errors(tmp_path, capsys):
    assert cli.main(["validate", "--config", str(tmp_path / "none.ini")]) == cli.EXIT_CONFIG
    assert cli.main(["no-such", "--config", "default"]) == cli.EXIT_CONFIG
    assert cli.main(["pre-vs-pte", "--config", "default", "--set", "link.k=1.2",
                     "--out", str(tmp_path)]) == cli.EXIT_CONFIG
    assert "link.k" in capsys.readouterr().err


def test_cli_runtime_error(tmp_path, capsys):
    rc = cli.main(["calibrate-regulate", "--config", "default", "--set", "load.value=10",
                   "--out", str(tmp_path)])
    assert rc == cli.EXIT_RUNTIME
    assert "calibrate-regulate" in capsys.readouterr().err


def test_cli_check_failure_and_pass(tmp_path):
    out = str(tmp_path / "a")
    assert cli.main(["pre-vs-pte", "--config", "default", "--out", out, "--check",
                     "--set", "check.reduction_min=0.9"]) == cli.EXIT_CHECK
    assert cli.main(["pre-vs-pte", "--config", "default", "--out", out, "--check",
                     "--set", "check.reduction_min=0.01"]) == cli.EXIT_OK
    summary = json.loads((tmp_path / "a" / "summary.json").read_text())
    assert summary["scenario"] == "pre-vs-pte" and summary["all_checks_pass"]


def test_reruns_are_byte_identical(tmp_path):
    args = ["phase-sweep", "--config", "default", "--seed", "5"]
    cli.main(args + ["--out", str(tmp_path / "a")])
    cli.main(args + ["--out", str(tmp_path / "b")])
    assert _digest(tmp_path / "a") == _digest(tmp_path / "b")


def test_parallel_matches_serial(tmp_path):
    common = ["vcr-sweep", "--config", "default", "--set", "sweep.load_points=3"]
    assert cli.main(common + ["--out", str(tmp_path / "s"), "--jobs", "1"]) in (0, 3)
    assert cli.main(common + ["--out", str(tmp_path / "p"), "--jobs", "2"]) in (0, 3)
    assert _digest(tmp_path / "s") == _digest(tmp_path / "p")


def test_config_echo_reruns_identically(tmp_path):
    cli.main(["pre-vs-pte", "--config", "default", "--set", "link.k=0.07",
              "--out", str(tmp_path / "a")])
    echo = tmp_path / "a" / "config_echo.ini"
    cli.main(["pre-vs-pte", "--config", str(echo), "--out", str(tmp_path / "b")])
    assert _digest(tmp_path / "a") == _digest(tmp_path / "b")
