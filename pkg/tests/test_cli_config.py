import math
import subprocess
import sys

import pytest

from gridweaver.cli import EXIT_INTERNAL, EXIT_OK, EXIT_USER, main
from gridweaver.config import config_from_dict, dump_config, load_config
from gridweaver.errors import ConfigError


def test_config_defaults_and_inf_strings():
    cfg = config_from_dict({"optimize": {"co2_cap": "inf"}, "seed": 3})
    assert math.isinf(cfg.optimize.co2_cap)
    assert cfg.cluster_seed == 3
    assert cfg.optimize.pricing == "devex"


@pytest.mark.parametrize("raw", [
    {"bogus": {}},
    {"ingest": {"nope": 1}},
    {"cluster": {"k": 0}},
    {"optimize": {"pricing": "random"}},
    {"seed": "x"},
])
def test_config_rejects_bad_input(raw):
    with pytest.raises(ConfigError):
        config_from_dict(raw)


def test_config_dump_round_trip(tmp_path):
    cfg = config_from_dict({"cluster": {"k": 5}, "optimize": {"co2_cap": 1e6}})
    p = tmp_path / "c.yaml"
    p.write_text(dump_config(cfg))
    back = load_config(p)
    assert back.digest() == cfg.digest()


def test_digest_changes_with_any_field():
    a = config_from_dict({})
    b = config_from_dict({"eligibility": {"buffer_km": 1.0}})
    assert a.digest() != b.digest()


def test_missing_input_paths_reported(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("paths:\n  substations: nowhere.geojson\n")
    cfg = load_config(p)
    with pytest.raises(ConfigError, match="nowhere"):
        cfg.validate()


def test_cli_user_error_exit_code(tmp_path, capsys):
    assert main(["ingest", "--config", str(tmp_path / "missing.yaml")]) == EXIT_USER
    captured = capsys.readouterr()
    assert captured.out == ""


def test_cli_prerequisite_exit_code(tmp_path):
    assert main(["fixture", str(tmp_path), "--buses", "8", "--hours", "24", "--k", "2"]) == EXIT_OK
    assert main(["optimize", "--config", str(tmp_path / "config.yaml")]) == EXIT_USER


def test_cli_internal_error_exit_code(tmp_path, monkeypatch):
    from gridweaver import cli

    def boom(*a, **k):
        raise RuntimeError("bug")

    monkeypatch.setattr(cli, "load_config", boom)
    assert main(["ingest", "--config", str(tmp_path / "c.yaml")]) == EXIT_INTERNAL


def test_cli_end_to_end_subprocess(tmp_path):
    assert main(["fixture", str(tmp_path), "--buses", "10", "--hours", "24", "--k", "2"]) == EXIT_OK
    proc = subprocess.run([sys.executable, "-m", "gridweaver.cli", "all", "--config", str(tmp_path / "config.yaml"),
                           "--export-mps", str(tmp_path / "lp.mps")], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert proc.stdout == ""
    assert "optimize: ran" in proc.stderr
    assert (tmp_path / "lp.mps").exists()
    assert (tmp_path / "output" / "report" / "map.svg").exists()
