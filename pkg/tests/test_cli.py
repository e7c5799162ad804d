import json

from tunnelguide.cli import EXIT_CONFIG, EXIT_NUMERIC, EXIT_OK, main
from tunnelguide.pipeline import reference_config


def _write(tmp_path, raw, name="config.json"):
    p = tmp_path / name
    p.write_text(json.dumps(raw))
    return str(p)


def test_run_coefficients(coefficients, cache_dir, tmp_path, capsys):
    cfg = _write(tmp_path, reference_config())
    code = main(["run", "--config", cfg, "--mode", "coefficients", "--out", str(tmp_path / "out"),
                 "--cache-dir", str(cache_dir)])
    assert code == EXIT_OK
    assert "summary.json" in capsys.readouterr().out
    assert json.loads((tmp_path / "out" / "summary.json").read_text())["mode"] == "coefficients"


def test_explain(coefficients, cache_dir, tmp_path, capsys):
    cfg = _write(tmp_path, reference_config())
    assert main(["explain", "--config", cfg, "--cache-dir", str(cache_dir)]) == EXIT_OK
    out = capsys.readouterr().out
    assert "resolved configuration:" in out and "[junction]" in out


def test_explain_regime_warning(tmp_path, capsys):
    raw = reference_config()
    raw["geometry"]["epsilon"] = 0.9
    assert main(["explain", "--config", _write(tmp_path, raw), "--cache-dir", str(tmp_path / "c")]) == EXIT_OK
    assert "WARNING regime" in capsys.readouterr().out


def test_config_error_exit_code(tmp_path, capsys):
    raw = reference_config()
    del raw["geometry"]["narrows"]
    assert main(["explain", "--config", _write(tmp_path, raw)]) == EXIT_CONFIG
    err = capsys.readouterr().err
    assert "configuration error" in err and "narrows" in err
    assert main(["run", "--config", str(tmp_path / "nope.json")]) == EXIT_CONFIG


def test_numerical_failure_exit_code(coefficients, cache_dir, tmp_path, capsys):
    raw = reference_config(mode="ladder", ladder=[3.0, 2.5], direct={"confirm": 0})
    code = main(["run", "--config", _write(tmp_path, raw), "--out", str(tmp_path / "out"),
                 "--cache-dir", str(cache_dir)])
    assert code == EXIT_NUMERIC
    err = capsys.readouterr().err
    assert "asymptotics" in err and "partial" in err


def test_cache_ls_and_rm(coefficients, cache_dir, tmp_path, capsys):
    # work on a copy so the session cache stays intact
    local = tmp_path / "cache"
    local.mkdir()
    for p in cache_dir.glob("*.json"):
        (local / p.name).write_bytes(p.read_bytes())
    assert main(["cache", "ls", "--cache-dir", str(local)]) == EXIT_OK
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == len(list(local.glob("*.json"))) > 0
    key = lines[0].split()[0]
    assert main(["cache", "rm", key[:16], "--cache-dir", str(local)]) == EXIT_OK
    assert "removed 1" in capsys.readouterr().out
    assert main(["cache", "rm", "--cache-dir", str(local)]) == EXIT_CONFIG
    assert main(["cache", "rm", "ffffffffff", "--cache-dir", str(local)]) == EXIT_CONFIG
    assert main(["cache", "rm", "--all", "--cache-dir", str(local)]) == EXIT_OK
    assert list(local.glob("*.json")) == []
