import copy
import csv
import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tunnelguide.pipeline import (CoefficientCache, ConfigError, StageError, explain, load_config, reference_config,
                                  run, stage_key, validate_config)

# (path into the raw configuration, value to set); every one of these changes the limit problems
PERTURBATIONS = [
    (("spectral", "h"), 0.03),
    (("spectral", "count"), 5),
    (("spectral", "cap_steps"), 3000),
    (("junction", "h0"), 0.05),
    (("junction", "r_max_factor"), 3.5),
    (("channel", "length"), 9.0),
    (("channel", "n_radial"), 12),
    (("channel", "table_offsets"), [-0.1, 0.0, 0.1]),
    (("resonator", "n_radial"), 12),
    (("resonator", "window"), [5.8, 6.5]),
    (("resonator", "voxel_h"), 0.2),
    (("geometry", "channel_length"), 6.0),
    (("geometry", "cross_section", "radius"), 1.1),
    (("geometry", "narrows", 1, "tip_x"), 7.5),
    (("geometry", "narrows", 0, "half_angle"), 1.0),
]


def _set(raw, path, value):
    raw = copy.deepcopy(raw)
    node = raw
    for p in path[:-1]:
        node = node.setdefault(p, {}) if isinstance(p, str) else node[p]
    node[path[-1]] = value
    if path[0] == "geometry" and path[-2:] == (0, "half_angle"):
        raw["geometry"]["narrows"][1]["half_angle"] = value
    return raw


def _config(raw, tmp_path, **kw):
    raw = dict(raw, output=str(tmp_path / "out"), **kw)
    return load_config(raw)


@given(index=st.integers(0, len(PERTURBATIONS) - 1), eps=st.floats(0.05, 0.5))
def test_cache_key_tracks_every_input_except_epsilon(index, eps):
    base = load_config(reference_config())
    path, value = PERTURBATIONS[index]
    changed = load_config(_set(reference_config(), path, value))
    moved = load_config(_set(reference_config(), ("geometry", "epsilon"), eps))
    for stage in ("modes", "junction", "channel"):
        assert stage_key(changed, stage) != stage_key(base, stage)
        assert stage_key(moved, stage) == stage_key(base, stage)
    assert stage_key(base, "modes") != stage_key(base, "cap")


def test_validation_lists_every_error():
    raw = reference_config(ladder=[0.1, 0.2], mode="bogus")
    del raw["geometry"]["narrows"]
    errors = validate_config(raw)
    assert any("narrows" in e for e in errors)
    assert any("mode" in e for e in errors)
    assert any("strictly decreasing" in e for e in errors)
    with pytest.raises(ConfigError) as exc:
        load_config(raw)
    assert len(exc.value.errors) == len(errors)


def test_semantic_errors_are_reported():
    assert any("at least two" in e for e in validate_config(reference_config(mode="ladder", ladder=[0.2])))
    raw = reference_config()
    raw["geometry"]["narrows"][1]["tip_x"] = 1.0
    assert any(e.startswith("geometry:") for e in validate_config(raw))
    assert validate_config(reference_config()) == []


def test_config_file_errors(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError, match="invalid JSON"):
        load_config(bad)
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "missing.json")


def test_coefficients_mode(coefficients, cache_dir, tmp_path):
    cfg = _config(reference_config(mode="coefficients"), tmp_path, cache_dir=str(cache_dir))
    summary = run(cfg)
    c = summary["coefficients"]
    assert c["mu1"]["value"] == pytest.approx(1.77729, abs=1e-5)
    assert c["k0_sq"]["value"] == pytest.approx(6.02512, abs=1e-4)
    assert c["alpha"]["value"] == pytest.approx(0.3975, abs=2e-3)
    assert all(v["error"] >= 0 for v in c.values() if isinstance(v, dict) and "error" in v)
    on_disk = json.loads((tmp_path / "out" / "summary.json").read_text())
    assert on_disk["status"] == "ok" and on_disk["mode"] == "coefficients"
    hits = json.loads((tmp_path / "out" / "cache.json").read_text())
    assert all(v["status"] == "hit" for v in hits.values())
    assert "k0_sq" in (tmp_path / "out" / "report.txt").read_text()


def test_asymptotics_mode_transmission_table(coefficients, cache_dir, tmp_path):
    cfg = _config(reference_config(), tmp_path, cache_dir=str(cache_dir))
    summary = run(cfg)
    with open(tmp_path / "out" / "transmission.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == cfg.asymptotics.n_points
    assert {"channel", "k2", "offset", "T_lorentz", "T"} <= set(rows[0])
    T = np.array([float(r["T"]) for r in rows])
    peak = summary["asymptotics"]["channels"]["free"]
    top = rows[int(np.argmax(T))]
    assert float(top["offset"]) == pytest.approx(0.0, abs=peak["width"] / 20)
    assert T.max() == pytest.approx(peak["T_max"], abs=1e-3)
    assert float(top["T_lorentz"]) == pytest.approx(peak["T_max"], rel=1e-12)


def test_reruns_are_byte_identical(coefficients, cache_dir, tmp_path):
    outs = []
    for name in ("a", "b"):
        cfg = _config(reference_config(), tmp_path / name, cache_dir=str(cache_dir))
        run(cfg)
        outs.append(tmp_path / name / "out")
    for f in ("summary.json", "report.txt", "transmission.csv"):
        assert (outs[0] / f).read_bytes() == (outs[1] / f).read_bytes()


def test_ladder_failure_leaves_partial_summary(coefficients, cache_dir, tmp_path):
    cfg = _config(reference_config(mode="ladder", ladder=[3.0, 2.5], direct={"confirm": 0}), tmp_path,
                  cache_dir=str(cache_dir))
    with pytest.raises(StageError) as exc:
        run(cfg)
    assert exc.value.stage == "asymptotics"
    summary = json.loads((tmp_path / "out" / "summary.json").read_text())
    assert summary["status"] == "partial" and summary["failed_module"] == "asymptotics"
    assert "mu1" in summary["coefficients"]


def test_explain_plan_and_regime(coefficients, cache_dir, tmp_path):
    text = explain(_config(reference_config(), tmp_path, cache_dir=str(cache_dir)))
    assert "plan:" in text and "cache hit" in text and "cache miss" not in text
    assert "inside the asymptotic regime" in text
    text = explain(_config(_set(reference_config(), ("geometry", "epsilon"), 0.9), tmp_path,
                           cache_dir=str(cache_dir)))
    assert "WARNING regime: eps = 0.9" in text
    cold = explain(_config(reference_config(), tmp_path, cache_dir=str(tmp_path / "empty")))
    assert "cache miss" in cold


def test_cache_records_are_immutable(tmp_path):
    cache = CoefficientCache(tmp_path)
    cache.put("abc123", "cap", {"mu1": 1.0}, {})
    cache.put("abc123", "cap", {"mu1": 2.0}, {})
    assert cache.get("abc123") == {"mu1": 1.0}
    cache.put("abd456", "modes", {}, {})
    assert [e["key"] for e in cache.entries()] == ["abc123", "abd456"]
    with pytest.raises(KeyError, match="ambiguous"):
        cache.remove("ab")
    assert cache.remove("abc") == 1
    assert cache.remove() == 1
    assert cache.entries() == []
