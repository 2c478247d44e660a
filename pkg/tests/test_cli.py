import json
import shutil
import subprocess
import sys

import pytest

from nevlab.cli import main
from nevlab.config import ConfigError, config_hash, load_config


def _load(path):
    return json.loads(path.read_text())


def test_verify_bounds(tmp_path):
    out = tmp_path / "v"
    assert main(["verify", "--which", "bounds", "--k", "0", "--out", str(out)]) == 0
    d = _load(out / "verify.json")
    assert d["ok"] and all(c["ok"] for c in d["checks"])
    assert set(d["results"]["m_i"]) == {"0L", "0U", "1L", "1U"}
    for v in d["results"]["m_i"].values():
        assert v == pytest.approx(0.5, abs=1e-4)
    assert d["config_hash"] == config_hash(d["config"]) and d["seed"] == 0
    assert (out / "verify.meta.json").exists()


def test_unknown_key_is_a_usage_error(tmp_path, capsys):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"mc": {"sampels": 5}}))
    out = tmp_path / "o"
    assert main(["fit", "--config", str(cfg), "--out", str(out)]) == 2
    assert "mc.sampels" in capsys.readouterr().err
    assert not out.exists()


def test_small_alpha0_is_a_finding(tmp_path, capsys):
    out = tmp_path / "a"
    assert main(["verify", "--which", "bounds", "--alpha0", "0.5", "--out", str(out)]) == 1
    err = capsys.readouterr().err
    assert "admissible_alpha0" in err
    d = _load(out / "verify.json")
    assert not d["ok"] and any(not c["ok"] and "admissible_alpha0" in c["name"] for c in d["checks"])


def test_bad_avoid_plane(tmp_path):
    out = tmp_path / "w"
    assert main(["wander", "--avoid", "5", "--samples", "1000", "--out", str(out)]) == 2
    assert not out.exists()


def test_argparse_errors_exit_two():
    assert main(["render", "--window", "1,2"]) == 2
    assert main(["no-such-command"]) == 2


@pytest.mark.parametrize("args", [
    ["orbit", "--z", "0.3,0.7", "--n-max", "60"],
    ["render", "--resolution", "24,16", "--n-max", "30"],
    ["omega-stats", "--seeds", "40", "--n-max", "80"],
])
def test_reruns_are_byte_identical(tmp_path, args):
    out = tmp_path / "r"
    keep = tmp_path / "first"
    assert main(args + ["--out", str(out)]) == 0
    shutil.move(out, keep)
    assert main(args + ["--out", str(out)]) == 0
    a = {p.name: p.read_bytes() for p in keep.iterdir() if not p.name.endswith(".meta.json")}
    b = {p.name: p.read_bytes() for p in out.iterdir() if not p.name.endswith(".meta.json")}
    assert a and a == b


def test_config_file_and_overrides(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"alpha0": 4.0, "mc": {"samples": 10}}))
    c = load_config(cfg, {"mc.seed": 9})
    assert c["alpha0"] == 4.0 and c["mc"]["samples"] == 10 and c["mc"]["seed"] == 9
    assert config_hash(c) != config_hash(load_config(cfg))
    with pytest.raises(ConfigError):
        load_config(None, {"alpha0": float("nan")})
    cfg.write_text(json.dumps({"schema": 7}))
    with pytest.raises(ConfigError):
        load_config(cfg)


def test_console_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "nevlab.cli", "rays", "--P", "0,-1", "--out", str(tmp_path)],
                       capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    assert (tmp_path / "rays.json").exists()
