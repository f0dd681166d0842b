import csv
import json

import pytest

from fwikit.cli import main


def _run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, (json.loads(out) if out.strip() else None), err


def test_specimen(tmp_path, capsys):
    code, out, _ = _run(capsys, "specimen", "--specimen", "IV", "--scale", "0.2", "--output-dir", str(tmp_path))
    assert code == 0 and out["status"] == "ok"
    assert out["speeds"] == [1450.0, 5900.0]
    assert (tmp_path / "specimen_steel_hole.json").exists()


def test_forward_with_config(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"specimen": "camembert", "scale": 0.15, "emitter_elements": [1]}))
    code, out, _ = _run(capsys, "forward", "--config", str(cfg), "--output-dir", str(tmp_path), "--workers", "1",
                        "--snapshot-every", "600")
    assert code == 0
    assert out["shape"] == [2, 128, 1200]
    assert len(list((tmp_path / "wavefields").glob("*.json"))) == 2  # step 600 of 0..1199, two shots


def test_invert(tmp_path, capsys):
    code, out, _ = _run(capsys, "invert", "--specimen", "steel_sdh2", "--scale", "0.15", "--misfit", "l2",
                        "--max-iterations", "2", "--output-dir", str(tmp_path), "--model-snapshot-every", "1")
    assert code == 0
    assert out["iterations"] <= 2 and "model_mse" in out
    assert (tmp_path / "report.json").exists() and (tmp_path / "models" / "model_0000.json").exists()


def test_gradient_check(tmp_path, capsys):
    code, out, _ = _run(capsys, "gradient-check", "--misfit", "w2", "--directions", "1", "--output-dir", str(tmp_path))
    assert code == 0 and out["status"] == "pass"
    with open(out["csv"]) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["direction", "analytic", "finite_difference", "rel_error"]
    assert len(rows) == 2


def test_misfit_scan(tmp_path, capsys):
    code, out, _ = _run(capsys, "misfit-scan", "--max-shift", "1e-6", "--step", "1e-7", "--output-dir", str(tmp_path))
    assert code == 0 and out["n_shifts"] == 21


def test_error_is_json(tmp_path, capsys):
    code, out, err = _run(capsys, "specimen", "--scale", "2.0", "--output-dir", str(tmp_path))
    assert code == 2 and out is None
    payload = json.loads(err)
    assert payload["status"] == "error" and payload["type"] == "ValueError"


def test_unknown_command(capsys):
    with pytest.raises(SystemExit):
        main(["bogus"])
