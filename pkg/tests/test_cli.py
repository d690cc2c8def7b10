import json

import pytest

from oslnet.cli import EXIT_CONFIG, EXIT_DEGENERATE, EXIT_OK, main, parse_config
from oslnet.layers import ConfigError

BASE = {
    "data": {"k": 4, "dim": 12, "train_per_class": 10, "test_per_class": 10, "noise_scale": 0.3},
    "model": {"hidden_widths": [8]},
    "train": {"epochs": 3},
    "rounds": 3,
    "arms": [{"name": "fc", "classifier": "fc"}, {"name": "os", "classifier": "osl"}],
}


def _write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("train")
    cfg = _write(tmp, BASE)
    assert main(["train", "--config", cfg, "--out", str(tmp / "a")]) == EXIT_OK
    assert main(["train", "--config", cfg, "--out", str(tmp / "b")]) == EXIT_OK
    return tmp


def test_train_outputs(trained):
    lines = (trained / "a" / "results.jsonl").read_text().splitlines()
    assert len(lines) == 6
    rec = json.loads(lines[0])
    assert {"arm", "round", "seed", "test_acc", "train_loss", "loss_curve", "config_hash"} <= set(rec)
    assert "wall_time" not in rec
    summary = json.loads((trained / "a" / "summary.json").read_text())
    assert set(summary["arms"]) == {"fc", "os"} and summary["arms"]["os"]["n"] == 3
    angles = json.loads((trained / "a" / "angles.json").read_text())
    assert angles["arms"]["os"]["off_diagonal"]["min"] == 90.0
    timings = json.loads((trained / "a" / "timings.json").read_text())
    assert len(timings["wall_time"]["fc"]) == 3


def test_train_deterministic(trained):
    for name in ("results.jsonl", "summary.json", "angles.json", "quartiles.csv"):
        assert (trained / "a" / name).read_bytes() == (trained / "b" / name).read_bytes()


def test_every_output_carries_hash(trained):
    h = json.loads((trained / "a" / "summary.json").read_text())["config_hash"]
    for name in ("results.jsonl", "angles.json", "quartiles.csv", "timings.json"):
        assert h in (trained / "a" / name).read_text()


def test_compare(trained, capsys):
    res = str(trained / "a" / "results.jsonl")
    assert main(["compare", res, "--arm-a", "os", "--arm-b", "fc"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "significant" in out and '"p_value"' in out


def test_compare_identical_degenerate(trained):
    a, b = str(trained / "a" / "results.jsonl"), str(trained / "b" / "results.jsonl")
    assert main(["compare", a, b, "--arm-a", "os", "--arm-b", "os"]) == EXIT_DEGENERATE


def test_compare_needs_arm_choice(trained, capsys):
    assert main(["compare", str(trained / "a" / "results.jsonl")]) == EXIT_CONFIG
    assert "--arm-a" in capsys.readouterr().err


def test_compare_pairing_errors(trained, tmp_path):
    recs = [json.loads(x) for x in (trained / "a" / "results.jsonl").read_text().splitlines()]
    os_recs = [r for r in recs if r["arm"] == "os"]
    short = tmp_path / "short.jsonl"
    short.write_text("\n".join(json.dumps(r) for r in os_recs[:2]))
    assert main(["compare", str(short), str(trained / "a" / "results.jsonl"), "--arm-b", "fc"]) == EXIT_CONFIG
    shifted = tmp_path / "shifted.jsonl"
    shifted.write_text("\n".join(json.dumps({**r, "seed": r["seed"] + 100}) for r in os_recs))
    assert main(["compare", str(shifted), str(trained / "a" / "results.jsonl"), "--arm-b", "fc"]) == EXIT_CONFIG


@pytest.mark.parametrize("bad, match", [
    ({"bogus": 1}, "unknown key"),
    ({"train": {"epochz": 3}}, "train: unknown key"),
    ({"arms": [{"name": "x", "classifier": "osl", "loss": "large_margin"}]}, "unmasked"),
    ({"arms": [{"name": "x"}, {"name": "x"}]}, "duplicate"),
    ({"arms": [{"name": "x", "loss": {"name": "focal", "gama": 2}}]}, "loss: unknown key"),
    ({"rounds": 1}, "rounds"),
    ({"model": {"hidden_widths": [2]}, "arms": [{"name": "o", "classifier": "osl"}]}, "hidden neuron"),
])
def test_config_errors(bad, match):
    with pytest.raises(ConfigError, match=match):
        parse_config({**BASE, **bad})


def test_config_error_exit_code(tmp_path, capsys):
    assert main(["train", "--config", _write(tmp_path, {**BASE, "bogus": 1})]) == EXIT_CONFIG
    assert "bogus" in capsys.readouterr().err
    assert main(["train", "--config", str(tmp_path / "missing.json")]) == EXIT_CONFIG


def test_sweep_width(tmp_path):
    cfg = _write(tmp_path, {**BASE, "rounds": 2, "train": {"epochs": 1}})
    assert main(["sweep", "--config", cfg, "--out", str(tmp_path), "--axis", "width", "--values", "2,8,16"]) == 0
    rows = (tmp_path / "sweep.csv").read_text().splitlines()
    assert rows[0].startswith("# config_hash=")
    assert rows[1] == "value,arm,mean,std,n,note"
    assert len(rows) == 2 + 6
    assert "2,os,,,0,skipped" in rows[3]


def test_sweep_depth_and_reduction(tmp_path):
    cfg = _write(tmp_path, {**BASE, "rounds": 2, "train": {"epochs": 1}})
    assert main(["sweep", "--config", cfg, "--out", str(tmp_path), "--axis", "depth", "--values", "8-4,16-8-4"]) == 0
    assert len((tmp_path / "sweep.csv").read_text().splitlines()) == 6
    assert main(["sweep", "--config", cfg, "--out", str(tmp_path), "--axis", "depth", "--values", "8-3"]) == 1
    assert main(["sweep", "--config", cfg, "--out", str(tmp_path), "--axis", "reduction", "--values", "2,5"]) == 0


def test_verify(tmp_path, capsys):
    assert main(["verify", "--trials", "1", "--out", str(tmp_path)]) == EXIT_OK
    rep = json.loads((tmp_path / "verify.json").read_text())
    assert rep["violations"] == 0 and rep["trials"] == 1 and "config_hash" in rep


def test_gen_data_then_file_config(tmp_path):
    out = tmp_path / "data"
    assert main(["gen-data", "--k", "3", "--dim", "6", "--train-per-class", "5", "--test-per-class", "4",
                 "--out", str(out)]) == 0
    cfg = {"data": {"source": "file", "train_path": str(out / "train.csv"), "test_path": str(out / "test.csv")},
           "model": {"hidden_widths": [6]}, "train": {"epochs": 1}, "rounds": 2}
    assert main(["train", "--config", _write(tmp_path, cfg), "--out", str(tmp_path / "run")]) == 0
    assert len((tmp_path / "run" / "results.jsonl").read_text().splitlines()) == 4
