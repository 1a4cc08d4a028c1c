import json
import time

import pytest

from qresnet.cli import CONFIG_NAME, main


def _files(d):
    return {p.relative_to(d): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}


def _rerun_matches(cmd, first, second):
    assert main([cmd, "--config", str(first / CONFIG_NAME), "--out", str(second)]) == 0
    assert _files(first) == _files(second)


SYN = ["--data", "synthetic", "--synthetic-features", "6", "--synthetic-samples", "80"]


def test_gatecount(capsys):
    assert main(["gatecount"]) == 0
    assert json.loads(capsys.readouterr().out)["total"] == 200
    assert main(["gatecount", "--n-blocks", "5", "--backbone-depth", "30"]) == 0
    assert json.loads(capsys.readouterr().out)["total"] == 1400


def test_verify_exit_codes(tmp_path, capsys):
    assert main(["verify", "--suites", "forward,bloch,gatecount", "--out", str(tmp_path)]) == 0
    assert json.loads((tmp_path / "verify.json").read_text())["passed"] is True
    assert main(["verify", "--suites", "forward", "--fault", "ry_sign"]) == 1
    assert main(["verify", "--suites", ""]) == 2
    assert main(["verify", "--suites", "nope"]) == 2


def test_train_then_eval_and_attack(tmp_path):
    run = tmp_path / "run"
    assert main(["train", *SYN, "--n-qubits", "3", "--n-blocks", "2", "--epochs", "3", "--out", str(run)]) == 0
    rows = (run / "metrics.csv").read_text().splitlines()
    assert rows[0] == "epoch,train_loss,test_accuracy" and len(rows) == 4
    _rerun_matches("train", run, tmp_path / "run2")

    ev = tmp_path / "eval"
    assert main(["eval", *SYN, "--checkpoint", str(run / "checkpoint.json"), "--out", str(ev)]) == 0
    acc = json.loads((ev / "eval.json").read_text())["accuracy"]

    att = tmp_path / "att"
    args = ["attack", *SYN, "--checkpoint", str(run / "checkpoint.json"), "--surrogate-epochs", "30"]
    assert main([*args, "--out", str(att)]) == 0
    lines = (att / "attack.csv").read_text().splitlines()
    assert len(lines) == 11  # header + 5 eps x 2 modes
    assert float(lines[1].split(",")[2]) == acc
    _rerun_matches("attack", att, tmp_path / "att2")


def test_train_missing_data_leaves_nothing(tmp_path):
    out = tmp_path / "o"
    assert main(["train", "--train-images", str(tmp_path / "none"), "--train-labels", "x", "--out", str(out)]) == 2
    assert not out.exists()


def test_attack_missing_checkpoint(tmp_path):
    assert main(["attack", *SYN, "--checkpoint", str(tmp_path / "no.json"), "--out", str(tmp_path / "a")]) == 2


def test_barren_scan(tmp_path):
    t = time.perf_counter()
    assert main(["barren-scan", "--dims", "", "--out", str(tmp_path / "a")]) == 0
    assert time.perf_counter() - t < 1.0
    assert main(["barren-scan", "--dims", "3", "--out", str(tmp_path / "b")]) == 2
    small = tmp_path / "c"
    assert main(["barren-scan", "--dims", "2,4", "--samples", "200", "--max-qubits", "3", "--out", str(small)]) == 0
    _rerun_matches("barren-scan", small, tmp_path / "d")


def test_bloch_demo(tmp_path):
    out = tmp_path / "b"
    assert main(["bloch-demo", "--out", str(out)]) == 0
    assert len((out / "bloch.csv").read_text().splitlines()) == 101
    _rerun_matches("bloch-demo", out, tmp_path / "b2")
    assert main(["bloch-demo", "--grid-size", "1", "--out", str(tmp_path / "one")]) == 0
    assert len((tmp_path / "one" / "bloch.csv").read_text().splitlines()) == 2
    assert main(["bloch-demo", "--w", "1,1,0,1", "--out", str(tmp_path / "bad")]) == 2


def test_config_file_and_unknown_key(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[gatecount]\nn_qubits = 10\nn_blocks = 0\nbackbone_depth = 200\n")
    assert main(["gatecount", "--config", str(cfg), "--out", str(tmp_path / "g")]) == 0
    assert json.loads((tmp_path / "g" / "gatecount.json").read_text())["total"] == 8000
    cfg.write_text("[gatecount]\nqubits = 3\n")
    assert main(["gatecount", "--config", str(cfg)]) == 2


def test_usage_errors_exit_two():
    with pytest.raises(SystemExit) as exc:
        main(["no-such-command"])
    assert exc.value.code == 2
    assert main(["train", "--epochs", "abc", "--out", "x"]) == 2


def test_prepare_mnist(tmp_path):
    pytest.importorskip("mlxtend")
    assert main(["prepare-mnist", "--out", str(tmp_path / "m")]) == 0
    assert (tmp_path / "m" / "train-images-idx3-ubyte").stat().st_size == 16 + 3500 * 784
