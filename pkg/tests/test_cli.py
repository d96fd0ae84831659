import json

import pytest

from semclip.cli import main

TINY = """seeds = 0
token_dim = 16
embed_dim = 16
subspace_dim = 4
train_classes = 4
test_classes = 4
train_per_class = 16
test_per_class = 20
cross_classes = 3
cross_per_class = 10
channel_uses = 8
batch_size = 16
stage1_steps = 10
stage2_steps = 5
bandwidth_uses = 4,8
"""


@pytest.fixture
def cfg(tmp_path):
    path = tmp_path / "tiny.cfg"
    path.write_text(TINY)
    return path


def test_channel_probe(capsys):
    assert main(["channel", "probe", "--snr-db", "0", "--symbols", "1000000"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert abs(out["measured_snr_db"]) < 0.05 and out["symbols"] == 1_000_000


def test_unknown_subcommand_exits_2():
    with pytest.raises(SystemExit) as e:
        main(["exp", "frobnicate"])
    assert e.value.code == 2


def test_tokens_synth_and_inspect(tmp_path, capsys):
    out = tmp_path / "t.fcache"
    assert main(["tokens", "synth", "--classes", "3", "--per-class", "5", "--dim", "8", "--out", str(out)]) == 0
    capsys.readouterr()
    assert main(["tokens", "inspect", str(out)]) == 0
    info = json.loads(capsys.readouterr().out)
    assert info["classes"] == 3 and info["labels"] is True


def test_missing_checkpoint_is_status_1(tmp_path, cfg, capsys):
    assert main(["exp", "sweep", "--config", str(cfg), "--run", str(tmp_path / "empty")]) == 1
    assert "missing checkpoint" in capsys.readouterr().err


def test_bad_config_is_status_1(tmp_path, capsys):
    (tmp_path / "bad.cfg").write_text("snr_range = 10,-10\n")
    assert main(["exp", "train", "--config", str(tmp_path / "bad.cfg"), "--run", str(tmp_path / "r")]) == 1
    assert "exceeds upper bound" in capsys.readouterr().err


def test_train_and_sweep_are_reproducible(tmp_path, cfg, monkeypatch):
    monkeypatch.delenv("SEMCLIP_SEED", raising=False)
    hashes, reports = [], []
    for name in ("a", "b"):
        run = tmp_path / name
        assert main(["exp", "train", "--config", str(cfg), "--run", str(run)]) == 0
        assert main(["exp", "sweep", "--config", str(cfg), "--run", str(run)]) == 0
        hashes.append(json.loads((run / "manifest_sweep.json").read_text())["manifest_hash"])
        reports.append((run / "sweep.csv").read_bytes())
        assert (run / "accuracy_vs_snr.png").stat().st_size > 0
    assert hashes[0] == hashes[1] and reports[0] == reports[1]
    assert (tmp_path / "a" / "seed0_codec.sckp").read_bytes() == (tmp_path / "b" / "seed0_codec.sckp").read_bytes()
    assert main(["exp", "plot", "--config", str(cfg), "--run", str(tmp_path / "a")]) == 0
