import pytest

from semclip.config import SEED_ENV, ExperimentConfig, RunManifest, format_config, parse_config, parse_config_text
from semclip.errors import ConfigError


def test_empty_file_gives_defaults(tmp_path):
    (tmp_path / "c.cfg").write_text("# nothing\n\n")
    assert parse_config(tmp_path / "c.cfg", env={}) == ExperimentConfig()
    assert parse_config(None, env={}) == ExperimentConfig()


def test_values_and_tuples():
    cfg = parse_config_text("seeds = 4, 5\nsnrs=-3,3 # comment\nstandardize = false\nlr=0.01\n", env={})
    assert cfg.seeds == (4, 5) and cfg.snrs == (-3.0, 3.0) and cfg.standardize is False and cfg.lr == 0.01


@pytest.mark.parametrize("text", [
    "snr_range = 10,-10",
    "snr_range = 1",
    "nonsense = 3",
    "seeds = 1\nseeds = 2",
    "lr = fast",
    "standardize = maybe",
    "just a line",
    "methods = semclip,unknown",
    "metrics = top5",
    "cross_split = test",
    "train_classes = 1",
    "spread = 0",
    "image_spec = 10x10",
])
def test_bad_configs_raise(text):
    with pytest.raises(ConfigError):
        parse_config_text(text, env={})


def test_snr_range_message():
    with pytest.raises(ConfigError, match="lower bound 10.0 exceeds upper bound -10.0"):
        parse_config_text("snr_range=10,-10", env={})


def test_hash_is_stable_and_sensitive():
    a = parse_config_text("seeds=1\n", env={})
    assert a.hash() == parse_config_text("seeds = 1  # same\n", env={}).hash()
    assert a.hash() != parse_config_text("seeds=2\n", env={}).hash()


def test_seed_env_override():
    cfg = parse_config_text("seeds=0,1,2", env={SEED_ENV: "7"})
    assert cfg.seeds == (7,)
    with pytest.raises(ConfigError):
        parse_config_text("", env={SEED_ENV: "x"})


def test_format_round_trips():
    cfg = ExperimentConfig(seeds=(3,), snrs=(-1.5, 2.25), lr=3e-4, standardize=False)
    assert parse_config_text(format_config(cfg), env={}) == cfg


def test_manifest(tmp_path):
    cfg = ExperimentConfig(seeds=(1,))
    a = RunManifest.for_config(cfg, env={})
    b = RunManifest.for_config(cfg, env={})
    b.created += 100
    assert a.hash() == b.hash()
    a.checkpoints = {"seed1_codec": "abc"}
    assert a.hash() != b.hash()
    a.write(tmp_path / "m.json")
    assert RunManifest.read(tmp_path / "m.json").hash() == a.hash()
    text = (tmp_path / "m.json").read_text().replace('"abc"', '"abd"')
    (tmp_path / "m.json").write_text(text)
    with pytest.raises(ConfigError):
        RunManifest.read(tmp_path / "m.json")
    assert RunManifest.for_config(cfg, env={SEED_ENV: "1"}).seed_override == "1"
