import json

import pytest

from mcpad.cli import main
from mcpad.config import (
    ConfigError,
    RunConfig,
    config_digest,
    load_config,
    mccnn_config,
    synth_config,
    to_canonical_json,
    write_lock,
)
from mcpad.dataset import AttackType, ChannelId


class TestLoading:
    def test_defaults(self):
        cfg = load_config(None, env={})
        assert cfg.seed == 0
        assert cfg.mccnn.epochs == 25
        assert cfg.mccnn.learning_rate == pytest.approx(1e-4)
        assert cfg.mccnn.batch_size == 32

    def test_yaml_round_trip(self, tmp_path):
        path = tmp_path / "c.yaml"
        path.write_text("seed: 9\nmccnn:\n  epochs: 3\n  channels: [gray, depth]\n")
        cfg = load_config(path, env={})
        assert cfg.seed == 9 and cfg.mccnn.epochs == 3
        assert cfg.mccnn.channels == ("gray", "depth")

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "c.yaml"
        path.write_text("sneed: 1\n")
        with pytest.raises(ConfigError):
            load_config(path, env={})

    def test_nested_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "c.yaml"
        path.write_text("mccnn:\n  warp_factor: 9\n")
        with pytest.raises(ConfigError):
            load_config(path, env={})

    def test_type_errors(self, tmp_path):
        path = tmp_path / "c.yaml"
        path.write_text("seed: banana\n")
        with pytest.raises(ConfigError):
            load_config(path, env={})

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "nope.yaml", env={})

    def test_set_overrides(self):
        cfg = load_config(None, overrides=["mccnn.epochs=2", "synth.noise_level=3.5"], env={})
        assert cfg.mccnn.epochs == 2 and cfg.synth.noise_level == 3.5

    def test_set_unknown_key(self):
        with pytest.raises(ConfigError):
            load_config(None, overrides=["mccnn.nope=1"], env={})

    def test_env_seed_override(self):
        cfg = load_config(None, env={"MCPAD_SEED": "77"})
        assert cfg.seed == 77

    def test_env_seed_bad(self):
        with pytest.raises(ConfigError):
            load_config(None, env={"MCPAD_SEED": "x"})

    def test_bad_protocol_name(self):
        with pytest.raises(ConfigError):
            load_config(None, overrides=["protocol.name=LOO_nothing"], env={})


class TestAdapters:
    def test_synth_config(self):
        cfg = load_config(None, overrides=["seed=4"], env={})
        sc = synth_config(cfg)
        assert sc.seed == 4
        assert ChannelId.DEPTH in sc.signal_channels
        assert all(isinstance(k, AttackType) for k in sc.attack_instruments)

    def test_mccnn_config_channel_override(self):
        cfg = load_config(None, env={})
        net = mccnn_config(cfg, channels=["gray"])
        assert net.channels == (ChannelId.GRAY,)
        assert net.adapt == frozenset({"C1", "B1"})


class TestDigestsAndLocks:
    def test_digest_stable(self):
        a, b = RunConfig(), RunConfig()
        assert config_digest(a) == config_digest(b)
        assert json.loads(to_canonical_json(a))["seed"] == 0

    def test_digest_changes_with_config(self):
        base = load_config(None, env={})
        other = load_config(None, overrides=["seed=1"], env={})
        assert config_digest(base) != config_digest(other)

    def test_lock_reruns_identical(self, tmp_path):
        cfg = load_config(None, env={})
        p1 = write_lock(tmp_path, cfg, "synth")
        first = p1.read_bytes()
        p2 = write_lock(tmp_path, cfg, "synth")
        assert p2.read_bytes() == first


class TestCliSurface:
    def test_unknown_extractor_exits_2(self, tmp_path, capsys):
        rc = main(["extract", "--extractor", "lbp", "--set", "paths.out_root=" + str(tmp_path)])
        assert rc == 2  # missing upstream artifacts -> validation error

    def test_eval_missing_file_exits_2(self, tmp_path):
        rc = main([
            "eval", "--protocol", "grandtest",
            str(tmp_path / "a.csv"), str(tmp_path / "b.csv"),
            "--set", "paths.out_root=" + str(tmp_path),
        ])
        assert rc == 2

    def test_bad_override_exits_2(self):
        assert main(["synth", "--set", "nope=1"]) == 2

    def test_digest_printed(self, tmp_path, capsys):
        main(["eval", "--protocol", "grandtest", "x.csv", "y.csv",
              "--set", "paths.out_root=" + str(tmp_path)])
        out = capsys.readouterr().out
        assert "config digest:" in out
