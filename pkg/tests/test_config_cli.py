import numpy as np
import pytest

from rgbtrack import cli, config
from rgbtrack.config import RunConfig


class TestDefaults:
    def test_every_published_hyperparameter_present(self):
        cfg = RunConfig()
        assert cfg.train.frames_per_batch == 8
        assert cfg.train.pos_per_frame == 32
        assert cfg.train.neg_per_frame == 96
        assert cfg.train.iterations_per_domain == 200
        assert cfg.train.lr_conv == 1e-4
        assert cfg.train.lr_fc == 1e-3
        assert cfg.train.weight_decay == 5e-4
        assert cfg.train.alpha == 0.1
        assert cfg.model_config().d_embed == 256
        assert cfg.online.init_pos == 500
        assert cfg.online.init_neg == 5000
        assert cfg.online.init_iterations == 30
        assert cfg.online.lr_last_fc == 1e-3
        assert cfg.online.lr_other_fc == 1e-4
        assert cfg.online.regression_gate == 0.5
        assert cfg.online.short_term_gate == 0.0
        assert cfg.online.long_term_interval == 10
        assert cfg.online.xy_var_factor == 0.09
        assert cfg.online.s_var == 0.25
        assert cfg.online.short_term_capacity == 20
        assert cfg.online.long_term_capacity == 100

    def test_toy_preset_sizes(self):
        cfg = RunConfig(preset="toy")
        mcfg = cfg.model_config()
        assert mcfg.c_agg == 32 and mcfg.d_embed == 64
        assert mcfg.backbone.out_channels == (16, 32, 64)

    def test_paper_preset_sizes(self):
        mcfg = RunConfig().model_config()
        assert mcfg.c_agg == 128
        assert mcfg.backbone.out_channels == (96, 256, 512)
        assert mcfg.head.fc1_units == 1024 and mcfg.head.fc2_units == 512


class TestConfigFile:
    def test_round_trip_equality(self, tmp_path):
        cfg = RunConfig(preset="toy", variant="ma", seed=9, mode="rgbt234")
        path = tmp_path / "run.yaml"
        config.dump_config(cfg, path)
        assert config.load_config(path) == cfg

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("preset: toy\nbananas: 3\n")
        with pytest.raises(ValueError, match="bananas"):
            config.load_config(path)

    def test_unknown_nested_key_rejected(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("train:\n  frames_per_batch: 8\n  warp_speed: 9\n")
        with pytest.raises(ValueError, match="train.*warp_speed"):
            config.load_config(path)

    def test_seed_override_propagates(self):
        cfg = RunConfig().with_overrides(seed=77)
        assert cfg.seed == 77
        assert cfg.train.seed == 77
        assert cfg.online.seed == 77
        assert cfg.synth.seed == 77

    def test_empty_file_gives_defaults(self, tmp_path):
        path = tmp_path / "empty.yaml"
        path.write_text("")
        assert config.load_config(path) == RunConfig()

    def test_invalid_preset_rejected(self):
        with pytest.raises(ValueError, match="preset"):
            RunConfig(preset="giant")


class TestCli:
    def test_unknown_subcommand_exits_1(self, capsys):
        assert cli.main(["fly"]) == 1
        assert "usage" in capsys.readouterr().err.lower()

    def test_no_subcommand_exits_1(self, capsys):
        assert cli.main([]) == 1

    def test_missing_required_argument_exits_1(self, capsys):
        assert cli.main(["synth"]) == 1

    def test_runtime_failure_exits_2_with_module_context(self, tmp_path, capsys):
        missing = tmp_path / "nope"
        code = cli.main(["track", "--checkpoint", str(missing / "c.npz"),
                         "--seq", str(missing), "--out", str(tmp_path / "r.txt"),
                         "--preset", "toy"])
        assert code == 2
        assert "error [rgbtrack." in capsys.readouterr().err

    def test_synth_writes_sequence(self, tmp_path, capsys):
        out = tmp_path / "seq"
        code = cli.main(["synth", "--out", str(out), "--seed", "3"])
        assert code == 0
        assert (out / "gt.txt").exists()
        assert (out / "rgb" / "00000.png").exists()

    def test_synth_count_writes_dataset(self, tmp_path):
        out = tmp_path / "ds"
        assert cli.main(["synth", "--out", str(out), "--count", "2", "--seed", "5"]) == 0
        assert (out / "synth5" / "gt.txt").exists()
        assert (out / "synth6" / "gt.txt").exists()

    def test_dump_config_writes_effective_yaml(self, tmp_path):
        out = tmp_path / "seq"
        dumped = tmp_path / "effective.yaml"
        cli.main(["synth", "--out", str(out), "--seed", "11",
                  "--preset", "toy", "--dump-config", str(dumped)])
        cfg = config.load_config(dumped)
        assert cfg.seed == 11 and cfg.preset == "toy"

    def test_eval_mode_operating_points(self, tmp_path):
        # center error 10 px: hit at 20 px (rgbt234), miss at 5 px (gtot)
        from rgbtrack import data, tracker
        seq = data.generate_synthetic(
            data.SynthConfig(frames=4, frame_size=(64, 48), target_size=(10, 10), seed=2)
        )
        data.write_sequence(seq, tmp_path / "ds" / "s0")
        res = seq.gt.copy()
        res[:, 0] += 10.0
        (tmp_path / "results").mkdir()
        tracker.write_results(tmp_path / "results" / "s0.txt", res)
        base = ["eval", "--results", str(tmp_path / "results"), "--data", str(tmp_path / "ds")]
        assert cli.main(base + ["--out", str(tmp_path / "rep1"), "--mode", "gtot"]) == 0
        assert cli.main(base + ["--out", str(tmp_path / "rep2"), "--mode", "rgbt234"]) == 0
        s1 = (tmp_path / "rep1" / "summary.csv").read_text().splitlines()[-1]
        s2 = (tmp_path / "rep2" / "summary.csv").read_text().splitlines()[-1]
        assert s1.split(",")[2] == "0.0"
        assert s2.split(",")[2] == "1.0"
        assert "pr@5" in (tmp_path / "rep1" / "summary.csv").read_text()
        assert "pr@20" in (tmp_path / "rep2" / "summary.csv").read_text()
