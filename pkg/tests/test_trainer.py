import numpy as np
import pytest

from rgbtrack import geometry, model, trainer
from rgbtrack.trainer import TrainConfig
from rgbtrack.utils import params_checksum
from tests.conftest import tiny_model_config


def fast_cfg(**kw):
    base = dict(iterations_per_domain=2, seed=7)
    base.update(kw)
    return TrainConfig(**base)


class TestMinibatch:
    def test_batch_sizes_are_256_and_768(self, mini_dataset, toy_cfg):
        cfg = TrainConfig(seed=1)
        batch = trainer.build_minibatch(mini_dataset, 0, cfg, np.random.default_rng(1), toy_cfg)
        assert (batch.labels == 1).sum() == 256
        assert (batch.labels == 0).sum() == 768
        assert batch.rgb.shape[0] == 8

    def test_fixed_seed_identical_batch(self, mini_dataset, toy_cfg):
        cfg = TrainConfig(seed=1)
        a = trainer.build_minibatch(mini_dataset, 1, cfg, np.random.default_rng(3), toy_cfg)
        b = trainer.build_minibatch(mini_dataset, 1, cfg, np.random.default_rng(3), toy_cfg)
        np.testing.assert_array_equal(a.boxes, b.boxes)
        np.testing.assert_array_equal(a.rgb, b.rgb)

    def test_positives_overlap_their_frame_gt(self, mini_dataset, toy_cfg):
        cfg = TrainConfig(seed=2)
        rng = np.random.default_rng(5)
        seq = mini_dataset[0]
        n = len(seq)
        frame_ids_expected = np.random.default_rng(5).choice(n, size=8, replace=False)
        batch = trainer.build_minibatch(mini_dataset, 0, cfg, rng, toy_cfg)
        for slot, fi in enumerate(frame_ids_expected):
            sel = (batch.frame_idx == slot) & (batch.labels == 1)
            gt = seq.gt_box(int(fi))
            for box in batch.boxes[sel]:
                assert geometry.iou(geometry.box_from_array(box), gt) >= 0.7

    def test_short_sequence_uses_replacement(self, toy_cfg):
        from rgbtrack import data
        short = data.generate_synthetic(
            data.SynthConfig(frames=3, frame_size=(64, 48), target_size=(12, 12), seed=8)
        )
        batch = trainer.build_minibatch([short], 0, TrainConfig(seed=0), np.random.default_rng(0), toy_cfg)
        assert batch.rgb.shape[0] == 8


class TestTrainOffline:
    def test_zero_learning_rates_leave_params_bitwise_unchanged(self, mini_dataset):
        mcfg = tiny_model_config()
        cfg = fast_cfg(lr_conv=0.0, lr_fc=0.0, weight_decay=0.0)
        params = model.init_model_params(mcfg, len(mini_dataset), np.random.default_rng(cfg.seed))
        before = params_checksum(params.named_arrays())
        trained, _ = trainer.train_offline(mini_dataset, cfg, mcfg, params=params)
        assert params_checksum(trained.named_arrays()) == before

    def test_round_robin_domain_schedule(self, mini_dataset):
        mcfg = tiny_model_config()
        seen = []
        trainer.train_offline(mini_dataset, fast_cfg(iterations_per_domain=3), mcfg,
                              callback=lambda it, row: seen.append((it, row.domain)))
        assert [d for _, d in seen] == [0, 1, 0, 1, 0, 1]

    def test_full_run_determinism_bitwise(self, mini_dataset):
        mcfg = tiny_model_config()
        p1, t1 = trainer.train_offline(mini_dataset, fast_cfg(), mcfg)
        p2, t2 = trainer.train_offline(mini_dataset, fast_cfg(), mcfg)
        assert params_checksum(p1.named_arrays()) == params_checksum(p2.named_arrays())
        assert [r.total for r in t1] == [r.total for r in t2]

    def test_loss_trace_rows(self, mini_dataset, tmp_path):
        mcfg = tiny_model_config()
        _, trace = trainer.train_offline(mini_dataset, fast_cfg(), mcfg)
        assert len(trace) == 4
        trainer.write_trace(tmp_path / "trace.csv", trace)
        lines = (tmp_path / "trace.csv").read_text().splitlines()
        assert lines[0] == "iteration,domain,l_cls,l_inst,total"
        assert len(lines) == 5

    def test_shared_backbone_is_single_storage(self, mini_dataset):
        mcfg = tiny_model_config()
        params, _ = trainer.train_offline(mini_dataset, fast_cfg(), mcfg)
        assert params.backbone_t is None  # one shared parameter set

    def test_nonfinite_loss_aborts_with_context(self, mini_dataset):
        mcfg = tiny_model_config()
        params = model.init_model_params(mcfg, len(mini_dataset), np.random.default_rng(0))
        params.head.fc2.w[0, 0] = np.inf
        with pytest.raises(FloatingPointError, match="iteration 0, domain 0"):
            trainer.train_offline(mini_dataset, fast_cfg(), mcfg, params=params)

    def test_branch_count_must_match_domains(self, mini_dataset):
        mcfg = tiny_model_config()
        params = model.init_model_params(mcfg, 5, np.random.default_rng(0))
        with pytest.raises(ValueError, match="branches"):
            trainer.train_offline(mini_dataset, fast_cfg(), mcfg, params=params)


class TestOptimizerGrouping:
    def test_learning_rate_groups(self, mini_dataset):
        mcfg = tiny_model_config()
        params = model.init_model_params(mcfg, 1, np.random.default_rng(0))
        opt = trainer.make_optimizer(params, TrainConfig())
        assert opt.lr == {"conv": 1e-4, "fc": 1e-3}
        assert opt.groups["backbone.conv1.w"] == "conv"
        assert opt.groups["hfa_rgb.compress2.w"] == "conv"
        assert opt.groups["qaa.w21"] == "fc"
        assert opt.groups["head.fc1.w"] == "fc"

    def test_qaa_group_override(self):
        mcfg = tiny_model_config()
        params = model.init_model_params(mcfg, 1, np.random.default_rng(0))
        opt = trainer.make_optimizer(params, TrainConfig(qaa_lr_group="conv"))
        assert opt.groups["qaa.w"] == "conv"

    def test_decoupled_decay_shrinks_unused_params(self):
        from rgbtrack.optim import Adam
        p = np.ones(3)
        opt = Adam([("p", p, "fc")], lr={"fc": 0.1}, weight_decay=0.5, decoupled=True)
        opt.step({"p": np.zeros(3)})
        np.testing.assert_allclose(p, 1.0 - 0.1 * 0.5)


class TestCheckpoint:
    def test_round_trip_bitwise(self, mini_dataset, tmp_path):
        mcfg = tiny_model_config()
        params, _ = trainer.train_offline(mini_dataset, fast_cfg(), mcfg)
        path = tmp_path / "ckpt.npz"
        trainer.save_checkpoint(path, params, mcfg)
        loaded = trainer.load_checkpoint(path, mcfg)
        assert params_checksum(loaded.named_arrays()) == params_checksum(params.named_arrays())

    def test_variant_mismatch_rejected(self, mini_dataset, tmp_path):
        mcfg = tiny_model_config()
        params, _ = trainer.train_offline(mini_dataset, fast_cfg(), mcfg)
        trainer.save_checkpoint(tmp_path / "c.npz", params, mcfg)
        with pytest.raises(ValueError, match="variant"):
            trainer.load_checkpoint(tmp_path / "c.npz", tiny_model_config("late"))
