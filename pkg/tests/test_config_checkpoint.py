import dataclasses

import numpy as np
import pytest

from copt.checkpoint import (
    CheckpointData,
    load_checkpoint,
    model_from_checkpoint,
    save_checkpoint,
)
from copt.config import TrainConfig, apply_overrides, config_text, load_config, parse_config_text
from copt.errors import ConfigError, FormatError
from copt.model import init_model


class TestConfig:
    def test_round_trip_every_field(self):
        cfg = TrainConfig(seed=7, iterations=400, lr=1e-3, copt_metric="l1",
                          masked_enabled=False, embedder="some/path.ctef")
        back = parse_config_text(config_text(cfg))
        assert back == cfg

    def test_text_lists_every_field(self):
        text = config_text(TrainConfig())
        for f in dataclasses.fields(TrainConfig):
            assert f"{f.name} = " in text

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError):
            parse_config_text("not_a_key = 3")

    def test_bad_value_types(self):
        with pytest.raises(ConfigError):
            parse_config_text("iterations = soon")
        with pytest.raises(ConfigError):
            parse_config_text("masked_enabled = maybe")

    def test_comments_and_blanks_skipped(self):
        cfg = parse_config_text("# a comment\n\nseed = 5\n")
        assert cfg.seed == 5

    def test_overrides(self):
        cfg = apply_overrides(TrainConfig(), {"lr": "0.01", "copt_enabled": "false"})
        assert cfg.lr == 0.01 and cfg.copt_enabled is False
        with pytest.raises(ConfigError):
            apply_overrides(TrainConfig(), {"bogus": "1"})

    def test_file_round_trip(self, tmp_path):
        cfg = TrainConfig(seed=3, tau=0.5)
        (tmp_path / "run.cfg").write_text(config_text(cfg))
        assert load_config(tmp_path / "run.cfg") == cfg

    def test_validation_rules(self):
        with pytest.raises(ConfigError):
            TrainConfig(iterations=0).validate()
        with pytest.raises(ConfigError):
            TrainConfig(lr=0.0).validate()
        with pytest.raises(ConfigError):
            TrainConfig(iterations=100, eval_every=32).validate()  # must divide
        with pytest.raises(ConfigError):
            TrainConfig(scheme="finetune").validate()  # needs init_from
        with pytest.raises(ConfigError):
            TrainConfig(n_classes=4).validate()  # 5 names listed
        TrainConfig().validate()


def _roundtrip_data(seed=0):
    rng = np.random.default_rng(seed)
    model = init_model(seed=seed, c=3, d=8, r=4, channels=(4, 8))
    params = [p.data for p in model.parameters()]
    return CheckpointData(
        iteration=120,
        seed=seed,
        n_classes=3,
        feat_dim=8,
        downsample_r=4,
        copt_skipped=17,
        channels=(4, 8),
        student=params,
        teacher=[p + 1 for p in params],
        bank={0: rng.normal(size=8).astype(np.float32), 2: rng.normal(size=8).astype(np.float32)},
        adam_step=120,
        adam_m=[np.zeros_like(p) for p in params],
        adam_v=[np.ones_like(p) for p in params],
    )


class TestCheckpoint:
    def test_round_trip_bitwise(self, tmp_path):
        data = _roundtrip_data()
        path = tmp_path / "c.ckpt"
        save_checkpoint(path, data)
        back = load_checkpoint(path)
        assert back.iteration == 120
        assert back.copt_skipped == 17
        assert back.adam_step == 120
        for a, b in zip(data.student, back.student):
            assert a.tobytes() == b.tobytes()
        for a, b in zip(data.teacher, back.teacher):
            assert a.tobytes() == b.tobytes()
        assert set(back.bank) == {0, 2}
        assert back.bank[2].tobytes() == data.bank[2].tobytes()

    def test_model_from_checkpoint(self, tmp_path):
        data = _roundtrip_data(seed=4)
        path = tmp_path / "c.ckpt"
        save_checkpoint(path, data)
        model = model_from_checkpoint(load_checkpoint(path))
        assert model.c == 3 and model.d == 8 and model.r == 4
        for p, a in zip(model.parameters(), data.student):
            assert p.data.tobytes() == a.tobytes()

    def test_truncation_detected(self, tmp_path):
        path = tmp_path / "c.ckpt"
        save_checkpoint(path, _roundtrip_data())
        blob = path.read_bytes()
        path.write_bytes(blob[: len(blob) // 2])
        with pytest.raises(FormatError):
            load_checkpoint(path)

    def test_bad_magic(self, tmp_path):
        (tmp_path / "x.ckpt").write_bytes(b"WHAT" + b"\x00" * 20)
        with pytest.raises(FormatError):
            load_checkpoint(tmp_path / "x.ckpt")
