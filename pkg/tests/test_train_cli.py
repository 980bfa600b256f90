import csv
import dataclasses
import xml.etree.ElementTree as ET
from pathlib import Path

import numpy as np
import pytest

from copt import rng
from copt.cli import main as cli_main
from copt.config import TrainConfig, config_text
from copt.copt_loss import CoptConfig, copt_step
from copt.data_synth import SceneConfig, write_dataset, write_ntf
from copt.errors import ConfigError
from copt.model import forward, init_model
from copt.pixel_features import FeatureMemoryBank, downsample_mask
from copt.text_embed import ClassList, build_text_bank, builtin_template, hash_embedder
from copt.train import evaluate_checkpoint, train


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("ds")
    write_dataset(SceneConfig(seed=3), n_source=24, n_target=24, out_dir=root)
    return root


def quick_cfg(dataset, out_dir, **kw):
    base = dict(
        seed=5, iterations=6, eval_every=3, eval_count=8, batch_size=2,
        dataset_dir=str(dataset), out_dir=str(out_dir),
    )
    base.update(kw)
    return TrainConfig(**base)


class TestDeterminismAndResume:
    def test_identical_runs_produce_identical_csv_bytes(self, dataset, tmp_path):
        r1 = train(quick_cfg(dataset, tmp_path / "a"))
        r2 = train(quick_cfg(dataset, tmp_path / "b"))
        assert r1.metrics_path.read_bytes() == r2.metrics_path.read_bytes()
        assert (tmp_path / "a" / "checkpoint.ckpt").read_bytes() == \
               (tmp_path / "b" / "checkpoint.ckpt").read_bytes()

    def test_resume_equals_straight_through(self, dataset, tmp_path):
        straight = train(quick_cfg(dataset, tmp_path / "full"))
        # stop at iteration 3 (an eval boundary), then resume to 6 in place
        train(quick_cfg(dataset, tmp_path / "resumed", iterations=3))
        resumed = train(quick_cfg(dataset, tmp_path / "resumed"), resume=True)
        assert straight.metrics_path.read_bytes() == resumed.metrics_path.read_bytes()
        assert straight.checkpoint_path.read_bytes() == resumed.checkpoint_path.read_bytes()

    def test_resume_seed_mismatch_rejected(self, dataset, tmp_path):
        train(quick_cfg(dataset, tmp_path / "r", iterations=3))
        with pytest.raises(ConfigError):
            train(quick_cfg(dataset, tmp_path / "r", seed=99), resume=True)

    def test_resolved_config_echoes_every_key(self, dataset, tmp_path):
        cfg = quick_cfg(dataset, tmp_path / "c", lr=0.00123, copt_metric="l1", tau=0.5)
        train(cfg)
        resolved = (tmp_path / "c" / "config.resolved").read_text()
        assert resolved == config_text(cfg)
        assert "lr = 0.00123" in resolved
        assert "copt_metric = l1" in resolved


class TestToggles:
    def test_disabled_copt_logs_zero_and_matches_weight_zero(self, dataset, tmp_path):
        off = train(quick_cfg(dataset, tmp_path / "off", copt_enabled=False))
        w0 = train(quick_cfg(dataset, tmp_path / "w0", copt_enabled=True, copt_weight=0.0))

        rows_off = list(csv.DictReader(open(off.metrics_path)))
        rows_w0 = list(csv.DictReader(open(w0.metrics_path)))
        assert all(r["loss_copt"] == "0" for r in rows_off)
        # a zero-weight loss adds exact zeros everywhere: every other column
        # (incl. mIoU trajectories) must match bitwise
        for a, b in zip(rows_off, rows_w0):
            for key in a:
                if key not in ("loss_copt", "copt_skipped"):
                    assert a[key] == b[key], key

    def test_baseline_pure_source_ce(self, dataset, tmp_path):
        res = train(quick_cfg(
            dataset, tmp_path / "base",
            copt_enabled=False, masked_enabled=False, strongaug_enabled=False,
        ))
        rows = list(csv.DictReader(open(res.metrics_path)))
        for r in rows:
            assert r["loss_copt"] == "0"
            assert r["loss_m"] == "0"
            assert r["loss_st"] == "0"
            assert float(r["loss_ce"]) > 0

    def test_ctef_embedder_backs_training(self, dataset, tmp_path):
        ctef = tmp_path / "table.ctef"
        assert cli_main(["embed-hash", "--out", str(ctef), "--dim", "32", "--mode", "llm"]) == 0
        res = train(quick_cfg(dataset, tmp_path / "ctef_run", iterations=2, eval_every=2,
                              embedder=str(ctef), masked_enabled=False, strongaug_enabled=False))
        rows = list(csv.DictReader(open(res.metrics_path)))
        assert float(rows[-1]["loss_copt"]) > 0

    @pytest.mark.parametrize("route", ["target", "both_sequential"])
    def test_copt_feature_routes_run(self, dataset, tmp_path, route):
        res = train(quick_cfg(dataset, tmp_path / f"route_{route}",
                              iterations=2, eval_every=2, tau=0.0,
                              copt_features_from=route))
        rows = list(csv.DictReader(open(res.metrics_path)))
        assert rows[-1]["miou"] != ""

    def test_finetune_scheme_runs_from_checkpoint(self, dataset, tmp_path):
        base = train(quick_cfg(dataset, tmp_path / "pre",
                               copt_enabled=False, masked_enabled=False, strongaug_enabled=False))
        ft = train(quick_cfg(
            dataset, tmp_path / "ft",
            scheme="finetune", init_from=str(base.checkpoint_path),
            masked_enabled=False, strongaug_enabled=False, copt_enabled=True,
        ))
        assert ft.metrics_path.exists()


class TestLossOracles:
    def test_iteration_one_copt_matches_hand_chain(self, dataset, tmp_path):
        cfg = quick_cfg(dataset, tmp_path / "o", iterations=1, eval_every=1,
                        membank_decay=0.0, masked_enabled=False, strongaug_enabled=False)
        res = train(cfg)
        row = list(csv.DictReader(open(res.metrics_path)))[0]

        # replay the first iteration by hand
        from copt.data_synth import load_dataset

        ds = load_dataset(cfg.dataset_dir)
        cache = {sid: ds.load(sid) for sid in ds.ids}
        src_pool = ds.source_ids
        bgen = rng.stream(cfg.seed, "batch", 1)
        idx = bgen.integers(0, len(src_pool), size=cfg.batch_size)
        student = init_model(cfg.seed, c=5, d=32, r=4)
        bank = FeatureMemoryBank(0.0, 32)
        text_bank = build_text_bank(hash_embedder(cfg.embed_dim), builtin_template("synthetic"),
                                    builtin_template("real"), ClassList(cfg.classes()), "llm")
        vals = []
        for i in idx:
            rec = cache[src_pool[int(i)]]
            feats, _ = forward(student, rec.image)
            r = copt_step(feats, downsample_mask(rec.mask, 4, "nearest"), bank, text_bank,
                          CoptConfig(), ignore_index=255)
            if not r.skipped:
                vals.append(r.loss.item())
        assert float(row["loss_copt"]) == pytest.approx(np.mean(vals), rel=1e-5)

    def test_single_class_masks_skip_with_counter(self, tmp_path):
        # handcrafted degenerate dataset: every mask is all background
        root = tmp_path / "flat"
        root.mkdir()
        lines = []
        for domain, n in (("source", 4), ("target", 6)):
            for i in range(n):
                sid = f"{domain}_{i:05d}"
                img = np.full((3, 16, 16), 0.5, dtype=np.float32)
                write_ntf(root / f"img_{sid}.ntf", img)
                write_ntf(root / f"lbl_{sid}.ntf", np.zeros((16, 16), dtype=np.uint8))
                lines.append(f"{sid} {domain}")
        (root / "manifest.txt").write_text("\n".join(lines) + "\n")

        res = train(TrainConfig(
            seed=0, iterations=2, eval_every=2, eval_count=2, batch_size=2,
            dataset_dir=str(root), out_dir=str(tmp_path / "flatrun"),
            masked_enabled=False, strongaug_enabled=False,
        ))
        row = list(csv.DictReader(open(res.metrics_path)))[-1]
        assert row["loss_copt"] == "0"
        assert int(row["copt_skipped"]) == 4  # 2 iterations x 2 source samples

    def test_all_ignore_masks_zero_ce(self, tmp_path):
        root = tmp_path / "ign"
        root.mkdir()
        lines = []
        for domain, n in (("source", 4), ("target", 6)):
            for i in range(n):
                sid = f"{domain}_{i:05d}"
                write_ntf(root / f"img_{sid}.ntf", np.full((3, 16, 16), 0.5, dtype=np.float32))
                write_ntf(root / f"lbl_{sid}.ntf", np.full((16, 16), 255, dtype=np.uint8))
                lines.append(f"{sid} {domain}")
        (root / "manifest.txt").write_text("\n".join(lines) + "\n")

        res = train(TrainConfig(
            seed=0, iterations=2, eval_every=2, eval_count=2, batch_size=2,
            dataset_dir=str(root), out_dir=str(tmp_path / "ignrun"),
            copt_enabled=False, masked_enabled=False, strongaug_enabled=False,
        ))
        row = list(csv.DictReader(open(res.metrics_path)))[-1]
        assert row["loss_ce"] == "0"


class TestAbort:
    @pytest.mark.filterwarnings("ignore::RuntimeWarning")  # overflow is the point
    def test_divergence_aborts_and_keeps_last_checkpoint(self, dataset, tmp_path):
        from copt.train import TrainingAborted

        out = tmp_path / "boom"
        with pytest.raises(TrainingAborted) as exc:
            train(quick_cfg(dataset, out, iterations=60, eval_every=10, lr=2e3,
                            copt_enabled=False, masked_enabled=False, strongaug_enabled=False))
        assert exc.value.iteration > 0
        # the last boundary checkpoint survives for post-mortem / restart
        if exc.value.iteration > 10:
            assert (out / "checkpoint.ckpt").exists()


class TestEvaluate:
    def test_evaluate_checkpoint_deterministic(self, dataset, tmp_path):
        res = train(quick_cfg(dataset, tmp_path / "e"))
        rep1, it1 = evaluate_checkpoint(res.checkpoint_path, dataset, "target")
        rep2, it2 = evaluate_checkpoint(res.checkpoint_path, dataset, "target")
        assert it1 == it2 == 6
        assert np.array_equal(rep1.per_class, rep2.per_class, equal_nan=True)

    def test_perfect_oracle_predictions_give_miou_one(self, dataset, tmp_path):
        # rewrite the target masks to be exactly what the model predicts; the
        # evaluation harness must then report a perfect score
        res = train(quick_cfg(dataset, tmp_path / "p"))
        from copt.checkpoint import load_checkpoint, model_from_checkpoint
        from copt.data_synth import load_dataset
        from copt.tensor import argmax_channels

        model = model_from_checkpoint(load_checkpoint(res.checkpoint_path))
        ds = load_dataset(dataset)
        oracle_root = tmp_path / "oracle_ds"
        oracle_root.mkdir()
        lines = []
        for sid in ds.target_ids[:6]:
            rec = ds.load(sid)
            _, logits = forward(model, rec.image)
            pred = argmax_channels(logits).astype(np.uint8)
            write_ntf(oracle_root / f"img_{sid}.ntf", rec.image.data)
            write_ntf(oracle_root / f"lbl_{sid}.ntf", pred)
            lines.append(f"{sid} target")
        (oracle_root / "manifest.txt").write_text("\n".join(lines) + "\n")

        rep, _ = evaluate_checkpoint(res.checkpoint_path, oracle_root, "target")
        assert rep.miou == pytest.approx(1.0)

    def test_class_count_mismatch_config_error(self, dataset, tmp_path):
        res = train(quick_cfg(dataset, tmp_path / "m"))
        bad_root = tmp_path / "bad_ds"
        bad_root.mkdir()
        sid = "target_00000"
        write_ntf(bad_root / f"img_{sid}.ntf", np.full((3, 16, 16), 0.5, dtype=np.float32))
        write_ntf(bad_root / f"lbl_{sid}.ntf", np.full((16, 16), 9, dtype=np.uint8))
        (bad_root / "manifest.txt").write_text(f"{sid} target\n")
        with pytest.raises(ConfigError):
            evaluate_checkpoint(res.checkpoint_path, bad_root, "target")


class TestCli:
    def test_gen_data_train_eval_plot_pipeline(self, tmp_path, capsys):
        ds = tmp_path / "ds"
        assert cli_main([
            "gen-data", "--out", str(ds), "--n-source", "16", "--n-target", "16",
            "--seed", "2", "--height", "32", "--width", "32",
        ]) == 0

        cfg_path = tmp_path / "run.cfg"
        cfg = TrainConfig(seed=1, iterations=4, eval_every=2, eval_count=4, batch_size=2,
                          dataset_dir=str(ds), out_dir=str(tmp_path / "run"),
                          mask_block=16)
        cfg_path.write_text(config_text(cfg))
        assert cli_main(["train", "--config", str(cfg_path)]) == 0
        out = capsys.readouterr().out
        assert "final target mIoU" in out

        assert cli_main([
            "eval", "--checkpoint", str(tmp_path / "run" / "checkpoint.ckpt"),
            "--dataset-dir", str(ds), "--split", "target",
        ]) == 0
        assert "miou" in capsys.readouterr().out

        assert cli_main(["plot", str(tmp_path / "run" / "metrics.csv"),
                         "--out", str(tmp_path / "run.svg")]) == 0
        svg = ET.parse(tmp_path / "run.svg").getroot()
        polylines = [el for el in svg.iter() if el.tag.endswith("polyline")]
        assert len(polylines) >= 1

    def test_config_overrides_honored(self, tmp_path, dataset):
        cfg_path = tmp_path / "base.cfg"
        cfg_path.write_text(config_text(quick_cfg(dataset, tmp_path / "ov")))
        assert cli_main([
            "train", "--config", str(cfg_path),
            "--set", "iterations=2", "--set", "eval_every=2", "--set", "lr=0.002",
        ]) == 0
        resolved = (tmp_path / "ov" / "config.resolved").read_text()
        assert "iterations = 2" in resolved
        assert "lr = 0.002" in resolved

    def test_embed_hash_round_trips_through_text_bank(self, tmp_path):
        out = tmp_path / "h.ctef"
        assert cli_main([
            "embed-hash", "--out", str(out), "--dim", "64", "--mode", "llm",
        ]) == 0
        from copt.text_embed import load_ctef

        table = load_ctef(out)
        assert table.dim == 64
        classes = ClassList(("background", "disk", "square", "triangle", "bar"))
        bank = build_text_bank(table, builtin_template("synthetic"),
                               builtin_template("real"), classes, "llm")
        assert bank.t.shape == (5, 64)

    def test_ablate_axes(self, tmp_path):
        ds = tmp_path / "ds"
        write_dataset(SceneConfig(seed=4, height=32, width=32), 10, 10, ds)
        cfg_path = tmp_path / "ab.cfg"
        cfg = TrainConfig(seed=0, iterations=2, eval_every=2, eval_count=3, batch_size=2,
                          dataset_dir=str(ds), out_dir=str(tmp_path / "ab"), mask_block=16)
        cfg_path.write_text(config_text(cfg))

        assert cli_main(["ablate", "--config", str(cfg_path), "--axis", "metric",
                         "--out-dir", str(tmp_path / "ab_metric")]) == 0
        rows = list(csv.DictReader(open(tmp_path / "ab_metric" / "ablation_metric.csv")))
        assert [r["value"] for r in rows] == ["cosine", "l1", "l2"]

        assert cli_main(["ablate", "--config", str(cfg_path), "--axis", "membank",
                         "--out-dir", str(tmp_path / "ab_mb")]) == 0
        rows = list(csv.DictReader(open(tmp_path / "ab_mb" / "ablation_membank.csv")))
        assert [r["value"] for r in rows] == ["0.01", "0.1", "0.5"]

    def test_unknown_flag_exits_2(self, dataset, tmp_path):
        with pytest.raises(SystemExit) as exc:
            cli_main(["train", "--bogus-flag", "x"])
        assert exc.value.code == 2

    def test_unknown_subcommand_exits_2(self):
        with pytest.raises(SystemExit) as exc:
            cli_main(["frobnicate"])
        assert exc.value.code == 2
