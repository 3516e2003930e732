import hashlib
import json

import pytest

from rolltune.cli import main

TINY_CONFIG = """\
# miniature end-to-end pipeline
data.seed = 3
data.source_classes = 4
data.source_samples = 10
data.train_ids = 5
data.train_samples = 6
data.test_ids = 4
data.query_per_id = 1
data.gallery_per_id = 3
data.height = 16
data.width = 8
model.widths = 2,3
model.embedding = 4
train.batch = 8
train.periods = 2
train.epochs_per_period = 2
train.decay_every = 1
train.warmup_epochs = 1
train.pretrain_epochs = 1
"""


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    config = root / "tiny.cfg"
    config.write_text(TINY_CONFIG)
    data_dir = root / "data"
    assert main(["gen", "--config", str(config), "--out", str(data_dir)]) == 0
    pre_dir = root / "pre"
    assert main(["pretrain", "--config", str(config), "--data", str(data_dir),
                 "--out", str(pre_dir), "--figures", "false"]) == 0
    return root, config, data_dir, pre_dir


def file_hash(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


class TestGen:
    def test_writes_five_files(self, workdir):
        _, _, data_dir, _ = workdir
        names = sorted(p.name for p in data_dir.iterdir())
        assert names == ["manifest.json", "source.ds", "target_gallery.ds",
                         "target_query.ds", "target_train.ds"]

    def test_missing_output_dir_created(self, workdir, tmp_path):
        _, config, _, _ = workdir
        out = tmp_path / "a" / "b" / "c"
        assert main(["gen", "--config", str(config), "--out", str(out)]) == 0
        assert (out / "source.ds").exists()

    def test_rerun_idempotent_except_manifest(self, workdir, tmp_path):
        _, config, data_dir, _ = workdir
        again = tmp_path / "again"
        assert main(["gen", "--config", str(config), "--out", str(again)]) == 0
        for name in ("source.ds", "target_train.ds", "target_query.ds",
                     "target_gallery.ds"):
            assert file_hash(again / name) == file_hash(data_dir / name)

    def test_invalid_config_key_lists_valid_keys(self, tmp_path, capsys):
        bad = tmp_path / "bad.cfg"
        bad.write_text("data.sed = 3\n")
        code = main(["gen", "--config", str(bad), "--out", str(tmp_path / "x")])
        assert code == 1
        err = capsys.readouterr().err
        assert "data.sed" in err and "data.seed" in err


class TestDescribe:
    def test_prints_header(self, workdir, capsys):
        _, _, data_dir, _ = workdir
        assert main(["describe", str(data_dir / "target_train.ds")]) == 0
        out = capsys.readouterr().out
        assert "samples: 30" in out and "identities: 5" in out

    def test_missing_file_is_error(self, capsys):
        assert main(["describe", "/nonexistent/x.ds"]) == 1
        assert "error:" in capsys.readouterr().err


class TestPretrain:
    def test_outputs(self, workdir):
        _, _, _, pre_dir = workdir
        assert (pre_dir / "pretrained.ckpt").exists()
        log = (pre_dir / "pretrain_log.csv").read_text().splitlines()
        assert log[0].startswith("epoch,period,loss")
        assert len(log) == 2  # one epoch
        manifest = json.loads((pre_dir / "manifest.json").read_text())
        assert manifest["holdout_accuracy"] is not None

    def test_same_seed_identical_checkpoint(self, workdir, tmp_path):
        _, config, data_dir, pre_dir = workdir
        again = tmp_path / "pre2"
        assert main(["pretrain", "--config", str(config), "--data", str(data_dir),
                     "--out", str(again), "--figures", "false"]) == 0
        assert file_hash(again / "pretrained.ckpt") == \
            file_hash(pre_dir / "pretrained.ckpt")


@pytest.fixture(scope="module")
def rollback_run(workdir, tmp_path_factory):
    _, config, data_dir, pre_dir = workdir
    out = tmp_path_factory.mktemp("run_rollback")
    code = main(["run", "--config", str(config), "--data", str(data_dir),
                 "--checkpoint", str(pre_dir / "pretrained.ckpt"),
                 "--strategy", "rollback", "--out", str(out)])
    assert code == 0
    return out


class TestRun:
    def test_period_checkpoints_emitted(self, rollback_run):
        names = {p.name for p in rollback_run.iterdir()}
        for p in (1, 2):
            assert f"period_{p:02d}_pre.ckpt" in names
            assert f"period_{p:02d}_post.ckpt" in names
        assert "final.ckpt" in names

    def test_artifacts(self, rollback_run):
        names = {p.name for p in rollback_run.iterdir()}
        assert {"train_log.csv", "schedule.txt", "report.csv", "curves.png",
                "report_cmc.png", "manifest.json"} <= names
        schedule = (rollback_run / "schedule.txt").read_text()
        assert "period=2" in schedule and "tuned=B1+FC" in schedule

    def test_manifest_contents(self, rollback_run):
        doc = json.loads((rollback_run / "manifest.json").read_text())
        assert doc["strategy"] == "rollback"
        assert doc["retained_per_period"] == ["none", "B1+FC"]
        assert 0 <= doc["final_map"] <= 1

    def test_base_cy_lr_columns_match_rollback(self, workdir, rollback_run,
                                               tmp_path):
        _, config, data_dir, pre_dir = workdir
        out = tmp_path / "cy"
        assert main(["run", "--config", str(config), "--data", str(data_dir),
                     "--checkpoint", str(pre_dir / "pretrained.ckpt"),
                     "--strategy", "base_cy", "--out", str(out),
                     "--figures", "false"]) == 0

        def lr_columns(path):
            rows = path.read_text().splitlines()
            head = rows[0].split(",")
            idx = [i for i, c in enumerate(head) if c.startswith("lr_")]
            return [[r.split(",")[i] for i in idx] for r in rows[1:]]

        assert lr_columns(out / "train_log.csv") == \
            lr_columns(rollback_run / "train_log.csv")

    def test_remain_block_manifest_retained_set(self, workdir, tmp_path):
        _, config, data_dir, pre_dir = workdir
        out = tmp_path / "remain"
        assert main(["run", "--config", str(config), "--data", str(data_dir),
                     "--checkpoint", str(pre_dir / "pretrained.ckpt"),
                     "--strategy", "remain_block=2", "--out", str(out),
                     "--figures", "false"]) == 0
        doc = json.loads((out / "manifest.json").read_text())
        assert doc["retained_per_period"] == ["none", "B2+FC"]

    def test_unknown_strategy_fails_cleanly(self, workdir, tmp_path, capsys):
        _, config, data_dir, _ = workdir
        code = main(["run", "--config", str(config), "--data", str(data_dir),
                     "--strategy", "sgdr", "--out", str(tmp_path / "x")])
        assert code == 1
        assert "error:" in capsys.readouterr().err


class TestEval:
    def test_report_columns_and_determinism(self, workdir, tmp_path):
        _, config, data_dir, pre_dir = workdir
        outs = []
        for name in ("e1", "e2"):
            out = tmp_path / name
            assert main(["eval", "--config", str(config), "--data", str(data_dir),
                         "--checkpoint", str(pre_dir / "pretrained.ckpt"),
                         "--out", str(out), "--figures", "false"]) == 0
            outs.append((out / "report.csv").read_text())
        assert outs[0] == outs[1]
        assert outs[0].splitlines()[0] == "map,rank1,rank5,rank10"

    def test_flip_fusion_flag_changes_report(self, workdir, tmp_path):
        _, config, data_dir, pre_dir = workdir
        reports = {}
        for flag in ("true", "false"):
            out = tmp_path / f"fuse_{flag}"
            assert main(["eval", "--config", str(config), "--data", str(data_dir),
                         "--checkpoint", str(pre_dir / "pretrained.ckpt"),
                         "--out", str(out), "--figures", "false",
                         "--flip-fusion", flag]) == 0
            reports[flag] = (out / "report.csv").read_text()
        assert reports["true"] != reports["false"]


class TestAblation:
    def test_rows_per_period_and_figure(self, workdir, tmp_path):
        _, config, data_dir, pre_dir = workdir
        out = tmp_path / "abl"
        assert main(["ablation", "--config", str(config), "--data", str(data_dir),
                     "--checkpoint", str(pre_dir / "pretrained.ckpt"),
                     "--strategies", "rollback,baseline,base_cy",
                     "--seeds", "0", "--out", str(out)]) == 0
        rows = (out / "ablation.csv").read_text().splitlines()
        assert rows[0] == "strategy,period,tuned,map_mean,map_std,rank1_mean,rank1_std,seeds"
        strategies = {r.split(",")[0] for r in rows[1:]}
        assert strategies == {"rollback", "baseline", "base_cy"}
        rollback_rows = [r for r in rows[1:] if r.startswith("rollback,")]
        assert len(rollback_rows) == 2  # one row per period
        assert (out / "comparison.png").exists()
