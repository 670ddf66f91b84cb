"""CLI surface: exit codes, command flows, output formats."""

import json
import os

import numpy as np
import pytest

from conftest import run_config_dict
from slimvit import checkpoint as ckpt_io
from slimvit.cli import main
from slimvit.config import parse_run_config
from slimvit.runner import sweep_checkpoint


def write_config(tmp_path, name="run.json", **kw):
    out_dir = tmp_path / "out"
    raw = run_config_dict(out_dir, **kw)
    path = tmp_path / name
    path.write_text(json.dumps(raw))
    return str(path), raw


class TestExitCodes:
    def test_usage_error(self, capsys):
        assert main([]) == 1
        assert main(["no-such-command"]) == 1

    def test_missing_config_is_io_error(self, tmp_path, capsys):
        assert main(["train", "--config", str(tmp_path / "absent.json")]) == 3
        assert not (tmp_path / "out").exists()  # no partial outputs

    def test_invalid_config_is_validation_error(self, tmp_path, capsys):
        path, raw = write_config(tmp_path, step="1/3")
        assert main(["train", "--config", path]) == 2

    def test_success(self, tmp_path, capsys):
        path, raw = write_config(tmp_path, epochs=1)
        assert main(["train", "--config", path]) == 0


class TestFlopsCommand:
    def test_prints_counts(self, tmp_path, capsys):
        path, _ = write_config(tmp_path)
        assert main(["flops", "--config", path, "--ratio", "1"]) == 0
        out = capsys.readouterr().out
        assert "ratio=1 " in out and "flops=3755264" in out

    def test_deit_s_scale(self, tmp_path, capsys):
        raw = run_config_dict(tmp_path / "out")
        raw["model"].update(image_size=224, patch_size=16, embed_dim=384,
                            heads=6, depth=12, num_classes=1000)
        raw["grid"]["step"] = "1/16"
        raw["data"].update(image_size=224, classes=1000)
        path = tmp_path / "deit.json"
        path.write_text(json.dumps(raw))
        assert main(["flops", "--config", str(path), "--ratio", "1"]) == 0
        printed = capsys.readouterr().out
        value = int(printed.split("flops=")[1].split()[0])
        assert abs(value - 4.6e9) / 4.6e9 <= 0.10


class TestCommandFlows:
    def test_train_sweep_probe_export(self, tmp_path, capsys):
        cfg_path, raw = write_config(tmp_path, epochs=1)
        assert main(["train", "--config", cfg_path]) == 0
        ckpt = os.path.join(raw["out"]["dir"], "model.sclc")
        assert os.path.exists(ckpt)

        sweep_csv = str(tmp_path / "sweep.csv")
        assert main(["sweep", "--config", cfg_path, "--checkpoint", ckpt,
                     "--out", sweep_csv]) == 0
        lines = open(sweep_csv).read().splitlines()
        assert lines[0].startswith("ratio,acc,ce,params,flops")
        assert len(lines) == 5  # header + X=4 rows

        probe_csv = str(tmp_path / "probe.csv")
        assert main(["probe", "--config", cfg_path, "--checkpoint", ckpt,
                     "--ratios", "7/16", "--out", probe_csv]) == 0
        header, row = open(probe_csv).read().splitlines()
        assert "gap" in header.split(",")
        assert row.startswith("7/16,1,")

        export_path = str(tmp_path / "quarter.sclc")
        assert main(["export-subnet", "--checkpoint", ckpt, "--ratio", "1/4",
                     "--mode", "trailing", "--out", export_path]) == 0
        run_cfg = parse_run_config(raw)
        in_place = sweep_checkpoint(ckpt, run_cfg, ratios=["1/4"])
        exported = sweep_checkpoint(export_path, run_cfg, ratios=["1"])
        assert exported.rows[0].accuracy == in_place.rows[0].accuracy
        assert abs(exported.rows[0].ce - in_place.rows[0].ce) <= 1e-5

    def test_pretrain_teacher_checkpoint_round_trips(self, tmp_path, capsys):
        cfg_path, raw = write_config(tmp_path, epochs=1, checkpoint="teacher.sclc")
        assert main(["pretrain-teacher", "--config", cfg_path]) == 0
        ckpt = os.path.join(raw["out"]["dir"], "teacher.sclc")
        loaded = ckpt_io.load(ckpt)
        resaved = str(tmp_path / "resaved.sclc")
        ckpt_io.save(resaved, loaded)
        assert open(ckpt, "rb").read() == open(resaved, "rb").read()

    def test_regranularize_command(self, tmp_path, capsys):
        cfg_path, raw = write_config(tmp_path, epochs=1)
        assert main(["train", "--config", cfg_path]) == 0
        assert main(["regranularize", "--config", cfg_path,
                     "--step", "1/8", "--epochs", "1"]) == 0
        ckpt = os.path.join(raw["out"]["dir"], "model.sclc")
        assert str(ckpt_io.load(ckpt).model.grid.step) == "1/8"

    def test_rerun_same_seed_byte_identical(self, tmp_path, capsys):
        cfg_a, raw_a = write_config(tmp_path, name="a.json", epochs=1)
        assert main(["train", "--config", cfg_a]) == 0
        ckpt = os.path.join(raw_a["out"]["dir"], "model.sclc")
        first = open(ckpt, "rb").read()
        os.remove(ckpt)
        os.remove(os.path.join(raw_a["out"]["dir"], "metrics.csv"))
        assert main(["train", "--config", cfg_a]) == 0
        assert open(ckpt, "rb").read() == first
