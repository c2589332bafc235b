import json

import numpy as np
import pytest

from catscene.cli import _read_config_file, _train_config_from_args, build_parser, main
from catscene.imgio import save_png
from catscene.mapping import BlockMap

TINY_FLAGS = [
    "--input-resize", "8", "--patch-size", "4", "--embed-dim", "8",
    "--depth", "2", "--num-heads", "2", "--epochs", "1",
    "--learning-rate", "1e-3", "--batch-size", "8", "--seed", "0",
]


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cliwork")
    rc = main([
        "generate", "--classes", "3", "--samples-per-class", "10",
        "--center-size", "8", "--seed", "0", "--out", str(root / "ds"),
    ])
    assert rc == 0
    rc = main([
        "train", "--manifest", str(root / "ds" / "manifest.jsonl"),
        "--out", str(root / "run"), *TINY_FLAGS,
    ])
    assert rc == 0
    return root


class TestParser:
    def test_help_exits_zero(self, capsys):
        with pytest.raises(SystemExit) as exc:
            build_parser().parse_args(["--help"])
        assert exc.value.code == 0

    def test_unknown_flag_exits_two(self, capsys):
        with pytest.raises(SystemExit) as exc:
            build_parser().parse_args(["train", "--bogus"])
        assert exc.value.code == 2

    def test_missing_subcommand_exits_two(self, capsys):
        with pytest.raises(SystemExit) as exc:
            build_parser().parse_args([])
        assert exc.value.code == 2

    def test_error_reported_as_json(self, capsys):
        rc = main(["eval", "--checkpoint", "/nonexistent.ckpt", "--manifest", "/nonexistent.jsonl"])
        assert rc == 1
        err = capsys.readouterr().err.strip().splitlines()[-1]
        rec = json.loads(err)
        assert "error" in rec and "message" in rec


class TestConfigFile:
    def test_key_value_parsing(self, tmp_path):
        cfg = tmp_path / "train.cfg"
        cfg.write_text("epochs = 3  # short run\nlearning_rate=0.01\n\nmls = false\nacf=false\n")
        parsed = _read_config_file(cfg)
        assert parsed == {"epochs": "3", "learning_rate": "0.01", "mls": "false", "acf": "false"}

    def test_bad_line_reports_lineno(self, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("epochs=1\nnot a pair\n")
        with pytest.raises(ValueError, match="2"):
            _read_config_file(cfg)

    def test_flags_override_config(self, tmp_path):
        cfg = tmp_path / "train.cfg"
        cfg.write_text("epochs=9\nembed_dim=16\n")
        args = build_parser().parse_args(
            ["train", "--manifest", "m", "--out", "o", "--config", str(cfg), "--epochs", "2"]
        )
        tc = _train_config_from_args(args)
        assert tc.epochs == 2  # flag wins
        assert tc.embed_dim == 16  # config file applies

    def test_no_acf_implies_no_mls(self):
        args = build_parser().parse_args(["train", "--manifest", "m", "--out", "o", "--no-acf"])
        tc = _train_config_from_args(args)
        assert not tc.acf and not tc.mls


class TestPipeline:
    def test_generate_outputs(self, workdir, capsys):
        ds = workdir / "ds"
        assert (ds / "manifest.jsonl").exists()
        assert (ds / "provenance.jsonl").exists()
        assert any((ds / "images").iterdir())

    def test_train_outputs(self, workdir):
        run = workdir / "run"
        assert (run / "checkpoint.ckpt").exists()
        assert (run / "runlog.jsonl").exists()
        # figure rendered alongside the delimited log
        assert (run / "loss_curves.png").exists()
        first = json.loads((run / "runlog.jsonl").read_text().splitlines()[0])
        assert first["kind"] == "run" and first["trainable_params"] > 0

    def test_eval_writes_report_and_figure(self, workdir, capsys):
        out = workdir / "evalout"
        rc = main([
            "eval", "--checkpoint", str(workdir / "run" / "checkpoint.ckpt"),
            "--manifest", str(workdir / "ds" / "manifest.jsonl"),
            "--split", "test", "--out", str(out),
        ])
        assert rc == 0
        rec = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        assert 0.0 <= rec["ba"] <= 1.0
        assert (out / "metrics.json").exists()
        assert (out / "metrics.csv").read_text().startswith("class,accuracy\n")
        assert (out / "confusion.png").exists()

    def test_map_and_score_map(self, workdir, tmp_path, capsys):
        raster = (np.random.default_rng(0).random((24, 40, 3)) * 255).astype(np.uint8)
        save_png(raster, tmp_path / "raster.png")
        out = tmp_path / "mapout"
        rc = main([
            "map", "--raster", str(tmp_path / "raster.png"),
            "--checkpoint", str(workdir / "run" / "checkpoint.ckpt"),
            "--block", "8", "--out", str(out),
        ])
        assert rc == 0
        assert (out / "map.json").exists() and (out / "map.png").exists()
        bm = BlockMap.from_json(out / "map.json")
        assert bm.grid.shape == (3, 5)

        ann = [{"row": 0, "col": 0, "category": int(bm.grid[0, 0])}]
        (tmp_path / "ann.json").write_text(json.dumps(ann))
        rc = main([
            "score-map", "--map", str(out / "map.json"),
            "--annotations", str(tmp_path / "ann.json"), "--out", str(tmp_path / "scoreout"),
        ])
        assert rc == 0
        rec = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        assert rec["oa"] == 1.0
        assert (tmp_path / "scoreout" / "map_confusion.png").exists()

    def test_gradcheck_command(self, capsys):
        rc = main([
            "gradcheck", "--classes", "3", "--batch", "2", "--max-coords", "20",
            *TINY_FLAGS,
        ])
        assert rc == 0
        rec = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        assert rec["failures"] == 0
        assert rec["max_rel_error"] < 1e-5

    def test_export_features_command(self, workdir, tmp_path, capsys):
        out = tmp_path / "features.tsv"
        rc = main([
            "export-features", "--checkpoint", str(workdir / "run" / "checkpoint.ckpt"),
            "--manifest", str(workdir / "ds" / "manifest.jsonl"),
            "--split", "test", "--out", str(out),
        ])
        assert rc == 0
        lines = out.read_text().splitlines()
        rec = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        assert rec["rows"] == len(lines) > 0

    def test_export_attention_command(self, workdir, tmp_path, capsys):
        out = tmp_path / "attn"
        rc = main([
            "export-attention", "--checkpoint", str(workdir / "run" / "checkpoint.ckpt"),
            "--manifest", str(workdir / "ds" / "manifest.jsonl"),
            "--split", "test", "--out", str(out),
        ])
        assert rc == 0
        weights = np.load(out.with_suffix(".npz"))
        assert set(weights.files) == {"surrounding", "global"}
        assert out.with_suffix(".png").exists()

    def test_generate_pairs(self, tmp_path, capsys):
        rc = main([
            "generate", "--classes", "4", "--pairs", "2", "--samples-per-class", "2",
            "--center-size", "8", "--out", str(tmp_path / "ds"),
        ])
        assert rc == 0
        rec = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        assert rec["bayes_center_accuracy"] == 0.5
        rc = main([
            "generate", "--classes", "4", "--pairs", "3", "--samples-per-class", "2",
            "--center-size", "8", "--out", str(tmp_path / "ds2"),
        ])
        assert rc == 1  # 4 classes cannot form 3 pairs

    def test_split_command(self, workdir, capsys):
        rc = main([
            "split", "--manifest", str(workdir / "ds" / "manifest.jsonl"),
            "--ratios", "0.5,0.25,0.25", "--seed", "3",
            "--out", str(workdir / "resplit.jsonl"),
        ])
        assert rc == 0
        counts = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        assert counts["train"] + counts["val"] + counts["test"] == 30
