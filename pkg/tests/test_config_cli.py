"""Config round-trip/validation and end-to-end CLI runs of every subcommand."""

import json
from pathlib import Path

import numpy as np
import pytest

from ganlab import config as cfgmod
from ganlab.cli import main
from ganlab.io import read_jsonl, read_pgm

SAMPLE = """
schema = 1

[experiment]
kind = "train"
seed = 3
out = "runs/demo"

[dataset]
source = "phantom2d"
count = 8
extent = 16
lesions = 1

[model]
family = "pggan"
base = 4
target = 8
scale_divisor = 64

[schedule]
steps_per_stage = 3
batch_size = 4
"""


class TestConfig:
    def test_roundtrip_identity(self):
        cfg = cfgmod.parse_config(SAMPLE)
        text = cfgmod.serialize_config(cfg)
        again = cfgmod.parse_config(text)
        assert cfg == again
        assert cfgmod.parse_config(cfgmod.serialize_config(again)) == cfg

    def test_hash_stable(self):
        a = cfgmod.parse_config(SAMPLE)
        b = cfgmod.parse_config(SAMPLE)
        assert a.hash() == b.hash()

    def test_unknown_section_rejected(self):
        with pytest.raises(cfgmod.ConfigError, match="unknown section"):
            cfgmod.parse_config("schema = 1\n[mystery]\nx = 1\n")

    def test_unknown_key_rejected(self):
        with pytest.raises(cfgmod.ConfigError, match="unknown key"):
            cfgmod.parse_config("schema = 1\n[model]\nwings = 2\n")

    def test_missing_schema_rejected(self):
        with pytest.raises(cfgmod.ConfigError, match="schema"):
            cfgmod.parse_config("[model]\nfamily = \"pggan\"\n")

    def test_wrong_type_rejected(self):
        with pytest.raises(cfgmod.ConfigError, match="expects int"):
            cfgmod.parse_config('schema = 1\n[dataset]\ncount = "many"\n')

    def test_bad_family_rejected(self):
        with pytest.raises(cfgmod.ConfigError, match="family"):
            cfgmod.parse_config('schema = 1\n[model]\nfamily = "vae"\n')

    def test_defaults_fill_in(self):
        cfg = cfgmod.parse_config("schema = 1\n")
        assert cfg.get("objective", "lambda_gp") == 10.0
        assert cfg.get("model", "family") == "pggan"


def write_cfg(tmp_path: Path, text: str, name="exp.cfg") -> Path:
    p = tmp_path / name
    p.write_text(text)
    return p


class TestCliPhantom:
    def test_deterministic_scenes_on_disk(self, tmp_path):
        out1, out2 = tmp_path / "a", tmp_path / "b"
        for out in (out1, out2):
            assert main(["phantom", "--seed", "7", "--count", "4", "--dims", "2",
                         "--extent", "32", "--out", str(out)]) == 0
        for name in ("s0000.pgm", "s0001.pgm"):
            np.testing.assert_array_equal(read_pgm(out1 / name), read_pgm(out2 / name))
        manifest = json.loads((out1 / "manifest.json").read_text())
        assert manifest["seed"] == 7 and manifest["files"]


class TestCliTrain:
    def test_pggan_rerun_bit_identical_loss_log(self, tmp_path):
        cfg = write_cfg(tmp_path, SAMPLE)
        logs = []
        for name in ("r1", "r2"):
            out = tmp_path / name
            assert main(["train", "--config", str(cfg), "--out", str(out)]) == 0
            logs.append((out / "losses.jsonl").read_text())
        assert logs[0] == logs[1]
        manifest = json.loads((tmp_path / "r1" / "manifest.json").read_text())
        assert manifest["config_hash"]

    @pytest.mark.parametrize("family,extra", [
        ("dcgan", '[schedule]\nsteps = 3\nbatch_size = 4\n'),
        ("wgan", '[schedule]\nsteps = 2\nbatch_size = 4\n'),
        ("simgan", '[schedule]\nsteps = 3\nbatch_size = 2\n'),
        ("munit", '[schedule]\nsteps = 2\nbatch_size = 2\n'),
    ])
    def test_other_families_run(self, tmp_path, family, extra):
        text = (f'schema = 1\n[experiment]\nseed = 1\n[dataset]\ncount = 6\nextent = 16\n'
                f'[model]\nfamily = "{family}"\ntarget = 8\nwidth = 2\nlatent = 8\n{extra}')
        cfg = write_cfg(tmp_path, text, f"{family}.cfg")
        out = tmp_path / family
        assert main(["train", "--config", str(cfg), "--out", str(out)]) == 0
        assert (out / "losses.jsonl").exists()
        assert (out / "generator.glt").exists()

    def test_mcgan_runs(self, tmp_path):
        text = ('schema = 1\n[experiment]\nseed = 2\n'
                '[dataset]\nsource = "phantom3d"\ncount = 3\nextent = 32\nlesions = 1\n'
                '[model]\nfamily = "mcgan"\nvoi = 16\nbox = 8\nwidth = 2\n'
                '[schedule]\nsteps = 2\nbatch_size = 2\n')
        cfg = write_cfg(tmp_path, text, "mcgan.cfg")
        out = tmp_path / "mcgan"
        assert main(["train", "--config", str(cfg), "--out", str(out)]) == 0
        assert (out / "generator.glt").exists()

    def test_invalid_config_is_user_error(self, tmp_path):
        cfg = write_cfg(tmp_path, 'schema = 1\n[model]\nfamily = "hologram"\n')
        assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "x")]) == 1


class TestCliSynthAndDetect:
    def make_cpggan_run(self, tmp_path, target=8):
        text = ('schema = 1\n[experiment]\nseed = 4\n'
                '[dataset]\ncount = 8\nextent = 16\nlesions = 1\n'
                f'[model]\nfamily = "cpggan"\nbase = 4\ntarget = {target}\nscale_divisor = 64\n'
                '[schedule]\nsteps_per_stage = 3\nbatch_size = 2\n'
                '[optimizer]\nlearning_rate = 2e-4\n'
                '[objective]\nlabel_flip_period = 3\n')
        cfg = write_cfg(tmp_path, text, "cpggan.cfg")
        out = tmp_path / f"cpggan_run_{target}"
        assert main(["train", "--config", str(cfg), "--out", str(out)]) == 0
        return out

    def test_synth_writes_images_and_annotations(self, tmp_path):
        run = self.make_cpggan_run(tmp_path)
        out = tmp_path / "synth"
        assert main(["synth", "--run", str(run), "--count", "5", "--out", str(out)]) == 0
        assert len(list(out.glob("*.pgm"))) == 5
        recs = list(read_jsonl(out / "annotations.jsonl"))
        assert recs and all("origin" in r for r in recs)

    def test_synth_picks_final_stage_numerically(self, tmp_path):
        # a 4->16 run leaves stage_4/8/16 checkpoints; lexicographic order
        # would wrongly choose stage_8 as "last"
        run = self.make_cpggan_run(tmp_path, target=16)
        assert sorted(p.name for p in run.glob("stage_*.glt")) == [
            "stage_16.glt", "stage_4.glt", "stage_8.glt"]
        out = tmp_path / "synth16"
        assert main(["synth", "--run", str(run), "--count", "3", "--out", str(out)]) == 0
        img = read_pgm(next(iter(sorted(out.glob("*.pgm")))))
        assert img.shape == (16, 16)
        # annotations live in the same coordinates as the produced images
        for rec in read_jsonl(out / "annotations.jsonl"):
            assert all(0 <= o and o + e <= 16 and e >= 1
                       for o, e in zip(rec["origin"], rec["extent"]))

    def test_detect_with_gan_da(self, tmp_path):
        run = self.make_cpggan_run(tmp_path)
        synth = tmp_path / "synthpool"
        assert main(["synth", "--run", str(run), "--count", "6", "--out", str(synth)]) == 0
        # synth pool at 8px is upscaled to the 16px detector resolution
        text = ('schema = 1\n[experiment]\nseed = 5\n'
                '[dataset]\ncount = 10\nextent = 16\nlesions = 1\nsplit = [0.6, 0.2, 0.2]\n'
                '[model]\nfamily = "cpggan"\ngrid = 4\n'
                '[schedule]\nepochs = 1\nbatch_size = 4\n'
                f'[augment]\nkind = "gan"\nratio = 1.0\nsynth_dir = "{synth}"\n')
        cfg = write_cfg(tmp_path, text, "detect.cfg")
        out = tmp_path / "det"
        assert main(["detect", "--config", str(cfg), "--out", str(out)]) == 0
        metrics = json.loads((out / "metrics.json").read_text())
        assert "test_sensitivity" in metrics
        preds = list(read_jsonl(out / "predictions.jsonl"))
        assert all(set(p) == {"image_id", "box", "score"} for p in preds)
        # prediction boxes use pixel corners (composable with annotation
        # files), not normalized units; corners may overhang the image
        coords = [v for p in preds for v in p["box"]]
        assert coords and max(coords) > 2.0
        assert all(-16.0 <= v <= 48.0 for v in coords)


class TestCliEvaluateAndReport:
    def test_evaluate_from_jsonl(self, tmp_path):
        from ganlab.io import write_jsonl
        gt = [{"scan_id": "u0", "origin": [2, 2], "extent": [4, 4],
               "size_class": None, "attenuation_class": None}]
        pred = [{"image_id": "u0", "box": [2.0, 2.0, 6.0, 6.0], "score": 0.9},
                {"image_id": "u0", "box": [10.0, 10.0, 12.0, 12.0], "score": 0.5}]
        write_jsonl(tmp_path / "gt.jsonl", gt)
        write_jsonl(tmp_path / "pred.jsonl", pred)
        out = tmp_path / "metrics.json"
        assert main(["evaluate", "--pred", str(tmp_path / "pred.jsonl"),
                     "--gt", str(tmp_path / "gt.jsonl"), "--iou", "0.25",
                     "--out", str(out)]) == 0
        metrics = json.loads(out.read_text())
        assert metrics["sensitivity"] == 1.0 and metrics["fp_per_unit"] == 1.0

    def test_report_summarizes_run(self, tmp_path):
        cfg = write_cfg(tmp_path, SAMPLE)
        out = tmp_path / "run"
        assert main(["train", "--config", str(cfg), "--out", str(out)]) == 0
        assert main(["report", "--run", str(out)]) == 0
        report = json.loads((out / "report.json").read_text())
        assert "losses" in report and report["manifest"]["config_hash"]

    def test_report_without_manifest_is_user_error(self, tmp_path):
        assert main(["report", "--run", str(tmp_path)]) == 1


class TestCliTsne:
    def test_embedding_outputs(self, tmp_path):
        bundle = tmp_path / "bundle"
        assert main(["phantom", "--seed", "1", "--count", "12", "--extent", "16",
                     "--out", str(bundle)]) == 0
        out = tmp_path / "emb"
        assert main(["tsne", "--bundle", str(bundle), "--perplexity", "4",
                     "--iterations", "300", "--out", str(out)]) == 0
        coords = json.loads((out / "embedding.json").read_text())
        assert len(coords["coordinates"]) == 12
        assert coords["final_kl"] < coords["initial_kl"]
        assert (out / "embedding.svg").exists()


class TestCliAugment:
    def test_classic_augment_bundle(self, tmp_path):
        bundle = tmp_path / "bundle"
        assert main(["phantom", "--seed", "2", "--count", "4", "--extent", "32",
                     "--out", str(bundle)]) == 0
        out = tmp_path / "aug"
        assert main(["augment", "--bundle", str(bundle), "--count", "6",
                     "--out", str(out)]) == 0
        assert len(list(out.glob("*.pgm"))) == 6
        assert (out / "annotations.jsonl").exists()
