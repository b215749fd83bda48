import csv
import hashlib
import json

import numpy as np
import pytest

from uaclip import errors
from uaclip.cli import main
from uaclip.demand import PRESETS
from uaclip.imaging import RasterImage, write_ppm

SMALL = {"dims": {"d": 8, "G": 4, "H": 64, "m": 0}, "epochs": 3, "batch_size": 8, "learning_rate": 0.01}


def digest(folder):
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(folder.rglob("*")) if p.is_file()}


def write_json(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    spec = {"n": 24, "seed": 3, "sigma": 0.0, "coefficients": {k: list(v) for k, v in PRESETS["amazon"]["coefficients"].items()}}
    assert main(["gen-synth", write_json(root / "spec.json", spec), "--out-dir", str(root / "ds"), "--no-figures"]) == 0
    cfg = write_json(root / "train.json", SMALL)
    return root, root / "ds", cfg


@pytest.fixture(scope="module")
def trained(dataset):
    root, ds, cfg = dataset
    out = root / "train_ua"
    code = main(["train", str(ds / "manifest.csv"), "--model", str(ds / "planted_model.json"), "--train-config", cfg,
                 "--alpha", "0.5", "--seed", "1", "--out-dir", str(out), "--no-figures"])
    assert code == 0
    return out / "params.json"


class TestGenSynth:
    def test_minimal(self, tmp_path):
        spec = write_json(tmp_path / "s.json", {"n": 2, "seed": 0})
        assert main(["gen-synth", spec, "--out-dir", str(tmp_path / "a")]) == 0
        assert len(list((tmp_path / "a" / "images").glob("*.ppm"))) == 2
        assert len(read_csv(tmp_path / "a" / "manifest.csv")) == 2
        assert main(["--out-dir", str(tmp_path / "b"), "gen-synth", spec]) == 0
        assert digest(tmp_path / "a") == digest(tmp_path / "b")

    def test_infeasible(self, tmp_path, capsys):
        spec = write_json(tmp_path / "s.json", {"n": 1, "targets": [{"brightness": 0.99, "symmetry": 0.1}]})
        assert main(["gen-synth", spec, "--out-dir", str(tmp_path)]) == errors.InfeasibleTarget.exit_status
        assert capsys.readouterr().err.startswith("error:infeasible-target:")


class TestExtract:
    def test_outputs(self, dataset, tmp_path):
        _, ds, _ = dataset
        assert main(["extract", str(ds / "manifest.csv"), "--out-dir", str(tmp_path)]) == 0
        rows = read_csv(tmp_path / "attributes.csv")
        assert len(rows) == 24 and set(rows[0]) == {"id", "colorfulness", "brightness", "symmetry", "aesthetic"}
        scaler = json.loads((tmp_path / "scaler.json").read_text())
        assert set(scaler) == {"colorfulness", "brightness", "symmetry", "aesthetic"}
        assert all(b["min"] <= b["max"] for b in scaler.values())

    def test_missing_image(self, tmp_path, capsys):
        (tmp_path / "m.csv").write_text("id,image_path\na,nope.ppm\n")
        assert main(["extract", str(tmp_path / "m.csv"), "--out-dir", str(tmp_path)]) == errors.IOFailure.exit_status
        assert capsys.readouterr().err.startswith("error:io-failure:")


class TestFitDemand:
    def test_recovers_planted(self, dataset, tmp_path):
        _, ds, _ = dataset
        args = ["fit-demand", str(ds / "observations.csv"), str(ds / "schema.json"),
                "--orientation", "lower_outcome_is_demand", "--out-dir", str(tmp_path)]
        assert main(args) == 0
        model = json.loads((tmp_path / "model.json").read_text())
        assert len(model["linear"]) + len(model["quadratic"]) == 8
        for k, (b1, b2) in PRESETS["amazon"]["coefficients"].items():
            assert abs(model["linear"][k] - b1) <= 1e-8
            assert abs(model["quadratic"][k] - b2) <= 1e-8
        assert (tmp_path / "demand_curves.png").exists()

    def test_rank_deficient(self, tmp_path, capsys):
        rows = "id,c,y\n" + "".join(f"o{i},0.5,{i}\n" for i in range(8))
        (tmp_path / "obs.csv").write_text(rows)
        schema = write_json(tmp_path / "schema.json", {"attributes": ["c"], "outcome": "y"})
        code = main(["fit-demand", str(tmp_path / "obs.csv"), schema, "--orientation", "higher_outcome_is_demand",
                     "--out-dir", str(tmp_path)])
        assert code == errors.RankDeficientDesign.exit_status
        err = capsys.readouterr().err.strip().splitlines()
        assert len(err) == 1 and err[0].startswith("error:rank-deficient-design:")


class TestTrain:
    def test_standard_matches_alpha_zero(self, dataset, tmp_path):
        _, ds, cfg = dataset
        base = ["train", str(ds / "manifest.csv"), "--train-config", cfg, "--seed", "2", "--no-figures"]
        assert main(base + ["--alpha", "0", "--model", str(ds / "planted_model.json"), "--out-dir", str(tmp_path / "a")]) == 0
        assert main(base + ["--objective", "standard", "--out-dir", str(tmp_path / "b")]) == 0
        ra = json.loads((tmp_path / "a" / "report.json").read_text())
        rb = json.loads((tmp_path / "b" / "report.json").read_text())
        assert ra["epoch_losses"] == rb["epoch_losses"]
        assert (tmp_path / "a" / "params.json").read_bytes() == (tmp_path / "b" / "params.json").read_bytes()

    def test_idempotent(self, dataset, trained, tmp_path):
        root, ds, cfg = dataset
        code = main(["train", str(ds / "manifest.csv"), "--model", str(ds / "planted_model.json"), "--train-config", cfg,
                     "--alpha", "0.5", "--seed", "1", "--out-dir", str(tmp_path), "--no-figures"])
        assert code == 0
        assert (tmp_path / "params.json").read_bytes() == trained.read_bytes()
        assert (tmp_path / "report.json").read_bytes() == (trained.parent / "report.json").read_bytes()

    def test_figure_written(self, dataset, tmp_path):
        _, ds, cfg = dataset
        assert main(["train", str(ds / "manifest.csv"), "--train-config", cfg, "--epochs", "1",
                     "--out-dir", str(tmp_path)]) == 0
        assert (tmp_path / "loss.png").read_bytes().startswith(b"\x89PNG")

    def test_config_file_defaults(self, dataset, tmp_path):
        _, ds, cfg = dataset
        conf = write_json(tmp_path / "c.json", {"epochs": 2, "no_figures": True})
        assert main(["train", str(ds / "manifest.csv"), "--train-config", cfg, "--config", conf,
                     "--out-dir", str(tmp_path / "o")]) == 0
        assert len(json.loads((tmp_path / "o" / "report.json").read_text())["epoch_losses"]) == 2
        assert not (tmp_path / "o" / "loss.png").exists()

    def test_bad_train_config(self, dataset, tmp_path, capsys):
        _, ds, _ = dataset
        bad = write_json(tmp_path / "bad.json", {"learning_rate": -1})
        assert main(["train", str(ds / "manifest.csv"), "--train-config", bad, "--out-dir", str(tmp_path)]) == 26
        assert capsys.readouterr().err.startswith("error:invalid-config:")


class TestRank:
    def test_rank_and_reference(self, dataset, trained, tmp_path):
        _, ds, _ = dataset
        args = ["rank", str(ds / "manifest.csv"), "--prompt", "bright red plain lamp", "--params", str(trained),
                "--model", str(ds / "planted_model.json"), "--alpha", "0.3",
                "--reference", str(ds / "images" / "item00000.ppm")]
        assert main(args + ["--out-dir", str(tmp_path / "a")]) == 0
        rows = read_csv(tmp_path / "a" / "ranking.csv")
        assert len(rows) == 24
        us = [float(r["US"]) for r in rows]
        assert us == sorted(us, reverse=True)
        assert float([r for r in rows if r["id"] == "item00000"][0]["fidelity"]) == pytest.approx(1.0, abs=1e-9)
        assert main(args + ["--out-dir", str(tmp_path / "b")]) == 0
        assert digest(tmp_path / "a") == digest(tmp_path / "b")

    def test_alpha_zero_is_similarity_order(self, dataset, trained, tmp_path):
        _, ds, _ = dataset
        assert main(["rank", str(ds / "manifest.csv"), "--prompt", "dark blue sofa", "--params", str(trained),
                     "--model", str(ds / "planted_model.json"), "--out-dir", str(tmp_path)]) == 0
        rows = read_csv(tmp_path / "ranking.csv")
        assert [r["id"] for r in rows] == [r["id"] for r in sorted(rows, key=lambda r: (-float(r["s"]), r["id"]))]


class TestOcclude:
    def test_outputs(self, dataset, trained, tmp_path):
        _, ds, _ = dataset
        img = str(ds / "images" / "item00003.ppm")
        base = ["occlude", img, "--prompt", "lamp", "--params", str(trained), "--grid", "4x4"]
        assert main(base + ["--out-dir", str(tmp_path / "a")]) == 0
        rows = read_csv(tmp_path / "a" / "occlusion.csv")
        assert len(rows) == 16
        assert (tmp_path / "a" / "occlusion.pgm").read_bytes().startswith(b"P5\n32 32\n255\n")
        assert (tmp_path / "a" / "occlusion.png").exists()
        assert main(base + ["--out-dir", str(tmp_path / "b")]) == 0
        assert digest(tmp_path / "a") == digest(tmp_path / "b")

    def test_ua_alpha_zero_matches_clip(self, dataset, trained, tmp_path):
        _, ds, _ = dataset
        img = str(ds / "images" / "item00003.ppm")
        common = [img, "--prompt", "lamp", "--params", str(trained), "--no-figures"]
        assert main(["occlude", *common, "--out-dir", str(tmp_path / "c")]) == 0
        assert main(["occlude", *common, "--scorer", "ua", "--model", str(ds / "planted_model.json"),
                     "--alpha", "0", "--out-dir", str(tmp_path / "u")]) == 0
        assert (tmp_path / "c" / "occlusion.csv").read_bytes() == (tmp_path / "u" / "occlusion.csv").read_bytes()

    def test_corpus_mean_fill(self, dataset, trained, tmp_path):
        _, ds, _ = dataset
        assert main(["occlude", str(ds / "images" / "item00001.ppm"), "--prompt", "mug", "--params", str(trained),
                     "--fill", "corpus-mean", "--corpus", str(ds / "manifest.csv"), "--grid", "2x2",
                     "--no-figures", "--out-dir", str(tmp_path)]) == 0

    def test_bad_grid(self, dataset, trained, tmp_path):
        _, ds, _ = dataset
        code = main(["occlude", str(ds / "images" / "item00001.ppm"), "--prompt", "mug", "--params", str(trained),
                     "--grid", "seven", "--out-dir", str(tmp_path)])
        assert code == errors.InvalidConfig.exit_status


class TestBoundCheck:
    def test_report(self, tmp_path):
        joint = write_json(tmp_path / "j.json", {"sizes": [2, 2], "table": [[0.4, 0.1], [0.1, 0.4]]})
        h = write_json(tmp_path / "h.json", {"h": [0.0, 1.0]})
        args = ["bound-check", joint, h, "--alpha", "1.0", "--N", "4", "--trials", "200", "--seed", "5"]
        assert main(args + ["--out-dir", str(tmp_path / "a")]) == 0
        rep = json.loads((tmp_path / "a" / "bound_report.json").read_text())
        assert rep["holds"] and rep["trials"] == 200
        assert main(args + ["--out-dir", str(tmp_path / "b")]) == 0
        assert digest(tmp_path / "a") == digest(tmp_path / "b")

    def test_invalid_joint(self, tmp_path, capsys):
        joint = write_json(tmp_path / "j.json", {"table": [[0.5, 0.4]]})
        h = write_json(tmp_path / "h.json", [0, 0])
        assert main(["bound-check", joint, h, "--out-dir", str(tmp_path)]) == errors.InvalidDistribution.exit_status
        assert capsys.readouterr().err.startswith("error:invalid-distribution:")


class TestEval:
    def test_table(self, dataset, trained, tmp_path):
        root, ds, cfg = dataset
        assert main(["train", str(ds / "manifest.csv"), "--train-config", cfg, "--seed", "1",
                     "--out-dir", str(tmp_path / "base"), "--no-figures"]) == 0
        args = ["eval", str(ds / "manifest.csv"), "--params", str(trained),
                "--baseline-params", str(tmp_path / "base" / "params.json"),
                "--model", str(ds / "planted_model.json"), "--alpha", "0.5"]
        assert main(args + ["--out-dir", str(tmp_path / "a")]) == 0
        rows = read_csv(tmp_path / "a" / "metrics.csv")
        assert [(r["encoder"], r["scorer"]) for r in rows] == [
            ("ua", "similarity"), ("ua", "ua"), ("baseline", "similarity"), ("baseline", "ua")]
        for r in rows:
            assert 0 <= float(r["recall_at_1"]) <= 1
            assert {"mean_demand", "mean_fidelity", "mean_colorfulness"} <= set(r)
        assert main(args + ["--out-dir", str(tmp_path / "b")]) == 0
        assert digest(tmp_path / "a") == digest(tmp_path / "b")

    def test_utility_selects_higher_demand(self, trained, tmp_path):
        # one item carries all the utility; a large alpha sends every query to it
        rng = np.random.default_rng(0)
        lines = ["id,image_path,text,h"]
        for i, word in enumerate(["red", "green", "blue", "teal", "pink", "gray"]):
            write_ppm(tmp_path / f"{i}.ppm", RasterImage(rng.integers(0, 256, (32, 32, 3)) / 255.0))
            lines.append(f"x{i},{i}.ppm,{word} plain lamp,{10.0 if i == 5 else 0.0}")
        (tmp_path / "m.csv").write_text("\n".join(lines) + "\n")
        assert main(["eval", str(tmp_path / "m.csv"), "--params", str(trained), "--alpha", "100",
                     "--no-figures", "--out-dir", str(tmp_path / "o")]) == 0
        rows = {r["scorer"]: r for r in read_csv(tmp_path / "o" / "metrics.csv")}
        assert float(rows["ua"]["mean_demand"]) == 10.0
        assert float(rows["ua"]["mean_demand"]) > float(rows["similarity"]["mean_demand"])


def test_unknown_subcommand():
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code != 0
