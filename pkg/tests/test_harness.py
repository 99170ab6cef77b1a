import csv
import io
import json

import numpy as np
import pytest

from helpers import experiment_doc, write_change_scene
from cloudfill.cloud_sim import CloudShapeParams
from cloudfill.harness import (
    ConfigError,
    LrBias,
    build_scene,
    config_record,
    load_config,
    method_params,
    parse_config,
    run_experiment,
)
from cloudfill.metrics import evaluate
from cloudfill.pipeline import MethodId
from cloudfill.poisson import SolverOptions
from cloudfill.raster import Raster, block_downsample, load_mask, load_raster, save_raster
from cloudfill.stmrf import StmrfParams
from cloudfill.wlr import WlrParams

ALL = [m.value for m in MethodId]
FAST = [
    "poisson",
    {"method": "wlr", "params": {"window": 7, "max_window": 21, "min_samples": 10, "n_similar": 20}},
    {"method": "stmrf", "params": {"icm_iters": 2}},
    {"method": "proposed", "params": {"fusion_window": 15}},
]


def write_config(tmp_path, doc):
    path = tmp_path / "experiment.json"
    path.write_text(json.dumps(doc))
    return path


class TestConfig:
    def test_defaults_and_aliases(self, tmp_path):
        doc = {
            "target": "t", "reference": "r",
            "methods": ["poisson",
                        {"method": "wlr", "params": {"window": 11}},
                        {"method": "stmrf", "params": {"lambda": 0.2, "candidates": 4}},
                        {"method": "proposed", "params": {"fusion_window": 9, "tol": 1e-9}}],
        }
        cfg = parse_config(doc, tmp_path)
        assert cfg.scale == 8 and cfg.seed == 0 and cfg.lr_mode == "derive"
        assert cfg.target_path == tmp_path / "t"
        assert cfg.out_dir == tmp_path / "out"
        assert cfg.mask == CloudShapeParams()
        p = [m.params for m in cfg.methods]
        assert p[0] == SolverOptions()
        assert p[1] == WlrParams(initial_window=11)
        assert p[2] == StmrfParams(lambda_smooth=0.2, candidate_count=4)
        assert p[3].starfm.window == 9 and p[3].solver.tol == 1e-9

    def test_mask_seed_follows_config_seed(self, tmp_path):
        cfg = parse_config({"target": "t", "reference": "r", "seed": 7, "methods": ["wlr"],
                            "mask": {"coverage": 0.3}}, tmp_path)
        assert cfg.mask == CloudShapeParams(coverage_fraction=0.3, seed=7)

    def test_mask_path_and_lr_paths(self, tmp_path):
        cfg = parse_config({"target": "t", "reference": "r", "methods": ["poisson"], "mask": "m",
                            "lr_mode": {"ref_lr": "a", "target_lr": "b"}}, tmp_path)
        assert cfg.mask == tmp_path / "m"
        assert cfg.lr_mode == (tmp_path / "a", tmp_path / "b")

    @pytest.mark.parametrize(
        "doc",
        [
            {"reference": "r", "methods": ["poisson"]},
            {"target": "t", "reference": "r", "methods": []},
            {"target": "t", "reference": "r", "methods": ["kriging"]},
            {"target": "t", "reference": "r", "methods": [{"method": "wlr", "params": {"bogus": 1}}]},
            {"target": "t", "reference": "r", "methods": [{"method": "wlr", "params": {"window": 4}}]},
            {"target": "t", "reference": "r", "methods": ["poisson"], "colour": "red"},
            {"target": "t", "reference": "r", "methods": ["poisson"], "scale": 0},
            {"target": "t", "reference": "r", "methods": ["poisson"], "seed": "x"},
            {"target": "t", "reference": "r", "methods": ["poisson"], "lr_mode": "guess"},
            {"target": "t", "reference": "r", "methods": ["poisson"], "mask": {"coverage": 2.0}},
            {"target": "t", "reference": "r", "methods": "poisson"},
        ],
    )
    def test_invalid(self, tmp_path, doc):
        with pytest.raises(ConfigError):
            parse_config(doc, tmp_path)

    def test_load_config_errors(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "missing.json")
        bad = tmp_path / "bad.json"
        bad.write_text("[1, 2]")
        with pytest.raises(ConfigError):
            load_config(bad)

    def test_method_params_proposed_split(self):
        p = method_params(MethodId.PROPOSED, {"max_iters": 50, "n_classes": 3})
        assert p.solver.max_iters == 50 and p.starfm.n_classes == 3

    def test_config_record_is_complete_json(self, tmp_path):
        cfg = parse_config({"target": "t", "reference": "r", "methods": ALL}, tmp_path)
        rec = json.loads(json.dumps(config_record(cfg)))
        assert [m["method"] for m in rec["methods"]] == ALL
        assert rec["methods"][1]["params"]["n_similar"] == 40
        assert rec["mask"]["coverage_fraction"] == 0.25


class TestLrBias:
    def test_identity_returns_input(self):
        r = Raster(np.ones((2, 2, 2)))
        assert LrBias().apply(r) is r

    def test_per_band(self):
        r = Raster(np.ones((2, 2, 2)))
        out = LrBias((1.0, 2.0), (0.0, 0.5)).apply(r)
        np.testing.assert_array_equal(out.values[:, 0, 0], [1.0, 2.5])


class TestScene:
    def test_gain_and_coarse_size(self, tmp_path):
        write_change_scene(tmp_path, 3)
        cfg = parse_config(experiment_doc(3, ["poisson"], gain=1.1), tmp_path)
        bundle, original = build_scene(cfg)
        assert bundle.target_lr.shape == (8, 8) and bundle.ref_lr.shape == (8, 8)
        expected = 1.1 * block_downsample(original, 8).values
        assert np.abs(bundle.target_lr.values - expected).max() <= 1e-12
        np.testing.assert_array_equal(bundle.target_hr.values[:, bundle.mask.cells], 1.0)
        assert 0.23 <= bundle.mask.coverage <= 0.27

    def test_mask_file_shape_checked(self, tmp_path):
        write_change_scene(tmp_path, 3)
        save_raster(Raster(np.zeros((1, 4, 4))), tmp_path / "small")
        doc = experiment_doc(3, ["poisson"])
        doc["mask"] = "small"
        with pytest.raises(ConfigError):
            build_scene(parse_config(doc, tmp_path))


class TestRun:
    def test_no_change_poisson_is_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        scene = Raster(0.3 + 0.1 * rng.random((2, 64, 64)))
        save_raster(scene, tmp_path / "truth_t0", dtype="f64")
        save_raster(scene, tmp_path / "ref_t1", dtype="f64")
        report = run_experiment(parse_config(experiment_doc(1, ["poisson"]), tmp_path))
        m = report.outcomes[0].metrics
        assert abs(m.mean_cc - 1.0) <= 1e-6
        assert m.mean_nmse <= 1e-10

    def test_outputs_and_csv_recomputation(self, tmp_path):
        write_change_scene(tmp_path, 4)
        cfg = parse_config(experiment_doc(4, FAST), tmp_path)
        report = run_experiment(cfg)
        assert report.exit_code == 0 and not report.failed
        out = cfg.out_dir
        for name in ["mask", "cloudy", "ref_lr", "target_lr"] + ALL:
            assert (out / f"{name}.json").exists() and (out / f"{name}.rasb").exists()
        for name in ["original", "cloudy"] + ALL:
            assert (out / f"{name}.ppm").exists()
        assert (out / "mask.pgm").exists()
        assert (out / "summary.txt").read_text() == report.summary

        original = load_raster(tmp_path / "truth_t0")
        mask = load_mask(out / "mask")
        rows = list(csv.DictReader(io.StringIO((out / "metrics.csv").read_text())))
        assert len(rows) == 4 * 4
        for name in ALL:
            again = evaluate(original, load_raster(out / name), mask)
            mine = [r for r in rows if r["method"] == name]
            for r in mine:
                ref = again.per_band[int(r["band"])] if r["band"] != "mean" else None
                exp = (ref.cc, ref.nmse, ref.uiqi) if ref else (again.mean_cc, again.mean_nmse, again.mean_uiqi)
                got = (float(r["cc"]), float(r["nmse"]), float(r["uiqi"]))
                assert np.abs(np.subtract(got, exp)).max() <= 1e-12

        doc = json.loads((out / "report.json").read_text())
        assert [m["method"] for m in doc["methods"]] == ALL
        assert doc["mask_cells"] == mask.count
        assert "wall_time" not in json.dumps(doc)

    def test_reruns_are_byte_identical(self, tmp_path):
        write_change_scene(tmp_path, 5)
        cfg = parse_config(experiment_doc(5, FAST), tmp_path)
        files = ["metrics.csv", "report.json", "summary.txt"]
        run_experiment(cfg, workers=1)
        first = {f: (cfg.out_dir / f).read_bytes() for f in files}
        run_experiment(cfg, workers=4)
        assert first == {f: (cfg.out_dir / f).read_bytes() for f in files}

    def test_method_failure_is_recorded(self, tmp_path):
        write_change_scene(tmp_path, 6)
        methods = [{"method": "poisson", "params": {"max_iters": 1}}, "stmrf"]
        cfg = parse_config(experiment_doc(6, methods), tmp_path)
        report = run_experiment(cfg)
        assert report.failed == ["poisson"] and report.exit_code == 2
        assert "ConvergenceError" in report.outcomes[0].error
        assert report.outcomes[1].metrics is not None
        doc = json.loads((cfg.out_dir / "report.json").read_text())
        assert "error" in doc["methods"][0] and "metrics" in doc["methods"][1]
        assert "failed" in report.summary
        assert not (cfg.out_dir / "poisson.rasb").exists()

    def test_proposed_beats_poisson_on_change(self, tmp_path):
        write_change_scene(tmp_path, 7)
        report = run_experiment(parse_config(experiment_doc(7, ["poisson", "proposed"]), tmp_path))
        poisson, proposed = (o.metrics for o in report.outcomes)
        assert proposed.mean_cc > poisson.mean_cc
        assert proposed.mean_nmse < poisson.mean_nmse
