#!/usr/bin/env python3
"""
Unit tests for experiment configuration, result tables, runs and comparison
"""

import json
import os
import shutil
import tempfile
import unittest
from pathlib import Path

import yaml

import sys
sys.path.insert(0, str(Path(__file__).parent.parent.parent))

from core.errors import ConfigError, NumericalError
from core.lab import (
    EXPERIMENTS,
    ExperimentConfig,
    ResultTable,
    apply_overrides,
    column_units,
    compare,
    load_config,
    read_table,
    resolve_parameters,
    run,
    sidecar_path,
)
from core.sources import Gaussian1D
from core.surrogates import SurrogateKind, SurrogateSpec
from core.tinynet import bayes_distortion
from telemetry.logger import RunLogger

SLOW = os.environ.get("QUANTLAB_SLOW") == "1"


def small_table(values, calc="AUN", se=0.02):
    rows = [{"calc": calc, "x": v, "x_se": se} for v in values]
    return ResultTable("demo", ["calc", "x", "x_se"], rows)


class TestParameters(unittest.TestCase):
    """Test schema resolution."""

    def test_defaults(self):
        params = resolve_parameters("soft-curves", None)
        self.assertEqual(params, {"alphas": [1.0, 5.0, 10.0], "y_min": -2.0, "y_max": 2.0, "points": 401})
        self.assertIsNone(resolve_parameters("rate-surface", {})["mu_grid"])

    def test_every_experiment_has_a_schema(self):
        self.assertEqual(len(EXPERIMENTS), 10)
        for experiment in EXPERIMENTS:
            if experiment == "distortion-sim":
                continue
            self.assertIsInstance(resolve_parameters(experiment, {}), dict)

    def test_coercion(self):
        params = resolve_parameters("entropy-compare", {"mu": 0.25, "sigma_min": 1})
        self.assertEqual(params["mu"], [0.25])
        self.assertIsInstance(params["sigma_min"], float)
        self.assertEqual(resolve_parameters("grad-stats", {"n_trials": 20.0})["n_trials"], 20)

    def test_rejections(self):
        bad = [
            ("no-such-study", {}),
            ("soft-curves", {"colour": "red"}),
            ("distortion-sim", {"calcs": ["AUN"]}),
            ("soft-curves", {"points": "many"}),
            ("soft-curves", {"points": 2.5}),
            ("soft-curves", {"points": True}),
            ("soft-curves", {"alphas": []}),
            ("soft-curves", {"y_min": float("nan")}),
            ("mutual-info", {"calcs": ["FOO"]}),
            ("grad-stats", {"rows": ["AUN"]}),
            ("grad-stats", {"rows": ["XYZ:AUN"]}),
            ("distortion-sim", {"calcs": ["AUN"], "sources": [{"mu": 0.0}]}),
            ("distortion-sim", {"calcs": ["AUN"], "sources": [{"sigma": 1.0, "mu": 0.0, "rho": 0.5}]}),
            ("rate-surface", {"zero_center": "yes"}),
            ("soft-curves", ["alphas"]),
        ]
        for experiment, params in bad:
            with self.assertRaises(ConfigError, msg=f"{experiment} {params}"):
                resolve_parameters(experiment, params)


class TestExperimentConfig(unittest.TestCase):
    """Test config validation, hashing and serialization."""

    def test_seed_and_threads(self):
        for kwargs in ({"seed": -1}, {"seed": 2 ** 64}, {"threads": 0}, {"seed": "seven"}):
            with self.assertRaises(ConfigError):
                ExperimentConfig("soft-curves", **kwargs)
        self.assertEqual(ExperimentConfig("soft-curves", seed=2 ** 64 - 1).seed, 2 ** 64 - 1)

    def test_hash_ignores_threads_and_output(self):
        a = ExperimentConfig("soft-curves", {"points": 5}, seed=3)
        b = ExperimentConfig("soft-curves", {"points": 5}, seed=3, threads=4, output_path="x.csv")
        c = ExperimentConfig("soft-curves", {"points": 5}, seed=4)
        self.assertEqual(a.config_hash, b.config_hash)
        self.assertNotEqual(a.config_hash, c.config_hash)
        self.assertEqual(len(a.config_hash), 64)

    def test_defaults_hash_like_explicit_values(self):
        explicit = ExperimentConfig("soft-curves", {"alphas": [1, 5, 10], "points": 401})
        self.assertEqual(ExperimentConfig("soft-curves").config_hash, explicit.config_hash)

    def test_yaml_round_trip(self):
        config = ExperimentConfig("mi-2d", {"sigma": [0.5]}, seed=9)
        data = yaml.safe_load(config.to_yaml())
        self.assertEqual(data["experiment"], "mi-2d")
        self.assertEqual(data["parameters"]["sigma"], [0.5])
        self.assertEqual(ExperimentConfig.from_dict(data).config_hash, config.config_hash)

    def test_from_dict_rejections(self):
        with self.assertRaises(ConfigError):
            ExperimentConfig.from_dict({"experiment": "mi-2d", "verbose": True})
        with self.assertRaises(ConfigError):
            ExperimentConfig.from_dict({"seed": 1})
        with self.assertRaises(ConfigError):
            ExperimentConfig.from_dict(["mi-2d"])


class TestConfigFiles(unittest.TestCase):
    """Test YAML loading and --set overrides."""

    def setUp(self):
        self.tmp = Path(tempfile.mkdtemp(prefix="quantlab_test_"))

    def tearDown(self):
        shutil.rmtree(self.tmp, ignore_errors=True)

    def test_load_config(self):
        path = self.tmp / "c.yaml"
        path.write_text("experiment: soft-curves\nseed: 4\nparameters:\n  points: 11\n")
        data = load_config(path)
        self.assertEqual(ExperimentConfig.from_dict(data).parameters["points"], 11)

    def test_shipped_configs_are_valid(self):
        configs = Path(__file__).parent.parent.parent / "configs"
        found = set()
        for path in sorted(configs.glob("*.yaml")):
            if path.name == "tolerances.yaml":
                continue
            config = ExperimentConfig.from_dict(load_config(path))
            found.add(config.experiment)
        self.assertEqual(found, set(EXPERIMENTS))

    def test_load_config_errors(self):
        with self.assertRaises(ConfigError):
            load_config(self.tmp / "missing.yaml")
        path = self.tmp / "bad.yaml"
        path.write_text("parameters: [1, 2\n")
        with self.assertRaises(ConfigError):
            load_config(path)
        empty = self.tmp / "empty.yaml"
        empty.write_text("")
        self.assertEqual(load_config(empty), {})

    def test_apply_overrides(self):
        data = {"experiment": "grad-stats", "parameters": {"n_y": 10}}
        updated = apply_overrides(data, ["n_trials=20", 'rows=["PGE:AUN", "STE:SR"]'])
        self.assertEqual(updated["parameters"], {"n_y": 10, "n_trials": 20, "rows": ["PGE:AUN", "STE:SR"]})
        self.assertEqual(data["parameters"], {"n_y": 10})
        with self.assertRaises(ConfigError):
            apply_overrides(data, ["n_trials"])
        with self.assertRaises(ConfigError):
            apply_overrides(data, ["=3"])


class TestResultTable(unittest.TestCase):
    """Test row validation and file output."""

    def setUp(self):
        self.tmp = Path(tempfile.mkdtemp(prefix="quantlab_test_"))

    def tearDown(self):
        shutil.rmtree(self.tmp, ignore_errors=True)

    def test_column_units(self):
        units = column_units(["alpha", "rate_bits", "D_tilde_mse", "bias"])
        self.assertEqual(units, {"rate_bits": "bits", "D_tilde_mse": "mse"})

    def test_rejects_bad_rows(self):
        with self.assertRaises(NumericalError):
            ResultTable("demo", ["a", "b"], [{"b": 1.0, "a": 2.0}])
        with self.assertRaises(NumericalError):
            ResultTable("demo", ["a"], [{"a": float("nan")}])
        with self.assertRaises(NumericalError):
            ResultTable("demo", ["a"], [{"a": float("inf")}])

    def test_write_and_read(self):
        table = small_table([0.1, 1.0 / 3.0, 2.5e-17])
        table.metadata = {"experiment": "demo", "seed": 1}
        table.summary = {"best": 0.1}
        path = table.write(self.tmp / "sub" / "demo.csv", json_mirror=True)
        self.assertTrue(path.exists())
        self.assertTrue(path.with_suffix(".json").exists())
        with open(sidecar_path(path)) as f:
            self.assertEqual(json.load(f)["summary"], {"best": 0.1})
        back = read_table(path)
        self.assertEqual(back.columns, table.columns)
        self.assertEqual(back.rows, table.rows)
        self.assertEqual(back.summary, {"best": 0.1})
        self.assertTrue(compare(table, back).passed)

    def test_csv_header_order(self):
        text = small_table([1.0]).csv_text()
        self.assertEqual(text.splitlines()[0], "calc,x,x_se")
        self.assertTrue(text.endswith("\n"))

    def test_read_missing(self):
        with self.assertRaises(ConfigError):
            read_table(self.tmp / "nope.csv")


class TestRuns(unittest.TestCase):
    """Test small runs of the fast experiments."""

    def setUp(self):
        self.tmp = Path(tempfile.mkdtemp(prefix="quantlab_test_"))

    def tearDown(self):
        shutil.rmtree(self.tmp, ignore_errors=True)

    def test_soft_curves(self):
        config = ExperimentConfig("soft-curves", {"alphas": [5.0], "y_min": -1.0, "y_max": 1.0, "points": 5},
                                  output_path=str(self.tmp / "soft.csv"))
        table = run(config)
        self.assertEqual(len(table.rows), 5)
        self.assertEqual(table.columns, ["alpha", "y", "s", "s_grad", "r", "r_grad"])
        self.assertAlmostEqual(table.rows[2]["s"], 0.0, places=12)
        self.assertTrue((self.tmp / "soft.csv").exists())
        meta = json.loads(sidecar_path(self.tmp / "soft.csv").read_text())
        self.assertEqual(meta["config_hash"], config.config_hash)
        self.assertEqual(meta["config"]["parameters"]["points"], 5)
        for key in ("tool_version", "timestamp", "wall_time_seconds", "seed", "column_units"):
            self.assertIn(key, meta)

    def test_mutual_info_threads_and_determinism(self):
        params = {"calcs": ["ROUND", "SR", "SUA@5"], "mu": [0.0, 0.25], "sigma_points": 3}
        single = run(ExperimentConfig("mutual-info", params, seed=1))
        threaded = run(ExperimentConfig("mutual-info", params, seed=1, threads=3))
        self.assertEqual(single.rows, threaded.rows)
        self.assertEqual(len(single.rows), 3 * 2 * 3)
        for row in single.rows:
            if row["calc"] == "ROUND":
                self.assertEqual(row["I_minus_round_bits"], 0.0)
        self.assertEqual({row["alpha"] for row in single.rows}, {0.0, 5.0})
        self.assertEqual(single.metadata["column_units"],
                         {"I_bits": "bits", "I_minus_round_bits": "bits"})

    def test_mi_2d(self):
        table = run(ExperimentConfig("mi-2d", {"calcs": ["ROUND", "UQ_S", "AUN"], "sigma": [0.5]}))
        values = {row["calc"]: row["I_bits"] for row in table.rows}
        self.assertGreater(values["AUN"], values["UQ_S"])

    def test_grad_stats(self):
        params = {"rows": ["PGE:AUN", "STE:SR", "EP:SUA@5"], "sigma_q": [0.5], "n_y": 10, "n_trials": 5}
        a = run(ExperimentConfig("grad-stats", params, seed=2))
        b = run(ExperimentConfig("grad-stats", params, seed=2, threads=2))
        self.assertEqual(a.rows, b.rows)
        self.assertEqual([row["rule"] for row in a.rows], ["PGE", "STE", "EP"])
        self.assertAlmostEqual(a.rows[2]["bias"], 0.0, places=10)
        for row in a.rows:
            self.assertGreaterEqual(row["var"], 0.0)

    def test_rate_surface_summary(self):
        params = {"calcs": ["AUN"], "mu_grid": [0.0], "sigma_grid": [0.2, 0.3, 0.4]}
        table = run(ExperimentConfig("rate-surface", params))
        self.assertEqual(len(table.rows), 3)
        summary = table.summary["AUN"]
        self.assertEqual(summary["method"], "quadrature")
        self.assertGreaterEqual(summary["q_star_sigma"], 0.2)
        self.assertLessEqual(summary["q_star_sigma"], 0.4)

    def test_entropy_compare(self):
        table = run(ExperimentConfig("entropy-compare", {"mu": [0.0], "sigma_points": 2}))
        self.assertEqual(len(table.rows), 2)
        for row in table.rows:
            self.assertGreater(row["R_bits"], 0.0)

    def test_rate_2d(self):
        params = {"calcs": ["UQ_S"], "rho_p": [0.0, 0.5], "n_mc": 2000}
        table = run(ExperimentConfig("rate-2d", params, seed=5))
        self.assertEqual([row["rho_q"] for row in table.rows], [0.0, 0.5])
        self.assertTrue(all(row["rate_se_bits"] > 0 for row in table.rows))
        self.assertEqual(run(ExperimentConfig("rate-2d", params, seed=5)).rows, table.rows)

    def test_reruns_write_identical_csv(self):
        params = {"rows": ["PGE:SUA@5", "STE:SRA@5"], "sigma_q": [0.3, 1.0], "n_y": 8, "n_trials": 6}
        bodies = []
        for name, threads in (("a.csv", 1), ("b.csv", 2)):
            path = self.tmp / name
            run(ExperimentConfig("grad-stats", params, seed=17, threads=threads, output_path=str(path)))
            bodies.append(path.read_bytes())
        self.assertEqual(bodies[0], bodies[1])

    def test_run_logging(self):
        logger = RunLogger(self.tmp / "telemetry")
        run(ExperimentConfig("soft-curves", {"alphas": [1.0], "points": 3}), logger=logger)
        records = logger.get_runs("soft-curves")
        self.assertEqual([r["event"] for r in records], ["run_start", "run_end"])
        self.assertEqual(records[1]["status"], "success")
        self.assertEqual(records[1]["rows"], 3)

    def test_failure_is_logged(self):
        logger = RunLogger(self.tmp / "telemetry")
        config = ExperimentConfig("rate-2d", {"rho_p": [0.0, 0.5], "rho_q": [0.1]})
        with self.assertRaises(ConfigError):
            run(config, logger=logger)
        end = logger.get_runs("rate-2d")[-1]
        self.assertEqual(end["status"], "failure")
        self.assertEqual(end["error"]["error"], "ConfigError")
        self.assertEqual(end["error"]["exit_code"], 2)

    @unittest.skipUnless(SLOW, "set QUANTLAB_SLOW=1 to train networks")
    def test_distortion_sim(self):
        params = {
            "calcs": ["AUN"], "sources": [{"sigma": 0.5}], "hidden": [8, 8],
            "steps": 300, "batch": 64, "learning_rate": 0.01, "n_eval": 5000
        }
        table = run(ExperimentConfig("distortion-sim", params, seed=3))
        self.assertEqual(len(table.rows), 1)
        self.assertEqual(table.rows[0]["dims"], 1)
        self.assertGreater(table.rows[0]["D_tilde_mse"], 0.0)
        oracle = bayes_distortion(SurrogateSpec(SurrogateKind.AUN), Gaussian1D(0.0, 0.5))
        self.assertGreaterEqual(table.rows[0]["D_tilde_mse"], oracle - 4.0 * table.rows[0]["D_tilde_se_mse"])


class TestCompare(unittest.TestCase):
    """Test tolerance-based table comparison."""

    def test_exact_by_default(self):
        self.assertTrue(compare(small_table([1.0, 2.0]), small_table([1.0, 2.0])).passed)
        report = compare(small_table([1.0, 2.0]), small_table([1.0, 2.05]))
        self.assertFalse(report.passed)
        x = next(d for d in report.deviations if d.column == "x")
        self.assertAlmostEqual(x.max_abs, 0.05, places=12)
        self.assertEqual(x.mismatches, 1)

    def test_abs_and_rel(self):
        a, b = small_table([1.0]), small_table([1.05])
        self.assertTrue(compare(a, b, {"default": {"abs": 0.1}}).passed)
        self.assertFalse(compare(a, b, {"default": {"rel": 0.01}}).passed)
        self.assertTrue(compare(a, b, {"columns": {"x": {"rel": 0.05}}}).passed)

    def test_standard_error_tolerance(self):
        a, b = small_table([1.0]), small_table([1.05])
        self.assertTrue(compare(a, b, {"columns": {"x": {"se": "x_se", "k": 4}}}).passed)
        self.assertFalse(compare(a, b, {"columns": {"x": {"se": "x_se", "k": 1}}}).passed)

    def test_text_columns_must_match(self):
        report = compare(small_table([1.0], calc="AUN"), small_table([1.0], calc="SR"), {"default": {"abs": 1.0}})
        self.assertFalse(report.passed)
        self.assertEqual(report.to_dict()["columns"][0]["mismatches"], 1)

    def test_errors(self):
        with self.assertRaises(ConfigError):
            compare(small_table([1.0]), small_table([1.0, 2.0]))
        with self.assertRaises(ConfigError):
            compare(small_table([1.0]), ResultTable("demo", ["calc", "x"], [{"calc": "AUN", "x": 1.0}]))
        with self.assertRaises(ConfigError):
            compare(small_table([1.0]), small_table([1.0]), {"default": {"k": 2}})
        with self.assertRaises(ConfigError):
            compare(small_table([1.0]), small_table([1.0]), {"columns": {"x": {"se": "y_se"}}})
        with self.assertRaises(ConfigError):
            compare(small_table([1.0]), small_table([1.0]), {"default": {"pct": 1}})


if __name__ == "__main__":
    unittest.main()
