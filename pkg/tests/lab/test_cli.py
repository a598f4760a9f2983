#!/usr/bin/env python3
"""
Tests for the quantlab command-line entry point
"""

import io
import json
import os
import shutil
import tempfile
import unittest
from contextlib import redirect_stderr, redirect_stdout
from pathlib import Path
from unittest import mock

import yaml

import sys
sys.path.insert(0, str(Path(__file__).parent.parent.parent))

from core.lab import ResultTable, read_table
from scripts.quantlab import main
from telemetry.logger import RUNS_FILENAME, TELEMETRY_ENV

SOFT = ["--set", "alphas=[5.0]", "--set", "points=5"]


class CliTestCase(unittest.TestCase):

    def setUp(self):
        self.tmp = Path(tempfile.mkdtemp(prefix="quantlab_cli_"))

    def tearDown(self):
        shutil.rmtree(self.tmp, ignore_errors=True)

    def invoke(self, *argv):
        out, err = io.StringIO(), io.StringIO()
        with redirect_stdout(out), redirect_stderr(err):
            code = main(["--no-color", *argv])
        return code, out.getvalue(), err.getvalue()


class TestExperimentCommands(CliTestCase):
    """Test running experiments from the command line."""

    def test_writes_csv(self):
        path = self.tmp / "soft.csv"
        code, out, _ = self.invoke("soft-curves", *SOFT, "--out", str(path), "--json", "--no-telemetry")
        self.assertEqual(code, 0)
        self.assertIn("Wrote 5 rows", out)
        self.assertEqual(len(read_table(path).rows), 5)
        self.assertTrue(path.with_suffix(".json").exists())

    def test_prints_csv_without_output(self):
        code, out, _ = self.invoke("soft-curves", *SOFT, "--no-telemetry")
        self.assertEqual(code, 0)
        self.assertIn("alpha,y,s,s_grad,r,r_grad", out)

    def test_print_config(self):
        code, out, _ = self.invoke("soft-curves", *SOFT, "--seed", "7", "--print-config")
        self.assertEqual(code, 0)
        data = yaml.safe_load(out)
        self.assertEqual(data["seed"], 7)
        self.assertEqual(data["parameters"]["points"], 5)

    def test_config_file_and_overrides(self):
        config = self.tmp / "mi2d.yaml"
        config.write_text("experiment: mi-2d\nseed: 3\nparameters:\n  sigma: [0.5, 1.0]\n")
        code, out, _ = self.invoke("mi-2d", "--config", str(config), "--set", "calcs=[ROUND]", "--print-config")
        self.assertEqual(code, 0)
        data = yaml.safe_load(out)
        self.assertEqual(data["seed"], 3)
        self.assertEqual(data["parameters"]["calcs"], ["ROUND"])
        self.assertEqual(data["parameters"]["sigma"], [0.5, 1.0])

    def test_bad_parameter_exits_2(self):
        code, _, err = self.invoke("soft-curves", "--set", "points=many", "--no-telemetry")
        self.assertEqual(code, 2)
        payload = json.loads(err.strip().splitlines()[-1])
        self.assertEqual(payload["error"], "ConfigError")
        self.assertEqual(payload["exit_code"], 2)

    def test_unknown_parameter_exits_2(self):
        code, _, _ = self.invoke("soft-curves", "--set", "colour=red", "--no-telemetry")
        self.assertEqual(code, 2)

    def test_experiment_mismatch_exits_2(self):
        config = self.tmp / "other.yaml"
        config.write_text("experiment: mi-2d\n")
        code, _, _ = self.invoke("soft-curves", "--config", str(config), "--no-telemetry")
        self.assertEqual(code, 2)

    def test_missing_config_exits_2(self):
        code, _, _ = self.invoke("soft-curves", "--config", str(self.tmp / "nope.yaml"))
        self.assertEqual(code, 2)

    def test_unknown_command(self):
        with redirect_stderr(io.StringIO()):
            with self.assertRaises(SystemExit):
                main(["no-such-study"])


class TestTelemetry(CliTestCase):
    """Test run logging from the command line."""

    def test_runs_are_logged(self):
        telemetry = self.tmp / "telemetry"
        with mock.patch.dict(os.environ, {TELEMETRY_ENV: str(telemetry)}):
            code, _, _ = self.invoke("soft-curves", *SOFT)
        self.assertEqual(code, 0)
        with open(telemetry / RUNS_FILENAME) as f:
            events = [json.loads(line)["event"] for line in f]
        self.assertEqual(events, ["run_start", "run_end"])

    def test_failures_are_logged(self):
        telemetry = self.tmp / "telemetry"
        with mock.patch.dict(os.environ, {TELEMETRY_ENV: str(telemetry)}):
            code, _, _ = self.invoke("rate-2d", "--set", "rho_p=[0.0, 0.5]", "--set", "rho_q=[0.1]")
        self.assertEqual(code, 2)
        with open(telemetry / RUNS_FILENAME) as f:
            end = [json.loads(line) for line in f][-1]
        self.assertEqual(end["status"], "failure")

    def test_no_telemetry(self):
        telemetry = self.tmp / "telemetry"
        with mock.patch.dict(os.environ, {TELEMETRY_ENV: str(telemetry)}):
            self.invoke("soft-curves", *SOFT, "--no-telemetry")
        self.assertFalse(telemetry.exists())


class TestCompareCommand(CliTestCase):
    """Test the compare subcommand exit codes."""

    def write(self, name, values):
        rows = [{"calc": "AUN", "x": v, "x_se": 0.02} for v in values]
        path = self.tmp / name
        ResultTable("demo", ["calc", "x", "x_se"], rows, {"experiment": "demo"}).write(path)
        return str(path)

    def test_identical_tables_pass(self):
        a = self.write("a.csv", [1.0, 2.0])
        b = self.write("b.csv", [1.0, 2.0])
        code, out, _ = self.invoke("compare", a, b)
        self.assertEqual(code, 0)
        self.assertIn("Overall: PASS", out)

    def test_deviation_fails(self):
        a = self.write("a.csv", [1.0, 2.0])
        b = self.write("b.csv", [1.0, 2.05])
        code, out, _ = self.invoke("compare", a, b)
        self.assertEqual(code, 1)
        self.assertIn("FAIL", out)

    def test_tolerances_file(self):
        a = self.write("a.csv", [1.0, 2.0])
        b = self.write("b.csv", [1.0, 2.05])
        tolerances = self.tmp / "tol.yaml"
        tolerances.write_text("columns:\n  x:\n    se: x_se\n    k: 4\n")
        code, _, _ = self.invoke("compare", a, b, "--tolerances", str(tolerances))
        self.assertEqual(code, 0)

    def test_row_count_mismatch_exits_2(self):
        a = self.write("a.csv", [1.0, 2.0])
        b = self.write("b.csv", [1.0])
        code, _, err = self.invoke("compare", a, b)
        self.assertEqual(code, 2)
        self.assertIn("Row count mismatch", err)


if __name__ == "__main__":
    unittest.main()
