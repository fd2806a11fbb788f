import json
import os
import tempfile
import unittest
from io import StringIO
from pathlib import Path

import pandas as pd
from django.conf import settings
from django.core.management import call_command
from django.core.management.base import CommandError
from django.db import connections
from django.test import SimpleTestCase, override_settings

from experiments.runner import (
    PRESETS,
    TABLE_COLUMNS,
    ExperimentCellError,
    ExperimentConfig,
    iteration_pivot,
    run_table,
    run_verify,
    write_table,
)
from linalg.exceptions import SizeLimitExceeded

SLOW_TESTS = bool(os.environ.get("SCHWARZLAB_SLOW_TESTS"))


def _small_config(**overrides):
    values = {"h_level": 4, "H_level": 2, "ns_list": (1, 4, 16), "coarse_tol": None, "restart": None}
    values.update(overrides)
    return ExperimentConfig(**values)


class ExperimentConfigTests(SimpleTestCase):
    def test_defaults_mirror_first_table(self):
        config = ExperimentConfig.build()
        self.assertEqual((config.h_level, config.H_level), (7, 5))
        self.assertEqual(config.ns_list, (4, 8, 16, 32, 64, 128))
        self.assertEqual(config.coarse_tol, 1e-10)
        self.assertIsNone(config.restart)

    @override_settings(SOLVER_REL_TOL=1e-8, SOLVER_THREADS=2)
    def test_settings_feed_defaults(self):
        config = ExperimentConfig.build()
        self.assertEqual(config.rel_tol, 1e-8)
        self.assertEqual(config.threads, 2)

    def test_preset_and_overrides(self):
        config = ExperimentConfig.build("table4", ns_list=(4, 8), threads=None)
        self.assertEqual(config.precond, ("b", "b+z", "b+bt"))
        self.assertEqual(config.restart, 10)
        self.assertEqual(config.coarse_tol, 1e-4)
        self.assertEqual(config.ns_list, (4, 8))
        self.assertEqual(ExperimentConfig.build("table4", restart="none").restart, None)
        for name, H_level in (("table7", 6), ("table8", 9)):
            config = ExperimentConfig.build(name)
            self.assertEqual((config.h_level, config.H_level), (10, H_level))
            self.assertEqual(config.precond, ("b", "b+z", "b+bt"))
            self.assertEqual(config.coarse_tol, 1e-4)
            self.assertEqual(config.restart, 10)
            self.assertEqual(config.ns_list, (32, 64, 128, 256))
        self.assertEqual(set(PRESETS), {"table1", "table4", "table7", "table8"})

    def test_validation(self):
        with self.assertRaises(ValueError):
            ExperimentConfig(h_level=5, H_level=5)
        with self.assertRaises(ValueError):
            ExperimentConfig(precond=("b", "ilu"))
        with self.assertRaises(ValueError):
            ExperimentConfig(format="xlsx")
        with self.assertRaises(ValueError):
            ExperimentConfig(coarse_tol=2.0)
        with self.assertRaises(ValueError):
            ExperimentConfig.build("table99")


class ProjectSettingsTests(SimpleTestCase):
    def test_no_database_layer(self):
        self.assertFalse([app for app in settings.INSTALLED_APPS if app.startswith("django.contrib")])
        self.assertEqual(connections["default"].settings_dict["ENGINE"], "django.db.backends.dummy")


class RunTableTests(SimpleTestCase):
    def test_empty_subdomain_list(self):
        table = run_table(_small_config(ns_list=()))
        self.assertTrue(table.empty)
        self.assertEqual(list(table.columns), TABLE_COLUMNS)

    def test_small_table(self):
        table = run_table(_small_config())
        self.assertEqual(list(table.columns), TABLE_COLUMNS)
        self.assertEqual(len(table), 3 * 4)
        self.assertTrue((table["iterations"] > 0).all())
        self.assertTrue((table["rate"] < 1.0).all())
        histories = table.attrs["residual_history"]
        for row in table.itertuples():
            history = histories[(row.ns, row.precond)]
            self.assertEqual(len(history), row.iterations + 1)
            self.assertLessEqual(history[-1], 1.1e-6 * history[0])
        pivot = iteration_pivot(table)
        self.assertEqual(list(pivot.columns), ["b", "z", "b+z", "b+bt"])
        self.assertEqual(list(pivot.index), [1, 4, 16])

    def test_repeated_runs_are_identical(self):
        config = _small_config(ns_list=(4,), coarse_tol=1e-4, restart=10)
        first = run_table(config)
        second = run_table(config)
        pd.testing.assert_series_equal(first["iterations"], second["iterations"])
        self.assertEqual(first.attrs["residual_history"], second.attrs["residual_history"])

    @override_settings(COARSE_INNER_PRECONDITIONER="none")
    def test_unpreconditioned_inner_coarse_solver(self):
        table = run_table(_small_config(ns_list=(4,), precond=("b",), coarse_tol=1e-10))
        reference = run_table(_small_config(ns_list=(4,), precond=("b",), coarse_tol=None))
        self.assertLessEqual(abs(int(table["iterations"].iloc[0]) - int(reference["iterations"].iloc[0])), 1)

    def test_thread_count_does_not_change_results(self):
        serial = run_table(_small_config(ns_list=(16,), threads=1))
        threaded = run_table(_small_config(ns_list=(16,), threads=4))
        pd.testing.assert_series_equal(serial["iterations"], threaded["iterations"])
        self.assertEqual(serial.attrs["residual_history"], threaded.attrs["residual_history"])

    def test_failing_cell_is_named(self):
        with self.assertRaises(ExperimentCellError) as ctx:
            run_table(_small_config(ns_list=(4, 3)))
        self.assertEqual(ctx.exception.ns, 3)
        self.assertIsNone(ctx.exception.precond)
        self.assertIsInstance(ctx.exception.cause, ValueError)
        self.assertIn("ns=3", str(ctx.exception))

    def test_outputs(self):
        with tempfile.TemporaryDirectory() as tmp:
            csv_path = Path(tmp) / "table.csv"
            table = run_table(_small_config(ns_list=(4,), precond=("b", "b+bt"), out=csv_path))
            frame = pd.read_csv(csv_path)
            self.assertEqual(list(frame.columns), TABLE_COLUMNS)
            self.assertEqual(list(frame["iterations"]), list(table["iterations"]))

            json_path = write_table(table, Path(tmp) / "table.json", fmt="json")
            rows = json.loads(json_path.read_text())
            self.assertEqual([row["precond"] for row in rows], ["b", "b+bt"])
            self.assertEqual(rows[0]["iterations"], int(table["iterations"].iloc[0]))

    def test_partition_dump(self):
        with tempfile.TemporaryDirectory() as tmp:
            run_table(_small_config(ns_list=(4,), precond=("b",), dump_partition=Path(tmp)))
            frame = pd.read_csv(Path(tmp) / "partition_ns4.csv")
            self.assertEqual(len(frame), 4)


class RunVerifyTests(SimpleTestCase):
    def test_level_two_passes(self):
        summary = run_verify(2)
        self.assertTrue(summary.passed, summary.failed)
        self.assertEqual(
            [check.name for check in summary.checks],
            ["h0", "inverse_pair", "double_inverse", "beta_bounds", "estimate", "domination"],
        )

    def test_large_levels_are_refused(self):
        with self.assertRaises(SizeLimitExceeded):
            run_verify(5)
        with self.assertRaises(ValueError):
            run_verify(1)

    def test_overstated_alpha0_is_caught(self):
        summary = run_verify(2, tamper_alpha0=1e6)
        self.assertFalse(summary.passed)
        self.assertEqual(summary.failed, ["estimate"])


class CommandTests(SimpleTestCase):
    def test_table_command(self):
        with tempfile.TemporaryDirectory() as tmp:
            out = StringIO()
            path = Path(tmp) / "table.csv"
            call_command(
                "table", "--h-level", "3", "--H-level", "1", "--ns", "1,4", "--precond", "b,z",
                "--coarse-tol", "none", "--out", str(path), stdout=out,
            )
            frame = pd.read_csv(path)
            self.assertEqual(list(frame["precond"]), ["b", "z", "b", "z"])
            self.assertIn("Table written to", out.getvalue())

    def test_table_command_with_empty_list(self):
        out = StringIO()
        call_command("table", "--h-level", "3", "--H-level", "1", "--ns", "", stdout=out)
        self.assertIn("empty", out.getvalue())

    def test_table_command_reports_bad_cell(self):
        with self.assertRaises(CommandError):
            call_command("table", "--h-level", "3", "--H-level", "1", "--ns", "3", stdout=StringIO())
        with self.assertRaises(CommandError):
            call_command("table", "--h-level", "3", "--H-level", "3", stdout=StringIO())

    def test_verify_command(self):
        out = StringIO()
        call_command("verify", "--level", "2", "--json", stdout=out)
        lines = out.getvalue().splitlines()
        data = json.loads(lines[0])
        self.assertTrue(data["passed"])
        self.assertEqual(data["level"], 2)
        self.assertGreater(data["chain"]["alpha0"], 0.0)

    def test_verify_command_refuses_large_levels(self):
        with self.assertRaises(CommandError):
            call_command("verify", "--level", "5", stdout=StringIO())

    def test_export_system_command(self):
        with tempfile.TemporaryDirectory() as tmp:
            out = StringIO()
            call_command("export_system", "--level", "2", "--dir", tmp, stdout=out)
            names = sorted(p.name for p in Path(tmp).iterdir())
            self.assertEqual(names, ["A0_level2.mtx", "A_h_level2.mtx", "rhs_level2.mtx"])
            self.assertIn("Exported level 2", out.getvalue())


@unittest.skipUnless(SLOW_TESTS, "set SCHWARZLAB_SLOW_TESTS=1 to run the h=2^-7 tables")
class PublishedTableTests(SimpleTestCase):
    def _columns(self, table):
        return {name: group["iterations"].tolist() for name, group in table.groupby("precond")}

    def test_exact_coarse_table(self):
        table = run_table(ExperimentConfig.build("table1", threads=4))
        self.assertEqual(len(table), 6 * 4)
        columns = self._columns(table)
        for b, z, bz in zip(columns["b"], columns["z"], columns["b+z"]):
            self.assertTrue(11 <= b <= 24)
            self.assertGreaterEqual(z, 1.5 * b)
            self.assertLessEqual(bz, z)
            self.assertLessEqual(bz, b + 2)
        for counts in columns.values():
            self.assertLessEqual(max(counts) / min(counts), 1.5)
        rate = table.loc[(table["ns"] == 4) & (table["precond"] == "b"), "rate"].item()
        self.assertTrue(0.2 <= rate <= 0.55)

    def test_inexact_coarse_table(self):
        table = run_table(ExperimentConfig.build("table4", threads=4))
        self.assertEqual(len(table), 6 * 3)
        columns = self._columns(table)
        for b, bz in zip(columns["b"], columns["b+z"]):
            self.assertTrue(11 <= b <= 24)
            self.assertLessEqual(bz, b)
        for counts in columns.values():
            self.assertLessEqual(max(counts) / min(counts), 1.5)
