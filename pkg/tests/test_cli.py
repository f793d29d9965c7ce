"""
Unit tests for the command-line interface and its exit codes.
"""

import contextlib
import io
import os
import sys
import tempfile
import unittest
from unittest import mock

import pandas as pd

# Add the src directory to the Python path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', 'src'))

from src.cli import EXIT_CONFIG, EXIT_DELTA, EXIT_IO, EXIT_OK, EXIT_PROTOCOL, SEED_ENV, main
from src.data_models import Envelope
from src.xlpn22 import Xlpn22Engine

ROOT = os.path.join(os.path.dirname(__file__), '..')
CONFIGS = os.path.join(ROOT, 'configs')
GOLDEN = os.path.join(os.path.dirname(__file__), 'golden')


def invoke(*argv):
    """Run the CLI and return (exit code, stdout, stderr)."""
    stdout, stderr = io.StringIO(), io.StringIO()
    with contextlib.redirect_stdout(stdout), contextlib.redirect_stderr(stderr):
        code = main(list(argv))
    return code, stdout.getvalue(), stderr.getvalue()


class TestRunCommand(unittest.TestCase):
    """Test cases for `run`."""

    def test_sample_config(self):
        with mock.patch.dict(os.environ, {SEED_ENV: ""}):
            code, out, _ = invoke("run", "--config", os.path.join(CONFIGS, "k3n4.json"), "-q")
        self.assertEqual(code, EXIT_OK)
        frame = pd.read_csv(io.StringIO(out))
        self.assertEqual(list(frame["protocol"]), ["xlpn22", "vldb20", "podc18"])
        self.assertTrue((frame["seed"] == 7).all())
        self.assertTrue((frame["k"] == 3).all())

    def test_default_config_commits(self):
        code, out, err = invoke("run", "--protocol", "xlpn22", "--txns", "3")
        self.assertEqual(code, EXIT_OK)
        frame = pd.read_csv(io.StringIO(out))
        self.assertEqual(frame.iloc[0]["rounds_total"], 15)
        self.assertEqual(frame.iloc[0]["decision_commit_count"], 3)
        self.assertIn("RUN SUMMARY: XLPN-22", err)

    def test_over_budget_is_rejected(self):
        code, _, err = invoke("run", "--config", os.path.join(CONFIGS, "over_budget.json"), "-q")
        self.assertEqual(code, EXIT_CONFIG)
        self.assertIn("config error", err)

    def test_over_budget_breaks_safety(self):
        code, _, err = invoke("run", "--config", os.path.join(CONFIGS, "over_budget.json"),
                              "--allow-over-budget", "--protocol", "xlpn22", "-q")
        self.assertEqual(code, EXIT_PROTOCOL)
        self.assertIn("SafetyViolation", err)

    def test_missing_config(self):
        code, _, _ = invoke("run", "--config", os.path.join(CONFIGS, "absent.json"), "-q")
        self.assertIn(code, (EXIT_CONFIG, EXIT_IO))

    def test_trace_and_output_files(self):
        with tempfile.TemporaryDirectory() as tmp:
            trace = os.path.join(tmp, "trace.tsv")
            code, _, _ = invoke("run", "--protocol", "xlpn22,vldb20", "--trace", trace, "--out", tmp, "-q")
            self.assertEqual(code, EXIT_OK)
            self.assertTrue(os.path.exists(os.path.join(tmp, "trace.xlpn22.tsv")))
            self.assertTrue(os.path.exists(os.path.join(tmp, "trace.vldb20.tsv")))
            self.assertEqual(len(pd.read_csv(os.path.join(tmp, "run.csv"))), 2)

    def test_seed_precedence(self):
        with mock.patch.dict(os.environ, {SEED_ENV: "9"}):
            code, out, _ = invoke("run", "--protocol", "xlpn22", "--seed", "3", "-q")
        self.assertEqual(code, EXIT_OK)
        self.assertEqual(pd.read_csv(io.StringIO(out)).iloc[0]["seed"], 9)
        with mock.patch.dict(os.environ, {SEED_ENV: ""}):
            _, out, _ = invoke("run", "--protocol", "xlpn22", "--seed", "3", "-q")
        self.assertEqual(pd.read_csv(io.StringIO(out)).iloc[0]["seed"], 3)

    def test_bad_seed_env(self):
        with mock.patch.dict(os.environ, {SEED_ENV: "forty-two"}):
            code, _, _ = invoke("run", "-q")
        self.assertEqual(code, EXIT_CONFIG)


class TestBenchCommand(unittest.TestCase):
    """Test cases for `bench`."""

    def test_ledger_grid_matches_golden(self):
        with tempfile.TemporaryDirectory() as tmp, mock.patch.dict(os.environ, {SEED_ENV: ""}):
            code, _, _ = invoke("bench", "--grid", "ledger", "--seed", "42", "--out", tmp, "-q")
            self.assertEqual(code, EXIT_OK)
            produced = pd.read_csv(os.path.join(tmp, "bench_ledger.csv"))
            self.assertTrue(os.path.getsize(os.path.join(tmp, "bench_ledger.svg")) > 0)
        expected = pd.read_csv(os.path.join(GOLDEN, "bench_ledger_seed42.csv"))
        pd.testing.assert_frame_equal(produced, expected)

    def test_latency_ordering(self):
        """With rounds dominating, the five-phase protocol finishes first at every k."""
        with tempfile.TemporaryDirectory() as tmp, mock.patch.dict(os.environ, {SEED_ENV: ""}):
            code, _, _ = invoke("bench", "--grid", "ledger", "--max-txns", "10", "--round-latency", "1000",
                                "--message-latency", "1", "--out", tmp, "-q")
            self.assertEqual(code, EXIT_OK)
            frame = pd.read_csv(os.path.join(tmp, "bench_ledger.csv"))
        times = frame.pivot(index="k", columns="protocol", values="sim_time_units")
        self.assertTrue((times["xlpn22"] < times["vldb20"]).all())
        self.assertTrue((times["vldb20"] < times["podc18"]).all())


class TestVerifyCommand(unittest.TestCase):
    """Test cases for `verify-complexity`."""

    def test_documented_deltas_pass(self):
        code, out, err = invoke("verify-complexity", "--k", "2,3", "--n", "4", "-q")
        self.assertEqual(code, EXIT_OK)
        self.assertIn("## Reconciliation", out)
        self.assertRegex(out, r"\|\s*PODC-18\s*\|\s*2\s*\|\s*4\s*\|")
        self.assertNotIn("unexpected delta", err)

    def test_csv_format(self):
        code, out, _ = invoke("verify-complexity", "--k", "2", "--n", "4", "--protocol", "vldb20",
                              "--format", "csv", "-q")
        self.assertEqual(code, EXIT_OK)
        self.assertTrue(out.startswith("protocol,k,n,rounds,messages"))

    def test_extra_inter_ledger_message_is_caught(self):
        """A stray self-addressed broadcast shows up as an undocumented delta."""
        original = Xlpn22Engine._one_to_all

        def with_self_copy(engine, src, round_index, tag, body):
            return original(engine, src, round_index, tag, body) + [Envelope(round_index, src, src, tag, body)]

        with mock.patch.object(Xlpn22Engine, "_one_to_all", with_self_copy):
            code, _, err = invoke("verify-complexity", "--k", "2", "--n", "4", "--protocol", "xlpn22", "-q")
        self.assertEqual(code, EXIT_DELTA)
        self.assertIn("unexpected delta: XLPN-22 k=2 n=4 inter: +2", err)

    def test_bad_list(self):
        with contextlib.redirect_stderr(io.StringIO()):
            with self.assertRaises(SystemExit):
                main(["verify-complexity", "--k", "two"])


class TestTopologyCommand(unittest.TestCase):
    """Test cases for `topology`."""

    def test_csv_rows(self):
        with tempfile.TemporaryDirectory() as tmp:
            code, out, _ = invoke("topology", "--protocol", "xlpn22", "--out", tmp, "-q")
            self.assertEqual(code, EXIT_OK)
            self.assertTrue(os.path.exists(os.path.join(tmp, "topology_k3_n4.csv")))
        frame = pd.read_csv(io.StringIO(out))
        prep = frame[frame["phase"] == "VOTE-PREP"].iloc[0]
        self.assertEqual(prep["dimension"], 3)
        self.assertEqual(prep["components"], 3)

    def test_invalid_shape(self):
        code, _, _ = invoke("topology", "--k", "1", "-q")
        self.assertEqual(code, EXIT_CONFIG)


if __name__ == '__main__':
    unittest.main()
