import csv
import json
import os
import tempfile
import unittest

from run_config import ConfigError, RunConfig
from runner import (CSV_COLUMNS, Checkpoint, RunRecord, get_output_dir, run_chains, split_samples, write_csv,
                    write_summary)
from stats import EstimateResult, Tally


class CountingJob:
    def key(self) -> str:
        return "counting"


def count_chain(job, chain_id: int, n: int) -> Tally:
    return Tally.from_values([chain_id] * n, chain_id=chain_id)


# ────────────────────────────────────────────────────────────────
# Chain fan-out and checkpoints
# ────────────────────────────────────────────────────────────────
class TestRunChains(unittest.TestCase):
    def test_split_samples(self):
        self.assertEqual(split_samples(10, 4), [3, 3, 2, 2])
        self.assertEqual(sum(split_samples(1001, 16)), 1001)
        with self.assertRaises(ValueError):
            split_samples(10, 0)

    def test_tallies_in_chain_order(self):
        tallies = run_chains(count_chain, CountingJob(), 10, 4)
        self.assertEqual([t.chain_id for t in tallies], [0, 1, 2, 3])
        self.assertEqual([t.n for t in tallies], [3, 3, 2, 2])
        self.assertEqual(tallies[2].sx, 4)

    def test_checkpoint_skips_finished_chains(self):
        with tempfile.TemporaryDirectory() as tmp:
            ckpt = Checkpoint(os.path.join(tmp, "c.json"))
            ckpt.save("counting", {1: Tally(chain_id=1, n=3, sx=99)})
            calls = []

            def tracked(job, chain_id, n):
                calls.append(chain_id)
                return count_chain(job, chain_id, n)

            tallies = run_chains(tracked, CountingJob(), 10, 4, checkpoint=ckpt)
            self.assertEqual(calls, [0, 2, 3])
            self.assertEqual(tallies[1].sx, 99)
            self.assertEqual(sorted(ckpt.load("counting")), [0, 1, 2, 3])

    def test_checkpoint_sections_are_separate(self):
        with tempfile.TemporaryDirectory() as tmp:
            ckpt = Checkpoint(os.path.join(tmp, "c.json"))
            ckpt.save("a", {0: Tally(chain_id=0, n=1, sx=1)})
            ckpt.save("b", {0: Tally(chain_id=0, n=2, sx=0)})
            self.assertEqual(ckpt.load("a")[0].n, 1)
            self.assertEqual(ckpt.load("b")[0].n, 2)
            self.assertEqual(ckpt.load("c"), {})

    def test_missing_checkpoint_file(self):
        self.assertEqual(Checkpoint("/nonexistent/dir/c.json").load("x"), {})


# ────────────────────────────────────────────────────────────────
# Reports
# ────────────────────────────────────────────────────────────────
class TestReports(unittest.TestCase):
    def record(self) -> RunRecord:
        rec = RunRecord(config={"seed": 1}, content_hash="ab" * 32)
        res = EstimateResult(mean=0.125, stderr=0.01, n_effective=80.0, tau_int=1.5, n_raw=100, seed=1,
                             params={"observable": "delta-R", "q": 2, "R": 8})
        rec.add(res, kappa=16 / 3)
        return rec

    def test_run_id(self):
        self.assertEqual(self.record().run_id, "ab" * 6)

    def test_csv(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "run.csv")
            write_csv(path, self.record().results)
            with open(path) as f:
                lines = f.read().splitlines()
        self.assertEqual(lines[0], "# fklab-csv schema=1")
        rows = list(csv.DictReader(lines[1:]))
        self.assertEqual(list(rows[0]), CSV_COLUMNS)
        self.assertEqual(rows[0]["mean"], "0.125")
        self.assertEqual(rows[0]["r"], "")
        self.assertEqual(float(rows[0]["kappa"]), 16 / 3)

    def test_summary(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "run.json")
            write_summary(path, self.record())
            with open(path) as f:
                data = json.load(f)
        self.assertEqual(data["schema_version"], 1)
        self.assertEqual(data["run_id"], "ab" * 6)
        self.assertEqual(data["results"][0]["n_raw"], 100)
        self.assertIsNone(data["fit"])
        self.assertIsNone(data["cross_check"])

    def test_output_dir_from_environment(self):
        with tempfile.TemporaryDirectory() as tmp:
            target = os.path.join(tmp, "out")
            old = os.environ.get("FKLAB_OUTPUT_DIR")
            os.environ["FKLAB_OUTPUT_DIR"] = target
            try:
                self.assertEqual(get_output_dir(), target)
                self.assertTrue(os.path.isdir(target))
                self.assertEqual(get_output_dir(os.path.join(tmp, "explicit")), os.path.join(tmp, "explicit"))
            finally:
                if old is None:
                    del os.environ["FKLAB_OUTPUT_DIR"]
                else:
                    os.environ["FKLAB_OUTPUT_DIR"] = old


# ────────────────────────────────────────────────────────────────
# Run configuration
# ────────────────────────────────────────────────────────────────
class TestRunConfig(unittest.TestCase):
    def test_resolve_kappa_from_q(self):
        cfg = RunConfig(q=2, sizes=[4], seed=1).resolve()
        self.assertAlmostEqual(cfg.kappa, 16 / 3)

    def test_resolve_q_from_kappa(self):
        cfg = RunConfig(subcommand="exact", action="predict", kappa=6).resolve()
        self.assertAlmostEqual(cfg.q, 1)

    def test_simple_phase_kappa_has_no_q(self):
        cfg = RunConfig(subcommand="exact", action="ratio", kappa=3).resolve()
        self.assertIsNone(cfg.q)

    def test_validation(self):
        bad = [
            RunConfig(q=2, kappa=6, sizes=[4], seed=1),
            RunConfig(q=2, sizes=[4]),
            RunConfig(q=2, seed=1),
            RunConfig(q=2, sizes=[4], seed=1, n_samples=0),
            RunConfig(q=2, sizes=[4], seed=1, observable="ratio-A"),
            RunConfig(q=2, sizes=[4], seed=1, workers=0),
            RunConfig(q=2, sizes=[4], seed=1, bc="periodic"),
            RunConfig(subcommand="exact", action="nothing", kappa=6),
            RunConfig(subcommand="exact", action="ratio"),
            RunConfig(subcommand="plot"),
            RunConfig(subcommand="enumerate"),
        ]
        for cfg in bad:
            with self.assertRaises(ConfigError):
                cfg.resolve()

    def test_from_dict(self):
        with self.assertRaises(ConfigError):
            RunConfig.from_dict({"colour": "red"})
        with self.assertRaises(ConfigError):
            RunConfig.from_dict({"q": {"value": 2}})
        self.assertEqual(RunConfig.from_dict({"q": 2.0, "sizes": [4, 8]}).sizes, [4, 8])

    def test_load(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "run.toml")
            with open(path, "w") as f:
                f.write('q = 2.0\nsizes = [4, 8]\nseed = 7\nobservable = "delta-R"\n')
            cfg = RunConfig.load(path)
        self.assertEqual((cfg.q, cfg.sizes, cfg.seed), (2.0, [4, 8], 7))
        with self.assertRaises(ConfigError):
            RunConfig.load(os.path.join(tmp, "missing.toml"))

    def test_merged_ignores_none(self):
        cfg = RunConfig(q=2, seed=3).merged({"seed": None, "n_samples": 50})
        self.assertEqual((cfg.seed, cfg.n_samples), (3, 50))

    def test_content_hash(self):
        a = RunConfig(q=2, sizes=[4], seed=1)
        b = RunConfig(q=2, sizes=[4], seed=1, workers=8, output_dir="/tmp/x", checkpoint_every=100)
        c = RunConfig(q=2, sizes=[4], seed=2)
        self.assertEqual(a.content_hash(), b.content_hash())
        self.assertNotEqual(a.content_hash(), c.content_hash())
        self.assertEqual(len(a.content_hash()), 64)


if __name__ == "__main__":
    unittest.main()
