"""
Chain fan-out, checkpoints and report files.

n samples are cut into a fixed number of chains (independent of the worker
count); finished chains are checkpointed as integer tallies keyed by the job,
so an interrupted run resumes by running only the chains still missing.
"""
from __future__ import annotations

import csv
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field
from typing import Callable

from stats import EstimateResult, Tally

logger = logging.getLogger(__name__)

CSV_SCHEMA_VERSION = 1
CSV_COLUMNS = ["run_id", "observable", "q", "kappa", "R", "r", "delta",
               "n_raw", "n_eff", "mean", "stderr", "tau_int", "seed"]
SUMMARY_SCHEMA_VERSION = 1


def get_output_dir(output_dir: str | None = None) -> str:
    path = output_dir or os.environ.get("FKLAB_OUTPUT_DIR") or os.path.join(os.getcwd(), "out")
    os.makedirs(path, exist_ok=True)
    return path


def split_samples(n: int, chains: int) -> list[int]:
    """Samples per chain: n // chains, the first n % chains chains taking one extra."""
    if chains < 1:
        raise ValueError(f"Number of chains must be positive, got {chains}")
    base, extra = divmod(n, chains)
    return [base + (1 if i < extra else 0) for i in range(chains)]


# ───────────────────────────── Checkpoints ─────────────────────────────

class Checkpoint:
    """JSON file of finished chain tallies, one section per job key."""

    def __init__(self, path: str, every: int = 0):
        self.path = path
        self.every = every

    def load(self, key: str) -> dict[int, Tally]:
        if not os.path.isfile(self.path):
            return {}
        with open(self.path, encoding="utf-8") as f:
            data = json.load(f)
        section = data.get("jobs", {}).get(key, {})
        return {int(cid): Tally(**t) for cid, t in section.items()}

    def save(self, key: str, tallies: dict[int, Tally]):
        data = {"jobs": {}}
        if os.path.isfile(self.path):
            with open(self.path, encoding="utf-8") as f:
                data = json.load(f)
        data.setdefault("jobs", {})[key] = {str(cid): t.to_dict() for cid, t in sorted(tallies.items())}
        tmp = self.path + ".tmp"
        with open(tmp, "w", encoding="utf-8") as f:
            json.dump(data, f, indent=1, sort_keys=True)
        os.replace(tmp, self.path)
        logger.debug(f"Checkpointed {len(tallies)} chains for {key}")


def run_chains(fn: Callable, job, n: int, chains: int, workers: int = 1,
               checkpoint: Checkpoint | None = None) -> list[Tally]:
    """fn(job, chain_id, n_chain) -> Tally for every chain, in process or on a pool."""
    sizes = split_samples(n, chains)
    key = job.key()
    done = checkpoint.load(key) if checkpoint else {}
    if done:
        logger.info(f"Resuming {key}: {len(done)} of {chains} chains already finished")
    todo = [cid for cid in range(chains) if cid not in done]
    since_save = 0

    def finish(cid: int, tally: Tally):
        nonlocal since_save
        done[cid] = tally
        since_save += tally.n
        if checkpoint and since_save >= checkpoint.every:
            checkpoint.save(key, done)
            since_save = 0

    if workers <= 1:
        for cid in todo:
            finish(cid, fn(job, cid, sizes[cid]))
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = {pool.submit(fn, job, cid, sizes[cid]): cid for cid in todo}
            for fut in as_completed(futures):
                finish(futures[fut], fut.result())
    if checkpoint and since_save:
        checkpoint.save(key, done)
    return [done[cid] for cid in range(chains)]


# ───────────────────────────── Reports ─────────────────────────────

@dataclass
class RunRecord:
    config: dict
    content_hash: str
    results: list[dict] = field(default_factory=list)
    fit: dict | None = None
    cross_check: dict | None = None
    wall_time: float = 0.0
    checkpoint: str | None = None

    @property
    def run_id(self) -> str:
        return self.content_hash[:12]

    def add(self, result: EstimateResult, kappa: float | None = None):
        p = result.params
        self.results.append({
            "run_id": self.run_id,
            "observable": p.get("observable"),
            "q": p.get("q"),
            "kappa": kappa,
            "R": p.get("R"),
            "r": p.get("r"),
            "delta": p.get("delta"),
            "n_raw": result.n_raw,
            "n_eff": result.n_effective,
            "mean": result.mean,
            "stderr": result.stderr,
            "tau_int": result.tau_int,
            "seed": result.seed,
        })

    def to_dict(self) -> dict:
        return {
            "schema_version": SUMMARY_SCHEMA_VERSION,
            "run_id": self.run_id,
            "content_hash": self.content_hash,
            "config": self.config,
            "results": self.results,
            "fit": self.fit,
            "cross_check": self.cross_check,
            "wall_time": self.wall_time,
            "checkpoint": self.checkpoint,
        }


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path: str, rows: list[dict]):
    """Schema-versioned CSV; floats written with repr so reruns compare byte for byte."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        f.write(f"# fklab-csv schema={CSV_SCHEMA_VERSION}\n")
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for row in rows:
            writer.writerow([_cell(row.get(col)) for col in CSV_COLUMNS])
    logger.info(f"Wrote {len(rows)} rows to {path}")


def write_summary(path: str, record: RunRecord):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(record.to_dict(), f, indent=2, sort_keys=True)
    logger.info(f"Wrote summary to {path}")
