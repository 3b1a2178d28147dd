"""Experiment grids over images x algorithms x epsilons, with resumable results.

Results are JSON lines keyed by cell id. While a plan runs, records are
appended as cells finish; once it completes the file is rewritten in cell
order, so an interrupted-and-resumed run ends byte-identical to a clean one.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import os
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .attack import DEFAULT_EPSILON, AttackConfig, run_attack
from .errors import ConfigError
from .oracle import DEFAULT_BUDGET
from .strategies import ALGORITHMS, canonical_algorithm

log = logging.getLogger(__name__)

REPORT_COLUMNS = (
    "algorithm",
    "epsilon",
    "n",
    "success_rate_pct",
    "mean_queries",
    "mean_queries_success",
    "median_queries",
)


def epsilon_sweep(start, stop, step):
    """Inclusive sweep, e.g. ``epsilon_sweep(0.01, 0.09, 0.02)`` -> 0.01 ... 0.09."""
    if not (start > 0 and step > 0 and stop >= start):
        raise ConfigError(f"invalid epsilon sweep {start}:{stop}:{step}")
    count = int(np.floor((stop - start) / step + 1e-9)) + 1
    return [round(start + k * step, 10) for k in range(count)]


def derive_seed(base_seed, image_index, algorithm, epsilon, repetition):
    key = (image_index, ALGORITHMS.index(algorithm), int(round(epsilon * 1e9)), repetition)
    seq = np.random.SeedSequence(entropy=base_seed % 2**64, spawn_key=key)
    return int(seq.generate_state(1, dtype=np.uint64)[0])


@dataclass(frozen=True)
class Cell:
    index: int
    image_index: int
    algorithm: str
    epsilon: float
    repetition: int
    seed: int

    @property
    def cell_id(self):
        return f"i{self.image_index:04d}-{self.algorithm}-e{self.epsilon:g}-r{self.repetition}"


@dataclass
class ExperimentPlan:
    dataset: object
    algorithms: list
    epsilons: list = field(default_factory=lambda: [DEFAULT_EPSILON])
    targeted: bool = False
    budget: int = DEFAULT_BUDGET
    scale: int = 1
    genome_shape: Optional[tuple] = None
    base_seed: int = 0
    repetitions: int = 1
    overrides: dict = field(default_factory=dict)

    def validate(self, num_classes=None):
        if not self.algorithms:
            raise ConfigError("plan needs at least one algorithm")
        if not self.epsilons:
            raise ConfigError("plan needs at least one epsilon")
        self.algorithms = [canonical_algorithm(a) for a in self.algorithms]
        if any(not eps > 0 for eps in self.epsilons):
            raise ConfigError("epsilons must be positive")
        if self.repetitions < 1:
            raise ConfigError("repetitions must be >= 1")
        if len(self.dataset) == 0:
            raise ConfigError("dataset is empty (no correctly classified images to attack)")
        if num_classes is not None:
            self.dataset.check_classes(num_classes)
        if self.targeted:
            missing = [e.filename for e in self.dataset if e.target_class is None]
            if missing:
                raise ConfigError(f"targeted plan but no target for: {', '.join(missing[:5])}")
        shape = self.resolved_genome_shape()
        for entry in self.dataset:
            self._config(entry, self.algorithms[0], self.epsilons[0], 0).validate(entry.image.shape, num_classes)
        return shape

    def resolved_genome_shape(self):
        if self.genome_shape is not None:
            return tuple(self.genome_shape)
        H, W, C = self.dataset.image_shape
        if H % self.scale or W % self.scale:
            raise ConfigError(f"image {H}x{W} is not divisible by scale {self.scale}")
        return (H // self.scale, W // self.scale, C)

    def cells(self):
        out = []
        for img in range(len(self.dataset)):
            for algo in self.algorithms:
                for eps in self.epsilons:
                    for rep in range(self.repetitions):
                        seed = derive_seed(self.base_seed, img, algo, eps, rep)
                        out.append(Cell(len(out), img, algo, eps, rep, seed))
        return out

    def _config(self, entry, algorithm, epsilon, seed):
        return AttackConfig(
            true_class=entry.true_class,
            target_class=entry.target_class if self.targeted else None,
            genome_shape=self.resolved_genome_shape(),
            scale=self.scale,
            epsilon=epsilon,
            budget=self.budget,
            algorithm=algorithm,
            seed=seed,
            overrides=dict(self.overrides.get(algorithm, {})),
        )


def _dump(record):
    return json.dumps(record, sort_keys=True, separators=(",", ":"))


def read_results(path):
    """Parse a results file, dropping a truncated or corrupt line with a warning."""
    records = []
    path = Path(path)
    if not path.exists():
        return records
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError:
            log.warning("%s:%d: skipping unreadable record", path, lineno)
    return records


def genome_dir(results_path):
    results_path = Path(results_path)
    return results_path.with_name(results_path.name + ".genomes")


def _run_cell(plan, cell, oracle, sidecars):
    entry = plan.dataset.entries[cell.image_index]
    config = plan._config(entry, cell.algorithm, cell.epsilon, cell.seed)
    record = {
        "cell": cell.cell_id,
        "index": cell.index,
        "image": entry.filename,
        "image_index": cell.image_index,
        "algorithm": cell.algorithm,
        "epsilon": cell.epsilon,
        "repetition": cell.repetition,
        "seed": cell.seed,
        "mode": config.mode,
        "true_class": entry.true_class,
        "target_class": config.target_class,
        "budget": plan.budget,
        "genome_file": None,
        "error": None,
    }
    try:
        outcome = run_attack(entry.image, config, oracle)
    except Exception as exc:  # one bad cell must not sink the grid
        log.warning("cell %s failed: %s", cell.cell_id, exc)
        record.update(success=False, queries_used=None, best_fitness=None,
                      predicted_class_at_end=None, generations=None,
                      error=f"{type(exc).__name__}: {exc}")
        return record
    record.update(outcome.to_record())
    if outcome.success:
        sidecars.mkdir(parents=True, exist_ok=True)
        name = f"{cell.cell_id}.npy"
        np.save(sidecars / name, outcome.final_genome.data, allow_pickle=False)
        record["genome_file"] = f"{sidecars.name}/{name}"
    return record


def run_plan(plan, oracle, results_path, resume=False, parallel=1, progress=None):
    """Execute every cell of ``plan`` not already present in ``results_path``.

    ``progress(record)`` is called after each finished cell. Returns all
    records in cell order.
    """
    plan.validate(getattr(oracle, "num_classes", None))
    results_path = Path(results_path)
    sidecars = genome_dir(results_path)
    cells = plan.cells()

    done = {}
    if resume:
        wanted = {c.cell_id: c for c in cells}
        for rec in read_results(results_path):
            cell = wanted.get(rec.get("cell"))
            if cell is not None and rec.get("seed") == cell.seed:
                done[cell.cell_id] = rec
    else:
        results_path.unlink(missing_ok=True)
        if sidecars.exists():
            for stale in sidecars.glob("*.npy"):
                stale.unlink()
    # rewrite so that a truncated tail line from an interrupted run is gone
    results_path.parent.mkdir(parents=True, exist_ok=True)
    ordered = [rec for c in cells if (rec := done.get(c.cell_id)) is not None]
    results_path.write_text("".join(_dump(r) + "\n" for r in ordered), encoding="utf-8")

    todo = [c for c in cells if c.cell_id not in done]
    lock = threading.Lock()
    local = threading.local()

    def work(cell):
        if parallel > 1 and not hasattr(local, "oracle"):
            local.oracle = oracle.clone()
        record = _run_cell(plan, cell, getattr(local, "oracle", oracle), sidecars)
        with lock:
            with open(results_path, "a", encoding="utf-8") as fh:
                fh.write(_dump(record) + "\n")
            done[cell.cell_id] = record
            if progress is not None:
                progress(record)
        return record

    if parallel > 1 and len(todo) > 1:
        with ThreadPoolExecutor(max_workers=parallel) as pool:
            list(pool.map(work, todo))
    else:
        for cell in todo:
            work(cell)

    records = [done[c.cell_id] for c in cells]
    tmp = results_path.with_name(results_path.name + ".tmp")
    tmp.write_text("".join(_dump(r) + "\n" for r in records), encoding="utf-8")
    os.replace(tmp, results_path)
    return records


# --- statistics ----------------------------------------------------------


@dataclass(frozen=True)
class SummaryRow:
    algorithm: str
    epsilon: float
    n_attacks: int
    success_rate: float
    mean_queries_all: float
    mean_queries_success: Optional[float]
    median_queries_all: float


def lower_median(values):
    ordered = sorted(values)
    return ordered[(len(ordered) - 1) // 2]


def summarize(records):
    """Group records by (algorithm, epsilon) and compute the table statistics.

    Failed attacks are charged the full budget. Records carrying an error are
    not attacks and are left out, with a warning.
    """
    groups = {}
    for rec in records:
        if rec.get("error"):
            log.warning("excluding failed cell %s from statistics", rec.get("cell"))
            continue
        groups.setdefault((rec["algorithm"], rec["epsilon"]), []).append(rec)

    rows = []
    for (algorithm, epsilon), group in groups.items():
        costs = [r["queries_used"] if r["success"] else r["budget"] for r in group]
        wins = [r["queries_used"] for r in group if r["success"]]
        rows.append(
            SummaryRow(
                algorithm=algorithm,
                epsilon=epsilon,
                n_attacks=len(group),
                success_rate=100.0 * len(wins) / len(group),
                mean_queries_all=float(np.mean(costs)),
                mean_queries_success=float(np.mean(wins)) if wins else None,
                median_queries_all=float(lower_median(costs)),
            )
        )
    return rows


def _fmt(value):
    return "" if value is None else f"{value:.2f}"


def format_report(rows, fmt="csv"):
    if not rows:
        raise ConfigError("no summary rows to report")
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(REPORT_COLUMNS)
        for r in rows:
            writer.writerow([
                r.algorithm,
                f"{r.epsilon:g}",
                r.n_attacks,
                _fmt(r.success_rate),
                _fmt(r.mean_queries_all),
                _fmt(r.mean_queries_success),
                _fmt(r.median_queries_all),
            ])
        return buf.getvalue()
    if fmt in ("json", "structured_text"):
        docs = [
            {
                "algorithm": r.algorithm,
                "epsilon": r.epsilon,
                "n": r.n_attacks,
                "success_rate_pct": round(r.success_rate, 2),
                "mean_queries": round(r.mean_queries_all, 2),
                "mean_queries_success": None if r.mean_queries_success is None else round(r.mean_queries_success, 2),
                "median_queries": round(r.median_queries_all, 2),
            }
            for r in rows
        ]
        return json.dumps(docs, indent=2) + "\n"
    raise ConfigError(f"unknown report format {fmt!r}")


def emit_report(rows, path, fmt="csv"):
    path = Path(path)
    text = format_report(rows, fmt)
    try:
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot write report {path}: {exc}") from exc
    return path


def read_report(path):
    """Parse a CSV report back into :class:`SummaryRow` objects."""
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != REPORT_COLUMNS:
            raise ConfigError(f"{path}: unexpected report header {reader.fieldnames}")
        return [
            SummaryRow(
                algorithm=row["algorithm"],
                epsilon=float(row["epsilon"]),
                n_attacks=int(row["n"]),
                success_rate=float(row["success_rate_pct"]),
                mean_queries_all=float(row["mean_queries"]),
                mean_queries_success=float(row["mean_queries_success"]) if row["mean_queries_success"] else None,
                median_queries_all=float(row["median_queries"]),
            )
            for row in reader
        ]
