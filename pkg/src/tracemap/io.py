"""CSV and manifest files used by the command-line workflows."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from pathlib import Path
from typing import Iterable, Sequence

from .bayes_refine import McmcResult, TestObservation
from .grid_map import GridSpec, discretize
from .risk_model import Trajectory
from .simulation import RocCurve, TrialRecord

TRAJECTORY_COLUMNS = ("t_seconds", "x_meters", "y_meters")
TRIALS_COLUMNS = ("trial_index", "entry_side", "entry_time", "speed", "risk_score", "min_distance", "infected")
ROC_COLUMNS = ("threshold", "fpr", "tpr")
SCATTER_COLUMNS = ("risk_score", "exp_neg_min_distance")
POSTERIOR_COLUMNS = ("iteration", "tau", "tau_t", "log_posterior")
OBSERVATION_COLUMNS = ("trajectory_file", "outcome")


def fmt(value: float) -> str:
    """Nine significant digits."""
    return f"{float(value):.9g}"


def _writer(fh):
    return csv.writer(fh, lineterminator="\n")


def _check_header(reader, expected: Sequence[str], path) -> None:
    if tuple(reader.fieldnames or ()) != tuple(expected):
        raise ValueError(f"{path}: expected columns {','.join(expected)}, found {reader.fieldnames}")


def read_path_csv(path) -> list[tuple[float, float, float]]:
    """Continuous samples as ``(x, y, t)`` tuples."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        _check_header(reader, TRAJECTORY_COLUMNS, path)
        return [(float(r["x_meters"]), float(r["y_meters"]), float(r["t_seconds"])) for r in reader]


def read_trajectory_csv(path, spec: GridSpec | None = None) -> Trajectory:
    return discretize(read_path_csv(path), spec or GridSpec())


def write_path_csv(path, samples: Iterable[tuple[float, float, float]]) -> None:
    with open(path, "w", newline="") as fh:
        w = _writer(fh)
        w.writerow(TRAJECTORY_COLUMNS)
        for x, y, t in samples:
            w.writerow((fmt(t), fmt(x), fmt(y)))


def write_trials_csv(path, records: Sequence[TrialRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = _writer(fh)
        w.writerow(TRIALS_COLUMNS)
        for r in records:
            w.writerow((r.trial_index, r.entry_side, fmt(r.entry_time), fmt(r.speed), fmt(r.risk_score),
                        fmt(r.min_distance), int(r.infected)))


def read_trials_csv(path) -> list[TrialRecord]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        _check_header(reader, TRIALS_COLUMNS, path)
        return [TrialRecord(int(r["trial_index"]), r["entry_side"], float(r["entry_time"]), float(r["speed"]),
                            float(r["risk_score"]), float(r["min_distance"]), r["infected"] == "1")
                for r in reader]


def write_roc_csv(path, curve: RocCurve) -> None:
    with open(path, "w", newline="") as fh:
        w = _writer(fh)
        w.writerow(ROC_COLUMNS)
        for f, t, th in curve.points:
            w.writerow((fmt(th), fmt(f), fmt(t)))


def write_scatter_csv(path, records: Sequence[TrialRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = _writer(fh)
        w.writerow(SCATTER_COLUMNS)
        for r in records:
            w.writerow((fmt(r.risk_score), fmt(math.exp(-r.min_distance))))


def read_observations_csv(path, spec: GridSpec | None = None) -> list[TestObservation]:
    """Observation rows reference trajectory files relative to the CSV's directory."""
    base = Path(path).parent
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        _check_header(reader, OBSERVATION_COLUMNS, path)
        for r in reader:
            if r["outcome"] not in ("0", "1"):
                raise ValueError(f"{path}: outcome must be 0 or 1, got {r['outcome']!r}")
            traj = read_trajectory_csv(base / r["trajectory_file"], spec)
            out.append(TestObservation(traj, r["outcome"] == "1"))
    return out


def write_posterior_csv(path, result: McmcResult) -> None:
    with open(path, "w", newline="") as fh:
        w = _writer(fh)
        w.writerow(POSTERIOR_COLUMNS)
        for s in result.samples:
            w.writerow((s.iteration, fmt(s.tau), fmt(s.tau_t), fmt(s.log_posterior)))


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def write_manifest(out_dir, command: str, config: dict, rng_seed, outputs: Sequence[str]) -> Path:
    """Write ``manifest.json`` describing a run; contains no timestamps."""
    from . import __version__

    out_dir = Path(out_dir)
    manifest = {
        "command": command,
        "config": config,
        "rng_seed": rng_seed,
        "code_version": __version__,
        "outputs": {name: sha256_file(out_dir / name) for name in sorted(outputs)},
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path
