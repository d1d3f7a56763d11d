"""Monte Carlo comparison of risk-based and proximity-based tracing.

One patient walks straight across a square area; each trial sends a healthy
walker across the same area at a random time, place and speed.  Walkers are
scored by trajectory risk (through the deployed map path) and by the minimum
simultaneous distance to the patient, and ground truth is drawn from the risk
model itself.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DegenerateLabelsError, ParameterDomainError
from .grid_map import (
    GridSpec,
    RiskMap,
    build_risk_map,
    discretize_indices,
    evaluate_trajectory,
    trajectory_from_indices,
)
from .risk_model import PresenceCell, RiskParams, Trajectory, trajectory_risk

SIDES = ("west", "east", "south", "north")
SIGMA_T_SWEEP = (10.0, 50.0, 100.0, 150.0)
SIMULATION_EPS = 1e-12


@dataclass(frozen=True)
class ScenarioConfig:
    area_side: float = 100.0
    horizon: float = 350.0
    patient_speed: float = 1.0
    walker_entry_window: tuple[float, float] = (0.0, 200.0)
    walker_speed_range: tuple[float, float] = (0.75, 1.25)
    n_trials: int = 20_000
    rng_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "walker_entry_window", tuple(float(v) for v in self.walker_entry_window))
        object.__setattr__(self, "walker_speed_range", tuple(float(v) for v in self.walker_speed_range))
        lo_t, hi_t = self.walker_entry_window
        lo_v, hi_v = self.walker_speed_range
        if not (self.area_side > 0 and self.horizon > 0 and self.patient_speed > 0):
            raise ParameterDomainError("area_side, horizon and patient_speed must be positive")
        if not 0 < lo_v <= hi_v:
            raise ParameterDomainError("walker speed range must satisfy 0 < low <= high")
        if not 0 <= lo_t <= hi_t <= self.horizon:
            raise ParameterDomainError("walker entry window must lie within [0, horizon]")
        if self.n_trials < 0:
            raise ParameterDomainError("n_trials must be non-negative")


@dataclass(frozen=True)
class WalkerMeta:
    entry_side: str
    entry_offset: float
    entry_time: float
    speed: float


@dataclass(frozen=True)
class TrialRecord:
    trial_index: int
    entry_side: str
    entry_time: float
    speed: float
    risk_score: float
    min_distance: float
    infected: bool
    true_risk: float = math.nan

    @property
    def proximity_score(self) -> float:
        return math.exp(-self.min_distance)


@dataclass(frozen=True)
class RocCurve:
    """ROC staircase, one point per distinct threshold from strictest to loosest.

    The implicit starting point (0, 0) at an infinite threshold is not stored.
    """

    points: list[tuple[float, float, float]] = field(default_factory=list)

    @property
    def fpr(self) -> np.ndarray:
        return np.array([p[0] for p in self.points])

    @property
    def tpr(self) -> np.ndarray:
        return np.array([p[1] for p in self.points])

    @property
    def thresholds(self) -> np.ndarray:
        return np.array([p[2] for p in self.points])

    @property
    def auc(self) -> float:
        x = np.r_[0.0, self.fpr]
        y = np.r_[0.0, self.tpr]
        return float(np.sum(np.diff(x) * (y[1:] + y[:-1]) / 2.0))


def trial_rng(seed: int, trial_index: int) -> np.random.Generator:
    """Independent stream for one trial, derived from (seed, trial index)."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(trial_index,)))


def _clip_to_area(idx: np.ndarray, config: ScenarioConfig, spec: GridSpec) -> np.ndarray:
    x, y, t = spec.center(idx[:, 0], idx[:, 1], idx[:, 2])
    tick = spec.origin_t + idx[:, 2] * spec.cell_size_t
    inside = (x >= 0) & (x < config.area_side) & (y >= 0) & (y < config.area_side) & (tick <= config.horizon)
    return idx[inside]


def _crossing(config: ScenarioConfig, start, heading, t0: float, speed: float, spec: GridSpec):
    duration = config.area_side / speed
    t1 = min(t0 + duration, config.horizon)
    if t1 <= t0:
        return np.empty((0, 3), np.int64)
    x1 = start[0] + heading[0] * speed * (t1 - t0)
    y1 = start[1] + heading[1] * speed * (t1 - t0)
    idx = discretize_indices([(start[0], start[1], t0), (x1, y1, t1)], spec)
    return _clip_to_area(idx, config, spec)


def generate_patient(config: ScenarioConfig, spec: GridSpec | None = None) -> Trajectory:
    """Patient enters the middle of the west side at t=0 and walks east."""
    spec = spec or GridSpec()
    idx = _crossing(config, (0.0, config.area_side / 2), (1.0, 0.0), 0.0, config.patient_speed, spec)
    return trajectory_from_indices(idx, spec, person_id="patient")


_ENTRY = {
    "west": lambda a, u: ((0.0, u), (1.0, 0.0)),
    "east": lambda a, u: ((a, u), (-1.0, 0.0)),
    "south": lambda a, u: ((u, 0.0), (0.0, 1.0)),
    "north": lambda a, u: ((u, a), (0.0, -1.0)),
}


def walker_path(config: ScenarioConfig, meta: WalkerMeta, spec: GridSpec | None = None) -> Trajectory:
    """Straight crossing perpendicular to the entry side, for fixed walker choices."""
    spec = spec or GridSpec()
    start, heading = _ENTRY[meta.entry_side](config.area_side, meta.entry_offset)
    idx = _crossing(config, start, heading, meta.entry_time, meta.speed, spec)
    return trajectory_from_indices(idx, spec, person_id="walker")


def draw_walker(config: ScenarioConfig, rng: np.random.Generator) -> WalkerMeta:
    a = config.area_side
    side = SIDES[int(rng.integers(4))]
    offset = rng.uniform(a / 4, 3 * a / 4)
    entry_time = rng.uniform(*config.walker_entry_window)
    speed = rng.uniform(*config.walker_speed_range)
    return WalkerMeta(side, float(offset), float(entry_time), float(speed))


def generate_walker(config: ScenarioConfig, rng: np.random.Generator,
                    spec: GridSpec | None = None) -> tuple[Trajectory, WalkerMeta]:
    meta = draw_walker(config, rng)
    return walker_path(config, meta, spec), meta


def sample_ground_truth(walker: Trajectory, patient_cells: Sequence[PresenceCell], true_params: RiskParams,
                        rng: np.random.Generator) -> bool:
    """Bernoulli draw with the walker's trajectory risk as success probability."""
    risk = trajectory_risk(walker, patient_cells, true_params)
    return bool(rng.random() < risk)


def min_distance(walker: Trajectory, patient: Trajectory) -> float:
    """Smallest center-to-center distance over ticks where both are present; inf if none."""
    w = walker.as_array()
    p = patient.as_array()
    if len(w) == 0 or len(p) == 0:
        return math.inf
    common, wi, pi = np.intersect1d(w[:, 2], p[:, 2], return_indices=True)
    if len(common) == 0:
        return math.inf
    d = np.hypot(w[wi, 0] - p[pi, 0], w[wi, 1] - p[pi, 1])
    return float(d.min())


def run_experiment(config: ScenarioConfig, params: RiskParams, true_params: RiskParams | None = None,
                   spec: GridSpec | None = None, eps: float = SIMULATION_EPS,
                   risk_map: RiskMap | None = None) -> list[TrialRecord]:
    """Run ``config.n_trials`` independent walker trials.

    Scores go through ``build_risk_map`` + ``evaluate_trajectory``; ground truth
    is drawn from the direct trajectory risk under ``true_params`` (defaults to
    ``params``).
    """
    spec = spec or GridSpec()
    true_params = true_params or params
    patient = generate_patient(config, spec)
    if config.n_trials == 0:
        return []
    if risk_map is None:
        risk_map = build_risk_map([patient], params, spec, eps)
    records = []
    for n in range(config.n_trials):
        rng = trial_rng(config.rng_seed, n)
        walker, meta = generate_walker(config, rng, spec)
        true_risk = trajectory_risk(walker, patient.cells, true_params)
        infected = bool(rng.random() < true_risk)
        records.append(TrialRecord(
            trial_index=n,
            entry_side=meta.entry_side,
            entry_time=meta.entry_time,
            speed=meta.speed,
            risk_score=evaluate_trajectory(risk_map, walker),
            min_distance=min_distance(walker, patient),
            infected=infected,
            true_risk=true_risk,
        ))
    return records


def scores_and_labels(records: Sequence[TrialRecord], score: str) -> tuple[np.ndarray, np.ndarray]:
    if score == "risk":
        s = np.array([r.risk_score for r in records], dtype=float)
    elif score == "proximity":
        s = np.exp(-np.array([r.min_distance for r in records], dtype=float))
    else:
        raise ValueError(f"unknown score {score!r}; expected 'risk' or 'proximity'")
    return s, np.array([bool(r.infected) for r in records])


def roc_curve(scores, labels) -> RocCurve:
    """Sweep every distinct score as a threshold (flag when score >= threshold)."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=bool)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabelsError("ROC needs at least one positive and one negative case")
    order = np.argsort(-scores, kind="mergesort")
    s, y = scores[order], labels[order]
    tp = np.cumsum(y)
    fp = np.cumsum(~y)
    last = np.r_[s[1:] != s[:-1], True]
    return RocCurve([(float(f) / n_neg, float(t) / n_pos, float(th))
                     for f, t, th in zip(fp[last], tp[last], s[last])])


def roc(records: Sequence[TrialRecord], score: str = "risk") -> RocCurve:
    return roc_curve(*scores_and_labels(records, score))


def auc(scores, labels) -> float:
    """Area under the ROC staircase via the rank-sum identity (ties count one half)."""
    from scipy.stats import rankdata

    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=bool)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabelsError("AUC needs at least one positive and one negative case")
    ranks = rankdata(scores)
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def expected_roc_curve(scores, infection_prob) -> RocCurve:
    """ROC of expected true/false positive counts when labels are Bernoulli draws.

    Each case counts as a positive with weight ``infection_prob`` and as a
    negative with the complementary weight, which removes label sampling noise.
    """
    scores = np.asarray(scores, dtype=float)
    w = np.clip(np.asarray(infection_prob, dtype=float), 0.0, 1.0)
    if w.sum() <= 0 or (1 - w).sum() <= 0:
        raise DegenerateLabelsError("expected ROC needs nonzero positive and negative mass")
    order = np.argsort(-scores, kind="mergesort")
    s, wp = scores[order], w[order]
    tp = np.cumsum(wp)
    fp = np.cumsum(1.0 - wp)
    last = np.r_[s[1:] != s[:-1], True]
    return RocCurve([(float(f) / fp[-1], float(t) / tp[-1], float(th))
                     for f, t, th in zip(fp[last], tp[last], s[last])])


def bootstrap_auc_difference(records: Sequence[TrialRecord], n_boot: int = 1000,
                             seed: int = 0) -> tuple[float, float]:
    """AUC(risk) - AUC(proximity) and its bootstrap standard error.

    Resampling is paired (both scores share each resample) and stratified by
    label, so every resample keeps the observed class counts.
    """
    risk, labels = scores_and_labels(records, "risk")
    prox, _ = scores_and_labels(records, "proximity")
    diff = auc(risk, labels) - auc(prox, labels)
    rng = np.random.default_rng(seed)
    pos = np.flatnonzero(labels)
    neg = np.flatnonzero(~labels)
    boots = np.empty(n_boot)
    for b in range(n_boot):
        sel = np.r_[rng.choice(pos, len(pos)), rng.choice(neg, len(neg))]
        boots[b] = auc(risk[sel], labels[sel]) - auc(prox[sel], labels[sel])
    return diff, float(np.std(boots, ddof=1))
