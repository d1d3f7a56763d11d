"""Gaussian space-time decay model of infection risk.

A patient occupying a 1 m x 1 m x 1 s cell exposes anyone who later occupies a
nearby cell.  The per-contact probability decays as a Gaussian in the spatial
and temporal offsets and is exactly zero for contacts that happen before the
patient was there.  Contacts are independent, so aggregate risks are built from
products of complements, which are accumulated here as sums of ``log1p(-p)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import OrderingError, ParameterDomainError

DEFAULT_P0 = 0.01 / math.sqrt(2.0 * math.pi)

# p is clamped below 1 before log1p(-p) so a certain contact stays finite.
P_CLAMP = 1.0 - 1e-15


@dataclass(frozen=True)
class RiskParams:
    """Decay-model parameters.

    Attributes
    ----------
    p0 : float
        Infection probability of a co-located, simultaneous 1-second contact.
    sigma_x, sigma_y : float
        Spatial decay scales in meters.
    sigma_t : float
        Temporal decay scale in seconds.
    """

    p0: float = DEFAULT_P0
    sigma_x: float = 1.0
    sigma_y: float = 1.0
    sigma_t: float = 100.0

    def __post_init__(self):
        for name in ("p0", "sigma_x", "sigma_y", "sigma_t"):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise ParameterDomainError(f"{name} must be finite, got {value!r}")
        if not 0.0 < self.p0 < 1.0:
            raise ParameterDomainError(f"p0 must lie in (0, 1), got {self.p0!r}")
        for name in ("sigma_x", "sigma_y", "sigma_t"):
            if getattr(self, name) <= 0.0:
                raise ParameterDomainError(f"{name} must be positive")

    @classmethod
    def from_precisions(cls, tau: float, tau_t: float, p0: float = DEFAULT_P0) -> "RiskParams":
        """Build from a shared spatial precision ``tau`` and temporal precision ``tau_t``."""
        if not (tau > 0.0 and tau_t > 0.0):
            raise ParameterDomainError("precisions must be positive")
        sigma = 1.0 / math.sqrt(tau)
        return cls(p0=p0, sigma_x=sigma, sigma_y=sigma, sigma_t=1.0 / math.sqrt(tau_t))

    @property
    def tau_x(self) -> float:
        return 1.0 / self.sigma_x**2

    @property
    def tau_y(self) -> float:
        return 1.0 / self.sigma_y**2

    @property
    def tau_t(self) -> float:
        return 1.0 / self.sigma_t**2

    @property
    def tau(self) -> float:
        """Shared spatial precision; only defined when ``sigma_x == sigma_y``."""
        if self.sigma_x != self.sigma_y:
            raise ParameterDomainError("shared spatial precision requires sigma_x == sigma_y")
        return self.tau_x


@dataclass(frozen=True)
class PresenceCell:
    """One occupied cell, located by its center (meters, meters, seconds)."""

    x: float
    y: float
    t: float


@dataclass(frozen=True)
class Trajectory:
    """Time-ordered cells visited by one person.

    ``person_id`` is a local label only; it is never written into a map.
    ``max_speed`` (m/s) optionally bounds the jump between consecutive cells.
    """

    cells: tuple[PresenceCell, ...]
    person_id: str = ""
    max_speed: float | None = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "cells", tuple(self.cells))
        cells = self.cells
        for a, b in zip(cells, cells[1:]):
            if not b.t > a.t:
                raise OrderingError(f"cell times must strictly increase ({a.t} -> {b.t})")
            if self.max_speed is not None:
                step = math.hypot(b.x - a.x, b.y - a.y)
                if step > self.max_speed * (b.t - a.t) + 1e-9:
                    raise OrderingError(f"jump of {step:.3f} m exceeds max_speed between t={a.t} and t={b.t}")

    def __len__(self) -> int:
        return len(self.cells)

    def __iter__(self):
        return iter(self.cells)

    def as_array(self) -> np.ndarray:
        return cells_to_array(self.cells)


def cells_to_array(cells: Iterable[PresenceCell]) -> np.ndarray:
    """Stack cells into an ``(n, 3)`` float array of ``(x, y, t)``."""
    cells = list(cells)
    if not cells:
        return np.empty((0, 3), dtype=float)
    return np.array([(c.x, c.y, c.t) for c in cells], dtype=float)


def _check(params: RiskParams) -> None:
    if not isinstance(params, RiskParams):
        raise ParameterDomainError("params must be a RiskParams instance")


def pairwise_risk(user: PresenceCell, patient: PresenceCell, params: RiskParams) -> float:
    """Probability that one second in ``user`` infects, given a patient in ``patient``."""
    _check(params)
    dt = user.t - patient.t
    if dt < 0:
        return 0.0
    dx = user.x - patient.x
    dy = user.y - patient.y
    return params.p0 * math.exp(
        -(dx * dx) / params.sigma_x**2 - (dy * dy) / params.sigma_y**2 - (dt * dt) / params.sigma_t**2
    )


def pairwise_risk_array(users: np.ndarray, patients: np.ndarray, params: RiskParams) -> np.ndarray:
    """Pairwise risks for every (user cell, patient cell) combination, shape ``(M, N)``."""
    _check(params)
    u = np.asarray(users, dtype=float).reshape(-1, 3)
    q = np.asarray(patients, dtype=float).reshape(-1, 3)
    dx = u[:, None, 0] - q[None, :, 0]
    dy = u[:, None, 1] - q[None, :, 1]
    dt = u[:, None, 2] - q[None, :, 2]
    expo = -(dx * dx) * params.tau_x - (dy * dy) * params.tau_y - (dt * dt) * params.tau_t
    return np.where(dt >= 0, params.p0 * np.exp(expo), 0.0)


def log_complement(p) -> np.ndarray:
    """``log(1 - p)`` with ``p`` clamped to ``[0, 1 - 1e-15]``."""
    return np.log1p(-np.clip(p, 0.0, P_CLAMP))


def risk_from_log_complement(log_q) -> np.ndarray | float:
    """Inverse of :func:`log_complement` summed over factors: ``1 - exp(log_q)``."""
    return 0.0 - np.expm1(log_q)


def cell_risk(user: PresenceCell, patients: Sequence[PresenceCell], params: RiskParams) -> float:
    """Aggregate risk in one user cell from every patient cell (duplicates count twice)."""
    _check(params)
    if len(patients) == 0:
        return 0.0
    p = pairwise_risk_array(cells_to_array([user]), cells_to_array(patients), params)
    return float(risk_from_log_complement(log_complement(p).sum()))


_CHUNK = 1 << 20


def trajectory_log_complement(users: np.ndarray, patients: np.ndarray, params: RiskParams) -> float:
    """Sum of ``log(1 - p)`` over every user/patient cell pair."""
    users = np.asarray(users, dtype=float).reshape(-1, 3)
    patients = np.asarray(patients, dtype=float).reshape(-1, 3)
    if len(users) == 0 or len(patients) == 0:
        return 0.0
    rows = max(1, _CHUNK // len(patients))
    total = 0.0
    for start in range(0, len(users), rows):
        p = pairwise_risk_array(users[start:start + rows], patients, params)
        total += float(log_complement(p).sum())
    return total


def trajectory_risk(user: Trajectory | Sequence[PresenceCell], patients: Sequence[PresenceCell],
                    params: RiskParams) -> float:
    """Overall infection probability of a trajectory, treating each contact as independent."""
    _check(params)
    users = user.as_array() if isinstance(user, Trajectory) else cells_to_array(user)
    log_q = trajectory_log_complement(users, cells_to_array(patients), params)
    return float(risk_from_log_complement(log_q))
