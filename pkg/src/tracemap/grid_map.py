"""Sparse space-time risk maps.

A map stores, for each grid cell with non-negligible risk, the accumulated
``log prod(1 - p_i)`` over every patient presence.  Storing the log-complement
keeps merges additive and lets a client evaluate a whole trajectory by summing
the stored values of the cells it visited.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from .errors import DiscretizationError, OrderingError, ParameterDomainError
from .risk_model import (
    P_CLAMP,
    PresenceCell,
    RiskParams,
    Trajectory,
    log_complement,
    risk_from_log_complement,
)

DEFAULT_EPS = 1e-9

INT32_MIN, INT32_MAX = -(2**31), 2**31 - 1
INT64_MIN, INT64_MAX = -(2**63), 2**63 - 1

# Per-contribution cutoff is eps / (N * _SLACK); cells whose partial sum lands
# within eps * 2 / _SLACK below eps are recomputed against every patient cell.
_SLACK = 1024
_CHUNK_CONTRIBUTIONS = 1 << 22

# Relative tolerance for recognising a coordinate as a cell center.
_CENTER_TOL = 1e-6


@dataclass(frozen=True)
class GridSpec:
    origin_x: float = 0.0
    origin_y: float = 0.0
    origin_t: int = 0
    cell_size_xy: float = 1.0
    cell_size_t: float = 1.0

    def __post_init__(self):
        if not (self.cell_size_xy > 0 and self.cell_size_t > 0):
            raise ParameterDomainError("cell sizes must be strictly positive")
        if int(self.origin_t) != self.origin_t:
            raise ParameterDomainError("origin_t must be an integer")
        object.__setattr__(self, "origin_t", int(self.origin_t))

    def index(self, x, y, t):
        """Floor indices of continuous coordinates (arrays or scalars)."""
        i = np.floor((np.asarray(x, dtype=float) - self.origin_x) / self.cell_size_xy).astype(np.int64)
        j = np.floor((np.asarray(y, dtype=float) - self.origin_y) / self.cell_size_xy).astype(np.int64)
        k = np.floor((np.asarray(t, dtype=float) - self.origin_t) / self.cell_size_t).astype(np.int64)
        return i, j, k

    def center(self, i, j, k):
        x = self.origin_x + (np.asarray(i, dtype=float) + 0.5) * self.cell_size_xy
        y = self.origin_y + (np.asarray(j, dtype=float) + 0.5) * self.cell_size_xy
        t = self.origin_t + (np.asarray(k, dtype=float) + 0.5) * self.cell_size_t
        return x, y, t

    def cell(self, i: int, j: int, k: int) -> PresenceCell:
        x, y, t = self.center(i, j, k)
        return PresenceCell(float(x), float(y), float(t))

    def indices_of(self, cells: np.ndarray | Sequence[PresenceCell] | Trajectory) -> np.ndarray:
        """``(n, 3)`` int64 indices of cell centers; raises if any point is off-center."""
        if isinstance(cells, Trajectory):
            arr = cells.as_array()
        elif isinstance(cells, np.ndarray):
            arr = cells.reshape(-1, 3).astype(float)
        else:
            arr = np.array([(c.x, c.y, c.t) for c in cells], dtype=float).reshape(-1, 3)
        if len(arr) == 0:
            return np.empty((0, 3), dtype=np.int64)
        fi = (arr[:, 0] - self.origin_x) / self.cell_size_xy - 0.5
        fj = (arr[:, 1] - self.origin_y) / self.cell_size_xy - 0.5
        fk = (arr[:, 2] - self.origin_t) / self.cell_size_t - 0.5
        idx = np.rint(np.stack([fi, fj, fk], axis=1))
        off = np.abs(np.stack([fi, fj, fk], axis=1) - idx)
        if np.any(off > _CENTER_TOL):
            bad = int(np.argmax(off.max(axis=1)))
            raise DiscretizationError(f"point {tuple(arr[bad])} is not a cell center of {self}")
        idx = idx.astype(np.int64)
        _check_index_range(idx)
        return idx


def _check_index_range(idx: np.ndarray) -> None:
    if len(idx) == 0:
        return
    if idx[:, :2].min() < INT32_MIN or idx[:, :2].max() > INT32_MAX:
        raise DiscretizationError("spatial cell index outside signed 32-bit range")


def _sort_kij(idx: np.ndarray) -> np.ndarray:
    """Permutation ordering rows lexicographically by (k, i, j)."""
    return np.lexsort((idx[:, 1], idx[:, 0], idx[:, 2]))


class _KeyPacker:
    """Maps (i, j, k) rows into int64 keys that sort in (k, i, j) order."""

    def __init__(self, lo: np.ndarray, hi: np.ndarray):
        self.lo = lo.astype(np.int64)
        self.span = (hi.astype(object) - lo.astype(object) + 1)
        total = int(self.span[0]) * int(self.span[1]) * int(self.span[2])
        self.ok = total < 2**62

    def pack(self, idx: np.ndarray) -> np.ndarray:
        rel = idx - self.lo
        si, sj = int(self.span[0]), int(self.span[1])
        return (rel[:, 2] * si + rel[:, 0]) * sj + rel[:, 1]

    def unpack(self, keys: np.ndarray) -> np.ndarray:
        si, sj = int(self.span[0]), int(self.span[1])
        j = keys % sj
        rest = keys // sj
        i = rest % si
        k = rest // si
        return np.stack([i, j, k], axis=1) + self.lo


def _reduce(idx: np.ndarray, vals: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sum values that share an index; output sorted by (k, i, j)."""
    if len(idx) == 0:
        return np.empty((0, 3), dtype=np.int64), np.empty(0, dtype=float)
    packer = _KeyPacker(idx.min(axis=0), idx.max(axis=0))
    if packer.ok:
        keys = packer.pack(idx)
        uniq, inv = np.unique(keys, return_inverse=True)
        sums = np.bincount(inv.ravel(), weights=vals, minlength=len(uniq))
        return packer.unpack(uniq), sums
    order = _sort_kij(idx)
    idx, vals = idx[order], vals[order]
    starts = np.flatnonzero(np.r_[True, np.any(idx[1:] != idx[:-1], axis=1)])
    return idx[starts], np.add.reduceat(vals, starts)


@dataclass(frozen=True, eq=False)
class RiskMap:
    """Downloadable per-cell risk map.

    ``indices`` is an ``(n, 3)`` int64 array of ``(i, j, k)`` rows sorted by
    ``(k, i, j)``; ``log_q`` holds ``log prod(1 - p)`` for each row.  Nothing
    here identifies a person or orders a path.
    """

    spec: GridSpec
    params: RiskParams
    truncation_eps: float
    indices: np.ndarray = field(repr=False)
    log_q: np.ndarray = field(repr=False)

    def __post_init__(self):
        if not 0.0 < self.truncation_eps < 1.0:
            raise ParameterDomainError("truncation_eps must lie in (0, 1)")
        idx = np.asarray(self.indices, dtype=np.int64).reshape(-1, 3)
        lq = np.asarray(self.log_q, dtype=np.float64).reshape(-1)
        if len(idx) != len(lq):
            raise ValueError("indices and log_q lengths differ")
        idx.flags.writeable = False
        lq.flags.writeable = False
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "log_q", lq)

    @classmethod
    def empty(cls, spec: GridSpec, params: RiskParams, truncation_eps: float = DEFAULT_EPS) -> "RiskMap":
        return cls(spec, params, truncation_eps, np.empty((0, 3), np.int64), np.empty(0))

    def __len__(self) -> int:
        return len(self.log_q)

    def __eq__(self, other) -> bool:
        if not isinstance(other, RiskMap):
            return NotImplemented
        return (
            self.spec == other.spec
            and self.params == other.params
            and self.truncation_eps == other.truncation_eps
            and np.array_equal(self.indices, other.indices)
            and np.array_equal(self.log_q.view(np.uint64), other.log_q.view(np.uint64))
        )

    __hash__ = None

    def risks(self) -> np.ndarray:
        return risk_from_log_complement(self.log_q)

    def entries(self) -> Iterable[tuple[tuple[int, int, int], float]]:
        for (i, j, k), lq in zip(self.indices.tolist(), self.log_q.tolist()):
            yield (i, j, k), lq

    @cached_property
    def _lookup(self):
        if len(self) == 0:
            return None
        packer = _KeyPacker(self.indices.min(axis=0), self.indices.max(axis=0))
        if packer.ok:
            return packer, packer.pack(self.indices)
        return None, {tuple(r): v for r, v in zip(self.indices.tolist(), self.log_q.tolist())}

    def log_q_at(self, idx: np.ndarray) -> np.ndarray:
        """Stored log-complements for ``(n, 3)`` index rows; 0 where absent."""
        idx = np.asarray(idx, dtype=np.int64).reshape(-1, 3)
        out = np.zeros(len(idx))
        if len(self) == 0 or len(idx) == 0:
            return out
        packer, table = self._lookup
        if packer is None:
            return np.array([table.get(tuple(r), 0.0) for r in idx.tolist()])
        inside = np.all((idx >= packer.lo) & (idx <= packer.lo + np.array(packer.span, dtype=np.int64) - 1), axis=1)
        if not inside.any():
            return out
        keys = packer.pack(idx[inside])
        pos = np.searchsorted(table, keys)
        pos_c = np.minimum(pos, len(table) - 1)
        hit = table[pos_c] == keys
        vals = np.where(hit, self.log_q[pos_c], 0.0)
        out[inside] = vals
        return out

    def clip(self, i_range, j_range, k_range) -> "RiskMap":
        """Sub-map with indices inside the closed ranges."""
        idx = self.indices
        keep = (
            (idx[:, 0] >= i_range[0]) & (idx[:, 0] <= i_range[1])
            & (idx[:, 1] >= j_range[0]) & (idx[:, 1] <= j_range[1])
            & (idx[:, 2] >= k_range[0]) & (idx[:, 2] <= k_range[1])
        )
        return RiskMap(self.spec, self.params, self.truncation_eps, idx[keep], self.log_q[keep])


def _offset_table(params: RiskParams, spec: GridSpec, cutoff: float) -> tuple[np.ndarray, np.ndarray]:
    """Index offsets (di, dj, dk >= 0) whose pairwise risk is at least ``cutoff``."""
    budget = math.log(params.p0) - math.log(cutoff)
    if budget < 0:
        return np.empty((0, 3), np.int64), np.empty(0)
    ax = spec.cell_size_xy**2 * params.tau_x
    ay = spec.cell_size_xy**2 * params.tau_y
    at = spec.cell_size_t**2 * params.tau_t
    ri, rj, rk = (int(math.floor(math.sqrt(budget / a))) for a in (ax, ay, at))
    di = np.arange(-ri, ri + 1)
    dj = np.arange(-rj, rj + 1)
    spatial = ax * di[:, None] ** 2 + ay * dj[None, :] ** 2
    si, sj = np.nonzero(spatial <= budget)
    sp_val = spatial[si, sj]
    dk = np.arange(0, rk + 1)
    expo = sp_val[:, None] + at * dk[None, :] ** 2
    a, b = np.nonzero(expo <= budget)
    offsets = np.stack([di[si[a]], dj[sj[a]], dk[b]], axis=1).astype(np.int64)
    return offsets, params.p0 * np.exp(-expo[a, b])


def _exact_log_q(cells: np.ndarray, patients: np.ndarray, params: RiskParams, spec: GridSpec) -> np.ndarray:
    """Log-complement of each cell against every patient cell, computed in index space."""
    out = np.empty(len(cells))
    rows = max(1, (1 << 20) // max(1, len(patients)))
    ax = spec.cell_size_xy**2 * params.tau_x
    ay = spec.cell_size_xy**2 * params.tau_y
    at = spec.cell_size_t**2 * params.tau_t
    for s in range(0, len(cells), rows):
        c = cells[s:s + rows]
        d = (c[:, None, :] - patients[None, :, :]).astype(float)
        expo = ax * d[..., 0] ** 2 + ay * d[..., 1] ** 2 + at * d[..., 2] ** 2
        p = np.where(d[..., 2] >= 0, params.p0 * np.exp(-expo), 0.0)
        out[s:s + rows] = log_complement(p).sum(axis=1)
    return out


def build_risk_map(patients: Sequence[Trajectory], params: RiskParams, spec: GridSpec | None = None,
                   truncation_eps: float = DEFAULT_EPS) -> RiskMap:
    """Aggregate patient presences into a sparse risk map.

    Every cell whose aggregate risk is at least ``truncation_eps`` is stored.
    Each patient cell is scattered over a finite neighborhood; neighborhoods
    are sized so the risk they leave out of any cell is below
    ``truncation_eps / 1024``, and cells near the storage threshold are
    re-evaluated against every patient cell.
    """
    spec = spec or GridSpec()
    if not 0.0 < truncation_eps < 1.0:
        raise ParameterDomainError("truncation_eps must lie in (0, 1)")
    parts = [spec.indices_of(p) for p in patients]
    src = np.concatenate(parts) if parts else np.empty((0, 3), np.int64)
    n = len(src)
    if n == 0:
        return RiskMap.empty(spec, params, truncation_eps)

    offsets, probs = _offset_table(params, spec, truncation_eps / (n * _SLACK))
    if len(offsets) == 0:
        return RiskMap.empty(spec, params, truncation_eps)
    contrib = log_complement(probs)

    per_chunk = max(1, _CHUNK_CONTRIBUTIONS // len(offsets))
    acc_idx, acc_val = [], []
    for s in range(0, n, per_chunk):
        block = src[s:s + per_chunk]
        idx = (block[:, None, :] + offsets[None, :, :]).reshape(-1, 3)
        vals = np.broadcast_to(contrib, (len(block), len(contrib))).reshape(-1)
        ri, rv = _reduce(idx, vals)
        acc_idx.append(ri)
        acc_val.append(rv)
    idx, log_q = (acc_idx[0], acc_val[0]) if len(acc_idx) == 1 else _reduce(np.concatenate(acc_idx),
                                                                            np.concatenate(acc_val))

    risk = risk_from_log_complement(log_q)
    border = (risk < truncation_eps) & (risk >= truncation_eps * (1.0 - 2.0 / _SLACK))
    if border.any():
        log_q = log_q.copy()
        log_q[border] = _exact_log_q(idx[border], src, params, spec)
        risk = risk_from_log_complement(log_q)
    keep = risk >= truncation_eps
    idx, log_q = idx[keep], log_q[keep]
    _check_index_range(idx)
    return RiskMap(spec, params, truncation_eps, idx, log_q)


def merge_maps(a: RiskMap, b: RiskMap) -> RiskMap:
    """Combine two maps built from disjoint patient sets by adding log-complements."""
    if a.spec != b.spec or a.params != b.params or a.truncation_eps != b.truncation_eps:
        raise DiscretizationError("maps differ in grid, parameters or truncation")
    idx, log_q = _reduce(np.concatenate([a.indices, b.indices]), np.concatenate([a.log_q, b.log_q]))
    keep = risk_from_log_complement(log_q) >= a.truncation_eps
    return RiskMap(a.spec, a.params, a.truncation_eps, idx[keep], log_q[keep])


def lookup_cell(risk_map: RiskMap, cell: PresenceCell) -> float:
    idx = risk_map.spec.indices_of([cell])
    return float(risk_from_log_complement(risk_map.log_q_at(idx)[0]))


def evaluate_trajectory(risk_map: RiskMap, user: Trajectory) -> float:
    """Trajectory risk from the map: ``1 - prod_j (1 - risk(cell_j))``."""
    idx = risk_map.spec.indices_of(user)
    return float(risk_from_log_complement(risk_map.log_q_at(idx).sum()))


def discretize(path: Sequence[tuple[float, float, float]], spec: GridSpec | None = None,
               person_id: str = "") -> Trajectory:
    """Sample a continuous ``(x, y, t)`` path at every whole tick and snap to cells."""
    spec = spec or GridSpec()
    idx = discretize_indices(path, spec)
    x, y, t = spec.center(idx[:, 0], idx[:, 1], idx[:, 2])
    cells = tuple(PresenceCell(float(a), float(b), float(c)) for a, b, c in zip(x, y, t))
    return Trajectory(cells, person_id=person_id)


def discretize_indices(path: Sequence[tuple[float, float, float]], spec: GridSpec) -> np.ndarray:
    """Index form of :func:`discretize`, shape ``(n, 3)``."""
    pts = np.asarray(path, dtype=float).reshape(-1, 3)
    if len(pts) == 0:
        return np.empty((0, 3), np.int64)
    ts = pts[:, 2]
    if np.any(np.diff(ts) <= 0):
        raise OrderingError("path samples must have strictly increasing times")
    k0 = math.ceil((ts[0] - spec.origin_t) / spec.cell_size_t)
    k1 = math.floor((ts[-1] - spec.origin_t) / spec.cell_size_t)
    if k1 < k0:
        return np.empty((0, 3), np.int64)
    k = np.arange(k0, k1 + 1, dtype=np.int64)
    tick = spec.origin_t + k * spec.cell_size_t
    x = np.interp(tick, ts, pts[:, 0])
    y = np.interp(tick, ts, pts[:, 1])
    i, j, _ = spec.index(x, y, tick)
    idx = np.stack([i, j, k], axis=1)
    _check_index_range(idx)
    return idx


def trajectory_from_indices(idx: np.ndarray, spec: GridSpec, person_id: str = "") -> Trajectory:
    x, y, t = spec.center(idx[:, 0], idx[:, 1], idx[:, 2])
    return Trajectory(tuple(PresenceCell(float(a), float(b), float(c)) for a, b, c in zip(x, y, t)),
                      person_id=person_id)


__all__ = [
    "DEFAULT_EPS",
    "GridSpec",
    "RiskMap",
    "build_risk_map",
    "discretize",
    "discretize_indices",
    "evaluate_trajectory",
    "lookup_cell",
    "merge_maps",
    "trajectory_from_indices",
    "P_CLAMP",
]
