import math
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tracemap.errors import DiscretizationError, OrderingError, ParameterDomainError
from tracemap.grid_map import (
    GridSpec,
    RiskMap,
    build_risk_map,
    discretize,
    evaluate_trajectory,
    lookup_cell,
    merge_maps,
    trajectory_from_indices,
)
from tracemap.risk_model import PresenceCell, RiskParams, Trajectory, cell_risk, trajectory_risk

from conftest import FIG2, random_instance


def cells_of(*trajs):
    return [c for t in trajs for c in t.cells]


def test_gridspec_validation_and_floor():
    with pytest.raises(ParameterDomainError):
        GridSpec(cell_size_xy=0)
    with pytest.raises(ParameterDomainError):
        GridSpec(origin_t=0.5)
    spec = GridSpec(origin_x=-10.0, origin_y=5.0, origin_t=100, cell_size_xy=2.0, cell_size_t=1.0)
    i, j, k = spec.index(-10.0, 4.999, 100.0)
    assert (int(i), int(j), int(k)) == (0, -1, 0)
    assert spec.cell(0, -1, 0) == PresenceCell(-9.0, 4.0, 100.5)


def test_single_patient_cell_stores_p0(spec):
    patient = trajectory_from_indices(np.array([[3, 4, 10]]), spec)
    m = build_risk_map([patient], FIG2, spec)
    assert lookup_cell(m, patient.cells[0]) == pytest.approx(FIG2.p0, rel=1e-12)


def test_empty_patient_list(spec):
    m = build_risk_map([], FIG2, spec)
    assert len(m) == 0
    assert lookup_cell(m, spec.cell(0, 0, 0)) == 0.0


def test_eps_domain(spec):
    with pytest.raises(ParameterDomainError):
        build_risk_map([], FIG2, spec, truncation_eps=0.0)
    with pytest.raises(ParameterDomainError):
        build_risk_map([], FIG2, spec, truncation_eps=1.0)


def test_lookup_of_hand_built_map(spec):
    m = RiskMap(spec, FIG2, 1e-9, np.array([[1, 2, 3]]), np.array([math.log(0.5)]))
    assert lookup_cell(m, spec.cell(1, 2, 3)) == pytest.approx(0.5, rel=1e-15)
    assert lookup_cell(m, spec.cell(1, 2, 4)) == 0.0


def test_off_grid_cells_rejected(spec):
    m = build_risk_map([trajectory_from_indices(np.array([[0, 0, 0]]), spec)], FIG2, spec)
    with pytest.raises(DiscretizationError):
        evaluate_trajectory(m, Trajectory([PresenceCell(0.2, 0.5, 0.5)]))
    with pytest.raises(DiscretizationError):
        build_risk_map([Trajectory([PresenceCell(0.0, 0.0, 0.0)])], FIG2, spec)


@pytest.mark.parametrize("seed", range(6))
def test_two_patients_match_direct_cell_risk(seed, spec):
    patients, _, params = random_instance(seed, n_patients=2)
    m = build_risk_map(patients, params, spec, truncation_eps=1e-14)
    flat = cells_of(*patients)
    rng = np.random.default_rng(seed)
    rows = m.indices[rng.choice(len(m), size=min(40, len(m)), replace=False)]
    for i, j, k in rows:
        c = spec.cell(i, j, k)
        assert lookup_cell(m, c) == pytest.approx(cell_risk(c, flat, params), abs=1e-12, rel=1e-12)


def test_stored_cells_are_exactly_those_above_eps(spec):
    patient = trajectory_from_indices(np.array([[0, 0, k] for k in range(5)] + [[1, 0, 7]]), spec)
    params = RiskParams(p0=0.1, sigma_t=3.0)
    eps = 1e-4
    m = build_risk_map([patient], params, spec, eps)
    stored = {tuple(r) for r in m.indices.tolist()}
    for i in range(-5, 7):
        for j in range(-5, 6):
            for k in range(-2, 25):
                r = cell_risk(spec.cell(i, j, k), patient.cells, params)
                if abs(r - eps) < 1e-12:
                    continue
                assert ((i, j, k) in stored) == (r >= eps), (i, j, k, r)
    assert np.all(m.risks() >= eps)


def test_evaluate_examples(spec):
    patient = trajectory_from_indices(np.array([[0, 0, k] for k in range(3)]), spec)
    m = build_risk_map([patient], FIG2, spec)
    far = trajectory_from_indices(np.array([[500, 500, k] for k in range(10)]), spec)
    assert evaluate_trajectory(m, far) == 0.0
    one = Trajectory([spec.cell(0, 1, 2)])
    assert evaluate_trajectory(m, one) == pytest.approx(lookup_cell(m, one.cells[0]), rel=1e-15)


@pytest.mark.parametrize("seed", range(5))
def test_random_100_cell_trajectory_matches_direct(seed, spec):
    patients, _, params = random_instance(seed, max_n=50)
    rng = random.Random(seed)
    idx = []
    i, j, k = 0, 0, rng.randint(0, 10)
    for _ in range(100):
        idx.append((i, j, k))
        i += rng.choice((-1, 0, 1))
        j += rng.choice((-1, 0, 1))
        k += 1
    user = trajectory_from_indices(np.array(idx), spec)
    m = build_risk_map(patients, params, spec, truncation_eps=1e-12)
    assert evaluate_trajectory(m, user) == pytest.approx(trajectory_risk(user, cells_of(*patients), params),
                                                         abs=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([1e-6, 1e-4, 1e-3]))
def test_truncation_only_drops_risk(seed, eps):
    spec = GridSpec()
    patients, user, params = random_instance(seed, spec=spec)
    m = build_risk_map(patients, params, spec, eps)
    direct = trajectory_risk(user, cells_of(*patients), params)
    via_map = evaluate_trajectory(m, user)
    assert via_map <= direct + 1e-15
    assert direct - via_map <= 1 - (1 - eps) ** len(user) + 1e-15


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_build_is_associative_under_merge(seed):
    spec = GridSpec()
    patients, _, params = random_instance(seed, n_patients=2, spec=spec)
    eps = 1e-13
    whole = build_risk_map(patients, params, spec, eps)
    merged = merge_maps(build_risk_map(patients[:1], params, spec, eps),
                        build_risk_map(patients[1:], params, spec, eps))
    cells = np.unique(np.concatenate([whole.indices, merged.indices]), axis=0)
    a = 0.0 - np.expm1(whole.log_q_at(cells))
    b = 0.0 - np.expm1(merged.log_q_at(cells))
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)


def test_merge_rejects_mismatched_maps(spec):
    a = RiskMap.empty(spec, FIG2)
    b = RiskMap.empty(spec, RiskParams(sigma_t=10.0))
    with pytest.raises(DiscretizationError):
        merge_maps(a, b)


def test_map_size_is_independent_of_placement(spec):
    near = trajectory_from_indices(np.array([[0, 0, k] for k in range(20)]), spec)
    far = trajectory_from_indices(np.array([[1_000_000, -2_000_000, 10**9 + k] for k in range(20)]), spec)
    assert len(build_risk_map([near], FIG2, spec)) == len(build_risk_map([far], FIG2, spec))


def test_map_carries_no_person_identifiers(spec):
    patient = trajectory_from_indices(np.array([[0, 0, 0], [1, 0, 1]]), spec, person_id="alice")
    m = build_risk_map([patient], FIG2, spec)
    assert set(vars(m)) <= {"spec", "params", "truncation_eps", "indices", "log_q"}
    assert "alice" not in repr(m)


# discretize

def test_stationary_point(spec):
    t = discretize([(3.2, 4.7, 0.0), (3.2, 4.7, 9.0)], spec)
    idx = spec.indices_of(t)
    assert len(t) == 10
    assert np.all(idx[:, :2] == [3, 4])
    assert idx[:, 2].tolist() == list(range(10))


def test_straight_unit_speed_path(spec):
    t = discretize([(0.5, 0.5, 0.0), (4.5, 0.5, 4.0)], spec)
    idx = spec.indices_of(t)
    assert len(t) == 5
    assert idx[:, 0].tolist() == [0, 1, 2, 3, 4]


def test_slow_diagonal_matches_per_tick_floor(spec):
    start, v, duration = (2.3, 7.9), 0.75, 40.0
    ux = uy = v / math.sqrt(2)
    path = [(start[0], start[1], 0.25), (start[0] + ux * duration, start[1] + uy * duration, 0.25 + duration)]
    idx = spec.indices_of(discretize(path, spec))
    expected = []
    for tick in range(1, 41):
        dt = tick - 0.25
        expected.append((math.floor(start[0] + ux * dt), math.floor(start[1] + uy * dt), tick))
    assert [tuple(r) for r in idx.tolist()] == expected


def test_discretize_rejects_unordered_time(spec):
    with pytest.raises(OrderingError):
        discretize([(0, 0, 5.0), (1, 1, 4.0)], spec)
