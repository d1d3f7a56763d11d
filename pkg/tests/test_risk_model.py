import math
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tracemap.errors import OrderingError, ParameterDomainError
from tracemap.risk_model import (
    PresenceCell,
    RiskParams,
    Trajectory,
    cell_risk,
    pairwise_risk,
    trajectory_risk,
)

from conftest import FIG2, naive_trajectory_risk

coord = st.integers(-8, 8).map(float)
time_ = st.integers(0, 400).map(float)
cells = st.builds(PresenceCell, coord, coord, time_)


def test_zero_offset_is_p0():
    c = PresenceCell(0.0, 50.0, 0.0)
    assert pairwise_risk(c, c, FIG2) == pytest.approx(0.01 / math.sqrt(2 * math.pi), rel=1e-15)
    assert pairwise_risk(c, c, FIG2) == pytest.approx(3.9894e-3, rel=1e-4)


def test_two_meter_offset():
    expected = (0.01 / math.sqrt(2 * math.pi)) * math.exp(-(2.0 ** 2) / 1.0 ** 2)
    got = pairwise_risk(PresenceCell(0, 52, 0), PresenceCell(0, 50, 0), FIG2)
    assert got == pytest.approx(expected, rel=1e-12)
    assert got == pytest.approx(7.307e-5, rel=1e-3)


@given(cells, cells)
def test_causality_is_exact(u, q):
    if u.t < q.t:
        assert pairwise_risk(u, q, FIG2) == 0.0
    else:
        assert 0.0 <= pairwise_risk(u, q, FIG2) <= FIG2.p0


@pytest.mark.parametrize("kwargs", [
    dict(p0=0.0), dict(p0=1.0), dict(p0=-0.1), dict(sigma_x=0.0), dict(sigma_y=-1.0),
    dict(sigma_t=0.0), dict(sigma_t=math.inf), dict(p0=math.nan),
])
def test_invalid_params(kwargs):
    with pytest.raises(ParameterDomainError):
        RiskParams(**kwargs)


def test_non_params_rejected():
    with pytest.raises(ParameterDomainError):
        pairwise_risk(PresenceCell(0, 0, 0), PresenceCell(0, 0, 0), {"p0": 0.1})


@given(st.floats(1e-3, 1e3), st.floats(1e-2, 1e4))
def test_precision_round_trip(sigma, sigma_t):
    p = RiskParams(sigma_x=sigma, sigma_y=sigma, sigma_t=sigma_t)
    back = RiskParams.from_precisions(p.tau, p.tau_t, p.p0)
    assert back.sigma_x == pytest.approx(sigma, rel=1e-12)
    assert back.sigma_t == pytest.approx(sigma_t, rel=1e-12)


def test_shared_tau_needs_equal_scales():
    with pytest.raises(ParameterDomainError):
        RiskParams(sigma_x=1.0, sigma_y=2.0).tau


def test_cell_risk_examples():
    u = PresenceCell(0, 0, 10)
    c = PresenceCell(1, 0, 5)
    p = pairwise_risk(u, c, FIG2)
    assert cell_risk(u, [], FIG2) == 0.0
    assert cell_risk(u, [c], FIG2) == pytest.approx(p, rel=1e-12)
    assert cell_risk(u, [c, c], FIG2) == pytest.approx(1 - (1 - p) ** 2, rel=1e-12)


def test_trajectory_reductions():
    patients = [PresenceCell(0, 0, 0), PresenceCell(1, 1, 3), PresenceCell(2, 0, 8)]
    u = PresenceCell(1, 0, 9)
    assert trajectory_risk(Trajectory([u]), patients, FIG2) == pytest.approx(cell_risk(u, patients, FIG2),
                                                                             rel=1e-12)
    early = Trajectory([PresenceCell(0, 0, -5), PresenceCell(0, 0, -1)])
    assert trajectory_risk(early, patients, FIG2) == 0.0


@pytest.mark.parametrize("seed", range(5))
def test_trajectory_matches_naive_double_product(seed):
    rng = random.Random(seed)
    params = RiskParams(p0=0.2, sigma_x=1.5, sigma_y=0.8, sigma_t=20.0)
    users = [PresenceCell(rng.uniform(-3, 3), rng.uniform(-3, 3), float(t)) for t in range(10, 15)]
    patients = [PresenceCell(rng.uniform(-3, 3), rng.uniform(-3, 3), float(rng.randint(0, 14))) for _ in range(7)]
    assert trajectory_risk(Trajectory(users), patients, params) == pytest.approx(
        naive_trajectory_risk(users, patients, params), rel=1e-12)


def test_trajectory_times_must_increase():
    with pytest.raises(OrderingError):
        Trajectory([PresenceCell(0, 0, 1), PresenceCell(0, 0, 1)])
    with pytest.raises(OrderingError):
        Trajectory([PresenceCell(0, 0, 0), PresenceCell(5, 0, 1)], max_speed=2.0)
    Trajectory([PresenceCell(0, 0, 0), PresenceCell(5, 0, 1)])


def test_many_factors_do_not_underflow():
    # 40,000 co-located contacts at p=0.2 would underflow a naive product.
    params = RiskParams(p0=0.2, sigma_t=1e6)
    users = Trajectory([PresenceCell(0, 0, float(t)) for t in range(200, 400)])
    patients = [PresenceCell(0, 0, float(t)) for t in range(200)]
    assert trajectory_risk(users, patients, params) == 1.0
    tiny = RiskParams(p0=1e-12)
    assert trajectory_risk(users, patients, tiny) > 0.0


@settings(max_examples=60)
@given(cells, st.lists(cells, max_size=6), cells)
def test_appending_patient_never_lowers_risk(u, patients, extra):
    before = cell_risk(u, patients, FIG2)
    after = cell_risk(u, patients + [extra], FIG2)
    assert after >= before
    traj = Trajectory([u])
    assert trajectory_risk(traj, patients + [extra], FIG2) >= trajectory_risk(traj, patients, FIG2)
    assert 0.0 <= after <= 1.0


@given(st.integers(-5, 5), st.integers(-5, 5), st.integers(0, 300))
def test_isotropy_under_quarter_turns(dx, dy, dt):
    q = PresenceCell(10.0, 20.0, 0.0)
    ref = pairwise_risk(PresenceCell(q.x + dx, q.y + dy, dt), q, FIG2)
    for rx, ry in ((-dy, dx), (-dx, -dy), (dy, -dx)):
        assert pairwise_risk(PresenceCell(q.x + rx, q.y + ry, dt), q, FIG2) == ref


@settings(max_examples=40)
@given(cells, st.lists(cells, min_size=1, max_size=10), st.randoms())
def test_patient_order_independence(u, patients, rnd):
    shuffled = list(patients)
    rnd.shuffle(shuffled)
    a = cell_risk(u, patients, FIG2)
    b = cell_risk(u, shuffled, FIG2)
    assert b == pytest.approx(a, rel=1e-12, abs=1e-300)


@settings(max_examples=40)
@given(st.lists(cells, min_size=1, max_size=6, unique_by=lambda c: c.t), st.lists(cells, max_size=8))
def test_factorization_identity(users, patients):
    users = sorted(users, key=lambda c: c.t)
    direct = trajectory_risk(Trajectory(users), patients, FIG2)
    via_cells = 1.0 - np.prod([1.0 - cell_risk(u, patients, FIG2) for u in users])
    assert direct == pytest.approx(via_cells, rel=1e-12, abs=1e-15)
