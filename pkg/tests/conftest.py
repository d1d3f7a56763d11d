import math
import random

import numpy as np
import pytest

from tracemap.grid_map import GridSpec, trajectory_from_indices
from tracemap.risk_model import PresenceCell, RiskParams

FIG2 = RiskParams(p0=0.01 / math.sqrt(2 * math.pi), sigma_x=1.0, sigma_y=1.0, sigma_t=100.0)


@pytest.fixture
def fig2_params():
    return FIG2


@pytest.fixture
def spec():
    return GridSpec()


def naive_trajectory_risk(users, patients, params):
    """Plain double product over every pair, straight from the formula."""
    prod = 1.0
    for u in users:
        for q in patients:
            if u.t < q.t:
                p = 0.0
            else:
                p = params.p0 * math.exp(-((u.x - q.x) ** 2) / params.sigma_x ** 2
                                         - ((u.y - q.y) ** 2) / params.sigma_y ** 2
                                         - ((u.t - q.t) ** 2) / params.sigma_t ** 2)
            prod *= 1.0 - p
    return 1.0 - prod


def random_walk_indices(rng: random.Random, length: int, start=(0, 0, 0), box=6):
    """Lattice walk with one cell per tick, kept inside a small box."""
    i, j, k = start
    out = []
    for _ in range(length):
        out.append((i, j, k))
        i = max(-box, min(box, i + rng.choice((-1, 0, 1))))
        j = max(-box, min(box, j + rng.choice((-1, 0, 1))))
        k += rng.choice((1, 1, 2))
    return np.array(out, dtype=np.int64)


def random_instance(seed: int, max_m=20, max_n=50, spec=None, n_patients=None):
    """Random desk-scale instance: patient trajectories plus one user trajectory."""
    spec = spec or GridSpec()
    rng = random.Random(seed)
    n_patients = n_patients or rng.randint(1, 3)
    budget = rng.randint(1, max_n)
    sizes = [budget // n_patients + (1 if r < budget % n_patients else 0) for r in range(n_patients)]
    patients = [trajectory_from_indices(random_walk_indices(rng, s, (rng.randint(-3, 3), rng.randint(-3, 3),
                                                                    rng.randint(0, 20))), spec)
                for s in sizes if s > 0]
    m = rng.randint(1, max_m)
    user = trajectory_from_indices(random_walk_indices(rng, m, (rng.randint(-3, 3), rng.randint(-3, 3),
                                                              rng.randint(0, 60))), spec)
    sigma_t = rng.choice((10.0, 50.0, 100.0))
    params = RiskParams(p0=rng.choice((FIG2.p0, 0.05, 0.2)), sigma_x=1.0, sigma_y=1.0, sigma_t=sigma_t)
    return patients, user, params
