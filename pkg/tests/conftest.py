import math

import numpy as np
import pytest

from cpselect.objectives import pulse_indicator, pulses
from cpselect.scenario import (CameraModel, CommsBudget, Environment, Scenario, Vehicle,
                               generate_scenario)


def make_scenario(xs, speeds=None, betas=None, delays=None, *, T=50.0, a=0.01, theta=0.0,
                  M=None, camera=None, comms=None, tx_power=0.1):
    n = len(xs)
    speeds = speeds if speeds is not None else [10.0] * n
    betas = betas if betas is not None else [0.1] * n
    delays = delays if delays is not None else [0.01] * n
    cands = tuple(
        Vehicle(id=i + 1, position_x=float(xs[i]), position_y=0.0, speed=float(speeds[i]),
                packet_error_prob=float(betas[i]), mean_delay=float(delays[i]), tx_power=tx_power)
        for i in range(n)
    )
    ego = Vehicle(0, 0.0, 0.0, 0.0, 0.0, 0.01, tx_power)
    env = Environment(visibility_threshold=T, road_angle=theta, decay_rate=a,
                      range_horizon=float(max(xs)) + T)
    return Scenario(ego, cands, camera or CameraModel(), env, comms or CommsBudget(),
                    M if M is not None else min(3, n))


def trapezoid_f1(s, mask, step=0.01):
    """Numerical f1: composite trapezoid of exp(-a x) * sum of pulse indicators.

    Segments are split at every pulse edge, each integrated with a step no
    larger than ``step``; the indicator is evaluated directly at the segment
    midpoint, where it is constant.
    """
    start, length = pulses(s)
    sel = np.flatnonzero(mask)
    horizon = s.environment.range_horizon
    a = s.environment.decay_rate
    edges = sorted({0.0, horizon, *start[sel], *(start[sel] + length[sel])})
    total = 0.0
    for lo, hi in zip(edges, edges[1:]):
        if hi <= lo:
            continue
        mid = np.array([(lo + hi) / 2])
        level = sum(pulse_indicator(mid, start[i], length[i])[0] for i in sel)
        if level == 0:
            continue
        k = max(1, math.ceil((hi - lo) / step))
        x = np.linspace(lo, hi, k + 1)
        total += level * np.trapezoid(np.exp(-a * x), x)
    return total


@pytest.fixture
def scenario():
    return generate_scenario(42)


@pytest.fixture
def small_scenario():
    return make_scenario([100.0, 130.0, 230.0, 300.0], speeds=[5.0, 20.0, 10.0, 0.0],
                         betas=[0.1, 0.2, 0.3, 0.4])
