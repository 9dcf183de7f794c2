"""Link models: retransmissions, effective throughput, transmit energy and delay.

All C-V2X Mode 4 impairments (half duplex, sensing threshold, propagation,
collisions) are folded into a single packet error probability ``beta``.
Bandwidth is counted in resource blocks; ``CommsBudget.channel_rate`` is the
clean-channel rate of a single RB, so throughput is linear in the RB count.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ContractError, DomainError
from .objectives import as_mask
from .scenario import CommsBudget, Vehicle


def stream(seed: int, stream_id: int = 0) -> np.random.Generator:
    """Independent generator for ``(seed, stream_id)``; used to give workers disjoint streams."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(stream_id)]))


def _check_beta(beta: float) -> float:
    if not 0.0 <= beta < 1.0:
        raise DomainError(f"packet error probability must lie in [0, 1), got {beta}")
    return float(beta)


def expected_retransmissions(beta: float) -> float:
    """Mean number of transmissions until success, 1 / (1 - beta)."""
    return 1.0 / (1.0 - _check_beta(beta))


def sample_retransmissions(beta: float, rng: np.random.Generator, size=None):
    """Geometric number of attempts on {1, 2, ...} with success probability 1 - beta."""
    return rng.geometric(1.0 - _check_beta(beta), size=size)


def effective_throughput(vehicle: Vehicle, rb_count: int, comms: CommsBudget) -> float:
    if rb_count < 0:
        raise ContractError(f"rb_count must be nonnegative, got {rb_count}")
    beta = _check_beta(vehicle.packet_error_prob)
    return comms.channel_rate * (1.0 - beta) * rb_count


def f3_throughput(alpha, rb_alloc: Sequence[int], comms: CommsBudget,
                  vehicles: Sequence[Vehicle]) -> float:
    """Total effective throughput of the selected vehicles."""
    n = len(vehicles)
    mask = as_mask(alpha, n)
    if len(rb_alloc) != n:
        raise ContractError(f"rb_alloc has {len(rb_alloc)} entries for {n} vehicles")
    for i in range(n):
        if rb_alloc[i] and not mask[i]:
            raise ContractError(f"resource blocks allocated to unselected vehicle index {i}")
    return math.fsum(effective_throughput(vehicles[i], rb_alloc[i], comms)
                     for i in range(n) if mask[i])


def f3_fixed_selection(rb_alloc: Sequence[int], comms: CommsBudget,
                       vehicles: Sequence[Vehicle]) -> float:
    """Throughput as a function of the allocation alone (every vehicle counted)."""
    return f3_throughput(np.ones(len(vehicles), dtype=bool), rb_alloc, comms, vehicles)


def energy_term(vehicle: Vehicle, power: float, comms: CommsBudget) -> float:
    return power / (comms.channel_rate * (1.0 - _check_beta(vehicle.packet_error_prob)))


def f4_energy(alpha, powers: Sequence[float], comms: CommsBudget,
              vehicles: Sequence[Vehicle]) -> float:
    """Expected power cost including retransmissions, summed over selected vehicles."""
    n = len(vehicles)
    mask = as_mask(alpha, n)
    if len(powers) != n:
        raise ContractError(f"powers has {len(powers)} entries for {n} vehicles")
    for i in range(n):
        if powers[i] < 0:
            raise ContractError(f"negative transmit power for vehicle index {i}")
        if powers[i] and not mask[i]:
            raise ContractError(f"transmit power assigned to unselected vehicle index {i}")
    return math.fsum(energy_term(vehicles[i], powers[i], comms) for i in range(n) if mask[i])


def sample_delay(vehicle: Vehicle, rng: np.random.Generator, size=None):
    """End-to-end packet delay drawn from Exp(rate = 1 / mean_delay)."""
    if not vehicle.mean_delay > 0:
        raise DomainError(f"mean_delay must be positive, got {vehicle.mean_delay}")
    return rng.exponential(vehicle.mean_delay, size=size)


def transmission_delay(comms: CommsBudget) -> float:
    """Serialization delay l / R_ch of one packet."""
    return comms.packet_length / comms.channel_rate


def end_to_end_delay(vehicle: Vehicle, comms: CommsBudget, rng: np.random.Generator,
                     size=None, include_transmission: bool = False):
    d = sample_delay(vehicle, rng, size)
    return d + transmission_delay(comms) if include_transmission else d


def meets_delay_constraint(vehicle: Vehicle, comms: CommsBudget) -> bool:
    return vehicle.mean_delay <= comms.delay_threshold


@dataclass(frozen=True)
class ChannelDraw:
    retransmission_count: int
    delays: tuple[float, ...]


def draw_channel(vehicle: Vehicle, rng: np.random.Generator) -> ChannelDraw:
    """One packet delivery: number of attempts and the delay of each attempt."""
    r = int(sample_retransmissions(vehicle.packet_error_prob, rng))
    delays = sample_delay(vehicle, rng, size=r)
    return ChannelDraw(r, tuple(float(d) for d in delays))


def simulate_goodput(vehicle: Vehicle, rb_count: int, comms: CommsBudget,
                     rng: np.random.Generator, n_slots: int = 100_000) -> float:
    """Monte-Carlo goodput: each RB carries one packet per slot, lost with probability beta."""
    beta = _check_beta(vehicle.packet_error_prob)
    delivered = rng.binomial(rb_count, 1.0 - beta, size=n_slots).sum()
    return comms.channel_rate * delivered / n_slots
