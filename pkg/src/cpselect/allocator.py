"""Step 2: split resource blocks and transmit power among the selected helpers.

Only selected vehicles whose mean delay meets the threshold may be funded.
Throughput is linear in the RB count and energy does not depend on it, so the
exact optimum hands the whole pool to the eligible vehicle with the best
per-RB gain. That is optimal but leaves the other helpers silent, so the
proportional split is offered as the operational default.
"""
from __future__ import annotations

import csv
import dataclasses
import io
import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from .comms import energy_term, f3_throughput, f4_energy, meets_delay_constraint
from .errors import ContractError, DomainError
from .objectives import check_selection
from .scenario import Scenario
from .selector import ObjectiveWeights


class AllocPolicy(str, Enum):
    OPTIMAL = "optimal"
    PROPORTIONAL = "proportional"
    UNIFORM = "uniform"
    RANDOM = "random"


class PowerSplit(str, Enum):
    EQUAL = "equal"  # P_T shared equally by the vehicles that received RBs
    MIN_ENERGY = "min_energy"  # whole P_T on the funded vehicle with the cheapest energy term


@dataclass(frozen=True)
class AllocationPlan:
    rb_counts: tuple[int, ...]
    powers: tuple[float, ...]
    achieved_throughput: float
    achieved_energy: float
    feasible: bool
    objective: float = 0.0
    policy: AllocPolicy = AllocPolicy.OPTIMAL

    @property
    def funded(self) -> tuple[int, ...]:
        return tuple(i for i, w in enumerate(self.rb_counts) if w > 0)


def eligible_indices(s: Scenario, alpha) -> list[int]:
    """Selected candidates that satisfy the mean-delay constraint."""
    mask = check_selection(alpha, s)
    return [i for i in np.flatnonzero(mask) if meets_delay_constraint(s.candidates[i], s.comms)]


def split_powers(s: Scenario, rb_counts: Sequence[int],
                 mode: PowerSplit = PowerSplit.EQUAL) -> tuple[float, ...]:
    n = s.n_candidates
    funded = [i for i in range(n) if rb_counts[i] > 0]
    powers = [0.0] * n
    if not funded:
        return tuple(powers)
    P = s.comms.total_power
    if PowerSplit(mode) is PowerSplit.MIN_ENERGY:
        best = min(funded, key=lambda i: (energy_term(s.candidates[i], 1.0, s.comms), i))
        powers[best] = P
    else:
        share = P / len(funded)
        for i in funded:
            powers[i] = share
        # absorb rounding so the powers sum to P_T exactly
        powers[funded[-1]] = P - math.fsum(powers[i] for i in funded[:-1])
    return tuple(powers)


def evaluate_plan(s: Scenario, alpha, rb_counts: Sequence[int], weights: ObjectiveWeights,
                  policy: AllocPolicy, power_split: PowerSplit = PowerSplit.EQUAL) -> AllocationPlan:
    mask = check_selection(alpha, s)
    rb_counts = tuple(int(w) for w in rb_counts)
    if sum(rb_counts) != s.comms.total_rb_count:
        raise ContractError(f"allocation uses {sum(rb_counts)} RBs, pool has {s.comms.total_rb_count}")
    for i, w in enumerate(rb_counts):
        if w < 0:
            raise ContractError(f"negative RB count for vehicle index {i}")
        if w and not meets_delay_constraint(s.candidates[i], s.comms):
            raise ContractError(f"vehicle index {i} violates the delay threshold but received RBs")
    powers = split_powers(s, rb_counts, power_split)
    thr = f3_throughput(mask, rb_counts, s.comms, s.candidates)
    energy = f4_energy(mask, powers, s.comms, s.candidates)
    return AllocationPlan(
        rb_counts=rb_counts, powers=powers, achieved_throughput=thr, achieved_energy=energy,
        feasible=True, objective=weights.k3 * thr + weights.k4 * energy, policy=AllocPolicy(policy),
    )


def infeasible_plan(s: Scenario, policy: AllocPolicy) -> AllocationPlan:
    n = s.n_candidates
    return AllocationPlan((0,) * n, (0.0,) * n, 0.0, 0.0, False, 0.0, AllocPolicy(policy))


def allocate(s: Scenario, alpha, weights: ObjectiveWeights | None = None,
             power_split: PowerSplit = PowerSplit.EQUAL) -> AllocationPlan:
    """Exact optimum of k3*f3 + k4*f4 over integer RB vectors summing to the pool."""
    weights = weights or ObjectiveWeights()
    elig = eligible_indices(s, alpha)
    if not elig:
        return infeasible_plan(s, AllocPolicy.OPTIMAL)
    gain = {i: weights.k3 * s.comms.channel_rate * (1.0 - s.candidates[i].packet_error_prob) for i in elig}
    # one funded vehicle means both power modes put all of P_T on it
    winner = max(elig, key=lambda i: (gain[i], -i))
    rb = [0] * s.n_candidates
    rb[winner] = s.comms.total_rb_count
    return evaluate_plan(s, alpha, rb, weights, AllocPolicy.OPTIMAL, power_split)


def largest_remainder(total: int, shares: Sequence[float]) -> list[int]:
    """Round nonnegative real shares summing to ``total`` into integers summing to ``total``.

    Leftover units go to the largest fractional parts, earliest index first on ties.
    """
    floors = [int(math.floor(x)) for x in shares]
    left = total - sum(floors)
    order = sorted(range(len(shares)), key=lambda i: (-(shares[i] - floors[i]), i))
    for i in order[:left]:
        floors[i] += 1
    return floors


def allocate_proportional(s: Scenario, alpha, weights: ObjectiveWeights | None = None,
                          power_split: PowerSplit = PowerSplit.EQUAL) -> AllocationPlan:
    """RBs shared in proportion to each eligible helper's success probability 1 - beta."""
    weights = weights or ObjectiveWeights()
    elig = eligible_indices(s, alpha)
    if not elig:
        return infeasible_plan(s, AllocPolicy.PROPORTIONAL)
    B = s.comms.total_rb_count
    succ = [1.0 - s.candidates[i].packet_error_prob for i in elig]
    total = math.fsum(succ)
    counts = largest_remainder(B, [B * p / total for p in succ])
    rb = [0] * s.n_candidates
    for i, c in zip(elig, counts):
        rb[i] = c
    return evaluate_plan(s, alpha, rb, weights, AllocPolicy.PROPORTIONAL, power_split)


def random_composition(total: int, parts: int, rng: np.random.Generator) -> list[int]:
    """Uniformly random composition of ``total`` into ``parts`` nonnegative integers (stars and bars)."""
    if parts == 1:
        return [total]
    bars = np.sort(rng.choice(total + parts - 1, size=parts - 1, replace=False))
    edges = np.concatenate([[-1], bars, [total + parts - 1]])
    return [int(d) for d in np.diff(edges) - 1]


def allocate_baseline(s: Scenario, alpha, policy: AllocPolicy | str, seed: int = 0,
                      weights: ObjectiveWeights | None = None,
                      power_split: PowerSplit = PowerSplit.EQUAL) -> AllocationPlan:
    weights = weights or ObjectiveWeights()
    policy = AllocPolicy(policy)
    elig = eligible_indices(s, alpha)
    if not elig:
        return infeasible_plan(s, policy)
    B, k = s.comms.total_rb_count, len(elig)
    if policy is AllocPolicy.UNIFORM:
        counts = [B // k + (1 if j < B % k else 0) for j in range(k)]
    elif policy is AllocPolicy.RANDOM:
        counts = random_composition(B, k, np.random.default_rng(seed))
    else:
        raise ContractError(f"{policy.value!r} is not a baseline allocation policy")
    rb = [0] * s.n_candidates
    for i, c in zip(elig, counts):
        rb[i] = c
    return evaluate_plan(s, alpha, rb, weights, policy, power_split)


def allocate_policy(s: Scenario, alpha, policy: AllocPolicy | str, weights: ObjectiveWeights | None = None,
                    seed: int = 0, power_split: PowerSplit = PowerSplit.EQUAL) -> AllocationPlan:
    policy = AllocPolicy(policy)
    if policy is AllocPolicy.OPTIMAL:
        return allocate(s, alpha, weights, power_split)
    if policy is AllocPolicy.PROPORTIONAL:
        return allocate_proportional(s, alpha, weights, power_split)
    return allocate_baseline(s, alpha, policy, seed, weights, power_split)


def compositions(total: int, parts: int) -> Iterable[tuple[int, ...]]:
    """Every composition of ``total`` into ``parts`` nonnegative integers."""
    if parts == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in compositions(total - first, parts - 1):
            yield (first, *rest)


def allocate_enumerate(s: Scenario, alpha, weights: ObjectiveWeights | None = None,
                       power_split: PowerSplit = PowerSplit.EQUAL) -> AllocationPlan:
    """Brute-force optimum over all integer compositions; meant for small pools only."""
    weights = weights or ObjectiveWeights()
    elig = eligible_indices(s, alpha)
    if not elig:
        return infeasible_plan(s, AllocPolicy.OPTIMAL)
    best = None
    for comp in compositions(s.comms.total_rb_count, len(elig)):
        rb = [0] * s.n_candidates
        for i, c in zip(elig, comp):
            rb[i] = c
        plan = evaluate_plan(s, alpha, rb, weights, AllocPolicy.OPTIMAL, power_split)
        if best is None or plan.objective > best.objective:
            best = plan
    return best


# -- error sweeps ------------------------------------------------------------

def raise_error_rates(s: Scenario, beta_param: float) -> Scenario:
    """Move every candidate's beta a fraction ``beta_param`` of the way towards 1."""
    if not 0.0 <= beta_param < 1.0:
        raise DomainError(f"beta_param must lie in [0, 1), got {beta_param}")
    if beta_param == 0.0:
        return s
    cands = []
    for v in s.candidates:
        b = v.packet_error_prob + beta_param * (1.0 - v.packet_error_prob)
        if not b < 1.0:
            raise DomainError(f"beta_param {beta_param} pushes vehicle {v.id} to beta = 1")
        cands.append(dataclasses.replace(v, packet_error_prob=b))
    return s.with_candidates(cands)


@dataclass(frozen=True)
class SweepRow:
    policy: str
    beta_param: float
    throughput_bps: float
    energy_w: float

    FIELDS = ("policy", "beta_param", "throughput_bps", "energy_w")

    def to_row(self) -> list[str]:
        return [self.policy, repr(self.beta_param), repr(self.throughput_bps), repr(self.energy_w)]

    @classmethod
    def from_row(cls, row: dict[str, str]) -> "SweepRow":
        return cls(row["policy"], float(row["beta_param"]), float(row["throughput_bps"]),
                   float(row["energy_w"]))


SWEEP_POLICIES = (AllocPolicy.OPTIMAL, AllocPolicy.PROPORTIONAL, AllocPolicy.UNIFORM, AllocPolicy.RANDOM)


def sweep_error(s: Scenario, alpha, beta_grid: Sequence[float],
                weights: ObjectiveWeights | None = None, seed: int = 0,
                policies: Sequence[AllocPolicy | str] = SWEEP_POLICIES) -> list[SweepRow]:
    """Throughput and energy of each allocation policy as error rates rise along ``beta_grid``.

    The random policy reuses its seed at every grid point, so it keeps one
    fixed composition along the curve.
    """
    weights = weights or ObjectiveWeights()
    for b in beta_grid:  # fail before doing any work
        raise_error_rates(s, b)
    rows = []
    for policy in policies:
        for b in beta_grid:
            plan = allocate_policy(raise_error_rates(s, b), alpha, policy, weights, seed)
            rows.append(SweepRow(AllocPolicy(policy).value, float(b),
                                 plan.achieved_throughput, plan.achieved_energy))
    return rows


def sweep_to_csv(rows: Iterable[SweepRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SweepRow.FIELDS)
    for r in rows:
        w.writerow(r.to_row())
    return buf.getvalue()


def sweep_from_csv(text: str) -> list[SweepRow]:
    return [SweepRow.from_row(r) for r in csv.DictReader(io.StringIO(text))]
