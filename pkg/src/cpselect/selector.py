"""Step 1: choose at most M helpers maximising k1*f1 + k2*f2.

Three routes share one objective evaluator:

* :func:`select_ga` - binary genetic algorithm with repair of over-full masks,
* :func:`select_oracle` - exhaustive enumeration of every feasible mask,
* :func:`select_baseline` - the random / closest / farthest / slowest policies.

Ties are broken everywhere towards the lexicographically smallest list of
selected indices, so among equal vehicles the first one wins.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import ConfigurationError, ContractError
from .objectives import motion_blur_terms, visual_range_terms
from .scenario import Scenario

MAX_ORACLE_CANDIDATES = 25


class Method(str, Enum):
    GA = "ga"
    ORACLE = "oracle"
    RANDOM = "random"
    CLOSEST = "closest"
    FARTHEST = "farthest"
    SLOWEST = "slowest"


BASELINES = (Method.RANDOM, Method.CLOSEST, Method.FARTHEST, Method.SLOWEST)


@dataclass(frozen=True)
class ObjectiveWeights:
    """Weights of the four objective terms.

    Blur and energy are harms, so their weights are negative by convention.
    With ``standardize`` on, f1 and f2 are divided by their best single-vehicle
    value before weighting, which makes the default weights scale-free.
    """

    k1: float = 1.0
    k2: float = -1.0
    k3: float = 1.0
    k4: float = -1.0
    standardize: bool = True

    def __post_init__(self):
        if not all(math.isfinite(k) for k in (self.k1, self.k2, self.k3, self.k4)):
            raise ConfigurationError("objective weights must be finite")


VISUAL_RANGE_ONLY = ObjectiveWeights(k1=1.0, k2=0.0)


@dataclass(frozen=True)
class GaConfig:
    population_size: int = 50
    generations: int = 100
    crossover_prob: float = 0.9
    mutation_prob: float | None = None  # None means 1/N per bit
    tournament_size: int = 3
    elitism_count: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.population_size < 2:
            raise ConfigurationError("population_size must be >= 2")
        if self.generations < 0:
            raise ConfigurationError("generations must be >= 0")
        if not 0 <= self.crossover_prob <= 1:
            raise ConfigurationError("crossover_prob must lie in [0, 1]")
        if self.mutation_prob is not None and not 0 <= self.mutation_prob <= 1:
            raise ConfigurationError("mutation_prob must lie in [0, 1]")
        if self.tournament_size < 1:
            raise ConfigurationError("tournament_size must be >= 1")
        if not 0 <= self.elitism_count < self.population_size:
            raise ConfigurationError("elitism_count must lie in [0, population_size)")


@dataclass(frozen=True)
class SelectionResult:
    alpha: tuple[int, ...]
    objective_value: float
    f1: float
    f2: float
    evaluations: int
    method: Method

    @property
    def per_term(self) -> tuple[float, float]:
        return self.f1, self.f2

    @property
    def selected(self) -> tuple[int, ...]:
        return tuple(i for i, a in enumerate(self.alpha) if a)


@dataclass
class SelectionObjective:
    """Precomputed per-candidate terms for one scenario and weight set."""

    scenario: Scenario
    weights: ObjectiveWeights
    f1_terms: np.ndarray = field(init=False)
    f2_terms: np.ndarray = field(init=False)
    f1_scale: float = field(init=False)
    f2_scale: float = field(init=False)

    def __post_init__(self):
        self.f1_terms = visual_range_terms(self.scenario)
        self.f2_terms = motion_blur_terms(self.scenario)
        if self.weights.standardize:
            m1 = float(np.max(self.f1_terms)) if self.f1_terms.size else 0.0
            m2 = float(np.max(np.abs(self.f2_terms))) if self.f2_terms.size else 0.0
            self.f1_scale = m1 if m1 > 0 else 1.0
            self.f2_scale = m2 if m2 > 0 else 1.0
        else:
            self.f1_scale = self.f2_scale = 1.0

    @property
    def n(self) -> int:
        return self.f1_terms.size

    def terms(self, mask: np.ndarray) -> tuple[float, float]:
        return math.fsum(self.f1_terms[mask]), math.fsum(self.f2_terms[mask])

    def combine(self, f1: float, f2: float) -> float:
        w = self.weights
        return w.k1 * (f1 / self.f1_scale) + w.k2 * (f2 / self.f2_scale)

    def value(self, mask: np.ndarray) -> float:
        return self.combine(*self.terms(mask))

    def result(self, mask: np.ndarray, method: Method, evaluations: int) -> SelectionResult:
        f1, f2 = self.terms(mask)
        return SelectionResult(
            alpha=tuple(int(b) for b in mask),
            objective_value=self.combine(f1, f2),
            f1=f1, f2=f2, evaluations=evaluations, method=Method(method),
        )


def objective_value(alpha, s: Scenario, weights: ObjectiveWeights) -> float:
    """Recompute the step-1 objective of a selection vector."""
    return SelectionObjective(s, weights).value(np.asarray(alpha, dtype=bool))


def _index_key(mask: np.ndarray) -> tuple[int, ...]:
    return tuple(int(i) for i in np.flatnonzero(mask))


def _better(value: float, mask: np.ndarray, best_value: float, best_mask) -> bool:
    if best_mask is None or value > best_value:
        return True
    return value == best_value and _index_key(mask) < _index_key(best_mask)


def _check_scenario(s: Scenario) -> None:
    if s.max_helpers < 0:
        raise ConfigurationError(f"max_helpers must be nonnegative, got {s.max_helpers}")
    if s.n_candidates == 0:
        raise ContractError("scenario has no candidates")


def select_oracle(s: Scenario, weights: ObjectiveWeights | None = None) -> SelectionResult:
    """Exact argmax over every mask with at most M ones."""
    weights = weights or ObjectiveWeights()
    _check_scenario(s)
    n = s.n_candidates
    if n > MAX_ORACLE_CANDIDATES:
        raise ContractError(f"oracle refuses {n} candidates (limit {MAX_ORACLE_CANDIDATES})")
    obj = SelectionObjective(s, weights)
    best_value, best_mask, count = -math.inf, None, 0
    for r in range(min(s.max_helpers, n) + 1):
        for combo in itertools.combinations(range(n), r):
            mask = np.zeros(n, dtype=bool)
            mask[list(combo)] = True
            v = obj.value(mask)
            count += 1
            if _better(v, mask, best_value, best_mask):
                best_value, best_mask = v, mask
    return obj.result(best_mask, Method.ORACLE, count)


def repair(pop: np.ndarray, max_ones: int, rng: np.random.Generator) -> np.ndarray:
    """Clear randomly chosen bits of every row holding more than ``max_ones`` ones (in place)."""
    counts = pop.sum(axis=1)
    for row in np.flatnonzero(counts > max_ones):
        ones = np.flatnonzero(pop[row])
        drop = rng.choice(ones, size=ones.size - max_ones, replace=False)
        pop[row, drop] = False
    return pop


def select_ga(s: Scenario, weights: ObjectiveWeights | None = None,
              cfg: GaConfig | None = None) -> SelectionResult:
    weights = weights or ObjectiveWeights()
    cfg = cfg or GaConfig()
    _check_scenario(s)
    obj = SelectionObjective(s, weights)
    n, M = obj.n, min(s.max_helpers, obj.n)
    P = cfg.population_size
    pm = cfg.mutation_prob if cfg.mutation_prob is not None else 1.0 / n
    rng = np.random.default_rng(cfg.seed)

    cache: dict[bytes, float] = {}

    def evaluate(pop: np.ndarray) -> np.ndarray:
        out = np.empty(len(pop))
        for j, row in enumerate(pop):
            key = row.tobytes()
            v = cache.get(key)
            if v is None:
                v = cache[key] = obj.value(row)
            out[j] = v
        return out

    pop = rng.random((P, n)) < (M / n)
    repair(pop, M, rng)
    fit = evaluate(pop)

    n_children = P - cfg.elitism_count
    n_pairs = (n_children + 1) // 2
    for _ in range(cfg.generations):
        elite = np.argsort(-fit, kind="stable")[: cfg.elitism_count]

        contenders = rng.integers(0, P, size=(2 * n_pairs, cfg.tournament_size))
        winners = contenders[np.arange(2 * n_pairs), np.argmax(fit[contenders], axis=1)]
        p1, p2 = pop[winners[:n_pairs]], pop[winners[n_pairs:]]

        swap = (rng.random((n_pairs, n)) < 0.5) & (rng.random((n_pairs, 1)) < cfg.crossover_prob)
        c1 = np.where(swap, p2, p1)
        c2 = np.where(swap, p1, p2)
        children = np.concatenate([c1, c2])[:n_children]
        children ^= rng.random(children.shape) < pm
        repair(children, M, rng)

        pop = np.concatenate([pop[elite], children])
        fit = evaluate(pop)

    best_value, best_mask = -math.inf, None
    for key, v in cache.items():
        mask = np.frombuffer(key, dtype=bool)
        if _better(v, mask, best_value, best_mask):
            best_value, best_mask = v, mask.copy()
    return obj.result(best_mask, Method.GA, len(cache))


def baseline_indices(s: Scenario, policy: Method | str, rng: np.random.Generator | None = None) -> list[int]:
    policy = Method(policy)
    n, M = s.n_candidates, min(s.max_helpers, s.n_candidates)
    if policy is Method.RANDOM:
        if rng is None:
            raise ContractError("random policy needs a generator")
        return sorted(int(i) for i in rng.choice(n, size=M, replace=False))
    if policy is Method.CLOSEST or policy is Method.FARTHEST:
        dist = np.array([v.position_x - s.ego.position_x for v in s.candidates])
        order = np.argsort(dist if policy is Method.CLOSEST else -dist, kind="stable")
    elif policy is Method.SLOWEST:
        order = np.argsort([v.speed for v in s.candidates], kind="stable")
    else:
        raise ConfigurationError(f"{policy.value!r} is not a baseline policy")
    return sorted(int(i) for i in order[:M])


def select_baseline(s: Scenario, policy: Method | str, seed: int = 0,
                    weights: ObjectiveWeights | None = None) -> SelectionResult:
    _check_scenario(s)
    obj = SelectionObjective(s, weights or ObjectiveWeights())
    idx = baseline_indices(s, policy, np.random.default_rng(seed))
    mask = np.zeros(s.n_candidates, dtype=bool)
    mask[idx] = True
    return obj.result(mask, Method(policy), 1)


def select(s: Scenario, method: Method | str, weights: ObjectiveWeights | None = None,
           ga: GaConfig | None = None, seed: int = 0) -> SelectionResult:
    """Dispatch to the GA, the oracle or a baseline by name."""
    method = Method(method)
    if method is Method.GA:
        return select_ga(s, weights, ga)
    if method is Method.ORACLE:
        return select_oracle(s, weights)
    return select_baseline(s, method, seed, weights)
