"""Seeded batch experiments behind the CLI.

Every scenario repetition is an independent job. Jobs may run in a process
pool, but results are merged in repetition order, so the output does not
depend on the worker count.
"""
from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np
import yaml

from .allocator import SWEEP_POLICIES, AllocPolicy, SweepRow, sweep_error
from .comms import stream
from .errors import ConfigurationError, InfeasibleError
from .fusion import SyntheticConfig, degrade, fuse_many, metrics, synthesize_detections
from .scenario import Scenario, ScenarioConfig, generate_scenario
from .selector import (BASELINES, GaConfig, Method, ObjectiveWeights, SelectionObjective,
                       baseline_indices, select_ga, select_oracle)

CONFIG_DIR_ENV = "CPSELECT_CONFIG_DIR"

DEFAULT_BETA_GRID = tuple(round(0.1 * i, 1) for i in range(10))
SELECTION_POLICIES = (Method.GA, Method.ORACLE, *BASELINES)
FUSION_POLICIES = ("ego", Method.GA.value, Method.RANDOM.value, Method.CLOSEST.value, Method.FARTHEST.value)

# stream ids for the per-scenario generators
_DETECTION_STREAM = 1
_RANDOM_POLICY_STREAM = 2
_PACKET_LOSS_STREAM = 1000


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    weights: ObjectiveWeights = field(default_factory=ObjectiveWeights)
    ga: GaConfig = field(default_factory=GaConfig)
    selection_policies: tuple[str, ...] = tuple(m.value for m in SELECTION_POLICIES)
    allocation_policies: tuple[str, ...] = tuple(p.value for p in SWEEP_POLICIES)
    fusion_policies: tuple[str, ...] = FUSION_POLICIES
    selection_method: str = Method.GA.value  # picks the helpers fed to allocation
    repetitions: int = 100
    seed: int = 0
    random_draws: int = 100
    beta_grid: tuple[float, ...] = DEFAULT_BETA_GRID
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)
    iou_threshold: float = 0.5
    workers: int = 1

    def __post_init__(self):
        if self.repetitions < 1:
            raise ConfigurationError("repetitions must be >= 1")
        if self.random_draws < 1:
            raise ConfigurationError("random_draws must be >= 1")
        if not (self.selection_policies or self.allocation_policies or self.fusion_policies):
            raise ConfigurationError("at least one policy must be enabled")
        if self.workers < 1:
            raise ConfigurationError("workers must be >= 1")
        try:
            for p in self.selection_policies:
                Method(p)
            for p in self.allocation_policies:
                AllocPolicy(p)
            Method(self.selection_method)
        except ValueError as exc:
            raise ConfigurationError(str(exc)) from exc
        unknown = set(self.fusion_policies) - set(FUSION_POLICIES) - {Method.ORACLE.value}
        if unknown:
            raise ConfigurationError(f"unknown fusion policies {sorted(unknown)}")

    def scenario_seed(self, rep: int) -> int:
        return self.seed + rep

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ExperimentConfig":
        data = dict(data or {})
        try:
            if "scenario" in data:
                data["scenario"] = ScenarioConfig.from_dict(data["scenario"])
            if "weights" in data:
                data["weights"] = ObjectiveWeights(**data["weights"])
            if "ga" in data:
                data["ga"] = GaConfig(**data["ga"])
            if "synthetic" in data:
                data["synthetic"] = SyntheticConfig(**data["synthetic"])
            for key in ("selection_policies", "allocation_policies", "fusion_policies"):
                if key in data:
                    data[key] = tuple(str(p) for p in data[key])
            if "beta_grid" in data:
                data["beta_grid"] = tuple(float(b) for b in data["beta_grid"])
            return cls(**data)
        except TypeError as exc:
            raise ConfigurationError(f"bad experiment config: {exc}") from exc


def resolve_config_path(path: str | os.PathLike | None) -> Path | None:
    """Find a config file, falling back to ``$CPSELECT_CONFIG_DIR``.

    With no path given, ``default.yaml`` in that directory is used when present.
    """
    base = os.environ.get(CONFIG_DIR_ENV)
    if path is None:
        if base and (Path(base) / "default.yaml").is_file():
            return Path(base) / "default.yaml"
        return None
    p = Path(path)
    if not p.exists() and base and not p.is_absolute():
        alt = Path(base) / p
        if alt.exists():
            return alt
    return p


def load_config(path: str | os.PathLike | None) -> ExperimentConfig:
    p = resolve_config_path(path)
    if p is None:
        return ExperimentConfig()
    try:
        text = p.read_text()
    except OSError as exc:
        raise OSError(f"cannot read config {p}: {exc.strerror or exc}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"{p}: invalid YAML: {exc}") from exc
    if data is not None and not isinstance(data, dict):
        raise ConfigurationError(f"{p}: config must be a mapping")
    return ExperimentConfig.from_dict(data or {})


# -- records -----------------------------------------------------------------

@dataclass(frozen=True)
class SummaryRow:
    experiment: str
    policy: str
    param: str
    metric: str
    mean: float
    std: float
    n: int

    FIELDS = ("experiment", "policy", "param", "metric", "mean", "std", "n")

    def to_row(self) -> list[str]:
        return [self.experiment, self.policy, self.param, self.metric,
                repr(self.mean), repr(self.std), str(self.n)]

    @classmethod
    def from_row(cls, row: dict[str, str]) -> "SummaryRow":
        return cls(row["experiment"], row["policy"], row["param"], row["metric"],
                   float(row["mean"]), float(row["std"]), int(row["n"]))


def summaries_to_csv(rows: Sequence[SummaryRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SummaryRow.FIELDS)
    for r in rows:
        w.writerow(r.to_row())
    return buf.getvalue()


def summaries_from_csv(text: str) -> list[SummaryRow]:
    return [SummaryRow.from_row(r) for r in csv.DictReader(io.StringIO(text))]


def summaries_to_json(rows: Sequence[SummaryRow]) -> str:
    return json.dumps([dataclasses.asdict(r) for r in rows], indent=2) + "\n"


def mean_std(values: Sequence[float]) -> tuple[float, float]:
    n = len(values)
    if n == 0:
        return math.nan, math.nan
    m = math.fsum(values) / n
    return m, math.sqrt(math.fsum((v - m) ** 2 for v in values) / n)


def _summarize(experiment: str, policy: str, param: str, metric: str, values) -> SummaryRow:
    m, sd = mean_std(list(values))
    return SummaryRow(experiment, policy, param, metric, m, sd, len(values))


def _map_reps(fn: Callable, cfg: ExperimentConfig) -> list:
    reps = range(cfg.repetitions)
    if cfg.workers == 1:
        return [fn(cfg, r) for r in reps]
    with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
        return list(pool.map(fn, [cfg] * cfg.repetitions, reps))


def scenario_for(cfg: ExperimentConfig, rep: int) -> Scenario:
    return generate_scenario(cfg.scenario_seed(rep), config=cfg.scenario)


def ga_config_for(cfg: ExperimentConfig, rep: int) -> GaConfig:
    return dataclasses.replace(cfg.ga, seed=cfg.ga.seed + cfg.scenario_seed(rep))


def helpers_for(cfg: ExperimentConfig, s: Scenario, rep: int, method: str) -> tuple[int, ...]:
    method = Method(method)
    if method is Method.GA:
        return select_ga(s, cfg.weights, ga_config_for(cfg, rep)).selected
    if method is Method.ORACLE:
        return select_oracle(s, cfg.weights).selected
    rng = stream(cfg.scenario_seed(rep), _RANDOM_POLICY_STREAM)
    return tuple(baseline_indices(s, method, rng))


# -- selection ---------------------------------------------------------------

@dataclass(frozen=True)
class SelectionRecord:
    rep: int
    seed: int
    policy: str
    f1: float
    f2: float
    objective: float
    n_selected: float


def _selection_job(cfg: ExperimentConfig, rep: int) -> list[SelectionRecord]:
    s = scenario_for(cfg, rep)
    seed = cfg.scenario_seed(rep)
    obj = SelectionObjective(s, cfg.weights)
    out = []
    for policy in cfg.selection_policies:
        policy = Method(policy)
        if policy is Method.RANDOM:
            rng = stream(seed, _RANDOM_POLICY_STREAM)
            draws = []
            for _ in range(cfg.random_draws):
                mask = np.zeros(s.n_candidates, dtype=bool)
                mask[baseline_indices(s, policy, rng)] = True
                f1, f2 = obj.terms(mask)
                draws.append((f1, f2, obj.combine(f1, f2), float(mask.sum())))
            cols = list(zip(*draws))
            out.append(SelectionRecord(rep, seed, policy.value, *(math.fsum(c) / len(c) for c in cols)))
            continue
        if policy is Method.GA:
            r = select_ga(s, cfg.weights, ga_config_for(cfg, rep))
        elif policy is Method.ORACLE:
            r = select_oracle(s, cfg.weights)
        else:
            mask = np.zeros(s.n_candidates, dtype=bool)
            mask[baseline_indices(s, policy)] = True
            r = obj.result(mask, policy, 1)
        out.append(SelectionRecord(rep, seed, policy.value, r.f1, r.f2, r.objective_value,
                                   float(len(r.selected))))
    return out


@dataclass
class SelectionTable:
    records: list[SelectionRecord]
    summary: list[SummaryRow]

    def by_policy(self, policy: str) -> list[SelectionRecord]:
        return [r for r in self.records if r.policy == policy]


def run_selection_experiment(cfg: ExperimentConfig) -> SelectionTable:
    records = [rec for batch in _map_reps(_selection_job, cfg) for rec in batch]
    summary = []
    for policy in cfg.selection_policies:
        recs = [r for r in records if r.policy == policy]
        for metric in ("f1", "f2", "objective", "n_selected"):
            summary.append(_summarize("selection", policy, "", metric, [getattr(r, metric) for r in recs]))
    return SelectionTable(records, summary)


# -- allocation --------------------------------------------------------------

def _allocation_job(cfg: ExperimentConfig, rep: int, beta_grid=None) -> list[SweepRow] | None:
    grid = cfg.beta_grid if beta_grid is None else beta_grid
    s = scenario_for(cfg, rep)
    helpers = helpers_for(cfg, s, rep, cfg.selection_method)
    alpha = np.zeros(s.n_candidates, dtype=bool)
    alpha[list(helpers)] = True
    rows = sweep_error(s, alpha, grid, cfg.weights, seed=cfg.scenario_seed(rep),
                       policies=cfg.allocation_policies)
    return rows


@dataclass
class AllocationTable:
    per_scenario: list[list[SweepRow]]
    curves: list[SweepRow]  # mean over feasible scenarios
    summary: list[SummaryRow]
    infeasible: int


def _alloc_job_with_grid(args):
    cfg, rep, grid = args
    return _allocation_job(cfg, rep, grid)


def run_allocation_experiment(cfg: ExperimentConfig, beta_grid: Sequence[float] | None = None) -> AllocationTable:
    """Mean throughput/energy curves per allocation policy over the scenario batch.

    Scenarios whose selected helpers all miss the delay threshold cannot be
    funded and are left out of the means (and counted in ``infeasible``).
    """
    grid = tuple(cfg.beta_grid if beta_grid is None else beta_grid)
    if not grid:
        return AllocationTable([], [], [], 0)
    jobs = [(cfg, r, grid) for r in range(cfg.repetitions)]
    if cfg.workers == 1:
        results = [_alloc_job_with_grid(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_alloc_job_with_grid, jobs))

    feasible = [rows for rows in results if any(r.throughput_bps > 0 for r in rows)]
    infeasible = len(results) - len(feasible)
    if not feasible:
        raise InfeasibleError("no scenario has a selected helper meeting the delay threshold")
    curves, summary = [], []
    for policy in cfg.allocation_policies:
        for b in grid:
            pts = [r for rows in feasible for r in rows if r.policy == policy and r.beta_param == b]
            thr = [r.throughput_bps for r in pts]
            en = [r.energy_w for r in pts]
            curves.append(SweepRow(policy, b, mean_std(thr)[0], mean_std(en)[0]))
            summary.append(_summarize("allocation", policy, repr(b), "throughput_bps", thr))
            summary.append(_summarize("allocation", policy, repr(b), "energy_w", en))
    return AllocationTable(results, curves, summary, infeasible)


# -- fusion ------------------------------------------------------------------

@dataclass(frozen=True)
class FusionRecord:
    rep: int
    seed: int
    policy: str
    mean_iou: float
    recall: float
    f1: float


def fusion_metrics(s: Scenario, detections: dict, helpers: Sequence[int], seed: int,
                   iou_threshold: float = 0.5, lossy: bool = True):
    """Fuse the ego's detections with those of ``helpers`` after per-helper packet loss.

    Packet-loss draws come from a stream keyed by (seed, vehicle id), so two
    policies picking the same helper see the same losses.
    """
    sets = [detections[s.ego.id]]
    for i in helpers:
        v = s.candidates[i]
        ds = detections[v.id]
        if lossy:
            ds = degrade(ds, v.packet_error_prob, stream(seed, _PACKET_LOSS_STREAM + v.id))
        sets.append(ds)
    return metrics(fuse_many(sets), iou_threshold)


def _fusion_job(cfg: ExperimentConfig, rep: int, lossy: bool = True) -> list[FusionRecord]:
    s = scenario_for(cfg, rep)
    seed = cfg.scenario_seed(rep)
    dets = synthesize_detections(s, stream(seed, _DETECTION_STREAM), cfg.synthetic)
    out = []
    for policy in cfg.fusion_policies:
        if policy == "ego":
            draws = [()]
        elif policy == Method.RANDOM.value:
            rng = stream(seed, _RANDOM_POLICY_STREAM)
            draws = [baseline_indices(s, Method.RANDOM, rng) for _ in range(cfg.random_draws)]
        else:
            draws = [helpers_for(cfg, s, rep, policy)]
        ms = [fusion_metrics(s, dets, h, seed, cfg.iou_threshold, lossy) for h in draws]
        out.append(FusionRecord(rep, seed, policy,
                                math.fsum(m.mean_iou for m in ms) / len(ms),
                                math.fsum(m.recall for m in ms) / len(ms),
                                math.fsum(m.f1 for m in ms) / len(ms)))
    return out


def _fusion_job_perfect(cfg: ExperimentConfig, rep: int) -> list[FusionRecord]:
    return _fusion_job(cfg, rep, lossy=False)


@dataclass
class FusionTable:
    records: list[FusionRecord]
    summary: list[SummaryRow]

    def by_policy(self, policy: str) -> list[FusionRecord]:
        return [r for r in self.records if r.policy == policy]


def run_fusion_experiment(cfg: ExperimentConfig, lossy: bool = True) -> FusionTable:
    """Selection, packet loss, fusion and metrics per policy over the batch."""
    records = [rec for batch in _map_reps(_fusion_job if lossy else _fusion_job_perfect, cfg)
               for rec in batch]
    summary = []
    for policy in cfg.fusion_policies:
        recs = [r for r in records if r.policy == policy]
        for metric in ("mean_iou", "recall", "f1"):
            summary.append(_summarize("fusion", policy, "lossy" if lossy else "perfect", metric,
                                      [getattr(r, metric) for r in recs]))
    return FusionTable(records, summary)


# -- full batch --------------------------------------------------------------

def run_bench(cfg: ExperimentConfig) -> list[SummaryRow]:
    rows: list[SummaryRow] = []
    if cfg.selection_policies:
        rows += run_selection_experiment(cfg).summary
    if cfg.allocation_policies and cfg.beta_grid:
        rows += run_allocation_experiment(cfg).summary
    if cfg.fusion_policies:
        rows += run_fusion_experiment(cfg, lossy=False).summary
        rows += run_fusion_experiment(cfg, lossy=True).summary
    return rows
