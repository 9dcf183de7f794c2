"""World state: vehicles, camera, environment, comms budget, and random scenarios.

Positions are stored as raw road coordinates. Any road-angle projection happens
when objectives are evaluated, never here.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .errors import ConfigurationError

RB_WIDTH_HZ = 180_000.0
BETA_CLAMP = 1e-3


def rb_pool_for_bandwidth(bandwidth_hz: float) -> int:
    """Number of RBs in an LTE channel of the given bandwidth.

    The standard LTE grids are 50 RBs at 10 MHz and 100 RBs at 20 MHz (the
    remaining spectrum is guard band, 90% occupancy). Other bandwidths use
    the same 90% occupancy rule.
    """
    if bandwidth_hz <= 0:
        raise ConfigurationError(f"bandwidth must be positive, got {bandwidth_hz}")
    return max(1, int(math.floor(0.9 * bandwidth_hz / RB_WIDTH_HZ + 1e-9)))


BANDWIDTH_PRESETS_RB = {mhz: rb_pool_for_bandwidth(mhz * 1e6) for mhz in (10, 20)}


@dataclass(frozen=True)
class Vehicle:
    id: int
    position_x: float
    position_y: float
    speed: float
    packet_error_prob: float
    mean_delay: float
    tx_power: float


@dataclass(frozen=True)
class CameraModel:
    exposure_time: float = 0.01
    focal_length: float = 0.004
    ccd_pixel_size: float = 4e-6
    object_start_px: float = 0.0
    motion_angle: float = 0.0
    depth: float = 20.0
    pixel_pitch: float = 4e-6


@dataclass(frozen=True)
class Environment:
    visibility_threshold: float = 80.0
    road_angle: float = 0.0
    decay_rate: float = 0.002
    range_horizon: float = 400.0


@dataclass(frozen=True)
class CommsBudget:
    channel_rate: float = 500_000.0  # bits/s delivered by one RB on a clean channel
    total_rb_count: int = 50
    rb_width: float = RB_WIDTH_HZ
    total_power: float = 0.2
    delay_threshold: float = 0.1
    packet_length: float = 8_000.0


@dataclass(frozen=True)
class Scenario:
    ego: Vehicle
    candidates: tuple[Vehicle, ...]
    camera: CameraModel
    environment: Environment
    comms: CommsBudget
    max_helpers: int

    @property
    def n_candidates(self) -> int:
        return len(self.candidates)

    def with_candidates(self, candidates) -> "Scenario":
        return dataclasses.replace(self, candidates=tuple(candidates))


@dataclass(frozen=True)
class ScenarioConfig:
    """Distribution parameters for :func:`generate_scenario`.

    Position and speed ranges are not given by the source experiments; the
    defaults here are modelling assumptions.
    """

    n_candidates: int = 10
    max_helpers: int = 3
    beta_a: float = 2.0
    beta_b: float = 8.0
    beta_clamp: float = BETA_CLAMP
    mean_delay_scale: float = 0.05
    speed_min: float = 0.0
    speed_max: float = 30.0
    ego_x: float = 0.0
    gap_min: float = 5.0
    road_length: float = 300.0
    lane_offsets: tuple[float, ...] = (0.0, 3.5)
    tx_power: float = 0.2
    camera: CameraModel = field(default_factory=CameraModel)
    visibility_threshold: float = 80.0
    road_angle: float = 0.0
    decay_rate: float = 0.002
    comms: CommsBudget = field(default_factory=CommsBudget)

    def check(self) -> None:
        if self.n_candidates < 1:
            raise ConfigurationError("n_candidates must be >= 1")
        if not 1 <= self.max_helpers <= self.n_candidates:
            raise ConfigurationError(
                f"max_helpers must lie in [1, {self.n_candidates}], got {self.max_helpers}"
            )
        if not (self.beta_a > 0 and self.beta_b > 0):
            raise ConfigurationError(
                f"Beta shape parameters must be positive, got ({self.beta_a}, {self.beta_b})"
            )
        if not 0 < self.beta_clamp < 1:
            raise ConfigurationError("beta_clamp must lie in (0, 1)")
        if not self.mean_delay_scale > 0:
            raise ConfigurationError("mean_delay_scale (1/rate) must be positive")
        if not 0 <= self.speed_min <= self.speed_max:
            raise ConfigurationError("need 0 <= speed_min <= speed_max")
        if not 0 <= self.gap_min < self.road_length:
            raise ConfigurationError("need 0 <= gap_min < road_length")
        if not self.lane_offsets:
            raise ConfigurationError("lane_offsets must not be empty")
        if self.visibility_threshold <= 0 or self.decay_rate <= 0:
            raise ConfigurationError("visibility_threshold and decay_rate must be positive")

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ScenarioConfig":
        data = dict(data)
        try:
            if "camera" in data:
                data["camera"] = CameraModel(**data["camera"])
            if "comms" in data:
                data["comms"] = CommsBudget(**data["comms"])
            if "lane_offsets" in data:
                data["lane_offsets"] = tuple(float(v) for v in data["lane_offsets"])
            return cls(**data)
        except TypeError as exc:
            raise ConfigurationError(f"bad scenario config: {exc}") from exc


def generate_scenario(seed: int, n_candidates: int | None = None,
                      config: ScenarioConfig | None = None) -> Scenario:
    """Draw a random scenario; a pure function of ``(seed, n_candidates, config)``."""
    config = config or ScenarioConfig()
    if n_candidates is not None:
        config = dataclasses.replace(
            config, n_candidates=n_candidates,
            max_helpers=min(config.max_helpers, max(n_candidates, 1)),
        )
    config.check()
    rng = np.random.default_rng(seed)
    n = config.n_candidates

    xs = np.sort(rng.uniform(config.ego_x + config.gap_min, config.ego_x + config.road_length, n))
    lanes = rng.integers(0, len(config.lane_offsets), n)
    speeds = rng.uniform(config.speed_min, config.speed_max, n)
    betas = np.minimum(rng.beta(config.beta_a, config.beta_b, n), 1.0 - config.beta_clamp)
    delays = rng.exponential(config.mean_delay_scale, n)
    # exponential draws of exactly 0.0 are possible in principle
    delays = np.maximum(delays, np.finfo(float).tiny)

    candidates = tuple(
        Vehicle(
            id=i + 1,
            position_x=float(xs[i]),
            position_y=float(config.lane_offsets[lanes[i]]),
            speed=float(speeds[i]),
            packet_error_prob=float(betas[i]),
            mean_delay=float(delays[i]),
            tx_power=float(config.tx_power),
        )
        for i in range(n)
    )
    ego = Vehicle(id=0, position_x=float(config.ego_x), position_y=0.0, speed=0.0,
                  packet_error_prob=0.0, mean_delay=config.mean_delay_scale,
                  tx_power=float(config.tx_power))
    env = Environment(
        visibility_threshold=config.visibility_threshold,
        road_angle=config.road_angle,
        decay_rate=config.decay_rate,
        range_horizon=float(xs[-1] - config.ego_x + config.visibility_threshold),
    )
    return Scenario(ego=ego, candidates=candidates, camera=config.camera,
                    environment=env, comms=config.comms, max_helpers=config.max_helpers)


@dataclass(frozen=True)
class Violation:
    code: str
    message: str


def validate_scenario(s: Scenario) -> list[Violation]:
    """Return every invariant violation in ``s``; an empty list means the scenario is valid."""
    out: list[Violation] = []

    def bad(code, msg):
        out.append(Violation(code, msg))

    cands = s.candidates
    for v in (s.ego, *cands):
        if not 0.0 <= v.packet_error_prob < 1.0:
            bad("beta_out_of_range", f"vehicle {v.id}: beta={v.packet_error_prob} not in [0, 1)")
        if not v.mean_delay > 0:
            bad("nonpositive_mean_delay", f"vehicle {v.id}: mean_delay={v.mean_delay}")
        if not v.speed >= 0:
            bad("negative_speed", f"vehicle {v.id}: speed={v.speed}")
        if not v.tx_power >= 0:
            bad("negative_tx_power", f"vehicle {v.id}: tx_power={v.tx_power}")
    for a, b in zip(cands, cands[1:]):
        if not a.position_x < b.position_x:
            bad("candidates_unsorted",
                f"vehicle {b.id} at x={b.position_x} does not follow vehicle {a.id} at x={a.position_x}")
    for v in cands:
        if not v.position_x > s.ego.position_x:
            bad("candidate_behind_ego", f"vehicle {v.id} at x={v.position_x} is not ahead of ego")
    if len({v.id for v in (s.ego, *cands)}) != len(cands) + 1:
        bad("duplicate_vehicle_id", "vehicle ids are not unique")

    if s.max_helpers < 1:
        bad("max_helpers_below_one", f"max_helpers={s.max_helpers}")
    if s.max_helpers > len(cands):
        bad("max_helpers_exceeds_candidates",
            f"max_helpers={s.max_helpers} > {len(cands)} candidates")

    env = s.environment
    if not env.visibility_threshold > 0:
        bad("nonpositive_visibility", f"visibility_threshold={env.visibility_threshold}")
    if not env.decay_rate > 0:
        bad("nonpositive_decay_rate", f"decay_rate={env.decay_rate}")
    if cands:
        needed = max(v.position_x for v in cands) - s.ego.position_x + env.visibility_threshold
        if env.range_horizon < needed:
            bad("horizon_too_small", f"range_horizon={env.range_horizon} < {needed}")

    cam = s.camera
    for name in ("exposure_time", "focal_length", "depth", "pixel_pitch"):
        if not getattr(cam, name) > 0:
            bad("camera_nonpositive", f"camera.{name}={getattr(cam, name)}")

    c = s.comms
    if c.total_rb_count < 1 or int(c.total_rb_count) != c.total_rb_count:
        bad("rb_count_invalid", f"total_rb_count={c.total_rb_count}")
    if c.rb_width != RB_WIDTH_HZ:
        bad("rb_width_invalid", f"rb_width={c.rb_width}, expected {RB_WIDTH_HZ}")
    if not c.total_power > 0:
        bad("nonpositive_total_power", f"total_power={c.total_power}")
    if not c.delay_threshold > 0:
        bad("nonpositive_delay_threshold", f"delay_threshold={c.delay_threshold}")
    if not c.channel_rate > 0:
        bad("nonpositive_channel_rate", f"channel_rate={c.channel_rate}")
    return out


# -- serialization -----------------------------------------------------------

def scenario_to_dict(s: Scenario) -> dict[str, Any]:
    d = dataclasses.asdict(s)
    d["candidates"] = [dict(v) for v in d["candidates"]]
    return d


def scenario_from_dict(d: dict[str, Any]) -> Scenario:
    try:
        return Scenario(
            ego=Vehicle(**d["ego"]),
            candidates=tuple(Vehicle(**v) for v in d["candidates"]),
            camera=CameraModel(**d["camera"]),
            environment=Environment(**d["environment"]),
            comms=CommsBudget(**d["comms"]),
            max_helpers=int(d["max_helpers"]),
        )
    except (KeyError, TypeError) as exc:
        raise ConfigurationError(f"malformed scenario document: {exc}") from exc


def dumps_scenario(s: Scenario) -> str:
    return yaml.safe_dump(scenario_to_dict(s), sort_keys=False)


def loads_scenario(text: str) -> Scenario:
    data = yaml.safe_load(text)
    if not isinstance(data, dict):
        raise ConfigurationError("scenario document must be a mapping")
    return scenario_from_dict(data)


def save_scenario(s: Scenario, path: str | Path) -> None:
    Path(path).write_text(dumps_scenario(s))


def load_scenario(path: str | Path) -> Scenario:
    return loads_scenario(Path(path).read_text())
