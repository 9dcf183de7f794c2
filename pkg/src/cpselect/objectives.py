"""Perception-side objectives: decay-weighted visual range (f1) and motion blur (f2).

Both objectives are sums of per-candidate terms. Pulses never overlap because
each one is cut at the next candidate's position, so a selection's score is
the exactly rounded sum (``math.fsum``) of the selected terms. That makes a
score independent of summation order and reproducible bit-for-bit.
"""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, ContractError, DomainError
from .scenario import Scenario


def as_mask(alpha: Sequence[int] | np.ndarray, n: int) -> np.ndarray:
    """Coerce a selection vector to a boolean array of length ``n``."""
    arr = np.asarray(alpha)
    if arr.shape != (n,):
        raise ContractError(f"selection vector has shape {arr.shape}, expected ({n},)")
    if arr.dtype != bool:
        if not np.all((arr == 0) | (arr == 1)):
            raise ContractError("selection vector entries must be 0 or 1")
        arr = arr.astype(bool)
    return arr


def check_selection(alpha, s: Scenario) -> np.ndarray:
    mask = as_mask(alpha, s.n_candidates)
    if int(mask.sum()) > s.max_helpers:
        raise ContractError(f"{int(mask.sum())} helpers selected, at most {s.max_helpers} allowed")
    return mask


def mask_from_indices(indices, n: int) -> np.ndarray:
    mask = np.zeros(n, dtype=bool)
    mask[list(indices)] = True
    return mask


def projected_positions(s: Scenario) -> np.ndarray:
    """Candidate distances ahead of the ego, projected onto the road axis."""
    x = np.array([v.position_x for v in s.candidates], dtype=float) - s.ego.position_x
    theta = s.environment.road_angle
    return x if theta == 0 else x * math.cos(theta)


def pulses(s: Scenario) -> tuple[np.ndarray, np.ndarray]:
    """Start and length of every candidate's visual-range pulse.

    A candidate sees ahead until the visibility threshold or the next
    candidate, whichever comes first; the front-most candidate sees the full
    threshold.
    """
    start = projected_positions(s)
    T = s.environment.visibility_threshold
    length = np.full(start.shape, T, dtype=float)
    if start.size > 1:
        length[:-1] = np.minimum(T, np.diff(start))
    return start, length


def pulse_for(candidate_index: int, s: Scenario) -> tuple[float, float]:
    if not 0 <= candidate_index < s.n_candidates:
        raise ContractError(f"candidate index {candidate_index} out of range")
    start, length = pulses(s)
    return float(start[candidate_index]), float(length[candidate_index])


def visual_range_terms(s: Scenario) -> np.ndarray:
    """Per-candidate integral of exp(-a x) over the candidate's pulse."""
    a = s.environment.decay_rate
    if not a > 0:
        raise ConfigurationError(f"decay_rate must be positive, got {a}")
    start, length = pulses(s)
    # e^{-a s} - e^{-a (s+L)} = e^{-a s} * (1 - e^{-a L}), the latter via expm1
    return np.exp(-a * start) * -np.expm1(-a * length) / a


def motion_blur_terms(s: Scenario) -> np.ndarray:
    """Per-candidate blur extent in pixels for the shared camera model."""
    cam = s.camera
    phi = cam.motion_angle
    sin_phi, cos_phi = math.sin(phi), math.cos(phi)
    v = np.array([c.speed for c in s.candidates], dtype=float)
    num = v * cam.exposure_time * (cam.focal_length * cos_phi - cam.ccd_pixel_size * cam.object_start_px * sin_phi)
    den = v * cam.exposure_time * cam.ccd_pixel_size * sin_phi + cam.depth * cam.pixel_pitch
    if np.any(den == 0):
        raise DomainError("motion blur denominator vanishes for some candidate")
    return num / den


def masked_sum(terms: np.ndarray, mask: np.ndarray) -> float:
    return math.fsum(terms[mask])


def f1_visual_range(alpha, s: Scenario) -> float:
    return masked_sum(visual_range_terms(s), as_mask(alpha, s.n_candidates))


def f2_motion_blur(alpha, s: Scenario) -> float:
    return masked_sum(motion_blur_terms(s), as_mask(alpha, s.n_candidates))


def pulse_indicator(x: np.ndarray, start: float, length: float) -> np.ndarray:
    """Direct step-function form u[x - start] - u[x - (start + length)], with u(0) = 1."""
    return np.heaviside(x - start, 1.0) - np.heaviside(x - (start + length), 1.0)
