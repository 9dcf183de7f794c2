"""Late fusion of per-vehicle detections and detection metrics.

Fusion keeps, for every ground-truth object, the best IoU any source achieved
on it. That needs ground truth at fusion time, so it is an evaluation-time
fusion. :func:`fuse_confidence_max` is the variant usable without ground truth.

Packet loss acts on whole detections: each predicted box a helper sends is
lost independently with the helper's packet error probability.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ContractError, DomainError
from .objectives import motion_blur_terms, pulses
from .scenario import Scenario

FALSE_POSITIVE = -1


@dataclass(frozen=True)
class BoundingBox:
    x_min: float
    y_min: float
    x_max: float
    y_max: float
    confidence: float = 1.0
    # ground-truth id; FALSE_POSITIVE for spurious boxes, None when unknown (imported data)
    object_id: int | None = FALSE_POSITIVE

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ContractError(f"degenerate box {self}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ContractError(f"confidence {self.confidence} outside [0, 1]")

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)


@dataclass(frozen=True)
class DetectionSet:
    vehicle_id: int
    ground_truth: tuple[BoundingBox, ...]
    predictions: tuple[BoundingBox, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "ground_truth", tuple(self.ground_truth))
        object.__setattr__(self, "predictions", tuple(self.predictions))
        ids = [g.object_id for g in self.ground_truth]
        if any(i is None or i == FALSE_POSITIVE for i in ids) or len(set(ids)) != len(ids):
            raise ContractError("ground-truth boxes need unique, non-sentinel object ids")
        known = set(ids)
        for p in self.predictions:
            if p.object_id is not None and p.object_id != FALSE_POSITIVE and p.object_id not in known:
                raise ContractError(f"prediction refers to unknown object {p.object_id}")

    @property
    def object_ids(self) -> tuple[int, ...]:
        return tuple(g.object_id for g in self.ground_truth)


def iou(a: BoundingBox, b: BoundingBox) -> float:
    w = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    h = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if w <= 0 or h <= 0:
        return 0.0
    inter = w * h
    return inter / (a.area + b.area - inter)


def match_predictions(ds: DetectionSet) -> tuple[dict[int, float], int, int]:
    """Best IoU per ground-truth object, plus counts of unmatched and redundant predictions.

    Predictions carrying an object id are matched by id. Predictions with an
    unknown id are matched greedily by highest IoU, one to one.

    Returns ``(best_iou_by_object, n_false_positive, n_duplicates)``.
    """
    gt = {g.object_id: g for g in ds.ground_truth}
    best = {oid: 0.0 for oid in gt}
    hits = {oid: 0 for oid in gt}
    false_pos = 0
    unknown: list[BoundingBox] = []
    for p in ds.predictions:
        if p.object_id is None:
            unknown.append(p)
        elif p.object_id == FALSE_POSITIVE:
            false_pos += 1
        else:
            best[p.object_id] = max(best[p.object_id], iou(p, gt[p.object_id]))
            hits[p.object_id] += 1
    if unknown:
        pairs = sorted(
            ((iou(p, g), j, oid) for j, p in enumerate(unknown) for oid, g in gt.items()),
            key=lambda t: (-t[0], t[1], t[2]),
        )
        used_p: set[int] = set()
        used_g: set[int] = set()
        for v, j, oid in pairs:
            if v <= 0 or j in used_p or oid in used_g:
                continue
            used_p.add(j)
            used_g.add(oid)
            best[oid] = max(best[oid], v)
            hits[oid] += 1
        false_pos += len(unknown) - len(used_p)
    duplicates = sum(h - 1 for h in hits.values() if h > 1)
    return best, false_pos, duplicates


@dataclass(frozen=True)
class FusedDetections:
    """Per-object fused IoU in ground-truth order, plus the false positives that came along."""

    object_ids: tuple[int, ...]
    ious: tuple[float, ...]
    false_positives: int = 0

    def __iter__(self):
        return iter(self.ious)

    def __len__(self):
        return len(self.ious)

    def __getitem__(self, i):
        return self.ious[i]


def _check_same_objects(sets: Sequence[DetectionSet]) -> None:
    ref = sorted(sets[0].object_ids)
    for ds in sets[1:]:
        if sorted(ds.object_ids) != ref:
            raise ContractError(
                f"vehicles {sets[0].vehicle_id} and {ds.vehicle_id} disagree on ground-truth objects"
            )


def fuse_many(sets: Sequence[DetectionSet]) -> FusedDetections:
    """Per-object max of the best IoU achieved by any of the sets."""
    if not sets:
        raise ContractError("nothing to fuse")
    _check_same_objects(sets)
    ids = sets[0].object_ids
    fused = dict.fromkeys(ids, 0.0)
    fp = 0
    for ds in sets:
        best, n_fp, _ = match_predictions(ds)
        fp += n_fp
        for oid in ids:
            fused[oid] = max(fused[oid], best[oid])
    return FusedDetections(ids, tuple(fused[oid] for oid in ids), fp)


def fuse_iou_max(ego: DetectionSet, helper: DetectionSet) -> FusedDetections:
    """IoU_s = max(IoU_e, IoU_h) for every ground-truth object."""
    return fuse_many([ego, helper])


def fuse_confidence_max(ego: DetectionSet, helper: DetectionSet) -> FusedDetections:
    """Deployment-style fusion: per object keep the more confident box, then score it."""
    _check_same_objects([ego, helper])
    gt = {g.object_id: g for g in ego.ground_truth}
    chosen: dict[int, BoundingBox] = {}
    fp = 0
    for ds in (ego, helper):
        for p in ds.predictions:
            if p.object_id is None or p.object_id == FALSE_POSITIVE:
                fp += 1
            elif p.object_id not in chosen or p.confidence > chosen[p.object_id].confidence:
                chosen[p.object_id] = p
    ids = ego.object_ids
    ious = tuple(iou(chosen[o], gt[o]) if o in chosen else 0.0 for o in ids)
    return FusedDetections(ids, ious, fp)


def degrade(ds: DetectionSet, beta: float, rng: np.random.Generator) -> DetectionSet:
    """Drop each predicted box independently with probability ``beta``.

    One uniform draw per box, compared against ``beta``: the same generator
    state yields nested survivor sets for increasing ``beta``.
    """
    if not 0.0 <= beta < 1.0:
        raise DomainError(f"beta must lie in [0, 1), got {beta}")
    u = rng.random(len(ds.predictions))
    kept = tuple(p for p, x in zip(ds.predictions, u) if x >= beta)
    return replace(ds, predictions=kept)


@dataclass(frozen=True)
class Metrics:
    mean_iou: float
    recall: float
    f1: float
    precision: float


def metrics(fused: FusedDetections | Sequence[float], iou_threshold: float = 0.5) -> Metrics:
    """Mean IoU, recall and F1 of a fused result.

    An object counts as detected when its IoU reaches the threshold. Predictions
    that touch an object below the threshold count as false positives, as do
    the spurious boxes carried in ``fused.false_positives``.
    """
    if not 0.0 < iou_threshold < 1.0:
        raise ContractError(f"iou_threshold must lie in (0, 1), got {iou_threshold}")
    ious = list(fused)
    if not ious:
        raise ContractError("metrics undefined without ground-truth objects")
    spurious = getattr(fused, "false_positives", 0)
    tp = sum(1 for v in ious if v >= iou_threshold)
    poor = sum(1 for v in ious if 0.0 < v < iou_threshold)
    recall = tp / len(ious)
    n_pred = tp + poor + spurious
    precision = tp / n_pred if n_pred else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return Metrics(math.fsum(ious) / len(ious), recall, f1, precision)


# -- synthetic detections ----------------------------------------------------

@dataclass(frozen=True)
class SyntheticConfig:
    """Knobs of the detector-free stand-in used for fusion experiments.

    A vehicle detects objects inside its own visual-range pulse. Detection
    probability and localisation quality fall with distance into the pulse
    and with the vehicle's motion blur.
    """

    n_objects: int = 20
    px_per_meter: float = 10.0
    box_width: float = 40.0
    box_height: float = 80.0
    iou_near: float = 0.95
    iou_far_drop: float = 0.5
    blur_drop: float = 0.3
    blur_ref_px: float = 5.0
    iou_noise: float = 0.03
    detect_near: float = 0.95
    detect_far_drop: float = 0.4
    false_positive_rate: float = 0.2


def _shifted_box(gt: BoundingBox, target_iou: float, sign: float, confidence: float) -> BoundingBox:
    # horizontal shift of an equal-size box giving IoU (w - d) / (w + d) = target
    w = gt.x_max - gt.x_min
    d = sign * w * (1.0 - target_iou) / (1.0 + target_iou)
    return BoundingBox(gt.x_min + d, gt.y_min, gt.x_max + d, gt.y_max, confidence, gt.object_id)


def synthesize_detections(s: Scenario, rng: np.random.Generator,
                          cfg: SyntheticConfig | None = None) -> dict[int, DetectionSet]:
    """Ground truth shared by all vehicles plus one prediction set per vehicle (ego included)."""
    cfg = cfg or SyntheticConfig()
    horizon = s.environment.range_horizon
    T = s.environment.visibility_threshold
    obj_pos = np.sort(rng.uniform(0.0, horizon, cfg.n_objects))
    gt = tuple(
        BoundingBox(p * cfg.px_per_meter, 100.0, p * cfg.px_per_meter + cfg.box_width,
                    100.0 + cfg.box_height, 1.0, j)
        for j, p in enumerate(obj_pos)
    )

    start, length = pulses(s)
    blur = motion_blur_terms(s)
    first = float(start[0]) if start.size else T
    views = [(s.ego.id, 0.0, min(T, first), 0.0)]
    views += [(v.id, float(start[i]), float(length[i]), float(blur[i]))
              for i, v in enumerate(s.candidates)]

    out = {}
    for vid, lo, span, b in views:
        blur_pen = cfg.blur_drop * b / (b + cfg.blur_ref_px) if b > 0 else 0.0
        preds = []
        for g, p in zip(gt, obj_pos):
            d = p - lo
            u_det, u_noise, u_sign = rng.random(), rng.normal(), rng.random()
            if not 0.0 <= d <= span:
                continue
            frac = d / T
            if u_det >= cfg.detect_near - cfg.detect_far_drop * frac:
                continue
            target = cfg.iou_near - cfg.iou_far_drop * frac - blur_pen + cfg.iou_noise * u_noise
            target = float(np.clip(target, 0.05, 0.99))
            preds.append(_shifted_box(g, target, 1.0 if u_sign < 0.5 else -1.0, target))
        for _ in range(rng.poisson(cfg.false_positive_rate)):
            x = rng.uniform(0.0, horizon * cfg.px_per_meter)
            preds.append(BoundingBox(x, 300.0, x + cfg.box_width, 300.0 + cfg.box_height,
                                     float(rng.uniform(0.1, 0.6)), FALSE_POSITIVE))
        out[vid] = DetectionSet(vid, gt, tuple(preds))
    return out


# -- line-delimited I/O ------------------------------------------------------

def _box_record(vehicle_id: int, kind: str, b: BoundingBox) -> dict:
    return {"vehicle_id": vehicle_id, "kind": kind, "object_id": b.object_id,
            "box": [b.x_min, b.y_min, b.x_max, b.y_max], "confidence": b.confidence}


def dumps_detections(sets: Iterable[DetectionSet]) -> str:
    lines = []
    for ds in sets:
        lines += [json.dumps(_box_record(ds.vehicle_id, "gt", g)) for g in ds.ground_truth]
        lines += [json.dumps(_box_record(ds.vehicle_id, "pred", p)) for p in ds.predictions]
    return "".join(line + "\n" for line in lines)


def loads_detections(text: str) -> dict[int, DetectionSet]:
    gts: dict[int, list] = {}
    preds: dict[int, list] = {}
    for n, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            box = BoundingBox(*map(float, rec["box"]), float(rec.get("confidence", 1.0)),
                              rec.get("object_id"))
            vid, kind = int(rec["vehicle_id"]), rec["kind"]
        except (ValueError, KeyError, TypeError) as exc:
            raise ContractError(f"line {n}: bad detection record: {exc}") from exc
        if kind not in ("gt", "pred"):
            raise ContractError(f"line {n}: unknown record kind {kind!r}")
        gts.setdefault(vid, [])
        preds.setdefault(vid, [])
        (gts if kind == "gt" else preds)[vid].append(box)
    return {vid: DetectionSet(vid, tuple(gts[vid]), tuple(preds[vid])) for vid in gts}


def save_detections(sets: Iterable[DetectionSet], path: str | Path) -> None:
    Path(path).write_text(dumps_detections(sets))


def load_detections(path: str | Path) -> dict[int, DetectionSet]:
    return loads_detections(Path(path).read_text())
