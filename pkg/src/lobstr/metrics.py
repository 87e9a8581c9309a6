"""Evaluation metrics and the JSON report."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import rotation as rot
from .losses import target_toe_positions


def _decode(pose):
    pose = np.asarray(pose, dtype=np.float64)
    return rot.sixdof_to_rot(pose.reshape(pose.shape[:-1] + (8, 6)))


def contact_accuracy(pred, gt) -> float:
    """Fraction of matching per-foot labels over all 2N comparisons."""
    pred = np.asarray(pred).astype(bool)
    gt = np.asarray(gt).astype(bool)
    if pred.shape != gt.shape:
        raise ValueError(f"label streams differ in shape: {pred.shape} vs {gt.shape}")
    if pred.size == 0:
        raise ValueError("empty label streams")
    return float(np.mean(pred == gt))


def rotational_errors(pred, gt) -> np.ndarray:
    """Per-frame mean geodesic angle over the 8 joints, degrees."""
    return np.degrees(rot.geodesic_angle(_decode(pred), _decode(gt))).mean(axis=-1)


def rotational_error(pred, gt) -> float:
    return float(np.mean(rotational_errors(pred, gt)))


def toe_positions_from_poses(pose, root, skeleton) -> np.ndarray:
    return target_toe_positions(np.asarray(pose, dtype=np.float64), root, skeleton)


def positional_errors(pred, gt, root, skeleton) -> np.ndarray:
    """Per-frame mean toe-base distance over both feet, centimeters."""
    a = toe_positions_from_poses(pred, root, skeleton)
    b = toe_positions_from_poses(gt, root, skeleton)
    return 100.0 * np.linalg.norm(a - b, axis=-1).mean(axis=-1)


def positional_error(pred, gt, root, skeleton) -> float:
    return float(np.mean(positional_errors(pred, gt, root, skeleton)))


def toe_distance_errors(pred_toes, gt_toes) -> np.ndarray:
    """Per-frame ``| |L-R|_pred - |L-R|_gt |`` in centimeters; inputs (N, 2, 3) meters."""
    pred_toes = np.asarray(pred_toes)
    gt_toes = np.asarray(gt_toes)
    if pred_toes.shape != gt_toes.shape:
        raise ValueError("toe streams are not frame-aligned")
    dp = np.linalg.norm(pred_toes[..., 0, :] - pred_toes[..., 1, :], axis=-1)
    dg = np.linalg.norm(gt_toes[..., 0, :] - gt_toes[..., 1, :], axis=-1)
    return 100.0 * np.abs(dp - dg)


def toe_base_distance_error(pred_toes, gt_toes, categories=None) -> dict:
    """Mean toe-base distance error per category plus ``"total"``."""
    err = toe_distance_errors(pred_toes, gt_toes)
    out = {"total": float(err.mean()) if err.size else 0.0}
    if categories is not None:
        categories = np.asarray(categories)
        if categories.shape[0] != err.shape[0]:
            raise ValueError("category annotations are not frame-aligned")
        for c in sorted(set(categories.tolist())):
            out[c] = float(err[categories == c].mean())
    return out


def body_movements(poses) -> np.ndarray:
    """Per-frame sum over joints of the geodesic angle between consecutive rotations."""
    R = _decode(poses)
    if R.shape[0] < 2:
        raise ValueError("body movement needs at least 2 frames")
    return np.degrees(rot.geodesic_angle(R[:-1], R[1:])).sum(axis=-1)


def body_movement(poses) -> float:
    return float(np.mean(body_movements(poses)))


@dataclass
class CategoryMetrics:
    frames: int = 0
    contact_accuracy: float = 0.0
    rotational_error_deg: float = 0.0
    positional_error_cm: float = 0.0
    toe_distance_error_cm: float = 0.0
    body_movement_deg: float = 0.0


@dataclass
class MetricsReport:
    categories: dict = field(default_factory=dict)   # name -> CategoryMetrics
    total: CategoryMetrics = field(default_factory=CategoryMetrics)
    config_hash: str = ""
    checkpoint_id: str = ""
    manifest_hash: str = ""

    def to_dict(self) -> dict:
        return {
            "checkpoint_id": self.checkpoint_id,
            "config_hash": self.config_hash,
            "manifest_hash": self.manifest_hash,
            "total": asdict(self.total),
            "categories": {k: asdict(v) for k, v in sorted(self.categories.items())},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls({k: CategoryMetrics(**v) for k, v in d["categories"].items()},
                   CategoryMetrics(**d["total"]), d["config_hash"], d["checkpoint_id"],
                   d["manifest_hash"])

    def validate(self):
        for m in [self.total, *self.categories.values()]:
            if not 0.0 <= m.contact_accuracy <= 1.0:
                raise ValueError("contact accuracy outside [0, 1]")
            if min(m.rotational_error_deg, m.positional_error_cm, m.toe_distance_error_cm,
                   m.body_movement_deg) < 0:
                raise ValueError("negative error metric")


def emit_report(report: MetricsReport, path):
    report.validate()
    text = json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"
    try:
        Path(path).write_text(text)
    except OSError as exc:
        raise OSError(f"cannot write report to {path}: {exc}") from exc
    return text


def read_report(path) -> MetricsReport:
    return MetricsReport.from_dict(json.loads(Path(path).read_text()))


def file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]


def dict_hash(d) -> str:
    return hashlib.sha256(json.dumps(d, sort_keys=True, default=str).encode()).hexdigest()[:16]


def summarize(per_frame: dict, categories) -> tuple:
    """Aggregate per-frame arrays into per-category and total :class:`CategoryMetrics`.

    ``per_frame`` holds ``contact_hits`` (N, 2) bool, ``rot`` (N,), ``pos`` (N,),
    ``toe`` (N,), ``move`` (N,) with NaN where undefined (first frame of a clip).
    """
    categories = np.asarray(categories)

    def agg(mask):
        move = per_frame["move"][mask]
        move = move[np.isfinite(move)]
        return CategoryMetrics(
            frames=int(mask.sum()),
            contact_accuracy=float(per_frame["contact_hits"][mask].mean()),
            rotational_error_deg=float(per_frame["rot"][mask].mean()),
            positional_error_cm=float(per_frame["pos"][mask].mean()),
            toe_distance_error_cm=float(per_frame["toe"][mask].mean()),
            body_movement_deg=float(move.mean()) if move.size else 0.0,
        )
    cats = {c: agg(categories == c) for c in sorted(set(categories.tolist()))}
    return cats, agg(np.ones(categories.shape[0], dtype=bool))
