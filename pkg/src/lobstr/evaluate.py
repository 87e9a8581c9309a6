"""Evaluate a checkpoint on a prepared dataset and write report, CSV and figures."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import metrics as M
from .dataset import Dataset, clip_features
from .features import WINDOW
from .losses import target_toe_positions
from .net import NetworkParams, contact_probabilities, forward


@dataclass
class FrameTable:
    """Per-frame predictions and errors, one row per evaluated window."""

    clip: np.ndarray          # (N,) clip index
    frame: np.ndarray         # (N,) end frame of the window
    category: np.ndarray      # (N,) str
    pred_pose: np.ndarray     # (N, 48)
    contact_prob: np.ndarray  # (N, 4)
    pred_contact: np.ndarray  # (N, 2) bool
    gt_contact: np.ndarray    # (N, 2) bool
    rot: np.ndarray           # (N,) degrees
    pos: np.ndarray           # (N,) cm
    toe: np.ndarray           # (N,) cm
    move: np.ndarray          # (N,) degrees, NaN at a clip's first window

    def per_frame(self) -> dict:
        return {"contact_hits": self.pred_contact == self.gt_contact, "rot": self.rot,
                "pos": self.pos, "toe": self.toe, "move": self.move}


def predict_clip(params: NetworkParams, feats, frames, batch=256):
    """Batched float64 forward over windows ending at ``frames``."""
    poses, logits = [], []
    for s in range(0, len(frames), batch):
        idx = frames[s:s + batch]
        win = np.stack([feats[i - WINDOW + 1:i + 1] for i in idx])
        out = forward(win, params)
        poses.append(out.pose.data)
        logits.append(out.contact.data)
    return np.concatenate(poses), np.concatenate(logits)


def evaluate_dataset(dataset: Dataset, params: NetworkParams, angular_mode="relative",
                     threshold=0.5, stride=1) -> FrameTable:
    cols = {k: [] for k in FrameTable.__dataclass_fields__}
    sk = dataset.skeleton
    for ci, clip in enumerate(dataset.clips):
        feats = clip_features(clip, angular_mode)
        frames = np.arange(WINDOW, len(clip), stride)
        if frames.size == 0:
            continue
        pose, logits = predict_clip(params, feats, frames)
        probs = contact_probabilities(logits)
        gt_pose, root = clip.targets[frames], clip.root[frames]
        pred_toes = target_toe_positions(pose, root, sk)
        gt_toes = target_toe_positions(gt_pose, root, sk)
        move = np.full(frames.size, np.nan)
        if frames.size > 1:
            move[1:] = M.body_movements(pose)
        cols["clip"].append(np.full(frames.size, ci))
        cols["frame"].append(frames)
        cols["category"].append(np.full(frames.size, clip.category, dtype=object))
        cols["pred_pose"].append(pose)
        cols["contact_prob"].append(probs)
        cols["pred_contact"].append(probs.reshape(-1, 2, 2)[:, :, 1] > threshold)
        cols["gt_contact"].append(clip.labels[frames].astype(bool))
        cols["rot"].append(M.rotational_errors(pose, gt_pose))
        cols["pos"].append(100.0 * np.linalg.norm(pred_toes - gt_toes, axis=-1).mean(axis=-1))
        cols["toe"].append(M.toe_distance_errors(pred_toes, gt_toes))
        cols["move"].append(move)
    if not cols["clip"]:
        raise ValueError("no clip is long enough to evaluate")
    return FrameTable(**{k: np.concatenate(v) for k, v in cols.items()})


def build_report(table: FrameTable, config_hash="", checkpoint_id="", manifest_hash="") -> M.MetricsReport:
    cats, total = M.summarize(table.per_frame(), table.category.astype(str))
    return M.MetricsReport(cats, total, config_hash, checkpoint_id, manifest_hash)


def write_frame_csv(table: FrameTable, path, clip_names=None):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["clip", "frame", "category", "rot_err_deg", "pos_err_cm", "toe_dist_err_cm",
                    "body_move_deg", "p_contact_left", "p_contact_right", "pred_left",
                    "pred_right", "gt_left", "gt_right"])
        for k in range(len(table.clip)):
            name = clip_names[table.clip[k]] if clip_names else int(table.clip[k])
            w.writerow([name, int(table.frame[k]), table.category[k],
                        f"{table.rot[k]:.6f}", f"{table.pos[k]:.6f}", f"{table.toe[k]:.6f}",
                        "" if np.isnan(table.move[k]) else f"{table.move[k]:.6f}",
                        f"{table.contact_prob[k, 1]:.6f}", f"{table.contact_prob[k, 3]:.6f}",
                        int(table.pred_contact[k, 0]), int(table.pred_contact[k, 1]),
                        int(table.gt_contact[k, 0]), int(table.gt_contact[k, 1])])


def run_evaluation(dataset: Dataset, params: NetworkParams, out_dir, checkpoint_path=None,
                   config: dict = None, angular_mode="relative", threshold=0.5, figures=True):
    """Evaluate and write ``report.json``, ``frames.csv`` and figures into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    table = evaluate_dataset(dataset, params, angular_mode, threshold)
    report = build_report(table, M.dict_hash(config or {}),
                          M.file_hash(checkpoint_path) if checkpoint_path else "",
                          dataset.manifest_hash())
    M.emit_report(report, out / "report.json")
    write_frame_csv(table, out / "frames.csv", [c.name for c in dataset.clips])
    if figures:
        from . import plotting
        plotting.error_histograms(table, out / "errors.png")
        plotting.category_bars(report, out / "categories.png")
        plotting.contact_timeline(table, out / "contacts.png")
    return report, table
