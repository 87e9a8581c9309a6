"""Training losses on batches of predictions.

Reductions: per-element mean inside the pose term, mean over the two feet
inside the FK and velocity terms, and mean over the batch everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import rotation as rot
from .autodiff import Tensor


@dataclass(frozen=True)
class LossWeights:
    pose: float = 1.0
    fk: float = 0.1
    velocity: float = 0.1
    contact: float = 1e-6

    def __post_init__(self):
        if min(self.pose, self.fk, self.velocity, self.contact) < 0:
            raise ValueError("loss weights must be non-negative")


class NonFiniteLossError(FloatingPointError):
    pass


def decode_pose(pose) -> Tensor:
    """(B, 48) 6-DoF blocks -> (B, 8, 3, 3) rotations, differentiably."""
    pose = ad.as_tensor(pose)
    v = pose.reshape(pose.shape[:-1] + (8, 6))
    f, u = v[..., 0:3], v[..., 3:6]
    fn = ad.norm(f, keepdims=True)
    un = ad.norm(u, keepdims=True)
    if np.any(fn.data <= rot.DEGENERATE_EPS) or np.any(un.data <= rot.DEGENERATE_EPS):
        raise rot.DegenerateRotationError("predicted 6-DoF block has a near-zero axis")
    f = f / fn
    u = u - (u * f).sum(axis=-1, keepdims=True) * f
    un2 = ad.norm(u, keepdims=True)
    if np.any(un2.data <= rot.DEGENERATE_EPS * un.data):
        raise rot.DegenerateRotationError("predicted forward and up are parallel")
    u = u / un2
    return ad.stack([ad.cross(u, f), u, f], axis=-1)


def _chain_plan(skeleton):
    """Per side: list of (joint, lower-body slot or None) from root child to toe."""
    skeleton.require_annotation()
    slot = {j: k for k, j in enumerate(skeleton.lower_body)}
    plans = []
    for toe in skeleton.toe_base:
        path = skeleton.chain(toe)[1:]
        for j in path[:-1]:
            if j not in slot:
                raise ValueError(f"joint {skeleton.names[j]!r} on a toe-base chain is not a "
                                 "lower-body joint")
        plans.append([(j, slot.get(j)) for j in path])
    return plans


def toe_positions(local_lb, root_rot, root_pos, skeleton) -> Tensor:
    """World toe-base positions (B, 2, 3) from lower-body local rotations (B, 8, 3, 3)."""
    local_lb = ad.as_tensor(local_lb)
    offsets = skeleton.offsets
    out = []
    for plan in _chain_plan(skeleton):
        W = ad.as_tensor(root_rot)
        p = ad.as_tensor(root_pos)
        for k, (j, s) in enumerate(plan):
            p = p + W @ offsets[j]
            if k < len(plan) - 1:
                W = W @ local_lb[..., s, :, :]
        out.append(p)
    return ad.stack(out, axis=-2)


def split_root(root):
    root = np.asarray(root, dtype=np.float64)
    return rot.sixdof_to_rot(root[..., 3:9]), root[..., 0:3]


def target_toe_positions(target_pose, root, skeleton) -> np.ndarray:
    R, p = split_root(root)
    local = rot.sixdof_to_rot(np.asarray(target_pose).reshape(np.shape(target_pose)[:-1] + (8, 6)))
    return toe_positions(local, R, p, skeleton).data


def loss_pose(pred, target) -> Tensor:
    return ad.mean(ad.tabs(ad.as_tensor(pred) - target))


def loss_fk(pred, target, root, skeleton) -> Tensor:
    R, p = split_root(root)
    pred_toes = toe_positions(decode_pose(pred), R, p, skeleton)
    tgt_toes = target_toe_positions(target, root, skeleton)
    return ad.mean(ad.norm(pred_toes - tgt_toes))


def loss_velocity(pred, target, prev_target, root, prev_root, skeleton, mask=None) -> Tensor:
    """Toe-base velocity error, evaluated exactly as the printed difference
    ``(FK(pred_i) - FK(Y_{i-1})) - (FK(Y_i) - FK(Y_{i-1}))``."""
    R, p = split_root(root)
    pred_toes = toe_positions(decode_pose(pred), R, p, skeleton)
    tgt_toes = target_toe_positions(target, root, skeleton)
    prev_toes = target_toe_positions(prev_target, prev_root, skeleton)
    diff = (pred_toes - prev_toes) - (tgt_toes - prev_toes)
    per_sample = ad.mean(ad.norm(diff), axis=-1)
    if mask is not None:
        per_sample = per_sample * np.asarray(mask, dtype=np.float64)
    return ad.mean(per_sample)


def loss_contact(logits, labels):
    """Per-foot 2-class cross-entropy; returns ``(left, right)`` batch means."""
    logits = ad.as_tensor(logits)
    labels = np.asarray(labels).astype(int)
    if np.any((labels != 0) & (labels != 1)):
        raise ValueError("contact labels must be 0 or 1")
    lead = logits.shape[:-1]
    logp = ad.log_softmax(logits.reshape(lead + (2, 2)), axis=-1)
    onehot = np.eye(2)[labels]
    nll = -(logp * onehot).sum(axis=-1)
    nll = nll.reshape((-1, 2)) if nll.ndim > 1 else nll.reshape((1, 2))
    return ad.mean(nll[:, 0]), ad.mean(nll[:, 1])


COMPONENTS = ("pose", "fk", "velocity", "contact_left", "contact_right")


def total_loss(components: dict, weights: LossWeights = LossWeights()):
    """``w_pose*pose + w_fk*fk + w_vel*velocity + w_contact/2*(left + right)``."""
    for name in COMPONENTS:
        c = components[name]
        v = c.data if isinstance(c, Tensor) else c
        if not np.all(np.isfinite(v)):
            raise NonFiniteLossError(f"loss component {name!r} is not finite")
    c = components
    return (weights.pose * c["pose"] + weights.fk * c["fk"] + weights.velocity * c["velocity"]
            + weights.contact / 2 * (c["contact_left"] + c["contact_right"]))


def batch_loss(out, batch, skeleton, weights: LossWeights = LossWeights()):
    """All components for a :class:`~lobstr.train.Batch`; returns (total, components)."""
    left, right = loss_contact(out.contact, batch.labels)
    comps = {
        "pose": loss_pose(out.pose, batch.target),
        "fk": loss_fk(out.pose, batch.target, batch.root, skeleton),
        "velocity": loss_velocity(out.pose, batch.target, batch.prev_target, batch.root,
                                  batch.prev_root, skeleton, batch.vel_mask),
        "contact_left": left,
        "contact_right": right,
    }
    return total_loss(comps, weights), comps


def lr_at(epoch: int, lr0=1e-3, decay=0.999) -> float:
    return lr0 * decay ** epoch

