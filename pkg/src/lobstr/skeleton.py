"""Skeleton, pose and clip containers plus forward kinematics."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import rotation as rot

CATEGORIES = ("locomotion", "sit-stand", "upper-body", "other")
TRACKERS = ("head", "left_hand", "right_hand", "pelvis")


def _frozen(a, dtype=np.float64):
    a = np.array(a, dtype=dtype)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Transform:
    rotation: np.ndarray
    position: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation", _frozen(self.rotation))
        object.__setattr__(self, "position", _frozen(self.position))

    @classmethod
    def identity(cls, position=(0.0, 0.0, 0.0)):
        return cls(np.eye(3), position)

    def compose(self, other: "Transform") -> "Transform":
        return Transform(self.rotation @ other.rotation,
                         self.rotation @ other.position + self.position)

    def inverse(self) -> "Transform":
        rt = self.rotation.T
        return Transform(rt, -rt @ self.position)


@dataclass(frozen=True, eq=False)
class Skeleton:
    """Joint hierarchy in topological order.

    ``lower_body`` holds 8 joint ids ordered (left hip, left upper-leg,
    left lower-leg, left foot, right hip, ..., right foot); ``toe_base``
    holds (left, right). Both may be empty for an unannotated skeleton,
    e.g. straight out of a BVH file.
    """

    names: tuple
    parents: tuple
    offsets: np.ndarray
    lower_body: tuple = ()
    toe_base: tuple = ()
    trackers: dict = field(default_factory=dict)
    end_sites: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "parents", tuple(int(p) for p in self.parents))
        object.__setattr__(self, "offsets", _frozen(self.offsets))
        object.__setattr__(self, "lower_body", tuple(int(i) for i in self.lower_body))
        object.__setattr__(self, "toe_base", tuple(int(i) for i in self.toe_base))
        n = len(self.names)
        if n == 0:
            raise ValueError("skeleton needs at least one joint")
        if len(self.parents) != n or self.offsets.shape != (n, 3):
            raise ValueError("names, parents and offsets disagree in length")
        if self.parents[0] != -1:
            raise ValueError("joint 0 must be the root")
        for j, p in enumerate(self.parents[1:], start=1):
            if not 0 <= p < j:
                raise ValueError(f"joint {self.names[j]!r}: parent {p} breaks topological order")
        if len(set(self.names)) != n:
            raise ValueError("duplicate joint names")
        if self.lower_body or self.toe_base:
            if len(self.lower_body) != 8 or len(self.toe_base) != 2:
                raise ValueError("need exactly 8 lower-body ids and 2 toe-base ids")
            ids = self.lower_body + self.toe_base
            if len(set(ids)) != 10 or not all(0 <= i < n for i in ids):
                raise ValueError("lower-body/toe-base ids must be distinct valid joints")
        for k, j in self.trackers.items():
            if k not in TRACKERS or not 0 <= j < n:
                raise ValueError(f"bad tracker mapping {k}={j}")

    def __len__(self):
        return len(self.names)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"no joint named {name!r}") from None

    @property
    def annotated(self) -> bool:
        return len(self.lower_body) == 8

    def require_annotation(self):
        if not self.annotated:
            raise ValueError("skeleton has no lower-body/toe-base annotation")

    def chain(self, joint: int) -> list:
        """Ancestor path root -> ``joint`` inclusive."""
        path = []
        while joint != -1:
            path.append(joint)
            joint = self.parents[joint]
        return path[::-1]

    def leg_chain(self, side: int) -> list:
        """Joints from the hip joint of ``side`` (0 left, 1 right) to its toe-base."""
        self.require_annotation()
        hip = self.lower_body[4 * side]
        full = self.chain(self.toe_base[side])
        if hip not in full:
            raise ValueError("toe-base is not a descendant of its hip joint")
        return full[full.index(hip):]

    def scaled(self, scale: float) -> "Skeleton":
        return replace(self, offsets=self.offsets * scale,
                       end_sites={k: np.asarray(v) * scale for k, v in self.end_sites.items()})

    # -- description files -------------------------------------------------

    def to_description(self) -> dict:
        return {
            "joints": [
                {"name": n, "parent": (self.names[p] if p >= 0 else None),
                 "offset": [float(x) for x in o]}
                for n, p, o in zip(self.names, self.parents, self.offsets)
            ],
            "lower_body": [self.names[i] for i in self.lower_body],
            "toe_base": [self.names[i] for i in self.toe_base],
            "trackers": {k: self.names[v] for k, v in self.trackers.items()},
        }

    @classmethod
    def from_description(cls, desc: dict) -> "Skeleton":
        names = [j["name"] for j in desc["joints"]]
        parents = [names.index(j["parent"]) if j.get("parent") is not None else -1
                   for j in desc["joints"]]
        offsets = [j.get("offset", [0.0, 0.0, 0.0]) for j in desc["joints"]]
        skel = cls(names, parents, offsets)
        return skel.annotate(desc)

    def annotate(self, desc: dict) -> "Skeleton":
        """Attach lower-body, toe-base and tracker designations by name or id."""
        def ids(items):
            return tuple(self.index(x) if isinstance(x, str) else int(x) for x in items)
        trackers = {k: (self.index(v) if isinstance(v, str) else int(v))
                    for k, v in desc.get("trackers", {}).items()}
        return replace(self, lower_body=ids(desc.get("lower_body", ())),
                       toe_base=ids(desc.get("toe_base", ())), trackers=trackers)


def load_description(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def save_description(skeleton: Skeleton, path):
    Path(path).write_text(json.dumps(skeleton.to_description(), indent=2) + "\n")


@dataclass(frozen=True, eq=False)
class Pose:
    root: Transform
    rotations: np.ndarray  # (J-1, 3, 3) local rotations of non-root joints

    def __post_init__(self):
        object.__setattr__(self, "rotations", _frozen(self.rotations))


@dataclass(frozen=True, eq=False)
class MotionClip:
    """Fixed-rate motion stored as stacked arrays.

    ``root_pos`` (T, 3), ``root_rot`` (T, 3, 3), ``local_rot`` (T, J-1, 3, 3).
    """

    skeleton: Skeleton
    fps: float
    root_pos: np.ndarray
    root_rot: np.ndarray
    local_rot: np.ndarray
    name: str = "clip"
    category: str = "other"

    def __post_init__(self):
        for k in ("root_pos", "root_rot", "local_rot"):
            object.__setattr__(self, k, _frozen(getattr(self, k)))
        if not self.fps > 0:
            raise ValueError("fps must be positive")
        T = self.root_pos.shape[0]
        J = len(self.skeleton)
        if self.root_pos.shape != (T, 3) or self.root_rot.shape != (T, 3, 3):
            raise ValueError("root arrays have inconsistent shapes")
        if self.local_rot.shape != (T, J - 1, 3, 3):
            raise ValueError(f"expected local rotations of shape {(T, J - 1, 3, 3)}, "
                             f"got {self.local_rot.shape}")
        if self.category not in CATEGORIES:
            raise ValueError(f"unknown category {self.category!r}")

    def __len__(self):
        return self.root_pos.shape[0]

    def pose(self, t: int) -> Pose:
        return Pose(Transform(self.root_rot[t], self.root_pos[t]), self.local_rot[t])

    @property
    def frames(self):
        return [self.pose(t) for t in range(len(self))]

    def world(self):
        """World rotations and positions of every joint, (T, J, 3, 3) and (T, J, 3)."""
        return fk_arrays(self.skeleton, self.root_pos, self.root_rot, self.local_rot)

    def with_arrays(self, **kw) -> "MotionClip":
        return replace(self, **kw)


def fk_arrays(skeleton: Skeleton, root_pos, root_rot, local_rot):
    """Vectorized forward kinematics over arbitrary leading dimensions."""
    root_pos = np.asarray(root_pos, dtype=np.float64)
    lead = root_pos.shape[:-1]
    J = len(skeleton)
    wrot = np.empty(lead + (J, 3, 3))
    wpos = np.empty(lead + (J, 3))
    wrot[..., 0, :, :] = root_rot
    wpos[..., 0, :] = root_pos
    for j in range(1, J):
        p = skeleton.parents[j]
        prot = wrot[..., p, :, :]
        wrot[..., j, :, :] = prot @ local_rot[..., j - 1, :, :]
        wpos[..., j, :] = wpos[..., p, :] + prot @ skeleton.offsets[j]
    return wrot, wpos


def fk(skeleton: Skeleton, pose: Pose) -> list:
    """World transform of every joint; the root uses ``pose.root`` directly."""
    if pose.rotations.shape[0] != len(skeleton) - 1:
        raise ValueError("pose does not match skeleton")
    wrot, wpos = fk_arrays(skeleton, pose.root.position, pose.root.rotation, pose.rotations)
    return [Transform(r, p) for r, p in zip(wrot, wpos)]


def retarget_scale(clip: MotionClip, scale: float, root_shift_y: float = 0.0) -> MotionClip:
    """Uniformly scale offsets and root positions, then shift the root vertically."""
    if not scale > 0:
        raise ValueError("scale must be positive")
    pos = clip.root_pos * scale
    pos[:, 1] += root_shift_y
    return replace(clip, skeleton=clip.skeleton.scaled(scale), root_pos=pos)


def resample(clip: MotionClip, target_fps: float = 45.0) -> MotionClip:
    """Down-sample with linear positions and shortest-arc rotation interpolation."""
    if abs(target_fps - clip.fps) <= 1e-6 * target_fps:
        # rates that differ only by frame-time rounding (e.g. 0.022222222 s in BVH)
        return clip if target_fps == clip.fps else replace(clip, fps=float(target_fps))
    if target_fps > clip.fps:
        raise ValueError(f"cannot upsample {clip.fps} fps to {target_fps} fps")
    T = len(clip)
    duration = (T - 1) / clip.fps
    n_out = int(np.floor(duration * target_fps + 1e-9)) + 1
    src = np.arange(n_out) * (clip.fps / target_fps)
    i0 = np.minimum(np.floor(src + 1e-9).astype(int), T - 1)
    a = np.clip(src - i0, 0.0, None)
    a[i0 == T - 1] = 0.0
    i1 = np.minimum(i0 + 1, T - 1)
    pos = (1.0 - a)[:, None] * clip.root_pos[i0] + a[:, None] * clip.root_pos[i1]
    rr = rot.slerp(clip.root_rot[i0], clip.root_rot[i1], a)
    lr = rot.slerp(clip.local_rot[i0], clip.local_rot[i1], a[:, None])
    exact = a == 0.0
    rr[exact] = clip.root_rot[i0[exact]]
    lr[exact] = clip.local_rot[i0[exact]]
    pos[exact] = clip.root_pos[i0[exact]]
    return replace(clip, fps=float(target_fps), root_pos=pos, root_rot=rr, local_rot=lr)


def static_clip(skeleton: Skeleton, n_frames: int, fps: float = 45.0,
                root_pos=(0.0, 1.0, 0.0), name="static", category="other") -> MotionClip:
    J = len(skeleton)
    return MotionClip(
        skeleton, fps,
        np.tile(np.asarray(root_pos, dtype=float), (n_frames, 1)),
        rot.identity((n_frames,)),
        rot.identity((n_frames, J - 1)),
        name=name, category=category,
    )
