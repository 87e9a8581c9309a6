"""Tracker streams, the reference frame and velocity input features.

A feature vector is 37 scalars::

    [v_ref(3), w_ref(6), v_head(3), w_head(6), v_lhand(3), w_lhand(6),
     v_rhand(3), w_rhand(6), ref_height(1)]

Linear velocities are meters per frame in the current reference frame;
angular velocities are relative rotations encoded as 6-DoF.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import rotation as rot
from .skeleton import TRACKERS, MotionClip, Transform

WINDOW = 45
FEATURE_DIM = 4 * 9 + 1
UP = np.array([0.0, 1.0, 0.0])
MIN_HEADING_SIN = np.sin(np.radians(1.0))
CONTACT_HEIGHT = 0.01
# reference angular velocity: "relative" = inv(q_prev) q_cur,
# "literal" = inv(q_cur) inv(q_prev) q_cur
ANGULAR_MODES = ("relative", "literal")


class DegenerateHeadingError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class TrackerFrame:
    head: Transform
    left_hand: Transform
    right_hand: Transform
    pelvis: Transform
    timestamp: float = 0.0

    def transforms(self):
        return [getattr(self, k) for k in TRACKERS]

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(t.rotation)) and np.all(np.isfinite(t.position))
                   for t in self.transforms()) and np.isfinite(self.timestamp)

    def to_vector(self) -> np.ndarray:
        """36 scalars: per tracker ``[position(3), forward(3), up(3)]``."""
        return np.concatenate([np.concatenate([t.position, rot.rot_to_6d(t.rotation)])
                               for t in self.transforms()])

    @classmethod
    def from_vector(cls, v, timestamp=0.0) -> "TrackerFrame":
        v = np.asarray(v, dtype=np.float64).reshape(4, 9)
        ts = [Transform(rot.sixdof_to_rot(row[3:]), row[:3]) for row in v]
        return cls(*ts, timestamp=timestamp)

    def to_json(self) -> dict:
        d = {"t": float(self.timestamp)}
        for k in TRACKERS:
            tr = getattr(self, k)
            d[k] = {"p": [float(x) for x in tr.position],
                    "r": [float(x) for x in rot.rot_to_6d(tr.rotation)]}
        return d

    @classmethod
    def from_json(cls, d: dict) -> "TrackerFrame":
        ts = []
        for k in TRACKERS:
            e = d[k]
            p, r = e["p"], e["r"]
            if len(p) != 3 or len(r) != 6:
                raise ValueError(f"tracker {k!r}: expected 3 position and 6 rotation values")
            ts.append(Transform(rot.sixdof_to_rot(r), p))
        return cls(*ts, timestamp=float(d.get("t", 0.0)))


@dataclass(frozen=True, eq=False)
class TrackerStream:
    """Stacked tracker trajectories: ``pos`` (T, 4, 3), ``rot`` (T, 4, 3, 3)."""

    pos: np.ndarray
    rot: np.ndarray
    time: np.ndarray

    def __len__(self):
        return self.pos.shape[0]

    def __getitem__(self, k):
        if isinstance(k, slice):
            return TrackerStream(self.pos[k], self.rot[k], self.time[k])
        return TrackerFrame(*(Transform(self.rot[k, j], self.pos[k, j]) for j in range(4)),
                            timestamp=float(self.time[k]))

    def frames(self):
        return [self[k] for k in range(len(self))]

    @classmethod
    def from_frames(cls, frames) -> "TrackerStream":
        frames = list(frames)
        if not frames:
            return cls(np.zeros((0, 4, 3)), np.zeros((0, 4, 3, 3)), np.zeros(0))
        pos = np.array([[t.position for t in f.transforms()] for f in frames])
        rr = np.array([[t.rotation for t in f.transforms()] for f in frames])
        return cls(pos, rr, np.array([f.timestamp for f in frames]))

    def to_vectors(self) -> np.ndarray:
        six = rot.rot_to_6d(self.rot)
        return np.concatenate([self.pos, six], axis=-1).reshape(len(self), 36)

    @classmethod
    def from_vectors(cls, v, time=None) -> "TrackerStream":
        v = np.asarray(v, dtype=np.float64).reshape(-1, 4, 9)
        T = v.shape[0]
        return cls(v[..., :3].copy(), rot.sixdof_to_rot(v[..., 3:]),
                   np.zeros(T) if time is None else np.asarray(time, dtype=float))

    def transformed(self, R, t) -> "TrackerStream":
        """Apply a world rigid motion ``x -> R x + t`` to every tracker."""
        return TrackerStream(self.pos @ np.asarray(R).T + t, np.asarray(R) @ self.rot, self.time)


# -- reference frame --------------------------------------------------------

def reference_arrays(pelvis_pos, pelvis_rot):
    """Vectorized reference frames: rotation (..., 3, 3), position (..., 3)."""
    f = np.array(pelvis_rot[..., :, 2], dtype=np.float64)
    f[..., 1] = 0.0
    n = np.linalg.norm(f, axis=-1, keepdims=True)
    if np.any(n < MIN_HEADING_SIN):
        raise DegenerateHeadingError("pelvis forward is within 1 degree of vertical")
    z = f / n
    y = np.broadcast_to(UP, z.shape)
    x = np.cross(y, z)
    return np.stack([x, y, z], axis=-1), np.asarray(pelvis_pos, dtype=np.float64)


def compute_reference(pelvis: Transform) -> Transform:
    R, p = reference_arrays(pelvis.position, pelvis.rotation)
    return Transform(R, p)


def _velocities(ref_rot, ref_pos, pos, rr, mode="relative"):
    """Per-frame features (without height) for frames 1..T-1.

    ``pos``/``rr`` are (T, 3, 3)/(T, 3, 3, 3) for head and hands.
    """
    if mode not in ANGULAR_MODES:
        raise ValueError(f"unknown angular mode {mode!r}")
    Rt = np.swapaxes(ref_rot, -1, -2)
    # reference joint
    v_ref = (Rt[1:] @ (ref_pos[1:] - ref_pos[:-1])[..., None])[..., 0]
    if mode == "relative":
        w_ref = Rt[:-1] @ ref_rot[1:]
    else:
        w_ref = Rt[1:] @ Rt[:-1] @ ref_rot[1:]
    # joints in their own frame's reference
    p_local = (Rt[:, None] @ (pos - ref_pos[:, None])[..., None])[..., 0]
    q_local = Rt[:, None] @ rr
    v_j = p_local[1:] - p_local[:-1]
    w_j = np.swapaxes(q_local[:-1], -1, -2) @ q_local[1:]
    T1 = v_ref.shape[0]
    out = np.empty((T1, 36))
    out[:, 0:3] = v_ref
    out[:, 3:9] = rot.rot_to_6d(w_ref)
    for k in range(3):
        out[:, 9 * (k + 1):9 * (k + 1) + 3] = v_j[:, k]
        out[:, 9 * (k + 1) + 3:9 * (k + 2)] = rot.rot_to_6d(w_j[:, k])
    return out


def reference_velocity(prev_ref: Transform, cur_ref: Transform, mode="relative") -> np.ndarray:
    """9 scalars ``[v(3), w(6)]`` of the reference joint."""
    R = np.stack([prev_ref.rotation, cur_ref.rotation])
    p = np.stack([prev_ref.position, cur_ref.position])
    dummy_pos = np.zeros((2, 3, 3))
    dummy_rot = rot.identity((2, 3))
    return _velocities(R, p, dummy_pos, dummy_rot, mode)[0, :9]


def joint_velocity(prev: Transform, cur: Transform, prev_ref: Transform,
                   cur_ref: Transform) -> np.ndarray:
    """9 scalars ``[v(3), w(6)]`` of a tracked joint in reference coordinates."""
    R = np.stack([prev_ref.rotation, cur_ref.rotation])
    p = np.stack([prev_ref.position, cur_ref.position])
    pos = np.zeros((2, 3, 3))
    rr = rot.identity((2, 3))
    pos[0, 0], pos[1, 0] = prev.position, cur.position
    rr[0, 0], rr[1, 0] = prev.rotation, cur.rotation
    return _velocities(R, p, pos, rr)[0, 9:18]


def feature_vectors(stream: TrackerStream, mode="relative", height_scale=1.0) -> np.ndarray:
    """Feature vectors for frames 1..T-1 of ``stream``, shape (T-1, 37)."""
    if len(stream) < 2:
        return np.zeros((0, FEATURE_DIM))
    pelvis = TRACKERS.index("pelvis")
    ref_rot, ref_pos = reference_arrays(stream.pos[:, pelvis], stream.rot[:, pelvis])
    idx = [TRACKERS.index(k) for k in ("head", "left_hand", "right_hand")]
    vel = _velocities(ref_rot, ref_pos, stream.pos[:, idx], stream.rot[:, idx], mode)
    return np.concatenate([vel, height_scale * ref_pos[1:, 1:2]], axis=1)


def build_window(source, i: int, mode="relative", height_scale=1.0,
                 window=WINDOW) -> np.ndarray:
    """Input window ending at frame ``i`` (oldest row first), shape (window, 37).

    ``source`` is a :class:`MotionClip` or a :class:`TrackerStream`. Frames
    ``i - window .. i`` are read (one extra predecessor for the velocities).
    """
    stream = synthesize_trackers(source) if isinstance(source, MotionClip) else source
    if i < window:
        raise IndexError(f"frame {i} has insufficient history; need index >= {window}")
    if i >= len(stream):
        raise IndexError(f"frame {i} out of range for {len(stream)} frames")
    return feature_vectors(stream[i - window:i + 1], mode, height_scale)


# -- synthesis from motion capture ---------------------------------------

def synthesize_trackers(clip: MotionClip) -> TrackerStream:
    sk = clip.skeleton
    missing = [k for k in TRACKERS if k not in sk.trackers]
    if missing:
        raise KeyError(f"skeleton has no joint mapping for trackers {missing}")
    idx = [sk.trackers[k] for k in TRACKERS]
    wrot, wpos = clip.world()
    return TrackerStream(wpos[:, idx], wrot[:, idx], np.arange(len(clip)) / clip.fps)


def random_unit_vectors(rng, shape):
    v = rng.standard_normal(tuple(shape) + (3,))
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def augment_noise(stream: TrackerStream, seed: int, sigma=0.01,
                  max_angle_deg=1.5) -> TrackerStream:
    """Tracker drift: random-direction offsets with N(0, sigma) magnitude and
    random-axis rotations of up to ``max_angle_deg`` pre-multiplied onto the
    world orientation."""
    rng = np.random.default_rng(seed)
    T = len(stream)
    dirs = random_unit_vectors(rng, (T, 4))
    mags = rng.normal(0.0, sigma, (T, 4))
    axes = random_unit_vectors(rng, (T, 4))
    angles = rng.uniform(0.0, np.radians(max_angle_deg), (T, 4))
    dR = rot.axis_angle(axes, angles)
    return TrackerStream(stream.pos + dirs * mags[..., None], dR @ stream.rot, stream.time)


def toe_heights(clip: MotionClip) -> np.ndarray:
    clip.skeleton.require_annotation()
    _, wpos = clip.world()
    return wpos[:, list(clip.skeleton.toe_base), 1]


def label_contacts(clip: MotionClip, threshold=CONTACT_HEIGHT) -> np.ndarray:
    """(T, 2) uint8 labels (left, right): 1 iff toe-base height < threshold."""
    return (toe_heights(clip) < threshold).astype(np.uint8)


# -- JSON Lines tracker recordings ---------------------------------------

def write_recording(frames, path, extra=None):
    """One :class:`TrackerFrame` per line; ``extra`` holds optional per-line fields."""
    with open(path, "w") as fh:
        for k, f in enumerate(frames):
            d = f.to_json()
            if extra is not None:
                d.update(extra[k])
            fh.write(json.dumps(d) + "\n")


class RecordingError(ValueError):
    pass


def read_recording(path):
    """Returns (frames, raw dicts); schema problems raise with the line number."""
    frames, raw = [], []
    for ln, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            d = json.loads(line)
            frames.append(TrackerFrame.from_json(d))
        except (ValueError, KeyError, TypeError) as exc:
            raise RecordingError(f"line {ln}: {exc}") from exc
        raw.append(d)
    return frames, raw
