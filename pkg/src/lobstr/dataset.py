"""Training dataset: one binary payload per clip plus a JSON manifest.

Payload layout (little-endian), for T frames::

    float32[T, 36]  noisy tracker vectors, per tracker [pos(3), forward(3), up(3)],
                    tracker order head, left hand, right hand, pelvis
    float32[T, 9]   ground-truth root [pos(3), forward(3), up(3)]
    float32[T, 48]  target lower-body local rotations, 8 x [forward, up]
    uint8[T, 2]     contact labels (left, right toe-base)
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import rotation as rot
from .features import WINDOW, augment_noise, feature_vectors, label_contacts, synthesize_trackers
from .skeleton import CATEGORIES, MotionClip, Skeleton

MANIFEST_VERSION = 1
MIN_FRAMES = WINDOW + 1
_F4 = np.dtype("<f4")


class DatasetError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ClipData:
    name: str
    category: str
    trackers: np.ndarray   # (T, 36)
    root: np.ndarray       # (T, 9)
    targets: np.ndarray    # (T, 48)
    labels: np.ndarray     # (T, 2) uint8
    noise_seed: int = 0

    def __len__(self):
        return self.trackers.shape[0]

    def to_bytes(self) -> bytes:
        return (self.trackers.astype(_F4).tobytes() + self.root.astype(_F4).tobytes()
                + self.targets.astype(_F4).tobytes() + self.labels.astype(np.uint8).tobytes())

    @classmethod
    def from_bytes(cls, buf: bytes, n_frames: int, name="clip", category="other",
                   noise_seed=0) -> "ClipData":
        per = (36 + 9 + 48) * 4 + 2
        if len(buf) != per * n_frames:
            raise DatasetError(f"{name}: payload has {len(buf)} bytes, expected {per * n_frames}")
        T = n_frames
        off = 0

        def take(cols):
            nonlocal off
            a = np.frombuffer(buf, dtype=_F4, count=T * cols, offset=off).reshape(T, cols)
            off += T * cols * 4
            return a.astype(np.float64)
        trackers, root, targets = take(36), take(9), take(48)
        labels = np.frombuffer(buf, dtype=np.uint8, offset=off).reshape(T, 2).copy()
        return cls(name, category, trackers, root, targets, labels, noise_seed)


def clip_to_data(clip: MotionClip, noise_seed: int, sigma=0.01, max_angle_deg=1.5,
                 noise=True) -> ClipData:
    sk = clip.skeleton
    sk.require_annotation()
    stream = synthesize_trackers(clip)
    if noise:
        stream = augment_noise(stream, noise_seed, sigma, max_angle_deg)
    lb = np.asarray(sk.lower_body) - 1
    targets = rot.rot_to_6d(clip.local_rot[:, lb]).reshape(len(clip), 48)
    root = np.concatenate([clip.root_pos, rot.rot_to_6d(clip.root_rot)], axis=1)
    return ClipData(clip.name, clip.category, stream.to_vectors(), root, targets,
                    label_contacts(clip), noise_seed)


def category_summary(frame_counts: dict) -> dict:
    """Per-category frame totals and ratios for the manifest."""
    total = sum(frame_counts.values())
    return {
        "frames": {c: int(frame_counts.get(c, 0)) for c in CATEGORIES},
        "ratio": {c: (frame_counts.get(c, 0) / total if total else 0.0) for c in CATEGORIES},
        "total": int(total),
    }


def build_dataset(clips, out_dir, seed=0, sigma=0.01, max_angle_deg=1.5, noise=True) -> dict:
    """Write payloads and ``manifest.json`` into ``out_dir``; returns the manifest."""
    clips = list(clips)
    if not clips:
        raise DatasetError("no clips supplied")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    skel = clips[0].skeleton
    entries, counts = [], {}
    for k, clip in enumerate(clips):
        if len(clip) < MIN_FRAMES:
            raise DatasetError(f"clip {clip.name!r} has {len(clip)} frames; need >= {MIN_FRAMES}")
        if clip.fps != 45.0:
            raise DatasetError(f"clip {clip.name!r} is at {clip.fps} fps; resample to 45 first")
        if clip.skeleton.to_description() != skel.to_description():
            raise DatasetError(f"clip {clip.name!r} uses a different skeleton")
        clip_seed = int(np.random.SeedSequence([seed, k]).generate_state(1)[0])
        data = clip_to_data(clip, clip_seed, sigma, max_angle_deg, noise)
        fname = f"{k:04d}_{_safe(clip.name)}.bin"
        (out / fname).write_bytes(data.to_bytes())
        entries.append({"name": clip.name, "category": clip.category, "frames": len(clip),
                        "file": fname, "noise_seed": clip_seed})
        counts[clip.category] = counts.get(clip.category, 0) + len(clip)
    manifest = {
        "version": MANIFEST_VERSION,
        "fps": 45.0,
        "noise": {"enabled": bool(noise), "sigma": sigma, "max_angle_deg": max_angle_deg,
                  "seed": seed},
        "skeleton": skel.to_description(),
        "clips": entries,
        "categories": category_summary(counts),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def _safe(name):
    return "".join(c if c.isalnum() or c in "-_" else "_" for c in name)


@dataclass(eq=False)
class Dataset:
    skeleton: Skeleton
    clips: list
    manifest: dict
    path: Path = None

    def __len__(self):
        return len(self.clips)

    @property
    def frame_counts(self):
        return np.array([len(c) for c in self.clips])

    def manifest_hash(self) -> str:
        blob = json.dumps(self.manifest, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def load_dataset(path) -> Dataset:
    root = Path(path)
    mpath = root / "manifest.json" if root.is_dir() else root
    root = mpath.parent
    try:
        manifest = json.loads(mpath.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DatasetError(f"cannot read manifest {mpath}: {exc}") from exc
    if manifest.get("version") != MANIFEST_VERSION:
        raise DatasetError(f"unsupported manifest version {manifest.get('version')}")
    skel = Skeleton.from_description(manifest["skeleton"])
    clips = []
    for e in manifest["clips"]:
        buf = (root / e["file"]).read_bytes()
        clips.append(ClipData.from_bytes(buf, e["frames"], e["name"], e["category"],
                                         e.get("noise_seed", 0)))
    return Dataset(skel, clips, manifest, root)


def clip_features(clip: ClipData, mode="relative") -> np.ndarray:
    """Feature rows aligned to frames: row ``t`` holds frame ``t`` (row 0 is NaN)."""
    from .features import TrackerStream
    fv = feature_vectors(TrackerStream.from_vectors(clip.trackers), mode)
    return np.concatenate([np.full((1, fv.shape[1]), np.nan), fv], axis=0)
