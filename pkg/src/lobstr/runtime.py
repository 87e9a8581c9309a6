"""Calibration, the per-stream inference session, offline replay and the TCP service."""

from __future__ import annotations

import json
import logging
import socket
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import protocol
from . import rotation as rot
from .bvh import write_bvh
from .features import (WINDOW, DegenerateHeadingError, TrackerFrame, TrackerStream,
                       feature_vectors, read_recording)
from .postprocess import Free, IkConfig, decide_contact, postprocess_step, toe_position
from .skeleton import TRACKERS, MotionClip, Pose, Skeleton, Transform, fk
from .standard import standard_skeleton

log = logging.getLogger(__name__)

BUFFER = WINDOW + 1


class CalibrationError(ValueError):
    pass


@dataclass(frozen=True)
class Calibration:
    offsets: dict          # tracker name -> (3, 3) rotation offset
    height_scale: float = 1.0

    def __post_init__(self):
        if not self.height_scale > 0:
            raise CalibrationError("height scale must be positive")

    @classmethod
    def identity(cls) -> "Calibration":
        return cls({k: np.eye(3) for k in TRACKERS}, 1.0)

    def to_json(self) -> dict:
        return {"height_scale": self.height_scale,
                "offsets": {k: np.asarray(self.offsets[k]).tolist() for k in TRACKERS}}

    @classmethod
    def from_json(cls, d: dict) -> "Calibration":
        offsets = {k: np.array(d["offsets"][k], dtype=np.float64) for k in TRACKERS}
        for k, R in offsets.items():
            if R.shape != (3, 3) or rot.orthonormality_error(R) > 1e-6:
                raise CalibrationError(f"offset for {k!r} is not a rotation matrix")
        return cls(offsets, float(d["height_scale"]))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_json(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "Calibration":
        return cls.from_json(json.loads(Path(path).read_text()))


def _tpose_world(skeleton: Skeleton):
    pose = Pose(Transform(np.eye(3), skeleton_root_height(skeleton)),
                np.tile(np.eye(3), (len(skeleton) - 1, 1, 1)))
    return fk(skeleton, pose)


def skeleton_root_height(skeleton: Skeleton) -> np.ndarray:
    """Root position that puts the lowest toe-base on the floor in T-pose."""
    zero = fk(skeleton, Pose(Transform.identity(), np.tile(np.eye(3), (len(skeleton) - 1, 1, 1))))
    feet = list(skeleton.toe_base) or range(len(skeleton))
    return np.array([0.0, -min(zero[j].position[1] for j in feet), 0.0])


def calibrate(tpose, skeleton: Skeleton = None, max_motion=0.01) -> Calibration:
    """Offsets and height scale from a T-pose capture (one frame or a list).

    ``offset = inv(tracked) @ joint`` so that ``tracked @ offset`` reproduces
    the skeleton's T-pose joint orientation.
    """
    skeleton = skeleton or standard_skeleton()
    frames = [tpose] if isinstance(tpose, TrackerFrame) else list(tpose)
    if not frames:
        raise CalibrationError("calibration needs at least one T-pose frame")
    stream = TrackerStream.from_frames(frames)
    if not (np.all(np.isfinite(stream.pos)) and np.all(np.isfinite(stream.rot))):
        raise CalibrationError("T-pose capture contains non-finite values")
    if len(stream) > 1:
        motion = np.linalg.norm(np.diff(stream.pos, axis=0), axis=-1).max()
        if motion >= max_motion:
            raise CalibrationError(f"trackers moved {motion * 100:.2f} cm in one frame during "
                                   "T-pose capture")
    pos = stream.pos.mean(axis=0)
    # chordal mean of the captured orientations
    U, _, Vt = np.linalg.svd(stream.rot.mean(axis=0))
    D = np.ones((4, 3))
    D[:, 2] = np.sign(np.linalg.det(U @ Vt))
    tracked = (U * D[:, None, :]) @ Vt
    world = _tpose_world(skeleton)
    offsets = {}
    for k, name in enumerate(TRACKERS):
        joint = world[skeleton.trackers[name]].rotation
        offsets[name] = tracked[k].T @ joint
    pelvis_h = pos[TRACKERS.index("pelvis"), 1]
    if pelvis_h <= 0:
        raise CalibrationError(f"tracked pelvis height {pelvis_h:.4f} m is not above the floor")
    std_h = world[skeleton.trackers["pelvis"]].position[1]
    return Calibration(offsets, float(std_h / pelvis_h))


def apply_calibration(frame: TrackerFrame, cal: Calibration) -> TrackerFrame:
    """Right-multiply each tracker orientation by its offset; positions unchanged."""
    ts = [Transform(t.rotation @ cal.offsets[k], t.position)
          for k, t in zip(TRACKERS, frame.transforms())]
    return TrackerFrame(*ts, timestamp=frame.timestamp)


# -- streaming session --------------------------------------------------------

@dataclass
class StepResult:
    frame: int
    status: str                      # "ok" | "warm-up" | "held"
    pose: np.ndarray = None          # (48,) float32 lower-body 6-DoF
    rotations: np.ndarray = None     # (8, 3, 3)
    contact_prob: np.ndarray = None  # (4,) float32
    contact: tuple = (False, False)
    root: Transform = None
    toes: np.ndarray = None          # (2, 3) world toe-base positions
    latency_us: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"frame": self.frame, "status": self.status,
                "pose": [float(x) for x in self.pose],
                "contact_prob": [float(x) for x in self.contact_prob],
                "contact": [bool(c) for c in self.contact]}


class StreamSession:
    """Single-owner per-stream state: a 46-frame buffer, the foot states and the last output.

    Inputs are the 36-float tracker vectors, quantized to float32 so that
    every transport sees the same numbers.
    """

    def __init__(self, params, skeleton: Skeleton = None, calibration: Calibration = None,
                 ik: IkConfig = IkConfig(), angular_mode="relative", postprocess=True):
        self.params = params
        self.net = params.fast()
        self.skeleton = skeleton or standard_skeleton()
        self.skeleton.require_annotation()
        self.calibration = calibration or Calibration.identity()
        self.ik = ik
        self.angular_mode = angular_mode
        self.postprocess = postprocess and ik.enabled
        self.offsets = np.stack([self.calibration.offsets[k] for k in TRACKERS])
        self.reset()

    def reset(self):
        self.pos = deque(maxlen=BUFFER)
        self.rot = deque(maxlen=BUFFER)
        self.states = (Free(), Free())
        self.contacts = (False, False)
        self.frames_seen = 0
        self.last = None

    @property
    def warm(self) -> bool:
        return len(self.pos) == BUFFER

    def _held(self, frame_id, reason):
        log.warning("frame %d rejected: %s", frame_id, reason)
        last = self.last
        if last is None:
            return StepResult(frame_id, "held", np.zeros(48, np.float32), None,
                              np.zeros(4, np.float32))
        return StepResult(frame_id, "held", last.pose, last.rotations, last.contact_prob,
                          last.contact, last.root, last.toes)

    def step_vector(self, vector, frame_id=None) -> StepResult:
        t_start = time.perf_counter()
        frame_id = self.frames_seen if frame_id is None else frame_id
        self.frames_seen += 1
        v = np.asarray(vector, dtype=np.float32).astype(np.float64).reshape(4, 9)
        if not np.all(np.isfinite(v)):
            return self._held(frame_id, "non-finite tracker values")
        try:
            R = rot.sixdof_to_rot(v[:, 3:]) @ self.offsets
        except rot.DegenerateRotationError as exc:
            return self._held(frame_id, str(exc))
        self.pos.append(v[:, :3])
        self.rot.append(R)
        if not self.warm:
            return StepResult(frame_id, "warm-up", contact_prob=np.zeros(4, np.float32),
                              pose=np.zeros(48, np.float32))
        # input decoding counts toward the feature stage
        t0 = t_start
        stream = TrackerStream(np.stack(self.pos), np.stack(self.rot), np.zeros(BUFFER))
        try:
            window = feature_vectors(stream, self.angular_mode, self.calibration.height_scale)
        except DegenerateHeadingError as exc:
            self.pos.pop()
            self.rot.pop()
            return self._held(frame_id, str(exc))
        t1 = time.perf_counter()
        out = self.net(window)
        t2 = time.perf_counter()
        probs = out.contact_probs()
        contacts = decide_contact(out.contact, self.ik.contact_threshold, self.contacts,
                                  self.ik.hysteresis)
        local = rot.sixdof_to_rot(np.asarray(out.pose, dtype=np.float64).reshape(8, 6))
        pelvis = TRACKERS.index("pelvis")
        root = Transform(stream.rot[-1, pelvis],
                         stream.pos[-1, pelvis] * self.calibration.height_scale)
        pose = self._full_pose(root, local)
        if self.postprocess:
            pose, self.states, _ = postprocess_step(self.skeleton, pose, contacts, self.states,
                                                    self.ik)
            local = pose.rotations[np.asarray(self.skeleton.lower_body) - 1]
        toes = np.stack([toe_position(self.skeleton, pose, s) for s in (0, 1)])
        t3 = time.perf_counter()
        self.contacts = contacts
        res = StepResult(frame_id, "ok", rot.rot_to_6d(local).reshape(48).astype(np.float32),
                         local, probs.astype(np.float32), contacts, root, toes)
        res.latency_us = {"features": (t1 - t0) * 1e6, "forward": (t2 - t1) * 1e6,
                          "postprocess": (t3 - t2) * 1e6, "total": (t3 - t_start) * 1e6}
        self.last = res
        return res

    def step(self, frame: TrackerFrame, frame_id=None) -> StepResult:
        return self.step_vector(frame.to_vector(), frame_id)

    def _full_pose(self, root: Transform, local) -> Pose:
        rots = np.tile(np.eye(3), (len(self.skeleton) - 1, 1, 1))
        rots[np.asarray(self.skeleton.lower_body) - 1] = local
        return Pose(root, rots)

    def full_pose(self, res: StepResult) -> Pose:
        return self._full_pose(res.root, res.rotations)


# -- offline replay -------------------------------------------------------------

def frame_vectors(frames) -> np.ndarray:
    """Float32 wire vectors for a list of :class:`TrackerFrame` (the replay/serve input)."""
    if not frames:
        return np.zeros((0, 36), np.float32)
    return np.stack([f.to_vector() for f in frames]).astype(np.float32)


def replay_vectors(session: StreamSession, vectors) -> list:
    return [session.step_vector(v, k) for k, v in enumerate(vectors)]


def replay(recording, session: StreamSession, out_path=None, bvh_path=None) -> list:
    """Run a JSON Lines recording through ``session``; warm-up frames produce no output line."""
    frames, _ = read_recording(recording)
    results = replay_vectors(session, frame_vectors(frames))
    emitted = [r for r in results if r.status != "warm-up" and r.rotations is not None]
    if out_path is not None:
        with open(out_path, "w") as fh:
            for r in emitted:
                fh.write(json.dumps(r.to_json()) + "\n")
    if bvh_path is not None:
        Path(bvh_path).write_text(results_to_bvh(session, emitted))
    return emitted


def results_to_bvh(session: StreamSession, results, fps=45.0) -> str:
    """Lower body grafted onto the session skeleton, root from the pelvis tracker."""
    sk = session.skeleton
    T = len(results)
    root_pos = np.zeros((T, 3))
    root_rot = np.tile(np.eye(3), (T, 1, 1))
    local = np.tile(np.eye(3), (T, len(sk) - 1, 1, 1))
    for k, r in enumerate(results):
        p = session.full_pose(r)
        root_pos[k], root_rot[k], local[k] = p.root.position, p.root.rotation, p.rotations
    return write_bvh(MotionClip(sk, fps, root_pos, root_rot, local, name="replay"))


# -- TCP service ----------------------------------------------------------------

class Server:
    """Serves one client at a time; each connection gets a fresh session."""

    def __init__(self, address, session_factory, max_connections=None):
        self.address = address
        self.session_factory = session_factory
        self.max_connections = max_connections
        self._stop = threading.Event()
        self.sock = socket.create_server(address)
        self.sock.settimeout(0.2)
        self.port = self.sock.getsockname()[1]

    def shutdown(self):
        self._stop.set()

    def serve_forever(self):
        served = 0
        try:
            while not self._stop.is_set():
                if self.max_connections is not None and served >= self.max_connections:
                    break
                try:
                    conn, peer = self.sock.accept()
                except socket.timeout:
                    continue
                served += 1
                log.info("client connected from %s", peer)
                try:
                    self.handle(conn)
                except OSError as exc:
                    log.warning("connection from %s dropped: %s", peer, exc)
                finally:
                    conn.close()
        finally:
            self.sock.close()

    def handle(self, conn):
        conn.settimeout(None)
        session = self.session_factory()
        n = protocol.REQUEST.size
        while not self._stop.is_set():
            buf = protocol.read_exact(conn, n)
            if not buf:
                return
            if len(buf) < n:
                log.warning("short read (%d of %d bytes); closing connection", len(buf), n)
                return
            try:
                frame_id, vec = protocol.decode_request(buf)
            except protocol.ProtocolError as exc:
                log.warning("protocol error: %s", exc)
                conn.sendall(protocol.encode_response(0, "error"))
                return
            r = session.step_vector(vec, frame_id)
            conn.sendall(protocol.encode_response(frame_id, r.status, r.pose, r.contact_prob,
                                                  r.contact))


def serve(address, session_factory, max_connections=None):
    Server(address, session_factory, max_connections).serve_forever()


def stream_to_server(address, vectors, fps=None, timeout=10.0) -> list:
    """Client helper: send vectors in order (paced at ``fps`` if given), collect responses."""
    out = []
    period = 1.0 / fps if fps else 0.0
    with socket.create_connection(address, timeout=timeout) as s:
        t_next = time.perf_counter()
        for k, v in enumerate(vectors):
            if period:
                time.sleep(max(0.0, t_next - time.perf_counter()))
                t_next += period
            s.sendall(protocol.encode_request(k, v))
            buf = protocol.read_exact(s, protocol.RESPONSE.size)
            if len(buf) < protocol.RESPONSE.size:
                raise ConnectionError("server closed the connection mid-response")
            out.append(protocol.decode_response(buf))
    return out
