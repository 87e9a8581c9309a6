"""Contact locking with damped least-squares IK and slow-in-slow-out release."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .net import contact_probabilities
from .skeleton import Pose, Skeleton, Transform


@dataclass(frozen=True)
class IkConfig:
    max_iterations: int = 50
    tolerance: float = 1e-3
    damping: float = 0.1
    blend_frames: int = 10
    max_step: float = 0.1
    contact_threshold: float = 0.5
    hysteresis: float = 0.0
    snap_to_floor: bool = False
    enabled: bool = True

    def __post_init__(self):
        if self.max_iterations <= 0 or self.tolerance <= 0 or self.damping <= 0 \
                or self.blend_frames <= 0 or self.max_step <= 0:
            raise ValueError("IK settings must be positive")
        if not 0.0 <= self.hysteresis < min(self.contact_threshold, 1 - self.contact_threshold):
            raise ValueError("hysteresis band must fit inside (0, 1) around the threshold")


# -- per-foot contact state ---------------------------------------------------

@dataclass(frozen=True)
class Free:
    pass


@dataclass(frozen=True)
class Locked:
    target: tuple


@dataclass(frozen=True)
class Blending:
    elapsed: int      # blend frames already emitted, 0 <= elapsed < blend window
    anchor: tuple


def decide_contact(logits, threshold=0.5, previous=None, hysteresis=0.0):
    """Per-foot booleans: contact-class probability above ``threshold``.

    With a hysteresis band, a foot already in contact keeps it until the
    probability drops below ``threshold - hysteresis``, and a free foot
    needs ``threshold + hysteresis`` to engage.
    """
    p = contact_probabilities(logits).reshape(2, 2)[:, 1]
    out = []
    for k in range(2):
        th = threshold
        if previous is not None and hysteresis > 0:
            th = threshold - hysteresis if previous[k] else threshold + hysteresis
        out.append(bool(p[k] > th))
    return tuple(out)


def blend_alpha(s: float) -> float:
    s = min(max(float(s), 0.0), 1.0)
    return (1.0 - np.cos(np.pi * s)) / 2.0


# -- IK -------------------------------------------------------------------------

@dataclass
class IkResult:
    pose: Pose
    converged: bool
    iterations: int
    error: float


def _chain_world(skeleton, pose_rots, root: Transform, chain):
    """World rotations/positions of ``chain`` joints plus the rotation of the
    first joint's parent."""
    path = skeleton.chain(chain[0])
    W = root.rotation
    p = root.position
    for j in path[1:-1]:
        p = p + W @ skeleton.offsets[j]
        W = W @ pose_rots[j - 1]
    parent_W = W
    Ws, ps = [], []
    for j in chain:
        p = p + W @ skeleton.offsets[j]
        W = W @ pose_rots[j - 1]
        Ws.append(W)
        ps.append(p)
    return parent_W, Ws, ps


def _skew(v):
    """(n, 3) vectors -> (n, 3, 3) cross-product matrices."""
    S = np.zeros(v.shape[:-1] + (3, 3))
    S[..., 0, 1], S[..., 0, 2], S[..., 1, 2] = -v[..., 2], v[..., 1], -v[..., 0]
    S[..., 1, 0], S[..., 2, 0], S[..., 2, 1] = v[..., 2], -v[..., 1], v[..., 0]
    return S


def _rodrigues(v):
    """Batched exponential map, exact to rounding for small angles as well."""
    th2 = np.einsum("ni,ni->n", v, v)
    th = np.sqrt(th2)
    small = th < 1e-6
    safe = np.where(small, 1.0, th)
    a = np.where(small, 1.0 - th2 / 6.0, np.sin(safe) / safe)
    b = np.where(small, 0.5 - th2 / 24.0, (1.0 - np.cos(safe)) / (safe * safe))
    S = _skew(v)
    return np.eye(3) + a[:, None, None] * S + b[:, None, None] * (S @ S)


def jacobian_ik(skeleton: Skeleton, pose: Pose, chain, target, config: IkConfig = IkConfig(),
                max_iterations=None) -> IkResult:
    """Move the end of ``chain`` (last joint) to ``target`` by rotating the other chain joints.

    Damped least squares with world-axis angular parameters per joint. The
    result carries ``converged=False`` when the tolerance is not met.
    """
    chain = list(chain)
    target = np.asarray(target, dtype=np.float64)
    if not np.all(np.isfinite(target)):
        return IkResult(pose, False, 0, float("inf"))
    for a, b in zip(chain[:-1], chain[1:]):
        if skeleton.parents[b] != a:
            raise ValueError("chain must be a parent-to-child path")
    iters = config.max_iterations if max_iterations is None else max_iterations
    rots = np.array(pose.rotations)
    damp = config.damping ** 2 * np.eye(3)
    idx = np.array(chain[:-1]) - 1
    n = idx.size
    it = 0
    while True:
        parent_W, Ws, ps = _chain_world(skeleton, rots, pose.root, chain)
        end = ps[-1]
        err = target - end
        dist = float(np.sqrt(err @ err))
        if dist < config.tolerance or it >= iters:
            break
        # columns: world x, y, z axes crossed with the lever arm of each moving joint
        J = -_skew(end - np.array(ps[:-1])).transpose(1, 0, 2).reshape(3, 3 * n)
        # clamp the task-space step so far targets do not overshoot
        step = err * min(1.0, config.max_step / dist)
        dtheta = J.T @ np.linalg.solve(J @ J.T + damp, step)
        W = np.array(Ws[:-1])
        parents = np.concatenate([parent_W[None], W[:-1]])
        rots[idx] = parents.transpose(0, 2, 1) @ _rodrigues(dtheta.reshape(n, 3)) @ W
        it += 1
    if it == 0:
        return IkResult(pose, True, 0, dist)
    return IkResult(Pose(pose.root, rots), dist < config.tolerance, it, dist)


def toe_position(skeleton: Skeleton, pose: Pose, side: int) -> np.ndarray:
    chain = skeleton.leg_chain(side)
    return _chain_world(skeleton, pose.rotations, pose.root, chain)[2][-1]


# -- per-frame state machine ---------------------------------------------------

@dataclass
class StepInfo:
    targets: list = field(default_factory=lambda: [None, None])
    alphas: list = field(default_factory=lambda: [None, None])
    ik: list = field(default_factory=lambda: [None, None])


def postprocess_step(skeleton: Skeleton, pose: Pose, contacts, states, config: IkConfig = IkConfig()):
    """Advance both feet one frame; returns ``(pose, (left_state, right_state), info)``.

    Free -> Locked on a rising contact edge (target = current toe-base);
    Locked pins the toe-base; a falling edge starts a ``blend_frames`` long
    release whose k-th frame aims at ``(1 - a) * anchor + a * raw`` with
    ``a = blend_alpha(k / blend_frames)``; Blending -> Locked if contact
    returns, re-anchoring at the current blended target.
    """
    info = StepInfo()
    out = pose
    new_states = []
    n = config.blend_frames
    for side in (0, 1):
        state, c = states[side], bool(contacts[side])
        raw_toe = toe_position(skeleton, pose, side)
        target = None
        if isinstance(state, Free):
            if c:
                t = raw_toe.copy()
                # lock targets stay on or above the floor
                t[1] = 0.0 if config.snap_to_floor else max(t[1], 0.0)
                state = Locked(tuple(t))
                target = t
        elif isinstance(state, Locked):
            if c:
                target = np.array(state.target)
            else:
                k = 1
                a = blend_alpha(k / n)
                anchor = np.array(state.target)
                target = (1.0 - a) * anchor + a * raw_toe
                info.alphas[side] = a
                state = Blending(k, state.target) if k < n else Free()
        elif isinstance(state, Blending):
            anchor = np.array(state.anchor)
            k = state.elapsed + 1
            a = blend_alpha(k / n)
            target = (1.0 - a) * anchor + a * raw_toe
            if c:
                target[1] = max(target[1], 0.0)
                state = Locked(tuple(target))
            else:
                info.alphas[side] = a
                state = Blending(k, state.anchor) if k < n else Free()
        else:
            raise TypeError(f"unknown contact state {state!r}")
        new_states.append(state)
        if target is not None and np.linalg.norm(target - raw_toe) > 0.0:
            # chain joints are disjoint between legs, so solving on `out` is independent
            res = jacobian_ik(skeleton, out, skeleton.leg_chain(side), target, config)
            out = res.pose
            info.ik[side] = res
        info.targets[side] = target
    return out, tuple(new_states), info
