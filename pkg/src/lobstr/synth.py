"""Procedural motion for tests, demos and the overfit check.

The walk generator is a kinematic gait: speed and heading vary smoothly,
step frequency follows speed, legs swing in antiphase with the arms, and
the pelvis bobs twice per stride. It is not physically exact (the stance
toe slides a little) but gives realistic tracker and contact statistics.
"""

import numpy as np

from . import rotation as rot
from .skeleton import MotionClip
from .standard import standard_skeleton


def _set(local, skel, name, R):
    local[:, skel.index(name) - 1] = R


def synthetic_walk(seconds=60.0, fps=45.0, seed=0, name="synthetic_walk",
                   category="locomotion", skeleton=None) -> MotionClip:
    skel = skeleton or standard_skeleton()
    rng = np.random.default_rng(seed)
    T = int(round(seconds * fps))
    t = np.arange(T) / fps

    # smooth random speed and turning-rate profiles
    def smooth_noise(scale, n_terms=4, max_freq=0.08):
        out = np.zeros(T)
        for _ in range(n_terms):
            f = rng.uniform(0.01, max_freq)
            out += rng.uniform(0.5, 1.0) * np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi))
        return scale * out / n_terms

    speed = np.clip(1.2 + smooth_noise(0.8), 0.6, 1.9)          # m/s
    turn_rate = smooth_noise(0.9)                               # rad/s
    heading = np.cumsum(turn_rate) / fps
    stride_freq = 0.55 + 0.35 * speed                           # strides/s
    phase = 2 * np.pi * np.cumsum(stride_freq) / fps
    amp = np.clip(speed / 1.9, 0.3, 1.0)

    fwd = np.stack([np.sin(heading), np.zeros(T), np.cos(heading)], -1)
    root_pos = np.cumsum(fwd * (speed / fps)[:, None], axis=0)
    root_pos[:, 1] = 0.99 + 0.02 * np.cos(2 * phase) * amp

    yaw = rot.rot_y(np.degrees(heading))
    sway = rot.rot_y(6.0 * amp * np.sin(phase)) @ rot.rot_z(3.0 * amp * np.sin(phase))
    root_rot = yaw @ sway

    J = len(skel)
    local = rot.identity((T, J - 1))
    for side, sgn in (("Left", 1.0), ("Right", -1.0)):
        ph = phase + (0.0 if side == "Left" else np.pi)
        hip_flex = -28.0 * amp * np.sin(ph)
        knee = 8.0 + 45.0 * amp * np.clip(np.sin(ph - 0.6 * np.pi), 0.0, None) ** 1.5
        ankle = -10.0 * amp * np.sin(ph + 0.3)
        short = "L" if side == "Left" else "R"
        _set(local, skel, f"{short}HipJoint", rot.rot_z(sgn * 2.0 * amp * np.cos(ph)))
        _set(local, skel, f"{side}UpLeg", rot.rot_x(hip_flex))
        _set(local, skel, f"{side}Leg", rot.rot_x(knee))
        _set(local, skel, f"{side}Foot", rot.rot_x(ankle - 0.5 * knee + 0.3 * hip_flex))
        # arms hang down and swing opposite to the same-side leg
        _set(local, skel, f"{side}Arm", rot.rot_z(-sgn * 75.0) @ rot.rot_y(sgn * 25.0 * amp * np.sin(ph)))
        _set(local, skel, f"{side}ForeArm", rot.rot_y(-sgn * (15.0 + 10.0 * amp * np.sin(ph + 0.4))))
    _set(local, skel, "Spine", rot.rot_y(-4.0 * amp * np.sin(phase)))
    _set(local, skel, "Neck", rot.rot_y(3.0 * amp * np.sin(phase)) @ rot.rot_x(5.0 * np.sin(0.3 * t)))

    return MotionClip(skel, fps, root_pos, root_rot, local, name=name, category=category)


def synthetic_idle(seconds=10.0, fps=45.0, seed=0, name="synthetic_idle",
                   category="upper-body", skeleton=None) -> MotionClip:
    """Standing in place with arm gestures and slow pelvis yaw."""
    skel = skeleton or standard_skeleton()
    rng = np.random.default_rng(seed)
    T = int(round(seconds * fps))
    t = np.arange(T) / fps
    f1, f2 = rng.uniform(0.2, 0.6, 2)
    root_pos = np.zeros((T, 3))
    root_pos[:, 1] = 0.995
    root_pos[:, 0] = 0.01 * np.sin(2 * np.pi * 0.1 * t)
    root_rot = rot.rot_y(20.0 * np.sin(2 * np.pi * 0.05 * t))
    local = rot.identity((T, len(skel) - 1))
    for side, sgn, f in (("Left", 1.0, f1), ("Right", -1.0, f2)):
        _set(local, skel, f"{side}Arm", rot.rot_z(-sgn * (60.0 - 40.0 * np.sin(2 * np.pi * f * t))))
        _set(local, skel, f"{side}ForeArm", rot.rot_y(-sgn * (40.0 + 30.0 * np.sin(2 * np.pi * f * t + 1.0))))
    return MotionClip(skel, fps, root_pos, root_rot, local, name=name, category=category)


def tpose_clip(n_frames=90, fps=45.0, skeleton=None, name="tpose") -> MotionClip:
    from .skeleton import static_clip
    skel = skeleton or standard_skeleton()
    return static_clip(skel, n_frames, fps, name=name)
