"""The standard training skeleton: CMU-style naming, meters, root at 1 m in T-pose.

The character faces +Z with +Y up, so its left side is +X. Leg-chain
vertical offsets sum to -1 m, putting both toe-bases on the floor in
T-pose.
"""

import numpy as np

from .skeleton import Skeleton

_JOINTS = [
    ("Hips", None, (0.0, 0.0, 0.0)),
    ("LHipJoint", "Hips", (0.04, -0.02, 0.0)),
    ("LeftUpLeg", "LHipJoint", (0.06, -0.06, 0.0)),
    ("LeftLeg", "LeftUpLeg", (0.0, -0.42, 0.0)),
    ("LeftFoot", "LeftLeg", (0.0, -0.42, 0.0)),
    ("LeftToeBase", "LeftFoot", (0.0, -0.08, 0.12)),
    ("RHipJoint", "Hips", (-0.04, -0.02, 0.0)),
    ("RightUpLeg", "RHipJoint", (-0.06, -0.06, 0.0)),
    ("RightLeg", "RightUpLeg", (0.0, -0.42, 0.0)),
    ("RightFoot", "RightLeg", (0.0, -0.42, 0.0)),
    ("RightToeBase", "RightFoot", (0.0, -0.08, 0.12)),
    ("LowerBack", "Hips", (0.0, 0.10, 0.0)),
    ("Spine", "LowerBack", (0.0, 0.15, 0.0)),
    ("Spine1", "Spine", (0.0, 0.15, 0.0)),
    ("Neck", "Spine1", (0.0, 0.12, 0.0)),
    ("Head", "Neck", (0.0, 0.12, 0.02)),
    ("LeftShoulder", "Spine1", (0.04, 0.08, 0.0)),
    ("LeftArm", "LeftShoulder", (0.14, 0.0, 0.0)),
    ("LeftForeArm", "LeftArm", (0.28, 0.0, 0.0)),
    ("LeftHand", "LeftForeArm", (0.26, 0.0, 0.0)),
    ("LeftFingerBase", "LeftHand", (0.08, 0.0, 0.0)),
    ("RightShoulder", "Spine1", (-0.04, 0.08, 0.0)),
    ("RightArm", "RightShoulder", (-0.14, 0.0, 0.0)),
    ("RightForeArm", "RightArm", (-0.28, 0.0, 0.0)),
    ("RightHand", "RightForeArm", (-0.26, 0.0, 0.0)),
    ("RightFingerBase", "RightHand", (-0.08, 0.0, 0.0)),
]

LOWER_BODY = ["LHipJoint", "LeftUpLeg", "LeftLeg", "LeftFoot",
              "RHipJoint", "RightUpLeg", "RightLeg", "RightFoot"]
TOE_BASE = ["LeftToeBase", "RightToeBase"]
TRACKER_JOINTS = {"head": "Head", "left_hand": "LeftFingerBase",
                  "right_hand": "RightFingerBase", "pelvis": "Hips"}

STANDARD_DESCRIPTION = {
    "joints": [{"name": n, "parent": p, "offset": list(o)} for n, p, o in _JOINTS],
    "lower_body": LOWER_BODY,
    "toe_base": TOE_BASE,
    "trackers": TRACKER_JOINTS,
}

# annotation-only description for CMU/PFNN-named BVH files
CMU_ANNOTATION = {
    "lower_body": LOWER_BODY,
    "toe_base": TOE_BASE,
    "trackers": TRACKER_JOINTS,
}

ROOT_HEIGHT = 1.0
# raw corpus edit: offsets and root positions scaled, then the root lowered
CORPUS_SCALE = 0.0594
CORPUS_ROOT_SHIFT = -0.05


def standard_skeleton() -> Skeleton:
    return Skeleton.from_description(STANDARD_DESCRIPTION)


def tpose_root():
    return np.array([0.0, ROOT_HEIGHT, 0.0])
