import numpy as np
import pytest

from lobstr import autodiff as ad
from lobstr import rotation as rot
from lobstr.losses import (LossWeights, NonFiniteLossError, decode_pose, loss_contact, loss_fk,
                           loss_pose, loss_velocity, lr_at, target_toe_positions, toe_positions,
                           total_loss)
from lobstr.skeleton import Pose, Transform, fk
from lobstr.standard import standard_skeleton, tpose_root

SK = standard_skeleton()
COMP = ("pose", "fk", "velocity", "contact_left", "contact_right")


def test_total_loss_exact_value():
    assert total_loss({k: 1.0 for k in COMP}) == 1.200001


def test_total_loss_rejects_nan():
    comps = {k: 1.0 for k in COMP}
    comps["fk"] = np.nan
    with pytest.raises(NonFiniteLossError, match="fk"):
        total_loss(comps)
    with pytest.raises(ValueError):
        LossWeights(pose=-1)


def test_lr_schedule():
    assert lr_at(0) == 1e-3
    for e in (1, 10, 500, 1499):
        assert abs(lr_at(e) - 1e-3 * 0.999 ** e) <= 1e-15


def test_pose_loss_is_mean_absolute():
    pred = np.zeros((2, 48))
    tgt = np.zeros((2, 48))
    tgt[0, 0] = 0.96
    assert loss_pose(pred, tgt).item() == pytest.approx(0.96 / 96)


def random_pose_batch(rng, n):
    local = rot.axis_angle(rng.standard_normal((n, 8, 3)), rng.uniform(0, 0.5, (n, 8)))
    return rot.rot_to_6d(local).reshape(n, 48)


def test_toe_positions_match_generic_fk(rng):
    pose6 = random_pose_batch(rng, 3)
    root = np.concatenate([np.tile(tpose_root(), (3, 1)), np.tile([0, 0, 1, 0, 1, 0], (3, 1))], 1)
    toes = target_toe_positions(pose6, root, SK)
    for b in range(3):
        rots = rot.identity((len(SK) - 1,))
        rots[np.asarray(SK.lower_body) - 1] = rot.sixdof_to_rot(pose6[b].reshape(8, 6))
        w = fk(SK, Pose(Transform(np.eye(3), tpose_root()), rots))
        for s in (0, 1):
            np.testing.assert_allclose(toes[b, s], w[SK.toe_base[s]].position, atol=1e-12)


def test_fk_and_velocity_losses_vanish_at_target(rng):
    y = random_pose_batch(rng, 4)
    y_prev = random_pose_batch(rng, 4)
    root = np.tile(np.r_[tpose_root(), 0, 0, 1, 0, 1, 0], (4, 1))
    assert loss_fk(y, y, root, SK).item() == pytest.approx(0.0, abs=1e-12)
    assert loss_velocity(y, y, y_prev, root, root, SK).item() == pytest.approx(0.0, abs=1e-12)


def test_fk_loss_hip_swing_oracle():
    # rotate both upper legs 90 deg about X: toe moves from below the hip to in front of it
    y = np.tile([0, 0, 1, 0, 1, 0], (1, 8)).astype(float)
    pred = y.copy()
    swing = rot.rot_to_6d(rot.rot_x(90))
    pred[0, 6:12] = swing
    pred[0, 30:36] = swing
    root = np.r_[tpose_root(), 0, 0, 1, 0, 1, 0][None]
    toes0 = target_toe_positions(y, root, SK)
    toes1 = target_toe_positions(pred, root, SK)
    hip = SK.offsets[SK.index("LHipJoint")] + SK.offsets[SK.index("LeftUpLeg")] + tpose_root()
    r = np.linalg.norm(toes0[0, 0] - hip)
    # chord of a 90 deg swing of radius r
    assert loss_fk(pred, y, root, SK).item() == pytest.approx(np.sqrt(2) * r, rel=1e-9)
    np.testing.assert_allclose(np.linalg.norm(toes1 - toes0, axis=-1), np.sqrt(2) * r)


def test_velocity_mask():
    rng = np.random.default_rng(0)
    y, p, yp = (random_pose_batch(rng, 2) for _ in range(3))
    root = np.tile(np.r_[tpose_root(), 0, 0, 1, 0, 1, 0], (2, 1))
    full = loss_velocity(p, y, yp, root, root, SK, mask=[1, 1]).item()
    half = loss_velocity(p, y, yp, root, root, SK, mask=[1, 0]).item()
    only0 = loss_velocity(p[:1], y[:1], yp[:1], root[:1], root[:1], SK).item()
    assert half == pytest.approx(only0 / 2)
    assert full > half


def test_contact_cross_entropy():
    left, right = loss_contact(np.zeros((3, 4)), np.array([[0, 1], [1, 1], [0, 0]]))
    assert left.item() == pytest.approx(np.log(2)) and right.item() == pytest.approx(np.log(2))
    logits = np.array([[0.0, 2.0, 1.0, 0.0]])
    left, right = loss_contact(logits, np.array([[1, 1]]))
    assert left.item() == pytest.approx(np.log1p(np.exp(-2.0)))
    assert right.item() == pytest.approx(np.log1p(np.exp(1.0)))
    with pytest.raises(ValueError):
        loss_contact(logits, np.array([[2, 0]]))


def test_decode_pose_gradient_and_degeneracy(rng):
    x = ad.Tensor(random_pose_batch(rng, 2) + 0.1 * rng.standard_normal((2, 48)), requires_grad=True)
    with ad.Tape() as tape:
        R = decode_pose(x)
        tape.backward(ad.tsum(R * R))
    # sum of squares of a rotation is constant (3 per block), so the gradient vanishes
    np.testing.assert_allclose(x.grad, 0, atol=1e-10)
    bad = np.zeros((1, 48))
    with pytest.raises(rot.DegenerateRotationError):
        decode_pose(bad)


def test_toe_positions_requires_lower_body_chain():
    from lobstr.skeleton import Skeleton
    desc = SK.to_description()
    desc["lower_body"] = ["LHipJoint", "LeftUpLeg", "LeftLeg", "Spine",
                          "RHipJoint", "RightUpLeg", "RightLeg", "RightFoot"]
    bad = Skeleton.from_description(desc)
    with pytest.raises(ValueError, match="LeftFoot"):
        toe_positions(rot.identity((1, 8)), np.eye(3)[None], np.zeros((1, 3)), bad)


def test_velocity_loss_reduces_to_fk_difference():
    rng = np.random.default_rng(5)
    y, p, yp = (random_pose_batch(rng, 6) for _ in range(3))
    root = np.tile(np.r_[tpose_root(), 0, 0, 1, 0, 1, 0], (6, 1))
    prev_root = root + np.r_[0.1, 0.0, -0.2, np.zeros(6)]
    v = loss_velocity(p, y, yp, root, prev_root, SK).item()
    assert v == pytest.approx(loss_fk(p, y, root, SK).item(), rel=1e-12)
