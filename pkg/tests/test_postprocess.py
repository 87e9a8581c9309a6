import itertools

import numpy as np
import pytest

from lobstr import rotation as rot
from lobstr.postprocess import (Blending, Free, IkConfig, Locked, blend_alpha, decide_contact,
                                jacobian_ik, postprocess_step, toe_position)
from lobstr.skeleton import Pose, Transform, fk
from lobstr.standard import standard_skeleton

SK = standard_skeleton()
CFG = IkConfig()


def bent_pose(root=(0.0, 1.01, 0.0), knee=25.0, extra=None):
    rots = rot.identity((len(SK) - 1,))
    for side in ("Left", "Right"):
        rots[SK.index(f"{side}UpLeg") - 1] = rot.rot_x(-knee / 2)
        rots[SK.index(f"{side}Leg") - 1] = rot.rot_x(knee)
    rots[SK.index("Spine") - 1] = rot.rot_y(5.0)
    if extra:
        for name, R in extra.items():
            rots[SK.index(name) - 1] = R
    return Pose(Transform(np.eye(3), root), rots)


# -- contact decisions ---------------------------------------------------------

def test_decide_contact_examples():
    assert decide_contact(np.zeros(4)) == (False, False)
    assert decide_contact([-5.0, 5.0, -5.0, 5.0]) == (True, True)
    assert decide_contact([0.0, 1.0, 1.0, 0.0]) == (True, False)


def test_threshold_sweep_is_monotone(rng):
    for _ in range(20):
        logits = rng.normal(0, 2, 4)
        prev = (True, True)
        for th in np.linspace(0.01, 0.99, 50):
            d = decide_contact(logits, th)
            assert all(b <= a for a, b in zip(prev, d))
            prev = d


def test_hysteresis_band():
    p = 0.55
    logits = [0.0, np.log(p / (1 - p)), 0.0, np.log(p / (1 - p))]
    assert decide_contact(logits, 0.5, previous=(False, True), hysteresis=0.1) == (False, True)
    assert decide_contact(logits, 0.5) == (True, True)


def test_ik_config_validation():
    with pytest.raises(ValueError):
        IkConfig(max_iterations=0)
    with pytest.raises(ValueError):
        IkConfig(hysteresis=0.6)


# -- blend ----------------------------------------------------------------------

def test_blend_alpha_values_and_slopes():
    assert blend_alpha(0.0) == 0.0 and blend_alpha(1.0) == 1.0
    assert blend_alpha(0.5) == pytest.approx(0.5, abs=1e-15)
    eps = 1e-4
    assert (blend_alpha(eps) - blend_alpha(0)) / eps < 1e-3
    assert (blend_alpha(1) - blend_alpha(1 - eps)) / eps < 1e-3
    assert blend_alpha(-3) == 0.0 and blend_alpha(7) == 1.0
    s = np.linspace(0, 1, 101)
    a = [blend_alpha(x) for x in s]
    assert np.all(np.diff(a) > 0)


# -- IK -------------------------------------------------------------------------

def test_ik_identity_target():
    pose = bent_pose()
    chain = SK.leg_chain(0)
    res = jacobian_ik(SK, pose, chain, toe_position(SK, pose, 0))
    assert res.iterations == 0 and res.converged and res.pose is pose


@pytest.mark.parametrize("side,delta", [(0, [0, 0, 0.02]), (1, [0.01, 0.015, -0.02])])
def test_ik_small_offset_converges(side, delta):
    pose = bent_pose()
    target = toe_position(SK, pose, side) + delta
    res = jacobian_ik(SK, pose, SK.leg_chain(side), target)
    assert res.converged and res.iterations <= 50
    # independent FK oracle
    w = fk(SK, res.pose)
    assert np.linalg.norm(w[SK.toe_base[side]].position - target) < CFG.tolerance
    chain = set(SK.leg_chain(side)[:-1])
    for j in range(1, len(SK)):
        if j not in chain:
            np.testing.assert_array_equal(res.pose.rotations[j - 1], pose.rotations[j - 1])


def test_ik_unreachable_reaches_toward_target():
    pose = bent_pose()
    chain = SK.leg_chain(0)
    target = np.array([0.3, -1.5, 0.6])
    res = jacobian_ik(SK, pose, chain, target)
    assert not res.converged
    w = fk(SK, pose)
    pivot = w[chain[0]].position
    reach = sum(np.linalg.norm(SK.offsets[j]) for j in chain[1:])
    best = pivot + reach * (target - pivot) / np.linalg.norm(target - pivot)
    assert np.linalg.norm(toe_position(SK, res.pose, 0) - best) < 0.01


def test_ik_never_throws_on_bad_target():
    pose = bent_pose()
    res = jacobian_ik(SK, pose, SK.leg_chain(0), [np.nan, 0, 0])
    assert not res.converged and res.pose is pose


# -- state machine ---------------------------------------------------------------

def test_state_machine_totality():
    pose = bent_pose()
    toe = tuple(toe_position(SK, pose, 0))
    states = [Free(), Locked(toe), Blending(0, toe), Blending(9, toe)]
    for s, c in itertools.product(states, (False, True)):
        _, nxt, _ = postprocess_step(SK, pose, (c, False), (s, Free()))
        assert isinstance(nxt[0], (Free, Locked, Blending))
        if isinstance(nxt[0], Blending):
            assert 0 <= nxt[0].elapsed < 10


def test_no_contact_is_identity():
    states = (Free(), Free())
    for k in range(20):
        pose = bent_pose(root=(0.01 * k, 1.01, 0.0), knee=20 + k)
        out, states, _ = postprocess_step(SK, pose, (False, False), states)
        assert out is pose and states == (Free(), Free())


def test_locked_foot_stays_put_while_pelvis_drifts():
    states = (Free(), Free())
    toes = []
    for k in range(11):
        pose = bent_pose(root=(0.001 * k, 1.01, 0.0))
        out, states, _ = postprocess_step(SK, pose, (True, False), states)
        toes.append(fk(SK, out)[SK.toe_base[0]].position)
        # the free right leg is untouched
        np.testing.assert_array_equal(out.rotations[SK.index("RightLeg") - 1],
                                      pose.rotations[SK.index("RightLeg") - 1])
    assert isinstance(states[0], Locked)
    d = np.linalg.norm(np.array(toes) - toes[0], axis=1)
    assert d.max() < CFG.tolerance + 1e-6


def test_lock_target_not_below_floor():
    pose = bent_pose(root=(0.0, 0.9, 0.0))
    assert toe_position(SK, pose, 0)[1] < 0
    _, states, _ = postprocess_step(SK, pose, (True, True), (Free(), Free()))
    assert states[0].target[1] == 0.0
    _, states, _ = postprocess_step(SK, bent_pose(), (True, True), (Free(), Free()),
                                    IkConfig(snap_to_floor=True))
    assert states[0].target[1] == 0.0


def test_release_blend_sequence_and_return_to_raw():
    states = (Free(), Free())
    for k in range(5):
        _, states, _ = postprocess_step(SK, bent_pose(), (True, False), states)
    anchor = np.array(states[0].target)
    alphas, outs, raws = [], [], []
    for k in range(14):
        pose = bent_pose(root=(0.03 * (k + 1), 1.01, 0.0))
        out, states, info = postprocess_step(SK, pose, (False, False), states)
        alphas.append(info.alphas[0])
        outs.append(toe_position(SK, out, 0))
        raws.append(toe_position(SK, pose, 0))
        if k >= 9:
            assert isinstance(states[0], Free)
            np.testing.assert_allclose(out.rotations, pose.rotations, atol=1e-9)
    assert alphas[:10] == [blend_alpha(k / 10) for k in range(1, 11)]
    assert alphas[10:] == [None] * 4
    for k in range(10):
        target = (1 - alphas[k]) * anchor + alphas[k] * raws[k]
        assert np.linalg.norm(outs[k] - target) < CFG.tolerance
    # per-frame step bounded by the blend increment plus the raw motion (and IK slack)
    a = [0.0] + alphas[:10]
    prev = anchor
    for k in range(10):
        bound = (a[k + 1] - a[k]) * np.linalg.norm(raws[k] - anchor) \
            + a[k] * np.linalg.norm(raws[k] - raws[k - 1] if k else 0) + 2 * CFG.tolerance
        assert np.linalg.norm(outs[k] - prev) <= bound
        prev = outs[k]


def test_contact_during_blend_relocks_at_blended_position():
    states = (Locked(tuple(toe_position(SK, bent_pose(), 0))), Free())
    pose = bent_pose(root=(0.05, 1.01, 0.0))
    _, states, info = postprocess_step(SK, pose, (False, False), states)
    assert isinstance(states[0], Blending) and states[0].elapsed == 1
    _, states, info = postprocess_step(SK, pose, (True, False), states)
    assert isinstance(states[0], Locked)
    np.testing.assert_allclose(states[0].target, info.targets[0])


def test_both_feet_locked_independently():
    states = (Free(), Free())
    pose = bent_pose()
    _, states, _ = postprocess_step(SK, pose, (True, True), states)
    moved = bent_pose(root=(0.004, 1.008, 0.002))
    out, states, info = postprocess_step(SK, moved, (True, True), states)
    for s in (0, 1):
        assert np.linalg.norm(toe_position(SK, out, s) - toe_position(SK, pose, s)) < 1e-3
    np.testing.assert_array_equal(out.rotations[SK.index("Spine") - 1],
                                  moved.rotations[SK.index("Spine") - 1])


def test_batched_rodrigues_matches_rotation_module(rng):
    from lobstr.postprocess import _rodrigues
    v = np.concatenate([rng.normal(0, 1, (50, 3)), rng.normal(0, 1e-8, (5, 3)), np.zeros((1, 3))])
    np.testing.assert_allclose(_rodrigues(v), rot.rotvec_to_matrix(v), atol=1e-14)
