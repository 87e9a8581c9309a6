import logging

import numpy as np
import pytest

from lobstr import rotation as rot
from lobstr.bvh import BVHParseError, parse_bvh, read_bvh, write_bvh

SMALL = """HIERARCHY
ROOT Hips
{
  OFFSET 0 100 0
  CHANNELS 6 Xposition Yposition Zposition Zrotation Xrotation Yrotation
  JOINT Leg
  {
    OFFSET 0 -50 0
    CHANNELS 3 Zrotation Xrotation Yrotation
    End Site
    {
      OFFSET 0 -50 0
    }
  }
}
MOTION
Frames: 2
Frame Time: 0.0333333
1 2 3 0 0 0 0 0 0
0 0 0 90 0 0 10 20 30
"""


def test_parse_small_file():
    sk, clip = parse_bvh(SMALL, scale=0.01)
    assert sk.names == ("Hips", "Leg") and sk.parents == (-1, 0)
    assert clip.fps == pytest.approx(30.0, rel=1e-5)
    # root offset folded into the root position, then scaled
    np.testing.assert_allclose(clip.root_pos[0], [0.01, 1.02, 0.03])
    np.testing.assert_allclose(sk.offsets[1], [0, -0.5, 0])
    np.testing.assert_allclose(sk.end_sites[1], [0, -0.5, 0])
    np.testing.assert_allclose(clip.root_rot[1], rot.rot_z(90), atol=1e-12)
    np.testing.assert_allclose(clip.local_rot[1, 0],
                               rot.rot_z(10) @ rot.rot_x(20) @ rot.rot_y(30), atol=1e-12)


def test_write_parse_round_trip(walk):
    text = write_bvh(walk)
    sk, back = parse_bvh(text, name=walk.name)
    assert sk.names == walk.skeleton.names
    np.testing.assert_allclose(back.root_pos, walk.root_pos, atol=1e-8)
    np.testing.assert_allclose(back.local_rot, walk.local_rot, atol=1e-7)
    assert back.fps == pytest.approx(walk.fps, rel=1e-8)


def test_read_bvh_from_file(tmp_path):
    p = tmp_path / "clip01.bvh"
    p.write_text(SMALL)
    sk, clip = read_bvh(p, scale=0.01, category="locomotion")
    assert clip.name == "clip01" and clip.category == "locomotion"


@pytest.mark.parametrize("mutate,line", [
    (lambda s: s.replace("0 0 0 90 0 0 10 20 30", "0 0 0 90 0 0 10 20"), 20),
    (lambda s: s.replace("Zrotation Xrotation Yrotation\n    End", "Zrotation Xrotation Wrotation\n    End"), 9),
    (lambda s: s.replace("Frames: 2", "Frames: 3"), None),
    (lambda s: s.replace("1 2 3", "1 x 3"), 19),
])
def test_errors_carry_line_numbers(mutate, line):
    with pytest.raises(BVHParseError) as ei:
        parse_bvh(mutate(SMALL))
    if line is not None:
        assert ei.value.line == line


def test_missing_sections():
    with pytest.raises(BVHParseError, match="HIERARCHY"):
        parse_bvh("ROOT x")
    with pytest.raises(BVHParseError, match="MOTION"):
        parse_bvh(SMALL.split("MOTION")[0])


def test_non_root_position_channels_warn(caplog):
    text = SMALL.replace("CHANNELS 3 Zrotation Xrotation Yrotation",
                         "CHANNELS 6 Xposition Yposition Zposition Zrotation Xrotation Yrotation")
    text = text.replace("1 2 3 0 0 0 0 0 0", "1 2 3 0 0 0 5 5 5 0 0 0")
    text = text.replace("0 0 0 90 0 0 10 20 30", "0 0 0 90 0 0 5 5 5 10 20 30")
    with caplog.at_level(logging.WARNING):
        sk, clip = parse_bvh(text)
    assert "ignored" in caplog.text
    np.testing.assert_allclose(clip.local_rot[1, 0],
                               rot.rot_z(10) @ rot.rot_x(20) @ rot.rot_y(30), atol=1e-12)
