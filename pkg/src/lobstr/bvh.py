"""BVH reader and writer.

File units are multiplied by ``scale`` on read (and divided on write), so
``scale`` is "meters per file unit". The root offset is folded into the
root position channels; other joints keep their offsets in the skeleton.
Position channels on non-root joints are read but discarded.
"""

from __future__ import annotations

import logging

import numpy as np

from . import rotation as rot
from .skeleton import MotionClip, Skeleton

log = logging.getLogger(__name__)

_ROT = {"Xrotation": "X", "Yrotation": "Y", "Zrotation": "Z"}
_POS = {"Xposition": 0, "Yposition": 1, "Zposition": 2}


class BVHParseError(ValueError):
    def __init__(self, msg, line=None):
        self.line = line
        super().__init__(f"line {line}: {msg}" if line is not None else msg)


class _Tokens:
    def __init__(self, text):
        self.toks = []
        self.lines = text.splitlines()
        for ln, line in enumerate(self.lines, start=1):
            if line.strip().upper() == "MOTION":
                self.motion_line = ln
                break
            for t in line.split():
                self.toks.append((t, ln))
        else:
            self.motion_line = None
        self.i = 0

    def peek(self):
        return self.toks[self.i] if self.i < len(self.toks) else (None, len(self.lines))

    def next(self):
        t = self.peek()
        if t[0] is None:
            raise BVHParseError("unexpected end of hierarchy", t[1])
        self.i += 1
        return t

    def expect(self, word):
        t, ln = self.next()
        if t != word:
            raise BVHParseError(f"expected {word!r}, found {t!r}", ln)
        return ln

    def floats(self, n):
        out = []
        for _ in range(n):
            t, ln = self.next()
            try:
                out.append(float(t))
            except ValueError:
                raise BVHParseError(f"expected a number, found {t!r}", ln) from None
        return out


def parse_bvh(text: str, scale: float = 1.0, name: str = "clip",
              category: str = "other") -> tuple:
    """Parse BVH text into ``(Skeleton, MotionClip)``."""
    tk = _Tokens(text)
    if tk.peek()[0] != "HIERARCHY":
        raise BVHParseError("missing HIERARCHY header", tk.peek()[1])
    tk.next()
    names, parents, offsets, channels, end_sites = [], [], [], [], {}

    def joint(parent, keyword_line):
        t, ln = tk.next()
        jname = t
        tk.expect("{")
        tk.expect("OFFSET")
        off = tk.floats(3)
        idx = len(names)
        names.append(jname)
        parents.append(parent)
        offsets.append(off)
        tk.expect("CHANNELS")
        t, ln = tk.next()
        try:
            nch = int(t)
        except ValueError:
            raise BVHParseError(f"bad channel count {t!r}", ln) from None
        chans = []
        for _ in range(nch):
            c, cl = tk.next()
            if c not in _ROT and c not in _POS:
                raise BVHParseError(f"unsupported channel {c!r}", cl)
            chans.append(c)
        channels.append(chans)
        while True:
            t, ln = tk.next()
            if t == "}":
                return
            if t == "JOINT":
                joint(idx, ln)
            elif t == "End":
                tk.expect("Site")
                tk.expect("{")
                tk.expect("OFFSET")
                end_sites[idx] = tk.floats(3)
                tk.expect("}")
            else:
                raise BVHParseError(f"unexpected token {t!r}", ln)

    t, ln = tk.next()
    if t != "ROOT":
        raise BVHParseError(f"expected ROOT, found {t!r}", ln)
    joint(-1, ln)
    if tk.peek()[0] is not None:
        t, ln = tk.peek()
        raise BVHParseError(f"trailing token {t!r} after hierarchy", ln)
    if tk.motion_line is None:
        raise BVHParseError("missing MOTION section", len(tk.lines))

    lines = tk.lines
    ml = tk.motion_line
    n_frames, frame_time = None, None
    k = ml
    while k < len(lines) and (n_frames is None or frame_time is None):
        line = lines[k].strip()
        k += 1
        if not line:
            continue
        if line.startswith("Frames:"):
            try:
                n_frames = int(line.split(":", 1)[1])
            except ValueError:
                raise BVHParseError("bad Frames header", k) from None
        elif line.startswith("Frame Time:"):
            try:
                frame_time = float(line.split(":", 1)[1])
            except ValueError:
                raise BVHParseError("bad Frame Time header", k) from None
        else:
            raise BVHParseError(f"unexpected motion header {line!r}", k)
    if n_frames is None or frame_time is None or frame_time <= 0:
        raise BVHParseError("missing or invalid Frames/Frame Time header", k)

    n_ch = sum(len(c) for c in channels)
    data = np.empty((n_frames, n_ch))
    f = 0
    while k < len(lines) and f < n_frames:
        line = lines[k]
        k += 1
        if not line.strip():
            continue
        vals = line.split()
        if len(vals) != n_ch:
            raise BVHParseError(f"frame {f}: expected {n_ch} values, found {len(vals)}", k)
        try:
            data[f] = [float(v) for v in vals]
        except ValueError:
            raise BVHParseError(f"frame {f}: non-numeric value", k) from None
        f += 1
    if f < n_frames:
        raise BVHParseError(f"expected {n_frames} frames, found {f}", k)
    for rest in lines[k:]:
        if rest.strip():
            raise BVHParseError("more frame lines than declared", k + 1)

    J = len(names)
    root_pos = np.tile(np.asarray(offsets[0], dtype=float), (n_frames, 1))
    root_rot = rot.identity((n_frames,))
    local_rot = rot.identity((n_frames, J - 1))
    col = 0
    for j, chans in enumerate(channels):
        block = data[:, col:col + len(chans)]
        col += len(chans)
        order = "".join(_ROT[c] for c in chans if c in _ROT)
        angles = np.stack([block[:, m] for m, c in enumerate(chans) if c in _ROT], -1) \
            if order else np.zeros((n_frames, 0))
        R = rot.euler_to_matrix(angles, order) if order else rot.identity((n_frames,))
        if j == 0:
            for m, c in enumerate(chans):
                if c in _POS:
                    root_pos[:, _POS[c]] += block[:, m]
            root_rot = R
        else:
            if any(c in _POS for c in chans):
                log.warning("position channels on joint %r are ignored", names[j])
            local_rot[:, j - 1] = R

    skel = Skeleton(names, parents, np.asarray(offsets) * scale,
                    end_sites={j: np.asarray(v) * scale for j, v in end_sites.items()})
    clip = MotionClip(skel, 1.0 / frame_time, root_pos * scale, root_rot, local_rot,
                      name=name, category=category)
    return skel, clip


def read_bvh(path, scale: float = 1.0, category: str = "other") -> tuple:
    from pathlib import Path
    p = Path(path)
    return parse_bvh(p.read_text(), scale=scale, name=p.stem, category=category)


def write_bvh(clip: MotionClip, scale: float = 1.0, order: str = "ZXY",
              precision: int = 9) -> str:
    """Emit BVH text. Root gets 6 channels, other joints 3 rotation channels."""
    sk = clip.skeleton
    J = len(sk)
    children = [[] for _ in range(J)]
    for j in range(1, J):
        children[sk.parents[j]].append(j)
    rot_chans = " ".join(f"{a}rotation" for a in order)
    out = ["HIERARCHY"]

    def fmt(v):
        return " ".join(f"{x / scale:.{precision}f}" for x in v)

    def emit(j, depth):
        ind = "  " * depth
        kw = "ROOT" if j == 0 else "JOINT"
        out.append(f"{ind}{kw} {sk.names[j]}")
        out.append(f"{ind}{{")
        off = sk.offsets[j]
        out.append(f"{ind}  OFFSET {fmt(off)}")
        if j == 0:
            out.append(f"{ind}  CHANNELS 6 Xposition Yposition Zposition {rot_chans}")
        else:
            out.append(f"{ind}  CHANNELS 3 {rot_chans}")
        for c in children[j]:
            emit(c, depth + 1)
        if not children[j]:
            es = sk.end_sites.get(j, np.zeros(3))
            out.append(f"{ind}  End Site")
            out.append(f"{ind}  {{")
            out.append(f"{ind}    OFFSET {fmt(es)}")
            out.append(f"{ind}  }}")
        out.append(f"{ind}}}")

    emit(0, 0)
    T = len(clip)
    out.append("MOTION")
    out.append(f"Frames: {T}")
    out.append(f"Frame Time: {1.0 / clip.fps:.10g}")
    # channels in depth-first order, which is the joint order for our skeletons
    dfs = []

    def walk(j):
        dfs.append(j)
        for c in children[j]:
            walk(c)
    walk(0)
    if dfs != list(range(J)):
        raise ValueError("skeleton joint order is not depth-first; cannot emit BVH")
    root_ch = (clip.root_pos - sk.offsets[0]) / scale
    eul_root = rot.matrix_to_euler(clip.root_rot, order)
    eul = rot.matrix_to_euler(clip.local_rot, order) if J > 1 else np.zeros((T, 0, 3))
    for t in range(T):
        vals = list(root_ch[t]) + list(eul_root[t])
        vals += list(eul[t].reshape(-1))
        out.append(" ".join(f"{v:.{precision}f}" for v in vals))
    return "\n".join(out) + "\n"
