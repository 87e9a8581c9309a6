"""GRU encoder with pose and contact heads.

Parameters use the row-vector convention ``y = x @ W + b``. Gate equations::

    z  = sigmoid(x W_z + h U_z + b_z)
    r  = sigmoid(x W_r + h U_r + b_r)
    h~ = tanh(x W_h + (r * h) U_h + b_h)
    h' = (1 - z) * h + z * h~
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

MAGIC = b"LBSTCKPT"
FORMAT_VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


@dataclass(frozen=True)
class NetConfig:
    input_dim: int = 37
    hidden: int = 1024
    latent: int = 128
    pose_dim: int = 48
    contact_dim: int = 4

    def shapes(self) -> dict:
        I, H, L = self.input_dim, self.hidden, self.latent
        s = {}
        for g in "zrh":
            s[f"gru.W_{g}"] = (I, H)
            s[f"gru.U_{g}"] = (H, H)
            s[f"gru.b_{g}"] = (H,)
        s.update({
            "latent.W": (H, L), "latent.b": (L,),
            "pose.W": (L, self.pose_dim), "pose.b": (self.pose_dim,),
            "contact.W": (L, self.contact_dim), "contact.b": (self.contact_dim,),
        })
        return s

    def fan_in(self, name) -> int:
        if name.startswith("gru.W"):
            return self.input_dim
        if name.startswith("gru.") or name.startswith("latent."):
            return self.hidden
        return self.latent


class NonFiniteError(FloatingPointError):
    pass


class CheckpointError(ValueError):
    pass


class NetworkParams:
    """Named parameter tensors with gradient slots."""

    def __init__(self, config: NetConfig, tensors: dict):
        self.config = config
        shapes = config.shapes()
        if set(tensors) != set(shapes):
            raise CheckpointError(f"parameter names differ from config: "
                                  f"{sorted(set(tensors) ^ set(shapes))}")
        for name, shape in shapes.items():
            if tuple(np.shape(tensors[name].data)) != shape:
                raise CheckpointError(f"tensor {name!r} has shape {tensors[name].shape}, "
                                      f"expected {shape}")
        self.tensors = {k: tensors[k] for k in shapes}
        self._fast = None

    @classmethod
    def init(cls, config: NetConfig = NetConfig(), seed: int = 0) -> "NetworkParams":
        rng = np.random.default_rng(seed)
        tensors = {}
        for name, shape in config.shapes().items():
            bound = 1.0 / np.sqrt(config.fan_in(name))
            tensors[name] = Tensor(rng.uniform(-bound, bound, shape), requires_grad=True, name=name)
        return cls(config, tensors)

    @classmethod
    def zeros(cls, config: NetConfig = NetConfig()) -> "NetworkParams":
        return cls(config, {n: Tensor(np.zeros(s), requires_grad=True, name=n)
                            for n, s in config.shapes().items()})

    def __getitem__(self, name) -> Tensor:
        return self.tensors[name]

    def items(self):
        return self.tensors.items()

    def zero_grad(self):
        for t in self.tensors.values():
            t.grad = None

    def count(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def check_finite(self):
        for name, t in self.tensors.items():
            if not np.all(np.isfinite(t.data)):
                raise NonFiniteError(f"parameter {name!r} contains non-finite values")

    def copy(self) -> "NetworkParams":
        return NetworkParams(self.config, {k: Tensor(v.data.copy(), True, k)
                                           for k, v in self.tensors.items()})

    def invalidate(self):
        """Drop cached inference arrays after an in-place parameter update."""
        self._fast = None

    def fast(self):
        if self._fast is None:
            self.check_finite()
            self._fast = FastNet(self)
        return self._fast


@dataclass
class NetworkOutput:
    pose: object      # (..., 48)
    contact: object   # (..., 4) logits, per foot [no-contact, contact]

    def contact_probs(self) -> np.ndarray:
        logits = self.contact.data if isinstance(self.contact, Tensor) else self.contact
        return contact_probabilities(logits)


def contact_probabilities(logits) -> np.ndarray:
    """Per-foot 2-class softmax over ``[l0, l1, r0, r1]`` logits."""
    z = np.asarray(logits, dtype=np.float64)
    return ad.softmax_np(z.reshape(z.shape[:-1] + (2, 2)), axis=-1).reshape(z.shape)


def gru_cell(x, h, params: NetworkParams) -> Tensor:
    p = params
    z = ad.sigmoid(x @ p["gru.W_z"] + h @ p["gru.U_z"] + p["gru.b_z"])
    r = ad.sigmoid(x @ p["gru.W_r"] + h @ p["gru.U_r"] + p["gru.b_r"])
    cand = ad.tanh(x @ p["gru.W_h"] + (r * h) @ p["gru.U_h"] + p["gru.b_h"])
    return h + z * (cand - h)


def gru_sequence(window, params: NetworkParams) -> Tensor:
    """Final hidden state after running the GRU over ``window`` (B, T, I) from zero.

    One tape node for the whole recurrence; the backward pass walks the
    steps in reverse (BPTT) and forms the weight gradients with one matmul
    per weight over all steps.
    """
    X = ad.as_tensor(window)
    p = params
    H = params.config.hidden
    xs = np.moveaxis(X.data, -2, 0)                      # (T, B, I)
    T = xs.shape[0]
    W = np.concatenate([p["gru.W_z"].data, p["gru.W_r"].data, p["gru.W_h"].data], axis=1)
    b = np.concatenate([p["gru.b_z"].data, p["gru.b_r"].data, p["gru.b_h"].data])
    U_zr = np.concatenate([p["gru.U_z"].data, p["gru.U_r"].data], axis=1)
    U_h = p["gru.U_h"].data
    gx = xs @ W + b                                      # (T, B, 3H)
    lead = xs.shape[1:-1]
    hs = np.empty((T,) + lead + (H,))
    zs, rs, cs = np.empty_like(hs), np.empty_like(hs), np.empty_like(hs)
    h = np.zeros(lead + (H,))
    for t in range(T):
        hs[t] = h
        zr = 0.5 * (np.tanh(0.5 * (gx[t, ..., :2 * H] + h @ U_zr)) + 1.0)
        zs[t], rs[t] = zr[..., :H], zr[..., H:]
        cs[t] = np.tanh(gx[t, ..., 2 * H:] + (rs[t] * h) @ U_h)
        h = h + zs[t] * (cs[t] - h)

    def back(g):
        dA = np.empty(gx.shape)
        dh = g
        U_zrT, U_hT = U_zr.T, U_h.T
        for t in range(T - 1, -1, -1):
            hp, z, r, c = hs[t], zs[t], rs[t], cs[t]
            da_c = dh * z * (1.0 - c * c)
            d_rh = da_c @ U_hT
            da_z = dh * (c - hp) * z * (1.0 - z)
            da_r = d_rh * hp * r * (1.0 - r)
            dA[t, ..., :H], dA[t, ..., H:2 * H], dA[t, ..., 2 * H:] = da_z, da_r, da_c
            dh = dh * (1.0 - z) + d_rh * r + dA[t, ..., :2 * H] @ U_zrT
        flat = lambda a: a.reshape(-1, a.shape[-1])
        dA2 = flat(dA)
        dW = flat(xs).T @ dA2
        dU_zr = flat(hs).T @ flat(dA[..., :2 * H])
        dU_h = flat(rs * hs).T @ flat(dA[..., 2 * H:])
        db = dA2.sum(axis=0)
        dX = np.moveaxis(dA @ W.T, 0, -2) if X.requires_grad else None
        return (dW[:, :H], dW[:, H:2 * H], dW[:, 2 * H:], dU_zr[:, :H], dU_zr[:, H:], dU_h,
                db[:H], db[H:2 * H], db[2 * H:], dX)

    parents = tuple(p[k] for k in ("gru.W_z", "gru.W_r", "gru.W_h", "gru.U_z", "gru.U_r",
                                   "gru.U_h", "gru.b_z", "gru.b_r", "gru.b_h")) + (X,)
    return ad._record(h, parents, back)


def encode(window, params: NetworkParams) -> Tensor:
    """Run the GRU over ``window`` (..., T, input_dim) from a zero state; ReLU latent."""
    X = ad.as_tensor(window)
    cfg = params.config
    if X.shape[-1] != cfg.input_dim:
        raise ValueError(f"window has {X.shape[-1]} features, expected {cfg.input_dim}")
    h = gru_sequence(X, params)
    return ad.relu(h @ params["latent.W"] + params["latent.b"])


def encode_stepwise(window, params: NetworkParams) -> Tensor:
    """Same as :func:`encode` but recorded cell by cell from primitive ops."""
    X = ad.as_tensor(window)
    cfg = params.config
    if X.shape[-1] != cfg.input_dim:
        raise ValueError(f"window has {X.shape[-1]} features, expected {cfg.input_dim}")
    h = Tensor(np.zeros(X.shape[:-2] + (cfg.hidden,)))
    for t in range(X.shape[-2]):
        h = gru_cell(X[..., t, :], h, params)
    return ad.relu(h @ params["latent.W"] + params["latent.b"])


def forward(window, params: NetworkParams, encoder=encode) -> NetworkOutput:
    params.check_finite()
    w = np.asarray(window.data if isinstance(window, Tensor) else window)
    if w.ndim < 2:
        raise ValueError("window must have shape (..., T, features)")
    latent = encoder(window, params)
    pose = latent @ params["pose.W"] + params["pose.b"]
    contact = latent @ params["contact.W"] + params["contact.b"]
    return NetworkOutput(pose, contact)


class FastNet:
    """Tape-free float32 inference for a single window."""

    def __init__(self, params: NetworkParams, dtype=np.float32):
        t = {k: v.data for k, v in params.items()}
        c = lambda a: np.ascontiguousarray(a, dtype=dtype)
        self.H = params.config.hidden
        self.W = c(np.concatenate([t["gru.W_z"], t["gru.W_r"], t["gru.W_h"]], axis=1))
        self.b = c(np.concatenate([t["gru.b_z"], t["gru.b_r"], t["gru.b_h"]]))
        self.U_zr = c(np.concatenate([t["gru.U_z"], t["gru.U_r"]], axis=1))
        self.U_h = c(t["gru.U_h"])
        self.L_W, self.L_b = c(t["latent.W"]), c(t["latent.b"])
        self.P_W, self.P_b = c(t["pose.W"]), c(t["pose.b"])
        self.C_W, self.C_b = c(t["contact.W"]), c(t["contact.b"])
        self.dtype = dtype

    def __call__(self, window) -> NetworkOutput:
        H = self.H
        gx = np.asarray(window, dtype=self.dtype) @ self.W + self.b
        h = np.zeros(H, dtype=self.dtype)
        for t in range(gx.shape[0]):
            zr = gx[t, :2 * H] + h @ self.U_zr
            zr = 0.5 * (np.tanh(0.5 * zr) + 1.0)
            z, r = zr[:H], zr[H:]
            cand = np.tanh(gx[t, 2 * H:] + (r * h) @ self.U_h)
            h = h + z * (cand - h)
        latent = np.maximum(h @ self.L_W + self.L_b, 0.0)
        return NetworkOutput(latent @ self.P_W + self.P_b, latent @ self.C_W + self.C_b)


# -- gradient checking ------------------------------------------------------

def grad_check(params: NetworkParams, loss_fn, tolerance=1e-4, eps=1e-4,
               max_entries=None, seed=0) -> dict:
    """Compare tape gradients of ``loss_fn(params) -> Tensor`` to central differences.

    Relative error per tensor is ``max|a - n| / max(max|a|, max|n|)`` over
    the checked entries. ``max_entries`` samples entries of large tensors.
    """
    params.zero_grad()
    with ad.Tape() as tape:
        loss = loss_fn(params)
        tape.backward(loss)
    rng = np.random.default_rng(seed)
    report = {}
    for name, t in params.items():
        analytic = np.zeros(t.shape) if t.grad is None else t.grad.copy()
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(rng.choice(flat.size, max_entries, replace=False))
        num = np.empty(idx.size)
        for m, k in enumerate(idx):
            old = flat[k]
            flat[k] = old + eps
            lp = loss_fn(params).item()
            flat[k] = old - eps
            lm = loss_fn(params).item()
            flat[k] = old
            num[m] = (lp - lm) / (2 * eps)
        a = analytic.reshape(-1)[idx]
        scale = max(np.max(np.abs(a)), np.max(np.abs(num)), 1e-300)
        report[name] = float(np.max(np.abs(a - num)) / scale)
    params.zero_grad()
    params.invalidate()
    worst = max(report.values())
    return {"per_tensor": report, "max_rel_error": worst, "tolerance": tolerance,
            "passed": bool(worst < tolerance)}


# -- checkpoints ------------------------------------------------------------

def save_params(params: NetworkParams, path, dtype="f32", meta=None):
    """Write a checkpoint: magic, version, JSON metadata, then a named tensor table."""
    code = {"f32": 0, "f64": 1}[dtype]
    meta = dict(meta or {})
    meta["config"] = asdict(params.config)
    mblob = json.dumps(meta, sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<HI", FORMAT_VERSION, len(mblob)), mblob,
             struct.pack("<I", len(params.tensors))]
    for name, t in params.items():
        nb = name.encode()
        parts.append(struct.pack("<H", len(nb)) + nb)
        parts.append(struct.pack("<BB", code, t.ndim) + struct.pack(f"<{t.ndim}I", *t.shape))
        parts.append(np.ascontiguousarray(t.data, dtype=_DTYPES[code]).tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_params(path, config: NetConfig = None):
    """Read a checkpoint; returns ``(params, meta)``."""
    buf = Path(path).read_bytes()
    if buf[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: bad magic; not a checkpoint of this format/version")
    off = len(MAGIC)

    def take(n):
        nonlocal off
        if off + n > len(buf):
            raise CheckpointError(f"{path}: truncated file")
        b = buf[off:off + n]
        off += n
        return b
    version, mlen = struct.unpack("<HI", take(6))
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    meta = json.loads(take(mlen))
    file_cfg = NetConfig(**meta["config"])
    cfg = config or file_cfg
    expected = cfg.shapes()
    (n,) = struct.unpack("<I", take(4))
    tensors = {}
    for _ in range(n):
        (nl,) = struct.unpack("<H", take(2))
        name = take(nl).decode()
        code, nd = struct.unpack("<BB", take(2))
        if code not in _DTYPES:
            raise CheckpointError(f"{path}: tensor {name!r} has unknown dtype code {code}")
        shape = struct.unpack(f"<{nd}I", take(4 * nd))
        if name in expected and tuple(shape) != expected[name]:
            raise CheckpointError(f"tensor {name!r}: checkpoint shape {shape} does not match "
                                  f"configured shape {expected[name]}")
        dt = _DTYPES[code]
        count = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(take(count * dt.itemsize), dtype=dt).reshape(shape)
        tensors[name] = Tensor(data.astype(np.float64), requires_grad=True, name=name)
    if off != len(buf):
        raise CheckpointError(f"{path}: trailing bytes after tensor table")
    return NetworkParams(cfg, tensors), meta
