"""Acceptance criteria; each test prints one ``criterion N: PASS|FAIL`` line.

Criterion 4 trains the full-size network for about ten minutes and is marked
``slow``; deselect with ``-m "not slow"``. Criterion 11 runs only when
``LOBSTR_CORPUS`` names a directory holding prepared ``train`` and ``test``
datasets.
"""

import os
import threading
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import pytest

from lobstr import rotation as rot
from lobstr.dataset import Dataset, build_dataset, clip_features, clip_to_data, load_dataset
from lobstr.features import (CONTACT_HEIGHT, WINDOW, TrackerStream, augment_noise, build_window,
                             label_contacts, synthesize_trackers, write_recording)
from lobstr.losses import LossWeights, lr_at, total_loss
from lobstr.metrics import positional_error, rotational_error
from lobstr.net import NetConfig, NetworkParams, forward, grad_check
from lobstr.postprocess import Blending, Free, IkConfig, Locked, blend_alpha, postprocess_step
from lobstr.runtime import Server, StreamSession, frame_vectors, replay, stream_to_server
from lobstr.skeleton import Pose, Transform, fk, static_clip
from lobstr.standard import standard_skeleton
from lobstr.synth import synthetic_walk
from lobstr.train import Sampler, TrainConfig, gradcheck_problem, train


@pytest.fixture
def criterion(capsys):
    @contextmanager
    def run(n, title):
        rec = {"detail": ""}
        t0 = time.perf_counter()
        error = None
        try:
            yield rec
        except BaseException as exc:
            error = exc
        status = "PASS" if error is None else "FAIL"
        why = ""
        if error is not None:
            msg = str(error).splitlines()[0] if str(error) else ""
            why = f"  [{type(error).__name__}: {msg}]"
        with capsys.disabled():
            print(f"\ncriterion {n:2d}: {status}  {title}: {rec['detail']} "
                  f"({time.perf_counter() - t0:.1f}s){why}", flush=True)
        if error is not None:
            raise error
    return run


# 1 ---------------------------------------------------------------------------

def test_c01_gradient_correctness(criterion):
    with criterion(1, "gradient check, hidden 16 latent 8 window 8") as rec:
        t0 = time.perf_counter()
        params, loss_fn = gradcheck_problem(hidden=16, latent=8, window=8)
        rep = grad_check(params, loss_fn, tolerance=1e-4)
        elapsed = time.perf_counter() - t0
        worst = max(rep["per_tensor"], key=rep["per_tensor"].get)
        rec["detail"] = (f"max rel error {rep['max_rel_error']:.2e} ({worst}) over "
                         f"{len(rep['per_tensor'])} tensors, {elapsed:.1f}s")
        assert len(rep["per_tensor"]) == len(list(params.items()))
        assert rep["max_rel_error"] < 1e-4
        assert elapsed < 60.0


# 2 ---------------------------------------------------------------------------

def test_c02_rigid_motion_invariance(criterion):
    with criterion(2, "yaw and ground-translation invariance, 100 clips") as rec:
        rng = np.random.default_rng(2)
        t0 = time.perf_counter()
        worst = 0.0
        for k in range(100):
            stream = synthesize_trackers(synthetic_walk(seconds=1.5, seed=100 + k))
            yaw = rng.uniform(-180.0, 180.0)
            t = np.array([rng.uniform(-20, 20), 0.0, rng.uniform(-20, 20)])
            i = int(rng.integers(WINDOW, len(stream)))
            a = build_window(stream, i)
            b = build_window(stream.transformed(rot.rot_y(yaw), t), i)
            worst = max(worst, float(np.abs(a - b).max()))
        elapsed = time.perf_counter() - t0
        rec["detail"] = f"max element deviation {worst:.2e}, {elapsed:.1f}s"
        assert worst < 1e-6
        assert elapsed < 30.0


# 3 ---------------------------------------------------------------------------

def test_c03_sixdof_round_trip(criterion):
    with criterion(3, "6-DoF round trip, 1e4 rotations") as rec:
        R = rot.random_rotations(10_000, np.random.default_rng(3))
        dev = float(np.abs(rot.sixdof_to_rot(rot.rot_to_6d(R)) - R).max())
        rec["detail"] = f"max matrix deviation {dev:.2e}"
        assert dev < 1e-9


# 4 ---------------------------------------------------------------------------

@pytest.mark.slow
def test_c04_overfit_one_clip(criterion, tmp_path):
    with criterion(4, "overfit full-size network on a 60 s walk") as rec:
        t0 = time.perf_counter()
        build_dataset([synthetic_walk(60.0, seed=0)], tmp_path / "ds", seed=0)
        ds = load_dataset(tmp_path / "ds")
        cfg = TrainConfig(epochs=300, batch_size=32, batches_per_epoch=2, lr=1e-3,
                          checkpoint_every=10**6)
        params, _ = train(ds, cfg, net_config=NetConfig())
        clip = ds.clips[0]
        feats = clip_features(clip)
        idx = np.arange(WINDOW, len(clip))
        pred = np.concatenate([
            forward(np.stack([feats[i - WINDOW + 1:i + 1] for i in idx[s:s + 256]]), params).pose.data
            for s in range(0, idx.size, 256)])
        r = rotational_error(pred, clip.targets[idx])
        p = positional_error(pred, clip.targets[idx], clip.root[idx], ds.skeleton)
        elapsed = time.perf_counter() - t0
        rec["detail"] = (f"rotational {r:.3f} deg, toe-base {p:.3f} cm after 300 epochs, "
                         f"{elapsed / 60:.1f} min")
        assert r < 3.0
        assert p < 2.0
        assert elapsed <= 30 * 60


# 5 ---------------------------------------------------------------------------

SK = standard_skeleton()


def scripted_pose(k):
    """Pelvis sways a few centimetres while both knees flex; toes stay near the floor."""
    rots = rot.identity((len(SK) - 1,))
    knee = 25.0 + 5.0 * np.sin(2 * np.pi * k / 97)
    for side in ("Left", "Right"):
        rots[SK.index(f"{side}UpLeg") - 1] = rot.rot_x(-knee / 2) @ rot.rot_z(2.0 * np.sin(k / 23))
        rots[SK.index(f"{side}Leg") - 1] = rot.rot_x(knee)
    root = (0.03 * np.sin(2 * np.pi * k / 150), 1.01, 0.02 * np.cos(2 * np.pi * k / 110))
    return Pose(Transform(rot.rot_y(3.0 * np.sin(k / 40)), root), rots)


def test_c05_ik_contact_preservation(criterion):
    with criterion(5, "IK lock/blend over 300 scripted frames") as rec:
        cfg = IkConfig()
        contact = np.zeros(300, dtype=bool)
        contact[20:90] = contact[160:230] = True
        states = (Free(), Free())
        lock_dev, blends, post_dev, endpoint_dev = [], [], 0.0, 0.0
        run, target = [], None
        for k in range(300):
            raw = scripted_pose(k)
            out, states, info = postprocess_step(SK, raw, (contact[k], False), states, cfg)
            left = states[0]
            toe = fk(SK, out)[SK.toe_base[0]].position
            if isinstance(left, Locked):
                target = target if target is not None else np.array(left.target)
                lock_dev.append(np.linalg.norm(toe - target))
            else:
                target = None
            if info.alphas[0] is not None:
                run.append(info.alphas[0])
            elif run:
                blends.append(run)
                run = []
            if isinstance(left, Free) and not contact[k] and info.alphas[0] is None:
                post_dev = max(post_dev, float(np.abs(out.rotations - raw.rotations).max()),
                               float(np.abs(out.root.position - raw.root.position).max()))
            if info.alphas[0] == 1.0:
                endpoint_dev = max(endpoint_dev, float(np.abs(out.rotations - raw.rotations).max()))
            # the right foot never locks and is left untouched
            for j in SK.leg_chain(1)[:-1]:
                np.testing.assert_array_equal(out.rotations[j - 1], raw.rotations[j - 1])
        rec["detail"] = (f"max locked displacement {1e3 * max(lock_dev):.3f} mm over "
                         f"{len(lock_dev)} frames, blends {[len(b) for b in blends]}, "
                         f"post-blend deviation {max(post_dev, endpoint_dev):.1e}")
        assert len(lock_dev) == 140
        assert max(lock_dev) < 1.1e-3
        assert len(blends) == 2
        for b in blends:
            assert len(b) == cfg.blend_frames == 10
            np.testing.assert_allclose(b, [blend_alpha(s / 10) for s in range(1, 11)], rtol=0, atol=0)
            assert b[-1] == 1.0
        assert blend_alpha(0.0) == 0.0 and blend_alpha(1.0) == 1.0
        assert post_dev <= 1e-9 and endpoint_dev <= 1e-9
        assert not isinstance(states[0], (Locked, Blending))


# 6 ---------------------------------------------------------------------------

def test_c06_realtime_budget(criterion):
    with criterion(6, "full-size single-frame step, 1000 frames") as rec:
        params = NetworkParams.init(NetConfig(), seed=0)
        params.fast()
        session = StreamSession(params)
        vecs = frame_vectors(synthesize_trackers(synthetic_walk(25.0, seed=6)).frames())
        lat = []
        for k, v in enumerate(vecs[:1046 + 20]):
            t0 = time.perf_counter()
            res = session.step_vector(v, k)
            dt = time.perf_counter() - t0
            if res.status == "ok" and k >= 1046 + 20 - 1000:
                lat.append(1e3 * dt)
        lat = np.array(lat)
        p50, p99 = np.percentile(lat, [50, 99])
        rec["detail"] = (f"p50 {p50:.2f} ms, p99 {p99:.2f} ms, max {lat.max():.2f} ms "
                         f"over {lat.size} frames (budget 22 ms)")
        assert lat.size == 1000
        assert p99 < 22.0


# 7 ---------------------------------------------------------------------------

def test_c07_loss_arithmetic(criterion):
    with criterion(7, "weighted loss and learning-rate schedule") as rec:
        ones = dict.fromkeys(("pose", "fk", "velocity", "contact_left", "contact_right"), 1.0)
        total = total_loss(ones, LossWeights())
        err = max(abs(lr_at(e) - 1e-3 * 0.999 ** e) for e in range(1500))
        rec["detail"] = f"total {total!r}, max lr deviation {err:.1e} over 1500 epochs"
        assert total == 1.200001
        assert err <= 1e-15


# 8 ---------------------------------------------------------------------------

def test_c08_sampling_law(criterion):
    with criterion(8, "clip selection frequencies, 1e5 draws") as rec:
        sizes = (100, 300, 600)
        clips = [clip_to_data(synthetic_walk(n / 45.0, seed=k), noise_seed=k)
                 for k, n in enumerate(sizes)]
        assert [len(c) for c in clips] == list(sizes)
        sampler = Sampler(Dataset(SK, clips, {}))
        rng = np.random.default_rng(8)
        counts = np.zeros(3)
        shapes = set()
        bad_index = 0
        for _ in range(1000):
            ci, fi = sampler.draw(rng, 100)
            counts += np.bincount(ci, minlength=3)
            bad_index += int(np.sum((fi < WINDOW) | (fi >= np.array(sizes)[ci])))
            shapes.add(sampler.batch(ci, fi).window.shape[1:])
        N = counts.sum()
        p = np.array(sizes) / sum(sizes)
        z = (counts - N * p) / np.sqrt(N * p * (1 - p))
        rec["detail"] = (f"frequencies {np.round(counts / N, 4).tolist()} vs {np.round(p, 4).tolist()}, "
                         f"max |z| {np.abs(z).max():.2f}, chunk shapes {sorted(shapes)}")
        assert N == 100_000
        assert np.all(np.abs(z) < 3.0)
        assert shapes == {(45, 37)}
        assert bad_index == 0


# 9 ---------------------------------------------------------------------------

def test_c09_transport_equivalence(criterion, tmp_path):
    with criterion(9, "socket output vs offline replay") as rec:
        params = NetworkParams.init(NetConfig(hidden=128, latent=32), seed=9)
        frames = synthesize_trackers(synthetic_walk(4.0, seed=9)).frames()
        write_recording(frames, tmp_path / "rec.jsonl")
        offline = replay(tmp_path / "rec.jsonl", StreamSession(params))
        srv = Server(("127.0.0.1", 0), lambda: StreamSession(params))
        th = threading.Thread(target=srv.serve_forever, daemon=True)
        th.start()
        try:
            online = stream_to_server(("127.0.0.1", srv.port), frame_vectors(frames))
        finally:
            srv.shutdown()
            th.join(5)
        ok = [o for o in online if o["status"] == "ok"]
        same = sum(o["pose"].tobytes() == r.pose.tobytes()
                   and o["contact_prob"].tobytes() == r.contact_prob.tobytes()
                   and tuple(o["contact"]) == tuple(r.contact)
                   for o, r in zip(ok, offline))
        rec["detail"] = f"{same}/{len(offline)} frames bit-identical ({len(online)} responses)"
        assert len(online) == len(frames)
        assert len(ok) == len(offline) == len(frames) - WINDOW
        assert same == len(offline)


# 10 --------------------------------------------------------------------------

def test_c10_labels_and_augmentation(criterion):
    with criterion(10, "contact threshold and tracker noise statistics") as rec:
        clip = static_clip(SK, 4)
        pos = clip.root_pos.copy()
        pos[:, 1] = 1.0 + np.array([0.0, CONTACT_HEIGHT - 1e-9, CONTACT_HEIGHT, CONTACT_HEIGHT + 1e-9])
        labels = label_contacts(clip.with_arrays(root_pos=pos))
        # toe-base of the rest pose sits at height 0
        assert CONTACT_HEIGHT == 0.01
        np.testing.assert_array_equal(labels, [[1, 1], [1, 1], [0, 0], [0, 0]])

        T, sigma = 25_000, 0.01
        clean = TrackerStream(np.zeros((T, 4, 3)), rot.identity((T, 4)), np.arange(T) / 45.0)
        noisy = augment_noise(clean, seed=10, sigma=sigma, max_angle_deg=1.5)
        ang = np.degrees(rot.geodesic_angle(noisy.rot, clean.rot)).ravel()
        m2 = np.sum((noisy.pos - clean.pos) ** 2, axis=-1).ravel()
        n = m2.size
        z = (m2.mean() - sigma ** 2) / (np.sqrt(2.0) * sigma ** 2 / np.sqrt(n))
        rec["detail"] = (f"labels flip at {CONTACT_HEIGHT} m, max rotation noise {ang.max():.4f} deg, "
                         f"E[m^2] {m2.mean():.4e} vs {sigma ** 2:.1e} (z {z:.2f}, n {n})")
        assert n == 100_000
        assert ang.max() <= 1.5
        assert abs(z) < 3.0


# 11 --------------------------------------------------------------------------

def test_c11_full_corpus(criterion, tmp_path):
    root = os.environ.get("LOBSTR_CORPUS")
    if not root or not (Path(root) / "train").is_dir() or not (Path(root) / "test").is_dir():
        pytest.skip("LOBSTR_CORPUS with prepared train/ and test/ datasets not supplied")
    from lobstr.evaluate import build_report, evaluate_dataset
    with criterion(11, "full corpus, 1500 epochs") as rec:
        params, _ = train(load_dataset(Path(root) / "train"), TrainConfig(), tmp_path)
        total = build_report(evaluate_dataset(load_dataset(Path(root) / "test"), params)).total
        rec["detail"] = (f"contact accuracy {100 * total.contact_accuracy:.2f}%, rotational "
                         f"{total.rotational_error_deg:.2f} deg, positional {total.positional_error_cm:.2f} cm")
        assert total.contact_accuracy >= 0.80
        assert total.rotational_error_deg <= 12.0
        assert total.positional_error_cm <= 10.0
