"""Synthetic test-data generators: GPMF payloads, minimal MP4 recordings,
drift-and-loop-closure event logs, and trajectory/tag files.

Used by the test suite and exposed through the `fixtures` CLI subcommand
so users can exercise every pipeline without a real recording.
"""

import numpy as np

from . import mp4
from .geometry import RigidTransform, rotation_about_z, matrix_to_quat
from .gpmf import make_container, make_leaf, write_klv


def gpmf_payload(accel_raw=None, gyro_raw=None, shutter=None,
                 accel_scale=418, gyro_scale=939, extra_streams=()):
    """One DEVC payload holding the requested sensor streams.

    Raw values are int32; SCAL divisors convert them to physical units on
    extraction. Shutter exposures are float32 seconds.
    """
    streams = []
    if accel_raw is not None:
        streams.append(make_container("STRM", [
            make_leaf("SCAL", "l", [accel_scale]),
            make_leaf("SIUN", "c", "m/s2"),
            make_leaf("ACCL", "l", np.asarray(accel_raw).reshape(-1, 3), channels=3),
        ]))
    if gyro_raw is not None:
        streams.append(make_container("STRM", [
            make_leaf("SCAL", "l", [gyro_scale]),
            make_leaf("SIUN", "c", "rad/s"),
            make_leaf("GYRO", "l", np.asarray(gyro_raw).reshape(-1, 3), channels=3),
        ]))
    if shutter is not None:
        streams.append(make_container("STRM", [
            make_leaf("SHUT", "f", np.asarray(shutter).reshape(-1, 1), channels=1),
        ]))
    streams.extend(extra_streams)
    devc = make_container("DEVC", streams)
    return write_klv([devc])


def fixture_mp4(path, n_payloads=10, accel_count=202, gyro_count=202,
                shut_count=30, timescale=1000, tick_duration=1010, seed=0):
    """A minimal GoPro-like MP4: one stub video track plus a `gpmd` track
    whose payloads follow the ~1.01 s cadence of a 29.97 Hz recording."""
    rng = np.random.default_rng(seed)
    payloads = []
    for _ in range(n_payloads):
        accel = rng.integers(-2000, 2000, size=(accel_count, 3))
        gyro = rng.integers(-2000, 2000, size=(gyro_count, 3))
        shutter = np.full(shut_count, 1.0 / 120.0, dtype=np.float32)
        payloads.append(gpmf_payload(accel_raw=accel, gyro_raw=gyro,
                                     shutter=shutter))
    mp4.write_fixture_mp4(path, payloads, timescale=timescale,
                          durations=[tick_duration] * n_payloads)
    return path


def drift_loop_scene(n_keyframes=50, n_landmarks=200, radius=5.0,
                     z_drift=0.5, obs_per_landmark=4, seed=0):
    """Synthetic loop trajectory with injected linear z-drift.

    Returns (drifted_poses, true_poses, observations) where observations
    are tuples (landmark_id, keyframe_id, observed_world_position, quality,
    color, pixel) in the drifted VIO frame, and the true landmark world
    positions as a (n_landmarks, 3) array.
    """
    rng = np.random.default_rng(seed)
    angles = np.linspace(0, 2 * np.pi, n_keyframes, endpoint=False)
    true_poses = {}
    drifted_poses = {}
    for k, ang in enumerate(angles):
        pos = np.array([radius * np.cos(ang), radius * np.sin(ang), 0.0])
        R = rotation_about_z(ang)
        true_poses[k] = RigidTransform.from_matrix(R, pos)
        drift = np.array([0.0, 0.0, z_drift * k / max(n_keyframes - 1, 1)])
        drifted_poses[k] = RigidTransform.from_matrix(R, pos + drift)

    landmarks = rng.uniform(-1, 1, size=(n_landmarks, 3))
    landmarks[:, 0:2] *= radius * 1.2
    landmarks[:, 2] *= 0.5

    observations = []
    for lm in range(n_landmarks):
        kfs = rng.choice(n_keyframes, size=min(obs_per_landmark, n_keyframes),
                         replace=False)
        for kf in kfs:
            # the camera-frame observation is drift-free; VIO reports it in
            # its own (drifted) world frame
            p_f = true_poses[kf].inverse().apply(landmarks[lm])
            p_w_vio = drifted_poses[kf].apply(p_f)
            quality = float(rng.uniform(0.2, 1.0))
            color = rng.integers(0, 256, size=3)
            pixel = rng.integers(0, 1920, size=2)
            observations.append((lm, int(kf), p_w_vio, quality, color, pixel))
    return drifted_poses, true_poses, observations, landmarks


def _pose_fields(pose):
    t = pose.t
    q = pose.q
    return (f"{t[0]:.12g} {t[1]:.12g} {t[2]:.12g} "
            f"{q[0]:.12g} {q[1]:.12g} {q[2]:.12g} {q[3]:.12g}")


def write_drift_loop_log(path, include_correction=True, **kwargs):
    """Event log reproducing a drifted loop plus its loop-closure update."""
    drifted, true_poses, observations, _ = drift_loop_scene(**kwargs)
    with open(path, "w") as f:
        for kf, pose in drifted.items():
            f.write(f"KF {kf} {_pose_fields(pose)}\n")
        for lm, kf, p_w, q, color, pixel in observations:
            f.write(f"OBS {lm} {kf} {p_w[0]:.12g} {p_w[1]:.12g} {p_w[2]:.12g} "
                    f"{q:.6g} {color[0]} {color[1]} {color[2]} "
                    f"{pixel[0]} {pixel[1]}\n")
        if include_correction:
            for kf, pose in true_poses.items():
                f.write(f"UPD {kf} {_pose_fields(pose)}\n")
    return path


def circle_trajectory(n=200, radius=5.0, period=60.0, z=0.0):
    """TUM-style circular trajectory arrays (t, positions, quats)."""
    t = np.linspace(0, period, n, endpoint=False)
    ang = 2 * np.pi * t / period
    pos = np.column_stack([radius * np.cos(ang), radius * np.sin(ang),
                           np.full(n, z)])
    quats = np.array([matrix_to_quat(rotation_about_z(a)) for a in ang])
    return t, pos, quats


def structured_scene(n_points=60_000, extent=20.0, seed=0):
    """Random samples of a structured terrain-with-blocks surface.

    Gives FPFH something to latch onto: smooth undulating ground plus a few
    box-shaped protrusions.
    """
    rng = np.random.default_rng(seed)
    xy = rng.uniform(0, extent, size=(n_points, 2))
    z = (0.6 * np.sin(xy[:, 0] * 0.9) + 0.4 * np.cos(xy[:, 1] * 1.3)
         + 0.25 * np.sin(xy[:, 0] * 2.1 + xy[:, 1] * 1.7))
    pts = np.column_stack([xy, z])
    # box-shaped protrusions with vertical walls
    boxes = [(3.0, 4.0, 2.5, 1.5), (12.0, 7.5, 3.0, 2.0),
             (7.0, 14.0, 2.0, 1.2), (16.0, 16.0, 2.8, 1.8)]
    extra = []
    for bx, by, size, height in boxes:
        inside = (np.abs(pts[:, 0] - bx) < size / 2) & \
                 (np.abs(pts[:, 1] - by) < size / 2)
        pts[inside, 2] += height
        n_wall = n_points // 40
        side = rng.integers(0, 4, size=n_wall)
        along = rng.uniform(-size / 2, size / 2, size=n_wall)
        up = rng.uniform(0, height, size=n_wall)
        wx = np.where(side < 2, bx + np.where(side == 0, -size / 2, size / 2),
                      bx + along)
        wy = np.where(side < 2, by + along,
                      by + np.where(side == 2, -size / 2, size / 2))
        base = (0.6 * np.sin(wx * 0.9) + 0.4 * np.cos(wy * 1.3)
                + 0.25 * np.sin(wx * 2.1 + wy * 1.7))
        extra.append(np.column_stack([wx, wy, base + up]))
    return np.vstack([pts] + extra)
