"""Trajectory accuracy tooling: timestamp association, Umeyama Sim(3)
alignment, ATE RMSE, and fiducial-tag displacement statistics.

Trajectories use the TUM plain-text format: one pose per line
``t tx ty tz qx qy qz qw``, `#` comments allowed.
"""

from dataclasses import dataclass

import numpy as np

from .errors import (DegenerateConfiguration, EmptyPairs, InputError,
                     InsufficientDetections, NoMatches)
from .geometry import Sim3Transform, quat_normalize, quat_slerp, quat_to_matrix

DEFAULT_MAX_DT = 0.020  # half the 60 Hz frame interval


@dataclass
class Trajectory:
    t: np.ndarray          # (n,) strictly increasing seconds
    positions: np.ndarray  # (n, 3)
    quats: np.ndarray      # (n, 4), (x, y, z, w), unit norm

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.positions = np.asarray(self.positions, dtype=float)
        self.quats = np.asarray(self.quats, dtype=float)
        if len(self.t) and np.any(np.diff(self.t) <= 0):
            raise InputError("trajectory timestamps must be strictly increasing")

    def __len__(self):
        return len(self.t)


def load_tum(path):
    t, pos, quats = [], [], []
    with open(path) as f:
        for line_no, line in enumerate(f, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            fields = text.split()
            if len(fields) != 8:
                raise InputError(f"{path}:{line_no}: expected 8 fields, got {len(fields)}")
            vals = [float(v) for v in fields]
            t.append(vals[0])
            pos.append(vals[1:4])
            quats.append(quat_normalize(vals[4:8]))
    return Trajectory(t=np.array(t), positions=np.array(pos).reshape(-1, 3),
                      quats=np.array(quats).reshape(-1, 4))


def save_tum(traj, path):
    with open(path, "w") as f:
        f.write("# t tx ty tz qx qy qz qw\n")
        for t, p, q in zip(traj.t, traj.positions, traj.quats):
            f.write(f"{t:.9f} {p[0]:.9f} {p[1]:.9f} {p[2]:.9f} "
                    f"{q[0]:.9f} {q[1]:.9f} {q[2]:.9f} {q[3]:.9f}\n")


def associate(t_a, t_b, max_dt=DEFAULT_MAX_DT):
    """Greedy nearest-timestamp matching; each pose used at most once.

    Returns index pairs (i, j) with |t_a[i] - t_b[j]| <= max_dt, sorted
    by i.
    """
    t_a = np.asarray(t_a, dtype=float)
    t_b = np.asarray(t_b, dtype=float)
    if len(t_a) == 0 or len(t_b) == 0:
        raise NoMatches("empty trajectory")
    candidates = []
    for i, ta in enumerate(t_a):
        j = int(np.searchsorted(t_b, ta))
        for jj in (j - 1, j):
            if 0 <= jj < len(t_b):
                dt = abs(ta - t_b[jj])
                if dt <= max_dt:
                    candidates.append((dt, i, jj))
    candidates.sort()
    used_a, used_b = set(), set()
    pairs = []
    for _, i, j in candidates:
        if i in used_a or j in used_b:
            continue
        used_a.add(i)
        used_b.add(j)
        pairs.append((i, j))
    if not pairs:
        raise NoMatches(f"no timestamp pairs within {max_dt} s")
    pairs.sort()
    return pairs


def umeyama_sim3(source, target, fix_scale=False):
    """Closed-form least-squares similarity transform.

    Minimizes sum ||target_i - (s R source_i + t)||^2 over Sim(3); with
    ``fix_scale`` the scale is frozen at 1 (SE(3) mode).
    """
    src = np.asarray(source, dtype=float).reshape(-1, 3)
    dst = np.asarray(target, dtype=float).reshape(-1, 3)
    n = len(src)
    if n < 3 or len(dst) != n:
        raise DegenerateConfiguration(f"need >= 3 point pairs, got {n}")
    mu_s = src.mean(axis=0)
    mu_d = dst.mean(axis=0)
    ds = src - mu_s
    dd = dst - mu_d
    cov = dd.T @ ds / n
    var_s = np.mean(np.sum(ds * ds, axis=1))
    U, D, Vt = np.linalg.svd(cov)
    if var_s < 1e-24 or D[1] <= max(D[0] * 1e-9, 1e-24):
        raise DegenerateConfiguration("points are coincident or collinear")
    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2, 2] = -1.0
    R = U @ S @ Vt
    s = 1.0 if fix_scale else float(np.trace(np.diag(D) @ S) / var_s)
    t = mu_d - s * (R @ mu_s)
    return Sim3Transform(s=s, R=R, t=t)


def ate_rmse(reference, estimated, transform=None):
    """Root mean squared position error after applying ``transform`` to
    the estimated positions."""
    ref = np.asarray(reference, dtype=float).reshape(-1, 3)
    est = np.asarray(estimated, dtype=float).reshape(-1, 3)
    if len(ref) == 0 or len(ref) != len(est):
        raise EmptyPairs("need at least one matched pair")
    if transform is not None:
        est = transform.apply(est)
    residuals = ref - est
    return float(np.sqrt(np.mean(np.sum(residuals * residuals, axis=1))))


def evaluate_ate(traj_ref, traj_est, max_dt=DEFAULT_MAX_DT, fix_scale=False):
    """Associate, align, and score two trajectories.

    Returns (ate, transform, n_pairs).
    """
    pairs = associate(traj_ref.t, traj_est.t, max_dt)
    ref = traj_ref.positions[[i for i, _ in pairs]]
    est = traj_est.positions[[j for _, j in pairs]]
    transform = umeyama_sim3(est, ref, fix_scale=fix_scale)
    return ate_rmse(ref, est, transform), transform, len(pairs)


@dataclass(frozen=True)
class TagDetection:
    tag_id: int
    t: float
    p_cm: np.ndarray  # marker position in camera frame


def load_tag_csv(path):
    """Detections CSV: ``t,tag_id,px,py,pz`` with a header line."""
    detections = []
    with open(path) as f:
        for line_no, line in enumerate(f, start=1):
            text = line.strip()
            if not text or text.startswith("#") or text.startswith("t,"):
                continue
            fields = text.split(",")
            if len(fields) != 5:
                raise InputError(f"{path}:{line_no}: expected 5 fields")
            detections.append(TagDetection(
                tag_id=int(fields[1]), t=float(fields[0]),
                p_cm=np.array([float(v) for v in fields[2:5]])))
    return detections


def _pose_at(traj, t, max_dt):
    """Camera pose at time t, interpolating between bracketing poses."""
    idx = int(np.searchsorted(traj.t, t))
    if idx == 0 or idx == len(traj):
        edge = 0 if idx == 0 else len(traj) - 1
        if abs(traj.t[edge] - t) > max_dt:
            return None
        return traj.positions[edge], quat_to_matrix(traj.quats[edge])
    t0, t1 = traj.t[idx - 1], traj.t[idx]
    alpha = (t - t0) / (t1 - t0)
    pos = (1 - alpha) * traj.positions[idx - 1] + alpha * traj.positions[idx]
    q = quat_slerp(traj.quats[idx - 1], traj.quats[idx], alpha)
    return pos, quat_to_matrix(q)


def tag_world_positions(traj, detections, max_dt=DEFAULT_MAX_DT):
    """Map camera-frame detections to world positions via the trajectory.

    Returns (positions_by_tag, unmatched) where unmatched lists detections
    whose timestamps fall outside the trajectory by more than max_dt.
    """
    by_tag = {}
    unmatched = []
    for det in detections:
        pose = _pose_at(traj, det.t, max_dt)
        if pose is None:
            unmatched.append(det)
            continue
        pos, R = pose
        world = R @ det.p_cm + pos
        by_tag.setdefault(det.tag_id, []).append(world)
    return ({tag: np.array(pts) for tag, pts in by_tag.items()}, unmatched)


@dataclass
class TagStats:
    per_tag: dict      # tag id -> dict of stats
    std_xyz: np.ndarray
    avg_dist_error: float
    n_detections: int


def tag_statistics(positions_by_tag):
    """Per-tag and overall displacement statistics about the per-tag mean.

    Standard deviations use the sample (n-1) estimator. Quantiles per tag
    are (min, Q1, median, Q3, max) of the distance errors.
    """
    per_tag = {}
    all_devs = []
    all_dists = []
    for tag, pts in sorted(positions_by_tag.items()):
        pts = np.asarray(pts, dtype=float).reshape(-1, 3)
        if len(pts) < 2:
            raise InsufficientDetections(f"tag {tag}: need >= 2 detections")
        mean = pts.mean(axis=0)
        devs = pts - mean
        dists = np.linalg.norm(devs, axis=1)
        per_tag[tag] = {
            "n": len(pts),
            "mean": mean,
            "std_xyz": np.std(pts, axis=0, ddof=1),
            "avg_dist_error": float(np.mean(dists)),
            "quantiles": np.percentile(dists, [0, 25, 50, 75, 100]),
        }
        all_devs.append(devs)
        all_dists.append(dists)
    devs = np.vstack(all_devs)
    dists = np.concatenate(all_dists)
    return TagStats(per_tag=per_tag,
                    std_xyz=np.std(devs, axis=0, ddof=1),
                    avg_dist_error=float(np.mean(dists)),
                    n_detections=len(dists))
