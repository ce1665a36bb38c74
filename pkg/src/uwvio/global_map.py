"""Loop-closure-consistent sparse global map.

Keyframes carry world poses; landmark observations are cached in
keyframe-local coordinates, so a pose update implicitly moves every
attached landmark while keeping the point-to-keyframe relative pose
unchanged. Fusion is the quality-weighted mean over all observations of a
landmark.

Observations are stored per landmark in a dict keyed by keyframe id, so
(landmark, keyframe) lookup is O(1) and fusion of the whole map is linear
in the total number of observations.
"""

from dataclasses import dataclass

import numpy as np

from . import ply
from .errors import (DuplicateKeyframe, EventLogError, InvalidQuality,
                     UnknownKeyframe, UnknownLandmark, UwvioError)
from .geometry import RigidTransform


@dataclass(frozen=True)
class Observation:
    p_f: np.ndarray       # landmark position in keyframe-local coordinates
    keyframe_id: int
    quality: float        # in [0, 1]
    color: np.ndarray     # RGB in [0, 255]
    pixel: tuple          # (u, v) keypoint position


@dataclass(frozen=True)
class FusedPoint:
    p_w: np.ndarray
    color: np.ndarray
    quality: float
    n_obs: int


class GlobalMap:
    """Single-writer map state; fuse/export are read-only."""

    def __init__(self):
        self.keyframes = {}      # id -> RigidTransform (T_wf)
        self.landmarks = {}      # landmark id -> {keyframe id: Observation}
        self._inverses = {}      # cached T_wf^-1 per keyframe

    def add_keyframe(self, kf_id, pose):
        if kf_id in self.keyframes:
            raise DuplicateKeyframe(f"keyframe {kf_id} already present")
        self.keyframes[kf_id] = pose

    def add_observation(self, landmark_id, kf_id, p_w_obs, quality,
                        color=(0, 0, 0), pixel=(0, 0)):
        """Cache a world-frame observation in keyframe-local coordinates.

        A repeated observation from the same keyframe replaces the old one.
        """
        pose = self.keyframes.get(kf_id)
        if pose is None:
            raise UnknownKeyframe(f"keyframe {kf_id} not in map")
        if not 0.0 <= quality <= 1.0:
            raise InvalidQuality(f"quality {quality} outside [0, 1]")
        inv = self._inverses.get(kf_id)
        if inv is None:
            inv = self._inverses[kf_id] = pose.inverse()
        p_f = inv.apply(np.asarray(p_w_obs, dtype=float))
        obs = Observation(p_f=p_f, keyframe_id=kf_id, quality=float(quality),
                          color=np.asarray(color, dtype=float),
                          pixel=(int(pixel[0]), int(pixel[1])))
        self.landmarks.setdefault(landmark_id, {})[kf_id] = obs

    def update_keyframe_poses(self, updates):
        """Replace keyframe poses (absolute, e.g. pose-graph output).

        Stored local observations are untouched; the deformation shows up
        in subsequent fusion.
        """
        for kf_id in updates:
            if kf_id not in self.keyframes:
                raise UnknownKeyframe(f"keyframe {kf_id} not in map")
        self.keyframes.update(updates)
        for kf_id in updates:
            self._inverses.pop(kf_id, None)

    def fuse_landmark(self, landmark_id):
        obs_map = self.landmarks.get(landmark_id)
        if not obs_map:
            raise UnknownLandmark(f"landmark {landmark_id} has no observations")
        pos_sum = np.zeros(3)
        color_sum = np.zeros(3)
        q_sum = 0.0
        for obs in obs_map.values():
            pose = self.keyframes[obs.keyframe_id]
            world = pose.apply(obs.p_f)
            pos_sum += world * obs.quality
            color_sum += obs.color * obs.quality
            q_sum += obs.quality
        n = len(obs_map)
        if q_sum == 0.0:
            # all-zero weights make the weighted mean 0/0; fall back to the
            # unweighted mean instead of dropping the landmark
            pos = np.mean([self.keyframes[o.keyframe_id].apply(o.p_f)
                           for o in obs_map.values()], axis=0)
            color = np.mean([o.color for o in obs_map.values()], axis=0)
            quality = 0.0
        else:
            pos = pos_sum / q_sum
            color = color_sum / q_sum
            quality = q_sum / n
        color = np.clip(np.rint(color), 0, 255)
        return FusedPoint(p_w=pos, color=color, quality=quality, n_obs=n)

    def fuse_all(self):
        """Fused points for every landmark, in landmark-id order."""
        return {lm: self.fuse_landmark(lm) for lm in sorted(self.landmarks)}

    def export_fused_cloud(self, path):
        """Write every fused landmark to a binary PLY; returns the count."""
        fused = self.fuse_all()
        if not fused:
            return ply.write_ply(path, np.empty((0, 3)),
                                 colors=np.empty((0, 3)), quality=np.empty(0))
        pts = np.array([f.p_w for f in fused.values()])
        colors = np.array([f.color for f in fused.values()])
        quality = np.array([f.quality for f in fused.values()])
        return ply.write_ply(path, pts, colors=colors, quality=quality)


def _parse_pose(fields):
    t = np.array([float(v) for v in fields[:3]])
    q = np.array([float(v) for v in fields[3:7]])
    return RigidTransform(q=q, t=t)


def replay_log(lines):
    """Apply a recorded VIO event stream to a fresh map.

    Line formats (whitespace-separated, quaternion w-last):
      KF  id tx ty tz qx qy qz qw
      OBS lm_id kf_id px py pz q r g b u v
      UPD id tx ty tz qx qy qz qw
    """
    gmap = GlobalMap()
    pending_updates = {}

    def flush_updates():
        if pending_updates:
            gmap.update_keyframe_poses(dict(pending_updates))
            pending_updates.clear()

    for line_no, line in enumerate(lines, start=1):
        text = line.strip()
        if not text or text.startswith("#"):
            continue
        fields = text.split()
        try:
            tag = fields[0]
            if tag == "KF":
                flush_updates()
                if len(fields) != 9:
                    raise EventLogError(line_no, f"KF expects 8 values, got {len(fields) - 1}")
                gmap.add_keyframe(int(fields[1]), _parse_pose(fields[2:9]))
            elif tag == "OBS":
                flush_updates()
                if len(fields) != 12:
                    raise EventLogError(line_no, f"OBS expects 11 values, got {len(fields) - 1}")
                gmap.add_observation(
                    landmark_id=int(fields[1]), kf_id=int(fields[2]),
                    p_w_obs=[float(v) for v in fields[3:6]],
                    quality=float(fields[6]),
                    color=[float(v) for v in fields[7:10]],
                    pixel=(int(fields[10]), int(fields[11])))
            elif tag == "UPD":
                if len(fields) != 9:
                    raise EventLogError(line_no, f"UPD expects 8 values, got {len(fields) - 1}")
                pending_updates[int(fields[1])] = _parse_pose(fields[2:9])
            else:
                raise EventLogError(line_no, f"unknown event {tag!r}")
        except EventLogError:
            raise
        except (UwvioError, ValueError) as exc:
            raise EventLogError(line_no, str(exc)) from exc
    flush_updates()
    return gmap


def replay_log_file(path):
    with open(path) as f:
        return replay_log(f)
