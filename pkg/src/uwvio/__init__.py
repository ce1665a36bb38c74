"""GoPro underwater visual-inertial toolkit.

Turns raw GoPro 9 recordings into synchronized visual-inertial datasets,
characterizes IMU noise via Allan deviation, maintains a loop-closure
consistent sparse global map, and evaluates trajectories and sparse maps
(Sim(3) ATE, tag displacement, registration fitness).
"""

from . import allan, errors, geometry, global_map, gpmf, mp4, ply, register, sync, traj_eval

__version__ = "0.1.0"

__all__ = [
    "allan", "errors", "geometry", "global_map", "gpmf", "mp4", "ply",
    "register", "sync", "traj_eval",
]
