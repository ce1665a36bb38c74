"""Sparse-map comparison pipeline: voxel downsampling, FPFH descriptors,
descriptor matching, robust correspondence-based global registration,
ICP refinement, and fitness / inlier_rmse scoring.

The global-registration step is a correspondence RANSAC with a closed-form
3-point rigid fit and a final least-squares refit on the consensus set;
it is deterministic under a fixed seed.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import (ConsensusFailure, EmptyCloud, NoOverlap, TooFewPoints)
from .geometry import RigidTransform, rigid_fit
from .gridindex import GridIndex

DEFAULT_VOXEL = 0.10            # paper pipeline voxel size, meters
DEFAULT_NORMAL_K = 30
DEFAULT_FEATURE_RADIUS_FACTOR = 5.0
DEFAULT_RANSAC_MAX_ITER = 100_000
DEFAULT_RANSAC_CONFIDENCE = 0.999
DEFAULT_MIN_INLIER_RATIO = 0.05

# deterministic fallback normal for rank-deficient neighborhoods
DEGENERATE_NORMAL = np.array([0.0, 0.0, 1.0])


@dataclass
class PointCloud:
    points: np.ndarray
    colors: np.ndarray | None = None
    normals: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if self.colors is not None:
            self.colors = np.asarray(self.colors, dtype=float).reshape(-1, 3)
        if self.normals is not None:
            self.normals = np.asarray(self.normals, dtype=float).reshape(-1, 3)

    def __len__(self):
        return len(self.points)


@dataclass
class RegistrationResult:
    transform: RigidTransform
    fitness: float
    inlier_rmse: float
    n_correspondences: int
    n_inliers: int


def voxel_downsample(cloud, voxel):
    """One output point per occupied voxel: the centroid of its members."""
    if voxel <= 0:
        raise ValueError("voxel size must be positive")
    if len(cloud) == 0:
        raise EmptyCloud("cannot downsample an empty cloud")
    cells = np.floor(cloud.points / voxel).astype(np.int64)
    _, inverse, counts = np.unique(cells, axis=0, return_inverse=True,
                                   return_counts=True)
    n_out = len(counts)

    def _mean(values):
        out = np.zeros((n_out, values.shape[1]))
        np.add.at(out, inverse, values)
        return out / counts[:, None]

    points = _mean(cloud.points)
    colors = _mean(cloud.colors) if cloud.colors is not None else None
    return PointCloud(points=points, colors=colors)


def estimate_normals(cloud, k_neighbors=DEFAULT_NORMAL_K, viewpoint=(0.0, 0.0, 0.0)):
    """Per-point normals from the k-neighborhood covariance.

    The normal is the smallest-eigenvalue eigenvector, oriented toward the
    viewpoint. Rank-deficient neighborhoods get the deterministic fallback
    normal (flagged by returning it unmodified). Returns a new cloud.
    """
    pts = cloud.points
    n = len(pts)
    if n < k_neighbors + 1:
        raise TooFewPoints(f"need >= {k_neighbors + 1} points, got {n}")
    index = GridIndex(pts, _density_cell(pts, k_neighbors))
    viewpoint = np.asarray(viewpoint, dtype=float)

    # points sharing a cell share their candidate block; cache it per cell
    # and batch the eigendecompositions
    covs = np.empty((n, 3, 3))
    for cell, members in index.cells.items():
        reach = 1
        cand = index._block(cell, reach)
        while cand.size < k_neighbors + 2 and reach < 64:
            reach += 1
            cand = index._block(cell, reach)
        block = pts[cand]
        for i in members:
            d2 = np.sum((block - pts[i]) ** 2, axis=1)
            take = min(k_neighbors + 1, d2.size)
            sel = np.argpartition(d2, take - 1)[:take]
            nb = block[sel]
            centered = nb - nb.mean(axis=0)
            covs[i] = centered.T @ centered / len(nb)

    w, v = np.linalg.eigh(covs)
    normals = v[:, :, 0].copy()
    degenerate = (w[:, 2] <= 1e-18) | (w[:, 1] <= 1e-12 * w[:, 2])
    normals[degenerate] = DEGENERATE_NORMAL
    flip = np.einsum("ij,ij->i", normals, viewpoint - pts) < 0
    normals[flip] = -normals[flip]
    return PointCloud(points=pts, colors=cloud.colors, normals=normals)


def _density_cell(pts, k):
    """Grid cell size tuned so a cell holds on the order of k points."""
    extent = np.ptp(pts, axis=0)
    extent = np.where(extent > 0, extent, 1.0)
    volume = float(np.prod(extent))
    per_point = (volume / len(pts)) ** (1.0 / 3.0)
    return max(per_point * max(k, 1) ** (1.0 / 3.0), 1e-9)


@dataclass
class FpfhDescriptors:
    values: np.ndarray          # (n, 33)
    isolated: np.ndarray        # (n,) bool: no neighbors in radius

    def __len__(self):
        return len(self.values)


def _pair_features(p, n_p, q_pts, q_normals):
    """Angular features (alpha, phi, theta) of point p against neighbors q."""
    d = q_pts - p
    dist = np.linalg.norm(d, axis=1)
    dist = np.where(dist > 0, dist, 1.0)
    dn = d / dist[:, None]
    u = n_p
    v = np.cross(dn, u)
    v_norm = np.linalg.norm(v, axis=1)
    # connecting line parallel to the normal: pick any perpendicular frame
    deg = v_norm < 1e-12
    if np.any(deg):
        alt = np.cross(np.tile([1.0, 0.0, 0.0], (int(deg.sum()), 1)), u)
        alt_bad = np.linalg.norm(alt, axis=1) < 1e-12
        alt[alt_bad] = np.cross([0.0, 1.0, 0.0], u)
        v[deg] = alt
        v_norm = np.linalg.norm(v, axis=1)
    v = v / v_norm[:, None]
    w = np.cross(u, v)
    alpha = np.einsum("ij,ij->i", v, q_normals)
    phi = dn @ u
    theta = np.arctan2(np.einsum("ij,ij->i", w, q_normals), q_normals @ u)
    return alpha, phi, theta


def _spfh_histogram(alpha, phi, theta):
    h = np.empty(33)
    h[0:11] = np.histogram(alpha, bins=11, range=(-1.0, 1.0))[0]
    h[11:22] = np.histogram(phi, bins=11, range=(-1.0, 1.0))[0]
    h[22:33] = np.histogram(theta, bins=11, range=(-np.pi, np.pi))[0]
    return h


def compute_fpfh(cloud, radius):
    """Fast Point Feature Histograms (33 bins per point).

    Simplified per-point features are binned into three 11-bin histograms,
    then aggregated over the neighborhood with 1/distance weights and
    normalized so each sub-histogram sums to 100. Points with no neighbor
    in radius get a zero descriptor and are flagged.
    """
    if cloud.normals is None:
        raise ValueError("cloud needs normals; run estimate_normals first")
    if radius <= 0:
        raise ValueError("radius must be positive")
    pts = cloud.points
    normals = cloud.normals
    n = len(pts)
    if n == 0:
        raise EmptyCloud("cannot describe an empty cloud")
    index = GridIndex(pts, radius)
    neighbor_lists = []
    spfh = np.zeros((n, 33))
    isolated = np.zeros(n, dtype=bool)
    for i in range(n):
        nbrs = index.radius_neighbors(pts[i], radius)
        nbrs = nbrs[nbrs != i]
        neighbor_lists.append(nbrs)
        if nbrs.size == 0:
            isolated[i] = True
            continue
        alpha, phi, theta = _pair_features(pts[i], normals[i], pts[nbrs], normals[nbrs])
        spfh[i] = _spfh_histogram(alpha, phi, theta)

    fpfh = np.zeros((n, 33))
    for i in range(n):
        nbrs = neighbor_lists[i]
        if nbrs.size == 0:
            continue
        dist = np.linalg.norm(pts[nbrs] - pts[i], axis=1)
        weights = 1.0 / np.maximum(dist, 1e-12)
        fpfh[i] = spfh[i] + (weights[:, None] * spfh[nbrs]).sum(axis=0) / nbrs.size
        # percentage-normalize each 11-bin sub-histogram
        for lo in (0, 11, 22):
            total = fpfh[i, lo:lo + 11].sum()
            if total > 0:
                fpfh[i, lo:lo + 11] *= 100.0 / total
    return FpfhDescriptors(values=fpfh, isolated=isolated)


def match_descriptors(desc_a, desc_b, mutual=True, chunk=512):
    """Nearest-neighbor correspondences in descriptor space (L2).

    Returns an (m, 2) array of (index_a, index_b) pairs. With ``mutual``
    only reciprocal nearest neighbors are kept.
    """
    a = np.asarray(desc_a.values if hasattr(desc_a, "values") else desc_a, dtype=float)
    b = np.asarray(desc_b.values if hasattr(desc_b, "values") else desc_b, dtype=float)
    if len(a) == 0 or len(b) == 0:
        raise EmptyCloud("empty descriptor set")
    fwd = _nn_indices(a, b, chunk)
    if not mutual:
        return np.column_stack([np.arange(len(a)), fwd])
    bwd = _nn_indices(b, a, chunk)
    idx_a = np.arange(len(a))
    keep = bwd[fwd] == idx_a
    return np.column_stack([idx_a[keep], fwd[keep]])


def _nn_indices(a, b, chunk):
    """Index of the L2-nearest row of b for every row of a."""
    b_sq = np.sum(b * b, axis=1)
    out = np.empty(len(a), dtype=int)
    for start in range(0, len(a), chunk):
        block = a[start:start + chunk]
        d2 = np.sum(block * block, axis=1)[:, None] - 2.0 * block @ b.T + b_sq
        out[start:start + chunk] = np.argmin(d2, axis=1)
    return out


def robust_global_registration(correspondences, points_a, points_b,
                               inlier_threshold,
                               seed=0,
                               max_iterations=DEFAULT_RANSAC_MAX_ITER,
                               confidence=DEFAULT_RANSAC_CONFIDENCE,
                               min_inlier_ratio=DEFAULT_MIN_INLIER_RATIO):
    """Consensus-maximizing rigid transform over putative correspondences.

    RANSAC with a 3-point closed-form rigid fit and a final least-squares
    refit on the consensus set. Deterministic under the seed; ties are
    broken in favor of the earlier iteration.
    """
    corr = np.asarray(correspondences, dtype=int).reshape(-1, 2)
    n = len(corr)
    if n < 3:
        raise ConsensusFailure(f"need >= 3 correspondences, got {n}")
    a = np.asarray(points_a, dtype=float)[corr[:, 0]]
    b = np.asarray(points_b, dtype=float)[corr[:, 1]]
    rng = np.random.default_rng(seed)
    thr2 = inlier_threshold * inlier_threshold

    best_count = 0
    best_inliers = None
    needed = max_iterations
    it = 0
    while it < min(needed, max_iterations):
        sample = rng.choice(n, size=3, replace=False)
        R, t = rigid_fit(a[sample], b[sample])
        resid2 = np.sum((a @ R.T + t - b) ** 2, axis=1)
        inliers = resid2 < thr2
        count = int(inliers.sum())
        if count > best_count:
            best_count = count
            best_inliers = inliers
            ratio = count / n
            if ratio >= 1.0:
                break
            # iterations needed to hit an all-inlier sample with the
            # requested confidence
            denom = np.log1p(-min(ratio ** 3, 1 - 1e-12))
            needed = int(np.ceil(np.log(1.0 - confidence) / denom))
        it += 1

    if best_inliers is None or best_count < max(3, int(np.ceil(min_inlier_ratio * n))):
        raise ConsensusFailure(
            f"best consensus {best_count}/{n} below minimum "
            f"{max(3, int(np.ceil(min_inlier_ratio * n)))}")
    R, t = rigid_fit(a[best_inliers], b[best_inliers])
    return RigidTransform.from_matrix(R, t)


def icp_refine(source, target, init, threshold, max_iter=50, tol=1e-8):
    """Point-to-point ICP from the given initial guess.

    Alternates nearest-neighbor association (within ``threshold``) with a
    closed-form rigid fit. Stops when the transform change drops below
    ``tol``, the association RMSE stops improving, or ``max_iter``.
    """
    src = np.asarray(source.points if hasattr(source, "points") else source, dtype=float)
    tgt = np.asarray(target.points if hasattr(target, "points") else target, dtype=float)
    if len(src) == 0 or len(tgt) == 0:
        raise EmptyCloud("empty cloud in ICP")
    index = GridIndex(tgt, threshold)
    transform = init
    prev_rmse = np.inf
    for _ in range(max_iter):
        moved = transform.apply(src)
        src_idx, tgt_idx, dists = _associate_points(index, moved, threshold)
        if src_idx.size == 0:
            raise NoOverlap("no point associations within threshold")
        rmse = float(np.sqrt(np.mean(dists ** 2)))
        if rmse > prev_rmse:
            break
        R, t = rigid_fit(src[src_idx], tgt[tgt_idx])
        new_transform = RigidTransform.from_matrix(R, t)
        delta = np.abs(new_transform.matrix() - transform.matrix()).max()
        transform = new_transform
        prev_rmse = rmse
        if delta < tol:
            break
    return transform


def _associate_points(index, points, threshold):
    src_idx, tgt_idx, dists = [], [], []
    for i, p in enumerate(points):
        hit = index.nearest_within(p, threshold)
        if hit is not None:
            src_idx.append(i)
            tgt_idx.append(hit[0])
            dists.append(hit[1])
    return np.array(src_idx, dtype=int), np.array(tgt_idx, dtype=int), np.array(dists)


def score_registration(source, target, transform, threshold):
    """Fitness and inlier RMSE of a registration.

    fitness = inliers / source points, where an inlier is a transformed
    source point with a target neighbor closer than ``threshold``;
    inlier_rmse is the RMSE over those inlier distances.
    """
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    src = np.asarray(source.points if hasattr(source, "points") else source, dtype=float)
    tgt = np.asarray(target.points if hasattr(target, "points") else target, dtype=float)
    if len(src) == 0 or len(tgt) == 0:
        raise EmptyCloud("empty cloud in scoring")
    index = GridIndex(tgt, threshold)
    moved = transform.apply(src)
    _, _, dists = _associate_points(index, moved, threshold)
    n_inliers = len(dists)
    fitness = n_inliers / len(src)
    inlier_rmse = float(np.sqrt(np.mean(dists ** 2))) if n_inliers else 0.0
    return RegistrationResult(transform=transform, fitness=fitness,
                              inlier_rmse=inlier_rmse,
                              n_correspondences=n_inliers,
                              n_inliers=n_inliers)


@dataclass
class PipelineResult:
    result: RegistrationResult
    coarse_transform: RigidTransform
    n_putative: int
    n_source_down: int = 0
    n_target_down: int = 0


def register_pipeline(source, target,
                      voxel=DEFAULT_VOXEL,
                      normal_k=DEFAULT_NORMAL_K,
                      feature_radius_factor=DEFAULT_FEATURE_RADIUS_FACTOR,
                      seed=0,
                      mutual=True,
                      ransac_max_iter=DEFAULT_RANSAC_MAX_ITER,
                      confidence=DEFAULT_RANSAC_CONFIDENCE,
                      icp_max_iter=50):
    """End-to-end map comparison: downsample, describe, match, register
    globally, refine with ICP on the original clouds, and score."""
    src_d = voxel_downsample(source, voxel)
    tgt_d = voxel_downsample(target, voxel)
    src_d = estimate_normals(src_d, normal_k)
    tgt_d = estimate_normals(tgt_d, normal_k)
    radius = feature_radius_factor * voxel
    desc_s = compute_fpfh(src_d, radius)
    desc_t = compute_fpfh(tgt_d, radius)
    corr = match_descriptors(desc_s, desc_t, mutual=mutual)
    coarse = robust_global_registration(corr, src_d.points, tgt_d.points,
                                        inlier_threshold=voxel, seed=seed,
                                        max_iterations=ransac_max_iter,
                                        confidence=confidence)
    refined = icp_refine(source, target, coarse, threshold=voxel,
                         max_iter=icp_max_iter)
    result = score_registration(source, target, refined, threshold=voxel)
    return PipelineResult(result=result, coarse_transform=coarse,
                          n_putative=len(corr),
                          n_source_down=len(src_d), n_target_down=len(tgt_d))
