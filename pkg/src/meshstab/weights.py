"""Adaptive term weights for the smoothing optimization.

Two weight families live here.  The temporal weight shapes how hard a
trajectory step is smoothed, as a cubic-exponential falloff in the observed
per-axis step size: slow drift gets weights above 1 (smoothed harder) and
fast intentional motion decays below 1 (preserved).

The spatial weight measures how well a feature's neighborhood fits a single
8-parameter homography between consecutive frames.  Rigid background fits
almost exactly (tiny residual, weight clamps low); independently moving
foreground breaks the fit (weight grows, clamped high), which makes the
shape-preserving terms hold on to discontinuous regions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateGeometryError
from .trajectory import TrajectorySet, frame_feature_set

__all__ = [
    "TemporalWeightParams",
    "LsmParams",
    "LsmTable",
    "temporal_weight",
    "knn_neighbors",
    "fit_local_homography",
    "lsm_weight",
    "build_lsm_table",
    "dump_lsm_table",
]

COND_LIMIT = 1e12


@dataclass(frozen=True)
class TemporalWeightParams:
    sigma: float = 10.0

    def __post_init__(self):
        if self.sigma <= 0.0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")


def temporal_weight(d, sigma: float = 10.0):
    """exp(-((d - sigma)/sigma)^3): e at d=0, 1 at d=sigma, 1/e at d=2*sigma.

    Monotonically non-increasing in d.  Accepts a scalar or an array;
    callers feed the magnitude of the observed per-axis step.
    """
    if sigma <= 0.0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    u = (np.asarray(d, dtype=np.float64) - sigma) / sigma
    out = np.exp(-(u**3))
    return out if out.ndim else float(out)


def knn_neighbors(
    points: list[tuple[int, np.ndarray]],
    target_id: int,
    k: int,
) -> list[int]:
    """Ids of the k points nearest to `target_id` (itself excluded).

    Distance ties break by ascending id.  When fewer than k other points
    exist, all of them are returned.
    """
    ids = np.array([pid for pid, _ in points], dtype=np.int64)
    pos = np.array([p for _, p in points], dtype=np.float64)
    where = np.nonzero(ids == target_id)[0]
    if len(where) != 1:
        raise KeyError(f"point id {target_id} not present exactly once")
    i = int(where[0])
    d = np.hypot(pos[:, 0] - pos[i, 0], pos[:, 1] - pos[i, 1])
    order = np.lexsort((ids, d))
    out = [int(ids[j]) for j in order if j != i]
    return out[:k]


def fit_local_homography(src: np.ndarray, dst: np.ndarray) -> tuple[np.ndarray, float]:
    """Least-squares 8-parameter homography sending src points to dst points.

    Returns (params, residual) where params = (h1..h8) with the map
    x' = (h1 x + h2 y + h3) / (h7 x + h8 y + 1) and likewise for y', and
    residual is the squared norm of the linearized system's error.  Raises
    DegenerateGeometryError when the design matrix is rank-deficient or
    ill-conditioned (condition number beyond COND_LIMIT).
    """
    src = np.asarray(src, dtype=np.float64).reshape(-1, 2)
    dst = np.asarray(dst, dtype=np.float64).reshape(-1, 2)
    m = src.shape[0]
    if dst.shape[0] != m:
        raise ValueError(f"point counts differ: {m} vs {dst.shape[0]}")
    if m < 4:
        raise DegenerateGeometryError(f"homography fit needs >= 4 points, got {m}")
    x, y = src[:, 0], src[:, 1]
    xp, yp = dst[:, 0], dst[:, 1]
    A = np.zeros((2 * m, 8))
    A[0::2, 0] = x
    A[0::2, 1] = y
    A[0::2, 2] = 1.0
    A[0::2, 6] = -xp * x
    A[0::2, 7] = -xp * y
    A[1::2, 3] = x
    A[1::2, 4] = y
    A[1::2, 5] = 1.0
    A[1::2, 6] = -yp * x
    A[1::2, 7] = -yp * y
    rhs = np.empty(2 * m)
    rhs[0::2] = xp
    rhs[1::2] = yp
    if not np.all(np.isfinite(A)) or not np.all(np.isfinite(rhs)):
        raise DegenerateGeometryError("homography system has non-finite entries")
    h, _, rank, sv = np.linalg.lstsq(A, rhs, rcond=None)
    # the SVD solve stays accurate far beyond where the squared conditioning
    # of the normal equations would give up, so the guard sits on A itself
    if rank < 8 or sv[-1] <= sv[0] / COND_LIMIT:
        raise DegenerateGeometryError("homography design matrix is (near) rank-deficient")
    r = A @ h - rhs
    return h, float(r @ r)


@dataclass(frozen=True)
class LsmParams:
    k: int = 8
    tau: float = 10.0
    clamp_low: float = 0.1
    clamp_high: float = 10.0
    min_neighbors: int = 4

    def __post_init__(self):
        if self.k < 4:
            raise ValueError(f"k must be >= 4 (8-parameter fit), got {self.k}")
        if self.tau <= 0.0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if not self.clamp_low < self.clamp_high:
            raise ValueError(
                f"clamp range is empty: [{self.clamp_low}, {self.clamp_high}]"
            )


@dataclass(frozen=True)
class LsmTable:
    """Per-(frame, trajectory) spatial weights; missing entries mean 1.0."""

    weights: dict[tuple[int, int], float]

    def get(self, t: int, tid: int) -> float:
        return self.weights.get((t, tid), 1.0)


def _frame_arrays(ts: TrajectorySet, t: int) -> tuple[np.ndarray, np.ndarray]:
    feats = frame_feature_set(ts, t)
    if not feats:
        return np.zeros(0, dtype=np.int64), np.zeros((0, 2))
    ids = np.array([f[0] for f in feats], dtype=np.int64)
    pts = np.array([f[1] for f in feats])
    return ids, pts


def lsm_weight(
    ts: TrajectorySet,
    t: int,
    target_id: int,
    params: LsmParams = LsmParams(),
) -> float:
    """Spatial weight for one trajectory at one frame.

    Neutral 1.0 at a trajectory's first frame, when fewer than
    min_neighbors co-visible neighbors exist, or when the homography fit is
    degenerate.  Otherwise clamp(theta * residual) into
    [clamp_low, clamp_high], where theta normalizes the neighborhood radius
    by the frame size (mean of width/tau and height/tau).
    """
    tr = ts.by_id(target_id)
    if t == tr.start_frame:
        return 1.0
    ids_t, pts_t = _frame_arrays(ts, t)
    ids_p, pts_p = _frame_arrays(ts, t - 1)
    common, it, ip = np.intersect1d(ids_t, ids_p, return_indices=True)
    if target_id not in common:
        return 1.0
    pos_t = pts_t[it]
    pos_p = pts_p[ip]
    sel = int(np.nonzero(common == target_id)[0][0])
    n_others = len(common) - 1
    if n_others < params.min_neighbors:
        return 1.0
    k_eff = min(params.k, n_others)
    d = np.hypot(pos_t[:, 0] - pos_t[sel, 0], pos_t[:, 1] - pos_t[sel, 1])
    order = [j for j in np.lexsort((common, d)) if j != sel][:k_eff]
    rows = [sel] + order
    try:
        _, residual = fit_local_homography(pos_t[rows], pos_p[rows])
    except DegenerateGeometryError:
        return 1.0
    w, h = ts.frame_size
    rho = (w / params.tau + h / params.tau) / 2.0
    theta = float(d[order].sum()) / (k_eff * rho)
    return float(np.clip(theta * residual, params.clamp_low, params.clamp_high))


def build_lsm_table(ts: TrajectorySet, params: LsmParams = LsmParams()) -> LsmTable:
    """Weights for every (frame, trajectory) pair alive in the set.

    Each entry depends only on two consecutive frames, so rows could be
    computed in parallel; this builds them serially for determinism of
    accumulation order (the values themselves are order-free).
    """
    table: dict[tuple[int, int], float] = {}
    for t in range(ts.frame_count):
        for tr in ts.trajectories:
            if tr.alive_at(t):
                table[(t, tr.id)] = lsm_weight(ts, t, tr.id, params)
    return LsmTable(weights=table)


def dump_lsm_table(table: LsmTable) -> str:
    lines = [f"{t} {tid} {float(w)!r}" for (t, tid), w in sorted(table.weights.items())]
    return "\n".join(lines) + "\n"
