"""Corner detection and pyramidal feature tracking.

Detection scores pixels by the minimum eigenvalue of the local gradient
structure tensor, keeps the strongest corners globally, then tops up every
grid cell whose count fell short by relaxing that cell's threshold, so
low-texture regions still contribute mesh vertices.

Tracking is translational iterative flow refined coarse-to-fine over an
image pyramid, with a forward-backward consistency check.  A point is lost
when it leaves the frame, sits on degenerate texture, or fails the check.
Everything here is deterministic: identical frames and config produce an
identical TrajectorySet.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import maximum_filter

from . import kernels
from .frames import GrayFrame
from .trajectory import (
    FeatureTrajectory,
    TrajectorySet,
    filter_short,
    validate_bounds,
)

__all__ = ["TrackerConfig", "detect_corners", "track_frame_pair", "build_trajectories"]

MIN_FRAME_SIDE = 32


@dataclass(frozen=True)
class TrackerConfig:
    grid_cols: int = 10
    grid_rows: int = 10
    corner_target: int = 200
    min_per_cell: int = 1
    response_radius: int = 3          # 7x7 structure tensor window
    global_thresh_ratio: float = 0.01  # of the maximum response
    cell_relax: float = 0.1            # per-cell threshold relaxation factor
    window: int = 21                   # flow window side length
    pyramid_levels: int = 3
    max_iterations: int = 30
    convergence_px: float = 0.01
    fb_error_max: float = 0.5
    min_eig_threshold: float = 1e-3
    redetect_fraction: float = 0.6
    min_new_corner_dist: float = 5.0

    def __post_init__(self):
        if self.window < 3 or self.window % 2 == 0:
            raise ValueError(f"window must be odd and >= 3, got {self.window}")
        if self.pyramid_levels < 1:
            raise ValueError("pyramid_levels must be >= 1")
        if not 0.0 < self.global_thresh_ratio < 1.0:
            raise ValueError("global_thresh_ratio must be in (0, 1)")


def _check_frame(frame: GrayFrame) -> None:
    if frame.width < MIN_FRAME_SIDE or frame.height < MIN_FRAME_SIDE:
        raise ValueError(
            f"frame {frame.width}x{frame.height} too small, need at least "
            f"{MIN_FRAME_SIDE}x{MIN_FRAME_SIDE}"
        )


def detect_corners(frame: GrayFrame, cfg: TrackerConfig = TrackerConfig()) -> list[np.ndarray]:
    """Detect corner points, sorted by descending score then row-major position."""
    _check_frame(frame)
    resp = kernels.corner_min_eig(frame.data, cfg.response_radius)
    peak = float(resp.max())
    if peak <= 0.0:
        return []
    # 3x3 non-maximum suppression
    is_max = (resp == maximum_filter(resp, size=3)) & (resp > 0.0)
    ys, xs = np.nonzero(is_max)
    scores = resp[ys, xs]
    order = np.lexsort((xs, ys, -scores))
    ys, xs, scores = ys[order], xs[order], scores[order]

    thr = cfg.global_thresh_ratio * peak
    chosen = np.zeros(len(scores), dtype=bool)
    n_global = 0
    for i in range(len(scores)):
        if scores[i] < thr:
            break
        chosen[i] = True
        n_global += 1
        if n_global >= cfg.corner_target:
            break

    # top up starved grid cells with a relaxed threshold; if even that finds
    # nothing, take the cell's best positive responses so only truly flat
    # cells stay empty
    w, h = frame.width, frame.height
    cell_x = np.minimum((xs * cfg.grid_cols) // w, cfg.grid_cols - 1)
    cell_y = np.minimum((ys * cfg.grid_rows) // h, cfg.grid_rows - 1)
    relaxed = thr * cfg.cell_relax
    for cy in range(cfg.grid_rows):
        for cx in range(cfg.grid_cols):
            in_cell = np.nonzero((cell_x == cx) & (cell_y == cy))[0]
            if len(in_cell) == 0:
                continue
            have = int(chosen[in_cell].sum())
            if have >= cfg.min_per_cell:
                continue
            for i in in_cell:  # already sorted by score
                if have >= cfg.min_per_cell:
                    break
                if not chosen[i] and scores[i] >= relaxed:
                    chosen[i] = True
                    have += 1
            if have < cfg.min_per_cell:
                # even the relaxed threshold found nothing usable; take the
                # cell's best positive responses so only flat cells stay empty
                for i in in_cell:
                    if have >= cfg.min_per_cell:
                        break
                    if not chosen[i]:
                        chosen[i] = True
                        have += 1

    idx = np.nonzero(chosen)[0]
    return [np.array([float(xs[i]), float(ys[i])]) for i in idx]


# --- pyramids ---


def _downsample(a: np.ndarray) -> np.ndarray:
    h, w = a.shape
    a = a[: h - (h % 2), : w - (w % 2)]
    return 0.25 * (a[0::2, 0::2] + a[1::2, 0::2] + a[0::2, 1::2] + a[1::2, 1::2])


def _build_pyramid(data: np.ndarray, levels: int) -> list[np.ndarray]:
    pyr = [np.ascontiguousarray(data, dtype=np.float64)]
    for _ in range(1, levels):
        pyr.append(_downsample(pyr[-1]))
    return pyr


def _usable_levels(shape: tuple[int, int], cfg: TrackerConfig) -> list[int]:
    h, w = shape
    need = cfg.window + 2
    return [lv for lv in range(cfg.pyramid_levels)
            if min(h, w) // (1 << lv) >= need]


def _track_direction(
    src_pyr: list[np.ndarray],
    dst_pyr: list[np.ndarray],
    grad_pyr: list[tuple[np.ndarray, np.ndarray]],
    pts: np.ndarray,
    cfg: TrackerConfig,
) -> tuple[np.ndarray, np.ndarray]:
    levels = _usable_levels(src_pyr[0].shape, cfg)
    n = pts.shape[0]
    disp = np.zeros((n, 2))
    status = np.ones(n, dtype=np.uint8)
    if not levels:
        return disp, np.zeros(n, dtype=np.uint8)
    radius = cfg.window // 2
    for pos, lv in enumerate(sorted(levels, reverse=True)):
        scale = 1.0 / (1 << lv)
        gx, gy = grad_pyr[lv]
        kernels.lk_refine_level(
            src_pyr[lv], dst_pyr[lv], gx, gy,
            np.ascontiguousarray(pts * scale), disp, status,
            radius, cfg.max_iterations, cfg.convergence_px,
            cfg.min_eig_threshold, strict=(lv == 0),
        )
        if pos != len(levels) - 1:
            disp *= 2.0
    return disp, status


def track_frame_pair(
    prev: GrayFrame,
    nxt: GrayFrame,
    points: list[np.ndarray],
    cfg: TrackerConfig = TrackerConfig(),
) -> list[np.ndarray | None]:
    """Track points from `prev` into `nxt`; lost points come back as None."""
    _check_frame(prev)
    if (prev.width, prev.height) != (nxt.width, nxt.height):
        raise ValueError(
            f"frame sizes differ: {prev.width}x{prev.height} vs {nxt.width}x{nxt.height}"
        )
    if not points:
        return []
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    levels = cfg.pyramid_levels
    prev_pyr = _build_pyramid(prev.data, levels)
    next_pyr = _build_pyramid(nxt.data, levels)
    prev_grad = [kernels.gradients(p) for p in prev_pyr]
    next_grad = [kernels.gradients(p) for p in next_pyr]

    disp, status = _track_direction(prev_pyr, next_pyr, prev_grad, pts, cfg)
    fwd = pts + disp

    back_disp, back_status = _track_direction(next_pyr, prev_pyr, next_grad, fwd, cfg)
    round_trip = fwd + back_disp
    fb_err = np.hypot(*(round_trip - pts).T)

    w, h = prev.width, prev.height
    out: list[np.ndarray | None] = []
    for i in range(pts.shape[0]):
        q = fwd[i]
        ok = (status[i] == 1 and back_status[i] == 1
              and fb_err[i] <= cfg.fb_error_max
              and 0.0 <= q[0] <= w - 1 and 0.0 <= q[1] <= h - 1)
        out.append(q.copy() if ok else None)
    return out


def build_trajectories(
    frames: list[GrayFrame],
    cfg: TrackerConfig = TrackerConfig(),
) -> TrajectorySet:
    """Detect and track corners through a clip.

    Corners are detected on the first frame and re-detected whenever the
    live-point count drops below redetect_fraction * corner_target; new
    corners too close to a surviving point are skipped so trajectories do
    not pile up.  Trajectories shorter than 4 frames are dropped.
    """
    if len(frames) < 2:
        raise ValueError(f"need at least 2 frames, got {len(frames)}")
    w, h = frames[0].width, frames[0].height

    next_id = 0
    live: list[dict] = []
    done: list[dict] = []

    def start_tracks(t: int, corners: list[np.ndarray]) -> None:
        nonlocal next_id
        for c in corners:
            if any(np.hypot(*(c - tr["pts"][-1])) < cfg.min_new_corner_dist for tr in live):
                continue
            live.append({"id": next_id, "start": t, "pts": [c]})
            next_id += 1

    start_tracks(0, detect_corners(frames[0], cfg))

    for t in range(1, len(frames)):
        if live:
            tracked = track_frame_pair(
                frames[t - 1], frames[t], [tr["pts"][-1] for tr in live], cfg
            )
            survivors = []
            for tr, q in zip(live, tracked):
                if q is None:
                    done.append(tr)
                else:
                    tr["pts"].append(q)
                    survivors.append(tr)
            live = survivors
        if len(live) < cfg.redetect_fraction * cfg.corner_target:
            start_tracks(t, detect_corners(frames[t], cfg))

    done.extend(live)
    done.sort(key=lambda tr: tr["id"])
    trajs = tuple(
        FeatureTrajectory(id=tr["id"], start_frame=tr["start"], points=np.array(tr["pts"]))
        for tr in done
    )
    ts = validate_bounds(TrajectorySet(trajs, len(frames), (w, h)))
    return filter_short(ts, 3)
