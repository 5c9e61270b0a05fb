"""Piecewise-affine warp fields and stabilized-frame rendering.

Each frame's warp is the unique piecewise-affine map sending the original
mesh vertices to their stabilized positions, one affine map per triangle.
Rendering is destination-driven: every output pixel finds its stabilized
triangle (lowest triangle index wins on shared edges) and samples the
source frame through the inverse map with bilinear interpolation.

Stabilized triangles that flipped orientation or collapsed are flagged and
rendered as-is; there is no untangling pass, the flags just surface in the
evaluation report.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .errors import DegenerateGeometryError, ParseError
from .frames import GrayFrame
from .mesh import AREA_EPS, FrameMesh
from .stage2 import StabilizedControlPoints
from .trajectory import TrajectorySet

__all__ = [
    "FrameWarp",
    "WarpField",
    "RenderStats",
    "triangle_affine",
    "build_warp_field",
    "render",
    "render_all",
    "common_crop",
    "apply_crop",
    "save_warpfield",
    "load_warpfield",
]

log = logging.getLogger(__name__)

CROP_SEARCH_ITERS = 32
_CROP_EPS = 1e-9


def triangle_affine(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """The 2x3 affine map sending the 3 src vertices onto the 3 dst vertices.

    An exactly unchanged triangle short-circuits to the exact identity
    matrix, which keeps identity warps bit-exact through rendering.
    """
    src = np.asarray(src, dtype=np.float64).reshape(3, 2)
    dst = np.asarray(dst, dtype=np.float64).reshape(3, 2)
    d = dst - src
    if (d == d[0]).all():
        # pure translation (identity included): exact coefficients, no
        # solver round-off
        return np.array([[1.0, 0.0, d[0, 0]], [0.0, 1.0, d[0, 1]]])
    cross = (src[1, 0] - src[0, 0]) * (src[2, 1] - src[0, 1]) - (
        src[2, 0] - src[0, 0]
    ) * (src[1, 1] - src[0, 1])
    if abs(cross) <= 2.0 * AREA_EPS:
        raise DegenerateGeometryError("source triangle is degenerate")
    m = np.column_stack([src, np.ones(3)])
    coef = np.linalg.solve(m, dst)
    return coef.T.copy()


def _triangle_cross(pts: np.ndarray, tris: np.ndarray) -> np.ndarray:
    """Twice the signed area of each triangle."""
    p = pts[tris]
    return (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1]) - (
        p[:, 2, 0] - p[:, 0, 0]
    ) * (p[:, 1, 1] - p[:, 0, 1])


def _flagged_triangles(src: np.ndarray, dst: np.ndarray, tris: np.ndarray) -> np.ndarray:
    """Indices of triangles whose stabilized copy flipped or collapsed."""
    cs = _triangle_cross(src, tris)
    cd = _triangle_cross(dst, tris)
    return np.nonzero(np.sign(cs) * cd <= 2.0 * AREA_EPS)[0]


@dataclass(frozen=True)
class FrameWarp:
    """One frame's triangle list with original/stabilized vertex positions."""

    triangles: np.ndarray  # (K, 3) int
    src: np.ndarray  # (V, 2) original positions
    dst: np.ndarray  # (V, 2) stabilized positions
    affines: np.ndarray  # (K, 2, 3), src -> dst per triangle
    flipped: np.ndarray  # indices into triangles

    def inverse_affines(self) -> np.ndarray:
        """Per-triangle dst->src maps; collapsed triangles get zero maps."""
        lin = self.affines[:, :, :2]
        trans = self.affines[:, :, 2]
        det = lin[:, 0, 0] * lin[:, 1, 1] - lin[:, 0, 1] * lin[:, 1, 0]
        inv = np.zeros_like(self.affines)
        ok = det != 0.0
        d = det[ok]
        inv[ok, 0, 0] = lin[ok, 1, 1] / d
        inv[ok, 0, 1] = -lin[ok, 0, 1] / d
        inv[ok, 1, 0] = -lin[ok, 1, 0] / d
        inv[ok, 1, 1] = lin[ok, 0, 0] / d
        inv[ok, :, 2] = -np.einsum("kij,kj->ki", inv[ok, :, :2], trans[ok])
        return inv


@dataclass(frozen=True)
class WarpField:
    """Per-frame warps plus the clip geometry.

    The last n_controls vertices of every frame are the border control
    ring, in ring order; their stabilized positions trace the forward
    image of the frame boundary, which is what the crop search tests
    against.
    """

    frame_size: tuple[int, int]
    n_controls: int
    frames: tuple[FrameWarp, ...]

    def __len__(self) -> int:
        return len(self.frames)


def build_warp_field(
    meshes: list[FrameMesh],
    stabilized_features: TrajectorySet,
    stabilized_controls: StabilizedControlPoints | np.ndarray,
) -> WarpField:
    """One affine per triangle per frame, from original to stabilized."""
    ctrl = (
        stabilized_controls.points
        if isinstance(stabilized_controls, StabilizedControlPoints)
        else np.asarray(stabilized_controls, dtype=np.float64)
    )
    if len(meshes) != ctrl.shape[0]:
        raise ValueError(
            f"{len(meshes)} meshes but control points for {ctrl.shape[0]} frames"
        )
    if len(meshes) != stabilized_features.frame_count:
        raise ValueError(
            f"{len(meshes)} meshes but stabilized set spans "
            f"{stabilized_features.frame_count} frames"
        )
    by_id = {tr.id: tr for tr in stabilized_features.trajectories}
    n_controls = ctrl.shape[1]
    frames = []
    for mesh in meshes:
        if mesh.control_points.shape[0] != n_controls:
            raise ValueError(
                f"frame {mesh.frame}: mesh has {mesh.control_points.shape[0]} "
                f"controls, stage-2 output has {n_controls}"
            )
        stab_feat = np.array(
            [by_id[int(tid)].point_at(mesh.frame) for tid in mesh.feature_ids]
        ).reshape(mesh.n_features, 2)
        src = mesh.points
        dst = np.vstack([stab_feat, ctrl[mesh.frame]])
        affines = np.array(
            [triangle_affine(src[tri], dst[tri]) for tri in mesh.triangles]
        ).reshape(-1, 2, 3)
        frames.append(
            FrameWarp(
                triangles=mesh.triangles,
                src=src,
                dst=dst,
                affines=affines,
                flipped=_flagged_triangles(src, dst, mesh.triangles),
            )
        )
    return WarpField(
        frame_size=meshes[0].frame_size if meshes else (0, 0),
        n_controls=n_controls,
        frames=tuple(frames),
    )


def render(frame: GrayFrame, fw: FrameWarp) -> tuple[GrayFrame, int]:
    """Render one stabilized frame; returns it plus the uncovered-pixel count.

    Uncovered pixels (possible when triangles flip) are written as 0.
    """
    tris_xy = fw.dst[fw.triangles]
    out, owner = kernels.rasterize(frame.data, tris_xy, fw.inverse_affines())
    # bilinear weights can round a hair past the value range; in-range
    # samples pass through clip bit-exactly
    np.clip(out, 0.0, 255.0, out=out)
    return GrayFrame.from_array(out), int(np.count_nonzero(owner < 0))


@dataclass(frozen=True)
class RenderStats:
    uncovered_pixels: int
    flipped_triangles: int


def render_all(
    frames: list[GrayFrame], field: WarpField
) -> tuple[list[GrayFrame], RenderStats]:
    if len(frames) != len(field.frames):
        raise ValueError(
            f"{len(frames)} frames but warp field has {len(field.frames)}"
        )
    out = []
    uncovered = 0
    for frame, fw in zip(frames, field.frames):
        got, miss = render(frame, fw)
        out.append(got)
        uncovered += miss
    flipped = sum(len(fw.flipped) for fw in field.frames)
    return out, RenderStats(uncovered_pixels=uncovered, flipped_triangles=flipped)


# --- crop ---


def _points_in_polygon(pts: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Ray-casting containment for each point; boundary points undefined.

    Callers shrink the tested rectangle inward by a small epsilon, so the
    boundary ambiguity never matters.
    """
    x = pts[:, 0][:, None]
    y = pts[:, 1][:, None]
    x1 = poly[:, 0][None, :]
    y1 = poly[:, 1][None, :]
    x2 = np.roll(poly[:, 0], -1)[None, :]
    y2 = np.roll(poly[:, 1], -1)[None, :]
    straddle = (y1 > y) != (y2 > y)
    with np.errstate(divide="ignore", invalid="ignore"):
        xc = x1 + (y - y1) / (y2 - y1) * (x2 - x1)
    hits = straddle & (x < xc)
    return (hits.sum(axis=1) % 2).astype(bool)


def _orient2(ax, ay, bx, by, cx, cy) -> float:
    return (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)


def _segments_cross_properly(p, q, r, s) -> bool:
    o1 = _orient2(*p, *q, *r)
    o2 = _orient2(*p, *q, *s)
    o3 = _orient2(*r, *s, *p)
    o4 = _orient2(*r, *s, *q)
    return (o1 * o2 < 0.0) and (o3 * o4 < 0.0)


def _rect_inside_polygon(rect: tuple[float, float, float, float], poly: np.ndarray) -> bool:
    x0, y0, x1, y1 = rect
    corners = np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]])
    if not _points_in_polygon(corners, poly).all():
        return False
    edges = [
        ((x0, y0), (x1, y0)),
        ((x1, y0), (x1, y1)),
        ((x1, y1), (x0, y1)),
        ((x0, y1), (x0, y0)),
    ]
    n = poly.shape[0]
    for k in range(n):
        r = tuple(poly[k])
        s = tuple(poly[(k + 1) % n])
        for p, q in edges:
            if _segments_cross_properly(p, q, r, s):
                return False
    return True


def common_crop(field: WarpField) -> tuple[int, int, int, int]:
    """Largest centered same-aspect rectangle valid in every frame.

    Binary search on the scale of a rectangle centered on the frame,
    tested (shrunk by a tiny epsilon) against each frame's stabilized
    border polygon.  Returns (x0, y0, width, height) in pixels; if even
    the center point is exposed somewhere, returns the full frame with a
    warning.
    """
    w, h = field.frame_size
    full = (0, 0, w, h)
    if not field.frames:
        return full
    polys = [fw.dst[-field.n_controls:] for fw in field.frames]
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0

    def fits(scale: float) -> bool:
        hw = scale * (w - 1) / 2.0
        hh = scale * (h - 1) / 2.0
        rect = (
            cx - hw + _CROP_EPS,
            cy - hh + _CROP_EPS,
            cx + hw - _CROP_EPS,
            cy + hh - _CROP_EPS,
        )
        return all(_rect_inside_polygon(rect, p) for p in polys)

    if not fits(0.0):
        log.warning("crop search found no common interior; keeping full frame")
        return full
    if fits(1.0):
        return full
    lo, hi = 0.0, 1.0
    for _ in range(CROP_SEARCH_ITERS):
        mid = 0.5 * (lo + hi)
        if fits(mid):
            lo = mid
        else:
            hi = mid
    hw = lo * (w - 1) / 2.0
    hh = lo * (h - 1) / 2.0
    x0 = max(0, int(np.ceil(cx - hw - _CROP_EPS)))
    y0 = max(0, int(np.ceil(cy - hh - _CROP_EPS)))
    x1 = min(w - 1, int(np.floor(cx + hw + _CROP_EPS)))
    y1 = min(h - 1, int(np.floor(cy + hh + _CROP_EPS)))
    return (x0, y0, x1 - x0 + 1, y1 - y0 + 1)


def apply_crop(frame: GrayFrame, rect: tuple[int, int, int, int]) -> GrayFrame:
    x0, y0, w, h = rect
    if w < 1 or h < 1 or x0 < 0 or y0 < 0 or x0 + w > frame.width or y0 + h > frame.height:
        raise ValueError(f"crop {rect} does not fit inside {frame.width}x{frame.height}")
    return GrayFrame.from_array(frame.data[y0:y0 + h, x0:x0 + w])


# --- warp field file format ---
#
# Line 1:    <frame_count> <width> <height>
# Per frame: <n_triangles> <n_vertices> <n_controls>
#            then per triangle 6 affine coefficients (row-major 2x3) and
#            3 vertex indices; then per vertex "ox oy sx sy" with the
#            original and stabilized positions.  Floats use repr() and
#            round-trip exactly.


def save_warpfield(field: WarpField, path: str | Path) -> None:
    w, h = field.frame_size
    lines = [f"{len(field.frames)} {w} {h}"]
    for fw in field.frames:
        lines.append(
            f"{fw.triangles.shape[0]} {fw.src.shape[0]} {field.n_controls}"
        )
        for a, tri in zip(fw.affines, fw.triangles):
            coefs = " ".join(repr(float(v)) for v in a.ravel())
            lines.append(f"{coefs} {tri[0]} {tri[1]} {tri[2]}")
        for o, s in zip(fw.src, fw.dst):
            lines.append(
                f"{float(o[0])!r} {float(o[1])!r} "
                f"{float(s[0])!r} {float(s[1])!r}"
            )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_warpfield(path: str | Path) -> WarpField:
    text = Path(path).read_text(encoding="utf-8")
    lines = text.splitlines()
    pos = 0

    def take() -> tuple[int, list[str]]:
        nonlocal pos
        while pos < len(lines) and not lines[pos].strip():
            pos += 1
        if pos >= len(lines):
            raise ParseError("unexpected end of file", line=len(lines))
        pos += 1
        return pos, lines[pos - 1].split()

    ln, head = take()
    if len(head) != 3:
        raise ParseError("header must be '<frames> <width> <height>'", line=ln)
    try:
        count, w, h = (int(v) for v in head)
    except ValueError:
        raise ParseError("non-integer header field", line=ln) from None
    n_controls = None
    frames = []
    for _ in range(count):
        ln, head = take()
        if len(head) != 3:
            raise ParseError(
                "frame header must be '<triangles> <vertices> <controls>'", line=ln
            )
        try:
            ntri, nvert, nc = (int(v) for v in head)
        except ValueError:
            raise ParseError("non-integer frame header field", line=ln) from None
        if n_controls is None:
            n_controls = nc
        elif nc != n_controls:
            raise ParseError(
                f"inconsistent control count {nc} (expected {n_controls})", line=ln
            )
        if nvert < nc:
            raise ParseError(f"fewer vertices ({nvert}) than controls ({nc})", line=ln)
        affines = np.empty((ntri, 2, 3))
        tris = np.empty((ntri, 3), dtype=np.int64)
        for k in range(ntri):
            ln, parts = take()
            if len(parts) != 9:
                raise ParseError("triangle line needs 6 coefficients + 3 indices", line=ln)
            try:
                affines[k] = np.array([float(v) for v in parts[:6]]).reshape(2, 3)
                tris[k] = [int(v) for v in parts[6:]]
            except ValueError:
                raise ParseError("malformed triangle line", line=ln) from None
        if ntri and (tris.min() < 0 or tris.max() >= nvert):
            raise ParseError(
                f"triangle vertex index out of range [0, {nvert - 1}]", line=ln
            )
        src = np.empty((nvert, 2))
        dst = np.empty((nvert, 2))
        for k in range(nvert):
            ln, parts = take()
            if len(parts) != 4:
                raise ParseError("vertex line needs 'ox oy sx sy'", line=ln)
            try:
                vals = [float(v) for v in parts]
            except ValueError:
                raise ParseError("malformed vertex line", line=ln) from None
            src[k] = vals[:2]
            dst[k] = vals[2:]
        frames.append(
            FrameWarp(
                triangles=tris,
                src=src,
                dst=dst,
                affines=affines,
                flipped=_flagged_triangles(src, dst, tris),
            )
        )
    while pos < len(lines) and not lines[pos].strip():
        pos += 1
    if pos != len(lines):
        raise ParseError("trailing content after last frame", line=pos + 1)
    return WarpField(
        frame_size=(w, h),
        n_controls=0 if n_controls is None else n_controls,
        frames=tuple(frames),
    )
