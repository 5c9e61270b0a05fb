"""Global quadratic smoothing of feature trajectories.

Every energy term is a weighted sum of squared linear residuals in the
unknown stabilized coordinates, so the whole objective collapses to

    E(x) = x' A x - 2 b' x + c,   A = sum w q q',  b = sum w t q

over residuals q'x - t with weight w.  A is symmetric positive definite as
soon as the regularizer is present (it contributes the identity), which
makes the minimizer the unique solution of A x = b.

Terms:
  * first-difference smoothing, per axis, scaled by a falloff in the
    observed step size so intentional pans are not flattened;
  * second-difference smoothing toward constant velocity;
  * per-triangle shape preservation: each inner-triangle vertex is
    reconstructed from the other two via the original triangle's local
    similarity coordinates, and the reconstruction error is penalized,
    scaled by the local motion-fit weight of that vertex;
  * cross-triangle consistency: the opposite vertex of each triangle in an
    adjacent inner pair is expressed in the other triangle's barycentric
    frame and reconstructed from stabilized vertices;
  * a unit-weight tie to the original positions, which also guarantees
    positive definiteness.

Geometry coefficients (similarity and barycentric coordinates) always come
from the original, observed meshes; only vertex positions are unknowns.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse

from .errors import DegenerateGeometryError, SolverError
from .mesh import FrameMesh, barycentric, build_all_meshes
from .trajectory import FeatureTrajectory, TrajectorySet
from .weights import (
    LsmParams,
    LsmTable,
    TemporalWeightParams,
    build_lsm_table,
    temporal_weight,
)

__all__ = [
    "StageOneConfig",
    "UnknownIndex",
    "QuadraticProblem",
    "add_smooth1",
    "add_smooth2",
    "add_intersim",
    "add_intrasim",
    "add_reg",
    "assemble_stage1",
    "solve",
    "stabilize_stage1",
    "dump_problem",
]

DENSE_CUTOFF = 2000


@dataclass(frozen=True)
class StageOneConfig:
    alpha: float = 20.0
    beta: float = 10.0
    gamma: float = 10.0
    epsilon: float = 20.0
    solver_tol: float = 1e-10
    max_iter_factor: int = 10
    dense_cutoff: int = DENSE_CUTOFF
    temporal: TemporalWeightParams = TemporalWeightParams()
    lsm: LsmParams = LsmParams()

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma", "epsilon"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.solver_tol <= 0.0:
            raise ValueError(f"solver_tol must be positive, got {self.solver_tol}")


class UnknownIndex:
    """Column layout of the stacked unknown vector.

    Trajectories are laid out in ascending id order; within a trajectory,
    frames in order; per frame, x then y.  Keeps enough structure (ids,
    start frames, frame geometry, original values) to rebuild a
    TrajectorySet from a solution vector.
    """

    def __init__(self, ts: TrajectorySet):
        self.frame_count = ts.frame_count
        self.frame_size = ts.frame_size
        self._offset: dict[int, int] = {}
        self._start: dict[int, int] = {}
        self._length: dict[int, int] = {}
        self._order: list[int] = []
        off = 0
        for tr in sorted(ts.trajectories, key=lambda r: r.id):
            self._offset[tr.id] = off
            self._start[tr.id] = tr.start_frame
            self._length[tr.id] = len(tr)
            self._order.append(tr.id)
            off += len(tr)
        self.n = 2 * off
        x0 = np.empty(self.n)
        for tr in ts.trajectories:
            base = 2 * self._offset[tr.id]
            x0[base:base + 2 * len(tr)] = tr.points.ravel()
        x0.flags.writeable = False
        self.x0 = x0

    def col(self, tid: int, t: int, axis: int) -> int:
        """Column of (trajectory tid, frame t, axis); axis 0 is x, 1 is y."""
        start = self._start[tid]
        return 2 * (self._offset[tid] + (t - start)) + axis

    def base(self, tid: int) -> int:
        """Column of the trajectory's first frame, x axis."""
        return 2 * self._offset[tid]

    def unpack(self, x: np.ndarray) -> TrajectorySet:
        if x.shape != (self.n,):
            raise ValueError(f"expected solution of shape ({self.n},), got {x.shape}")
        trajs = []
        for tid in self._order:
            base = 2 * self._offset[tid]
            ln = self._length[tid]
            pts = x[base:base + 2 * ln].reshape(ln, 2).copy()
            trajs.append(FeatureTrajectory(
                id=tid, start_frame=self._start[tid], points=pts))
        return TrajectorySet(tuple(trajs), self.frame_count, self.frame_size)


class QuadraticProblem:
    """Accumulates weighted squared residuals sum w (q'x - t)^2.

    Entries are collected in coordinate form and only summed into a CSR
    matrix when first needed, so assembly cost is linear in the number of
    residual coefficients.
    """

    def __init__(self, index: UnknownIndex):
        self.index = index
        self.n = index.n
        self._ci: list[np.ndarray] = []
        self._cj: list[np.ndarray] = []
        self._cv: list[np.ndarray] = []
        self.b = np.zeros(self.n)
        self.const = 0.0
        self.n_residuals = 0
        self._mat: scipy.sparse.csr_matrix | None = None

    def add_batch(
        self,
        weights: np.ndarray | float,
        cols: np.ndarray,
        coefs: np.ndarray,
        targets: np.ndarray | None = None,
    ) -> None:
        """Add residual rows: weights (R,), cols (R,m) int, coefs (R,m).

        Each row r contributes weights[r] * (coefs[r] . x[cols[r]] - t_r)^2.
        targets defaults to zero.
        """
        cols = np.asarray(cols, dtype=np.int64)
        coefs = np.asarray(coefs, dtype=np.float64)
        if cols.ndim != 2 or cols.shape != coefs.shape:
            raise ValueError(f"cols/coefs shape mismatch: {cols.shape} vs {coefs.shape}")
        r, m = cols.shape
        if r == 0:
            return
        w = np.broadcast_to(np.asarray(weights, dtype=np.float64), (r,))
        if not np.all(np.isfinite(coefs)) or not np.all(np.isfinite(w)):
            raise ValueError("non-finite residual coefficients")
        if np.any(w < 0.0):
            raise ValueError("negative residual weight")
        if cols.min() < 0 or cols.max() >= self.n:
            raise IndexError("residual column out of range")

        wcc = w[:, None, None] * (coefs[:, :, None] * coefs[:, None, :])
        self._ci.append(np.broadcast_to(cols[:, :, None], (r, m, m)).ravel())
        self._cj.append(np.broadcast_to(cols[:, None, :], (r, m, m)).ravel())
        self._cv.append(wcc.ravel())
        if targets is not None:
            t = np.broadcast_to(np.asarray(targets, dtype=np.float64), (r,))
            if not np.all(np.isfinite(t)):
                raise ValueError("non-finite residual target")
            np.add.at(self.b, cols.ravel(), ((w * t)[:, None] * coefs).ravel())
            self.const += float(w @ (t * t))
        self.n_residuals += r
        self._mat = None

    def add_residual(self, weight, cols, coefs, target=0.0) -> None:
        self.add_batch(
            np.asarray([weight]),
            np.asarray([cols]),
            np.asarray([coefs]),
            np.asarray([target]),
        )

    def matrix(self) -> scipy.sparse.csr_matrix:
        if self._mat is None:
            if self._ci:
                i = np.concatenate(self._ci)
                j = np.concatenate(self._cj)
                v = np.concatenate(self._cv)
            else:
                i = j = np.zeros(0, dtype=np.int64)
                v = np.zeros(0)
            mat = scipy.sparse.coo_matrix((v, (i, j)), shape=(self.n, self.n))
            self._mat = mat.tocsr()
        return self._mat

    def objective(self, x: np.ndarray) -> float:
        a = self.matrix()
        return float(x @ (a @ x) - 2.0 * (self.b @ x) + self.const)

    def gradient(self, x: np.ndarray) -> np.ndarray:
        a = self.matrix()
        return 2.0 * (a @ x - self.b)

    def solve_vector(
        self,
        x0: np.ndarray | None = None,
        dense_cutoff: int = DENSE_CUTOFF,
        tol: float = 1e-10,
        max_iter_factor: int = 10,
    ) -> np.ndarray:
        if self.n == 0:
            return np.zeros(0)
        a = self.matrix()
        if self.n <= dense_cutoff:
            try:
                cf = scipy.linalg.cho_factor(a.toarray())
            except np.linalg.LinAlgError as exc:
                raise SolverError(f"normal matrix not positive definite: {exc}") from None
            return scipy.linalg.cho_solve(cf, self.b)
        if x0 is None:
            x0 = np.zeros(self.n)
        return _pcg(a, self.b, x0, tol, max_iter_factor * self.n)


def _pcg(a, b, x0, tol, max_iter):
    """Conjugate gradient with diagonal preconditioning.

    Stops when ||A x - b|| <= tol * ||b||.  The regularizer puts the
    identity inside A, so the diagonal is strictly positive and the
    smallest eigenvalue is at least the reg weight; convergence is fast in
    practice.
    """
    diag = np.asarray(a.diagonal())
    if np.any(diag <= 0.0):
        raise SolverError("normal matrix has a non-positive diagonal entry")
    inv_diag = 1.0 / diag
    bnorm = float(np.linalg.norm(b))
    target = tol * bnorm if bnorm > 0.0 else tol
    x = x0.astype(np.float64, copy=True)
    r = b - a @ x
    z = inv_diag * r
    p = z.copy()
    rz = float(r @ z)
    rnorm = float(np.linalg.norm(r))
    for _ in range(max_iter):
        if rnorm <= target:
            return x
        ap = a @ p
        pap = float(p @ ap)
        if pap <= 0.0:
            raise SolverError(
                "encountered non-positive curvature; matrix is not positive definite",
                residual=rnorm,
            )
        alpha = rz / pap
        x += alpha * p
        r -= alpha * ap
        rnorm = float(np.linalg.norm(r))
        z = inv_diag * r
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    if rnorm <= target:
        return x
    raise SolverError(
        f"conjugate gradient did not reach tolerance in {max_iter} iterations",
        residual=rnorm,
    )


# --- term assembly ---


def add_smooth1(prob: QuadraticProblem, ts: TrajectorySet, cfg: StageOneConfig) -> None:
    """First-difference smoothing with step-size-adaptive weight, per axis.

    The falloff argument is the magnitude of the observed step on that
    axis; large intentional motion therefore weakens its own smoothing.
    """
    sigma = cfg.temporal.sigma
    for tr in ts.trajectories:
        ln = len(tr)
        if ln < 2:
            continue
        base = prob.index.base(tr.id)
        steps = 2 * np.arange(ln - 1, dtype=np.int64)
        for axis in (0, 1):
            d = np.abs(np.diff(tr.points[:, axis]))
            w = cfg.alpha * temporal_weight(d, sigma)
            c0 = base + axis + steps
            cols = np.column_stack([c0 + 2, c0])
            coefs = np.broadcast_to(np.array([1.0, -1.0]), (ln - 1, 2))
            prob.add_batch(w, cols, coefs)


def add_smooth2(prob: QuadraticProblem, ts: TrajectorySet, cfg: StageOneConfig) -> None:
    """Second-difference (constant velocity) smoothing, per axis."""
    for tr in ts.trajectories:
        ln = len(tr)
        if ln < 3:
            continue
        base = prob.index.base(tr.id)
        steps = 2 * np.arange(ln - 2, dtype=np.int64)
        for axis in (0, 1):
            c0 = base + axis + steps
            cols = np.column_stack([c0, c0 + 2, c0 + 4])
            coefs = np.broadcast_to(np.array([1.0, -2.0, 1.0]), (ln - 2, 3))
            prob.add_batch(cfg.beta, cols, coefs)


def add_reg(prob: QuadraticProblem, ts: TrajectorySet, weight: float = 1.0) -> None:
    """Tie every unknown to its original value with unit weight."""
    n = prob.n
    cols = np.arange(n, dtype=np.int64).reshape(n, 1)
    coefs = np.ones((n, 1))
    prob.add_batch(weight, cols, coefs, targets=prob.index.x0)


def _feature_columns(prob: QuadraticProblem, mesh: FrameMesh) -> np.ndarray:
    """x-axis column per feature vertex of a mesh (y is that plus one)."""
    t = mesh.frame
    return np.fromiter(
        (prob.index.col(int(tid), t, 0) for tid in mesh.feature_ids),
        dtype=np.int64,
        count=mesh.n_features,
    )


def add_intersim(
    prob: QuadraticProblem,
    ts: TrajectorySet,
    meshes: list[FrameMesh],
    lsm_table: LsmTable,
    cfg: StageOneConfig,
) -> None:
    """Shape preservation over inner triangles.

    For each inner triangle and each of its three vertices in turn, the
    vertex is reconstructed from the other two using the original
    triangle's local similarity coordinates; the squared reconstruction
    error is weighted by gamma times the reconstructed vertex's local
    motion-fit weight.  Frames without inner triangles contribute nothing.
    """
    for mesh in meshes:
        tri = mesh.triangles[mesh.inner]
        if tri.shape[0] == 0:
            continue
        t = mesh.frame
        pts = mesh.points
        colx = _feature_columns(prob, mesh)
        coly = colx + 1
        lsw = np.array([lsm_table.get(t, int(tid)) for tid in mesh.feature_ids])
        for role in range(3):
            v1 = tri[:, role]
            v2 = tri[:, (role + 1) % 3]
            v3 = tri[:, (role + 2) % 3]
            e = pts[v3] - pts[v2]
            d = pts[v1] - pts[v2]
            l2 = np.einsum("ij,ij->i", e, e)
            if np.any(l2 <= 0.0):
                raise DegenerateGeometryError(
                    f"zero-length triangle edge in frame {t}"
                )
            a = np.einsum("ij,ij->i", d, e) / l2
            bb = (d[:, 0] * e[:, 1] - d[:, 1] * e[:, 0]) / l2
            w = cfg.gamma * lsw[v1]
            one = np.ones_like(a)
            # x residual: (1-a) x2 + a x3 - b y2 + b y3 - x1
            prob.add_batch(
                w,
                np.stack([colx[v2], colx[v3], coly[v2], coly[v3], colx[v1]], axis=1),
                np.stack([1.0 - a, a, -bb, bb, -one], axis=1),
            )
            # y residual: (1-a) y2 + a y3 + b x2 - b x3 - y1
            prob.add_batch(
                w,
                np.stack([coly[v2], coly[v3], colx[v2], colx[v3], coly[v1]], axis=1),
                np.stack([1.0 - a, a, bb, -bb, -one], axis=1),
            )


def add_intrasim(
    prob: QuadraticProblem,
    ts: TrajectorySet,
    meshes: list[FrameMesh],
    cfg: StageOneConfig,
) -> None:
    """Cross-triangle consistency over adjacent inner pairs.

    For each unordered adjacent pair, the vertex of each triangle opposite
    the shared edge is written in the other triangle's barycentric frame
    (from original positions) and reconstructed from stabilized vertices;
    both reconstructions are penalized once.
    """
    for mesh in meshes:
        inner = set(int(i) for i in mesh.inner)
        if not inner:
            continue
        pts = mesh.points
        colx = _feature_columns(prob, mesh)
        coly = colx + 1
        cols_rows: list[np.ndarray] = []
        coef_rows: list[np.ndarray] = []
        for i, j, (u, v) in mesh.adjacency:
            if i not in inner or j not in inner:
                continue
            ti = mesh.triangles[i]
            tj = mesh.triangles[j]
            opp_i = int(ti[(ti != u) & (ti != v)][0])
            opp_j = int(tj[(tj != u) & (tj != v)][0])
            for opp, other in ((opp_i, tj), (opp_j, ti)):
                wa, wb, wc = barycentric(
                    pts[opp], pts[other[0]], pts[other[1]], pts[other[2]]
                )
                for cax in (colx, coly):
                    cols_rows.append(np.array(
                        [cax[other[0]], cax[other[1]], cax[other[2]], cax[opp]]
                    ))
                    coef_rows.append(np.array([wa, wb, wc, -1.0]))
        if cols_rows:
            prob.add_batch(
                cfg.epsilon, np.array(cols_rows), np.array(coef_rows)
            )


def assemble_stage1(
    ts: TrajectorySet,
    meshes: list[FrameMesh],
    lsm_table: LsmTable,
    cfg: StageOneConfig = StageOneConfig(),
) -> QuadraticProblem:
    """Build the full stage-1 problem over all five terms."""
    if len(meshes) != ts.frame_count:
        raise ValueError(
            f"expected {ts.frame_count} meshes, got {len(meshes)}"
        )
    prob = QuadraticProblem(UnknownIndex(ts))
    add_reg(prob, ts)
    add_smooth1(prob, ts, cfg)
    add_smooth2(prob, ts, cfg)
    add_intersim(prob, ts, meshes, lsm_table, cfg)
    add_intrasim(prob, ts, meshes, cfg)
    return prob


def solve(prob: QuadraticProblem, cfg: StageOneConfig = StageOneConfig()) -> TrajectorySet:
    """Minimize the assembled objective and unpack stabilized trajectories."""
    x = prob.solve_vector(
        x0=prob.index.x0.copy(),
        dense_cutoff=cfg.dense_cutoff,
        tol=cfg.solver_tol,
        max_iter_factor=cfg.max_iter_factor,
    )
    return prob.index.unpack(x)


def stabilize_stage1(
    ts: TrajectorySet,
    meshes: list[FrameMesh] | None = None,
    cfg: StageOneConfig = StageOneConfig(),
    lsm_table: LsmTable | None = None,
) -> TrajectorySet:
    """Mesh (if needed), weight, assemble, and solve in one call."""
    if meshes is None:
        meshes = build_all_meshes(ts)
    if lsm_table is None:
        lsm_table = build_lsm_table(ts, cfg.lsm)
    prob = assemble_stage1(ts, meshes, lsm_table, cfg)
    return solve(prob, cfg)


def dump_problem(prob: QuadraticProblem) -> str:
    """Text dump: matrix in coordinate form, then RHS, then the constant."""
    a = prob.matrix().tocoo()
    lines = [f"matrix {prob.n} {a.nnz}"]
    for i, j, v in zip(a.row, a.col, a.data):
        lines.append(f"{i} {j} {float(v)!r}")
    lines.append(f"rhs {prob.n}")
    for i, v in enumerate(prob.b):
        lines.append(f"{i} {float(v)!r}")
    lines.append(f"const {float(prob.const)!r}")
    return "\n".join(lines) + "\n"
