"""Ray and line diagnostics for convex graphs, cones, and affine separators.

Detection runs a structural pass first: tree shapes whose flat directions
are decidable in closed form (null spaces, piece-activity linear programs)
give exact answers.  Anything else falls back to sampled affinity along
direction grids, reported with exact=False.

A ray here is a maximal segment {x + td : t >= 0} intersected with U, of
positive length, on which f is affine; the far end may reach infinity or
the boundary of U.  A line is the full intersection of U with a straight
line on which f is affine end to end.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .domains import DomainSpec, ToleranceField
from .errors import (
    ConeContainsLine,
    InputError,
    LineDetected,
    PointOutsideDomain,
    VerificationError,
)
from .expr import (
    AffineNode,
    ConvexFn,
    ExpAffineNode,
    LogSumExpNode,
    MaxAffineNode,
    MaxNode,
    NormNode,
    PowerNode,
    QuadraticNode,
    SmoothMaxNode,
    SumNode,
    subgradient,
)
from .utils import min_norm_point_hull, unit_directions

AFFINITY_TOL = 1e-10
LP_TOL = 1e-9
FAR_CAP = 1e6


@dataclass
class RayReport:
    contains_ray: bool
    witness: tuple | None  # (point, direction)
    exact: bool


@dataclass
class LineReport:
    contains_line: bool
    witness: np.ndarray | None  # direction
    exact: bool


# ---------------------------------------------------------------------------
# structural layer


@dataclass
class _Flat:
    """Closed-form summary of where a tree can be affine.

    kind "subspace": affine along d for every base point iff d in span(basis),
    with direction slope = slope . d; strictly curved off the span.
    kind "norm"/"norms_plus": weighted distance terms force radial geometry.
    kind "poly"/"poly_power": piecewise affine (or its square), decided by LPs.
    kind "smax_affine": smoothed fold of affine pieces; rays always exist,
    lines exactly along the equal-slope subspace.
    """

    kind: str
    basis: np.ndarray | None = None
    slope: np.ndarray | None = None
    A: np.ndarray | None = None
    b: np.ndarray | None = None
    centers: list = field(default_factory=list)


def _null_basis(M, rtol: float = 1e-10) -> np.ndarray:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    n = M.shape[1]
    if M.shape[0] == 0 or not np.any(np.abs(M) > 0):
        return np.eye(n)
    u, s, vt = np.linalg.svd(M)
    tol = rtol * max(1.0, s[0] if s.size else 0.0)
    rank = int(np.sum(s > tol))
    return vt[rank:].T


def _intersect_spans(B1: np.ndarray, B2: np.ndarray) -> np.ndarray:
    n = B1.shape[0]
    rows = []
    for B in (B1, B2):
        comp = _null_basis(B.T) if B.shape[1] else np.eye(n)
        if comp.shape[1]:
            rows.append(comp.T)
    if not rows:
        return np.eye(n)
    return _null_basis(np.vstack(rows))


def _in_span(B: np.ndarray, d: np.ndarray, tol: float = 1e-10) -> bool:
    if B.shape[1] == 0:
        return bool(np.linalg.norm(d) <= tol)
    proj = B @ (B.T @ d)
    return bool(np.linalg.norm(proj - d) <= tol * max(1.0, np.linalg.norm(d)))


def _flat(node) -> _Flat | None:
    n = node.dim
    if isinstance(node, AffineNode):
        return _Flat("subspace", basis=np.eye(n), slope=node.a.copy())
    if isinstance(node, QuadraticNode):
        return _Flat("subspace", basis=_null_basis(node.Q), slope=node.a.copy())
    if isinstance(node, LogSumExpNode):
        return _Flat("subspace", basis=_null_basis(node.A - node.A[0]), slope=node.A[0].copy())
    if isinstance(node, ExpAffineNode):
        return _Flat("subspace", basis=_null_basis(node.a.reshape(1, -1)), slope=np.zeros(n))
    if isinstance(node, NormNode):
        return _Flat("norm", centers=[node.center.copy()])
    if isinstance(node, MaxAffineNode):
        if node.A.shape[0] == 1:
            return _Flat("subspace", basis=np.eye(n), slope=node.A[0].copy())
        return _Flat("poly", A=node.A.copy(), b=node.b.copy())
    if isinstance(node, MaxNode):
        kids = node.children
        if all(isinstance(c, AffineNode) for c in kids):
            A = np.vstack([c.a for c in kids])
            b = np.array([c.b for c in kids])
            return _flat(MaxAffineNode(A, b))
        return None
    if isinstance(node, PowerNode):
        child = _flat(node.child)
        if child is None:
            return None
        if child.kind == "norm":
            return _Flat("subspace", basis=np.zeros((n, 0)), slope=np.zeros(n))
        if child.kind == "subspace":
            basis = _intersect_spans(child.basis, _null_basis(child.slope.reshape(1, -1)))
            return _Flat("subspace", basis=basis, slope=np.zeros(n))
        if child.kind == "poly":
            return _Flat("poly_power", A=child.A, b=child.b)
        return None
    if isinstance(node, SmoothMaxNode):
        fu, fv = _flat(node.u), _flat(node.v)

        # children must be affine everywhere (full basis) for the fold analysis
        def affine_like(s):
            return s is not None and (
                s.kind == "smax_affine"
                or (s.kind == "subspace" and s.basis.shape[1] == n)
            )

        if not (affine_like(fu) and affine_like(fv)):
            return None
        Bu = fu.basis if fu.kind == "smax_affine" else np.eye(n)
        Bv = fv.basis if fv.kind == "smax_affine" else np.eye(n)
        inter = _intersect_spans(Bu, Bv)
        diff = (fu.slope - fv.slope).reshape(1, -1)
        basis = _intersect_spans(inter, _null_basis(diff))
        return _Flat("smax_affine", basis=basis, slope=fu.slope.copy())
    if isinstance(node, SumNode):
        kids = [(_flat(c), w) for c, w in zip(node.children, node.weights) if w > 0]
        if any(k is None for k, _ in kids):
            return None
        if len(kids) == 1:
            k, w = kids[0]
            if k.kind == "subspace":
                return _Flat("subspace", basis=k.basis, slope=w * k.slope)
            if k.kind == "norm":
                return k
            if k.kind == "poly":
                return _Flat("poly", A=w * k.A, b=w * k.b + node.const)
            return None
        kinds = {k.kind for k, _ in kids}
        if not kinds <= {"subspace", "norm"}:
            return None
        basis = np.eye(n)
        slope = np.zeros(n)
        centers = []
        for k, w in kids:
            if k.kind == "subspace":
                basis = _intersect_spans(basis, k.basis)
                slope = slope + w * k.slope
            else:
                centers.extend(k.centers)
        if not centers:
            return _Flat("subspace", basis=basis, slope=slope)
        return _Flat("norms_plus", basis=basis, slope=slope, centers=centers)
    return None


# ---------------------------------------------------------------------------
# piece-activity linear programs for max-affine trees


def _domain_rows(U: DomainSpec):
    hs = U.halfspaces()
    if hs is None:
        return np.zeros((0, U.dim)), np.zeros(0)
    return hs


def _cell_interior(D, rhs, UA, Ub):
    """Max-slack point of {Dx <= rhs} inside U; returns (slack, x).

    A tiny L1 penalty keeps the witness near the origin instead of at the
    solver's box cap when the cell is unbounded.
    """
    n = D.shape[1]
    ncon = D.shape[0] + UA.shape[0]
    rows = np.vstack([D, UA])
    A_ub = np.block([
        [rows, np.zeros((ncon, n)), np.ones((ncon, 1))],
        [np.eye(n), -np.eye(n), np.zeros((n, 1))],
        [-np.eye(n), -np.eye(n), np.zeros((n, 1))],
    ])
    b_ub = np.concatenate([rhs, Ub, np.zeros(2 * n)])
    c = np.concatenate([np.zeros(n), np.full(n, 1e-6), [-1.0]])
    bounds = [(-1e7, 1e7)] * n + [(0, 1e7)] * n + [(0, 1)]
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, bounds=bounds, method="highs")
    if res.status != 0:
        return 0.0, None
    return float(res.x[-1]), res.x[:n]


def _recession_dirs(D, UA):
    """Nonzero directions of {Dd <= 0, UA d <= 0}, via +-coordinate objectives."""
    n = D.shape[1]
    A_ub = np.vstack([D, UA]) if UA.shape[0] else D
    found = []
    for m in range(n):
        for sgn in (1.0, -1.0):
            c = np.zeros(n)
            c[m] = -sgn
            res = linprog(c, A_ub=A_ub, b_ub=np.zeros(A_ub.shape[0]), bounds=[(-1, 1)] * n, method="highs")
            if res.status == 0 and -res.fun > 1e-6:
                d = res.x / np.linalg.norm(res.x)
                if not any(np.allclose(d, e, atol=1e-8) for e in found):
                    found.append(d)
    return found


def _poly_detect(A, b, U: DomainSpec, slope_zero: bool):
    """Exact ray/line reports for max-affine (or its square when slope_zero)."""
    n = A.shape[1]
    k = A.shape[0]
    UA, Ub = _domain_rows(U)
    if U.kind == "ball":
        return None, None
    ray = None
    line = None
    for i in range(k):
        others = [j for j in range(k) if j != i]
        D = A[others] - A[i]
        rhs = b[i] - b[np.array(others)] if others else np.zeros(0)
        D = D.reshape(len(others), n)
        slack, x0 = _cell_interior(D, rhs, UA, Ub)
        if slack <= LP_TOL or x0 is None:
            continue
        # unbounded end: recession direction of the activity cell inside U
        if slope_zero:
            rec = _recession_dirs_eq(D, UA, A[i])
        else:
            rec = _recession_dirs(D, UA)
        if ray is None and rec:
            ray = (x0, rec[0])
        # bounded end: segment from the cell interior to a domain facet
        if UA.shape[0]:
            for fj in range(UA.shape[0]):
                y = _facet_touch(D, rhs, UA, Ub, fj, anchor=x0, slope_row=A[i] if slope_zero else None)
                if y is not None and np.linalg.norm(y - x0) > 1e-8:
                    d = (y - x0) / np.linalg.norm(y - x0)
                    if ray is None:
                        ray = (x0, d)
                    break
        # lines: lineality of the cell, boundary-to-boundary chords, facet+recession
        lin_rows = np.vstack([D, np.atleast_2d(A[i])]) if slope_zero else D
        lin = _null_basis(lin_rows) if lin_rows.shape[0] else np.eye(n)
        lin = _restrict_to_domain_lines(lin, UA)
        if line is None and lin.shape[1] >= 1:
            line = lin[:, 0]
        if line is None and UA.shape[0]:
            line = _chord_line(D, rhs, UA, Ub, A[i] if slope_zero else None)
        if line is None and UA.shape[0] and rec:
            for d in rec:
                y = _facet_ray_line(D, rhs, UA, Ub, d, A[i] if slope_zero else None)
                if y is not None:
                    line = d
                    break
        if ray is not None and line is not None:
            break
    ray_rep = RayReport(ray is not None, ray, True)
    line_rep = LineReport(line is not None, line, True)
    return ray_rep, line_rep


def _recession_dirs_eq(D, UA, a_row):
    n = D.shape[1]
    A_ub = np.vstack([D, UA]) if UA.shape[0] else D
    found = []
    for m in range(n):
        for sgn in (1.0, -1.0):
            c = np.zeros(n)
            c[m] = -sgn
            res = linprog(
                c,
                A_ub=A_ub,
                b_ub=np.zeros(A_ub.shape[0]),
                A_eq=np.atleast_2d(a_row),
                b_eq=np.zeros(1),
                bounds=[(-1, 1)] * n,
                method="highs",
            )
            if res.status == 0 and -res.fun > 1e-6:
                d = res.x / np.linalg.norm(res.x)
                if not any(np.allclose(d, e, atol=1e-8) for e in found):
                    found.append(d)
    return found


def _restrict_to_domain_lines(lin, UA):
    """Keep lineality directions that also keep the full line inside U."""
    if lin.shape[1] == 0 or UA.shape[0] == 0:
        return lin
    return _intersect_spans(lin, _null_basis(UA))


def _facet_touch(D, rhs, UA, Ub, facet, anchor, slope_row=None):
    """Closure point of the cell on domain facet `facet`, constant-piece aware."""
    n = D.shape[1]
    A_ub = np.vstack([D, UA])
    b_ub = np.concatenate([rhs, Ub])
    A_eq = [UA[facet]]
    b_eq = [Ub[facet]]
    if slope_row is not None:
        A_eq.append(slope_row)
        b_eq.append(float(slope_row @ anchor))
    res = linprog(
        np.zeros(n),
        A_ub=A_ub,
        b_ub=b_ub,
        A_eq=np.vstack(A_eq),
        b_eq=np.array(b_eq),
        bounds=[(-1e7, 1e7)] * n,
        method="highs",
    )
    return res.x if res.status == 0 else None


def _chord_line(D, rhs, UA, Ub, slope_row=None):
    """Boundary-to-boundary chord within one cell: joint LP over both endpoints."""
    n = D.shape[1]
    nf = UA.shape[0]
    for fa in range(nf):
        for fb in range(fa + 1, nf):
            # vars: y1, y2, sigma; midpoint strictly interior to cell and U
            nv = 2 * n + 1
            rows, rhs_rows = [], []

            def pad(block_y1, block_y2, sig):
                r = np.zeros((block_y1.shape[0], nv))
                r[:, :n] = block_y1
                r[:, n : 2 * n] = block_y2
                r[:, -1] = sig
                return r

            rows.append(pad(D, np.zeros_like(D), 0.0))
            rhs_rows.append(rhs)
            rows.append(pad(np.zeros_like(D), D, 0.0))
            rhs_rows.append(rhs)
            rows.append(pad(UA, np.zeros_like(UA), 0.0))
            rhs_rows.append(Ub)
            rows.append(pad(np.zeros_like(UA), UA, 0.0))
            rhs_rows.append(Ub)
            rows.append(pad(0.5 * D, 0.5 * D, 1.0))
            rhs_rows.append(rhs)
            rows.append(pad(0.5 * UA, 0.5 * UA, 1.0))
            rhs_rows.append(Ub)
            A_ub = np.vstack(rows)
            b_ub = np.concatenate(rhs_rows)
            eq_rows = [
                np.concatenate([UA[fa], np.zeros(n), [0.0]]),
                np.concatenate([np.zeros(n), UA[fb], [0.0]]),
            ]
            eq_b = [Ub[fa], Ub[fb]]
            if slope_row is not None:
                eq_rows.append(np.concatenate([slope_row, -slope_row, [0.0]]))
                eq_b.append(0.0)
            c = np.zeros(nv)
            c[-1] = -1.0
            res = linprog(
                c,
                A_ub=A_ub,
                b_ub=b_ub,
                A_eq=np.vstack(eq_rows),
                b_eq=np.array(eq_b),
                bounds=[(-1e7, 1e7)] * (2 * n) + [(0, 1)],
                method="highs",
            )
            if res.status == 0 and res.x[-1] > LP_TOL:
                y1, y2 = res.x[:n], res.x[n : 2 * n]
                if np.linalg.norm(y2 - y1) > 1e-8:
                    return (y2 - y1) / np.linalg.norm(y2 - y1)
    return None


def _facet_ray_line(D, rhs, UA, Ub, d, slope_row=None):
    """Line shaped like a boundary-anchored ray: facet point plus recession dir."""
    n = D.shape[1]
    if slope_row is not None and abs(float(slope_row @ d)) > 1e-9:
        return None
    for fj in range(UA.shape[0]):
        nv = n + 1
        rows = [
            np.hstack([D, np.ones((D.shape[0], 1))]),
            np.hstack([UA, np.ones((UA.shape[0], 1))]),
        ]
        rhs_rows = [rhs - D @ d, Ub - UA @ d]
        rows.append(np.hstack([D, np.zeros((D.shape[0], 1))]))
        rhs_rows.append(rhs)
        rows.append(np.hstack([UA, np.zeros((UA.shape[0], 1))]))
        rhs_rows.append(Ub)
        A_eq = np.hstack([np.atleast_2d(UA[fj]), np.zeros((1, 1))])
        c = np.zeros(nv)
        c[-1] = -1.0
        res = linprog(
            c,
            A_ub=np.vstack(rows),
            b_ub=np.concatenate(rhs_rows),
            A_eq=A_eq,
            b_eq=np.array([Ub[fj]]),
            bounds=[(-1e7, 1e7)] * n + [(0, 1)],
            method="highs",
        )
        if res.status == 0 and res.x[-1] > LP_TOL:
            return res.x[:n]
    return None


# ---------------------------------------------------------------------------
# sampled fallback


def _exit_times(U: DomainSpec, x, D) -> np.ndarray:
    """Closed-form exit parameter sup{t : x + t d in U} per direction row."""
    D = np.atleast_2d(np.asarray(D, dtype=float))
    m = D.shape[0]
    if U.kind == "all":
        return np.full(m, np.inf)
    x = np.asarray(x, dtype=float)
    if U.kind == "ball":
        diff = x - U.center
        alpha = np.sum(D * D, axis=1)
        beta = D @ diff
        gamma = float(diff @ diff) - U.radius**2
        disc = np.maximum(beta**2 - alpha * gamma, 0.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (-beta + np.sqrt(disc)) / alpha
        t[alpha <= 0] = np.inf
        return np.maximum(t, 0.0)
    A, b = U.halfspaces()
    denom = D @ A.T
    numer = b - A @ x
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(denom > 1e-300, numer[None, :] / denom, np.inf)
    return np.min(ratios, axis=1)


def _exit_time(U: DomainSpec, x, d):
    return float(_exit_times(U, x, np.asarray(d, dtype=float)[None, :])[0])


def _affine_on(f: ConvexFn, x, d, ts) -> bool:
    pts = x[None, :] + ts[:, None] * d[None, :]
    vals = f.eval_batch(pts)
    t0, t1 = ts[0], ts[-1]
    lam = (ts - t0) / (t1 - t0)
    chord = vals[0] * (1 - lam) + vals[-1] * lam
    scale = max(1.0, float(np.max(np.abs(vals))))
    return bool(np.max(np.abs(vals - chord)) <= AFFINITY_TOL * scale)


def _base_points(f: ConvexFn, U: DomainSpec):
    pts = [U.interior_point()]
    rng = np.random.default_rng(0)
    for _ in range(2):
        cand = pts[0] + rng.normal(size=f.dim) * 0.37
        if U.contains(cand):
            pts.append(cand)
    return pts


def _sampled_ray(f: ConvexFn, U: DomainSpec) -> RayReport:
    n = f.dim
    dirs = unit_directions(n, 64)
    for x0 in _base_points(f, U):
        for d in dirs:
            T = _exit_time(U, x0, d)
            if np.isfinite(T):
                if T < 1e-6:
                    continue
                ts = np.linspace(0.0, T * (1 - 1e-7), 33)
                if _affine_on(f, x0, d, ts):
                    return RayReport(True, (x0, d), False)
            else:
                ok = all(
                    _affine_on(f, x0, d, np.linspace(T0, 2.0 * T0, 17))
                    for T0 in (32.0, 512.0)
                )
                if ok:
                    return RayReport(True, (x0 + 32.0 * d, d), False)
    return RayReport(False, None, False)


def _sampled_line(f: ConvexFn, U: DomainSpec) -> LineReport:
    n = f.dim
    dirs = unit_directions(n, 32)
    for x0 in _base_points(f, U):
        for d in dirs:
            Tp = _exit_time(U, x0, d)
            Tm = _exit_time(U, x0, -d)
            hi = Tp * (1 - 1e-7) if np.isfinite(Tp) else 1024.0
            lo = -Tm * (1 - 1e-7) if np.isfinite(Tm) else -1024.0
            if hi - lo < 1e-6:
                continue
            if _affine_on(f, x0, d, np.linspace(lo, hi, 65)):
                return LineReport(True, d, False)
    return LineReport(False, None, False)


# ---------------------------------------------------------------------------
# public detection ops


def detect_graph_ray(f: ConvexFn, U: DomainSpec) -> RayReport:
    flat = _flat(f.root)
    if flat is not None:
        rep = _ray_from_flat(flat, f, U)
        if rep is not None:
            return rep
    return _sampled_ray(f, U)


def detect_graph_line(f: ConvexFn, U: DomainSpec) -> LineReport:
    flat = _flat(f.root)
    if flat is not None:
        rep = _line_from_flat(flat, f, U)
        if rep is not None:
            return rep
    return _sampled_line(f, U)


def _ray_from_flat(flat: _Flat, f: ConvexFn, U: DomainSpec):
    n = f.dim
    if flat.kind == "subspace":
        if flat.basis.shape[1] == 0:
            return RayReport(False, None, True)
        return RayReport(True, (U.interior_point(), flat.basis[:, 0]), True)
    if flat.kind == "norm":
        c = flat.centers[0]
        if U.contains(c):
            step = U.boundary_distance(c)
            step = 1.0 if not np.isfinite(step) else step / 2
            d = np.zeros(n)
            d[0] = 1.0
            return RayReport(True, (c + step * d, d), True)
        x0 = U.interior_point()
        d = x0 - c
        return RayReport(True, (x0, d / np.linalg.norm(d)), True)
    if flat.kind == "norms_plus":
        if flat.basis.shape[1] == 0:
            return RayReport(False, None, True)
        centers = np.asarray(flat.centers)
        diffs = centers - centers[0]
        if np.max(np.abs(diffs)) <= 1e-12:
            c = centers[0]
            if not U.contains(c):
                return None
            d = flat.basis[:, 0]
            step = U.boundary_distance(c)
            step = 1.0 if not np.isfinite(step) else step / 2
            return RayReport(True, (c + step * d, d), True)
        d = diffs[np.argmax(np.linalg.norm(diffs, axis=1))]
        d = d / np.linalg.norm(d)
        aligned = all(
            np.linalg.norm(dc - (dc @ d) * d) <= 1e-10 * max(1.0, np.linalg.norm(dc))
            for dc in diffs
        )
        if not aligned or not _in_span(flat.basis, d):
            return None
        far = centers[np.argmax(centers @ d)]
        x0 = far + d
        if not U.contains(x0):
            return None
        return RayReport(True, (x0, d), True)
    if flat.kind in ("poly", "poly_power"):
        reps = _poly_detect(flat.A, flat.b, U, flat.kind == "poly_power")
        return reps[0]
    if flat.kind == "smax_affine":
        # a smoothed fold of affine pieces always flattens onto a dominant
        # piece far out; locate a witness by probing
        rep = _sampled_ray(f, U)
        if rep.contains_ray:
            return RayReport(True, rep.witness, True)
        return RayReport(True, (U.interior_point(), np.eye(n)[0]), False)
    return None


def _line_from_flat(flat: _Flat, f: ConvexFn, U: DomainSpec):
    if flat.kind == "subspace":
        if flat.basis.shape[1] == 0:
            return LineReport(False, None, True)
        return LineReport(True, flat.basis[:, 0], True)
    if flat.kind == "norm":
        c = flat.centers[0]
        if U.contains(c):
            return LineReport(False, None, True)
        x0 = U.interior_point()
        d = x0 - c
        return LineReport(True, d / np.linalg.norm(d), True)
    if flat.kind == "norms_plus":
        if flat.basis.shape[1] == 0:
            return LineReport(False, None, True)
        if all(U.contains(c) for c in flat.centers):
            return LineReport(False, None, True)
        return None
    if flat.kind in ("poly", "poly_power"):
        reps = _poly_detect(flat.A, flat.b, U, flat.kind == "poly_power")
        return reps[1]
    if flat.kind == "smax_affine":
        if flat.basis.shape[1] >= 1:
            return LineReport(True, flat.basis[:, 0], True)
        return LineReport(False, None, True)
    return None


# ---------------------------------------------------------------------------
# cones and separators


class ConeSpec:
    """Closed convex cone, as generators and/or sampled member directions."""

    def __init__(self, dim: int, generators=None, directions=None, member=None):
        self.dim = dim
        self.generators = None if generators is None else np.atleast_2d(np.asarray(generators, dtype=float))
        if self.generators is not None and self.generators.size == 0:
            self.generators = np.zeros((0, dim))
        self.directions = None if directions is None else np.atleast_2d(np.asarray(directions, dtype=float))
        self._member = member

    def sample_unit(self) -> np.ndarray:
        pts = []
        if self.generators is not None and self.generators.shape[0]:
            g = self.generators
            pts.append(g / np.linalg.norm(g, axis=1)[:, None])
        if self.directions is not None and self.directions.shape[0]:
            d = self.directions
            pts.append(d / np.linalg.norm(d, axis=1)[:, None])
        if not pts:
            return np.zeros((0, self.dim))
        return np.unique(np.round(np.vstack(pts), 12), axis=0)

    @property
    def is_trivial(self) -> bool:
        return self.sample_unit().shape[0] == 0

    def contains(self, d) -> bool:
        d = np.asarray(d, dtype=float)
        if np.linalg.norm(d) <= 1e-14:
            return True
        if self._member is not None:
            return bool(self._member(d))
        if self.generators is not None and self.generators.shape[0]:
            # nonnegative combination feasibility
            res = linprog(
                np.zeros(self.generators.shape[0]),
                A_eq=self.generators.T,
                b_eq=d,
                bounds=[(0, None)] * self.generators.shape[0],
                method="highs",
            )
            return res.status == 0
        return False


def inscribed_cone(V) -> ConeSpec:
    """Recession cone of a closed convex body with interior."""
    from .domains import ConvexBody

    if not isinstance(V, ConvexBody):
        raise InputError("inscribed_cone expects a convex body")
    n = V.dim
    if V.kind == "ball":
        return ConeSpec(n, generators=np.zeros((0, n)))
    if V.kind == "polytope":
        A = V.params["A"]
        gens = _polyhedral_cone_generators(A)
        if gens is not None:
            return ConeSpec(n, generators=gens, member=lambda d: bool(np.all(A @ d <= 1e-10 * max(1.0, np.linalg.norm(d)))))
        return ConeSpec(
            n,
            directions=_sampled_cone_dirs(lambda d: np.all(A @ d <= 1e-10), n),
            member=lambda d: bool(np.all(A @ d <= 1e-10 * max(1.0, np.linalg.norm(d)))),
        )

    def member(d):
        d = np.asarray(d, dtype=float)
        nd = np.linalg.norm(d)
        if nd <= 1e-14:
            return True
        dd = d / nd
        steps = np.array([1.0, 32.0, 1e3, 3.2e4, 1e6])
        probes = V.witness[None, :] + steps[:, None] * dd[None, :]
        return bool(np.all(V.contains_batch(probes)))

    return ConeSpec(n, directions=_sampled_cone_dirs(member, n), member=member)


def _sampled_cone_dirs(member, n):
    count = 360 if n == 2 else (2562 if n == 3 else max(4, 2 * n))
    if n == 1:
        dirs = np.array([[1.0], [-1.0]])
    else:
        dirs = unit_directions(n, count)
    keep = [d for d in dirs if member(d)]
    return np.array(keep) if keep else np.zeros((0, n))


def _polyhedral_cone_generators(A):
    """Extreme rays of {d : A d <= 0} for n <= 3; None when not applicable."""
    n = A.shape[1]
    tol = 1e-10

    def feasible(d):
        return np.all(A @ d <= tol * max(1.0, np.linalg.norm(d)))

    cands = []
    if n == 1:
        for d in (np.array([1.0]), np.array([-1.0])):
            if feasible(d):
                cands.append(d)
    elif n == 2:
        for a in A:
            na = np.linalg.norm(a)
            if na <= tol:
                continue
            perp = np.array([-a[1], a[0]]) / na
            for d in (perp, -perp):
                if feasible(d):
                    cands.append(d)
    elif n == 3:
        k = A.shape[0]
        if k < 2:
            return None
        for i in range(k):
            for j in range(i + 1, k):
                basis = _null_basis(np.vstack([A[i], A[j]]))
                if basis.shape[1] != 1:
                    continue
                for d in (basis[:, 0], -basis[:, 0]):
                    if feasible(d):
                        cands.append(d)
    else:
        return None
    if not cands:
        return np.zeros((0, n))
    # contains a line or is a halfspace-like cone: generator list unreliable
    cand = np.vstack(cands)
    for i in range(cand.shape[0]):
        if feasible(-cand[i]) and np.linalg.norm(cand[i]) > tol:
            return cand  # caller's separation will flag the line
    uniq = []
    for d in cand:
        d = d / np.linalg.norm(d)
        if not any(np.allclose(d, u, atol=1e-9) for u in uniq):
            uniq.append(d)
    return np.vstack(uniq)


@dataclass
class SeparatorReport:
    zeta: np.ndarray
    hyperplane_normal: np.ndarray
    delta: float


def separate_cone(K: ConeSpec) -> SeparatorReport:
    P = K.sample_unit()
    if P.shape[0] == 0:
        raise InputError("cannot separate the trivial cone")
    dots = P @ P.T
    if np.min(dots) < -1 + 1e-9:
        raise ConeContainsLine("opposite directions found in cone samples")
    if K._member is not None:
        for d in P:
            if np.linalg.norm(d) > 1e-12 and K.contains(-d):
                raise ConeContainsLine("cone membership holds for both d and -d")
    zeta, _ = min_norm_point_hull(P)
    if np.linalg.norm(zeta) <= 1e-8:
        raise ConeContainsLine("minimum-norm point of the spherical hull vanishes")
    normal = zeta / np.linalg.norm(zeta)
    delta = float(np.min(P @ normal))
    return SeparatorReport(zeta=zeta, hyperplane_normal=normal, delta=delta)


# ---------------------------------------------------------------------------
# affine separators under the graph


class StarSet:
    """Compact star-shaped set: per-direction radii about a center."""

    def __init__(self, center, dirs, radii):
        self.center = np.asarray(center, dtype=float)
        self.dirs = np.asarray(dirs, dtype=float)
        self.radii = np.asarray(radii, dtype=float)

    def radius_along(self, d) -> float:
        d = np.asarray(d, dtype=float)
        d = d / np.linalg.norm(d)
        return float(self.radii[int(np.argmax(self.dirs @ d))])

    def contains_batch(self, Y):
        Z = np.atleast_2d(np.asarray(Y, dtype=float)) - self.center
        r = np.linalg.norm(Z, axis=1)
        out = np.ones(Z.shape[0], dtype=bool)
        nz = r > 1e-14
        idx = np.argmax(Z[nz] @ self.dirs.T, axis=1)
        out[nz] = r[nz] <= self.radii[idx] * (1 + 1e-12)
        return out

    def contains(self, y) -> bool:
        return bool(self.contains_batch(np.asarray(y, dtype=float).reshape(1, -1))[0])

    @property
    def max_radius(self) -> float:
        return float(np.max(self.radii))

    def boundary_points(self):
        return self.center[None, :] + self.radii[:, None] * self.dirs


@dataclass
class AffineSeparator:
    slope: np.ndarray
    offset: float
    C: StarSet
    m: float
    M: float
    eps_sep: float
    eps1: float
    anchor: np.ndarray
    support_slope: np.ndarray
    support_value: float

    def affine_values(self, Y) -> np.ndarray:
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        return Y @ self.slope + self.offset

    def affine_fn(self) -> ConvexFn:
        return ConvexFn(AffineNode(self.slope, self.offset))


def _rotation_to_last_axis(normal: np.ndarray) -> np.ndarray:
    """Orthogonal R with R @ normal = e_n (Householder)."""
    n = normal.size
    e = np.zeros(n)
    e[-1] = 1.0
    v = normal / np.linalg.norm(normal)
    if np.allclose(v, e):
        return np.eye(n)
    u = v - e
    u = u / np.linalg.norm(u)
    return np.eye(n) - 2.0 * np.outer(u, u)  # reflection swapping v and e


def _separator_dirs(n: int) -> np.ndarray:
    if n == 1:
        return np.array([[1.0], [-1.0]])
    return unit_directions(n, 360 if n == 2 else 2562)


def affine_separator(f: ConvexFn, U: DomainSpec, x) -> AffineSeparator:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    n = f.dim
    if not U.contains(x):
        raise PointOutsideDomain("separator anchor lies outside the domain")
    line = detect_graph_line(f, U)
    if line.contains_line:
        raise LineDetected(point=x, direction=line.witness)

    L = subgradient(f, x)
    fx = float(f(x))
    scale = max(1.0, abs(fx), float(np.linalg.norm(L)))
    tol_eq = 1e-9 * scale

    def ftilde(Z):
        Z = np.atleast_2d(Z)
        return f.eval_batch(x + Z) - fx - Z @ L

    dirs = _separator_dirs(n)
    exits = _exit_times(U, x, dirs)
    caps = np.where(np.isfinite(exits), exits * (1 - 1e-9), FAR_CAP)
    caps = np.minimum(caps, FAR_CAP)
    end_vals = ftilde(caps[:, None] * dirs)
    reaches_end = end_vals <= tol_eq * (1 + caps)
    lo_t = np.zeros(len(dirs))
    hi_t = caps.copy()
    lo_t[reaches_end] = caps[reaches_end]
    active = ~reaches_end
    for _ in range(80):
        mid = 0.5 * (lo_t + hi_t)
        vals = ftilde(mid[active, None] * dirs[active])
        flat = vals <= tol_eq * (1 + mid[active])
        idx = np.where(active)[0]
        lo_t[idx[flat]] = mid[idx[flat]]
        hi_t[idx[~flat]] = mid[idx[~flat]]
    radii = lo_t

    ray_dirs = dirs[reaches_end]
    if ray_dirs.shape[0] == 0:
        normal = np.zeros(n)
        normal[0] = 1.0
        delta = 1.0
    else:
        cone = ConeSpec(n, directions=ray_dirs)
        try:
            rep = separate_cone(cone)
        except ConeContainsLine as exc:
            raise LineDetected(point=x, message=f"flat directions span a line: {exc}") from exc
        normal, delta = rep.hyperplane_normal, rep.delta

    R = _rotation_to_last_axis(normal)
    delta_p = delta / 2.0

    def in_kdelta(TH):
        z = np.atleast_2d(TH) @ R.T
        return z[:, -1] > delta_p * np.linalg.norm(TH, axis=1)

    outside = ~in_kdelta(dirs)
    W_pts = radii[outside, None] * dirs[outside]
    W_pts = np.vstack([np.zeros((1, n)), W_pts])

    bd = U.boundary_distance_batch(x + W_pts)
    rho = float(np.min(bd))
    rho_hat = min(1.0, rho)
    bd0 = U.boundary_distance(x)
    nu = 1.0 if not np.isfinite(bd0) else min(1.0, bd0 / 2.0)

    r_W = _hull_radial(W_pts, dirs)
    s_rad = np.maximum(nu, r_W + rho_hat / 2.0)
    star = StarSet(x, dirs, s_rad)

    zn = np.abs(dirs @ R.T[:, -1])
    M = float(np.max(s_rad * zn))
    off_cone = ~in_kdelta(dirs)
    bp = s_rad[off_cone, None] * dirs[off_cone]
    m = float(np.min(ftilde(bp))) if bp.shape[0] else 0.0
    if m <= tol_eq:
        raise VerificationError("separator margin vanished on the star boundary")

    eps_sep = m / (2.0 * M)
    eps1 = min(m / 4.0, 0.9 * nu * eps_sep * delta_p) if ray_dirs.shape[0] else m / 4.0

    rn = R[-1]
    probes = _separator_probes(U, x, star, dirs)
    for _ in range(40):
        vals_f = ftilde(probes)
        vals_a = eps1 - eps_sep * (probes @ rn)
        inside = star.contains_batch(x + probes)
        bad = (~inside) & (vals_a >= vals_f)
        if not np.any(bad):
            break
        eps1 *= 0.5
    else:
        raise VerificationError("affine separator failed its audit after shrinking")

    slope = L - eps_sep * rn
    offset = fx + eps1 - float(slope @ x)
    return AffineSeparator(
        slope=slope,
        offset=offset,
        C=star,
        m=m,
        M=M,
        eps_sep=eps_sep,
        eps1=eps1,
        anchor=x,
        support_slope=L,
        support_value=fx,
    )


def _hull_radial(pts, dirs):
    """Radial extent of conv(pts) (containing 0) along each direction."""
    k = pts.shape[0]
    out = np.zeros(len(dirs))
    if k == 1:
        return out
    for i, th in enumerate(dirs):
        # max t with t*th = sum(lam * pts), lam in simplex
        nv = k + 1
        A_eq = np.zeros((pts.shape[1] + 1, nv))
        A_eq[: pts.shape[1], :k] = pts.T
        A_eq[: pts.shape[1], -1] = -th
        A_eq[-1, :k] = 1.0
        b_eq = np.zeros(pts.shape[1] + 1)
        b_eq[-1] = 1.0
        c = np.zeros(nv)
        c[-1] = -1.0
        res = linprog(c, A_eq=A_eq, b_eq=b_eq, bounds=[(0, None)] * k + [(0, None)], method="highs")
        if res.status == 0:
            out[i] = res.x[-1]
    return out


def _separator_probes(U: DomainSpec, x, star: StarSet, dirs):
    fracs = np.array([1.05, 1.25, 1.6, 2.5, 5.0, 12.0, 50.0, 400.0, 4000.0])
    exits = _exit_times(U, x, dirs)
    caps = np.where(np.isfinite(exits), exits * (1 - 1e-9), FAR_CAP)
    caps = np.minimum(caps, FAR_CAP)
    Z = []
    for i, th in enumerate(dirs):
        rr = star.radii[i] * fracs
        rr = rr[rr <= caps[i]]
        extra = [caps[i] * 0.999, caps[i] * (1 - 1e-7)] if np.isfinite(exits[i]) else [FAR_CAP]
        rr = np.concatenate([rr, extra])
        Z.append(rr[:, None] * th[None, :])
    return np.vstack(Z)


def tilt_separator(sep: AffineSeparator, f: ConvexFn, eps, x) -> ConvexFn:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if not hasattr(eps, "eval_batch"):
        eps = ToleranceField.const(float(eps))
    pts = [sep.C.center[None, :]]
    for frac in (0.25, 0.5, 0.75, 1.0):
        pts.append(sep.C.center[None, :] + frac * sep.C.radii[:, None] * sep.C.dirs)
    Y = np.vstack(pts)
    inf_eps = float(np.min(eps.eval_batch(Y)))
    sup_gap = float(np.max(sep.affine_values(Y) - f.eval_batch(Y)))
    if sup_gap <= 0:
        theta = 0.5
    else:
        theta = 0.5 * min(1.0, inf_eps / sup_gap)
    L = sep.support_slope
    slope = theta * sep.slope + (1 - theta) * L
    offset = theta * sep.offset + (1 - theta) * (sep.support_value - float(L @ x))
    return ConvexFn(AffineNode(slope, offset))
