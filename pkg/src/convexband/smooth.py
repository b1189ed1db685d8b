"""Smooth strongly convex bands and the glued global approximants.

One primitive carries the local work: ``strongly_convex_band_below`` pools
tangent planes of a lowered copy of the target into a single log-sum-exp
plus a small centered quadratic, which pins the result into an explicit
horizontal slab below the target while keeping a positive-definite Hessian
everywhere.  The glue builders chain such floors under a ladder of
polyhedral ceilings over a compact exhaustion, joining consecutive stages
with ``smooth_max`` at fold widths that shrink fast enough for earlier
compacts to stabilize exactly.  On top of those sit the two-sided band
builders and the C1 patching machinery, which lifts a differentiable
target locally while tracking its gradient.

Every inequality the chaining relies on is evaluated on the stage grids
and recorded in the stage ledger; a failure raises ``LedgerViolation``
instead of returning an uncertified function.  Claims always cite the
compacts actually reached, never the full domain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .domains import CompactRegion, DomainSpec, ToleranceField
from .errors import (
    InputError,
    LedgerViolation,
    LineDetected,
    NotDifferentiable,
    PointOutsideDomain,
    RankDeficientSupports,
    VerificationError,
)
from .expr import (
    AffineNode,
    ConvexFn,
    LogSumExpNode,
    MaxAffineNode,
    MaxNode,
    Node,
    NormNode,
    QuadraticNode,
    SumNode,
    node_from_dict,
    register_node,
)
from .recession import detect_graph_line
from .rough import SupportSample, _field, _refuse_lines, _refuse_rays, hull_ceiling
from .smoothmax import smooth_max
from .utils import as_points, farthest_point_subset, grid_box, unit_directions

# independence tolerance for lifted support planes
RANK_TOL = 1e-10
# relative slack for bit-for-bit stage stabilization
STABILIZATION_TOL = 1e-12
# default finite-difference-visible Hessian floor funded out of band margins
FLOOR_TARGET = 1e-7

# growth threshold: must sit well under the 0.2-width slab audit holdback,
# since the log-sum-exp only ever raises the pooled envelope
_SAG_FRAC = 0.1
_EXHAUST_MAX = 60
# hull-anchor and tube-audit point budgets for ceiling refinement
_ANCHOR_CAP = 200_000
_PROBE_CAP = 200_000


def _derived_name(f: ConvexFn, prefix: str) -> str:
    return f"{prefix}({f.name})" if f.name else prefix


def _tree_rows(node) -> int:
    """Largest piece table in an expression tree; sizes the eval blocks."""
    rows = 1
    A = getattr(node, "A", None)
    if A is not None and hasattr(A, "shape"):
        rows = int(A.shape[0])
    for ch in getattr(node, "children", []) or []:
        rows = max(rows, _tree_rows(ch))
    return rows


def _blocked(fun, X, rows):
    """Evaluate fun over X in row blocks; keeps G x pieces temporaries small."""
    step = max(256, int(4e7 // max(rows, 1)))
    if X.shape[0] <= step:
        return fun(X)
    return np.concatenate([fun(X[i:i + step]) for i in range(0, X.shape[0], step)])


def _max_affine_vals(X, A, b):
    """max_i (A_i . x + b_i) over the rows of X, blocked in both directions."""
    A = np.atleast_2d(A)
    b = np.atleast_1d(b)
    out = np.empty(X.shape[0])
    for i in range(0, X.shape[0], 8192):
        Xi = X[i:i + 8192]
        best = np.full(Xi.shape[0], -np.inf)
        for j in range(0, A.shape[0], 2048):
            best = np.maximum(
                best, np.max(Xi @ A[j:j + 2048].T + b[j:j + 2048], axis=1))
        out[i:i + 8192] = best
    return out


def _inside_anchor_hull(anchors: np.ndarray, probes: np.ndarray) -> np.ndarray:
    """Mask of probes inside the convex hull of the anchor set.

    A hulled ceiling extrapolates its boundary facets past the outermost
    anchors, so tube audits may only probe the anchors' footprint.
    """
    if anchors.shape[1] == 1:
        lo, hi = float(np.min(anchors)), float(np.max(anchors))
        x = probes[:, 0]
        return (x >= lo - 1e-12) & (x <= hi + 1e-12)
    from scipy.spatial import ConvexHull

    hull = ConvexHull(anchors)
    eqs = hull.equations
    slack = probes @ eqs[:, :-1].T + eqs[:, -1]
    return np.all(slack <= 1e-9, axis=1)


# ---------------------------------------------------------------------------
# corner supports


@dataclass
class CornerFn:
    """A pointed max-affine support: at most dim + 1 planes with independent lifts.

    Lifting a plane l(x) = a.x + c to the row (-a, 1) turns "no piece is
    redundant at the corner" into a rank statement; ``rank`` is the rank of
    the stacked lifted rows and ``degraded`` records that fewer than dim + 1
    independent pieces survived the minorance probes.
    """

    slopes: np.ndarray
    offsets: np.ndarray
    rank: int
    degraded: bool

    @property
    def pieces(self) -> int:
        return int(self.slopes.shape[0])

    def values(self, X) -> np.ndarray:
        X = as_points(X, self.slopes.shape[1])
        return np.max(X @ self.slopes.T + self.offsets, axis=1)

    def as_fn(self) -> ConvexFn:
        return ConvexFn(MaxAffineNode(self.slopes, self.offsets))


def _lifted_rank(slopes: np.ndarray) -> int:
    slopes = np.atleast_2d(slopes)
    rows = np.hstack([-slopes, np.ones((slopes.shape[0], 1))])
    s = np.linalg.svd(rows, compute_uv=False)
    if s.size == 0:
        return 0
    return int(np.sum(s > RANK_TOL * max(1.0, float(s[0]))))


def _slope_span_rank(slopes: np.ndarray) -> int:
    slopes = np.atleast_2d(slopes)
    if slopes.shape[0] < 2:
        return 0
    s = np.linalg.svd(slopes[1:] - slopes[0], compute_uv=False)
    if s.size == 0:
        return 0
    return int(np.sum(s > RANK_TOL * max(1.0, float(s[0]))))


def _tangent_rows(f: ConvexFn, P, drop):
    """Slopes and intercepts of planes tangent to f - drop at the rows of P."""
    P = np.atleast_2d(np.asarray(P, dtype=float))
    vals = f.eval_batch(P) - drop
    slopes = f.grad_batch(P)
    return slopes, vals - np.sum(slopes * P, axis=1)


def corner_support(f: ConvexFn, U: DomainSpec, x, eps_shift: float, radius: float = 1.0) -> CornerFn:
    """Tangent planes of f - eps_shift at x and at enrichment points x +- radius e_i.

    The plane at x always survives; enrichment planes are kept only while
    they remain global minorants of f - eps_shift on a probe cloud and
    strictly raise the lifted rank.  Raises PointOutsideDomain for anchors
    outside U and NotDifferentiable when f has a kink at x.
    """
    x = as_points(x, f.dim)[0]
    eps_shift = float(eps_shift)
    if eps_shift <= 0:
        raise InputError("corner support needs a positive shift")
    if not U.contains(x):
        raise PointOutsideDomain(f"corner anchor {x.tolist()} lies outside the domain")
    if not bool(f.smooth_mask(x[None, :])[0]):
        raise NotDifferentiable(f"kink at corner anchor {x.tolist()}")
    n = f.dim
    radius = float(radius)

    base_s, base_o = _tangent_rows(f, x[None, :], eps_shift)
    slopes = [base_s[0]]
    offsets = [base_o[0]]

    dirs = unit_directions(n, 2 if n == 1 else 16)
    cloud = x[None, :] + radius * np.vstack([0.5 * dirs, dirs, 2.0 * dirs])
    cloud = np.vstack([x[None, :], cloud])
    cloud = cloud[U.contains_batch(cloud)]
    ceiling = f.eval_batch(cloud) - eps_shift
    scale = 1.0 + float(np.max(np.abs(ceiling)))

    for i in range(n):
        for sgn in (1.0, -1.0):
            if len(slopes) >= n + 1:
                break
            p = x.copy()
            p[i] += sgn * radius
            if not U.contains(p) or not bool(f.smooth_mask(p[None, :])[0]):
                continue
            s_new, o_new = _tangent_rows(f, p[None, :], eps_shift)
            # tangents of a convex target minorize it; the probe guards
            # gradients picked up on the wrong side of a near-tie
            if np.any(cloud @ s_new[0] + o_new[0] > ceiling + 1e-9 * scale):
                continue
            trial = np.vstack([np.asarray(slopes), s_new])
            if _lifted_rank(trial) <= _lifted_rank(np.asarray(slopes)):
                continue
            slopes.append(s_new[0])
            offsets.append(o_new[0])

    slopes = np.asarray(slopes)
    offsets = np.asarray(offsets)
    rank = _lifted_rank(slopes)
    return CornerFn(slopes=slopes, offsets=offsets, rank=rank, degraded=rank < n + 1)


# ---------------------------------------------------------------------------
# schedules and results


@dataclass
class StageRecord:
    """One glue stage with the numbers its inequalities were checked at."""

    stage: int
    exhaustion_index: int | None
    region: CompactRegion
    ceiling: ConvexFn | None
    floor: ConvexFn | None
    clearance: float
    fold_delta: float | None
    divisor: int | None
    cover_index: int | None
    supports: int = 0
    ledger: dict = field(default_factory=dict)

    def describe(self) -> dict:
        return {
            "stage": self.stage,
            "exhaustion_index": self.exhaustion_index,
            "region": self.region.describe(),
            "clearance": self.clearance,
            "fold_delta": self.fold_delta,
            "divisor": self.divisor,
            "cover_index": self.cover_index,
            "supports": self.supports,
            "ledger": dict(self.ledger),
        }


@dataclass
class GlueSchedule:
    """The stage ladder behind a glued approximant."""

    stages: list

    def describe(self) -> list:
        return [s.describe() for s in self.stages]


@dataclass
class Approximant:
    """A certified function, the schedule that built it, and its grid claims."""

    g: ConvexFn
    schedule: GlueSchedule
    claims: list
    target: ConvexFn | None = None


def _require(ok: bool, key: str, stage: int, tag: str, ledger: dict):
    if not ok:
        raise LedgerViolation(
            f"stage {stage}{tag}: {key} = {ledger[key]:.6e} violates its bound")


# ---------------------------------------------------------------------------
# the single-slab strongly convex band


def _band_grid(f: ConvexFn, U: DomainSpec, K: CompactRegion, per_axis: int,
               diameter: float, rows: int):
    grid = K.grid(per_axis)
    grid = grid[U.contains_batch(grid)]
    if grid.shape[0] == 0:
        raise InputError("band region contains no domain grid points")
    fv = _blocked(f.eval_batch, grid, rows)
    usable = _blocked(f.smooth_mask, grid, rows)
    anchors = grid.copy()
    step = max(1e-3 * diameter / max(per_axis - 1, 1), 1e-9)
    bad = np.flatnonzero(~usable)
    if bad.size:
        dirs = unit_directions(f.dim, 2 if f.dim == 1 else 8)
        t = step
        for _ in range(6):
            if bad.size == 0:
                break
            for d in dirs:
                if bad.size == 0:
                    break
                probes = grid[bad] + t * d
                ok = U.contains_batch(probes)
                ok[ok] = _blocked(f.smooth_mask, probes[ok], rows)
                hit = bad[ok]
                anchors[hit] = probes[ok]
                usable[hit] = True
                bad = bad[~ok]
            t *= 3.0
    return grid, fv, anchors, usable


def _pooled_pieces(f, U, grid, fv, anchors, usable, depth, width, corner_radius):
    """Tangent planes of f - depth: corner seeds plus sag-driven grid growth."""
    n = f.dim
    if isinstance(f.root, MaxAffineNode):
        # the target's own facets reproduce f - depth with zero sag; sampled
        # tangents would have to rediscover every sliver facet the hard way
        return f.root.A.copy(), f.root.b - depth, 0
    cand = anchors[usable]
    if cand.shape[0] == 0:
        raise InputError("no smooth support anchors on the band grid")
    seeds_idx = farthest_point_subset(cand, min(cand.shape[0], n + 2))
    slopes: list = []
    offsets: list = []
    seeds = 0
    for p in cand[seeds_idx]:
        try:
            corner = corner_support(f, U, p, depth, radius=corner_radius)
        except (NotDifferentiable, PointOutsideDomain):
            continue
        slopes.extend(corner.slopes)
        offsets.extend(corner.offsets)
        seeds += 1
    if not slopes:
        s, o = _tangent_rows(f, cand[:1], depth)
        slopes = [s[0]]
        offsets = [o[0]]
    used = np.zeros(grid.shape[0], dtype=bool)
    target = fv - depth
    batch = max(8, grid.shape[0] // 16)
    best = _max_affine_vals(grid, np.asarray(slopes), np.asarray(offsets))
    while True:
        bad = np.flatnonzero((target - best > _SAG_FRAC * width) & usable & ~used)
        if bad.size == 0:
            break
        take = bad[np.argsort((target - best)[bad])[::-1][:batch]]
        used[take] = True
        s, o = _tangent_rows(f, anchors[take], depth)
        best = np.maximum(best, _max_affine_vals(grid, s, o))
        slopes.extend(s)
        offsets.extend(o)
    return np.asarray(slopes), np.asarray(offsets), seeds


def _rescue_span(f, U, slopes, offsets, depth, center, reach):
    """Far tangent probes; they only raise a lower envelope, never break it."""
    n = f.dim
    rank = _slope_span_rank(slopes)
    if rank >= n:
        return slopes, offsets, rank
    dirs = unit_directions(n, 2 if n == 1 else 16)
    for t in (2.0, 8.0, 32.0, 128.0):
        pts = center[None, :] + (t * max(reach, 1.0)) * dirs
        pts = pts[U.contains_batch(pts)]
        if pts.shape[0]:
            pts = pts[f.smooth_mask(pts)]
        if pts.shape[0] == 0:
            continue
        s, o = _tangent_rows(f, pts, depth)
        slopes = np.vstack([slopes, s])
        offsets = np.concatenate([offsets, o])
        rank = _slope_span_rank(slopes)
        if rank >= n:
            break
    return slopes, offsets, rank


def strongly_convex_band_below(
    f: ConvexFn,
    U: DomainSpec,
    K: CompactRegion,
    eps: float,
    *,
    depth: float | None = None,
    width: float | None = None,
    window: CompactRegion | None = None,
    per_axis: int | None = None,
    corner_radius: float | None = None,
    grad_target: float | None = None,
    max_refine: int = 6,
    check_lines: bool = True,
) -> Approximant:
    """Smooth strongly convex band pinned to the slab f - depth +- width/2.

    Pooled tangent planes of f - depth feed one log-sum-exp whose
    temperature keeps the soft max within width/4 of the true max, plus a
    quadratic bounded by width/4 on ``window``; the band then sits inside
    [f - depth - width/2, f - depth + width/2] on the K grid and below
    f - depth + width/2 on the window probes.  Defaults depth = 2 eps and
    width = eps/2 place the band between f - 3 eps and f - eps/4.

    The quadratic keeps the Hessian at least 2 sigma everywhere, sigma =
    width / (4 R^2) for the window radius R.  With ``grad_target`` set, the
    width is halved and the grid refined until the worst gradient gap
    against f on smooth grid points drops below the target.

    Raises RankDeficientSupports when the pooled slopes span fewer than dim
    directions even after far probes, and LineDetected for targets that are
    affine along a line of U.
    """
    eps = float(eps)
    if eps <= 0:
        raise InputError("band needs a positive tolerance")
    if depth is None:
        depth = 2.0 * eps
    if width is None:
        width = 0.5 * eps
    depth = float(depth)
    width = float(width)
    if not 0.0 < width < 2.0 * depth:
        raise InputError("band needs 0 < width < 2 * depth to stay below the target")
    if check_lines:
        _refuse_lines(f, U)
    n = f.dim
    if per_axis is None:
        per_axis = 33 if n == 1 else 21
    if K.is_empty:
        raise InputError("band region is empty")

    lo, hi = K.bounding_box()
    center = 0.5 * (lo + hi)
    diameter = float(np.linalg.norm(hi - lo))
    reach = K.radius_about(center)
    if window is None:
        window = CompactRegion.ball(center, 4.0 * max(reach, 1.0))
    wlo, whi = window.bounding_box()
    wcenter = 0.5 * (wlo + whi)
    r_window = window.radius_about(wcenter)
    if corner_radius is None:
        corner_radius = max(0.5 * reach, 1e-3)

    probes = window.grid(17 if n == 1 else 9)
    probes = probes[U.contains_batch(probes)]

    # tangent envelopes sag quadratically between anchors, so the target's
    # curvature dictates the grid density a given width needs; starting
    # there keeps the refinement loop for honest shortfalls only
    sample = K.grid(9 if n == 1 else 5)
    sample = sample[U.contains_batch(sample)]
    if sample.shape[0]:
        curv = float(np.max(np.linalg.eigvalsh(f.hess_batch(sample))))
        if curv > 0:
            span = float(np.max(hi - lo))
            need = span / math.sqrt(1.2 * width / curv)
            cap = 60_000 if n == 1 else 701
            per_axis = max(per_axis, min(int(need) + 2, cap))

    f_rows = _tree_rows(f.root)
    halvings = 0
    refine_budget = 5
    while True:
        grid, fv, anchors, usable = _band_grid(f, U, K, per_axis, diameter, f_rows)
        slopes, offsets, seeds = _pooled_pieces(
            f, U, grid, fv, anchors, usable, depth, width, corner_radius)
        slopes, offsets, rank = _rescue_span(f, U, slopes, offsets, depth, center, reach)
        if rank < n:
            raise RankDeficientSupports(
                f"pooled support slopes span {rank} of {n} directions")
        k = slopes.shape[0]
        if k > 60_000:
            raise VerificationError(
                f"band needs more than 60000 support pieces at width {width:.3e}")
        beta = math.log(max(k, 2.0)) / (0.25 * width)
        sigma = 0.25 * width / max(r_window**2, 1e-12)
        root = SumNode([
            LogSumExpNode(slopes, offsets, beta),
            QuadraticNode(sigma * np.eye(n), -2.0 * sigma * wcenter,
                          sigma * float(wcenter @ wcenter)),
        ])
        g = ConvexFn(root, name=_derived_name(f, "band_below"))

        # the slab is audited between the tangent anchors; sag there is
        # invisible to the growth loop and shrinks only with grid density
        aud = K.grid(2 * per_axis - 1)
        aud = aud[U.contains_batch(aud)]
        if aud.shape[0] > _PROBE_CAP:
            aud = aud[:: int(np.ceil(aud.shape[0] / _PROBE_CAP))]
        av = _blocked(g.eval_batch, aud, k)
        fav = _blocked(f.eval_batch, aud, f_rows)
        lower_margin = float(np.min(av - (fav - depth - 0.5 * width)))
        upper_margin = float(np.min(fav - depth + 0.5 * width - av))
        # a fifth of the width is held back against sag between audit points
        if lower_margin <= 0.2 * width:
            refine_budget -= 1
            if refine_budget < 0:
                raise VerificationError(
                    f"band sag margin {lower_margin:.3e} not reached within the "
                    f"refinement budget at width {width:.3e}")
            per_axis = 2 * per_axis - 1
            continue
        if grad_target is not None:
            pts = aud[_blocked(f.smooth_mask, aud, f_rows)]
            if pts.shape[0] == 0:
                pts = anchors[usable]
            gaps = np.empty(pts.shape[0])
            step = max(256, int(4e7 // max(k, 1)))
            for i in range(0, pts.shape[0], step):
                sl = pts[i:i + step]
                gaps[i:i + step] = np.linalg.norm(
                    g.grad_batch(sl) - f.grad_batch(sl), axis=1)
            gap = float(np.max(gaps))
            if gap > grad_target:
                halvings += 1
                if halvings > max_refine:
                    raise VerificationError(
                        f"gradient gap {gap:.3e} stayed above target "
                        f"{grad_target:.3e} after {max_refine} width halvings")
                width *= 0.5
                per_axis = 2 * per_axis - 1
                continue
        break

    if upper_margin <= 0:
        raise VerificationError(
            f"band left its slab on the audit grid: "
            f"margins {lower_margin:.3e}, {upper_margin:.3e}")
    if probes.shape[0]:
        pw = f.eval_batch(probes) - depth + 0.5 * width - g.eval_batch(probes)
        window_margin = float(np.min(pw))
    else:
        window_margin = math.inf
    if window_margin <= 0:
        raise VerificationError(
            f"band exceeded its ceiling on the window (margin {window_margin:.3e})")
    sub = grid[:: max(1, grid.shape[0] // 64)]
    eig = float(np.min(np.linalg.eigvalsh(g.hess_batch(sub))))
    floor = 2.0 * sigma
    if eig < 0.5 * floor:
        raise VerificationError(f"Hessian floor lost: {eig:.3e} < {floor:.3e}")

    claims = [
        {"kind": "band_on_grid", "region": K.describe(), "per_axis": per_axis,
         "lower_offset": depth + 0.5 * width, "upper_offset": depth - 0.5 * width,
         "min_lower_margin": lower_margin, "min_upper_margin": upper_margin},
        {"kind": "upper_on_window", "window": window.describe(),
         "upper_offset": depth - 0.5 * width, "min_margin": window_margin},
        {"kind": "hessian_floor", "region": K.describe(), "floor": floor, "min_eig": eig},
    ]
    if grad_target is not None:
        claims.append({"kind": "gradient_gap", "region": K.describe(),
                       "target": grad_target, "worst": gap})
    rec = StageRecord(
        stage=1, exhaustion_index=None, region=K, ceiling=None, floor=g,
        clearance=eps, fold_delta=None, divisor=None, cover_index=None,
        supports=k,
        ledger={"depth": depth, "width": width, "beta": beta, "sigma": sigma,
                "corner_seeds": seeds})
    return Approximant(g=g, schedule=GlueSchedule([rec]), claims=claims, target=f)


# ---------------------------------------------------------------------------
# glued one-sided bands


def _first_nonempty_index(U: DomainSpec, min_points: int = 2) -> int:
    for j in range(1, _EXHAUST_MAX + 1):
        K = U.compact_exhaustion(j)
        if K.is_empty:
            continue
        pts = K.grid(5)
        pts = pts[U.contains_batch(pts)]
        if np.unique(pts, axis=0).shape[0] >= min_points:
            return j
    raise InputError("domain admits no usable compact exhaustion")


def _convexity_lift(g: ConvexFn, center: np.ndarray, grid: np.ndarray,
                    floor_target: float, value_margin: float,
                    grad_margin: float | None = None):
    """Quadratic lift funding a finite-difference-visible Hessian floor.

    Truncated stage cascades push the last slab width, and with it the
    quadratic weight, below what a step-1e-4 finite difference can see; a
    single lift paid for by at most a quarter of the recorded margins
    restores a uniform floor without touching any stage claim.
    """
    if floor_target <= 0:
        return g, 0.0
    sub = grid[:: max(1, grid.shape[0] // 64)]
    natural = float(np.min(np.linalg.eigvalsh(g.hess_batch(sub))))
    need = 0.5 * max(0.0, floor_target - natural)
    if need <= 0:
        return g, 0.0
    r2 = float(np.max(np.sum((grid - center) ** 2, axis=1)))
    caps = [0.25 * value_margin / max(r2, 1e-12)]
    if grad_margin is not None:
        caps.append(0.25 * grad_margin / max(2.0 * math.sqrt(r2), 1e-12))
    alpha = min(need, *caps)
    if alpha <= 0:
        return g, 0.0
    n = center.shape[0]
    quad = QuadraticNode(alpha * np.eye(n), -2.0 * alpha * center,
                         alpha * float(center @ center))
    return ConvexFn(SumNode([g.root, quad]), name=g.name), float(alpha)


def glue_above(
    f: ConvexFn,
    U: DomainSpec,
    eps,
    stages: int = 6,
    per_axis: int | None = None,
    window: CompactRegion | None = None,
    first_index: int | None = None,
    floor_target: float = FLOOR_TARGET,
    name: str = "",
) -> Approximant:
    """Smooth strongly convex g with f < g < f + eps on the exhaustion compacts.

    Each stage hangs a polyhedral ceiling strictly above f within the shrunk
    stage tolerance, pins a strongly convex floor into the slab between
    ceiling - clearance/3 and ceiling - clearance/6, and folds it onto the
    running function with a fold width small enough that the previous
    stage's compact is left untouched to 1e-12 relative.  Stage tolerances
    shrink by safety-doubled divisors so later ceilings pass under every
    earlier floor.

    All chained inequalities are evaluated on the stage grids and stored in
    the stage ledgers; any failure raises LedgerViolation naming the stage.
    Claims cite the last compact reached, not all of U.
    """
    eps = _field(eps)
    _refuse_lines(f, U)
    n = f.dim
    if n > 2:
        raise InputError("glued ceilings need the dim <= 2 hull construction")
    if stages < 1:
        raise InputError("need at least one stage")
    if per_axis is None:
        per_axis = 33 if n == 1 else 21
    j0 = _first_nonempty_index(U) if first_index is None else int(first_index)
    regions = []
    for s in range(stages):
        K = U.compact_exhaustion(j0 + s)
        if K.is_empty:
            raise InputError("stage compact is empty; raise first_index")
        regions.append(K)

    last = regions[-1]
    llo, lhi = last.bounding_box()
    c_last = 0.5 * (llo + lhi)
    if window is None:
        window = CompactRegion.ball(c_last, 1.25 * last.radius_about(c_last) + 0.5)

    tag = f" [{name}]" if name else ""
    f_rows = _tree_rows(f.root)
    recs: list[StageRecord] = []
    g = None
    divisor = 1
    prev_grid = None
    worst_dev = 0.0
    anchor_start = per_axis
    for s, K in enumerate(regions, start=1):
        grid = K.grid(per_axis)
        grid = grid[U.contains_batch(grid)]
        if grid.shape[0] == 0:
            raise InputError("stage grid is empty")
        fv = f.eval_batch(grid)
        ev = eps.eval_batch(grid)
        ledger: dict = {}

        # anchors sit at f + eps/(2m) so half the tube is left for chord
        # excess between them; the anchor grid doubles until the ceiling
        # passes the audit on midpoints and on the previous stage grid,
        # where the fold inequality will be evaluated
        shift = eps.scaled(0.5 / divisor)
        anchor_n = anchor_start
        if isinstance(f.root, MaxAffineNode):
            # the target has finitely many pieces, so lifting every offset
            # by the regional minimum of the shift is an exact ceiling;
            # hulled anchors would instead crawl toward the piece seams
            probes = K.grid(2 * per_axis - 1)
            probes = probes[U.contains_batch(probes)]
            if prev_grid is not None:
                probes = np.vstack([probes, prev_grid])
            lift = float(np.min(shift.eval_batch(probes)))
            if lift <= 0:
                raise LedgerViolation(
                    f"stage {s}{tag}: ceiling shift vanished on the stage grid")
            ceiling = ConvexFn(MaxAffineNode(f.root.A, f.root.b + lift),
                               domain=f.domain, name=f"{f.name}+lift")
            excess = float(lift - np.min(eps.eval_batch(probes)) / divisor)
            anchor_n = per_axis
            anchors_used = f.root.b.shape[0]
        else:
            klo, khi = K.bounding_box()
            while True:
                # anchors span the full bounding-box lattice inside U so the
                # hull footprint covers K whenever U allows; the ceiling
                # extrapolates unreliably outside that footprint
                anchors = grid_box(klo, khi, anchor_n)
                anchors = anchors[U.contains_batch(anchors)]
                if anchors.shape[0] > _ANCHOR_CAP:
                    raise LedgerViolation(
                        f"stage {s}{tag}: ceiling tube not certifiable within "
                        f"{_ANCHOR_CAP} hull anchors (divisor {divisor})")
                ceiling = hull_ceiling(f, U, shift, anchors, check_lines=False)
                probes = K.grid(2 * anchor_n - 1)
                probes = probes[U.contains_batch(probes)]
                probes = probes[_inside_anchor_hull(anchors, probes)]
                if probes.shape[0] > _PROBE_CAP:
                    probes = probes[:: int(np.ceil(probes.shape[0] / _PROBE_CAP))]
                if prev_grid is not None:
                    probes = np.vstack([probes, prev_grid])
                c_rows = max(anchors.shape[0], f_rows)
                excess = float(np.max(
                    _blocked(ceiling.eval_batch, probes, c_rows)
                    - _blocked(f.eval_batch, probes, f_rows)
                    - eps.eval_batch(probes) / divisor))
                if excess < 0:
                    break
                anchor_n = 2 * anchor_n - 1
            anchor_start = anchor_n
            anchors_used = anchors.shape[0]
        hv = ceiling.eval_batch(grid)
        ledger["ceiling_above"] = float(np.min(hv - fv))
        _require(ledger["ceiling_above"] > 0, "ceiling_above", s, tag, ledger)
        ledger["ceiling_within"] = -excess
        _require(ledger["ceiling_within"] > 0, "ceiling_within", s, tag, ledger)
        ledger["hull_anchors"] = float(anchors_used)

        clearance = ledger["ceiling_above"]
        room = hv - fv - (2.0 / 3.0) * clearance
        next_divisor = max(2 * (int(np.max(ev / room)) + 1), divisor + 1)
        ledger["divisor_margin"] = float(np.min(room - ev / next_divisor))
        _require(ledger["divisor_margin"] > 0, "divisor_margin", s, tag, ledger)

        floor_app = strongly_convex_band_below(
            ceiling, U, K, clearance,
            depth=0.25 * clearance, width=clearance / 12.0,
            window=window, per_axis=max(per_axis, anchor_n), check_lines=False)
        phi = floor_app.g
        pv = phi.eval_batch(grid)
        ledger["floor_above"] = float(np.min(pv - (hv - clearance / 3.0)))
        _require(ledger["floor_above"] > 0, "floor_above", s, tag, ledger)
        ledger["floor_below"] = float(np.min(hv - clearance / 6.0 - pv))
        _require(ledger["floor_below"] > 0, "floor_below", s, tag, ledger)

        delta = clearance / (3.0 * 2.0**s)
        if g is None:
            g = phi
        else:
            gv_prev = g.eval_batch(prev_grid)
            ledger["fold_clearance"] = float(
                np.min(gv_prev - phi.eval_batch(prev_grid) - delta))
            _require(ledger["fold_clearance"] > 0, "fold_clearance", s, tag, ledger)
            folded = smooth_max(delta, g, phi)
            dev = float(np.max(np.abs(folded.eval_batch(prev_grid) - gv_prev)))
            prev_scale = 1.0 + float(np.max(np.abs(gv_prev)))
            ledger["stabilization"] = dev / prev_scale
            _require(ledger["stabilization"] <= STABILIZATION_TOL,
                     "stabilization", s, tag, ledger)
            worst_dev = max(worst_dev, dev / prev_scale)
            g = folded

        gv = g.eval_batch(grid)
        ledger["above_target"] = float(np.min(gv - fv))
        _require(ledger["above_target"] > 0, "above_target", s, tag, ledger)
        ledger["below_budget"] = float(np.min(fv + ev - gv))
        _require(ledger["below_budget"] > 0, "below_budget", s, tag, ledger)

        recs.append(StageRecord(
            stage=s, exhaustion_index=j0 + s - 1, region=K, ceiling=ceiling,
            floor=phi, clearance=clearance, fold_delta=delta,
            divisor=next_divisor, cover_index=None,
            supports=floor_app.schedule.stages[0].supports, ledger=ledger))
        divisor = next_divisor
        prev_grid = grid

    g, alpha = _convexity_lift(g, c_last, prev_grid, floor_target,
                               recs[-1].ledger["below_budget"])
    gv = g.eval_batch(prev_grid)
    fv = f.eval_batch(prev_grid)
    ev = eps.eval_batch(prev_grid)
    above = float(np.min(gv - fv))
    below = float(np.min(fv + ev - gv))
    if above <= 0 or below <= 0:
        raise VerificationError(
            f"glued band left (target, target + eps): margins {above:.3e}, {below:.3e}")
    sub = prev_grid[:: max(1, prev_grid.shape[0] // 64)]
    eig = float(np.min(np.linalg.eigvalsh(g.hess_batch(sub))))
    if eig <= 0:
        raise VerificationError("strong convexity floor lost after gluing")

    claims = [
        {"kind": "band_on_grid", "region": last.describe(), "per_axis": per_axis,
         "min_lower_margin": above, "min_upper_margin": below},
        {"kind": "hessian_floor", "region": last.describe(), "min_eig": eig},
        {"kind": "stabilization", "tol": STABILIZATION_TOL, "worst": worst_dev},
        {"kind": "convexity_lift", "alpha": alpha, "center": c_last.tolist()},
    ]
    return Approximant(g=g, schedule=GlueSchedule(recs), claims=claims, target=f)


def approx_below(
    f: ConvexFn,
    U: DomainSpec,
    eps,
    stages: int = 6,
    per_axis: int | None = None,
    floor_target: float = FLOOR_TARGET,
) -> Approximant:
    """Smooth strongly convex g with f - eps < g < f on the exhaustion compacts.

    A tangent-plane shell strictly between f - eps and f supplies the rough
    floor; gluing a smooth band above the shell with the remaining headroom
    f - shell as its budget keeps the result strictly below f itself.

    Refuses targets whose graph contains a ray over U, since tangent shells
    cannot track such graphs to within a vanishing tolerance.
    """
    eps = _field(eps)
    _refuse_rays(f, U)
    n = f.dim
    if n > 2:
        raise InputError("glued ceilings need the dim <= 2 hull construction")
    if per_axis is None:
        per_axis = 33 if n == 1 else 21
    j0 = _first_nonempty_index(U)
    outer = U.compact_exhaustion(j0 + stages - 1)
    sample = SupportSample.on_region(f, U, eps, outer, per_axis=per_axis,
                                     check_rays=False)
    shell = sample.as_fn()
    headroom = ToleranceField.difference(f, shell)
    app = glue_above(shell, U, headroom, stages=stages, per_axis=per_axis,
                     first_index=j0, floor_target=floor_target, name="below")
    g = app.g

    grid = outer.grid(per_axis)
    grid = grid[U.contains_batch(grid)]
    fv = f.eval_batch(grid)
    gv = g.eval_batch(grid)
    ev = eps.eval_batch(grid)
    below = float(np.min(fv - gv))
    above = float(np.min(gv - (fv - ev)))
    if below <= 0 or above <= 0:
        raise VerificationError(
            f"band left (target - eps, target): margins {above:.3e}, {below:.3e}")
    claims = list(app.claims) + [
        {"kind": "band_below_target", "region": outer.describe(), "per_axis": per_axis,
         "min_lower_margin": above, "min_upper_margin": below},
    ]
    return Approximant(g=g, schedule=app.schedule, claims=claims, target=f)


# ---------------------------------------------------------------------------
# C1 patching


@register_node
class BallPatchNode(Node):
    """Evaluates ``inside`` within an open ball and ``outside`` elsewhere.

    The node does no smoothing of its own; the builder certifies that the
    inside branch has already merged into the outside one on a ring before
    the sphere, so the composite stays convex.  The seam band is reported
    non-smooth to keep downstream kink probes conservative.
    """

    kind = "ball_patch"

    def __init__(self, outside: Node, inside: Node, center, radius: float):
        self.outside = outside
        self.inside = inside
        self.center = np.atleast_1d(np.asarray(center, dtype=float))
        self.radius = float(radius)
        if self.radius <= 0:
            raise InputError("patch ball needs a positive radius")

    @property
    def dim(self):
        return self.outside.dim

    @property
    def children(self):
        return [self.outside, self.inside]

    def _inside(self, X):
        return np.linalg.norm(X - self.center, axis=1) < self.radius

    def eval_batch(self, X):
        X = as_points(X, self.dim)
        out = self.outside.eval_batch(X)
        m = self._inside(X)
        if np.any(m):
            out[m] = self.inside.eval_batch(X[m])
        return out

    def grad_batch(self, X):
        X = as_points(X, self.dim)
        out = self.outside.grad_batch(X)
        m = self._inside(X)
        if np.any(m):
            out[m] = self.inside.grad_batch(X[m])
        return out

    def hess_batch(self, X):
        X = as_points(X, self.dim)
        out = self.outside.hess_batch(X)
        m = self._inside(X)
        if np.any(m):
            out[m] = self.inside.hess_batch(X[m])
        return out

    def smooth_mask(self, X):
        X = as_points(X, self.dim)
        r = np.linalg.norm(X - self.center, axis=1)
        m = r < self.radius
        out = self.outside.smooth_mask(X)
        if np.any(m):
            out[m] = self.inside.smooth_mask(X[m])
        out[np.abs(r - self.radius) <= 1e-9 * (1.0 + self.radius)] = False
        return out

    def to_dict(self):
        return {"kind": self.kind, "outside": self.outside.to_dict(),
                "inside": self.inside.to_dict(),
                "center": self.center.tolist(), "radius": self.radius}

    @classmethod
    def from_dict(cls, d):
        return cls(node_from_dict(d["outside"]), node_from_dict(d["inside"]),
                   d["center"], d["radius"])


def _grow_past_flats(f: ConvexFn, U: DomainSpec, c: np.ndarray, r: float, cap: float):
    """Expand a patch ball while f is affine along one of its chords.

    Any convex function that exceeds f somewhere inside the ball while
    agreeing with it at the sphere would have to beat an affine chord at
    both ends, so flat chords cap every admissible patch; growth moves the
    sphere past the flat spot.
    """
    for _ in range(40):
        if not detect_graph_line(f, DomainSpec.ball(c, r)).contains_line:
            return r
        if r >= cap * (1.0 - 1e-9):
            raise LineDetected(
                "target is affine along a chord of every admissible patch ball")
        r = min(1.6 * r, cap)
    raise LineDetected("patch ball growth failed to clear flat chords")


def _covering_balls(f: ConvexFn, U: DomainSpec, Kgrid: np.ndarray, reach: float):
    """Greedy ball cover of the patch grid; each ball stays well inside U.

    The first candidate sits at the grid's center so one ball usually covers
    everything; greedy picks mop up whatever a boundary cap left out.
    """
    base = 1.3 * max(reach, 0.5)
    center = 0.5 * (np.min(Kgrid, axis=0) + np.max(Kgrid, axis=0))
    balls = []
    remaining = Kgrid.copy()
    first = True
    while remaining.shape[0]:
        c = center if first else remaining[0]
        first = False
        bd = U.boundary_distance(c)
        cap = 0.9 * bd if np.isfinite(bd) else 64.0 * (reach + 1.0)
        r = min(base, cap)
        if r <= 1e-9:
            raise InputError("patch region touches the domain boundary")
        r = _grow_past_flats(f, U, c, r, cap)
        assigned = np.linalg.norm(Kgrid - c, axis=1) <= 0.8 * r
        if np.any(assigned):
            balls.append((c, r, Kgrid[assigned]))
        remaining = remaining[np.linalg.norm(remaining - c, axis=1) > 0.8 * r]
    return balls


def _enclosing_region(U: DomainSpec, balls) -> CompactRegion:
    centers = np.asarray([c for c, _, _ in balls])
    radii = np.asarray([r for _, r, _ in balls])
    c = np.mean(centers, axis=0)
    span = float(np.max(np.linalg.norm(centers - c, axis=1) + radii))
    if U.kind == "all":
        return CompactRegion.ball(c, span)
    if U.kind == "ball":
        off = np.linalg.norm(centers - U.center, axis=1)
        slack = float(np.min(U.radius - off - radii))
        rr = min(U.radius - 0.5 * slack, float(np.max(off + radii)) + 0.25 * slack)
        return CompactRegion.ball(U.center, rr)
    A, b = U.halfspaces()
    norms = np.linalg.norm(A, axis=1)
    slack = float(np.min((b[None, :] - centers @ A.T) / norms[None, :]
                         - radii[:, None]))
    t = 0.5 * max(slack, 0.0)
    return CompactRegion.polyhedron_ball(A, b - t * norms, c, span)


def _ball_patch(f: ConvexFn, U: DomainSpec, eps: ToleranceField, c: np.ndarray,
                r: float, chunk: np.ndarray, factor: float, per_axis: int):
    """One patched ball: a glued band above f driven by a taper-rimmed bump.

    The bump holds full height over the chunk (so the band clears f by a
    fixed fraction of the tolerance there) and decays through a quadratic
    taper that the glue's own anchors sample, which tilts the hull ceiling
    downward at the rim; past the anchors the band then dips under f and
    the seam audit below stays a formality rather than a cliff.
    """
    n = f.dim
    dom = DomainSpec.ball(c, r)
    j_first = _first_nonempty_index(dom)
    cmax = (float(np.max(np.linalg.norm(chunk - c, axis=1)))
            if chunk.shape[0] else 0.0)
    jb = None
    for j in range(j_first, _EXHAUST_MAX + 1):
        K1 = dom.compact_exhaustion(j)
        if K1.is_empty:
            continue
        if chunk.shape[0] and not np.all(K1.contains_batch(chunk, shrink=0.02 * r)):
            continue
        if K1.kind == "ball":
            inner = float(K1.params["radius"]) + float(np.linalg.norm(
                np.asarray(K1.params["center"], dtype=float) - c))
        else:
            blo, bhi = K1.bounding_box()
            inner = float(np.linalg.norm(np.maximum(np.abs(blo - c), np.abs(bhi - c))))
        s = 0.4 * (r - inner)
        if s > 0 and inner - s >= cmax + 0.02 * r:
            jb = j
            break
    if jb is None:
        raise InputError("patch ball exhaustion cannot cover its region chunk")

    bgrid = K1.grid(per_axis)
    bgrid = bgrid[U.contains_batch(bgrid)]
    height = 0.5 * factor * float(np.min(eps.eval_batch(bgrid)))
    if height <= 0:
        raise InputError("patch tolerance vanishes on the ball")
    level = inner + s
    gauge = ConvexFn(NormNode(c, 1.0))
    cap = ConvexFn(AffineNode(np.zeros(n), float(level)))
    bump = ToleranceField.patch_bump(gauge, cap, depth=2.0 * s, height=height)

    app = glue_above(f, dom, bump, stages=1, per_axis=per_axis,
                     first_index=jb, floor_target=0.0, name="patch")
    phi = app.g

    # the band must duck under f before the sphere; otherwise max(f, band)
    # would still be rising at the seam and the routed composite would kink
    gap = r - inner
    radii = np.linspace(inner + 0.25 * gap, r - 1e-3 * gap, 5)
    dirs = unit_directions(n, 2 if n == 1 else 24)
    ring = np.vstack([c[None, :] + rr * dirs for rr in radii])
    seam = float(np.max(phi.eval_batch(ring) - f.eval_batch(ring)))
    if seam >= 0:
        raise LedgerViolation(
            f"patch seam: band reaches the target near the sphere (gap {seam:.3e})")
    inside = MaxNode(f.root, phi.root)
    return ConvexFn(BallPatchNode(f.root, inside, c, r),
                    name=_derived_name(f, "patched"))


def c1_patch(
    f: ConvexFn,
    U: DomainSpec,
    eps,
    K: CompactRegion,
    per_axis: int = 21,
    max_rounds: int = 4,
    grad_eps=None,
) -> tuple[CompactRegion, ConvexFn]:
    """Locally strongly convex lift of a differentiable target.

    Returns a compact C and psi with psi = f outside C, f <= psi < f + eps
    everywhere checked, psi > f on the K grid, psi strongly convex where it
    differs from f, and the gradient gap against f below grad_eps (default
    eps) on the C grid.

    Covering balls around K are grown until no chord of any ball is flat
    for f, a rim-tapered bump drives a glued band above f inside each ball,
    and the pointwise max with f merges each band into f on a ring before
    its sphere; psi is the average of the patched balls.  Bump heights are
    halved (tolerance / k for k = 1, 2, 4, ...) until the gradient gap
    closes; shallower bumps force denser ceiling anchors inside the glue,
    so chord slopes tighten toward Df as k grows.
    """
    eps = _field(eps)
    grad_eps = eps if grad_eps is None else _field(grad_eps)
    _refuse_lines(f, U)
    n = f.dim
    if n > 2:
        raise InputError("patching needs the dim <= 2 hull construction")
    Kgrid = K.grid(per_axis)
    Kgrid = Kgrid[U.contains_batch(Kgrid)]
    if Kgrid.shape[0] == 0:
        raise InputError("patch region has no domain grid points")
    mask = f.smooth_mask(Kgrid)
    if not np.all(mask):
        kink = Kgrid[~mask][0]
        raise NotDifferentiable(
            f"target is not C1: kink near {kink.tolist()} on the patch grid")
    lo, hi = K.bounding_box()
    cK = 0.5 * (lo + hi)
    reach = K.radius_about(cK)
    balls = _covering_balls(f, U, Kgrid, reach)
    C = _enclosing_region(U, balls)
    Cgrid = C.grid(per_axis)
    Cgrid = Cgrid[U.contains_batch(Cgrid)]
    mask = f.smooth_mask(Cgrid)
    if not np.all(mask):
        kink = Cgrid[~mask][0]
        raise NotDifferentiable(
            f"target is not C1: kink near {kink.tolist()} inside the patch cover")
    fC = f.eval_batch(Cgrid)
    eC = eps.eval_batch(Cgrid)
    gC = grad_eps.eval_batch(Cgrid)
    scale = 1.0 + float(np.max(np.abs(fC)))

    k = 1
    for _ in range(max_rounds):
        parts = [_ball_patch(f, U, eps, c, r, chunk, 1.0 / k, per_axis)
                 for c, r, chunk in balls]
        if len(parts) == 1:
            psi = parts[0]
        else:
            w = 1.0 / len(parts)
            psi = ConvexFn(SumNode([p.root for p in parts], weights=[w] * len(parts)),
                           name=_derived_name(f, "patched"))
        sv = psi.eval_batch(Cgrid)
        if float(np.min(sv - fC)) < -1e-12 * scale:
            raise VerificationError("patch dipped below the target")
        if float(np.min(fC + eC - sv)) <= 0:
            raise VerificationError("patch left the tolerance band")
        if float(np.min(psi.eval_batch(Kgrid) - f.eval_batch(Kgrid))) <= 0:
            raise VerificationError("patch failed to lift strictly on the core region")
        gap = np.linalg.norm(psi.grad_batch(Cgrid) - f.grad_batch(Cgrid), axis=1)
        if float(np.max(gap - gC)) < 0:
            return C, psi
        k *= 2
    raise VerificationError(
        f"gradient gap stayed above the tolerance after {max_rounds} halvings")


# ---------------------------------------------------------------------------
# the C1-fine glued approximant


def _cover_index(U: DomainSpec, region: CompactRegion, start: int) -> int:
    sample = region.grid(7)
    for k in range(start, _EXHAUST_MAX + 1):
        K = U.compact_exhaustion(k)
        if K.is_empty:
            continue
        if np.all(K.contains_batch(sample)):
            return k
    raise InputError("exhaustion cannot cover the patch support")


def c1_fine(
    f: ConvexFn,
    U: DomainSpec,
    eps,
    stages: int = 3,
    per_axis: int | None = None,
    floor_target: float = FLOOR_TARGET,
) -> Approximant:
    """Smooth strongly convex g with f < g < f + eps and Dg within eps of Df.

    Stage j lifts f by a collapsed halving-weight series of patched bumps
    (strictly above f on the stage compact, within the shrunk stage
    tolerance, and within a quarter of the tolerance in gradient), pins a
    strongly convex floor into a slab a sixth of the stage clearance wide,
    and folds it on with a fold width of clearance / (3 * 2^(3j-2)), small
    enough that earlier compacts move by less than the stabilization
    tolerance.  Floors are rebuilt with halved widths until their gradients
    track the stage lift within a quarter of the smallest tolerance on the
    cover.

    Value claims cite the last stage compact; gradient claims cite the
    following cover, matching where each inequality was actually checked.
    """
    eps = _field(eps)
    _refuse_lines(f, U)
    n = f.dim
    if n > 2:
        raise InputError("patch stages need the dim <= 2 hull construction")
    if stages < 1:
        raise InputError("need at least one stage")
    if per_axis is None:
        per_axis = 33 if n == 1 else 21

    cover = _first_nonempty_index(U)
    recs: list[StageRecord] = []
    g = None
    divisor = 1
    worst_dev = 0.0
    prev = None  # (grid of the previous stage compact, lift, clearance, slab, cover)
    out_region = None
    out_grid = None
    for j in range(1, stages + 1):
        Kj = U.compact_exhaustion(cover)
        if Kj.is_empty:
            raise InputError("stage compact is empty")
        grid_j = Kj.grid(per_axis)
        grid_j = grid_j[U.contains_batch(grid_j)]
        fv_j = f.eval_batch(grid_j)
        ev_j = eps.eval_batch(grid_j)
        ledger: dict = {}
        tag = ""

        # the value tube shrinks with the divisor but the gradient claim
        # does not; holding the patch to the shrunk tube's gradient would
        # stall its halving loop on chord slopes the tube never needs
        patch_eps = eps.scaled(1.0 / max(divisor, 4))
        C_j, patch = c1_patch(f, U, patch_eps, Kj, per_axis=per_axis,
                              grad_eps=eps.scaled(0.2))

        # the lift is the halving-weight patch series with every term equal,
        # collapsed to one reweighting; the truncated tail is replaced by f
        # and its recorded size stays below the stabilization tolerance
        Cg = C_j.grid(per_axis)
        Cg = Cg[U.contains_batch(Cg)]
        fCg = f.eval_batch(Cg)
        supdiff = float(np.max(patch.eval_batch(Cg) - fCg))
        cscale = 1.0 + float(np.max(np.abs(fCg)))
        terms = max(1, math.ceil(math.log2(supdiff / (1e-12 * cscale)))) + 1
        tau = 2.0 ** (-terms)
        ledger["series_terms"] = float(terms)
        ledger["series_tail"] = tau * supdiff / cscale
        _require(ledger["series_tail"] <= STABILIZATION_TOL,
                 "series_tail", j, tag, ledger)
        h = ConvexFn(SumNode([patch.root, f.root], weights=[1.0 - tau, tau]),
                     name=_derived_name(f, "lifted"))

        next_cover = _cover_index(U, C_j, cover + 1)
        Kj1 = U.compact_exhaustion(next_cover)
        grid_j1 = Kj1.grid(per_axis)
        grid_j1 = grid_j1[U.contains_batch(grid_j1)]
        fv_j1 = f.eval_batch(grid_j1)
        ev_j1 = eps.eval_batch(grid_j1)

        hv_j = h.eval_batch(grid_j)
        hv_j1 = h.eval_batch(grid_j1)
        ledger["lift_above"] = float(np.min(hv_j - fv_j))
        _require(ledger["lift_above"] > 0, "lift_above", j, tag, ledger)
        ledger["lift_within"] = float(np.min(fv_j1 + ev_j1 / divisor - hv_j1))
        _require(ledger["lift_within"] > 0, "lift_within", j, tag, ledger)
        lift_gap = np.linalg.norm(h.grad_batch(grid_j1) - f.grad_batch(grid_j1), axis=1)
        ledger["lift_gradient"] = float(np.min(0.25 * ev_j1 - lift_gap))
        _require(ledger["lift_gradient"] > 0, "lift_gradient", j, tag, ledger)

        if prev is not None:
            # previous lift already equals f beyond this cover, so the new
            # lift may only undercut it by the vanishing stage allowance
            pg, ph, pc, pslab, pcov = prev
            outer = U.compact_exhaustion(min(next_cover + 1, _EXHAUST_MAX))
            opts = outer.grid(per_axis)
            opts = opts[U.contains_batch(opts)]
            opts = opts[~Kj1.contains_batch(opts)]
            if opts.shape[0]:
                allowance = pc / (3.0 * 2.0 ** (3 * (j - 1) - 1))
                drop = h.eval_batch(opts) - (ph.eval_batch(opts) - allowance)
                ledger["lift_overlap"] = float(np.min(drop))
                _require(ledger["lift_overlap"] > 0, "lift_overlap", j, tag, ledger)

        clearance = ledger["lift_above"]
        room = hv_j - fv_j - (2.0 / 3.0) * clearance
        next_divisor = max(2 * (int(np.max(ev_j / room)) + 1), divisor + 1)
        ledger["divisor_margin"] = float(np.min(room - ev_j / next_divisor))
        _require(ledger["divisor_margin"] > 0, "divisor_margin", j, tag, ledger)

        slab = clearance / 6.0
        grad_cap = 0.25 * float(np.min(ev_j1))
        wlo, whi = Kj1.bounding_box()
        wc = 0.5 * (wlo + whi)
        window = CompactRegion.ball(wc, 1.25 * Kj1.radius_about(wc) + 0.5)
        floor_app = strongly_convex_band_below(
            h, U, Kj1, clearance, depth=0.75 * slab, width=0.25 * slab,
            window=window, per_axis=per_axis, check_lines=False,
            grad_target=grad_cap)
        phi = floor_app.g
        pv_j1 = phi.eval_batch(grid_j1)
        ledger["floor_above"] = float(np.min(pv_j1 - (hv_j1 - slab)))
        _require(ledger["floor_above"] > 0, "floor_above", j, tag, ledger)
        ledger["floor_below"] = float(np.min(hv_j1 - 0.5 * slab - pv_j1))
        _require(ledger["floor_below"] > 0, "floor_below", j, tag, ledger)

        delta = clearance / (3.0 * 2.0 ** (3 * j - 2))
        if g is None:
            g = phi
        else:
            pg = prev[0]
            gv_prev = g.eval_batch(pg)
            ledger["fold_clearance"] = float(
                np.min(gv_prev - phi.eval_batch(pg) - delta))
            _require(ledger["fold_clearance"] > 0, "fold_clearance", j, tag, ledger)
            folded = smooth_max(delta, g, phi)
            dev = float(np.max(np.abs(folded.eval_batch(pg) - gv_prev)))
            prev_scale = 1.0 + float(np.max(np.abs(gv_prev)))
            ledger["stabilization"] = dev / prev_scale
            _require(ledger["stabilization"] <= STABILIZATION_TOL,
                     "stabilization", j, tag, ledger)
            worst_dev = max(worst_dev, dev / prev_scale)
            # beyond the stage compact the fresh floor should win outright
            ring = grid_j1[~Kj.contains_batch(grid_j1)]
            if ring.shape[0]:
                lead = phi.eval_batch(ring) - g.eval_batch(ring) - delta
                local = ring[lead > 0]
                if local.shape[0]:
                    far = float(np.max(np.abs(
                        folded.eval_batch(local) - phi.eval_batch(local))))
                    ledger["localization"] = far / prev_scale
                    _require(ledger["localization"] <= STABILIZATION_TOL,
                             "localization", j, tag, ledger)
            g = folded

        gv_j = g.eval_batch(grid_j)
        ledger["above_target"] = float(np.min(gv_j - fv_j))
        _require(ledger["above_target"] > 0, "above_target", j, tag, ledger)
        ledger["below_budget"] = float(np.min(fv_j + ev_j - gv_j))
        _require(ledger["below_budget"] > 0, "below_budget", j, tag, ledger)
        ggap = np.linalg.norm(g.grad_batch(grid_j1) - f.grad_batch(grid_j1), axis=1)
        ledger["gradient_band"] = float(np.min(ev_j1 - ggap))
        _require(ledger["gradient_band"] > 0, "gradient_band", j, tag, ledger)

        recs.append(StageRecord(
            stage=j, exhaustion_index=cover, region=Kj, ceiling=h, floor=phi,
            clearance=clearance, fold_delta=delta, divisor=next_divisor,
            cover_index=next_cover,
            supports=floor_app.schedule.stages[0].supports, ledger=ledger))
        prev = (grid_j, h, clearance, slab, cover)
        out_region = Kj
        out_grid = grid_j
        divisor = next_divisor
        cover = next_cover
        final_grad_grid = grid_j1
        final_cover_region = Kj1

    last = recs[-1]
    lo, hi = out_region.bounding_box()
    center = 0.5 * (lo + hi)
    g, alpha = _convexity_lift(g, center, out_grid, floor_target,
                               last.ledger["below_budget"],
                               grad_margin=last.ledger["gradient_band"])
    fv = f.eval_batch(out_grid)
    ev = eps.eval_batch(out_grid)
    gv = g.eval_batch(out_grid)
    above = float(np.min(gv - fv))
    below = float(np.min(fv + ev - gv))
    ggap = np.linalg.norm(g.grad_batch(final_grad_grid) - f.grad_batch(final_grad_grid),
                          axis=1)
    grad_margin = float(np.min(eps.eval_batch(final_grad_grid) - ggap))
    if above <= 0 or below <= 0 or grad_margin <= 0:
        raise VerificationError(
            f"final band margins failed: {above:.3e}, {below:.3e}, {grad_margin:.3e}")
    sub = out_grid[:: max(1, out_grid.shape[0] // 64)]
    eig = float(np.min(np.linalg.eigvalsh(g.hess_batch(sub))))
    if eig <= 0:
        raise VerificationError("strong convexity floor lost after gluing")

    claims = [
        {"kind": "band_on_grid", "region": out_region.describe(), "per_axis": per_axis,
         "min_lower_margin": above, "min_upper_margin": below},
        {"kind": "gradient_band", "region": final_cover_region.describe(),
         "per_axis": per_axis, "min_margin": grad_margin},
        {"kind": "hessian_floor", "region": out_region.describe(), "min_eig": eig},
        {"kind": "stabilization", "tol": STABILIZATION_TOL, "worst": worst_dev},
        {"kind": "convexity_lift", "alpha": alpha, "center": center.tolist()},
    ]
    return Approximant(g=g, schedule=GlueSchedule(recs), claims=claims, target=f)
