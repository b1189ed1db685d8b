"""One-sided polyhedral bands built from supports and hulls.

Three constructions scaffold the smooth pipelines:

* a band strictly below f: the max of sampled tangent planes, each
  lowered by half the local tolerance (``SupportSample`` / ``lower_band``);
* the gap functional: the sup of tangent planes anchored outside a
  compact C, which measures how far those far supports stay below f and
  so certifies that the lower band cannot creep up to f under sample
  refinement;
* a band weakly above f: the lower convex envelope of sampled
  (x, f(x) + eps(x)) graph points (``upper_band`` / ``hull_ceiling``).

Everything is a finite-sample stand-in for a pointwise sup or hull over
all of U, so each band ships with an audit that states exactly what was
checked and flags what density cannot guarantee.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .domains import CompactRegion, DomainSpec, ToleranceField, compact_exhaustion
from .errors import InputError, LineDetected, OutsideSampledHull, RayDetected, VerificationError
from .expr import ConvexFn, MaxAffineNode
from .recession import affine_separator, detect_graph_line, detect_graph_ray, tilt_separator
from .utils import as_points, lower_hull_affines, unit_directions

SUPPORT_TOL = 1e-8
GAP_OFFSETS = np.geomspace(1e-6, 1e6, 61)


def _field(eps) -> ToleranceField:
    if hasattr(eps, "eval_batch"):
        return eps
    return ToleranceField.const(float(eps))


def _refuse_rays(f: ConvexFn, U: DomainSpec):
    rep = detect_graph_ray(f, U)
    if rep.contains_ray:
        point, direction = rep.witness
        raise RayDetected(point=point, direction=direction)


def _refuse_lines(f: ConvexFn, U: DomainSpec):
    rep = detect_graph_line(f, U)
    if rep.contains_line:
        raise LineDetected(direction=rep.witness)


# --------------------------------------------------------------- below f


@dataclass
class SupportSample:
    """Anchors of the band below f: points, subgradients, values, eps/2."""

    points: np.ndarray
    slopes: np.ndarray
    values: np.ndarray
    discounts: np.ndarray
    ray_checked: bool = False

    @classmethod
    def from_points(cls, f: ConvexFn, U: DomainSpec, eps, P, check_rays: bool = True):
        eps = _field(eps)
        P = as_points(P, f.dim)
        P = P[U.contains_batch(P)]
        if P.shape[0] == 0:
            raise InputError("support sample needs at least one anchor inside the domain")
        if check_rays:
            _refuse_rays(f, U)
        smp = cls(
            points=P,
            slopes=f.grad_batch(P),
            values=f.eval_batch(P),
            discounts=0.5 * eps.eval_batch(P),
            ray_checked=check_rays,
        )
        smp.audit_support()
        return smp

    @classmethod
    def on_region(cls, f, U, eps, region: CompactRegion, per_axis: int = 33, check_rays: bool = True):
        return cls.from_points(f, U, eps, region.grid(per_axis), check_rays=check_rays)

    def audit_support(self):
        """Every anchor plane must minorize f at every other anchor."""
        inner = np.sum(self.slopes * self.points, axis=1)
        plane = self.values[:, None] + self.slopes @ self.points.T - inner[:, None]
        worst = float(np.max(plane - self.values[None, :]))
        scale = 1.0 + float(np.max(np.abs(self.values)))
        if worst > SUPPORT_TOL * scale:
            raise VerificationError(f"support inequality violated by {worst:.3e} on the anchor set")

    def rows(self):
        offs = self.values - np.sum(self.slopes * self.points, axis=1) - self.discounts
        return self.slopes, offs

    def band_values(self, Y) -> np.ndarray:
        A, b = self.rows()
        Y = as_points(Y, self.points.shape[1])
        return np.max(Y @ A.T + b[None, :], axis=1)

    def as_fn(self) -> ConvexFn:
        A, b = self.rows()
        return ConvexFn(MaxAffineNode(A, b))

    def merged(self, other: "SupportSample") -> "SupportSample":
        return SupportSample(
            points=np.vstack([self.points, other.points]),
            slopes=np.vstack([self.slopes, other.slopes]),
            values=np.concatenate([self.values, other.values]),
            discounts=np.concatenate([self.discounts, other.discounts]),
            ray_checked=self.ray_checked and other.ray_checked,
        )


def lower_band(f: ConvexFn, U: DomainSpec, eps, sample: SupportSample, y) -> float:
    """Value at y of the discounted support envelope below f."""
    if not sample.ray_checked:
        _refuse_rays(f, U)
        sample.ray_checked = True
    return float(sample.band_values(y)[0])


@dataclass
class BandAudit:
    """What a grid pass over the band established, and with what margins."""

    grid_points: int
    lower_ok: bool
    min_lower_slack: float
    anchor_slack_ok: bool
    upper_margin: float
    refinement_robust: bool
    robust_margin: float | None
    gap_margin: float | None

    @property
    def ok(self) -> bool:
        return self.lower_ok and self.anchor_slack_ok and self.upper_margin > 0


def audit_lower_band(
    f: ConvexFn,
    U: DomainSpec,
    eps,
    sample: SupportSample,
    K: CompactRegion,
    C: CompactRegion | None = None,
    per_axis: int = 41,
) -> BandAudit:
    """Check the band on a K-grid and try to certify refinement robustness.

    ``refinement_robust`` means: however the anchor set is enlarged, the
    band stays strictly below f on K, by at least ``robust_margin``.  The
    bound splits future anchors at the boundary of C: anchors inside C
    concede at least half the tolerance there, anchors outside concede
    at least the gap-functional margin.
    """
    eps = _field(eps)
    G = K.grid(per_axis)
    G = G[U.contains_batch(G)]
    gv = sample.band_values(G)
    fv = f.eval_batch(G)
    ev = eps.eval_batch(G)
    lower_ok = bool(np.all(fv - ev < gv))
    min_lower_slack = float(np.min(gv - (fv - ev))) if G.shape[0] else np.inf

    anchors = sample.points
    anchor_slack = sample.band_values(anchors) - (f.eval_batch(anchors) - eps.eval_batch(anchors))
    anchor_slack_ok = bool(np.all(anchor_slack >= eps.eval_batch(anchors) / 4 - 1e-12))

    upper_margin = float(np.min(fv - gv)) if G.shape[0] else np.inf

    if C is None:
        C = _grown_compact(U, [anchors, G])
    robust_margin = None
    gap_margin = None
    robust = False
    if C is not None and not C.is_empty:
        phi = gap_profile(f, U, C, G)
        gap_margin = float(np.min(fv - phi)) if G.shape[0] else np.inf
        half_eps_on_c = 0.5 * float(np.min(eps.eval_batch(C.grid(per_axis))))
        robust_margin = min(gap_margin, half_eps_on_c)
        robust = robust_margin > 0
    return BandAudit(
        grid_points=int(G.shape[0]),
        lower_ok=lower_ok,
        min_lower_slack=min_lower_slack,
        anchor_slack_ok=anchor_slack_ok,
        upper_margin=upper_margin,
        refinement_robust=robust,
        robust_margin=robust_margin,
        gap_margin=gap_margin,
    )


def _grown_compact(U: DomainSpec, point_sets, pad: int = 2, j_max: int = 60):
    """Smallest exhaustion compact containing the given points, grown by pad steps."""
    pts = np.vstack([as_points(p, point_sets[0].shape[1]) for p in point_sets])
    for j in range(1, j_max):
        C = compact_exhaustion(U, j)
        if not C.is_empty and bool(np.all(C.contains_batch(pts))):
            return compact_exhaustion(U, j + pad)
    return None


# ---------------------------------------------------------- gap functional


def _region_center(C: CompactRegion) -> np.ndarray:
    if C.kind == "box":
        return 0.5 * (C.params["lo"] + C.params["hi"])
    return np.asarray(C.params["center"], dtype=float)


def _region_exit_radii(C: CompactRegion, center: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    hi = np.full(dirs.shape[0], C.radius_about(center) + 1.0)
    lo = np.zeros(dirs.shape[0])
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        inside = C.contains_batch(center[None, :] + mid[:, None] * dirs)
        lo = np.where(inside, mid, lo)
        hi = np.where(inside, hi, mid)
    return lo


def gap_rows(f: ConvexFn, U: DomainSpec, C: CompactRegion):
    """Tangent planes of f anchored on a geometric sample of U outside C.

    Returned as (slopes, offsets): the gap functional is their max.  Rays
    leave from the boundary of C with offsets spanning 1e-6 .. 1e6.
    """
    n = f.dim
    dirs = unit_directions(n, 360 if n <= 2 else 2562)
    if C.is_empty:
        center = U.interior_point()
        R = np.zeros(dirs.shape[0])
    else:
        center = _region_center(C)
        R = _region_exit_radii(C, center, dirs)
    rad = R[:, None] + GAP_OFFSETS[None, :]
    Y = center[None, None, :] + rad[:, :, None] * dirs[:, None, :]
    Y = Y.reshape(-1, n)
    keep = U.contains_batch(Y)
    if not C.is_empty:
        keep &= ~C.contains_batch(Y)
    Y = Y[keep]
    if Y.shape[0] == 0:
        return np.zeros((0, n)), np.zeros(0)
    Xi = f.grad_batch(Y)
    offs = f.eval_batch(Y) - np.sum(Xi * Y, axis=1)
    return Xi, offs


def gap_functional(f: ConvexFn, U: DomainSpec, C: CompactRegion, x) -> float:
    """sup of far tangent planes at x; -inf when U has nothing outside C."""
    Xi, offs = gap_rows(f, U, C)
    if Xi.shape[0] == 0:
        return float("-inf")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    return float(np.max(Xi @ x + offs))


def gap_profile(f: ConvexFn, U: DomainSpec, C: CompactRegion, X) -> np.ndarray:
    Xi, offs = gap_rows(f, U, C)
    X = as_points(X, f.dim)
    if Xi.shape[0] == 0:
        return np.full(X.shape[0], -np.inf)
    out = np.empty(X.shape[0])
    for s in range(0, X.shape[0], 512):
        blk = X[s : s + 512]
        out[s : s + 512] = np.max(blk @ Xi.T + offs[None, :], axis=1)
    return out


# --------------------------------------------------------------- above f


def upper_band(f: ConvexFn, U: DomainSpec, eps, points, y, check_lines: bool = True) -> float:
    """Hull-of-graph ceiling at y: min of convex combinations of sampled
    (x, f(x)+eps(x)) whose x-part equals y.  Queries outside the sampled
    hull are refused rather than extrapolated."""
    eps = _field(eps)
    if check_lines:
        _refuse_lines(f, U)
    P = as_points(points, f.dim)
    P = P[U.contains_batch(P)]
    if P.shape[0] == 0:
        raise InputError("upper band needs at least one sample point inside the domain")
    v = f.eval_batch(P) + eps.eval_batch(P)
    y = np.atleast_1d(np.asarray(y, dtype=float))
    hit = np.where(np.all(np.abs(P - y[None, :]) <= 1e-12, axis=1))[0]
    if hit.size:
        return float(v[hit[0]])
    m = P.shape[0]
    res = linprog(
        v,
        A_eq=np.vstack([P.T, np.ones((1, m))]),
        b_eq=np.concatenate([y, [1.0]]),
        bounds=[(0, None)] * m,
        method="highs",
    )
    if res.status != 0:
        raise OutsideSampledHull(f"query {y.tolist()} is outside the sampled hull")
    return float(res.fun)


def hull_ceiling(f: ConvexFn, U: DomainSpec, eps, points, check_lines: bool = True) -> ConvexFn:
    """The ceiling as a max-affine function: facets of the lower convex
    envelope of the sampled graph, extended affinely past the sample."""
    eps = _field(eps)
    if check_lines:
        _refuse_lines(f, U)
    if f.dim > 2:
        raise InputError("hull ceilings are implemented for dim <= 2")
    P = as_points(points, f.dim)
    P = P[U.contains_batch(P)]
    if P.shape[0] == 0:
        raise InputError("upper band needs at least one sample point inside the domain")
    v = f.eval_batch(P) + eps.eval_batch(P)
    A, b = lower_hull_affines(P, v)
    return ConvexFn(MaxAffineNode(A, b))


def audit_hull_above(f: ConvexFn, U: DomainSpec, eps, points, audit_points) -> list:
    """Certify f < ceiling at each audit point through a tilted separator.

    An affine function with value above f at the audit point and below
    f + eps at every anchor lies below every hull combination, so the
    ceiling clears f there no matter which combination attains it.
    """
    eps = _field(eps)
    P = as_points(points, f.dim)
    fe = f.eval_batch(P) + eps.eval_batch(P)
    out = []
    for y in as_points(audit_points, f.dim):
        sep = affine_separator(f, U, y)
        tilted = tilt_separator(sep, f, eps, y)
        anchors_ok = bool(np.all(tilted.eval_batch(P) <= fe + 1e-9))
        gap = float(tilted(y) - f(y))
        out.append(
            {
                "point": y.tolist(),
                "anchors_ok": anchors_ok,
                "separator_gap": gap,
                "certified": bool(anchors_ok and gap > 0),
            }
        )
    return out
