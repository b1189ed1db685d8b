"""One-sided bands: support envelopes, the gap functional, hull ceilings.

Pinned values are frozen from in-test oracles (dense tangent sups, brute
hull interpolation, fine far-grid sups) computed independently of the
module under test.
"""

import numpy as np
import pytest

from convexband.domains import CompactRegion, DomainSpec
from convexband.errors import LineDetected, OutsideSampledHull, RayDetected
from convexband.expr import AffineNode, ConvexFn, MaxAffineNode, QuadraticNode
from convexband.rough import (
    SupportSample,
    audit_hull_above,
    audit_lower_band,
    gap_functional,
    gap_profile,
    hull_ceiling,
    lower_band,
    upper_band,
)

R1 = DomainSpec.all(1)
R2 = DomainSpec.all(2)
PARABOLA = ConvexFn(QuadraticNode([[1.0]]))
ABS = ConvexFn(MaxAffineNode([[1.0], [-1.0]], [0.0, 0.0]))


# -------------------------------------------------------------- oracles


def tangent_sup_1d(f, anchors, discount, ys):
    """Dense-sample sup of lowered tangents of a 1d f (oracle)."""
    anchors = np.asarray(anchors, dtype=float).reshape(-1, 1)
    fv = f.eval_batch(anchors)
    sl = f.grad_batch(anchors)[:, 0]
    ys = np.asarray(ys, dtype=float)
    planes = fv[None, :] + sl[None, :] * (ys[:, None] - anchors[:, 0][None, :]) - discount
    return np.max(planes, axis=1)


def hull_interp_1d(xs, vs, y):
    """Brute lower-hull value at y: min over all chords that straddle y."""
    xs = np.asarray(xs, dtype=float)
    vs = np.asarray(vs, dtype=float)
    best = np.inf
    for i in range(xs.size):
        for j in range(xs.size):
            if xs[i] <= y <= xs[j] and xs[j] - xs[i] > 1e-15:
                lam = (y - xs[i]) / (xs[j] - xs[i])
                best = min(best, (1 - lam) * vs[i] + lam * vs[j])
            if abs(xs[i] - y) <= 1e-15:
                best = min(best, vs[i])
    return best


def far_tangent_sup(f, ys_far, x):
    ys_far = np.asarray(ys_far, dtype=float).reshape(-1, 1)
    fv = f.eval_batch(ys_far)
    sl = f.grad_batch(ys_far)[:, 0]
    return float(np.max(fv + sl * (x - ys_far[:, 0])))


# ----------------------------------------------------------- lower band


def test_lower_band_dense_limit_matches_tangent_envelope():
    anchors = np.linspace(-3, 3, 601)
    smp = SupportSample.from_points(PARABOLA, R1, 0.2, anchors)
    ys = np.linspace(-1, 1, 101) + 0.0037
    got = smp.band_values(ys)
    oracle = tangent_sup_1d(PARABOLA, np.linspace(-3, 3, 100_001), 0.1, ys)
    assert np.max(np.abs(got - oracle)) < 1e-4
    assert np.max(np.abs(got - (ys**2 - 0.1))) < 1e-4


def test_lower_band_scalar_query_and_anchor_slack():
    anchors = np.linspace(-2, 2, 41)
    smp = SupportSample.from_points(PARABOLA, R1, 0.2, anchors)
    # plugging the anchor into its own plane concedes exactly eps/2
    for a in (-1.0, 0.5, 2.0):
        g = lower_band(PARABOLA, R1, 0.2, smp, [a])
        assert abs(g - (a * a - 0.1)) < 1e-12
        assert g - (a * a - 0.2) >= 0.05  # >= eps/4


def test_lower_band_refuses_affine():
    f = ConvexFn(AffineNode([2.0], 1.0))
    with pytest.raises(RayDetected):
        SupportSample.from_points(f, R1, 0.1, np.linspace(-1, 1, 5))


def test_lower_band_monotone_refinement():
    coarse = SupportSample.from_points(PARABOLA, R1, 0.2, np.linspace(-2, 2, 9))
    extra = SupportSample.from_points(PARABOLA, R1, 0.2, np.linspace(-1.9, 1.9, 40), check_rays=False)
    fine = coarse.merged(extra)
    ys = np.linspace(-1.5, 1.5, 301)
    assert np.all(fine.band_values(ys) >= coarse.band_values(ys) - 1e-12)


def test_lower_band_stays_strictly_inside_its_band():
    anchors = np.linspace(-3, 3, 121)
    smp = SupportSample.from_points(PARABOLA, R1, 0.2, anchors)
    ys = np.linspace(-2.5, 2.5, 1001)
    g = smp.band_values(ys)
    fv = PARABOLA.eval_batch(ys)
    assert np.all(g < fv)
    assert np.all(g > fv - 0.2)


def test_lower_band_as_fn_is_polyhedral():
    smp = SupportSample.from_points(PARABOLA, R1, 0.2, np.linspace(-2, 2, 21))
    fn = smp.as_fn()
    ys = np.linspace(-2, 2, 97)
    assert np.allclose(fn.eval_batch(ys), smp.band_values(ys))
    mid = fn.eval_batch((ys[:-1] + ys[1:]) / 2)
    assert np.all(mid <= 0.5 * (fn.eval_batch(ys[:-1]) + fn.eval_batch(ys[1:])) + 1e-12)


def test_band_audit_margins_and_robustness():
    smp = SupportSample.from_points(PARABOLA, R1, 0.2, np.linspace(-3, 3, 241))
    K = CompactRegion.box([-1.0], [1.0])
    audit = audit_lower_band(PARABOLA, R1, 0.2, smp, K)
    assert audit.ok
    assert audit.lower_ok and audit.anchor_slack_ok
    assert audit.refinement_robust
    assert audit.robust_margin == pytest.approx(0.1, abs=1e-9)
    # the certificate must survive heavy refinement: margin still honored
    dense = SupportSample.from_points(PARABOLA, R1, 0.2, np.linspace(-4, 4, 4001), check_rays=False)
    G = K.grid(201)
    slack = PARABOLA.eval_batch(G) - dense.band_values(G)
    assert np.min(slack) >= audit.robust_margin - 1e-9


# -------------------------------------------------------- gap functional


def test_gap_functional_pinned_parabola():
    C = CompactRegion.box([-2.0], [2.0])
    ys_far = np.concatenate([-np.geomspace(2, 1e4, 4000), np.geomspace(2, 1e4, 4000)])
    for x in (-1.0, -0.3, 0.0, 0.6, 1.0):
        oracle = far_tangent_sup(PARABOLA, ys_far, x)
        assert abs(oracle - (4 * abs(x) - 4)) < 1e-6
        got = gap_functional(PARABOLA, R1, C, [x])
        assert abs(got - oracle) < 1e-3


def test_gap_functional_inf_gap_is_one():
    C = CompactRegion.box([-2.0], [2.0])
    K = np.linspace(-1, 1, 1001)
    phi = gap_profile(PARABOLA, R1, C, K)
    closed_form = (np.abs(K) - 2.0) ** 2
    assert np.max(np.abs((PARABOLA.eval_batch(K) - phi) - closed_form)) < 1e-3
    assert abs(float(np.min(PARABOLA.eval_batch(K) - phi)) - 1.0) < 1e-3


def test_gap_exposes_ray_of_abs():
    C = CompactRegion.box([-2.0], [2.0])
    assert gap_functional(ABS, R1, C, [0.0]) <= 1e-6
    assert abs(gap_functional(ABS, R1, C, [0.0]) - ABS([0.0])) <= 1e-6


@pytest.mark.parametrize("seed", range(8))
def test_gap_positive_for_curved_quadratics(seed):
    rng = np.random.default_rng(seed)
    B = rng.normal(size=(2, 2))
    Q = B @ B.T + 0.3 * np.eye(2)
    f = ConvexFn(QuadraticNode(Q, rng.normal(size=2)))
    C = CompactRegion.box([-3.0, -3.0], [3.0, 3.0])
    K = CompactRegion.box([-1.0, -1.0], [1.0, 1.0]).grid(21)
    gap = np.min(f.eval_batch(K) - gap_profile(f, R2, C, K))
    assert gap > 0


# ------------------------------------------------------------ upper band


def test_upper_band_pinned_sparse_chord():
    got = upper_band(PARABOLA, R1, 0.2, [[-1.0], [0.0], [1.0]], [0.5])
    oracle = hull_interp_1d([-1.0, 0.0, 1.0], [1.2, 0.2, 1.2], 0.5)
    assert abs(oracle - 0.7) < 1e-12
    assert abs(got - 0.7) < 1e-9
    # sampled point short-circuits to f + eps there
    assert upper_band(PARABOLA, R1, 0.2, [[-1.0], [0.0], [1.0]], [0.0]) == pytest.approx(0.2)
    # sparse-sample ceiling sits above the dense limit f + eps
    assert got > PARABOLA([0.5]) + 0.2


def test_upper_band_dense_kinked_function_is_exact():
    anchors = np.arange(-2, 2.0001, 0.25)
    queries = np.arange(-1.875, 1.9, 0.125)
    for y in queries:
        got = upper_band(ABS, R1, 0.2, anchors, [y])
        oracle = hull_interp_1d(anchors, np.abs(anchors) + 0.2, y)
        assert abs(got - oracle) < 1e-9
        assert abs(got - (abs(y) + 0.2)) < 1e-9


def test_upper_band_refuses_extrapolation():
    with pytest.raises(OutsideSampledHull):
        upper_band(PARABOLA, R1, 0.2, np.linspace(-2, 2, 11), [5.0])


def test_upper_band_refuses_lines():
    f = ConvexFn(QuadraticNode([[1.0, 0.0], [0.0, 0.0]]))
    with pytest.raises(LineDetected):
        upper_band(f, R2, 0.2, [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], [0.2, 0.2])


def test_upper_band_monotone_refinement():
    coarse = [[-1.0], [0.0], [1.0]]
    fine = [[-1.0], [-0.5], [0.0], [0.5], [1.0]]
    for y in (-0.75, -0.2, 0.3, 0.9):
        hi = upper_band(PARABOLA, R1, 0.2, coarse, [y])
        lo = upper_band(PARABOLA, R1, 0.2, fine, [y])
        assert lo <= hi + 1e-9


def test_hull_ceiling_matches_query_lp():
    anchors = np.linspace(-2, 2, 17)
    fn = hull_ceiling(PARABOLA, R1, 0.2, anchors)
    rng = np.random.default_rng(5)
    for y in rng.uniform(-1.9, 1.9, size=12):
        assert abs(fn([y]) - upper_band(PARABOLA, R1, 0.2, anchors, [y])) < 1e-8


def test_hull_ceiling_two_dims_band():
    f = ConvexFn(QuadraticNode(np.eye(2)))
    anchors = CompactRegion.box([-1.5, -1.5], [1.5, 1.5]).grid(31)
    fn = hull_ceiling(f, R2, 0.2, anchors)
    Q = CompactRegion.box([-1.0, -1.0], [1.0, 1.0]).grid(23)
    hv = fn.eval_batch(Q)
    fv = f.eval_batch(Q)
    assert np.all(hv >= fv + 0.2 - 1e-9)
    assert np.all(hv <= fv + 0.2 + 0.01)


def test_hull_audit_certifies_above():
    anchors = np.linspace(-2, 2, 41)
    audits = [[-0.7], [0.3], [1.4]]
    report = audit_hull_above(PARABOLA, R1, 0.2, anchors, audits)
    assert all(r["certified"] for r in report)
    for r, y in zip(report, audits):
        hull_val = upper_band(PARABOLA, R1, 0.2, anchors, y)
        assert hull_val - PARABOLA(y) >= r["separator_gap"] - 1e-9
        assert r["separator_gap"] > 0
