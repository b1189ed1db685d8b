"""Expression tree tests: jets against finite differences, masks, round trips."""

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from convexband import InputError, PointOutsideDomain
from convexband.domains import DomainSpec
from convexband.expr import (
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
    eval,
    jet2,
    midpoint_convexity_audit,
    node_from_dict,
    subgradient,
)
from convexband.utils import fd_gradient, fd_hessian


def _fd_check(f, X, gtol=1e-6, htol=1e-4):
    for x in X:
        j = jet2(f, x)
        g = fd_gradient(lambda y: f(y), x)
        H = fd_hessian(lambda y: f(y), x)
        assert np.allclose(j.gradient, g, atol=gtol), (j.gradient, g)
        assert np.allclose(j.hessian, H, atol=htol), (j.hessian, H)


def test_quadratic_jet_pinned():
    f = ConvexFn(QuadraticNode(np.array([[1.0]]), np.zeros(1), 0.0))
    j = jet2(f, np.array([3.0]))
    assert j.value == 9.0
    assert j.gradient[0] == 6.0
    assert j.hessian[0, 0] == 2.0
    assert j.valid


def test_quadratic_rejects_indefinite_matrix():
    with pytest.raises(InputError):
        QuadraticNode(np.array([[1.0, 0.0], [0.0, -0.5]]), np.zeros(2), 0.0)


def test_logsumexp_pinned_value():
    A = np.array([[1.0], [-1.0]])
    f = ConvexFn(LogSumExpNode(A, np.zeros(2), 10.0))
    assert eval(f, np.zeros(1)) == pytest.approx(np.log(2.0) / 10.0, rel=1e-12)


def test_logsumexp_survives_large_scores():
    # stabilized form must not overflow
    A = np.array([[1.0], [-1.0]])
    f = ConvexFn(LogSumExpNode(A, np.zeros(2), 50.0))
    x = np.array([300.0])
    assert np.isfinite(eval(f, x))
    assert eval(f, x) == pytest.approx(300.0, rel=1e-12)


def test_fd_jets_agree_across_node_zoo():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(8, 2))
    cases = [
        ConvexFn(AffineNode(np.array([1.5, -0.3]), 0.7)),
        ConvexFn(QuadraticNode(np.array([[2.0, 0.3], [0.3, 1.0]]), np.array([0.1, -1.0]), 0.5)),
        ConvexFn(ExpAffineNode(np.array([0.4, -0.2]), 0.1)),
        ConvexFn(LogSumExpNode(rng.normal(size=(4, 2)), rng.normal(size=4), 3.0)),
        ConvexFn(NormNode(np.array([5.0, 5.0]), 2.0)),  # smooth away from center
        ConvexFn(
            SumNode(
                [
                    QuadraticNode(np.eye(2), np.zeros(2), 0.0),
                    ExpAffineNode(np.array([0.2, 0.2]), 0.0),
                ],
                weights=[1.0, 0.5],
                const=1.0,
            )
        ),
        ConvexFn(
            SmoothMaxNode(
                QuadraticNode(np.eye(2), np.zeros(2), 0.0),
                AffineNode(np.array([1.0, 0.0]), 0.3),
                0.5,
            )
        ),
        ConvexFn(PowerNode(NormNode(np.array([4.0, 4.0]), 1.0), 2)),
    ]
    for f in cases:
        _fd_check(f, X)


def test_maxaffine_kink_mask_and_tie_rule():
    A = np.array([[1.0], [-1.0]])
    f = ConvexFn(MaxAffineNode(A, np.zeros(2)))
    pts = np.array([[-1.0], [0.0], [2.0]])
    mask = f.smooth_mask(pts)
    assert mask.tolist() == [True, False, True]
    # at the tie the lowest-index piece supplies the subgradient
    assert subgradient(f, np.zeros(1))[0] == 1.0
    j = jet2(f, np.zeros(1))
    assert not j.valid


def test_max_node_matches_maxaffine_on_affine_children():
    A = np.array([[2.0, -1.0], [0.0, 1.0], [-1.0, -1.0]])
    b = np.array([0.3, -0.2, 0.5])
    f1 = ConvexFn(MaxAffineNode(A, b))
    f2 = ConvexFn(MaxNode(*[AffineNode(A[i], b[i]) for i in range(3)]))
    rng = np.random.default_rng(5)
    X = rng.normal(size=(50, 2))
    assert np.allclose(f1.eval_batch(X), f2.eval_batch(X))
    assert np.allclose(f1.grad_batch(X), f2.grad_batch(X))


def test_norm_node_center_subgradient_is_deterministic():
    f = ConvexFn(NormNode(np.zeros(2), 3.0))
    g = subgradient(f, np.zeros(2))
    assert np.allclose(g, [3.0, 0.0])
    assert not jet2(f, np.zeros(2)).valid


def test_power_node_squared_norm_equals_quadratic():
    sq = ConvexFn(PowerNode(NormNode(np.zeros(2), 1.0), 2))
    q = ConvexFn(QuadraticNode(np.eye(2), np.zeros(2), 0.0))
    rng = np.random.default_rng(2)
    X = rng.normal(size=(40, 2))
    assert np.allclose(sq.eval_batch(X), q.eval_batch(X))
    assert np.allclose(sq.grad_batch(X), q.grad_batch(X))
    assert np.allclose(sq.hess_batch(X), q.hess_batch(X), atol=1e-12)
    # square of a norm is smooth at the center too
    assert sq.smooth_mask(np.zeros((1, 2)))[0]


def test_power_node_rejects_other_exponents():
    with pytest.raises(InputError):
        PowerNode(NormNode(np.zeros(2), 1.0), 3)


def test_sum_node_rejects_negative_weights():
    with pytest.raises(InputError):
        SumNode([AffineNode(np.array([1.0]), 0.0)], weights=[-1.0])


def test_domain_membership_guard():
    f = ConvexFn(
        QuadraticNode(np.eye(1), np.zeros(1), 0.0),
        domain=DomainSpec.box([0.0], [1.0]),
    )
    assert eval(f, np.array([0.5])) == 0.25
    with pytest.raises(PointOutsideDomain):
        eval(f, np.array([2.0]))


def test_serialization_round_trip_bytes_stable():
    inner = SmoothMaxNode(
        QuadraticNode(np.array([[1.0, 0.1], [0.1, 2.0]]), np.array([0.0, 1.0]), 0.3),
        MaxAffineNode(np.array([[1.0, 0.0], [0.0, 1.0]]), np.array([0.0, -0.5])),
        0.25,
    )
    f = ConvexFn(
        SumNode([inner, NormNode(np.array([1.0, 1.0]), 0.5)], weights=[1.0, 2.0], const=0.1),
        domain=DomainSpec.ball([0.0, 0.0], 10.0),
        name="round-trip",
    )
    d = f.to_dict()
    s1 = json.dumps(d, sort_keys=True)
    g = ConvexFn.from_dict(json.loads(s1))
    s2 = json.dumps(g.to_dict(), sort_keys=True)
    assert s1 == s2
    rng = np.random.default_rng(9)
    X = rng.normal(size=(30, 2))
    assert np.allclose(f.eval_batch(X), g.eval_batch(X))
    assert np.allclose(f.grad_batch(X), g.grad_batch(X))


def test_node_from_dict_rejects_unknown_kind():
    with pytest.raises(InputError):
        node_from_dict({"kind": "no-such-node"})


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=20, deadline=None)
def test_random_trees_pass_midpoint_convexity_audit(seed):
    rng = np.random.default_rng(seed)
    n = 2
    A = rng.normal(size=(3, n))
    children = [
        QuadraticNode(np.eye(n) * rng.uniform(0.1, 2.0), rng.normal(size=n), 0.0),
        MaxAffineNode(A, rng.normal(size=3)),
        LogSumExpNode(rng.normal(size=(4, n)), rng.normal(size=4), rng.uniform(0.5, 5.0)),
    ]
    f = ConvexFn(SumNode(children, weights=rng.uniform(0.1, 1.5, size=3)))
    worst, ok = midpoint_convexity_audit(f, window=(-3.0, 3.0), rng=rng, n_pairs=400)
    assert ok, worst


def test_subgradient_supports_convexity_inequality():
    # f(y) >= f(x) + <g, y - x> for reported subgradients, kinks included
    A = np.array([[1.0, 2.0], [-1.0, 0.5], [0.0, -1.0]])
    f = ConvexFn(MaxAffineNode(A, np.array([0.0, 0.1, -0.3])))
    rng = np.random.default_rng(4)
    X = rng.normal(size=(20, 2))
    Y = rng.normal(size=(20, 2))
    fx = f.eval_batch(X)
    G = f.grad_batch(X)
    for x, gx, vx in zip(X, G, fx):
        vals = f.eval_batch(Y)
        assert np.all(vals >= vx + (Y - x) @ gx - 1e-10)
