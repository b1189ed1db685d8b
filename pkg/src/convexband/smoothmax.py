"""Smooth maximum of two convex functions.

The binary smooth max is M_delta(x, y) = (x + y + theta(x - y)) / 2 where
theta is an even convex C^2 regularization of |t| that equals |t| exactly
for |t| >= delta.  We use the quartic core q(u) = 3/8 + (3/4)u^2 - (1/8)u^4,
theta(t) = delta * q(t/delta) on |t| < delta.  The coefficients are forced
by the C^2 matching conditions q(1) = 1, q'(1) = 1, q''(1) = 0.

Useful exact values: theta(0) = 3*delta/8, theta''(0) = 3/(2*delta), and
M_delta(a, a) = a + 3*delta/16.

M is jointly convex and nondecreasing in (x, y), so M_delta(u(.), v(.)) is
convex whenever u and v are.  Where |u - v| >= delta, M equals max(u, v)
exactly; everywhere max <= M <= max + 3*delta/16.
"""

from __future__ import annotations

import numpy as np

from .errors import InputError, NotDifferentiable

# q(u) = A0 + A2 u^2 + A4 u^4 on |u| <= 1
THETA_A0 = 3.0 / 8.0
THETA_A2 = 3.0 / 4.0
THETA_A4 = -1.0 / 8.0


def theta_batch(delta: float, t):
    """Vectorized (value, first, second derivative) of theta_delta."""
    if not delta > 0.0:
        raise InputError(f"nonpositive-delta: {delta}")
    t = np.asarray(t, dtype=float)
    u = t / delta
    inner = np.abs(u) < 1.0
    val = np.where(inner, delta * (THETA_A0 + THETA_A2 * u * u + THETA_A4 * u**4), np.abs(t))
    d1 = np.where(inner, 2.0 * THETA_A2 * u + 4.0 * THETA_A4 * u**3, np.sign(t))
    d2 = np.where(inner, (2.0 * THETA_A2 + 12.0 * THETA_A4 * u * u) / delta, 0.0)
    return val, d1, d2


def theta(delta: float, t: float):
    """Order-2 jet of theta_delta at t, returned as (value, deriv, second)."""
    val, d1, d2 = theta_batch(delta, np.array([t]))
    return float(val[0]), float(d1[0]), float(d2[0])


def smooth_max_values(delta: float, u, v):
    """M_delta applied to precomputed value arrays."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    th, _, _ = theta_batch(delta, u - v)
    return 0.5 * (u + v + th)


def smooth_max(delta: float, u, v):
    """Smooth maximum of two ConvexFn; returns a new ConvexFn."""
    from .expr import ConvexFn, SmoothMaxNode

    if u.dim != v.dim:
        raise InputError(f"domain-mismatch: dims {u.dim} vs {v.dim}")
    domain = _merge_domains(u.domain, v.domain)
    return ConvexFn(SmoothMaxNode(u.root, v.root, delta), domain)


def fold_smooth_max(delta: float, gs):
    """Right-fold of smooth maxima: M(g1, M(g2, ... M(g_{m-1}, g_m)))."""
    gs = list(gs)
    if not gs:
        raise InputError("empty-list: fold_smooth_max needs at least one function")
    out = gs[-1]
    for g in reversed(gs[:-1]):
        out = smooth_max(delta, g, out)
    return out


def gradient_midpoint_bound(delta: float, u, v, x) -> bool:
    """Check ||DM - (Du+Dv)/2|| <= ||Du-Dv||/2 at x (slack 1e-10).

    For this theta the identity DM - (Du+Dv)/2 = (theta'/2)(Du - Dv) makes
    the bound hold with |theta'| <= 1; we still evaluate it numerically.
    """
    from .expr import jet2

    ju = jet2(u, x)
    jv = jet2(v, x)
    if not (ju.valid and jv.valid):
        raise NotDifferentiable(f"kink-at-x: {x}")
    m = smooth_max(delta, u, v)
    jm = jet2(m, x)
    lhs = np.linalg.norm(jm.gradient - 0.5 * (ju.gradient + jv.gradient))
    rhs = 0.5 * np.linalg.norm(ju.gradient - jv.gradient)
    return bool(lhs <= rhs + 1e-10)


def _merge_domains(a, b):
    if a is None:
        return b
    if b is None:
        return a
    if a.kind == "all":
        return b
    if b.kind == "all":
        return a
    if a.describe() != b.describe():
        raise InputError("domain-mismatch: smooth max needs a common domain")
    return a
