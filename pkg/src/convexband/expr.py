"""Convex functions as expression trees with exact order-2 jets.

Every node evaluates in batch over points of shape (N, dim) and returns
values (N,), gradients (N, dim), Hessians (N, dim, dim), and a smoothness
mask (N,).  The mask is False where a max or norm node is within the kink
tie-tolerance of a tie; gradients there follow the lowest-index active
child rule, so they are always valid subgradients.

Trees serialize to plain dicts (JSON-ready) and back; node classes from
other modules can register themselves in NODE_REGISTRY.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import InputError, PointOutsideDomain
from .smoothmax import theta_batch
from .utils import as_points

KINK_TOL = 1e-9

# point-by-piece score matrices are evaluated in row blocks under this
# entry budget, so wide hulls never materialize G x k temporaries
_SCORE_BUDGET = 40_000_000

NODE_REGISTRY: dict[str, type] = {}


def _row_blocks(n_rows: int, pieces: int):
    step = max(256, int(_SCORE_BUDGET // max(pieces, 1)))
    for i in range(0, n_rows, step):
        yield i, min(i + step, n_rows)


def register_node(cls):
    NODE_REGISTRY[cls.kind] = cls
    return cls


def node_from_dict(d: dict):
    kind = d.get("kind")
    if kind not in NODE_REGISTRY:
        raise InputError(f"unknown expression node kind: {kind!r}")
    return NODE_REGISTRY[kind].from_dict(d)


class Node:
    """Base expression node; subclasses implement the batch jet methods."""

    kind = "abstract"

    @property
    def dim(self) -> int:
        raise NotImplementedError

    @property
    def children(self):
        return []

    def eval_batch(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def grad_batch(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def hess_batch(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def smooth_mask(self, X: np.ndarray) -> np.ndarray:
        return np.ones(X.shape[0], dtype=bool)

    def to_dict(self) -> dict:
        raise NotImplementedError


@register_node
class AffineNode(Node):
    kind = "affine"

    def __init__(self, a, b: float):
        self.a = np.atleast_1d(np.asarray(a, dtype=float))
        self.b = float(b)

    @property
    def dim(self):
        return self.a.shape[0]

    def eval_batch(self, X):
        return X @ self.a + self.b

    def grad_batch(self, X):
        return np.broadcast_to(self.a, X.shape).copy()

    def hess_batch(self, X):
        n = self.dim
        return np.zeros((X.shape[0], n, n))

    def to_dict(self):
        return {"kind": self.kind, "a": self.a.tolist(), "b": self.b}

    @classmethod
    def from_dict(cls, d):
        return cls(d["a"], d["b"])


@register_node
class QuadraticNode(Node):
    """x^T Q x + a.x + b with Q symmetric PSD (min eig >= -1e-12)."""

    kind = "quadratic"

    def __init__(self, Q, a=None, b: float = 0.0):
        Q = np.atleast_2d(np.asarray(Q, dtype=float))
        self.Q = 0.5 * (Q + Q.T)
        n = self.Q.shape[0]
        self.a = np.zeros(n) if a is None else np.asarray(a, dtype=float)
        self.b = float(b)
        lo = float(np.linalg.eigvalsh(self.Q)[0])
        if lo < -1e-12:
            raise InputError(f"quadratic node is not PSD: min eigenvalue {lo}")

    @property
    def dim(self):
        return self.Q.shape[0]

    def eval_batch(self, X):
        return np.einsum("ni,ij,nj->n", X, self.Q, X) + X @ self.a + self.b

    def grad_batch(self, X):
        return 2.0 * X @ self.Q + self.a

    def hess_batch(self, X):
        return np.broadcast_to(2.0 * self.Q, (X.shape[0],) + self.Q.shape).copy()

    def to_dict(self):
        return {"kind": self.kind, "Q": self.Q.tolist(), "a": self.a.tolist(), "b": self.b}

    @classmethod
    def from_dict(cls, d):
        return cls(d["Q"], d.get("a"), d.get("b", 0.0))


@register_node
class MaxAffineNode(Node):
    """max_i (A[i].x + b[i]); the workhorse for hulls, gauges and supports."""

    kind = "max_affine"

    def __init__(self, A, b):
        self.A = np.atleast_2d(np.asarray(A, dtype=float))
        self.b = np.atleast_1d(np.asarray(b, dtype=float))
        if self.A.shape[0] != self.b.shape[0]:
            raise InputError("max_affine: piece count mismatch")

    @property
    def dim(self):
        return self.A.shape[1]

    def _scores(self, X):
        return X @ self.A.T + self.b

    def eval_batch(self, X):
        out = np.empty(X.shape[0])
        for i, j in _row_blocks(X.shape[0], self.A.shape[0]):
            out[i:j] = np.max(self._scores(X[i:j]), axis=1)
        return out

    def grad_batch(self, X):
        out = np.empty((X.shape[0], self.dim))
        for i, j in _row_blocks(X.shape[0], self.A.shape[0]):
            idx = np.argmax(self._scores(X[i:j]), axis=1)  # first max at ties
            out[i:j] = self.A[idx]
        return out

    def hess_batch(self, X):
        n = self.dim
        return np.zeros((X.shape[0], n, n))

    def smooth_mask(self, X):
        if self.A.shape[0] == 1:
            return np.ones(X.shape[0], dtype=bool)
        out = np.empty(X.shape[0], dtype=bool)
        for i, j in _row_blocks(X.shape[0], self.A.shape[0]):
            part = np.partition(self._scores(X[i:j]), -2, axis=1)
            gap = part[:, -1] - part[:, -2]
            scale = np.maximum(1.0, np.abs(part[:, -1]))
            out[i:j] = gap > KINK_TOL * scale
        return out

    def to_dict(self):
        return {"kind": self.kind, "A": self.A.tolist(), "b": self.b.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(d["A"], d["b"])


@register_node
class MaxNode(Node):
    """Pointwise max of child functions, lowest-index rule at ties."""

    kind = "max"

    def __init__(self, *children):
        self._children = list(children)
        if not self._children:
            raise InputError("max node needs children")

    @property
    def dim(self):
        return self._children[0].dim

    @property
    def children(self):
        return self._children

    def _values(self, X):
        return np.stack([c.eval_batch(X) for c in self._children], axis=1)

    def eval_batch(self, X):
        return np.max(self._values(X), axis=1)

    def grad_batch(self, X):
        vals = self._values(X)
        idx = np.argmax(vals, axis=1)
        grads = np.stack([c.grad_batch(X) for c in self._children], axis=1)
        return grads[np.arange(X.shape[0]), idx]

    def hess_batch(self, X):
        vals = self._values(X)
        idx = np.argmax(vals, axis=1)
        hs = np.stack([c.hess_batch(X) for c in self._children], axis=1)
        return hs[np.arange(X.shape[0]), idx]

    def smooth_mask(self, X):
        vals = self._values(X)
        ok = np.logical_and.reduce([c.smooth_mask(X) for c in self._children])
        if vals.shape[1] > 1:
            part = np.partition(vals, -2, axis=1)
            gap = part[:, -1] - part[:, -2]
            scale = np.maximum(1.0, np.abs(part[:, -1]))
            ok = ok & (gap > KINK_TOL * scale)
        return ok

    def to_dict(self):
        return {"kind": self.kind, "children": [c.to_dict() for c in self._children]}

    @classmethod
    def from_dict(cls, d):
        return cls(*[node_from_dict(c) for c in d["children"]])


@register_node
class NormNode(Node):
    """weight * ||x - center||; kink at the center."""

    kind = "norm"

    def __init__(self, center, weight: float = 1.0):
        self.center = np.atleast_1d(np.asarray(center, dtype=float))
        self.weight = float(weight)
        if self.weight <= 0:
            raise InputError("norm node needs positive weight")

    @property
    def dim(self):
        return self.center.shape[0]

    def eval_batch(self, X):
        return self.weight * np.linalg.norm(X - self.center, axis=1)

    def grad_batch(self, X):
        d = X - self.center
        r = np.linalg.norm(d, axis=1)
        out = np.zeros_like(X)
        ok = r > 0
        out[ok] = self.weight * d[ok] / r[ok, None]
        # at the center: deterministic subgradient along the first axis
        out[~ok, 0] = self.weight
        return out

    def hess_batch(self, X):
        d = X - self.center
        r = np.linalg.norm(d, axis=1)
        n = self.dim
        out = np.zeros((X.shape[0], n, n))
        ok = r > KINK_TOL
        u = np.zeros_like(X)
        u[ok] = d[ok] / r[ok, None]
        eye = np.eye(n)
        out[ok] = self.weight * (eye[None] - u[ok, :, None] * u[ok, None, :]) / r[ok, None, None]
        return out

    def smooth_mask(self, X):
        return np.linalg.norm(X - self.center, axis=1) > KINK_TOL

    def to_dict(self):
        return {"kind": self.kind, "center": self.center.tolist(), "weight": self.weight}

    @classmethod
    def from_dict(cls, d):
        return cls(d["center"], d.get("weight", 1.0))


@register_node
class ExpAffineNode(Node):
    kind = "exp_affine"

    def __init__(self, a, b: float = 0.0):
        self.a = np.atleast_1d(np.asarray(a, dtype=float))
        self.b = float(b)

    @property
    def dim(self):
        return self.a.shape[0]

    def eval_batch(self, X):
        return np.exp(X @ self.a + self.b)

    def grad_batch(self, X):
        return self.eval_batch(X)[:, None] * self.a

    def hess_batch(self, X):
        outer = np.outer(self.a, self.a)
        return self.eval_batch(X)[:, None, None] * outer

    def to_dict(self):
        return {"kind": self.kind, "a": self.a.tolist(), "b": self.b}

    @classmethod
    def from_dict(cls, d):
        return cls(d["a"], d.get("b", 0.0))


@register_node
class SumNode(Node):
    """Nonnegative-weighted sum of children plus an optional constant."""

    kind = "sum"

    def __init__(self, children, weights=None, const: float = 0.0):
        self._children = list(children)
        if weights is None:
            weights = np.ones(len(self._children))
        self.weights = np.asarray(weights, dtype=float)
        if np.any(self.weights < 0):
            raise InputError("sum node weights must be nonnegative")
        self.const = float(const)

    @property
    def dim(self):
        return self._children[0].dim

    @property
    def children(self):
        return self._children

    def eval_batch(self, X):
        out = np.full(X.shape[0], self.const)
        for w, c in zip(self.weights, self._children):
            out += w * c.eval_batch(X)
        return out

    def grad_batch(self, X):
        out = np.zeros_like(X)
        for w, c in zip(self.weights, self._children):
            out += w * c.grad_batch(X)
        return out

    def hess_batch(self, X):
        n = self.dim
        out = np.zeros((X.shape[0], n, n))
        for w, c in zip(self.weights, self._children):
            out += w * c.hess_batch(X)
        return out

    def smooth_mask(self, X):
        return np.logical_and.reduce([c.smooth_mask(X) for c in self._children])

    def to_dict(self):
        return {
            "kind": self.kind,
            "children": [c.to_dict() for c in self._children],
            "weights": self.weights.tolist(),
            "const": self.const,
        }

    @classmethod
    def from_dict(cls, d):
        return cls([node_from_dict(c) for c in d["children"]], d.get("weights"), d.get("const", 0.0))


@register_node
class LogSumExpNode(Node):
    """(1/beta) log sum exp(beta * (A[i].x + b[i])); smooth everywhere."""

    kind = "log_sum_exp"

    def __init__(self, A, b, beta: float):
        self.A = np.atleast_2d(np.asarray(A, dtype=float))
        self.b = np.atleast_1d(np.asarray(b, dtype=float))
        self.beta = float(beta)
        if self.beta <= 0:
            raise InputError("log_sum_exp needs beta > 0")

    @property
    def dim(self):
        return self.A.shape[1]

    def _scores(self, X):
        return X @ self.A.T + self.b

    def eval_batch(self, X):
        out = np.empty(X.shape[0])
        for i, j in _row_blocks(X.shape[0], self.A.shape[0]):
            out[i:j] = logsumexp(self.beta * self._scores(X[i:j]), axis=1) / self.beta
        return out

    def _weights(self, X):
        s = self.beta * self._scores(X)
        s = s - np.max(s, axis=1, keepdims=True)
        w = np.exp(s)
        return w / np.sum(w, axis=1, keepdims=True)

    def grad_batch(self, X):
        out = np.empty((X.shape[0], self.dim))
        for i, j in _row_blocks(X.shape[0], self.A.shape[0]):
            out[i:j] = self._weights(X[i:j]) @ self.A
        return out

    def hess_batch(self, X):
        n = self.dim
        out = np.empty((X.shape[0], n, n))
        for i, j in _row_blocks(X.shape[0], self.A.shape[0]):
            w = self._weights(X[i:j])
            g = w @ self.A
            awa = np.einsum("nk,ki,kj->nij", w, self.A, self.A)
            out[i:j] = self.beta * (awa - g[:, :, None] * g[:, None, :])
        return out

    def to_dict(self):
        return {"kind": self.kind, "A": self.A.tolist(), "b": self.b.tolist(), "beta": self.beta}

    @classmethod
    def from_dict(cls, d):
        return cls(d["A"], d["b"], d["beta"])


@register_node
class SmoothMaxNode(Node):
    """M_delta(u, v) = (u + v + theta_delta(u - v)) / 2."""

    kind = "smooth_max"

    def __init__(self, u: Node, v: Node, delta: float):
        self.u = u
        self.v = v
        self.delta = float(delta)
        if self.delta <= 0:
            raise InputError("nonpositive-delta in smooth max")

    @property
    def dim(self):
        return self.u.dim

    @property
    def children(self):
        return [self.u, self.v]

    def eval_batch(self, X):
        fu = self.u.eval_batch(X)
        fv = self.v.eval_batch(X)
        th, _, _ = theta_batch(self.delta, fu - fv)
        return 0.5 * (fu + fv + th)

    def grad_batch(self, X):
        fu = self.u.eval_batch(X)
        fv = self.v.eval_batch(X)
        _, d1, _ = theta_batch(self.delta, fu - fv)
        gu = self.u.grad_batch(X)
        gv = self.v.grad_batch(X)
        return 0.5 * ((1.0 + d1)[:, None] * gu + (1.0 - d1)[:, None] * gv)

    def hess_batch(self, X):
        fu = self.u.eval_batch(X)
        fv = self.v.eval_batch(X)
        _, d1, d2 = theta_batch(self.delta, fu - fv)
        gu = self.u.grad_batch(X)
        gv = self.v.grad_batch(X)
        hu = self.u.hess_batch(X)
        hv = self.v.hess_batch(X)
        diff = gu - gv
        rank1 = diff[:, :, None] * diff[:, None, :]
        return 0.5 * ((1.0 + d1)[:, None, None] * hu + (1.0 - d1)[:, None, None] * hv) + 0.5 * d2[
            :, None, None
        ] * rank1

    def smooth_mask(self, X):
        return self.u.smooth_mask(X) & self.v.smooth_mask(X)

    def to_dict(self):
        return {"kind": self.kind, "u": self.u.to_dict(), "v": self.v.to_dict(), "delta": self.delta}

    @classmethod
    def from_dict(cls, d):
        return cls(node_from_dict(d["u"]), node_from_dict(d["v"]), d["delta"])


@register_node
class PowerNode(Node):
    """child^p for a nonnegative convex child; p = 2 is the gauge-square."""

    kind = "power"

    def __init__(self, child: Node, p: int = 2):
        if p != 2:
            raise InputError("power node supports p = 2 only")
        self.child = child
        self.p = int(p)

    @property
    def dim(self):
        return self.child.dim

    @property
    def children(self):
        return [self.child]

    def eval_batch(self, X):
        return self.child.eval_batch(X) ** 2

    def grad_batch(self, X):
        v = self.child.eval_batch(X)
        return 2.0 * v[:, None] * self.child.grad_batch(X)

    def hess_batch(self, X):
        v = self.child.eval_batch(X)
        g = self.child.grad_batch(X)
        h = self.child.hess_batch(X)
        return 2.0 * (g[:, :, None] * g[:, None, :] + v[:, None, None] * h)

    def smooth_mask(self, X):
        # x^2 smooths a kink only where the child value is ~0 with matching slopes;
        # we keep the conservative child mask except at exact zeros of the value.
        m = self.child.smooth_mask(X)
        v = self.child.eval_batch(X)
        return m | (np.abs(v) <= 1e-300)

    def to_dict(self):
        return {"kind": self.kind, "child": self.child.to_dict(), "p": self.p}

    @classmethod
    def from_dict(cls, d):
        return cls(node_from_dict(d["child"]), d.get("p", 2))


@dataclass
class Jet2:
    value: float
    gradient: np.ndarray
    hessian: np.ndarray
    valid: bool


class ConvexFn:
    """A convex function: an expression tree plus an optional open domain."""

    def __init__(self, root: Node, domain=None, name: str = ""):
        self.root = root
        self.domain = domain
        self.name = name

    @property
    def dim(self) -> int:
        return self.root.dim

    def _check_inside(self, x):
        if self.domain is not None and not self.domain.contains(x):
            raise PointOutsideDomain(f"point-outside-domain: {x}")

    def eval_batch(self, X):
        return self.root.eval_batch(as_points(X, self.dim))

    def grad_batch(self, X):
        return self.root.grad_batch(as_points(X, self.dim))

    def hess_batch(self, X):
        return self.root.hess_batch(as_points(X, self.dim))

    def smooth_mask(self, X):
        return self.root.smooth_mask(as_points(X, self.dim))

    def __call__(self, x):
        return float(self.eval_batch(np.asarray(x, dtype=float).reshape(1, -1))[0])

    def to_dict(self):
        d = {"root": self.root.to_dict(), "name": self.name}
        if self.domain is not None:
            d["domain"] = self.domain.describe()
        return d

    @classmethod
    def from_dict(cls, d, domain=None):
        from .domains import DomainSpec

        if domain is None and "domain" in d:
            domain = DomainSpec.from_dict(d["domain"])
        return cls(node_from_dict(d["root"]), domain, d.get("name", ""))


def eval(f: ConvexFn, x) -> float:  # noqa: A001 - name fixed by the public surface
    x = np.asarray(x, dtype=float).reshape(-1)
    f._check_inside(x)
    return float(f.eval_batch(x.reshape(1, -1))[0])


def subgradient(f: ConvexFn, x) -> np.ndarray:
    x = np.asarray(x, dtype=float).reshape(-1)
    f._check_inside(x)
    return f.grad_batch(x.reshape(1, -1))[0]


def jet2(f: ConvexFn, x) -> Jet2:
    x = np.asarray(x, dtype=float).reshape(-1)
    f._check_inside(x)
    X = x.reshape(1, -1)
    h = f.hess_batch(X)[0]
    h = 0.5 * (h + h.T)
    return Jet2(
        value=float(f.eval_batch(X)[0]),
        gradient=f.grad_batch(X)[0],
        hessian=h,
        valid=bool(f.smooth_mask(X)[0]),
    )


def midpoint_convexity_audit(f: ConvexFn, window, rng, n_pairs: int = 1000, slack: float = 1e-12):
    """Random midpoint convexity check; returns the worst violation (<= slack passes)."""
    lo = np.broadcast_to(np.asarray(window[0], dtype=float), (f.dim,))
    hi = np.broadcast_to(np.asarray(window[1], dtype=float), (f.dim,))
    X = rng.uniform(lo, hi, size=(n_pairs, f.dim))
    Y = rng.uniform(lo, hi, size=(n_pairs, f.dim))
    mid = 0.5 * (X + Y)
    viol = f.eval_batch(mid) - 0.5 * (f.eval_batch(X) + f.eval_batch(Y))
    scale = np.maximum(1.0, np.abs(f.eval_batch(mid)))
    worst = float(np.max(viol / scale))
    return worst, bool(worst <= slack)
