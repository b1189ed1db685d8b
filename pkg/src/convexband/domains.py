"""Open convex domains, compact exhaustions, tolerance fields, convex bodies.

The exhaustion rule is K_j = {x in U : ||x|| <= j and dist(x, dU) >= 1/j},
realized per domain kind.  Compact regions carry a bounding box plus a
membership test so grids can be masked.

Convex bodies provide Minkowski gauges: closed form for polytopes, balls
and boxes, bisection (60 iterations, tolerance ~1e-12 relative) for
sublevel and epigraph bodies.
"""

from __future__ import annotations

import numpy as np

from .errors import InputError
from .expr import ConvexFn, MaxAffineNode, Node, NormNode, register_node
from .utils import as_points, grid_box


class DomainSpec:
    """Open convex subset of R^n: all, box, ball, or polyhedron interior."""

    def __init__(self, kind: str, dim: int, lo=None, hi=None, center=None, radius=None, A=None, b=None):
        self.kind = kind
        self.dim = dim
        if kind == "all":
            pass
        elif kind == "box":
            self.lo = np.asarray(lo, dtype=float)
            self.hi = np.asarray(hi, dtype=float)
            if np.any(self.hi <= self.lo):
                raise InputError("box domain needs lo < hi")
        elif kind == "ball":
            self.center = np.asarray(center, dtype=float)
            self.radius = float(radius)
            if self.radius <= 0:
                raise InputError("ball domain needs radius > 0")
        elif kind == "polyhedron":
            self.A = np.atleast_2d(np.asarray(A, dtype=float))
            self.b = np.atleast_1d(np.asarray(b, dtype=float))
        else:
            raise InputError(f"unknown domain kind {kind!r}")

    @classmethod
    def all(cls, dim: int):
        return cls("all", dim)

    @classmethod
    def box(cls, lo, hi):
        lo = np.atleast_1d(np.asarray(lo, dtype=float))
        return cls("box", lo.size, lo=lo, hi=hi)

    @classmethod
    def ball(cls, center, radius):
        center = np.atleast_1d(np.asarray(center, dtype=float))
        return cls("ball", center.size, center=center, radius=radius)

    @classmethod
    def polyhedron(cls, A, b):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        return cls("polyhedron", A.shape[1], A=A, b=b)

    def contains_batch(self, X, margin: float = 0.0):
        X = as_points(X, self.dim)
        if self.kind == "all":
            return np.ones(X.shape[0], dtype=bool)
        if self.kind == "box":
            return np.all((X >= self.lo + margin) & (X <= self.hi - margin), axis=1)
        if self.kind == "ball":
            return np.linalg.norm(X - self.center, axis=1) < self.radius - margin
        norms = np.linalg.norm(self.A, axis=1)
        return np.all(X @ self.A.T < self.b - margin * norms, axis=1)

    def contains(self, x, margin: float = 0.0) -> bool:
        return bool(self.contains_batch(np.asarray(x, dtype=float).reshape(1, -1), margin)[0])

    def boundary_distance_batch(self, X):
        X = as_points(X, self.dim)
        if self.kind == "all":
            return np.full(X.shape[0], np.inf)
        if self.kind == "box":
            d = np.minimum(X - self.lo, self.hi - X)
            return np.min(d, axis=1)
        if self.kind == "ball":
            return self.radius - np.linalg.norm(X - self.center, axis=1)
        norms = np.linalg.norm(self.A, axis=1)
        return np.min((self.b - X @ self.A.T) / norms, axis=1)

    def boundary_distance(self, x) -> float:
        return float(self.boundary_distance_batch(np.asarray(x, dtype=float).reshape(1, -1))[0])

    def interior_point(self) -> np.ndarray:
        if self.kind == "all":
            return np.zeros(self.dim)
        if self.kind == "box":
            return 0.5 * (self.lo + self.hi)
        if self.kind == "ball":
            return self.center.copy()
        return _chebyshev_center(self.A, self.b)

    def halfspaces(self):
        """(A, b) rows with U = {Ax < b}, or None when not polyhedral."""
        if self.kind == "box":
            n = self.dim
            return np.vstack([np.eye(n), -np.eye(n)]), np.concatenate([self.hi, -self.lo])
        if self.kind == "polyhedron":
            return self.A.copy(), self.b.copy()
        return None

    def compact_exhaustion(self, j: int) -> "CompactRegion":
        """K_j = {x in U : ||x|| <= j, dist(x, dU) >= 1/j}; K_j subset int K_{j+1}."""
        if j < 1:
            raise InputError("exhaustion index must be >= 1")
        r = float(j)
        if self.kind == "all":
            return CompactRegion.ball(np.zeros(self.dim), r)
        if self.kind == "box":
            lo = np.maximum(self.lo + 1.0 / j, -r)
            hi = np.minimum(self.hi - 1.0 / j, r)
            if np.any(hi < lo):
                return CompactRegion.empty(self.dim)
            return CompactRegion.box(lo, hi)
        if self.kind == "ball":
            # conservative ball kept inside {||x|| <= j}; same union as j grows
            rad = min(self.radius - 1.0 / j, r - float(np.linalg.norm(self.center)))
            if rad <= 0:
                return CompactRegion.empty(self.dim)
            return CompactRegion.ball(self.center, rad)
        norms = np.linalg.norm(self.A, axis=1)
        return CompactRegion.polyhedron_ball(self.A, self.b - norms / j, np.zeros(self.dim), r)

    def describe(self) -> dict:
        d = {"kind": self.kind, "dim": self.dim}
        if self.kind == "box":
            d.update(lo=self.lo.tolist(), hi=self.hi.tolist())
        elif self.kind == "ball":
            d.update(center=self.center.tolist(), radius=self.radius)
        elif self.kind == "polyhedron":
            d.update(A=self.A.tolist(), b=self.b.tolist())
        return d

    @classmethod
    def from_dict(cls, d):
        kind = d["kind"]
        if kind == "all":
            return cls.all(d["dim"])
        if kind == "box":
            return cls.box(d["lo"], d["hi"])
        if kind == "ball":
            return cls.ball(d["center"], d["radius"])
        if kind == "polyhedron":
            return cls.polyhedron(d["A"], d["b"])
        raise InputError(f"unknown domain kind {kind!r}")


def compact_exhaustion(U: DomainSpec, j: int) -> "CompactRegion":
    return U.compact_exhaustion(j)


class CompactRegion:
    """Compact convex region with a bounding box and membership test."""

    def __init__(self, kind, dim, **params):
        self.kind = kind
        self.dim = dim
        self.params = params

    @classmethod
    def empty(cls, dim):
        return cls("empty", dim)

    @classmethod
    def box(cls, lo, hi):
        lo = np.atleast_1d(np.asarray(lo, dtype=float))
        hi = np.atleast_1d(np.asarray(hi, dtype=float))
        return cls("box", lo.size, lo=lo, hi=hi)

    @classmethod
    def ball(cls, center, radius):
        center = np.atleast_1d(np.asarray(center, dtype=float))
        return cls("ball", center.size, center=center, radius=float(radius))

    @classmethod
    def polyhedron_ball(cls, A, b, center, radius):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        return cls(
            "polyhedron_ball",
            A.shape[1],
            A=A,
            b=np.atleast_1d(np.asarray(b, dtype=float)),
            center=np.atleast_1d(np.asarray(center, dtype=float)),
            radius=float(radius),
        )

    @property
    def is_empty(self):
        return self.kind == "empty"

    def bounding_box(self):
        if self.kind == "box":
            return self.params["lo"], self.params["hi"]
        if self.kind == "ball":
            c, r = self.params["center"], self.params["radius"]
            return c - r, c + r
        if self.kind == "polyhedron_ball":
            c, r = self.params["center"], self.params["radius"]
            return c - r, c + r
        raise InputError("empty region has no bounding box")

    def contains_batch(self, X, shrink: float = 0.0):
        X = as_points(X, self.dim)
        if self.kind == "empty":
            return np.zeros(X.shape[0], dtype=bool)
        if self.kind == "box":
            lo, hi = self.params["lo"], self.params["hi"]
            return np.all((X >= lo - 1e-12 + shrink) & (X <= hi + 1e-12 - shrink), axis=1)
        if self.kind == "ball":
            c, r = self.params["center"], self.params["radius"]
            return np.linalg.norm(X - c, axis=1) <= r + 1e-12 - shrink
        A, b = self.params["A"], self.params["b"]
        c, r = self.params["center"], self.params["radius"]
        norms = np.linalg.norm(A, axis=1)
        inside_poly = np.all(X @ A.T <= b + 1e-12 - shrink * norms, axis=1)
        return inside_poly & (np.linalg.norm(X - c, axis=1) <= r + 1e-12 - shrink)

    def contains(self, x, shrink: float = 0.0) -> bool:
        return bool(self.contains_batch(np.asarray(x, dtype=float).reshape(1, -1), shrink)[0])

    def grid(self, per_axis: int):
        """Grid points of the bounding box that lie inside the region."""
        lo, hi = self.bounding_box()
        pts = grid_box(lo, hi, per_axis)
        return pts[self.contains_batch(pts)]

    def radius_about(self, center) -> float:
        lo, hi = self.bounding_box()
        center = np.asarray(center, dtype=float)
        return float(np.linalg.norm(np.maximum(np.abs(lo - center), np.abs(hi - center))))

    def describe(self):
        out = {"kind": self.kind, "dim": self.dim}
        for k, v in self.params.items():
            out[k] = v.tolist() if isinstance(v, np.ndarray) else v
        return out


class ToleranceField:
    """Strictly positive continuous tolerance epsilon on U.

    Kinds: const(c); boundary_decaying(scale, exponent) which tends to 0 at
    the boundary of U and at infinity; difference(hi, lo) = hi - lo for
    ConvexFn pairs (positivity is the caller's certified claim); and
    patch_bump(f, A, depth, height) = height * min(1, min(0, (f - A)/depth)^2),
    vanishing exactly where f >= A, climbing C^1-smoothly through the ramp,
    and clamped flat at full height once f dips depth below A.
    """

    def __init__(self, kind, **params):
        self.kind = kind
        self.params = params

    @classmethod
    def const(cls, c: float):
        if c <= 0:
            raise InputError("tolerance must be positive")
        return cls("const", c=float(c))

    @classmethod
    def boundary_decaying(cls, scale: float, exponent: float, domain: DomainSpec):
        if scale <= 0 or exponent <= 0:
            raise InputError("boundary_decaying needs positive scale and exponent")
        return cls("boundary_decaying", scale=float(scale), exponent=float(exponent), domain=domain)

    @classmethod
    def difference(cls, hi: ConvexFn, lo: ConvexFn):
        return cls("difference", hi=hi, lo=lo)

    @classmethod
    def patch_bump(cls, f: ConvexFn, A: ConvexFn, depth: float, height: float):
        if depth <= 0 or height <= 0:
            raise InputError("patch_bump needs positive depth and height")
        return cls("patch_bump", f=f, A=A, depth=float(depth), height=float(height))

    @classmethod
    def inner_tube(cls, gauge: ConvexFn, floor: float):
        if floor <= 0:
            raise InputError("inner_tube needs positive floor")
        return cls("inner_tube", gauge=gauge, floor=float(floor))

    def scaled(self, factor: float) -> "ToleranceField":
        if self.kind == "const":
            return ToleranceField.const(self.params["c"] * factor)
        return ToleranceField("scaled", base=self, factor=float(factor))

    def eval_batch(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if self.kind == "const":
            return np.full(X.shape[0], self.params["c"])
        if self.kind == "boundary_decaying":
            dom = self.params["domain"]
            s, p = self.params["scale"], self.params["exponent"]
            bd = np.minimum(1.0, dom.boundary_distance_batch(X))
            decay = 1.0 / (1.0 + np.linalg.norm(X, axis=1) ** p)
            return s * np.power(bd, p) * decay
        if self.kind == "difference":
            return self.params["hi"].eval_batch(X) - self.params["lo"].eval_batch(X)
        if self.kind == "patch_bump":
            gap = self.params["f"].eval_batch(X) - self.params["A"].eval_batch(X)
            t = np.minimum(0.0, gap / self.params["depth"])
            return self.params["height"] * np.minimum(1.0, t * t)
        if self.kind == "inner_tube":
            mu = self.params["gauge"].eval_batch(X)
            return np.minimum(1.0, np.maximum(self.params["floor"], 0.5 * (1.0 - mu)))
        if self.kind == "scaled":
            return self.params["factor"] * self.params["base"].eval_batch(X)
        raise InputError(f"unknown tolerance kind {self.kind!r}")

    def __call__(self, x) -> float:
        return float(self.eval_batch(np.asarray(x, dtype=float).reshape(1, -1))[0])

    def min_on(self, X) -> float:
        return float(np.min(self.eval_batch(X)))

    def describe(self):
        if self.kind == "const":
            return {"kind": "const", "c": self.params["c"]}
        if self.kind == "boundary_decaying":
            return {
                "kind": "boundary_decaying",
                "scale": self.params["scale"],
                "exponent": self.params["exponent"],
            }
        return {"kind": self.kind}

    @classmethod
    def from_dict(cls, d, domain=None):
        kind = d["kind"]
        if kind == "const":
            return cls.const(d["c"])
        if kind == "boundary_decaying":
            if domain is None:
                raise InputError("boundary_decaying tolerance needs the domain")
            return cls.boundary_decaying(d["scale"], d["exponent"], domain)
        raise InputError(f"tolerance kind {kind!r} not supported in files")


@register_node
class BisectGaugeNode(Node):
    """Gauge of a general convex body about a center, by radial bisection.

    Exact values to ~1e-12 relative; gradients and Hessians come from
    central differences and are flagged non-smooth, so downstream
    constructions that need exact jets refuse these bodies.
    """

    kind = "bisect_gauge"

    def __init__(self, body: "ConvexBody", center):
        self.body = body
        self.center = np.atleast_1d(np.asarray(center, dtype=float))

    @property
    def dim(self):
        return self.body.dim

    def eval_batch(self, X):
        X = as_points(X, self.dim)
        return self.body.gauge_bisect(X, self.center)

    def grad_batch(self, X):
        X = as_points(X, self.dim)
        h = 1e-6
        out = np.zeros_like(X)
        for i in range(self.dim):
            e = np.zeros(self.dim)
            e[i] = h
            out[:, i] = (self.eval_batch(X + e) - self.eval_batch(X - e)) / (2 * h)
        return out

    def hess_batch(self, X):
        n = self.dim
        return np.zeros((X.shape[0], n, n))

    def smooth_mask(self, X):
        return np.zeros(X.shape[0], dtype=bool)

    def to_dict(self):
        return {"kind": self.kind, "body": self.body.describe(), "center": self.center.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(ConvexBody.from_dict(d["body"]), d["center"])


class ConvexBody:
    """Closed convex body with nonempty interior and an interior witness."""

    def __init__(self, kind, dim, witness, **params):
        self.kind = kind
        self.dim = dim
        self.witness = np.atleast_1d(np.asarray(witness, dtype=float))
        self.params = params

    @classmethod
    def ball(cls, center, radius):
        center = np.atleast_1d(np.asarray(center, dtype=float))
        return cls("ball", center.size, center, center=center, radius=float(radius))

    @classmethod
    def polytope(cls, A, b, witness=None):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        b = np.atleast_1d(np.asarray(b, dtype=float))
        if witness is None:
            witness = _chebyshev_center(A, b)
        w = np.asarray(witness, dtype=float)
        if np.any(A @ w >= b):
            raise InputError("polytope witness is not strictly interior")
        return cls("polytope", A.shape[1], w, A=A, b=b)

    @classmethod
    def box(cls, lo, hi):
        lo = np.atleast_1d(np.asarray(lo, dtype=float))
        hi = np.atleast_1d(np.asarray(hi, dtype=float))
        n = lo.size
        A = np.vstack([np.eye(n), -np.eye(n)])
        b = np.concatenate([hi, -lo])
        return cls.polytope(A, b)

    @classmethod
    def sublevel(cls, f: ConvexFn, r: float, witness):
        w = np.asarray(witness, dtype=float)
        if not f(w) < r:
            raise InputError("sublevel witness is not strictly interior")
        return cls("sublevel", f.dim, w, f=f, r=float(r))

    @classmethod
    def epigraph(cls, f: ConvexFn, witness=None):
        if witness is None:
            x0 = np.zeros(f.dim)
            witness = np.concatenate([x0, [f(x0) + 1.0]])
        w = np.asarray(witness, dtype=float)
        if not f(w[:-1]) < w[-1]:
            raise InputError("epigraph witness is not strictly interior")
        return cls("epigraph", f.dim + 1, w, f=f)

    def contains_batch(self, X, margin: float = 0.0):
        X = as_points(X, self.dim)
        if self.kind == "ball":
            return np.linalg.norm(X - self.params["center"], axis=1) <= self.params["radius"] - margin
        if self.kind == "polytope":
            A, b = self.params["A"], self.params["b"]
            norms = np.linalg.norm(A, axis=1)
            return np.all(X @ A.T <= b - margin * norms, axis=1)
        if self.kind == "sublevel":
            return self.params["f"].eval_batch(X) <= self.params["r"] - margin
        f = self.params["f"]
        return f.eval_batch(X[:, :-1]) <= X[:, -1] - margin

    def contains(self, x, margin: float = 0.0) -> bool:
        return bool(self.contains_batch(np.asarray(x, dtype=float).reshape(1, -1), margin)[0])

    @property
    def is_bounded(self) -> bool:
        if self.kind == "ball":
            return True
        if self.kind == "polytope":
            # bounded iff the recession cone {A d <= 0} is {0}
            from scipy.optimize import linprog

            A = self.params["A"]
            n = self.dim
            for k in range(n):
                for sgn in (1.0, -1.0):
                    c = np.zeros(n)
                    c[k] = -sgn
                    res = linprog(c, A_ub=A, b_ub=np.zeros(A.shape[0]), bounds=[(-1, 1)] * n, method="highs")
                    if res.status == 0 and -res.fun > 1e-9:
                        return False
            return True
        if self.kind == "epigraph":
            return False
        # sublevel: sampled radial check
        from .utils import unit_directions

        dirs = unit_directions(self.dim, 64 if self.dim > 1 else 2)
        probe = self.witness + 1e6 * dirs
        return not bool(np.any(self.contains_batch(probe)))

    def gauge_fn(self, center=None) -> ConvexFn:
        """Minkowski gauge about `center` (default: the interior witness) as a ConvexFn."""
        c = self.witness if center is None else np.asarray(center, dtype=float)
        if not self.contains(c, margin=1e-12):
            raise InputError("origin-not-interior: gauge center must be strictly inside the body")
        if self.kind == "ball":
            cc, r = self.params["center"], self.params["radius"]
            if np.allclose(c, cc):
                return ConvexFn(NormNode(cc, 1.0 / r), DomainSpec.all(self.dim))
        if self.kind == "polytope":
            A, b = self.params["A"], self.params["b"]
            slack = b - A @ c
            rows = A / slack[:, None]
            rows = np.vstack([rows, np.zeros((1, self.dim))])
            offs = np.concatenate([-rows[:-1] @ c, [0.0]])
            return ConvexFn(MaxAffineNode(rows, offs), DomainSpec.all(self.dim))
        return ConvexFn(BisectGaugeNode(self, c), DomainSpec.all(self.dim))

    def gauge_bisect(self, X, center) -> np.ndarray:
        """mu(x) = inf{t > 0 : center + (x - center)/t in body}, vectorized."""
        X = as_points(X, self.dim)
        c = np.asarray(center, dtype=float)
        d = X - c
        out = np.zeros(X.shape[0])
        r = np.linalg.norm(d, axis=1)
        nz = r > 0
        # bracket: grow hi until membership, or conclude mu ~ 0 along recession
        lo = np.zeros(nz.sum())
        hi = np.full(nz.sum(), 1e-9)
        dn = d[nz]
        for _ in range(220):
            pts = c + dn / np.maximum(hi[:, None], 1e-300)
            inside = self.contains_batch(pts)
            if np.all(inside):
                break
            hi[~inside] *= 2.0
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            pts = c + dn / np.maximum(mid[:, None], 1e-300)
            inside = self.contains_batch(pts)
            hi = np.where(inside, mid, hi)
            lo = np.where(inside, lo, mid)
        out[nz] = hi
        return out

    def boundary_point(self, direction, center=None) -> np.ndarray:
        c = self.witness if center is None else np.asarray(center, dtype=float)
        d = np.asarray(direction, dtype=float)
        mu = self.gauge_fn(c)
        m = mu(c + d)
        if m <= 1e-14:
            raise InputError("direction lies in the recession cone; no boundary point")
        return c + d / m

    def describe(self):
        out = {"kind": self.kind, "dim": self.dim, "witness": self.witness.tolist()}
        for k, v in self.params.items():
            if isinstance(v, np.ndarray):
                out[k] = v.tolist()
            elif isinstance(v, ConvexFn):
                out[k] = v.to_dict()
            else:
                out[k] = v
        return out

    @classmethod
    def from_dict(cls, d):
        kind = d["kind"]
        if kind == "ball":
            return cls.ball(d["center"], d["radius"])
        if kind == "polytope":
            return cls.polytope(d["A"], d["b"], d.get("witness"))
        if kind == "sublevel":
            return cls.sublevel(ConvexFn.from_dict(d["f"]), d["r"], d["witness"])
        if kind == "epigraph":
            return cls.epigraph(ConvexFn.from_dict(d["f"]), d.get("witness"))
        raise InputError(f"unknown body kind {kind!r}")


def minkowski_gauge(W: ConvexBody, x) -> float:
    """Gauge about the origin; requires 0 strictly inside W."""
    origin = np.zeros(W.dim)
    if not W.contains(origin, margin=1e-12):
        raise InputError("origin-not-interior")
    mu = W.gauge_fn(origin)
    return mu(np.asarray(x, dtype=float))


def _chebyshev_center(A, b):
    from scipy.optimize import linprog

    norms = np.linalg.norm(A, axis=1)
    n = A.shape[1]
    c = np.zeros(n + 1)
    c[-1] = -1.0
    A_ub = np.hstack([A, norms[:, None]])
    res = linprog(c, A_ub=A_ub, b_ub=b, bounds=[(None, None)] * n + [(0, None)], method="highs")
    if res.status != 0 or res.x[-1] <= 1e-12:
        raise InputError("polytope has empty interior or is unbounded in all witness directions")
    return res.x[:n]

