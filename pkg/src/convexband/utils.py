"""Small numeric helpers shared by the construction and checking modules.

Nothing here knows about convex functions; these are plain array
utilities: grids, direction sets, simplex projections, hull facets,
finite-difference jets for cross-checks, and stable hashing.
"""

from __future__ import annotations

import hashlib

import numpy as np
from scipy.spatial import ConvexHull, QhullError


def as_points(x, dim: int) -> np.ndarray:
    """Return x as a float array of shape (N, dim)."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        if dim != 1:
            raise ValueError(f"scalar point given for dim {dim}")
        return arr.reshape(1, 1)
    if arr.ndim == 1:
        if dim == 1:
            return arr.reshape(-1, 1)
        if arr.shape[0] == dim:
            return arr.reshape(1, dim)
        raise ValueError(f"cannot view shape {arr.shape} as points of dim {dim}")
    if arr.ndim == 2 and arr.shape[1] == dim:
        return arr
    raise ValueError(f"cannot view shape {arr.shape} as points of dim {dim}")


def grid_box(lo, hi, counts) -> np.ndarray:
    """Uniform grid over the box [lo, hi], returned as (N, dim) points."""
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.atleast_1d(np.asarray(hi, dtype=float))
    counts = np.broadcast_to(np.asarray(counts, dtype=int), lo.shape)
    axes = [np.linspace(a, b, int(c)) for a, b, c in zip(lo, hi, counts)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def unit_directions(dim: int, count: int) -> np.ndarray:
    """Roughly uniform unit vectors: signs (1d), circle (2d), Fibonacci sphere (3d)."""
    if dim == 1:
        return np.array([[1.0], [-1.0]])
    if dim == 2:
        ang = np.linspace(0.0, 2.0 * np.pi, count, endpoint=False)
        return np.stack([np.cos(ang), np.sin(ang)], axis=-1)
    if dim == 3:
        k = np.arange(count, dtype=float) + 0.5
        phi = np.arccos(1.0 - 2.0 * k / count)
        golden = np.pi * (1.0 + np.sqrt(5.0))
        theta = golden * k
        return np.stack(
            [np.sin(phi) * np.cos(theta), np.sin(phi) * np.sin(theta), np.cos(phi)],
            axis=-1,
        )
    rng = np.random.default_rng(0)
    vecs = rng.standard_normal((count, dim))
    return vecs / np.linalg.norm(vecs, axis=1, keepdims=True)


def simplex_projection(v: np.ndarray) -> np.ndarray:
    """Euclidean projection of v onto the probability simplex."""
    v = np.asarray(v, dtype=float)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    idx = np.arange(1, v.size + 1)
    cond = u - css / idx > 0
    rho = idx[cond][-1]
    theta = css[rho - 1] / rho
    return np.maximum(v - theta, 0.0)


def min_norm_point_hull(points: np.ndarray, tol: float = 1e-10, max_iter: int = 20000):
    """Minimum-norm point of conv(rows of points).

    Accelerated projected gradient on the simplex weights; returns
    (point, weights).  The objective is ||P^T w||^2 with Lipschitz
    constant 2*lambda_max(P P^T).
    """
    pts = np.asarray(points, dtype=float)
    m = pts.shape[0]
    if m == 1:
        return pts[0].copy(), np.array([1.0])
    gram = pts @ pts.T
    lip = 2.0 * max(np.linalg.eigvalsh(gram)[-1], 1e-30)
    w = np.full(m, 1.0 / m)
    z = w.copy()
    t = 1.0
    prev_obj = np.inf
    for _ in range(max_iter):
        grad = 2.0 * (gram @ z)
        w_next = simplex_projection(z - grad / lip)
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        z = w_next + ((t - 1.0) / t_next) * (w_next - w)
        w, t = w_next, t_next
        obj = float(w @ gram @ w)
        if abs(prev_obj - obj) <= tol * max(1.0, abs(obj)):
            # keep iterating a little to polish, then stop on tight stall
            if abs(prev_obj - obj) <= 1e-16 + tol * 1e-3:
                break
        prev_obj = obj
    return pts.T @ w, w


def lower_hull_indices_1d(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Indices (into the inputs) of the lower convex hull vertices, left to right."""
    order = np.argsort(x, kind="stable")
    xs, ys = x[order], y[order]
    keep: list[int] = []
    for i in range(xs.size):
        # drop duplicates in x, keeping the lower value
        if keep and xs[i] - xs[keep[-1]] <= 1e-15 * max(1.0, abs(xs[i])):
            if ys[i] < ys[keep[-1]]:
                keep.pop()
            else:
                continue
        while len(keep) >= 2:
            i0, i1 = keep[-2], keep[-1]
            cross = (xs[i1] - xs[i0]) * (ys[i] - ys[i0]) - (ys[i1] - ys[i0]) * (xs[i] - xs[i0])
            if cross <= 0.0:
                keep.pop()
            else:
                break
        keep.append(i)
    return order[np.array(keep, dtype=int)]


def lower_hull_affines(points: np.ndarray, values: np.ndarray):
    """Facets of the lower convex hull of the graph {(p, v)} as (slopes, offsets).

    slopes has shape (k, dim), offsets shape (k,); the hull function is
    max_i slopes[i] . x + offsets[i].  Handles dim 1 and 2.
    """
    pts = np.asarray(points, dtype=float)
    vals = np.asarray(values, dtype=float)
    dim = pts.shape[1]
    # affine data has a single facet; detect it to dodge degenerate hulls
    a_fit, res = _affine_fit(pts, vals)
    if res <= 1e-12 * max(1.0, float(np.max(np.abs(vals)))):
        return a_fit[:dim].reshape(1, dim), np.array([a_fit[dim]])
    if dim == 1:
        idx = lower_hull_indices_1d(pts[:, 0], vals)
        xs, ys = pts[idx, 0], vals[idx]
        slopes = (ys[1:] - ys[:-1]) / (xs[1:] - xs[:-1])
        offsets = ys[:-1] - slopes * xs[:-1]
        return _merge_parallel_facets(slopes.reshape(-1, 1), offsets)
    if dim == 2:
        lifted = np.column_stack([pts, vals])
        try:
            hull = ConvexHull(lifted)
        except QhullError:
            hull = ConvexHull(lifted, qhull_options="QJ")
        slopes, offsets = [], []
        for eq in hull.equations:  # n . x + d <= 0 on the hull
            nx, ny, nz, d = eq
            if nz < -1e-12:  # downward-facing facet
                slopes.append([-nx / nz, -ny / nz])
                offsets.append(-d / nz)
        if not slopes:
            raise ValueError("no downward facets found; data may be degenerate")
        return _merge_parallel_facets(np.array(slopes), np.array(offsets))
    raise NotImplementedError(f"lower hulls implemented for dim 1 and 2, got {dim}")


def _merge_parallel_facets(slopes: np.ndarray, offsets: np.ndarray, rtol: float = 1e-9):
    """Collapse facets with equal slopes, keeping the largest offset.

    Collinear hull points (1d) and coplanar triangulated facets (2d) emit
    repeated rows; under a pointwise max the lower-offset copy is dominated.
    """
    if slopes.shape[0] <= 1:
        return slopes, offsets
    tol = rtol * (1.0 + float(np.max(np.abs(slopes))))
    order = np.lexsort((offsets,) + tuple(slopes.T))  # last key is primary
    keep: list[int] = []
    for i in order:
        if keep and np.all(np.abs(slopes[i] - slopes[keep[-1]]) <= tol):
            keep[-1] = i  # parallel, larger offset wins
        else:
            keep.append(i)
    sel = np.array(keep, dtype=int)
    return slopes[sel], offsets[sel]


def _affine_fit(pts: np.ndarray, vals: np.ndarray):
    """Least-squares affine fit; returns (coeffs [slope..., offset], max residual)."""
    design = np.column_stack([pts, np.ones(pts.shape[0])])
    coef, *_ = np.linalg.lstsq(design, vals, rcond=None)
    res = float(np.max(np.abs(design @ coef - vals))) if pts.shape[0] else 0.0
    return coef, res


def fd_gradient(fun, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient, for cross-checking analytic jets."""
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (fun(x + e) - fun(x - e)) / (2.0 * h)
    return g


def fd_hessian(fun, x: np.ndarray, h: float = 1e-4) -> np.ndarray:
    """Central-difference Hessian, for cross-checking analytic jets."""
    x = np.asarray(x, dtype=float)
    n = x.size
    hess = np.zeros((n, n))
    f0 = fun(x)
    for i in range(n):
        ei = np.zeros(n)
        ei[i] = h
        hess[i, i] = (fun(x + ei) - 2.0 * f0 + fun(x - ei)) / (h * h)
        for j in range(i + 1, n):
            ej = np.zeros(n)
            ej[j] = h
            hess[i, j] = hess[j, i] = (
                fun(x + ei + ej) - fun(x + ei - ej) - fun(x - ei + ej) + fun(x - ei - ej)
            ) / (4.0 * h * h)
    return hess


def stable_hash_array(arr: np.ndarray) -> str:
    """sha256 of an array's contents, prefixed by shape and dtype."""
    arr = np.ascontiguousarray(arr)
    h = hashlib.sha256()
    h.update(str(arr.shape).encode())
    h.update(str(arr.dtype).encode())
    h.update(arr.tobytes())
    return h.hexdigest()


def farthest_point_subset(points: np.ndarray, k: int, start: int = 0) -> np.ndarray:
    """Indices of k points chosen greedily to maximize mutual spread."""
    pts = np.asarray(points, dtype=float)
    n = pts.shape[0]
    if k >= n:
        return np.arange(n)
    chosen = [start]
    dist = np.linalg.norm(pts - pts[start], axis=1)
    for _ in range(k - 1):
        nxt = int(np.argmax(dist))
        chosen.append(nxt)
        dist = np.minimum(dist, np.linalg.norm(pts - pts[nxt], axis=1))
    return np.array(chosen, dtype=int)
