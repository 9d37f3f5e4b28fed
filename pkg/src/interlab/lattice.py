"""Z^d geometry, simple-random-walk stepping, and the lattice Green function.

Everything downstream (capacities, exact window sampling, renormalization
block events) is built on the primitives here: integer lattice points as
plain tuples, axis-aligned windows with a flat vertex indexing, and a cached
high-precision evaluator for the Green function of the simple random walk.
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np
from scipy import special

Point = tuple

__all__ = [
    "Point",
    "ConvergenceError",
    "neighbors",
    "norm_l1",
    "norm_linf",
    "canonical_edge",
    "srw_step",
    "LatticeWindow",
    "window_box",
    "window_ball",
    "GreenFunction",
]


class ConvergenceError(RuntimeError):
    """Raised when a numerical routine fails to meet its tolerance."""


def norm_l1(x):
    return sum(abs(c) for c in x)


def norm_linf(x):
    return max(abs(c) for c in x)


def neighbors(x):
    """The 2d lattice neighbors of x, ordered (+e1, -e1, +e2, -e2, ...)."""
    out = []
    for axis in range(len(x)):
        for sign in (1, -1):
            y = list(x)
            y[axis] += sign
            out.append(tuple(y))
    return out


def canonical_edge(a, b):
    """Canonical form of a nearest-neighbor edge: smaller endpoint first.

    Raises ValueError if the endpoints are not lattice-adjacent.
    """
    if norm_l1(tuple(u - v for u, v in zip(a, b))) != 1:
        raise ValueError(f"points {a} and {b} are not nearest neighbors")
    return (a, b) if tuple(a) <= tuple(b) else (b, a)


def srw_step(x, rng):
    """One uniform simple-random-walk step from x, consuming one draw."""
    d = len(x)
    k = int(rng.integers(2 * d))
    axis, sign = divmod(k, 2)
    y = list(x)
    y[axis] += 1 if sign == 0 else -1
    return tuple(y)


class LatticeWindow:
    """Axis-aligned box of lattice vertices with a flat index.

    Vertices are ``corner + [0, shape_i)`` per axis; the flat index is
    row-major (last axis fastest).  Window-internal edges are the
    nearest-neighbor pairs with both endpoints inside, identified by
    ``(axis, flat index of the lower endpoint)``.
    """

    def __init__(self, corner, shape):
        corner = tuple(int(c) for c in corner)
        shape = tuple(int(s) for s in shape)
        if len(corner) != len(shape):
            raise ValueError("corner and shape dimension mismatch")
        if any(s <= 0 for s in shape):
            raise ValueError(f"side lengths must be positive, got {shape}")
        self.corner = corner
        self.shape = shape
        self.d = len(shape)
        self.n_vertices = int(np.prod(shape))
        self._strides = tuple(int(s) for s in np.cumprod((1,) + shape[:0:-1])[::-1])

    def __len__(self):
        return self.n_vertices

    def __eq__(self, other):
        return (
            isinstance(other, LatticeWindow)
            and self.corner == other.corner
            and self.shape == other.shape
        )

    def __hash__(self):
        return hash((self.corner, self.shape))

    def __repr__(self):
        return f"LatticeWindow(corner={self.corner}, shape={self.shape})"

    def contains(self, point):
        return all(0 <= p - c < s for p, c, s in zip(point, self.corner, self.shape))

    def index(self, point):
        """Flat index of a vertex; raises KeyError for points outside."""
        if not self.contains(point):
            raise KeyError(f"{point} outside {self}")
        return sum((p - c) * st for p, c, st in zip(point, self.corner, self._strides))

    def point(self, idx):
        rel = []
        for st in self._strides:
            rel.append(idx // st)
            idx %= st
        return tuple(r + c for r, c in zip(rel, self.corner))

    @property
    def coords(self):
        """(n_vertices, d) int array of absolute coordinates, in index order."""
        if not hasattr(self, "_coords"):
            grids = np.indices(self.shape).reshape(self.d, -1).T
            self._coords = grids + np.asarray(self.corner)
        return self._coords

    @property
    def edge_mask(self):
        """(d, n_vertices) bool: True where vertex has a +axis neighbor inside."""
        if not hasattr(self, "_edge_mask"):
            rel = np.indices(self.shape).reshape(self.d, -1)
            self._edge_mask = np.stack(
                [rel[a] < self.shape[a] - 1 for a in range(self.d)]
            )
        return self._edge_mask

    @property
    def n_edges(self):
        return int(self.edge_mask.sum())

    def edge_endpoints(self, axis, idx):
        a = self.point(idx)
        b = list(a)
        b[axis] += 1
        return a, tuple(b)

    def exterior_boundary(self):
        """Sorted list of outside points lattice-adjacent to the window."""
        ext = set()
        for idx in range(self.n_vertices):
            p = self.point(idx)
            for q in neighbors(p):
                if not self.contains(q):
                    ext.add(q)
        return sorted(ext)

    def interior_shift(self, point):
        """Window-relative coordinates of a point (may lie outside)."""
        return tuple(p - c for p, c in zip(point, self.corner))

    def center(self):
        return tuple(c + (s - 1) // 2 for c, s in zip(self.corner, self.shape))


def window_box(corner, shape):
    return LatticeWindow(corner, shape)


def window_ball(center, radius, d=None):
    """The l-infinity ball B(center, radius) as a window (side 2r+1)."""
    if d is None:
        d = len(center)
    center = tuple(center)
    if len(center) != d:
        raise ValueError("center dimension mismatch")
    r = int(radius)
    if r < 0:
        raise ValueError("radius must be nonnegative")
    return LatticeWindow(tuple(c - r for c in center), (2 * r + 1,) * d)


@lru_cache(maxsize=None)
def _gauss_panels(t_max, n_per_panel):
    """Gauss-Legendre nodes/weights on geometric panels [0,1,2,4,...,t_max]."""
    bounds = [0.0]
    b = 1.0
    while b < t_max:
        bounds.append(b)
        b *= 2.0
    bounds.append(float(t_max))
    xs, ws = np.polynomial.legendre.leggauss(n_per_panel)
    ts, wts = [], []
    for a, c in zip(bounds[:-1], bounds[1:]):
        ts.append(0.5 * (c - a) * xs + 0.5 * (a + c))
        wts.append(0.5 * (c - a) * ws)
    return np.concatenate(ts), np.concatenate(wts)


def _tail_series_coeffs(orders, k_max):
    """Coefficients of prod_j ive(m_j, z) ~ (2 pi z)^{-d/2} sum_k P_k z^{-k}."""
    P = np.zeros(k_max + 1)
    P[0] = 1.0
    for m in orders:
        mu = 4.0 * m * m
        c = np.zeros(k_max + 1)
        c[0] = 1.0
        num = 1.0
        for k in range(1, k_max + 1):
            num *= mu - (2 * k - 1) ** 2
            c[k] = (-1) ** k * num / (math.factorial(k) * 8.0**k)
        out = np.zeros(k_max + 1)
        for a in range(k_max + 1):
            if P[a] == 0.0:
                continue
            out[a:] += P[a] * c[: k_max + 1 - a]
        P = out
    return P


class GreenFunction:
    """Green function g(x) of the simple random walk on Z^d, d >= 3.

    g(x) is the expected number of visits to x for the walk started at the
    origin, i.e. the Fourier integral over [-pi, pi]^d of
    cos(x.theta) / (1 - phi(theta)) with phi(theta) = mean cos(theta_i).
    Passing to the Laplace transform of 1/(1 - phi) turns this exactly into
    the one-dimensional integral

        g(x) = int_0^inf prod_j e^{-t/d} I_{|x_j|}(t/d) dt,

    which is evaluated by Gauss-Legendre panels plus an asymptotic tail.
    Every evaluation is performed at two quadrature resolutions which must
    agree within ``tol`` (default 1e-8), otherwise ConvergenceError is
    raised.  Values are cached per symmetry class (sorted absolute
    coordinates), so symmetry identities hold exactly on the cache.

    The evaluator is deterministic and, once warm, safe for concurrent
    read-only use.
    """

    TAIL_TERMS = 6

    def __init__(self, d, tol=1e-8):
        d = int(d)
        if d < 3:
            raise ValueError(f"dimension must be >= 3 (walk recurrent below), got {d}")
        self.d = d
        self.tol = float(tol)
        self._cache = {}

    def _canonical(self, x):
        return tuple(sorted(abs(int(c)) for c in x))

    def _t_max(self, m_max):
        return self.d * max(60.0, 10.0 * (m_max + 1) ** 2)

    def _eval_batch(self, keys, n_per_panel, t_scale):
        """Quadrature values for canonical keys at one resolution."""
        m_max = max(max(k) for k in keys)
        t_max = self._t_max(m_max) * t_scale
        t, w = _gauss_panels(t_max, n_per_panel)
        z = t / self.d
        ive_rows = special.ive(np.arange(m_max + 1)[:, None], z[None, :])
        arr = np.asarray(keys, dtype=np.int64)
        out = np.empty(len(keys))
        step = max(1, 2**22 // max(1, len(t)))
        for lo in range(0, len(keys), step):
            hi = min(lo + step, len(keys))
            prod = np.ones((hi - lo, len(t)))
            for j in range(self.d):
                prod *= ive_rows[arr[lo:hi, j]]
            out[lo:hi] = prod @ w
        # asymptotic tail of the integrand beyond t_max
        d = self.d
        pref = (d / (2 * math.pi)) ** (d / 2)
        for i, key in enumerate(keys):
            P = _tail_series_coeffs(key, self.TAIL_TERMS)
            tail = 0.0
            for k in range(self.TAIL_TERMS + 1):
                tail += P[k] * d**k * t_max ** (1 - d / 2 - k) / (d / 2 - 1 + k)
            out[i] += pref * tail
        return out

    def _evaluate(self, keys):
        coarse = self._eval_batch(keys, 24, 1.0)
        fine = self._eval_batch(keys, 40, 2.0)
        err = np.max(np.abs(fine - coarse))
        if err > self.tol:
            finer = self._eval_batch(keys, 64, 4.0)
            err = np.max(np.abs(finer - fine))
            fine = finer
            if err > self.tol:
                raise ConvergenceError(
                    f"Green quadrature disagreement {err:.3e} exceeds tol {self.tol:.1e}"
                )
        return fine

    def __call__(self, x):
        key = self._canonical(x)
        if len(key) != self.d:
            raise ValueError(f"point dimension {len(key)} != d={self.d}")
        val = self._cache.get(key)
        if val is None:
            val = float(self._evaluate([key])[0])
            self._cache[key] = val
        return val

    def table(self, points):
        """Vectorized evaluation: (n, d) integer array -> (n,) values."""
        pts = np.asarray(points, dtype=np.int64)
        if pts.ndim != 2 or pts.shape[1] != self.d:
            raise ValueError(f"expected (n, {self.d}) point array, got {pts.shape}")
        keys = np.sort(np.abs(pts), axis=1)
        uniq, inv = np.unique(keys, axis=0, return_inverse=True)
        uniq_keys = [tuple(int(c) for c in row) for row in uniq]
        missing = [k for k in uniq_keys if k not in self._cache]
        if missing:
            vals = self._evaluate(missing)
            for k, v in zip(missing, vals):
                self._cache[k] = float(v)
        return np.array([self._cache[k] for k in uniq_keys])[inv]

    def diff_table(self, window):
        """g on the difference box of a window: array of shape (2s-1, ...).

        Entry [dx + s - 1] holds g(dx) for each relative displacement dx of
        two window vertices; used to build convolution kernels and Green
        matrices without re-hashing points.
        """
        shape = tuple(2 * s - 1 for s in window.shape)
        grids = np.indices(shape).reshape(window.d, -1).T
        offs = grids - (np.asarray(window.shape) - 1)
        return self.table(offs).reshape(shape)
