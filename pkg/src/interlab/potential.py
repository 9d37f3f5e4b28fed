"""Discrete potential theory: equilibrium measure, capacity, hitting
probabilities, and conditioned (Doob h-transform) step kernels.

The computational core is the linear system G_K e = 1 on K, where
(G_K)_{xy} = g(x - y): summing the Green function against the equilibrium
measure gives the hitting probability of K, which equals 1 on K itself.
Small sets are solved densely (Cholesky); large axis-aligned windows use
conjugate gradients with the Green matrix applied by FFT convolution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import fft as sfft
from scipy import linalg

from .lattice import LatticeWindow, GreenFunction, neighbors

__all__ = [
    "SolveError",
    "EquilibriumProfile",
    "GreenBoxOperator",
    "equilibrium_measure",
    "hitting_probability",
    "conditioned_kernel",
]

DENSE_CAP = 4096
SIZE_CAP = 150_000
RESIDUAL_TOL = 1e-10


class SolveError(RuntimeError):
    """Raised when a linear solve misses its residual tolerance."""


@dataclass
class EquilibriumProfile:
    """Equilibrium measure of a finite vertex set and its total mass.

    weights[i] is the escape probability from points[i] (never returning to
    the set from time 1 on); capacity is their sum, and normalized weights
    give the entry law of the set.
    """

    points: list
    weights: np.ndarray
    capacity: float
    green: GreenFunction
    window: LatticeWindow | None = None
    _index: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not self._index:
            self._index = {tuple(p): i for i, p in enumerate(self.points)}

    @property
    def normalized(self):
        return self.weights / self.capacity

    def weight_at(self, point):
        i = self._index.get(tuple(point))
        return 0.0 if i is None else float(self.weights[i])

    def __contains__(self, point):
        return tuple(point) in self._index


def _dense_green_matrix(points, green, window=None):
    pts = np.asarray(points, dtype=np.int64)
    if window is not None:
        # windows index a cached difference table instead of hashing points
        gdiff = green.diff_table(window).reshape(-1)
        shape = tuple(2 * s - 1 for s in window.shape)
        rel = pts - np.asarray(window.corner)
        didx = rel[:, None, :] - rel[None, :, :] + (np.asarray(window.shape) - 1)
        flat = np.ravel_multi_index(didx.reshape(-1, window.d).T, shape)
        return gdiff[flat].reshape(len(pts), len(pts))
    diffs = pts[:, None, :] - pts[None, :, :]
    return green.table(diffs.reshape(-1, green.d)).reshape(len(pts), len(pts))


class GreenBoxOperator:
    """v -> G_W v on a window, via FFT convolution of the Green kernel.

    Provides a preconditioned conjugate-gradient ``solve`` whose
    preconditioner inverts the periodic (1 - phi + delta) symbol on the
    padded grid; both the operator and solves are deterministic.
    """

    def __init__(self, window, green):
        self.window = window
        self.shape = window.shape
        self.n = window.n_vertices
        d = window.d
        kernel = green.diff_table(window)
        padded = tuple(sfft.next_fast_len(2 * s - 1) for s in self.shape)
        self.padded = padded
        buf = np.zeros(padded)
        buf[tuple(slice(0, 2 * s - 1) for s in self.shape)] = kernel
        buf = np.roll(buf, shift=[-(s - 1) for s in self.shape], axis=tuple(range(d)))
        self._khat = sfft.rfftn(buf)
        # preconditioner: periodic lattice symbol with a small ridge
        freqs = [2 * math.pi * np.fft.fftfreq(p) for p in padded[:-1]]
        freqs.append(2 * math.pi * np.arange(padded[-1] // 2 + 1) / padded[-1])
        phi = np.zeros([len(f) for f in freqs])
        for ax, f in enumerate(freqs):
            sl = [None] * d
            sl[ax] = slice(None)
            phi = phi + np.cos(f)[tuple(sl)]
        phi /= d
        ridge = (math.pi / (2 * max(self.shape))) ** 2
        self._msym = 1.0 - phi + ridge
        self._crop = tuple(slice(0, s) for s in self.shape)

    def matvec(self, v):
        buf = np.zeros(self.padded)
        buf[self._crop] = v.reshape(self.shape)
        out = sfft.irfftn(sfft.rfftn(buf) * self._khat, s=self.padded)
        return out[self._crop].reshape(-1)

    def _precond(self, v):
        buf = np.zeros(self.padded)
        buf[self._crop] = v.reshape(self.shape)
        out = sfft.irfftn(sfft.rfftn(buf) / self._msym, s=self.padded)
        return out[self._crop].reshape(-1)

    def solve(self, b, tol=1e-12, maxiter=3000):
        b = np.asarray(b, dtype=float).reshape(-1)
        bnorm = float(np.linalg.norm(b))
        if bnorm == 0.0:
            return np.zeros_like(b)
        x = np.zeros_like(b)
        r = b.copy()
        z = self._precond(r)
        p = z.copy()
        rz = float(r @ z)
        for _ in range(maxiter):
            ap = self.matvec(p)
            alpha = rz / float(p @ ap)
            x += alpha * p
            r -= alpha * ap
            if np.linalg.norm(r) <= tol * bnorm:
                return x
            z = self._precond(r)
            rz_new = float(r @ z)
            p = z + (rz_new / rz) * p
            rz = rz_new
        raise SolveError(
            f"CG stalled: residual {np.linalg.norm(r) / bnorm:.3e} after {maxiter} iterations"
        )


def _as_point_list(K):
    if isinstance(K, LatticeWindow):
        return [tuple(p) for p in K.coords]
    return [tuple(p) for p in K]


def boundary_mask(window):
    """Vertices of the window with at least one neighbor outside it."""
    inner = np.ones(window.shape, dtype=bool)
    if all(s > 2 for s in window.shape):
        inner[tuple(slice(1, -1) for _ in window.shape)] = False
    return inner.reshape(-1)


def _boundary_window_solve(window, green, boundary_cap=25_000):
    """Solve G e = 1 on a window via its inner-boundary block."""
    bmask = boundary_mask(window)
    bidx = np.flatnonzero(bmask)
    if len(bidx) > boundary_cap:
        raise ValueError(
            f"window boundary of {len(bidx)} vertices exceeds cap {boundary_cap}"
        )
    pts = window.coords[bidx]
    Gb = _dense_green_matrix(pts, green, window=window)
    try:
        cho = linalg.cho_factor(Gb)
    except linalg.LinAlgError as exc:
        raise SolveError(f"boundary Green factorization failed: {exc}") from exc
    eb = linalg.cho_solve(cho, np.ones(len(bidx)))
    resid = float(np.max(np.abs(Gb @ eb - 1.0)))
    e = np.zeros(window.n_vertices)
    e[bidx] = eb
    return e, resid


def equilibrium_measure(K, green, dense_cap=DENSE_CAP, size_cap=SIZE_CAP):
    """Equilibrium measure, capacity, and entry law of a finite set K.

    Parameters
    ----------
    K : sequence of points or LatticeWindow
        Nonempty finite vertex set.  Arbitrary sets are solved densely up
        to ``dense_cap`` vertices; larger sets must be windows (boxes), and
        are solved by FFT-preconditioned CG up to ``size_cap`` vertices.
    green : GreenFunction
        Shared evaluator for the same dimension.

    Returns
    -------
    EquilibriumProfile

    Raises
    ------
    SolveError
        If the solved weights miss the residual tolerance 1e-10.
    ValueError
        Empty set, or set too large for the configured caps.
    """
    window = K if isinstance(K, LatticeWindow) else None
    points = _as_point_list(K)
    if not points:
        raise ValueError("equilibrium measure of an empty set")
    if len(set(points)) != len(points):
        raise ValueError("duplicate vertices in K")
    n = len(points)
    if n > size_cap:
        raise ValueError(f"set of {n} vertices exceeds size cap {size_cap}")
    ones = np.ones(n)
    if window is not None and n > dense_cap:
        # the equilibrium measure vanishes off the inner boundary, and by the
        # maximum principle the system reduces exactly to the boundary block
        e, resid = _boundary_window_solve(window, green, dense_cap)
    elif n <= dense_cap:
        G = _dense_green_matrix(points, green, window=window)
        try:
            cho = linalg.cho_factor(G)
        except linalg.LinAlgError as exc:
            raise SolveError(f"Green matrix factorization failed: {exc}") from exc
        e = linalg.cho_solve(cho, ones)
        resid = float(np.max(np.abs(G @ e - 1.0)))
    else:
        raise ValueError(f"sets above {dense_cap} vertices must be LatticeWindow boxes")
    if resid > RESIDUAL_TOL:
        raise SolveError(f"equilibrium solve residual {resid:.3e} > {RESIDUAL_TOL:.1e}")
    if e.min() < -1e-9:
        raise SolveError(f"negative equilibrium weight {e.min():.3e}")
    e = np.clip(e, 0.0, None)
    cap = float(e.sum())
    if cap <= 0.0:
        raise SolveError("nonpositive capacity")
    return EquilibriumProfile(points=points, weights=e, capacity=cap, green=green, window=window)


def _as_profile(K, green):
    if isinstance(K, EquilibriumProfile):
        return K
    if green is None:
        raise ValueError("green evaluator required when K is not an EquilibriumProfile")
    return equilibrium_measure(K, green)


def hitting_probability(x, K, green=None):
    """P_x[the walk ever hits K]; equals 1 for x in K.

    K may be an EquilibriumProfile (preferred: reuses the solve) or a raw
    vertex set.  Computed as sum_y g(x-y) e_K(y), clipped to [0, 1].
    """
    prof = _as_profile(K, green)
    if tuple(x) in prof:
        return 1.0
    g = prof.green
    diffs = np.asarray(x, dtype=np.int64)[None, :] - np.asarray(prof.points, dtype=np.int64)
    val = float(prof.weights @ g.table(diffs))
    return min(max(val, 0.0), 1.0)


def conditioned_kernel(x, K, green=None, mode="avoid"):
    """Step distribution over the neighbors of x for the conditioned walk.

    mode="avoid": weights proportional to p(x,y) * P_y[never hit K]; the
    law of the first step of a walk conditioned to stay off K from the next
    step on.  mode="hit": weights proportional to p(x,y) * P_y[hit K];
    drives the walk into K almost surely.

    Returns
    -------
    (nbrs, probs) : list of points and matching probability vector.

    Raises
    ------
    ValueError
        Unknown mode, or all-zero weights (precondition breach: no escape
        route in avoid mode / no hitting route in hit mode).
    """
    if mode not in ("avoid", "hit"):
        raise ValueError(f"mode must be 'avoid' or 'hit', got {mode!r}")
    prof = _as_profile(K, green)
    nbrs = neighbors(tuple(x))
    hits = np.array([hitting_probability(y, prof) for y in nbrs])
    h = hits if mode == "hit" else 1.0 - hits
    total = float(h.sum())
    if total <= 0.0:
        raise ValueError(f"conditioned kernel undefined at {tuple(x)}: zero {mode} weight")
    return nbrs, h / total
