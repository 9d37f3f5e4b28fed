"""Sampling the interlacement point process restricted to a finite window.

Exact mode reproduces the law of the occupied-vertex and traversed-edge
trace on the window: the trajectory count is Poisson(u * cap(W)), anchors
follow the normalized equilibrium measure of W, forward paths are simple
random walks inside the window, and every excursion outside is resolved by
a Bernoulli return coin (the hitting probability of W from the exit point)
followed by a draw from the exact re-entry law P_y[X(H_W) = . | H_W < inf].
Simulating the excursion path itself is unnecessary: it contributes no
window-internal vertices or edges, only its re-entry point matters, and the
re-entry law is obtained from Green-matrix solves.  This keeps the expected
work per sample finite (naive simulation of outside excursions has
heavy-tailed, infinite-mean length for d = 3, 4).

Backward path segments are conditioned never to revisit the window, so they
contribute nothing to the window trace; only their exact first step is
materialized, flagged as truncated.

Truncated mode instead kills paths on leaving a safety ball and carries the
analytic bound u * cap(W) * max_{|x| = R_s} P_x[hit W] on the error this
introduces.

Per-window precomputations (equilibrium measure, exterior hitting
probabilities, re-entry laws per boundary symmetry class) are cached by
window shape and shared read-only; each sample consumes only its own
generator stream.
"""

from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import permutations, product

import numpy as np

from .lattice import GreenFunction, LatticeWindow
from .noise import BondField, SiteField
from .potential import DENSE_CAP, GreenBoxOperator, boundary_mask, equilibrium_measure
from scipy import linalg

__all__ = [
    "Trajectory",
    "InterlacementSample",
    "WindowTables",
    "default_green",
    "prepare_window",
    "sample_count",
    "sample_entry",
    "sample_interlacement",
    "vacant",
    "restrict_to_level",
]

HM_CONSISTENCY_TOL = 1e-6
TRUNCATED_BOX_CAP = 3_000_000


@lru_cache(maxsize=None)
def default_green(d):
    return GreenFunction(d)


@dataclass
class Trajectory:
    """Window trace of one doubly-infinite trajectory.

    forward_segments holds the window-internal runs of the forward path
    (consecutive points within a segment are adjacent; segments are
    separated by outside excursions).  The backward path never revisits the
    window, so only its exact first step is materialized.
    """

    anchor: tuple
    mark: float
    forward_segments: list
    backward_first: tuple | None
    forward_truncated: bool
    backward_truncated: bool = True


@dataclass
class InterlacementSample:
    """Occupied vertices and traversed edges of the process in a window."""

    window: LatticeWindow
    u: float
    mode: str
    n_traj: int
    marks: np.ndarray
    occupied: SiteField
    traversed: BondField | None
    safety_radius: int | None = None
    error_bound: float | None = None
    trajectories: list | None = None
    _traj_visits: list = field(default_factory=list, repr=False)
    _traj_edges: list = field(default_factory=list, repr=False)

    @property
    def occupied_count(self):
        return int(self.occupied.bits.sum())


def _box_symmetry_group(shape):
    """All (axis permutation, per-axis flip) symmetries of a box shape."""
    d = len(shape)
    ops = []
    for perm in permutations(range(d)):
        if any(shape[perm[i]] != shape[i] for i in range(d)):
            continue
        for flips in product((False, True), repeat=d):
            ops.append((perm, flips))
    return ops


def _apply_op(op, rel, shape):
    perm, flips = op
    return tuple(
        (shape[i] - 1 - rel[perm[i]]) if flips[i] else rel[perm[i]] for i in range(len(shape))
    )


def _invert_op(op, shape):
    perm, flips = op
    d = len(shape)
    q = [0] * d
    for i in range(d):
        q[perm[i]] = i
    inv_perm = tuple(q[j] for j in range(d))
    inv_flips = tuple(flips[q[j]] for j in range(d))
    return (inv_perm, inv_flips)


class WindowTables:
    """Shape-level precomputation backing exact window sampling.

    All arrays are in window-relative flat indexing; samples for any window
    of the same shape reuse one instance.  Immutable after construction.
    """

    def __init__(self, shape, green, dense_cap=DENSE_CAP):
        self.shape = tuple(int(s) for s in shape)
        self.green = green
        self.d = green.d
        rel_window = LatticeWindow((0,) * self.d, self.shape)
        self.rel_window = rel_window
        nv = rel_window.n_vertices
        self.n_vertices = nv

        # Green values on all differences between window-or-collar points,
        # indexed by dx + shape (shared by every solve below)
        gdiff_shape = tuple(2 * s + 1 for s in self.shape)
        grids = np.indices(gdiff_shape).reshape(self.d, -1).T - np.asarray(self.shape)
        self._gdiff = green.table(grids)
        self._gdiff_shape = gdiff_shape

        # Equilibrium measure, entry law, and re-entry laws are all supported
        # on the inner boundary; by the maximum principle the Green systems
        # reduce exactly to the boundary block, which is factored once.
        self.bidx = np.flatnonzero(boundary_mask(rel_window))
        self.bcoords = rel_window.coords[self.bidx]
        nb = len(self.bidx)
        Gb = self._g_rows(self.bcoords, self.bcoords)
        cho = linalg.cho_factor(Gb)
        self._solve_b = lambda rhs: linalg.cho_solve(cho, rhs)

        eb = self._solve_b(np.ones(nb))
        resid = float(np.max(np.abs(Gb @ eb - 1.0)))
        if resid > 1e-9:
            raise RuntimeError(f"equilibrium solve residual {resid:.3e}")
        if eb.min() < -1e-9:
            raise RuntimeError(f"negative equilibrium weight {eb.min():.3e}")
        eb = np.clip(eb, 0.0, None)
        self._check_interior_rows(eb, np.ones(3))
        self.equilibrium_boundary = eb
        e = np.zeros(nv)
        e[self.bidx] = eb
        self.equilibrium = e
        self.capacity = float(eb.sum())
        self.entry_cum = np.cumsum(np.where(eb > 1e-12 * self.capacity, eb, 0.0))

        # exterior boundary bookkeeping
        ext = rel_window.exterior_boundary()
        self.ext_points = ext
        ext_index = {p: i for i, p in enumerate(ext)}
        self.n_ext = len(ext)

        # neighbor table: internal index, or nv + exterior id
        coords = rel_window.coords
        table = np.empty((nv, 2 * self.d), dtype=np.int64)
        for axis in range(self.d):
            for s_i, sign in enumerate((1, -1)):
                col = 2 * axis + s_i
                nxt = coords.copy()
                nxt[:, axis] += sign
                inside = (nxt[:, axis] >= 0) & (nxt[:, axis] < self.shape[axis])
                flat = np.zeros(nv, dtype=np.int64)
                if inside.any():
                    flat[inside] = np.ravel_multi_index(nxt[inside].T, self.shape)
                for i in np.flatnonzero(~inside):
                    flat[i] = nv + ext_index[tuple(nxt[i])]
                table[:, col] = flat
        self.nbr_table = table

        # hitting probability of W from each exterior point
        self.hit_ext = self._exterior_hitting()

        # re-entry laws, one solve per boundary symmetry class
        self._build_reentry()

        # lazily built pieces
        self._backward_cums = {}
        self._truncated = {}

    # -- construction helpers -------------------------------------------------

    def _g_rows(self, pts, coords):
        """Pairwise Green values g(p - c) via the difference table."""
        pts = np.asarray(pts, dtype=np.int64)
        off = np.asarray(self.shape)
        out = np.empty((len(pts), len(coords)))
        chunk = max(1, 2**22 // max(1, len(coords)))
        for lo in range(0, len(pts), chunk):
            hi = min(lo + chunk, len(pts))
            didx = pts[lo:hi, None, :] - coords[None, :, :] + off
            flat = np.ravel_multi_index(didx.reshape(-1, self.d).T, self._gdiff_shape)
            out[lo:hi] = self._gdiff[flat].reshape(hi - lo, len(coords))
        return out

    def _check_interior_rows(self, eb, expect):
        """Spot-check the boundary reduction on a few interior rows."""
        interior = np.setdiff1d(
            np.arange(self.n_vertices), self.bidx, assume_unique=False
        )
        if len(interior) == 0:
            return
        probe = interior[:: max(1, len(interior) // len(expect))][: len(expect)]
        rows = self._g_rows(self.rel_window.coords[probe], self.bcoords)
        err = float(np.max(np.abs(rows @ eb - expect[: len(probe)])))
        if err > 1e-8:
            raise RuntimeError(f"boundary reduction inconsistent on interior rows: {err:.3e}")

    def _exterior_hitting(self):
        pts = np.asarray(self.ext_points, dtype=np.int64)
        vals = self._g_rows(pts, self.bcoords) @ self.equilibrium_boundary
        return np.clip(vals, 0.0, 1.0)

    def _build_reentry(self):
        nv = self.n_vertices
        group = _box_symmetry_group(self.shape)
        canon = {}
        self.hm_class = np.empty(self.n_ext, dtype=np.int64)
        inv_op_of_ext = []
        reps = []
        for e_id, p in enumerate(self.ext_points):
            images = [(_apply_op(op, p, self.shape), k) for k, op in enumerate(group)]
            best, k_best = min(images)
            if best not in canon:
                canon[best] = len(reps)
                reps.append(best)
            self.hm_class[e_id] = canon[best]
            inv_op_of_ext.append(_invert_op(group[k_best], self.shape))

        # vertex permutation array per distinct inverse op
        op_key = {}
        self.ext_inv_perm = np.empty(self.n_ext, dtype=np.int64)
        perm_tables = []
        coords = self.rel_window.coords
        for e_id, op in enumerate(inv_op_of_ext):
            key = (op[0], op[1])
            if key not in op_key:
                perm, flips = op
                mapped = np.empty_like(coords)
                for i in range(self.d):
                    col = coords[:, perm[i]]
                    mapped[:, i] = (self.shape[i] - 1 - col) if flips[i] else col
                perm_tables.append(
                    np.ravel_multi_index(mapped.T, self.shape).astype(np.int64)
                )
                op_key[key] = len(perm_tables) - 1
            self.ext_inv_perm[e_id] = op_key[key]
        self.perm_tables = perm_tables

        # one boundary Green solve per class
        self.hm_cum = []
        self.hm_total = np.empty(len(reps))
        ext_lookup = {p: i for i, p in enumerate(self.ext_points)}
        for c_id, y in enumerate(reps):
            rhs = self._g_rows([y], self.bcoords)[0]
            nu = self._solve_b(rhs)
            if nu.min() < -1e-7:
                raise RuntimeError(
                    f"re-entry solve produced negative mass {nu.min():.2e} at class {y}"
                )
            nu = np.clip(nu, 0.0, None)
            total = float(nu.sum())
            hit = float(self.hit_ext[ext_lookup[y]])
            if abs(total - hit) > HM_CONSISTENCY_TOL:
                raise RuntimeError(
                    f"re-entry mass {total:.8f} != hitting probability {hit:.8f} at {y}"
                )
            self.hm_cum.append(np.cumsum(nu))
            self.hm_total[c_id] = total

    # -- lazy pieces -----------------------------------------------------------

    def backward_cum(self, anchor_idx):
        """Cumulative first-step weights of the never-returning backward walk."""
        cached = self._backward_cums.get(anchor_idx)
        if cached is not None:
            return cached
        nv = self.n_vertices
        row = self.nbr_table[anchor_idx]
        weights = np.empty(2 * self.d)
        for k, t in enumerate(row):
            weights[k] = 0.0 if t < nv else 1.0 - self.hit_ext[t - nv]
        total = weights.sum()
        if total <= 0.0:
            raise ValueError(
                f"no escape route from anchor {self.rel_window.point(anchor_idx)}"
            )
        cum = np.cumsum(weights)
        self._backward_cums[anchor_idx] = cum
        return cum

    def truncated_support(self, safety_radius):
        """Neighbor table over the safety ball plus the carried error bound."""
        rs = int(safety_radius)
        cached = self._truncated.get(rs)
        if cached is not None:
            return cached
        center = self.rel_window.center()
        big = LatticeWindow(tuple(c - rs for c in center), (2 * rs + 1,) * self.d)
        if big.n_vertices > TRUNCATED_BOX_CAP:
            raise ValueError(
                f"safety ball of {big.n_vertices} vertices exceeds cap {TRUNCATED_BOX_CAP}"
            )
        for lo_w, lo_b, s_w, s_b in zip(
            (0,) * self.d, big.corner, self.shape, big.shape
        ):
            if lo_b > lo_w or lo_b + s_b < lo_w + s_w:
                raise ValueError("safety radius must cover the window")
        nvb = big.n_vertices
        # neighbor table with -1 = leaves the safety ball
        coords = big.coords
        table = np.full((nvb, 2 * self.d), -1, dtype=np.int64)
        for axis in range(self.d):
            for s_i, sign in enumerate((1, -1)):
                col = 2 * axis + s_i
                nxt = coords.copy()
                nxt[:, axis] += sign
                rel = nxt - np.asarray(big.corner)
                inside = (rel[:, axis] >= 0) & (rel[:, axis] < big.shape[axis])
                table[inside, col] = np.ravel_multi_index(rel[inside].T, big.shape)
        # map big index -> window index (or -1)
        to_window = np.full(nvb, -1, dtype=np.int64)
        rel_w = coords  # window corner is origin in relative frame
        in_w = np.all((rel_w >= 0) & (rel_w < np.asarray(self.shape)), axis=1)
        to_window[in_w] = np.ravel_multi_index(rel_w[in_w].T, self.shape)
        from_window = np.flatnonzero(in_w)[np.argsort(to_window[in_w])]
        # analytic truncation bound via the hitting field on the sphere
        op = GreenBoxOperator(big, self.green)
        e_big = np.zeros(nvb)
        e_big[from_window] = self.equilibrium
        hit_big = op.matvec(e_big)
        dist = np.abs(coords - np.asarray(center)).max(axis=1)
        max_hit = float(np.clip(hit_big[dist == rs], 0.0, 1.0).max())
        cached = (big, table, to_window, from_window, max_hit)
        self._truncated[rs] = cached
        return cached


_TABLE_CACHE = {}


def prepare_window(window, green=None, dense_cap=DENSE_CAP, use_cache=True):
    """Tables for exact sampling on any window of this shape (cached)."""
    if green is None:
        green = default_green(window.d)
    key = (green.d, window.shape)
    if use_cache and key in _TABLE_CACHE:
        return _TABLE_CACHE[key]
    tables = WindowTables(window.shape, green, dense_cap=dense_cap)
    if use_cache:
        _TABLE_CACHE[key] = tables
    return tables


def sample_count(u, K, rng, green=None):
    """Poisson(u * cap(K)) number of trajectories meeting K."""
    if u <= 0:
        raise ValueError(f"level u must be positive, got {u}")
    prof = K if hasattr(K, "capacity") else equilibrium_measure(
        K, green or default_green(len(next(iter(K)) if not isinstance(K, LatticeWindow) else K.corner))
    )
    return int(rng.poisson(u * prof.capacity))


def sample_entry(K, rng, green=None):
    """One anchor point drawn from the normalized equilibrium measure of K."""
    prof = K if hasattr(K, "capacity") else equilibrium_measure(
        K, green or default_green(len(next(iter(K)) if not isinstance(K, LatticeWindow) else K.corner))
    )
    cum = np.cumsum(prof.weights)
    idx = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
    return tuple(prof.points[min(idx, len(prof.points) - 1)])


class _DrawBuffer:
    """Buffered scalar draws from a Generator (directions and uniforms)."""

    __slots__ = ("rng", "two_d", "size", "_dirs", "_di", "_uni", "_ui")

    def __init__(self, rng, two_d, size=8192):
        self.rng = rng
        self.two_d = two_d
        self.size = size
        self._dirs = []
        self._di = 0
        self._uni = []
        self._ui = 0

    def direction(self):
        if self._di >= len(self._dirs):
            self._dirs = self.rng.integers(0, self.two_d, self.size).tolist()
            self._di = 0
        v = self._dirs[self._di]
        self._di += 1
        return v

    def uniform(self):
        if self._ui >= len(self._uni):
            self._uni = self.rng.random(self.size).tolist()
            self._ui = 0
        v = self._uni[self._ui]
        self._ui += 1
        return v


def sample_interlacement(
    u,
    window,
    rng,
    mode="exact",
    safety_radius=None,
    green=None,
    tables=None,
    collect_edges=True,
    collect_trajectories=False,
):
    """Sample the interlacement trace (occupied vertices, traversed edges)
    on a window at level u.

    Parameters
    ----------
    mode : "exact" or "truncated"
        Exact mode reproduces the window-trace law; truncated mode kills
        paths on exiting the safety ball B(center, safety_radius) (default
        radius 4x the window's l-infinity radius) and records the analytic
        error bound on ``error_bound``.
    collect_trajectories : bool
        Also materialize Trajectory records (anchors, window-internal
        forward segments, exact backward first steps).

    Per-trajectory traces are always stored, so the sample can be thinned
    to any lower level via restrict_to_level (monotone coupling in u).
    """
    if u <= 0:
        raise ValueError(f"level u must be positive, got {u}")
    if mode not in ("exact", "truncated"):
        raise ValueError(f"mode must be 'exact' or 'truncated', got {mode!r}")
    if tables is None:
        tables = prepare_window(window, green)
    elif tables.shape != window.shape:
        raise ValueError("tables were built for a different window shape")

    n_traj = int(rng.poisson(u * tables.capacity))
    marks = u * (1.0 - rng.random(n_traj))
    nv = tables.n_vertices
    d = tables.d
    occupied = np.zeros(nv, dtype=bool)
    traversed = np.zeros((d, nv), dtype=bool) if collect_edges else None
    buf = _DrawBuffer(rng, 2 * d)
    entry_cum = tables.entry_cum
    cap_mass = entry_cum[-1]

    traj_visits, traj_edges = [], []
    trajectories = [] if collect_trajectories else None

    if mode == "truncated":
        rs = int(safety_radius) if safety_radius is not None else 4 * (max(window.shape) // 2)
        big, big_nbrs, to_window, from_window, max_hit = tables.truncated_support(rs)
        error_bound = u * tables.capacity * max_hit
    else:
        rs = None
        error_bound = None
        nbr_table = tables.nbr_table
        hit_ext = tables.hit_ext
        hm_class = tables.hm_class
        hm_cum = tables.hm_cum
        hm_total = tables.hm_total
        ext_inv_perm = tables.ext_inv_perm
        perm_tables = tables.perm_tables

    bidx = tables.bidx
    for t in range(n_traj):
        r = buf.uniform() * cap_mass
        start = int(bidx[min(np.searchsorted(entry_cum, r, side="right"), len(bidx) - 1)])
        seen = {start}
        edges = set() if collect_edges else None
        occupied[start] = True
        segments = [[start]] if collect_trajectories else None
        truncated_fwd = False

        if mode == "exact":
            pos = start
            while True:
                k = buf.direction()
                nxt = nbr_table[pos, k]
                if nxt < nv:
                    if collect_edges:
                        axis = k >> 1
                        low = pos if (k & 1) == 0 else nxt
                        eid = axis * nv + low
                        if eid not in edges:
                            edges.add(eid)
                            traversed[axis, low] = True
                    pos = int(nxt)
                    if pos not in seen:
                        seen.add(pos)
                        occupied[pos] = True
                    if collect_trajectories:
                        segments[-1].append(pos)
                else:
                    e_id = int(nxt) - nv
                    if buf.uniform() >= hit_ext[e_id]:
                        break  # escaped to infinity
                    c = hm_class[e_id]
                    rr = buf.uniform() * hm_total[c]
                    b_rep = min(np.searchsorted(hm_cum[c], rr, side="right"), len(bidx) - 1)
                    pos = int(perm_tables[ext_inv_perm[e_id]][bidx[b_rep]])
                    if pos not in seen:
                        seen.add(pos)
                        occupied[pos] = True
                    if collect_trajectories:
                        segments.append([pos])
        else:
            truncated_fwd = True
            pos_big = int(from_window[start])
            while True:
                k = buf.direction()
                nxt = big_nbrs[pos_big, k]
                if nxt < 0:
                    break  # killed at the safety sphere
                nxt = int(nxt)
                wi_prev = to_window[pos_big]
                wi_next = to_window[nxt]
                if wi_next >= 0:
                    if wi_prev >= 0 and collect_edges:
                        axis = k >> 1
                        low = wi_prev if (k & 1) == 0 else wi_next
                        eid = axis * nv + int(low)
                        if eid not in edges:
                            edges.add(eid)
                            traversed[axis, int(low)] = True
                    wi = int(wi_next)
                    if wi not in seen:
                        seen.add(wi)
                        occupied[wi] = True
                    if collect_trajectories:
                        if wi_prev >= 0:
                            segments[-1].append(wi)
                        else:
                            segments.append([wi])
                pos_big = nxt

        traj_visits.append(np.fromiter(seen, dtype=np.int64, count=len(seen)))
        traj_edges.append(
            np.fromiter(edges, dtype=np.int64, count=len(edges)) if collect_edges else None
        )

        if collect_trajectories:
            bw_cum = tables.backward_cum(start)
            kb = int(np.searchsorted(bw_cum, buf.uniform() * bw_cum[-1], side="right"))
            back_rel = tables.ext_points[tables.nbr_table[start, kb] - nv]
            corner = np.asarray(window.corner)
            to_abs = lambda i: tuple(np.asarray(tables.rel_window.point(i)) + corner)
            trajectories.append(
                Trajectory(
                    anchor=to_abs(start),
                    mark=float(marks[t]),
                    forward_segments=[[to_abs(i) for i in seg] for seg in segments],
                    backward_first=tuple(np.asarray(back_rel) + corner),
                    forward_truncated=truncated_fwd,
                )
            )

    sample = InterlacementSample(
        window=window,
        u=float(u),
        mode=mode,
        n_traj=n_traj,
        marks=marks,
        occupied=SiteField(window, occupied),
        traversed=BondField(window, traversed) if collect_edges else None,
        safety_radius=rs,
        error_bound=error_bound,
        trajectories=trajectories,
        _traj_visits=traj_visits,
        _traj_edges=traj_edges,
    )
    return sample


def vacant(sample):
    """Complement of the occupied set within the window."""
    return sample.occupied.complement()


def restrict_to_level(sample, u_new):
    """Thin a sample to a lower level by keeping trajectories with mark <= u_new.

    Realizes the increasing coupling: the result has the law of a sample at
    level u_new, and its occupied/traversed sets are subsets of the
    original's, pathwise.
    """
    if not 0 < u_new <= sample.u:
        raise ValueError(f"need 0 < u_new <= {sample.u}, got {u_new}")
    keep = np.flatnonzero(sample.marks <= u_new)
    window = sample.window
    nv = window.n_vertices
    d = window.d
    occupied = np.zeros(nv, dtype=bool)
    traversed = np.zeros((d, nv), dtype=bool) if sample.traversed is not None else None
    visits, edges = [], []
    for i in keep:
        v = sample._traj_visits[i]
        occupied[v] = True
        visits.append(v)
        if traversed is not None:
            e = sample._traj_edges[i]
            traversed[e // nv, e % nv] = True
            edges.append(e)
    return InterlacementSample(
        window=window,
        u=float(u_new),
        mode=sample.mode,
        n_traj=len(keep),
        marks=sample.marks[keep],
        occupied=SiteField(window, occupied),
        traversed=BondField(window, traversed) if traversed is not None else None,
        safety_radius=sample.safety_radius,
        error_bound=None
        if sample.error_bound is None
        else sample.error_bound * (u_new / sample.u),
        trajectories=None
        if sample.trajectories is None
        else [sample.trajectories[i] for i in keep],
        _traj_visits=visits,
        _traj_edges=edges,
    )
