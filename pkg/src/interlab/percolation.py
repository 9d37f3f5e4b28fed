"""Connectivity analytics over site/bond configurations on a window:
component labeling, annulus crossings, slab restriction, diameter filters,
planar dual blocking, and local-uniqueness events.

The reference labeling engine is union-find with path compression and union
by size, with labels normalized to the smallest flat vertex index of each
component so outputs are reproducible.  Pure-site configurations are
labeled through scipy.ndimage by default (identical output, much faster);
``engine="unionfind"`` forces the reference path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .lattice import LatticeWindow
from .noise import BondField, SiteField

__all__ = [
    "Configuration",
    "ComponentLabeling",
    "components",
    "crossing",
    "slab_restrict",
    "diameter_filter",
    "dual_blocking_circuit",
    "local_uniqueness_event",
    "annulus_uniqueness_event",
]

_RULES = ("site", "bond", "site_and_bond")


@dataclass
class Configuration:
    """A percolation configuration: open sites and/or open bonds on a window.

    rule="site": an edge is open iff both endpoint sites are open.
    rule="bond": every vertex is active; edges open per the bond bits.
    rule="site_and_bond": an edge is open iff its bond bit is set and both
    endpoint sites are open.
    """

    window: LatticeWindow
    sites: np.ndarray | None = None
    bonds: np.ndarray | None = None
    rule: str = "site"

    def __post_init__(self):
        if self.rule not in _RULES:
            raise ValueError(f"rule must be one of {_RULES}, got {self.rule!r}")
        if isinstance(self.sites, SiteField):
            self.sites = self.sites.bits
        if isinstance(self.bonds, BondField):
            self.bonds = self.bonds.bits
        nv, d = self.window.n_vertices, self.window.d
        if self.sites is not None:
            self.sites = np.asarray(self.sites, dtype=bool)
            if self.sites.shape != (nv,):
                raise ValueError(f"sites must have shape ({nv},)")
        if self.bonds is not None:
            self.bonds = np.asarray(self.bonds, dtype=bool)
            if self.bonds.shape != (d, nv):
                raise ValueError(f"bonds must have shape ({d}, {nv})")
        if self.rule in ("site", "site_and_bond") and self.sites is None:
            raise ValueError(f"rule {self.rule!r} needs site bits")
        if self.rule in ("bond", "site_and_bond") and self.bonds is None:
            raise ValueError(f"rule {self.rule!r} needs bond bits")

    @property
    def active(self):
        """Bool mask of active vertices."""
        if self.rule == "bond":
            return np.ones(self.window.n_vertices, dtype=bool)
        return self.sites

    def open_edges(self):
        """(d, n_vertices) bool of open window-internal edges."""
        w = self.window
        mask = w.edge_mask
        if self.rule == "bond":
            return self.bonds & mask
        both = np.empty_like(mask)
        grid = self.sites.reshape(w.shape)
        for a in range(w.d):
            shifted = np.zeros(w.shape, dtype=bool)
            src = [slice(None)] * w.d
            dst = [slice(None)] * w.d
            src[a] = slice(1, None)
            dst[a] = slice(0, -1)
            shifted[tuple(dst)] = grid[tuple(src)]
            both[a] = (grid & shifted).reshape(-1)
        both &= mask
        if self.rule == "site_and_bond":
            both &= self.bonds
        return both

    def restrict(self, mask):
        """New configuration with all vertices outside ``mask`` closed."""
        mask = np.asarray(mask, dtype=bool)
        if self.rule == "site":
            return Configuration(self.window, sites=self.sites & mask, rule="site")
        if self.rule == "bond":
            return Configuration(
                self.window, sites=mask.copy(), bonds=self.bonds, rule="site_and_bond"
            )
        return Configuration(
            self.window, sites=self.sites & mask, bonds=self.bonds, rule="site_and_bond"
        )


@dataclass
class ComponentLabeling:
    """Per-vertex component labels (-1 on inactive vertices).

    The label of a component is the smallest flat index of its vertices.
    """

    window: LatticeWindow
    labels: np.ndarray

    def __post_init__(self):
        self._roots, inv = np.unique(self.labels[self.labels >= 0], return_inverse=True)
        self._sizes = np.bincount(inv) if len(self._roots) else np.zeros(0, dtype=int)
        if len(self._roots):
            coords = self.window.coords[self.labels >= 0]
            d = self.window.d
            mins = np.full((len(self._roots), d), np.iinfo(np.int64).max)
            maxs = np.full((len(self._roots), d), np.iinfo(np.int64).min)
            np.minimum.at(mins, inv, coords)
            np.maximum.at(maxs, inv, coords)
            self._diams = (maxs - mins).max(axis=1)
        else:
            self._diams = np.zeros(0, dtype=int)

    @property
    def n_components(self):
        return len(self._roots)

    @property
    def n_active(self):
        return int(self._sizes.sum())

    def sizes(self):
        return dict(zip((int(r) for r in self._roots), (int(s) for s in self._sizes)))

    def diameters(self):
        return dict(zip((int(r) for r in self._roots), (int(v) for v in self._diams)))

    def largest(self):
        """(label, size) of a largest component; ties broken by label."""
        if not len(self._roots):
            return None
        best = int(np.argmax(self._sizes))
        return int(self._roots[best]), int(self._sizes[best])


class _DSU:
    __slots__ = ("parent", "size")

    def __init__(self, n):
        self.parent = list(range(n))
        self.size = [1] * n

    def find(self, i):
        p = self.parent
        while p[i] != i:
            p[i] = p[p[i]]
            i = p[i]
        return i

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return
        if self.size[ra] < self.size[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        self.size[ra] += self.size[rb]


def _star_pairs(window, active):
    """Index pairs of l-infinity-adjacent active vertices (one per pair)."""
    grid = active.reshape(window.shape)
    d = window.d
    offsets = []
    for off in np.ndindex(*(3,) * d):
        delta = tuple(o - 1 for o in off)
        if delta > (0,) * d:  # lexicographically positive half
            offsets.append(delta)
    pairs_a, pairs_b = [], []
    idx = np.arange(window.n_vertices).reshape(window.shape)
    for delta in offsets:
        src = [slice(None)] * d
        dst = [slice(None)] * d
        for a, dl in enumerate(delta):
            if dl == 1:
                src[a] = slice(0, window.shape[a] - 1)
                dst[a] = slice(1, None)
            elif dl == -1:
                src[a] = slice(1, None)
                dst[a] = slice(0, window.shape[a] - 1)
        ok = grid[tuple(src)] & grid[tuple(dst)]
        pairs_a.append(idx[tuple(src)][ok])
        pairs_b.append(idx[tuple(dst)][ok])
    return np.concatenate(pairs_a), np.concatenate(pairs_b)


def _label_unionfind(cfg, adjacency):
    w = cfg.window
    active = cfg.active
    dsu = _DSU(w.n_vertices)
    if adjacency == "nearest":
        open_e = cfg.open_edges()
        for a in range(w.d):
            stride = w._strides[a]
            ii = np.flatnonzero(open_e[a])
            for i in ii:
                dsu.union(int(i), int(i) + stride)
    else:
        ia, ib = _star_pairs(w, active)
        for i, j in zip(ia, ib):
            dsu.union(int(i), int(j))
    labels = np.full(w.n_vertices, -1, dtype=np.int64)
    roots = {}
    for i in np.flatnonzero(active):
        r = dsu.find(int(i))
        if r not in roots:
            roots[r] = int(i)  # first visit in index order = smallest index
        labels[i] = roots[r]
    return labels


def _label_ndimage(cfg, adjacency):
    w = cfg.window
    grid = cfg.active.reshape(w.shape)
    conn = 1 if adjacency == "nearest" else w.d
    structure = ndimage.generate_binary_structure(w.d, conn)
    lab, _ = ndimage.label(grid, structure=structure)
    lab = lab.reshape(-1)
    labels = np.full(w.n_vertices, -1, dtype=np.int64)
    act = lab > 0
    if act.any():
        # first occurrence of each ndimage label = its smallest flat index
        first = np.full(lab.max() + 1, -1, dtype=np.int64)
        order = np.flatnonzero(act)
        for i in order[::-1]:
            first[lab[i]] = i
        labels[act] = first[lab[act]]
    return labels


def components(cfg, adjacency="nearest", engine="auto"):
    """Connected components of a configuration.

    adjacency="nearest" uses the 2d lattice edges (per the configuration's
    rule); "star" uses l-infinity distance-1 adjacency of active sites and
    is only defined for pure-site configurations.
    """
    if adjacency not in ("nearest", "star"):
        raise ValueError(f"adjacency must be 'nearest' or 'star', got {adjacency!r}")
    if adjacency == "star" and cfg.rule != "site":
        raise ValueError("star adjacency is defined for pure-site configurations only")
    fast_ok = cfg.rule == "site"
    if engine == "auto" and fast_ok:
        labels = _label_ndimage(cfg, adjacency)
    else:
        labels = _label_unionfind(cfg, adjacency)
    return ComponentLabeling(cfg.window, labels)


def _ball_mask(window, center, radius):
    dist = np.abs(window.coords - np.asarray(center)).max(axis=1)
    return dist <= radius, dist


def crossing(cfg, inner, outer=None, center=None):
    """True iff an open nearest-neighbor path inside B(center, outer) joins
    B(center, inner) to the sphere at distance exactly ``outer``.

    ``outer`` defaults to 2*inner; the window must contain B(center, outer).
    """
    if center is None:
        center = (0,) * cfg.window.d
    if outer is None:
        outer = 2 * inner
    if not (0 <= inner < outer):
        raise ValueError(f"need 0 <= inner < outer, got {inner}, {outer}")
    w = cfg.window
    for c, lo, s in zip(center, w.corner, w.shape):
        if c - outer < lo or c + outer > lo + s - 1:
            raise ValueError(f"window {w} does not contain B({center}, {outer})")
    mask, dist = _ball_mask(w, center, outer)
    lab = components(cfg.restrict(mask))
    inner_labels = set(lab.labels[(dist <= inner) & (lab.labels >= 0)].tolist())
    if not inner_labels:
        return False
    sphere_labels = set(lab.labels[(dist == outer) & (lab.labels >= 0)].tolist())
    return bool(inner_labels & sphere_labels)


def slab_restrict(cfg, thickness):
    """Close every vertex outside the slab Z^2 x [0, thickness)^{d-2}."""
    w = cfg.window
    if thickness < 1:
        raise ValueError("slab thickness must be >= 1")
    mask = np.ones(w.n_vertices, dtype=bool)
    for axis in range(2, w.d):
        mask &= (w.coords[:, axis] >= 0) & (w.coords[:, axis] < thickness)
    return cfg.restrict(mask)


def diameter_filter(cfg, k):
    """Indicator of active vertices in components of l-infinity diameter >= k."""
    if k < 0:
        raise ValueError("diameter threshold must be >= 0")
    lab = components(cfg)
    keep_roots = {r for r, dv in lab.diameters().items() if dv >= k}
    bits = np.isin(lab.labels, sorted(keep_roots)) & (lab.labels >= 0)
    return SiteField(cfg.window, bits)


def dual_blocking_circuit(bad_grid):
    """True iff a *-connected circuit of bad cells separates the grid center
    from the boundary (detected as absence of a nearest-neighbor good path).
    """
    bad = np.asarray(bad_grid, dtype=bool)
    if bad.ndim != 2:
        raise ValueError(f"expected a 2D grid, got shape {bad.shape}")
    good = ~bad
    lab, _ = ndimage.label(good, structure=ndimage.generate_binary_structure(2, 1))
    n0, n1 = bad.shape
    centers = [
        (i, j)
        for i in {(n0 - 1) // 2, n0 // 2}
        for j in {(n1 - 1) // 2, n1 // 2}
    ]
    center_labels = {lab[c] for c in centers if lab[c] > 0}
    if not center_labels:
        return True
    boundary_labels = set(lab[0, :]) | set(lab[-1, :]) | set(lab[:, 0]) | set(lab[:, -1])
    boundary_labels.discard(0)
    return not (center_labels & boundary_labels)


def local_uniqueness_event(cfg, n, center=None):
    """True iff every two connected subsets of the active set within
    B(center, n) with l-infinity diameter >= n/10 are connected inside
    B(center, 2n).

    Equivalently: all components of the configuration restricted to
    B(center, n) with diameter >= n/10 fall into a single component of the
    restriction to B(center, 2n).  Vacuously true when no such subset
    exists.
    """
    if center is None:
        center = (0,) * cfg.window.d
    w = cfg.window
    for c, lo, s in zip(center, w.corner, w.shape):
        if c - 2 * n < lo or c + 2 * n > lo + s - 1:
            raise ValueError(f"window {w} does not contain B({center}, {2 * n})")
    mask_n, _ = _ball_mask(w, center, n)
    lab_n = components(cfg.restrict(mask_n))
    big_roots = [r for r, dv in lab_n.diameters().items() if 10 * dv >= n]
    if len(big_roots) <= 1:
        return True
    mask_2n, _ = _ball_mask(w, center, 2 * n)
    lab_2n = components(cfg.restrict(mask_2n))
    outer = {int(lab_2n.labels[r]) for r in big_roots}
    return len(outer) == 1


def annulus_uniqueness_event(cfg, z, k):
    """Conjunction of the two annulus events around z at scale k:

    (a) B(z, k) is connected to the sphere at distance 4k inside B(z, 4k);
    (b) every component of the restriction to B(z, 3k) crossing from
        B(z, 2k) to the sphere at 3k lies in one component of the
        restriction to B(z, 6k).
    """
    w = cfg.window
    z = tuple(z)
    if k < 1:
        raise ValueError("scale k must be >= 1")
    for c, lo, s in zip(z, w.corner, w.shape):
        if c - 6 * k < lo or c + 6 * k > lo + s - 1:
            raise ValueError(f"window {w} does not contain B({z}, {6 * k})")
    if not crossing(cfg, inner=k, outer=4 * k, center=z):
        return False
    mask3, dist = _ball_mask(w, z, 3 * k)
    lab3 = components(cfg.restrict(mask3))
    crossers = []
    for r in lab3.sizes():
        members = lab3.labels == r
        if (dist[members] <= 2 * k).any() and (dist[members] == 3 * k).any():
            crossers.append(r)
    if len(crossers) <= 1:
        return True
    mask6, _ = _ball_mask(w, z, 6 * k)
    lab6 = components(cfg.restrict(mask6))
    return len({int(lab6.labels[r]) for r in crossers}) == 1
