"""Multiscale renormalization machinery: the geometric scale hierarchy,
block-local seed events on the base scale, the two-well-separated-children
recursion for bad events across scales, good/bad block classification,
*-path events on the block lattice, path lifting through good blocks, and
the decoupling-bound calculator.

Quantitative guarantees in the source theory require the separation
constant 30 * 4^d and enormous block counts; the combinatorial machinery
here is exact at any scale, and a hierarchy flags whether it is inside that
regime (``paper_regime``) or running with a small testing override.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from itertools import product

import numpy as np

from .lattice import LatticeWindow
from .percolation import Configuration, components

__all__ = [
    "l_of_d",
    "ScaleHierarchy",
    "SeedEventSpec",
    "BlockField",
    "PathLiftError",
    "PathLiftReport",
    "extract_box",
    "eval_seed_E",
    "eval_seed_F",
    "eval_seed_D",
    "classify_blocks",
    "eval_recursive",
    "hstar_event",
    "path_lift",
    "decoupling_bound",
]


def l_of_d(d):
    """Separation constant 30 * 4^d of the recursion (d >= 3)."""
    d = int(d)
    if d < 3:
        raise ValueError(f"dimension must be >= 3, got {d}")
    return 30 * 4**d


@dataclass(frozen=True)
class ScaleHierarchy:
    """Geometric scales L_n = l0^n * L0 with block lattices L_n * Z^d.

    ``separation`` defaults to l_of_d(d); overriding it (for unit-scale
    testing) clears the paper_regime flag.
    """

    d: int
    L0: int
    l0: int
    separation: int | None = None

    def __post_init__(self):
        if self.d < 3:
            raise ValueError(f"dimension must be >= 3, got {self.d}")
        if self.L0 < 1 or self.l0 < 2:
            raise ValueError("need L0 >= 1 and l0 >= 2")
        if self.separation is None:
            object.__setattr__(self, "separation", l_of_d(self.d))
        if self.separation < 1:
            raise ValueError("separation constant must be >= 1")

    @property
    def paper_regime(self):
        ld = l_of_d(self.d)
        return self.separation == ld and self.l0 >= ld and self.l0 % ld == 0

    def scale_length(self, n):
        if n < 0:
            raise ValueError("scale index must be >= 0")
        return self.L0 * self.l0**n

    def sub_blocks(self, x, n):
        """Corners of the scale-(n-1) blocks inside x + [0, L_n)^d."""
        if n < 1:
            raise ValueError("sub_blocks needs n >= 1")
        step = self.scale_length(n - 1)
        return [
            tuple(c + step * v for c, v in zip(x, vec))
            for vec in product(range(self.l0), repeat=self.d)
        ]

    def separated(self, x1, x2, n):
        """Strict separation test: separation * |x1-x2|_inf > L_n, exactly."""
        dist = max(abs(a - b) for a, b in zip(x1, x2))
        return self.separation * dist > self.scale_length(n)


@dataclass(frozen=True)
class SeedEventSpec:
    """Base scale and density target shared by the component seed events."""

    L0: int
    m: float

    def __post_init__(self):
        if self.L0 < 1:
            raise ValueError("L0 must be >= 1")
        if not 0.0 < self.m < 1.0:
            raise ValueError(f"density target must lie in (0, 1), got {self.m}")


def _threshold(spec, d, factor):
    return factor * spec.m * spec.L0**d


def extract_box(cfg, corner, shape):
    """Sub-configuration on the box corner + [0, shape)^d (coverage checked)."""
    w = cfg.window
    for c, s, wc, ws in zip(corner, shape, w.corner, w.shape):
        if c < wc or c + s > wc + ws:
            raise ValueError(f"box {corner}+{shape} not covered by window {w}")
    sub = LatticeWindow(tuple(corner), tuple(shape))
    rel = tuple(c - wc for c, wc in zip(corner, w.corner))
    slicer = tuple(slice(r, r + s) for r, s in zip(rel, shape))
    sites = bonds = None
    if cfg.sites is not None:
        sites = cfg.sites.reshape(w.shape)[slicer].reshape(-1).copy()
    if cfg.bonds is not None:
        bonds = np.empty((w.d, sub.n_vertices), dtype=bool)
        for a in range(w.d):
            bonds[a] = cfg.bonds[a].reshape(w.shape)[slicer].reshape(-1)
        bonds &= sub.edge_mask
    return Configuration(sub, sites=sites, bonds=bonds, rule=cfg.rule)


def _subbox_corners(x, L0, d):
    return [tuple(c + L0 * e for c, e in zip(x, vec)) for vec in product((0, 1), repeat=d)]


def eval_seed_E(cfg, x, spec):
    """Good connectivity seed event on the box x + [0, 2 L0)^d.

    True iff (a) each of the 2^d subboxes of side L0 contains a component
    of at least 0.75 * m * L0^d vertices, and (b) such components can be
    chosen connected to each other within the full 2 L0 box.  Increasing in
    the open-edge set.
    """
    d = cfg.window.d
    L0 = spec.L0
    tau = _threshold(spec, d, 0.75)
    big = extract_box(cfg, x, (2 * L0,) * d)
    lab_big = components(big)
    witness = None
    for corner in _subbox_corners(x, L0, d):
        sub = extract_box(cfg, corner, (L0,) * d)
        lab_sub = components(sub)
        roots = [r for r, s in lab_sub.sizes().items() if s >= tau]
        if not roots:
            return False
        big_labels = set()
        for r in roots:
            p = sub.window.point(r)
            big_labels.add(int(lab_big.labels[big.window.index(p)]))
        witness = big_labels if witness is None else (witness & big_labels)
        if not witness:
            return False
    return True


def eval_seed_F(cfg, x, spec):
    """Sparseness seed event: every subbox of x + [0, 2 L0)^d holds at most
    1.25 * m * L0^d vertices with an open edge inside the subbox.
    Decreasing in the open-edge set."""
    d = cfg.window.d
    L0 = spec.L0
    cap = _threshold(spec, d, 1.25)
    for corner in _subbox_corners(x, L0, d):
        sub = extract_box(cfg, corner, (L0,) * d)
        open_e = sub.open_edges()
        touched = np.zeros(sub.window.n_vertices, dtype=bool)
        for a in range(d):
            ii = np.flatnonzero(open_e[a])
            touched[ii] = True
            touched[ii + sub.window._strides[a]] = True
        if int(touched.sum()) > cap:
            return False
    return True


def eval_seed_D(cfg, x, L0):
    """Bad dilution seed event: True iff some window-internal edge of the
    box x + [0, 2 L0)^d is closed."""
    d = cfg.window.d
    sub = extract_box(cfg, x, (2 * L0,) * d)
    open_e = sub.open_edges()
    return bool((sub.window.edge_mask & ~open_e).any())


@dataclass
class BlockField:
    """Bad/good bits over a box of base-scale blocks.

    Blocks are indexed by their lattice corners (multiples of L0);
    ``corner_block`` and ``shape`` are in block units.
    """

    L0: int
    corner_block: tuple
    shape: tuple
    bad: np.ndarray

    def __post_init__(self):
        self.bad = np.asarray(self.bad, dtype=bool)
        if self.bad.shape != tuple(self.shape):
            raise ValueError(f"bad bits shape {self.bad.shape} != {self.shape}")

    def bad_at(self, lattice_corner):
        idx = []
        for c, cb, s in zip(lattice_corner, self.corner_block, self.shape):
            q, r = divmod(c, self.L0)
            if r != 0:
                raise ValueError(f"{lattice_corner} is not a block corner (L0={self.L0})")
            q -= cb
            if not 0 <= q < s:
                raise ValueError(f"block {lattice_corner} outside field coverage")
            idx.append(q)
        return bool(self.bad[tuple(idx)])

    def block_corners(self):
        for vec in np.ndindex(*self.shape):
            yield tuple((c + v) * self.L0 for c, v in zip(self.corner_block, vec))


def classify_blocks(inter_cfg, dilution_cfg, spec, corner_block, shape):
    """Good/bad classification of a box of blocks.

    A block with lattice corner x is bad iff the dilution configuration has
    a closed edge in x + [0, 2 L0)^d, or the interlacement-edge
    configuration fails the connectivity seed event, or it fails the
    sparseness seed event.  Both configurations must cover every block's
    2 L0 box.
    """
    L0 = spec.L0
    bad = np.zeros(tuple(shape), dtype=bool)
    for vec in np.ndindex(*tuple(shape)):
        x = tuple((c + v) * L0 for c, v in zip(corner_block, vec))
        bad[vec] = (
            eval_seed_D(dilution_cfg, x, L0)
            or not eval_seed_E(inter_cfg, x, spec)
            or not eval_seed_F(inter_cfg, x, spec)
        )
    return BlockField(L0=L0, corner_block=tuple(corner_block), shape=tuple(shape), bad=bad)


def eval_recursive(block_field, hierarchy, x, n):
    """Truth of the scale-n bad event at block corner x.

    Scale 0 is the seed bad bit; at scale n >= 1 the event holds iff two
    sub-blocks of x + [0, L_n)^d at strict l-infinity separation
    > L_n / separation are both bad at scale n-1.  Evaluated bottom-up with
    memoization and early exit; the level-0 field must cover x + [0, L_n)^d.
    """
    if n < 0:
        raise ValueError("scale index must be >= 0")
    x = tuple(x)
    Ln = hierarchy.scale_length(n)
    if any(c % Ln for c in x):
        raise ValueError(f"{x} is not a scale-{n} block corner")
    memo = {}

    def rec(corner, k):
        if k == 0:
            return block_field.bad_at(corner)
        key = (k, corner)
        hit = memo.get(key)
        if hit is not None:
            return hit
        subs = hierarchy.sub_blocks(corner, k)
        vals = {}

        def val(b):
            v = vals.get(b)
            if v is None:
                v = rec(b, k - 1)
                vals[b] = v
            return v

        out = False
        for i, b1 in enumerate(subs):
            if not val(b1):
                continue
            for b2 in subs[i + 1 :]:
                if hierarchy.separated(b1, b2, k) and val(b2):
                    out = True
                    break
            if out:
                break
        memo[key] = out
        return out

    return rec(x, n)


def hstar_event(block_field, x, M, N):
    """True iff B(x, M) is joined to the sphere at distance N by a *-path
    of bad blocks (M < N, both divisible by L0, coverage required)."""
    L0 = block_field.L0
    if not (0 <= M < N):
        raise ValueError(f"need 0 <= M < N, got {M}, {N}")
    if M % L0 or N % L0:
        raise ValueError(f"M and N must be divisible by L0={L0}")
    if any(c % L0 for c in x):
        raise ValueError(f"{x} is not a block corner")
    d = len(block_field.shape)
    bx = tuple(c // L0 for c in x)
    mb, nb = M // L0, N // L0
    lo = tuple(b - nb - cb for b, cb in zip(bx, block_field.corner_block))
    hi = tuple(b + nb - cb for b, cb in zip(bx, block_field.corner_block))
    if any(l < 0 for l in lo) or any(h >= s for h, s in zip(hi, block_field.shape)):
        raise ValueError(f"field does not cover B({x}, {N}) at block resolution")
    bad = block_field.bad

    def rel(vec):
        return tuple(v + b - cb for v, b, cb in zip(vec, bx, block_field.corner_block))

    start = deque()
    seen = set()
    for vec in product(range(-mb, mb + 1), repeat=d):
        r = rel(vec)
        if bad[r]:
            start.append(vec)
            seen.add(vec)
    while start:
        vec = start.popleft()
        if max(abs(v) for v in vec) == nb:
            return True
        for off in product((-1, 0, 1), repeat=d):
            if off == (0,) * d:
                continue
            nxt = tuple(v + o for v, o in zip(vec, off))
            if nxt in seen or max(abs(v) for v in nxt) > nb:
                continue
            if bad[rel(nxt)]:
                seen.add(nxt)
                start.append(nxt)
    return False


class PathLiftError(RuntimeError):
    """Path lifting failed; names the violated clause and block."""

    def __init__(self, clause, block, message):
        super().__init__(f"[{clause}] block {block}: {message}")
        self.clause = clause
        self.block = block


@dataclass
class PathLiftReport:
    blocks: list
    component_sizes: list
    connectors: list
    path: list


def _bfs_path(open_edges, window, region, sources, targets):
    """Shortest open path from sources to targets inside a vertex mask."""
    strides = window._strides
    d = window.d
    target_set = set(int(t) for t in targets)
    parent = {int(s): None for s in sources}
    queue = deque(parent)
    while queue:
        i = queue.popleft()
        if i in target_set:
            path = []
            while i is not None:
                path.append(i)
                i = parent[i]
            return path[::-1]
        for a in range(d):
            j = i + strides[a]
            if open_edges[a][i] and region[j] and j not in parent:
                parent[j] = i
                queue.append(j)
            j = i - strides[a]
            if j >= 0 and open_edges[a][j] and region[j] and j not in parent:
                parent[j] = i
                queue.append(j)
    return None


def path_lift(blocks, inter_cfg, dilution_cfg, spec):
    """Lift a nearest-neighbor path of good blocks to an explicit open path.

    For each block: verifies the combined (interlacement and dilution) open
    graph restricted to the block's L0 box has a unique component of at
    least 0.75 * m * L0^d vertices.  For each consecutive pair: connects the
    two components inside the union of their 2 L0 boxes and extracts an
    explicit open vertex path through the union of those boxes.

    Raises PathLiftError naming the violated clause and block; on good
    blocks a failure indicates an implementation bug, not randomness.
    """
    L0 = spec.L0
    w = inter_cfg.window
    d = w.d
    if w != dilution_cfg.window:
        raise ValueError("configurations live on different windows")
    blocks = [tuple(b) for b in blocks]
    for b1, b2 in zip(blocks, blocks[1:]):
        if sum(abs(a - c) for a, c in zip(b1, b2)) != L0:
            raise ValueError(f"blocks {b1}, {b2} are not block nearest neighbors")
    for b in blocks:
        bad = (
            eval_seed_D(dilution_cfg, b, L0)
            or not eval_seed_E(inter_cfg, b, spec)
            or not eval_seed_F(inter_cfg, b, spec)
        )
        if bad:
            raise PathLiftError("precondition-good", b, "block classifies bad")

    combined = Configuration(
        w,
        bonds=inter_cfg.open_edges() & dilution_cfg.open_edges(),
        rule="bond",
    )
    open_e = combined.open_edges()
    tau = _threshold(spec, d, 0.75)

    comps = []
    sizes = []
    for b in blocks:
        sub = extract_box(combined, b, (L0,) * d)
        lab = components(sub)
        roots = [r for r, s in lab.sizes().items() if s >= tau]
        if not roots:
            raise PathLiftError("component-existence", b, f"no component of size >= {tau:.2f}")
        if len(roots) > 1:
            raise PathLiftError(
                "component-uniqueness", b, f"{len(roots)} components of size >= {tau:.2f}"
            )
        members = np.flatnonzero(lab.labels == roots[0])
        verts = [w.index(sub.window.point(int(i))) for i in members]
        comps.append(set(verts))
        sizes.append(len(verts))

    def box_mask(corner):
        m = np.ones(w.n_vertices, dtype=bool)
        for a in range(d):
            col = w.coords[:, a]
            m &= (col >= corner[a]) & (col < corner[a] + 2 * L0)
        return m

    connectors = []
    for i, (b1, b2) in enumerate(zip(blocks, blocks[1:])):
        region = box_mask(b1) | box_mask(b2)
        p = _bfs_path(open_e, w, region, comps[i], comps[i + 1])
        if p is None:
            raise PathLiftError("pair-connection", b1, f"components of {b1} and {b2} not joined")
        connectors.append(p)

    # stitch connectors with intra-component detours
    if not connectors:
        path = [min(comps[0])]
    else:
        path = list(connectors[0])
        for i in range(1, len(connectors)):
            arrive = path[-1]
            depart = connectors[i][0]
            if arrive != depart:
                comp_mask = np.zeros(w.n_vertices, dtype=bool)
                comp_mask[list(comps[i])] = True
                q = _bfs_path(open_e, w, comp_mask, [arrive], [depart])
                if q is None:
                    raise PathLiftError(
                        "component-uniqueness", blocks[i], "component not internally connected"
                    )
                path.extend(q[1:])
            path.extend(connectors[i][1:])

    # final validation: consecutive adjacency along open edges
    for a_idx, b_idx in zip(path, path[1:]):
        lo, hi = min(a_idx, b_idx), max(a_idx, b_idx)
        diff = hi - lo
        ok = False
        for a in range(d):
            if diff == w._strides[a] and open_e[a][lo]:
                ok = True
                break
        if not ok:
            raise PathLiftError("path-validation", blocks[0], "extracted path has a closed step")

    return PathLiftReport(
        blocks=blocks,
        component_sizes=sizes,
        connectors=connectors,
        path=[w.point(i) for i in path],
    )


def decoupling_bound(l0, d, n, p_seed):
    """(l0^{2d} * p_seed + 1/4)^(2^n), evaluated in log space."""
    if not 0.0 <= p_seed <= 1.0:
        raise ValueError(f"seed probability must lie in [0, 1], got {p_seed}")
    if l0 < 1 or d < 1 or n < 0:
        raise ValueError("need l0 >= 1, d >= 1, n >= 0")
    if p_seed == 0.0:
        base_log = math.log(0.25)
    else:
        base_log = np.logaddexp(2 * d * math.log(l0) + math.log(p_seed), math.log(0.25))
    exponent = 2.0**n * base_log
    if exponent > 700.0:
        return math.inf
    if exponent < -745.0:
        return 0.0
    return float(math.exp(exponent))
