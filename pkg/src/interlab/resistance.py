"""Electric networks on edge sets with i.i.d. positive resistances, and
effective-resistance profiles probing transience.

The Dirichlet problem (unit potential at the source, zero on the sink
shell) is solved by diagonally preconditioned conjugate gradients on the
graph Laplacian restricted to interior nodes; a disconnected source/sink
pair yields an explicit infinite resistance rather than a solver failure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as sla

from .lattice import LatticeWindow, window_ball
from .percolation import Configuration, components
from .potential import SolveError
from .sampler import sample_interlacement

__all__ = [
    "ResistanceLaw",
    "ResistorNetwork",
    "assign_resistances",
    "effective_resistance",
    "lattice_network",
    "transience_profile",
]


@dataclass(frozen=True)
class ResistanceLaw:
    """I.i.d. edge-resistance law: constant(c), uniform(a, b), or
    exponential(scale, floor) (the floor keeps values strictly positive)."""

    kind: str
    params: tuple

    @staticmethod
    def constant(c):
        if c <= 0:
            raise ValueError("constant resistance must be positive")
        return ResistanceLaw("constant", (float(c),))

    @staticmethod
    def uniform(a, b):
        if not 0 < a <= b:
            raise ValueError("uniform law needs 0 < a <= b")
        return ResistanceLaw("uniform", (float(a), float(b)))

    @staticmethod
    def exponential(scale, floor):
        if scale <= 0 or floor <= 0:
            raise ValueError("exponential law needs positive scale and floor")
        return ResistanceLaw("exponential", (float(scale), float(floor)))

    def draw(self, n, rng):
        if self.kind == "constant":
            return np.full(n, self.params[0])
        if self.kind == "uniform":
            a, b = self.params
            return a + (b - a) * rng.random(n)
        scale, floor = self.params
        return floor + rng.exponential(scale, n)

    @staticmethod
    def parse(text):
        """Parse 'constant:1', 'uniform:1,2', or 'exponential:0.5,0.1'."""
        kind, _, rest = text.partition(":")
        vals = [float(v) for v in rest.split(",")] if rest else []
        if kind == "constant" and len(vals) == 1:
            return ResistanceLaw.constant(vals[0])
        if kind == "uniform" and len(vals) == 2:
            return ResistanceLaw.uniform(*vals)
        if kind == "exponential" and len(vals) == 2:
            return ResistanceLaw.exponential(*vals)
        raise ValueError(f"cannot parse resistance law {text!r}")


@dataclass
class ResistorNetwork:
    """Weighted graph with a source node and a sink node set."""

    n_nodes: int
    edges: np.ndarray
    resistances: np.ndarray
    source: int
    sinks: np.ndarray

    def __post_init__(self):
        self.edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        self.resistances = np.asarray(self.resistances, dtype=float)
        self.sinks = np.unique(np.asarray(self.sinks, dtype=np.int64))
        if len(self.resistances) != len(self.edges):
            raise ValueError("one resistance per edge required")
        if len(self.resistances) and self.resistances.min() <= 0:
            raise ValueError("resistances must be strictly positive")
        if self.source in set(self.sinks.tolist()):
            raise ValueError("source coincides with a sink")


def assign_resistances(n_nodes, edges, law, rng, source=0, sinks=()):
    """Network with i.i.d. resistances drawn from ``law`` on the given edges."""
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    return ResistorNetwork(
        n_nodes=n_nodes,
        edges=edges,
        resistances=law.draw(len(edges), rng),
        source=source,
        sinks=np.asarray(sinks, dtype=np.int64),
    )


def _connected_to_sink(net):
    parent = list(range(net.n_nodes))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for a, b in net.edges:
        ra, rb = find(int(a)), find(int(b))
        if ra != rb:
            parent[rb] = ra
    src = find(net.source)
    return any(find(int(s)) == src for s in net.sinks)


def effective_resistance(net, tol=1e-8, maxiter=20000):
    """Effective resistance between the source and the sink set.

    Returns math.inf when the source and sinks are disconnected.  Raises
    SolveError if conjugate gradients fail to reach the residual tolerance
    (a distinct outcome from infinite resistance).
    """
    if len(net.sinks) == 0:
        raise ValueError("network has no sinks")
    if not _connected_to_sink(net):
        return math.inf
    n = net.n_nodes
    cond = 1.0 / net.resistances
    a, b = net.edges[:, 0], net.edges[:, 1]
    rows = np.concatenate([a, b, a, b])
    cols = np.concatenate([b, a, a, b])
    vals = np.concatenate([-cond, -cond, cond, cond])
    L = sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))

    fixed = np.zeros(n, dtype=bool)
    fixed[net.sinks] = True
    fixed[net.source] = True
    phi = np.zeros(n)
    phi[net.source] = 1.0
    free = np.flatnonzero(~fixed)
    if len(free):
        A = L[free][:, free]
        rhs = -L[free][:, [net.source]].toarray().ravel()
        diag = A.diagonal()
        diag[diag <= 0] = 1.0
        M = sparse.diags(1.0 / diag)
        x, info = sla.cg(A, rhs, rtol=tol, atol=0.0, maxiter=maxiter, M=M)
        if info != 0:
            raise SolveError(f"effective-resistance CG failed to converge (info={info})")
        resid = np.linalg.norm(A @ x - rhs)
        if resid > tol * max(1.0, np.linalg.norm(rhs)):
            raise SolveError(f"effective-resistance residual {resid:.3e} above tolerance")
        phi[free] = x
    # total current out of the source
    at_src = (a == net.source) | (b == net.source)
    other = np.where(a[at_src] == net.source, b[at_src], a[at_src])
    current = float(np.sum(cond[at_src] * (1.0 - phi[other])))
    if current <= 0:
        raise SolveError("nonpositive source current")
    return 1.0 / current


def lattice_network(d, radius, law, rng, open_bonds=None, window=None):
    """Network on the l-infinity ball B(0, radius) in Z^d.

    Edges are the window-internal lattice edges (optionally masked by
    ``open_bonds``); the source is the origin and the sinks the sphere at
    distance exactly ``radius``.  Any d >= 1 is accepted here: recurrent
    dimensions are useful as contrast cases.
    """
    if window is None:
        window = window_ball((0,) * d, radius)
    nv = window.n_vertices
    mask = window.edge_mask if open_bonds is None else (window.edge_mask & open_bonds)
    edges = []
    for axis in range(d):
        ii = np.flatnonzero(mask[axis])
        edges.append(np.stack([ii, ii + window._strides[axis]], axis=1))
    edges = np.concatenate(edges, axis=0)
    dist = np.abs(window.coords).max(axis=1)
    sinks = np.flatnonzero(dist == radius)
    return assign_resistances(
        nv, edges, law, rng, source=window.index((0,) * d), sinks=sinks
    )


def transience_profile(n_grid, law, rng, u=None, replicas=1, d=3, tables=None):
    """Effective-resistance profile R(N) for N in ``n_grid``.

    With u=None the substrate is the full lattice ball; with u > 0 each
    replica samples the traversed-edge set of an exact interlacement sample
    on B(0, max N) and measures from the largest cluster's vertex nearest
    the origin.  Resistances are drawn once per replica on the largest ball
    and reused across N, so each replica's profile is nondecreasing in N
    (Rayleigh monotonicity).

    Returns a list of rows ``(N, replica, value)``; values may be inf when
    the source cluster does not reach the sphere.
    """
    n_grid = sorted(int(n) for n in n_grid)
    if not n_grid or n_grid[0] < 1:
        raise ValueError("need a nonempty grid of radii >= 1")
    n_max = n_grid[-1]
    window = window_ball((0,) * d, n_max)
    rows = []
    for rep in range(replicas):
        if u is None:
            bonds = None
        else:
            sample = sample_interlacement(u, window, rng, tables=tables)
            bonds = sample.traversed.bits
        res_full = law.draw(int(window.edge_mask.sum()), rng)
        # locate the source once per replica
        if bonds is None:
            source = window.index((0,) * d)
        else:
            cfg = Configuration(window, bonds=bonds, rule="bond")
            lab = components(cfg)
            top = lab.largest()
            if top is None or top[1] < 2:
                continue
            members = np.flatnonzero(lab.labels == top[0])
            dist = np.abs(window.coords[members]).max(axis=1)
            source = int(members[np.argmin(dist)])
        dist_all = np.abs(window.coords).max(axis=1)
        full_idx = np.flatnonzero(window.edge_mask.reshape(-1))
        for N in n_grid:
            inside = dist_all <= N
            keep_edge = np.zeros((d, window.n_vertices), dtype=bool)
            for axis in range(d):
                ii = np.flatnonzero(window.edge_mask[axis])
                ok = inside[ii] & inside[ii + window._strides[axis]]
                if bonds is not None:
                    ok &= bonds[axis][ii]
                keep_edge[axis][ii[ok]] = True
            edges = []
            for axis in range(d):
                ii = np.flatnonzero(keep_edge[axis])
                edges.append(np.stack([ii, ii + window._strides[axis]], axis=1))
            edges = np.concatenate(edges, axis=0)
            flat_keep = np.flatnonzero(keep_edge.reshape(-1))
            res = res_full[np.searchsorted(full_idx, flat_keep)]
            sinks = np.flatnonzero(dist_all == N)
            if dist_all[source] >= N:
                rows.append((N, rep, math.inf))
                continue
            net = ResistorNetwork(
                n_nodes=window.n_vertices,
                edges=edges,
                resistances=res,
                source=source,
                sinks=sinks,
            )
            rows.append((N, rep, effective_resistance(net)))
    return rows
