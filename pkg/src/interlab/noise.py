"""Quenched Bernoulli fields: site/bond dilution, epsilon-flip noise, and the
monotone coupling of the flip noise.

All generators draw lazily per window and are deterministic given the
generator state; fields are immutable numpy bit arrays wrapped with their
window.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lattice import LatticeWindow

__all__ = [
    "SiteField",
    "BondField",
    "bernoulli_site",
    "bernoulli_bond",
    "flip_noise",
    "coupled_noise",
    "coupling_eta",
]


@dataclass
class SiteField:
    """One boolean per window vertex, in flat index order."""

    window: LatticeWindow
    bits: np.ndarray

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=bool)
        if self.bits.shape != (self.window.n_vertices,):
            raise ValueError(
                f"bit count {self.bits.shape} != vertex count {self.window.n_vertices}"
            )

    def complement(self):
        return SiteField(self.window, ~self.bits)

    def density(self):
        return float(self.bits.mean())


@dataclass
class BondField:
    """One boolean per window-internal edge, stored as a (d, n_vertices)
    array masked by the window's edge mask (entry (axis, i) is the edge from
    vertex i to its +axis neighbor)."""

    window: LatticeWindow
    bits: np.ndarray

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=bool)
        d, nv = self.window.d, self.window.n_vertices
        if self.bits.shape != (d, nv):
            raise ValueError(f"bond bits must have shape {(d, nv)}, got {self.bits.shape}")
        self.bits = self.bits & self.window.edge_mask

    def edge_count(self):
        return int(self.bits.sum())

    def density(self):
        return self.edge_count() / self.window.n_edges


def _check_prob(q, name="probability"):
    q = float(q)
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {q}")
    return q


def bernoulli_site(window, q, rng):
    """I.i.d. Bernoulli(q) site field over the window."""
    q = _check_prob(q)
    return SiteField(window, rng.random(window.n_vertices) < q)


def bernoulli_bond(window, p, rng):
    """I.i.d. Bernoulli(p) bond field over the window-internal edges."""
    p = _check_prob(p)
    bits = rng.random((window.d, window.n_vertices)) < p
    return BondField(window, bits & window.edge_mask)


def flip_noise(occupied, eps, rng):
    """Flip every bit independently with probability eps.

    Works on SiteField or BondField; the output bit is the input bit XOR an
    independent Bernoulli(eps).  eps=0 is the identity, eps=1 the
    complement, and eps=1/2 erases the input entirely.
    """
    eps = _check_prob(eps, "eps")
    flips = rng.random(occupied.bits.shape) < eps
    if isinstance(occupied, BondField):
        return BondField(occupied.window, (occupied.bits ^ flips) & occupied.window.edge_mask)
    return SiteField(occupied.window, occupied.bits ^ flips)


def coupling_eta(eps):
    """Parameter of the secondary Bernoulli field in the monotone coupling."""
    eps = float(eps)
    if not 0.0 < eps < 0.5:
        raise ValueError(f"coupled noise requires eps in (0, 1/2), got {eps}")
    return (1.0 - 2.0 * eps) / (1.0 - eps)


def coupled_noise(occupied, eps, rng=None, *, xi=None, eta=None):
    """Noisy occupied field with the same law as flip_noise but monotone in
    the input under shared randomness.

    Uses phi = max(xi, eta * occupied) with xi ~ Bernoulli(eps) and
    eta ~ Bernoulli((1-2 eps)/(1 - eps)): P[phi=1] is 1-eps on occupied
    sites and eps on vacant ones, and raising input bits never lowers
    output bits.  Pass the same (xi, eta) bit arrays to couple several
    inputs; otherwise they are drawn from rng.
    """
    p_eta = coupling_eta(eps)
    n = occupied.bits.shape
    if xi is None or eta is None:
        if rng is None:
            raise ValueError("need rng when xi/eta are not supplied")
        xi = rng.random(n) < eps
        eta = rng.random(n) < p_eta
    bits = xi | (eta & occupied.bits)
    if isinstance(occupied, BondField):
        return BondField(occupied.window, bits & occupied.window.edge_mask)
    return SiteField(occupied.window, bits)
