"""Monte Carlo estimators for the critical levels of vacant-set behavior:
annulus-crossing curves and their bisection thresholds (with and without
flip noise), local-uniqueness tables, and the occupied-density formula.

All u-sweeps ride one mark-coupled replica set per window: every replica is
sampled once at the top level and thinned to lower levels, and its noise
variables are replayed from a per-replica stream, so empirical curves are
monotone in u replica by replica and bisection never chases sampling noise.
The finite-size proxy for percolation to infinity is the annulus crossing
B(0, L) to the sphere at 2L, bisected at probability 1/2; the protocol
string is recorded on every estimate so alternative conventions can be
compared.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .lattice import window_ball
from .noise import coupling_eta
from .percolation import Configuration, crossing, local_uniqueness_event
from .sampler import default_green, prepare_window, sample_interlacement

__all__ = [
    "density",
    "CoupledReplicas",
    "CrossingCurve",
    "ThresholdEstimate",
    "LocalUniquenessTable",
    "estimate_crossing_curve",
    "estimate_u_star_eps",
    "estimate_u_star_star",
    "estimate_u_bar",
    "estimate_eta",
    "PROTOCOL",
]

PROTOCOL = "annulus-crossing B(0,L)->dB(0,2L), bisection at level 1/2, mark-coupled sweeps"


def density(u, d=3, green=None):
    """Occupied density 1 - exp(-u / g(0)) at level u."""
    if u < 0:
        raise ValueError(f"level must be nonnegative, got {u}")
    g = green or default_green(d)
    return 1.0 - math.exp(-u / g((0,) * d))


def _spawn_seedseqs(rng, n):
    ss = getattr(rng.bit_generator, "seed_seq", None)
    if ss is None:
        ss = np.random.SeedSequence(int(rng.integers(2**63)))
    return ss.spawn(n)


class CoupledReplicas:
    """A window-full of exact samples at a top level, thinnable to any
    lower level, with per-replica replayable noise streams.

    Shared read-only across estimator evaluations; the per-replica noise
    uniforms are identical on every call, which couples evaluations across
    both u and eps.
    """

    def __init__(self, window, u_max, replicas, rng, tables=None):
        if replicas < 1:
            raise ValueError("need at least one replica")
        self.window = window
        self.u_max = float(u_max)
        self.tables = tables if tables is not None else prepare_window(window)
        seeds = _spawn_seedseqs(rng, 2 * replicas)
        self.samples = []
        self._noise_seeds = seeds[replicas:]
        for r in range(replicas):
            srng = np.random.default_rng(seeds[r])
            self.samples.append(
                sample_interlacement(
                    u_max, window, srng, tables=self.tables, collect_edges=False
                )
            )
        self.replicas = replicas

    def occupied_at(self, r, u):
        if not 0 < u <= self.u_max:
            raise ValueError(f"level {u} outside (0, {self.u_max}]")
        s = self.samples[r]
        occ = np.zeros(self.window.n_vertices, dtype=bool)
        for m, v in zip(s.marks, s._traj_visits):
            if m <= u:
                occ[v] = True
        return occ

    def noisy_vacant(self, r, u, eps):
        """V^{u, eps} site bits for replica r (replayed noise stream)."""
        occ = self.occupied_at(r, u)
        if eps == 0.0:
            return ~occ
        if not 0.0 < eps <= 0.5:
            raise ValueError(f"eps must lie in [0, 1/2], got {eps}")
        nrng = np.random.default_rng(self._noise_seeds[r])
        u1 = nrng.random(len(occ))
        if eps == 0.5:
            return ~(occ ^ (u1 < 0.5))
        u2 = nrng.random(len(occ))
        noisy_occ = (u1 < eps) | ((u2 < coupling_eta(eps)) & occ)
        return ~noisy_occ


def _ci3(successes, n):
    p = successes / n
    half = 3.0 * math.sqrt(max(p * (1.0 - p), 1.0 / (4 * n)) / n)
    return max(0.0, p - half), min(1.0, p + half)


@dataclass
class CrossingCurve:
    eps: float
    rows: list
    protocol: str = PROTOCOL


@dataclass
class LocalUniquenessTable:
    u: float
    rows: list
    protocol: str = PROTOCOL


@dataclass
class ThresholdEstimate:
    """Estimated critical level with its raw curve evidence.

    parameter is one of u_star_eps, u_star_star, u_bar, eta; status 'ok'
    carries the bisection value and bracket, 'diverged' means the event
    probability never fell below the level on the sweep range (no finite
    threshold in range), 'below-range' that it starts below the level.
    """

    parameter: str
    eps: float | None
    size: int
    replicas: int
    value: float | None
    bracket: tuple | None
    status: str
    evaluations: list = field(default_factory=list)
    protocol: str = PROTOCOL


def estimate_crossing_curve(us, eps, Ls, replicas, rng, d=3):
    """Empirical crossing probabilities of V^{u, eps} for each (u, L).

    For every L a fresh coupled replica set on B(0, 2L) is sampled at
    max(us) and thinned down the grid, so each curve is monotone in u
    replica by replica.  Rows carry successes and 3-sigma binomial bands.
    """
    us = sorted(float(u) for u in us)
    if not us or us[0] <= 0:
        raise ValueError("u grid must be nonempty and positive")
    curves = []
    for L in Ls:
        window = window_ball((0,) * d, 2 * L)
        reps = CoupledReplicas(window, us[-1], replicas, rng)
        rows = []
        for u in us:
            succ = 0
            for r in range(replicas):
                cfg = Configuration(window, sites=reps.noisy_vacant(r, u, eps))
                succ += crossing(cfg, L)
            lo, hi = _ci3(succ, replicas)
            rows.append(
                dict(L=L, u=u, eps=eps, successes=succ, replicas=replicas,
                     p=succ / replicas, ci_lo=lo, ci_hi=hi)
            )
        curves.append(CrossingCurve(eps=eps, rows=rows))
    return curves


def _bisect_level(prob_fn, u_lo, u_hi, tol, level=0.5):
    """Bisect a nonincreasing empirical probability curve at ``level``."""
    evals = []

    def p(u):
        successes, n = prob_fn(u)
        evals.append(dict(u=u, successes=successes, replicas=n, p=successes / n))
        return successes / n

    if p(u_hi) > level:
        return None, None, "diverged", evals
    if p(u_lo) < level:
        return None, None, "below-range", evals
    lo, hi = u_lo, u_hi
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if p(mid) >= level:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi), (lo, hi), "ok", evals


def estimate_u_star_eps(
    eps, L, replicas, rng, u_lo=0.02, u_hi=2.0, tol=0.02, d=3, level=0.5
):
    """Bisection estimate of the noisy vacant-set percolation threshold.

    Uses the annulus-crossing proxy at size L on one coupled replica set;
    eps = 1/2 legitimately reports 'diverged' (the noisy vacant set is
    Bernoulli(1/2), supercritical at every level for d >= 3).
    """
    if not 0.0 <= eps <= 0.5:
        raise ValueError(f"eps must lie in [0, 1/2], got {eps}")
    window = window_ball((0,) * d, 2 * L)
    reps = CoupledReplicas(window, u_hi, replicas, rng)

    def prob(u):
        succ = 0
        for r in range(replicas):
            cfg = Configuration(window, sites=reps.noisy_vacant(r, u, eps))
            succ += crossing(cfg, L)
        return succ, replicas

    value, bracket, status, evals = _bisect_level(prob, u_lo, u_hi, tol, level)
    return ThresholdEstimate(
        parameter="u_star_eps",
        eps=eps,
        size=L,
        replicas=replicas,
        value=value,
        bracket=bracket,
        status=status,
        evaluations=evals,
    )


def estimate_u_star_star(L, replicas, rng, **kw):
    """Noise-free annulus-crossing threshold (offset-side proxy)."""
    est = estimate_u_star_eps(0.0, L, replicas, rng, **kw)
    est.parameter = "u_star_star"
    return est


def estimate_u_bar(n, replicas, rng, u_lo=0.02, u_hi=2.0, tol=0.02, d=3, level=0.5):
    """Onset-side proxy threshold from local-uniqueness behavior.

    The per-replica event at level u is the conjunction of (i) B(0, n)
    connected to the sphere at 4n in the vacant set and (ii) the
    local-uniqueness event at scale n; the curve is bisected at ``level``
    on a coupled replica set over B(0, 4n).
    """
    window = window_ball((0,) * d, 4 * n)
    reps = CoupledReplicas(window, u_hi, replicas, rng)

    def prob(u):
        succ = 0
        for r in range(replicas):
            cfg = Configuration(window, sites=~reps.occupied_at(r, u))
            if crossing(cfg, inner=n, outer=4 * n) and local_uniqueness_event(cfg, n):
                succ += 1
        return succ, replicas

    value, bracket, status, evals = _bisect_level(prob, u_lo, u_hi, tol, level)
    return ThresholdEstimate(
        parameter="u_bar",
        eps=None,
        size=n,
        replicas=replicas,
        value=value,
        bracket=bracket,
        status=status,
        evaluations=evals,
    )


def estimate_local_uniqueness(u, ns, replicas, rng, d=3):
    """Empirical probabilities of the two local-uniqueness events per scale.

    For each n: (i) connection of B(0, n) to the sphere at 4n in the vacant
    set, and (ii) any two connected vacant subsets of B(0, n) with diameter
    >= n/10 joined inside B(0, 2n).  Probabilities come with 3-sigma bands;
    no decay-rate fit is asserted.
    """
    if u <= 0:
        raise ValueError(f"level must be positive, got {u}")
    rows = []
    for n in ns:
        window = window_ball((0,) * d, 4 * n)
        reps = CoupledReplicas(window, u, replicas, rng)
        conn = uniq = 0
        for r in range(replicas):
            cfg = Configuration(window, sites=~reps.occupied_at(r, u))
            conn += crossing(cfg, inner=n, outer=4 * n)
            uniq += local_uniqueness_event(cfg, n)
        clo, chi = _ci3(conn, replicas)
        ulo, uhi = _ci3(uniq, replicas)
        rows.append(
            dict(n=n, replicas=replicas,
                 p_conn=conn / replicas, conn_lo=clo, conn_hi=chi,
                 p_uniq=uniq / replicas, uniq_lo=ulo, uniq_hi=uhi)
        )
    return LocalUniquenessTable(u=u, rows=rows)


def estimate_eta(u, n, replicas, rng, d=3):
    """Point estimate of the finite-size percolation function: the
    probability that the origin reaches the sphere at n in the vacant set."""
    window = window_ball((0,) * d, n)
    reps = CoupledReplicas(window, u, replicas, rng)
    succ = 0
    for r in range(replicas):
        cfg = Configuration(window, sites=~reps.occupied_at(r, u))
        succ += crossing(cfg, inner=0, outer=n)
    lo, hi = _ci3(succ, replicas)
    return ThresholdEstimate(
        parameter="eta",
        eps=None,
        size=n,
        replicas=replicas,
        value=succ / replicas,
        bracket=(lo, hi),
        status="ok",
        evaluations=[dict(u=u, successes=succ, replicas=replicas, p=succ / replicas)],
    )
