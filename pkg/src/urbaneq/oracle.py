"""Brute-force equilibrium enumeration for small cities.

Ground truth for cross-validation: Newton solves seeded from a dense simplex
grid (plus near-vertex offsets), using scipy's hybrid solver on the log-field
fixed point. Deliberately independent of the continuation machinery - the one
shared piece is the market fixed-point map, reused read-only for finite
elasticity so both routes price the same system.
"""
from __future__ import annotations

from dataclasses import dataclass
from itertools import product
import math

import numpy as np
from scipy.optimize import root

from .errors import DomainError
from .model import City, Equilibrium, classify, weights
from .elasticity import ElasticityH
from .tracker import dedup

_VERTEX_OFFSET = 1e-3


@dataclass(frozen=True)
class GridSpec:
    resolution: int = 64
    domain: tuple = (0.0, 1.0)
    polish_tol: float = 1e-12

    def __post_init__(self):
        if self.resolution < 16:
            raise DomainError("grid resolution below 16 is too coarse to trust")


def _simplex_nodes(J: int, R: int):
    """All barycentric grid nodes k/R on the closed unit simplex."""
    out = []
    if J == 1:
        return [np.array([1.0])]
    for combo in product(range(R + 1), repeat=J - 1):
        s = sum(combo)
        if s <= R:
            out.append(np.array(list(combo) + [R - s], dtype=float) / R)
    return out


def _seed_fields(city: City, gs: GridSpec):
    lo, hi = gs.domain
    span = hi - lo
    nodes = [lo + span * x for x in _simplex_nodes(city.J, gs.resolution)]
    for j in range(city.J):
        v = np.full(city.J, _VERTEX_OFFSET)
        v[j] = 1.0 - _VERTEX_OFFSET * (city.J - 1)
        nodes.append(lo + span * v)
    W = weights(city)
    seeds = []
    for x in nodes:
        psi = W @ x
        if np.all(psi > 0):
            seeds.append(np.log(psi))
    return seeds


def brute_force_equilibria(city: City, gs: GridSpec) -> list[Equilibrium]:
    """Every distinct proper equilibrium found from dense grid seeding.

    Solves the log-field fixed point u = log(W w / sum w) from each seed; with
    finite supply elasticity the log price joins the unknowns and each field
    seed fans out over price seeds {mc/2, mc, 2mc}.
    """
    if city.J > 3:
        raise DomainError("full-grid oracle is limited to J <= 3")
    J = city.J
    W = weights(city)
    A, alpha = city.A, city.alpha
    g1 = city.gamma1
    finite_eta = math.isfinite(city.eta)
    h_eta = ElasticityH(city, zeta_to=1.0 / city.eta) if finite_eta else None
    logmc = np.log(city.mc)

    def social_gap(u, v):
        w = A * np.exp(g1 * u - alpha * v)
        return u - np.log(W @ w) + np.log(w.sum())

    if finite_eta:
        zeta = 1.0 / city.eta

        def fun(y):
            u, v = y[:J], y[J:]
            return np.concatenate([social_gap(u, v),
                                   v - h_eta.q_market(u, v, zeta)])
        price_seeds = [logmc + math.log(0.5), logmc, logmc + math.log(2.0)]
    else:
        def fun(u):
            return social_gap(u, logmc)
        price_seeds = [None]

    roots = []
    for u0 in _seed_fields(city, gs):
        for v0 in price_seeds:
            y0 = u0 if v0 is None else np.concatenate([u0, v0])
            sol = root(fun, y0, method="hybr", tol=gs.polish_tol)
            if not sol.success:
                continue
            y = sol.x
            if np.max(np.abs(fun(y))) > 1e-9:
                continue
            roots.append(y)
    if not roots:
        return []
    cand = []
    for y in dedup(roots, tol=1e-8):
        psi = np.exp(y[:J])
        qp = np.exp(y[J:]) if finite_eta else city.mc.copy()
        eq = classify(city, psi, qp)
        if eq.status == "proper":
            cand.append(eq)
    if not cand:
        return []
    if finite_eta:
        # dedup in (psi, q) jointly so price multiplicity is not collapsed
        keys = dedup([np.concatenate([e.psi, e.qprice]) for e in cand], tol=1e-6)
        final = [classify(city, k[:J], k[J:]) for k in keys]
    else:
        reps = dedup([e.psi for e in cand], tol=1e-6)
        final = [classify(city, p, city.mc.copy()) for p in reps]
    return [e for e in final if e.status == "proper"]
