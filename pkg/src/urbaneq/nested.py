"""Hierarchical city: neighborhoods inside communities inside regions.

Two population groups choose a community and then a neighborhood within it.
Social composition enters twice: a near field over neighborhoods of the same
community and a far field over communities of the same region, each group
reading its own group's shares. With perfectly elastic floor supply the two
stages decouple: per-community equilibrium menus, then a community-level
fixed point per region with the menu welfare entering as a coefficient. A
finite supply elasticity is reached by integrating the citywide price ODE,
whose tangent factors through the community and neighborhood Schur blocks.

Cross-region interactions are zero and region group populations are fixed
(apportioned by neighborhood count), so regions decouple along the whole
pipeline. All fields are strictly positive on valid paths; the log of every
field is the working coordinate.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import (BadStart, DomainError, HierarchyError, SchemaError,
                     StepFailure)
from .homotopies import solve_amenity_homotopy
from .model import City, social_residual, weights
from .polysys import rational_approx
from .tracker import TrackerConfig

_EIG_FLOOR = 1e-10


@dataclass(frozen=True)
class NestedCity:
    """Neighborhood-level data plus the hierarchy and preference parameters.

    community and region are integer labels per neighborhood, contiguous from
    zero; every community must sit inside exactly one region. Distances are
    Euclidean between centroids: neighborhood-to-neighborhood within a
    community, centroid-of-community to centroid-of-community within a region.
    L_w and L_b are citywide group totals, split across regions in proportion
    to neighborhood counts (regions do not trade population).
    """

    community: np.ndarray
    region: np.ndarray
    A: np.ndarray
    mc: np.ndarray
    c: np.ndarray
    coords: np.ndarray
    theta: float
    gamma_w: float
    gamma_b: float
    xi: float
    alpha: float
    L_w: float
    L_b: float
    names: tuple = ()

    def __post_init__(self):
        com = np.asarray(self.community, dtype=int)
        reg = np.asarray(self.region, dtype=int)
        J_n = com.size
        if J_n < 1:
            raise DomainError("need at least one neighborhood")
        if reg.shape != (J_n,):
            raise HierarchyError("community and region labels must align")
        if self.theta <= 0:
            raise DomainError("theta must be positive")
        if self.xi < 0 or self.alpha <= 0:
            raise DomainError("xi must be nonnegative and alpha positive")
        if self.L_w <= 0 or self.L_b < 0:
            raise DomainError("L_w must be positive and L_b nonnegative")
        for name in ("A", "mc", "c"):
            v = np.asarray(getattr(self, name), dtype=float).reshape(-1)
            if v.size == 1:
                v = np.full(J_n, v[0])
            if v.size != J_n or not np.all(v > 0):
                raise DomainError(f"{name} must be {J_n} positive values")
            v.setflags(write=False)
            object.__setattr__(self, name, v)
        xy = np.asarray(self.coords, dtype=float)
        if xy.shape != (J_n, 2):
            raise DomainError("coords must be J_n x 2 planar centroids")
        if com.min(initial=0) < 0:
            raise HierarchyError("community labels must be nonnegative")
        J_c = int(com.max()) + 1
        members = []
        for i in range(J_c):
            m = np.flatnonzero(com == i)
            if m.size == 0:
                raise HierarchyError(f"community {i} has no neighborhoods")
            members.append(m)
        reg_of_com = np.empty(J_c, dtype=int)
        for i, m in enumerate(members):
            rr = np.unique(reg[m])
            if rr.size != 1:
                raise HierarchyError(f"community {i} spans regions {rr.tolist()}")
            reg_of_com[i] = rr[0]
        if reg_of_com.min() < 0:
            raise HierarchyError("region labels must be nonnegative")
        n_reg = int(reg_of_com.max()) + 1
        region_coms = []
        for r in range(n_reg):
            k = np.flatnonzero(reg_of_com == r)
            if k.size == 0:
                raise HierarchyError(f"region {r} has no communities")
            region_coms.append(k)
        D = np.zeros((J_n, J_c))
        D[np.arange(J_n), com] = 1.0
        diff = xy[:, None, :] - xy[None, :, :]
        dist_n = np.sqrt((diff ** 2).sum(axis=2))
        cent = np.stack([xy[m].mean(axis=0) for m in members])
        cdiff = cent[:, None, :] - cent[None, :, :]
        dist_c = np.sqrt((cdiff ** 2).sum(axis=2))
        for arr in (com, reg, xy, reg_of_com, D, dist_n, dist_c, cent):
            arr.setflags(write=False)
        object.__setattr__(self, "community", com)
        object.__setattr__(self, "region", reg)
        object.__setattr__(self, "coords", xy)
        object.__setattr__(self, "J_n", J_n)
        object.__setattr__(self, "J_c", J_c)
        object.__setattr__(self, "n_regions", n_reg)
        object.__setattr__(self, "members", tuple(members))
        object.__setattr__(self, "region_of_community", reg_of_com)
        object.__setattr__(self, "region_communities", tuple(region_coms))
        object.__setattr__(self, "design", D)
        object.__setattr__(self, "dist_n", dist_n)
        object.__setattr__(self, "dist_c", dist_c)

    def near_weights(self, i):
        """exp(-xi * d) over the member neighborhoods of community i."""
        m = self.members[i]
        return np.exp(-self.xi * self.dist_n[np.ix_(m, m)])

    def far_weights(self, r):
        """exp(-xi * d) over the communities of region r."""
        k = self.region_communities[r]
        return np.exp(-self.xi * self.dist_c[np.ix_(k, k)])

    def group_gamma(self, group):
        if group not in ("w", "b"):
            raise DomainError("group must be 'w' or 'b'")
        return self.gamma_w if group == "w" else self.gamma_b

    def group_total(self, group):
        return self.L_w if group == "w" else self.L_b

    def region_population(self, r, group):
        """Fixed group total of region r: citywide total times neighborhood share."""
        return self.group_total(group) * np.sum(self.region == r) / self.J_n


@dataclass
class MenuEntry:
    """One within-community equilibrium: shares, near field, unit welfare."""

    x: np.ndarray
    psi: np.ndarray
    welfare: float
    residual: float


@dataclass
class CommunityMenu:
    community: int
    entries: list


@dataclass
class RegionEquilibrium:
    """One community-level equilibrium of a region, at elastic supply."""

    region: int
    x: np.ndarray
    psi: np.ndarray
    L_w: np.ndarray
    residual: float
    status: str


@dataclass
class CitywideState:
    """Snapshot along the citywide supply path.

    psi_c and psi_n carry both groups' fields as rows (w first), over
    communities and neighborhoods respectively; L and U are per community.
    """

    zeta: float
    q_n: np.ndarray
    psi_n: np.ndarray
    psi_c: np.ndarray
    U_w: np.ndarray
    U_b: np.ndarray
    L_w: np.ndarray
    L_b: np.ndarray

    def copy(self):
        return CitywideState(zeta=self.zeta, q_n=self.q_n.copy(),
                             psi_n=self.psi_n.copy(), psi_c=self.psi_c.copy(),
                             U_w=self.U_w.copy(), U_b=self.U_b.copy(),
                             L_w=self.L_w.copy(), L_b=self.L_b.copy())


def sub_city(nc: NestedCity, i: int) -> City:
    """The community as a standalone city with the dispersion folded in.

    Neighborhood weights enter choice as (A q^-alpha psi^gamma)^theta, so the
    flat-city solvers apply with amenity A^theta and exponents gamma*theta,
    alpha*theta.
    """
    m = nc.members[i]
    return City(J=m.size, L1=1.0, L2=0.0, A=nc.A[m] ** nc.theta,
                dist=nc.dist_n[np.ix_(m, m)], xi=nc.xi, c=nc.c[m],
                mc=nc.mc[m], eta=math.inf, gamma1=nc.gamma_w * nc.theta,
                gamma2=0.0, alpha=nc.alpha * nc.theta)


def community_welfare(nc: NestedCity, i: int, populations) -> float:
    """Group-w welfare of community i at given member population levels.

    The near field is evaluated on levels, not shares, so scaling the
    population by lambda scales welfare by lambda**gamma_w.
    """
    m = nc.members[i]
    L = np.asarray(populations, dtype=float)
    if L.shape != (m.size,) or np.any(L <= 0):
        raise DomainError("populations must be positive, one per neighborhood")
    psi = nc.near_weights(i) @ L
    return _welfare(nc, m, psi, nc.mc[m], nc.gamma_w)


def _welfare(nc, m, psi, q, gamma):
    th = nc.theta
    s = np.sum(nc.A[m] ** th * np.asarray(q) ** (-nc.alpha * th)
               * np.asarray(psi) ** (gamma * th))
    return float(s ** (1.0 / th))


def _positive_candidate(eq):
    """Strictly positive real field from a continuation endpoint, else None."""
    if eq.status not in ("proper", "singular-endpoint"):
        return None
    psi = np.asarray(eq.psi)
    if np.iscomplexobj(psi):
        if np.max(np.abs(psi.imag)) > 1e-8:
            return None
        psi = psi.real.copy()
    if np.any(psi <= 0):
        return None
    return psi


def community_equilibria(nc: NestedCity, i: int,
                         cfg: TrackerConfig | None = None, *,
                         track_den: int = 12, seed: int = 0) -> list:
    """Menu of within-community equilibria at perfectly elastic supply.

    Group-w shares only: the far field multiplies every neighborhood of the
    community equally, so it cancels from the conditional choice and the menu
    depends on community data alone.

    The continuation runs at a nearby rational exponent with denominator at
    most track_den; exponents like 2.003 would otherwise polynomialize at
    degree in the thousands and stall the tracker. Every endpoint is then
    re-solved at the exact exponent in log coordinates, so reported entries
    and residuals belong to the true system. An even denominator keeps both
    real sheets of the root substitution and with them the sign-pattern
    starts, so fixtures are best parameterized with gamma_w*theta near a
    half-integer. Entries are sorted by composition.
    """
    m = nc.members[i]
    if m.size == 1:
        w = float(nc.A[m[0]] * nc.mc[m[0]] ** (-nc.alpha))
        return [MenuEntry(x=np.array([1.0]), psi=np.array([1.0]),
                          welfare=w, residual=0.0)]
    sub = sub_city(nc, i)
    rat = rational_approx(sub.gamma1, 0.05, track_den)
    track = replace(sub, gamma1=rat.value)
    eqs = solve_amenity_homotopy(track, rat, cfg, seed=seed)
    W = weights(sub)
    coef = sub.A * sub.mc ** (-sub.alpha)
    entries, reps = [], []
    for eq in eqs:
        # endpoint Newton can stall between near-multiple roots, leaving a
        # true root classified as a singular endpoint; the exact-exponent
        # re-solve below is the arbiter either way
        psi0 = _positive_candidate(eq)
        if psi0 is None:
            continue
        try:
            u, _ = _solve_positive_field(W, coef, sub.gamma1, np.log(psi0))
        except BadStart:
            continue
        psi = np.exp(u)
        wgt = coef * psi ** sub.gamma1
        x = wgt / wgt.sum()
        if any(np.max(np.abs(x - r)) < 1e-6 for r in reps):
            continue
        res = float(np.max(np.abs(social_residual(sub, psi, sub.mc))))
        if res > 1e-8:
            continue
        reps.append(x)
        welfare = _welfare(nc, m, psi, nc.mc[m], nc.gamma_w)
        entries.append(MenuEntry(x=x, psi=psi, welfare=welfare,
                                 residual=res))
    entries.sort(key=lambda e: tuple(np.round(e.x, 9)))
    return entries


def community_menus(nc: NestedCity, cfg: TrackerConfig | None = None,
                    **kwargs) -> list:
    """All per-community menus; communities are independent of each other."""
    return [CommunityMenu(community=i,
                          entries=community_equilibria(nc, i, cfg, **kwargs))
            for i in range(nc.J_c)]


def combination_count(menus) -> int:
    """Number of citywide selections: product of menu sizes."""
    if not menus:
        raise DomainError("need at least one menu")
    total = 1
    for menu in menus:
        entries = menu.entries if isinstance(menu, CommunityMenu) else menu
        if not entries:
            raise DomainError("every community needs a nonempty menu")
        total *= len(entries)
    return total


def choice_probabilities(nc: NestedCity, psi_n, psi_c, q, group="w"):
    """Factorized nested choice: community stage times conditional stage.

    psi_n is per neighborhood, psi_c per community, q per neighborhood. The
    community stage uses psi_c^(gamma theta) times the theta-th power of the
    conditional denominator, normalized within each region. Returns the
    community probability vector and the joint neighborhood vector (joint
    sums to one within each region).
    """
    g = nc.group_gamma(group)
    th = nc.theta
    psi_n = np.asarray(psi_n, dtype=float)
    psi_c = np.asarray(psi_c, dtype=float)
    q = np.asarray(q, dtype=float)
    E = nc.A ** th * q ** (-nc.alpha * th) * psi_n ** (g * th)
    S = np.array([E[m].sum() for m in nc.members])
    P_com = np.empty(nc.J_c)
    for r in range(nc.n_regions):
        k = nc.region_communities[r]
        G = psi_c[k] ** (g * th) * S[k]
        P_com[k] = G / G.sum()
    joint = np.empty(nc.J_n)
    for i, m in enumerate(nc.members):
        joint[m] = P_com[i] * E[m] / S[i]
    return P_com, joint


def region_fixed_point(nc: NestedCity, selection,
                       cfg: TrackerConfig | None = None, *,
                       track_den: int = 12, seed: int = 0) -> list:
    """Community-level equilibria of every region for one menu selection.

    selection holds one MenuEntry per community. Each region becomes a flat
    city over its communities with the selected unit welfare (to the theta)
    as amenity coefficient and exponent gamma_w*theta on the far field, and
    the same continuation machinery enumerates its fixed points, followed by
    the exact-exponent re-solve described in community_equilibria. Prices do
    not appear at this level. Populations are the region group total times
    the community shares.
    """
    if len(selection) != nc.J_c:
        raise DomainError("selection needs one entry per community")
    out = []
    for r in range(nc.n_regions):
        k = nc.region_communities[r]
        U = np.array([selection[i].welfare for i in k])
        if np.any(U <= 0):
            raise DomainError("selected welfare must be positive")
        LR = nc.region_population(r, "w")
        if k.size == 1:
            out.append(RegionEquilibrium(region=r, x=np.array([1.0]),
                                         psi=np.array([1.0]),
                                         L_w=np.array([LR]), residual=0.0,
                                         status="proper"))
            continue
        city = City(J=k.size, L1=1.0, L2=0.0, A=U ** nc.theta,
                    dist=nc.dist_c[np.ix_(k, k)], xi=nc.xi,
                    c=np.ones(k.size), mc=np.ones(k.size), eta=math.inf,
                    gamma1=nc.gamma_w * nc.theta, gamma2=0.0, alpha=nc.alpha)
        rat = rational_approx(city.gamma1, 0.05, track_den)
        track = replace(city, gamma1=rat.value)
        Wc = weights(city)
        coef = city.A.astype(float)
        reps = []
        for eq in solve_amenity_homotopy(track, rat, cfg, seed=seed):
            psi0 = _positive_candidate(eq)
            if psi0 is None:
                continue
            try:
                u, _ = _solve_positive_field(Wc, coef, city.gamma1,
                                             np.log(psi0))
            except BadStart:
                continue
            psi = np.exp(u)
            wgt = coef * psi ** city.gamma1
            x = wgt / wgt.sum()
            if any(np.max(np.abs(x - rr)) < 1e-6 for rr in reps):
                continue
            res = float(np.max(np.abs(social_residual(city, psi, city.mc))))
            if res > 1e-8:
                continue
            reps.append(x)
            out.append(RegionEquilibrium(region=r, x=x, psi=psi,
                                         L_w=LR * x, residual=res,
                                         status="proper"))
    return out


def _solve_positive_field(W, coef, expo, u0, tol=1e-12, max_iters=80):
    """Newton in log coordinates on psi_j * S = sum_k W_jk w_k.

    w_k = coef_k * exp(expo * u_k), S = sum w. Handles negative expo, where
    the map is a contraction and the polynomial machinery does not apply.
    """
    u = u0.copy()
    n = u.size
    for _ in range(max_iters):
        w = coef * np.exp(expo * u)
        S = w.sum()
        eu = np.exp(u)
        R = eu * S - W @ w
        rn = np.max(np.abs(R))
        if rn <= tol * max(S, 1.0):
            return u, rn
        Jm = np.outer(eu, expo * w) - W * (expo * w)[None, :]
        Jm[np.diag_indices(n)] += eu * S
        try:
            du = np.linalg.solve(Jm, -R)
        except np.linalg.LinAlgError:
            raise BadStart("singular Jacobian in the positive-field solve")
        step = np.clip(du, -2.0, 2.0)
        u = u + step
    raise BadStart(f"positive-field solve stalled at residual {rn:.3e}")


def _near_field(nc, i, q_mem, group, u0=None):
    """Group near field over community i's members at given prices."""
    g = nc.group_gamma(group)
    th = nc.theta
    m = nc.members[i]
    W = nc.near_weights(i)
    coef = nc.A[m] ** th * np.asarray(q_mem) ** (-nc.alpha * th)
    if u0 is None:
        u0 = np.log(W @ np.full(m.size, 1.0 / m.size))
    u, _ = _solve_positive_field(W, coef, g * th, u0)
    return np.exp(u)


def _far_field(nc, r, U_com, group, u0=None):
    """Group far field and community shares over region r's communities."""
    g = nc.group_gamma(group)
    th = nc.theta
    k = nc.region_communities[r]
    W = nc.far_weights(r)
    coef = np.asarray(U_com) ** th
    if u0 is None:
        u0 = np.log(W @ np.full(k.size, 1.0 / k.size))
    u, _ = _solve_positive_field(W, coef, g * th, u0)
    psi = np.exp(u)
    G = coef * psi ** (g * th)
    return psi, G / G.sum()


def citywide_state0(nc: NestedCity, selection, region_choice) -> CitywideState:
    """Assemble the zeta=0 state from a menu selection and region equilibria.

    region_choice holds one RegionEquilibrium per region (ordered by region).
    The b-group fields are the unique fixed points of its own-field maps at
    q = mc, solved directly since gamma_b may be negative.
    """
    if len(region_choice) != nc.n_regions:
        raise DomainError("region_choice needs one equilibrium per region")
    q = nc.mc.copy()
    psi_n = np.empty((2, nc.J_n))
    psi_c = np.empty((2, nc.J_c))
    U_w = np.empty(nc.J_c)
    U_b = np.empty(nc.J_c)
    L_w = np.empty(nc.J_c)
    L_b = np.empty(nc.J_c)
    for i, m in enumerate(nc.members):
        entry = selection[i]
        if entry.psi.shape != (m.size,):
            raise DomainError(f"selection for community {i} has wrong size")
        psi_n[0, m] = entry.psi
        U_w[i] = entry.welfare
        psi_n[1, m] = _near_field(nc, i, q[m], "b")
        U_b[i] = _welfare(nc, m, psi_n[1, m], q[m], nc.gamma_b)
    for r, req in enumerate(region_choice):
        k = nc.region_communities[r]
        if req.region != r or req.x.shape != (k.size,):
            raise DomainError(f"region_choice entry {r} does not match region")
        psi_c[0, k] = req.psi
        L_w[k] = nc.region_population(r, "w") * req.x
        psi_b, shares_b = _far_field(nc, r, U_b[k], "b")
        psi_c[1, k] = psi_b
        L_b[k] = nc.region_population(r, "b") * shares_b
    return CitywideState(zeta=0.0, q_n=q, psi_n=psi_n, psi_c=psi_c,
                         U_w=U_w, U_b=U_b, L_w=L_w, L_b=L_b)


class _Citywide:
    """Residuals and tangent blocks of the citywide system in log coordinates.

    Unknowns y = [u_n^w, u_n^b (near fields), u_c^w, u_c^b (far fields),
    v (prices)], all logs. Welfare and populations are explicit functions of
    y. The market block is the log fixed-point form with the own-price
    exponent absorbed into the 1 + alpha*theta*zeta denominator.
    """

    def __init__(self, nc):
        self.nc = nc
        self.th = nc.theta
        self.gammas = (nc.gamma_w, nc.gamma_b)
        self.n = 2 * nc.J_n + 2 * nc.J_c + nc.J_n
        self.logmc = np.log(nc.mc)
        self.logc = np.log(nc.c)
        self.LR = np.empty((2, nc.J_c))
        for r in range(nc.n_regions):
            k = nc.region_communities[r]
            self.LR[0, k] = nc.region_population(r, "w")
            self.LR[1, k] = nc.region_population(r, "b")

    def split(self, y):
        J_n, J_c = self.nc.J_n, self.nc.J_c
        un = y[:2 * J_n].reshape(2, J_n)
        uc = y[2 * J_n:2 * J_n + 2 * J_c].reshape(2, J_c)
        v = y[2 * J_n + 2 * J_c:]
        return un, uc, v

    def pack(self, state: CitywideState):
        return np.concatenate([np.log(state.psi_n).ravel(),
                               np.log(state.psi_c).ravel(),
                               np.log(state.q_n)])

    def levels(self, y):
        """Per-group E, S, P (conditional), U, community G, P_com, L."""
        nc = self.nc
        un, uc, v = self.split(y)
        psi_n = np.exp(un)
        psi_c = np.exp(uc)
        q = np.exp(v)
        out = []
        for gi, gamma in enumerate(self.gammas):
            E = nc.A ** self.th * q ** (-nc.alpha * self.th) \
                * psi_n[gi] ** (gamma * self.th)
            S = np.array([E[m].sum() for m in nc.members])
            P = np.empty(nc.J_n)
            for i, m in enumerate(nc.members):
                P[m] = E[m] / S[i]
            U = S ** (1.0 / self.th)
            G = psi_c[gi] ** (gamma * self.th) * S
            P_com = np.empty(nc.J_c)
            for r in range(nc.n_regions):
                k = nc.region_communities[r]
                P_com[k] = G[k] / G[k].sum()
            L = self.LR[gi] * P_com
            out.append(dict(E=E, S=S, P=P, U=U, P_com=P_com, L=L))
        return psi_n, psi_c, q, out

    def market(self, y, zeta, lv=None):
        """Log market residual v - Q(y; zeta) and the demand decomposition."""
        nc = self.nc
        v = self.split(y)[2]
        if lv is None:
            lv = self.levels(y)[3]
        q = np.exp(v)
        athz = 1.0 + nc.alpha * self.th * zeta
        T = np.zeros(nc.J_n)
        piece = []
        for gi in range(2):
            d = lv[gi]
            Lg = d["L"][nc.community]
            # demand numerator with the own-price factor stripped:
            # L_i P_{j|i} q_j^(alpha theta)
            pg = Lg * d["P"] * q ** (nc.alpha * self.th)
            piece.append(pg)
            T += pg
        G = np.log(T) - self.logc
        Q = (self.logmc + zeta * G) / athz
        return v - Q, T, piece, G

    def residual(self, y, zeta):
        nc = self.nc
        psi_n, psi_c, q, lv = self.levels(y)
        parts = []
        for gi in range(2):
            d = lv[gi]
            fn = np.empty(nc.J_n)
            for i, m in enumerate(nc.members):
                fn[m] = psi_n[gi, m] - nc.near_weights(i) @ d["P"][m]
            parts.append(fn)
        for gi in range(2):
            d = lv[gi]
            fc = np.empty(nc.J_c)
            for r in range(nc.n_regions):
                k = nc.region_communities[r]
                fc[k] = psi_c[gi, k] - nc.far_weights(r) @ d["P_com"][k]
            parts.append(fc)
        mres, _, _, _ = self.market(y, zeta, lv)
        parts.append(mres)
        return np.concatenate(parts)

    def blocks(self, y, zeta):
        """Every first-order piece of the citywide tangent, in levels."""
        nc = self.nc
        th = self.th
        psi_n, psi_c, q, lv = self.levels(y)
        athz = 1.0 + nc.alpha * th * zeta
        lam = zeta / athz
        _, T, piece, G = self.market(y, zeta, lv)
        bl = dict(psi_n=psi_n, psi_c=psi_c, q=q, lv=lv, T=T, G=G)
        for gi, gamma in enumerate(self.gammas):
            d = lv[gi]
            gth = gamma * th
            ath = nc.alpha * th
            dfn_dPsi = np.zeros((nc.J_n, nc.J_n))
            dfn_dq = np.zeros((nc.J_n, nc.J_n))
            dU_dPsi = np.zeros((nc.J_c, nc.J_n))
            dU_dq = np.zeros((nc.J_c, nc.J_n))
            for i, m in enumerate(nc.members):
                W = nc.near_weights(i)
                P = d["P"][m]
                WP = W @ P
                core = W * P[None, :] - np.outer(WP, P)
                blk = np.eye(m.size) - gth * core / psi_n[gi, m][None, :]
                dfn_dPsi[np.ix_(m, m)] = blk
                dfn_dq[np.ix_(m, m)] = ath * core / q[m][None, :]
                dU_dPsi[i, m] = gamma * d["U"][i] * P / psi_n[gi, m]
                dU_dq[i, m] = -nc.alpha * d["U"][i] * P / q[m]
            dfc_dPsic = np.zeros((nc.J_c, nc.J_c))
            dfc_dU = np.zeros((nc.J_c, nc.J_c))
            dL_dU = np.zeros((nc.J_c, nc.J_c))
            dL_dPsic = np.zeros((nc.J_c, nc.J_c))
            for r in range(nc.n_regions):
                k = nc.region_communities[r]
                W = nc.far_weights(r)
                Pc = d["P_com"][k]
                WP = W @ Pc
                core = W * Pc[None, :] - np.outer(WP, Pc)
                dfc_dPsic[np.ix_(k, k)] = np.eye(k.size) \
                    - gth * core / psi_c[gi, k][None, :]
                dfc_dU[np.ix_(k, k)] = -th * core / d["U"][k][None, :]
                own = np.diag(Pc) - np.outer(Pc, Pc)
                dL_dU[np.ix_(k, k)] = self.LR[gi, k[0]] * th \
                    * own / d["U"][k][None, :]
                dL_dPsic[np.ix_(k, k)] = self.LR[gi, k[0]] * gth \
                    * own / psi_c[gi, k][None, :]
            sh = piece[gi] / T
            dm_dL = -lam * sh / d["L"][nc.community]
            dm_dPsi = np.zeros((nc.J_n, nc.J_n))
            dm_dq_g = np.zeros((nc.J_n, nc.J_n))
            for i, m in enumerate(nc.members):
                P = d["P"][m]
                dm_dPsi[np.ix_(m, m)] = -lam * gth \
                    * sh[m][:, None] * (np.eye(m.size) - P[None, :]) \
                    / psi_n[gi, m][None, :]
                # S-denominator response of the stripped numerator
                dm_dq_g[np.ix_(m, m)] = -lam * ath \
                    * sh[m][:, None] * P[None, :] / q[m][None, :]
            bl[gi] = dict(dfn_dPsi=dfn_dPsi, dfn_dq=dfn_dq, dU_dPsi=dU_dPsi,
                          dU_dq=dU_dq, dfc_dPsic=dfc_dPsic, dfc_dU=dfc_dU,
                          dL_dU=dL_dU, dL_dPsic=dL_dPsic, dm_dL=dm_dL,
                          dm_dPsi=dm_dPsi, dm_dq_g=dm_dq_g)
        dm_dq = np.diag(1.0 / q) + bl[0]["dm_dq_g"] + bl[1]["dm_dq_g"]
        dm_dzeta = -(G * athz - nc.alpha * th * (self.logmc + zeta * G)) \
            / athz ** 2
        bl["dm_dq"] = dm_dq
        bl["dm_dzeta"] = dm_dzeta
        return bl

    def _ydot(self, y, zeta, bl=None):
        """Path slope from the full Jacobian in the log unknowns.

        Equals the Schur-factored slope (1 - Phi)^-1 B wherever the inner
        level solves are regular, but stays valid when one of them folds
        while the assembled system does not.
        """
        bl = bl or self.blocks(y, zeta)
        rhs = np.zeros(self.n)
        rhs[2 * self.nc.J_n + 2 * self.nc.J_c:] = -bl["dm_dzeta"]
        return np.linalg.solve(self.jac(y, zeta), rhs)

    def tangent(self, y, zeta):
        """Path slope plus the price-operator log and the fold certificate.

        Returns (ydot, min_eig, logdet, sv_min): the smallest real eigenvalue
        and log determinant of (1 - Phi) are diagnostics reported at every
        step; sv_min is the smallest singular value of the full Jacobian and
        is the quantity that certifies a genuine fold. The factored operator
        has removable poles where a community- or neighborhood-level block is
        singular on its own, so its eigenvalues may spike without any fold.
        """
        nc = self.nc
        bl = self.blocks(y, zeta)
        try:
            phi_rhs = np.zeros((nc.J_n, nc.J_n))
            for gi in range(2):
                g = bl[gi]
                X = np.linalg.solve(g["dfn_dPsi"], g["dfn_dq"])
                F = -g["dU_dPsi"] @ X + g["dU_dq"]
                E = g["dL_dU"] - g["dL_dPsic"] @ np.linalg.solve(
                    g["dfc_dPsic"], g["dfc_dU"])
                ML = g["dm_dL"][:, None] * nc.design
                phi_rhs += ML @ (E @ F) - g["dm_dPsi"] @ X
            Phi = -np.linalg.solve(bl["dm_dq"], phi_rhs)
            IP = np.eye(nc.J_n) - Phi
            eigs = np.linalg.eigvals(IP)
            min_eig = float(np.min(eigs.real))
            sign, logabs = np.linalg.slogdet(IP)
            logdet = float(logabs) if sign > 0 else float("-inf") \
                if sign < 0 else float("nan")
        except np.linalg.LinAlgError:
            min_eig, logdet = float("nan"), float("nan")
        M = self.jac(y, zeta)
        sv_min = float(np.linalg.svd(M, compute_uv=False)[-1])
        rhs = np.zeros(self.n)
        rhs[2 * nc.J_n + 2 * nc.J_c:] = -bl["dm_dzeta"]
        ydot = np.linalg.solve(M, rhs)
        return ydot, min_eig, logdet, sv_min

    def jac(self, y, zeta):
        """Full Jacobian of residual() in the log unknowns, for polishing."""
        nc = self.nc
        bl = self.blocks(y, zeta)
        n = self.n
        J_n, J_c = nc.J_n, nc.J_c
        psi_n, psi_c, q = bl["psi_n"], bl["psi_c"], bl["q"]
        M = np.zeros((n, n))
        v0 = 2 * J_n + 2 * J_c
        for gi in range(2):
            g = bl[gi]
            r0 = gi * J_n
            M[r0:r0 + J_n, r0:r0 + J_n] = g["dfn_dPsi"] * psi_n[gi][None, :]
            M[r0:r0 + J_n, v0:] = g["dfn_dq"] * q[None, :]
            rc = 2 * J_n + gi * J_c
            M[rc:rc + J_c, rc:rc + J_c] = g["dfc_dPsic"] * psi_c[gi][None, :]
            dfc_dUn = g["dfc_dU"] @ g["dU_dPsi"]
            M[rc:rc + J_c, r0:r0 + J_n] = dfc_dUn * psi_n[gi][None, :]
            M[rc:rc + J_c, v0:] = (g["dfc_dU"] @ g["dU_dq"]) * q[None, :]
            ML = g["dm_dL"][:, None] * nc.design
            dm_un = g["dm_dPsi"] + ML @ g["dL_dU"] @ g["dU_dPsi"]
            M[v0:, r0:r0 + J_n] += dm_un * psi_n[gi][None, :]
            M[v0:, rc:rc + J_c] = (ML @ g["dL_dPsic"]) * psi_c[gi][None, :]
            M[v0:, v0:] += (ML @ g["dL_dU"] @ g["dU_dq"]) * q[None, :]
        M[v0:, v0:] += bl["dm_dq"] * q[None, :]
        return M

    def polish(self, y, zeta, cfg):
        R = self.residual(y, zeta)
        rn = np.max(np.abs(R))
        if not np.isfinite(rn):
            return y, math.inf, False
        for _ in range(cfg.newton_max_iters):
            if rn <= cfg.newton_tol:
                return y, rn, True
            try:
                dy = np.linalg.solve(self.jac(y, zeta), -R)
            except np.linalg.LinAlgError:
                return y, rn, False
            lam = 1.0
            for _ in range(6):
                yt = y + lam * dy
                Rt = self.residual(yt, zeta)
                rt = np.max(np.abs(Rt))
                if np.isfinite(rt) and rt < rn:
                    break
                lam *= 0.5
            else:
                return y, rn, rn <= cfg.newton_tol
            y, R, rn = yt, Rt, rt
        return y, rn, rn <= cfg.newton_tol

    def state(self, y, zeta):
        psi_n, psi_c, q, lv = self.levels(y)
        return CitywideState(zeta=zeta, q_n=q, psi_n=psi_n, psi_c=psi_c,
                             U_w=lv[0]["U"], U_b=lv[1]["U"],
                             L_w=lv[0]["L"], L_b=lv[1]["L"])


def citywide_elasticity_homotopy(nc: NestedCity, state0: CitywideState,
                                 zeta_to: float,
                                 cfg: TrackerConfig | None = None, *,
                                 stats_out: dict | None = None) -> list:
    """Integrate the citywide price ODE from state0 up to zeta_to.

    Runge-Kutta predictor on the log state, full Newton correction onto the
    social, far-field, and market residuals after every step. The smallest
    real eigenvalue and the log determinant of the price operator are logged
    each accepted step; the run stops with status 'singular' when the full
    Jacobian's smallest singular value falls under the floor, for the
    bifurcation machinery to take over. The price-operator eigenvalues alone
    are not the stop trigger: they spike where an inner level block folds on
    its own, which the assembled system steps through without losing rank.
    Returns the list of accepted CitywideState snapshots.
    """
    if zeta_to < 0:
        raise DomainError("zeta_to must be nonnegative")
    if state0.zeta != 0.0:
        raise BadStart("state0 must sit at zeta=0")
    cfg = cfg or TrackerConfig()
    sys = _Citywide(nc)
    y = sys.pack(state0)
    y, r0, ok = sys.polish(y, 0.0, cfg)
    if not ok:
        raise BadStart(f"state0 does not satisfy the zeta=0 system ({r0:.3e})")
    path = [sys.state(y, 0.0)]
    log = []
    status = "converged"
    if zeta_to > 0.0:
        zeta = 0.0
        hstep = min(cfg.step_init, zeta_to)
        succ = 0
        while True:
            ydot, min_eig, logdet, sv_min = sys.tangent(y, zeta)
            log.append((zeta, min_eig, logdet,
                        float(np.linalg.norm(np.exp(y[-nc.J_n:])))))
            if sv_min <= _EIG_FLOOR:
                status = "singular"
                break
            if zeta >= zeta_to:
                break
            dt = min(hstep, zeta_to - zeta)
            k1 = ydot
            try:
                k2 = sys._ydot(y + 0.5 * dt * k1, zeta + 0.5 * dt)
                k3 = sys._ydot(y + 0.5 * dt * k2, zeta + 0.5 * dt)
                k4 = sys._ydot(y + dt * k3, zeta + dt)
                yp = y + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
                pred_ok = np.all(np.isfinite(yp))
            except np.linalg.LinAlgError:
                pred_ok = False
            if pred_ok:
                yc, rn, ok = sys.polish(yp, zeta + dt, cfg)
            else:
                ok = False
            if ok:
                y = yc
                zeta += dt
                succ += 1
                if succ >= 3:
                    hstep = min(hstep * 1.5, cfg.step_max)
                    succ = 0
                path.append(sys.state(y, zeta))
            else:
                hstep *= 0.5
                succ = 0
                if hstep < cfg.step_min:
                    raise StepFailure(
                        f"citywide step underflow at zeta={zeta:.6f}")
    if stats_out is not None:
        stats_out.update(status=status, log=log,
                         steps=len(path) - 1)
    return path


def ingest_neighborhoods(path, *, theta: float = 1.0, gamma_w: float = 2.0,
                         gamma_b: float = -0.5, xi: float = 1.0,
                         alpha: float = 0.3, L_w: float = 1.0,
                         L_b: float = 0.5) -> NestedCity:
    """Read a neighborhood table into a NestedCity.

    Expected header: neighborhood_id, community_id, region_id, centroid_x,
    centroid_y, log_amenity, mc, c. Community and region labels may be any
    strings; they are mapped to indices in order of first appearance.
    Centroids must be planar, in units consistent with xi.
    """
    fields = ("neighborhood_id", "community_id", "region_id", "centroid_x",
              "centroid_y", "log_amenity", "mc", "c")
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise SchemaError("empty file, expected a header row")
        missing = [f for f in fields if f not in reader.fieldnames]
        if missing:
            raise SchemaError(f"missing columns: {', '.join(missing)}")
        rows = list(reader)
    if not rows:
        raise SchemaError("no data rows")
    names, com_labels, reg_labels = [], [], []
    numeric = {f: [] for f in fields[3:]}
    for rix, row in enumerate(rows, start=2):
        nid = (row["neighborhood_id"] or "").strip()
        if not nid:
            raise SchemaError(f"row {rix}: empty neighborhood_id")
        if nid in names:
            raise HierarchyError(f"row {rix}: duplicate neighborhood {nid!r}")
        names.append(nid)
        for label, bucket in (("community_id", com_labels),
                              ("region_id", reg_labels)):
            val = (row[label] or "").strip()
            if not val:
                raise HierarchyError(f"row {rix}: {nid!r} references no "
                                     f"{label.split('_')[0]}")
            bucket.append(val)
        for f in fields[3:]:
            raw = (row[f] or "").strip()
            try:
                numeric[f].append(float(raw))
            except ValueError:
                raise SchemaError(
                    f"row {rix}, column {f}: not a number: {raw!r}")
    com_index = {}
    reg_index = {}
    community = np.array([com_index.setdefault(cc, len(com_index))
                          for cc in com_labels])
    region = np.array([reg_index.setdefault(rr, len(reg_index))
                       for rr in reg_labels])
    coords = np.column_stack([numeric["centroid_x"], numeric["centroid_y"]])
    return NestedCity(community=community, region=region,
                      A=np.exp(numeric["log_amenity"]),
                      mc=np.array(numeric["mc"]), c=np.array(numeric["c"]),
                      coords=coords, theta=theta, gamma_w=gamma_w,
                      gamma_b=gamma_b, xi=xi, alpha=alpha, L_w=L_w, L_b=L_b,
                      names=tuple(names))


def synthetic_nested_city(seed: int = 0, *, n_neighborhoods: int = 353,
                          n_communities: int = 77, n_regions: int = 9,
                          sigma_log_amenity: float = 0.5, theta: float = 1.0,
                          gamma_w: float = 2.003, gamma_b: float = -0.4391,
                          xi: float = 1.0, alpha: float = 0.3,
                          L_w: float = 1.0, L_b: float = 0.5) -> NestedCity:
    """Deterministic seeded city with the full three-level hierarchy.

    Communities are spread round-robin over regions and neighborhoods over
    communities, so the default sizes give a 353/77/9 hierarchy with four or
    five neighborhoods per community. Region centers sit on a coarse grid,
    community centers scatter around them, neighborhoods around those;
    log-amenities are i.i.d. normal, costs are one.
    """
    if not (n_neighborhoods >= n_communities >= n_regions >= 1):
        raise DomainError("need n_neighborhoods >= n_communities >= n_regions")
    rng = np.random.default_rng(seed)
    com_per_reg = np.full(n_regions, n_communities // n_regions)
    com_per_reg[:n_communities % n_regions] += 1
    nb_per_com = np.full(n_communities, n_neighborhoods // n_communities)
    nb_per_com[:n_neighborhoods % n_communities] += 1
    side = math.ceil(math.sqrt(n_regions))
    reg_centers = np.array([[10.0 * (r % side), 10.0 * (r // side)]
                            for r in range(n_regions)])
    community = np.repeat(np.arange(n_communities), nb_per_com)
    region_of_com = np.repeat(np.arange(n_regions), com_per_reg)
    region = region_of_com[community]
    com_centers = reg_centers[region_of_com] \
        + rng.uniform(-3.0, 3.0, size=(n_communities, 2))
    coords = com_centers[community] \
        + rng.uniform(-1.0, 1.0, size=(n_neighborhoods, 2))
    logA = rng.normal(0.0, sigma_log_amenity, size=n_neighborhoods)
    return NestedCity(community=community, region=region, A=np.exp(logA),
                      mc=np.ones(n_neighborhoods), c=np.ones(n_neighborhoods),
                      coords=coords, theta=theta, gamma_w=gamma_w,
                      gamma_b=gamma_b, xi=xi, alpha=alpha, L_w=L_w, L_b=L_b,
                      names=tuple(f"n{k:04d}" for k in range(n_neighborhoods)))
