"""Equilibrium enumeration by continuation.

Three routes to the inelastic-city equilibrium set: a total-degree homotopy
with the full Bezout path count, a cheaper parameter path from a uniform
reference city (no completeness guarantee, bifurcation branches harvested
along the way), and a total-degree run on the series-truncated additive
system. The elastic-supply continuation lives in elasticity.py and is
re-exported here.
"""
from __future__ import annotations

import math

import numpy as np
from numpy.random import Generator, PCG64

from .model import (City, Equilibrium, DIVERGE_CAP, TOL_RESID, TOL_BOX,
                    classify, homogeneous_city, weights)
from .polysys import (PolySystem, Rational, StartSet, build_static_system,
                      build_maclaurin_system, maclaurin_coefficients,
                      start_homogeneous, start_total_degree)
from .tracker import Homotopy, PathResult, TrackerConfig, dedup, track_all


class TotalDegreeH(Homotopy):
    """H(z, t) = gamma*t*G(z) + (1-t)*P(z), tracked from t=1 down to t=0.

    gamma is a random unit-modulus complex constant; with probability one it
    keeps every path nonsingular for t in (0, 1].
    """

    t_start = 1.0
    t_end = 0.0
    is_real = False

    def __init__(self, target: PolySystem, start: PolySystem, gamma: complex):
        if target.nvars != start.nvars or len(target.equations) != len(start.equations):
            raise ValueError("start and target systems must have matching shape")
        self.target = target
        self.start = start
        self.gamma = complex(gamma)
        self.dimension = target.nvars

    def eval(self, x, t):
        return self.gamma * t * self.start.eval(x) + (1 - t) * self.target.eval(x)

    def jac_x(self, x, t):
        return self.gamma * t * self.start.jac(x) + (1 - t) * self.target.jac(x)

    def jac_t(self, x, t):
        return self.gamma * self.start.eval(x) - self.target.eval(x)

    def eval_batch(self, X, t):
        G = self.start.eval_batch(X)
        P = self.target.eval_batch(X)
        return (self.gamma * t)[:, None] * G + (1 - t)[:, None] * P

    def jac_x_batch(self, X, t):
        G = self.start.jac_batch(X)
        P = self.target.jac_batch(X)
        return (self.gamma * t)[:, None, None] * G + (1 - t)[:, None, None] * P

    def jac_t_batch(self, X, t):
        return self.gamma * self.start.eval_batch(X) - self.target.eval_batch(X)

    def eval_generic(self, x, t):
        G = self.start.eval_generic(x)
        P = self.target.eval_generic(x)
        return [self.gamma * t * g + (1 - t) * p for g, p in zip(G, P)]


class ParamPathH(Homotopy):
    """Linear parameter path between two cities at fixed exponents (p, q).

    Coefficients c_l(t) = A_l(t) mc_l(t)^(-alpha) and the interaction matrix
    move linearly from city0 to city1 as t goes 0 to 1; the tracked system is
    z_j^q * sum_l c_l z_l^p - sum_k W_jk(t) c_k(t) z_k^p. State stays real, so
    determinant-sign monitoring is meaningful along these paths.
    """

    t_start = 0.0
    t_end = 1.0
    is_real = True

    def __init__(self, city0: City, city1: City, rat: Rational):
        if city0.J != city1.J:
            raise ValueError("cities must share a location count")
        if city0.alpha != city1.alpha:
            raise ValueError("cities must share the price exponent")
        self.dimension = city0.J
        self.p, self.q = rat.p, rat.q
        self.alpha = city0.alpha
        self.A0, self.A1 = city0.A.astype(float), city1.A.astype(float)
        self.mc0, self.mc1 = city0.mc.astype(float), city1.mc.astype(float)
        self.W0, self.W1 = weights(city0), weights(city1)
        self.dA = self.A1 - self.A0
        self.dmc = self.mc1 - self.mc0
        self.dW = self.W1 - self.W0

    def _coef(self, t):
        A = self.A0 + t * self.dA
        mc = self.mc0 + t * self.dmc
        c = A * mc ** (-self.alpha)
        cdot = self.dA * mc ** (-self.alpha) \
            - self.alpha * A * mc ** (-self.alpha - 1) * self.dmc
        return c, cdot

    def _zp(self, z):
        return np.ones_like(z) if self.p == 0 else z ** self.p

    def eval(self, x, t):
        c, _ = self._coef(t)
        v = c * self._zp(x)
        W = self.W0 + t * self.dW
        return x ** self.q * v.sum() - W @ v

    def jac_x(self, x, t):
        c, _ = self._coef(t)
        zp = self._zp(x)
        v = c * zp
        dv = np.zeros_like(x) if self.p == 0 else self.p * c * x ** (self.p - 1)
        W = self.W0 + t * self.dW
        J = np.outer(x ** self.q, dv) - W * dv[None, :]
        J[np.diag_indices_from(J)] += self.q * x ** (self.q - 1) * v.sum()
        return J

    def jac_t(self, x, t):
        c, cdot = self._coef(t)
        zp = self._zp(x)
        v, vd = c * zp, cdot * zp
        W = self.W0 + t * self.dW
        return x ** self.q * vd.sum() - self.dW @ v - W @ vd

    def eval_batch(self, X, t):
        A = self.A0[None, :] + t[:, None] * self.dA[None, :]
        mc = self.mc0[None, :] + t[:, None] * self.dmc[None, :]
        c = A * mc ** (-self.alpha)
        zp = np.ones_like(X) if self.p == 0 else X ** self.p
        v = c * zp
        Wv = v @ self.W0.T + t[:, None] * (v @ self.dW.T)
        return X ** self.q * v.sum(axis=1)[:, None] - Wv

    def jac_x_batch(self, X, t):
        B, J = X.shape
        A = self.A0[None, :] + t[:, None] * self.dA[None, :]
        mc = self.mc0[None, :] + t[:, None] * self.dmc[None, :]
        c = A * mc ** (-self.alpha)
        zp = np.ones_like(X) if self.p == 0 else X ** self.p
        v = c * zp
        dv = np.zeros_like(X) if self.p == 0 else self.p * c * X ** (self.p - 1)
        W = self.W0[None, :, :] + t[:, None, None] * self.dW[None, :, :]
        out = (X ** self.q)[:, :, None] * dv[:, None, :] - W * dv[:, None, :]
        idx = np.arange(J)
        out[:, idx, idx] += self.q * X ** (self.q - 1) * v.sum(axis=1)[:, None]
        return out

    def jac_t_batch(self, X, t):
        A = self.A0[None, :] + t[:, None] * self.dA[None, :]
        mc = self.mc0[None, :] + t[:, None] * self.dmc[None, :]
        c = A * mc ** (-self.alpha)
        cdot = self.dA[None, :] * mc ** (-self.alpha) \
            - self.alpha * A * mc ** (-self.alpha - 1) * self.dmc[None, :]
        zp = np.ones_like(X) if self.p == 0 else X ** self.p
        v, vd = c * zp, cdot * zp
        W_vd = vd @ self.W0.T + t[:, None] * (vd @ self.dW.T)
        return X ** self.q * vd.sum(axis=1)[:, None] - v @ self.dW.T - W_vd

    def eval_generic(self, x, t):
        J = self.dimension
        c = []
        for j in range(J):
            A = self.A0[j] + t * self.dA[j]
            mc = self.mc0[j] + t * self.dmc[j]
            c.append(A * mc ** (-self.alpha))
        zp = [x[j] ** self.p for j in range(J)]
        S = sum(c[j] * zp[j] for j in range(J))
        out = []
        for j in range(J):
            acc = x[j] ** self.q * S
            for k in range(J):
                acc = acc - (self.W0[j, k] + t * self.dW[j, k]) * c[k] * zp[k]
            out.append(acc)
        return out


class AmenityH(ParamPathH):
    """Parameter path from the uniform reference city to a target city."""

    def __init__(self, city_target: City, rat: Rational, level="prop4"):
        J = city_target.J
        if level == "prop4":
            w = math.e
        elif level == "section2":
            w = J / math.e
        else:
            w = float(level)
        ref = homogeneous_city(J, city_target.gamma1, city_target.alpha, level=w,
                               gamma2=city_target.gamma2, L1=city_target.L1,
                               L2=city_target.L2)
        super().__init__(ref, city_target, rat)
        self.city_target = city_target
        self.rat = rat


def _unit_gamma(seed):
    # keep the constant away from the real axis: a (nearly) real gamma is
    # the degenerate draw whose paths can cross on the real slice and merge
    u = Generator(PCG64(seed)).uniform(0.0, 1.0)
    half = math.pi * (0.15 + 0.7 * (u % 0.5) / 0.5)
    phase = half if u < 0.5 else half + math.pi
    return complex(math.cos(phase), math.sin(phase)), phase


def _path_stats(results):
    counts = {"converged": 0, "diverged": 0, "singular": 0, "step-failure": 0}
    for r in results:
        counts[r.status] = counts.get(r.status, 0) + 1
    return counts


def _classify_endpoint(city, psi):
    return classify(city, psi, city.mc.copy())


def solve_total_degree(city: City, rat: Rational, cfg: TrackerConfig | None = None,
                       *, seed: int = 0, budget: int | None = None,
                       trace: bool = False, threads: int = 1,
                       stats_out: dict | None = None) -> list[Equilibrium]:
    """Enumerate all isolated equilibria of the inelastic city via total-degree paths.

    Tracks every Bezout start point of the polynomial substitute system, dedups
    endpoints in psi = z^q space, and classifies each representative at q = mc.
    """
    cfg = cfg or TrackerConfig()
    P = build_static_system(city, rat)
    G, starts = start_total_degree(P.degrees, budget=budget)
    gamma, phase = _unit_gamma(seed)
    h = TotalDegreeH(P.normalized(), G, gamma)
    results = track_all(h, starts, cfg, trace=trace, threads=threads)
    conv = [r.endpoint for r in results if r.status == "converged"]
    reps = dedup([z ** rat.q for z in conv], tol=1e-6)
    eqs = [_classify_endpoint(city, psi) for psi in reps]
    if stats_out is not None:
        stats_out.update(seed=seed, gamma_phase=phase, paths_total=len(results),
                         path_counts=_path_stats(results), endpoints_deduped=len(reps),
                         path_results=results)
    return eqs


def _harvest(h, base_results, cfg, budget, watched):
    """Chase determinant-sign flips and singular stops through branch restarts.

    Determinant events carry their step bracket so the singular-point Newton
    can bisect on the sign instead of insisting the query point is already
    near-singular. Quadratic-Taylor branches cover folds; pitchforks leave the
    split branches beyond the quadratic term, so kernel-offset Newton seeds on
    both sides of the singular point are tried as well. Returns extra
    PathResults from restarted branches; watched collects the located singular
    points for diagnostics.
    """
    from .bifurcation import locate_singular, enumerate_branches
    from .errors import NoConvergence, NotSingular, NoBranches
    from .tracker import _newton_correct
    t_end = h.t_end
    queue: list[tuple[np.ndarray, float, tuple | None]] = []

    def enqueue(pr):
        for (t_lo, t_hi, x_hi) in pr.det_events:
            queue.append((np.real(x_hi), float(t_hi), (float(t_lo), float(t_hi))))
        if pr.status == "singular" and pr.steps_taken > 0:
            queue.append((np.real(pr.endpoint), pr.t_final, None))

    for pr in base_results:
        enqueue(pr)
    extra: list[PathResult] = []
    left = budget
    while queue and left > 0:
        x_near, t_near, bracket = queue.pop(0)
        left -= 1
        if not np.all(np.isfinite(x_near)):
            continue
        try:
            s = locate_singular(h, x_near, t_near,
                                alarm_tol=None if bracket is not None else 1e-3,
                                bracket=bracket)
        except (NoConvergence, NotSingular, np.linalg.LinAlgError):
            continue
        if any(abs(s.t_star - ts) < 1e-6 and np.max(np.abs(s.x - xs)) < 1e-4
               for ts, xs in watched):
            continue
        watched.append((s.t_star, s.x))
        dt = 1e-3 * (t_end - s.t_star)
        if dt == 0.0:
            continue
        seeds = []
        try:
            bs = enumerate_branches(h, s, dt, cfg)
            seeds = [s.x + dz for (dz, _), flag in zip(bs.directions, bs.admitted)
                     if flag]
        except (NoBranches, NoConvergence, np.linalg.LinAlgError):
            pass
        scale = max(1.0, float(np.max(np.abs(s.x))))
        for v in np.atleast_2d(s.kernel_basis):
            v = np.real(v)
            nv = np.linalg.norm(v)
            if nv == 0.0:
                continue
            v = v / nv
            seeds.append(s.x + 1e-2 * scale * v)
            seeds.append(s.x - 1e-2 * scale * v)
        if not seeds:
            continue
        # Taylor offsets carry O(||dz||^3) error and kernel offsets are blind
        # guesses; polish everything before tracking and drop duplicates
        pts = np.array(seeds, dtype=float)
        t_re = s.t_star + dt
        pts, _, okm = _newton_correct(h, pts, np.full(len(seeds), t_re), cfg)
        if not np.any(okm):
            continue
        pts = pts[okm]
        # Walk the survivors outward with doubling steps before handing them
        # to the tracker: a full tracker step from t*+dt lands where the
        # branches are still O(sqrt(dt)) apart and the corrector hops back to
        # the trivial family.
        t_cur, step = t_re, dt
        t_stop = s.t_star + 0.05 * (t_end - s.t_star)
        while t_cur < t_stop and len(pts):
            step *= 2.0
            t_cur = min(s.t_star + step, t_stop)
            pts, _, okw = _newton_correct(h, pts, np.full(len(pts), t_cur), cfg)
            pts = pts[okw]
        if not len(pts):
            continue
        uniq = dedup([p for p in pts], tol=1e-9)
        res = track_all(h, np.array([np.real(u) for u in uniq]), cfg,
                        t_from=t_cur, t_to=t_end, watch_det=True)
        for pr in res:
            extra.append(pr)
            enqueue(pr)
    return extra


def _fan_seeds(h: AmenityH, starts_pts, t0):
    """Split the rank-zero balanced sign starts into their Puiseux branches.

    At a balanced sign pattern the aggregate S = sum_l a_l z_l^p of the
    rank-one reference system vanishes, every Jacobian entry is zero, and two
    solution branches leave the start as sqrt(t): dz_j = t m_j/(q z_j^(q-1) v)
    with m = -dP/dt and v = +-sqrt((p t / q) sum_l z_l^(p-q) m_l). Returns the
    regular starts and the branch seeds at t0 (real branches only; a negative
    radicand puts the pair on a complex sheet the real tracker cannot carry).
    """
    p, q = h.p, h.q
    regular, fans, skipped = [], [], 0
    for z in starts_pts:
        z = np.real(np.asarray(z, dtype=complex)).astype(float)
        S = np.sum(h.A0 * h.mc0 ** (-h.alpha) * z ** p)
        if abs(S) > 1e-8 * np.sum(np.abs(z) ** p):
            regular.append(z)
            continue
        m = -np.real(np.asarray(h.jac_t(z.astype(complex), 0.0)))
        v2 = (p * t0 / q) * float(np.sum(z ** (p - q) * m))
        if v2 <= 0.0:
            skipped += 1
            continue
        v = math.sqrt(v2)
        for vv in (v, -v):
            fans.append(z + t0 * m / (q * z ** (q - 1) * vv))
    return regular, fans, skipped


def solve_amenity_homotopy(city: City, rat: Rational, cfg: TrackerConfig | None = None,
                           *, level="prop4", seed: int = 0, trace: bool = False,
                           threads: int = 1, harvest: bool = True,
                           harvest_budget: int = 64,
                           stats_out: dict | None = None) -> list[Equilibrium]:
    """Track the verified uniform-city start set along a linear parameter path.

    Real arithmetic throughout. Balanced sign starts sit on the rank-zero
    stratum of the reference system and are first split into their two
    square-root branches; paths that later flip the Jacobian determinant or
    stop at a rank-deficient point are handed to the bifurcation machinery and
    the emerging branches tracked onward. No completeness guarantee: the
    result is a (often large) subset of the equilibrium set.
    """
    cfg = cfg or TrackerConfig()
    _, starts = start_homogeneous(city, rat, level=level)
    h = AmenityH(city, rat, level=level)
    t0 = 1e-4
    regular, fans, fan_skipped = _fan_seeds(h, starts.points, t0)
    results = track_all(h, np.array(regular), cfg, trace=trace,
                        threads=threads, watch_det=True)
    if fans:
        from .tracker import _newton_correct
        pts = np.array(fans, dtype=float)
        pts, _, okm = _newton_correct(h, pts, np.full(len(fans), t0), cfg)
        if np.any(okm):
            results = results + track_all(h, pts[okm], cfg, trace=trace,
                                          threads=threads, t_from=t0,
                                          t_to=h.t_end, watch_det=True)
    watched: list = []
    extra = _harvest(h, results, cfg, harvest_budget, watched) if harvest else []
    everything = results + extra
    conv = [r.endpoint for r in everything if r.status == "converged"]
    reps = dedup([np.real(z) ** rat.q for z in conv], tol=1e-6)
    eqs = [_classify_endpoint(city, psi) for psi in reps]
    if stats_out is not None:
        stats_out.update(seed=seed, paths_total=len(everything),
                         path_counts=_path_stats(everything),
                         base_starts=len(starts.points), fan_seeds=len(fans),
                         fan_skipped=fan_skipped, restarts=len(extra),
                         singular_points=len(watched),
                         singular_locations=[(t, x.copy()) for t, x in watched],
                         endpoints_deduped=len(reps), path_results=everything)
    return eqs


def _classify_maclaurin(city: City, psi, kappa, sizes, tol_resid=TOL_RESID,
                        tol_box=TOL_BOX):
    """Classify against the truncated system itself, in its own scaling.

    The truncated exponential deviates from exp at the magnitudes the series
    run operates at, so residuals of the exact logit model would misclassify
    genuine roots of the polynomial truncation.
    """
    psi = np.asarray(psi)
    J = city.J
    s = np.ones(J) if sizes is None else np.asarray(sizes, dtype=float)
    W = weights(city)
    qprice = city.mc.copy()
    if not np.all(np.isfinite(psi.view(float))) or np.max(np.abs(psi)) > DIVERGE_CAP:
        return Equilibrium(psi=psi, x=np.full(J, np.nan), qprice=qprice,
                           status="divergent", residual=math.inf)
    if np.iscomplexobj(psi) and np.max(np.abs(psi.imag)) <= 1e-8:
        psi = psi.real.copy()
    n = kappa.shape[1] - 1
    powers = psi[None, :] ** np.arange(n + 1)[:, None]
    E = (kappa.T * powers).sum(axis=0)
    D = E.sum()
    if np.iscomplexobj(psi):
        if D == 0:
            return Equilibrium(psi=psi, x=np.full(J, np.nan), qprice=qprice,
                               status="singular-endpoint", residual=math.inf)
        resid = float(np.max(np.abs(psi - W @ ((city.L1 / s) * E) / D)))
        x = city.L1 * E / (s * D)
        return Equilibrium(psi=psi, x=x, qprice=qprice, status="complex",
                           residual=resid)
    if D == 0:
        return Equilibrium(psi=psi, x=np.full(J, np.nan), qprice=qprice,
                           status="singular-endpoint", residual=math.inf)
    fp = W @ ((city.L1 / s) * E) / D
    resid = float(np.max(np.abs(psi - fp)))
    x = city.L1 * E / (s * D)
    if not np.isfinite(resid) or resid > tol_resid:
        return Equilibrium(psi=psi, x=x, qprice=qprice,
                           status="singular-endpoint", residual=resid)
    inside = np.all(x >= -tol_box) and np.all(x <= city.L1 + tol_box)
    status = "proper" if inside else "improper"
    return Equilibrium(psi=psi, x=x, qprice=qprice, status=status, residual=resid)


def solve_maclaurin(city: City, n: int, cfg: TrackerConfig | None = None,
                    *, sizes=None, seed: int = 0, budget: int | None = None,
                    trace: bool = False, threads: int = 1,
                    stats_out: dict | None = None) -> list[Equilibrium]:
    """Total-degree enumeration of the order-n additive-utility truncation.

    All (n+1)^J paths from roots-of-unity starts; real nonnegative endpoints
    are normalized to group shares x with sum(s x) = L1 exactly.
    """
    cfg = cfg or TrackerConfig()
    P = build_maclaurin_system(city, n, sizes)
    G, starts = start_total_degree(P.degrees, budget=budget)
    gamma, phase = _unit_gamma(seed)
    h = TotalDegreeH(P.normalized(), G, gamma)
    results = track_all(h, starts, cfg, trace=trace, threads=threads)
    conv = [r.endpoint for r in results if r.status == "converged"]
    reps = dedup(conv, tol=1e-6)
    _, kappa = maclaurin_coefficients(city, n)
    eqs = [_classify_maclaurin(city, psi, kappa, sizes) for psi in reps]
    if stats_out is not None:
        stats_out.update(seed=seed, gamma_phase=phase, paths_total=len(results),
                         path_counts=_path_stats(results), endpoints_deduped=len(reps),
                         path_results=results)
    return eqs


from .elasticity import ElasticityH, solve_elasticity_homotopy  # noqa: E402

__all__ = [
    "TotalDegreeH", "ParamPathH", "AmenityH", "ElasticityH",
    "solve_total_degree", "solve_amenity_homotopy", "solve_maclaurin",
    "solve_elasticity_homotopy",
]
