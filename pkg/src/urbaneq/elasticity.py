"""Continuation from fixed to price-elastic housing supply.

State is (u, v) = (log psi, log q) in R^(2J); the path parameter carries the
inverse supply elasticity from 0 (fixed supply, q = mc) up to 1/eta*. The
market block is kept in its fixed-point form v = Q(u, v; zeta), so the
tangent system factors through two half-size certificates: (I - Q_v) and the
Schur complement of the social block. Both are monitored; a failure of either
is exactly the singularity the bifurcation machinery wants to hear about.
"""
from __future__ import annotations

import math

import numpy as np

from .errors import BadStart, DomainError
from .model import (City, Equilibrium, DIVERGE_CAP, TOL_BOX, TOL_RESID,
                    social_residual, weights, x_from_psi)
from .tracker import FINAL_SNAP, Homotopy, PathResult, TrackerConfig

_IMAG_ADMIT = 1e-8


class ElasticityH(Homotopy):
    """Residual [F; v - Q] of the elastic-supply system along a zeta path.

    Scalar target: t runs 0 to zeta_to and zeta(t) = t uniformly. A per-location
    schedule instead runs t from 0 to 1 with zeta_j(t) = t * schedule_j.
    """

    t_start = 0.0
    is_real = True

    def __init__(self, city: City, zeta_to: float | None = None,
                 zeta_schedule=None):
        J = city.J
        self.city = city
        self.dimension = 2 * J
        if zeta_schedule is not None:
            self.scale = np.asarray(zeta_schedule, dtype=float)
            if self.scale.shape != (J,) or np.any(self.scale < 0):
                raise DomainError("zeta schedule must be J nonnegative values")
            self.t_end = 1.0
        else:
            if zeta_to is None or zeta_to < 0:
                raise DomainError("need a nonnegative zeta_to or a schedule")
            self.scale = np.ones(J)
            self.t_end = float(zeta_to)
        self.W = weights(city)
        self.A = city.A
        self.alpha = city.alpha
        self.logmc = np.log(city.mc)
        self.logc = np.log(city.c)
        self.r = (city.gamma1, city.gamma2)
        self.L = (city.L1, city.L2)

    def _zeta(self, t):
        return t * self.scale

    def _social(self, u, v):
        w1 = self.A * np.exp(self.r[0] * u - self.alpha * v)
        return w1, w1.sum()

    def _demand(self, u, v):
        """Per-group interaction weights, their sums, and total housing demand."""
        ws, Ss, Ns = [], [], []
        for Lg, rg in zip(self.L, self.r):
            wg = self.A * np.exp(rg * u - self.alpha * v)
            ws.append(wg)
            Ss.append(wg.sum())
            Ns.append(Lg * self.A * np.exp(rg * u))
        T = sum(N / S for N, S in zip(Ns, Ss))
        return ws, Ss, Ns, T

    def f_social(self, u, v):
        w1, S1 = self._social(u, v)
        return np.exp(u) * S1 - self.W @ w1

    def q_market(self, u, v, t):
        z = self._zeta(t)
        _, _, _, T = self._demand(u, v)
        G = np.log(T) - self.logc
        return (self.logmc + z * G) / (1 + self.alpha * z)

    def blocks(self, u, v, t):
        """All first-order pieces: F_u, F_v, Q_u, Q_v, Q_t and the G vector."""
        J = self.city.J
        z = self._zeta(t)
        eu = np.exp(u)
        w1, S1 = self._social(u, v)
        r1 = self.r[0]
        F_u = np.outer(eu, r1 * w1) - self.W * (r1 * w1)[None, :]
        F_u[np.diag_indices(J)] += eu * S1
        F_v = -self.alpha * w1[None, :] * (eu[:, None] - self.W)
        ws, Ss, Ns, T = self._demand(u, v)
        G_u = np.zeros((J, J))
        G_v = np.zeros((J, J))
        for wg, Sg, Ng, rg in zip(ws, Ss, Ns, self.r):
            sg = (Ng / Sg) / T
            G_u += sg[:, None] * rg * (np.eye(J) - (wg / Sg)[None, :])
            G_v += sg[:, None] * (self.alpha * wg / Sg)[None, :]
        lam = z / (1 + self.alpha * z)
        Q_u = lam[:, None] * G_u
        Q_v = lam[:, None] * G_v
        G = np.log(T) - self.logc
        dQdz = (G * (1 + self.alpha * z) - self.alpha * (self.logmc + z * G)) \
            / (1 + self.alpha * z) ** 2
        Q_t = self.scale * dQdz
        return F_u, F_v, Q_u, Q_v, Q_t

    def eval(self, x, t):
        J = self.city.J
        u, v = x[:J], x[J:]
        return np.concatenate([self.f_social(u, v), v - self.q_market(u, v, t)])

    def jac_x(self, x, t):
        J = self.city.J
        u, v = x[:J], x[J:]
        F_u, F_v, Q_u, Q_v, _ = self.blocks(u, v, t)
        top = np.hstack([F_u, F_v])
        bottom = np.hstack([-Q_u, np.eye(J) - Q_v])
        return np.vstack([top, bottom])

    def jac_t(self, x, t):
        J = self.city.J
        u, v = x[:J], x[J:]
        _, _, _, _, Q_t = self.blocks(u, v, t)
        return np.concatenate([np.zeros(J), -Q_t])

    def tangent(self, x, t):
        """Blockwise Davidenko direction and the two invertibility margins.

        Solves (I-Q_v) first, then the social-block Schur complement
        M = F_u + F_v (I-Q_v)^-1 Q_u; returns (dy/dt, smin(I-Q_v), smin(M)).
        """
        J = self.city.J
        u, v = x[:J], x[J:]
        F_u, F_v, Q_u, Q_v, Q_t = self.blocks(u, v, t)
        IQ = np.eye(J) - Q_v
        sv_iq = np.linalg.svd(IQ, compute_uv=False)
        rhs = np.linalg.solve(IQ, np.column_stack([Q_u, Q_t]))
        M = F_u + F_v @ rhs[:, :J]
        sv_m = np.linalg.svd(M, compute_uv=False)
        udot = np.linalg.solve(M, -F_v @ rhs[:, J])
        vdot = rhs[:, :J] @ udot + rhs[:, J]
        rel_iq = sv_iq[-1] / max(sv_iq[0], 1.0)
        rel_m = sv_m[-1] / max(sv_m[0], 1.0)
        return np.concatenate([udot, vdot]), rel_iq, rel_m


def _newton_full(h, y, t, cfg):
    """Damped Newton onto h(., t) = 0; returns (y, residual, converged)."""
    R = h.eval(y, t)
    rn = np.max(np.abs(R))
    if not np.isfinite(rn):
        return y, math.inf, False
    for _ in range(cfg.newton_max_iters):
        if rn <= cfg.newton_tol:
            return y, rn, True
        try:
            dy = np.linalg.solve(h.jac_x(y, t), -R)
        except np.linalg.LinAlgError:
            return y, rn, False
        lam = 1.0
        for _ in range(5):
            yt = y + lam * dy
            Rt = h.eval(yt, t)
            rt = np.max(np.abs(Rt))
            if np.isfinite(rt) and rt < rn:
                break
            lam *= 0.5
        else:
            return y, rn, rn <= cfg.newton_tol
        y, R, rn = yt, Rt, rt
    return y, rn, rn <= cfg.newton_tol


def _admit_start(psi):
    psi = np.asarray(psi)
    if np.iscomplexobj(psi):
        if np.max(np.abs(psi.imag)) >= _IMAG_ADMIT:
            raise BadStart("start field has a significant imaginary part")
        psi = psi.real.copy()
    psi = psi.astype(float)
    if not np.all(np.isfinite(psi)) or np.any(psi <= 0):
        raise BadStart("start field must be finite and positive")
    return psi


def _endpoint_equilibrium(city, h, y, t, tol_resid, tol_box):
    J = city.J
    with np.errstate(over="ignore"):
        psi = np.exp(y[:J])
        qp = np.exp(y[J:])
    if not np.all(np.isfinite(psi)) or not np.all(np.isfinite(qp)) \
            or max(psi.max(), qp.max()) > DIVERGE_CAP:
        return Equilibrium(psi=psi, x=np.full(J, np.nan), qprice=qp,
                           status="divergent", residual=math.inf)
    social = float(np.max(np.abs(social_residual(city, psi, qp))))
    market = float(np.max(np.abs(y[J:] - h.q_market(y[:J], y[J:], t))))
    resid = max(social, market)
    x = x_from_psi(city, psi)
    in_box = np.all(x >= -tol_box) and np.all(x <= 1 + tol_box) \
        and abs(x.sum() - 1.0) <= J * tol_box
    if resid <= tol_resid:
        status = "proper" if in_box else "improper"
    else:
        status = "singular-endpoint"
    return Equilibrium(psi=psi, x=x, qprice=qp, status=status, residual=resid)


def solve_elasticity_homotopy(city: City, eq0: Equilibrium,
                              cfg: TrackerConfig | None = None, *,
                              zeta_to: float | None = None,
                              zeta_schedule=None, trace: bool = False,
                              tol_resid: float = TOL_RESID,
                              tol_box: float = TOL_BOX):
    """Carry one fixed-supply equilibrium to its elastic-supply continuation.

    The start may be improper (negative shares) or complex with a negligible
    imaginary part; genuinely complex starts raise BadStart. Returns the path
    record and the endpoint equilibrium. A singular status reports where one
    of the two tangent certificates failed, for the bifurcation module.
    """
    cfg = cfg or TrackerConfig()
    psi0 = _admit_start(eq0.psi)
    if zeta_to is None and zeta_schedule is None:
        if not math.isfinite(city.eta):
            raise DomainError("city supply is fixed; give zeta_to or a schedule")
        zeta_to = 1.0 / city.eta
    h = ElasticityH(city, zeta_to=zeta_to, zeta_schedule=zeta_schedule)
    J = city.J
    y = np.concatenate([np.log(psi0), h.logmc.copy()])
    if h.t_end == 0.0:
        pr = PathResult(endpoint=y, status="converged", t_final=0.0,
                        min_abs_eig_seen=math.inf, steps_taken=0,
                        trace=[] if trace else None)
        return pr, _endpoint_equilibrium(city, h, y, 0.0, tol_resid, tol_box)

    y, r0, ok = _newton_full(h, y, 0.0, cfg)
    if not ok:
        raise BadStart(f"start does not polish onto the zeta=0 system ({r0:.3e})")

    t = 0.0
    t_to = h.t_end
    hstep = cfg.step_init
    succ = 0
    steps = 0
    minsv = math.inf
    status = None
    path_trace = [] if trace else None

    def monitor(yc, tc):
        nonlocal minsv, status
        try:
            dy, rel_iq, rel_m = h.tangent(yc, tc)
        except np.linalg.LinAlgError:
            status = "singular"
            return None
        minsv = min(minsv, rel_iq, rel_m)
        if min(rel_iq, rel_m) <= cfg.singular_eig_tol:
            status = "singular"
            return None
        return dy

    d0 = monitor(y, t)
    if path_trace is not None:
        path_trace.append((t, hstep, y.copy(), minsv))
    while status is None:
        r = t_to - t
        if r <= FINAL_SNAP:
            y, rn, ok = _newton_full(h, y, t_to, cfg)
            t = t_to
            status = "converged" if ok else "step-failure"
            break
        dt = min(hstep, r, 0.3 * r if r < cfg.endgame_radius else r)
        if d0 is None:
            d0 = monitor(y, t)
            if d0 is None:
                break
        try:
            k1 = d0
            k2, _, _ = h.tangent(y + 0.5 * dt * k1, t + 0.5 * dt)
            k3, _, _ = h.tangent(y + 0.5 * dt * k2, t + 0.5 * dt)
            k4, _, _ = h.tangent(y + dt * k3, t + dt)
            yp = y + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
            pred_ok = np.all(np.isfinite(yp))
        except np.linalg.LinAlgError:
            pred_ok = False
        if pred_ok:
            yc, rn, ok = _newton_full(h, yp, t + dt, cfg)
        else:
            ok = False
        if ok:
            y = yc
            t = t + dt
            steps += 1
            succ += 1
            if succ >= 3:
                hstep = min(hstep * 1.5, cfg.step_max)
                succ = 0
            if np.max(np.abs(y)) > math.log(cfg.diverge_cap):
                status = "diverged"
                break
            d0 = monitor(y, t)
            if path_trace is not None:
                path_trace.append((t, hstep, y.copy(), minsv))
        else:
            hstep *= 0.5
            succ = 0
            d0 = None
            if hstep < cfg.step_min:
                status = "step-failure"
                break

    pr = PathResult(endpoint=y, status=status, t_final=t,
                    min_abs_eig_seen=minsv, steps_taken=steps, trace=path_trace)
    eq = _endpoint_equilibrium(city, h, y, t, tol_resid, tol_box)
    return pr, eq
