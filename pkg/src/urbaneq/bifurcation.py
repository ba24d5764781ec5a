"""Singular-point location and branch enumeration on homotopy paths.

A determinant zero-crossing (or a tracker singular stop) pins an interval; a
Newton iteration on t drives det(J_x) to zero along the corrected path, using
the trace identity d(det)/dt = det * tr(J^-1 dJ/dt) so the update never forms
the determinant itself. Branches out of the singular point come from the
degree-2 Taylor system in dz, solved by its own small total-degree homotopy
and filtered to the Jacobian kernel.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import second_partials
from .errors import NoBranches, NoConvergence, NotSingular
from .polysys import PolySystem, start_total_degree
from .tracker import Homotopy, TrackerConfig, _newton_correct, dedup, track_all

DET_TOL = 1e-12
KERNEL_SV_TOL = 1e-8
MAX_LOCATE_ITERS = 50


@dataclass(frozen=True)
class SingularPoint:
    x: np.ndarray
    t_star: float
    kernel_basis: np.ndarray
    det_value: float


@dataclass(frozen=True)
class BranchSet:
    directions: list
    admitted: list


def _correct_x(h, x, t, iters=12, tol=1e-12):
    """Pull x back onto H(., t) = 0 by least-squares Newton steps."""
    for _ in range(iters):
        R = h.eval(x, t)
        rn = np.max(np.abs(R))
        if not np.isfinite(rn):
            return x, math.inf
        if rn <= tol:
            return x, rn
        J = h.jac_x(x, t)
        dx = np.linalg.lstsq(J, -R, rcond=None)[0]
        x = x + dx
    return x, np.max(np.abs(h.eval(x, t)))


def _rel_det(J):
    """|det| relative to the product of the non-small singular values.

    Equals the product of singular values below 1e-8 * smax, so it is 1 at a
    healthy point and collapses through 1e-12 as rank deficiency sets in.
    """
    sv = np.linalg.svd(J, compute_uv=False)
    if sv[0] == 0 or not np.isfinite(sv[0]):
        return 0.0
    small = sv[sv < KERNEL_SV_TOL * sv[0]]
    if small.size == 0:
        return 1.0
    return float(np.prod(small / sv[0]))


def _trace_ratio(h, x, t):
    """tr(J^-1 dJ/dt) along the corrected path, i.e. d(log det)/dt."""
    J = h.jac_x(x, t)
    Jt = h.jac_t(x, t)
    xdot = np.linalg.lstsq(J, -Jt, rcond=None)[0]
    _, _, _, Hxx, Hxt, _ = second_partials(h.eval_generic, x, t)
    dJdt = np.einsum("jkm,m->jk", Hxx, xdot) + Hxt
    sol = np.linalg.lstsq(J, dJdt, rcond=None)[0]
    return np.trace(sol)


def locate_singular(h: Homotopy, x_near, t_near: float,
                    alarm_tol: float | None = 1e-3,
                    bracket: tuple[float, float] | None = None) -> SingularPoint:
    """Newton-in-t search for the nearby point where J_x loses rank.

    alarm_tol guards the precondition (relative smallest singular value at the
    query point); pass None to skip when calling from a determinant-sign-flip
    bracket, where the query point itself may still be healthy. An optional
    bracket enables sign-bisection recovery when a Newton step escapes it.
    """
    x = np.asarray(x_near, dtype=h.dtype).copy()
    t = float(t_near)
    x, r0 = _correct_x(h, x, t)
    J = h.jac_x(x, t)
    sv = np.linalg.svd(J, compute_uv=False)
    if alarm_tol is not None and sv[-1] > alarm_tol * max(sv[0], 1.0):
        raise NotSingular(f"relative smallest singular value {sv[-1] / max(sv[0], 1.0):.3e}")

    lo, hi = (None, None) if bracket is None else (min(bracket), max(bracket))
    sign_lo = None
    if bracket is not None and h.is_real:
        xl, _ = _correct_x(h, x.copy(), lo)
        sign_lo, _ = np.linalg.slogdet(h.jac_x(xl, lo))

    for _ in range(MAX_LOCATE_ITERS):
        J = h.jac_x(x, t)
        rd = _rel_det(J)
        if rd < DET_TOL:
            _, s_all, Vh = np.linalg.svd(J)
            keep = s_all < KERNEL_SV_TOL
            if not np.any(keep):
                raise NotSingular("determinant collapsed without a kernel vector")
            kernel = Vh[keep].conj()
            sign, logabs = np.linalg.slogdet(J)
            with np.errstate(over="ignore"):
                det = 0.0 if logabs == -math.inf else sign * math.exp(min(logabs, 700.0))
            if not np.iscomplexobj(J):
                det = float(np.real(det))
            return SingularPoint(x=x, t_star=t, kernel_basis=np.atleast_2d(kernel),
                                 det_value=det)
        tr = _trace_ratio(h, x, t)
        if tr == 0 or not np.isfinite(abs(tr)):
            raise NoConvergence("determinant derivative vanished before convergence")
        t_next = t + float(np.real(-1.0 / tr))
        if lo is not None and not (lo <= t_next <= hi) and h.is_real and sign_lo is not None:
            # Newton left the bracket: bisect on the determinant sign instead
            mid = 0.5 * (lo + hi)
            xm, _ = _correct_x(h, x.copy(), mid)
            sign_m, _ = np.linalg.slogdet(h.jac_x(xm, mid))
            if sign_m == sign_lo:
                lo = mid
            else:
                hi = mid
            t_next = 0.5 * (lo + hi)
            x = xm
        t = t_next
        x, _ = _correct_x(h, x, t)
    raise NoConvergence(f"no determinant zero within {MAX_LOCATE_ITERS} iterations")


def second_order_system(h: Homotopy, s: SingularPoint, dt: float) -> PolySystem:
    """Degree-2 Taylor system in the offset dz at (s.x, s.t_star + dt).

    Constant block carries H + H_t dt + (1/2) H_tt dt^2, the linear block
    (H_z + H_zt dt), and the quadratic block (1/2) H_zz; second partials come
    from nested forward-mode differentiation.
    """
    x = np.asarray(s.x)
    n = x.shape[0]
    val, Jx, Jt, Hxx, Hxt, Htt = second_partials(h.eval_generic, list(x), s.t_star)
    eqs = []
    zero = tuple([0] * n)
    for j in range(n):
        terms = [(val[j] + Jt[j] * dt + 0.5 * Htt[j] * dt * dt, zero)]
        for k in range(n):
            e = [0] * n
            e[k] = 1
            terms.append((Jx[j, k] + Hxt[j, k] * dt, tuple(e)))
        for k in range(n):
            for l in range(k, n):
                e = [0] * n
                e[k] += 1
                e[l] += 1
                coeff = 0.5 * Hxx[j, k, l] if k == l \
                    else 0.5 * (Hxx[j, k, l] + Hxx[j, l, k])
                terms.append((coeff, tuple(e)))
        eqs.append(terms)
    return PolySystem(n, eqs, meta={"kind": "branch-quadratic", "dt": dt,
                                    "t_star": s.t_star})


def enumerate_branches(h: Homotopy, s: SingularPoint, dt: float,
                       cfg: TrackerConfig, kernel_tol: float | None = None) -> BranchSet:
    """Real kernel-aligned roots of the quadratic Taylor system, Newton-validated.

    Solves the degree-2 system by a small total-degree homotopy (at most 2^n
    paths), keeps real roots whose component orthogonal to the kernel is below
    kernel_tol (default 1e-6 * ||dz||), and validates each by a full Newton
    correction of H at (s.x + dz, t_star + dt). Raises NoBranches when nothing
    survives: an isolated singularity or turning point.
    """
    from .homotopies import TotalDegreeH
    Q = second_order_system(h, s, dt)
    G, starts = start_total_degree(Q.degrees)
    gamma = complex(math.cos(1.0), math.sin(1.0))
    results = track_all(TotalDegreeH(Q.normalized(), G, gamma), starts, cfg)
    cands = dedup([r.endpoint for r in results if r.status == "converged"],
                  tol=1e-9)
    K = np.atleast_2d(s.kernel_basis)
    directions = []
    admitted = []
    t_new = s.t_star + dt
    for dz in cands:
        if np.max(np.abs(np.imag(dz))) > 1e-8 * (1.0 + np.max(np.abs(dz))):
            continue
        dz = np.real(dz)
        if h.is_real:
            dz = dz.astype(float)
        ktol = kernel_tol if kernel_tol is not None else 1e-6 * max(np.linalg.norm(dz), 1e-30)
        proj = dz - K.conj().T @ (K @ dz)
        in_kernel = np.linalg.norm(proj) <= ktol
        qres = np.max(np.abs(Q.eval(dz.astype(complex))))
        cand = (s.x + dz).astype(h.dtype).reshape(1, -1)
        _, rn, conv = _newton_correct(h, cand.copy(), np.array([t_new]), cfg)
        ok = bool(in_kernel and qres <= 1e-8 and conv[0])
        directions.append((dz, dt))
        admitted.append(ok)
    if not any(admitted):
        raise NoBranches("no real kernel-aligned branch validated")
    return BranchSet(directions=directions, admitted=admitted)
