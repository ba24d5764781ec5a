"""Predictor-corrector path following with Jacobian diagnostics and deduplication."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import BadStart, DomainError

START_TOL = 1e-8
FINAL_SNAP = 1e-8

_ACTIVE, _CONVERGED, _DIVERGED, _SINGULAR, _STEPFAIL = range(5)
_STATUS_NAMES = {
    _CONVERGED: "converged",
    _DIVERGED: "diverged",
    _SINGULAR: "singular",
    _STEPFAIL: "step-failure",
}


@dataclass(frozen=True)
class TrackerConfig:
    step_init: float = 1e-3
    step_min: float = 1e-8
    step_max: float = 1e-1
    newton_tol: float = 1e-10
    newton_max_iters: int = 10
    diverge_cap: float = 1e10
    singular_eig_tol: float = 1e-8
    endgame_radius: float = 1e-2

    def __post_init__(self):
        if not (0 < self.step_min <= self.step_init <= self.step_max):
            raise DomainError("need 0 < step_min <= step_init <= step_max")
        if self.newton_tol <= 0:
            raise DomainError("newton_tol must be positive")


@dataclass
class PathResult:
    endpoint: np.ndarray
    status: str
    t_final: float
    min_abs_eig_seen: float
    steps_taken: int
    trace: list | None = None
    det_events: list = field(default_factory=list)


class Homotopy:
    """Capability base: residual, Jacobians, and orientation of a homotopy H(x, t).

    Subclasses set dimension, t_start, t_end and implement eval/jac_x/jac_t.
    Batched variants default to loops; performance-critical homotopies override
    them. eval_generic supports dual-number arguments for higher derivatives.
    """

    dimension: int = 0
    t_start: float = 1.0
    t_end: float = 0.0
    is_real: bool = False

    @property
    def dtype(self):
        return np.float64 if self.is_real else np.complex128

    def eval(self, x, t):
        raise NotImplementedError

    def jac_x(self, x, t):
        raise NotImplementedError

    def jac_t(self, x, t):
        raise NotImplementedError

    def eval_batch(self, X, t):
        return np.stack([self.eval(X[i], t[i]) for i in range(X.shape[0])])

    def jac_x_batch(self, X, t):
        return np.stack([self.jac_x(X[i], t[i]) for i in range(X.shape[0])])

    def jac_t_batch(self, X, t):
        return np.stack([self.jac_t(X[i], t[i]) for i in range(X.shape[0])])

    def eval_generic(self, x, t):
        raise NotImplementedError


def _inf_norm(R):
    return np.max(np.abs(R), axis=-1)


def _solve_many(Jx, rhs):
    """Batched linear solve with a per-item fallback; returns (solution, bad mask)."""
    B = Jx.shape[0]
    bad = np.zeros(B, dtype=bool)
    with np.errstate(all="ignore"):
        try:
            sol = np.linalg.solve(Jx, rhs[..., None])[..., 0]
        except np.linalg.LinAlgError:
            sol = np.zeros_like(rhs)
            for i in range(B):
                try:
                    sol[i] = np.linalg.solve(Jx[i], rhs[i])
                except np.linalg.LinAlgError:
                    bad[i] = True
    nonfin = ~np.isfinite(sol).all(axis=-1)
    bad |= nonfin
    sol[nonfin] = 0
    return sol, bad


def _svd_extremes(Jx):
    """Smallest and largest singular values for a stack of matrices."""
    with np.errstate(all="ignore"):
        sv = np.linalg.svd(Jx, compute_uv=False)
    sv = np.where(np.isfinite(sv), sv, np.inf)
    return sv[..., -1], np.where(np.isfinite(sv[..., 0]), sv[..., 0], np.inf)


def _newton_correct(h, X, t, cfg, active=None):
    """Damped Newton onto H(., t) = 0 for each row; returns (X, resid, converged)."""
    B = X.shape[0]
    R = h.eval_batch(X, t)
    rn = _inf_norm(R)
    rn = np.where(np.isfinite(rn), rn, np.inf)
    conv = rn <= cfg.newton_tol
    for _ in range(cfg.newton_max_iters):
        todo = np.where(~conv & np.isfinite(rn))[0]
        if todo.size == 0:
            break
        dX, bad = _solve_many(h.jac_x_batch(X[todo], t[todo]), -R[todo])
        lam = np.ones(todo.size)
        Xt = X[todo] + dX
        Rt = h.eval_batch(Xt, t[todo])
        rt = _inf_norm(Rt)
        rt = np.where(np.isfinite(rt), rt, np.inf)
        for _ in range(4):
            worse = np.where((rt > rn[todo]) & ~bad)[0]
            if worse.size == 0:
                break
            lam[worse] *= 0.5
            Xt[worse] = X[todo][worse] + lam[worse, None] * dX[worse]
            Rt[worse] = h.eval_batch(Xt[worse], t[todo][worse])
            rt[worse] = np.where(np.isfinite(_inf_norm(Rt[worse])),
                                 _inf_norm(Rt[worse]), np.inf)
        # a failed solve or a step that still worsens the residual ends the path's iteration
        hopeless = bad | (rt >= rn[todo]) & (rt > cfg.newton_tol)
        improved = ~hopeless
        idx = todo[improved]
        X[idx] = Xt[improved]
        R[idx] = Rt[improved]
        rn[idx] = rt[improved]
        conv[idx] = rn[idx] <= cfg.newton_tol
        if np.any(hopeless):
            rn[todo[hopeless]] = np.inf
    return X, rn, conv


def _track_batch(h, X0, t_from, t_to, cfg, trace=False, watch_det=False):
    """Advance every row of X0 from t_from to t_to; returns a list of PathResult."""
    X0 = np.atleast_2d(np.asarray(X0)).astype(h.dtype)
    B, n = X0.shape
    X = X0.copy()
    t = np.full(B, float(t_from))
    hstep = np.full(B, cfg.step_init)
    status = np.full(B, _ACTIVE, dtype=np.int8)
    minsv = np.full(B, np.inf)
    steps = np.zeros(B, dtype=np.int64)
    succ = np.zeros(B, dtype=np.int8)
    direction = 1.0 if t_to >= t_from else -1.0
    traces = [[] for _ in range(B)] if trace else None
    det_events = [[] for _ in range(B)]
    det_sign = np.zeros(B)
    prev_t = t.copy()

    def record(idx, smin):
        if traces is not None:
            for k, i in enumerate(idx):
                traces[i].append((float(t[i]), float(hstep[i]), X[i].copy(),
                                  float(smin[k])))

    # start-point screening: residual, singular Jacobian, initial diagnostics
    R0 = h.eval_batch(X, t)
    bad0 = ~np.isfinite(_inf_norm(R0)) | (_inf_norm(R0) > START_TOL)
    status[bad0] = _STEPFAIL
    ok = np.where(status == _ACTIVE)[0]
    if ok.size:
        J0 = h.jac_x_batch(X[ok], t[ok])
        smin, smax = _svd_extremes(J0)
        minsv[ok] = smin
        sing = smin <= cfg.singular_eig_tol * np.maximum(smax, 1.0)
        status[ok[sing]] = _SINGULAR
        if watch_det and h.is_real:
            reg = ok[~sing]
            if reg.size:
                sgn, _ = np.linalg.slogdet(h.jac_x_batch(X[reg], t[reg]))
                det_sign[reg] = sgn
        record(ok, minsv[ok])

    while True:
        act = np.where(status == _ACTIVE)[0]
        if act.size == 0:
            break
        r = np.abs(t_to - t[act])

        # snap finished paths onto t_to with a final correction
        fin = np.where(r <= FINAL_SNAP)[0]
        if fin.size:
            idx = act[fin]
            tt = np.full(idx.size, float(t_to))
            Xf, rn, conv = _newton_correct(h, X[idx].copy(), tt, cfg)
            X[idx] = Xf
            t[idx] = t_to
            status[idx] = np.where(conv, _CONVERGED, _STEPFAIL)
            act = np.where(status == _ACTIVE)[0]
            if act.size == 0:
                break
            r = np.abs(t_to - t[act])

        dt_mag = np.minimum(hstep[act], r)
        eg = r < cfg.endgame_radius
        dt_mag[eg] = np.minimum(dt_mag[eg], 0.3 * r[eg])
        dt = direction * dt_mag

        # RK4 predictor on the Davidenko field dx/dt = -Jx^-1 Jt
        def tangent(Xa, ta):
            Jx = h.jac_x_batch(Xa, ta)
            Jt = h.jac_t_batch(Xa, ta)
            return _solve_many(Jx, -Jt)

        k1, bad1 = tangent(X[act], t[act])
        # a singular Jacobian at the current point hands control back to the caller
        sing_now = bad1.copy()
        k2, bad2 = tangent(X[act] + 0.5 * dt[:, None] * k1, t[act] + 0.5 * dt)
        k3, bad3 = tangent(X[act] + 0.5 * dt[:, None] * k2, t[act] + 0.5 * dt)
        k4, bad4 = tangent(X[act] + dt[:, None] * k3, t[act] + dt)
        Xp = X[act] + (dt / 6.0)[:, None] * (k1 + 2 * k2 + 2 * k3 + k4)
        pred_bad = bad2 | bad3 | bad4 | ~np.isfinite(Xp).all(axis=1)

        t_new = t[act] + dt
        Xc, rn, conv = _newton_correct(h, Xp.copy(), t_new, cfg)
        accept = conv & ~pred_bad & ~sing_now

        # per-path bookkeeping
        idx_acc = act[accept]
        if idx_acc.size:
            prev_t[idx_acc] = t[idx_acc]
            X[idx_acc] = Xc[accept]
            t[idx_acc] = t_new[accept]
            steps[idx_acc] += 1
            succ[idx_acc] += 1
            grow = succ[idx_acc] >= 3
            hstep[idx_acc[grow]] = np.minimum(hstep[idx_acc[grow]] * 1.5, cfg.step_max)
            succ[idx_acc[grow]] = 0

            big = _inf_norm(X[idx_acc]) > cfg.diverge_cap
            status[idx_acc[big]] = _DIVERGED
            live = idx_acc[~big]
            if live.size:
                Jl = h.jac_x_batch(X[live], t[live])
                smin, smax = _svd_extremes(Jl)
                minsv[live] = np.minimum(minsv[live], smin)
                sing = smin <= cfg.singular_eig_tol * np.maximum(smax, 1.0)
                status[live[sing]] = _SINGULAR
                if watch_det and h.is_real:
                    reg = live[~sing]
                    if reg.size:
                        sgn, _ = np.linalg.slogdet(Jl[~sing])
                        flip = (det_sign[reg] != 0) & (sgn != 0) & (sgn != det_sign[reg])
                        for k, i in enumerate(reg):
                            if flip[k]:
                                det_events[i].append((float(prev_t[i]), float(t[i]),
                                                      X[i].copy()))
                        det_sign[reg] = sgn
                record(live, smin)

        idx_sng = act[sing_now & (status[act] == _ACTIVE)]
        status[idx_sng] = _SINGULAR

        rej = act[(~accept) & (status[act] == _ACTIVE)]
        if rej.size:
            hstep[rej] *= 0.5
            succ[rej] = 0
            dead = hstep[rej] < cfg.step_min
            status[rej[dead]] = _STEPFAIL

    out = []
    for i in range(B):
        out.append(PathResult(
            endpoint=X[i].copy(),
            status=_STATUS_NAMES.get(int(status[i]), "step-failure"),
            t_final=float(t[i]),
            min_abs_eig_seen=float(minsv[i]),
            steps_taken=int(steps[i]),
            trace=traces[i] if traces is not None else None,
            det_events=det_events[i],
        ))
    return out


def track(h: Homotopy, x0, t_from: float, t_to: float, cfg: TrackerConfig,
          trace: bool = False) -> PathResult:
    """Follow one path of H from (x0, t_from) to t_to.

    Raises BadStart when x0 does not satisfy the homotopy at t_from.
    """
    x0 = np.asarray(x0, dtype=h.dtype).reshape(1, -1)
    r0 = _inf_norm(h.eval_batch(x0, np.array([float(t_from)])))[0]
    if not np.isfinite(r0) or r0 > START_TOL:
        raise BadStart(f"start residual {r0:.3e} exceeds {START_TOL}")
    return _track_batch(h, x0, t_from, t_to, cfg, trace=trace)[0]


def track_all(h: Homotopy, starts, cfg: TrackerConfig, t_from: float | None = None,
              t_to: float | None = None, trace: bool = False, watch_det: bool = False,
              threads: int = 1) -> list[PathResult]:
    """Track every start point; one PathResult per start, in input order.

    Starts violating the residual precondition are reported as step-failure
    rather than aborting the batch.
    """
    pts = starts.points if hasattr(starts, "points") else np.asarray(starts)
    pts = np.atleast_2d(pts)
    t0 = h.t_start if t_from is None else float(t_from)
    t1 = h.t_end if t_to is None else float(t_to)
    if pts.shape[0] == 0:
        return []
    if threads > 1 and pts.shape[0] >= 2 * threads:
        from concurrent.futures import ProcessPoolExecutor
        chunks = np.array_split(np.arange(pts.shape[0]), threads)
        with ProcessPoolExecutor(max_workers=threads) as pool:
            futs = [pool.submit(_track_batch, h, pts[c], t0, t1, cfg, trace, watch_det)
                    for c in chunks if c.size]
            out = []
            for f in futs:
                out.extend(f.result())
        return out
    return _track_batch(h, pts, t0, t1, cfg, trace=trace, watch_det=watch_det)


def dedup(endpoints, tol: float = 1e-6) -> list:
    """Cluster near-identical vectors and return sorted representatives.

    Clustering is transitive under max-norm distance tol; each cluster is
    represented by its componentwise median; representatives are sorted
    lexicographically by (real, imag) coordinate pairs.
    """
    pts = [np.asarray(p).reshape(-1) for p in endpoints]
    if not pts:
        return []
    P = np.array(pts)
    N = P.shape[0]
    order = np.lexsort(tuple(P.imag[:, ::-1].T) + tuple(P.real[:, ::-1].T)) \
        if np.iscomplexobj(P) else np.lexsort(P[:, ::-1].T)
    parent = list(range(N))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    sorted_key = P.real[order, 0]
    for a in range(N):
        ia = order[a]
        hi = np.searchsorted(sorted_key, sorted_key[a] + tol, side="right")
        if hi <= a + 1:
            continue
        cand = order[a + 1:hi]
        close = cand[np.max(np.abs(P[cand] - P[ia]), axis=1) <= tol]
        for ib in close:
            ra, rb = find(ia), find(int(ib))
            if ra != rb:
                parent[rb] = ra
    clusters: dict[int, list[int]] = {}
    for i in range(N):
        clusters.setdefault(find(i), []).append(i)
    reps = []
    for members in clusters.values():
        M = P[members]
        if np.iscomplexobj(P):
            rep = np.median(M.real, axis=0) + 1j * np.median(M.imag, axis=0)
        else:
            rep = np.median(M, axis=0)
        reps.append(rep)

    def sort_key(v):
        if np.iscomplexobj(v):
            return tuple(x for pair in zip(v.real, v.imag) for x in pair)
        return tuple(v)

    reps.sort(key=sort_key)
    return reps


def jacobian_diagnostics(h: Homotopy, x, t: float):
    """(smallest singular value, condition number, determinant) of J_x at (x, t)."""
    J = np.asarray(h.jac_x(np.asarray(x, dtype=h.dtype), float(t)))
    sv = np.linalg.svd(J, compute_uv=False)
    smin, smax = float(sv[-1]), float(sv[0])
    cond = math.inf if smin == 0 else smax / smin
    sign, logabs = np.linalg.slogdet(J)
    if logabs == -math.inf:
        det = 0.0
    else:
        with np.errstate(over="ignore"):
            det = sign * np.exp(logabs)
    if np.iscomplexobj(J):
        det = complex(det)
    else:
        det = float(det.real if isinstance(det, complex) else det)
    return smin, cond, det
