"""Static city model: parameterization, equilibrium conditions, classification."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, EtaInfinite, SingularWeights

TOL_RESID = 1e-10
TOL_BOX = 1e-6
DIVERGE_CAP = 1e10

_COND_LIMIT = 1e14


@dataclass(frozen=True)
class City:
    """A city instance: locations, populations, preferences, supply side.

    eta may be math.inf (perfectly elastic supply, prices pinned at mc).
    weight_matrix, when given, overrides exp(-xi*dist); it is the only way to
    express the homogeneous benchmark whose interaction matrix has constant
    entries on the diagonal as well.
    """

    J: int
    L1: float
    L2: float
    A: np.ndarray
    dist: np.ndarray
    xi: float
    c: np.ndarray
    mc: np.ndarray
    eta: float
    gamma1: float
    gamma2: float
    alpha: float
    theta: float = 1.0
    weight_matrix: np.ndarray | None = None

    def __post_init__(self):
        J = self.J
        if J < 1:
            raise DomainError("J must be at least 1")
        if not self.alpha > 0:
            raise DomainError("alpha must be positive")
        if not self.eta > 0:
            raise DomainError("eta must be positive (math.inf allowed)")
        if self.xi < 0:
            raise DomainError("xi must be nonnegative")
        for name in ("A", "c", "mc"):
            v = np.asarray(getattr(self, name), dtype=float).reshape(-1)
            if v.size == 1:
                v = np.full(J, v[0])
            if v.size != J:
                raise DomainError(f"{name} must have length J={J}")
            if not np.all(v > 0):
                raise DomainError(f"{name} must be strictly positive")
            v.setflags(write=False)
            object.__setattr__(self, name, v)
        d = np.asarray(self.dist, dtype=float)
        if d.shape != (J, J):
            raise DomainError("dist must be a JxJ matrix")
        if not np.allclose(d, d.T, atol=1e-12):
            raise DomainError("dist must be symmetric")
        if not np.allclose(np.diag(d), 0.0, atol=1e-12):
            raise DomainError("dist must have a zero diagonal")
        d.setflags(write=False)
        object.__setattr__(self, "dist", d)
        if self.weight_matrix is not None:
            w = np.asarray(self.weight_matrix, dtype=float)
            if w.shape != (J, J):
                raise DomainError("weight_matrix must be JxJ")
            w.setflags(write=False)
            object.__setattr__(self, "weight_matrix", w)
        w = weights(self)
        offdiag = w.sum(axis=1) - np.diag(w)
        if np.any(np.diag(w) <= offdiag - 1e-12):
            warnings.warn("interaction weights are not strictly diagonally dominant; "
                          "the weight matrix may be singular", RuntimeWarning,
                          stacklevel=2)


def line_dist(J: int) -> np.ndarray:
    """Distance matrix d_jk = |j - k| for locations on a line."""
    idx = np.arange(J, dtype=float)
    return np.abs(idx[:, None] - idx[None, :])


def homogeneous_city(J: int, gamma1: float, alpha: float, *, gamma2: float = 0.0,
                     L1: float = 1.0, L2: float = 0.0, eta: float = math.inf,
                     level: float = math.e, theta: float = 1.0) -> City:
    """The homogeneous benchmark: unit amenities and costs, constant interaction weights.

    Every entry of the weight matrix equals `level` (diagonal included), which is
    deliberately rank one, so x_from_psi is singular for it by design.
    """
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return City(J=J, L1=L1, L2=L2,
                    A=np.ones(J), dist=np.zeros((J, J)), xi=0.0,
                    c=np.ones(J), mc=np.ones(J), eta=eta,
                    gamma1=gamma1, gamma2=gamma2, alpha=alpha, theta=theta,
                    weight_matrix=np.full((J, J), float(level)))


@dataclass
class Equilibrium:
    psi: np.ndarray
    x: np.ndarray
    qprice: np.ndarray
    status: str
    residual: float


@dataclass
class ResidualReport:
    social: np.ndarray
    market: np.ndarray


def weights(city: City) -> np.ndarray:
    """Interaction weight matrix exp(-xi*d_jk), or the explicit override."""
    if city.weight_matrix is not None:
        return city.weight_matrix
    return np.exp(-city.xi * city.dist)


def psi_from_x(city: City, x: np.ndarray) -> np.ndarray:
    """Social index from composition, psi = W x."""
    return weights(city) @ np.asarray(x)


def x_from_psi(city: City, psi: np.ndarray) -> np.ndarray:
    """Composition from social index via a direct linear solve of W x = psi."""
    w = weights(city)
    if np.linalg.cond(w) > _COND_LIMIT:
        raise SingularWeights("weight matrix condition number exceeds 1e14")
    return np.linalg.solve(w, np.asarray(psi))


def _check_positive(psi, qprice):
    psi = np.asarray(psi)
    qprice = np.asarray(qprice)
    if np.any(psi.real <= 0) or np.any(qprice.real <= 0):
        raise DomainError("psi and qprice must be strictly positive")
    return psi, qprice


def social_residual(city: City, psi: np.ndarray, qprice: np.ndarray) -> np.ndarray:
    """Residual of the social fixed point, psi_j minus the weighted choice shares."""
    psi, qprice = _check_positive(psi, qprice)
    w = city.A * qprice ** (-city.alpha) * psi ** city.gamma1
    return psi - (weights(city) @ w) / w.sum()


def market_residual(city: City, psi: np.ndarray, qprice: np.ndarray) -> np.ndarray:
    """Residual of floor-surface market clearing at finite supply elasticity."""
    if math.isinf(city.eta):
        raise EtaInfinite("market clearing is degenerate at eta=inf; prices equal mc")
    psi, qprice = _check_positive(psi, qprice)
    s1 = (city.A * qprice ** (-city.alpha) * psi ** city.gamma1).sum()
    s2 = (city.A * qprice ** (-city.alpha) * psi ** city.gamma2).sum()
    supply = (city.c / city.mc ** city.eta) * qprice ** (city.alpha + city.eta)
    demand = (city.L1 * city.A * psi ** city.gamma1 / s1
              + city.L2 * city.A * psi ** city.gamma2 / s2)
    return supply - demand


def residual_report(city: City, psi: np.ndarray, qprice: np.ndarray) -> ResidualReport:
    """Both residual blocks; the market block is q - mc when eta is infinite."""
    social = social_residual(city, psi, qprice)
    if math.isinf(city.eta):
        market = np.asarray(qprice) - city.mc
    else:
        market = market_residual(city, psi, qprice)
    return ResidualReport(social=social, market=market)


def _complex_residual_norm(city: City, psi: np.ndarray, qprice: np.ndarray) -> float:
    """Stacked residual max-norm using principal-branch powers; total over C^J."""
    psi = np.asarray(psi, dtype=complex)
    qprice = np.asarray(qprice, dtype=complex)
    with np.errstate(all="ignore"):
        wvec = city.A * qprice ** (-city.alpha) * psi ** city.gamma1
        social = psi - (weights(city) @ wvec) / wvec.sum()
        if math.isinf(city.eta):
            market = qprice - city.mc
        else:
            s1 = wvec.sum()
            s2 = (city.A * qprice ** (-city.alpha) * psi ** city.gamma2).sum()
            market = ((city.c / city.mc ** city.eta) * qprice ** (city.alpha + city.eta)
                      - city.L1 * city.A * psi ** city.gamma1 / s1
                      - city.L2 * city.A * psi ** city.gamma2 / s2)
    r = max(np.max(np.abs(social)), np.max(np.abs(market)))
    return float(r) if np.isfinite(r) else math.inf


def classify(city: City, psi: np.ndarray, qprice: np.ndarray,
             tol_resid: float = TOL_RESID, tol_box: float = TOL_BOX) -> Equilibrium:
    """Total classification of a candidate point into the generalized-equilibrium classes.

    Order of tests: divergent (coordinate cap), complex (imaginary part above
    tol_box), then residual and box tests on the real point. Real finite points
    that fail the residual tolerance land in 'singular-endpoint'.
    """
    psi = np.asarray(psi, dtype=complex)
    qprice = np.asarray(qprice, dtype=complex)
    finite = np.all(np.isfinite(psi)) and np.all(np.isfinite(qprice))
    if not finite or np.max(np.abs(psi)) > DIVERGE_CAP or np.max(np.abs(qprice)) > DIVERGE_CAP:
        return Equilibrium(psi=psi, x=np.full(city.J, np.nan), qprice=qprice,
                           status="divergent", residual=math.inf)
    if np.max(np.abs(psi.imag)) > tol_box or np.max(np.abs(qprice.imag)) > tol_box:
        with np.errstate(all="ignore"):
            try:
                x = x_from_psi(city, psi)
            except SingularWeights:
                x = np.full(city.J, np.nan, dtype=complex)
        return Equilibrium(psi=psi, x=x, qprice=qprice, status="complex",
                           residual=_complex_residual_norm(city, psi, qprice))
    psi_r = psi.real.copy()
    q_r = qprice.real.copy()
    resid = _complex_residual_norm(city, psi_r, q_r)
    try:
        x = x_from_psi(city, psi_r)
    except SingularWeights:
        return Equilibrium(psi=psi_r, x=np.full(city.J, np.nan), qprice=q_r,
                           status="singular-endpoint", residual=resid)
    if resid <= tol_resid:
        in_box = np.all(x >= -tol_box) and np.all(x <= 1 + tol_box)
        sums_to_one = abs(x.sum() - 1.0) <= city.J * tol_box
        status = "proper" if (in_box and sums_to_one) else "improper"
    else:
        status = "singular-endpoint"
    return Equilibrium(psi=psi_r, x=x, qprice=q_r, status=status, residual=resid)
