"""Polynomial forms of the equilibrium conditions and start systems with known roots."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import (ApproximationInfeasible, DomainError, OverflowRisk,
                     PathBudgetExceeded)
from .model import City, homogeneous_city, weights

DEFAULT_PATH_BUDGET = 10_000_000
DEFAULT_MAX_DEN = 12

Term = tuple[complex, tuple[int, ...]]


@dataclass(frozen=True)
class Rational:
    p: int
    q: int

    def __post_init__(self):
        if self.q < 1:
            raise DomainError("denominator must be at least 1")
        if math.gcd(self.p, self.q) != 1:
            raise DomainError("p/q must be in lowest terms")

    @property
    def value(self) -> float:
        return self.p / self.q


def rational_approx(gamma: float, eps: float, max_den: int = DEFAULT_MAX_DEN) -> Rational:
    """Best rational p/q with q <= max_den and |gamma - p/q| < eps.

    Uses continued-fraction best approximation (Fraction.limit_denominator);
    raises ApproximationInfeasible when eps cannot be met under the cap.
    """
    if gamma < 0:
        raise DomainError("gamma must be nonnegative")
    if eps <= 0:
        raise DomainError("eps must be positive")
    if max_den < 1:
        raise DomainError("max_den must be at least 1")
    frac = Fraction(gamma).limit_denominator(max_den)
    if abs(gamma - float(frac)) >= eps:
        raise ApproximationInfeasible(
            f"no p/q with q <= {max_den} within {eps} of {gamma}")
    return Rational(frac.numerator, frac.denominator)


class PolySystem:
    """Sparse system of multivariate polynomials with complex coefficients.

    equations[i] is a list of (coefficient, exponent tuple) terms. Terms with
    equal exponent vectors are merged and zero coefficients dropped on
    construction. Evaluation is vectorized over batches of points; derivative
    systems are built lazily per variable.
    """

    def __init__(self, nvars: int, equations: list[list[Term]], meta: dict | None = None):
        self.nvars = int(nvars)
        self.equations = [self._normalize(eq) for eq in equations]
        self.meta = dict(meta) if meta else {}
        self.degrees = [max((sum(e) for _, e in eq), default=0) for eq in self.equations]
        self._compiled = None
        self._derivs: dict[int, PolySystem] = {}

    def _normalize(self, eq: list[Term]) -> list[Term]:
        acc: dict[tuple[int, ...], complex] = {}
        for coeff, expo in eq:
            expo = tuple(int(e) for e in expo)
            if len(expo) != self.nvars:
                raise DomainError("exponent vector length must equal nvars")
            if any(e < 0 for e in expo):
                raise DomainError("exponents must be nonnegative")
            acc[expo] = acc.get(expo, 0j) + complex(coeff)
        out = [(c, e) for e, c in sorted(acc.items()) if c != 0]
        return out

    @property
    def neq(self) -> int:
        return len(self.equations)

    def normalized(self) -> "PolySystem":
        """Same root set, each equation divided by its largest |coefficient|.

        Keeps start and target systems on a common scale inside a homotopy, so
        absolute Newton tolerances mean the same thing in both regimes.
        """
        eqs = []
        for eq in self.equations:
            scale = max((abs(c) for c, _ in eq), default=1.0)
            eqs.append([(c / scale, e) for c, e in eq])
        return PolySystem(self.nvars, eqs, meta=dict(self.meta, normalized=True))

    # ---- evaluation ----

    def _compile(self):
        if self._compiled is not None:
            return self._compiled
        coeffs, eq_starts, entries = [], [0], []
        for eq in self.equations:
            if not eq:
                coeffs.append(0j)
                entries.append([])
            for coeff, expo in eq:
                coeffs.append(coeff)
                entries.append([(v, e) for v, e in enumerate(expo) if e > 0])
            eq_starts.append(len(coeffs))
        uniq = sorted({e for ent in entries for _, e in ent})
        slot = {e: i for i, e in enumerate(uniq)}
        ent_term, ent_var, ent_slot = [], [], []
        for ti, ent in enumerate(entries):
            for v, e in ent:
                ent_term.append(ti)
                ent_var.append(v)
                ent_slot.append(slot[e])
        self._compiled = dict(
            coeffs=np.asarray(coeffs, dtype=complex),
            eq_starts=np.asarray(eq_starts[:-1], dtype=np.intp),
            ent_term=np.asarray(ent_term, dtype=np.intp),
            ent_var=np.asarray(ent_var, dtype=np.intp),
            ent_slot=np.asarray(ent_slot, dtype=np.intp),
            uniq=uniq,
        )
        return self._compiled

    def _power_table(self, Z: np.ndarray, uniq: list[int]) -> np.ndarray:
        """Stack of Z**e for each needed exponent e, shape (len(uniq), B, nvars)."""
        if not uniq:
            return np.empty((0,) + Z.shape, dtype=Z.dtype)
        out = np.empty((len(uniq),) + Z.shape, dtype=Z.dtype)
        if uniq[-1] <= 64:
            cur = np.ones_like(Z)
            k = 0
            for e in range(1, uniq[-1] + 1):
                cur = cur * Z
                if e == uniq[k]:
                    out[k] = cur
                    k += 1
        else:
            for i, e in enumerate(uniq):
                out[i] = Z ** e
        return out

    def eval_batch(self, Z: np.ndarray) -> np.ndarray:
        """Evaluate all equations at a batch of points, shape (B, nvars) -> (B, neq)."""
        c = self._compile()
        Z = np.asarray(Z)
        pows = self._power_table(Z, c["uniq"])
        tv = np.broadcast_to(c["coeffs"], (Z.shape[0], len(c["coeffs"]))).copy()
        ent_term, ent_var, ent_slot = c["ent_term"], c["ent_var"], c["ent_slot"]
        for i in range(len(ent_term)):
            tv[:, ent_term[i]] *= pows[ent_slot[i], :, ent_var[i]]
        return np.add.reduceat(tv, c["eq_starts"], axis=1)

    def eval(self, z: np.ndarray) -> np.ndarray:
        return self.eval_batch(np.asarray(z, dtype=complex)[None, :])[0]

    def derivative(self, var: int) -> "PolySystem":
        """Partial derivative system with respect to variable `var`."""
        if var not in self._derivs:
            eqs = []
            for eq in self.equations:
                deq = []
                for coeff, expo in eq:
                    e = expo[var]
                    if e > 0:
                        de = list(expo)
                        de[var] = e - 1
                        deq.append((coeff * e, tuple(de)))
                eqs.append(deq)
            self._derivs[var] = PolySystem(self.nvars, eqs, meta={"deriv_of": self.meta})
        return self._derivs[var]

    def jac_batch(self, Z: np.ndarray) -> np.ndarray:
        """Jacobian at a batch of points, (B, nvars) -> (B, neq, nvars)."""
        Z = np.asarray(Z)
        out = np.empty((Z.shape[0], self.neq, self.nvars), dtype=complex)
        for v in range(self.nvars):
            out[:, :, v] = self.derivative(v).eval_batch(Z)
        return out

    def jac(self, z: np.ndarray) -> np.ndarray:
        return self.jac_batch(np.asarray(z, dtype=complex)[None, :])[0]

    def eval_generic(self, z) -> list:
        """Plain-arithmetic evaluation; accepts any scalar type, dual numbers included."""
        out = []
        for eq in self.equations:
            acc = 0.0
            for coeff, expo in eq:
                term = coeff.real if coeff.imag == 0 else coeff
                for v, e in enumerate(expo):
                    if e > 0:
                        term = term * z[v] ** e
                acc = acc + term
            out.append(acc)
        return out

    # ---- serialization ----

    def to_text(self) -> str:
        """One line per term: eqIndex reCoeff imCoeff e1 ... eN, hex floats for coefficients."""
        lines = []
        for i, eq in enumerate(self.equations):
            for coeff, expo in eq:
                parts = [str(i), float(coeff.real).hex(), float(coeff.imag).hex()]
                parts.extend(str(e) for e in expo)
                lines.append(" ".join(parts))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "PolySystem":
        eqs: dict[int, list[Term]] = {}
        nvars = None
        for ln in text.splitlines():
            ln = ln.strip()
            if not ln or ln.startswith("#"):
                continue
            toks = ln.split()
            if len(toks) < 3:
                raise DomainError(f"malformed term line: {ln!r}")
            i = int(toks[0])
            coeff = complex(float.fromhex(toks[1]), float.fromhex(toks[2]))
            expo = tuple(int(t) for t in toks[3:])
            if nvars is None:
                nvars = len(expo)
            elif len(expo) != nvars:
                raise DomainError("inconsistent exponent vector lengths")
            eqs.setdefault(i, []).append((coeff, expo))
        if nvars is None:
            raise DomainError("empty polynomial system text")
        n_eq = max(eqs) + 1
        return cls(nvars, [eqs.get(i, []) for i in range(n_eq)])


@dataclass(frozen=True)
class StartSet:
    points: np.ndarray
    kind: str


def build_static_system(city: City, rat: Rational) -> PolySystem:
    """Cleared-denominator social conditions at eta=inf as polynomials in z (psi = z^q).

    Equation j: sum_l kappa_l z_l^p z_j^q - sum_k W_jk kappa_k z_k^p with
    kappa_l = A_l mc_l^(-alpha).
    """
    p, q = rat.p, rat.q
    J = city.J
    kappa = city.A * city.mc ** (-city.alpha)
    W = weights(city)
    eqs = []
    for j in range(J):
        terms: list[Term] = []
        for l in range(J):
            expo = [0] * J
            expo[l] += p
            expo[j] += q
            terms.append((kappa[l], tuple(expo)))
        for k in range(J):
            expo = [0] * J
            expo[k] = p
            terms.append((-W[j, k] * kappa[k], tuple(expo)))
        eqs.append(terms)
    return PolySystem(J, eqs, meta={"kind": "static", "p": p, "q": q})


def start_total_degree(degrees: list[int], budget: int | None = None
                       ) -> tuple[PolySystem, StartSet]:
    """Start system z_j^{d_j} - 1 = 0 and its full grid of roots of unity."""
    degrees = [int(d) for d in degrees]
    if any(d < 1 for d in degrees):
        raise DomainError("degrees must be positive")
    cap = DEFAULT_PATH_BUDGET if budget is None else int(budget)
    count = math.prod(degrees)
    if count > cap:
        raise PathBudgetExceeded(f"{count} start points exceed budget {cap}")
    J = len(degrees)
    eqs = []
    for j, d in enumerate(degrees):
        expo = [0] * J
        expo[j] = d
        eqs.append([(1.0 + 0j, tuple(expo)), (-1.0 + 0j, (0,) * J)])
    g = PolySystem(J, eqs, meta={"kind": "total-degree-start", "degrees": degrees})
    roots = [np.exp(2j * np.pi * np.arange(d) / d) for d in degrees]
    grids = np.meshgrid(*roots, indexing="ij")
    points = np.stack([gr.reshape(-1) for gr in grids], axis=-1)
    return g, StartSet(points=points, kind="unit-circle")


def start_homogeneous(city: City, rat: Rational, level: str | float = "prop4"
                      ) -> tuple[PolySystem, StartSet]:
    """Homogeneous-benchmark system and its residual-verified sign-pattern starts.

    level picks the constant weight w: 'prop4' -> e (so z^q = e on nondegenerate
    components), 'section2' -> J/e (so z^q = J/e), or any positive float. Even q
    admits all 2^J patterns +-w^(1/q); odd q applies the patterns formally and
    keeps only those passing the residual check.
    """
    J = city.J
    p, q = rat.p, rat.q
    if level == "prop4":
        w = math.e
    elif level == "section2":
        w = J / math.e
    else:
        w = float(level)
        if w <= 0:
            raise DomainError("weight level must be positive")
    base = homogeneous_city(J, city.gamma1, city.alpha, gamma2=city.gamma2,
                            L1=city.L1, L2=city.L2, level=w)
    system = build_static_system(base, rat)
    system.meta.update({"kind": "homogeneous", "level": w})
    r = w ** (1.0 / q)
    candidates = np.array(list(itertools.product((1.0, -1.0), repeat=J))) * r
    keep = []
    for z in candidates:
        resid = np.max(np.abs(system.eval(z.astype(complex))))
        if resid <= 1e-10:
            keep.append(z)
    points = np.array(keep) if keep else np.empty((0, J))
    return system, StartSet(points=points.astype(complex), kind="homogeneous-city")


def maclaurin_coefficients(city: City, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Intercepts a_j = A_j - alpha*mc_j and the (J, n+1) table kappa[l, m]:
    the coefficient of psi_l^m in the order-n truncation of exp(a_l + gamma*psi_l).
    """
    a = city.A - city.alpha * city.mc
    gamma = city.gamma1
    kappa = np.zeros((city.J, n + 1))
    for m in range(n + 1):
        tail = sum(a ** i / math.factorial(i) for i in range(n - m + 1))
        kappa[:, m] = gamma ** m / math.factorial(m) * tail
    return a, kappa


def build_maclaurin_system(city: City, n: int, sizes: np.ndarray | None = None) -> PolySystem:
    """Degree-(n+1) polynomial truncation of the additive-logit equilibrium in psi.

    The price term is folded into the intercept at eta=inf: a_j = A_j - alpha*mc_j.
    Location sizes default to 1; group-1 mass enters through L1/s_k weights.
    """
    if n < 1:
        raise DomainError("expansion order n must be at least 1")
    if n > 20:
        raise OverflowRisk("factorial coefficients above n=20 are too ill-conditioned")
    J = city.J
    s = np.ones(J) if sizes is None else np.asarray(sizes, dtype=float)
    if s.shape != (J,) or np.any(s <= 0):
        raise DomainError("sizes must be J positive values")
    W = weights(city)
    _, kappa = maclaurin_coefficients(city, n)
    eqs = []
    for j in range(J):
        terms: list[Term] = []
        for l in range(J):
            for m in range(n + 1):
                expo = [0] * J
                expo[l] += m
                expo[j] += 1
                terms.append((kappa[l, m], tuple(expo)))
        for k in range(J):
            wk = W[j, k] * city.L1 / s[k]
            for m in range(n + 1):
                expo = [0] * J
                expo[k] = m
                terms.append((-wk * kappa[k, m], tuple(expo)))
        eqs.append(terms)
    return PolySystem(J, eqs, meta={"kind": "maclaurin", "n": n})
