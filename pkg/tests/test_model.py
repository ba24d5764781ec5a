"""City container, interaction weights, residuals, and classification."""
from __future__ import annotations

import math

import numpy as np
import pytest

from urbaneq.errors import DomainError, EtaInfinite, SingularWeights
from urbaneq.model import (
    City,
    classify,
    homogeneous_city,
    line_dist,
    market_residual,
    psi_from_x,
    social_residual,
    weights,
    x_from_psi,
)

E = math.e


def _line_city(J, xi, **kw):
    args = dict(
        J=J, L1=1.0, L2=0.0, A=np.ones(J), dist=line_dist(J), xi=xi,
        c=np.ones(J), mc=np.ones(J), eta=float("inf"),
        gamma1=2.0, gamma2=0.0, alpha=0.3,
    )
    args.update(kw)
    return City(**args)


def test_weights_zero_scope_is_all_ones():
    city = _line_city(4, xi=0.0)
    assert np.array_equal(weights(city), np.ones((4, 4)))


def test_weights_three_point_line():
    city = _line_city(3, xi=1.0)
    W = weights(city)
    row = np.array([1.0, math.exp(-1), math.exp(-2)])
    assert np.allclose(W[0], row, rtol=0, atol=1e-15)
    assert np.allclose(W[1], np.array([math.exp(-1), 1.0, math.exp(-1)]))
    assert np.all(np.diag(W) == 1.0)


def test_weights_scope_two():
    city = _line_city(4, xi=2.0)
    W = weights(city)
    assert W[0, 1] == pytest.approx(math.exp(-2), abs=1e-16)
    assert W[0, 3] == pytest.approx(math.exp(-6), abs=1e-16)


def test_psi_from_x_near_identity():
    # far-apart locations: off-diagonal weights are negligible
    city = _line_city(2, xi=50.0)
    x = np.array([0.2, 0.8])
    assert np.allclose(psi_from_x(city, x), x, atol=1e-20)


def test_psi_from_x_row_sum():
    city = _line_city(3, xi=1.0)
    psi = psi_from_x(city, np.full(3, 1.0 / 3.0))
    assert psi[0] == pytest.approx((1 + math.exp(-1) + math.exp(-2)) / 3.0)


def test_psi_from_x_rank_one():
    city = homogeneous_city(3, gamma1=2.0, alpha=0.3)
    rng = np.random.default_rng(7)
    x = rng.uniform(0.1, 0.9, 3)
    psi = psi_from_x(city, x)
    assert np.allclose(psi, E * x.sum(), rtol=1e-14)


def test_x_from_psi_round_trip():
    rng = np.random.default_rng(3)
    for J in (2, 3, 5):
        city = _line_city(J, xi=1.0)
        for _ in range(20):
            psi = rng.uniform(0.2, 2.0, J)
            back = psi_from_x(city, x_from_psi(city, psi))
            assert np.max(np.abs(back - psi) / psi) < 1e-12


def test_x_from_psi_singular_weights():
    city = homogeneous_city(3, gamma1=2.0, alpha=0.3)
    with pytest.raises(SingularWeights):
        x_from_psi(city, np.full(3, E))


def test_social_residual_symmetric_point_exact():
    city = homogeneous_city(4, gamma1=2.5, alpha=0.3)
    r = social_residual(city, np.full(4, E), np.ones(4))
    assert np.max(np.abs(r)) < 1e-14


def test_social_residual_rejects_nonpositive():
    city = _line_city(2, xi=1.0)
    with pytest.raises(DomainError):
        social_residual(city, np.array([1.0, 0.0]), np.ones(2))
    with pytest.raises(DomainError):
        social_residual(city, np.ones(2), np.array([1.0, -2.0]))


def test_social_residual_off_equilibrium():
    city = homogeneous_city(3, gamma1=2.0, alpha=0.3)
    psi = np.full(3, E)
    psi[1] += 0.1
    assert np.max(np.abs(social_residual(city, psi, np.ones(3)))) > 1e-4


def test_social_residual_permutation_equivariant():
    rng = np.random.default_rng(11)
    for _ in range(25):
        J = int(rng.integers(2, 5))
        dist = rng.uniform(0.2, 2.0, (J, J))
        dist = (dist + dist.T) / 2.0
        np.fill_diagonal(dist, 0.0)
        city = City(J=J, L1=1.0, L2=0.0, A=rng.uniform(0.5, 1.5, J),
                    dist=dist, xi=1.0, c=np.ones(J),
                    mc=rng.uniform(0.8, 1.2, J), eta=float("inf"),
                    gamma1=2.0, gamma2=0.0, alpha=0.3)
        psi = rng.uniform(0.5, 2.0, J)
        q = rng.uniform(0.5, 2.0, J)
        perm = rng.permutation(J)
        permuted = City(J=J, L1=1.0, L2=0.0, A=city.A[perm],
                        dist=dist[np.ix_(perm, perm)], xi=1.0,
                        c=np.ones(J), mc=city.mc[perm], eta=float("inf"),
                        gamma1=2.0, gamma2=0.0, alpha=0.3)
        r = social_residual(city, psi, q)
        rp = social_residual(permuted, psi[perm], q[perm])
        assert np.allclose(rp, r[perm], atol=1e-13)


def test_market_residual_requires_finite_eta():
    city = _line_city(2, xi=1.0)
    with pytest.raises(EtaInfinite):
        market_residual(city, np.ones(2), np.ones(2))


def test_market_residual_single_location_unit_price():
    # q^(alpha+eta) = L at q=1 with L=1: clearing holds exactly
    city = City(J=1, L1=1.0, L2=0.0, A=np.ones(1), dist=np.zeros((1, 1)),
                xi=1.0, c=np.ones(1), mc=np.ones(1), eta=1.0,
                gamma1=0.0, gamma2=0.0, alpha=0.3)
    r = market_residual(city, np.ones(1), np.ones(1))
    assert abs(r[0]) < 1e-15


def test_classify_statuses(fig2_city):
    # proper: a concentrated composition pushed through psi
    x = np.array([1e-9, 1e-9, 1.0 - 2e-9])
    eq = classify(fig2_city, psi_from_x(fig2_city, x), np.ones(3))
    assert eq.status in ("proper", "improper")
    assert abs(np.sum(eq.x.real) - 1.0) < 3 * 1e-6

    bad = np.array([1.2, -0.1, -0.1])
    eq_bad = classify(fig2_city, psi_from_x(fig2_city, bad), np.ones(3))
    assert eq_bad.status != "proper"

    huge = np.array([1e12, 1.0, 1.0])
    eq_div = classify(fig2_city, huge, np.ones(3))
    assert eq_div.status == "divergent"

    cplx = psi_from_x(fig2_city, np.array([0.3, 0.3, 0.4])).astype(complex)
    cplx[0] += 0.5j
    eq_cplx = classify(fig2_city, cplx, np.ones(3).astype(complex))
    assert eq_cplx.status == "complex"


def test_classify_is_total_on_singular_weights():
    city = homogeneous_city(3, gamma1=2.0, alpha=0.3)
    eq = classify(city, np.full(3, E), np.ones(3))
    assert eq.status in ("proper", "improper", "complex",
                        "singular-endpoint", "divergent")
