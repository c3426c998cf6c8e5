"""M-matrix routes, xi-certificates, Dirichlet and Perron quantities."""

import numpy as np
import pytest

from rsergodic.chains import invariant_measure, validate_generator
from rsergodic.errors import (
    MeanConditionViolatedError,
    NotReversibleError,
    NotZPatternError,
    XiInfeasibleError,
)
from rsergodic.spectra import (
    dirichlet_lambda0,
    find_p0,
    find_xi,
    is_nonsingular_mmatrix,
    perron_eta,
    semipositive_lp,
    xi_certificate_from_vector,
)

from conftest import random_generator, random_reversible, random_z_matrix


class TestMMatrix:
    def test_positive_case(self):
        rep = is_nonsingular_mmatrix([[2.0, -1.0], [-1.0, 2.0]])
        assert rep.verdict
        np.testing.assert_allclose(rep.minors, [2.0, 3.0])
        assert rep.witness is not None and rep.witness.min() == pytest.approx(1.0)

    def test_negative_case(self):
        rep = is_nonsingular_mmatrix([[1.0, -2.0], [-2.0, 1.0]])
        assert not rep.verdict
        assert rep.minors[-1] == pytest.approx(-3.0)
        assert "order 2" in rep.failing

    def test_singular_m_matrix_is_not_nonsingular(self):
        assert not is_nonsingular_mmatrix([[1.0, -1.0], [-1.0, 1.0]]).verdict

    def test_not_z_pattern(self):
        with pytest.raises(NotZPatternError):
            is_nonsingular_mmatrix([[1.0, 0.5], [0.0, 1.0]])

    def test_identity(self):
        assert is_nonsingular_mmatrix(np.eye(5)).verdict

    def test_random_agreement(self, rng):
        for _ in range(100):
            rep = is_nonsingular_mmatrix(random_z_matrix(rng, int(rng.integers(1, 7))))
            assert len(set(rep.routes.values())) == 1

    def test_lp_witness_strict(self, rng):
        for _ in range(50):
            A = random_z_matrix(rng, 4)
            lp = semipositive_lp(A)
            if lp.feasible:
                assert np.all(A @ lp.x > 0) and np.all(lp.x >= 1.0 - 1e-12)

    def test_monotone_lp(self):
        A = np.array([[2.0, -1.0], [-1.0, 2.0]])
        inc = semipositive_lp(A, monotone="increasing").x
        dec = semipositive_lp(A, monotone="decreasing").x
        assert inc[0] <= inc[1] and dec[0] >= dec[1]


class TestXi:
    Q = validate_generator([[-1.0, 1.0], [2.0, -2.0]])

    def test_feasible(self):
        c = find_xi(self.Q, [-1.0, 0.5])
        assert np.all(c.lam < 0) and c.xi.min() == pytest.approx(1.0)
        assert c.recheck(self.Q, [-1.0, 0.5])
        assert c.C2 == pytest.approx(c.xi.max() / c.xi.min())
        assert c.alpha == pytest.approx(-c.lam.max() / c.xi.max())

    def test_infeasible_diagnostic(self):
        with pytest.raises(XiInfeasibleError) as exc:
            find_xi(self.Q, [-1.0, 1.5])
        d = exc.value.diagnostic
        assert d["minors"][-1] < 0 and len(d["farkas"]) == 2

    def test_constant_beta(self):
        c = find_xi(self.Q, [-1.0, -1.0])
        np.testing.assert_allclose(c.xi, [1.0, 1.0])
        assert c.alpha == pytest.approx(1.0)

    def test_from_vector_rejects(self):
        with pytest.raises(XiInfeasibleError):
            xi_certificate_from_vector(self.Q, [-1.0, 1.5], [1.0, 1.0])

    def test_xi_iff_mmatrix(self, rng):
        for _ in range(50):
            n = int(rng.integers(2, 6))
            Q = random_generator(rng, n)
            beta = rng.uniform(-2, 1, n)
            mm = is_nonsingular_mmatrix(-(Q.rates + np.diag(beta))).verdict
            try:
                find_xi(Q, beta)
                ok = True
            except XiInfeasibleError:
                ok = False
            assert ok == mm


class TestDirichlet:
    def test_symmetric_two_state(self):
        Q = validate_generator([[-1.0, 1.0], [1.0, -1.0]])
        r = dirichlet_lambda0(Q, [-1.0, -1.0])
        assert r.lambda0 == pytest.approx(1.0)
        np.testing.assert_allclose(r.f, [1.0, 1.0])

    def test_constant_shift(self, rng):
        Q, pi = random_reversible(rng, 5)
        assert dirichlet_lambda0(Q, np.full(5, -0.7), pi).lambda0 == pytest.approx(0.7)

    def test_rayleigh_quotient_oracle(self, rng):
        Q, pi = random_reversible(rng, 4)
        beta = rng.uniform(-1, 1, 4)
        r = dirichlet_lambda0(Q, beta, pi)
        q = Q.rates

        def D(f):
            d = 0.5 * np.sum(pi[:, None] * q * (f[None, :] - f[:, None]) ** 2) - np.sum(pi * beta * f * f)
            return d / np.sum(pi * f * f)

        assert D(r.f) == pytest.approx(r.lambda0, abs=1e-10)
        for _ in range(200):
            assert D(rng.normal(size=4)) >= r.lambda0 - 1e-10

    def test_not_reversible(self):
        Q = validate_generator([[-1, 1, 0], [0, -1, 1], [1, 0, -1.0]])
        with pytest.raises(NotReversibleError):
            dirichlet_lambda0(Q, [-1, -1, -1], pi=[0.5, 0.3, 0.2])


class TestPerron:
    def test_eta_at_zero(self, rng):
        Q = random_generator(rng, 4)
        assert perron_eta(Q, rng.normal(size=4), 0.0).eta == pytest.approx(0.0, abs=1e-12)

    def test_constant_beta_shift(self, rng):
        Q = random_generator(rng, 3)
        for p in (0.1, 0.5, 1.0):
            assert perron_eta(Q, [-1.0, -1.0, -1.0], p).eta == pytest.approx(p)

    def test_find_p0(self):
        Q = validate_generator([[-1.0, 1.0], [1.0, -1.0]])
        res = find_p0(Q, [-2.0, 1.0])
        assert res.mean_beta == pytest.approx(-0.5)
        assert 0 < res.p <= 0.5
        assert res.report.eta > 0
        assert np.all(res.eta_grid[res.grid <= res.p_star] > 0)

    def test_mean_condition(self):
        Q = validate_generator([[-1.0, 1.0], [1.0, -1.0]])
        with pytest.raises(MeanConditionViolatedError):
            find_p0(Q, [-1.0, 2.0])

    def test_slope_at_zero(self, rng):
        Q = random_generator(rng, 4)
        beta = rng.normal(size=4)
        mu = invariant_measure(Q)
        h = 1e-6
        assert (perron_eta(Q, beta, h).eta / h) == pytest.approx(-mu @ beta, abs=1e-4)
