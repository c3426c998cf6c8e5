"""Generators, classical coupling, coupling-time rates and birth-death data."""

import numpy as np
import pytest
from scipy.linalg import expm, null_space

from rsergodic.chains import (
    BirthDeathSpec,
    birth_death_g,
    classical_coupling,
    coupling_rate_theta,
    invariant_measure,
    simulate_coupling_time,
    validate_generator,
)
from rsergodic.errors import (
    DivergentSeriesError,
    NegativeRateError,
    NonConservativeError,
    NotAbsorbableError,
    ReducibleError,
)
from rsergodic.examples import example2

from conftest import random_generator


class TestValidateGenerator:
    def test_valid_two_state(self):
        Q = validate_generator([[-1.0, 1.0], [2.0, -2.0]])
        assert Q.size == 2
        assert Q.rate_bound == 2.0
        np.testing.assert_array_equal(Q.exit_rates, [1.0, 2.0])

    def test_rates_read_only(self):
        Q = validate_generator([[-1.0, 1.0], [2.0, -2.0]])
        with pytest.raises(ValueError):
            Q.rates[0, 0] = 5.0

    def test_negative_rate_reported_first_with_all_violations(self):
        with pytest.raises(NegativeRateError) as exc:
            validate_generator([[0.5, -0.5], [1.0, 0.0]])
        v = exc.value.violations
        assert len(v) == 3                        # negative rate, row sum, reducibility
        assert v[0].startswith("negative")

    def test_non_conservative(self):
        with pytest.raises(NonConservativeError):
            validate_generator([[-1.0, 1.5], [2.0, -2.0]])

    def test_reducible(self):
        with pytest.raises(ReducibleError):
            validate_generator([[-1.0, 1.0, 0.0], [1.0, -1.0, 0.0], [0.0, 1.0, -1.0]])

    def test_declared_rate_bound_below_exit_rate(self):
        with pytest.raises(ValueError):
            validate_generator([[-1.0, 1.0], [2.0, -2.0]], rate_bound=1.5)

    def test_diagonal_rebalanced(self):
        Q = validate_generator([[-1.0 + 1e-12, 1.0], [2.0, -2.0]])
        np.testing.assert_array_equal(Q.rates.sum(axis=1), 0.0)

    def test_single_state(self):
        assert validate_generator([[0.0]]).size == 1


class TestInvariantMeasure:
    def test_two_state_closed_form(self):
        Q = validate_generator([[-1.0, 1.0], [2.0, -2.0]])
        np.testing.assert_allclose(invariant_measure(Q), [2 / 3, 1 / 3], rtol=1e-14)

    def test_against_null_space_oracle(self, rng):
        for _ in range(20):
            Q = random_generator(rng, int(rng.integers(2, 9)), density=0.5)
            v = null_space(Q.rates.T)[:, 0]
            np.testing.assert_allclose(invariant_measure(Q), v / v.sum(), atol=1e-12)

    def test_birth_death_product_formula(self):
        spec = BirthDeathSpec(np.array([1.0, 2.0, 3.0]), np.array([2.0, 1.0, 4.0]))
        np.testing.assert_allclose(invariant_measure(spec.generator()), spec.invariant_measure(), atol=1e-14)


class TestClassicalCoupling:
    def test_marginals(self, rng):
        Q = random_generator(rng, 4)
        C = classical_coupling(Q)
        f = rng.normal(size=4)
        F = np.add.outer(f, np.zeros(4))     # function of the first coordinate
        np.testing.assert_allclose(C.apply(F), np.add.outer(Q.apply(f), np.zeros(4)), atol=1e-12)
        G = np.add.outer(np.zeros(4), f)
        np.testing.assert_allclose(C.apply(G), np.add.outer(np.zeros(4), Q.apply(f)), atol=1e-12)

    def test_diagonal_absorbing(self, rng):
        C = classical_coupling(random_generator(rng, 3))
        for d in C.diagonal_states:
            row = C.rates[d]
            k, _ = C.pair(d)
            assert np.all(row[~np.isin(np.arange(9), C.diagonal_states)] == 0)

    def test_index_pair_roundtrip(self):
        C = classical_coupling(validate_generator([[-1, 1, 0], [0, -1, 1], [1, 0, -1.0]]))
        for k in range(3):
            for l in range(3):
                assert C.pair(C.index(k, l)) == (k, l)


class TestCouplingRate:
    def test_two_state_exact(self):
        C = classical_coupling(validate_generator([[-1.0, 1.0], [2.0, -2.0]]))
        r = coupling_rate_theta(C)
        assert r.theta == pytest.approx(3.0, rel=1e-9)
        assert r.effective() == (r.theta, 1.0)

    def test_three_cycle(self):
        C = classical_coupling(validate_generator([[-1, 1, 0], [0, -1, 1], [1, 0, -1.0]]))
        r = coupling_rate_theta(C)
        assert r.theta == pytest.approx(1.0, rel=1e-6)
        assert r.theta <= r.spectral + 1e-9

    def test_unit_constant_bound_holds_exactly(self, rng):
        for _ in range(10):
            C = classical_coupling(random_generator(rng, int(rng.integers(2, 5))))
            r = coupling_rate_theta(C)
            R, _ = C.restricted()
            for t in np.geomspace(1e-3, 20, 30) / r.theta:
                s = (expm(R * t) @ np.ones(R.shape[0])).max()
                assert s <= np.exp(-r.theta * t) * (1 + 1e-9)

    def test_single_regime(self):
        assert coupling_rate_theta(classical_coupling(validate_generator([[0.0]]))).theta == np.inf

    def test_not_absorbable(self):
        # deterministic rotation: two copies never meet
        Q = validate_generator([[-1, 1, 0], [0, -1, 1], [1, 0, -1.0]])
        C = classical_coupling(Q)
        assert coupling_rate_theta(C).theta > 0    # independent moves do meet
        from rsergodic.chains import CouplingGenerator
        rot = np.zeros((9, 9))
        for k in range(3):
            for l in range(3):
                if k != l:
                    rot[C.index(k, l), C.index((k + 1) % 3, (l + 1) % 3)] = 1.0
        for d in C.diagonal_states:
            k, _ = C.pair(d)
            rot[d, C.index((k + 1) % 3, (k + 1) % 3)] = 1.0
        np.fill_diagonal(rot, -rot.sum(axis=1))
        with pytest.raises(NotAbsorbableError):
            coupling_rate_theta(CouplingGenerator(Q, rot))


class TestCouplingTimeSimulation:
    def test_two_state_mean(self):
        C = classical_coupling(validate_generator([[-1.0, 2.0 - 1.0], [2.0, -2.0]]))
        s = simulate_coupling_time(C, (0, 1), 4000, seed=3)
        m, se = s.mean()
        assert abs(m - 1 / 3) < 4 * se
        assert s.n_censored == 0

    def test_seed_reproducible(self, rng):
        C = classical_coupling(random_generator(rng, 3))
        a = simulate_coupling_time(C, (0, 2), 100, seed=9)
        b = simulate_coupling_time(C, (0, 2), 100, seed=9)
        assert a.to_csv() == b.to_csv()
        assert a.to_csv().splitlines()[0] == "path_id,tau,censored"

    def test_censoring(self):
        C = classical_coupling(validate_generator([[-1e-3, 1e-3], [1e-3, -1e-3]]))
        s = simulate_coupling_time(C, (0, 1), 50, seed=1, horizon=1.0)
        assert s.n_censored > 40
        assert np.all(s.tau <= 1.0)

    def test_diagonal_start(self, rng):
        C = classical_coupling(random_generator(rng, 3))
        assert np.all(simulate_coupling_time(C, (1, 1), 10, seed=0).tau == 0)


class TestBirthDeathG:
    def test_example2_g(self):
        g = example2().g
        assert g.verified
        assert g.norm == pytest.approx(0.5536, abs=1e-4)
        assert g.max_offdiag_drift <= -1 + g.tolerance
        assert np.all(np.diag(g.g) == 0)

    def test_two_state_g(self):
        spec = BirthDeathSpec(np.array([2.0]), np.array([3.0]))
        g = birth_death_g(spec)
        # G(1) = mu_1 / (mu_0 b_0) = 1 / a; drift -(a + b) / a <= -1
        assert g.norm == pytest.approx(1.0 / 3.0, rel=1e-12)
        assert g.max_offdiag_drift == pytest.approx(-5.0 / 3.0, rel=1e-12)
        assert g.verified

    def test_divergent(self):
        spec = BirthDeathSpec(np.full(9, 2.0), np.full(9, 1.0))   # transient-like growth
        with pytest.raises(DivergentSeriesError):
            birth_death_g(spec)

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            BirthDeathSpec(np.array([1.0, 0.0]), np.array([1.0, 1.0]))
