"""Ready-made instances: the two-block closed form and the birth-death example.

Regimes are 0-based in code; in the docstrings regime ``i`` is 1-based to
match the usual notation b_i, a_i, beta_i.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .chains import BirthDeathSpec, GTable, birth_death_g
from .dynamics import Coefficient, RegimeModel, RhoFunction
from .partition import Partition, build_partition

__all__ = ["Example2", "example2", "example1_feasible", "RHO_H_EPS"]

# smoothing radius of the moment profile sqrt(r^2 + eps^2) - eps
RHO_H_EPS = 1.0


def example1_feasible(q12, q21, beta1, beta2):
    """Closed-form two-block verdict for Q^F = [[q11, q12], [q21, q22]].

    Feasible iff beta1 < -q11 and beta1 < beta2 < q22 beta1 / (-q11 - beta1),
    with q11 = -q12 and q22 = -q21.
    """
    q11, q22 = -float(q12), -float(q21)
    if not beta1 < -q11:
        return False
    return bool(beta1 < beta2 < q22 * beta1 / (-q11 - beta1))


@dataclass(frozen=True)
class Example2:
    """Birth-death switching between d = 1 linear diffusions.

    Regime 1 has beta_1 = -kappa1; regime i >= 2 has beta_i = kappa2 - 1/i,
    so sup beta = kappa2 is approached only in the tail.  Birth rates are
    b_1 then 2^i, death rates a_2 then 4^i, which makes the g-series
    summable.  Each regime runs dX = beta_i X dt + sqrt(2) dB, so the
    reflection coupling contracts rho(r) = r at rate beta_i.  For moments
    the smoothed profile rho_H(r) = sqrt(r^2 + 1) - 1 gives
    L rho_H <= theta_i rho_H + K_i with theta_i = beta_i and
    K_i = 1 + max(beta_i, 0).
    """

    kappa1: float = 1.0
    kappa2: float = 0.5
    T: int = 12
    a2: float = 2.0
    b1: float = 1.0

    def __post_init__(self):
        if min(self.kappa1, self.a2, self.b1) <= 0:
            raise ValueError("kappa1, a2 and b1 must be positive")
        if self.T < 3:
            raise ValueError("truncation T must be at least 3")

    @cached_property
    def spec(self) -> BirthDeathSpec:
        i = np.arange(1, self.T, dtype=float)          # birth from regime i
        birth = 2.0 ** i
        birth[0] = self.b1
        death = 4.0 ** (i + 1)                         # death from regime i+1
        death[0] = self.a2
        return BirthDeathSpec(birth, death)

    @cached_property
    def Q(self):
        return self.spec.generator()

    @cached_property
    def beta(self):
        i = np.arange(1, self.T + 1, dtype=float)
        b = self.kappa2 - 1.0 / i
        b[0] = -self.kappa1
        return b

    @property
    def thresholds(self):
        """Single interior threshold -kappa1, so that F_1 = {1}."""
        return (-float(self.kappa1),)

    @property
    def tail_sup(self):
        return float(self.kappa2)

    @property
    def tail_bounds(self):
        """Truncated regimes i > T only jump to neighbours, never into F_1."""
        return {(1, 0): 0.0}

    def partition(self) -> Partition:
        return build_partition(self.beta, self.thresholds, tail_sup=self.tail_sup)

    @cached_property
    def g(self) -> GTable:
        return birth_death_g(self.spec)

    def model(self) -> RegimeModel:
        drift = tuple(Coefficient.linear(float(b)) for b in self.beta)
        sigma = tuple(Coefficient.constant(float(np.sqrt(2.0))) for _ in self.beta)
        return RegimeModel(drift, sigma, Q=self.Q, beta=tuple(self.beta.tolist()),
                           theta=tuple(self.theta_H.tolist()), K=tuple(self.K_H.tolist()))

    @property
    def rho_H(self):
        return RhoFunction.linear().smoothed(RHO_H_EPS)

    @property
    def theta_H(self):
        return self.beta.copy()

    @property
    def K_H(self):
        return RHO_H_EPS * np.maximum(self.beta, 0.0) + 1.0 / RHO_H_EPS

    @property
    def moment_thresholds(self):
        return self.thresholds

    @property
    def tail_theta(self):
        return float(self.kappa2)

    @property
    def tail_K(self):
        return RHO_H_EPS * max(float(self.kappa2), 0.0) + 1.0 / RHO_H_EPS

    def threshold(self):
        return self.a2 * self.kappa1 / (self.b1 + self.kappa1)

    def to_dict(self):
        return {"kappa1": self.kappa1, "kappa2": self.kappa2, "T": self.T, "a2": self.a2, "b1": self.b1}


def example2(kappa1=1.0, kappa2=0.5, T=12, a2=2.0, b1=1.0) -> Example2:
    return Example2(float(kappa1), float(kappa2), int(T), float(a2), float(b1))
