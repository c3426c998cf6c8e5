"""Continuous-time Markov chains on a finite (or truncated) regime set.

Generators, invariant measures, the classical coupling of two copies of a
chain, coupling-time tails and the birth-death machinery used for countable
regime sets.  States are 0-based throughout.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.optimize import minimize_scalar
from scipy.sparse.csgraph import connected_components

from ._rng import STREAM_SCHEME, UniformBuffer, path_rng
from .errors import (
    DivergentSeriesError,
    NegativeRateError,
    NonConservativeError,
    NotAbsorbableError,
    ReducibleError,
    SingularSystemError,
)

__all__ = [
    "GeneratorMatrix",
    "validate_generator",
    "invariant_measure",
    "CouplingGenerator",
    "classical_coupling",
    "CouplingRate",
    "coupling_rate_theta",
    "BirthDeathSpec",
    "GTable",
    "birth_death_g",
    "CouplingTimeSamples",
    "simulate_coupling_time",
]


def _readonly(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class GeneratorMatrix:
    """A validated conservative, irreducible Q-matrix.

    ``rate_bound`` is sup_i q_i.  For a finite matrix it is the largest exit
    rate; for a truncation of a countable chain the caller may declare a
    larger bound that also covers the truncated-away states.
    """

    rates: np.ndarray
    rate_bound: float

    @property
    def size(self):
        return self.rates.shape[0]

    @property
    def exit_rates(self):
        return -np.diag(self.rates)

    def apply(self, f):
        """(Qf)(i) = sum_j q_ij f(j)."""
        return self.rates @ np.asarray(f, dtype=float)

    def to_dict(self):
        return {"rates": self.rates.tolist(), "rate_bound": self.rate_bound}


def _strongly_connected(adj):
    if adj.shape[0] == 1:
        return True
    n, _ = connected_components(adj, directed=True, connection="strong")
    return n == 1


def validate_generator(rates, rate_bound=None, atol=1e-9):
    """Validate a rate matrix and return a :class:`GeneratorMatrix`.

    Raises the error class of the first violated invariant (negative rate,
    non-zero row sum, reducibility); the message and the ``violations``
    attribute list all of them.  ``atol`` is scaled by max(1, max |q_ij|).
    Exact zeros mean "no edge" for the irreducibility test.
    """
    q = np.array(rates, dtype=float)
    if q.ndim != 2 or q.shape[0] != q.shape[1] or q.shape[0] == 0:
        raise ValueError(f"rate matrix must be square and non-empty, got shape {q.shape}")
    if not np.all(np.isfinite(q)):
        raise ValueError("rate matrix contains non-finite entries")
    n = q.shape[0]
    tol = atol * max(1.0, float(np.abs(q).max()))
    violations = []
    kinds = []

    off = q - np.diag(np.diag(q))
    neg = np.argwhere(off < 0)
    if neg.size:
        violations.append(f"negative off-diagonal rates at {[tuple(map(int, p)) for p in neg]}")
        kinds.append(NegativeRateError)
    sums = q.sum(axis=1)
    bad = np.flatnonzero(np.abs(sums) > tol)
    if bad.size:
        violations.append(f"row sums not zero at rows {bad.tolist()}: {sums[bad].tolist()}")
        kinds.append(NonConservativeError)
    if not _strongly_connected(off > 0):
        violations.append("not irreducible on positive off-diagonal rates")
        kinds.append(ReducibleError)
    if violations:
        raise kinds[0]("; ".join(violations), violations)

    # remove rounding noise from the diagonal so rows sum to zero exactly
    q[np.diag_indices(n)] = 0.0
    q[np.diag_indices(n)] = -q.sum(axis=1)
    max_exit = float(-np.diag(q).min()) if n else 0.0
    if rate_bound is None:
        rate_bound = max_exit
    elif rate_bound < max_exit:
        raise ValueError(f"declared rate bound {rate_bound} below largest exit rate {max_exit}")
    return GeneratorMatrix(_readonly(q), float(rate_bound))


def invariant_measure(Q: GeneratorMatrix, tol=1e-12):
    """Probability vector mu with mu Q = 0.

    Solved by replacing one balance equation with the normalization, followed
    by a step of iterative refinement.
    """
    q = Q.rates
    n = Q.size
    if n == 1:
        return np.ones(1)
    sv = np.linalg.svd(q, compute_uv=False)
    if sv[-2] <= 1e3 * np.finfo(float).eps * n * sv[0]:
        raise SingularSystemError(
            f"null space of Q is not one-dimensional (singular values {sv[-2]:.3e}, {sv[-1]:.3e})"
        )
    m = q.copy()
    m[:, -1] = 1.0
    rhs = np.zeros(n)
    rhs[-1] = 1.0
    lu = scipy.linalg.lu_factor(m.T)
    mu = scipy.linalg.lu_solve(lu, rhs)
    r = rhs - m.T @ mu
    mu = mu + scipy.linalg.lu_solve(lu, r)
    if np.any(mu <= 0):
        raise SingularSystemError(f"invariant vector not strictly positive: {mu}")
    mu = mu / mu.sum()
    return mu


# -- classical coupling -----------------------------------------------------

@dataclass(frozen=True)
class CouplingGenerator:
    """Generator of the classical coupling on S x S.

    Pair (k, l) is stored at flat index ``k * N + l``.  Off the diagonal the
    two coordinates jump independently; on the diagonal they jump together.
    """

    base: GeneratorMatrix
    rates: np.ndarray

    @property
    def n(self):
        return self.base.size

    def index(self, k, l):
        return k * self.n + l

    def pair(self, idx):
        return divmod(int(idx), self.n)

    @property
    def diagonal_states(self):
        return np.arange(self.n) * (self.n + 1)

    @property
    def off_diagonal_states(self):
        mask = np.ones(self.n * self.n, dtype=bool)
        mask[self.diagonal_states] = False
        return np.flatnonzero(mask)

    def apply(self, f):
        """(Q~ f)(k, l) for f given as an N x N array."""
        f = np.asarray(f, dtype=float)
        return (self.rates @ f.reshape(-1)).reshape(self.n, self.n)

    def restricted(self):
        """Sub-generator on the off-diagonal pairs (diagonal absorbing)."""
        off = self.off_diagonal_states
        return self.rates[np.ix_(off, off)], off


def classical_coupling(Q: GeneratorMatrix) -> CouplingGenerator:
    q = Q.rates
    n = Q.size
    rates = np.zeros((n * n, n * n))
    for k in range(n):
        for l in range(n):
            src = k * n + l
            for m in range(n):
                if k == l:
                    if m != k:
                        rates[src, m * n + m] += q[k, m]
                else:
                    if m != k:
                        rates[src, m * n + l] += q[k, m]
                    if m != l:
                        rates[src, k * n + m] += q[l, m]
    rates[np.diag_indices(n * n)] = -rates.sum(axis=1)
    return CouplingGenerator(Q, _readonly(rates))


@dataclass(frozen=True)
class CouplingRate:
    """Tail rate of the coupling time tau.

    ``theta`` is the largest rate with P(tau > t) <= exp(-theta t) for every
    t > 0 and every off-diagonal start.  ``spectral`` is minus the spectral
    abscissa of the restricted generator; it is the asymptotic rate but in
    general only satisfies P(tau > t) <= prefactor * exp(-spectral t).
    ``direct`` is the smallest one-jump absorption rate, the t -> 0 limit
    of the unit-constant rate.
    """

    theta: float
    spectral: float
    prefactor: float
    direct: float

    def effective(self):
        """(rate, constant) pair to use in bounds.

        The unit-constant rate when positive; the spectral rate with its
        prefactor when some start cannot be absorbed in one jump.
        """
        if self.theta > 0:
            return self.theta, 1.0
        return self.spectral, self.prefactor

    def tail_bound(self, t):
        rate, const = self.effective()
        return np.minimum(1.0, const * np.exp(-rate * np.asarray(t, dtype=float)))


def _reachable_to(adj, targets):
    seen = np.zeros(adj.shape[0], dtype=bool)
    seen[targets] = True
    frontier = list(targets)
    radj = adj.T
    while frontier:
        nxt = []
        for v in frontier:
            for u in np.flatnonzero(radj[v]):
                if not seen[u]:
                    seen[u] = True
                    nxt.append(u)
        frontier = nxt
    return seen


def coupling_rate_theta(C: CouplingGenerator, n_grid=200):
    """Exponential tail rate of the coupling time of the classical coupling.

    Survival functions S(t) = exp(R t) 1 of the restricted generator R are
    evaluated on a geometric grid in units of the spectral rate; the unit
    constant rate is inf_t -log max_s S_s(t) / t, including its t -> 0 limit
    (the direct absorption rate) and its t -> infinity limit (the spectral
    rate).
    """
    if C.n == 1:
        return CouplingRate(np.inf, np.inf, 1.0, np.inf)
    adj = C.rates > 0
    np.fill_diagonal(adj, False)
    ok = _reachable_to(adj, C.diagonal_states)
    if not ok.all():
        bad = [C.pair(i) for i in np.flatnonzero(~ok)]
        raise NotAbsorbableError(f"pairs that cannot reach the diagonal: {bad}")

    R, _ = C.restricted()
    spectral = float(-np.linalg.eigvals(R).real.max())
    absorb = -R.sum(axis=1)
    direct = float(absorb.min())

    ts = np.geomspace(1e-3, 40.0, n_grid) / spectral
    ones = np.ones(R.shape[0])
    surv = np.empty((n_grid, R.shape[0]))
    s = ones
    prev = 0.0
    for k, t in enumerate(ts):
        s = scipy.linalg.expm(R * (t - prev)) @ s
        surv[k] = s
        prev = t
    worst = np.clip(surv.max(axis=1), 1e-300, 1.0)
    rates = -np.log(worst) / ts
    k = int(np.argmin(rates))
    lo = ts[max(k - 1, 0)]
    hi = ts[min(k + 1, n_grid - 1)]

    def unit_rate(t):
        return -np.log(max(float((scipy.linalg.expm(R * t) @ ones).max()), 1e-300)) / t

    refined = minimize_scalar(unit_rate, bounds=(lo, hi), method="bounded",
                              options={"xatol": 1e-6 * hi})
    theta = min(direct, float(rates[k]), float(refined.fun), spectral)
    theta = max(theta, 0.0)

    prefactor = float(max(1.0, (surv * np.exp(spectral * ts)[:, None]).max()))
    return CouplingRate(theta, spectral, prefactor, direct)


# -- birth-death chains -----------------------------------------------------

@dataclass(frozen=True)
class BirthDeathSpec:
    """Birth-death chain truncated to T states.

    ``birth[k]`` is the rate k -> k+1 for k = 0..T-2 and ``death[k]`` the
    rate k+1 -> k, i.e. death[0] is a_2 in 1-based regime labels.  The truncated
    generator reflects at the top state.
    """

    birth: np.ndarray
    death: np.ndarray

    def __post_init__(self):
        b = _readonly(self.birth)
        a = _readonly(self.death)
        if b.ndim != 1 or b.shape != a.shape or b.size == 0:
            raise ValueError("birth and death must be 1-d arrays of equal length T-1 >= 1")
        if np.any(b <= 0) or np.any(a <= 0):
            raise ValueError("birth and death rates must be strictly positive")
        object.__setattr__(self, "birth", b)
        object.__setattr__(self, "death", a)

    @property
    def truncation(self):
        return self.birth.size + 1

    def generator(self, rate_bound=None) -> GeneratorMatrix:
        T = self.truncation
        q = np.zeros((T, T))
        idx = np.arange(T - 1)
        q[idx, idx + 1] = self.birth
        q[idx + 1, idx] = self.death
        q[np.diag_indices(T)] = -q.sum(axis=1)
        return validate_generator(q, rate_bound=rate_bound)

    def invariant_measure(self, normalize=True):
        """mu_1 = 1, mu_n = b_1...b_{n-1} / (a_2...a_n), from detailed balance."""
        mu = np.concatenate([[1.0], np.cumprod(self.birth / self.death)])
        return mu / mu.sum() if normalize else mu


@dataclass(frozen=True)
class GTable:
    """Bounded test function g on S x S with Q~ g <= -1 off the diagonal."""

    g: np.ndarray
    G: np.ndarray
    terms: np.ndarray
    tail_estimate: float
    drift: np.ndarray
    tolerance: float

    @property
    def norm(self):
        return float(self.g.max())

    @property
    def max_offdiag_drift(self):
        mask = ~np.eye(self.g.shape[0], dtype=bool)
        return float(self.drift[mask].max())

    @property
    def verified(self):
        return self.max_offdiag_drift <= -1.0 + self.tolerance

    def to_dict(self):
        return {
            "norm": self.norm,
            "G": self.G.tolist(),
            "tail_estimate": self.tail_estimate,
            "max_offdiag_drift": self.max_offdiag_drift,
            "verified": self.verified,
        }


def birth_death_g(spec: BirthDeathSpec, tail_rtol=1e-3) -> GTable:
    """Build g(i, j) = 1{i != j} G(max(i, j)) with G the partial sums
    G(j) = sum_{k<j} (1 / (mu_k b_k)) sum_{l>k} mu_l (inner sums truncated).

    The drift Q~ g is evaluated with the classical coupling of the truncated
    chain.  Summability of the untruncated series is judged from the ratios
    of the last terms; a non-contracting or non-negligible tail raises
    :class:`DivergentSeriesError`.
    """
    mu = spec.invariant_measure(normalize=False)
    T = spec.truncation
    b = spec.birth
    # suffix sums of mu beyond k, k = 0..T-2
    suffix = np.cumsum(mu[::-1])[::-1]
    terms = suffix[1:] / (mu[:-1] * b)
    G = np.concatenate([[0.0], np.cumsum(terms)])

    tail = 0.0
    if T >= 3:
        r_mu = mu[-1] / mu[-2]
        r_terms = terms[-1] / terms[-2]
        if r_mu >= 1.0 or r_terms >= 1.0:
            raise DivergentSeriesError(
                f"series not contracting at truncation: mu ratio {r_mu:.4g}, term ratio {r_terms:.4g}"
            )
        tail = terms[-1] * r_terms / (1.0 - r_terms)
        if tail > tail_rtol * G[-1]:
            raise DivergentSeriesError(
                f"tail estimate {tail:.4g} exceeds {tail_rtol} of partial sum {G[-1]:.4g}"
            )

    ii, jj = np.meshgrid(np.arange(T), np.arange(T), indexing="ij")
    g = np.where(ii == jj, 0.0, G[np.maximum(ii, jj)])
    Q = spec.generator()
    drift = classical_coupling(Q).apply(g)
    tol = 64 * np.finfo(float).eps * Q.rate_bound * max(1.0, G[-1]) + 1e-12
    return GTable(_readonly(g), _readonly(G), _readonly(terms), float(tail), _readonly(drift), float(tol))


# -- exact-event simulation -------------------------------------------------

class _JumpTable:
    """Embedded jump chain of a generator, for exact-event simulation."""

    def __init__(self, rates):
        rates = np.asarray(rates, dtype=float)
        off = rates - np.diag(np.diag(rates))
        self.exit = off.sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            p = off / self.exit[:, None]
        p[self.exit == 0] = 0.0
        self.cum = np.cumsum(p, axis=1)

    def path(self, start, horizon, buf, stop=None):
        """Jump times and states up to ``horizon`` (start time 0 included).

        Stops early on entering a state flagged in the boolean array ``stop``.
        """
        times = [0.0]
        states = [int(start)]
        t = 0.0
        s = int(start)
        while True:
            if stop is not None and stop[s]:
                break
            rate = self.exit[s]
            if rate <= 0:
                break
            t += -np.log(buf.next()) / rate
            if t > horizon:
                break
            row = self.cum[s]
            s = min(int(np.searchsorted(row, buf.next() * row[-1], side="right")), row.size - 1)
            times.append(t)
            states.append(s)
        return np.array(times), np.array(states, dtype=np.int64)


@dataclass(frozen=True)
class CouplingTimeSamples:
    """Coupling times tau of the classical coupling from one start pair."""

    tau: np.ndarray
    censored: np.ndarray
    start: tuple
    horizon: float
    seed: int
    stream_scheme: str = field(default=STREAM_SCHEME)

    @property
    def n(self):
        return self.tau.size

    @property
    def n_censored(self):
        return int(self.censored.sum())

    def mean(self):
        return float(self.tau.mean()), float(self.tau.std(ddof=1) / np.sqrt(self.n)) if self.n > 1 else 0.0

    def exp_moment(self, theta):
        """Sample mean and standard error of exp(theta tau).

        Censored paths enter at the horizon, which biases the mean down;
        check ``n_censored``.
        """
        v = np.exp(theta * self.tau)
        se = float(v.std(ddof=1) / np.sqrt(self.n)) if self.n > 1 else 0.0
        return float(v.mean()), se

    def survival(self, t):
        """Empirical P(tau > t) and its binomial standard error."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        p = (self.tau[None, :] > t[:, None]).mean(axis=1)
        return p, np.sqrt(p * (1 - p) / self.n)

    def to_csv(self):
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["path_id", "tau", "censored"])
        for k, (tau, c) in enumerate(zip(self.tau, self.censored)):
            w.writerow([k, repr(float(tau)), int(c)])
        return out.getvalue()


def simulate_coupling_time(C: CouplingGenerator, start, paths, seed, horizon=1e3):
    """Exact-event simulation of tau = inf{t: Lambda_t = Lambda'_t}.

    Paths still uncoupled at ``horizon`` are censored at the horizon.
    """
    i, j = (int(v) for v in start)
    if i == j:
        return CouplingTimeSamples(np.zeros(paths), np.zeros(paths, dtype=bool), (i, j), horizon, seed)
    table = _JumpTable(C.rates)
    stop = np.zeros(C.n * C.n, dtype=bool)
    stop[C.diagonal_states] = True
    tau = np.empty(paths)
    cens = np.zeros(paths, dtype=bool)
    s0 = C.index(i, j)
    for p in range(paths):
        buf = UniformBuffer(path_rng(seed, p))
        times, states = table.path(s0, horizon, buf, stop=stop)
        if stop[states[-1]]:
            tau[p] = times[-1]
        else:
            tau[p] = horizon
            cens[p] = True
    return CouplingTimeSamples(tau, cens, (i, j), float(horizon), int(seed))
