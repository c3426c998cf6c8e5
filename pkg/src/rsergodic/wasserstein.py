"""Composite costs on R^d x S, coupling upper bounds and a transport oracle."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from .dynamics import RhoFunction, TrajectoryBatch
from .errors import CurveTooNoisyError, InfeasibleMarginalsError

__all__ = [
    "CompositeCost",
    "CostCurve",
    "coupling_cost_curve",
    "DiscreteMeasure",
    "TransportResult",
    "exact_discrete_wasserstein",
    "DecayFit",
    "fit_decay_rate",
    "theorem_bound_curve",
]


def _dist(x, y, dim):
    d = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    return np.abs(d) if dim == 1 else np.linalg.norm(d, axis=-1)


@dataclass(frozen=True)
class CompositeCost:
    """sqrt(1{i != j} + rho(|x - y|)^p); p = 1 is the plain composite cost.

    For ``dim > 1`` positions carry a trailing axis of length ``dim``.
    """

    rho: RhoFunction
    p: float = 1.0
    dim: int = 1

    def __call__(self, x, i, y, j):
        r = self.rho(_dist(x, y, self.dim))
        return np.sqrt((np.asarray(i) != np.asarray(j)).astype(float) + r ** self.p)

    def matrix(self, mu: "DiscreteMeasure", nu: "DiscreteMeasure"):
        """Cost between every atom of mu and every atom of nu."""
        x = mu.x[:, None] if mu.x.ndim == 1 else mu.x[:, None, :]
        y = nu.x[None, :] if nu.x.ndim == 1 else nu.x[None, :, :]
        return self(x, mu.regime[:, None], y, nu.regime[None, :])


@dataclass(frozen=True)
class CostCurve:
    """Mean and standard error of a cost along a time grid.

    ``values`` optionally keeps the per-path samples (paths x times) for
    path-resampling bands.
    """

    times: np.ndarray
    mean: np.ndarray
    se: np.ndarray
    values: np.ndarray | None = None

    def to_csv(self, bound=None):
        head = "t,mean_cost,se" + (",bound" if bound is not None else "")
        rows = [head]
        for k, t in enumerate(self.times.tolist()):
            row = [repr(t), repr(float(self.mean[k])), repr(float(self.se[k]))]
            if bound is not None:
                row.append(repr(float(bound[k])))
            rows.append(",".join(row))
        return "\n".join(rows) + "\n"


def coupling_cost_curve(batch: TrajectoryBatch, cost: CompositeCost, times=None):
    """Monte Carlo E[cost((X_t, L_t), (Y_t, L'_t))] for a coupled batch.

    Every value is an upper-bound estimate of the Wasserstein distance
    between the two marginal laws at time t.  ``times`` must lie on the
    recorded grid.
    """
    if not batch.coupled:
        raise ValueError("coupling cost needs a coupled batch")
    if times is None:
        idx = np.arange(batch.times.size)
    else:
        times = np.atleast_1d(np.asarray(times, dtype=float))
        idx = np.searchsorted(batch.times, times - 1e-9 * batch.grid.dt)
        if np.any(idx >= batch.times.size) or np.any(np.abs(batch.times[np.minimum(idx, batch.times.size - 1)] - times) > 1e-9 * max(1.0, times.max())):
            raise ValueError("requested times are not on the recorded grid")
    vals = cost(batch.X[:, idx], batch.regime[:, idx], batch.Y[:, idx], batch.regime2[:, idx])
    n = vals.shape[0]
    se = vals.std(axis=0, ddof=1) / np.sqrt(n) if n > 1 else np.zeros(idx.size)
    return CostCurve(batch.times[idx].copy(), vals.mean(axis=0), se, vals)


# -- exact transport oracle -------------------------------------------------

@dataclass(frozen=True)
class DiscreteMeasure:
    x: np.ndarray
    regime: np.ndarray
    weights: np.ndarray

    @classmethod
    def empirical(cls, x, regime):
        x = np.asarray(x, dtype=float)
        n = x.shape[0]
        return cls(x, np.asarray(regime, dtype=np.int64), np.full(n, 1.0 / n))

    @property
    def size(self):
        return self.weights.size


@dataclass(frozen=True)
class TransportResult:
    value: float
    plan: np.ndarray


def exact_discrete_wasserstein(mu: DiscreteMeasure, nu: DiscreteMeasure, cost: CompositeCost,
                               max_atoms=200, atol=1e-9):
    """Optimal transport cost between two finite-support measures (LP)."""
    for name, m in (("mu", mu), ("nu", nu)):
        w = np.asarray(m.weights, dtype=float)
        if np.any(w < 0) or abs(w.sum() - 1.0) > atol:
            raise InfeasibleMarginalsError(f"{name} weights must be non-negative and sum to 1 (sum {w.sum():.12g})")
        if m.size > max_atoms:
            raise ValueError(f"{name} has {m.size} atoms, limit {max_atoms}")
    C = cost.matrix(mu, nu)
    n, m = C.shape
    # row sums = mu, column sums = nu; drop one redundant equation
    rows = sp.kron(sp.eye(n), np.ones((1, m)), format="csr")
    cols = sp.kron(np.ones((1, n)), sp.eye(m), format="csr")
    A = sp.vstack([rows, cols[:-1]], format="csr")
    b = np.concatenate([mu.weights, nu.weights[:-1]])
    res = linprog(C.ravel(), A_eq=A, b_eq=b, bounds=(0, None), method="highs")
    if res.status != 0:
        raise InfeasibleMarginalsError(f"transport LP failed: {res.message}")
    plan = res.x.reshape(n, m)
    return TransportResult(float(C.ravel() @ res.x), plan)


# -- decay fit --------------------------------------------------------------

@dataclass(frozen=True)
class DecayFit:
    """log mean = log C - alpha t on the fit window."""

    C: float
    alpha: float
    residual: float
    window: tuple
    band: tuple
    n_points: int

    @property
    def decaying(self):
        return self.alpha > 0

    def to_dict(self):
        return {"C": self.C, "alpha": self.alpha, "residual": self.residual, "window": list(self.window),
                "band": list(self.band), "n_points": self.n_points, "decaying": self.decaying}


def fit_decay_rate(curve: CostCurve, window=None, n_boot=200, seed=0, level=0.95):
    """Least squares of log(mean) on t over points with mean > 3 SE.

    The band comes from resampling paths when the curve keeps per-path
    values, otherwise from a parametric resample of the means.
    """
    t = np.asarray(curve.times, dtype=float)
    m = np.asarray(curve.mean, dtype=float)
    se = np.asarray(curve.se, dtype=float)
    use = (m > 0) & (m > 3 * se)
    if window is not None:
        use &= (t >= window[0]) & (t <= window[1])
    if use.sum() < 5:
        raise CurveTooNoisyError(f"only {int(use.sum())} points with mean > 3 SE (need 5)")
    tt, lm = t[use], np.log(m[use])
    slope, icpt = np.polyfit(tt, lm, 1)
    resid = float(np.sqrt(np.mean((lm - (icpt + slope * tt)) ** 2)))
    rng = np.random.default_rng(seed)
    rates = []
    for _ in range(n_boot):
        if curve.values is not None:
            v = curve.values[rng.integers(0, curve.values.shape[0], curve.values.shape[0])]
            mb = v.mean(axis=0)[use]
        else:
            mb = m[use] + se[use] * rng.standard_normal(use.sum())
        if np.all(mb > 0):
            rates.append(-np.polyfit(tt, np.log(mb), 1)[0])
    a = (1 - level) / 2
    band = (float(np.quantile(rates, a)), float(np.quantile(rates, 1 - a))) if rates else (np.nan, np.nan)
    return DecayFit(float(np.exp(icpt)), float(-slope), resid, (float(tt[0]), float(tt[-1])), band, int(use.sum()))


def theorem_bound_curve(cert, x, times, y=None):
    """Closed-form Wasserstein bound of a certificate along ``times``.

    Stationary form 2C(sqrt(3 + rho(|x|)) + C) exp(-a t); with ``y`` the
    two-point form 2C sqrt(3 + rho(|x|) + rho(|y|)) exp(-a t).  (C, a) are
    the certificate's (C~, alpha~) or (C~_1, alpha_p).
    """
    return cert.bound(np.asarray(times, dtype=float), x, y)
