"""Matrix-analytic criteria.

Nonsingular M-matrix tests, the positive-vector feasibility problem
(Q + diag beta) xi << 0, the Dirichlet principal eigenvalue of reversible
chains and the Perron eigenvalue of Q + p diag beta.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .chains import GeneratorMatrix, invariant_measure
from .errors import (
    MeanConditionViolatedError,
    NonSimplePeripheralEigenvalueError,
    NotReversibleError,
    NotZPatternError,
    RouteDisagreementError,
    XiInfeasibleError,
)

__all__ = [
    "LPWitness",
    "semipositive_lp",
    "MMatrixReport",
    "is_nonsingular_mmatrix",
    "XiCertificate",
    "xi_certificate_from_vector",
    "find_xi",
    "DirichletReport",
    "dirichlet_lambda0",
    "SpectralReport",
    "perron_eta",
    "P0Result",
    "find_p0",
]


def _scale(A):
    return max(1.0, float(np.abs(A).max())) if A.size else 1.0


# -- semipositivity LP ------------------------------------------------------

@dataclass(frozen=True)
class LPWitness:
    """Result of max eps s.t. A x >= eps, x >= eps, 0 <= x <= 1.

    ``x`` is rescaled so that min x = 1.  ``farkas`` holds the dual weights
    y >= 0 on the rows of A; when the margin is not positive they certify
    infeasibility (y^T A <= 0 with y != 0).
    """

    margin: float
    x: np.ndarray | None
    farkas: np.ndarray
    status: str

    @property
    def feasible(self):
        return self.x is not None


def semipositive_lp(A, monotone=None, tol=1e-9):
    """Search for x >> 0 with A x >> 0.

    ``monotone`` may be ``"increasing"`` or ``"decreasing"`` to add the
    order constraints x_i <= x_{i+1} (resp. >=).  The LP margin is only a
    hint: a witness is returned only if A x > 0 and x > 0 hold strictly when
    re-evaluated in floating point.
    """
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    # variables (x_1..x_n, eps); minimize -eps
    c = np.zeros(n + 1)
    c[-1] = -1.0
    rows = [np.hstack([-A, np.ones((n, 1))]), np.hstack([-np.eye(n), np.ones((n, 1))])]
    if monotone is not None and n > 1:
        d = np.zeros((n - 1, n))
        idx = np.arange(n - 1)
        sign = 1.0 if monotone == "increasing" else -1.0
        d[idx, idx] = sign
        d[idx, idx + 1] = -sign
        rows.append(np.hstack([d, np.zeros((n - 1, 1))]))
    A_ub = np.vstack(rows)
    b_ub = np.zeros(A_ub.shape[0])
    bounds = [(0.0, 1.0)] * n + [(None, 1.0)]
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, bounds=bounds, method="highs")
    if res.status != 0:
        return LPWitness(-np.inf, None, np.zeros(n), res.message)
    margin = float(res.x[-1])
    farkas = np.abs(np.asarray(res.ineqlin.marginals[:n]))
    x = res.x[:n]
    ok = margin > tol * _scale(A) and np.all(x > 0) and np.all(A @ x > 0)
    if not ok:
        return LPWitness(margin, None, farkas, "no strict witness")
    return LPWitness(margin, x / x.min(), farkas, "ok")


# -- M-matrix test ----------------------------------------------------------

@dataclass(frozen=True)
class MMatrixReport:
    verdict: bool
    minors: np.ndarray
    eigenvalues: np.ndarray
    witness: np.ndarray | None
    lp_margin: float
    farkas: np.ndarray
    routes: dict
    failing: str | None

    def to_dict(self):
        return {
            "verdict": self.verdict,
            "minors": self.minors.tolist(),
            "eigenvalues_real": self.eigenvalues.real.tolist(),
            "eigenvalues_imag": self.eigenvalues.imag.tolist(),
            "witness": None if self.witness is None else self.witness.tolist(),
            "lp_margin": self.lp_margin,
            "farkas": self.farkas.tolist(),
            "routes": dict(self.routes),
            "failing": self.failing,
        }


def check_z_pattern(A, atol=0.0):
    A = np.asarray(A, dtype=float)
    off = A - np.diag(np.diag(A))
    bad = np.argwhere(off > atol * _scale(A))
    if bad.size:
        raise NotZPatternError(f"positive off-diagonal entries at {[tuple(map(int, p)) for p in bad]}")


def is_nonsingular_mmatrix(A, atol=0.0):
    """Decide whether the Z-matrix A is a nonsingular M-matrix.

    Three routes must agree: positivity of the leading principal minors,
    positivity of the real parts of all eigenvalues, and feasibility of the
    semipositivity LP.
    """
    A = np.array(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"square matrix required, got shape {A.shape}")
    check_z_pattern(A, atol)
    n = A.shape[0]
    minors = np.array([np.linalg.det(A[:k, :k]) for k in range(1, n + 1)])
    eig = np.linalg.eigvals(A)
    lp = semipositive_lp(A)
    routes = {
        "minors": bool(np.all(minors > 0)),
        "eigenvalues": bool(eig.real.min() > 0),
        "lp": lp.feasible,
    }
    verdicts = set(routes.values())
    if len(verdicts) != 1:
        raise RouteDisagreementError(f"M-matrix routes disagree: {routes}", routes)
    verdict = routes["minors"]
    failing = None
    if not verdict:
        k = int(np.flatnonzero(minors <= 0)[0]) + 1
        failing = f"leading principal minor of order {k} is {minors[k - 1]:.6g}"
    return MMatrixReport(verdict, minors, eig, lp.x, lp.margin, lp.farkas, routes, failing)


# -- xi certificate ---------------------------------------------------------

@dataclass(frozen=True)
class XiCertificate:
    """Positive xi with lambda = (Q + diag beta) xi << 0.

    C2 = xi_max / xi_min and alpha = -lambda_max / xi_max.
    """

    xi: np.ndarray
    lam: np.ndarray
    C2: float
    alpha: float
    margin: float = np.nan

    def recheck(self, Q, beta):
        """Recompute lambda from scratch and confirm the strict inequalities."""
        lam = Q.apply(self.xi) + np.asarray(beta, dtype=float) * self.xi
        return bool(np.all(self.xi > 0) and np.all(lam < 0))

    def to_dict(self):
        return {
            "xi": self.xi.tolist(),
            "lambda": self.lam.tolist(),
            "C2": self.C2,
            "alpha": self.alpha,
            "margin": self.margin,
        }


def xi_certificate_from_vector(Q: GeneratorMatrix, beta, xi, margin=np.nan):
    xi = np.asarray(xi, dtype=float)
    lam = Q.apply(xi) + np.asarray(beta, dtype=float) * xi
    if not (np.all(xi > 0) and np.all(lam < 0)):
        raise XiInfeasibleError("vector does not satisfy xi >> 0 and (Q + diag beta) xi << 0",
                                {"xi": xi.tolist(), "lambda": lam.tolist()})
    return XiCertificate(xi, lam, float(xi.max() / xi.min()), float(-lam.max() / xi.max()), float(margin))


def find_xi(Q: GeneratorMatrix, beta, monotone=None):
    """Find xi >> 0 (normalized to min xi = 1) with (Q + diag beta) xi << 0.

    Raises :class:`XiInfeasibleError` whose diagnostic carries the Farkas
    weights and the leading minors of -(Q + diag beta).
    """
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (Q.size,):
        raise ValueError(f"beta must have length {Q.size}")
    A = -(Q.rates + np.diag(beta))
    lp = semipositive_lp(A, monotone=monotone)
    if not lp.feasible:
        n = Q.size
        minors = [float(np.linalg.det(A[:k, :k])) for k in range(1, n + 1)]
        raise XiInfeasibleError(
            "no xi >> 0 with (Q + diag beta) xi << 0",
            {"lp_margin": lp.margin, "farkas": lp.farkas.tolist(), "minors": minors, "status": lp.status},
        )
    return xi_certificate_from_vector(Q, beta, lp.x, lp.margin)


# -- Dirichlet principal eigenvalue -----------------------------------------

@dataclass(frozen=True)
class DirichletReport:
    """lambda_0 and its minimizer f (positive, unit norm in L^2(pi))."""

    lambda0: float
    f: np.ndarray
    eigenvalues: np.ndarray
    residual: float

    def to_dict(self):
        return {
            "lambda0": self.lambda0,
            "f": self.f.tolist(),
            "eigenvalues": self.eigenvalues.tolist(),
            "residual": self.residual,
        }


def dirichlet_lambda0(Q: GeneratorMatrix, beta, pi=None, rtol=1e-10):
    """Principal eigenvalue of the form D(f) = 1/2 sum pi_i q_ij (f_j - f_i)^2
    - sum pi_i beta_i f_i^2 on L^2(pi).

    ``pi`` defaults to the invariant measure; it must satisfy detailed
    balance with Q.
    """
    beta = np.asarray(beta, dtype=float)
    pi = invariant_measure(Q) if pi is None else np.asarray(pi, dtype=float)
    q = Q.rates
    flux = pi[:, None] * q
    gap = np.abs(flux - flux.T).max()
    if gap > rtol * max(1.0, np.abs(flux).max()):
        raise NotReversibleError(f"detailed balance fails by {gap:.3e}")
    A = -(q + np.diag(beta))
    s = np.sqrt(pi)
    S = s[:, None] * A / s[None, :]
    S = 0.5 * (S + S.T)
    w, v = np.linalg.eigh(S)
    f = v[:, 0] / s
    f = f * np.sign(f[np.argmax(np.abs(f))])
    f = f / np.sqrt(np.sum(pi * f * f))
    lam0 = float(w[0])
    res = Q.apply(f) + beta * f + lam0 * f
    resid = float(np.abs(res).max())
    tol = rtol * max(1.0, np.abs(A).max()) * np.abs(f).max()
    if resid > tol:
        raise NotReversibleError(f"eigen-identity residual {resid:.3e} exceeds {tol:.3e}")
    return DirichletReport(lam0, f, w, resid)


# -- Perron eigenvalue of Q + p diag beta -----------------------------------

@dataclass(frozen=True)
class SpectralReport:
    p: float
    eta: float
    xi: np.ndarray
    C3: float
    residual: float

    def to_dict(self):
        return {"p": self.p, "eta_p": self.eta, "xi_p": self.xi.tolist(), "C3": self.C3,
                "residual": self.residual}


def perron_eta(Q: GeneratorMatrix, beta, p, rtol=1e-10):
    """eta_p = -max Re spec(Q + p diag beta) and its positive eigenvector."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must lie in [0, 1], got {p}")
    beta = np.asarray(beta, dtype=float)
    Qp = Q.rates + p * np.diag(beta)
    w, v = np.linalg.eig(Qp)
    order = np.argsort(-w.real)
    lead = w[order[0]]
    scale = _scale(Qp)
    if w.size > 1 and abs(w[order[1]] - lead) <= 1e3 * np.finfo(float).eps * scale * w.size:
        raise NonSimplePeripheralEigenvalueError(
            f"leading eigenvalues {lead} and {w[order[1]]} are not separated"
        )
    if abs(lead.imag) > rtol * scale:
        raise NonSimplePeripheralEigenvalueError(f"leading eigenvalue {lead} is not real")
    xi = v[:, order[0]].real
    xi = xi / xi[np.argmax(np.abs(xi))]
    if np.any(xi <= 0):
        raise NonSimplePeripheralEigenvalueError(f"leading eigenvector not positive: {xi}")
    eta = -float(lead.real)
    resid = float(np.abs(Qp @ xi + eta * xi).max())
    if resid > rtol * scale:
        raise NonSimplePeripheralEigenvalueError(f"eigen-residual {resid:.3e}")
    return SpectralReport(float(p), eta, xi, float(xi.max() / xi.min()), resid)


@dataclass(frozen=True)
class P0Result:
    """Grid-certified range (0, p_star] with eta_p > 0 and the working p."""

    p_star: float
    p: float
    report: SpectralReport
    mean_beta: float
    grid: np.ndarray
    eta_grid: np.ndarray

    def to_dict(self):
        return {"p_star": self.p_star, "p": self.p, "mean_beta": self.mean_beta,
                "report": self.report.to_dict(), "grid_points": int(self.grid.size)}


def find_p0(Q: GeneratorMatrix, beta, tol=1e-4, n_grid=64):
    """Largest p_star in (0, 1] with eta_p > 0 on a grid of (0, p_star].

    Scan a uniform grid, then bisect the first sign change to resolution
    ``tol``.  The working exponent is p = min(1, p_star) / 2.
    """
    beta = np.asarray(beta, dtype=float)
    mu = invariant_measure(Q)
    mean = float(mu @ beta)
    if mean >= 0:
        raise MeanConditionViolatedError(f"sum mu_i beta_i = {mean:.6g} is not negative",
                                         {"mu": mu.tolist(), "mean": mean})

    def eta(p):
        return perron_eta(Q, beta, p).eta

    grid = np.linspace(1.0 / n_grid, 1.0, n_grid)
    vals = np.array([eta(p) for p in grid])
    bad = np.flatnonzero(vals <= 0)
    if bad.size == 0:
        p_star = 1.0
    else:
        k = int(bad[0])
        lo = grid[k - 1] if k > 0 else 0.0
        hi = grid[k]
        # eta_p ~ -p * mean near 0, so positive just above 0
        if k == 0:
            lo = min(hi, tol) / 2
            while eta(lo) <= 0 and lo > 1e-12:
                lo /= 2
        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            if eta(mid) > 0:
                lo = mid
            else:
                hi = mid
        p_star = lo
    p = min(1.0, p_star) / 2
    return P0Result(float(p_star), float(p), perron_eta(Q, beta, p), mean, grid, vals)
