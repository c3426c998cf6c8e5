"""Theorem drivers: assemble checked hypotheses into certificates.

Each driver returns a :class:`Certificate` holding the theorem id, every
constant that enters the decay bound, the witnesses they came from and the
status of each assumption.  Derived constants are recomputed from their
components on construction, so a stored certificate cannot drift from its
inputs.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .chains import GeneratorMatrix, GTable, classical_coupling, coupling_rate_theta
from .dynamics import RegimeModel, RhoFunction, verify_A1, verify_H
from .errors import (
    A1FailedError,
    A3UnverifiedError,
    HFailedError,
    Lambda0NonPositiveError,
    PartitionInfeasibleError,
    XiInfeasibleError,
)
from .partition import (
    Partition,
    build_partition,
    check_theorem_tminfi,
    reduced_generator,
    state_dependent_reduced_generator,
)
from .serialize import to_jsonable
from .spectra import (
    dirichlet_lambda0,
    find_p0,
    find_xi,
    is_nonsingular_mmatrix,
    xi_certificate_from_vector,
)

__all__ = [
    "THEOREMS",
    "Certificate",
    "C1Source",
    "c1_from_bt4",
    "certify_main1",
    "certify_tfm",
    "certify_prin",
    "certify_tfmb",
    "certify_tminfi",
    "certify_bt4",
    "example2_threshold",
    "example2_threshold_value",
]

THEOREMS = ("main-1", "t-f-m", "prin", "t-f-m-b", "t-m-infi", "b-t-4")


def _digest(obj):
    blob = json.dumps(to_jsonable(obj), sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


@dataclass(frozen=True)
class C1Source:
    """Moment constant C1 of (A2) with its provenance."""

    value: float
    gamma: float | None
    provenance: str

    def to_dict(self):
        return {"C1": self.value, "gamma": self.gamma, "provenance": self.provenance}


def c1_from_bt4(bt4: "Certificate", power=1, offset=0.0):
    """C1 from a moment certificate for a profile rho_H.

    The default (rho_H = rho) gives C1 = max(c1, c2) and gamma = alpha.

    ``power = k`` covers rho_H = rho^k: Jensen turns
    E rho_H <= c1 rho_H(x) e^{-a t} + c2 into
    E rho <= c1^{1/k} rho(x) e^{-a t / k} + c2^{1/k}.

    ``offset = e`` covers rho <= rho_H + e and rho_H <= rho, as for the
    smoothed profile sqrt(r^2 + e^2) - e of rho(r) = r.  Then
    C1 = max(c1^{1/k}, c2^{1/k} + e).
    """
    k = float(power)
    c1, c2, a = bt4.constants["c1"], bt4.constants["c2"], bt4.constants["alpha_bt4"]
    return C1Source(max(c1 ** (1 / k), c2 ** (1 / k) + float(offset)), a / k,
                    f"derived from b-t-4 (c1={c1:.6g}, c2={c2:.6g}, power {power}, offset {offset})")


@dataclass(frozen=True)
class Certificate:
    """Certified constants and the decay bound they induce.

    ``constants`` stores the primitive constants plus the derived ones
    (alpha_tilde, C_tilde, alpha_p, C_tilde1, c2); :meth:`recompute`
    re-derives them and construction fails if they differ.
    """

    theorem: str
    constants: dict
    witnesses: dict = field(default_factory=dict)
    assumptions: dict = field(default_factory=dict)
    inputs_digest: str = ""
    rho_name: str = "linear"

    def __post_init__(self):
        if self.theorem not in THEOREMS:
            raise ValueError(f"unknown theorem id {self.theorem!r}")
        derived = self.recompute()
        for k, v in derived.items():
            if k in self.constants and not (self.constants[k] == v or (np.isnan(v) and np.isnan(self.constants[k]))):
                raise ValueError(f"stored {k}={self.constants[k]!r} differs from recomputed {v!r}")

    def recompute(self):
        c = self.constants
        out = {}
        if self.theorem == "b-t-4":
            out["c1"] = c["xi_max"] / c["xi_min"]
            out["alpha_bt4"] = -c["lambda_max"] / c["xi_max"]
            out["c2"] = -c["M2"] * c["xi_max"] ** 2 / (c["lambda_max"] * c["xi_min"])
            return out
        if self.theorem == "t-f-m-b":
            out["alpha_p"] = min(c["theta"], c["eta_p"]) / 4
            out["C_tilde1"] = max(c["C1"], c["C3"], c["K_theta"])
            return out
        out["alpha_tilde"] = min(c["alpha"], c["theta"]) / 4
        out["C_tilde"] = max(c["C1"], c["C2"], c["K_theta"], 1.0)
        return out

    @property
    def rate(self):
        if self.theorem == "b-t-4":
            return self.constants["alpha_bt4"]
        if self.theorem == "t-f-m-b":
            return self.constants["alpha_p"]
        return self.constants["alpha_tilde"]

    @property
    def prefactor(self):
        if self.theorem == "t-f-m-b":
            return self.constants["C_tilde1"]
        return self.constants.get("C_tilde")

    def bound(self, t, x, y=None):
        """Decay bound at times t from start x (two-point form if y given)."""
        if self.theorem == "b-t-4":
            raise ValueError("b-t-4 certifies a moment bound; use moment_bound")
        C, a = self.prefactor, self.rate
        rho = RhoFunction.by_name(self.rho_name)
        t = np.asarray(t, dtype=float)
        rx = float(rho(abs(float(x))))
        if y is None:
            return 2 * C * (np.sqrt(3 + rx) + C) * np.exp(-a * t)
        ry = float(rho(abs(float(y))))
        return 2 * C * np.sqrt(3 + rx + ry) * np.exp(-a * t)

    def moment_bound(self, t, rho_x0):
        """c1 rho(|x0|) e^{-alpha t} + c2 for a b-t-4 certificate."""
        if self.theorem != "b-t-4":
            raise ValueError(f"{self.theorem} certifies a Wasserstein bound; use bound")
        c = self.constants
        return c["c1"] * rho_x0 * np.exp(-c["alpha_bt4"] * np.asarray(t, dtype=float)) + c["c2"]

    def to_dict(self):
        return to_jsonable({
            "theorem": self.theorem,
            "inputs_digest": self.inputs_digest,
            "rho": self.rho_name,
            "constants": self.constants,
            "witnesses": self.witnesses,
            "assumptions": self.assumptions,
        })

    @classmethod
    def from_dict(cls, d):
        """Rebuild from :meth:`to_dict` output; derived constants are rechecked."""
        def num(v):
            return float(v) if isinstance(v, str) and v in ("inf", "-inf", "nan") else v
        consts = {k: num(v) for k, v in d["constants"].items()}
        return cls(d["theorem"], consts, d.get("witnesses", {}), d.get("assumptions", {}),
                   d.get("inputs_digest", ""), d.get("rho", "linear"))

    def summary(self):
        """Human-readable hypothesis-by-hypothesis report."""
        lines = [f"theorem {self.theorem}  (inputs {self.inputs_digest[:12]})"]
        for k, v in self.assumptions.items():
            status = v.get("status", v) if isinstance(v, dict) else v
            lines.append(f"  {k:<10} {status}")
        for k, v in self.constants.items():
            if np.isscalar(v):
                lines.append(f"  {k:<12} = {v:.6g}" if isinstance(v, (float, int, np.floating)) else f"  {k:<12} = {v}")
        return "\n".join(lines) + "\n"


# -- helpers ----------------------------------------------------------------

def _theta_finite(Q: GeneratorMatrix):
    if Q.size == 1:
        return np.inf, 1.0, {"convention": "single regime: no chain to couple, theta = inf"}
    rate = coupling_rate_theta(classical_coupling(Q))
    theta, K = rate.effective()
    return theta, K, {"theta_unit": rate.theta, "theta_spectral": rate.spectral,
                      "prefactor": rate.prefactor, "direct": rate.direct}


def _check_a1(model, rho, beta):
    if model is None:
        return {"status": "not checked: no model supplied"}
    rep = verify_A1(model, rho, declared=beta)
    if not rep.all_passed:
        raise A1FailedError(f"(A1) fails: beta_hat {rep.beta_hat.tolist()} vs declared {list(beta)}")
    return {"status": "passed on grid", **rep.to_dict()}


def _c1(C1):
    if C1 is None:
        raise ValueError("C1 must be supplied (a number or a C1Source from c1_from_bt4)")
    if isinstance(C1, C1Source):
        return C1.value, C1.to_dict()
    return float(C1), {"C1": float(C1), "gamma": None, "provenance": "user supplied"}


def _assemble(theorem, xi_cert, theta, K, C1, a2, extra_w, assumptions, digest, rho_name,
              extra_c=None):
    c = {
        "theta": float(theta),
        "K_theta": float(K),
        "C1": float(C1),
        "C2": xi_cert.C2,
        "alpha": xi_cert.alpha,
        "lambda_max": float(xi_cert.lam.max()),
        "xi_max": float(xi_cert.xi.max()),
        "xi_min": float(xi_cert.xi.min()),
    }
    if extra_c:
        c.update(extra_c)
    c["alpha_tilde"] = min(c["alpha"], c["theta"]) / 4
    c["C_tilde"] = max(c["C1"], c["C2"], c["K_theta"], 1.0)
    w = {"xi": xi_cert.to_dict(), **extra_w}
    a2_status = "supplied" if a2["provenance"] == "user supplied" else "derived from b-t-4"
    assumptions = {"A2": {"status": a2_status, **a2}, **assumptions}
    return Certificate(theorem, c, w, assumptions, digest, rho_name)


# -- finite regime set ------------------------------------------------------

def certify_main1(Q: GeneratorMatrix, beta, C1=None, model: RegimeModel | None = None,
                  rho: RhoFunction | None = None, theorem="main-1", _xi=None, _extra=None):
    """Certificate from a vector xi >> 0 with (Q + diag beta) xi << 0."""
    beta = np.asarray(beta, dtype=float)
    rho = RhoFunction.linear() if rho is None else rho
    a1 = _check_a1(model, rho, beta)
    C1v, a2 = _c1(C1)
    xi_cert = find_xi(Q, beta) if _xi is None else _xi
    theta, K, tw = _theta_finite(Q)
    digest = _digest({"theorem": theorem, "Q": Q.rates, "beta": beta, "C1": C1v})
    extra_w = {"theta": tw}
    if _extra:
        extra_w.update(_extra)
    return _assemble(theorem, xi_cert, theta, K, C1v, a2, extra_w,
                     {"A1": a1, "finite_S": {"status": f"N = {Q.size}"}}, digest, rho.name)


def certify_tfm(Q: GeneratorMatrix, beta, C1=None, model=None, rho=None):
    """Certificate from -(Q + diag beta) being a nonsingular M-matrix."""
    beta = np.asarray(beta, dtype=float)
    rep = is_nonsingular_mmatrix(-(Q.rates + np.diag(beta)))
    if not rep.verdict:
        raise XiInfeasibleError(f"-(Q + diag beta) is not a nonsingular M-matrix: {rep.failing}", rep.to_dict())
    xi = xi_certificate_from_vector(Q, beta, rep.witness, rep.lp_margin)
    return certify_main1(Q, beta, C1, model, rho, theorem="t-f-m", _xi=xi,
                         _extra={"mmatrix": rep.to_dict()})


def certify_prin(Q: GeneratorMatrix, beta, pi=None, C1=None, model=None, rho=None):
    """Certificate from a positive Dirichlet principal eigenvalue (reversible Q)."""
    beta = np.asarray(beta, dtype=float)
    rep = dirichlet_lambda0(Q, beta, pi)
    if rep.lambda0 <= 0:
        raise Lambda0NonPositiveError(f"principal eigenvalue {rep.lambda0:.6g} is not positive", rep.to_dict())
    xi = xi_certificate_from_vector(Q, beta, rep.f)
    return certify_main1(Q, beta, C1, model, rho, theorem="prin", _xi=xi,
                         _extra={"dirichlet": rep.to_dict()})


def certify_tfmb(Q: GeneratorMatrix, beta, C1=None, model=None, rho=None, tol=1e-4):
    """Certificate in the rho^p composite cost from sum mu_i beta_i < 0."""
    beta = np.asarray(beta, dtype=float)
    rho = RhoFunction.linear() if rho is None else rho
    a1 = _check_a1(model, rho, beta)
    C1v, a2 = _c1(C1)
    res = find_p0(Q, beta, tol=tol)
    theta, K, tw = _theta_finite(Q)
    rep = res.report
    c = {
        "theta": float(theta),
        "K_theta": float(K),
        "C1": C1v,
        "p": res.p,
        "p_star": res.p_star,
        "eta_p": rep.eta,
        "C3": rep.C3,
        "mean_beta": res.mean_beta,
    }
    c["alpha_p"] = min(c["theta"], c["eta_p"]) / 4
    c["C_tilde1"] = max(c["C1"], c["C3"], c["K_theta"])
    digest = _digest({"theorem": "t-f-m-b", "Q": Q.rates, "beta": beta, "C1": C1v})
    return Certificate("t-f-m-b", c, {"perron": res.to_dict(), "theta": tw},
                       {"A1": a1, "A2": {"status": "supplied" if a2["provenance"] == "user supplied" else "derived from b-t-4", **a2},
                        "mean_condition": {"status": f"sum mu beta = {res.mean_beta:.6g} < 0"}},
                       digest, rho.name)


# -- countable regime set ---------------------------------------------------

def certify_tminfi(Q: GeneratorMatrix, beta, partition: Partition, g: GTable, C1=None,
                   tail_bounds=None, monotone_tail=False, model=None, rho=None, theta_fraction=0.5):
    """Certificate for a truncated countable chain via the block criterion.

    The coupling-time rate comes from the moment bound
    E exp(theta tau) <= 1 / (1 - theta ||g||) at theta = theta_fraction / ||g||,
    which gives P(tau > t) <= K exp(-theta t) with K = 1 / (1 - theta_fraction).
    """
    beta = np.asarray(beta, dtype=float)
    rho = RhoFunction.linear() if rho is None else rho
    if g is None or not g.verified:
        raise A3UnverifiedError("(A3) needs a bounded g with coupled drift <= -1 off the diagonal")
    if not np.isfinite(Q.rate_bound):
        raise A3UnverifiedError("sup of the exit rates must be finite")
    a1 = _check_a1(model, rho, beta)
    C1v, a2 = _c1(C1)
    red = reduced_generator(Q, partition, tail_bounds, monotone_tail)
    chk = check_theorem_tminfi(red, partition.values, Q, beta, partition)
    if chk.certificate is None:
        raise PartitionInfeasibleError("block criterion holds but no witness verifies on the truncation",
                                       chk.to_dict())
    theta = theta_fraction / g.norm
    K = 1.0 / (1.0 - theta_fraction)
    digest = _digest({"theorem": "t-m-infi", "Q": Q.rates, "beta": beta, "partition": partition.to_dict(),
                      "C1": C1v, "g_norm": g.norm})
    extra_w = {"block_check": chk.to_dict(), "reduced": red.to_dict(), "partition": partition.to_dict(),
               "g": g.to_dict(), "theta": {"source": "moment bound", "theta_fraction": theta_fraction}}
    return _assemble("t-m-infi", chk.certificate, theta, K, C1v, a2, extra_w,
                     {"A1": a1, "A3": {"status": "verified on truncation", **g.to_dict()}},
                     digest, rho.name, {"g_norm": g.norm})


def certify_bt4(theta, K, Q: GeneratorMatrix | None = None, thresholds=(0.0,), tail_theta=None,
                tail_K=None, tail_bounds=None, monotone_tail=False, bounds=None, model=None,
                rho: RhoFunction | None = None, rate_bound=None):
    """Moment-boundedness certificate (c1, alpha, c2).

    ``theta`` and ``K`` are the per-regime constants of (H); when ``model``
    and ``rho`` are given they are checked on a grid first.  ``Q`` is the
    (truncated) constant generator; for x-dependent rates pass analytic
    ``bounds=(lower, upper)`` of the block-aggregated rates instead.
    """
    theta = np.asarray(theta, dtype=float)
    K = np.asarray(K, dtype=float)
    h = {"status": "supplied"}
    if model is not None:
        rho = RhoFunction.linear().smoothed(1.0) if rho is None else rho
        rep = verify_H(model, rho, theta=theta, K=K)
        if not rep.all_passed:
            raise HFailedError(f"(H) fails on the grid for theta={theta.tolist()}, K={K.tolist()}", rep.to_dict())
        h = {"status": "passed on grid", **rep.to_dict()}
    rho_name = "linear" if rho is None else rho.name
    M1 = float(max(theta.max(), -np.inf if tail_theta is None else tail_theta))
    M2 = float(max(K.max(), -np.inf if tail_K is None else tail_K))
    P = build_partition(theta, thresholds, tail_sup=tail_theta)
    if bounds is not None:
        red = state_dependent_reduced_generator(P, bounds=bounds, rate_bound=rate_bound,
                                                tail_bounds=tail_bounds, monotone_tail=monotone_tail)
        chk = check_theorem_tminfi(red, P.values)
        if not chk.extension_sound:
            raise PartitionInfeasibleError("no non-increasing block witness; the reduction bound does not apply",
                                           chk.to_dict())
        xi_F = chk.xi_F
        lam = red.rates @ xi_F + P.values * xi_F
        xi, lam_max = xi_F, float(lam.max())
    else:
        red = reduced_generator(Q, P, tail_bounds, monotone_tail)
        chk = check_theorem_tminfi(red, P.values, Q, theta, P)
        if chk.certificate is None:
            raise PartitionInfeasibleError("block criterion holds but no witness verifies on the truncation",
                                           chk.to_dict())
        xi, lam_max = chk.certificate.xi, float(chk.certificate.lam.max())
    c = {"M1": M1, "M2": M2, "xi_max": float(xi.max()), "xi_min": float(xi.min()), "lambda_max": lam_max}
    c["c1"] = c["xi_max"] / c["xi_min"]
    c["alpha_bt4"] = -c["lambda_max"] / c["xi_max"]
    c["c2"] = -c["M2"] * c["xi_max"] ** 2 / (c["lambda_max"] * c["xi_min"])
    digest = _digest({"theorem": "b-t-4", "theta": theta, "K": K, "thresholds": list(thresholds),
                      "Q": None if Q is None else Q.rates})
    return Certificate("b-t-4", c, {"block_check": chk.to_dict(), "reduced": red.to_dict(),
                                    "partition": P.to_dict(), "xi": xi,
                                    "rho_eps": None if rho is None else rho.eps},
                       {"H": h}, digest, rho_name)


# -- Example 2 closed form --------------------------------------------------

def example2_threshold_value(kappa1, a2, b1):
    """a2 kappa1 / (b1 + kappa1)."""
    if min(kappa1, a2, b1) <= 0:
        raise ValueError("kappa1, a2 and b1 must be positive")
    return a2 * kappa1 / (b1 + kappa1)


def example2_threshold(kappa1, kappa2, a2, b1):
    """Closed-form verdict kappa2 < a2 kappa1 / (b1 + kappa1)."""
    return bool(kappa2 < example2_threshold_value(kappa1, a2, b1))
