"""Simulation of regime-switching diffusions and assumption checks.

dX = b(X, L) dt + sigma(X, L) dB with L a Markov chain whose rates may depend
on X.  Euler-Maruyama for X; the chain is simulated exactly between grid
points when its rates are constant and by thinning against the global rate
bound otherwise.  The coupled process runs the classical chain coupling,
independent noise while the regimes differ and 1-d reflection once they
agree; the two diffusions are glued when they meet.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.polynomial import Polynomial

from ._rng import CHAIN_STREAM, NOISE_STREAM, STREAM_SCHEME, THINNING_STREAM, UniformBuffer, path_rng
from .chains import GeneratorMatrix, _JumpTable, classical_coupling
from .errors import (
    CoincidencePointError,
    ModelValidationError,
    NonPositiveDiffusionError,
    StepTooCoarseError,
    UnsupportedCouplingDimensionError,
)

__all__ = [
    "RhoFunction",
    "Coefficient",
    "RegimeModel",
    "ValidationReport",
    "SimulationGrid",
    "TrajectoryBatch",
    "simulate_path",
    "simulate_coupled_pair",
    "burn_in",
    "reflection_coupling_1d",
    "apply_coupling_generator",
    "A1Report",
    "verify_A1",
    "HReport",
    "verify_H",
]

THINNING_GUARD = 0.1


# -- distance profile -------------------------------------------------------

@dataclass(frozen=True)
class RhoFunction:
    """Distance profile r -> rho(r) with its first two derivatives.

    ``eps > 0`` selects the smoothed profile rho(sqrt(r^2 + eps^2)) - rho(eps),
    which is C^2 at 0.
    """

    name: str
    f: Callable
    d1: Callable
    d2: Callable
    eps: float = 0.0
    concave: bool = True

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        if self.eps == 0:
            return self.f(r)
        return self.f(np.sqrt(r * r + self.eps ** 2)) - self.f(np.asarray(self.eps))

    def derivative(self, r):
        r = np.asarray(r, dtype=float)
        if self.eps == 0:
            return self.d1(r)
        s = np.sqrt(r * r + self.eps ** 2)
        return self.d1(s) * r / s

    def second_derivative(self, r):
        r = np.asarray(r, dtype=float)
        if self.eps == 0:
            return self.d2(r)
        s = np.sqrt(r * r + self.eps ** 2)
        return self.d2(s) * (r / s) ** 2 + self.d1(s) * self.eps ** 2 / s ** 3

    def smoothed(self, eps=1e-6):
        return RhoFunction(self.name, self.f, self.d1, self.d2, float(eps), self.concave)

    def validate(self, r_max=1e6, level=10.0, n=2001):
        """Check rho(0) = 0, rho' > 0, rho'' <= 0 (if concave) on a grid and
        rho(r_max) > level."""
        r = np.concatenate([[0.0], np.geomspace(1e-6, r_max, n)])
        problems = []
        if abs(float(self(0.0))) > 1e-14:
            problems.append("rho(0) != 0")
        if np.any(self.derivative(r[1:]) <= 0):
            problems.append("rho' not positive")
        if self.concave and np.any(self.second_derivative(r[1:]) > 1e-12):
            problems.append("rho'' positive somewhere")
        if float(self(r_max)) <= level:
            problems.append(f"rho({r_max}) = {float(self(r_max)):.4g} does not exceed {level}")
        if problems:
            raise ModelValidationError(f"distance profile {self.name}: " + "; ".join(problems))
        return True

    @classmethod
    def linear(cls):
        return cls("linear", lambda r: r, np.ones_like, np.zeros_like)

    @classmethod
    def power(cls, q):
        """rho(r) = r^q, 0 < q <= 1."""
        if not 0 < q <= 1:
            raise ValueError("power profile needs 0 < q <= 1")
        return cls(f"power({q})", lambda r: r ** q, lambda r: q * r ** (q - 1),
                   lambda r: q * (q - 1) * r ** (q - 2))

    @classmethod
    def log1p(cls):
        return cls("log1p", np.log1p, lambda r: 1 / (1 + r), lambda r: -1 / (1 + r) ** 2)

    @classmethod
    def square(cls):
        """rho(r) = r^2.  Convex, so only admissible for moment bounds."""
        return cls("square", lambda r: r * r, lambda r: 2 * r, lambda r: 2 * np.ones_like(r),
                   concave=False)

    @classmethod
    def by_name(cls, name, q=None):
        """Factory by label; ``"power(0.5)"`` is accepted as well as ``("power", 0.5)``."""
        if name.startswith("power(") and name.endswith(")"):
            return cls.power(float(name[6:-1]))
        if name == "linear":
            return cls.linear()
        if name == "power":
            return cls.power(q)
        if name == "log1p":
            return cls.log1p()
        if name == "square":
            return cls.square()
        raise ValueError(f"unknown distance profile {name!r}")


# -- coefficient vocabulary -------------------------------------------------

@dataclass(frozen=True)
class Coefficient:
    """Scalar coefficient x -> c(x) from a closed vocabulary.

    Kinds: ``constant`` (c,), ``linear`` (slope, intercept), ``polynomial``
    (c0, c1, ...), ``trig`` (a, w, c) for a sin(w x) + c cos(w x), and
    ``sum`` of other coefficients.
    """

    kind: str
    params: tuple

    def __post_init__(self):
        if self.kind not in ("constant", "linear", "polynomial", "trig", "sum"):
            raise ValueError(f"unknown coefficient kind {self.kind!r}")

    @property
    def _poly(self):
        if self.kind == "constant":
            return Polynomial([self.params[0]])
        if self.kind == "linear":
            slope, icpt = self.params
            return Polynomial([icpt, slope])
        return Polynomial(list(self.params))

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "trig":
            a, w, c = self.params
            return a * np.sin(w * x) + c * np.cos(w * x)
        if self.kind == "sum":
            return sum(t(x) for t in self.params)
        return self._poly(x) + 0.0 * x

    def derivative(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "trig":
            a, w, c = self.params
            return a * w * np.cos(w * x) - c * w * np.sin(w * x)
        if self.kind == "sum":
            return sum(t.derivative(x) for t in self.params)
        return self._poly.deriv()(x) + 0.0 * x

    def affine(self):
        """(slope, intercept) if the coefficient is affine, else None."""
        if self.kind == "trig":
            return (0.0, float(self.params[2])) if self.params[0] == 0 and self.params[1] == 0 else None
        if self.kind == "sum":
            parts = [t.affine() for t in self.params]
            if any(p is None for p in parts):
                return None
            return (sum(p[0] for p in parts), sum(p[1] for p in parts))
        c = self._poly.coef
        if np.any(c[2:] != 0):
            return None
        return (float(c[1]) if c.size > 1 else 0.0, float(c[0]))

    @classmethod
    def constant(cls, c):
        return cls("constant", (float(c),))

    @classmethod
    def linear(cls, slope, intercept=0.0):
        return cls("linear", (float(slope), float(intercept)))

    @classmethod
    def polynomial(cls, coeffs):
        return cls("polynomial", tuple(float(c) for c in coeffs))

    @classmethod
    def trig(cls, a, w, c=0.0):
        return cls("trig", (float(a), float(w), float(c)))

    @classmethod
    def sum_of(cls, *terms):
        return cls("sum", tuple(terms))

    def to_dict(self):
        if self.kind == "sum":
            return {"kind": "sum", "terms": [t.to_dict() for t in self.params]}
        return {"kind": self.kind, "params": list(self.params)}

    @classmethod
    def from_dict(cls, d):
        if d["kind"] == "sum":
            return cls("sum", tuple(cls.from_dict(t) for t in d["terms"]))
        return cls(d["kind"], tuple(float(p) for p in d["params"]))


# -- model ------------------------------------------------------------------

@dataclass(frozen=True)
class ValidationReport:
    growth_constant: float
    lipschitz_constant: float
    declared: float | None
    rate_max: float
    passed: bool
    notes: tuple = ()

    def to_dict(self):
        return {"growth_constant": self.growth_constant, "lipschitz_constant": self.lipschitz_constant,
                "declared": self.declared, "rate_max": self.rate_max, "passed": self.passed,
                "notes": list(self.notes)}


@dataclass(frozen=True)
class RegimeModel:
    """Per-regime drift and diffusion with a switching law.

    In d = 1, ``drift[i]`` and ``sigma[i]`` map an array of positions to an
    array of the same shape (a :class:`Coefficient` works).  For d > 1 they
    map (n, d) to (n, d) and (n, d, d).  Switching is either a constant
    generator ``Q`` or ``rate_fn(x) -> N x N`` with a global ``rate_bound``.
    ``beta``, ``theta`` and ``K`` are optional declared constants.
    """

    drift: tuple
    sigma: tuple
    Q: GeneratorMatrix | None = None
    rate_fn: Callable | None = None
    rate_bound: float | None = None
    dim: int = 1
    beta: tuple | None = None
    theta: tuple | None = None
    K: tuple | None = None
    growth: float | None = None

    @property
    def n_regimes(self):
        return len(self.drift)

    @property
    def state_dependent(self):
        return self.rate_fn is not None

    @property
    def global_rate(self):
        if self.rate_bound is not None:
            return float(self.rate_bound)
        return float(self.Q.rate_bound)

    def rates_at(self, x):
        return self.Q.rates if self.rate_fn is None else np.asarray(self.rate_fn(x), dtype=float)

    def affine_tables(self):
        """(slope, intercept, sigma) arrays if every regime is affine with
        constant diffusion in d = 1, else None."""
        if self.dim != 1:
            return None
        if not all(isinstance(c, Coefficient) for c in self.drift + self.sigma):
            return None
        aff = [c.affine() for c in self.drift]
        sig = [c.affine() for c in self.sigma]
        if any(a is None for a in aff) or any(s is None or s[0] != 0 for s in sig):
            return None
        return (np.array([a[0] for a in aff]), np.array([a[1] for a in aff]),
                np.array([s[1] for s in sig]))

    def b(self, x, i):
        return np.asarray(self.drift[i](x), dtype=float)

    def s(self, x, i):
        return np.asarray(self.sigma[i](x), dtype=float)

    def validate(self, radius=10.0, n=256, seed=0):
        """Spot-check linear growth and Lipschitz bounds on random points.

        Without a declared constant, superlinear growth is detected by
        comparing the growth ratio on the ball of radius R with the shell
        out to 4R.
        """
        if len(self.sigma) != self.n_regimes or self.n_regimes == 0:
            raise ModelValidationError("drift and sigma must list the same regimes")
        if (self.Q is None) == (self.rate_fn is None):
            raise ModelValidationError("give exactly one of a constant generator or a rate function")
        if self.Q is not None and self.Q.size != self.n_regimes:
            raise ModelValidationError(f"generator has {self.Q.size} states, model {self.n_regimes} regimes")
        if self.rate_fn is not None and self.rate_bound is None:
            raise ModelValidationError("x-dependent rates need a declared global rate bound")
        for name in ("beta", "theta", "K"):
            v = getattr(self, name)
            if v is not None and len(v) != self.n_regimes:
                raise ModelValidationError(f"{name} must have one entry per regime")
        rng = np.random.default_rng(seed)
        d = self.dim

        def pts(lo, hi):
            u = rng.standard_normal((n, d))
            u /= np.linalg.norm(u, axis=1, keepdims=True)
            r = rng.uniform(lo, hi, (n, 1))
            return (u * r)[:, 0] if d == 1 else u * r

        def norms(x, i):
            bx = self.b(x, i)
            sx = self.s(x, i)
            if d == 1:
                return np.abs(bx), np.abs(sx)
            return np.linalg.norm(bx, axis=1), np.linalg.norm(sx, ord=2, axis=(1, 2))

        def size(x):
            return np.abs(x) if d == 1 else np.linalg.norm(x, axis=1)

        growth = lip = 0.0
        notes = []
        superlinear = False
        for i in range(self.n_regimes):
            x_in, x_out = pts(0, radius), pts(radius, 4 * radius)
            g_in = np.max(sum(norms(x_in, i)) / (1 + size(x_in)))
            g_out = np.max(sum(norms(x_out, i)) / (1 + size(x_out)))
            growth = max(growth, g_in, g_out)
            x, y = pts(0, 4 * radius), pts(0, 4 * radius)
            bx, sx = self.b(x, i), self.s(x, i)
            by, sy = self.b(y, i), self.s(y, i)
            if d == 1:
                num = np.abs(bx - by) + np.abs(sx - sy)
            else:
                num = np.linalg.norm(bx - by, axis=1) + np.linalg.norm(sx - sy, ord=2, axis=(1, 2))
            dist = size(x - y)
            ok = dist > 1e-9
            lip_i = float(np.max(num[ok] / dist[ok])) if ok.any() else 0.0
            lip = max(lip, lip_i)
            x_near, y_near = pts(0, radius), pts(0, radius)
            dn = size(x_near - y_near)
            okn = dn > 1e-9
            if d == 1:
                nn = np.abs(self.b(x_near, i) - self.b(y_near, i)) + np.abs(self.s(x_near, i) - self.s(y_near, i))
            else:
                nn = (np.linalg.norm(self.b(x_near, i) - self.b(y_near, i), axis=1)
                      + np.linalg.norm(self.s(x_near, i) - self.s(y_near, i), ord=2, axis=(1, 2)))
            lip_near = float(np.max(nn[okn] / dn[okn])) if okn.any() else 0.0
            if g_out > 2 * g_in + 1e-12 or lip_i > 2 * lip_near + 1e-12:
                superlinear = True
                notes.append(f"regime {i}: coefficients grow faster than linearly")
        rate_max = 0.0
        if self.rate_fn is not None:
            for x in pts(0, 4 * radius):
                q = np.asarray(self.rate_fn(x), dtype=float)
                if np.any(q - np.diag(np.diag(q)) < 0) or np.any(np.abs(q.sum(axis=1)) > 1e-9 * max(1, np.abs(q).max())):
                    raise ModelValidationError("rate function returns a non-conservative matrix")
                rate_max = max(rate_max, float(-np.diag(q).min()))
            if rate_max > self.rate_bound * (1 + 1e-12):
                raise ModelValidationError(
                    f"sampled exit rate {rate_max:.6g} exceeds declared bound {self.rate_bound:.6g}"
                )
        else:
            rate_max = float(self.Q.rate_bound)
        K = max(growth, lip)
        if self.growth is not None and K > self.growth * (1 + 1e-9):
            raise ModelValidationError(
                f"growth/Lipschitz constant {K:.6g} exceeds declared {self.growth:.6g}"
            )
        if superlinear:
            raise ModelValidationError("; ".join(notes))
        return ValidationReport(float(growth), float(lip), self.growth, rate_max, True, tuple(notes))


# -- grids and batches ------------------------------------------------------

@dataclass(frozen=True)
class SimulationGrid:
    dt: float
    horizon: float
    record_every: int = 1

    def __post_init__(self):
        if not (self.dt > 0 and self.horizon > 0 and self.record_every >= 1):
            raise ValueError("dt, horizon and record_every must be positive")

    @property
    def n_steps(self):
        return int(round(self.horizon / self.dt))

    @property
    def record_steps(self):
        steps = np.arange(0, self.n_steps + 1, self.record_every)
        if steps[-1] != self.n_steps:
            steps = np.append(steps, self.n_steps)
        return steps

    @property
    def times(self):
        return self.record_steps * self.dt

    def to_dict(self):
        return {"dt": self.dt, "horizon": self.horizon, "record_every": self.record_every}


def _ro(a):
    if a is None:
        return None
    a = np.asarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class TrajectoryBatch:
    """Recorded snapshots of simulated paths.

    ``X`` has shape (paths, records) in d = 1 and (paths, records, d)
    otherwise; ``regime`` has shape (paths, records).  Coupled batches add
    ``Y``, ``regime2``, the chain coupling time ``tau`` and the diffusion
    meeting time ``meet_time`` (inf when not met).
    """

    times: np.ndarray
    X: np.ndarray
    regime: np.ndarray
    seed: int
    grid: SimulationGrid
    Y: np.ndarray | None = None
    regime2: np.ndarray | None = None
    tau: np.ndarray | None = None
    meet_time: np.ndarray | None = None
    occupation: np.ndarray | None = None
    jumps: tuple | None = None
    switching: str = "exact"
    stream_scheme: str = field(default=STREAM_SCHEME)

    @property
    def coupled(self):
        return self.Y is not None

    @property
    def n_paths(self):
        return self.X.shape[0]

    def meet_index(self):
        """First record index at or after the meeting time (-1 if never)."""
        if self.meet_time is None:
            return None
        idx = np.searchsorted(self.times, self.meet_time - 1e-12 * self.grid.dt, side="left")
        return np.where(np.isfinite(self.meet_time), idx, -1)

    def statistic_csv(self, fn, name="stat"):
        """CSV with columns t, mean, se for fn(batch) of shape (paths, records)."""
        vals = np.asarray(fn(self), dtype=float)
        mean = vals.mean(axis=0)
        se = vals.std(axis=0, ddof=1) / np.sqrt(vals.shape[0]) if vals.shape[0] > 1 else np.zeros_like(mean)
        lines = [f"t,mean_{name},se_{name}"]
        lines += [f"{t!r},{m!r},{s!r}" for t, m, s in zip(self.times.tolist(), mean.tolist(), se.tolist())]
        return "\n".join(lines) + "\n"


# -- simulation internals ---------------------------------------------------

def _broadcast_start(x0, i0, paths, dim):
    x0 = np.asarray(x0, dtype=float)
    if dim == 1:
        x = np.broadcast_to(x0, (paths,)).astype(float).copy()
    else:
        x = np.broadcast_to(x0, (paths, dim)).astype(float).copy()
    i = np.broadcast_to(np.asarray(i0, dtype=np.int64), (paths,)).copy()
    return x, i


def _regimes_on_grid(times, states, grid_times):
    return states[np.searchsorted(times, grid_times, side="right") - 1]


def _occupation(times, states, horizon, n):
    dur = np.diff(np.append(times, horizon))
    return np.bincount(states, weights=dur, minlength=n) / horizon


class _Stepper:
    """Vectorized drift/diffusion evaluation over paths with regime labels."""

    def __init__(self, model: RegimeModel):
        self.model = model
        self.tables = model.affine_tables()

    def drift(self, x, reg):
        if self.tables is not None:
            slope, icpt, _ = self.tables
            return slope[reg] * x + icpt[reg]
        out = np.empty_like(x)
        for k in np.unique(reg):
            m = reg == k
            out[m] = self.model.b(x[m], int(k))
        return out

    def sigma(self, x, reg):
        if self.tables is not None:
            return self.tables[2][reg]
        d = self.model.dim
        out = np.empty(x.shape if d == 1 else x.shape + (d,))
        for k in np.unique(reg):
            m = reg == k
            out[m] = self.model.s(x[m], int(k))
        return out

    def noise(self, sig, z):
        if self.model.dim == 1:
            return sig * z
        return np.einsum("pij,pj->pi", sig, z)


def _chunks(n, size):
    return [(a, min(a + size, n)) for a in range(0, n, size)]


def _map_blocks(fn, blocks, threads):
    if threads is None or threads <= 1 or len(blocks) == 1:
        return [fn(b) for b in blocks]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, blocks))


# -- single process ---------------------------------------------------------

def simulate_path(model: RegimeModel, x0, i0, grid: SimulationGrid, seed, paths=1,
                  switching=None, store_jumps=False, threads=1, time_chunk=512, validate=True):
    """Simulate ``paths`` independent copies of (X, L) on ``grid``.

    ``switching`` is ``"exact"`` (constant Q only; event times exact, the
    regime used on a step is the one at its left end) or ``"thinning"``
    (proposals at the global rate bound accepted with probability
    q_{kl}(X)/bound, at most three proposals per step).  The default is exact
    for constant Q and thinning otherwise.  Thinning requires
    dt * bound < 0.1.
    """
    if validate:
        model.validate()
    if switching is None:
        switching = "thinning" if model.state_dependent else "exact"
    if switching == "exact" and model.state_dependent:
        raise ModelValidationError("exact switching needs state-independent rates")
    if switching == "thinning" and grid.dt * model.global_rate >= THINNING_GUARD:
        raise StepTooCoarseError(
            f"dt * rate bound = {grid.dt * model.global_rate:.3g} >= {THINNING_GUARD}"
        )
    x_all, i_all = _broadcast_start(x0, i0, paths, model.dim)
    n_reg = model.n_regimes
    if np.any(i_all < 0) or np.any(i_all >= n_reg):
        raise ValueError("initial regime out of range")
    stepper = _Stepper(model)
    steps = grid.record_steps
    grid_t = np.arange(grid.n_steps + 1) * grid.dt
    dt, sq = grid.dt, np.sqrt(grid.dt)
    d = model.dim
    table = _JumpTable(model.Q.rates) if switching == "exact" else None

    def run(block):
        a, b = block
        p = b - a
        x = x_all[a:b].copy()
        reg = i_all[a:b].copy()
        X = np.empty((p, steps.size) + (() if d == 1 else (d,)))
        R = np.empty((p, steps.size), dtype=np.int64)
        occ = np.zeros((p, n_reg))
        jumps = []
        if table is not None:
            reg_grid = np.empty((p, grid.n_steps + 1), dtype=np.int64)
            for k in range(p):
                buf = UniformBuffer(path_rng(seed, a + k, CHAIN_STREAM))
                t, s = table.path(reg[k], grid.horizon, buf)
                reg_grid[k] = _regimes_on_grid(t, s, grid_t)
                occ[k] = _occupation(t, s, grid.horizon, n_reg)
                if store_jumps:
                    jumps.append((t, s))
        else:
            trng = [path_rng(seed, a + k, THINNING_STREAM) for k in range(p)]
            cur_t = np.zeros(p)
            jt = [[0.0] for _ in range(p)]
            js = [[int(reg[k])] for k in range(p)]
        nrng = [path_rng(seed, a + k, NOISE_STREAM) for k in range(p)]
        rec = 0
        if steps[0] == 0:
            X[:, 0] = x
            R[:, 0] = reg
            rec = 1
        bound = model.global_rate
        for c0, c1 in _chunks(grid.n_steps, time_chunk):
            m = c1 - c0
            Z = np.stack([g.standard_normal((m,) + (() if d == 1 else (d,))) for g in nrng])
            if table is None:
                U = np.stack([g.random((m, 4)) for g in trng])
            for s_ in range(m):
                n = c0 + s_
                if table is not None:
                    reg = reg_grid[:, n]
                else:
                    # Poisson(bound * dt) proposals, capped at 3
                    lam = bound * dt
                    u0 = U[:, s_, 0]
                    e = np.exp(-lam)
                    counts = (u0 > e).astype(int) + (u0 > e * (1 + lam)).astype(int) \
                        + (u0 > e * (1 + lam + lam * lam / 2)).astype(int)
                    for j in range(3):
                        act = np.flatnonzero(counts > j)
                        for k in act:
                            q = model.rates_at(x[k])
                            row = q[reg[k]].copy()
                            row[reg[k]] = 0.0
                            cum = np.cumsum(row)
                            v = U[k, s_, 1 + j] * bound
                            if v < cum[-1]:
                                new = int(np.searchsorted(cum, v, side="right"))
                                if new != reg[k]:
                                    reg[k] = new
                                    jt[k].append((n + 1) * dt)
                                    js[k].append(new)
                    occ[np.arange(p), reg] += dt
                x = x + stepper.drift(x, reg) * dt + stepper.noise(stepper.sigma(x, reg), Z[:, s_]) * sq
                if rec < steps.size and steps[rec] == n + 1:
                    X[:, rec] = x
                    R[:, rec] = reg if table is None else reg_grid[:, n + 1]
                    rec += 1
        if table is None:
            occ /= grid.horizon
            if store_jumps:
                jumps = [(np.array(jt[k]), np.array(js[k], dtype=np.int64)) for k in range(p)]
        return X, R, occ, jumps

    blocks = _chunks(paths, max(1, -(-paths // max(1, threads))))
    out = _map_blocks(run, blocks, threads)
    X = np.concatenate([o[0] for o in out])
    R = np.concatenate([o[1] for o in out])
    occ = np.concatenate([o[2] for o in out])
    jumps = tuple(j for o in out for j in o[3]) if store_jumps else None
    return TrajectoryBatch(_ro(grid.times), _ro(X), _ro(R), int(seed), grid,
                           occupation=_ro(occ), jumps=jumps, switching=switching)


def burn_in(model: RegimeModel, x0, i0, time, dt, seed, paths, threads=1):
    """Approximate stationary samples: endpoints of paths run for ``time``."""
    g = SimulationGrid(dt, time, record_every=int(round(time / dt)))
    b = simulate_path(model, x0, i0, g, seed, paths=paths, threads=threads)
    return np.asarray(b.X[:, -1]).copy(), np.asarray(b.regime[:, -1]).copy()


# -- coupled process --------------------------------------------------------

def reflection_coupling_1d(a1, a2):
    """Coupled diffusion block [[a1, c], [c, a2]] with c = -sqrt(a1 a2)."""
    a1 = np.asarray(a1, dtype=float)
    a2 = np.asarray(a2, dtype=float)
    if np.any(a1 <= 0) or np.any(a2 <= 0):
        raise NonPositiveDiffusionError("reflection coupling needs positive diffusion coefficients")
    c = -np.sqrt(a1 * a2)
    return np.stack([np.stack([a1, c], axis=-1), np.stack([c, a2], axis=-1)], axis=-2)


def simulate_coupled_pair(model: RegimeModel, start_x, start_y, grid: SimulationGrid, seed, paths=1,
                          coupling="reflection", meet_tol=1e-9, threads=1, time_chunk=512,
                          validate=True):
    """Simulate the coupled quadruple (X, L, Y, L').

    ``start_x = (x, i)`` and ``start_y = (y, j)``; positions and regimes may be
    arrays with one entry per path.  The chains follow the classical coupling
    (exact events).  While L != L' the diffusions use independent noise;
    once L = L' they use reflection (dY = b dt - sigma dB) in d = 1, or stay
    independent when ``coupling="independent"``.  With equal regimes the
    diffusions are glued at the end of the first step where X - Y changes
    sign or |X - Y| < meet_tol.
    """
    if validate:
        model.validate()
    if model.state_dependent:
        raise ModelValidationError("coupled simulation needs state-independent switching")
    if coupling not in ("reflection", "independent"):
        raise ValueError(f"unknown coupling {coupling!r}")
    d = model.dim
    if coupling == "reflection" and d > 1:
        raise UnsupportedCouplingDimensionError("reflection coupling is implemented for d = 1 only")
    x_all, i_all = _broadcast_start(start_x[0], start_x[1], paths, d)
    y_all, j_all = _broadcast_start(start_y[0], start_y[1], paths, d)
    n = model.n_regimes
    C = classical_coupling(model.Q)
    table = _JumpTable(C.rates)
    stepper = _Stepper(model)
    steps = grid.record_steps
    grid_t = np.arange(grid.n_steps + 1) * grid.dt
    dt, sq = grid.dt, np.sqrt(grid.dt)
    reflect = coupling == "reflection"
    diag = np.zeros(n * n, dtype=bool)
    diag[C.diagonal_states] = True

    def run(block):
        a, b = block
        p = b - a
        x, y = x_all[a:b].copy(), y_all[a:b].copy()
        pair_grid = np.empty((p, grid.n_steps + 1), dtype=np.int64)
        tau = np.empty(p)
        for k in range(p):
            buf = UniformBuffer(path_rng(seed, a + k, CHAIN_STREAM))
            s0 = int(i_all[a + k]) * n + int(j_all[a + k])
            t, s = table.path(s0, grid.horizon, buf)
            pair_grid[k] = _regimes_on_grid(t, s, grid_t)
            hit = np.flatnonzero(diag[s])
            tau[k] = t[hit[0]] if hit.size else np.inf
        reg1, reg2 = pair_grid // n, pair_grid % n
        shape = (p, steps.size) + (() if d == 1 else (d,))
        X, Y = np.empty(shape), np.empty(shape)
        met = np.zeros(p, dtype=bool)
        if d == 1:
            met |= (reg1[:, 0] == reg2[:, 0]) & (np.abs(x - y) < meet_tol)
        else:
            met |= (reg1[:, 0] == reg2[:, 0]) & (np.linalg.norm(x - y, axis=1) < meet_tol)
        y[met] = x[met]
        meet = np.where(met, 0.0, np.inf)
        nrng = [path_rng(seed, a + k, NOISE_STREAM) for k in range(p)]
        rec = 0
        if steps[0] == 0:
            X[:, 0], Y[:, 0] = x, y
            rec = 1
        for c0, c1 in _chunks(grid.n_steps, time_chunk):
            m = c1 - c0
            Z = np.stack([g.standard_normal((m, 2) + (() if d == 1 else (d,))) for g in nrng])
            for s_ in range(m):
                st = c0 + s_
                r1, r2 = reg1[:, st], reg2[:, st]
                same = r1 == r2
                z1 = Z[:, s_, 0]
                z2 = Z[:, s_, 1].copy()
                if reflect:
                    z2[same] = -z1[same]
                dx = stepper.drift(x, r1) * dt + stepper.noise(stepper.sigma(x, r1), z1) * sq
                dy = stepper.drift(y, r2) * dt + stepper.noise(stepper.sigma(y, r2), z2) * sq
                diff_old = x - y
                x = x + dx
                y = y + dy
                if met.any():
                    y[met] = x[met]
                if reflect:
                    diff = x - y
                    newly = same & ~met & ((np.sign(diff) != np.sign(diff_old)) | (np.abs(diff) < meet_tol))
                else:
                    dist = np.abs(x - y) if d == 1 else np.linalg.norm(x - y, axis=1)
                    newly = same & ~met & (dist < meet_tol)
                if newly.any():
                    y[newly] = x[newly]
                    met |= newly
                    meet[newly] = (st + 1) * dt
                if rec < steps.size and steps[rec] == st + 1:
                    X[:, rec], Y[:, rec] = x, y
                    rec += 1
        return X, Y, reg1[:, steps], reg2[:, steps], tau, meet

    blocks = _chunks(paths, max(1, -(-paths // max(1, threads))))
    out = _map_blocks(run, blocks, threads)
    cat = [np.concatenate([o[k] for o in out]) for k in range(6)]
    return TrajectoryBatch(_ro(grid.times), _ro(cat[0]), _ro(cat[2]), int(seed), grid,
                           Y=_ro(cat[1]), regime2=_ro(cat[3]), tau=_ro(cat[4]), meet_time=_ro(cat[5]))


# -- generator evaluations --------------------------------------------------

def apply_coupling_generator(model: RegimeModel, i, rho: RhoFunction, x, y, floor=1e-12):
    """Reflection-coupling generator applied to rho(|x - y|) in regime i (d = 1).

    1/2 (sqrt a(x) + sqrt a(y))^2 rho''(r) + sign(x - y)(b(x) - b(y)) rho'(r),
    r = |x - y|, a = sigma^2.
    """
    if model.dim != 1:
        raise UnsupportedCouplingDimensionError("analytic coupling generator is for d = 1")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    r = np.abs(x - y)
    if np.any(r < max(floor, rho.eps)):
        raise CoincidencePointError(f"|x - y| below the floor {max(floor, rho.eps):.1e}")
    sx = np.abs(model.s(x, i))
    sy = np.abs(model.s(y, i))
    return (0.5 * (sx + sy) ** 2 * rho.second_derivative(r)
            + np.sign(x - y) * (model.b(x, i) - model.b(y, i)) * rho.derivative(r))


@dataclass(frozen=True)
class A1Report:
    """Per-regime observed beta_hat = max L~rho / rho over the grid."""

    beta_hat: np.ndarray
    declared: np.ndarray | None
    passed: np.ndarray | None
    witness: tuple
    failures: tuple

    @property
    def all_passed(self):
        return bool(self.passed is not None and self.passed.all())

    def to_dict(self):
        return {
            "beta_hat": self.beta_hat.tolist(),
            "declared": None if self.declared is None else self.declared.tolist(),
            "passed": None if self.passed is None else self.passed.tolist(),
            "witness": [list(w) for w in self.witness],
            "failures": [list(f) for f in self.failures],
        }


def _pair_grid(radius, n, margin):
    g = np.linspace(-radius, radius, n)
    x, y = np.meshgrid(g, g, indexing="ij")
    x, y = x.ravel(), y.ravel()
    keep = np.abs(x - y) >= margin
    return x[keep], y[keep]


def verify_A1(model: RegimeModel, rho: RhoFunction, grid=None, declared=None, tol=1e-8,
              radius=10.0, n=121, margin=1e-3, max_failures=20):
    """Estimate beta_i in L~^(i) rho(|x - y|) <= beta_i rho(|x - y|).

    ``grid`` is a pair of arrays (x, y) with |x - y| >= margin; the default
    is an n x n lattice on [-radius, radius]^2 minus the diagonal band.
    """
    x, y = grid if grid is not None else _pair_grid(radius, n, margin)
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    declared = model.beta if declared is None else declared
    dec = None if declared is None else np.asarray(declared, dtype=float)
    rr = rho(np.abs(x - y))
    bh, wit, fails, ok = [], [], [], []
    for i in range(model.n_regimes):
        ratio = apply_coupling_generator(model, i, rho, x, y) / rr
        k = int(np.argmax(ratio))
        bh.append(float(ratio[k]))
        wit.append((float(x[k]), float(y[k])))
        if dec is not None:
            bad = np.flatnonzero(ratio > dec[i] + tol)
            ok.append(bad.size == 0)
            fails += [(i, float(x[j]), float(y[j]), float(ratio[j])) for j in bad[:max_failures]]
    return A1Report(np.array(bh), dec, None if dec is None else np.array(ok), tuple(wit), tuple(fails))


@dataclass(frozen=True)
class HReport:
    """Per-regime fits of L rho(|x|) <= theta rho(|x|) + K on a grid."""

    theta_hat: np.ndarray
    K_hat: np.ndarray
    declared_theta: np.ndarray | None
    declared_K: np.ndarray | None
    passed: np.ndarray | None

    @property
    def all_passed(self):
        return bool(self.passed is not None and self.passed.all())

    def to_dict(self):
        f = lambda a: None if a is None else np.asarray(a).tolist()
        return {"theta_hat": f(self.theta_hat), "K_hat": f(self.K_hat),
                "declared_theta": f(self.declared_theta), "declared_K": f(self.declared_K),
                "passed": f(self.passed)}


def one_process_generator(model: RegimeModel, i, rho: RhoFunction, x):
    """L^(i) rho(|x|) = 1/2 tr(a Hess) + b . grad for x != 0."""
    x = np.asarray(x, dtype=float)
    if model.dim == 1:
        r = np.abs(x)
        s = model.s(x, i)
        return 0.5 * s * s * rho.second_derivative(r) + np.sign(x) * model.b(x, i) * rho.derivative(r)
    r = np.linalg.norm(x, axis=1)
    u = x / r[:, None]
    s = model.s(x, i)
    a = np.einsum("pij,pkj->pik", s, s)
    d1, d2 = rho.derivative(r), rho.second_derivative(r)
    uau = np.einsum("pi,pij,pj->p", u, a, u)
    tr = np.trace(a, axis1=1, axis2=2)
    lap = d2 * uau + d1 / r * (tr - uau)
    return 0.5 * lap + np.einsum("pi,pi->p", model.b(x, i), u) * d1


def verify_H(model: RegimeModel, rho: RhoFunction, grid=None, theta=None, K=None, tol=1e-8,
             radius=10.0, n=2001, margin=1e-3):
    """Fit (theta_i, K_i) in L^(i) rho(|x|) <= theta_i rho(|x|) + K_i.

    With declared theta, K_hat is the minimal K (clipped at 0); with declared
    K, theta_hat is the minimal theta; with neither, theta_hat is the largest
    ratio on the outer half of the grid and K_hat the minimal K for it.  With both declared, pass iff the inequality holds on the grid up
    to ``tol``.
    """
    if grid is None:
        if model.dim != 1:
            raise ValueError("a grid is required for d > 1")
        g = np.linspace(-radius, radius, n)
        grid = g[np.abs(g) >= margin]
    x = np.asarray(grid, dtype=float)
    theta = model.theta if theta is None else theta
    K = model.K if K is None else K
    th = None if theta is None else np.asarray(theta, dtype=float)
    kk = None if K is None else np.asarray(K, dtype=float)
    rr = rho(np.abs(x) if model.dim == 1 else np.linalg.norm(x, axis=1))
    t_hat, k_hat, ok = [], [], []
    for i in range(model.n_regimes):
        L = one_process_generator(model, i, rho, x)
        if th is not None:
            ti = th[i]
            ki = max(float(np.max(L - ti * rr)), 0.0)
        elif kk is not None:
            ki = kk[i]
            ti = float(np.max((L - ki) / rr))
        else:
            # growth rate from the outer half of the grid, then the minimal K
            size = np.abs(x) if model.dim == 1 else np.linalg.norm(x, axis=1)
            outer = size >= 0.5 * size.max()
            ti = float(np.max(L[outer] / rr[outer]))
            ki = max(float(np.max(L - ti * rr)), 0.0)
        if th is not None and kk is not None:
            ok.append(bool(np.all(L <= th[i] * rr + kk[i] + tol * (1 + np.abs(L)))))
            # still report the fitted values
            t_hat.append(float(np.max((L - kk[i]) / rr)))
            k_hat.append(ki)
        else:
            t_hat.append(float(ti))
            k_hat.append(float(ki))
    passed = np.array(ok) if ok else None
    return HReport(np.array(t_hat), np.array(k_hat), th, kk, passed)
