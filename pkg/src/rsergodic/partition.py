"""Finite-partition reduction of a countable regime set.

Regimes are grouped into blocks by their contraction constants; the chain is
projected to a chain on blocks by taking, for each block pair, the least
favourable aggregated jump rate (inf upward, sup downward).  The block
criterion, its extension back to the regime set, refinement consistency and
the x-dependent variant live here.

A truncated countable chain is represented by its first T states plus
declared information about the truncated-away tail (its beta range and, for
each reduced entry that depends on tail rows, a bound on the tail's
aggregated rates).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .chains import GeneratorMatrix
from .errors import (
    MapNotRefinementError,
    PartitionInfeasibleError,
    UnboundedRatesError,
    UncertifiedTailError,
    XiInfeasibleError,
)
from .spectra import (
    MMatrixReport,
    XiCertificate,
    find_xi,
    is_nonsingular_mmatrix,
    semipositive_lp,
    xi_certificate_from_vector,
)

__all__ = [
    "Partition",
    "build_partition",
    "ReducedGenerator",
    "reduced_generator",
    "h_matrix",
    "TminfiCheck",
    "check_theorem_tminfi",
    "RefinementReport",
    "check_refinement",
    "state_dependent_reduced_generator",
    "parse_thresholds",
]


def parse_thresholds(text):
    """Parse a comma-separated threshold grid such as ``"-0.5,0"``."""
    parts = [s.strip() for s in str(text).split(",") if s.strip()]
    try:
        vals = [float(s) for s in parts]
    except ValueError as exc:
        raise ValueError(f"bad threshold list {text!r}") from exc
    return tuple(vals)


@dataclass(frozen=True)
class Partition:
    """Blocks F_1..F_{m+1} of the (truncated) regime set.

    ``thresholds`` are k_1 < ... < k_{m+1} = M after empty-block deletion;
    block i collects the regimes with value in (k_{i-1}, k_i] (k_0 = -inf).
    ``values`` are the block sups.  When ``tail_block`` is set, the
    truncated-away states are declared to lie in that block and the tail sup
    ``tail_sup`` is folded into its value.
    """

    thresholds: tuple
    blocks: tuple
    phi: np.ndarray
    values: np.ndarray
    deleted: tuple = ()
    tail_block: int | None = None
    tail_sup: float | None = None

    @property
    def n_blocks(self):
        return len(self.blocks)

    @property
    def n_states(self):
        return self.phi.size

    def indicator(self):
        """N x (m+1) 0/1 matrix with entry (r, i) = 1{r in F_i}."""
        E = np.zeros((self.n_states, self.n_blocks))
        E[np.arange(self.n_states), self.phi] = 1.0
        return E

    def extend(self, xi_F):
        """Block-constant extension xi_r = xi^F_{phi(r)}."""
        return np.asarray(xi_F, dtype=float)[self.phi]

    def to_dict(self):
        return {
            "thresholds": list(self.thresholds),
            "blocks": [list(map(int, b)) for b in self.blocks],
            "phi": self.phi.tolist(),
            "values": self.values.tolist(),
            "deleted_thresholds": list(self.deleted),
            "tail_block": self.tail_block,
            "tail_sup": self.tail_sup,
        }


def build_partition(values, thresholds=(0.0,), tail_sup=None):
    """Partition regimes by ``values`` (beta_j or theta_j) on a threshold grid.

    The top threshold M is the sup of the values, including the declared
    ``tail_sup`` of a truncated tail.  Interior thresholds at or above M and
    thresholds that leave a block empty are deleted and reported.
    """
    v = np.asarray(values, dtype=float)
    if v.ndim != 1 or v.size == 0 or not np.all(np.isfinite(v)):
        raise ValueError("values must be a non-empty finite vector")
    M = float(v.max()) if tail_sup is None else max(float(v.max()), float(tail_sup))
    ks = np.asarray(sorted(set(float(t) for t in thresholds)), dtype=float)
    deleted = [float(t) for t in ks if t >= M]
    ks = np.append(ks[ks < M], M)

    while True:
        phi = np.searchsorted(ks, v, side="left")
        counts = np.bincount(phi, minlength=ks.size)
        if tail_sup is not None:
            counts[int(np.searchsorted(ks, tail_sup, side="left"))] += 1
        empty = np.flatnonzero(counts == 0)
        if empty.size == 0:
            break
        # merge an empty block into its upper neighbour by deleting its top
        k = int(empty[0])
        deleted.append(float(ks[k]))
        ks = np.delete(ks, k)

    blocks = tuple(np.flatnonzero(phi == i) for i in range(ks.size))
    vals = np.array([v[b].max() if b.size else -np.inf for b in blocks])
    tail_block = None
    if tail_sup is not None:
        tail_block = int(np.searchsorted(ks, tail_sup, side="left"))
        vals[tail_block] = max(vals[tail_block], float(tail_sup))
    return Partition(tuple(float(k) for k in ks), blocks, phi.astype(np.int64), vals,
                     tuple(deleted), tail_block, None if tail_sup is None else float(tail_sup))


# -- reduced generator ------------------------------------------------------

@dataclass(frozen=True)
class ReducedGenerator:
    """Q^F on blocks with per-entry provenance."""

    rates: np.ndarray
    provenance: dict = field(default_factory=dict)

    @property
    def size(self):
        return self.rates.shape[0]

    def to_dict(self):
        return {
            "rates": self.rates.tolist(),
            "provenance": {f"{i},{k}": p for (i, k), p in sorted(self.provenance.items())},
        }


def _reduce(lower, upper, P: Partition, tail_bounds, monotone_tail, source):
    """Assemble Q^F from per-row lower/upper bounds of block-aggregated rates.

    ``lower[r, k]`` and ``upper[r, k]`` bound sum_{j in F_k} q_rj over the
    admissible x (equal for x-independent rates).
    """
    m1 = P.n_blocks
    QF = np.zeros((m1, m1))
    prov = {}
    tail_bounds = {} if tail_bounds is None else {tuple(map(int, k)): float(v) for k, v in tail_bounds.items()}
    for i, rows in enumerate(P.blocks):
        for k in range(m1):
            if k == i:
                continue
            if k > i:
                vals = lower[rows, k]
                pos = int(np.argmin(vals)) if rows.size else None
                val = float(vals[pos]) if rows.size else np.inf
                op = "inf"
            else:
                vals = upper[rows, k]
                pos = int(np.argmax(vals)) if rows.size else None
                val = float(vals[pos]) if rows.size else -np.inf
                op = "sup"
            entry = {"op": op, "source": source, "rows": rows.tolist(),
                     "extremal_row": None if pos is None else int(rows[pos])}
            if P.tail_block == i:
                if (i, k) in tail_bounds:
                    tb = tail_bounds[(i, k)]
                    val = min(val, tb) if op == "inf" else max(val, tb)
                    entry["tail"] = {"declared_bound": tb}
                elif monotone_tail:
                    entry["tail"] = "declared monotone: truncation rows attain the extremum"
                else:
                    raise UncertifiedTailError(
                        f"entry ({i},{k}) of the reduced generator needs a tail bound for truncated block {i}"
                    )
            QF[i, k] = max(val, 0.0)
            prov[(i, k)] = entry
    QF[np.diag_indices(m1)] = -QF.sum(axis=1)
    QF.setflags(write=False)
    return ReducedGenerator(QF, prov)


def reduced_generator(Q: GeneratorMatrix, P: Partition, tail_bounds=None, monotone_tail=False):
    """q^F_ik = inf_{r in F_i} sum_{j in F_k} q_rj for k > i, sup for k < i.

    If ``P`` has a truncated tail block, each off-diagonal entry in that
    block's row needs either a declared bound in ``tail_bounds[(i, k)]`` on
    the tail rows' aggregated rate, or ``monotone_tail=True``.
    """
    if Q.size != P.n_states:
        raise ValueError(f"partition covers {P.n_states} states, generator has {Q.size}")
    S = Q.rates @ P.indicator()
    return _reduce(S, S, P, tail_bounds, monotone_tail, "exact")


def state_dependent_reduced_generator(P: Partition, *, bounds=None, rates=None, grid=None,
                                      modulus=None, mesh=None, rate_bound=None,
                                      tail_bounds=None, monotone_tail=False):
    """Q^F for x-dependent rates: double inf (upward) and double sup (downward).

    Supply either ``bounds=(lower, upper)``, analytic ranges over x of
    sum_{j in F_k} q_rj(x) as N x (m+1) arrays, or a callable ``rates(x)``
    returning the N x N matrix at x with a sampling ``grid`` and a Lipschitz
    ``modulus`` for x -> q_rj(x).  Grid extrema are widened by
    modulus * mesh * (block size) where ``mesh`` is the covering radius of the
    grid (half the largest gap for a sorted 1-d grid).  The grid is assumed
    to cover every x where the rates vary.
    """
    N = P.n_states
    if bounds is not None:
        lower, upper = (np.asarray(b, dtype=float) for b in bounds)
        if lower.shape != (N, P.n_blocks) or upper.shape != lower.shape:
            raise ValueError("bounds must be two arrays of shape (N, m+1)")
        if np.any(lower > upper):
            raise ValueError("lower bounds exceed upper bounds")
        src = "analytic"
    else:
        if rates is None or grid is None or modulus is None:
            raise ValueError("give bounds=(lower, upper) or rates, grid and modulus")
        pts = np.asarray(grid, dtype=float)
        if mesh is None:
            if pts.ndim != 1:
                raise ValueError("mesh must be given for multi-dimensional grids")
            s = np.sort(pts)
            mesh = 0.5 * float(np.diff(s).max()) if s.size > 1 else 0.0
        E = P.indicator()
        agg = np.array([np.asarray(rates(x), dtype=float) @ E for x in pts])
        exits = np.array([-np.diag(np.asarray(rates(x), dtype=float)) for x in pts])
        if rate_bound is not None and exits.max() > rate_bound:
            raise UnboundedRatesError(
                f"grid exit rate {exits.max():.6g} exceeds declared bound {rate_bound:.6g}"
            )
        sizes = np.array([b.size for b in P.blocks], dtype=float)
        slack = float(modulus) * float(mesh) * sizes[None, :]
        lower = agg.min(axis=0) - slack
        upper = agg.max(axis=0) + slack
        if rate_bound is not None:
            upper = np.minimum(upper, rate_bound)
        src = "grid"
    if rate_bound is not None:
        off = upper.copy()
        off[np.arange(N), P.phi] = 0.0
        if off.max() > rate_bound:
            raise UnboundedRatesError(f"aggregated rate {off.max():.6g} exceeds declared bound {rate_bound:.6g}")
    return _reduce(lower, upper, P, tail_bounds, monotone_tail, src)


def h_matrix(n):
    """Upper-triangular all-ones matrix of order n."""
    return np.triu(np.ones((n, n)))


# -- block criterion --------------------------------------------------------

@dataclass(frozen=True)
class TminfiCheck:
    """Outcome of the block criterion and its extension to the regime set.

    ``verdict`` is: block values strictly increasing and -(Q^F + diag beta^F)
    a nonsingular M-matrix.  The H-product has the same leading minors
    (H is unit upper triangular), reported in ``h_minors``.

    ``certificate`` is an xi-certificate verified on the (truncated) regime
    set when one is resolved; ``witness_source`` records where it came from:
    ``"h-route"`` (xi^F = H eta^F, decreasing), ``"block-lp"`` (reduced LP
    witness extended block-constant) or ``"direct"`` (LP on the truncated
    chain).  ``soundness_gap`` is max_r [Q xi(r) - (Q^F xi^F)(phi(r))] for a
    block-constant witness; it is <= 0 when the reduction bound holds row by
    row.  Without the chain, ``extension_sound`` tells whether the block
    witness is non-increasing, the order under which the inf/sup reduction
    bounds the chain row by row.
    """

    verdict: bool
    increasing: bool
    report: MMatrixReport
    h_product: np.ndarray
    h_minors: np.ndarray
    xi_F: np.ndarray | None
    eta_F: np.ndarray | None
    certificate: XiCertificate | None
    witness_source: str | None
    soundness_gap: float | None
    attempts: dict
    extension_sound: bool | None = None

    def to_dict(self):
        return {
            "verdict": self.verdict,
            "beta_F_increasing": self.increasing,
            "mmatrix": self.report.to_dict(),
            "h_product": self.h_product.tolist(),
            "h_minors": self.h_minors.tolist(),
            "xi_F": None if self.xi_F is None else self.xi_F.tolist(),
            "eta_F": None if self.eta_F is None else self.eta_F.tolist(),
            "certificate": None if self.certificate is None else self.certificate.to_dict(),
            "witness_source": self.witness_source,
            "soundness_gap": self.soundness_gap,
            "attempts": dict(self.attempts),
            "extension_sound": self.extension_sound,
        }


def _as_rates(QF):
    return np.asarray(QF.rates if hasattr(QF, "rates") else QF, dtype=float)


def check_theorem_tminfi(QF, beta_F, Q: GeneratorMatrix | None = None, beta=None,
                         partition: Partition | None = None):
    """Block criterion with witness resolution.

    With only reduced data the witness is verified on the block system.  With
    the truncated chain ``Q``, its ``beta`` and the ``partition``, candidates
    are verified on the chain itself, trying the H-route, then the
    block-constant extension of the reduced witness, then a direct LP.
    Raises :class:`PartitionInfeasibleError` when the criterion fails.
    """
    q = _as_rates(QF)
    bF = np.asarray(beta_F, dtype=float)
    n = q.shape[0]
    Z = -(q + np.diag(bF))
    H = h_matrix(n)
    B = Z @ H
    h_minors = np.array([np.linalg.det(B[:k, :k]) for k in range(1, n + 1)])
    increasing = bool(np.all(np.diff(bF) > 0))
    report = is_nonsingular_mmatrix(Z)
    verdict = increasing and report.verdict
    if not verdict:
        why = "block values not strictly increasing" if not increasing else report.failing
        raise PartitionInfeasibleError(
            f"block criterion fails: {why}",
            {"mmatrix": report.to_dict(), "h_minors": h_minors.tolist(), "beta_F_increasing": increasing},
        )

    full = Q is not None
    if full and (beta is None or partition is None):
        raise ValueError("Q, beta and partition must be given together")
    attempts = {}
    candidates = []
    hlp = semipositive_lp(B)
    if hlp.feasible:
        candidates.append(("h-route", H @ hlp.x, hlp.x))
    else:
        attempts["h-route"] = "no eta >> 0 with (Q^F + diag beta^F) H eta << 0"
    if report.witness is not None:
        candidates.append(("block-lp", report.witness, None))

    def check_block(xiF):
        lam = q @ xiF + bF * xiF
        return bool(np.all(xiF > 0) and np.all(lam < 0))

    cert = xi_F = eta_F = source = gap = None
    for name, cand, eta in candidates:
        if not check_block(cand):
            attempts[name] = "fails on the block system"
            continue
        if not full:
            lam = q @ cand + bF * cand
            cert = XiCertificate(cand, lam, float(cand.max() / cand.min()), float(-lam.max() / cand.max()))
        else:
            xi = partition.extend(cand)
            try:
                cert = xi_certificate_from_vector(Q, beta, xi)
            except XiInfeasibleError:
                lam = Q.apply(xi) + np.asarray(beta) * xi
                attempts[name] = f"extension fails on {int(np.sum(lam >= 0))} regimes"
                cert = None
                continue
            gap = float(np.max(Q.apply(xi) - (q @ cand)[partition.phi]))
        xi_F, eta_F, source = cand, eta, name
        break
    if cert is None and full:
        try:
            cert = find_xi(Q, beta)
            source = "direct"
        except XiInfeasibleError as exc:
            attempts["direct"] = str(exc)
    if full:
        sound = cert is not None
    else:
        sound = None if xi_F is None else bool(np.all(np.diff(xi_F) <= 0))
    return TminfiCheck(verdict, increasing, report, B, h_minors, xi_F, eta_F, cert, source, gap, attempts, sound)


# -- refinement -------------------------------------------------------------

@dataclass(frozen=True)
class RefinementReport:
    """(q-ff) check and witness propagation from a coarse to a fine partition.

    ``claim`` is True when (q-ff) holds, the coarse system has a
    non-decreasing witness and the propagated fine witness verifies; None
    when no claim is made.
    """

    qff_holds: bool
    violations: list
    coarse_feasible: bool
    coarse_xi: np.ndarray | None
    fine_xi: np.ndarray | None
    fine_verified: bool | None
    fine_lp_feasible: bool | None
    fine_mmatrix: bool | None
    claim: bool | None
    note: str

    def to_dict(self):
        return {
            "qff_holds": self.qff_holds,
            "violations": self.violations,
            "coarse_feasible": self.coarse_feasible,
            "coarse_xi": None if self.coarse_xi is None else self.coarse_xi.tolist(),
            "fine_xi": None if self.fine_xi is None else self.fine_xi.tolist(),
            "fine_verified": self.fine_verified,
            "fine_lp_feasible": self.fine_lp_feasible,
            "fine_mmatrix": self.fine_mmatrix,
            "claim": self.claim,
            "note": self.note,
        }


def check_refinement(coarse, fine, block_map, atol=1e-12):
    """Check (q-ff) between coarse (Q^F, beta^F) and fine (Q^F~, beta^F~).

    ``block_map[k]`` is the coarse block containing fine block k.  The
    propagation xi^F~_k = xi^F_{map(k)} needs a coarse witness that is
    non-decreasing in the block index, so the coarse LP is solved with that
    order constraint.  The fine witness is then re-verified directly and the
    fine system is independently tested by LP and by the M-matrix routes.
    """
    qc, bc = _as_rates(coarse[0]), np.asarray(coarse[1], dtype=float)
    qf, bf = _as_rates(fine[0]), np.asarray(fine[1], dtype=float)
    mp = np.asarray(block_map, dtype=np.int64)
    m, n = qc.shape[0], qf.shape[0]
    if mp.shape != (n,):
        raise MapNotRefinementError(f"block map has shape {mp.shape}, expected ({n},)")
    if mp.min() < 0 or mp.max() >= m:
        raise MapNotRefinementError("block map refers to a missing coarse block")
    if np.unique(mp).size != m:
        raise MapNotRefinementError("some coarse block contains no fine block")
    if np.any(np.diff(mp) < 0):
        raise MapNotRefinementError("block map is not order preserving")
    if np.any(bf > bc[mp] + atol * max(1.0, np.abs(bc).max())):
        raise MapNotRefinementError("a fine block value exceeds its coarse block value")

    tol = atol * max(1.0, np.abs(qc).max(), np.abs(qf).max())
    violations = []
    E = np.zeros((n, m))
    E[np.arange(n), mp] = 1.0
    agg = qf @ E  # agg[k, j] = sum over fine l inside coarse j of q~_kl
    for k in range(n):
        i = mp[k]
        for j in range(m):
            if j > i and qc[i, j] < agg[k, j] - tol:
                violations.append({"fine": k, "coarse_from": int(i), "coarse_to": j,
                                   "coarse_rate": float(qc[i, j]), "fine_aggregate": float(agg[k, j])})
            elif j < i and qc[i, j] > agg[k, j] + tol:
                violations.append({"fine": k, "coarse_from": int(i), "coarse_to": j,
                                   "coarse_rate": float(qc[i, j]), "fine_aggregate": float(agg[k, j])})
    qff = not violations

    lp_c = semipositive_lp(-(qc + np.diag(bc)), monotone="increasing")
    coarse_xi = lp_c.x
    if not qff:
        return RefinementReport(False, violations, lp_c.feasible, coarse_xi, None, None, None, None,
                                None, "(q-ff) fails; no claim about the fine system")
    if coarse_xi is None:
        return RefinementReport(True, [], False, None, None, None, None, None, None,
                                "coarse system has no non-decreasing witness; no claim")
    fine_xi = coarse_xi[mp]
    lam = qf @ fine_xi + bf * fine_xi
    verified = bool(np.all(lam < 0))
    Zf = -(qf + np.diag(bf))
    fine_lp = semipositive_lp(Zf).feasible
    fine_mm = is_nonsingular_mmatrix(Zf).verdict
    return RefinementReport(True, [], True, coarse_xi, fine_xi, verified, fine_lp, fine_mm,
                            verified, "propagated witness" + (" verified" if verified else " FAILED"))
