"""Constraint-qualification checks at a feasible point.

Notation, used across this module and the sparse/penalty ones: at a
feasible point x of G(x) PSD, let E be an orthonormal basis of
Ker G(x) with m - r columns (r the rank).  For kernel columns e_i, e_j
the vector

    v_ij = ( e_i^T D_1 G(x) e_j, ..., e_i^T D_n G(x) e_j )  in R^n

is the gradient of entry (i, j) of the kernel-compressed map
E^T G(.) E at x.  The checks below are statements about linear or
positive-linear independence of such families:

* nondegeneracy: {v_ij : i <= j} independent for one (any) basis,
* Robinson: {v_ii} positively independent for every basis, equivalently
  there is a direction d with G(x) + DG(x)[d] positive definite,
* with equality constraints, gradients of the h_i join every family
  (free-signed in the positive-independence tests).

Verdicts distinguish certified outcomes from sampled evidence, and a
Fails always carries a witness that reproduces the violation when
plugged back into the defining condition.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import symmat
from .errors import InfeasiblePointError, NotPsdError
from .lp import phase_one
from .model import NsdpProblem, structurally_diagonal
from .symmat import (
    KernelBasis,
    Provenance,
    SymMat,
    eigh,
    kernel_basis,
    random_rotation,
    rotate_basis,
)

TAU_RANK = symmat.TAU_RANK
LI_TOL = 1e-8
PRIMAL_MARGIN = 1e-6
DUAL_FAIL_TOL = 1e-7


class CqStatus(str, Enum):
    HOLDS_CERTIFIED = "HoldsCertified"
    HOLDS_SAMPLED = "HoldsSampled"
    FAILS = "Fails"
    UNDETERMINED = "Undetermined"


@dataclass
class CqVerdict:
    status: CqStatus
    samples: Optional[int] = None     # for HoldsSampled: how much evidence
    reason: Optional[str] = None
    witness: Optional[dict] = None
    log: List[str] = field(default_factory=list)

    @property
    def holds(self) -> bool:
        return self.status in (CqStatus.HOLDS_CERTIFIED, CqStatus.HOLDS_SAMPLED)

    def to_json(self) -> dict:
        out = {"status": self.status.value}
        if self.samples is not None:
            out["samples"] = self.samples
        if self.reason:
            out["reason"] = self.reason
        if self.witness is not None:
            out["witness"] = _jsonify(self.witness)
        if self.log:
            out["log"] = list(self.log)
        return out


def _jsonify(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonify(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonify(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonify(obj.tolist())
    if isinstance(obj, SymMat):
        return _jsonify(obj.a.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    return obj


# ---------------------------------------------------------------------------
# feasibility and kernel data


@dataclass(frozen=True)
class FeasibilityData:
    eigenvalues: np.ndarray
    rank: int
    kernel: KernelBasis
    tau_kernel: float


def feasibility_data(P: NsdpProblem, x, tol_rank: float = TAU_RANK) -> FeasibilityData:
    """Spectral data of G(x) with a feasibility gate.

    Raises :class:`InfeasiblePointError` when G(x) has an eigenvalue
    below -tau, with tau = tol_rank * (1 + max eigenvalue magnitude).
    """
    x = np.asarray(x, dtype=float)
    G = P.constraint_value(x)
    spec = eigh(G)
    tau = tol_rank * (1.0 + G.norm_inf())
    lam_min = float(spec.values[-1])
    if lam_min < -tau:
        raise InfeasiblePointError(
            f"point infeasible: min eigenvalue of G(x) is {lam_min:.6e} "
            f"(tolerance {-tau:.1e})",
            eigenvalues=spec.values.tolist(),
        )
    try:
        kb = kernel_basis(G, tol_rank)
    except NotPsdError as exc:
        # gate and kernel threshold use slightly different scales; a point
        # in the sliver between them is still infeasible for our purposes
        raise InfeasiblePointError(str(exc), eigenvalues=spec.values.tolist())
    return FeasibilityData(eigenvalues=spec.values, rank=kb.rank,
                           kernel=kb, tau_kernel=tau)


# ---------------------------------------------------------------------------
# the gradient family of kernel-compressed entries


class EntryGradientFamily:
    """Gradients v_ij of the entries of E^T G(.) E at a point.

    Built in one pass from the stacked constraint partials; vectors are
    indexed by kernel column pairs (i, j) with i <= j.
    """

    def __init__(self, point: np.ndarray, basis: KernelBasis,
                 vecs: Dict[Tuple[int, int], np.ndarray]):
        self.point = point
        self.basis = basis
        self.vecs = vecs

    @classmethod
    def build(cls, P: NsdpProblem, x, basis: KernelBasis) -> "EntryGradientFamily":
        x = np.asarray(x, dtype=float)
        W = P.constraint_partials(x)          # (n, m, m)
        E = basis.cols
        comp = np.einsum("lab,ai,bj->lij", W, E, E)
        k = E.shape[1]
        vecs = {}
        for i in range(k):
            for j in range(i, k):
                v = comp[:, i, j].copy()
                v.setflags(write=False)
                vecs[(i, j)] = v
        return cls(point=x, basis=basis, vecs=vecs)

    @property
    def nullity(self) -> int:
        return self.basis.cols.shape[1]

    def diagonal_vectors(self) -> List[np.ndarray]:
        return [self.vecs[(i, i)] for i in range(self.nullity)]

    def upper_vectors(self) -> List[np.ndarray]:
        k = self.nullity
        return [self.vecs[(i, j)] for i in range(k) for j in range(i, k)]

    def upper_pairs(self) -> List[Tuple[int, int]]:
        k = self.nullity
        return [(i, j) for i in range(k) for j in range(i, k)]

    def subset(self, pairs: Sequence[Tuple[int, int]]) -> List[np.ndarray]:
        return [self.vecs[(min(i, j), max(i, j))] for (i, j) in pairs]


def entry_gradient(P: NsdpProblem, x, u: np.ndarray,
                   w: Optional[np.ndarray] = None) -> np.ndarray:
    """v vector for a single direction pair, via the adjoint formula.

    Returns DG(x)*[(u w^T + w u^T) / 2]; with w omitted this is
    DG(x)*[u u^T], the gradient of x -> u^T G(x) u.  Agreement with the
    entrywise formula (u^T D_l G(x) w)_l is covered by a property test.
    """
    u = np.asarray(u, dtype=float)
    w = u if w is None else np.asarray(w, dtype=float)
    M = (np.outer(u, w) + np.outer(w, u)) / 2.0
    return P.adjoint(x, M)


# ---------------------------------------------------------------------------
# independence tests


@dataclass(frozen=True)
class LiResult:
    independent: bool
    rank: int
    sigma_min: float                 # smallest singular value of the family
    coeffs: Optional[np.ndarray]     # unit null combination when dependent


def li_test(vectors: Sequence[np.ndarray], tol: float = LI_TOL) -> LiResult:
    """Linear independence via eigenvalues of the Gram matrix.

    Rank counts Gram eigenvalues above tol * max(1, lambda_1); when the
    family is dependent, the returned coefficients are the unit-norm
    eigenvector of the smallest Gram eigenvalue, which reproduces
    ||sum c_i v_i|| = sqrt(lambda_min) when checked.
    """
    V = np.array([np.asarray(v, dtype=float) for v in vectors])
    k = V.shape[0]
    if k == 0:
        return LiResult(True, 0, 0.0, None)
    gram = SymMat.from_symmetric(V @ V.T)
    spec = eigh(gram)
    lam1 = float(spec.values[0])
    thr = tol * max(1.0, abs(lam1))
    rank = int(np.sum(np.abs(spec.values) > thr))
    sigma_min = float(np.sqrt(max(spec.values[-1], 0.0)))
    if rank == k:
        return LiResult(True, rank, sigma_min, None)
    coeffs = symmat.fix_column_signs(spec.vectors[:, -1:])[:, 0]
    return LiResult(False, rank, sigma_min, coeffs)


@dataclass(frozen=True)
class PliResult:
    pos_independent: bool
    margin: float                    # phase-one optimum, > 0 when independent
    alpha: Optional[np.ndarray]      # cone coefficients when dependent
    free_coeffs: Optional[np.ndarray]


def pli_test(vectors: Sequence[np.ndarray], tol: float = LI_TOL,
             free_vectors: Sequence[np.ndarray] = ()) -> PliResult:
    """Positive linear independence via a phase-one simplex.

    The family {v_1..v_k} (plus free-signed vectors w_1..w_f, used for
    equality-constraint gradients) is positively dependent iff

        sum alpha_i v_i + sum beta_j w_j = 0,  alpha >= 0,  sum alpha = 1

    is feasible; the beta are split into positive parts.  The phase-one
    optimum doubles as an infeasibility margin for search heuristics.
    """
    V = np.array([np.asarray(v, dtype=float) for v in vectors])
    k, n = V.shape
    # positive dependence is invariant under positive rescaling of each
    # vector, so normalize for simplex conditioning (zero vectors stay zero
    # and remain detectable); coefficients are mapped back before returning
    vscale = np.ones(k)
    for i in range(k):
        s = float(np.linalg.norm(V[i]))
        if s > 1e-12:
            V[i] = V[i] / s
            vscale[i] = s
    F = np.array([np.asarray(w, dtype=float) for w in free_vectors]) \
        if len(free_vectors) else np.zeros((0, n))
    f = F.shape[0]
    fscale = np.ones(f)
    for i in range(f):
        s = float(np.linalg.norm(F[i]))
        if s > 1e-12:
            F[i] = F[i] / s
            fscale[i] = s
    # columns: alpha (k), beta+ (f), beta- (f)
    A_eq = np.zeros((n + 1, k + 2 * f))
    A_eq[:n, :k] = V.T
    if f:
        A_eq[:n, k:k + f] = F.T
        A_eq[:n, k + f:] = -F.T
    A_eq[n, :k] = 1.0
    b = np.zeros(n + 1)
    b[n] = 1.0
    # scale equality rows for simplex stability
    for i in range(n):
        s = float(np.max(np.abs(A_eq[i, :]), initial=0.0))
        if s > 1.0:
            A_eq[i, :] /= s
    res = phase_one(A_eq, b, tol=tol)
    if res.feasible:
        alpha = np.clip(res.z[:k], 0.0, None) / vscale
        total = float(np.sum(alpha))
        if total > 0.0:
            alpha = alpha / total
        beta = (res.z[k:k + f] - res.z[k + f:]) / fscale if f else np.zeros(0)
        if total > 0.0:
            beta = beta / total
        return PliResult(False, res.optimum, alpha, beta)
    return PliResult(True, res.optimum, None, None)


# ---------------------------------------------------------------------------
# nondegeneracy


def check_nondegeneracy(P: NsdpProblem, x, tol_rank: float = TAU_RANK) -> CqVerdict:
    """Linear independence of the full family {v_ij, i <= j} for one basis.

    One deterministic basis suffices: independence of the family for some
    orthonormal kernel basis is invariant under the orthogonal change
    v'_ij = sum C_ki C_lj v_kl, so the verdict is certified either way.
    Equality-constraint gradients are appended to the family.
    """
    fd = feasibility_data(P, x, tol_rank)
    E = fd.kernel
    k = E.nullity
    Heq = P.equality_gradients(x)
    log = [f"rank {fd.rank}, kernel dimension {k}"]
    if k == 0 and Heq.shape[0] == 0:
        return CqVerdict(CqStatus.HOLDS_CERTIFIED,
                         reason="interior point, empty gradient family",
                         log=log)
    fam = EntryGradientFamily.build(P, x, E)
    vectors = fam.upper_vectors() + [Heq[i] for i in range(Heq.shape[0])]
    pairs = fam.upper_pairs()
    need = len(vectors)
    if need > P.n:
        # dimension bound: more vectors than ambient dimension; run the
        # independence test on a small prefix anyway to produce a witness
        sub = vectors[:P.n + 1]
        li = li_test(sub)
        log.append(f"dimension bound: family size {need} exceeds n = {P.n}")
        coeffs = np.zeros(need)
        if li.coeffs is not None:
            coeffs[:li.coeffs.shape[0]] = li.coeffs
        return CqVerdict(
            CqStatus.FAILS,
            reason=f"family of {need} gradients cannot be independent in R^{P.n}",
            witness=_family_witness(E, pairs, vectors, coeffs),
            log=log,
        )
    li = li_test(vectors)
    if li.independent:
        log.append(f"family of {need} independent, sigma_min {li.sigma_min:.3e}")
        return CqVerdict(CqStatus.HOLDS_CERTIFIED,
                         reason="gradient family independent for a fixed basis",
                         witness={"sigma_min": li.sigma_min}, log=log)
    return CqVerdict(
        CqStatus.FAILS,
        reason="gradient family dependent",
        witness=_family_witness(E, pairs, vectors, li.coeffs),
        log=log,
    )


def _family_witness(E: KernelBasis, pairs, vectors, coeffs) -> dict:
    return {
        "basis": E.cols,
        "provenance": E.provenance.describe(),
        "pairs": list(pairs),
        "vectors": np.array(vectors) if len(vectors) else np.zeros((0,)),
        "coeffs": np.asarray(coeffs, dtype=float),
    }


# ---------------------------------------------------------------------------
# Robinson's CQ


def _null_projector(Heq: np.ndarray, n: int) -> np.ndarray:
    """Orthogonal projector onto the complement of the equality-gradient span."""
    if Heq.shape[0] == 0:
        return np.eye(n)
    return np.eye(n) - Heq.T @ np.linalg.pinv(Heq.T)


def _sym_basis(k: int) -> List[np.ndarray]:
    """Orthonormal (Frobenius) basis of k x k symmetric matrices."""
    out = []
    rt = 1.0 / np.sqrt(2.0)
    for i in range(k):
        for j in range(i, k):
            B = np.zeros((k, k))
            if i == j:
                B[i, i] = 1.0
            else:
                B[i, j] = rt
                B[j, i] = rt
            out.append(B)
    return out


def _project_spectraplex(S: np.ndarray) -> np.ndarray:
    """Projection onto {S PSD, tr S = 1} (eigenvalues onto the simplex)."""
    spec = eigh(SymMat.from_symmetric(S))
    lam = _project_simplex(spec.values)
    return (spec.vectors * lam) @ spec.vectors.T


def _project_simplex(v: np.ndarray) -> np.ndarray:
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    idx = np.arange(1, v.size + 1)
    cond = u - css / idx > 0
    rho = int(np.max(np.nonzero(cond)[0])) + 1 if np.any(cond) else 1
    theta = css[rho - 1] / rho
    return np.clip(v - theta, 0.0, None)


def _primal_direction_search(Wc: np.ndarray, Qn: np.ndarray,
                             restarts: int, iters: int,
                             rng: np.random.Generator,
                             stop_at: Optional[float] = None
                             ) -> Tuple[np.ndarray, float]:
    """Maximize lambda_min(sum_l d_l Wc[l]) over the unit ball, d in range(Qn).

    Projected subgradient ascent with step 1 / sqrt(t); the subgradient at
    d is the vector of Rayleigh quotients of the minimal eigenvector.
    A best value reaching ``stop_at`` ends the search early; any strictly
    positive value already certifies, so callers pass a comfortable
    positive threshold to skip the remaining ascent.
    """
    n = Wc.shape[0]
    best_d = np.zeros(n)
    best_val = -np.inf

    def value_and_grad(d):
        psi = np.tensordot(d, Wc, axes=1)
        spec = eigh(SymMat.from_symmetric(psi))
        u = spec.vectors[:, -1]
        g = np.einsum("lab,a,b->l", Wc, u, u)
        return float(spec.values[-1]), g

    for s in range(restarts):
        if stop_at is not None and best_val >= stop_at:
            break
        if s == 0:
            d = Qn @ np.ones(n)
        else:
            d = Qn @ rng.standard_normal(n)
        nrm = float(np.linalg.norm(d))
        d = d / nrm if nrm > 1e-12 else d
        val, _ = value_and_grad(d) if np.linalg.norm(d) > 0 else (-np.inf, None)
        if val > best_val:
            best_val, best_d = val, d.copy()
        for t in range(1, iters + 1):
            if stop_at is not None and best_val >= stop_at:
                break
            val, g = value_and_grad(d)
            if val > best_val:
                best_val, best_d = val, d.copy()
            g = Qn @ g
            gn = float(np.linalg.norm(g))
            if gn < 1e-14:
                break
            d = d + (1.0 / np.sqrt(t)) * g / gn
            nrm = float(np.linalg.norm(d))
            if nrm > 1.0:
                d = d / nrm
    return best_d, best_val


def _realize_primal(P: NsdpProblem, x, d: np.ndarray,
                    Gval: np.ndarray) -> Optional[Tuple[np.ndarray, float]]:
    """Scale d until G(x) + DG(x)[d] is positive definite, if possible."""
    W = P.constraint_partials(x)
    DGd = np.tensordot(d, W, axes=1)
    scale = 1.0 + float(np.max(np.abs(Gval)))
    t = 1.0
    for _ in range(30):
        spec = eigh(SymMat.from_symmetric(Gval + t * DGd))
        lam_min = float(spec.values[-1])
        if lam_min > 1e-12 * scale:
            return t * d, lam_min
        t *= 0.5
    return None


def check_robinson(P: NsdpProblem, x, samples: int = 200, seed: int = 0,
                   tol_rank: float = TAU_RANK) -> CqVerdict:
    """Robinson's CQ, decided through three routes.

    (a) search for a primal interior direction d (certifies Holds),
    (b) minimize ||DG(x)*[E S E^T]|| over unit-trace PSD S, orthogonally to
        the equality-gradient span; a vanishing minimum is a dual witness
        and certifies Fails (this subsumes what sampled bases could refute,
        and Haar-sampled positive-independence tests still run afterwards
        as a cross-check when the minimum is ambiguous),
    (c) otherwise Undetermined, or HoldsSampled when the dual minimum is
        comfortably positive but no primal certificate was realized.

    Structurally diagonal constraints and kernels of dimension <= 1 are
    decided exactly instead of searched.
    """
    x = np.asarray(x, dtype=float)
    fd = feasibility_data(P, x, tol_rank)
    E = fd.kernel
    k = E.nullity
    Heq = P.equality_gradients(x)
    log = [f"rank {fd.rank}, kernel dimension {k}"]
    if Heq.shape[0]:
        li = li_test(Heq)
        if not li.independent:
            return CqVerdict(CqStatus.FAILS,
                             reason="equality-constraint gradients dependent",
                             witness={"equality_coeffs": li.coeffs}, log=log)
    if k == 0:
        return CqVerdict(CqStatus.HOLDS_CERTIFIED,
                         reason="interior point", log=log)

    fam = EntryGradientFamily.build(P, x, E)
    free_rows = [Heq[i] for i in range(Heq.shape[0])]

    if structurally_diagonal(P):
        # active diagonal gradients, positively independent iff MFCQ holds
        pli = pli_test(fam.diagonal_vectors(), free_vectors=free_rows)
        if pli.pos_independent:
            log.append("structurally diagonal, active gradients positively independent")
            return CqVerdict(CqStatus.HOLDS_CERTIFIED,
                             reason="diagonal constraint, MFCQ holds",
                             witness={"margin": pli.margin}, log=log)
        return CqVerdict(
            CqStatus.FAILS, reason="diagonal constraint, MFCQ fails",
            witness={"basis": E.cols, "alpha": pli.alpha,
                     "free_coeffs": pli.free_coeffs}, log=log)

    if k == 1:
        # the kernel basis is unique up to sign and v_11 is sign-invariant
        v = fam.vecs[(0, 0)]
        Qn = _null_projector(Heq, P.n)
        resid = float(np.linalg.norm(Qn @ v))
        if resid <= LI_TOL * (1.0 + float(np.linalg.norm(v))):
            Y = np.outer(E.cols[:, 0], E.cols[:, 0])
            return CqVerdict(
                CqStatus.FAILS,
                reason="one-dimensional kernel, v_11 in the equality-gradient span",
                witness={"basis": E.cols, "alpha": np.array([1.0]),
                         "multiplier": Y}, log=log)
        log.append(f"one-dimensional kernel, margin {resid:.3e}")
        # fall through to the primal search for an explicit direction

    W = P.constraint_partials(x)
    Wc = np.einsum("lab,ai,bj->lij", W, E.cols, E.cols)
    Qn = _null_projector(Heq, P.n)
    rng = np.random.default_rng(seed)

    stop = 1e-2 * (1.0 + float(np.max(np.abs(Wc))))
    d, margin = _primal_direction_search(Wc, Qn, restarts=5, iters=200,
                                         rng=rng, stop_at=stop)
    log.append(f"primal search margin {margin:.3e}")
    if margin > PRIMAL_MARGIN:
        realized = _realize_primal(P, x, d, P.constraint_value(x).a)
        if realized is not None:
            d_full, lam = realized
            log.append(f"interior direction realized, lambda_min {lam:.3e}")
            return CqVerdict(CqStatus.HOLDS_CERTIFIED,
                             reason="interior direction found",
                             witness={"direction": d_full,
                                      "lambda_min": lam,
                                      "compressed_margin": margin},
                             log=log)
        log.append("compressed margin positive but realization scan failed")

    # dual route: min ||Qn DG*[E S E^T]|| over the unit-trace PSD cone slice
    basis_mats = _sym_basis(k)
    cols = []
    for B in basis_mats:
        Y = E.cols @ B @ E.cols.T
        cols.append(Qn @ P.adjoint(x, Y))
    Mop = np.column_stack(cols) if cols else np.zeros((P.n, 0))
    op_scale = float(np.max(np.abs(Mop), initial=0.0))
    val, S = _spectraplex_min(Mop, basis_mats, k, iters=800)
    log.append(f"dual spectraplex minimum {val:.3e} (scale {op_scale:.3e})")
    if val <= DUAL_FAIL_TOL * (1.0 + op_scale):
        spec = eigh(SymMat.from_symmetric(S))
        C = spec.vectors
        alpha = np.clip(spec.values, 0.0, None)
        total = float(np.sum(alpha))
        alpha = alpha / total if total > 0 else alpha
        Eprime = rotate_basis(E, C, seed=seed)
        Y = E.cols @ S @ E.cols.T
        return CqVerdict(
            CqStatus.FAILS,
            reason="nonzero complementary PSD multiplier annihilates the adjoint",
            witness={"basis": Eprime.cols, "alpha": alpha, "multiplier": Y,
                     "residual": val},
            log=log)

    # Haar-sampled positive-independence refutation pass
    for s in range(samples):
        C = random_rotation(k, rng)
        Es = rotate_basis(E, C, seed=seed)
        fam_s = EntryGradientFamily.build(P, x, Es)
        pli = pli_test(fam_s.diagonal_vectors(), free_vectors=free_rows)
        if not pli.pos_independent:
            log.append(f"sampled basis {s} positively dependent")
            return CqVerdict(
                CqStatus.FAILS,
                reason="sampled kernel basis with positively dependent diagonal family",
                witness={"basis": Es.cols, "alpha": pli.alpha,
                         "free_coeffs": pli.free_coeffs}, log=log)

    if val > PRIMAL_MARGIN * (1.0 + op_scale):
        return CqVerdict(
            CqStatus.HOLDS_SAMPLED, samples=samples,
            reason="dual minimum positive and sampling found no refutation, "
                   "but no primal certificate was realized",
            log=log)
    return CqVerdict(
        CqStatus.UNDETERMINED,
        reason=f"primal margin {margin:.2e} below threshold and dual minimum "
               f"{val:.2e} inside the ambiguous band",
        log=log)


def _spectraplex_min(Mop: np.ndarray, basis_mats: List[np.ndarray],
                     k: int, iters: int = 800) -> Tuple[float, np.ndarray]:
    """min ||Mop s|| over svec coordinates of the unit-trace PSD cone slice.

    Accelerated projected gradient; the problem is convex (a quadratic
    over the spectraplex), so the attained value is reliable.
    """
    d = Mop.shape[1]
    if d == 0:
        return 0.0, np.zeros((k, k))
    H = Mop.T @ Mop
    L = float(np.linalg.norm(H, 2)) if d else 1.0
    if L <= 0.0:
        S = np.eye(k) / k
        return 0.0, S

    def to_mat(s):
        S = np.zeros((k, k))
        for a, B in enumerate(basis_mats):
            S += s[a] * B
        return S

    def to_vec(S):
        return np.array([float(np.sum(S * B)) for B in basis_mats])

    s = to_vec(np.eye(k) / k)
    y = s.copy()
    t_acc = 1.0
    best_val = np.inf
    best_s = s.copy()
    for _ in range(iters):
        grad = H @ y
        s_new = to_vec(_project_spectraplex(to_mat(y - grad / L)))
        t_new = (1.0 + np.sqrt(1.0 + 4.0 * t_acc * t_acc)) / 2.0
        y = s_new + ((t_acc - 1.0) / t_new) * (s_new - s)
        s, t_acc = s_new, t_new
        val = float(np.linalg.norm(Mop @ s))
        if val < best_val:
            best_val = val
            best_s = s.copy()
        if best_val < 1e-14:
            break
    return best_val, to_mat(best_s)


# ---------------------------------------------------------------------------
# KKT residuals


@dataclass
class KktCertificate:
    """Residuals of the KKT system at (x, Y, mu).

    stationarity is ||grad f(x) - DG(x)*[Y] - sum mu_i grad h_i(x)||_2,
    complementarity is |<G(x), Y>|, and psd_defect is the magnitude of the
    most negative eigenvalue of Y (zero for a valid multiplier).
    """

    multiplier: SymMat
    equality_multipliers: np.ndarray
    stationarity_residual: float
    complementarity_residual: float
    psd_defect: float

    def is_valid(self, tol: float = 1e-6) -> bool:
        return (self.stationarity_residual <= tol
                and self.complementarity_residual <= tol
                and self.psd_defect <= symmat.TAU_EIG * (
                    1.0 + self.multiplier.norm_inf()))

    def to_json(self) -> dict:
        return {
            "stationarity_residual": self.stationarity_residual,
            "complementarity_residual": self.complementarity_residual,
            "psd_defect": self.psd_defect,
            "multiplier": self.multiplier.a.tolist(),
            "equality_multipliers": self.equality_multipliers.tolist(),
        }


def kkt_residual(P: NsdpProblem, x, Y, mu=None) -> KktCertificate:
    x = np.asarray(x, dtype=float)
    Ym = Y if isinstance(Y, SymMat) else SymMat.from_symmetric(np.asarray(Y, dtype=float))
    mu = np.zeros(len(P.equalities)) if mu is None else np.asarray(mu, dtype=float)
    grad = P.objective_gradient(x) - P.adjoint(x, Ym)
    Heq = P.equality_gradients(x)
    if Heq.shape[0]:
        grad = grad - Heq.T @ mu
    G = P.constraint_value(x)
    comp = abs(symmat.frobenius(G.a, Ym.a))
    lam_min = float(eigh(Ym).values[-1])
    return KktCertificate(
        multiplier=Ym,
        equality_multipliers=mu,
        stationarity_residual=float(np.linalg.norm(grad)),
        complementarity_residual=comp,
        psd_defect=max(0.0, -lam_min),
    )


def find_multiplier(P: NsdpProblem, x, tol_rank: float = TAU_RANK,
                    iters: int = 400) -> KktCertificate:
    """Best-effort KKT multiplier at x.

    Complementarity is built in by parametrizing Y = E S E^T over the
    kernel basis; S is then fit by least squares and pushed onto the PSD
    cone by projected gradient on the stationarity residual.
    """
    x = np.asarray(x, dtype=float)
    fd = feasibility_data(P, x, tol_rank)
    E = fd.kernel
    k = E.nullity
    Heq = P.equality_gradients(x)
    ne = Heq.shape[0]
    g0 = P.objective_gradient(x)
    if k == 0:
        if ne:
            mu = np.linalg.lstsq(Heq.T, g0, rcond=None)[0]
            return kkt_residual(P, x, SymMat.zero(P.m), mu)
        return kkt_residual(P, x, SymMat.zero(P.m))
    basis_mats = _sym_basis(k)
    cols = [P.adjoint(x, E.cols @ B @ E.cols.T) for B in basis_mats]
    for i in range(ne):
        cols.append(Heq[i])
    A = np.column_stack(cols) if cols else np.zeros((P.n, 0))
    z, *_ = np.linalg.lstsq(A, g0, rcond=None)
    s = z[:len(basis_mats)]
    mu = z[len(basis_mats):]

    def build(svec):
        S = np.zeros((k, k))
        for a, B in enumerate(basis_mats):
            S += svec[a] * B
        return S

    S = _project_psd_mat(build(s))
    # polish: projected gradient on || A_s svec(S) + Heq^T mu - g0 ||^2
    As = A[:, :len(basis_mats)]
    Ah = A[:, len(basis_mats):]
    lip = float(np.linalg.norm(As.T @ As, 2)) if len(basis_mats) else 1.0
    lip = max(lip, 1e-12)
    for _ in range(iters):
        if ne:
            mu, *_ = np.linalg.lstsq(Ah, g0 - As @ _svec(S, basis_mats), rcond=None)
        resid = As @ _svec(S, basis_mats) + (Ah @ mu if ne else 0.0) - g0
        grad_s = As.T @ resid
        S = _project_psd_mat(build(_svec(S, basis_mats) - grad_s / lip))
    Y = SymMat.from_symmetric(E.cols @ S @ E.cols.T)
    return kkt_residual(P, x, Y, mu if ne else None)


def _svec(S: np.ndarray, basis_mats: List[np.ndarray]) -> np.ndarray:
    return np.array([float(np.sum(S * B)) for B in basis_mats])


def _project_psd_mat(S: np.ndarray) -> np.ndarray:
    spec = eigh(SymMat.from_symmetric(S))
    lam = np.clip(spec.values, 0.0, None)
    return (spec.vectors * lam) @ spec.vectors.T
