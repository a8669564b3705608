"""Sparsity-aware constraint qualifications.

Two reductions of the constraint map G around a feasible point drive
everything here:

* the compression Ghat(x) = E^T G(x) E onto a kernel basis E, whose
  entries are exact polynomials, and
* the Schur-complement map Gtil(x) = G(x) - G(x) P (P^T G(x) P)^{-1}
  P^T G(x) over the range basis P, which is rational and therefore only
  evaluated numerically with a sampled sparsity pattern.

A sparsity pattern of such a map is the set of entries that are not
identically zero near the point; it defines the subspace of symmetric
matrices supported on the pattern.  The checks:

* sparse nondegeneracy: an existential search for a kernel basis whose
  pattern-restricted gradient family is independent while every diagonal
  entry of the compressed map stays structurally nonzero,
* Forsgren's condition (per diagonalizing matrix U): injectivity of the
  gradient pairing on the pattern subspace of Gtil compressed to the
  kernel, plus existence of a positive definite element there,
* facial reduction: when some compressed diagonal entry is identically
  zero, the constraint is locally an equality plus a smaller semidefinite
  block, and the rewrite is performed explicitly.

A Fails verdict is only produced with a certificate; failed searches
return Undetermined.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Set, Tuple

import numpy as np

from .cqcheck import (
    CqStatus,
    CqVerdict,
    PRIMAL_MARGIN,
    _primal_direction_search,
    check_robinson,
    feasibility_data,
    li_test,
    pli_test,
)
from .errors import NumericalFailure
from .model import (
    MatrixPoly,
    NsdpProblem,
    Poly,
    block_partition,
    component_subproblem,
    structural_zero,
    structurally_diagonal,
)
from .symmat import (
    TAU_RANK,
    KernelBasis,
    Provenance,
    SymMat,
    eigh,
    orthonormal_completion,
    random_rotation,
)

PATTERN_COEF_TOL = 1e-12     # coefficient threshold for congruence patterns
TILDE_SAMPLES = 32
TILDE_RADIUS = 1e-3
TILDE_TOL = 1e-9
GIVENS_STEPS = 50


# ---------------------------------------------------------------------------
# sparsity patterns and reduced maps


@dataclass(frozen=True)
class SparsityPattern:
    """Index set of structurally nonzero entries of a symmetric map.

    source is "exact" when membership was decided on polynomial
    coefficients, or "sampled" for numeric maps probed at random points.
    """

    dim: int
    index_set: frozenset
    source: str
    sample_points: Optional[int] = None
    sample_tol: Optional[float] = None

    def __post_init__(self):
        for (i, j) in self.index_set:
            if not (0 <= i <= j < self.dim):
                raise ValueError(f"pattern index ({i}, {j}) out of range")

    def has(self, i: int, j: int) -> bool:
        if i > j:
            i, j = j, i
        return (i, j) in self.index_set

    def missing_diagonal(self) -> List[int]:
        return [i for i in range(self.dim) if (i, i) not in self.index_set]

    def diagonal_complete(self) -> bool:
        return not self.missing_diagonal()

    def sorted_pairs(self) -> List[Tuple[int, int]]:
        return sorted(self.index_set)

    def cardinality(self) -> int:
        return len(self.index_set)


@dataclass
class ReducedMap:
    """A reduced constraint map with its sparsity pattern.

    kind "hat" holds the kernel compression (dim m - r, entries exact
    polynomials); kind "tilde" holds the Schur-complement map (dim m,
    numeric evaluator, entries only present in the r = 0 degenerate case
    where the map coincides with G itself).
    """

    kind: str
    dim: int
    n: int                                   # number of variables
    pattern: SparsityPattern
    entries: Optional[Dict[Tuple[int, int], Poly]]
    basis: Optional[KernelBasis] = None      # hat: the E used
    transform: Optional[np.ndarray] = None   # tilde: U = [P, E]
    _evaluator: Optional[Callable] = None

    def evaluate(self, x):
        """Value of the reduced map; SymMat, or a 0 x 0 array when empty."""
        x = np.asarray(x, dtype=float)
        if self.dim == 0:
            return np.zeros((0, 0))
        return self._evaluator(x)

    def entry(self, i: int, j: int) -> Poly:
        if self.entries is None:
            raise ValueError("entries are only available for exact maps")
        if i > j:
            i, j = j, i
        return self.entries.get((i, j), Poly.zero(self.n))


def _congruence_entries(G: MatrixPoly, B: np.ndarray,
                        tol: float = PATTERN_COEF_TOL) -> Dict[Tuple[int, int], Poly]:
    """Entries of B^T G(x) B as polynomials, coefficients <= tol dropped."""
    w = B.shape[1]
    out: Dict[Tuple[int, int], Poly] = {}
    for i in range(w):
        for j in range(i, w):
            acc = Poly.zero(G.n)
            for (a, b), p in G.entries.items():
                c = B[a, i] * B[b, j]
                if a != b:
                    c += B[b, i] * B[a, j]
                if c != 0.0:
                    acc = acc + p.scale(c)
            acc = acc.truncated(tol)
            if not structural_zero(acc):
                out[(i, j)] = acc
    return out


def hat_map(P: NsdpProblem, x, E: KernelBasis) -> ReducedMap:
    """Kernel compression E^T G(.) E with its exact polynomial pattern.

    The gradient of entry (i, j) at the anchor equals the family vector
    v_ij for the same basis, which is what ties the pattern to the
    independence tests downstream.
    """
    x = np.asarray(x, dtype=float)
    if E.dim != P.m:
        raise ValueError(f"basis has {E.dim} rows, constraint has {P.m}")
    Gx = P.constraint_value(x)
    resid = float(np.max(np.abs(Gx.a @ E.cols), initial=0.0))
    if resid > 1e-6 * (1.0 + Gx.norm_inf()):
        raise ValueError(
            f"basis does not span the kernel at this point (residual {resid:.3e})")
    k = E.nullity
    entries = _congruence_entries(P.constraint, E.cols)
    pattern = SparsityPattern(dim=k, index_set=frozenset(entries.keys()),
                              source="exact")
    if k == 0:
        return ReducedMap(kind="hat", dim=0, n=P.n, pattern=pattern,
                          entries={}, basis=E)
    mp = MatrixPoly(k, P.n, entries)

    def evaluator(xq):
        return SymMat.from_symmetric(mp.eval(xq))

    return ReducedMap(kind="hat", dim=k, n=P.n, pattern=pattern,
                      entries=entries, basis=E, _evaluator=evaluator)


def tilde_map(P: NsdpProblem, x, tol_rank: float = TAU_RANK) -> ReducedMap:
    """Schur-complement reduction of G over the range of G(x).

    With r = rank G(x) = 0 the map degenerates to G itself and the exact
    polynomial pattern is returned.  Otherwise the map is rational; its
    pattern is decided by sampling on a small sphere around x, so entries
    flagged nonzero are certain while entries flagged zero are presumed
    structural.
    """
    x = np.asarray(x, dtype=float)
    fd = feasibility_data(P, x, tol_rank)
    r = fd.rank
    m = P.m
    if r == 0:
        entries = dict(P.constraint.entries)
        pattern = SparsityPattern(dim=m, index_set=frozenset(entries.keys()),
                                  source="exact")
        return ReducedMap(kind="tilde", dim=m, n=P.n, pattern=pattern,
                          entries=entries, transform=np.eye(m),
                          _evaluator=lambda xq: P.constraint_value(xq))

    spec = eigh(P.constraint_value(x))
    Pbar = spec.vectors[:, :r]
    U = np.column_stack([Pbar, fd.kernel.cols])

    def evaluate_raw(xq: np.ndarray) -> np.ndarray:
        Gq = P.constraint_value(xq).a
        B = Pbar.T @ Gq @ Pbar
        bspec = eigh(SymMat.from_symmetric(B))
        lam1 = abs(float(bspec.values[0]))
        if float(bspec.values[-1]) <= 1e-12 * max(1.0, lam1):
            raise NumericalFailure("range block singular at sample point")
        half = np.linalg.solve(B, Pbar.T @ Gq)
        return Gq - (Gq @ Pbar) @ half

    rng = np.random.default_rng(20)
    hits: Set[Tuple[int, int]] = set()
    used = 0
    for _ in range(TILDE_SAMPLES):
        g = rng.standard_normal(P.n)
        nrm = float(np.linalg.norm(g))
        if nrm < 1e-12:
            continue
        xs = x + TILDE_RADIUS * g / nrm
        try:
            Gt = evaluate_raw(xs)
        except NumericalFailure:
            continue
        used += 1
        for i in range(m):
            for j in range(i, m):
                if abs(Gt[i, j]) > TILDE_TOL:
                    hits.add((i, j))
    if used == 0:
        raise NumericalFailure(
            "range block of the Schur map singular at every sample point")
    pattern = SparsityPattern(dim=m, index_set=frozenset(hits),
                              source="sampled", sample_points=used,
                              sample_tol=TILDE_TOL)
    return ReducedMap(kind="tilde", dim=m, n=P.n, pattern=pattern,
                      entries=None, transform=U,
                      _evaluator=lambda xq: SymMat.from_symmetric(evaluate_raw(xq)))


# ---------------------------------------------------------------------------
# sparse nondegeneracy: candidate scoring and basis search


class _SearchContext:
    """Precomputed stacks for scoring candidate kernel bases.

    The compressed monomial stack E^T A_t E carries the exact polynomial
    coefficients of every entry of the compressed map, so patterns are
    decided on coefficients, not on sampled values, during the search.
    """

    def __init__(self, P: NsdpProblem, x: np.ndarray):
        self.P = P
        self.x = x
        self.W = P.constraint_partials(x)           # (n, m, m)
        self.A = P._c().A                           # (T, m, m) monomial stack
        self.Heq = P.equality_gradients(x)

    def compressed_stack(self, cols: np.ndarray) -> np.ndarray:
        if self.A.shape[0] == 0:
            return np.zeros((0, cols.shape[1], cols.shape[1]))
        return np.einsum("tab,ai,bj->tij", self.A, cols, cols)

    def pattern_pairs(self, Bs: np.ndarray) -> Set[Tuple[int, int]]:
        k = Bs.shape[1]
        pairs = set()
        if Bs.shape[0]:
            mx = np.max(np.abs(Bs), axis=0)
            for i in range(k):
                for j in range(i, k):
                    if mx[i, j] > PATTERN_COEF_TOL:
                        pairs.add((i, j))
        return pairs

    def family(self, cols: np.ndarray, pairs: Sequence[Tuple[int, int]]):
        comp = np.einsum("lab,ai,bj->lij", self.W, cols, cols)
        vecs = [comp[:, i, j] for (i, j) in sorted(pairs)]
        vecs += [self.Heq[i] for i in range(self.Heq.shape[0])]
        return vecs

    def score(self, cols: np.ndarray):
        """(diagonal hits, family sigma_min, success flag, pattern)."""
        k = cols.shape[1]
        Bs = self.compressed_stack(cols)
        pairs = self.pattern_pairs(Bs)
        hits = sum(1 for i in range(k) if (i, i) in pairs)
        li = li_test(self.family(cols, pairs))
        success = hits == k and li.independent
        return (hits, li.sigma_min), success, pairs, li


def _cs_angle(Bs: np.ndarray, p: int, q: int) -> float:
    """Closed-form Givens angle concentrating stack energy on the diagonal.

    Maximizes sum_t (B_pp - B_qq)^2 over the rotated pair, the classical
    joint-diagonalization update; for commuting stacks this zeroes the
    (p, q) coefficients to rounding level, which the pattern threshold
    then absorbs into an exact structural zero.
    """
    h1 = Bs[:, p, p] - Bs[:, q, q]
    h2 = 2.0 * Bs[:, p, q]
    gxx = float(np.dot(h1, h1))
    gxy = float(np.dot(h1, h2))
    gyy = float(np.dot(h2, h2))
    to = gxx - gyy
    x = to + np.hypot(to, 2.0 * gxy)
    y = 2.0 * gxy
    nrm = np.hypot(x, y)
    if nrm <= 1e-300:
        return 0.25 * np.pi if gyy > gxx else 0.0
    return 0.5 * np.arctan2(y / nrm, x / nrm)


_PROBE_ANGLES = (np.pi / 4, -np.pi / 4, np.pi / 8, -np.pi / 8)


def _givens_refine(ctx: _SearchContext, E: KernelBasis,
                   pairs: Sequence[Tuple[int, int]],
                   steps: int = GIVENS_STEPS):
    """Coordinate descent over Givens rotations of the basis columns.

    At each step the closed-form angle and a few fixed probes are tried on
    one column pair; a rotation is kept only when the lexicographic score
    (diagonal pattern hits, then family sigma_min) strictly improves.
    Returns the best basis found and its score data.
    """
    k = E.nullity
    C = np.eye(k)
    best_cols = E.cols
    best_score, success, best_pairs, best_li = ctx.score(best_cols)
    if success or not pairs:
        return best_cols, best_score, success, best_pairs, best_li
    for step in range(steps):
        p, q = pairs[step % len(pairs)]
        Bs = ctx.compressed_stack(E.cols @ C)
        theta = _cs_angle(Bs, p, q)
        improved = False
        for ang in (theta,) + _PROBE_ANGLES:
            if abs(ang) < 1e-14:
                continue
            c, s = np.cos(ang), np.sin(ang)
            Cn = C.copy()
            cp = Cn[:, p].copy()
            cq = Cn[:, q].copy()
            Cn[:, p] = c * cp + s * cq
            Cn[:, q] = -s * cp + c * cq
            cols = E.cols @ Cn
            score, succ, prs, li = ctx.score(cols)
            if score > best_score:
                C = Cn
                best_cols, best_score = cols, score
                success, best_pairs, best_li = succ, prs, li
                improved = True
                break
        if success:
            break
        if not improved and len(pairs) == 1:
            break
    return best_cols, best_score, success, best_pairs, best_li


def _column_blocks(E: KernelBasis, partition: List[List[int]]) -> List[List[int]]:
    """Group kernel columns by the constraint block carrying their support."""
    owner = {}
    for b, comp in enumerate(partition):
        for i in comp:
            owner[i] = b
    groups: Dict[int, List[int]] = {}
    for j in range(E.nullity):
        col = E.cols[:, j]
        rows = np.nonzero(np.abs(col) > 1e-10)[0]
        blocks = {owner[int(r)] for r in rows}
        b = min(blocks) if len(blocks) == 1 else -1
        groups.setdefault(b, []).append(j)
    return [sorted(v) for _, v in sorted(groups.items())]


def _all_pairs(k: int) -> List[Tuple[int, int]]:
    return [(p, q) for p in range(k) for q in range(p + 1, k)]


def _holds_verdict(E_cols, provenance: str, pairs, li, log) -> CqVerdict:
    return CqVerdict(
        CqStatus.HOLDS_CERTIFIED,
        reason="kernel basis found with independent pattern-restricted family",
        witness={
            "basis": np.array(E_cols),
            "provenance": provenance,
            "pattern": sorted(pairs),
            "cardinality": len(pairs),
            "sigma_min": li.sigma_min,
        },
        log=log,
    )


def check_sparse_ndg(P: NsdpProblem, x, bases: int = 50, seed: int = 0,
                     tol_rank: float = TAU_RANK,
                     sparse_robinson: bool = False) -> CqVerdict:
    """Existential search for a basis certifying sparse nondegeneracy.

    Candidate order: the deterministic eigenbasis, block-aligned
    refinements when the constraint decomposes, Haar-rotated samples, and
    finally Givens coordinate descent seeded by the best candidate so far.
    A found witness certifies Holds.  Fails is certified through exact
    routes only: the structurally diagonal reduction, an identically zero
    diagonal entry of the constraint (which refutes Robinson's condition
    directly), the kernel-dimension bound, or a certified Robinson
    failure; anything else is Undetermined.
    """
    x = np.asarray(x, dtype=float)
    fd = feasibility_data(P, x, tol_rank)
    E0 = fd.kernel
    k = E0.nullity
    log = [f"rank {fd.rank}, kernel dimension {k}"]
    if k == 0:
        return CqVerdict(CqStatus.HOLDS_CERTIFIED,
                         reason="trivial kernel", log=log)
    ctx = _SearchContext(P, x)

    if structurally_diagonal(P):
        verdict = _diagonal_sparse_verdict(P, x, ctx, E0, log)
        if sparse_robinson:
            _attach_sparse_robinson(P, x, ctx, E0.cols, verdict)
        return verdict

    family_size = k + ctx.Heq.shape[0]
    if P.n < family_size:
        diag_vecs = ctx.family(E0.cols, [(i, i) for i in range(k)])
        li = li_test(diag_vecs[:P.n + 1])
        coeffs = np.zeros(len(diag_vecs))
        coeffs[:li.coeffs.shape[0]] = li.coeffs
        log.append(f"dimension bound: {family_size} required vectors in R^{P.n}")
        return CqVerdict(
            CqStatus.FAILS,
            reason=f"every admissible basis needs {family_size} independent "
                   f"gradients but the space has dimension {P.n}",
            witness={"basis": E0.cols, "coeffs": coeffs,
                     "vectors": np.array(diag_vecs)},
            log=log)

    for i in range(P.m):
        if structural_zero(P.constraint.entry(i, i)):
            row = P.constraint_value(x).a[:, i]
            log.append(f"diagonal entry ({i}, {i}) identically zero, "
                       f"row norm {float(np.linalg.norm(row)):.1e}")
            Y = np.zeros((P.m, P.m))
            Y[i, i] = 1.0
            return CqVerdict(
                CqStatus.FAILS,
                reason="a diagonal entry of the constraint is identically "
                       "zero, so a rank-one multiplier annihilates the "
                       "adjoint and Robinson's condition fails, which "
                       "sparse nondegeneracy would imply",
                witness={"index": i, "multiplier": Y,
                         "adjoint_norm": float(np.linalg.norm(P.adjoint(x, Y)))},
                log=log)

    # stage 1: deterministic basis
    score0, success, pairs0, li0 = ctx.score(E0.cols)
    log.append(f"fixed basis: hits {score0[0]}/{k}, sigma_min {score0[1]:.3e}")
    if success:
        return _holds_verdict(E0.cols, E0.provenance.describe(), pairs0, li0, log)
    best = (score0, E0.cols, "fixed")

    # stage 2: block-aligned refinement
    partition = block_partition(P)
    if len(partition) > 1:
        groups = _column_blocks(E0, partition)
        pair_list = [pr for g in groups for pr in
                     [(g[a], g[b]) for a in range(len(g))
                      for b in range(a + 1, len(g))]]
        cols, score, success, prs, li = _givens_refine(ctx, E0, pair_list)
        log.append(f"block-aligned refinement: hits {score[0]}/{k}, "
                   f"sigma_min {score[1]:.3e}")
        if success:
            return _holds_verdict(cols, "block-aligned", prs, li, log)
        if score > best[0]:
            best = (score, cols, "block-aligned")

    # stage 3: Haar samples
    rng = np.random.default_rng(seed)
    for s in range(bases):
        C = random_rotation(k, rng)
        cols = E0.cols @ C
        score, success, prs, li = ctx.score(cols)
        if success:
            log.append(f"Haar sample {s} succeeded")
            return _holds_verdict(cols, f"sampled(seed={seed},draw={s})",
                                  prs, li, log)
        if score > best[0]:
            best = (score, cols, f"sampled(seed={seed},draw={s})")

    # stage 4: Givens coordinate descent from the best candidate
    seedE = KernelBasis(cols=best[1], rank=E0.rank,
                        provenance=Provenance("sampled", seed=seed))
    cols, score, success, prs, li = _givens_refine(ctx, seedE, _all_pairs(k))
    log.append(f"refinement: hits {score[0]}/{k}, sigma_min {score[1]:.3e}")
    if success:
        verdict = _holds_verdict(cols, best[2] + "+refined", prs, li, log)
        if sparse_robinson:
            _attach_sparse_robinson(P, x, ctx, cols, verdict)
        return verdict

    rob = check_robinson(P, x, samples=min(bases, 50), seed=seed,
                         tol_rank=tol_rank)
    if rob.status == CqStatus.FAILS:
        log.append("Robinson refutation: " + (rob.reason or ""))
        return CqVerdict(
            CqStatus.FAILS,
            reason="Robinson's condition fails, which sparse nondegeneracy "
                   "would imply",
            witness=rob.witness, log=log)

    return CqVerdict(
        CqStatus.UNDETERMINED,
        reason=f"basis search exhausted ({bases} samples plus refinement) "
               "without a witness, and no refutation certificate applies",
        log=log)


def _diagonal_sparse_verdict(P: NsdpProblem, x, ctx: _SearchContext,
                             E0: KernelBasis, log: List[str]) -> CqVerdict:
    """Exact reduction for structurally diagonal constraints.

    Sparse nondegeneracy then coincides with independence of the active
    diagonal gradients (plus equality gradients), which is decided by one
    exact rank test; both outcomes are certified.
    """
    k = E0.nullity
    diag_pairs = [(i, i) for i in range(k)]
    vecs = ctx.family(E0.cols, diag_pairs)
    li = li_test(vecs)
    log.append("structurally diagonal constraint, deciding via active "
               "gradient independence")
    if li.independent:
        return _holds_verdict(E0.cols, "diagonal", diag_pairs, li, log)
    return CqVerdict(
        CqStatus.FAILS,
        reason="diagonal constraint with dependent active gradients",
        witness={"basis": E0.cols, "coeffs": li.coeffs,
                 "vectors": np.array(vecs)},
        log=log)


def _attach_sparse_robinson(P: NsdpProblem, x, ctx: _SearchContext,
                            cols: np.ndarray, verdict: CqVerdict) -> None:
    """Experimental positive-part variant, logged onto the main verdict.

    Only evaluated when the witness pattern is purely diagonal: a PSD
    matrix supported on a diagonal pattern is a nonnegative combination of
    diagonal rank-one terms, so the condition reduces to positive
    independence of the corresponding diagonal family.
    """
    Bs = ctx.compressed_stack(cols)
    pairs = ctx.pattern_pairs(Bs)
    if any(i != j for (i, j) in pairs):
        verdict.log.append("sparse-Robinson (experimental): skipped, "
                           "pattern not diagonal for the witness basis")
        return
    k = cols.shape[1]
    comp = np.einsum("lab,ai,bj->lij", ctx.W, cols, cols)
    vecs = [comp[:, i, i] for i in range(k) if (i, i) in pairs]
    free = [ctx.Heq[i] for i in range(ctx.Heq.shape[0])]
    res = pli_test(vecs, free_vectors=free)
    if res.pos_independent:
        verdict.log.append(
            f"sparse-Robinson (experimental): holds for the witness basis "
            f"(margin {res.margin:.3e})")
    else:
        verdict.log.append(
            "sparse-Robinson (experimental): positively dependent diagonal "
            "family for the witness basis")


def check_sparse_ndg_multifold(P: NsdpProblem, x, bases: int = 50,
                               seed: int = 0,
                               tol_rank: float = TAU_RANK) -> CqVerdict:
    """Sparse nondegeneracy through the multifold block decomposition.

    Each diagonal block is searched for its own basis (diagonal pattern
    hits first, conditioning second); the union of the per-block
    pattern-restricted families, together with equality gradients, must
    be independent.  Equivalent to the assembled check by the block
    invariance of the condition; kept separate as a cross-check.
    """
    x = np.asarray(x, dtype=float)
    partition = block_partition(P)
    if len(partition) == 1:
        return check_sparse_ndg(P, x, bases=bases, seed=seed,
                                tol_rank=tol_rank)
    fd = feasibility_data(P, x, tol_rank)
    if fd.kernel.nullity == 0:
        return CqVerdict(CqStatus.HOLDS_CERTIFIED, reason="trivial kernel")

    union_vecs = []
    basis_blocks = []
    log = [f"multifold over {len(partition)} blocks"]
    all_hit = True
    rng_seed = seed
    for bi, comp in enumerate(partition):
        sub = component_subproblem(P, comp, f"#block{bi}")
        sfd = feasibility_data(sub, x, tol_rank)
        kb = sfd.kernel.nullity
        if kb == 0:
            log.append(f"block {bi}: trivial kernel")
            continue
        sctx = _SearchContext(sub, x)
        sverdict = _block_basis_search(sctx, sfd.kernel, bases, rng_seed)
        cols, score, prs = sverdict
        hits = score[0]
        log.append(f"block {bi}: hits {hits}/{kb}, sigma_min {score[1]:.3e}")
        if hits < kb:
            all_hit = False
        comp_grads = np.einsum("lab,ai,bj->lij", sctx.W, cols, cols)
        union_vecs += [comp_grads[:, i, j] for (i, j) in sorted(prs)]
        lifted = np.zeros((P.m, kb))
        for a, g in enumerate(comp):
            lifted[g, :] = cols[a, :]
        basis_blocks.append(lifted)
    Heq = P.equality_gradients(x)
    union_vecs += [Heq[i] for i in range(Heq.shape[0])]
    li = li_test(union_vecs)
    if all_hit and li.independent:
        return CqVerdict(
            CqStatus.HOLDS_CERTIFIED,
            reason="per-block bases with independent union family",
            witness={"blocks": [b for b in basis_blocks],
                     "sigma_min": li.sigma_min},
            log=log)
    assembled = check_sparse_ndg(P, x, bases=bases, seed=seed,
                                 tol_rank=tol_rank)
    if assembled.status in (CqStatus.FAILS, CqStatus.HOLDS_CERTIFIED):
        assembled.log = log + ["falling back to the assembled check"] \
            + assembled.log
        return assembled
    return CqVerdict(
        CqStatus.UNDETERMINED,
        reason="multifold search found no witness and no certificate applies",
        log=log)


def _block_basis_search(ctx: _SearchContext, E0: KernelBasis,
                        bases: int, seed: int):
    """Best basis for one block: fixed, Haar draws, then refinement."""
    k = E0.nullity
    score0, success, pairs0, _ = ctx.score(E0.cols)
    if success:
        return E0.cols, score0, pairs0
    best = (score0, E0.cols, pairs0)
    rng = np.random.default_rng(seed)
    for _ in range(max(bases // 5, 5)):
        C = random_rotation(k, rng)
        cols = E0.cols @ C
        score, success, prs, _ = ctx.score(cols)
        if success:
            return cols, score, prs
        if score > best[0]:
            best = (score, cols, prs)
    seedE = KernelBasis(cols=best[1], rank=E0.rank,
                        provenance=Provenance("sampled", seed=seed))
    cols, score, success, prs, _ = _givens_refine(ctx, seedE, _all_pairs(k))
    if success or score > best[0]:
        return cols, score, prs
    return best[1], best[0], best[2]


# ---------------------------------------------------------------------------
# Forsgren's condition


def check_forsgren(P: NsdpProblem, x, U: Optional[np.ndarray] = None,
                   tol_rank: float = TAU_RANK, seed: int = 0) -> CqVerdict:
    """Forsgren's condition for a given diagonalizing matrix U.

    U must be orthogonal with U^T G(x) U diagonal within 1e-8; by default
    the eigenvector matrix of G(x) is used.  The verdict is specific to
    the supplied U, since different diagonalizers give different variants
    of the condition.

    The pattern subspace of the Schur-complement map, compressed to the
    kernel columns of U, is spanned and orthonormalized; then

    * first condition: the pairing M -> sum_{i<=j} M_ij v_ij must be
      injective on that subspace (rank test, certified either way),
    * second condition: a positive definite element of the subspace is
      searched by eigenvalue maximization; a found element certifies
      Holds, a diagonal entry vanishing identically on the subspace
      certifies Fails, and an inconclusive search returns Undetermined.

    Equality-constraint gradients join the injectivity test as rows that
    must stay independent from the family image.
    """
    x = np.asarray(x, dtype=float)
    fd = feasibility_data(P, x, tol_rank)
    G = P.constraint_value(x)
    m = P.m
    scale = 1.0 + G.norm_inf()
    if U is None:
        U = eigh(G).vectors
    U = np.asarray(U, dtype=float)
    if U.shape != (m, m):
        raise ValueError(f"U must be {m} x {m}, got {U.shape}")
    if float(np.max(np.abs(U.T @ U - np.eye(m)))) > 1e-8:
        raise ValueError("U is not orthogonal within 1e-8")
    D = U.T @ G.a @ U
    off = float(np.max(np.abs(D - np.diag(np.diag(D))), initial=0.0))
    if off > 1e-8 * scale:
        raise ValueError(
            f"U does not diagonalize G(x) within 1e-8 (off-diagonal {off:.3e})")

    diag = np.diag(D)
    thr = tol_rank * max(1.0, float(np.max(np.abs(diag), initial=0.0)))
    kernel_idx = [i for i in range(m) if abs(diag[i]) <= thr]
    k = len(kernel_idx)
    log = [f"rank {m - k}, kernel dimension {k} (per supplied U)"]
    if k != fd.kernel.nullity:
        raise ValueError(
            f"U separates a kernel of dimension {k}, spectral data says "
            f"{fd.kernel.nullity}")
    if k == 0:
        return CqVerdict(CqStatus.HOLDS_CERTIFIED,
                         reason="trivial kernel", log=log)
    E = U[:, kernel_idx]

    tilde = tilde_map(P, x, tol_rank)
    pat = tilde.pattern
    log.append(f"Schur map pattern: {pat.cardinality()} entries "
               f"({pat.source})")

    # span of the compressed pattern subspace
    rt = 1.0 / np.sqrt(2.0)
    raw = []
    for (a, b) in pat.sorted_pairs():
        S = np.zeros((m, m))
        if a == b:
            S[a, a] = 1.0
        else:
            S[a, b] = rt
            S[b, a] = rt
        raw.append(E.T @ S @ E)
    basis_T = _orthonormalize_syms(raw)
    dim_T = len(basis_T)
    log.append(f"compressed pattern subspace dimension {dim_T}")

    W = P.constraint_partials(x)
    Wc = np.einsum("lab,ai,bj->lij", W, E, E)
    iu = np.triu_indices(k)
    Wu = Wc[:, iu[0], iu[1]]

    images = [Wu @ Tq[iu] for Tq in basis_T]
    Heq = P.equality_gradients(x)
    li = li_test(images + [Heq[i] for i in range(Heq.shape[0])])
    if not li.independent:
        coeffs = li.coeffs[:dim_T]
        M = np.zeros((k, k))
        for c, Tq in zip(coeffs, basis_T):
            M += c * Tq
        nrm = float(np.sqrt(np.sum(M * M)))
        if nrm > 1e-12:
            M /= nrm
        return CqVerdict(
            CqStatus.FAILS,
            reason="pattern-restricted gradient pairing is not injective",
            witness={"matrix": M, "image_norm": float(np.linalg.norm(Wu @ M[iu])),
                     "subspace_dim": dim_T},
            log=log)
    log.append("injectivity holds on the pattern subspace")

    if dim_T == 0 or any(
            max((abs(Tq[i, i]) for Tq in basis_T), default=0.0) <= 1e-12
            for i in range(k)):
        missing = [i for i in range(k) if
                   max((abs(Tq[i, i]) for Tq in basis_T), default=0.0) <= 1e-12]
        return CqVerdict(
            CqStatus.FAILS,
            reason="a diagonal entry vanishes identically on the pattern "
                   "subspace, so it contains no positive definite element",
            witness={"vanishing_diagonal": missing, "subspace_dim": dim_T},
            log=log)

    stack = np.array(basis_T)
    rng = np.random.default_rng(seed)
    stop = 1e-2 * (1.0 + float(np.max(np.abs(stack))))
    c, margin = _primal_direction_search(stack, np.eye(dim_T),
                                         restarts=5, iters=200, rng=rng,
                                         stop_at=stop)
    log.append(f"positive definite search margin {margin:.3e}")
    if margin > PRIMAL_MARGIN:
        M = np.tensordot(c, stack, axes=1)
        lam_min = float(eigh(SymMat.from_symmetric(M)).values[-1])
        if lam_min > 0.0:
            return CqVerdict(
                CqStatus.HOLDS_CERTIFIED,
                reason="pairing injective and positive definite element found",
                witness={"matrix": M, "lambda_min": lam_min,
                         "subspace_dim": dim_T},
                log=log)
    return CqVerdict(
        CqStatus.UNDETERMINED,
        reason=f"injectivity holds but the positive definite search was "
               f"inconclusive (margin {margin:.2e})",
        log=log)


def _orthonormalize_syms(mats: Sequence[np.ndarray],
                         tol: float = 1e-10) -> List[np.ndarray]:
    """Gram-Schmidt in the Frobenius geometry, near-zero residues dropped."""
    out: List[np.ndarray] = []
    for M in mats:
        R = np.array(M, dtype=float)
        for B in out:
            R = R - float(np.sum(R * B)) * B
        nrm = float(np.sqrt(np.sum(R * R)))
        if nrm > tol:
            out.append(R / nrm)
    return out


# ---------------------------------------------------------------------------
# facial reduction


@dataclass
class FacialReduction:
    """Result of the facial rewrite at a point.

    V1 and V2 are the composed orthonormal blocks over all rounds: V2
    spans the directions eliminated into equality constraints and V1 the
    remaining semidefinite block, both expressed in the original
    coordinates.  J_rounds records, per round, which diagonal indices of
    the compressed map were structurally zero.
    """

    original: NsdpProblem
    reduced_problem: NsdpProblem
    V1: np.ndarray
    V2: np.ndarray
    rounds: int
    J_rounds: Tuple[Tuple[int, ...], ...]
    added_equalities: Tuple[Poly, ...]

    @property
    def J(self) -> Tuple[int, ...]:
        return self.J_rounds[0] if self.J_rounds else ()

    @property
    def omega(self) -> int:
        return self.V2.shape[1]

    def is_identity(self) -> bool:
        return self.rounds == 0


def _poly_signature(p: Poly):
    """Canonical key identifying a polynomial up to overall sign."""
    if not p.terms:
        return ()
    lead = p.terms[0][0]
    q = p if lead > 0 else -p
    return tuple((round(c, 12), e) for c, e in q.terms)


def facial_reduce(P: NsdpProblem, x, tol_rank: float = TAU_RANK,
                  max_rounds: Optional[int] = None) -> FacialReduction:
    """Rewrite the constraint so every compressed diagonal entry is active.

    Rounds repeat while some diagonal entry of the kernel-compressed map
    is identically zero: those kernel directions span a face of the cone,
    the corresponding rows become equality constraints, and the
    semidefinite block shrinks.  Emitted equality polynomials are
    deduplicated up to sign and coefficient noise below the pattern
    threshold is dropped.
    """
    x = np.asarray(x, dtype=float)
    max_rounds = P.m if max_rounds is None else max_rounds
    cur = P
    V1_total = np.eye(P.m)
    V2_cols: List[np.ndarray] = []
    new_eqs: List[Poly] = []
    seen = {_poly_signature(h) for h in P.equalities}
    J_rounds: List[Tuple[int, ...]] = []
    rounds = 0

    for _ in range(max_rounds):
        fd = feasibility_data(cur, x, tol_rank)
        E = fd.kernel
        k = E.nullity
        if k == 0:
            break
        hat = hat_map(cur, x, E)
        J = [i for i in range(k) if not hat.pattern.has(i, i)]
        if not J:
            break
        rounds += 1
        J_rounds.append(tuple(J))
        V2r = E.cols[:, J]
        V1r = orthonormal_completion(V2r)
        for q in range(V2r.shape[1]):
            V2_cols.append(V1_total @ V2r[:, q])
        # equality rows: entries of V2^T G(x), deduplicated up to sign
        mcur = cur.m
        for q in range(V2r.shape[1]):
            for j in range(mcur):
                acc = Poly.zero(P.n)
                for a in range(mcur):
                    c = float(V2r[a, q])
                    if c != 0.0:
                        p = cur.constraint.entry(a, j)
                        if not p.is_zero():
                            acc = acc + p.scale(c)
                acc = acc.truncated(PATTERN_COEF_TOL)
                if acc.is_zero():
                    continue
                sig = _poly_signature(acc)
                if sig in seen:
                    continue
                seen.add(sig)
                new_eqs.append(acc)
        red_entries = _congruence_entries(cur.constraint, V1r)
        mred = V1r.shape[1]
        if mred == 0:
            red = MatrixPoly(1, P.n, {})
            V1_total = np.zeros((P.m, 0))
        else:
            red = MatrixPoly(mred, P.n, red_entries)
            V1_total = V1_total @ V1r
        cur = NsdpProblem(
            n=P.n, objective=P.objective, constraint=red,
            equalities=tuple(P.equalities) + tuple(new_eqs),
            name=P.name + "#reduced")
        if mred == 0:
            break

    if rounds == 0:
        return FacialReduction(
            original=P, reduced_problem=P, V1=np.eye(P.m),
            V2=np.zeros((P.m, 0)), rounds=0, J_rounds=(),
            added_equalities=())
    V2 = np.column_stack(V2_cols) if V2_cols else np.zeros((P.m, 0))
    return FacialReduction(
        original=P, reduced_problem=cur, V1=V1_total, V2=V2,
        rounds=rounds, J_rounds=tuple(J_rounds),
        added_equalities=tuple(new_eqs))


# ---------------------------------------------------------------------------
# pattern cardinality invariance


def sparse_card_invariance(P: NsdpProblem, x, trials: int = 50,
                           seed: int = 0,
                           tol_rank: float = TAU_RANK) -> dict:
    """Sample kernel bases and compare pattern cardinalities.

    Among sampled bases whose pattern-restricted family is independent,
    the pattern cardinality is a basis invariant; a violation in the
    report points at a numerics problem (threshold too loose for the
    sampled rotations), not at the mathematics.
    """
    x = np.asarray(x, dtype=float)
    fd = feasibility_data(P, x, tol_rank)
    E0 = fd.kernel
    k = E0.nullity
    if k == 0:
        return {"passing": 0, "cardinalities": [], "consistent": True,
                "violations": []}
    ctx = _SearchContext(P, x)
    rng = np.random.default_rng(seed)
    records = []
    for t in range(trials + 1):
        cols = E0.cols if t == 0 else E0.cols @ random_rotation(k, rng)
        Bs = ctx.compressed_stack(cols)
        pairs = ctx.pattern_pairs(Bs)
        li = li_test(ctx.family(cols, pairs))
        if li.independent:
            records.append((t, len(pairs)))
    cards = sorted({c for _, c in records})
    violations = []
    if len(cards) > 1:
        violations = [{"trial": t, "cardinality": c} for t, c in records]
    return {
        "passing": len(records),
        "cardinalities": cards,
        "consistent": len(cards) <= 1,
        "violations": violations,
    }
