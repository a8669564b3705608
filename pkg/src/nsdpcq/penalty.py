"""External penalty method and sequence-based probes for the weak conditions.

The regularized penalty function at level rho is

    phi(x) = f(x) + ||x - anchor||^2 / 2
           + (rho/2) (||proj_psd(-G(x))||_F^2 + sum_i h_i(x)^2)

and its minimizers x^k along rho_k -> infinity carry multiplier estimates
Y^k = rho_k proj_psd(-G(x^k)).  The trace of (x^k, Y^k) with the spectral
data of G(x^k) is the raw material for the weak-nondegeneracy and
weak-Robinson probes: both conditions quantify over sequences x^k -> x_bar
and ask for kernel bases, assembled from eigenvectors of G(x^k), whose
diagonal gradient family is (positively) independent.  The universal
quantifier is approximated by a finite family of traces, and the verdict
semantics say so: a passing probe reports HoldsSampled, never a
certificate, while Fails is only produced from a trace with no remaining
basis freedom.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .cqcheck import (
    CqStatus,
    CqVerdict,
    entry_gradient,
    feasibility_data,
    li_test,
    pli_test,
)
from .errors import NumericalFailure
from .model import NsdpProblem, structurally_diagonal
from .symmat import (
    TAU_RANK,
    KernelBasis,
    Provenance,
    SymMat,
    eigh,
    frobenius,
    random_rotation,
)

ARMIJO_C = 1e-4
LBFGS_MEMORY = 10
INNER_TOL_CAP = 1e-5         # floor of the per-level tolerance schedule
VALUE_NOISE = 1e-14          # float resolution of the penalty value, relative
TAU_CLUSTER = 1e-6
# 26 halvings from 1e-2 end 3e-10 from the limit, close enough for the
# rank of G at the limit to be read off the final iterate directly
PATH_STEPS = 26
PATH_SCALE = 1e-2
PATH_DECAY = 0.5


@dataclass(frozen=True)
class PenaltyConfig:
    anchor: np.ndarray
    rho0: float = 1.0
    rho_mult: float = 10.0
    outer_iters: int = 12
    inner_tol: float = 1e-8
    inner_max_iters: int = 400
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "anchor",
                           np.asarray(self.anchor, dtype=float))
        if not self.rho0 > 0.0:
            raise ValueError("rho0 must be positive")
        if not self.rho_mult > 1.0:
            raise ValueError("rho_mult must exceed 1")
        if not self.inner_tol > 0.0:
            raise ValueError("inner_tol must be positive")
        if self.outer_iters < 1 or self.inner_max_iters < 1:
            raise ValueError("iteration counts must be positive")


@dataclass
class PenaltyIterate:
    """One outer iterate; field names match the JSON trace format."""

    k: int
    rho: float
    x: np.ndarray
    multiplier: SymMat
    eigenvalues: np.ndarray       # of G(x), non-increasing
    eigenvectors: np.ndarray
    stationarity_residual: float
    multiplier_norm: float
    inner_converged: bool = True

    def to_json(self) -> dict:
        return {
            "k": self.k,
            "rho": self.rho,
            "x": [float(v) for v in self.x],
            "multiplier": [[float(v) for v in row]
                           for row in self.multiplier.a],
            "eigenvalues": [float(v) for v in self.eigenvalues],
            "eigenvectors": [[float(v) for v in row]
                             for row in self.eigenvectors],
            "stationarity_residual": float(self.stationarity_residual),
            "multiplier_norm": float(self.multiplier_norm),
        }


@dataclass
class PenaltyTrace:
    problem: str
    iterates: List[PenaltyIterate]
    kind: str = "penalty"            # or "path" for synthetic sequences
    trace_id: str = "penalty"
    divergence_suspected: bool = False
    notes: List[str] = field(default_factory=list)

    @property
    def converged_point(self) -> np.ndarray:
        if not self.iterates:
            raise ValueError("empty trace has no converged point")
        return self.iterates[-1].x

    def to_jsonl(self) -> str:
        return "\n".join(json.dumps(rec.to_json(), sort_keys=True)
                         for rec in self.iterates)


@dataclass(frozen=True)
class InnerResult:
    x: np.ndarray
    grad_norm: float
    converged: bool
    iterations: int


@dataclass
class SequenceProbeResult:
    """Per-trace evidence for one weak condition.

    limit_basis is the kernel basis obtained from the eigenvector
    sequence, snapped onto Ker G(x_bar) and possibly rotated within
    eigenvalue clusters by the search; exhaustive means every cluster of
    the tail iterate was simple, so no basis freedom remained and a
    failing test refutes the condition for this sequence.
    """

    trace_id: str
    limit_basis: KernelBasis
    sigma_min: float
    passed: bool
    exhaustive: bool
    rotation_search_log: List[str] = field(default_factory=list)


# ---------------------------------------------------------------------------
# penalty function and inner solver


def _penalty_parts(P: NsdpProblem, anchor: np.ndarray, rho: float,
                   x: np.ndarray, need_grad: bool, spec=None):
    """Value of phi and, when asked, its gradient and the multiplier.

    The constraint spectrum is the expensive piece; a caller that
    already holds eigh(G(x)) passes it back in so a line-search trial is
    not decomposed twice.  The spectrum used is always returned.
    """
    fx = P.objective_value(x)
    dx = x - anchor
    if spec is None:
        spec = eigh(P.constraint_value(x))
    neg = np.clip(-spec.values, 0.0, None)      # eigenvalues of proj(-G)
    hvals = P.equality_values(x)
    val = fx + 0.5 * float(dx @ dx) \
        + 0.5 * rho * (float(neg @ neg) + float(hvals @ hvals))
    if not need_grad:
        return val, None, None, spec
    act = neg > 0.0
    if np.any(act):
        V = spec.vectors[:, act]
        Ymat = rho * (V * neg[act]) @ V.T
    else:
        Ymat = np.zeros((P.m, P.m))
    Y = SymMat.from_symmetric(Ymat)
    grad = P.objective_gradient(x) + dx - P.adjoint(x, Y.a)
    if hvals.shape[0]:
        grad = grad + rho * (P.equality_gradients(x).T @ hvals)
    return val, grad, Y, spec


def penalty_value(P: NsdpProblem, anchor, rho: float, x) -> float:
    val, _, _, _ = _penalty_parts(P, np.asarray(anchor, float), rho,
                                  np.asarray(x, float), need_grad=False)
    return val


def penalty_gradient(P: NsdpProblem, anchor, rho: float, x) -> np.ndarray:
    _, grad, _, _ = _penalty_parts(P, np.asarray(anchor, float), rho,
                                   np.asarray(x, float), need_grad=True)
    return grad


def multiplier_estimate(P: NsdpProblem, rho: float, x) -> SymMat:
    """Y = rho * proj_psd(-G(x)), the running multiplier estimate."""
    _, _, Y, _ = _penalty_parts(P, np.zeros(P.n), rho, np.asarray(x, float),
                                need_grad=True)
    return Y


def _two_loop(g: np.ndarray, mem: List[Tuple[np.ndarray, np.ndarray, float]]):
    if not mem:
        return -g
    q = g.copy()
    alphas = []
    for s, y, r in reversed(mem):
        a = r * float(s @ q)
        q -= a * y
        alphas.append(a)
    s_last, y_last, _ = mem[-1]
    gamma = float(s_last @ y_last) / float(y_last @ y_last)
    r_vec = gamma * q
    for (s, y, r), a in zip(mem, reversed(alphas)):
        b = r * float(y @ r_vec)
        r_vec += (a - b) * s
    return -r_vec


def inner_tolerance(cfg: PenaltyConfig, rho: float) -> float:
    """Gradient threshold at level rho: scales with rho, capped below."""
    return min(cfg.inner_tol * (1.0 + rho), INNER_TOL_CAP)


def inner_minimize(P: NsdpProblem, cfg: PenaltyConfig, rho: float,
                   x_start) -> InnerResult:
    """L-BFGS with Armijo backtracking on the regularized penalty.

    phi is C^1 but not C^2 (the squared projection has eigenvalue kinks),
    so quasi-Newton with a descent safeguard is used instead of Newton.
    At very stiff levels the Armijo decrease drops below the float
    resolution of phi; such steps are accepted on strict gradient
    decrease, since the value comparison is pure rounding noise there.
    Returns the best point flagged not-converged when the iteration
    budget runs out.
    """
    anchor = cfg.anchor
    tol = inner_tolerance(cfg, rho)
    x = np.asarray(x_start, dtype=float).copy()
    val, grad, _, _ = _penalty_parts(P, anchor, rho, x, need_grad=True)
    mem: List[Tuple[np.ndarray, np.ndarray, float]] = []
    for it in range(cfg.inner_max_iters):
        gnorm = float(np.linalg.norm(grad))
        if gnorm <= tol:
            return InnerResult(x, gnorm, True, it)
        d = _two_loop(grad, mem)
        gd = float(grad @ d)
        if gd > -1e-14 * max(1.0, gnorm) * float(np.linalg.norm(d)):
            d = -grad
            gd = -gnorm * gnorm
        t = 1.0
        xn = None
        grad_n = None
        noise = VALUE_NOISE * max(1.0, abs(val))
        for _ in range(60):
            cand = x + t * d
            fc, _, _, spec_c = _penalty_parts(P, anchor, rho, cand,
                                              need_grad=False)
            if abs(t * gd) > noise:
                if fc <= val + ARMIJO_C * t * gd:
                    xn, val_n, spec_n = cand, fc, spec_c
                    break
            elif fc <= val + noise:
                # the requested Armijo decrease is below the float
                # resolution of phi (stiff levels push it under eps times
                # the value), so the value test carries no information;
                # accept on strict gradient decrease instead
                _, gc, _, _ = _penalty_parts(P, anchor, rho, cand,
                                             need_grad=True, spec=spec_c)
                if float(np.linalg.norm(gc)) < gnorm:
                    xn, val_n, spec_n, grad_n = cand, fc, spec_c, gc
                    break
            t *= 0.5
        if xn is None:
            if mem:
                # a stale inverse-Hessian estimate can leave no acceptable
                # step; drop it and retry the iteration from steepest
                # descent before giving up
                mem.clear()
                continue
            return InnerResult(x, gnorm, False, it)
        if grad_n is None:
            _, grad_n, _, _ = _penalty_parts(P, anchor, rho, xn,
                                             need_grad=True, spec=spec_n)
        s = xn - x
        yv = grad_n - grad
        sy = float(s @ yv)
        if sy > 1e-12 * float(np.linalg.norm(s)) * float(np.linalg.norm(yv)):
            mem.append((s, yv, 1.0 / sy))
            if len(mem) > LBFGS_MEMORY:
                mem.pop(0)
        x, val, grad = xn, val_n, grad_n
    gnorm = float(np.linalg.norm(grad))
    return InnerResult(x, gnorm, gnorm <= tol, cfg.inner_max_iters)


# ---------------------------------------------------------------------------
# outer loop


def run_penalty(P: NsdpProblem, cfg: PenaltyConfig) -> PenaltyTrace:
    """Outer penalty loop with warm starts and multiplier records.

    The anchor must be feasible.  Divergence of the multiplier estimates
    (factor >= 2 growth over the last three outer iterations at a
    stationary inner solution) is flagged on the trace; by the
    boundedness argument under Robinson's condition, sustained growth
    signals that no KKT multiplier exists at the limit.
    """
    feasibility_data(P, cfg.anchor)
    x = cfg.anchor.copy()
    rho = cfg.rho0
    iterates: List[PenaltyIterate] = []
    notes: List[str] = []
    for k in range(cfg.outer_iters):
        res = inner_minimize(P, cfg, rho, x)
        x = res.x
        _, grad, Y, spec = _penalty_parts(P, cfg.anchor, rho, x,
                                          need_grad=True)
        iterates.append(PenaltyIterate(
            k=k, rho=rho, x=x.copy(), multiplier=Y,
            eigenvalues=spec.values.copy(),
            eigenvectors=spec.vectors.copy(),
            stationarity_residual=float(np.linalg.norm(grad)),
            multiplier_norm=float(np.sqrt(frobenius(Y.a, Y.a))),
            inner_converged=res.converged))
        if not res.converged:
            notes.append(f"inner solve at rho={rho:.1e} stopped at gradient "
                         f"norm {res.grad_norm:.2e}")
        rho *= cfg.rho_mult
    divergent = False
    if len(iterates) >= 4:
        last = iterates[-1]
        ref = iterates[-4]
        if (last.inner_converged and ref.multiplier_norm > 0.0
                and last.multiplier_norm >= 2.0 * ref.multiplier_norm):
            divergent = True
            notes.append("multiplier divergence suspected: ||Y|| grew by "
                         f"{last.multiplier_norm / ref.multiplier_norm:.1f}x "
                         "over the last three outer iterations")
    return PenaltyTrace(problem=P.name, iterates=iterates,
                        divergence_suspected=divergent, notes=notes)


def make_path_trace(P: NsdpProblem, x_bar, direction,
                    steps: int = PATH_STEPS, scale: float = PATH_SCALE,
                    decay: float = PATH_DECAY,
                    trace_id: str = "path") -> PenaltyTrace:
    """Synthetic sequence x_bar + scale * decay^j * d packaged as a trace.

    The weak conditions quantify over arbitrary sequences, feasible or
    not, so the path records carry zero penalty level and multiplier.
    """
    x_bar = np.asarray(x_bar, dtype=float)
    d = np.asarray(direction, dtype=float)
    nrm = float(np.linalg.norm(d))
    if nrm < 1e-12:
        raise ValueError("path direction must be nonzero")
    d = d / nrm
    iterates = []
    zero = SymMat.zero(P.m)
    for j in range(steps):
        xj = x_bar + scale * (decay ** j) * d
        spec = eigh(P.constraint_value(xj))
        iterates.append(PenaltyIterate(
            k=j, rho=0.0, x=xj, multiplier=zero,
            eigenvalues=spec.values.copy(),
            eigenvectors=spec.vectors.copy(),
            stationarity_residual=0.0, multiplier_norm=0.0))
    return PenaltyTrace(problem=P.name, iterates=iterates, kind="path",
                        trace_id=trace_id)


def default_trace_family(P: NsdpProblem, cfg: PenaltyConfig,
                         count: int = 8) -> List[PenaltyTrace]:
    """One penalty trace plus axis and random-direction paths to x_bar.

    The penalty trace is dropped when its final iterate stays further
    than 1e-6 from the anchor; on degenerate problems the outer loop
    converges like a fractional power of 1/rho and the truncated run
    would violate the probes' proximity requirement.
    """
    if count < 1:
        raise ValueError("at least one trace is required")
    x_bar = cfg.anchor
    traces = []
    pen = run_penalty(P, cfg)
    if float(np.linalg.norm(pen.converged_point - x_bar)) <= 1e-6:
        traces.append(pen)
    axis_dirs = []
    for i in range(P.n):
        e = np.zeros(P.n)
        e[i] = 1.0
        axis_dirs += [e.copy(), -e]
    for idx, d in enumerate(axis_dirs):
        if len(traces) >= count:
            break
        traces.append(make_path_trace(P, x_bar, d, trace_id=f"axis{idx}"))
    rng = np.random.default_rng(cfg.seed)
    ray = 0
    while len(traces) < count:
        g = rng.standard_normal(P.n)
        nrm = float(np.linalg.norm(g))
        if nrm < 1e-12:
            continue
        traces.append(make_path_trace(P, x_bar, g / nrm,
                                      trace_id=f"ray{ray}"))
        ray += 1
    return traces


# ---------------------------------------------------------------------------
# eigenvector sequences


def extract_eigbasis_sequence(trace: PenaltyTrace,
                              rank: Optional[int] = None,
                              tol_rank: float = TAU_RANK) -> List[np.ndarray]:
    """Aligned kernel eigenvector blocks E^k along the trace tail.

    E^k collects the eigenvectors of the m - r smallest eigenvalues of
    G(x^k); columns are matched greedily to the previous iterate by
    largest absolute inner product and sign-aligned, repairing the
    arbitrary order and signs of independent eigensolves.  An iterate is
    usable when the r-th eigenvalue stays above twice the kernel
    threshold, so the range/kernel split is unambiguous.  When rank is
    not given it is read off the eigenvalues of the final iterate.
    """
    if not trace.iterates:
        raise NumericalFailure("empty trace")
    m = trace.iterates[-1].eigenvalues.shape[0]
    if rank is None:
        vals = trace.iterates[-1].eigenvalues
        thr = tol_rank * max(1.0, float(np.max(np.abs(vals), initial=0.0)))
        rank = int(np.sum(np.abs(vals) > thr))
    if m - rank == 0:
        return []
    usable = _usable_records(trace, rank, tol_rank)
    if len(usable) < 3:
        raise NumericalFailure(
            f"only {len(usable)} usable iterates in the trace tail, need 3")
    out: List[np.ndarray] = []
    prev: Optional[np.ndarray] = None
    for rec in usable:
        E = rec.eigenvectors[:, rank:].copy()
        if prev is not None:
            E = _align_columns(prev, E)
        out.append(E)
        prev = E
    return out


def _usable_records(trace: PenaltyTrace, rank: int,
                    tol_rank: float) -> List[PenaltyIterate]:
    out = []
    for rec in trace.iterates:
        vals = rec.eigenvalues
        scale = max(1.0, float(np.max(np.abs(vals), initial=0.0)))
        if rank > 0 and vals[rank - 1] <= 2.0 * tol_rank * scale:
            continue
        out.append(rec)
    return out


def _align_columns(prev: np.ndarray, E: np.ndarray) -> np.ndarray:
    """Greedy column matching maximizing |dot|, then sign alignment."""
    k = prev.shape[1]
    M = np.abs(prev.T @ E)
    used = np.zeros(k, dtype=bool)
    order = np.empty(k, dtype=int)
    for j in range(k):
        row = M[j].copy()
        row[used] = -1.0
        pick = int(np.argmax(row))
        order[j] = pick
        used[pick] = True
    out = E[:, order]
    for j in range(k):
        if float(prev[:, j] @ out[:, j]) < 0.0:
            out[:, j] = -out[:, j]
    return out


# ---------------------------------------------------------------------------
# weak-condition probes


def _snap_to_kernel(E: np.ndarray, K: np.ndarray) -> Optional[np.ndarray]:
    """Project columns onto span(K) and re-orthonormalize; None on defect."""
    B = K @ (K.T @ E)
    cols = []
    for j in range(B.shape[1]):
        v = B[:, j].copy()
        for c in cols:
            v -= float(c @ v) * c
        nrm = float(np.linalg.norm(v))
        if nrm < 1e-8:
            return None
        cols.append(v / nrm)
    return np.column_stack(cols)


def _persistent_clusters(records: Sequence[PenaltyIterate],
                         rank: int) -> List[List[int]]:
    """Kernel eigenvalue clusters that persist along the whole tail.

    Two consecutive kernel eigenvalues are merged only when they stay
    within the cluster tolerance at every usable iterate.  Eigenvalues
    that separate anywhere along the tail pin their eigenvectors there,
    so the limit basis has no rotation freedom between them; treating
    them as degenerate would invent freedom the sequence does not have.
    """
    k = records[0].eigenvalues.shape[0] - rank
    merged = [True] * max(k - 1, 0)
    for rec in records:
        vals = rec.eigenvalues[rank:]
        tau = TAU_CLUSTER * (1.0 + float(np.max(np.abs(rec.eigenvalues),
                                                initial=0.0)))
        for i in range(k - 1):
            if abs(vals[i] - vals[i + 1]) >= tau:
                merged[i] = False
    clusters: List[List[int]] = [[0]] if k else []
    for i in range(1, k):
        if merged[i - 1]:
            clusters[-1].append(i)
        else:
            clusters.append([i])
    return clusters


def _block_rotation(clusters: List[List[int]], k: int,
                    rng: np.random.Generator) -> np.ndarray:
    C = np.eye(k)
    for cl in clusters:
        if len(cl) > 1:
            R = random_rotation(len(cl), rng)
            idx = np.ix_(cl, cl)
            C[idx] = R
    return C


def _givens(k: int, p: int, q: int, theta: float) -> np.ndarray:
    C = np.eye(k)
    c, s = np.cos(theta), np.sin(theta)
    C[p, p] = c
    C[q, q] = c
    C[p, q] = -s
    C[q, p] = s
    return C


def _golden_max(f: Callable[[float], float], lo: float, hi: float,
                iters: int = 18) -> Tuple[float, float]:
    phi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - phi * (b - a)
    d = a + phi * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(iters):
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - phi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + phi * (b - a)
            fd = f(d)
    t = 0.5 * (a + b)
    return t, f(t)


def _cluster_search(objective: Callable[[np.ndarray], Tuple[float, bool]],
                    E: np.ndarray, clusters: List[List[int]],
                    rotations: int, rng: np.random.Generator):
    """Maximize the family objective over cluster-respecting rotations.

    objective maps a candidate basis to (score, passed); the search stops
    as soon as a passing basis is found, since one passing basis settles
    the per-trace question.  Budget split: roughly 60 percent random
    block rotations, the rest Givens coordinate-descent steps refined by
    golden-section search on the angle.  Returns rotation, score, log,
    the exhaustiveness flag, and whether the best basis passed.
    """
    k = E.shape[1]
    best_C = np.eye(k)
    best, ok = objective(E)
    log = [f"identity rotation score {best:.3e}"]
    free = [cl for cl in clusters if len(cl) > 1]
    if not free:
        return best_C, best, log, True, ok
    if ok:
        return best_C, best, log, False, True
    n_rand = int(round(0.6 * rotations))
    for draw in range(n_rand):
        C = _block_rotation(clusters, k, rng)
        sc, ok = objective(E @ C)
        if sc > best:
            best, best_C = sc, C
        if ok:
            log.append(f"random block rotation {draw} passes, "
                       f"score {sc:.3e}")
            return C, sc, log, False, True
    log.append(f"best of {n_rand} random block rotations {best:.3e}")
    pairs = [(cl[a], cl[b]) for cl in free
             for a in range(len(cl)) for b in range(a + 1, len(cl))]
    n_giv = max(rotations - n_rand, 0)
    for step in range(n_giv):
        p, q = pairs[step % len(pairs)]

        def along(theta: float) -> float:
            return objective(E @ best_C @ _givens(k, p, q, theta))[0]

        theta, sc = _golden_max(along, -np.pi / 4.0, np.pi / 4.0)
        if sc > best:
            best = sc
            best_C = best_C @ _givens(k, p, q, theta)
            if objective(E @ best_C)[1]:
                log.append(f"Givens step {step} passes, score {sc:.3e}")
                return best_C, best, log, False, True
    log.append(f"after {n_giv} Givens steps {best:.3e}")
    return best_C, best, log, False, objective(E @ best_C)[1]


def _diag_family(P: NsdpProblem, x_bar: np.ndarray, cols: np.ndarray):
    return [entry_gradient(P, x_bar, cols[:, i])
            for i in range(cols.shape[1])]


def _probe_traces(P: NsdpProblem, x_bar: np.ndarray,
                  traces: Sequence[PenaltyTrace], rotations: int, seed: int,
                  tol_rank: float, positive: bool):
    """Shared trace loop for both weak probes.

    positive selects the test: positive linear independence with equality
    gradients free (weak Robinson) versus plain linear independence with
    equality gradients appended (weak nondegeneracy).
    """
    fd = feasibility_data(P, x_bar, tol_rank)
    K = fd.kernel.cols
    rank = fd.rank
    Heq = P.equality_gradients(x_bar)
    eq_rows = [Heq[i] for i in range(Heq.shape[0])]
    W = P.constraint_partials(x_bar)

    def objective(cols: np.ndarray) -> Tuple[float, bool]:
        vmat = np.einsum("lab,ai,bi->il", W, cols, cols)
        fam = [vmat[i] for i in range(vmat.shape[0])]
        if positive:
            res = pli_test(fam, free_vectors=eq_rows)
            return res.margin, res.pos_independent
        res = li_test(fam + eq_rows)
        return res.sigma_min, res.independent

    results: List[SequenceProbeResult] = []
    certified_fail: Optional[SequenceProbeResult] = None
    for t_idx, trace in enumerate(traces):
        dist = float(np.linalg.norm(trace.converged_point - x_bar))
        if dist > 1e-6:
            raise ValueError(
                f"trace {trace.trace_id} converges {dist:.2e} away from the "
                "queried point")
        seq = extract_eigbasis_sequence(trace, rank=rank, tol_rank=tol_rank)
        E = _snap_to_kernel(seq[-1], K)
        log = []
        if E is None:
            E = K.copy()
            log.append("sequence limit defective, kernel basis substituted")
        clusters = _persistent_clusters(_usable_records(trace, rank,
                                                        tol_rank), rank)
        rng = np.random.default_rng([seed, t_idx])
        C, score, slog, exhaustive, ok = _cluster_search(
            objective, E, clusters, rotations, rng)
        log += slog
        cols = E @ C
        res = SequenceProbeResult(
            trace_id=trace.trace_id,
            limit_basis=KernelBasis(
                cols=cols, rank=rank,
                provenance=Provenance("sequence_limit",
                                      trace_id=trace.trace_id)),
            sigma_min=score, passed=ok, exhaustive=exhaustive,
            rotation_search_log=log)
        results.append(res)
        if not ok and exhaustive and certified_fail is None:
            certified_fail = res
    return results, certified_fail


def probe_weak_ndg(P: NsdpProblem, x_bar, traces: Sequence[PenaltyTrace],
                   rotations: int = 100, seed: int = 0,
                   tol_rank: float = TAU_RANK
                   ) -> Tuple[List[SequenceProbeResult], CqVerdict]:
    """Weak nondegeneracy probed along a family of sequences.

    Every trace must admit a kernel basis, assembled from its eigenvector
    tail and rotated within eigenvalue clusters, whose diagonal gradient
    family is independent.  All traces passing gives HoldsSampled; a
    failing trace with no cluster freedom is a genuine witness and gives
    Fails; the kernel-dimension bound fails the condition outright.
    """
    x_bar = np.asarray(x_bar, dtype=float)
    fd = feasibility_data(P, x_bar, tol_rank)
    k = fd.kernel.nullity
    ne = len(P.equalities)
    if k == 0:
        if ne == 0:
            return [], CqVerdict(CqStatus.HOLDS_CERTIFIED,
                                 reason="trivial kernel")
        Heq = P.equality_gradients(x_bar)
        res = li_test([Heq[i] for i in range(ne)])
        status = CqStatus.HOLDS_CERTIFIED if res.independent else \
            CqStatus.FAILS
        return [], CqVerdict(status,
                             reason="trivial kernel, equality gradients "
                                    "decide the condition",
                             witness={"sigma_min": res.sigma_min})
    if P.n < k + ne:
        return [], CqVerdict(
            CqStatus.FAILS,
            reason=f"any admissible basis needs {k + ne} independent "
                   f"gradients but the space has dimension {P.n}")
    if not traces:
        return [], CqVerdict(CqStatus.UNDETERMINED,
                             reason="no admissible traces supplied")
    results, bad = _probe_traces(P, x_bar, traces, rotations, seed,
                                 tol_rank, positive=False)
    if bad is not None:
        return results, CqVerdict(
            CqStatus.FAILS,
            reason=f"trace {bad.trace_id} leaves no basis freedom and its "
                   "diagonal gradient family is dependent",
            witness={"trace": bad.trace_id,
                     "basis": bad.limit_basis.cols,
                     "sigma_min": bad.sigma_min})
    if all(r.passed for r in results) and results:
        return results, CqVerdict(CqStatus.HOLDS_SAMPLED,
                                  samples=len(results),
                                  reason="all sampled sequences admit an "
                                         "independent diagonal family")
    return results, CqVerdict(
        CqStatus.UNDETERMINED,
        reason="some sequence failed the test with rotation freedom left, "
               "which neither certifies nor refutes the condition")


def probe_weak_robinson(P: NsdpProblem, x_bar,
                        traces: Sequence[PenaltyTrace],
                        rotations: int = 100, seed: int = 0,
                        tol_rank: float = TAU_RANK,
                        use_shortcuts: bool = True) -> CqVerdict:
    """Weak Robinson condition probed along sequences.

    Same machinery as the nondegeneracy probe with positive linear
    independence in place of linear independence.  For structurally
    diagonal constraints the condition is equivalent to positive
    independence of the active diagonal gradients, so it is decided
    exactly (disable with use_shortcuts=False to force the sampled path).
    """
    x_bar = np.asarray(x_bar, dtype=float)
    fd = feasibility_data(P, x_bar, tol_rank)
    k = fd.kernel.nullity
    ne = len(P.equalities)
    if k == 0:
        if ne == 0:
            return CqVerdict(CqStatus.HOLDS_CERTIFIED,
                             reason="trivial kernel")
        Heq = P.equality_gradients(x_bar)
        res = li_test([Heq[i] for i in range(ne)])
        status = CqStatus.HOLDS_CERTIFIED if res.independent else \
            CqStatus.FAILS
        return CqVerdict(status,
                         reason="trivial kernel, equality gradients decide "
                                "the condition",
                         witness={"sigma_min": res.sigma_min})
    if use_shortcuts and structurally_diagonal(P):
        Heq = P.equality_gradients(x_bar)
        fam = _diag_family(P, x_bar, fd.kernel.cols)
        res = pli_test(fam, free_vectors=[Heq[i]
                                          for i in range(Heq.shape[0])])
        if res.pos_independent:
            return CqVerdict(
                CqStatus.HOLDS_CERTIFIED,
                reason="diagonal constraint, active gradients positively "
                       "independent",
                witness={"margin": res.margin})
        return CqVerdict(
            CqStatus.FAILS,
            reason="diagonal constraint, active gradients positively "
                   "dependent",
            witness={"alpha": res.alpha, "free_coeffs": res.free_coeffs})
    if not traces:
        return CqVerdict(CqStatus.UNDETERMINED,
                         reason="no admissible traces supplied")
    results, bad = _probe_traces(P, x_bar, traces, rotations, seed,
                                 tol_rank, positive=True)
    if bad is not None:
        return CqVerdict(
            CqStatus.FAILS,
            reason=f"trace {bad.trace_id} leaves no basis freedom and its "
                   "diagonal family is positively dependent",
            witness={"trace": bad.trace_id,
                     "basis": bad.limit_basis.cols})
    if all(r.passed for r in results) and results:
        return CqVerdict(CqStatus.HOLDS_SAMPLED, samples=len(results),
                         reason="all sampled sequences admit a positively "
                                "independent diagonal family")
    return CqVerdict(
        CqStatus.UNDETERMINED,
        reason="some sequence failed the test with rotation freedom left, "
               "which neither certifies nor refutes the condition")
