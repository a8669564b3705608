"""Dense symmetric-matrix numerics.

All spectral work in this package runs through a hand-rolled cyclic Jacobi
eigensolver.  Jacobi is slower than a Householder-based solver but it is
simple, deterministic (fixed sweep order, no branching on data layout) and
computes small eigenvalues of well-scaled matrices essentially to machine
precision, which the penalty-method multiplier estimates rely on once the
penalty parameter gets large.

Conventions used everywhere:

* eigenvalues are reported in non-increasing order,
* the kernel of a PSD matrix is the span of eigenvectors whose eigenvalues
  are below ``tol * max(1, lambda_max)``,
* inner product on symmetric matrices is the Frobenius one, ``tr(M N)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import JacobiConvergenceError, NotPsdError, NumericalFailure

TAU_EIG = 1e-10
TAU_RANK = 1e-8
MAX_SWEEPS = 100

_EPS = float(np.finfo(float).eps)


_upper_masks: dict = {}


def _upper_mask(m: int) -> np.ndarray:
    """Boolean mask of the upper triangle including the diagonal, cached."""
    mask = _upper_masks.get(m)
    if mask is None:
        mask = np.triu(np.ones((m, m), dtype=bool))
        _upper_masks[m] = mask
    return mask


def frobenius(a: np.ndarray, b: np.ndarray) -> float:
    """Frobenius inner product <A, B> = tr(A B) for symmetric arrays."""
    return float(np.sum(np.asarray(a) * np.asarray(b)))


class SymMat:
    """Immutable dense symmetric matrix.

    The upper triangle of the input is authoritative; the lower triangle is
    overwritten by its mirror on construction, so ``M.a`` is exactly
    symmetric (entrywise equality, not merely within a tolerance).
    """

    __slots__ = ("a",)

    def __init__(self, entries):
        arr = np.array(entries, dtype=float)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1] or arr.shape[0] < 1:
            raise ValueError("SymMat needs a square array of dimension >= 1")
        if not np.all(np.isfinite(arr)):
            raise ValueError("SymMat entries must be finite")
        arr = np.where(_upper_mask(arr.shape[0]), arr, arr.T)
        arr.setflags(write=False)
        self.a = arr

    @classmethod
    def from_symmetric(cls, arr) -> "SymMat":
        """Build from a numerically near-symmetric array by averaging."""
        arr = np.asarray(arr, dtype=float)
        return cls((arr + arr.T) / 2.0)

    @classmethod
    def diag(cls, values) -> "SymMat":
        return cls(np.diag(np.asarray(values, dtype=float)))

    @classmethod
    def zero(cls, m: int) -> "SymMat":
        return cls(np.zeros((m, m)))

    @property
    def dim(self) -> int:
        return self.a.shape[0]

    def norm_inf(self) -> float:
        return float(np.max(np.abs(self.a))) if self.a.size else 0.0

    def __repr__(self):
        return f"SymMat({self.a.tolist()!r})"


@dataclass(frozen=True)
class Spectral:
    """Eigendecomposition M = U diag(values) U^T, values non-increasing."""

    values: np.ndarray
    vectors: np.ndarray  # column i belongs to values[i]

    def reconstruct(self) -> np.ndarray:
        return (self.vectors * self.values) @ self.vectors.T


def _as_array(M) -> np.ndarray:
    return M.a if isinstance(M, SymMat) else np.asarray(M, dtype=float)


def eigh(M, max_sweeps: int = MAX_SWEEPS) -> Spectral:
    """Cyclic Jacobi eigendecomposition of a symmetric matrix.

    Sweeps the strict upper triangle in row-major order and applies a
    Givens rotation to every entry above a small rotation floor.  Sweeping
    stops once the largest off-diagonal entry falls to roughly machine
    precision relative to the matrix scale, or once a full sweep makes no
    progress (rounding floor reached).  If after ``max_sweeps`` sweeps the
    off-diagonal residual still exceeds ``TAU_EIG`` times the scale, a
    :class:`JacobiConvergenceError` carrying that residual is raised.
    """
    a = np.array(_as_array(M), dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("eigh needs a square symmetric matrix")
    a = (a + a.T) / 2.0
    m = a.shape[0]
    u = np.eye(m)
    if m > 1:
        scale = float(np.max(np.abs(a)))
        if scale > 0.0:
            conv_tol = 2.0 * _EPS * scale
            rot_floor = 0.25 * conv_tol
            converged = False
            for _ in range(max_sweeps):
                rotated = False
                for p in range(m - 1):
                    for q in range(p + 1, m):
                        apq = float(a[p, q])
                        if abs(apq) <= rot_floor:
                            continue
                        rotated = True
                        app = float(a[p, p])
                        aqq = float(a[q, q])
                        theta = (aqq - app) / (2.0 * apq)
                        # stable tangent of the rotation angle
                        t = 1.0 if theta >= 0.0 else -1.0
                        t = t / (abs(theta) + math.hypot(theta, 1.0))
                        c = 1.0 / math.hypot(t, 1.0)
                        s = t * c
                        # two-sided rotation via the new rows only: the
                        # matrix stays symmetric, so the rotated rows are
                        # also the rotated columns, with the p/q entries
                        # given in closed form
                        rp = c * a[p, :] - s * a[q, :]
                        rq = s * a[p, :] + c * a[q, :]
                        rp[p] = app - t * apq
                        rp[q] = 0.0
                        rq[p] = 0.0
                        rq[q] = aqq + t * apq
                        a[p, :] = rp
                        a[q, :] = rq
                        a[:, p] = rp
                        a[:, q] = rq
                        up = c * u[:, p] - s * u[:, q]
                        u[:, q] = s * u[:, p] + c * u[:, q]
                        u[:, p] = up
                off = _max_offdiag(a)
                if off <= conv_tol or not rotated:
                    converged = True
                    break
            if not converged:
                off = _max_offdiag(a)
                if off > TAU_EIG * scale:
                    raise JacobiConvergenceError(
                        f"Jacobi sweeps did not converge, off-diagonal {off:.3e} "
                        f"(scale {scale:.3e})",
                        off,
                    )
    values = np.diag(a).copy()
    order = np.argsort(-values, kind="stable")
    values = values[order]
    vectors = u[:, order]
    # deterministic sign: make the largest-magnitude component positive
    for j in range(m):
        col = vectors[:, j]
        k = int(np.argmax(np.abs(col)))
        if col[k] < 0.0:
            vectors[:, j] = -col
    values.setflags(write=False)
    vectors.setflags(write=False)
    return Spectral(values=values, vectors=vectors)


_offdiag_masks: dict = {}


def _max_offdiag(a: np.ndarray) -> float:
    m = a.shape[0]
    if m < 2:
        return 0.0
    mask = _offdiag_masks.get(m)
    if mask is None:
        mask = ~np.eye(m, dtype=bool)
        _offdiag_masks[m] = mask
    return float(np.max(np.abs(a[mask])))


def proj_psd(M) -> SymMat:
    """Projection onto the PSD cone: clamp negative eigenvalues to zero."""
    spec = eigh(M)
    lam = np.clip(spec.values, 0.0, None)
    r = (spec.vectors * lam) @ spec.vectors.T
    return SymMat.from_symmetric(r)


def numerical_rank(M, tol: float = TAU_RANK) -> int:
    """Count of eigenvalues with |lambda_i| > tol * max(1, |lambda_1|)."""
    spec = eigh(M)
    if spec.values.size == 0:
        return 0
    thr = tol * max(1.0, abs(float(spec.values[0])))
    return int(np.sum(np.abs(spec.values) > thr))


@dataclass(frozen=True)
class Provenance:
    """Where a kernel basis came from.

    kind is one of "fixed" (deterministic eigensolve), "sampled" (random
    rotation applied, seed recorded) or "sequence_limit" (limit of
    eigenvector matrices along a sequence, trace id recorded).
    """

    kind: str
    seed: Optional[int] = None
    trace_id: Optional[str] = None

    def describe(self) -> str:
        if self.kind == "sampled":
            return f"sampled(seed={self.seed})"
        if self.kind == "sequence_limit":
            return f"sequence_limit({self.trace_id})"
        return self.kind


FIXED = Provenance("fixed")


@dataclass(frozen=True)
class KernelBasis:
    """Orthonormal basis of Ker M for a PSD matrix M of rank r.

    cols is m x (m - r) with orthonormal columns spanning the kernel.
    """

    cols: np.ndarray
    rank: int
    provenance: Provenance

    @property
    def dim(self) -> int:
        return self.cols.shape[0]

    @property
    def nullity(self) -> int:
        return self.cols.shape[1]


def kernel_basis(M, tol: float = TAU_RANK,
                 provenance: Provenance = FIXED) -> KernelBasis:
    """Orthonormal kernel basis of a PSD matrix.

    Eigenvectors whose eigenvalues satisfy |lambda| <= tol * max(1, lambda_1)
    form the kernel cluster.  They are re-orthonormalized by modified
    Gram-Schmidt in ascending column order so tie handling is deterministic.
    Raises :class:`NotPsdError` when M has an eigenvalue below the negative
    tolerance.
    """
    spec = eigh(M)
    m = spec.values.shape[0]
    lam1 = abs(float(spec.values[0])) if m else 0.0
    thr = tol * max(1.0, lam1)
    lam_min = float(spec.values[-1])
    if lam_min < -thr:
        raise NotPsdError(
            f"matrix is not PSD within tolerance (min eigenvalue {lam_min:.3e})",
            lam_min,
        )
    mask = np.abs(spec.values) <= thr
    cols = spec.vectors[:, mask].copy()
    cols = _mgs(cols)
    cols.setflags(write=False)
    return KernelBasis(cols=cols, rank=m - cols.shape[1], provenance=provenance)


def _mgs(cols: np.ndarray) -> np.ndarray:
    """Modified Gram-Schmidt over columns, ascending index order."""
    out = np.array(cols, dtype=float)
    for j in range(out.shape[1]):
        v = out[:, j]
        for i in range(j):
            v = v - np.dot(out[:, i], v) * out[:, i]
        nrm = float(np.linalg.norm(v))
        if nrm < 1e-8:
            raise NumericalFailure("Gram-Schmidt hit a near-dependent column")
        out[:, j] = v / nrm
    return out


def rotate_basis(E: KernelBasis, C: np.ndarray,
                 seed: Optional[int] = None) -> KernelBasis:
    """Replace a kernel basis by E @ C for an orthogonal C.

    The span (and therefore the rank bookkeeping) is unchanged; provenance
    flips to "sampled" since the result no longer comes straight from the
    deterministic eigensolve.
    """
    C = np.asarray(C, dtype=float)
    k = E.cols.shape[1]
    if C.shape != (k, k):
        raise ValueError(f"rotation must be {k} x {k}, got {C.shape}")
    defect = float(np.max(np.abs(C.T @ C - np.eye(k)))) if k else 0.0
    if defect > 1e-10:
        raise ValueError(f"rotation is not orthogonal (defect {defect:.3e})")
    cols = E.cols @ C
    cols.setflags(write=False)
    return KernelBasis(cols=cols, rank=E.rank,
                       provenance=Provenance("sampled", seed=seed))


def random_rotation(k: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed orthogonal k x k matrix.

    Orthogonalized Gaussian draw; afterwards each column is sign-fixed so
    its first component above 1e-12 in magnitude is positive, which keeps
    sampled bases reproducible across platforms.
    """
    if k == 0:
        return np.zeros((0, 0))
    g = rng.standard_normal((k, k))
    q, r = np.linalg.qr(g)
    q = q * np.sign(np.where(np.diag(r) == 0.0, 1.0, np.diag(r)))
    return fix_column_signs(q)


def fix_column_signs(q: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    q = np.array(q, dtype=float)
    for j in range(q.shape[1]):
        col = q[:, j]
        nz = np.nonzero(np.abs(col) > tol)[0]
        if nz.size and col[nz[0]] < 0.0:
            q[:, j] = -col
    return q


def orthonormal_completion(V: np.ndarray) -> np.ndarray:
    """Extend orthonormal columns V (m x w) to a full basis; return the
    m x (m - w) complement block, built deterministically from identity
    candidates."""
    V = np.asarray(V, dtype=float)
    m, w = V.shape
    cols = [V[:, j] for j in range(w)]
    out = []
    for i in range(m):
        if len(cols) == m:
            break
        v = np.zeros(m)
        v[i] = 1.0
        for c in cols:
            v = v - np.dot(c, v) * c
        nrm = float(np.linalg.norm(v))
        if nrm > 1e-8:
            v = v / nrm
            cols.append(v)
            out.append(v)
    if len(cols) != m:
        raise NumericalFailure("failed to complete orthonormal basis")
    return np.column_stack(out) if out else np.zeros((m, 0))
