"""Polynomial model of a nonlinear semidefinite program.

A problem is

    minimize f(x)  subject to  G(x) PSD,  h_i(x) = 0,

where f, the entries of the symmetric matrix map G and the h_i are real
polynomials in n variables.  Entries of G are stored sparsely by upper
triangle; an absent entry is a *structural* zero (the zero polynomial),
which is what the sparsity-based constraint qualifications key off.

Polynomials are kept in a canonical form (terms sorted by exponent tuple,
like terms merged, coefficients below 1e-14 dropped) so that structural
zero tests are exact term-list checks.  The tiny-coefficient drop exists
because facial-reduction output re-enters the model as polynomials whose
coefficients carry numeric congruence noise.
"""
from __future__ import annotations

import json
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ProblemFormatError
from .symmat import SymMat

COEF_DROP = 1e-14
MAX_VARS = 64
MAX_DIM = 50
MAX_DEGREE = 8

Exponents = Tuple[int, ...]
Term = Tuple[float, Exponents]


class Poly:
    """Immutable polynomial in n variables, canonical term list."""

    __slots__ = ("n", "terms")

    def __init__(self, n: int, terms: Iterable[Term] = ()):
        if not (1 <= n <= MAX_VARS):
            raise ProblemFormatError(f"variable count {n} outside [1, {MAX_VARS}]")
        acc: Dict[Exponents, float] = {}
        for coef, exps in terms:
            exps = tuple(int(e) for e in exps)
            if len(exps) != n:
                raise ProblemFormatError(
                    f"exponent tuple {exps} does not have {n} entries")
            if any(e < 0 for e in exps):
                raise ProblemFormatError(f"negative exponent in {exps}")
            if sum(exps) > MAX_DEGREE:
                raise ProblemFormatError(
                    f"term degree {sum(exps)} exceeds cap {MAX_DEGREE}")
            c = float(coef)
            if not np.isfinite(c):
                raise ProblemFormatError("non-finite coefficient")
            acc[exps] = acc.get(exps, 0.0) + c
        clean = tuple(sorted(
            ((c, e) for e, c in acc.items() if abs(c) >= COEF_DROP),
            key=lambda t: t[1]))
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "terms", clean)

    def __setattr__(self, *_):
        raise AttributeError("Poly is immutable")

    # ---- constructors -------------------------------------------------

    @classmethod
    def zero(cls, n: int) -> "Poly":
        return cls(n, ())

    @classmethod
    def const(cls, n: int, c: float) -> "Poly":
        return cls(n, [(c, (0,) * n)])

    @classmethod
    def var(cls, n: int, i: int, coef: float = 1.0) -> "Poly":
        e = [0] * n
        e[i] = 1
        return cls(n, [(coef, tuple(e))])

    # ---- queries ------------------------------------------------------

    def is_zero(self) -> bool:
        return not self.terms

    def degree(self) -> int:
        return max((sum(e) for _, e in self.terms), default=0)

    def eval(self, x: np.ndarray) -> float:
        x = np.asarray(x, dtype=float)
        total = 0.0
        for c, e in self.terms:
            v = c
            for xi, ei in zip(x, e):
                if ei:
                    v *= xi ** ei
            total += v
        return total

    def partial(self, i: int) -> "Poly":
        terms = []
        for c, e in self.terms:
            if e[i] > 0:
                d = list(e)
                d[i] -= 1
                terms.append((c * e[i], tuple(d)))
        return Poly(self.n, terms)

    def grad(self) -> Tuple["Poly", ...]:
        return tuple(self.partial(i) for i in range(self.n))

    def truncated(self, tol: float) -> "Poly":
        """Copy with coefficients at or below tol dropped."""
        return Poly(self.n, [(c, e) for c, e in self.terms if abs(c) > tol])

    def max_coef(self) -> float:
        return max((abs(c) for c, _ in self.terms), default=0.0)

    # ---- arithmetic ---------------------------------------------------

    def __add__(self, other: "Poly") -> "Poly":
        self._compat(other)
        return Poly(self.n, self.terms + other.terms)

    def __sub__(self, other: "Poly") -> "Poly":
        return self + (-other)

    def __neg__(self) -> "Poly":
        return Poly(self.n, [(-c, e) for c, e in self.terms])

    def scale(self, a: float) -> "Poly":
        if a == 0.0:
            return Poly.zero(self.n)
        return Poly(self.n, [(a * c, e) for c, e in self.terms])

    def __mul__(self, other: Union["Poly", float, int]) -> "Poly":
        if isinstance(other, (int, float)):
            return self.scale(float(other))
        self._compat(other)
        terms = []
        for c1, e1 in self.terms:
            for c2, e2 in other.terms:
                terms.append((c1 * c2, tuple(a + b for a, b in zip(e1, e2))))
        return Poly(self.n, terms)

    __rmul__ = __mul__

    def _compat(self, other: "Poly"):
        if not isinstance(other, Poly) or other.n != self.n:
            raise ProblemFormatError("polynomial arity mismatch")

    def __eq__(self, other):
        return isinstance(other, Poly) and self.n == other.n \
            and self.terms == other.terms

    def __hash__(self):
        return hash((self.n, self.terms))

    def __repr__(self):
        if not self.terms:
            return "0"
        parts = []
        for c, e in self.terms:
            mono = "*".join(f"x{i + 1}^{ei}" if ei > 1 else f"x{i + 1}"
                            for i, ei in enumerate(e) if ei)
            parts.append(f"{c:g}" + (f"*{mono}" if mono else ""))
        return " + ".join(parts)

    # ---- wire format --------------------------------------------------

    def to_json(self) -> List[dict]:
        return [{"c": c, "e": list(e)} for c, e in self.terms]

    @classmethod
    def from_json(cls, n: int, data, where: str = "poly") -> "Poly":
        if not isinstance(data, list):
            raise ProblemFormatError(f"{where}: expected a list of terms")
        terms = []
        for k, item in enumerate(data):
            if not isinstance(item, dict):
                raise ProblemFormatError(f"{where}[{k}]: expected an object")
            extra = set(item) - {"c", "e"}
            if extra:
                raise ProblemFormatError(
                    f"{where}[{k}]: unknown keys {sorted(extra)}")
            if "c" not in item or "e" not in item:
                raise ProblemFormatError(f"{where}[{k}]: needs 'c' and 'e'")
            c = item["c"]
            e = item["e"]
            if not isinstance(c, (int, float)) or isinstance(c, bool):
                raise ProblemFormatError(f"{where}[{k}]: 'c' must be a number")
            if not isinstance(e, list) or not all(
                    isinstance(v, int) and not isinstance(v, bool) for v in e):
                raise ProblemFormatError(
                    f"{where}[{k}]: 'e' must be a list of integers")
            terms.append((float(c), tuple(e)))
        return cls(n, terms)


def structural_zero(p: Poly) -> bool:
    """True iff p's canonical term list is empty."""
    return p.is_zero()


class MatrixPoly:
    """Symmetric matrix of polynomials, stored by upper triangle.

    entries maps (i, j) with i <= j to a nonzero Poly; everything absent
    is a structural zero.  An optional block partition (sizes of
    consecutive diagonal blocks) may be declared, in which case entries
    crossing a block boundary must be absent.
    """

    __slots__ = ("dim", "n", "entries", "blocks")

    def __init__(self, dim: int, n: int,
                 entries: Dict[Tuple[int, int], Poly],
                 blocks: Optional[Sequence[int]] = None):
        if not (1 <= dim <= MAX_DIM):
            raise ProblemFormatError(f"matrix dimension {dim} outside [1, {MAX_DIM}]")
        clean: Dict[Tuple[int, int], Poly] = {}
        for (i, j), p in entries.items():
            if not (0 <= i <= j < dim):
                raise ProblemFormatError(f"entry index ({i}, {j}) out of range")
            if p.n != n:
                raise ProblemFormatError("entry arity mismatch")
            if not p.is_zero():
                clean[(i, j)] = p
        object.__setattr__(self, "dim", dim)
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "entries", clean)
        if blocks is not None:
            blocks = tuple(int(b) for b in blocks)
            if any(b < 1 for b in blocks) or sum(blocks) != dim:
                raise ProblemFormatError(
                    f"blocks {list(blocks)} do not partition dimension {dim}")
            owner = np.repeat(np.arange(len(blocks)), blocks)
            for (i, j) in clean:
                if owner[i] != owner[j]:
                    raise ProblemFormatError(
                        f"entry ({i}, {j}) crosses declared block boundary")
        object.__setattr__(self, "blocks", blocks)

    def __setattr__(self, *_):
        raise AttributeError("MatrixPoly is immutable")

    @classmethod
    def diagonal(cls, polys: Sequence[Poly],
                 blocks: Optional[Sequence[int]] = None) -> "MatrixPoly":
        n = polys[0].n
        return cls(len(polys), n, {(i, i): p for i, p in enumerate(polys)},
                   blocks=blocks)

    @classmethod
    def block_diag(cls, parts: Sequence["MatrixPoly"]) -> "MatrixPoly":
        n = parts[0].n
        dim = sum(p.dim for p in parts)
        entries = {}
        off = 0
        for part in parts:
            for (i, j), poly in part.entries.items():
                entries[(off + i, off + j)] = poly
            off += part.dim
        return cls(dim, n, entries, blocks=[p.dim for p in parts])

    def entry(self, i: int, j: int) -> Poly:
        if i > j:
            i, j = j, i
        return self.entries.get((i, j), Poly.zero(self.n))

    def eval(self, x: np.ndarray) -> np.ndarray:
        out = np.zeros((self.dim, self.dim))
        for (i, j), p in self.entries.items():
            v = p.eval(x)
            out[i, j] = v
            out[j, i] = v
        return out

    def max_degree(self) -> int:
        return max((p.degree() for p in self.entries.values()), default=0)

    def __eq__(self, other):
        return isinstance(other, MatrixPoly) and self.dim == other.dim \
            and self.n == other.n and self.entries == other.entries

    def __hash__(self):
        return hash((self.dim, self.n, tuple(sorted(self.entries.items()))))


class _CompiledConstraint:
    """Monomial-stacked form of G for fast numeric evaluation.

    G(x) = sum_t mon_t(x) * A_t with constant symmetric A_t; partial
    derivatives and the adjoint DG(x)*[M] reuse the same stacks.
    """

    def __init__(self, G: MatrixPoly):
        mono_index: Dict[Exponents, int] = {}
        for p in G.entries.values():
            for _, e in p.terms:
                mono_index.setdefault(e, len(mono_index))
        T = len(mono_index)
        n, m = G.n, G.dim
        E = np.zeros((T, n), dtype=np.int64)
        for e, t in mono_index.items():
            E[t, :] = e
        A = np.zeros((T, m, m))
        for (i, j), p in G.entries.items():
            for c, e in p.terms:
                t = mono_index[e]
                A[t, i, j] += c
                if i != j:
                    A[t, j, i] += c
        self.E = E
        self.A = A
        self.n = n
        self.m = m
        # derivative stacks per variable: indices of contributing monomials,
        # multiplier (the exponent) and reduced exponent rows
        self.dmask = []
        for l in range(n):
            rows = np.nonzero(E[:, l] > 0)[0]
            Ered = E[rows].copy()
            Ered[:, l] -= 1
            self.dmask.append((rows, E[rows, l].astype(float), Ered))

    def _mons(self, x: np.ndarray, E: np.ndarray) -> np.ndarray:
        if E.shape[0] == 0:
            return np.zeros(0)
        return np.prod(np.power(x[None, :], E), axis=1)

    def value(self, x: np.ndarray) -> np.ndarray:
        if self.A.shape[0] == 0:
            return np.zeros((self.m, self.m))
        mons = self._mons(x, self.E)
        return np.tensordot(mons, self.A, axes=1)

    def partials(self, x: np.ndarray) -> np.ndarray:
        out = np.zeros((self.n, self.m, self.m))
        for l in range(self.n):
            rows, mult, Ered = self.dmask[l]
            if rows.size == 0:
                continue
            mons = mult * self._mons(x, Ered)
            out[l] = np.tensordot(mons, self.A[rows], axes=1)
        return out

    def adjoint(self, x: np.ndarray, M: np.ndarray) -> np.ndarray:
        dots = np.tensordot(self.A, M, axes=2) if self.A.shape[0] else np.zeros(0)
        out = np.zeros(self.n)
        for l in range(self.n):
            rows, mult, Ered = self.dmask[l]
            if rows.size == 0:
                continue
            mons = mult * self._mons(x, Ered)
            out[l] = float(np.dot(mons, dots[rows]))
        return out


class NsdpProblem:
    """A nonlinear SDP instance: objective, PSD constraint, equalities."""

    __slots__ = ("name", "n", "m", "objective", "constraint", "equalities",
                 "_compiled", "_obj_grad", "_eq_grads")

    def __init__(self, n: int, objective: Poly, constraint: MatrixPoly,
                 equalities: Sequence[Poly] = (), name: str = "unnamed"):
        if objective.n != n or constraint.n != n:
            raise ProblemFormatError("objective/constraint arity mismatch")
        for h in equalities:
            if h.n != n:
                raise ProblemFormatError("equality arity mismatch")
        if objective.degree() > MAX_DEGREE or constraint.max_degree() > MAX_DEGREE:
            raise ProblemFormatError(f"degree exceeds cap {MAX_DEGREE}")
        object.__setattr__(self, "name", str(name))
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "m", constraint.dim)
        object.__setattr__(self, "objective", objective)
        object.__setattr__(self, "constraint", constraint)
        object.__setattr__(self, "equalities", tuple(equalities))
        object.__setattr__(self, "_compiled", None)
        object.__setattr__(self, "_obj_grad", None)
        object.__setattr__(self, "_eq_grads", None)

    def __setattr__(self, *_):
        raise AttributeError("NsdpProblem is immutable")

    def _c(self) -> _CompiledConstraint:
        if self._compiled is None:
            object.__setattr__(self, "_compiled", _CompiledConstraint(self.constraint))
        return self._compiled

    # ---- numeric evaluation ------------------------------------------

    def constraint_value(self, x) -> SymMat:
        x = np.asarray(x, dtype=float)
        return SymMat.from_symmetric(self._c().value(x))

    def constraint_partials(self, x) -> np.ndarray:
        """Stacked partial derivative matrices, shape (n, m, m)."""
        return self._c().partials(np.asarray(x, dtype=float))

    def adjoint(self, x, M) -> np.ndarray:
        """DG(x)*[M] = (<D_1 G(x), M>, ..., <D_n G(x), M>)."""
        M = M.a if isinstance(M, SymMat) else np.asarray(M, dtype=float)
        return self._c().adjoint(np.asarray(x, dtype=float), M)

    def objective_value(self, x) -> float:
        return self.objective.eval(np.asarray(x, dtype=float))

    def objective_gradient(self, x) -> np.ndarray:
        if self._obj_grad is None:
            object.__setattr__(self, "_obj_grad", self.objective.grad())
        x = np.asarray(x, dtype=float)
        return np.array([p.eval(x) for p in self._obj_grad])

    def equality_values(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.array([h.eval(x) for h in self.equalities])

    def equality_gradients(self, x) -> np.ndarray:
        """Rows are the gradients of the h_i, shape (k, n)."""
        if self._eq_grads is None:
            object.__setattr__(self, "_eq_grads",
                               tuple(h.grad() for h in self.equalities))
        x = np.asarray(x, dtype=float)
        return np.array([[p.eval(x) for p in g] for g in self._eq_grads]) \
            if self._eq_grads else np.zeros((0, self.n))

    # ---- wire format --------------------------------------------------

    def to_json(self) -> dict:
        out = {
            "name": self.name,
            "n": self.n,
            "m": self.m,
            "objective": self.objective.to_json(),
            "constraint": [
                {"i": i, "j": j, "poly": p.to_json()}
                for (i, j), p in sorted(self.constraint.entries.items())
            ],
        }
        if self.equalities:
            out["equalities"] = [h.to_json() for h in self.equalities]
        if self.constraint.blocks is not None:
            out["blocks"] = list(self.constraint.blocks)
        return out

    @classmethod
    def from_json(cls, obj) -> "NsdpProblem":
        if not isinstance(obj, dict):
            raise ProblemFormatError("problem must be a JSON object")
        allowed = {"name", "n", "m", "objective", "constraint",
                   "equalities", "blocks"}
        extra = set(obj) - allowed
        if extra:
            raise ProblemFormatError(f"unknown top-level keys {sorted(extra)}")
        for key in ("name", "n", "m", "objective", "constraint"):
            if key not in obj:
                raise ProblemFormatError(f"missing required key '{key}'")
        name = obj["name"]
        if not isinstance(name, str):
            raise ProblemFormatError("'name' must be a string")
        n, m = obj["n"], obj["m"]
        if not isinstance(n, int) or isinstance(n, bool) or not (1 <= n <= MAX_VARS):
            raise ProblemFormatError(f"'n' must be an integer in [1, {MAX_VARS}]")
        if not isinstance(m, int) or isinstance(m, bool) or not (1 <= m <= MAX_DIM):
            raise ProblemFormatError(f"'m' must be an integer in [1, {MAX_DIM}]")
        objective = Poly.from_json(n, obj["objective"], "objective")
        if not isinstance(obj["constraint"], list):
            raise ProblemFormatError("'constraint' must be a list of entries")
        entries: Dict[Tuple[int, int], Poly] = {}
        for k, item in enumerate(obj["constraint"]):
            where = f"constraint[{k}]"
            if not isinstance(item, dict):
                raise ProblemFormatError(f"{where}: expected an object")
            extra = set(item) - {"i", "j", "poly"}
            if extra:
                raise ProblemFormatError(f"{where}: unknown keys {sorted(extra)}")
            try:
                i, j = item["i"], item["j"]
            except KeyError as exc:
                raise ProblemFormatError(f"{where}: needs 'i', 'j', 'poly'") from exc
            if "poly" not in item:
                raise ProblemFormatError(f"{where}: needs 'i', 'j', 'poly'")
            if not all(isinstance(v, int) and not isinstance(v, bool)
                       for v in (i, j)):
                raise ProblemFormatError(f"{where}: indices must be integers")
            if not (0 <= i <= j < m):
                raise ProblemFormatError(
                    f"{where}: need 0 <= i <= j < m, got ({i}, {j})")
            if (i, j) in entries:
                raise ProblemFormatError(f"{where}: duplicate entry ({i}, {j})")
            entries[(i, j)] = Poly.from_json(n, item["poly"], f"{where}.poly")
        blocks = obj.get("blocks")
        if blocks is not None:
            if not isinstance(blocks, list) or not all(
                    isinstance(b, int) and not isinstance(b, bool) for b in blocks):
                raise ProblemFormatError("'blocks' must be a list of integers")
        constraint = MatrixPoly(m, n, entries, blocks=blocks)
        equalities = []
        if "equalities" in obj:
            if not isinstance(obj["equalities"], list):
                raise ProblemFormatError("'equalities' must be a list")
            for k, eq in enumerate(obj["equalities"]):
                equalities.append(Poly.from_json(n, eq, f"equalities[{k}]"))
        return cls(n=n, objective=objective, constraint=constraint,
                   equalities=equalities, name=name)


def parse_problem_text(text: str) -> NsdpProblem:
    """Parse a problem from JSON text; malformed JSON reports a byte offset."""
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ProblemFormatError(
            f"malformed JSON at byte offset {exc.pos}: {exc.msg}") from exc
    return NsdpProblem.from_json(obj)


def detect_blocks(P: NsdpProblem):
    """Finest partition of the constraint indices into decoupled blocks.

    Two indices are coupled when some off-diagonal entry joining them is
    not a structural zero; connected components of that graph give the
    finest block partition (after an implicit symmetric permutation).
    Returns the string "dense" when everything is one component, otherwise
    a list of sorted 0-based index lists.  A fully diagonal constraint
    comes back as all-singleton blocks.
    """
    m = P.m
    parent = list(range(m))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for (i, j) in P.constraint.entries:
        if i != j:
            ri, rj = find(i), find(j)
            if ri != rj:
                parent[max(ri, rj)] = min(ri, rj)
    groups: Dict[int, List[int]] = {}
    for i in range(m):
        groups.setdefault(find(i), []).append(i)
    comps = sorted((sorted(g) for g in groups.values()), key=lambda g: g[0])
    if len(comps) == 1:
        return "dense"
    return comps


def block_partition(P: NsdpProblem) -> List[List[int]]:
    """Like detect_blocks but always a list (single block when dense)."""
    comps = detect_blocks(P)
    return [list(range(P.m))] if comps == "dense" else comps


def structurally_diagonal(P: NsdpProblem) -> bool:
    """True when every off-diagonal constraint entry is a structural zero."""
    return all(i == j for (i, j) in P.constraint.entries)


def component_subproblem(P: NsdpProblem, comp: Sequence[int],
                         name_suffix: str = "") -> NsdpProblem:
    """Restriction of the PSD constraint to a block of indices.

    Keeps the full variable space; objective and equalities are dropped
    since block machinery only needs the constraint map.
    """
    comp = list(comp)
    pos = {g: k for k, g in enumerate(comp)}
    entries = {}
    for (i, j), p in P.constraint.entries.items():
        if i in pos and j in pos:
            entries[(pos[i], pos[j])] = p
        elif (i in pos) != (j in pos):
            raise ProblemFormatError(
                f"entry ({i}, {j}) couples indices across the requested block")
    sub = MatrixPoly(len(comp), P.n, entries)
    return NsdpProblem(n=P.n, objective=Poly.zero(P.n), constraint=sub,
                       name=P.name + name_suffix)
