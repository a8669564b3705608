"""Tests for the constraint-qualification checks.

Expected verdicts and witness values for the hand-built examples below
were derived by hand from the defining conditions (interior directions,
dual multipliers, gradient families) and are frozen here as oracles.
Witnesses returned with a Fails verdict are always replugged into the
violated condition and must reproduce it within 1e-7.
"""
import numpy as np
import pytest

from nsdpcq.cqcheck import (
    CqStatus,
    EntryGradientFamily,
    check_nondegeneracy,
    check_robinson,
    entry_gradient,
    feasibility_data,
    find_multiplier,
    kkt_residual,
    li_test,
    pli_test,
)
from nsdpcq.errors import InfeasiblePointError
from nsdpcq.lp import phase_one
from nsdpcq.model import MatrixPoly, NsdpProblem, Poly
from nsdpcq.symmat import eigh, SymMat, random_rotation, rotate_basis

RT2 = 1.0 / np.sqrt(2.0)


# ---------------------------------------------------------------------------
# problem zoo (local copies, independent of the shipped corpus)


def xv(n, i, c=1.0):
    return Poly.var(n, i, c)


def diag3_problem():
    f = xv(3, 0) + xv(3, 1) + xv(3, 2)
    G = MatrixPoly.diagonal([xv(3, 0), xv(3, 1), xv(3, 2)])
    return NsdpProblem(3, f, G, name="diag3")


def facial_problem():
    # G = [[x1, x2], [x2, 0]], f = x2; the PSD set forces x2 = 0
    G = MatrixPoly(2, 2, {(0, 0): xv(2, 0), (0, 1): xv(2, 1)})
    return NsdpProblem(2, xv(2, 1), G, name="facial")


def scalar2_problem():
    G = MatrixPoly.diagonal([xv(1, 0), xv(1, 0)])
    return NsdpProblem(1, xv(1, 0), G, name="scalar2")


def offdiag_problem():
    G = MatrixPoly(2, 2, {(0, 0): xv(2, 0), (0, 1): xv(2, 1),
                          (1, 1): xv(2, 0)})
    return NsdpProblem(2, xv(2, 0), G, name="offdiag")


def interior_problem():
    one = Poly.const(2, 1.0)
    G = MatrixPoly(2, 2, {(0, 0): one + xv(2, 0), (0, 1): xv(2, 1),
                          (1, 1): one - xv(2, 0)})
    f = Poly(2, [(1.0, (2, 0)), (1.0, (0, 2))])
    return NsdpProblem(2, f, G, name="interior")


def fullmat_problem():
    G = MatrixPoly(2, 3, {(0, 0): xv(3, 0), (0, 1): xv(3, 1),
                          (1, 1): xv(3, 2)})
    return NsdpProblem(3, xv(3, 0) + xv(3, 2), G, name="fullmat")


def block2_problem():
    top = MatrixPoly(2, 3, {(0, 0): xv(3, 0), (0, 1): xv(3, 1),
                            (1, 1): xv(3, 0)})
    bot = MatrixPoly(1, 3, {(0, 0): xv(3, 2)})
    G = MatrixPoly.block_diag([top, bot])
    return NsdpProblem(3, xv(3, 0) + xv(3, 2), G, name="block2")


def rand_problem(rng, n, m, density=0.6):
    entries = {}
    for i in range(m):
        for j in range(i, m):
            if i == j or rng.random() < density:
                terms = []
                for _ in range(int(rng.integers(1, 4))):
                    e = [0] * n
                    for _ in range(int(rng.integers(0, 3))):
                        e[int(rng.integers(0, n))] += 1
                    terms.append((float(rng.standard_normal()), tuple(e)))
                p = Poly(n, terms)
                if not p.is_zero():
                    entries[(i, j)] = p
    if not entries:
        entries[(0, 0)] = Poly.var(n, 0)
    G = MatrixPoly(m, n, entries)
    f = Poly.var(n, 0)
    return NsdpProblem(n, f, G)


def replay_cone_witness(P, x, witness, tol=1e-7):
    """Plug a positive-dependence witness back into its defining identity."""
    E = np.asarray(witness["basis"], dtype=float)
    alpha = np.asarray(witness["alpha"], dtype=float)
    acc = np.zeros(P.n)
    for i in range(E.shape[1]):
        acc += alpha[i] * entry_gradient(P, x, E[:, i])
    Heq = P.equality_gradients(np.asarray(x, dtype=float))
    beta = witness.get("free_coeffs")
    if beta is not None and Heq.shape[0]:
        acc += Heq.T @ np.asarray(beta, dtype=float)
    assert np.all(alpha >= -1e-12)
    assert abs(float(np.sum(alpha)) - 1.0) <= 1e-7
    assert float(np.linalg.norm(acc)) <= tol


# ---------------------------------------------------------------------------
# phase-one simplex


class TestPhaseOne:
    def test_feasible_square(self):
        A = np.array([[1.0, 1.0], [0.0, 1.0]])
        b = np.array([2.0, 1.0])
        res = phase_one(A, b)
        assert res.feasible
        assert res.optimum <= 1e-9
        assert np.all(res.z >= -1e-12)
        assert np.allclose(A @ res.z, b, atol=1e-9)

    def test_infeasible_negative_rhs(self):
        res = phase_one(np.array([[1.0]]), np.array([-1.0]))
        assert not res.feasible
        assert res.optimum == pytest.approx(1.0, abs=1e-9)

    def test_sum_to_one_conflict(self):
        # z1 = 0, z2 = 0 but z1 + z2 = 1 has artificial mass exactly 1
        A = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
        b = np.array([0.0, 0.0, 1.0])
        res = phase_one(A, b)
        assert not res.feasible
        assert res.optimum == pytest.approx(1.0, abs=1e-9)

    def test_degenerate_zero_rhs(self):
        res = phase_one(np.array([[1.0, -1.0]]), np.array([0.0]))
        assert res.feasible

    def test_redundant_rows(self):
        A = np.array([[1.0, 1.0], [2.0, 2.0]])
        b = np.array([1.0, 2.0])
        res = phase_one(A, b)
        assert res.feasible
        assert np.allclose(A @ res.z, b, atol=1e-9)

    def test_random_consistent_systems(self):
        # systems built from a known nonnegative solution must be feasible
        rng = np.random.default_rng(7)
        for _ in range(50):
            m, k = int(rng.integers(1, 5)), int(rng.integers(2, 7))
            A = rng.standard_normal((m, k))
            z0 = rng.random(k)
            b = A @ z0
            res = phase_one(A, b)
            assert res.feasible
            assert np.allclose(A @ res.z, b, atol=1e-8)


# ---------------------------------------------------------------------------
# gradient families


class TestEntryGradients:
    def test_reference_basis_values_diag3(self):
        # kernel basis (e1, (-e2+e3)/sqrt 2, (e2+e3)/sqrt 2) of the zero
        # matrix: the two rotated columns share the same entry gradient
        # (0, 1/2, 1/2), so the family is dependent for this basis
        P = diag3_problem()
        x = np.zeros(3)
        fd = feasibility_data(P, x)
        assert fd.rank == 0 and fd.kernel.nullity == 3
        C = np.array([[1.0, 0.0, 0.0],
                      [0.0, -RT2, RT2],
                      [0.0, RT2, RT2]])
        E = rotate_basis(fd.kernel, C)
        fam = EntryGradientFamily.build(P, x, E)
        expect = np.array([0.0, 0.5, 0.5])
        assert np.allclose(fam.vecs[(1, 1)], expect, atol=1e-10)
        assert np.allclose(fam.vecs[(2, 2)], expect, atol=1e-10)
        li = li_test([fam.vecs[(1, 1)], fam.vecs[(2, 2)]])
        assert not li.independent

    def test_entrywise_vs_adjoint(self):
        # the two formulas for v: entrywise contraction of the partials
        # against (u, w), and the adjoint applied to the symmetrized outer
        # product, must agree to near machine precision
        rng = np.random.default_rng(11)
        for _ in range(60):
            n, m = int(rng.integers(1, 5)), int(rng.integers(1, 5))
            P = rand_problem(rng, n, m)
            x = rng.standard_normal(n)
            u = rng.standard_normal(m)
            w = rng.standard_normal(m)
            W = P.constraint_partials(x)
            va = np.einsum("lab,a,b->l", W, u, w)
            vb = entry_gradient(P, x, u, w)
            scale = 1.0 + float(np.max(np.abs(va), initial=0.0))
            assert np.allclose(va, vb, atol=1e-10 * scale)

    def test_family_matches_single_entry_calls(self):
        P = fullmat_problem()
        x = np.zeros(3)
        fd = feasibility_data(P, x)
        fam = EntryGradientFamily.build(P, x, fd.kernel)
        E = fd.kernel.cols
        for (i, j) in fam.upper_pairs():
            direct = entry_gradient(P, x, E[:, i], E[:, j])
            assert np.allclose(fam.vecs[(i, j)], direct, atol=1e-12)


# ---------------------------------------------------------------------------
# independence tests


class TestLiTest:
    def test_independent_axes(self):
        res = li_test([np.array([1.0, 0.0]), np.array([0.0, 1.0])])
        assert res.independent
        assert res.rank == 2
        assert res.sigma_min == pytest.approx(1.0, abs=1e-12)

    def test_duplicate_vector(self):
        v = np.array([1.0, 2.0])
        res = li_test([v, v])
        assert not res.independent
        assert res.rank == 1
        combo = res.coeffs[0] * v + res.coeffs[1] * v
        assert np.linalg.norm(combo) <= 1e-8

    def test_zero_vector_dependent(self):
        res = li_test([np.zeros(3)])
        assert not res.independent
        assert res.rank == 0

    def test_shared_entry_gradient_rank(self):
        v = np.array([0.0, 0.5, 0.5])
        res = li_test([v, v])
        assert res.rank == 1

    def test_independent_implies_positively_independent(self):
        rng = np.random.default_rng(23)
        for _ in range(100):
            k = int(rng.integers(1, 5))
            vecs = [rng.standard_normal(6) for _ in range(k)]
            li = li_test(vecs)
            if li.independent:
                assert pli_test(vecs).pos_independent


class TestPliTest:
    def test_axes_positively_independent(self):
        res = pli_test([np.array([1.0, 0.0]), np.array([0.0, 1.0])])
        assert res.pos_independent
        assert res.margin == pytest.approx(1.0, abs=1e-9)

    def test_opposite_pair(self):
        e1 = np.array([1.0, 0.0])
        res = pli_test([e1, -e1])
        assert not res.pos_independent
        assert np.allclose(res.alpha, [0.5, 0.5], atol=1e-9)

    def test_simplex_triple(self):
        vecs = [np.array([1.0, 0.0]), np.array([0.0, 1.0]),
                np.array([-1.0, -1.0])]
        res = pli_test(vecs)
        assert not res.pos_independent
        combo = sum(a * v for a, v in zip(res.alpha, vecs))
        assert np.linalg.norm(combo) <= 1e-9

    def test_open_halfplane_family(self):
        res = pli_test([np.array([1.0, 0.0]), np.array([1.0, 1.0])])
        assert res.pos_independent

    def test_free_vector_does_not_break_independence(self):
        res = pli_test([np.array([1.0, 1.0])],
                       free_vectors=[np.array([0.0, 1.0])])
        assert res.pos_independent

    def test_free_vector_cancels(self):
        e1 = np.array([1.0, 0.0])
        res = pli_test([e1], free_vectors=[e1])
        assert not res.pos_independent
        combo = res.alpha[0] * e1 + res.free_coeffs[0] * e1
        assert np.linalg.norm(combo) <= 1e-9

    def test_scaling_invariance(self):
        rng = np.random.default_rng(31)
        for _ in range(50):
            vecs = [rng.standard_normal(4) for _ in range(3)]
            base = pli_test(vecs).pos_independent
            scaled = [v * float(rng.uniform(0.01, 100.0)) for v in vecs]
            assert pli_test(scaled).pos_independent == base


# ---------------------------------------------------------------------------
# nondegeneracy


class TestNondegeneracy:
    def test_diag3_fails_by_dimension(self):
        v = check_nondegeneracy(diag3_problem(), np.zeros(3))
        assert v.status == CqStatus.FAILS
        assert "cannot be independent" in v.reason
        W = np.asarray(v.witness["vectors"])
        c = np.asarray(v.witness["coeffs"])
        assert np.linalg.norm(c) > 0.5
        assert np.linalg.norm(c @ W) <= 1e-7

    def test_scalar2_fails_by_dimension(self):
        v = check_nondegeneracy(scalar2_problem(), np.zeros(1))
        assert v.status == CqStatus.FAILS

    def test_fullmat_holds(self):
        v = check_nondegeneracy(fullmat_problem(), np.zeros(3))
        assert v.status == CqStatus.HOLDS_CERTIFIED
        assert v.witness["sigma_min"] > 0.9

    def test_facial_fails_with_null_combination(self):
        v = check_nondegeneracy(facial_problem(), np.zeros(2))
        assert v.status == CqStatus.FAILS
        W = np.asarray(v.witness["vectors"])
        c = np.asarray(v.witness["coeffs"])
        assert np.linalg.norm(c @ W) <= 1e-7

    def test_offdiag_fails(self):
        # v_11 = v_22 = (1, 0) for the axis basis, a strict dependence
        v = check_nondegeneracy(offdiag_problem(), np.zeros(2))
        assert v.status == CqStatus.FAILS
        W = np.asarray(v.witness["vectors"])
        c = np.asarray(v.witness["coeffs"])
        assert np.linalg.norm(c @ W) <= 1e-7

    def test_interior_holds(self):
        v = check_nondegeneracy(interior_problem(), np.zeros(2))
        assert v.status == CqStatus.HOLDS_CERTIFIED
        assert "interior" in v.reason

    def test_partially_active_diagonal(self):
        one = Poly.const(2, 1.0)
        G = MatrixPoly.diagonal([xv(2, 0), one + xv(2, 1)])
        P = NsdpProblem(2, xv(2, 0), G)
        v = check_nondegeneracy(P, np.zeros(2))
        assert v.status == CqStatus.HOLDS_CERTIFIED

    def test_equality_gradients_join_family(self):
        P = NsdpProblem(2, xv(2, 0), interior_problem().constraint,
                        equalities=[xv(2, 0), xv(2, 0, 2.0)])
        v = check_nondegeneracy(P, np.zeros(2))
        assert v.status == CqStatus.FAILS

    def test_independence_invariant_under_basis_rotation(self):
        rng = np.random.default_rng(5)
        for P, x in ((fullmat_problem(), np.zeros(3)),
                     (offdiag_problem(), np.zeros(2))):
            fd = feasibility_data(P, x)
            base = li_test(EntryGradientFamily.build(P, x, fd.kernel)
                           .upper_vectors()).independent
            for _ in range(20):
                C = random_rotation(fd.kernel.nullity, rng)
                fam = EntryGradientFamily.build(P, x,
                                                rotate_basis(fd.kernel, C))
                assert li_test(fam.upper_vectors()).independent == base


# ---------------------------------------------------------------------------
# Robinson's condition


class TestRobinson:
    def test_diag3_holds_via_mfcq(self):
        v = check_robinson(diag3_problem(), np.zeros(3))
        assert v.status == CqStatus.HOLDS_CERTIFIED
        assert "MFCQ" in v.reason

    def test_scalar2_holds(self):
        v = check_robinson(scalar2_problem(), np.zeros(1))
        assert v.status == CqStatus.HOLDS_CERTIFIED

    def test_facial_fails_with_dual_witness(self):
        P = facial_problem()
        x = np.zeros(2)
        v = check_robinson(P, x)
        assert v.status == CqStatus.FAILS
        Y = np.asarray(v.witness["multiplier"])
        # the annihilating multiplier is (up to scale) e2 e2^T
        assert np.allclose(Y, [[0.0, 0.0], [0.0, 1.0]], atol=1e-5)
        assert np.linalg.norm(P.adjoint(x, Y)) <= 1e-7
        assert float(eigh(SymMat.from_symmetric(Y)).values[-1]) >= -1e-10
        assert abs(np.trace(Y) - 1.0) <= 1e-7
        replay_cone_witness(P, x, v.witness)

    def test_offdiag_holds_with_direction(self):
        P = offdiag_problem()
        x = np.zeros(2)
        v = check_robinson(P, x)
        assert v.status == CqStatus.HOLDS_CERTIFIED
        d = np.asarray(v.witness["direction"])
        W = P.constraint_partials(x)
        shifted = P.constraint_value(x).a + np.tensordot(d, W, axes=1)
        assert float(eigh(SymMat.from_symmetric(shifted)).values[-1]) > 0.0

    def test_interior_holds(self):
        v = check_robinson(interior_problem(), np.zeros(2))
        assert v.status == CqStatus.HOLDS_CERTIFIED

    def test_fullmat_holds(self):
        v = check_robinson(fullmat_problem(), np.zeros(3))
        assert v.status == CqStatus.HOLDS_CERTIFIED

    def test_block2_holds(self):
        v = check_robinson(block2_problem(), np.zeros(3))
        assert v.status == CqStatus.HOLDS_CERTIFIED

    def test_equality_compatible_direction(self):
        # h = x1 - x2 leaves the interior direction (1, 1, 1) available
        P = NsdpProblem(3, diag3_problem().objective,
                        diag3_problem().constraint,
                        equalities=[xv(3, 0) - xv(3, 1)])
        v = check_robinson(P, np.zeros(3))
        assert v.status == CqStatus.HOLDS_CERTIFIED

    def test_equality_blocks_every_direction(self):
        # h = x1 + x2 + x3 forces sum d = 0, no positive diagonal move
        P = NsdpProblem(3, diag3_problem().objective,
                        diag3_problem().constraint,
                        equalities=[xv(3, 0) + xv(3, 1) + xv(3, 2)])
        x = np.zeros(3)
        v = check_robinson(P, x)
        assert v.status == CqStatus.FAILS
        replay_cone_witness(P, x, v.witness)

    def test_dependent_equality_gradients(self):
        P = NsdpProblem(2, xv(2, 0), interior_problem().constraint,
                        equalities=[xv(2, 0), xv(2, 0, 2.0)])
        v = check_robinson(P, np.zeros(2))
        assert v.status == CqStatus.FAILS
        assert "equality" in v.reason

    def test_rank_deficient_corner_holds(self):
        one = Poly.const(2, 1.0)
        G = MatrixPoly(2, 2, {(0, 0): xv(2, 0), (0, 1): xv(2, 1),
                              (1, 1): one + xv(2, 0)})
        P = NsdpProblem(2, xv(2, 0), G)
        v = check_robinson(P, np.zeros(2))
        assert v.status == CqStatus.HOLDS_CERTIFIED

    def test_one_dim_kernel_killed_by_equality(self):
        G = MatrixPoly(1, 1, {(0, 0): xv(1, 0)})
        P = NsdpProblem(1, xv(1, 0), G, equalities=[xv(1, 0)])
        v = check_robinson(P, np.zeros(1))
        assert v.status == CqStatus.FAILS

    def test_infeasible_point_rejected(self):
        with pytest.raises(InfeasiblePointError) as exc:
            check_robinson(interior_problem(), np.array([2.0, 0.0]))
        assert exc.value.eigenvalues is not None
        assert min(exc.value.eigenvalues) < -0.5


# ---------------------------------------------------------------------------
# feasibility data


class TestFeasibility:
    def test_interior_rank(self):
        fd = feasibility_data(interior_problem(), np.zeros(2))
        assert fd.rank == 2
        assert fd.kernel.nullity == 0
        assert np.allclose(fd.eigenvalues, [1.0, 1.0], atol=1e-12)

    def test_zero_matrix_full_kernel(self):
        fd = feasibility_data(facial_problem(), np.zeros(2))
        assert fd.rank == 0
        assert fd.kernel.nullity == 2

    def test_tiny_negative_within_tolerance(self):
        fd = feasibility_data(scalar2_problem(), np.array([-1e-10]))
        assert fd.kernel.nullity == 2

    def test_clearly_infeasible(self):
        with pytest.raises(InfeasiblePointError):
            feasibility_data(scalar2_problem(), np.array([-1.0]))


# ---------------------------------------------------------------------------
# KKT residuals


class TestKkt:
    def test_facial_closed_form(self):
        # grad f - DG*[Y] = (-Y11, 1 - 2 Y12) at the origin, so the
        # stationarity residual has the closed form hypot(Y11, 1 - 2 Y12)
        P = facial_problem()
        rng = np.random.default_rng(3)
        for _ in range(20):
            a, b, c = rng.standard_normal(3)
            cert = kkt_residual(P, np.zeros(2), [[a, b], [b, c]])
            assert cert.stationarity_residual == pytest.approx(
                np.hypot(a, 1.0 - 2.0 * b), abs=1e-12)

    def test_facial_has_no_bounded_multiplier(self):
        # PSD forces Y11 Y22 >= Y12^2; pushing the residual to zero needs
        # Y11 = 0 and Y12 = 1/2, violating that, so every PSD multiplier
        # of norm at most 10 keeps a residual above a computable bound
        P = facial_problem()
        rng = np.random.default_rng(13)
        best = np.inf
        for _ in range(2000):
            L = rng.standard_normal((2, 2))
            Y = L @ L.T
            s = float(np.max(np.abs(Y)))
            if s > 10.0:
                Y = Y * (10.0 / s)
            cert = kkt_residual(P, np.zeros(2), Y)
            if cert.psd_defect <= 1e-10:
                best = min(best, cert.stationarity_residual)
        assert best > 1e-3

    def test_complementarity_residual(self):
        P = facial_problem()
        cert = kkt_residual(P, np.array([1.0, 0.0]),
                            [[1.0, 0.0], [0.0, 0.0]])
        assert cert.complementarity_residual == pytest.approx(1.0, abs=1e-12)

    def test_psd_defect_flags_indefinite_multiplier(self):
        P = facial_problem()
        cert = kkt_residual(P, np.zeros(2), [[0.0, 0.5], [0.5, 0.0]])
        assert cert.stationarity_residual <= 1e-12
        assert cert.psd_defect == pytest.approx(0.5, abs=1e-10)
        assert not cert.is_valid()

    def test_diag3_identity_multiplier(self):
        cert = kkt_residual(diag3_problem(), np.zeros(3), np.eye(3))
        assert cert.stationarity_residual <= 1e-12
        assert cert.complementarity_residual <= 1e-12
        assert cert.psd_defect <= 1e-12
        assert cert.is_valid(tol=1e-8)

    def test_find_multiplier_diag3(self):
        cert = find_multiplier(diag3_problem(), np.zeros(3))
        assert cert.stationarity_residual <= 1e-8
        assert cert.psd_defect <= 1e-10
        assert np.allclose(cert.multiplier.a, np.eye(3), atol=1e-7)

    def test_find_multiplier_fullmat(self):
        cert = find_multiplier(fullmat_problem(), np.zeros(3))
        assert cert.stationarity_residual <= 1e-8
        assert np.allclose(cert.multiplier.a, np.eye(2), atol=1e-7)

    def test_find_multiplier_with_equality(self):
        # f = x2, G = [x1], h = x1 - x2: stationarity needs Y = [1], mu = -1
        G = MatrixPoly(1, 2, {(0, 0): xv(2, 0)})
        P = NsdpProblem(2, xv(2, 1), G, equalities=[xv(2, 0) - xv(2, 1)])
        cert = find_multiplier(P, np.zeros(2))
        assert cert.stationarity_residual <= 1e-8
        assert cert.multiplier.a[0, 0] == pytest.approx(1.0, abs=1e-7)
        assert cert.equality_multipliers[0] == pytest.approx(-1.0, abs=1e-7)

    def test_find_multiplier_interior_stationary(self):
        cert = find_multiplier(interior_problem(), np.zeros(2))
        assert cert.stationarity_residual <= 1e-12
        assert cert.is_valid(tol=1e-10)
