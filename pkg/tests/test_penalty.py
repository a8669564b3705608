"""Penalty method and sequence-probe tests.

Closed forms used as oracles:

* G = diag(x1, x2, x3), f = x1 + x2 + x3, anchor 0: the penalty function
  separates per coordinate into x + x^2/2 + (rho/2) max(-x, 0)^2 with
  minimizer -1/(1+rho) and multiplier rho/(1+rho) -> 1.
* facial [[x1, x2], [x2, 0]] at (1, 0): the negative eigenvalue behaves
  like -x2^2, so the penalty solution has x2 of order (2 rho)^(-1/3) and
  the multiplier norm grows like (rho/4)^(1/3), a factor 10 every three
  levels; no KKT multiplier exists at the limit.
"""
import json

import numpy as np
import pytest

from test_cqcheck import (
    RT2,
    block2_problem,
    diag3_problem,
    facial_problem,
    fullmat_problem,
    interior_problem,
    offdiag_problem,
    scalar2_problem,
    xv,
)

from nsdpcq.cqcheck import CqStatus, entry_gradient, li_test
from nsdpcq.errors import InfeasiblePointError, NumericalFailure
from nsdpcq.model import MatrixPoly, NsdpProblem, Poly
from nsdpcq.penalty import (
    PenaltyConfig,
    default_trace_family,
    extract_eigbasis_sequence,
    inner_minimize,
    inner_tolerance,
    make_path_trace,
    multiplier_estimate,
    penalty_gradient,
    penalty_value,
    probe_weak_ndg,
    probe_weak_robinson,
    run_penalty,
)
from nsdpcq.symmat import eigh, proj_psd


def line_problem():
    # f = 0, G = [x1]; the regularized penalty is minimized at the anchor
    G = MatrixPoly(1, 1, {(0, 0): xv(1, 0)})
    return NsdpProblem(1, Poly.zero(1), G, name="line")


def facial_origin_problem():
    # same constraint as facial, objective pushing along the zero block
    G = MatrixPoly(2, 2, {(0, 0): xv(2, 0), (0, 1): xv(2, 1)})
    return NsdpProblem(2, xv(2, 1), G, name="facial0")


def diag2_problem():
    G = MatrixPoly.diagonal([xv(2, 0), xv(2, 1)])
    return NsdpProblem(2, xv(2, 0) + xv(2, 1), G, name="diag2")


class TestConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            PenaltyConfig(anchor=np.zeros(1), rho0=0.0)
        with pytest.raises(ValueError):
            PenaltyConfig(anchor=np.zeros(1), rho_mult=1.0)
        with pytest.raises(ValueError):
            PenaltyConfig(anchor=np.zeros(1), inner_tol=0.0)
        with pytest.raises(ValueError):
            PenaltyConfig(anchor=np.zeros(1), outer_iters=0)

    def test_anchor_coercion(self):
        cfg = PenaltyConfig(anchor=[1, 2])
        assert cfg.anchor.dtype == float
        assert cfg.anchor.shape == (2,)


class TestInnerMinimize:
    def test_line_anchor_is_solution(self):
        P = line_problem()
        cfg = PenaltyConfig(anchor=np.zeros(1))
        for rho in (1.0, 100.0, 1e6):
            res = inner_minimize(P, cfg, rho, np.array([0.7]))
            assert res.converged
            assert abs(res.x[0]) <= 1e-8

    def test_interior_regularized_minimum(self):
        # penalty inactive near the anchor, so the solution is the
        # minimizer of x1^2 + x2^2 + ||x - a||^2 / 2, namely a / 3
        P = interior_problem()
        a = np.array([0.3, 0.1])
        cfg = PenaltyConfig(anchor=a)
        res = inner_minimize(P, cfg, 5.0, a)
        assert res.converged
        assert np.allclose(res.x, a / 3.0, atol=1e-6)

    def test_facial_objective_pulls_into_infeasibility(self):
        P = facial_origin_problem()
        cfg = PenaltyConfig(anchor=np.zeros(2))
        res = inner_minimize(P, cfg, 10.0, np.zeros(2))
        assert res.converged
        assert res.x[1] < 0.0
        assert res.grad_norm <= inner_tolerance(cfg, 10.0)
        assert penalty_value(P, cfg.anchor, 10.0, res.x) \
            < penalty_value(P, cfg.anchor, 10.0, np.zeros(2))

    def test_budget_exhaustion_is_flagged(self):
        P = diag3_problem()
        cfg = PenaltyConfig(anchor=np.zeros(3), inner_max_iters=1)
        res = inner_minimize(P, cfg, 100.0, np.array([1.0, 1.0, 1.0]))
        assert not res.converged


class TestPenaltyGradient:
    def test_finite_difference(self):
        problems = [diag3_problem(), offdiag_problem(), fullmat_problem(),
                    facial_problem()]
        h = 1e-6
        rng = np.random.default_rng(11)
        for case in range(100):
            P = problems[case % len(problems)]
            x = rng.uniform(-1.0, 1.0, P.n)
            anchor = rng.uniform(-1.0, 1.0, P.n)
            rho = float(rng.uniform(0.5, 100.0))
            g = penalty_gradient(P, anchor, rho, x)
            fd = np.zeros(P.n)
            for i in range(P.n):
                e = np.zeros(P.n)
                e[i] = h
                fd[i] = (penalty_value(P, anchor, rho, x + e)
                         - penalty_value(P, anchor, rho, x - e)) / (2 * h)
            rel = np.linalg.norm(g - fd) / max(1.0, np.linalg.norm(g))
            assert rel <= 1e-4, f"case {case} on {P.name}: {rel:.2e}"

    def test_equality_term(self):
        G = MatrixPoly(1, 2, {(0, 0): xv(2, 0)})
        P = NsdpProblem(2, xv(2, 1), G, equalities=(xv(2, 0) + xv(2, 1),),
                        name="eqline")
        rng = np.random.default_rng(3)
        for _ in range(20):
            x = rng.uniform(-1.0, 1.0, 2)
            rho = float(rng.uniform(0.5, 50.0))
            g = penalty_gradient(P, np.zeros(2), rho, x)
            fd = np.zeros(2)
            for i in range(2):
                e = np.zeros(2)
                e[i] = 1e-6
                fd[i] = (penalty_value(P, np.zeros(2), rho, x + e)
                         - penalty_value(P, np.zeros(2), rho, x - e)) / 2e-6
            assert np.linalg.norm(g - fd) <= 1e-4 * (1 + np.linalg.norm(g))


class TestRunPenalty:
    def test_diag3_closed_form(self):
        P = diag3_problem()
        cfg = PenaltyConfig(anchor=np.zeros(3))
        trace = run_penalty(P, cfg)
        assert len(trace.iterates) == cfg.outer_iters
        for rec in trace.iterates:
            closed = -1.0 / (1.0 + rec.rho)
            assert np.allclose(rec.x, closed, atol=1e-6)
            target = rec.rho / (1.0 + rec.rho) * np.eye(3)
            assert np.allclose(rec.multiplier.a, target, atol=1e-5)
            assert rec.stationarity_residual <= inner_tolerance(cfg, rec.rho)
        assert np.max(np.abs(trace.iterates[-1].multiplier.a - np.eye(3))) \
            <= 1e-8
        assert not trace.divergence_suspected

    def test_multiplier_identity_and_recovery(self):
        for P, anchor in [(diag3_problem(), np.zeros(3)),
                          (facial_problem(), np.array([1.0, 0.0]))]:
            cfg = PenaltyConfig(anchor=anchor, outer_iters=8)
            trace = run_penalty(P, cfg)
            for rec in trace.iterates:
                G = P.constraint_value(rec.x)
                # defining identity, exact up to the eigensolver
                Y = rec.rho * proj_psd(-G.a).a
                assert np.allclose(rec.multiplier.a, Y, atol=1e-10)
                # eigenvalue recovery: alpha_i = max(rho * lambda_i(-G), 0)
                spec = eigh(G)
                alpha = np.clip(-rec.rho * spec.values, 0.0, None)
                rebuilt = (spec.vectors * alpha) @ spec.vectors.T
                assert np.max(np.abs(rebuilt - rec.multiplier.a)) <= 1e-8
                # PSD and complementary with the positive part
                yvals = eigh(rec.multiplier).values
                assert yvals.min(initial=0.0) >= -1e-12
                pos = proj_psd(G)
                comp = float(np.sum(rec.multiplier.a * pos.a))
                assert abs(comp) <= 1e-8 * (1.0 + rec.multiplier_norm)

    def test_facial_divergence_flag(self):
        P = facial_problem()
        trace = run_penalty(P, PenaltyConfig(anchor=np.array([1.0, 0.0])))
        norms = [rec.multiplier_norm for rec in trace.iterates]
        assert norms[-1] >= 2.0 * norms[-4]
        assert trace.divergence_suspected
        assert any("divergence" in note for note in trace.notes)

    def test_bounded_multipliers_not_flagged(self):
        trace = run_penalty(diag3_problem(), PenaltyConfig(anchor=np.zeros(3)))
        assert not trace.divergence_suspected

    def test_interior_stays_at_anchor(self):
        P = interior_problem()
        trace = run_penalty(P, PenaltyConfig(anchor=np.zeros(2)))
        for rec in trace.iterates:
            assert np.allclose(rec.x, 0.0, atol=1e-10)
            assert rec.multiplier_norm == 0.0

    def test_infeasible_anchor_rejected(self):
        with pytest.raises(InfeasiblePointError):
            run_penalty(diag3_problem(),
                        PenaltyConfig(anchor=np.array([-1.0, 0.0, 0.0])))

    def test_jsonl_round_trip(self):
        P = diag3_problem()
        cfg = PenaltyConfig(anchor=np.zeros(3), outer_iters=4)
        trace = run_penalty(P, cfg)
        lines = trace.to_jsonl().splitlines()
        assert len(lines) == 4
        want = {"k", "rho", "x", "multiplier", "eigenvalues", "eigenvectors",
                "stationarity_residual", "multiplier_norm"}
        for k, line in enumerate(lines):
            rec = json.loads(line)
            assert set(rec.keys()) == want
            assert rec["k"] == k
            M = np.array(rec["multiplier"])
            assert np.allclose(M, M.T)
            assert np.allclose(M, trace.iterates[k].multiplier.a)


class TestEigbasisSequence:
    def test_diag3_axis_trace(self):
        P = diag3_problem()
        trace = make_path_trace(P, [1.0, 0.0, 0.0], [1.0, 0.0, 0.0])
        seq = extract_eigbasis_sequence(trace)
        target = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        for E in seq:
            assert np.allclose(np.abs(E), target, atol=1e-10)
        for a, b in zip(seq, seq[1:]):
            assert np.max(np.abs(a - b)) <= 1e-8

    def test_offdiag_rank_one_column(self):
        P = offdiag_problem()
        trace = make_path_trace(P, [1.0, 1.0], [0.3, -0.9])
        seq = extract_eigbasis_sequence(trace)
        for E in seq:
            assert E.shape == (2, 1)
            assert np.allclose(np.abs(E[:, 0]), [RT2, RT2], atol=1e-8)
        # greedy alignment keeps the sign stable along the tail
        for a, b in zip(seq, seq[1:]):
            assert float(a[:, 0] @ b[:, 0]) > 0.9

    def test_short_tail_rejected(self):
        trace = make_path_trace(diag3_problem(), [0.0] * 3, [1.0, 0.0, 0.0],
                                steps=2)
        with pytest.raises(NumericalFailure):
            extract_eigbasis_sequence(trace)

    def test_trivial_kernel_gives_empty_sequence(self):
        trace = make_path_trace(interior_problem(), [0.0, 0.0], [1.0, 0.0])
        assert extract_eigbasis_sequence(trace) == []

    def test_rank_override(self):
        P = facial_problem()
        trace = make_path_trace(P, [1.0, 0.0], [1.0, 0.0])
        seq = extract_eigbasis_sequence(trace, rank=1)
        assert seq[-1].shape == (2, 1)
        assert np.allclose(np.abs(seq[-1][:, 0]), [0.0, 1.0], atol=1e-10)


class TestTraceFamily:
    def test_count_and_composition(self):
        P = diag3_problem()
        traces = default_trace_family(P, PenaltyConfig(anchor=np.zeros(3)), 8)
        assert len(traces) == 8
        ids = [t.trace_id for t in traces]
        assert len(set(ids)) == 8
        assert ids[0] == "penalty"
        for t in traces:
            assert np.linalg.norm(t.converged_point - 0.0) <= 1e-6

    def test_slow_penalty_trace_dropped(self):
        # the degenerate problem converges like rho^(-1/3), far slower
        # than the proximity gate, so only synthetic paths remain
        P = facial_problem()
        cfg = PenaltyConfig(anchor=np.array([1.0, 0.0]))
        traces = default_trace_family(P, cfg, 8)
        assert len(traces) == 8
        assert all(t.kind == "path" for t in traces)

    def test_count_validation(self):
        with pytest.raises(ValueError):
            default_trace_family(diag3_problem(),
                                 PenaltyConfig(anchor=np.zeros(3)), 0)


def family_for(P, anchor, count=8):
    cfg = PenaltyConfig(anchor=np.asarray(anchor, dtype=float))
    return default_trace_family(P, cfg, count)


class TestWeakNdgProbe:
    def test_diag3_holds_sampled(self):
        P = diag3_problem()
        traces = family_for(P, [0.0] * 3)
        results, verdict = probe_weak_ndg(P, [0.0] * 3, traces)
        assert verdict.status == CqStatus.HOLDS_SAMPLED
        assert verdict.samples == 8
        G0 = P.constraint_value([0.0] * 3)
        for res in results:
            assert res.passed
            E = res.limit_basis.cols
            assert res.limit_basis.provenance.kind == "sequence_limit"
            assert res.limit_basis.provenance.trace_id == res.trace_id
            assert np.allclose(E.T @ E, np.eye(E.shape[1]), atol=1e-10)
            assert np.max(np.abs(G0.a @ E)) <= 1e-8

    def test_facial_fails_with_exhausted_search(self):
        P = facial_problem()
        traces = family_for(P, [1.0, 0.0])
        results, verdict = probe_weak_ndg(P, [1.0, 0.0], traces)
        assert verdict.status == CqStatus.FAILS
        assert verdict.witness["trace"] in {r.trace_id for r in results}
        failing = next(r for r in results if not r.passed)
        assert failing.exhaustive

    def test_scalar2_dimension_bound(self):
        P = scalar2_problem()
        results, verdict = probe_weak_ndg(P, [0.0], family_for(P, [0.0]))
        assert results == []
        assert verdict.status == CqStatus.FAILS
        assert "dimension" in verdict.reason

    def test_offdiag_needs_rotated_limit(self):
        P = offdiag_problem()
        traces = family_for(P, [0.0, 0.0])
        results, verdict = probe_weak_ndg(P, [0.0, 0.0], traces)
        assert verdict.status == CqStatus.HOLDS_SAMPLED
        # every limit basis carries an independent diagonal family; the
        # generic rays converge with the mixing eigenvectors, which have
        # both components of equal size
        mixing = 0
        for res in results:
            assert res.passed
            E = res.limit_basis.cols
            fam = [entry_gradient(P, np.zeros(2), E[:, i])
                   for i in range(E.shape[1])]
            assert li_test(fam).independent
            if np.allclose(np.abs(E), RT2, atol=1e-6):
                mixing += 1
        assert mixing >= 1

    def test_degenerate_axis_trace_rescued_by_rotation(self):
        # along (t, 0) the constraint is t * I with a fully degenerate
        # kernel cluster; the identity family is dependent and only the
        # cluster rotation finds the mixing basis
        P = offdiag_problem()
        trace = make_path_trace(P, [0.0, 0.0], [1.0, 0.0], trace_id="deg")
        results, verdict = probe_weak_ndg(P, [0.0, 0.0], [trace])
        assert verdict.status == CqStatus.HOLDS_SAMPLED
        assert results[0].passed
        assert not results[0].exhaustive
        assert results[0].sigma_min > 0.1

    def test_block_and_full_problems_hold(self):
        for P, anchor in [(fullmat_problem(), [0.0] * 3),
                          (block2_problem(), [0.0] * 3)]:
            _, verdict = probe_weak_ndg(P, anchor, family_for(P, anchor))
            assert verdict.status == CqStatus.HOLDS_SAMPLED

    def test_interior_trivial(self):
        P = interior_problem()
        results, verdict = probe_weak_ndg(P, [0.0, 0.0], [])
        assert results == []
        assert verdict.status == CqStatus.HOLDS_CERTIFIED

    def test_mismatched_trace_rejected(self):
        P = offdiag_problem()
        trace = make_path_trace(P, [0.5, 0.0], [1.0, 0.0])
        with pytest.raises(ValueError):
            probe_weak_ndg(P, [0.0, 0.0], [trace])


class TestWeakRobinsonProbe:
    def test_diag3_certified_by_diagonal_structure(self):
        P = diag3_problem()
        traces = family_for(P, [0.0] * 3)
        verdict = probe_weak_robinson(P, [0.0] * 3, traces)
        assert verdict.status == CqStatus.HOLDS_CERTIFIED
        sampled = probe_weak_robinson(P, [0.0] * 3, traces,
                                      use_shortcuts=False)
        assert sampled.status == CqStatus.HOLDS_SAMPLED

    def test_scalar2_positive_independence(self):
        # both active gradients equal 1, so no convex combination
        # vanishes even though they are linearly dependent
        P = scalar2_problem()
        verdict = probe_weak_robinson(P, [0.0], family_for(P, [0.0]))
        assert verdict.status == CqStatus.HOLDS_CERTIFIED
        sampled = probe_weak_robinson(P, [0.0], family_for(P, [0.0]),
                                      use_shortcuts=False)
        assert sampled.status == CqStatus.HOLDS_SAMPLED

    def test_facial_fails(self):
        P = facial_problem()
        verdict = probe_weak_robinson(P, [1.0, 0.0],
                                      family_for(P, [1.0, 0.0]))
        assert verdict.status == CqStatus.FAILS

    def test_independence_implies_positive_independence(self):
        for P, anchor in [(offdiag_problem(), [0.0, 0.0]),
                          (fullmat_problem(), [0.0] * 3),
                          (block2_problem(), [0.0] * 3)]:
            traces = family_for(P, anchor)
            _, ndg = probe_weak_ndg(P, anchor, traces)
            rob = probe_weak_robinson(P, anchor, traces,
                                      use_shortcuts=False)
            assert ndg.holds
            assert rob.holds

    def test_diagonal_probe_matches_active_gradient_licq(self):
        # on structurally diagonal constraints weak nondegeneracy is
        # plain linear independence of the active diagonal gradients
        cases = [(diag3_problem(), [0.0] * 3),
                 (scalar2_problem(), [0.0]),
                 (diag2_problem(), [1.0, 0.0])]
        for P, anchor in cases:
            anchor = np.asarray(anchor, dtype=float)
            G = P.constraint_value(anchor)
            active = [i for i in range(P.m) if abs(G.a[i, i]) <= 1e-10]
            grads = [entry_gradient(P, anchor, np.eye(P.m)[:, i])
                     for i in active]
            licq = li_test(grads).independent
            _, verdict = probe_weak_ndg(P, anchor, family_for(P, anchor))
            assert verdict.holds == licq, P.name
