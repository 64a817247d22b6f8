import json
from dataclasses import replace

import numpy as np
import pytest

from sisynth.feasibility import (
    AffineGramMap,
    Certificate,
    SolverFailure,
    check_certificate,
    compile_grams,
    eval_grams,
    jacobi_eigh,
    jacobi_eigh_batch,
    min_eigenvalue,
    penalty,
    solve,
)


def random_symmetric(rng, n):
    M = rng.normal(size=(n, n))
    return 0.5 * (M + M.T)


class TestJacobiEigensolver:
    def test_analytic_2x2(self):
        # [[a, b], [b, c]] has eigenvalues (a+c)/2 -/+ sqrt(((a-c)/2)^2 + b^2)
        a, b, c = 2.0, 1.5, -1.0
        w, V = jacobi_eigh(np.array([[a, b], [b, c]]))
        mid, rad = (a + c) / 2.0, np.hypot((a - c) / 2.0, b)
        assert np.allclose(w, [mid - rad, mid + rad], atol=1e-12)
        assert np.allclose(V @ np.diag(w) @ V.T, [[a, b], [b, c]], atol=1e-12)

    def test_diagonal_passthrough(self):
        w, V = jacobi_eigh(np.diag([3.0, -1.0, 2.0]))
        assert np.allclose(w, [-1.0, 2.0, 3.0])
        assert np.allclose(np.abs(V), np.eye(3)[:, [1, 2, 0]])

    @pytest.mark.parametrize("n", range(2, 13))
    def test_random_reconstruction_and_reference(self, n):
        rng = np.random.default_rng(100 + n)
        for _ in range(20):
            M = random_symmetric(rng, n)
            w, V = jacobi_eigh(M)
            assert np.all(np.diff(w) >= 0), "eigenvalues must be ascending"
            rel = np.linalg.norm(V @ np.diag(w) @ V.T - M) / max(np.linalg.norm(M), 1e-30)
            assert rel <= 1e-8
            assert np.allclose(V.T @ V, np.eye(n), atol=1e-10)
            assert np.allclose(w, np.linalg.eigvalsh(M), atol=1e-9 * max(1.0, np.abs(M).max()))

    def test_batch_matches_single(self):
        rng = np.random.default_rng(7)
        mats = np.stack([random_symmetric(rng, 5) for _ in range(6)])
        wb, Vb = jacobi_eigh_batch(mats)
        for i in range(6):
            w, _ = jacobi_eigh(mats[i])
            assert np.allclose(wb[i], w, atol=1e-10)
            assert np.allclose(Vb[i] @ np.diag(wb[i]) @ Vb[i].T, mats[i], atol=1e-10)

    def test_min_eigenvalue_vector(self):
        rng = np.random.default_rng(11)
        M = random_symmetric(rng, 8)
        lam, v = min_eigenvalue(M)
        assert np.isclose(lam, np.linalg.eigvalsh(M)[0], atol=1e-10)
        assert np.allclose(M @ v, lam * v, atol=1e-8)

    def test_rejects_nonsquare(self):
        with pytest.raises(ValueError):
            jacobi_eigh(np.zeros((2, 3)))


class TestCompiledGram:
    def test_matrix_matches_symbolic_entries(self, braking_problem):
        p = braking_problem
        compiled = compile_grams(p.specs, p.layout)
        rng = np.random.default_rng(0)
        for _ in range(20):
            d = rng.uniform(-2, 2, size=p.layout.size)
            assignment = dict(zip(p.layout.variables, d))
            for cg, spec in zip(compiled, p.specs):
                Q = cg.matrix(d)
                for i in range(spec.size):
                    for j in range(spec.size):
                        want = spec.entries[min(i, j)][max(i, j)].evaluate(assignment)
                        assert abs(Q[i, j] - want) <= 1e-12 * max(1.0, abs(want))

    def test_matrix_matches_symbolic_entries_restricted(self, restricted_problem):
        p = restricted_problem
        compiled = compile_grams(p.specs, p.layout)
        rng = np.random.default_rng(1)
        d = rng.uniform(-1, 1, size=p.layout.size)
        assignment = dict(zip(p.layout.variables, d))
        for cg, spec in zip(compiled, p.specs):
            Q = cg.matrix(d)
            assert np.allclose(Q, Q.T)
            for i in range(spec.size):
                for j in range(i, spec.size):
                    want = spec.entries[i][j].evaluate(assignment)
                    assert abs(Q[i, j] - want) <= 1e-10 * max(1.0, abs(want))

    def test_penalty_gradient_finite_difference(self, braking_problem):
        p = braking_problem
        compiled = compile_grams(p.specs, p.layout)
        rng = np.random.default_rng(3)
        d = rng.uniform(-1, 1, size=p.layout.size)
        val, grad, lams = penalty(compiled, d, margin=0.1)
        assert val >= 0.0
        assert len(lams) == len(compiled)
        eps = 1e-6
        for i in range(len(d)):
            dp, dm = d.copy(), d.copy()
            dp[i] += eps
            dm[i] -= eps
            fd = (penalty(compiled, dp, 0.1)[0] - penalty(compiled, dm, 0.1)[0]) / (2 * eps)
            assert abs(grad[i] - fd) <= 1e-4 * max(1.0, abs(fd))

    def test_penalty_zero_when_clear(self, braking_problem, braking_certificate):
        p = braking_problem
        compiled = compile_grams(p.specs, p.layout)
        val, grad, lams = penalty(compiled, braking_certificate.decision, margin=-1.0)
        # every eigenvalue clears a margin of -1, so the hinge is inactive
        assert val == 0.0
        assert np.allclose(grad, 0.0)
        assert np.all(lams >= -1e-6)


class TestAffineGramMap:
    def test_affine_map_matches_matrices(self, braking_problem):
        p = braking_problem
        compiled = compile_grams(p.specs, p.layout)
        rng = np.random.default_rng(5)
        theta = rng.uniform(0.5, 2.0, size=len(p.layout.theta_idx))
        amap = AffineGramMap(compiled, p.layout, theta)
        for _ in range(10):
            x = rng.uniform(-1, 1, size=p.layout.size)
            x[p.layout.theta_idx] = theta
            y = x[amap.free_idx]
            stacked = amap.A @ y + amap.b
            flat = np.concatenate([cg.matrix(x).ravel() for cg in compiled])
            assert np.allclose(stacked[:amap.rows_gram], flat, atol=1e-12)
            assert np.allclose(stacked[amap.rows_gram:], y[amap.gamma_pos], atol=1e-12)

    def test_candidate_clips_sign_constraints(self, braking_problem):
        p = braking_problem
        compiled = compile_grams(p.specs, p.layout)
        amap = AffineGramMap(compiled, p.layout, np.array([1.5]))
        y = -np.ones(len(amap.free_idx))
        y_clipped, lam = amap.candidate(y)
        assert np.all(y_clipped[amap.gamma_pos] >= 0.0)
        assert np.isfinite(lam)

    def test_refine_certifies_feasible_instance(self, braking_problem):
        p = braking_problem
        compiled = compile_grams(p.specs, p.layout)
        amap = AffineGramMap(compiled, p.layout, np.array([2.0]))
        rng = np.random.default_rng(9)
        y, lam = amap.refine(rng.uniform(-1, 1, size=len(amap.free_idx)),
                             iterations=2000, tolerance=1e-8)
        assert lam >= -1e-8
        assert np.all(y[amap.gamma_pos] >= 0.0)


class TestSolve:
    def test_braking_instance_certifies(self, braking_problem, braking_certificate):
        p, cert = braking_problem, braking_certificate
        assert cert.valid
        k = cert.theta(p.layout)
        # the instance is feasible exactly for k > 1 + eta = 1.1
        assert k[0] > 1.1
        assert np.all(cert.lambda_mins >= -p.solver_config.tolerance)
        ok, diagnostics = check_certificate(p.specs, p.layout, cert)
        assert ok, diagnostics

    def test_deterministic(self, braking_problem):
        p = braking_problem
        a = solve(p.specs, p.layout, p.solver_config)
        b = solve(p.specs, p.layout, p.solver_config)
        assert np.array_equal(a.decision, b.decision)
        assert np.array_equal(a.lambda_mins, b.lambda_mins)
        assert a.to_dict() == b.to_dict()

    def test_seed_changes_search(self, braking_problem):
        p = braking_problem
        a = solve(p.specs, p.layout, p.solver_config)
        b = solve(p.specs, p.layout, replace(p.solver_config, seed=1))
        assert not np.array_equal(a.decision, b.decision)

    def test_failure_carries_best_attempt(self, unicycle_problem):
        p = unicycle_problem
        cfg = replace(p.solver_config, restarts=1, iterations=200, rounds=1)
        with pytest.raises(SolverFailure) as exc_info:
            solve(p.specs, p.layout, cfg)
        failure = exc_info.value
        assert failure.residual > 0.0
        assert not failure.certificate.valid
        assert len(failure.certificate.restarts) == 1

    def test_empty_specs_rejected(self, braking_problem):
        with pytest.raises(ValueError):
            solve([], braking_problem.layout, braking_problem.solver_config)


class TestCertificate:
    def test_round_trip(self, braking_problem, braking_certificate):
        p, cert = braking_problem, braking_certificate
        loaded = Certificate.from_dict(json.loads(json.dumps(cert.to_dict())))
        assert loaded.valid
        assert np.allclose(loaded.decision, cert.decision)
        assert np.allclose(loaded.lambda_mins, cert.lambda_mins)
        ok, _ = check_certificate(p.specs, p.layout, loaded)
        assert ok

    def test_tampered_certificate_fails_check(self, braking_problem, braking_certificate):
        p, cert = braking_problem, braking_certificate
        tampered = Certificate.from_dict(cert.to_dict())
        tampered.decision = tampered.decision.copy()
        tampered.decision[p.layout.theta_idx[0]] = 0.01   # inside the infeasible band
        ok, diagnostics = check_certificate(p.specs, p.layout, tampered)
        assert not ok
        assert any("lambda_min" in line for line in diagnostics)

    def test_negative_multiplier_flagged(self, braking_problem, braking_certificate):
        p, cert = braking_problem, braking_certificate
        tampered = Certificate.from_dict(cert.to_dict())
        tampered.decision = tampered.decision.copy()
        tampered.decision[p.layout.gamma_idx[0]] = -1.0
        ok, diagnostics = check_certificate(p.specs, p.layout, tampered)
        assert not ok
        assert any("negative" in line for line in diagnostics)

    def test_eval_grams_matches_certificate_matrices(self, braking_problem, braking_certificate):
        p, cert = braking_problem, braking_certificate
        compiled = compile_grams(p.specs, p.layout)
        for recorded, recomputed in zip(cert.matrices, eval_grams(compiled, cert.decision)):
            assert np.allclose(recorded, recomputed, atol=1e-12)


class TestDecisionLayout:
    def test_bounds(self, braking_problem):
        layout = braking_problem.layout
        bounds = layout.bounds(k_min=1e-4)
        for i in layout.theta_idx:
            assert bounds[i] == (1e-4, None)
        for i in layout.gamma_idx:
            assert bounds[i] == (0.0, None)
        for i in layout.zeta_idx:
            assert bounds[i] == (None, None)

    def test_variable_partition(self, restricted_problem):
        layout = restricted_problem.layout
        parts = np.concatenate([layout.theta_idx, layout.gamma_idx,
                                layout.zeta_idx, layout.kernel_idx])
        assert sorted(parts.tolist()) == list(range(layout.size))
