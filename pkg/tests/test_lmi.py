import numpy as np
import pytest

from oracles import chol_psd
from polytrack.lmi import (AffineMatrixExpr, CompiledSdp, LmiError, MatrixVar,
                           SdpProblem, SolverSettings, SolveStatus, block_expr,
                           dump_problem, psd_check, scalar_var, schur_embed,
                           solve, times_scalar)


def lambda_max_problem(A):
    """min g s.t. g*I - A >= 0."""
    prob = SdpProblem()
    g = prob.new_scalar("g")
    expr = AffineMatrixExpr(-np.asarray(A, float))
    n = A.shape[0]
    for i in range(n):
        e = np.zeros((n, 1))
        e[i, 0] = 1.0
        expr.add_product(e, g, e.T)
    prob.add_psd(expr)
    prob.minimize({"g": 1.0})
    return prob


class TestPsdCheck:
    def test_identity(self):
        assert psd_check(np.eye(3), 1e-9)

    def test_indefinite(self):
        assert not psd_check(np.diag([1.0, -1.0]), 1e-9)

    def test_gram_matrices(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            A = rng.standard_normal((4, 4))
            M = A @ A.T
            assert psd_check(M, 1e-9)
            assert chol_psd(M)  # independent Cholesky oracle agrees

    def test_rejects_nonsymmetric(self):
        with pytest.raises(LmiError):
            psd_check(np.array([[1.0, 2.0], [0.0, 1.0]]), 1e-9)


class TestVariables:
    def test_symmetric_pack_unpack_isometry(self):
        v = MatrixVar("Q", 4, 4, symmetric=True)
        rng = np.random.default_rng(0)
        M = rng.standard_normal((4, 4))
        M = 0.5 * (M + M.T)
        vec = v.pack(M)
        np.testing.assert_allclose(v.unpack(vec), M, atol=1e-14)
        # packed 2-norm equals Frobenius norm (sqrt(2) off-diagonal scaling)
        assert np.linalg.norm(vec) == pytest.approx(np.linalg.norm(M, "fro"))

    def test_dims_validation(self):
        with pytest.raises(LmiError):
            MatrixVar("X", 2, 3, symmetric=True)
        with pytest.raises(LmiError):
            MatrixVar("X", 0, 1)


class TestSchurEmbed:
    def test_identity_case(self):
        M = schur_embed([[np.array([[1.0]]), np.array([[0.0]])],
                         [np.array([[0.0]]), np.array([[1.0]])]])
        np.testing.assert_array_equal(M.evaluate({}), np.eye(2))
        assert psd_check(M.evaluate({}), 1e-9)

    def test_hand_indefinite(self):
        # [[1, 2], [2, 1]] has eigenvalues {3, -1}: 1 - 2*1*2 < 0
        M = schur_embed([[np.array([[1.0]]), np.array([[2.0]])],
                         [np.array([[2.0]]), np.array([[1.0]])]])
        val = M.evaluate({})
        w = np.linalg.eigvalsh(val)
        np.testing.assert_allclose(w, [-1.0, 3.0], atol=1e-12)
        assert not psd_check(val, 1e-9)

    def test_random_schur_equivalence(self):
        # X > Z' W^{-1} Z with W > 0  <=>  [[X, Z'], [Z, W]] >= 0
        rng = np.random.default_rng(11)
        for _ in range(10):
            Fw = rng.standard_normal((4, 4))
            W = Fw @ Fw.T + 0.5 * np.eye(4)
            Z = rng.standard_normal((4, 4))
            slack = rng.uniform(0.1, 2.0)
            X = Z.T @ np.linalg.solve(W, Z) + slack * np.eye(4)
            M = schur_embed([[X, Z.T], [Z, W]]).evaluate({})
            assert psd_check(M, 1e-9)
            # and violating the complement breaks it
            X_bad = Z.T @ np.linalg.solve(W, Z) - 0.05 * np.eye(4)
            M_bad = schur_embed([[X_bad, Z.T], [Z, W]]).evaluate({})
            assert not psd_check(M_bad, 1e-9)

    def test_dimension_mismatch(self):
        with pytest.raises(LmiError):
            schur_embed([[np.eye(2), np.zeros((2, 3))],
                         [np.zeros((3, 2)), np.eye(4)]])


class TestExpressions:
    def test_sym_product_keeps_symmetry(self):
        Y = MatrixVar("Y", 1, 4)
        e = AffineMatrixExpr.zeros(4)
        L = np.random.default_rng(1).standard_normal((4, 1))
        e.sym_product(L, Y, np.eye(4))
        e.check_symmetry()

    def test_nonsymmetric_rejected(self):
        Y = MatrixVar("Y", 1, 4)
        e = AffineMatrixExpr.zeros(4)
        e.add_product(np.ones((4, 1)), Y, np.eye(4))
        with pytest.raises(LmiError):
            e.check_symmetry()

    def test_block_expr_offsets(self):
        Q = MatrixVar("Q", 2, 2, symmetric=True)
        eQ = AffineMatrixExpr.zeros(2).add_product(np.eye(2), Q, np.eye(2))
        big = block_expr([[eQ, None], [None, np.eye(3)]])
        val = big.evaluate({"Q": np.array([[2.0, 0.5], [0.5, 1.0]])})
        expected = np.zeros((5, 5))
        expected[:2, :2] = [[2.0, 0.5], [0.5, 1.0]]
        expected[2:, 2:] = np.eye(3)
        np.testing.assert_allclose(val, expected)

    def test_times_scalar(self):
        g = scalar_var("g")
        e = times_scalar(np.diag([1.0, 2.0]), g)
        np.testing.assert_allclose(e.evaluate({"g": np.array([[3.0]])}),
                                   np.diag([3.0, 6.0]))

    def test_undeclared_variable_rejected(self):
        prob = SdpProblem()
        Y = MatrixVar("Y", 1, 2)  # never declared on the problem
        e = AffineMatrixExpr.zeros(2)
        e.sym_product(np.ones((2, 1)), Y, np.eye(2))
        with pytest.raises(LmiError):
            prob.add_psd(e)


class TestSolve:
    def test_scalar_lower_bound(self):
        # min g s.t. [g] - [1] >= 0
        prob = SdpProblem()
        g = prob.new_scalar("g")
        e = AffineMatrixExpr(np.array([[-1.0]]))
        e.add_product(np.eye(1), g, np.eye(1))
        prob.add_psd(e)
        prob.minimize({"g": 1.0})
        sol = solve(prob)
        assert sol.status == SolveStatus.OPTIMAL
        assert sol.objective_value == pytest.approx(1.0, abs=1e-7)

    def test_feasibility_diag(self):
        # diag(x) >= 0 with x free is feasible; the returned point satisfies
        # the constraint within the PSD acceptance tolerance
        prob = SdpProblem()
        x = prob.new_scalar("x")
        e = AffineMatrixExpr(np.zeros((1, 1)))
        e.add_product(np.eye(1), x, np.eye(1))
        prob.add_psd(e)
        sol = solve(prob)
        assert sol.status == SolveStatus.FEASIBLE
        assert sol.values["x"][0, 0] >= -1e-7
        assert sol.objective_value is None

    def test_lambda_max_family(self):
        rng = np.random.default_rng(2024)
        for _ in range(10):
            A = rng.standard_normal((6, 6))
            A = 0.5 * (A + A.T)
            sol = solve(lambda_max_problem(A))
            assert sol.status == SolveStatus.OPTIMAL
            target = float(np.linalg.eigvalsh(A)[-1])
            assert abs(sol.objective_value - target) <= 1e-6 * max(1.0, abs(target))

    def test_solutions_pass_psd_check(self):
        rng = np.random.default_rng(5)
        A = rng.standard_normal((5, 5))
        A = 0.5 * (A + A.T)
        prob = lambda_max_problem(A)
        sol = solve(prob)
        for c in prob.constraints:
            assert psd_check(c.evaluate(sol.values), 1e-7)

    def test_determinism(self):
        rng = np.random.default_rng(7)
        A = rng.standard_normal((6, 6))
        A = 0.5 * (A + A.T)
        s1 = solve(lambda_max_problem(A))
        s2 = solve(lambda_max_problem(A))
        assert s1.status == s2.status
        assert abs(s1.objective_value - s2.objective_value) <= 1e-10
        np.testing.assert_allclose(s1.values["g"], s2.values["g"], atol=1e-10)

    def test_infeasible_detected(self):
        # [x] >= 0 and [-x - 1] >= 0 cannot hold together
        prob = SdpProblem()
        x = prob.new_scalar("x")
        e1 = AffineMatrixExpr(np.zeros((1, 1)))
        e1.add_product(np.eye(1), x, np.eye(1))
        e2 = AffineMatrixExpr(np.array([[-1.0]]))
        e2.add_product(-np.eye(1), x, np.eye(1))
        prob.add_psd(e1)
        prob.add_psd(e2)
        sol = solve(prob)
        assert sol.status == SolveStatus.INFEASIBLE

    def test_strict_shift(self):
        prob = SdpProblem()
        q = prob.new_scalar("q")
        e = AffineMatrixExpr(np.zeros((1, 1)))
        e.add_product(np.eye(1), q, np.eye(1))
        c = prob.add_psd(e, strict=True)
        assert c.constant[0, 0] == pytest.approx(-1e-8)

    def test_compiled_constant_patch(self):
        # patching the constant reproduces a fresh solve exactly
        rng = np.random.default_rng(9)
        A1 = rng.standard_normal((4, 4))
        A1 = 0.5 * (A1 + A1.T)
        A2 = A1 + 0.3 * np.eye(4)
        prob = lambda_max_problem(A1)
        comp = CompiledSdp(prob)
        s_old = comp.solve()
        comp.set_constant(0, -A2)
        s_patched = comp.solve()
        s_fresh = solve(lambda_max_problem(A2))
        assert s_patched.objective_value == pytest.approx(
            s_fresh.objective_value, abs=1e-12)
        assert s_old.objective_value != pytest.approx(
            s_patched.objective_value, abs=1e-3)


def test_dump_problem_format():
    prob = SdpProblem()
    g = prob.new_scalar("g")
    e = AffineMatrixExpr(np.array([[-1.0]]))
    e.add_product(np.eye(1), g, np.eye(1))
    prob.add_psd(e)
    prob.minimize({"g": 1.0})
    text = dump_problem(prob)
    assert "variables 1" in text
    assert "minimize g:1" in text
    assert "constraint 0 dim 1" in text
    assert "g[0] 1" in text
