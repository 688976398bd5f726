import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pvfc import lmi
from pvfc.lmi import (Affine, AffineLmi, IncompleteAssignment, PolytopicPlant, SynthesisFailure, bmat, lmi_min_eig,
                      solve_lmi)
from pvfc.numerics import InvalidInput

R_NOM, L_NOM = 1.6145e-3, 0.2989e-3
small = st.floats(-10, 10, allow_nan=False)


class TestAffine:
    def test_scalar_value(self):
        x = Affine.scalar("x")
        assert (2.0 * x + 1.0).value({"x": 3.0})[0, 0] == 7.0

    def test_symmetric_variable_shares_off_diagonal(self):
        P, names = Affine.symmetric("P", 2)
        assert names == ["P.0.0", "P.0.1", "P.1.1"]
        v = P.value({"P.0.0": 1.0, "P.0.1": 2.0, "P.1.1": 3.0})
        assert np.array_equal(v, [[1.0, 2.0], [2.0, 3.0]])

    def test_left_and_right_products(self):
        P, _ = Affine.symmetric("P", 2)
        A = np.array([[0.0, 1.0], [-2.0, -3.0]])
        a = {"P.0.0": 2.0, "P.0.1": 0.5, "P.1.1": 1.0}
        Pv = P.value(a)
        assert np.allclose((A.T @ P + P @ A).value(a), A.T @ Pv + Pv @ A)
        assert np.allclose((A.T @ P).sym().value(a), A.T @ Pv + Pv @ A)

    def test_block_assembly(self):
        x = Affine.scalar("x")
        m = bmat([[x, np.array([[1.0]])], [np.array([[1.0]]), -1.0 * x]])
        assert np.array_equal(m.value({"x": 2.0}), [[2.0, 1.0], [1.0, -2.0]])

    def test_missing_variable(self):
        x = Affine.scalar("x")
        with pytest.raises(IncompleteAssignment):
            x.value({})

    @given(small, small, small)
    def test_substitution_matches_value(self, a, b, c):
        P, _ = Affine.symmetric("P", 2)
        full = {"P.0.0": a, "P.0.1": b, "P.1.1": c}
        part = P.substitute({"P.0.1": b})
        assert np.allclose(part.value({"P.0.0": a, "P.1.1": c}), P.value(full))

    @given(small, small)
    def test_linearity(self, s, t):
        x = Affine.scalar("x")
        e = 3.0 * x - 2.0
        assert e.value({"x": s + t})[0, 0] == pytest.approx(e.value({"x": s})[0, 0] + 3.0 * t)


class TestLmiMinEig:
    def test_constant_negative_identity(self):
        m = AffineLmi(-np.eye(2), {"x": np.zeros((2, 2))})
        for x in (-5.0, 0.0, 7.0):
            assert lmi_min_eig(m, {"x": x}) == pytest.approx(-1.0)

    def test_diagonal_affine(self):
        m = AffineLmi(-np.eye(2), {"x": np.diag([1.0, -1.0])})
        assert lmi_min_eig(m, {"x": 0.0}) == pytest.approx(-1.0)

    def test_direct_assembly(self):
        m = AffineLmi(-2.0 * np.eye(2), {"x": np.eye(2)})
        assert lmi_min_eig(m, {"x": 3.0}) == pytest.approx(1.0)

    def test_missing_variable(self):
        m = AffineLmi(-np.eye(2), {"x": np.eye(2)})
        with pytest.raises(IncompleteAssignment):
            lmi_min_eig(m, {})

    def test_fix_removes_variable(self):
        m = AffineLmi(-np.eye(2), {"x": np.eye(2), "y": np.diag([1.0, 0.0])})
        f = m.fix({"y": 2.0})
        assert f.variables == ("x",)
        assert lmi_min_eig(f, {"x": 0.0}) == pytest.approx(1.0)


class TestSolver:
    def test_scalar_lyapunov(self):
        # P > 0 and A'P + PA < 0 for A = -1
        pos = AffineLmi(np.zeros((1, 1)), {"p": -np.eye(1)})
        lyap = AffineLmi(np.zeros((1, 1)), {"p": -2.0 * np.eye(1)})
        sol = solve_lmi([pos, lyap], x0={"p": -1.0})
        assert sol.assignment["p"] > 0
        assert sol.margin < 0

    def test_infeasible_pair(self):
        pos = AffineLmi(np.zeros((1, 1)), {"p": -np.eye(1)})
        below = AffineLmi(np.eye(1), {"p": np.eye(1)})
        with pytest.raises(SynthesisFailure) as exc:
            solve_lmi([pos, below], x0={"p": 0.3}, restarts=2, max_evals=500)
        assert exc.value.best_margin > 0

    def test_minimises_linear_objective(self):
        # nu >= 4 written as 4 - nu < 0
        m = AffineLmi(np.array([[4.0]]), {"nu": -np.eye(1)})
        sol = solve_lmi([m], {"nu": 1.0}, x0={"nu": 100.0}, scale={"nu": 10.0})
        assert 4.0 < sol.objective <= 4.0 * 1.02

    def test_lyapunov_matrix_for_stable_system(self):
        A = np.array([[0.0, 1.0], [-2.0, -3.0]])
        P, _ = Affine.symmetric("P", 2)
        lyap = AffineLmi.from_affine((A.T @ P).sym() + np.eye(2))
        pos = AffineLmi.from_affine(-1.0 * P)
        sol = solve_lmi([lyap, pos], x0={"P.0.0": 1.0, "P.1.1": 1.0})
        Pv = P.value(sol.assignment)
        assert min(np.linalg.eigvalsh(Pv)) > 0
        assert max(np.linalg.eigvalsh(A.T @ Pv + Pv @ A)) < -1.0 + 1e-9


@pytest.fixture(scope="module")
def result(synthesis):
    return synthesis.observer


@pytest.fixture(scope="module")
def plant():
    return PolytopicPlant.rl_box(R_NOM, L_NOM, 1000.0)


class TestObserverSynthesis:
    def test_K_positive_definite(self, result):
        assert min(np.linalg.eigvalsh(result.K_dc.array)) > 0

    def test_certificate_margin(self, result):
        assert result.margin < -1e-6
        assert lmi.observer_certificate(result) == pytest.approx(result.margin, rel=1e-9)

    def test_decay_rate(self, result):
        assert max(np.linalg.eigvals(result.closed_loop).real) <= -50.0

    def test_gain_bound_is_loose(self, result):
        # the L2 bound the solver reports; see notes on why it sits far below 1
        assert 0 < result.epsilon <= 1.2

    def test_alpha_one(self):
        r = lmi.synth_dc_observer(1.0)
        assert max(np.linalg.eigvals(r.closed_loop).real) <= -1.0

    @pytest.mark.parametrize("alpha", [0.0, -3.0])
    def test_non_positive_alpha_rejected(self, alpha):
        with pytest.raises(InvalidInput):
            lmi.synth_dc_observer(alpha)


class TestFeedbackSynthesis:
    def test_box_vertices(self, plant):
        rho1 = sorted({-A[0, 0] for A, _ in plant.vertices})
        rho2 = sorted({B[0, 0] for _, B in plant.vertices})
        assert rho1 == pytest.approx([0.7 * R_NOM / (1.3 * L_NOM), 1.3 * R_NOM / (0.7 * L_NOM)])
        assert rho2 == pytest.approx([1 / (1.3 * L_NOM), 1 / (0.7 * L_NOM)])
        assert len(plant.vertices) == 4

    def test_sign_pattern_and_order(self, synthesis):
        F = synthesis.feedback.F.ravel()
        assert F[0] < 0 < F[1]
        assert all(round(math.log10(abs(f))) == 4 for f in F)

    def test_vertex_margins_negative(self, synthesis):
        assert len(synthesis.feedback.margins) == 4
        assert max(synthesis.feedback.margins) < -1e-6

    def test_certificate_round_trip(self, synthesis, plant):
        ok, margin = lmi.verify_feedback_certificate(plant, synthesis.feedback.F, 500.0)
        assert ok and margin < 0

    def test_closed_loop_vertices_are_stable_without_delay(self, synthesis, plant):
        F = synthesis.feedback.F
        for A, B in plant.vertices:
            assert max(np.linalg.eigvals(A + plant.A_d + B @ F).real) < 0

    def test_delay_free_single_vertex(self):
        p = PolytopicPlant(((-np.eye(2), np.array([[1.0], [0.0]])),), np.zeros((2, 2)), 1 / 60)
        r = lmi.synth_current_feedback(p, 0.5)
        assert max(r.margins) < 0

    def test_unreachable_rate(self, plant):
        with pytest.raises(SynthesisFailure):
            lmi.synth_current_feedback(plant, 1e9, time_limit=10)

    def test_zero_gain_on_unstable_vertex_fails_certificate(self):
        p = PolytopicPlant(((np.array([[1.0, 0.0], [0.0, -1000.0]]), np.array([[1.0], [0.0]])),),
                           np.zeros((2, 2)), 1 / 60)
        ok, _ = lmi.verify_feedback_certificate(p, [[0.0, 0.0]], 1.0)
        assert not ok

    def test_table_gain_assembly(self):
        F = lmi.gains_to_F(-0.1649, 1.2197e4)
        assert np.abs(F - np.array([[-1.2197e4, 1.2197e4]])).max() < 1

    @given(st.floats(-1e5, 1e5), st.floats(-1e5, 1e5))
    def test_gain_conversion_round_trip(self, k1, k2):
        assert lmi.F_to_gains(lmi.gains_to_F(k1, k2)) == pytest.approx((k1, k2), abs=1e-6)


class TestGainsFile:
    def test_round_trip(self, tmp_path):
        vals = {"k_dc": 100.0, "K": np.array([[1.0, 2.0], [2.0, 5.0]]), "L": np.array([[3.0], [4.0]])}
        path = tmp_path / "g.txt"
        lmi.write_gains(path, vals)
        back = lmi.read_gains(path)
        assert back["k_dc"] == 100.0
        assert np.array_equal(back["K"], vals["K"])
        assert np.array_equal(np.asarray(back["L"]).ravel(), [3.0, 4.0])

    def test_malformed_line(self, tmp_path):
        path = tmp_path / "g.txt"
        path.write_text("k_dc 100\n")
        with pytest.raises(InvalidInput):
            lmi.read_gains(path)
