import numpy as np
import pytest

from multifbsde.autodiff import EAGER
from multifbsde.errors import ParameterDomainError
from multifbsde.model import (ZERO_SHIFT, DriftShift, LqParams, adr_problem,
                              controlled_bm_problem, lq_default_params, lq_problem,
                              shift_preset, shifted, spread_cost_terminal)


def eval_b(prob, t, x, y, z):
    return prob.b(EAGER, t, np.atleast_2d(x), np.atleast_1d(y), np.atleast_2d(z))[0]


def eval_f(prob, t, x, y, z):
    return prob.f(EAGER, t, np.atleast_2d(x), np.atleast_1d(y), np.atleast_2d(z))[0]


def eval_g(prob, x):
    return prob.g(EAGER, np.atleast_2d(x))[0]


class TestLqProblem:
    def test_drift_vanishes_at_mean_reversion_point(self, lq_params, lq):
        b = eval_b(lq, 0.0, lq_params.C, 0.0, np.zeros(6))
        np.testing.assert_allclose(b, np.zeros(6), atol=1e-14)

    def test_terminal_cost_at_start_point(self, lq):
        # 0.01 * (1 + 25 + 1 + 25 + 1 + 25)
        assert eval_g(lq, np.full(6, 0.1)) == pytest.approx(0.78, abs=1e-12)

    def test_driver_zero_at_origin(self, lq):
        for y in (-3.0, 0.0, 11.0):
            assert eval_f(lq, 0.2, np.zeros(6), y, np.zeros(6)) == 0.0

    def test_driver_nonnegative(self, lq):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((64, 6))
        z = rng.standard_normal((64, 6))
        vals = lq.f(EAGER, 0.0, x, np.zeros(64), z)
        assert (vals >= 0.0).all()

    def test_rejects_rank_deficient_b(self, lq_params):
        bad = np.zeros((6, 2))
        with pytest.raises(ParameterDomainError):
            LqParams(lq_params.A, bad, lq_params.C, lq_params.sigma, lq_params.R_x,
                     lq_params.R_u, lq_params.G, lq_params.x0, lq_params.horizon)

    def test_rejects_non_pd_control_weight(self, lq_params):
        with pytest.raises(ParameterDomainError):
            LqParams(lq_params.A, lq_params.B, lq_params.C, lq_params.sigma,
                     lq_params.R_x, np.diag([1.0, -1.0]), lq_params.G,
                     lq_params.x0, lq_params.horizon)

    def test_rejects_asymmetric_state_cost(self, lq_params):
        bad = lq_params.R_x.copy()
        bad[0, 1] = 0.5
        with pytest.raises(ParameterDomainError):
            LqParams(lq_params.A, lq_params.B, lq_params.C, lq_params.sigma, bad,
                     lq_params.R_u, lq_params.G, lq_params.x0, lq_params.horizon)


class TestControlledBm:
    def test_drift(self, cbm):
        np.testing.assert_allclose(eval_b(cbm, 0.0, np.zeros(2), 0.0, [2.0, -4.0]),
                                   [-2.0, 4.0])

    def test_driver(self, cbm):
        assert eval_f(cbm, 0.0, np.zeros(2), 0.0, [2.0, -4.0]) == 10.0

    def test_terminal_cost(self, cbm):
        assert eval_g(cbm, [-0.1, 0.1]) == pytest.approx(-0.2)

    def test_rejects_bad_parameters(self):
        with pytest.raises(ParameterDomainError):
            controlled_bm_problem(r=0.0)
        with pytest.raises(ParameterDomainError):
            controlled_bm_problem(sigma=-0.25)


class TestAdrProblem:
    def test_sigma_scale(self):
        prob = adr_problem(alpha=0.0315, beta=0.6)
        np.testing.assert_allclose(np.diag(prob.sigma(0.0)), np.sqrt(0.063))
        assert prob.sigma(0.0)[0, 0] == pytest.approx(0.25100, abs=5e-6)

    def test_driver_with_reaction(self):
        prob = adr_problem(alpha=0.1, beta=0.6, gamma=1.0)
        assert eval_f(prob, 0.0, np.zeros(2), 2.0, np.zeros(2)) == -2.0

    def test_drift(self):
        prob = adr_problem(alpha=0.1, beta=0.6)
        np.testing.assert_allclose(eval_b(prob, 0.0, np.zeros(2), 0.0, [1.0, -1.0]),
                                   [0.6, -0.6])

    def test_rejects_bad_diffusivity(self):
        with pytest.raises(ParameterDomainError):
            adr_problem(alpha=0.0, beta=0.5)
        with pytest.raises(ParameterDomainError):
            adr_problem(alpha=0.1, beta=-0.5)


class TestShifted:
    def test_zero_shift_is_identity(self, lq):
        sc = shifted(lq, ZERO_SHIFT)
        rng = np.random.default_rng(1)
        x = rng.standard_normal((8, 6))
        y = rng.standard_normal(8)
        z = rng.standard_normal((8, 6))
        np.testing.assert_array_equal(sc.drift(EAGER, 0.1, x, y, z),
                                      lq.b(EAGER, 0.1, x, y, z))
        np.testing.assert_array_equal(sc.driver(EAGER, 0.1, x, y, z),
                                      lq.f(EAGER, 0.1, x, y, z))

    def test_decoupling_shift_of_controlled_bm(self, cbm):
        # psi = -z/r zeroes the drift and flips the driver's sign
        sc = shifted(cbm, DriftShift("decouple", lambda ops, t, x, y, z: ops.scale(z, -1.0)))
        z = np.array([[2.0, -4.0]])
        drift = sc.drift(EAGER, 0.0, np.zeros((1, 2)), np.zeros(1), z)
        np.testing.assert_allclose(drift, np.zeros((1, 2)), atol=1e-14)
        driver = sc.driver(EAGER, 0.0, np.zeros((1, 2)), np.zeros(1), z)
        assert driver[0] == -10.0  # -||z||^2 / (2r)

    def test_doubling_shift_of_lq(self, lq_params, lq):
        # psi = -A(C - x) doubles the reversion term
        psi = shift_preset("lq", "K3", lq=lq_params)[2]
        sc = shifted(lq, psi)
        rng = np.random.default_rng(2)
        x = rng.standard_normal((4, 6))
        z = rng.standard_normal((4, 6))
        got = sc.drift(EAGER, 0.0, x, np.zeros(4), z)
        m = lq_params.control_weight
        want = 2.0 * (lq_params.C - x) @ lq_params.A.T - 0.5 * z @ m.T
        np.testing.assert_allclose(got, want, atol=1e-12)

    def test_driver_minus_f_is_z_dot_psi(self, lq_params, lq, cbm):
        rng = np.random.default_rng(3)
        cases = [(lq, s) for s in shift_preset("lq", "K4", lq=lq_params)]
        cases += [(lq, s) for s in shift_preset("lq", "xi-neg-sin", lq=lq_params)]
        cases += [(cbm, s) for s in shift_preset("controlled-bm", "K2", r=1.0)]
        for prob, shift in cases:
            sc = shifted(prob, shift)
            d = prob.d
            x = rng.standard_normal((8, d))
            y = rng.standard_normal(8)
            z = rng.standard_normal((8, d))
            lhs = sc.driver(EAGER, 0.3, x, y, z) - prob.f(EAGER, 0.3, x, y, z)
            psi = np.zeros((8, d)) if shift.psi is None else shift.psi(EAGER, 0.3, x, y, z)
            np.testing.assert_allclose(lhs, np.sum(z * psi, axis=1), atol=1e-12)

    def test_shift_dimension_checked(self):
        prob = controlled_bm_problem(d=3, x0=(0.0, 0.0, 0.0))
        bad = DriftShift("bad", lambda ops, t, x, y, z: ops.inner(z, z))
        from multifbsde.errors import GraphConstructionError

        with pytest.raises(GraphConstructionError):
            shifted(prob, bad)


class TestShiftPresets:
    def test_lq_k3_labels(self, lq_params):
        labels = [s.label for s in shift_preset("lq", "K3", lq=lq_params)]
        assert labels == ["zero", "b1", "neg-b1"]

    def test_lq_k_ladder_lengths(self, lq_params):
        for k in (1, 2, 3, 4):
            assert len(shift_preset("lq", f"K{k}", lq=lq_params)) == k

    def test_adr_k2_second_shift(self):
        shifts = shift_preset("adr", "K2", beta=0.6)
        psi = shifts[1].psi(EAGER, 0.0, np.zeros((1, 2)), np.zeros(1),
                            np.array([[2.0, 0.0]]))
        np.testing.assert_allclose(psi, [[-0.6, 0.0]])

    def test_xi_shift_at_origin(self, lq_params):
        # xi(0) = 0 for the -sin map, so psi_1(0) = b1(0) = A C
        shifts = shift_preset("lq", "xi-neg-sin", lq=lq_params)
        psi = shifts[0].psi(EAGER, 0.0, np.zeros((1, 6)), np.zeros(1), np.zeros((1, 6)))
        np.testing.assert_allclose(psi[0], lq_params.A @ lq_params.C, atol=1e-14)

    def test_xi_exp_clamp_values(self, lq_params):
        # the clamp saturates: xi(x) = 1 - exp(clip(x, -1, 1))
        shifts = shift_preset("lq", "xi-exp-clamp", lq=lq_params)
        x = np.array([[-3.0, -1.0, 0.0, 0.5, 1.0, 4.0]])
        psi = shifts[0].psi(EAGER, 0.0, x, np.zeros(1), np.zeros((1, 6)))
        xi = 1.0 - np.exp(np.clip(x, -1.0, 1.0))
        want = (lq_params.C - xi) @ lq_params.A.T
        np.testing.assert_allclose(psi, want, atol=1e-12)

    def test_unknown_preset_rejected(self, lq_params):
        with pytest.raises(ParameterDomainError):
            shift_preset("lq", "K9", lq=lq_params)
        with pytest.raises(ParameterDomainError):
            shift_preset("heat", "K1")
        with pytest.raises(ParameterDomainError):
            shift_preset("adr", "K2")  # missing beta


def test_spread_cost_requires_two_coordinates():
    with pytest.raises(ParameterDomainError):
        spread_cost_terminal(1)


def test_default_lq_parameters_are_consistent():
    p = lq_default_params()
    assert p.d == 6 and p.ell == 2
    assert p.horizon == 0.5
    np.testing.assert_array_equal(p.x0, np.full(6, 0.1))
