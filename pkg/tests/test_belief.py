import math

import numpy as np
import pytest

from belief import (
    decide,
    eb_n0_db,
    llr_update,
    posterior,
    qfunc,
    stage_cost,
    std_normal_pdf,
    terminal_cost,
    transition,
)


class TestGaussianHelpers:
    def test_pdf_at_zero(self):
        assert std_normal_pdf(0.0) == pytest.approx(1.0 / math.sqrt(2 * math.pi))

    @pytest.mark.parametrize("a, expected", [(0.0, 0.5), (1.0, 0.15865525393145707), (1.5556, 0.0599)])
    def test_qfunc_values(self, a, expected):
        assert qfunc(a) == pytest.approx(expected, abs=1e-4)

    def test_qfunc_far_tail_keeps_precision(self):
        # Q(10) ≈ 7.62e-24, lost entirely by 1 - Φ(10)
        assert qfunc(10.0) == pytest.approx(7.619853024160527e-24, rel=1e-10)
        assert qfunc(-10.0) == pytest.approx(1.0)

    def test_qfunc_vectorised(self):
        out = qfunc(np.array([-1.0, 0.0, 1.0]))
        np.testing.assert_allclose(out[0] + out[2], 1.0)
        assert out[1] == 0.5

    def test_eb_n0_db(self):
        assert eb_n0_db(2.0) == pytest.approx(0.0)
        assert eb_n0_db(2.42) == pytest.approx(10 * math.log10(1.21))


class TestPosterior:
    def test_zero_llr_is_uniform(self):
        p0, p1 = posterior(0.0)
        assert p0 == 0.5 and p1 == 0.5

    @pytest.mark.parametrize("l", [-800.0, -30.0, -1.0, 0.3, 12.0, 800.0])
    def test_sums_to_one(self, l):
        p0, p1 = posterior(l)
        assert p0 + p1 == pytest.approx(1.0, abs=1e-15)
        assert 0.0 <= p0 <= 1.0 and 0.0 <= p1 <= 1.0

    def test_matches_logistic(self):
        p0, p1 = posterior(2.0)
        assert p1 == pytest.approx(1.0 / (1.0 + math.exp(-2.0)))

    def test_losing_hypothesis_keeps_precision(self):
        p0, _ = posterior(50.0)
        assert p0 == pytest.approx(math.exp(-50.0), rel=1e-12)

    def test_terminal_cost_is_smaller_posterior(self):
        ls = np.linspace(-10, 10, 41)
        p0, p1 = posterior(ls)
        np.testing.assert_allclose(terminal_cost(ls), np.minimum(p0, p1))
        assert terminal_cost(0.0) == 0.5

    def test_terminal_cost_symmetric(self):
        ls = np.linspace(0, 30, 31)
        np.testing.assert_array_equal(terminal_cost(ls), terminal_cost(-ls))

    def test_stage_cost(self):
        assert stage_cost(0.0, 2.0, 0.5) == pytest.approx(0.5 * 0.25 * 4.0)
        assert stage_cost(3.0, 0.0, 10.0) == 0.0


class TestLlrUpdate:
    def test_scalar_update(self):
        # (u1 - u0) y - (u1² - u0²)/2 = 0.2
        assert llr_update(0.0, 0.5, -0.5, 0.2) == pytest.approx(0.2)

    def test_equal_hypotheses_leave_llr_unchanged(self):
        assert llr_update(1.25, 0.7, 0.7, -3.0) == 1.25

    def test_vector_with_silent_coordinates_matches_scalar(self):
        y = np.array([0.37, 1.9, -2.2, 0.05])
        u1 = np.array([0.6, 0.0, 0.0, 0.0])
        u0 = np.array([-0.4, 0.0, 0.0, 0.0])
        assert llr_update(0.8, u1, u0, y) == llr_update(0.8, 0.6, -0.4, 0.37)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            llr_update(0.0, [1.0, 0.0], [0.0], [0.3, 0.1])

    @pytest.mark.parametrize("l, v, z", [(0.0, 2.0, 0.3), (1.7, 1.1, -0.8), (-4.0, 3.5, 1.2)])
    def test_decoder_tracks_encoder_dynamics(self, l, v, z):
        p0, p1 = posterior(l)
        u1, u0 = p0 * v, -p1 * v
        assert llr_update(l, u1, u0, u1 + z) == pytest.approx(transition(l, v, 1, z), abs=1e-12)
        assert llr_update(l, u1, u0, u0 + z) == pytest.approx(transition(l, v, 0, z), abs=1e-12)


class TestTransitionAndDecision:
    def test_transition_drift(self):
        assert transition(0.0, 2.0, 1, 0.0) == 2.0
        assert transition(0.0, 2.0, 0, 0.0) == -2.0
        assert transition(1.0, 0.0, 1, 5.0) == 1.0

    def test_transition_rejects_bad_bit(self):
        with pytest.raises(ValueError):
            transition(0.0, 1.0, 2, 0.0)

    def test_tie_decodes_zero(self):
        assert decide(0.0) == 0
        assert decide(1e-300) == 1
        assert decide(-1e-300) == 0

    def test_decide_array(self):
        np.testing.assert_array_equal(decide(np.array([-1.0, 0.0, 2.0])), [0, 0, 1])
