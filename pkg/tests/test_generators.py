import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tailforge import generators
from tailforge.errors import DomainError, GeneratorValidationError, ValidationError


def splice_coefficients_oracle(m, t0):
    """Solve value and slope continuity at t0 as a plain 2x2 linear system."""
    a_mat = np.array([[t0**m, 1.0], [m * t0 ** (m - 1), 0.0]])
    rhs = np.array([t0**2, 2.0 * t0])
    return np.linalg.solve(a_mat, rhs)


class TestRegularizedPower:
    def test_m2_collapses_to_plain_quadratic(self):
        g = generators.make_regularized_power(2.0, 1.0)
        assert g.power_coeff == pytest.approx(1.0, abs=1e-15)
        assert g.power_offset == pytest.approx(0.0, abs=1e-15)
        t = np.linspace(0, 10, 101)
        np.testing.assert_allclose(g.evaluate(t), t**2, rtol=1e-14)

    def test_m4_coefficients_match_linear_system(self):
        a, b = splice_coefficients_oracle(4.0, 1.0)
        g = generators.make_regularized_power(4.0, 1.0)
        assert g.power_coeff == pytest.approx(a, rel=1e-14)
        assert g.power_offset == pytest.approx(b, rel=1e-14)
        assert g.evaluate(2.0) == pytest.approx(8.5, rel=1e-14)

    def test_m_at_most_one_rejected(self):
        with pytest.raises(ValidationError):
            generators.make_regularized_power(1.0, 1.0)
        with pytest.raises(ValidationError):
            generators.make_regularized_power(0.5, 1.0)

    def test_fractional_m_below_two_still_convex_and_strict(self):
        g = generators.make_regularized_power(1.5, 2.0)
        assert g.validation.passed
        assert g.validation.mode == "strict"

    def test_continuity_at_splice(self):
        for m in (1.5, 3.0, 4.0, 5.5):
            g = generators.make_regularized_power(m, 1.3)
            h = 1e-7
            left = g.evaluate(1.3 - h)
            right = g.evaluate(1.3 + h)
            assert right - left == pytest.approx(0.0, abs=1e-6)
            slope_left = (g.evaluate(1.3) - g.evaluate(1.3 - h)) / h
            slope_right = (g.evaluate(1.3 + h) - g.evaluate(1.3)) / h
            assert slope_right == pytest.approx(slope_left, rel=1e-6)

    def test_power_ratio_converges_to_splice_coefficient(self):
        g = generators.make_regularized_power(4.0, 1.0, domain_max=200.0)
        assert g.evaluate(150.0) / 150.0**4 == pytest.approx(g.power_coeff, rel=1e-3)


class TestEvaluate:
    def test_quadratic(self):
        g = generators.quadratic(0.5)
        assert g.evaluate(2.0) == 2.0
        assert g.evaluate(0.0) == 0.0

    def test_regularized_power_beyond_splice(self):
        g = generators.make_regularized_power(4.0, 1.0)
        assert g.evaluate(2.0) == pytest.approx(8.5, rel=1e-14)

    def test_tabulated_interpolates(self):
        g = generators.tabulated([0.0, 1.0, 2.0], [0.0, 1.0, 4.0])
        assert g.evaluate(1.5) == pytest.approx(2.5, abs=1e-15)

    def test_tabulated_out_of_domain(self):
        g = generators.tabulated([0.0, 1.0, 2.0], [0.0, 1.0, 4.0])
        with pytest.raises(DomainError):
            g.evaluate(2.5)

    def test_negative_argument_rejected(self):
        with pytest.raises(ValidationError):
            generators.quadratic(1.0).evaluate(-0.1)

    def test_vectorized_matches_scalar(self):
        g = generators.make_regularized_power(3.0, 1.0)
        ts = np.linspace(0.0, 5.0, 23)
        vec = g.evaluate(ts)
        assert vec.shape == ts.shape
        for t, v in zip(ts, vec):
            assert g.evaluate(float(t)) == v

    def test_power_extrapolation_opt_in(self):
        grid = np.linspace(0.0, 4.0, 33)
        g = generators.tabulated(grid, grid**2, extrapolation="power")
        # exponent fitted on the last decade of a pure quadratic is 2
        assert g.evaluate(6.0) == pytest.approx(36.0, rel=1e-3)


class TestScaled:
    def test_pointwise_factor(self):
        inner = generators.quadratic(0.5)
        g = generators.scaled(inner, 3.0)
        ts = np.linspace(0.0, 10.0, 50)
        np.testing.assert_allclose(g.evaluate(ts), 3.0 * inner.evaluate(ts), rtol=1e-15)

    def test_factor_must_be_positive(self):
        with pytest.raises(ValidationError):
            generators.scaled(generators.quadratic(1.0), 0.0)


@st.composite
def valid_generators(draw):
    kind = draw(st.sampled_from(["quadratic", "regularized_power", "scaled"]))
    if kind == "quadratic":
        return generators.quadratic(draw(st.floats(0.05, 50.0)))
    if kind == "regularized_power":
        return generators.make_regularized_power(
            draw(st.floats(1.1, 6.0)), draw(st.floats(0.2, 3.0))
        )
    inner = generators.quadratic(draw(st.floats(0.05, 20.0)))
    return generators.scaled(inner, draw(st.floats(0.1, 10.0)))


class TestValidation:
    @settings(max_examples=60, deadline=None)
    @given(valid_generators())
    def test_zero_origin_and_monotone(self, g):
        assert g.evaluate(0.0) == 0.0
        probes = np.linspace(0.0, g.domain_max, 101)
        vals = g.evaluate(probes)
        assert np.all(np.diff(vals) >= -1e-12 * np.maximum(1.0, np.abs(vals[:-1])))
        assert g.validation.passed

    def test_report_passed_iff_no_violations(self):
        good = generators.validate(generators.quadratic(1.0), "strict")
        assert good.passed and not good.violations
        bad = generators.Tabulated(
            grid=np.array([0.0, 1.0, 2.0]), values=np.array([0.0, 3.0, 3.5])
        )
        report = generators.validate(bad, "relaxed")
        assert not report.passed
        assert report.violations
        assert {v.condition for v in report.violations} >= {"convex"}

    def test_nonconvex_tabulated_rejected(self):
        with pytest.raises(GeneratorValidationError) as err:
            generators.tabulated([0.0, 1.0, 2.0], [0.0, 3.0, 3.5])
        assert err.value.report is not None
        assert not err.value.report.passed

    def test_tabulated_fails_strict_passes_relaxed(self):
        grid = np.linspace(0.0, 4.0, 17)
        vals = grid**2
        g = generators.tabulated(grid, vals, mode="relaxed")
        assert g.validation.passed
        strict = generators.validate(g, "strict")
        assert not strict.passed  # piecewise-linear origin has zero curvature

    def test_nonzero_origin_rejected(self):
        with pytest.raises(GeneratorValidationError):
            generators.tabulated([0.0, 1.0], [0.5, 1.0])

    def test_decreasing_grid_rejected(self):
        with pytest.raises(ValidationError):
            generators.tabulated([0.0, 1.0, 0.5], [0.0, 1.0, 2.0])

    def test_strict_curvature_window(self):
        # curvature at zero far above 1/eps: violates the strict window
        steep = generators.Quadratic(a=1e8)
        report = generators.validate(steep, "strict")
        assert not report.passed
        assert any(v.condition == "curvature-at-origin" for v in report.violations)


class TestFitFromSamples:
    def test_atoms_at_one_give_zero_below(self):
        samples = np.tile([1.0, -1.0], 600)
        g = generators.fit_from_samples(samples, np.array([0.0, 0.5]))
        assert g.evaluate(0.5) == 0.0

    def test_normal_tail_matches_erfc_oracle(self):
        rng = np.random.Generator(np.random.Philox(key=np.uint64(2024)))
        samples = rng.standard_normal(10**6)
        grid = np.linspace(0.0, 3.0, 25)
        g = generators.fit_from_samples(samples, grid)
        # two-sided normal tail at 2: erfc(2 / sqrt(2))
        expected = -math.log(math.erfc(2.0 / math.sqrt(2.0)))
        sorted_abs = np.sort(np.abs(samples))
        emp = 1.0 - np.searchsorted(sorted_abs, 2.0, side="right") / samples.size
        assert -math.log(emp) == pytest.approx(expected, abs=0.05)
        assert g.evaluate(2.0) == pytest.approx(expected, abs=0.06)

    def test_dominance_by_construction(self):
        rng = np.random.Generator(np.random.Philox(key=np.uint64(7)))
        samples = rng.standard_normal(20_000)
        grid = np.linspace(0.0, 2.5, 12)
        g = generators.fit_from_samples(samples, grid)
        sorted_abs = np.sort(np.abs(samples))
        for t in grid:
            emp = 1.0 - np.searchsorted(sorted_abs, t, side="right") / samples.size
            assert math.exp(-g.evaluate(t)) >= emp - 1e-12

    def test_empty_and_small_samples_rejected(self):
        with pytest.raises(ValidationError):
            generators.fit_from_samples([], [0.0, 1.0])
        with pytest.raises(ValidationError):
            generators.fit_from_samples(np.ones(100), [0.0, 0.5])

    def test_zero_tail_nodes_dropped_with_warning(self):
        samples = np.tile([0.5, -0.5], 600)
        # strictly above the atom at 0.5 the empirical tail vanishes
        with pytest.warns(UserWarning, match="empirical tail 0"):
            g = generators.fit_from_samples(samples, np.array([0.0, 0.2, 0.5]))
        assert g.domain_max == pytest.approx(0.2)

    def test_grid_beyond_sample_range_rejected(self):
        samples = np.tile([0.5, -0.5], 600)
        with pytest.raises(ValidationError):
            generators.fit_from_samples(samples, np.array([0.0, 0.2, 9.0]))


class TestSerialization:
    @settings(max_examples=40, deadline=None)
    @given(valid_generators())
    def test_closed_form_round_trip_is_exact(self, g):
        back = generators.from_json(g.to_json())
        assert back.to_dict() == g.to_dict()
        ts = np.linspace(0.0, g.domain_max, 17)
        np.testing.assert_array_equal(back.evaluate(ts), g.evaluate(ts))

    def test_tabulated_round_trip_within_1e12(self):
        grid = np.linspace(0.0, 3.0, 40)
        g = generators.tabulated(grid, grid**2 + 0.1 * grid)
        back = generators.from_json(g.to_json())
        np.testing.assert_allclose(back.values, g.values, rtol=0, atol=1e-12)
        np.testing.assert_allclose(back.grid, g.grid, rtol=0, atol=1e-12)

    def test_scaled_nests(self):
        g = generators.scaled(generators.make_regularized_power(3.0, 1.0), 2.0)
        back = generators.from_json(g.to_json())
        assert isinstance(back, generators.Scaled)
        assert back.evaluate(2.0) == g.evaluate(2.0)

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValidationError):
            generators.from_dict({"kind": "cubic", "a": 1.0})

    def test_unknown_key_rejected(self):
        with pytest.raises(ValidationError):
            generators.from_dict({"kind": "quadratic", "a": 1.0, "b": 2.0})

    def test_malformed_json_rejected(self):
        with pytest.raises(ValidationError):
            generators.from_json("{not json")

    def test_json_floats_round_trip_bit_exact(self):
        g = generators.quadratic(1.0 / 3.0, domain_max=16.0)
        doc = json.loads(g.to_json())
        assert doc["a"] == 1.0 / 3.0
