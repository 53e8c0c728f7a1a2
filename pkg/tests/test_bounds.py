import json
import math

import numpy as np
import pytest

from tailforge import bounds, conjugate, generators
from tailforge.errors import CalibrationError, DomainError, ValidationError


@pytest.fixture(scope="module")
def quad_half():
    return generators.quadratic(0.5)


@pytest.fixture(scope="module")
def reg_pow4():
    return generators.make_regularized_power(4.0, 1.0)


class TestQueryAndResult:
    def test_query_validation(self, quad_half):
        with pytest.raises(ValidationError):
            bounds.BoundQuery(generator=quad_half, constant=0.0, n=4)
        with pytest.raises(ValidationError):
            bounds.BoundQuery(generator=quad_half, constant=1.0, n=0)
        with pytest.raises(ValidationError):
            bounds.BoundQuery(generator=quad_half, constant=1.0, n=3, degree=4)
        with pytest.raises(ValidationError):
            bounds.BoundQuery(generator=quad_half, constant=1.0, n=4, side="middle")

    def test_upper_bound_gaussian_point(self, quad_half):
        q = bounds.BoundQuery(generator=quad_half, constant=1.0, n=7, side="upper")
        r = bounds.sum_tail_bound(q, 2.0)
        assert r.log_bound_raw == pytest.approx(-2.0, abs=1e-12)
        assert r.bound == pytest.approx(math.exp(-2.0), rel=1e-12)
        assert r.regime == "quadratic"

    def test_bilateral_doubles(self, quad_half):
        q = bounds.BoundQuery(generator=quad_half, constant=1.0, n=7, side="bilateral")
        r = bounds.sum_tail_bound(q, 2.0)
        assert r.bound == pytest.approx(2.0 * math.exp(-2.0), rel=1e-12)

    def test_tiny_t_clamps_to_one(self, quad_half):
        q = bounds.BoundQuery(generator=quad_half, constant=1.0, n=4, side="bilateral")
        r = bounds.sum_tail_bound(q, 1e-9)
        assert r.bound == 1.0
        assert r.regime == "saturated-at-one"
        assert r.log_bound_raw > 0.0  # ln 2 minus something tiny

    def test_nonpositive_t_rejected(self, quad_half):
        q = bounds.BoundQuery(generator=quad_half, constant=1.0, n=4)
        with pytest.raises(ValidationError):
            bounds.sum_tail_bound(q, 0.0)
        with pytest.raises(ValidationError):
            bounds.ustat_tail_bound(q, 0.0)

    def test_sum_requires_degree_one(self, quad_half):
        q = bounds.BoundQuery(generator=quad_half, constant=1.0, n=4, degree=2)
        with pytest.raises(ValidationError):
            bounds.sum_tail_bound(q, 1.0)

    def test_gaussian_fixed_point_n_independent(self, quad_half):
        ts = np.linspace(0.1, 5.0, 29)
        for n in (1, 4, 16, 256):
            q = bounds.BoundQuery(generator=quad_half, constant=1.0, n=n, side="upper")
            for t in ts:
                r = bounds.sum_tail_bound(q, float(t))
                assert r.log_bound_raw == pytest.approx(-0.5 * t * t, abs=1e-12)

    def test_bound_nonincreasing_in_t(self, reg_pow4):
        q = bounds.BoundQuery(generator=reg_pow4, constant=1.3, n=9)
        ts = np.linspace(0.05, 12.0, 200)
        res = bounds.bound_curve(q, ts)
        b = np.array([r.bound for r in res])
        raw = np.array([r.log_bound_raw for r in res])
        assert np.all(np.diff(b) <= 1e-15)
        assert np.all(np.diff(raw) <= 1e-12)

    def test_power_regime_flag(self, reg_pow4):
        q = bounds.BoundQuery(generator=reg_pow4, constant=1.0, n=4, side="upper")
        assert bounds.sum_tail_bound(q, 1.0).regime == "quadratic"  # arg 0.5 <= t0
        assert bounds.sum_tail_bound(q, 4.0).regime == "power"  # arg 2.0 > t0


class TestUstatBound:
    def test_degree_one_degenerates_bit_for_bit(self, quad_half):
        ts = np.linspace(0.2, 4.0, 37)
        q = bounds.BoundQuery(generator=quad_half, constant=0.997, n=11, side="bilateral")
        for t in ts:
            a = bounds.sum_tail_bound(q, float(t))
            b = bounds.ustat_tail_bound(q, float(t))
            assert a.log_bound_raw == b.log_bound_raw
            assert a.bound == b.bound
            assert a.regime == b.regime

    def test_plugin_arithmetic(self, quad_half):
        q = bounds.BoundQuery(generator=quad_half, constant=2.0, n=16, degree=2)
        r = bounds.ustat_tail_bound(q, 4.0)
        # 2 * exp(-16 * ((4 / (2*4))**2 / 2)) = 2 * exp(-2)
        assert r.bound == pytest.approx(min(1.0, 2.0 * math.exp(-2.0)), rel=1e-12)
        check = bounds.chernoff_crosscheck(quad_half, 2.0, 16, 4.0)
        assert check.direct == pytest.approx(2.0, abs=1e-12)
        assert check.via_sup == pytest.approx(2.0, abs=2 * check.budget)


class TestSumMgfEnvelope:
    def test_quadratic_closed_form(self, quad_half):
        val = bounds.sum_mgf_envelope(quad_half, 1.0, 4, 2.0)
        assert val == pytest.approx(2.0, abs=1e-4)

    def test_zero_is_exact(self, quad_half, reg_pow4):
        for g in (quad_half, reg_pow4):
            assert bounds.sum_mgf_envelope(g, 1.7, 9, 0.0) == 0.0

    def test_regularized_power_matches_brute_force(self, reg_pow4):
        t_fine = np.linspace(0.0, reg_pow4.domain_max, 400_001)
        gv = np.asarray(reg_pow4.evaluate(t_fine))
        oracle = float(np.max(8.0 * t_fine - gv))
        val = bounds.sum_mgf_envelope(reg_pow4, 1.0, 1, 8.0)
        assert oracle == pytest.approx(6.0 * 4.0 ** (1.0 / 3.0) - 0.5, abs=1e-8)
        assert val == pytest.approx(oracle, abs=1e-4)

    def test_beyond_dual_range_raises(self, quad_half):
        with pytest.raises(DomainError):
            bounds.sum_mgf_envelope(quad_half, 1.0, 1, 1e9)

    def test_symmetry_in_lambda(self, reg_pow4):
        table = conjugate.conjugate(reg_pow4)
        a = bounds.sum_mgf_envelope(reg_pow4, 1.1, 5, 3.0, table=table)
        b = bounds.sum_mgf_envelope(reg_pow4, 1.1, 5, -3.0, table=table)
        assert a == b


class TestChernoffCrosscheck:
    def test_quadratic_both_paths(self, quad_half):
        check = bounds.chernoff_crosscheck(quad_half, 1.0, 9, 3.0)
        direct, via = check
        assert direct == pytest.approx(4.5, abs=1e-12)
        assert via == pytest.approx(4.5, abs=1e-4)
        assert check.healthy

    def test_regularized_power_within_budget(self, reg_pow4):
        table = conjugate.conjugate(reg_pow4)
        check = bounds.chernoff_crosscheck(reg_pow4, 1.0, 4, 3.0, table=table)
        assert abs(check.direct - check.via_sup) <= 2.0 * table.tol_interp
        assert check.healthy

    def test_dual_route_converges_with_grid(self):
        # independent fine-grid two-stage sup; a tight-domain table must match it
        g = generators.make_regularized_power(4.0, 1.0, domain_max=4.0)
        table = conjugate.conjugate(g)
        check = bounds.chernoff_crosscheck(g, 1.0, 4, 3.0, table=table)
        arg = 3.0 / (1.0 * 2.0)
        t_fine = np.linspace(0.0, 4.0, 200_001)
        gv = np.asarray(g.evaluate(t_fine))
        lam_fine = np.linspace(0.0, 20.0, 2_001)
        star = np.array([np.max(l * t_fine - gv) for l in lam_fine])
        oracle = 4.0 * np.max(arg * lam_fine - star)
        assert oracle == pytest.approx(4.0 * g.evaluate(1.5), abs=1e-3)
        assert check.via_sup == pytest.approx(oracle, abs=2e-3)
        assert check.direct == pytest.approx(oracle, abs=1e-3)

    def test_zero_threshold(self, quad_half):
        check = bounds.chernoff_crosscheck(quad_half, 1.0, 4, 0.0)
        assert check.direct == 0.0
        assert check.via_sup == 0.0


class TestInvertBound:
    def test_alpha_two_over_e_squared(self, quad_half):
        alpha = 2.0 * math.exp(-2.0)
        for n in (1, 5, 100):
            q = bounds.BoundQuery(generator=quad_half, constant=1.0, n=n)
            assert bounds.invert_bound(q, alpha) == pytest.approx(2.0, rel=1e-9)

    def test_alpha_near_one(self, quad_half):
        q = bounds.BoundQuery(generator=quad_half, constant=1.0, n=1)
        t = bounds.invert_bound(q, 1.0 - 1e-12)
        assert t == pytest.approx(math.sqrt(2.0 * math.log(2.0)), rel=1e-6)

    def test_alpha_out_of_range(self, quad_half):
        q = bounds.BoundQuery(generator=quad_half, constant=1.0, n=1)
        for alpha in (0.0, 1.0, 1.5, -0.1):
            with pytest.raises(ValidationError):
                bounds.invert_bound(q, alpha)

    def test_level_beyond_domain(self):
        g = generators.quadratic(0.5, domain_max=1.0)
        q = bounds.BoundQuery(generator=g, constant=1.0, n=1)
        with pytest.raises(DomainError):
            bounds.invert_bound(q, 1e-8)

    def test_round_trip_relative_1e9(self, reg_pow4):
        rng = np.random.Generator(np.random.Philox(key=np.uint64(11)))
        gens = [generators.quadratic(0.8), reg_pow4, generators.make_regularized_power(2.5, 1.5)]
        for _ in range(10):
            g = gens[rng.integers(0, len(gens))]
            n = int(rng.integers(1, 300))
            c = float(rng.uniform(0.5, 3.0))
            alpha = float(rng.uniform(1e-6, 0.99))
            if math.log(2.0 / alpha) / n > float(g.evaluate(g.domain_max)):
                continue
            q = bounds.BoundQuery(generator=g, constant=c, n=n)
            t_star = bounds.invert_bound(q, alpha)
            achieved = bounds.sum_tail_bound(
                bounds.BoundQuery(generator=g, constant=c, n=n, degree=1), t_star
            ).bound
            assert achieved == pytest.approx(alpha, rel=1e-9)


class TestCalibration:
    def test_normal_quadratic_gives_one(self, quad_half):
        res = bounds.calibrate_constant(quad_half, bounds.normal_log_mgf(1.0), 8.0, tol=5e-4)
        assert 0.999 <= res.constant <= 1.001
        assert res.lambda_range == 8.0
        assert not res.degenerate

    def test_rademacher_quadratic_gives_one(self, quad_half):
        res = bounds.calibrate_constant(quad_half, bounds.rademacher_log_mgf(), 8.0, tol=5e-4)
        assert 0.999 <= res.constant <= 1.001

    def test_returned_constant_tightness(self, quad_half):
        # post-condition: C feasible, C/(1+tol) infeasible, checked externally
        tol = 1e-3
        res = bounds.calibrate_constant(quad_half, bounds.rademacher_log_mgf(), 8.0, tol=tol)
        lam = np.linspace(-8.0, 8.0, 257)
        fvals = bounds.rademacher_log_mgf()(lam)
        mags = np.sort(np.abs(lam))

        def feasible(c):
            star = conjugate.conjugate_values(quad_half, c * mags, points=(1 << 16) + 1)
            return bool(np.all(np.sort(fvals) <= np.sort(star) + 1e-9))

        assert feasible(res.constant)
        assert not feasible(res.constant / (1.0 + 3 * tol))

    def test_point_mass_degenerate_with_warning(self, quad_half):
        with pytest.warns(UserWarning, match="degenerate"):
            res = bounds.calibrate_constant(quad_half, bounds.point_mass_zero_log_mgf(), 8.0)
        assert res.degenerate
        assert res.constant <= 1e-6

    def test_unsatisfiable_raises(self):
        g = generators.quadratic(0.5, domain_max=2.0)
        with pytest.raises(CalibrationError, match="too light"):
            bounds.calibrate_constant(g, bounds.normal_log_mgf(3.0), 8.0)

    def test_monotone_in_range_on_nested_grids(self, quad_half):
        mgf = bounds.rademacher_log_mgf()
        c4 = bounds.calibrate_constant(quad_half, mgf, 4.0, tol=1e-4, grid_points=129)
        c8 = bounds.calibrate_constant(quad_half, mgf, 8.0, tol=1e-4, grid_points=257)
        assert c8.constant >= c4.constant * (1.0 - 2e-4)

    def test_uniform_centered_small_lambda_series(self):
        mgf = bounds.uniform_centered_log_mgf(1.0)
        # oracle: log(sinh(x)/x) via mpmath-free high-precision series at x=1e-5
        x = 1e-5
        assert mgf(x) == pytest.approx(x * x / 6.0, rel=1e-6)
        assert mgf(2.0) == pytest.approx(math.log(math.sinh(2.0) / 2.0), rel=1e-12)

    def test_empirical_log_mgf_matches_direct(self):
        rng = np.random.Generator(np.random.Philox(key=np.uint64(17)))
        x = rng.standard_normal(5000)
        mgf = bounds.empirical_log_mgf(x)
        lam = 0.7
        direct = math.log(np.mean(np.exp(lam * x)))
        assert mgf(lam) == pytest.approx(direct, rel=1e-12)

    def test_extremal_log_mgf_vs_density_quadrature(self, quad_half):
        # independent oracle: integrate cosh(y t) against the magnitude density
        # g'(t) exp(-g(t)) directly (the module integrates by parts instead)
        mgf = bounds.extremal_log_mgf(quad_half)
        ts = np.linspace(0.0, quad_half.domain_max, 400_001)
        dens = ts * np.exp(-0.5 * ts * ts)  # g'(t) e^{-g}, g = t^2/2
        for y in (0.5, 2.0, 5.0):
            vals = np.cosh(y * ts) * dens
            oracle = math.log(np.trapezoid(vals, ts))
            assert mgf(y) == pytest.approx(oracle, rel=1e-6)
        assert mgf(0.0) == 0.0

    def test_result_json_fields(self, quad_half):
        res = bounds.calibrate_constant(quad_half, bounds.normal_log_mgf(), 4.0)
        doc = json.loads(res.to_json())
        assert set(doc) == {"constant", "lambda_range", "tol", "mgf_source", "degenerate"}
        assert doc["constant"] == res.constant
        assert float(res) == res.constant


class TestExactDominanceSmoke:
    def test_rademacher_small_n(self, quad_half):
        cal = bounds.calibrate_constant(quad_half, bounds.rademacher_log_mgf(), 8.0, tol=5e-4)
        C = cal.constant
        for n in (1, 2, 5, 12):
            sn = math.sqrt(n)
            q = bounds.BoundQuery(generator=quad_half, constant=C, n=n, side="upper")
            for t in np.linspace(sn / 10, sn, 10):
                exact = (
                    sum(math.comb(n, k) for k in range(n + 1) if 2 * k - n > t * sn) / 2.0**n
                )
                assert exact <= bounds.sum_tail_bound(q, float(t)).bound + 1e-15


class TestCsvExport:
    def test_columns_and_digits(self, quad_half):
        q = bounds.BoundQuery(generator=quad_half, constant=1.0, n=4)
        text = bounds.bound_curve_csv(bounds.bound_curve(q, [0.001, 2.0, 3.0]))
        lines = text.strip().split("\n")
        assert lines[0] == "t,log_bound_raw,bound,regime"
        assert lines[1].endswith("saturated-at-one")
        assert lines[2].split(",")[3] == "quadratic"
        assert float(lines[3].split(",")[2]) == pytest.approx(
            min(1.0, 2 * math.exp(-4.5)), rel=1e-8
        )
