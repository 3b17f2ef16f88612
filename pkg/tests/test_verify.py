import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import special

from ballfield.model import ConditionError, Density, WeightLaw
from ballfield.verify import (
    ExperimentPlan,
    abs_moment_estimate,
    convergence_verdicts,
    cumulant_estimates,
    empirical_cf,
    envelope_exponent,
    holder_estimate,
    moment_convergence,
    run_convergence,
    tightness_scaling,
)

from conftest import cfga


def _plan(model, **kw):
    base = dict(scenario="t", model=model, density=Density.box([0.0], [1.0]), rho_schedule=(0.5, 0.25),
                replicates=1000)
    base.update(kw)
    return ExperimentPlan(**base)


def _fbm_paths(H, n_nodes, n_paths, rng):
    t = np.linspace(0.0, 1.0, n_nodes)[1:]
    cov = 0.5 * (t[:, None] ** (2 * H) + t[None, :] ** (2 * H) - np.abs(t[:, None] - t[None, :]) ** (2 * H))
    L = np.linalg.cholesky(cov + 1e-13 * np.eye(len(t)))
    z = rng.standard_normal((n_paths, len(t)))
    return np.column_stack([np.zeros(n_paths), z @ L.T])


class TestEmpiricalCF:
    def test_gaussian_reference_inside_band(self, rng):
        x = rng.standard_normal(200_000)
        th = np.array([0.25, 0.5, 1.0, 2.0])
        points, dist, q = empirical_cf(x, th, reference=np.exp(-0.5 * th**2))
        assert dist <= q
        for p, t in zip(points, th):
            assert p.modulus_ci[0] <= math.exp(-0.5 * t * t) <= p.modulus_ci[1]
            assert p.phase_ci[0] < p.phase_ci[1]

    def test_detects_wrong_reference(self, rng):
        x = rng.standard_normal(200_000)
        th = np.array([0.5, 1.0])
        _, dist, q = empirical_cf(x, th, reference=np.exp(-0.55 * th**2))
        assert dist > q

    def test_reproducible(self, rng):
        x = rng.standard_normal(5000)
        a = empirical_cf(x, [1.0], seed=3)
        b = empirical_cf(x, [1.0], seed=3)
        assert a == b

    def test_point_estimate_is_sample_mean(self, rng):
        x = rng.standard_normal(3001)
        (p,) = empirical_cf(x, [0.7])
        assert p.value == pytest.approx(np.mean(np.exp(0.7j * x)), abs=1e-14)


class TestSampleStatistics:
    def test_gamma_cumulants(self, rng):
        # Gamma(k, 1) has cumulants k (n - 1)!
        x = rng.gamma(4.0, size=400_000)
        est, se = cumulant_estimates(x)
        truth = np.array([4.0, 8.0, 24.0])
        assert np.all(np.abs(est - truth) <= 4 * se)

    def test_abs_moment_gaussian(self, rng):
        x = rng.standard_normal(400_000)
        m, se = abs_moment_estimate(x, 1.5)
        exact = 2**0.75 * special.gamma(1.25) / math.sqrt(math.pi)
        assert abs(m - exact) <= 4 * se


class TestHolder:
    @pytest.mark.parametrize("H", [0.5, 0.75])
    def test_fbm_exponent(self, H, rng):
        paths = _fbm_paths(H, 129, 1000, rng)
        est = holder_estimate(paths, mesh=1 / 128)
        assert est.estimate == pytest.approx(H, abs=0.03)
        assert est.se < 0.03
        assert not est.degenerate

    def test_constant_paths_are_degenerate(self):
        est = holder_estimate(np.ones((5, 17)))
        assert est.degenerate
        assert math.isnan(est.estimate)

    def test_grid_size_checked(self):
        with pytest.raises(ValueError):
            holder_estimate(np.zeros((3, 10)))


class TestEnvelope:
    def test_canonical_value(self):
        # (1.5 / 2)(1 + 2 - 1.5)
        assert envelope_exponent(cfga("large"), 1.5) == pytest.approx(1.125, abs=1e-15)

    @settings(max_examples=25, deadline=None)
    @given(st.floats(1.05, 1.95), st.floats(0.1, 1.9))
    def test_linear_in_gamma(self, beta, gamma):
        m = cfga("large", beta=beta)
        assert envelope_exponent(m, gamma) == pytest.approx(gamma / 2 * (3 - beta), rel=1e-12)


class TestVerdicts:
    REPORT = {
        "ks": [0.05, 0.03, 0.01],
        "cumulants": [{}, {}, {"2": {"delta": 0.1, "se": 0.05}, "4": {"delta": -0.2, "se": 0.1}}],
        "moments": [{}, {}, {"1.5": {"delta": 0.01, "se": 0.01}}],
    }
    TOL = {"ks": 0.02, "se": 3.0}

    def test_all_pass(self):
        v = convergence_verdicts(self.REPORT, self.TOL)
        assert v == {"ks_decreasing": True, "ks_final": True, "cumulants_final": True,
                     "moments_final": True, "passed": True}

    def test_non_monotone_ks(self):
        rep = {**self.REPORT, "ks": [0.05, 0.01, 0.015]}
        v = convergence_verdicts(rep, self.TOL)
        assert not v["ks_decreasing"] and v["ks_final"] and not v["passed"]

    def test_cumulant_outside(self):
        rep = {**self.REPORT, "cumulants": [{"2": {"delta": 0.4, "se": 0.1}}]}
        v = convergence_verdicts(rep, self.TOL)
        assert not v["cumulants_final"] and not v["passed"]

    def test_tolerance_scales_band(self):
        rep = {**self.REPORT, "moments": [{"1.5": {"delta": 0.035, "se": 0.01}}]}
        assert convergence_verdicts(rep, self.TOL)["moments_final"] is False
        assert convergence_verdicts(rep, {"ks": 0.02, "se": 4.0})["moments_final"] is True


class TestPlan:
    def test_needs_decreasing_schedule(self):
        with pytest.raises(ValueError):
            _plan(cfga("large"), rho_schedule=(0.1, 0.2))
        with pytest.raises(ValueError):
            _plan(cfga("large"), rho_schedule=())

    def test_needs_enough_replicates(self):
        with pytest.raises(ValueError):
            _plan(cfga("large"), replicates=999)

    def test_defaults(self):
        plan = _plan(cfga("large"), tolerances={"ks": 0.05})
        assert plan.tolerances == {"ks": 0.05, "se": 3.0, "ci_level": 0.99}
        assert plan.family.kind == "signed-uniform"
        assert plan.regime == "large"


@pytest.fixture(scope="module")
def report():
    return run_convergence(_plan(cfga("large")))


class TestRuns:
    def test_report_shape(self, report):
        assert report.rho == [0.5, 0.25]
        assert len(report.ks) == len(report.cf_sup) == len(report.cumulants) == 2
        assert set(report.cumulants[-1]) == {"2", "3", "4"}
        assert report.limit["kind"] == "stable"

    def test_verdicts_recomputable(self, report):
        d = report.to_dict()
        assert convergence_verdicts(d, d["tolerances"]) == report.verdicts

    def test_deterministic(self, report):
        again = run_convergence(_plan(cfga("large")))
        assert again.ks == report.ks
        assert again.cumulants == report.cumulants

    def test_moment_order_checked(self):
        m = cfga("large", beta=1.2, weight=WeightLaw.stable(1.5, 1.0, 0.0, 0.0))
        with pytest.raises(ConditionError):
            moment_convergence(_plan(m), gammas=(1.6,))

    def test_tightness_validation(self):
        plan = _plan(cfga("large"), rho_schedule=(0.1,), T=4.0)
        with pytest.raises(ValueError):
            tightness_scaling(plan, 1.5, [1.0, 2.0])
        with pytest.raises(ValueError):
            tightness_scaling(plan, 1.5, [1.0, 2.0, 8.0])
        with pytest.raises(ConditionError):
            tightness_scaling(plan, 2.5, [1.0, 2.0, 4.0])
