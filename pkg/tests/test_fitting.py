"""Model fitting: loss definition, exact recovery, invariants, uncertainty,
and drive-dependence ratios."""

import json
import math
from dataclasses import replace

import numpy as np
import pytest

from noiselab.fitting import (
    FitConfig,
    FitResult,
    fit_model,
    fit_to_dict,
    estimate_uncertainty,
    loss,
    parameter_ratios,
)
from noiselab.models import (
    MarkovianParams,
    PMMEParams,
    QubitTLSParams,
    UnsupportedModelError,
)
from noiselab.schedule import PseudoidentitySchedule
from noiselab.synth import generate_batch, records_by_theta

IDLE = PseudoidentitySchedule(theta_full=0.0, n_values=tuple(range(0, 151, 10)))
SHORT_DRIVEN = PseudoidentitySchedule(theta_full=1.2566370614359172, n_values=tuple(range(0, 61, 10)))
MARKOV = MarkovianParams(delta_omega=0.01, gamma_ad=1e-4, gamma_d=3e-4)
TLS = QubitTLSParams(delta_omega=0.002, gamma_ad=3.6e-5, gamma_d=1.9e-4, nu_zx=0.0027, kappa=0.0)
PMME = PMMEParams(delta_omega=0.002, gamma_ad=3.6e-5, gamma_d=1.9e-4, gamma_z=1.458e-5, b=-2.916e-5)


# ---------------------------------------------------------------------------
# loss

class TestLoss:
    def test_truth_parameters_give_zero_loss_on_exact_data(self):
        recs = generate_batch(TLS, IDLE, 0, 0)
        assert loss(TLS, recs) < 1e-20

    def test_single_perturbed_record_contributes_its_square(self):
        recs = generate_batch(MARKOV, IDLE, 0, 0)
        delta = 0.0125
        recs[5] = replace(recs[5], expval=recs[5].expval - delta)
        assert loss(MARKOV, recs) == pytest.approx(delta**2, rel=1e-12)

    def test_duplicate_records_rejected(self):
        recs = generate_batch(MARKOV, IDLE, 0, 0)
        with pytest.raises(ValueError):
            loss(MARKOV, recs + recs[:1])

    def test_partial_basis_coverage_rejected(self):
        recs = [r for r in generate_batch(MARKOV, IDLE, 0, 0) if not (r.n == 50 and r.basis == "Y")]
        with pytest.raises(ValueError):
            loss(MARKOV, recs)


# ---------------------------------------------------------------------------
# exact recovery (no shot noise)

class TestExactRecovery:
    def test_markovian_idle(self):
        recs = generate_batch(MARKOV, IDLE, 0, 0)
        fit = fit_model("markovian", recs, FitConfig(starts=6))
        assert fit.converged
        assert fit.loss < 1e-15
        for name in ("delta_omega", "gamma_ad", "gamma_d"):
            assert getattr(fit.params, name) == pytest.approx(getattr(MARKOV, name), abs=1e-6)

    def test_qubit_tls_idle(self):
        recs = generate_batch(TLS, IDLE, 0, 0)
        fit = fit_model("qubit_tls", recs, FitConfig(starts=6))
        assert fit.converged
        assert fit.loss < 1e-15
        for name in ("delta_omega", "gamma_ad", "gamma_d", "nu_zx"):
            assert getattr(fit.params, name) == pytest.approx(getattr(TLS, name), abs=1e-6)
        assert fit.params.kappa == 0.0  # frozen by default

    def test_pmme_idle_all_free(self):
        recs = generate_batch(PMME, IDLE, 0, 0)
        fit = fit_model("pmme", recs, FitConfig(starts=8))
        assert fit.converged
        assert fit.loss < 1e-12
        for name in ("delta_omega", "gamma_ad", "gamma_d"):
            assert getattr(fit.params, name) == pytest.approx(getattr(PMME, name), abs=1e-5)

    def test_pmme_idle_tied_kernel(self):
        recs = generate_batch(PMME, IDLE, 0, 0)
        fit = fit_model("pmme", recs, FitConfig(starts=8, tie_b=True))
        assert fit.converged
        assert fit.params.gamma_z == pytest.approx(PMME.gamma_z, rel=1e-3)
        assert fit.params.b == pytest.approx(-2.0 * fit.params.gamma_z, abs=1e-15)

    def test_joint_pair_with_shared_rates(self):
        recs = generate_batch(MARKOV, SHORT_DRIVEN, 0, 0)
        fit = fit_model("markovian", recs, FitConfig(starts=6))
        assert fit.converged
        assert fit.loss < 1e-12
        assert set(fit.params_by_theta) == {0.0, SHORT_DRIVEN.theta_full}
        p0 = fit.params_by_theta[0.0]
        pt = fit.params_by_theta[SHORT_DRIVEN.theta_full]
        # rates are shared, frequencies fitted per theta
        assert p0.gamma_ad == pt.gamma_ad
        assert p0.gamma_d == pt.gamma_d
        assert p0.delta_omega == pytest.approx(MARKOV.delta_omega, abs=1e-6)
        assert pt.delta_omega == pytest.approx(MARKOV.delta_omega, abs=1e-5)


# ---------------------------------------------------------------------------
# pipeline invariants

class TestInvariants:
    def test_refit_of_self_generated_data_is_a_fixed_point(self):
        noisy = generate_batch(TLS, IDLE, 1024, 3)
        first = fit_model("qubit_tls", noisy, FitConfig(starts=6))
        regenerated = generate_batch(first.params, IDLE, 0, 0)
        assert loss(first.params, regenerated) < 1e-20
        second = fit_model("qubit_tls", regenerated, FitConfig(starts=6))
        assert second.loss < 1e-10
        for name in ("delta_omega", "gamma_ad", "gamma_d", "nu_zx"):
            assert getattr(second.params, name) == pytest.approx(
                getattr(first.params, name), abs=1e-7
            )

    def test_rmse_matches_independent_recomputation(self):
        dense = PseudoidentitySchedule(theta_full=0.0, n_values=tuple(range(0, 31)))
        recs = generate_batch(TLS, dense, 1024, 2)
        fit = fit_model("qubit_tls", recs, FitConfig(starts=6))
        n_max = max(r.n for r in recs)
        assert fit.rmse == math.sqrt(fit.loss / (3 * (n_max + 1)))
        assert fit.n_points == 3 * (n_max + 1)

    def test_unconstrained_joint_fit_decouples(self):
        recs = generate_batch(MARKOV, SHORT_DRIVEN, 1024, 5)
        joint = fit_model("markovian", recs, FitConfig(shared=(), starts=6))
        groups = records_by_theta(recs)
        separate = sum(
            fit_model("markovian", groups[t], FitConfig(starts=6)).loss for t in groups
        )
        assert joint.loss == pytest.approx(separate, abs=1e-10)

    def test_same_config_refits_identically(self):
        recs = generate_batch(TLS, IDLE, 1024, 9)
        a = fit_model("qubit_tls", recs, FitConfig(starts=4))
        b = fit_model("qubit_tls", recs, FitConfig(starts=4))
        assert np.array_equal(a.free_values, b.free_values)
        assert a.loss == b.loss and a.nfev == b.nfev


# ---------------------------------------------------------------------------
# configuration and validation

class TestConfig:
    def test_unknown_model_rejected(self):
        recs = generate_batch(MARKOV, IDLE, 0, 0)
        with pytest.raises(ValueError, match="unknown model"):
            fit_model("lindblad", recs)

    def test_memory_kernel_rejects_driven_records(self):
        recs = generate_batch(MARKOV, SHORT_DRIVEN, 0, 0)
        with pytest.raises(UnsupportedModelError):
            fit_model("pmme", recs)

    def test_more_than_one_pair_rejected(self):
        recs = []
        for theta in (0.5, 1.0, 1.5):
            sched = replace(IDLE, theta_full=theta)
            recs.extend(r for r in generate_batch(MARKOV, sched, 0, 0) if r.theta_full == theta)
        with pytest.raises(ValueError, match="pair"):
            fit_model("markovian", recs)

    def test_freezing_unknown_parameter_rejected(self):
        recs = generate_batch(MARKOV, IDLE, 0, 0)
        with pytest.raises(ValueError, match="freeze"):
            fit_model("markovian", recs, FitConfig(frozen={"nu_zx": 0.0}))

    def test_sharing_unknown_parameter_rejected(self):
        recs = generate_batch(MARKOV, SHORT_DRIVEN, 0, 0)
        with pytest.raises(ValueError, match="shared"):
            fit_model("markovian", recs, FitConfig(shared=("nu_zx",)))

    def test_tied_kernel_only_for_memory_model(self):
        recs = generate_batch(MARKOV, IDLE, 0, 0)
        with pytest.raises(ValueError, match="tie_b"):
            fit_model("markovian", recs, FitConfig(tie_b=True))

    def test_tied_kernel_conflicts_with_freezing_it(self):
        recs = generate_batch(PMME, IDLE, 0, 0)
        with pytest.raises(ValueError, match="tie_b"):
            fit_model("pmme", recs, FitConfig(tie_b=True, frozen={"b": 0.0}))

    def test_frozen_value_is_pinned(self):
        recs = generate_batch(TLS, IDLE, 0, 0)
        fit = fit_model("qubit_tls", recs, FitConfig(starts=4, frozen={"gamma_ad": 1e-3}))
        assert fit.params.gamma_ad == 1e-3
        assert "gamma_ad" not in fit.free_names


# ---------------------------------------------------------------------------
# uncertainty

class TestUncertainty:
    def test_fit_carries_covariance_and_sigmas(self):
        recs = generate_batch(TLS, IDLE, 1024, 0)
        fit = fit_model("qubit_tls", recs, FitConfig(starts=6))
        assert fit.covariance is not None
        assert set(fit.sigmas) == set(fit.free_names)
        assert all(s > 0 for s in fit.sigmas.values())
        assert np.allclose(fit.covariance, fit.covariance.T)

    def test_recomputation_reproduces_the_attached_values(self):
        recs = generate_batch(TLS, IDLE, 1024, 0)
        fit = fit_model("qubit_tls", recs, FitConfig(starts=6))
        redone = estimate_uncertainty(replace(fit, covariance=None, sigmas=None), recs)
        for name in fit.free_names:
            assert redone.sigmas[name] == pytest.approx(fit.sigmas[name], rel=1e-9)

    def test_mismatched_configuration_rejected(self):
        recs = generate_batch(TLS, IDLE, 1024, 0)
        fit = fit_model("qubit_tls", recs, FitConfig(starts=4))
        with pytest.raises(ValueError, match="free parameters"):
            estimate_uncertainty(fit, recs, FitConfig(frozen={}))


# ---------------------------------------------------------------------------
# drive-dependence ratios

def _handmade_joint_fit(num, den, var_num, var_den, cov_nd) -> FitResult:
    cov = np.array([[var_den, cov_nd], [cov_nd, var_num]])
    return FitResult(
        model="markovian",
        params_by_theta={
            0.0: MarkovianParams(delta_omega=den, gamma_ad=0.0, gamma_d=0.0),
            2.0: MarkovianParams(delta_omega=num, gamma_ad=0.0, gamma_d=0.0),
        },
        free_names=("delta_omega@0", "delta_omega@2"),
        free_values=np.array([den, num]),
        loss=0.0,
        rmse=0.0,
        n_points=12,
        converged=True,
        nfev=1,
        covariance=cov,
        sigmas={"delta_omega@0": math.sqrt(var_den), "delta_omega@2": math.sqrt(var_num)},
    )


class TestRatios:
    def test_hand_checked_error_propagation(self):
        fit = _handmade_joint_fit(num=1.0, den=2.0, var_num=0.04, var_den=0.09, cov_nd=0.01)
        (est,) = parameter_ratios(fit)
        assert est.parameter == "delta_omega"
        assert est.theta_full == 2.0
        assert est.value == pytest.approx(0.5, abs=1e-15)
        # r^2 (sa^2/a^2 + sb^2/b^2 - 2 c/(ab)) = 0.25 (0.04 + 0.0225 - 0.01)
        assert est.sigma == pytest.approx(math.sqrt(0.013125), abs=1e-15)
        assert not est.unstable

    def test_cross_term_can_be_dropped(self):
        fit = _handmade_joint_fit(num=1.0, den=2.0, var_num=0.04, var_den=0.09, cov_nd=0.01)
        (est,) = parameter_ratios(fit, drop_cross_term=True)
        assert est.sigma == pytest.approx(0.125, abs=1e-15)

    def test_denominator_near_zero_flags_unstable(self):
        fit = _handmade_joint_fit(num=1.0, den=2.0, var_num=0.04, var_den=0.49, cov_nd=0.0)
        (est,) = parameter_ratios(fit)
        assert est.unstable

    def test_zero_denominator_returns_nan(self):
        fit = _handmade_joint_fit(num=1.0, den=0.0, var_num=0.04, var_den=0.09, cov_nd=0.0)
        (est,) = parameter_ratios(fit)
        assert math.isnan(est.value)
        assert est.unstable

    def test_single_theta_fit_rejected(self):
        recs = generate_batch(MARKOV, IDLE, 0, 0)
        fit = fit_model("markovian", recs, FitConfig(starts=4))
        with pytest.raises(ValueError, match="joint"):
            parameter_ratios(fit)

    def test_missing_covariance_rejected(self):
        fit = _handmade_joint_fit(num=1.0, den=2.0, var_num=0.04, var_den=0.09, cov_nd=0.0)
        with pytest.raises(ValueError, match="covariance"):
            parameter_ratios(replace(fit, covariance=None, sigmas=None))

    def test_exact_joint_fit_gives_unit_ratio(self):
        recs = generate_batch(MARKOV, SHORT_DRIVEN, 0, 0)
        fit = fit_model("markovian", recs, FitConfig(starts=6))
        ests = {e.parameter: e for e in parameter_ratios(fit)}
        assert ests["delta_omega"].value == pytest.approx(1.0, abs=1e-4)
        assert not ests["delta_omega"].unstable


# ---------------------------------------------------------------------------
# serialisation

class TestSerialisation:
    def test_fit_report_is_json_serialisable(self):
        recs = generate_batch(TLS, IDLE, 1024, 1)
        fit = fit_model("qubit_tls", recs, FitConfig(starts=4))
        d = fit_to_dict(fit)
        text = json.dumps(d, sort_keys=True)
        back = json.loads(text)
        assert back["model"] == "qubit_tls"
        assert back["converged"] is True
        assert set(back["sigmas"]) == set(fit.free_names)
        assert back["rmse"] == fit.rmse
        assert "0.0" in back["params_by_theta"]
