"""Shared fixtures: random parameter draws and the 50-seed recovery study.

The recovery study is the expensive shared artifact: 50 independent
1024-shot idle datasets from the same TLS ground truth, each fitted with
both the qubit-TLS and the (deliberately wrong) Markovian model.  Fit
accuracy, reported-sigma calibration, and the model-misfit RMSE gap are
all read off this one session-scoped run.
"""

import time

import numpy as np
import pytest

from noiselab.models import MarkovianParams, PMMEParams, QubitTLSParams
from noiselab.fitting import FitConfig, fit_model
from noiselab.schedule import PseudoidentitySchedule
from noiselab.synth import generate_batch

# ground truth for the shot-noise recovery study (relaxed-units analogue of
# a slow TLS on a driven transmon)
STUDY_TRUTH = QubitTLSParams(
    delta_omega=0.002, gamma_ad=3.6e-5, gamma_d=1.9e-4, nu_zx=0.0027, kappa=0.0
)
STUDY_SCHEDULE = PseudoidentitySchedule(theta_full=0.0, n_values=tuple(range(0, 151, 10)))
STUDY_SHOTS = 1024
STUDY_SEEDS = 50


def draw_markovian(rng: np.random.Generator) -> MarkovianParams:
    return MarkovianParams(
        delta_omega=rng.uniform(-0.3, 0.3),
        gamma_ad=rng.uniform(0.0, 0.05),
        gamma_d=rng.uniform(0.0, 0.05),
    )


def draw_qubit_tls(rng: np.random.Generator, with_gamma_ad: bool = True) -> QubitTLSParams:
    return QubitTLSParams(
        delta_omega=rng.uniform(-0.3, 0.3),
        gamma_ad=rng.uniform(0.0, 0.02) if with_gamma_ad else 0.0,
        gamma_d=rng.uniform(0.0, 0.02),
        nu_zx=rng.uniform(0.0, 0.2),
        kappa=rng.uniform(0.0, 0.2),
    )


def draw_pmme(rng: np.random.Generator) -> PMMEParams:
    gamma_z = rng.uniform(0.0, 0.05)
    return PMMEParams(
        delta_omega=rng.uniform(-0.3, 0.3),
        gamma_ad=rng.uniform(0.0, 0.02),
        gamma_d=rng.uniform(0.0, 0.02),
        gamma_z=gamma_z,
        # keep the implied TLS relaxation non-negative so mapping checks work
        b=rng.uniform(-2.0 * gamma_z, 0.1),
    )


@pytest.fixture(scope="session")
def recovery_study():
    """Fit both models to 50 independent noisy realisations of STUDY_TRUTH."""
    t0 = time.time()
    config = FitConfig(starts=8, seed=0)
    out = {
        "nu": [], "domega": [], "sigma_nu": [], "sigma_domega": [],
        "rmse_tls": [], "rmse_markovian": [], "converged": [],
    }
    for seed in range(STUDY_SEEDS):
        records = generate_batch(STUDY_TRUTH, STUDY_SCHEDULE, STUDY_SHOTS, seed=seed)
        fit = fit_model("qubit_tls", records, config)
        misfit = fit_model("markovian", records, config)
        out["nu"].append(fit.params.nu_zx)
        out["domega"].append(fit.params.delta_omega)
        out["sigma_nu"].append(fit.sigmas["nu_zx"])
        out["sigma_domega"].append(fit.sigmas["delta_omega"])
        out["rmse_tls"].append(fit.rmse)
        out["rmse_markovian"].append(misfit.rmse)
        out["converged"].append(fit.converged)
    result = {k: np.asarray(v) for k, v in out.items()}
    result["elapsed"] = time.time() - t0
    result["truth"] = STUDY_TRUTH
    return result
