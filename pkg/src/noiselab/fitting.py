"""Least-squares noise-model fits to pseudoidentity record sets.

The loss is the plain sum of squared differences between measured and
predicted expectation values over every (n, basis) pair, if needed summed
over a (theta_full, 0) pair of record sets with a configurable subset of
parameters shared between the two ("joint fit").  Reported alongside is

    RMSE = sqrt(L / #points) ,

whose floor for binomially sampled data sits at the per-record shot noise
2 sqrt(p(1-p)/shots) ~ 1/sqrt(shots).

Minimisation is multi-start Nelder-Mead over scaled parameters.  Start 0
seeds frequencies from damped-phasor extraction of <sx> + i<sy> (idle
precession advances the phase by 2 delta_omega per gate unit; a TLS splits
it into 2(delta_omega +/- nu_zx)) and decay rates from the envelope; the
remaining starts jitter those seeds.  Uncertainties follow from the central
finite-difference Jacobian of the residual vector,
C = (J^T J)^{-1} L/(N-p).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .analysis import extract_phasors, shot_noise_rmse
from .models import (
    MODEL_TAGS,
    MarkovianParams,
    NoiseParams,
    PMMEParams,
    QubitTLSParams,
    UnsupportedModelError,
    markovian_idle_bloch,
    params_to_dict,
    pmme_idle_bloch,
    qubit_tls_idle_bloch,
)
from .optim import central_jacobian, covariance_from_jacobian, minimize_multistart
from .pauli import PauliVector, PowerEngine
from .schedule import PseudoidentitySchedule, schedule_superoperator
from .synth import ExperimentRecord

PARAM_NAMES: dict[str, tuple[str, ...]] = {
    "markovian": ("delta_omega", "gamma_ad", "gamma_d"),
    "qubit_tls": ("delta_omega", "gamma_ad", "gamma_d", "nu_zx", "kappa"),
    "pmme": ("delta_omega", "gamma_ad", "gamma_d", "gamma_z", "b"),
}

# lower bounds; everything else is unbounded
_NONNEGATIVE = ("gamma_ad", "gamma_d", "nu_zx", "kappa", "gamma_z")

# per-parameter magnitude floors for optimizer scaling
_SCALE_FLOOR = {
    "delta_omega": 1e-3,
    "gamma_ad": 1e-4,
    "gamma_d": 1e-4,
    "nu_zx": 1e-3,
    "kappa": 1e-3,
    "gamma_z": 1e-5,
    "b": 1e-3,
}

_DEFAULT_FROZEN = {
    "markovian": {},
    # kappa and nu_zx are barely distinguishable at realistic drifts; fits
    # freeze the TLS relaxation unless explicitly released
    "qubit_tls": {"kappa": 0.0},
    "pmme": {},
}


@dataclass(frozen=True)
class FitConfig:
    """Knobs of fit_model.

    shared: parameters with a single value across the (theta, 0) pair in a
        joint fit (ignored for single-theta fits).
    frozen: parameters pinned to fixed values; None selects the model default
        (qubit_tls pins kappa = 0).  Pass {} to free everything.
    tie_b: for pmme, eliminate b via b = -2 gamma_z (zero-effective-rate
        constraint that cures the gamma_z/b degeneracy).
    m: half-length of the pseudoidentity the records came from.
    """

    shared: tuple[str, ...] = ("gamma_ad", "gamma_d")
    frozen: Mapping[str, float] | None = None
    tie_b: bool = False
    starts: int = 16
    seed: int = 0
    m: int = 4
    maxfev: int = 1600
    drop_ratio_cross_term: bool = False


@dataclass
class FitResult:
    model: str
    params_by_theta: dict[float, NoiseParams]
    free_names: tuple[str, ...]
    free_values: np.ndarray
    loss: float
    rmse: float
    n_points: int
    converged: bool
    nfev: int
    covariance: np.ndarray | None = None
    sigmas: dict[str, float] | None = None
    degenerate: bool = False

    @property
    def params(self) -> NoiseParams:
        if len(self.params_by_theta) != 1:
            raise ValueError("joint fit: use params_by_theta")
        return next(iter(self.params_by_theta.values()))


@dataclass(frozen=True)
class RatioEstimate:
    """x(theta)/x(0) for one per-theta parameter, with propagated sigma."""

    parameter: str
    theta_full: float
    value: float
    sigma: float
    unstable: bool


# ---------------------------------------------------------------------------
# record blocks

@dataclass
class _ThetaBlock:
    theta: float
    ns: np.ndarray
    bases: tuple[str, ...]
    data: np.ndarray  # (len(ns), len(bases))
    schedule: PseudoidentitySchedule
    shots: int


def _build_blocks(records: Sequence[ExperimentRecord], m: int) -> list[_ThetaBlock]:
    if not records:
        raise ValueError("no records to fit")
    groups: dict[float, dict[int, dict[str, float]]] = {}
    shots: dict[float, list[int]] = {}
    for r in records:
        slot = groups.setdefault(r.theta_full, {}).setdefault(r.n, {})
        if r.basis in slot:
            raise ValueError(f"duplicate record theta={r.theta_full} n={r.n} basis={r.basis}")
        slot[r.basis] = r.expval
        shots.setdefault(r.theta_full, []).append(r.shots)
    blocks = []
    for theta in sorted(groups):
        table = groups[theta]
        ns = np.array(sorted(table), dtype=int)
        bases = tuple(sorted(table[int(ns[0])], key="XYZ".index))
        for n in ns:
            if tuple(sorted(table[int(n)], key="XYZ".index)) != bases:
                raise ValueError(f"inconsistent basis coverage at theta={theta}, n={n}")
        data = np.array([[table[int(n)][b] for b in bases] for n in ns])
        sched = PseudoidentitySchedule(theta_full=theta, n_values=tuple(int(v) for v in ns), m=m, bases=bases)
        positive = [s for s in shots[theta] if s > 0]
        blocks.append(
            _ThetaBlock(
                theta=theta, ns=ns, bases=bases, data=data, schedule=sched,
                shots=int(np.median(positive)) if positive else 0,
            )
        )
    return blocks


_AXIS = {"X": 0, "Y": 1, "Z": 2}


def _predict_block(params: NoiseParams, block: _ThetaBlock) -> np.ndarray:
    cols = [_AXIS[b] for b in block.bases]
    if isinstance(params, PMMEParams):
        if block.theta != 0.0:
            raise UnsupportedModelError(
                "memory-kernel parameters only predict idle (theta_full = 0) records"
            )
        bloch = pmme_idle_bloch(params, block.ns * block.schedule.duration)
        return bloch[:, cols]
    if block.theta == 0.0:
        # idle pseudoidentities reduce to free evolution; skip the engine
        t = block.ns * block.schedule.duration
        if isinstance(params, QubitTLSParams):
            return qubit_tls_idle_bloch(params, t)[:, cols]
        if isinstance(params, MarkovianParams):
            return markovian_idle_bloch(params, t)[:, cols]
    sup = schedule_superoperator(params, block.schedule)
    engine = PowerEngine(sup.matrix)
    if sup.q == 2:
        states = engine.states(block.ns, PauliVector.plus_tls_ground().coeffs)
        bloch = states[:, [4, 8, 12]]
    else:
        states = engine.states(block.ns, PauliVector.plus().coeffs)
        bloch = states[:, 1:4]
    return bloch[:, cols]


def loss(params: NoiseParams, records: Sequence[ExperimentRecord], m: int = 4) -> float:
    """Sum of squared residuals over all (n, basis) pairs of one theta set."""
    blocks = _build_blocks(records, m)
    if len(blocks) != 1:
        raise ValueError("loss expects records for a single theta_full; fit_model handles pairs")
    resid = blocks[0].data - _predict_block(params, blocks[0])
    return float(np.sum(resid * resid))


# ---------------------------------------------------------------------------
# free-parameter layout

@dataclass
class _Layout:
    model: str
    thetas: tuple[float, ...]
    frozen: dict[str, float]
    shared: tuple[str, ...]
    per_theta: tuple[str, ...]
    tie_b: bool
    names: tuple[str, ...] = field(init=False)

    def __post_init__(self):
        slots = list(self.shared)
        for theta in self.thetas:
            for name in self.per_theta:
                slots.append(self.slot(name, theta))
        self.names = tuple(slots)

    def slot(self, name: str, theta: float) -> str:
        if len(self.thetas) == 1:
            return name
        return f"{name}@{theta:.6g}"

    def bounds_and_scale(self, seeds: Mapping[str, float]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        base = [n if "@" not in n else n.split("@")[0] for n in self.names]
        lower = np.array([0.0 if n in _NONNEGATIVE else -np.inf for n in base])
        upper = np.full(len(base), np.inf)
        scale = np.array([max(abs(seeds.get(n, 0.0)), _SCALE_FLOOR[n]) for n in base])
        return lower, upper, scale

    def vector(self, values: Mapping[str, float]) -> np.ndarray:
        """Per-base-name values -> full slot vector."""
        out = np.empty(len(self.names))
        for i, slot in enumerate(self.names):
            base = slot.split("@")[0]
            out[i] = values[base]
        return out

    def build(self, x: np.ndarray) -> dict[float, NoiseParams]:
        cls = MODEL_TAGS[self.model]
        by_slot = dict(zip(self.names, x))
        out = {}
        for theta in self.thetas:
            kwargs = dict(self.frozen)
            for name in self.shared:
                kwargs[name] = by_slot[name]
            for name in self.per_theta:
                kwargs[name] = by_slot[self.slot(name, theta)]
            if self.tie_b:
                kwargs["b"] = -2.0 * kwargs["gamma_z"]
            # finite-difference probes may push a rate epsilon below zero
            for name in _NONNEGATIVE:
                if name in kwargs:
                    kwargs[name] = max(0.0, kwargs[name])
            out[theta] = cls(**kwargs)
        return out


def _make_layout(model: str, thetas: Sequence[float], config: FitConfig) -> _Layout:
    names = PARAM_NAMES[model]
    frozen_src = _DEFAULT_FROZEN[model] if config.frozen is None else config.frozen
    frozen = {k: float(v) for k, v in frozen_src.items()}
    for key in frozen:
        if key not in names:
            raise ValueError(f"cannot freeze {key!r}: not a {model} parameter")
    tie_b = bool(config.tie_b)
    if tie_b and model != "pmme":
        raise ValueError("tie_b only applies to pmme fits")
    if tie_b and ("b" in frozen or "gamma_z" in frozen):
        raise ValueError("tie_b conflicts with freezing b or gamma_z")
    free = [n for n in names if n not in frozen and not (tie_b and n == "b")]
    if len(thetas) > 1:
        shared = tuple(n for n in free if n in config.shared)
        bad = set(config.shared) - set(names)
        if bad:
            raise ValueError(f"shared parameters {sorted(bad)} are not {model} parameters")
    else:
        shared = ()
    per_theta = tuple(n for n in free if n not in shared)
    return _Layout(
        model=model, thetas=tuple(thetas), frozen=frozen, shared=shared,
        per_theta=per_theta, tie_b=tie_b,
    )


# ---------------------------------------------------------------------------
# seeding

def _phasor_seeds(block: _ThetaBlock, m: int) -> dict[str, float]:
    """Frequency/decay seeds from the idle complex series, if extractable."""
    out: dict[str, float] = {}
    if "X" not in block.bases or "Y" not in block.bases or block.ns.shape[0] < 4:
        return out
    steps = np.diff(block.ns)
    if not np.all(steps == steps[0]):
        return out
    per_sample = 2.0 * m * float(steps[0])  # gate units per sample
    z = block.data[:, block.bases.index("X")] + 1j * block.data[:, block.bases.index("Y")]
    n = z.shape[0]
    floor = shot_noise_rmse(block.shots) / math.sqrt(n) if block.shots > 0 else 1e-8
    comps, _ = extract_phasors(z, max(5.0 * floor, 1e-8), max_components=3)
    if not comps:
        return out
    comps = sorted(comps, key=lambda c: -abs(c.amplitude))[:2]
    omegas = sorted(c.omega / per_sample for c in comps)
    if len(omegas) == 2:
        out["delta_omega"] = (omegas[1] + omegas[0]) / 4.0
        out["nu_zx"] = max((omegas[1] - omegas[0]) / 4.0, 1e-6)
    else:
        out["delta_omega"] = omegas[0] / 2.0
        span = per_sample * n
        out["nu_zx"] = max(math.pi / (4.0 * span), 1e-6)
    main = max(comps, key=lambda c: abs(c.amplitude))
    gamma_total = 0.5 * main.decay / per_sample  # envelope ~ exp(-2 gamma_eff t)
    out["gamma_d"] = max(gamma_total, 1e-7)
    return out


def _ad_seed(block: _ThetaBlock) -> float:
    if "Z" not in block.bases or block.ns.shape[0] < 3:
        return 1e-6
    w = 1.0 - block.data[:, block.bases.index("Z")]
    t = block.ns * block.schedule.duration
    mask = w > 5e-3
    if mask.sum() < 3 or np.ptp(t[mask]) == 0:
        return 1e-6
    slope = np.polyfit(t[mask], np.log(w[mask]), 1)[0]
    return max(-slope, 1e-7)


def _base_seeds(model: str, blocks: list[_ThetaBlock], config: FitConfig) -> dict[str, float]:
    seeds = {name: 0.0 for name in PARAM_NAMES[model]}
    seeds.update({"gamma_ad": 1e-6, "gamma_d": 1e-5})
    if model == "qubit_tls":
        seeds["nu_zx"] = 1e-3
    if model == "pmme":
        seeds["gamma_z"] = 1e-6
    idle = [b for b in blocks if b.theta == 0.0]
    src = idle[0] if idle else blocks[0]
    seeds.update(_phasor_seeds(src, config.m))
    seeds["gamma_ad"] = _ad_seed(src)
    if model == "pmme":
        nu = seeds.pop("nu_zx", 1e-3)
        seeds["gamma_z"] = max(2.0 * nu * nu, 1e-8)
        seeds["b"] = -2.0 * seeds["gamma_z"]
    if model == "markovian":
        seeds.pop("nu_zx", None)
    return {k: v for k, v in seeds.items() if k in PARAM_NAMES[model]}


def _jitter(seeds: dict[str, float], rng: np.random.Generator) -> dict[str, float]:
    out = dict(seeds)
    for name in out:
        if name in ("delta_omega", "nu_zx"):
            out[name] = out[name] * (1.0 + 0.5 * rng.standard_normal()) + 1e-4 * rng.standard_normal()
        elif name == "b":
            out[name] = out[name] * (1.0 + 0.5 * rng.standard_normal()) + 1e-3 * rng.standard_normal()
        else:
            out[name] = out[name] * math.exp(rng.standard_normal() * math.log(3.0))
    if "delta_omega" in out and "nu_zx" in out and rng.uniform() < 0.25:
        out["delta_omega"], out["nu_zx"] = out["nu_zx"], abs(out["delta_omega"])
    return out


# ---------------------------------------------------------------------------
# fitting

def fit_model(
    model: str,
    records: Sequence[ExperimentRecord],
    config: FitConfig | None = None,
) -> FitResult:
    """Fit one noise model to records of a single theta or a (theta, 0) pair.

    Joint fits share config.shared parameters across the pair.  Memory-kernel
    (pmme) fits accept idle records only.  A fit that never converges within
    the evaluation budget comes back flagged (converged=False), not raised.
    """
    if model not in PARAM_NAMES:
        raise ValueError(f"unknown model {model!r}; expected one of {sorted(PARAM_NAMES)}")
    config = config or FitConfig()
    blocks = _build_blocks(records, config.m)
    thetas = [b.theta for b in blocks]
    if model == "pmme" and any(t != 0.0 for t in thetas):
        raise UnsupportedModelError(
            "memory-kernel parameters only predict idle records; fit theta_full = 0 data"
        )
    if len(blocks) > 2:
        raise ValueError(f"fit one (theta, 0) pair at a time, got thetas {thetas}")
    layout = _make_layout(model, thetas, config)

    def lossfun(x: np.ndarray) -> float:
        params = layout.build(x)
        total = 0.0
        for block in blocks:
            resid = block.data - _predict_block(params[block.theta], block)
            total += float(np.sum(resid * resid))
        return total

    base = _base_seeds(model, blocks, config)
    starts = [layout.vector(base)]
    for s in range(1, max(config.starts, 1)):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=config.seed, spawn_key=(s,)))
        starts.append(layout.vector(_jitter(base, rng)))
    lower, upper, scale = layout.bounds_and_scale(base)
    best = minimize_multistart(lossfun, starts, lower, upper, scale, maxfev=config.maxfev)

    n_points = sum(b.data.size for b in blocks)
    result = FitResult(
        model=model,
        params_by_theta=layout.build(best.x),
        free_names=layout.names,
        free_values=best.x,
        loss=best.fun,
        rmse=math.sqrt(best.fun / n_points),
        n_points=n_points,
        converged=bool(best.success),
        nfev=best.nfev,
    )

    def residfun(x: np.ndarray) -> np.ndarray:
        params = layout.build(x)
        return np.concatenate(
            [(block.data - _predict_block(params[block.theta], block)).ravel() for block in blocks]
        )

    jac = central_jacobian(residfun, best.x)
    cov, sigma, degenerate = covariance_from_jacobian(jac, best.fun, n_points)
    result.covariance = cov
    result.sigmas = dict(zip(layout.names, sigma))
    result.degenerate = bool(degenerate)
    return result


def estimate_uncertainty(
    fit: FitResult, records: Sequence[ExperimentRecord], config: FitConfig | None = None
) -> FitResult:
    """Recompute covariance and sigmas of an existing fit at its optimum.

    The residual Jacobian is evaluated by central differences with step
    max(1e-6, 1e-4 |x_i|); rates are clamped at zero during probing, so a
    sigma at an active bound is effectively one-sided.
    """
    config = config or FitConfig()
    blocks = _build_blocks(records, config.m)
    layout = _make_layout(fit.model, [b.theta for b in blocks], config)
    if layout.names != fit.free_names:
        raise ValueError(
            f"records/config imply free parameters {layout.names}, fit has {fit.free_names}"
        )

    def residfun(x: np.ndarray) -> np.ndarray:
        params = layout.build(x)
        return np.concatenate(
            [(block.data - _predict_block(params[block.theta], block)).ravel() for block in blocks]
        )

    jac = central_jacobian(residfun, fit.free_values)
    cov, sigma, degenerate = covariance_from_jacobian(jac, fit.loss, fit.n_points)
    return replace(
        fit,
        covariance=cov,
        sigmas=dict(zip(fit.free_names, sigma)),
        degenerate=bool(degenerate),
    )


def parameter_ratios(fit: FitResult, drop_cross_term: bool = False) -> list[RatioEstimate]:
    """Drive dependence x(theta)/x(0) of every per-theta free parameter.

    First-order error propagation including the fitted covariance between
    numerator and denominator (dropped on request); a denominator within
    3 sigma of zero flags the ratio as unstable.
    """
    thetas = sorted(fit.params_by_theta)
    if len(thetas) != 2 or 0.0 not in thetas:
        raise ValueError("ratios need a joint (theta, 0) fit")
    if fit.covariance is None or fit.sigmas is None:
        raise ValueError("fit carries no covariance; run estimate_uncertainty first")
    theta = [t for t in thetas if t != 0.0][0]
    index = {name: i for i, name in enumerate(fit.free_names)}
    out = []
    seen = []
    for name in fit.free_names:
        base = name.split("@")[0]
        if "@" not in name or base in seen:
            continue
        seen.append(base)
        slot_num = f"{base}@{theta:.6g}"
        slot_den = f"{base}@{0.0:.6g}"
        if slot_num not in index or slot_den not in index:
            continue
        i, j = index[slot_num], index[slot_den]
        a, b = fit.free_values[i], fit.free_values[j]
        sa2, sb2 = fit.covariance[i, i], fit.covariance[j, j]
        cab = 0.0 if drop_cross_term else fit.covariance[i, j]
        unstable = bool(abs(b) < 3.0 * math.sqrt(max(sb2, 0.0)))
        if b == 0.0:
            out.append(RatioEstimate(base, theta, float("nan"), float("inf"), True))
            continue
        r = a / b
        var = r * r * (sa2 / (a * a if a != 0 else np.inf) + sb2 / (b * b) - 2.0 * cab / (a * b if a != 0 else np.inf))
        out.append(RatioEstimate(base, theta, float(r), math.sqrt(max(var, 0.0)), unstable))
    return out


# ---------------------------------------------------------------------------
# serialisation

def fit_to_dict(fit: FitResult) -> dict:
    out = {
        "model": fit.model,
        "params_by_theta": {repr(t): params_to_dict(p) for t, p in fit.params_by_theta.items()},
        "free_names": list(fit.free_names),
        "free_values": [float(v) for v in fit.free_values],
        "loss": fit.loss,
        "rmse": fit.rmse,
        "n_points": fit.n_points,
        "converged": bool(fit.converged),
        "nfev": fit.nfev,
        "degenerate": bool(fit.degenerate),
    }
    if fit.sigmas is not None:
        out["sigmas"] = {k: float(v) for k, v in fit.sigmas.items()}
    if fit.covariance is not None:
        out["covariance"] = [[float(v) for v in row] for row in fit.covariance]
    return out
