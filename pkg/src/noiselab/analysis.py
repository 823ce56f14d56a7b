"""Model-free signatures of non-Markovianity and campaign-level statistics.

Three detectors run on a single-theta record set:

1. Purity oscillation.  From |+> a Markovian channel decays the purity
   monotonically, while coherent exchange with a memory (TLS) makes it
   oscillate.  We fit

       p(n) = (1 + cos^2(2 pi f_p n T) e^{-gamma_p n T}) / 2 ,   T = 2 m,

   and report a profile-likelihood z-score for f_p > 0 (the covariance
   z-score is ill-defined at the f_p = 0 boundary where dp/df vanishes),
   calibrated for the frequency scan so purely decaying data stays below 3.

2. Dominant-frequency count of z_n = <sx> + i <sy>.  Markovian evolution
   contributes a single damped phasor (a +/- theta pair under drive, which
   counts once); a coherent TLS splits it in two.  Peaks are found on the
   periodogram, refined by variable-projection fits of damped phasors, and
   subtracted one at a time so window leakage of an off-bin tone is not
   miscounted.  A component counts when its periodogram peak exceeds
   5 x the shot-noise floor 2 sqrt(p(1-p)/shots) / sqrt(N).

3. Residual of the single-frequency form g0 + g1 r^n cos(n th + g2) + g3 d^n,
   which any time-independent Markovian map must satisfy exactly; a fit
   residual far above shot noise plus a multi-peak spectrum flags memory.

Campaign statistics aggregate per-day ratio estimates r_i +/- s_i with
inverse-variance weights and split the spread into the fit-error part
sigma_fit = (sum 1/s_i^2)^{-1/2} and the excess-scatter part
sigma_disp = sqrt(sum w_i (r_i - rbar)^2 / sum w_i).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.special import erfcinv

from .optim import central_jacobian, covariance_from_jacobian, minimize_multistart
from .synth import ExperimentRecord

_SIGMA_FLOOR = 1e-12


# ---------------------------------------------------------------------------
# record wrangling

def _single_theta(records: Sequence[ExperimentRecord]) -> float:
    thetas = {r.theta_full for r in records}
    if len(thetas) != 1:
        raise ValueError(f"expected records for a single theta_full, got {sorted(thetas)}")
    return thetas.pop()


def bloch_series(records: Sequence[ExperimentRecord]) -> tuple[np.ndarray, np.ndarray]:
    """(ns, values[len(ns), 3]) requiring X, Y, Z at every n, no duplicates."""
    _single_theta(records)
    table: dict[int, dict[str, float]] = {}
    for r in records:
        slot = table.setdefault(r.n, {})
        if r.basis in slot:
            raise ValueError(f"duplicate record for n={r.n} basis={r.basis}")
        slot[r.basis] = r.expval
    ns = np.array(sorted(table), dtype=int)
    out = np.empty((ns.shape[0], 3))
    for i, n in enumerate(ns):
        slot = table[int(n)]
        missing = {"X", "Y", "Z"} - set(slot)
        if missing:
            raise ValueError(f"n={n} is missing bases {sorted(missing)}")
        out[i] = (slot["X"], slot["Y"], slot["Z"])
    return ns, out


def purity_series(records: Sequence[ExperimentRecord]) -> tuple[np.ndarray, np.ndarray]:
    """Per-n purity estimate (1 + cx^2 + cy^2 + cz^2)/2 from all three bases."""
    ns, bloch = bloch_series(records)
    return ns, 0.5 * (1.0 + np.sum(bloch * bloch, axis=1))


def shot_noise_rmse(shots: int) -> float:
    """Expected per-record sampling std at p = 1/2: 2 sqrt(p(1-p)/shots)."""
    if shots < 0:
        raise ValueError("shots must be non-negative")
    if shots == 0:
        return 0.0
    return 1.0 / math.sqrt(shots)


def _records_shots(records: Sequence[ExperimentRecord]) -> int:
    values = sorted({r.shots for r in records})
    if len(values) == 1:
        return values[0]
    positive = [v for v in values if v > 0]
    return int(np.median(positive)) if positive else 0


# ---------------------------------------------------------------------------
# spline interpolation (plot support; fits always use the raw knots)

def interpolate_spline(records: Sequence[ExperimentRecord]) -> Callable[[np.ndarray], np.ndarray]:
    """Natural cubic spline through one basis' expectation values vs n."""
    _single_theta(records)
    bases = {r.basis for r in records}
    if len(bases) != 1:
        raise ValueError(f"expected records for a single basis, got {sorted(bases)}")
    pairs = sorted((r.n, r.expval) for r in records)
    ns = [p[0] for p in pairs]
    if len(ns) != len(set(ns)):
        raise ValueError("duplicate n values")
    if len(ns) < 4:
        raise ValueError(f"need at least 4 points for a cubic spline, got {len(ns)}")
    return CubicSpline(ns, [p[1] for p in pairs], bc_type="natural")


# ---------------------------------------------------------------------------
# purity oscillation fit

@dataclass(frozen=True)
class PurityFit:
    """Purity oscillation frequency f_p (cycles per gate unit) and decay
    gamma_p, with residual RMSE, covariance sigma of f_p, and a profile
    z-score for f_p > 0."""

    f_p: float
    gamma_p: float
    residual: float
    sigma_f: float
    significance: float
    loss: float
    n_points: int
    degenerate: bool


def _purity_model(ns: np.ndarray, period: float, f: float, g: float) -> np.ndarray:
    t = ns * period
    return 0.5 * (1.0 + np.cos(2.0 * math.pi * f * t) ** 2 * np.exp(-g * t))


def _scan_z(q: float, n_freqs: int) -> float:
    """One-sided z-score for the oscillation likelihood-ratio statistic q.

    At a fixed candidate frequency the ratio is treated as chi^2 with two
    degrees of freedom (a slow oscillation trades off against the decay
    curvature, so pinning f removes more than one effective direction), and
    the search over ~n_freqs independent frequency bins is absorbed with a
    Sidak correction before converting the tail probability back to a
    Gaussian z-score.  Without these two corrections a plain sqrt(q) flags
    a few percent of purely decaying datasets above 3.
    """
    if q <= 0.0:
        return 0.0
    log_p1 = -0.5 * q  # chi^2_2 survival function
    if log_p1 < -690.0:  # survival underflows; scan correction is negligible
        return math.sqrt(q)
    p1 = math.exp(log_p1)
    p = -math.expm1(n_freqs * math.log1p(-p1)) if p1 < 1.0 else 1.0
    if p >= 1.0:
        return 0.0
    return float(max(0.0, math.sqrt(2.0) * erfcinv(2.0 * p)))


def fit_purity(records: Sequence[ExperimentRecord], m: int = 4) -> PurityFit:
    """Least-squares fit of the purity oscillation model on the raw n grid."""
    ns, p_obs = purity_series(records)
    if ns.shape[0] < 3:
        raise ValueError("need at least 3 n values to fit the purity model")
    period = 2.0 * m
    dn = np.diff(ns).min() if ns.shape[0] > 1 else 1
    f_max = 1.0 / (4.0 * period * dn)  # cos^2 doubles the frequency

    def residuals(x: np.ndarray) -> np.ndarray:
        return p_obs - _purity_model(ns, period, x[0], x[1])

    def lossfun(x: np.ndarray) -> float:
        r = residuals(x)
        return float(r @ r)

    # seed f from the dominant discrete frequency of 2p-1
    w = 2.0 * p_obs - 1.0
    spec = np.abs(np.fft.rfft(w - w.mean()))
    k = int(np.argmax(spec[1:]) + 1) if spec.shape[0] > 1 else 0
    span = (ns[-1] - ns[0]) * period
    f_seed = 0.5 * k / max(span, 1e-12)  # cos^2 oscillates at 2 f_p
    g_seed = 1.0 / max(span, 1e-12)
    starts = [
        np.array([f, g])
        for f in (f_seed, 0.5 * f_seed, 2.0 * f_seed, 0.25 * f_max, 0.0)
        for g in (0.0, g_seed, 5.0 * g_seed)
    ]
    scale = np.array([max(f_max / 4.0, 1e-6), max(g_seed, 1e-6)])
    best = minimize_multistart(
        lossfun, starts, np.array([0.0, 0.0]), np.array([f_max, np.inf]), scale, maxfev=800
    )

    # profile z-score: refit with f pinned at 0 (pure decay), compare losses
    def loss_f0(g: float) -> float:
        return lossfun(np.array([0.0, g]))

    g_starts = [np.array([g]) for g in (0.0, g_seed, 5.0 * g_seed, best.x[1])]
    null = minimize_multistart(
        lambda x: loss_f0(x[0]), g_starts, np.array([0.0]), np.array([np.inf]),
        np.array([max(g_seed, 1e-6)]), maxfev=400,
    )

    n_points = ns.shape[0]
    cov, sigma, degenerate = covariance_from_jacobian(
        central_jacobian(residuals, best.x), best.fun, n_points
    )
    s2 = max(best.fun / max(n_points - 2, 1), 1e-24)
    q = max(null.fun - best.fun, 0.0) / s2
    significance = _scan_z(q, max((n_points - 1) // 2, 1))
    return PurityFit(
        f_p=float(best.x[0]),
        gamma_p=float(best.x[1]),
        residual=math.sqrt(best.fun / n_points),
        sigma_f=float(sigma[0]),
        significance=float(significance),
        loss=float(best.fun),
        n_points=n_points,
        degenerate=degenerate,
    )


# ---------------------------------------------------------------------------
# damped-phasor extraction

@dataclass(frozen=True)
class Phasor:
    """One damped complex exponential a * exp[(i omega - decay) k] over the
    sample index k, with the periodogram peak height that triggered it."""

    omega: float
    decay: float
    amplitude: complex
    peak: float


def _phasor_basis(n_samples: int, omega: float, decay: float) -> np.ndarray:
    k = np.arange(n_samples)
    return np.exp((1j * omega - decay) * k)


def _project(z: np.ndarray, omega: float, decay: float) -> tuple[complex, float]:
    """Best amplitude and the resulting residual norm^2 (variable projection)."""
    b = _phasor_basis(z.shape[0], omega, decay)
    bb = float(np.real(np.vdot(b, b)))
    if bb < 1e-300:
        return 0.0 + 0.0j, float(np.real(np.vdot(z, z)))
    amp = np.vdot(b, z) / bb
    resid = z - amp * b
    return complex(amp), float(np.real(np.vdot(resid, resid)))


def _wrap(omega: float) -> float:
    if omega > math.pi:
        return omega - 2.0 * math.pi
    if omega <= -math.pi:
        return omega + 2.0 * math.pi
    return omega


def _fit_one_phasor(resid: np.ndarray, w0: float) -> Phasor:
    """Refine (omega, decay) near w0 on the variable-projection residual."""
    n = resid.shape[0]
    bin_w = 2.0 * math.pi / n

    def vp_loss(x: np.ndarray) -> float:
        return _project(resid, x[0], x[1])[1]

    starts = [
        np.array([w0 + dw, g])
        for dw in (0.0, -0.4 * bin_w, 0.4 * bin_w)
        for g in (0.0, 1.0 / n)
    ]
    best = minimize_multistart(
        vp_loss, starts,
        np.array([w0 - 1.5 * bin_w, 0.0]), np.array([w0 + 1.5 * bin_w, np.inf]),
        np.array([bin_w, max(1.0 / n, 1e-6)]), maxfev=600,
    )
    omega, decay = float(best.x[0]), float(best.x[1])
    amp, _ = _project(resid, omega, decay)
    peak = float(np.abs(np.fft.fft(amp * _phasor_basis(n, omega, decay))).max() / n)
    return Phasor(omega=_wrap(omega), decay=decay, amplitude=amp, peak=peak)


def extract_phasors(
    z: np.ndarray,
    threshold: float,
    max_components: int = 4,
    refine_passes: int = 6,
) -> tuple[list[Phasor], np.ndarray]:
    """Fit and subtract damped phasors from a complex series.

    Model order grows one component at a time: seed a new phasor at the
    residual's periodogram argmax, then cyclically refit every component
    against the series with the *others* removed until the residual stops
    improving.  Growth stops when the residual's top periodogram peak falls
    below `threshold`, so an off-bin tone is absorbed by refinement instead
    of being miscounted via its leakage.  Returns the components and the
    final residual.
    """
    z = np.asarray(z, dtype=complex)
    n = z.shape[0]
    comps: list[Phasor] = []

    def reconstruct(skip: int | None = None) -> np.ndarray:
        out = np.zeros(n, dtype=complex)
        for i, c in enumerate(comps):
            if i != skip:
                out += c.amplitude * _phasor_basis(n, c.omega, c.decay)
        return out

    for _ in range(max_components):
        resid = z - reconstruct()
        spec = np.abs(np.fft.fft(resid)) / n
        k = int(np.argmax(spec))
        if float(spec[k]) < threshold:
            break
        comps.append(_fit_one_phasor(resid, 2.0 * math.pi * k / n))
        if len(comps) > 1:
            prev = np.inf
            for _ in range(refine_passes):
                for i in range(len(comps)):
                    comps[i] = _fit_one_phasor(z - reconstruct(skip=i), comps[i].omega)
                norm = float(np.linalg.norm(z - reconstruct()))
                if norm > 0.999 * prev:
                    break
                prev = norm
    comps = [c for c in comps if c.peak >= threshold]
    return comps, z - reconstruct()


def count_frequencies(
    z: np.ndarray, shots: int, threshold_mult: float = 5.0
) -> tuple[int, list[float]]:
    """Number of distinct oscillation frequencies |omega| in a complex series.

    Components below half a frequency bin (pure decays, offsets) do not
    count; +/-omega pairs and components closer than one bin merge.  With
    shots = 0 an absolute floor of 1e-8 stands in for the shot noise.
    """
    z = np.asarray(z, dtype=complex)
    n = z.shape[0]
    if n < 2:
        return 0, []
    floor = shot_noise_rmse(shots) / math.sqrt(n) if shots > 0 else 1e-8
    comps, _ = extract_phasors(z, threshold_mult * floor)
    omega_min = math.pi / n
    bin_w = 2.0 * math.pi / n
    freqs = sorted(abs(c.omega) for c in comps if abs(c.omega) >= omega_min)
    clusters: list[float] = []
    for f in freqs:
        if clusters and f - clusters[-1] < bin_w:
            continue
        clusters.append(f)
    return len(clusters), clusters


# ---------------------------------------------------------------------------
# single-frequency (Markovian-form) fit

def _single_frequency_model(x: np.ndarray, ns: np.ndarray) -> np.ndarray:
    g0, g1, r, th, g2, g3, d = x
    return g0 + g1 * r**ns * np.cos(ns * th + g2) + g3 * d**ns


def fit_single_frequency(values: np.ndarray, seeds: Sequence[Phasor] = ()) -> tuple[np.ndarray, float]:
    """Fit g0 + g1 r^n cos(n th + g2) + g3 d^n to a real series (n = 0, 1, ...).

    Returns (params, loss).  Used for the Markovian-form residual: any
    time-independent Markovian map produces series of exactly this shape.
    """
    values = np.asarray(values, dtype=float)
    ns = np.arange(values.shape[0], dtype=float)

    def lossfun(x: np.ndarray) -> float:
        r = values - _single_frequency_model(x, ns)
        return float(r @ r)

    amp = float(np.abs(values).max()) or 1.0
    starts = []
    for ph in seeds[:2]:
        # one damped phasor A e^{(i w - g) n} contributes |A| cos(w n + arg A)
        # to the real part
        starts.append(
            np.array([
                values.mean(), abs(ph.amplitude), math.exp(-ph.decay), abs(ph.omega),
                math.atan2(ph.amplitude.imag, ph.amplitude.real), 0.0, 0.5,
            ])
        )
    spec = np.abs(np.fft.rfft(values - values.mean()))
    k = int(np.argmax(spec[1:]) + 1) if spec.shape[0] > 2 else 1
    w_seed = 2.0 * math.pi * k / values.shape[0]
    starts.append(np.array([values.mean(), amp, 0.99, w_seed, 0.0, 0.0, 0.5]))
    starts.append(np.array([0.0, amp, 0.999, 0.5 * w_seed, 0.0, 0.0, 0.9]))
    starts.append(np.array([0.0, amp, 0.95, 2.0 * w_seed, 0.0, 0.0, 0.5]))
    lower = np.array([-2.0, -4.0, 0.0, 0.0, -2.0 * math.pi, -4.0, 0.0])
    upper = np.array([2.0, 4.0, 1.2, math.pi, 2.0 * math.pi, 4.0, 1.2])
    scale = np.array([max(amp, 0.1), max(amp, 0.1), 1.0, max(w_seed, 0.05), 1.0, max(amp, 0.1), 1.0])
    best = minimize_multistart(lossfun, starts, lower, upper, scale, maxfev=2500)
    return best.x, best.fun


# ---------------------------------------------------------------------------
# verdict

VERDICTS = ("markovian_consistent", "non_markovian", "inconclusive")


@dataclass(frozen=True)
class NonMarkovianityReport:
    verdict: str
    purity: PurityFit | None
    frequency_count: int
    frequencies: tuple[float, ...]  # rad per gate unit, folded to |omega|
    form_residual: float
    shot_rmse: float
    n_points: int


def detect_nonmarkovianity(
    records: Sequence[ExperimentRecord], m: int = 4
) -> NonMarkovianityReport:
    """Run all three detectors on a single-theta record set and combine.

    Memory is declared when the purity oscillation is significant (z > 3) or
    the spectrum splits (>= 2 frequencies) with a single-frequency-form
    residual well above shot noise.  Fewer than 8 interpolated points, or a
    non-uniform n grid, is inconclusive.
    """
    ns, bloch = bloch_series(records)
    span = int(ns[-1] - ns[0]) + 1 if ns.shape[0] > 1 else ns.shape[0]
    shots = _records_shots(records)
    noise = shot_noise_rmse(shots)
    if span < 8 or ns.shape[0] < 4:
        return NonMarkovianityReport(
            verdict="inconclusive", purity=None, frequency_count=0, frequencies=(),
            form_residual=float("nan"), shot_rmse=noise, n_points=ns.shape[0],
        )
    steps = np.diff(ns)
    if not np.all(steps == steps[0]):
        return NonMarkovianityReport(
            verdict="inconclusive", purity=None, frequency_count=0, frequencies=(),
            form_residual=float("nan"), shot_rmse=noise, n_points=ns.shape[0],
        )
    dn = int(steps[0])
    period = 2.0 * m * dn  # gate units per sample

    purity = fit_purity(records, m=m)

    z = bloch[:, 0] + 1j * bloch[:, 1]
    count, freqs_sample = count_frequencies(z, shots)
    freqs = tuple(f / period for f in freqs_sample)

    seeds, _ = extract_phasors(z, threshold=max(5.0 * noise / math.sqrt(ns.shape[0]), 1e-8))
    _, form_loss = fit_single_frequency(bloch[:, 0], seeds)
    form_residual = math.sqrt(form_loss / ns.shape[0])

    floor = max(noise, 1e-6)
    non_markov = purity.significance > 3.0 or (count >= 2 and form_residual > 2.0 * floor)
    return NonMarkovianityReport(
        verdict="non_markovian" if non_markov else "markovian_consistent",
        purity=purity,
        frequency_count=count,
        frequencies=freqs,
        form_residual=form_residual,
        shot_rmse=noise,
        n_points=ns.shape[0],
    )


# ---------------------------------------------------------------------------
# weighted aggregation of ratio estimates

@dataclass(frozen=True)
class WeightedRatio:
    """Inverse-variance aggregate of (value, sigma) pairs.

    sigma_total^2 = sigma_fit^2 + sigma_disp^2 adds the propagated fit error
    and the excess day-to-day scatter in quadrature.
    """

    mean: float
    sigma_fit: float
    sigma_disp: float
    sigma_total: float
    n: int


def aggregate_ratios(values: Sequence[float], sigmas: Sequence[float]) -> WeightedRatio:
    values = np.asarray(values, dtype=float)
    sigmas = np.asarray(sigmas, dtype=float)
    if values.shape != sigmas.shape or values.ndim != 1 or values.shape[0] == 0:
        raise ValueError("values and sigmas must be equal-length non-empty 1-d arrays")
    if np.any(sigmas < 0):
        raise ValueError("sigmas must be non-negative")
    if np.any(sigmas == 0):
        warnings.warn("zero sigma in aggregation; flooring at 1e-12", RuntimeWarning, stacklevel=2)
        sigmas = np.maximum(sigmas, _SIGMA_FLOOR)
    w = 1.0 / sigmas**2
    mean = float(np.sum(w * values) / np.sum(w))
    sigma_fit = float(1.0 / math.sqrt(np.sum(w)))
    sigma_disp = float(math.sqrt(np.sum(w * (values - mean) ** 2) / np.sum(w)))
    return WeightedRatio(
        mean=mean,
        sigma_fit=sigma_fit,
        sigma_disp=sigma_disp,
        sigma_total=math.sqrt(sigma_fit**2 + sigma_disp**2),
        n=values.shape[0],
    )


def density_profile(
    values: Sequence[float], sigmas: Sequence[float], z_grid: np.ndarray
) -> np.ndarray:
    """Equal-weight Gaussian mixture density over z: mean_k N(z; r_k, s_k)."""
    values = np.asarray(values, dtype=float)
    sigmas = np.maximum(np.asarray(sigmas, dtype=float), _SIGMA_FLOOR)
    if values.shape != sigmas.shape or values.ndim != 1 or values.shape[0] == 0:
        raise ValueError("values and sigmas must be equal-length non-empty 1-d arrays")
    z = np.asarray(z_grid, dtype=float)
    out = np.zeros_like(z)
    for r, s in zip(values, sigmas):
        out += np.exp(-0.5 * ((z - r) / s) ** 2) / (s * math.sqrt(2.0 * math.pi))
    return out / values.shape[0]


@dataclass(frozen=True)
class RatioSummary:
    """Aggregated drive-dependence of one parameter at one theta_full."""

    theta_full: float
    parameter: str
    aggregate: WeightedRatio
    values: tuple[float, ...]
    sigmas: tuple[float, ...]
