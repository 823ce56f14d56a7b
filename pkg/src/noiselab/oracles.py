"""Independent numerical routes used to cross-check the Pauli-coordinate engine.

The main engine projects the GKLS generator onto Pauli coordinates and
exponentiates.  Here the same master equation

    drho/dt = -i[H, rho] + sum_k G_k (L_k rho L_k^+ - {L_k^+ L_k, rho}/2)

is integrated directly on the density matrix with an adaptive step-doubling
RK4, sharing no code path with expm.  Agreement between the two is the core
correctness check for generator construction and propagation.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .pauli import PauliVector, density_matrix, from_density_matrix


def lindblad_rhs(
    hamiltonian: np.ndarray,
    jumps: Sequence[tuple[np.ndarray, float]],
) -> Callable[[np.ndarray], np.ndarray]:
    """Right-hand side rho -> drho/dt of the master equation."""
    h = np.asarray(hamiltonian, dtype=complex)
    terms = []
    for op, rate in jumps:
        op = np.asarray(op, dtype=complex)
        terms.append((op, op.conj().T, op.conj().T @ op, float(rate)))

    def rhs(rho: np.ndarray) -> np.ndarray:
        out = -1j * (h @ rho - rho @ h)
        for op, opd, opdop, rate in terms:
            out = out + rate * (op @ rho @ opd - 0.5 * (opdop @ rho + rho @ opdop))
        return out

    return rhs


def _rk4_step(rhs: Callable, rho: np.ndarray, h: float) -> np.ndarray:
    k1 = rhs(rho)
    k2 = rhs(rho + 0.5 * h * k1)
    k3 = rhs(rho + 0.5 * h * k2)
    k4 = rhs(rho + h * k3)
    return rho + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate_lindblad(
    hamiltonian: np.ndarray,
    jumps: Sequence[tuple[np.ndarray, float]],
    rho0: np.ndarray,
    t: float,
    tol: float = 1e-10,
) -> np.ndarray:
    """Integrate the master equation from rho0 over [0, t].

    Classic step-doubling control: each step is taken once at h and twice at
    h/2; the 4th-order error estimate |rho_2 - rho_1|/15 measured against tol
    drives acceptance and the next step size.
    """
    if t < 0:
        raise ValueError(f"integration horizon must be non-negative, got {t}")
    rhs = lindblad_rhs(hamiltonian, jumps)
    rho = np.asarray(rho0, dtype=complex).copy()
    if t == 0:
        return rho
    # initial step heuristic: resolve the fastest scale in the generator
    scale = max(np.abs(hamiltonian).max(), max((r for _, r in jumps), default=0.0), 1e-3)
    h = min(t, 0.1 / scale)
    time = 0.0
    while time < t:
        h = min(h, t - time)
        full = _rk4_step(rhs, rho, h)
        half = _rk4_step(rhs, rho, 0.5 * h)
        double = _rk4_step(rhs, half, 0.5 * h)
        err = np.abs(double - full).max() / 15.0
        if err <= tol or h <= 1e-12:
            rho = double + (double - full) / 15.0  # local extrapolation
            time += h
            if err > 0:
                h = min(h * min(5.0, 0.9 * (tol / err) ** 0.2), t)
            else:
                h = min(h * 5.0, t)
        else:
            h = max(h * max(0.1, 0.9 * (tol / err) ** 0.25), 1e-12)
    return rho


def evolve_state(
    hamiltonian: np.ndarray,
    jumps: Sequence[tuple[np.ndarray, float]],
    state: PauliVector,
    t: float,
    tol: float = 1e-10,
) -> PauliVector:
    """RK4 route for a PauliVector: to the density matrix and back."""
    rho = integrate_lindblad(hamiltonian, jumps, density_matrix(state), t, tol)
    return from_density_matrix(rho)
