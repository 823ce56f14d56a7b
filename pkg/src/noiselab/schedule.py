"""Pseudoidentity gate sequences and their noisy superoperators.

One pseudoidentity repetition is the mirrored sequence

    [X(theta_gate)] * m  ->  Z_pi  ->  [X(theta_gate)] * m  ->  Z_pi ,

theta_gate = theta_full / m: each half rotates the qubit by theta_full about
x, the virtual Z flips the drive axis so the second half undoes the first,
and the two virtual Zs together are a full 2 pi frame rotation.  Ideally the
whole block is the identity channel; coherent errors that do not commute with
the mirroring (detuning delta_omega, TLS coupling) survive and accumulate
over n repetitions.

Every drive gate lasts one gate unit and carries the constant Hamiltonian
Omega = theta_gate / 2 on the (frame-rotated) x axis; virtual Z gates are
instantaneous frame relabelings.  Detuning and dissipation act during every
drive gate, including zero-amplitude gates of an idle (theta_full = 0)
sequence, so one idle pseudoidentity is exactly 2 m gate units of free decay.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.linalg import expm

from .models import (
    MarkovianParams,
    NoiseParams,
    PMMEParams,
    QubitTLSParams,
    UnsupportedModelError,
    markovian_generator,
    pmme_idle_bloch,
    qubit_tls_generator,
)
from .pauli import (
    PauliVector,
    PowerEngine,
    SIGMA_X,
    SIGMA_Z,
    Superoperator,
    propagate,
)

BASES = ("X", "Y", "Z")


@dataclass(frozen=True)
class GateSpec:
    """One scheduled gate: a finite-duration x drive or an instantaneous
    virtual-Z frame rotation.  frame_phase is the accumulated virtual phase in
    effect when the gate plays."""

    kind: str  # "drive_x" | "virtual_z"
    theta: float
    duration: float
    frame_phase: float = 0.0

    def __post_init__(self):
        if self.kind not in ("drive_x", "virtual_z"):
            raise ValueError(f"unknown gate kind {self.kind!r}")
        if self.kind == "virtual_z" and self.duration != 0.0:
            raise ValueError("virtual-Z gates are instantaneous")
        if self.kind == "drive_x" and self.duration <= 0.0:
            raise ValueError("drive gates need positive duration")


@dataclass(frozen=True)
class PseudoidentitySchedule:
    """Repetition experiment: one pseudoidentity block scanned over n."""

    theta_full: float
    n_values: tuple[int, ...]
    m: int = 4
    bases: tuple[str, ...] = BASES

    def __post_init__(self):
        if not isinstance(self.m, int) or self.m < 1:
            raise ValueError(f"m must be a positive integer, got {self.m!r}")
        if not math.isfinite(self.theta_full):
            raise ValueError("theta_full must be finite")
        ns = tuple(int(n) for n in self.n_values)
        if len(ns) == 0:
            raise ValueError("n_values must be non-empty")
        if any(n < 0 for n in ns):
            raise ValueError("repetition counts must be non-negative")
        if list(ns) != sorted(set(ns)):
            raise ValueError("n_values must be strictly increasing")
        object.__setattr__(self, "n_values", ns)
        bases = tuple(self.bases)
        if not bases or any(b not in BASES for b in bases):
            raise ValueError(f"bases must be a non-empty subset of {BASES}")
        # canonical X, Y, Z order regardless of input order
        object.__setattr__(self, "bases", tuple(b for b in BASES if b in bases))

    @property
    def duration(self) -> float:
        """Gate units per pseudoidentity repetition (virtual Zs are free)."""
        return 2.0 * self.m

    @property
    def theta_gate(self) -> float:
        return self.theta_full / self.m

    def to_dict(self) -> dict:
        return {
            "theta_full": self.theta_full,
            "m": self.m,
            "n_values": list(self.n_values),
            "bases": list(self.bases),
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "PseudoidentitySchedule":
        known = {"theta_full", "m", "n_values", "bases"}
        extra = set(data) - known
        if extra:
            raise ValueError(f"unknown schedule keys: {sorted(extra)}")
        if "theta_full" not in data or "n_values" not in data:
            raise ValueError("schedule needs theta_full and n_values")
        return cls(
            theta_full=float(data["theta_full"]),
            n_values=tuple(int(n) for n in data["n_values"]),
            m=int(data.get("m", 4)),
            bases=tuple(data.get("bases", BASES)),
        )


def build_pseudoidentity(theta_full: float, m: int) -> list[GateSpec]:
    """Gate list of one pseudoidentity repetition (2 m drives + 2 virtual Zs)."""
    if not isinstance(m, int) or m < 1:
        raise ValueError(f"m must be a positive integer, got {m!r}")
    if not math.isfinite(theta_full):
        raise ValueError("theta_full must be finite")
    theta_gate = theta_full / m
    first = [GateSpec("drive_x", theta_gate, 1.0, frame_phase=0.0) for _ in range(m)]
    second = [GateSpec("drive_x", theta_gate, 1.0, frame_phase=math.pi) for _ in range(m)]
    return (
        first
        + [GateSpec("virtual_z", math.pi, 0.0, frame_phase=0.0)]
        + second
        + [GateSpec("virtual_z", math.pi, 0.0, frame_phase=math.pi)]
    )


def virtual_z_superoperator(phi: float, q: int) -> Superoperator:
    """Exact Bloch rotation by phi about z on the qubit factor, zero duration."""
    c, s = math.cos(phi), math.sin(phi)
    r4 = np.array(
        [
            [1.0, 0.0, 0.0, 0.0],
            [0.0, c, -s, 0.0],
            [0.0, s, c, 0.0],
            [0.0, 0.0, 0.0, 1.0],
        ]
    )
    if q == 1:
        return Superoperator(r4, 0.0)
    if q == 2:
        return Superoperator(np.kron(r4, np.eye(4)), 0.0)
    raise ValueError(f"q must be 1 or 2, got {q}")


def _drive_superoperator(params: NoiseParams, gate: GateSpec) -> Superoperator:
    omega = gate.theta / 2.0  # rotation theta over unit duration
    if isinstance(params, MarkovianParams):
        gen = markovian_generator(params, omega, gate.frame_phase)
    elif isinstance(params, QubitTLSParams):
        gen = qubit_tls_generator(params, omega, gate.frame_phase)
    else:
        raise UnsupportedModelError(
            "memory-kernel dynamics has no per-gate superoperator; "
            "only idle trajectories are defined for PMME parameters"
        )
    return propagate(gen, gate.duration)


def schedule_superoperator(params: NoiseParams, schedule: PseudoidentitySchedule) -> Superoperator:
    """Superoperator of one full pseudoidentity repetition under the noise model.

    Markovian params give a 4x4 map, qubit-TLS a 16x16 map; memory-kernel
    (PMME) params are rejected since the kernel does not factor into gates.
    Virtual-Z entries are frame bookkeeping, not physical operations: their
    rotation already lives in the frame_phase of the later drives, and the
    frame accumulated over one full block is 2 pi, so no closing relabel of
    the measurement axes is needed either.
    """
    if isinstance(params, PMMEParams):
        raise UnsupportedModelError(
            "memory-kernel dynamics has no per-gate superoperator; "
            "only idle trajectories are defined for PMME parameters"
        )
    gates = build_pseudoidentity(schedule.theta_full, schedule.m)
    cache: dict[tuple, Superoperator] = {}
    total: Superoperator | None = None
    for gate in gates:
        if gate.kind == "virtual_z":
            continue
        key = (gate.theta, gate.duration, gate.frame_phase)
        if key not in cache:
            cache[key] = _drive_superoperator(params, gate)
        sup = cache[key]
        total = sup if total is None else sup @ total
    assert total is not None
    return total


def _initial_state(params: NoiseParams) -> PauliVector:
    if isinstance(params, QubitTLSParams):
        return PauliVector.plus_tls_ground()
    return PauliVector.plus()


def predict_trajectory(
    params: NoiseParams, schedule: PseudoidentitySchedule
) -> dict[int, tuple[float, float, float]]:
    """Exact (infinite-shot) qubit expectation values <sx>, <sy>, <sz> per n.

    The qubit starts in |+> (the TLS, if present, in its ground state); one
    pseudoidentity superoperator is diagonalised once and applied n times.
    Memory-kernel parameters are propagated with the closed-form idle
    solution and therefore only support theta_full = 0.
    """
    ns = np.asarray(schedule.n_values, dtype=int)
    if isinstance(params, PMMEParams):
        if schedule.theta_full != 0.0:
            raise UnsupportedModelError(
                "memory-kernel propagation is only defined for idle "
                "(theta_full = 0) schedules"
            )
        bloch = pmme_idle_bloch(params, ns * schedule.duration)
    else:
        sup = schedule_superoperator(params, schedule)
        engine = PowerEngine(sup.matrix)
        states = engine.states(ns, _initial_state(params).coeffs)
        if isinstance(params, QubitTLSParams):
            bloch = states[:, [4, 8, 12]]
        else:
            bloch = states[:, 1:4]
    return {int(n): (float(b[0]), float(b[1]), float(b[2])) for n, b in zip(ns, bloch)}


def pseudoidentity_unitary(
    theta_full: float,
    m: int,
    over_rotation: float = 0.0,
    sigma_z_error: float = 0.0,
) -> np.ndarray:
    """Noiseless composite unitary of one pseudoidentity repetition.

    The virtual-Z bookkeeping contributes only a global phase, which is
    dropped: what is returned is U = U_second_half @ U_first_half in the
    drive frame, each half being m unit-duration gates of the same constant
    Hamiltonian

        H_(+/-) = (+/-) Omega (1 + over_rotation) sigma_x
                  + Omega sigma_z_error sigma_z ,
        Omega = theta_full / (2 m) .

    With no perturbation the mirrored halves cancel exactly.  A sigma_z
    perturbation at theta_full = 2 pi leaves only a third-order diagonal
    phase ~ pi sigma_z_error^3 (off-diagonals are fifth order).
    """
    if not isinstance(m, int) or m < 1:
        raise ValueError(f"m must be a positive integer, got {m!r}")
    omega = theta_full / (2.0 * m)
    drive = omega * (1.0 + over_rotation)
    h_plus = drive * SIGMA_X + omega * sigma_z_error * SIGMA_Z
    h_minus = -drive * SIGMA_X + omega * sigma_z_error * SIGMA_Z
    return expm(-1j * m * h_minus) @ expm(-1j * m * h_plus)
