"""Quantum-dot cascade source model.

Each emitted pair starts as an ideal Phi+ state on (X, XX) and is degraded by
a configurable noise channel whose strength can be calibrated against a target
pair fidelity.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.optimize import bisect

from .qstate import BellKind, DensityMatrix, QStateError, bell_density, relabel

# Reduced Planck constant in ueV * ns.
HBAR_UEV_NS = 0.6582119


class SourceError(ValueError):
    """Invalid source parameters or an unreachable calibration target."""


class NoiseKind(Enum):
    DEPHASING = "dephasing"
    DEPOLARIZING = "depolarizing"
    FSS_PHASE_DIFFUSION = "fss"


@dataclass(frozen=True)
class NoiseModel:
    """One noise channel acting on an emitted pair.

    ``strength`` is used by the dephasing and depolarizing kinds;
    ``fss_uev`` and ``t1_x_ns`` parameterize the phase-diffusion kind.
    """

    kind: NoiseKind
    strength: float = 0.0
    fss_uev: float = 0.0
    t1_x_ns: float = 0.25

    def __post_init__(self):
        if self.kind in (NoiseKind.DEPHASING, NoiseKind.DEPOLARIZING):
            if not 0.0 <= self.strength <= 1.0:
                raise SourceError(f"noise strength {self.strength} outside [0, 1]")
        if self.fss_uev < 0.0:
            raise SourceError(f"fine-structure splitting {self.fss_uev} must be >= 0")
        if self.t1_x_ns <= 0.0:
            raise SourceError(f"exciton lifetime {self.t1_x_ns} must be positive")


def dephasing(strength: float) -> NoiseModel:
    return NoiseModel(NoiseKind.DEPHASING, strength=strength)


def depolarizing(strength: float) -> NoiseModel:
    return NoiseModel(NoiseKind.DEPOLARIZING, strength=strength)


def fss_phase_diffusion(fss_uev: float, t1_x_ns: float) -> NoiseModel:
    return NoiseModel(NoiseKind.FSS_PHASE_DIFFUSION, fss_uev=fss_uev, t1_x_ns=t1_x_ns)


@dataclass(frozen=True)
class SourceParams:
    """Per-emission fidelity targets plus the channel kind and lifetimes."""

    target_fidelity_1: float = 0.9369
    target_fidelity_2: float = 0.9267
    model: NoiseModel = NoiseModel(NoiseKind.DEPHASING)
    t1_xx_ns: float = 0.12
    t1_x_ns: float = 0.25

    def __post_init__(self):
        for f in (self.target_fidelity_1, self.target_fidelity_2):
            if not 0.25 <= f <= 1.0:
                raise SourceError(f"target fidelity {f} outside [0.25, 1]")
        if self.t1_xx_ns <= 0.0 or self.t1_x_ns <= 0.0:
            raise SourceError("lifetimes must be positive")


def ideal_pair() -> DensityMatrix:
    """Perfect Phi+ pair on labels (X, XX)."""
    return bell_density(BellKind.PHI_PLUS, ("X", "XX"))


def fss_coherence_factor(fss_uev: float, t1_x_ns: float) -> float:
    """|<exp(i S t / hbar)>| for an exponential emission-time distribution."""
    x = fss_uev * t1_x_ns / HBAR_UEV_NS
    return 1.0 / np.sqrt(1.0 + x * x)


def _scale_cross_coherence(mat: np.ndarray, factor: float) -> np.ndarray:
    # Phase randomization between the H and V sectors of the first qubit:
    # coherences crossing the block boundary (including HH<->VV) shrink,
    # diagonals stay put. Completely positive for factor in [0, 1].
    out = mat.copy()
    out[:2, 2:] *= factor
    out[2:, :2] *= factor
    return out


def apply_noise(rho: DensityMatrix, model: NoiseModel) -> DensityMatrix:
    """Apply one noise channel to a two-qubit pair state."""
    if rho.n_qubits != 2:
        raise QStateError("noise channels act on two-qubit pair states")
    if model.kind is NoiseKind.DEPHASING:
        mat = _scale_cross_coherence(rho.matrix, 1.0 - model.strength)
    elif model.kind is NoiseKind.DEPOLARIZING:
        lam = model.strength
        mat = (1.0 - lam) * rho.matrix + lam * np.eye(4, dtype=complex) / 4.0
    elif model.kind is NoiseKind.FSS_PHASE_DIFFUSION:
        mat = _scale_cross_coherence(
            rho.matrix, fss_coherence_factor(model.fss_uev, model.t1_x_ns)
        )
    else:  # pragma: no cover
        raise SourceError(f"unhandled noise kind {model.kind}")
    return DensityMatrix(mat, rho.labels)


def calibrate(target_fidelity: float, kind: NoiseKind, t1_x_ns: float = 0.25) -> NoiseModel:
    """Return a channel whose output pair has the requested Phi+ fidelity.

    Closed forms for the dephasing and depolarizing kinds; the phase-diffusion
    kind is solved by bisection on the splitting energy.
    """
    f = float(target_fidelity)
    if not 0.25 < f <= 1.0:
        raise SourceError(f"target fidelity {f} outside the invertible range (0.25, 1]")
    if kind is NoiseKind.DEPHASING:
        if f < 0.5:
            raise SourceError(f"dephasing cannot reach fidelity {f} below 0.5")
        return dephasing(2.0 * (1.0 - f))
    if kind is NoiseKind.DEPOLARIZING:
        return depolarizing(4.0 * (1.0 - f) / 3.0)
    if kind is NoiseKind.FSS_PHASE_DIFFUSION:
        if f <= 0.5:
            raise SourceError(f"phase diffusion cannot reach fidelity {f} at or below 0.5")
        if f == 1.0:
            return fss_phase_diffusion(0.0, t1_x_ns)

        def gap(s_uev: float) -> float:
            return (1.0 + fss_coherence_factor(s_uev, t1_x_ns)) / 2.0 - f

        hi = 1.0
        while gap(hi) > 0.0:
            hi *= 2.0
            if hi > 1e9:  # pragma: no cover
                raise SourceError(f"no splitting reaches fidelity {f}")
        s = bisect(gap, 0.0, hi, xtol=1e-12)
        return fss_phase_diffusion(float(s), t1_x_ns)
    raise SourceError(f"unhandled noise kind {kind}")  # pragma: no cover


def emit_pair(params: SourceParams, which: int) -> DensityMatrix:
    """Calibrated noisy pair for emission 1 or 2, labelled (X1, XX1) or (X2, XX2)."""
    if which not in (1, 2):
        raise SourceError(f"emission index must be 1 or 2, got {which}")
    target = params.target_fidelity_1 if which == 1 else params.target_fidelity_2
    model = calibrate(target, params.model.kind, t1_x_ns=params.t1_x_ns)
    noisy = apply_noise(ideal_pair(), model)
    return relabel(noisy, (f"X{which}", f"XX{which}"))
