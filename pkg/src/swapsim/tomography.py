"""Two-qubit polarization state tomography.

Projector settings, Born-rule count simulation, least-squares linear
inversion, maximum-likelihood reconstruction on a Cholesky-style
parameterization, and parametric bootstrap error bars.
"""
from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .qstate import (
    BellKind,
    DensityMatrix,
    QStateError,
    bell_state,
    fidelity_pure,
    horodecki_s,
    POLARIZATION_KETS,
    project_to_physical,
)

SETTING_NAMES_16 = ("H", "V", "D", "R")
SETTING_NAMES_36 = ("H", "V", "D", "A", "R", "L")


class TomographyError(ValueError):
    """Invalid tomography data or configuration."""


class MleConvergenceError(RuntimeError):
    """Maximum-likelihood ascent failed to reach the gradient tolerance."""


@dataclass(frozen=True)
class MeasurementSetting:
    """Pair of single-qubit polarization projectors."""

    projector_a: str
    projector_b: str

    def __post_init__(self):
        for name in (self.projector_a, self.projector_b):
            if name not in POLARIZATION_KETS:
                raise TomographyError(f"unknown projector {name!r}")

    def operator(self) -> np.ndarray:
        ka = POLARIZATION_KETS[self.projector_a]
        kb = POLARIZATION_KETS[self.projector_b]
        return np.kron(np.outer(ka, ka.conj()), np.outer(kb, kb.conj()))


@dataclass(frozen=True)
class TomographyRun:
    """Settings with measured (or simulated) counts and acquisition weights.

    Counts may be fractional to support exact-probability studies; measured
    data carries integers.
    """

    settings: tuple[MeasurementSetting, ...]
    counts: np.ndarray
    exposures: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=float).reshape(-1)
        if counts.size != len(self.settings):
            raise TomographyError(
                f"{counts.size} counts for {len(self.settings)} settings"
            )
        if np.any(counts < 0):
            raise TomographyError("counts must be non-negative")
        exposures = self.exposures
        if exposures is None:
            exposures = np.ones(counts.size)
        exposures = np.asarray(exposures, dtype=float).reshape(-1)
        if exposures.size != counts.size:
            raise TomographyError("exposures length must match settings")
        if np.any(exposures <= 0):
            raise TomographyError("exposures must be positive")
        counts.setflags(write=False)
        exposures.setflags(write=False)
        object.__setattr__(self, "settings", tuple(self.settings))
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "exposures", exposures)


def standard_settings(kind: int) -> list[MeasurementSetting]:
    """The 16-setting {H,V,D,R}^2 grid or the overcomplete 36-setting grid."""
    if kind == 16:
        names = SETTING_NAMES_16
    elif kind == 36:
        names = SETTING_NAMES_36
    else:
        raise TomographyError(f"setting count must be 16 or 36, got {kind}")
    return [MeasurementSetting(a, b) for a in names for b in names]


def _operators(settings: Sequence[MeasurementSetting]) -> np.ndarray:
    return np.stack([s.operator() for s in settings])


def born_probabilities(rho: DensityMatrix, settings: Sequence[MeasurementSetting]) -> np.ndarray:
    if rho.n_qubits != 2:
        raise QStateError("tomography operates on two-qubit states")
    ops = _operators(settings)
    return np.real(np.einsum("sij,ji->s", ops, rho.matrix))


def simulate_counts(
    rho: DensityMatrix,
    settings: Sequence[MeasurementSetting],
    total_per_setting: float,
    rng_seed: int,
    exposures: Sequence[float] | None = None,
) -> TomographyRun:
    """Poisson counts with mean N * exposure * <P_a x P_b>, seed-deterministic."""
    if total_per_setting <= 0:
        raise TomographyError("total_per_setting must be positive")
    probs = np.clip(born_probabilities(rho, settings), 0.0, None)
    expo = np.ones(len(settings)) if exposures is None else np.asarray(exposures, float)
    rng = np.random.default_rng(rng_seed)
    counts = rng.poisson(total_per_setting * expo * probs)
    return TomographyRun(tuple(settings), counts.astype(float), expo)


def linear_inversion(run: TomographyRun) -> np.ndarray:
    """Least-squares inversion of the Born map; Hermitian, unit trace, maybe non-PSD.

    The per-setting flux is absorbed by solving against raw rates and
    normalizing the trace afterwards, so exact probabilities are recovered
    exactly.
    """
    ops = _operators(run.settings)
    a = ops.conj().reshape(len(run.settings), 16)
    rank = np.linalg.matrix_rank(a)
    if rank < 16:
        raise TomographyError(f"settings span only a rank-{rank} operator subspace")
    rates = run.counts / run.exposures
    vec, *_ = np.linalg.lstsq(a, rates, rcond=None)
    mat = vec.reshape(4, 4)
    mat = (mat + mat.conj().T) / 2.0
    tr = float(np.real(np.trace(mat)))
    if tr <= 0:
        raise TomographyError("inverted matrix has non-positive trace")
    return mat / tr


def _params_to_t(theta: np.ndarray) -> np.ndarray:
    t = np.zeros((4, 4), dtype=complex)
    idx = np.diag_indices(4)
    t[idx] = theta[:4]
    rows, cols = np.tril_indices(4, -1)
    t[rows, cols] = theta[4:10] + 1j * theta[10:16]
    return t


def _t_to_params(t: np.ndarray) -> np.ndarray:
    rows, cols = np.tril_indices(4, -1)
    return np.concatenate([np.real(np.diag(t)), np.real(t[rows, cols]), np.imag(t[rows, cols])])


def _rho_from_t(t: np.ndarray) -> tuple[np.ndarray, float]:
    gram = t.conj().T @ t
    tau = float(np.real(np.trace(gram)))
    return gram / tau, tau


def _profile_loglike(rho: np.ndarray, ops, counts, exposures) -> tuple[float, np.ndarray]:
    """Poisson log-likelihood with the overall flux profiled out, plus dL/drho."""
    p = np.real(np.einsum("sij,ji->s", ops, rho))
    p = np.clip(p, 1e-300, None)
    total = float(np.sum(counts))
    denom = float(np.sum(exposures * p))
    phi = total / denom
    rates = phi * exposures * p
    ll = float(np.sum(counts * np.log(rates)) - total)
    grad_coeff = counts / p - phi * exposures
    grad = np.einsum("s,sij->ij", grad_coeff, ops)
    return ll, grad


def mle_reconstruct(
    run: TomographyRun,
    max_iter: int = 10000,
    grad_tol: float = 1e-8,
    strict: bool = False,
    history: list | None = None,
) -> DensityMatrix:
    """Maximum-likelihood state on the parameterization rho = T'T / Tr(T'T).

    T is lower triangular (16 real parameters), initialized from the
    physically projected linear inversion. The concave profile likelihood is
    maximized with L-BFGS-B using the analytic gradient; accepted iterates are
    monotone in likelihood (append them via ``history`` to inspect).
    Convergence means the per-count gradient norm fell below ``grad_tol`` or
    the likelihood became flat to machine precision; anything else warns, or
    raises when ``strict``.
    """
    from scipy.optimize import minimize

    ops = _operators(run.settings)
    counts, exposures = run.counts, run.exposures
    total = float(np.sum(counts))
    if total <= 0:
        raise TomographyError("run contains no counts")

    init = project_to_physical(linear_inversion(run), ("A", "B")).matrix
    init = (init + 1e-6 * np.eye(4)) / (1.0 + 4e-6)
    # Lower-triangular T with T'T = init comes from the index-reversed
    # Cholesky factor: init = U U' with U upper, then T = U'.
    flip = np.eye(4)[::-1]
    upper = flip @ np.linalg.cholesky(flip @ init @ flip) @ flip
    theta0 = _t_to_params(upper.conj().T)
    rows, cols = np.tril_indices(4, -1)

    def objective(th: np.ndarray):
        t = _params_to_t(th)
        rho, tau = _rho_from_t(t)
        ll, grad_rho = _profile_loglike(rho, ops, counts, exposures)
        gtilde = grad_rho - np.real(np.trace(grad_rho @ rho)) * np.eye(4)
        tg = t @ gtilde
        grad_theta = np.concatenate(
            [
                2.0 * np.real(np.diag(tg)) / tau,
                2.0 * np.real(tg[rows, cols]) / tau,
                2.0 * np.imag(tg[rows, cols]) / tau,
            ]
        )
        return -ll / total, -grad_theta / total

    callback = None
    if history is not None:
        callback = lambda th: history.append(-objective(th)[0] * total)
        history.append(-objective(theta0)[0] * total)

    result = minimize(
        objective,
        theta0,
        jac=True,
        method="L-BFGS-B",
        callback=callback,
        options={"maxiter": max_iter, "ftol": 1e-17, "gtol": grad_tol, "maxcor": 20},
    )
    theta = result.x
    gnorm = float(np.linalg.norm(result.jac))
    flat = bool(result.success) and "CONVERGENCE" in str(result.message).upper()
    if gnorm >= grad_tol and not flat:
        # Line-search breakdown: polish with fixed-step backtracking ascent
        # until the likelihood is flat to machine precision.
        theta, gnorm, flat = _backtracking_polish(objective, theta, grad_tol, history, total)
    if gnorm >= grad_tol and not flat:
        msg = (
            f"MLE stopped after {result.nit} iterations with per-count gradient "
            f"norm {gnorm:.3e} (requested {grad_tol:.1e}): {result.message}"
        )
        if strict:
            raise MleConvergenceError(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    rho, _ = _rho_from_t(_params_to_t(theta))
    rho = (rho + rho.conj().T) / 2.0
    return DensityMatrix(rho, ("A", "B"))


def _backtracking_polish(objective, theta, grad_tol, history, total, max_iter=500):
    neg_ll, neg_grad = objective(theta)
    step = 1.0
    for _ in range(max_iter):
        gnorm = float(np.linalg.norm(neg_grad))
        if gnorm < grad_tol:
            return theta, gnorm, True
        improved = False
        for _ in range(60):
            cand = theta - step * neg_grad
            cand_ll, cand_grad = objective(cand)
            if cand_ll <= neg_ll:
                theta, neg_ll, neg_grad = cand, cand_ll, cand_grad
                if history is not None:
                    history.append(-cand_ll * total)
                step *= 1.5
                improved = True
                break
            step *= 0.5
        if not improved:
            # No representable improvement left in the gradient direction.
            return theta, float(np.linalg.norm(neg_grad)), True
    return theta, float(np.linalg.norm(neg_grad)), False


@dataclass(frozen=True)
class BootstrapErrors:
    """Standard errors of tomography scalars from a parametric bootstrap."""

    fidelity_phi_plus_std: float
    fidelity_psi_plus_std: float
    s_value_std: float
    resamples: int
    failures: int


def bootstrap_errors(run: TomographyRun, resamples: int = 250, rng_seed: int = 0) -> BootstrapErrors:
    """Poisson-resample the observed counts and re-reconstruct.

    Per-resample seeds are spawned deterministically so results do not depend
    on execution order.
    """
    if resamples < 100:
        raise TomographyError("use at least 100 bootstrap resamples")
    phi = bell_state(BellKind.PHI_PLUS)
    psi = bell_state(BellKind.PSI_PLUS)
    children = np.random.SeedSequence(rng_seed).spawn(resamples)
    f_phi, f_psi, s_vals = [], [], []
    failures = 0
    for child in children:
        rng = np.random.default_rng(child)
        counts = rng.poisson(run.counts).astype(float)
        resampled = TomographyRun(run.settings, counts, run.exposures)
        try:
            rho = mle_reconstruct(resampled, strict=True)
        except (TomographyError, MleConvergenceError):
            failures += 1
            continue
        f_phi.append(fidelity_pure(rho, phi))
        f_psi.append(fidelity_pure(rho, psi))
        s_vals.append(horodecki_s(rho))
    if len(f_phi) < 2:
        raise TomographyError("too few successful bootstrap reconstructions")
    return BootstrapErrors(
        fidelity_phi_plus_std=float(np.std(f_phi, ddof=1)),
        fidelity_psi_plus_std=float(np.std(f_psi, ddof=1)),
        s_value_std=float(np.std(s_vals, ddof=1)),
        resamples=resamples,
        failures=failures,
    )


def run_to_csv(run: TomographyRun) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["setting_a", "setting_b", "counts", "exposure"])
    for setting, count, expo in zip(run.settings, run.counts, run.exposures):
        count_repr = int(count) if float(count).is_integer() else float(count)
        writer.writerow([setting.projector_a, setting.projector_b, count_repr, expo])
    return buf.getvalue()


def run_from_csv(text: str) -> TomographyRun:
    reader = csv.DictReader(io.StringIO(text))
    required = {"setting_a", "setting_b", "counts", "exposure"}
    if reader.fieldnames is None or not required.issubset(reader.fieldnames):
        raise TomographyError(f"run CSV must have columns {sorted(required)}")
    settings, counts, exposures = [], [], []
    for row in reader:
        settings.append(MeasurementSetting(row["setting_a"].strip(), row["setting_b"].strip()))
        counts.append(float(row["counts"]))
        exposures.append(float(row["exposure"]))
    if not settings:
        raise TomographyError("run CSV contains no rows")
    return TomographyRun(tuple(settings), np.array(counts), np.array(exposures))
