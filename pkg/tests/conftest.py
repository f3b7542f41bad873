"""Shared test helpers: independent oracles kept separate from the library code."""
from __future__ import annotations

import numpy as np

from swapsim.interference import beamsplitter_coincidence
from swapsim.qstate import PureState

SX = np.array([[0, 1], [1, 0]], dtype=complex)
SY = np.array([[0, -1j], [1j, 0]], dtype=complex)
SZ = np.array([[1, 0], [0, -1]], dtype=complex)
PAULIS = (SX, SY, SZ)


def random_density(rng: np.random.Generator, dim: int = 4) -> np.ndarray:
    """Haar-ish random full-rank density matrix."""
    a = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    rho = a @ a.conj().T
    return rho / np.trace(rho)


def pauli_expectations(rho: np.ndarray) -> np.ndarray:
    t = np.empty((3, 3))
    for i, si in enumerate(PAULIS):
        for j, sj in enumerate(PAULIS):
            t[i, j] = float(np.real(np.trace(rho @ np.kron(si, sj))))
    return t


def chsh_angle_scan(rho: np.ndarray, n_starts: int = 32, iters: int = 80, seed: int = 0) -> float:
    """Brute-force CHSH maximization over measurement directions.

    Random measurement-frame starts refined by alternating exact one-side
    updates; never touches the correlation-matrix eigenvalue formula.
    """
    t = pauli_expectations(rho)
    rng = np.random.default_rng(seed)

    def unit(v):
        n = np.linalg.norm(v)
        return v / n if n > 1e-12 else None

    best = 0.0
    starts = [rng.normal(size=(4, 3)) for _ in range(n_starts)]
    starts.append(np.array([[0, 0, 1.0], [1.0, 0, 0], [0, 0, 1.0], [1.0, 0, 0]]))
    for raw in starts:
        vecs = [unit(v) if unit(v) is not None else np.array([0, 0, 1.0]) for v in raw]
        a, a2, b, b2 = vecs
        s = 0.0
        for _ in range(iters):
            ua, va = unit(t @ (b + b2)), unit(t @ (b - b2))
            a = ua if ua is not None else a
            a2 = va if va is not None else a2
            ub, vb = unit(t.T @ (a + a2)), unit(t.T @ (a - a2))
            b = ub if ub is not None else b
            b2 = vb if vb is not None else b2
            s_new = a @ t @ b + a @ t @ b2 + a2 @ t @ b - a2 @ t @ b2
            if abs(s_new - s) < 1e-13:
                s = s_new
                break
            s = s_new
        best = max(best, abs(s))
    return float(best)


def povm_from_mode_calculus(overlap: float, premultiply: np.ndarray | None = None) -> np.ndarray:
    """Reconstruct the heralding POVM element from coincidence probabilities.

    Diagonals come from basis kets, off-diagonals from +1 and +i
    superpositions; ``premultiply`` optionally rotates the inputs first (used
    for the compensated sign convention).
    """

    def prob(vec: np.ndarray) -> float:
        if premultiply is not None:
            vec = premultiply @ vec
        return beamsplitter_coincidence(PureState(vec), "H", "V", overlap)

    basis = np.eye(4, dtype=complex)
    e = np.zeros((4, 4), dtype=complex)
    for k in range(4):
        e[k, k] = prob(basis[k])
    for k in range(4):
        for l in range(k + 1, 4):
            plus = (basis[k] + basis[l]) / np.sqrt(2)
            imag = (basis[k] + 1j * basis[l]) / np.sqrt(2)
            re = prob(plus) - (e[k, k].real + e[l, l].real) / 2
            im = (e[k, k].real + e[l, l].real) / 2 - prob(imag)
            e[k, l] = re + 1j * im
            e[l, k] = re - 1j * im
    return e
