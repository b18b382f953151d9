"""Discrete phase-shift alphabet and projections onto it."""

import numpy as np

# distances closer than this are treated as ties (lower phase index wins)
TIE_TOL = 1e-12


def alphabet(Q: int) -> np.ndarray:
    """F_d = {exp(j 2 pi z / 2**Q), z = 0..2**Q - 1}."""
    if Q < 1:
        raise ValueError("Q must be >= 1")
    Z = 2 ** Q
    return np.exp(2j * np.pi * np.arange(Z) / Z)


def nearest_index(x, Q: int) -> np.ndarray:
    """Index of the nearest F_d element for every entry of ``x``.

    Exact (to ``TIE_TOL``) ties go to the lower phase index.
    """
    x = np.asarray(x, dtype=complex)
    dist = np.abs(x[..., None] - alphabet(Q))
    dmin = dist.min(axis=-1, keepdims=True)
    return np.argmax(dist <= dmin + TIE_TOL, axis=-1)


def project(x, Q: int) -> np.ndarray:
    """Entrywise Euclidean projection onto F_d."""
    return alphabet(Q)[nearest_index(x, Q)]


def quantize_phases(v_relaxed, Q: int) -> np.ndarray:
    """Map a relaxed reflection vector (|v_n| <= 1) onto F_d^N."""
    v_relaxed = np.asarray(v_relaxed, dtype=complex)
    if np.any(np.abs(v_relaxed) > 1 + 1e-9):
        raise ValueError("relaxed reflection coefficients must satisfy |v_n| <= 1")
    return project(v_relaxed, Q)


def random_discrete(N: int, Q: int, rng) -> np.ndarray:
    rng = np.random.default_rng(rng)
    return alphabet(Q)[rng.integers(0, 2 ** Q, size=N)]


def random_unit_modulus(N: int, rng) -> np.ndarray:
    rng = np.random.default_rng(rng)
    return np.exp(2j * np.pi * rng.uniform(size=N))


def is_discrete(v, Q: int, atol: float = 1e-12) -> bool:
    v = np.asarray(v, dtype=complex)
    return bool(np.all(np.abs(v - project(v, Q)) <= atol))


def all_configurations(N: int, Q: int) -> np.ndarray:
    """Every vector in F_d^N as rows, lexicographic in the phase indices."""
    Z = 2 ** Q
    idx = np.indices((Z,) * N).reshape(N, -1).T
    return alphabet(Q)[idx]
