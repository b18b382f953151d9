"""Uplink training with time-varying reflection patterns, LS/LMMSE estimation
and the resulting CSI-error model.

Training model: ``Y_k = sqrt(p_u) * H_tilde_k^H V + N_u`` (M x N_r), with
``N_u`` entries CN(0, eps2). The LS estimate is ``(Y V^+ / sqrt(p_u))^H`` so
the error ``(V^+)^H N_u^H / sqrt(p_u)`` has i.i.d. columns with covariance
``V_bar = eps2/p_u * (V^+)^H V^+``.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import hadamard

from . import phases
from .channels import ChannelSet, complex_normal

PINV_RCOND = 1e-12


@dataclass(frozen=True)
class TrainingPattern:
    """Reflection patterns used during training, one column per symbol.

    ``Q=None`` means continuous (unit-modulus) phases.
    """

    V: np.ndarray
    kind: str = "custom"
    Q: int | None = None

    def __post_init__(self):
        V = np.array(self.V, dtype=complex)
        if V.ndim != 2 or V.shape[1] < 1:
            raise ValueError("V must be a (N+1) x N_r matrix with N_r >= 1")
        if not np.allclose(V[0], 1.0, atol=1e-12):
            raise ValueError("first entry of every training column must be 1")
        body = V[1:]
        if self.Q is None:
            if not np.allclose(np.abs(body), 1.0, atol=1e-9):
                raise ValueError("training reflection coefficients must be unit modulus")
        elif not phases.is_discrete(body, self.Q, atol=1e-9):
            raise ValueError(f"training reflection coefficients must lie in F_d (Q={self.Q})")
        V.setflags(write=False)
        object.__setattr__(self, "V", V)

    @property
    def N(self) -> int:
        return self.V.shape[0] - 1

    @property
    def N_r(self) -> int:
        return self.V.shape[1]

    @property
    def pinv(self) -> np.ndarray:
        return np.linalg.pinv(self.V, rcond=PINV_RCOND)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["row", "col", "re", "im"])
            for (n, m), x in np.ndenumerate(self.V):
                w.writerow([n, m, repr(float(x.real)), repr(float(x.imag))])

    @classmethod
    def from_csv(cls, path, Q: int | None = None, kind: str = "custom") -> "TrainingPattern":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        n_rows = 1 + max(int(r["row"]) for r in rows)
        n_cols = 1 + max(int(r["col"]) for r in rows)
        V = np.zeros((n_rows, n_cols), dtype=complex)
        for r in rows:
            V[int(r["row"]), int(r["col"])] = float(r["re"]) + 1j * float(r["im"])
        return cls(V=V, kind=kind, Q=Q)


def build_training_pattern(N: int, N_r: int, Q: int | None = 1, kind: str = "dft",
                           binary_rotation: bool = True) -> TrainingPattern:
    """Build the training matrix V.

    ``kind="dft"``: rows 0..N of the max(N+1, N_r)-point DFT matrix, first
    N_r columns, each phase projected to the nearest F_d point when ``Q`` is
    given. For ``Q = 1`` (and ``binary_rotation``) the phases are rotated by
    pi/4 before projection:
    the sign of a DFT entry only keeps its cosine part, which makes rows n and
    N+1-n identical, whereas the rotated signs (a quantised Hartley matrix)
    stay full rank. ``kind="hadamard"``: rows 0..N of the Sylvester-Hadamard matrix of
    order N_r (a power of two, at least N+1).
    """
    if N < 1 or N_r < 1:
        raise ValueError("N and N_r must be >= 1")
    if kind == "dft":
        size = max(N + 1, N_r)
        n = np.arange(N + 1)[:, None]
        m = np.arange(N_r)[None, :]
        V = np.exp(-2j * np.pi * ((n * m) % size) / size)
        if Q is not None:
            offset = np.pi / 4 if (Q == 1 and binary_rotation) else 0.0
            V = phases.project(V * np.exp(1j * offset), Q)
        V[0] = 1.0
        return TrainingPattern(V=V, kind="quantized-dft" if Q is not None else "dft", Q=Q)
    if kind == "hadamard":
        if N_r < N + 1 or N_r & (N_r - 1):
            raise ValueError(f"no Hadamard matrix of order {N_r} covering N+1 = {N + 1} rows")
        V = hadamard(N_r).astype(complex)[: N + 1]
        return TrainingPattern(V=V, kind="truncated-hadamard", Q=Q if Q is not None else 1)
    raise ValueError(f"unknown training pattern kind {kind!r}")


@dataclass(frozen=True)
class ErrorModel:
    """Column covariance of the composite-channel CSI error of one user."""

    V_bar: np.ndarray
    p_u: float
    eps2: float
    sampling_matrix: np.ndarray = field(repr=False)

    def __post_init__(self):
        for name in ("V_bar", "sampling_matrix"):
            arr = np.array(getattr(self, name), dtype=complex)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def v_bar_11(self) -> float:
        return float(self.V_bar[0, 0].real)

    @property
    def r(self) -> np.ndarray:
        return self.V_bar[1:, 0]

    @property
    def R(self) -> np.ndarray:
        return self.V_bar[1:, 1:]

    @property
    def N(self) -> int:
        return self.V_bar.shape[0] - 1

    def scaled(self, c: float) -> "ErrorModel":
        """Error model of the channel scaled by ``sqrt(c)`` (V_bar scaled by c)."""
        return ErrorModel(V_bar=self.V_bar * c, p_u=self.p_u, eps2=self.eps2 * c,
                          sampling_matrix=self.sampling_matrix * np.sqrt(c))

    def save(self, path) -> None:
        np.savez(path, V_bar=self.V_bar, p_u=self.p_u, eps2=self.eps2,
                 sampling_matrix=self.sampling_matrix)

    @classmethod
    def load(cls, path) -> "ErrorModel":
        with np.load(path) as d:
            return cls(V_bar=d["V_bar"], p_u=float(d["p_u"]), eps2=float(d["eps2"]),
                       sampling_matrix=d["sampling_matrix"])


def error_covariance(pattern: TrainingPattern, p_u: float, eps2: float) -> ErrorModel:
    if p_u <= 0:
        raise ValueError("training power must be positive")
    T = np.sqrt(eps2 / p_u) * pattern.pinv.conj().T
    V_bar = T @ T.conj().T
    V_bar = 0.5 * (V_bar + V_bar.conj().T)
    return ErrorModel(V_bar=V_bar, p_u=float(p_u), eps2=float(eps2), sampling_matrix=T)


def lmmse_error_covariance(pattern: TrainingPattern, p_u: float, eps2: float,
                           channel_cov: np.ndarray, M: int) -> np.ndarray:
    """Total error covariance E{dH dH^H} of the LMMSE estimator (sum over M columns)."""
    V = pattern.V
    C = np.asarray(channel_cov, dtype=complex)
    S = p_u * V.conj().T @ C @ V + M * eps2 * np.eye(pattern.N_r)
    E = C - p_u * C @ V @ np.linalg.solve(S, V.conj().T @ C)
    return 0.5 * (E + E.conj().T)


@dataclass(frozen=True)
class ChannelEstimate:
    H_bar: np.ndarray  # K x (N+1) x M

    def __post_init__(self):
        H = np.array(self.H_bar, dtype=complex)
        if H.ndim == 2:
            H = H[None]
        if not np.all(np.isfinite(H)):
            raise ValueError("non-finite channel estimate")
        H.setflags(write=False)
        object.__setattr__(self, "H_bar", H)

    @property
    def h_d_hat(self) -> np.ndarray:
        return self.H_bar[:, 0, :].conj()

    @property
    def H_hat(self) -> np.ndarray:
        return self.H_bar[:, 1:, :]

    @property
    def K(self) -> int:
        return self.H_bar.shape[0]


def simulate_training(channels: ChannelSet, pattern: TrainingPattern, p_u: float,
                      eps2: float, rng) -> np.ndarray:
    """Received uplink training signals, K x M x N_r (training symbol = 1)."""
    if pattern.N != channels.N:
        raise ValueError("training pattern does not match the IRS size")
    if p_u <= 0:
        raise ValueError("training power must be positive")
    rng = np.random.default_rng(rng)
    K, M = channels.K, channels.M
    noise = np.sqrt(eps2) * complex_normal((K, M, pattern.N_r), rng)
    Y = np.sqrt(p_u) * np.conj(np.swapaxes(channels.H_tilde, 1, 2)) @ pattern.V
    return Y + noise


def ls_from_observation(Y: np.ndarray, pattern: TrainingPattern, p_u: float) -> ChannelEstimate:
    if pattern.N_r < pattern.N + 1:
        warnings.warn("N_r < N+1: the composite channel is not identifiable, "
                      "LS uses the pseudo-inverse", RuntimeWarning, stacklevel=2)
    est = Y @ pattern.pinv / np.sqrt(p_u)
    return ChannelEstimate(np.conj(np.swapaxes(est, 1, 2)))


def ls_estimate(channels: ChannelSet, pattern: TrainingPattern, p_u: float, eps2: float,
                rng) -> ChannelEstimate:
    """LS estimate of every user's composite channel from one training round."""
    return ls_from_observation(simulate_training(channels, pattern, p_u, eps2, rng), pattern, p_u)


def _check_psd(C: np.ndarray) -> None:
    w = np.linalg.eigvalsh(0.5 * (C + C.conj().T))
    if w.min() < -1e-10 * max(1.0, abs(w).max()):
        raise ValueError("channel covariance is not positive semidefinite")


def lmmse_from_observation(Y: np.ndarray, pattern: TrainingPattern, p_u: float, eps2: float,
                           channel_mean: np.ndarray, channel_cov: np.ndarray) -> ChannelEstimate:
    V = pattern.V
    K, M, _ = Y.shape
    channel_mean = np.asarray(channel_mean, dtype=complex).reshape(K, V.shape[0], M)
    channel_cov = np.asarray(channel_cov, dtype=complex).reshape(K, V.shape[0], V.shape[0])
    out = np.empty_like(channel_mean)
    for k in range(K):
        C = channel_cov[k]
        _check_psd(C)
        S = p_u * V.conj().T @ C @ V + M * eps2 * np.eye(pattern.N_r)
        centred = Y[k] - np.sqrt(p_u) * channel_mean[k].conj().T @ V
        gain = np.sqrt(p_u) * C.conj().T @ V
        out[k] = gain @ np.linalg.solve(S, centred.conj().T) + channel_mean[k]
    return ChannelEstimate(out)


def lmmse_estimate(channels: ChannelSet, pattern: TrainingPattern, p_u: float, eps2: float,
                   channel_mean, channel_cov, rng) -> ChannelEstimate:
    Y = simulate_training(channels, pattern, p_u, eps2, rng)
    return lmmse_from_observation(Y, pattern, p_u, eps2, channel_mean, channel_cov)


def channel_statistics(H_tilde_samples) -> tuple[np.ndarray, np.ndarray]:
    """Sample mean and covariance ``E{(H - m)(H - m)^H}`` of composite channels.

    ``H_tilde_samples`` has shape (draws, K, N+1, M).
    """
    H = np.asarray(H_tilde_samples, dtype=complex)
    mean = H.mean(axis=0)
    D = H - mean
    cov = np.einsum("dkim,dkjm->kij", D, D.conj()) / H.shape[0]
    return mean, cov


def nmse(estimates, truths) -> float:
    est = np.asarray(estimates, dtype=complex)
    tru = np.asarray(truths, dtype=complex)
    if est.shape != tru.shape:
        raise ValueError("shape mismatch")
    den = float(np.sum(np.abs(tru) ** 2))
    if den == 0.0:
        raise ValueError("zero-energy reference channels")
    return float(np.sum(np.abs(est - tru) ** 2)) / den


def sample_csi_errors(error_model: ErrorModel, M: int, count: int, rng) -> np.ndarray:
    """Draw ``count`` CSI error matrices (count x (N+1) x M)."""
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(rng)
    T = error_model.sampling_matrix
    Z = complex_normal((count, T.shape[1], M), rng)
    return T @ Z


def save_error_models(path, models) -> None:
    np.savez(Path(path), **{f"V_bar_{k}": m.V_bar for k, m in enumerate(models)})
