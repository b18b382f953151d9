"""Scenario geometry, path loss and Rician channel synthesis.

Layout follows the usual IRS downlink setup: an M-antenna ULA at the AP on
the x-axis, an N = Ny*Nz element UPA on the y-z plane and K single-antenna
users dropped uniformly in a disc on the x-y plane.

Channel conventions
-------------------
``G``      N x M, AP -> IRS
``h_r[k]`` length N, the IRS -> user k channel is ``h_r[k].conj()``
``h_d[k]`` length M, the AP -> user k channel is ``h_d[k].conj()``
``H[k]``   ``diag(h_r[k].conj()) @ G``
``H_tilde[k]`` rows ``[h_d[k].conj(); H[k]]`` so that the effective channel
for reflection vector ``v`` is ``v_tilde.conj() @ H_tilde[k]`` with
``v_tilde = [1, v]``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class ScenarioGeometry:
    M: int = 4
    N: int = 40
    K: int = 1
    N_y: int | None = None
    N_z: int | None = None
    ap_position: tuple = (2.0, 0.0, 0.0)
    irs_position: tuple = (0.0, 45.0, 2.0)
    user_cluster_center: tuple = (2.0, 45.0, 0.0)
    user_cluster_radius: float = 1.5

    def __post_init__(self):
        if self.M < 1 or self.N < 1 or self.K < 1:
            raise ValueError("M, N and K must be >= 1")
        if self.N_y is None and self.N_z is None:
            n_y, n_z = irs_grid(self.N)
            object.__setattr__(self, "N_y", n_y)
            object.__setattr__(self, "N_z", n_z)
        elif self.N_y is None or self.N_z is None:
            n_y = self.N_y if self.N_y is not None else self.N // self.N_z
            n_z = self.N_z if self.N_z is not None else self.N // self.N_y
            object.__setattr__(self, "N_y", n_y)
            object.__setattr__(self, "N_z", n_z)
        if self.N_y * self.N_z != self.N:
            raise ValueError(f"N_y*N_z = {self.N_y}*{self.N_z} != N = {self.N}")
        if self.user_cluster_radius < 0:
            raise ValueError("cluster radius must be non-negative")
        for name in ("ap_position", "irs_position", "user_cluster_center"):
            object.__setattr__(self, name, tuple(float(c) for c in getattr(self, name)))

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioGeometry":
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class PropagationParams:
    """Large-scale parameters, all linear (gains, Rician factors, Watts)."""

    C0: float = 1e-3
    D0: float = 1.0
    alpha_Au: float = 3.6
    alpha_AI: float = 2.2
    alpha_Iu: float = 2.2
    beta_Au: float = 0.0
    beta_AI: float = 10 ** 0.3
    beta_Iu: float = 0.0
    sigma2: float = 1e-11

    def __post_init__(self):
        if self.C0 <= 0 or self.D0 <= 0:
            raise ValueError("C0 and D0 must be positive")
        if min(self.alpha_Au, self.alpha_AI, self.alpha_Iu) <= 0:
            raise ValueError("path-loss exponents must be positive")
        if min(self.beta_Au, self.beta_AI, self.beta_Iu) < 0:
            raise ValueError("Rician factors must be non-negative")
        if self.sigma2 <= 0:
            raise ValueError("sigma2 must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "PropagationParams":
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class ChannelSet:
    G: np.ndarray
    h_r: np.ndarray
    h_d: np.ndarray
    user_positions: np.ndarray = field(default=None, repr=False)
    H: np.ndarray = field(init=False, repr=False)
    H_tilde: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        G = np.asarray(self.G, dtype=complex)
        h_r = np.atleast_2d(np.asarray(self.h_r, dtype=complex))
        h_d = np.atleast_2d(np.asarray(self.h_d, dtype=complex))
        N, M = G.shape
        if h_r.shape[1] != N or h_d.shape[1] != M or h_r.shape[0] != h_d.shape[0]:
            raise ValueError("inconsistent channel dimensions")
        H = h_r.conj()[:, :, None] * G[None, :, :]
        H_tilde = np.concatenate([h_d.conj()[:, None, :], H], axis=1)
        arrays = {"G": G, "h_r": h_r, "h_d": h_d, "H": H, "H_tilde": H_tilde}
        for name, arr in arrays.items():
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"non-finite entries in {name}")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.user_positions is not None:
            pos = np.array(self.user_positions, dtype=float)
            pos.setflags(write=False)
            object.__setattr__(self, "user_positions", pos)

    @property
    def K(self) -> int:
        return self.h_d.shape[0]

    @property
    def N(self) -> int:
        return self.G.shape[0]

    @property
    def M(self) -> int:
        return self.G.shape[1]

    def effective_channel(self, v: np.ndarray, k: int) -> np.ndarray:
        """Row vector ``h_r,k^H Theta G + h_d,k^H`` for ``v = diag(Theta^*)``."""
        return augment(v).conj() @ self.H_tilde[k]

    def save(self, path) -> None:
        np.savez(path, G=self.G, h_r=self.h_r, h_d=self.h_d,
                 user_positions=np.zeros((0, 3)) if self.user_positions is None
                 else self.user_positions)

    @classmethod
    def load(cls, path) -> "ChannelSet":
        with np.load(path) as data:
            pos = data["user_positions"]
            return cls(G=data["G"], h_r=data["h_r"], h_d=data["h_d"],
                       user_positions=pos if pos.size else None)


def augment(v: np.ndarray) -> np.ndarray:
    """Return ``[1, v]`` (works on the last axis for batches)."""
    v = np.asarray(v, dtype=complex)
    ones = np.ones(v.shape[:-1] + (1,), dtype=complex)
    return np.concatenate([ones, v], axis=-1)


def irs_grid(N: int, preferred_ny: int = 4) -> tuple[int, int]:
    """Pick (N_y, N_z) with N_y the largest divisor of N not above ``preferred_ny``."""
    for n_y in range(min(preferred_ny, N), 0, -1):
        if N % n_y == 0:
            return n_y, N // n_y
    return 1, N


def path_loss(d, alpha: float, params: PropagationParams):
    """Distance-dependent power gain ``C0 * (d / D0) ** -alpha``."""
    d = np.asarray(d, dtype=float)
    if np.any(d <= 0):
        raise ValueError("distance must be positive")
    return params.C0 * (d / params.D0) ** (-alpha)


def complex_normal(shape, rng) -> np.ndarray:
    """i.i.d. CN(0, 1) entries."""
    rng = np.random.default_rng(rng)
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def sample_rician_channel(shape, beta: float, los, gain: float = 1.0, rng=None) -> np.ndarray:
    """Draw ``sqrt(gain) * (sqrt(b/(1+b)) LoS + sqrt(1/(1+b)) NLoS)``.

    ``los`` must be unit modulus with the requested shape; the NLoS part is
    CN(0, 1) per entry, so every entry has second moment ``gain``.
    """
    if beta < 0:
        raise ValueError("Rician factor must be non-negative")
    los = np.broadcast_to(np.asarray(los, dtype=complex), shape)
    nlos = complex_normal(shape, rng)
    return np.sqrt(gain) * (np.sqrt(beta / (1.0 + beta)) * los + np.sqrt(1.0 / (1.0 + beta)) * nlos)


def _ula_offsets(M: int) -> np.ndarray:
    # half-wavelength units, along x
    offsets = np.zeros((M, 3))
    offsets[:, 0] = np.arange(M)
    return offsets


def _upa_offsets(N_y: int, N_z: int) -> np.ndarray:
    iy, iz = np.meshgrid(np.arange(N_y), np.arange(N_z), indexing="xy")
    offsets = np.zeros((N_y * N_z, 3))
    offsets[:, 1] = iy.ravel()
    offsets[:, 2] = iz.ravel()
    return offsets


def steering(direction: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    """Far-field array response ``exp(j*pi*<u, r_n>)`` with offsets in half wavelengths."""
    return np.exp(1j * np.pi * offsets @ direction)


def _unit(a, b) -> tuple[np.ndarray, float]:
    diff = np.asarray(b, dtype=float) - np.asarray(a, dtype=float)
    d = float(np.linalg.norm(diff))
    return diff / d, d


def drop_users(geometry: ScenarioGeometry, rng) -> np.ndarray:
    """Uniform positions in the user disc (z of the cluster centre kept)."""
    rng = np.random.default_rng(rng)
    r = geometry.user_cluster_radius * np.sqrt(rng.uniform(size=geometry.K))
    phi = rng.uniform(0.0, 2.0 * np.pi, size=geometry.K)
    centre = np.asarray(geometry.user_cluster_center, dtype=float)
    pos = np.tile(centre, (geometry.K, 1))
    pos[:, 0] += r * np.cos(phi)
    pos[:, 1] += r * np.sin(phi)
    return pos


def synthesize_scenario(geometry: ScenarioGeometry, params: PropagationParams, rng_seed,
                        user_positions=None) -> ChannelSet:
    """Draw one ground-truth channel realisation.

    The seed is split into two independent streams (user drop, fading) so a
    fixed ``user_positions`` with different seeds gives independent fading
    at the same locations.
    """
    pos_seq, fade_seq = np.random.SeedSequence(_entropy(rng_seed)).spawn(2)
    if user_positions is None:
        user_positions = drop_users(geometry, np.random.default_rng(pos_seq))
    user_positions = np.atleast_2d(np.asarray(user_positions, dtype=float))
    if user_positions.shape != (geometry.K, 3):
        raise ValueError("user_positions must be K x 3")
    rng = np.random.default_rng(fade_seq)

    ap = np.asarray(geometry.ap_position)
    irs = np.asarray(geometry.irs_position)
    ap_off = _ula_offsets(geometry.M)
    irs_off = _upa_offsets(geometry.N_y, geometry.N_z)

    u_ai, d_ai = _unit(ap, irs)
    G_los = np.outer(steering(-u_ai, irs_off), steering(u_ai, ap_off))
    G = sample_rician_channel((geometry.N, geometry.M), params.beta_AI, G_los,
                              path_loss(d_ai, params.alpha_AI, params), rng)

    h_r = np.empty((geometry.K, geometry.N), dtype=complex)
    h_d = np.empty((geometry.K, geometry.M), dtype=complex)
    for k, pos in enumerate(user_positions):
        u_au, d_au = _unit(ap, pos)
        u_iu, d_iu = _unit(irs, pos)
        h_d[k] = sample_rician_channel((geometry.M,), params.beta_Au, steering(u_au, ap_off),
                                       path_loss(d_au, params.alpha_Au, params), rng)
        h_r[k] = sample_rician_channel((geometry.N,), params.beta_Iu, steering(u_iu, irs_off),
                                       path_loss(d_iu, params.alpha_Iu, params), rng)
    return ChannelSet(G=G, h_r=h_r, h_d=h_d, user_positions=user_positions)


def _entropy(seed):
    if isinstance(seed, np.random.SeedSequence):
        return seed.entropy if seed.spawn_key == () else seed.generate_state(4)
    return seed


def load_scenario(path) -> tuple[ScenarioGeometry, PropagationParams]:
    """Read a JSON scenario file with ``geometry`` and ``propagation`` objects."""
    cfg = json.loads(Path(path).read_text())
    return (ScenarioGeometry.from_dict(cfg.get("geometry", {})),
            PropagationParams.from_dict(cfg.get("propagation", {})))
