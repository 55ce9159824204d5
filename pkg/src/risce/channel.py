"""Geometric ULA channel synthesis and the distance-based path-loss model.

Two tandem narrowband channels are modelled: mobile-to-surface (``h_mr``,
shape ``n_ris x n_ms``) and surface-to-base (``h_rb``, shape ``n_bs x n_ris``).
Each is a sum of a few planar paths over half-wavelength uniform linear
arrays, parameterised by departure/arrival angles and complex gains.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

SPEED_OF_LIGHT = 3.0e8

__all__ = [
    "ArrayGeometry",
    "PathParams",
    "ChannelRealization",
    "PathLossModel",
    "Geometry2D",
    "array_response",
    "sine_steering",
    "min_circular_separation",
    "sample_path_params",
    "build_channel",
    "cascaded_channel",
    "effective_channel",
    "effective_channel_from_differences",
    "sample_channel",
]


@dataclass(frozen=True)
class ArrayGeometry:
    """Uniform linear array with half-wavelength element spacing."""

    n_elements: int
    spacing: float = 0.5

    def __post_init__(self):
        if self.n_elements < 2:
            raise ValueError(f"array needs at least 2 elements, got {self.n_elements}")
        if self.spacing != 0.5:
            raise ValueError("only half-wavelength spacing is supported")


def array_response(geometry: ArrayGeometry, angle: float) -> np.ndarray:
    """Steering vector of a ULA at the given angle (radians).

    Entry ``n`` (0-based) is ``exp(j*pi*n*sin(angle))``; all entries have
    unit modulus. The angle must lie strictly inside (-pi/2, pi/2).
    """
    angle = float(angle)
    if not -np.pi / 2 < angle < np.pi / 2:
        raise ValueError(f"angle {angle} outside (-pi/2, pi/2)")
    n = np.arange(geometry.n_elements)
    return np.exp(1j * np.pi * n * np.sin(angle))


def sine_steering(n_elements: int, sine: float) -> np.ndarray:
    """Steering vector parameterised directly by a sine value.

    ``sine_steering(n, sin(a)) == array_response(ArrayGeometry(n), a)``, but
    arbitrary real arguments are accepted (used for angle differences whose
    sine can exceed 1 in magnitude before wrapping).
    """
    return np.exp(1j * np.pi * np.arange(n_elements) * sine)


def min_circular_separation(values: np.ndarray, period: float = 1.0) -> float:
    """Smallest pairwise circular distance of ``values`` on [0, period)."""
    v = np.sort(np.mod(np.asarray(values, dtype=float), period))
    if v.size < 2:
        return math.inf
    gaps = np.diff(v, append=v[0] + period)
    return float(gaps.min())


@dataclass(frozen=True)
class PathParams:
    """Angles and complex gains of one geometric channel hop.

    ``aod`` holds departure angles, ``aoa`` arrival angles, both in radians
    and strictly inside (-pi/2, pi/2). All three arrays have length
    ``n_paths``.
    """

    n_paths: int
    aod: np.ndarray
    aoa: np.ndarray
    gains: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "aod", np.atleast_1d(np.asarray(self.aod, dtype=float)))
        object.__setattr__(self, "aoa", np.atleast_1d(np.asarray(self.aoa, dtype=float)))
        object.__setattr__(self, "gains", np.atleast_1d(np.asarray(self.gains, dtype=complex)))
        if self.n_paths < 1:
            raise ValueError("n_paths must be positive")
        for name in ("aod", "aoa", "gains"):
            arr = getattr(self, name)
            if arr.shape != (self.n_paths,):
                raise ValueError(f"{name} must have length {self.n_paths}, got shape {arr.shape}")
        for name in ("aod", "aoa"):
            arr = getattr(self, name)
            if not np.all((arr > -np.pi / 2) & (arr < np.pi / 2)):
                raise ValueError(f"{name} angles must lie in (-pi/2, pi/2)")


def sample_path_params(
    rng: np.random.Generator,
    rx_geom: ArrayGeometry,
    tx_geom: ArrayGeometry,
    n_paths: int,
    min_sep: float | None = None,
    max_attempts: int = 100_000,
) -> PathParams:
    """Draw random path parameters for one hop.

    Gains are i.i.d. standard complex normal. Sines of the angles are drawn
    uniformly on (-1, 1) and rejected until, at both ends of the hop, the
    values taken modulo 1 are pairwise circularly separated by at least
    ``min_sep``. The default separation is ``max(4/n_rx, 4/n_tx)``.
    """
    if min_sep is None:
        min_sep = max(4.0 / rx_geom.n_elements, 4.0 / tx_geom.n_elements)
    if n_paths * min_sep >= 1.0:
        raise ConfigError(
            f"cannot pack {n_paths} frequencies with circular separation {min_sep} on the unit interval"
        )

    def draw_sines() -> np.ndarray:
        for _ in range(max_attempts):
            s = rng.uniform(-1.0, 1.0, size=n_paths)
            if n_paths == 1 or min_circular_separation(s, period=1.0) >= min_sep:
                return s
        raise ConfigError("separation rejection sampling failed to terminate")

    aoa = np.arcsin(draw_sines())
    aod = np.arcsin(draw_sines())
    gains = (rng.standard_normal(n_paths) + 1j * rng.standard_normal(n_paths)) / np.sqrt(2.0)
    return PathParams(n_paths=n_paths, aod=aod, aoa=aoa, gains=gains)


def build_channel(params: PathParams, rx_geom: ArrayGeometry, tx_geom: ArrayGeometry) -> np.ndarray:
    """Assemble ``A(aoa) diag(gains) A(aod)^H`` for one hop."""
    a_rx = np.stack([array_response(rx_geom, a) for a in params.aoa], axis=1)
    a_tx = np.stack([array_response(tx_geom, a) for a in params.aod], axis=1)
    return (a_rx * params.gains) @ a_tx.conj().T


@dataclass(frozen=True)
class ChannelRealization:
    """One draw of the two tandem hops together with their parameters."""

    h_mr: np.ndarray
    h_rb: np.ndarray
    params_mr: PathParams
    params_rb: PathParams

    @classmethod
    def from_params(
        cls,
        params_mr: PathParams,
        params_rb: PathParams,
        bs: ArrayGeometry,
        ris: ArrayGeometry,
        ms: ArrayGeometry,
    ) -> "ChannelRealization":
        return cls(
            h_mr=build_channel(params_mr, ris, ms),
            h_rb=build_channel(params_rb, bs, ris),
            params_mr=params_mr,
            params_rb=params_rb,
        )

    @property
    def n_ms(self) -> int:
        return self.h_mr.shape[1]

    @property
    def n_ris(self) -> int:
        return self.h_mr.shape[0]

    @property
    def n_bs(self) -> int:
        return self.h_rb.shape[0]


def sample_channel(
    rng: np.random.Generator,
    bs: ArrayGeometry,
    ris: ArrayGeometry,
    ms: ArrayGeometry,
    n_paths_mr: int = 2,
    n_paths_rb: int = 2,
    min_sep_mr: float | None = None,
    min_sep_rb: float | None = None,
) -> ChannelRealization:
    """Sample both hops of a realization with separated spatial frequencies."""
    params_mr = sample_path_params(rng, ris, ms, n_paths_mr, min_sep_mr)
    params_rb = sample_path_params(rng, bs, ris, n_paths_rb, min_sep_rb)
    return ChannelRealization.from_params(params_mr, params_rb, bs, ris, ms)


def _check_phase_matrix(omega: np.ndarray, n: int) -> np.ndarray:
    omega = np.asarray(omega, dtype=complex)
    if omega.shape != (n, n):
        raise ValueError(f"phase matrix must be {n}x{n}, got {omega.shape}")
    off = omega - np.diag(np.diag(omega))
    if np.abs(off).max(initial=0.0) > 0.0:
        raise ValueError("phase matrix must be diagonal")
    mod = np.abs(np.diag(omega))
    if not np.all((np.abs(mod - 1.0) < 1e-9) | (mod < 1e-9)):
        raise ValueError("diagonal entries must have unit modulus or be zero")
    return omega


def cascaded_channel(real: ChannelRealization, omega: np.ndarray) -> np.ndarray:
    """End-to-end channel ``h_rb @ omega @ h_mr`` for a diagonal phase matrix."""
    omega = _check_phase_matrix(omega, real.n_ris)
    return real.h_rb @ omega @ real.h_mr


def effective_channel(real: ChannelRealization, omega: np.ndarray) -> np.ndarray:
    """Low-dimensional coupling matrix between the two hops.

    Returns ``diag(g_rb) A(aod_rb)^H omega A(aoa_mr) diag(g_mr)`` of shape
    ``(n_paths_rb, n_paths_mr)``. Entry (p, l) equals
    ``g_rb[p] * g_mr[l] * omega_diag @ steering(sin(aoa_mr[l]) - sin(aod_rb[p]))``,
    the angle-difference form implemented by
    :func:`effective_channel_from_differences`.
    """
    omega = _check_phase_matrix(omega, real.n_ris)
    ris = ArrayGeometry(real.n_ris)
    a_out = np.stack([array_response(ris, a) for a in real.params_rb.aod], axis=1)
    a_in = np.stack([array_response(ris, a) for a in real.params_mr.aoa], axis=1)
    return (real.params_rb.gains[:, None] * (a_out.conj().T @ omega @ a_in)) * real.params_mr.gains[None, :]


def effective_channel_from_differences(real: ChannelRealization, omega: np.ndarray) -> np.ndarray:
    """Angle-difference form of :func:`effective_channel` (same value)."""
    omega = _check_phase_matrix(omega, real.n_ris)
    w = np.diag(omega)
    sin_in = np.sin(real.params_mr.aoa)
    sin_out = np.sin(real.params_rb.aod)
    g = np.empty((real.params_rb.n_paths, real.params_mr.n_paths), dtype=complex)
    for p in range(real.params_rb.n_paths):
        for l in range(real.params_mr.n_paths):
            g[p, l] = (
                real.params_rb.gains[p]
                * real.params_mr.gains[l]
                * (w @ sine_steering(real.n_ris, sin_in[l] - sin_out[p]))
            )
    return g


@dataclass(frozen=True)
class PathLossModel:
    """Distance power law ``beta(d) = beta0 * (d0 / d)^gamma``.

    ``beta0 = (wavelength / (4 pi d0))^2`` is the reference-distance value.
    The two-hop variant ``beta(d1, d2)`` replaces ``d`` by the product
    ``d1*d2``. Signal amplitudes scale with ``sqrt(beta)``.
    """

    d0: float = 1.0
    gamma: float = 3.0
    fc: float = 28e9

    def __post_init__(self):
        if self.d0 <= 0 or self.gamma <= 0 or self.fc <= 0:
            raise ValueError("d0, gamma and fc must be positive")

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.fc

    @property
    def beta0(self) -> float:
        return (self.wavelength / (4.0 * np.pi * self.d0)) ** 2

    def path_loss(self, d1: float, d2: float | None = None) -> float:
        """``beta(d1)`` or the two-hop ``beta(d1, d2)``."""
        if d1 <= 0 or (d2 is not None and d2 <= 0):
            raise ValueError("distances must be positive")
        d = d1 if d2 is None else d1 * d2
        return self.beta0 * (self.d0 / d) ** self.gamma

    def amplitude(self, d1: float, d2: float | None = None) -> float:
        """Amplitude scale factor applied to the signal term, ``sqrt(beta)``."""
        return math.sqrt(self.path_loss(d1, d2))


def path_loss(model: PathLossModel, d1: float, d2: float | None = None) -> float:
    """Module-level alias for :meth:`PathLossModel.path_loss`."""
    return model.path_loss(d1, d2)


@dataclass(frozen=True)
class Geometry2D:
    """Planar positions of the three terminals, in meters."""

    bs: tuple[float, float]
    ris: tuple[float, float]
    ms: tuple[float, float]

    def __post_init__(self):
        if self.d1 <= 0 or self.d2 <= 0:
            raise ValueError("terminals must not be co-located")

    @classmethod
    def from_distances(cls, d_t: float = 25.0, d_x: float = 10.0, d_y: float = 2.0) -> "Geometry2D":
        """Layout with the base station at the origin, the mobile at
        ``(d_t, 0)`` and the surface at ``(d_t - d_x, d_y)``."""
        return cls(bs=(0.0, 0.0), ris=(d_t - d_x, d_y), ms=(d_t, 0.0))

    @property
    def d1(self) -> float:
        """Mobile-to-surface distance."""
        return math.dist(self.ms, self.ris)

    @property
    def d2(self) -> float:
        """Surface-to-base distance."""
        return math.dist(self.ris, self.bs)
