"""Uniform linear array model, steering dictionary and real embedding.

Phases follow ``a_m(theta) = exp(-j * mu_m * Omega * cos(theta))`` with the
first sensor as the phase reference.  Geometry is expressed through spacing
multiples of the adjacent-sensor separation; for a separation of ``s``
wavelengths the per-multiple phase scale ``mu * Omega`` is ``2 * pi * s``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

__all__ = [
    "ArrayGeometry",
    "AngularGrid",
    "ComplexSnapshot",
    "RealEmbedding",
    "steering_vector",
    "build_dictionary",
    "realify_dictionary",
    "realify_vector",
    "complexify_vector",
    "synthesize_snapshot",
    "embed",
]


class DomainError(ValueError):
    """An angle or parameter outside the model's domain."""


@dataclass(frozen=True)
class ArrayGeometry:
    """Sensor layout of a linear array.

    Parameters
    ----------
    spacing_multiples : sequence of float
        Position of each sensor in units of the adjacent separation.  The
        first entry must be 0 and entries must increase strictly.
    phase_scale : float
        ``mu_1 * Omega`` for a unit spacing multiple, in radians.  Half
        wavelength spacing gives ``pi``.
    """

    spacing_multiples: tuple[float, ...]
    phase_scale: float = np.pi

    def __post_init__(self):
        sm = tuple(float(s) for s in self.spacing_multiples)
        if len(sm) == 0:
            raise ValueError("geometry needs at least one sensor")
        if sm[0] != 0.0:
            raise ValueError("first spacing multiple must be exactly 0")
        if any(b <= a for a, b in zip(sm, sm[1:])):
            raise ValueError("spacing multiples must be strictly increasing")
        object.__setattr__(self, "spacing_multiples", sm)

    @classmethod
    def ula(cls, num_sensors: int, spacing_wavelengths: float = 0.5) -> "ArrayGeometry":
        """Uniform array of ``num_sensors`` with the given separation."""
        if num_sensors < 1:
            raise ValueError("num_sensors must be positive")
        return cls(tuple(range(num_sensors)), 2.0 * np.pi * spacing_wavelengths)

    @property
    def num_sensors(self) -> int:
        return len(self.spacing_multiples)

    @property
    def mu(self) -> np.ndarray:
        """Per-sensor phase coefficient ``mu_m * Omega``."""
        return self.phase_scale * np.asarray(self.spacing_multiples)


@dataclass(frozen=True)
class AngularGrid:
    """Uniform grid of candidate DOAs in degrees, ascending."""

    angles: np.ndarray = field(repr=False)
    spacing: float = 1.0

    def __post_init__(self):
        angles = np.asarray(self.angles, dtype=float)
        if angles.ndim != 1 or angles.size < 1:
            raise ValueError("grid angles must be a non-empty 1-D array")
        if np.any(np.diff(angles) <= 0):
            raise ValueError("grid angles must be strictly ascending")
        if angles[0] < 0.0 or angles[-1] > 180.0:
            raise DomainError("grid angles must lie in [0, 180] degrees")
        if self.spacing <= 0:
            raise ValueError("grid spacing must be positive")
        angles.setflags(write=False)
        object.__setattr__(self, "angles", angles)

    @classmethod
    def uniform(cls, spacing: float = 1.0) -> "AngularGrid":
        n = int(round(180.0 / spacing)) + 1
        if n < 2 or not np.isclose((n - 1) * spacing, 180.0):
            raise ValueError("spacing must divide 180 degrees")
        return cls(np.linspace(0.0, 180.0, n), float(spacing))

    def __len__(self) -> int:
        return self.angles.size

    def index_of(self, theta: float) -> int:
        """Grid index of ``theta``; raises if it is not a grid angle."""
        idx = int(np.argmin(np.abs(self.angles - theta)))
        if not np.isclose(self.angles[idx], theta, rtol=0.0, atol=1e-9):
            raise DomainError(f"angle {theta} deg is not on the grid")
        return idx


@dataclass(frozen=True)
class ComplexSnapshot:
    y: np.ndarray
    k: int = 0


@dataclass(frozen=True)
class RealEmbedding:
    A_tilde: np.ndarray
    y_tilde: np.ndarray


def _check_angle(theta):
    theta = np.asarray(theta, dtype=float)
    if np.any(theta < 0.0) or np.any(theta > 180.0) or np.any(~np.isfinite(theta)):
        raise DomainError("DOA must lie in [0, 180] degrees")
    return theta


def _cosd(theta):
    # exact 0 at 90 deg and exact sign flip between theta and 180 - theta
    return np.sin(np.deg2rad(90.0 - theta))


def steering_vector(geom: ArrayGeometry, theta: float) -> np.ndarray:
    """Complex response of each sensor to a plane wave from ``theta`` degrees."""
    phase = geom.mu * _cosd(_check_angle(theta))
    return np.exp(-1j * phase)


def build_dictionary(geom: ArrayGeometry, grid: AngularGrid) -> np.ndarray:
    """M x N matrix whose columns are steering vectors over ``grid``."""
    return np.exp(-1j * np.outer(geom.mu, _cosd(_check_angle(grid.angles))))


def realify_dictionary(A: np.ndarray) -> np.ndarray:
    """Stack a complex matrix as ``[[Re, -Im], [Im, Re]]``."""
    A = np.asarray(A)
    re, im = A.real, A.imag
    return np.block([[re, -im], [im, re]]).astype(float)


def realify_vector(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v)
    return np.concatenate([v.real, v.imag]).astype(float)


def complexify_vector(w: np.ndarray) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if w.ndim != 1 or w.size % 2:
        raise ValueError(f"expected an even-length 1-D vector, got shape {w.shape}")
    n = w.size // 2
    return w[:n] + 1j * w[n:]


def synthesize_snapshot(
    geom: ArrayGeometry,
    grid: AngularGrid,
    true_signals: Mapping[float, complex],
    noise_var: float,
    rng_seed=None,
    k: int = 0,
    dictionary: np.ndarray | None = None,
) -> ComplexSnapshot:
    """Draw ``y = A x + n`` for on-grid sources.

    Each real and imaginary noise component has variance ``noise_var``.
    ``rng_seed`` may be an int, a ``SeedSequence`` or a ``Generator``.
    """
    if noise_var < 0:
        raise ValueError("noise variance must be non-negative")
    A = build_dictionary(geom, grid) if dictionary is None else dictionary
    x = np.zeros(len(grid), dtype=complex)
    for theta, amp in true_signals.items():
        x[grid.index_of(theta)] += amp
    y = A @ x
    if noise_var > 0:
        rng = np.random.default_rng(rng_seed)
        noise = rng.normal(0.0, np.sqrt(noise_var), size=(2, geom.num_sensors))
        y = y + noise[0] + 1j * noise[1]
    return ComplexSnapshot(y=y, k=k)


def embed(A: np.ndarray, y: np.ndarray) -> RealEmbedding:
    return RealEmbedding(realify_dictionary(A), realify_vector(y))


def snapshot_matrix(snapshots: Sequence[ComplexSnapshot]) -> np.ndarray:
    return np.stack([s.y for s in snapshots])
