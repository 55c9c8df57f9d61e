"""Grids, wave fields, polar decomposition and spectral derivatives.

Everything here lives on a uniform periodic 1-D grid.  Derivatives are
spectral, so they are exact for band-limited periodic data and the
physical scenarios are expected to keep their support well away from the
edges of the box.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

logger = logging.getLogger(__name__)

NORM_TOL = 1e-9


class StateVanishesError(ValueError):
    """Raised when every grid point of a state falls below the density floor."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Grid:
    """Uniform periodic grid with ``n`` points ``x_j = x_min + j*dx``."""

    x_min: float
    x_max: float
    n: int

    def __post_init__(self):
        if self.n < 16 or self.n & (self.n - 1):
            raise ValueError(f"grid size must be a power of two >= 16, got {self.n}")
        if not self.x_max > self.x_min:
            raise ValueError("x_max must exceed x_min")

    @property
    def periodic(self) -> bool:
        return True

    @property
    def length(self) -> float:
        return self.x_max - self.x_min

    @property
    def dx(self) -> float:
        return self.length / self.n

    @property
    def x(self) -> np.ndarray:
        return self.x_min + self.dx * np.arange(self.n)

    @property
    def k(self) -> np.ndarray:
        """Angular wavenumbers in FFT order."""
        return 2.0 * np.pi * np.fft.fftfreq(self.n, d=self.dx)

    def default_rho_floor(self) -> float:
        return 1e-12 / self.length


@dataclass(frozen=True)
class PotentialSpec:
    """External potential.

    ``kind`` is one of ``free``, ``harmonic`` (uses ``omega``), ``barrier``
    (``height``, ``width``, ``center``; rectangular) or ``custom_table``
    (``values`` sampled on the grid the potential is used with).
    """

    kind: str = "free"
    omega: float = 1.0
    height: float = 0.0
    width: float = 0.0
    center: float = 0.0
    values: Optional[tuple] = None

    def __post_init__(self):
        if self.kind not in ("free", "harmonic", "barrier", "custom_table"):
            raise ValueError(f"unknown potential kind {self.kind!r}")
        if self.kind == "harmonic" and not self.omega > 0:
            raise ValueError("harmonic omega must be > 0")
        if self.kind == "barrier" and not self.width > 0:
            raise ValueError("barrier width must be > 0")
        if self.kind == "custom_table":
            if self.values is None:
                raise ValueError("custom_table potential needs values")
            if not np.all(np.isfinite(np.asarray(self.values, dtype=float))):
                raise ValueError("custom_table values must be finite")

    def evaluate(self, grid: Grid, mass: float = 1.0) -> np.ndarray:
        x = grid.x
        if self.kind == "free":
            return np.zeros(grid.n)
        if self.kind == "harmonic":
            return 0.5 * mass * self.omega**2 * x**2
        if self.kind == "barrier":
            inside = np.abs(x - self.center) < 0.5 * self.width
            return np.where(inside, self.height, 0.0)
        values = np.asarray(self.values, dtype=float)
        if values.shape != (grid.n,):
            raise ValueError(f"custom_table has {values.size} values, grid has {grid.n}")
        return values.copy()


@dataclass(frozen=True)
class PhysicalParams:
    """Mass, Planck constant, interpolation parameter and potential.

    The diffusion coefficient per unit mass is ``sigma = hbar / mass``.
    ``lam = 0`` is ordinary quantum mechanics, ``lam = 1`` the fully
    classical (quantum potential removed) limit.
    """

    mass: float = 1.0
    hbar: float = 1.0
    lam: float = 0.0
    potential: PotentialSpec = field(default_factory=PotentialSpec)

    def __post_init__(self):
        if not self.mass > 0 or not self.hbar > 0:
            raise ValueError("mass and hbar must be positive")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lambda must lie in [0, 1], got {self.lam}")

    @property
    def sigma(self) -> float:
        return self.hbar / self.mass


@dataclass(frozen=True, eq=False)
class WaveField:
    """Complex amplitude on a grid, normalized so that sum |psi|^2 dx = 1."""

    grid: Grid
    amplitude: np.ndarray

    def __post_init__(self):
        amp = np.asarray(self.amplitude, dtype=complex)
        if amp.shape != (self.grid.n,):
            raise ValueError(f"amplitude has shape {amp.shape}, grid has {self.grid.n} points")
        norm2 = float(np.sum(np.abs(amp) ** 2) * self.grid.dx)
        if not abs(norm2 - 1.0) <= NORM_TOL:
            raise ValueError(f"state is not normalized (norm^2 = {norm2!r})")
        object.__setattr__(self, "amplitude", _frozen(amp))

    @classmethod
    def normalized(cls, grid: Grid, amplitude) -> "WaveField":
        amp = np.asarray(amplitude, dtype=complex)
        norm2 = np.sum(np.abs(amp) ** 2) * grid.dx
        if not np.isfinite(norm2) or norm2 <= 0:
            raise ValueError("cannot normalize a zero or non-finite amplitude")
        return cls(grid, amp / np.sqrt(norm2))

    @property
    def density(self) -> np.ndarray:
        return np.abs(self.amplitude) ** 2

    def norm(self) -> float:
        return float(np.sqrt(np.sum(self.density) * self.grid.dx))

    def mean_position(self) -> float:
        return float(np.sum(self.grid.x * self.density) * self.grid.dx)

    def width(self) -> float:
        """Standard deviation of position under |psi|^2."""
        x = self.grid.x
        rho = self.density
        mean = np.sum(x * rho) * self.grid.dx
        return float(np.sqrt(np.sum((x - mean) ** 2 * rho) * self.grid.dx))

    def mean_momentum(self, hbar: float = 1.0) -> float:
        phi = np.fft.fft(self.amplitude)
        weights = np.abs(phi) ** 2
        return float(hbar * np.sum(self.grid.k * weights) / np.sum(weights))


@dataclass(frozen=True, eq=False)
class PolarFields:
    """Density ``rho`` and unwrapped action ``S`` with ``psi = sqrt(rho) exp(iS/hbar)``.

    ``action`` is only meaningful where ``valid_mask`` is set; it is 0 elsewhere.
    """

    grid: Grid
    rho: np.ndarray
    action: np.ndarray
    valid_mask: np.ndarray
    hbar: float = 1.0

    def __post_init__(self):
        for name in ("rho", "action", "valid_mask"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        if np.any(self.rho < 0):
            raise ValueError("density must be nonnegative")


def _spectral_derivative(f: np.ndarray, grid: Grid, order: int) -> np.ndarray:
    f = np.asarray(f)
    ik = 1j * grid.k
    if order % 2:
        # the Nyquist mode has no well-defined odd derivative
        ik[grid.n // 2] = 0.0
    out = np.fft.ifft(np.fft.fft(f) * ik**order)
    return out if np.iscomplexobj(f) else out.real


def gradient(f: np.ndarray, grid: Grid) -> np.ndarray:
    """Spectral first derivative on the periodic grid."""
    return _spectral_derivative(f, grid, 1)


def laplacian(f: np.ndarray, grid: Grid) -> np.ndarray:
    """Spectral second derivative on the periodic grid."""
    return _spectral_derivative(f, grid, 2)


def _valid_runs(mask: np.ndarray):
    """Yield (start, stop) of maximal runs of True in ``mask``."""
    padded = np.concatenate(([False], mask, [False])).astype(np.int8)
    edges = np.flatnonzero(np.diff(padded))
    return zip(edges[::2], edges[1::2])


def polar_decompose(psi: WaveField, rho_floor: Optional[float] = None, hbar: float = 1.0) -> PolarFields:
    """Split ``psi`` into density and unwrapped action.

    Points with density below ``rho_floor`` are masked out.  The phase is
    unwrapped independently on every contiguous run of valid points, each
    run starting from the raw ``arg`` of its first point.
    """
    grid = psi.grid
    if rho_floor is None:
        rho_floor = grid.default_rho_floor()
    rho = psi.density
    valid = rho >= rho_floor
    if not valid.any():
        raise StateVanishesError("state vanishes everywhere")
    phase = np.angle(psi.amplitude)
    action = np.zeros(grid.n)
    for start, stop in _valid_runs(valid):
        action[start:stop] = np.unwrap(phase[start:stop])
    if not valid.all():
        logger.debug("polar_decompose: %d of %d points masked", grid.n - valid.sum(), grid.n)
    return PolarFields(grid, rho, hbar * action, valid, hbar)


def polar_compose(fields: PolarFields) -> WaveField:
    amp = np.sqrt(fields.rho) * np.exp(1j * fields.action / fields.hbar)
    return WaveField.normalized(fields.grid, amp)
