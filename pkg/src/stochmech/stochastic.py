"""Nelson diffusion: drift fields, ensemble propagation and Born-rule fits.

The forward process is ``dX = b(X, t) dt + sqrt(sigma) dW`` with
``sigma = hbar/m`` and forward drift ``b = v + u`` built from the current
velocity ``v = S'/m`` and osmotic velocity ``u = (sigma/2) (log rho)'``.

Noise is counter-based: the normal increment of particle ``i`` at step
``k`` depends only on ``(seed, i, k)``, so splitting an ensemble into
chunks (serially or in parallel) reproduces the same paths bit for bit.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Optional

import numba
import numpy as np

from .dynamics import Trajectory
from .fields import Grid, PhysicalParams, WaveField, gradient

logger = logging.getLogger(__name__)

_INIT_STREAM = 0
_NOISE_STREAM = 1


def _frozen(a) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class VelocityFields:
    grid: Grid
    v: np.ndarray
    u: np.ndarray
    b: np.ndarray
    valid_mask: np.ndarray
    n_clamped: int = 0

    @property
    def b_star(self) -> np.ndarray:
        """Backward drift ``v - u``."""
        return self.v - self.u


@dataclass(frozen=True, eq=False)
class ParticleEnsemble:
    """Walker positions at ``time``.

    ``step`` counts SDE steps taken so far and, together with ``seed``, is
    the whole random-number state.
    """

    positions: np.ndarray
    time: float
    seed: int
    step: int = 0

    def __post_init__(self):
        if len(self.positions) < 1:
            raise ValueError("an ensemble needs at least one particle")
        object.__setattr__(self, "positions", _frozen(np.asarray(self.positions, dtype=float)))

    def __len__(self):
        return len(self.positions)

    @property
    def rng_state(self) -> tuple:
        return (self.seed, self.step)


@dataclass(frozen=True, eq=False)
class FitResult:
    l1_distance: float
    ks_statistic: float
    n_particles: int
    n_bins: int
    edges: Optional[np.ndarray] = None
    p_model: Optional[np.ndarray] = None
    p_empirical: Optional[np.ndarray] = None


def default_clamp(grid: Grid) -> float:
    return 100.0 * grid.length


def drift_fields(psi: WaveField, params: PhysicalParams, clamp: Optional[float] = None,
                 rho_floor: Optional[float] = None) -> VelocityFields:
    """Current, osmotic and forward-drift velocities of ``psi``.

    Uses ``psi'/psi = R'/R + i S'/hbar``: ``u = sigma Re(psi'/psi)`` equals
    ``(sigma/2)(log rho)'`` and ``v = sigma Im(psi'/psi)`` equals ``S'/m``.
    Unlike differentiating ``S`` or ``log rho`` directly, this only takes
    spectral derivatives of a periodic smooth function.
    """
    grid = psi.grid
    if clamp is None:
        clamp = default_clamp(grid)
    if not clamp > 0:
        raise ValueError("clamp must be positive")
    if rho_floor is None:
        rho_floor = grid.default_rho_floor()
    amp = psi.amplitude
    valid = psi.density >= rho_floor
    v = np.zeros(grid.n)
    u = np.zeros(grid.n)
    ratio = gradient(amp, grid)[valid] / amp[valid]
    v[valid] = params.sigma * ratio.imag
    u[valid] = params.sigma * ratio.real
    n_clamped = int(np.sum(np.abs(v) > clamp) + np.sum(np.abs(u) > clamp))
    if n_clamped:
        logger.info("drift_fields: clamped %d velocity values to +-%g", n_clamped, clamp)
        v = np.clip(v, -clamp, clamp)
        u = np.clip(u, -clamp, clamp)
    return VelocityFields(grid, _frozen(v), _frozen(u), _frozen(v + u), _frozen(valid), n_clamped)


def _wrap(x: np.ndarray, grid: Grid) -> np.ndarray:
    y = grid.x_min + np.mod(x - grid.x_min, grid.length)
    # mod can round up to exactly the period
    return np.where(y >= grid.x_max, grid.x_min, y)


def _cell_cdf(psi: WaveField):
    """Edges and cumulative mass of the piecewise-constant density
    ``|psi_j|^2`` on cells centred at the grid points (periodic)."""
    grid = psi.grid
    rho = psi.density
    dx = grid.dx
    edges = np.concatenate(([grid.x_min], grid.x_min + dx * (np.arange(grid.n) + 0.5), [grid.x_max]))
    mass = np.concatenate(([0.5 * rho[0]], rho[1:], [0.5 * rho[0]])) * dx
    cum = np.concatenate(([0.0], np.cumsum(mass)))
    return edges, cum / cum[-1]


def model_cdf(psi: WaveField, x) -> np.ndarray:
    edges, cum = _cell_cdf(psi)
    return np.interp(x, edges, cum)


def sample_initial(psi: WaveField, n: int, seed: int) -> ParticleEnsemble:
    """Draw ``n`` positions from ``|psi|^2``: pick a grid cell by inverse CDF,
    then place the particle uniformly inside it."""
    if n < 1:
        raise ValueError("n must be >= 1")
    grid = psi.grid
    rng = np.random.default_rng([seed, _INIT_STREAM])
    weights = np.cumsum(psi.density)
    cells = np.searchsorted(weights, rng.random(n) * weights[-1], side="right")
    cells = np.minimum(cells, grid.n - 1)
    jitter = rng.random(n) - 0.5
    return ParticleEnsemble(_wrap(grid.x[cells] + jitter * grid.dx, grid), 0.0, seed, 0)


@numba.njit(cache=True)
def _box_muller(raw, skip, start, n):
    out = np.empty(n)
    first_pair = start // 2
    last_pair = (start + n - 1) // 2
    for p in range(first_pair, last_pair + 1):
        w = skip + 2 * (p - first_pair)
        u1 = (float(raw[w] >> np.uint64(11)) + 0.5) * 2.0**-53
        u2 = (float(raw[w + 1] >> np.uint64(11)) + 0.5) * 2.0**-53
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        i = 2 * p - start
        if i >= 0:
            out[i] = r * np.cos(theta)
        if i + 1 < n:
            out[i + 1] = r * np.sin(theta)
    return out


def _raw_words(seed: int, step: int, n: int, start: int):
    # particles 2p, 2p+1 share the Box-Muller pair built from words 2p, 2p+1;
    # Philox yields 4 words per counter value, i.e. two pairs
    first_pair = start // 2
    last_pair = (start + n - 1) // 2
    first_block = first_pair // 2
    skip = 2 * (first_pair - 2 * first_block)
    key = np.random.SeedSequence([seed, _NOISE_STREAM]).generate_state(2, np.uint64)
    bitgen = np.random.Philox(key=key, counter=np.array([first_block, 0, step, 0], dtype=np.uint64))
    return bitgen.random_raw(skip + 2 * (last_pair - first_pair + 1)), skip


def particle_normals(seed: int, step: int, n: int, start: int = 0) -> np.ndarray:
    """Standard normals for particles ``start .. start+n-1`` at ``step``.

    The stream is Philox keyed by the seed with the step index in the
    counter, so any slice of particles can be regenerated on its own.
    """
    raw, skip = _raw_words(seed, step, n, start)
    return _box_muller(raw, skip, start, n)


@numba.njit(cache=True)
def _interp_periodic(values, x_min, dx, x):
    n_grid = values.shape[0]
    out = np.empty(x.shape[0])
    for m in range(x.shape[0]):
        s = (x[m] - x_min) / dx
        j = np.floor(s)
        frac = s - j
        jj = int(j) % n_grid
        out[m] = (1.0 - frac) * values[jj] + frac * values[(jj + 1) % n_grid]
    return out


def interpolate_periodic(values: np.ndarray, grid: Grid, x: np.ndarray) -> np.ndarray:
    """Linear interpolation of grid samples at arbitrary (wrapped) positions."""
    return _interp_periodic(np.ascontiguousarray(values, dtype=np.float64), grid.x_min, grid.dx,
                            np.ascontiguousarray(x, dtype=np.float64))


@numba.njit(cache=True)
def _em_update(x, b, x_min, dx, length, dt, noise_scale, noise):
    n_grid = b.shape[0]
    out = np.empty(x.shape[0])
    for m in range(x.shape[0]):
        s = (x[m] - x_min) / dx
        j = np.floor(s)
        frac = s - j
        jj = int(j) % n_grid
        drift = (1.0 - frac) * b[jj] + frac * b[(jj + 1) % n_grid]
        y = x[m] + drift * dt + noise_scale * noise[m]
        y = x_min + np.mod(y - x_min, length)
        if y >= x_min + length:
            y = x_min
        out[m] = y
    return out


def sde_step(ens: ParticleEnsemble, fields: VelocityFields, params: PhysicalParams, dt: float) -> ParticleEnsemble:
    """One Euler-Maruyama step ``X += b(X) dt + sqrt(sigma dt) xi``, with the
    drift linearly interpolated to the particles and positions wrapped."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    grid = fields.grid
    noise = particle_normals(ens.seed, ens.step, len(ens))
    x = _em_update(ens.positions, np.ascontiguousarray(fields.b), grid.x_min, grid.dx, grid.length,
                   dt, np.sqrt(params.sigma * dt), noise)
    return ParticleEnsemble(x, ens.time + dt, ens.seed, ens.step + 1)


def propagate_ensemble(ens0: ParticleEnsemble, traj: Trajectory, params: PhysicalParams,
                       substeps: int = 1, clamp: Optional[float] = None) -> ParticleEnsemble:
    """Carry ``ens0`` along ``traj``, taking ``substeps`` SDE steps per snapshot
    interval with the drift frozen at the interval's starting snapshot."""
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    t0 = traj.times[0]
    if abs(ens0.time - t0) > 1e-12 * max(1.0, abs(t0)):
        raise ValueError(f"ensemble time {ens0.time} does not match trajectory start {t0}")
    ens = ens0
    for k in range(len(traj) - 1):
        fields = drift_fields(traj.states[k], params, clamp)
        dt = (traj.times[k + 1] - traj.times[k]) / substeps
        for _ in range(substeps):
            ens = sde_step(ens, fields, params, dt)
        ens = replace(ens, time=float(traj.times[k + 1]))
    return ens


def born_fit(ens: ParticleEnsemble, psi: WaveField, n_bins: int = 64) -> FitResult:
    """Compare the ensemble with ``|psi|^2``.

    ``l1_distance`` sums absolute differences of bin probabilities over
    ``n_bins`` equal bins spanning the grid; ``ks_statistic`` is the
    exact Kolmogorov-Smirnov distance to the cell-wise density CDF.
    """
    if n_bins < 10:
        raise ValueError("n_bins must be >= 10")
    grid = psi.grid
    x = np.sort(ens.positions)
    n = len(x)
    edges = np.linspace(grid.x_min, grid.x_max, n_bins + 1)
    p_model = np.diff(model_cdf(psi, edges))
    counts, _ = np.histogram(x, bins=edges)
    p_emp = counts / n
    l1 = float(np.sum(np.abs(p_emp - p_model)))

    cdf = model_cdf(psi, x)
    i = np.arange(1, n + 1)
    ks = float(max(np.max(i / n - cdf), np.max(cdf - (i - 1) / n)))
    return FitResult(l1, ks, n, n_bins, edges, p_model, p_emp)


def ks_critical_99(n: int) -> float:
    """Asymptotic 99% critical value of the one-sample KS statistic."""
    return 1.63 / np.sqrt(n)
