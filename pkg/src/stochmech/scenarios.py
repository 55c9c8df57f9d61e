"""Canned initial states, experiment setups and closed-form oracles.

The oracles are written out analytically and share no code with the
time stepper, so comparing the two is a genuine check.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from typing import Any, Dict, Optional, Tuple

import numpy as np

from .dynamics import EvolutionConfig
from .fields import Grid, PhysicalParams, PotentialSpec, WaveField


def gaussian_packet(grid: Grid, x0: float, s0: float, p0: float = 0.0, hbar: float = 1.0,
                    chirp: float = 0.0) -> WaveField:
    """``psi ~ exp(-(x-x0)^2/(4 s0^2) + i p0 x/hbar + i chirp (x-x0)^2/(2 hbar))``.

    ``s0`` is the position standard deviation; ``chirp`` adds a linear
    velocity field ``chirp*(x - x0)/m``.
    """
    if not s0 > 0:
        raise ValueError("s0 must be positive")
    if not 8 * s0 < grid.length:
        raise ValueError("packet too wide for the domain: need 8*s0 < domain length")
    if not (grid.x_min + 4 * s0 <= x0 <= grid.x_max - 4 * s0):
        raise ValueError("packet support too close to the boundary")
    x = grid.x
    phase = p0 * x / hbar + 0.5 * chirp * (x - x0) ** 2 / hbar
    return WaveField.normalized(grid, np.exp(-((x - x0) ** 2) / (4 * s0**2) + 1j * phase))


def coherent_state(grid: Grid, x0: float, omega: float, params: PhysicalParams) -> WaveField:
    """Harmonic-oscillator ground state displaced to ``x0``."""
    s0 = np.sqrt(params.hbar / (2 * params.mass * omega))
    return gaussian_packet(grid, x0, s0, 0.0, params.hbar)


def superposition(grid: Grid, x1: float, x2: float, s0: float, relative_sign: float = 1.0,
                  hbar: float = 1.0) -> WaveField:
    """Two equal Gaussians; ``relative_sign=-1`` puts a node midway between them."""
    a = gaussian_packet(grid, x1, s0, 0.0, hbar).amplitude
    b = gaussian_packet(grid, x2, s0, 0.0, hbar).amplitude
    return WaveField.normalized(grid, a + relative_sign * b)


def free_gaussian_oracle(x0: float, s0: float, p0: float, t: float, params: PhysicalParams,
                         x: Optional[np.ndarray] = None):
    """Mean, width and (if ``x`` is given) density of a freely spreading Gaussian."""
    m, hbar = params.mass, params.hbar
    mean = x0 + p0 * t / m
    width = s0 * np.sqrt(1.0 + (hbar * t / (2 * m * s0**2)) ** 2)
    density = None
    if x is not None:
        density = np.exp(-((np.asarray(x) - mean) ** 2) / (2 * width**2)) / np.sqrt(2 * np.pi * width**2)
    return mean, width, density


def free_gaussian_wavefunction(x: np.ndarray, x0: float, s0: float, p0: float, t: float,
                               params: PhysicalParams) -> np.ndarray:
    """Exact free evolution of :func:`gaussian_packet` (no chirp) on the real line."""
    m, hbar = params.mass, params.hbar
    alpha = 1.0 + 1j * hbar * t / (2 * m * s0**2)
    xc = x - x0 - p0 * t / m
    return ((2 * np.pi * s0**2) ** -0.25 / np.sqrt(alpha)
            * np.exp(-(xc**2) / (4 * s0**2 * alpha) + 1j * (p0 * x - p0**2 * t / (2 * m)) / hbar))


def coherent_state_oracle(x0: float, omega: float, t, params: PhysicalParams) -> Tuple[Any, float]:
    if not omega > 0:
        raise ValueError("omega must be positive")
    mean = x0 * np.cos(omega * np.asarray(t, dtype=float))
    width = float(np.sqrt(params.hbar / (2 * params.mass * omega)))
    return (float(mean) if np.ndim(mean) == 0 else mean), width


def classical_chirp_oracle(x0: float, s0: float, p0: float, chirp: float, t: float, params: PhysicalParams):
    """Mean and width for lam = 1 (no quantum pressure): ballistic flow."""
    m = params.mass
    return x0 + p0 * t / m, s0 * abs(1.0 + chirp * t / m)


# --------------------------------------------------------------------------
# named scenarios


@dataclass(frozen=True)
class Scenario:
    """A named setup: grid, initial-state builder, physics and time stepping."""

    name: str
    grid: Grid
    state: Dict[str, Any]
    params: PhysicalParams
    cfg: EvolutionConfig

    def initial_state(self) -> WaveField:
        return build_state(self.state, self.grid, self.params)

    @property
    def t_end(self) -> float:
        return self.cfg.dt * self.cfg.n_steps

    def oracle_width(self, t: float) -> Optional[float]:
        """Closed-form packet width at ``t`` where one is known, else None."""
        st = self.state
        kind = self.params.potential.kind
        if st["kind"] == "gaussian" and kind == "free" and st.get("chirp", 0.0) == 0.0 and self.params.lam == 0.0:
            return free_gaussian_oracle(st["x0"], st["s0"], st.get("p0", 0.0), t, self.params)[1]
        if st["kind"] == "gaussian" and kind == "free" and self.params.lam == 1.0:
            return classical_chirp_oracle(st["x0"], st["s0"], st.get("p0", 0.0), st.get("chirp", 0.0), t,
                                          self.params)[1]
        if st["kind"] == "coherent" and kind == "harmonic" and self.params.lam == 0.0:
            return coherent_state_oracle(st["x0"], self.params.potential.omega, t, self.params)[1]
        return None

    def oracle_mean(self, t: float) -> Optional[float]:
        st = self.state
        kind = self.params.potential.kind
        if st["kind"] == "gaussian" and kind == "free" and (self.params.lam in (0.0, 1.0)):
            return st["x0"] + st.get("p0", 0.0) * t / self.params.mass
        if st["kind"] == "coherent" and kind == "harmonic" and self.params.lam == 0.0:
            return coherent_state_oracle(st["x0"], self.params.potential.omega, t, self.params)[0]
        return None


def build_state(state: Dict[str, Any], grid: Grid, params: PhysicalParams) -> WaveField:
    kind = state.get("kind")
    if kind == "gaussian":
        return gaussian_packet(grid, state["x0"], state["s0"], state.get("p0", 0.0), params.hbar,
                               state.get("chirp", 0.0))
    if kind == "coherent":
        omega = params.potential.omega if params.potential.kind == "harmonic" else state["omega"]
        return coherent_state(grid, state["x0"], omega, params)
    if kind == "superposition":
        return superposition(grid, state["x1"], state["x2"], state["s0"], state.get("relative_sign", 1.0),
                             params.hbar)
    raise ValueError(f"unknown state kind {kind!r}")


def _steps(t_end: float, dt: float, record_every: int) -> Tuple[float, int]:
    """Largest step <= dt that lands exactly on t_end after a whole number
    of recording intervals."""
    blocks = int(np.ceil(t_end / (dt * record_every) - 1e-9))
    n = blocks * record_every
    return t_end / n, n


def _canned() -> Dict[str, Dict[str, Any]]:
    doubling = 2.0 * np.sqrt(3.0)
    period = 2.0 * np.pi
    return {
        # width doubles (s0 = 1 -> 2) at t = 2*sqrt(3)
        "free_gaussian": dict(
            grid=dict(x_min=-40.0, x_max=40.0, n=1024),
            state=dict(kind="gaussian", x0=0.0, s0=1.0, p0=0.0),
            potential=dict(kind="free"),
            t_end=doubling, dt=1e-3, record_every=4,
        ),
        "chirped_gaussian": dict(
            grid=dict(x_min=-20.0, x_max=20.0, n=512),
            state=dict(kind="gaussian", x0=-1.0, s0=1.0, p0=0.5, chirp=0.5),
            potential=dict(kind="free"),
            t_end=1.0, dt=1e-3, record_every=10,
        ),
        "coherent": dict(
            grid=dict(x_min=-32.0, x_max=32.0, n=1024),
            state=dict(kind="coherent", x0=2.0),
            potential=dict(kind="harmonic", omega=1.0),
            t_end=period, dt=1e-3, record_every=4,
        ),
        "harmonic_ground": dict(
            grid=dict(x_min=-32.0, x_max=32.0, n=1024),
            state=dict(kind="coherent", x0=0.0),
            potential=dict(kind="harmonic", omega=1.0),
            t_end=period, dt=1e-3, record_every=4,
        ),
        "superposition": dict(
            grid=dict(x_min=-40.0, x_max=40.0, n=1024),
            state=dict(kind="superposition", x1=-3.0, x2=3.0, s0=1.0, relative_sign=-1.0),
            potential=dict(kind="free"),
            t_end=2.0, dt=1e-3, record_every=4,
        ),
        "barrier": dict(
            grid=dict(x_min=-40.0, x_max=40.0, n=1024),
            state=dict(kind="gaussian", x0=-8.0, s0=1.0, p0=2.0),
            potential=dict(kind="barrier", height=2.0, width=1.0, center=0.0),
            t_end=6.0, dt=1e-3, record_every=10,
        ),
    }


SCENARIO_NAMES = tuple(_canned())


def scenario_definition(name: str, overrides: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    """Plain-data description of a canned scenario with ``overrides`` merged in."""
    canned = _canned()
    if name not in canned:
        raise KeyError(f"unknown scenario {name!r}; choose from {', '.join(canned)}")
    definition = copy.deepcopy(canned[name])
    definition.update(dict(mass=1.0, hbar=1.0, lam=0.0))
    for key, value in (overrides or {}).items():
        if key in ("grid", "state", "potential") and isinstance(value, dict):
            same_kind = value.get("kind", definition[key].get("kind")) == definition[key].get("kind")
            definition[key] = {**definition[key], **value} if same_kind else dict(value)
        else:
            definition[key] = value
    definition["name"] = name
    return definition


def make_scenario(definition: Dict[str, Any]) -> Scenario:
    grid = Grid(float(definition["grid"]["x_min"]), float(definition["grid"]["x_max"]), int(definition["grid"]["n"]))
    pot = dict(definition["potential"])
    if "values" in pot:
        pot["values"] = tuple(float(v) for v in pot["values"])
    params = PhysicalParams(float(definition["mass"]), float(definition["hbar"]), float(definition["lam"]), PotentialSpec(**pot))
    if "n_steps" in definition:
        dt, n_steps = float(definition["dt"]), int(definition["n_steps"])
    else:
        dt, n_steps = _steps(float(definition["t_end"]), float(definition["dt"]), int(definition["record_every"]))
    cfg = EvolutionConfig(dt, n_steps, int(definition["record_every"]))
    return Scenario(definition["name"], grid, dict(definition["state"]), params, cfg)


def get_scenario(name: str, **overrides) -> Scenario:
    return make_scenario(scenario_definition(name, overrides))
