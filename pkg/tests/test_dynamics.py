import logging

import numpy as np
import pytest
import sympy as sp

from stochmech import (
    EvolutionConfig,
    EvolutionDivergedError,
    Grid,
    PhysicalParams,
    PotentialSpec,
    WaveField,
    coherent_state,
    coherent_state_oracle,
    energy,
    evolve,
    free_gaussian_oracle,
    gaussian_packet,
    madelung_residuals,
    polar_decompose,
    quantum_potential,
    step,
)
from stochmech import dynamics
from stochmech.dynamics import Trajectory

from conftest import uniform_amplitude


def _symbolic_q(rho_expr, x, hbar=1, m=1):
    r = sp.sqrt(rho_expr)
    return sp.simplify(-(sp.Rational(hbar**2) / (2 * m)) * sp.diff(r, x, 2) / r)


class TestQuantumPotential:
    def test_uniform(self, grid, free):
        f = polar_decompose(WaveField(grid, uniform_amplitude(grid)))
        assert np.allclose(quantum_potential(f, free), 0.0, atol=1e-12)

    @pytest.mark.parametrize("s", [0.8, 1.5])
    def test_gaussian_against_symbolic(self, s, free):
        x = sp.symbols("x", real=True)
        q_expr = _symbolic_q(sp.exp(-(x**2) / (2 * sp.nsimplify(s) ** 2)), x)
        g = Grid(-30.0, 30.0, 1024)
        f = polar_decompose(gaussian_packet(g, 0.0, s))
        q = quantum_potential(f, free)
        core = np.abs(g.x) < 5 * s
        assert np.max(np.abs(q - sp.lambdify(x, q_expr, "numpy")(g.x))[core]) < 1e-8
        assert abs(q[g.n // 2] - 1 / (4 * s**2)) < 1e-10

    def test_harmonic_ground_state_balances_potential(self, harmonic):
        x = sp.symbols("x", real=True)
        q_expr = _symbolic_q(sp.exp(-(x**2)), x)
        assert sp.simplify(q_expr + x**2 / 2) == sp.Rational(1, 2)
        g = Grid(-32.0, 32.0, 1024)
        psi = coherent_state(g, 0.0, 1.0, harmonic)
        q = quantum_potential(polar_decompose(psi), harmonic)
        core = np.abs(g.x) < 5
        v = harmonic.potential.evaluate(g)
        assert np.max(np.abs(q + v - 0.5)[core]) < 1e-8

    def test_masked_points_are_zero(self, grid, free):
        psi = gaussian_packet(grid, 0.0, 0.5)
        f = polar_decompose(psi)
        q = quantum_potential(f, free)
        assert not f.valid_mask.all()
        assert np.all(q[~f.valid_mask] == 0.0)


class TestStep:
    def test_free_gaussian_width(self, free):
        g = Grid(-40.0, 40.0, 1024)
        psi = gaussian_packet(g, 0.0, 1.0)
        dt = 1e-3
        for _ in range(500):
            psi = step(psi, free, dt)
        width = free_gaussian_oracle(0.0, 1.0, 0.0, 0.5, free)[1]
        assert abs(psi.width() - width) / width < 1e-6

    def test_lambda_one_gaussian_is_frozen(self):
        g = Grid(-20.0, 20.0, 512)
        params = PhysicalParams(lam=1.0)
        psi0 = gaussian_packet(g, 0.0, 1.0)
        psi = psi0
        for _ in range(200):
            psi = step(psi, params, 1e-3)
        assert np.max(np.abs(psi.density - psi0.density)) < 1e-8

    def test_divergence_reports_step(self, grid, free, monkeypatch):
        psi = gaussian_packet(grid, 0.0, 1.0)
        real_raw = dynamics._raw_step
        calls = []

        def poisoned(amp, *args):
            calls.append(1)
            out = real_raw(amp, *args)
            return out * np.nan if len(calls) == 3 else out

        monkeypatch.setattr(dynamics, "_raw_step", poisoned)
        with pytest.raises(EvolutionDivergedError, match="evolution diverged at step 3") as info:
            evolve(psi, free, EvolutionConfig(1e-3, 10))
        assert info.value.step_index == 3


class TestEvolve:
    def test_zero_steps(self, grid, free):
        psi = gaussian_packet(grid, 0.0, 1.0)
        traj = evolve(psi, free, EvolutionConfig(1e-3, 0))
        assert len(traj) == 1 and traj.final is psi

    def test_records_initial_and_final(self, grid, free):
        traj = evolve(gaussian_packet(grid, 0.0, 1.0), free, EvolutionConfig(1e-3, 10, 4))
        assert np.allclose(traj.times, [0.0, 0.004, 0.008, 0.010])

    def test_rejects_aliasing_dt(self, grid, free):
        with pytest.raises(ValueError, match="too large"):
            evolve(gaussian_packet(grid, 0.0, 1.0), free, EvolutionConfig(0.1, 1))

    def test_config_validation(self):
        for kwargs in (dict(dt=0.0, n_steps=1), dict(dt=1e-3, n_steps=-1), dict(dt=1e-3, n_steps=1, record_every=0)):
            with pytest.raises(ValueError):
                EvolutionConfig(**kwargs)

    def test_width_doubling(self, free):
        g = Grid(-40.0, 40.0, 1024)
        t = 2.0 * np.sqrt(3.0)
        n = 3464
        traj = evolve(gaussian_packet(g, 0.0, 1.0), free, EvolutionConfig(t / n, n, 100))
        assert abs(traj.final.width() - 2.0) / 2.0 < 1e-3

    def test_quantum_spreads_classical_does_not(self):
        g = Grid(-40.0, 40.0, 1024)
        psi = gaussian_packet(g, 0.0, 1.0)
        cfg = EvolutionConfig(1e-3, 1000, 1000)
        w0 = evolve(psi, PhysicalParams(lam=0.0), cfg).final.width()
        w1 = evolve(psi, PhysicalParams(lam=1.0), cfg).final.width()
        assert w0 > 1.1 and abs(w1 - 1.0) < 1e-6

    def test_coherent_state_center(self, harmonic):
        g = Grid(-32.0, 32.0, 1024)
        traj = evolve(coherent_state(g, 2.0, 1.0, harmonic), harmonic, EvolutionConfig(np.pi / 4000, 4000, 200))
        means = np.array([s.mean_position() for s in traj.states])
        expected, width = coherent_state_oracle(2.0, 1.0, traj.times, harmonic)
        assert np.max(np.abs(means - expected)) < 1e-5
        assert np.max(np.abs(np.array([s.width() for s in traj.states]) - width)) < 1e-5

    def test_widths_nonincreasing_in_lambda(self):
        g = Grid(-40.0, 40.0, 1024)
        psi = gaussian_packet(g, 0.0, 1.0)
        cfg = EvolutionConfig(1e-3, 2000, 2000)
        widths = [evolve(psi, PhysicalParams(lam=lam), cfg).final.width() for lam in (0, 0.25, 0.5, 0.75, 1)]
        assert all(b <= a for a, b in zip(widths, widths[1:]))
        # endpoints from the two closed forms
        assert abs(widths[0] - np.sqrt(2.0)) < 1e-6 and abs(widths[-1] - 1.0) < 1e-6

    def test_energy_conserved(self, harmonic):
        g = Grid(-32.0, 32.0, 1024)
        psi0 = coherent_state(g, 2.0, 1.0, harmonic)
        traj = evolve(psi0, harmonic, EvolutionConfig(1e-3, 10_000, 1000))
        e = np.array([energy(s, harmonic) for s in traj.states])
        assert abs(e[0] - 2.5) < 1e-10
        assert np.max(np.abs(e - e[0])) / e[0] < 1e-6

    def test_warns_on_norm_drift(self, grid, free, monkeypatch, caplog):
        real_raw = dynamics._raw_step
        monkeypatch.setattr(dynamics, "_raw_step", lambda amp, *a: 1.001 * real_raw(amp, *a))
        with caplog.at_level(logging.WARNING, logger="stochmech.dynamics"):
            traj = evolve(gaussian_packet(grid, 0.0, 1.0), free, EvolutionConfig(1e-3, 2))
        assert "norm drift" in caplog.text
        assert traj.max_norm_drift == pytest.approx(1e-3)
        assert abs(traj.final.norm() - 1.0) < 1e-12


class TestMadelung:
    def test_uniform_state(self, grid):
        psi = WaveField(grid, uniform_amplitude(grid))
        for lam in (0.0, 0.5, 1.0):
            params = PhysicalParams(lam=lam)
            traj = evolve(psi, params, EvolutionConfig(1e-3, 20, 5))
            cont, hj = madelung_residuals(traj, params)
            assert cont < 1e-10 and hj < 1e-10

    def test_central_difference_is_second_order(self, free):
        g = Grid(-40.0, 40.0, 512)
        psi = gaussian_packet(g, 0.0, 1.0, p0=0.5)
        res = [madelung_residuals(evolve(psi, free, EvolutionConfig(dt, int(1 / dt), 4)), free) for dt in (2e-3, 1e-3)]
        for coarse, fine in zip(*res):
            assert coarse / fine > 3.5

    def test_frozen_classical_gaussian(self):
        g = Grid(-20.0, 20.0, 512)
        params = PhysicalParams(lam=1.0)
        traj = evolve(gaussian_packet(g, 0.0, 1.0), params, EvolutionConfig(1e-4, 4000, 100))
        cont, hj = madelung_residuals(traj, params, rho_floor=1e-6 / g.length)
        assert cont < 1e-8 and hj < 1e-8

    def test_needs_three_snapshots(self, grid, free):
        traj = evolve(gaussian_packet(grid, 0.0, 1.0), free, EvolutionConfig(1e-3, 4, 4))
        with pytest.raises(ValueError, match="at least 3"):
            madelung_residuals(traj, free)

    def test_needs_uniform_spacing(self, grid, free):
        traj = evolve(gaussian_packet(grid, 0.0, 1.0), free, EvolutionConfig(1e-3, 10, 4))
        with pytest.raises(ValueError, match="uniformly"):
            madelung_residuals(traj, free)

    def test_trajectory_validation(self, grid):
        psi = gaussian_packet(grid, 0.0, 1.0)
        with pytest.raises(ValueError):
            Trajectory(np.array([0.0, 0.0]), (psi, psi))
        with pytest.raises(ValueError):
            Trajectory(np.array([0.0]), (psi, psi))
