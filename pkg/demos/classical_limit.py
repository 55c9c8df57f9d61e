"""
From quantum to classical spreading
===================================

Scaling the quantum potential by ``1 - lam`` interpolates between the
Schrodinger equation (``lam = 0``) and a classical ensemble
(``lam = 1``).  A packet at rest spreads less as ``lam`` grows and does
not spread at all at ``lam = 1``.
"""

import numpy as np

from stochmech import EvolutionConfig, Grid, PhysicalParams, evolve, gaussian_packet, madelung_residuals

grid = Grid(-40.0, 40.0, 1024)
psi0 = gaussian_packet(grid, 0.0, 1.0)
cfg = EvolutionConfig(dt=1e-3, n_steps=2000, record_every=10)

print(f"{'lam':>5} {'width(t=2)':>11} {'continuity':>11} {'HJ':>10}")
for lam in np.linspace(0.0, 1.0, 5):
    params = PhysicalParams(lam=lam)
    traj = evolve(psi0, params, cfg)
    cont, hj = madelung_residuals(traj, params)
    print(f"{lam:5.2f} {traj.final.width():11.6f} {cont:11.2e} {hj:10.2e}")

# %%
# Only the two ends have closed forms: sqrt(1 + (t/2)^2) and 1.
print("closed forms:", np.sqrt(2.0), 1.0)
