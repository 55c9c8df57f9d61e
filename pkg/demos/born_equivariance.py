"""
Particles that stay distributed as |psi|^2
==========================================

Walkers are drawn from the initial density of a spreading Gaussian and
then diffuse with the forward drift ``b = v + u`` and noise variance
``(hbar/m) dt``.  At the width-doubling time their histogram is compared
with the evolved density and with a fresh sample drawn from it.
"""

from stochmech import born_fit, evolve, get_scenario, propagate_ensemble, sample_initial

N = 100_000
sc = get_scenario("free_gaussian", record_every=8)
traj = evolve(sc.initial_state(), sc.params, sc.cfg)
walkers = propagate_ensemble(sample_initial(traj.states[0], N, seed=7), traj, sc.params, substeps=8)

fit = born_fit(walkers, traj.final)
fresh = born_fit(sample_initial(traj.final, N, seed=8), traj.final)
print(f"walker width    {walkers.positions.std():.4f}  (density width {traj.final.width():.4f})")
print(f"L1 propagated   {fit.l1_distance:.5f}")
print(f"L1 fresh sample {fresh.l1_distance:.5f}")

# %%
# A coarse text histogram of the two against the model.
for lo, p_model, p_emp in zip(fit.edges[:-1], fit.p_model, fit.p_empirical):
    if p_model > 2e-3:
        print(f"{lo:7.2f} {'#' * int(160 * p_emp):<40} {p_model:.4f} / {p_emp:.4f}")
