"""Numerical stochastic mechanics.

Wavefunctions on a periodic grid, a lambda-interpolated Schrodinger
solver, Nelson diffusion ensembles and a separation-cutoff Bell model.
"""

__version__ = "0.1.0"

from .bell import (  # noqa: E402
    AngleSet,
    CHSHResult,
    CutoffModel,
    chsh,
    critical_scale,
    cutoff_correlation,
    e_qm_singlet,
    f_suppression,
    sample_outcomes,
)
from .dynamics import (  # noqa: E402
    EvolutionConfig,
    EvolutionDivergedError,
    Trajectory,
    energy,
    evolve,
    madelung_residuals,
    quantum_potential,
    step,
)
from .fields import (  # noqa: E402
    Grid,
    PhysicalParams,
    PolarFields,
    PotentialSpec,
    StateVanishesError,
    WaveField,
    gradient,
    laplacian,
    polar_compose,
    polar_decompose,
)
from .scenarios import (  # noqa: E402
    Scenario,
    coherent_state,
    coherent_state_oracle,
    free_gaussian_oracle,
    gaussian_packet,
    get_scenario,
    superposition,
)
from .stochastic import (  # noqa: E402
    FitResult,
    ParticleEnsemble,
    VelocityFields,
    born_fit,
    drift_fields,
    propagate_ensemble,
    sample_initial,
    sde_step,
)
