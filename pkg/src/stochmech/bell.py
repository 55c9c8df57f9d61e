"""Separation-dependent suppression of Bell correlations.

The correlation of spin-singlet analyzers at settings ``a`` and ``b`` is
damped by a cutoff function of the separation ``l``::

    E(a, b; l) = E_QM(a, b) * F(l / lc),   F(0) = 1,

with ``E_QM = -cos(a - b)``.  ``lc -> inf`` recovers ordinary quantum
correlations.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy import optimize

TSIRELSON = 2.0 * np.sqrt(2.0)

FAMILIES = ("exponential", "gaussian", "rational")


@dataclass(frozen=True)
class CutoffModel:
    """Cutoff scale ``lc`` and suppression family.

    exponential(p): ``F = exp(-(l/lc)^p)``; gaussian is exponential(2);
    rational(p): ``F = 1 / (1 + (l/lc)^p)``.
    """

    lc: float
    family: str = "exponential"
    p: float = 1.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown cutoff family {self.family!r}")
        if self.family == "gaussian":
            object.__setattr__(self, "p", 2.0)
        if not self.lc > 0:
            raise ValueError("lc must be positive")
        if not self.p > 0:
            raise ValueError("exponent p must be positive")


@dataclass(frozen=True)
class AngleSet:
    a: float
    a_prime: float
    b: float
    b_prime: float

    def __post_init__(self):
        for name in ("a", "a_prime", "b", "b_prime"):
            value = float(getattr(self, name))
            if not np.isfinite(value):
                raise ValueError(f"angle {name} must be finite")
            object.__setattr__(self, name, value % (2.0 * np.pi))

    @classmethod
    def optimal(cls) -> "AngleSet":
        """Settings that reach the Tsirelson bound for the singlet."""
        return cls(0.0, np.pi / 2, np.pi / 4, 3 * np.pi / 4)


@dataclass(frozen=True)
class CHSHResult:
    s_value: float
    correlations: Tuple[float, float, float, float]
    l: float


def f_suppression(model: CutoffModel, l):
    """Suppression factor ``F(l/lc)``; scalar in, scalar out."""
    l_arr = np.asarray(l, dtype=float)
    if np.any(l_arr < 0):
        raise ValueError("separation must be nonnegative")
    z = (l_arr / model.lc) ** model.p
    f = np.exp(-z) if model.family in ("exponential", "gaussian") else 1.0 / (1.0 + z)
    return float(f) if f.ndim == 0 else f


def e_qm_singlet(a, b):
    return -np.cos(np.subtract(a, b))


def cutoff_correlation(model: CutoffModel, a, b, l):
    return e_qm_singlet(a, b) * f_suppression(model, l)


def chsh(model: CutoffModel, angles: AngleSet, l: float) -> CHSHResult:
    """``|E(a,b) - E(a,b') + E(a',b) + E(a',b')|`` at separation ``l``."""
    e = (
        float(cutoff_correlation(model, angles.a, angles.b, l)),
        float(cutoff_correlation(model, angles.a, angles.b_prime, l)),
        float(cutoff_correlation(model, angles.a_prime, angles.b, l)),
        float(cutoff_correlation(model, angles.a_prime, angles.b_prime, l)),
    )
    return CHSHResult(abs(e[0] - e[1] + e[2] + e[3]), e, float(l))


def critical_scale(model: CutoffModel, angles: AngleSet, bound: float = 2.0, rtol: float = 1e-12) -> float:
    """Separation at which the CHSH value falls to ``bound``.

    ``F`` is monotone, so the crossing is unique; it is bracketed by
    doubling from ``lc`` and then located by bisection.
    """
    s0 = chsh(model, angles, 0.0).s_value
    if not s0 > bound > 0.0:
        raise ValueError(f"bound never crossed: CHSH runs from {s0!r} down to 0, bound is {bound!r}")

    def excess(l):
        return chsh(model, angles, l).s_value - bound

    hi = model.lc
    while excess(hi) > 0:
        hi *= 2.0
        if not np.isfinite(hi):
            raise ValueError("bound never crossed")
    return float(optimize.bisect(excess, 0.0, hi, xtol=model.lc * 1e-15, rtol=rtol, maxiter=500))


def sample_outcomes(model: CutoffModel, a: float, b: float, l: float, n: int, seed: int) -> Tuple[float, float]:
    """Simulate ``n`` paired +-1 outcomes with uniform marginals and
    correlation ``E(a, b; l)``; return the sample mean of the product and
    its standard error."""
    if n < 1:
        raise ValueError("n must be >= 1")
    e = float(cutoff_correlation(model, a, b, l))
    rng = np.random.default_rng(seed)
    s1 = np.where(rng.random(n) < 0.5, 1, -1)
    agree = rng.random(n) < 0.5 * (1.0 + e)
    s2 = np.where(agree, s1, -s1)
    e_hat = float(np.mean(s1 * s2))
    stderr = float(np.sqrt(max(0.0, 1.0 - e_hat**2) / n))
    return e_hat, stderr
