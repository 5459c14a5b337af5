"""Classical belief about the collective hyperfine field, in Fourier space.

The experimenter's distribution over A_z is periodic with period
1/tau0 and is stored as complex Fourier coefficients p_j for
j in [-j_max, j_max], normalized to p_0 = 1/(2*pi) (the convention that
makes the Holevo variance of a point mass exactly zero).  Bayesian
updates for binary Ramsey outcomes are O(j_max) coefficient shifts.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

# Cap on the phase width fed into the coherence-time estimate, so that a
# (near-)uniform belief still produces finite-contrast likelihoods
# instead of a vanishing coherence time.
_PHASE_STD_CAP = 1.0


class EstimatorError(RuntimeError):
    pass


@dataclass(frozen=True)
class FourierDistribution:
    """Periodic belief P(A_z) as Fourier coefficients.

    Attributes:
        coefficients: complex array of length 2*j_max+1; entry i holds
            p_j for j = i - j_max.
        tau0: base sensing time (s); the representation period is 1/tau0.
        t2_estimate: coherence time (s) currently used in the likelihood.
    """

    coefficients: np.ndarray
    tau0: float
    t2_estimate: float

    def __post_init__(self):
        object.__setattr__(self, "coefficients", np.asarray(self.coefficients, dtype=complex))
        if self.coefficients.ndim != 1 or len(self.coefficients) % 2 != 1:
            raise ValueError("coefficients must be a 1-D array of odd length")
        if not self.tau0 > 0:
            raise ValueError("tau0 must be positive")

    @property
    def j_max(self) -> int:
        return (len(self.coefficients) - 1) // 2

    def coefficient(self, j: int) -> complex:
        if abs(j) > self.j_max:
            return 0.0 + 0.0j
        return complex(self.coefficients[j + self.j_max])


def _t2_from_phase_std(phase_std: float, tau0: float) -> float:
    # Gaussian dephasing identity: exp(-2 pi^2 sigma^2 tau^2) = exp(-(tau/T2)^2),
    # so a belief of width sigma corresponds to T2 = 1/(sqrt(2) pi sigma).
    sigma_az = min(phase_std, _PHASE_STD_CAP) / (2.0 * np.pi * tau0)
    return 1.0 / (np.sqrt(2.0) * np.pi * sigma_az)


def init_prior(
    kind: str,
    center: float = 0.0,
    width: float = 0.0,
    tau0: float = 1e-6,
    j_max: int = 256,
) -> FourierDistribution:
    """Uniform or wrapped-Gaussian prior.

    ``center`` and ``width`` are in Hz and apply to the gaussian kind;
    the wrapped-Gaussian coefficients are the Gaussian characteristic
    function sampled at the harmonics.
    """
    if j_max < 1:
        raise ValueError("j_max must be >= 1")
    coeffs = np.zeros(2 * j_max + 1, dtype=complex)
    if kind == "uniform":
        coeffs[j_max] = 1.0 / (2.0 * np.pi)
        phase_std = _PHASE_STD_CAP
    elif kind == "gaussian":
        if not width > 0:
            raise ValueError("gaussian prior needs width > 0")
        j = np.arange(-j_max, j_max + 1)
        coeffs = (
            np.exp(-1j * 2.0 * np.pi * j * center * tau0)
            * np.exp(-2.0 * np.pi**2 * j**2 * width**2 * tau0**2)
            / (2.0 * np.pi)
        )
        phase_std = 2.0 * np.pi * width * tau0
    else:
        raise ValueError(f"unknown prior kind {kind!r}")
    return FourierDistribution(
        coefficients=coeffs, tau0=tau0, t2_estimate=_t2_from_phase_std(phase_std, tau0)
    )


def likelihood(mu: int, a_z, tau: float, phi: float, t2: float):
    """P(outcome mu | A_z) for a Ramsey run of length tau and detection phase phi."""
    if not t2 > 0:
        raise ValueError("t2 must be positive")
    contrast = np.exp(-((tau / t2) ** 2))
    p0 = 0.5 + 0.5 * contrast * np.cos(2.0 * np.pi * np.asarray(a_z) * tau + phi)
    return p0 if mu == 0 else 1.0 - p0


def _shifted(coefficients: np.ndarray, shift: int) -> np.ndarray:
    # p_{j - shift} as an array over j, zero-filled outside the stored range.
    out = np.zeros_like(coefficients)
    if shift >= 0:
        out[shift:] = coefficients[: len(coefficients) - shift]
    else:
        out[:shift] = coefficients[-shift:]
    return out


def update(
    dist: FourierDistribution,
    mu: int,
    k: int,
    phi: float,
    t2_estimate: float | None = None,
) -> FourierDistribution:
    """Bayesian update for one outcome at sensing time 2^k * tau0.

    Applies the coefficient-shift form of multiplying by the Ramsey
    likelihood, renormalizes to p_0 = 1/(2*pi), and refreshes the
    coherence-time estimate from the updated Holevo variance.
    """
    shift = 2**k
    if shift > dist.j_max:
        raise EstimatorError(
            f"sensing index k={k} shifts by {shift}, beyond the j_max={dist.j_max} budget"
        )
    t2 = dist.t2_estimate if t2_estimate is None else t2_estimate
    decay = np.exp(-((2**k * dist.tau0 / t2) ** 2))
    phase = (-1.0) ** mu * np.exp(1j * phi)
    coeffs = 0.5 * dist.coefficients + 0.25 * decay * (
        phase * _shifted(dist.coefficients, shift)
        + np.conj(phase) * _shifted(dist.coefficients, -shift)
    )
    p0 = coeffs[dist.j_max].real
    if p0 <= 1e-300:
        raise EstimatorError("posterior normalization vanished; outcome impossible under prior")
    coeffs = coeffs / (2.0 * np.pi * p0)
    new = dataclasses.replace(dist, coefficients=coeffs)
    v = holevo_variance(new)
    phase_std = np.sqrt(v) if np.isfinite(v) else _PHASE_STD_CAP
    return dataclasses.replace(new, t2_estimate=_t2_from_phase_std(phase_std, dist.tau0))


def holevo_variance(dist: FourierDistribution) -> float:
    """Phase variance 0.5 * ((2 pi |p_1|)^-2 - 1); +inf for a uniform belief."""
    magnitude = abs(dist.coefficient(1))
    if magnitude == 0.0:
        return float("inf")
    return max(0.5 * ((2.0 * np.pi * magnitude) ** -2 - 1.0), 0.0)


def holevo_sigma_az(dist: FourierDistribution) -> float:
    """Standard deviation of A_z (Hz) implied by the Holevo variance."""
    v = holevo_variance(dist)
    if not np.isfinite(v):
        return float("inf")
    return np.sqrt(v) / (2.0 * np.pi * dist.tau0)


def estimate_mean(dist: FourierDistribution) -> float:
    """Mean A_z estimate (Hz), principal value in [-1/(2 tau0), 1/(2 tau0))."""
    c = dist.coefficient(-1)
    if abs(c) == 0.0:
        raise EstimatorError("uniform belief has no defined mean")
    value = np.angle(c) / (2.0 * np.pi * dist.tau0)
    period = 1.0 / dist.tau0
    if value >= 0.5 * period:
        value -= period
    return float(value)


def evaluate(dist: FourierDistribution, grid) -> np.ndarray:
    """Belief density (1/Hz) on a grid of A_z values; integrates to 1 over one period."""
    grid = np.asarray(grid, dtype=float)
    j = np.arange(-dist.j_max, dist.j_max + 1)
    phases = np.exp(2j * np.pi * np.outer(grid * dist.tau0, j))
    return 2.0 * np.pi * dist.tau0 * (phases @ dist.coefficients).real
