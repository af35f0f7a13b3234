"""Passive transmitter model.

Each emission interferes four phase-randomized laser pulses pairwise, producing
two arm intensities (mu_h, mu_v) plus an azimuth phase and a global phase.
With all four phases uniform on [0, 2pi), each arm intensity independently
follows the arcsine law on [0, mu_max],

    p(mu) = 1 / (pi * sqrt(mu * (mu_max - mu))),

so the joint natural density over the intensity square is the product of two
arcsine marginals, and the azimuth is uniform.

Decoupling the photon-number statistics from the encoding angle requires an
exponential intensity law.  The transmitter therefore keeps each sample with
probability q(mu_h, mu_v) proportional to

    sqrt(mu_h (mu_max - mu_h) mu_v (mu_max - mu_v)) * exp(mu_h + mu_v),

scaled so the supremum over the square is 1.  The square-root factor cancels
the arcsine density exactly and the surviving ensemble is distributed as
exp(mu_h + mu_v) / (e^mu_max - 1)^2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class SingularDensityError(ValueError):
    """Natural density evaluated on the boundary of the intensity square."""


@dataclass(frozen=True)
class SourceParams:
    """Transmitter constants.

    mu_in is the per-pulse laser intensity and eta_f the internal
    transmittance of the interferometric structure; the maximum output
    intensity is mu_max = 2 * mu_in * eta_f.
    """

    mu_in: float
    eta_f: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.eta_f <= 1.0:
            raise ValueError(f"eta_f must be in (0, 1], got {self.eta_f}")
        if self.mu_in <= 0.0:
            raise ValueError(f"mu_in must be positive, got {self.mu_in}")

    @property
    def mu_max(self) -> float:
        return 2.0 * self.mu_in * self.eta_f

    @classmethod
    def from_mu_max(cls, mu_max: float, eta_f: float = 1.0) -> "SourceParams":
        return cls(mu_in=mu_max / (2.0 * eta_f), eta_f=eta_f)


@dataclass(frozen=True)
class SourceSample:
    """One emitted pulse in intensity/phase coordinates."""

    mu_h: float
    mu_v: float
    phi: float
    phi_g: float

    def __post_init__(self):
        if self.mu_h < 0.0 or self.mu_v < 0.0:
            raise ValueError("arm intensities must be non-negative")

    @property
    def mu(self) -> float:
        return self.mu_h + self.mu_v

    @property
    def bloch_theta(self) -> float:
        """Polar angle of the encoded single-photon state, 2*arccos(sqrt(mu_h/mu))."""
        mu = self.mu
        if mu <= 0.0:
            return 0.0
        return 2.0 * math.acos(math.sqrt(self.mu_h / mu))


@dataclass(frozen=True)
class PolarCoords:
    """Intensity-plane polar coordinates r = sqrt(mu_h^2 + mu_v^2), theta = arctan(mu_v/mu_h)."""

    r: float
    theta_mu: float

    @classmethod
    def from_intensities(cls, mu_h: float, mu_v: float) -> "PolarCoords":
        return cls(r=math.hypot(mu_h, mu_v), theta_mu=math.atan2(mu_v, mu_h))

    def to_intensities(self) -> tuple[float, float]:
        return self.r * math.cos(self.theta_mu), self.r * math.sin(self.theta_mu)


def interfere(phi1: float, phi2: float, phi3: float, phi4: float,
              params: SourceParams) -> SourceSample:
    """Interfere four phase-randomized pulses into one encoded emission.

    Arm intensities follow from first-order interference of equal-intensity
    pulses, with the source attenuation eta_f folded in so outputs span
    [0, mu_max].  The azimuth is the difference of the two arm mean phases and
    the global phase is the H-arm mean phase.
    """
    half_max = params.eta_f * params.mu_in
    mu_h = half_max * (1.0 + math.cos(phi2 - phi1))
    mu_v = half_max * (1.0 + math.cos(phi4 - phi3))
    phi_h = 0.5 * (phi1 + phi2)
    phi_v = 0.5 * (phi3 + phi4)
    return SourceSample(
        mu_h=mu_h,
        mu_v=mu_v,
        phi=(phi_v - phi_h) % (2.0 * math.pi),
        phi_g=phi_h % (2.0 * math.pi),
    )


def density_natural(mu_h, mu_v, params: SourceParams):
    """Unshaped joint intensity density, 1/(pi^2 sqrt(mu_h (M-mu_h) mu_v (M-mu_v))).

    Defined on the open square (0, mu_max)^2; the boundary carries integrable
    singularities and is rejected.
    """
    m = params.mu_max
    mu_h = np.asarray(mu_h, dtype=float)
    mu_v = np.asarray(mu_v, dtype=float)
    if np.any((mu_h <= 0.0) | (mu_h >= m) | (mu_v <= 0.0) | (mu_v >= m)):
        raise SingularDensityError(
            "natural density requires intensities strictly inside (0, mu_max)")
    val = 1.0 / (math.pi ** 2 * np.sqrt(mu_h * (m - mu_h) * mu_v * (m - mu_v)))
    return float(val) if val.ndim == 0 else val


def _shape_factor(x, m: float):
    # sqrt(x (m - x)) e^x, the per-axis shaping kernel
    return np.sqrt(np.maximum(x * (m - x), 0.0)) * np.exp(x)


def shaping_peak(params: SourceParams) -> float:
    """Per-axis maximizer of sqrt(x (M - x)) e^x, at ((M-1) + sqrt(M^2+1)) / 2."""
    m = params.mu_max
    return 0.5 * ((m - 1.0) + math.sqrt(m * m + 1.0))


def shaping_acceptance(mu_h, mu_v, params: SourceParams):
    """Keep probability in [0, 1] applied to each sampled emission.

    Proportional to sqrt(mu_h (M-mu_h) mu_v (M-mu_v)) exp(mu_h + mu_v) and
    scaled so the interior maximum equals 1; the product with the natural
    density is then exactly proportional to exp(mu_h + mu_v).
    """
    m = params.mu_max
    peak = _shape_factor(shaping_peak(params), m)
    q = _shape_factor(np.asarray(mu_h, dtype=float), m) \
        * _shape_factor(np.asarray(mu_v, dtype=float), m) / (peak * peak)
    q = np.minimum(q, 1.0)
    return float(q) if q.ndim == 0 else q


def shaping_acceptance_rate(params: SourceParams) -> float:
    """Mean keep probability over the natural ensemble, (e^M - 1)^2 / (pi g*)^2."""
    m = params.mu_max
    peak = _shape_factor(shaping_peak(params), m)
    return (math.expm1(m) / (math.pi * peak)) ** 2


def density_shaped(mu_h, mu_v, params: SourceParams):
    """Post-shaping joint intensity density, exp(mu_h + mu_v) / (e^M - 1)^2."""
    norm = math.expm1(params.mu_max) ** 2
    val = np.exp(np.asarray(mu_h, dtype=float) + np.asarray(mu_v, dtype=float)) / norm
    return float(val) if val.ndim == 0 else val


def arcsine_ppf(u, mu_max: float):
    """Inverse CDF of the natural per-arm intensity law: mu = M sin^2(pi u / 2)."""
    arr = np.asarray(u, dtype=float)
    if arr.ndim == 0:
        s = math.sin(0.5 * math.pi * float(arr))
        return mu_max * s * s
    val = arr * (0.5 * math.pi)
    np.sin(val, out=val)
    np.square(val, out=val)
    val *= mu_max
    return val


def arcsine_cdf(x, mu_max: float):
    """CDF of the natural per-arm law, (2/pi) arcsin(sqrt(x / M))."""
    r = np.clip(np.asarray(x, dtype=float) / mu_max, 0.0, 1.0)
    val = (2.0 / math.pi) * np.arcsin(np.sqrt(r))
    return float(val) if val.ndim == 0 else val


def shaped_cdf(x, mu_max: float):
    """Per-arm CDF of the shaped ensemble, (e^x - 1) / (e^M - 1)."""
    val = np.expm1(np.clip(np.asarray(x, dtype=float), 0.0, mu_max)) / math.expm1(mu_max)
    return float(val) if val.ndim == 0 else val


def sample_natural_intensities(rng: np.random.Generator, params: SourceParams,
                               n: int) -> tuple[np.ndarray, np.ndarray]:
    """Draw n (mu_h, mu_v) pairs from the natural product-arcsine law."""
    mu_h = arcsine_ppf(rng.random(n), params.mu_max)
    mu_v = arcsine_ppf(rng.random(n), params.mu_max)
    return np.atleast_1d(mu_h), np.atleast_1d(mu_v)


def sample_source(rng: np.random.Generator, params: SourceParams,
                  shaped: bool = True) -> SourceSample:
    """Draw one emission; when shaped, rejection-sample with the keep probability."""
    while True:
        mu_h = arcsine_ppf(rng.random(), params.mu_max)
        mu_v = arcsine_ppf(rng.random(), params.mu_max)
        if not shaped or rng.random() < shaping_acceptance(mu_h, mu_v, params):
            break
    two_pi = 2.0 * math.pi
    return SourceSample(mu_h=mu_h, mu_v=mu_v,
                        phi=rng.random() * two_pi,
                        phi_g=rng.random() * two_pi)
