"""Detection channel model for the untrusted Bell-measurement relay.

Both parties send attenuated coherent states encoded as

    c0 |H> + c1 e^{i phi} |V>,   c0 = cos(theta/2), c1 = sin(theta/2),

with independently randomized global phases.  After the relay's beam splitter
the four threshold detectors see coherent intensities; a detector clicks with
probability 1 - (1 - p_d) exp(-I).  Averaging the exactly-two-click
coincidence patterns over the global phase difference gives closed forms for
the gains of both announced Bell outcomes:

    Q_minus = 2 (1-p_d)^2 e^{-g} { I0(b-) + (1-p_d)^2 e^{-g}
              - (1-p_d) [ e^{-g0} I0(b1) + e^{-g1} I0(b0) ] }

and the same with b+ for Q_plus, where

    g  = (eta_a mu_a + eta_b mu_b) / 2
    g0 = (c0^2 eta_a mu_a + c0'^2 eta_b mu_b) / 2      (g1 analogously)
    b0 = c0 c0' sqrt(eta_a mu_a eta_b mu_b)            (b1 analogously)
    b∓^2 = b0^2 + b1^2 -/+ 2 b0 b1 cos(phi - phi').

The braces are evaluated in a rearranged, algebraically identical form built
from I0(x) - 1 and expm1 so that the vacuum limit 2 (1-p_d)^2 p_d^2 comes out
exact instead of dying by cancellation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .source import SourceSample

_COEF_COUNT = 14
_I0_COEFS = []
_fact = 1.0
for _k in range(1, _COEF_COUNT + 1):
    _fact *= _k
    _I0_COEFS.append(1.0 / (_fact * _fact))
# Horner series for I0(x)-1 in q = x^2/4; machine precision for x <= 4.
_I0_HOT_MAX_SQ = 16.0


class UndefinedQBERError(ZeroDivisionError):
    """All same-basis gains vanished; the error rate is undefined."""


def bessel_i0(x):
    """Modified Bessel function I0 via its power series.

    All series terms are positive, so plain summation is accurate for any
    argument that does not overflow; convergence is checked term-wise.
    """
    x = np.asarray(x, dtype=float)
    if np.any(x < 0.0):
        raise ValueError("bessel_i0 requires x >= 0")
    return 1.0 + _i0m1_series(x)


def bessel_i0m1(x):
    """I0(x) - 1, accurate for small x where forming I0 first would cancel."""
    x = np.asarray(x, dtype=float)
    if np.any(x < 0.0):
        raise ValueError("bessel_i0m1 requires x >= 0")
    return _i0m1_series(x)


def _i0m1_series(x: np.ndarray):
    q = 0.25 * x * x
    term = np.array(q, dtype=float, copy=True)
    acc = np.array(q, dtype=float, copy=True)
    for k in range(2, 400):
        term *= q / (k * k)
        acc += term
        if np.all(term <= 1e-18 * (1.0 + acc)):
            break
    return float(acc) if acc.ndim == 0 else acc


def _i0m1_from_sq(xsq: np.ndarray) -> np.ndarray:
    """I0(sqrt(xsq)) - 1 on arrays, Horner fast path for xsq <= 16."""
    if np.max(xsq, initial=0.0) > _I0_HOT_MAX_SQ:
        return _i0m1_series(np.sqrt(xsq))
    q = 0.25 * xsq
    acc = np.full_like(q, _I0_COEFS[-1])
    for k in range(_COEF_COUNT - 2, -1, -1):
        acc *= q
        acc += _I0_COEFS[k]
    acc *= q
    return acc


@dataclass(frozen=True)
class ChannelParams:
    """Detector and fiber constants; total transmittances are derived."""

    p_d: float
    e_d: float
    eta_d: float
    alpha_db_km: float = 0.2
    l_a: float = 0.0
    l_b: float = 0.0

    def __post_init__(self):
        for name in ("p_d", "e_d", "eta_d"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if self.alpha_db_km < 0.0 or self.l_a < 0.0 or self.l_b < 0.0:
            raise ValueError("fiber loss and distances must be non-negative")

    @property
    def eta_a(self) -> float:
        return self.eta_d * 10.0 ** (-self.alpha_db_km * self.l_a / 10.0)

    @property
    def eta_b(self) -> float:
        return self.eta_d * 10.0 ** (-self.alpha_db_km * self.l_b / 10.0)

    def at_distance(self, l_a: float, l_b: float | None = None) -> "ChannelParams":
        return ChannelParams(p_d=self.p_d, e_d=self.e_d, eta_d=self.eta_d,
                             alpha_db_km=self.alpha_db_km, l_a=l_a,
                             l_b=l_a if l_b is None else l_b)


@dataclass(frozen=True)
class EncodedState:
    """Coherent pulse of intensity mu in the polarization mode (c0, c1 e^{i phi})."""

    mu: float
    c0: float
    c1: float
    phi: float = 0.0

    def __post_init__(self):
        if self.mu < 0.0:
            raise ValueError("intensity must be non-negative")
        if abs(self.c0 ** 2 + self.c1 ** 2 - 1.0) > 1e-12:
            raise ValueError("amplitude coefficients must satisfy c0^2 + c1^2 = 1")

    @classmethod
    def from_bloch(cls, theta: float, phi: float, mu: float) -> "EncodedState":
        return cls(mu=mu, c0=math.cos(theta / 2.0), c1=math.sin(theta / 2.0), phi=phi)

    @classmethod
    def vacuum(cls) -> "EncodedState":
        return cls(mu=0.0, c0=1.0, c1=0.0, phi=0.0)


@dataclass(frozen=True)
class BellGains:
    """Per-pulse-pair probabilities of the two announced Bell outcomes."""

    q_minus: float
    q_plus: float


def state_from_sample(s: SourceSample) -> EncodedState:
    """Map an emitted sample to its encoded state; zero intensity means vacuum."""
    mu = s.mu_h + s.mu_v
    if mu <= 0.0:
        return EncodedState.vacuum()
    return EncodedState(mu=mu, c0=math.sqrt(s.mu_h / mu),
                        c1=math.sqrt(s.mu_v / mu), phi=s.phi)


def gain_arrays(x_a, u0, u1, x_b, v0, v1, cos_dphi, p_d, first_order=False):
    """Vectorized Bell-outcome gains.

    x_a = eta_a * mu_a and (u0, u1) = (c0, c1) * sqrt(x_a) for one party,
    likewise x_b, v0, v1 for the other; cos_dphi is the cosine of the azimuth
    difference.  Inputs broadcast together.  Returns (q_minus, q_plus).

    With first_order=True the leading Bessel term is replaced by its small-
    argument approximation I0(x) ~ 1 + x^2/4 (regression comparisons only).
    """
    a = 1.0 - p_d
    gamma = 0.5 * (x_a + x_b)
    g0 = 0.5 * (u0 * u0 + v0 * v0)
    g1 = 0.5 * (u1 * u1 + v1 * v1)
    b0 = u0 * v0
    b1 = u1 * v1

    b0sq = b0 * b0
    b1sq = b1 * b1
    cross = 2.0 * b0 * b1 * cos_dphi
    arg_minus = np.maximum(b0sq + b1sq - cross, 0.0)
    arg_plus = np.maximum(b0sq + b1sq + cross, 0.0)
    if first_order:
        lead_minus = 0.25 * arg_minus
        lead_plus = 0.25 * arg_plus
        i0m1_b0 = 0.25 * b0sq
        i0m1_b1 = 0.25 * b1sq
    else:
        lead_minus = _i0m1_from_sq(np.asarray(arg_minus, dtype=float))
        lead_plus = _i0m1_from_sq(np.asarray(arg_plus, dtype=float))
        i0m1_b0 = _i0m1_from_sq(np.asarray(b0sq, dtype=float))
        i0m1_b1 = _i0m1_from_sq(np.asarray(b1sq, dtype=float))

    # Braces rearranged around the exact vacuum floor p_d^2: grouping the
    # subtracted detector terms as (e^{-g} I0(b) - 1) keeps every piece O(small)
    # and the total free of 1 - 2a + a^2 cancellation.
    base = (p_d * p_d
            + a * a * np.expm1(-gamma)
            - a * (np.exp(-g0) * i0m1_b1 + np.expm1(-g0))
            - a * (np.exp(-g1) * i0m1_b0 + np.expm1(-g1)))
    pref = 2.0 * a * a * np.exp(-gamma)
    q_minus = pref * np.maximum(lead_minus + base, 0.0)
    q_plus = pref * np.maximum(lead_plus + base, 0.0)
    return q_minus, q_plus


def bell_gains(sa: EncodedState, sb: EncodedState, ch: ChannelParams,
               first_order: bool = False) -> BellGains:
    """Bell-outcome gains for a specific pair of encoded states."""
    x_a = ch.eta_a * sa.mu
    x_b = ch.eta_b * sb.mu
    ra, rb = math.sqrt(x_a), math.sqrt(x_b)
    qm, qp = gain_arrays(x_a, sa.c0 * ra, sa.c1 * ra,
                         x_b, sb.c0 * rb, sb.c1 * rb,
                         math.cos(sa.phi - sb.phi), ch.p_d,
                         first_order=first_order)
    return BellGains(q_minus=float(qm), q_plus=float(qp))


# Bit pairs counted as errors, per basis and announced outcome.  Both Bell
# outcomes are anti-correlated in Z (one party flips), so equal Z bits are
# errors for either announcement; in X the minus outcome is anti-correlated
# and the plus outcome correlated.
ERROR_BIT_PAIRS = {
    ("Z", "minus"): ((0, 0), (1, 1)),
    ("Z", "plus"): ((0, 0), (1, 1)),
    ("X", "minus"): ((0, 0), (1, 1)),
    ("X", "plus"): ((0, 1), (1, 0)),
}


def qber_from_gains(gains: Mapping[tuple[int, int], BellGains], basis: str,
                    e_d: float) -> dict[str, float]:
    """Misalignment-mixed error rate per Bell outcome.

    `gains` maps same-basis bit pairs (bit_a, bit_b) to their BellGains.  The
    intrinsic rate e_hat is the error-pair share of the total gain; the
    reported rate is e_d (1 - e_hat) + (1 - e_d) e_hat.
    """
    out = {}
    for outcome in ("minus", "plus"):
        total = sum(getattr(g, f"q_{outcome}") for g in gains.values())
        if total <= 0.0:
            raise UndefinedQBERError(f"total {outcome} gain is zero in basis {basis}")
        bad = sum(getattr(gains[pair], f"q_{outcome}")
                  for pair in ERROR_BIT_PAIRS[basis, outcome] if pair in gains)
        e_hat = bad / total
        out[outcome] = e_d * (1.0 - e_hat) + (1.0 - e_d) * e_hat
    return out


def poisson_pmf(n: int, mu: float) -> float:
    if mu < 0.0:
        raise ValueError("intensity must be non-negative")
    if mu == 0.0:
        return 1.0 if n == 0 else 0.0
    return math.exp(-mu + n * math.log(mu) - math.lgamma(n + 1))


def joint_poisson(n: int, m: int, mu_a: float, mu_b: float) -> float:
    """Probability that the parties emit n and m photons at the given intensities."""
    if n < 0 or m < 0:
        raise ValueError("photon numbers must be non-negative")
    return poisson_pmf(n, mu_a) * poisson_pmf(m, mu_b)
