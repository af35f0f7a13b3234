"""Post-selection geometry.

Samples live in the intensity quarter-plane, described by the polar pair
r = sqrt(mu_h^2 + mu_v^2), theta = arctan(mu_v / mu_h), plus the azimuth
phase.  Basis and bit follow from angular bands:

    Z0: theta in [0, delta_z]                (any azimuth)
    Z1: theta in [pi/2 - delta_z, pi/2]      (any azimuth)
    X:  theta in [pi/4 - delta_x, pi/4 + delta_x], with the azimuth inside
        [-delta_phi, delta_phi) for bit 0 or [pi - delta_phi, pi + delta_phi)
        for bit 1.

Decoy settings are concentric sectors r <= mu_max, t1*mu_max, t2*mu_max;
membership is nested rather than disjoint.  Everything else is discarded.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .quadrules import gauss_nodes
from .source import SourceParams

TWO_PI = 2.0 * math.pi

DECOYS = ("chi", "nu", "omega")
BASES = ("Z", "X")


@dataclass(frozen=True)
class RegionParams:
    """Angular half-widths and decoy radius fractions of the post-selection regions."""

    delta_z: float
    delta_x: float
    delta_phi: float
    t1: float
    t2: float

    def __post_init__(self):
        if not 0.0 < self.delta_z <= math.pi / 4:
            raise ValueError(f"delta_z must be in (0, pi/4], got {self.delta_z}")
        if not 0.0 < self.delta_x <= math.pi / 4:
            raise ValueError(f"delta_x must be in (0, pi/4], got {self.delta_x}")
        if not 0.0 < self.delta_phi <= math.pi / 2:
            raise ValueError(f"delta_phi must be in (0, pi/2], got {self.delta_phi}")
        if not 0.0 < self.t2 < self.t1 < 1.0:
            raise ValueError(f"need 0 < t2 < t1 < 1, got t1={self.t1}, t2={self.t2}")
        if self.delta_z >= math.pi / 4 - self.delta_x:
            raise ValueError(
                "Z and X angular bands overlap: require delta_z < pi/4 - delta_x")

    def radius_fraction(self, decoy: str) -> float:
        return {"chi": 1.0, "nu": self.t1, "omega": self.t2}[decoy]


@dataclass(frozen=True)
class RegionLabel:
    """Classification of one sample: basis, bit, and nested decoy memberships."""

    basis: str
    bit: int
    decoy_memberships: frozenset

    def __post_init__(self):
        ms = self.decoy_memberships
        if "omega" in ms and "nu" not in ms:
            raise ValueError("omega membership requires nu membership")
        if "nu" in ms and "chi" not in ms:
            raise ValueError("nu membership requires chi membership")

    @property
    def innermost(self) -> str:
        for decoy in reversed(DECOYS):
            if decoy in self.decoy_memberships:
                return decoy
        raise ValueError("empty membership set")


@dataclass(frozen=True)
class RegionSpec:
    """Geometric region S for one party: basis, decoy radius, and included bits."""

    basis: str
    decoy: str
    bits: frozenset = field(default_factory=lambda: frozenset((0, 1)))


@dataclass(frozen=True)
class MixedStateSummary:
    """Effective bit-flip probability and residual coherence of the key states."""

    xi: float
    offdiag_magnitude: float


def angular_band(basis: str, bit: int, rp: RegionParams) -> tuple[float, float]:
    """Polar-angle interval selecting (basis, bit); the X band is bit-independent."""
    if basis == "Z":
        if bit == 0:
            return 0.0, rp.delta_z
        return math.pi / 2 - rp.delta_z, math.pi / 2
    if basis == "X":
        return math.pi / 4 - rp.delta_x, math.pi / 4 + rp.delta_x
    raise ValueError(f"unknown basis {basis!r}")


def angular_bands(basis: str, rp: RegionParams,
                  bits=(0, 1)) -> tuple[tuple[float, float], ...]:
    """Distinct angular bands covering the given bits of a basis region."""
    if basis == "Z":
        return tuple(angular_band("Z", b, rp) for b in sorted(bits))
    return (angular_band("X", 0, rp),)


def phase_window(basis: str, bit: int, rp: RegionParams) -> tuple[float, float]:
    """Accepted azimuth interval (unwrapped) for (basis, bit)."""
    if basis == "Z":
        return 0.0, TWO_PI
    if bit == 0:
        return -rp.delta_phi, rp.delta_phi
    return math.pi - rp.delta_phi, math.pi + rp.delta_phi


def phase_mass(basis: str, rp: RegionParams, bits=(0, 1)) -> float:
    """Fraction of the uniform azimuth falling in the region's phase windows."""
    if basis == "Z":
        return 1.0
    return len(set(bits)) * 2.0 * rp.delta_phi / TWO_PI


def classify(sample, rp: RegionParams, sp: SourceParams):
    """Assign a RegionLabel to a sample, or None when the sample is discarded.

    Angular bands are closed intervals; phase windows take the inclusive-lower,
    exclusive-upper convention.  Samples outside the largest decoy sector
    (r > mu_max) carry no usable decoy setting and are discarded.
    """
    theta = math.atan2(sample.mu_v, sample.mu_h)
    r = math.hypot(sample.mu_h, sample.mu_v)
    m = sp.mu_max
    if r > m:
        return None

    basis = bit = None
    if theta <= rp.delta_z:
        basis, bit = "Z", 0
    elif theta >= math.pi / 2 - rp.delta_z:
        basis, bit = "Z", 1
    elif abs(theta - math.pi / 4) <= rp.delta_x:
        # bit from the azimuth, folded into [-pi, pi)
        phi = (sample.phi + math.pi) % TWO_PI - math.pi
        if -rp.delta_phi <= phi < rp.delta_phi:
            basis, bit = "X", 0
        elif phi >= math.pi - rp.delta_phi or phi < -(math.pi - rp.delta_phi):
            # [pi - dphi, pi + dphi) folds to [pi - dphi, pi) and [-pi, dphi - pi)
            basis, bit = "X", 1
        else:
            return None
    else:
        return None

    members = ["chi"]
    if r <= rp.t1 * m:
        members.append("nu")
    if r <= rp.t2 * m:
        members.append("omega")
    return RegionLabel(basis=basis, bit=bit, decoy_memberships=frozenset(members))


def classify_batch(mu_h: np.ndarray, mu_v: np.ndarray, phi: np.ndarray,
                   rp: RegionParams, sp: SourceParams):
    """Vectorized classification.

    Returns (ok, basis_idx, bit, inner) int arrays: ok marks classified
    samples; basis_idx is 0 for Z / 1 for X; inner indexes the innermost decoy
    membership into DECOYS.  Entries of discarded samples are left at 0.
    """
    theta = np.arctan2(mu_v, mu_h)
    r = np.hypot(mu_h, mu_v)
    m = sp.mu_max

    in_z0 = theta <= rp.delta_z
    in_z1 = theta >= math.pi / 2 - rp.delta_z
    in_xband = np.abs(theta - math.pi / 4) <= rp.delta_x
    phi_f = (phi + math.pi) % TWO_PI - math.pi
    x_bit0 = (phi_f >= -rp.delta_phi) & (phi_f < rp.delta_phi)
    x_bit1 = (phi_f >= math.pi - rp.delta_phi) | (phi_f < -(math.pi - rp.delta_phi))

    in_z = in_z0 | in_z1
    in_x = in_xband & (x_bit0 | x_bit1)
    ok = (r <= m) & (in_z | in_x)

    basis_idx = np.where(in_x, 1, 0)
    bit = np.where(in_z1 | (in_x & x_bit1), 1, 0)
    inner = np.zeros(mu_h.shape, dtype=np.int64)
    inner[r <= rp.t1 * m] = 1
    inner[r <= rp.t2 * m] = 2
    return ok, basis_idx.astype(np.int64), bit.astype(np.int64), inner


def _shaped_radial_mass(k: np.ndarray, radius: float) -> np.ndarray:
    # int_0^R exp(k r) r dr = (exp(kR)(kR - 1) + 1) / k^2, k >= 1 here
    kr = k * radius
    return (np.exp(kr) * (kr - 1.0) + 1.0) / (k * k)


def sector_mass_shaped(band: tuple[float, float], radius: float, sp: SourceParams,
                       nodes_radial: int = 32, nodes_angular: int = 32) -> float:
    """Shaped-density mass of a sector (angular band x radius), phase excluded.

    Integrates exp(r (cos theta + sin theta)) r over the sector with
    Gauss-Legendre rules and applies the shaped normalization.
    """
    th, wth = gauss_nodes(band[0], band[1], nodes_angular)
    rr, wr = gauss_nodes(0.0, radius, nodes_radial)
    k = np.cos(th) + np.sin(th)
    integrand = np.exp(np.outer(k, rr)) * rr
    inner = integrand @ wr
    return float((inner * wth).sum() / math.expm1(sp.mu_max) ** 2)


def sector_mass_shaped_exact_radial(band: tuple[float, float], radius: float,
                                    sp: SourceParams,
                                    nodes_angular: int = 64) -> float:
    """Same mass with the radial integral in closed form (cross-check path)."""
    th, wth = gauss_nodes(band[0], band[1], nodes_angular)
    k = np.cos(th) + np.sin(th)
    return float((_shaped_radial_mass(k, radius) * wth).sum()
                 / math.expm1(sp.mu_max) ** 2)


def party_region_probability(spec: RegionSpec, rp: RegionParams, sp: SourceParams,
                             nodes_radial: int = 32,
                             nodes_angular: int = 32) -> float:
    """Probability that one party's shaped sample falls in the region."""
    radius = rp.radius_fraction(spec.decoy) * sp.mu_max
    mass = sum(
        sector_mass_shaped(band, radius, sp, nodes_radial, nodes_angular)
        for band in angular_bands(spec.basis, rp, spec.bits))
    return mass * phase_mass(spec.basis, rp, spec.bits)


def region_probability(spec_a: RegionSpec, spec_b: RegionSpec, sp: SourceParams,
                       rp: RegionParams, nodes_radial: int = 32,
                       nodes_angular: int = 32) -> float:
    """Joint probability of a region pair; the two parties sample independently."""
    if spec_a.basis not in BASES or spec_b.basis not in BASES:
        raise ValueError("unknown basis in region spec")
    pa = party_region_probability(spec_a, rp, sp, nodes_radial, nodes_angular)
    pb = party_region_probability(spec_b, rp, sp, nodes_radial, nodes_angular)
    return pa * pb


def bitflip_probability(rp: RegionParams, sp: SourceParams,
                        nodes_radial: int = 64,
                        nodes_angular: int = 64) -> MixedStateSummary:
    """Mixed-state summary of the Z key region.

    Averages sin^2(theta/2) of the post-selection polar angle over the bit-0 key
    sector under the shaped density; the phase-symmetric window makes the
    averaged off-diagonal element e^{i phi} cos(theta/2) sin(theta/2) vanish.
    """
    th, wth = gauss_nodes(0.0, rp.delta_z, nodes_angular)
    rr, wr = gauss_nodes(0.0, sp.mu_max, nodes_radial)
    k = np.cos(th) + np.sin(th)
    radial = (np.exp(np.outer(k, rr)) * rr) @ wr
    mass = float((radial * wth).sum())
    half = 0.5 * th
    xi = float((radial * wth * np.sin(half) ** 2).sum()) / mass

    lo, hi = phase_window("Z", 0, rp)
    ph, wph = gauss_nodes(lo, hi, nodes_angular)
    phase_avg = complex((wph * np.exp(1j * ph)).sum() / (hi - lo))
    coherence = float((radial * wth * np.cos(half) * np.sin(half)).sum()) / mass
    return MixedStateSummary(xi=xi, offdiag_magnitude=abs(phase_avg) * coherence)
