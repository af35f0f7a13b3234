"""Region-pair expectation values by tensor-product Gauss-Legendre quadrature.

Every observable is an average over a pair of post-selection regions under the
shaped source density, written in intensity polar coordinates with Jacobian
r1 r2 dr1 dr2 dtheta1 dtheta2.  Three integral families live here:

* mean gain / error gain: the detection-model gains integrated over the
  region pair.  Z x Z pairs depend on the azimuths only through their
  difference, which is integrated once over [0, 2pi); X x X pairs integrate
  the two finite phase windows as a 2D product.
* photon-pair expectations <P_nm>: the shaped density cancels the Poisson
  exponential exactly, so the radial integrals collapse to R^(n+2)/(n+2) in
  closed form and only angular moments of (cos t + sin t)^n remain.
* decoupled yields Y'_nm: angular-moment-weighted averages of a yield
  function of the two polar angles, independent of the decoy radii.

The direct (unfactorized) integral of P_nm times a yield is also provided,
under both the shaped and the natural density, so the factorization can be
checked and shown to fail without shaping.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import channel as ch_mod
from .channel import ChannelParams, ERROR_BIT_PAIRS
from .quadrules import gauss_nodes
from .regions import DECOYS, RegionParams, angular_bands, sector_mass_shaped
from .source import SourceParams

TWO_PI = 2.0 * math.pi


class QuadratureConvergenceError(RuntimeError):
    """Doubling the node counts moved the result more than the tolerance."""


@dataclass(frozen=True)
class QuadratureSpec:
    """Per-axis Gauss-Legendre node counts."""

    nodes_radial: int = 32
    nodes_angular: int = 32
    nodes_phase: int = 32

    def __post_init__(self):
        if min(self.nodes_radial, self.nodes_angular, self.nodes_phase) < 4:
            raise ValueError("node counts must be >= 4")

    def doubled(self) -> "QuadratureSpec":
        return QuadratureSpec(2 * self.nodes_radial, 2 * self.nodes_angular,
                              2 * self.nodes_phase)


@dataclass(frozen=True)
class PairExpectations:
    """Conditional expectations for one (basis, decoy_i, decoy_j) region pair."""

    gain: float
    error_gain: float
    pnm: np.ndarray
    cells: dict


@dataclass
class GainTable:
    """All region-pair expectations needed by the decoy analysis and key rate."""

    entries: dict
    sift: dict
    acceptance: float
    rp: RegionParams
    sp: SourceParams
    ch: ChannelParams
    quad: QuadratureSpec
    n_cut: int = 6
    m_cut: int = 6

    def pair(self, basis: str, di: str, dj: str) -> PairExpectations:
        return self.entries[basis, di, dj]

    def gain(self, basis: str, di: str, dj: str) -> float:
        return self.pair(basis, di, dj).gain

    def error_gain(self, basis: str, di: str, dj: str) -> float:
        return self.pair(basis, di, dj).error_gain

    def pnm(self, basis: str, di: str, dj: str) -> np.ndarray:
        return self.pair(basis, di, dj).pnm

    def sift_pair(self, basis: str, di: str, dj: str) -> float:
        return self.sift[basis, di] * self.sift[basis, dj]


# ---------------------------------------------------------------------------
# party grids


def _party_polar_grid(band: tuple[float, float], radius: float,
                      sp: SourceParams, quad: QuadratureSpec):
    """Flattened (theta, r) grid with shaped-measure weights for one party.

    Returns (w, mu, c0sq, c1sq): quadrature weights including the density
    exp(r(cos+sin)) r and the shaped normalization, total intensity
    mu = r (cos + sin), and the squared amplitude coefficients
    cos(theta)/(cos+sin), sin(theta)/(cos+sin).
    """
    th, wth = gauss_nodes(band[0], band[1], quad.nodes_angular)
    rr, wr = gauss_nodes(0.0, radius, quad.nodes_radial)
    c = np.cos(th)
    s = np.sin(th)
    k = c + s
    mu = np.outer(k, rr)
    w = np.outer(wth, wr * rr) * np.exp(mu) / math.expm1(sp.mu_max) ** 2
    c0sq = np.broadcast_to((c / k)[:, None], mu.shape)
    c1sq = np.broadcast_to((s / k)[:, None], mu.shape)
    return w.ravel(), mu.ravel(), c0sq.ravel(), c1sq.ravel()


def _party_gain_vectors(grid, eta: float):
    """Channel-side per-point quantities: x = eta mu and the mode amplitudes."""
    w, mu, c0sq, c1sq = grid
    x = eta * mu
    return w, x, np.sqrt(c0sq * x), np.sqrt(c1sq * x)


# ---------------------------------------------------------------------------
# gain contraction


def _phase_rule_z(quad: QuadratureSpec):
    # difference variable over a full period, weight 1/(2pi)
    d, wd = gauss_nodes(0.0, TWO_PI, quad.nodes_phase)
    return np.cos(d), wd / TWO_PI


def _phase_rule_x_pairs(rp: RegionParams, quad: QuadratureSpec):
    """2D product rule over two equal phase windows, collapsed to cos(diff).

    Exploits cos(x_i - x_j) symmetry to fold the product rule onto i <= j with
    doubled off-diagonal weights; weights carry the 1/(2pi) azimuth density of
    each party.  Valid for the window pair of one bit class; the opposite
    class shifts the difference by pi, flipping the sign of the cosine.
    """
    x, gw = gauss_nodes(-rp.delta_phi, rp.delta_phi, quad.nodes_phase)
    n = x.size
    ii, jj = np.triu_indices(n)
    cosd = np.cos(x[ii] - x[jj])
    w = gw[ii] * gw[jj] * np.where(ii == jj, 1.0, 2.0) / (TWO_PI * TWO_PI)
    return cosd, w


def _gain_cell_pair(grid_a, grid_b, ch: ChannelParams, cos_phase: np.ndarray,
                    w_phase: np.ndarray, first_order: bool = False,
                    block: int = 128) -> tuple[float, float]:
    """Integrated (q_minus, q_plus) over one region-pair cell, unnormalized.

    Contracts the detection-model gains against both parties' shaped-measure
    weights and the supplied phase rule.  Work proceeds in row blocks of the
    A-grid to bound the size of intermediate matrices.
    """
    w_a, x_a, u0, u1 = _party_gain_vectors(grid_a, ch.eta_a)
    w_b, x_b, v0, v1 = _party_gain_vectors(grid_b, ch.eta_b)
    a = 1.0 - ch.p_d
    pm = float(w_phase.sum())

    if first_order:
        def i0m1(arg_sq):
            return 0.25 * arg_sq
    else:
        i0m1 = ch_mod._i0m1_from_sq

    v0sq = v0 * v0
    v1sq = v1 * v1
    exp_mg_b = np.exp(-0.5 * x_b)
    total_m = 0.0
    total_p = 0.0
    for lo in range(0, x_a.size, block):
        hi = min(lo + block, x_a.size)
        u0b = u0[lo:hi, None]
        u1b = u1[lo:hi, None]
        b0 = u0b * v0[None, :]
        b1 = u1b * v1[None, :]
        g0 = 0.5 * (u0b * u0b + v0sq[None, :])
        g1 = 0.5 * (u1b * u1b + v1sq[None, :])
        b0sq = b0 * b0
        b1sq = b1 * b1
        p2 = b0sq + b1sq
        cr = 2.0 * b0 * b1

        base = (ch.p_d * ch.p_d
                + a * a * np.expm1(-0.5 * (x_a[lo:hi, None] + x_b[None, :]))
                - a * (np.exp(-g0) * i0m1(b1sq) + np.expm1(-g0))
                - a * (np.exp(-g1) * i0m1(b0sq) + np.expm1(-g1)))

        s_m = np.zeros_like(p2)
        s_p = np.zeros_like(p2)
        for cosd, wp in zip(cos_phase, w_phase):
            delta = cr * cosd
            s_m += wp * i0m1(np.maximum(p2 - delta, 0.0))
            s_p += wp * i0m1(np.maximum(p2 + delta, 0.0))

        env = (2.0 * a * a) * (np.exp(-0.5 * x_a[lo:hi])[:, None]
                               * exp_mg_b[None, :])
        wrow = w_a[lo:hi]
        total_m += wrow @ (env * np.maximum(s_m + pm * base, 0.0)) @ w_b
        total_p += wrow @ (env * np.maximum(s_p + pm * base, 0.0)) @ w_b
    return total_m, total_p


def pair_cells(basis: str, di: str, dj: str, rp: RegionParams, sp: SourceParams,
               ch: ChannelParams, quad: QuadratureSpec,
               first_order: bool = False) -> dict:
    """Conditional per-cell gains for one region pair.

    Returns {(bit_a, bit_b, outcome): probability of that announced outcome
    and bit combination given both samples fell in (S_i, S_j)}.  Summed over
    cells and outcomes this is the mean gain.
    """
    r_i = rp.radius_fraction(di) * sp.mu_max
    r_j = rp.radius_fraction(dj) * sp.mu_max

    if basis == "Z":
        cos_phase, w_phase = _phase_rule_z(quad)
        bands = {bit: angular_bands("Z", rp, bits=(bit,))[0] for bit in (0, 1)}
        grids_a = {bit: _party_polar_grid(bands[bit], r_i, sp, quad)
                   for bit in (0, 1)}
        grids_b = {bit: _party_polar_grid(bands[bit], r_j, sp, quad)
                   for bit in (0, 1)}
        cells = {}
        for ka in (0, 1):
            for kb in (0, 1):
                qm, qp = _gain_cell_pair(grids_a[ka], grids_b[kb], ch,
                                         cos_phase, w_phase,
                                         first_order=first_order)
                cells[ka, kb, "minus"] = qm
                cells[ka, kb, "plus"] = qp
        mass_a = sum(float(g[0].sum()) for g in grids_a.values())
        mass_b = sum(float(g[0].sum()) for g in grids_b.values())
        p_pair = mass_a * mass_b  # full azimuth, phase factor 1
    elif basis == "X":
        band = angular_bands("X", rp)[0]
        grid_a = _party_polar_grid(band, r_i, sp, quad)
        grid_b = _party_polar_grid(band, r_j, sp, quad)
        cos_phase, w_phase = _phase_rule_x_pairs(rp, quad)
        qm, qp = _gain_cell_pair(grid_a, grid_b, ch, cos_phase, w_phase,
                                 first_order=first_order)
        # the opposite bit class shifts the azimuth difference by pi, which
        # exactly swaps the two Bell outcomes
        cells = {}
        for ka, kb in ((0, 0), (1, 1)):
            cells[ka, kb, "minus"] = qm
            cells[ka, kb, "plus"] = qp
        for ka, kb in ((0, 1), (1, 0)):
            cells[ka, kb, "minus"] = qp
            cells[ka, kb, "plus"] = qm
        window = 2.0 * rp.delta_phi / TWO_PI
        mass_a = float(grid_a[0].sum()) * 2.0 * window
        mass_b = float(grid_b[0].sum()) * 2.0 * window
        p_pair = mass_a * mass_b
    else:
        raise ValueError(f"unknown basis {basis!r}")

    if not p_pair > 0.0:
        raise ValueError(
            f"region pair {basis} ({di},{dj}) has vanishing probability mass")
    return {key: val / p_pair for key, val in cells.items()}


def gain_from_cells(cells: dict) -> float:
    return float(sum(cells.values()))


def error_gain_from_cells(cells: dict, basis: str, e_d: float) -> float:
    """Misalignment-mixed error gain from per-cell conditional gains."""
    total = 0.0
    for (ka, kb, outcome), val in cells.items():
        is_err = (ka, kb) in ERROR_BIT_PAIRS[basis, outcome]
        total += (e_d + (1.0 - 2.0 * e_d) * is_err) * val
    return total


def mean_gain(basis: str, di: str, dj: str, rp: RegionParams, sp: SourceParams,
              ch: ChannelParams, quad: QuadratureSpec,
              check_convergence: bool = False,
              convergence_tol: float = 1e-6) -> tuple[float, float]:
    """Mean gain and mean error gain over one region pair.

    With check_convergence the integrals are recomputed at doubled node
    counts; disagreement above the tolerance raises
    QuadratureConvergenceError.
    """
    cells = pair_cells(basis, di, dj, rp, sp, ch, quad)
    q = gain_from_cells(cells)
    t = error_gain_from_cells(cells, basis, ch.e_d)
    if check_convergence:
        cells2 = pair_cells(basis, di, dj, rp, sp, ch, quad.doubled())
        q2 = gain_from_cells(cells2)
        t2 = error_gain_from_cells(cells2, basis, ch.e_d)
        scale = max(abs(q), abs(q2), 1e-300)
        if abs(q - q2) / scale > convergence_tol or \
                abs(t - t2) / max(abs(t), abs(t2), 1e-300) > convergence_tol:
            raise QuadratureConvergenceError(
                f"gain quadrature not converged for {basis} ({di},{dj}): "
                f"dq={abs(q - q2) / scale:.3e}")
    return q, t


# ---------------------------------------------------------------------------
# photon-number expectations


def _angular_moments(basis: str, rp: RegionParams, quad: QuadratureSpec,
                     n_max: int) -> np.ndarray:
    """Moments A_n = integral of (cos + sin)^n over the basis's angular bands."""
    moments = np.zeros(n_max + 1)
    for band in angular_bands(basis, rp):
        th, wth = gauss_nodes(band[0], band[1], quad.nodes_angular)
        k = np.cos(th) + np.sin(th)
        powers = np.ones_like(k)
        for n in range(n_max + 1):
            moments[n] += float(powers @ wth)
            powers = powers * k
    return moments


def _pnm_party_vector(basis: str, decoy: str, rp: RegionParams, sp: SourceParams,
                      quad: QuadratureSpec, n_max: int) -> np.ndarray:
    """Per-party photon-number weights f_n with <P_nm> = f_n(A) f_m(B).

    The shaped density cancels the Poisson exponential, leaving the closed
    radial factor R^(n+2)/(n+2) and the angular moments; the result is
    conditioned on the region, so the shaped normalization and phase windows
    drop out.
    """
    radius = rp.radius_fraction(decoy) * sp.mu_max
    mass = sum(
        sector_mass_shaped(band, radius, sp, quad.nodes_radial,
                           quad.nodes_angular)
        for band in angular_bands(basis, rp))
    mass *= math.expm1(sp.mu_max) ** 2  # back to unnormalized measure
    if not mass > 0.0:
        raise ValueError(f"{basis} {decoy} region has vanishing mass")
    moments = _angular_moments(basis, rp, quad, n_max)
    out = np.empty(n_max + 1)
    log_r = math.log(radius)
    for n in range(n_max + 1):
        radial = math.exp((n + 2) * log_r - math.lgamma(n + 1)) / (n + 2)
        out[n] = moments[n] * radial / mass
    return out


def mean_pnm(basis: str, di: str, dj: str, n: int, m: int, rp: RegionParams,
             sp: SourceParams, quad: QuadratureSpec) -> float:
    """<P_nm> over a region pair via the factorized closed-radial form."""
    if n < 0 or m < 0:
        raise ValueError("photon numbers must be non-negative")
    fa = _pnm_party_vector(basis, di, rp, sp, quad, n)
    fb = _pnm_party_vector(basis, dj, rp, sp, quad, m)
    return float(fa[n] * fb[m])


def pnm_table(basis: str, di: str, dj: str, rp: RegionParams, sp: SourceParams,
              quad: QuadratureSpec, n_cut: int, m_cut: int) -> np.ndarray:
    """<P_nm> for all n <= n_cut, m <= m_cut as an (n_cut+1, m_cut+1) array."""
    fa = _pnm_party_vector(basis, di, rp, sp, quad, n_cut)
    fb = _pnm_party_vector(basis, dj, rp, sp, quad, m_cut)
    return np.outer(fa, fb)


def yprime(n: int, m: int, basis: str, rp: RegionParams,
           yield_fn: Callable[[np.ndarray, np.ndarray], np.ndarray],
           quad: QuadratureSpec) -> float:
    """Decoupled yield Y'_nm: the angular-moment-weighted average of yield_fn.

    Independent of the decoy radii by construction; yield_fn must accept
    broadcast arrays of the two polar angles and return values in [0, 1].
    """
    th1, w1 = _band_nodes(basis, rp, quad)
    th2, w2 = _band_nodes(basis, rp, quad)
    k1 = (np.cos(th1) + np.sin(th1)) ** n
    k2 = (np.cos(th2) + np.sin(th2)) ** m
    wa = w1 * k1
    wb = w2 * k2
    vals = yield_fn(th1[:, None], th2[None, :])
    num = wa @ vals @ wb
    den = wa.sum() * wb.sum()
    return float(num / den)


def _band_nodes(basis: str, rp: RegionParams, quad: QuadratureSpec):
    nodes = []
    weights = []
    for band in angular_bands(basis, rp):
        th, wth = gauss_nodes(band[0], band[1], quad.nodes_angular)
        nodes.append(th)
        weights.append(wth)
    return np.concatenate(nodes), np.concatenate(weights)


# ---------------------------------------------------------------------------
# direct (unfactorized) integrals, shaped and natural


def _natural_band_grid(band: tuple[float, float], radius: float,
                       sp: SourceParams, quad: QuadratureSpec):
    """(theta, r) grid with natural-measure weights, shapes (n_ang, n_rad).

    In polar coordinates the natural density times the Jacobian is
    1 / (pi^2 sqrt(cos sin (M - r cos)(M - r sin))); the angular square-root
    singularities at 0 and pi/2 are removed by a quadratic substitution of
    the angle.  Radial singularities (radius reaching the square boundary)
    are not handled; keep radius < mu_max for bands touching the axes.

    Returns (w, mu, theta_nodes).
    """
    m = sp.mu_max
    lo, hi = band
    if lo == 0.0:
        t, wt = gauss_nodes(0.0, 1.0, quad.nodes_angular)
        th = hi * t * t
        wt = wt * 2.0 * hi * t
    elif hi >= math.pi / 2 - 1e-12:
        t, wt = gauss_nodes(0.0, 1.0, quad.nodes_angular)
        th = hi - (hi - lo) * t * t
        wt = wt * 2.0 * (hi - lo) * t
    else:
        th, wt = gauss_nodes(lo, hi, quad.nodes_angular)
    rr, wr = gauss_nodes(0.0, radius, quad.nodes_radial)
    c = np.cos(th)
    s = np.sin(th)
    denom = np.sqrt((c * s)[:, None]
                    * (m - c[:, None] * rr[None, :])
                    * (m - s[:, None] * rr[None, :]))
    w = np.outer(wt, wr) / (math.pi ** 2 * denom)
    mu = (c + s)[:, None] * rr[None, :]
    return w, mu, th


def _shaped_band_grid(band: tuple[float, float], radius: float,
                      sp: SourceParams, quad: QuadratureSpec):
    """(theta, r) grid with shaped-measure weights, shapes (n_ang, n_rad)."""
    th, wth = gauss_nodes(band[0], band[1], quad.nodes_angular)
    rr, wr = gauss_nodes(0.0, radius, quad.nodes_radial)
    k = np.cos(th) + np.sin(th)
    mu = np.outer(k, rr)
    w = np.outer(wth, wr * rr) * np.exp(mu) / math.expm1(sp.mu_max) ** 2
    return w, mu, th


def mean_pnm_yield(basis: str, di: str, dj: str, n: int, m: int,
                   rp: RegionParams, sp: SourceParams, quad: QuadratureSpec,
                   yield_fn: Callable[[np.ndarray, np.ndarray], np.ndarray],
                   density: str = "shaped") -> float:
    """Direct quadrature of <P_nm Y_nm> without using the factorization.

    The photon-pair probability is a product of per-party Poisson factors, so
    the radial direction is collapsed per angle first and only the angular
    coupling through yield_fn remains.  density selects the shaped or the
    natural source law; the natural variant exists to show the factorization
    breaking down.
    """
    grids = {"shaped": _shaped_band_grid, "natural": _natural_band_grid}
    if density not in grids:
        raise ValueError("density must be 'shaped' or 'natural'")
    make = grids[density]

    def party_collapsed(decoy: str, k: int):
        radius = rp.radius_fraction(decoy) * sp.mu_max
        ang_w = []
        ang_th = []
        mass = 0.0
        for band in angular_bands(basis, rp):
            w, mu, th = make(band, radius, sp, quad)
            if k > 0:
                pois = np.exp(-mu + k * np.log(mu) - math.lgamma(k + 1))
            else:
                pois = np.exp(-mu)
            ang_w.append((w * pois).sum(axis=1))
            ang_th.append(th)
            mass += float(w.sum())
        return np.concatenate(ang_th), np.concatenate(ang_w), mass

    th_a, wa, mass_a = party_collapsed(di, n)
    th_b, wb, mass_b = party_collapsed(dj, m)
    vals = yield_fn(th_a[:, None], th_b[None, :])
    return float(wa @ vals @ wb) / (mass_a * mass_b)


def mean_pnm_direct(basis: str, di: str, dj: str, n: int, m: int,
                    rp: RegionParams, sp: SourceParams, quad: QuadratureSpec,
                    density: str = "shaped") -> float:
    """<P_nm> by direct quadrature (yield identically 1)."""
    return mean_pnm_yield(basis, di, dj, n, m, rp, sp, quad,
                          lambda t1, t2: np.ones(np.broadcast(t1, t2).shape),
                          density=density)


# ---------------------------------------------------------------------------
# table assembly


def build_gain_table(rp: RegionParams, sp: SourceParams, ch: ChannelParams,
                     quad: QuadratureSpec, n_cut: int = 6, m_cut: int = 6,
                     bases=("Z", "X")) -> GainTable:
    """Assemble gains, error gains, <P_nm>, and sifting probabilities.

    Both parties share the source and region parameters; the channel may be
    asymmetric through its two transmittances.
    """
    from .regions import RegionSpec, party_region_probability
    from .source import shaping_acceptance_rate

    entries = {}
    sift = {}
    for basis in bases:
        for decoy in DECOYS:
            spec = RegionSpec(basis=basis, decoy=decoy)
            sift[basis, decoy] = party_region_probability(
                spec, rp, sp, quad.nodes_radial, quad.nodes_angular)
        for di in DECOYS:
            for dj in DECOYS:
                cells = pair_cells(basis, di, dj, rp, sp, ch, quad)
                entries[basis, di, dj] = PairExpectations(
                    gain=gain_from_cells(cells),
                    error_gain=error_gain_from_cells(cells, basis, ch.e_d),
                    pnm=pnm_table(basis, di, dj, rp, sp, quad, n_cut, m_cut),
                    cells=cells,
                )
    return GainTable(entries=entries, sift=sift,
                     acceptance=shaping_acceptance_rate(sp),
                     rp=rp, sp=sp, ch=ch, quad=quad, n_cut=n_cut, m_cut=m_cut)
