"""Secret key rate assembly and protocol-parameter optimization.

The passive rate per emitted pulse pair is

    R = P_key_A * P_key_B * { <P_11> Y_11^L [1 - H(e_11^U)]
                              - f_e <Q> H(<T>/<Q>) },

with every expectation taken over the largest-radius Z region pair, the
bounds coming from the decoy linear programs, and (optionally) the mean
shaping-acceptance probability of each party folded into the prefactor.

The active baseline evaluates the same structure at three fixed intensity
levels with ideal BB84 states.  Both protocols are accounted per emitted
pulse pair: where the passive prefactor is the probability that a pulse
survives shaping and lands in the key region, the active prefactor is the
probability that a pulse is modulated into the key setting, i.e.
(p_basis * p_signal) per party with balanced bases and a uniform choice
among the three intensities by default.  Photon-number statistics of the
baseline are exact Poisson products, and the same linear programs bound
Y_11 and e_11.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import minimize

from .channel import ChannelParams, EncodedState, bell_gains, poisson_pmf
from .decoy import decoy_bounds
from .expectations import (GainTable, PairExpectations, QuadratureSpec,
                           build_gain_table, error_gain_from_cells,
                           gain_from_cells)
from .regions import DECOYS, RegionParams
from .source import SourceParams

SQRT_HALF = math.sqrt(0.5)


@dataclass(frozen=True)
class ProtocolConfig:
    """Everything needed to evaluate the key rate at one channel setting."""

    source: SourceParams
    regions: RegionParams
    channel: ChannelParams
    f_e: float = 1.16
    n_cut: int = 6
    m_cut: int = 6
    include_shaping_loss: bool = True
    quad: QuadratureSpec = field(default_factory=QuadratureSpec)

    def __post_init__(self):
        if self.f_e < 1.0:
            raise ValueError("error-correction efficiency f_e must be >= 1")
        if self.n_cut < 1 or self.m_cut < 1:
            raise ValueError("photon-number cuts must be >= 1")


@dataclass(frozen=True)
class KeyRateResult:
    """Rate and the intermediate quantities that produced it."""

    rate: float
    y11_z_lower: float
    e11_x_upper: float
    sift_prefactor: float
    gain: float
    error_gain: float
    p11: float
    params: dict


@dataclass(frozen=True)
class OptimizedRate:
    result: KeyRateResult
    params: dict
    all_zero: bool = False


def binary_entropy(x: float) -> float:
    """H(x) = -x log2 x - (1-x) log2 (1-x), with exact limits at 0 and 1."""
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"binary entropy argument must be in [0, 1], got {x}")
    if x == 0.0 or x == 1.0:
        return 0.0
    return -x * math.log2(x) - (1.0 - x) * math.log2(1.0 - x)


def _inner_rate(table: GainTable, f_e: float, n_cut: int, m_cut: int) -> tuple:
    """Un-floored net rate inside the braces, plus its ingredients."""
    bounds = decoy_bounds(table, n_cut, m_cut)
    pair = table.pair("Z", "chi", "chi")
    p11 = float(pair.pnm[1, 1])
    gain = pair.gain
    err_gain = pair.error_gain
    privacy = p11 * bounds.y11_z_lower \
        * (1.0 - binary_entropy(bounds.e11_x_upper))
    if gain > 0.0:
        correction = f_e * gain * binary_entropy(min(err_gain / gain, 1.0))
    else:
        correction = 0.0
    return privacy - correction, bounds, p11, gain, err_gain


def _rate_from_table(table: GainTable, f_e: float, n_cut: int, m_cut: int,
                     prefactor: float, params: dict) -> KeyRateResult:
    inner, bounds, p11, gain, err_gain = _inner_rate(table, f_e, n_cut, m_cut)
    return KeyRateResult(rate=prefactor * max(inner, 0.0),
                         y11_z_lower=bounds.y11_z_lower,
                         e11_x_upper=bounds.e11_x_upper,
                         sift_prefactor=prefactor, gain=gain,
                         error_gain=err_gain, p11=p11, params=params)


def _passive_prefactor(cfg: ProtocolConfig, table: GainTable) -> float:
    prefactor = table.sift_pair("Z", "chi", "chi")
    if cfg.include_shaping_loss:
        prefactor *= table.acceptance ** 2
    return prefactor


def passive_rate(cfg: ProtocolConfig, table: GainTable | None = None) -> KeyRateResult:
    """Key rate of the passive protocol at the configured parameters."""
    if table is None:
        table = build_gain_table(cfg.regions, cfg.source, cfg.channel,
                                 cfg.quad, cfg.n_cut, cfg.m_cut)
    params = {
        "protocol": "passive",
        "mu_max": cfg.source.mu_max,
        "delta_z": cfg.regions.delta_z,
        "delta_x": cfg.regions.delta_x,
        "delta_phi": cfg.regions.delta_phi,
        "t1": cfg.regions.t1,
        "t2": cfg.regions.t2,
        "l_a": cfg.channel.l_a,
        "l_b": cfg.channel.l_b,
    }
    return _rate_from_table(table, cfg.f_e, cfg.n_cut, cfg.m_cut,
                            _passive_prefactor(cfg, table), params)


# ---------------------------------------------------------------------------
# active three-intensity baseline


def _bb84_states(basis: str, mu: float) -> dict[int, EncodedState]:
    if basis == "Z":
        return {0: EncodedState(mu=mu, c0=1.0, c1=0.0, phi=0.0),
                1: EncodedState(mu=mu, c0=0.0, c1=1.0, phi=0.0)}
    return {0: EncodedState(mu=mu, c0=SQRT_HALF, c1=SQRT_HALF, phi=0.0),
            1: EncodedState(mu=mu, c0=SQRT_HALF, c1=SQRT_HALF, phi=math.pi)}


def active_gain_table(ch: ChannelParams, intensities: tuple[float, float, float],
                      n_cut: int = 6, m_cut: int = 6) -> GainTable:
    """Point-intensity gain table for the active baseline.

    intensities lists the signal, decoy, and vacuum levels; they map onto the
    same three-setting bookkeeping the passive table uses.  Bit values are
    chosen uniformly and photon numbers are exact Poisson products.  The
    table's sift entries are unity; the protocol's modulation probabilities
    enter as the rate prefactor in active_rate instead.
    """
    mu_sig, mu_dec, mu_vac = intensities
    if not (0.0 <= mu_vac < mu_dec < mu_sig):
        raise ValueError("need 0 <= vacuum < decoy < signal intensity")
    level = dict(zip(DECOYS, (mu_sig, mu_dec, mu_vac)))

    entries = {}
    sift = {}
    for basis in ("Z", "X"):
        for decoy in DECOYS:
            sift[basis, decoy] = 1.0
        for di in DECOYS:
            for dj in DECOYS:
                sa = _bb84_states(basis, level[di])
                sb = _bb84_states(basis, level[dj])
                cells = {}
                for ka in (0, 1):
                    for kb in (0, 1):
                        g = bell_gains(sa[ka], sb[kb], ch)
                        cells[ka, kb, "minus"] = 0.25 * g.q_minus
                        cells[ka, kb, "plus"] = 0.25 * g.q_plus
                pa = np.array([poisson_pmf(n, level[di]) for n in range(n_cut + 1)])
                pb = np.array([poisson_pmf(m, level[dj]) for m in range(m_cut + 1)])
                entries[basis, di, dj] = PairExpectations(
                    gain=gain_from_cells(cells),
                    error_gain=error_gain_from_cells(cells, basis, ch.e_d),
                    pnm=np.outer(pa, pb),
                    cells=cells,
                )
    return GainTable(entries=entries, sift=sift, acceptance=1.0,
                     rp=None, sp=None, ch=ch, quad=None,
                     n_cut=n_cut, m_cut=m_cut)


ACTIVE_P_BASIS = 0.5
ACTIVE_P_SIGNAL = 1.0 / 3.0


def active_rate(cfg: ProtocolConfig, intensities: tuple[float, float, float],
                p_basis: float = ACTIVE_P_BASIS,
                p_signal: float = ACTIVE_P_SIGNAL) -> KeyRateResult:
    """Key rate of the active three-intensity baseline.

    Accounted per emitted pulse pair like the passive formula: each party
    lands in the key setting with probability p_basis * p_signal (balanced
    bases, uniform intensity choice by default), giving the sifting
    prefactor of the rate.
    """
    table = active_gain_table(cfg.channel, intensities, cfg.n_cut, cfg.m_cut)
    params = {
        "protocol": "active",
        "mu_signal": intensities[0],
        "mu_decoy": intensities[1],
        "mu_vacuum": intensities[2],
        "l_a": cfg.channel.l_a,
        "l_b": cfg.channel.l_b,
    }
    prefactor = (p_basis * p_signal) ** 2
    return _rate_from_table(table, cfg.f_e, cfg.n_cut, cfg.m_cut, prefactor,
                            params)


# ---------------------------------------------------------------------------
# parameter optimization


def _sigmoid(x: float) -> float:
    if x >= 0.0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def _logit(p: float) -> float:
    p = min(max(p, 1e-9), 1.0 - 1e-9)
    return math.log(p / (1.0 - p))


# coarse starting grid for the passive search: (mu_max, delta_z, delta_x,
# delta_phi, t1, t2); narrow angular bands keep the source's intrinsic
# bit-flip noise survivable, so the grid brackets that corner
PASSIVE_STARTS = (
    (0.20, 0.020, 0.020, 0.20, 0.40, 0.12),
    (0.40, 0.050, 0.050, 0.40, 0.60, 0.20),
    (0.70, 0.010, 0.030, 0.80, 0.30, 0.08),
)

ACTIVE_STARTS = (
    (0.30, 0.10),
    (0.50, 0.05),
    (0.15, 0.05),
)


def _passive_from_vector(x: np.ndarray) -> tuple[float, ...]:
    quarter = math.pi / 4.0
    mu_max = _sigmoid(x[0])
    band_sum = quarter * _sigmoid(x[1])
    split = _sigmoid(x[2])
    delta_z = band_sum * split
    delta_x = band_sum * (1.0 - split)
    delta_phi = 0.5 * math.pi * _sigmoid(x[3])
    t1 = _sigmoid(x[4])
    t2 = t1 * _sigmoid(x[5])
    return mu_max, delta_z, delta_x, delta_phi, t1, t2


def _passive_to_vector(p: tuple[float, ...]) -> np.ndarray:
    mu_max, delta_z, delta_x, delta_phi, t1, t2 = p
    quarter = math.pi / 4.0
    band_sum = delta_z + delta_x
    return np.array([
        _logit(mu_max),
        _logit(band_sum / quarter),
        _logit(delta_z / band_sum),
        _logit(delta_phi / (0.5 * math.pi)),
        _logit(t1),
        _logit(t2 / t1),
    ])


def _passive_objective(x: np.ndarray, cfg: ProtocolConfig,
                       quad: QuadratureSpec) -> float:
    # un-floored net rate, so the search sees a slope inside the
    # zero-rate plateau instead of a flat objective
    mu_max, dz, dx, dphi, t1, t2 = _passive_from_vector(x)
    try:
        sp = SourceParams.from_mu_max(mu_max)
        rp = RegionParams(delta_z=dz, delta_x=dx, delta_phi=dphi, t1=t1, t2=t2)
        trial = replace(cfg, source=sp, regions=rp, quad=quad)
        table = build_gain_table(trial.regions, trial.source, trial.channel,
                                 trial.quad, trial.n_cut, trial.m_cut)
        inner, *_ = _inner_rate(table, trial.f_e, trial.n_cut, trial.m_cut)
    except (ValueError, RuntimeError):
        # degenerate probe (vanishing regions or solver breakdown); steer away
        return 1.0
    return -_passive_prefactor(trial, table) * inner


def _active_objective(x: np.ndarray, cfg: ProtocolConfig) -> float:
    mu_sig = _sigmoid(x[0])
    mu_dec = mu_sig * _sigmoid(x[1])
    if mu_dec <= 0.0 or mu_dec >= mu_sig:
        return 1.0
    try:
        table = active_gain_table(cfg.channel, (mu_sig, mu_dec, 0.0),
                                  cfg.n_cut, cfg.m_cut)
        inner, *_ = _inner_rate(table, cfg.f_e, cfg.n_cut, cfg.m_cut)
    except (ValueError, RuntimeError):
        return 1.0
    return -(ACTIVE_P_BASIS * ACTIVE_P_SIGNAL) ** 2 * inner


def optimize_rate(cfg_template: ProtocolConfig, distance_km: float,
                  protocol: str = "passive",
                  quad_search: QuadratureSpec | None = None,
                  max_evals: int = 150, seed: int = 0) -> OptimizedRate:
    """Maximize the rate over the free protocol parameters at one distance.

    Derivative-free simplex search in a bounded transform space, restarted
    from a coarse grid of starting points; deterministic for a given seed.
    The best point found is re-evaluated at the configured quadrature before
    being returned.
    """
    del seed  # the search is deterministic; accepted for interface stability
    cfg = replace(cfg_template,
                  channel=cfg_template.channel.at_distance(distance_km))
    if protocol == "passive":
        quad = quad_search or QuadratureSpec(8, 8, 8)
        starts = [_passive_to_vector(p) for p in PASSIVE_STARTS]

        def objective(x):
            return _passive_objective(x, cfg, quad)
    elif protocol == "active":
        starts = [np.array([_logit(a), _logit(b / a)]) for a, b in ACTIVE_STARTS]

        def objective(x):
            return _active_objective(x, cfg)
    else:
        raise ValueError(f"unknown protocol {protocol!r}")

    best_x = starts[0]
    best_val = 0.0
    for x0 in starts:
        res = minimize(objective, x0, method="Nelder-Mead",
                       options={"maxfev": max_evals, "xatol": 1e-3,
                                "fatol": 1e-12, "adaptive": True})
        if res.fun < best_val:
            best_val = res.fun
            best_x = res.x

    if protocol == "passive":
        mu_max, dz, dx, dphi, t1, t2 = _passive_from_vector(best_x)
        sp = SourceParams.from_mu_max(mu_max)
        rp = RegionParams(delta_z=dz, delta_x=dx, delta_phi=dphi, t1=t1, t2=t2)
        final_cfg = replace(cfg, source=sp, regions=rp)
        result = passive_rate(final_cfg)
    else:
        mu_sig = _sigmoid(best_x[0])
        mu_dec = mu_sig * _sigmoid(best_x[1])
        result = active_rate(cfg, (mu_sig, mu_dec, 0.0))
    return OptimizedRate(result=result, params=dict(result.params),
                         all_zero=best_val >= 0.0)
