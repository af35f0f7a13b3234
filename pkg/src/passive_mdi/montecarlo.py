"""Event-level simulation of the full source / relay / detection chain.

Every trial emits one pulse per party: arm intensities are drawn from the
natural interference law, the shaping step keeps the pair with the product of
per-party keep probabilities, kept samples are classified into post-selection
regions, and same-basis pairs are pushed through the relay.  Each of the four
threshold detectors clicks independently with probability
1 - (1 - p_d) exp(-I) at its coherent intensity; an announcement requires
exactly the two clicks of one Bell pattern (anything else, including three or
four clicks, is invalid).  Misalignment is realized as a classical flip of
the second party's recorded bit with probability e_d.

The tally is an associative object: partial tallies from independent random
streams merge by addition, so trials can be partitioned across workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .channel import ChannelParams, EncodedState
from .expectations import GainTable
from .keyrate import ProtocolConfig
from .regions import DECOYS, classify_batch
from .source import arcsine_ppf, shaping_acceptance

TWO_PI = 2.0 * math.pi

OUTCOME_INDEX = {"minus": 0, "plus": 1, "invalid": 2}
BASIS_INDEX = {"Z": 0, "X": 1}


@dataclass(frozen=True)
class DetectorIntensities:
    """Mean photon numbers at the four relay detectors for one pulse pair."""

    i_1h: float
    i_2h: float
    i_1v: float
    i_2v: float


def detector_intensities(a: EncodedState, phi_ga: float, b: EncodedState,
                         phi_gb: float, ch: ChannelParams) -> DetectorIntensities:
    """Beam-splitter output intensities given both global phases.

    The H modes interfere with the global phase difference alone; the V modes
    additionally carry the azimuth of each state.
    """
    u0 = a.c0 * math.sqrt(ch.eta_a * a.mu)
    u1 = a.c1 * math.sqrt(ch.eta_a * a.mu)
    v0 = b.c0 * math.sqrt(ch.eta_b * b.mu)
    v1 = b.c1 * math.sqrt(ch.eta_b * b.mu)
    dh = phi_ga - phi_gb
    dv = (phi_ga + a.phi) - (phi_gb + b.phi)
    g0 = 0.5 * (u0 * u0 + v0 * v0)
    g1 = 0.5 * (u1 * u1 + v1 * v1)
    return DetectorIntensities(
        i_1h=g0 - u0 * v0 * math.cos(dh),
        i_2h=g0 + u0 * v0 * math.cos(dh),
        i_1v=g1 - u1 * v1 * math.cos(dv),
        i_2v=g1 + u1 * v1 * math.cos(dv),
    )


def draw_clicks(rng: np.random.Generator, intensity: np.ndarray,
                log_keep: float | None) -> np.ndarray:
    """Threshold-detector clicks at probability 1 - (1 - p_d) exp(-I).

    log_keep is log(1 - p_d), or None when p_d = 1 (every gate clicks).
    Comparing log U against log_keep - I avoids evaluating exp per event.
    """
    if log_keep is None:
        return np.ones(intensity.shape, dtype=bool)
    with np.errstate(divide="ignore"):
        return np.log(rng.random(intensity.shape)) >= log_keep - intensity


@dataclass
class TrialTally:
    """Counts from an event-level run; addition merges independent tallies."""

    emitted: int = 0
    accepted_a: int = 0
    accepted_b: int = 0
    accepted_pairs: int = 0
    classified_pairs: int = 0
    sifted_pairs: int = 0
    # (basis, inner_a, inner_b) pair counts at the innermost decoy level
    pair_counts: np.ndarray = field(
        default_factory=lambda: np.zeros((2, 3, 3), dtype=np.int64))
    # (basis, inner_a, inner_b, bit_a, bit_b, outcome)
    outcome_counts: np.ndarray = field(
        default_factory=lambda: np.zeros((2, 3, 3, 2, 2, 3), dtype=np.int64))

    def merge(self, other: "TrialTally") -> "TrialTally":
        return TrialTally(
            emitted=self.emitted + other.emitted,
            accepted_a=self.accepted_a + other.accepted_a,
            accepted_b=self.accepted_b + other.accepted_b,
            accepted_pairs=self.accepted_pairs + other.accepted_pairs,
            classified_pairs=self.classified_pairs + other.classified_pairs,
            sifted_pairs=self.sifted_pairs + other.sifted_pairs,
            pair_counts=self.pair_counts + other.pair_counts,
            outcome_counts=self.outcome_counts + other.outcome_counts,
        )

    __add__ = merge

    def cumulative_pairs(self, basis: str, di: str, dj: str) -> int:
        """Pairs whose memberships include (di, dj); nesting makes this a tail sum."""
        bi = BASIS_INDEX[basis]
        ia = DECOYS.index(di)
        ja = DECOYS.index(dj)
        return int(self.pair_counts[bi, ia:, ja:].sum())

    def cumulative_outcomes(self, basis: str, di: str, dj: str, outcome: str,
                            bit_a=None, bit_b=None) -> int:
        bi = BASIS_INDEX[basis]
        ia = DECOYS.index(di)
        ja = DECOYS.index(dj)
        block = self.outcome_counts[bi, ia:, ja:, :, :, OUTCOME_INDEX[outcome]]
        if bit_a is not None:
            block = block[:, :, bit_a:bit_a + 1, :]
        if bit_b is not None:
            block = block[:, :, :, bit_b:bit_b + 1]
        return int(block.sum())

    def to_csv(self) -> str:
        """Flat CSV dump; schema documented by the command-line interface."""
        lines = ["record,basis,decoy_a,decoy_b,bit_a,bit_b,outcome,count"]
        for name in ("emitted", "accepted_a", "accepted_b", "accepted_pairs",
                     "classified_pairs", "sifted_pairs"):
            lines.append(f"total,{name},,,,,,{getattr(self, name)}")
        for basis, bi in BASIS_INDEX.items():
            for ia, da in enumerate(DECOYS):
                for ja, db in enumerate(DECOYS):
                    lines.append(f"pairs,{basis},{da},{db},,,,"
                                 f"{self.pair_counts[bi, ia, ja]}")
        for basis, bi in BASIS_INDEX.items():
            for ia, da in enumerate(DECOYS):
                for ja, db in enumerate(DECOYS):
                    for ka in (0, 1):
                        for kb in (0, 1):
                            for out, oi in OUTCOME_INDEX.items():
                                n = self.outcome_counts[bi, ia, ja, ka, kb, oi]
                                lines.append(
                                    f"outcome,{basis},{da},{db},{ka},{kb},"
                                    f"{out},{n}")
        return "\n".join(lines) + "\n"


def simulate_trials(n_trials: int, cfg: ProtocolConfig, rng: np.random.Generator,
                    batch_size: int = 1 << 21) -> TrialTally:
    """Run n_trials emitted pulse pairs and tally announced outcomes."""
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    sp, rp, ch = cfg.source, cfg.regions, cfg.channel
    m = sp.mu_max
    tally = TrialTally()
    log_keep = math.log1p(-ch.p_d) if ch.p_d < 1.0 else None

    remaining = n_trials
    while remaining > 0:
        n = min(batch_size, remaining)
        remaining -= n
        tally.emitted += n

        muh_a = arcsine_ppf(rng.random(n), m)
        muv_a = arcsine_ppf(rng.random(n), m)
        acc_a = rng.random(n) < shaping_acceptance(muh_a, muv_a, sp)
        muh_b = arcsine_ppf(rng.random(n), m)
        muv_b = arcsine_ppf(rng.random(n), m)
        acc_b = rng.random(n) < shaping_acceptance(muh_b, muv_b, sp)
        tally.accepted_a += int(acc_a.sum())
        tally.accepted_b += int(acc_b.sum())
        keep = acc_a & acc_b
        tally.accepted_pairs += int(keep.sum())
        if not keep.any():
            continue
        muh_a, muv_a = muh_a[keep], muv_a[keep]
        muh_b, muv_b = muh_b[keep], muv_b[keep]
        nk = muh_a.size

        phi_a = rng.random(nk) * TWO_PI
        phi_b = rng.random(nk) * TWO_PI
        ok_a, bas_a, bit_a, in_a = classify_batch(muh_a, muv_a, phi_a, rp, sp)
        ok_b, bas_b, bit_b, in_b = classify_batch(muh_b, muv_b, phi_b, rp, sp)
        both = ok_a & ok_b
        tally.classified_pairs += int(both.sum())
        sift = both & (bas_a == bas_b)
        n_sift = int(sift.sum())
        tally.sifted_pairs += n_sift
        if n_sift == 0:
            continue

        basis = bas_a[sift]
        ia, ja = in_a[sift], in_b[sift]
        ka, kb = bit_a[sift], bit_b[sift]
        np.add.at(tally.pair_counts, (basis, ia, ja), 1)

        muh_a_s, muv_a_s = muh_a[sift], muv_a[sift]
        muh_b_s, muv_b_s = muh_b[sift], muv_b[sift]
        u0 = np.sqrt(ch.eta_a * muh_a_s)
        u1 = np.sqrt(ch.eta_a * muv_a_s)
        v0 = np.sqrt(ch.eta_b * muh_b_s)
        v1 = np.sqrt(ch.eta_b * muv_b_s)
        gph_a = rng.random(n_sift) * TWO_PI
        gph_b = rng.random(n_sift) * TWO_PI
        dh = gph_a - gph_b
        dv = dh + phi_a[sift] - phi_b[sift]
        g0 = 0.5 * (u0 * u0 + v0 * v0)
        g1 = 0.5 * (u1 * u1 + v1 * v1)
        i1h = g0 - u0 * v0 * np.cos(dh)
        i2h = 2.0 * g0 - i1h
        i1v = g1 - u1 * v1 * np.cos(dv)
        i2v = 2.0 * g1 - i1v

        c1h = draw_clicks(rng, i1h, log_keep)
        c2h = draw_clicks(rng, i2h, log_keep)
        c1v = draw_clicks(rng, i1v, log_keep)
        c2v = draw_clicks(rng, i2v, log_keep)

        minus = (c1h & c2v & ~c2h & ~c1v) | (c1v & c2h & ~c1h & ~c2v)
        plus = (c1h & c1v & ~c2h & ~c2v) | (c2h & c2v & ~c1h & ~c1v)
        outcome = np.full(n_sift, OUTCOME_INDEX["invalid"], dtype=np.int64)
        outcome[minus] = OUTCOME_INDEX["minus"]
        outcome[plus] = OUTCOME_INDEX["plus"]

        if ch.e_d > 0.0:
            flip = rng.random(n_sift) < ch.e_d
            kb = np.where(flip, 1 - kb, kb)

        np.add.at(tally.outcome_counts, (basis, ia, ja, ka, kb, outcome), 1)
    return tally


@dataclass(frozen=True)
class ComparisonRow:
    basis: str
    decoy_a: str
    decoy_b: str
    outcome: str
    pairs: int
    count: int
    probability: float
    z: float
    flagged: bool
    empty: bool


@dataclass(frozen=True)
class ComparisonReport:
    rows: tuple
    threshold: float

    @property
    def flagged(self) -> tuple:
        return tuple(r for r in self.rows if r.flagged)

    @property
    def max_abs_z(self) -> float:
        zs = [abs(r.z) for r in self.rows if not r.empty]
        return max(zs) if zs else 0.0

    @property
    def ok(self) -> bool:
        return not self.flagged


def _analytic_outcome_probability(table: GainTable, basis: str, di: str,
                                  dj: str, outcome: str) -> float:
    cells = table.pair(basis, di, dj).cells
    return sum(v for (ka, kb, out), v in cells.items() if out == outcome)


def _analytic_cell_probability(table: GainTable, basis: str, di: str, dj: str,
                               ka: int, kb: int, outcome: str,
                               e_d: float) -> float:
    """Analytic probability with the recorded (post-flip) second-party bit."""
    cells = table.pair(basis, di, dj).cells
    return ((1.0 - e_d) * cells[ka, kb, outcome]
            + e_d * cells[ka, 1 - kb, outcome])


def compare_to_analytic(tally: TrialTally, table: GainTable,
                        threshold: float = 4.0,
                        level: str = "outcome") -> ComparisonReport:
    """Per-cell z-scores of empirical outcome frequencies against the table.

    level="outcome" aggregates bit values (one row per region pair, basis and
    Bell outcome); level="cell" additionally resolves recorded bit pairs and
    folds the misalignment flip into the analytic value.  Cells without any
    pairs are marked empty and flagged only if the analytic probability is
    nonzero and the run was large enough that absence itself is anomalous.
    """
    rows = []
    e_d = table.ch.e_d
    for basis in ("Z", "X"):
        for di in DECOYS:
            for dj in DECOYS:
                n = tally.cumulative_pairs(basis, di, dj)
                combos = [(None, None)] if level == "outcome" else \
                    [(ka, kb) for ka in (0, 1) for kb in (0, 1)]
                for outcome in ("minus", "plus"):
                    for ka, kb in combos:
                        if level == "outcome":
                            p = _analytic_outcome_probability(
                                table, basis, di, dj, outcome)
                        else:
                            p = _analytic_cell_probability(
                                table, basis, di, dj, ka, kb, outcome, e_d)
                        k = tally.cumulative_outcomes(basis, di, dj, outcome,
                                                      ka, kb)
                        if n == 0:
                            rows.append(ComparisonRow(
                                basis, di, dj, _row_label(outcome, ka, kb),
                                0, 0, p, 0.0, False, True))
                            continue
                        sigma = math.sqrt(max(p * (1.0 - p), 0.0) / n)
                        if sigma == 0.0:
                            z = 0.0 if k == 0 else math.inf
                        else:
                            z = (k / n - p) / sigma
                        rows.append(ComparisonRow(
                            basis, di, dj, _row_label(outcome, ka, kb),
                            n, k, p, z, abs(z) > threshold, False))
    return ComparisonReport(rows=tuple(rows), threshold=threshold)


def _row_label(outcome: str, ka, kb) -> str:
    if ka is None:
        return outcome
    return f"{outcome}[{ka}{kb}]"
