"""Synthetic forward-generated gain tables with known ground truth.

Gains are assembled from chosen photon-number yield and error functions
through the same photon-number expectations the analysis uses, so the decoy
bounds can be checked against the exact single-photon-pair values.
"""

import numpy as np

from passive_mdi.channel import ChannelParams
from passive_mdi.expectations import (GainTable, PairExpectations,
                                      QuadratureSpec, pnm_table, yprime)
from passive_mdi.regions import DECOYS, RegionParams
from passive_mdi.source import SourceParams


def channel_flavored_yields(ch: ChannelParams, seed: int = 0):
    """Smooth (theta1, theta2) yield and error functions for every (n, m).

    Yields rise with photon number like a lossy-detection response and carry
    a mild angular modulation; error rates stay within [0, 1/2].
    """
    rng = np.random.default_rng(seed)
    amp = 0.2 + 0.6 * rng.random()
    tilt = rng.random() * 2.0

    def yield_nm(n, m):
        base = 1.0 - (1.0 - 0.5 * ch.p_d) \
            * (1.0 - ch.eta_a * 0.8) ** n * (1.0 - ch.eta_b * 0.8) ** m

        def fn(t1, t2):
            mod = 1.0 + 0.3 * np.sin(tilt + 3.0 * t1) * np.cos(2.0 * t2)
            return np.clip(base * amp * mod + 0.02 * (n + m > 0), 0.0, 1.0)

        return fn

    def error_nm(n, m):
        def fn(t1, t2):
            mod = 0.5 + 0.5 * np.cos(1.0 + t1 - 2.0 * t2) ** 2
            return np.clip(0.03 * (1 + 0.5 * abs(n - m)) * mod, 0.0, 0.5)

        return fn

    return yield_nm, error_nm


def forward_table(rp: RegionParams, sp: SourceParams, ch: ChannelParams,
                  quad: QuadratureSpec, yield_nm, error_nm, n_cut=6, m_cut=6,
                  n_big=10, tail_yield=0.9, tail_error=0.25):
    """GainTable whose gains follow exactly from the given yield functions.

    Returns (table, truth) with truth = dict of the exact decoupled values
    Y'_11 and e'_11 per basis.
    """
    entries = {}
    truth = {}
    for basis in ("Z", "X"):
        yp = {}
        ep = {}
        for n in range(n_big + 1):
            for m in range(n_big + 1):
                yfn = yield_nm(n, m)
                efn = error_nm(n, m)
                yp[n, m] = yprime(n, m, basis, rp, yfn, quad)
                ep[n, m] = yprime(
                    n, m, basis, rp,
                    lambda t1, t2, yf=yfn, ef=efn: yf(t1, t2) * ef(t1, t2),
                    quad)
        truth[basis] = {"y11": yp[1, 1], "e11": ep[1, 1] / yp[1, 1]}
        for di in DECOYS:
            for dj in DECOYS:
                big = pnm_table(basis, di, dj, rp, sp, quad, n_big, n_big)
                tail = 1.0 - float(big.sum())
                gain = float(sum(big[n, m] * yp[n, m]
                                 for n in range(n_big + 1)
                                 for m in range(n_big + 1)))
                err = float(sum(big[n, m] * ep[n, m]
                                for n in range(n_big + 1)
                                for m in range(n_big + 1)))
                gain += tail * tail_yield
                err += tail * tail_yield * tail_error
                entries[basis, di, dj] = PairExpectations(
                    gain=gain, error_gain=err,
                    pnm=big[:n_cut + 1, :m_cut + 1].copy(), cells={})
    table = GainTable(entries=entries, sift={(b, d): 1.0 for b in ("Z", "X")
                                             for d in DECOYS},
                      acceptance=1.0, rp=rp, sp=sp, ch=ch, quad=quad,
                      n_cut=n_cut, m_cut=m_cut)
    return table, truth


def random_valid_regions(rng) -> RegionParams:
    quarter = np.pi / 4
    band_sum = quarter * (0.2 + 0.6 * rng.random())
    split = 0.25 + 0.5 * rng.random()
    t1 = 0.4 + 0.4 * rng.random()
    t2 = t1 * (0.15 + 0.45 * rng.random())
    return RegionParams(delta_z=band_sum * split,
                        delta_x=band_sum * (1 - split),
                        delta_phi=0.15 + 1.0 * rng.random(), t1=t1, t2=t2)
