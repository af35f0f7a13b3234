import itertools
import math

import numpy as np
import pytest

from passive_mdi.channel import ChannelParams
from passive_mdi.decoy import (DecoyLP, InfeasibleLPError, UnboundedLPError,
                               build_yield_lp, check_solution, decoy_bounds,
                               e11_x_upper, lp_format, solve_lp, y11_z_lower)
from passive_mdi.expectations import (GainTable, PairExpectations,
                                      QuadratureSpec)
from passive_mdi.regions import DECOYS, RegionParams
from passive_mdi.source import SourceParams
from synth import channel_flavored_yields, forward_table, random_valid_regions


def vertex_enumeration_minimum(lp: DecoyLP):
    """Oracle: enumerate candidate vertices of a small LP and take the best.

    Every vertex of {A x <= b, lo <= x <= hi} in n dimensions solves n active
    constraints drawn from rows of A and the box faces; enumerate all such
    systems, keep the feasible solutions, and optimize over them explicitly.
    """
    n = lp.c.size
    rows = [(lp.a_ub[i], lp.b_ub[i]) for i in range(lp.a_ub.shape[0])]
    for k, (lo, hi) in enumerate(lp.bounds):
        e = np.zeros(n)
        e[k] = 1.0
        rows.append((e, hi))
        rows.append((-e, -lo))
    best = None
    for combo in itertools.combinations(range(len(rows)), n):
        a = np.array([rows[i][0] for i in combo])
        b = np.array([rows[i][1] for i in combo])
        try:
            x = np.linalg.solve(a, b)
        except np.linalg.LinAlgError:
            continue
        if np.any(lp.a_ub @ x > lp.b_ub + 1e-9):
            continue
        if any(x[k] < lo - 1e-9 or x[k] > hi + 1e-9
               for k, (lo, hi) in enumerate(lp.bounds)):
            continue
        val = float(lp.c @ x)
        if best is None or (val < best if lp.minimize else val > best):
            best = val
    return best


def tiny_table(gains_by_pair, pnm_by_pair, n_cut=1, m_cut=1, basis="Z"):
    """Hand-built GainTable for LP unit tests."""
    entries = {}
    for di in DECOYS:
        for dj in DECOYS:
            q = gains_by_pair[di, dj]
            entries[basis, di, dj] = PairExpectations(
                gain=q, error_gain=q / 2.0, pnm=pnm_by_pair[di, dj], cells={})
    return GainTable(entries=entries,
                     sift={(basis, d): 1.0 for d in DECOYS}, acceptance=1.0,
                     rp=None, sp=None,
                     ch=ChannelParams(p_d=0.0, e_d=0.0, eta_d=1.0),
                     quad=None, n_cut=n_cut, m_cut=m_cut)


class TestSolveLP:
    def test_single_variable_floor(self):
        lp = DecoyLP(minimize=True, c=np.array([1.0]),
                     a_ub=np.array([[-1.0]]), b_ub=np.array([-0.3]),
                     bounds=((0.0, 1.0),), names=("x",), label="floor")
        sol = solve_lp(lp)
        assert sol.value == pytest.approx(0.3, abs=1e-9)

    def test_single_active_constraint_ratio(self):
        # all photon-number mass on (1,1): P * Y11 pinned to q on both sides
        p11, q = 0.8, 0.36
        pnm = np.zeros((2, 2))
        pnm[1, 1] = p11
        gains = {(di, dj): q for di in DECOYS for dj in DECOYS}
        pnms = {(di, dj): pnm for di in DECOYS for dj in DECOYS}
        table = tiny_table(gains, pnms)
        val = y11_z_lower(table, n_cut=1, m_cut=1)
        # slack is 1 - 0.8, so the lower side allows q - 0.2
        assert val == pytest.approx((q - (1 - p11)) / p11, abs=1e-8)

    def test_matches_vertex_enumeration_oracle(self):
        rng = np.random.default_rng(42)
        for trial in range(25):
            n = int(rng.integers(2, 4))
            m = int(rng.integers(1, 5))
            a = rng.normal(size=(m, n))
            x_feasible = rng.random(n)
            b = a @ x_feasible + rng.random(m) * 0.5  # feasible by construction
            c = rng.normal(size=n)
            lp = DecoyLP(minimize=True, c=c, a_ub=a, b_ub=b,
                         bounds=tuple((0.0, 1.0) for _ in range(n)),
                         names=tuple(f"x{k}" for k in range(n)),
                         label=f"rand{trial}")
            want = vertex_enumeration_minimum(lp)
            got = solve_lp(lp)
            assert want is not None
            assert got.value == pytest.approx(want, abs=1e-7)
            check_solution(lp, got.x, tol=1e-8)

    def test_infeasible_detected(self):
        # two pairs pin Y11 to incompatible values
        pnm = np.zeros((2, 2))
        pnm[1, 1] = 0.9
        gains = {(di, dj): 0.99 for di in DECOYS for dj in DECOYS}
        gains["omega", "omega"] = 0.05
        pnms = {(di, dj): pnm for di in DECOYS for dj in DECOYS}
        with pytest.raises(InfeasibleLPError):
            y11_z_lower(tiny_table(gains, pnms), n_cut=1, m_cut=1)

    def test_unbounded_detected(self):
        lp = DecoyLP(minimize=True, c=np.array([-1.0]),
                     a_ub=np.zeros((0, 1)), b_ub=np.zeros(0),
                     bounds=((0.0, None),), names=("x",), label="unbounded")
        with pytest.raises(UnboundedLPError):
            solve_lp(lp)


class TestFormat:
    def test_lp_interchange_text(self):
        lp = DecoyLP(minimize=True, c=np.array([1.0, 0.0]),
                     a_ub=np.array([[0.5, 0.25]]), b_ub=np.array([0.125]),
                     bounds=((0.0, 1.0), (0.0, 1.0)), names=("Y_00", "Y_01"),
                     label="demo")
        text = lp_format(lp)
        assert text.startswith("\\ demo\nMinimize\n obj: +1 Y_00\n")
        assert "Subject To" in text
        assert " c0: +0.5 Y_00 +0.25 Y_01 <= 0.125" in text
        assert "Bounds" in text and text.rstrip().endswith("End")


class TestBounds:
    @pytest.fixture
    def synthetic(self, sp, ch):
        rng = np.random.default_rng(7)
        rp = random_valid_regions(rng)
        quad = QuadratureSpec(12, 12, 8)
        yfn, efn = channel_flavored_yields(ch, seed=3)
        return forward_table(rp, sp, ch, quad, yfn, efn)

    def test_zero_gains_give_zero_yield(self):
        pnm = np.zeros((2, 2))
        pnm[1, 1] = 0.5
        gains = {(di, dj): 0.0 for di in DECOYS for dj in DECOYS}
        pnms = {(di, dj): pnm for di in DECOYS for dj in DECOYS}
        assert y11_z_lower(tiny_table(gains, pnms), 1, 1) == 0.0

    def test_brackets_truth(self, synthetic):
        table, truth = synthetic
        y_low = y11_z_lower(table)
        assert y_low <= truth["Z"]["y11"] + 1e-9
        assert y_low > 0.0
        e_up = e11_x_upper(table)
        assert e_up >= truth["X"]["e11"] - 1e-9

    def test_components_exposed(self, synthetic):
        table, truth = synthetic
        b = decoy_bounds(table)
        assert 0.0 <= b.y11_z_lower <= 1.0
        assert 0.0 <= b.e11_x_upper <= 0.5
        assert b.y11_x_lower <= truth["X"]["y11"] + 1e-9
        assert b.b11_x_upper >= truth["X"]["y11"] * truth["X"]["e11"] - 1e-9

    def test_gap_shrinks_as_inner_decoy_tightens(self, sp, ch):
        quad = QuadratureSpec(12, 12, 8)
        yfn, efn = channel_flavored_yields(ch, seed=11)
        gaps = []
        for t2 in (0.45, 0.3, 0.15, 0.05):
            rp = RegionParams(delta_z=0.12, delta_x=0.12, delta_phi=0.4,
                              t1=0.6, t2=t2)
            table, truth = forward_table(rp, sp, ch, quad, yfn, efn)
            gaps.append(truth["Z"]["y11"] - y11_z_lower(table))
        assert all(g >= -1e-9 for g in gaps)
        assert all(b <= a + 1e-9 for a, b in zip(gaps, gaps[1:]))

    def test_error_bound_tightens_with_separation(self, sp, ch):
        # error-free single photons: the two-stage bound should fall toward 0
        # as the decoy radii separate
        quad = QuadratureSpec(12, 12, 8)

        def yield_nm(n, m):
            return lambda t1, t2: np.clip(
                0.4 + 0.1 * (n + m) + 0.05 * np.cos(t1 + t2), 0.0, 1.0)

        def error_nm(n, m):
            if n == 1 and m == 1:
                return lambda t1, t2: np.zeros(np.broadcast(t1, t2).shape)
            return lambda t1, t2: np.full(np.broadcast(t1, t2).shape, 0.05)

        uppers = []
        for t1, t2 in ((0.9, 0.8), (0.7, 0.4), (0.6, 0.15), (0.5, 0.05)):
            rp = RegionParams(delta_z=0.12, delta_x=0.12, delta_phi=0.4,
                              t1=t1, t2=t2)
            table, truth = forward_table(rp, sp, ch, quad, yield_nm, error_nm)
            assert truth["X"]["e11"] == pytest.approx(0.0, abs=1e-12)
            uppers.append(e11_x_upper(table))
        assert all(b <= a + 1e-9 for a, b in zip(uppers, uppers[1:]))
        assert uppers[-1] < 0.02

    def test_uninformative_symmetric_data_clamps_to_half(self):
        # T = Q/2 everywhere with a single-photon-dominated table: the ratio
        # bound saturates and the clamp reports 1/2
        pnm = np.zeros((2, 2))
        pnm[0, 0] = 0.05
        pnm[1, 1] = 0.9
        gains = {}
        pnms = {}
        for di in DECOYS:
            for dj in DECOYS:
                gains[di, dj] = 0.9
                pnms[di, dj] = pnm
        table = tiny_table(gains, pnms, basis="X")  # error_gain = gain / 2
        assert e11_x_upper(table, 1, 1) == pytest.approx(0.5)

    def test_larger_cut_never_loosens(self, sp, ch):
        # restricting any feasible point of the larger-cut program to the
        # smaller cut stays feasible (the dropped terms are covered by the
        # slack), so enlarging the truncation set weakly tightens both bounds
        rng = np.random.default_rng(19)
        rp = random_valid_regions(rng)
        quad = QuadratureSpec(12, 12, 8)
        yfn, efn = channel_flavored_yields(ch, seed=5)
        table8, _ = forward_table(rp, sp, ch, quad, yfn, efn, n_cut=8, m_cut=8)
        table6 = GainTable(
            entries={k: PairExpectations(v.gain, v.error_gain,
                                         v.pnm[:7, :7].copy(), {})
                     for k, v in table8.entries.items()},
            sift=table8.sift, acceptance=1.0, rp=table8.rp, sp=sp, ch=ch,
            quad=quad, n_cut=6, m_cut=6)
        y6 = y11_z_lower(table6, 6, 6)
        y8 = y11_z_lower(table8, 8, 8)
        e6 = e11_x_upper(table6, 6, 6)
        e8 = e11_x_upper(table8, 8, 8)
        assert y8 >= y6 - 1e-8
        assert e8 <= e6 + 1e-8

    def test_solutions_satisfy_constraints(self, synthetic):
        table, _ = synthetic
        for use_err, minimize in ((False, True), (True, False)):
            lp = build_yield_lp(table, "X", 6, 6, use_error_gain=use_err,
                                minimize=minimize)
            sol = solve_lp(lp)
            assert check_solution(lp, sol.x, tol=1e-8) <= 1e-8
