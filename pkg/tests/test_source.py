import math

import numpy as np
import pytest
from scipy import stats

from passive_mdi.quadrules import gauss_nodes
from passive_mdi.source import (PolarCoords, SingularDensityError, SourceParams,
                                SourceSample, arcsine_cdf, arcsine_ppf,
                                density_natural, density_shaped, interfere,
                                sample_natural_intensities, sample_source,
                                shaped_cdf, shaping_acceptance,
                                shaping_acceptance_rate, shaping_peak)

TWO_PI = 2.0 * math.pi


def natural_marginal_integral(sp, nodes=200):
    # oracle: integrate the arcsine marginal with the substitution
    # mu = M sin^2(t), which removes both endpoint singularities exactly:
    # p(mu) dmu = (2/pi) dt over t in [0, pi/2]
    t, w = gauss_nodes(0.0, math.pi / 2, nodes)
    return float((np.full_like(t, 2.0 / math.pi) * w).sum())


class TestSourceParams:
    def test_mu_max_identity(self):
        p = SourceParams(mu_in=0.4, eta_f=0.5)
        assert p.mu_max == 2 * 0.4 * 0.5

    def test_from_mu_max_round_trip(self):
        p = SourceParams.from_mu_max(0.37, eta_f=0.8)
        assert p.mu_max == pytest.approx(0.37, rel=1e-15)

    @pytest.mark.parametrize("mu_in,eta_f", [(0.0, 1.0), (-1.0, 0.5), (0.5, 0.0), (0.5, 1.5)])
    def test_rejects_bad_params(self, mu_in, eta_f):
        with pytest.raises(ValueError):
            SourceParams(mu_in=mu_in, eta_f=eta_f)


class TestInterfere:
    def test_constructive_maximum(self, sp):
        s = interfere(0.3, 0.3, 0.0, 1.0, sp)
        assert s.mu_h == pytest.approx(sp.mu_max, abs=1e-15)

    def test_destructive_zero(self, sp):
        s = interfere(0.0, math.pi, 0.0, 0.5, sp)
        assert s.mu_h == pytest.approx(0.0, abs=1e-15)

    def test_balanced_point(self, sp):
        s = interfere(0.0, math.pi / 2, 0.0, math.pi / 2, sp)
        assert s.mu_h == pytest.approx(sp.mu_max / 2, rel=1e-12)
        assert s.mu_v == pytest.approx(sp.mu_max / 2, rel=1e-12)
        assert s.bloch_theta == pytest.approx(math.pi / 2, rel=1e-12)

    def test_global_phase_shift_moves_only_phi_g(self, sp, rng):
        # the map is total over the reals, so the shifted tuple is passed
        # unwrapped; wrapping inputs first would alias the mean phase by pi
        for _ in range(50):
            phis = rng.random(4) * TWO_PI
            c = rng.random() * TWO_PI
            base = interfere(*phis, sp)
            shifted = interfere(*(phis + c), sp)
            assert shifted.mu_h == pytest.approx(base.mu_h, abs=1e-9)
            assert shifted.mu_v == pytest.approx(base.mu_v, abs=1e-9)
            dphi = (shifted.phi - base.phi) % TWO_PI
            assert min(dphi, TWO_PI - dphi) < 1e-9
            dg = (shifted.phi_g - base.phi_g - c) % TWO_PI
            assert min(dg, TWO_PI - dg) < 1e-9

    def test_bloch_theta_matches_definition(self, sp, rng):
        for _ in range(100):
            s = sample_source(rng, sp, shaped=False)
            if s.mu > 0:
                want = 2.0 * math.acos(math.sqrt(s.mu_h / (s.mu_h + s.mu_v)))
                assert s.bloch_theta == pytest.approx(want, abs=1e-12)


class TestPolarCoords:
    def test_round_trip(self, rng):
        for _ in range(200):
            mu_h, mu_v = rng.random(2)
            pc = PolarCoords.from_intensities(mu_h, mu_v)
            back = pc.to_intensities()
            assert back[0] == pytest.approx(mu_h, abs=1e-12)
            assert back[1] == pytest.approx(mu_v, abs=1e-12)


class TestNaturalDensity:
    def test_center_value(self, sp):
        m = sp.mu_max
        want = 4.0 / (math.pi ** 2 * m ** 2)
        assert density_natural(m / 2, m / 2, sp) == pytest.approx(want, rel=1e-14)

    def test_symmetry(self, sp, rng):
        m = sp.mu_max
        for _ in range(50):
            a, b = rng.random(2) * m * 0.999 + 1e-6
            # multiplication order differs by an ulp between the two calls
            assert density_natural(a, b, sp) == pytest.approx(
                density_natural(b, a, sp), rel=1e-13)

    def test_normalization_against_quadrature_oracle(self, sp):
        per_axis = natural_marginal_integral(sp)
        assert per_axis ** 2 == pytest.approx(1.0, abs=1e-6)

    @pytest.mark.parametrize("edge", [0.0, 1.0])
    def test_boundary_is_singular(self, sp, edge):
        with pytest.raises(SingularDensityError):
            density_natural(edge * sp.mu_max, sp.mu_max / 2, sp)


class TestShaping:
    def test_corners_vanish(self, sp):
        m = sp.mu_max
        assert shaping_acceptance(0.0, m / 2, sp) == 0.0
        assert shaping_acceptance(m / 3, m, sp) == 0.0

    def test_peak_reaches_one_grid_search_oracle(self, sp):
        m = sp.mu_max
        grid = np.linspace(0.0, m, 2001)
        vals = shaping_acceptance(grid[:, None], grid[None, :], sp)
        assert vals.max() == pytest.approx(1.0, abs=1e-6)
        peak = shaping_peak(sp)
        assert shaping_acceptance(peak, peak, sp) == pytest.approx(1.0, rel=1e-12)

    def test_product_with_natural_density_is_exponential(self, sp):
        # ratio (p_natural * q) / exp(mu_h + mu_v) must be one global constant
        m = sp.mu_max
        grid = np.linspace(0.02, 0.98, 25) * m
        mu_h, mu_v = np.meshgrid(grid, grid)
        ratio = density_natural(mu_h, mu_v, sp) \
            * shaping_acceptance(mu_h, mu_v, sp) / np.exp(mu_h + mu_v)
        assert ratio.max() - ratio.min() <= 1e-9 * ratio.mean()

    def test_acceptance_rate_matches_quadrature(self, sp):
        # oracle: with mu = M sin^2(t) per axis the acceptance integrand is
        # smooth, so plain Gauss-Legendre is trustworthy
        t, w = gauss_nodes(0.0, math.pi / 2, 120)
        mu = arcsine_ppf(2.0 * t / math.pi, sp.mu_max)  # equals M sin^2(t)
        q = shaping_acceptance(mu[:, None], mu[None, :], sp)
        est = float((2.0 / math.pi) ** 2 * w @ q @ w)
        assert shaping_acceptance_rate(sp) == pytest.approx(est, rel=1e-9)

    def test_accepted_histogram_matches_shaped_law(self, sp, rng):
        mu_h, mu_v = sample_natural_intensities(rng, sp, 200_000)
        keep = rng.random(mu_h.size) < shaping_acceptance(mu_h, mu_v, sp)
        kept = mu_h[keep]
        stat = stats.kstest(kept, lambda x: shaped_cdf(x, sp.mu_max)).statistic
        assert stat < 0.01


class TestShapedDensity:
    def test_normalized_closed_form(self, sp):
        m = sp.mu_max
        x, w = gauss_nodes(0.0, m, 60)
        total = float(w @ density_shaped(x[:, None], x[None, :], sp) @ w)
        assert total == pytest.approx(1.0, abs=1e-10)

    def test_origin_value(self, sp):
        want = 1.0 / math.expm1(sp.mu_max) ** 2
        assert density_shaped(0.0, 0.0, sp) == pytest.approx(want, rel=1e-14)

    def test_small_intensity_uniform_limit(self):
        # Taylor oracle: for M -> 0, (e^M - 1)^2 ~ M^2 (1 + M + ...), so the
        # density times M^2 tends to 1
        tiny = SourceParams.from_mu_max(1e-5)
        center = density_shaped(5e-6, 5e-6, tiny)
        assert center * (1e-5) ** 2 == pytest.approx(1.0, abs=1e-4)


class TestSampling:
    def test_inverse_cdf_midpoint(self, sp):
        assert arcsine_ppf(0.5, sp.mu_max) == pytest.approx(sp.mu_max / 2, rel=1e-12)

    def test_natural_mean(self, sp, rng):
        n = 100_000
        mu_h, _ = sample_natural_intensities(rng, sp, n)
        # arcsine law has mean M/2 and variance M^2/8
        sigma = sp.mu_max / math.sqrt(8 * n)
        assert abs(mu_h.mean() - sp.mu_max / 2) < 3 * sigma

    def test_natural_cdf_kolmogorov(self, sp, rng):
        mu_h, _ = sample_natural_intensities(rng, sp, 100_000)
        stat = stats.kstest(mu_h, lambda x: arcsine_cdf(x, sp.mu_max)).statistic
        assert stat < 0.01

    def test_sample_source_fields(self, sp, rng):
        for shaped in (False, True):
            s = sample_source(rng, sp, shaped=shaped)
            assert 0.0 <= s.mu_h <= sp.mu_max
            assert 0.0 <= s.mu_v <= sp.mu_max
            assert 0.0 <= s.phi < TWO_PI
            assert 0.0 <= s.phi_g < TWO_PI

    def test_negative_intensity_rejected(self):
        with pytest.raises(ValueError):
            SourceSample(mu_h=-0.1, mu_v=0.0, phi=0.0, phi_g=0.0)
