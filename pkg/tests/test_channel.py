import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mprvlc.channel import (BOLTZMANN, ELECTRON_CHARGE, ChannelDomainError, Geometry, NoiseConfig,
                            OpticsConfig, channel_matrix, concentrator_gain, lambertian_order,
                            los_gain, noise_variance, pd_array_layout, received_optical_power,
                            shot_noise_variance, thermal_noise_variance)

OPT = OpticsConfig()
NOISE = NoiseConfig()

# frozen high-precision references (mpmath, 50 digits)
RHO_70 = 0.6460587703487338
CONC_10_70 = 2.548067245721537
SHOT_1UW = 1.837282536e-14
THERMAL = 5.378445971901423e-16
TOTAL_1UW = 1.891066995719014e-14


def mp_noise(pr, opt=OPT, cfg=NOISE):
    mp.mp.dps = 50
    q, k = mp.mpf(ELECTRON_CHARGE), mp.mpf(BOLTZMANN)
    B, A = mp.mpf(opt.bandwidth), mp.mpf(opt.detector_area)
    xi, Ibg = mp.mpf(opt.responsivity), mp.mpf(cfg.background_current)
    I2, I3 = mp.mpf(cfg.personick_i2), mp.mpf(cfg.personick_i3)
    T, G0, gm = mp.mpf(cfg.temperature), mp.mpf(cfg.open_loop_gain), mp.mpf(cfg.fet_transconductance)
    Gam, eta = mp.mpf(cfg.fet_noise_factor), mp.mpf(112) * mp.mpf(10) ** -12 / mp.mpf(10) ** -4
    shot = 2 * q * xi * mp.mpf(pr) * B + 2 * q * Ibg * I2 * B
    th = (8 * mp.pi * k * T / G0 * eta * A * I2 * B ** 2
          + 16 * mp.pi ** 2 * k * T * Gam / gm * eta ** 2 * A ** 2 * I3 * B ** 3)
    return shot, th


class TestLambertianOrder:
    def test_sixty_degrees_is_one(self):
        assert lambertian_order(60.0) == pytest.approx(1.0, rel=1e-14)

    def test_seventy_degrees_matches_reference(self):
        mp.mp.dps = 50
        ref = -mp.log(2) / mp.log(mp.cos(mp.radians(70)))
        assert float(ref) == pytest.approx(RHO_70, rel=1e-15)
        assert lambertian_order(70.0) == pytest.approx(RHO_70, rel=1e-13)

    def test_near_ninety_is_positive_and_finite(self):
        # -ln2/ln(cos phi) tends to 0 from above as phi -> 90 deg
        rho = lambertian_order(89.9)
        mp.mp.dps = 50
        ref = -mp.log(2) / mp.log(mp.cos(mp.radians(mp.mpf("89.9"))))
        assert math.isfinite(rho) and rho > 0
        assert rho == pytest.approx(float(ref), rel=1e-10)
        assert rho < lambertian_order(70.0)

    @pytest.mark.parametrize("angle", [0.0, 90.0, -5.0, 120.0])
    def test_out_of_range(self, angle):
        with pytest.raises(ChannelDomainError):
            lambertian_order(angle)

    @given(st.floats(1.0, 88.0), st.floats(0.01, 1.0))
    def test_strictly_decreasing(self, a, d):
        assert lambertian_order(a + d) < lambertian_order(a)

    def test_always_positive(self):
        for a in np.linspace(0.5, 89.5, 50):
            assert lambertian_order(a) > 0


class TestConcentrator:
    def test_outside_fov(self):
        assert concentrator_gain(75.0, 70.0, 1.5) == 0.0

    def test_unit(self):
        assert concentrator_gain(0.0, 90.0, 1.0) == pytest.approx(1.0, rel=1e-15)

    def test_reference(self):
        mp.mp.dps = 50
        ref = mp.mpf("2.25") / mp.sin(mp.radians(70)) ** 2
        assert float(ref) == pytest.approx(CONC_10_70, rel=1e-15)
        assert concentrator_gain(10.0, 70.0, 1.5) == pytest.approx(CONC_10_70, rel=1e-13)


class TestLosGain:
    def test_directly_beneath(self):
        d = 4.0
        h = los_gain((5, 5, 0.85), (5, 5, 0.85 + d), OPT)
        rho = lambertian_order(OPT.semi_angle_half_power)
        expected = ((rho + 1) * OPT.detector_area * OPT.optical_filter_gain / (2 * math.pi * d * d)
                    * concentrator_gain(0.0, OPT.fov_width, OPT.refractive_index))
        assert h == pytest.approx(expected, rel=1e-13)

    def test_beyond_fov_is_zero(self):
        # 4 m below and 20 m sideways: incidence ~ 79 deg > 70 deg
        assert los_gain((0.0, 0.0, 0.0), (20.0, 0.0, 4.0), OPT) == 0.0

    def test_behind_emitter_is_zero(self):
        assert los_gain((5, 5, 3.0), (5, 5, 1.0), OPT) == 0.0

    def test_inverse_square(self):
        a = los_gain((5, 5, 1.0), (5, 5, 2.0), OPT)
        b = los_gain((5, 5, 1.0), (5, 5, 3.0), OPT)
        assert b == pytest.approx(a / 4, rel=1e-13)

    def test_coincident_points(self):
        with pytest.raises(ChannelDomainError):
            los_gain((1, 1, 1), (1, 1, 1), OPT)

    @given(st.floats(0.0, 2 * math.pi), st.floats(0.0, 3.0), st.floats(0.0, 2 * math.pi))
    def test_rotation_about_vertical(self, phi0, r, rot):
        pd = np.array([5.0, 10.0, 4.85])
        dev = pd + np.array([r * math.cos(phi0), r * math.sin(phi0), -4.0])
        c, s = math.cos(rot), math.sin(rot)
        off = dev - pd
        dev2 = pd + np.array([c * off[0] - s * off[1], s * off[0] + c * off[1], off[2]])
        assert los_gain(dev2, pd, OPT) == pytest.approx(los_gain(dev, pd, OPT), rel=1e-10, abs=1e-300)

    @given(st.floats(0.0, 10.0), st.floats(0.0, 20.0), st.floats(0.0, 4.8))
    def test_nonnegative_finite(self, x, y, z):
        h = los_gain((x, y, z), (5.0, 10.0, 4.85), OPT)
        assert h >= 0 and math.isfinite(h)


class TestChannelMatrix:
    def test_single(self):
        g = Geometry((10, 20, 5), ((5, 10, 4.85),), ((5, 10, 0.85),))
        H = channel_matrix(g, OPT)
        assert H.shape == (1, 1)
        assert H[0, 0] == los_gain((5, 10, 0.85), (5, 10, 4.85), OPT)

    def test_symmetric_placement(self):
        pds = pd_array_layout(2, (5, 10), 4.85)
        g = Geometry((10, 20, 5), pds, ((3, 10, 0.85), (7, 10, 0.85)))
        H = channel_matrix(g, OPT)
        # mirror image about x = 5 swaps the PDs
        np.testing.assert_allclose(H[:, 0], H[::-1, 1], rtol=1e-12)

    def test_all_outside_fov(self):
        narrow = OpticsConfig(fov_width=5.0)
        g = Geometry((10, 20, 5), ((5, 10, 4.85),), ((0.5, 0.5, 0.85), (9.5, 19.5, 0.85)))
        assert not channel_matrix(g, narrow).any()

    def test_geometry_validation(self):
        with pytest.raises(ChannelDomainError):
            Geometry((10, 20, 5), ((5, 10, 6.0),), ((1, 1, 1),))
        with pytest.raises(ChannelDomainError):
            Geometry((10, 20, 5), (), ((1, 1, 1),))
        with pytest.raises(ChannelDomainError):
            Geometry((10, 20, 5), ((5, 10, 4.8),), ((1, 1, 1),), pd_orientation=(0, 0, -2))

    def test_layouts(self):
        two = pd_array_layout(2, (5, 10), 4.85)
        assert two == ((4.925, 10.0, 4.85), (5.075, 10.0, 4.85))
        four = np.array(pd_array_layout(4, (5, 10), 4.85))
        assert sorted(set(np.round(four[:, 0], 12))) == [4.925, 5.075]
        assert sorted(set(np.round(four[:, 1], 12))) == [9.925, 10.075]


class TestReceivedPower:
    H = np.array([[1e-6, 2e-6, 3e-6], [2e-6, 1e-6, 5e-7]])

    def test_empty(self):
        assert received_optical_power(self.H, [0, 0, 0], 0.1) == 0.0

    def test_single_pd(self):
        assert received_optical_power(self.H[:1, :1], [1], 0.1) == pytest.approx(0.1 * 1e-6)

    def test_additive(self):
        a = received_optical_power(self.H, [1, 0, 0], 0.1)
        b = received_optical_power(self.H, [0, 1, 1], 0.1)
        assert received_optical_power(self.H, [1, 1, 1], 0.1) == pytest.approx(a + b, rel=1e-14)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            received_optical_power(self.H, [1, 0], 0.1)


class TestNoise:
    def test_zero_power_is_background_only(self):
        shot = shot_noise_variance(0.0, OPT, NOISE)
        bg = 2 * ELECTRON_CHARGE * NOISE.background_current * NOISE.personick_i2 * OPT.bandwidth
        assert shot == pytest.approx(bg, rel=1e-15)
        assert noise_variance(0.0, OPT, NOISE) > 0

    def test_reference_values(self):
        shot, th = mp_noise(1e-6)
        assert float(shot) == pytest.approx(SHOT_1UW, rel=1e-9)
        assert float(th) == pytest.approx(THERMAL, rel=1e-15)
        assert float(shot + th) == pytest.approx(TOTAL_1UW, rel=1e-9)
        assert shot_noise_variance(1e-6, OPT, NOISE) == pytest.approx(float(shot), rel=1e-13)
        assert thermal_noise_variance(OPT, NOISE) == pytest.approx(THERMAL, rel=1e-13)
        assert noise_variance(1e-6, OPT, NOISE) == pytest.approx(float(shot + th), rel=1e-13)

    @given(st.floats(0.0, 1e-3))
    def test_signal_shot_linear(self, pr):
        diff = noise_variance(2 * pr, OPT, NOISE) - noise_variance(pr, OPT, NOISE)
        expected = 2 * ELECTRON_CHARGE * OPT.responsivity * pr * OPT.bandwidth
        ulp = np.spacing(noise_variance(2 * pr, OPT, NOISE))
        assert diff == pytest.approx(expected, rel=1e-9, abs=4 * ulp)

    @given(st.floats(0.0, 1e-3), st.floats(1e-9, 1e-3))
    def test_increasing_in_power(self, pr, d):
        assert noise_variance(pr + d, OPT, NOISE) > noise_variance(pr, OPT, NOISE)

    @given(st.floats(1e5, 1e8), st.floats(1.01, 2.0))
    def test_increasing_in_bandwidth(self, b, factor):
        lo = noise_variance(1e-6, OpticsConfig(bandwidth=b), NOISE)
        hi = noise_variance(1e-6, OpticsConfig(bandwidth=b * factor), NOISE)
        assert hi > lo

    def test_negative_power(self):
        with pytest.raises(ValueError):
            noise_variance(-1.0, OPT, NOISE)

    def test_config_validation(self):
        with pytest.raises(ChannelDomainError):
            NoiseConfig(temperature=0.0)
        with pytest.raises(ChannelDomainError):
            OpticsConfig(fov_width=95.0)
        with pytest.raises(ChannelDomainError):
            OpticsConfig(tx_power=-1.0)
