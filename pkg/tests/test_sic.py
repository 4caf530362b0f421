import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mprvlc.sic import (FilterKind, NoiseNorm, SingularChannelError, decode_order, layer_rates,
                        layer_sinrs, mmse_sinr, zf_sinr)

XI, PT, S2 = 0.97, 0.1, 1.9e-14
GAIN = (XI * PT) ** 2

# correlated 2-device channel; column 1 has the larger norm and decodes first
H2 = np.array([[2e-6, 1.5e-6], [1e-6, 1.8e-6]])
ZF_L0 = 0.43677568421052632  # mpmath, Euclidean noise norm
ZF_L0_ONES = 2.1838784210526316
LAST = 2.4760526315789474
MMSE_L0 = 1.0932473626116165

gains = arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 4)),
               elements=st.floats(1e-7, 3e-6))


def mp_zf(H, order):
    mp.mp.dps = 40
    out = []
    for layer, dev in enumerate(order):
        Hr = mp.matrix(H[:, list(order[layer:])].tolist())
        W = (Hr.T * Hr) ** -1 * Hr.T
        w = [W[0, i] for i in range(W.cols)]
        out.append(float(mp.mpf(GAIN) / (mp.mpf(S2) * sum(x * x for x in w))))
    return out


class TestDecodeOrder:
    def test_singleton(self):
        assert decode_order(H2, [0, 1]) == (1,)

    def test_by_norm(self):
        assert decode_order(H2, [1, 1]) == (1, 0)

    def test_ties_by_index(self):
        H = np.array([[1.0, 0.0, 1.0], [0.0, 1.0, 0.0]])
        assert decode_order(H, [1, 1, 0]) == (0, 1)
        assert decode_order(H, [1, 0, 1]) == (0, 2)

    def test_infeasible(self):
        with pytest.raises(ValueError):
            decode_order(H2[:1], [1, 1])  # two active devices, one PD

    @given(gains, st.data())
    def test_is_permutation(self, H, data):
        n = H.shape[1]
        bits = data.draw(st.lists(st.booleans(), min_size=n, max_size=n))
        if sum(bits) > H.shape[0]:
            return
        order = decode_order(H, bits)
        assert sorted(order) == [j for j in range(n) if bits[j]]


class TestZf:
    def test_single_device(self):
        h = H2[:, :1]
        res = zf_sinr(h, (0,), S2, XI, PT)
        assert res.sinr[0] == pytest.approx(GAIN * float(h[:, 0] @ h[:, 0]) / S2, rel=1e-13)

    def test_orthogonal_columns(self):
        H = np.array([[2e-6, 0.0], [0.0, 1e-6]])
        res = zf_sinr(H, (0, 1), S2, XI, PT)
        np.testing.assert_allclose(res.sinr, [GAIN * 4e-12 / S2, GAIN * 1e-12 / S2], rtol=1e-13)

    def test_correlated_reference(self):
        res = zf_sinr(H2, (1, 0), S2, XI, PT)
        np.testing.assert_allclose(res.sinr, [ZF_L0, LAST], rtol=1e-11)
        np.testing.assert_allclose(mp_zf(H2, (1, 0)), [ZF_L0, LAST], rtol=1e-14)

    def test_ones_norm_mode(self):
        res = zf_sinr(H2, (1, 0), S2, XI, PT, NoiseNorm.ONES)
        assert res.sinr[0] == pytest.approx(ZF_L0_ONES, rel=1e-11)

    @given(gains)
    def test_matches_high_precision(self, H):
        order = decode_order(H, [1] * min(H.shape) + [0] * (H.shape[1] - min(H.shape)))
        try:
            res = zf_sinr(H, order, S2, XI, PT)
        except SingularChannelError:
            return
        cond = np.linalg.cond(H[:, list(order)])
        np.testing.assert_allclose(res.sinr, mp_zf(H, order), rtol=max(1e-10, 1e-14 * cond ** 2))

    def test_singular_names_layer(self):
        H = np.array([[1e-6, 2e-6], [1e-6, 2e-6]])  # parallel columns
        with pytest.raises(SingularChannelError) as info:
            zf_sinr(H, (1, 0), S2, XI, PT)
        assert info.value.layer == 0
        assert "layer 0" in str(info.value)


class TestMmse:
    def test_single_equals_zf(self):
        h = H2[:, 1:]
        assert mmse_sinr(h, (0,), S2, XI, PT).sinr[0] == pytest.approx(
            zf_sinr(h, (0,), S2, XI, PT).sinr[0], rel=1e-13)

    def test_reference(self):
        res = mmse_sinr(H2, (1, 0), S2, XI, PT)
        np.testing.assert_allclose(res.sinr, [MMSE_L0, LAST], rtol=1e-11)

    def test_nonpositive_noise(self):
        with pytest.raises(ValueError):
            mmse_sinr(H2, (1, 0), 0.0, XI, PT)

    @given(gains)
    def test_dominates_zf_and_last_layer_agrees(self, H):
        k = min(H.shape)
        order = decode_order(H, [1] * k + [0] * (H.shape[1] - k))
        try:
            zf = zf_sinr(H, order, S2, XI, PT).sinr
        except SingularChannelError:
            return
        mm = mmse_sinr(H, order, S2, XI, PT).sinr
        assert np.all(mm >= zf * (1 - 1e-12))
        assert abs(mm[-1] - zf[-1]) / zf[-1] <= 1e-9

    @given(arrays(np.float64, (3, 3), elements=st.floats(1e-7, 3e-6)))
    def test_extra_interferer_never_helps(self, H):
        # device 0 at layer 0 with interferers {1} vs {1, 2}
        one = mmse_sinr(H[:, :2], (0, 1), S2, XI, PT).sinr[0]
        two = mmse_sinr(H, (0, 1, 2), S2, XI, PT).sinr[0]
        assert two <= one * (1 + 1e-12)

    @given(arrays(np.float64, (3, 3), elements=st.floats(1e-7, 3e-6)), st.permutations([0, 1, 2]))
    def test_pd_relabeling(self, H, perm):
        for kind in FilterKind:
            try:
                a = layer_sinrs(H, [1, 1, 1], S2, XI, PT, kind).sinr
                b = layer_sinrs(H[list(perm)], [1, 1, 1], S2, XI, PT, kind).sinr
            except SingularChannelError:
                continue
            np.testing.assert_allclose(a, b, rtol=1e-7)


class TestLayerSinrs:
    def test_by_device(self):
        res = layer_sinrs(H2, [1, 1], S2, XI, PT, FilterKind.ZF)
        assert res.order == (1, 0)
        np.testing.assert_allclose(res.by_device(3), [LAST, ZF_L0, 0.0], rtol=1e-11)

    def test_dispatch(self):
        assert layer_sinrs(H2, [1, 1], S2, XI, PT, "mmse").filter_kind is FilterKind.MMSE


class TestRates:
    def test_examples(self):
        assert layer_rates(1.0, 20e6) == pytest.approx(2e7, rel=1e-15)
        assert layer_rates(0.0, 20e6) == 0.0
        assert layer_rates(3.0, 1.0) == pytest.approx(2.0, rel=1e-15)

    @given(st.floats(0, 1e6), st.floats(0, 1e6))
    def test_monotone(self, a, b):
        lo, hi = sorted((a, b))
        assert layer_rates(lo, 1.0) <= layer_rates(hi, 1.0)
        assert math.isfinite(layer_rates(hi, 20e6))
