import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from overspread_otfs.otfs_core import FrameGeometry, dzt
from overspread_otfs.training import (
    ChirpParams,
    build_training,
    chirp_amplitude,
    dual_chirp,
    pilot_amplitude,
    training_from_snr,
)


def chirp_oracle(l, k, A, f_o, g):
    out = np.zeros(g.MN, complex)
    for q in range(l, min(l + g.M, g.MN)):
        d = q - l
        lin = f_o * g.T / g.M + k / g.MN
        out[q] = A * sum(np.exp(2j * np.pi * (lin * d + s * d * d / (4 * g.M))) for s in (1, -1))
    return out


class TestDualChirp:
    @pytest.mark.parametrize("l,k,f_o", [(0, 0, 0.0), (5, 2, 0.0), (12, 5, 3e3), (44, 1, 0.0)])
    def test_matches_formula(self, l, k, f_o):
        g = FrameGeometry(8, 6)
        np.testing.assert_allclose(dual_chirp(l, k, ChirpParams(1.7, f_o), g), chirp_oracle(l, k, 1.7, f_o, g), atol=1e-12)

    def test_support_and_clipping(self):
        g = FrameGeometry(8, 6)
        p = dual_chirp(44, 0, ChirpParams(1.0), g)
        assert np.count_nonzero(p) == 4
        assert not np.any(dual_chirp(48, 0, ChirpParams(1.0), g))

    def test_real_when_centred(self):
        # the two chirps are conjugates of each other at f_o = 0, k = 0
        p = dual_chirp(0, 0, ChirpParams(2.0), FrameGeometry(16, 4))
        assert np.allclose(p.imag, 0)
        assert p[0] == pytest.approx(4.0)

    @settings(max_examples=20, deadline=None)
    @given(l=st.integers(0, 40), k=st.integers(0, 7))
    def test_delayed_chirp_is_channel_shift(self, l, k):
        # a unit path (l, k) applied to p[0, 0] yields exactly p[l, k]
        from overspread_otfs.channel import ChannelPath, apply_channel

        g = FrameGeometry(8, 8)
        par = ChirpParams(1.0)
        r = apply_channel(dual_chirp(0, 0, par, g), [ChannelPath(1, l, k)])
        np.testing.assert_allclose(r, dual_chirp(l, k, par, g), atol=1e-12)

    def test_negative_amplitude(self):
        with pytest.raises(ValueError):
            ChirpParams(-1.0)


class TestSnr:
    def test_chirp_snr(self):
        A = chirp_amplitude(23.0, 0.5)
        assert 10 * np.log10(2 * A**2 / 0.5) == pytest.approx(23.0)

    def test_pilot_snr(self):
        x = pilot_amplitude(30.0, 128, 2.0)
        assert 10 * np.log10(x**2 / (128 * 2.0)) == pytest.approx(30.0)


class TestTrainingFrame:
    g = FrameGeometry(8, 6)

    def test_time_signal_structure(self):
        tr = build_training(5.0, ChirpParams(1.3), self.g)
        expect = dual_chirp(0, 0, ChirpParams(1.3), self.g)
        expect[:: self.g.M] += 5.0 / np.sqrt(self.g.N)
        np.testing.assert_allclose(tr.time_signal, expect, atol=1e-12)

    def test_dd_grid(self):
        tr = build_training(5.0, ChirpParams(1.3), self.g)
        np.testing.assert_allclose(dzt(tr.time_signal, self.g.M), tr.dd_grid, atol=1e-12)
        chirp_only = dzt(dual_chirp(0, 0, ChirpParams(1.3), self.g), self.g.M)
        np.testing.assert_allclose(tr.dd_grid - chirp_only, np.pad([[5.0]], ((0, 7), (0, 5))), atol=1e-12)

    def test_template(self):
        tr = build_training(5.0, ChirpParams(1.3), self.g)
        np.testing.assert_allclose(tr.template, dual_chirp(0, 0, ChirpParams(1.3), self.g))

    def test_ratio(self):
        tr = training_from_snr(30.0, 23.0, FrameGeometry(512, 128))
        # |x_p|^2 = N 10^3 against 2A^2/N = 10^2.3 / N per DD bin
        assert tr.pilot_to_chirp_ratio() == pytest.approx(10**0.7 * 128**2)
        assert build_training(1.0, ChirpParams(0.0), self.g).pilot_to_chirp_ratio() == np.inf

    def test_min_ratio(self):
        with pytest.raises(ValueError):
            build_training(0.1, ChirpParams(10.0), self.g, min_ratio=1.0)
        build_training(100.0, ChirpParams(1.0), self.g, min_ratio=1.0)
