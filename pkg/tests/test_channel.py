import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import TOY_PATHS, crandn
from overspread_otfs.channel import (
    PROFILES,
    ChannelPath,
    ChannelRealization,
    apply_channel,
    awgn,
    dt_channel_vector,
    dt_channel_vectors,
    etu_delays_samples,
    fractional_taps,
    generate_channel,
    k_max_from_speed,
    profile_powers,
    to_matrix_oracle,
)
from overspread_otfs.otfs_core import FrameGeometry


class TestRealization:
    g = FrameGeometry(8, 6)

    def test_sorted_by_delay(self):
        ch = ChannelRealization(self.g, (ChannelPath(1, 9, 4), ChannelPath(1, 0, 0)), 30)
        assert list(ch.delays) == [0, 9]
        assert ch.b_max == 3

    @pytest.mark.parametrize(
        "paths,l_max",
        [
            ((ChannelPath(1, 31, 0),), 30),
            ((ChannelPath(1, 3, 6),), 30),
            ((ChannelPath(1, 3, 1), ChannelPath(1, 3, 2)), 30),
            ((ChannelPath(np.nan, 3, 1),), 30),
            ((), 48),
        ],
    )
    def test_invalid(self, paths, l_max):
        with pytest.raises(ValueError):
            ChannelRealization(self.g, paths, l_max)

    def test_same_delay_same_doppler_allowed(self):
        ch = ChannelRealization(self.g, (ChannelPath(1, 3, 1), ChannelPath(2, 3, 1)), 30)
        assert len(ch) == 2

    def test_json_round_trip(self, toy, tmp_path):
        toy.save(tmp_path / "c.json")
        back = ChannelRealization.load(tmp_path / "c.json")
        assert back == toy
        d = json.loads((tmp_path / "c.json").read_text())
        assert set(d["paths"][0]) == {"re", "im", "l", "k"}


class TestProfiles:
    def test_etu_sample_delays(self):
        # round(tau * M * delta_f) at 512 x 900 kHz
        assert list(etu_delays_samples(PROFILES["C"].geometry())) == [0, 23, 55, 92, 106, 230, 737, 1060, 2304]

    def test_etu_aliased_delays_distinct(self):
        d = etu_delays_samples(PROFILES["C"].geometry())
        assert len(set(d % 512)) == len(d)

    @pytest.mark.parametrize("name", ["A", "B"])
    def test_k_max_from_speed(self, name):
        p = PROFILES[name]
        assert k_max_from_speed(p.speed_kmh, 4e9, p.geometry()) == p.k_max

    def test_eva_powers(self):
        p = profile_powers("EVA", 9)
        assert p[0] == 1.0
        assert 10 * np.log10(p[-1]) == pytest.approx(-16.9)

    def test_too_many_taps(self):
        with pytest.raises(ValueError):
            profile_powers("ETU", 10)


class TestGenerate:
    @pytest.mark.parametrize("name", ["A", "B", "C"])
    @pytest.mark.parametrize("model", ["phase", "rayleigh"])
    def test_paper_scale_invariants(self, name, model):
        prof = PROFILES[name]
        g = prof.geometry()
        for seed in range(5):
            ch = generate_channel(prof, g, rng=seed, gain_model=model)
            assert len(ch) == 9
            assert len(set(ch.delays)) == 9
            assert ch.delays.max() <= 2400
            assert np.sum(np.abs(ch.gains) ** 2) == pytest.approx(1.0, abs=1e-12)
            signed = np.array([g.signed_doppler(k) for k in ch.dopplers])
            assert np.all(np.abs(signed) <= prof.k_max)
            if name != "C":
                assert np.count_nonzero(ch.delays < g.M) >= 2

    def test_phase_model_follows_profile(self):
        prof = PROFILES["B"]
        ch = generate_channel(prof, prof.geometry(), rng=0)
        p = profile_powers("EVA", 9)
        np.testing.assert_allclose(np.abs(ch.gains) ** 2, p / p.sum(), rtol=1e-12)

    def test_seeded(self):
        prof = PROFILES["A"]
        a = generate_channel(prof, prof.geometry(), rng=7)
        b = generate_channel(prof, prof.geometry(), rng=7)
        assert a == b

    def test_errors(self):
        prof = PROFILES["A"]
        g = FrameGeometry(8, 4)
        with pytest.raises(ValueError):
            generate_channel(prof, g, l_max=5, L=9)
        with pytest.raises(ValueError):
            generate_channel(prof, g, l_max=40)
        with pytest.raises(ValueError):
            generate_channel(prof, prof.geometry(), gain_model="nakagami")
        with pytest.raises(ValueError):
            generate_channel(PROFILES["C"], PROFILES["C"].geometry(), l_max=1000)


class TestApplyChannel:
    def test_matches_matrix_oracle(self, toy, rng):
        s = crandn(rng, 48)
        np.testing.assert_allclose(apply_channel(s, toy), to_matrix_oracle(toy, 48) @ s, atol=1e-12)

    def test_oracle_is_lower_triangular(self, toy):
        G = to_matrix_oracle(toy, 48)
        assert np.allclose(np.triu(G, 1), 0)

    def test_zero_history(self):
        s = np.zeros(16, complex)
        s[-1] = 1
        r = apply_channel(s, [ChannelPath(1, 3, 0)])
        assert np.all(r == 0)

    def test_single_path(self):
        s = np.arange(1, 17, dtype=complex)
        r = apply_channel(s, [ChannelPath(0.5j, 2, 3)])
        n = np.arange(14)
        np.testing.assert_allclose(r[2:], 0.5j * np.exp(2j * np.pi * 3 * n / 16) * s[:14])
        assert np.all(r[:2] == 0)

    def test_noise_calibration(self):
        w = awgn(10**6, 0.3, np.random.default_rng(1))
        assert np.var(w) == pytest.approx(0.3, rel=0.01)
        assert abs(np.mean(w.real * w.imag)) < 1e-3

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_linearity(self, seed):
        rng = np.random.default_rng(seed)
        ch = ChannelRealization(
            FrameGeometry(8, 8), tuple(ChannelPath(complex(crandn(rng, 1)[0]), int(l), int(rng.integers(8))) for l in rng.choice(64, 4, replace=False)), 63
        )
        a, b = crandn(rng, 64), crandn(rng, 64)
        np.testing.assert_allclose(apply_channel(a + 2 * b, ch), apply_channel(a, ch) + 2 * apply_channel(b, ch), atol=1e-12)


class TestDTVectors:
    def test_entries_are_time_varying_gain(self, toy):
        g = toy.geometry
        for h, l, k in [(p.h, p.l, p.k) for p in toy.paths]:
            nu = dt_channel_vector(h, l, k, g)
            q = np.arange(g.MN)
            gain = h * np.exp(2j * np.pi * k * (q - l) / g.MN)
            np.testing.assert_allclose(nu.reshape(-1, order="F"), gain, atol=1e-14)

    def test_same_delay_paths_summed(self):
        g = FrameGeometry(8, 6)
        v = dt_channel_vectors([ChannelPath(1, 3, 1), ChannelPath(2, 3, 1)], g)
        np.testing.assert_allclose(v[3], 3 * dt_channel_vector(1, 3, 1, g))


class TestFractional:
    g = FrameGeometry(64, 16)

    def test_integer_delay_reduces_to_single_tap(self, rng):
        ch = fractional_taps([5.0], [1.0], [2.0], 0.02, self.g)
        assert list(ch.taps) == [5]
        s = crandn(rng, self.g.MN)
        np.testing.assert_allclose(ch.apply(s), apply_channel(s, [ChannelPath(1, 5, 2)]), atol=1e-12)

    def test_fractional_energy_and_taps(self):
        ch = fractional_taps([10.4], [1.0], [0.0], 0.02, self.g)
        w = np.abs(np.sinc(ch.taps - 10.4))
        assert np.all(w > 0.02)
        assert 0.97 < ch.retained_energy()[0] <= 1.0

    def test_dt_vectors_shape(self):
        ch = fractional_taps([3.5, 70.2], [0.6, 0.8j], [1.0, -1.0], 0.05, self.g)
        v = ch.dt_vectors()
        assert all(a.shape == (64, 16) for a in v.values())

    @pytest.mark.parametrize("eps", [0.0, -1.0, 2.0])
    def test_errors(self, eps):
        with pytest.raises(ValueError):
            fractional_taps([3.5], [1.0], [0.0], eps, self.g)


def test_toy_paths_fixture(toy):
    assert sorted((p.l, p.k) for p in toy.paths) == sorted(TOY_PATHS)
