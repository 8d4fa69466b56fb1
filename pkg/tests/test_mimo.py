import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from v2xtwin.mimo import (
    ArrayGeometry, LinkBudget, array_response, beam_direction_cosines, beamforming_gain,
    dft_codebook, dft_matrix, frequency_response, gain_matrix, local_angles, snr_db,
    subcarrier_offsets, subcarrier_spacing, synthesize, write_channel_csv,
)
from v2xtwin.raytrace import Interaction, PropPath

from oracles import double_loop_argmax


def path(gain=1.0 + 0j, dod=(0.0, 0.0), doa=(math.pi, 0.0), delay=1e-7):
    return PropPath(np.zeros((2, 3)), (Interaction("L"),), complex(gain), delay, dod, doa)


class TestArray:
    def test_ula_phases_at_30_deg(self):
        a = array_response(ArrayGeometry(4, 1), math.radians(30), 0.0)
        assert a == pytest.approx(np.array([1, -1j, -1, 1j]), abs=1e-12)

    def test_broadside_all_ones(self):
        assert array_response(ArrayGeometry(8, 2), 0.0, 0.0) == pytest.approx(np.ones(16))

    def test_planar_ordering(self):
        g = ArrayGeometry(2, 3)
        el = math.asin(0.5)
        a = array_response(g, 0.0, el).reshape(2, 3)
        # elevation varies along the fast (second) index only
        assert a[0] == pytest.approx(a[1])
        assert a[0] == pytest.approx(np.exp(-1j * np.pi * 0.5 * np.arange(3)))

    def test_yaw_rotates_boresight(self):
        g = ArrayGeometry(4, 1, yaw=math.pi / 2)
        assert array_response(g, math.pi / 2, 0.0) == pytest.approx(np.ones(4))
        _, _, behind = local_angles(g, -math.pi / 2, 0.0)
        assert behind

    def test_pitch(self):
        g = ArrayGeometry(1, 4, pitch=math.radians(-10))
        assert array_response(g, 0.0, math.radians(-10)) == pytest.approx(np.ones(4))

    @given(st.floats(-math.pi, math.pi), st.floats(-1.5, 1.5))
    def test_unit_modulus(self, az, el):
        assert np.abs(array_response(ArrayGeometry(4, 2), az, el)) == pytest.approx(np.ones(8))

    def test_bad_geometry(self):
        with pytest.raises(ValueError):
            ArrayGeometry(0, 2)


class TestCodebook:
    @pytest.mark.parametrize("n", [1, 2, 4, 8, 16, 32])
    def test_dft_unitary(self, n):
        F = dft_matrix(n)
        assert np.abs(F.conj().T @ F - np.eye(n)).max() <= 1e-12

    def test_two_point_beams(self):
        F = dft_matrix(2) * math.sqrt(2)
        cols = {tuple(np.round(F[:, i], 12)) for i in range(2)}
        assert cols == {(1, 1), (1, -1)}

    def test_kron_gram(self):
        cb = dft_codebook(16, 4)
        G = cb.beams.conj().T @ cb.beams
        assert np.abs(G - np.eye(64)).max() <= 1e-12
        assert cb.flat_index(3, 2) == 14 and cb.grid_index(14) == (3, 2)

    def test_beam_ordering(self):
        cb = dft_codebook(8, 1)
        assert beam_direction_cosines(cb, 4) == (0.0, 0.0)
        assert [beam_direction_cosines(cb, b)[0] for b in range(8)] == sorted(
            beam_direction_cosines(cb, b)[0] for b in range(8))

    def test_nearest_beam(self):
        cb = dft_codebook(16, 4)
        assert cb.nearest_beam(0.0, 0.0) == cb.flat_index(8, 2)
        cb2 = cb.reoriented(math.pi, 0.0)
        assert cb2.nearest_beam(math.pi, 0.0) == cb.flat_index(8, 2)

    def test_steered_beam_points_at_its_direction(self):
        cb = dft_codebook(8, 1)
        uy, _ = beam_direction_cosines(cb, 6)
        az = math.asin(uy)
        a = array_response(cb.geometry, az, 0.0)
        assert int(np.argmax(np.abs(cb.beams.conj().T @ a))) == 6

    def test_geometry_mismatch(self):
        with pytest.raises(ValueError):
            dft_codebook(4, 2, ArrayGeometry(2, 4))


class TestChannel:
    def test_full_array_gain(self):
        tx, rx = ArrayGeometry(16, 4), ArrayGeometry(1, 1)
        h = synthesize([path()], tx, rx, 28e9)
        f = dft_codebook(16, 4).beam(dft_codebook(16, 4).flat_index(8, 2))
        assert beamforming_gain(h, f, np.array([1.0])) == pytest.approx(64.0, rel=1e-12)

    def test_both_ends_gain(self):
        tx, rx = ArrayGeometry(8, 2), ArrayGeometry(4, 2, yaw=math.pi)
        h = synthesize([path()], tx, rx, 28e9)
        F, W = dft_codebook(8, 2), dft_codebook(4, 2, rx)
        G = gain_matrix(h, F.beams, W.beams)
        assert G.max() == pytest.approx(16 * 8, rel=1e-12)

    def test_empty_path_set(self, caplog):
        h = synthesize([], ArrayGeometry(4, 1), ArrayGeometry(2, 1), 28e9)
        assert h.empty and h.shape == (2, 4) and not h.h.any()
        assert "empty path set" in caplog.text

    @given(st.complex_numbers(max_magnitude=10), st.complex_numbers(max_magnitude=10))
    def test_linear_in_path_gains(self, g1, g2):
        tx, rx = ArrayGeometry(4, 2), ArrayGeometry(2, 1)
        p1 = path(g1, (0.3, 0.1), (2.0, -0.1))
        p2 = path(g2, (-0.5, 0.0), (1.0, 0.2))
        h = synthesize([p1, p2], tx, rx, 28e9).h
        h1 = synthesize([path(1, (0.3, 0.1), (2.0, -0.1))], tx, rx, 28e9).h
        h2 = synthesize([path(1, (-0.5, 0.0), (1.0, 0.2))], tx, rx, 28e9).h
        assert np.allclose(h, g1 * h1 + g2 * h2, atol=1e-9)

    def test_gain_matrix_vs_loop(self):
        rng = np.random.default_rng(1)
        h = rng.normal(size=(8, 16)) + 1j * rng.normal(size=(8, 16))
        F, W = dft_codebook(8, 2).beams, dft_codebook(4, 2).beams
        G = gain_matrix(h, F, W)
        (i, j), g = double_loop_argmax(h, F, W)
        assert np.unravel_index(np.argmax(G), G.shape) == (i, j)
        assert G[i, j] == pytest.approx(g, rel=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            gain_matrix(np.zeros((2, 3)), np.zeros((4, 1)), np.zeros((2, 1)))

    def test_write_csv(self, tmp_path):
        h = np.array([[1 + 2j, 3.5 - 1j]])
        write_channel_csv(h, tmp_path / "h.csv")
        assert (tmp_path / "h.csv").read_text().strip() == "1,2,3.5,-1"


class TestWideband:
    def test_spacing(self):
        assert subcarrier_spacing(4) == 240e3
        assert subcarrier_spacing(0) == 15e3
        assert list(subcarrier_offsets(4)) == [-2, -1, 0, 1]

    def test_center_subcarrier_matches_narrowband(self):
        tx, rx = ArrayGeometry(4, 2), ArrayGeometry(2, 1)
        ps = [path(1 + 1j, (0.3, 0.0), (2.0, 0.0), 1e-7), path(0.5, (-0.2, 0.1), (1.0, 0.0), 2.3e-7)]
        hk = frequency_response(ps, tx, rx, 28e9, 4, 16)
        nb = synthesize(ps, tx, rx, 28e9)
        assert np.allclose(hk.h_k[8], nb.h, atol=1e-15)
        assert np.allclose(hk.h, nb.h, atol=1e-15)

    def test_delay_phase(self):
        g = ArrayGeometry(1, 1)
        tau = 1e-7
        hk = frequency_response([path(1.0, delay=tau)], g, g, 28e9, 4, 4)
        for idx, k in enumerate(hk.subcarriers):
            assert hk.h_k[idx, 0, 0] == pytest.approx(np.exp(-2j * np.pi * k * 240e3 * tau))

    def test_wideband_single_path_equals_narrowband(self):
        tx, rx = ArrayGeometry(4, 1), ArrayGeometry(1, 1)
        hk = frequency_response([path(0.1, (0.2, 0.0))], tx, rx, 28e9, 4, 8)
        F = dft_codebook(4, 1).beams
        W = np.ones((1, 1))
        assert np.allclose(gain_matrix(hk, F, W, wideband=True), gain_matrix(hk, F, W))

    def test_wideband_requires_channel(self):
        with pytest.raises(ValueError):
            gain_matrix(np.eye(2), np.eye(2), np.eye(2), wideband=True)


class TestLinkBudget:
    def test_snr_examples(self):
        lb = LinkBudget()
        assert snr_db(1.0, lb) == pytest.approx(92.0)
        assert snr_db(1e-9, lb) == pytest.approx(2.0)
        assert snr_db(0.0, lb) == -math.inf
        lb0 = LinkBudget(tx_dbm=0.0, noise_dbm=0.0)
        assert snr_db(10.0, lb0) == 10.0

    def test_pair_time(self):
        assert LinkBudget().pair_time == pytest.approx(62.5e-6)
        assert LinkBudget().subcarrier_spacing == 240e3

    def test_validation(self):
        with pytest.raises(ValueError):
            LinkBudget(pair_time_us=0)
        with pytest.raises(ValueError):
            snr_db(-1.0, LinkBudget())

    @settings(max_examples=50)
    @given(st.floats(1e-15, 1e6), st.floats(1.0001, 100))
    def test_monotone(self, g, factor):
        lb = LinkBudget()
        assert snr_db(g * factor, lb) > snr_db(g, lb)
