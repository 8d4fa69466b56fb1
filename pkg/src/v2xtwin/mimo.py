"""Uniform planar arrays, DFT codebooks and MIMO channel synthesis.

An array's boresight is its local ``x`` axis, set by a world yaw and pitch.
Elements are indexed ``(m, n)`` along the local horizontal axis ``y`` and the
local vertical axis ``z``; the flattened element index is ``m * n_el + n``,
matching the Kronecker ordering ``kron(a_az, a_el)``.

DFT beams are ordered by increasing spatial frequency (fft-shifted columns):
azimuth beam ``i`` of an ``N``-point axis points at the direction cosine
``(i - N//2) / (N * spacing)``. Neighbouring indices are therefore angular
neighbours, which is what the gradient beam search relies on.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable

import numpy as np

from .raytrace import PathSet, PropPath, angles_to_unit

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ArrayGeometry:
    n_az: int
    n_el: int
    spacing: float = 0.5
    yaw: float = 0.0
    pitch: float = 0.0

    def __post_init__(self):
        if self.n_az < 1 or self.n_el < 1:
            raise ValueError("array dimensions must be >= 1")
        if self.spacing <= 0:
            raise ValueError("element spacing must be positive")

    @property
    def size(self) -> int:
        return self.n_az * self.n_el

    def oriented(self, yaw: float, pitch: float) -> "ArrayGeometry":
        return replace(self, yaw=yaw, pitch=pitch)

    def axes(self) -> np.ndarray:
        """Rows are the local x (boresight), y and z axes in world coordinates."""
        cy, sy = math.cos(self.yaw), math.sin(self.yaw)
        cp, sp = math.cos(self.pitch), math.sin(self.pitch)
        return np.array([
            [cp * cy, cp * sy, sp],
            [-sy, cy, 0.0],
            [-sp * cy, -sp * sy, cp],
        ])


def local_angles(geom: ArrayGeometry, az: float, el: float) -> tuple[float, float, bool]:
    """Array-frame azimuth and elevation of a world direction, plus a behind-plane flag."""
    d = geom.axes() @ angles_to_unit(az, el)
    psi_el = math.asin(max(-1.0, min(1.0, d[2])))
    return math.atan2(d[1], d[0]), psi_el, bool(d[0] < 0)


def _direction_cosines(geom: ArrayGeometry, az, el) -> tuple[np.ndarray, np.ndarray]:
    az = np.atleast_1d(np.asarray(az, dtype=float))
    el = np.atleast_1d(np.asarray(el, dtype=float))
    u = np.stack([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)])
    d = geom.axes() @ u
    return d[1], d[2]  # sin(psi_az) cos(psi_el), sin(psi_el)


def _responses(geom: ArrayGeometry, az, el) -> np.ndarray:
    """Array responses for many directions, shape (n_elements, n_directions)."""
    uy, uz = _direction_cosines(geom, az, el)
    m = np.arange(geom.n_az)[:, None]
    n = np.arange(geom.n_el)[:, None]
    a_az = np.exp(-2j * np.pi * geom.spacing * m * uy)
    a_el = np.exp(-2j * np.pi * geom.spacing * n * uz)
    return (a_az[:, None, :] * a_el[None, :, :]).reshape(geom.size, -1)


def array_response(geom: ArrayGeometry, az: float, el: float) -> np.ndarray:
    """Unit-magnitude steering vector for the world direction (az, el).

    Directions behind the array plane are allowed; a planar array cannot tell
    them from their mirror image in front. Use :func:`local_angles` to flag them.
    """
    return _responses(geom, az, el)[:, 0]


@dataclass(frozen=True, eq=False)
class Codebook:
    geometry: ArrayGeometry
    beams: np.ndarray  # (n_elements, n_beams), one unit-norm beam per column
    index_map: tuple[tuple[int, int], ...]

    def __len__(self) -> int:
        return self.beams.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.geometry.n_az, self.geometry.n_el

    def beam(self, b: int) -> np.ndarray:
        return self.beams[:, b]

    def flat_index(self, i_az: int, i_el: int) -> int:
        return i_az * self.geometry.n_el + i_el

    def grid_index(self, b: int) -> tuple[int, int]:
        return self.index_map[b]

    def nearest_beam(self, az: float, el: float) -> int:
        """Beam with the largest gain towards (az, el); lowest index on ties."""
        a = array_response(self.geometry, az, el)
        return int(np.argmax(np.abs(self.beams.conj().T @ a) ** 2))

    def reoriented(self, yaw: float, pitch: float) -> "Codebook":
        return Codebook(self.geometry.oriented(yaw, pitch), self.beams, self.index_map)


def dft_matrix(n: int) -> np.ndarray:
    """Unit-norm DFT columns in increasing spatial-frequency order."""
    m = np.arange(n)[:, None]
    k = (np.arange(n) - n // 2)[None, :]
    return np.exp(-2j * np.pi * m * k / n) / math.sqrt(n)


def dft_codebook(n_az: int, n_el: int, geometry: ArrayGeometry | None = None) -> Codebook:
    if n_az < 1 or n_el < 1:
        raise ValueError("codebook dimensions must be >= 1")
    geometry = geometry or ArrayGeometry(n_az, n_el)
    if (geometry.n_az, geometry.n_el) != (n_az, n_el):
        raise ValueError("geometry does not match codebook dimensions")
    beams = np.kron(dft_matrix(n_az), dft_matrix(n_el))
    index_map = tuple((i, j) for i in range(n_az) for j in range(n_el))
    return Codebook(geometry, beams, index_map)


def beam_direction_cosines(cb: Codebook, b: int) -> tuple[float, float]:
    """Local (u_y, u_z) direction cosines a DFT beam points at."""
    i, j = cb.index_map[b]
    g = cb.geometry
    return (i - g.n_az // 2) / (g.n_az * g.spacing), (j - g.n_el // 2) / (g.n_el * g.spacing)


# -- channels ---------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ChannelMatrix:
    h: np.ndarray  # (n_rx, n_tx) at the carrier
    carrier: float
    subcarriers: np.ndarray | None = None  # subcarrier offsets k
    h_k: np.ndarray | None = None  # (n_subcarriers, n_rx, n_tx)
    spacing_hz: float | None = None
    empty: bool = False

    @property
    def shape(self) -> tuple[int, int]:
        return self.h.shape

    @property
    def wideband(self) -> bool:
        return self.h_k is not None


def _path_list(paths) -> list[PropPath]:
    return list(paths.paths if isinstance(paths, PathSet) else paths)


def _path_terms(paths: list[PropPath], tx_geom: ArrayGeometry, rx_geom: ArrayGeometry):
    g = np.array([p.complex_gain for p in paths], dtype=complex)
    a_tx = _responses(tx_geom, [p.dod[0] for p in paths], [p.dod[1] for p in paths])
    a_rx = _responses(rx_geom, [p.doa[0] for p in paths], [p.doa[1] for p in paths])
    tau = np.array([p.delay for p in paths])
    return g, a_tx, a_rx, tau


def synthesize(paths: PathSet | Iterable[PropPath], tx_geom: ArrayGeometry,
               rx_geom: ArrayGeometry, f_c: float) -> ChannelMatrix:
    """Narrowband channel ``sum_l g_l a_rx(doa_l) a_tx(dod_l)^H``."""
    plist = _path_list(paths)
    if not plist:
        logger.warning("empty path set: returning a zero channel")
        return ChannelMatrix(np.zeros((rx_geom.size, tx_geom.size), dtype=complex), f_c, empty=True)
    g, a_tx, a_rx, _ = _path_terms(plist, tx_geom, rx_geom)
    return ChannelMatrix((a_rx * g) @ a_tx.conj().T, f_c)


def subcarrier_spacing(numerology: int) -> float:
    return 15e3 * 2 ** numerology


def subcarrier_offsets(n_subcarriers: int) -> np.ndarray:
    """Integer offsets ``k`` centred on the carrier (``k = 0`` is the carrier)."""
    return np.arange(n_subcarriers) - n_subcarriers // 2


def frequency_response(paths: PathSet | Iterable[PropPath], tx_geom: ArrayGeometry,
                       rx_geom: ArrayGeometry, f_c: float, numerology: int,
                       n_subcarriers: int) -> ChannelMatrix:
    """Per-subcarrier channels with the extra phase ``exp(-j 2 pi k df tau_l)``.

    Array responses are evaluated at the carrier (narrowband array model).
    """
    if n_subcarriers < 1:
        raise ValueError("need at least one subcarrier")
    df = subcarrier_spacing(numerology)
    ks = subcarrier_offsets(n_subcarriers)
    plist = _path_list(paths)
    if not plist:
        logger.warning("empty path set: returning a zero channel")
        zeros = np.zeros((n_subcarriers, rx_geom.size, tx_geom.size), dtype=complex)
        return ChannelMatrix(zeros[n_subcarriers // 2], f_c, ks, zeros, df, empty=True)
    g, a_tx, a_rx, tau = _path_terms(plist, tx_geom, rx_geom)
    phase = np.exp(-2j * np.pi * np.outer(ks * df, tau))  # (K, L)
    h_k = np.einsum("rl,kl,tl->krt", a_rx, phase * g, a_tx.conj())
    h0 = (a_rx * g) @ a_tx.conj().T
    return ChannelMatrix(h0, f_c, ks, h_k, df)


def _as_matrix(h) -> np.ndarray:
    return h.h if isinstance(h, ChannelMatrix) else np.asarray(h)


def gain_matrix(h: ChannelMatrix | np.ndarray, f_beams: np.ndarray, w_beams: np.ndarray,
                wideband: bool = False) -> np.ndarray:
    """Beamforming gains for every (f, w) column pair, shape (n_f, n_w)."""
    if wideband:
        if not isinstance(h, ChannelMatrix) or h.h_k is None:
            raise ValueError("wideband gain needs a per-subcarrier channel")
        y = np.einsum("rw,krt,tf->kfw", w_beams.conj(), h.h_k, f_beams)
        return np.mean(np.abs(y) ** 2, axis=0)
    mat = _as_matrix(h)
    if mat.shape != (w_beams.shape[0], f_beams.shape[0]):
        raise ValueError(f"dimension mismatch: H {mat.shape}, w {w_beams.shape[0]}, f {f_beams.shape[0]}")
    return np.abs(f_beams.T @ mat.T @ w_beams.conj()) ** 2


def beamforming_gain(h: ChannelMatrix | np.ndarray, f: np.ndarray, w: np.ndarray,
                     wideband: bool = False) -> float:
    """``|w^H H f|^2``, or its mean over subcarriers when ``wideband``."""
    f = np.asarray(f).reshape(-1, 1)
    w = np.asarray(w).reshape(-1, 1)
    return float(gain_matrix(h, f, w, wideband)[0, 0])


# -- link budget -----------------------------------------------------------

@dataclass(frozen=True)
class LinkBudget:
    tx_dbm: float = -10.0
    noise_dbm: float = -102.0
    snr_thr_db: float = 10.0
    pair_time_us: float = 62.5
    numerology: int = 4

    def __post_init__(self):
        if not math.isfinite(self.snr_thr_db):
            raise ValueError("SNR threshold must be finite")
        if self.pair_time_us <= 0:
            raise ValueError("single-pair test time must be positive")

    @property
    def pair_time(self) -> float:
        return self.pair_time_us / 1e6

    @property
    def subcarrier_spacing(self) -> float:
        return subcarrier_spacing(self.numerology)


def snr_db(gain: float, lb: LinkBudget) -> float:
    if gain < 0:
        raise ValueError("gain must be non-negative")
    if gain == 0:
        return -math.inf
    return lb.tx_dbm + 10.0 * math.log10(gain) - lb.noise_dbm


def write_channel_csv(h: ChannelMatrix | np.ndarray, path: str | Path) -> None:
    """Dump a channel matrix as rows of interleaved (re, im) values."""
    mat = _as_matrix(h)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        for row in mat:
            wr.writerow([f"{v:.17g}" for z in row for v in (z.real, z.imag)])
