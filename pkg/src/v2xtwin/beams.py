"""Blockage detection and beam-handover search policies.

Three policies share one primitive, an argmax of ``|w^H H f|^2`` over a
subset of BS beams ``F_sub`` times VE beams ``W_sub``:

* exhaustive search over the full codebooks;
* the 5G NR gradient search, restricted to the ``K``-neighbourhood (in DFT
  index steps) of the BS beam from the last successful training, with the
  full VE codebook;
* the digital-twin aided search, restricted to beams matched to the
  strongest propagation paths predicted by the twin.

The cost of a search is ``T * |F_sub| * |W_sub|``. Ties between equal gains
are broken by the lowest (BS index, VE index) pair.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from decimal import Decimal
from typing import Sequence

import numpy as np

from .mimo import ChannelMatrix, Codebook, LinkBudget, gain_matrix, snr_db
from .raytrace import PathSet, PropPath

logger = logging.getLogger(__name__)

CONNECTED = "connected"
BLOCKED = "blocked"


@dataclass(frozen=True)
class BeamState:
    f_index: int
    w_index: int
    snr_db: float = math.inf
    status: str = CONNECTED


@dataclass(frozen=True)
class SearchResult:
    f_index: int
    w_index: int
    gain: float
    snr_db: float
    pairs_tested: int
    t_train: float
    f_subset: tuple[int, ...] = ()
    w_subset: tuple[int, ...] = ()
    policy: str = ""

    @property
    def pair(self) -> tuple[int, int]:
        return self.f_index, self.w_index

    def contains(self, f_index: int, w_index: int) -> bool:
        return f_index in self.f_subset and w_index in self.w_subset


@dataclass(frozen=True)
class Exhaustive:
    @property
    def name(self) -> str:
        return "exhaustive"


@dataclass(frozen=True)
class GradientNR:
    K: int = 2

    def __post_init__(self):
        if self.K < 2 or self.K % 2:
            raise ValueError(f"K must be even and >= 2, got {self.K}")

    @property
    def name(self) -> str:
        return f"nr_k{self.K}"


@dataclass(frozen=True)
class DTAided:
    P: int = 3
    r: int = 1
    angle_noise_std: float = 0.0

    def __post_init__(self):
        if self.P < 1:
            raise ValueError("P must be >= 1")
        if self.r < 0:
            raise ValueError("r must be >= 0")
        if self.angle_noise_std < 0:
            raise ValueError("angle noise must be non-negative")

    @property
    def name(self) -> str:
        return "dt_aided"


Policy = Exhaustive | GradientNR | DTAided


def detect_blockage(snr: float, lb: LinkBudget) -> bool:
    """Blocked iff the SNR is strictly below the threshold (boundary is connected)."""
    return snr < lb.snr_thr_db


def training_time(n_f: int, n_w: int, T: float) -> float:
    """``T * n_f * n_w`` in seconds, computed in decimal so 62.5 us x 72 is exactly 4.5 ms."""
    if n_f < 1 or n_w < 1:
        raise ValueError("beam counts must be >= 1")
    return float(Decimal(repr(float(T))) * n_f * n_w)


def subset_search(h: ChannelMatrix | np.ndarray, F: Codebook, W: Codebook,
                  f_subset: Sequence[int], w_subset: Sequence[int], lb: LinkBudget,
                  policy: str = "", wideband: bool = False) -> SearchResult:
    f_subset = tuple(sorted(set(int(i) for i in f_subset)))
    w_subset = tuple(sorted(set(int(i) for i in w_subset)))
    if not f_subset or not w_subset:
        raise ValueError("search subsets must be non-empty")
    gains = gain_matrix(h, F.beams[:, list(f_subset)], W.beams[:, list(w_subset)], wideband)
    # argmax returns the first maximum in C order: lowest f, then lowest w
    fi, wi = np.unravel_index(int(np.argmax(gains)), gains.shape)
    gain = float(gains[fi, wi])
    n = len(f_subset) * len(w_subset)
    return SearchResult(
        f_index=f_subset[fi], w_index=w_subset[wi], gain=gain, snr_db=snr_db(gain, lb),
        pairs_tested=n, t_train=training_time(len(f_subset), len(w_subset), lb.pair_time),
        f_subset=f_subset, w_subset=w_subset, policy=policy,
    )


def exhaustive_search(h, F: Codebook, W: Codebook, lb: LinkBudget, wideband: bool = False) -> SearchResult:
    if len(F) == 0 or len(W) == 0:
        raise ValueError("codebooks must be non-empty")
    return subset_search(h, F, W, range(len(F)), range(len(W)), lb, "exhaustive", wideband)


def _neighbourhood(cb: Codebook, i_az: int, i_el: int, r_az: int, r_el: int) -> list[int]:
    n_az, n_el = cb.shape
    az = range(max(0, i_az - r_az), min(n_az - 1, i_az + r_az) + 1)
    el = range(max(0, i_el - r_el), min(n_el - 1, i_el + r_el) + 1)
    return [cb.flat_index(a, e) for a in az for e in el]


def gradient_subset(state: BeamState, K: int, bs_codebook: Codebook) -> list[int]:
    """BS beams within ``K/2`` index steps of the last best beam on both axes.

    ``k = -K/2 .. K/2`` gives ``K + 1`` candidates per axis before clipping
    at the codebook edges.
    """
    if K < 2 or K % 2:
        raise ValueError(f"K must be even and >= 2, got {K}")
    i_az, i_el = bs_codebook.grid_index(state.f_index)
    return _neighbourhood(bs_codebook, i_az, i_el, K // 2, K // 2)


def nr_gradient_search(h, F: Codebook, W: Codebook, state: BeamState, K: int,
                       lb: LinkBudget, wideband: bool = False) -> SearchResult:
    return subset_search(h, F, W, gradient_subset(state, K, F), range(len(W)), lb,
                         f"nr_k{K}", wideband)


def _perturbed(paths: Sequence[PropPath], std: float, rng_seed) -> list[tuple[tuple, tuple]]:
    angles = [(p.dod, p.doa) for p in paths]
    if std <= 0:
        return angles
    rng = np.random.default_rng(rng_seed)
    noise = rng.normal(0.0, std, size=(len(paths), 4))
    return [((dod[0] + n[0], dod[1] + n[1]), (doa[0] + n[2], doa[1] + n[3]))
            for (dod, doa), n in zip(angles, noise)]


def dt_subset(dt_paths: PathSet | Sequence[PropPath], bs_codebook: Codebook, ve_codebook: Codebook,
              P: int, r: int, angle_noise_std: float = 0.0, rng_seed=None) -> tuple[list[int], list[int]]:
    """Beam subsets around the beams matched to the ``P`` strongest twin paths."""
    if P < 1:
        raise ValueError("P must be >= 1")
    plist = list(dt_paths.paths if isinstance(dt_paths, PathSet) else dt_paths)
    if not plist:
        logger.warning("digital twin has no paths: falling back to full codebooks")
        return list(range(len(bs_codebook))), list(range(len(ve_codebook)))
    plist = sorted(plist, key=lambda p: -abs(p.complex_gain))[:P]
    f_sub: set[int] = set()
    w_sub: set[int] = set()
    for dod, doa in _perturbed(plist, angle_noise_std, rng_seed):
        fb = bs_codebook.nearest_beam(*dod)
        wb = ve_codebook.nearest_beam(*doa)
        f_sub.update(_neighbourhood(bs_codebook, *bs_codebook.grid_index(fb), r, r))
        w_sub.update(_neighbourhood(ve_codebook, *ve_codebook.grid_index(wb), r, r))
    return sorted(f_sub), sorted(w_sub)


def dt_aided_search(h_true, dt_paths, F: Codebook, W: Codebook, cfg: DTAided, lb: LinkBudget,
                    rng_seed=None, wideband: bool = False) -> SearchResult:
    f_sub, w_sub = dt_subset(dt_paths, F, W, cfg.P, cfg.r, cfg.angle_noise_std, rng_seed)
    return subset_search(h_true, F, W, f_sub, w_sub, lb, cfg.name, wideband)


def gain_ratio_db(result_a: SearchResult, result_b: SearchResult) -> float:
    """``10 log10(gain_a / gain_b)``; +inf when ``gain_b`` is zero."""
    if result_b.gain == 0:
        return math.inf if result_a.gain > 0 else 0.0
    if result_a.gain == 0:
        return -math.inf
    return 10.0 * math.log10(result_a.gain / result_b.gain)


def state_from(result: SearchResult) -> BeamState:
    return BeamState(result.f_index, result.w_index, result.snr_db, CONNECTED)


def next_state(state: BeamState, result: SearchResult, lb: LinkBudget) -> BeamState:
    """Adopt the searched pair on success; keep the old pair (marked blocked) on failure."""
    if detect_blockage(result.snr_db, lb):
        return BeamState(state.f_index, state.w_index, state.snr_db, BLOCKED)
    return state_from(result)


def run_policy(policy: Policy, h, F: Codebook, W: Codebook, state: BeamState | None,
               lb: LinkBudget, dt_paths=None, rng_seed=None, wideband: bool = False) -> SearchResult:
    if isinstance(policy, Exhaustive) or state is None:
        res = exhaustive_search(h, F, W, lb, wideband)
        return res if isinstance(policy, Exhaustive) else replace(res, policy=policy.name)
    if isinstance(policy, GradientNR):
        return nr_gradient_search(h, F, W, state, policy.K, lb, wideband)
    if isinstance(policy, DTAided):
        return dt_aided_search(h, dt_paths if dt_paths is not None else (), F, W, policy, lb,
                               rng_seed, wideband)
    raise TypeError(f"unknown policy {policy!r}")

