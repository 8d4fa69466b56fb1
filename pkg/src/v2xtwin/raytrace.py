"""Deterministic geometric ray tracing inside a scene snapshot.

Supported propagation mechanisms are line of sight, specular reflections up
to fourth order (image method) and single knife-edge diffraction over the
silhouette edges of objects that obstruct the direct segment. Antennas are
isotropic; directivity enters later through array synthesis.

Angles follow the world frame: azimuth ``atan2(y, x)`` and elevation above
the horizontal plane. The DoD is the direction of the first segment leaving
Tx; the DoA points from Rx back along the last segment (where the wave comes
from). Doppler is positive when endpoint motion shortens the path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .propagation import (
    C0, complex_permittivity, fresnel_coeffs, free_space_amplitude,
    fresnel_nu, knife_edge_loss, wavelength,
)
from .scene import GEOM_EPS, Face, Pose, SceneSnapshot

MAX_REFLECTIONS_CAP = 4


@dataclass(frozen=True)
class TraceConfig:
    carrier: float = 28e9
    max_reflections: int = 2
    enable_diffraction: bool = True
    min_power_db_rel: float = 40.0
    polarization: str = "perpendicular"

    def __post_init__(self):
        if not 0 <= self.max_reflections <= MAX_REFLECTIONS_CAP:
            raise ValueError(f"max_reflections must lie in [0, {MAX_REFLECTIONS_CAP}]")
        if self.polarization not in ("perpendicular", "parallel"):
            raise ValueError(f"unknown polarization {self.polarization!r}")
        if self.carrier <= 0:
            raise ValueError("carrier must be positive")

    @property
    def wavelength(self) -> float:
        return wavelength(self.carrier)


@dataclass(frozen=True)
class Interaction:
    kind: str  # "L" line of sight, "R" reflection, "D" diffraction
    ref: str = ""

    @property
    def code(self) -> str:
        return self.kind if not self.ref else f"{self.kind}:{self.ref}"


LOS = Interaction("L")


def direction_angles(u: np.ndarray) -> tuple[float, float]:
    """(azimuth, elevation) in radians of a direction vector."""
    u = np.asarray(u, dtype=float)
    u = u / np.linalg.norm(u) + 0.0  # drop signed zeros so azimuth stays in (-pi, pi]
    return math.atan2(u[1], u[0]), math.asin(max(-1.0, min(1.0, u[2]))) + 0.0


def angles_to_unit(az: float, el: float) -> np.ndarray:
    return np.array([math.cos(el) * math.cos(az), math.cos(el) * math.sin(az), math.sin(el)])


@dataclass(frozen=True, eq=False)
class PropPath:
    vertices: np.ndarray
    interactions: tuple[Interaction, ...]
    complex_gain: complex
    delay: float
    dod: tuple[float, float]
    doa: tuple[float, float]
    doppler: float = 0.0
    nu: float | None = None

    @property
    def length(self) -> float:
        return float(np.sum(np.linalg.norm(np.diff(self.vertices, axis=0), axis=1)))

    @property
    def n_interactions(self) -> int:
        return sum(1 for i in self.interactions if i.kind != "L")

    @property
    def codes(self) -> str:
        return ";".join(i.code for i in self.interactions)

    @property
    def power_db(self) -> float:
        a = abs(self.complex_gain)
        return 20.0 * math.log10(a) if a > 0 else -math.inf

    @property
    def is_los(self) -> bool:
        return self.interactions == (LOS,)

    @property
    def kinds(self) -> str:
        return "".join(i.kind for i in self.interactions)

    def with_doppler(self, doppler: float) -> "PropPath":
        return PropPath(self.vertices, self.interactions, self.complex_gain, self.delay,
                        self.dod, self.doa, doppler, self.nu)


@dataclass(frozen=True, eq=False)
class PathSet:
    tx: Pose
    rx: Pose
    time: float
    paths: tuple[PropPath, ...] = field(default_factory=tuple)

    def __len__(self):
        return len(self.paths)

    def __iter__(self):
        return iter(self.paths)

    @property
    def has_los(self) -> bool:
        return any(p.is_los for p in self.paths)

    def top(self, n: int) -> "PathSet":
        return PathSet(self.tx, self.rx, self.time, self.paths[:n])


def _make_path(verts: Sequence[np.ndarray], interactions, coeff: complex, lam: float, nu=None) -> PropPath:
    verts = np.array(verts, dtype=float)
    seg = np.diff(verts, axis=0)
    length = float(np.sum(np.linalg.norm(seg, axis=1)))
    gain = free_space_amplitude(length, lam) * coeff * np.exp(-2j * math.pi * length / lam)
    return PropPath(
        vertices=verts,
        interactions=tuple(interactions),
        complex_gain=complex(gain),
        delay=length / C0,
        dod=direction_angles(seg[0]),
        doa=direction_angles(-seg[-1]),
        nu=nu,
    )


def _ignore_for(owner: str | None) -> tuple[str, ...]:
    return (owner,) if owner else ()


def trace_los(tx: Pose, rx: Pose, snap: SceneSnapshot, cfg: TraceConfig | None = None,
              tx_owner: str | None = None, rx_owner: str | None = None) -> PropPath | None:
    cfg = cfg or TraceConfig()
    p, q = tx.pos, rx.pos
    if np.array_equal(p, q):
        raise ValueError("tx and rx positions coincide")
    mask = snap.face_mask(_ignore_for(tx_owner) + _ignore_for(rx_owner))
    if snap.segment_hits(p, q, mask).blocked:
        return None
    return _make_path([p, q], (LOS,), 1.0, cfg.wavelength)


class _FaceTable:
    """Vectorised plane data for the faces that may reflect on a link."""

    def __init__(self, snap: SceneSnapshot, exclude_owners: Iterable[str]):
        excl = set(exclude_owners)
        self.snap = snap
        self.index = [k for k, f in enumerate(snap.faces) if f.owner not in excl]
        faces = [snap.faces[k] for k in self.index]
        self.normals = np.array([f.normal for f in faces]).reshape(-1, 3)
        self.offsets = np.array([f.normal @ f.vertices[0] for f in faces])
        self.objects = [f.object_id for f in faces]
        self.single_face = [len(snap.faces_of(o)) == 1 for o in self.objects] if faces else []

    def __len__(self):
        return len(self.index)

    def face(self, i: int) -> Face:
        return self.snap.faces[self.index[i]]


class _ReflectionTracer:
    def __init__(self, tx, rx, snap: SceneSnapshot, cfg: TraceConfig, tx_owner, rx_owner):
        self.tx, self.rx = tx.pos, rx.pos
        self.snap, self.cfg = snap, cfg
        self.lam = cfg.wavelength
        self.tx_owner, self.rx_owner = tx_owner, rx_owner
        self.table = _FaceTable(snap, [o for o in (tx_owner, rx_owner) if o])
        self.eps_cache: dict[str, complex | None] = {}
        self.paths: list[PropPath] = []

    def _eps(self, face: Face):
        m = face.material
        if m.name not in self.eps_cache:
            self.eps_cache[m.name] = None if m.is_pec else complex_permittivity(m, self.cfg.carrier)
        return self.eps_cache[m.name]

    def run(self) -> list[PropPath]:
        if len(self.table) and self.cfg.max_reflections >= 1:
            self._descend([], [self.tx])
        return self.paths

    def _descend(self, seq: list[int], images: list[np.ndarray]):
        t = self.table
        src = images[-1]
        s = t.normals @ src - t.offsets
        for k in np.flatnonzero(s > GEOM_EPS):
            k = int(k)
            if seq:
                last = seq[-1]
                if k == last:
                    continue
                # two faces of one convex body cannot be hit consecutively from outside
                if t.objects[k] == t.objects[last] and not t.single_face[k]:
                    continue
            image = src - 2.0 * s[k] * t.normals[k]
            seq.append(k)
            images.append(image)
            self._backtrace(seq, images)
            if len(seq) < self.cfg.max_reflections:
                self._descend(seq, images)
            seq.pop()
            images.pop()

    def _backtrace(self, seq: list[int], images: list[np.ndarray]):
        t = self.table
        n = len(seq)
        points = [None] * n
        nxt = self.rx
        for i in range(n - 1, -1, -1):
            k = seq[i]
            nrm, off = t.normals[k], t.offsets[k]
            s_next = nrm @ nxt - off
            if s_next <= GEOM_EPS:
                return
            img = images[i + 1]
            s_img = nrm @ img - off
            frac = s_next / (s_next - s_img)
            p = nxt + frac * (img - nxt)
            if not t.face(k).contains(p):
                return
            points[i] = p
            nxt = p
        verts = [self.tx] + points + [self.rx]
        seg_lengths = [np.linalg.norm(b - a) for a, b in zip(verts, verts[1:])]
        if min(seg_lengths) <= GEOM_EPS:
            return
        objs = [None] + [t.objects[k] for k in seq] + [None]
        last_seg = len(verts) - 2
        for j in range(len(verts) - 1):
            ignore = {o for o in (objs[j], objs[j + 1]) if o}
            if j == 0 and self.tx_owner:
                ignore.add(self.tx_owner)
            if j == last_seg and self.rx_owner:
                ignore.add(self.rx_owner)
            if self.snap.segment_hits(verts[j], verts[j + 1], self.snap.face_mask(ignore)).blocked:
                return
        coeff = 1.0 + 0j
        for i, k in enumerate(seq):
            face = t.face(k)
            d_in = (verts[i + 1] - verts[i]) / seg_lengths[i]
            cos_i = min(1.0, abs(float(d_in @ face.normal)))
            theta = math.acos(cos_i)
            if theta >= math.pi / 2:
                return
            coeff *= fresnel_coeffs(self._eps(face), theta).select(self.cfg.polarization)
        inter = tuple(Interaction("R", t.face(k).key) for k in seq)
        self.paths.append(_make_path(verts, inter, coeff, self.lam))


def trace_reflections(tx: Pose, rx: Pose, snap: SceneSnapshot, cfg: TraceConfig | None = None,
                      tx_owner: str | None = None, rx_owner: str | None = None) -> list[PropPath]:
    """Specular paths up to ``cfg.max_reflections`` bounces via the image method.

    Faces of the objects carrying the antennas never act as reflectors.
    """
    cfg = cfg or TraceConfig()
    if cfg.max_reflections == 0:
        return []
    return _ReflectionTracer(tx, rx, snap, cfg, tx_owner, rx_owner).run()


def _min_detour_point(p0, p1, a_pt, b_pt):
    edge = p1 - p0
    elen = float(np.linalg.norm(edge))
    e = edge / elen
    a = float((a_pt - p0) @ e)
    b = float((b_pt - p0) @ e)
    r1 = float(np.linalg.norm(a_pt - p0 - a * e))
    r2 = float(np.linalg.norm(b_pt - p0 - b * e))
    if r1 + r2 == 0:
        return None
    t = a + (b - a) * r1 / (r1 + r2)
    return p0 + min(max(t, 0.0), elen) * e


def _is_silhouette(snap: SceneSnapshot, edge, point: np.ndarray) -> bool:
    if len(edge.faces) < 2:
        return True
    fa, fb = (snap.faces[k] for k in edge.faces[:2])
    return (fa.signed_distance(point) > GEOM_EPS) != (fb.signed_distance(point) > GEOM_EPS)


def trace_diffraction(tx: Pose, rx: Pose, snap: SceneSnapshot, cfg: TraceConfig | None = None,
                      tx_owner: str | None = None, rx_owner: str | None = None) -> list[PropPath]:
    """Single knife-edge paths over silhouette edges of objects blocking the direct segment."""
    cfg = cfg or TraceConfig()
    if not cfg.enable_diffraction:
        return []
    lam = cfg.wavelength
    p, q = tx.pos, rx.pos
    los = q - p
    dist = float(np.linalg.norm(los))
    u = los / dist
    owners = {o for o in (tx_owner, rx_owner) if o}
    obstructing = []
    for obj in dict.fromkeys(f.object_id for f in snap.faces):
        face_ids = snap.faces_of(obj)
        if snap.faces[face_ids[0]].owner in owners:
            continue
        only = np.zeros(len(snap.faces), dtype=bool)
        only[face_ids] = True
        if snap.segment_hits(p, q, only_mask=only).blocked:
            obstructing.append(obj)
    paths = []
    for obj in obstructing:
        mask = snap.face_mask(owners | {obj})
        for edge in snap.edges:
            if edge.object_id != obj:
                continue
            if not (_is_silhouette(snap, edge, p) and _is_silhouette(snap, edge, q)):
                continue
            pt = _min_detour_point(edge.p0, edge.p1, p, q)
            if pt is None:
                continue
            along = float((pt - p) @ u)
            if not (GEOM_EPS < along < dist - GEOM_EPS):
                continue
            h = float(np.linalg.norm(pt - p - along * u))
            nu = fresnel_nu(h, along, dist - along, lam)
            if snap.segment_hits(p, pt, mask).blocked or snap.segment_hits(pt, q, mask).blocked:
                continue
            coeff = 10.0 ** (-knife_edge_loss(nu) / 20.0)
            paths.append(_make_path([p, pt, q], (Interaction("D", edge.key),), coeff, lam, nu=nu))
    return paths


def doppler_shift(path: PropPath, v_tx, v_rx, lam: float) -> float:
    """Endpoint-motion Doppler in Hz, positive for a shortening path."""
    seg = np.diff(path.vertices, axis=0)
    if len(seg) < 1:
        raise ValueError("path has no segment")
    u_first = seg[0] / np.linalg.norm(seg[0])
    u_last = seg[-1] / np.linalg.norm(seg[-1])
    return float((np.asarray(v_tx, dtype=float) @ u_first - np.asarray(v_rx, dtype=float) @ u_last) / lam)


def _sort_key(path: PropPath):
    return (-abs(path.complex_gain), path.delay, path.codes)


def trace_all(tx: Pose, rx: Pose, snap: SceneSnapshot, cfg: TraceConfig | None = None,
              v_tx=None, v_rx=None, tx_owner: str | None = None,
              rx_owner: str | None = None) -> PathSet:
    """All supported paths between ``tx`` and ``rx``, pruned and sorted by power."""
    cfg = cfg or TraceConfig()
    v_tx = tx.vel if v_tx is None else np.asarray(v_tx, dtype=float)
    v_rx = rx.vel if v_rx is None else np.asarray(v_rx, dtype=float)
    paths = []
    los = trace_los(tx, rx, snap, cfg, tx_owner, rx_owner)
    if los is not None:
        paths.append(los)
    paths += trace_reflections(tx, rx, snap, cfg, tx_owner, rx_owner)
    paths += trace_diffraction(tx, rx, snap, cfg, tx_owner, rx_owner)
    if paths:
        strongest = max(p.power_db for p in paths)
        paths = [p for p in paths if p.power_db >= strongest - cfg.min_power_db_rel]
    lam = cfg.wavelength
    paths = [p.with_doppler(doppler_shift(p, v_tx, v_rx, lam)) for p in paths]
    paths.sort(key=_sort_key)
    return PathSet(tx, rx, snap.time, tuple(paths))


PATH_COLUMNS = (
    "frame", "time", "link", "path_id", "n_interactions", "interaction_codes", "power_dBm",
    "phase_rad", "delay_ns", "dod_az_deg", "dod_el_deg", "doa_az_deg", "doa_el_deg", "doppler_hz",
)


def path_rows(paths: PathSet, frame: int, tx_dbm: float, link: str = "") -> list[dict]:
    """Export rows (one per path) with the Tx power folded into ``power_dBm``."""
    rows = []
    for i, p in enumerate(paths):
        rows.append({
            "frame": frame,
            "time": paths.time,
            "link": link,
            "path_id": i,
            "n_interactions": p.n_interactions,
            "interaction_codes": p.codes,
            "power_dBm": tx_dbm + p.power_db,
            "phase_rad": math.atan2(p.complex_gain.imag, p.complex_gain.real),
            "delay_ns": p.delay * 1e9,
            "dod_az_deg": math.degrees(p.dod[0]),
            "dod_el_deg": math.degrees(p.dod[1]),
            "doa_az_deg": math.degrees(p.doa[0]),
            "doa_el_deg": math.degrees(p.doa[1]),
            "doppler_hz": p.doppler,
        })
    return rows
