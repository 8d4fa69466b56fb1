"""Scene geometry, vehicle actors and frame-by-frame mobility.

World frame is right-handed with ``z`` up, lengths in meters and angles in
radians. Objects are convex polyhedra (or single planar faces) described by
a vertex array and faces given as counter-clockwise vertex loops seen from
outside, so that face normals point outward.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .propagation import Material

#: Absolute tolerance (m) for point-on-face and segment-intersection tests.
GEOM_EPS = 1e-9

OBJECT_CLASSES = frozenset({
    "building", "vehicle-body", "vehicle-window", "vehicle-bumper",
    "vehicle-rim", "vehicle-tire", "fence", "lamp-post", "ground",
})
VEHICLE_CLASSES = frozenset(c for c in OBJECT_CLASSES if c.startswith("vehicle-"))


class TrajectoryRangeError(ValueError):
    """Requested time lies outside the span covered by a trajectory."""


def wrap_angle(a: float) -> float:
    """Map an angle to the interval (-pi, pi]."""
    w = math.remainder(a, 2.0 * math.pi)
    if w == -math.pi:
        w = math.pi
    return w


def rotation_matrix(yaw: float, pitch: float = 0.0, roll: float = 0.0) -> np.ndarray:
    """Body-to-world rotation ``Rz(yaw) @ Ry(pitch) @ Rx(roll)``."""
    cy, sy = math.cos(yaw), math.sin(yaw)
    cp, sp = math.cos(pitch), math.sin(pitch)
    cr, sr = math.cos(roll), math.sin(roll)
    rz = np.array([[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]])
    ry = np.array([[cp, 0.0, sp], [0.0, 1.0, 0.0], [-sp, 0.0, cp]])
    rx = np.array([[1.0, 0.0, 0.0], [0.0, cr, -sr], [0.0, sr, cr]])
    return rz @ ry @ rx


@dataclass(frozen=True)
class Pose:
    position: tuple[float, float, float] = (0.0, 0.0, 0.0)
    yaw: float = 0.0
    pitch: float = 0.0
    roll: float = 0.0
    velocity: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "position", tuple(float(x) for x in self.position))
        object.__setattr__(self, "velocity", tuple(float(x) for x in self.velocity))
        for name in ("yaw", "pitch", "roll"):
            object.__setattr__(self, name, wrap_angle(float(getattr(self, name))))

    @property
    def pos(self) -> np.ndarray:
        return np.array(self.position)

    @property
    def vel(self) -> np.ndarray:
        return np.array(self.velocity)

    def rotation(self) -> np.ndarray:
        return rotation_matrix(self.yaw, self.pitch, self.roll)

    def transform(self, pts: np.ndarray) -> np.ndarray:
        """Map body-frame points (N, 3) into the world frame."""
        return np.asarray(pts, dtype=float) @ self.rotation().T + self.pos


# -- geometry ----------------------------------------------------------------

def _newell_normal(verts: np.ndarray) -> np.ndarray:
    nxt = np.roll(verts, -1, axis=0)
    n = np.array([
        np.sum((verts[:, 1] - nxt[:, 1]) * (verts[:, 2] + nxt[:, 2])),
        np.sum((verts[:, 2] - nxt[:, 2]) * (verts[:, 0] + nxt[:, 0])),
        np.sum((verts[:, 0] - nxt[:, 0]) * (verts[:, 1] + nxt[:, 1])),
    ])
    norm = np.linalg.norm(n)
    if norm == 0:
        raise ValueError("degenerate face (zero area)")
    return n / norm


@dataclass(frozen=True, eq=False)
class SceneObject:
    """Convex polyhedron or planar polygon with one material."""

    id: str
    cls: str
    material: Material
    vertices: np.ndarray
    faces: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        if self.cls not in OBJECT_CLASSES:
            raise ValueError(f"object {self.id!r}: unknown class {self.cls!r}")
        verts = np.asarray(self.vertices, dtype=float)
        verts.setflags(write=False)
        object.__setattr__(self, "vertices", verts)
        object.__setattr__(self, "faces", tuple(tuple(int(i) for i in f) for f in self.faces))
        if not self.faces:
            raise ValueError(f"object {self.id!r} has no faces")
        scale = max(1.0, float(np.abs(verts).max()))
        for k, f in enumerate(self.faces):
            if len(f) < 3:
                raise ValueError(f"object {self.id!r} face {k}: fewer than 3 vertices")
            fv = verts[list(f)]
            n = _newell_normal(fv)
            dev = np.abs((fv - fv[0]) @ n).max()
            if dev > GEOM_EPS * scale:
                raise ValueError(f"object {self.id!r} face {k}: not planar (deviation {dev:.3g} m)")
        if len(self.faces) > 1:
            centroid = verts.mean(axis=0)
            for k, f in enumerate(self.faces):
                fv = verts[list(f)]
                n = _newell_normal(fv)
                if (centroid - fv[0]) @ n > GEOM_EPS * scale:
                    raise ValueError(f"object {self.id!r} face {k}: normal points inward")

    def edges(self) -> list[tuple[int, int, tuple[int, ...]]]:
        """Unique edges as (i, j, adjacent face indices), i < j, in stable order."""
        adj: dict[tuple[int, int], list[int]] = {}
        for k, f in enumerate(self.faces):
            for a, b in zip(f, f[1:] + f[:1]):
                key = (min(a, b), max(a, b))
                adj.setdefault(key, []).append(k)
        return [(i, j, tuple(fs)) for (i, j), fs in sorted(adj.items())]


def box(id: str, cls: str, material: Material, center: Sequence[float],
        size: Sequence[float], yaw: float = 0.0) -> SceneObject:
    """Axis-aligned box (size = lx, ly, lz) rotated by ``yaw`` about its center."""
    lx, ly, lz = (float(s) / 2.0 for s in size)
    if min(lx, ly, lz) <= 0:
        raise ValueError(f"box {id!r}: sizes must be positive")
    local = np.array([
        [-lx, -ly, -lz], [lx, -ly, -lz], [lx, ly, -lz], [-lx, ly, -lz],
        [-lx, -ly, lz], [lx, -ly, lz], [lx, ly, lz], [-lx, ly, lz],
    ])
    verts = local @ rotation_matrix(yaw).T + np.asarray(center, dtype=float)
    faces = (
        (0, 3, 2, 1),  # bottom (-z)
        (4, 5, 6, 7),  # top (+z)
        (0, 1, 5, 4),  # -y
        (2, 3, 7, 6),  # +y
        (1, 2, 6, 5),  # +x
        (3, 0, 4, 7),  # -x
    )
    return SceneObject(id, cls, material, verts, faces)


def prism(id: str, cls: str, material: Material, base: Sequence[Sequence[float]],
          z_min: float, z_max: float) -> SceneObject:
    """Vertical extrusion of a convex polygon given in the xy-plane."""
    base = np.asarray(base, dtype=float)
    n = len(base)
    if n < 3 or not z_max > z_min:
        raise ValueError(f"prism {id!r}: need >= 3 base points and z_max > z_min")
    signed_area = 0.5 * np.sum(base[:, 0] * np.roll(base[:, 1], -1) - np.roll(base[:, 0], -1) * base[:, 1])
    if signed_area < 0:
        base = base[::-1]
    verts = np.vstack([np.column_stack([base, np.full(n, z_min)]),
                       np.column_stack([base, np.full(n, z_max)])])
    faces = [tuple(range(n - 1, -1, -1)), tuple(range(n, 2 * n))]
    for i in range(n):
        j = (i + 1) % n
        faces.append((i, j, n + j, n + i))
    return SceneObject(id, cls, material, verts, tuple(faces))


def polygon(id: str, cls: str, material: Material, verts: Sequence[Sequence[float]]) -> SceneObject:
    """Single planar face; its front side follows the counter-clockwise winding."""
    verts = np.asarray(verts, dtype=float)
    return SceneObject(id, cls, material, verts, (tuple(range(len(verts))),))


# -- trajectories -------------------------------------------------------------

@dataclass(frozen=True)
class WaypointTrajectory:
    times: tuple[float, ...]
    poses: tuple[Pose, ...]

    def __post_init__(self):
        object.__setattr__(self, "times", tuple(float(t) for t in self.times))
        object.__setattr__(self, "poses", tuple(self.poses))
        if len(self.times) != len(self.poses) or not self.times:
            raise ValueError("waypoint trajectory needs matching, non-empty times and poses")
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise ValueError("waypoint timestamps must be strictly increasing")

    @property
    def span(self) -> tuple[float, float]:
        return self.times[0], self.times[-1]


@dataclass(frozen=True)
class BicycleTrajectory:
    """Rear-axle kinematic bicycle driven by a piecewise-constant control schedule."""

    initial: Pose
    wheelbase: float
    controls: tuple[tuple[float, float, float], ...]
    t_end: float
    dt: float = 1e-3

    def __post_init__(self):
        ctrl = tuple((float(t), float(v), float(d)) for t, v, d in self.controls)
        object.__setattr__(self, "controls", ctrl)
        if not ctrl:
            raise ValueError("bicycle trajectory needs at least one control entry")
        if any(b[0] <= a[0] for a, b in zip(ctrl, ctrl[1:])):
            raise ValueError("control timestamps must be strictly increasing")
        if any(v < 0 for _, v, _ in ctrl):
            raise ValueError("speeds must be non-negative")
        if any(abs(d) >= math.pi / 2 for _, _, d in ctrl):
            raise ValueError("steering angle magnitude must be below pi/2")
        if self.wheelbase <= 0 or self.dt <= 0:
            raise ValueError("wheelbase and dt must be positive")
        if self.t_end < ctrl[0][0]:
            raise ValueError("t_end precedes the first control")

    @property
    def span(self) -> tuple[float, float]:
        return self.controls[0][0], float(self.t_end)

    def control_at(self, t: float) -> tuple[float, float]:
        i = bisect.bisect_right([c[0] for c in self.controls], t + 1e-12) - 1
        _, v, d = self.controls[max(i, 0)]
        return v, d


Trajectory = WaypointTrajectory | BicycleTrajectory


def bicycle_step(state: Pose, v: float, delta: float, L: float, dt: float) -> Pose:
    """One explicit-Euler step of the rear-axle kinematic bicycle model."""
    if L <= 0 or dt <= 0:
        raise ValueError("wheelbase and dt must be positive")
    if abs(delta) >= math.pi / 2:
        raise ValueError("steering angle magnitude must be below pi/2")
    if v == 0:
        return state
    x, y, z = state.position
    psi = state.yaw
    x += v * math.cos(psi) * dt
    y += v * math.sin(psi) * dt
    psi += v / L * math.tan(delta) * dt
    return Pose((x, y, z), psi, state.pitch, state.roll,
                (v * math.cos(psi), v * math.sin(psi), 0.0))


def _lerp_angle(a: float, b: float, alpha: float) -> float:
    return wrap_angle(a + alpha * wrap_angle(b - a))


def pose_at(traj: Trajectory, t: float) -> Pose:
    t0, t1 = traj.span
    if not (t0 - 1e-12 <= t <= t1 + 1e-12):
        raise TrajectoryRangeError(f"t={t} outside trajectory span [{t0}, {t1}]")
    if isinstance(traj, WaypointTrajectory):
        return _waypoint_pose(traj, t)
    return _bicycle_pose(traj, t)


def _waypoint_pose(traj: WaypointTrajectory, t: float) -> Pose:
    times, poses = traj.times, traj.poses
    if len(times) == 1:
        p = poses[0]
        return Pose(p.position, p.yaw, p.pitch, p.roll, (0.0, 0.0, 0.0))
    i = bisect.bisect_right(times, t) - 1
    i = min(max(i, 0), len(times) - 2)
    ta, tb = times[i], times[i + 1]
    pa, pb = poses[i], poses[i + 1]
    vel = tuple((np.array(pb.position) - np.array(pa.position)) / (tb - ta))
    if t == ta or t == tb:
        p = pa if t == ta else pb
        return Pose(p.position, p.yaw, p.pitch, p.roll, vel)
    alpha = (t - ta) / (tb - ta)
    pos = tuple(np.array(pa.position) + alpha * (np.array(pb.position) - np.array(pa.position)))
    return Pose(pos, _lerp_angle(pa.yaw, pb.yaw, alpha), _lerp_angle(pa.pitch, pb.pitch, alpha),
                _lerp_angle(pa.roll, pb.roll, alpha), vel)


def _bicycle_pose(traj: BicycleTrajectory, t: float) -> Pose:
    t0 = traj.span[0]
    elapsed = max(t - t0, 0.0)
    n = int(math.floor(elapsed / traj.dt + 1e-9))
    rest = elapsed - n * traj.dt
    state = traj.initial
    v, d = traj.control_at(t0)
    state = Pose(state.position, state.yaw, state.pitch, state.roll,
                 (v * math.cos(state.yaw), v * math.sin(state.yaw), 0.0))
    for k in range(n):
        v, d = traj.control_at(t0 + k * traj.dt)
        state = bicycle_step(state, v, d, traj.wheelbase, traj.dt)
    if rest > 1e-12:
        v, d = traj.control_at(t0 + n * traj.dt)
        state = bicycle_step(state, v, d, traj.wheelbase, rest)
    return state


# -- scene -----------------------------------------------------------------

@dataclass(frozen=True)
class Actor:
    id: str
    parts: tuple[SceneObject, ...]
    trajectory: Trajectory

    def __post_init__(self):
        object.__setattr__(self, "parts", tuple(self.parts))
        if not self.parts:
            raise ValueError(f"actor {self.id!r} has no parts")
        for p in self.parts:
            if p.cls not in VEHICLE_CLASSES:
                raise ValueError(f"actor {self.id!r} part {p.id!r}: class {p.cls!r} is not a vehicle class")


@dataclass(frozen=True)
class Antenna:
    """Antenna mount: static world pose, or an offset in an actor's body frame.

    ``yaw``/``pitch`` give the array boresight, relative to the actor heading
    for mounted antennas and in the world frame for static ones.
    """

    id: str
    position: tuple[float, float, float]
    yaw: float = 0.0
    pitch: float = 0.0
    actor: str | None = None


@dataclass(frozen=True)
class Link:
    name: str
    tx: str
    rx: str


@dataclass(frozen=True)
class Scene:
    name: str
    objects: tuple[SceneObject, ...] = ()
    actors: tuple[Actor, ...] = ()
    antennas: tuple[Antenna, ...] = ()
    links: tuple[Link, ...] = ()
    frame_rate: float = 10.0
    duration: float = 1.0

    def __post_init__(self):
        for name in ("objects", "actors", "antennas", "links"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        ids = [o.id for o in self.objects] + [a.id for a in self.actors]
        if len(ids) != len(set(ids)):
            raise ValueError("object and actor ids must be unique")

    @property
    def n_frames(self) -> int:
        return int(math.floor(self.duration * self.frame_rate + 1e-9)) + 1

    def frame_time(self, frame: int) -> float:
        return frame / self.frame_rate

    def antenna(self, antenna_id: str) -> Antenna:
        for a in self.antennas:
            if a.id == antenna_id:
                return a
        raise KeyError(antenna_id)

    def actor(self, actor_id: str) -> Actor:
        for a in self.actors:
            if a.id == actor_id:
                return a
        raise KeyError(actor_id)


# -- snapshots -----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Face:
    object_id: str
    owner: str
    face_index: int
    cls: str
    material: Material
    vertices: np.ndarray
    normal: np.ndarray

    @property
    def key(self) -> str:
        return f"{self.object_id}.{self.face_index}"

    def signed_distance(self, p: np.ndarray) -> float:
        return float((p - self.vertices[0]) @ self.normal)

    def contains(self, p: np.ndarray, eps: float = GEOM_EPS) -> bool:
        """True if ``p`` (assumed on the face plane) lies inside the convex polygon."""
        v = self.vertices
        e = np.roll(v, -1, axis=0) - v
        c = np.cross(e, p - v) @ self.normal
        lengths = np.linalg.norm(e, axis=1)
        return bool(np.all(c >= -eps * lengths))


@dataclass(frozen=True, eq=False)
class Edge:
    object_id: str
    owner: str
    index: int
    p0: np.ndarray
    p1: np.ndarray
    faces: tuple[int, ...]  # snapshot face indices adjacent to the edge

    @property
    def key(self) -> str:
        return f"{self.object_id}.e{self.index}"


class Occlusion(NamedTuple):
    blocked: bool
    face: Face | None = None
    point: np.ndarray | None = None


@dataclass(frozen=True, eq=False)
class SceneSnapshot:
    frame: int
    time: float
    faces: tuple[Face, ...]
    poses: dict[str, Pose] = field(default_factory=dict)
    edges: tuple[Edge, ...] = ()
    _tri_v0: np.ndarray = field(default=None, repr=False)
    _tri_e1: np.ndarray = field(default=None, repr=False)
    _tri_e2: np.ndarray = field(default=None, repr=False)
    _tri_face: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        v0, e1, e2, fidx = [], [], [], []
        for k, f in enumerate(self.faces):
            v = f.vertices
            for i in range(1, len(v) - 1):
                v0.append(v[0])
                e1.append(v[i] - v[0])
                e2.append(v[i + 1] - v[0])
                fidx.append(k)
        shape = (len(v0), 3)
        object.__setattr__(self, "_tri_v0", np.array(v0, dtype=float).reshape(shape))
        object.__setattr__(self, "_tri_e1", np.array(e1, dtype=float).reshape(shape))
        object.__setattr__(self, "_tri_e2", np.array(e2, dtype=float).reshape(shape))
        object.__setattr__(self, "_tri_face", np.array(fidx, dtype=int))
        owners = np.array([f.owner for f in self.faces] or [""], dtype=object)
        objs = np.array([f.object_id for f in self.faces] or [""], dtype=object)
        object.__setattr__(self, "_face_owner", owners)
        object.__setattr__(self, "_face_object", objs)
        object.__setattr__(self, "_mask_cache", {})

    def face_mask(self, ignore: Iterable[str]) -> np.ndarray:
        """Boolean mask over faces whose object id or owner is in ``ignore``."""
        key = frozenset(ignore)
        mask = self._mask_cache.get(key)
        if mask is None:
            if not key or not self.faces:
                mask = np.zeros(len(self.faces), dtype=bool)
            else:
                mask = np.isin(self._face_object, list(key)) | np.isin(self._face_owner, list(key))
            mask.setflags(write=False)
            self._mask_cache[key] = mask
        return mask

    def faces_of(self, object_id: str) -> list[int]:
        return [k for k, f in enumerate(self.faces) if f.object_id == object_id]

    def segment_hits(self, p: np.ndarray, q: np.ndarray, ignore_mask: np.ndarray | None = None,
                     only_mask: np.ndarray | None = None) -> Occlusion:
        if len(self._tri_face) == 0:
            return Occlusion(False)
        p = np.asarray(p, dtype=float)
        q = np.asarray(q, dtype=float)
        d = q - p
        length = float(np.linalg.norm(d))
        if length == 0:
            raise ValueError("segment endpoints coincide")
        tri_ok = np.ones(len(self._tri_face), dtype=bool)
        if ignore_mask is not None:
            tri_ok &= ~ignore_mask[self._tri_face]
        if only_mask is not None:
            tri_ok &= only_mask[self._tri_face]
        if not tri_ok.any():
            return Occlusion(False)
        v0, e1, e2 = self._tri_v0[tri_ok], self._tri_e1[tri_ok], self._tri_e2[tri_ok]
        pvec = np.cross(d, e2)
        det = np.einsum("ij,ij->i", e1, pvec)
        good = np.abs(det) > 1e-14 * np.linalg.norm(e1, axis=1) * np.linalg.norm(e2, axis=1) * length
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = np.where(good, 1.0 / np.where(good, det, 1.0), 0.0)
            tvec = p - v0
            u = np.einsum("ij,ij->i", tvec, pvec) * inv
            qvec = np.cross(tvec, e1)
            v = (qvec @ d) * inv
            s = np.einsum("ij,ij->i", e2, qvec) * inv
        tol = 1e-9
        s_eps = GEOM_EPS / length
        hit = good & (u >= -tol) & (v >= -tol) & (u + v <= 1 + tol) & (s > s_eps) & (s < 1 - s_eps)
        if not hit.any():
            return Occlusion(False)
        idx = np.flatnonzero(hit)
        best = idx[np.argmin(s[idx])]
        face = self.faces[self._tri_face[tri_ok][best]]
        return Occlusion(True, face, p + s[best] * d)


def segment_occluded(p, q, snap: SceneSnapshot, ignore: Iterable[str] = ()) -> Occlusion:
    """Test the open segment (p, q) against every face not owned by ``ignore``.

    Returns the nearest blocking face (as seen from ``p``) when blocked.
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if np.array_equal(p, q):
        raise ValueError("segment endpoints coincide")
    return snap.segment_hits(p, q, snap.face_mask(ignore))


def _object_faces(obj: SceneObject, owner: str, object_id: str, verts: np.ndarray,
                  base_index: int) -> tuple[list[Face], list[Edge]]:
    faces = []
    for k, f in enumerate(obj.faces):
        fv = verts[list(f)]
        fv.setflags(write=False)
        faces.append(Face(object_id, owner, k, obj.cls, obj.material, fv, _newell_normal(fv)))
    edges = [Edge(object_id, owner, n, verts[i].copy(), verts[j].copy(), tuple(base_index + a for a in adj))
             for n, (i, j, adj) in enumerate(obj.edges())]
    return faces, edges


def snapshot(scene: Scene, t: float, frame: int = 0) -> SceneSnapshot:
    """World-frame geometry of ``scene`` at time ``t``."""
    entries = []  # (object id, owner, SceneObject, world vertices)
    for obj in scene.objects:
        entries.append((obj.id, obj.id, obj, obj.vertices))
    poses = {}
    for actor in scene.actors:
        try:
            pose = pose_at(actor.trajectory, t)
        except TrajectoryRangeError as exc:
            raise TrajectoryRangeError(f"actor {actor.id!r}: {exc}") from None
        poses[actor.id] = pose
        for part in actor.parts:
            entries.append((f"{actor.id}/{part.id}", actor.id, part, pose.transform(part.vertices)))
    entries.sort(key=lambda e: e[0])
    faces: list[Face] = []
    edges: list[Edge] = []
    for object_id, owner, obj, verts in entries:
        f, e = _object_faces(obj, owner, object_id, np.asarray(verts, dtype=float), len(faces))
        faces.extend(f)
        edges.extend(e)
    return SceneSnapshot(frame, float(t), tuple(faces), poses, tuple(edges))


def antenna_pose(scene: Scene, snap: SceneSnapshot, antenna_id: str) -> tuple[Pose, str | None]:
    """World pose of an antenna (boresight in yaw/pitch) and its owning actor id."""
    ant = scene.antenna(antenna_id)
    if ant.actor is None:
        return Pose(ant.position, ant.yaw, ant.pitch), None
    body = snap.poses[ant.actor]
    pos = body.transform(np.array([ant.position]))[0]
    return Pose(tuple(pos), body.yaw + ant.yaw, ant.pitch, 0.0, body.velocity), ant.actor
