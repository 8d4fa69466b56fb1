"""Scenario files: YAML description of a scene, its actors and its links.

Top-level keys::

    name: str
    frame_rate_hz: float          # default 10
    duration_s: float             # required; frames at 0, 1/rate, ... duration
    materials:                    # optional additions / overrides of the library
      <name>: {eps_r, sigma_coeff, sigma_exp, is_pec}
    objects:                      # static geometry
      - id: str
        class: building | fence | lamp-post | ground | ...
        material: <name>
        # exactly one shape:
        box: {center: [x, y, z], size: [lx, ly, lz], yaw_deg: 0}
        prism: {base: [[x, y], ...], z_min: float, z_max: float}
        polygon: [[x, y, z], ...]          # single face, CCW seen from its front
        mesh: {vertices: [[x, y, z], ...], faces: [[i, j, k, ...], ...]}
    actors:
      - id: str
        parts: [ <object entries in the body frame, vehicle-* classes> ]
        trajectory:
          waypoints: [{t, x, y, z, yaw_deg}, ...]   # or
          csv: file.csv                              # columns t,x,y,z,yaw (rad)
          # or a kinematic bicycle model:
          bicycle:
            initial: {x, y, z, yaw_deg}
            wheelbase: 2.5
            dt: 0.001
            t_end: 10.0
            controls: [{t, v, delta_deg}, ...]       # or controls_csv: t,v,delta (rad)
    antennas:
      <id>: {position: [x, y, z], yaw_deg, pitch_deg}             # static (z defaults to 6 m)
      <id>: {actor: <id>, offset: [x, y, z], yaw_deg, pitch_deg}  # roof mount (z defaults to 1.6 m)
    links:
      - {name: str, tx: <antenna id>, rx: <antenna id>}

Paths of CSV files are relative to the scenario file.
"""

from __future__ import annotations

import csv
import math
from importlib import resources
from pathlib import Path
from typing import Any

import yaml

from .propagation import Material, default_materials
from .scene import (
    Actor, Antenna, BicycleTrajectory, Link, Pose, Scene, SceneObject,
    WaypointTrajectory, box, polygon, prism,
)

DEFAULT_RSU_HEIGHT = 6.0
DEFAULT_ROOF_HEIGHT = 1.6
BUNDLED = ("empty", "single_wall", "truck_blockage")


class ScenarioError(ValueError):
    """Invalid scenario file; the message carries ``file:line``."""


class _Map(dict):
    line = 0
    lines: dict


class _Seq(list):
    line = 0
    lines: list


class _LineLoader(yaml.SafeLoader):
    pass


def _construct_map(loader, node):
    loader.flatten_mapping(node)
    out = _Map()
    out.line = node.start_mark.line + 1
    out.lines = {}
    for k_node, v_node in node.value:
        key = loader.construct_object(k_node, deep=True)
        out[key] = loader.construct_object(v_node, deep=True)
        out.lines[key] = k_node.start_mark.line + 1
    return out


def _construct_seq(loader, node):
    out = _Seq(loader.construct_object(v, deep=True) for v in node.value)
    out.line = node.start_mark.line + 1
    out.lines = [v.start_mark.line + 1 for v in node.value]
    return out


_LineLoader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _construct_map)
_LineLoader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_SEQUENCE_TAG, _construct_seq)


class _Parser:
    def __init__(self, source: str, base_dir: Path):
        self.source = source
        self.base_dir = base_dir
        self.materials: dict[str, Material] = default_materials()

    def fail(self, node: Any, msg: str, key: Any = None) -> ScenarioError:
        line = 0
        if isinstance(node, _Map):
            line = node.lines.get(key, node.line) if key is not None else node.line
        elif isinstance(node, _Seq):
            line = node.lines[key] if isinstance(key, int) and key < len(node.lines) else node.line
        return ScenarioError(f"{self.source}:{line}: {msg}")

    def get(self, node, key, kind=None, default=..., where=""):
        if not isinstance(node, dict):
            raise self.fail(node, f"{where or 'entry'} must be a mapping")
        if key not in node:
            if default is ...:
                raise self.fail(node, f"{where + ': ' if where else ''}missing required key {key!r}")
            return default
        val = node[key]
        if kind is float:
            if isinstance(val, bool) or not isinstance(val, (int, float)):
                raise self.fail(node, f"{key!r} must be a number", key)
            return float(val)
        if kind is int:
            if isinstance(val, bool) or not isinstance(val, int):
                raise self.fail(node, f"{key!r} must be an integer", key)
            return val
        if kind is str:
            if not isinstance(val, str):
                raise self.fail(node, f"{key!r} must be a string", key)
        if kind is list and not isinstance(val, list):
            raise self.fail(node, f"{key!r} must be a list", key)
        if kind is dict and not isinstance(val, dict):
            raise self.fail(node, f"{key!r} must be a mapping", key)
        return val

    def vec(self, node, key, n, default=...):
        val = self.get(node, key, list, default)
        if val is default and default is not ...:
            return val
        if not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in val):
            raise self.fail(node, f"{key!r} must contain numbers", key)
        if isinstance(n, tuple) and len(val) not in n or isinstance(n, int) and len(val) != n:
            raise self.fail(node, f"{key!r} must have {n} components", key)
        return [float(x) for x in val]

    # -- sections -------------------------------------------------------

    def parse_materials(self, node):
        if node is None:
            return
        if not isinstance(node, dict):
            raise self.fail(node, "'materials' must map names to parameters")
        for name, rec in node.items():
            if not isinstance(rec, dict):
                raise self.fail(node, f"material {name!r} must be a mapping", name)
            try:
                self.materials[name] = Material(
                    name=str(name),
                    eps_r=self.get(rec, "eps_r", float, 1.0),
                    sigma_coeff=self.get(rec, "sigma_coeff", float, 0.0),
                    sigma_exp=self.get(rec, "sigma_exp", float, 0.0),
                    is_pec=bool(self.get(rec, "is_pec", None, False)),
                    approximate=bool(self.get(rec, "approximate", None, False)),
                )
            except ValueError as exc:
                if isinstance(exc, ScenarioError):
                    raise
                raise self.fail(node, str(exc), name) from None

    def parse_object(self, node, where) -> SceneObject:
        oid = self.get(node, "id", str, where=where)
        cls = self.get(node, "class", str, where=where)
        mname = self.get(node, "material", str, where=where)
        if mname not in self.materials:
            raise self.fail(node, f"unknown material {mname!r}", "material")
        mat = self.materials[mname]
        shapes = [k for k in ("box", "prism", "polygon", "mesh") if k in node]
        if len(shapes) != 1:
            raise self.fail(node, f"object {oid!r} needs exactly one of box/prism/polygon/mesh")
        kind = shapes[0]
        spec = node[kind]
        try:
            if kind == "box":
                return box(oid, cls, mat, self.vec(spec, "center", 3), self.vec(spec, "size", 3),
                           math.radians(self.get(spec, "yaw_deg", float, 0.0)))
            if kind == "prism":
                base = self.get(spec, "base", list)
                return prism(oid, cls, mat, base, self.get(spec, "z_min", float),
                             self.get(spec, "z_max", float))
            if kind == "polygon":
                return polygon(oid, cls, mat, spec)
            return SceneObject(oid, cls, mat, self.get(spec, "vertices", list),
                               self.get(spec, "faces", list))
        except ScenarioError:
            raise
        except (ValueError, TypeError) as exc:
            raise self.fail(node, str(exc), kind) from None

    def read_csv(self, node, key, columns) -> list[list[float]]:
        rel = self.get(node, key, str)
        path = (self.base_dir / rel).resolve()
        try:
            with open(path, newline="") as fh:
                reader = csv.DictReader(fh)
                if reader.fieldnames is None or any(c not in reader.fieldnames for c in columns):
                    raise self.fail(node, f"{rel}: expected columns {','.join(columns)}", key)
                rows = []
                for lineno, row in enumerate(reader, start=2):
                    try:
                        rows.append([float(row[c]) for c in columns])
                    except (TypeError, ValueError):
                        raise ScenarioError(f"{path}:{lineno}: non-numeric value") from None
                return rows
        except OSError as exc:
            raise self.fail(node, f"cannot read {rel}: {exc.strerror}", key) from None

    def parse_trajectory(self, node):
        try:
            if "waypoints" in node:
                wps = self.get(node, "waypoints", list)
                times, poses = [], []
                for wp in wps:
                    times.append(self.get(wp, "t", float))
                    poses.append(Pose((self.get(wp, "x", float), self.get(wp, "y", float),
                                       self.get(wp, "z", float, 0.0)),
                                      math.radians(self.get(wp, "yaw_deg", float, 0.0))))
                return WaypointTrajectory(times, poses)
            if "csv" in node:
                rows = self.read_csv(node, "csv", ("t", "x", "y", "z", "yaw"))
                return WaypointTrajectory([r[0] for r in rows],
                                          [Pose((r[1], r[2], r[3]), r[4]) for r in rows])
            if "bicycle" in node:
                spec = self.get(node, "bicycle", dict)
                init = self.get(spec, "initial", dict)
                initial = Pose((self.get(init, "x", float), self.get(init, "y", float),
                                self.get(init, "z", float, 0.0)),
                               math.radians(self.get(init, "yaw_deg", float, 0.0)))
                if "controls_csv" in spec:
                    controls = [tuple(r) for r in self.read_csv(spec, "controls_csv", ("t", "v", "delta"))]
                else:
                    controls = [(self.get(c, "t", float), self.get(c, "v", float),
                                 math.radians(self.get(c, "delta_deg", float, 0.0)))
                                for c in self.get(spec, "controls", list)]
                return BicycleTrajectory(initial, self.get(spec, "wheelbase", float), controls,
                                         self.get(spec, "t_end", float), self.get(spec, "dt", float, 1e-3))
        except ScenarioError:
            raise
        except ValueError as exc:
            raise self.fail(node, str(exc)) from None
        raise self.fail(node, "trajectory needs one of waypoints/csv/bicycle")

    def parse_antennas(self, node) -> list[Antenna]:
        if not isinstance(node, dict):
            raise self.fail(node, "'antennas' must map ids to mounts")
        out = []
        for aid, spec in node.items():
            if not isinstance(spec, dict):
                raise self.fail(node, f"antenna {aid!r} must be a mapping", aid)
            yaw = math.radians(self.get(spec, "yaw_deg", float, 0.0))
            pitch = math.radians(self.get(spec, "pitch_deg", float, 0.0))
            if "actor" in spec:
                off = self.vec(spec, "offset", (2, 3), [0.0, 0.0])
                if len(off) == 2:
                    off = off + [DEFAULT_ROOF_HEIGHT]
                out.append(Antenna(str(aid), tuple(off), yaw, pitch, self.get(spec, "actor", str)))
            else:
                pos = self.vec(spec, "position", (2, 3))
                if len(pos) == 2:
                    pos = pos + [DEFAULT_RSU_HEIGHT]
                out.append(Antenna(str(aid), tuple(pos), yaw, pitch))
        return out

    def parse(self, doc) -> Scene:
        if not isinstance(doc, dict):
            raise ScenarioError(f"{self.source}:1: scenario must be a mapping")
        self.parse_materials(doc.get("materials"))
        objects = [self.parse_object(o, "object") for o in self.get(doc, "objects", list, [])]
        actors = []
        for a in self.get(doc, "actors", list, []):
            aid = self.get(a, "id", str, where="actor")
            parts = [self.parse_object(p, f"actor {aid!r} part") for p in self.get(a, "parts", list)]
            traj = self.parse_trajectory(self.get(a, "trajectory", dict))
            try:
                actors.append(Actor(aid, parts, traj))
            except ValueError as exc:
                raise self.fail(a, str(exc)) from None
        antennas = self.parse_antennas(self.get(doc, "antennas", dict, {}))
        ant_ids = {a.id for a in antennas}
        actor_ids = {a.id for a in actors}
        ants_node = doc.get("antennas", {})
        for a in antennas:
            if a.actor is not None and a.actor not in actor_ids:
                raise self.fail(ants_node, f"antenna {a.id!r} mounted on unknown actor {a.actor!r}", a.id)
        links = []
        links_node = self.get(doc, "links", list, [])
        for i, ln in enumerate(links_node):
            link = Link(self.get(ln, "name", str), self.get(ln, "tx", str), self.get(ln, "rx", str))
            for end in (link.tx, link.rx):
                if end not in ant_ids:
                    raise self.fail(links_node, f"link {link.name!r} references unknown antenna {end!r}", i)
            links.append(link)
        rate = self.get(doc, "frame_rate_hz", float, 10.0)
        duration = self.get(doc, "duration_s", float)
        if rate <= 0 or duration < 0:
            raise self.fail(doc, "frame_rate_hz must be positive and duration_s non-negative")
        try:
            scene = Scene(self.get(doc, "name", str, "scenario"), objects, actors, antennas,
                          links, rate, duration)
        except ValueError as exc:
            raise ScenarioError(f"{self.source}:{doc.line}: {exc}") from None
        # every actor must cover every frame
        for actor in actors:
            t0, t1 = actor.trajectory.span
            if t0 > 1e-12 or t1 < scene.frame_time(scene.n_frames - 1) - 1e-12:
                node = next(a for a in doc["actors"] if a.get("id") == actor.id)
                raise self.fail(node, f"actor {actor.id!r}: trajectory span [{t0}, {t1}] "
                                      f"does not cover [0, {duration}]", "trajectory")
        return scene


def loads_scenario(text: str, source: str = "<string>", base_dir: str | Path = ".") -> Scene:
    try:
        doc = yaml.load(text, Loader=_LineLoader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark else 0
        raise ScenarioError(f"{source}:{line}: YAML syntax error: {exc}") from None
    return _Parser(source, Path(base_dir)).parse(doc)


def load_scenario(path: str | Path) -> Scene:
    path = Path(path)
    return loads_scenario(path.read_text(), str(path), path.parent)


def bundled_scenario_path(name: str) -> Path:
    if name not in BUNDLED:
        raise KeyError(f"unknown bundled scenario {name!r}; choose from {BUNDLED}")
    return Path(str(resources.files("v2xtwin").joinpath(f"scenarios/{name}.yaml")))


def resolve_scenario(ref: str | Path) -> Path:
    """Accept a file path or the name of a bundled scenario."""
    p = Path(ref)
    if p.exists():
        return p
    if str(ref) in BUNDLED:
        return bundled_scenario_path(str(ref))
    raise FileNotFoundError(f"scenario {ref!r} not found")
