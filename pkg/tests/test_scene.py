import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from v2xtwin.propagation import PEC, Material
from v2xtwin.scene import (
    Actor, Antenna, BicycleTrajectory, Link, Pose, Scene, SceneObject, TrajectoryRangeError,
    WaypointTrajectory, antenna_pose, bicycle_step, box, polygon, pose_at, prism, rotation_matrix,
    segment_occluded, snapshot, wrap_angle,
)

CONCRETE = Material("concrete", 5.24, 0.0462, 0.7822)


def unit_cube(id_="cube", center=(0.0, 0.0, 0.0)):
    return box(id_, "building", CONCRETE, center, (1.0, 1.0, 1.0))


def static_scene(*objects):
    return Scene("t", objects=objects)


class TestPose:
    def test_angles_wrapped(self):
        p = Pose(yaw=3 * math.pi)
        assert p.yaw == pytest.approx(math.pi)
        assert wrap_angle(-math.pi) == math.pi

    def test_yaw_quarter_turn(self):
        p = Pose((1.0, 2.0, 0.0), yaw=math.pi / 2)
        out = p.transform(np.array([[1.0, 0.0, 0.0]]))[0]
        assert out == pytest.approx([1.0, 3.0, 0.0], abs=1e-12)

    @given(st.floats(-4, 4), st.floats(-1.5, 1.5), st.floats(-4, 4))
    def test_rotation_orthonormal(self, yaw, pitch, roll):
        R = rotation_matrix(yaw, pitch, roll)
        assert np.allclose(R @ R.T, np.eye(3), atol=1e-12)
        assert np.linalg.det(R) == pytest.approx(1.0, abs=1e-12)

    @given(st.tuples(*[st.floats(-50, 50)] * 3), st.tuples(*[st.floats(-50, 50)] * 3),
           st.floats(-4, 4), st.floats(-1.5, 1.5))
    def test_transform_preserves_distance(self, a, b, yaw, pitch):
        pose = Pose((3.0, -2.0, 1.0), yaw, pitch)
        pa, pb = pose.transform(np.array([a, b]))
        assert np.linalg.norm(pa - pb) == pytest.approx(np.linalg.norm(np.subtract(a, b)), abs=1e-9)


class TestGeometry:
    def test_box_faces_outward(self):
        b = unit_cube()
        assert len(b.faces) == 6
        assert len(b.edges()) == 12

    def test_inward_face_rejected(self):
        b = unit_cube()
        flipped = (tuple(reversed(b.faces[0])),) + b.faces[1:]
        with pytest.raises(ValueError, match="inward"):
            SceneObject("x", "building", CONCRETE, b.vertices, flipped)

    def test_non_planar_rejected(self):
        with pytest.raises(ValueError, match="planar"):
            polygon("p", "fence", CONCRETE, [[0, 0, 0], [1, 0, 0], [1, 1, 0.5], [0, 1, 0]])

    def test_unknown_class(self):
        with pytest.raises(ValueError, match="class"):
            box("b", "tree", CONCRETE, (0, 0, 0), (1, 1, 1))

    def test_prism_orientation_independent(self):
        sq = [[0, 0], [1, 0], [1, 1], [0, 1]]
        a = prism("a", "building", CONCRETE, sq, 0, 2)
        b = prism("b", "building", CONCRETE, sq[::-1], 0, 2)
        assert len(a.faces) == len(b.faces) == 6

    def test_actor_rejects_static_class(self):
        traj = WaypointTrajectory((0.0,), (Pose(),))
        with pytest.raises(ValueError):
            Actor("a", (unit_cube(),), traj)


class TestWaypoints:
    traj = WaypointTrajectory((0.0, 1.0), (Pose((0, 0, 0)), Pose((10, 0, 0), yaw=0.5)))

    def test_midpoint(self):
        p = pose_at(self.traj, 0.5)
        assert p.position == pytest.approx((5, 0, 0))
        assert p.yaw == pytest.approx(0.25)
        assert p.velocity == pytest.approx((10, 0, 0))

    def test_knots_exact(self):
        assert pose_at(self.traj, 0.0).position == (0.0, 0.0, 0.0)
        assert pose_at(self.traj, 1.0).position == (10.0, 0.0, 0.0)

    def test_out_of_range(self):
        with pytest.raises(TrajectoryRangeError):
            pose_at(self.traj, 1.5)

    def test_yaw_takes_short_way(self):
        tr = WaypointTrajectory((0.0, 1.0), (Pose(yaw=math.pi - 0.1), Pose(yaw=-math.pi + 0.1)))
        assert abs(pose_at(tr, 0.5).yaw) == pytest.approx(math.pi)

    def test_non_increasing_times(self):
        with pytest.raises(ValueError):
            WaypointTrajectory((0.0, 0.0), (Pose(), Pose()))


class TestBicycle:
    def test_straight_step(self):
        s = bicycle_step(Pose(), 1.0, 0.0, 2.5, 1.0)
        assert s.position == pytest.approx((1, 0, 0))
        assert s.yaw == 0.0

    def test_heading_rate(self):
        s = bicycle_step(Pose(), 0.4, math.atan(0.25), 1.0, 1.0)
        assert s.yaw == pytest.approx(0.1, abs=1e-12)
        assert s.position == pytest.approx((0.4, 0, 0))

    def test_zero_speed(self):
        p = Pose((1, 2, 3), 0.3)
        assert bicycle_step(p, 0.0, 0.2, 2.0, 0.1) is p

    def test_bad_steering(self):
        with pytest.raises(ValueError):
            bicycle_step(Pose(), 1.0, math.pi / 2, 2.0, 0.1)

    def test_straight_trajectory(self):
        tr = BicycleTrajectory(Pose(), 2.8, [(0.0, 5.0, 0.0)], 2.0, 0.01)
        assert pose_at(tr, 2.0).position == pytest.approx((10, 0, 0), abs=1e-9)
        assert pose_at(tr, 1.005).position == pytest.approx((5.025, 0, 0), abs=1e-9)

    def test_schedule_switch(self):
        tr = BicycleTrajectory(Pose(), 2.8, [(0.0, 5.0, 0.0), (1.0, 0.0, 0.0)], 3.0, 0.01)
        assert pose_at(tr, 3.0).position == pytest.approx((5, 0, 0), abs=1e-9)

    @settings(max_examples=15, deadline=None)
    @given(st.floats(2.0, 15.0), st.floats(0.05, 0.4))
    def test_circle_closes(self, v, delta):
        L = 2.8
        R = L / math.tan(delta)
        period = 2 * math.pi * R / v
        dt = period / 20000
        tr = BicycleTrajectory(Pose(), L, [(0.0, v, delta)], period, dt)
        end = pose_at(tr, period)
        assert math.dist(end.position, (0, 0, 0)) <= 1e-3 * R
        assert abs(wrap_angle(end.yaw)) <= 1e-3


class TestOcclusion:
    def test_cube_blocks_at_near_face(self):
        snap = snapshot(static_scene(unit_cube()), 0.0)
        occ = segment_occluded([-2, 0, 0], [2, 0, 0], snap)
        assert occ.blocked
        assert occ.point == pytest.approx([-0.5, 0, 0])
        assert occ.face.normal == pytest.approx([-1, 0, 0])

    def test_ignore_owner(self):
        snap = snapshot(static_scene(unit_cube()), 0.0)
        assert not segment_occluded([-2, 0, 0], [2, 0, 0], snap, ignore={"cube"}).blocked

    def test_clear_segment(self):
        snap = snapshot(static_scene(unit_cube()), 0.0)
        assert not segment_occluded([-2, 2, 0], [2, 2, 0], snap).blocked

    def test_endpoint_on_face_is_not_blocked(self):
        snap = snapshot(static_scene(unit_cube()), 0.0)
        assert not segment_occluded([-0.5, 0, 0], [-3, 0, 0], snap).blocked

    def test_coincident_endpoints(self):
        snap = snapshot(static_scene(unit_cube()), 0.0)
        with pytest.raises(ValueError):
            segment_occluded([1, 1, 1], [1, 1, 1], snap)

    @settings(max_examples=100)
    @given(st.tuples(*[st.floats(-3, 3)] * 3), st.tuples(*[st.floats(-3, 3)] * 3))
    def test_symmetric(self, p, q):
        if math.dist(p, q) < 1e-3:
            return
        snap = snapshot(static_scene(unit_cube(), unit_cube("c2", (1.5, 1.0, 0.0))), 0.0)
        assert segment_occluded(p, q, snap).blocked == segment_occluded(q, p, snap).blocked


class TestSnapshot:
    def _scene(self):
        body = box("body", "vehicle-body", PEC, (0, 0, 0.75), (4, 2, 1.5))
        traj = WaypointTrajectory((0.0, 1.0), (Pose((0, 0, 0)), Pose((10, 0, 0))))
        return Scene("s", objects=(unit_cube("b", (0, 10, 0)),), actors=(Actor("car", (body,), traj),),
                     antennas=(Antenna("rsu", (0, 5, 6)), Antenna("roof", (0, 0, 1.6), yaw=math.pi / 2, actor="car")),
                     links=(Link("l", "rsu", "roof"),), frame_rate=10, duration=1.0)

    def test_actor_moves(self):
        sc = self._scene()
        snap = snapshot(sc, 0.5, 5)
        body_faces = [f for f in snap.faces if f.owner == "car"]
        assert len(body_faces) == 6
        xs = np.vstack([f.vertices for f in body_faces])[:, 0]
        assert xs.min() == pytest.approx(3.0) and xs.max() == pytest.approx(7.0)

    def test_antenna_mount(self):
        sc = self._scene()
        snap = snapshot(sc, 0.5, 5)
        pose, owner = antenna_pose(sc, snap, "roof")
        assert owner == "car"
        assert pose.position == pytest.approx((5, 0, 1.6))
        assert pose.yaw == pytest.approx(math.pi / 2)
        assert pose.velocity == pytest.approx((10, 0, 0))
        pose, owner = antenna_pose(sc, snap, "rsu")
        assert owner is None and pose.position == (0, 5, 6)

    def test_frames(self):
        sc = self._scene()
        assert sc.n_frames == 11
        assert sc.frame_time(3) == pytest.approx(0.3)

    def test_deterministic(self):
        sc = self._scene()
        a, b = snapshot(sc, 0.3), snapshot(sc, 0.3)
        assert [f.key for f in a.faces] == [f.key for f in b.faces]
        for fa, fb in zip(a.faces, b.faces):
            assert np.array_equal(fa.vertices, fb.vertices)

    def test_range_error_names_actor(self):
        with pytest.raises(TrajectoryRangeError, match="car"):
            snapshot(self._scene(), 2.0)

    def test_duplicate_ids(self):
        with pytest.raises(ValueError):
            Scene("d", objects=(unit_cube("x"), unit_cube("x", (3, 0, 0))))
