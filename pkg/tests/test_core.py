import numpy as np
import pytest

from ostk import (AgentRecord, Scene, SensorTrajectory, SightMask, TimeWindow,
                  VisualTrajectory, sight_partition, slice_window)
from ostk.errors import CoverageError, ValidationError

from conftest import manual_scene


def make_sensor(n=200, start=0, provenance="noisy"):
    frames = np.arange(start, start + n)
    points = np.stack([frames * 0.1, np.zeros(n), np.full(n, 1.5)], axis=1)
    return SensorTrajectory(frames, points, provenance)


def make_visual(n=200, absent_at=()):
    frames = np.arange(n)
    points = np.stack([frames * 1.0, frames * 2.0], axis=1)
    present = np.ones(n, dtype=bool)
    present[list(absent_at)] = False
    return VisualTrajectory(frames, points, present)


class TestTimeWindow:
    def test_valid(self):
        w = TimeWindow(0, 100, 200)
        assert w.observation_span == 100
        assert w.prediction_span == 100
        assert w.observation_frames()[0] == 0
        assert w.prediction_frames()[-1] == 199

    @pytest.mark.parametrize("args", [(-1, 10, 20), (10, 10, 20), (0, 20, 10)])
    def test_invalid_ordering(self, args):
        with pytest.raises(ValidationError):
            TimeWindow(*args)

    def test_non_integer(self):
        with pytest.raises(ValidationError):
            TimeWindow(0.5, 10, 20)

    def test_zero_prediction_span_allowed(self):
        assert TimeWindow(0, 10, 10).prediction_span == 0


class TestTrajectories:
    def test_sensor_rejects_decreasing_frames(self):
        with pytest.raises(ValidationError):
            SensorTrajectory(np.array([0, 2, 1]), np.zeros((3, 3)), "noisy")

    def test_sensor_rejects_nonfinite(self):
        pts = np.zeros((3, 3))
        pts[1, 1] = np.nan
        with pytest.raises(ValidationError):
            SensorTrajectory(np.arange(3), pts, "noisy")

    def test_sensor_rejects_empty(self):
        with pytest.raises(ValidationError):
            SensorTrajectory(np.array([], dtype=int), np.zeros((0, 3)), "noisy")

    def test_immutable_after_construction(self):
        traj = make_sensor(5)
        with pytest.raises(ValueError):
            traj.points[0, 0] = 99.0

    def test_visual_absent_rows_are_nan(self):
        v = make_visual(5, absent_at=[2])
        assert not v.present[2]
        assert np.isnan(v.points[2]).all()
        assert v.pixel_at(2) is None
        assert v.pixel_at(1).u == 1.0

    def test_visual_absent_pixel_values_ignored_in_equality(self):
        a = make_visual(5, absent_at=[2])
        b = make_visual(5, absent_at=[2])
        assert a == b

    def test_bad_provenance(self):
        with pytest.raises(ValidationError):
            make_sensor(5, provenance="weird")


class TestAgentRecord:
    def test_clean_noisy_frame_mismatch(self):
        with pytest.raises(ValidationError):
            AgentRecord("a", "pedestrian", make_sensor(10),
                        sensor_clean=make_sensor(9, provenance="clean"))

    def test_visual_must_be_subset_of_sensor_frames(self):
        with pytest.raises(ValidationError):
            AgentRecord("a", "pedestrian", make_sensor(5), visual=make_visual(10))

    def test_kind_checked(self):
        with pytest.raises(ValidationError):
            AgentRecord("a", "ghost", make_sensor(5))


class TestSlice:
    def test_observation_segment(self):
        traj = make_sensor(200)
        out = slice_window(traj, TimeWindow(0, 100, 200), "observation")
        assert np.array_equal(out.frames, np.arange(100))
        assert out.provenance == traj.provenance

    def test_prediction_segment(self):
        traj = make_sensor(200)
        out = slice_window(traj, TimeWindow(0, 100, 200), "prediction")
        assert np.array_equal(out.frames, np.arange(100, 200))

    def test_missing_frames_listed(self):
        traj = make_sensor(150)
        with pytest.raises(CoverageError, match="150"):
            slice_window(traj, TimeWindow(0, 100, 200), "prediction")

    def test_bad_segment_name(self):
        with pytest.raises(ValidationError):
            slice_window(make_sensor(10), TimeWindow(0, 5, 10), "future")

    def test_observation_and_prediction_reconstruct_window(self):
        traj = make_sensor(200)
        w = TimeWindow(10, 60, 150)
        obs = slice_window(traj, w, "observation")
        pred = slice_window(traj, w, "prediction")
        merged_frames = np.concatenate([obs.frames, pred.frames])
        merged_points = np.vstack([obs.points, pred.points])
        lo = np.searchsorted(traj.frames, w.t_s)
        hi = np.searchsorted(traj.frames, w.t_p)
        assert np.array_equal(merged_frames, traj.frames[lo:hi])
        assert np.array_equal(merged_points, traj.points[lo:hi])

    def test_visual_slice_keeps_absent_markers(self):
        v = make_visual(20, absent_at=[5])
        out = slice_window(v, TimeWindow(0, 10, 20), "observation")
        assert not out.present[5]


def two_agent_scene(absent_at=()):
    n = 20
    agents = (
        AgentRecord("a", "pedestrian", make_sensor(n), visual=make_visual(n)),
        AgentRecord("b", "pedestrian", make_sensor(n),
                    visual=make_visual(n, absent_at=absent_at)),
    )
    return Scene("s", 10.0, n, agents, (640, 480))


class TestSightPartition:
    def test_full_coverage_means_all_in_sight(self):
        mask = sight_partition(two_agent_scene(), TimeWindow(0, 10, 20))
        assert mask.out_of_sight == frozenset()
        assert mask.in_sight == {"a", "b"}

    def test_single_absent_frame_forces_out_of_sight(self):
        mask = sight_partition(two_agent_scene(absent_at=[5]), TimeWindow(0, 10, 20))
        assert mask.out_of_sight == {"b"}

    def test_absent_outside_window_is_ignored(self):
        mask = sight_partition(two_agent_scene(absent_at=[15]), TimeWindow(0, 10, 20))
        assert mask.out_of_sight == frozenset()

    def test_missing_visual_is_out_of_sight(self):
        n = 20
        agents = (AgentRecord("a", "pedestrian", make_sensor(n), visual=make_visual(n)),
                  AgentRecord("b", "pedestrian", make_sensor(n)))
        mask = sight_partition(Scene("s", 10.0, n, agents, (640, 480)),
                               TimeWindow(0, 10, 20))
        assert mask.out_of_sight == {"b"}

    def test_window_out_of_range(self):
        with pytest.raises(ValidationError):
            sight_partition(two_agent_scene(), TimeWindow(0, 10, 21))

    def test_partition_covers_scene_and_is_order_independent(self):
        scene = two_agent_scene(absent_at=[3])
        reversed_scene = Scene(scene.scene_id, scene.frame_hz, scene.frame_count,
                               tuple(reversed(scene.agents)), scene.image_size)
        w = TimeWindow(0, 10, 20)
        m1 = sight_partition(scene, w)
        m2 = sight_partition(reversed_scene, w)
        assert m1 == m2
        assert m1.in_sight | m1.out_of_sight == set(scene.agent_ids)

    def test_agent_behind_camera_is_out_of_sight(self):
        # camera at origin looks along +x; one agent sits at x = -10
        n = 12
        times = np.arange(n, dtype=float)
        front = np.stack([np.full(n, 10.0), 0.1 * times, np.full(n, 1.5)], axis=1)
        behind = np.stack([np.full(n, -10.0), 0.1 * times, np.full(n, 1.5)], axis=1)
        scene = manual_scene({"front": front, "behind": behind})
        mask = sight_partition(scene, TimeWindow(0, 6, 12))
        assert "behind" in mask.out_of_sight
        assert "front" in mask.in_sight


class TestSceneValidation:
    def test_duplicate_agent_ids(self):
        a = AgentRecord("a", "pedestrian", make_sensor(5), visual=make_visual(5))
        with pytest.raises(ValidationError):
            Scene("s", 10.0, 5, (a, a), (640, 480))

    def test_trajectory_exceeding_frame_range(self):
        a = AgentRecord("a", "pedestrian", make_sensor(10))
        with pytest.raises(ValidationError):
            Scene("s", 10.0, 5, (a,), (640, 480))

    def test_sight_mask_disjointness(self):
        with pytest.raises(ValidationError):
            SightMask(frozenset({"a"}), frozenset({"a"}))
