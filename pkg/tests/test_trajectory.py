import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from echopose import trajectory as traj
from echopose.errors import ScenarioError
from echopose.geometry import SPEED_OF_SOUND, HeadGeometry, mic_distances

SPEAKER = np.zeros(3)
POS = traj.grid_position(0.0, 0.8)


def test_grid_position_convention():
    p = traj.grid_position(0.5, 1.0, 0.2)
    np.testing.assert_allclose(p, [0.5, -1.0, 0.2])


def test_facing_pose_has_zero_gaze():
    from echopose.geometry import gaze_angles

    pose = traj.facing_pose(np.array([0.3, -1.2, 0.1]), SPEAKER)
    gy, gp = gaze_angles(pose.position[None, :], np.array([pose.yaw]),
                         np.array([pose.pitch]), SPEAKER)
    assert abs(gy[0]) < 1e-9 and abs(gp[0]) < 1e-9


@pytest.mark.parametrize("builder", [
    lambda: traj.neutral_task(POS, SPEAKER),
    lambda: traj.forward_back_task(POS, SPEAKER),
    lambda: traj.yaw_sweep_task(POS, SPEAKER),
    lambda: traj.pitch_sweep_task(POS, SPEAKER),
    lambda: traj.zigzag_task(POS, SPEAKER),
    lambda: traj.random_motion_task(POS, SPEAKER, duration=8.0, seed=4),
    lambda: traj.constant_radial_task(SPEAKER, 1.4, 0.5, 1.6),
])
def test_builders_respect_validity_limits(builder):
    t = builder()
    t.validate()  # raises on range or angular-speed violation
    assert t.duration > 0


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_random_walk_always_valid(seed):
    t = traj.random_motion_task(POS, SPEAKER, duration=10.0, seed=seed,
                                yaw_range=70.0, pitch_range=30.0)
    t.validate()


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_gaze_scripts_always_valid(seed):
    rng = np.random.default_rng(seed)
    fixes = [(rng.uniform(-60, 60), rng.uniform(-25, 25), 1.0) for _ in range(5)]
    traj.gaze_script(POS, fixes, seed=seed).validate()


def test_out_of_range_trajectory_rejected():
    with pytest.raises(ScenarioError):
        traj.Trajectory([traj.Hold(traj.HeadPose(POS, 95.0, 0.0), 1.0)]).validate()


def test_calibration_pose_places_left_mic_at_standoff():
    g = HeadGeometry()
    pose = traj.calibration_pose(SPEAKER, g, standoff=0.002)
    d = mic_distances(g, pose, SPEAKER)
    assert d[0] == pytest.approx(0.002, abs=1e-12)
    assert d[1] == pytest.approx(0.002 + g.d_e, abs=1e-12)
    assert d[2] == pytest.approx(np.hypot(0.002 + g.d_e, g.d_b), abs=1e-12)


def test_calibration_prefix_is_continuous():
    g = HeadGeometry()
    task = traj.neutral_task(POS, SPEAKER)
    full = traj.with_calibration_prefix(task, SPEAKER, g, hold_s=4.0, transition_s=2.0)
    full.validate()
    assert full.duration == pytest.approx(task.duration + 6.0)
    # pose right after the transition equals the task start pose
    a = full.pose_at(6.0)
    b = task.pose_at(0.0)
    np.testing.assert_allclose(a.position, b.position, atol=1e-9)
    assert a.yaw == pytest.approx(b.yaw, abs=1e-9)


def test_constant_radial_speed():
    t = traj.constant_radial_task(SPEAKER, 1.4, 0.5, 1.6)
    times = np.linspace(0.1, 1.5, 50)
    pos, _, _ = t.sample(times)
    d = np.linalg.norm(pos - SPEAKER, axis=1)
    rates = np.diff(d) / np.diff(times)
    np.testing.assert_allclose(rates, -0.5, atol=1e-9)


def test_activity_signatures_differ():
    sigs = {}
    for label in traj.ACTIVITY_LABELS:
        t = traj.activity_task(label, SPEAKER, seed=0)
        t.validate()
        times = np.linspace(0, t.duration, 200)
        pos, yaw, pitch = t.sample(times)
        d = np.linalg.norm(pos - SPEAKER, axis=1)
        sigs[label] = (np.ptp(d), np.ptp(yaw), np.ptp(pitch))
    assert sigs["push-up"][0] > 0.3          # large distance swing
    assert sigs["body twist"][1] > 60.0      # large yaw swing
    assert sigs["bird dog"][2] > 25.0        # pitch dominates
    assert sigs["arm"][0] < 0.25 and sigs["arm"][1] < 35.0


def test_trajectory_clamps_outside_domain():
    t = traj.neutral_task(POS, SPEAKER, duration=2.0)
    early = t.pose_at(-1.0)
    late = t.pose_at(99.0)
    np.testing.assert_allclose(early.position, late.position)
