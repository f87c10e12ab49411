import numpy as np
import pytest

from cosmoforge.lie import Pose3, interpolate
from cosmoforge.sync import (
    SyncedSequence,
    Trial,
    active_robots,
    load_stamped_poses,
    pose_at,
    sample_offsets,
    save_stamped_poses,
    synchronize,
)
from trajectories import circle, random_pose, straight


def test_trial_rejects_bad_stamps():
    with pytest.raises(ValueError, match="strictly increasing"):
        Trial("a", [0.0, 0.0], [Pose3(), Pose3()])
    with pytest.raises(ValueError, match="at least 2"):
        Trial("a", [0.0], [Pose3()])


def test_single_trial_offsets_zero():
    for seed in range(5):
        seq = synchronize([straight("a")], 0, 40.0, seed)
        assert seq.offsets == (0.0,)


def test_sigma_zero_aligns_all_starts():
    trials = [straight("a"), straight("b", dt=0.2), straight("c")]
    seq = synchronize(trials, anchor_index=1, sigma_offset=0.0, rng_seed=3)
    assert seq.offsets == (0.0, 0.0, 0.0)
    assert {seq.window(r)[0] for r in seq.robot_ids} == {0.0}


def test_anchor_offset_exact_and_rebased():
    trials = [straight("a"), straight("b"), straight("c")]
    seq = synchronize(trials, anchor_index=2, sigma_offset=40.0, rng_seed=7)
    assert seq.offsets[2] == 0.0
    assert seq.window("c")[0] == 0.0
    assert seq.window("a")[0] == seq.offsets[0]
    for r in seq.robot_ids:
        assert np.all(np.diff(seq.stamps(r)) > 0)


def test_synchronize_is_deterministic():
    trials = [straight("a"), straight("b"), straight("c")]
    assert synchronize(trials, 0, 40, 11).offsets == synchronize(trials, 0, 40, 11).offsets
    assert synchronize(trials, 0, 40, 11).offsets != synchronize(trials, 0, 40, 12).offsets


def test_synchronize_errors():
    with pytest.raises(ValueError):
        synchronize([], 0)
    with pytest.raises(IndexError):
        synchronize([straight("a")], 1)


def test_offset_sampler_statistics():
    # 3 trials, seed 7: 10 000 re-draws of the non-anchor offsets
    rng = np.random.default_rng(7)
    draws = np.concatenate([sample_offsets(3, 0, 40.0, rng)[1:] for _ in range(5000)])
    assert len(draws) == 10_000
    assert abs(draws.mean()) <= 1.5
    assert abs(draws.std() - 40.0) <= 1.5


def test_offset_variance_flag():
    rng = np.random.default_rng(0)
    draws = sample_offsets(20001, 0, 1600.0, rng, variance=True)[1:]
    assert abs(draws.std() - 40.0) <= 1.5


def test_pose_at_window_rules():
    trial = circle("a", radius=5, laps=0.5, dt=0.5)
    seq = SyncedSequence([trial], [0.0])
    s = seq.stamps("a")
    assert pose_at(seq, "a", s[0]) == trial.poses[0]
    assert pose_at(seq, "a", s[0] - 1e-6) is None
    for t in (s[-1], s[-1] + 0.01, s[-1] + 1e6):
        assert pose_at(seq, "a", t) == trial.poses[-1]
    for k in range(len(s)):
        assert pose_at(seq, "a", s[k]) == trial.poses[k]
    mid = pose_at(seq, "a", 0.5 * (s[3] + s[4]))
    assert mid.isclose(interpolate(trial.poses[3], trial.poses[4], 0.5), 1e-12)
    with pytest.raises(KeyError):
        pose_at(seq, "zz", 0.0)


def test_vectorized_positions_match_pose_at(rng):
    stamps = np.cumsum(rng.uniform(0.05, 0.3, 40))
    poses = [random_pose(rng, max_angle=2.5) for _ in range(40)]
    seq = SyncedSequence([Trial("a", stamps, poses), Trial("b", stamps, poses)], [0.0, 3.0])
    times = np.linspace(-1, stamps[-1] - stamps[0] + 5, 997)
    for r in ("a", "b"):
        got = seq.positions(r, times)
        for t, row in zip(times, got):
            p = pose_at(seq, r, t)
            if p is None:
                assert np.all(np.isnan(row))
            else:
                np.testing.assert_allclose(row, p.translation, atol=1e-9)


def test_active_robots_staggered():
    seq = SyncedSequence([straight("a"), straight("b"), straight("c")], [0.0, 5.0, -3.0])
    assert active_robots(seq, -10) == set()
    assert active_robots(seq, 100) == {"a", "b", "c"}
    assert active_robots(seq, -1) == {"c"}
    assert active_robots(seq, 1) == {"a", "c"}


def test_stamped_pose_text_roundtrip(tmp_path, rng):
    stamps = np.cumsum(rng.uniform(0.1, 0.2, 20))
    poses = [random_pose(rng) for _ in range(20)]
    path = tmp_path / "traj.txt"
    save_stamped_poses(path, stamps, poses)
    with open(path, "a") as fh:
        fh.write("\n# trailing comment\n")
    s2, p2 = load_stamped_poses(path)
    np.testing.assert_array_equal(s2, stamps)
    assert p2 == poses
    trial = Trial.from_file(path, "x")
    assert trial.robot_id == "x" and len(trial) == 20


def test_stamped_pose_bad_line(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("0 1 2 3 1 0 0\n")
    with pytest.raises(ValueError, match="bad.txt:1"):
        load_stamped_poses(path)
