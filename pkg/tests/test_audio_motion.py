"""fbank oracle checks and 6D-rotation / BVH round-trips."""

import math

import numpy as np
import pytest

from instrux import errors
from instrux.modality import audio as audio_mod
from instrux.modality import motion as motion_mod


def random_rotation(rng) -> np.ndarray:
    # Rodrigues' formula from a random axis-angle: an independent construction
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = rng.uniform(0, 2 * math.pi)
    k = np.array([[0, -axis[2], axis[1]],
                  [axis[2], 0, -axis[0]],
                  [-axis[1], axis[0], 0]])
    return np.eye(3) + math.sin(angle) * k + (1 - math.cos(angle)) * (k @ k)


class TestFbank:
    def test_silence_frame_count_and_floor(self):
        feats = audio_mod.wave_to_fbank(np.zeros(16000), 16000)
        assert feats.shape == (98, 80)
        assert np.allclose(feats, math.log(1e-10))

    def test_sine_argmax_matches_mel_centers(self):
        sr = 16000
        t = np.arange(sr) / sr
        wave = np.sin(2 * math.pi * 440.0 * t)
        feats = audio_mod.wave_to_fbank(wave, sr)
        centers = audio_mod.mel_filter_centers(sr)
        expected = int(np.argmin(np.abs(centers - 440.0)))
        got = int(np.argmax(feats.mean(axis=0)))
        assert got == expected

    def test_cmvn(self):
        rng = np.random.default_rng(0)
        wave = rng.normal(size=32000)
        feats = audio_mod.wave_to_fbank(wave, 16000, cmvn=True)
        assert np.abs(feats.mean(axis=0)).max() < 1e-5
        assert np.abs(feats.std(axis=0) - 1.0).max() < 1e-3

    def test_too_short(self):
        with pytest.raises(errors.TooShort):
            audio_mod.wave_to_fbank(np.zeros(100), 16000)

    def test_unsupported_rate(self):
        with pytest.raises(ValueError):
            audio_mod.wave_to_fbank(np.zeros(16000), 8000)


class TestSixD:
    def test_identity(self):
        assert np.allclose(motion_mod.rotmat_to_6d(np.eye(3)), [1, 0, 0, 0, 1, 0])

    def test_90_about_z(self):
        rot = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
        assert np.allclose(motion_mod.rotmat_to_6d(rot), [0, 1, 0, -1, 0, 0])

    def test_round_trip_random(self):
        rng = np.random.default_rng(0)
        worst = 0.0
        for _ in range(2000):
            rot = random_rotation(rng)
            back = motion_mod.sixd_to_rotmat(motion_mod.rotmat_to_6d(rot))
            worst = max(worst, np.linalg.norm(rot - back))
        assert worst <= 1e-6

    def test_degenerate_zero(self):
        with pytest.raises(errors.DegenerateInput):
            motion_mod.sixd_to_rotmat([0, 0, 0, 1, 0, 0])

    def test_degenerate_parallel(self):
        with pytest.raises(errors.DegenerateInput):
            motion_mod.sixd_to_rotmat([1, 0, 0, 2, 0, 0])

    def test_non_rotation_rejected(self):
        with pytest.raises(errors.DegenerateInput):
            motion_mod.rotmat_to_6d(np.eye(3) * 2.0)

    def test_euler_matrix_round_trip(self):
        rng = np.random.default_rng(1)
        for _ in range(500):
            z, y, x = rng.uniform(-179, 179, size=3)
            rot = motion_mod.euler_zyx_to_rotmat(z, y, x)
            z2, y2, x2 = motion_mod.rotmat_to_euler_zyx(rot)
            rot2 = motion_mod.euler_zyx_to_rotmat(z2, y2, x2)
            assert np.abs(rot - rot2).max() < 1e-9


def single_joint_bvh(frames: list[list[float]], frame_time=0.0333333) -> str:
    lines = [
        "HIERARCHY",
        "ROOT Hips",
        "{",
        "  OFFSET 0 0 0",
        "  CHANNELS 6 Xposition Yposition Zposition Zrotation Yrotation Xrotation",
        "  End Site",
        "  {",
        "    OFFSET 0 1 0",
        "  }",
        "}",
        "MOTION",
        f"Frames: {len(frames)}",
        f"Frame Time: {frame_time}",
    ]
    lines += [" ".join(str(v) for v in f) for f in frames]
    return "\n".join(lines)


def chain_bvh(frame_rows: list[list[float]], frame_time=0.05) -> str:
    header = """HIERARCHY
ROOT Hips
{
  OFFSET 0 0 0
  CHANNELS 6 Xposition Yposition Zposition Zrotation Yrotation Xrotation
  JOINT Spine
  {
    OFFSET 0 0.5 0
    CHANNELS 3 Zrotation Yrotation Xrotation
    JOINT Head
    {
      OFFSET 0 0.3 0
      CHANNELS 3 Zrotation Yrotation Xrotation
      End Site
      {
        OFFSET 0 0.1 0
      }
    }
  }
}
MOTION
Frames: %d
Frame Time: %f
""" % (len(frame_rows), frame_time)
    return header + "\n".join(" ".join(f"{v}" for v in row) for row in frame_rows)


class TestBvh:
    def test_single_joint_identity_pose(self):
        clip = motion_mod.motion_bvh_to_6d(single_joint_bvh([[0, 0, 0, 0, 0, 0]]))
        assert clip.frames.shape == (1, 12)
        assert np.allclose(clip.frames[0, 3:6], 0.0)
        assert np.allclose(clip.frames[0, 6:12], [1, 0, 0, 0, 1, 0])

    def test_velocity_finite_difference(self):
        ft = 0.1
        clip = motion_mod.motion_bvh_to_6d(single_joint_bvh(
            [[0, 0, 0, 0, 0, 0], [1, 0, 0, 0, 0, 0]], frame_time=ft))
        assert np.allclose(clip.frames[0, 3:6], [0, 0, 0])
        assert np.allclose(clip.frames[1, 3:6], [1 / ft, 0, 0])

    def test_three_joint_round_trip(self):
        rng = np.random.default_rng(2)
        rows = []
        for _ in range(5):
            row = list(rng.uniform(-1, 1, size=3))          # root position
            row += list(rng.uniform(-170, 170, size=9))     # 3 joints x ZYX
            rows.append([float(v) for v in row])
        clip = motion_mod.motion_bvh_to_6d(chain_bvh(rows))
        assert clip.frames.shape == (5, 6 + 6 * 3)
        text2 = motion_mod.motion_6d_to_bvh(clip, clip.skeleton)
        clip2 = motion_mod.motion_bvh_to_6d(text2)
        for f in range(5):
            for j in range(3):
                r1 = motion_mod.sixd_to_rotmat(clip.frames[f, 6 + 6 * j: 12 + 6 * j])
                r2 = motion_mod.sixd_to_rotmat(clip2.frames[f, 6 + 6 * j: 12 + 6 * j])
                assert np.abs(r1 - r2).max() < 1e-4
        assert np.allclose(clip.frames[:, 0:3], clip2.frames[:, 0:3], atol=1e-5)

    def test_bad_bvh(self):
        with pytest.raises(errors.BadBvh):
            motion_mod.motion_bvh_to_6d("HIERARCHY nonsense")
        with pytest.raises(errors.BadBvh):
            motion_mod.motion_bvh_to_6d(
                single_joint_bvh([[0, 0, 0, 0, 0, 0]]).replace(
                    "Zrotation Yrotation Xrotation", "Xrotation Yrotation Zrotation"))
