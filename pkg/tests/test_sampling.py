"""Unit tests for multi-stage temporal sampling.

Stage boundaries and clip contents are checked against brute-force
enumeration; the random mode is checked for support (exact set of reachable
anchors) and roughly uniform frequencies.
"""

import numpy as np
import pytest

from fgcn.errors import ConfigError, DataError
from fgcn.sampling import (SAMPLING_MODES, clip_frame_indices, extract_clip,
                           plan_stage, plan_stages, stage_bounds)


def test_stage_bounds_partition_the_sequence():
    # the stages tile [0, seq_len) exactly, in order, for any lengths
    for seq_len in range(1, 40):
        for stages in range(1, 9):
            covered = []
            prev_end = 0
            for s in range(stages):
                start, end = stage_bounds(seq_len, stages, s)
                assert start == prev_end  # contiguous
                assert start <= end
                covered.extend(range(start, end))
                prev_end = end
            assert covered == list(range(seq_len))


def test_stage_bounds_hand_cases():
    # 10 frames in 3 stages: lengths 3, 3, 4
    assert [stage_bounds(10, 3, s) for s in range(3)] == [(0, 3), (3, 6), (6, 10)]
    # 3 frames in 5 stages: two empty stages appear
    assert [stage_bounds(3, 5, s) for s in range(5)] == \
        [(0, 0), (0, 1), (1, 1), (1, 2), (2, 3)]


def test_clip_frame_indices_cyclic_wrap():
    # stage [4, 7) of length 3, clip of 7 anchored at 5
    idx = clip_frame_indices(4, 3, 5, 7)
    np.testing.assert_array_equal(idx, [5, 6, 4, 5, 6, 4, 5])


def test_clip_frame_indices_empty_stage_repeats_boundary():
    idx = clip_frame_indices(4, 0, 4, 3)
    np.testing.assert_array_equal(idx, [4, 4, 4])


def test_center_mode_offset_formula():
    # slack = length - clip, anchor = start + slack // 2
    for seq_len, stages, clip in [(100, 5, 10), (37, 4, 5), (64, 2, 16)]:
        for s in range(stages):
            start, end = stage_bounds(seq_len, stages, s)
            plan = plan_stage(seq_len, stages, clip, s, mode="center")
            assert plan.offset == start + max(0, (end - start) - clip) // 2
            assert len(plan.frames) == clip
            assert all(start <= f < max(end, start + 1) for f in plan.frames)


def test_exact_fit_offsets():
    # 320 frames, 5 stages, clip 64: no slack, both modes take whole stages
    rng = np.random.default_rng(0)
    for mode in SAMPLING_MODES:
        plans = plan_stages(320, 5, 64, mode=mode, rng=rng)
        assert [p.offset for p in plans] == [0, 64, 128, 192, 256]
        for p in plans:
            np.testing.assert_array_equal(p.frames, np.arange(p.start, p.start + 64))


def test_random_mode_support_is_every_anchor():
    # every anchor in [start, start + slack] appears; nothing else does
    rng = np.random.default_rng(42)
    seq_len, stages, clip = 50, 2, 10
    start, end = stage_bounds(seq_len, stages, 0)
    slack = (end - start) - clip
    seen = {plan_stage(seq_len, stages, clip, 0, "random", rng).offset
            for _ in range(2000)}
    assert seen == set(range(start, start + slack + 1))


def test_random_mode_roughly_uniform():
    rng = np.random.default_rng(7)
    counts = np.zeros(11)  # slack 10 -> 11 anchors
    draws = 4000
    for _ in range(draws):
        plan = plan_stage(20, 1, 10, 0, "random", rng)
        counts[plan.offset] += 1
    expect = draws / 11.0
    # loose 6-sigma binomial bound; the acceptance suite runs the strict one
    sigma = np.sqrt(draws * (1 / 11) * (10 / 11))
    assert np.abs(counts - expect).max() < 6 * sigma


def test_short_stage_random_equals_center():
    # once the stage is shorter than the clip there is no slack left
    rng = np.random.default_rng(3)
    for _ in range(20):
        a = plan_stage(6, 3, 5, 1, "random", rng)
        b = plan_stage(6, 3, 5, 1, "center")
        assert a == b


def test_single_frame_sequence():
    plans = plan_stages(1, 5, 4, mode="center")
    for p in plans:
        assert p.frames == (0, 0, 0, 0)


def test_plan_stages_validation():
    rng = np.random.default_rng(0)
    with pytest.raises(DataError):
        plan_stages(0, 5, 4)
    with pytest.raises(ConfigError):
        plan_stages(10, 0, 4)
    with pytest.raises(ConfigError):
        plan_stages(10, 5, 0)
    with pytest.raises(ConfigError):
        plan_stage(10, 5, 2, 0, mode="sideways")
    with pytest.raises(ConfigError):
        plan_stage(10, 1, 2, 0, mode="random")  # rng required


def test_extract_clip_gathers_frames():
    frames = np.arange(40).reshape(10, 2, 2)  # 10 frames of 2x2 payload
    plan = plan_stage(10, 2, 3, 1, mode="center")
    clip = extract_clip(frames, plan)
    np.testing.assert_array_equal(clip, frames[list(plan.frames)])


def test_plan_is_deterministic_given_rng_state():
    a = plan_stages(33, 4, 6, "random", np.random.default_rng(123))
    b = plan_stages(33, 4, 6, "random", np.random.default_rng(123))
    assert a == b
