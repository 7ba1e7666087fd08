"""Multi-stage temporal sampling.

A sequence of ``seq_len`` frames is split into ``num_stages`` contiguous
stages; stage ``s`` covers the half-open frame range
``[floor(s * seq_len / num_stages), floor((s + 1) * seq_len / num_stages))``.
From each stage one fixed-length clip is drawn: centered within the stage in
"center" mode (evaluation), uniformly over all in-stage anchor positions in
"random" mode (training). Stages shorter than the clip are repeated
cyclically; an empty stage degenerates to its boundary frame repeated for
the whole clip.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError

SAMPLING_MODES = ("center", "random")


@dataclass(frozen=True)
class StagePlan:
    """The frames chosen for one stage of one sequence."""

    stage: int
    start: int
    length: int
    offset: int
    frames: tuple


def stage_bounds(seq_len, num_stages, stage):
    """Half-open frame range ``[start, end)`` of one stage."""
    start = (stage * seq_len) // num_stages
    end = ((stage + 1) * seq_len) // num_stages
    return start, end


def clip_frame_indices(start, length, offset, clip_len):
    """Absolute frame indices of a clip anchored at ``offset``.

    Frames advance one at a time from the anchor and wrap around inside the
    stage, so short stages repeat cyclically until the clip is full.
    """
    if length <= 0:
        return np.full(clip_len, start, dtype=np.int64)
    rel = (offset - start + np.arange(clip_len, dtype=np.int64)) % length
    return start + rel


def plan_stage(seq_len, num_stages, clip_len, stage, mode="center", rng=None):
    """Choose the clip for one stage."""
    if mode not in SAMPLING_MODES:
        raise ConfigError(f"unknown sampling mode {mode!r}, expected one of {SAMPLING_MODES}")
    start, end = stage_bounds(seq_len, num_stages, stage)
    length = end - start
    if length <= 0:
        offset = start
    else:
        slack = max(0, length - clip_len)
        if mode == "center":
            offset = start + slack // 2
        else:
            if rng is None:
                raise ConfigError("random sampling needs a random generator")
            offset = start + int(rng.integers(0, slack + 1))
    frames = clip_frame_indices(start, length, offset, clip_len)
    return StagePlan(stage, start, length, offset, tuple(int(f) for f in frames))


def plan_stages(seq_len, num_stages, clip_len, mode="center", rng=None):
    """Choose one clip per stage for a whole sequence."""
    if seq_len < 1:
        raise DataError(f"cannot sample from a sequence of length {seq_len}")
    if num_stages < 1:
        raise ConfigError(f"number of stages must be >= 1, got {num_stages}")
    if clip_len < 1:
        raise ConfigError(f"clip length must be >= 1, got {clip_len}")
    return [plan_stage(seq_len, num_stages, clip_len, s, mode, rng)
            for s in range(num_stages)]


def extract_clip(frame_major, plan):
    """Gather a clip from any frame-major array (frames on axis 0)."""
    return np.take(frame_major, np.asarray(plan.frames, dtype=np.int64), axis=0)
