"""Window curation, horizon slicing, splitting and normalization.

Two curation settings map an action's timestamp to the seconds-window
whose averaged frame features become the start/goal observation:

    pdpp  start [t_first, t_first + 3],  goal [t_last - 2, t_last + 1]
    kepp  start [t_first - 1, t_first + 2],  goal [t_last - 1, t_last + 2]

with t_first / t_last the start times of the window's first and last
action.  Windows clamp to the video bounds rather than rejecting the
sample, and frames land at one feature per second.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .corpus import Corpus, Sample, Video


class CurationError(Exception):
    """Window curation failed for a video."""


_WINDOW_OFFSETS = {
    "pdpp": ((0.0, 3.0), (-2.0, 1.0)),
    "kepp": ((-1.0, 2.0), (-1.0, 2.0)),
}


def window_bounds(
    mode: str, t_first: float, t_last: float
) -> tuple[tuple[float, float], tuple[float, float]]:
    """Unclamped (start_window, goal_window) second-ranges for a mode."""
    if mode not in _WINDOW_OFFSETS:
        raise CurationError(f"unknown curation mode {mode!r}, expected pdpp or kepp")
    (s_lo, s_hi), (g_lo, g_hi) = _WINDOW_OFFSETS[mode]
    return (t_first + s_lo, t_first + s_hi), (t_last + g_lo, t_last + g_hi)


def frame_indices(lo: float, hi: float, n_frames: int) -> range:
    """Integer seconds whose frame starts inside [lo, hi), clamped."""
    start = max(0, math.ceil(lo))
    stop = min(n_frames, math.ceil(hi))
    return range(start, stop)


def curate_windows(
    video: Video, first_step: int, last_step: int, mode: str
) -> tuple[np.ndarray, np.ndarray]:
    """Mean frame features over the mode's start and goal windows."""
    if not video.steps:
        raise CurationError("video has no steps")
    if not (0 <= first_step <= last_step < len(video.steps)):
        raise CurationError(
            f"step range [{first_step}, {last_step}] invalid for {len(video.steps)} steps"
        )
    t_first = video.steps[first_step].start
    t_last = video.steps[last_step].start
    (s_lo, s_hi), (g_lo, g_hi) = window_bounds(mode, t_first, t_last)
    observations = []
    for lo, hi in ((s_lo, s_hi), (g_lo, g_hi)):
        idx = frame_indices(lo, hi, video.n_frames)
        if len(idx) == 0:
            raise CurationError(f"window [{lo}, {hi}] is empty after clamping")
        rows = video.frames[list(idx)]
        if np.all(rows == rows[0]):
            # Mean of identical rows must be that row bit-exactly; summing
            # and dividing would round.
            observations.append(rows[0].copy())
        else:
            observations.append(rows.mean(axis=0))
    return observations[0], observations[1]


def slide_horizon(corpus: Corpus, video: Video, horizon: int, mode: str) -> list[Sample]:
    """One sample per contiguous action window of the given horizon.

    Videos shorter than the horizon yield no samples.  Language vectors
    are the table rows of the window's first and last action.
    """
    if horizon < 2:
        raise CurationError(f"horizon must be >= 2, got {horizon}")
    samples: list[Sample] = []
    for i in range(len(video.steps) - horizon + 1):
        last = i + horizon - 1
        o_s, o_g = curate_windows(video, i, last, mode)
        actions = tuple(step.action for step in video.steps[i : last + 1])
        samples.append(
            Sample(
                task=video.task,
                actions=actions,
                o_s=o_s,
                o_g=o_g,
                n_es=corpus.language_embeddings[actions[0]].copy(),
                n_eg=corpus.language_embeddings[actions[-1]].copy(),
            )
        )
    return samples


def curate_corpus(corpus: Corpus, horizon: int, mode: str) -> list[Sample]:
    samples: list[Sample] = []
    for video in corpus.videos:
        samples.extend(slide_horizon(corpus, video, horizon, mode))
    return samples


def split(samples: list[Sample], ratio: float = 0.7, seed: int = 0) -> tuple[list[Sample], list[Sample]]:
    """Seeded shuffle into disjoint, exhaustive train/test lists."""
    if not samples:
        raise CurationError("cannot split an empty sample list")
    if not 0.0 < ratio < 1.0:
        raise CurationError(f"split ratio must lie in (0, 1), got {ratio}")
    order = np.random.default_rng(seed).permutation(len(samples))
    n_train = int(round(len(samples) * ratio))
    train = [samples[i] for i in order[:n_train]]
    test = [samples[i] for i in order[n_train:]]
    return train, test


@dataclass
class MinMaxNormalizer:
    """Per-dimension min-max scaling fitted on the training split.

    Observation and language dimensions are scaled independently; applied
    values are clipped to [0, 1] so test samples outside the training
    range stay valid targets for the state autoencoder's BCE loss.
    """

    obs_lo: np.ndarray
    obs_hi: np.ndarray
    text_lo: np.ndarray
    text_hi: np.ndarray

    @classmethod
    def fit(cls, samples: list[Sample]) -> "MinMaxNormalizer":
        if not samples:
            raise CurationError("cannot fit a normalizer on no samples")
        obs = np.concatenate([[s.o_s, s.o_g] for s in samples])
        text = np.concatenate([[s.n_es, s.n_eg] for s in samples])
        return cls(
            obs_lo=obs.min(axis=0),
            obs_hi=obs.max(axis=0),
            text_lo=text.min(axis=0),
            text_hi=text.max(axis=0),
        )

    @staticmethod
    def _scale(v: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
        span = hi - lo
        flat = span < 1e-12
        safe = np.where(flat, 1.0, span)
        out = (v - lo) / safe
        out[np.broadcast_to(flat, out.shape)] = 0.5
        return np.clip(out, 0.0, 1.0)

    def apply(self, sample: Sample) -> Sample:
        return Sample(
            task=sample.task,
            actions=sample.actions,
            o_s=self._scale(sample.o_s, self.obs_lo, self.obs_hi),
            o_g=self._scale(sample.o_g, self.obs_lo, self.obs_hi),
            n_es=self._scale(sample.n_es, self.text_lo, self.text_hi),
            n_eg=self._scale(sample.n_eg, self.text_lo, self.text_hi),
        )

    def apply_all(self, samples: list[Sample]) -> list[Sample]:
        return [self.apply(s) for s in samples]


def normalize_splits(
    train: list[Sample], test: list[Sample]
) -> tuple[list[Sample], list[Sample], MinMaxNormalizer]:
    norm = MinMaxNormalizer.fit(train)
    return norm.apply_all(train), norm.apply_all(test), norm
