"""Synthetic instructional-video corpus.

Each task owns a canonical chain of 6-10 distinct actions whose first
action is unique to the task.  Videos replay their task's chain as
contiguous fixed-length segments; frame features are the active action's
embedding row plus Gaussian noise.  Chain sets are rejection-sampled until
the curated start/goal observations identify the task for every window at
every supported horizon, which is what gives the default corpus a
success-rate ceiling of 1.0: the planning inputs determine the
intermediate actions exactly.

Per-video branch substitutions (``branch_prob`` > 0) deliberately break
that guarantee and default to off.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

LEAD_IN_SECONDS = 2.0
STEP_SECONDS = 6.0
CHAIN_LENGTH_RANGE = (6, 10)
SUPPORTED_HORIZONS = range(3, 7)
_MAX_CHAIN_ATTEMPTS = 500


class CorpusError(Exception):
    """Corpus configuration is invalid or infeasible."""


@dataclass(frozen=True)
class Step:
    action: int
    start: float
    end: float


@dataclass
class Video:
    task: int
    steps: list[Step]
    frames: np.ndarray  # [n_frames, obs_dim], one feature row per second

    def __post_init__(self) -> None:
        for step in self.steps:
            if step.start >= step.end:
                raise CorpusError(f"step {step} has start >= end")
        for a, b in zip(self.steps, self.steps[1:]):
            if b.start < a.end:
                raise CorpusError("steps must be temporally ordered and non-overlapping")

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]


@dataclass
class Sample:
    """One curated training/eval example."""

    task: int
    actions: tuple[int, ...]
    o_s: np.ndarray
    o_g: np.ndarray
    n_es: np.ndarray
    n_eg: np.ndarray


@dataclass(frozen=True)
class CorpusConfig:
    num_tasks: int = 5
    num_actions: int = 12
    obs_dim: int = 16
    text_dim: int = 8
    videos_per_task: int = 30
    noise_sd: float = 0.02
    seed: int = 0
    branch_prob: float = 0.0


@dataclass
class Corpus:
    num_tasks: int
    num_actions: int
    obs_dim: int
    text_dim: int
    action_embeddings: np.ndarray  # [A, obs_dim]
    language_embeddings: np.ndarray  # [A, text_dim]
    task_chains: list[list[int]]
    videos: list[Video] = field(default_factory=list)


def active_step_index(steps: list[Step], t: float) -> int:
    """Step active at time t; times outside the steps clamp to the nearest."""
    if t < steps[0].start:
        return 0
    for i, step in enumerate(steps):
        if t < step.end:
            return i
    return len(steps) - 1


def render_frames(
    steps: list[Step],
    embeddings: np.ndarray,
    n_frames: int,
    noise_sd: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """One feature row per integer second: active action's row plus noise."""
    obs_dim = embeddings.shape[1]
    frames = np.empty((n_frames, obs_dim))
    for t in range(n_frames):
        frames[t] = embeddings[steps[active_step_index(steps, float(t))].action]
    if noise_sd > 0.0:
        frames += noise_sd * rng.standard_normal(frames.shape)
    return frames


def _chain_window_signature(
    chain: list[int], first_idx: int, last_idx: int, mode: str
) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """Action labels visible in the noise-free start/goal windows.

    Uses the same window bounds and frame selection as live curation, so
    the identifiability check below cannot drift from what the models see.
    """
    from .curation import frame_indices, window_bounds

    steps = [
        Step(a, LEAD_IN_SECONDS + i * STEP_SECONDS, LEAD_IN_SECONDS + (i + 1) * STEP_SECONDS)
        for i, a in enumerate(chain)
    ]
    n_frames = int(LEAD_IN_SECONDS + STEP_SECONDS * len(chain))
    (s0, s1), (g0, g1) = window_bounds(mode, steps[first_idx].start, steps[last_idx].start)
    sig_s = tuple(chain[active_step_index(steps, float(t))] for t in frame_indices(s0, s1, n_frames))
    sig_g = tuple(chain[active_step_index(steps, float(t))] for t in frame_indices(g0, g1, n_frames))
    return sig_s, sig_g


def _chains_identifiable(chains: list[list[int]]) -> bool:
    """No two tasks may curate identical start/goal observations."""
    for mode in ("pdpp", "kepp"):
        for horizon in SUPPORTED_HORIZONS:
            seen: dict[tuple, int] = {}
            for task, chain in enumerate(chains):
                for i in range(len(chain) - horizon + 1):
                    sig = _chain_window_signature(chain, i, i + horizon - 1, mode)
                    owner = seen.setdefault(sig, task)
                    if owner != task:
                        return False
    return True


def _draw_chains(config: CorpusConfig, rng: np.random.Generator) -> list[list[int]]:
    lo, hi = CHAIN_LENGTH_RANGE
    max_len = min(hi, config.num_actions)
    starts = rng.permutation(config.num_actions)[: config.num_tasks]
    chains: list[list[int]] = []
    for task in range(config.num_tasks):
        length = int(rng.integers(lo, max_len + 1))
        pool = [a for a in range(config.num_actions) if a != starts[task]]
        body = rng.permutation(len(pool))[: length - 1]
        chains.append([int(starts[task])] + [pool[i] for i in body])
    return chains


def generate_corpus(config: CorpusConfig) -> Corpus:
    """Deterministic corpus for the given config; same seed, same bytes."""
    c, a = config.num_tasks, config.num_actions
    if c < 1 or a < 2:
        raise CorpusError(f"need num_tasks >= 1 and num_actions >= 2, got {c}/{a}")
    if config.videos_per_task < 1:
        raise CorpusError("videos_per_task must be >= 1")
    if a < c or a < CHAIN_LENGTH_RANGE[0]:
        raise CorpusError(
            f"num_actions={a} is too small to build {c} disjoint-start chains "
            f"of length >= {CHAIN_LENGTH_RANGE[0]}"
        )
    if config.obs_dim < 1 or config.text_dim < 1:
        raise CorpusError("obs_dim and text_dim must be positive")

    rng = np.random.default_rng(config.seed)
    action_embeddings = rng.random((a, config.obs_dim))
    language_embeddings = rng.random((a, config.text_dim))

    chains: list[list[int]] | None = None
    for _ in range(_MAX_CHAIN_ATTEMPTS):
        candidate = _draw_chains(config, rng)
        if _chains_identifiable(candidate):
            chains = candidate
            break
    if chains is None:
        raise CorpusError(
            f"could not build {c} identifiable chains over {a} actions "
            f"after {_MAX_CHAIN_ATTEMPTS} attempts"
        )

    corpus = Corpus(
        num_tasks=c,
        num_actions=a,
        obs_dim=config.obs_dim,
        text_dim=config.text_dim,
        action_embeddings=action_embeddings,
        language_embeddings=language_embeddings,
        task_chains=chains,
    )
    for task in range(c):
        chain = chains[task]
        for _ in range(config.videos_per_task):
            actions = list(chain)
            if config.branch_prob > 0.0:
                for pos in range(1, len(actions) - 1):
                    if rng.random() < config.branch_prob:
                        actions[pos] = int(rng.integers(0, a))
            steps = [
                Step(
                    action,
                    LEAD_IN_SECONDS + i * STEP_SECONDS,
                    LEAD_IN_SECONDS + (i + 1) * STEP_SECONDS,
                )
                for i, action in enumerate(actions)
            ]
            n_frames = int(LEAD_IN_SECONDS + STEP_SECONDS * len(actions))
            frames = render_frames(steps, action_embeddings, n_frames, config.noise_sd, rng)
            corpus.videos.append(Video(task=task, steps=steps, frames=frames))
    return corpus
