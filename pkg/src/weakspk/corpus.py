"""Seeded synthetic weakly-labeled multi-speaker corpora in feature space.

Every speaker is a diagonal-covariance GMM over F-dimensional frames.  The
component means are a shared "phone" layout plus a speaker-specific
deviation, so the speaker identity lives in the relative arrangement of the
components and survives per-segment mean/variance normalization.  A random
per-recording channel offset is added on top and is meant to be removed by
that normalization.

Nuisance variation that normalization cannot remove is what makes the
embedding worth learning:

* ``session_spread`` shifts each speaker's component means once per recording;
* the last ``content_dims`` dimensions carry no speaker information and get a
  fresh per-turn component offset (``content_spread``), a stand-in for
  lexical content;
* ``content_concentration > 0`` redraws the component weights per turn;
* ``turn_drift_std`` and ``noise_std`` add per-turn and per-frame noise.

Randomness is split into counter-based substreams keyed by
``(seed, stream, index)`` so that any recording can be regenerated on its own
and serial and parallel generation agree bit-exactly.
"""

from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

log = logging.getLogger(__name__)

_SOURCES_STREAM = 0
_RECORDING_STREAM = 1
_UTTERANCE_STREAM = 2
_TRIAL_STREAM = 3


@dataclass
class CorpusConfig:
    num_celebrities: int = 32
    num_interferers: int = 96
    recordings_per_celebrity: int = 8
    heldout_per_celebrity: int = 2
    num_eval_speakers: int = 80
    utterances_per_eval_speaker: int = 6
    eval_utterance_frames: tuple[int, int] = (200, 400)
    turns_per_recording: tuple[int, int] = (6, 10)
    speakers_per_recording: tuple[int, int] = (2, 4)
    target_fraction: float = 0.5
    turn_frames: tuple[int, int] = (100, 600)
    min_turn_frames: int = 100
    feature_dim: int = 16
    num_components: int = 4
    phone_spread: float = 2.5
    speaker_spread: float = 1.2
    min_mean_distance: float = 1.0
    variance_range: tuple[float, float] = (0.5, 1.5)
    channel_std: float = 1.0
    session_spread: float = 0.7
    content_dims: int = 8
    content_spread: float = 2.0
    content_concentration: float = 0.0
    turn_drift_std: float = 0.0
    noise_std: float = 0.0

    def validate(self):
        if self.num_celebrities < 2:
            raise ConfigError("num_celebrities must be >= 2")
        lo, hi = self.turn_frames
        if self.min_turn_frames <= 0 or lo <= 0 or hi < lo:
            raise ConfigError("turn durations must be positive with lo <= hi")
        if lo < self.min_turn_frames:
            raise ConfigError("turn_frames lower bound is below min_turn_frames")
        if not 0.0 < self.target_fraction <= 1.0:
            raise ConfigError("target_fraction must lie in (0, 1]")
        s_lo, s_hi = self.speakers_per_recording
        if s_lo < 1 or s_hi < s_lo:
            raise ConfigError("speakers_per_recording must satisfy 1 <= lo <= hi")
        if s_hi - 1 > self.num_interferers:
            raise ConfigError("interferer pool smaller than speakers_per_recording")
        t_lo, t_hi = self.turns_per_recording
        if t_lo < 1 or t_hi < t_lo:
            raise ConfigError("turns_per_recording must satisfy 1 <= lo <= hi")
        if self.recordings_per_celebrity < 1:
            raise ConfigError("recordings_per_celebrity must be >= 1")
        if self.feature_dim < 1 or self.num_components < 1:
            raise ConfigError("feature_dim and num_components must be >= 1")
        if not 0 <= self.content_dims < self.feature_dim:
            raise ConfigError("content_dims must leave at least one speaker dimension")
        v_lo, v_hi = self.variance_range
        if v_lo <= 0 or v_hi < v_lo:
            raise ConfigError("variance_range must be positive")


@dataclass
class SpeakerSource:
    speaker_id: int
    mixture_weights: np.ndarray
    component_means: np.ndarray
    component_variances: np.ndarray

    def __post_init__(self):
        if abs(self.mixture_weights.sum() - 1.0) > 1e-12:
            raise ValueError("mixture weights must sum to 1")
        if np.any(self.component_variances <= 0):
            raise ValueError("component variances must be strictly positive")

    def sample(self, n, rng, weights=None, mean_offset=None):
        """Draw ``n`` i.i.d. frames, optionally with turn weights and session-shifted means."""
        w = self.mixture_weights if weights is None else weights
        means = self.component_means if mean_offset is None else self.component_means + mean_offset
        comp = rng.choice(len(w), size=n, p=w)
        noise = rng.standard_normal((n, means.shape[1]))
        return means[comp] + np.sqrt(self.component_variances[comp]) * noise


@dataclass
class RecordingScript:
    recording_id: int
    turns: list[tuple[int, int]]
    target_id: int

    @property
    def num_frames(self):
        return sum(d for _, d in self.turns)


@dataclass
class WeaklyLabeledRecording:
    recording_id: int
    features: np.ndarray
    weak_label: int
    # evaluation only; training code never reads this
    ground_truth: np.ndarray | None = None
    split: str = "train"

    @property
    def num_frames(self):
        return self.features.shape[0]


@dataclass
class TrialList:
    trials: list[tuple[int, int, bool]] = field(default_factory=list)

    def __len__(self):
        return len(self.trials)

    def __iter__(self):
        return iter(self.trials)


def _substream(seed, stream, index=0):
    return np.random.default_rng([seed, stream, index])


def make_sources(config: CorpusConfig, seed: int) -> list[SpeakerSource]:
    """Speakers in id order: celebrities, interferers, then evaluation speakers."""
    config.validate()
    rng = _substream(seed, _SOURCES_STREAM)
    G, F = config.num_components, config.feature_dim
    phones = rng.standard_normal((G, F)) * config.phone_spread
    n_spk = F - config.content_dims
    total = config.num_celebrities + config.num_interferers + config.num_eval_speakers
    sources, flat_means = [], []
    v_lo, v_hi = config.variance_range
    for sid in range(total):
        for _ in range(1000):
            means = phones.copy()
            means[:, :n_spk] += rng.standard_normal((G, n_spk)) * config.speaker_spread
            flat = means.ravel()
            if all(np.linalg.norm(flat - other) >= config.min_mean_distance for other in flat_means):
                break
        else:
            raise ConfigError("cannot satisfy min_mean_distance; lower it or raise speaker_spread")
        flat_means.append(flat)
        weights = rng.dirichlet(np.full(G, 5.0))
        weights /= weights.sum()
        variances = rng.uniform(v_lo, v_hi, size=(G, F))
        sources.append(SpeakerSource(sid, weights, means, variances))
    return sources


def _log_uniform_int(rng, lo, hi):
    if lo == hi:
        return int(lo)
    return int(round(np.exp(rng.uniform(np.log(lo), np.log(hi)))))


def make_script(config: CorpusConfig, recording_id: int, target_id: int, rng) -> RecordingScript:
    J, I = config.num_celebrities, config.num_interferers
    s_lo, s_hi = config.speakers_per_recording
    n_interf = int(rng.integers(s_lo - 1, s_hi)) if s_hi > 1 else 0
    interferers = [J + int(k) for k in rng.choice(I, size=n_interf, replace=False)] if n_interf else []
    n_turns = int(rng.integers(config.turns_per_recording[0], config.turns_per_recording[1] + 1))
    lo, hi = config.turn_frames

    speakers = []
    for _ in range(n_turns):
        if not interferers or rng.random() < config.target_fraction:
            speakers.append(target_id)
        else:
            speakers.append(interferers[int(rng.integers(len(interferers)))])
    durations = [_log_uniform_int(rng, lo, hi) for _ in range(n_turns)]

    if target_id not in speakers:
        speakers[int(rng.integers(n_turns))] = target_id
    if interferers and len(set(speakers)) < 2:
        if n_turns == 1:
            speakers.append(interferers[0])
            durations.append(_log_uniform_int(rng, lo, hi))
        else:
            k = int(rng.integers(n_turns))
            speakers[k] = interferers[int(rng.integers(len(interferers)))]
            if target_id not in speakers:
                speakers[(k + 1) % n_turns] = target_id

    turns: list[tuple[int, int]] = []
    for spk, dur in zip(speakers, durations):
        if turns and turns[-1][0] == spk:
            turns[-1] = (spk, turns[-1][1] + dur)
        else:
            turns.append((spk, dur))
    return RecordingScript(recording_id, turns, target_id)


def render(script: RecordingScript, sources, config: CorpusConfig, rng, split="train"):
    F = config.feature_dim
    G = config.num_components
    channel = rng.standard_normal(F) * config.channel_std
    session: dict[int, np.ndarray] = {}
    blocks, truth = [], []
    for spk, dur in script.turns:
        if spk not in session:
            session[spk] = rng.standard_normal((G, F)) * config.session_spread
        src = sources[spk]
        weights = None
        if config.content_concentration > 0:
            weights = rng.dirichlet(config.content_concentration * G * src.mixture_weights)
            weights = np.maximum(weights, 1e-12)
            weights /= weights.sum()
        offset = session[spk]
        if config.content_dims:
            offset = offset.copy()
            offset[:, F - config.content_dims:] += rng.standard_normal((G, config.content_dims)) * config.content_spread
        drift = rng.standard_normal(F) * config.turn_drift_std
        blocks.append(src.sample(dur, rng, weights, offset) + drift)
        truth.append(np.full(dur, spk, dtype=np.int64))
    feats = np.concatenate(blocks) + channel
    if config.noise_std > 0:
        feats = feats + config.noise_std * rng.standard_normal(feats.shape)
    return WeaklyLabeledRecording(
        recording_id=script.recording_id,
        features=feats,
        weak_label=script.target_id,
        ground_truth=np.concatenate(truth),
        split=split,
    )


def synthesize_recording(config, sources, seed, recording_id, target_id, split="train"):
    rng = _substream(seed, _RECORDING_STREAM, recording_id)
    script = make_script(config, recording_id, target_id, rng)
    return render(script, sources, config, rng, split=split)


def recording_plan(config: CorpusConfig):
    """``(recording_id, target_id, split)`` for every weakly labeled recording."""
    plan = []
    rid = 0
    for split, per_celeb in (("train", config.recordings_per_celebrity), ("heldout", config.heldout_per_celebrity)):
        for j in range(config.num_celebrities):
            for _ in range(per_celeb):
                plan.append((rid, j, split))
                rid += 1
    return plan


def synthesize_corpus(config: CorpusConfig, seed: int):
    """Returns ``(recordings, sources)``; recordings carry split "train" or "heldout"."""
    config.validate()
    sources = make_sources(config, seed)
    recordings = [
        synthesize_recording(config, sources, seed, rid, j, split)
        for rid, j, split in recording_plan(config)
    ]
    return recordings, sources


def synthesize_eval_utterances(config: CorpusConfig, seed: int, sources=None):
    """Single-speaker utterances of the evaluation speakers (disjoint from celebrities)."""
    config.validate()
    if sources is None:
        sources = make_sources(config, seed)
    first_eval = config.num_celebrities + config.num_interferers
    base_id = len(recording_plan(config))
    lo, hi = config.eval_utterance_frames
    utts = []
    uid = base_id
    for k in range(config.num_eval_speakers):
        spk = first_eval + k
        for _ in range(config.utterances_per_eval_speaker):
            rng = _substream(seed, _UTTERANCE_STREAM, uid)
            script = RecordingScript(uid, [(spk, _log_uniform_int(rng, lo, hi))], spk)
            utts.append(render(script, sources, config, rng, split="eval"))
            uid += 1
    return utts


def emit_trials(held_out_recordings, trials_per_speaker: int, seed: int) -> TrialList:
    """Balanced target / non-target trials with each speaker as enrollment side.

    Per speaker, ``ceil(n/2)`` target and ``floor(n/2)`` non-target trials are
    drawn without replacement; target pairs are recycled only when the speaker
    has fewer distinct ordered pairs than requested.
    """
    by_spk = defaultdict(list)
    for rec in held_out_recordings:
        by_spk[int(rec.weak_label)].append(int(rec.recording_id))
    speakers = sorted(by_spk)
    if len(speakers) < 2:
        raise ValueError("need at least 2 held-out speakers for trials")
    short = [s for s in speakers if len(by_spk[s]) < 2]
    if short:
        raise ValueError(f"speakers {short} have fewer than 2 utterances; target trials impossible")

    rng = _substream(seed, _TRIAL_STREAM)
    n_tar = (trials_per_speaker + 1) // 2
    n_non = trials_per_speaker // 2
    trials = []
    for s in speakers:
        own = by_spk[s]
        pairs = [(a, b) for a in own for b in own if a != b]
        chosen = []
        while len(chosen) < n_tar:
            order = rng.permutation(len(pairs))
            chosen.extend(pairs[i] for i in order[: n_tar - len(chosen)])
        trials.extend((a, b, True) for a, b in chosen)

        others = [u for t in speakers if t != s for u in by_spk[t]]
        n_cand = len(own) * len(others)
        picks = rng.choice(n_cand, size=n_non, replace=n_non > n_cand)
        for p in picks:
            trials.append((own[int(p) // len(others)], others[int(p) % len(others)], False))
    return TrialList(trials)
