"""Synthetic multi-speaker sessions and their on-disk layout.

A session plants unit speaker profiles and per-token feature signatures so
that both the token identity and the speaker identity of every frame are
linearly decodable from clean features; overlap between speakers is shifted
to a target ratio. Speaker profile dimension equals the feature dimension.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, ContractError
from .speaker import SpeakerInventory, SpeakerProfile
from .tsot import TimedToken

FEATURE_MAGIC = b"SAFT"
OVERLAP_BAND = 0.08          # per-session acceptance band around the target
OVERLAP_RETRIES = 60


@dataclass
class SynthSpec:
    num_sessions: int = 16
    speakers_per_session: tuple = (2, 3)
    vocab_size: int = 40
    tokens_per_utterance: tuple = (5, 8)
    frames_per_token: tuple = (2, 4)
    overlap_ratio_target: float = 0.42
    feature_dim: int = 16
    noise_std: float = 0.05
    # token sequences follow a seeded bigram chain; smaller concentration
    # means more predictable transitions (context carries information)
    bigram_concentration: float = 0.25
    seed: int = 0

    def __post_init__(self):
        self.speakers_per_session = tuple(self.speakers_per_session)
        self.tokens_per_utterance = tuple(self.tokens_per_utterance)
        self.frames_per_token = tuple(self.frames_per_token)
        for name in ("speakers_per_session", "tokens_per_utterance",
                     "frames_per_token"):
            lo, hi = getattr(self, name)
            if lo < 1 or hi < lo:
                raise ConfigError(f"{name} range ({lo}, {hi}) is empty")
        if not 0.0 <= self.overlap_ratio_target <= 1.0:
            raise ConfigError("overlap target must lie in [0, 1]")
        if self.vocab_size < 2:
            raise ConfigError("vocab needs at least one token plus the "
                              "reserved separator slot")
        if self.num_sessions < 1 or self.feature_dim < 1:
            raise ConfigError("num_sessions and feature_dim must be positive")
        if self.noise_std < 0:
            raise ConfigError("noise_std must be nonnegative")
        if self.bigram_concentration <= 0:
            raise ConfigError("bigram_concentration must be positive")


@dataclass
class Session:
    session_id: str
    features: np.ndarray
    tokens: list
    inventory: SpeakerInventory

    @property
    def frames(self) -> int:
        return self.features.shape[0]


@dataclass
class Dataset:
    spec: SynthSpec
    sessions: list = field(default_factory=list)

    def profile_pool(self, exclude_session_id: str) -> list:
        pool = []
        for sess in self.sessions:
            if sess.session_id != exclude_session_id:
                pool.extend(sess.inventory.profiles)
        return pool


def vocab_embeddings(spec: SynthSpec) -> np.ndarray:
    """Per-token feature signatures, fixed by the dataset seed."""
    rng = np.random.default_rng(spec.seed)
    emb = rng.normal(size=(spec.vocab_size, spec.feature_dim))
    return emb / np.linalg.norm(emb, axis=1, keepdims=True)


def bigram_chain(spec: SynthSpec) -> np.ndarray:
    """Token transition matrix over the usable vocabulary (the separator
    slot excluded), fixed by the dataset seed."""
    usable = spec.vocab_size - 1
    rng = np.random.default_rng(spec.seed + 1)
    rows = rng.dirichlet(np.full(usable, spec.bigram_concentration),
                         size=usable)
    return rows


def _sample_tokens(rng, chain: np.ndarray, count: int) -> list:
    usable = chain.shape[0]
    tokens = [int(rng.integers(0, usable))]
    while len(tokens) < count:
        tokens.append(int(rng.choice(usable, p=chain[tokens[-1]])))
    return tokens


def _schedule_speaker(rng, spec, offset):
    """Contiguous token spans for one speaker starting at ``offset``."""
    n_tokens = int(rng.integers(spec.tokens_per_utterance[0],
                                spec.tokens_per_utterance[1] + 1))
    spans = []
    pos = offset
    for _ in range(n_tokens):
        length = int(rng.integers(spec.frames_per_token[0],
                                  spec.frames_per_token[1] + 1))
        spans.append((pos, pos + length - 1))
        pos += length
    return spans


def measured_overlap(span_lists) -> float:
    """Frames with two or more active speakers over frames with any."""
    end = max((e for spans in span_lists for _, e in spans), default=-1)
    active = np.zeros(end + 1, dtype=np.int64)
    for spans in span_lists:
        for s, e in spans:
            active[s:e + 1] += 1
    speech = int((active >= 1).sum())
    if speech == 0:
        return 0.0
    return float((active >= 2).sum()) / speech


def _place_speakers(rng, spec, k):
    """Shift each speaker's utterance until the overlap ratio lands in the
    target band; a single speaker cannot overlap and is placed at zero."""
    if k == 1:
        return [_schedule_speaker(rng, spec, 0)]
    target = spec.overlap_ratio_target
    for _ in range(OVERLAP_RETRIES):
        placed = [_schedule_speaker(rng, spec, 0)]
        for _ in range(1, k):
            spans = _schedule_speaker(rng, spec, 0)
            horizon = max(e for sp in placed for _, e in sp) + 1
            best = None
            for _ in range(40):
                shift = int(rng.integers(0, horizon + 1))
                shifted = [(s + shift, e + shift) for s, e in spans]
                ratio = measured_overlap(placed + [shifted])
                score = abs(ratio - target)
                if best is None or score < best[0]:
                    best = (score, shifted)
            placed.append(best[1])
        if abs(measured_overlap(placed) - target) <= OVERLAP_BAND:
            return placed
    raise ContractError(
        f"could not reach overlap target {target} given the timing ranges")


def generate_session(spec: SynthSpec, seed: int,
                     session_id: str = "s000") -> Session:
    """One synthetic session: speakers, timed tokens, features, inventory."""
    rng = np.random.default_rng(seed)
    k = int(rng.integers(spec.speakers_per_session[0],
                         spec.speakers_per_session[1] + 1))
    span_lists = _place_speakers(rng, spec, k)

    profiles = []
    timed = []
    chain = bigram_chain(spec)
    for s, spans in enumerate(span_lists):
        speaker_id = f"{session_id}_spk{s}"
        profiles.append(SpeakerProfile(speaker_id, rng.normal(size=spec.feature_dim)))
        tokens = _sample_tokens(rng, chain, len(spans))
        for tok, (start, end) in zip(tokens, spans):
            timed.append(TimedToken(tok, speaker_id, start, end))

    t_len = max(t.end_frame for t in timed) + 1
    emb = vocab_embeddings(spec)
    by_id = {p.id: p for p in profiles}
    features = np.zeros((t_len, spec.feature_dim))
    for tok in timed:
        signature = emb[tok.token] + by_id[tok.speaker].vector
        features[tok.start_frame:tok.end_frame + 1] += signature
    if spec.noise_std > 0:
        features += spec.noise_std * rng.normal(size=features.shape)

    inventory = SpeakerInventory(profiles, true_count=k)
    return Session(session_id=session_id, features=features,
                   tokens=timed, inventory=inventory)


def generate_dataset(spec: SynthSpec) -> Dataset:
    sessions = [generate_session(spec, seed=spec.seed * 7919 + i,
                                 session_id=f"s{i:03d}")
                for i in range(spec.num_sessions)]
    return Dataset(spec=spec, sessions=sessions)


# -- on-disk layout ---------------------------------------------------------
#
# <dir>/manifest.txt         flat key = value lines plus the session list
# <dir>/<sid>.feat           binary: magic, u32 T, u32 F, row-major float64
# <dir>/<sid>.tokens         text: "token speaker start end" per line
# <dir>/<sid>.inv            text: "true_count K" then "id v1 .. vF" per line

def _spec_to_pairs(spec: SynthSpec):
    return [
        ("num_sessions", str(spec.num_sessions)),
        ("speakers_per_session", f"{spec.speakers_per_session[0]},"
                                 f"{spec.speakers_per_session[1]}"),
        ("vocab_size", str(spec.vocab_size)),
        ("tokens_per_utterance", f"{spec.tokens_per_utterance[0]},"
                                 f"{spec.tokens_per_utterance[1]}"),
        ("frames_per_token", f"{spec.frames_per_token[0]},"
                             f"{spec.frames_per_token[1]}"),
        ("overlap_ratio_target", repr(spec.overlap_ratio_target)),
        ("feature_dim", str(spec.feature_dim)),
        ("noise_std", repr(spec.noise_std)),
        ("bigram_concentration", repr(spec.bigram_concentration)),
        ("seed", str(spec.seed)),
    ]


def parse_flat_config(text: str) -> dict:
    """key = value lines; blank lines and # comments ignored."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value': {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def spec_from_pairs(pairs: dict) -> SynthSpec:
    def parse_range(v):
        lo, hi = v.split(",")
        return (int(lo), int(hi))

    kwargs = {}
    for key, value in pairs.items():
        if key in ("num_sessions", "vocab_size", "feature_dim", "seed"):
            kwargs[key] = int(value)
        elif key in ("speakers_per_session", "tokens_per_utterance",
                     "frames_per_token"):
            kwargs[key] = parse_range(value)
        elif key in ("overlap_ratio_target", "noise_std",
                     "bigram_concentration"):
            kwargs[key] = float(value)
        else:
            raise ConfigError(f"unknown dataset key {key!r}")
    return SynthSpec(**kwargs)


def write_dataset(directory, dataset: Dataset):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = [f"{k} = {v}" for k, v in _spec_to_pairs(dataset.spec)]
    lines.append("sessions = " + ",".join(s.session_id for s in dataset.sessions))
    (directory / "manifest.txt").write_text("\n".join(lines) + "\n")
    for sess in dataset.sessions:
        t_len, dim = sess.features.shape
        with open(directory / f"{sess.session_id}.feat", "wb") as fh:
            fh.write(FEATURE_MAGIC)
            fh.write(struct.pack("<II", t_len, dim))
            fh.write(sess.features.astype("<f8").tobytes())
        token_lines = [f"{t.token} {t.speaker} {t.start_frame} {t.end_frame}"
                       for t in sess.tokens]
        (directory / f"{sess.session_id}.tokens").write_text(
            "\n".join(token_lines) + ("\n" if token_lines else ""))
        inv_lines = [f"true_count {sess.inventory.true_count}"]
        for p in sess.inventory.profiles:
            inv_lines.append(p.id + " "
                             + " ".join(repr(float(v)) for v in p.vector))
        (directory / f"{sess.session_id}.inv").write_text(
            "\n".join(inv_lines) + "\n")


def read_dataset(directory) -> Dataset:
    directory = Path(directory)
    pairs = parse_flat_config((directory / "manifest.txt").read_text())
    session_ids = [s for s in pairs.pop("sessions").split(",") if s]
    spec = spec_from_pairs(pairs)
    sessions = []
    for sid in session_ids:
        with open(directory / f"{sid}.feat", "rb") as fh:
            if fh.read(len(FEATURE_MAGIC)) != FEATURE_MAGIC:
                raise ContractError(f"{sid}.feat: bad feature magic")
            t_len, dim = struct.unpack("<II", fh.read(8))
            features = np.frombuffer(fh.read(8 * t_len * dim),
                                     dtype="<f8").reshape(t_len, dim).copy()
        tokens = []
        for line in (directory / f"{sid}.tokens").read_text().splitlines():
            tok, speaker, start, end = line.split()
            tokens.append(TimedToken(int(tok), speaker, int(start), int(end)))
        inv_lines = (directory / f"{sid}.inv").read_text().splitlines()
        true_count = int(inv_lines[0].split()[1])
        profiles = []
        for line in inv_lines[1:]:
            parts = line.split()
            profiles.append(SpeakerProfile(parts[0],
                                           np.array([float(v) for v in parts[1:]])))
        sessions.append(Session(session_id=sid, features=features, tokens=tokens,
                                inventory=SpeakerInventory(profiles, true_count)))
    return Dataset(spec=spec, sessions=sessions)


def dataset_hash(dataset: Dataset) -> str:
    """Content hash covering features, token timings, and inventories."""
    h = hashlib.sha256()
    for sess in dataset.sessions:
        h.update(sess.session_id.encode())
        h.update(sess.features.astype("<f8").tobytes())
        for t in sess.tokens:
            h.update(f"{t.token}|{t.speaker}|{t.start_frame}|{t.end_frame}"
                     .encode())
        h.update(str(sess.inventory.true_count).encode())
        for p in sess.inventory.profiles:
            h.update(p.id.encode())
            h.update(p.vector.astype("<f8").tobytes())
    return h.hexdigest()
