"""Token-level speaker attribution: the two-layer speaker decoder, cosine
scoring against a profile inventory, inventory augmentation (speaker filling
and interfering speakers), and the argmax readout."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .nn import (AttentionConfig, DecoderLayer, FeedForward, Module,
                 MultiHeadAttention)
from .tensor import (Tensor, clip_min, concat, getitem, matmul, softmax,
                     sqrt, tsum)

NORM_EPS = 1e-8  # guards zero-norm queries in the cosine denominator


@dataclass
class SpeakerProfile:
    """A unit-normalized identity vector."""
    id: str
    vector: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vector, dtype=np.float64)
        norm = np.linalg.norm(v)
        if norm == 0.0:
            raise ContractError(f"profile {self.id!r} has zero norm")
        # skip the division for already-unit vectors so re-ingesting a
        # stored profile reproduces its bytes exactly
        if abs(norm - 1.0) > 1e-12:
            v = v / norm
        self.vector = v


@dataclass
class SpeakerInventory:
    """Ordered profile set; the genuine speakers form the prefix."""
    profiles: list
    true_count: int

    def __post_init__(self):
        if len(self.profiles) < 1:
            raise ContractError("inventory must hold at least one profile")
        ids = [p.id for p in self.profiles]
        if len(set(ids)) != len(ids):
            raise ContractError("inventory profile ids are not unique")
        if not 1 <= self.true_count <= len(self.profiles):
            raise ContractError(
                f"true_count {self.true_count} outside 1..{len(self.profiles)}")

    @property
    def size(self) -> int:
        return len(self.profiles)

    def matrix(self) -> np.ndarray:
        return np.stack([p.vector for p in self.profiles])

    def index_of(self, speaker_id: str) -> int:
        for i, p in enumerate(self.profiles):
            if p.id == speaker_id:
                return i
        raise ContractError(f"speaker {speaker_id!r} not in inventory")


@dataclass
class CosineScores:
    """Per-token, per-profile cosine scores; filled entries are marked."""
    b: Tensor                       # N x K
    fill_mask: np.ndarray = None    # N x K booleans

    def __post_init__(self):
        if self.fill_mask is None:
            self.fill_mask = np.zeros(self.b.data.shape, dtype=bool)

    @property
    def width(self) -> int:
        return self.b.data.shape[1]


@dataclass
class SpeakerAttention:
    beta: Tensor  # N x K rows summing to 1


class SpeakerDecoderLayer1(Module):
    """Cross-attention with split sources (query: token embeddings,
    key: recognition frames, value: speaker frames), plain residuals."""

    def __init__(self, cfg: AttentionConfig, rng: np.random.Generator):
        self.mha = MultiHeadAttention(cfg, rng)
        self.ff = FeedForward(cfg, rng)

    def __call__(self, e_a: Tensor, h_asr: Tensor, h_spk: Tensor) -> Tensor:
        if h_asr.data.shape[0] != h_spk.data.shape[0]:
            raise ContractError(
                f"encoder streams disagree in length: "
                f"{h_asr.data.shape[0]} vs {h_spk.data.shape[0]}")
        e = e_a + self.mha(e_a, h_asr, h_spk)
        return e + self.ff(e)


class SpeakerDecoder(Module):
    """Two layers producing one speaker representation per token."""

    def __init__(self, cfg: AttentionConfig, rng: np.random.Generator):
        self.layer1 = SpeakerDecoderLayer1(cfg, rng)
        self.layer2 = DecoderLayer(cfg, rng, self_attention=True)

    def __call__(self, e_a: Tensor, h_asr: Tensor, h_spk: Tensor) -> Tensor:
        e_as = self.layer1(e_a, h_asr, h_spk)
        return self.layer2(e_as, h_spk)


def project_query(e_spk: Tensor, w_spk: Tensor) -> Tensor:
    """Map token speaker representations into the profile space."""
    return matmul(e_spk, w_spk)


def cosine_scores(q: Tensor, inv: SpeakerInventory) -> CosineScores:
    """Cosine similarity of each token query against each profile.

    Zero-norm queries are guarded by flooring the denominator at a tiny
    epsilon; flooring (rather than adding) keeps the scores exactly
    invariant to positive rescaling of the queries.
    """
    d_mat = inv.matrix()
    d_norms = np.linalg.norm(d_mat, axis=1)
    q_norm = clip_min(sqrt(tsum(q * q, axis=1, keepdims=True)), NORM_EPS)
    b = matmul(q, Tensor(d_mat.T / d_norms)) / q_norm
    return CosineScores(b=b)


def attention_weights(scores: CosineScores) -> SpeakerAttention:
    """Row-wise softmax over the profile axis."""
    return SpeakerAttention(beta=softmax(scores.b, axis=1))


def weighted_profile(att: SpeakerAttention, inv: SpeakerInventory) -> Tensor:
    """Attention-weighted combination of the inventory profiles. Columns
    beyond the inventory (filled-in slots) carry no profile and drop out."""
    width = att.beta.data.shape[1]
    if width < inv.size:
        raise ContractError(
            f"attention width {width} smaller than inventory {inv.size}")
    beta = att.beta if width == inv.size else getitem(
        att.beta, (slice(None), slice(0, inv.size)))
    return matmul(beta, Tensor(inv.matrix()))


def fill_speakers(scores: CosineScores, k_max: int, seed: int) -> CosineScores:
    """Pad score rows to ``k_max`` columns with uniform[-0.5, 0.5] draws.

    The padding is a constant (no gradient) and is never a training target;
    it only disturbs the attention softmax.
    """
    width = scores.width
    if k_max < width:
        raise ContractError(f"k_max {k_max} smaller than score width {width}")
    if k_max == width:
        return CosineScores(b=scores.b, fill_mask=scores.fill_mask.copy())
    n = scores.b.data.shape[0]
    rng = np.random.default_rng(seed)
    pad = rng.uniform(-0.5, 0.5, size=(n, k_max - width))
    b = concat([scores.b, Tensor(pad)], axis=1)
    mask = np.concatenate(
        [scores.fill_mask, np.ones((n, k_max - width), dtype=bool)], axis=1)
    return CosineScores(b=b, fill_mask=mask)


def add_interfering(inv: SpeakerInventory, pool, m: int,
                    seed: int) -> SpeakerInventory:
    """Append ``m`` distinct profiles absent from the inventory."""
    if m == 0:
        return SpeakerInventory(list(inv.profiles), inv.true_count)
    present = {p.id for p in inv.profiles}
    candidates = [p for p in pool if p.id not in present]
    # profiles sharing an id are one candidate
    unique = {}
    for p in candidates:
        unique.setdefault(p.id, p)
    candidates = list(unique.values())
    if len(candidates) < m:
        raise ContractError(
            f"interfering pool exhausted: need {m}, have {len(candidates)}")
    rng = np.random.default_rng(seed)
    picks = rng.choice(len(candidates), size=m, replace=False)
    extra = [candidates[i] for i in picks]
    return SpeakerInventory(list(inv.profiles) + extra, inv.true_count)


def assign_speakers(att: SpeakerAttention, inv: SpeakerInventory) -> list:
    """Per-token argmax over the attention weights; ties resolve to the
    lowest inventory index."""
    beta = att.beta.data[:, :inv.size]
    if beta.shape[0] == 0:
        return []
    idx = np.argmax(beta, axis=1)
    return [inv.profiles[i].id for i in idx]
