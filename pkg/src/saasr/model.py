"""Model assembly: twin encoders, the weight predictor, the speaker decoder,
a speaker-fused parallel decoder with a two-pass training forward, and a
greedy autoregressive baseline for latency comparison."""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from .cif import (DEFAULT_THRESHOLD, WeightPredictor, WeightSequence,
                  integrate_and_fire, scale_weights)
from .errors import ConfigError, ContractError
from .metrics import edit_align
from .nn import (AttentionConfig, DecoderLayer, Embedding, EncoderLayer,
                 FeedForward, Linear, Module, MultiHeadAttention, causal_mask,
                 positional_encoding)
from .speaker import (CosineScores, SpeakerAttention, SpeakerDecoder,
                      SpeakerInventory, assign_speakers, attention_weights,
                      cosine_scores, fill_speakers, project_query,
                      weighted_profile)
from .tensor import Tensor, matmul, no_grad, softmax, transpose

CHECKPOINT_MAGIC = b"SAPF1\n"


@dataclass
class ModelConfig:
    vocab_size: int
    feature_dim: int = 16
    attn: AttentionConfig = field(
        default_factory=lambda: AttentionConfig(32, 4, 64))
    encoder_layers: int = 2
    decoder_layers: int = 2
    speaker_encoder_layers: int = 2
    d_spk: int = 16
    inter_ctc_layer: int = 1
    sampling_factor_lambda: float = 1.1
    use_cc_separator: bool = False

    def __post_init__(self):
        if self.vocab_size < 2:
            raise ConfigError(f"vocab_size must be >= 2, got {self.vocab_size}")
        if not 1 <= self.inter_ctc_layer < self.encoder_layers:
            raise ConfigError(
                f"inter_ctc_layer {self.inter_ctc_layer} must lie in "
                f"1..{self.encoder_layers - 1}")
        if self.sampling_factor_lambda < 0:
            raise ConfigError("sampling factor must be nonnegative")
        if self.decoder_layers < 1 or self.speaker_encoder_layers < 1:
            raise ConfigError("layer counts must be positive")

    @property
    def separator_id(self) -> int:
        # reserved last vocab slot; meaningful in separator mode
        return self.vocab_size - 1

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["attn"] = AttentionConfig(**d["attn"])
        return cls(**d)


@dataclass
class ForwardTrace:
    h_asr: Tensor
    h_spk: Tensor
    h_inter: Tensor
    e_a: Tensor
    first_pass_logits: Tensor
    first_pass_tokens: list
    e_s: Tensor
    second_pass_logits: Tensor
    cosine: CosineScores
    speaker_attention: SpeakerAttention
    weighted_profiles: Tensor
    weights: WeightSequence    # unscaled predictor output for the MAE term
    n_replaced: int


@dataclass
class Hypothesis:
    tokens: list
    speaker_ids: list
    scores: list

    def __post_init__(self):
        if not len(self.tokens) == len(self.speaker_ids) == len(self.scores):
            raise ContractError("hypothesis fields must be parallel")

    def __len__(self):
        return len(self.tokens)


def glancing_sample(e_a: Tensor, y_true, y_first, token_embed: Embedding,
                    sampling_factor: float, seed: int):
    """Replace a number of acoustic embedding rows with ground-truth token
    embeddings. The count is ceil(factor * edit_errors(truth, first pass)),
    positions drawn uniformly without replacement.

    Returns the mixed embeddings and the replacement count.
    """
    n = e_a.data.shape[0]
    if len(y_true) != n:
        raise ContractError(
            f"glancing_sample needs one target per row: {n} rows, "
            f"{len(y_true)} targets")
    if sampling_factor < 0:
        raise ContractError("sampling factor must be nonnegative")
    dist = edit_align(y_true, y_first).errors
    n_rep = min(n, math.ceil(sampling_factor * dist))
    if n_rep == 0:
        return e_a, 0
    rng = np.random.default_rng(seed)
    picks = rng.choice(n, size=n_rep, replace=False)
    mask = np.zeros((n, 1))
    mask[picks] = 1.0
    replacement = token_embed(np.asarray(y_true, dtype=np.intp))
    e_s = e_a * Tensor(1.0 - mask) + replacement * Tensor(mask)
    return e_s, n_rep


class FusedFirstDecoderLayer(Module):
    """Cross-attention then feed-forward with plain residuals; the weighted
    speaker profile (mapped back through the shared projection) is added to
    the feed-forward input."""

    def __init__(self, cfg: AttentionConfig, rng: np.random.Generator):
        self.cross_mha = MultiHeadAttention(cfg, rng)
        self.ff = FeedForward(cfg, rng)

    def __call__(self, e: Tensor, mem: Tensor,
                 fusion: Tensor | None = None) -> Tensor:
        e1 = e + self.cross_mha(e, mem, mem)
        ff_in = e1 + fusion if fusion is not None else e1
        return e1 + self.ff(ff_in)


class SaAsrModel(Module):
    """Speaker-attributed parallel-decoding recognizer.

    ``decoder_calls`` counts decoder forward passes; parallel inference
    performs exactly one regardless of output length.
    """

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        rng = np.random.default_rng(seed)
        d = cfg.attn.model_dim
        self.cfg = cfg
        self.decoder_calls = 0

        self.asr_input = Linear(cfg.feature_dim, d, rng)
        self.asr_layers = [EncoderLayer(cfg.attn, rng)
                           for _ in range(cfg.encoder_layers)]
        self.spk_input = Linear(cfg.feature_dim, d, rng)
        self.spk_layers = [EncoderLayer(cfg.attn, rng)
                           for _ in range(cfg.speaker_encoder_layers)]

        self.predictor = WeightPredictor(d, rng)
        self.token_embed = Embedding(cfg.vocab_size, d, rng)
        self.speaker_decoder = SpeakerDecoder(cfg.attn, rng)
        # shared projection: token representations -> profile space, and
        # (transposed) weighted profiles -> decoder space
        self.w_spk = Tensor(
            rng.uniform(-1 / np.sqrt(d), 1 / np.sqrt(d), (d, cfg.d_spk)),
            requires_grad=True)

        self.dec_first = FusedFirstDecoderLayer(cfg.attn, rng)
        self.dec_layers = [DecoderLayer(cfg.attn, rng, self_attention=True)
                           for _ in range(cfg.decoder_layers - 1)]
        self.out_proj = Linear(d, cfg.vocab_size, rng)
        self.ctc_head = Linear(d, cfg.vocab_size + 1, rng)
        self.inter_ctc_head = Linear(d, cfg.vocab_size + 1, rng)

    # -- encoders ------------------------------------------------------

    def _encode(self, x: Tensor, input_proj: Linear, layers,
                tap: int | None = None):
        h = input_proj(x)
        h = h + Tensor(positional_encoding(h.data.shape[0], h.data.shape[1]))
        tapped = None
        for i, layer in enumerate(layers, start=1):
            h = layer(h)
            if tap is not None and i == tap:
                tapped = h
        return h, tapped

    def asr_encode(self, x: Tensor):
        """Returns the final hidden frames and the intermediate tap."""
        return self._encode(x, self.asr_input, self.asr_layers,
                            tap=self.cfg.inter_ctc_layer)

    def speaker_encode(self, x: Tensor) -> Tensor:
        h, _ = self._encode(x, self.spk_input, self.spk_layers)
        return h

    # -- decoder ---------------------------------------------------------

    def asr_decode(self, e: Tensor, h_asr: Tensor, d_bar: Tensor | None,
                   disable_self_attention: bool = False) -> Tensor:
        """One parallel decoder pass over all token positions (no causal
        mask). ``disable_self_attention`` is a diagnostic mode that keeps
        positions independent."""
        self.decoder_calls += 1
        fusion = None
        if d_bar is not None and d_bar.data.shape[0] > 0:
            fusion = matmul(d_bar, transpose(self.w_spk))
        e = self.dec_first(e, h_asr, fusion)
        for layer in self.dec_layers:
            e = layer(e, h_asr, skip_self_attention=disable_self_attention)
        return self.out_proj(e)

    # -- speaker path -------------------------------------------------------

    def speaker_scores(self, e_a: Tensor, h_asr: Tensor, h_spk: Tensor,
                       inv: SpeakerInventory) -> CosineScores:
        e_spk = self.speaker_decoder(e_a, h_asr, h_spk)
        q = project_query(e_spk, self.w_spk)
        return cosine_scores(q, inv)

    # -- training forward -------------------------------------------------

    def two_pass_train_forward(self, x: Tensor, y_true, speaker_indices,
                               inv: SpeakerInventory, sampler_seed: int,
                               fill_to: int | None = None,
                               fill_seed: int = 0,
                               first_tokens_override=None) -> ForwardTrace:
        """Teacher-forced pipeline: encode, fire exactly one embedding per
        target token, attribute speakers, decode once without gradients,
        mix in ground-truth embeddings, decode again with gradients.

        ``first_tokens_override`` pins the first-pass hypothesis (and with
        it the sampler's discrete choices); finite-difference checks use it
        to probe the loss conditional on the realized sampling path.
        """
        if len(speaker_indices) != len(y_true):
            raise ContractError("one speaker index per target token required")
        h_asr, h_inter = self.asr_encode(x)
        h_spk = self.speaker_encode(x)
        weights = self.predictor(h_asr)
        scaled = scale_weights(weights, len(y_true))
        plan = integrate_and_fire(h_asr, scaled, DEFAULT_THRESHOLD)
        e_a = plan.embeddings

        scores = self.speaker_scores(e_a, h_asr, h_spk, inv)
        if fill_to is not None:
            scores = fill_speakers(scores, fill_to, fill_seed)
        att = attention_weights(scores)
        d_bar = weighted_profile(att, inv)

        with no_grad():
            first_logits = self.asr_decode(e_a, h_asr, d_bar)
        if first_tokens_override is not None:
            first_tokens = list(first_tokens_override)
        else:
            first_tokens = ([] if first_logits.data.shape[0] == 0
                            else list(np.argmax(first_logits.data, axis=1)))
        e_s, n_replaced = glancing_sample(
            e_a, y_true, first_tokens, self.token_embed,
            self.cfg.sampling_factor_lambda, sampler_seed)
        second_logits = self.asr_decode(e_s, h_asr, d_bar)
        return ForwardTrace(
            h_asr=h_asr, h_spk=h_spk, h_inter=h_inter, e_a=e_a,
            first_pass_logits=first_logits, first_pass_tokens=first_tokens,
            e_s=e_s, second_pass_logits=second_logits, cosine=scores,
            speaker_attention=att, weighted_profiles=d_bar, weights=weights,
            n_replaced=n_replaced)

    # -- inference -----------------------------------------------------------

    def nar_infer(self, x: Tensor, inv: SpeakerInventory) -> Hypothesis:
        """Single-pass parallel inference; the accumulated predictor weight
        fixes the output length. Speaker attention is restricted to the
        genuine inventory prefix."""
        with no_grad():
            h_asr, _ = self.asr_encode(x)
            h_spk = self.speaker_encode(x)
            weights = self.predictor(h_asr)
            plan = integrate_and_fire(h_asr, weights, DEFAULT_THRESHOLD)
            e_a = plan.embeddings

            genuine = SpeakerInventory(list(inv.profiles[:inv.true_count]),
                                       inv.true_count)
            scores = self.speaker_scores(e_a, h_asr, h_spk, genuine)
            att = attention_weights(scores)
            d_bar = weighted_profile(att, genuine)
            speaker_ids = assign_speakers(att, genuine)

            logits = self.asr_decode(e_a, h_asr, d_bar)
            if logits.data.shape[0] == 0:
                return Hypothesis([], [], [])
            posterior = softmax(logits, axis=1).data
            tokens = list(np.argmax(posterior, axis=1))
            confidences = list(posterior.max(axis=1))
        return Hypothesis(tokens=[int(t) for t in tokens],
                          speaker_ids=speaker_ids,
                          scores=[float(c) for c in confidences])


class ArBaselineModel(Module):
    """Architecture mirror of the parallel decoder with causal masking and
    token-by-token greedy emission; exists for the latency comparison.
    ``decoder_calls`` counts steps executed (the stopping step included)."""

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        rng = np.random.default_rng(seed)
        d = cfg.attn.model_dim
        self.cfg = cfg
        self.decoder_calls = 0
        self.eos_id = cfg.vocab_size
        self.bos_id = cfg.vocab_size + 1

        self.asr_input = Linear(cfg.feature_dim, d, rng)
        self.asr_layers = [EncoderLayer(cfg.attn, rng)
                           for _ in range(cfg.encoder_layers)]
        self.token_embed = Embedding(cfg.vocab_size + 2, d, rng)
        self.dec_first = FusedFirstDecoderLayer(cfg.attn, rng)
        self.dec_layers = [DecoderLayer(cfg.attn, rng, self_attention=True)
                           for _ in range(cfg.decoder_layers - 1)]
        self.out_proj = Linear(d, cfg.vocab_size + 1, rng)

    def encode(self, x: Tensor) -> Tensor:
        h = self.asr_input(x)
        h = h + Tensor(positional_encoding(h.data.shape[0], h.data.shape[1]))
        for layer in self.asr_layers:
            h = layer(h)
        return h

    def decode_prefix(self, prefix_ids, h_asr: Tensor) -> Tensor:
        """One decoder pass over the whole prefix, causally masked."""
        self.decoder_calls += 1
        length = len(prefix_ids)
        e = self.token_embed(np.asarray(prefix_ids, dtype=np.intp))
        e = e + Tensor(positional_encoding(length, e.data.shape[1]))
        mask = causal_mask(length)
        e = self.dec_first(e, h_asr)
        for layer in self.dec_layers:
            e = layer(e, h_asr, self_mask=mask)
        return self.out_proj(e)

    def teacher_forced_logits(self, x: Tensor, y_true) -> Tensor:
        """Single causally masked pass; position i predicts target i, with a
        trailing end-of-sequence slot."""
        h_asr = self.encode(x)
        return self.decode_prefix([self.bos_id] + list(y_true), h_asr)

    def greedy_infer(self, x: Tensor, inv: SpeakerInventory, max_len: int,
                     forbid_eos: bool = False) -> Hypothesis:
        """Greedy decoding, one decoder pass per step; stops on the
        end-of-sequence token or at ``max_len`` emitted tokens. The baseline
        does not attribute speakers."""
        if max_len < 1:
            raise ContractError(f"max_len must be >= 1, got {max_len}")
        with no_grad():
            h_asr = self.encode(x)
            tokens: list = []
            confidences: list = []
            while len(tokens) < max_len:
                logits = self.decode_prefix([self.bos_id] + tokens, h_asr)
                row = logits.data[-1]
                if forbid_eos:
                    row = row[:self.eos_id]
                shifted = np.exp(row - row.max())
                posterior = shifted / shifted.sum()
                tok = int(np.argmax(row))
                if tok == self.eos_id:
                    break
                tokens.append(tok)
                confidences.append(float(posterior.max()))
        return Hypothesis(tokens=tokens, speaker_ids=[""] * len(tokens),
                          scores=confidences)


# -- checkpoint format -------------------------------------------------------

def save_checkpoint(path, model, extra: dict | None = None):
    """Flat named-parameter file: magic, JSON config header, then one
    (name, shape, float64 payload) record per parameter."""
    kind = "ar" if isinstance(model, ArBaselineModel) else "nar"
    header = {"kind": kind, "config": model.cfg.to_dict()}
    if model.cfg.use_cc_separator:
        header["separator_id"] = model.cfg.separator_id
    if extra:
        header["extra"] = extra
    params = model.parameters()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        blob = json.dumps(header, sort_keys=True).encode("utf-8")
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<I", len(params)))
        for p in params:
            name = p.name.encode("utf-8")
            fh.write(struct.pack("<I", len(name)))
            fh.write(name)
            shape = p.tensor.data.shape
            fh.write(struct.pack("<I", len(shape)))
            fh.write(struct.pack(f"<{len(shape)}I", *shape))
            fh.write(p.tensor.data.astype("<f8").tobytes())


def load_checkpoint(path):
    """Returns (model, header). The model class follows the header kind."""
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ContractError(f"not a checkpoint file: bad magic {magic!r}")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        cfg = ModelConfig.from_dict(header["config"])
        model = (ArBaselineModel(cfg) if header["kind"] == "ar"
                 else SaAsrModel(cfg))
        by_name = {p.name: p.tensor for p in model.parameters()}
        (n_params,) = struct.unpack("<I", fh.read(4))
        seen = set()
        for _ in range(n_params):
            (nlen,) = struct.unpack("<I", fh.read(4))
            name = fh.read(nlen).decode("utf-8")
            (ndim,) = struct.unpack("<I", fh.read(4))
            shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim)) if ndim else ()
            count = int(np.prod(shape)) if shape else 1
            payload = np.frombuffer(fh.read(8 * count), dtype="<f8")
            if name not in by_name:
                raise ContractError(f"unknown parameter {name!r} in checkpoint")
            if by_name[name].data.shape != tuple(shape):
                raise ContractError(
                    f"parameter {name!r} shape {tuple(shape)} does not match "
                    f"model {by_name[name].data.shape}")
            by_name[name].data = payload.reshape(shape).astype(np.float64)
            seen.add(name)
        missing = set(by_name) - seen
        if missing:
            raise ContractError(f"checkpoint missing parameters: {sorted(missing)}")
    return model, header
