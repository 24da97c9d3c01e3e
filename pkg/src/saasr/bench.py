"""Latency benchmark: wall-clock real-time factor of parallel versus greedy
autoregressive decoding at matched model sizes, bucketed by output length."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .metrics import RTFReport, rtf_measure
from .model import ArBaselineModel, SaAsrModel, load_checkpoint
from .speaker import SpeakerInventory, SpeakerProfile
from .tensor import Tensor

FRAME_SHIFT_MS = 8.0
FRAMES_PER_OUTPUT = 3


@dataclass
class BenchRow:
    length: int
    rtf_nar: float
    rtf_ar: float

    @property
    def ratio(self) -> float:
        return self.rtf_ar / self.rtf_nar


@dataclass
class BenchResult:
    nar: RTFReport
    ar: RTFReport
    rows: list = field(default_factory=list)

    def table(self) -> str:
        lines = [f"{'len':>5} {'rtf_nar':>10} {'rtf_ar':>10} {'ar/nar':>8}"]
        for row in self.rows:
            lines.append(f"{row.length:>5} {row.rtf_nar:>10.4f} "
                         f"{row.rtf_ar:>10.4f} {row.ratio:>8.2f}")
        lines.append(f"total rtf: nar {self.nar.rtf:.4f}  ar {self.ar.rtf:.4f}  "
                     f"ratio {self.ar.rtf / self.nar.rtf:.2f}")
        return "\n".join(lines)


def _check_matched(nar_cfg, ar_cfg):
    same = (nar_cfg.attn == ar_cfg.attn
            and nar_cfg.encoder_layers == ar_cfg.encoder_layers
            and nar_cfg.decoder_layers == ar_cfg.decoder_layers
            and nar_cfg.vocab_size == ar_cfg.vocab_size
            and nar_cfg.feature_dim == ar_cfg.feature_dim)
    if not same:
        raise ConfigError(
            "refusing to compare: model configurations are not matched "
            f"({nar_cfg} vs {ar_cfg})")


def _rig_output_length(model: SaAsrModel, target_len: int, frames: int):
    """Point the weight predictor at a constant weight whose sum crosses the
    threshold exactly ``target_len`` times over ``frames`` frames."""
    p = (target_len + 0.5) / frames
    model.predictor.proj.w.data[:] = 0.0
    model.predictor.proj.b.data[:] = np.log(p / (1.0 - p))


def bench_rtf(nar_ckpt, ar_ckpt, lengths, seed: int = 0,
              frames_per_output: int = FRAMES_PER_OUTPUT,
              frame_shift_ms: float = FRAME_SHIFT_MS,
              repeats: int = 5) -> BenchResult:
    """For each requested output length, synthesize inputs driving that
    length, then time parallel decodes against greedy decodes forced to
    emit the same number of tokens. Each bucket sums ``repeats`` decodes so
    short buckets are not at the mercy of scheduler jitter. Runs serially;
    warm-ups excluded."""
    nar_model, _ = load_checkpoint(nar_ckpt)
    ar_model, _ = load_checkpoint(ar_ckpt)
    if not isinstance(nar_model, SaAsrModel) or \
            not isinstance(ar_model, ArBaselineModel):
        raise ConfigError("bench needs one parallel and one autoregressive "
                          "checkpoint, in that order")
    _check_matched(nar_model.cfg, ar_model.cfg)

    rng = np.random.default_rng(seed)
    d_spk = nar_model.cfg.d_spk
    inv = SpeakerInventory(
        [SpeakerProfile(f"bench{i}", rng.normal(size=d_spk)) for i in range(2)],
        true_count=2)

    rows = []
    nar_total_sec, ar_total_sec, audio_total = 0.0, 0.0, 0.0
    nar_breakdown, ar_breakdown = [], []
    for length in lengths:
        frames = frames_per_output * int(length)
        x = Tensor(rng.uniform(-1, 1, (frames, nar_model.cfg.feature_dim)))
        _rig_output_length(nar_model, int(length), frames)
        utts = [(frames, x)] * repeats

        nar_rep = rtf_measure(lambda feat: nar_model.nar_infer(feat, inv),
                              utts, frame_shift_ms)
        ar_rep = rtf_measure(
            lambda feat: ar_model.greedy_infer(feat, inv, max_len=int(length),
                                               forbid_eos=True),
            utts, frame_shift_ms)
        rows.append(BenchRow(length=int(length), rtf_nar=nar_rep.rtf,
                             rtf_ar=ar_rep.rtf))
        nar_total_sec += nar_rep.total_inference_seconds
        ar_total_sec += ar_rep.total_inference_seconds
        audio_total += nar_rep.total_audio_seconds
        nar_breakdown.extend(nar_rep.per_length_breakdown)
        ar_breakdown.extend(ar_rep.per_length_breakdown)

    nar_report = RTFReport(nar_total_sec, audio_total,
                           nar_total_sec / audio_total, nar_breakdown)
    ar_report = RTFReport(ar_total_sec, audio_total,
                          ar_total_sec / audio_total, ar_breakdown)
    return BenchResult(nar=nar_report, ar=ar_report, rows=rows)
