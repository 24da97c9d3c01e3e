"""Command-line surface: data generation, training, evaluation, the latency
benchmark, and the gradient self-check."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .bench import bench_rtf
from .data import (SynthSpec, generate_dataset, parse_flat_config,
                   read_dataset, spec_from_pairs, write_dataset)
from .diagnostics import run_gradient_suite
from .errors import ConfigError, ContractError, ShapeError
from .losses import LossWeights
from .model import ModelConfig
from .nn import AttentionConfig
from .training import TrainConfig, evaluate, train


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="saasr",
        description="Speaker-attributed parallel-decoding ASR on synthetic "
                    "multi-speaker data")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-data", help="generate a synthetic dataset")
    gen.add_argument("--config", help="flat key=value dataset spec file")
    gen.add_argument("--out", required=True, help="output directory")
    gen.add_argument("--seed", type=int, help="override the spec seed")

    tr = sub.add_parser("train", help="train a model on a dataset directory")
    tr.add_argument("--data", required=True)
    tr.add_argument("--out", required=True,
                    help="output directory for checkpoint and manifest")
    tr.add_argument("--config", help="flat key=value training config file")
    tr.add_argument("--seed", type=int, help="override the config seed")

    ev = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--out", help="write session-level score lines here")

    be = sub.add_parser("bench", help="parallel vs autoregressive latency")
    be.add_argument("--nar", required=True, help="parallel-model checkpoint")
    be.add_argument("--ar", required=True, help="autoregressive checkpoint")
    be.add_argument("--lengths", default="8,16,32,64",
                    help="comma-separated output lengths")
    be.add_argument("--seed", type=int, default=0)
    be.add_argument("--out", help="write the ratio table here")

    gc = sub.add_parser("grad-check", help="run the gradient self-check suite")
    gc.add_argument("--seed", type=int, default=0)
    gc.add_argument("--tolerance", type=float, default=1e-4)
    return parser


# -- config plumbing -----------------------------------------------------------

TRAIN_INT_KEYS = {"epochs", "batch_size", "warmup_steps", "seed",
                  "interfering_m", "stage1_epochs", "early_stop_patience"}
TRAIN_FLOAT_KEYS = {"learning_rate"}
TRAIN_BOOL_KEYS = {"fill_speakers_enabled"}
MODEL_INT_KEYS = {"vocab_size", "feature_dim", "encoder_layers",
                  "decoder_layers", "speaker_encoder_layers", "d_spk",
                  "inter_ctc_layer"}
MODEL_FLOAT_KEYS = {"sampling_factor_lambda"}
MODEL_BOOL_KEYS = {"use_cc_separator"}
ATTN_KEYS = {"model_dim", "num_heads", "ff_dim"}
LOSS_KEYS = {"lambda1", "lambda2"}


def _parse_bool(value: str) -> bool:
    if value.lower() in ("1", "true", "yes", "on"):
        return True
    if value.lower() in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {value!r}")


def train_config_from_pairs(pairs: dict, dataset_spec: SynthSpec) -> TrainConfig:
    """Assemble a TrainConfig from flat dotted keys; model vocab and feature
    dims default to the dataset's."""
    model_kwargs = {"vocab_size": dataset_spec.vocab_size,
                    "feature_dim": dataset_spec.feature_dim,
                    "d_spk": dataset_spec.feature_dim}
    attn_kwargs = {}
    loss_kwargs = {}
    train_kwargs = {}
    for key, value in pairs.items():
        if key.startswith("model.attn."):
            sub = key[len("model.attn."):]
            if sub not in ATTN_KEYS:
                raise ConfigError(f"unknown key {key!r}")
            attn_kwargs[sub] = int(value)
        elif key.startswith("model."):
            sub = key[len("model."):]
            if sub in MODEL_INT_KEYS:
                model_kwargs[sub] = int(value)
            elif sub in MODEL_FLOAT_KEYS:
                model_kwargs[sub] = float(value)
            elif sub in MODEL_BOOL_KEYS:
                model_kwargs[sub] = _parse_bool(value)
            else:
                raise ConfigError(f"unknown key {key!r}")
        elif key.startswith("loss."):
            sub = key[len("loss."):]
            if sub not in LOSS_KEYS:
                raise ConfigError(f"unknown key {key!r}")
            loss_kwargs[sub] = float(value)
        elif key in TRAIN_INT_KEYS:
            train_kwargs[key] = int(value)
        elif key in TRAIN_FLOAT_KEYS:
            train_kwargs[key] = float(value)
        elif key in TRAIN_BOOL_KEYS:
            train_kwargs[key] = _parse_bool(value)
        else:
            raise ConfigError(f"unknown key {key!r}")
    if attn_kwargs:
        model_kwargs["attn"] = AttentionConfig(
            model_dim=attn_kwargs.get("model_dim", 32),
            num_heads=attn_kwargs.get("num_heads", 4),
            ff_dim=attn_kwargs.get("ff_dim", 64))
    return TrainConfig(model=ModelConfig(**model_kwargs),
                       loss=LossWeights(**loss_kwargs), **train_kwargs)


# -- subcommands -----------------------------------------------------------------

def _cmd_gen_data(args) -> int:
    pairs = parse_flat_config(Path(args.config).read_text()) if args.config else {}
    spec = spec_from_pairs(pairs)
    if args.seed is not None:
        spec.seed = args.seed
    dataset = generate_dataset(spec)
    write_dataset(args.out, dataset)
    total_frames = sum(s.frames for s in dataset.sessions)
    print(f"wrote {len(dataset.sessions)} sessions "
          f"({total_frames} frames) to {args.out}")
    return 0


def _cmd_train(args) -> int:
    dataset = read_dataset(args.data)
    pairs = parse_flat_config(Path(args.config).read_text()) if args.config else {}
    cfg = train_config_from_pairs(pairs, dataset.spec)
    if args.seed is not None:
        cfg.seed = args.seed
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg.checkpoint_path = str(out / "model.ckpt")
    manifest = train(cfg, dataset)
    manifest.save(out / "manifest.json")
    if manifest.diverged_at_step is not None:
        print(f"training diverged at step {manifest.diverged_at_step}; "
              f"manifest written to {out / 'manifest.json'}", file=sys.stderr)
        return 1
    last = manifest.epoch_log[-1]
    print(f"trained {len(manifest.epoch_log)} epochs; "
          f"final total {last['total']:.4f}, ce {last['ce']:.4f}; "
          f"checkpoint at {cfg.checkpoint_path}")
    return 0


def _cmd_eval(args) -> int:
    dataset = read_dataset(args.data)
    report = evaluate(args.checkpoint, dataset)
    for line in report.session_lines:
        print(line)
    print(report.summary)
    if args.out:
        Path(args.out).write_text("\n".join(report.session_lines)
                                  + "\n" + report.summary + "\n")
    return 0


def _cmd_bench(args) -> int:
    lengths = [int(v) for v in args.lengths.split(",") if v]
    if not lengths:
        raise ConfigError("--lengths must name at least one output length")
    result = bench_rtf(args.nar, args.ar, lengths, seed=args.seed)
    print(result.table())
    if args.out:
        Path(args.out).write_text(result.table() + "\n")
    return 0


def _cmd_grad_check(args) -> int:
    results = run_gradient_suite(seed=args.seed, tolerance=args.tolerance)
    all_pass = True
    for name, report in results:
        status = "PASS" if report.passed else "FAIL"
        all_pass = all_pass and report.passed
        print(f"{status}  max rel err {report.worst:10.3e}  {name}")
    print("gradient suite:", "PASS" if all_pass else "FAIL")
    return 0 if all_pass else 1


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    handlers = {"gen-data": _cmd_gen_data, "train": _cmd_train,
                "eval": _cmd_eval, "bench": _cmd_bench,
                "grad-check": _cmd_grad_check}
    try:
        return handlers[args.command](args)
    except (ConfigError, ContractError, ShapeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
