"""Training loop, optimizer, evaluation driver, and run manifests."""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cif import mae_loss
from .data import Dataset, dataset_hash
from .errors import ConfigError, ContractError
from .losses import (CTC_INFEASIBLE_PENALTY, LossWeights, ce_loss,
                     composite_loss, ctc_is_infeasible, ctc_loss,
                     speaker_loss)
from .metrics import EditCounts, SDCERReport, edit_align, sd_cer
from .model import (ModelConfig, SaAsrModel, load_checkpoint, save_checkpoint)
from .speaker import add_interfering
from .tensor import Tensor, no_grad
from .tsot import deserialize, serialize, strip_separators


@dataclass
class TrainConfig:
    model: ModelConfig
    loss: LossWeights = field(default_factory=LossWeights)
    epochs: int = 60
    batch_size: int = 4
    learning_rate: float = 3e-3
    warmup_steps: int = 200
    seed: int = 0
    checkpoint_path: str | None = None
    fill_speakers_enabled: bool = True
    interfering_m: int = 2
    stage1_epochs: int = 0          # speaker-agnostic warm start
    early_stop_patience: int = 5

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.warmup_steps < 1:
            raise ConfigError("epochs, batch_size and warmup_steps must be positive")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be nonnegative")
        if self.interfering_m < 0:
            raise ConfigError("interfering_m must be nonnegative")


class Adam:
    """Adam with a warmup-then-inverse-sqrt learning-rate schedule."""

    def __init__(self, parameters, lr: float, warmup_steps: int = 200,
                 betas=(0.9, 0.999), eps: float = 1e-8):
        self.parameters = list(parameters)
        self.lr = lr
        self.warmup = warmup_steps
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.tensor.data) for p in self.parameters]
        self.v = [np.zeros_like(p.tensor.data) for p in self.parameters]

    def current_lr(self) -> float:
        t = max(self.t, 1)
        return self.lr * min(t / self.warmup, math.sqrt(self.warmup / t))

    def step(self):
        self.t += 1
        lr_t = self.current_lr()
        # overflow on exploding gradients saturates to inf; the training
        # loop detects the blow-up as divergence on the following batch
        with np.errstate(over="ignore"):
            for i, p in enumerate(self.parameters):
                g = p.tensor.grad
                if g is None:
                    continue
                self.m[i] = self.b1 * self.m[i] + (1 - self.b1) * g
                self.v[i] = self.b2 * self.v[i] + (1 - self.b2) * (g * g)
                m_hat = self.m[i] / (1 - self.b1 ** self.t)
                v_hat = self.v[i] / (1 - self.b2 ** self.t)
                p.tensor.data -= lr_t * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self):
        for p in self.parameters:
            p.tensor.zero_grad()


@dataclass
class RunManifest:
    config: dict
    data_hash: str
    epoch_log: list = field(default_factory=list)
    final_metrics: dict = field(default_factory=dict)
    diverged_at_step: int | None = None
    stopped_early_at_epoch: int | None = None
    infeasible_ctc_events: int = 0
    wall_seconds: float = 0.0

    def save(self, path):
        Path(path).write_text(json.dumps(self.__dict__, indent=2,
                                         sort_keys=True, default=str))


@dataclass
class SessionBatchItem:
    session_id: str
    features: Tensor
    target_tokens: list
    speaker_indices: list
    inventory: object          # possibly augmented
    sampler_seed: int
    fill_seed: int


def _session_targets(sess, use_separator: bool, separator_id: int | None):
    target = serialize(sess.tokens, with_separator=use_separator,
                       separator_id=separator_id if use_separator else None)
    indices = [sess.inventory.index_of(lab) for lab in target.speaker_labels]
    return target.tokens, indices


def prepare_batch_items(dataset: Dataset, cfg: TrainConfig) -> list:
    """Targets, augmented inventories, and per-session seeds, fixed for the
    whole run so a frozen model sees identical batches every epoch."""
    model_cfg = cfg.model
    items = []
    for i, sess in enumerate(dataset.sessions):
        tokens, indices = _session_targets(
            sess, model_cfg.use_cc_separator, model_cfg.separator_id)
        inv = sess.inventory
        if cfg.interfering_m > 0:
            pool = dataset.profile_pool(sess.session_id)
            inv = add_interfering(inv, pool, cfg.interfering_m,
                                  seed=cfg.seed * 100003 + i)
        items.append(SessionBatchItem(
            session_id=sess.session_id,
            features=Tensor(sess.features),
            target_tokens=tokens,
            speaker_indices=indices,
            inventory=inv,
            sampler_seed=cfg.seed * 65537 + i,
            fill_seed=cfg.seed * 131071 + i))
    return items


def session_losses(model: SaAsrModel, item: SessionBatchItem,
                   weights: LossWeights, fill_to: int | None,
                   speaker_weight: float = 1.0,
                   first_tokens_override=None):
    """Full composite loss for one session. Returns (breakdown, infeasible)."""
    trace = model.two_pass_train_forward(
        item.features, item.target_tokens, item.speaker_indices,
        item.inventory, sampler_seed=item.sampler_seed, fill_to=fill_to,
        fill_seed=item.fill_seed, first_tokens_override=first_tokens_override)
    n_tokens = len(item.target_tokens)
    mae = mae_loss(trace.weights, n_tokens)
    infeasible = 0
    ctc = ctc_loss(model.ctc_head(trace.h_asr), item.target_tokens)
    if ctc_is_infeasible(ctc):
        ctc = Tensor(CTC_INFEASIBLE_PENALTY)
        infeasible += 1
    inter = ctc_loss(model.inter_ctc_head(trace.h_inter), item.target_tokens)
    if ctc_is_infeasible(inter):
        inter = Tensor(CTC_INFEASIBLE_PENALTY)
        infeasible += 1
    ce = ce_loss(trace.second_pass_logits, item.target_tokens)
    spk = speaker_loss(trace.cosine, item.speaker_indices)
    if speaker_weight != 1.0:
        spk = spk * speaker_weight
    return composite_loss(mae=mae, ctc=ctc, inter_ctc=inter, ce=ce,
                          speaker=spk, weights=weights), infeasible


def train(cfg: TrainConfig, dataset: Dataset,
          init_model: SaAsrModel | None = None) -> RunManifest:
    """Run the optimizer over the dataset; logs one loss breakdown per epoch,
    checkpoints every epoch, stops early on a total-loss plateau, and aborts
    (with the step recorded) if the loss goes non-finite."""
    if not dataset.sessions:
        raise ContractError("training data is empty")
    if dataset.spec.feature_dim != cfg.model.feature_dim:
        raise ConfigError(
            f"feature_dim mismatch: data {dataset.spec.feature_dim} "
            f"vs model {cfg.model.feature_dim}")
    if dataset.spec.vocab_size != cfg.model.vocab_size:
        raise ConfigError(
            f"vocab mismatch: data {dataset.spec.vocab_size} "
            f"vs model {cfg.model.vocab_size}")

    started = time.perf_counter()
    model = init_model if init_model is not None else SaAsrModel(
        cfg.model, seed=cfg.seed)
    params = model.parameters()
    opt = Adam(params, lr=cfg.learning_rate, warmup_steps=cfg.warmup_steps)
    items = prepare_batch_items(dataset, cfg)
    fill_to = None
    if cfg.fill_speakers_enabled:
        # one slot past the largest augmented inventory, so every session
        # sees at least one disturbance column
        fill_to = max(it.inventory.size for it in items) + 1

    manifest = RunManifest(
        config={"train": {k: v for k, v in vars(cfg).items()
                          if k not in ("model", "loss")},
                "model": cfg.model.to_dict(),
                "loss": vars(cfg.loss)},
        data_hash=dataset_hash(dataset))

    order_rng = np.random.default_rng(cfg.seed)
    best_total = math.inf
    stale_epochs = 0
    step = 0
    for epoch in range(cfg.epochs):
        speaker_weight = 0.0 if epoch < cfg.stage1_epochs else 1.0
        order = order_rng.permutation(len(items))
        sums = {"mae": 0.0, "ctc": 0.0, "inter_ctc": 0.0, "ce": 0.0,
                "speaker": 0.0, "total": 0.0}
        for start in range(0, len(order), cfg.batch_size):
            batch = [items[j] for j in order[start:start + cfg.batch_size]]
            opt.zero_grad()
            batch_total = None
            step += 1
            try:
                for item in batch:
                    breakdown, infeasible = session_losses(
                        model, item, cfg.loss, fill_to, speaker_weight)
                    manifest.infeasible_ctc_events += infeasible
                    for key in sums:
                        sums[key] += getattr(breakdown, key).item()
                    scaled = breakdown.total * (1.0 / len(batch))
                    batch_total = scaled if batch_total is None else \
                        batch_total + scaled
                diverged = not math.isfinite(batch_total.item())
            except ContractError:
                # saturated or non-finite activations violate op contracts
                # (softmax finiteness, degenerate predictor weights); in a
                # run that was healthy at step one this is numeric blow-up
                diverged = True
            if diverged:
                manifest.diverged_at_step = step
                manifest.wall_seconds = time.perf_counter() - started
                return manifest
            batch_total.backward()
            opt.step()
        epoch_mean = {k: v / len(items) for k, v in sums.items()}
        epoch_mean["epoch"] = epoch
        epoch_mean["lr"] = opt.current_lr()
        manifest.epoch_log.append(epoch_mean)
        if cfg.checkpoint_path:
            save_checkpoint(cfg.checkpoint_path, model,
                            extra={"epoch": epoch})
        if epoch_mean["total"] < best_total - 1e-6:
            best_total = epoch_mean["total"]
            stale_epochs = 0
        else:
            stale_epochs += 1
            if stale_epochs >= cfg.early_stop_patience:
                manifest.stopped_early_at_epoch = epoch
                break
    manifest.final_metrics["train_total"] = manifest.epoch_log[-1]["total"]
    manifest.final_metrics["train_ce"] = manifest.epoch_log[-1]["ce"]
    manifest.wall_seconds = time.perf_counter() - started
    return manifest


# -- evaluation ----------------------------------------------------------------

@dataclass
class EvalReport:
    sd: SDCERReport
    merged: EditCounts
    session_lines: list
    summary: str


def _reference_maps(sess, use_separator: bool, separator_id: int | None):
    target = serialize(sess.tokens, with_separator=use_separator,
                       separator_id=separator_id if use_separator else None)
    stripped = strip_separators(target)
    refs = {}
    for tok, lab in zip(stripped.tokens, stripped.speaker_labels):
        refs.setdefault(lab, []).append(tok)
    return refs, stripped.tokens


def evaluate(model_or_path, dataset: Dataset,
             with_separator: bool | None = None) -> EvalReport:
    """Parallel-decode every session, regroup per speaker according to the
    serialization mode, and score speaker-dependent and merged error rates."""
    if isinstance(model_or_path, (str, Path)):
        model, _ = load_checkpoint(model_or_path)
    else:
        model = model_or_path
    cfg = model.cfg
    if cfg.vocab_size != dataset.spec.vocab_size:
        raise ConfigError(
            f"vocab mismatch: checkpoint {cfg.vocab_size} "
            f"vs data {dataset.spec.vocab_size}")
    if cfg.feature_dim != dataset.spec.feature_dim:
        raise ConfigError(
            f"feature_dim mismatch: checkpoint {cfg.feature_dim} "
            f"vs data {dataset.spec.feature_dim}")
    mode = cfg.use_cc_separator if with_separator is None else with_separator
    sep = cfg.separator_id if mode else None

    all_refs = {}
    all_hyps = {}
    merged = EditCounts()
    lines = []
    for sess in dataset.sessions:
        refs, merged_ref = _reference_maps(sess, mode, sep)
        hyp = model.nar_infer(Tensor(sess.features), sess.inventory)
        groups = deserialize(hyp, with_separator=mode, separator_id=sep)
        hyp_merged = [t for t in hyp.tokens if sep is None or t != sep]

        session_sd = sd_cer(refs, groups)
        session_merged = edit_align(merged_ref, hyp_merged)
        merged = merged + session_merged
        all_refs.update(refs)
        all_hyps.update(groups)
        lines.append(
            f"session={sess.session_id} sd_cer={session_sd.sd_cer:.1f} "
            f"ins={session_merged.ins} del={session_merged.dels} "
            f"sub={session_merged.sub} ref_len={session_merged.ref_len} "
            f"hyp_len={len(hyp_merged)}")

    sd = sd_cer(all_refs, all_hyps)
    summary = (
        f"SD-CER {sd.sd_cer:.1f}% over {sd.total_ref_len} reference tokens | "
        f"merged CER {merged.cer:.1f}% "
        f"(Ins {merged.ins} Del {merged.dels} Sub {merged.sub})")
    return EvalReport(sd=sd, merged=merged, session_lines=lines,
                      summary=summary)


def validation_ce(model: SaAsrModel, dataset: Dataset) -> float:
    """Teacher-forced cross entropy without the sampler: weights scaled to
    the target length, a single decoder pass on pure acoustic embeddings."""
    from .cif import integrate_and_fire, scale_weights
    from .speaker import attention_weights, weighted_profile
    cfg = model.cfg
    total, count = 0.0, 0
    with no_grad():
        for sess in dataset.sessions:
            tokens, _ = _session_targets(sess, cfg.use_cc_separator,
                                         cfg.separator_id)
            x = Tensor(sess.features)
            h_asr, _ = model.asr_encode(x)
            h_spk = model.speaker_encode(x)
            weights = model.predictor(h_asr)
            plan = integrate_and_fire(h_asr, scale_weights(weights, len(tokens)))
            scores = model.speaker_scores(plan.embeddings, h_asr, h_spk,
                                          sess.inventory)
            att = attention_weights(scores)
            d_bar = weighted_profile(att, sess.inventory)
            logits = model.asr_decode(plan.embeddings, h_asr, d_bar)
            total += ce_loss(logits, tokens).item() * len(tokens)
            count += len(tokens)
    return total / max(count, 1)
