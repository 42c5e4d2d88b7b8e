"""Supervised training and the two self-supervised refinement stages.

Both network modules follow the same recipe: supervised cross-entropy
with early stopping on a stratified validation split, retrain on the
full training data for the selected epoch count, then a self-supervised
pass that fine-tunes the feature extractor theta against a slow EMA copy
phi while the classifier head psi stays frozen.

The prescreening SSL pushes embeddings of real trials away from
embeddings of synthetic rest/MI transition mixtures; the classification
SSL pulls together two augmented views of each trial. Loss terms are
Gaussian kernel similarities of L2-normalized embeddings, summed over
the batch inside a single exponential.

Training-time network inputs are random crops of length input_len from
the stored trials (center crops for evaluation), so the trained shape
equals the streaming window shape.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from . import model
from .augment import AugmentParams, pick_two_distinct
from .dataio import Trial, TrialSet
from .model import ModelBundle

logger = logging.getLogger(__name__)

LogFn = Callable[[dict], None]

SSL_FULL_BATCH_LIMIT = 256
SSL_BATCH_SIZE = 128


@dataclass(frozen=True)
class SupervisedConfig:
    lr: float = 5e-4
    patience: int = 30
    max_epochs: int = 200
    batch_size: int = 8
    valid_fraction: float = 0.4
    seed: int = 0

    def validate(self) -> None:
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if not 0 < self.valid_fraction < 1:
            raise ValueError(f"valid_fraction must be in (0,1), got {self.valid_fraction}")
        if self.lr <= 0 or self.max_epochs < 1 or self.batch_size < 2:
            raise ValueError("bad supervised config")


@dataclass(frozen=True)
class SslConfig:
    delta: float = 0.3
    sigma: float = 2.0
    ema_lambda: float = 0.9995
    lr_ssl: float = 5e-5
    epochs_ssl: int = 40

    def validate(self) -> None:
        if self.delta < 0:
            raise ValueError("delta must be >= 0")
        if self.sigma <= 0:
            raise ValueError("sigma must be > 0")
        if not 0 < self.ema_lambda < 1:
            raise ValueError(f"ema_lambda must be in (0,1), got {self.ema_lambda}")
        if self.lr_ssl <= 0 or self.epochs_ssl < 0:
            raise ValueError("bad SSL config")


@dataclass
class TransitionTrial:
    """Synthetic boundary sample: the elementwise mean of one rest trial
    and one MI trial from the binary set."""

    samples: np.ndarray
    rest_index: int
    mi_index: int


def jsonl_logger(fh) -> LogFn:
    """Metrics sink writing one sorted-key JSON object per line."""

    def log(record: dict) -> None:
        fh.write(json.dumps(record, sort_keys=True) + "\n")

    return log


# ---------------------------------------------------------------------------
# Data plumbing


def split_train_valid(tset: TrialSet, valid_fraction: float, seed: int) -> tuple[TrialSet, TrialSet]:
    """Stratified split; every class contributes round(fraction * n) trials
    to the validation side, at least 1 and at most n - 1."""
    if not 0 < valid_fraction < 1:
        raise ValueError(f"valid_fraction must be in (0,1), got {valid_fraction}")
    if not tset.trials:
        raise ValueError("cannot split an empty trial set")
    rng = np.random.default_rng(seed)
    labels = tset.labels()
    train_idx: list[int] = []
    valid_idx: list[int] = []
    for cls in np.unique(labels):
        members = np.flatnonzero(labels == cls)
        if len(members) < 2:
            raise ValueError(f"class {cls} has {len(members)} trial(s); need >= 2 to split")
        rng.shuffle(members)
        n_valid = int(round(valid_fraction * len(members)))
        n_valid = min(max(n_valid, 1), len(members) - 1)
        valid_idx.extend(members[:n_valid])
        train_idx.extend(members[n_valid:])
    train_idx.sort()
    valid_idx.sort()
    mk = lambda idx: TrialSet(
        trials=[tset.trials[i] for i in idx], kind=tset.kind, class_names=tset.class_names
    )
    return mk(train_idx), mk(valid_idx)


def _label_indices(tset: TrialSet, n_classes: int) -> np.ndarray:
    """Map stored labels to 0-based head indices.

    Binary sets already use {0: rest, 1: MI}; multiclass sets use class
    codes 1..K which shift down by one.
    """
    labels = tset.labels()
    idx = labels if tset.kind == "binary" else labels - 1
    if idx.min() < 0 or idx.max() >= n_classes:
        raise ValueError(
            f"labels {sorted(set(labels.tolist()))} do not fit a {n_classes}-class head"
        )
    return idx


def _stack(trials: Sequence[Trial] | Sequence[TransitionTrial]) -> np.ndarray:
    return np.stack([t.samples for t in trials])


def crop_batch(
    batch: np.ndarray,
    input_len: int,
    rng: np.random.Generator | None = None,
    center: bool = False,
) -> np.ndarray:
    """Crop [N, ch, ts] to [N, ch, input_len]; random offset per trial
    unless center=True."""
    ts = batch.shape[-1]
    if ts < input_len:
        raise ValueError(f"trial length {ts} shorter than input length {input_len}")
    if ts == input_len:
        return batch
    if center:
        start = (ts - input_len) // 2
        return batch[..., start : start + input_len]
    if rng is None:
        raise ValueError("random crop requires an rng")
    offsets = rng.integers(0, ts - input_len + 1, size=batch.shape[0])
    return np.stack([b[..., o : o + input_len] for b, o in zip(batch, offsets)])


def _batch_plan(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Shuffled minibatches; a trailing singleton is folded into the
    previous batch so train-mode batchnorm always sees >= 2 rows."""
    perm = rng.permutation(n)
    batches = [perm[i : i + batch_size] for i in range(0, n, batch_size)]
    if len(batches) > 1 and len(batches[-1]) == 1:
        batches[-2] = np.concatenate([batches[-2], batches[-1]])
        batches.pop()
    return batches


def _check_finite(loss_value: float, stage: str, epoch: int) -> None:
    if not math.isfinite(loss_value):
        raise RuntimeError(f"non-finite loss {loss_value} in {stage} at epoch {epoch}")


def _zero_grads(params: dict[str, ad.Tensor]) -> None:
    for p in params.values():
        p.grad = None


def _grads(params: dict[str, ad.Tensor]) -> dict[str, np.ndarray]:
    return {k: (p.grad if p.grad is not None else np.zeros_like(p.data)) for k, p in params.items()}


# ---------------------------------------------------------------------------
# Early stopping


def early_stopping_trace(valid_accs: Sequence[float], patience: int) -> tuple[int, int]:
    """(best_epoch, last_epoch_run) for a validation-accuracy sequence.

    Training stops after the first epoch whose distance from the best
    epoch reaches `patience`; ties keep the earlier epoch.
    """
    best_epoch = 0
    best = -np.inf
    for epoch, acc in enumerate(valid_accs):
        if acc > best:
            best, best_epoch = acc, epoch
        if epoch - best_epoch >= patience:
            return best_epoch, epoch
    return best_epoch, len(valid_accs) - 1


# ---------------------------------------------------------------------------
# Supervised stage


def evaluate_accuracy(bundle: ModelBundle, tset: TrialSet) -> float:
    """Eval-mode accuracy on center crops."""
    x = crop_batch(_stack(tset.trials), bundle.config.input_len, center=True)
    y = _label_indices(tset, bundle.config.n_classes)
    probs = model.embed_and_classify(bundle, x, train=False)
    return float((probs.data.argmax(axis=1) == y).mean())


def _run_epochs(
    bundle: ModelBundle,
    tset: TrialSet,
    cfg: SupervisedConfig,
    n_epochs: int,
    rng: np.random.Generator,
    valid: TrialSet | None,
    log: LogFn | None,
    stage: str,
) -> list[float]:
    """Train in place for n_epochs; returns per-epoch validation accuracy
    (empty when valid is None)."""
    x_all = _stack(tset.trials)
    y_all = _label_indices(tset, bundle.config.n_classes)
    params = bundle.parameters()
    adam = ad.AdamState(lr=cfg.lr)
    accs: list[float] = []
    for epoch in range(n_epochs):
        losses = []
        for batch_idx in _batch_plan(len(tset.trials), cfg.batch_size, rng):
            x = crop_batch(x_all[batch_idx], bundle.config.input_len, rng=rng)
            logits = model.logits(
                bundle.psi,
                model.feature_extract(
                    bundle.config, bundle.theta, bundle.buffers, x,
                    train=True, rng=rng, update_buffers=True,
                ),
            )
            loss = ad.cross_entropy(logits, y_all[batch_idx])
            _check_finite(float(loss.data), stage, epoch)
            losses.append(float(loss.data))
            _zero_grads(params)
            loss.backward()
            ad.adam_step(adam, params, _grads(params))
        record = {"stage": stage, "epoch": epoch, "train_loss": float(np.mean(losses))}
        if valid is not None:
            acc = evaluate_accuracy(bundle, valid)
            accs.append(acc)
            record["valid_acc"] = acc
        if log:
            log(record)
        if valid is not None:
            best_epoch, _ = early_stopping_trace(accs, cfg.patience)
            if epoch - best_epoch >= cfg.patience:
                break
    return accs


def train_supervised(
    bundle: ModelBundle,
    train: TrialSet,
    valid: TrialSet,
    cfg: SupervisedConfig,
    log: LogFn | None = None,
) -> ModelBundle:
    """Early-stopped supervised training, then a fresh retrain on
    train + valid for the selected epoch count.

    The returned bundle is a new model trained on all the data; the
    input bundle supplies the architecture and is consumed as scratch.
    """
    cfg.validate()
    rng = np.random.default_rng([cfg.seed, 0])
    accs = _run_epochs(bundle, train, cfg, cfg.max_epochs, rng, valid, log, "supervised_search")
    best_epoch, _ = early_stopping_trace(accs, cfg.patience)
    n_final = best_epoch + 1
    if log:
        log({"stage": "supervised_search", "best_epoch": best_epoch, "retrain_epochs": n_final})
    final = model.init(bundle.config, cfg.seed)
    merged = TrialSet(
        trials=train.trials + valid.trials, kind=train.kind, class_names=train.class_names
    )
    rng_final = np.random.default_rng([cfg.seed, 1])
    _run_epochs(final, merged, cfg, n_final, rng_final, None, log, "supervised_final")
    return final


# ---------------------------------------------------------------------------
# SSL stages


def _mix_transitions(
    samples: Sequence[np.ndarray],
    rest_pool: np.ndarray,
    mi_pool: np.ndarray,
    n_out: int,
    rng: np.random.Generator,
) -> list[TransitionTrial]:
    out = []
    for _ in range(n_out):
        r = int(rng.choice(rest_pool))
        m = int(rng.choice(mi_pool))
        mixed = 0.5 * (samples[r] + samples[m])
        out.append(TransitionTrial(samples=mixed, rest_index=r, mi_index=m))
    return out


def make_transition_trials(
    binary_set: TrialSet, seed: int, n_out: int | None = None
) -> list[TransitionTrial]:
    """Negative samples for prescreening SSL: each is the mean of one
    uniformly drawn rest trial and one uniformly drawn MI trial. Default
    count equals the binary set size (2 per underlying MI trial)."""
    labels = binary_set.labels()
    rest_pool = np.flatnonzero(labels == 0)
    mi_pool = np.flatnonzero(labels == 1)
    if len(rest_pool) == 0 or len(mi_pool) == 0:
        raise ValueError("binary set must contain both rest and MI trials")
    rng = np.random.default_rng(seed)
    n_out = len(binary_set) if n_out is None else n_out
    return _mix_transitions(
        [t.samples for t in binary_set.trials], rest_pool, mi_pool, n_out, rng
    )


def ema_init(bundle: ModelBundle) -> None:
    bundle.phi = {name: t.data.copy() for name, t in bundle.theta.items()}


def ema_update(bundle: ModelBundle, lam: float) -> None:
    """phi <- lam * phi + (1 - lam) * theta, per parameter."""
    assert bundle.phi is not None
    for name, t in bundle.theta.items():
        bundle.phi[name] = lam * bundle.phi[name] + (1.0 - lam) * t.data


def _normalized_embedding(
    bundle: ModelBundle, params: dict[str, ad.Tensor], x: np.ndarray
) -> ad.Tensor:
    """Eval-mode embedding (frozen batchnorm buffers, no dropout),
    L2-normalized per row."""
    emb = model.feature_extract(bundle.config, params, bundle.buffers, x, train=False)
    return ad.l2_normalize(emb)


def _ssl_batches(n: int, rng: np.random.Generator) -> list[np.ndarray]:
    if n <= SSL_FULL_BATCH_LIMIT:
        return [np.arange(n)]
    perm = rng.permutation(n)
    return [perm[i : i + SSL_BATCH_SIZE] for i in range(0, n, SSL_BATCH_SIZE)]


def prescreen_ssl_loss(
    bundle: ModelBundle,
    x_real: np.ndarray,
    x_transition: np.ndarray,
    cfg: SslConfig,
) -> ad.Tensor:
    """delta * sim(theta(real), phi(transition)) - sim(theta(real), phi(real)),
    with Gaussian kernel similarity over the batch."""
    assert bundle.phi is not None, "ema_init must run before SSL"
    phi_params = model.as_param_tensors(bundle.phi)
    e_theta = _normalized_embedding(bundle, bundle.theta, x_real)
    e_phi_trans = _normalized_embedding(bundle, phi_params, x_transition)
    e_phi_real = _normalized_embedding(bundle, phi_params, x_real)
    negative = ad.gaussian_kernel_similarity(e_theta, e_phi_trans, cfg.sigma)
    positive = ad.gaussian_kernel_similarity(e_theta, e_phi_real, cfg.sigma)
    return ad.sub(ad.mul(negative, ad.Tensor(cfg.delta)), positive)


def classification_ssl_loss(
    bundle: ModelBundle,
    view1: np.ndarray,
    view2: np.ndarray,
    cfg: SslConfig,
) -> ad.Tensor:
    """-sim(theta(view1), phi(view2)) with Gaussian kernel similarity."""
    assert bundle.phi is not None, "ema_init must run before SSL"
    phi_params = model.as_param_tensors(bundle.phi)
    e_theta = _normalized_embedding(bundle, bundle.theta, view1)
    e_phi = _normalized_embedding(bundle, phi_params, view2)
    return ad.mul(ad.gaussian_kernel_similarity(e_theta, e_phi, cfg.sigma), ad.Tensor(-1.0))


def _ssl_step(
    bundle: ModelBundle,
    adam: ad.AdamState,
    loss: ad.Tensor,
    cfg: SslConfig,
    stage: str,
    epoch: int,
) -> float:
    _check_finite(float(loss.data), stage, epoch)
    _zero_grads(bundle.theta)
    loss.backward()
    ad.adam_step(adam, bundle.theta, _grads(bundle.theta))
    ema_update(bundle, cfg.ema_lambda)
    return float(loss.data)


def ssl_prescreen(
    bundle: ModelBundle,
    binary_set: TrialSet,
    transitions: list[TransitionTrial],
    cfg: SslConfig,
    seed: int = 0,
    log: LogFn | None = None,
) -> ModelBundle:
    """Self-supervised refinement of the prescreening feature extractor.

    Real trials and transition trials are paired index-to-index; only
    theta receives gradients, phi follows by EMA, psi is untouched.
    """
    cfg.validate()
    if len(transitions) != len(binary_set):
        raise ValueError(
            f"need one transition per trial: {len(transitions)} vs {len(binary_set)}"
        )
    rng = np.random.default_rng([seed, 2])
    x_real_all = _stack(binary_set.trials)
    x_trans_all = _stack(transitions)
    ema_init(bundle)
    adam = ad.AdamState(lr=cfg.lr_ssl)
    for epoch in range(cfg.epochs_ssl):
        losses = []
        for idx in _ssl_batches(len(binary_set), rng):
            x_real = crop_batch(x_real_all[idx], bundle.config.input_len, rng=rng)
            x_trans = crop_batch(x_trans_all[idx], bundle.config.input_len, rng=rng)
            loss = prescreen_ssl_loss(bundle, x_real, x_trans, cfg)
            losses.append(_ssl_step(bundle, adam, loss, cfg, "ssl_prescreen", epoch))
        if log:
            log({"stage": "ssl_prescreen", "epoch": epoch, "ssl_loss": float(np.mean(losses))})
    bundle.phi = None
    return bundle


def ssl_classification(
    bundle: ModelBundle,
    multiclass_set: TrialSet,
    cfg: SslConfig,
    aug_params: AugmentParams | None = None,
    seed: int = 0,
    log: LogFn | None = None,
) -> ModelBundle:
    """Self-supervised refinement of the classification feature extractor:
    two distinct augmentations per trial, re-drawn every epoch."""
    cfg.validate()
    aug_params = aug_params or AugmentParams()
    aug_params.validate()
    rng = np.random.default_rng([seed, 3])
    x_all = _stack(multiclass_set.trials)
    ema_init(bundle)
    adam = ad.AdamState(lr=cfg.lr_ssl)
    for epoch in range(cfg.epochs_ssl):
        losses = []
        for idx in _ssl_batches(len(multiclass_set), rng):
            cropped = crop_batch(x_all[idx], bundle.config.input_len, rng=rng)
            views = [pick_two_distinct(trial, rng, aug_params) for trial in cropped]
            view1 = np.stack([v.view1 for v in views])
            view2 = np.stack([v.view2 for v in views])
            loss = classification_ssl_loss(bundle, view1, view2, cfg)
            losses.append(_ssl_step(bundle, adam, loss, cfg, "ssl_classification", epoch))
        if log:
            log({"stage": "ssl_classification", "epoch": epoch, "ssl_loss": float(np.mean(losses))})
    bundle.phi = None
    return bundle


def ssl_offline_adapt(
    prescreen_bundle: ModelBundle,
    class_bundle: ModelBundle,
    windows: np.ndarray,
    cfg: SslConfig,
    tau: float,
    aug_params: AugmentParams | None = None,
    seed: int = 0,
    log: LogFn | None = None,
) -> tuple[ModelBundle, ModelBundle]:
    """Unlabeled test-time adaptation on a stack of decoded windows.

    The prescreening module assigns pseudo rest/MI labels at threshold
    tau; those pools supply transition mixtures for a prescreen-style SSL
    pass over all windows, then the predicted-MI subset feeds a
    classification-style SSL pass. Stages without usable pools are
    skipped with a warning.
    """
    cfg.validate()
    if cfg.epochs_ssl == 0 or len(windows) == 0:
        return prescreen_bundle, class_bundle
    p_bar = model.predict_probs(prescreen_bundle, windows)[:, 1]
    mi_pool = np.flatnonzero(p_bar >= tau)
    rest_pool = np.flatnonzero(p_bar < tau)
    rng = np.random.default_rng([seed, 4])
    if len(mi_pool) == 0 or len(rest_pool) == 0:
        logger.warning(
            "offline adaptation: pseudo pools degenerate (%d MI, %d rest); "
            "skipping prescreening-stage SSL",
            len(mi_pool), len(rest_pool),
        )
    else:
        pseudo = TrialSet(
            trials=[Trial(samples=w, label=int(p >= tau)) for w, p in zip(windows, p_bar)],
            kind="binary",
            class_names=["rest", "mi"],
        )
        transitions = _mix_transitions(list(windows), rest_pool, mi_pool, len(windows), rng)
        ssl_prescreen(prescreen_bundle, pseudo, transitions, cfg, seed=seed, log=log)
    if len(mi_pool) == 0:
        logger.warning("offline adaptation: no window predicted MI; skipping classification-stage SSL")
    else:
        mi_set = TrialSet(
            trials=[Trial(samples=windows[i], label=1) for i in mi_pool],
            kind="multiclass",
            class_names=["predicted_mi"],
        )
        ssl_classification(class_bundle, mi_set, cfg, aug_params=aug_params, seed=seed, log=log)
    return prescreen_bundle, class_bundle
