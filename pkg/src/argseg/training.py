"""Masked cross-entropy training with Adam, early stopping and lr search.

The trainer owns batching: sequences are shuffled every epoch with the run
seed, grouped into fixed-size batches and each batch is padded to its own
longest sequence.  Validation essays are split off by essay id (never by
sequence) so no essay leaks across the train/validation boundary.  Early
stopping watches validation loss and always restores the best parameters
seen.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .corpus import LABELS, LabeledSequence
from .embeddings import EmbeddingSpec
from .errors import ContractViolation, NumericError, TrainingDiverged
from .metrics import MetricsReport, confusion_matrix, metrics_from_confusion
from .models import Model, ModelSpec, build_model, predict_labels
from .numeric import BatchTensor, Parameter


@dataclass
class TrainConfig:
    batch_size: int = 64
    max_epochs: int = 100
    patience: int = 10
    learning_rate: float = 1e-3
    val_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ContractViolation(f"batch_size must be >= 1, got {self.batch_size}")
        if not (0.0 < self.val_fraction < 0.5):
            raise ContractViolation(
                f"val_fraction must lie in (0, 0.5), got {self.val_fraction}"
            )
        if self.max_epochs < 1 or self.patience < 0 or self.learning_rate <= 0:
            raise ContractViolation("max_epochs >= 1, patience >= 0, learning_rate > 0")


@dataclass
class LossCurve:
    train: list[float] = field(default_factory=list)
    val: list[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.train)

    def write_csv(self, fh):
        fh.write("epoch,train_loss,val_loss\n")
        for epoch, (tr, vl) in enumerate(zip(self.train, self.val), start=1):
            fh.write(f"{epoch},{tr:.8f},{vl:.8f}\n")


def generalization_gap(curve: LossCurve) -> float:
    """Final validation loss minus final training loss."""
    if not curve.train:
        raise ContractViolation("loss curve is empty")
    return curve.val[-1] - curve.train[-1]


# ---------------------------------------------------------------------------
# Loss
# ---------------------------------------------------------------------------


def masked_cross_entropy(pred: BatchTensor, gold: np.ndarray, mask: np.ndarray):
    """Mean negative log-likelihood over valid tokens, plus d(loss)/d(pred).

    ``gold`` holds label indices (B=0, I=1, O=2); padded positions receive
    exactly zero gradient.
    """
    mask = np.asarray(mask, dtype=bool)
    n_valid = int(mask.sum())
    if n_valid == 0:
        raise ContractViolation("loss over zero valid tokens is undefined")
    b_idx, t_idx = np.nonzero(mask)
    p_gold = pred.values[b_idx, t_idx, gold[b_idx, t_idx]]
    with np.errstate(divide="ignore"):  # p == 0 yields inf; the trainer aborts on it
        loss = float(-np.log(p_gold).sum() / n_valid)
        grad = np.zeros_like(pred.values)
        grad[b_idx, t_idx, gold[b_idx, t_idx]] = -1.0 / (p_gold * n_valid)
    return loss, grad


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


class AdamState:
    """First/second moment accumulators mirroring one parameter list."""

    def __init__(self, params: list[Parameter], beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p.value) for p in params]
        self.v = [np.zeros_like(p.value) for p in params]


def adam_step(params: list[Parameter], state: AdamState, lr: float):
    """One bias-corrected Adam update in place."""
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    for i, p in enumerate(params):
        g = p.grad
        if not np.isfinite(g).all():
            raise NumericError(f"non-finite gradient for parameter {p.name}")
        state.m[i] += (1 - b1) * (g - state.m[i])
        state.v[i] += (1 - b2) * (g * g - state.v[i])
        m_hat = state.m[i] / (1 - b1**t)
        v_hat = state.v[i] / (1 - b2**t)
        p.value -= lr * m_hat / (np.sqrt(v_hat) + state.eps)


# ---------------------------------------------------------------------------
# Batching
# ---------------------------------------------------------------------------


@dataclass
class _Item:
    essay_id: str
    vectors: np.ndarray  # (T, D)
    gold: np.ndarray  # (T,) label indices


def _vectorize_all(sequences: list[LabeledSequence], spec: EmbeddingSpec) -> list[_Item]:
    items = []
    for seq in sequences:
        gold = np.array([LABELS.index(lab) for lab in seq.labels], dtype=np.int64)
        items.append(_Item(seq.essay_id, spec.vectorize(seq), gold))
    return items


def _assemble(items: list[_Item]):
    batch = BatchTensor.from_rows([it.vectors for it in items])
    gold = np.full((batch.batch, batch.time), LABELS.index("O"), dtype=np.int64)
    for i, it in enumerate(items):
        gold[i, : it.gold.shape[0]] = it.gold
    return batch, gold


def _batches(items: list[_Item], order, batch_size: int):
    for lo in range(0, len(order), batch_size):
        chunk = [items[i] for i in order[lo : lo + batch_size]]
        yield _assemble(chunk)


def _dataset_loss(model: Model, batches) -> float:
    total = 0.0
    count = 0
    for batch, gold in batches:
        probs, _ = model.forward(batch)
        n = int(batch.mask.sum())
        loss, _ = masked_cross_entropy(probs, gold, batch.mask)
        total += loss * n
        count += n
    return total / count


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------


def split_by_essay(sequences: list[LabeledSequence], val_fraction: float, seed: int):
    """Deterministically hold out whole essays for validation."""
    essay_ids = sorted({seq.essay_id for seq in sequences})
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(essay_ids))
    n_val = max(1, int(round(val_fraction * len(essay_ids))))
    if n_val >= len(essay_ids):
        raise ContractViolation(
            f"cannot hold out {n_val} of {len(essay_ids)} essays for validation"
        )
    val_ids = {essay_ids[i] for i in order[:n_val]}
    train = [s for s in sequences if s.essay_id not in val_ids]
    val = [s for s in sequences if s.essay_id in val_ids]
    return train, val


def train(model: Model, train_sequences: list[LabeledSequence],
          spec: EmbeddingSpec, cfg: TrainConfig):
    """Train in place; returns (model, LossCurve) with best-epoch weights restored.

    Aborts with :class:`TrainingDiverged` if the loss goes non-finite; the
    model then carries the last parameters that were still finite.
    """
    if not train_sequences:
        raise ContractViolation("no training sequences")
    train_seqs, val_seqs = split_by_essay(train_sequences, cfg.val_fraction, cfg.seed)
    train_items = _vectorize_all(train_seqs, spec)
    val_items = _vectorize_all(val_seqs, spec)
    val_batches = list(_batches(val_items, np.arange(len(val_items)), cfg.batch_size))

    rng = np.random.default_rng(cfg.seed)
    params = model.params()
    state = AdamState(params)
    curve = LossCurve()

    best_val = math.inf
    best_values = model.get_values()
    last_finite = model.get_values()
    epochs_since_best = 0

    for _epoch in range(cfg.max_epochs):
        order = rng.permutation(len(train_items))
        running = 0.0
        seen = 0
        diverged = False
        for batch, gold in _batches(train_items, order, cfg.batch_size):
            probs, caches = model.forward(batch)
            loss, grad = masked_cross_entropy(probs, gold, batch.mask)
            if not math.isfinite(loss):
                diverged = True
                break
            n = int(batch.mask.sum())
            running += loss * n
            seen += n
            model.zero_grads()
            model.backward(caches, grad)
            adam_step(params, state, cfg.learning_rate)
        if diverged or not all(np.isfinite(p.value).all() for p in params):
            model.set_values(last_finite)
            raise TrainingDiverged(
                f"loss went non-finite in epoch {len(curve) + 1}; "
                "model restored to its last finite state"
            )

        train_loss = running / seen
        val_loss = _dataset_loss(model, val_batches)
        curve.train.append(train_loss)
        curve.val.append(val_loss)
        if not math.isfinite(val_loss):
            model.set_values(last_finite)
            raise TrainingDiverged("validation loss went non-finite")
        last_finite = model.get_values()

        if val_loss < best_val:
            best_val = val_loss
            best_values = model.get_values()
            epochs_since_best = 0
        else:
            epochs_since_best += 1
            if epochs_since_best > cfg.patience:
                break

    model.set_values(best_values)
    return model, curve


def evaluate(model: Model, sequences: list[LabeledSequence],
             spec: EmbeddingSpec, batch_size: int = 64) -> MetricsReport:
    """Metrics of a frozen model over the given sequences."""
    if not sequences:
        raise ContractViolation("no sequences to evaluate")
    items = _vectorize_all(sequences, spec)
    total = np.zeros((len(LABELS), len(LABELS)), dtype=np.int64)
    for batch, gold in _batches(items, np.arange(len(items)), batch_size):
        predicted = predict_labels(model, batch)
        total += confusion_matrix(gold, predicted, batch.mask)
    return metrics_from_confusion(total)


# ---------------------------------------------------------------------------
# Learning-rate search
# ---------------------------------------------------------------------------

LR_RANGE = (1e-4, 1e-2)


def sample_learning_rate(rng, low: float = LR_RANGE[0], high: float = LR_RANGE[1]) -> float:
    """One log-uniform draw from [low, high]."""
    return float(10.0 ** rng.uniform(math.log10(low), math.log10(high)))


def trial_seed(base_seed: int, trial: int) -> int:
    return (base_seed * 1_000_003 + trial * 7_919 + 1) % (2**31)


@dataclass
class TrialResult:
    trial: int
    learning_rate: float
    best_val_loss: float | None
    error: str | None = None


def lr_search(model_spec: ModelSpec, sequences: list[LabeledSequence],
              spec: EmbeddingSpec, cfg: TrainConfig, trials: int = 4,
              lr_range=LR_RANGE):
    """Random search over the learning rate; every trial is fully seeded.

    Each trial builds a fresh model and trains it; the config with the lowest
    best validation loss wins.  Returns (best TrainConfig, [TrialResult]).
    """
    if trials < 1:
        raise ContractViolation(f"need at least one trial, got {trials}")
    results: list[TrialResult] = []
    best: tuple[float, TrainConfig] | None = None
    for k in range(trials):
        seed_k = trial_seed(cfg.seed, k)
        lr = sample_learning_rate(np.random.default_rng(seed_k), *lr_range)
        cfg_k = replace(cfg, learning_rate=lr, seed=seed_k)
        model_k = build_model(replace(model_spec, seed=seed_k))
        try:
            _, curve = train(model_k, sequences, spec, cfg_k)
        except TrainingDiverged as exc:
            results.append(TrialResult(k, lr, None, str(exc)))
            continue
        val = min(curve.val)
        results.append(TrialResult(k, lr, val))
        if best is None or val < best[0]:
            best = (val, cfg_k)
    if best is None:
        detail = "; ".join(f"trial {r.trial} (lr={r.learning_rate:.2e}): {r.error}" for r in results)
        raise NumericError(f"every learning-rate trial diverged: {detail}")
    return best[1], results
