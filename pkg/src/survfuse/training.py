"""Loss functions, task scheduling, and the batched training loop.

The dual-head setup trains by an alternating scheme: a global iteration
counter c starts at 1 and odd iterations optimize the survival loss, even
ones the grade loss. Each iteration consumes the next mini-batch, so under
alternation each task sees half the batches of an epoch. A joint schedule
that sums both losses and the two single-task schedules are also provided.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, NumericError, UndefinedResultError
from .netmodel import Network, save_checkpoint
from .numcore import AdamState, LrSchedule, RngStream, adam_step, lr_at
from .surveval import accuracy_and_micro_f1, c_index, confusion, predicted_classes

SCHEDULES = ("alternate", "joint-add", "survival-only", "grade-only")

_STREAM_SHUFFLE = 21
_STREAM_DROPOUT = 22


@dataclass(frozen=True)
class TrainingProfile:
    epochs: int
    base_lr: float
    weight_decay: float
    batch_size: int
    dropout_p: float = 0.25
    schedule: str = "alternate"
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.base_lr <= 0:
            raise ConfigError(f"base_lr must be positive, got {self.base_lr}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError(f"dropout_p must be in [0, 1), got {self.dropout_p}")
        if self.schedule not in SCHEDULES:
            raise ConfigError(f"unknown schedule {self.schedule!r}")


_PRESETS = {
    # Fused dual-head network.
    "mmmt-default": TrainingProfile(
        epochs=30, base_lr=1e-4, weight_decay=4e-4, batch_size=32,
        dropout_p=0.25, schedule="alternate"),
    # Single-modal image-embedding runs.
    "smst-image": TrainingProfile(
        epochs=50, base_lr=5e-4, weight_decay=4e-4, batch_size=8,
        dropout_p=0.25, schedule="survival-only"),
    # Single-modal gene-expression runs.
    "smst-gene": TrainingProfile(
        epochs=50, base_lr=2e-3, weight_decay=5e-4, batch_size=64,
        dropout_p=0.25, schedule="survival-only"),
}


def profile_preset(name: str, **overrides) -> TrainingProfile:
    """Named hyperparameter profile; keyword overrides replace fields."""
    if name not in _PRESETS:
        raise ConfigError(
            f"unknown preset {name!r}; choose from {sorted(_PRESETS)}")
    return replace(_PRESETS[name], **overrides)


def preset_names() -> tuple[str, ...]:
    return tuple(sorted(_PRESETS))


@dataclass(frozen=True)
class SurvivalBatchLabels:
    times: np.ndarray
    events: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=np.float64).reshape(-1)
        e = np.asarray(self.events, dtype=np.int64).reshape(-1)
        if len(t) != len(e):
            raise DataError("times and events must have equal lengths")
        if np.any(t < 0):
            raise DataError("survival times must be non-negative")
        if not np.isin(e, (0, 1)).all():
            raise DataError("event indicators must be 0 or 1")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "events", e)

    @property
    def n_events(self) -> int:
        return int(self.events.sum())


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------

def cox_loss(risks, labels: SurvivalBatchLabels) -> tuple[float, np.ndarray]:
    """Negative Cox partial log-likelihood over the mini-batch, averaged per
    observed event, with its analytic gradient.

    The risk set for an event at time t_i is every batch member with
    t_j >= t_i (ties included). The log-sum-exp is max-shifted. A batch
    with no events contributes loss 0 and a zero gradient.
    """
    y_in = np.asarray(risks, dtype=np.float64)
    y = y_in.reshape(-1)
    t, d = labels.times, labels.events
    if len(y) != len(t):
        raise DataError(
            f"{len(y)} risks for {len(t)} survival labels")
    n_events = labels.n_events
    if n_events == 0:
        return 0.0, np.zeros_like(y_in)
    # in_set[i, j]: j belongs to the risk set of i
    in_set = t[None, :] >= t[:, None]
    shift = y.max()
    exp_y = np.exp(y - shift)
    denom = in_set @ exp_y
    log_denom = np.log(denom) + shift
    loss = -float(np.sum(d * (y - log_denom))) / n_events
    # dL/dy_j = -(1/E) * (d_j - sum_i d_i * [j in set of i] * e^{y_j}/denom_i)
    grad = -(d - exp_y * (in_set.T @ (d / denom))) / n_events
    return loss, grad.reshape(y_in.shape)


def nll_loss(log_probs, labels) -> tuple[float, np.ndarray]:
    """Mean negative log-likelihood on log-probability rows, with gradient."""
    lp = np.asarray(log_probs, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64).reshape(-1)
    if lp.ndim != 2 or lp.shape[0] != len(y):
        raise DataError(f"log-prob shape {lp.shape} does not match {len(y)} labels")
    n, k = lp.shape
    bad = np.nonzero((y < 0) | (y >= k))[0]
    if len(bad):
        raise DataError(
            f"grade label {y[bad[0]]} out of range [0, {k}) at sample "
            f"index {bad[0]}")
    rows = np.arange(n)
    loss = -float(lp[rows, y].mean())
    grad = np.zeros_like(lp)
    grad[rows, y] = -1.0 / n
    return loss, grad


def select_task(c: int, schedule: str) -> tuple[str, ...]:
    """Task(s) optimized at iteration c (1-based): alternation sends odd
    iterations to survival and even ones to grade; joint-add returns both."""
    if c < 1:
        raise ValueError(f"iteration counter starts at 1, got {c}")
    if schedule == "alternate":
        return ("survival",) if c % 2 == 1 else ("grade",)
    if schedule == "joint-add":
        return ("survival", "grade")
    if schedule == "survival-only":
        return ("survival",)
    if schedule == "grade-only":
        return ("grade",)
    raise ConfigError(f"unknown schedule {schedule!r}")


# ---------------------------------------------------------------------------
# History
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    epoch: int
    task: str
    loss: float
    lr: float
    zero_event_batch: bool = False


@dataclass(frozen=True)
class EpochSnapshot:
    epoch: int
    c_index: float | None
    accuracy: float | None
    micro_f1: float | None
    score: float | None


@dataclass
class TrainingHistory:
    records: list[IterationRecord] = field(default_factory=list)
    snapshots: list[EpochSnapshot] = field(default_factory=list)
    best_epoch: int | None = None

    def losses_for(self, task: str) -> list[float]:
        return [r.loss for r in self.records if r.task == task]

    def task_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for r in self.records:
            counts[r.task] = counts.get(r.task, 0) + 1
        return counts

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("iteration,epoch,task,loss,lr\n")
            for r in self.records:
                fh.write(f"{r.iteration},{r.epoch},{r.task},"
                         f"{r.loss!r},{r.lr!r}\n")


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

def _schedule_tasks(schedule: str) -> set[str]:
    if schedule in ("alternate", "joint-add"):
        return {"survival", "grade"}
    return {"survival"} if schedule == "survival-only" else {"grade"}


def design_matrices(network: Network, cohort, ids):
    """Modality matrices the variant needs, None for the unused ones."""
    variant = network.config.variant
    gene_x = (cohort.expression_matrix(ids)
              if variant in ("fused", "gene-only") else None)
    image_x = (cohort.embedding_matrix(ids)
               if variant in ("fused", "image-only") else None)
    return gene_x, image_x


def evaluate_network(network: Network, cohort, ids,
                     tasks: set[str] | None = None) -> EpochSnapshot:
    """Evaluation-mode metrics on one id set. ``tasks`` limits which heads
    are scored; the summary score averages whatever is available."""
    if tasks is None:
        tasks = {"survival", "grade"}
    gene_x, image_x = design_matrices(network, cohort, ids)
    outputs = network.predict(gene_x=gene_x, image_x=image_x)
    ci = None
    accuracy = None
    micro_f1 = None
    if "survival" in tasks and "survival" in outputs:
        try:
            ci = c_index(outputs["survival"].reshape(-1),
                         cohort.times(ids), cohort.events(ids))
        except UndefinedResultError:
            ci = None
    if "grade" in tasks and "grade" in outputs:
        pred = predicted_classes(outputs["grade"])
        cm = confusion(pred, cohort.grades(ids), len(cohort.grade_names))
        accuracy, micro_f1 = accuracy_and_micro_f1(cm)
    parts = [v for v in (ci, micro_f1) if v is not None]
    score = float(np.mean(parts)) if parts else None
    return EpochSnapshot(epoch=-1, c_index=ci, accuracy=accuracy,
                         micro_f1=micro_f1, score=score)


def train(network: Network, cohort, train_ids, profile: TrainingProfile,
          eval_ids=None, out_dir=None) -> tuple[Network, TrainingHistory]:
    """Run the batched loop and return the trained network plus history.

    Each epoch reshuffles the training ids with an epoch-keyed stream and
    walks them in batches (last one may be short). Per iteration: forward
    with live dropout, the scheduled loss(es), backprop, and one Adam step
    with decoupled weight decay at the linearly decayed epoch rate. A
    survival-only iteration whose batch has no observed events records a
    zero loss and skips the parameter update.

    With ``out_dir`` set, checkpoints land in out_dir/final and
    out_dir/best (best by the evaluation score over ``eval_ids``; final
    when no evaluation is possible) along with history.csv. The whole run
    is bit-reproducible from (profile, cohort, split).
    """
    tasks_needed = _schedule_tasks(profile.schedule)
    if "survival" in tasks_needed and not network.config.with_survival:
        raise ConfigError(
            f"schedule {profile.schedule!r} needs a survival head")
    if "grade" in tasks_needed and not network.config.with_grade:
        raise ConfigError(f"schedule {profile.schedule!r} needs a grade head")

    train_ids = list(train_ids)
    if not train_ids:
        raise ConfigError("empty training id list")
    gene_x, image_x = design_matrices(network, cohort, train_ids)
    times = cohort.times(train_ids)
    events = cohort.events(train_ids)
    grades = cohort.grades(train_ids) if "grade" in tasks_needed else None

    history = TrainingHistory()
    params = network.params()
    state = AdamState.for_params(params)
    shuffle_stream = RngStream(profile.seed, _STREAM_SHUFFLE)
    dropout_stream = RngStream(profile.seed, _STREAM_DROPOUT)
    schedule = (LrSchedule(profile.base_lr, profile.epochs)
                if profile.epochs > 0 else None)

    n = len(train_ids)
    c = 0
    best_score = -math.inf
    best_params = None
    for epoch in range(profile.epochs):
        rate = lr_at(schedule, epoch)
        perm = shuffle_stream.generator(epoch).permutation(n)
        for start in range(0, n, profile.batch_size):
            idx = perm[start:start + profile.batch_size]
            c += 1
            tasks = select_task(c, profile.schedule)
            trace = network.forward(
                gene_x=None if gene_x is None else gene_x[idx],
                image_x=None if image_x is None else image_x[idx],
                mode="train", rng=dropout_stream, key=(c,))
            total = 0.0
            d_survival = None
            d_grade = None
            zero_events = False
            if "survival" in tasks:
                labels = SurvivalBatchLabels(times=times[idx], events=events[idx])
                zero_events = labels.n_events == 0
                loss_s, d_survival = cox_loss(trace.outputs["survival"], labels)
                total += loss_s
            if "grade" in tasks:
                loss_g, d_grade = nll_loss(trace.outputs["grade"], grades[idx])
                total += loss_g
            task_name = "joint" if len(tasks) == 2 else tasks[0]
            if not math.isfinite(total):
                raise NumericError(
                    f"non-finite loss {total} at iteration {c} "
                    f"(epoch {epoch}, task {task_name})")
            skipped = zero_events and tasks == ("survival",)
            history.records.append(IterationRecord(
                iteration=c, epoch=epoch, task=task_name, loss=total,
                lr=rate, zero_event_batch=zero_events))
            if skipped:
                continue
            grads = network.backward(trace, d_survival=d_survival,
                                     d_grade=d_grade)
            params, state = adam_step(params, grads, state, rate,
                                      weight_decay=profile.weight_decay)
            network.set_params(params)
        if eval_ids is not None:
            snap = evaluate_network(network, cohort, eval_ids, tasks_needed)
            snap = replace(snap, epoch=epoch)
            history.snapshots.append(snap)
            if snap.score is not None and snap.score > best_score:
                best_score = snap.score
                best_params = params
                history.best_epoch = epoch

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        save_checkpoint(network, out_dir / "final")
        final_params = params
        if best_params is not None:
            network.set_params(best_params)
        save_checkpoint(network, out_dir / "best")
        network.set_params(final_params)
        history.to_csv(out_dir / "history.csv")
    return network, history
