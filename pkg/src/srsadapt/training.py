"""The three-stage training regimen.

Stage 1 pre-trains with the MLM objective on generic unlabeled text;
stage 2 keeps training the same architecture with the same objective on
in-domain unlabeled text (adaptation); stage 3 attaches a fresh task head
and fine-tunes every parameter end-to-end on labeled data at a smaller
learning rate.  Each stage runs a shuffled mini-batch epoch loop with
per-epoch validation and retains the best-validation-loss parameters.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .checkpoint import Checkpoint
from .corpus import (
    Corpus,
    DEFAULT_SCHEMA,
    LabelSchema,
    Vocabulary,
    encode_batch,
    split,
)
from .encoder import (
    EncoderConfig,
    TaskHead,
    forward_classify,
    forward_encoder,
    init_params,
    make_classifier_head,
    make_mlm_head,
    resolve_mlm_weight,
)
from .masking import IGNORE_INDEX, MaskingPolicy, apply_masking
from .metrics import MetricsReport, evaluate_predictions
from .optim import AdamW, OptimizerError, clip_grad_norm
from .seeding import derive_rng, derive_seed
from .tensor import (
    EmptyLossError,
    Tape,
    Tensor,
    matmul,
    reshape,
    softmax_cross_entropy,
    take_rows,
    transpose,
)

FINETUNE_LR_WARN_THRESHOLD = 1e-4


class PipelineError(RuntimeError):
    """Stage-ordering or architecture violation in the training pipeline."""


class DivergenceError(RuntimeError):
    """Validation loss became non-finite; carries the partial report."""

    def __init__(self, message: str, report: "TrainReport"):
        super().__init__(message)
        self.report = report


class LearningRateWarning(UserWarning):
    """Fine-tuning learning rate outside the recommended small band."""


@dataclass(frozen=True)
class Objective:
    kind: str  # "mlm" or "classification"
    role: str  # "pretrain", "adapt", or "finetune"

    def __post_init__(self):
        if self.kind not in ("mlm", "classification"):
            raise PipelineError(f"unknown objective kind {self.kind!r}")
        if self.role not in ("pretrain", "adapt", "finetune"):
            raise PipelineError(f"unknown objective role {self.role!r}")
        if self.role in ("pretrain", "adapt") and self.kind != "mlm":
            raise PipelineError(f"stage {self.role!r} must use the mlm objective")
        if self.role == "finetune" and self.kind != "classification":
            raise PipelineError("stage 'finetune' must use the classification objective")


@dataclass(frozen=True)
class StageConfig:
    stage: str
    lr: float
    max_epochs: int
    batch_size: int
    eval_every: int = 1
    patience: int | None = None
    seed: int = 0
    weight_decay: float = 0.01
    clip_norm: float = 1.0
    # Fresh task heads may train faster than the protected encoder body.
    head_lr_scale: float = 1.0

    def __post_init__(self):
        if self.stage not in ("pretrain", "adapt", "finetune"):
            raise PipelineError(f"unknown stage {self.stage!r}")
        if self.lr <= 0 or self.max_epochs <= 0 or self.batch_size <= 0:
            raise PipelineError("lr, max_epochs and batch_size must be positive")
        if self.eval_every <= 0:
            raise PipelineError("eval_every must be positive")


@dataclass
class TrainReport:
    stage: str
    train_losses: list[float] = field(default_factory=list)
    val_losses: list[float | None] = field(default_factory=list)
    best_epoch: int = 0
    best_val_loss: float = float("inf")
    epochs_run: int = 0
    stopped_early: bool = False
    diverged: bool = False
    wall_clock: float = 0.0
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "stage": self.stage,
            "train_losses": self.train_losses,
            "val_losses": self.val_losses,
            "best_epoch": self.best_epoch,
            "best_val_loss": self.best_val_loss,
            "epochs_run": self.epochs_run,
            "stopped_early": self.stopped_early,
            "diverged": self.diverged,
            "wall_clock": self.wall_clock,
            "extra": self.extra,
        }


@dataclass
class MlmData:
    token_ids: np.ndarray  # (N, T)
    attention_mask: np.ndarray  # (N, T)

    def __len__(self) -> int:
        return self.token_ids.shape[0]


@dataclass
class ClassifyData:
    token_ids: np.ndarray
    attention_mask: np.ndarray
    labels: np.ndarray  # (N,) int64 class indices

    def __len__(self) -> int:
        return self.token_ids.shape[0]


def encode_mlm_data(corpus: Corpus, vocab: Vocabulary, max_len: int) -> MlmData:
    ids, mask = encode_batch(corpus.documents, vocab, max_len)
    return MlmData(ids, mask)


def encode_classify_data(
    corpus: Corpus, vocab: Vocabulary, max_len: int, task: str, classes: tuple[str, ...]
) -> ClassifyData:
    ids, mask = encode_batch(corpus.documents, vocab, max_len)
    index = {cls: i for i, cls in enumerate(classes)}
    labels = np.array([index[doc.label(task)] for doc in corpus.documents], dtype=np.int64)
    return ClassifyData(ids, mask, labels)


# ---------------------------------------------------------------------------
# loss evaluation
# ---------------------------------------------------------------------------


def _mlm_batch_loss(
    params: dict[str, Tensor],
    config: EncoderConfig,
    head: TaskHead,
    ids: np.ndarray,
    mask: np.ndarray,
    policy: MaskingPolicy,
    mask_rng: np.random.Generator,
    dropout_rng: np.random.Generator | None,
    training: bool,
) -> tuple[Tensor, int]:
    """Mean MLM loss over the selected positions of one corrupted batch.

    Only the selected positions' hidden states are projected to vocabulary
    logits; the result equals running the full ignore-index loss over every
    position but skips the dead head work.
    """
    corrupted, targets = apply_masking(ids, mask, policy, config.vocab_size, mask_rng)
    flat_targets = targets.reshape(-1)
    selected = np.nonzero(flat_targets != IGNORE_INDEX)[0]
    if selected.size == 0:
        raise EmptyLossError("masking selected no positions in this batch")
    hidden = forward_encoder(params, config, corrupted, mask, dropout_rng, training)
    b, t, h = hidden.shape
    picked = take_rows(reshape(hidden, (b * t, h)), selected)
    weight = resolve_mlm_weight(params, head)
    logits = matmul(picked, transpose(weight, (1, 0)))
    loss = softmax_cross_entropy(logits, flat_targets[selected])
    return loss, int(selected.size)


def mlm_validation_loss(
    params: dict[str, Tensor],
    config: EncoderConfig,
    head: TaskHead,
    data: MlmData,
    policy: MaskingPolicy,
    mask_seed: int,
    batch_size: int = 128,
) -> float:
    """MLM loss on a dataset under a fixed, seed-determined corruption, so
    different parameter sets are compared on identical masked batches."""
    rng = derive_rng(mask_seed, "mlm-eval")
    total, count = 0.0, 0
    for start in range(0, len(data), batch_size):
        ids = data.token_ids[start : start + batch_size]
        mask = data.attention_mask[start : start + batch_size]
        try:
            loss, n_selected = _mlm_batch_loss(
                params, config, head, ids, mask, policy, rng, None, training=False
            )
        except EmptyLossError:
            continue
        total += loss.item() * n_selected
        count += n_selected
    if count == 0:
        raise EmptyLossError("no maskable positions in the validation set")
    return total / count


def classification_validation_loss(
    params: dict[str, Tensor],
    config: EncoderConfig,
    head: TaskHead,
    data: ClassifyData,
    batch_size: int = 256,
) -> float:
    total, count = 0.0, 0
    for start in range(0, len(data), batch_size):
        ids = data.token_ids[start : start + batch_size]
        mask = data.attention_mask[start : start + batch_size]
        labels = data.labels[start : start + batch_size]
        logits = forward_classify(params, config, head, ids, mask, None, training=False)
        loss = softmax_cross_entropy(logits, labels)
        total += loss.item() * len(labels)
        count += len(labels)
    return total / count


def predict_labels(
    params: dict[str, Tensor],
    config: EncoderConfig,
    head: TaskHead,
    token_ids: np.ndarray,
    attention_mask: np.ndarray,
    batch_size: int = 256,
) -> list[str]:
    out: list[str] = []
    for start in range(0, token_ids.shape[0], batch_size):
        logits = forward_classify(
            params,
            config,
            head,
            token_ids[start : start + batch_size],
            attention_mask[start : start + batch_size],
            None,
            training=False,
        )
        for idx in np.argmax(logits.data, axis=1):
            out.append(head.classes[int(idx)])
    return out


# ---------------------------------------------------------------------------
# the stage loop
# ---------------------------------------------------------------------------


def _trainable(params: dict[str, Tensor], head: TaskHead | None) -> dict[str, Tensor]:
    merged = dict(params)
    if head is not None:
        merged.update(head.parameters())
    return merged


def train_stage(
    params: dict[str, Tensor],
    config: EncoderConfig,
    head: TaskHead,
    objective: Objective,
    train_data,
    val_data,
    cfg: StageConfig,
    policy: MaskingPolicy | None = None,
    step_losses: list[float] | None = None,
    max_steps: int | None = None,
) -> TrainReport:
    """Run one stage's epoch loop; on return ``params`` (and the head) hold
    the best-validation-loss values seen during training."""
    if objective.kind == "mlm" and policy is None:
        raise PipelineError("mlm training needs a masking policy")

    trainable = _trainable(params, head)
    scales = (
        {name: cfg.head_lr_scale for name in head.parameters()} if head is not None else None
    )
    opt = AdamW(trainable, lr=cfg.lr, weight_decay=cfg.weight_decay, lr_scales=scales)
    report = TrainReport(stage=cfg.stage)
    best_snapshot: dict[str, np.ndarray] | None = None
    started = time.perf_counter()
    n = len(train_data)
    steps_done = 0

    def validation_loss() -> float:
        if objective.kind == "mlm":
            return mlm_validation_loss(
                params, config, head, val_data, policy, mask_seed=derive_seed(cfg.seed, "val")
            )
        return classification_validation_loss(params, config, head, val_data)

    for epoch in range(1, cfg.max_epochs + 1):
        order = derive_rng(cfg.seed, "shuffle", epoch).permutation(n)
        epoch_loss, epoch_examples = 0.0, 0
        for batch_index, start in enumerate(range(0, n, cfg.batch_size)):
            take = order[start : start + cfg.batch_size]
            ids = train_data.token_ids[take]
            mask = train_data.attention_mask[take]
            dropout_rng = derive_rng(cfg.seed, "dropout", epoch, batch_index)
            with Tape() as tape:
                try:
                    if objective.kind == "mlm":
                        loss, _ = _mlm_batch_loss(
                            params,
                            config,
                            head,
                            ids,
                            mask,
                            policy,
                            derive_rng(cfg.seed, "mask", epoch, batch_index),
                            dropout_rng,
                            training=True,
                        )
                    else:
                        logits = forward_classify(
                            params, config, head, ids, mask, dropout_rng, training=True
                        )
                        loss = softmax_cross_entropy(logits, train_data.labels[take])
                except EmptyLossError:
                    continue  # batch had nothing to predict; masking rolled no positions
                tape.backward(loss)
            clip_grad_norm(trainable, cfg.clip_norm)
            opt.step()
            opt.zero_grad()
            value = loss.item()
            epoch_loss += value * len(take)
            epoch_examples += len(take)
            if step_losses is not None:
                step_losses.append(value)
            steps_done += 1
            if max_steps is not None and steps_done >= max_steps:
                break
        report.train_losses.append(epoch_loss / max(epoch_examples, 1))
        report.epochs_run = epoch

        run_eval = epoch % cfg.eval_every == 0 or epoch == cfg.max_epochs
        if run_eval:
            val = validation_loss()
            report.val_losses.append(val)
            if not np.isfinite(val):
                report.diverged = True
                report.wall_clock = time.perf_counter() - started
                raise DivergenceError(
                    f"validation loss became non-finite at epoch {epoch}", report
                )
            if val < report.best_val_loss:
                report.best_val_loss = val
                report.best_epoch = epoch
                best_snapshot = {k: t.data.copy() for k, t in trainable.items()}
        else:
            report.val_losses.append(None)

        if max_steps is not None and steps_done >= max_steps:
            break
        if (
            cfg.patience is not None
            and report.best_epoch
            and epoch - report.best_epoch >= cfg.patience
        ):
            report.stopped_early = True
            break

    if best_snapshot is not None:
        for name, values in best_snapshot.items():
            trainable[name].data[...] = values
    report.wall_clock = time.perf_counter() - started
    return report


# ---------------------------------------------------------------------------
# stage entry points
# ---------------------------------------------------------------------------


def ensure_architecture(ckpt: Checkpoint, config: EncoderConfig) -> None:
    if ckpt.config != config:
        raise PipelineError(
            f"checkpoint architecture {ckpt.config} does not match configured {config}"
        )


def _clone_params(params: dict[str, Tensor]) -> dict[str, Tensor]:
    return {
        name: Tensor(t.data.copy(), track_grad=True, name=name) for name, t in params.items()
    }


def run_pretrain(
    generic_corpus: Corpus,
    config: EncoderConfig,
    cfg: StageConfig,
    vocab: Vocabulary,
    policy: MaskingPolicy,
) -> tuple[Checkpoint, TrainReport]:
    """Stage 1: MLM pre-training from random initialization on generic text."""
    train_part, val_part, _ = split(
        generic_corpus, {"train": 0.9, "val": 0.1, "test": 0.0}, seed=derive_seed(cfg.seed, "split")
    )
    train_data = encode_mlm_data(train_part, vocab, config.max_len)
    val_data = encode_mlm_data(val_part, vocab, config.max_len)

    params = init_params(config, seed=derive_seed(cfg.seed, "init"))
    head = make_mlm_head(config, seed=derive_seed(cfg.seed, "head"))
    objective = Objective(kind="mlm", role="pretrain")
    report = train_stage(params, config, head, objective, train_data, val_data, cfg, policy)
    ckpt = Checkpoint(
        config=config,
        params=params,
        stage="pretrained",
        meta={
            "seed": cfg.seed,
            "epochs_run": report.epochs_run,
            "final_val_loss": report.best_val_loss,
        },
    )
    return ckpt, report


def run_adapt(
    ckpt: Checkpoint,
    in_domain_corpus: Corpus,
    cfg: StageConfig,
    vocab: Vocabulary,
    policy: MaskingPolicy,
    generic_val: Corpus | None = None,
) -> tuple[Checkpoint, TrainReport]:
    """Stage 2: continue MLM training on in-domain unlabeled text.

    The architecture is unchanged and no parameters are added.  The report
    records the in-domain validation loss before and after adaptation, and
    (when a generic validation corpus is supplied) the generic-text loss
    after adaptation, which may worsen as the model specializes.
    """
    if ckpt.stage not in ("pretrained", "adapted"):
        raise PipelineError(
            f"adaptation requires a pretrained (or adapted) checkpoint, got {ckpt.stage!r}"
        )
    config = ckpt.config
    train_part, val_part, _ = split(
        in_domain_corpus, {"train": 0.9, "val": 0.1, "test": 0.0}, seed=derive_seed(cfg.seed, "split")
    )
    train_data = encode_mlm_data(train_part, vocab, config.max_len)
    val_data = encode_mlm_data(val_part, vocab, config.max_len)

    params = _clone_params(ckpt.params)
    head = make_mlm_head(config, seed=derive_seed(cfg.seed, "head"))
    eval_seed = derive_seed(cfg.seed, "val")
    loss_before = mlm_validation_loss(params, config, head, val_data, policy, eval_seed)

    objective = Objective(kind="mlm", role="adapt")
    report = train_stage(params, config, head, objective, train_data, val_data, cfg, policy)
    loss_after = mlm_validation_loss(params, config, head, val_data, policy, eval_seed)
    report.extra["in_domain_val_loss_before"] = loss_before
    report.extra["in_domain_val_loss_after"] = loss_after
    if generic_val is not None:
        generic_data = encode_mlm_data(generic_val, vocab, config.max_len)
        report.extra["generic_val_loss_after"] = mlm_validation_loss(
            params, config, head, generic_data, policy, eval_seed
        )

    adapted = Checkpoint(
        config=config,
        params=params,
        stage="adapted",
        meta={
            "seed": cfg.seed,
            "epochs_run": report.epochs_run,
            "final_val_loss": report.best_val_loss,
            "in_domain_val_loss_before": loss_before,
            "in_domain_val_loss_after": loss_after,
        },
    )
    return adapted, report


def run_finetune(
    ckpt: Checkpoint,
    labeled_corpus: Corpus,
    task: str,
    cfg: StageConfig,
    vocab: Vocabulary,
    schema: LabelSchema = DEFAULT_SCHEMA,
    fractions: dict[str, float] | None = None,
    split_seed: int | None = None,
) -> tuple[Checkpoint, MetricsReport, TrainReport, list[tuple[str, str, str]]]:
    """Stage 3: attach a fresh task head and train all parameters end-to-end.

    Returns the finetuned checkpoint, the held-out test metrics, the train
    report, and (id, truth, prediction) rows for the test split.
    """
    if ckpt.stage not in ("pretrained", "adapted"):
        raise PipelineError(
            f"fine-tuning requires a pretrained or adapted checkpoint, got {ckpt.stage!r}"
        )
    if cfg.lr > FINETUNE_LR_WARN_THRESHOLD:
        warnings.warn(
            f"fine-tuning lr {cfg.lr} is above {FINETUNE_LR_WARN_THRESHOLD}; "
            "training may fail to settle",
            LearningRateWarning,
            stacklevel=2,
        )
    config = ckpt.config
    fractions = fractions or {"train": 0.7, "val": 0.1, "test": 0.2}
    classes = schema.classes_for(task)
    train_part, val_part, test_part = split(
        labeled_corpus,
        fractions,
        seed=split_seed if split_seed is not None else derive_seed(cfg.seed, "split"),
        task=task,
        schema=schema,
    )
    train_data = encode_classify_data(train_part, vocab, config.max_len, task, classes)
    val_data = encode_classify_data(val_part, vocab, config.max_len, task, classes)
    test_data = encode_classify_data(test_part, vocab, config.max_len, task, classes)

    params = _clone_params(ckpt.params)
    head = make_classifier_head(config, task, seed=derive_seed(cfg.seed, "head", task), schema=schema)
    objective = Objective(kind="classification", role="finetune")
    report = train_stage(params, config, head, objective, train_data, val_data, cfg)

    predictions = predict_labels(params, config, head, test_data.token_ids, test_data.attention_mask)
    truth = [doc.label(task) for doc in test_part.documents]
    metrics = evaluate_predictions(truth, predictions, classes)
    rows = [
        (doc.id, doc.label(task), pred) for doc, pred in zip(test_part.documents, predictions)
    ]

    finetuned = Checkpoint(
        config=config,
        params=params,
        stage="finetuned",
        head=head,
        meta={
            "seed": cfg.seed,
            "task": task,
            "source_stage": ckpt.stage,
            "epochs_run": report.epochs_run,
            "final_val_loss": report.best_val_loss,
        },
    )
    return finetuned, metrics, report, rows


def finetune_step_losses(
    ckpt: Checkpoint,
    labeled_corpus: Corpus,
    task: str,
    lr: float,
    n_steps: int,
    batch_size: int,
    seed: int,
    vocab: Vocabulary,
    schema: LabelSchema = DEFAULT_SCHEMA,
) -> list[float]:
    """Per-step fine-tuning training losses for learning-rate sweeps.

    Runs exactly ``n_steps`` optimizer steps (cycling epochs as needed)
    with no early stopping; a diverged run yields non-finite entries."""
    config = ckpt.config
    classes = schema.classes_for(task)
    train_part, val_part, _ = split(
        labeled_corpus,
        {"train": 0.9, "val": 0.1, "test": 0.0},
        seed=derive_seed(seed, "sweep-split"),
        task=task,
        schema=schema,
    )
    train_data = encode_classify_data(train_part, vocab, config.max_len, task, classes)
    val_data = encode_classify_data(val_part, vocab, config.max_len, task, classes)

    params = _clone_params(ckpt.params)
    head = make_classifier_head(config, task, seed=derive_seed(seed, "head", task), schema=schema)
    steps_per_epoch = max(1, -(-len(train_data) // batch_size))
    epochs = -(-n_steps // steps_per_epoch)
    cfg = StageConfig(
        stage="finetune",
        lr=lr,
        max_epochs=epochs,
        batch_size=batch_size,
        seed=seed,
        patience=None,
    )
    losses: list[float] = []
    objective = Objective(kind="classification", role="finetune")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", LearningRateWarning)
        try:
            train_stage(
                params,
                config,
                head,
                objective,
                train_data,
                val_data,
                cfg,
                step_losses=losses,
                max_steps=n_steps,
            )
        except (DivergenceError, OptimizerError):
            losses.append(float("nan"))
    return losses


def analyze_curve(losses: list[float], window: int = 25, rel_tol: float = 0.05) -> dict:
    """Classify a loss curve: converged when the trailing smoothed loss sits
    within ``rel_tol`` of the smoothed minimum; otherwise the no-settle flag
    is raised.  Non-finite losses mark divergence."""
    arr = np.asarray(losses, dtype=np.float64)
    diverged = bool(~np.isfinite(arr).all())
    if diverged:
        return {
            "converged": False,
            "diverged": True,
            "no_settle": True,
            "final": float("nan"),
            "minimum": float("nan"),
        }
    window = min(window, len(arr))
    kernel = np.ones(window) / window
    smoothed = np.convolve(arr, kernel, mode="valid")
    final = float(smoothed[-1])
    minimum = float(smoothed.min())
    converged = final <= (1.0 + rel_tol) * minimum
    return {
        "converged": converged,
        "diverged": False,
        "no_settle": not converged,
        "final": final,
        "minimum": minimum,
    }
