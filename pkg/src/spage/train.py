"""AdamW training with per-group learning rates, evaluation metrics and grid sweeps."""

from __future__ import annotations

import itertools
import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .corpus import Dialogue, Vocabulary
from .encoder import EmbeddingTable
from .model import ModelConfig, SPageModel, param_group
from .numerics import NumericError, Tensor

log = logging.getLogger(__name__)


# -- metrics ------------------------------------------------------------------

@dataclass
class Metrics:
    weighted_f1: float
    micro_f1: float
    accuracy: float
    precision: list[float]
    recall: list[float]
    f1: list[float]
    support: list[int]
    confusion: list[list[int]]  # rows: gold, columns: predicted
    labels: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def _safe_div(a: float, b: float) -> float:
    return a / b if b else 0.0


def compute_metrics(gold: Sequence[int], pred: Sequence[int], num_labels: int,
                    labels: Sequence[str] | None = None, exclude: int | None = None) -> Metrics:
    """Per-class P/R/F1, support-weighted F1 and micro F1.

    ``exclude`` drops one class from the micro average (the DailyDialog
    convention of ignoring the majority "neutral" class).
    """
    gold, pred = np.asarray(gold, dtype=np.int64), np.asarray(pred, dtype=np.int64)
    if gold.size == 0:
        raise ValueError("cannot compute metrics on an empty set")
    if gold.shape != pred.shape:
        raise ValueError(f"{gold.size} gold labels but {pred.size} predictions")
    conf = np.zeros((num_labels, num_labels), dtype=np.int64)
    np.add.at(conf, (gold, pred), 1)
    tp = np.diag(conf).astype(float)
    support = conf.sum(axis=1)
    predicted = conf.sum(axis=0)
    precision = [_safe_div(tp[c], predicted[c]) for c in range(num_labels)]
    recall = [_safe_div(tp[c], support[c]) for c in range(num_labels)]
    f1 = [_safe_div(2 * p * r, p + r) for p, r in zip(precision, recall)]
    weighted = float(sum(s * f for s, f in zip(support, f1)) / support.sum())
    keep = [c for c in range(num_labels) if c != exclude]
    micro_p = _safe_div(tp[keep].sum(), predicted[keep].sum())
    micro_r = _safe_div(tp[keep].sum(), support[keep].sum())
    micro = _safe_div(2 * micro_p * micro_r, micro_p + micro_r)
    return Metrics(weighted, float(micro), float(tp.sum() / gold.size), precision, recall, f1,
                   support.tolist(), conf.tolist(), list(labels or []))


def evaluate(dialogues: Sequence[Dialogue], model: SPageModel) -> Metrics:
    if not dialogues:
        raise ValueError("cannot evaluate on an empty data set")
    gold, pred = [], []
    for d in dialogues:
        if d.labels is None:
            raise ValueError(f"dialogue {d.dialogue_id!r} has no gold labels")
        gold.extend(d.labels)
        pred.extend(model.predict(d))
    exclude = None
    if model.config.micro_exclude_label is not None:
        exclude = model.vocab.label_index(model.config.micro_exclude_label)
    return compute_metrics(gold, pred, len(model.vocab.labels), model.vocab.labels, exclude)


# -- optimisation ---------------------------------------------------------------

def warmup_factor(step: int, warmup: int) -> float:
    """Linear warmup then inverse-square-root decay, peaking at 1 when step == warmup."""
    if warmup <= 0:
        return 1.0
    step = max(step, 1)
    return min(step / warmup, (warmup / step) ** 0.5)


class AdamW:
    """Adam with decoupled weight decay over named parameter groups."""

    def __init__(self, groups: dict[str, tuple[list[Tensor], float]], betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.01, warmup: int = 0):
        self.groups = groups
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.warmup = warmup
        self.t = 0
        self.m = {id(p): np.zeros_like(p.data) for ps, _ in groups.values() for p in ps}
        self.v = {id(p): np.zeros_like(p.data) for ps, _ in groups.values() for p in ps}

    def lr(self, group: str) -> float:
        return self.groups[group][1] * warmup_factor(self.t, self.warmup)

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for name, (params, _) in self.groups.items():
            lr = self.lr(name)
            for p in params:
                g = p.grad if p.grad is not None else np.zeros_like(p.data)
                m, v = self.m[id(p)], self.v[id(p)]
                m *= self.b1
                m += (1 - self.b1) * g
                v *= self.b2
                v += (1 - self.b2) * g * g
                p.data *= 1.0 - lr * self.weight_decay
                p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def clip_grad_norm(params: Sequence[Tensor], max_norm: float) -> float:
    total = float(np.sqrt(sum(float((p.grad ** 2).sum()) for p in params if p.grad is not None)))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / (total + 1e-12)
        for p in params:
            if p.grad is not None:
                p.grad *= scale
    return total


def build_optimizer(model: SPageModel) -> AdamW:
    c = model.config
    lrs = {"transformer": c.lr_transformer, "pag": c.lr_pag, "crf": c.lr_crf}
    groups = {name: (params, lrs[name]) for name, params in model.parameter_groups().items()}
    return AdamW(groups, weight_decay=c.weight_decay, warmup=c.warmup_steps)


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    dev_weighted_f1: float | None
    seconds: float


@dataclass
class TrainResult:
    model: SPageModel
    best_epoch: int
    history: list[EpochLog]
    dev_metrics: Metrics | None


def train_epoch(model: SPageModel, opt: AdamW, data: Sequence[Dialogue],
                rng: np.random.Generator, epoch: int) -> float:
    c = model.config
    params = list(model.named_parameters().values())
    order = rng.permutation(len(data))
    total = 0.0
    for start in range(0, len(order), c.batch_size):
        batch = [data[i] for i in order[start:start + c.batch_size]]
        model.zero_grad()
        for d in batch:
            try:
                loss = model.loss(d, training=True, rng=rng)
            except NumericError as exc:
                raise NumericError(f"{exc} at epoch {epoch}, dialogue {d.dialogue_id!r}") from exc
            value = float(loss.data)
            if not np.isfinite(value):
                raise NumericError(f"non-finite loss {value} at epoch {epoch}, dialogue {d.dialogue_id!r}")
            (loss / float(len(batch))).backward()
            total += value
        for p in params:
            if p.grad is not None and not np.all(np.isfinite(p.grad)):
                raise NumericError(f"non-finite gradient at epoch {epoch}, batch starting "
                                   f"with dialogue {batch[0].dialogue_id!r}")
        clip_grad_norm(params, c.grad_clip)
        opt.step()
    model.zero_grad()
    return total / max(len(data), 1)


def train_model(train: Sequence[Dialogue], dev: Sequence[Dialogue] | None, config: ModelConfig,
                vocab: Vocabulary, table: EmbeddingTable | None = None) -> TrainResult:
    """Train from scratch; keep the parameters with the best dev weighted F1.

    Without a dev set the final epoch is kept. Early stopping uses
    ``config.patience`` epochs without dev improvement (0 disables it).
    """
    if not train:
        raise ValueError("training set is empty")
    for d in train:
        if d.labels is None:
            raise ValueError(f"training dialogue {d.dialogue_id!r} has no labels")
        if max(d.labels) >= len(vocab.labels):
            raise ValueError(f"dialogue {d.dialogue_id!r} has labels outside the label set")
    model = SPageModel(config, vocab, table)
    opt = build_optimizer(model)
    rng = np.random.default_rng(config.seed + 1)
    history: list[EpochLog] = []
    best = (-1.0, 0, model.state_dict(), None)
    stale = 0
    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        loss = train_epoch(model, opt, train, rng, epoch)
        dev_metrics = evaluate(dev, model) if dev else None
        score = dev_metrics.weighted_f1 if dev_metrics else None
        history.append(EpochLog(epoch, loss, score, time.perf_counter() - t0))
        log.info("epoch %d loss %.4f dev wF1 %s", epoch, loss, score)
        if dev_metrics is None:
            best = (0.0, epoch, None, None)
            continue
        if score > best[0]:
            best = (score, epoch, model.state_dict(), dev_metrics)
            stale = 0
        else:
            stale += 1
            if config.patience and stale >= config.patience:
                break
    if best[2] is not None:
        model.load_state_dict(best[2])
    return TrainResult(model, best[1], history, best[3])


# -- sweeps -----------------------------------------------------------------

def expand_grid(grid) -> list[dict]:
    """``{"pag_layers": [1, 2]}`` -> cartesian cells; a list of dicts passes through.

    The key ``window`` expands to both ``past_window`` and ``future_window``.
    """
    if isinstance(grid, list):
        cells = [dict(c) for c in grid]
    elif not grid:
        cells = []
    else:
        keys = list(grid)
        cells = [dict(zip(keys, values)) for values in itertools.product(*(grid[k] for k in keys))]
    out = []
    for cell in cells:
        if "window" in cell:
            w = cell.pop("window")
            p, f = (w, w) if isinstance(w, int) else w
            cell["past_window"], cell["future_window"] = int(p), int(f)
        out.append(cell)
    return out


def sweep(grid, train: Sequence[Dialogue], dev: Sequence[Dialogue], base: ModelConfig,
          vocab: Vocabulary, table: EmbeddingTable | None = None,
          test: Sequence[Dialogue] | None = None) -> list[dict]:
    """Train and evaluate every grid cell. A failing cell reports its error and the sweep continues."""
    rows = []
    for cell in expand_grid(grid):
        row: dict = {"params": cell}
        try:
            config = base.replace(**cell)
            result = train_model(train, dev, config, vocab, table)
            target = test if test else dev
            metrics = evaluate(target, result.model)
            row.update(weighted_f1=metrics.weighted_f1, micro_f1=metrics.micro_f1,
                       accuracy=metrics.accuracy, best_epoch=result.best_epoch, error=None)
        except Exception as exc:  # reported per cell by design
            log.warning("sweep cell %s failed: %s", cell, exc)
            row.update(weighted_f1=None, micro_f1=None, accuracy=None, best_epoch=None,
                       error=f"{type(exc).__name__}: {exc}")
        rows.append(row)
    return rows


__all__ = ["AdamW", "Metrics", "TrainResult", "build_optimizer", "clip_grad_norm",
           "compute_metrics", "evaluate", "expand_grid", "param_group", "sweep",
           "train_model", "warmup_factor"]
