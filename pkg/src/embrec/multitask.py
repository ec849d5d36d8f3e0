"""Multitask fine-tuning head over frozen base features.

A single trainable dense layer (rectified, 1024 units by default) feeds
one output head per task. Classification heads emit softmax
probabilities trained with cross-entropy; regression heads emit a scalar
trained with mean absolute error. The total training loss is the
weighted sum of the per-task losses, and the shared layer's activations
are what gets exported as the fine-tuned embedding.

Everything here is plain float64 numpy: gradients are written out by
hand and checked against finite differences, which is the point of
keeping the model this small.
"""

import copy
import csv
import struct
from dataclasses import dataclass

import numpy as np

from .dataset import LabelVocabulary

PROB_FLOOR = 1e-12  # clamp before log; avoids -inf without biasing training

CHECKPOINT_MAGIC = b"MTH1"


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TaskSpec:
    """One supervised target: name, kind, and its weight in the total loss."""

    name: str
    kind: str  # "classification" | "regression"
    n_classes: int = 0
    weight: float = 1.0
    vocab: LabelVocabulary | None = None

    def __post_init__(self):
        if self.kind not in ("classification", "regression"):
            raise ValueError(f"task {self.name!r}: unknown kind {self.kind!r}")
        if self.kind == "classification" and self.n_classes < 2:
            raise ValueError(f"task {self.name!r}: classification needs >= 2 classes")
        if not (np.isfinite(self.weight) and self.weight > 0):
            raise ValueError(f"task {self.name!r}: weight must be finite and > 0")
        if self.vocab is not None and len(self.vocab) != self.n_classes:
            raise ValueError(
                f"task {self.name!r}: vocabulary size {len(self.vocab)} "
                f"!= n_classes {self.n_classes}"
            )

    @property
    def out_dim(self) -> int:
        return self.n_classes if self.kind == "classification" else 1


@dataclass
class MultitaskModel:
    """Shared rectified layer plus one linear head per task."""

    input_dim: int
    shared_dim: int
    tasks: tuple[TaskSpec, ...]
    shared_w: np.ndarray  # (shared_dim, input_dim)
    shared_b: np.ndarray  # (shared_dim,)
    head_w: list[np.ndarray]  # per task (out_dim, shared_dim)
    head_b: list[np.ndarray]  # per task (out_dim,)

    @classmethod
    def init(cls, input_dim: int, tasks, shared_dim: int = 1024, seed: int = 0) -> "MultitaskModel":
        """Seeded uniform init scaled by 1/sqrt(fan_in); biases start at zero."""
        if input_dim < 1 or shared_dim < 1:
            raise ValueError("input_dim and shared_dim must be positive")
        tasks = tuple(tasks)
        if not tasks:
            raise ValueError("need at least one task")
        rng = np.random.default_rng(seed)
        bound = 1.0 / np.sqrt(input_dim)
        shared_w = rng.uniform(-bound, bound, size=(shared_dim, input_dim))
        head_bound = 1.0 / np.sqrt(shared_dim)
        head_w = [rng.uniform(-head_bound, head_bound, size=(t.out_dim, shared_dim)) for t in tasks]
        return cls(
            input_dim=input_dim,
            shared_dim=shared_dim,
            tasks=tasks,
            shared_w=shared_w,
            shared_b=np.zeros(shared_dim),
            head_w=head_w,
            head_b=[np.zeros(t.out_dim) for t in tasks],
        )

    def param_blocks(self) -> list[tuple[str, np.ndarray]]:
        blocks = [("shared.W", self.shared_w), ("shared.b", self.shared_b)]
        for t, w, b in zip(self.tasks, self.head_w, self.head_b):
            blocks.append((f"head.{t.name}.W", w))
            blocks.append((f"head.{t.name}.b", b))
        return blocks

    def copy_params(self) -> dict[str, np.ndarray]:
        return {name: arr.copy() for name, arr in self.param_blocks()}

    def load_params(self, params: dict[str, np.ndarray]) -> None:
        for name, arr in self.param_blocks():
            arr[...] = params[name]

    def check_finite(self) -> None:
        for name, arr in self.param_blocks():
            if not np.isfinite(arr).all():
                raise TrainingError(f"non-finite parameters in block {name}")


def forward(model: MultitaskModel, features: np.ndarray):
    """Shared activations and per-task outputs for a batch.

    Classification outputs are softmax probability rows; regression
    outputs are 1-d prediction vectors.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.input_dim:
        raise ValueError(f"expected batch of dim {model.input_dim}, got shape {x.shape}")
    if x.shape[0] == 0:
        raise ValueError("empty batch")
    if not np.isfinite(x).all():
        raise ValueError("non-finite input features")
    pre = x @ model.shared_w.T + model.shared_b
    shared = np.maximum(pre, 0.0)
    outputs = []
    for t, w, b in zip(model.tasks, model.head_w, model.head_b):
        z = shared @ w.T + b
        if t.kind == "classification":
            z = z - z.max(axis=1, keepdims=True)
            e = np.exp(z)
            outputs.append(e / e.sum(axis=1, keepdims=True))
        else:
            outputs.append(z[:, 0])
    return shared, outputs


def extract_features(model: MultitaskModel, features: np.ndarray) -> np.ndarray:
    """Shared-layer activations, the fine-tuned embedding of the inputs."""
    shared, _ = forward(model, features)
    return shared


@dataclass(frozen=True)
class LossBreakdown:
    per_task: tuple[float, ...]
    weights: tuple[float, ...]
    total: float


def _check_targets(task: TaskSpec, target: np.ndarray, batch: int) -> np.ndarray:
    if task.kind == "classification":
        t = np.asarray(target)
        if t.shape != (batch,):
            raise ValueError(f"task {task.name!r}: target shape {t.shape} != ({batch},)")
        t = t.astype(np.int64)
        if t.min(initial=0) < 0 or t.max(initial=0) >= task.n_classes:
            raise ValueError(
                f"task {task.name!r}: target index out of range [0, {task.n_classes})"
            )
        return t
    t = np.asarray(target, dtype=np.float64)
    if t.shape != (batch,):
        raise ValueError(f"task {task.name!r}: target shape {t.shape} != ({batch},)")
    return t


def multitask_loss(tasks, outputs, targets) -> LossBreakdown:
    """Weighted sum of per-task losses: cross-entropy or MAE, batch means."""
    tasks = tuple(tasks)
    if not (len(tasks) == len(outputs) == len(targets)):
        raise ValueError("one output batch and one target batch per task required")
    per_task = []
    for task, out, target in zip(tasks, outputs, targets):
        out = np.asarray(out, dtype=np.float64)
        batch = out.shape[0]
        t = _check_targets(task, target, batch)
        if task.kind == "classification":
            p = np.maximum(out[np.arange(batch), t], PROB_FLOOR)
            per_task.append(float(np.mean(-np.log(p))))
        else:
            per_task.append(float(np.mean(np.abs(out - t))))
    total = 0.0
    for task, loss in zip(tasks, per_task):
        total += task.weight * loss
    return LossBreakdown(tuple(per_task), tuple(t.weight for t in tasks), total)


def backward(model: MultitaskModel, features: np.ndarray, targets) -> dict[str, np.ndarray]:
    """Exact gradients of the total weighted loss for every parameter block."""
    x = np.asarray(features, dtype=np.float64)
    shared, outputs = forward(model, x)
    batch = x.shape[0]
    pre_mask = (shared > 0.0).astype(np.float64)
    grads: dict[str, np.ndarray] = {}
    d_shared = np.zeros_like(shared)
    for task, w, out, target in zip(model.tasks, model.head_w, outputs, targets):
        t = _check_targets(task, target, batch)
        if task.kind == "classification":
            dz = out.copy()
            dz[np.arange(batch), t] -= 1.0
            dz *= task.weight / batch
        else:
            dz = (np.sign(out - t) * (task.weight / batch))[:, None]
        grads[f"head.{task.name}.W"] = dz.T @ shared
        grads[f"head.{task.name}.b"] = dz.sum(axis=0)
        d_shared += dz @ w
    d_pre = d_shared * pre_mask
    grads["shared.W"] = d_pre.T @ x
    grads["shared.b"] = d_pre.sum(axis=0)
    return grads


@dataclass
class TrainConfig:
    learning_rate: float
    batch_size: int = 128
    patience: int = 5
    max_epochs: int = 100
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ValueError("batch_size, max_epochs and patience must be >= 1")
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ValueError("Adam betas must lie in (0, 1)")
        if self.eps <= 0:
            raise ValueError("eps must be positive")


class Adam:
    """Adam with bias correction; moment buffers start at zero."""

    def __init__(self, config: TrainConfig):
        self.config = config
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, model: MultitaskModel, grads: dict[str, np.ndarray]) -> None:
        c = self.config
        self.t += 1
        for name, param in model.param_blocks():
            g = grads[name]
            if not np.isfinite(g).all():
                raise TrainingError(f"non-finite gradient in block {name} at step {self.t}")
            if name not in self.m:
                self.m[name] = np.zeros_like(param)
                self.v[name] = np.zeros_like(param)
            m = self.m[name]
            v = self.v[name]
            m *= c.beta1
            m += (1.0 - c.beta1) * g
            v *= c.beta2
            v += (1.0 - c.beta2) * g * g
            m_hat = m / (1.0 - c.beta1**self.t)
            v_hat = v / (1.0 - c.beta2**self.t)
            param -= c.learning_rate * m_hat / (np.sqrt(v_hat) + c.eps)


class EarlyStopper:
    """Stop after `patience` consecutive epochs without a validation improvement."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best_loss = np.inf
        self.best_epoch = 0
        self.stale = 0

    def update(self, epoch: int, val_loss: float) -> bool:
        """Record one epoch's validation loss; returns True when training should stop."""
        if val_loss < self.best_loss:
            self.best_loss = val_loss
            self.best_epoch = epoch
            self.stale = 0
            return False
        self.stale += 1
        return self.stale >= self.patience


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float


@dataclass
class TrainResult:
    model: MultitaskModel
    history: list[EpochRecord]
    best_epoch: int
    best_val_loss: float


def train_shallow(
    model: MultitaskModel,
    train_x: np.ndarray,
    train_targets,
    val_x: np.ndarray,
    val_targets,
    config: TrainConfig,
) -> TrainResult:
    """Minibatch-train the head on frozen base features.

    Input features are never written to. Epochs run with seeded shuffles
    until the validation loss stalls for `patience` epochs or max_epochs
    is hit; the returned model carries the parameters of the best
    validation epoch.
    """
    train_x = np.asarray(train_x, dtype=np.float64)
    val_x = np.asarray(val_x, dtype=np.float64)
    if train_x.shape[0] == 0:
        raise TrainingError("empty training set")
    model = copy.deepcopy(model)
    optimizer = Adam(config)
    stopper = EarlyStopper(config.patience)
    rng = np.random.default_rng(config.seed)
    n = train_x.shape[0]
    history: list[EpochRecord] = []
    best_params = model.copy_params()
    train_targets = [np.asarray(t) for t in train_targets]
    val_targets = [np.asarray(t) for t in val_targets]
    for epoch in range(1, config.max_epochs + 1):
        perm = rng.permutation(n)
        loss_sum = 0.0
        for start in range(0, n, config.batch_size):
            idx = perm[start : start + config.batch_size]
            xb = train_x[idx]
            tb = [t[idx] for t in train_targets]
            _, outputs = forward(model, xb)
            breakdown = multitask_loss(model.tasks, outputs, tb)
            if not np.isfinite(breakdown.total):
                raise TrainingError(f"non-finite training loss at epoch {epoch}")
            loss_sum += breakdown.total * len(idx)
            grads = backward(model, xb, tb)
            optimizer.step(model, grads)
        model.check_finite()
        train_loss = loss_sum / n
        _, val_out = forward(model, val_x)
        val_loss = multitask_loss(model.tasks, val_out, val_targets).total
        if not np.isfinite(val_loss):
            raise TrainingError(f"non-finite validation loss at epoch {epoch}")
        history.append(EpochRecord(epoch, train_loss, val_loss))
        improved_to_best = val_loss < stopper.best_loss
        stop = stopper.update(epoch, val_loss)
        if improved_to_best:
            best_params = model.copy_params()
        if stop:
            break
    model.load_params(best_params)
    return TrainResult(model, history, stopper.best_epoch, float(stopper.best_loss))


def write_history_csv(history: list[EpochRecord], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_loss"])
        for rec in history:
            writer.writerow([rec.epoch, repr(rec.train_loss), repr(rec.val_loss)])


_KIND_CODES = {"classification": 0, "regression": 1}
_KIND_NAMES = {v: k for k, v in _KIND_CODES.items()}


def save_checkpoint(model: MultitaskModel, path) -> None:
    """MTH1 binary checkpoint: dims, task specs, then float64 parameter blocks."""
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<III", model.input_dim, model.shared_dim, len(model.tasks)))
        for t in model.tasks:
            raw = t.name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<BId", _KIND_CODES[t.kind], t.out_dim, t.weight))
        for _, arr in model.param_blocks():
            fh.write(arr.astype("<f8").tobytes())


def load_checkpoint(path) -> MultitaskModel:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not an MTH1 checkpoint")
    offset = 4
    input_dim, shared_dim, n_tasks = struct.unpack_from("<III", data, offset)
    offset += 12
    tasks: list[TaskSpec] = []
    for _ in range(n_tasks):
        (name_len,) = struct.unpack_from("<H", data, offset)
        offset += 2
        name = data[offset : offset + name_len].decode("utf-8")
        offset += name_len
        kind_code, out_dim, weight = struct.unpack_from("<BId", data, offset)
        offset += struct.calcsize("<BId")
        kind = _KIND_NAMES[kind_code]
        tasks.append(
            TaskSpec(name, kind, n_classes=out_dim if kind == "classification" else 0, weight=weight)
        )
    model = MultitaskModel(
        input_dim=input_dim,
        shared_dim=shared_dim,
        tasks=tuple(tasks),
        shared_w=np.zeros((shared_dim, input_dim)),
        shared_b=np.zeros(shared_dim),
        head_w=[np.zeros((t.out_dim, shared_dim)) for t in tasks],
        head_b=[np.zeros(t.out_dim) for t in tasks],
    )
    for name, arr in model.param_blocks():
        if offset + arr.size * 8 > len(data):
            raise ValueError(f"{path}: truncated parameter payload in block {name}")
        flat = np.frombuffer(data, dtype="<f8", count=arr.size, offset=offset)
        arr[...] = flat.reshape(arr.shape)
        offset += arr.size * 8
    if offset != len(data):
        raise ValueError(f"{path}: {len(data) - offset} trailing bytes")
    return model
