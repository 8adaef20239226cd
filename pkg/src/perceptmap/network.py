"""Two-class fully connected network trained from scratch.

Architecture: 1024 inputs -> ReLU hidden layer -> 2 logits -> softmax.
Regularization is inverted dropout at three sites (input 0.5, hidden 0.45,
output 0.3 drop rates); optimization is Adam on mean cross-entropy. All math
is plain numpy in float64 so analytic gradients can be checked against
central finite differences.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .dataset import EXAMPLE_DIM, ExampleSet
from .errors import NumericError

DEFAULT_HIDDEN_SIZE = 512


@dataclass
class ModelParams:
    W1: np.ndarray  # (hidden, in)
    b1: np.ndarray  # (hidden,)
    W2: np.ndarray  # (2, hidden)
    b2: np.ndarray  # (2,)

    @property
    def hidden_size(self) -> int:
        return self.W1.shape[0]

    @property
    def input_dim(self) -> int:
        return self.W1.shape[1]

    def copy(self) -> "ModelParams":
        return ModelParams(self.W1.copy(), self.b1.copy(), self.W2.copy(), self.b2.copy())

    def as_dict(self) -> dict[str, np.ndarray]:
        return {"W1": self.W1, "b1": self.b1, "W2": self.W2, "b2": self.b2}


@dataclass
class TrainConfig:
    learning_rate: float = 1e-5
    batch_size: int = 64
    dropout_input: float = 0.5
    dropout_hidden: float = 0.45
    dropout_output: float = 0.3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    max_epochs: int = 200
    patience: int = 20
    seed: int = 0
    hidden_size: int = DEFAULT_HIDDEN_SIZE
    # True masks the logits (the literal "output layer" site); False relocates
    # the third mask onto the hidden activations' outgoing side instead.
    logit_dropout: bool = True

    def __post_init__(self) -> None:
        for name in ("dropout_input", "dropout_hidden", "dropout_output"):
            rate = getattr(self, name)
            if not (0.0 <= rate < 1.0):
                raise ValueError(f"{name}={rate} outside [0, 1)")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")

    def without_dropout(self) -> "TrainConfig":
        cfg = asdict(self)
        cfg.update(dropout_input=0.0, dropout_hidden=0.0, dropout_output=0.0)
        return TrainConfig(**cfg)


def init_params(input_dim: int = EXAMPLE_DIM,
                hidden_size: int = DEFAULT_HIDDEN_SIZE,
                seed: int = 0) -> ModelParams:
    """Seeded uniform init in +-sqrt(6 / (fan_in + fan_out)); zero biases."""
    rng = np.random.default_rng(seed)
    lim1 = np.sqrt(6.0 / (input_dim + hidden_size))
    lim2 = np.sqrt(6.0 / (hidden_size + 2))
    return ModelParams(
        W1=rng.uniform(-lim1, lim1, size=(hidden_size, input_dim)),
        b1=np.zeros(hidden_size),
        W2=rng.uniform(-lim2, lim2, size=(2, hidden_size)),
        b2=np.zeros(2),
    )


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exps = np.exp(shifted)
    return exps / exps.sum(axis=-1, keepdims=True)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(0.0, x)


def _dropout_mask(rng: np.random.Generator, shape: tuple[int, ...],
                  rate: float) -> np.ndarray:
    """Inverted-dropout mask: Bernoulli(keep) scaled by 1/keep."""
    if rate == 0.0:
        return np.ones(shape)
    keep = 1.0 - rate
    return (rng.random(shape) < keep).astype(np.float64) / keep


@dataclass
class ForwardCache:
    x_in: np.ndarray             # input after its mask, as fed to W1
    pre1: np.ndarray
    hidden_fed: np.ndarray       # hidden after masks, as fed to W2
    mask_in: np.ndarray | None
    mask_hidden: np.ndarray | None
    mask_out: np.ndarray | None
    logit_site: bool


def forward(params: ModelParams, x: np.ndarray, mode: str = "eval",
            rng: np.random.Generator | None = None,
            config: TrainConfig | None = None) -> tuple[np.ndarray, ForwardCache]:
    """Run the network on a batch (or a single row); returns (probs, cache).

    Train mode draws inverted-dropout masks from `rng` at the rates in
    `config`; eval mode applies no masks and is a pure function of (params, x).
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "train" and (rng is None or config is None):
        raise ValueError("train mode needs rng and config")

    single = x.ndim == 1
    xb = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if xb.shape[1] != params.input_dim:
        raise ValueError(f"input width {xb.shape[1]} != model input {params.input_dim}")

    mask_in = mask_hidden = mask_out = None
    logit_site = True
    if mode == "train":
        logit_site = config.logit_dropout
        mask_in = _dropout_mask(rng, xb.shape, config.dropout_input)
        xb = xb * mask_in

    # Finiteness is checked explicitly below; keep numpy quiet meanwhile.
    with np.errstate(invalid="ignore", over="ignore"):
        pre1 = xb @ params.W1.T + params.b1
        hidden_fed = relu(pre1)

        if mode == "train":
            mask_hidden = _dropout_mask(rng, hidden_fed.shape, config.dropout_hidden)
            hidden_fed = hidden_fed * mask_hidden
            if not logit_site:
                mask_out = _dropout_mask(rng, hidden_fed.shape, config.dropout_output)
                hidden_fed = hidden_fed * mask_out

        logits = hidden_fed @ params.W2.T + params.b2
        if mode == "train" and logit_site:
            mask_out = _dropout_mask(rng, logits.shape, config.dropout_output)
            logits = logits * mask_out

        probs = softmax(logits)
    if not np.all(np.isfinite(probs)):
        raise NumericError("non-finite activation in forward pass")

    cache = ForwardCache(x_in=xb, pre1=pre1, hidden_fed=hidden_fed,
                         mask_in=mask_in, mask_hidden=mask_hidden,
                         mask_out=mask_out, logit_site=logit_site)
    return (probs[0] if single else probs), cache


def predict_probs(params: ModelParams, x: np.ndarray) -> np.ndarray:
    probs, _ = forward(params, x, mode="eval")
    return probs


def codes_to_indices(labels: np.ndarray) -> np.ndarray:
    """Vote codes {1, 2} to class indices {0, 1}."""
    labels = np.asarray(labels)
    if not np.all(np.isin(labels, (1, 2))):
        raise ValueError("labels must be vote codes 1 or 2")
    return labels - 1


def cross_entropy(probs: np.ndarray, class_idx: np.ndarray) -> float:
    picked = probs[np.arange(probs.shape[0]), class_idx]
    # Guard the log; a perfect 0 probability would otherwise poison the mean.
    loss = float(-np.mean(np.log(np.maximum(picked, 1e-300))))
    if not np.isfinite(loss):
        raise NumericError("non-finite cross-entropy loss")
    return loss


def loss_and_grads(params: ModelParams, x: np.ndarray, labels: np.ndarray,
                   config: TrainConfig, rng: np.random.Generator | None = None,
                   use_dropout: bool = True) -> tuple[float, dict[str, np.ndarray]]:
    """Mean cross-entropy over the batch and gradients for every parameter.

    Backpropagation reuses the exact dropout masks drawn in the forward pass.
    `use_dropout=False` runs the deterministic eval-mode graph (used by the
    finite-difference gradient check).
    """
    xb = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if xb.shape[0] == 0:
        raise ValueError("batch must be non-empty")
    class_idx = codes_to_indices(np.atleast_1d(labels))

    if use_dropout:
        probs, cache = forward(params, xb, mode="train", rng=rng, config=config)
    else:
        probs, cache = forward(params, xb, mode="eval")
    probs = np.atleast_2d(probs)
    loss = cross_entropy(probs, class_idx)

    batch = xb.shape[0]
    onehot = np.zeros_like(probs)
    onehot[np.arange(batch), class_idx] = 1.0

    dmasked_logits = (probs - onehot) / batch
    if cache.mask_out is not None and cache.logit_site:
        dlogits = dmasked_logits * cache.mask_out
    else:
        dlogits = dmasked_logits

    grads = {
        "W2": dlogits.T @ cache.hidden_fed,
        "b2": dlogits.sum(axis=0),
    }
    dhidden_fed = dlogits @ params.W2
    if cache.mask_out is not None and not cache.logit_site:
        dhidden_fed = dhidden_fed * cache.mask_out
    if cache.mask_hidden is not None:
        dhidden_fed = dhidden_fed * cache.mask_hidden
    dpre1 = dhidden_fed * (cache.pre1 > 0.0)
    grads["W1"] = dpre1.T @ cache.x_in
    grads["b1"] = dpre1.sum(axis=0)
    return loss, grads


# -- Adam -----------------------------------------------------------------------

@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def for_params(cls, params: ModelParams) -> "AdamState":
        zeros = {k: np.zeros_like(a) for k, a in params.as_dict().items()}
        return cls(m=zeros, v={k: np.zeros_like(a) for k, a in params.as_dict().items()})


def adam_step(params: ModelParams, grads: dict[str, np.ndarray],
              state: AdamState, config: TrainConfig) -> None:
    """One bias-corrected Adam update, in place."""
    state.t += 1
    b1, b2 = config.adam_beta1, config.adam_beta2
    arrays = params.as_dict()
    for key, grad in grads.items():
        state.m[key] = b1 * state.m[key] + (1.0 - b1) * grad
        state.v[key] = b2 * state.v[key] + (1.0 - b2) * grad * grad
        m_hat = state.m[key] / (1.0 - b1 ** state.t)
        v_hat = state.v[key] / (1.0 - b2 ** state.t)
        arrays[key] -= config.learning_rate * m_hat / (np.sqrt(v_hat) + config.adam_eps)


# -- training loop ---------------------------------------------------------------

@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_loss: float


@dataclass
class TrainResult:
    params: ModelParams
    history: list[EpochStats]
    best_epoch: int


def train(train_set: ExampleSet, val_set: ExampleSet,
          config: TrainConfig | None = None,
          initial: ModelParams | None = None) -> TrainResult:
    """Mini-batch Adam training with early stopping on validation loss.

    Runs until max_epochs or until validation loss has not improved for
    `patience` consecutive epochs; returns the best-validation parameters and
    the per-epoch loss curves. Deterministic for a fixed config seed.
    """
    config = config or TrainConfig()
    if len(train_set) == 0 or len(val_set) == 0:
        raise ValueError("train and validation partitions must be non-empty")

    rng = np.random.default_rng(config.seed)
    params = initial.copy() if initial is not None else init_params(
        input_dim=train_set.x.shape[1], hidden_size=config.hidden_size,
        seed=config.seed)
    state = AdamState.for_params(params)

    x_train = train_set.x
    y_train = np.asarray(train_set.label)
    history: list[EpochStats] = []
    best_val = np.inf
    best_params = params.copy()
    best_epoch = 0
    stale = 0

    for epoch in range(1, config.max_epochs + 1):
        perm = rng.permutation(len(train_set))
        batch_losses = []
        for start in range(0, len(perm), config.batch_size):
            idx = perm[start:start + config.batch_size]
            try:
                loss, grads = loss_and_grads(
                    params, x_train[idx], y_train[idx], config, rng=rng)
            except NumericError as exc:
                raise NumericError(
                    f"training diverged at epoch {epoch}, batch {start // config.batch_size}: {exc}"
                ) from exc
            adam_step(params, grads, state, config)
            batch_losses.append(loss)

        train_loss = float(np.mean(batch_losses))
        val_loss = eval_loss(params, val_set)
        history.append(EpochStats(epoch=epoch, train_loss=train_loss, val_loss=val_loss))

        if val_loss < best_val:
            best_val = val_loss
            best_params = params.copy()
            best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break

    return TrainResult(params=best_params, history=history, best_epoch=best_epoch)


def eval_loss(params: ModelParams, examples: ExampleSet,
              batch_size: int = 4096) -> float:
    class_idx = codes_to_indices(examples.label)
    total = 0.0
    for start in range(0, len(examples), batch_size):
        stop = min(start + batch_size, len(examples))
        probs = predict_probs(params, examples.x[start:stop])
        picked = probs[np.arange(stop - start), class_idx[start:stop]]
        total += float(-np.log(np.maximum(picked, 1e-300)).sum())
    return total / len(examples)


# -- evaluation -------------------------------------------------------------------

@dataclass
class ConfusionMatrix:
    """2x2 counts indexed (true code, predicted code) over codes {1, 2}."""

    counts: np.ndarray

    @classmethod
    def from_predictions(cls, y_true: np.ndarray, y_pred: np.ndarray) -> "ConfusionMatrix":
        true_idx = codes_to_indices(np.asarray(y_true))
        pred_idx = codes_to_indices(np.asarray(y_pred))
        counts = np.zeros((2, 2), dtype=np.int64)
        np.add.at(counts, (true_idx, pred_idx), 1)
        return cls(counts=counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.counts)) / self.total

    def row_totals(self) -> tuple[int, int]:
        sums = self.counts.sum(axis=1)
        return int(sums[0]), int(sums[1])

    def to_text(self) -> str:
        c = self.counts
        lines = [
            "            predicted 1  predicted 2  total",
            f"true 1      {c[0, 0]:>11,}  {c[0, 1]:>11,}  {c[0, 0] + c[0, 1]:>5,}",
            f"true 2      {c[1, 0]:>11,}  {c[1, 1]:>11,}  {c[1, 0] + c[1, 1]:>5,}",
            f"total       {c[0, 0] + c[1, 0]:>11,}  {c[0, 1] + c[1, 1]:>11,}  {self.total:>5,}",
        ]
        return "\n".join(lines)


def predict_codes(params: ModelParams, x: np.ndarray,
                  batch_size: int = 4096) -> np.ndarray:
    xb = np.atleast_2d(x)
    out = np.zeros(xb.shape[0], dtype=np.int64)
    for start in range(0, xb.shape[0], batch_size):
        stop = min(start + batch_size, xb.shape[0])
        probs = predict_probs(params, xb[start:stop])
        out[start:stop] = np.argmax(probs, axis=1) + 1
    return out


def evaluate(params: ModelParams, examples: ExampleSet) -> tuple[ConfusionMatrix, float]:
    if len(examples) == 0:
        raise ValueError("cannot evaluate an empty partition")
    predicted = predict_codes(params, examples.x)
    matrix = ConfusionMatrix.from_predictions(examples.label, predicted)
    return matrix, matrix.accuracy


def swap_consistency_rate(params: ModelParams, examples: ExampleSet) -> float:
    """Fraction of swapped twins on which the model flips its prediction.

    The architecture does not enforce swap antisymmetry, so this is reported
    as a metric rather than asserted.
    """
    by_vote: dict[str, dict[bool, int]] = {}
    predicted = predict_codes(params, examples.x)
    for i, vote_id in enumerate(examples.origin_vote_id):
        by_vote.setdefault(vote_id, {})[bool(examples.swapped[i])] = int(predicted[i])
    pairs = [p for p in by_vote.values() if len(p) == 2]
    if not pairs:
        return 0.0
    consistent = sum(1 for p in pairs if p[False] == 3 - p[True])
    return consistent / len(pairs)


# -- persistence -------------------------------------------------------------------

def save_model(path: Path | str, params: ModelParams, config: TrainConfig,
               history: list[EpochStats] | None = None,
               norm_stats_ref: str = "") -> None:
    doc = {
        "hidden_size": params.hidden_size,
        "W1": params.W1.tolist(),
        "b1": params.b1.tolist(),
        "W2": params.W2.tolist(),
        "b2": params.b2.tolist(),
        "config": asdict(config),
        "norm_stats_ref": norm_stats_ref,
        "train_history": [asdict(h) for h in (history or [])],
    }
    Path(path).write_text(json.dumps(doc))


def load_model(path: Path | str) -> tuple[ModelParams, TrainConfig, dict]:
    doc = json.loads(Path(path).read_text())
    params = ModelParams(
        W1=np.asarray(doc["W1"], dtype=np.float64),
        b1=np.asarray(doc["b1"], dtype=np.float64),
        W2=np.asarray(doc["W2"], dtype=np.float64),
        b2=np.asarray(doc["b2"], dtype=np.float64),
    )
    config = TrainConfig(**doc["config"])
    meta = {"norm_stats_ref": doc.get("norm_stats_ref", ""),
            "train_history": doc.get("train_history", [])}
    return params, config, meta


def write_curves(path: Path | str, history: list[EpochStats]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_loss"])
        for h in history:
            writer.writerow([h.epoch, f"{h.train_loss:.10g}", f"{h.val_loss:.10g}"])
