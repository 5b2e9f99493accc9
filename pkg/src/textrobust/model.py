"""Reference classifier, predictions and confidence-aware ensembles.

The reference classifier is a one-hidden-layer network over
``[mean token embedding | lexicon features | aux features]`` trained with Adam
on softmax cross-entropy. Any object with a ``schema`` attribute and a
``predict_proba(X)`` method can stand in for it inside an ensemble.
"""
from __future__ import annotations

import base64
import json
import logging
from dataclasses import asdict, dataclass, field
from os import PathLike
from typing import Protocol, Sequence

import numpy as np

from .corpus import Dataset, LabeledExample, TaskSchema
from .embeddings import EmbeddingStore, embed_tokens
from .errors import DatasetError, TrainingDivergedError

log = logging.getLogger(__name__)

PUBLISHED_LEARNING_RATE = 1e-6


@dataclass(frozen=True)
class Layout:
    embed_dim: int
    lexicon_dim: int
    aux_dim: int = 0

    @property
    def width(self) -> int:
        return self.embed_dim + self.lexicon_dim + self.aux_dim


def layout_for(dataset: Dataset, store: EmbeddingStore) -> Layout:
    if not dataset.examples:
        raise DatasetError("cannot infer a feature layout from an empty dataset")
    ex = dataset.examples[0]
    return Layout(store.dim, len(ex.lexicon_features), len(ex.aux_features or ()))


def featurize(example: LabeledExample, store: EmbeddingStore, layout: Layout | None = None) -> np.ndarray:
    emb, _ = embed_tokens(store, example.tokens)
    aux = example.aux_features or ()
    if layout is not None:
        if store.dim != layout.embed_dim:
            raise DatasetError(f"embedding dim {store.dim} does not match layout {layout.embed_dim}")
        if len(example.lexicon_features) != layout.lexicon_dim:
            raise DatasetError(f"example {example.id}: {len(example.lexicon_features)} lexicon features, "
                               f"layout expects {layout.lexicon_dim}")
        if len(aux) != layout.aux_dim:
            raise DatasetError(f"example {example.id}: aux length {len(aux)}, layout expects {layout.aux_dim}")
    return np.concatenate([emb, np.asarray(example.lexicon_features, dtype=np.float64),
                           np.asarray(aux, dtype=np.float64)])


def featurize_dataset(dataset: Dataset, store: EmbeddingStore, layout: Layout | None = None) -> np.ndarray:
    layout = layout or layout_for(dataset, store)
    if not dataset.examples:
        return np.zeros((0, layout.width))
    return np.vstack([featurize(ex, store, layout) for ex in dataset.examples])


# ---------------------------------------------------------------------------
# predictions


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass(frozen=True)
class Prediction:
    probs: tuple[float, ...]
    label_index: int
    confidence: float
    classes: tuple[str, ...] = field(repr=False, default=())

    @property
    def label(self) -> str:
        return self.classes[self.label_index] if self.classes else str(self.label_index)

    @classmethod
    def from_probs(cls, probs: np.ndarray, classes: Sequence[str] = ()) -> "Prediction":
        idx = int(np.argmax(probs))  # first maximum, i.e. lowest class index on ties
        return cls(tuple(float(p) for p in probs), idx, float(probs[idx]), tuple(classes))


class Classifier(Protocol):
    schema: TaskSchema

    def predict_proba(self, X: np.ndarray) -> np.ndarray: ...


# ---------------------------------------------------------------------------
# reference network


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    dropout: float = 0.2
    epochs: int = 10
    hidden_width: int = 32
    batch_size: int = 32
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.epochs < 0 or self.hidden_width < 1 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ValueError("invalid training configuration")

    @classmethod
    def published_preset(cls, **overrides) -> "TrainConfig":
        """Hyperparameters reported for the original two-branch network."""
        return cls(**{"learning_rate": PUBLISHED_LEARNING_RATE, "dropout": 0.2, "epochs": 10, **overrides})


PARAM_NAMES = ("W1", "b1", "W2", "b2")


@dataclass(eq=False)
class ReferenceClassifier:
    schema: TaskSchema
    layout: Layout
    config: TrainConfig
    params: dict[str, np.ndarray]
    loss_trace: list[float] = field(default_factory=list)

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        probs, _ = forward(self.params, np.atleast_2d(X))
        return probs


def init_params(n_in: int, hidden: int, n_out: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
    lim1 = np.sqrt(6.0 / (n_in + hidden))
    lim2 = np.sqrt(6.0 / (hidden + n_out))
    return {
        "W1": rng.uniform(-lim1, lim1, size=(n_in, hidden)),
        "b1": np.zeros(hidden),
        "W2": rng.uniform(-lim2, lim2, size=(hidden, n_out)),
        "b2": np.zeros(n_out),
    }


def forward(params: dict[str, np.ndarray], X: np.ndarray, mask: np.ndarray | None = None):
    hidden = np.tanh(X @ params["W1"] + params["b1"])
    dropped = hidden if mask is None else hidden * mask
    probs = softmax(dropped @ params["W2"] + params["b2"])
    return probs, (hidden, dropped)


def loss_and_grads(params: dict[str, np.ndarray], X: np.ndarray, y: np.ndarray,
                   mask: np.ndarray | None = None) -> tuple[float, dict[str, np.ndarray]]:
    """Summed cross-entropy over the batch and its gradient for every parameter.

    ``mask`` is an inverted-dropout mask on the hidden units (already scaled).
    """
    probs, (hidden, dropped) = forward(params, X, mask)
    n = X.shape[0]
    picked = probs[np.arange(n), y]
    loss = float(-np.log(np.maximum(picked, 1e-300)).sum())
    d_logits = probs.copy()
    d_logits[np.arange(n), y] -= 1.0
    grads = {"W2": dropped.T @ d_logits, "b2": d_logits.sum(axis=0)}
    d_hidden = d_logits @ params["W2"].T
    if mask is not None:
        d_hidden = d_hidden * mask
    d_pre = d_hidden * (1.0 - hidden ** 2)
    grads["W1"] = X.T @ d_pre
    grads["b1"] = d_pre.sum(axis=0)
    return loss, grads


def _check_finite(loss: float, params: dict[str, np.ndarray], epoch: int) -> None:
    if not np.isfinite(loss) or not all(np.all(np.isfinite(p)) for p in params.values()):
        raise TrainingDivergedError(f"non-finite loss or parameters at epoch {epoch} (loss={loss})")


def train_arrays(X: np.ndarray, y: np.ndarray, schema: TaskSchema, layout: Layout,
                 config: TrainConfig = TrainConfig()) -> ReferenceClassifier:
    if X.shape[0] == 0:
        raise DatasetError("training set is empty")
    if len(np.unique(y)) < 2:
        raise DatasetError("training set must contain at least two classes")
    if X.shape[1] != layout.width:
        raise DatasetError(f"feature width {X.shape[1]} does not match layout {layout.width}")
    rng = np.random.default_rng(np.uint64(config.seed & 0xFFFFFFFFFFFFFFFF))
    params = init_params(layout.width, config.hidden_width, schema.n_classes, rng)
    m = {k: np.zeros_like(v) for k, v in params.items()}
    v = {k: np.zeros_like(p) for k, p in params.items()}
    step = 0
    trace = []
    keep = 1.0 - config.dropout
    n = X.shape[0]
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            batch = order[start:start + config.batch_size]
            mask = None
            if config.dropout > 0.0:
                mask = (rng.random((batch.shape[0], config.hidden_width)) < keep) / keep
            loss, grads = loss_and_grads(params, X[batch], y[batch], mask)
            step += 1
            scale = 1.0 / batch.shape[0]
            for k in PARAM_NAMES:
                g = grads[k] * scale
                m[k] = config.beta1 * m[k] + (1 - config.beta1) * g
                v[k] = config.beta2 * v[k] + (1 - config.beta2) * g * g
                m_hat = m[k] / (1 - config.beta1 ** step)
                v_hat = v[k] / (1 - config.beta2 ** step)
                params[k] = params[k] - config.learning_rate * m_hat / (np.sqrt(v_hat) + config.eps)
            _check_finite(loss, params, epoch)
        epoch_loss, _ = loss_and_grads(params, X, y)
        epoch_loss /= n
        _check_finite(epoch_loss, params, epoch)
        trace.append(epoch_loss)
        log.debug("epoch %d loss %.6f", epoch, epoch_loss)
    return ReferenceClassifier(schema=schema, layout=layout, config=config, params=params, loss_trace=trace)


def train(train_set: Dataset, store: EmbeddingStore, config: TrainConfig = TrainConfig()) -> ReferenceClassifier:
    """Fit the reference classifier on a dataset featurized with ``store``."""
    if len(train_set) == 0:
        raise DatasetError("training set is empty")
    layout = layout_for(train_set, store)
    X = featurize_dataset(train_set, store, layout)
    return train_arrays(X, train_set.label_indices(), train_set.schema, layout, config)


def predict(model: Classifier, example: LabeledExample | np.ndarray, store: EmbeddingStore | None = None) -> Prediction:
    if isinstance(example, LabeledExample):
        if store is None:
            raise ValueError("a store is needed to featurize a LabeledExample")
        x = featurize(example, store, getattr(model, "layout", None))
    else:
        x = np.asarray(example, dtype=np.float64)
    probs = model.predict_proba(x[None, :])[0]
    return Prediction.from_probs(probs, model.schema.classes)


def gradient_check(model: ReferenceClassifier, X: np.ndarray, y: np.ndarray, step: float = 1e-5,
                   floor: float = 1e-6) -> float:
    """Largest relative error between analytic and central-difference gradients.

    Relative error is ``|a - n| / max(|a|, |n|, floor)``; dropout is disabled.
    """
    params = {k: p.copy() for k, p in model.params.items()}
    X = np.atleast_2d(X)
    y = np.atleast_1d(y)
    _, grads = loss_and_grads(params, X, y)
    worst = 0.0
    for name in PARAM_NAMES:
        p = params[name]
        flat = p.reshape(-1)
        g = grads[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up, _ = loss_and_grads(params, X, y)
            flat[i] = orig - step
            down, _ = loss_and_grads(params, X, y)
            flat[i] = orig
            num = (up - down) / (2 * step)
            err = abs(g[i] - num) / max(abs(g[i]), abs(num), floor)
            worst = max(worst, err)
    return worst


# ---------------------------------------------------------------------------
# ensembles

ENS_C, ENS_W, ENS_CW, CUSTOM = "EnsC", "EnsW", "EnsCW", "custom"
_ENSEMBLE_SIZES = {ENS_C: 3, ENS_W: 3, ENS_CW: 5}


@dataclass(eq=False)
class EnsembleModel:
    members: list
    tag: str = CUSTOM

    def __post_init__(self):
        if len(self.members) < 2:
            raise ValueError("an ensemble needs at least two members")
        schemas = {m.schema.classes for m in self.members}
        if len(schemas) != 1:
            raise DatasetError("ensemble members disagree on the class schema")
        want = _ENSEMBLE_SIZES.get(self.tag)
        if want is not None and len(self.members) != want:
            raise ValueError(f"{self.tag} needs {want} members, got {len(self.members)}")

    @property
    def schema(self) -> TaskSchema:
        return self.members[0].schema

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return np.mean([m.predict_proba(X) for m in self.members], axis=0)

    def vote(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Voted labels, mean probabilities and winning confidences for a batch."""
        member_probs = np.stack([m.predict_proba(np.atleast_2d(X)) for m in self.members], axis=1)
        return vote_batch(member_probs)


def vote(member_probs: np.ndarray) -> tuple[int, float]:
    """Plurality vote over members' argmax labels.

    Vote ties go to the tied label whose voters include the single most
    confident member; exact confidence ties go to the lowest class index. The
    returned confidence is the mean confidence of the members that voted for
    the winning label.
    """
    labels = member_probs.argmax(axis=1)
    confs = member_probs.max(axis=1)
    counts = np.bincount(labels, minlength=member_probs.shape[1])
    tied = np.flatnonzero(counts == counts.max())
    if tied.size == 1:
        winner = int(tied[0])
    else:
        best = [confs[labels == c].max() for c in tied]
        winner = int(tied[int(np.argmax(best))])
    return winner, float(confs[labels == winner].mean())


def vote_batch(member_probs: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``member_probs`` has shape (n_examples, n_members, n_classes)."""
    n = member_probs.shape[0]
    winners = np.empty(n, dtype=np.int64)
    confs = np.empty(n)
    for i in range(n):
        winners[i], confs[i] = vote(member_probs[i])
    return winners, member_probs.mean(axis=1), confs


def ensemble_predict(ensemble: EnsembleModel, example: LabeledExample | np.ndarray,
                     store: EmbeddingStore | None = None) -> Prediction:
    if isinstance(example, LabeledExample):
        if store is None:
            raise ValueError("a store is needed to featurize a LabeledExample")
        x = featurize(example, store, getattr(ensemble.members[0], "layout", None))
    else:
        x = np.asarray(example, dtype=np.float64)
    member_probs = np.stack([m.predict_proba(x[None, :])[0] for m in ensemble.members])
    label, conf = vote(member_probs)
    probs = member_probs.mean(axis=0)
    return Prediction(tuple(float(p) for p in probs), label, conf, ensemble.schema.classes)


# ---------------------------------------------------------------------------
# checkpoints


def _encode(a: np.ndarray) -> dict:
    return {"shape": list(a.shape), "data": base64.b64encode(np.ascontiguousarray(a, dtype="<f8").tobytes()).decode()}


def _decode(d: dict) -> np.ndarray:
    return np.frombuffer(base64.b64decode(d["data"]), dtype="<f8").reshape(d["shape"]).astype(np.float64)


def save_model(model: ReferenceClassifier, path: str | PathLike) -> None:
    doc = {
        "format": "textrobust.reference_classifier/1",
        "schema": model.schema.to_dict(),
        "layout": asdict(model.layout),
        "config": asdict(model.config),
        "loss_trace": model.loss_trace,
        "params": {k: _encode(model.params[k]) for k in PARAM_NAMES},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)


def load_model(path: str | PathLike) -> ReferenceClassifier:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    return ReferenceClassifier(
        schema=TaskSchema.from_dict(doc["schema"]),
        layout=Layout(**doc["layout"]),
        config=TrainConfig(**doc["config"]),
        params={k: _decode(doc["params"][k]) for k in PARAM_NAMES},
        loss_trace=list(doc["loss_trace"]),
    )
