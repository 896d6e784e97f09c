"""Bidirectional LSTM next-activity model: forward pass, exact BPTT,
Nadam training with early stopping, and JSON serialization.

Cell equations are the standard ("vanilla") formulation:

    i = sigm(W_i x + U_i h' + b_i)      f = sigm(W_f x + U_f h' + b_f)
    o = sigm(W_o x + U_o h' + b_o)      g = tanh(W_g x + U_g h' + b_g)
    c = f * c' + i * g                  h = o * tanh(c)

Both directions start from zero states and consume only the true
(unpadded) suffix of each sample; the backward direction reads it newest
to oldest. Their final hidden states are concatenated and fed through a
dense softmax layer over activity classes.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import IO, Union

import numpy as np

from . import tensorcore as tc
from .encoding import ActivityVocabulary, PrefixDataset, PrefixSample
from .errors import (
    CorruptModel,
    EmptyDataset,
    NonFiniteLoss,
    ShapeMismatch,
    VersionMismatch,
)

MODEL_FORMAT_VERSION = 1
GATES = ("i", "f", "o", "g")


@dataclass
class TrainConfig:
    hidden_size: int = 100
    dropout_rate: float = 0.2
    batch_size: int = 128
    max_epochs: int = 100
    patience: int = 10
    learning_rate: float = 0.002
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon_opt: float = 1e-7
    seed: int = 42

    def __post_init__(self):
        if not 0 <= self.dropout_rate < 1:
            raise ValueError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class LstmDirectionParams:
    """Weights of one LSTM direction; W_* read the input, U_* the recurrence."""
    W_i: np.ndarray
    U_i: np.ndarray
    b_i: np.ndarray
    W_f: np.ndarray
    U_f: np.ndarray
    b_f: np.ndarray
    W_o: np.ndarray
    U_o: np.ndarray
    b_o: np.ndarray
    W_g: np.ndarray
    U_g: np.ndarray
    b_g: np.ndarray

    def items(self):
        for gate in GATES:
            for kind in ("W", "U", "b"):
                name = f"{kind}_{gate}"
                yield name, getattr(self, name)


@dataclass
class BiLstmModel:
    forward_params: LstmDirectionParams
    backward_params: LstmDirectionParams
    W_out: np.ndarray  # (H, 2D)
    b_out: np.ndarray  # (H,)
    vocab: ActivityVocabulary
    max_len: int
    hyperparams: dict
    trained_epochs: int = 0

    @property
    def hidden_size(self) -> int:
        return self.forward_params.b_i.shape[0]

    @property
    def n_classes(self) -> int:
        return self.vocab.size

    def param_items(self) -> list[tuple[str, np.ndarray]]:
        """All trainable arrays in a fixed, documented order."""
        out = [(f"forward.{n}", a) for n, a in self.forward_params.items()]
        out += [(f"backward.{n}", a) for n, a in self.backward_params.items()]
        out += [("W_out", self.W_out), ("b_out", self.b_out)]
        return out


@dataclass
class DirectionTrace:
    """Per-timestep quantities of one direction, in its own reading order."""
    inputs: np.ndarray  # (T, H) as consumed
    pre_i: np.ndarray
    pre_f: np.ndarray
    pre_o: np.ndarray
    pre_g: np.ndarray
    gate_i: np.ndarray
    gate_f: np.ndarray
    gate_o: np.ndarray
    cand: np.ndarray  # tanh candidate
    c: np.ndarray  # (T+1, D), c[0] is the zero initial state
    h: np.ndarray  # (T+1, D)


@dataclass
class ForwardTrace:
    fwd: DirectionTrace
    bwd: DirectionTrace
    logits: np.ndarray
    probs: np.ndarray
    true_length: int


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    train_accuracy: float
    val_loss: float
    val_accuracy: float


# --- initialization -------------------------------------------------------

def _glorot(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (rows + cols))
    return rng.uniform(-limit, limit, size=(rows, cols))


def _init_direction(rng: np.random.Generator, d: int, h: int) -> LstmDirectionParams:
    def gate(forget: bool) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        w = _glorot(rng, d, h)
        u = _glorot(rng, d, d)
        b = np.ones(d) if forget else np.zeros(d)
        return w, u, b

    wi, ui, bi = gate(False)
    wf, uf, bf = gate(True)  # forget bias 1 helps early gradient flow
    wo, uo, bo = gate(False)
    wg, ug, bg = gate(False)
    return LstmDirectionParams(wi, ui, bi, wf, uf, bf, wo, uo, bo, wg, ug, bg)


def init_model(vocab: ActivityVocabulary, max_len: int, config: TrainConfig) -> BiLstmModel:
    """Fresh model with Glorot-uniform weights, seeded by the config."""
    rng = np.random.default_rng(np.random.SeedSequence(config.seed).spawn(1)[0])
    d, h = config.hidden_size, vocab.size
    return BiLstmModel(
        forward_params=_init_direction(rng, d, h),
        backward_params=_init_direction(rng, d, h),
        W_out=_glorot(rng, h, 2 * d),
        b_out=np.zeros(h),
        vocab=vocab,
        max_len=max_len,
        hyperparams=asdict(config),
    )


# --- batched recurrence core ----------------------------------------------
# Samples inside one core call share their sequence length, so no masking
# is needed; train() buckets each mini-batch by length before calling in.

@dataclass
class _DirRun:
    xs: np.ndarray  # (B, T, H)
    pre: dict  # gate -> (B, T, D)
    act: dict  # gate -> (B, T, D)
    c: np.ndarray  # (B, T+1, D)
    h: np.ndarray  # (B, T+1, D)


def _run_direction(xs: np.ndarray, p: LstmDirectionParams) -> _DirRun:
    b, t_len, _ = xs.shape
    d = p.b_i.shape[0]
    pre = {g: np.empty((b, t_len, d)) for g in GATES}
    act = {g: np.empty((b, t_len, d)) for g in GATES}
    c = np.zeros((b, t_len + 1, d))
    h = np.zeros((b, t_len + 1, d))
    for t in range(t_len):
        x_t = xs[:, t, :]
        h_prev = h[:, t, :]
        pre["i"][:, t] = x_t @ p.W_i.T + h_prev @ p.U_i.T + p.b_i
        pre["f"][:, t] = x_t @ p.W_f.T + h_prev @ p.U_f.T + p.b_f
        pre["o"][:, t] = x_t @ p.W_o.T + h_prev @ p.U_o.T + p.b_o
        pre["g"][:, t] = x_t @ p.W_g.T + h_prev @ p.U_g.T + p.b_g
        act["i"][:, t] = tc.sigmoid(pre["i"][:, t])
        act["f"][:, t] = tc.sigmoid(pre["f"][:, t])
        act["o"][:, t] = tc.sigmoid(pre["o"][:, t])
        act["g"][:, t] = tc.tanh_(pre["g"][:, t])
        c[:, t + 1] = act["f"][:, t] * c[:, t] + act["i"][:, t] * act["g"][:, t]
        h[:, t + 1] = act["o"][:, t] * np.tanh(c[:, t + 1])
    return _DirRun(xs=xs, pre=pre, act=act, c=c, h=h)


def _direction_backward(run: _DirRun, p: LstmDirectionParams,
                        dh_last: np.ndarray, grads: dict, prefix: str) -> None:
    """Accumulate parameter gradients for one direction (summed over the batch)."""
    b, t_len, _ = run.xs.shape
    dh = dh_last.copy()
    dc = np.zeros_like(dh)
    for t in reversed(range(t_len)):
        i_t, f_t = run.act["i"][:, t], run.act["f"][:, t]
        o_t, g_t = run.act["o"][:, t], run.act["g"][:, t]
        tanh_c = np.tanh(run.c[:, t + 1])
        do = dh * tanh_c
        dc = dc + dh * o_t * (1.0 - tanh_c ** 2)
        df = dc * run.c[:, t]
        di = dc * g_t
        dg = dc * i_t
        dpre = {
            "i": di * i_t * (1.0 - i_t),
            "f": df * f_t * (1.0 - f_t),
            "o": do * o_t * (1.0 - o_t),
            "g": dg * (1.0 - g_t ** 2),
        }
        x_t = run.xs[:, t, :]
        h_prev = run.h[:, t, :]
        for gate in GATES:
            grads[f"{prefix}.W_{gate}"] += dpre[gate].T @ x_t
            grads[f"{prefix}.U_{gate}"] += dpre[gate].T @ h_prev
            grads[f"{prefix}.b_{gate}"] += dpre[gate].sum(axis=0)
        dh = (dpre["i"] @ p.U_i + dpre["f"] @ p.U_f
              + dpre["o"] @ p.U_o + dpre["g"] @ p.U_g)
        dc = dc * f_t


def _zero_grads(model: BiLstmModel) -> dict:
    return {name: np.zeros_like(arr) for name, arr in model.param_items()}


def _batch_outputs(model: BiLstmModel, xs: np.ndarray) -> tuple[_DirRun, _DirRun, np.ndarray, np.ndarray]:
    """Forward both directions over equal-length inputs; returns runs, logits, probs."""
    run_f = _run_direction(xs, model.forward_params)
    run_b = _run_direction(xs[:, ::-1, :], model.backward_params)
    hcat = np.concatenate([run_f.h[:, -1, :], run_b.h[:, -1, :]], axis=1)
    logits = hcat @ model.W_out.T + model.b_out
    probs = tc.softmax(logits, axis=-1)
    return run_f, run_b, logits, probs


def _batch_backward(model: BiLstmModel, xs: np.ndarray, labels: np.ndarray,
                    grads: dict) -> tuple[np.ndarray, np.ndarray]:
    """Accumulate summed gradients of per-sample cross-entropy into ``grads``.

    Returns (per-sample losses, predicted indices) for bookkeeping.
    """
    run_f, run_b, _, probs = _batch_outputs(model, xs)
    b = xs.shape[0]
    d = model.hidden_size
    dlogits = probs.copy()
    dlogits[np.arange(b), labels] -= 1.0
    hcat = np.concatenate([run_f.h[:, -1, :], run_b.h[:, -1, :]], axis=1)
    grads["W_out"] += dlogits.T @ hcat
    grads["b_out"] += dlogits.sum(axis=0)
    dhcat = dlogits @ model.W_out
    _direction_backward(run_f, model.forward_params, dhcat[:, :d], grads, "forward")
    _direction_backward(run_b, model.backward_params, dhcat[:, d:], grads, "backward")
    losses = -np.log(np.maximum(probs[np.arange(b), labels], tc.LOSS_CLIP))
    return losses, np.argmax(probs, axis=1)


# --- public per-sample operations -----------------------------------------

def _suffix_inputs(model: BiLstmModel, sample: PrefixSample,
                   dropout_mask: np.ndarray | None) -> np.ndarray:
    if sample.x.ndim != 2 or sample.x.shape[1] != model.n_classes:
        raise ShapeMismatch(
            f"sample is {sample.x.shape}, model expects (*, {model.n_classes})")
    if sample.true_length < 1 or sample.true_length > sample.x.shape[0]:
        raise ShapeMismatch(f"true_length {sample.true_length} out of range")
    xs = sample.x[sample.x.shape[0] - sample.true_length:, :]
    if dropout_mask is not None:
        if dropout_mask.shape != xs.shape:
            raise ShapeMismatch(
                f"dropout mask {dropout_mask.shape} does not match suffix {xs.shape}")
        xs = xs * dropout_mask
    return xs[None, :, :]


def forward(model: BiLstmModel, sample: PrefixSample,
            dropout_mask: np.ndarray | None = None) -> ForwardTrace:
    """Run the network over one sample, recording every intermediate value.

    Only the true-length suffix enters the recurrence; padding rows are
    never touched. ``dropout_mask`` (training only) multiplies the suffix
    inputs elementwise.
    """
    xs = _suffix_inputs(model, sample, dropout_mask)
    run_f, run_b, logits, probs = _batch_outputs(model, xs)

    def squeeze(run: _DirRun) -> DirectionTrace:
        return DirectionTrace(
            inputs=run.xs[0],
            pre_i=run.pre["i"][0], pre_f=run.pre["f"][0],
            pre_o=run.pre["o"][0], pre_g=run.pre["g"][0],
            gate_i=run.act["i"][0], gate_f=run.act["f"][0],
            gate_o=run.act["o"][0], cand=run.act["g"][0],
            c=run.c[0], h=run.h[0],
        )

    return ForwardTrace(fwd=squeeze(run_f), bwd=squeeze(run_b),
                        logits=logits[0], probs=probs[0],
                        true_length=sample.true_length)


def predict(model: BiLstmModel, sample: PrefixSample) -> tuple[int, np.ndarray]:
    """Most likely next activity index and the full class distribution.

    Ties break toward the lowest index.
    """
    trace = forward(model, sample)
    return int(np.argmax(trace.probs)), trace.probs


def backward(model: BiLstmModel, sample: PrefixSample, label_index: int,
             dropout_mask: np.ndarray | None = None) -> dict:
    """Analytic gradients of this sample's cross-entropy loss, keyed like
    ``model.param_items()``."""
    if not 0 <= label_index < model.n_classes:
        raise ShapeMismatch(f"label index {label_index} out of range")
    xs = _suffix_inputs(model, sample, dropout_mask)
    grads = _zero_grads(model)
    _batch_backward(model, xs, np.asarray([label_index]), grads)
    return grads


# --- Nadam optimizer --------------------------------------------------------

class Nadam:
    """Adam with Nesterov momentum, following the usual framework defaults
    (incl. the 0.96-based momentum schedule)."""

    def __init__(self, params: list[np.ndarray], learning_rate: float = 0.002,
                 beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-7):
        self.params = params
        self.lr = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0
        self.mu_product = 1.0

    def step(self, grads: list[np.ndarray]) -> None:
        self.t += 1
        mu_t = self.beta1 * (1.0 - 0.5 * 0.96 ** self.t)
        mu_next = self.beta1 * (1.0 - 0.5 * 0.96 ** (self.t + 1))
        self.mu_product *= mu_t
        mu_product_next = self.mu_product * mu_next
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m += (g - m) * (1.0 - self.beta1)
            v += (g * g - v) * (1.0 - self.beta2)
            m_hat = (mu_next * m / (1.0 - mu_product_next)
                     + (1.0 - mu_t) * g / (1.0 - self.mu_product))
            v_hat = v / (1.0 - self.beta2 ** self.t)
            p -= self.lr * m_hat / (np.sqrt(v_hat) + self.epsilon)


# --- training ---------------------------------------------------------------

def _bucket_by_length(lengths: np.ndarray, indices: np.ndarray) -> list[np.ndarray]:
    """Split sample indices into groups of equal sequence length (ascending)."""
    buckets: dict[int, list[int]] = {}
    for idx in indices:
        buckets.setdefault(int(lengths[idx]), []).append(idx)
    return [np.asarray(buckets[length]) for length in sorted(buckets)]


def _dataset_loss(model: BiLstmModel, dataset: PrefixDataset,
                  chunk: int = 512) -> tuple[float, float]:
    """Mean loss and accuracy over a dataset, no dropout."""
    total_loss = 0.0
    correct = 0
    order = np.arange(len(dataset))
    for start in range(0, len(dataset), chunk):
        part = order[start:start + chunk]
        for bucket in _bucket_by_length(dataset.true_lengths, part):
            length = int(dataset.true_lengths[bucket[0]])
            xs = dataset.X[bucket][:, dataset.M - length:, :]
            labels = dataset.label_indices[bucket]
            _, _, _, probs = _batch_outputs(model, xs)
            pf = np.maximum(probs[np.arange(len(bucket)), labels], tc.LOSS_CLIP)
            total_loss += float(-np.log(pf).sum())
            correct += int((np.argmax(probs, axis=1) == labels).sum())
    n = len(dataset)
    return total_loss / n, correct / n


def train(dataset: PrefixDataset, val_dataset: PrefixDataset,
          config: TrainConfig) -> tuple[BiLstmModel, list[EpochStats]]:
    """Mini-batch Nadam training with input dropout and early stopping.

    Per-sample inverted-dropout masks are drawn fresh every epoch. After
    each epoch the validation loss is computed without dropout; training
    stops once it has not improved for ``config.patience`` consecutive
    epochs (or at ``config.max_epochs``), and the parameter snapshot with
    the lowest validation loss is restored.
    """
    if len(dataset) == 0 or len(val_dataset) == 0:
        raise EmptyDataset("training and validation datasets must be non-empty")
    if val_dataset.vocab.labels != dataset.vocab.labels:
        raise ShapeMismatch("training and validation vocabularies differ")

    model = init_model(dataset.vocab, dataset.M, config)
    seeds = np.random.SeedSequence(config.seed).spawn(3)
    shuffle_rng = np.random.default_rng(seeds[1])
    dropout_rng = np.random.default_rng(seeds[2])
    params = [arr for _, arr in model.param_items()]
    names = [name for name, _ in model.param_items()]
    optimizer = Nadam(params, config.learning_rate, config.beta1,
                      config.beta2, config.epsilon_opt)
    keep = 1.0 - config.dropout_rate

    history: list[EpochStats] = []
    best_loss = math.inf
    best_snapshot = None
    best_epoch = 0
    epochs_since_best = 0
    n = len(dataset)

    for epoch in range(1, config.max_epochs + 1):
        order = shuffle_rng.permutation(n)
        epoch_loss = 0.0
        epoch_correct = 0
        for start in range(0, n, config.batch_size):
            batch = order[start:start + config.batch_size]
            masks = {}
            if config.dropout_rate > 0.0:
                for idx in batch:
                    length = int(dataset.true_lengths[idx])
                    bern = dropout_rng.random((length, model.n_classes)) < keep
                    masks[int(idx)] = bern.astype(np.float64) / keep
            grads = _zero_grads(model)
            for bucket in _bucket_by_length(dataset.true_lengths, batch):
                length = int(dataset.true_lengths[bucket[0]])
                xs = dataset.X[bucket][:, dataset.M - length:, :]
                if masks:
                    xs = xs * np.stack([masks[int(i)] for i in bucket])
                losses, preds = _batch_backward(
                    model, xs, dataset.label_indices[bucket], grads)
                epoch_loss += float(losses.sum())
                epoch_correct += int((preds == dataset.label_indices[bucket]).sum())
            scale = 1.0 / len(batch)
            optimizer.step([grads[name] * scale for name in names])

        train_loss = epoch_loss / n
        val_loss, val_acc = _dataset_loss(model, val_dataset)
        if not (math.isfinite(train_loss) and math.isfinite(val_loss)):
            raise NonFiniteLoss(epoch)
        history.append(EpochStats(epoch, train_loss, epoch_correct / n,
                                  val_loss, val_acc))

        if val_loss < best_loss:
            best_loss = val_loss
            best_epoch = epoch
            best_snapshot = {name: arr.copy() for name, arr in model.param_items()}
            epochs_since_best = 0
        else:
            epochs_since_best += 1
            if epochs_since_best >= config.patience:
                break

    for name, arr in model.param_items():
        arr[...] = best_snapshot[name]
    model.trained_epochs = len(history)
    model.hyperparams = dict(model.hyperparams, best_epoch=best_epoch)
    return model, history


# --- serialization ----------------------------------------------------------

def _direction_to_json(p: LstmDirectionParams) -> dict:
    return {name: arr.tolist() for name, arr in p.items()}


def save_model(model: BiLstmModel, sink: Union[str, Path, IO]) -> None:
    """Write the model as versioned JSON; floats round-trip exactly."""
    doc = {
        "format_version": MODEL_FORMAT_VERSION,
        "hidden_size": model.hidden_size,
        "vocab": list(model.vocab.labels),
        "max_len": model.max_len,
        "hyperparams": dict(model.hyperparams, trained_epochs=model.trained_epochs),
        "forward": _direction_to_json(model.forward_params),
        "backward": _direction_to_json(model.backward_params),
        "W_out": model.W_out.tolist(),
        "b_out": model.b_out.tolist(),
    }
    own = isinstance(sink, (str, Path))
    f = open(sink, "w", encoding="utf-8") if own else sink
    try:
        json.dump(doc, f)
        f.write("\n")
    finally:
        if own:
            f.close()


def _direction_from_json(doc: dict, d: int, h: int) -> LstmDirectionParams:
    arrays = {}
    for gate in GATES:
        for kind, shape in (("W", (d, h)), ("U", (d, d)), ("b", (d,))):
            name = f"{kind}_{gate}"
            arr = np.asarray(doc[name], dtype=np.float64)
            if arr.shape != shape:
                raise CorruptModel(f"{name} has shape {arr.shape}, expected {shape}")
            arrays[name] = arr
    return LstmDirectionParams(**arrays)


def load_model(source: Union[str, Path, IO]) -> BiLstmModel:
    """Read a model written by :func:`save_model`."""
    own = isinstance(source, (str, Path))
    f = open(source, "r", encoding="utf-8") if own else source
    try:
        doc = json.load(f)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CorruptModel(f"model file is not valid JSON: {exc}") from None
    finally:
        if own:
            f.close()
    if not isinstance(doc, dict):
        raise CorruptModel("model file does not hold a JSON object")
    version = doc.get("format_version")
    if version != MODEL_FORMAT_VERSION:
        raise VersionMismatch(f"model format {version!r}, expected {MODEL_FORMAT_VERSION}")
    try:
        d = int(doc["hidden_size"])
        vocab = ActivityVocabulary(tuple(doc["vocab"]))
        h = vocab.size
        hyper = dict(doc["hyperparams"])
        trained = int(hyper.pop("trained_epochs", 0))
        model = BiLstmModel(
            forward_params=_direction_from_json(doc["forward"], d, h),
            backward_params=_direction_from_json(doc["backward"], d, h),
            W_out=np.asarray(doc["W_out"], dtype=np.float64),
            b_out=np.asarray(doc["b_out"], dtype=np.float64),
            vocab=vocab,
            max_len=int(doc["max_len"]),
            hyperparams=hyper,
            trained_epochs=trained,
        )
    except CorruptModel:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptModel(f"model file is structurally broken: {exc}") from None
    if model.W_out.shape != (h, 2 * d) or model.b_out.shape != (h,):
        raise CorruptModel(
            f"output layer has shapes {model.W_out.shape}/{model.b_out.shape}")
    return model
