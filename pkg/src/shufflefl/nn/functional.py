"""Forward passes, manual backpropagation, Adam and the local training loop."""
from __future__ import annotations

from typing import List, Sequence, Tuple

import numpy as np

from ..core import relu, softmax_rows
from ..exceptions import DegenerateInputError, ShapeError
from .models import AdamState, MlpModel, RnnModel, TinyTransformer


def one_hot(y, classes: int) -> np.ndarray:
    y = np.asarray(y, dtype=np.int64)
    if y.size and (y.min() < 0 or y.max() >= classes):
        raise ShapeError(f"label outside 0..{classes - 1}")
    out = np.zeros((y.shape[0], classes))
    out[np.arange(y.shape[0]), y] = 1.0
    return out


def cross_entropy(logits: np.ndarray, y_onehot: np.ndarray) -> Tuple[float, np.ndarray]:
    """Mean softmax cross-entropy and its gradient w.r.t. the logits."""
    if logits.shape != y_onehot.shape:
        raise ShapeError(f"logits {logits.shape} vs targets {y_onehot.shape}")
    n = logits.shape[0]
    z = logits - logits.max(axis=1, keepdims=True)
    log_p = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = -float(np.sum(y_onehot * log_p)) / n
    return loss, (np.exp(log_p) - y_onehot) / n


# ---------------------------------------------------------------- MLP

def _mlp_activations(m: MlpModel, X) -> List[np.ndarray]:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != m.layers[0].in_dim:
        raise ShapeError(f"input of shape {X.shape} for MLP with in_dim {m.layers[0].in_dim}")
    hs = [X]
    for i, layer in enumerate(m.layers):
        z = layer(hs[-1])
        hs.append(relu(z) if i < len(m.layers) - 1 else z)
    return hs


def forward_mlp(m: MlpModel, X) -> np.ndarray:
    return _mlp_activations(m, X)[-1]


def backward_mlp(m: MlpModel, X, y_onehot) -> Tuple[List[np.ndarray], float]:
    """Gradients in ``m.arrays()`` order and the mean cross-entropy loss."""
    hs = _mlp_activations(m, X)
    loss, delta = cross_entropy(hs[-1], np.asarray(y_onehot, dtype=np.float64))
    grads: List[np.ndarray] = [None] * (2 * len(m.layers))
    for i in range(len(m.layers) - 1, -1, -1):
        grads[2 * i] = delta.T @ hs[i]
        grads[2 * i + 1] = delta.sum(axis=0)
        if i:
            delta = (delta @ m.layers[i].W) * (hs[i] > 0)
    return grads, loss


# ---------------------------------------------------------------- RNN

def _as_steps(X_seq) -> np.ndarray:
    if isinstance(X_seq, np.ndarray):
        steps = X_seq.astype(np.float64, copy=False)
    else:
        if len(X_seq) == 0:
            raise DegenerateInputError("empty sequence")
        steps = np.stack([np.asarray(x, dtype=np.float64) for x in X_seq])
    if steps.ndim != 3:
        raise ShapeError("sequence input must be (T, batch, d)")
    if steps.shape[0] == 0:
        raise DegenerateInputError("empty sequence")
    return steps


def _rnn_states(m: RnnModel, X_seq) -> Tuple[np.ndarray, List[np.ndarray]]:
    steps = _as_steps(X_seq)
    if steps.shape[2] != m.W_ih.shape[1]:
        raise ShapeError(f"step width {steps.shape[2]} != RNN input dim {m.W_ih.shape[1]}")
    h = np.zeros((steps.shape[1], m.W_hh.shape[0]))
    hs = [h]
    for x in steps:
        h = np.tanh(x @ m.W_ih.T + h @ m.W_hh.T + m.b_h)
        hs.append(h)
    return steps, hs


def forward_rnn(m: RnnModel, X_seq) -> np.ndarray:
    """``X_seq`` is a (T, batch, d) array or a sequence of (batch, d) matrices."""
    _, hs = _rnn_states(m, X_seq)
    return m.head(hs[-1])


def backward_rnn(m: RnnModel, X_seq, y_onehot) -> Tuple[List[np.ndarray], float]:
    """Full backpropagation through time; gradients in ``m.arrays()`` order."""
    steps, hs = _rnn_states(m, X_seq)
    loss, d_logits = cross_entropy(m.head(hs[-1]), np.asarray(y_onehot, dtype=np.float64))
    g_head_W = d_logits.T @ hs[-1]
    g_head_b = d_logits.sum(axis=0)
    g_ih = np.zeros_like(m.W_ih)
    g_hh = np.zeros_like(m.W_hh)
    g_b = np.zeros_like(m.b_h)
    dh = d_logits @ m.head.W
    for t in range(steps.shape[0], 0, -1):
        dz = dh * (1.0 - hs[t] ** 2)
        g_ih += dz.T @ steps[t - 1]
        g_hh += dz.T @ hs[t - 1]
        g_b += dz.sum(axis=0)
        dh = dz @ m.W_hh
    return [g_ih, g_hh, g_b, g_head_W, g_head_b], loss


# ---------------------------------------------------------------- transformer

def forward_transformer(m: TinyTransformer, X_tokens) -> np.ndarray:
    """Logits for one sample (n_tokens, patch) or a batch (batch, n_tokens, patch).

    Returns a vector for a single sample and a (batch, classes) matrix otherwise.
    """
    X = np.asarray(X_tokens, dtype=np.float64)
    single = X.ndim == 2
    if single:
        X = X[None]
    if X.ndim != 3 or X.shape[1:] != (m.n_tokens, m.patch):
        raise ShapeError(f"token input {X.shape} for model with {m.n_tokens}x{m.patch} tokens")
    E = m.embed(X) + m.pos
    Q, K, V = E @ m.W_Q.T, E @ m.W_K.T, E @ m.W_V.T
    A = softmax_rows(Q @ np.swapaxes(K, 1, 2) / np.sqrt(m.hidden))
    Z1 = E + (A @ V) @ m.W_O.T
    Z = Z1 + m.ff2(relu(m.ff1(Z1)))
    logits = m.cls_head(Z.reshape(Z.shape[0], -1))
    return logits[0] if single else logits


def attention_weights(m: TinyTransformer, X_tokens) -> np.ndarray:
    X = np.asarray(X_tokens, dtype=np.float64)
    E = m.embed(X) + m.pos
    Q, K = E @ m.W_Q.T, E @ m.W_K.T
    return softmax_rows(Q @ np.swapaxes(K, -1, -2) / np.sqrt(m.hidden))


# ---------------------------------------------------------------- dispatch

def forward(model, X) -> np.ndarray:
    if isinstance(model, MlpModel):
        return forward_mlp(model, X)
    if isinstance(model, RnnModel):
        return forward_rnn(model, np.swapaxes(np.asarray(X), 0, 1) if np.ndim(X) == 3 else X)
    if isinstance(model, TinyTransformer):
        return forward_transformer(model, X)
    raise TypeError(f"unsupported model {type(model).__name__}")


def loss_and_grads(model, X, y_onehot) -> Tuple[List[np.ndarray], float]:
    """Batch-major inputs: MLP (n, d); RNN (n, T, d)."""
    if isinstance(model, MlpModel):
        return backward_mlp(model, X, y_onehot)
    if isinstance(model, RnnModel):
        return backward_rnn(model, np.swapaxes(np.asarray(X), 0, 1), y_onehot)
    raise TypeError(f"{type(model).__name__} has no training path")


# ---------------------------------------------------------------- optimisation

def adam_step(
    params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: AdamState, lr: float
) -> Tuple[List[np.ndarray], AdamState]:
    """One bias-corrected Adam update; inputs are left untouched."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeError("params, grads and optimizer state differ in length")
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape or p.shape != m.shape:
            raise ShapeError(f"gradient shape {g.shape} does not mirror parameter {p.shape}")
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        new_p.append(p - lr * m_hat / (np.sqrt(v_hat) + state.eps))
        new_m.append(m)
        new_v.append(v)
    return new_p, AdamState(new_m, new_v, t, b1, b2, state.eps)


def train_local(model, X, y, epochs: int, batch_size: int, lr: float, rng: np.random.Generator,
                classes: int | None = None):
    """Mini-batch Adam training on one shard; returns a new model.

    ``rng`` only drives the per-epoch sample order, so the result is a pure
    function of the inputs and the rng state.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.shape[0] == 0:
        raise DegenerateInputError("cannot train on an empty shard")
    if epochs == 0:
        return model.copy()
    if classes is None:
        classes = model.arrays()[-1].shape[0]
    Y = one_hot(y, classes)
    params = [a.copy() for a in model.arrays()]
    state = AdamState.zeros_like(params)
    n = X.shape[0]
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            grads, _ = loss_and_grads(model.from_arrays(params), X[idx], Y[idx])
            params, state = adam_step(params, grads, state, lr)
    return model.from_arrays(params)


def mean_loss(model, X, y) -> float:
    classes = model.arrays()[-1].shape[0]
    logits = forward(model, X)
    return cross_entropy(logits, one_hot(y, classes))[0]


def accuracy(model, X, y) -> float:
    y = np.asarray(y)
    if y.size == 0:
        return float("nan")
    return float(np.mean(np.argmax(forward(model, X), axis=1) == y))
