"""Seed-derived shuffle rules and their application to inputs and model weights.

A rule is a 64-bit seed. Every index permutation it implies is derived by a
Fisher-Yates shuffle driven by a Philox counter-based generator keyed with
``(seed, stream_id)``. Stream ids encode (role, layer index), so adding a layer
never changes the permutations of the others.

Convention used throughout: applying a permutation ``p`` to the columns of
``x`` gives ``x[:, p]``, i.e. column ``j`` of the output is column ``p[j]``
of the input.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .core import check_perm
from .exceptions import DegenerateInputError, ShapeError
from .nn.models import LinearLayer, MlpModel, RnnModel, TinyTransformer

SEED_MASK = (1 << 64) - 1

ROLE_INPUT = 1
ROLE_HIDDEN = 2
ROLE_OUTPUT = 3
ROLE_TOKEN = 4
ROLE_INTRA = 5


def stream_id(role: int, index: int = 0) -> int:
    return (role << 32) | index


def gen_perm(seed: int, stream: int, n: int) -> np.ndarray:
    """Deterministic bijection on ``0..n-1`` for ``(seed, stream)``."""
    if n < 1:
        raise DegenerateInputError("permutation length must be at least 1")
    bits = np.random.Philox(key=np.array([int(seed) & SEED_MASK, int(stream) & SEED_MASK],
                                         dtype=np.uint64))
    rng = np.random.Generator(bits)
    perm = np.arange(n, dtype=np.int64)
    if n == 1:
        return perm
    # j_i uniform on [0, i] for i = n-1 .. 1
    picks = rng.integers(0, np.arange(n, 1, -1))
    for i, j in zip(range(n - 1, 0, -1), picks):
        perm[i], perm[j] = perm[j], perm[i]
    return perm


def invert_perm(p) -> np.ndarray:
    p = check_perm(p)
    inv = np.empty_like(p)
    inv[p] = np.arange(p.size)
    return inv


def compose(p, q) -> np.ndarray:
    """Index array equivalent to applying ``p`` then ``q``: ``x[:, p][:, q] == x[:, compose(p, q)]``."""
    return np.asarray(p)[np.asarray(q)]


def seed_to_str(seed: int) -> str:
    return str(int(seed) & SEED_MASK)


def seed_from_str(text: str) -> int:
    value = int(text)
    if not 0 <= value <= SEED_MASK:
        raise ValueError(f"seed {text!r} is not an unsigned 64-bit integer")
    return value


@dataclass(frozen=True)
class ArchShape:
    """Dimensions a rule is derived for.

    ``kind`` is ``"mlp"``, ``"rnn"`` or ``"transformer"``. For MLPs ``hidden``
    lists every hidden width; an RNN has exactly one hidden state width.
    """

    kind: str
    in_dim: int
    hidden: Tuple[int, ...]
    classes: int
    n_tokens: int = 0

    @classmethod
    def of(cls, model) -> "ArchShape":
        if isinstance(model, MlpModel):
            dims = model.dims
            return cls("mlp", dims[0], tuple(dims[1:-1]), dims[-1])
        if isinstance(model, RnnModel):
            d, h, c = model.dims
            return cls("rnn", d, (h,), c)
        if isinstance(model, TinyTransformer):
            return cls("transformer", model.patch, (model.hidden,), model.classes, model.n_tokens)
        raise TypeError(f"unsupported model {type(model).__name__}")


@dataclass(frozen=True)
class ShuffleRule:
    """A seed and the named permutations it derives for one architecture shape."""

    seed: int
    shape: ArchShape
    input_perm: np.ndarray
    hidden_perms: Tuple[np.ndarray, ...]
    output_perm: np.ndarray
    token_perm: Optional[np.ndarray] = None
    intra_perm: Optional[np.ndarray] = None
    meta: Dict[str, bool] = field(default_factory=dict)

    @classmethod
    def derive(cls, seed: int, shape: ArchShape, *, shuffle_hidden: bool = True,
               shuffle_output: bool = True) -> "ShuffleRule":
        """Derive every permutation for ``shape`` from ``seed``.

        ``shuffle_hidden=False`` / ``shuffle_output=False`` replace the
        corresponding permutations with identities (used for the
        input-layer-only configuration of the rule-inference study).
        """
        seed = int(seed) & SEED_MASK
        hidden = tuple(
            gen_perm(seed, stream_id(ROLE_HIDDEN, i), h) if shuffle_hidden else np.arange(h)
            for i, h in enumerate(shape.hidden)
        )
        output = (gen_perm(seed, stream_id(ROLE_OUTPUT), shape.classes) if shuffle_output
                  else np.arange(shape.classes))
        if shape.kind == "transformer":
            intra = gen_perm(seed, stream_id(ROLE_INTRA), shape.in_dim)
            token = gen_perm(seed, stream_id(ROLE_TOKEN), shape.n_tokens)
            return cls(seed, shape, intra, hidden, output, token, intra,
                       {"hidden": shuffle_hidden, "output": shuffle_output})
        return cls(seed, shape, gen_perm(seed, stream_id(ROLE_INPUT), shape.in_dim), hidden,
                   output, meta={"hidden": shuffle_hidden, "output": shuffle_output})

    @classmethod
    def identity(cls, shape: ArchShape) -> "ShuffleRule":
        ident = np.arange
        tok = ident(shape.n_tokens) if shape.kind == "transformer" else None
        intra = ident(shape.in_dim) if shape.kind == "transformer" else None
        return cls(0, shape, ident(shape.in_dim), tuple(ident(h) for h in shape.hidden),
                   ident(shape.classes), tok, intra, {"identity": True})

    def inverse(self) -> "ShuffleRule":
        """Rule whose permutations undo this one's."""
        inv = lambda p: None if p is None else invert_perm(p)  # noqa: E731
        return ShuffleRule(self.seed, self.shape, inv(self.input_perm),
                           tuple(inv(p) for p in self.hidden_perms), inv(self.output_perm),
                           inv(self.token_perm), inv(self.intra_perm),
                           {**self.meta, "inverse": not self.meta.get("inverse", False)})

    def same_perms(self, other: "ShuffleRule") -> bool:
        pairs = [(self.input_perm, other.input_perm), (self.output_perm, other.output_perm),
                 (self.token_perm, other.token_perm), (self.intra_perm, other.intra_perm)]
        if len(self.hidden_perms) != len(other.hidden_perms):
            return False
        pairs += list(zip(self.hidden_perms, other.hidden_perms))
        return all((a is None and b is None) or (a is not None and b is not None
                                                 and np.array_equal(a, b)) for a, b in pairs)


# ---------------------------------------------------------------- inputs

def permute_cols(x, p) -> np.ndarray:
    return np.asarray(x)[..., np.asarray(p)]


def shuffle_input(x, rule: ShuffleRule) -> np.ndarray:
    """Shuffle flat features ``(..., d)`` or token inputs ``(..., n_tokens, p)``.

    Token inputs get ``intra_perm`` within each token, then ``token_perm``
    across tokens. For sequence inputs ``(n, T, d)`` the feature permutation is
    applied at every time step.
    """
    x = np.asarray(x, dtype=np.float64)
    if rule.shape.kind == "transformer":
        if x.shape[-2:] != (rule.shape.n_tokens, rule.shape.in_dim):
            raise ShapeError(f"token input {x.shape} does not match rule shape")
        return x[..., rule.token_perm, :][..., rule.intra_perm]
    if x.shape[-1] != rule.input_perm.size:
        raise ShapeError(f"input width {x.shape[-1]} != rule input dim {rule.input_perm.size}")
    return x[..., rule.input_perm]


def unshuffle_input(x, rule: ShuffleRule) -> np.ndarray:
    return shuffle_input(x, rule.inverse())


def shuffle_output(y, rule: ShuffleRule) -> np.ndarray:
    """Permute class columns of logits/probabilities into the shuffled class order."""
    return permute_cols(y, rule.output_perm)


def unshuffle_output(y, rule: ShuffleRule) -> np.ndarray:
    return permute_cols(y, invert_perm(rule.output_perm))


def shuffle_labels(y, rule: ShuffleRule) -> np.ndarray:
    """Map class ids into shuffled class positions (inverse of ``output_perm``)."""
    return invert_perm(rule.output_perm)[np.asarray(y, dtype=np.int64)]


# ---------------------------------------------------------------- weights

def shuffle_linear(layer: LinearLayer, row_perm, col_perm) -> LinearLayer:
    """``W'[i, j] = W[row_perm[i], col_perm[j]]`` and ``b'[i] = b[row_perm[i]]``."""
    row_perm = check_perm(row_perm)
    col_perm = check_perm(col_perm)
    if row_perm.size != layer.out_dim or col_perm.size != layer.in_dim:
        raise ShapeError(
            f"perms ({row_perm.size}, {col_perm.size}) for layer ({layer.out_dim}, {layer.in_dim})"
        )
    return LinearLayer(layer.W[row_perm][:, col_perm], layer.b[row_perm])


def _check_rule(model, rule: ShuffleRule):
    if ArchShape.of(model) != rule.shape:
        raise ShapeError(f"rule derived for {rule.shape}, model is {ArchShape.of(model)}")


def shuffle_mlp(m: MlpModel, rule: ShuffleRule) -> MlpModel:
    _check_rule(m, rule)
    chain = [rule.input_perm, *rule.hidden_perms, rule.output_perm]
    return MlpModel([shuffle_linear(layer, chain[i + 1], chain[i])
                     for i, layer in enumerate(m.layers)], m.activation)


def unshuffle_mlp(m: MlpModel, rule: ShuffleRule) -> MlpModel:
    return shuffle_mlp(m, rule.inverse())


def shuffle_rnn(m: RnnModel, rule: ShuffleRule) -> RnnModel:
    _check_rule(m, rule)
    hp = rule.hidden_perms[0]
    return RnnModel(
        m.W_ih[hp][:, rule.input_perm],
        m.W_hh[hp][:, hp],
        m.b_h[hp],
        shuffle_linear(m.head, rule.output_perm, hp),
    )


def unshuffle_rnn(m: RnnModel, rule: ShuffleRule) -> RnnModel:
    return shuffle_rnn(m, rule.inverse())


def _token_block_perm(token_perm: np.ndarray, hidden: int) -> np.ndarray:
    return (token_perm[:, None] * hidden + np.arange(hidden)[None, :]).reshape(-1)


def shuffle_transformer(m: TinyTransformer, rule: ShuffleRule) -> TinyTransformer:
    """Intra-token via embedding columns, inter-token via positional rows and cls-head blocks."""
    _check_rule(m, rule)
    h = m.hidden
    return TinyTransformer(
        LinearLayer(m.embed.W[:, rule.intra_perm], m.embed.b.copy()),
        m.pos[rule.token_perm],
        m.W_Q.copy(), m.W_K.copy(), m.W_V.copy(), m.W_O.copy(),
        m.ff1.copy(), m.ff2.copy(),
        shuffle_linear(m.cls_head, rule.output_perm, _token_block_perm(rule.token_perm, h)),
    )


def unshuffle_transformer(m: TinyTransformer, rule: ShuffleRule) -> TinyTransformer:
    return shuffle_transformer(m, rule.inverse())


def shuffle_model(model, rule: ShuffleRule):
    if isinstance(model, MlpModel):
        return shuffle_mlp(model, rule)
    if isinstance(model, RnnModel):
        return shuffle_rnn(model, rule)
    if isinstance(model, TinyTransformer):
        return shuffle_transformer(model, rule)
    raise TypeError(f"unsupported model {type(model).__name__}")


def unshuffle_model(model, rule: ShuffleRule):
    return shuffle_model(model, rule.inverse())


# ---------------------------------------------------------------- estimator

class InputShuffler(TransformerMixin, BaseEstimator):
    """Transformer applying the input permutation of a seed-derived rule.

    Fitting only records the feature count; the permutation is a pure function
    of ``seed`` and that count, so two shufflers fitted with the same seed on
    data of the same width agree on every column.

    Parameters
    ----------
    seed : int
        Unsigned 64-bit rule seed.
    """

    def __init__(self, seed: int = 0):
        self.seed = seed

    def fit(self, X, y=None):
        X = check_array(X)
        self.n_features_in_ = X.shape[1]
        self.perm_ = gen_perm(self.seed, stream_id(ROLE_INPUT), self.n_features_in_)
        return self

    def transform(self, X):
        check_is_fitted(self, "perm_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ShapeError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return X[:, self.perm_]

    def inverse_transform(self, X):
        check_is_fitted(self, "perm_")
        X = check_array(X)
        return X[:, invert_perm(self.perm_)]


def random_rule(shape: ArchShape, rng: np.random.Generator, **kw) -> ShuffleRule:
    return ShuffleRule.derive(int(rng.integers(0, SEED_MASK, dtype=np.uint64, endpoint=True)),
                              shape, **kw)


__all__ = [
    "ArchShape", "InputShuffler", "ShuffleRule", "compose", "gen_perm", "invert_perm",
    "permute_cols", "random_rule", "seed_from_str", "seed_to_str", "shuffle_input",
    "shuffle_labels", "shuffle_linear", "shuffle_mlp", "shuffle_model", "shuffle_output",
    "shuffle_rnn", "shuffle_transformer", "stream_id", "unshuffle_input", "unshuffle_mlp",
    "unshuffle_model", "unshuffle_output", "unshuffle_rnn", "unshuffle_transformer",
]
