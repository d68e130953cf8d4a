"""Model containers.

Every model exposes its parameters as an ordered list of arrays through
:meth:`arrays` and can be rebuilt from such a list with :meth:`from_arrays`.
That list is the unit exchanged in a federated round; aggregators only ever see
it, never the model internals.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from ..exceptions import ShapeError


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = np.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


@dataclass
class LinearLayer:
    """Affine map ``x @ W.T + b`` with ``W`` of shape (out_dim, in_dim)."""

    W: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64).reshape(-1)
        if self.W.ndim != 2 or self.b.shape[0] != self.W.shape[0]:
            raise ShapeError(f"bias length {self.b.shape[0]} != out_dim {self.W.shape[0]}")

    @property
    def in_dim(self) -> int:
        return self.W.shape[1]

    @property
    def out_dim(self) -> int:
        return self.W.shape[0]

    @classmethod
    def init(cls, in_dim: int, out_dim: int, rng: np.random.Generator) -> "LinearLayer":
        return cls(_uniform(rng, (out_dim, in_dim), in_dim), _uniform(rng, out_dim, in_dim))

    def copy(self) -> "LinearLayer":
        return LinearLayer(self.W.copy(), self.b.copy())

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return x @ self.W.T + self.b


class _ParamModel:
    arch: str = ""

    def arrays(self) -> List[np.ndarray]:
        raise NotImplementedError

    def from_arrays(self, arrays: Sequence[np.ndarray]):
        raise NotImplementedError

    def copy(self):
        return self.from_arrays([a.copy() for a in self.arrays()])

    def param_count(self) -> int:
        return int(sum(a.size for a in self.arrays()))

    def flat(self) -> np.ndarray:
        return np.concatenate([a.reshape(-1) for a in self.arrays()])

    def same_shape(self, other) -> bool:
        a, b = self.arrays(), other.arrays()
        return (
            type(self) is type(other)
            and len(a) == len(b)
            and all(x.shape == y.shape for x, y in zip(a, b))
        )

    def equals(self, other) -> bool:
        """Bit-exact parameter equality."""
        return self.same_shape(other) and all(
            np.array_equal(x, y) for x, y in zip(self.arrays(), other.arrays())
        )

    def _check_arrays(self, arrays):
        ref = self.arrays()
        if len(arrays) != len(ref) or any(
            np.shape(a) != r.shape for a, r in zip(arrays, ref)
        ):
            raise ShapeError(f"parameter list does not match {self.arch} architecture")


@dataclass
class MlpModel(_ParamModel):
    """Stack of linear layers with relu between them and raw logits at the end."""

    layers: List[LinearLayer]
    activation: str = "relu"
    arch = "mlp"

    def __post_init__(self):
        for a, b in zip(self.layers, self.layers[1:]):
            if a.out_dim != b.in_dim:
                raise ShapeError(f"layer dims do not chain: {a.out_dim} -> {b.in_dim}")

    @classmethod
    def init(cls, dims: Sequence[int], rng: np.random.Generator) -> "MlpModel":
        """``dims`` is ``[in_dim, hidden..., classes]``."""
        if len(dims) < 2:
            raise ShapeError("an MLP needs at least input and output dims")
        return cls([LinearLayer.init(i, o, rng) for i, o in zip(dims[:-1], dims[1:])])

    @property
    def dims(self) -> List[int]:
        return [self.layers[0].in_dim] + [layer.out_dim for layer in self.layers]

    def arrays(self):
        out = []
        for layer in self.layers:
            out += [layer.W, layer.b]
        return out

    def from_arrays(self, arrays):
        self._check_arrays(arrays)
        return MlpModel(
            [LinearLayer(arrays[2 * i], arrays[2 * i + 1]) for i in range(len(self.layers))],
            self.activation,
        )


@dataclass
class RnnModel(_ParamModel):
    """Elman RNN ``h_t = tanh(x_t W_ih^T + h_{t-1} W_hh^T + b_h)`` with a linear head on ``h_T``."""

    W_ih: np.ndarray
    W_hh: np.ndarray
    b_h: np.ndarray
    head: LinearLayer
    arch = "rnn"

    def __post_init__(self):
        self.W_ih = np.asarray(self.W_ih, dtype=np.float64)
        self.W_hh = np.asarray(self.W_hh, dtype=np.float64)
        self.b_h = np.asarray(self.b_h, dtype=np.float64).reshape(-1)
        h = self.W_hh.shape[0]
        if self.W_hh.shape != (h, h):
            raise ShapeError("W_hh must be square")
        if self.W_ih.shape[0] != h or self.b_h.shape[0] != h or self.head.in_dim != h:
            raise ShapeError("RNN dims do not chain")

    @classmethod
    def init(cls, in_dim: int, hidden: int, classes: int, rng: np.random.Generator) -> "RnnModel":
        return cls(
            _uniform(rng, (hidden, in_dim), in_dim),
            _uniform(rng, (hidden, hidden), hidden),
            _uniform(rng, hidden, in_dim),
            LinearLayer.init(hidden, classes, rng),
        )

    @property
    def dims(self):
        return self.W_ih.shape[1], self.W_hh.shape[0], self.head.out_dim

    def arrays(self):
        return [self.W_ih, self.W_hh, self.b_h, self.head.W, self.head.b]

    def from_arrays(self, arrays):
        self._check_arrays(arrays)
        return RnnModel(arrays[0], arrays[1], arrays[2], LinearLayer(arrays[3], arrays[4]))


@dataclass
class TinyTransformer(_ParamModel):
    """Single-block, single-head encoder over ``n_tokens`` patches of size ``p``.

    The classification head reads the whole encoded sequence flattened in token
    order, so token position is carried by head column blocks.
    """

    embed: LinearLayer
    pos: np.ndarray
    W_Q: np.ndarray
    W_K: np.ndarray
    W_V: np.ndarray
    W_O: np.ndarray
    ff1: LinearLayer
    ff2: LinearLayer
    cls_head: LinearLayer
    arch = "transformer"

    def __post_init__(self):
        self.pos = np.asarray(self.pos, dtype=np.float64)
        for name in ("W_Q", "W_K", "W_V", "W_O"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        h = self.embed.out_dim
        n = self.pos.shape[0]
        if self.pos.shape != (n, h):
            raise ShapeError("positional embedding must be n_tokens x hidden")
        for name in ("W_Q", "W_K", "W_V", "W_O"):
            if getattr(self, name).shape != (h, h):
                raise ShapeError(f"{name} must be hidden x hidden")
        if self.ff1.in_dim != h or self.ff2.in_dim != self.ff1.out_dim or self.ff2.out_dim != h:
            raise ShapeError("feed-forward dims do not chain")
        if self.cls_head.in_dim != n * h:
            raise ShapeError("cls head must read n_tokens * hidden features")

    @classmethod
    def init(
        cls, n_tokens: int, patch: int, hidden: int, ff: int, classes: int, rng: np.random.Generator
    ) -> "TinyTransformer":
        return cls(
            LinearLayer.init(patch, hidden, rng),
            rng.normal(0.0, 0.1, size=(n_tokens, hidden)),
            _uniform(rng, (hidden, hidden), hidden),
            _uniform(rng, (hidden, hidden), hidden),
            _uniform(rng, (hidden, hidden), hidden),
            _uniform(rng, (hidden, hidden), hidden),
            LinearLayer.init(hidden, ff, rng),
            LinearLayer.init(ff, hidden, rng),
            LinearLayer.init(n_tokens * hidden, classes, rng),
        )

    @property
    def hidden(self) -> int:
        return self.embed.out_dim

    @property
    def n_tokens(self) -> int:
        return self.pos.shape[0]

    @property
    def patch(self) -> int:
        return self.embed.in_dim

    @property
    def classes(self) -> int:
        return self.cls_head.out_dim

    def arrays(self):
        return [
            self.embed.W, self.embed.b, self.pos,
            self.W_Q, self.W_K, self.W_V, self.W_O,
            self.ff1.W, self.ff1.b, self.ff2.W, self.ff2.b,
            self.cls_head.W, self.cls_head.b,
        ]

    def from_arrays(self, arrays):
        self._check_arrays(arrays)
        a = list(arrays)
        return TinyTransformer(
            LinearLayer(a[0], a[1]), a[2], a[3], a[4], a[5], a[6],
            LinearLayer(a[7], a[8]), LinearLayer(a[9], a[10]), LinearLayer(a[11], a[12]),
        )


@dataclass
class AdamState:
    m: List[np.ndarray]
    v: List[np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: Sequence[np.ndarray], **kw) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], **kw)
