"""Integrity attacks, confidentiality attacks and per-update defenses."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment

from .datasets import Dataset
from .exceptions import DegenerateInputError, NoLeakableRowError, ShapeError
from .nn.functional import forward
from .permute import ShuffleRule, shuffle_input, unshuffle_output

ATTACK_KINDS = ("none", "label_flip", "noise_inject", "backdoor")
DP_LEVELS = {"S": 0.01, "M": 0.05, "L": 0.2}


@dataclass(frozen=True)
class PatchSpec:
    """Square trigger stamped into the image at ``(top, left)``."""

    top: int = 0
    left: int = 0
    height: int = 4
    width: int = 4
    fill: float = 1.0
    target: int = 0

    def check(self, image_shape) -> None:
        if image_shape is None:
            raise DegenerateInputError("backdoor patch needs a dataset with an image shape")
        rows, cols = image_shape
        if self.top < 0 or self.left < 0 or self.top + self.height > rows or self.left + self.width > cols:
            raise ShapeError(f"patch {self} does not fit a {rows}x{cols} image")

    def pixel_indices(self, image_shape) -> np.ndarray:
        """Flat feature indices covered by the patch."""
        self.check(image_shape)
        r = np.arange(self.top, self.top + self.height)
        c = np.arange(self.left, self.left + self.width)
        return (r[:, None] * image_shape[1] + c[None, :]).reshape(-1)

    def apply(self, X, image_shape) -> np.ndarray:
        X = np.array(X, dtype=np.float64, copy=True)
        X[..., self.pixel_indices(image_shape)] = self.fill
        return X


@dataclass
class AttackSpec:
    """Attack configuration as it appears in a run config."""

    kind: str = "none"
    flip_map: Optional[Dict[int, int]] = None
    flip_fraction: float = 1.0
    noise_scale: float = 0.25
    patch: PatchSpec = field(default_factory=PatchSpec)
    poison_fraction: float = 0.5

    def __post_init__(self):
        if self.kind not in ATTACK_KINDS:
            raise ValueError(f"unknown attack kind {self.kind!r}")
        for name in ("flip_fraction", "poison_fraction"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.noise_scale < 0:
            raise ValueError("noise_scale must be non-negative")

    @classmethod
    def from_dict(cls, d: Optional[dict]) -> "AttackSpec":
        d = dict(d or {})
        if "patch" in d and isinstance(d["patch"], dict):
            d["patch"] = PatchSpec(**d["patch"])
        if d.get("flip_map") is not None:
            d["flip_map"] = {int(k): int(v) for k, v in d["flip_map"].items()}
        return cls(**d)


# ---------------------------------------------------------------- helpers

def _arrays(update) -> Tuple[List[np.ndarray], Optional[object]]:
    if hasattr(update, "arrays"):
        return [np.asarray(a, dtype=np.float64) for a in update.arrays()], update
    return [np.asarray(a, dtype=np.float64) for a in update], None


def _rebuild(arrays, template):
    return template.from_arrays(arrays) if template is not None else arrays


def _ceil_count(fraction: float, n: int) -> int:
    # guard against 0.5 * 10 = 5.000000000000001 style rounding before ceil
    return min(n, int(math.ceil(round(fraction * n, 9))))


# ---------------------------------------------------------------- integrity attacks

def flip_labels(shard: Dataset, flip_map=None, rng: Optional[np.random.Generator] = None,
                fraction: float = 1.0) -> Dataset:
    """Relabel samples through ``flip_map`` (default ``y -> (y + 1) mod C``).

    With ``fraction < 1`` a random ``ceil(fraction * n)`` subset is relabelled.
    """
    C = shard.class_count
    if flip_map is None:
        table = (np.arange(C) + 1) % C
    elif isinstance(flip_map, dict):
        missing = set(range(C)) - set(flip_map)
        if missing:
            raise ShapeError(f"flip map undefined for labels {sorted(missing)}")
        table = np.array([flip_map[c] for c in range(C)])
    else:
        table = np.asarray(flip_map, dtype=np.int64)
        if table.shape != (C,):
            raise ShapeError("flip map must cover every label")
    if table.min() < 0 or table.max() >= C:
        raise ShapeError("flip map produces an out-of-domain label")
    out = shard.copy()
    if fraction >= 1.0:
        out.y = table[out.y]
    else:
        rng = rng if rng is not None else np.random.default_rng(0)
        idx = rng.choice(len(out), size=_ceil_count(fraction, len(out)), replace=False)
        out.y[idx] = table[out.y[idx]]
    return out


def inject_noise(params, scale: float, rng: np.random.Generator):
    """Add ``scale * N(0, 1)`` to every parameter entry."""
    if scale < 0:
        raise ValueError("noise scale must be non-negative")
    arrays, template = _arrays(params)
    if scale == 0:
        return _rebuild([a.copy() for a in arrays], template)
    return _rebuild([a + scale * rng.standard_normal(a.shape) for a in arrays], template)


def inject_backdoor(shard: Dataset, patch: PatchSpec, fraction: float,
                    rng: np.random.Generator) -> Dataset:
    """Stamp the trigger on ``ceil(fraction * n)`` random samples and relabel them to the target."""
    patch.check(shard.image_shape)
    out = shard.copy()
    k = _ceil_count(fraction, len(out))
    if k == 0:
        return out
    idx = np.sort(rng.choice(len(out), size=k, replace=False))
    out.X[idx] = patch.apply(out.X[idx], out.image_shape)
    out.y[idx] = patch.target
    return out


def backdoor_accuracy(model, test: Dataset, patch: PatchSpec, target: Optional[int] = None,
                      rule: Optional[ShuffleRule] = None) -> float:
    """Fraction of triggered test samples (true label != target) classified as the target.

    ``model`` lives in the space of ``rule``: inputs are shuffled by it and the
    output permutation is undone before reading the prediction.
    """
    target = patch.target if target is None else target
    keep = test.y != target
    if not np.any(keep):
        return float("nan")
    X = patch.apply(test.X[keep], test.image_shape)
    if rule is not None:
        X = shuffle_input(X, rule)
    logits = forward(model, X)
    if rule is not None:
        logits = unshuffle_output(logits, rule)
    return float(np.mean(np.argmax(logits, axis=1) == target))


# ---------------------------------------------------------------- confidentiality attacks

def analytic_gradient_leak(gradW1, gradb1, tol: float = 1e-12) -> np.ndarray:
    """Recover a batch-1 input from first-layer gradients.

    For one sample ``dL/dW1 = delta x^T`` and ``dL/db1 = delta``, so any row with
    a non-zero bias gradient divided by that gradient is the input. The row with
    the largest ``|dL/db1|`` is used. Works equally on update deltas, since a
    common step size cancels in the ratio.
    """
    gradW1 = np.asarray(gradW1, dtype=np.float64)
    gradb1 = np.asarray(gradb1, dtype=np.float64).reshape(-1)
    if gradW1.ndim != 2 or gradW1.shape[0] != gradb1.shape[0]:
        raise ShapeError(f"weight gradient {gradW1.shape} vs bias gradient {gradb1.shape}")
    i = int(np.argmax(np.abs(gradb1)))
    if abs(gradb1[i]) < tol:
        raise NoLeakableRowError("all first-layer bias gradients vanish")
    return gradW1[i] / gradb1[i]


def infer_rule_by_assignment(shuffled_params, reference_params, true_perm=None):
    """Guess the first-layer input permutation by min-cost column matching.

    Column ``j`` of the shuffled first-layer weights is matched to the
    reference column at squared-distance minimum under a perfect matching.
    Returns ``(inferred_perm, mean_displacement)``; the displacement is the mean
    ``|inferred[j] - true[j]|`` and is ``None`` without ground truth.
    """
    A = np.asarray(shuffled_params.layers[0].W if hasattr(shuffled_params, "layers")
                   else shuffled_params, dtype=np.float64)
    B = np.asarray(reference_params.layers[0].W if hasattr(reference_params, "layers")
                   else reference_params, dtype=np.float64)
    if A.shape != B.shape:
        raise ShapeError(f"shuffled {A.shape} vs reference {B.shape}")
    cost = assignment_cost(A, B)
    _, inferred = linear_sum_assignment(cost)
    if true_perm is None:
        return inferred, None
    return inferred, float(np.mean(np.abs(inferred - np.asarray(true_perm))))


def assignment_cost(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """``cost[j, k] = ||A[:, j] - B[:, k]||^2``."""
    sa = np.sum(A * A, axis=0)
    sb = np.sum(B * B, axis=0)
    return np.maximum(sa[:, None] + sb[None, :] - 2.0 * (A.T @ B), 0.0)


# ---------------------------------------------------------------- per-update defenses

def gradient_prune(update, ratio: float):
    """Zero the ``floor(ratio * N)`` smallest-magnitude entries across the whole update.

    Equal magnitudes are pruned in (layer index, flat index) order.
    """
    if not 0.0 <= ratio < 1.0:
        raise ValueError("prune ratio must lie in [0, 1)")
    arrays, template = _arrays(update)
    flat = np.concatenate([a.reshape(-1) for a in arrays])
    k = int(math.floor(round(ratio * flat.size, 9)))
    if k:
        order = np.argsort(np.abs(flat), kind="stable")
        flat = flat.copy()
        flat[order[:k]] = 0.0
    out, pos = [], 0
    for a in arrays:
        out.append(flat[pos:pos + a.size].reshape(a.shape))
        pos += a.size
    return _rebuild(out, template)


def dp_noise(update, level: str, clip_norm: float, rng: np.random.Generator):
    """Clip the update to ``clip_norm`` (global L2) then add Gaussian noise.

    Noise std is ``{S: 0.01, M: 0.05, L: 0.2}[level] * clip_norm / sqrt(N)``.
    """
    if clip_norm <= 0:
        raise ValueError("clip_norm must be positive")
    if level not in DP_LEVELS:
        raise ValueError(f"unknown DP level {level!r}")
    arrays, template = _arrays(update)
    n = sum(a.size for a in arrays)
    norm = math.sqrt(sum(float(np.sum(a * a)) for a in arrays))
    factor = min(1.0, clip_norm / norm) if norm > 0 else 1.0
    sigma = DP_LEVELS[level] * clip_norm / math.sqrt(n)
    return _rebuild([a * factor + sigma * rng.standard_normal(a.shape) for a in arrays], template)


def model_delta(after, before) -> List[np.ndarray]:
    return [a - b for a, b in zip(after.arrays(), before.arrays())]


def apply_delta(model, delta: Sequence[np.ndarray]):
    return model.from_arrays([a + d for a, d in zip(model.arrays(), delta)])
