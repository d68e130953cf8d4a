"""Round orchestration, metrics and the gradient-leakage bench.

A round runs in phases separated by barriers:

1. participants are sampled and agree on a fresh seed (client side only);
2. each participant fetches its cluster model, unshuffles it with the rule it
   was shuffled under, trains locally (attackers misbehave here), shuffles the
   result with the new rule and uploads parameters plus shuffled probes;
3. the server validates, clusters and aggregates without ever seeing a rule;
4. the harness evaluates every cluster model with its omniscient rule copy.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import attacks
from .attacks import AttackSpec
from .consensus import NodeBehavior, RuleLedger, run_seed_consensus
from .core import PSNR_INF, psnr
from .datasets import (SeqDataset, blob_centers, dirichlet_partition, load_mnist,
                       synth_blobs, synth_sequences)
from .exceptions import ConfigError, NoLeakableRowError
from .nn.functional import accuracy, backward_mlp, one_hot, train_local
from .nn.models import MlpModel, RnnModel
from .permute import (SEED_MASK, ArchShape, ShuffleRule, invert_perm, seed_from_str, seed_to_str, shuffle_input,
                      shuffle_labels, shuffle_mlp, shuffle_model, unshuffle_model)
from .server import (AGGREGATORS, ClientUpdate, DbscanParams, GlobalClusterRegistry,
                     cluster_aware_aggregate, dbscan, fedavg, median_agg, multikrum,
                     shuffled_validation, trimmed_mean_agg)

# rng stream purposes, keyed as default_rng([seed, purpose, ...])
_S_SAMPLING, _S_TRAIN, _S_PROBE, _S_ATTACK, _S_SEED, _S_INIT, _S_DEFENSE = range(1, 8)


@dataclass
class SimConfig:
    n_clients: int = 100
    n_attackers: int = 25
    participants_per_round: int = 10
    rounds: int = 10
    local_epochs: int = 5
    lr: float = 1e-3
    batch_size: int = 64
    dirichlet_alpha: float = 0.5
    dataset: dict = field(default_factory=lambda: {"kind": "blobs"})
    model: dict = field(default_factory=lambda: {"kind": "mlp", "hidden": [64]})
    attack: dict = field(default_factory=lambda: {"kind": "none"})
    defense: dict = field(default_factory=lambda: {"aggregator": "cluster_aware"})
    dbscan: dict = field(default_factory=lambda: {"eps": 0.15, "min_pts": 2})
    probe_count: int = 1
    validation_output: str = "softmax"
    log_similarity: bool = False
    byzantine_consensus: bool = False
    leak: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.seed, str):
            try:
                self.seed = seed_from_str(self.seed)
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
        self.validate()

    def validate(self) -> None:
        def bad(msg):
            raise ConfigError(msg)

        if self.n_clients < 1:
            bad("n_clients must be positive")
        if not 0 <= self.n_attackers or 2 * self.n_attackers > self.n_clients:
            bad("attackers cannot exceed half of the clients")
        if not 1 <= self.participants_per_round <= self.n_clients:
            bad("participants_per_round must be in 1..n_clients")
        if self.rounds < 0 or self.local_epochs < 0 or self.batch_size < 1 or self.lr <= 0:
            bad("rounds/local_epochs must be >= 0, batch_size >= 1, lr > 0")
        if self.dirichlet_alpha <= 0:
            bad("dirichlet_alpha must be positive")
        if self.probe_count < 1:
            bad("probe_count must be at least 1")
        if self.validation_output not in ("softmax", "logits"):
            bad("validation_output must be softmax or logits")
        if self.defense.get("aggregator", "cluster_aware") not in AGGREGATORS:
            bad(f"unknown aggregator {self.defense.get('aggregator')!r}")
        if self.dataset.get("kind", "blobs") not in ("blobs", "mnist", "sequences"):
            bad(f"unknown dataset kind {self.dataset.get('kind')!r}")
        if self.model.get("kind", "mlp") not in ("mlp", "rnn"):
            bad(f"unknown model kind {self.model.get('kind')!r}")
        try:
            AttackSpec.from_dict(self.attack)
            DbscanParams(**self.dbscan)
        except (TypeError, ValueError) as exc:
            bad(str(exc))
        if isinstance(self.seed, bool) or not isinstance(self.seed, (int, np.integer)) \
                or not 0 <= int(self.seed) <= SEED_MASK:
            bad("seed must be an unsigned 64-bit integer")

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_json(cls, path) -> "SimConfig":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be an object")
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, redact_seed: bool = False) -> str:
        """Config as JSON; the seed is written as an unsigned 64-bit decimal string."""
        d = self.to_dict()
        if redact_seed:
            del d["seed"]
        else:
            d["seed"] = seed_to_str(self.seed)
        return json.dumps(d, indent=2, sort_keys=True) + "\n"


@dataclass
class RoundMetrics:
    round: int
    cluster_accuracy: Dict[int, float]
    benign_accuracy: float
    backdoor_accuracy: Dict[int, float]
    assignment: Dict[int, int]
    participants: List[int]
    pseudo_labels: List[int]
    similarity: Optional[List[List[float]]] = None


@dataclass
class SimResult:
    metrics: List[RoundMetrics]
    registry: GlobalClusterRegistry
    attackers: List[int]

    def metrics_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["round", "cluster", "accuracy", "backdoor_acc"])
        for m in self.metrics:
            for g, acc in sorted(m.cluster_accuracy.items()):
                bd = m.backdoor_accuracy.get(g)
                w.writerow([m.round, g, f"{acc:.6f}", "" if bd is None else f"{bd:.6f}"])
        return buf.getvalue()

    def clusters_jsonl(self) -> str:
        lines = []
        for m in self.metrics:
            rec = {
                "round": m.round,
                "client_ids": m.participants,
                "pseudo_labels": m.pseudo_labels,
                "global_labels": {str(c): g for c, g in sorted(m.assignment.items())},
                "cluster_accuracy": {str(g): round(a, 6) for g, a in sorted(m.cluster_accuracy.items())},
                "benign_accuracy": None if math.isnan(m.benign_accuracy) else round(m.benign_accuracy, 6),
            }
            if m.similarity is not None:
                rec["similarity"] = m.similarity
            lines.append(json.dumps(rec, sort_keys=True))
        return "".join(line + "\n" for line in lines)

    def write(self, out_dir) -> Tuple[Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.csv").write_text(self.metrics_csv())
        (out / "clusters.jsonl").write_text(self.clusters_jsonl())
        return out / "metrics.csv", out / "clusters.jsonl"

    def mixed_clusters(self, after_round: int = 0) -> List[int]:
        """Rounds (> ``after_round``) where some global cluster mixes benign and malicious clients."""
        bad = set(self.attackers)
        rounds = []
        for m in self.metrics:
            if m.round <= after_round:
                continue
            groups: Dict[int, set] = {}
            for c, g in m.assignment.items():
                groups.setdefault(g, set()).add(c in bad)
            if any(len(kinds) == 2 for kinds in groups.values()):
                rounds.append(m.round)
        return rounds


# ---------------------------------------------------------------- setup helpers

def _rng(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng([int(seed)] + [int(k) for k in keys])


def build_data(cfg: SimConfig):
    """Return ``(train, test)`` for the configured dataset."""
    spec = dict(cfg.dataset)
    kind = spec.pop("kind", "blobs")
    if kind == "mnist":
        train = load_mnist("train", spec.get("data_dir"), spec.get("train_limit"))
        test = load_mnist("test", spec.get("data_dir"), spec.get("test_limit"))
        return train, test
    data_seed = int(spec.get("seed", cfg.seed))
    if kind == "sequences":
        classes, T, d = spec.get("classes", 4), spec.get("T", 16), spec.get("d", 8)
        train = synth_sequences(classes, T, d, spec.get("n_train", 800), data_seed)
        test = synth_sequences(classes, T, d, spec.get("n_test", 200), data_seed + 1)
        return train, test
    classes, d = spec.get("classes", 10), spec.get("d", 64)
    shape = tuple(spec["image_shape"]) if spec.get("image_shape") else None
    if shape is None and int(math.isqrt(d)) ** 2 == d:
        shape = (math.isqrt(d), math.isqrt(d))
    centers = blob_centers(classes, d, data_seed)
    spread = spec.get("spread", 0.15)
    train = synth_blobs(classes, d, spec.get("n_train", 2000), spread, data_seed + 1, shape, centers)
    test = synth_blobs(classes, d, spec.get("n_test", 500), spread, data_seed + 2, shape, centers)
    return train, test


def build_model(cfg: SimConfig, train, rng: np.random.Generator):
    spec = cfg.model
    if spec.get("kind", "mlp") == "rnn":
        if not isinstance(train, SeqDataset):
            raise ConfigError("an RNN needs a sequence dataset")
        return RnnModel.init(train.X.shape[2], int(spec.get("hidden", 16)), train.class_count, rng)
    if isinstance(train, SeqDataset):
        raise ConfigError("an MLP needs a flat-feature dataset")
    hidden = [int(h) for h in spec.get("hidden", [64])]
    return MlpModel.init([train.X.shape[1], *hidden, train.class_count], rng)


def attacker_ids(cfg: SimConfig) -> List[int]:
    """Attackers are the highest client ids."""
    return list(range(cfg.n_clients - cfg.n_attackers, cfg.n_clients))


def _threads() -> int:
    raw = os.environ.get("TAZZA_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"TAZZA_THREADS must be an integer, got {raw!r}") from None
    return (os.cpu_count() or 1) if n == 0 else max(1, n)


def _assert_rule_free(updates: Sequence[ClientUpdate]) -> None:
    for u in updates:
        for value in vars(u).values():
            if isinstance(value, ShuffleRule):
                raise RuntimeError("a shuffle rule crossed the server boundary")


# ---------------------------------------------------------------- server role

class Server:
    """Holds cluster models in shuffled space. Never receives a rule."""

    def __init__(self, cfg: SimConfig, init_params, init_tag: int):
        self.aggregator = cfg.defense.get("aggregator", "cluster_aware")
        self.defense = cfg.defense
        self.dbscan_params = DbscanParams(**cfg.dbscan)
        self.output = cfg.validation_output
        self.registry = GlobalClusterRegistry()
        self.init = (init_params, init_tag)
        self.global_model = (init_params, init_tag)

    def model_for(self, client_id: int):
        if self.aggregator != "cluster_aware":
            return self.global_model
        g = self.registry.labels.get(client_id)
        if g is None or g not in self.registry.models:
            return self.init
        return self.registry.models[g]

    def receive(self, updates: List[ClientUpdate], tag: int, log_similarity: bool = False):
        """Aggregate one round; returns ``(pseudo_labels, similarity or None)``."""
        _assert_rule_free(updates)
        updates = sorted(updates, key=lambda u: u.client_id)
        ids = [u.client_id for u in updates]
        sim = None
        if self.aggregator == "cluster_aware":
            if len(updates) >= 2:
                S = shuffled_validation(updates, self.output)
                labels = dbscan(S.distance(), self.dbscan_params)
                sim = S.S
            else:
                labels = np.zeros(len(updates), dtype=np.int64)
            self.registry, _ = cluster_aware_aggregate(updates, labels, self.registry, tag)
        else:
            d = self.defense
            if self.aggregator == "fedavg":
                agg = fedavg(updates)
            elif self.aggregator == "median":
                agg = median_agg(updates)
            elif self.aggregator == "trimmed_mean":
                agg = trimmed_mean_agg(updates, int(d.get("trim_beta", 1)))
            else:
                agg = multikrum(updates, int(d.get("krum_f", 1)),
                                int(d.get("krum_select", max(1, len(updates) - int(d.get("krum_f", 1))))))
            self.global_model = (agg, tag)
            labels = np.zeros(len(updates), dtype=np.int64)
            for c in ids:
                self.registry.labels[c] = 0
            self.registry.models[0] = self.global_model
            self.registry.next_label = 1
        similarity = sim.round(9).tolist() if (sim is not None and log_similarity) else None
        return [int(x) for x in labels], similarity


# ---------------------------------------------------------------- client role

@dataclass
class _ClientJob:
    client_id: int
    shard: object
    start_params: object
    start_tag: int
    round_id: int
    is_attacker: bool


def _client_step(cfg: SimConfig, job: _ClientJob, ledger: RuleLedger, attack: AttackSpec,
                 shape: ArchShape) -> ClientUpdate:
    old_rule = ShuffleRule.derive(ledger.lookup(job.start_tag), shape)
    new_rule = ShuffleRule.derive(ledger.lookup(job.round_id), shape)
    start = unshuffle_model(job.start_params, old_rule)
    shard = job.shard
    trained = train_local(start, shard.X, shard.y, cfg.local_epochs, cfg.batch_size, cfg.lr,
                          _rng(cfg.seed, _S_TRAIN, job.client_id, job.round_id))
    per_update = cfg.defense.get("per_update")
    if per_update:
        delta = attacks.model_delta(trained, start)
        drng = _rng(cfg.seed, _S_DEFENSE, job.client_id, job.round_id)
        if per_update["kind"] == "prune":
            delta = attacks.gradient_prune(delta, float(per_update["ratio"]))
        else:
            delta = attacks.dp_noise(delta, per_update.get("level", "M"),
                                     float(per_update.get("clip_norm", 1.0)), drng)
        trained = attacks.apply_delta(start, delta)
    if job.is_attacker and attack.kind == "noise_inject":
        trained = attacks.inject_noise(trained, attack.noise_scale,
                                       _rng(cfg.seed, _S_ATTACK, job.client_id, job.round_id))
    prng = _rng(cfg.seed, _S_PROBE, job.client_id, job.round_id)
    idx = np.sort(prng.choice(len(shard), size=min(cfg.probe_count, len(shard)), replace=False))
    return ClientUpdate(job.client_id, shuffle_model(trained, new_rule),
                        shuffle_input(shard.X[idx], new_rule), len(shard))


def _poison(shard, attack: AttackSpec, rng: np.random.Generator):
    if attack.kind == "label_flip":
        return attacks.flip_labels(shard, attack.flip_map, rng, attack.flip_fraction)
    if attack.kind == "backdoor":
        return attacks.inject_backdoor(shard, attack.patch, attack.poison_fraction, rng)
    return shard


def _agree_seed(cfg: SimConfig, participants: Sequence[int], attackers: set, round_id: int) -> int:
    """Run seed consensus among participants; the sampled leader proposes."""
    n = len(participants)
    lead = int(_rng(cfg.seed, _S_SEED, round_id, 0).integers(n))
    own = {i: int(_rng(cfg.seed, _S_SEED, round_id, 1, c).integers(0, SEED_MASK, dtype=np.uint64,
                                                                   endpoint=True))
           for i, c in enumerate(participants)}
    behaviors = {}
    if cfg.byzantine_consensus and n >= 4:
        f = (n - 1) // 3
        byz = [i for i, c in enumerate(participants) if c in attackers][:f]
        behaviors = {i: NodeBehavior.equivocating(own[i], own[i] ^ 1) for i in byz}
    result = run_seed_consensus(n, behaviors, lead, own[lead], round_id, own)
    if not result.decided or result.seed is None:
        raise RuntimeError(f"seed consensus failed in round {round_id}")
    return result.seed


# ---------------------------------------------------------------- harness

def _evaluate(model_params, tag: int, ledger: RuleLedger, shape: ArchShape, test,
              attack: AttackSpec) -> Tuple[float, Optional[float]]:
    rule = ShuffleRule.derive(ledger.lookup(tag), shape)
    plain = unshuffle_model(model_params, rule)
    acc = accuracy(plain, test.X, test.y)
    bd = None
    if attack.kind == "backdoor":
        bd = attacks.backdoor_accuracy(plain, test, attack.patch)
    return acc, bd


def run_simulation(cfg: SimConfig, data=None) -> SimResult:
    """Run ``cfg.rounds`` rounds; a pure function of ``cfg`` (and ``data`` if given)."""
    cfg.validate()
    attackers = attacker_ids(cfg)
    if cfg.rounds == 0:
        return SimResult([], GlobalClusterRegistry(), attackers)
    train, test = data if data is not None else build_data(cfg)
    attack = AttackSpec.from_dict(cfg.attack)
    parts = dirichlet_partition(train, cfg.n_clients, cfg.dirichlet_alpha, cfg.seed)
    bad = set(attackers)
    shards = {}
    for c, idx in enumerate(parts):
        shard = train.subset(idx)
        if c in bad:
            shard = _poison(shard, attack, _rng(cfg.seed, _S_ATTACK, c))
        shards[c] = shard

    init = build_model(cfg, train, _rng(cfg.seed, _S_INIT))
    shape = ArchShape.of(init)
    ledger = RuleLedger()
    first = sorted(_rng(cfg.seed, _S_SAMPLING, 0).choice(
        cfg.n_clients, size=cfg.participants_per_round, replace=False).tolist())
    ledger.publish(0, _agree_seed(cfg, first, bad, 0))
    server = Server(cfg, shuffle_model(init, ShuffleRule.derive(ledger.lookup(0), shape)), 0)

    metrics: List[RoundMetrics] = []
    workers = _threads()
    for t in range(1, cfg.rounds + 1):
        participants = sorted(_rng(cfg.seed, _S_SAMPLING, t).choice(
            cfg.n_clients, size=cfg.participants_per_round, replace=False).tolist())
        ledger.publish(t, _agree_seed(cfg, participants, bad, t))
        jobs = []
        for c in participants:
            params, tag = server.model_for(c)
            jobs.append(_ClientJob(c, shards[c], params, tag, t, c in bad))
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                updates = list(pool.map(lambda j: _client_step(cfg, j, ledger, attack, shape), jobs))
        else:
            updates = [_client_step(cfg, j, ledger, attack, shape) for j in jobs]
        pseudo, similarity = server.receive(updates, t, cfg.log_similarity)

        reg = server.registry
        cluster_acc, cluster_bd = {}, {}
        for g, members in reg.clusters().items():
            acc, bd = _evaluate(*reg.models[g], ledger, shape, test, attack)
            cluster_acc[g] = acc
            if bd is not None:
                cluster_bd[g] = bd
        benign = [cluster_acc[g] for g, members in reg.clusters().items()
                  if any(c not in bad for c in members)]
        metrics.append(RoundMetrics(
            t, cluster_acc, float(np.mean(benign)) if benign else float("nan"), cluster_bd,
            dict(reg.labels), participants, pseudo, similarity,
        ))
    return SimResult(metrics, server.registry, attackers)


# ---------------------------------------------------------------- leakage bench

LEAK_DEFENSES = ("none", "prune_0.7", "prune_0.9", "prune_0.99", "dp_S", "dp_M", "dp_L", "shuffle")


def render_pixels(x: np.ndarray) -> np.ndarray:
    """Map a reconstruction onto the 8-bit pixel grid the data was stored in."""
    return np.round(np.clip(x, 0.0, 1.0) * 255.0) / 255.0


@dataclass
class LeakRow:
    defense: str
    mean_psnr: float
    best_psnr: float
    mean_psnr_vs_shuffled: float
    best_psnr_vs_shuffled: float
    psnr: List[float] = field(repr=False, default_factory=list)
    psnr_vs_shuffled: List[float] = field(repr=False, default_factory=list)


def _defend(name: str, grads, rng, clip_norm: float):
    if name.startswith("prune_"):
        return attacks.gradient_prune(grads, float(name.split("_", 1)[1]))
    if name.startswith("dp_"):
        return attacks.dp_noise(grads, name.split("_", 1)[1], clip_norm, rng)
    return grads


def run_leak_bench(cfg: SimConfig, data=None, defenses: Sequence[str] = LEAK_DEFENSES) -> List[LeakRow]:
    """Reconstruct batch-1 training samples from one defended local step.

    Each sample produces one plain gradient step ``delta = -lr * grad`` (after
    the per-update defense) on a freshly initialised MLP; the server inverts the
    first-layer part of ``delta``. For ``shuffle`` the client computes that step
    on its shuffled model with shuffled data, so the server sees a shuffled delta.
    """
    opts = {"samples": 100, "clip_norm": 1.0, **cfg.leak}
    train, _ = data if data is not None else build_data(cfg)
    if isinstance(train, SeqDataset):
        raise ConfigError("the leakage bench needs flat-feature data")
    model = build_model(cfg, train, _rng(cfg.seed, _S_INIT))
    shape = ArchShape.of(model)
    pick = _rng(cfg.seed, _S_PROBE, 0).choice(len(train), size=min(opts["samples"], len(train)),
                                              replace=False)
    rows = []
    for name in defenses:
        if name not in LEAK_DEFENSES:
            raise ConfigError(f"unknown leak defense {name!r}")
        drng = _rng(cfg.seed, _S_DEFENSE, LEAK_DEFENSES.index(name))
        vs_orig, vs_shuf = [], []
        for k, i in enumerate(pick):
            x, y = train.X[i], train.y[i]
            rule = ShuffleRule.derive(int(_rng(cfg.seed, _S_SEED, k).integers(
                0, SEED_MASK, dtype=np.uint64, endpoint=True)), shape)
            x_shuf = shuffle_input(x, rule)
            if name == "shuffle":
                target = one_hot(shuffle_labels([y], rule), train.class_count)
                grads, _ = backward_mlp(shuffle_mlp(model, rule), x_shuf[None], target)
            else:
                grads, _ = backward_mlp(model, x[None], one_hot([y], train.class_count))
                grads = _defend(name, grads, drng, opts["clip_norm"])
            delta = [-cfg.lr * g for g in grads]
            try:
                x_hat = attacks.analytic_gradient_leak(delta[0], delta[1])
            except NoLeakableRowError:
                x_hat = np.zeros_like(x)
            x_hat = render_pixels(x_hat)
            vs_orig.append(psnr(x_hat, x))
            vs_shuf.append(psnr(x_hat, x_shuf))
        rows.append(LeakRow(name, float(np.mean(vs_orig)), float(np.max(vs_orig)),
                            float(np.mean(vs_shuf)), float(np.max(vs_shuf)), vs_orig, vs_shuf))
    return sorted(rows, key=lambda r: r.defense)


def leak_csv(rows: Sequence[LeakRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["defense", "mean_psnr", "best_psnr", "mean_psnr_vs_shuffled", "best_psnr_vs_shuffled",
                "exact_vs_shuffled"])
    for r in sorted(rows, key=lambda r: r.defense):
        exact = sum(v == PSNR_INF for v in r.psnr_vs_shuffled)
        w.writerow([r.defense] + [_fmt(v) for v in (r.mean_psnr, r.best_psnr, r.mean_psnr_vs_shuffled,
                                                    r.best_psnr_vs_shuffled)] + [exact])
    return buf.getvalue()


def _fmt(v: float) -> str:
    return "inf" if v == PSNR_INF else f"{v:.4f}"


# ---------------------------------------------------------------- rule-inference bench

@dataclass
class InferenceRow:
    client_id: int
    displacement: float
    relative_displacement: float


def run_rule_inference(cfg: SimConfig, data=None, plaintext_reference: bool = False,
                       input_only: bool = True) -> List[InferenceRow]:
    """Server-side permutation inference after one local epoch per client.

    The server holds the global model shuffled under the previous rule and
    matches each client's new first-layer columns against it. ``displacement``
    scores the guess against the client's true input permutation;
    ``relative_displacement`` scores it against the previous-to-new column
    correspondence. ``plaintext_reference`` hands the server the unshuffled
    global model instead, which the protocol never does. ``input_only`` keeps
    hidden and output orders fixed, the easiest case for the attacker.
    """
    kw = {"shuffle_hidden": False, "shuffle_output": False} if input_only else {}
    train, _ = data if data is not None else build_data(cfg)
    if isinstance(train, SeqDataset):
        raise ConfigError("the inference bench needs flat-feature data")
    init = build_model(cfg, train, _rng(cfg.seed, _S_INIT))
    shape = ArchShape.of(init)
    prev_rule = ShuffleRule.derive(int(_rng(cfg.seed, _S_SEED, 0).integers(
        0, SEED_MASK, dtype=np.uint64, endpoint=True)), shape, **kw)
    reference = init if plaintext_reference else shuffle_model(init, prev_rule)
    parts = dirichlet_partition(train, cfg.n_clients, cfg.dirichlet_alpha, cfg.seed)
    rows = []
    for c, idx in enumerate(parts):
        shard = train.subset(idx)
        rule = ShuffleRule.derive(int(_rng(cfg.seed, _S_SEED, 1, c).integers(
            0, SEED_MASK, dtype=np.uint64, endpoint=True)), shape, **kw)
        trained = train_local(init, shard.X, shard.y, 1, cfg.batch_size, cfg.lr,
                              _rng(cfg.seed, _S_TRAIN, c, 1))
        guess, disp = attacks.infer_rule_by_assignment(shuffle_model(trained, rule), reference,
                                                       rule.input_perm)
        ref_perm = np.arange(shape.in_dim) if plaintext_reference else prev_rule.input_perm
        relative = invert_perm(ref_perm)[rule.input_perm]
        rows.append(InferenceRow(c, disp, float(np.mean(np.abs(guess - relative)))))
    return rows
