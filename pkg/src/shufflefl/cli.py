"""Command-line entry point.

Exit codes: 0 ok, 2 config error, 3 IO error, 4 verification failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from .consensus import NodeBehavior, default_node_seed, run_seed_consensus
from .exceptions import ConfigError, FormatError, UnsupportedConfigurationError
from .nn.functional import forward
from .nn.models import MlpModel, RnnModel, TinyTransformer
from .permute import (ArchShape, random_rule, seed_from_str, seed_to_str, shuffle_input,
                      shuffle_model, shuffle_output)
from .sim import SimConfig, leak_csv, run_leak_bench, run_simulation

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_VERIFY = 0, 2, 3, 4
REDACTED = "<redacted>"


def _seed_arg(text: str) -> int:
    try:
        return seed_from_str(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _load_config(path: str, seed: Optional[int]) -> SimConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {path}")
    cfg = SimConfig.from_json(p)
    if seed is not None:
        cfg = dataclasses.replace(cfg, seed=seed)
    return cfg


# ---------------------------------------------------------------- verify-shuffle

def _random_model(arch: str, rng: np.random.Generator):
    if arch == "mlp":
        depth = int(rng.integers(1, 4))
        dims = [int(d) for d in rng.integers(2, 12, size=depth + 1)]
        return MlpModel.init(dims, rng)
    if arch == "rnn":
        return RnnModel.init(int(rng.integers(2, 8)), int(rng.integers(2, 10)), int(rng.integers(2, 6)), rng)
    return TinyTransformer.init(int(rng.integers(2, 6)), int(rng.integers(2, 6)), int(rng.integers(2, 8)),
                                int(rng.integers(2, 10)), int(rng.integers(2, 6)), rng)


def _random_input(model, rng: np.random.Generator) -> np.ndarray:
    batch = int(rng.integers(1, 5))
    if isinstance(model, MlpModel):
        return rng.standard_normal((batch, model.dims[0]))
    if isinstance(model, RnnModel):
        return rng.standard_normal((batch, int(rng.integers(1, 6)), model.dims[0]))
    return rng.standard_normal((batch, model.n_tokens, model.patch))


def equivariance_deviation(arch: str, trials: int, seed: int = 0, corrupt: bool = False) -> float:
    """Max |f(shuffled model, shuffled x) - output_perm(f(model, x))| over random triples.

    ``corrupt`` feeds the shuffled model inputs permuted by a rule with one
    swapped input index, which must break equivariance.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        model = _random_model(arch, rng)
        x = _random_input(model, rng)
        rule = random_rule(ArchShape.of(model), rng)
        in_rule = rule
        if corrupt:
            bad = rule.input_perm.copy()
            bad[[0, -1]] = bad[[-1, 0]]
            if arch == "transformer":
                in_rule = dataclasses.replace(rule, input_perm=bad, intra_perm=bad)
            else:
                in_rule = dataclasses.replace(rule, input_perm=bad)
        got = forward(shuffle_model(model, rule), shuffle_input(x, in_rule))
        want = shuffle_output(forward(model, x), rule)
        worst = max(worst, float(np.max(np.abs(got - want))))
    return worst


def cmd_verify_shuffle(args) -> int:
    if args.trials < 1:
        raise ConfigError("--trials must be positive")
    dev = equivariance_deviation(args.arch, args.trials, args.seed, args.corrupt_rule)
    ok = dev <= args.tol
    print(f"arch={args.arch} trials={args.trials} max_deviation={dev:.3e} tol={args.tol:.1e} "
          f"{'ok' if ok else 'FAILED'}")
    return EXIT_OK if ok else EXIT_VERIFY


# ---------------------------------------------------------------- simulate / leak-demo

def cmd_simulate(args) -> int:
    cfg = _load_config(args.config, args.seed)
    result = run_simulation(cfg)
    out = Path(args.out)
    result.write(out)
    (out / "config.json").write_text(cfg.to_json(redact_seed=args.role == "server"))
    final = result.metrics[-1] if result.metrics else None
    summary = f"rounds={len(result.metrics)} clusters={len(result.registry.clusters())}"
    if final is not None:
        summary += f" benign_accuracy={final.benign_accuracy:.4f}"
    print(summary)
    if args.role != "server":
        print(f"seed={seed_to_str(cfg.seed)}")
    print(f"wrote {out / 'metrics.csv'} {out / 'clusters.jsonl'} {out / 'config.json'}")
    return EXIT_OK


def cmd_leak_demo(args) -> int:
    cfg = _load_config(args.config, args.seed)
    rows = run_leak_bench(cfg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    text = leak_csv(rows)
    out.write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------- consensus-demo

def _parse_byzantine(spec: str, n: int, seed: int) -> dict:
    """``"1,3:silent"`` -> behaviours; the default kind is equivocating."""
    behaviors = {}
    if not spec:
        return behaviors
    for item in spec.split(","):
        node, _, kind = item.strip().partition(":")
        try:
            i = int(node)
        except ValueError:
            raise ConfigError(f"bad byzantine node {node!r}") from None
        if not 0 <= i < n:
            raise ConfigError(f"byzantine node {i} outside 0..{n - 1}")
        kind = kind or "equivocating"
        if kind == "silent":
            behaviors[i] = NodeBehavior.silent()
        elif kind == "equivocating":
            behaviors[i] = NodeBehavior.equivocating(default_node_seed(seed, 1000 + i),
                                                     default_node_seed(seed, 2000 + i))
        else:
            raise ConfigError(f"unknown byzantine kind {kind!r}")
    return behaviors


def cmd_consensus_demo(args) -> int:
    if args.n < 1:
        raise ConfigError("--n must be positive")
    behaviors = _parse_byzantine(args.byzantine, args.n, args.seed)
    if len(behaviors) > (args.n - 1) // 3:
        print(f"warning: {len(behaviors)} faulty nodes exceed f={(args.n - 1) // 3}", file=sys.stderr)
    proposed = default_node_seed(args.seed, args.leader)
    try:
        res = run_seed_consensus(args.n, behaviors, args.leader, proposed, round_id=0)
    except UnsupportedConfigurationError as exc:
        raise ConfigError(str(exc)) from exc
    show = (lambda s: REDACTED) if args.role == "server" else seed_to_str
    for i in range(args.n):
        if i in behaviors:
            print(f"node {i}: byzantine ({behaviors[i].kind})")
        elif i in res.committed:
            print(f"node {i}: committed {show(res.committed[i])}")
        else:
            print(f"node {i}: undecided")
    print(f"views={res.view + 1} decided={str(res.decided).lower()} "
          f"agreement={str(res.seed is not None).lower()}")
    return EXIT_OK if res.decided else EXIT_VERIFY


# ---------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="shufflefl", description="Shuffled federated learning simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=_seed_arg, default=None,
                       help="master seed override (unsigned 64-bit decimal)")
        p.add_argument("--role", choices=("client", "server", "harness"), default="harness",
                       help="server role never prints seeds")

    p = sub.add_parser("simulate", help="run a federated simulation")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("verify-shuffle", help="check shuffle equivariance on random models")
    p.add_argument("--arch", choices=("mlp", "rnn", "transformer"), required=True)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--tol", type=float, default=1e-9)
    p.add_argument("--corrupt-rule", action="store_true", help=argparse.SUPPRESS)
    common(p)
    p.set_defaults(func=cmd_verify_shuffle)

    p = sub.add_parser("leak-demo", help="gradient leakage bench")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default="leak.csv")
    common(p)
    p.set_defaults(func=cmd_leak_demo)

    p = sub.add_parser("consensus-demo", help="seed agreement among n nodes")
    p.add_argument("--n", type=int, default=4)
    p.add_argument("--byzantine", default="", help='e.g. "0,3:silent" (default kind equivocating)')
    p.add_argument("--leader", type=int, default=0)
    common(p)
    p.set_defaults(func=cmd_consensus_demo)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    if args.command in ("verify-shuffle", "consensus-demo") and args.seed is None:
        args.seed = 0
    try:
        return args.func(args)
    except (ConfigError, UnsupportedConfigurationError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, FormatError) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
