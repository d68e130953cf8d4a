"""Simplified PBFT agreement on a round's shuffle seed.

The bus is synchronous and lock-step: every phase delivers all messages sent in
that phase, ordered by (sender id, phase), before the next phase starts. Sender
ids are stamped by the bus and cannot be forged.

Per view ``v`` (leader ``(leader + v) mod n``):

1. pre-prepare: the leader sends a seed to every node.
2. prepare: a node that accepts the proposal broadcasts ``prepare(seed)``; it is
   *prepared* once it holds a quorum of matching prepares.
3. commit: prepared nodes broadcast ``commit(seed)``. A quorum of matching commits
   decide the seed; ``f + 1`` matching commits lock the node on it.
4. view change (only if some honest node is undecided): every node broadcasts
   its lock. A value reported by a quorum of nodes becomes that node's
   *justified* value; in the next view a node only accepts a proposal equal to
   its justified value (if it has one). A leader re-proposes its own lock, else
   its justified value, else its own seed.

The quorum is ``2f + 1`` for ``n = 3f + 1`` and ``ceil((n + f + 1) / 2)`` in
general (:func:`quorum_size`), so two quorums always share an honest node.

This is a minimal re-propose scheme, not PBFT's certificate-carrying view change.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .exceptions import UnsupportedConfigurationError
from .permute import SEED_MASK

PHASES = ("pre_prepare", "prepare", "commit", "view_change")


@dataclass(frozen=True)
class ConsensusMsg:
    phase: str
    view: int
    round: int
    payload: Optional[int]
    sender: int
    recipient: int


@dataclass(frozen=True)
class NodeBehavior:
    """``honest``, ``silent`` or ``equivocating`` (sends ``seeds[recipient % len(seeds)]``)."""

    kind: str = "honest"
    seeds: Tuple[int, ...] = ()

    def __post_init__(self):
        if self.kind not in ("honest", "silent", "equivocating"):
            raise ValueError(f"unknown behaviour {self.kind!r}")
        if self.kind == "equivocating" and len(self.seeds) < 1:
            raise ValueError("an equivocating node needs at least one seed")

    @property
    def byzantine(self) -> bool:
        return self.kind != "honest"

    @classmethod
    def honest(cls) -> "NodeBehavior":
        return cls("honest")

    @classmethod
    def silent(cls) -> "NodeBehavior":
        return cls("silent")

    @classmethod
    def equivocating(cls, *seeds: int) -> "NodeBehavior":
        return cls("equivocating", tuple(int(s) for s in seeds))


@dataclass
class ConsensusResult:
    committed: Dict[int, int]
    view: int
    decided: bool
    leader: int
    messages: List[ConsensusMsg] = field(default_factory=list, repr=False)

    @property
    def seed(self) -> Optional[int]:
        vals = set(self.committed.values())
        return vals.pop() if len(vals) == 1 else None


def fault_bound(n: int) -> int:
    return (n - 1) // 3


def quorum_size(n: int) -> int:
    """Smallest quorum whose pairwise overlaps always contain an honest node.

    Equals ``2f + 1`` when ``n = 3f + 1``; larger otherwise (``n = 5`` needs 4,
    since two 3-node quorums can meet only in the faulty node).
    """
    f = fault_bound(n)
    return max(2 * f + 1, (n + f + 2) // 2)


def default_node_seed(proposed_seed: int, node: int) -> int:
    rng = np.random.default_rng([int(proposed_seed) & SEED_MASK, node])
    return int(rng.integers(0, SEED_MASK, dtype=np.uint64, endpoint=True))


class _Bus:
    def __init__(self, n: int, round_id: int):
        self.n = n
        self.round = round_id
        self.log: List[ConsensusMsg] = []

    def deliver(self, outgoing: List[ConsensusMsg]) -> Dict[int, List[ConsensusMsg]]:
        outgoing = sorted(outgoing, key=lambda m: (m.sender, PHASES.index(m.phase), m.recipient))
        self.log.extend(outgoing)
        inbox: Dict[int, List[ConsensusMsg]] = {i: [] for i in range(self.n)}
        for m in outgoing:
            inbox[m.recipient].append(m)
        return inbox


def _matching(msgs: Sequence[ConsensusMsg]) -> Counter:
    """Count distinct senders per payload (one message per sender counts)."""
    seen = {}
    for m in msgs:
        seen.setdefault(m.sender, m.payload)
    return Counter(v for v in seen.values() if v is not None)


def run_seed_consensus(n_nodes: int, behaviors: Optional[Mapping[int, NodeBehavior]] = None,
                       leader: int = 0, proposed_seed: int = 0, round_id: int = 0,
                       node_seeds: Optional[Mapping[int, int]] = None) -> ConsensusResult:
    """Agree on a seed among ``n_nodes``; returns what every honest node committed.

    ``proposed_seed`` is what the view-0 leader proposes if honest; later
    leaders propose ``node_seeds[node]`` (derived from the proposed seed when
    not given).
    """
    behaviors = dict(behaviors or {})
    beh = [behaviors.get(i, NodeBehavior.honest()) for i in range(n_nodes)]
    f = fault_bound(n_nodes)
    n_byz = sum(b.byzantine for b in beh)
    if n_byz and n_nodes < 4:
        raise UnsupportedConfigurationError("byzantine nodes need at least 4 participants")
    if n_nodes < 1:
        raise UnsupportedConfigurationError("no participants")
    own = {i: int((node_seeds or {}).get(i, default_node_seed(proposed_seed, i))) for i in range(n_nodes)}
    own[leader % n_nodes] = int(proposed_seed) & SEED_MASK
    quorum, weak = quorum_size(n_nodes), f + 1
    honest = [i for i in range(n_nodes) if not beh[i].byzantine]
    bus = _Bus(n_nodes, round_id)

    decided: Dict[int, int] = {}
    lock: Dict[int, Optional[int]] = {i: None for i in honest}
    justified: Dict[int, Optional[int]] = {i: None for i in honest}

    def byz_payload(i: int, r: int) -> int:
        b = beh[i]
        return b.seeds[r % len(b.seeds)]

    def broadcast(i: int, phase: str, view: int, value: Optional[int]) -> List[ConsensusMsg]:
        b = beh[i]
        if b.kind == "silent":
            return []
        out = []
        for r in range(n_nodes):
            payload = byz_payload(i, r) if b.kind == "equivocating" else value
            out.append(ConsensusMsg(phase, view, round_id, payload, i, r))
        return out

    view = 0
    for view in range(n_nodes):
        lead = (leader + view) % n_nodes
        if beh[lead].byzantine:
            proposal = None
        elif lock.get(lead) is not None:
            proposal = lock[lead]
        elif justified.get(lead) is not None:
            proposal = justified[lead]
        else:
            proposal = own[lead]
        inbox = bus.deliver(broadcast(lead, "pre_prepare", view, proposal))

        accepted: Dict[int, int] = {}
        for i in honest:
            got = [m.payload for m in inbox[i] if m.sender == lead]
            if not got:
                continue
            required = decided.get(i, justified[i])
            if required is None or got[0] == required:
                accepted[i] = got[0]

        out = []
        for i in range(n_nodes):
            if beh[i].byzantine:
                out += broadcast(i, "prepare", view, None)
            elif i in accepted:
                out += broadcast(i, "prepare", view, accepted[i])
        inbox = bus.deliver(out)
        prepared = {i: v for i, v in accepted.items() if _matching(inbox[i])[v] >= quorum}

        out = []
        for i in range(n_nodes):
            if beh[i].byzantine:
                out += broadcast(i, "commit", view, None)
            elif i in prepared:
                out += broadcast(i, "commit", view, prepared[i])
        inbox = bus.deliver(out)
        for i in honest:
            if i in decided:
                continue
            counts = _matching(inbox[i])
            for value, c in sorted(counts.items()):
                if c >= weak:
                    lock[i] = value
                if c >= quorum:
                    decided[i] = value

        if all(i in decided for i in honest):
            break

        out = []
        for i in range(n_nodes):
            if beh[i].byzantine:
                out += broadcast(i, "view_change", view, None)
            else:
                out += broadcast(i, "view_change", view, decided.get(i, lock[i]))
        inbox = bus.deliver(out)
        for i in honest:
            counts = _matching(inbox[i])
            strong = [v for v, c in counts.items() if c >= quorum]
            justified[i] = strong[0] if strong else None

    return ConsensusResult(
        committed={i: decided[i] for i in honest if i in decided},
        view=view,
        decided=all(i in decided for i in honest),
        leader=leader % n_nodes,
        messages=bus.log,
    )


class RuleLedger:
    """Client-side record of the seed agreed for each round.

    Newly selected participants look up the seed that shuffled the model they
    receive here. The server has no handle on this object.
    """

    def __init__(self):
        self._seeds: Dict[int, int] = {}

    def publish(self, round_id: int, seed: int) -> None:
        if round_id in self._seeds and self._seeds[round_id] != seed:
            raise ValueError(f"conflicting seeds published for round {round_id}")
        self._seeds[round_id] = int(seed)

    def lookup(self, round_id: int) -> int:
        try:
            return self._seeds[round_id]
        except KeyError:
            raise KeyError(f"no participant holds the rule of round {round_id}") from None

    def __contains__(self, round_id: int) -> bool:
        return round_id in self._seeds
