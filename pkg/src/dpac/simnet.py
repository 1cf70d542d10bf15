"""Synchronous message passing over a communication graph with a full transcript.

Every message crosses a graph edge inside a numbered round and is recorded
with its phase and payload kind.  The shuffle phase may only carry public keys
and ciphertexts; the consensus phase only carries plaintext states.  The
transcript is the eavesdropper's view of a run.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from typing import Any, Iterable, Sequence, TextIO

from .netgraph import WeightedGraph
from .paillier import Ciphertext, PublicKey

SHUFFLE = "shuffle"
CONSENSUS = "consensus"

PUBLIC_KEY = "public-key"
CIPHERTEXT = "ciphertext"
PLAINTEXT_STATE = "plaintext-state"

ALLOWED_KINDS = {
    SHUFFLE: frozenset({PUBLIC_KEY, CIPHERTEXT}),
    CONSENSUS: frozenset({PLAINTEXT_STATE}),
}


class TopologyError(ValueError):
    """A message was addressed along a pair that is not a graph edge."""


class PhaseError(ValueError):
    """A payload kind is not allowed in the current phase."""


@dataclass(frozen=True)
class Message:
    sender: int
    receiver: int
    kind: str
    payload: Any


@dataclass(frozen=True)
class Record:
    round: int
    sender: int
    receiver: int
    phase: str
    kind: str
    payload: Any

    def to_json(self) -> dict:
        return {
            "round": self.round,
            "sender": self.sender,
            "receiver": self.receiver,
            "phase": self.phase,
            "kind": self.kind,
            "payload": _payload_json(self.payload),
        }


def _payload_json(payload: Any) -> Any:
    if isinstance(payload, Ciphertext):
        return {"c": hex(payload.value), "N": hex(payload.n)}
    if isinstance(payload, PublicKey):
        return {"N": hex(payload.n)}
    if isinstance(payload, Fraction):
        return str(payload)
    if isinstance(payload, float):
        return repr(payload)
    return payload


class Network:
    """Per-agent mailboxes wired along the edges of ``graph``.

    ``exchange`` validates a whole round before delivering any of it, so a
    rejected round leaves both mailboxes and transcript untouched.
    """

    def __init__(self, graph: WeightedGraph, log: TextIO | None = None, record: bool = True):
        self.graph = graph
        self.record = record
        self.transcript: list[Record] = []
        self.round = 0
        self._log = log
        self._adj = [frozenset(nb) for nb in graph.neighbors]

    @property
    def n(self) -> int:
        return self.graph.n

    def neighbors(self, i: int) -> frozenset[int]:
        return self._adj[i]

    def exchange(self, phase: str, messages: Iterable[Message]) -> list[list[Message]]:
        """Deliver one synchronous round; returns each agent's inbox.

        Inbox entries and transcript records are ordered by ``(sender,
        receiver)`` and then by submission order on each edge.
        """
        if phase not in ALLOWED_KINDS:
            raise PhaseError(f"unknown phase {phase!r}")
        batch = sorted(messages, key=lambda m: (m.sender, m.receiver))  # stable
        allowed = ALLOWED_KINDS[phase]
        for m in batch:
            if not (0 <= m.sender < self.n) or m.receiver not in self._adj[m.sender]:
                raise TopologyError(f"no edge {m.sender} -> {m.receiver}")
            if m.kind not in allowed:
                raise PhaseError(f"{m.kind} payload not allowed in the {phase} phase")
        inbox: list[list[Message]] = [[] for _ in range(self.n)]
        for m in batch:
            inbox[m.receiver].append(m)
        if batch and self.record:
            recs = [Record(self.round, m.sender, m.receiver, phase, m.kind, m.payload) for m in batch]
            self.transcript.extend(recs)
            if self._log is not None:
                for r in recs:
                    self._log.write(json.dumps(r.to_json()) + "\n")
        self.round += 1
        return inbox

    def broadcast_states(self, states: Sequence) -> list[list[Message]]:
        """One consensus round in which every agent sends its state to all neighbours."""
        msgs = [Message(i, j, PLAINTEXT_STATE, states[i])
                for i in range(self.n) for j in sorted(self._adj[i])]
        return self.exchange(CONSENSUS, msgs)


def create_network(graph: WeightedGraph, log: TextIO | None = None, record: bool = True) -> Network:
    return Network(graph, log=log, record=record)


def eavesdropper_view(transcript: Sequence[Record], phase: str | None = None) -> tuple[Record, ...]:
    """Read-only projection of the transcript, optionally restricted to one phase."""
    return tuple(r for r in transcript if phase is None or r.phase == phase)


def check_phase_separation(transcript: Sequence[Record]) -> None:
    """Raise ``PhaseError`` if any record carries a kind not allowed in its phase."""
    for r in transcript:
        if r.kind not in ALLOWED_KINDS[r.phase]:
            raise PhaseError(f"round {r.round}: {r.kind} payload in the {r.phase} phase")


def consensus_rounds(transcript: Sequence[Record]) -> list[dict[int, Any]]:
    """Group consensus-phase records into per-round ``{sender: state}`` maps."""
    rounds: dict[int, dict[int, Any]] = {}
    for r in eavesdropper_view(transcript, CONSENSUS):
        rounds.setdefault(r.round, {})[r.sender] = r.payload
    return [rounds[k] for k in sorted(rounds)]


def write_transcript(transcript: Sequence[Record], fh: TextIO) -> None:
    for r in transcript:
        fh.write(json.dumps(r.to_json()) + "\n")
