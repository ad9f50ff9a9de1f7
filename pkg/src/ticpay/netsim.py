"""Deterministic multi-party message bus with an in-path adversary.

Actors exchange envelopes over lossy ordered channels driven by a single
event heap: integer-second clock, per-channel FIFO, explicit tie-breaking,
and all jitter drawn from one seeded stream, so a run is a pure function
of its seed and every trace replays byte-identically.

Every transmission passes the adversary hook exactly once, including
copies the adversary itself schedules; rules match on (channel, message
type, nth occurrence) and can observe, drop, delay-replay, bit-tamper,
or inject. Tampering is confined to body bytes so corrupted messages
still route to their receiver, where strict decoding gets to reject them.

The bus keeps a wire log of every byte that crossed a channel; leakage
scans run over that log, not over the trace, which carries digests only.
"""

from __future__ import annotations

import hashlib
import heapq
import json
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

from .errors import ScenarioError, StepBudgetExceeded, WireError
from .rng import DeterministicRng
from .wire import Channel, Envelope, Header, peek_header

DEFAULT_LATENCY = {Channel.WEB: 1, Channel.SMS: 3, Channel.INTERBANK: 2}
DEFAULT_STEP_BUDGET = 10_000


def digest16(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()[:16]


# -- trace ------------------------------------------------------------------


@dataclass(frozen=True)
class TraceEvent:
    seq: int
    at: int
    kind: str  # send | deliver | drop | tamper | replay | inject | reject-parse | timer | note
    channel: Optional[str] = None
    sender: Optional[str] = None
    receiver: Optional[str] = None
    msg_type: Optional[str] = None
    request_id: Optional[str] = None
    body_digest: Optional[str] = None
    note: Optional[str] = None

    def as_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items() if v is not None}


class ProtocolTrace:
    """Ordered event log; exports as JSON lines with stable key order."""

    def __init__(self):
        self.events: List[TraceEvent] = []

    def record(self, event: TraceEvent) -> None:
        self.events.append(event)

    def export_jsonl(self) -> str:
        return "".join(json.dumps(e.as_dict(), sort_keys=True) + "\n" for e in self.events)

    def digest(self) -> str:
        return hashlib.sha256(self.export_jsonl().encode("utf-8")).hexdigest()

    def kinds(self) -> List[str]:
        return [e.kind for e in self.events]

    def find(self, kind: Optional[str] = None, msg_type: Optional[str] = None,
             note: Optional[str] = None) -> List[TraceEvent]:
        out = []
        for e in self.events:
            if kind is not None and e.kind != kind:
                continue
            if msg_type is not None and e.msg_type != msg_type:
                continue
            if note is not None and (e.note is None or note not in e.note):
                continue
            out.append(e)
        return out


@dataclass(frozen=True)
class WireRecord:
    """One transmission as it crossed a channel, raw bytes included.

    `seq` is the trace sequence number of the matching send event, so a
    finding against these bytes can cite a line in the exported trace.
    """

    seq: int
    at: int
    channel: Channel
    sender: str
    receiver: str
    msg_type: str
    data: bytes


# -- adversary --------------------------------------------------------------


@dataclass(frozen=True)
class Observe:
    """Capture a copy of the matched bytes without disturbing delivery."""


@dataclass(frozen=True)
class Drop:
    """Suppress delivery of the matched transmission."""


@dataclass(frozen=True)
class Replay:
    """Retransmit a copy of the matched bytes after `delay` seconds."""

    delay: int = 1
    copies: int = 1


@dataclass(frozen=True)
class Tamper:
    """XOR body bytes in place: edits are (offset-within-body, mask) pairs."""

    edits: Tuple[Tuple[int, int], ...]


@dataclass(frozen=True)
class Rule:
    """Match a transmission by channel, message type, and occurrence index.

    `nth` is 1-based and counts transmissions of that (channel, msg_type)
    across the whole run, adversary copies included; None matches every
    occurrence.
    """

    action: object
    channel: Optional[Channel] = None
    msg_type: Optional[str] = None
    nth: Optional[int] = None

    def matches(self, header: Header, occurrence: int) -> bool:
        if self.channel is not None and header.channel != self.channel:
            return False
        if self.msg_type is not None and header.msg_type != self.msg_type:
            return False
        if self.nth is not None and occurrence != self.nth:
            return False
        return True


@dataclass
class AdversaryScript:
    """Ordered rules applied to live traffic, plus standalone injections.

    Injections are (at, data) pairs entered into the wire at the given
    time; they pass the rule hook like any other transmission.
    """

    rules: List[Rule] = field(default_factory=list)
    injections: List[Tuple[int, bytes]] = field(default_factory=list)

    def __post_init__(self):
        self._occurrences: Dict[Tuple[int, str], int] = {}
        self.captured: List[WireRecord] = []

    def next_occurrence(self, header: Header) -> int:
        key = (int(header.channel), header.msg_type)
        self._occurrences[key] = self._occurrences.get(key, 0) + 1
        return self._occurrences[key]

    def matching(self, header: Header, occurrence: int) -> List[Rule]:
        return [r for r in self.rules if r.matches(header, occurrence)]


# -- actors -----------------------------------------------------------------


class Actor:
    """Base participant: named, message- and timer-driven."""

    name: str = "actor"

    def on_start(self, ctx: "Ctx") -> None:
        pass

    def on_message(self, ctx: "Ctx", env: Envelope) -> None:
        pass

    def on_malformed(self, ctx: "Ctx", header: Header) -> None:
        """Called when a transmission routed here failed strict decoding."""

    def on_timer(self, ctx: "Ctx", label: str) -> None:
        pass


class Ctx:
    """Per-delivery handle an actor uses to act on the world."""

    def __init__(self, sim: "Simulation", actor_name: str):
        self._sim = sim
        self.actor_name = actor_name

    @property
    def now(self) -> int:
        return self._sim.now

    def send(self, env: Envelope, delay: int = 0) -> None:
        self._sim.submit(env.to_bytes(), at=self._sim.now + delay)

    def set_timer(self, label: str, delay: int) -> int:
        return self._sim.set_timer(self.actor_name, label, self._sim.now + delay)

    def cancel_timer(self, token: int) -> None:
        self._sim.cancel_timer(token)

    def note(self, text: str) -> None:
        self._sim.trace_note(self.actor_name, text)


# -- simulation -------------------------------------------------------------


class Simulation:
    """Single-threaded discrete-event run over a fixed cast of actors."""

    def __init__(
        self,
        seed: int | str | bytes = 0,
        adversary: Optional[AdversaryScript] = None,
        latency: Optional[Dict[Channel, int]] = None,
        jitter_max: int = 0,
        step_budget: int = DEFAULT_STEP_BUDGET,
    ):
        self.now = 0
        self.adversary = adversary or AdversaryScript()
        self.latency = dict(DEFAULT_LATENCY)
        if latency:
            self.latency.update(latency)
        self.jitter_max = jitter_max
        self.step_budget = step_budget
        self.trace = ProtocolTrace()
        self.wire_log: List[WireRecord] = []
        self._net_rng = DeterministicRng(seed, "net")
        self._actors: Dict[str, Actor] = {}
        self._order: List[str] = []
        self._heap: List[Tuple[int, int, str, tuple]] = []
        self._tie = 0
        self._event_seq = 0
        self._fifo_floor: Dict[Channel, int] = {}
        self._timer_token = 0
        self._cancelled: set = set()
        self._steps = 0
        #: called after every processed event; lets tests assert invariants
        #: at each instant, not just at the end of a run
        self.after_event: Optional[Callable[["Simulation"], None]] = None

    # -- registration ------------------------------------------------------

    def add_actor(self, actor: Actor) -> None:
        if actor.name in self._actors:
            raise ScenarioError(f"duplicate actor name {actor.name!r}")
        self._actors[actor.name] = actor
        self._order.append(actor.name)

    def actor(self, name: str) -> Actor:
        return self._actors[name]

    # -- event plumbing ----------------------------------------------------

    def _push(self, at: int, kind: str, payload: tuple) -> None:
        if at < self.now:
            raise ScenarioError(f"event scheduled in the past ({at} < {self.now})")
        self._tie += 1
        heapq.heappush(self._heap, (at, self._tie, kind, payload))

    def _record(self, kind: str, **fields) -> int:
        self._event_seq += 1
        self.trace.record(TraceEvent(seq=self._event_seq, at=self.now, kind=kind, **fields))
        return self._event_seq

    def trace_note(self, actor_name: str, text: str) -> None:
        self._record("note", sender=actor_name, note=text)

    # -- sending -----------------------------------------------------------

    def submit(self, data: bytes, at: Optional[int] = None) -> None:
        """Enter bytes into the wire; the adversary hook runs at that time."""
        self._push(self.now if at is None else at, "send", (data,))

    def set_timer(self, actor_name: str, label: str, at: int) -> int:
        self._timer_token += 1
        token = self._timer_token
        self._push(at, "timer", (actor_name, label, token))
        return token

    def cancel_timer(self, token: int) -> None:
        self._cancelled.add(token)

    def _dispatch_send(self, data: bytes) -> None:
        header = peek_header(data)  # envelope headers are never tampered
        occurrence = self.adversary.next_occurrence(header)
        seq = self._record(
            "send",
            channel=header.channel.name,
            sender=header.sender,
            receiver=header.receiver,
            msg_type=header.msg_type,
            request_id=header.request_id or None,
            body_digest=digest16(data),
        )
        record = WireRecord(seq, self.now, header.channel, header.sender,
                            header.receiver, header.msg_type, data)
        self.wire_log.append(record)

        dropped = False
        for rule in self.adversary.matching(header, occurrence):
            action = rule.action
            if isinstance(action, Observe):
                self.adversary.captured.append(record)
            elif isinstance(action, Drop):
                dropped = True
                self._record("drop", channel=header.channel.name,
                             msg_type=header.msg_type, body_digest=digest16(data))
            elif isinstance(action, Tamper):
                data = self._apply_tamper(data, header, action)
                header = peek_header(data)
                seq = self._record("tamper", channel=header.channel.name,
                                   msg_type=header.msg_type, body_digest=digest16(data))
                # The corrupted bytes are what actually crosses the wire.
                self.wire_log.append(WireRecord(
                    seq, self.now, header.channel, header.sender,
                    header.receiver, header.msg_type, data,
                ))
            elif isinstance(action, Replay):
                for i in range(action.copies):
                    self._push(self.now + action.delay * (i + 1), "send", (data,))
                self._record("replay", channel=header.channel.name,
                             msg_type=header.msg_type, body_digest=digest16(data))
            else:
                raise ScenarioError(f"unknown adversary action {action!r}")

        if dropped:
            return
        jitter = self._net_rng.below(self.jitter_max + 1) if self.jitter_max else 0
        candidate = self.now + self.latency.get(header.channel, 1) + jitter
        deliver_at = max(candidate, self._fifo_floor.get(header.channel, 0))
        self._fifo_floor[header.channel] = deliver_at
        self._push(deliver_at, "deliver", (data,))

    @staticmethod
    def _apply_tamper(data: bytes, header: Header, action: Tamper) -> bytes:
        body_start = len(data) - len(header.raw_body)
        buf = bytearray(data)
        for offset, mask in action.edits:
            idx = body_start + offset
            if not body_start <= idx < len(buf):
                raise ScenarioError(f"tamper offset {offset} outside body")
            buf[idx] ^= mask & 0xFF
        return bytes(buf)

    def _dispatch_deliver(self, data: bytes) -> None:
        header = peek_header(data)
        actor = self._actors.get(header.receiver)
        if actor is None:
            self._record("drop", channel=header.channel.name,
                         msg_type=header.msg_type, note="no such receiver")
            return
        ctx = Ctx(self, actor.name)
        try:
            env = Envelope.from_bytes(data)
        except WireError as exc:
            self._record("reject-parse", channel=header.channel.name,
                         sender=header.sender, receiver=header.receiver,
                         msg_type=header.msg_type, note=str(exc))
            actor.on_malformed(ctx, header)
            return
        env.seq = self._record(
            "deliver",
            channel=header.channel.name, sender=header.sender,
            receiver=header.receiver, msg_type=header.msg_type,
            request_id=header.request_id or None,
            body_digest=digest16(data),
        )
        env.delivered_at = self.now
        actor.on_message(ctx, env)

    # -- main loop ---------------------------------------------------------

    def start(self) -> None:
        """Give every actor its opening move, in registration order."""
        for at, data in sorted(self.adversary.injections, key=lambda p: p[0]):
            self._push(max(at, self.now), "inject", (data,))
        for name in self._order:
            self._actors[name].on_start(Ctx(self, name))

    def run(self, step_budget: Optional[int] = None) -> None:
        """Drain the heap to quiescence; raises if the budget is exceeded."""
        budget = self.step_budget if step_budget is None else step_budget
        while self._heap:
            self._steps += 1
            if self._steps > budget:
                raise StepBudgetExceeded(f"exceeded {budget} events; runaway scenario?")
            at, _tie, kind, payload = heapq.heappop(self._heap)
            self.now = at
            if kind == "send":
                self._dispatch_send(payload[0])
            elif kind == "deliver":
                self._dispatch_deliver(payload[0])
            elif kind == "inject":
                data = payload[0]
                self._record("inject", body_digest=digest16(data))
                self._dispatch_send(data)
            elif kind == "timer":
                actor_name, label, token = payload
                if token in self._cancelled:
                    continue
                actor = self._actors.get(actor_name)
                self._record("timer", receiver=actor_name, note=label)
                if actor is not None:
                    actor.on_timer(Ctx(self, actor_name), label)
            if self.after_event is not None:
                self.after_event(self)

    def run_to_quiescence(self, step_budget: Optional[int] = None) -> None:
        self.start()
        self.run(step_budget)


def run_scenario(actors, adversary: Optional[AdversaryScript] = None,
                 seed: int | str | bytes = 0, **sim_kwargs) -> ProtocolTrace:
    """Run a cast of actors to quiescence and return the trace.

    The cast must include at least one client and one customer bank;
    anything else is a fixture mistake, not a protocol outcome.
    """
    roles = {getattr(a, "role", None) for a in actors}
    if "client" not in roles or "customer-bank" not in roles:
        raise ScenarioError("actor set needs at least one client and a customer bank")
    sim = Simulation(seed=seed, adversary=adversary, **sim_kwargs)
    for actor in actors:
        sim.add_actor(actor)
    sim.run_to_quiescence()
    return sim.trace
