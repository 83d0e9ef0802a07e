"""MTU-bounded framing with fragmentation, stop-and-wait ARQ, and a
deterministic lossy-link simulator.

Frame header, 8 bytes, big-endian:

  byte 0    magic 0xD1
  byte 1    flags: bit0 = ACK, bit1 = last fragment
  bytes 2-3 message_id
  bytes 4-5 frag_index
  bytes 6-7 frag_count

ACK frames carry a 2-byte payload: the acknowledged frag_index. Data payload
capacity is mtu - 8. Timeouts run on simulated ticks, never wall clock, so a
fixed seed reproduces a run frame for frame.
"""

from __future__ import annotations

import heapq
import math
import struct
from collections import deque
from dataclasses import dataclass, field, replace
from random import Random
from typing import Iterable

MAGIC = 0xD1
HEADER_LEN = 8
FLAG_ACK = 0x01
FLAG_LAST = 0x02

RETRY_LIMIT = 8          # retransmissions per fragment before giving up
ACK_TIMEOUT_TICKS = 8    # transit is 1 tick each way, reorder adds up to 2

_HEADER = struct.Struct(">BBHHH")


class TransportError(Exception):
    pass


class FrameError(TransportError):
    """Frame bytes that do not decode or do not belong together."""


class DeliveryError(TransportError):
    """Retry budget exhausted on a lossy link."""


@dataclass(frozen=True)
class Frame:
    flags: int
    message_id: int
    frag_index: int
    frag_count: int
    payload: bytes

    @property
    def is_ack(self) -> bool:
        return bool(self.flags & FLAG_ACK)

    @property
    def is_last(self) -> bool:
        return bool(self.flags & FLAG_LAST)

    def encode(self) -> bytes:
        return _HEADER.pack(
            MAGIC, self.flags, self.message_id, self.frag_index, self.frag_count
        ) + self.payload

    @classmethod
    def decode(cls, raw: bytes) -> "Frame":
        if len(raw) < HEADER_LEN:
            raise FrameError(f"frame shorter than header: {len(raw)} bytes")
        magic, flags, message_id, frag_index, frag_count = _HEADER.unpack_from(raw)
        if magic != MAGIC:
            raise FrameError(f"bad magic 0x{magic:02x}")
        if frag_index >= frag_count:
            raise FrameError(f"frag_index {frag_index} >= frag_count {frag_count}")
        return cls(
            flags=flags,
            message_id=message_id,
            frag_index=frag_index,
            frag_count=frag_count,
            payload=raw[HEADER_LEN:],
        )


def make_ack(message_id: int, frag_index: int) -> Frame:
    return Frame(
        flags=FLAG_ACK,
        message_id=message_id,
        frag_index=frag_index,
        frag_count=frag_index + 1,
        payload=struct.pack(">H", frag_index),
    )


def fragment(message: bytes, mtu: int, message_id: int) -> list[Frame]:
    """Split a message into ceil(len / (mtu - 8)) frames, last one flagged."""
    if mtu <= HEADER_LEN:
        raise TransportError(f"mtu must exceed the {HEADER_LEN}-byte header")
    if not message:
        raise TransportError("cannot fragment an empty message")
    capacity = mtu - HEADER_LEN
    count = math.ceil(len(message) / capacity)
    if count > 0xFFFF:
        raise TransportError(
            f"message needs {count} fragments; the header field allows 65535"
        )
    frames = []
    for index in range(count):
        chunk = message[index * capacity : (index + 1) * capacity]
        flags = FLAG_LAST if index == count - 1 else 0
        frames.append(
            Frame(
                flags=flags,
                message_id=message_id,
                frag_index=index,
                frag_count=count,
                payload=chunk,
            )
        )
    return frames


def reassemble(frames: Iterable[Frame]) -> bytes | None:
    """Rebuild one message; order-insensitive, duplicates ignored.

    Returns None while fragments are missing. Frames must agree on
    message_id and frag_count.
    """
    by_index: dict[int, bytes] = {}
    message_id: int | None = None
    frag_count: int | None = None
    for frame in frames:
        if frame.is_ack:
            raise FrameError("ACK frame in reassembly input")
        if message_id is None:
            message_id, frag_count = frame.message_id, frame.frag_count
        elif frame.message_id != message_id:
            raise FrameError(f"mixed message ids {message_id} and {frame.message_id}")
        elif frame.frag_count != frag_count:
            raise FrameError(f"inconsistent frag_count for message {message_id}")
        existing = by_index.get(frame.frag_index)
        if existing is not None and existing != frame.payload:
            raise FrameError(f"conflicting payloads for fragment {frame.frag_index}")
        by_index[frame.frag_index] = frame.payload
    if frag_count is None or len(by_index) < frag_count:
        return None
    return b"".join(by_index[i] for i in range(frag_count))


class Codec:
    """Pluggable payload codec; the default is the identity transform."""

    def compress(self, data: bytes) -> bytes:
        return data

    def decompress(self, data: bytes) -> bytes:
        return data


IDENTITY_CODEC = Codec()


# ---------------------------------------------------------------------------
# Simulated links
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LinkProfile:
    name: str
    mtu: int
    loss_probability: float = 0.0
    reorder_probability: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.mtu <= HEADER_LEN:
            raise TransportError(f"mtu must exceed {HEADER_LEN}")


PROFILES = {
    "lora": LinkProfile(name="lora", mtu=222),
    "ble": LinkProfile(name="ble", mtu=244),
    "lossless": LinkProfile(name="lossless", mtu=65535),
}


@dataclass(frozen=True)
class TraceEntry:
    tick: int
    src: str
    dst: str
    kind: str  # "data" | "ack"
    message_id: int
    frag_index: int
    frag_count: int
    length: int
    dropped: bool

    def line(self) -> str:
        return (
            f"t={self.tick} dir={self.src}→{self.dst} type={self.kind} "
            f"id={self.message_id} idx={self.frag_index}/{self.frag_count} "
            f"len={self.length} dropped={str(self.dropped).lower()}"
        )


@dataclass
class DeliveryReport:
    frames_sent: int = 0
    retransmissions: int = 0
    round_trips: int = 0
    fragments: int = 0

    def merge(self, other: "DeliveryReport") -> None:
        self.frames_sent += other.frames_sent
        self.retransmissions += other.retransmissions
        self.round_trips += other.round_trips
        self.fragments += other.fragments


class SimLink:
    """Two endpoints joined by a lossy, possibly reordering pipe.

    Single-threaded: time advances only through tick(), which delivers due
    frames to the attached endpoint handlers. Every transmitted frame is
    bounds-checked against the MTU and logged to the trace, dropped or not.
    """

    def __init__(self, profile: LinkProfile, a: str = "A", b: str = "B"):
        self.profile = profile
        self.endpoints = (a, b)
        self.now = 0
        self.trace: list[TraceEntry] = []
        self._rng = Random(profile.seed)
        self._pending: list[tuple[int, int, str, bytes]] = []
        self._sequence = 0
        self._handlers: dict[str, "Messenger"] = {}
        self._next_message_id = 0

    def attach(self, endpoint: str, handler: "Messenger") -> None:
        if endpoint not in self.endpoints:
            raise TransportError(f"unknown endpoint {endpoint!r}")
        self._handlers[endpoint] = handler

    def allocate_message_id(self) -> int:
        self._next_message_id = (self._next_message_id + 1) % 0x10000
        return self._next_message_id

    def other_end(self, endpoint: str) -> str:
        a, b = self.endpoints
        if endpoint == a:
            return b
        if endpoint == b:
            return a
        raise TransportError(f"unknown endpoint {endpoint!r}")

    def transmit(self, src: str, frame: Frame) -> None:
        raw = frame.encode()
        if len(raw) > self.profile.mtu:
            raise TransportError(
                f"frame of {len(raw)} bytes exceeds mtu {self.profile.mtu}"
            )
        dst = self.other_end(src)
        dropped = self._rng.random() < self.profile.loss_probability
        delay = 1
        if not dropped and self._rng.random() < self.profile.reorder_probability:
            delay += 2
        self.trace.append(
            TraceEntry(
                tick=self.now,
                src=src,
                dst=dst,
                kind="ack" if frame.is_ack else "data",
                message_id=frame.message_id,
                frag_index=frame.frag_index,
                frag_count=frame.frag_count,
                length=len(raw),
                dropped=dropped,
            )
        )
        if dropped:
            return
        self._sequence += 1
        heapq.heappush(self._pending, (self.now + delay, self._sequence, dst, raw))

    def tick(self) -> None:
        """Advance one tick and hand due frames to their endpoint handlers."""
        self.now += 1
        while self._pending and self._pending[0][0] <= self.now:
            _, _, dst, raw = heapq.heappop(self._pending)
            handler = self._handlers.get(dst)
            if handler is not None:
                handler.handle_frame(Frame.decode(raw))

    def bytes_on_wire(self) -> int:
        return sum(entry.length for entry in self.trace)

    def trace_lines(self) -> list[str]:
        return [entry.line() for entry in self.trace]


def make_link(
    profile: str | LinkProfile,
    a: str = "A",
    b: str = "B",
    loss: float | None = None,
    reorder: float | None = None,
    seed: int | None = None,
) -> SimLink:
    if isinstance(profile, str):
        try:
            profile = PROFILES[profile]
        except KeyError:
            raise TransportError(
                f"unknown link profile {profile!r}; have {sorted(PROFILES)}"
            ) from None
    overrides = {}
    if loss is not None:
        overrides["loss_probability"] = loss
    if reorder is not None:
        overrides["reorder_probability"] = reorder
    if seed is not None:
        overrides["seed"] = seed
    if overrides:
        profile = replace(profile, **overrides)
    return SimLink(profile, a=a, b=b)


@dataclass
class _ReceiveState:
    frag_count: int
    fragments: dict[int, bytes] = field(default_factory=dict)
    delivered: bool = False


class Messenger:
    """Reliable message endpoint over a SimLink: stop-and-wait per fragment.

    send() drives the simulation until its message is fully acknowledged.
    The peer's Messenger, attached to the same link, acknowledges data frames
    as they arrive; completed messages queue up behind receive().
    """

    def __init__(self, link: SimLink, endpoint: str, codec: Codec = IDENTITY_CODEC):
        self.link = link
        self.endpoint = endpoint
        self.codec = codec
        self._receiving: dict[int, _ReceiveState] = {}
        self._acked: dict[int, set[int]] = {}
        self._received: deque[bytes] = deque()
        link.attach(endpoint, self)

    def send(self, message: bytes, message_id: int | None = None) -> DeliveryReport:
        if message_id is None:
            message_id = self.link.allocate_message_id()
        frames = fragment(
            self.codec.compress(message), self.link.profile.mtu, message_id
        )
        report = DeliveryReport(fragments=len(frames))
        for frame in frames:
            attempts = 0
            while True:
                self.link.transmit(self.endpoint, frame)
                report.frames_sent += 1
                report.round_trips += 1
                if attempts > 0:
                    report.retransmissions += 1
                if self._await_ack(frame.message_id, frame.frag_index):
                    break
                attempts += 1
                if attempts > RETRY_LIMIT:
                    raise DeliveryError(
                        f"fragment {frame.frag_index} of message {message_id} "
                        f"unacknowledged after {RETRY_LIMIT} retries"
                    )
        return report

    def _await_ack(self, message_id: int, frag_index: int) -> bool:
        deadline = self.link.now + ACK_TIMEOUT_TICKS
        while self.link.now < deadline:
            self.link.tick()
            if frag_index in self._acked.get(message_id, ()):
                return True
        return False

    def handle_frame(self, frame: Frame) -> None:
        if frame.is_ack:
            acked = struct.unpack(">H", frame.payload)[0]
            self._acked.setdefault(frame.message_id, set()).add(acked)
            return
        # Duplicate data (a lost ACK) is re-acknowledged, never re-delivered.
        self.link.transmit(self.endpoint, make_ack(frame.message_id, frame.frag_index))
        state = self._receiving.setdefault(
            frame.message_id, _ReceiveState(frag_count=frame.frag_count)
        )
        if state.delivered:
            return
        if frame.frag_count != state.frag_count:
            raise FrameError(f"inconsistent frag_count for message {frame.message_id}")
        state.fragments.setdefault(frame.frag_index, frame.payload)
        if len(state.fragments) == state.frag_count:
            message = b"".join(state.fragments[i] for i in range(state.frag_count))
            self._received.append(self.codec.decompress(message))
            state.delivered = True
            state.fragments.clear()

    def receive(self) -> bytes | None:
        if self._received:
            return self._received.popleft()
        return None


def send_reliable(
    link: SimLink, endpoint_pair: tuple[str, str], message: bytes
) -> DeliveryReport:
    """One-shot reliable transfer between two endpoints of a link."""
    src, dst = endpoint_pair
    sender = link._handlers.get(src) or Messenger(link, src)
    if dst not in link._handlers:
        Messenger(link, dst)
    return sender.send(message)
