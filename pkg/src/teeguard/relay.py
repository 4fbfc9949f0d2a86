"""Policy filtering and the outbound relay.

The trusted side never touches a socket.  It frames payloads, hands them to a
normal-world supplicant over an RPC boundary, and books exactly one world
switch in each direction per send, whatever the transport does.  Dropped
payloads never reach the supplicant at all.
"""

from __future__ import annotations

import socket
import struct
import threading
from dataclasses import dataclass, field
from enum import Enum

from .tee import World, WorldContext
from .words import Label, split_words

FRAME_MAGIC = b"TGR1"
ACK_MAGIC = b"TGA1"
ACK_OK = 0
ACK_MALFORMED = 1
FLAG_MASKED = 0x1
SEQUENCE_LIMIT = 1 << 32

FRAME_HEADER = struct.Struct("<4sIII")  # magic, sequence, flags, payload length
_ACK = struct.Struct("<4sII")  # magic, sequence, status


class FrameError(ValueError):
    pass


class ConnectError(ConnectionError):
    pass


class NotConnected(ConnectionError):
    pass


class TransportError(ConnectionError):
    pass


@dataclass(frozen=True)
class RelayPacket:
    sequence: int
    flags: int
    payload: bytes

    def __post_init__(self) -> None:
        if not 0 <= self.sequence < SEQUENCE_LIMIT:
            raise ValueError("sequence outside u32 range")
        if not 0 <= self.flags < SEQUENCE_LIMIT:
            raise ValueError("flags outside u32 range")
        if len(self.payload) >= SEQUENCE_LIMIT:
            raise ValueError("payload too long for the frame header")


def encode_frame(packet: RelayPacket) -> bytes:
    header = FRAME_HEADER.pack(FRAME_MAGIC, packet.sequence, packet.flags, len(packet.payload))
    return header + packet.payload


def decode_frame(buf: bytes) -> RelayPacket:
    if len(buf) < FRAME_HEADER.size:
        raise FrameError("frame shorter than its header")
    magic, sequence, flags, length = FRAME_HEADER.unpack_from(buf)
    if magic != FRAME_MAGIC:
        raise FrameError(f"bad frame magic {magic!r}")
    if len(buf) != FRAME_HEADER.size + length:
        raise FrameError("frame length field disagrees with the payload")
    return RelayPacket(sequence=sequence, flags=flags, payload=buf[FRAME_HEADER.size:])


def encode_ack(sequence: int, status: int) -> bytes:
    return _ACK.pack(ACK_MAGIC, sequence, status)


def decode_ack(buf: bytes) -> tuple[int, int]:
    if len(buf) != _ACK.size:
        raise FrameError(f"acknowledgement must be {_ACK.size} bytes")
    magic, sequence, status = _ACK.unpack(buf)
    if magic != ACK_MAGIC:
        raise FrameError(f"bad acknowledgement magic {magic!r}")
    return sequence, status


# ---------------------------------------------------------------------------
# Filtering
# ---------------------------------------------------------------------------


class FilterAction(Enum):
    DROP = "drop"
    MASK = "mask"


@dataclass(frozen=True)
class FilterPolicy:
    threshold: float = 0.5
    action: FilterAction = FilterAction.DROP
    mask_token: str = "[redacted]"

    def __post_init__(self) -> None:
        if not 0.0 < self.threshold < 1.0:
            raise ValueError("threshold must lie strictly between 0 and 1")
        if not self.mask_token:
            raise ValueError("mask_token must be non-empty")


@dataclass(frozen=True)
class FilterDecision:
    forward: bool
    text: str
    flags: int
    redacted: bool

    @property
    def action(self) -> str:
        if not self.forward:
            return "drop"
        return "mask" if self.redacted else "forward"


def apply_policy(policy: FilterPolicy, label: Label, text: str) -> FilterDecision:
    """Benign text passes untouched.  Sensitive text is either dropped whole
    or masked word for word, with the masked flag set on the frame."""
    if label is Label.BENIGN:
        return FilterDecision(forward=True, text=text, flags=0, redacted=False)
    if policy.action is FilterAction.DROP:
        return FilterDecision(forward=False, text="", flags=0, redacted=True)
    masked = " ".join([policy.mask_token] * len(split_words(text)))
    return FilterDecision(forward=True, text=masked, flags=FLAG_MASKED, redacted=True)


# ---------------------------------------------------------------------------
# Normal-world supplicant and its transports
# ---------------------------------------------------------------------------


class SupplicantOp(Enum):
    CONNECT = "connect"
    SEND = "send"
    CLOSE = "close"


@dataclass(frozen=True)
class SupplicantRequest:
    op: SupplicantOp
    endpoint: tuple[str, int] | None = None
    payload: bytes = b""


class TcpTransport:
    """Blocking TCP client; one acknowledgement read per frame sent."""

    def __init__(self, timeout: float = 10.0):
        self._sock: socket.socket | None = None
        self._timeout = timeout

    def connect(self, endpoint: tuple[str, int]) -> None:
        try:
            self._sock = socket.create_connection(endpoint, timeout=self._timeout)
        except OSError as exc:
            raise ConnectError(f"cannot reach {endpoint[0]}:{endpoint[1]}: {exc}") from None

    def exchange(self, frame: bytes) -> bytes:
        if self._sock is None:
            raise TransportError("transport is not connected")
        try:
            self._sock.sendall(frame)
            buf = b""
            while len(buf) < _ACK.size:
                chunk = self._sock.recv(_ACK.size - len(buf))
                if not chunk:
                    raise TransportError("peer closed before acknowledging")
                buf += chunk
        except OSError as exc:
            raise TransportError(str(exc)) from None
        return buf

    def close(self) -> None:
        if self._sock is not None:
            self._sock.close()
            self._sock = None


class RecordingTransport:
    """In-process peer for tests: parses frames the way the real endpoint
    does, remembers everything, and acknowledges."""

    def __init__(self):
        self.connected = False
        self.endpoint: tuple[str, int] | None = None
        self.sent: list[bytes] = []
        self.packets: list[RelayPacket] = []

    def connect(self, endpoint: tuple[str, int]) -> None:
        self.connected = True
        self.endpoint = endpoint

    def exchange(self, frame: bytes) -> bytes:
        if not self.connected:
            raise TransportError("transport is not connected")
        self.sent.append(frame)
        try:
            packet = decode_frame(frame)
        except FrameError:
            return encode_ack(0, ACK_MALFORMED)
        self.packets.append(packet)
        return encode_ack(packet.sequence, ACK_OK)

    def close(self) -> None:
        self.connected = False


class Supplicant:
    """Normal-world RPC agent owning the transport on the relay's behalf."""

    def __init__(self, transport):
        self._transport = transport
        self.requests: list[SupplicantRequest] = []

    def handle(self, request: SupplicantRequest) -> bytes:
        self.requests.append(request)
        if request.op is SupplicantOp.CONNECT:
            if request.endpoint is None:
                raise ConnectError("connect request without an endpoint")
            self._transport.connect(request.endpoint)
            return b""
        if request.op is SupplicantOp.SEND:
            return self._transport.exchange(request.payload)
        self._transport.close()
        return b""


# ---------------------------------------------------------------------------
# Secure-world channel
# ---------------------------------------------------------------------------


class SecureChannel:
    """Framing, sequencing and switch accounting for the trusted sender.

    Connection setup and teardown run while the device is still in the
    normal world, so only `send` touches the switch counters.
    """

    def __init__(self, supplicant: Supplicant):
        self._supplicant = supplicant
        self._connected = False
        self._next_sequence = 0
        self._lock = threading.Lock()

    @property
    def connected(self) -> bool:
        return self._connected

    def connect(self, endpoint: tuple[str, int]) -> None:
        self._supplicant.handle(SupplicantRequest(SupplicantOp.CONNECT, endpoint=endpoint))
        self._connected = True

    def close(self) -> None:
        if self._connected:
            self._supplicant.handle(SupplicantRequest(SupplicantOp.CLOSE))
            self._connected = False

    def next_sequence(self) -> int:
        """Sequence numbers are handed out once and never reused."""
        with self._lock:
            if self._next_sequence >= SEQUENCE_LIMIT:
                raise RuntimeError("sequence space exhausted")
            value = self._next_sequence
            self._next_sequence += 1
            return value

    def send(self, packet: RelayPacket, ctx: WorldContext) -> int:
        """Relay one frame and return the peer's status code.

        Costs exactly two world switches: out to the normal world for the
        RPC, back to the secure world afterwards, error or not.
        """
        if not self._connected:
            raise NotConnected("channel has no open connection")
        frame = encode_frame(packet)
        ctx.world_switch(World.NORMAL)
        try:
            raw = self._supplicant.handle(
                SupplicantRequest(SupplicantOp.SEND, payload=frame)
            )
            try:
                sequence, status = decode_ack(raw)
            except FrameError as exc:
                raise TransportError(f"unreadable acknowledgement: {exc}") from None
        finally:
            ctx.world_switch(World.SECURE)
        if sequence != packet.sequence and status == ACK_OK:
            raise TransportError(
                f"acknowledgement for sequence {sequence}, expected {packet.sequence}"
            )
        return status


# ---------------------------------------------------------------------------
# Audit log
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RedactionRecord:
    sequence: int | None  # None when the payload was dropped unsent
    score: float
    label: Label
    action: str


@dataclass
class RedactionLog:
    records: list[RedactionRecord] = field(default_factory=list)

    def append(self, record: RedactionRecord) -> None:
        self.records.append(record)

    def render(self) -> str:
        lines = []
        for r in self.records:
            seq = "-" if r.sequence is None else str(r.sequence)
            lines.append(f"{seq} {r.score:.4f} {r.label.value} {r.action}")
        return "\n".join(lines)
