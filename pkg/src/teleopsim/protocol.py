"""Wire protocol: newline-delimited JSON messages over a stream transport.

One UTF-8 JSON object per LF-terminated line, at most ``MAX_FRAME_BYTES``
per frame.  Encoding is canonical (sorted keys, compact separators) so the
same message always produces identical bytes.  Decoding tolerates unknown
fields; unknown message types and missing fields are reported to the sender
without dropping the connection, while malformed JSON closes it.
"""

from __future__ import annotations

import json
import math
from dataclasses import MISSING, dataclass, fields
from typing import Optional

MAX_FRAME_BYTES = 65536
SERVER_VERSION = "teleopsim/0.1"
DEFAULT_PORT = 7450
HANDSHAKE_TIMEOUT_S = 5.0


class ProtocolError(Exception):
    """Decode/encode failure; ``code`` goes out in Error replies."""

    code = "protocol"
    fatal = False  # fatal errors close the connection

    def __init__(self, detail: str = ""):
        self.detail = detail
        super().__init__(f"{self.code}: {detail}" if detail else self.code)


class MalformedJson(ProtocolError):
    code = "malformed_json"
    fatal = True


class UnknownType(ProtocolError):
    code = "unknown_type"


class MissingField(ProtocolError):
    code = "missing_field"


class OversizeFrame(ProtocolError):
    code = "oversize_frame"
    fatal = True


@dataclass(frozen=True)
class Hello:
    client_id: str
    role: str = "operator"


@dataclass(frozen=True)
class HelloAck:
    session_id: str
    server_version: str = SERVER_VERSION


@dataclass(frozen=True)
class PinchStart:
    t_client_ms: int


@dataclass(frozen=True)
class WristSample:
    seq: int
    t_client_ms: int
    x_m: float
    y_m: float
    z_m: float


@dataclass(frozen=True)
class PinchEnd:
    t_client_ms: int
    last_seq: int


@dataclass(frozen=True)
class MoveSummary:
    move_id: int
    n_samples: int
    tip_start_mm: tuple
    tip_end_mm: tuple


@dataclass(frozen=True)
class Validate:
    move_id: int
    accepted: bool


@dataclass(frozen=True)
class StateBroadcast:
    tick: int
    joints_rad: tuple
    tip_mm: tuple
    mode: str
    engaged_client: Optional[str] = None


@dataclass(frozen=True)
class ConfigSet:
    scale: Optional[float] = None
    insert_increment_mm: Optional[float] = None
    insert_velocity_mm_s: Optional[float] = None


@dataclass(frozen=True)
class ApproachTrocar:
    trocar_mm: tuple


@dataclass(frozen=True)
class InsertStep:
    direction: str  # "in" | "out"


@dataclass(frozen=True)
class Error:
    code: str
    detail: str = ""


WireMessage = (
    Hello
    | HelloAck
    | PinchStart
    | WristSample
    | PinchEnd
    | MoveSummary
    | Validate
    | StateBroadcast
    | ConfigSet
    | ApproachTrocar
    | InsertStep
    | Error
)

_TYPE_TAGS: dict[type, str] = {
    Hello: "hello",
    HelloAck: "hello_ack",
    PinchStart: "pinch_start",
    WristSample: "wrist",
    PinchEnd: "pinch_end",
    MoveSummary: "move_summary",
    Validate: "validate",
    StateBroadcast: "state",
    ConfigSet: "config_set",
    ApproachTrocar: "approach",
    InsertStep: "insert",
    Error: "error",
}
_TAG_TYPES = {tag: cls for cls, tag in _TYPE_TAGS.items()}

_VEC_FIELDS = {"tip_start_mm", "tip_end_mm", "tip_mm", "joints_rad", "trocar_mm"}


def _to_jsonable(value):
    if isinstance(value, tuple):
        return [_to_jsonable(v) for v in value]
    if isinstance(value, float) and not math.isfinite(value):
        raise MalformedJson("non-finite number in outbound message")
    return value


def encode(msg: WireMessage) -> bytes:
    """Canonical LF-terminated JSON line for a message, deterministic bytes."""
    tag = _TYPE_TAGS.get(type(msg))
    if tag is None:
        raise UnknownType(f"cannot encode {type(msg).__name__}")
    payload = {"type": tag}
    for f in fields(msg):
        value = getattr(msg, f.name)
        if value is None:
            continue
        payload[f.name] = _to_jsonable(value)
    line = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode() + b"\n"
    if len(line) > MAX_FRAME_BYTES:
        raise OversizeFrame(f"frame is {len(line)} bytes")
    return line


def decode(line: bytes | str) -> WireMessage:
    """Parse one complete frame into a message; extra fields are ignored."""
    if isinstance(line, bytes):
        if len(line) > MAX_FRAME_BYTES:
            raise MalformedJson("frame exceeds size limit")
        try:
            line = line.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedJson(str(exc)) from None
    try:
        raw = json.loads(line)
    except json.JSONDecodeError as exc:
        raise MalformedJson(str(exc)) from None
    if not isinstance(raw, dict):
        raise MalformedJson("frame is not a JSON object")
    tag = raw.get("type")
    if not isinstance(tag, str):
        raise MissingField("frame has no 'type' field")
    cls = _TAG_TYPES.get(tag)
    if cls is None:
        raise UnknownType(f"unknown message type {tag!r}")
    kwargs = {}
    for f in fields(cls):
        if f.name not in raw:
            if f.default is not MISSING:
                kwargs[f.name] = f.default
                continue
            raise MissingField(f"{tag} is missing field {f.name!r}")
        value = raw[f.name]
        if f.name in _VEC_FIELDS:
            if not isinstance(value, list) or not all(
                isinstance(v, (int, float)) and not isinstance(v, bool) for v in value
            ):
                raise MissingField(f"{tag} field {f.name!r} must be a number array")
            value = tuple(value)
        kwargs[f.name] = value
    msg = cls(**kwargs)
    _validate(msg, tag)
    return msg


def _require_number(msg, tag, name):
    value = getattr(msg, name)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise MissingField(f"{tag} field {name!r} must be a number")
    if isinstance(value, float) and not math.isfinite(value):
        raise MissingField(f"{tag} field {name!r} must be finite")


def _validate(msg: WireMessage, tag: str) -> None:
    if isinstance(msg, WristSample):
        for name in ("seq", "t_client_ms", "x_m", "y_m", "z_m"):
            _require_number(msg, tag, name)
        if not isinstance(msg.seq, int) or msg.seq < 0 or msg.seq >= 2**64:
            raise MissingField("wrist field 'seq' must be a u64")
    elif isinstance(msg, (PinchStart, PinchEnd)):
        _require_number(msg, tag, "t_client_ms")
        if isinstance(msg, PinchEnd):
            _require_number(msg, tag, "last_seq")
    elif isinstance(msg, Validate):
        if not isinstance(msg.accepted, bool):
            raise MissingField("validate field 'accepted' must be a bool")
        _require_number(msg, tag, "move_id")
    elif isinstance(msg, Hello):
        if not isinstance(msg.client_id, str) or not msg.client_id:
            raise MissingField("hello field 'client_id' must be a non-empty string")
    elif isinstance(msg, StateBroadcast):
        if len(msg.joints_rad) != 7 or len(msg.tip_mm) != 3:
            raise MissingField("state needs joints_rad[7] and tip_mm[3]")
    elif isinstance(msg, ApproachTrocar):
        if len(msg.trocar_mm) != 3:
            raise MissingField("approach needs trocar_mm[3]")
    elif isinstance(msg, InsertStep):
        if msg.direction not in ("in", "out"):
            raise MissingField("insert field 'direction' must be 'in' or 'out'")
    elif isinstance(msg, ConfigSet):
        for name in ("scale", "insert_increment_mm", "insert_velocity_mm_s"):
            value = getattr(msg, name)
            if value is not None and (
                isinstance(value, bool) or not isinstance(value, (int, float))
            ):
                raise MissingField(f"config_set field {name!r} must be a number")


class StreamDecoder:
    """Reassembles LF-delimited frames from an arbitrary byte stream.

    ``feed`` returns the complete raw lines received so far; a line is only
    yielded once its LF arrives.  The internal buffer is capped at the frame
    size limit.
    """

    def __init__(self):
        self._buf = bytearray()

    def feed(self, data: bytes) -> list[bytes]:
        lines: list[bytes] = []
        self._buf.extend(data)
        while True:
            idx = self._buf.find(b"\n")
            if idx < 0:
                break
            lines.append(bytes(self._buf[: idx + 1]))
            del self._buf[: idx + 1]
        if len(self._buf) > MAX_FRAME_BYTES:
            raise MalformedJson("unterminated frame exceeds size limit")
        return lines

    @property
    def pending_bytes(self) -> int:
        return len(self._buf)
