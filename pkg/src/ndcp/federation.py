"""Source nodes and a coordinator exchanging newline-delimited JSON.

The message schema is closed: a message carries a query object's features
or a pair of p-values, never training rows or labels, and any unknown field
is rejected on decode. Channels are neither authenticated nor encrypted;
the guarantee is data minimisation only.

Per-query randomness at a source is keyed by the request id, so a source
answering request ``r`` computes exactly ``tcp_predict(data, x, cfg, index=r)``.
"""

from __future__ import annotations

import json
import logging
import selectors
import socket
import socketserver
import threading
import time
from dataclasses import dataclass, field, fields
from typing import ClassVar, Sequence, Union

import numpy as np

from .aggregate import aggregate_pvalues
from .conformal import PValuePair, TcpConfig, tcp_predict
from .dataset import Dataset
from .errors import (
    BindFailure,
    DimensionMismatch,
    InvalidMessage,
    MalformedJson,
    ProtocolError,
    SourceError,
    SourceTimeout,
)

log = logging.getLogger(__name__)

PROTOCOL_VERSION = 1
DEFAULT_TIMEOUT_MS = 60_000
_U64_MAX = (1 << 64) - 1


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_real(v) -> bool:
    return (isinstance(v, (int, float)) and not isinstance(v, bool)) or isinstance(v, np.floating)


@dataclass(frozen=True)
class Hello:
    type: ClassVar[str] = "hello"
    protocol_version: int = PROTOCOL_VERSION


@dataclass(frozen=True)
class HelloAck:
    type: ClassVar[str] = "hello_ack"
    feature_dim: int


@dataclass(frozen=True)
class PredictRequest:
    type: ClassVar[str] = "predict_request"
    request_id: int
    features: tuple[float, ...]

    def __post_init__(self):
        if not isinstance(self.features, (list, tuple, np.ndarray)):
            raise InvalidMessage("features must be a sequence of reals")
        if not all(_is_real(v) for v in self.features):
            raise InvalidMessage("features must be a sequence of reals")
        object.__setattr__(self, "features", tuple(float(v) for v in self.features))


@dataclass(frozen=True)
class PredictResponse:
    type: ClassVar[str] = "predict_response"
    request_id: int
    p0: float
    p1: float


@dataclass(frozen=True)
class ErrorMessage:
    """``request_id`` is omitted for errors not tied to a request."""

    type: ClassVar[str] = "error"
    message: str
    request_id: int | None = None


@dataclass(frozen=True)
class Shutdown:
    type: ClassVar[str] = "shutdown"


WireMessage = Union[Hello, HelloAck, PredictRequest, PredictResponse, ErrorMessage, Shutdown]

MESSAGE_TYPES: dict[str, type] = {
    cls.type: cls for cls in (Hello, HelloAck, PredictRequest, PredictResponse, ErrorMessage, Shutdown)
}
# field name -> validator; ErrorMessage.request_id is the one optional field
_VALIDATORS = {
    "protocol_version": _is_int,
    "feature_dim": lambda v: _is_int(v) and v >= 0,
    "request_id": lambda v: _is_int(v) and 0 <= v <= _U64_MAX,
    "features": lambda v: isinstance(v, (list, tuple)) and all(_is_real(x) for x in v),
    "p0": _is_real,
    "p1": _is_real,
    "message": lambda v: isinstance(v, str),
}
_OPTIONAL = {("error", "request_id")}


def _check_fields(kind: str, payload: dict, exc: type[Exception]) -> None:
    for name, value in payload.items():
        if name == "type":
            continue
        if value is None and (kind, name) in _OPTIONAL:
            continue
        if not _VALIDATORS[name](value):
            raise exc(f"{kind}: invalid value for {name!r}")


def encode_message(msg: WireMessage) -> bytes:
    """One compact JSON object terminated by ``\\n``, ``type`` first."""
    if type(msg) not in MESSAGE_TYPES.values():
        raise InvalidMessage(f"not a wire message: {type(msg).__name__}")
    payload = {"type": msg.type}
    for f in fields(msg):
        value = getattr(msg, f.name)
        if value is None and (msg.type, f.name) in _OPTIONAL:
            continue
        payload[f.name] = list(value) if f.name == "features" else value
    _check_fields(msg.type, payload, InvalidMessage)
    try:
        text = json.dumps(payload, separators=(",", ":"), allow_nan=False, ensure_ascii=False)
    except (TypeError, ValueError) as exc:
        raise InvalidMessage(str(exc)) from None
    return text.encode("utf-8") + b"\n"


def decode_message(line: bytes) -> WireMessage:
    """Parse one line; unknown types and unknown or missing fields are protocol errors."""
    if line.endswith(b"\n"):
        line = line[:-1]
    if b"\n" in line:
        raise ProtocolError("more than one line")
    try:
        payload = json.loads(line.decode("utf-8"), parse_constant=_reject_constant)
    except (UnicodeDecodeError, json.JSONDecodeError, ValueError) as exc:
        raise MalformedJson(f"malformed message: {exc}") from None
    if not isinstance(payload, dict):
        raise ProtocolError("message must be a JSON object")
    kind = payload.get("type")
    cls = MESSAGE_TYPES.get(kind) if isinstance(kind, str) else None
    if cls is None:
        raise ProtocolError(f"unknown message type {kind!r}")
    names = {f.name for f in fields(cls)}
    given = set(payload) - {"type"}
    extra = given - names
    if extra:
        raise ProtocolError(f"{kind}: unexpected field(s) {sorted(extra)}")
    missing = {n for n in names - given if (kind, n) not in _OPTIONAL}
    if missing:
        raise ProtocolError(f"{kind}: missing field(s) {sorted(missing)}")
    _check_fields(kind, payload, ProtocolError)
    kwargs = {k: v for k, v in payload.items() if k != "type"}
    for k in ("p0", "p1"):
        if k in kwargs:
            kwargs[k] = float(kwargs[k])
    return cls(**kwargs)


def _reject_constant(name):
    raise ValueError(f"non-finite number {name}")


# ---------------------------------------------------------------------------
# source node


@dataclass(eq=False)
class SourceNodeState:
    dataset: Dataset = field(repr=False)
    tcp_config: TcpConfig = field(default_factory=TcpConfig)
    listen_address: tuple[str, int] = ("127.0.0.1", 0)


class _SourceHandler(socketserver.StreamRequestHandler):
    def handle(self):
        node: SourceNode = self.server.node  # type: ignore[attr-defined]
        for line in self.rfile:
            node.record("in", line)
            try:
                msg = decode_message(line)
            except ProtocolError as exc:
                self._send(ErrorMessage(str(exc)))
                continue
            if isinstance(msg, Shutdown):
                node.request_stop()
                return
            self._send(node.respond(msg))

    def _send(self, msg: WireMessage) -> None:
        data = encode_message(msg)
        self.server.node.record("out", data)  # type: ignore[attr-defined]
        self.wfile.write(data)
        self.wfile.flush()


class _Server(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True


class SourceNode:
    """A data holder answering p-value queries over its private dataset."""

    def __init__(self, state: SourceNodeState, record_transcript: bool = False):
        self.state = state
        self.transcript: list[tuple[str, bytes]] | None = [] if record_transcript else None
        self._lock = threading.Lock()
        try:
            self._server = _Server(state.listen_address, _SourceHandler)
        except OSError as exc:
            raise BindFailure(f"cannot bind {state.listen_address}: {exc}") from exc
        self._server.node = self  # type: ignore[attr-defined]
        self._thread: threading.Thread | None = None

    @property
    def address(self) -> tuple[str, int]:
        host, port = self._server.server_address[:2]
        return host, port

    def record(self, direction: str, data: bytes) -> None:
        if self.transcript is not None:
            with self._lock:
                self.transcript.append((direction, data))

    def respond(self, msg: WireMessage) -> WireMessage:
        data = self.state.dataset
        if isinstance(msg, Hello):
            if msg.protocol_version != PROTOCOL_VERSION:
                return ErrorMessage(f"unsupported protocol version {msg.protocol_version}")
            return HelloAck(data.p)
        if isinstance(msg, PredictRequest):
            if len(msg.features) != data.p:
                return ErrorMessage(f"expected {data.p} features, got {len(msg.features)}", msg.request_id)
            try:
                p = tcp_predict(data, np.array(msg.features), self.state.tcp_config, msg.request_id)
            except Exception as exc:  # reported to the coordinator, node keeps serving
                log.exception("request %d failed", msg.request_id)
                return ErrorMessage(f"{type(exc).__name__}: {exc}", msg.request_id)
            return PredictResponse(msg.request_id, p.p0, p.p1)
        return ErrorMessage(f"unexpected message type {msg.type!r}")

    def serve_forever(self) -> None:
        try:
            self._server.serve_forever(poll_interval=0.05)
        finally:
            self._server.server_close()

    def start(self) -> "SourceNode":
        self._thread = threading.Thread(target=self.serve_forever, daemon=True)
        self._thread.start()
        return self

    def request_stop(self) -> None:
        threading.Thread(target=self._server.shutdown, daemon=True).start()

    def stop(self) -> None:
        self._server.shutdown()
        if self._thread is not None:
            self._thread.join()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()


def serve_source(state: SourceNodeState) -> None:
    """Serve until a coordinator sends ``shutdown``."""
    node = SourceNode(state)
    log.info("source listening on %s:%d", *node.address)
    node.serve_forever()


# ---------------------------------------------------------------------------
# coordinator


def parse_address(text: str) -> tuple[str, int]:
    host, sep, port = text.strip().rpartition(":")
    if not sep or not host:
        raise ValueError(f"expected host:port, got {text!r}")
    return host, int(port)


class _Connection:
    def __init__(self, name: str, sock: socket.socket):
        self.name = name
        self.sock = sock
        self.buffer = b""
        self.closed = False

    def lines(self) -> list[bytes]:
        chunk = self.sock.recv(65536)
        if not chunk:
            self.closed = True
            return []
        self.buffer += chunk
        *complete, self.buffer = self.buffer.split(b"\n")
        return [c + b"\n" for c in complete]


class Coordinator:
    """Location that fans queries out to every source and averages the answers.

    Request ids are assigned here, starting at ``first_request_id`` and
    increasing by one per query.
    """

    def __init__(self, source_addresses: Sequence[tuple[str, int] | str], timeout_ms: int = DEFAULT_TIMEOUT_MS,
                 first_request_id: int = 0, record_transcript: bool = False):
        self.source_addresses = [parse_address(a) if isinstance(a, str) else tuple(a) for a in source_addresses]
        if not self.source_addresses:
            raise ValueError("at least one source is required")
        self.timeout_ms = timeout_ms
        self.next_request_id = first_request_id
        self.issued: set[int] = set()
        self.transcript: list[tuple[str, str, bytes]] | None = [] if record_transcript else None
        self.feature_dim: int | None = None
        self._conns: list[_Connection] = []
        self._selector = selectors.DefaultSelector()

    def _name(self, i: int) -> str:
        host, port = self.source_addresses[i]
        return f"{host}:{port}"

    def _send(self, i: int, msg: WireMessage) -> None:
        data = encode_message(msg)
        if self.transcript is not None:
            self.transcript.append(("out", self._name(i), data))
        self._conns[i].sock.sendall(data)

    def connect(self) -> int:
        """Open connections and run the hello handshake; returns the shared feature dimension."""
        for i, addr in enumerate(self.source_addresses):
            sock = socket.create_connection(addr, timeout=self.timeout_ms / 1000)
            sock.setblocking(False)
            conn = _Connection(self._name(i), sock)
            self._conns.append(conn)
            self._selector.register(sock, selectors.EVENT_READ, i)
        for i in range(len(self._conns)):
            self._send(i, Hello())
        acks = self._collect(lambda m: isinstance(m, HelloAck), "handshake")
        dims = [m.feature_dim for m in acks]
        if len(set(dims)) != 1:
            raise DimensionMismatch(f"sources report different feature dimensions: {dims}")
        self.feature_dim = dims[0]
        return self.feature_dim

    def _collect(self, accept, context: str, request_id: int | None = None) -> list:
        """Wait for one accepted message per source, in source order."""
        k = len(self._conns)
        got: list = [None] * k
        deadline = time.monotonic() + self.timeout_ms / 1000
        while any(g is None for g in got):
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise SourceTimeout([self._name(i) for i in range(k) if got[i] is None])
            for key, _ in self._selector.select(timeout=remaining):
                i = key.data
                conn = self._conns[i]
                for line in conn.lines():
                    if self.transcript is not None:
                        self.transcript.append(("in", conn.name, line))
                    msg = decode_message(line)
                    if isinstance(msg, ErrorMessage):
                        if msg.request_id is None or msg.request_id == request_id:
                            raise SourceError(conn.name, msg.message)
                        continue  # error for an abandoned request
                    if isinstance(msg, PredictResponse):
                        if msg.request_id not in self.issued:
                            raise ProtocolError(f"{conn.name}: response to unknown request {msg.request_id}")
                        if msg.request_id != request_id:
                            continue  # late answer to a timed-out request
                    if not accept(msg):
                        raise ProtocolError(f"{conn.name}: unexpected {msg.type} during {context}")
                    if got[i] is not None:
                        raise ProtocolError(f"{conn.name}: duplicate reply during {context}")
                    got[i] = msg
                if conn.closed and got[i] is None:
                    self._selector.unregister(conn.sock)
                    raise SourceError(conn.name, "connection closed")
        return got

    def source_pvalues(self, x_new) -> list[PValuePair]:
        if self.feature_dim is None:
            self.connect()
        x = np.asarray(x_new, dtype=np.float64)
        if x.ndim != 1 or x.shape[0] != self.feature_dim:
            raise DimensionMismatch(f"query has shape {x.shape}, sources expect {self.feature_dim} features")
        rid = self.next_request_id
        self.next_request_id += 1
        self.issued.add(rid)
        for i in range(len(self._conns)):
            self._send(i, PredictRequest(rid, x.tolist()))
        replies = self._collect(lambda m: isinstance(m, PredictResponse), "prediction", rid)
        return [PValuePair(m.p0, m.p1) for m in replies]

    def predict(self, x_new) -> PValuePair:
        return aggregate_pvalues(self.source_pvalues(x_new))

    def predict_many(self, X) -> list[PValuePair]:
        return [self.predict(x) for x in np.asarray(X, dtype=np.float64)]

    def shutdown_sources(self) -> None:
        for i, conn in enumerate(self._conns):
            if not conn.closed:
                try:
                    self._send(i, Shutdown())
                except OSError:
                    pass

    def close(self) -> None:
        for conn in self._conns:
            try:
                self._selector.unregister(conn.sock)
            except (KeyError, ValueError):
                pass
            conn.sock.close()
        self._conns = []
        self._selector.close()

    def __enter__(self):
        self.connect()
        return self

    def __exit__(self, *exc):
        self.close()


def coordinate_predict(coordinator: Coordinator, x_new) -> PValuePair:
    return coordinator.predict(x_new)
