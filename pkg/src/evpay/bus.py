"""In-process publish/subscribe broker with MQTT topic semantics.

Delivery is synchronous: ``publish`` returns the list of deliveries, in
client-id order, and appends them to the broker's delivery log. Each client
receives a given message at most once however many of its filters match.
"""

from __future__ import annotations

import json
import socketserver
import threading
from dataclasses import dataclass, field

from .errors import DuplicateMessage, MalformedFilter, MalformedTopic


def canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


def parse_topic(topic: str) -> tuple[str, ...]:
    labels = tuple(topic.split("/"))
    if not topic or any(not lab or "+" in lab or "#" in lab for lab in labels):
        raise MalformedTopic(repr(topic))
    return labels


def parse_filter(filt: str) -> tuple[str, ...]:
    labels = tuple(filt.split("/"))
    if not filt:
        raise MalformedFilter("empty filter")
    for i, lab in enumerate(labels):
        if not lab:
            raise MalformedFilter(f"{filt!r}: empty label")
        if lab == "#":
            if i != len(labels) - 1:
                raise MalformedFilter(f"{filt!r}: '#' must be the last label")
        elif lab != "+" and ("+" in lab or "#" in lab):
            raise MalformedFilter(f"{filt!r}: wildcard must fill a whole label")
    return labels


def topic_matches(filt: str, topic: str) -> bool:
    f = parse_filter(filt)
    t = parse_topic(topic)
    for i, lab in enumerate(f):
        if lab == "#":
            return True
        if i >= len(t):
            return False
        if lab != "+" and lab != t[i]:
            return False
    return len(f) == len(t)


@dataclass(frozen=True)
class Message:
    topic: str
    payload: bytes
    publisher: str
    seq: int
    tick: int = 0

    def json(self):
        return json.loads(self.payload)

    def to_record(self) -> dict:
        return {
            "topic": self.topic,
            "publisher": self.publisher,
            "seq": self.seq,
            "payload": self.payload.decode(),
        }


@dataclass(frozen=True)
class Delivery:
    client: str
    message: Message


@dataclass
class Broker:
    subscriptions: dict[str, set[str]] = field(default_factory=dict)
    log: list[Delivery] = field(default_factory=list)
    _seqs: dict[str, int] = field(default_factory=dict)
    _seen: set[tuple[str, int]] = field(default_factory=set)

    def subscribe(self, client: str, filt: str) -> "Broker":
        parse_filter(filt)
        self.subscriptions.setdefault(client, set()).add(filt)
        return self

    def unsubscribe(self, client: str, filt: str | None = None) -> "Broker":
        if filt is None:
            self.subscriptions.pop(client, None)
        else:
            self.subscriptions.get(client, set()).discard(filt)
        return self

    def message(self, publisher: str, topic: str, payload, tick: int = 0) -> Message:
        """Build the next message for ``publisher``; dict payloads become canonical JSON."""
        if not isinstance(payload, bytes):
            payload = canonical_json(payload)
        seq = self._seqs.get(publisher, 0)
        self._seqs[publisher] = seq + 1
        return Message(topic, payload, publisher, seq, tick)

    def publish(self, msg: Message) -> list[Delivery]:
        parse_topic(msg.topic)
        key = (msg.publisher, msg.seq)
        if key in self._seen:
            raise DuplicateMessage(f"{msg.publisher} already published seq {msg.seq}")
        self._seen.add(key)
        self._seqs[msg.publisher] = max(self._seqs.get(msg.publisher, 0), msg.seq + 1)
        out = [
            Delivery(client, msg)
            for client in sorted(self.subscriptions)
            if any(topic_matches(f, msg.topic) for f in self.subscriptions[client])
        ]
        self.log.extend(out)
        return out


class TcpBridge:
    """Debug bridge exposing a broker over TCP.

    Frames are newline-delimited JSON. Clients send
    ``{"op": "sub", "topic": FILTER}`` or ``{"op": "pub", "topic": T, "payload": P}``
    and receive ``{"op": "msg", "topic", "payload", "publisher", "seq"}`` for every
    delivery. Errors come back as ``{"op": "error", "error": TEXT}``.
    """

    def __init__(self, broker: Broker, host: str = "127.0.0.1", port: int = 0):
        self.broker = broker
        self.lock = threading.Lock()
        self.writers: dict[str, socketserver.StreamRequestHandler] = {}
        bridge = self

        class Handler(socketserver.StreamRequestHandler):
            def handle(self):
                client = "tcp:%s:%d" % self.client_address[:2]
                with bridge.lock:
                    bridge.writers[client] = self
                try:
                    for raw in self.rfile:
                        if raw.strip():
                            bridge._frame(client, raw)
                finally:
                    with bridge.lock:
                        bridge.writers.pop(client, None)
                        bridge.broker.unsubscribe(client)

            def send(self, frame: dict):
                self.wfile.write(json.dumps(frame).encode() + b"\n")
                self.wfile.flush()

        class Server(socketserver.ThreadingTCPServer):
            allow_reuse_address = True
            daemon_threads = True

        self.server = Server((host, port), Handler)
        self.address = self.server.server_address
        self._thread: threading.Thread | None = None

    def _frame(self, client: str, raw: bytes) -> None:
        with self.lock:
            writer = self.writers[client]
            try:
                frame = json.loads(raw)
                if frame["op"] == "sub":
                    self.broker.subscribe(client, frame["topic"])
                    writer.send({"op": "suback", "topic": frame["topic"]})
                    return
                if frame["op"] != "pub":
                    raise ValueError(f"unknown op {frame['op']!r}")
                msg = self.broker.message(client, frame["topic"], frame.get("payload"))
                deliveries = self.broker.publish(msg)
            except Exception as exc:  # reported to the client, the bridge keeps serving
                writer.send({"op": "error", "error": str(exc)})
                return
            for d in deliveries:
                target = self.writers.get(d.client)
                if target is not None:
                    target.send({"op": "msg", "topic": d.message.topic,
                                 "payload": d.message.json(),
                                 "publisher": d.message.publisher, "seq": d.message.seq})

    def start(self) -> "TcpBridge":
        self._thread = threading.Thread(target=self.server.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self.server.shutdown()
        self.server.server_close()
