"""Line-delimited JSON scoring protocol over TCP.

One JSON object per line, UTF-8.  Requests carry a correlation id and an
``op``; responses echo the id with either a probability (``p``) or an
``error`` message:

    {"id": 1, "op": "score_relation", "template": ["[CLS]", ...]}
    {"id": 1, "p": 0.93}

    {"id": 2, "op": "score_pair", "tokens": [...],
     "m_span": [0, 2], "n_span": [5, 6]}
    {"id": 2, "p": 0.81}

The client tolerates out-of-order responses (matching on id), reconnects on
dropped connections, and reports how many attempts were made when the remote
end stays unreachable.  ``RemoteRelationScorer`` and ``RemotePairScorer``
wrap a client in the same interfaces as the native scorers, so an external
endpoint can be swapped in anywhere a native scorer is accepted.

``ScorerServer`` is the matching in-process server.  It exists so the client
can be exercised end to end (and so native scorers can be served to other
processes); it answers every request line with exactly one response line and
keeps the connection alive after malformed input.
"""

from __future__ import annotations

import json
import socket
import socketserver
import threading
from typing import Callable, Optional, Sequence

from .corpus import Document

OPS = ("score_relation", "score_pair")


class ProtocolError(RuntimeError):
    """The remote end answered, but not with a usable score."""


class TransportError(ProtocolError):
    """The remote end could not be reached; carries the attempt count."""

    def __init__(self, message: str, attempts: int):
        super().__init__(message)
        self.attempts = attempts


def parse_address(address: str) -> tuple[str, int]:
    """Split ``host:port`` (host may be empty for localhost)."""
    host, sep, port_text = address.rpartition(":")
    if not sep or not port_text.isdigit():
        raise ValueError(f"address must look like host:port, got {address!r}")
    return host or "127.0.0.1", int(port_text)


def pair_context(doc: Document, m_id: str, n_id: str):
    """Token window holding both mentions, with their spans inside it.

    Mentions in one sentence share that sentence; otherwise the two host
    sentences are concatenated in document order and the later mention's
    span is offset past the first sentence.
    """
    try:
        m, n = doc.mentions[m_id], doc.mentions[n_id]
    except KeyError as exc:
        raise LookupError(f"unknown mention {exc.args[0]!r}") from None
    if (m.p, m.s) == (n.p, n.s):
        tokens = list(doc.sentence(m.p, m.s).tokens)
        return tokens, (m.t0, m.t1), (n.t0, n.t1)
    first, second = sorted((m, n), key=lambda x: (x.p, x.s))
    head = list(doc.sentence(first.p, first.s).tokens)
    tail = list(doc.sentence(second.p, second.s).tokens)
    offset = len(head)
    spans = {
        first.id: (first.t0, first.t1),
        second.id: (second.t0 + offset, second.t1 + offset),
    }
    return head + tail, spans[m_id], spans[n_id]


def _probability(value) -> float:
    p = float(value)
    if not 0.0 <= p <= 1.0:
        raise ProtocolError(f"remote score out of range: {p}")
    return p


class ScorerClient:
    """Blocking NDJSON client with reconnect, retries, and id correlation."""

    def __init__(self, address: str, timeout: float = 10.0, retries: int = 3):
        if retries < 1:
            raise ValueError("retries must be at least 1")
        self.host, self.port = parse_address(address)
        self.timeout = timeout
        self.retries = retries
        self._lock = threading.Lock()
        self._sock: Optional[socket.socket] = None
        self._reader = None
        self._next_id = 0
        self._stash: dict[int, dict] = {}

    def _connect(self) -> None:
        self._sock = socket.create_connection(
            (self.host, self.port), timeout=self.timeout
        )
        self._reader = self._sock.makefile("r", encoding="utf-8")

    def _drop(self) -> None:
        if self._reader is not None:
            try:
                self._reader.close()
            except OSError:
                pass
        if self._sock is not None:
            try:
                self._sock.close()
            except OSError:
                pass
        self._sock, self._reader = None, None
        self._stash.clear()

    def close(self) -> None:
        with self._lock:
            self._drop()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _receive(self, rid: int) -> dict:
        while True:
            if rid in self._stash:
                return self._stash.pop(rid)
            line = self._reader.readline()
            if not line:
                raise ConnectionError("scorer closed the connection")
            try:
                response = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ProtocolError(f"unparseable response line: {exc}") from None
            if not isinstance(response, dict):
                raise ProtocolError(f"response is not an object: {response!r}")
            if response.get("id") == rid:
                return response
            self._stash[response.get("id")] = response

    def request(self, payload: dict) -> dict:
        """Send one request, return its matching response object."""
        attempts = 0
        last_error: Optional[Exception] = None
        while attempts < self.retries:
            attempts += 1
            with self._lock:
                try:
                    if self._sock is None:
                        self._connect()
                    self._next_id += 1
                    rid = self._next_id
                    body = dict(payload)
                    body["id"] = rid
                    line = json.dumps(body, ensure_ascii=False) + "\n"
                    self._sock.sendall(line.encode("utf-8"))
                    response = self._receive(rid)
                except (OSError, ConnectionError) as exc:
                    last_error = exc
                    self._drop()
                    continue
            if "error" in response:
                raise ProtocolError(str(response["error"]))
            return response
        raise TransportError(
            f"scorer at {self.host}:{self.port} unreachable after "
            f"{attempts} attempts: {last_error}",
            attempts=attempts,
        )

    def score_relation(self, template: Sequence[str]) -> float:
        response = self.request(
            {"op": "score_relation", "template": list(template)}
        )
        return _probability(response.get("p"))

    def score_pair(self, tokens, m_span, n_span) -> float:
        response = self.request(
            {
                "op": "score_pair",
                "tokens": list(tokens),
                "m_span": list(m_span),
                "n_span": list(n_span),
            }
        )
        return _probability(response.get("p"))


class RemoteRelationScorer:
    """Relation-scorer interface backed by a protocol endpoint."""

    def __init__(self, client: ScorerClient):
        self.client = client

    @classmethod
    def connect(cls, address: str, **kwargs) -> "RemoteRelationScorer":
        return cls(ScorerClient(address, **kwargs))

    def score(self, template) -> float:
        return self.client.score_relation(template)


class RemotePairScorer:
    """Pair-scorer interface backed by a protocol endpoint."""

    def __init__(self, client: ScorerClient):
        self.client = client

    @classmethod
    def connect(cls, address: str, **kwargs) -> "RemotePairScorer":
        return cls(ScorerClient(address, **kwargs))

    def score(self, doc: Document, m_id: str, n_id: str, views=None) -> float:
        tokens, m_span, n_span = pair_context(doc, m_id, n_id)
        return self.client.score_pair(tokens, m_span, n_span)


def _dispatch(request: dict, relation_fn, pair_fn) -> float:
    op = request.get("op")
    if op == "score_relation":
        if relation_fn is None:
            raise ValueError("score_relation is not served here")
        template = request.get("template")
        if not isinstance(template, list) or not all(
            isinstance(t, str) for t in template
        ):
            raise ValueError("template must be a list of strings")
        return float(relation_fn(template))
    if op == "score_pair":
        if pair_fn is None:
            raise ValueError("score_pair is not served here")
        tokens = request.get("tokens")
        m_span, n_span = request.get("m_span"), request.get("n_span")
        if not isinstance(tokens, list):
            raise ValueError("tokens must be a list")
        for name, span in (("m_span", m_span), ("n_span", n_span)):
            if (
                not isinstance(span, list)
                or len(span) != 2
                or not all(isinstance(v, int) for v in span)
            ):
                raise ValueError(f"{name} must be [start, end]")
        return float(pair_fn(tokens, tuple(m_span), tuple(n_span)))
    raise ValueError(f"unknown op: {op!r}")


class ScorerServer:
    """Threaded NDJSON scoring endpoint.

    ``relation_fn(template) -> p`` and ``pair_fn(tokens, m_span, n_span) -> p``
    are plain callables; pass ``serve_relation_scorer`` adapters to expose the
    native scorers.  Every request line gets exactly one response line; bad
    lines get an error response (with the request's id when it parsed) and the
    connection stays open.
    """

    def __init__(
        self,
        relation_fn: Optional[Callable] = None,
        pair_fn: Optional[Callable] = None,
        host: str = "127.0.0.1",
        port: int = 0,
    ):
        if relation_fn is None and pair_fn is None:
            raise ValueError("serve at least one op")

        class Handler(socketserver.StreamRequestHandler):
            def handle(self) -> None:
                for raw in self.rfile:
                    text = raw.decode("utf-8", errors="replace").strip()
                    if not text:
                        continue
                    rid = None
                    try:
                        request = json.loads(text)
                        if not isinstance(request, dict):
                            raise ValueError("request must be an object")
                        rid = request.get("id")
                        p = _dispatch(request, relation_fn, pair_fn)
                        if not 0.0 <= p <= 1.0:
                            raise ValueError(f"score out of range: {p}")
                        response = {"id": rid, "p": p}
                    except Exception as exc:  # noqa: BLE001 - stay up
                        message = str(exc) or type(exc).__name__
                        response = {"id": rid, "error": message}
                    out = json.dumps(response, ensure_ascii=False) + "\n"
                    try:
                        self.wfile.write(out.encode("utf-8"))
                        self.wfile.flush()
                    except OSError:
                        return

        class Server(socketserver.ThreadingTCPServer):
            allow_reuse_address = True
            daemon_threads = True

        self._server = Server((host, port), Handler)
        self.host, self.port = self._server.server_address[:2]
        self.address = f"{self.host}:{self.port}"
        self._thread = threading.Thread(
            target=self._server.serve_forever, daemon=True
        )
        self._thread.start()

    def close(self) -> None:
        self._server.shutdown()
        self._server.server_close()
        self._thread.join(timeout=5)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def serve_relation_scorer(scorer) -> Callable:
    """Adapter: native relation scorer -> ``relation_fn`` for ScorerServer."""
    return lambda template: scorer.score(tuple(template))
