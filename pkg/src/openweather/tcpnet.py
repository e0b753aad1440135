"""Newline-framed TCP transport.

One message per line: the canonical encoding followed by ``\\n``.  Lines
longer than 64 KiB are a framing error and the connection is dropped.

NodeServer runs a NodeRuntime on real sockets.  Reader threads only feed
an event queue; a single coordinator thread owns the runtime, so engine
state never needs locking.  PeerClient is the blocking counterpart for
one-shot operations.
"""

from __future__ import annotations

import logging
import queue
import socket
import threading
import time

from .codec import Envelope, decode, encode
from .engine import Engine, NodeConfig, ProtocolCode, Session
from .node import Hangup, NodeRuntime, Outbound

log = logging.getLogger(__name__)

MAX_FRAME = 64 * 1024


class FramingError(RuntimeError):
    """The byte stream does not split into newline-framed messages."""


class ProtocolFault(RuntimeError):
    """The remote node answered an operation with a 6xx status."""

    def __init__(self, code: int):
        super().__init__("remote answered with status %d" % code)
        self.code = code


def time_ms() -> int:
    return int(time.time() * 1000)


def _close_now(conn: socket.socket) -> None:
    """Close so that a thread blocked in recv() on this socket wakes up."""
    try:
        conn.shutdown(socket.SHUT_RDWR)
    except OSError:
        pass
    try:
        conn.close()
    except OSError:
        pass


class FrameSplitter:
    """Incremental newline splitter with an upper frame size bound."""

    def __init__(self, limit: int = MAX_FRAME):
        self.limit = limit
        self._buffer = b""

    def feed(self, data: bytes) -> list:
        self._buffer += data
        frames = []
        while True:
            cut = self._buffer.find(b"\n")
            if cut < 0:
                break
            frame, self._buffer = self._buffer[:cut], self._buffer[cut + 1 :]
            if len(frame) > self.limit:
                raise FramingError("frame of %d bytes exceeds the %d byte cap" % (len(frame), self.limit))
            frames.append(frame)
        if len(self._buffer) > self.limit:
            raise FramingError("unterminated line exceeds the %d byte cap" % self.limit)
        return frames


class NodeServer:
    """Accepts connections and drives a NodeRuntime over them."""

    def __init__(self, runtime: NodeRuntime, host: str = "127.0.0.1", port: int | None = None, poll_s: float = 0.05):
        self.runtime = runtime
        self.host = host
        self._want_port = runtime.config.port if port is None else port
        self.poll_s = poll_s
        self._listener: socket.socket | None = None
        self._events: queue.Queue = queue.Queue()
        self._conns: dict = {}
        self._conn_lock = threading.Lock()
        self._threads: list = []
        self._stopping = threading.Event()
        self._next_key = 0

    @property
    def port(self) -> int:
        if self._listener is None:
            raise RuntimeError("server not started")
        return self._listener.getsockname()[1]

    def start(self) -> None:
        listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        listener.bind((self.host, self._want_port))
        listener.listen(16)
        # accept() must wake periodically or stop() cannot join the thread
        listener.settimeout(self.poll_s)
        self._listener = listener
        for target in (self._accept_loop, self._coordinate):
            thread = threading.Thread(target=target, daemon=True)
            thread.start()
            self._threads.append(thread)

    def stop(self) -> None:
        self._stopping.set()
        if self._listener is not None:
            try:
                self._listener.close()
            except OSError:
                pass
        with self._conn_lock:
            conns = list(self._conns.values())
        for conn in conns:
            _close_now(conn)
        for thread in self._threads:
            thread.join(timeout=2)

    def _accept_loop(self) -> None:
        while not self._stopping.is_set():
            try:
                conn, addr = self._listener.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            self._next_key += 1
            key = self._next_key
            with self._conn_lock:
                self._conns[key] = conn
            self._events.put(("open", key, addr))
            reader = threading.Thread(target=self._read_loop, args=(key, conn), daemon=True)
            reader.start()
            self._threads.append(reader)

    def _read_loop(self, key, conn: socket.socket) -> None:
        splitter = FrameSplitter()
        while not self._stopping.is_set():
            try:
                data = conn.recv(4096)
            except OSError:
                break
            if not data:
                break
            try:
                frames = splitter.feed(data)
            except FramingError as exc:
                log.warning("connection %d: %s", key, exc)
                break
            for frame in frames:
                self._events.put(("frame", key, frame))
        self._events.put(("close", key, None))

    def _coordinate(self) -> None:
        while not self._stopping.is_set():
            try:
                kind, key, payload = self._events.get(timeout=self.poll_s)
            except queue.Empty:
                kind = None
            now = time_ms()
            outputs = []
            if kind == "open":
                self.runtime.open_session(key, remote_ip=payload[0], remote_port=payload[1])
            elif kind == "frame":
                outputs.extend(self.runtime.on_frame(key, payload, now))
            elif kind == "close":
                self.runtime.on_disconnect(key, now)
                self._drop(key)
            outputs.extend(self.runtime.on_tick(now))
            self._execute(outputs)

    def _execute(self, outputs: list) -> None:
        for output in outputs:
            if isinstance(output, Outbound):
                with self._conn_lock:
                    conn = self._conns.get(output.key)
                if conn is None:
                    continue
                try:
                    conn.sendall(output.frame)
                except OSError:
                    self._drop(output.key)
            elif isinstance(output, Hangup):
                self._drop(output.key)

    def _drop(self, key) -> None:
        with self._conn_lock:
            conn = self._conns.pop(key, None)
        if conn is not None:
            _close_now(conn)


class PeerClient:
    """Blocking client: handshake once, then run operations in turn."""

    def __init__(self, host: str, port: int, config: NodeConfig, timeout_s: float = 10.0):
        self.sock = socket.create_connection((host, port), timeout=timeout_s)
        self.sock.settimeout(timeout_s)
        local_ip = self.sock.getsockname()[0]
        self.engine = Engine(config, local_ip=local_ip)
        self.session = Session(remote_ip=host, remote_port=port)
        self._splitter = FrameSplitter()
        self._inbox: list = []

    def close(self) -> None:
        try:
            self.sock.close()
        except OSError:
            pass

    def _now(self) -> int:
        return time_ms()

    def _send_actions(self, actions: list) -> None:
        for action in actions:
            envelope = getattr(action, "envelope", None)
            if envelope is not None:
                self.sock.sendall(encode(envelope) + b"\n")

    def recv(self) -> Envelope:
        """Next inbound message; feeds the engine so statuses go out."""
        while not self._inbox:
            data = self.sock.recv(4096)
            if not data:
                raise ConnectionError("connection closed by remote node")
            self._inbox.extend(self._splitter.feed(data))
        envelope = decode(self._inbox.pop(0))
        self._send_actions(self.engine.handle_message(self.session, envelope, self._now()))
        return envelope

    def _await_type(self, *codes: int) -> Envelope:
        while True:
            envelope = self.recv()
            code = int(envelope.type_code)
            if code in codes:
                return envelope
            if 600 <= code <= 699:
                raise ProtocolFault(code)

    def handshake(self) -> Envelope:
        self._send_actions(self.engine.initiate_handshake(self.session, self._now()))
        return self._await_type(ProtocolCode.HANDSHAKE_S)

    def services(self) -> Envelope:
        self._send_actions(self.engine.request_services(self.session, self._now()))
        return self._await_type(ProtocolCode.SERVICES_AVAILABLE_R)

    def peers(self) -> Envelope:
        self._send_actions(self.engine.request_peers(self.session, self._now()))
        return self._await_type(ProtocolCode.LIST_PEERS_R)

    def stream(self, count: int) -> list:
        self._send_actions(self.engine.request_realtime(self.session, self._now()))
        received = []
        while len(received) < count:
            received.append(self._await_type(ProtocolCode.REAL_TIME_DATA_R))
        return received

    def stop(self) -> Envelope:
        self._send_actions(self.engine.stop_realtime(self.session, self._now()))
        return self._await_type(ProtocolCode.REAL_TIME_DATA_S)

    def fetch(self, services, timestamp: str) -> Envelope:
        self._send_actions(self.engine.request_on_demand(self.session, services, timestamp, self._now()))
        return self._await_type(ProtocolCode.ON_DEMAND_DATA_R)
