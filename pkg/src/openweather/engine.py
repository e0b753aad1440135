"""Per-session protocol state machine.

The engine consumes decoded, validated envelopes and answers with a list
of actions for the caller to carry out; it never touches a socket or a
clock itself.  Time arrives as integer epoch milliseconds, so the same
engine runs under the real clock and the simulator's virtual one.

Session states: Idle (fresh connection), HandshakeSent (we opened),
Established, Streaming (we are serving a real-time feed), Closed.
A session's stream_active flag is the other direction: it tracks our own
subscription to the peer's feed as a requester.  Anything arriving in a
state the dispatch below does not allow is answered with a Type-600
status and no state change; a closed session swallows input silently.
"""

from __future__ import annotations

import dataclasses
import logging
import random
from dataclasses import dataclass, field
from enum import Enum

from . import vendor
from .codec import (
    DEFAULT_KEEP_ALIVE_MS,
    DEFAULT_PEERS_REQUESTED,
    DEFAULT_PORT,
    DEFAULT_UPDATE_INTERVAL_MS,
    Envelope,
    InfoPayload,
    MetaInfo,
    ProtocolCode,
    RetrieveRequest,
    UtmLocation,
    WeatherData,
    format_timestamp,
    parse_timestamp,
)
from .peers import PeerRecord, PeerTable, TableFullError
from .sensors import SampleStore

log = logging.getLogger(__name__)


class SessionState(Enum):
    IDLE = "idle"
    HANDSHAKE_SENT = "handshake-sent"
    ESTABLISHED = "established"
    STREAMING = "streaming"
    CLOSED = "closed"


_ACTIVE = (SessionState.ESTABLISHED, SessionState.STREAMING)
_ANSWERABLE = (SessionState.HANDSHAKE_SENT,) + _ACTIVE


@dataclass
class Session:
    """Protocol state for one connection."""

    remote_ip: str = ""
    remote_port: int = 0
    state: SessionState = SessionState.IDLE
    remote: PeerRecord | None = None
    last_rx: int = 0
    stream_active: bool = False


@dataclass(frozen=True)
class SendMessage:
    envelope: Envelope


@dataclass(frozen=True)
class CloseSession:
    reason: str


@dataclass(frozen=True)
class RegisterPeer:
    record: PeerRecord


@dataclass(frozen=True)
class StartStream:
    pass


@dataclass(frozen=True)
class StopStream:
    pass


@dataclass(frozen=True)
class StoreNothing:
    """Explicit no-op: the message was consumed, nothing to do."""


def default_services() -> dict:
    return {"PTU": "RO", "WIND": "RO", "PRECIPITATION": "RO"}


@dataclass
class NodeConfig:
    """Everything a node advertises about itself."""

    node_id: str
    location: UtmLocation
    bandwidth: int
    port: int = DEFAULT_PORT
    advertise_ip: str = "127.0.0.1"
    update_interval_ms: int = DEFAULT_UPDATE_INTERVAL_MS
    peers_requested: int = DEFAULT_PEERS_REQUESTED
    keep_alive_ms: int = DEFAULT_KEEP_ALIVE_MS
    services: dict = field(default_factory=default_services)


def build_metainfo(config: NodeConfig, local_ip: str, now_ms: int) -> MetaInfo:
    """Header for an outbound message assembled at now_ms."""
    return MetaInfo(
        node_id=config.node_id,
        peer_ip=local_ip,
        location=config.location,
        bandwidth=config.bandwidth,
        timestamp=format_timestamp(now_ms),
        port=config.port,
        update_interval_ms=config.update_interval_ms,
        peers_requested=config.peers_requested,
        keep_alive_ms=config.keep_alive_ms,
    )


class StateError(RuntimeError):
    """The requested operation is not allowed in the session's state."""


class Callbacks:
    """Application notification hooks; override what you care about."""

    def on_service_catalog(self, session: Session, services: dict) -> None:
        pass

    def on_weather_data(self, session: Session, envelope: Envelope, on_demand: bool) -> None:
        pass

    def on_peer_list(self, session: Session, peers: dict) -> None:
        pass

    def on_error(self, session: Session, code: int) -> None:
        pass


class Engine:
    """Message dispatch and requester operations for one node."""

    def __init__(
        self,
        config: NodeConfig,
        *,
        local_ip: str | None = None,
        peer_table: PeerTable | None = None,
        sample_store: SampleStore | None = None,
        callbacks: Callbacks | None = None,
        rng: random.Random | None = None,
    ):
        self.config = config
        self.local_ip = local_ip if local_ip is not None else config.advertise_ip
        self.peer_table = peer_table if peer_table is not None else PeerTable()
        self.sample_store = sample_store
        self.callbacks = callbacks if callbacks is not None else Callbacks()
        self.rng = rng if rng is not None else random.Random()

    # -- message builders ---------------------------------------------------

    def _envelope(self, code, now_ms, *, data=None, info=None, retrieve=None, timestamp=None):
        meta = build_metainfo(self.config, self.local_ip, now_ms)
        if timestamp is not None:
            meta = dataclasses.replace(meta, timestamp=timestamp)
        return Envelope(int(code), meta, data=data, info=info, retrieve=retrieve)

    def status_message(self, code, now_ms: int) -> Envelope:
        """A bare header-only message (handshakes, statuses, errors)."""
        return self._envelope(code, now_ms)

    def realtime_message(self, block: WeatherData, now_ms: int) -> Envelope:
        """A Type-300 streamed data message assembled at now_ms."""
        return self._envelope(ProtocolCode.REAL_TIME_DATA_R, now_ms, data=block)

    # -- inbound dispatch ---------------------------------------------------

    def handle_message(self, session: Session, envelope: Envelope, now_ms: int) -> list:
        """React to one validated inbound envelope; returns actions."""
        session.last_rx = now_ms
        code = int(envelope.type_code)
        state = session.state
        if state is SessionState.CLOSED:
            return []

        if code == ProtocolCode.HANDSHAKE:
            if state is SessionState.IDLE or state in _ACTIVE:
                record = self._register(session, envelope.meta, now_ms)
                if state is SessionState.IDLE:
                    session.state = SessionState.ESTABLISHED
                return [RegisterPeer(record), SendMessage(self.status_message(ProtocolCode.HANDSHAKE_S, now_ms))]
            return self._unexpected(now_ms)

        if code == ProtocolCode.HANDSHAKE_S:
            if state is SessionState.HANDSHAKE_SENT:
                record = self._register(session, envelope.meta, now_ms)
                session.state = SessionState.ESTABLISHED
                return [RegisterPeer(record)]
            if state in _ACTIVE:
                return [RegisterPeer(self._register(session, envelope.meta, now_ms))]
            return self._unexpected(now_ms)

        if code == ProtocolCode.SERVICES_AVAILABLE and state in _ACTIVE:
            if not self.config.services:
                return [SendMessage(self.status_message(ProtocolCode.SERVICE_UNAVAILABLE, now_ms))]
            info = InfoPayload(services=dict(self.config.services))
            return [SendMessage(self._envelope(ProtocolCode.SERVICES_AVAILABLE_R, now_ms, info=info))]

        if code == ProtocolCode.SERVICES_AVAILABLE_R and state in _ACTIVE:
            # the reply itself completes the exchange; no receipt goes back
            catalog = envelope.info.services if envelope.info else {}
            self.callbacks.on_service_catalog(session, dict(catalog))
            return [StoreNothing()]

        if code == ProtocolCode.LIST_PEERS and state in _ACTIVE:
            return self._serve_peer_list(envelope, now_ms)

        if code == ProtocolCode.LIST_PEERS_R and state in _ACTIVE:
            listing = envelope.info.peers if envelope.info else {}
            self._merge_listing(listing, now_ms)
            self.callbacks.on_peer_list(session, dict(listing))
            return [StoreNothing()]

        if code in (ProtocolCode.SERVICES_AVAILABLE_S, ProtocolCode.LIST_PEERS_S) and state in _ACTIVE:
            return [StoreNothing()]

        if code == ProtocolCode.REAL_TIME_DATA:
            if state is SessionState.ESTABLISHED:
                session.state = SessionState.STREAMING
                return [StartStream()]
            return self._unexpected(now_ms)

        if code == ProtocolCode.ON_DEMAND_DATA and state in _ACTIVE:
            return self._serve_on_demand(envelope, now_ms)

        if code == ProtocolCode.STOP_REAL_TIME_DATA:
            if state is SessionState.STREAMING:
                session.state = SessionState.ESTABLISHED
                return [StopStream(), SendMessage(self.status_message(ProtocolCode.REAL_TIME_DATA_S, now_ms))]
            return self._unexpected(now_ms)

        if code in (ProtocolCode.REAL_TIME_DATA_R, ProtocolCode.ON_DEMAND_DATA_R) and state in _ACTIVE:
            self.callbacks.on_weather_data(session, envelope, on_demand=(code == ProtocolCode.ON_DEMAND_DATA_R))
            return [StoreNothing()]

        if code in (ProtocolCode.REAL_TIME_DATA_S, ProtocolCode.ON_DEMAND_DATA_S) and state in _ACTIVE:
            return [StoreNothing()]

        if 600 <= code <= 699 and state in _ANSWERABLE:
            self.callbacks.on_error(session, code)
            return [StoreNothing()]

        return self._unexpected(now_ms)

    def _unexpected(self, now_ms: int) -> list:
        return [SendMessage(self.status_message(ProtocolCode.UNEXPECTED_MESSAGE, now_ms))]

    def _register(self, session: Session, meta: MetaInfo, now_ms: int) -> PeerRecord:
        record = PeerRecord(
            node_id=meta.node_id,
            peer_ip=meta.peer_ip,
            port=meta.port,
            bandwidth=meta.bandwidth,
            location=meta.location,
            keep_alive_ms=meta.keep_alive_ms,
            last_rx=now_ms,
        )
        try:
            record = self.peer_table.upsert(record)
        except TableFullError as exc:
            log.warning("%s", exc)
        session.remote = record
        return record

    def _merge_listing(self, listing: dict, now_ms: int) -> None:
        for node_id, entry in listing.items():
            record = PeerRecord(
                node_id=node_id,
                peer_ip=entry.peer_ip,
                port=entry.port,
                bandwidth=entry.bandwidth,
                last_rx=now_ms,
            )
            try:
                self.peer_table.upsert(record)
            except TableFullError as exc:
                log.warning("%s", exc)

    def _serve_peer_list(self, envelope: Envelope, now_ms: int) -> list:
        wanted = min(envelope.meta.peers_requested, 100)
        selected = self.peer_table.select_peers(wanted, self.rng, exclude={envelope.meta.node_id})
        listing = {record.node_id: record.listing_entry() for record in selected}
        info = InfoPayload(peers=listing)
        return [SendMessage(self._envelope(ProtocolCode.LIST_PEERS_R, now_ms, info=info))]

    def _serve_on_demand(self, envelope: Envelope, now_ms: int) -> list:
        request = envelope.retrieve
        if request is None or not set(request.services) <= set(self.config.services):
            return [SendMessage(self.status_message(ProtocolCode.SERVICE_UNAVAILABLE, now_ms))]
        if self.sample_store is None:
            return [SendMessage(self.status_message(ProtocolCode.SERVICE_UNAVAILABLE, now_ms))]
        try:
            wanted_ms = parse_timestamp(request.timestamp)
        except ValueError:
            return [SendMessage(self.status_message(ProtocolCode.SAMPLE_NOT_FOUND, now_ms))]
        sample = self.sample_store.lookup(wanted_ms)
        if sample is None:
            return [SendMessage(self.status_message(ProtocolCode.SAMPLE_NOT_FOUND, now_ms))]
        block = vendor.to_data_block(sample)
        reply = self._envelope(
            ProtocolCode.ON_DEMAND_DATA_R, now_ms, data=block, timestamp=request.timestamp
        )
        return [SendMessage(reply)]

    # -- requester operations -----------------------------------------------

    def _need_established(self, session: Session, what: str) -> None:
        if session.state not in _ACTIVE:
            raise StateError("%s requires an established session (state: %s)" % (what, session.state.value))

    def initiate_handshake(self, session: Session, now_ms: int) -> list:
        if session.state is not SessionState.IDLE:
            raise StateError("handshake on a non-idle session (state: %s)" % session.state.value)
        session.state = SessionState.HANDSHAKE_SENT
        # nothing received yet: the keep-alive countdown starts at the send
        session.last_rx = now_ms
        return [SendMessage(self.status_message(ProtocolCode.HANDSHAKE, now_ms))]

    def request_services(self, session: Session, now_ms: int) -> list:
        self._need_established(session, "service discovery")
        return [SendMessage(self.status_message(ProtocolCode.SERVICES_AVAILABLE, now_ms))]

    def request_peers(self, session: Session, now_ms: int) -> list:
        self._need_established(session, "peer listing")
        return [SendMessage(self.status_message(ProtocolCode.LIST_PEERS, now_ms))]

    def request_realtime(self, session: Session, now_ms: int) -> list:
        self._need_established(session, "real-time retrieval")
        if session.stream_active:
            raise StateError("stream already active on this session")
        session.stream_active = True
        return [SendMessage(self.status_message(ProtocolCode.REAL_TIME_DATA, now_ms))]

    def stop_realtime(self, session: Session, now_ms: int) -> list:
        self._need_established(session, "stream stop")
        if not session.stream_active:
            raise StateError("no active stream to stop")
        session.stream_active = False
        return [SendMessage(self.status_message(ProtocolCode.STOP_REAL_TIME_DATA, now_ms))]

    def request_on_demand(self, session: Session, services, timestamp: str, now_ms: int) -> list:
        self._need_established(session, "on-demand retrieval")
        retrieve = RetrieveRequest(services=tuple(services), timestamp=timestamp)
        return [SendMessage(self._envelope(ProtocolCode.ON_DEMAND_DATA, now_ms, retrieve=retrieve))]

    # -- housekeeping ---------------------------------------------------------

    def keep_alive_sweep(self, sessions, now_ms: int) -> list:
        """Close sessions whose peer went quiet; returns (session, action) pairs."""
        closed = []
        for session in sessions:
            if session.state in (SessionState.IDLE, SessionState.CLOSED):
                continue
            allowance = session.remote.keep_alive_ms if session.remote else self.config.keep_alive_ms
            if session.last_rx + allowance < now_ms:
                session.state = SessionState.CLOSED
                session.stream_active = False
                closed.append((session, CloseSession("keep-alive expired")))
        return closed
