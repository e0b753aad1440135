"""Session state machine: dispatch, serving, requester ops, keep-alive."""

import random

import pytest

from openweather.codec import (
    Envelope,
    InfoPayload,
    MetaInfo,
    PeerEntry,
    ProtocolCode,
    RetrieveRequest,
    UtmLocation,
    WeatherData,
    format_timestamp,
    validate,
)
from openweather.engine import (
    Callbacks,
    CloseSession,
    Engine,
    NodeConfig,
    RegisterPeer,
    SendMessage,
    Session,
    SessionState,
    StartStream,
    StateError,
    StopStream,
    StoreNothing,
    build_metainfo,
    default_services,
)
from openweather.peers import PeerRecord, PeerTable
from openweather.sensors import SampleGenerator, SampleStore
from openweather.vendor import to_data_block

LOCATION = UtmLocation(6672224, 385565, "35V")
REGISTRY = (100, 101, 102, 103, 104, 105, 106, 107, 200, 201, 202, 300, 301, 500, 501, 600, 601, 602)


def config(n: int = 1, **overrides) -> NodeConfig:
    base = dict(
        node_id="%064x" % n,
        location=LOCATION,
        bandwidth=6,
        advertise_ip="172.21.25.%d" % (10 + n),
    )
    base.update(overrides)
    return NodeConfig(**base)


def remote_meta(n: int = 2, now_ms: int = 0, **overrides) -> MetaInfo:
    base = dict(
        node_id="%064x" % n,
        peer_ip="172.21.25.%d" % (10 + n),
        location=LOCATION,
        bandwidth=1,
        timestamp=format_timestamp(now_ms),
    )
    base.update(overrides)
    return MetaInfo(**base)


def inbound(code: int, n: int = 2, now_ms: int = 0, **payloads) -> Envelope:
    return Envelope(type_code=code, meta=remote_meta(n, now_ms), **payloads)


def payload_for(code: int, now_ms: int = 0):
    """The payload each retrieval code must carry, per the wire rules."""
    if code == 103:
        return {"info": InfoPayload(services=default_services())}
    if code == 105:
        return {"info": InfoPayload(peers={"c" * 64: PeerEntry("10.0.0.9", 62535, 4)})}
    if code == 201:
        return {
            "retrieve": RetrieveRequest(services=("PTU",), timestamp=format_timestamp(now_ms))
        }
    if code in (300, 301):
        return {"data": to_data_block(SampleGenerator().next_sample(now_ms))}
    return {}


def established_engine(**overrides):
    engine = Engine(config(**overrides))
    session = Session(state=SessionState.ESTABLISHED)
    return engine, session


# -- handshake ---------------------------------------------------------------------


def test_inbound_handshake_registers_and_confirms():
    engine = Engine(config())
    session = Session()
    actions = engine.handle_message(session, inbound(100), now_ms=1000)
    assert session.state is SessionState.ESTABLISHED
    assert isinstance(actions[0], RegisterPeer)
    assert actions[0].record.node_id == "%064x" % 2
    assert isinstance(actions[1], SendMessage)
    reply = actions[1].envelope
    assert reply.type_code == 101
    assert reply.meta.node_id == engine.config.node_id
    assert validate(reply).ok
    assert "%064x" % 2 in engine.peer_table


def test_outbound_handshake_completes_on_confirmation():
    engine = Engine(config())
    session = Session()
    (send,) = engine.initiate_handshake(session, now_ms=0)
    assert send.envelope.type_code == 100
    assert session.state is SessionState.HANDSHAKE_SENT
    actions = engine.handle_message(session, inbound(101), now_ms=50)
    assert session.state is SessionState.ESTABLISHED
    assert isinstance(actions[0], RegisterPeer)
    assert session.remote is not None and session.remote.node_id == "%064x" % 2


def test_handshake_refresh_on_established_session():
    engine, session = established_engine()
    actions = engine.handle_message(session, inbound(100), now_ms=0)
    assert session.state is SessionState.ESTABLISHED
    assert [type(a) for a in actions] == [RegisterPeer, SendMessage]


def test_initiate_handshake_requires_idle():
    engine, session = established_engine()
    with pytest.raises(StateError):
        engine.initiate_handshake(session, 0)


# -- service discovery ----------------------------------------------------------------


def test_service_discovery_served():
    engine, session = established_engine()
    (send,) = engine.handle_message(session, inbound(102), now_ms=0)
    reply = send.envelope
    assert reply.type_code == 103
    assert reply.info.services == default_services()
    assert validate(reply).ok


def test_service_discovery_with_no_services_is_unavailable():
    engine, session = established_engine(services={})
    (send,) = engine.handle_message(session, inbound(102), now_ms=0)
    assert send.envelope.type_code == 602


def test_service_catalog_receipt_notifies_without_echo():
    caught = {}

    class Hooks(Callbacks):
        def on_service_catalog(self, session, services):
            caught["services"] = services

    engine = Engine(config(), callbacks=Hooks())
    session = Session(state=SessionState.ESTABLISHED)
    # the reply closes the exchange: two messages per operation, total
    actions = engine.handle_message(session, inbound(103, **payload_for(103)), now_ms=0)
    assert actions == [StoreNothing()]
    assert caught["services"] == default_services()


# -- peer listings ----------------------------------------------------------------------


def test_peer_list_serving_excludes_requester_and_caps_count():
    table = PeerTable()
    engine = Engine(config(), peer_table=table, rng=random.Random(42))
    session = Session(state=SessionState.ESTABLISHED)
    engine.handle_message(session, inbound(100), now_ms=0)  # register the asker
    for n in range(5, 45):
        table.upsert(
            PeerRecord(node_id="%064x" % n, peer_ip="10.0.0.%d" % (n % 250 + 1), port=62535, bandwidth=6)
        )
    request = Envelope(type_code=107, meta=remote_meta(2, peers_requested=20))
    (send,) = engine.handle_message(session, request, now_ms=0)
    reply = send.envelope
    assert reply.type_code == 105
    assert len(reply.info.peers) == 20
    assert "%064x" % 2 not in reply.info.peers
    assert validate(reply).ok


def test_peer_list_receipt_merges_without_echo():
    engine, session = established_engine()
    listing = {"c" * 64: PeerEntry("10.0.0.9", 62535, 4)}
    actions = engine.handle_message(
        session, inbound(105, info=InfoPayload(peers=listing)), now_ms=7
    )
    assert actions == [StoreNothing()]
    assert "c" * 64 in engine.peer_table
    assert engine.peer_table.get("c" * 64).last_rx == 7


def test_status_codes_are_swallowed():
    engine, session = established_engine()
    for code in (104, 106, 500, 501):
        assert engine.handle_message(session, inbound(code), now_ms=0) == [StoreNothing()]


# -- real-time stream --------------------------------------------------------------------


def test_stream_lifecycle_on_serving_side():
    engine, session = established_engine()
    assert engine.handle_message(session, inbound(200), now_ms=0) == [StartStream()]
    assert session.state is SessionState.STREAMING
    # operations still answered while serving a stream
    (send,) = engine.handle_message(session, inbound(102), now_ms=1)
    assert send.envelope.type_code == 103
    stop, confirm = engine.handle_message(session, inbound(202), now_ms=2)
    assert stop == StopStream()
    assert confirm.envelope.type_code == 500
    assert session.state is SessionState.ESTABLISHED


def test_stream_request_out_of_turn_is_unexpected():
    engine = Engine(config())
    session = Session()
    (send,) = engine.handle_message(session, inbound(200), now_ms=0)
    assert send.envelope.type_code == 600
    engine2, session2 = established_engine()
    engine2.handle_message(session2, inbound(200), now_ms=0)
    (send2,) = engine2.handle_message(session2, inbound(200), now_ms=1)
    assert send2.envelope.type_code == 600


def test_requester_subscription_flags():
    engine, session = established_engine()
    (send,) = engine.request_realtime(session, 0)
    assert send.envelope.type_code == 200
    assert session.stream_active
    with pytest.raises(StateError):
        engine.request_realtime(session, 1)
    (send,) = engine.stop_realtime(session, 2)
    assert send.envelope.type_code == 202
    assert not session.stream_active
    with pytest.raises(StateError):
        engine.stop_realtime(session, 3)


def test_inbound_data_triggers_callback():
    seen = []

    class Hooks(Callbacks):
        def on_weather_data(self, session, envelope, on_demand):
            seen.append((envelope.type_code, on_demand))

    engine = Engine(config(), callbacks=Hooks())
    session = Session(state=SessionState.ESTABLISHED)
    engine.handle_message(session, inbound(300, **payload_for(300)), now_ms=0)
    engine.handle_message(session, inbound(301, **payload_for(301)), now_ms=1)
    assert seen == [(300, False), (301, True)]


# -- on-demand serving ---------------------------------------------------------------------


def on_demand_engine():
    store = SampleStore()
    generator = SampleGenerator()
    for tick in (3000, 6000, 9000):
        store.insert(generator.next_sample(tick))
    engine = Engine(config(), sample_store=store)
    session = Session(state=SessionState.ESTABLISHED)
    return engine, session


def query(timestamp: str, services=("PTU", "WIND", "PRECIPITATION")) -> Envelope:
    return Envelope(
        type_code=201,
        meta=remote_meta(),
        retrieve=RetrieveRequest(services=tuple(services), timestamp=timestamp),
    )


def test_on_demand_hit_returns_stored_sample():
    engine, session = on_demand_engine()
    (send,) = engine.handle_message(session, query("1970-01-01T00:00:06Z"), now_ms=20000)
    reply = send.envelope
    assert reply.type_code == 301
    assert reply.data == to_data_block(SampleGenerator().next_sample(6000))
    # header echoes the requested moment, not the serving moment
    assert reply.meta.timestamp == "1970-01-01T00:00:06Z"
    assert validate(reply).ok


def test_on_demand_miss_is_sample_not_found():
    engine, session = on_demand_engine()
    (send,) = engine.handle_message(session, query("1970-01-01T00:01:00Z"), now_ms=20000)
    assert send.envelope.type_code == 601


def test_on_demand_unknown_service_is_unavailable():
    engine, session = on_demand_engine()
    bad = Envelope(
        type_code=201,
        meta=remote_meta(),
        retrieve=RetrieveRequest(services=("PTU", "SOLAR"), timestamp="1970-01-01T00:00:06Z"),
    )
    (send,) = engine.handle_message(session, bad, now_ms=20000)
    assert send.envelope.type_code == 602


def test_on_demand_without_a_store_is_unavailable():
    engine, session = established_engine()
    (send,) = engine.handle_message(session, query("1970-01-01T00:00:06Z"), now_ms=0)
    assert send.envelope.type_code == 602


def test_request_on_demand_builds_query():
    engine, session = established_engine()
    (send,) = engine.request_on_demand(session, ["PTU"], "2011-05-29T12:10:23Z", 0)
    assert send.envelope.type_code == 201
    assert send.envelope.retrieve == RetrieveRequest(("PTU",), "2011-05-29T12:10:23Z")
    assert validate(send.envelope).ok


# -- closed sessions, errors, exhaustive dispatch -------------------------------------------


def test_closed_session_swallows_everything():
    engine = Engine(config())
    session = Session(state=SessionState.CLOSED)
    for code in REGISTRY:
        assert engine.handle_message(session, inbound(code, **payload_for(code)), 0) == []
        assert session.state is SessionState.CLOSED


def test_error_statuses_reach_the_callback():
    seen = []

    class Hooks(Callbacks):
        def on_error(self, session, code):
            seen.append(code)

    engine = Engine(config(), callbacks=Hooks())
    session = Session(state=SessionState.ESTABLISHED)
    for code in (600, 601, 602, 650):
        assert engine.handle_message(session, inbound(code), 0) == [StoreNothing()]
    assert seen == [600, 601, 602, 650]


def test_exhaustive_dispatch_is_total_and_clean():
    """Every (state, code) pair yields known actions; envelopes validate."""
    action_types = (SendMessage, CloseSession, RegisterPeer, StartStream, StopStream, StoreNothing)
    for state in SessionState:
        for code in REGISTRY + (640,):
            engine = Engine(config(), sample_store=SampleStore())
            session = Session(state=state)
            message = inbound(code, now_ms=5, **payload_for(code, now_ms=5))
            actions = engine.handle_message(session, message, now_ms=5)
            if state is SessionState.CLOSED:
                assert actions == []
                continue
            assert actions, (state, code)
            for action in actions:
                assert isinstance(action, action_types), (state, code)
                if isinstance(action, SendMessage):
                    report = validate(action.envelope)
                    assert report.ok, (state, code, report.problems)
            disallowed = [
                a.envelope.type_code
                for a in actions
                if isinstance(a, SendMessage) and a.envelope.type_code == 600
            ]
            if disallowed:
                assert len(actions) == 1  # a 600 status is the whole answer


def test_session_last_rx_follows_messages():
    engine, session = established_engine()
    engine.handle_message(session, inbound(102), now_ms=1234)
    assert session.last_rx == 1234


# -- keep-alive -------------------------------------------------------------------------


def make_session(state, last_rx, keep_alive_ms):
    session = Session(state=state, last_rx=last_rx)
    if keep_alive_ms is not None:
        session.remote = PeerRecord(
            node_id="f" * 64,
            peer_ip="10.0.0.1",
            port=62535,
            bandwidth=6,
            keep_alive_ms=keep_alive_ms,
        )
    return session


def test_keep_alive_boundary_is_strict():
    engine = Engine(config())
    at_budget = make_session(SessionState.ESTABLISHED, last_rx=1000, keep_alive_ms=500)
    assert engine.keep_alive_sweep([at_budget], now_ms=1500) == []
    assert at_budget.state is SessionState.ESTABLISHED
    over = engine.keep_alive_sweep([at_budget], now_ms=1501)
    assert len(over) == 1 and isinstance(over[0][1], CloseSession)
    assert at_budget.state is SessionState.CLOSED


def test_keep_alive_ignores_idle_and_closed():
    engine = Engine(config())
    idle = Session(state=SessionState.IDLE, last_rx=0)
    closed = Session(state=SessionState.CLOSED, last_rx=0)
    assert engine.keep_alive_sweep([idle, closed], now_ms=10**9) == []


def test_pending_dial_survives_sweep_at_wall_clock_now():
    engine = Engine(config())
    session = Session()
    now = 1_381_761_721_000
    engine.initiate_handshake(session, now_ms=now)
    assert session.last_rx == now
    assert engine.keep_alive_sweep([session], now_ms=now + 1000) == []


def test_keep_alive_uses_peer_budget_or_own_default():
    engine = Engine(config(keep_alive_ms=100))
    anonymous = Session(state=SessionState.HANDSHAKE_SENT, last_rx=0)
    assert engine.keep_alive_sweep([anonymous], now_ms=100) == []
    assert len(engine.keep_alive_sweep([anonymous], now_ms=101)) == 1


def test_keep_alive_sweep_matches_brute_force_oracle():
    rng = random.Random(120000)
    engine = Engine(config())
    sessions = []
    for _ in range(50):
        state = rng.choice(list(SessionState))
        session = make_session(state, rng.randint(0, 5000), rng.choice([None, rng.randint(1, 4000)]))
        session.stream_active = rng.random() < 0.3
        sessions.append(session)
    for now in range(0, 12000, 250):
        expect_closed = set()
        for session in sessions:
            if session.state in (SessionState.IDLE, SessionState.CLOSED):
                continue
            budget = session.remote.keep_alive_ms if session.remote else engine.config.keep_alive_ms
            if session.last_rx + budget < now:
                expect_closed.add(id(session))
        swept = engine.keep_alive_sweep(sessions, now)
        assert {id(s) for s, _ in swept} == expect_closed
        for session, action in swept:
            assert session.state is SessionState.CLOSED
            assert not session.stream_active
            assert isinstance(action, CloseSession)


# -- headers -----------------------------------------------------------------------------


def test_build_metainfo_carries_config():
    header = build_metainfo(config(), "172.21.25.16", 1311180689000)
    assert header.node_id == "%064x" % 1
    assert header.peer_ip == "172.21.25.16"
    assert header.timestamp == "2011-07-20T16:51:29Z"
    assert header.port == 62535
    assert validate(Envelope(type_code=100, meta=header)).ok
