"""Node runtime: frames in, frames out, timers, stream fan-out."""

from decimal import Decimal

from openweather.codec import UtmLocation, decode, encode
from openweather.engine import NodeConfig, SessionState
from openweather.node import Hangup, NodeRuntime, Outbound
from openweather.sensors import GeneratorConfig, SampleGenerator, SampleStore, VendorLineSource

LOCATION = UtmLocation(6672224, 385565, "35V")


def runtime_for(n: int, generator=None, **overrides) -> NodeRuntime:
    base = dict(
        node_id="%064x" % n,
        location=LOCATION,
        bandwidth=6,
        advertise_ip="172.21.25.%d" % (10 + n),
    )
    base.update(overrides)
    return NodeRuntime(
        NodeConfig(**base),
        generator=generator,
        store=SampleStore(),
        start_ms=0,
    )


def pump(src: NodeRuntime, dst: NodeRuntime, outputs, now_ms):
    """Deliver every Outbound to the other runtime; returns its outputs."""
    produced = []
    for output in outputs:
        assert isinstance(output, (Outbound, Hangup))
        if isinstance(output, Outbound):
            assert output.frame.endswith(b"\n")
            produced.extend(dst.on_frame(output.key, output.frame[:-1], now_ms))
    return produced


def test_handshake_between_two_runtimes():
    alice = runtime_for(1)
    bob = runtime_for(2)
    opening = alice.connect("conn", now_ms=0, remote_ip="172.21.25.12", remote_port=62535)
    assert len(opening) == 1 and decode(opening[0].frame).type_code == 100
    replies = pump(alice, bob, opening, now_ms=1)
    assert decode(replies[0].frame).type_code == 101
    back = pump(bob, alice, replies, now_ms=2)
    assert back == []
    assert alice.session("conn").state is SessionState.ESTABLISHED
    assert bob.session("conn").state is SessionState.ESTABLISHED
    assert "%064x" % 2 in alice.engine.peer_table
    assert "%064x" % 1 in bob.engine.peer_table


def established_pair():
    alice = runtime_for(1)
    bob = runtime_for(2, generator=SampleGenerator(GeneratorConfig(interval_ms=1000)))
    pump(bob, alice, pump(alice, bob, alice.connect("conn", 0), 0), 0)
    return alice, bob


def test_malformed_frame_answered_with_unexpected_status():
    alice, bob = established_pair()
    (reply,) = bob.on_frame("conn", b"{ not json", now_ms=5)
    assert decode(reply.frame).type_code == 600
    (reply,) = bob.on_frame("conn", b'{ "OpenWeatherMessage" : { "Type" : 100 } }', now_ms=6)
    assert decode(reply.frame).type_code == 600


def test_invalid_but_parseable_frame_answered_with_unexpected_status():
    alice, bob = established_pair()
    message = encode(alice.engine.status_message(102, 7))
    broken = message.replace(b'"Port" : 62535', b'"Port" : 0')
    (reply,) = bob.on_frame("conn", broken, now_ms=7)
    assert decode(reply.frame).type_code == 600


def test_stream_fan_out_and_cadence():
    alice, bob = established_pair()
    bob.on_tick(1000)  # one stored sample before anyone subscribes
    outputs = pump(alice, bob, alice.request_realtime("conn", 1500), 1500)
    # the freshest stored sample goes out immediately on subscription
    assert [decode(o.frame).type_code for o in outputs] == [300]
    assert bob.subscribers == {"conn"}
    due = bob.next_due_ms()
    assert due == 2000
    ticked = [o for o in bob.on_tick(2000) if isinstance(o, Outbound)]
    assert [decode(o.frame).type_code for o in ticked] == [300]
    sample = decode(ticked[0].frame)
    assert sample.data.ptu.air_temperature == "19.1"
    # unsubscribing stops the fan-out
    confirm = pump(alice, bob, alice.stop_realtime("conn", 2500), 2500)
    assert [decode(o.frame).type_code for o in confirm] == [500]
    assert bob.subscribers == set()
    assert all(not isinstance(o, Outbound) for o in bob.on_tick(3000))


def test_stream_without_any_stored_sample_sends_nothing_until_tick():
    alice = runtime_for(1)
    bob = runtime_for(2, generator=SampleGenerator(GeneratorConfig(interval_ms=1000)))
    pump(bob, alice, pump(alice, bob, alice.connect("conn", 0), 0), 0)
    outputs = pump(alice, bob, alice.request_realtime("conn", 500), 500)
    assert outputs == []  # nothing sampled yet
    ticked = bob.on_tick(1000)
    assert [decode(o.frame).type_code for o in ticked] == [300]


def test_on_demand_roundtrip_between_runtimes():
    alice, bob = established_pair()
    bob.on_tick(1000)
    bob.on_tick(2000)
    ask = alice.request_on_demand("conn", ["PTU"], "1970-01-01T00:00:01Z", 2500)
    replies = pump(alice, bob, ask, 2600)
    reply = decode(replies[0].frame)
    assert reply.type_code == 301
    assert reply.meta.timestamp == "1970-01-01T00:00:01Z"
    assert reply.data.ptu.relative_humidity == "69.4"
    # miss: nothing stored at that second
    replies = pump(alice, bob, alice.request_on_demand("conn", ["PTU"], "1970-01-01T00:00:59Z", 2700), 2700)
    assert decode(replies[0].frame).type_code == 601


def test_keep_alive_sweep_hangs_up_quiet_sessions():
    alice = runtime_for(1, keep_alive_ms=2000)
    bob = runtime_for(2, keep_alive_ms=2000)
    pump(bob, alice, pump(alice, bob, alice.connect("conn", 0), 0), 0)
    assert bob.on_tick(2000) == []
    outputs = bob.on_tick(2001 + 999)  # next sweep tick after the budget lapses
    hangups = [o for o in outputs if isinstance(o, Hangup)]
    assert len(hangups) == 1 and hangups[0].key == "conn"
    assert bob.session("conn").state is SessionState.CLOSED
    # a closed session swallows further frames
    assert bob.on_frame("conn", encode(alice.engine.status_message(102, 4000)), 4000) == []


def test_vendor_line_source_drives_the_runtime():
    lines = ["0r2,Ta=18.7C,Ua=77.4P,Pa=1002.1H\n", "0r2,Ta=18.9C,Ua=77.0P,Pa=1002.0H\n"]
    alice = runtime_for(1)
    bob = runtime_for(2, generator=VendorLineSource(lines, interval_ms=1000))
    pump(bob, alice, pump(alice, bob, alice.connect("conn", 0), 0), 0)
    pump(alice, bob, alice.request_realtime("conn", 500), 500)
    first = [o for o in bob.on_tick(1000) if isinstance(o, Outbound)]
    assert decode(first[0].frame).data.ptu.air_temperature == "18.7"
    second = [o for o in bob.on_tick(2000) if isinstance(o, Outbound)]
    assert decode(second[0].frame).data.ptu.air_temperature == "18.9"
    assert bob.store.lookup(1000).air_temperature_c == Decimal("18.7")
    # drained source: ticks continue without emissions
    assert [o for o in bob.on_tick(3000) if isinstance(o, Outbound)] == []


def test_disconnect_clears_subscription():
    alice, bob = established_pair()
    bob.on_tick(1000)
    pump(alice, bob, alice.request_realtime("conn", 1500), 1500)
    assert bob.subscribers == {"conn"}
    bob.on_disconnect("conn", 1600)
    assert bob.subscribers == set()
    assert bob.session("conn").state is SessionState.CLOSED
