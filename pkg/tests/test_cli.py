"""Command line behaviour: exit codes, printed payloads, env overrides."""

import socket
import threading
import time

import pytest

from openweather.cli import main
from openweather.codec import UtmLocation, format_timestamp
from openweather.engine import NodeConfig
from openweather.identity import random_node_id
from openweather.node import NodeRuntime
from openweather.sensors import GeneratorConfig, SampleGenerator, SampleStore
from openweather.tcpnet import NodeServer, time_ms

SCENARIO = """
node n1 ip=172.21.25.16
node n2 ip=172.21.25.20
link n1 n2 latency_ms=0 bandwidth=56000
at 0 n1 handshake n2
"""


def start_server(interval_ms: int = 100) -> NodeServer:
    config = NodeConfig(
        node_id=random_node_id(b"\x61" * 32),
        location=UtmLocation.parse("6672224 385565 35V"),
        bandwidth=6,
        port=62535,
    )
    runtime = NodeRuntime(
        config,
        generator=SampleGenerator(GeneratorConfig(interval_ms=interval_ms, seed=11)),
        store=SampleStore(),
        local_ip="127.0.0.1",
        start_ms=time_ms(),
    )
    server = NodeServer(runtime, port=0, poll_s=0.02)
    server.start()
    return server


def free_port() -> int:
    probe = socket.socket()
    probe.bind(("127.0.0.1", 0))
    port = probe.getsockname()[1]
    probe.close()
    return port


# -- usage errors (exit 1) -------------------------------------------------------


def test_no_command_prints_usage(capsys):
    assert main([]) == 1
    assert "usage" in capsys.readouterr().err.lower()


@pytest.mark.parametrize(
    "argv",
    [
        ["frobnicate"],
        ["discover", "127.0.0.1", "--wat"],
        ["handshake", "127.0.0.1", "--id", "not-hex"],
        ["handshake", "127.0.0.1", "--location", "nowhere"],
        ["handshake", "127.0.0.1", "--port", "70000"],
        ["stream", "127.0.0.1", "--count", "0", "--port", "1"],
        ["fetch", "127.0.0.1", "2011-07-25T14:15:35Z", "--services", "", "--port", "1"],
        ["run", "--transport", "sim"],
        ["run", "--transport", "sim", "--scenario", "/no/such/file.owp"],
        ["run", "--transport", "tcp", "--mapping", "/no/such/map.tsv"],
    ],
)
def test_bad_invocations_exit_1(capsys, argv):
    assert main(argv) == 1
    assert capsys.readouterr().err != ""


def test_bad_port_env_exits_1(capsys, monkeypatch):
    monkeypatch.setenv("OWP_PORT", "sixty")
    assert main(["handshake", "127.0.0.1"]) == 1
    assert "OWP_PORT" in capsys.readouterr().err


def test_broken_scenario_names_the_line(capsys, tmp_path):
    path = tmp_path / "bad.owp"
    path.write_text("boot everything\n")
    assert main(["run", "--transport", "sim", "--scenario", str(path)]) == 1
    assert "line 1" in capsys.readouterr().err


# -- scripted simulation ---------------------------------------------------------


def test_sim_run_prints_the_trace(capsys, tmp_path):
    path = tmp_path / "pair.owp"
    path.write_text(SCENARIO)
    assert main(["run", "--transport", "sim", "--scenario", str(path)]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 4
    assert lines[0].startswith("t=0 n1->n2 send type=100 bytes=")
    assert all(line.startswith("t=") for line in lines)
    assert "type=101" in lines[-1]


def test_sim_until_cuts_the_run(capsys, tmp_path):
    path = tmp_path / "pair.owp"
    path.write_text(SCENARIO + "at 1000 n1 stream n2\n")
    assert main(["run", "--transport", "sim", "--scenario", str(path), "--until", "900"]) == 0
    short = len(capsys.readouterr().out.splitlines())
    assert main(["run", "--transport", "sim", "--scenario", str(path), "--until", "6000"]) == 0
    assert len(capsys.readouterr().out.splitlines()) > short


# -- one-shot operations over TCP --------------------------------------------------


def test_handshake_prints_the_greeting(capsys):
    server = start_server()
    try:
        code = main(["handshake", "127.0.0.1", "--port", str(server.port), "--keep-alive", "2000"])
        out = capsys.readouterr().out
        assert code == 0
        assert out.startswith('{ "OpenWeatherMessage"')
        assert '"Type" : 101' in out
    finally:
        server.stop()


def test_discover_prints_the_catalog(capsys):
    server = start_server()
    try:
        code = main(["discover", "127.0.0.1", "--port", str(server.port), "--keep-alive", "2000"])
        out = capsys.readouterr().out.strip()
        assert code == 0
        assert out == '{ "Services" : { "PRECIPITATION" : "RO", "PTU" : "RO", "WIND" : "RO" } }'
    finally:
        server.stop()


def test_stream_prints_count_payloads(capsys):
    server = start_server(interval_ms=100)
    try:
        code = main(
            ["stream", "127.0.0.1", "--port", str(server.port), "--count", "2", "--keep-alive", "2000"]
        )
        lines = capsys.readouterr().out.splitlines()
        assert code == 0
        assert len(lines) == 2
        assert all(line.startswith('{ "PRECIPITATION"') for line in lines)
    finally:
        server.stop()


def test_fetch_hit_prints_the_block(capsys):
    server = start_server(interval_ms=100)
    try:
        deadline = time.time() + 3.0
        while server.runtime.store.latest() is None and time.time() < deadline:
            time.sleep(0.02)
        sample = server.runtime.store.latest()
        assert sample is not None, "server never generated a sample"
        stamp = format_timestamp(sample.timestamp_ms)
        code = main(["fetch", "127.0.0.1", stamp, "--port", str(server.port), "--keep-alive", "2000"])
        out = capsys.readouterr().out
        assert code == 0
        assert out.startswith('{ "PRECIPITATION"')
    finally:
        server.stop()


def test_fetch_malformed_timestamp_is_a_clean_usage_error(capsys):
    server = start_server()
    try:
        code = main(["fetch", "127.0.0.1", "yesterday", "--port", str(server.port)])
    finally:
        server.stop()
    assert code == 1
    err = capsys.readouterr().err
    assert err.startswith("owp: ")
    assert "timestamp" in err


def test_fetch_miss_prints_status_and_exits_3(capsys):
    server = start_server()
    try:
        code = main(
            [
                "fetch",
                "127.0.0.1",
                "1999-01-01T00:00:00Z",
                "--port",
                str(server.port),
                "--keep-alive",
                "2000",
            ]
        )
        assert code == 3
        assert capsys.readouterr().out.strip() == "status 601"
    finally:
        server.stop()


# -- transport failures ------------------------------------------------------------


def test_connection_refused_exits_2(capsys):
    code = main(["handshake", "127.0.0.1", "--port", str(free_port()), "--keep-alive", "500"])
    assert code == 2
    assert "transport failure" in capsys.readouterr().err


def test_silent_peer_exits_4(capsys):
    listener = socket.socket()
    listener.bind(("127.0.0.1", 0))
    listener.listen(1)
    listener.settimeout(5.0)
    held = []

    def hold():
        try:
            conn, _ = listener.accept()
            held.append(conn)  # keep it open, never answer
        except OSError:
            pass

    keeper = threading.Thread(target=hold, daemon=True)
    keeper.start()
    try:
        port = listener.getsockname()[1]
        code = main(["handshake", "127.0.0.1", "--port", str(port), "--keep-alive", "100"])
        assert code == 4
        assert "timed out" in capsys.readouterr().err
    finally:
        listener.close()
        for conn in held:
            conn.close()
        keeper.join(timeout=2)
