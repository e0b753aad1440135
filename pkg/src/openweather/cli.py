"""Operator command line.

Subcommands::

    owp run [--transport tcp|sim] ...      long-running node or scripted sim
    owp handshake HOST [--port N]          open a session, print the greeting
    owp discover HOST                      print the peer's service catalog
    owp peers HOST                         print the peer's peer listing
    owp stream HOST [--count N]            print N real-time data payloads
    owp fetch HOST TIMESTAMP [--services]  print one stored data payload

All printed JSON uses the canonical wire rendering, so output is
diff-stable across runs with fixed inputs.  Exit codes: 0 success,
1 usage, 2 transport failure, 3 protocol status (6xx), 4 timeout.
"""

from __future__ import annotations

import argparse
import os
import signal
import sys
import threading

from .codec import DEFAULT_PORT, EncodeError, UtmLocation, encode, payload_fragment
from .engine import NodeConfig, default_services
from .identity import is_node_id, random_node_id
from .node import NodeRuntime
from .peers import BootstrapError, load_bootstrap
from .scenario import DEFAULT_LOCATION, ScenarioError, SimRunner, parse_scenario
from .sensors import GeneratorConfig, SampleGenerator, SampleStore, VendorLineSource
from .tcpnet import NodeServer, PeerClient, ProtocolFault, time_ms
from .vendor import MappingError, load_field_map

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_TRANSPORT = 2
EXIT_PROTOCOL = 3
EXIT_TIMEOUT = 4


class UsageError(ValueError):
    """Bad invocation; reported on stderr with exit code 1."""


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad flags; the contract reserves 2 for transport
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError("%s: %s" % (self.prog, message))


def _default_port() -> int:
    raw = os.environ.get("OWP_PORT")
    if raw is None:
        return DEFAULT_PORT
    try:
        return int(raw, 10)
    except ValueError:
        raise UsageError("OWP_PORT is not an integer: %r" % raw)


def _node_flags(parser) -> None:
    parser.add_argument("--id", help="64-hex node id (default: random)")
    parser.add_argument("--ip", default="127.0.0.1", help="advertised IP address")
    parser.add_argument("--location", default=DEFAULT_LOCATION, metavar='"N E ZONE"')
    parser.add_argument("--bandwidth", type=int, default=6, help="bandwidth class 0-6")
    parser.add_argument("--keep-alive", type=int, default=120000, metavar="MS")
    parser.add_argument("--update-interval", type=int, default=120000, metavar="MS")
    parser.add_argument("--peers-requested", type=int, default=20, metavar="N")
    parser.add_argument("--port", type=int, default=None, help="port (default: OWP_PORT or 62535)")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("-v", "--verbose", action="count", default=0)


def build_parser() -> _Parser:
    parser = _Parser(prog="owp", description="OpenWeather node and client operations")
    commands = parser.add_subparsers(dest="command", metavar="COMMAND")

    run = commands.add_parser("run", parents=[], help="run a node (tcp) or a scripted sim")
    _node_flags(run)
    run.add_argument("--transport", choices=("tcp", "sim"), default="tcp")
    run.add_argument("--scenario", metavar="FILE", help="scenario script (sim transport)")
    run.add_argument("--until", type=int, default=None, metavar="MS", help="sim horizon")
    run.add_argument("--host", default="127.0.0.1", help="bind address (tcp)")
    run.add_argument("--bootstrap", metavar="FILE", help="super-node list to preload")
    run.add_argument("--interval", type=int, default=3000, metavar="MS", help="sensor cadence")
    run.add_argument("--vendor-input", metavar="FILE", help="replay instrument lines as samples")
    run.add_argument("--mapping", metavar="FILE", help="extra vendor field mappings (TSV)")

    for name, extra in (
        ("handshake", ()),
        ("discover", ()),
        ("peers", ()),
        ("stream", ("count",)),
        ("fetch", ("timestamp", "services")),
    ):
        sub = commands.add_parser(name, help="one-shot %s against a node" % name)
        sub.add_argument("host", help="target host")
        _node_flags(sub)
        if "count" in extra:
            sub.add_argument("--count", type=int, default=3, help="samples to read")
        if "timestamp" in extra:
            sub.add_argument("timestamp", help="stored sample time (RFC 3339)")
        if "services" in extra:
            sub.add_argument("--services", default="PTU,WIND,PRECIPITATION", metavar="A,B")
    return parser


def _build_config(args) -> NodeConfig:
    if args.id is not None and not is_node_id(args.id):
        raise UsageError("--id must be 64 lowercase hex characters")
    try:
        location = UtmLocation.parse(args.location)
    except ValueError as exc:
        raise UsageError("--location: %s" % exc)
    port = args.port if args.port is not None else _default_port()
    if not 1 <= port <= 65535:
        raise UsageError("port out of range: %d" % port)
    return NodeConfig(
        node_id=args.id or random_node_id(),
        location=location,
        bandwidth=args.bandwidth,
        port=port,
        advertise_ip=args.ip,
        update_interval_ms=args.update_interval,
        peers_requested=args.peers_requested,
        keep_alive_ms=args.keep_alive,
        services=default_services(),
    )


# -- run ------------------------------------------------------------------------


def _run_sim(args) -> int:
    if not args.scenario:
        raise UsageError("sim transport needs --scenario FILE")
    try:
        with open(args.scenario, "r", encoding="utf-8") as handle:
            text = handle.read()
    except OSError as exc:
        raise UsageError("cannot read scenario: %s" % exc)
    try:
        runner = SimRunner(parse_scenario(text))
        trace = runner.run(until_ms=args.until)
    except ScenarioError as exc:
        raise UsageError(str(exc))
    for event in trace:
        print(event.render())
    return EXIT_OK


def _sample_source(args):
    if args.vendor_input is None:
        if args.mapping is not None:
            raise UsageError("--mapping needs --vendor-input")
        config = GeneratorConfig(interval_ms=args.interval, seed=args.seed)
        return SampleGenerator(config)
    field_map = None
    if args.mapping is not None:
        try:
            field_map = load_field_map(args.mapping)
        except (OSError, MappingError) as exc:
            raise UsageError("--mapping: %s" % exc)
    try:
        with open(args.vendor_input, "r", encoding="utf-8") as handle:
            lines = handle.readlines()
    except OSError as exc:
        raise UsageError("cannot read vendor input: %s" % exc)
    return VendorLineSource(lines, interval_ms=args.interval, field_map=field_map)


def _run_tcp(args) -> int:
    config = _build_config(args)
    runtime = NodeRuntime(
        config,
        generator=_sample_source(args),
        store=SampleStore(),
        local_ip=args.ip,
        start_ms=time_ms(),  # anchor sample/sweep timers to the wall clock
    )
    if args.bootstrap:
        try:
            for record in load_bootstrap(args.bootstrap):
                runtime.engine.peer_table.upsert(record)
        except (OSError, BootstrapError) as exc:
            raise UsageError("--bootstrap: %s" % exc)
    server = NodeServer(runtime, host=args.host, port=config.port)
    try:
        server.start()
    except OSError as exc:
        print("owp: cannot listen on %s:%d: %s" % (args.host, config.port, exc), file=sys.stderr)
        return EXIT_TRANSPORT
    if args.verbose:
        print("owp: listening on %s:%d" % (args.host, server.port), file=sys.stderr)
    stop = threading.Event()
    try:
        signal.signal(signal.SIGTERM, lambda signum, frame: stop.set())
    except ValueError:
        pass  # only the main thread may set handlers
    try:
        while not stop.is_set():
            stop.wait(0.2)
    except KeyboardInterrupt:
        pass
    finally:
        server.stop()
    return EXIT_OK


def cmd_run(args) -> int:
    if args.transport == "sim":
        return _run_sim(args)
    return _run_tcp(args)


# -- one-shot client operations ---------------------------------------------------


def _client(args) -> PeerClient:
    config = _build_config(args)
    timeout_s = max(0.05, 2 * args.keep_alive / 1000.0)
    port = args.port if args.port is not None else _default_port()
    return PeerClient(args.host, port, config, timeout_s=timeout_s)


def _print_payload(envelope) -> None:
    fragment = payload_fragment(envelope)
    print(fragment if fragment is not None else encode(envelope).decode("utf-8"))


def cmd_handshake(args) -> int:
    client = _client(args)
    try:
        reply = client.handshake()
        print(encode(reply).decode("utf-8"))
    finally:
        client.close()
    return EXIT_OK


def cmd_discover(args) -> int:
    client = _client(args)
    try:
        client.handshake()
        _print_payload(client.services())
    finally:
        client.close()
    return EXIT_OK


def cmd_peers(args) -> int:
    client = _client(args)
    try:
        client.handshake()
        _print_payload(client.peers())
    finally:
        client.close()
    return EXIT_OK


def cmd_stream(args) -> int:
    if args.count < 1:
        raise UsageError("--count must be positive")
    client = _client(args)
    try:
        client.handshake()
        for envelope in client.stream(args.count):
            _print_payload(envelope)
        client.stop()
    finally:
        client.close()
    return EXIT_OK


def cmd_fetch(args) -> int:
    services = [name for name in args.services.split(",") if name]
    if not services:
        raise UsageError("--services must name at least one service")
    client = _client(args)
    try:
        client.handshake()
        _print_payload(client.fetch(services, args.timestamp))
    finally:
        client.close()
    return EXIT_OK


_COMMANDS = {
    "run": cmd_run,
    "handshake": cmd_handshake,
    "discover": cmd_discover,
    "peers": cmd_peers,
    "stream": cmd_stream,
    "fetch": cmd_fetch,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_usage(sys.stderr)
            return EXIT_USAGE
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print("owp: %s" % exc, file=sys.stderr)
        return EXIT_USAGE
    except EncodeError as exc:
        # client-side validation refused the request before it hit the wire
        print("owp: %s" % exc, file=sys.stderr)
        return EXIT_USAGE
    except ProtocolFault as fault:
        print("status %d" % fault.code)
        return EXIT_PROTOCOL
    except TimeoutError:
        print("owp: timed out waiting for the peer", file=sys.stderr)
        return EXIT_TIMEOUT
    except (ConnectionError, OSError) as exc:
        print("owp: transport failure: %s" % exc, file=sys.stderr)
        return EXIT_TRANSPORT


if __name__ == "__main__":
    sys.exit(main())
