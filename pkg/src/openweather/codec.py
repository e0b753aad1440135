"""Wire format for OpenWeather messages.

Every message travelling between nodes is one JSON object with a single
top-level member, "OpenWeatherMessage".  Inside it sit the numeric "Type"
code, the fixed ten-field "MetaInfo" header, and at most one payload:
"Data" (weather measurements), "Info" (protocol-internal data) or
"Retrieve" (an on-demand query).

Encoding is canonical so each message has exactly one byte representation:
keys sorted alphabetically at every depth, ``" : "`` between key and value,
``", "`` between members, one space after ``{`` and before ``}``, and no
newline anywhere.  Measurement values travel as JSON strings so decimal
text survives untouched; the header numerics (Bandwidth, Keep-Alive,
Peers-Requested, Port, Update-Interval) and Type are JSON numbers.

The decoder is liberal: arbitrary whitespace and key order, numeric fields
quoted as strings, timestamps with or without the trailing "Z", and the
historical spellings of the on-demand query (key "Retrive", or the query
nested inside "Data").
"""

from __future__ import annotations

import ipaddress
import json
import re
from dataclasses import dataclass
from datetime import datetime, timezone
from enum import IntEnum

PROTOCOL_VERSION = "OpenWeather/1.0"
DEFAULT_PORT = 62535
DEFAULT_UPDATE_INTERVAL_MS = 120000
DEFAULT_PEERS_REQUESTED = 20
DEFAULT_KEEP_ALIVE_MS = 120000

SERVICE_PTU = "PTU"
SERVICE_WIND = "WIND"
SERVICE_PRECIPITATION = "PRECIPITATION"
SERVICES = (SERVICE_PTU, SERVICE_WIND, SERVICE_PRECIPITATION)
SERVICE_FLAGS = ("R", "O", "RO")


class ProtocolCode(IntEnum):
    """Registered message type codes (R = retrieval, S = status)."""

    HANDSHAKE = 100
    HANDSHAKE_S = 101
    SERVICES_AVAILABLE = 102
    SERVICES_AVAILABLE_R = 103
    SERVICES_AVAILABLE_S = 104
    LIST_PEERS_R = 105
    LIST_PEERS_S = 106
    LIST_PEERS = 107
    REAL_TIME_DATA = 200
    ON_DEMAND_DATA = 201
    STOP_REAL_TIME_DATA = 202
    REAL_TIME_DATA_R = 300
    ON_DEMAND_DATA_R = 301
    REAL_TIME_DATA_S = 500
    ON_DEMAND_DATA_S = 501
    UNEXPECTED_MESSAGE = 600
    SAMPLE_NOT_FOUND = 601
    SERVICE_UNAVAILABLE = 602


ERROR_CODES = range(600, 700)
_FIXED_CODES = frozenset(c.value for c in ProtocolCode if c.value < 600)


def is_registered(code: int) -> bool:
    """True for registry members; the whole 600..699 band counts."""
    return code in _FIXED_CODES or code in ERROR_CODES


class CodecError(ValueError):
    """Base class for wire-format failures."""


class ParseError(CodecError):
    """Input is not well-formed JSON."""

    def __init__(self, message: str, offset: int | None = None):
        super().__init__(message)
        self.offset = offset


class SchemaError(CodecError):
    """JSON is well-formed but a required member is missing or mistyped."""


class UnknownCodeError(CodecError):
    """The Type code is not in the registry."""

    def __init__(self, code: int):
        super().__init__("unknown type code %r" % (code,))
        self.code = code


class EncodeError(CodecError):
    """The envelope violates an invariant and cannot be emitted."""


_TIMESTAMP_RE = re.compile(r"^(\d{4})-(\d{2})-(\d{2})T(\d{2}):(\d{2}):(\d{2})(Z?)$")
_NODE_ID_RE = re.compile(r"^[0-9a-f]{64}$")
_ZONE_RE = re.compile(r"^\d{1,2}[A-Z]$")
_VERSION_RE = re.compile(r"^OpenWeather/\d+\.\d+$")


def format_timestamp(epoch_ms: int) -> str:
    """Render epoch milliseconds as RFC 3339 UTC at second precision."""
    moment = datetime.fromtimestamp(epoch_ms // 1000, tz=timezone.utc)
    return moment.strftime("%Y-%m-%dT%H:%M:%SZ")


def parse_timestamp(text: str) -> int:
    """Parse an RFC 3339 UTC timestamp (trailing Z optional) to epoch ms."""
    found = _TIMESTAMP_RE.match(text)
    if found is None:
        raise ValueError("malformed timestamp %r" % (text,))
    year, month, day, hour, minute, second = (int(g) for g in found.groups()[:6])
    moment = datetime(year, month, day, hour, minute, second, tzinfo=timezone.utc)
    return int(moment.timestamp()) * 1000


def _normalized_timestamp(text: str) -> str:
    # store the emitted form (with Z) whenever the text parses at all
    if isinstance(text, str):
        found = _TIMESTAMP_RE.match(text)
        if found is not None and not found.group(7):
            return text + "Z"
    return text


@dataclass(frozen=True)
class UtmLocation:
    """Station position as UTM northing, easting and zone (e.g. "35V")."""

    northing: int
    easting: int
    zone: str

    def render(self) -> str:
        return "%d %d %s" % (self.northing, self.easting, self.zone)

    @classmethod
    def parse(cls, text: str) -> "UtmLocation":
        parts = text.split()
        if len(parts) != 3:
            raise ValueError("location needs three tokens: %r" % (text,))
        try:
            northing, easting = int(parts[0], 10), int(parts[1], 10)
        except ValueError:
            raise ValueError("location coordinates must be integers: %r" % (text,))
        return cls(northing, easting, parts[2])


@dataclass(frozen=True)
class MetaInfo:
    """The fixed ten-field header every message carries."""

    node_id: str
    peer_ip: str
    location: UtmLocation
    bandwidth: int
    timestamp: str
    port: int = DEFAULT_PORT
    update_interval_ms: int = DEFAULT_UPDATE_INTERVAL_MS
    peers_requested: int = DEFAULT_PEERS_REQUESTED
    keep_alive_ms: int = DEFAULT_KEEP_ALIVE_MS
    version: str = PROTOCOL_VERSION

    def __post_init__(self):
        object.__setattr__(self, "timestamp", _normalized_timestamp(self.timestamp))


@dataclass(frozen=True)
class PtuBlock:
    """Pressure, temperature and humidity readings as decimal text."""

    air_pressure: str = ""
    air_temperature: str = ""
    relative_humidity: str = ""


@dataclass(frozen=True)
class WindBlock:
    """Wind direction (degrees) and speed (m/s), min/ave/max each."""

    direction_min: str = ""
    direction_ave: str = ""
    direction_max: str = ""
    speed_min: str = ""
    speed_ave: str = ""
    speed_max: str = ""


@dataclass(frozen=True)
class PrecipitationBlock:
    """Rain and hail accumulation/duration/intensity/peak readings."""

    rain_accumulation: str = "0"
    rain_duration: str = "0"
    rain_intensity: str = "0"
    rain_peak: str = "0"
    hail_accumulation: str = "0"
    hail_duration: str = "0"
    hail_intensity: str = "0"
    hail_peak: str = "0"


@dataclass(frozen=True)
class WeatherData:
    """The "Data" payload: whichever measurement groups the station has."""

    ptu: PtuBlock | None = None
    wind: WindBlock | None = None
    precipitation: PrecipitationBlock | None = None

    def is_empty(self) -> bool:
        return self.ptu is None and self.wind is None and self.precipitation is None


@dataclass(frozen=True)
class PeerEntry:
    """One row of a peer listing: how to reach a node."""

    peer_ip: str
    port: int
    bandwidth: int


@dataclass(frozen=True)
class InfoPayload:
    """Protocol-internal payload: a service catalog or a peer listing."""

    services: dict | None = None  # service name -> "R" | "O" | "RO"
    peers: dict | None = None  # node id -> PeerEntry


@dataclass(frozen=True)
class RetrieveRequest:
    """On-demand query: which service groups, at which exact timestamp."""

    services: tuple
    timestamp: str

    def __post_init__(self):
        object.__setattr__(self, "services", tuple(self.services))
        object.__setattr__(self, "timestamp", _normalized_timestamp(self.timestamp))


@dataclass(frozen=True)
class Envelope:
    """A complete message: type code, header, and at most one payload."""

    type_code: int
    meta: MetaInfo
    data: WeatherData | None = None
    info: InfoPayload | None = None
    retrieve: RetrieveRequest | None = None


@dataclass(frozen=True)
class ValidationReport:
    """Everything validate() found wrong; empty means the envelope is clean."""

    problems: tuple

    @property
    def ok(self) -> bool:
        return not self.problems


# codes that must carry a specific payload; everything else carries none
_PAYLOAD_RULE = {
    ProtocolCode.SERVICES_AVAILABLE_R: "services",
    ProtocolCode.LIST_PEERS_R: "peers",
    ProtocolCode.ON_DEMAND_DATA: "retrieve",
    ProtocolCode.REAL_TIME_DATA_R: "data",
    ProtocolCode.ON_DEMAND_DATA_R: "data",
}


def validate(envelope: Envelope) -> ValidationReport:
    """Check every invariant; returns a report rather than raising."""
    problems = []
    if not isinstance(envelope.type_code, int) or not is_registered(envelope.type_code):
        problems.append("unknown type code %r" % (envelope.type_code,))
    problems.extend(_meta_problems(envelope.meta))
    payloads = [p for p in (envelope.data, envelope.info, envelope.retrieve) if p is not None]
    if len(payloads) > 1:
        problems.append("more than one payload present")
    if envelope.data is not None:
        problems.extend(_data_problems(envelope.data))
    if envelope.info is not None:
        problems.extend(_info_problems(envelope.info))
    if envelope.retrieve is not None:
        problems.extend(_retrieve_problems(envelope.retrieve))
    problems.extend(_payload_rule_problems(envelope))
    return ValidationReport(tuple(problems))


def _payload_rule_problems(envelope: Envelope) -> list:
    code = envelope.type_code
    if not isinstance(code, int) or not is_registered(code):
        return []
    required = _PAYLOAD_RULE.get(code)
    problems = []
    if required is None:
        if envelope.data is not None or envelope.info is not None or envelope.retrieve is not None:
            problems.append("unexpected payload for code %d" % code)
        return problems
    if required == "data" and envelope.data is None:
        problems.append("payload missing for retrieval code %d" % code)
    elif required == "retrieve" and envelope.retrieve is None:
        problems.append("payload missing for retrieval code %d" % code)
    elif required == "services":
        if envelope.info is None or envelope.info.services is None:
            problems.append("payload missing for retrieval code %d" % code)
    elif required == "peers":
        if envelope.info is None or envelope.info.peers is None:
            problems.append("payload missing for retrieval code %d" % code)
    return problems


def _meta_problems(meta: MetaInfo) -> list:
    problems = []
    if not isinstance(meta.node_id, str) or not _NODE_ID_RE.match(meta.node_id):
        problems.append("node id is not 64 lowercase hex characters")
    try:
        ipaddress.ip_address(meta.peer_ip)
    except ValueError:
        problems.append("peer ip %r is not a valid address" % (meta.peer_ip,))
    if not isinstance(meta.port, int) or not 1 <= meta.port <= 65535:
        problems.append("port %r out of range 1..65535" % (meta.port,))
    if not isinstance(meta.location, UtmLocation):
        problems.append("location is not a UTM triple")
    else:
        if not isinstance(meta.location.northing, int) or meta.location.northing < 0:
            problems.append("location northing negative")
        if not isinstance(meta.location.easting, int) or meta.location.easting < 0:
            problems.append("location easting negative")
        if not isinstance(meta.location.zone, str) or not _ZONE_RE.match(meta.location.zone):
            problems.append("location zone malformed")
    if not isinstance(meta.update_interval_ms, int) or meta.update_interval_ms <= 0:
        problems.append("update interval not positive")
    if not isinstance(meta.peers_requested, int) or meta.peers_requested < 1:
        problems.append("peers_requested below 1")
    elif meta.peers_requested > 100:
        problems.append("peers_requested above 100")
    if not isinstance(meta.keep_alive_ms, int) or meta.keep_alive_ms <= 0:
        problems.append("keep alive not positive")
    if not isinstance(meta.bandwidth, int) or isinstance(meta.bandwidth, bool) or meta.bandwidth < 0:
        problems.append("bandwidth below 0")
    try:
        parse_timestamp(meta.timestamp)
    except (TypeError, ValueError):
        problems.append("timestamp malformed")
    if not isinstance(meta.version, str) or not _VERSION_RE.match(meta.version):
        problems.append("version malformed")
    return problems


def _data_problems(data: WeatherData) -> list:
    if data.is_empty():
        return ["weather data empty"]
    problems = []
    for group in (data.ptu, data.wind, data.precipitation):
        if group is None:
            continue
        for name, value in vars(group).items():
            if not isinstance(value, str):
                problems.append("measurement %s is not a string" % name)
    return problems


def _info_problems(info: InfoPayload) -> list:
    problems = []
    if info.services is None and info.peers is None:
        problems.append("info payload empty")
    if info.services is not None and info.peers is not None:
        problems.append("info payload carries both variants")
    if info.services is not None:
        if not info.services:
            problems.append("service catalog empty")
        for name, flags in info.services.items():
            if name not in SERVICES:
                problems.append("unknown service %r" % (name,))
            if flags not in SERVICE_FLAGS:
                problems.append("bad service flags %r" % (flags,))
    if info.peers is not None:
        if len(info.peers) > 100:
            problems.append("peer listing above 100 entries")
        for node_id, entry in info.peers.items():
            if not isinstance(node_id, str) or not _NODE_ID_RE.match(node_id):
                problems.append("peer id %r is not 64 lowercase hex characters" % (node_id,))
            if not isinstance(entry, PeerEntry):
                problems.append("peer entry for %r malformed" % (node_id,))
                continue
            if not isinstance(entry.port, int) or not 1 <= entry.port <= 65535:
                problems.append("peer port %r out of range" % (entry.port,))
            if not isinstance(entry.bandwidth, int) or entry.bandwidth < 0:
                problems.append("peer bandwidth below 0")
            try:
                ipaddress.ip_address(entry.peer_ip)
            except ValueError:
                problems.append("peer ip %r is not a valid address" % (entry.peer_ip,))
    return problems


def _retrieve_problems(retrieve: RetrieveRequest) -> list:
    problems = []
    if not retrieve.services:
        problems.append("retrieve services empty")
    if len(set(retrieve.services)) != len(retrieve.services):
        problems.append("retrieve services duplicated")
    for name in retrieve.services:
        if name not in SERVICES:
            problems.append("unknown service %r" % (name,))
    try:
        parse_timestamp(retrieve.timestamp)
    except (TypeError, ValueError):
        problems.append("retrieve timestamp malformed")
    return problems


def _render(value) -> str:
    if isinstance(value, bool):
        raise EncodeError("boolean values never appear on the wire")
    if isinstance(value, dict):
        members = ", ".join(
            "%s : %s" % (json.dumps(key, ensure_ascii=False), _render(value[key]))
            for key in sorted(value)
        )
        return "{ %s }" % members if members else "{ }"
    if isinstance(value, (list, tuple)):
        items = ", ".join(_render(item) for item in value)
        return "[ %s ]" % items if items else "[ ]"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, str):
        return json.dumps(value, ensure_ascii=False)
    raise EncodeError("cannot encode value of type %s" % type(value).__name__)


def _meta_to_wire(meta: MetaInfo) -> dict:
    return {
        "ID": meta.node_id,
        "Peer-IP": meta.peer_ip,
        "Port": meta.port,
        "Location": meta.location.render(),
        "Update-Interval": meta.update_interval_ms,
        "Peers-Requested": meta.peers_requested,
        "Keep-Alive": meta.keep_alive_ms,
        "Bandwidth": meta.bandwidth,
        "Timestamp": meta.timestamp,
        "Version": meta.version,
    }


def _data_to_wire(data: WeatherData) -> dict:
    wire = {}
    if data.precipitation is not None:
        p = data.precipitation
        wire["PRECIPITATION"] = {
            "Hail": {
                "accumulation": p.hail_accumulation,
                "duration": p.hail_duration,
                "intensity": p.hail_intensity,
                "peak": p.hail_peak,
            },
            "Rain": {
                "accumulation": p.rain_accumulation,
                "duration": p.rain_duration,
                "intensity": p.rain_intensity,
                "peak": p.rain_peak,
            },
        }
    if data.ptu is not None:
        wire["PTU"] = {
            "Air-Pressure": data.ptu.air_pressure,
            "Air-Temperature": data.ptu.air_temperature,
            "Relative-Humidity": data.ptu.relative_humidity,
        }
    if data.wind is not None:
        wire["WIND"] = {
            "Direction": {
                "ave": data.wind.direction_ave,
                "max": data.wind.direction_max,
                "min": data.wind.direction_min,
            },
            "Speed": {
                "ave": data.wind.speed_ave,
                "max": data.wind.speed_max,
                "min": data.wind.speed_min,
            },
        }
    return wire


def _info_to_wire(info: InfoPayload) -> dict:
    if info.services is not None:
        return {"Services": dict(info.services)}
    entries = {}
    for node_id, entry in info.peers.items():
        entries[node_id] = {
            "Peer-IP": entry.peer_ip,
            "Port": entry.port,
            "Bandwidth": entry.bandwidth,
        }
    return {"Peers": entries}


def encode(envelope: Envelope) -> bytes:
    """Render the canonical single-line wire form, without framing newline."""
    report = validate(envelope)
    if not report.ok:
        raise EncodeError("refusing to encode: " + "; ".join(report.problems))
    body = {"Type": envelope.type_code, "MetaInfo": _meta_to_wire(envelope.meta)}
    if envelope.data is not None:
        body["Data"] = _data_to_wire(envelope.data)
    if envelope.info is not None:
        body["Info"] = _info_to_wire(envelope.info)
    if envelope.retrieve is not None:
        body["Retrieve"] = {
            "D": list(envelope.retrieve.services),
            "Timestamp": envelope.retrieve.timestamp,
        }
    return _render({"OpenWeatherMessage": body}).encode("utf-8")


def payload_fragment(envelope: Envelope) -> str | None:
    """Canonical text of just the payload member, or None for header-only."""
    if envelope.data is not None:
        return _render(_data_to_wire(envelope.data))
    if envelope.info is not None:
        return _render(_info_to_wire(envelope.info))
    if envelope.retrieve is not None:
        return _render({"D": list(envelope.retrieve.services), "Timestamp": envelope.retrieve.timestamp})
    return None


def _as_int(value, name: str) -> int:
    if isinstance(value, bool):
        raise SchemaError('"%s" is not an integer' % name)
    if isinstance(value, int):
        return value
    if isinstance(value, str):
        try:
            return int(value, 10)
        except ValueError:
            raise SchemaError('"%s" is not an integer' % name)
    raise SchemaError('"%s" is not an integer' % name)


def _as_str(value, name: str) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, int) and not isinstance(value, bool):
        return str(value)
    raise SchemaError('"%s" is not a string' % name)


def _require(mapping: dict, key: str, where: str):
    if key not in mapping:
        raise SchemaError('missing "%s" member in %s' % (key, where))
    return mapping[key]


def _meta_from_wire(member) -> MetaInfo:
    if not isinstance(member, dict):
        raise SchemaError('"MetaInfo" is not an object')
    location_text = _as_str(_require(member, "Location", "MetaInfo"), "Location")
    try:
        location = UtmLocation.parse(location_text)
    except ValueError as exc:
        raise SchemaError('"Location" malformed: %s' % exc)
    return MetaInfo(
        node_id=_as_str(_require(member, "ID", "MetaInfo"), "ID"),
        peer_ip=_as_str(_require(member, "Peer-IP", "MetaInfo"), "Peer-IP"),
        location=location,
        bandwidth=_as_int(_require(member, "Bandwidth", "MetaInfo"), "Bandwidth"),
        timestamp=_as_str(_require(member, "Timestamp", "MetaInfo"), "Timestamp"),
        port=_as_int(_require(member, "Port", "MetaInfo"), "Port"),
        update_interval_ms=_as_int(_require(member, "Update-Interval", "MetaInfo"), "Update-Interval"),
        peers_requested=_as_int(_require(member, "Peers-Requested", "MetaInfo"), "Peers-Requested"),
        keep_alive_ms=_as_int(_require(member, "Keep-Alive", "MetaInfo"), "Keep-Alive"),
        version=_as_str(_require(member, "Version", "MetaInfo"), "Version"),
    )


def _group_values(member, where: str) -> dict:
    if not isinstance(member, dict):
        raise SchemaError('"%s" is not an object' % where)
    return {key: _as_str(value, key) for key, value in member.items() if not isinstance(value, dict)}


def _data_from_wire(member) -> WeatherData | None:
    if not isinstance(member, dict):
        raise SchemaError('"Data" is not an object')
    ptu = wind = precipitation = None
    if "PTU" in member:
        values = _group_values(member["PTU"], "PTU")
        ptu = PtuBlock(
            air_pressure=values.get("Air-Pressure", ""),
            air_temperature=values.get("Air-Temperature", ""),
            relative_humidity=values.get("Relative-Humidity", ""),
        )
    if "WIND" in member:
        group = member["WIND"]
        if not isinstance(group, dict):
            raise SchemaError('"WIND" is not an object')
        direction = _group_values(group.get("Direction", {}), "Direction")
        speed = _group_values(group.get("Speed", {}), "Speed")
        wind = WindBlock(
            direction_min=direction.get("min", ""),
            direction_ave=direction.get("ave", ""),
            direction_max=direction.get("max", ""),
            speed_min=speed.get("min", ""),
            speed_ave=speed.get("ave", ""),
            speed_max=speed.get("max", ""),
        )
    if "PRECIPITATION" in member:
        group = member["PRECIPITATION"]
        if not isinstance(group, dict):
            raise SchemaError('"PRECIPITATION" is not an object')
        rain = _group_values(group.get("Rain", {}), "Rain")
        hail = _group_values(group.get("Hail", {}), "Hail")
        precipitation = PrecipitationBlock(
            rain_accumulation=rain.get("accumulation", "0"),
            rain_duration=rain.get("duration", "0"),
            rain_intensity=rain.get("intensity", "0"),
            rain_peak=rain.get("peak", "0"),
            hail_accumulation=hail.get("accumulation", "0"),
            hail_duration=hail.get("duration", "0"),
            hail_intensity=hail.get("intensity", "0"),
            hail_peak=hail.get("peak", "0"),
        )
    if ptu is None and wind is None and precipitation is None:
        return None
    return WeatherData(ptu=ptu, wind=wind, precipitation=precipitation)


def _info_from_wire(member) -> InfoPayload:
    if not isinstance(member, dict):
        raise SchemaError('"Info" is not an object')
    if "Services" in member and "Peers" in member:
        raise SchemaError('"Info" carries both a catalog and a listing')
    if "Services" in member:
        catalog = member["Services"]
        if not isinstance(catalog, dict):
            raise SchemaError('"Services" is not an object')
        return InfoPayload(services={k: _as_str(v, k) for k, v in catalog.items()})
    if "Peers" in member:
        listing = member["Peers"]
        if not isinstance(listing, dict):
            raise SchemaError('"Peers" is not an object')
        peers = {}
        for node_id, raw in listing.items():
            if not isinstance(raw, dict):
                raise SchemaError("peer entry %r is not an object" % (node_id,))
            peers[node_id] = PeerEntry(
                peer_ip=_as_str(_require(raw, "Peer-IP", "peer entry"), "Peer-IP"),
                port=_as_int(_require(raw, "Port", "peer entry"), "Port"),
                bandwidth=_as_int(_require(raw, "Bandwidth", "peer entry"), "Bandwidth"),
            )
        return InfoPayload(peers=peers)
    raise SchemaError('"Info" carries neither "Services" nor "Peers"')


def _retrieve_from_wire(member) -> RetrieveRequest:
    if not isinstance(member, dict):
        raise SchemaError('"Retrieve" is not an object')
    wanted = member.get("D", [])
    if isinstance(wanted, str):
        wanted = [wanted]
    if not isinstance(wanted, list):
        raise SchemaError('"D" is not a list of service names')
    services = tuple(_as_str(item, "D") for item in wanted)
    timestamp = _as_str(_require(member, "Timestamp", "Retrieve"), "Timestamp")
    return RetrieveRequest(services=services, timestamp=timestamp)


def decode(raw) -> Envelope:
    """Parse wire bytes (or text) into an Envelope.

    Raises ParseError for bad JSON, SchemaError for missing or mistyped
    members, UnknownCodeError for a Type outside the registry.
    """
    if isinstance(raw, (bytes, bytearray)):
        try:
            text = raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ParseError("not valid UTF-8: %s" % exc, offset=exc.start)
    else:
        text = raw
    try:
        tree = json.loads(text, parse_float=str)
    except json.JSONDecodeError as exc:
        raise ParseError("not valid JSON at offset %d: %s" % (exc.pos, exc.msg), offset=exc.pos)
    if not isinstance(tree, dict) or "OpenWeatherMessage" not in tree:
        raise SchemaError('missing "OpenWeatherMessage" member')
    body = tree["OpenWeatherMessage"]
    if not isinstance(body, dict):
        raise SchemaError('"OpenWeatherMessage" is not an object')
    code = _as_int(_require(body, "Type", "OpenWeatherMessage"), "Type")
    if not is_registered(code):
        raise UnknownCodeError(code)
    meta = _meta_from_wire(_require(body, "MetaInfo", "OpenWeatherMessage"))

    data_member = body.get("Data")
    retrieve_member = body.get("Retrieve", body.get("Retrive"))
    if isinstance(data_member, dict) and retrieve_member is None:
        nested = data_member.get("Retrieve", data_member.get("Retrive"))
        if nested is not None:
            retrieve_member = nested
            data_member = {k: v for k, v in data_member.items() if k not in ("Retrieve", "Retrive")}

    data = _data_from_wire(data_member) if data_member is not None else None
    info = _info_from_wire(body["Info"]) if "Info" in body else None
    retrieve = _retrieve_from_wire(retrieve_member) if retrieve_member is not None else None
    return Envelope(type_code=code, meta=meta, data=data, info=info, retrieve=retrieve)
