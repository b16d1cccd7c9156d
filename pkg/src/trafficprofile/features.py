"""
Per-session features: traffic-volume statistics, application-layer facts
(HTTP or TLS) and payload-inspection counts, plus the domain name used for
enrichment.
"""

from __future__ import annotations

import csv
from collections import Counter
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Iterable, Iterator

from .capture import Transport
from .errors import NotHttp, NotTls
from .protocols.dpi import DpiScan, dpi_scan
from .protocols.http import looks_like_http_request, parse_http, parse_user_agent_os
from .protocols.tls import TlsVersion, looks_like_tls, parse_tls
from .sessions import Session

NA = "NA"
SESSION_CSV_SCHEMA_VERSION = 1

HTTP = "HTTP"
HTTPS = "HTTPS"
OTHER = "OTHER"


@dataclass(frozen=True)
class StatFeatures:
    tx_pkt_max: float = 0.0
    tx_pkt_min: float = 0.0
    tx_pkt_mean: float = 0.0
    tx_pkt_median: float = 0.0
    tx_pkt_var: float = 0.0
    rx_pkt_max: float = 0.0
    rx_pkt_min: float = 0.0
    rx_pkt_mean: float = 0.0
    rx_pkt_median: float = 0.0
    rx_pkt_var: float = 0.0
    bytes_total: int = 0
    bytes_tx: int = 0
    bytes_rx: int = 0
    tx_rx_ratio: float = 0.0


@dataclass(frozen=True)
class AppFeatures:
    protocol: str
    tls_version: TlsVersion | None = None
    cert_expired: bool | None = None
    cert_self_signed: bool | None = None
    cookie_count: int | None = None
    content_type: str | None = None
    os_version: str | None = None


@dataclass(frozen=True)
class DpiFeatures:
    form_count: int = 0
    has_email_field: bool = False
    has_username_field: bool = False
    has_password_field: bool = False
    downloaded_file_count: int = 0
    downloaded_file_types: tuple[str, ...] = ()
    json_docs: int = 0
    xml_docs: int = 0
    undecodable_bodies: int = 0

    @classmethod
    def from_scan(cls, scan: DpiScan) -> "DpiFeatures":
        return cls(
            form_count=scan.form_count,
            has_email_field=scan.has_email_field,
            has_username_field=scan.has_username_field,
            has_password_field=scan.has_password_field,
            downloaded_file_count=scan.downloaded_file_count,
            downloaded_file_types=tuple(sorted(scan.downloaded_file_types.elements())),
            json_docs=scan.document_types["json"],
            xml_docs=scan.document_types["xml"],
            undecodable_bodies=scan.undecodable_bodies,
        )


@dataclass(frozen=True)
class SessionFeatures:
    session_id: str
    subject_id: str
    transport: Transport
    server_port: int
    start_time: int
    stat: StatFeatures
    app: AppFeatures | None = None
    dpi: DpiFeatures | None = None
    domain_name: str | None = None

    @property
    def bytes_total(self) -> int:
        return self.stat.bytes_total

    @property
    def protocol(self) -> str:
        return self.app.protocol if self.app is not None else OTHER


def _describe(sizes: list[int]) -> tuple[float, float, float, float, float]:
    if not sizes:
        return 0.0, 0.0, 0.0, 0.0, 0.0
    n = len(sizes)
    ordered = sorted(sizes)
    mid = n // 2
    median = float(ordered[mid]) if n % 2 else (ordered[mid - 1] + ordered[mid]) / 2
    mean = sum(sizes) / n
    var = sum((x - mean) ** 2 for x in sizes) / n
    return float(ordered[-1]), float(ordered[0]), mean, median, var


def statistical_features(session: Session) -> StatFeatures:
    """Volume statistics over non-empty payload sizes, per direction."""
    tx = [p.payload_len for p in session.client_packets if p.payload_len]
    rx = [p.payload_len for p in session.server_packets if p.payload_len]
    bytes_tx, bytes_rx = sum(tx), sum(rx)
    return StatFeatures(
        *_describe(tx),
        *_describe(rx),
        bytes_total=bytes_tx + bytes_rx,
        bytes_tx=bytes_tx,
        bytes_rx=bytes_rx,
        tx_rx_ratio=bytes_tx / max(bytes_rx, 1),
    )


def _http_features(client: bytes, server: bytes):
    txs = parse_http(client, server)
    if not txs:
        return None, None, None
    cookie_count = max(tx.request_cookie_count for tx in txs)
    content_type = next((tx.response_content_type for tx in txs if tx.response_content_type), None)
    os_version = next((v for v in map(parse_user_agent_os, (tx.user_agent for tx in txs)) if v), None)
    host = next((tx.host for tx in txs if tx.host), None)
    app = AppFeatures(HTTP, cookie_count=cookie_count, content_type=content_type,
                      os_version=os_version)
    return app, DpiFeatures.from_scan(dpi_scan(txs)), host


def _tls_features(client: bytes, server: bytes, observed_at: int):
    summary = parse_tls(client, server, observed_at)
    app = AppFeatures(HTTPS, tls_version=summary.version, cert_expired=summary.cert_expired,
                      cert_self_signed=summary.cert_self_signed)
    return app, None, summary.sni


def detect_protocol(session: Session, client: bytes | None = None) -> str:
    """HTTP, HTTPS or OTHER; payload shape wins over the port number."""
    if session.transport is not Transport.TCP:
        return OTHER
    client = session.client_bytes() if client is None else client
    if looks_like_http_request(client):
        return HTTP
    if looks_like_tls(client):
        return HTTPS
    if session.server_port == 80:
        return HTTP
    if session.server_port == 443:
        return HTTPS
    return OTHER


def extract_session_features(session: Session) -> SessionFeatures:
    stat = statistical_features(session)
    client, server = session.client_bytes(), session.server_bytes()
    app = dpi = domain = None
    protocol = detect_protocol(session, client)
    try:
        if protocol == HTTP:
            app, dpi, domain = _http_features(client, server)
        elif protocol == HTTPS:
            app, dpi, domain = _tls_features(client, server, session.start_time)
    except (NotHttp, NotTls):
        app = dpi = domain = None
    return SessionFeatures(
        session_id=session.session_id,
        subject_id=session.subject_id,
        transport=session.transport,
        server_port=session.server_port,
        start_time=session.start_time,
        stat=stat,
        app=app,
        dpi=dpi,
        domain_name=domain,
    )


# --- CSV ------------------------------------------------------------------

_STAT_FIELDS = [f.name for f in fields(StatFeatures)]
_APP_FIELDS = [f.name for f in fields(AppFeatures)]
_DPI_FIELDS = [f.name for f in fields(DpiFeatures)]

SESSION_CSV_COLUMNS = (
    ["session_id", "subject_id", "transport", "server_port", "start_time", "domain_name"]
    + _STAT_FIELDS
    + ["app_" + n for n in _APP_FIELDS]
    + ["dpi_" + n for n in _DPI_FIELDS]
)


def _fmt(value) -> str:
    if value is None:
        return NA
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return "|".join(value)
    if hasattr(value, "value"):
        return str(value.value)
    return str(value)


def session_row(sf: SessionFeatures) -> list[str]:
    row = [sf.session_id, sf.subject_id, sf.transport.value, sf.server_port, sf.start_time,
           sf.domain_name]
    row += [getattr(sf.stat, n) for n in _STAT_FIELDS]
    row += [getattr(sf.app, n) if sf.app else None for n in _APP_FIELDS]
    row += [getattr(sf.dpi, n) if sf.dpi else None for n in _DPI_FIELDS]
    return [_fmt(v) for v in row]


def _opt(text: str, conv):
    return None if text == NA else conv(text)


def _bool(text: str) -> bool:
    return text == "1"


def session_from_row(rec: dict[str, str]) -> SessionFeatures:
    stat = StatFeatures(**{
        n: (int(rec[n]) if n.startswith("bytes_") else float(rec[n])) for n in _STAT_FIELDS
    })
    app = None
    if rec["app_protocol"] != NA:
        app = AppFeatures(
            protocol=rec["app_protocol"],
            tls_version=_opt(rec["app_tls_version"], TlsVersion),
            cert_expired=_opt(rec["app_cert_expired"], _bool),
            cert_self_signed=_opt(rec["app_cert_self_signed"], _bool),
            cookie_count=_opt(rec["app_cookie_count"], int),
            content_type=_opt(rec["app_content_type"], str),
            os_version=_opt(rec["app_os_version"], str),
        )
    dpi = None
    if rec["dpi_form_count"] != NA:
        types = rec["dpi_downloaded_file_types"]
        dpi = DpiFeatures(
            form_count=int(rec["dpi_form_count"]),
            has_email_field=_bool(rec["dpi_has_email_field"]),
            has_username_field=_bool(rec["dpi_has_username_field"]),
            has_password_field=_bool(rec["dpi_has_password_field"]),
            downloaded_file_count=int(rec["dpi_downloaded_file_count"]),
            downloaded_file_types=tuple(types.split("|")) if types not in ("", NA) else (),
            json_docs=int(rec["dpi_json_docs"]),
            xml_docs=int(rec["dpi_xml_docs"]),
            undecodable_bodies=int(rec["dpi_undecodable_bodies"]),
        )
    return SessionFeatures(
        session_id=rec["session_id"],
        subject_id=rec["subject_id"],
        transport=Transport(rec["transport"]),
        server_port=int(rec["server_port"]),
        start_time=int(rec["start_time"]),
        stat=stat,
        app=app,
        dpi=dpi,
        domain_name=_opt(rec["domain_name"], str),
    )


def write_session_csv(rows: Iterable[SessionFeatures], path: str | Path,
                      extra: dict[str, list[str]] | None = None) -> None:
    """Write session features; ``extra`` appends columns (name -> values)."""
    rows = list(rows)
    extra = extra or {}
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"#schema_version={SESSION_CSV_SCHEMA_VERSION}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SESSION_CSV_COLUMNS + list(extra))
        for i, sf in enumerate(rows):
            writer.writerow(session_row(sf) + [vals[i] for vals in extra.values()])


def read_csv_records(path: str | Path) -> Iterator[dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        yield from csv.DictReader(line for line in fh if not line.startswith("#"))


def read_session_csv(path: str | Path) -> list[SessionFeatures]:
    return [session_from_row(rec) for rec in read_csv_records(path)]


def download_types_counter(sf: SessionFeatures) -> Counter:
    return Counter(sf.dpi.downloaded_file_types) if sf.dpi else Counter()
