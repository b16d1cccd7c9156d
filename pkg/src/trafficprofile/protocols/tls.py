"""
SSL/TLS handshake inspection (SSL 3.0 through TLS 1.2).

Only the cleartext part of the handshake is read: ClientHello (SNI,
offered version), ServerHello (negotiated version) and the server's
Certificate message, whose leaf is checked for expiry and self-signing.
"""

from __future__ import annotations

import datetime as dt
import enum
import logging
import struct
from dataclasses import dataclass

from cryptography import x509

from ..errors import NotTls

log = logging.getLogger(__name__)

CONTENT_CHANGE_CIPHER_SPEC = 0x14
CONTENT_ALERT = 0x15
CONTENT_HANDSHAKE = 0x16
CONTENT_APPLICATION_DATA = 0x17

HS_CLIENT_HELLO = 1
HS_SERVER_HELLO = 2
HS_CERTIFICATE = 11

EXT_SERVER_NAME = 0
EXT_SUPPORTED_VERSIONS = 43


class TlsVersion(str, enum.Enum):
    SSL3 = "SSL3"
    TLS1_0 = "TLS1_0"
    TLS1_1 = "TLS1_1"
    TLS1_2 = "TLS1_2"
    UNKNOWN = "UNKNOWN"


_VERSIONS = {
    0x0300: TlsVersion.SSL3,
    0x0301: TlsVersion.TLS1_0,
    0x0302: TlsVersion.TLS1_1,
    0x0303: TlsVersion.TLS1_2,
}


def version_from_wire(value: int) -> TlsVersion:
    return _VERSIONS.get(value, TlsVersion.UNKNOWN)


@dataclass(frozen=True)
class TlsSummary:
    version: TlsVersion = TlsVersion.UNKNOWN
    sni: str | None = None
    # None means no certificate was observed
    cert_expired: bool | None = None
    cert_self_signed: bool | None = None


def looks_like_tls(data: bytes) -> bool:
    return len(data) >= 5 and data[0] == CONTENT_HANDSHAKE and data[1] == 3


def handshake_messages(stream: bytes) -> list[tuple[int, bytes]]:
    """Complete handshake messages from the cleartext prefix of a stream.

    Record fragments are concatenated until the first non-handshake record
    (ChangeCipherSpec, alert or application data), after which everything
    is encrypted.
    """
    hs = bytearray()
    pos = 0
    while pos + 5 <= len(stream):
        ctype, _major, _minor, length = struct.unpack_from("!BBBH", stream, pos)
        if ctype != CONTENT_HANDSHAKE:
            break
        hs += stream[pos + 5:pos + 5 + length]
        pos += 5 + length
    msgs = []
    pos = 0
    while pos + 4 <= len(hs):
        mtype = hs[pos]
        length = int.from_bytes(hs[pos + 1:pos + 4], "big")
        if pos + 4 + length > len(hs):
            break
        msgs.append((mtype, bytes(hs[pos + 4:pos + 4 + length])))
        pos += 4 + length
    return msgs


def _extensions(body: bytes, pos: int) -> dict[int, bytes]:
    exts: dict[int, bytes] = {}
    if pos + 2 > len(body):
        return exts
    (total,) = struct.unpack_from("!H", body, pos)
    pos += 2
    end = min(len(body), pos + total)
    while pos + 4 <= end:
        etype, elen = struct.unpack_from("!HH", body, pos)
        exts.setdefault(etype, body[pos + 4:pos + 4 + elen])
        pos += 4 + elen
    return exts


def parse_client_hello(body: bytes) -> tuple[int, str | None]:
    """Return (offered version, SNI host name)."""
    (version,) = struct.unpack_from("!H", body, 0)
    pos = 2 + 32
    pos += 1 + body[pos]
    (cs_len,) = struct.unpack_from("!H", body, pos)
    pos += 2 + cs_len
    pos += 1 + body[pos]
    sni = None
    ext = _extensions(body, pos).get(EXT_SERVER_NAME)
    if ext and len(ext) >= 2:
        p = 2
        while p + 3 <= len(ext):
            name_type = ext[p]
            (nlen,) = struct.unpack_from("!H", ext, p + 1)
            if name_type == 0:
                sni = ext[p + 3:p + 3 + nlen].decode("ascii", "replace").lower()
                break
            p += 3 + nlen
    return version, sni


def parse_server_hello(body: bytes) -> int:
    (version,) = struct.unpack_from("!H", body, 0)
    pos = 2 + 32
    pos += 1 + body[pos]
    pos += 2 + 1
    chosen = _extensions(body, pos).get(EXT_SUPPORTED_VERSIONS)
    if chosen and len(chosen) == 2:
        (version,) = struct.unpack("!H", chosen)
    return version


def parse_certificate_list(body: bytes) -> list[bytes]:
    total = int.from_bytes(body[0:3], "big")
    certs = []
    pos = 3
    end = min(len(body), 3 + total)
    while pos + 3 <= end:
        clen = int.from_bytes(body[pos:pos + 3], "big")
        certs.append(body[pos + 3:pos + 3 + clen])
        pos += 3 + clen
    return certs


def _from_micros(micros: int) -> dt.datetime:
    return dt.datetime.fromtimestamp(micros / 1_000_000, tz=dt.timezone.utc)


def check_leaf(der: bytes, observed_at: int) -> tuple[bool, bool]:
    """(expired, self_signed) for a DER certificate; raises ValueError if unparsable."""
    cert = x509.load_der_x509_certificate(der)
    not_after = cert.not_valid_after_utc
    return not_after < _from_micros(observed_at), cert.issuer == cert.subject


def parse_tls(client_bytes: bytes, server_bytes: bytes, observed_at: int) -> TlsSummary:
    """Summarize a TLS session. ``observed_at`` is in epoch microseconds."""
    if not looks_like_tls(client_bytes):
        raise NotTls("client stream does not start with a handshake record")
    offered = None
    negotiated = None
    sni = None
    leaf = None
    for mtype, body in handshake_messages(client_bytes):
        if mtype == HS_CLIENT_HELLO:
            try:
                offered, sni = parse_client_hello(body)
            except (struct.error, IndexError):
                log.debug("truncated ClientHello")
            break
    for mtype, body in handshake_messages(server_bytes):
        try:
            if mtype == HS_SERVER_HELLO and negotiated is None:
                negotiated = parse_server_hello(body)
            elif mtype == HS_CERTIFICATE and leaf is None:
                certs = parse_certificate_list(body)
                leaf = certs[0] if certs else None
        except (struct.error, IndexError):
            log.debug("truncated server handshake message %d", mtype)
    wire = negotiated if negotiated is not None else offered
    version = version_from_wire(wire) if wire is not None else TlsVersion.UNKNOWN
    expired = self_signed = None
    if leaf:
        try:
            expired, self_signed = check_leaf(leaf, observed_at)
        except ValueError:
            log.debug("unparsable leaf certificate")
    return TlsSummary(version, sni, expired, self_signed)


# --- record construction (fixtures and the synthetic generator) ----------

def _record(content_type: int, payload: bytes, version: int = 0x0301) -> bytes:
    out = b""
    for i in range(0, max(len(payload), 1), 16384):
        frag = payload[i:i + 16384]
        out += struct.pack("!BHH", content_type, version, len(frag)) + frag
    return out


def _handshake(mtype: int, body: bytes) -> bytes:
    return bytes([mtype]) + len(body).to_bytes(3, "big") + body


def build_client_hello(sni: str | None, version: int = 0x0303, random: bytes = b"\x00" * 32) -> bytes:
    exts = b""
    if sni is not None:
        name = sni.encode("ascii")
        entry = b"\x00" + struct.pack("!H", len(name)) + name
        data = struct.pack("!H", len(entry)) + entry
        exts += struct.pack("!HH", EXT_SERVER_NAME, len(data)) + data
    suites = struct.pack("!HHH", 0xC02F, 0xC030, 0x009C)
    body = (struct.pack("!H", version) + random + b"\x00"
            + struct.pack("!H", len(suites)) + suites + b"\x01\x00"
            + struct.pack("!H", len(exts)) + exts)
    return _record(CONTENT_HANDSHAKE, _handshake(HS_CLIENT_HELLO, body))


def build_server_flight(version: int = 0x0303, certs: list[bytes] | None = None,
                        random: bytes = b"\x00" * 32) -> bytes:
    """ServerHello, optional Certificate, ServerHelloDone in one record."""
    hello = struct.pack("!H", version) + random + b"\x00" + struct.pack("!H", 0xC02F) + b"\x00"
    msgs = _handshake(HS_SERVER_HELLO, hello)
    if certs is not None:
        chain = b"".join(len(c).to_bytes(3, "big") + c for c in certs)
        msgs += _handshake(HS_CERTIFICATE, len(chain).to_bytes(3, "big") + chain)
    msgs += _handshake(14, b"")
    return _record(CONTENT_HANDSHAKE, msgs, version)


def build_encrypted_records(size: int, version: int = 0x0303) -> bytes:
    """Opaque application-data records totalling ``size`` payload bytes."""
    return _record(CONTENT_APPLICATION_DATA, b"\x17" * size, version)
