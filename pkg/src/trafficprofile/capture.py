"""
Packet capture ingest.

Reads classic pcap containers (micro- and nanosecond variants, either byte
order) into immutable :class:`Packet` values, and writes them back out for
the synthetic generator and test fixtures. Only Ethernet and raw-IP link
layers are understood.
"""

from __future__ import annotations

import enum
import ipaddress
import logging
import socket
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Iterable, Iterator

from .errors import UnreadableFile, UnsupportedLinkType

log = logging.getLogger(__name__)

MAGIC_USEC = 0xA1B2C3D4
MAGIC_NSEC = 0xA1B23C4D

LINKTYPE_ETHERNET = 1
LINKTYPE_RAW = 101
LINKTYPE_IPV4 = 228
LINKTYPE_IPV6 = 229
_RAW_LINKTYPES = {LINKTYPE_RAW, LINKTYPE_IPV4, LINKTYPE_IPV6, 12, 14}

ETH_IPV4 = 0x0800
ETH_IPV6 = 0x86DD
ETH_VLAN = (0x8100, 0x88A8)

_IPV6_EXT_HEADERS = {0, 43, 60}
_IPV6_FRAGMENT = 44


class Transport(str, enum.Enum):
    TCP = "TCP"
    UDP = "UDP"
    OTHER = "OTHER"


class TcpFlags(enum.IntFlag):
    FIN = 0x01
    SYN = 0x02
    RST = 0x04
    PSH = 0x08
    ACK = 0x10


NO_FLAGS = TcpFlags(0)
_FLAG_MASK = 0x1F


@dataclass(frozen=True)
class Packet:
    """One captured IP datagram, reduced to what the session builder needs.

    ``timestamp`` is in microseconds since the epoch. ``tcp_flags`` is empty
    for anything that is not TCP.
    """

    timestamp: int
    src_ip: str
    dst_ip: str
    src_port: int
    dst_port: int
    transport: Transport
    tcp_flags: TcpFlags = NO_FLAGS
    payload: bytes = b""

    def __post_init__(self):
        if self.transport is not Transport.TCP and self.tcp_flags:
            raise ValueError("tcp_flags must be empty for non-TCP packets")
        for port in (self.src_port, self.dst_port):
            if not 0 <= port <= 0xFFFF:
                raise ValueError(f"port out of range: {port}")

    @property
    def payload_len(self) -> int:
        return len(self.payload)

    def reversed(self) -> "Packet":
        """The same packet with source and destination swapped."""
        return Packet(self.timestamp, self.dst_ip, self.src_ip, self.dst_port,
                      self.src_port, self.transport, self.tcp_flags, self.payload)


@dataclass
class CaptureStats:
    total: int = 0
    emitted: int = 0
    skipped_non_ip: int = 0
    skipped_truncated: int = 0

    @property
    def skipped(self) -> int:
        return self.skipped_non_ip + self.skipped_truncated


class CaptureReader:
    """Iterates the packets of one pcap file in capture order.

    Counters in :attr:`stats` are complete once iteration finishes::

        reader = CaptureReader("trace.pcap")
        packets = list(reader)
        assert reader.stats.emitted + reader.stats.skipped == reader.stats.total
    """

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.stats = CaptureStats()
        try:
            with open(self.path, "rb") as fh:
                header = fh.read(24)
        except OSError as exc:
            raise UnreadableFile(f"{self.path}: {exc}") from exc
        self._endian, self._ts_div, self.link_type = _parse_global_header(header, self.path)
        if self.link_type != LINKTYPE_ETHERNET and self.link_type not in _RAW_LINKTYPES:
            raise UnsupportedLinkType(f"{self.path}: link type {self.link_type}")

    def __iter__(self) -> Iterator[Packet]:
        rec = struct.Struct(self._endian + "IIII")
        with open(self.path, "rb") as fh:
            fh.seek(24)
            while True:
                head = fh.read(16)
                if not head:
                    break
                self.stats.total += 1
                if len(head) < 16:
                    self._truncated()
                    break
                ts_sec, ts_frac, incl_len, _orig_len = rec.unpack(head)
                data = fh.read(incl_len)
                if len(data) < incl_len:
                    self._truncated()
                    break
                timestamp = ts_sec * 1_000_000 + ts_frac // self._ts_div
                pkt = decode_frame(data, self.link_type, timestamp)
                if pkt is None:
                    self.stats.skipped_non_ip += 1
                    continue
                self.stats.emitted += 1
                yield pkt

    def _truncated(self):
        self.stats.skipped_truncated += 1
        log.warning("%s: truncated trailing record skipped", self.path)


def read_capture(path: str | Path) -> CaptureReader:
    """Open a pcap file; iterate the result to get packets."""
    return CaptureReader(path)


def _parse_global_header(header: bytes, path: Path) -> tuple[str, int, int]:
    if len(header) < 24:
        raise UnreadableFile(f"{path}: missing or short global header")
    for endian in ("<", ">"):
        (magic,) = struct.unpack(endian + "I", header[:4])
        if magic in (MAGIC_USEC, MAGIC_NSEC):
            ts_div = 1 if magic == MAGIC_USEC else 1000
            (link_type,) = struct.unpack(endian + "I", header[20:24])
            return endian, ts_div, link_type & 0x0FFFFFFF
    raise UnreadableFile(f"{path}: not a pcap file (bad magic)")


def decode_frame(data: bytes, link_type: int, timestamp: int) -> Packet | None:
    """Decode one link-layer frame; ``None`` for anything that is not IP."""
    if link_type == LINKTYPE_ETHERNET:
        if len(data) < 14:
            return None
        ethertype = struct.unpack_from("!H", data, 12)[0]
        offset = 14
        while ethertype in ETH_VLAN and len(data) >= offset + 4:
            ethertype = struct.unpack_from("!H", data, offset + 2)[0]
            offset += 4
        if ethertype not in (ETH_IPV4, ETH_IPV6):
            return None
        return decode_ip(data[offset:], timestamp)
    return decode_ip(data, timestamp)


def decode_ip(data: bytes, timestamp: int) -> Packet | None:
    if not data:
        return None
    version = data[0] >> 4
    if version == 4:
        if len(data) < 20:
            return None
        ihl = (data[0] & 0x0F) * 4
        total_len = struct.unpack_from("!H", data, 2)[0]
        frag = struct.unpack_from("!H", data, 6)[0]
        proto = data[9]
        src = socket.inet_ntoa(data[12:16])
        dst = socket.inet_ntoa(data[16:20])
        end = min(len(data), total_len) if total_len >= ihl else len(data)
        body = data[ihl:end]
        if frag & 0x1FFF:
            # non-first fragment: no transport header
            return Packet(timestamp, src, dst, 0, 0, Transport.OTHER)
    elif version == 6:
        if len(data) < 40:
            return None
        payload_len = struct.unpack_from("!H", data, 4)[0]
        proto = data[6]
        src = socket.inet_ntop(socket.AF_INET6, data[8:24])
        dst = socket.inet_ntop(socket.AF_INET6, data[24:40])
        body = data[40:40 + payload_len]
        while proto in _IPV6_EXT_HEADERS and len(body) >= 8:
            proto, ext_len = body[0], (body[1] + 1) * 8
            body = body[ext_len:]
        if proto == _IPV6_FRAGMENT:
            return Packet(timestamp, src, dst, 0, 0, Transport.OTHER)
    else:
        return None

    if proto == 6 and len(body) >= 20:
        sport, dport = struct.unpack_from("!HH", body, 0)
        data_off = (body[12] >> 4) * 4
        flags = TcpFlags(body[13] & _FLAG_MASK)
        return Packet(timestamp, src, dst, sport, dport, Transport.TCP, flags,
                      bytes(body[data_off:]))
    if proto == 17 and len(body) >= 8:
        sport, dport = struct.unpack_from("!HH", body, 0)
        return Packet(timestamp, src, dst, sport, dport, Transport.UDP,
                      NO_FLAGS, bytes(body[8:]))
    return Packet(timestamp, src, dst, 0, 0, Transport.OTHER)


# --- writing -------------------------------------------------------------

def _ip_checksum(header: bytes) -> int:
    total = sum(struct.unpack(f"!{len(header) // 2}H", header))
    while total >> 16:
        total = (total & 0xFFFF) + (total >> 16)
    return ~total & 0xFFFF


class PcapWriter:
    """Writes Ethernet-framed packets to a microsecond pcap file.

    TCP sequence/ack numbers are tracked per direction so the output looks
    sane in a dissector; they carry no meaning for this package.
    """

    _SRC_MAC = bytes.fromhex("020000000001")
    _DST_MAC = bytes.fromhex("020000000002")

    def __init__(self, fh: BinaryIO, snaplen: int = 262144):
        self._fh = fh
        self._seq: dict[tuple, int] = {}
        fh.write(struct.pack("<IHHiIII", MAGIC_USEC, 2, 4, 0, 0, snaplen, LINKTYPE_ETHERNET))

    def write(self, pkt: Packet) -> None:
        frame = self._DST_MAC + self._SRC_MAC + self._ip_frame(pkt)
        ts_sec, ts_usec = divmod(pkt.timestamp, 1_000_000)
        self._fh.write(struct.pack("<IIII", ts_sec, ts_usec, len(frame), len(frame)))
        self._fh.write(frame)

    def write_raw(self, timestamp: int, frame: bytes) -> None:
        """Write an arbitrary link-layer frame (used for non-IP fixtures)."""
        ts_sec, ts_usec = divmod(timestamp, 1_000_000)
        self._fh.write(struct.pack("<IIII", ts_sec, ts_usec, len(frame), len(frame)))
        self._fh.write(frame)

    def _transport(self, pkt: Packet) -> tuple[int, bytes]:
        if pkt.transport is Transport.TCP:
            key = (pkt.src_ip, pkt.src_port, pkt.dst_ip, pkt.dst_port)
            rkey = (pkt.dst_ip, pkt.dst_port, pkt.src_ip, pkt.src_port)
            seq = self._seq.get(key, 1000)
            ack = self._seq.get(rkey, 0)
            advance = len(pkt.payload) + (1 if pkt.tcp_flags & (TcpFlags.SYN | TcpFlags.FIN) else 0)
            self._seq[key] = (seq + advance) & 0xFFFFFFFF
            header = struct.pack("!HHIIBBHHH", pkt.src_port, pkt.dst_port, seq, ack,
                                 5 << 4, int(pkt.tcp_flags), 65535, 0, 0)
            return 6, header + pkt.payload
        if pkt.transport is Transport.UDP:
            header = struct.pack("!HHHH", pkt.src_port, pkt.dst_port, 8 + len(pkt.payload), 0)
            return 17, header + pkt.payload
        return 1, pkt.payload

    def _ip_frame(self, pkt: Packet) -> bytes:
        proto, body = self._transport(pkt)
        src = ipaddress.ip_address(pkt.src_ip)
        dst = ipaddress.ip_address(pkt.dst_ip)
        if src.version == 4:
            header = struct.pack("!BBHHHBBH4s4s", 0x45, 0, 20 + len(body), 0, 0x4000, 64,
                                 proto, 0, src.packed, dst.packed)
            header = header[:10] + struct.pack("!H", _ip_checksum(header)) + header[12:]
            return struct.pack("!H", ETH_IPV4) + header + body
        header = struct.pack("!IHBB16s16s", 6 << 28, len(body), proto, 64, src.packed, dst.packed)
        return struct.pack("!H", ETH_IPV6) + header + body


def write_capture(path: str | Path, packets: Iterable[Packet]) -> int:
    count = 0
    with open(path, "wb") as fh:
        writer = PcapWriter(fh)
        for pkt in packets:
            writer.write(pkt)
            count += 1
    return count


# --- subject attribution -------------------------------------------------

class SubjectMap:
    """Client identifier -> subject id.

    Identifiers are IP addresses (normalized) or capture-file names; the
    on-disk form is one ``client<TAB>subject`` pair per line.
    """

    def __init__(self, entries: dict[str, str] | None = None):
        self._entries: dict[str, str] = {}
        for client, subject in (entries or {}).items():
            self.add(client, subject)

    @staticmethod
    def _normalize(client: str) -> str:
        client = client.strip()
        try:
            return str(ipaddress.ip_address(client))
        except ValueError:
            return client

    def add(self, client: str, subject: str) -> None:
        key = self._normalize(client)
        prev = self._entries.get(key)
        if prev is not None and prev != subject:
            raise ValueError(f"client {client} mapped to both {prev} and {subject}")
        self._entries[key] = subject

    def get(self, client: str) -> str | None:
        return self._entries.get(client) or self._entries.get(self._normalize(client))

    def __contains__(self, client: str) -> bool:
        return self.get(client) is not None

    def __len__(self) -> int:
        return len(self._entries)

    def items(self):
        return self._entries.items()

    @property
    def subjects(self) -> list[str]:
        return sorted(set(self._entries.values()))

    @classmethod
    def from_file(cls, path: str | Path) -> "SubjectMap":
        smap = cls()
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                parts = line.split("\t")
                if len(parts) != 2:
                    raise ValueError(f"{path}:{lineno}: expected client<TAB>subject")
                smap.add(parts[0], parts[1].strip())
        return smap

    def to_file(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("# client_ip\tsubject_id\n")
            for client, subject in sorted(self._entries.items(), key=lambda kv: (kv[1], kv[0])):
                fh.write(f"{client}\t{subject}\n")


def assign_subject(packet: Packet, smap: SubjectMap) -> str | None:
    """Subject owning either endpoint of ``packet`` (source checked first)."""
    return smap.get(packet.src_ip) or smap.get(packet.dst_ip)
