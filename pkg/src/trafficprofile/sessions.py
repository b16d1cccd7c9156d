"""
Session reconstruction.

A TCP session runs from a client SYN to the first FIN or RST seen in either
direction (or idle timeout / end of capture). A UDP session is one client
datagram plus every reply on the reversed 4-tuple until the idle timeout.
TCP traffic seen without a SYN is kept as a *midstream* session whose
client is the sender of the first packet.
"""

from __future__ import annotations

import enum
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, TextIO

from .capture import Packet, TcpFlags, Transport

TCP_IDLE_TIMEOUT = 300 * 1_000_000
UDP_IDLE_TIMEOUT = 60 * 1_000_000


class CloseReason(str, enum.Enum):
    FIN = "FIN"
    RST = "RST"
    TIMEOUT = "TIMEOUT"
    END_OF_CAPTURE = "END_OF_CAPTURE"
    UDP_PAIRED = "UDP_PAIRED"
    UDP_TIMEOUT = "UDP_TIMEOUT"


FiveTuple = tuple  # (client_ip, client_port, server_ip, server_port, Transport)


@dataclass
class Session:
    session_id: str
    subject_id: str
    five_tuple: FiveTuple
    start_time: int
    end_time: int
    client_packets: list[Packet] = field(default_factory=list)
    server_packets: list[Packet] = field(default_factory=list)
    close_reason: CloseReason | None = None
    midstream: bool = False
    index: int = field(default=0, compare=False, repr=False)

    @property
    def transport(self) -> Transport:
        return self.five_tuple[4]

    @property
    def client_ip(self) -> str:
        return self.five_tuple[0]

    @property
    def server_ip(self) -> str:
        return self.five_tuple[2]

    @property
    def server_port(self) -> int:
        return self.five_tuple[3]

    @property
    def packet_count(self) -> int:
        return len(self.client_packets) + len(self.server_packets)

    @property
    def bytes_total(self) -> int:
        return (sum(p.payload_len for p in self.client_packets)
                + sum(p.payload_len for p in self.server_packets))

    def client_bytes(self) -> bytes:
        return b"".join(p.payload for p in self.client_packets)

    def server_bytes(self) -> bytes:
        return b"".join(p.payload for p in self.server_packets)

    def _add(self, pkt: Packet, from_client: bool) -> None:
        (self.client_packets if from_client else self.server_packets).append(pkt)
        self.end_time = pkt.timestamp


class Sessionizer:
    """Incremental session builder for one subject's time-ordered packets."""

    def __init__(self, subject_id: str, tcp_timeout: int = TCP_IDLE_TIMEOUT,
                 udp_timeout: int = UDP_IDLE_TIMEOUT):
        self.subject_id = subject_id
        self.tcp_timeout = tcp_timeout
        self.udp_timeout = udp_timeout
        self.orphans = 0
        self.ignored = 0
        self._counter = 0
        self._closed: list[Session] = []
        # keyed by (client_ip, client_port, server_ip, server_port); insertion
        # order doubles as last-activity order via move_to_end
        self._tcp: OrderedDict[tuple, Session] = OrderedDict()
        self._udp: OrderedDict[tuple, Session] = OrderedDict()
        # tuples closed by FIN/RST -> last activity, for orphaning stragglers
        self._tcp_closed: OrderedDict[tuple, int] = OrderedDict()
        self._last_time: int | None = None

    def feed(self, pkt: Packet) -> None:
        self._last_time = pkt.timestamp
        self._expire(pkt.timestamp)
        if pkt.transport is Transport.TCP:
            self._feed_tcp(pkt)
        elif pkt.transport is Transport.UDP:
            self._feed_udp(pkt)
        else:
            self.ignored += 1

    def _open(self, key: tuple, transport: Transport, pkt: Packet, midstream: bool = False) -> Session:
        sess = Session(
            session_id=f"{self.subject_id}-{self._counter:06d}",
            subject_id=self.subject_id,
            five_tuple=(*key, transport),
            start_time=pkt.timestamp,
            end_time=pkt.timestamp,
            midstream=midstream,
            index=self._counter,
        )
        self._counter += 1
        return sess

    def _close(self, sess: Session, reason: CloseReason) -> None:
        if sess.transport is Transport.UDP:
            reason = CloseReason.UDP_PAIRED if sess.server_packets else CloseReason.UDP_TIMEOUT
        sess.close_reason = reason
        self._closed.append(sess)

    def _expire(self, now: int) -> None:
        for table, timeout in ((self._tcp, self.tcp_timeout), (self._udp, self.udp_timeout)):
            while table:
                key, sess = next(iter(table.items()))
                if now - sess.end_time <= timeout:
                    break
                del table[key]
                self._close(sess, CloseReason.TIMEOUT)
        while self._tcp_closed:
            key, last = next(iter(self._tcp_closed.items()))
            if now - last <= self.tcp_timeout:
                break
            del self._tcp_closed[key]

    def _feed_tcp(self, pkt: Packet) -> None:
        fwd = (pkt.src_ip, pkt.src_port, pkt.dst_ip, pkt.dst_port)
        rev = (pkt.dst_ip, pkt.dst_port, pkt.src_ip, pkt.src_port)
        flags = pkt.tcp_flags
        is_syn = bool(flags & TcpFlags.SYN) and not flags & TcpFlags.ACK
        is_synack = bool(flags & TcpFlags.SYN) and bool(flags & TcpFlags.ACK)
        # SYN together with FIN/RST is malformed; such sessions end by timeout
        closing = bool(flags & (TcpFlags.FIN | TcpFlags.RST)) and not flags & TcpFlags.SYN

        if fwd in self._tcp:
            key, from_client = fwd, True
        elif rev in self._tcp:
            key, from_client = rev, False
        else:
            key = None

        if key is not None:
            sess = self._tcp[key]
            if is_syn and from_client and not _handshake_only(sess):
                # port reuse: a fresh SYN on a live tuple ends the old session
                del self._tcp[key]
                self._close(sess, CloseReason.TIMEOUT)
            else:
                sess._add(pkt, from_client)
                self._tcp.move_to_end(key)
                if closing:
                    del self._tcp[key]
                    self._close(sess, CloseReason.RST if flags & TcpFlags.RST else CloseReason.FIN)
                    self._tcp_closed[key] = pkt.timestamp
                    self._tcp_closed.move_to_end(key)
                return

        if is_syn:
            key, midstream = fwd, False
            self._tcp_closed.pop(fwd, None)
            self._tcp_closed.pop(rev, None)
        else:
            for k in (fwd, rev):
                if k in self._tcp_closed:
                    self.orphans += 1
                    self._tcp_closed[k] = pkt.timestamp
                    self._tcp_closed.move_to_end(k)
                    return
            # missed handshake: a SYN-ACK reveals the real client
            key, midstream = (rev if is_synack else fwd), True

        sess = self._open(key, Transport.TCP, pkt, midstream=midstream)
        sess._add(pkt, key == fwd)
        if closing:
            self._close(sess, CloseReason.RST if flags & TcpFlags.RST else CloseReason.FIN)
            self._tcp_closed[key] = pkt.timestamp
        else:
            self._tcp[key] = sess

    def _feed_udp(self, pkt: Packet) -> None:
        fwd = (pkt.src_ip, pkt.src_port, pkt.dst_ip, pkt.dst_port)
        rev = (pkt.dst_ip, pkt.dst_port, pkt.src_ip, pkt.src_port)
        if rev in self._udp:
            sess = self._udp[rev]
            sess._add(pkt, from_client=False)
            self._udp.move_to_end(rev)
            return
        if fwd in self._udp:
            self._close(self._udp.pop(fwd), CloseReason.UDP_PAIRED)
        sess = self._open(fwd, Transport.UDP, pkt)
        sess._add(pkt, from_client=True)
        self._udp[fwd] = sess

    def flush(self, capture_end: int | None = None) -> list[Session]:
        """Close everything still open and return all sessions in start order."""
        for table, reason in ((self._tcp, CloseReason.END_OF_CAPTURE),
                              (self._udp, CloseReason.UDP_TIMEOUT)):
            for sess in table.values():
                self._close(sess, reason)
            table.clear()
        self._tcp_closed.clear()
        closed, self._closed = self._closed, []
        closed.sort(key=lambda s: s.index)
        return closed


def _handshake_only(sess: Session) -> bool:
    # retransmitted SYNs belong to the session they are retrying
    return not sess.server_packets and all(p.tcp_flags & TcpFlags.SYN for p in sess.client_packets)


def sessionize(packets: Iterable[Packet], subject_id: str, **timeouts) -> list[Session]:
    """Build the closed session list for one subject's packet stream."""
    sz = Sessionizer(subject_id, **timeouts)
    for pkt in packets:
        sz.feed(pkt)
    return sz.flush()


def sessionize_with_stats(packets: Iterable[Packet], subject_id: str, **timeouts):
    """Like :func:`sessionize` but also returns ``(orphans, ignored)`` counts."""
    sz = Sessionizer(subject_id, **timeouts)
    for pkt in packets:
        sz.feed(pkt)
    return sz.flush(), sz.orphans, sz.ignored


SESSION_LOG_COLUMNS = ("session_id", "subject_id", "client_ip", "client_port", "server_ip",
                       "server_port", "transport", "start_time", "end_time",
                       "client_packets", "server_packets", "close_reason", "midstream")


def write_session_log(sessions: Iterable[Session], out: TextIO) -> None:
    out.write("\t".join(SESSION_LOG_COLUMNS) + "\n")
    for s in sessions:
        c_ip, c_port, s_ip, s_port, transport = s.five_tuple
        row = (s.session_id, s.subject_id, c_ip, c_port, s_ip, s_port, transport.value,
               s.start_time, s.end_time, len(s.client_packets), len(s.server_packets),
               s.close_reason.value, int(s.midstream))
        out.write("\t".join(str(v) for v in row) + "\n")


def write_session_log_file(sessions: Iterable[Session], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        write_session_log(sessions, fh)
