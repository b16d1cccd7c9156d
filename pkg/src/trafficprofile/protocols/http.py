"""Passive HTTP/1.x parsing of reassembled session byte streams."""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from ..errors import NotHttp

_REQUEST_LINE = re.compile(rb"^([A-Z]{3,10}) (\S+) HTTP/(\d)\.(\d)\r?$")
_STATUS_LINE = re.compile(rb"^HTTP/(\d)\.(\d) (\d{3})(?: (.*))?\r?$")
_ANDROID = re.compile(r"\bAndroid\s+(\d+(?:\.\d+){0,2})\b")

_MAX_HEADER_BYTES = 64 * 1024


class _Incomplete(Exception):
    pass


@dataclass
class HttpMessage:
    start_line: str
    headers: list[tuple[str, str]]
    body: bytes | None

    def header(self, name: str) -> str | None:
        name = name.lower()
        for key, value in self.headers:
            if key.lower() == name:
                return value
        return None

    def header_all(self, name: str) -> list[str]:
        name = name.lower()
        return [v for k, v in self.headers if k.lower() == name]


@dataclass
class HttpTransaction:
    method: str
    path: str = "/"
    host: str | None = None
    user_agent: str | None = None
    request_cookie_count: int = 0
    request_body: bytes | None = None
    response_status: int | None = None
    response_content_type: str | None = None
    response_content_encoding: str | None = None
    response_content_disposition: str | None = None
    response_body: bytes | None = None
    request_headers: list[tuple[str, str]] = field(default_factory=list, repr=False)
    response_headers: list[tuple[str, str]] = field(default_factory=list, repr=False)


def count_cookies(values: list[str]) -> int:
    """Number of ``name=value`` pairs across all Cookie header values."""
    return sum(1 for value in values for part in value.split(";") if "=" in part)


def looks_like_http_request(data: bytes) -> bool:
    line = data.split(b"\n", 1)[0]
    return bool(_REQUEST_LINE.match(line))


def _read_head(buf: bytes, pos: int) -> tuple[bytes, list[tuple[str, str]], int]:
    end = buf.find(b"\r\n\r\n", pos)
    sep = 4
    alt = buf.find(b"\n\n", pos)
    if alt != -1 and (end == -1 or alt < end):
        end, sep = alt, 2
    if end == -1:
        if len(buf) - pos > _MAX_HEADER_BYTES:
            raise ValueError("header block too large")
        raise _Incomplete
    lines = buf[pos:end].split(b"\n")
    start = lines[0].rstrip(b"\r")
    headers = []
    for raw in lines[1:]:
        raw = raw.rstrip(b"\r")
        if not raw:
            continue
        if raw[:1] in (b" ", b"\t") and headers:
            name, value = headers[-1]
            headers[-1] = (name, value + " " + raw.strip().decode("latin-1"))
            continue
        if b":" not in raw:
            raise ValueError(f"malformed header line {raw[:40]!r}")
        name, value = raw.split(b":", 1)
        headers.append((name.strip().decode("latin-1"), value.strip().decode("latin-1")))
    return start, headers, end + sep


def _read_chunked(buf: bytes, pos: int) -> tuple[bytes, int]:
    chunks = []
    while True:
        eol = buf.find(b"\r\n", pos)
        if eol == -1:
            raise _Incomplete
        size_field = buf[pos:eol].split(b";", 1)[0].strip()
        try:
            size = int(size_field, 16)
        except ValueError:
            raise ValueError(f"bad chunk size {size_field!r}") from None
        pos = eol + 2
        if size == 0:
            # trailers end with an empty line
            end = buf.find(b"\r\n", pos)
            while end != -1 and end != pos:
                pos = end + 2
                end = buf.find(b"\r\n", pos)
            if end == -1:
                return b"".join(chunks), len(buf)
            return b"".join(chunks), end + 2
        if pos + size > len(buf):
            raise _Incomplete
        chunks.append(buf[pos:pos + size])
        pos += size
        if buf[pos:pos + 2] == b"\r\n":
            pos += 2


def _read_body(buf: bytes, pos: int, msg: HttpMessage, until_close: bool) -> tuple[bytes | None, int]:
    te = (msg.header("Transfer-Encoding") or "").lower()
    if "chunked" in te:
        return _read_chunked(buf, pos)
    length = msg.header("Content-Length")
    if length is not None:
        try:
            n = int(length)
        except ValueError:
            raise ValueError(f"bad Content-Length {length!r}") from None
        if pos + n > len(buf):
            raise _Incomplete
        return buf[pos:pos + n], pos + n
    if until_close:
        return buf[pos:], len(buf)
    return None, pos


def _parse_requests(buf: bytes) -> list[tuple[HttpMessage, str]]:
    out = []
    pos = 0
    while pos < len(buf):
        try:
            start, headers, body_pos = _read_head(buf, pos)
            match = _REQUEST_LINE.match(start)
            if not match:
                break
            msg = HttpMessage(start.decode("latin-1"), headers, None)
            msg.body, pos = _read_body(buf, body_pos, msg, until_close=False)
        except (_Incomplete, ValueError):
            break
        out.append((msg, match.group(1).decode("ascii")))
    return out


def _parse_responses(buf: bytes, methods: list[str]) -> list[HttpMessage]:
    out: list[HttpMessage] = []
    pos = 0
    while pos < len(buf) and len(out) < max(len(methods), 1):
        try:
            start, headers, body_pos = _read_head(buf, pos)
            match = _STATUS_LINE.match(start)
            if not match:
                break
            status = int(match.group(3))
            msg = HttpMessage(start.decode("latin-1"), headers, None)
            if 100 <= status < 200:
                # interim response, the real one follows
                pos = body_pos
                continue
            method = methods[len(out)] if len(out) < len(methods) else "GET"
            if method == "HEAD" or status in (204, 304):
                msg.body, pos = None, body_pos
            else:
                msg.body, pos = _read_body(buf, body_pos, msg, until_close=True)
        except (_Incomplete, ValueError):
            break
        out.append(msg)
    return out


def _media_type(value: str | None) -> str | None:
    if value is None:
        return None
    return value.split(";", 1)[0].strip().lower() or None


def parse_http(client_bytes: bytes, server_bytes: bytes) -> list[HttpTransaction]:
    """Pair pipelined requests with responses, in order.

    Raises :class:`NotHttp` when the client stream does not open with an
    HTTP request line. Parsing stops quietly at the first framing error,
    keeping the transactions completed so far.
    """
    if not client_bytes:
        return []
    if not looks_like_http_request(client_bytes):
        raise NotHttp(f"not an HTTP request line: {client_bytes[:40]!r}")
    requests = _parse_requests(client_bytes)
    responses = _parse_responses(server_bytes, [m for _, m in requests])
    txs = []
    for i, (req, method) in enumerate(requests):
        path = req.start_line.split(" ")[1]
        tx = HttpTransaction(
            method=method,
            path=path,
            host=(req.header("Host") or None),
            user_agent=req.header("User-Agent"),
            request_cookie_count=count_cookies(req.header_all("Cookie")),
            request_body=req.body,
            request_headers=req.headers,
        )
        if tx.host:
            tx.host = tx.host.rsplit(":", 1)[0] if tx.host.count(":") == 1 else tx.host
            tx.host = tx.host.lower()
        if i < len(responses):
            resp = responses[i]
            tx.response_status = int(resp.start_line.split(" ")[1])
            tx.response_content_type = _media_type(resp.header("Content-Type"))
            enc = resp.header("Content-Encoding")
            tx.response_content_encoding = enc.strip().lower() if enc else None
            tx.response_content_disposition = resp.header("Content-Disposition")
            tx.response_body = resp.body
            tx.response_headers = resp.headers
        txs.append(tx)
    return txs


def parse_user_agent_os(user_agent: str | None) -> str | None:
    """``"Android 5.0.1"`` style OS token from a User-Agent string."""
    if not user_agent:
        return None
    match = _ANDROID.search(user_agent)
    return f"Android {match.group(1)}" if match else None


# --- serialization (fixtures and the synthetic generator) -----------------

def build_request(method: str, host: str, path: str = "/", *, user_agent: str | None = None,
                  cookies: dict[str, str] | None = None, body: bytes | None = None,
                  extra_headers: list[tuple[str, str]] | None = None) -> bytes:
    headers = [("Host", host)]
    if user_agent:
        headers.append(("User-Agent", user_agent))
    if cookies:
        headers.append(("Cookie", "; ".join(f"{k}={v}" for k, v in cookies.items())))
    headers.extend(extra_headers or [])
    if body is not None:
        headers.append(("Content-Length", str(len(body))))
    head = f"{method} {path} HTTP/1.1\r\n" + "".join(f"{k}: {v}\r\n" for k, v in headers)
    return head.encode("latin-1") + b"\r\n" + (body or b"")


def build_response(status: int = 200, body: bytes = b"", *, content_type: str | None = None,
                   content_encoding: str | None = None, content_disposition: str | None = None,
                   chunked: bool = False, reason: str = "OK",
                   extra_headers: list[tuple[str, str]] | None = None) -> bytes:
    headers = []
    if content_type:
        headers.append(("Content-Type", content_type))
    if content_encoding:
        headers.append(("Content-Encoding", content_encoding))
    if content_disposition:
        headers.append(("Content-Disposition", content_disposition))
    headers.extend(extra_headers or [])
    if chunked:
        headers.append(("Transfer-Encoding", "chunked"))
        payload = b""
        for i in range(0, len(body), 512):
            piece = body[i:i + 512]
            payload += f"{len(piece):x}\r\n".encode() + piece + b"\r\n"
        payload += b"0\r\n\r\n"
    else:
        headers.append(("Content-Length", str(len(body))))
        payload = body
    head = f"HTTP/1.1 {status} {reason}\r\n" + "".join(f"{k}: {v}\r\n" for k, v in headers)
    return head.encode("latin-1") + b"\r\n" + payload
