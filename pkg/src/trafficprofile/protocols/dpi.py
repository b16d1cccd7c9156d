"""
Content inspection of plaintext HTTP bodies: forms and credential fields,
file downloads, and JSON/XML documents. Compressed bodies are inflated
first so results do not depend on Content-Encoding.
"""

from __future__ import annotations

import gzip
import json
import re
import zlib
from collections import Counter
from dataclasses import dataclass, field
from html.parser import HTMLParser
from xml.etree import ElementTree

from .http import HttpTransaction

EMAIL_RE = re.compile(r"[A-Za-z0-9._%+-]+@[A-Za-z0-9.-]+\.[A-Za-z]{2,}")

BINARY_DOWNLOAD_TYPES = frozenset({
    "application/pdf",
    "application/zip",
    "application/octet-stream",
    "application/vnd.android.package-archive",
})
BINARY_DOWNLOAD_PREFIXES = ("audio/", "video/")

_HTML_TYPES = {"text/html", "application/xhtml+xml"}
_JSON_TYPES = {"application/json", "text/json"}
_XML_TYPES = {"application/xml", "text/xml"}
_FILENAME_RE = re.compile(r"""filename\*?\s*=\s*(?:UTF-8'[^']*')?"?([^";]+)"?""", re.I)


@dataclass
class DpiScan:
    form_count: int = 0
    has_email_field: bool = False
    has_username_field: bool = False
    has_password_field: bool = False
    downloaded_file_count: int = 0
    downloaded_file_types: Counter = field(default_factory=Counter)
    # well-formed structured documents seen, by tag ("json", "xml")
    document_types: Counter = field(default_factory=Counter)
    undecodable_bodies: int = 0


class _FormScanner(HTMLParser):
    def __init__(self):
        super().__init__(convert_charrefs=True)
        self.forms = 0
        self.depth = 0
        self.email = self.username = self.password = False

    def handle_starttag(self, tag, attrs):
        if tag == "form":
            self.forms += 1
            self.depth += 1
        elif tag == "input" and self.depth:
            a = {k.lower(): (v or "") for k, v in attrs}
            itype = a.get("type", "text").lower()
            name = (a.get("name", "") + " " + a.get("id", "")).lower()
            if itype == "password":
                self.password = True
            if itype == "email" or "email" in name:
                self.email = True
            if "user" in name or "login" in name:
                self.username = True

    def handle_startendtag(self, tag, attrs):
        self.handle_starttag(tag, attrs)
        if tag == "form":
            self.depth = max(0, self.depth - 1)

    def handle_endtag(self, tag):
        if tag == "form" and self.depth:
            self.depth -= 1


def decode_body(body: bytes, encoding: str | None) -> bytes:
    """Undo Content-Encoding; raises ValueError for undecodable content."""
    enc = (encoding or "identity").lower()
    try:
        if enc in ("gzip", "x-gzip"):
            return gzip.decompress(body)
        if enc == "deflate":
            try:
                return zlib.decompress(body)
            except zlib.error:
                return zlib.decompress(body, -zlib.MAX_WBITS)
    except (OSError, EOFError, zlib.error) as exc:
        raise ValueError(f"cannot decode {enc} body: {exc}") from exc
    if enc in ("identity", ""):
        return body
    raise ValueError(f"unsupported content encoding {enc!r}")


def _is_html(ctype: str | None, body: bytes) -> bool:
    if ctype in _HTML_TYPES:
        return True
    if ctype is None:
        head = body[:256].lstrip().lower()
        return head.startswith(b"<!doctype html") or head.startswith(b"<html")
    return False


def _structured_tag(ctype: str | None) -> str | None:
    if ctype is None:
        return None
    if ctype in _JSON_TYPES or ctype.endswith("+json"):
        return "json"
    if ctype in _XML_TYPES or (ctype.endswith("+xml") and ctype not in _HTML_TYPES):
        return "xml"
    return None


def _is_text(ctype: str | None) -> bool:
    return ctype is None or ctype.startswith("text/") or _structured_tag(ctype) is not None \
        or ctype in _HTML_TYPES


def disposition_filename(disposition: str | None) -> str | None:
    if not disposition:
        return None
    match = _FILENAME_RE.search(disposition)
    return match.group(1).strip() if match else None


def is_attachment(disposition: str | None) -> bool:
    return bool(disposition) and disposition.split(";", 1)[0].strip().lower() == "attachment"


def download_type_tag(ctype: str | None, disposition: str | None) -> str:
    """MIME subtype, falling back to the filename extension.

    ``octet-stream`` says nothing about the file, so a filename extension
    is preferred over it when one exists.
    """
    subtype = ctype.split("/", 1)[1] if ctype and "/" in ctype else None
    filename = disposition_filename(disposition)
    ext = filename.rsplit(".", 1)[1].lower() if filename and "." in filename else None
    if subtype and not (subtype == "octet-stream" and ext):
        return subtype
    return ext or subtype or "unknown"


def is_download(ctype: str | None, disposition: str | None) -> bool:
    if is_attachment(disposition):
        return True
    if ctype is None:
        return False
    return ctype in BINARY_DOWNLOAD_TYPES or ctype.startswith(BINARY_DOWNLOAD_PREFIXES)


def dpi_scan(transactions: list[HttpTransaction]) -> DpiScan:
    scan = DpiScan()
    for tx in transactions:
        if tx.request_body and EMAIL_RE.search(tx.request_body.decode("latin-1")):
            scan.has_email_field = True
        ctype = tx.response_content_type
        if is_download(ctype, tx.response_content_disposition):
            scan.downloaded_file_count += 1
            scan.downloaded_file_types[download_type_tag(ctype, tx.response_content_disposition)] += 1
        if not tx.response_body:
            continue
        try:
            body = decode_body(tx.response_body, tx.response_content_encoding)
        except ValueError:
            scan.undecodable_bodies += 1
            continue
        tag = _structured_tag(ctype)
        if tag == "json":
            try:
                json.loads(body)
            except (ValueError, UnicodeDecodeError):
                scan.undecodable_bodies += 1
                continue
            scan.document_types["json"] += 1
        elif tag == "xml":
            try:
                ElementTree.fromstring(body)
            except ElementTree.ParseError:
                scan.undecodable_bodies += 1
                continue
            scan.document_types["xml"] += 1
        if not _is_text(ctype):
            continue
        text = body.decode("utf-8", "replace")
        if _is_html(ctype, body):
            parser = _FormScanner()
            parser.feed(text)
            parser.close()
            scan.form_count += parser.forms
            scan.has_password_field |= parser.password
            scan.has_username_field |= parser.username
            scan.has_email_field |= parser.email
        if EMAIL_RE.search(text):
            scan.has_email_field = True
    return scan
