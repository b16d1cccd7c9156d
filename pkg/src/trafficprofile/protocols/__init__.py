"""Application-layer decoders: HTTP, SSL/TLS and payload inspection."""

from .dpi import DpiScan, dpi_scan
from .http import HttpTransaction, parse_http, parse_user_agent_os
from .tls import TlsSummary, TlsVersion, parse_tls

__all__ = [
    "DpiScan", "dpi_scan",
    "HttpTransaction", "parse_http", "parse_user_agent_os",
    "TlsSummary", "TlsVersion", "parse_tls",
]
