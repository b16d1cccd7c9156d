"""
Domain enrichment: popularity rank, reputation scores, security flags and a
general category for a host name.

Lookups go through a :class:`DomainProvider`; the shipped implementation
reads an offline JSON fixture store. Results are keyed on the registrable
domain (public suffix + 1) and memoized in a thread-safe cache that can be
persisted as JSON lines.
"""

from __future__ import annotations

import json
import logging
import re
import threading
from collections import Counter
from concurrent.futures import Future
from dataclasses import asdict, dataclass
from importlib import resources
from ipaddress import ip_address
from pathlib import Path
from typing import Callable, Protocol

from publicsuffixlist import PublicSuffixList

from .errors import ProviderUnavailable, UnknownSourceCategory

log = logging.getLogger(__name__)

GENERAL_CATEGORIES = (
    "SEARCH", "NEWS", "SOCIAL_NETWORK", "EDUCATION", "SHOPPING", "ADULT", "GAMBLING",
    "GAMES", "SPORTS", "FINANCE", "TRAVEL", "HEALTH", "EMAIL", "STREAMING_MEDIA", "MUSIC",
    "FILE_SHARING", "TECHNOLOGY", "GOVERNMENT", "REFERENCE", "MESSAGING", "ADVERTISING",
    "CDN", "PORTALS", "FORUMS", "BLOGS", "DATING", "RELIGION", "JOB_SEARCH", "REAL_ESTATE",
    "KIDS", "WEATHER", "BUSINESS",
)
UNKNOWN = "UNKNOWN"
SECURITY_FLAGS = ("scam", "spam", "malware_or_viruses", "privacy_risks", "phishing")
SCORES = ("good_site", "trustworthiness", "child_safety")

_LABEL_RE = re.compile(r"^[a-z0-9_]([a-z0-9_-]{0,61}[a-z0-9_])?$")
_psl = PublicSuffixList()


@dataclass(frozen=True)
class DomainInfo:
    popularity_rank: int | None = None
    score_good_site: float | None = None
    score_trustworthiness: float | None = None
    score_child_safety: float | None = None
    scam: bool = False
    spam: bool = False
    malware_or_viruses: bool = False
    privacy_risks: bool = False
    phishing: bool = False
    general_category: str = UNKNOWN

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "DomainInfo":
        return cls(**data)


UNKNOWN_INFO = DomainInfo()


class Taxonomy:
    """Source category label -> one of :data:`GENERAL_CATEGORIES`."""

    def __init__(self, mapping: dict[str, str]):
        bad = sorted({v for v in mapping.values() if v not in GENERAL_CATEGORIES})
        if bad:
            raise ValueError(f"taxonomy maps to undeclared categories: {bad}")
        self._mapping = {k.strip().lower(): v for k, v in mapping.items()}

    @property
    def categories(self) -> tuple[str, ...]:
        return GENERAL_CATEGORIES

    def get(self, label: str) -> str | None:
        return self._mapping.get(label.strip().lower())

    def __contains__(self, label: str) -> bool:
        return self.get(label) is not None

    def items(self):
        return self._mapping.items()

    @classmethod
    def load(cls, path: str | Path | None = None) -> "Taxonomy":
        if path is None:
            text = resources.files("trafficprofile").joinpath("data/taxonomy.tsv").read_text("utf-8")
        else:
            text = Path(path).read_text("utf-8")
        mapping = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].rstrip()
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ValueError(f"taxonomy line {lineno}: expected label<TAB>category")
            mapping[parts[0]] = parts[1].strip()
        return cls(mapping)


def combine_categories(cat_a: str | None, cat_b: str | None, taxonomy: Taxonomy,
                       strict: bool = False, diagnostics: Counter | None = None) -> str:
    """Merge two source categories; the first source wins a conflict."""
    mapped = []
    for label in (cat_a, cat_b):
        if not label:
            mapped.append(None)
            continue
        value = taxonomy.get(label)
        if value is None:
            if strict:
                raise UnknownSourceCategory(label)
            if diagnostics is not None:
                diagnostics["unknown_source_category"] += 1
        mapped.append(value)
    a, b = mapped
    return a or b or UNKNOWN


def normalize_host(host: str) -> str:
    host = host.strip().lower()
    if host.startswith("[") and "]" in host:
        return host[1:host.index("]")]
    if host.count(":") == 1:
        host = host.split(":", 1)[0]
    return host.rstrip(".")


def is_valid_hostname(host: str) -> bool:
    if not host or len(host) > 253:
        return False
    try:
        ip_address(host)
        return True
    except ValueError:
        pass
    return all(_LABEL_RE.match(label) for label in host.split("."))


def registrable_domain(host: str) -> str:
    """Public suffix plus one label; IPs and bare suffixes come back unchanged."""
    host = normalize_host(host)
    try:
        ip_address(host)
        return host
    except ValueError:
        pass
    return _psl.privatesuffix(host) or host


class DomainProvider(Protocol):
    def lookup(self, domain: str) -> dict | None:
        """Raw record for a registrable domain, or None when unlisted.

        Raises ProviderUnavailable when the backing source cannot be reached.
        """


class FixtureProvider:
    """File-backed provider.

    ``path`` is either a JSON file holding ``{domain: record}`` or a
    directory of JSON documents, one per domain (``"domain"`` key or the
    file stem names it). A record looks like::

        {"rank": 1200,
         "scores": {"good_site": 90, "trustworthiness": 92, "child_safety": 88},
         "flags": {"scam": false, "spam": false, ...},
         "categories": {"source_a": "news", "source_b": "news"}}
    """

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.calls = 0
        self._records: dict[str, dict] | None = None
        self._lock = threading.Lock()

    def _load(self) -> dict[str, dict]:
        if not self.path.exists():
            raise ProviderUnavailable(f"fixture store {self.path} not found")
        records: dict[str, dict] = {}
        try:
            if self.path.is_dir():
                for doc in sorted(self.path.glob("*.json")):
                    data = json.loads(doc.read_text("utf-8"))
                    records[str(data.get("domain", doc.stem)).lower()] = data
            else:
                data = json.loads(self.path.read_text("utf-8"))
                data.pop("schema_version", None)
                records = {k.lower(): v for k, v in data.items()}
        except (OSError, ValueError) as exc:
            raise ProviderUnavailable(f"fixture store {self.path}: {exc}") from exc
        return records

    def lookup(self, domain: str) -> dict | None:
        with self._lock:
            if self._records is None:
                self._records = self._load()
            self.calls += 1
        return self._records.get(domain.lower())


class DomainCache:
    """Memo of domain -> DomainInfo with at-most-one computation per key.

    With a ``path`` every new entry is appended to a JSON-lines file, and
    existing entries are loaded on construction.
    """

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path else None
        self._data: dict[str, DomainInfo] = {}
        self._inflight: dict[str, Future] = {}
        self._lock = threading.Lock()
        if self.path and self.path.exists():
            with open(self.path, encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        rec = json.loads(line)
                        self._data[rec["domain"]] = DomainInfo.from_dict(rec["info"])

    def __contains__(self, key: str) -> bool:
        return key in self._data

    def __len__(self) -> int:
        return len(self._data)

    def get_or_compute(self, key: str, compute: Callable[[], tuple[DomainInfo, bool]]) -> DomainInfo:
        """``compute`` returns ``(info, cacheable)``."""
        with self._lock:
            if key in self._data:
                return self._data[key]
            fut = self._inflight.get(key)
            owner = fut is None
            if owner:
                fut = self._inflight[key] = Future()
        if not owner:
            return fut.result()
        try:
            info, cacheable = compute()
        except BaseException as exc:
            with self._lock:
                del self._inflight[key]
            fut.set_exception(exc)
            raise
        with self._lock:
            if cacheable:
                self._data[key] = info
                if self.path:
                    with open(self.path, "a", encoding="utf-8") as fh:
                        fh.write(json.dumps({"domain": key, "info": info.to_dict()},
                                            sort_keys=True) + "\n")
            del self._inflight[key]
        fut.set_result(info)
        return info


def _score(value, diagnostics: Counter) -> float | None:
    if value is None:
        return None
    value = float(value)
    if not 0 <= value <= 100:
        diagnostics["score_out_of_range"] += 1
        return None
    return value


class Enricher:
    def __init__(self, provider: DomainProvider, taxonomy: Taxonomy | None = None,
                 cache: DomainCache | None = None, strict: bool = False):
        self.provider = provider
        self.taxonomy = taxonomy or Taxonomy.load()
        self.cache = cache if cache is not None else DomainCache()
        self.strict = strict
        self.diagnostics: Counter = Counter()
        self._diag_lock = threading.Lock()

    def from_record(self, record: dict | None) -> DomainInfo:
        if not record:
            return UNKNOWN_INFO
        diag: Counter = Counter()
        rank = record.get("rank")
        rank = int(rank) if rank is not None and int(rank) >= 1 else None
        scores = record.get("scores") or {}
        flags = record.get("flags") or {}
        cats = record.get("categories") or {}
        info = DomainInfo(
            popularity_rank=rank,
            score_good_site=_score(scores.get("good_site"), diag),
            score_trustworthiness=_score(scores.get("trustworthiness"), diag),
            score_child_safety=_score(scores.get("child_safety"), diag),
            **{flag: bool(flags.get(flag, False)) for flag in SECURITY_FLAGS},
            general_category=combine_categories(cats.get("source_a"), cats.get("source_b"),
                                                self.taxonomy, self.strict, diag),
        )
        self._note(diag)
        return info

    def _note(self, diag: Counter) -> None:
        if diag:
            with self._diag_lock:
                self.diagnostics.update(diag)

    def _compute(self, key: str) -> tuple[DomainInfo, bool]:
        try:
            record = self.provider.lookup(key)
        except ProviderUnavailable:
            if self.strict:
                raise
            log.warning("provider unavailable for %s; degrading to UNKNOWN", key)
            self._note(Counter(provider_unavailable=1))
            return UNKNOWN_INFO, False
        return self.from_record(record), True

    def enrich(self, domain: str) -> DomainInfo:
        host = normalize_host(domain)
        if not is_valid_hostname(host):
            self._note(Counter(invalid_domain=1))
            return UNKNOWN_INFO
        key = registrable_domain(host)
        return self.cache.get_or_compute(key, lambda: self._compute(key))


DOMAIN_COLUMNS = tuple(f"dom_{name}" for name in DomainInfo.__dataclass_fields__)


def domain_columns(infos: list[DomainInfo | None]) -> dict[str, list[str]]:
    """Column-wise text rendering for the enriched session CSV (NA when absent)."""
    out: dict[str, list[str]] = {col: [] for col in DOMAIN_COLUMNS}
    for info in infos:
        for col, name in zip(DOMAIN_COLUMNS, DomainInfo.__dataclass_fields__):
            if info is None:
                out[col].append("NA")
                continue
            value = getattr(info, name)
            if value is None:
                text = "NA"
            elif isinstance(value, bool):
                text = "1" if value else "0"
            elif isinstance(value, float):
                text = repr(value)
            else:
                text = str(value)
            out[col].append(text)
    return out


def domain_info_from_row(rec: dict[str, str]) -> DomainInfo | None:
    if rec.get("dom_general_category", "NA") == "NA":
        return None
    def opt(col, conv):
        text = rec[col]
        return None if text == "NA" else conv(text)
    return DomainInfo(
        popularity_rank=opt("dom_popularity_rank", int),
        score_good_site=opt("dom_score_good_site", float),
        score_trustworthiness=opt("dom_score_trustworthiness", float),
        score_child_safety=opt("dom_score_child_safety", float),
        **{flag: rec[f"dom_{flag}"] == "1" for flag in SECURITY_FLAGS},
        general_category=rec["dom_general_category"],
    )
