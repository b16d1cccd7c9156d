"""
Subject-level dataset assembly.

Every subject's sessions collapse into one fixed-length vector:

* numeric session attributes -> average, median, min and max over the
  sessions where the attribute is defined;
* boolean attributes -> rate of ``True`` among defined sessions;
* nominal attributes -> per-class incidence (class count / defined count);
* byte-volume shares and ratios of the TCP 80, 443 and 5228 ports.

The resulting feature names and order are fixed by :data:`SCHEMA`.
"""

from __future__ import annotations

import csv
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .capture import Transport
from .enrichment import GENERAL_CATEGORIES, SECURITY_FLAGS, UNKNOWN, DomainInfo
from .errors import DegenerateLabel, EmptyInput, InvalidLabel, LabelsMissing
from .features import HTTP, HTTPS, OTHER, SessionFeatures
from .protocols.tls import TlsVersion

SCHEMA_VERSION = 1

STATISTICAL = "statistical"
APPLICATION = "application"
DOMAIN = "domain"
DPI = "dpi"
CATEGORY_TITLES = {
    DOMAIN: "Domain",
    DPI: "Deep packet inspection",
    STATISTICAL: "Statistical",
    APPLICATION: "Application layer",
}

# --- labels -----------------------------------------------------------------

EXPERIENCE = ("Never", "Basic Experience", "Hands-On Experience")

LABELS: dict[str, tuple[str, tuple[str, ...]]] = {
    "age_group": ("Age Group", ("18-24", "25-30", "31+")),
    "gender": ("Gender", ("Male", "Female")),
    "education": ("Education", ("Higher Education", "High-School")),
    "faculty": ("Faculty", ("Natural Sciences", "Humanities", "Engineering")),
    "smokes": ("Smokes", ("Yes", "No")),
    "setup_new_os": ("Setup new OS", EXPERIENCE),
    "setup_wifi": ("Setup a Wi-Fi Network", EXPERIENCE),
    "wrote_program": ("Wrote a Program", EXPERIENCE),
    "formatted_computer": ("Formatted a Computer", EXPERIENCE),
    "built_website": ("Built a Website", EXPERIENCE),
}
LABEL_FIELDS = tuple(LABELS)


def _canon(text: str) -> str:
    return " ".join(text.replace("-", " ").replace("_", " ").lower().split())


_HEADER_ALIASES = {_canon(title): name for name, (title, _) in LABELS.items()}
_HEADER_ALIASES.update({_canon(name.replace("_", " ")): name for name in LABELS})


@dataclass(frozen=True)
class LabelSet:
    age_group: str
    gender: str
    education: str
    faculty: str
    smokes: str
    setup_new_os: str
    setup_wifi: str
    wrote_program: str
    formatted_computer: str
    built_website: str

    def __post_init__(self):
        for name in LABEL_FIELDS:
            value = getattr(self, name)
            if value not in LABELS[name][1]:
                raise InvalidLabel(f"{name}={value!r} is not one of {LABELS[name][1]}")

    @classmethod
    def from_mapping(cls, values: dict[str, str]) -> "LabelSet":
        """Build from loosely formatted questionnaire answers."""
        clean = {}
        for name in LABEL_FIELDS:
            if name not in values or values[name] is None or not str(values[name]).strip():
                raise InvalidLabel(f"missing label {name}")
            raw = str(values[name]).strip()
            match = [c for c in LABELS[name][1] if _canon(c) == _canon(raw)]
            if not match:
                raise InvalidLabel(f"{name}={raw!r} is not one of {LABELS[name][1]}")
            clean[name] = match[0]
        return cls(**clean)

    def get(self, name: str) -> str:
        return getattr(self, name)


def read_labels_csv(path: str | Path) -> dict[str, LabelSet]:
    path = Path(path)
    if not path.exists():
        raise LabelsMissing(f"labels file {path} not found")
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(line for line in fh if not line.startswith("#"))
        for row in reader:
            values = {}
            subject = None
            for key, value in row.items():
                if key is None:
                    continue
                if _canon(key) in ("subject id", "subject_id", "subject"):
                    subject = value.strip()
                elif _canon(key) in _HEADER_ALIASES:
                    values[_HEADER_ALIASES[_canon(key)]] = value
            if not subject:
                raise InvalidLabel(f"{path}: row without subject_id")
            if subject in out:
                raise InvalidLabel(f"{path}: duplicate subject {subject}")
            out[subject] = LabelSet.from_mapping(values)
    return out


def write_labels_csv(labels: dict[str, LabelSet], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["subject_id", *LABEL_FIELDS])
        for subject in sorted(labels):
            writer.writerow([subject, *(labels[subject].get(n) for n in LABEL_FIELDS)])


# --- nominal class tables -----------------------------------------------------

CONTENT_CLASSES = ("html", "json", "xml", "javascript", "css", "image", "video", "audio",
                   "text", "binary", "other")
_BINARY_TYPES = {"application/octet-stream", "application/zip", "application/pdf",
                 "application/vnd.android.package-archive"}


def content_class(ctype: str | None) -> str | None:
    if not ctype:
        return None
    if ctype in ("text/html", "application/xhtml+xml"):
        return "html"
    if ctype.endswith("json"):
        return "json"
    if ctype.endswith("xml"):
        return "xml"
    if "javascript" in ctype or "ecmascript" in ctype:
        return "javascript"
    if ctype == "text/css":
        return "css"
    top = ctype.split("/", 1)[0]
    if top in ("image", "video", "audio", "text"):
        return top
    if ctype in _BINARY_TYPES:
        return "binary"
    return "other"


OS_CLASSES = ("android_le3", "android_4", "android_5", "android_6", "android_ge7")


def _os_parts(os_version: str | None) -> tuple[int, int] | None:
    if not os_version:
        return None
    nums = os_version.split()[-1].split(".")
    try:
        return int(nums[0]), int(nums[1]) if len(nums) > 1 else 0
    except ValueError:
        return None


def os_class(os_version: str | None) -> str | None:
    parts = _os_parts(os_version)
    if parts is None:
        return None
    major = parts[0]
    if major <= 3:
        return "android_le3"
    if major >= 7:
        return "android_ge7"
    return f"android_{major}"


def os_number(os_version: str | None) -> float | None:
    parts = _os_parts(os_version)
    return None if parts is None else parts[0] + parts[1] / 10


DOWNLOAD_CLASSES = ("pdf", "archive", "apk", "image", "audio", "video", "document",
                    "binary", "other")
_DOWNLOAD_TAGS = {
    "pdf": "pdf",
    "zip": "archive", "x-zip-compressed": "archive", "gzip": "archive", "x-gzip": "archive",
    "x-tar": "archive", "tar": "archive", "gz": "archive", "x-rar-compressed": "archive",
    "rar": "archive", "7z": "archive", "x-7z-compressed": "archive",
    "vnd.android.package-archive": "apk", "apk": "apk",
    "jpeg": "image", "jpg": "image", "png": "image", "gif": "image", "webp": "image",
    "bmp": "image",
    "mpeg": "audio", "mp3": "audio", "ogg": "audio", "wav": "audio", "x-wav": "audio",
    "aac": "audio", "m4a": "audio",
    "mp4": "video", "webm": "video", "x-msvideo": "video", "avi": "video",
    "quicktime": "video", "3gpp": "video", "x-matroska": "video", "mkv": "video",
    "msword": "document", "doc": "document", "docx": "document", "txt": "document",
    "plain": "document", "rtf": "document", "vnd.ms-excel": "document", "xls": "document",
    "xlsx": "document", "vnd.ms-powerpoint": "document", "ppt": "document",
    "pptx": "document",
    "octet-stream": "binary", "bin": "binary", "exe": "binary", "x-msdownload": "binary",
}


def download_class(tag: str) -> str:
    if tag.startswith("vnd.openxmlformats"):
        return "document"
    return _DOWNLOAD_TAGS.get(tag, "other")


# --- schema -------------------------------------------------------------------

SessionRow = tuple[SessionFeatures, "DomainInfo | None"]
NUMERIC_AGGS = ("avg", "median", "min", "max")


@dataclass(frozen=True)
class Attribute:
    name: str
    category: str
    kind: str  # numeric | boolean | nominal | multiset
    extract: Callable[[SessionFeatures, DomainInfo | None], object]
    classes: tuple[str, ...] = ()


def _stat(name):
    return lambda sf, info: getattr(sf.stat, name)


def _app(name, protocol=None):
    def get(sf, info):
        if sf.app is None or (protocol and sf.app.protocol != protocol):
            return None
        return getattr(sf.app, name)
    return get


def _dpi(name):
    return lambda sf, info: getattr(sf.dpi, name) if sf.dpi is not None else None


def _dom(name):
    return lambda sf, info: getattr(info, name) if info is not None else None


def _log_rank(sf, info):
    if info is None or info.popularity_rank is None:
        return None
    return math.log10(info.popularity_rank)


def _tls_version(sf, info):
    if sf.app is None or sf.app.protocol != HTTPS:
        return None
    return (sf.app.tls_version or TlsVersion.UNKNOWN).value


def _category(sf, info):
    return info.general_category if info is not None else None


def _download_classes(sf, info):
    if sf.dpi is None:
        return None
    return Counter(download_class(t) for t in sf.dpi.downloaded_file_types)


_STAT_NAMES = ("tx_pkt_max", "tx_pkt_min", "tx_pkt_mean", "tx_pkt_median", "tx_pkt_var",
               "rx_pkt_max", "rx_pkt_min", "rx_pkt_mean", "rx_pkt_median", "rx_pkt_var",
               "bytes_total", "bytes_tx", "bytes_rx", "tx_rx_ratio")

ATTRIBUTES: tuple[Attribute, ...] = (
    *(Attribute(n, STATISTICAL, "numeric", _stat(n)) for n in _STAT_NAMES),
    Attribute("cookie_count", APPLICATION, "numeric", _app("cookie_count", HTTP)),
    Attribute("os_version_num", APPLICATION, "numeric",
              lambda sf, info: os_number(_app("os_version", HTTP)(sf, info))),
    Attribute("form_count", DPI, "numeric", _dpi("form_count")),
    Attribute("downloaded_file_count", DPI, "numeric", _dpi("downloaded_file_count")),
    Attribute("json_docs", DPI, "numeric", _dpi("json_docs")),
    Attribute("xml_docs", DPI, "numeric", _dpi("xml_docs")),
    Attribute("popularity_log_rank", DOMAIN, "numeric", _log_rank),
    Attribute("score_good_site", DOMAIN, "numeric", _dom("score_good_site")),
    Attribute("score_trustworthiness", DOMAIN, "numeric", _dom("score_trustworthiness")),
    Attribute("score_child_safety", DOMAIN, "numeric", _dom("score_child_safety")),
    Attribute("cert_expired", APPLICATION, "boolean", _app("cert_expired", HTTPS)),
    Attribute("cert_self_signed", APPLICATION, "boolean", _app("cert_self_signed", HTTPS)),
    Attribute("has_email_field", DPI, "boolean", _dpi("has_email_field")),
    Attribute("has_username_field", DPI, "boolean", _dpi("has_username_field")),
    Attribute("has_password_field", DPI, "boolean", _dpi("has_password_field")),
    *(Attribute(f"sec_{flag}", DOMAIN, "boolean", _dom(flag)) for flag in SECURITY_FLAGS),
    Attribute("protocol", APPLICATION, "nominal", lambda sf, info: sf.protocol,
              (HTTP, HTTPS, OTHER)),
    Attribute("tls_version", APPLICATION, "nominal", _tls_version,
              tuple(v.value for v in TlsVersion)),
    Attribute("content_class", APPLICATION, "nominal",
              lambda sf, info: content_class(_app("content_type", HTTP)(sf, info)),
              CONTENT_CLASSES),
    Attribute("os_family", APPLICATION, "nominal",
              lambda sf, info: os_class(_app("os_version", HTTP)(sf, info)), OS_CLASSES),
    Attribute("domain_category", DOMAIN, "nominal", _category, (*GENERAL_CATEGORIES, UNKNOWN)),
    Attribute("download_type", DPI, "multiset", _download_classes, DOWNLOAD_CLASSES),
)

PORT_RATIO_FEATURES = ("frac_80", "frac_443", "frac_5228", "r_80_443", "r_80_5228",
                       "r_443_5228")


@dataclass(frozen=True)
class FeatureSchema:
    names: tuple[str, ...]
    categories: tuple[str, ...]
    # columns filled by median imputation when undefined for a subject
    imputable: tuple[bool, ...]
    # attribute name -> slice of its incidence columns
    groups: dict[str, slice] = field(hash=False, compare=False)

    def index(self, name: str) -> int:
        return self.names.index(name)

    def category_of(self, name: str) -> str:
        return self.categories[self.names.index(name)]

    def to_json(self) -> str:
        doc = {
            "schema_version": SCHEMA_VERSION,
            "features": [{"name": n, "category": c, "imputable": i}
                         for n, c, i in zip(self.names, self.categories, self.imputable)],
        }
        return json.dumps(doc, indent=1) + "\n"


def _feature_name(attr: str, suffix: str) -> str:
    return f"{attr}__{suffix.lower()}"


def _build_schema() -> FeatureSchema:
    names, cats, imputable, groups = [], [], [], {}
    for attr in ATTRIBUTES:
        start = len(names)
        if attr.kind == "numeric":
            suffixes, imp = NUMERIC_AGGS, True
        elif attr.kind == "boolean":
            suffixes, imp = ("rate",), True
        else:
            suffixes, imp = attr.classes, False
        for s in suffixes:
            names.append(_feature_name(attr.name, s))
            cats.append(attr.category)
            imputable.append(imp)
        groups[attr.name] = slice(start, len(names))
    for name in PORT_RATIO_FEATURES:
        names.append(name)
        cats.append(STATISTICAL)
        imputable.append(False)
    return FeatureSchema(tuple(names), tuple(cats), tuple(imputable), groups)


SCHEMA = _build_schema()


# --- aggregation ----------------------------------------------------------------

@dataclass
class SubjectRecord:
    subject_id: str
    features: np.ndarray  # NaN where undefined (until imputation)
    labels: LabelSet | None
    session_count: int

    @property
    def feature_names(self) -> tuple[str, ...]:
        return SCHEMA.names

    def named(self) -> dict[str, float]:
        return dict(zip(SCHEMA.names, self.features.tolist()))


def _median(values: list[float]) -> float:
    ordered = sorted(values)
    n = len(ordered)
    mid = n // 2
    return float(ordered[mid]) if n % 2 else (ordered[mid - 1] + ordered[mid]) / 2


def port_ratio_features(sessions: Iterable) -> dict[str, float]:
    """Byte shares and pairwise ratios of TCP ports 80, 443 and 5228.

    Accepts anything with ``server_port``, ``bytes_total`` and
    ``transport`` (sessions or session features).
    """
    per_port = Counter()
    total = 0
    for s in sessions:
        nbytes = s.bytes_total
        total += nbytes
        if s.transport is Transport.TCP and s.server_port in (80, 443, 5228):
            per_port[s.server_port] += nbytes
    b80, b443, b5228 = per_port[80], per_port[443], per_port[5228]
    denom = total if total else 1
    return {
        "frac_80": b80 / denom,
        "frac_443": b443 / denom,
        "frac_5228": b5228 / denom,
        "r_80_443": b80 / max(b443, 1),
        "r_80_5228": b80 / max(b5228, 1),
        "r_443_5228": b443 / max(b5228, 1),
    }


def aggregate_subject(rows: Sequence[SessionRow], subject_id: str,
                      labels: LabelSet | None = None) -> SubjectRecord:
    """Collapse one subject's (session features, domain info) pairs."""
    if not rows:
        raise EmptyInput(f"subject {subject_id} has no sessions")
    vec = np.full(len(SCHEMA.names), np.nan)
    for attr in ATTRIBUTES:
        sl = SCHEMA.groups[attr.name]
        values = [attr.extract(sf, info) for sf, info in rows]
        defined = [v for v in values if v is not None]
        if attr.kind == "numeric":
            if defined:
                nums = [float(v) for v in defined]
                vec[sl] = (math.fsum(nums) / len(nums), _median(nums), min(nums), max(nums))
        elif attr.kind == "boolean":
            if defined:
                vec[sl] = sum(1 for v in defined if v) / len(defined)
        elif attr.kind == "nominal":
            counts = Counter(defined)
            vec[sl] = [counts[c] / len(defined) if defined else 0.0 for c in attr.classes]
        else:
            pooled = Counter()
            for c in defined:
                pooled.update(c)
            n = sum(pooled.values())
            vec[sl] = [pooled[c] / n if n else 0.0 for c in attr.classes]
    ratios = port_ratio_features(sf for sf, _ in rows)
    for name in PORT_RATIO_FEATURES:
        vec[SCHEMA.index(name)] = ratios[name]
    return SubjectRecord(subject_id, vec, labels, len(rows))


def impute(records: Sequence[SubjectRecord]) -> list[SubjectRecord]:
    """Fill undefined aggregates with the column median over subjects (0 if none)."""
    if not records:
        return []
    matrix = np.vstack([r.features for r in records])
    for j in range(matrix.shape[1]):
        col = matrix[:, j]
        missing = np.isnan(col)
        if not missing.any():
            continue
        present = col[~missing]
        col[missing] = _median(present.tolist()) if present.size else 0.0
    return [SubjectRecord(r.subject_id, matrix[i].copy(), r.labels, r.session_count)
            for i, r in enumerate(records)]


@dataclass
class Dataset:
    records: list[SubjectRecord]
    feature_names: tuple[str, ...]
    label_name: str

    @property
    def X(self) -> np.ndarray:
        return np.vstack([r.features for r in self.records])

    @property
    def y(self) -> list[str]:
        return [r.labels.get(self.label_name) for r in self.records]

    @property
    def classes(self) -> tuple[str, ...]:
        present = set(self.y)
        return tuple(c for c in LABELS[self.label_name][1] if c in present)

    @property
    def y_index(self) -> np.ndarray:
        lookup = {c: i for i, c in enumerate(self.classes)}
        return np.array([lookup[v] for v in self.y], dtype=np.int64)

    @property
    def subject_ids(self) -> list[str]:
        return [r.subject_id for r in self.records]

    @property
    def feature_categories(self) -> tuple[str, ...]:
        return tuple(SCHEMA.category_of(n) for n in self.feature_names)

    def with_rows(self, X: np.ndarray, labels: Sequence[LabelSet] | None = None) -> "Dataset":
        """Copy with a replaced feature matrix (and optionally labels)."""
        labels = labels if labels is not None else [r.labels for r in self.records]
        records = [SubjectRecord(r.subject_id, np.asarray(X[i], dtype=float), labels[i],
                                 r.session_count) for i, r in enumerate(self.records)]
        return Dataset(records, self.feature_names, self.label_name)


def assemble(records: Sequence[SubjectRecord], label_name: str) -> Dataset:
    """Dataset for one target label from already-imputed records."""
    if label_name not in LABELS:
        raise KeyError(f"unknown label {label_name!r}")
    if len(records) < 2:
        raise EmptyInput("need at least two subjects")
    ordered = sorted(records, key=lambda r: r.subject_id)
    ids = [r.subject_id for r in ordered]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate subject ids")
    missing = [r.subject_id for r in ordered if r.labels is None]
    if missing:
        raise LabelsMissing(f"no labels for subjects {missing[:5]}")
    classes = {r.labels.get(label_name) for r in ordered}
    if len(classes) < 2:
        raise DegenerateLabel(f"{label_name}: only class {classes.pop()!r} present")
    matrix = np.vstack([r.features for r in ordered])
    if not np.isfinite(matrix).all():
        raise ValueError("feature matrix contains non-finite values; impute first")
    return Dataset(list(ordered), SCHEMA.names, label_name)


def impute_and_assemble(records: Sequence[SubjectRecord], label_name: str) -> Dataset:
    return assemble(impute(records), label_name)


# --- CSV ------------------------------------------------------------------------

def write_dataset_csv(records: Sequence[SubjectRecord], path: str | Path) -> None:
    ordered = sorted(records, key=lambda r: r.subject_id)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"#schema_version={SCHEMA_VERSION}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["subject_id", *SCHEMA.names, *LABEL_FIELDS])
        for r in ordered:
            feats = ["NA" if math.isnan(v) else repr(float(v)) for v in r.features.tolist()]
            labels = [r.labels.get(n) if r.labels else "NA" for n in LABEL_FIELDS]
            writer.writerow([r.subject_id, *feats, *labels])


def read_dataset_csv(path: str | Path) -> list[SubjectRecord]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(line for line in fh if not line.startswith("#"))
        header = next(reader)
        n = len(SCHEMA.names)
        if tuple(header[1:1 + n]) != SCHEMA.names:
            raise ValueError(f"{path}: feature columns do not match schema v{SCHEMA_VERSION}")
        for row in reader:
            feats = np.array([np.nan if v == "NA" else float(v) for v in row[1:1 + n]])
            raw_labels = dict(zip(LABEL_FIELDS, row[1 + n:]))
            labels = None if "NA" in raw_labels.values() else LabelSet(**raw_labels)
            out.append(SubjectRecord(row[0], feats, labels, 0))
    return out
