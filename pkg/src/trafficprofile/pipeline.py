"""
End-to-end orchestration: captures -> sessions -> session features ->
domain enrichment -> subject dataset -> per-label model grid -> reports.

Every stage is a plain function so the CLI can run stages one at a time
through intermediate files; :func:`run_pipeline` chains them in memory.
"""

from __future__ import annotations

import base64
import configparser
import json
import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .capture import Packet, SubjectMap, TcpFlags, Transport, assign_subject, read_capture
from .dataset import (CATEGORY_TITLES, DOMAIN, DPI, APPLICATION, STATISTICAL, LABEL_FIELDS,
                      LABELS, SCHEMA, SubjectRecord, aggregate_subject, assemble, impute,
                      read_dataset_csv, read_labels_csv, write_dataset_csv)
from .enrichment import (DomainCache, DomainInfo, Enricher, FixtureProvider, Taxonomy,
                         domain_columns, domain_info_from_row)
from .errors import ConfigError, EmptyInput, StageError, TrafficProfileError
from .features import (SessionFeatures, extract_session_features, read_csv_records,
                       session_from_row, write_session_csv)
from .ml.ensemble import ALGORITHMS, DEFAULT_SEED, K_GRID, ModelConfig, feature_importance, train
from .ml.evaluation import GridResult, evaluate_grid
from .sessions import TCP_IDLE_TIMEOUT, UDP_IDLE_TIMEOUT, Session, Sessionizer

log = logging.getLogger(__name__)

REPORT_SCHEMA_VERSION = 1
TOP_N = 5

# Published reference tallies for the top-5 analysis over 10 labels
# (50 features); documentation only, never asserted against a run.
REFERENCE_TALLIES = {DOMAIN: 39, DPI: 4, STATISTICAL: 4, APPLICATION: 3}

STAGES = ("config", "ingest", "sessionize", "features", "enrich", "aggregate", "train", "report")
EXIT_CODES = {stage: 10 + i for i, stage in enumerate(STAGES)}
EXIT_CODES["config"] = 2


# --- configuration ----------------------------------------------------------------

def _split_list(text: str) -> list[str]:
    return [part for part in text.replace(",", " ").split() if part]


@dataclass
class PipelineConfig:
    capture_paths: list[Path]
    subject_map_path: Path
    labels_path: Path
    fixture_store_path: Path
    output_dir: Path
    taxonomy_path: Path | None = None
    cache_path: Path | None = None
    seed: int = DEFAULT_SEED
    strict_mode: bool = False
    k_grid: tuple[int, ...] = K_GRID
    algorithms: tuple[str, ...] = ALGORITHMS
    n_trees: int = 100
    n_jobs: int = 1
    labels: tuple[str, ...] = LABEL_FIELDS
    tcp_timeout: int = TCP_IDLE_TIMEOUT
    udp_timeout: int = UDP_IDLE_TIMEOUT

    def validate(self) -> None:
        if not self.capture_paths:
            raise ConfigError("no capture files given")
        required = [*self.capture_paths, self.subject_map_path, self.fixture_store_path]
        if self.taxonomy_path:
            required.append(self.taxonomy_path)
        for path in required:
            if not Path(path).exists():
                raise ConfigError(f"{path} does not exist")
        unknown = [name for name in self.labels if name not in LABELS]
        if unknown:
            raise ConfigError(f"unknown labels {unknown}")
        bad = [a for a in self.algorithms if a not in ALGORITHMS]
        if bad or not self.algorithms:
            raise ConfigError(f"algorithms must be drawn from {ALGORITHMS}")
        if not self.k_grid or min(self.k_grid) < 1:
            raise ConfigError("k_grid must hold positive integers")
        if self.n_trees < 1 or self.n_jobs < 1:
            raise ConfigError("n_trees and n_jobs must be >= 1")

    def base_model(self) -> ModelConfig:
        return ModelConfig(n_trees=self.n_trees, seed=self.seed)

    @classmethod
    def from_ini(cls, path: str | Path) -> "PipelineConfig":
        """Load the ``[pipeline]`` section; relative paths resolve against the file."""
        path = Path(path)
        parser = configparser.ConfigParser()
        if not parser.read(path, encoding="utf-8"):
            raise ConfigError(f"cannot read config {path}")
        if "pipeline" not in parser:
            raise ConfigError(f"{path}: missing [pipeline] section")
        sec = parser["pipeline"]
        base = path.parent

        def p(key, required=True):
            value = sec.get(key)
            if not value:
                if required:
                    raise ConfigError(f"{path}: missing key {key!r}")
                return None
            value = Path(value).expanduser()
            return value if value.is_absolute() else base / value

        captures = []
        for item in _split_list(sec.get("captures", "")):
            item_path = Path(item) if Path(item).is_absolute() else base / item
            captures.extend(sorted(item_path.glob("*.pcap")) if item_path.is_dir() else [item_path])
        try:
            cfg = cls(
                capture_paths=captures,
                subject_map_path=p("subject_map"),
                labels_path=p("labels"),
                fixture_store_path=p("fixture_store"),
                output_dir=p("output_dir"),
                taxonomy_path=p("taxonomy", required=False),
                cache_path=p("cache", required=False),
                seed=sec.getint("seed", DEFAULT_SEED),
                strict_mode=sec.getboolean("strict", False),
                k_grid=tuple(int(k) for k in _split_list(sec.get("k_grid", ""))) or K_GRID,
                algorithms=tuple(_split_list(sec.get("algorithms", ""))) or ALGORITHMS,
                n_trees=sec.getint("n_trees", 100),
                n_jobs=sec.getint("n_jobs", 1),
                labels=tuple(_split_list(sec.get("labels_to_run", ""))) or LABEL_FIELDS,
                tcp_timeout=int(sec.getfloat("tcp_timeout_s", TCP_IDLE_TIMEOUT / 1e6) * 1e6),
                udp_timeout=int(sec.getfloat("udp_timeout_s", UDP_IDLE_TIMEOUT / 1e6) * 1e6),
            )
        except ValueError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        return cfg


# --- stages ------------------------------------------------------------------------

def ingest(capture_paths: Iterable[str | Path], smap: SubjectMap) -> dict[str, list[Packet]]:
    """Read captures and split packets by owning subject (unmapped ones dropped)."""
    by_subject: dict[str, list[Packet]] = defaultdict(list)
    unmapped = 0
    for path in capture_paths:
        for pkt in read_capture(path):
            subject = assign_subject(pkt, smap)
            if subject is None:
                unmapped += 1
            else:
                by_subject[subject].append(pkt)
    if unmapped:
        log.info("%d packets matched no subject", unmapped)
    for packets in by_subject.values():
        packets.sort(key=lambda p: p.timestamp)  # stable: capture order among equals
    return dict(sorted(by_subject.items()))


def sessionize_all(by_subject: dict[str, list[Packet]], tcp_timeout: int = TCP_IDLE_TIMEOUT,
                   udp_timeout: int = UDP_IDLE_TIMEOUT) -> list[Session]:
    out = []
    for subject, packets in sorted(by_subject.items()):
        sz = Sessionizer(subject, tcp_timeout, udp_timeout)
        for pkt in packets:
            sz.feed(pkt)
        out.extend(sz.flush())
    return out


def extract_all(sessions: Iterable[Session]) -> list[SessionFeatures]:
    return [extract_session_features(s) for s in sessions]


def enrich_all(rows: Sequence[SessionFeatures], enricher: Enricher) -> list[DomainInfo | None]:
    return [enricher.enrich(sf.domain_name) if sf.domain_name else None for sf in rows]


def aggregate_all(rows: Sequence[SessionFeatures], infos: Sequence[DomainInfo | None],
                  labels: dict) -> list[SubjectRecord]:
    """Imputed subject records, ordered by subject id."""
    grouped: dict[str, list] = defaultdict(list)
    for sf, info in zip(rows, infos):
        grouped[sf.subject_id].append((sf, info))
    records = []
    for subject in sorted(grouped):
        records.append(aggregate_subject(grouped[subject], subject, labels.get(subject)))
    if not records:
        raise EmptyInput("no sessions to aggregate")
    no_traffic = sorted(set(labels) - set(grouped))
    if no_traffic:
        log.warning("labelled subjects without traffic left out: %s", ", ".join(no_traffic[:10]))
    return impute(records)


@dataclass
class LabelReport:
    grid: GridResult
    top_features: list[tuple[str, str, float]] = field(default_factory=list)

    def to_dict(self) -> dict:
        doc = {"schema_version": REPORT_SCHEMA_VERSION, **self.grid.to_dict()}
        doc["top_features"] = [{"feature": n, "category": c, "importance": v}
                               for n, c, v in self.top_features]
        return doc


def train_label(records: Sequence[SubjectRecord], label: str, base: ModelConfig,
                k_grid: Sequence[int] = K_GRID, algorithms: Sequence[str] = ALGORITHMS,
                n_jobs: int = 1) -> LabelReport:
    """Grid LOOCV for one label, then top features of the best-WAUC model."""
    dataset = assemble(records, label)
    grid = evaluate_grid(dataset, base, k_grid, algorithms, n_jobs)
    model = train(dataset, grid.best("wauc").config)
    top = []
    for idx, value in feature_importance(model)[:TOP_N]:
        name = dataset.feature_names[idx]
        top.append((name, SCHEMA.category_of(name), value))
    return LabelReport(grid, top)


def importance_summary(top_features: dict[str, Sequence]) -> dict:
    """Tally the top features of each label by feature category.

    ``top_features`` maps a label to its ranked features, each given as a
    name or as a ``(name, category, ...)`` tuple.
    """
    counts = Counter({cat: 0 for cat in CATEGORY_TITLES})
    per_label = {}
    for label, feats in sorted(top_features.items()):
        items = []
        for f in list(feats)[:TOP_N]:
            name = f if isinstance(f, str) else f[0]
            cat = SCHEMA.category_of(name) if isinstance(f, str) else f[1]
            counts[cat] += 1
            items.append(name)
        per_label[label] = items
    total = sum(counts.values())
    return {
        "schema_version": REPORT_SCHEMA_VERSION,
        "labels": per_label,
        "counts": dict(counts),
        "percent": {c: (100.0 * n / total if total else 0.0) for c, n in counts.items()},
        "total": total,
    }


# --- rendering ------------------------------------------------------------------------

def render_table(reports: dict[str, LabelReport], summary: dict) -> str:
    head = f"{'Label':<24}{'Alg':<5}{'K':>5}{'Acc':>8}{'WAUC':>8}{'W-Prec':>8}{'W-Rec':>8}{'F1':>8}"
    lines = [head, "-" * len(head)]
    for label, rep in reports.items():
        row = rep.grid.best("f1").row()
        lines.append(f"{LABELS[label][0]:<24}{row['algorithm']:<5}{row['features']:>5}"
                     f"{row['accuracy']:>8.3f}{row['wauc']:>8.3f}{row['w_precision']:>8.3f}"
                     f"{row['w_recall']:>8.3f}{row['f1']:>8.3f}")
    lines += ["", f"{'Feature category':<26}{'Top-5 count':>12}{'Share':>9}"]
    for cat, title in CATEGORY_TITLES.items():
        lines.append(f"{title:<26}{summary['counts'][cat]:>12}{summary['percent'][cat]:>8.1f}%")
    return "\n".join(lines) + "\n"


def _dump(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def write_label_reports(out_dir: Path, reports: dict[str, LabelReport]) -> None:
    report_dir = out_dir / "reports"
    report_dir.mkdir(parents=True, exist_ok=True)
    for label, rep in reports.items():
        _dump(report_dir / f"{label}.json", rep.to_dict())


def write_summary(out_dir: Path, reports: dict[str, LabelReport]) -> dict:
    summary = importance_summary({label: rep.top_features for label, rep in reports.items()})
    _dump(out_dir / "importance_summary.json", summary)
    (out_dir / "report.txt").write_text(render_table(reports, summary), encoding="utf-8")
    return summary


def load_reports(out_dir: Path) -> dict[str, LabelReport]:
    """Rebuild minimal report objects from written JSON (for re-rendering)."""
    from .ml.evaluation import EvalResult

    reports = {}
    for path in sorted((Path(out_dir) / "reports").glob("*.json")):
        doc = json.loads(path.read_text("utf-8"))
        results = []
        for row in doc["grid"]:
            cfg = ModelConfig(algorithm=row["algorithm"], k_features=row["features"])
            results.append(EvalResult(row["accuracy"], row["wauc"], row["w_precision"],
                                      row["w_recall"], row["f1"], (), [], cfg))
        top = [(t["feature"], t["category"], t["importance"]) for t in doc["top_features"]]
        reports[doc["label"]] = LabelReport(GridResult(doc["label"], results), top)
    return {label: reports[label] for label in LABEL_FIELDS if label in reports}


# --- intermediate files ----------------------------------------------------------------

def _b64(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


def write_packets_jsonl(by_subject: dict[str, list[Packet]], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"schema_version": 1, "kind": "packets"}) + "\n")
        for subject, packets in sorted(by_subject.items()):
            for p in packets:
                fh.write(json.dumps([subject, p.timestamp, p.src_ip, p.dst_ip, p.src_port,
                                     p.dst_port, p.transport.value, int(p.tcp_flags),
                                     _b64(p.payload)]) + "\n")


def read_packets_jsonl(path: str | Path) -> dict[str, list[Packet]]:
    out: dict[str, list[Packet]] = defaultdict(list)
    with open(path, encoding="utf-8") as fh:
        next(fh)
        for line in fh:
            subject, ts, src, dst, sport, dport, transport, flags, payload = json.loads(line)
            out[subject].append(Packet(ts, src, dst, sport, dport, Transport(transport),
                                       TcpFlags(flags), base64.b64decode(payload)))
    return dict(out)


def write_sessions_jsonl(sessions: Iterable[Session], path: str | Path) -> None:
    """Sessions with their packets, so feature extraction can run later."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"schema_version": 1, "kind": "sessions"}) + "\n")
        for s in sessions:
            c_ip, c_port, s_ip, s_port, transport = s.five_tuple
            doc = {
                "session_id": s.session_id, "subject_id": s.subject_id,
                "five_tuple": [c_ip, c_port, s_ip, s_port, transport.value],
                "start_time": s.start_time, "end_time": s.end_time,
                "close_reason": s.close_reason.value if s.close_reason else None,
                "midstream": s.midstream, "index": s.index,
                "client": [[p.timestamp, int(p.tcp_flags), _b64(p.payload)]
                           for p in s.client_packets],
                "server": [[p.timestamp, int(p.tcp_flags), _b64(p.payload)]
                           for p in s.server_packets],
            }
            fh.write(json.dumps(doc) + "\n")


def read_sessions_jsonl(path: str | Path) -> list[Session]:
    from .sessions import CloseReason

    out = []
    with open(path, encoding="utf-8") as fh:
        next(fh)
        for line in fh:
            doc = json.loads(line)
            c_ip, c_port, s_ip, s_port, transport = doc["five_tuple"]
            transport = Transport(transport)

            def packets(items, from_client):
                src, dst = ((c_ip, c_port), (s_ip, s_port)) if from_client else \
                    ((s_ip, s_port), (c_ip, c_port))
                return [Packet(ts, src[0], dst[0], src[1], dst[1], transport, TcpFlags(flags),
                               base64.b64decode(data)) for ts, flags, data in items]

            reason = doc["close_reason"]
            out.append(Session(
                session_id=doc["session_id"], subject_id=doc["subject_id"],
                five_tuple=(c_ip, c_port, s_ip, s_port, transport),
                start_time=doc["start_time"], end_time=doc["end_time"],
                client_packets=packets(doc["client"], True),
                server_packets=packets(doc["server"], False),
                close_reason=CloseReason(reason) if reason else None,
                midstream=doc["midstream"], index=doc["index"],
            ))
    return out


def write_enriched_csv(rows: Sequence[SessionFeatures], infos: Sequence[DomainInfo | None],
                       path: str | Path) -> None:
    write_session_csv(rows, path, extra=domain_columns(list(infos)))


def read_enriched_csv(path: str | Path) -> tuple[list[SessionFeatures], list[DomainInfo | None]]:
    rows, infos = [], []
    for rec in read_csv_records(path):
        rows.append(session_from_row(rec))
        infos.append(domain_info_from_row(rec) if "dom_general_category" in rec else None)
    return rows, infos


# --- orchestration -------------------------------------------------------------------------

def make_enricher(config: PipelineConfig) -> Enricher:
    taxonomy = Taxonomy.load(config.taxonomy_path)
    cache = DomainCache(config.cache_path) if config.cache_path else DomainCache()
    return Enricher(FixtureProvider(config.fixture_store_path), taxonomy, cache,
                    strict=config.strict_mode)


class _Stage:
    def __init__(self, name: str):
        self.name = name

    def __enter__(self):
        log.info("stage %s", self.name)
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is not None and isinstance(exc, (TrafficProfileError, OSError, ValueError)) \
                and not isinstance(exc, StageError):
            raise StageError(self.name, exc) from exc
        return False


def train_all(records: Sequence[SubjectRecord], config: PipelineConfig) -> dict[str, LabelReport]:
    reports = {}
    for label in config.labels:
        reports[label] = train_label(records, label, config.base_model(), config.k_grid,
                                     config.algorithms, config.n_jobs)
    return reports


def run_pipeline(config: PipelineConfig) -> dict:
    """Run every stage and write the outputs; returns the importance summary.

    Written files: ``sessions.csv`` (enriched session features),
    ``dataset.csv``, ``reports/<label>.json``, ``importance_summary.json``
    and ``report.txt``. Failures surface as :class:`StageError`.
    """
    with _Stage("config"):
        config.validate()
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    with _Stage("ingest"):
        by_subject = ingest(config.capture_paths, SubjectMap.from_file(config.subject_map_path))
    with _Stage("sessionize"):
        sessions = sessionize_all(by_subject, config.tcp_timeout, config.udp_timeout)
    with _Stage("features"):
        rows = extract_all(sessions)
    with _Stage("enrich"):
        enricher = make_enricher(config)
        infos = enrich_all(rows, enricher)
        write_enriched_csv(rows, infos, out / "sessions.csv")
        if enricher.diagnostics:
            log.info("enrichment diagnostics: %s", dict(sorted(enricher.diagnostics.items())))
    with _Stage("aggregate"):
        labels = read_labels_csv(config.labels_path)
        records = aggregate_all(rows, infos, labels)
        write_dataset_csv(records, out / "dataset.csv")
    with _Stage("train"):
        reports = train_all(records, config)
    with _Stage("report"):
        write_label_reports(out, reports)
        return write_summary(out, reports)


def records_from_dataset_csv(path: str | Path) -> list[SubjectRecord]:
    return read_dataset_csv(path)
