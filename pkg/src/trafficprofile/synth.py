"""
Deterministic synthetic corpus generator.

Produces everything a pipeline run needs: one pcap per subject, a subject
map, a labels CSV, an offline domain fixture store and a ground-truth
sidecar (one JSON line per generated session) for parser checks. Planted
effects shift one feature family for the members of one label class.
"""

from __future__ import annotations

import datetime as dt
import gzip
import json
import random
from dataclasses import asdict, dataclass, field
from pathlib import Path

from cryptography import x509
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey
from cryptography.hazmat.primitives.serialization import Encoding
from cryptography.x509.oid import NameOID

from .capture import Packet, PcapWriter, SubjectMap, TcpFlags, Transport
from .dataset import LABEL_FIELDS, LABELS, LabelSet, write_labels_csv
from .enrichment import GENERAL_CATEGORIES, SECURITY_FLAGS
from .errors import InvalidSpec
from .protocols.http import build_request, build_response
from .protocols.tls import build_client_hello, build_encrypted_records, build_server_flight

FAMILIES = ("domain", "statistical", "dpi", "application")
SYNTH_SEED = 7
BASE_TIME = 1_500_000_000  # capture epoch, seconds
_MSS = 1460
_SUFFIXES = ("com", "co.uk", "org", "net", "com.au", "de")
_ANDROID = ("2.3.6", "4.1.2", "4.4.4", "5.0", "5.1.1", "6.0", "6.0.1", "7.0", "7.1.2", "8.0.0")
_TLS_VERSIONS = (0x0303, 0x0303, 0x0303, 0x0302, 0x0301)
_NOT_BEFORE = dt.datetime(2015, 1, 1, tzinfo=dt.timezone.utc)
_VALID_UNTIL = dt.datetime(2020, 1, 1, tzinfo=dt.timezone.utc)
_EXPIRED_AT = dt.datetime(2016, 6, 1, tzinfo=dt.timezone.utc)


@dataclass(frozen=True)
class PlantedEffect:
    label: str
    cls: str
    family: str
    effect: float
    # category whose visit rate moves for the domain family
    category: str = "NEWS"


@dataclass
class SynthSpec:
    n_subjects: int = 20
    sessions_per_subject: tuple[int, int] = (20, 40)
    planted_effects: list[PlantedEffect] = field(default_factory=list)
    seed: int = SYNTH_SEED
    domains_per_category: int = 3

    def __post_init__(self):
        self.planted_effects = [e if isinstance(e, PlantedEffect) else PlantedEffect(*e)
                                for e in self.planted_effects]
        self.validate()

    def validate(self) -> None:
        if self.n_subjects < 2:
            raise InvalidSpec("at least two subjects are needed")
        lo, hi = self.sessions_per_subject
        if not 1 <= lo <= hi:
            raise InvalidSpec("sessions_per_subject must be a range 1 <= lo <= hi")
        for e in self.planted_effects:
            if e.label not in LABELS:
                raise InvalidSpec(f"unknown label {e.label!r}")
            if e.cls not in LABELS[e.label][1]:
                raise InvalidSpec(f"{e.cls!r} is not a class of {e.label}")
            if e.family not in FAMILIES:
                raise InvalidSpec(f"unknown feature family {e.family!r}")
            if e.category not in GENERAL_CATEGORIES:
                raise InvalidSpec(f"unknown category {e.category!r}")
            if not 0 <= e.effect <= 1:
                raise InvalidSpec("effect size must lie in [0, 1]")


@dataclass
class SynthOutput:
    root: Path
    captures: list[Path]
    subject_map: Path
    labels: Path
    fixture_store: Path
    ground_truth: Path
    domains: dict[str, str]  # registrable domain -> category


# --- domains and certificates --------------------------------------------------

def _domain_table(rng: random.Random, per_category: int) -> dict[str, str]:
    table = {}
    for cat in GENERAL_CATEGORIES:
        stem = cat.lower().replace("_", "")
        for i in range(per_category):
            table[f"{stem}{i}.{rng.choice(_SUFFIXES)}"] = cat
    return table


def _fixture_store(rng: random.Random, domains: dict[str, str]) -> dict[str, dict]:
    store = {}
    for rank_seed, (domain, cat) in enumerate(sorted(domains.items())):
        label = cat.lower()
        cats = {"source_a": label, "source_b": label}
        roll = rng.random()
        if roll < 0.15:
            del cats["source_a"]
        elif roll < 0.25:
            cats["source_b"] = "reference"
        store[domain] = {
            "rank": int(10 ** rng.uniform(1, 6)),
            "scores": {s: rng.randint(40, 99) for s in ("good_site", "trustworthiness",
                                                        "child_safety")},
            "flags": {f: rng.random() < 0.03 for f in SECURITY_FLAGS},
            "categories": cats,
        }
    return store


def _key(seed_bytes: bytes) -> Ed25519PrivateKey:
    return Ed25519PrivateKey.from_private_bytes(seed_bytes[:32].ljust(32, b"\0"))


def _name(cn: str) -> x509.Name:
    return x509.Name([x509.NameAttribute(NameOID.COMMON_NAME, cn)])


class _CertFactory:
    """DER certificates that are bit-identical for a given seed."""

    def __init__(self, rng: random.Random):
        self._ca_key = _key(rng.randbytes(32))
        self._rng = rng
        self._cache: dict[tuple, bytes] = {}

    def get(self, host: str, self_signed: bool, expired: bool) -> bytes:
        k = (host, self_signed, expired)
        if k not in self._cache:
            key = _key(self._rng.randbytes(32))
            issuer, signer = (_name(host), key) if self_signed else (_name("Synthetic Root CA"),
                                                                    self._ca_key)
            cert = (x509.CertificateBuilder()
                    .subject_name(_name(host))
                    .issuer_name(issuer)
                    .public_key(key.public_key())
                    .serial_number(self._rng.getrandbits(63) + 1)
                    .not_valid_before(_NOT_BEFORE)
                    .not_valid_after(_EXPIRED_AT if expired else _VALID_UNTIL)
                    .sign(signer, None))
            self._cache[k] = cert.public_bytes(Encoding.DER)
        return self._cache[k]


# --- packet choreography ----------------------------------------------------------

class _Flow:
    """Emits packets of one TCP or UDP exchange with advancing timestamps."""

    def __init__(self, out: list[Packet], t0: int, client: tuple[str, int],
                 server: tuple[str, int], transport: Transport):
        self.out = out
        self.t = t0
        self.c, self.s = client, server
        self.transport = transport

    def _emit(self, from_client: bool, flags: TcpFlags, payload: bytes) -> None:
        src, dst = (self.c, self.s) if from_client else (self.s, self.c)
        self.out.append(Packet(self.t, src[0], dst[0], src[1], dst[1], self.transport,
                               flags, payload))
        self.t += 1000

    def handshake(self) -> None:
        self._emit(True, TcpFlags.SYN, b"")
        self._emit(False, TcpFlags.SYN | TcpFlags.ACK, b"")
        self._emit(True, TcpFlags.ACK, b"")

    def send(self, from_client: bool, data: bytes) -> None:
        if self.transport is Transport.UDP:
            self._emit(from_client, TcpFlags(0), data)
            return
        for i in range(0, len(data), _MSS):
            self._emit(from_client, TcpFlags.PSH | TcpFlags.ACK, data[i:i + _MSS])

    def close(self) -> None:
        self._emit(True, TcpFlags.FIN | TcpFlags.ACK, b"")


def _server_ip(host: str) -> str:
    h = sum(host.encode()) * 2654435761 & 0xFFFF
    return f"93.184.{h >> 8}.{(h & 0xFF) or 1}"


def _html_page(rng: random.Random, login_form: bool) -> bytes:
    words = " ".join(rng.choice(("lorem", "ipsum", "dolor", "sit", "amet", "news", "daily"))
                     for _ in range(rng.randint(20, 400)))
    form = ""
    if login_form:
        form = ('<form action="/login" method="post">'
                '<input type="email" name="email">'
                '<input type="text" name="username">'
                '<input type="password" name="pw"></form>')
    return f"<html><head><title>t</title></head><body><p>{words}</p>{form}</body></html>".encode()


@dataclass
class _Subject:
    subject_id: str
    client_ip: str
    labels: LabelSet
    os_version: str
    base_cookies: int


class _Generator:
    def __init__(self, spec: SynthSpec):
        self.spec = spec
        self.rng = random.Random(spec.seed)
        self.domains = _domain_table(self.rng, spec.domains_per_category)
        self.store = _fixture_store(self.rng, self.domains)
        self.by_category: dict[str, list[str]] = {}
        for d, c in sorted(self.domains.items()):
            self.by_category.setdefault(c, []).append(d)
        self.certs = _CertFactory(random.Random(spec.seed ^ 0x5EED))

    def labels(self) -> list[LabelSet]:
        # each label cycles through its classes over a shuffled subject order,
        # so every class gets floor(n / n_classes) members or more
        n = self.spec.n_subjects
        columns = {}
        for name in LABEL_FIELDS:
            classes = LABELS[name][1]
            order = list(range(n))
            self.rng.shuffle(order)
            col = [None] * n
            for pos, idx in enumerate(order):
                col[idx] = classes[pos % len(classes)]
            columns[name] = col
        return [LabelSet(**{name: columns[name][i] for name in LABEL_FIELDS}) for i in range(n)]

    def effects_for(self, labels: LabelSet, family: str) -> list[PlantedEffect]:
        return [e for e in self.spec.planted_effects
                if e.family == family and labels.get(e.label) == e.cls]

    def _pick_domain(self, rng: random.Random, subj: _Subject) -> tuple[str, str]:
        boost = {}
        for e in self.effects_for(subj.labels, "domain"):
            boost[e.category] = boost.get(e.category, 0.0) + e.effect
        roll = rng.random()
        acc = 0.0
        for cat, p in sorted(boost.items()):
            acc += p
            if roll < acc:
                return rng.choice(self.by_category[cat]), cat
        if rng.random() < 0.05:
            return f"unlisted{rng.randint(0, 99)}.example.net", "UNKNOWN"
        cat = rng.choice(GENERAL_CATEGORIES)
        return rng.choice(self.by_category[cat]), cat

    def sessions(self, subj: _Subject, rng: random.Random) -> tuple[list[Packet], list[dict]]:
        packets: list[Packet] = []
        truth: list[dict] = []
        n = rng.randint(*self.spec.sessions_per_subject)
        t = (BASE_TIME + rng.randint(0, 3600)) * 1_000_000
        port = 40000
        stat_boost = sum(e.effect for e in self.effects_for(subj.labels, "statistical"))
        dpi_boost = sum(e.effect for e in self.effects_for(subj.labels, "dpi"))
        app_boost = sum(e.effect for e in self.effects_for(subj.labels, "application"))
        for _ in range(n):
            port += 1
            kind = rng.choices(("http", "https", "dns", "push"), (4, 4, 2, 1))[0]
            rec = {"subject_id": subj.subject_id, "client_port": port, "kind": kind,
                   "start_time": t}
            if kind in ("http", "https"):
                domain, cat = self._pick_domain(rng, subj)
                host = rng.choice(("www.", "m.", "")) + domain
                rec.update(host=host, registrable_domain=domain, category=cat)
                server = (_server_ip(domain), 80 if kind == "http" else 443)
                flow = _Flow(packets, t, (subj.client_ip, port), server, Transport.TCP)
                flow.handshake()
                if kind == "http":
                    rec.update(self._http_exchange(rng, subj, flow, host, dpi_boost, app_boost,
                                                   stat_boost))
                else:
                    rec.update(self._tls_exchange(rng, flow, host, stat_boost))
                flow.close()
            elif kind == "dns":
                flow = _Flow(packets, t, (subj.client_ip, port), ("8.8.8.8", 53), Transport.UDP)
                flow.send(True, rng.randbytes(rng.randint(28, 60)))
                answered = rng.random() < 0.9
                if answered:
                    flow.send(False, rng.randbytes(rng.randint(60, 200)))
                rec["answered"] = answered
            else:
                flow = _Flow(packets, t, (subj.client_ip, port), ("74.125.0.1", 5228),
                             Transport.TCP)
                flow.handshake()
                for _ in range(rng.randint(1, 4)):
                    flow.send(True, b"\x00" + rng.randbytes(rng.randint(20, 200)))
                    flow.send(False, b"\x00" + rng.randbytes(rng.randint(20, 400)))
                flow.close()
            truth.append(rec)
            t = flow.t + rng.randint(1, 20) * 1_000_000
        return packets, truth

    def _http_exchange(self, rng, subj, flow, host, dpi_boost, app_boost, stat_boost) -> dict:
        cookies_n = subj.base_cookies + round(app_boost * 6)
        cookies = {f"c{i}": f"v{rng.randint(0, 999)}" for i in range(cookies_n)}
        ua = f"Mozilla/5.0 (Linux; Android {subj.os_version}; Phone) AppleWebKit/537.36"
        flavour = rng.choices(("html", "json", "download"), (6, 3, 1))[0]
        login = flavour == "html" and rng.random() < 0.1 + dpi_boost
        gzip_it = rng.random() < 0.5
        if flavour == "html":
            body = _html_page(rng, login)
            ctype, disp, path = "text/html; charset=utf-8", None, "/"
        elif flavour == "json":
            body = json.dumps({"items": list(range(rng.randint(1, 50)))}).encode()
            ctype, disp, path = "application/json", None, "/api"
        else:
            body = rng.randbytes(rng.randint(2000, 20000))
            ctype, disp, path = "application/pdf", 'attachment; filename="doc.pdf"', "/doc.pdf"
            gzip_it = False
        if stat_boost:
            body += b" " * int(len(body) * 4 * stat_boost)
        wire_body = gzip.compress(body, mtime=0) if gzip_it else body
        flow.send(True, build_request("GET", host, path, user_agent=ua, cookies=cookies))
        flow.send(False, build_response(200, wire_body, content_type=ctype,
                                        content_encoding="gzip" if gzip_it else None,
                                        content_disposition=disp))
        return {"protocol": "HTTP", "cookie_count": cookies_n, "content_type": ctype.split(";")[0],
                "os_version": f"Android {subj.os_version}", "form_count": int(login),
                "has_password_field": login, "downloads": int(flavour == "download"),
                "gzip": gzip_it}

    def _tls_exchange(self, rng, flow, host, stat_boost) -> dict:
        version = rng.choice(_TLS_VERSIONS)
        self_signed = rng.random() < 0.05
        expired = rng.random() < 0.05
        cert = self.certs.get(host, self_signed, expired)
        flow.send(True, build_client_hello(host, version, rng.randbytes(32)))
        flow.send(False, build_server_flight(version, [cert], rng.randbytes(32)))
        for _ in range(rng.randint(1, 3)):
            flow.send(True, build_encrypted_records(rng.randint(100, 600), version))
            size = int(rng.randint(500, 8000) * (1 + 4 * stat_boost))
            flow.send(False, build_encrypted_records(size, version))
        names = {0x0301: "TLS1_0", 0x0302: "TLS1_1", 0x0303: "TLS1_2"}
        return {"protocol": "HTTPS", "sni": host, "tls_version": names[version],
                "cert_self_signed": self_signed, "cert_expired": expired}


def synth_generate(spec: SynthSpec, out_dir: str | Path) -> SynthOutput:
    """Write a synthetic corpus under ``out_dir`` and return its file layout."""
    spec.validate()
    root = Path(out_dir)
    (root / "captures").mkdir(parents=True, exist_ok=True)
    gen = _Generator(spec)
    labels = gen.labels()
    smap = SubjectMap()
    subjects = []
    for i, ls in enumerate(labels):
        sid = f"S{i + 1:03d}"
        ip = f"10.{(i >> 8) & 0xFF}.{i & 0xFF}.{10 + (i % 200)}"
        subjects.append(_Subject(sid, ip, ls, gen.rng.choice(_ANDROID), gen.rng.randint(0, 3)))
        smap.add(ip, sid)

    captures = []
    truth_path = root / "ground_truth.jsonl"
    with open(truth_path, "w", encoding="utf-8") as truth_fh:
        for subj in subjects:
            srng = random.Random(f"{spec.seed}:{subj.subject_id}")
            packets, truth = gen.sessions(subj, srng)
            path = root / "captures" / f"{subj.subject_id}.pcap"
            with open(path, "wb") as fh:
                writer = PcapWriter(fh)
                for p in packets:
                    writer.write(p)
            captures.append(path)
            for rec in truth:
                truth_fh.write(json.dumps(rec, sort_keys=True) + "\n")

    smap_path = root / "subjects.tsv"
    smap.to_file(smap_path)
    labels_path = root / "labels.csv"
    write_labels_csv({s.subject_id: s.labels for s in subjects}, labels_path)
    store_path = root / "fixture_store.json"
    store_path.write_text(json.dumps({"schema_version": 1, **gen.store}, indent=1,
                                     sort_keys=True) + "\n", encoding="utf-8")
    (root / "synth_spec.json").write_text(
        json.dumps({"schema_version": 1, **asdict(spec)}, indent=1, sort_keys=True) + "\n",
        encoding="utf-8")
    return SynthOutput(root, captures, smap_path, labels_path, store_path, truth_path,
                       dict(gen.domains))
