"""Command-line entry point: ``trafficprofile <stage> ...``.

Stages and their intermediate files::

    ingest      captures + subject map   -> packets.jsonl
    sessionize  packets.jsonl            -> sessions.jsonl (+ optional session log)
    features    sessions.jsonl           -> features.csv
    enrich      features.csv + store     -> sessions.csv (features + dom_* columns)
    aggregate   sessions.csv + labels    -> dataset.csv
    train       dataset.csv              -> OUT/reports/<label>.json
    report      OUT/reports/*.json       -> OUT/importance_summary.json, OUT/report.txt
    synth       spec flags               -> synthetic corpus directory
    run         config.ini               -> everything above in one go
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import pipeline as pl
from .capture import SubjectMap
from .dataset import LABEL_FIELDS, read_labels_csv, write_dataset_csv
from .enrichment import DomainCache, Enricher, FixtureProvider, Taxonomy
from .errors import StageError, TrafficProfileError
from .features import read_session_csv, write_session_csv
from .ml.ensemble import ALGORITHMS, DEFAULT_SEED, K_GRID, ModelConfig, train
from .sessions import TCP_IDLE_TIMEOUT, UDP_IDLE_TIMEOUT, write_session_log_file
from .synth import SYNTH_SEED, PlantedEffect, SynthSpec, synth_generate

log = logging.getLogger("trafficprofile")


def _captures(items: list[str]) -> list[Path]:
    out = []
    for item in items:
        path = Path(item)
        out.extend(sorted(path.glob("*.pcap")) if path.is_dir() else [path])
    return out


def cmd_ingest(args) -> None:
    by_subject = pl.ingest(_captures(args.captures), SubjectMap.from_file(args.subject_map))
    pl.write_packets_jsonl(by_subject, args.out)


def cmd_sessionize(args) -> None:
    sessions = pl.sessionize_all(pl.read_packets_jsonl(args.packets),
                                 int(args.tcp_timeout * 1e6), int(args.udp_timeout * 1e6))
    pl.write_sessions_jsonl(sessions, args.out)
    if args.session_log:
        write_session_log_file(sessions, args.session_log)


def cmd_features(args) -> None:
    write_session_csv(pl.extract_all(pl.read_sessions_jsonl(args.sessions)), args.out)


def cmd_enrich(args) -> None:
    rows = read_session_csv(args.features)
    cache = DomainCache(args.cache) if args.cache else DomainCache()
    enricher = Enricher(FixtureProvider(args.fixture_store), Taxonomy.load(args.taxonomy), cache,
                        strict=args.strict)
    pl.write_enriched_csv(rows, pl.enrich_all(rows, enricher), args.out)


def cmd_aggregate(args) -> None:
    rows, infos = pl.read_enriched_csv(args.sessions)
    records = pl.aggregate_all(rows, infos, read_labels_csv(args.labels))
    write_dataset_csv(records, args.out)


def cmd_train(args) -> None:
    records = pl.records_from_dataset_csv(args.dataset)
    cfg = _ml_config(args)
    out = Path(args.out_dir) / "reports"
    out.mkdir(parents=True, exist_ok=True)
    for label in cfg.labels:
        rep = pl.train_label(records, label, cfg.base_model(), cfg.k_grid, cfg.algorithms,
                             cfg.n_jobs)
        pl._dump(out / f"{label}.json", rep.to_dict())
        if args.save_models:
            from .dataset import assemble

            model = train(assemble(records, label), rep.grid.best("wauc").config)
            models = Path(args.out_dir) / "models"
            models.mkdir(exist_ok=True)
            (models / f"{label}.json").write_text(model.to_json() + "\n", encoding="utf-8")


def cmd_report(args) -> None:
    reports = pl.load_reports(Path(args.out_dir))
    if not reports:
        raise TrafficProfileError(f"no reports under {args.out_dir}/reports")
    summary = pl.write_summary(Path(args.out_dir), reports)
    if not args.quiet:
        sys.stdout.write(pl.render_table(reports, summary))


def _effect(text: str) -> PlantedEffect:
    parts = text.split(":")
    if len(parts) not in (4, 5):
        raise argparse.ArgumentTypeError("expected label:class:family:size[:category]")
    label, cls, family, size = parts[:4]
    try:
        size = float(size)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad effect size {size!r}") from exc
    return PlantedEffect(label, cls, family, size, *parts[4:])


def cmd_synth(args) -> None:
    spec = SynthSpec(args.subjects, tuple(args.sessions), list(args.effect), args.seed)
    out = synth_generate(spec, args.out)
    print(f"wrote {len(out.captures)} captures to {out.root}")


def cmd_run(args) -> None:
    cfg = pl.PipelineConfig.from_ini(args.config)
    if args.n_jobs:
        cfg.n_jobs = args.n_jobs
    summary = pl.run_pipeline(cfg)
    if not args.quiet:
        sys.stdout.write((Path(cfg.output_dir) / "report.txt").read_text("utf-8"))
    log.info("domain share of top features: %.1f%%", summary["percent"]["domain"])


def _ml_config(args) -> pl.PipelineConfig:
    cfg = pl.PipelineConfig(
        capture_paths=[], subject_map_path=Path(), labels_path=Path(),
        fixture_store_path=Path(), output_dir=Path(args.out_dir), seed=args.seed,
        k_grid=tuple(args.k_grid), algorithms=tuple(args.algorithms), n_trees=args.n_trees,
        n_jobs=args.n_jobs, labels=tuple(args.labels_to_run or LABEL_FIELDS))
    ModelConfig(n_trees=cfg.n_trees, seed=cfg.seed)  # validates
    return cfg


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="trafficprofile",
                                     description="Profile smartphone users from their traffic.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="read captures and tag packets with subjects")
    p.add_argument("captures", nargs="+", help="pcap files or directories of them")
    p.add_argument("--subject-map", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest, stage="ingest")

    p = sub.add_parser("sessionize", help="split tagged packets into sessions")
    p.add_argument("packets")
    p.add_argument("--out", required=True)
    p.add_argument("--session-log", help="also write a tab-separated session log")
    p.add_argument("--tcp-timeout", type=float, default=TCP_IDLE_TIMEOUT / 1e6, metavar="SEC")
    p.add_argument("--udp-timeout", type=float, default=UDP_IDLE_TIMEOUT / 1e6, metavar="SEC")
    p.set_defaults(func=cmd_sessionize, stage="sessionize")

    p = sub.add_parser("features", help="per-session feature extraction")
    p.add_argument("sessions")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_features, stage="features")

    p = sub.add_parser("enrich", help="attach domain information to session features")
    p.add_argument("features")
    p.add_argument("--fixture-store", required=True)
    p.add_argument("--taxonomy")
    p.add_argument("--cache", help="JSON-lines cache file (read and appended)")
    p.add_argument("--strict", action="store_true", help="fail instead of degrading to UNKNOWN")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_enrich, stage="enrich")

    p = sub.add_parser("aggregate", help="build the per-subject dataset")
    p.add_argument("sessions")
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_aggregate, stage="aggregate")

    p = sub.add_parser("train", help="grid LOOCV per label and write reports")
    p.add_argument("dataset")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--labels-to-run", nargs="+", choices=LABEL_FIELDS)
    p.add_argument("--k-grid", nargs="+", type=int, default=list(K_GRID))
    p.add_argument("--algorithms", nargs="+", choices=ALGORITHMS, default=list(ALGORITHMS))
    p.add_argument("--n-trees", type=int, default=100)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--n-jobs", type=int, default=1)
    p.add_argument("--save-models", action="store_true", help="dump best-WAUC models as JSON")
    p.set_defaults(func=cmd_train, stage="train")

    p = sub.add_parser("report", help="importance summary and table from written reports")
    p.add_argument("--out-dir", required=True)
    p.add_argument("-q", "--quiet", action="store_true")
    p.set_defaults(func=cmd_report, stage="report")

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--subjects", type=int, default=20)
    p.add_argument("--sessions", type=int, nargs=2, default=[20, 40], metavar=("MIN", "MAX"))
    p.add_argument("--effect", type=_effect, action="append", default=[],
                   help="label:class:family:size[:category], repeatable")
    p.add_argument("--seed", type=int, default=SYNTH_SEED)
    p.set_defaults(func=cmd_synth, stage="config")

    p = sub.add_parser("run", help="run the whole pipeline from an INI config")
    p.add_argument("config")
    p.add_argument("--n-jobs", type=int)
    p.add_argument("-q", "--quiet", action="store_true")
    p.set_defaults(func=cmd_run, stage="config")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except StageError as exc:
        log.error("%s", exc)
        return pl.EXIT_CODES[exc.stage]
    except (TrafficProfileError, OSError, ValueError) as exc:
        log.error("%s failed: %s: %s", args.command, type(exc).__name__, exc)
        return pl.EXIT_CODES[args.stage]
    return 0


if __name__ == "__main__":
    sys.exit(main())
