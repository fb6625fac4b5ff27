"""Command line interface: one subcommand per pipeline stage plus ``run-all``.

Every stage reads a dataset directory, recomputes what it needs in memory and
writes into an output directory. The output directory carries a
``provenance.json`` with the configuration hash; writing there with a
different configuration is refused unless ``--force`` is given.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from dataclasses import asdict, replace
from pathlib import Path

from . import pipeline as pl
from . import survival
from .detection import DetectorConfig
from .gbt import GbtConfig
from .meta import MetaData, fit_fold, split_dataset, track_units
from .metrics import records_to_csv
from .sequence import Sequence
from .sequence_io import load_dataset, save_dataset, save_sequence
from .synth import SynthConfig, generate_scene
from .tracker import TrackerConfig, tracks_from_frames, tracks_jsonl

log = logging.getLogger("fnreduce")

OUT_ENV = "FNREDUCE_OUT"
PROVENANCE = "provenance.json"
# stages whose outputs each subcommand writes
STAGE_OUTPUTS = {
    "track": ["track"],
    "detect": ["detect"],
    "metrics": ["metrics"],
    "train-meta": ["train-meta"],
    "evaluate": ["evaluate"],
    "sweep": ["sweep"],
    "run-all": ["track", "detect", "metrics", "train-meta", "evaluate", "sweep"],
}


class ProvenanceError(RuntimeError):
    pass


# -- arguments ------------------------------------------------------------------


def _default_out() -> str:
    return os.environ.get(OUT_ENV, "runs")


def _add_common(p: argparse.ArgumentParser, data_required: bool = True) -> None:
    p.add_argument("--data", required=data_required, help="dataset directory (one sequence or a directory of them)")
    p.add_argument("--out", default=_default_out(), help=f"output directory (default: ${OUT_ENV} or %(default)s)")
    p.add_argument("--force", action="store_true", help="overwrite outputs written with another configuration")
    p.add_argument("--jobs", type=int, default=1, help="worker processes across sequences (default: %(default)s)")


def _add_tracking(p: argparse.ArgumentParser) -> None:
    t, d = TrackerConfig(), DetectorConfig()
    p.add_argument("--match-iou", type=float, default=t.match_iou_threshold,
                   help="tracker matching threshold (default: %(default)s)")
    p.add_argument("--window", type=int, default=t.window, help="tracker regression window (default: %(default)s)")
    p.add_argument("--no-class-gate", action="store_true", help="match instances across classes")
    p.add_argument("--gap-limit", type=int, default=d.gap_limit,
                   help="largest gap bridged by reconstruction (default: %(default)s)")
    p.add_argument("--cover-thresh", type=float, default=d.duplicate_iou_threshold,
                   help="suppress reconstructions with iou above this against a prediction (default: %(default)s)")
    p.add_argument("--ignore-thresh", type=float, default=d.ignore_cover_threshold,
                   help="suppress reconstructions this much inside the ignored region (default: %(default)s)")


def _add_meta(p: argparse.ArgumentParser) -> None:
    m, g = pl.MetaConfig(), GbtConfig()
    p.add_argument("--iou-thresh", type=float, nargs="+", default=m.iou_thresholds,
                   help="IoU thresholds h in [0, 0.5] (default: %(default)s)")
    p.add_argument("--frames", type=int, default=m.frames, help="previous frames n in the features (default: %(default)s)")
    p.add_argument("--runs", type=int, default=m.runs, help="random splits averaged (default: %(default)s)")
    p.add_argument("--seed", type=int, default=m.seed, help="seed of the first split (default: %(default)s)")
    p.add_argument("--folds", type=int, default=m.folds, help="folds of the out-of-fold sweep scores (default: %(default)s)")
    p.add_argument("--horizon", type=float, default=m.horizon, help="survival horizon in frames (default: %(default)s)")
    p.add_argument("--trees", type=int, default=g.n_trees, help="maximum boosting rounds (default: %(default)s)")
    p.add_argument("--depth", type=int, default=g.max_depth, help="tree depth (default: %(default)s)")
    p.add_argument("--learning-rate", type=float, default=g.learning_rate, help="shrinkage (default: %(default)s)")
    p.add_argument("--min-leaf", type=int, default=g.min_leaf, help="minimum samples per leaf (default: %(default)s)")
    p.add_argument("--thresholds", type=int, default=15, help="sweep thresholds in [0, 1] (default: %(default)s)")
    p.add_argument("--tracking-iou", type=float, default=0.5, help="IoU for the tracking table (default: %(default)s)")


def _add_synth(p: argparse.ArgumentParser, prefix: str = "") -> None:
    s = SynthConfig()
    p.add_argument(f"--{prefix}seed", dest="synth_seed", type=int, default=s.seed if not prefix else 42,
                   help="generator seed (default: %(default)s)")
    p.add_argument("--sequences", type=int, default=s.num_sequences, help="number of sequences (default: %(default)s)")
    p.add_argument("--frames-per-sequence", type=int, default=s.frames_per_sequence,
                   help="frames per sequence (default: %(default)s)")
    p.add_argument("--height", type=int, default=s.height, help="grid height (default: %(default)s)")
    p.add_argument("--width", type=int, default=s.width, help="grid width (default: %(default)s)")
    p.add_argument("--objects", type=int, default=s.max_objects, help="objects per sequence (default: %(default)s)")
    p.add_argument("--dropout", type=float, default=s.dropout, help="detector dropout rate (default: %(default)s)")
    p.add_argument("--fp-rate", type=float, default=s.fp_rate, help="spurious detection rate (default: %(default)s)")
    p.add_argument("--score-noise", type=float, default=s.score_noise, help="score noise sigma (default: %(default)s)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fnreduce", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset with ground truth")
    p.add_argument("--out", default=str(Path(_default_out()) / "data"), help="dataset directory (default: %(default)s)")
    _add_synth(p)

    p = sub.add_parser("track", help="assign track ids; writes tracks/<sequence>.jsonl")
    _add_common(p)
    _add_tracking(p)

    p = sub.add_parser("detect", help="reconstruct missed instances; writes augmented/ and detect_report.json")
    _add_common(p)
    _add_tracking(p)

    p = sub.add_parser("metrics", help="per-instance metrics; writes metrics.csv and cox_model.json")
    _add_common(p)
    _add_tracking(p)
    p.add_argument("--horizon", type=float, default=10.0, help="survival horizon in frames (default: %(default)s)")

    for name, text in (
        ("train-meta", "repeated-split meta classification; writes meta_report.json and gbt_model.json"),
        ("evaluate", "full evaluation; writes eval_report.json"),
        ("sweep", "threshold sweeps of both selectors; writes pr_points.csv"),
    ):
        p = sub.add_parser(name, help=text)
        _add_common(p)
        _add_tracking(p)
        _add_meta(p)

    p = sub.add_parser("run-all", help="every stage; generates synthetic data when --data is absent")
    _add_common(p, data_required=False)
    _add_tracking(p)
    _add_meta(p)
    _add_synth(p, prefix="synth-")
    return parser


def synth_config(args) -> SynthConfig:
    cfg = SynthConfig(
        num_sequences=args.sequences,
        frames_per_sequence=args.frames_per_sequence,
        height=args.height,
        width=args.width,
        min_objects=args.objects,
        max_objects=args.objects,
        dropout=args.dropout,
        fp_rate=args.fp_rate,
        score_noise=args.score_noise,
        seed=args.synth_seed,
    )
    cfg.validate()
    return cfg


def pipeline_config(args) -> pl.PipelineConfig:
    cfg = pl.PipelineConfig(
        tracker=TrackerConfig(args.match_iou, args.window, not args.no_class_gate),
        detector=DetectorConfig(args.gap_limit, args.ignore_thresh, args.cover_thresh),
    )
    if hasattr(args, "iou_thresh"):
        gbt = GbtConfig(n_trees=args.trees, max_depth=args.depth, learning_rate=args.learning_rate,
                        min_leaf=args.min_leaf)
        cfg.meta = pl.MetaConfig(list(args.iou_thresh), args.frames, args.runs, args.seed, args.folds,
                                 args.horizon, gbt)
        cfg.thresholds = pl.ev.default_thresholds(args.thresholds)
        cfg.tracking_iou = args.tracking_iou
    elif hasattr(args, "horizon"):
        cfg.meta = pl.MetaConfig(horizon=args.horizon)
    cfg.validate()
    return cfg


# -- output directory bookkeeping ------------------------------------------------------


def claim_output(out: Path, upstream: str, stages: dict[str, str], force: bool) -> None:
    """Record the hash of every stage about to write into ``out``.

    All stages in one directory must share the ``upstream`` hash (data,
    tracker and detector settings); a stage already recorded must be rerun
    with its own configuration.
    """
    out.mkdir(parents=True, exist_ok=True)
    path = out / PROVENANCE
    recorded: dict[str, str] = {}
    if path.exists():
        prov = json.loads(path.read_text())
        if prov.get("config_hash") == upstream:
            recorded = dict(prov.get("stages", {}))
        clash = prov.get("config_hash") != upstream or any(
            recorded.get(k, h) != h for k, h in stages.items())
        if clash and not force:
            raise ProvenanceError(
                f"{out} holds outputs of another configuration "
                f"(upstream {prov.get('config_hash')}, this run {upstream}); use another --out or --force"
            )
    recorded.update(stages)
    _write_json(path, {"config_hash": upstream, "stages": recorded})


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _write_csv(path: Path, rows: list[dict], columns: list[str]) -> None:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: ("nan" if row[k] is None else row[k]) for k in columns})
    path.write_text(buf.getvalue())


def _load(args) -> list[Sequence]:
    seqs = load_dataset(args.data)
    names = [s.name for s in seqs]
    if len(set(names)) != len(names):
        raise ValueError(f"duplicate sequence names in {args.data}")
    return seqs


def _digests(cfg: pl.PipelineConfig, seqs: list[Sequence], extra: dict | None = None) -> tuple[str, dict]:
    """Upstream hash and the per-stage hashes each stage's outputs depend on."""
    base = {"sequences": [s.name for s in seqs], "tracker": asdict(cfg.tracker),
            "detector": asdict(cfg.detector), **(extra or {})}
    upstream = pl.config_hash(base)
    full = pl.config_hash({**base, "pipeline": cfg.to_dict()})
    return upstream, {
        "track": upstream,
        "detect": upstream,
        "metrics": pl.config_hash({**base, "horizon": cfg.meta.horizon}),
        "train-meta": full,
        "evaluate": full,
        "sweep": full,
    }


# -- stages -------------------------------------------------------------------------


def stage_track(preps, out: Path) -> None:
    (out / "tracks").mkdir(exist_ok=True)
    for prep in preps:
        rows = tracks_jsonl(tracks_from_frames(prep.tracked), prep.tracked)
        text = "".join(json.dumps(r, sort_keys=True) + "\n" for r in rows)
        (out / "tracks" / f"{prep.seq.name}.jsonl").write_text(text)


def stage_detect(preps, out: Path) -> dict:
    for prep in preps:
        aug = replace(prep.seq, frames=prep.augmented)
        save_sequence(aug, out / "augmented" / prep.seq.name)
    summary = pl.detection_summary(preps)
    _write_json(out / "detect_report.json", summary)
    return summary


def stage_metrics(preps, out: Path, horizon: float) -> list:
    records = []
    for prep in preps:
        records.extend(pl.sequence_records(prep, with_gt=prep.seq.gt is not None))
    num_frames = {p.seq.name: len(p.seq.frames) for p in preps}
    # fitted on everything for inspection; meta classification refits per training fold
    cox = survival.fit_records(records, num_frames)
    survival.attach_survival(records, cox, horizon)
    cox.save(out / "cox_model.json")
    (out / "metrics.csv").write_text(records_to_csv(records))
    return records


def stage_train_meta(preps, cfg: pl.PipelineConfig, out: Path, summaries: dict | None = None) -> dict:
    """``summaries`` reuses repeated-split results already computed by the evaluation."""
    m = cfg.meta
    records = []
    for prep in preps:
        records.extend(pl.sequence_records(prep))
    num_frames = {p.seq.name: len(p.seq.frames) for p in preps}
    report = {"config_hash": cfg.digest(), "meta": {}}
    for h in m.iou_thresholds:
        data = MetaData(records, num_frames, h)
        key = f"{h:g}"
        if summaries is not None:
            report["meta"][key] = {k: v for k, v in summaries[key].items() if k != "oof_auroc"}
        else:
            report["meta"][key] = pl.meta_summary(data, m)
        if h == m.iou_thresholds[-1]:
            folds = split_dataset(track_units(records), m.split, m.seed)
            model, _, spec, _ = fit_fold(data, folds.train, folds.val, m.frames, m.gbt, m.seed, m.horizon)
            model.config = {**model.config, "h": h, "n": m.frames, "features": spec.names()}
            model.save(out / "gbt_model.json")
    report = pl._clean(report)
    _write_json(out / "meta_report.json", report)
    return report


def write_eval(artifacts: pl.RunArtifacts, out: Path, report: bool = True, points: bool = True) -> None:
    if report:
        (out / "eval_report.json").write_text(pl.dumps_report(artifacts.report))
    if points:
        _write_csv(out / "pr_points.csv", pl.pr_rows(artifacts.report),
                   ["method", "h", "threshold", "tp", "fp", "fn", "precision", "recall"])


def _num(x) -> str:
    return "n/a" if x is None else f"{x:.4f}"


def _summary_line(report: dict) -> str:
    parts = []
    for key, sw in report["sweep"].items():
        parts.append(f"h={key}: AUC score {_num(sw['score']['auc'])} ours {_num(sw['ours']['auc'])} "
                     f"meta AUROC {_num(report['meta'][key]['auroc_mean'])}")
    return "; ".join(parts)


def run(args) -> int:
    cmd = args.command
    stage = cmd
    try:
        if cmd == "synth":
            cfg = synth_config(args)
            save_dataset(generate_scene(cfg), args.out)
            print(f"wrote {cfg.num_sequences} sequences to {args.out}")
            return 0

        out = Path(args.out)
        extra = None
        if cmd == "run-all" and args.data is None:
            stage = "synth"
            scfg = synth_config(args)
            args.data = str(out / "data")
            extra = {"synth": scfg.to_dict()}
            save_dataset(generate_scene(scfg), args.data)
        stage = "load"
        seqs = _load(args)
        cfg = pipeline_config(args)
        upstream, hashes = _digests(cfg, seqs, extra)
        written = STAGE_OUTPUTS[cmd]
        claim_output(out, upstream, {k: hashes[k] for k in written}, args.force)

        stage = "track"
        preps = pl.prepare_all(seqs, cfg, args.jobs)
        if cmd in ("track", "run-all"):
            stage_track(preps, out)
        if cmd in ("detect", "run-all"):
            stage = "detect"
            stage_detect(preps, out)
        if cmd in ("metrics", "run-all"):
            stage = "metrics"
            stage_metrics(preps, out, cfg.meta.horizon)
        artifacts = None
        if cmd in ("evaluate", "sweep", "run-all"):
            stage = "evaluate"
            artifacts = pl.run_all(seqs, cfg, args.jobs)
            write_eval(artifacts, out, report=cmd != "sweep", points=cmd != "evaluate")
            print(_summary_line(artifacts.report))
        if cmd in ("train-meta", "run-all"):
            stage = "train-meta"
            stage_train_meta(preps, cfg, out, artifacts.report["meta"] if artifacts else None)
        print(f"{cmd}: outputs in {out}")
        return 0
    except ProvenanceError as exc:
        print(f"fnreduce: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - report the failing stage, keep the cause
        log.debug("stage %s failed", stage, exc_info=True)
        print(f"fnreduce: stage '{stage}' failed: {exc}", file=sys.stderr)
        return 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    return run(args)


if __name__ == "__main__":
    sys.exit(main())
