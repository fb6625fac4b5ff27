"""Run the full protocol on the synthetic benchmark and print the headline numbers.

    python3 scripts/benchmark.py --out runs/benchmark
"""

import argparse
import logging
import time
from pathlib import Path

from fnreduce.pipeline import PipelineConfig, dumps_report, run_all
from fnreduce.synth import SynthConfig, generate_scene


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=42)
    ap.add_argument("--sequences", type=int, default=3)
    ap.add_argument("--frames", type=int, default=100)
    ap.add_argument("--iou-thresh", type=float, nargs="+", default=[0.5])
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--out", type=Path, default=None, help="write eval_report.json here")
    args = ap.parse_args()
    logging.basicConfig(level=logging.ERROR)

    seqs = generate_scene(SynthConfig(num_sequences=args.sequences, frames_per_sequence=args.frames, seed=args.seed))
    cfg = PipelineConfig()
    cfg.meta.iou_thresholds = list(args.iou_thresh)
    start = time.perf_counter()
    rep = run_all(seqs, cfg, args.jobs).report
    elapsed = time.perf_counter() - start

    det = rep["detection"]["total"]
    print(f"predicted {det['PI']}  reconstructed {det['DI']}  elapsed {elapsed:.1f}s")
    tr = rep["tracking"]
    print("tracking     GT   MT   PT   ML   smn")
    for name in ("baseline", "ours"):
        t = tr[name]
        print(f"{name:<10} {t['GT']:4d} {t['MT']:4d} {t['PT']:4d} {t['ML']:4d} {t['smn']:5d}")
    for key, sw in rep["sweep"].items():
        m = rep["meta"][key]
        print(f"h={key}: meta ACC {m['acc_mean']:.4f}+-{m['acc_std']:.4f} "
              f"AUROC {m['auroc_mean']:.4f}+-{m['auroc_std']:.4f}")
        for method in ("score", "ours"):
            pts = sw[method]["points"]
            rec = [p["recall"] for p in pts]
            print(f"  {method:<5} PR-AUC {sw[method]['auc']:.4f}  points {len(pts)}  "
                  f"recall span {min(rec):.3f}..{max(rec):.3f}")
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "eval_report.json").write_text(dumps_report(rep))


if __name__ == "__main__":
    main()
