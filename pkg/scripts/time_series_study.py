"""Meta-classification AUROC as a function of the number of previous frames n.

Mean and spread over several track-level split seeds on the synthetic benchmark.

    python3 scripts/time_series_study.py --max-n 10 --seeds 5
"""

import argparse
import logging

import numpy as np

from fnreduce.meta import MetaData, meta_run
from fnreduce.pipeline import PipelineConfig, prepare_all, sequence_records
from fnreduce.synth import SynthConfig, generate_scene


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=42, help="generator seed")
    ap.add_argument("--seeds", type=int, default=5, help="split seeds per n")
    ap.add_argument("--max-n", type=int, default=10)
    ap.add_argument("--iou-thresh", type=float, default=0.5)
    args = ap.parse_args()
    logging.basicConfig(level=logging.ERROR)

    seqs = generate_scene(SynthConfig(seed=args.seed))
    records = []
    for prep in prepare_all(seqs, PipelineConfig()):
        records.extend(sequence_records(prep))
    data = MetaData(records, {s.name: len(s.frames) for s in seqs}, args.iou_thresh)
    print(f"{len(records)} records, positive share {data.labels.mean():.3f}")
    print(" n   AUROC mean   std      ACC mean")
    for n in range(args.max_n + 1):
        runs = [meta_run(data, n, seed) for seed in range(args.seeds)]
        au = np.array([r.auroc for r in runs])
        acc = np.array([r.acc for r in runs])
        print(f"{n:2d}   {au.mean():.4f}      {au.std():.4f}   {acc.mean():.4f}")


if __name__ == "__main__":
    main()
