#!/usr/bin/env python3
"""Ablation sweeps on a previously generated synthetic corpus.

Three modes mirror the search's three decisions: clamp the unsupervised
choice to each single scorer, sweep k over its grid, or clamp the
supervised choice to each single ranker. Results print as one table row per
clamped choice.
"""

import argparse
import sys
from pathlib import Path

from weakrank.config import ExperimentConfig
from weakrank.corpus import Corpus, load_annotations_tsv, split_annotations
from weakrank.trainer import ablation_run, sweep_k


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--config", required=True, help="experiment configuration file")
    parser.add_argument("--mode", required=True, choices=["fix-unsup", "fix-k", "fix-sup"])
    parser.add_argument("--out", default="runs/ablations")
    args = parser.parse_args()

    config = ExperimentConfig.from_file(args.config)
    corpus = Corpus.load(config.corpus)
    full = load_annotations_tsv(config.annotations)
    val, test = split_annotations(full, seed=config.split_seed)
    run_config = config.to_run_config()
    out = Path(args.out)

    if args.mode == "fix-k":
        results = sweep_k(corpus, val, test, run_config, workdir=out / "fix-k")
        for k, result in sorted(results.items()):
            print(f"k={k:>3d}  best_reward={result.best_reward:.4f}  "
                  f"test_mrr={result.test_metrics['mrr']:.4f}")
        return 0

    registry = (run_config.unsup_registry if args.mode == "fix-unsup"
                else run_config.sup_registry)
    for name in registry.names:
        result = ablation_run(
            corpus, val, test, args.mode, name, run_config,
            workdir=out / args.mode / name,
        )
        print(f"{name:>22s}  best_reward={result.best_reward:.4f}  "
              f"test_mrr={result.test_metrics['mrr']:.4f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
