#!/usr/bin/env python3
"""Reproduce the directional claims on the default corpus.

Runs, with the default recipe:
  1. vanilla CTC vs kt-rl-cif over N seeds (distillation should win);
  2. kt-rl-cif cosine vs MSE auxiliary loss over the same seeds;
  3. per-iteration timing of kt-rl-att vs kt-rl-cif.

Writes a JSON record per run to --out (default trend_results.jsonl)
and prints a summary table. Expect roughly 30-60 minutes total.
"""

import argparse
import json
import time

import numpy as np

from ctkt import experiments as ex
from ctkt import synthdata as sd
from ctkt import trainer as tr
from ctkt.losses import LossConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", default="1,2,3,4,5")
    ap.add_argument("--noise", type=float, default=None,
                    help="override corpus noise_sigma (default: config default)")
    ap.add_argument("--out", default="trend_results.jsonl")
    args = ap.parse_args()
    seeds = [int(s) for s in args.seeds.split(",")]

    kw = {} if args.noise is None else {"noise_sigma": args.noise}
    corpus_cfg = sd.CorpusConfig(**kw)
    corpus = sd.generate_corpus(corpus_cfg)
    teacher = ex.default_teacher(corpus, "bidirectional")
    records = []

    def log(rec):
        records.append(rec)
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write("\n".join(json.dumps(r) for r in records) + "\n")

    print("== trend 1: vanilla vs kt-rl-cif ==")
    wins = 0
    mse_outcomes = []
    for seed in seeds:
        t0 = time.perf_counter()
        van = ex.run_variant(corpus, "vanilla", seed)
        cif = ex.run_variant(corpus, "kt-rl-cif", seed, teacher=teacher)
        mse = ex.run_variant(corpus, "kt-rl-cif", seed, teacher=teacher,
                             loss_cfg=LossConfig(aux_kind="mse"))
        mse_outcomes.append(mse)
        wins += cif.test_cer < van.test_cer
        dt = time.perf_counter() - t0
        print(f"seed {seed}: vanilla {van.test_cer:.4f}  cif {cif.test_cer:.4f}  "
              f"cif-mse {mse.test_cer:.4f}  [{dt:.0f}s]")
        for o in (van, cif, mse):
            log({"trend": "variants", "seed": seed, "variant": o.variant, "aux": o.aux,
                 "test_cer": o.test_cer, "dev_cer": o.dev_cer, "epochs": o.epochs_run})
    print(f"kt-rl-cif beats vanilla in {wins}/{len(seeds)} seeds")

    cif_mean = np.mean([r["test_cer"] for r in records
                        if r["variant"] == "kt-rl-cif" and r["aux"] == "cosine"])
    mse_mean = np.mean([o.test_cer for o in mse_outcomes])
    print(f"== trend 2: cosine mean {cif_mean:.4f} vs mse mean {mse_mean:.4f} ==")

    print("== trend 3: per-iteration timing over >=200 iterations ==")
    timing = ex.timing_comparison(corpus, seed=seeds[0], teacher=teacher)
    for variant, t in timing.items():
        print(f"{variant}: fwd {t['fwd'] * 1e3:.2f} ms  bwd {t['bwd'] * 1e3:.2f} ms  "
              f"total {t['total'] * 1e3:.2f} ms over {t['iters']} iters")
    log({"trend": "timing", **{k: v["total"] for k, v in timing.items()}})
    faster = timing["kt-rl-att"]["total"] < timing["kt-rl-cif"]["total"]
    print(f"kt-rl-att faster per iteration: {faster}")


if __name__ == "__main__":
    main()
