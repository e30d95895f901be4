#!/usr/bin/env python3
"""Scan corpus noise / lr settings for the vanilla-vs-kt-rl-cif trend.

Writes one JSON line per (setting, seed) so partial runs stay useful.
Development aid, not part of the acceptance path.
"""

import itertools
import json
import sys
import time

from ctkt import experiments as ex
from ctkt import synthdata as sd
from ctkt import trainer as tr


def main():
    noise_values = [float(x) for x in (sys.argv[1].split(",") if len(sys.argv) > 1 else ["2.0"])]
    lr_values = [float(x) for x in (sys.argv[2].split(",") if len(sys.argv) > 2 else ["0.05"])]
    seeds = [int(x) for x in (sys.argv[3].split(",") if len(sys.argv) > 3 else ["1", "2", "3"])]

    for noise, lr in itertools.product(noise_values, lr_values):
        cfg = sd.CorpusConfig(noise_sigma=noise)
        corpus = sd.generate_corpus(cfg)
        teacher = ex.default_teacher(corpus, "bidirectional")
        tcfg = tr.TrainConfig(base_lr=lr)
        for seed in seeds:
            t0 = time.perf_counter()
            van = ex.run_variant(corpus, "vanilla", seed, train_cfg=tcfg)
            cif = ex.run_variant(corpus, "kt-rl-cif", seed, teacher=teacher, train_cfg=tcfg)
            rec = {
                "noise": noise, "lr": lr, "seed": seed,
                "vanilla": van.test_cer, "cif": cif.test_cer,
                "vanilla_epochs": van.epochs_run, "cif_epochs": cif.epochs_run,
                "win": cif.test_cer < van.test_cer,
                "secs": round(time.perf_counter() - t0, 1),
            }
            print(json.dumps(rec), flush=True)


if __name__ == "__main__":
    main()
