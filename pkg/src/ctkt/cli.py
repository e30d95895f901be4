"""Command-line front end.

Commands: gen-data, build-teacher, train, eval, verify, report,
defaults. Exit codes: 0 success, 1 verification failure, 2 usage or
config error, 3 data corruption. All artifacts are written atomically
(write-then-rename). CTKT_THREADS caps evaluation workers.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import checkpoint as ckpt
from . import config as cfg_mod
from . import model as model_mod
from . import synthdata as sd
from . import teacher as tch
from . import trainer as tr
from . import verify as verify_mod
from .errors import CheckpointError, ConfigError, ContractError, CtktError


def _data_dir(cfg):
    return os.path.join(cfg["out.dir"], "data")


def _teacher_path(cfg, directionality):
    return os.path.join(cfg["out.dir"], f"teacher_{directionality}.ckpt")


def _load_corpus(cfg):
    data = _data_dir(cfg)
    try:
        return sd.load_corpus(data, cfg_mod.corpus_config(cfg))
    except ContractError as exc:
        raise ConfigError(f"{exc} (run gen-data first)") from exc


def _build_or_load_teacher(cfg, directionality, corpus=None, quiet=False):
    path = _teacher_path(cfg, directionality)
    if os.path.exists(path):
        teacher = tch.teacher_from_arrays(ckpt.load_checkpoint(path))
        if teacher.cfg.directionality != directionality:
            raise CheckpointError(f"{path}: stored directionality mismatch")
        return teacher
    tcfg = cfg_mod.teacher_config(cfg, directionality)
    transcripts = None
    if tcfg.mode == "fitted":
        corpus = corpus or _load_corpus(cfg)
        transcripts = [u.transcript for u in corpus.train]
    teacher = tch.create_teacher(tcfg, transcripts)
    os.makedirs(cfg["out.dir"], exist_ok=True)
    ckpt.save_checkpoint(path, tch.teacher_to_arrays(teacher))
    if not quiet:
        print(f"wrote {path} (checksum {teacher.checksum():#018x})")
    return teacher


def cmd_gen_data(args) -> int:
    cfg = cfg_mod.load_file(args.config)
    corpus = sd.generate_corpus(cfg_mod.corpus_config(cfg))
    out = _data_dir(cfg)
    sd.save_corpus(out, corpus)
    for name in sd.SPLITS:
        stats = sd.corpus_stats(corpus.splits[name])
        n_keys = list(stats["n_hist"])
        m_keys = list(stats["m_hist"])
        print(
            f"{name}: {stats['count']} utts, {stats['tokens']} tokens, "
            f"N in [{n_keys[0]}, {n_keys[-1]}], M in [{m_keys[0]}, {m_keys[-1]}]"
        )
    print(f"wrote {out}")
    return 0


def cmd_build_teacher(args) -> int:
    cfg = cfg_mod.load_file(args.config)
    directionality = args.directionality or cfg_mod.resolve_directionality(cfg)
    teacher = _build_or_load_teacher(cfg, directionality)
    print(f"teacher {directionality} ready (checksum {teacher.checksum():#018x})")
    return 0


def _final_summary(cfg, result, corpus, teacher):
    uni = _build_or_load_teacher(cfg, "unidirectional", corpus, quiet=True)
    fusion = tch.FusionLM(uni)
    mp = result.params
    test = corpus.test
    greedy = tr.evaluate(mp, test, tr.DecodeConfig(mode="greedy"))
    beam_cfg = cfg_mod.decode_config(cfg, "beam")
    no_lm = tr.DecodeConfig(mode="beam", beam=beam_cfg.beam, lm_weight=0.0)
    beam_no_lm = tr.evaluate(mp, test, no_lm)
    summary = {
        "summary": True,
        "variant": mp.cfg.variant,
        "aux": cfg["loss.aux"],
        "seed": cfg["train.seed"],
        "epochs_run": len(result.history),
        "stopped_early": result.stopped_early,
        "dev_cer": result.history[-1]["dev_cer"],
        "best_dev_cer": min(h["dev_cer"] for h in result.history),
        "test_cer_greedy": greedy.corpus_cer,
        "test_cer_beam": beam_no_lm.corpus_cer,
        "fwd_s_per_iter": float(np.mean([h["fwd_s_per_iter"] for h in result.history])),
        "bwd_s_per_iter": float(np.mean([h["bwd_s_per_iter"] for h in result.history])),
    }
    if beam_cfg.lm_weight > 0:
        with_lm = tr.evaluate(mp, test, beam_cfg, fusion_lm=fusion)
        summary["test_cer_beam_lm"] = with_lm.corpus_cer
        summary["lm_weight"] = beam_cfg.lm_weight
    if mp.cfg.variant == "kt-cl":
        joint = tr.evaluate(mp, test, cfg_mod.decode_config(cfg, "joint"),
                            fusion_lm=fusion, ktcl_teacher=teacher)
        summary["test_cer_joint"] = joint.corpus_cer
        summary["joint_gamma"] = beam_cfg.joint_gamma
    return summary


def cmd_train(args) -> int:
    cfg = cfg_mod.load_file(args.config)
    corpus = _load_corpus(cfg)
    variant = cfg["train.variant"]
    teacher = None
    if variant != "vanilla":
        directionality = cfg_mod.resolve_directionality(cfg)
        if variant == "kt-cl" and directionality != "unidirectional":
            raise ConfigError("kt-cl requires teacher.directionality = unidirectional (or auto)")
        teacher = _build_or_load_teacher(cfg, directionality, corpus, quiet=True)

    run_dir = os.path.join(cfg["out.dir"], variant)
    os.makedirs(run_dir, exist_ok=True)
    metrics_path = os.path.join(run_dir, "metrics.jsonl")
    records = []

    def flush_metrics():
        ckpt.atomic_write(metrics_path, ("\n".join(json.dumps(r) for r in records) + "\n").encode())

    def on_epoch(epoch, mp, record):
        ckpt.save_checkpoint(os.path.join(run_dir, f"epoch_{epoch:03d}.ckpt"), mp.to_arrays())
        records.append(record)
        flush_metrics()

    result = tr.train_experiment(
        cfg_mod.model_config(cfg), cfg_mod.train_config(cfg), corpus,
        teacher=teacher, epoch_callback=on_epoch,
    )
    final_path = os.path.join(run_dir, "final.ckpt")
    ckpt.save_checkpoint(final_path, result.params.to_arrays())
    records.append(_final_summary(cfg, result, corpus, teacher))
    flush_metrics()
    summary = records[-1]
    print(
        f"{variant}: {len(result.history)} epochs, dev CER {summary['best_dev_cer']:.4f}, "
        f"test CER (greedy) {summary['test_cer_greedy']:.4f}"
    )
    print(f"wrote {final_path} and {metrics_path}")
    return 0


def cmd_eval(args) -> int:
    arrays = ckpt.load_checkpoint(args.ckpt)
    mp = model_mod.ModelParams.from_arrays(arrays)
    utts = sd.load_split(os.path.join(args.data, f"{args.split}.bin"))
    if args.joint_gamma is not None:
        mode = "joint"
        beam = args.beam if args.beam >= 1 else 10
    elif args.beam >= 1:
        mode, beam = "beam", args.beam
    else:
        if args.lm_weight > 0:
            raise ConfigError("LM fusion requires --beam >= 1")
        mode, beam = "greedy", 1
    decode = tr.DecodeConfig(
        mode=mode, beam=beam, lm_weight=args.lm_weight,
        joint_gamma=args.joint_gamma if args.joint_gamma is not None else 0.5,
    )
    fusion = None
    ktcl_teacher = None
    if args.lm_weight > 0 or mode == "joint":
        if not args.teacher:
            raise ConfigError("--teacher is required for LM fusion or joint decoding")
        teacher = tch.teacher_from_arrays(ckpt.load_checkpoint(args.teacher))
        ktcl_teacher = teacher
        if args.lm_weight > 0:
            fusion = tch.FusionLM(teacher)
    result = tr.evaluate(mp, utts, decode, fusion_lm=fusion, ktcl_teacher=ktcl_teacher)
    print(f"cer {result.corpus_cer:.6f}  ({decode.mode}, beam={decode.beam}, "
          f"lm_weight={decode.lm_weight})")
    if args.out:
        lines = "\n".join(json.dumps(r) for r in result.per_utt) + "\n"
        ckpt.atomic_write(args.out, lines.encode())
        print(f"wrote {args.out}")
    if args.dump_align:
        _dump_alignments(mp, utts, args.dump_align)
        print(f"wrote alignment CSVs to {args.dump_align}")
    return 0


def _dump_alignments(mp, utts, out_dir):
    from . import alignment as al
    from . import autodiff as ad

    if mp.cfg.variant != "kt-rl-cif":
        raise ConfigError("--dump-align requires a kt-rl-cif checkpoint")
    os.makedirs(out_dir, exist_ok=True)
    for u in utts:
        with ad.no_grad():
            h = model_mod.encode(mp, u.frames)
            w = al.cif_weights(h, mp.params["cif.fc.w"], mp.params["cif.fc.b"])
            w_hat = al.scale_weights(w, u.n)
        al.dump_alignment_csv(os.path.join(out_dir, f"{u.id}.csv"), w_hat.data, u.n)


def cmd_verify(args) -> int:
    reports = verify_mod.run_all(quick=args.fast)
    failed = False
    for rep in reports:
        print(rep.line())
        for detail in rep.failures:
            print(f"    first failure: {detail}")
            failed = True
    if failed:
        return 1
    print("all suites passed")
    return 0


_REPORT_COLUMNS = (
    ("variant", "variant"),
    ("aux", "aux"),
    ("seed", "seed"),
    ("dev_cer", "best_dev_cer"),
    ("test_greedy", "test_cer_greedy"),
    ("test_beam", "test_cer_beam"),
    ("test_beam_lm", "test_cer_beam_lm"),
    ("test_joint", "test_cer_joint"),
    ("fwd_s_iter", "fwd_s_per_iter"),
    ("bwd_s_iter", "bwd_s_per_iter"),
)


def _load_summary(path):
    summary = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}:{lineno}: malformed JSONL ({exc})") from exc
            if record.get("summary"):
                summary = record
    if summary is None:
        raise ConfigError(f"{path}: no summary record (training incomplete?)")
    return summary


def _format_cell(value):
    if value is None:
        return "-"
    if isinstance(value, float):
        return f"{value:.4f}"
    return str(value)


def cmd_report(args) -> int:
    rows = [_load_summary(path) for path in args.metrics]
    rows.sort(key=lambda r: (r.get("test_cer_beam", float("inf")), r.get("variant", "")))
    headers = [h for h, _ in _REPORT_COLUMNS]
    table = [[_format_cell(r.get(key)) for _, key in _REPORT_COLUMNS] for r in rows]
    widths = [max(len(h), *(len(row[i]) for row in table)) for i, h in enumerate(headers)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(headers, widths))]
    for row in table:
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)))
    text = "\n".join(lines) + "\n"
    print(text, end="")
    base = args.out or "report"
    ckpt.atomic_write(base + ".txt", text.encode())
    csv_lines = [",".join(headers)]
    for row in table:
        csv_lines.append(",".join(row))
    ckpt.atomic_write(base + ".csv", ("\n".join(csv_lines) + "\n").encode())
    print(f"wrote {base}.txt and {base}.csv")
    return 0


def cmd_defaults(args) -> int:
    print(cfg_mod.defaults_text(), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ctkt",
        description="CTC sequence transduction with LM knowledge transfer, desk scale.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate the synthetic corpus")
    p.add_argument("--config", required=True)
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("build-teacher", help="build (and fit) a frozen teacher LM")
    p.add_argument("--config", required=True)
    p.add_argument("--directionality", choices=tch.DIRECTIONALITIES)
    p.set_defaults(fn=cmd_build_teacher)

    p = sub.add_parser("train", help="train one variant per the config")
    p.add_argument("--config", required=True)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a corpus split")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True, help="directory holding <split>.bin")
    p.add_argument("--split", default="test", choices=sd.SPLITS)
    p.add_argument("--beam", type=int, default=0, help="0 = greedy decode")
    p.add_argument("--lm-weight", type=float, default=0.0)
    p.add_argument("--joint-gamma", type=float, default=None)
    p.add_argument("--teacher", help="teacher checkpoint for fusion/joint")
    p.add_argument("--out", help="write per-utterance JSONL here")
    p.add_argument("--dump-align", help="write CIF alignment CSVs here")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("verify", help="run oracle/gradient/invariant suites")
    p.add_argument("--fast", action="store_true", help="reduced check counts")
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser("report", help="tabulate training metrics files")
    p.add_argument("metrics", nargs="+")
    p.add_argument("--out", help="output basename (default: report)")
    p.set_defaults(fn=cmd_report)

    p = sub.add_parser("defaults", help="print the default config")
    p.set_defaults(fn=cmd_defaults)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except CheckpointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ConfigError, ContractError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except CtktError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
