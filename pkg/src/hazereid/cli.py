"""Command-line entry point.

    hazereid gen-data --ids 50 --per-id 8 --cams 2 --seed 7 --out data/src
    hazereid haze --in data/tgt --depth ramp --seed 3 --out data/tgt_hazy
    hazereid pretrain --source data/src --out runs/pre
    hazereid adapt --ckpt runs/pre/pretrain.ckpt --target data/tgt --out runs/ism
    hazereid eval --ckpt runs/ism/student.ckpt --query data/tgt_hazy/query \\
        --gallery data/tgt_hazy/gallery --out runs/ism/eval
    hazereid run-ablation --out runs/ablation

Every config key is also a flag (``--adapt-lr 0.001``); values from ``--config``
are applied first and flags win.  The effective config is written as
``config.txt`` into each output folder.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import fields
from pathlib import Path

from . import experiment, trainer
from .config import ExperimentSpec, load_spec, parse_value
from .data import (DatasetSplit, generate_synthetic_identities, load_split, save_split,
                   split_query_gallery, write_manifest)
from .errors import ConfigError, ContractError, DimensionError, NumericError, ParseError
from .evaluation import evaluate_model, write_histograms, write_rankings_csv
from .experiment import STREAMS, TEST_ID_GAP, ToyData
from .haze import hazify_dataset
from .models import load_checkpoint, save_checkpoint

logger = logging.getLogger("hazereid")

KNOWN_ERRORS = (ConfigError, ContractError, DimensionError, NumericError, ParseError,
                FileNotFoundError)
ROLE_DIRS = ("train", "query", "gallery")


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def prepare_out(out: Path, force: bool) -> Path:
    if out.exists() and any(out.iterdir()) and not force:
        raise ConfigError(f"output folder {out} is not empty; pass --force to overwrite")
    out.mkdir(parents=True, exist_ok=True)
    return out


def clear_images(folder: Path) -> None:
    """Drop PNGs left by an earlier run so --force reruns leave identical trees."""
    if folder.is_dir():
        for p in folder.glob("*.png"):
            p.unlink()


def echo_config(out: Path, spec: ExperimentSpec) -> None:
    (out / "config.txt").write_text(spec.to_text())


def check_outputs(*paths: Path) -> None:
    missing = [str(p) for p in paths if not p.exists()]
    if missing:
        raise ContractError(f"declared outputs missing: {', '.join(missing)}")


def role_dir(root: Path, role: str) -> Path:
    """``root/role`` if present; a flat folder counts as the train split."""
    sub = root / role
    if sub.is_dir():
        return sub
    if role == "train" and root.is_dir():
        return root
    raise FileNotFoundError(f"no {role} folder under {root}")


def load_role(root: str | Path, role: str) -> DatasetSplit:
    return load_split(role_dir(Path(root), role), role)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_gen_data(args, spec: ExperimentSpec) -> None:
    out = prepare_out(Path(args.out), args.force)
    splits = {"train": generate_synthetic_identities(
        spec.ids, spec.per_id, spec.cams, spec.height, spec.width, spec.seed, spec.id_offset)}
    if spec.test_ids > 0:
        test = generate_synthetic_identities(spec.test_ids, spec.per_id, spec.cams, spec.height,
                                             spec.width, spec.seed, spec.id_offset + TEST_ID_GAP)
        splits["query"], splits["gallery"] = split_query_gallery(test, spec.queries_per_id, spec.seed)
    for role, split in splits.items():
        clear_images(out / role)
        save_split(split, out / role)
    write_manifest(out / "manifest.json", splits, spec.seed)
    echo_config(out, spec)
    check_outputs(out / "manifest.json", *(out / r for r in splits))
    print(f"wrote {sum(len(s) for s in splits.values())} images to {out}")


def cmd_haze(args, spec: ExperimentSpec) -> None:
    src = Path(args.input)
    if not src.is_dir():
        raise FileNotFoundError(f"input folder not found: {src}")
    out = prepare_out(Path(args.out), args.force)
    roles = [r for r in ROLE_DIRS if (src / r).is_dir()]
    jobs = [(r, src / r, out / r) for r in roles] or [("train", src, out)]
    params = spec.haze_params(spec.seed)
    log_lines = ["role\tclear\thazy\tbeta"]
    total = 0
    for role, folder, dest in jobs:
        clear = load_split(folder, role)
        hazy, betas = hazify_dataset(clear, spec.depth, params, STREAMS[role], spec.workers)
        clear_images(dest)
        save_split(hazy, dest)
        log_lines += [f"{role}\t{c.name}\t{h.name}\t{b!r}"
                      for c, h, b in zip(clear.samples, hazy.samples, betas)]
        total += len(hazy)
    (out / "betas.tsv").write_text("\n".join(log_lines) + "\n")
    echo_config(out, spec)
    check_outputs(out / "betas.tsv")
    print(f"wrote {total} hazy images to {out}")


def cmd_pretrain(args, spec: ExperimentSpec) -> None:
    source = load_role(_required(args.source, "--source"), "train")
    out = prepare_out(Path(args.out), args.force)
    ckpt, log = trainer.pretrain(source, spec.train_config(spec.seed))
    save_checkpoint(ckpt, out / "pretrain.ckpt")
    log.write(out / "pretrain_log.jsonl")
    echo_config(out, spec)
    load_checkpoint(out / "pretrain.ckpt")
    check_outputs(out / "pretrain_log.jsonl")
    last = log.records[-1]["ce"] if log.records else float("nan")
    print(f"pretrained on {len(source)} images; final ce {last:.4f}; saved {out / 'pretrain.ckpt'}")


def cmd_adapt(args, spec: ExperimentSpec) -> None:
    ckpt = load_checkpoint(_required(args.ckpt, "--ckpt"))
    target = load_role(_required(args.target, "--target"), "train")
    source = load_role(args.source, "train") if args.source else None
    out = prepare_out(Path(args.out), args.force)
    student, log = trainer.adapt(ckpt, target, spec.haze_params(spec.seed),
                                 spec.train_config(spec.seed), depth=spec.depth, source=source)
    save_checkpoint(student, out / "student.ckpt")
    log.write(out / "adapt_log.jsonl")
    echo_config(out, spec)
    load_checkpoint(out / "student.ckpt")
    check_outputs(out / "adapt_log.jsonl")
    print(f"adapted on {len(target)} clear/hazy pairs; saved {out / 'student.ckpt'}")


def cmd_eval(args, spec: ExperimentSpec) -> None:
    ckpt = load_checkpoint(_required(args.ckpt, "--ckpt"))
    query = load_split(_required(args.query, "--query"), "query")
    gallery = load_split(_required(args.gallery, "--gallery"), "gallery")
    out = prepare_out(Path(args.out), args.force)
    report, results = evaluate_model(ckpt.extractor, query, gallery)
    (out / "report.json").write_text(report.to_json())
    write_rankings_csv(out / "rankings.csv", results, query, gallery)
    write_histograms(out, report)
    echo_config(out, spec)
    check_outputs(out / "report.json", out / "rankings.csv", out / "hist_pos.tsv", out / "hist_neg.tsv")
    print(" ".join(f"rank{k} {100 * v:.2f}" for k, v in report.cmc.items())
          + f" mAP {100 * report.mAP:.2f} overlap {report.overlap:.4f}")


def cmd_run_ablation(args, spec: ExperimentSpec) -> None:
    out = prepare_out(Path(args.out), args.force)
    provider = None
    if args.source or args.target:
        data = ToyData(load_role(_required(args.source, "--source"), "train"),
                       load_role(_required(args.target, "--target"), "train"),
                       load_role(args.target, "query"), load_role(args.target, "gallery"))
        provider = lambda seed: data  # noqa: E731
    table = experiment.run_ablation(spec, data_for_seed=provider)
    (out / "ablation.json").write_text(table.to_json())
    (out / "ablation.txt").write_text(table.to_text())
    echo_config(out, spec)
    if experiment.AblationTable.from_json((out / "ablation.json").read_text()).rows != table.rows:
        raise ContractError("ablation report does not parse back losslessly")
    print(table.to_text(), end="")


def _required(value, flag: str):
    if not value:
        raise ConfigError(f"{flag} is required")
    return value


COMMANDS = {
    "gen-data": cmd_gen_data,
    "haze": cmd_haze,
    "pretrain": cmd_pretrain,
    "adapt": cmd_adapt,
    "eval": cmd_eval,
    "run-ablation": cmd_run_ablation,
}


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _common_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("global")
    g.add_argument("--config", help="key = value config file")
    g.add_argument("--out", default="out", help="output folder")
    g.add_argument("--force", action="store_true", help="overwrite a non-empty output folder")
    g.add_argument("-v", "--verbose", action="store_true")
    c = common.add_argument_group("config overrides")
    for f in fields(ExperimentSpec):
        c.add_argument("--" + f.name.replace("_", "-"), dest=f.name, default=argparse.SUPPRESS,
                       metavar="V")
    c.add_argument("--no-isl", dest="use_isl", action="store_const", const="false",
                   default=argparse.SUPPRESS)
    c.add_argument("--no-idkl", dest="use_idkl", action="store_const", const="false",
                   default=argparse.SUPPRESS)
    c.add_argument("--replay", dest="source_ce_replay", action="store_const", const="true",
                   default=argparse.SUPPRESS)
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_parser()
    parser = argparse.ArgumentParser(prog="hazereid", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-data", parents=[common], help="render a synthetic identity dataset")
    p = sub.add_parser("haze", parents=[common], help="hazify a clear dataset folder")
    p.add_argument("--in", dest="input", required=True)
    p = sub.add_parser("pretrain", parents=[common], help="supervised source pretraining")
    p.add_argument("--source")
    p = sub.add_parser("adapt", parents=[common], help="teacher-student adaptation on hazy target")
    p.add_argument("--ckpt")
    p.add_argument("--target")
    p.add_argument("--source", help="labeled source folder, needed with --replay")
    p = sub.add_parser("eval", parents=[common], help="CMC / mAP retrieval report")
    p.add_argument("--ckpt")
    p.add_argument("--query")
    p.add_argument("--gallery")
    p = sub.add_parser("run-ablation", parents=[common], help="baseline/+ISL/+IDKL/+both table")
    p.add_argument("--source", help="source folder (default: generate per seed)")
    p.add_argument("--target", help="target folder with train/query/gallery")
    return parser


def resolve_spec(args) -> ExperimentSpec:
    names = {f.name for f in fields(ExperimentSpec)}
    overrides = {k: parse_value(k, v) for k, v in vars(args).items() if k in names}
    return load_spec(args.config, overrides)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        spec = resolve_spec(args)
        COMMANDS[args.command](args, spec)
    except KNOWN_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
