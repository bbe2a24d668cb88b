"""Command-line interface.

Every subcommand writes its outputs under ``--out``. On failure the process
exits with status 1 and prints a single JSON line to stderr,
``{"error": "<ExceptionType>", "message": "..."}``.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import os
import sys

import numpy as np

from .brainnet import Channel
from .cohort import TASKS
from .dataio import FEATURE_FILES, SynthConfig, generate_synthetic, load_cohort, save_cohort
from .fileutil import atomic_write_text
from .metrics import evaluate, summarize
from .model import save_checkpoint
from .pipeline import (
    MODES,
    ExperimentConfig,
    ExperimentResult,
    apply_splits,
    build_branch_graphs,
    cross_validate,
    fit_once,
    modality_features,
    resolve_splits,
    run_ablation,
    run_experiment,
    task_subjects,
)
from .popgraph import ABLATION_ROWS, PhenoConfig, SigmaRule
from .trainer import TrainConfig

REPORT_SCHEMA = "popgnn-report/1"
TASK_FLAGS = {"adnc": "AD_NC", "smcipmci": "SMCI_PMCI"}
CHANNEL_FLAGS = {"gm": Channel.GM, "wm": Channel.WM, "gmwm": Channel.GM_PLUS_WM}


class _Parser(argparse.ArgumentParser):
    """Usage errors become the same JSON error line as runtime failures."""

    def error(self, message):
        self.exit(2, json.dumps({"error": "UsageError", "message": f"{self.prog}: {message}"}) + "\n")


def _add_shared(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")


def _add_cohort(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("cohort input")
    g.add_argument("--cohort", help="directory with subjects.csv and the modality CSVs")
    g.add_argument("--subjects", help="subjects table (overrides --cohort)")
    g.add_argument("--pet", help="PET SUVR feature table")
    g.add_argument("--gm", help="sMRI grey-matter feature table")
    g.add_argument("--wm", help="sMRI white-matter feature table")
    p.add_argument("--task", choices=sorted(TASK_FLAGS), default="adnc")
    p.add_argument("--channel", choices=sorted(CHANNEL_FLAGS), default="gm", help="sMRI tissue channel")


def _add_model(p: argparse.ArgumentParser) -> None:
    p.add_argument("--arch", choices=["gcn", "cheb"], default="cheb")
    p.add_argument("--mode", choices=sorted(MODES), default="ifusion")
    p.add_argument("--pheno", default="none", help="comma list of gender,apoe4,mmse,age or 'none'")
    p.add_argument("--sigma", type=float, default=None, help="fixed kernel width (default: mean correlation distance)")
    p.add_argument("--epochs", type=int, default=None, help="default 100 for cheb, 300 for gcn")
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--weight-decay", type=float, default=5e-4)
    p.add_argument("--dropout", type=float, default=0.5)
    p.add_argument("--hidden", type=int, default=32)
    p.add_argument("--k-order", type=int, default=3)
    p.add_argument("--optimizer", choices=["adam", "sgd"], default="adam")
    p.add_argument("--fuse-in-loss", action="store_true", help="train on the late-fused probabilities")
    p.add_argument("--keep-best", action="store_true", help="restore the best-validation epoch")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="popgnn", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synth", help="write a synthetic cohort")
    _add_shared(p)
    p.add_argument("--task", choices=sorted(TASK_FLAGS), default="adnc")
    p.add_argument("--n-per-class", type=int, default=100)
    p.add_argument("--p-rois", type=int, default=30)
    p.add_argument("--affected-fraction", type=float, default=0.3)
    p.add_argument("--effect-size", type=float, default=1.5)
    p.add_argument("--assign-splits", action="store_true", help="write the 70/15/15 sorted-id split column")

    p = sub.add_parser("brainnet", help="write brain-network node features per modality")
    _add_shared(p)
    _add_cohort(p)

    p = sub.add_parser("graph", help="write the branch adjacency matrices")
    _add_shared(p)
    _add_cohort(p)
    _add_model(p)

    p = sub.add_parser("train", help="train on one split; write checkpoint, log and predictions")
    _add_shared(p)
    _add_cohort(p)
    _add_model(p)

    p = sub.add_parser("eval", help="score predictions, or run repeated / cross-validated experiments")
    _add_shared(p)
    _add_cohort(p)
    _add_model(p)
    p.add_argument("--predictions", help="predictions.csv from 'train'; skips training")
    p.add_argument("--repeats", type=int, default=1)
    p.add_argument("--folds", type=int, default=None, help="k-fold cross-validation instead of repeats")

    p = sub.add_parser("ablate", help="phenotype ablation over the standard row set")
    _add_shared(p)
    _add_cohort(p)
    _add_model(p)
    p.add_argument("--repeats", type=int, default=1)
    p.add_argument("--rows", default=None, help="comma list of row names (default: all)")

    p = sub.add_parser("report", help="render a report or ablation JSON as a text table")
    p.add_argument("input", help="report.json or ablation.json")
    p.add_argument("--out", default=None, help="directory for report.txt (default: print only)")
    return parser


# -- helpers --------------------------------------------------------------------

def _load(args):
    paths = {}
    subjects = args.subjects
    if args.cohort:
        subjects = subjects or os.path.join(args.cohort, "subjects.csv")
        for modality, name in FEATURE_FILES.items():
            candidate = os.path.join(args.cohort, name)
            if os.path.exists(candidate):
                paths[modality] = candidate
    for flag, modality in (("pet", "PET_SUVR"), ("gm", "SMRI_GM"), ("wm", "SMRI_WM")):
        if getattr(args, flag):
            paths[modality] = getattr(args, flag)
    if not subjects:
        raise ValueError("no cohort given: use --cohort DIR or --subjects with --pet/--gm/--wm")
    missing = {"PET_SUVR", "SMRI_GM", "SMRI_WM"} - set(paths)
    if missing:
        raise ValueError(f"missing feature tables for {sorted(missing)}")
    return load_cohort(subjects, paths)


def _experiment_config(args) -> ExperimentConfig:
    train = TrainConfig(
        lr=args.lr, weight_decay=args.weight_decay, dropout=args.dropout, epochs=args.epochs,
        k_order=args.k_order, hidden=args.hidden, seed=args.seed, optimizer=args.optimizer,
        fuse_in_loss=args.fuse_in_loss, keep_best=args.keep_best,
    )
    return ExperimentConfig(
        task=TASK_FLAGS[args.task], arch=args.arch, mode=args.mode,
        pheno=PhenoConfig.from_names(args.pheno.split(",")),
        sigma=SigmaRule(args.sigma), channel=CHANNEL_FLAGS[args.channel], train=train,
    )


def _config_dict(cfg: ExperimentConfig) -> dict:
    d = dataclasses.asdict(cfg)
    d["channel"] = cfg.channel.value
    return d


def _matrix_csv(ids, m: np.ndarray, prefix: str | None = None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    cols = ids if prefix is None else [f"{prefix}_{j + 1}" for j in range(m.shape[1])]
    w.writerow(["id", *cols])
    for sid, row in zip(ids, m):
        w.writerow([sid, *(repr(float(v)) for v in row)])
    return buf.getvalue()


def _write_json(path, obj) -> None:
    atomic_write_text(path, json.dumps(obj, sort_keys=True, indent=2) + "\n")


def _splits_for(bundle, cfg, seed):
    nodes, reference = task_subjects(bundle, cfg.task)
    splits = resolve_splits(nodes, 1, seed)[0]
    return nodes, apply_splits(nodes, reference, splits), splits


def _experiment_doc(kind: str, cfg: ExperimentConfig, result: ExperimentResult) -> dict:
    return {
        "schema": REPORT_SCHEMA,
        "kind": kind,
        "method": cfg.method_name(),
        "config": _config_dict(cfg),
        "runs": [r.report.to_dict() for r in result.runs],
        "summary": result.summary(),
    }


# -- commands -------------------------------------------------------------------

def cmd_gen_synth(args) -> None:
    cfg = SynthConfig(n_per_class=args.n_per_class, p_rois=args.p_rois, affected_fraction=args.affected_fraction,
                      effect_size=args.effect_size, seed=args.seed, task=TASK_FLAGS[args.task])
    bundle = generate_synthetic(cfg)
    if args.assign_splits:
        nodes, reference = task_subjects(bundle, cfg.task)
        bundle = bundle.with_subjects(apply_splits(nodes, reference, resolve_splits(nodes, 1, args.seed, "id")[0]))
    save_cohort(bundle, args.out)
    _write_json(os.path.join(args.out, "provenance.json"), bundle.provenance)


def cmd_brainnet(args) -> None:
    bundle = _load(args)
    cfg = ExperimentConfig(task=TASK_FLAGS[args.task], channel=CHANNEL_FLAGS[args.channel])
    nodes, subjects, splits = _splits_for(bundle, cfg, args.seed)
    ids = [s.id for s in nodes]
    x_smri, x_pet = modality_features(bundle, subjects, ids, cfg.channel)
    atomic_write_text(os.path.join(args.out, "features_smri.csv"), _matrix_csv(ids, x_smri, "f"))
    atomic_write_text(os.path.join(args.out, "features_pet.csv"), _matrix_csv(ids, x_pet, "f"))
    _write_json(os.path.join(args.out, "splits.json"), splits)


def cmd_graph(args) -> None:
    bundle = _load(args)
    cfg = _experiment_config(args)
    nodes, subjects, splits = _splits_for(bundle, cfg, args.seed)
    ids = [s.id for s in nodes]
    x_smri, x_pet = modality_features(bundle, subjects, ids, cfg.channel)
    graphs = build_branch_graphs(x_smri, x_pet, nodes, cfg.mode, cfg.pheno, cfg.sigma)
    for b, a in enumerate(graphs.adjs):
        atomic_write_text(os.path.join(args.out, f"adjacency_branch{b}.csv"), _matrix_csv(ids, a))
    _write_json(os.path.join(args.out, "graph.json"), {
        "method": cfg.method_name(), "adjacency_path": list(graphs.adjacency_path), "n_nodes": len(ids),
        "nonzero_edges": [int(np.count_nonzero(a)) // 2 for a in graphs.adjs], "splits": splits,
    })


def _predictions_csv(fit) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    n_branches = len(fit.branch_probs)
    w.writerow(["id", "split", *(f"p_branch{b}" for b in range(n_branches)), "p_fused"])
    for i, sid in enumerate(fit.subject_ids):
        w.writerow([sid, fit.splits[sid], *(repr(float(p[i, 1])) for p in fit.branch_probs),
                    repr(float(fit.fused_probs[i, 1]))])
    return buf.getvalue()


def cmd_train(args) -> None:
    bundle = _load(args)
    cfg = _experiment_config(args)
    nodes, _ = task_subjects(bundle, cfg.task)
    splits = resolve_splits(nodes, 1, args.seed)[0]
    fit = fit_once(bundle, cfg, splits, args.seed)
    save_checkpoint(fit.model, os.path.join(args.out, "checkpoint.json"))
    atomic_write_text(os.path.join(args.out, "trainlog.jsonl"), fit.log.to_jsonl())
    atomic_write_text(os.path.join(args.out, "predictions.csv"), _predictions_csv(fit))
    _write_json(os.path.join(args.out, "run.json"), {
        "method": cfg.method_name(), "config": _config_dict(cfg), "adjacency_path": list(fit.adjacency_path),
    })


def _read_predictions(path):
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or "p_fused" not in rows[0]:
        raise ValueError(f"{path}: not a predictions file")
    return rows


def cmd_eval(args) -> None:
    bundle = _load(args)
    cfg = _experiment_config(args)
    if args.predictions:
        negative, positive = TASKS[cfg.task]
        labels = {s.id: s.label for s in bundle.subjects}
        rows = [r for r in _read_predictions(args.predictions) if r["split"] == "test"]
        unknown = [r["id"] for r in rows if r["id"] not in labels]
        if unknown:
            raise ValueError(f"prediction for unknown subject {unknown[0]!r}")
        report = evaluate([float(r["p_fused"]) for r in rows], [labels[r["id"]] for r in rows], positive, negative)
        doc = {"schema": REPORT_SCHEMA, "kind": "evaluation", "method": cfg.method_name(),
               "config": _config_dict(cfg), "runs": [report.to_dict()], "summary": summarize([report])}
    elif args.folds:
        doc = _experiment_doc("cross-validation", cfg, cross_validate(bundle, cfg, args.folds, args.seed))
    else:
        doc = _experiment_doc("evaluation", cfg, run_experiment(bundle, cfg, args.repeats, args.seed))
    _write_json(os.path.join(args.out, "report.json"), doc)


def cmd_ablate(args) -> None:
    bundle = _load(args)
    cfg = _experiment_config(args)
    rows = ABLATION_ROWS
    if args.rows:
        names = [n.strip() for n in args.rows.split(",")]
        unknown = [n for n in names if n not in ABLATION_ROWS]
        if unknown:
            raise ValueError(f"unknown ablation row(s) {unknown}; choose from {list(ABLATION_ROWS)}")
        rows = {n: ABLATION_ROWS[n] for n in names}
    results = run_ablation(bundle, cfg, rows, args.repeats, args.seed)
    _write_json(os.path.join(args.out, "ablation.json"), {
        "schema": REPORT_SCHEMA,
        "kind": "ablation",
        "method": cfg.method_name(),
        "row_order": list(results),
        "rows": {name: _experiment_doc("evaluation", res.config, res) for name, res in results.items()},
    })


def _fmt(stat: dict) -> str:
    if stat["mean"] is None:
        return "   n/a"
    return f"{100 * stat['mean']:6.2f}±{100 * stat['std']:.2f}"


def render_report(doc: dict) -> str:
    if doc.get("schema") != REPORT_SCHEMA:
        raise ValueError("not a popgnn report document")
    header = f"{'row':<12} {'ACC':>12} {'SEN':>12} {'SPE':>12} {'AUC':>12}  n"
    lines = [f"{doc['kind']}: {doc['method']}", header]
    if doc["kind"] == "ablation":
        order = doc.get("row_order") or list(doc["rows"])
        entries = [(name, doc["rows"][name]) for name in order]
    else:
        entries = [(doc["kind"][:12], doc)]
    for name, entry in entries:
        s = entry["summary"]
        lines.append(f"{name:<12} {_fmt(s['acc']):>12} {_fmt(s['sen']):>12} {_fmt(s['spe']):>12} "
                     f"{_fmt(s['auc']):>12}  {s['n']}")
    return "\n".join(lines) + "\n"


def cmd_report(args) -> None:
    with open(args.input, encoding="utf-8") as fh:
        text = render_report(json.load(fh))
    sys.stdout.write(text)
    if args.out:
        atomic_write_text(os.path.join(args.out, "report.txt"), text)


COMMANDS = {
    "gen-synth": cmd_gen_synth,
    "brainnet": cmd_brainnet,
    "graph": cmd_graph,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "report": cmd_report,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        COMMANDS[args.command](args)
    except Exception as exc:
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
