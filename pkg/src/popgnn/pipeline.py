"""Experiment harness: features -> graphs -> fusion -> training -> evaluation."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .brainnet import DEFAULT_EPS, Channel, brain_network_features, build_nc_reference
from .cohort import TASKS, SubjectRecord
from .dataio import CohortBundle
from .fusion import BranchGraphs, FusionMode, assemble_branch_graphs
from .metrics import EvalReport, evaluate, kfold_split, summarize
from .model import DualBranchModel, init_branch, predict_proba, propagation_for
from .popgraph import ABLATION_ROWS, PhenoConfig, SigmaRule, build_adjacency
from .seeding import stage_rng, stage_seed
from .trainer import TrainConfig, TrainLog, train

MODES = {
    "dual": FusionMode.DUAL,
    "integration": FusionMode.INTEGRATION,
    "fusion": FusionMode.FEATURE_FUSION,
    "ifusion": FusionMode.INTEGRATED_FUSION,
    "single-smri": None,
    "single-pet": None,
}
SPLIT_FRACTIONS = (0.70, 0.15, 0.15)


@dataclass
class ExperimentConfig:
    task: str = "AD_NC"
    arch: str = "cheb"
    mode: str = "ifusion"
    pheno: PhenoConfig = field(default_factory=PhenoConfig.similarity)
    sigma: SigmaRule = field(default_factory=SigmaRule)
    channel: Channel = Channel.GM
    train: TrainConfig = field(default_factory=TrainConfig)
    eps: float = DEFAULT_EPS

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}; choose from {sorted(TASKS)}")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; choose from {sorted(MODES)}")
        if self.arch not in ("gcn", "cheb"):
            raise ValueError(f"unknown architecture {self.arch!r}")
        self.channel = Channel(self.channel)

    def method_name(self) -> str:
        fusion = MODES[self.mode]
        if fusion is None:
            return f"{'CGCN' if self.arch == 'cheb' else 'GCN'} ({self.mode})"
        return fusion.method_name(self.arch)


@dataclass
class FitResult:
    """A trained model and its predictions for every node of the task graph."""

    model: DualBranchModel
    log: TrainLog
    subject_ids: list[str]
    splits: dict[str, str]
    branch_probs: list[np.ndarray]
    fused_probs: np.ndarray
    adjacency_path: tuple[str, ...]


@dataclass
class RunResult:
    report: EvalReport
    fit: FitResult

    @property
    def log(self) -> TrainLog:
        return self.fit.log

    @property
    def model(self) -> DualBranchModel:
        return self.fit.model

    @property
    def adjacency_path(self) -> tuple[str, ...]:
        return self.fit.adjacency_path


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    runs: list[RunResult]

    @property
    def reports(self) -> list[EvalReport]:
        return [r.report for r in self.runs]

    def summary(self) -> dict:
        out = summarize(self.reports)
        out["method"] = self.config.method_name()
        out["pheno"] = self.config.pheno.label()
        return out


# -- splits ---------------------------------------------------------------------

def task_subjects(bundle: CohortBundle, task: str) -> tuple[list[SubjectRecord], list[SubjectRecord]]:
    """(graph nodes for the task, NC subjects kept only as the brain-network reference)."""
    classes = set(TASKS[task])
    nodes = [s for s in bundle.subjects if s.label in classes]
    reference = [s for s in bundle.subjects if s.label == "NC" and s.label not in classes]
    if not nodes:
        raise ValueError(f"cohort has no subjects for task {task}")
    missing = classes - {s.label for s in nodes}
    if missing:
        raise ValueError(f"task {task} needs both classes; missing {sorted(missing)}")
    return nodes, reference


def split_by_id(ids: list[str], fractions=SPLIT_FRACTIONS) -> dict[str, str]:
    """First 70% of sorted ids train, next 15% validate, the rest test."""
    ordered = sorted(ids)
    n = len(ordered)
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    return {sid: ("train" if i < n_train else "val" if i < n_train + n_val else "test")
            for i, sid in enumerate(ordered)}


def disjoint_test_splits(
    subjects: list[SubjectRecord], n_splits: int, seed: int, fractions=SPLIT_FRACTIONS
) -> list[dict[str, str]]:
    """``n_splits`` assignments whose test sets are pairwise disjoint.

    Each class is shuffled once; test set r takes the r-th consecutive block of
    ``fractions[2]`` of every class. Validation is then drawn from the
    remaining subjects of each class, and everything else trains.
    """
    test_frac, val_frac = fractions[2], fractions[1]
    if n_splits * test_frac > 1.0 + 1e-9:
        raise ValueError(f"{n_splits} disjoint test sets of {test_frac:.0%} do not fit in the cohort")
    rng = stage_rng(seed, "subsets")
    by_class: dict[str, list[str]] = {}
    for s in subjects:
        by_class.setdefault(s.label, []).append(s.id)
    shuffled = {c: list(rng.permutation(sorted(ids))) for c, ids in sorted(by_class.items())}
    out = []
    for r in range(n_splits):
        assign = {}
        for c, ids in shuffled.items():
            n_test = int(round(test_frac * len(ids)))
            test = set(ids[r * n_test:(r + 1) * n_test])
            rest = [i for i in ids if i not in test]
            n_val = int(round(val_frac * len(ids)))
            val = set(stage_rng(seed, "subsets-val", r, c).permutation(rest)[:n_val])
            for sid in ids:
                assign[sid] = "test" if sid in test else "val" if sid in val else "train"
        out.append(assign)
    return out


def resolve_splits(nodes: list[SubjectRecord], repeats: int, seed: int, strategy: str = "auto") -> list[dict[str, str]]:
    if strategy == "auto":
        if all(s.split for s in nodes):
            strategy = "file"
        else:
            strategy = "id" if repeats == 1 else "subsets"
    if strategy == "file":
        if not all(s.split for s in nodes):
            raise ValueError("split strategy 'file' needs a split for every subject")
        return [{s.id: s.split for s in nodes}] * repeats
    if strategy == "id":
        return [split_by_id([s.id for s in nodes])] * repeats
    if strategy == "subsets":
        return disjoint_test_splits(nodes, repeats, seed)
    raise ValueError(f"unknown split strategy {strategy!r}")


def apply_splits(nodes, reference, splits: dict[str, str]) -> list[SubjectRecord]:
    """Node subjects with their assigned split; reference-only NC subjects are always train."""
    return ([dataclasses.replace(s, split=splits[s.id]) for s in nodes]
            + [dataclasses.replace(s, split="train") for s in reference])


# -- graph building -------------------------------------------------------------

def modality_features(bundle: CohortBundle, subjects: list[SubjectRecord], node_ids: list[str],
                      channel: Channel = Channel.GM, eps: float = DEFAULT_EPS) -> tuple[np.ndarray, np.ndarray]:
    """(sMRI, PET) brain-network features of ``node_ids``, each against its own training NC reference."""
    smri = bundle.smri(channel)
    pet = bundle.table("PET_SUVR")
    x_smri = brain_network_features(smri, build_nc_reference(smri, subjects), node_ids, eps)
    x_pet = brain_network_features(pet, build_nc_reference(pet, subjects), node_ids, eps)
    return x_smri, x_pet


def build_branch_graphs(x_smri, x_pet, nodes: list[SubjectRecord], mode: str,
                        pheno: PhenoConfig, sigma: SigmaRule) -> BranchGraphs:
    if mode == "single-smri":
        return BranchGraphs((build_adjacency(x_smri, nodes, pheno, sigma),), (x_smri,), ("A_s",))
    if mode == "single-pet":
        return BranchGraphs((build_adjacency(x_pet, nodes, pheno, sigma),), (x_pet,), ("A_f",))
    a_s = build_adjacency(x_smri, nodes, pheno, sigma)
    a_f = build_adjacency(x_pet, nodes, pheno, sigma)
    return assemble_branch_graphs(a_s, a_f, x_smri, x_pet, MODES[mode], nodes, pheno, sigma)


def fit_once(bundle: CohortBundle, cfg: ExperimentConfig, splits: dict[str, str], seed: int) -> FitResult:
    """Build the graphs for one split and train on it. Test-node labels are never read."""
    nodes, reference = task_subjects(bundle, cfg.task)
    subjects = apply_splits(nodes, reference, splits)
    node_subjects = subjects[: len(nodes)]
    node_ids = [s.id for s in node_subjects]
    positive = TASKS[cfg.task][1]

    x_smri, x_pet = modality_features(bundle, subjects, node_ids, cfg.channel, cfg.eps)
    graphs = build_branch_graphs(x_smri, x_pet, node_subjects, cfg.mode, cfg.pheno, cfg.sigma)

    tcfg = cfg.train
    props = [propagation_for(cfg.arch, a, tcfg.k_order) for a in graphs.adjs]
    init_rng = stage_rng(seed, "init")
    model = DualBranchModel(
        [init_branch(cfg.arch, x.shape[1], tcfg.hidden, 2, init_rng, tcfg.k_order, tcfg.dropout, tcfg.use_bias)
         for x in graphs.xs],
        seed=seed,
    )

    split_arr = np.array([s.split for s in node_subjects])
    train_mask, val_mask = split_arr == "train", split_arr == "val"
    visible_labels = np.array([
        -1 if s.split == "test" else int(s.label == positive) for s in node_subjects
    ])
    run_cfg = dataclasses.replace(tcfg, seed=int(stage_seed(seed, "train").generate_state(1)[0]))
    model, log = train(model, props, list(graphs.xs), visible_labels, train_mask, val_mask, run_cfg,
                       epochs=tcfg.epochs_for(cfg.arch))
    branch_probs, fused = predict_proba(model, props, graphs.xs)
    return FitResult(model, log, node_ids, {s.id: s.split for s in node_subjects},
                     branch_probs, fused, graphs.adjacency_path)


def evaluate_fit(bundle: CohortBundle, cfg: ExperimentConfig, fit: FitResult) -> EvalReport:
    """Score the test nodes of a fit against their true labels."""
    negative, positive = TASKS[cfg.task]
    labels = {s.id: s.label for s in bundle.subjects}
    test_rows = [i for i, sid in enumerate(fit.subject_ids) if fit.splits[sid] == "test"]
    if not test_rows:
        raise ValueError("split has no test subjects")
    truth = [labels[fit.subject_ids[i]] for i in test_rows]
    report = evaluate(fit.fused_probs[test_rows, 1], truth, positive, negative)
    is_pos = np.array([t == positive for t in truth])
    report.extra = {
        "method": cfg.method_name(),
        "pheno": cfg.pheno.label(),
        "seed": fit.model.seed,
        "branch_acc": [float(np.mean((p[test_rows, 1] > 0.5) == is_pos)) for p in fit.branch_probs],
    }
    return report


def run_once(bundle: CohortBundle, cfg: ExperimentConfig, splits: dict[str, str], seed: int) -> RunResult:
    fit = fit_once(bundle, cfg, splits, seed)
    return RunResult(evaluate_fit(bundle, cfg, fit), fit)


def run_experiment(bundle: CohortBundle, cfg: ExperimentConfig, repeats: int = 1, seed: int = 0,
                   split_strategy: str = "auto") -> ExperimentResult:
    """Repeat :func:`run_once` over seeds and (by default) disjoint test subsets."""
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    nodes, _ = task_subjects(bundle, cfg.task)
    splits = resolve_splits(nodes, repeats, seed, split_strategy)
    runs = [run_once(bundle, cfg, splits[r], int(stage_seed(seed, "repeat", r).generate_state(1)[0]))
            for r in range(repeats)]
    return ExperimentResult(cfg, runs)


def run_ablation(bundle: CohortBundle, cfg: ExperimentConfig, rows: dict[str, PhenoConfig] | None = None,
                 repeats: int = 1, seed: int = 0, split_strategy: str = "auto") -> dict[str, ExperimentResult]:
    """One experiment per phenotype configuration, all on identical splits and seeds."""
    rows = ABLATION_ROWS if rows is None else rows
    return {name: run_experiment(bundle, dataclasses.replace(cfg, pheno=pheno), repeats, seed, split_strategy)
            for name, pheno in rows.items()}


def cross_validate(bundle: CohortBundle, cfg: ExperimentConfig, k: int = 5, seed: int = 0) -> ExperimentResult:
    """Stratified k-fold CV: each fold is the test set once."""
    nodes, _ = task_subjects(bundle, cfg.task)
    folds = kfold_split([s.label for s in nodes], k, seed)
    runs = []
    for f, (tr, va, te) in enumerate(folds):
        splits = {s.id: ("train" if tr[i] else "val" if va[i] else "test") for i, s in enumerate(nodes)}
        runs.append(run_once(bundle, cfg, splits, int(stage_seed(seed, "fold", f).generate_state(1)[0])))
    return ExperimentResult(cfg, runs)
