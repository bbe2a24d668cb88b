"""Cohort files and the synthetic cohort generator.

File formats (UTF-8, comma-delimited, LF newlines, ``.`` decimal point):

* subjects table, header ``id,label,gender,age,apoe4,mmse[,split]``; an
  absent or empty split means the harness assigns one.
* one feature table per modality, header ``id,roi_1,...,roi_P``.
"""

from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass, field

import numpy as np

from .brainnet import Channel, build_smri_channel
from .cohort import MODALITIES, TASKS, RoiFeatureTable, SubjectRecord
from .fileutil import atomic_write_text
from .seeding import stage_rng

SUBJECT_COLUMNS = ["id", "label", "gender", "age", "apoe4", "mmse", "split"]
FEATURE_FILES = {"PET_SUVR": "pet_suvr.csv", "SMRI_GM": "smri_gm.csv", "SMRI_WM": "smri_wm.csv"}

# class -> (MMSE mean, MMSE sd), from the cohort demographics
MMSE_STATS = {
    "AD": (23.21, 2.13),
    "NC": (29.02, 1.21),
    "sMCI": (28.01, 0.71),
    "pMCI": (27.15, 1.81),
}
APOE4_PROBS = {"patient": (0.4, 0.4, 0.2), "control": (0.7, 0.25, 0.05)}

PET_MEAN, PET_SD = 1.0, 0.1
GM_MEAN, GM_SD = 5.0, 0.5
WM_MEAN, WM_SD = 4.0, 0.4
WM_ATROPHY_SCALE = 0.5
SHARED_VARIANCE = 0.5
N_FACTORS = 3


class CohortError(ValueError):
    """Invalid cohort file; the message names the file and line."""

    def __init__(self, path, line: int | None, message: str):
        where = f"{path}:{line}" if line is not None else str(path)
        super().__init__(f"{where}: {message}")
        self.path = str(path)
        self.line = line


@dataclass
class CohortBundle:
    subjects: list[SubjectRecord]
    roi_tables: dict[str, RoiFeatureTable]
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        ids = [s.id for s in self.subjects]
        if len(set(ids)) != len(ids):
            raise ValueError("cohort lists a subject more than once")
        known = set(ids)
        for modality, table in self.roi_tables.items():
            extra = [i for i in table.ids if i not in known]
            if extra:
                raise ValueError(f"{modality}: row for unknown subject {extra[0]!r}")
            present = set(table.ids)
            missing = [i for i in ids if i not in present]
            if missing:
                raise ValueError(f"{modality}: no row for subject {missing[0]!r}")

    @property
    def ids(self) -> list[str]:
        return [s.id for s in self.subjects]

    def table(self, modality: str, ids: list[str] | None = None) -> RoiFeatureTable:
        return self.roi_tables[modality].select(ids if ids is not None else self.ids)

    def smri(self, channel: Channel | str = Channel.GM, ids: list[str] | None = None) -> RoiFeatureTable:
        return build_smri_channel(self.table("SMRI_GM", ids), self.table("SMRI_WM", ids), channel)

    def with_subjects(self, subjects: list[SubjectRecord]) -> "CohortBundle":
        return CohortBundle(subjects, self.roi_tables, dict(self.provenance))


def _read_rows(path):
    try:
        fh = open(path, encoding="utf-8", newline="")
    except OSError as exc:
        raise CohortError(path, None, f"cannot open: {exc.strerror}") from None
    with fh:
        reader = csv.reader(fh)
        rows = [(i + 1, row) for i, row in enumerate(reader) if row and any(c.strip() for c in row)]
    if not rows:
        raise CohortError(path, None, "file is empty")
    return rows


def _parse_subjects(path) -> list[SubjectRecord]:
    rows = _read_rows(path)
    header = [h.strip() for h in rows[0][1]]
    required = SUBJECT_COLUMNS[:-1]
    if header[: len(required)] != required or len(header) not in (6, 7) or (len(header) == 7 and header[6] != "split"):
        raise CohortError(path, 1, f"expected header {','.join(SUBJECT_COLUMNS)} (split optional), got {','.join(header)}")
    subjects, seen = [], {}
    for line, row in rows[1:]:
        if len(row) != len(header):
            raise CohortError(path, line, f"expected {len(header)} fields, got {len(row)}")
        rec = dict(zip(header, (c.strip() for c in row)))
        try:
            age = float(rec["age"])
        except ValueError:
            raise CohortError(path, line, f"non-numeric age {rec['age']!r}") from None
        try:
            apoe4 = int(rec["apoe4"])
            mmse_f = float(rec["mmse"])
        except ValueError:
            raise CohortError(path, line, "non-numeric apoe4 or mmse") from None
        if not mmse_f.is_integer():
            raise CohortError(path, line, f"MMSE must be an integer score, got {rec['mmse']!r}")
        if not 0 <= mmse_f <= 30:
            raise CohortError(path, line, f"MMSE {rec['mmse']} outside [0, 30]")
        sid = rec["id"]
        if sid in seen:
            raise CohortError(path, line, f"duplicate subject id {sid!r} (first on line {seen[sid]})")
        seen[sid] = line
        try:
            subjects.append(SubjectRecord(
                id=sid, label=rec["label"], gender=rec["gender"], age=age, apoe4=apoe4,
                mmse=int(mmse_f), split=rec.get("split") or None,
            ))
        except ValueError as exc:
            raise CohortError(path, line, str(exc)) from None
    return subjects


def _parse_features(path, modality: str, known: dict[str, int]) -> RoiFeatureTable:
    rows = _read_rows(path)
    header = [h.strip() for h in rows[0][1]]
    if not header or header[0] != "id" or len(header) < 2:
        raise CohortError(path, 1, "expected header id,roi_1,...,roi_P")
    ids, values, seen = [], [], {}
    for line, row in rows[1:]:
        if len(row) != len(header):
            raise CohortError(path, line, f"expected {len(header)} fields, got {len(row)}")
        sid = row[0].strip()
        if sid not in known:
            raise CohortError(path, line, f"unknown subject id {sid!r}")
        if sid in seen:
            raise CohortError(path, line, f"duplicate subject id {sid!r} (first on line {seen[sid]})")
        seen[sid] = line
        vals = []
        for col, cell in zip(header[1:], row[1:]):
            try:
                v = float(cell)
            except ValueError:
                raise CohortError(path, line, f"non-numeric value {cell.strip()!r} in column {col}") from None
            if not np.isfinite(v):
                raise CohortError(path, line, f"non-finite value in column {col}")
            vals.append(v)
        ids.append(sid)
        values.append(vals)
    missing = [sid for sid in known if sid not in seen]
    if missing:
        raise CohortError(path, None, f"no row for subject id {missing[0]!r}")
    order = sorted(range(len(ids)), key=lambda i: known[ids[i]])
    return RoiFeatureTable(
        [ids[i] for i in order],
        np.array([values[i] for i in order], dtype=np.float64).reshape(len(ids), len(header) - 1),
        modality,
        header[1:],
    )


def load_cohort(subjects_path, feature_paths: dict[str, str]) -> CohortBundle:
    """Read and cross-validate a subjects table and its modality feature tables."""
    subjects = _parse_subjects(subjects_path)
    known = {s.id: i for i, s in enumerate(subjects)}
    tables = {}
    for modality, path in feature_paths.items():
        if modality not in MODALITIES:
            raise CohortError(path, None, f"unknown modality {modality!r}")
        tables[modality] = _parse_features(path, modality, known)
    return CohortBundle(subjects, tables, {"source": "files", "subjects": str(subjects_path),
                                           "features": {m: str(p) for m, p in feature_paths.items()}})


def load_cohort_dir(directory) -> CohortBundle:
    """Load ``subjects.csv`` plus whichever standard feature files exist in ``directory``."""
    paths = {m: os.path.join(directory, f) for m, f in FEATURE_FILES.items()
             if os.path.exists(os.path.join(directory, f))}
    return load_cohort(os.path.join(directory, "subjects.csv"), paths)


def subjects_csv(subjects: list[SubjectRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUBJECT_COLUMNS)
    for s in subjects:
        w.writerow([s.id, s.label, s.gender, repr(float(s.age)), s.apoe4, s.mmse, s.split or ""])
    return buf.getvalue()


def table_csv(table: RoiFeatureTable) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["id", *table.columns])
    for sid, row in zip(table.ids, table.values):
        w.writerow([sid, *(repr(float(v)) for v in row)])
    return buf.getvalue()


def save_cohort(bundle: CohortBundle, directory) -> dict[str, str]:
    """Write the bundle as ``subjects.csv`` plus one CSV per modality; returns the paths."""
    os.makedirs(directory, exist_ok=True)
    paths = {"subjects": os.path.join(directory, "subjects.csv")}
    atomic_write_text(paths["subjects"], subjects_csv(bundle.subjects))
    for modality, table in bundle.roi_tables.items():
        paths[modality] = os.path.join(directory, FEATURE_FILES[modality])
        atomic_write_text(paths[modality], table_csv(table))
    return paths


@dataclass(frozen=True)
class SynthConfig:
    n_per_class: int = 100
    p_rois: int = 30
    affected_fraction: float = 0.3
    effect_size: float = 1.5
    seed: int = 0
    task: str = "AD_NC"
    n_reference: int | None = None  # NC reference subjects for SMCI_PMCI; default n_per_class

    def __post_init__(self):
        if self.p_rois < 2:
            raise ValueError("p_rois must be >= 2")
        if not 0 < self.affected_fraction <= 1:
            raise ValueError("affected_fraction must be in (0, 1]")
        if self.n_per_class < 1:
            raise ValueError("n_per_class must be >= 1")
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}; choose from {sorted(TASKS)}")


def _correlated_noise(rng: np.random.Generator, n: int, loadings: np.ndarray) -> np.ndarray:
    """Unit-variance ROI noise sharing ``SHARED_VARIANCE`` through a few latent factors."""
    z = rng.standard_normal((n, loadings.shape[0]))
    eps = rng.standard_normal((n, loadings.shape[1]))
    return np.sqrt(SHARED_VARIANCE) * (z @ loadings) + np.sqrt(1.0 - SHARED_VARIANCE) * eps


def _factor_loadings(rng: np.random.Generator, p: int) -> np.ndarray:
    raw = rng.standard_normal((N_FACTORS, p))
    return raw / np.linalg.norm(raw, axis=0, keepdims=True)


def generate_synthetic(cfg: SynthConfig) -> CohortBundle:
    """Synthetic cohort with class-dependent ROI shifts and phenotypes.

    ROI values are drawn around modality means with factor-correlated noise
    (so the NC group has a non-trivial correlation structure). The patient
    class loses ``effect_size`` standard deviations on the affected ROIs
    (half that on WM). SMCI_PMCI cohorts also get an NC reference group,
    which is not part of the classification task.
    """
    negative, positive = TASKS[cfg.task]
    p = cfg.p_rois
    n_affected = max(1, int(round(cfg.affected_fraction * p)))

    rng_layout = stage_rng(cfg.seed, "synth", "layout")
    affected = np.zeros(p, dtype=bool)
    affected[rng_layout.choice(p, size=n_affected, replace=False)] = True
    loadings = {m: _factor_loadings(rng_layout, p) for m in MODALITIES}

    groups = [(negative, cfg.n_per_class, False), (positive, cfg.n_per_class, True)]
    if negative != "NC":
        groups.insert(0, ("NC", cfg.n_reference or cfg.n_per_class, False))

    labels, pet, gm, wm, pheno = [], [], [], [], []
    for label, n, is_patient in groups:
        rng = stage_rng(cfg.seed, "synth", label)
        shift = np.where(affected, cfg.effect_size, 0.0) if is_patient else np.zeros(p)
        pet.append(PET_MEAN + PET_SD * (_correlated_noise(rng, n, loadings["PET_SUVR"]) - shift))
        gm.append(GM_MEAN + GM_SD * (_correlated_noise(rng, n, loadings["SMRI_GM"]) - shift))
        wm.append(WM_MEAN + WM_SD * (_correlated_noise(rng, n, loadings["SMRI_WM"]) - WM_ATROPHY_SCALE * shift))

        mu, sd = MMSE_STATS[label]
        mmse = np.clip(np.rint(rng.normal(mu, sd, n)), 10, 30).astype(int)
        age = np.clip(rng.normal(74.0, 7.0, n), 55.0, 95.0)
        gender = np.where(rng.random(n) < 0.5, "M", "F")
        apoe4 = rng.choice(3, size=n, p=APOE4_PROBS["patient" if is_patient else "control"])
        labels.extend([label] * n)
        pheno.extend(zip(gender, np.round(age, 1), apoe4, mmse))

    pet, gm, wm = np.vstack(pet), np.vstack(gm), np.vstack(wm)
    # shuffle so that subject-id order carries no class information
    order = stage_rng(cfg.seed, "synth", "order").permutation(len(labels))
    width = max(4, len(str(len(labels))))
    ids = [f"S{i + 1:0{width}d}" for i in range(len(labels))]
    subjects = []
    for new_pos, old in enumerate(order):
        g, a, e, m = pheno[old]
        subjects.append(SubjectRecord(ids[new_pos], labels[old], str(g), float(a), int(e), int(m)))
    tables = {
        "PET_SUVR": RoiFeatureTable(ids, pet[order], "PET_SUVR"),
        "SMRI_GM": RoiFeatureTable(ids, gm[order], "SMRI_GM"),
        "SMRI_WM": RoiFeatureTable(ids, wm[order], "SMRI_WM"),
    }
    provenance = {"source": "synthetic", "config": {k: getattr(cfg, k) for k in cfg.__dataclass_fields__},
                  "affected_rois": [int(i) for i in np.flatnonzero(affected)]}
    return CohortBundle(subjects, tables, provenance)
