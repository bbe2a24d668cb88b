"""Subject records and per-modality ROI tables."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

LABELS = ("AD", "NC", "sMCI", "pMCI")
GENDERS = ("M", "F")
SPLITS = ("train", "val", "test")

# task name -> (negative class, positive class)
TASKS = {
    "AD_NC": ("NC", "AD"),
    "SMCI_PMCI": ("sMCI", "pMCI"),
}

MODALITIES = ("PET_SUVR", "SMRI_GM", "SMRI_WM")


@dataclass(frozen=True)
class SubjectRecord:
    id: str
    label: str
    gender: str
    age: float
    apoe4: int
    mmse: int
    split: str | None = None

    def __post_init__(self):
        if not self.id:
            raise ValueError("subject id must be non-empty")
        if self.label not in LABELS:
            raise ValueError(f"subject {self.id}: unknown label {self.label!r}")
        if self.gender not in GENDERS:
            raise ValueError(f"subject {self.id}: gender must be M or F, got {self.gender!r}")
        if not (math.isfinite(self.age) and self.age > 0):
            raise ValueError(f"subject {self.id}: age must be positive, got {self.age}")
        if self.apoe4 not in (0, 1, 2):
            raise ValueError(f"subject {self.id}: apoe4 must be 0, 1 or 2, got {self.apoe4}")
        if not 0 <= self.mmse <= 30:
            raise ValueError(f"subject {self.id}: MMSE {self.mmse} outside [0, 30]")
        if self.split is not None and self.split not in SPLITS:
            raise ValueError(f"subject {self.id}: unknown split {self.split!r}")


@dataclass
class RoiFeatureTable:
    """N x P matrix of per-subject ROI scalars for one modality."""

    ids: list[str]
    values: np.ndarray
    modality: str = ""
    columns: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError(f"{self.modality or 'table'}: values must be 2-D, got {self.values.shape}")
        if len(self.ids) != self.values.shape[0]:
            raise ValueError(
                f"{self.modality or 'table'}: {len(self.ids)} ids for {self.values.shape[0]} rows"
            )
        if len(set(self.ids)) != len(self.ids):
            raise ValueError(f"{self.modality or 'table'}: duplicate subject ids")
        if not self.columns:
            self.columns = [f"roi_{j + 1}" for j in range(self.values.shape[1])]

    @property
    def n_rois(self) -> int:
        return self.values.shape[1]

    def row(self, subject_id: str) -> np.ndarray:
        return self.values[self.ids.index(subject_id)]

    def select(self, ids: list[str]) -> "RoiFeatureTable":
        index = {sid: i for i, sid in enumerate(self.ids)}
        missing = [sid for sid in ids if sid not in index]
        if missing:
            raise KeyError(f"{self.modality or 'table'}: no row for subject(s) {missing[:5]}")
        rows = [index[sid] for sid in ids]
        return RoiFeatureTable(list(ids), self.values[rows], self.modality, list(self.columns))
