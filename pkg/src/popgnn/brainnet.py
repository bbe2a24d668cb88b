"""Individual brain networks built by contrasting a subject with normal controls.

A subject contributes one scalar per ROI. Against a reference group of
normal-control (NC) training subjects, every ROI pair gets an effect size
``E``, which is squashed to a weight ``W = 1 - tanh(E)`` and multiplied
element-wise into the NC correlation matrix. The upper triangle of the result
(diagonal included) is the subject's node feature vector.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .cohort import RoiFeatureTable, SubjectRecord
from .matrixcore import as_vector, correlation_matrix, hadamard, ShapeError

DEFAULT_EPS = 1e-8

# exp(2E) overflows float64 beyond this
_SATURATION = 350.0


class LeakageError(ValueError):
    """A subject outside (train split AND NC) was offered to the NC reference."""


class Channel(str, enum.Enum):
    GM = "GM"
    WM = "WM"
    GM_PLUS_WM = "GM_PLUS_WM"


@dataclass(frozen=True)
class NcReference:
    mean: np.ndarray
    std: np.ndarray
    corr: np.ndarray
    source_ids: tuple[str, ...]

    @property
    def n_rois(self) -> int:
        return self.mean.shape[0]


@dataclass(frozen=True)
class BrainNetwork:
    b: np.ndarray
    subject_id: str = ""


def _qualifies(s: SubjectRecord) -> bool:
    return s.split == "train" and s.label == "NC"


def build_nc_reference(
    table: RoiFeatureTable,
    subjects: list[SubjectRecord],
    include: list[str] | None = None,
) -> NcReference:
    """Per-ROI NC statistics from training-split NC subjects.

    By default every subject that is both ``split == "train"`` and
    ``label == "NC"`` is used and everyone else is ignored. When ``include``
    names the reference subjects explicitly, any name that does not qualify
    raises :class:`LeakageError`.
    """
    by_id = {s.id: s for s in subjects}
    if include is None:
        chosen = [s.id for s in subjects if _qualifies(s)]
    else:
        chosen = list(include)
        for sid in chosen:
            s = by_id.get(sid)
            if s is None:
                raise KeyError(f"NC reference: unknown subject {sid!r}")
            if not _qualifies(s):
                raise LeakageError(
                    f"NC reference: subject {sid!r} has label={s.label}, split={s.split}; "
                    "only training-split NC subjects may be used"
                )
    if len(chosen) < 2:
        raise ValueError(f"NC reference needs at least 2 training NC subjects, found {len(chosen)}")

    rows = table.select(chosen).values
    bad = np.argwhere(~np.isfinite(rows))
    if bad.size:
        i, j = bad[0]
        raise ValueError(f"NC reference: non-finite value for subject {chosen[i]!r}, ROI {table.columns[j]!r}")

    mean = rows.mean(axis=0)
    std = rows.std(axis=0, ddof=1)
    corr = correlation_matrix(rows.T)
    return NcReference(mean=mean, std=std, corr=corr, source_ids=tuple(chosen))


def effect_size_matrix(f, ref: NcReference, eps: float = DEFAULT_EPS) -> np.ndarray:
    """Pairwise effect-size differences of a subject's deviations from the NC mean."""
    f = as_vector(f, "effect_size f")
    if f.shape[0] != ref.n_rois:
        raise ShapeError(f"effect_size: subject has {f.shape[0]} ROIs, reference has {ref.n_rois}")
    d = f - ref.mean
    var = ref.std * ref.std
    pooled = np.sqrt((var[:, None] + var[None, :]) / 2.0)
    return np.abs(d[:, None] - d[None, :]) / np.maximum(pooled, eps)


def fisher_correlation(e) -> np.ndarray:
    """R = (exp(2E) - 1) / (exp(2E) + 1), saturating to 1 for huge E."""
    e = np.asarray(e, dtype=np.float64)
    if np.any(e < 0):
        raise ValueError("fisher transform expects non-negative effect sizes")
    big = e > _SATURATION
    num = np.expm1(2.0 * np.where(big, 0.0, e))
    r = num / (num + 2.0)
    return np.where(big, 1.0, r)


def fisher_weighting(e) -> np.ndarray:
    """Weight matrix W = 1 - R; 1 where the subject matches the NC pattern.

    Evaluated as 2 / (exp(2E) + 1), which equals 1 - R but keeps resolution
    for large E where 1 - R would round to a constant.
    """
    e = np.asarray(e, dtype=np.float64)
    if np.any(e < 0):
        raise ValueError("fisher transform expects non-negative effect sizes")
    big = e > _SATURATION
    w = 2.0 / (np.expm1(2.0 * np.where(big, 0.0, e)) + 2.0)
    return np.where(big, 0.0, w)


def build_brain_network(f, ref: NcReference, eps: float = DEFAULT_EPS, subject_id: str = "") -> BrainNetwork:
    w = fisher_weighting(effect_size_matrix(f, ref, eps))
    return BrainNetwork(b=hadamard(w, ref.corr), subject_id=subject_id)


def flatten_upper(bn: BrainNetwork | np.ndarray) -> np.ndarray:
    """Row-major upper triangle including the diagonal, length P(P+1)/2."""
    b = bn.b if isinstance(bn, BrainNetwork) else np.asarray(bn, dtype=np.float64)
    if b.ndim != 2 or b.shape[0] != b.shape[1]:
        raise ShapeError(f"flatten_upper: expected a square matrix, got {b.shape}")
    return b[np.triu_indices(b.shape[0])]


def unflatten_upper(values) -> np.ndarray:
    values = as_vector(values, "unflatten_upper")
    p = int(round((np.sqrt(8 * values.size + 1) - 1) / 2))
    if p * (p + 1) // 2 != values.size:
        raise ShapeError(f"unflatten_upper: {values.size} is not a triangular number")
    b = np.zeros((p, p))
    b[np.triu_indices(p)] = values
    return b + np.triu(b, 1).T


def brain_network_features(
    table: RoiFeatureTable,
    ref: NcReference,
    ids: list[str] | None = None,
    eps: float = DEFAULT_EPS,
) -> np.ndarray:
    """Stack flattened brain networks for ``ids`` (default: every row) into N x P(P+1)/2."""
    t = table if ids is None else table.select(ids)
    bad = np.argwhere(~np.isfinite(t.values))
    if bad.size:
        i, j = bad[0]
        raise ValueError(f"{t.modality or 'table'}: non-finite value for subject {t.ids[i]!r}, ROI {t.columns[j]!r}")
    return np.vstack([flatten_upper(build_brain_network(row, ref, eps)) for row in t.values])


def build_smri_channel(gm: RoiFeatureTable, wm: RoiFeatureTable, channel: Channel | str) -> RoiFeatureTable:
    """Select the GM or WM table, or sum them into total brain matter."""
    channel = Channel(channel)
    if gm.ids != wm.ids:
        raise ValueError("sMRI channel: GM and WM tables list different subjects or orderings")
    if gm.values.shape != wm.values.shape:
        raise ShapeError(f"sMRI channel: GM {gm.values.shape} vs WM {wm.values.shape}")
    if channel is Channel.GM:
        return gm
    if channel is Channel.WM:
        return wm
    return RoiFeatureTable(list(gm.ids), gm.values + wm.values, "SMRI_GM_PLUS_WM", list(gm.columns))
