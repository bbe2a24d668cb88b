"""Shared multi-modal adjacencies and the per-branch graph assembly.

All fusion happens on raw (unnormalized) adjacencies; each branch normalizes
its own matrix afterwards.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .cohort import SubjectRecord
from .matrixcore import ShapeError, as_matrix, hadamard
from .popgraph import PhenoConfig, SigmaRule, build_adjacency


class FusionMode(str, enum.Enum):
    DUAL = "DUAL"
    INTEGRATION = "INTEGRATION"
    FEATURE_FUSION = "FEATURE_FUSION"
    INTEGRATED_FUSION = "INTEGRATED_FUSION"

    def method_name(self, arch: str) -> str:
        """Table-style method name, e.g. ``IFDCGCN`` for integrated fusion with Chebyshev branches."""
        prefix = {"DUAL": "D", "INTEGRATION": "ID", "FEATURE_FUSION": "FD", "INTEGRATED_FUSION": "IFD"}[self.value]
        return prefix + ("CGCN" if arch.lower() == "cheb" else "GCN")


@dataclass(frozen=True)
class BranchGraphs:
    """Adjacency and node features per branch, plus which adjacency path produced them."""

    adjs: tuple[np.ndarray, ...]
    xs: tuple[np.ndarray, ...]
    adjacency_path: tuple[str, ...]

    def __post_init__(self):
        if len(self.adjs) != len(self.xs) or not self.adjs:
            raise ValueError("need one adjacency per branch feature matrix")
        n = self.xs[0].shape[0]
        for a, x in zip(self.adjs, self.xs):
            if x.shape[0] != n or a.shape != (n, n):
                raise ShapeError(f"branch graph: inconsistent node count (x {x.shape}, a {a.shape})")

    @property
    def branch0_adj(self) -> np.ndarray:
        return self.adjs[0]

    @property
    def branch1_adj(self) -> np.ndarray:
        return self.adjs[1]

    @property
    def x0(self) -> np.ndarray:
        return self.xs[0]

    @property
    def x1(self) -> np.ndarray:
        return self.xs[1]


def integrate_adjacency(a_s, a_f) -> np.ndarray:
    return hadamard(a_s, a_f)


def fused_feature_adjacency(
    x0,
    x1,
    subjects: list[SubjectRecord],
    cfg: PhenoConfig,
    sigma: SigmaRule | float | None = None,
) -> np.ndarray:
    """Adjacency over concatenated per-subject features of both modalities.

    The kernel width is resolved on the concatenated features themselves.
    """
    x0 = as_matrix(x0, "x0")
    x1 = as_matrix(x1, "x1")
    if x0.shape[0] != x1.shape[0]:
        raise ShapeError(f"feature fusion: {x0.shape[0]} vs {x1.shape[0]} subjects")
    return build_adjacency(np.hstack([x0, x1]), subjects, cfg, sigma)


def integrated_fusion_adjacency(a_im, a_fm) -> np.ndarray:
    return hadamard(a_im, a_fm)


def assemble_branch_graphs(
    a_s,
    a_f,
    x0,
    x1,
    mode: FusionMode | str,
    subjects: list[SubjectRecord] | None = None,
    cfg: PhenoConfig | None = None,
    sigma: SigmaRule | float | None = None,
    a_fm=None,
) -> BranchGraphs:
    """Pick each branch's adjacency for a fusion mode.

    Branch 0 always sees the sMRI features ``x0`` and branch 1 the PET
    features ``x1``. The feature-fusion modes need ``a_fm``, computed from
    ``subjects``/``cfg``/``sigma`` when not supplied.
    """
    mode = FusionMode(mode)
    x0 = as_matrix(x0, "x0")
    x1 = as_matrix(x1, "x1")
    if mode is FusionMode.DUAL:
        return BranchGraphs((as_matrix(a_s), as_matrix(a_f)), (x0, x1), ("A_s", "A_f"))
    if mode is FusionMode.INTEGRATION:
        a_im = integrate_adjacency(a_s, a_f)
        return BranchGraphs((a_im, a_im), (x0, x1), ("A_im", "A_im"))

    if a_fm is None:
        if subjects is None or cfg is None:
            raise ValueError(f"{mode.value} needs subjects and a phenotype config to build A_fm")
        a_fm = fused_feature_adjacency(x0, x1, subjects, cfg, sigma)
    a_fm = as_matrix(a_fm, "A_fm")
    if mode is FusionMode.FEATURE_FUSION:
        return BranchGraphs((a_fm, a_fm), (x0, x1), ("A_fm", "A_fm"))
    a_if = integrated_fusion_adjacency(integrate_adjacency(a_s, a_f), a_fm)
    return BranchGraphs((a_if, a_if), (x0, x1), ("A_if", "A_if"))
