"""Population graph: subjects as nodes, imaging similarity times phenotype agreement as edges."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cohort import SubjectRecord
from .matrixcore import (
    LAMBDA_FALLBACK,
    ShapeError,
    as_matrix,
    as_vector,
    correlation_matrix,
    pearson_correlation,
    power_iteration_lambda_max,
)

__all__ = [
    "PhenoConfig",
    "PopulationGraph",
    "SigmaRule",
    "SubjectRecord",
    "build_adjacency",
    "laplacian",
    "normalize_adjacency",
    "pheno_indicator",
    "pheno_matrix",
    "resolve_sigma",
    "scaled_laplacian",
    "similarity_kernel",
]

PHENOTYPES = ("gender", "apoe4", "mmse", "age")


@dataclass(frozen=True)
class PhenoConfig:
    use_gender: bool = False
    use_apoe4: bool = False
    use_mmse: bool = False
    use_age: bool = False
    mmse_tol: int = 1
    age_tol: float = 1.0
    similarity_only: bool = False

    def __post_init__(self):
        if self.similarity_only and self.enabled():
            raise ValueError("similarity_only excludes every phenotype indicator")

    def enabled(self) -> tuple[str, ...]:
        flags = (self.use_gender, self.use_apoe4, self.use_mmse, self.use_age)
        return tuple(name for name, on in zip(PHENOTYPES, flags) if on)

    @classmethod
    def similarity(cls) -> "PhenoConfig":
        return cls(similarity_only=True)

    @classmethod
    def from_names(cls, names, **kwargs) -> "PhenoConfig":
        """``["gender", "mmse"]`` -> config; an empty list or ``["none"]`` means similarity only."""
        names = [n.strip().lower() for n in names if n.strip()]
        if not names or names == ["none"]:
            return cls(similarity_only=True, **kwargs)
        unknown = set(names) - set(PHENOTYPES)
        if unknown:
            raise ValueError(f"unknown phenotype(s) {sorted(unknown)}; choose from {PHENOTYPES} or 'none'")
        return cls(**{f"use_{n}": True for n in names}, **kwargs)

    def label(self) -> str:
        return "+".join(self.enabled()) if not self.similarity_only else "none"


# Row set of the phenotype ablation; "A" in G+A+M is the APOE4 allele count.
ABLATION_ROWS = {
    "Similarity": PhenoConfig.similarity(),
    "Apoe4": PhenoConfig(use_apoe4=True),
    "Age": PhenoConfig(use_age=True),
    "Gender": PhenoConfig(use_gender=True),
    "MMSE": PhenoConfig(use_mmse=True),
    "G+M": PhenoConfig(use_gender=True, use_mmse=True),
    "G+A+M": PhenoConfig(use_gender=True, use_apoe4=True, use_mmse=True),
}


# mean distances below this are correlation round-off, not spread
_SIGMA_FLOOR = 1e-12


@dataclass(frozen=True)
class SigmaRule:
    """Kernel width: a fixed value, or the cohort's mean correlation distance."""

    fixed: float | None = None

    def __post_init__(self):
        if self.fixed is not None and not self.fixed > 0:
            raise ValueError(f"sigma must be positive, got {self.fixed}")


def resolve_sigma(rho: np.ndarray, rule: SigmaRule) -> float:
    """Apply ``rule`` to a matrix of pairwise correlation distances."""
    if rule.fixed is not None:
        return float(rule.fixed)
    n = rho.shape[0]
    if n < 2:
        return 1.0
    iu = np.triu_indices(n, 1)
    sigma = float(rho[iu].mean())
    # all rows identical (up to rounding) -> no spread to measure
    return sigma if sigma > _SIGMA_FLOOR else 1.0


def similarity_kernel(fv, fu, sigma: float) -> float:
    """Gaussian kernel on the correlation distance 1 - pearson(fv, fu)."""
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    rho = 1.0 - pearson_correlation(as_vector(fv), as_vector(fu))
    return float(np.exp(-(rho * rho) / (2.0 * sigma * sigma)))


def pheno_indicator(u: SubjectRecord, v: SubjectRecord, cfg: PhenoConfig) -> float:
    if cfg.similarity_only:
        return 1.0
    total = 0.0
    if cfg.use_gender and u.gender == v.gender:
        total += 1.0
    if cfg.use_apoe4 and u.apoe4 == v.apoe4:
        total += 1.0
    if cfg.use_mmse and abs(u.mmse - v.mmse) <= cfg.mmse_tol:
        total += 1.0
    if cfg.use_age and abs(u.age - v.age) <= cfg.age_tol:
        total += 1.0
    return total


def pheno_matrix(subjects: list[SubjectRecord], cfg: PhenoConfig) -> np.ndarray:
    """Vectorised :func:`pheno_indicator` over all pairs (diagonal included)."""
    n = len(subjects)
    if cfg.similarity_only:
        return np.ones((n, n))
    out = np.zeros((n, n))
    if cfg.use_gender:
        g = np.array([s.gender for s in subjects])
        out += g[:, None] == g[None, :]
    if cfg.use_apoe4:
        a = np.array([s.apoe4 for s in subjects])
        out += a[:, None] == a[None, :]
    if cfg.use_mmse:
        m = np.array([s.mmse for s in subjects], dtype=np.int64)
        out += np.abs(m[:, None] - m[None, :]) <= cfg.mmse_tol
    if cfg.use_age:
        age = np.array([s.age for s in subjects], dtype=np.float64)
        out += np.abs(age[:, None] - age[None, :]) <= cfg.age_tol
    return out


def build_adjacency(
    x,
    subjects: list[SubjectRecord],
    cfg: PhenoConfig,
    sigma: SigmaRule | float | None = None,
) -> np.ndarray:
    """Edge weight = similarity kernel of feature rows x phenotype indicator sum.

    The diagonal is zero; self-loops are added later by normalization.
    """
    x = as_matrix(x, "node features")
    if x.shape[0] != len(subjects):
        raise ShapeError(f"adjacency: {x.shape[0]} feature rows for {len(subjects)} subjects")
    if not isinstance(sigma, SigmaRule):
        sigma = SigmaRule(sigma)
    rho = np.clip(1.0 - correlation_matrix(x), 0.0, 2.0)
    s = resolve_sigma(rho, sigma)
    a = np.exp(-(rho * rho) / (2.0 * s * s)) * pheno_matrix(subjects, cfg)
    np.fill_diagonal(a, 0.0)
    return a


def _inv_sqrt_degree(a: np.ndarray) -> np.ndarray:
    d = a.sum(axis=1)
    out = np.zeros_like(d)
    pos = d > 0
    out[pos] = 1.0 / np.sqrt(d[pos])
    return out


def normalize_adjacency(a, mode: str = "renorm_self_loops") -> np.ndarray:
    """Symmetric degree normalization.

    ``renorm_self_loops``: D~^-1/2 (A + I) D~^-1/2.
    ``sym_norm``: D^-1/2 A D^-1/2, with a unit self-loop on isolated nodes.
    """
    a = as_matrix(a, "adjacency")
    n = a.shape[0]
    if mode == "renorm_self_loops":
        a_tilde = a + np.eye(n)
        dinv = _inv_sqrt_degree(a_tilde)
        return a_tilde * np.outer(dinv, dinv)
    if mode == "sym_norm":
        dinv = _inv_sqrt_degree(a)
        out = a * np.outer(dinv, dinv)
        isolated = dinv == 0
        out[isolated, isolated] = 1.0
        return out
    raise ValueError(f"unknown normalization mode {mode!r}")


def laplacian(a) -> np.ndarray:
    """L = I - D^-1/2 A D^-1/2; isolated nodes keep L(i, i) = 1."""
    a = as_matrix(a, "adjacency")
    dinv = _inv_sqrt_degree(a)
    return np.eye(a.shape[0]) - a * np.outer(dinv, dinv)


def scaled_laplacian(a, lambda_max: str | float = "power") -> np.ndarray:
    """Rescale the Laplacian's spectrum into [-1, 1]: (2 / lambda_max) L - I.

    ``lambda_max="power"`` estimates the largest eigenvalue by power iteration;
    a graph without edges falls back to 2.0. A number is used as given.
    """
    a = as_matrix(a, "adjacency")
    lap = laplacian(a)
    if lambda_max == "power":
        lmax = power_iteration_lambda_max(lap) if np.any(a != 0) else LAMBDA_FALLBACK
    else:
        lmax = float(lambda_max)
    if not lmax > 0:
        raise ValueError(f"lambda_max must be positive, got {lmax}")
    return (2.0 / lmax) * lap - np.eye(a.shape[0])


@dataclass
class PopulationGraph:
    """Node features, raw adjacency and split masks for one transductive problem.

    ``labels`` holds class indices for train/val nodes and -1 for test nodes.
    """

    x: np.ndarray
    a: np.ndarray
    subject_ids: list[str]
    train_mask: np.ndarray
    val_mask: np.ndarray
    test_mask: np.ndarray
    labels: np.ndarray = field(repr=False)

    def __post_init__(self):
        n = len(self.subject_ids)
        if self.x.shape[0] != n or self.a.shape != (n, n):
            raise ShapeError(f"population graph: {n} ids, x {self.x.shape}, a {self.a.shape}")
        cover = self.train_mask.astype(int) + self.val_mask.astype(int) + self.test_mask.astype(int)
        if not np.all(cover == 1):
            raise ValueError("train/val/test masks must partition the nodes")


def hide_test_labels(labels, test_mask) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    return np.where(np.asarray(test_mask, dtype=bool), -1, labels)
