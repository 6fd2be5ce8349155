"""Functional-similarity graph machinery built from POI category counts.

Regions are described by a two-block feature matrix: per-row category
shares next to globally standardized raw counts.  Cosine similarity of
those rows, thresholded, gives a functional adjacency whose normalized
Laplacian feeds a Chebyshev polynomial basis.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

DEFAULT_C = 21
STD_GUARD = 1e-8


def default_category_names(c: int = DEFAULT_C) -> list[str]:
    return [f"category_{i + 1:02d}" for i in range(c)]


@dataclass
class POICountMatrix:
    """Raw per-region POI counts, one column per category."""

    counts: np.ndarray
    category_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.counts = np.asarray(self.counts)
        if self.counts.ndim != 2 or self.counts.shape[0] < 1:
            raise ValueError("counts must be a non-empty N x C matrix")
        if (self.counts < 0).any():
            raise ValueError("POI counts must be non-negative")
        if not self.category_names:
            self.category_names = default_category_names(self.counts.shape[1])
        if len(self.category_names) != self.counts.shape[1]:
            raise ValueError("category name count does not match columns")


@dataclass
class POIInfoMatrix:
    """Concatenation of the share block and the standardized block."""

    P: np.ndarray

    @property
    def n_regions(self) -> int:
        return self.P.shape[0]

    @property
    def width(self) -> int:
        return self.P.shape[1]


@dataclass
class SimilarityGraph:
    S: np.ndarray
    A_sim: np.ndarray
    threshold: float


@dataclass
class ScaledLaplacian:
    L_tilde: np.ndarray
    lambda_max: float


@dataclass
class ChebBasis:
    matrices: list[np.ndarray]

    @property
    def order(self) -> int:
        return len(self.matrices)


def build_poi_matrix(counts: POICountMatrix,
                     per_column: bool = False) -> POIInfoMatrix:
    """N x 2C feature matrix from N x C counts.

    Block 1: each row divided by its sum (zero rows stay zero).
    Block 2: counts standardized by one scalar mean/std over the whole
    matrix (population std, guard at 1e-8); `per_column` switches to
    column-wise statistics instead.
    """
    raw = counts.counts.astype(np.float64)
    row_sums = raw.sum(axis=1, keepdims=True)
    shares = np.divide(raw, row_sums, out=np.zeros_like(raw),
                       where=row_sums > 0)
    if per_column:
        mean = raw.mean(axis=0, keepdims=True)
        std = raw.std(axis=0, keepdims=True)
        std = np.where(std < STD_GUARD, 1.0, std)
    else:
        mean = raw.mean()
        std = raw.std()
        if std < STD_GUARD:
            std = 1.0
    standardized = (raw - mean) / std
    return POIInfoMatrix(np.concatenate([shares, standardized], axis=1))


def cosine_similarity(info: POIInfoMatrix) -> np.ndarray:
    """Pairwise cosine of feature rows; zero-norm rows score 0 everywhere."""
    p = info.P
    norms = np.linalg.norm(p, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    unit = p / safe[:, None]
    s = unit @ unit.T
    s = np.clip(s, -1.0, 1.0)
    np.fill_diagonal(s, 1.0)  # self-similarity is exact, not a dot product
    zero = norms == 0
    s[zero, :] = 0.0
    s[:, zero] = 0.0
    return s


def threshold_adjacency(s: np.ndarray, c: float) -> SimilarityGraph:
    """Binary functional adjacency: edge iff similarity >= c (inclusive).

    Thresholds outside [0.3, 0.6] are accepted with a warning; values
    there are known to behave well.  Self-loops survive for nonzero rows
    because self-similarity is 1.
    """
    if not 0.0 < c < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {c}")
    if not 0.3 <= c <= 0.6:
        warnings.warn(f"similarity threshold {c} outside the [0.3, 0.6] "
                      "band that is known to work well")
    return SimilarityGraph(s, (s >= c).astype(np.int8), c)


def normalized_laplacian(a: np.ndarray) -> np.ndarray:
    """Symmetric normalization I - D^{-1/2} A D^{-1/2}.

    Degree-zero nodes keep an identity row (their D^{-1/2} is taken as 0).
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("adjacency must be square")
    if not np.array_equal(a, a.T):
        raise ValueError("adjacency must be symmetric")
    deg = a.sum(axis=1)
    inv_sqrt = np.divide(1.0, np.sqrt(deg), out=np.zeros_like(deg),
                         where=deg > 0)
    return np.eye(a.shape[0]) - inv_sqrt[:, None] * a * inv_sqrt[None, :]


def scaled_laplacian(l_sys: np.ndarray, tol: float = 1e-6,
                     max_iters: int = 1000) -> ScaledLaplacian:
    """Rescale so the spectrum fits [-1, 1]: (2/lambda_max) L - I.

    lambda_max comes from deterministic power iteration.  The all-ones
    start vector alone can sit exactly orthogonal to the top eigenspace
    (twin nodes in thresholded similarity graphs do this routinely;
    bipartite symmetries trap the index vector too), so three fixed
    starts run: ones, indices, and a seeded pseudorandom vector that is
    generically non-orthogonal to any graph eigenspace.  Rayleigh
    quotients are lower bounds on the true maximum, so the largest
    certified estimate wins.  If any start fails to converge within the
    iteration budget (near-degenerate top clusters mix slowly), or none
    produces an estimate, the computation counts as non-converged and
    falls back to 2, the spectral upper bound of a normalized Laplacian,
    which keeps the rescaled spectrum inside [-1, 1] unconditionally.
    """
    l_sys = np.asarray(l_sys, dtype=np.float64)
    n = l_sys.shape[0]
    starts = [np.ones(n), np.arange(1.0, n + 1.0),
              np.random.default_rng(0x5CA1ED).standard_normal(n)]
    estimates = []
    timed_out = False
    for v0 in starts:
        status, rho = _power_iteration_max(l_sys, v0, tol, max_iters)
        if status == "timeout":
            timed_out = True
        elif status == "converged" and rho >= STD_GUARD:
            estimates.append(rho)
    lam = 2.0 if timed_out or not estimates else max(estimates)
    return ScaledLaplacian((2.0 / lam) * l_sys - np.eye(n), float(lam))


def _power_iteration_max(m: np.ndarray, v0: np.ndarray, tol: float,
                         max_iters: int):
    # Residual stopping: |Mv - rho v| <= (tol/2)|rho| bounds the distance
    # to the nearest eigenvalue, so the rescaled spectrum overshoots 1 by
    # at most tol.  The Rayleigh quotient never exceeds the true maximum.
    v = v0 / np.linalg.norm(v0)
    for _ in range(max_iters):
        u = m @ v
        norm = np.linalg.norm(u)
        if norm < STD_GUARD:
            return "breakdown", None  # start vector sits in the kernel
        rho = float(v @ u)
        if np.linalg.norm(u - rho * v) <= 0.5 * tol * abs(rho):
            return "converged", rho
        v = u / norm
    return "timeout", None


def cheb_basis(scaled: ScaledLaplacian, k: int = 3) -> ChebBasis:
    """Chebyshev matrices T_0..T_{K-1} by the two-term recurrence."""
    if k < 1:
        raise ValueError(f"order must be at least 1, got {k}")
    lt = scaled.L_tilde
    mats = [np.eye(lt.shape[0])]
    if k >= 2:
        mats.append(lt.copy())
    for _ in range(2, k):
        mats.append(2.0 * lt @ mats[-1] - mats[-2])
    return ChebBasis(mats)


def functional_graph(counts: POICountMatrix, threshold: float,
                     k: int = 3, per_column: bool = False):
    """counts -> (info matrix, similarity graph, scaled laplacian, basis)."""
    info = build_poi_matrix(counts, per_column=per_column)
    sim = threshold_adjacency(cosine_similarity(info), threshold)
    scaled = scaled_laplacian(normalized_laplacian(sim.A_sim))
    return info, sim, scaled, cheb_basis(scaled, k)
