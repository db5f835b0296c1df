"""Latent feature vectors and the multi-restart k-means protocol.

Feature vectors either arrive from an external extractor via the ATL1
binary format or come from the deterministic stand-in extractor (a
seeded random convolutional feature bank).  Clustering follows the
N-runs x M-initializations protocol: each run keeps the restart with
the lowest inertia (labels are never consulted for selection), and the
experiment reports top-1 plus mean/std across runs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import fileio, metrics
from .errors import ContractError
from .seeding import derive_seed, rng_for


@dataclass
class LatentMatrix:
    """Row-per-event feature vectors, optionally aligned with event ids."""

    values: np.ndarray            # (rows, dim) float64
    ids: list[str] | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[0] < 1 or self.values.shape[1] < 1:
            raise ContractError(f"latent matrix must be (rows>=1, dim>=1), got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ContractError("latent matrix contains non-finite values")
        if self.ids is not None and len(self.ids) != len(self.values):
            raise ContractError("id list length does not match row count")

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def zero_fraction(self) -> float:
        """Fraction of exactly-zero entries (sparsity statistic)."""
        return float((self.values == 0.0).mean())


@dataclass
class KMeansConfig:
    k: int
    m_inits: int = 10
    n_runs: int = 100
    max_iter: int = 300
    tol: float = 1e-6          # relative inertia-change stopping threshold
    rng_seed: int = 0

    def __post_init__(self):
        if self.k < 1 or self.m_inits < 1 or self.n_runs < 1 or self.max_iter < 1:
            raise ContractError("k, m_inits, n_runs, max_iter must all be >= 1")
        if self.tol < 0:
            raise ContractError("tol must be >= 0")


@dataclass
class ClusteringResult:
    assignments: np.ndarray    # (rows,) int cluster ids
    centroids: np.ndarray      # (k, dim)
    inertia: float
    iterations: int


@dataclass
class ExperimentStats:
    """Top-1 (label-selected) plus mean/std over the N runs."""

    runs: list[dict]                 # per-run {"ari", "accuracy", "inertia"}
    top1_index: int
    top1: metrics.ClusterReport
    ari_mean: float
    ari_std: float
    accuracy_mean: float
    accuracy_std: float

    def to_dict(self) -> dict:
        return {
            "runs": self.runs,
            "top1_index": self.top1_index,
            "top1": self.top1.to_dict(),
            "ari_mean": self.ari_mean,
            "ari_std": self.ari_std,
            "accuracy_mean": self.accuracy_mean,
            "accuracy_std": self.accuracy_std,
        }


def load_latents(path) -> LatentMatrix:
    """Read an ATL1 latent file; finiteness is validated on load."""
    return LatentMatrix(fileio.read_latents(path))


def save_latents(path, latents: LatentMatrix) -> None:
    fileio.write_latents(path, latents.values)


def standin_features(images: np.ndarray, out_dim: int, seed: int) -> LatentMatrix:
    """Deterministic random-convolution features for image stacks.

    A seeded bank of zero-mean kernels is correlated over each image,
    rectified at zero, average-pooled onto a coarse grid, then passed
    through a seeded random projection and rectified again.  Bias-free
    and linear up to the rectifications, so all-zero images map to
    all-zero features, and roughly half the projected coordinates land
    at exactly zero.
    """
    if out_dim < 1:
        raise ContractError("out_dim must be >= 1")
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 3:
        raise ContractError(f"image stack must be (n, h, w), got {images.shape}")
    n, h, w = images.shape
    rng = rng_for(seed, "latent.standin")

    n_kernels = 12
    ksize = max(3, min(h, w) // 16)
    stride = max(1, ksize // 2)
    pool_grid = 6
    kernels = rng.standard_normal((n_kernels, ksize, ksize))
    kernels -= kernels.mean(axis=(1, 2), keepdims=True)
    raw_dim = n_kernels * pool_grid * pool_grid
    projection = rng.standard_normal((raw_dim, out_dim)) / np.sqrt(raw_dim)

    features = np.empty((n, out_dim))
    chunk = max(1, 2**22 // max(1, h * w))  # bound the windowed view's memory
    for start in range(0, n, chunk):
        batch = images[start : start + chunk]
        windows = np.lib.stride_tricks.sliding_window_view(batch, (ksize, ksize), axis=(1, 2))
        windows = windows[:, ::stride, ::stride]
        resp = np.einsum("bijuv,kuv->bijk", windows, kernels)
        np.maximum(resp, 0.0, out=resp)
        pooled = _adaptive_average_pool(resp, pool_grid)
        flat = pooled.reshape(len(batch), raw_dim)
        features[start : start + chunk] = np.maximum(flat @ projection, 0.0)
    return LatentMatrix(features)


def _adaptive_average_pool(resp: np.ndarray, grid: int) -> np.ndarray:
    """(b, i, j, k) -> (b, grid, grid, k) by averaging rectangular cells."""
    b, ih, iw, k = resp.shape
    out = np.empty((b, grid, grid, k))
    ei = np.linspace(0, ih, grid + 1).astype(int)
    ej = np.linspace(0, iw, grid + 1).astype(int)
    for gi in range(grid):
        for gj in range(grid):
            cell = resp[:, ei[gi] : max(ei[gi + 1], ei[gi] + 1), ej[gj] : max(ej[gj + 1], ej[gj] + 1)]
            out[:, gi, gj] = cell.mean(axis=(1, 2))
    return out


def pca_basis(latents: LatentMatrix, n_components: int):
    """Principal axes of the sample covariance.

    Returns (components (n_components, dim), eigenvalues, column means).
    Components are orthonormal, ordered by descending eigenvalue, and
    sign-fixed so each component's largest-magnitude loading is
    positive.  Uses the Gram-matrix path when dim exceeds the row
    count, which is exact and cheaper there.
    """
    x = latents.values
    rows, dim = x.shape
    if not 1 <= n_components <= min(rows - 1, dim):
        raise ContractError(
            f"n_components must be in [1, min(rows-1, dim)] = [1, {min(rows - 1, dim)}]"
        )
    mean = x.mean(axis=0)
    centered = x - mean
    if dim <= rows:
        cov = centered.T @ centered / (rows - 1)
        eigvals, eigvecs = np.linalg.eigh(cov)
        order = np.argsort(eigvals)[::-1][:n_components]
        components = eigvecs[:, order].T
        eigvals = eigvals[order]
    else:
        gram = centered @ centered.T / (rows - 1)
        eigvals, eigvecs = np.linalg.eigh(gram)
        order = np.argsort(eigvals)[::-1][:n_components]
        eigvals = eigvals[order]
        # Map Gram eigenvectors u into feature space: v = X^T u / ||X^T u||.
        components = np.empty((n_components, dim))
        for i, idx in enumerate(order):
            v = centered.T @ eigvecs[:, idx]
            norm = np.linalg.norm(v)
            components[i] = v / norm if norm > 0 else v
    for i in range(n_components):
        j = int(np.argmax(np.abs(components[i])))
        if components[i, j] < 0:
            components[i] = -components[i]
    return components, np.maximum(eigvals, 0.0), mean


def pca(latents: LatentMatrix, n_components: int) -> LatentMatrix:
    """Project onto the top principal components."""
    components, _, mean = pca_basis(latents, n_components)
    return LatentMatrix((latents.values - mean) @ components.T, ids=latents.ids)


def _plus_plus_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding: spread initial centroids by squared distance."""
    n = len(x)
    centroids = np.empty((k, x.shape[1]))
    centroids[0] = x[rng.integers(n)]
    d2 = ((x - centroids[0]) ** 2).sum(axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total <= 0:
            centroids[i] = x[rng.integers(n)]
            continue
        probs = d2 / total
        centroids[i] = x[rng.choice(n, p=probs)]
        d2 = np.minimum(d2, ((x - centroids[i]) ** 2).sum(axis=1))
    return centroids


def _assign(x: np.ndarray, centroids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Nearest-centroid assignment; ties break to the lowest index."""
    d2 = (
        (x * x).sum(axis=1)[:, None]
        - 2.0 * x @ centroids.T
        + (centroids * centroids).sum(axis=1)[None, :]
    )
    labels = d2.argmin(axis=1)
    return labels, d2


def _exact_inertia(x: np.ndarray, centroids: np.ndarray, labels: np.ndarray) -> float:
    return float(((x - centroids[labels]) ** 2).sum())


def kmeans_single(
    data, k: int, max_iter: int = 300, tol: float = 1e-6, seed: int = 0
) -> ClusteringResult:
    """One k-means run: ++ seeding then Lloyd iterations.

    Stops when the relative inertia change drops below ``tol`` or after
    ``max_iter`` sweeps.  Emptied clusters re-seed to the point farthest
    from its centroid.
    """
    x = data.values if isinstance(data, LatentMatrix) else np.asarray(data, dtype=np.float64)
    if x.ndim != 2:
        raise ContractError("data must be 2-D")
    if k > len(x):
        raise ContractError(f"k={k} exceeds {len(x)} samples")
    rng = np.random.default_rng(seed)
    centroids = _plus_plus_init(x, k, rng)
    prev_inertia = np.inf
    labels = np.zeros(len(x), dtype=np.int64)
    iterations = 0
    for iterations in range(1, max_iter + 1):
        labels, d2 = _assign(x, centroids)
        # Re-seed empty clusters to the farthest point from its centroid.
        for c in range(k):
            if not np.any(labels == c):
                farthest = int(d2[np.arange(len(x)), labels].argmax())
                centroids[c] = x[farthest]
                labels[farthest] = c
        for c in range(k):
            centroids[c] = x[labels == c].mean(axis=0)
        inertia = _exact_inertia(x, centroids, labels)
        if prev_inertia < np.inf:
            change = abs(prev_inertia - inertia) / max(prev_inertia, 1e-300)
            if change < tol:
                prev_inertia = inertia
                break
        prev_inertia = inertia
    # Final strict assignment so every sample sits with its nearest centroid.
    labels, _ = _assign(x, centroids)
    inertia = _exact_inertia(x, centroids, labels)
    return ClusteringResult(labels, centroids, inertia, iterations)


def kmeans_best_of(data, config: KMeansConfig) -> ClusteringResult:
    """Best of ``m_inits`` seeded restarts by the unsupervised objective.

    Selection uses inertia only; ties keep the earliest restart.
    """
    best: ClusteringResult | None = None
    for restart in range(config.m_inits):
        sub_seed = derive_seed(config.rng_seed, "kmeans.restart", restart)
        result = kmeans_single(data, config.k, config.max_iter, config.tol, sub_seed)
        if best is None or result.inertia < best.inertia:
            best = result
    return best


def kmeans_experiment(data, labels, config: KMeansConfig, eval_indices=None) -> ExperimentStats:
    """N independent best-of-M runs, each scored against the labels.

    Clustering always sees the full data; when ``eval_indices`` is
    given, scoring is restricted to those rows (the labelled subset).
    The top-1 run is the max-ARI one (label-based selection, mirroring
    the reporting protocol); mean/std are over all runs.
    """
    x = data.values if isinstance(data, LatentMatrix) else np.asarray(data, dtype=np.float64)
    if len(labels) != len(x):
        raise ContractError("labels must align with data rows")
    if eval_indices is None:
        eval_indices = range(len(x))
    eval_indices = list(eval_indices)
    if not eval_indices:
        raise ContractError("no rows selected for evaluation")
    truth = [labels[i] for i in eval_indices]
    runs = []
    reports = []
    for run_idx in range(config.n_runs):
        run_cfg = KMeansConfig(
            k=config.k,
            m_inits=config.m_inits,
            n_runs=1,
            max_iter=config.max_iter,
            tol=config.tol,
            rng_seed=derive_seed(config.rng_seed, "kmeans.run", run_idx),
        )
        result = kmeans_best_of(data, run_cfg)
        report = metrics.evaluate(truth, [int(result.assignments[i]) for i in eval_indices])
        reports.append(report)
        runs.append(
            {"ari": report.ari, "accuracy": report.accuracy, "inertia": result.inertia}
        )
    aris = np.array([r["ari"] for r in runs])
    accs = np.array([r["accuracy"] for r in runs])
    top1 = int(aris.argmax())
    return ExperimentStats(
        runs=runs,
        top1_index=top1,
        top1=reports[top1],
        ari_mean=float(aris.mean()),
        ari_std=float(aris.std()),
        accuracy_mean=float(accs.mean()),
        accuracy_std=float(accs.std()),
    )
