"""Point clouds to normalized 2-D charge images.

The chain is: optional nearest-neighbor filter in 3-D, projection onto
the x-y plane, optional circular Hough filter, charge-summing
rasterization onto a square grid, then log(1+v) and per-image min-max
scaling into [0, 1].
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError
from .simkit import EventCloud


@dataclass
class Points2D:
    """Projected points: columns x [mm], y [mm], charge."""

    points: np.ndarray  # (n, 3)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(self.points)):
            raise ContractError("non-finite projected coordinates")
        if self.points.shape[0] and np.any(self.points[:, 2] < 0):
            raise ContractError("negative charge in projected points")

    def __len__(self):
        return len(self.points)


@dataclass
class ImageGrid:
    """A height x width non-negative charge image."""

    values: np.ndarray
    degenerate: bool = False   # constant (typically all-zero) after scaling
    dropped: int = 0           # out-of-bounds points discarded at rasterization

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or min(self.values.shape) < 1:
            raise ContractError(f"image must be 2-D, got shape {self.values.shape}")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass
class HoughParams:
    """Circle-vote grid: radii in [r_min, r_max], centers on a square grid."""

    r_min: float = 20.0          # mm
    r_max: float = 200.0         # mm
    n_radii: int = 60
    center_resolution: float = 4.0   # mm between center-grid nodes
    keep_distance: float = 5.0       # mm band around the winning circle

    def __post_init__(self):
        if not 0 < self.r_min < self.r_max:
            raise ContractError("need 0 < r_min < r_max")
        if self.n_radii < 1 or self.center_resolution <= 0 or self.keep_distance <= 0:
            raise ContractError("hough grid parameters must be positive")


@dataclass
class PreprocessConfig:
    resolution: int = 128
    bounds: float = 275.0        # symmetric half-width, mm
    apply_nn_filter: bool = False
    nn_radius: float = 10.0      # mm
    nn_min_neighbors: int = 2
    apply_hough: bool = False
    hough: HoughParams = field(default_factory=HoughParams)

    def __post_init__(self):
        if self.resolution <= 0:
            raise ContractError("resolution must be > 0")
        if self.bounds <= 0:
            raise ContractError("bounds must be > 0")
        if self.nn_radius <= 0:
            raise ContractError("nn_radius must be > 0")
        if self.nn_min_neighbors < 1:
            raise ContractError("nn_min_neighbors must be >= 1")


def project_xy(cloud: EventCloud) -> Points2D:
    """Drop z; keep (x, y, charge) with duplicates preserved."""
    if len(cloud.points) == 0:
        return Points2D(np.empty((0, 3)))
    return Points2D(cloud.points[:, [0, 1, 3]].copy())


def rasterize(points: Points2D, config: PreprocessConfig) -> ImageGrid:
    """Sum charges into a resolution^2 grid over [-bounds, bounds]^2.

    Bins are half-open [lo, hi) with the last bin closed, so every
    in-bounds point lands in exactly one bin; out-of-bounds points are
    dropped and counted on the returned image.
    """
    res, b = config.resolution, config.bounds
    pts = points.points
    if len(pts) == 0:
        return ImageGrid(np.zeros((res, res)), dropped=0)
    x, y, q = pts[:, 0], pts[:, 1], pts[:, 2]
    inside = (x >= -b) & (x <= b) & (y >= -b) & (y <= b)
    dropped = int(len(pts) - inside.sum())
    edges = np.linspace(-b, b, res + 1)
    hist, _, _ = np.histogram2d(y[inside], x[inside], bins=(edges, edges), weights=q[inside])
    # Rows index ascending y, columns ascending x.
    return ImageGrid(hist, dropped=dropped)


def log_minmax_scale(image: ImageGrid) -> ImageGrid:
    """v -> ln(1+v), then affine map onto [0, 1].

    A constant input (max == min) has no scale; it maps to all zeros
    with the degenerate flag set.
    """
    v = image.values
    if np.any(v < 0):
        raise ContractError("log_minmax_scale expects non-negative values")
    logged = np.log1p(v)
    lo, hi = logged.min(), logged.max()
    if hi == lo:
        return ImageGrid(np.zeros_like(v), degenerate=True, dropped=image.dropped)
    return ImageGrid((logged - lo) / (hi - lo), dropped=image.dropped)


def nn_filter(cloud: EventCloud, radius: float, min_neighbors: int) -> EventCloud:
    """Keep points with >= min_neighbors others within 3-D distance radius."""
    if radius <= 0:
        raise ContractError("radius must be > 0")
    if min_neighbors < 1:
        raise ContractError("min_neighbors must be >= 1")
    pts = cloud.points
    if len(pts) == 0:
        return EventCloud(cloud.id, pts.copy(), cloud.label, dict(cloud.meta))
    xyz = pts[:, :3]
    # O(n^2) pairwise distances; events stay well under ~10^3 points.
    d2 = ((xyz[:, None, :] - xyz[None, :, :]) ** 2).sum(axis=2)
    within = d2 <= radius * radius
    np.fill_diagonal(within, False)
    keep = within.sum(axis=1) >= min_neighbors
    return EventCloud(cloud.id, pts[keep], cloud.label, dict(cloud.meta))


def hough_circle_filter(
    points: Points2D, params: HoughParams
) -> tuple[Points2D, dict]:
    """Keep points near the strongest charge-voted circle.

    Votes accumulate over a (center_x, center_y, radius) grid; each
    point adds its charge to the (center, nearest-radius) cells whose
    ring passes within half a radius step of it.  Returns the kept
    subset in input order plus a diagnostics dict (winning circle,
    vote mass, degenerate flag).
    """
    pts = points.points
    info: dict = {"degenerate": False}
    if len(pts) < 3:
        warnings.warn("hough_circle_filter: fewer than 3 points, returning input unchanged")
        info["degenerate"] = True
        return Points2D(pts.copy()), info

    x, y, q = pts[:, 0], pts[:, 1], pts[:, 2]
    step = params.center_resolution
    cx_grid = np.arange(x.min() - params.r_max, x.max() + params.r_max + step, step)
    cy_grid = np.arange(y.min() - params.r_max, y.max() + params.r_max + step, step)
    radii = np.linspace(params.r_min, params.r_max, params.n_radii)
    r_step = radii[1] - radii[0] if params.n_radii > 1 else params.r_max - params.r_min

    best = (-1.0, 0.0, 0.0, 0.0)  # votes, cx, cy, r
    # Vectorize over points and radii for each candidate center row.
    for cx in cx_grid:
        dx2 = (x - cx) ** 2
        for cy in cy_grid:
            dist = np.sqrt(dx2 + (y - cy) ** 2)  # (n,)
            ring = np.rint((dist - params.r_min) / r_step).astype(int) if params.n_radii > 1 else np.zeros(len(dist), int)
            ok = (ring >= 0) & (ring < params.n_radii)
            if not ok.any():
                continue
            votes = np.bincount(ring[ok], weights=q[ok], minlength=params.n_radii)
            idx = int(votes.argmax())
            if votes[idx] > best[0]:
                best = (float(votes[idx]), float(cx), float(cy), float(radii[idx]))

    _, cx, cy, r = best
    dist = np.hypot(x - cx, y - cy)
    keep = np.abs(dist - r) <= params.keep_distance
    info.update({"center": (cx, cy), "radius": r, "votes": best[0], "kept": int(keep.sum())})
    return Points2D(pts[keep]), info


def preprocess_event(cloud: EventCloud, config: PreprocessConfig) -> ImageGrid:
    """Full chain: nn_filter? -> project -> hough? -> rasterize -> scale."""
    work = cloud
    if config.apply_nn_filter:
        work = nn_filter(work, config.nn_radius, config.nn_min_neighbors)
    flat = project_xy(work)
    if config.apply_hough and len(flat) > 0:
        flat, _ = hough_circle_filter(flat, config.hough)
    return log_minmax_scale(rasterize(flat, config))


def preprocess_dataset(
    events: list[EventCloud], config: PreprocessConfig
) -> tuple[np.ndarray, list[str], list[str | None]]:
    """Preprocess a batch; returns (stack (n,res,res), ids, labels)."""
    images = np.empty((len(events), config.resolution, config.resolution))
    ids, labels = [], []
    for i, ev in enumerate(events):
        images[i] = preprocess_event(ev, config).values
        ids.append(ev.id)
        labels.append(ev.label)
    return images, ids, labels
