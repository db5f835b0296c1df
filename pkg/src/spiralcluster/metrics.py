"""Clustering-vs-truth evaluation.

A predicted clustering is compared against ground-truth labels through
their contingency table (predicted clusters on rows, truth classes on
columns, with row sums ``e``, column sums ``f`` and total ``n``).  From
that table we compute Hungarian-matched clustering accuracy, the
adjusted Rand index, and per-cluster purity.

Cluster and class ids are arbitrary hashables; they are canonicalized
to dense 0..K-1 indices by first appearance, and the original ids are
kept on the table for reporting.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import ContractError


@dataclass
class ContingencyTable:
    """Counts matrix w (clusters x classes) with marginals."""

    w: np.ndarray          # (k_pred, k_true) int64
    e: np.ndarray          # row sums, cluster sizes
    f: np.ndarray          # column sums, class sizes
    n: int
    row_ids: list = field(default_factory=list)
    col_ids: list = field(default_factory=list)


@dataclass
class ClusterReport:
    accuracy: float
    ari: float
    purity: list[float]
    matching: dict        # cluster id -> class id, original id space
    table: ContingencyTable
    ari_degenerate: bool = False

    def to_dict(self) -> dict:
        return {
            "n": int(self.table.n),
            "accuracy": self.accuracy,
            "ari": self.ari,
            "ari_degenerate": self.ari_degenerate,
            "purity": list(self.purity),
            "matching": {str(k): v for k, v in self.matching.items()},
            "contingency": {
                "w": self.table.w.tolist(),
                "row_ids": list(self.table.row_ids),
                "col_ids": list(self.table.col_ids),
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def _canonicalize(labels) -> tuple[np.ndarray, list]:
    """Map labels to dense 0..K-1 by first appearance; return (codes, ids)."""
    ids: list = []
    index: dict = {}
    codes = np.empty(len(labels), dtype=np.int64)
    for pos, lab in enumerate(labels):
        code = index.get(lab)
        if code is None:
            code = len(ids)
            index[lab] = code
            ids.append(lab)
        codes[pos] = code
    return codes, ids


def contingency(y_true, y_pred) -> ContingencyTable:
    """Build the cluster-vs-class counts table.

    Rows follow ``y_pred`` (clusters), columns follow ``y_true``
    (classes); both canonicalized by first appearance.
    """
    if len(y_true) != len(y_pred):
        raise ContractError(
            f"label vectors differ in length: {len(y_true)} vs {len(y_pred)}"
        )
    if len(y_true) == 0:
        raise ContractError("label vectors must be non-empty")
    true_codes, col_ids = _canonicalize(y_true)
    pred_codes, row_ids = _canonicalize(y_pred)
    w = np.zeros((len(row_ids), len(col_ids)), dtype=np.int64)
    np.add.at(w, (pred_codes, true_codes), 1)
    return ContingencyTable(
        w=w,
        e=w.sum(axis=1),
        f=w.sum(axis=0),
        n=int(w.sum()),
        row_ids=row_ids,
        col_ids=col_ids,
    )


def hungarian(cost: np.ndarray) -> dict[int, int]:
    """Minimum-cost one-to-one assignment of rows to columns.

    Covers ``min(rows, cols)`` pairs.  Ties between optimal assignments
    break toward the lexicographically smallest one: earlier rows are
    assigned in preference to later rows, each to the smallest feasible
    column.  Returns a row -> column map.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.size == 0:
        return {}
    if cost.ndim != 2:
        raise ContractError(f"cost matrix must be 2-D, got shape {cost.shape}")
    if not np.all(np.isfinite(cost)):
        raise ContractError("cost matrix entries must be finite")

    def best_cost(sub: np.ndarray) -> float:
        if sub.shape[0] == 0 or sub.shape[1] == 0:
            return 0.0
        rows, cols = linear_sum_assignment(sub)
        return float(sub[rows, cols].sum())

    n_rows, n_cols = cost.shape
    n_assign = min(n_rows, n_cols)
    optimum = best_cost(cost)

    # Fix rows one at a time, keeping the smallest column (or skipping the
    # row, when rows exceed columns) that still reaches the optimal cost.
    assignment: dict[int, int] = {}
    free_cols = list(range(n_cols))
    fixed_cost = 0.0
    remaining = n_assign
    tol = 1e-9 * max(1.0, abs(optimum))
    for r in range(n_rows):
        rows_left_after = n_rows - r - 1
        candidates: list[int | None] = list(free_cols)
        if rows_left_after >= remaining:
            candidates.append(None)  # row may stay unassigned
        chosen = None
        for c in candidates:
            if c is None:
                trial_fixed = fixed_cost
                cols_trial = free_cols
            else:
                trial_fixed = fixed_cost + cost[r, c]
                cols_trial = [cc for cc in free_cols if cc != c]
            sub = cost[np.ix_(range(r + 1, n_rows), cols_trial)]
            need = remaining - (0 if c is None else 1)
            if need > min(sub.shape):
                continue  # not enough rows/columns left to finish covering
            if abs(trial_fixed + best_cost(sub) - optimum) <= tol:
                chosen = c
                break
        if chosen is not None:
            assignment[r] = chosen
            free_cols.remove(chosen)
            fixed_cost += cost[r, chosen]
            remaining -= 1
    return assignment


def _match_clusters(table: ContingencyTable) -> dict[int, int]:
    """Best cluster->class matching on the padded square cost matrix."""
    w = table.w
    k = max(w.shape)
    cost = np.full((k, k), float(w.max()), dtype=np.float64)
    cost[: w.shape[0], : w.shape[1]] = w.max() - w
    full = hungarian(cost)
    return {
        r: c
        for r, c in full.items()
        if r < w.shape[0] and c < w.shape[1]
    }


def clustering_accuracy(table: ContingencyTable) -> float:
    """Fraction correct under the best one-to-one cluster/class matching."""
    match = _match_clusters(table)
    correct = sum(int(table.w[r, c]) for r, c in match.items())
    return correct / table.n


def _pair_sums(table: ContingencyTable) -> tuple[int, int, int, int]:
    """Exact integer pair counts: (sum C(w,2), sum C(e,2), sum C(f,2), C(n,2))."""

    def comb2(arr) -> int:
        total = 0
        for v in np.asarray(arr, dtype=np.int64).ravel():
            v = int(v)
            total += v * (v - 1) // 2
        return total

    return comb2(table.w), comb2(table.e), comb2(table.f), table.n * (table.n - 1) // 2


def ari(table: ContingencyTable) -> float:
    """Adjusted Rand index from the contingency table.

    Evaluated in exact integer arithmetic with a single final float
    division.  The degenerate case (denominator zero: both labelings
    place all pairs together, or all apart, identically) returns 1.0 by
    convention.
    """
    if table.n < 2:
        raise ContractError("ARI needs at least 2 samples")
    spw, se, sf, cn = _pair_sums(table)
    # ARI = (spw - se*sf/cn) / ((se+sf)/2 - se*sf/cn), cleared of fractions:
    numer = 2 * (spw * cn - se * sf)
    denom = cn * (se + sf) - 2 * se * sf
    if denom == 0:
        return 1.0
    return numer / denom


def ari_is_degenerate(table: ContingencyTable) -> bool:
    spw, se, sf, cn = _pair_sums(table)
    return cn * (se + sf) - 2 * se * sf == 0


def purity(table: ContingencyTable) -> list[float]:
    """Majority-class fraction per predicted cluster; empty clusters excluded."""
    out = []
    for row, size in zip(table.w, table.e):
        if size > 0:
            out.append(float(row.max()) / float(size))
    return out


def evaluate(y_true, y_pred) -> ClusterReport:
    """Full comparison: contingency, accuracy, ARI, purity, matching."""
    table = contingency(y_true, y_pred)
    match_codes = _match_clusters(table)
    matching = {
        table.row_ids[r]: table.col_ids[c] for r, c in match_codes.items()
    }
    return ClusterReport(
        accuracy=clustering_accuracy(table),
        ari=ari(table),
        purity=purity(table),
        matching=matching,
        table=table,
        ari_degenerate=ari_is_degenerate(table),
    )
