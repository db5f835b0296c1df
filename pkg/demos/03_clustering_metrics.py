"""Scoring a clustering against ground truth.

Cluster ids are arbitrary, so naive accuracy is meaningless; the
contingency table plus a minimum-cost assignment recovers the best
cluster-to-class matching, and the adjusted Rand index corrects
pair-counting agreement for chance.
"""

import numpy as np

from spiralcluster import metrics

# A 3-class truth and a clustering that got most of it right, with the
# cluster ids permuted and one cluster split in two.
y_true = ["p"] * 6 + ["c"] * 6 + ["other"] * 6
y_pred = [2, 2, 2, 2, 2, 2,          # protons, cleanly grouped as cluster 2
          0, 0, 0, 0, 3, 3,          # carbons split across clusters 0 and 3
          1, 1, 1, 1, 1, 0]          # other, mostly cluster 1

report = metrics.evaluate(y_true, y_pred)
table = report.table

print("contingency table (rows = clusters, cols = classes):")
print("  cols:", table.col_ids)
for rid, row, size in zip(table.row_ids, table.w, table.e):
    print(f"  cluster {rid}: {row.tolist()}  (size {size})")
print("  class sizes:", table.f.tolist())

print(f"\nbest matching (cluster -> class): {report.matching}")
print(f"clustering accuracy: {report.accuracy:.4f}")
print(f"adjusted Rand index: {report.ari:.4f}")
print(f"per-cluster purity:  {[round(p, 3) for p in report.purity]}")

# The metrics ignore cluster relabelings entirely.
relabel = {0: 7, 1: 5, 2: 9, 3: 1}
permuted = metrics.evaluate(y_true, [relabel[c] for c in y_pred])
assert permuted.ari == report.ari
assert permuted.accuracy == report.accuracy
print("\nrelabeling clusters changes nothing, verified")

# ARI is chance-adjusted: random assignments score near zero, and
# assignments can score below zero when they disagree more than chance.
rng = np.random.default_rng(0)
random_scores = [
    metrics.evaluate(y_true, rng.integers(0, 3, len(y_true)).tolist()).ari
    for _ in range(200)
]
print(f"mean ARI of 200 random labelings: {np.mean(random_scores):+.4f} (~0)")
worst = metrics.evaluate([0, 0, 1, 1], [0, 1, 0, 1])
print(f"an adversarial case scores below chance: ARI = {worst.ari}")
