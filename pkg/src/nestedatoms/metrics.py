"""Clustering accuracy metrics.

Partitions are plain sequences of integer labels over a shared index set;
label values are arbitrary (no contiguity assumed). The adjusted Rand index
uses exact integer pair counting — Python integers, not floats — so scores
stay exact even when the pooled index runs to millions of pairs, with a
single floating division at the end.
"""

import numpy as np

from .errors import ConfigError


def _pairs(count):
    return count * (count - 1) // 2


def _contingency(a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape or a.ndim != 1:
        raise ConfigError("partitions must be equal-length 1-d sequences")
    if a.size < 2:
        raise ConfigError("need at least two elements to compare partitions")
    _, ia = np.unique(a, return_inverse=True)
    _, ib = np.unique(b, return_inverse=True)
    n_b = int(ib.max()) + 1
    joint = np.bincount(ia * n_b + ib)
    row = np.bincount(ia)
    col = np.bincount(ib)
    return joint.tolist(), row.tolist(), col.tolist(), int(a.size)


def _canonical(labels):
    """Relabel by order of first occurrence: 0, 1, 2, ..."""
    mapping = {}
    return np.array(
        [mapping.setdefault(v, len(mapping)) for v in np.asarray(labels).tolist()]
    )


def _same_partition(a, b):
    return np.array_equal(_canonical(a), _canonical(b))


def adjusted_rand_index(a, b):
    """Adjusted Rand index between two labelings of the same index set.

    1 for identical partitions (up to relabeling), ~0 for independent
    random labelings. When the chance-correction denominator vanishes (both
    partitions all singletons, or both a single cluster), returns 1.0 if the
    partitions coincide and 0.0 otherwise.
    """
    joint, row, col, n = _contingency(a, b)
    sum_joint = sum(_pairs(c) for c in joint)
    sum_row = sum(_pairs(c) for c in row)
    sum_col = sum(_pairs(c) for c in col)
    total = _pairs(n)
    numer = total * sum_joint - sum_row * sum_col
    denom = total * (sum_row + sum_col) - 2 * sum_row * sum_col
    if denom == 0:
        return 1.0 if _same_partition(np.asarray(a), np.asarray(b)) else 0.0
    return 2.0 * numer / denom


def per_group_oc_ari(est, truth):
    """Within-group ARIs between estimated and true observation labels.

    est and truth are parallel lists of per-group label arrays; returns a
    length-J float array.
    """
    if len(est) != len(truth):
        raise ConfigError(
            f"group count mismatch: {len(est)} estimated vs {len(truth)} true"
        )
    return np.array(
        [adjusted_rand_index(e, t) for e, t in zip(est, truth)]
    )


def overall_oc_ari(est, truth):
    """One ARI over the pooled observation index (group order fixed), so
    label sharing across groups counts."""
    if len(est) != len(truth):
        raise ConfigError(
            f"group count mismatch: {len(est)} estimated vs {len(truth)} true"
        )
    return adjusted_rand_index(np.concatenate(est), np.concatenate(truth))


def count_clusters(labels):
    """Number of distinct labels present."""
    return int(np.unique(np.asarray(labels)).size)
