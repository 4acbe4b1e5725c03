"""Shared test helpers: the exhaustive scheduling oracle."""
from __future__ import annotations

import numpy as np

_STRING_CACHE: dict[tuple[int, int], tuple[np.ndarray, np.ndarray]] = {}


def all_feasible_strings(n_intervals: int, n_nodes: int) -> tuple[np.ndarray, np.ndarray]:
    """Every activity string of the given shape plus its feasibility mask.

    Codes: 0..n_nodes-1 nodes, n_nodes idle, n_nodes+1 switch.  Cached per
    shape; used as the brute-force oracle for the exact solver.
    """
    key = (n_intervals, n_nodes)
    if key not in _STRING_CACHE:
        codes = n_nodes + 2
        total = codes ** n_intervals
        digits = np.arange(total)
        strings = np.empty((total, n_intervals), dtype=np.int8)
        for m in range(n_intervals - 1, -1, -1):
            strings[:, m] = digits % codes
            digits //= codes
        is_node = strings < n_nodes
        feasible = np.ones(total, dtype=bool)
        for m in range(n_intervals - 1):
            feasible &= (~is_node[:, m + 1]
                         | (strings[:, m] == strings[:, m + 1])
                         | (strings[:, m] == n_nodes + 1))
        _STRING_CACHE[key] = (strings, feasible)
    return _STRING_CACHE[key]


def enumeration_oracle(values: np.ndarray, weights=None) -> float:
    """Maximum feasible objective by exhaustive enumeration."""
    n_intervals, n_nodes = values.shape
    strings, feasible = all_feasible_strings(n_intervals, n_nodes)
    w = np.ones(n_nodes) if weights is None else np.asarray(weights, dtype=float)
    padded = np.hstack([values * w, np.zeros((n_intervals, 2))])
    objective = padded[np.arange(n_intervals)[None, :], strings].sum(axis=1)
    return float(objective[feasible].max())
