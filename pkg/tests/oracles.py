"""Independent brute-force oracles used to pin expected test values.

Deliberately written as plain Python loops over nested lists: no numpy
vectorization, no shared code with the implementations under test. Python
floats are IEEE doubles, so with the same per-channel accumulation order the
oracle agrees bit-for-bit with the float64 implementations on similarities,
and exactly on the integer offsets.
"""

import math

NORM_EPS = 1e-12


def _sim(a, b):
    dot = 0.0
    na = 0.0
    nb = 0.0
    for x, y in zip(a, b):
        dot += x * y
        na += x * x
        nb += y * y
    sa = math.sqrt(na)
    sb = math.sqrt(nb)
    if sa < NORM_EPS or sb < NORM_EPS:
        return 0.0
    return dot / (sa * sb)


def _tie_key(dr, dc, tiebreak):
    if tiebreak == "l1_rowmajor":
        return (abs(dr) + abs(dc), dr, dc)
    if tiebreak == "rowmajor":
        return (dr, dc)
    raise ValueError(tiebreak)


def brute_force_nn_field(f_i, f_j, rows, cols, tiebreak="l1_rowmajor"):
    """Exhaustive windowed argmax-cosine search.

    f_i, f_j: nested lists indexed [r][c][channel]; rows/cols: inclusive
    offset bounds (lo, hi). Returns offsets as a nested list [r][c] -> (dr, dc).
    """
    h = len(f_i)
    w = len(f_i[0])
    out = []
    for r in range(h):
        row = []
        for c in range(w):
            best_sim = None
            best_off = None
            for dr in range(rows[0], rows[1] + 1):
                for dc in range(cols[0], cols[1] + 1):
                    q_r, q_c = r + dr, c + dc
                    if not (0 <= q_r < h and 0 <= q_c < w):
                        continue
                    sim = _sim(f_i[r][c], f_j[q_r][q_c])
                    if best_sim is None or sim > best_sim or (
                        sim == best_sim
                        and _tie_key(dr, dc, tiebreak) < _tie_key(*best_off, tiebreak)
                    ):
                        best_sim = sim
                        best_off = (dr, dc)
            row.append(best_off)
        out.append(row)
    return out


def features_to_lists(f):
    """[C, h, w] numpy array -> nested [r][c][channel] python lists."""
    c, h, w = f.shape
    return [[[float(f[ch][r][col]) for ch in range(c)] for col in range(w)] for r in range(h)]


def oracle_offsets_to_array(out):
    import numpy as np

    h, w = len(out), len(out[0])
    arr = np.zeros((h, w, 2), dtype=np.int64)
    for r in range(h):
        for c in range(w):
            arr[r, c] = out[r][c]
    return arr
