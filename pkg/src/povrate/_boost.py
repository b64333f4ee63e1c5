"""Compiled inner loops for cyclic one-feature-at-a-time boosting.

Everything here operates on pre-binned integer codes and flat score arrays so
the hot paths stay allocation-free. All reductions run in a fixed order, so
results are bit-reproducible for identical inputs.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def _softplus(x):
    if x > 0.0:
        return x + np.log1p(np.exp(-x))
    return np.log1p(np.exp(x))


@njit(cache=True)
def weighted_nll_from_scores(scores, y, w):
    """Weighted mean negative log-likelihood of logits."""
    acc = 0.0
    tot = 0.0
    for i in range(scores.shape[0]):
        acc += w[i] * (_softplus(scores[i]) - y[i] * scores[i])
        tot += w[i]
    if tot == 0.0:
        return 0.0
    return acc / tot


@njit(cache=True)
def _fit_leaf_partition(sw, swr, n_bins, n_leaves, values):
    """Optimal contiguous partition of bins into <= n_leaves segments.

    Minimizes weighted squared residual error, i.e. maximizes the sum of
    (segment residual sum)^2 / segment weight. Writes the per-bin fitted value
    (weighted mean residual of the owning segment).
    """
    B = n_bins
    if n_leaves >= B:
        for b in range(B):
            values[b] = swr[b] / sw[b] if sw[b] > 0.0 else 0.0
        return
    # prefix sums over bins
    pw = np.empty(B + 1)
    pr = np.empty(B + 1)
    pw[0] = 0.0
    pr[0] = 0.0
    for b in range(B):
        pw[b + 1] = pw[b] + sw[b]
        pr[b + 1] = pr[b] + swr[b]

    L = n_leaves
    NEG = -1.0e300
    prev = np.empty(B)
    cur = np.empty(B)
    arg = np.zeros((L, B), dtype=np.int32)
    for j in range(B):
        dw = pw[j + 1]
        dr = pr[j + 1]
        prev[j] = (dr * dr / dw) if dw > 0.0 else 0.0
    for l in range(1, L):
        for j in range(B):
            if j < l:
                cur[j] = NEG
                arg[l, j] = 0
                continue
            best = NEG
            best_i = l
            for i in range(l, j + 1):
                dw = pw[j + 1] - pw[i]
                dr = pr[j + 1] - pr[i]
                g = (dr * dr / dw) if dw > 0.0 else 0.0
                cand = prev[i - 1] + g
                if cand > best:
                    best = cand
                    best_i = i
            cur[j] = best
            arg[l, j] = best_i
        for j in range(B):
            prev[j] = cur[j]
    # backtrack segment boundaries from (L-1, B-1)
    end = B - 1
    for l in range(L - 1, -1, -1):
        start = arg[l, end] if l > 0 else 0
        dw = pw[end + 1] - pw[start]
        dr = pr[end + 1] - pr[start]
        v = (dr / dw) if dw > 0.0 else 0.0
        for b in range(start, end + 1):
            values[b] = v
        end = start - 1
        if end < 0:
            break


@njit(cache=True)
def boost_mains(
    codes_core,
    y_core,
    w_core,
    codes_val,
    y_val,
    w_val,
    n_bins,
    ff,
    ff_off,
    score_core,
    score_val,
    lr,
    n_leaves,
    n_rounds,
    patience,
    train_curve,
    val_curve,
):
    """Cyclic rounds of single-feature fits to the logistic residual.

    When a validation split is supplied (len(y_val) > 0 and patience > 0),
    stops once validation NLL has not improved for `patience` rounds and
    rolls the feature functions and scores back to the best round. Returns
    (rounds_executed, best_round); best_round is -1 without validation.
    """
    n = y_core.shape[0]
    p = n_bins.shape[0]
    max_bins = 0
    for j in range(p):
        if n_bins[j] > max_bins:
            max_bins = n_bins[j]
    sw = np.zeros(max_bins)
    swr = np.zeros(max_bins)
    values = np.zeros(max_bins)

    has_val = y_val.shape[0] > 0 and patience > 0
    best_nll = 1.0e300
    best_round = -1
    ff_best = ff.copy()
    sc_best = score_core.copy()
    sv_best = score_val.copy()

    executed = 0
    for rnd in range(n_rounds):
        for j in range(p):
            B = n_bins[j]
            for b in range(B):
                sw[b] = 0.0
                swr[b] = 0.0
            for i in range(n):
                r = y_core[i] - 1.0 / (1.0 + np.exp(-score_core[i]))
                b = codes_core[i, j]
                sw[b] += w_core[i]
                swr[b] += w_core[i] * r
            _fit_leaf_partition(sw, swr, B, n_leaves, values)
            off = ff_off[j]
            for b in range(B):
                ff[off + b] += lr * values[b]
            for i in range(n):
                score_core[i] += lr * values[codes_core[i, j]]
            for i in range(score_val.shape[0]):
                score_val[i] += lr * values[codes_val[i, j]]
        train_curve[rnd] = weighted_nll_from_scores(score_core, y_core, w_core)
        executed = rnd + 1
        if has_val:
            nll = weighted_nll_from_scores(score_val, y_val, w_val)
            val_curve[rnd] = nll
            if nll < best_nll - 1e-12:
                best_nll = nll
                best_round = rnd
                ff_best[:] = ff
                sc_best[:] = score_core
                sv_best[:] = score_val
            elif rnd - best_round >= patience:
                break
    if has_val and best_round >= 0:
        ff[:] = ff_best
        score_core[:] = sc_best
        score_val[:] = sv_best
    return executed, best_round


@njit(cache=True)
def rank_pair_gains(codes, y, w, score, n_bins, pair_a, pair_b, gains):
    """Weighted residual variance reduction of a full 2-D bin-grid fit, per pair."""
    n = y.shape[0]
    m = pair_a.shape[0]
    r = np.empty(n)
    tot_w = 0.0
    tot_wr = 0.0
    for i in range(n):
        r[i] = y[i] - 1.0 / (1.0 + np.exp(-score[i]))
        tot_w += w[i]
        tot_wr += w[i] * r[i]
    base = (tot_wr * tot_wr / tot_w) if tot_w > 0.0 else 0.0
    max_cells = 0
    for t in range(m):
        cells = n_bins[pair_a[t]] * n_bins[pair_b[t]]
        if cells > max_cells:
            max_cells = cells
    cw = np.zeros(max_cells)
    cwr = np.zeros(max_cells)
    for t in range(m):
        a = pair_a[t]
        b = pair_b[t]
        nb = n_bins[b]
        cells = n_bins[a] * nb
        for c in range(cells):
            cw[c] = 0.0
            cwr[c] = 0.0
        for i in range(n):
            c = codes[i, a] * nb + codes[i, b]
            cw[c] += w[i]
            cwr[c] += w[i] * r[i]
        fit = 0.0
        for c in range(cells):
            if cw[c] > 0.0:
                fit += cwr[c] * cwr[c] / cw[c]
        gains[t] = fit - base
    return gains


@njit(cache=True)
def boost_pairs(
    cell_core,
    y_core,
    w_core,
    cell_val,
    y_val,
    w_val,
    n_cells,
    pg,
    pg_off,
    score_core,
    score_val,
    lr,
    n_rounds,
    patience,
):
    """Cyclic rounds over selected pairs; each fit is the per-cell weighted
    mean residual on the pair's 2-D bin grid."""
    n = y_core.shape[0]
    m = n_cells.shape[0]
    max_cells = 0
    for t in range(m):
        if n_cells[t] > max_cells:
            max_cells = n_cells[t]
    cw = np.zeros(max_cells)
    cwr = np.zeros(max_cells)
    vals = np.zeros(max_cells)

    has_val = y_val.shape[0] > 0 and patience > 0
    best_nll = 1.0e300
    best_round = -1
    pg_best = pg.copy()
    sc_best = score_core.copy()
    sv_best = score_val.copy()

    executed = 0
    for rnd in range(n_rounds):
        for t in range(m):
            cells = n_cells[t]
            for c in range(cells):
                cw[c] = 0.0
                cwr[c] = 0.0
            for i in range(n):
                r = y_core[i] - 1.0 / (1.0 + np.exp(-score_core[i]))
                c = cell_core[i, t]
                cw[c] += w_core[i]
                cwr[c] += w_core[i] * r
            off = pg_off[t]
            for c in range(cells):
                v = (cwr[c] / cw[c]) if cw[c] > 0.0 else 0.0
                vals[c] = lr * v
                pg[off + c] += vals[c]
            for i in range(n):
                score_core[i] += vals[cell_core[i, t]]
            for i in range(score_val.shape[0]):
                score_val[i] += vals[cell_val[i, t]]
        executed = rnd + 1
        if has_val:
            nll = weighted_nll_from_scores(score_val, y_val, w_val)
            if nll < best_nll - 1e-12:
                best_nll = nll
                best_round = rnd
                pg_best[:] = pg
                sc_best[:] = score_core
                sv_best[:] = score_val
            elif rnd - best_round >= patience:
                break
    if has_val and best_round >= 0:
        pg[:] = pg_best
        score_core[:] = sc_best
        score_val[:] = sv_best
    return executed, best_round
