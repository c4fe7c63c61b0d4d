"""Compiled inner loops for the backfitting sampler and for evaluating and
integrating stored posterior draws.

Tree layout inside the sampler: one row per tree of fixed capacity ``CAP``;
nodes ``0 .. nn-1`` are live and kept compact (pruning moves the last node
into the freed slot). Splits are stored as cutpoint indices and data as
bin indices, so ``x < cuts[k][c]`` is evaluated as ``xb[k] <= c``.
Cutpoint ranges are half-open index intervals ``[lo, hi)``; a left child
of a split at ``c`` keeps indices ``< c``, a right child indices ``> c``.
"""

import math

import numpy as np
from numba import njit

GROW, PRUNE, CHANGE, SWAP = 0, 1, 2, 3


@njit(cache=True)
def split_prob(depth, alpha, beta, max_depth):
    if max_depth >= 0 and depth >= max_depth:
        return 0.0
    return alpha * (1.0 + depth) ** (-beta)


@njit(cache=True)
def compute_ranges(var, cut, left, right, ncut, lo, hi, stack):
    d = ncut.size
    for k in range(d):
        lo[0, k] = 0
        hi[0, k] = ncut[k]
    stack[0] = 0
    top = 1
    ok = True
    while top > 0:
        top -= 1
        i = stack[top]
        k = var[i]
        if k < 0:
            continue
        c = cut[i]
        if c < lo[i, k] or c >= hi[i, k]:
            ok = False
        a = left[i]
        b = right[i]
        for kk in range(d):
            lo[a, kk] = lo[i, kk]
            hi[a, kk] = hi[i, kk]
            lo[b, kk] = lo[i, kk]
            hi[b, kk] = hi[i, kk]
        if c < hi[a, k]:
            hi[a, k] = c
        if c + 1 > lo[b, k]:
            lo[b, k] = c + 1
        stack[top] = a
        stack[top + 1] = b
        top += 2
    return ok


@njit(cache=True)
def n_eligible(lo, hi, i):
    count = 0
    for k in range(lo.shape[1]):
        if hi[i, k] > lo[i, k]:
            count += 1
    return count


@njit(cache=True)
def pick_eligible(lo, hi, i, j):
    """Variable index of the ``j``-th eligible variable at node ``i``."""
    for k in range(lo.shape[1]):
        if hi[i, k] > lo[i, k]:
            if j == 0:
                return k
            j -= 1
    return -1


@njit(cache=True)
def tree_log_prior(var, depth, nn, lo, hi, alpha, beta, max_depth):
    lp = 0.0
    for i in range(nn):
        ps = split_prob(depth[i], alpha, beta, max_depth)
        ne = n_eligible(lo, hi, i)
        if var[i] >= 0:
            k = var[i]
            if ps <= 0.0 or ne == 0 or hi[i, k] <= lo[i, k]:
                return -np.inf
            lp += math.log(ps) - math.log(ne) - math.log(hi[i, k] - lo[i, k])
        elif ne > 0 and ps > 0.0:
            lp += math.log1p(-ps)
    return lp


@njit(cache=True)
def route(var, cut, left, right, xb, i):
    node = 0
    while var[node] >= 0:
        if xb[i, var[node]] <= cut[node]:
            node = left[node]
        else:
            node = right[node]
    return node


@njit(cache=True)
def leaf_stats(var, cut, left, right, nn, xb, resid, leaf_of, cnt, sr, reroute):
    for i in range(nn):
        cnt[i] = 0
        sr[i] = 0.0
    for i in range(resid.size):
        if reroute:
            leaf_of[i] = route(var, cut, left, right, xb, i)
        node = leaf_of[i]
        cnt[node] += 1
        sr[node] += resid[i]


@njit(cache=True)
def tree_log_lik(var, nn, cnt, sr, sigma2, sb2):
    """Leaf-marginalised log likelihood without the terms shared by all trees."""
    ll = 0.0
    for i in range(nn):
        if var[i] < 0:
            denom = sigma2 + cnt[i] * sb2
            ll += 0.5 * math.log(sigma2 / denom) + sb2 * sr[i] * sr[i] / (2.0 * sigma2 * denom)
    return ll


@njit(cache=True)
def remove_node(var, cut, left, right, parent, depth, value, nn, idx):
    """Delete node ``idx`` by moving the last node into its slot."""
    last = nn - 1
    if idx != last:
        var[idx] = var[last]
        cut[idx] = cut[last]
        left[idx] = left[last]
        right[idx] = right[last]
        parent[idx] = parent[last]
        depth[idx] = depth[last]
        value[idx] = value[last]
        p = parent[idx]
        if p >= 0:
            if left[p] == last:
                left[p] = idx
            elif right[p] == last:
                right[p] = idx
        if var[idx] >= 0:
            parent[left[idx]] = idx
            parent[right[idx]] = idx
    return last


@njit(cache=True)
def count_growable(var, depth, nn, lo, hi, alpha, beta, max_depth, buf):
    ng = 0
    for i in range(nn):
        if var[i] < 0 and split_prob(depth[i], alpha, beta, max_depth) > 0.0 \
                and n_eligible(lo, hi, i) > 0:
            buf[ng] = i
            ng += 1
    return ng


@njit(cache=True)
def count_prunable(var, left, right, nn, buf):
    npr = 0
    for i in range(nn):
        if var[i] >= 0 and var[left[i]] < 0 and var[right[i]] < 0:
            buf[npr] = i
            npr += 1
    return npr


@njit(cache=True)
def copy_tree(src_var, src_cut, src_left, src_right, src_parent, src_depth, src_value,
              dst_var, dst_cut, dst_left, dst_right, dst_parent, dst_depth, dst_value, nn):
    for i in range(nn):
        dst_var[i] = src_var[i]
        dst_cut[i] = src_cut[i]
        dst_left[i] = src_left[i]
        dst_right[i] = src_right[i]
        dst_parent[i] = src_parent[i]
        dst_depth[i] = src_depth[i]
        dst_value[i] = src_value[i]


@njit(cache=True)
def mh_step(var, cut, left, right, parent, depth, value, nn,
            pvar, pcut, pleft, pright, pparent, pdepth, pvalue,
            xb, ncut, resid, leaf_of, pleaf_of,
            sigma2, sb2, alpha, beta, max_depth, min_leaf, move_cdf,
            lo, hi, plo, phi, stack, buf, cnt, sr, pcnt, psr, rng):
    """One Metropolis-Hastings update of a tree topology.

    On return ``cnt``/``sr`` hold leaf counts and residual sums of the
    resulting tree and ``leaf_of`` its leaf assignment. Returns
    ``(nn, move, accepted)``.
    """
    cap = var.size
    compute_ranges(var, cut, left, right, ncut, lo, hi, stack)
    leaf_stats(var, cut, left, right, nn, xb, resid, leaf_of, cnt, sr, False)

    u = rng.random()
    move = 0
    while move < 3 and u >= move_cdf[move]:
        move += 1

    copy_tree(var, cut, left, right, parent, depth, value,
              pvar, pcut, pleft, pright, pparent, pdepth, pvalue, nn)
    pnn = nn
    log_q = 0.0  # log q(reverse) - log q(forward)
    pruned_ne = 0
    pruned_avail = 0

    if move == GROW:
        ng = count_growable(var, depth, nn, lo, hi, alpha, beta, max_depth, buf)
        if ng == 0 or nn + 2 > cap:
            return nn, move, False
        leaf = buf[int(rng.random() * ng)]
        ne = n_eligible(lo, hi, leaf)
        k = pick_eligible(lo, hi, leaf, int(rng.random() * ne))
        avail = hi[leaf, k] - lo[leaf, k]
        c = lo[leaf, k] + int(rng.random() * avail)
        log_q -= -math.log(ng) - math.log(ne) - math.log(avail)
        pvar[leaf] = k
        pcut[leaf] = c
        for child in (nn, nn + 1):
            pvar[child] = -1
            pcut[child] = -1
            pleft[child] = -1
            pright[child] = -1
            pparent[child] = leaf
            pdepth[child] = depth[leaf] + 1
            pvalue[child] = 0.0
        pleft[leaf] = nn
        pright[leaf] = nn + 1
        pnn = nn + 2
    elif move == PRUNE:
        npr = count_prunable(var, left, right, nn, buf)
        if npr == 0:
            return nn, move, False
        p = buf[int(rng.random() * npr)]
        log_q += math.log(npr)
        pruned_ne = n_eligible(lo, hi, p)
        pruned_avail = hi[p, var[p]] - lo[p, var[p]]
        a = pleft[p]
        b = pright[p]
        pvar[p] = -1
        pcut[p] = -1
        pleft[p] = -1
        pright[p] = -1
        first = max(a, b)
        second = min(a, b)
        remove_node(pvar, pcut, pleft, pright, pparent, pdepth, pvalue, pnn, first)
        pnn -= 1
        remove_node(pvar, pcut, pleft, pright, pparent, pdepth, pvalue, pnn, second)
        pnn -= 1
    elif move == CHANGE:
        nint = 0
        for i in range(nn):
            if var[i] >= 0:
                buf[nint] = i
                nint += 1
        if nint == 0:
            return nn, move, False
        node = buf[int(rng.random() * nint)]
        ne = n_eligible(lo, hi, node)
        k = pick_eligible(lo, hi, node, int(rng.random() * ne))
        avail = hi[node, k] - lo[node, k]
        c = lo[node, k] + int(rng.random() * avail)
        old_avail = hi[node, var[node]] - lo[node, var[node]]
        log_q += math.log(avail) - math.log(old_avail)
        pvar[node] = k
        pcut[node] = c
    else:
        npairs = 0
        for i in range(1, nn):
            if var[i] >= 0:
                buf[npairs] = i
                npairs += 1
        if npairs == 0:
            return nn, move, False
        child = buf[int(rng.random() * npairs)]
        p = parent[child]
        pvar[p] = var[child]
        pcut[p] = cut[child]
        pvar[child] = var[p]
        pcut[child] = cut[p]

    if not compute_ranges(pvar, pcut, pleft, pright, ncut, plo, phi, stack):
        return nn, move, False

    if move == GROW:
        npr = count_prunable(pvar, pleft, pright, pnn, buf)
        log_q += -math.log(npr)
    elif move == PRUNE:
        ng = count_growable(pvar, pdepth, pnn, plo, phi, alpha, beta, max_depth, buf)
        log_q += -math.log(ng) - math.log(pruned_ne) - math.log(pruned_avail)

    leaf_stats(pvar, pcut, pleft, pright, pnn, xb, resid, pleaf_of, pcnt, psr, True)
    for i in range(pnn):
        if pvar[i] < 0 and pcnt[i] < min_leaf:
            return nn, move, False

    log_ratio = (tree_log_prior(pvar, pdepth, pnn, plo, phi, alpha, beta, max_depth)
                 - tree_log_prior(var, depth, nn, lo, hi, alpha, beta, max_depth)
                 + tree_log_lik(pvar, pnn, pcnt, psr, sigma2, sb2)
                 - tree_log_lik(var, nn, cnt, sr, sigma2, sb2)
                 + log_q)
    if not math.log(rng.random()) < log_ratio:
        return nn, move, False

    copy_tree(pvar, pcut, pleft, pright, pparent, pdepth, pvalue,
              var, cut, left, right, parent, depth, value, pnn)
    for i in range(resid.size):
        leaf_of[i] = pleaf_of[i]
    for i in range(pnn):
        cnt[i] = pcnt[i]
        sr[i] = psr[i]
    return pnn, move, True


@njit(cache=True)
def draw_leaves(var, value, nn, cnt, sr, sigma2, sb2, rng):
    for i in range(nn):
        if var[i] < 0:
            denom = sigma2 + cnt[i] * sb2
            mean = sb2 * sr[i] / denom
            sd = math.sqrt(sigma2 * sb2 / denom)
            value[i] = mean + sd * rng.standard_normal()
        else:
            value[i] = 0.0


class Workspace:
    """Scratch buffers reused across MH steps."""

    def __init__(self, cap, n, d):
        self.pvar = np.full(cap, -1, dtype=np.int64)
        self.pcut = np.full(cap, -1, dtype=np.int64)
        self.pleft = np.full(cap, -1, dtype=np.int64)
        self.pright = np.full(cap, -1, dtype=np.int64)
        self.pparent = np.full(cap, -1, dtype=np.int64)
        self.pdepth = np.zeros(cap, dtype=np.int64)
        self.pvalue = np.zeros(cap)
        self.pleaf_of = np.zeros(n, dtype=np.int64)
        self.lo = np.zeros((cap, d), dtype=np.int64)
        self.hi = np.zeros((cap, d), dtype=np.int64)
        self.plo = np.zeros((cap, d), dtype=np.int64)
        self.phi = np.zeros((cap, d), dtype=np.int64)
        self.stack = np.zeros(cap + 2, dtype=np.int64)
        self.buf = np.zeros(cap, dtype=np.int64)
        self.cnt = np.zeros(cap, dtype=np.int64)
        self.sr = np.zeros(cap)
        self.pcnt = np.zeros(cap, dtype=np.int64)
        self.psr = np.zeros(cap)
        self.resid = np.zeros(n)
        self.fit = np.zeros(n)


@njit(cache=True)
def run_sweeps(n_sweeps, var, cut, left, right, parent, depth, value, nnodes, leaf_of,
               xb, ncut, y, sigma, sb2, alpha, beta, max_depth, min_leaf, move_cdf,
               nu, lam, update_sigma,
               pvar, pcut, pleft, pright, pparent, pdepth, pvalue, pleaf_of,
               lo, hi, plo, phi, stack, buf, cnt, sr, pcnt, psr, resid, fit,
               proposed, accepted, rng):
    """Backfitting Gibbs sweeps: each tree in turn (MH then leaf draw), then sigma."""
    n_trees = var.shape[0]
    n = y.size
    for _ in range(n_sweeps):
        sigma2 = sigma * sigma
        for i in range(n):
            fit[i] = 0.0
        for t in range(n_trees):
            for i in range(n):
                fit[i] += value[t, leaf_of[t, i]]
        for t in range(n_trees):
            for i in range(n):
                resid[i] = y[i] - fit[i] + value[t, leaf_of[t, i]]
            nn, move, acc = mh_step(
                var[t], cut[t], left[t], right[t], parent[t], depth[t], value[t], nnodes[t],
                pvar, pcut, pleft, pright, pparent, pdepth, pvalue,
                xb, ncut, resid, leaf_of[t], pleaf_of,
                sigma2, sb2, alpha, beta, max_depth, min_leaf, move_cdf,
                lo, hi, plo, phi, stack, buf, cnt, sr, pcnt, psr, rng)
            nnodes[t] = nn
            proposed[move] += 1
            if acc:
                accepted[move] += 1
            draw_leaves(var[t], value[t], nn, cnt, sr, sigma2, sb2, rng)
            for i in range(n):
                fit[i] = y[i] - resid[i] + value[t, leaf_of[t, i]]
        if update_sigma:
            sse = 0.0
            for i in range(n):
                r = y[i] - fit[i]
                sse += r * r
            sigma = math.sqrt((nu * lam + sse) / rng.chisquare(nu + n))
    return sigma


@njit(cache=True)
def topology_code(var, cut, left, right, base, stride):
    """Integer code of the preorder token sequence (leaf = 0, split = 1 + var*stride + cut)."""
    code = 0
    stack = np.empty(var.size + 2, dtype=np.int64)
    stack[0] = 0
    top = 1
    while top > 0:
        top -= 1
        i = stack[top]
        if var[i] < 0:
            code = code * base
        else:
            code = code * base + 1 + var[i] * stride + cut[i]
            stack[top] = right[i]
            stack[top + 1] = left[i]
            top += 2
    return code


@njit(cache=True)
def mh_topology_chain(n_steps, var, cut, left, right, parent, depth, value, nn,
                      xb, ncut, resid, leaf_of, sigma2, sb2, alpha, beta, max_depth,
                      min_leaf, move_cdf, base, stride,
                      pvar, pcut, pleft, pright, pparent, pdepth, pvalue, pleaf_of,
                      lo, hi, plo, phi, stack, buf, cnt, sr, pcnt, psr, rng):
    """Run MH on a single tree with fixed residuals; record a topology code per step."""
    codes = np.empty(n_steps, dtype=np.int64)
    for s in range(n_steps):
        nn, move, acc = mh_step(var, cut, left, right, parent, depth, value, nn,
                                pvar, pcut, pleft, pright, pparent, pdepth, pvalue,
                                xb, ncut, resid, leaf_of, pleaf_of,
                                sigma2, sb2, alpha, beta, max_depth, min_leaf, move_cdf,
                                lo, hi, plo, phi, stack, buf, cnt, sr, pcnt, psr, rng)
        codes[s] = topology_code(var[:nn], cut[:nn], left[:nn], right[:nn], base, stride)
    return codes, nn


@njit(cache=True)
def predict_flat(var, thr, left, right, value, start, X, out):
    m, n_trees = start.shape
    for j in range(m):
        for p in range(X.shape[0]):
            s = 0.0
            for t in range(n_trees):
                o = start[j, t]
                node = 0
                while var[o + node] >= 0:
                    if X[p, var[o + node]] < thr[o + node]:
                        node = left[o + node]
                    else:
                        node = right[o + node]
                s += value[o + node]
            out[j, p] = s


@njit(cache=True)
def integrate_sampled_flat(var, thr, left, right, value, start, X, out):
    m, n_trees = start.shape
    npts = X.shape[0]
    for j in range(m):
        s = 0.0
        for p in range(npts):
            for t in range(n_trees):
                o = start[j, t]
                node = 0
                while var[o + node] >= 0:
                    if X[p, var[o + node]] < thr[o + node]:
                        node = left[o + node]
                    else:
                        node = right[o + node]
                s += value[o + node]
        out[j] = s / npts


@njit(cache=True)
def integrate_exact_flat(var, cut, left, right, value, start, size, grid, ncut, out):
    """Sum over leaves of value times the product-measure probability of its cell.

    ``grid[k]`` holds the marginal CDF at ``[lo, c_0, ..., c_{K-1}, hi]``.
    """
    m, n_trees = start.shape
    d = ncut.size
    cap = 1
    for j in range(m):
        for t in range(n_trees):
            if size[j, t] > cap:
                cap = size[j, t]
    glo = np.empty((cap, d), dtype=np.int64)
    ghi = np.empty((cap, d), dtype=np.int64)
    stack = np.empty(cap + 2, dtype=np.int64)
    for j in range(m):
        total = 0.0
        for t in range(n_trees):
            o = start[j, t]
            for k in range(d):
                glo[0, k] = 0
                ghi[0, k] = ncut[k] + 1
            stack[0] = 0
            top = 1
            while top > 0:
                top -= 1
                i = stack[top]
                k = var[o + i]
                if k < 0:
                    prob = 1.0
                    for kk in range(d):
                        prob *= grid[kk, ghi[i, kk]] - grid[kk, glo[i, kk]]
                    total += value[o + i] * prob
                    continue
                c = cut[o + i] + 1
                a = left[o + i]
                b = right[o + i]
                for kk in range(d):
                    glo[a, kk] = glo[i, kk]
                    ghi[a, kk] = ghi[i, kk]
                    glo[b, kk] = glo[i, kk]
                    ghi[b, kk] = ghi[i, kk]
                if c < ghi[a, k]:
                    ghi[a, k] = c
                if c > glo[b, k]:
                    glo[b, k] = c
                stack[top] = a
                stack[top + 1] = b
                top += 2
        out[j] = total
