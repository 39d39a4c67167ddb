"""Independent reference implementations used as test oracles.

Nothing here imports the code under test except for reading model
parameters, so a bug in the package cannot leak into its own oracle.
"""
import math
import statistics

import numpy as np


def sigma(m, history, cap=3.0, eps=0.01):
    mean = math.fsum(history) / len(history)
    std = max(statistics.pstdev(history), eps)
    return max(-cap, min(cap, (m - mean) / std))


def weight(history):
    return 1.0 / math.log2(max(statistics.pstdev(history), 2.0))


def critic(users_ranks, n):
    """Line-by-line N-th-rank critic: returns [(user, priority)] sorted ascending.

    ``users_ranks`` is a list of (user, [rank per aspect]).  Insertion sort
    keeps equal priorities in input order; callers feed users sorted by id.
    """
    out = []
    for user, ranks in users_ranks:
        ranks = list(ranks)
        # sort ranks ascending
        for i in range(1, len(ranks)):
            j = i
            while j > 0 and ranks[j - 1] > ranks[j]:
                ranks[j - 1], ranks[j] = ranks[j], ranks[j - 1]
                j -= 1
        priority = ranks[n - 1]  # index starts from 0
        out.append((user, priority))
    result = []
    for item in out:
        k = len(result)
        while k > 0 and result[k - 1][1] > item[1]:
            k -= 1
        result.insert(k, item)
    return result


def pairwise_auc(ordered_labels):
    """Fraction of (abnormal, normal) pairs with the abnormal user listed first."""
    pos_idx = [i for i, a in enumerate(ordered_labels) if a]
    neg_idx = [i for i, a in enumerate(ordered_labels) if not a]
    hits = sum(1 for p in pos_idx for q in neg_idx if p < q)
    return hits, len(pos_idx) * len(neg_idx)


def autoencoder_loss_longdouble(model, X, params=None):
    """Train-mode MSE in extended precision, written from the layer definition."""
    L = np.longdouble
    ps = [np.asarray(p, dtype=L) for p in (params if params is not None else model.params())]
    a = np.asarray(X, dtype=L)
    i = 0
    n_layers = len(model.layers)
    for li, layer in enumerate(model.layers):
        W, b = ps[i], ps[i + 1]
        i += 2
        z = a @ W + b
        if li == n_layers - 1:
            a = z
            break
        if layer.gamma is not None:
            g, beta = ps[i], ps[i + 1]
            i += 2
            mu = z.mean(axis=0)
            var = ((z - mu) ** 2).mean(axis=0)
            z = g * (z - mu) / np.sqrt(var + L(model.eps_bn)) + beta
        a = np.where(z > 0, z, L(0))
    return ((a - np.asarray(X, dtype=L)) ** 2).mean()


def fd_max_relative_error(model, X, grads, h=1e-4, floor=1e-8):
    """Central differences of the long-double loss against analytic ``grads``."""
    base = [np.array(p, dtype=np.longdouble) for p in model.params()]
    worst = 0.0
    for k, g in enumerate(grads):
        for idx in np.ndindex(g.shape):
            plus = [p.copy() for p in base]
            minus = [p.copy() for p in base]
            plus[k][idx] += h
            minus[k][idx] -= h
            num = (autoencoder_loss_longdouble(model, X, plus) - autoencoder_loss_longdouble(model, X, minus)) / (2 * h)
            num = float(num)
            ana = float(g[idx])
            rel = abs(ana - num) / max(abs(ana) + abs(num), floor)
            worst = max(worst, rel)
    return worst
