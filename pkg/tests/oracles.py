"""Naive loop reference implementations used to verify the metric suite.

Deliberately written with plain Python loops and scalar math, independent of
the vectorized / jitted code paths they check.
"""

import math


def mse_between(gt, pred):
    """gt, pred: [N][T][2] nested sequences (pixel units)."""
    total = 0.0
    count = 0
    for n in range(len(gt)):
        for t in range(len(gt[n])):
            dx = pred[n][t][0] - gt[n][t][0]
            dy = pred[n][t][1] - gt[n][t][1]
            total += dx * dx + dy * dy
            count += 1
    return total / count


def min_mean_mse(gt, samples):
    per = [mse_between(gt, s) for s in samples]
    mn = per[0]
    acc = 0.0
    for v in per:
        if v < mn:
            mn = v
        acc += v
    return mn, acc / len(per)


def epe(targets, t_stars, samples):
    """targets [P][2], t_stars [P], samples [K][P][T][2] (pixel units)."""
    acc = 0.0
    for s in samples:
        e = 0.0
        for p in range(len(targets)):
            t = t_stars[p]
            dx = s[p][t][0] - targets[p][0]
            dy = s[p][t][1] - targets[p][1]
            e += math.sqrt(dx * dx + dy * dy)
        acc += e / len(targets)
    return acc / len(samples)


def pck_fractions(gt, pred, thresholds):
    counts = [0 for _ in thresholds]
    total = 0
    for n in range(len(gt)):
        for t in range(len(gt[n])):
            dx = pred[n][t][0] - gt[n][t][0]
            dy = pred[n][t][1] - gt[n][t][1]
            err = math.sqrt(dx * dx + dy * dy)
            total += 1
            for j, thr in enumerate(thresholds):
                if err < thr:
                    counts[j] += 1
    return [c / total for c in counts]


def _cosine_distance(a, b):
    dot = sum(x * y for x, y in zip(a, b))
    na = math.sqrt(sum(x * x for x in a)) or 1e-12
    nb = math.sqrt(sum(x * x for x in b)) or 1e-12
    return 1.0 - dot / (na * nb)


def knn_accuracy(latents, labels, k=1):
    n = len(labels)
    correct = 0
    for i in range(n):
        dists = []
        for j in range(n):
            if j != i:
                dists.append((_cosine_distance(latents[i], latents[j]), j))
        dists.sort(key=lambda dj: (dj[0], dj[1]))
        votes = {}
        for d, j in dists[:k]:
            cnt, dsum = votes.get(labels[j], (0, 0.0))
            votes[labels[j]] = (cnt + 1, dsum + d)
        best = None
        for lbl, (cnt, dsum) in votes.items():
            key = (-cnt, dsum, lbl)
            if best is None or key < best[0]:
                best = (key, lbl)
        correct += int(best[1] == labels[i])
    return correct / n


def kl_monte_carlo(mu, logvar, n_samples, rng):
    """MC estimate of KL(q || N(0, I)) summed over coordinates."""
    import numpy as np

    mu = np.asarray(mu, dtype=float)
    logvar = np.asarray(logvar, dtype=float)
    std = np.exp(0.5 * logvar)
    eps = rng.standard_normal((n_samples, *mu.shape))
    z = mu + std * eps
    log_q = -0.5 * (((z - mu) / std) ** 2 + logvar + math.log(2 * math.pi))
    log_p = -0.5 * (z ** 2 + math.log(2 * math.pi))
    return float(np.mean(np.sum(log_q - log_p, axis=tuple(range(1, z.ndim)))))
