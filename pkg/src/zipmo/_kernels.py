"""Hot metric kernels: numba-jitted loops with a pure-numpy fallback.

The numpy path is selected when numba is unavailable or when the env flag
``ZIPMO_NO_NUMBA=1`` is set; both paths are exercised by the test suite and
compared by benchmarks/bench_metrics.py.
"""

from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit
    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    NUMBA_AVAILABLE = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn
        return wrap


def numba_enabled() -> bool:
    return NUMBA_AVAILABLE and os.environ.get("ZIPMO_NO_NUMBA", "") != "1"


# -- numpy fallbacks ---------------------------------------------------------

def mse_per_sample_numpy(gt: np.ndarray, batch: np.ndarray) -> np.ndarray:
    """gt [N,T,2], batch [K,N,T,2] -> per-sample MSE [K] (squared L2 over x,y)."""
    d = batch - gt[None]
    return np.mean(np.sum(d * d, axis=-1), axis=(1, 2))


def epe_per_sample_numpy(tracks: np.ndarray, targets: np.ndarray, t_stars: np.ndarray) -> np.ndarray:
    """tracks [K,P,T,2], targets [P,2], t_stars [P] -> per-sample mean EPE [K]."""
    P = targets.shape[0]
    at = tracks[:, np.arange(P), t_stars, :]
    return np.mean(np.sqrt(np.sum((at - targets[None]) ** 2, axis=-1)), axis=1)


def pck_counts_numpy(gt: np.ndarray, pred: np.ndarray, thresholds: np.ndarray) -> np.ndarray:
    """gt/pred [N,T,2] -> count of (point, time) pairs with error < delta, per delta."""
    err = np.sqrt(np.sum((pred - gt) ** 2, axis=-1))
    return np.array([(err < d).sum() for d in thresholds], dtype=np.int64)


# -- numba kernels ------------------------------------------------------------

@njit(cache=False)
def _mse_per_sample_nb(gt, batch):
    K, N, T, _ = batch.shape
    out = np.empty(K)
    for k in range(K):
        acc = 0.0
        for n in range(N):
            for t in range(T):
                dx = batch[k, n, t, 0] - gt[n, t, 0]
                dy = batch[k, n, t, 1] - gt[n, t, 1]
                acc += dx * dx + dy * dy
        out[k] = acc / (N * T)
    return out


@njit(cache=False)
def _epe_per_sample_nb(tracks, targets, t_stars):
    K, P = tracks.shape[0], targets.shape[0]
    out = np.empty(K)
    for k in range(K):
        acc = 0.0
        for p in range(P):
            t = t_stars[p]
            dx = tracks[k, p, t, 0] - targets[p, 0]
            dy = tracks[k, p, t, 1] - targets[p, 1]
            acc += np.sqrt(dx * dx + dy * dy)
        out[k] = acc / P
    return out


@njit(cache=False)
def _pck_counts_nb(gt, pred, thresholds):
    N, T, _ = gt.shape
    out = np.zeros(thresholds.shape[0], dtype=np.int64)
    for n in range(N):
        for t in range(T):
            dx = pred[n, t, 0] - gt[n, t, 0]
            dy = pred[n, t, 1] - gt[n, t, 1]
            e = np.sqrt(dx * dx + dy * dy)
            for j in range(thresholds.shape[0]):
                if e < thresholds[j]:
                    out[j] += 1
    return out


# -- dispatchers ---------------------------------------------------------------

def mse_per_sample(gt: np.ndarray, batch: np.ndarray) -> np.ndarray:
    gt = np.ascontiguousarray(gt, dtype=np.float64)
    batch = np.ascontiguousarray(batch, dtype=np.float64)
    if numba_enabled():
        return _mse_per_sample_nb(gt, batch)
    return mse_per_sample_numpy(gt, batch)


def epe_per_sample(tracks: np.ndarray, targets: np.ndarray, t_stars: np.ndarray) -> np.ndarray:
    tracks = np.ascontiguousarray(tracks, dtype=np.float64)
    targets = np.ascontiguousarray(targets, dtype=np.float64)
    t_stars = np.ascontiguousarray(t_stars, dtype=np.int64)
    if numba_enabled():
        return _epe_per_sample_nb(tracks, targets, t_stars)
    return epe_per_sample_numpy(tracks, targets, t_stars)


def pck_counts(gt: np.ndarray, pred: np.ndarray, thresholds: np.ndarray) -> np.ndarray:
    gt = np.ascontiguousarray(gt, dtype=np.float64)
    pred = np.ascontiguousarray(pred, dtype=np.float64)
    thresholds = np.ascontiguousarray(thresholds, dtype=np.float64)
    if numba_enabled():
        return _pck_counts_nb(gt, pred, thresholds)
    return pck_counts_numpy(gt, pred, thresholds)
