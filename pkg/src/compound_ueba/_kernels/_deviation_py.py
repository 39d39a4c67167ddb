"""Numpy implementation of the sliding-window deviation sweep."""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def deviation_series(m, omega, delta_cap, eps, weighting):
    m = np.ascontiguousarray(m, dtype=np.float64)
    S, N = m.shape
    h = omega - 1
    sigma = np.full((S, N), np.nan)
    weight = np.full((S, N), np.nan)
    if N <= h:
        return sigma, weight
    win = sliding_window_view(m, h, axis=1)[:, : N - h]
    mean = win.sum(axis=-1) / h
    std = np.sqrt(((win - mean[..., None]) ** 2).sum(axis=-1) / h)
    std = np.maximum(std, eps)
    sigma[:, h:] = np.clip((m[:, h:] - mean) / std, -delta_cap, delta_cap)
    weight[:, h:] = 1.0 / np.log2(np.maximum(std, 2.0)) if weighting else 1.0
    return sigma, weight
