"""Mixing diagnostics: autocorrelation and cross-chain variance ratio.

These annotate experiment reports; they never gate a run.  Slow decay or
a variance ratio far from 1 means the burn-in or thinning should grow.
"""

from __future__ import annotations

import numpy as np


def autocorrelation(series, max_lag: int) -> np.ndarray:
    """Normalized autocorrelation of a scalar series at lags 0..max_lag."""
    x = np.asarray(series, dtype=np.float64)
    if x.ndim != 1 or x.size < 2:
        raise ValueError("need a 1-d series with at least 2 points")
    x = x - x.mean()
    denom = float(x @ x)
    if denom == 0.0:
        return np.concatenate(([1.0], np.zeros(min(max_lag, x.size - 1))))
    max_lag = min(max_lag, x.size - 1)
    acf = np.empty(max_lag + 1)
    for k in range(max_lag + 1):
        acf[k] = float(x[: x.size - k] @ x[k:]) / denom
    return acf


def integrated_autocorrelation_time(series, window: int = 200) -> float:
    """1 + 2 * sum of autocorrelations up to the first sign change
    (capped at ``window``); the factor by which the effective sample size
    shrinks."""
    acf = autocorrelation(series, window)
    tau = 1.0
    for k in range(1, acf.size):
        if acf[k] <= 0.0:
            break
        tau += 2.0 * acf[k]
    return tau


def cross_chain_ratio(chains) -> float:
    """Gelman-Rubin style potential scale reduction across chains.

    ``chains`` is (num_chains, num_samples); values near 1 indicate the
    chains have forgotten their starts.
    """
    x = np.asarray(chains, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2 or x.shape[1] < 2:
        raise ValueError("need at least 2 chains with at least 2 samples")
    l_chains, t_samples = x.shape
    chain_means = x.mean(axis=1)
    within = x.var(axis=1, ddof=1).mean()
    between = t_samples * chain_means.var(ddof=1)
    if within == 0.0:
        return 1.0 if between == 0.0 else np.inf
    var_est = (1.0 - 1.0 / t_samples) * within + between / t_samples
    return float(np.sqrt(var_est / within))
