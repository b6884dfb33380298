"""Reference values computed independently of the package: textbook
formulas, scipy distributions and closed-form integrals."""

import math

import numpy as np
from scipy import stats


def normal_pdf(x, var):
    return math.exp(-x * x / (2 * var)) / math.sqrt(2 * math.pi * var)


def bridge_density_ratio(t, b, x, T=1.0):
    """p(B_T = x | B_t = b) / p(B_T = x), both Gaussian densities."""
    return normal_pdf(x - b, T - t) / normal_pdf(x, T)


def poisson_bridge_ratio(t, k, N, lam):
    """P(N_1 = k | N_t = N) / P(N_1 = k) using independent increments."""
    if k < N:
        return 0.0
    return stats.poisson.pmf(k - N, lam * (1 - t)) / stats.poisson.pmf(k, lam)


def nth_arrival_tail(t, x, N_t, n, lam):
    """P(T_n > x | N_t) for x > t when fewer than n arrivals happened by t."""
    return stats.poisson.cdf(n - N_t - 1, lam * (x - t))


def first_passage_cdf(t, level=1.0):
    """P(first passage of standard BM to -level <= t) as a Levy law."""
    return stats.levy.cdf(t, scale=level * level)


def ou_score(a, v, y, x):
    """d/dy log of the OU transition density over lag v, differentiated by hand."""
    m = math.exp(-a * v)
    var = (1 - math.exp(-2 * a * v)) / (2 * a)
    return m * (x - y * m) / var


def innovation_signal_cov(levels, breaks, T, s):
    """E[W~_t V_s] for t >= s with a piecewise-constant signal volatility.

    ``s - int_0^s (T + tail(s) - u)/(T + tail(u) - u) du``; the denominator is
    linear on each segment, so each piece integrates to a log.
    """
    edges = [0.0, *breaks, T]
    sq = [x * x for x in levels]

    def tail(u):
        tot = 0.0
        for (a, b), q in zip(zip(edges, edges[1:]), sq):
            lo = max(a, u)
            if b > lo:
                tot += q * (b - lo)
        return tot

    A = T + tail(s)
    total = 0.0
    for (a, b), q in zip(zip(edges, edges[1:]), sq):
        hi = min(b, s)
        if hi <= a:
            break
        kappa = 1 + q
        d0 = T + tail(a) - a
        d1 = d0 - kappa * (hi - a)
        c = A - a - d0 / kappa
        total += (hi - a) / kappa - c / kappa * math.log(d1 / d0)
    return s - total


def first_passage_prob_with_drift(lb, mu, sigma, T):
    """P(min_{t<=T} (mu t + sigma W_t) <= lb), lb < 0 (reflection principle with drift)."""
    s = sigma * math.sqrt(T)
    return stats.norm.cdf((lb - mu * T) / s) + math.exp(2 * mu * lb / sigma**2) * stats.norm.cdf((lb + mu * T) / s)


def brute_cumulative(times_per_path, points, weights_per_path=None):
    out = np.zeros((len(times_per_path), len(points)))
    for p, ts in enumerate(times_per_path):
        w = np.ones(len(ts)) if weights_per_path is None else weights_per_path[p]
        for j, t in enumerate(points):
            out[p, j] = sum(wi for ti, wi in zip(ts, w) if ti <= t)
    return out


# frozen reference values
TWO_PHI_MINUS_ONE = 0.31731050786291415  # 2 Phi(-1)
BB_Q_HALF = 0.8577638849607068  # bridge density ratio at t=1/2, b=0, x=1
# innovation-signal covariance for sigma = (1, 1/2) with a break at 1/2 on [0, 1]
PEOF_COV = {0.25: 0.021577, 0.5: 0.100701, 0.75: 0.145904}
