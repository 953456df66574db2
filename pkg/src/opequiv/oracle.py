"""Reference computations kept apart from the operational pipeline: the
Blahut-Arimoto rate-distortion function and an exhaustive finite-n search for
the smallest covering code.
"""
from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .core import as_pmf, entropy_bits
from .errors import NoConvergence, ResourceLimit


@dataclass(frozen=True)
class RdPoint:
    D: float
    R: float
    iterations: int
    gap: float
    beta: float = 0.0


def distortion_range(p, d):
    """(D_min, D_max) of the rate-distortion curve for source ``p``."""
    w = as_pmf(p).weights
    m = d.matrix
    return float(w @ m.min(axis=1)), float((w @ m).min())


def _ba_fixed_slope(logp, m, beta, log_q, tol, max_iter):
    """Alternating minimisation at Lagrange slope ``beta`` (nats); returns log q and stats."""
    for it in range(1, max_iter + 1):
        # log of the unnormalised test channel q(y) exp(-beta d(x,y))
        a = log_q[None, :] - beta * m
        log_norm = logsumexp(a, axis=1)
        log_c = logsumexp(logp[:, None] - beta * m - log_norm[:, None], axis=0)
        support = np.isfinite(log_q)
        # gap between upper and lower bounds on the Lagrangian, in bits
        gap = (log_c[support].max() - np.sum(np.exp(log_q[support]) * log_c[support])) / math.log(2)
        log_q = log_q + log_c
        log_q -= logsumexp(log_q)
        if gap < tol:
            return log_q, it, gap
    raise NoConvergence(f"Blahut-Arimoto did not converge in {max_iter} iterations (gap {gap:.3g})")


def _rate_distortion_at(logp, m, beta, log_q):
    a = log_q[None, :] - beta * m
    log_post = a - logsumexp(a, axis=1)[:, None]
    post = np.exp(log_post)
    p = np.exp(logp)
    D = float(np.sum(p[:, None] * post * m))
    with np.errstate(invalid="ignore"):
        terms = np.where(post > 0, post * (log_post - log_q[None, :]), 0.0)
    R = float(np.sum(p[:, None] * terms) / math.log(2))
    return D, max(R, 0.0)


def blahut_arimoto(p, d, D, tol=1e-9, max_iter=100_000, d_tol=1e-10, max_beta=1e4,
                   bisect_iter=2_000):
    """R(D) in bits/symbol for source ``p`` and distortion matrix ``d.matrix``.

    The Lagrange slope is bisected until the test channel's distortion
    matches ``D``; each slope is solved by alternating minimisation.
    """
    p = as_pmf(p)
    m = d.matrix
    if m.shape[0] != p.size:
        raise ValueError("distortion matrix rows must match the source alphabet")
    d_min, d_max = distortion_range(p, d)
    if D >= d_max:
        if D > d_max:
            warnings.warn(f"D={D} above D_max={d_max}; clamping", stacklevel=2)
        return RdPoint(float(D), 0.0, 0, 0.0, 0.0)
    if D < d_min:
        warnings.warn(f"D={D} below D_min={d_min}; clamping", stacklevel=2)
        D = d_min
    support = p.weights > 0
    logp = np.log(p.weights[support])
    m = m[support]
    total_iter = 0

    def solve(beta, log_q, cap=max_iter):
        nonlocal total_iter
        log_q, it, gap = _ba_fixed_slope(logp, m, beta, log_q, tol, cap)
        total_iter += it
        d_at, r_at = _rate_distortion_at(logp, m, beta, log_q)
        return log_q, gap, d_at, r_at

    # bracket: lo side has distortion above D, hi side at or below it
    lo, lo_pt = 0.0, (d_max, 0.0)
    hi = 1.0
    log_q, gap, d_hi, r_hi = solve(hi, np.full(m.shape[1], -math.log(m.shape[1])))
    while d_hi > D and hi < max_beta:
        lo, lo_pt = hi, (d_hi, r_hi)
        hi = min(2 * hi, max_beta)
        log_q, gap, d_hi, r_hi = solve(hi, log_q)
    for _ in range(200):
        if abs(d_hi - D) < d_tol or hi - lo < 1e-13 * hi or d_hi > D:
            break
        mid = 0.5 * (lo + hi)
        try:
            q_mid, g_mid, d_mid, r_mid = solve(mid, log_q, cap=bisect_iter)
        except NoConvergence:
            # stalled next to a straight segment of R(D): the chord is exact there
            break
        if d_mid > D:
            lo, lo_pt = mid, (d_mid, r_mid)
        else:
            hi, log_q, gap, d_hi, r_hi = mid, q_mid, g_mid, d_mid, r_mid
    if abs(d_hi - D) < 1e3 * d_tol or d_hi > D:
        # first-order correction for the residual mismatch (slope -beta nats)
        rate = r_hi + hi * (d_hi - D) / math.log(2)
    else:
        d_lo, r_lo = lo_pt
        rate = r_lo + (D - d_lo) * (r_hi - r_lo) / (d_hi - d_lo)
    return RdPoint(float(D), max(0.0, float(rate)), total_iter, float(gap), float(hi))


def rd_curve(p, d, Ds, **kwargs):
    return [blahut_arimoto(p, d, D, **kwargs) for D in Ds]


def hamming_rd_closed_form(p, D):
    """R(D) for Hamming distortion when the reconstruction alphabet equals the source's."""
    w = as_pmf(p).weights
    k = w.size
    d_max = 1.0 - w.max()
    if D >= d_max:
        return 0.0
    h = 0.0 if D <= 0 else -D * math.log2(D) - (1 - D) * math.log2(1 - D)
    return entropy_bits(w) - h - D * math.log2(k - 1) if k > 1 else 0.0


def brute_force_operational_rd(p, d, D, n, delta, k_max=4, max_subsets=5_000_000):
    """Smallest k such that some k words of Y^n cover mass >= 1 - delta of X^n at distortion D.

    Returns ``(k, log2(k)/n)``.
    """
    p = as_pmf(p)
    n_x, n_y = p.size**n, d.output_size**n
    if n_x > 4096 or n_y > 4096:
        raise ResourceLimit("alphabet too large for exhaustive covering search")
    xs = np.array(list(itertools.product(range(p.size), repeat=n)), dtype=np.int64).reshape(n_x, n)
    ys = np.array(list(itertools.product(range(d.output_size), repeat=n)), dtype=np.int64).reshape(n_y, n)
    mass = np.prod(p.weights[xs], axis=1)
    dist = d.matrix[xs[None, :, :], ys[:, None, :]].sum(axis=2)
    covers = dist <= n * D + 1e-11 * max(1.0, n * D)  # (word, source sequence)
    target = 1.0 - delta - 1e-12
    for k in range(1, min(k_max, n_y) + 1):
        if math.comb(n_y, k) > max_subsets:
            raise ResourceLimit(f"C({n_y},{k}) subsets exceed {max_subsets}")
        combos = itertools.combinations(range(n_y), k)
        while True:
            block = np.array(list(itertools.islice(combos, 50_000)), dtype=np.int64)
            if block.size == 0:
                break
            covered = covers[block].any(axis=1) @ mass
            if np.any(covered >= target):
                return k, math.log2(k) / n
    raise ResourceLimit(f"no covering code with at most {k_max} words")
