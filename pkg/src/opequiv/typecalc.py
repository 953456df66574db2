"""Exact log-domain evaluation of the covering/collision probability F(n).

Both probabilities depend on the sequences only through their joint type, so
they are sums over joint types of (number of sequences) x (probability of
each), accumulated with log-sum-exp.  The enumeration is organised as a
product over the symbols of the fixed sequence: each fixed symbol's positions
are split into a composition over the other alphabet, and partial states that
share the same (running marginal, running distortion) are merged as they are
built.  The threshold search then optimises the reconstruction type over a
simplex grid and fits the decay exponent of F in ``n``.
"""
from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .codecs import quantize_type
from .core import (
    BUDGET_RTOL,
    TYPICAL_SLACK,
    Pmf,
    _eps,
    as_pmf,
    as_type_vector,
    counts_typical,
    jointly_typical_mask,
    log_multinomial,
    log_multinomial_rows,
    within_budget,
)
from .errors import DegenerateFit, InvalidGrid, ResourceLimit

LOG_ZERO = -math.inf
MAX_ALPHABET_PRODUCT = 9
MAX_BLOCK_LENGTH = 2000
MAX_STATES = 20_000_000
BRUTE_FORCE_LIMIT = 10**7


def compositions(total, parts):
    """All vectors of ``parts`` non-negative integers summing to ``total``."""
    if parts == 1:
        return np.array([[total]], dtype=np.int64)
    if parts == 2:
        k = np.arange(total + 1, dtype=np.int64)
        return np.stack([k, total - k], axis=1)
    rows = []
    for bars in itertools.combinations(range(total + parts - 1), parts - 1):
        edges = (-1,) + bars + (total + parts - 1,)
        rows.append([edges[i + 1] - edges[i] - 1 for i in range(parts)])
    return np.array(rows, dtype=np.int64)


def _check_limits(n, d, max_n, max_product):
    if n > max_n:
        raise ResourceLimit(f"block length {n} exceeds exact-enumeration cap {max_n}")
    if d.input_size * d.output_size > max_product:
        raise ResourceLimit(f"alphabet product {d.input_size * d.output_size} exceeds {max_product}")


def _merge(marg, dist, logw):
    """Combine states with identical (marginal, distortion) by log-sum-exp."""
    if logw.size == 0:
        return marg, dist, logw
    keys = np.column_stack([marg, np.round(dist, 9)])
    uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    top = np.full(uniq.shape[0], -np.inf)
    np.maximum.at(top, inverse, logw)
    acc = np.zeros(uniq.shape[0])
    np.add.at(acc, inverse, np.exp(logw - top[inverse]))
    return uniq[:, :-1].astype(np.int64), uniq[:, -1], top + np.log(acc)


def _enumerate(groups, width, budget_total, marginal_cap, max_states):
    """Fold per-group compositions into merged (marginal, distortion, log-weight) states.

    ``groups`` is a list of ``(compositions, log_weights, distortions)``; each
    composition row adds to a running marginal of length ``width``.  States
    whose distortion already exceeds ``budget_total`` or whose marginal
    exceeds ``marginal_cap`` are dropped, since both only grow.
    """
    marg = np.zeros((1, width), dtype=np.int64)
    dist = np.zeros(1)
    logw = np.zeros(1)
    limit = budget_total + BUDGET_RTOL * max(1.0, budget_total)
    for comps, lw, dd in groups:
        keep = np.isfinite(lw)
        comps, lw, dd = comps[keep], lw[keep], dd[keep]
        if marg.shape[0] * comps.shape[0] > max_states:
            raise ResourceLimit(f"{marg.shape[0] * comps.shape[0]} joint-type states exceed {max_states}")
        marg = (marg[:, None, :] + comps[None, :, :]).reshape(-1, width)
        dist = (dist[:, None] + dd[None, :]).ravel()
        logw = (logw[:, None] + lw[None, :]).ravel()
        ok = (dist <= limit) & np.all(marg <= marginal_cap, axis=1)
        marg, dist, logw = _merge(marg[ok], dist[ok], logw[ok])
    return marg, dist, logw


def exact_F_chan(n, qY_counts, p, d, eps, *, max_n=MAX_BLOCK_LENGTH,
                 max_product=MAX_ALPHABET_PRODUCT, max_states=MAX_STATES):
    """log Pr[(Z, y) jointly typical] for Z i.i.d. ``p`` and a fixed ``y`` of type ``qY_counts``."""
    p = as_pmf(p)
    qy = as_type_vector(qY_counts)
    if qy.n != n:
        raise ValueError(f"type has length {qy.n}, expected {n}")
    _check_limits(n, d, max_n, max_product)
    eps = _eps(eps)
    with np.errstate(divide="ignore"):
        logp = np.log(p.weights)
    groups = []
    for b, m_b in enumerate(qy.counts):
        comps = compositions(int(m_b), p.size)
        with np.errstate(invalid="ignore"):
            lw = log_multinomial_rows(comps) + np.where(comps > 0, comps * logp, 0.0).sum(axis=1)
        groups.append((comps, lw, comps @ d.matrix[:, b]))
    cap = np.floor(n * p.weights + n * eps + TYPICAL_SLACK)
    marg, dist, logw = _enumerate(groups, p.size, n * d.budget, cap, max_states)
    ok = counts_typical(marg, n, p, eps) & within_budget(dist, n, d.budget)
    return float(logsumexp(logw[ok])) if ok.any() else LOG_ZERO


def exact_F_src(n, x_counts, qY_counts, d, *, max_n=MAX_BLOCK_LENGTH,
                max_product=MAX_ALPHABET_PRODUCT, max_states=MAX_STATES):
    """log Pr[avg distortion(x, Y) <= D] for fixed ``x`` of type ``x_counts``,
    Y uniform over the type class of ``qY_counts``."""
    xc = as_type_vector(x_counts)
    qy = as_type_vector(qY_counts)
    if xc.n != n or qy.n != n:
        raise ValueError("types must both have length n")
    _check_limits(n, d, max_n, max_product)
    width = qy.size
    groups = []
    for a, n_a in enumerate(xc.counts):
        comps = compositions(int(n_a), width)
        groups.append((comps, log_multinomial_rows(comps), comps @ d.matrix[a, :]))
    marg, dist, logw = _enumerate(groups, width, n * d.budget, qy.counts, max_states)
    ok = np.all(marg == qy.counts, axis=1) & within_budget(dist, n, d.budget)
    if not ok.any():
        return LOG_ZERO
    return float(logsumexp(logw[ok]) - log_multinomial(qy))


def type_representative(counts):
    """The lexicographically smallest sequence of the given type."""
    t = as_type_vector(counts)
    return np.repeat(np.arange(t.size), t.counts)


def _all_sequences(size, n):
    total = size**n
    if total > BRUTE_FORCE_LIMIT:
        raise ResourceLimit(f"{total} sequences exceed the brute-force limit {BRUTE_FORCE_LIMIT}")
    return np.array(list(itertools.product(range(size), repeat=n)), dtype=np.int64).reshape(total, n)


def brute_force_F_chan(n, qY_counts, p, d, eps):
    """Direct summation of Pr[Z] over every Z in X^n jointly typical with a fixed y."""
    p = as_pmf(p)
    y = type_representative(qY_counts)
    if y.size != n:
        raise ValueError("type length does not match n")
    zs = _all_sequences(p.size, n)
    ok = jointly_typical_mask(zs, y, p, d, eps)
    if not ok.any():
        return LOG_ZERO
    with np.errstate(divide="ignore"):
        logp = np.log(p.weights)
    return float(logsumexp(logp[zs[ok]].sum(axis=1)))


def brute_force_F_src(n, x_counts, qY_counts, d):
    """Fraction of the type class of ``qY_counts`` within distortion D of a fixed x."""
    x = type_representative(x_counts)
    qy = as_type_vector(qY_counts)
    if x.size != n or qy.n != n:
        raise ValueError("type length does not match n")
    ys = _all_sequences(qy.size, n)
    in_class = np.all(np.stack([(ys == b).sum(axis=1) for b in range(qy.size)], axis=1) == qy.counts,
                      axis=1)
    ys = ys[in_class]
    hits = int(within_budget(d.matrix[x, ys].sum(axis=1), n, d.budget).sum())
    return math.log(hits) - math.log(ys.shape[0]) if hits else LOG_ZERO


def exponent_estimate(ns, log_F):
    """Decay exponent in bits/symbol from natural-log F values at increasing ``n``.

    Fits log2 F against n over the three largest block lengths by least
    squares and returns the magnitude of the slope.
    """
    ns = np.asarray(ns, dtype=float)
    vals = np.asarray(log_F, dtype=float)
    if ns.size < 3 or ns.size != vals.size:
        raise ValueError("need at least three (n, log F) pairs")
    order = np.argsort(ns)[-3:]
    ns, vals = ns[order], vals[order]
    if not np.all(np.isfinite(vals)):
        raise DegenerateFit("F vanishes at some block length")
    slope = np.polyfit(ns, vals / math.log(2), 1)[0]
    if slope > 1e-9:
        raise DegenerateFit(f"F grows with n (slope {slope:.3g} bits/symbol)")
    return float(max(0.0, -slope))


def simplex_grid(size, step):
    if not 0 < step <= 0.5:
        raise InvalidGrid(f"grid_step must lie in (0, 0.5], got {step}")
    m = int(math.floor(1.0 / step + 1e-9))
    return [Pmf(c / m) for c in compositions(m, size)]


@dataclass(frozen=True)
class SideResult:
    alpha: float
    qY: Pmf
    exponents: tuple  # (qY weights, exponent) for every grid point, inf where F vanishes


@dataclass(frozen=True)
class ThresholdEstimate:
    """Reconstruction type and decay exponent at which the covering/collision
    probability sets the rate threshold."""

    alpha: float
    qY_star: Pmf
    grid_step: float
    block_length: int
    ns: tuple
    channel: SideResult = field(repr=False)
    source: SideResult = field(repr=False)
    tolerance: float = 0.0

    @property
    def gap(self):
        return abs(self.channel.alpha - self.source.alpha)

    @property
    def sides_agree(self):
        return self.gap <= self.tolerance

    def to_dict(self):
        return {
            "alpha": self.alpha,
            "qY_star": self.qY_star.weights.tolist(),
            "grid_step": self.grid_step,
            "block_length": self.block_length,
            "ns": list(self.ns),
            "alpha_channel": self.channel.alpha,
            "qY_channel": self.channel.qY.weights.tolist(),
            "alpha_source": self.source.alpha,
            "qY_source": self.source.qY.weights.tolist(),
            "gap": self.gap,
            "tolerance": self.tolerance,
            "sides_agree": self.sides_agree,
        }


def _side_exponent(log_F_at, ns):
    vals = [log_F_at(n) for n in ns]
    try:
        return exponent_estimate(ns, vals)
    except DegenerateFit:
        # a vanishing F rules the candidate out; a non-decaying one has exponent 0
        return math.inf if not np.all(np.isfinite(vals)) else 0.0


def _block_lengths(n):
    if np.ndim(n) == 0:
        n = int(n)
        return tuple(sorted({max(1, n // 2), max(2, (3 * n) // 4), n}))
    return tuple(int(v) for v in n)


def optimize_qY(p, d, eps, n, grid_step, *, threads=1, candidates=None):
    """Sweep reconstruction types and return the threshold exponent.

    Channel side: worst case over q_Y, i.e. the largest collision probability
    F_chan.  Source side: best case, i.e. the largest covering probability
    F_src.  On both sides the largest F is the smallest decay exponent.
    ``n`` is either the largest block length (fit at n/2, 3n/4, n) or an
    explicit list of block lengths.
    """
    p = as_pmf(p)
    ns = _block_lengths(n)
    grid = simplex_grid(d.output_size, grid_step) if candidates is None else [as_pmf(q) for q in candidates]
    if not grid:
        raise InvalidGrid("no q_Y candidates")

    def chan(q):
        return _side_exponent(lambda m: exact_F_chan(m, quantize_type(q, m), p, d, eps), ns)

    def src(q):
        return _side_exponent(
            lambda m: exact_F_src(m, quantize_type(p, m), quantize_type(q, m), d), ns)

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        chan_exp = list(pool.map(chan, grid))
        src_exp = list(pool.map(src, grid))

    def side(exps):
        best = int(np.argmin(exps))
        return SideResult(float(exps[best]), grid[best],
                          tuple((q.weights.tolist(), e) for q, e in zip(grid, exps)))

    ch, so = side(chan_exp), side(src_exp)
    tol = 2 * grid_step * math.log2(d.output_size) + _eps(eps) * math.log2(p.size * d.output_size)
    return ThresholdEstimate(ch.alpha, ch.qY, grid_step, max(ns), ns, ch, so, tol)


def midpoint_rate(n, log_F):
    """Rate at which 2^{nR} F = ln 2, where the survival curve crosses ~1/2."""
    return (math.log(math.log(2.0)) - log_F) / (n * math.log(2.0))


def survival(n, rate, log_F):
    """(1 - F)^(2^{nR}) evaluated without forming 2^{nR} or 1 - F directly."""
    if log_F == LOG_ZERO:
        return 1.0
    if log_F >= 0:
        raise ValueError("F must be < 1 (log F < 0)")
    # log(-log(1 - F)); for tiny F this is log F to double precision
    log_hazard = log_F if log_F < -30 else math.log(-math.log1p(-math.exp(log_F)))
    exponent = n * rate * math.log(2.0) + log_hazard
    if exponent > 700:
        return 0.0
    return math.exp(-math.exp(exponent))


def phase_transition_curve(n, rates, log_F):
    return [(float(r), survival(n, r, log_F)) for r in rates]
