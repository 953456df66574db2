"""Block channels, finite channel sets and the excess-distortion membership estimator."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .codecs import DEFAULT_EPS, sample_iid, source_encode
from .core import CommonRandomness, PMF_TOL, as_pmf, as_sequence, distortion_totals, within_budget
from .errors import EncodeError, InvalidChannel, InvalidSequence

Z95 = 1.959963984540054


def _rng(seed):
    if isinstance(seed, CommonRandomness):
        return seed.rng()
    return np.random.default_rng(seed)


class GeneralChannel:
    """Length-preserving stochastic map from input sequences to output sequences.

    Subclasses implement ``_transmit(x, rng)``; the block length is taken
    from the input, so one object covers every ``n``.
    """

    input_size: int
    output_size: int

    def transmit(self, x, seed=None):
        x = as_sequence(x, self.input_size)
        y = np.asarray(self._transmit(x, _rng(seed)))
        if y.shape != x.shape or y.min() < 0 or y.max() >= self.output_size:
            raise InvalidSequence(f"{self!r} produced an invalid output")
        return y

    __call__ = transmit

    def _transmit(self, x, rng):
        raise NotImplementedError

    def describe(self):
        return {"kind": type(self).__name__, "input_size": self.input_size,
                "output_size": self.output_size}

    def __repr__(self):
        return f"{type(self).__name__}({self.input_size}->{self.output_size})"


def _check_transition(w):
    w = np.array(w, dtype=float)
    if w.ndim != 2 or w.size == 0:
        raise InvalidChannel("transition matrix must be 2-D")
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise InvalidChannel("transition probabilities must be finite and non-negative")
    if np.any(np.abs(w.sum(axis=1) - 1.0) > PMF_TOL):
        raise InvalidChannel("every row of the transition matrix must sum to 1")
    w.setflags(write=False)
    return w


def dmc_transmit(x, w, seed=None):
    """Send ``x`` through the memoryless channel with transition rows ``w``."""
    w = _check_transition(w)
    x = as_sequence(x, w.shape[0])
    rng = _rng(seed)
    cum = np.cumsum(w[x], axis=1)
    u = rng.random(x.size)
    y = (u[:, None] >= cum).sum(axis=1)
    return np.minimum(y, w.shape[1] - 1)


class DMC(GeneralChannel):
    def __init__(self, matrix, name=None):
        self.matrix = _check_transition(matrix)
        self.input_size, self.output_size = self.matrix.shape
        self.name = name

    def _transmit(self, x, rng):
        return dmc_transmit(x, self.matrix, rng)

    def describe(self):
        return {**super().describe(), "matrix": self.matrix.tolist(), "name": self.name}


def bsc(flip):
    return DMC([[1 - flip, flip], [flip, 1 - flip]], name=f"bsc({flip})")


class IdentityChannel(GeneralChannel):
    def __init__(self, size):
        self.input_size = self.output_size = int(size)

    def _transmit(self, x, rng):
        return x.copy()


class ConstantChannel(GeneralChannel):
    def __init__(self, symbol, input_size, output_size):
        if not 0 <= symbol < output_size:
            raise InvalidChannel("constant symbol outside the output alphabet")
        self.symbol = int(symbol)
        self.input_size, self.output_size = int(input_size), int(output_size)

    def _transmit(self, x, rng):
        return np.full(x.shape, self.symbol)

    def describe(self):
        return {**super().describe(), "symbol": self.symbol}


class BudgetAdversaryChannel(GeneralChannel):
    """Deterministic adversary that spends a per-block distortion budget.

    Scanning positions left to right, each symbol is replaced by the output
    letter of largest distortion that still fits in ``n * fraction``; when
    nothing fits the cheapest letter is used.
    """

    def __init__(self, d, fraction):
        self.d = d
        self.fraction = float(fraction)
        self.input_size, self.output_size = d.matrix.shape

    def _transmit(self, x, rng):
        m = self.d.matrix
        remaining = x.size * self.fraction
        y = np.empty_like(x)
        for i, s in enumerate(x):
            row = m[s]
            cheapest = int(np.argmin(row))
            fits = np.flatnonzero(row - row[cheapest] <= remaining + 1e-12)
            choice = int(fits[np.argmax(row[fits])])
            remaining -= row[choice] - row[cheapest]
            y[i] = choice
        return y

    def describe(self):
        return {**super().describe(), "fraction": self.fraction}


class SourceCodeChannel(GeneralChannel):
    """A source code viewed as a channel: ``x`` goes to its reconstruction codeword.

    Encoder failures emit codeword 0, so the output never leaves the codebook.
    """

    def __init__(self, codebook, encode_rule):
        self.codebook = codebook
        self.encode_rule = encode_rule
        self.output_size = codebook.alphabet_size

    def index(self, x):
        try:
            return int(self.encode_rule(x))
        except EncodeError:
            return 0

    def _transmit(self, x, rng):
        if x.size != self.codebook.n:
            raise InvalidSequence(f"source code has block length {self.codebook.n}, got {x.size}")
        return self.codebook.words[self.index(x)]

    def describe(self):
        return {**super().describe(), "codebook": self.codebook.describe()}


def source_code_channel(codebook, encode_rule=None, *, p=None, d=None, eps=DEFAULT_EPS):
    """Wrap ``codebook`` as a channel.

    Without an explicit ``encode_rule`` the joint-typicality source encoder
    for ``(p, d, eps)`` is used.
    """
    if encode_rule is None:
        if p is None or d is None:
            raise ValueError("need either encode_rule or (p, d)")
        p = as_pmf(p)

        def encode_rule(x):
            return source_encode(x, codebook, d, p, eps)

        input_size = p.size
    else:
        input_size = d.input_size if d is not None else int(np.max(codebook.words)) + 1
    channel = SourceCodeChannel(codebook, encode_rule)
    channel.input_size = input_size
    return channel


class ChannelSet:
    """Finite, non-empty list of channels sharing input and output alphabets."""

    def __init__(self, members, labels=None):
        self.members = list(members)
        if not self.members:
            raise InvalidChannel("a channel set needs at least one member")
        sizes = {(c.input_size, c.output_size) for c in self.members}
        if len(sizes) != 1:
            raise InvalidChannel(f"members disagree on alphabets: {sorted(sizes)}")
        self.labels = list(labels) if labels is not None else [
            f"{i}:{type(c).__name__}" for i, c in enumerate(self.members)]
        if len(self.labels) != len(self.members):
            raise ValueError("one label per member")
        (self.input_size, self.output_size), = sizes

    def __iter__(self):
        return iter(zip(self.labels, self.members))

    def __len__(self):
        return len(self.members)

    def describe(self):
        return [{"label": lab, **c.describe()} for lab, c in self]


@dataclass(frozen=True)
class MembershipRow:
    n: int
    p_hat: float
    ci: float
    trials: int


@dataclass(frozen=True)
class MembershipReport:
    rows: tuple

    @property
    def ns(self):
        return [r.n for r in self.rows]

    @property
    def p_hats(self):
        return [r.p_hat for r in self.rows]

    def is_decreasing(self, strict=False):
        p = self.p_hats
        if strict:
            return all(a > b for a, b in zip(p, p[1:]))
        return all(a >= b for a, b in zip(p, p[1:]))

    def passes(self, threshold, strict=False):
        """Trend-plus-threshold surrogate for the excess-distortion probability vanishing."""
        return self.is_decreasing(strict) and self.rows[-1].p_hat <= threshold

    def csv_rows(self):
        return [(r.n, r.p_hat, r.ci, r.trials) for r in self.rows]

    def to_dict(self):
        return {"rows": [r.__dict__ for r in self.rows]}


def binomial_half_width(p_hat, trials, z=Z95):
    return z * math.sqrt(p_hat * (1.0 - p_hat) / trials)


def estimate_membership(channel, p, d, ns, trials, seed):
    """Monte Carlo estimate of Pr(avg distortion > D) for i.i.d. ``p`` inputs, per block length."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    p = as_pmf(p)
    cr = seed if isinstance(seed, CommonRandomness) else CommonRandomness(seed)
    rows = []
    for n in ns:
        excess = 0
        for t in range(trials):
            trial = cr.child("membership", n, t)
            x = sample_iid(trial.child("source").rng(), p, n)
            y = channel.transmit(x, trial.child("channel").seed_sequence())
            if not within_budget(distortion_totals(x, y, d), n, d.budget):
                excess += 1
        p_hat = excess / trials
        rows.append(MembershipRow(int(n), p_hat, binomial_half_width(p_hat, trials), trials))
    return MembershipReport(tuple(rows))
