"""Finite-alphabet primitives: pmfs, types, typicality, distortion, log-domain counting.

Sequences are plain 1-D integer numpy arrays; symbols are indices
``0..size-1``.  Batches of sequences (codebooks) are 2-D arrays with one
sequence per row, and the vectorised ``*_mask`` helpers below evaluate the
same predicates as their scalar counterparts row by row.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from .errors import InvalidPmf, InvalidSequence, LengthMismatch

PMF_TOL = 1e-12
# slack for the typicality comparison |count - n p| <= n eps
TYPICAL_SLACK = 1e-9
# relative slack for the distortion comparison sum d <= n D
BUDGET_RTOL = 1e-11


@dataclass(frozen=True)
class Alphabet:
    size: int

    def __post_init__(self):
        if int(self.size) != self.size or self.size < 1:
            raise ValueError(f"alphabet size must be a positive integer, got {self.size!r}")


@dataclass(frozen=True, eq=False)
class Pmf:
    """Probability vector over ``range(len(weights))``."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).ravel()
        if w.size == 0:
            raise InvalidPmf("empty pmf")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise InvalidPmf(f"pmf entries must be finite and non-negative: {w.tolist()}")
        if abs(math.fsum(w) - 1.0) > PMF_TOL:
            raise InvalidPmf(f"pmf sums to {math.fsum(w)!r}, not 1")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @classmethod
    def normalized(cls, weights):
        w = np.asarray(weights, dtype=float)
        return cls(w / w.sum())

    @classmethod
    def uniform(cls, size):
        return cls(np.full(size, 1.0 / size))

    @property
    def size(self):
        return self.weights.size

    @property
    def alphabet(self):
        return Alphabet(self.size)

    def __len__(self):
        return self.size

    def __getitem__(self, i):
        return self.weights[i]

    def __eq__(self, other):
        return isinstance(other, Pmf) and np.array_equal(self.weights, other.weights)

    def __repr__(self):
        return f"Pmf({self.weights.tolist()})"

    def to_dict(self):
        return {"weights": self.weights.tolist()}

    @classmethod
    def from_dict(cls, data):
        return cls(data["weights"])

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def as_pmf(p):
    return p if isinstance(p, Pmf) else Pmf(p)


@dataclass(frozen=True, eq=False)
class TypeVector:
    """Empirical type of a length-``n`` sequence, stored as integer counts."""

    counts: np.ndarray
    n: int = field(default=None)

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=np.int64).ravel()
        if np.any(c < 0):
            raise ValueError(f"negative counts: {c.tolist()}")
        n = int(c.sum()) if self.n is None else int(self.n)
        if n < 1 or int(c.sum()) != n:
            raise ValueError(f"counts {c.tolist()} do not sum to n={n}")
        c.setflags(write=False)
        object.__setattr__(self, "counts", c)
        object.__setattr__(self, "n", n)

    @property
    def size(self):
        return self.counts.size

    def as_pmf(self):
        return Pmf(self.counts / self.n)

    def __eq__(self, other):
        return (isinstance(other, TypeVector) and self.n == other.n
                and np.array_equal(self.counts, other.counts))

    def __hash__(self):
        return hash((self.n, tuple(self.counts.tolist())))

    def __repr__(self):
        return f"TypeVector({self.counts.tolist()}, n={self.n})"


def as_type_vector(t):
    return t if isinstance(t, TypeVector) else TypeVector(t)


@dataclass(frozen=True, eq=False)
class DistortionSpec:
    """Per-letter distortion matrix ``d[x, y]`` together with the budget ``D``."""

    matrix: np.ndarray
    budget: float = 0.0

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float)
        if m.ndim != 2 or m.size == 0:
            raise ValueError("distortion matrix must be a non-empty 2-D array")
        if not np.all(np.isfinite(m)) or np.any(m < 0):
            raise ValueError("distortion entries must be finite and non-negative")
        if not (self.budget >= 0 and math.isfinite(self.budget)):
            raise ValueError(f"budget must be a finite non-negative real, got {self.budget!r}")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "budget", float(self.budget))

    @classmethod
    def hamming(cls, size, budget=0.0):
        return cls(1.0 - np.eye(size), budget)

    @property
    def input_size(self):
        return self.matrix.shape[0]

    @property
    def output_size(self):
        return self.matrix.shape[1]

    def with_budget(self, budget):
        return DistortionSpec(self.matrix, budget)

    def to_dict(self):
        return {"matrix": self.matrix.tolist(), "budget": self.budget}

    @classmethod
    def from_dict(cls, data):
        return cls(data["matrix"], data["budget"])

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class TypicalityParams:
    epsilon: float

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon!r}")


def _eps(eps):
    return eps.epsilon if isinstance(eps, TypicalityParams) else TypicalityParams(float(eps)).epsilon


def _label_key(label):
    digest = hashlib.blake2b(repr(label).encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


@dataclass(frozen=True)
class CommonRandomness:
    """Seed shared by an encoder and its decoder.

    Randomness is derived deterministically from ``(seed, path)``; ``child``
    extends the path so that independent consumers never share a stream.
    """

    seed: int
    path: tuple = ()

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("master seed must fit in 64 unsigned bits")
        object.__setattr__(self, "seed", int(self.seed))
        object.__setattr__(self, "path", tuple(self.path))

    def child(self, *labels):
        return CommonRandomness(self.seed, self.path + labels)

    def seed_sequence(self):
        return np.random.SeedSequence(self.seed, spawn_key=tuple(_label_key(x) for x in self.path))

    def rng(self):
        return np.random.Generator(np.random.PCG64(self.seed_sequence()))

    def integer_seed(self):
        return int(self.seed_sequence().generate_state(2, np.uint32).view(np.uint64)[0])

    def to_dict(self):
        return {"seed": self.seed, "path": [str(x) for x in self.path]}


def as_sequence(x, size=None):
    arr = np.asarray(x)
    if arr.ndim != 1 or arr.size == 0:
        raise InvalidSequence("a sequence must be a non-empty 1-D array of symbols")
    if not np.issubdtype(arr.dtype, np.integer):
        if not np.all(np.mod(arr, 1) == 0):
            raise InvalidSequence("symbols must be integers")
        arr = arr.astype(np.int64)
    if arr.min() < 0 or (size is not None and arr.max() >= size):
        raise InvalidSequence(f"symbol out of range for alphabet of size {size}")
    return arr


def _size(a):
    return a.size if isinstance(a, (Alphabet, Pmf)) else int(a)


def empirical_type(x, alphabet):
    size = _size(alphabet)
    x = as_sequence(x, size)
    return TypeVector(np.bincount(x, minlength=size), x.size)


def counts_typical(counts, n, p, eps):
    """Typicality predicate on raw counts; ``counts`` may be 2-D (one row per sequence)."""
    w = as_pmf(p).weights
    counts = np.asarray(counts)
    dev_ok = np.abs(counts - n * w) <= n * _eps(eps) + TYPICAL_SLACK
    support_ok = (w > 0) | (counts == 0)
    return np.all(dev_ok & support_ok, axis=-1)


def is_typical(x, p, eps):
    p = as_pmf(p)
    t = empirical_type(x, p.size)
    return bool(counts_typical(t.counts, t.n, p, eps))


def within_budget(total, n, budget):
    """``total / n <= budget`` with a relative float slack; works on arrays."""
    limit = n * budget
    return np.asarray(total) <= limit + BUDGET_RTOL * max(1.0, limit)


def _check_pair(x, y, d):
    x = as_sequence(x, d.input_size)
    y = as_sequence(y, d.output_size)
    if x.size != y.size:
        raise LengthMismatch(f"lengths differ: {x.size} vs {y.size}")
    return x, y


def avg_distortion(x, y, d):
    x, y = _check_pair(x, y, d)
    return math.fsum(d.matrix[x, y]) / x.size


def jointly_typical(x, y, p, d, eps):
    x, y = _check_pair(x, y, d)
    if not is_typical(x, p, eps):
        return False
    return bool(within_budget(math.fsum(d.matrix[x, y]), x.size, d.budget))


def symbol_counts(words, size):
    """Per-row symbol counts of a 2-D array of sequences."""
    words = np.asarray(words)
    return np.stack([(words == s).sum(axis=1) for s in range(size)], axis=1)


def distortion_totals(xs, ys, d):
    """Row-wise total distortion; either argument may be a single 1-D sequence."""
    xs, ys = np.asarray(xs), np.asarray(ys)
    # one sequence against a batch: one-hot products beat fancy indexing
    if xs.ndim == 1 and ys.ndim == 2:
        cols = d.matrix[xs]
        return sum((ys == b) @ cols[:, b] for b in range(d.output_size))
    if ys.ndim == 1 and xs.ndim == 2:
        rows = d.matrix[:, ys]
        return sum((xs == a) @ rows[a] for a in range(d.input_size))
    return d.matrix[xs, ys].sum(axis=-1)


def typical_mask(words, p, eps):
    p = as_pmf(p)
    words = np.atleast_2d(words)
    return counts_typical(symbol_counts(words, p.size), words.shape[1], p, eps)


def jointly_typical_mask(xs, ys, p, d, eps):
    """Vectorised ``jointly_typical`` with rows of ``xs`` paired against ``ys``.

    ``xs`` holds channel-input-side sequences (checked for typicality) and
    ``ys`` the reconstruction side; either may be a single sequence that is
    broadcast against the other's rows.
    """
    xs = np.atleast_2d(xs)
    ys = np.atleast_2d(ys)
    n = max(xs.shape[1], ys.shape[1])
    if xs.shape[1] != ys.shape[1]:
        raise LengthMismatch(f"lengths differ: {xs.shape[1]} vs {ys.shape[1]}")
    return typical_mask(xs, p, eps) & within_budget(distortion_totals(xs, ys, d), n, d.budget)


def log_multinomial(counts):
    """Natural log of ``n! / prod(counts!)``."""
    c = np.asarray(counts.counts if isinstance(counts, TypeVector) else counts, dtype=float)
    return float(gammaln(c.sum() + 1.0) - gammaln(c + 1.0).sum())


def log_multinomial_rows(counts):
    c = np.asarray(counts, dtype=float)
    return gammaln(c.sum(axis=-1) + 1.0) - gammaln(c + 1.0).sum(axis=-1)


def entropy_bits(p):
    w = as_pmf(p).weights
    w = w[w > 0]
    return float(-(w * np.log2(w)).sum())


def binary_entropy(x):
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -x * np.log2(x) - (1 - x) * np.log2(1 - x)
    return np.where((x <= 0) | (x >= 1), 0.0, h)
