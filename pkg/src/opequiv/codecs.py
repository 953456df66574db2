"""Random-coding constructions: i.i.d. channel codebooks decoded by unique joint
typicality, constant-composition source codebooks encoded by joint typicality,
and the Monte Carlo trial harnesses built on them.
"""
from __future__ import annotations

import enum
import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .core import (
    CommonRandomness,
    DistortionSpec,
    TypeVector,
    as_pmf,
    as_sequence,
    distortion_totals,
    is_typical,
    jointly_typical_mask,
    within_budget,
)
from .errors import Ambiguous, InvalidSequence, NoCover, NoMatch, ResourceLimit, SourceAtypical

DEFAULT_EPS = 0.02
DEFAULT_MAX_WORDS = 2**24
# words per independently seeded block of a source codebook
SOURCE_CHUNK = 4096
# rows scanned at once when matching against a codebook
SCAN_CHUNK = 1 << 16


def codebook_size(n, rate):
    """``ceil(2**(n*rate))``, treating ``n*rate`` within 1e-9 of an integer as exact."""
    if rate < 0:
        raise ValueError(f"rate must be non-negative, got {rate}")
    bits = n * rate
    if abs(bits - round(bits)) < 1e-9:
        return 2 ** int(round(bits))
    return math.ceil(2.0**bits)


def _symbol_dtype(size):
    return np.uint8 if size <= 255 else np.int32


def _check_cap(count, max_words):
    if count > max_words:
        raise ResourceLimit(f"codebook of {count} words exceeds cap of {max_words}")


@dataclass(frozen=True, eq=False)
class Codebook:
    """Indexed list of codewords (one per row of ``words``)."""

    words: np.ndarray
    rate: float
    n: int
    kind: str  # "channel", "source" or "structured"
    alphabet_size: int
    seed: CommonRandomness | None = None
    composition: TypeVector | None = None

    def __len__(self):
        return self.words.shape[0]

    def __getitem__(self, i):
        return self.words[i]

    def describe(self):
        return {
            "kind": self.kind,
            "n": self.n,
            "rate": self.rate,
            "size": len(self),
            "alphabet_size": self.alphabet_size,
            "seed": None if self.seed is None else self.seed.to_dict(),
            "composition": None if self.composition is None else self.composition.counts.tolist(),
        }


def quantize_type(q, n):
    """Largest-remainder rounding of ``n*q`` to integer counts summing to ``n``.

    Ties in the remainders go to the lowest symbol index.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    w = as_pmf(q).weights
    scaled = n * w
    counts = np.floor(scaled).astype(np.int64)
    remainders = np.round(scaled - counts, 12)
    short = n - int(counts.sum())
    order = sorted(range(w.size), key=lambda s: (-remainders[s], s))
    for s in order[:short]:
        counts[s] += 1
    return TypeVector(counts, n)


def sample_iid(rng, p, shape):
    w = as_pmf(p).weights
    return rng.choice(w.size, size=shape, p=w).astype(_symbol_dtype(w.size))


def gen_channel_codebook(n, rate, p, cr, max_words=DEFAULT_MAX_WORDS):
    p = as_pmf(p)
    count = codebook_size(n, rate)
    _check_cap(count, max_words)
    words = sample_iid(cr.rng(), p, (count, n))
    return Codebook(words, rate, n, "channel", p.size, seed=cr)


def _type_class_chunk(counts, count, rng):
    """``count`` independent uniform draws from the type class of ``counts``.

    Each row gets i.i.d. uniform keys; a position whose key has rank ``r``
    receives the symbol whose cumulative-count interval contains ``r``.
    """
    n = int(counts.sum())
    keys = rng.random((count, n))
    cuts = np.cumsum(counts)[:-1]
    cuts = cuts[cuts < n]
    words = np.zeros((count, n), dtype=_symbol_dtype(counts.size))
    if cuts.size:
        thresholds = np.partition(keys, cuts, axis=1)[:, cuts]
        for j in range(cuts.size):
            words += keys >= thresholds[:, j:j + 1]
    else:
        words[:] = int(np.flatnonzero(counts)[0])
    return words


def iter_source_chunks(n, composition, cr, count, chunk=SOURCE_CHUNK):
    """Yield ``(start, words)`` blocks of a constant-composition codebook.

    Block ``i`` is drawn from its own child stream, so consumers that stop
    early see exactly the prefix of the full codebook.
    """
    for i, start in enumerate(range(0, count, chunk)):
        size = min(chunk, count - start)
        yield start, _type_class_chunk(composition.counts, size, cr.child("chunk", i).rng())


def gen_source_codebook(n, rate, q, cr, max_words=DEFAULT_MAX_WORDS):
    q = as_pmf(q)
    count = codebook_size(n, rate)
    _check_cap(count, max_words)
    composition = quantize_type(q, n)
    words = np.concatenate([w for _, w in iter_source_chunks(n, composition, cr, count)])
    return Codebook(words, rate, n, "source", q.size, seed=cr, composition=composition)


def erasure_prefix_codebook(n, k, input_size=2):
    """Systematic code: every length-``k`` prefix over the input alphabet, then erasures.

    The reconstruction alphabet is ``input_size + 1`` with the last symbol the
    erasure.  There are ``input_size**k`` words.
    """
    if not 0 <= k <= n:
        raise ValueError("need 0 <= k <= n")
    prefixes = np.indices((input_size,) * k).reshape(k, -1).T if k else np.zeros((1, 0), int)
    tail = np.full((prefixes.shape[0], n - k), input_size)
    words = np.hstack([prefixes, tail]).astype(_symbol_dtype(input_size + 1))
    rate = k * math.log2(input_size) / n
    return Codebook(words, rate, n, "structured", input_size + 1)


def matching_indices(y, words, p, d, eps, stop_after=None):
    """Indices of codewords jointly typical with the received ``y``."""
    found = []
    for start in range(0, len(words), SCAN_CHUNK):
        block = words[start:start + SCAN_CHUNK]
        hits = np.flatnonzero(jointly_typical_mask(block, y, p, d, eps)) + start
        found.extend(hits.tolist())
        if stop_after is not None and len(found) >= stop_after:
            return found[:stop_after]
    return found


def channel_decode(y, cb, p, d, eps=DEFAULT_EPS):
    """Return the index of the unique codeword jointly typical with ``y``."""
    if cb.kind != "channel":
        raise ValueError("channel_decode needs a channel codebook")
    y = as_sequence(y, d.output_size)
    if y.size != cb.n:
        raise InvalidSequence(f"received length {y.size} != block length {cb.n}")
    matches = matching_indices(y, cb.words, p, d, eps, stop_after=2)
    if not matches:
        raise NoMatch("no jointly typical codeword")
    if len(matches) > 1:
        raise Ambiguous(matches)
    return matches[0]


def _first_cover(x, blocks, d):
    for start, words in blocks:
        hits = np.flatnonzero(within_budget(distortion_totals(x, words, d), x.size, d.budget))
        if hits.size:
            return start + int(hits[0])
    return None


def source_encode(x, cb, d, p, eps=DEFAULT_EPS):
    """Smallest index ``j`` with ``(x, words[j])`` jointly typical."""
    if cb.kind == "channel":
        raise ValueError("source_encode needs a source codebook")
    x = as_sequence(x, d.input_size)
    if not is_typical(x, p, eps):
        raise SourceAtypical("source sequence is not typical")
    blocks = ((s, cb.words[s:s + SCAN_CHUNK]) for s in range(0, len(cb), SCAN_CHUNK))
    j = _first_cover(x, blocks, d)
    if j is None:
        raise NoCover("no codeword within the distortion budget")
    return j


class Outcome(str, enum.Enum):
    SUCCESS = "Success"
    E1 = "E1_not_jointly_typical"
    E2 = "E2_ambiguous"
    F1 = "F1_source_atypical"
    F2 = "F2_no_cover"


@dataclass(frozen=True)
class TrialOutcome:
    tag: Outcome
    detail: int | None = None


@dataclass
class OutcomeHistogram:
    counts: Counter = field(default_factory=Counter)

    @classmethod
    def from_outcomes(cls, outcomes):
        return cls(Counter(o.tag for o in outcomes))

    @property
    def trials(self):
        return sum(self.counts.values())

    def fraction(self, tag):
        total = self.trials
        return self.counts[Outcome(tag)] / total if total else 0.0

    @property
    def success_fraction(self):
        return self.fraction(Outcome.SUCCESS)

    @property
    def error_fraction(self):
        return 1.0 - self.success_fraction if self.trials else 0.0

    def merge(self, other):
        return OutcomeHistogram(self.counts + other.counts)

    def rows(self):
        total = self.trials
        return [(tag.value, self.counts[tag], self.counts[tag] / total if total else 0.0)
                for tag in Outcome]

    def to_dict(self):
        return {tag.value: self.counts[tag] for tag in Outcome}

    def __eq__(self, other):
        return isinstance(other, OutcomeHistogram) and self.to_dict() == other.to_dict()


def classify_channel_trial(y, words, message, p, d, eps):
    if len(words) == 1:
        # nothing to decide: the only message is known to the decoder
        return TrialOutcome(Outcome.SUCCESS, 0)
    sent_ok = bool(jointly_typical_mask(words[message], y, p, d, eps)[0])
    matches = matching_indices(y, words, p, d, eps, stop_after=2)
    if not sent_ok:
        return TrialOutcome(Outcome.E1, matches[0] if len(matches) == 1 else None)
    if len(matches) > 1:
        return TrialOutcome(Outcome.E2)
    return TrialOutcome(Outcome.SUCCESS, message)


def run_channel_trials(channel, n, rate, p, d, eps, trials, cr, max_words=DEFAULT_MAX_WORDS,
                       observe=None):
    """Random-coding trials over ``channel``: fresh codebook and uniform message per trial.

    ``observe`` is called with each channel output when given.
    """
    p = as_pmf(p)
    _check_cap(codebook_size(n, rate), max_words)
    outcomes = []
    for t in range(trials):
        trial = cr.child("trial", t)
        cb = gen_channel_codebook(n, rate, p, trial.child("codebook"), max_words)
        message = int(trial.child("message").rng().integers(len(cb)))
        y = channel.transmit(cb.words[message], trial.child("channel").seed_sequence())
        if observe is not None:
            observe(y)
        outcomes.append(classify_channel_trial(y, cb.words, message, p, d, eps))
    return OutcomeHistogram.from_outcomes(outcomes)


def run_source_trials(p, d, eps, n, rate, q, trials, cr, max_words=DEFAULT_MAX_WORDS):
    """Random-coding trials for lossy compression of an i.i.d. ``p`` source."""
    p = as_pmf(p)
    count = codebook_size(n, rate)
    _check_cap(count, max_words)
    composition = quantize_type(q, n)
    outcomes = []
    for t in range(trials):
        trial = cr.child("trial", t)
        x = sample_iid(trial.child("source").rng(), p, n)
        if not is_typical(x, p, eps):
            outcomes.append(TrialOutcome(Outcome.F1))
            continue
        j = _first_cover(x, iter_source_chunks(n, composition, trial.child("codebook"), count), d)
        outcomes.append(TrialOutcome(Outcome.F2) if j is None else TrialOutcome(Outcome.SUCCESS, j))
    return OutcomeHistogram.from_outcomes(outcomes)


@dataclass(frozen=True)
class ConverseResult:
    error_fraction: float
    histogram: OutcomeHistogram
    source_words: int
    channel_words: int
    distinct_outputs: int

    @property
    def pigeonhole_bound(self):
        """Error floor implied by the source code's output cardinality."""
        return max(0.0, 1.0 - self.source_words / self.channel_words)

    def slack(self, sigmas=3.0):
        t = self.histogram.trials
        e = self.error_fraction
        return sigmas * math.sqrt(max(e * (1 - e), 0.0) / t) if t else 0.0


def run_converse_experiment(source_rate, rate, n, p, d, eps, trials, cr, q=None,
                            source_codebook=None, max_words=DEFAULT_MAX_WORDS):
    """Channel-code over a source code used as a channel.

    The source code is drawn at ``source_rate`` from ``cr`` (constant
    composition ``q``, uniform by default) unless ``source_codebook`` is given.
    """
    from .channels import source_code_channel

    if rate < 0:
        raise ValueError("rate must be non-negative")
    p = as_pmf(p)
    if source_codebook is None:
        q = as_pmf(q) if q is not None else as_pmf(np.full(d.output_size, 1.0 / d.output_size))
        source_codebook = gen_source_codebook(n, source_rate, q, cr.child("source-code"), max_words)
    channel = source_code_channel(source_codebook, p=p, d=d, eps=eps)
    seen = set()
    hist = run_channel_trials(channel, n, rate, p, d, eps, trials, cr.child("channel-code"),
                              max_words, observe=lambda y: seen.add(y.tobytes()))
    return ConverseResult(hist.error_fraction, hist, len(source_codebook),
                          codebook_size(n, rate), len(seen))


__all__ = [
    "Codebook", "ConverseResult", "DEFAULT_EPS", "DEFAULT_MAX_WORDS", "DistortionSpec",
    "Outcome", "OutcomeHistogram", "TrialOutcome", "channel_decode", "codebook_size",
    "erasure_prefix_codebook", "gen_channel_codebook", "gen_source_codebook",
    "iter_source_chunks", "quantize_type", "run_channel_trials", "run_converse_experiment",
    "run_source_trials", "sample_iid", "source_encode",
]
