"""Estimator-style wrappers (fit / transform / predict) around the library.

Source distributions are learned from observed symbols, so the same objects
plug into scikit-learn pipelines and parameter searches.  Everything heavy
still lives in the functional modules.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .codecs import (
    DEFAULT_EPS,
    DEFAULT_MAX_WORDS,
    channel_decode,
    gen_channel_codebook,
    gen_source_codebook,
    source_encode,
)
from .core import CommonRandomness, DistortionSpec, Pmf, distortion_totals, within_budget
from .errors import DecodeError, EncodeError
from .oracle import blahut_arimoto
from .typecalc import optimize_qY


def _distortion(matrix, budget=0.0):
    if isinstance(matrix, DistortionSpec):
        return matrix.with_budget(budget)
    return DistortionSpec(matrix, budget)


def _symbols(X, size=None):
    X = check_array(X, ensure_2d=False, dtype=None, allow_nd=False)
    X = np.asarray(X).ravel()
    if X.size == 0:
        raise ValueError("no symbols")
    if not np.issubdtype(X.dtype, np.integer):
        if not np.all(np.mod(X, 1) == 0):
            raise ValueError("symbols must be integers")
        X = X.astype(np.int64)
    if X.min() < 0 or (size is not None and X.max() >= size):
        raise ValueError(f"symbol out of range for alphabet of size {size}")
    return X


def _blocks(X, n=None):
    X = check_array(X, dtype=None)
    if not np.issubdtype(X.dtype, np.integer):
        X = X.astype(np.int64)
    if n is not None and X.shape[1] != n:
        raise ValueError(f"expected blocks of length {n}, got {X.shape[1]}")
    return X


def empirical_pmf(X, size):
    """Symbol frequencies of ``X`` (any shape) as a Pmf over ``size`` symbols."""
    counts = np.bincount(_symbols(X, size), minlength=size)
    return Pmf.normalized(counts)


class RateDistortionEstimator(BaseEstimator):
    """R(D) of the empirical source distribution.

    ``fit`` learns the symbol distribution; ``predict`` maps distortion
    levels to rates in bits/symbol.
    """

    def __init__(self, distortion=None, tol=1e-9):
        self.distortion = distortion
        self.tol = tol

    def fit(self, X, y=None):
        d = _distortion(self.distortion)
        self.distortion_ = d
        self.pmf_ = empirical_pmf(X, d.input_size)
        return self

    def predict(self, D):
        check_is_fitted(self, "pmf_")
        D = np.atleast_1d(np.asarray(D, dtype=float))
        return np.array([blahut_arimoto(self.pmf_, self.distortion_, v, tol=self.tol).R for v in D])


class ThresholdEstimator(BaseEstimator):
    """Operational threshold exponent and optimal reconstruction type from exact type counts."""

    def __init__(self, distortion=None, D=0.0, eps=DEFAULT_EPS, n=200, grid_step=0.05, threads=1):
        self.distortion = distortion
        self.D = D
        self.eps = eps
        self.n = n
        self.grid_step = grid_step
        self.threads = threads

    def fit(self, X, y=None):
        d = _distortion(self.distortion, self.D)
        self.pmf_ = empirical_pmf(X, d.input_size)
        est = optimize_qY(self.pmf_, d, self.eps, self.n, self.grid_step, threads=self.threads)
        self.estimate_ = est
        self.alpha_ = est.alpha
        self.qY_star_ = est.qY_star
        return self


class SourceCodec(TransformerMixin, BaseEstimator):
    """Random constant-composition source code for blocks of length ``n``.

    ``transform`` maps source blocks to codeword indices (-1 where the
    encoder fails); ``inverse_transform`` maps indices to reconstructions,
    with failures reconstructed by codeword 0.
    """

    def __init__(self, distortion=None, D=0.0, eps=DEFAULT_EPS, rate=0.5, n=20, qY=None,
                 seed=0, max_words=DEFAULT_MAX_WORDS):
        self.distortion = distortion
        self.D = D
        self.eps = eps
        self.rate = rate
        self.n = n
        self.qY = qY
        self.seed = seed
        self.max_words = max_words

    def fit(self, X, y=None):
        d = _distortion(self.distortion, self.D)
        self.distortion_ = d
        self.pmf_ = empirical_pmf(X, d.input_size)
        q = Pmf.uniform(d.output_size) if self.qY is None else Pmf(self.qY)
        self.codebook_ = gen_source_codebook(self.n, self.rate, q, CommonRandomness(self.seed),
                                             self.max_words)
        return self

    def transform(self, X):
        check_is_fitted(self, "codebook_")
        X = _blocks(X, self.n)
        out = np.empty(X.shape[0], dtype=np.int64)
        for i, x in enumerate(X):
            try:
                out[i] = source_encode(x, self.codebook_, self.distortion_, self.pmf_, self.eps)
            except EncodeError:
                out[i] = -1
        return out

    def inverse_transform(self, indices):
        check_is_fitted(self, "codebook_")
        idx = np.asarray(indices, dtype=np.int64)
        return self.codebook_.words[np.where(idx < 0, 0, idx)]

    def score(self, X, y=None):
        """Fraction of blocks reproduced within the distortion budget."""
        X = _blocks(X, self.n)
        Y = self.inverse_transform(self.transform(X))
        totals = distortion_totals(X, Y, self.distortion_)
        return float(np.mean(within_budget(totals, self.n, self.distortion_.budget)))


class ChannelCodec(BaseEstimator):
    """Random i.i.d. channel code with a unique-joint-typicality decoder.

    ``fit`` takes example channel inputs to learn the codeword distribution
    (or uses ``pX`` when given).  ``transform`` maps messages to codewords
    and ``predict`` decodes received blocks, returning -1 on failure.
    """

    def __init__(self, distortion=None, D=0.0, eps=DEFAULT_EPS, rate=0.2, n=20, pX=None,
                 seed=0, max_words=DEFAULT_MAX_WORDS):
        self.distortion = distortion
        self.D = D
        self.eps = eps
        self.rate = rate
        self.n = n
        self.pX = pX
        self.seed = seed
        self.max_words = max_words

    def fit(self, X=None, y=None):
        d = _distortion(self.distortion, self.D)
        self.distortion_ = d
        if self.pX is not None:
            self.pmf_ = Pmf(self.pX)
        elif X is not None:
            self.pmf_ = empirical_pmf(X, d.input_size)
        else:
            raise ValueError("need pX or example inputs")
        self.codebook_ = gen_channel_codebook(self.n, self.rate, self.pmf_, CommonRandomness(self.seed),
                                              self.max_words)
        self.n_messages_ = len(self.codebook_)
        return self

    def transform(self, messages):
        check_is_fitted(self, "codebook_")
        m = np.asarray(messages, dtype=np.int64)
        if np.any((m < 0) | (m >= self.n_messages_)):
            raise ValueError(f"messages must lie in [0, {self.n_messages_})")
        return self.codebook_.words[m]

    def predict(self, Y):
        check_is_fitted(self, "codebook_")
        Y = _blocks(Y, self.n)
        out = np.empty(Y.shape[0], dtype=np.int64)
        for i, y in enumerate(Y):
            try:
                out[i] = channel_decode(y, self.codebook_, self.pmf_, self.distortion_, self.eps)
            except DecodeError:
                out[i] = -1
        return out

    def score(self, Y, messages):
        """Fraction of received blocks decoded to the right message."""
        return float(np.mean(self.predict(Y) == np.asarray(messages)))
