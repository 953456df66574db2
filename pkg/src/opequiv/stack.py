"""Layered encoder/decoder stacks around a channel.

A stack lists its layers outermost first: on the way in, ``layers[0]``
encodes the user's data (a source sequence or a message index) and each
following layer encodes the previous layer's output; the channel sits at the
bottom and decoders run in the reverse order.  The composite of layers and
channel is itself a channel, which is what makes the reductions stack.
"""
from __future__ import annotations

import copy
import warnings
from dataclasses import dataclass, field

import numpy as np

from .channels import ChannelSet, GeneralChannel, binomial_half_width, estimate_membership
from .codecs import (
    DEFAULT_EPS,
    DEFAULT_MAX_WORDS,
    channel_decode,
    codebook_size,
    gen_channel_codebook,
    gen_source_codebook,
    sample_iid,
    source_encode,
)
from .core import CommonRandomness, as_pmf, as_sequence, distortion_totals, within_budget
from .errors import CompositionError, DecodeError, EncodeError

SEQ = "seq"
MSG = "msg"


class Layer:
    """One encoder/decoder pair; codebooks are derived from ``cr`` per block length.

    Domains are ``(SEQ, alphabet_size)`` or ``(MSG, rate)``.
    """

    label = "layer"

    def __init__(self, cr, label=None):
        self.cr = cr
        self.label = label or self.label
        self._books = {}

    def codebook(self, n):
        if n not in self._books:
            self._books[n] = self._build(n)
        return self._books[n]

    def _build(self, n):
        raise NotImplementedError

    def redrawn(self, *labels):
        """Copy of this layer whose codebooks come from ``cr.child(*labels)``."""
        other = copy.copy(self)
        other.cr = None if self.cr is None else self.cr.child(*labels)
        other._books = {}
        return other

    def describe(self):
        return {"label": self.label, "kind": type(self).__name__,
                "seed": None if self.cr is None else self.cr.to_dict()}


class SourceCodecLayer(Layer):
    """Lossy compression of an i.i.d. ``p`` source into a codeword index."""

    label = "source"

    def __init__(self, p, d, eps, rate, cr, q=None, label=None, max_words=DEFAULT_MAX_WORDS):
        super().__init__(cr, label)
        self.p = as_pmf(p)
        self.d = d
        self.eps = eps
        self.rate = rate
        self.q = as_pmf(q) if q is not None else as_pmf(np.full(d.output_size, 1.0 / d.output_size))
        self.max_words = max_words
        self.enc_in = (SEQ, self.p.size)
        self.enc_out = self.dec_in = (MSG, rate)
        self.dec_out = (SEQ, d.output_size)

    def _build(self, n):
        return gen_source_codebook(n, self.rate, self.q, self.cr.child(self.label, n), self.max_words)

    def encode(self, x, n):
        try:
            return source_encode(x, self.codebook(n), self.d, self.p, self.eps)
        except EncodeError:
            return 0

    def decode(self, index, n):
        cb = self.codebook(n)
        return cb.words[int(index) % len(cb)]

    def as_channel(self):
        return SourceCodecChannel(self)

    def describe(self):
        return {**super().describe(), "rate": self.rate, "eps": self.eps,
                "pX": self.p.weights.tolist(), "qY": self.q.weights.tolist(),
                "distortion": self.d.to_dict()}


class SourceCodecChannel(GeneralChannel):
    """A source codec layer seen as a channel at every block length: x to its reconstruction."""

    def __init__(self, layer):
        self.layer = layer
        self.input_size = layer.p.size
        self.output_size = layer.d.output_size

    def _transmit(self, x, rng):
        n = x.size
        return self.layer.decode(self.layer.encode(x, n), n)

    def describe(self):
        return {"kind": "SourceCodecChannel", "layer": self.layer.describe()}


class ChannelCodecLayer(Layer):
    """Message index to i.i.d. ``p`` codeword, decoded by unique joint typicality.

    A decoding failure is reported as message 0.
    """

    label = "channel"

    def __init__(self, p, d, eps, rate, cr, label=None, max_words=DEFAULT_MAX_WORDS):
        super().__init__(cr, label)
        self.p = as_pmf(p)
        self.d = d
        self.eps = eps
        self.rate = rate
        self.max_words = max_words
        self.enc_in = self.dec_out = (MSG, rate)
        self.enc_out = (SEQ, self.p.size)
        self.dec_in = (SEQ, d.output_size)

    def _build(self, n):
        return gen_channel_codebook(n, self.rate, self.p, self.cr.child(self.label, n), self.max_words)

    def messages(self, n):
        return codebook_size(n, self.rate)

    def encode(self, m, n):
        cb = self.codebook(n)
        return cb.words[int(m) % len(cb)]

    def decode(self, y, n):
        try:
            return channel_decode(y, self.codebook(n), self.p, self.d, self.eps)
        except DecodeError:
            return 0

    def describe(self):
        return {**super().describe(), "rate": self.rate, "eps": self.eps,
                "pX": self.p.weights.tolist(), "distortion": self.d.to_dict()}


class IdentityLayer(Layer):
    label = "identity"

    def __init__(self, domain, label=None):
        super().__init__(None, label)
        self.enc_in = self.enc_out = self.dec_in = self.dec_out = domain

    def encode(self, v, n):
        return v

    def decode(self, v, n):
        return v


def _fits(outer, inner):
    """Whether values of domain ``outer`` can be handed to a consumer of ``inner``."""
    if outer[0] != inner[0]:
        return False
    if outer[0] == SEQ:
        return outer[1] == inner[1]
    return True


def _in_domain(channel):
    return getattr(channel, "domain", (SEQ, channel.input_size))


def _out_domain(channel):
    return getattr(channel, "out_domain", (SEQ, channel.output_size))


def _check_chain(layers, channel):
    for a, b in zip(layers, layers[1:]):
        if not (_fits(a.enc_out, b.enc_in) and _fits(b.dec_out, a.dec_in)):
            raise CompositionError(f"layer {a.label!r} does not compose with {b.label!r}")
        if a.enc_out[0] == MSG and a.enc_out[1] > b.enc_in[1] + 1e-12:
            warnings.warn(f"{a.label!r} emits rate {a.enc_out[1]} into a rate-{b.enc_in[1]} layer; "
                          "indices are reduced modulo the smaller message set", stacklevel=3)
    last = layers[-1]
    if not (_fits(last.enc_out, _in_domain(channel)) and _fits(_out_domain(channel), last.dec_in)):
        raise CompositionError(
            f"layer {last.label!r} maps {last.enc_out} -> {last.dec_in}, channel maps "
            f"{_in_domain(channel)} -> {_out_domain(channel)}")


class CompositeChannel(GeneralChannel):
    """``decoders o channel o encoders``; the seed drives the channel noise only.

    The inner channel may itself be a composite, including one that works on
    message indices, so stacks nest.
    """

    def __init__(self, layers, channel, block_length=None):
        self.layers = tuple(layers)
        self.channel = channel
        self.block_length = block_length
        if self.layers:
            _check_chain(self.layers, channel)
            self.domain = self.layers[0].enc_in
            self.out_domain = self.layers[0].dec_out
        else:
            self.domain, self.out_domain = _in_domain(channel), _out_domain(channel)
        self.input_size = self.domain[1] if self.domain[0] == SEQ else None
        self.output_size = self.out_domain[1] if self.out_domain[0] == SEQ else None

    def transmit(self, x, seed=None, n=None):
        if self.domain[0] == SEQ:
            x = as_sequence(x, self.input_size)
            n = x.size
        else:
            n = n or self.block_length
            if n is None:
                raise ValueError("message-level composite needs a block length")
        v = x
        for layer in self.layers:
            v = layer.encode(v, n)
        if isinstance(self.channel, CompositeChannel):
            v = self.channel.transmit(v, seed, n=n)
        else:
            v = self.channel.transmit(v, seed)
        for layer in reversed(self.layers):
            v = layer.decode(v, n)
        return v

    __call__ = transmit

    def describe(self):
        return {"kind": "CompositeChannel", "layers": [layer.describe() for layer in self.layers],
                "channel": self.channel.describe()}


@dataclass
class LayerStack:
    layers: tuple
    inner: object = None
    membership: object = field(default=None, repr=False)

    def __post_init__(self):
        self.layers = tuple(self.layers)

    def as_channel(self, block_length=None):
        if self.inner is None or isinstance(self.inner, ChannelSet):
            raise CompositionError("stack has no single inner channel")
        return compose(self, self.inner, block_length)

    def describe(self):
        inner = None
        if isinstance(self.inner, ChannelSet):
            inner = self.inner.describe()
        elif self.inner is not None:
            inner = self.inner.describe()
        out = {"layers": [layer.describe() for layer in self.layers], "inner": inner}
        if isinstance(self.membership, dict):
            out["membership"] = {k: v.to_dict() for k, v in self.membership.items()}
        elif self.membership is not None:
            out["membership"] = self.membership.to_dict()
        return out


def compose(stack, channel, block_length=None):
    """Wrap ``channel`` in the encoders/decoders of ``stack`` (a LayerStack, Layer or list)."""
    if isinstance(stack, LayerStack):
        layers = stack.layers
    elif isinstance(stack, Layer):
        layers = (stack,)
    else:
        layers = tuple(stack)
    return CompositeChannel(layers, channel, block_length)


def build_separation_system(p, d, eps, n, R, Rs, cr, *, channel=None, q=None,
                            channel_p=None, channel_d=None, channel_eps=None,
                            max_words=DEFAULT_MAX_WORDS):
    """Source code at rate ``Rs`` stacked on a rate-``R`` channel code.

    The channel code's own typicality test (``channel_p``, ``channel_d``,
    ``channel_eps``) describes the channel it is meant to ride on and
    defaults to the source's.  When ``Rs > R`` source indices are reduced
    modulo the channel code's message set.
    """
    source = SourceCodecLayer(p, d, eps, Rs, cr.child("source"), q=q, max_words=max_words)
    coder = ChannelCodecLayer(channel_p if channel_p is not None else p,
                              channel_d if channel_d is not None else d,
                              channel_eps if channel_eps is not None else eps,
                              R, cr.child("channel"), max_words=max_words)
    source.codebook(n)
    coder.codebook(n)
    with warnings.catch_warnings():
        if Rs > R:
            warnings.simplefilter("ignore")
        if channel is not None and not isinstance(channel, ChannelSet):
            compose([source, coder], channel)
    return LayerStack((source, coder), inner=channel)


def build_reliable_on_lossy(lossy, p, d, eps, n, R, cr, *, membership_trials=200,
                            membership_threshold=0.1, max_words=DEFAULT_MAX_WORDS):
    """Rate-``R`` channel code over a lossy system for the i.i.d. ``p`` source.

    ``lossy`` is a LayerStack (its layers are kept, with the reliable layer
    on top), a sequence channel, or a ChannelSet of lossy systems.  Each
    lossy system's excess-distortion rate is checked at block length ``n``
    first; a failed check only warns.  ``membership`` on the result holds
    the report (a dict of reports, keyed by label, for a ChannelSet).
    """
    reliable = ChannelCodecLayer(p, d, eps, R, cr.child("reliable"), label="reliable",
                                 max_words=max_words)
    reliable.codebook(n)
    if isinstance(lossy, LayerStack):
        layers, inner = (reliable,) + lossy.layers, lossy.inner
        single = isinstance(inner, GeneralChannel)
        checked = [("lossy", lossy.as_channel())] if single else list(inner or ())
    else:
        layers, inner = (reliable,), lossy
        single = isinstance(lossy, GeneralChannel)
        checked = [("lossy", lossy)] if single else list(lossy)
    reports = {}
    if membership_trials:
        for label, channel in checked:
            report = estimate_membership(channel, p, d, [n], membership_trials, cr.child("membership"))
            if report.rows[-1].p_hat > membership_threshold:
                warnings.warn(f"lossy system {label!r} exceeds D in {report.rows[-1].p_hat:.3f} "
                              f"of blocks (threshold {membership_threshold})", stacklevel=2)
            reports[label] = report
    membership = (reports.get("lossy") if single else reports) or None
    return LayerStack(layers, inner=inner, membership=membership)


@dataclass(frozen=True)
class ChannelReport:
    label: str
    metric: str
    failures: int
    trials: int

    @property
    def fraction(self):
        return self.failures / self.trials

    @property
    def ci(self):
        return binomial_half_width(self.fraction, self.trials)

    def row(self):
        return (self.label, self.metric, self.failures, self.trials, self.fraction, self.ci)


def evaluate_end_to_end(stack, channel_set, metric, trials, cr, n, *, p=None, d=None, redraw=False):
    """Failure fraction of ``stack`` over every member of ``channel_set``.

    ``metric="distortion"`` feeds i.i.d. ``p`` source blocks and counts
    average distortion above ``d.budget``; ``metric="message-error"`` feeds
    uniform messages and counts wrong decisions.  Source/message draws and
    channel-noise seeds are shared across members.

    With ``redraw`` (True, or a collection of layer labels) the selected
    layers draw fresh codebooks every trial from their own seed, so the
    fraction estimates the random-code ensemble rather than one fixed code.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if isinstance(channel_set, GeneralChannel):
        channel_set = ChannelSet([channel_set])
    outer = stack.layers[0]
    if metric == "distortion":
        p = as_pmf(p if p is not None else outer.p)
        d = d if d is not None else outer.d
        inputs = [sample_iid(cr.child("source", t).rng(), p, n) for t in range(trials)]
    elif metric == "message-error":
        count = codebook_size(n, outer.enc_in[1])
        inputs = [int(cr.child("message", t).rng().integers(count)) for t in range(trials)]
    else:
        raise ValueError(f"unknown metric {metric!r}")
    if redraw is True:
        redraw = {layer.label for layer in stack.layers}
    redraw = set(redraw or ())

    def layers_for(t):
        if not redraw:
            return stack.layers
        return tuple(layer.redrawn("trial", t) if layer.label in redraw else layer
                     for layer in stack.layers)

    reports = []
    for label, channel in channel_set:
        fixed = None if redraw else compose(stack.layers, channel, block_length=n)
        failures = 0
        for t, v in enumerate(inputs):
            composite = fixed or compose(layers_for(t), channel, block_length=n)
            out = composite.transmit(v, cr.child("noise", t).seed_sequence(), n=n)
            if metric == "distortion":
                failures += not within_budget(distortion_totals(v, out, d), n, d.budget)
            else:
                failures += int(out) != v
        reports.append(ChannelReport(label, metric, failures, trials))
    return reports


# Source of the "asymmetric ternary" layering example.  The stated relation
# P(a) = 2P(b) = 3P(c) = 1/6 does not normalise (it sums to 11/36); the
# proportional reading below is used instead and reported as such.
TERNARY_DEMO_WEIGHTS = (6 / 11, 3 / 11, 2 / 11)
TERNARY_DEMO_DISTORTION = 1 / 9
TERNARY_DEMO_NOTE = ("ternary source P(a)=2P(b)=3P(c)=1/6 sums to 11/36; "
                     "using proportional normalisation (6/11, 3/11, 2/11)")


def ternary_symmetric(delta):
    """Ternary channel that keeps the symbol with probability 1 - delta."""
    w = np.full((3, 3), delta / 2)
    np.fill_diagonal(w, 1 - delta)
    return w


__all__ = [
    "ChannelCodecLayer", "ChannelReport", "CompositeChannel", "IdentityLayer", "Layer",
    "LayerStack", "SourceCodecChannel", "SourceCodecLayer", "TERNARY_DEMO_DISTORTION", "TERNARY_DEMO_NOTE",
    "TERNARY_DEMO_WEIGHTS", "build_reliable_on_lossy", "build_separation_system", "compose",
    "evaluate_end_to_end", "ternary_symmetric",
]
