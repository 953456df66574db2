import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import binom

from opequiv.channels import (
    DMC,
    BudgetAdversaryChannel,
    ChannelSet,
    ConstantChannel,
    IdentityChannel,
    bsc,
    dmc_transmit,
    estimate_membership,
    source_code_channel,
)
from opequiv.codecs import gen_source_codebook
from opequiv.core import CommonRandomness, DistortionSpec, avg_distortion
from opequiv.errors import InvalidChannel

HAM2 = DistortionSpec.hamming(2)


def test_dmc_identity_is_noiseless():
    x = np.array([0, 1, 2, 2, 1, 0, 0])
    assert np.array_equal(dmc_transmit(x, np.eye(3), seed=1), x)


def test_dmc_constant_rows_follow_output_law():
    q = np.array([0.2, 0.5, 0.3])
    n = 20_000
    y = dmc_transmit(np.zeros(n, dtype=int), np.tile(q, (2, 1)), seed=7)
    freq = np.bincount(y, minlength=3) / n
    sigma = np.sqrt(q * (1 - q) / n)
    assert np.all(np.abs(freq - q) <= 3 * sigma)


def test_dmc_deterministic_given_seed():
    x = np.random.default_rng(0).integers(0, 2, 50)
    c = bsc(0.3)
    assert np.array_equal(c.transmit(x, 11), c.transmit(x, 11))
    assert np.array_equal(c.transmit(x, CommonRandomness(3)), c.transmit(x, CommonRandomness(3)))


@pytest.mark.parametrize("w", [[[0.5, 0.6], [0.5, 0.5]], [[-0.1, 1.1], [0.5, 0.5]], [0.5, 0.5]])
def test_dmc_invalid_rows(w):
    with pytest.raises(InvalidChannel):
        DMC(w)


def test_constant_and_identity_alphabets():
    c = ConstantChannel(1, 2, 3)
    assert c.transmit([0, 1, 1]).tolist() == [1, 1, 1]
    with pytest.raises(InvalidChannel):
        ConstantChannel(3, 2, 3)
    assert IdentityChannel(4).transmit([3, 2]).tolist() == [3, 2]


def test_budget_adversary_stays_within_budget():
    d = DistortionSpec([[0, 1, 0.4], [1, 0, 0.4]])
    adv = BudgetAdversaryChannel(d, 0.25)
    rng = np.random.default_rng(1)
    for _ in range(50):
        x = rng.integers(0, 2, 30)
        y = adv.transmit(x)
        assert avg_distortion(x, y, d) <= 0.25 + 1e-12


def test_source_code_channel_range_and_constant_case():
    d = HAM2.with_budget(0.3)
    cb = gen_source_codebook(8, 0.25, [0.5, 0.5], CommonRandomness(5))
    ch = source_code_channel(cb, p=[0.5, 0.5], d=d, eps=0.3)
    seen = {ch.transmit(np.array(x)).tobytes() for x in itertools.product(range(2), repeat=8)}
    assert len(seen) <= len(cb) == 4
    single = gen_source_codebook(8, 0.0, [0.5, 0.5], CommonRandomness(5))
    ch1 = source_code_channel(single, p=[0.5, 0.5], d=d, eps=0.3)
    outs = {ch1.transmit(np.array(x)).tobytes() for x in itertools.product(range(2), repeat=8)}
    assert outs == {single.words[0].tobytes()}


@pytest.mark.parametrize("n", range(1, 9))
def test_source_code_channel_cardinality_exhaustive(n):
    d = HAM2.with_budget(0.25)
    cb = gen_source_codebook(n, 0.5, [0.5, 0.5], CommonRandomness(n))
    ch = source_code_channel(cb, p=[0.5, 0.5], d=d, eps=0.5)
    outs = {ch.transmit(np.array(x)).tobytes() for x in itertools.product(range(2), repeat=n)}
    assert len(outs) <= len(cb)


def test_source_code_channel_with_explicit_rule():
    cb = gen_source_codebook(6, 0.5, [0.5, 0.5], CommonRandomness(0))
    ch = source_code_channel(cb, lambda x: 2, d=HAM2)
    assert np.array_equal(ch.transmit([0, 1, 0, 1, 0, 1]), cb.words[2])


def test_good_source_code_channel_is_member():
    # rate 0.45 > R(0.2) = 0.278: excess distortion should fall with n
    from opequiv.stack import SourceCodecLayer

    d = HAM2.with_budget(0.2)
    ch = SourceCodecLayer([0.5, 0.5], d, 0.15, 0.45, CommonRandomness(7)).as_channel()
    rep = estimate_membership(ch, [0.5, 0.5], d, [20, 40], 300, seed=2)
    assert rep.is_decreasing(strict=True) and rep.passes(0.1)


def test_membership_identity_and_constant():
    d = HAM2.with_budget(0.0)
    rep = estimate_membership(IdentityChannel(2), [0.5, 0.5], d, [5, 10, 20], 50, seed=1)
    assert rep.p_hats == [0.0, 0.0, 0.0]
    # d(0,1) = 1 > D = 0.5 for every symbol with positive mass
    rep = estimate_membership(ConstantChannel(1, 2, 2), [1.0, 0.0], HAM2.with_budget(0.5), [5, 10], 50, seed=1)
    assert rep.p_hats == [1.0, 1.0]


@pytest.mark.parametrize("flip,D,trend", [(0.05, 0.15, "down"), (0.3, 0.2, "up")])
def test_membership_bsc_matches_binomial_tail(flip, D, trend):
    ns = [20, 80, 320]
    trials = 600
    rep = estimate_membership(bsc(flip), [0.5, 0.5], HAM2.with_budget(D), ns, trials, seed=4)
    for row in rep.rows:
        exact = binom.sf(np.floor(row.n * D + 1e-9), row.n, flip)
        sigma = np.sqrt(max(exact * (1 - exact), 1e-4) / trials)
        assert abs(row.p_hat - exact) <= 4 * sigma
    if trend == "down":
        assert rep.p_hats[-1] < 0.01
    else:
        assert rep.p_hats[-1] > 0.99


def test_membership_reproducible_and_serialisable():
    args = (bsc(0.1), [0.5, 0.5], HAM2.with_budget(0.12), [10, 20], 100)
    a = estimate_membership(*args, seed=9)
    b = estimate_membership(*args, seed=9)
    assert a == b
    assert a.csv_rows()[0][0] == 10 and len(a.csv_rows()[0]) == 4
    assert set(a.to_dict()["rows"][0]) == {"n", "p_hat", "ci", "trials"}
    with pytest.raises(ValueError):
        estimate_membership(*args[:4], 0, seed=1)


def test_channel_set_validation():
    with pytest.raises(InvalidChannel):
        ChannelSet([])
    with pytest.raises(InvalidChannel):
        ChannelSet([IdentityChannel(2), IdentityChannel(3)])
    s = ChannelSet([IdentityChannel(2), bsc(0.1)], ["id", "bsc"])
    assert [lab for lab, _ in s] == ["id", "bsc"] and len(s.describe()) == 2


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(0, 1), min_size=1, max_size=40), st.integers(0, 2**32 - 1))
def test_channels_preserve_length_and_alphabet(x, seed):
    d = DistortionSpec([[0, 1, 0.5], [1, 0, 0.5]])
    for c in (bsc(0.2), DMC([[0.7, 0.2, 0.1], [0.1, 0.1, 0.8]]), BudgetAdversaryChannel(d, 0.3),
              ConstantChannel(2, 2, 3)):
        y = c.transmit(x, seed)
        assert y.shape == (len(x),) and y.min() >= 0 and y.max() < c.output_size
