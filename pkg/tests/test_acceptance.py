"""Acceptance suite: one check per criterion, with the stated tolerances and time limits.

Run under pytest (a summary block is printed at the end) or directly with
``python3 tests/test_acceptance.py``.
"""
import json
import math
import sys
import time

import numpy as np
import pytest

from opequiv import cli
from opequiv.channels import DMC, estimate_membership
from opequiv.codecs import erasure_prefix_codebook, quantize_type, run_converse_experiment, run_source_trials
from opequiv.core import CommonRandomness, DistortionSpec, Pmf, TypeVector, binary_entropy
from opequiv.oracle import blahut_arimoto, distortion_range
from opequiv.stack import SourceCodecLayer, build_reliable_on_lossy, build_separation_system, evaluate_end_to_end
from opequiv.typecalc import (
    brute_force_F_chan,
    brute_force_F_src,
    exact_F_chan,
    exact_F_src,
    optimize_qY,
    phase_transition_curve,
    survival,
)

pytestmark = pytest.mark.acceptance

P = [0.5, 0.5]
HAM2 = DistortionSpec.hamming(2)


@pytest.fixture(scope="module")
def threshold_011():
    t0 = time.perf_counter()
    est = optimize_qY(P, HAM2.with_budget(0.11), 0.02, [200, 400, 600, 800], 0.05, threads=2)
    return est, time.perf_counter() - t0


def _close_log(a, b):
    if a == -math.inf or b == -math.inf:
        return a == b
    return abs(a - b) <= 1e-10 * max(abs(b), 1.0)


def test_c1_oracle(acceptance_report):
    t0 = time.perf_counter()
    errs = [abs(blahut_arimoto(P, HAM2, D).R - (1 - binary_entropy(D))) for D in (0.05, 0.11, 0.2, 0.3)]
    _, d_max = distortion_range(Pmf(P), HAM2)
    at_max = blahut_arimoto(P, HAM2, d_max).R
    elapsed = time.perf_counter() - t0
    ok = max(errs) <= 1e-3 and at_max == 0.0 and elapsed < 1.0
    acceptance_report(1, ok, f"max |R - (1-h(D))| = {max(errs):.2e}, R(D_max) = {at_max}, {elapsed:.2f}s")
    assert ok


def test_c2_exact_vs_brute_force(acceptance_report):
    rng = np.random.default_rng(2)
    t0 = time.perf_counter()
    checked, bad = 0, 0
    while checked < 24:
        size_x, size_y = (int(s) for s in rng.choice([2, 3], 2))
        n = int(rng.integers(1, 9))
        if size_y ** n > 3**8 or size_x ** n > 3**8:
            continue
        p = Pmf.normalized(rng.random(size_x) + 0.05)
        d = DistortionSpec(rng.integers(0, 4, (size_x, size_y)).astype(float), float(rng.uniform(0.2, 2)))
        eps = float(rng.uniform(0.05, 0.6))
        qy = TypeVector(np.bincount(rng.integers(0, size_y, n), minlength=size_y))
        xc = TypeVector(np.bincount(rng.integers(0, size_x, n), minlength=size_x))
        bad += not _close_log(exact_F_chan(n, qy, p, d, eps), brute_force_F_chan(n, qy, p, d, eps))
        bad += not _close_log(exact_F_src(n, xc, qy, d), brute_force_F_src(n, xc, qy, d))
        checked += 1
    elapsed = time.perf_counter() - t0
    ok = bad == 0 and elapsed < 60
    acceptance_report(2, ok, f"{checked} instances, {bad} mismatches, {elapsed:.1f}s")
    assert ok


def test_c3_threshold_matches_rd(acceptance_report, threshold_011):
    est, elapsed = threshold_011
    R = blahut_arimoto(P, HAM2, 0.11).R
    gaps = abs(est.channel.alpha - R), abs(est.source.alpha - R)
    ok = max(gaps) <= 0.05 and elapsed < 600
    acceptance_report(3, ok, f"R(D) = {R:.5f}, alpha_chan = {est.channel.alpha:.5f}, "
                             f"alpha_src = {est.source.alpha:.5f}, {elapsed:.1f}s")
    assert ok


def test_c4_phase_transition(acceptance_report, threshold_011):
    est, _ = threshold_011
    t0 = time.perf_counter()
    n = 400
    log_F = exact_F_chan(n, quantize_type(est.qY_star, n), P, HAM2.with_budget(0.11), 0.02)
    a = est.alpha
    below, above = survival(n, a - 0.1, log_F), survival(n, a + 0.1, log_F)
    vals = [v for _, v in phase_transition_curve(n, np.linspace(0, 1, 401), log_F)]
    monotone = all(x >= y for x, y in zip(vals, vals[1:]))
    elapsed = time.perf_counter() - t0
    ok = below > 0.99 and above < 0.01 and monotone and elapsed < 300
    acceptance_report(4, ok, f"S(alpha-0.1) = {below:.4f}, S(alpha+0.1) = {above:.2e}, "
                             f"monotone = {monotone}, {elapsed:.1f}s")
    assert ok


def test_c5_source_achievability(acceptance_report):
    d = HAM2.with_budget(0.2)
    hi = run_source_trials(P, d, 0.15, 40, 0.45, P, 2000, CommonRandomness(5))
    lo = run_source_trials(P, d, 0.15, 40, 0.1, P, 2000, CommonRandomness(5))
    again = run_source_trials(P, d, 0.15, 40, 0.45, P, 2000, CommonRandomness(5))
    ok = hi.success_fraction > 0.9 and lo.success_fraction < 0.5 and again == hi
    acceptance_report(5, ok, f"success {hi.success_fraction:.4f} at R=0.45, {lo.success_fraction:.4f} at R=0.1, "
                             f"reproducible = {again == hi}")
    assert ok


def test_c6_converse(acceptance_report):
    t0 = time.perf_counter()
    n = 20
    # rate-0.3 source code: 6 systematic bits then erasures, cost 10 for a wrong bit
    book = erasure_prefix_codebook(n, 6)
    d = DistortionSpec([[0, 10, 1], [10, 0, 1]], 0.7)
    high = run_converse_experiment(0.3, 0.8, n, P, d, 0.25, 400, CommonRandomness(1), source_codebook=book)
    low = run_converse_experiment(0.3, 0.15, n, P, d, 0.25, 400, CommonRandomness(1), source_codebook=book)
    floor = 1 - 2 ** (-n * 0.5) - high.slack(3.0)
    elapsed = time.perf_counter() - t0
    ok = high.error_fraction >= floor and low.error_fraction < 0.2 and elapsed < 120
    acceptance_report(6, ok, f"error {high.error_fraction:.4f} at R=0.8 (floor {floor:.4f}), "
                             f"{low.error_fraction:.4f} at R=0.15, {elapsed:.1f}s")
    assert ok


def test_c7_separation_membership(acceptance_report):
    d = HAM2.with_budget(0.33)
    stack = build_separation_system(P, d, 0.15, 20, 0.2, 0.2, CommonRandomness(7), channel=DMC([[0.99, 0.01], [0.01, 0.99]]),
                                    channel_d=HAM2.with_budget(0.1), channel_eps=0.3)
    rep = estimate_membership(stack.as_channel(), P, d, [20, 40, 80], 300, CommonRandomness(1))
    ok = rep.is_decreasing(strict=True)
    acceptance_report(7, ok, "p_hat over n = 20, 40, 80: " + ", ".join(f"{v:.4f}" for v in rep.p_hats))
    assert ok


def test_c8_reverse_reduction(acceptance_report):
    cr = CommonRandomness(8)
    d = HAM2.with_budget(0.2)
    lossy = SourceCodecLayer(P, d, 0.15, 0.45, cr.child("lossy")).as_channel()
    alpha = optimize_qY(P, d, 0.02, [100, 200, 300, 400], 0.05).alpha
    R = alpha - 0.15
    stack = build_reliable_on_lossy(lossy, P, d, 0.15, 40, R, cr, membership_trials=300)
    verified = stack.membership.rows[-1].p_hat
    rep = evaluate_end_to_end(stack, lossy, "message-error", 2000, cr.child("eval"), 40, redraw=True)[0]
    ok = rep.fraction < 0.1
    acceptance_report(8, ok, f"alpha = {alpha:.4f}, R = {R:.4f}, lossy p_hat(40) = {verified:.3f}, "
                             f"message error {rep.fraction:.4f}")
    assert ok


CLI_CONFIGS = {
    "rd": {"pX": P, "distortion": {"hamming": 2}, "D_grid": {"start": 0.0, "stop": 0.4, "num": 9}},
    "sweep": {"pX": P, "distortion": {"hamming": 2}, "D": 0.11, "eps": 0.02, "ns": [100, 150, 200],
              "grid_step": 0.25, "n": 200, "rates": {"start": 0.2, "stop": 0.8, "num": 13}},
    "trials": {"pX": P, "distortion": {"hamming": 2}, "mode": "source", "D": 0.2, "eps": 0.15, "n": 24,
               "R": 0.45, "trials": 200, "seed": 11},
    "membership": {"pX": P, "distortion": {"hamming": 2}, "D": 0.2, "ns": [10, 20, 40], "trials": 100,
                   "seed": 12, "channel": {"kind": "bsc", "flip": 0.1}},
    "separate": {"pX": P, "distortion": {"hamming": 2}, "mode": "separation", "D": 0.33, "eps": 0.15, "n": 20,
                 "R": 0.2, "Rs": 0.2, "trials": 100, "seed": 13, "channel_code": {"D": 0.1, "eps": 0.3},
                 "channels": [{"kind": "identity"}, {"kind": "bsc", "flip": 0.01}]},
}


def test_c9_cli_determinism(acceptance_report, tmp_path):
    same = {}
    for command, config in CLI_CONFIGS.items():
        path = tmp_path / f"{command}.json"
        path.write_text(json.dumps(config))
        bodies = []
        for run in range(2):
            out = tmp_path / f"{command}-{run}"
            assert cli.main([command, "--config", str(path), "--out", str(out)]) == 0
            bodies.append(cli.read_csv_body(out / f"{command}.csv"))
        same[command] = bodies[0] == bodies[1]
    ok = all(same.values())
    acceptance_report(9, ok, ", ".join(f"{k} {'identical' if v else 'DIFFERS'}" for k, v in same.items()))
    assert ok


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-s", "-p", "no:cacheprovider"]))
