import math

import numpy as np
import pytest

from tc_core.angular import (
    ACCURACY_THRESHOLD, HeadingEncoding, MetricsReport, angle_diff, circular_std, decode, decode_many, encode,
    encode_many, evaluate, wrap_angle,
)
from tc_core.errors import DegenerateEncodingError


def test_encode_axis_cases():
    assert encode(0.0) == HeadingEncoding(1.0, 0.0)
    e = encode(math.pi / 2)
    assert abs(e.c) < 1e-15 and e.s == 1.0
    e = encode(math.pi)
    assert e.c == -1.0 and abs(e.s) < 1e-15
    assert abs(encode(1.234).norm - 1.0) < 1e-12


def test_encode_rejects_non_finite():
    with pytest.raises(ValueError):
        encode(float("nan"))
    with pytest.raises(ValueError):
        encode(float("inf"))


def test_decode_cases():
    assert decode((1.0, 0.0)) == 0.0
    assert decode((0.0, -2.0)) == -math.pi / 2
    assert abs(decode(encode(2.5)) - 2.5) < 1e-12
    # atan2(-0.0, -1) is -pi; decode keeps the half-open range
    assert decode((-1.0, -0.0)) == math.pi


def test_decode_scale_invariant():
    enc = (0.3, -0.7)
    for k in [1e-6, 0.5, 3.0, 1e6]:
        assert decode((k * enc[0], k * enc[1])) == pytest.approx(decode(enc), abs=1e-15)


def test_decode_degenerate():
    with pytest.raises(DegenerateEncodingError):
        decode((0.0, 0.0))
    with pytest.raises(DegenerateEncodingError):
        decode(HeadingEncoding(1e-13, 0.0))


def test_round_trip_many_angles():
    rng = np.random.default_rng(0)
    thetas = rng.uniform(-math.pi, math.pi, size=10_000)
    worst = max(abs(decode(encode(t)) - t) for t in thetas)
    assert worst < 1e-12


def test_angle_diff_cases():
    assert abs(angle_diff(math.pi - 0.01, -math.pi + 0.01) - 0.02) < 1e-12
    assert angle_diff(1.7, 1.7) == 0.0
    assert angle_diff(0.3, -0.2) == pytest.approx(0.5, abs=1e-15)


def test_angle_diff_properties():
    rng = np.random.default_rng(1)
    for _ in range(500):
        a, b = rng.uniform(-10, 10, size=2)
        d = angle_diff(a, b)
        assert 0.0 <= d <= math.pi
        assert d == angle_diff(b, a)
        k = int(rng.integers(-3, 4))
        assert angle_diff(a + 2 * math.pi * k, b) == pytest.approx(d, abs=1e-9)


def test_wrap_angle():
    assert wrap_angle(-math.pi) == math.pi
    assert wrap_angle(0.5) == 0.5
    assert wrap_angle(3 * math.pi) == pytest.approx(math.pi, abs=1e-12)
    assert wrap_angle(2 * math.pi + 0.25) == pytest.approx(0.25, abs=1e-12)


def test_vectorised_helpers():
    thetas = np.array([0.0, 1.0, -2.0, math.pi])
    enc = encode_many(thetas)
    assert enc.shape == (4, 2)
    np.testing.assert_allclose(decode_many(enc), thetas, atol=1e-12)
    out = decode_many(np.array([[0.0, 0.0], [0.0, 1.0]]))
    assert math.isnan(out[0])
    assert out[1] == pytest.approx(math.pi / 2)


def test_evaluate_identity_and_opposite():
    labels = [encode(t) for t in (0.1, 1.2, -2.0, 3.0)]
    report = evaluate(labels, labels)
    assert report.mse == 0.0
    assert report.mean_angle_diff == 0.0
    assert report.accuracy == 1.0
    assert report.n_samples == 4
    assert report.format_line() == "mse=0 angle_diff=0 accuracy=1"

    opposite = [encode(t + math.pi) for t in (0.1, 1.2, -2.0, 3.0)]
    assert evaluate(opposite, labels).accuracy == 0.0


def test_evaluate_matches_recount():
    labels = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.6, 0.8]])
    # two predictions within pi/8 of their label, two beyond
    preds = np.array([[0.9, 0.1], [0.05, 2.0], [0.0, -1.0], [0.8, -0.6]])
    report = evaluate(preds, labels)

    sq_total, diff_total, correct = 0.0, 0.0, 0
    for (pc, ps), (lc, ls) in zip(preds, labels):
        sq_total += (lc - pc) ** 2 + (ls - ps) ** 2
        d = angle_diff(math.atan2(ps, pc), math.atan2(ls, lc))
        diff_total += d
        correct += d < ACCURACY_THRESHOLD
    assert report.accuracy == 0.5
    assert report.mse == sq_total / 4
    assert report.mean_angle_diff == diff_total / 4
    assert correct == 2


def test_evaluate_errors():
    with pytest.raises(ValueError):
        evaluate([], [])
    with pytest.raises(ValueError):
        evaluate([encode(0.0)], [encode(0.0), encode(1.0)])
    with pytest.raises(DegenerateEncodingError):
        evaluate([(0.0, 0.0)], [(1.0, 0.0)])


def test_evaluate_lenient_counts_degenerate():
    report = evaluate(np.array([[0.0, 0.0], [1.0, 0.0]]), np.array([[1.0, 0.0], [1.0, 0.0]]), strict=False)
    assert isinstance(report, MetricsReport)
    assert report.degenerate == 1
    assert report.accuracy == 0.5
    assert report.mean_angle_diff == pytest.approx(math.pi / 2)
    assert report.mse == pytest.approx(0.5)


def test_circular_std():
    assert circular_std(np.full(10, 0.7)) == pytest.approx(0.0, abs=1e-6)
    narrow = circular_std(np.array([-0.1, 0.0, 0.1]))
    wide = circular_std(np.array([-1.0, 0.0, 1.0]))
    assert 0.0 < narrow < wide
    # wraparound: values straddling +-pi are close together
    assert circular_std(np.array([math.pi - 0.05, -math.pi + 0.05])) == pytest.approx(0.05, abs=1e-3)
