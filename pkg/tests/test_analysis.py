import json
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from backflow import analysis as A


def planted(p, slopes, l_a=np.arange(0, 21, 2), err=None, intercept=10.0):
    F = np.array([intercept + s * l_a for s in slopes], dtype=float)
    E = np.zeros_like(F) if err is None else np.full_like(F, err)
    return A.SweepResult(p, l_a, F, E, np.full(F.shape, 200))


def test_noiseless_line_exact():
    r = planted([0.1, 0.2], [2.0, -0.5], err=0.3)
    assert A.slope_fit(r, 0.1)[0] == pytest.approx(2.0, abs=1e-12)
    assert A.slope_fit(r, 0.2)[0] == pytest.approx(-0.5, abs=1e-12)
    r0 = planted([0.1], [3.0])
    s, se = A.slope_fit(r0, 0.1)
    assert s == pytest.approx(3.0, abs=1e-12) and se == pytest.approx(0.0, abs=1e-10)


def test_noisy_line_within_error():
    rng = np.random.default_rng(0)
    l_a = np.arange(0, 21, 2)
    F = 2 * l_a + rng.normal(0, 1.0, len(l_a))
    r = A.SweepResult([0.1], l_a, [F], np.ones((1, len(l_a))), np.full((1, len(l_a)), 100))
    s, se = A.slope_fit(r, 0.1)
    assert se == pytest.approx(1 / np.sqrt(((l_a - l_a.mean()) ** 2).sum()), rel=1e-12)
    assert abs(s - 2) < 3 * se


def test_stderr_scales_with_samples():
    rng = np.random.default_rng(1)
    l_a = np.arange(0, 21, 2)
    errs = []
    for n in (100, 400, 1600):
        draws = 3 * l_a[:, None] + rng.normal(0, 5.0, (len(l_a), n))
        F = draws.mean(axis=1)
        E = draws.std(axis=1, ddof=1) / np.sqrt(n)
        r = A.SweepResult([0.2], l_a, [F], [E], np.full((1, len(l_a)), n))
        errs.append(A.slope_fit(r, 0.2)[1])
    assert errs[0] / errs[1] == pytest.approx(2.0, rel=0.2)
    assert errs[1] / errs[2] == pytest.approx(2.0, rel=0.2)


def test_insufficient_points():
    r = A.SweepResult([0.1], [0, 2], [[1.0, 2.0]], [[0.1, 0.1]], [[5, 5]])
    with pytest.raises(ValueError):
        A.slope_fit(r, 0.1)


def test_normalized_slope():
    r = planted([0.1], [0.0], intercept=5.0, err=0.1)
    assert A.normalized_slope(r, 0.1)[0] == pytest.approx(0.0, abs=1e-14)
    r = planted([0.1], [2.0], intercept=0.0)
    s, _ = A.normalized_slope(r, 0.1)
    assert s == pytest.approx(2.0 / (2.0 * 10.0), rel=1e-12)
    z = A.SweepResult([0.1], [0, 1, 2], [[1.0, -2.0, 1.0]], [[0.1] * 3], [[3] * 3])
    assert np.isnan(A.normalized_slope(z, 0.1)[0])


def test_entropy_proxy():
    r = planted([0.1], [2.0], intercept=7.0)
    np.testing.assert_allclose(r.entropy_proxy()[0], 2.0 * np.arange(0, 21, 2))


def test_sweep_result_validation():
    with pytest.raises(ValueError):
        A.SweepResult([0.1], [0, 2, 4], [[1, 2, 3]], [[-1, 0, 0]], [[1, 1, 1]])
    with pytest.raises(ValueError):
        A.SweepResult([0.1], [0, 2, 4], [[1, 2, 3]], [[0, 0, 0]], [[0, 1, 1]])
    with pytest.raises(KeyError):
        planted([0.1], [1.0]).row(0.3)


def test_planted_step_transition():
    p = np.round(np.arange(0.05, 0.401, 0.05), 3)
    s = np.where(p < 0.25, 5.0, 0.1)
    pc, half = A.detect_transition(p, s)
    assert pc == pytest.approx(0.225) and half == pytest.approx(0.025)
    assert abs(pc - 0.25) <= half


@given(scale=st.floats(1e-6, 1e6), seed=st.integers(0, 500))
@settings(max_examples=50)
def test_transition_scale_invariant(scale, seed):
    rng = np.random.default_rng(seed)
    p = np.linspace(0.05, 0.4, 15)
    s = np.where(p < rng.uniform(0.1, 0.35), rng.uniform(1, 2, 15), rng.uniform(0, 0.1, 15))
    try:
        ref = A.detect_transition(p, s)
    except A.NoTransition:
        with pytest.raises(A.NoTransition):
            A.detect_transition(p, s * scale)
        return
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        assert A.detect_transition(p, s * scale) == ref


def test_no_transition_raises():
    with pytest.raises(A.NoTransition):
        A.detect_transition([0.1, 0.2, 0.3], [1.0, 1.1, 0.9])


def test_non_monotone_warns():
    with pytest.warns(UserWarning):
        A.detect_transition([0.1, 0.2, 0.3, 0.4], [1.0, 0.1, 0.9, 0.0])


def test_detect_drop_and_peaks():
    p = [0.025, 0.05, 0.075, 0.1, 0.125, 0.15]
    s = [0.10, 0.11, 0.10, 0.04, 0.035, 0.03]
    assert A.detect_drop(p, s, before=0.15) == pytest.approx((0.0875, 0.0125))
    assert A.local_peak(p, s) == [0.05]


def test_chain_io_and_load(tmp_path):
    rng = np.random.default_rng(0)
    for p in (0.1, 0.3):
        for la in (0, 2, 4):
            tot = 5 + (3.0 if p == 0.1 else 0.0) * la + rng.normal(0, 0.5, 200)
            A.write_chain_csv(tmp_path / A.chain_name(p, la, 7), tot, np.zeros(200), 50, 100)
    steps, tot, bnd = A.read_chain_csv(tmp_path / A.chain_name(0.1, 2, 7))
    assert steps[0] == 150 and steps[-1] == 100 + 200 * 50
    r = A.load_sweep(tmp_path)
    assert r.p.tolist() == [0.1, 0.3] and r.l_a.tolist() == [0, 2, 4]
    assert A.slope_fit(r, 0.1)[0] == pytest.approx(3.0, abs=0.2)
    A.write_summary_csv(tmp_path / "s.csv", r)
    head = (tmp_path / "s.csv").read_text().splitlines()[0]
    assert head == "p,slope,slope_err,normalized_slope,normalized_err"
    rep = A.write_transition_json(tmp_path / "t.json", r)
    assert json.loads((tmp_path / "t.json").read_text()) == json.loads(json.dumps(rep))


def test_heatmap_svg(tmp_path):
    path = A.emit_heatmap([[1.5]], tmp_path / "one.svg")
    text = path.read_text()
    assert text.count("<rect") == 1 and "min=1.5 max=1.5" in text
    m = np.arange(6).reshape(2, 3)
    text = A.emit_heatmap(m, tmp_path / "m.svg", cell=10).read_text()
    rects = [line for line in text.splitlines() if line.startswith("<rect")]
    # row 0 is drawn at the bottom
    assert 'x="10" y="34"' in rects[0]
    assert 'x="10" y="24"' in rects[3]
    u = A.emit_heatmap(np.full((3, 3), 2.0), tmp_path / "u.svg").read_text()
    assert len({line.split('fill="')[1] for line in u.splitlines() if line.startswith("<rect")}) == 1
    with pytest.raises(ValueError):
        A.emit_heatmap(np.zeros((0, 3)), tmp_path / "e.svg")
