import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scalelab import de
from scalelab.graph import EnsembleSpec, Truncated

SPEC = EnsembleSpec(5, 10, 50, 10)
EPS_STAR = 0.49942  # frozen from de_threshold on this ensemble


def test_converges_below_threshold_only():
    assert de.run(SPEC, 0.49).converged
    assert not de.run(SPEC, 0.51).converged


def test_recovered_mass_matches_channel():
    r = de.run(SPEC, 0.45)
    assert r.sum_p[0] == pytest.approx(0.45 * 50)
    assert r.v_bp.sum() == pytest.approx(0.45 * 50, rel=1e-8)


def test_step_matches_batch_run():
    s = de.DeState.initial(SPEC, 0.47)
    for _ in range(30):
        s = de.de_step(s, 0.47)
    r = de.run(SPEC, 0.47, max_iters=30)
    assert np.allclose(s.v_bp_mean, r.v_bp[:30])


def test_threshold_bad_bracket():
    with pytest.raises(de.SearchError):
        de.de_threshold(SPEC, lo=0.3, hi=0.4)


@settings(max_examples=10, deadline=None)
@given(e1=st.floats(0.3, 0.52), e2=st.floats(0.3, 0.52))
def test_monotone_in_epsilon(e1, e2):
    lo, hi = sorted((e1, e2))
    spec = EnsembleSpec(3, 6, 12, 6)
    a = de.run(spec, lo, max_iters=40, profiles=True).profiles
    b = de.run(spec, hi, max_iters=40, profiles=True).profiles
    n = min(len(a), len(b))
    assert np.all(a[:n] <= b[:n] + 1e-12)


def test_terminated_profiles_symmetric():
    prof = de.run(SPEC, 0.47, max_iters=60, profiles=True).profiles
    assert np.allclose(prof, prof[:, ::-1], atol=1e-12)


def test_steady_state_bounds_synthetic():
    k = np.arange(60)
    y = 2 + 8 * np.exp(-k / 2)  # second difference drops below 1e-2 near k = 10
    y = np.concatenate([y, 2 - 0.1 * np.arange(1, 5) ** 2, [0.0]])
    start, stop, last = de.steady_state_bounds(y)
    assert 9 <= start <= 12
    assert 57 <= stop <= 60
    assert last == len(y) - 2  # the final zero sits below the threshold
    assert de.steady_state_bounds(np.zeros(10)) is None


def test_front_position():
    assert de.front_position(np.array([0.0, 0.0, 0.2, 0.4]), 0.1) == pytest.approx(1.5)
    assert np.isnan(de.front_position(np.zeros(4), 0.1))


def test_phase_at_047():
    ph = de.estimate_phase(SPEC, 0.47, EPS_STAR)
    # values frozen from this implementation
    assert ph.i_start == 15
    assert ph.i_end == 17
    assert ph.v_bp_speed == pytest.approx(0.1256, abs=2e-3)
    assert ph.gamma_bp == pytest.approx(1.83, abs=0.02)


def test_phase_rejects_above_threshold():
    with pytest.raises(de.DomainError):
        de.estimate_phase(SPEC, 0.5, EPS_STAR)


def test_truncated_is_slower_to_finish():
    t = de.run(SPEC.with_termination(Truncated()), 0.47)
    assert not t.converged  # the low-degree tail keeps a residual


def test_speed_curve_fit():
    xs = np.array([0.44, 0.46, 0.48, 0.49])
    coef = de.fit_speed_curve(np.c_[xs, 1 - 2 * xs + 3 * xs**2])
    assert np.allclose(coef, [3, -2, 1])
    with pytest.raises(ValueError):
        de.fit_speed_curve([[0.4, 0.1], [0.45, 0.2]])


def test_csv(tmp_path):
    r = de.run(SPEC, 0.45, max_iters=5)
    r.write_csv(tmp_path / "de.csv")
    rows = (tmp_path / "de.csv").read_text().splitlines()
    assert rows[0] == "iter,sum_p,v_bp_mean" and len(rows) == 7
