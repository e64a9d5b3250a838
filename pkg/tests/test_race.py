import numpy as np
import pytest

from conftest import make_params
from scalelab import laws, race, rng
from scalelab.decoders import WindowConfig


def problem(**over):
    kw = dict(m=0.05, b=0.05, sigma1_sq=2e-4, sigma2=0.1, w_left=-3.0, w_right=7.0,
              ell_star=40.0, tau_star=120.0, v_window=0.1)
    kw.update(over)
    return race.FpProblem(**kw)


def test_adjusted_window_limits(synth):
    p = synth.at(0.455)
    # I_s -> infinity: W' -> W
    assert race.adjusted_window(synth, 0.455, 20, 10**9) == pytest.approx(20, rel=1e-6)
    # window shorter than the start-up distance: clamp at 0
    assert race.adjusted_window(synth, 0.455, 3, 6) == 0.0
    # equal speeds split the reach in half
    P = make_params()
    P.tables["v_bp"] = np.full(len(P.grid), 0.1)
    p = P.at(0.455)
    want = (20 - (p.i_start + p.i_end) * 0.1) / 2
    assert race.adjusted_window(P, 0.455, 20, 10) == pytest.approx(want)
    with pytest.raises(ValueError):
        race.adjusted_window(synth, 0.455, 0, 6)


def test_build_problem_fields(synth):
    p = synth.at(0.455)
    pr = race.build_problem(synth, 0.455, 1000, 50, WindowConfig(20, 60, 10))
    gap = p.epsilon_star - 0.455
    assert pr.m == pytest.approx(p.c_f * p.v_pd - 0.1)
    assert pr.m > 0
    assert pr.b == pytest.approx(p.theta_bp_sw * gap)
    assert pr.sigma1_sq == pytest.approx(2 * pr.b * p.v_pd**2 * p.nu_bp_sw / 1000)
    assert pr.ell_star == pytest.approx(60 - p.i_start + 1 / (p.c_f * p.v_pd))
    assert pr.w_left == pytest.approx(1 - pr.ell_star * 0.1)
    assert pr.W == 20
    assert pr.tau_star == pytest.approx(pr.ell_star + 49 * 10)
    fewer = race.build_problem(synth, 0.455, 1000, 50, WindowConfig(20, 59, 10))
    assert pr.ell_star - fewer.ell_star == pytest.approx(1.0, abs=1e-12)
    huge = race.build_problem(synth, 0.455, 1000, 50, WindowConfig(20, 60, 10**9))
    assert huge.m == pytest.approx(p.c_f * p.v_pd, rel=1e-6)


def test_build_problem_warns_when_window_outruns(synth, caplog):
    race.build_problem(synth, 0.47, 1000, 50, WindowConfig(20, 60, 6))
    assert "slower than the window" in caplog.text


def test_problem_invariants():
    with pytest.raises(ValueError):
        problem(b=0)
    with pytest.raises(ValueError):
        problem(w_right=-4.0)
    with pytest.raises(ValueError):
        problem(tau_star=0)


def test_operator_conserves_except_at_absorbing_face():
    pr = problem()
    ee, pe = race._grid(pr, 30, 40)
    A = race.fp_operator(pr, ee, pe)
    cols = np.asarray(A.sum(axis=0)).reshape(30, 40)
    # every cell off the W_L column conserves mass; the W_R face is zero-flux
    assert np.abs(cols[:, 1:]).max() < 1e-10
    assert (cols[:, 0] < 0).all()
    off = A.copy()
    off.setdiag(0)
    assert off.min() >= 0


def test_face_rates_limits():
    v = np.array([-2.0, 0.0, 3.0])
    f, b = race._face_rates(v, 0.0, 0.5)
    assert np.allclose(f, [0, 0, 6]) and np.allclose(b, [4, 0, 0])
    f, b = race._face_rates(np.zeros(1), 0.3, 0.5)
    assert f[0] == pytest.approx(0.3 / 0.25) and b[0] == pytest.approx(0.3 / 0.25)
    # forward minus backward is the convective flux for any Peclet number
    f, b = race._face_rates(v, 0.7, 0.5)
    assert np.allclose((f - b) * 0.5, v)


@pytest.mark.parametrize("m, want", [(0.1, 0.0), (-0.1, 1.0)])
def test_zero_noise_fp(m, want):
    pr = problem(m=m, sigma1_sq=0.0, sigma2=0.0, tau_star=400.0)
    _, p = race.fp_solve(pr, n_eta=10, n_pl=40)
    assert p == pytest.approx(want, abs=1e-6)


def test_zero_noise_em():
    pr = problem(m=0.1, sigma1_sq=0.0, sigma2=0.0)
    assert race.em_simulate(pr, 2000, seed=1) == 0.0
    pr = problem(m=-0.1, sigma1_sq=0.0, sigma2=0.0, tau_star=400.0)
    assert race.em_simulate(pr, 2000, seed=1) == 1.0


def test_em_step_guard():
    with pytest.raises(ValueError):
        race.em_simulate(problem(b=3.0), 10, dt=0.1)


def test_em_standard_error_scaling():
    # four times the paths halves the spread over repeats
    pr = problem(m=0.0, tau_star=30.0, w_left=-1.5)
    sd = {}
    for n, seed in ((500, 21), (2000, 22)):
        x = [race.em_simulate(pr, n, rng=rng.stream(seed, 9, k)) for k in range(120)]
        p = np.mean(x)
        sd[n] = np.std(x, ddof=1)
        assert sd[n] == pytest.approx(np.sqrt(p * (1 - p) / n), rel=0.2)
    assert sd[500] / sd[2000] == pytest.approx(2.0, rel=0.25)


def test_mass_history_monotone_and_bounded():
    fld, p = race.fp_solve(problem(m=0.0), n_eta=40, n_pl=100)
    h = fld.mass_history
    assert h[0] == pytest.approx(1.0, abs=1e-9)
    assert np.all(np.diff(h) <= 1e-12)
    assert 0 < p < 1 and p == pytest.approx(1 - h[-1])
    assert (fld.density >= 0).all()
    assert fld.clipped == 0


def test_fp_matches_em_on_a_small_problem():
    pr = problem(m=0.0, sigma1_sq=4e-4, tau_star=150.0)
    _, p = race.fp_solve(pr, n_pl=200)
    q = race.em_simulate(pr, 40_000, seed=3)
    assert p == pytest.approx(q, abs=0.02)


def test_sensitivity_direction(synth):
    # coarse grid; only the ordering matters here
    def pr_o(I_in, I_s):
        prob = race.build_problem(synth, 0.455, 1000, 50, WindowConfig(20, I_in, I_s))
        return race.fp_solve(prob, n_eta=40, n_pl=80, dt=2, record=False)[1]

    grid = np.array([[pr_o(i, s) for s in (6, 7, 10)] for i in (40, 60, 80)])
    assert np.all(np.diff(grid, axis=0) <= 1e-9)
    assert np.all(np.diff(grid, axis=1) <= 1e-9)
    assert grid[0, 0] > grid[-1, -1]


def test_fer_bounds_and_reduction(synth, monkeypatch):
    cfg = WindowConfig(20, 60, 10)
    pred = race.predict_window(synth, 0.455, 1000, 50, cfg, n_eta=40, dt=2)
    assert pred.fer_pred >= laws.fer_unlimited(synth, 0.455, 1000, laws.SlidingWindowLaw(50, pred.w_prime))
    assert 0 <= pred.pr_overtake <= 1
    monkeypatch.setattr(race, "fp_solve", lambda *a, **k: (race.PdfField(np.zeros(1), np.zeros(1), np.zeros((1, 1)), 0.0, 1.0), 0.0))
    monkeypatch.setattr(race, "adjusted_window", lambda P, e, W, I_s: float(W))
    got = race.fer_sliding_window_limited(synth, 0.455, 1000, 50, cfg)
    assert got == laws.fer_unlimited(synth, 0.455, 1000, laws.SlidingWindowLaw(50, 20))


def test_prediction_json_roundtrip(synth):
    import json

    pred = race.predict_window(synth, 0.44, 1000, 50, WindowConfig(20, 60, 10), n_eta=20, dt=4)
    doc = json.loads(pred.to_json(with_history=True))
    assert set(doc) == {"config", "pr_overtake", "w_prime", "fer_unlimited", "fer_pred", "grid", "mass_history"}
    assert doc["grid"]["n_pl"] == 400 and doc["config"]["I_s"] == 10
