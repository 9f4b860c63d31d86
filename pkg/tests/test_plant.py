import math

import numpy as np
import pytest

from gfmsim import plant as P
from gfmsim.plant import GfliParams, PlantParams, PlantState


def _stepper(params, gfli=None):
    gfli = gfli or GfliParams()
    p = P.plant_vector(params, gfli)
    work = [np.zeros(P.N_STATE) for _ in range(5)]
    ref = np.array([gfli.i_d_ref, gfli.i_q_ref])

    def step(x, vb, breaker):
        P.rk4_step_into(x, vb, breaker, ref, p, *work)
    return step


OPEN = np.array([False, False])


def _rl_current(dt, t_end, v=100.0):
    params = PlantParams(capacitor=False, load_coupling=False, dt_plant=dt)
    step = _stepper(params)
    x = np.zeros(P.N_STATE)
    vb = np.array([[v, 0.0], [0.0, 0.0]])
    for _ in range(int(round(t_end / dt))):
        step(x, vb, OPEN)
    tau = params.L_g / params.R_f
    exact = v / params.R_f * (1.0 - math.exp(-t_end / tau))
    return x[P.IS], exact


def test_rl_step_matches_analytic():
    got, exact = _rl_current(10e-6, 0.05)
    assert abs(got - exact) / exact < 1e-3


def test_rk4_order_on_rl_oracle():
    g1, exact = _rl_current(1e-3, 0.044)
    g2, _ = _rl_current(0.5e-3, 0.044)
    ratio = abs(g1 - exact) / abs(g2 - exact)
    assert 12.0 <= ratio <= 20.0


def _lc_run(n_periods=10):
    params = PlantParams(R_f=0.0, dt_plant=10e-6)
    step = _stepper(params)
    x = np.zeros(P.N_STATE)
    x[P.V] = 100.0
    w0 = 1.0 / math.sqrt(params.L_g * params.C_g)
    n = int(n_periods * 2 * math.pi / w0 / params.dt_plant)
    vb = np.zeros((2, 2))
    v = np.empty(n + 1)
    i = np.empty(n + 1)
    v[0], i[0] = x[P.V], x[P.IS]
    for k in range(n):
        step(x, vb, OPEN)
        v[k + 1], i[k + 1] = x[P.V], x[P.IS]
    return params, w0, np.arange(n + 1) * params.dt_plant, v, i


def test_lc_resonance_frequency_and_waveform():
    params, w0, t, v, _ = _lc_run()
    # downward zero crossings, linearly interpolated
    idx = np.nonzero((v[:-1] > 0) & (v[1:] <= 0))[0]
    tc = t[idx] + v[idx] / (v[idx] - v[idx + 1]) * params.dt_plant
    period = np.mean(np.diff(tc))
    assert abs(2 * math.pi / period - w0) / w0 < 1e-3
    assert np.max(np.abs(v - 100.0 * np.cos(w0 * t))) < 0.1


def test_lc_energy_conserved():
    params, _, _, v, i = _lc_run()
    e = 0.5 * params.L_g * i**2 + 0.5 * params.C_g * v**2
    assert np.max(np.abs(e - e[0])) / e[0] < 1e-5


def test_power_identity_random_states():
    rng = np.random.default_rng(3)
    params = PlantParams()
    gfli = GfliParams(i_d_ref=1.0, i_q_ref=5.0)
    for _ in range(50):
        st = PlantState(rng.normal(0.0, 50.0, P.N_STATE))
        vb = rng.normal(0.0, 300.0, (2, 2))
        terms = P.power_terms(st, vb, [True, True], gfli, params)
        assert abs(terms["balance"]) < 1e-6 * (1.0 + abs(terms["bridge"]))


def test_breaker_open_isolates_bridge():
    params = PlantParams()
    rng = np.random.default_rng(4)
    x0 = rng.normal(0.0, 20.0, P.N_STATE)
    x0[6 + P.IL:6 + P.IL + 2] = 0.0
    breaker = np.array([True, False])
    outs = []
    for v2 in (0.0, 400.0, -250.0):
        x = x0.copy()
        step = _stepper(params)
        vb = np.array([[300.0, 20.0], [v2, -v2]])
        for _ in range(200):
            step(x, vb, breaker)
        outs.append(P.pcc_voltage(x, P.plant_vector(params, GfliParams())))
    assert outs[0] == outs[1] == outs[2]


def test_step_is_deterministic():
    st = PlantState(np.linspace(-3, 3, P.N_STATE))
    vb = np.array([[310.0, 5.0], [300.0, -5.0]])
    a = P.step(st, vb, [True, True], GfliParams(i_q_ref=3.0), PlantParams())
    b = P.step(st, vb, [True, True], GfliParams(i_q_ref=3.0), PlantParams())
    assert np.array_equal(a.x, b.x)


def test_non_finite_input_names_variable():
    x = np.zeros(P.N_STATE)
    x[P.V + 1] = np.nan
    with pytest.raises(P.NonFiniteInput, match=P.STATE_NAMES[P.V + 1]):
        P.step(PlantState(x), np.zeros((2, 2)), [True, True], GfliParams(), PlantParams())
    with pytest.raises(P.NonFiniteInput, match="bridge"):
        P.step(PlantState(), np.array([[np.inf, 0.0], [0.0, 0.0]]), [True, True], GfliParams(), PlantParams())


def test_divergence_flag_latches():
    stepper = P.PlantStepper(PlantParams(), GfliParams(), bound=10.0)
    st = stepper.step(PlantState(), np.array([[1e5, 0.0], [0.0, 0.0]]), [True, True])
    assert stepper.diverged
    stepper.step(st, np.zeros((2, 2)), [True, True])
    assert stepper.diverged


def test_injector_tracks_reference_in_pcc_frame():
    # a steady PCC voltage on the alpha axis: injector converges to (i_d, i_q) in that frame
    params = PlantParams()
    gfli = GfliParams(i_d_ref=2.0, i_q_ref=8.0)
    p = P.plant_vector(params, gfli)
    x = np.zeros(P.N_STATE)
    x[P.IL] = 325.0 / params.R_load  # PCC voltage ~ 325 V on alpha, held by freezing the line
    dx = np.zeros(P.N_STATE)
    P.derivatives_into(x, np.zeros((2, 2)), np.array([False, False]), np.array([2.0, 8.0]), p, dx)
    w = gfli.omega
    assert dx[P.IG] == pytest.approx(2.0 / gfli.tau_gfli, rel=1e-12)
    assert dx[P.IG + 1] == pytest.approx(8.0 / gfli.tau_gfli, rel=1e-12)
    x[P.IG] = 1.0
    P.derivatives_into(x, np.zeros((2, 2)), np.array([False, False]), np.array([0.0, 0.0]), p, dx)
    assert dx[P.IG] == pytest.approx(-1.0 / gfli.tau_gfli, rel=1e-12)
    assert dx[P.IG + 1] == pytest.approx(w, rel=1e-12)


def test_params_validate():
    with pytest.raises(ValueError):
        PlantParams(L_g=-1.0).validate()
    with pytest.raises(ValueError):
        PlantParams(dt_plant=100e-6).validate(50e-6)
    PlantParams(R_f=0.0).validate(50e-6)
