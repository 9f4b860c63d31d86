"""Average-value electrical model of the two-inverter island.

Two bridges with LC output filters feed a common PCC through line
inductors. The PCC carries a resistive load and a grid-following current
injector. Everything lives in the stationary alpha-beta frame; the PCC
voltage is algebraic (no shunt capacitance at the PCC).

The state is a flat float64 vector so that the stepping code can be
compiled with numba. Index layout per inverter ``n`` (``base = 6 * n``)::

    base + 0, 1   filter inductor current i_s      (alpha, beta)
    base + 2, 3   filter capacitor voltage v        (alpha, beta)
    base + 4, 5   line current i_line               (alpha, beta)

followed by the injector current at ``IG`` and ``IG + 1``.
"""

import math
from dataclasses import dataclass, field

import numba
import numpy as np

N_INV = 2
IS = 0
V = 2
IL = 4
IG = 6 * N_INV
N_STATE = IG + 2

# plant parameter vector layout
P_LG = 0
P_CG = 1
P_LLINE = 2
P_RF = 3
P_RLINE = 4
P_RLOAD = 5
P_VDC = 6
P_DT = 7
P_TAU_G = 8
P_OMEGA_G = 9
P_VMIN_G = 10
P_LOAD_ON = 11
P_CAP_ON = 12
N_PLANT_P = 13

DIVERGENCE_BOUND = 1e6

STATE_NAMES = tuple(
    [f"{q}{n + 1}_{ax}" for n in range(N_INV) for q in ("i_s", "v", "i_line") for ax in ("alpha", "beta")]
    + ["i_gfli_alpha", "i_gfli_beta"]
)


class NonFiniteInput(ValueError):
    pass


@dataclass
class PlantParams:
    L_g: float = 2.2e-3
    C_g: float = 10e-6
    L_line: float = 2.2e-3
    R_f: float = 0.1
    R_line: float = 0.05
    R_load: float = 3 * 230.0**2 / 2000.0
    v_dc: float = 700.0
    dt_plant: float = 10e-6
    # test-fixture switches; both on for every physical run
    load_coupling: bool = True
    capacitor: bool = True

    def validate(self, dt_control=None):
        for name in ("L_g", "C_g", "L_line", "R_f", "R_line", "R_load", "v_dc", "dt_plant"):
            val = getattr(self, name)
            if not math.isfinite(val) or val <= 0.0:
                # R_f = 0 is allowed for lossless oracle fixtures
                if name == "R_f" and val == 0.0:
                    continue
                raise ValueError(f"plant.{name} must be finite and > 0, got {val!r}")
        if dt_control is not None and self.dt_plant > dt_control * (1 + 1e-12):
            raise ValueError(f"plant.dt_plant={self.dt_plant} exceeds control period {dt_control}")


@dataclass
class GfliParams:
    """Injector setpoints in the PCC-voltage-aligned frame.

    A positive ``i_q_ref`` draws lagging current, i.e. the injector behaves as
    an inductive VAr load and the grid-forming units supply positive Q.
    """

    i_d_ref: float = 0.0
    i_q_ref: float = 0.0
    tau_gfli: float = 20e-3
    omega: float = 2 * math.pi * 50
    v_min: float = 1.0

    def validate(self):
        if not self.tau_gfli > 0.0:
            raise ValueError(f"gfli.tau_gfli must be > 0, got {self.tau_gfli!r}")


def plant_vector(params, gfli):
    p = np.zeros(N_PLANT_P)
    p[P_LG] = params.L_g
    p[P_CG] = params.C_g
    p[P_LLINE] = params.L_line
    p[P_RF] = params.R_f
    p[P_RLINE] = params.R_line
    p[P_RLOAD] = params.R_load
    p[P_VDC] = params.v_dc
    p[P_DT] = params.dt_plant
    p[P_TAU_G] = gfli.tau_gfli
    p[P_OMEGA_G] = gfli.omega
    p[P_VMIN_G] = gfli.v_min
    p[P_LOAD_ON] = 1.0 if params.load_coupling else 0.0
    p[P_CAP_ON] = 1.0 if params.capacitor else 0.0
    return p


@dataclass
class PlantState:
    """Electrical state of the network; ``x`` follows the module index layout."""

    x: np.ndarray = field(default_factory=lambda: np.zeros(N_STATE))

    def i_s(self, n):
        b = 6 * n + IS
        return self.x[b:b + 2].copy()

    def v(self, n):
        b = 6 * n + V
        return self.x[b:b + 2].copy()

    def i_line(self, n):
        b = 6 * n + IL
        return self.x[b:b + 2].copy()

    @property
    def i_gfli(self):
        return self.x[IG:IG + 2].copy()

    def v_pcc(self, params):
        return np.array(pcc_voltage(self.x, plant_vector(params, GfliParams())))

    def copy(self):
        return PlantState(self.x.copy())


@numba.njit(cache=True)
def pcc_voltage(x, p):
    ia = x[IG]
    ib = x[IG + 1]
    for n in range(N_INV):
        ia += x[6 * n + IL]
        ib += x[6 * n + IL + 1]
    r = p[P_RLOAD] * p[P_LOAD_ON]
    return r * ia, r * ib


@numba.njit(cache=True)
def derivatives_into(x, vb, breaker, gfli_ref, p, dx):
    vpa, vpb = pcc_voltage(x, p)
    lg = p[P_LG]
    cg = p[P_CG]
    ll = p[P_LLINE]
    rf = p[P_RF]
    rl = p[P_RLINE]
    for n in range(N_INV):
        b = 6 * n
        isa = x[b + IS]
        isb = x[b + IS + 1]
        va = x[b + V]
        vb_ = x[b + V + 1]
        ila = x[b + IL]
        ilb = x[b + IL + 1]
        if p[P_CAP_ON] > 0.0:
            dx[b + IS] = (vb[n, 0] - va - rf * isa) / lg
            dx[b + IS + 1] = (vb[n, 1] - vb_ - rf * isb) / lg
            dx[b + V] = (isa - ila) / cg
            dx[b + V + 1] = (isb - ilb) / cg
        else:
            dx[b + IS] = (vb[n, 0] - rf * isa) / lg
            dx[b + IS + 1] = (vb[n, 1] - rf * isb) / lg
            dx[b + V] = 0.0
            dx[b + V + 1] = 0.0
        if breaker[n]:
            dx[b + IL] = (va - vpa - rl * ila) / ll
            dx[b + IL + 1] = (vb_ - vpb - rl * ilb) / ll
        else:
            dx[b + IL] = 0.0
            dx[b + IL + 1] = 0.0

    # injector: first-order lag in the PCC-aligned frame, written in alpha-beta
    ga = x[IG]
    gb = x[IG + 1]
    mag = math.hypot(vpa, vpb)
    if mag > p[P_VMIN_G]:
        c = vpa / mag
        s = vpb / mag
        ta = c * gfli_ref[0] - s * gfli_ref[1]
        tb = s * gfli_ref[0] + c * gfli_ref[1]
    else:
        ta = 0.0
        tb = 0.0
    w = p[P_OMEGA_G]
    tau = p[P_TAU_G]
    dx[IG] = (ta - ga) / tau - w * gb
    dx[IG + 1] = (tb - gb) / tau + w * ga


@numba.njit(cache=True)
def rk4_step_into(x, vb, breaker, gfli_ref, p, k1, k2, k3, k4, tmp):
    h = p[P_DT]
    n = x.shape[0]
    derivatives_into(x, vb, breaker, gfli_ref, p, k1)
    for j in range(n):
        tmp[j] = x[j] + 0.5 * h * k1[j]
    derivatives_into(tmp, vb, breaker, gfli_ref, p, k2)
    for j in range(n):
        tmp[j] = x[j] + 0.5 * h * k2[j]
    derivatives_into(tmp, vb, breaker, gfli_ref, p, k3)
    for j in range(n):
        tmp[j] = x[j] + h * k3[j]
    derivatives_into(tmp, vb, breaker, gfli_ref, p, k4)
    for j in range(n):
        x[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j])
    for m in range(N_INV):
        if not breaker[m]:
            x[6 * m + IL] = 0.0
            x[6 * m + IL + 1] = 0.0


@numba.njit(cache=True)
def max_abs(x):
    m = 0.0
    for j in range(x.shape[0]):
        a = abs(x[j])
        if not a <= m:  # NaN propagates as "larger"
            m = a if a == a else np.inf
    return m


def _check_finite(state, bridge_voltages):
    for j, val in enumerate(state.x):
        if not math.isfinite(val):
            raise NonFiniteInput(f"non-finite plant state variable {STATE_NAMES[j]} = {val!r}")
    vb = np.asarray(bridge_voltages, dtype=float)
    for n in range(N_INV):
        for k, ax in enumerate(("alpha", "beta")):
            if not math.isfinite(vb[n, k]):
                raise NonFiniteInput(f"non-finite bridge voltage v_bridge{n + 1}_{ax} = {vb[n, k]!r}")


def _prep(bridge_voltages, breaker_flags, gfli):
    vb = np.ascontiguousarray(bridge_voltages, dtype=float).reshape(N_INV, 2)
    br = np.asarray(breaker_flags, dtype=np.bool_).reshape(N_INV)
    ref = np.array([gfli.i_d_ref, gfli.i_q_ref], dtype=float)
    return vb, br, ref


def derivatives(state, bridge_voltages, breaker_flags, gfli, params):
    """Time derivative of the plant state with bridge voltages held fixed."""
    _check_finite(state, bridge_voltages)
    vb, br, ref = _prep(bridge_voltages, breaker_flags, gfli)
    dx = np.zeros(N_STATE)
    derivatives_into(state.x, vb, br, ref, plant_vector(params, gfli), dx)
    return PlantState(dx)


class PlantStepper:
    """Reusable RK4 stepper; ``diverged`` latches once any variable exceeds ``bound``."""

    def __init__(self, params, gfli, bound=DIVERGENCE_BOUND):
        self.params = params
        self.gfli = gfli
        self.p = plant_vector(params, gfli)
        self.bound = bound
        self.diverged = False
        self._work = [np.zeros(N_STATE) for _ in range(5)]

    def step(self, state, bridge_voltages, breaker_flags):
        vb, br, ref = _prep(bridge_voltages, breaker_flags, self.gfli)
        new = state.copy()
        rk4_step_into(new.x, vb, br, ref, self.p, *self._work)
        if not max_abs(new.x) <= self.bound:
            self.diverged = True
        return new


def step(state, bridge_voltages, breaker_flags, gfli, params):
    """Advance ``state`` by one plant step (classical RK4, zero-order-held bridge voltages)."""
    _check_finite(state, bridge_voltages)
    return PlantStepper(params, gfli).step(state, bridge_voltages, breaker_flags)


@dataclass
class Measurement:
    v: np.ndarray
    i_s: np.ndarray
    i_line: np.ndarray
    v_pcc: np.ndarray


class Sensors:
    """Read-out of the plant state with optional additive Gaussian noise."""

    def __init__(self, params, noise_std=0.0, seed=0):
        self.p = plant_vector(params, GfliParams())
        self.noise_std = noise_std
        self.rng = np.random.default_rng(seed)

    def measure(self, state):
        x = state.x
        if self.noise_std > 0.0:
            x = x + self.rng.normal(0.0, self.noise_std, size=x.shape)
        vpcc = np.array(pcc_voltage(x, self.p))
        return [
            Measurement(x[6 * n + V:6 * n + V + 2].copy(), x[6 * n + IS:6 * n + IS + 2].copy(),
                        x[6 * n + IL:6 * n + IL + 2].copy(), vpcc)
            for n in range(N_INV)
        ]


def measure(state, params, noise_std=0.0, seed=0):
    return Sensors(params, noise_std, seed).measure(state)


def power_terms(state, bridge_voltages, breaker_flags, gfli, params):
    """Instantaneous power flows (W) at ``state``, amplitude-invariant scaling.

    ``balance`` is bridge + injector - load - losses - dE/dt and vanishes
    identically; in a balanced steady state dE/dt is zero as well.
    """
    x = state.x
    p = plant_vector(params, gfli)
    vb, br, ref = _prep(bridge_voltages, breaker_flags, gfli)
    dx = np.zeros(N_STATE)
    derivatives_into(x, vb, br, ref, p, dx)
    vpa, vpb = pcc_voltage(x, p)
    p_bridge = 0.0
    p_loss = 0.0
    de = 0.0
    cap = 1.0 if params.capacitor else 0.0
    for n in range(N_INV):
        b = 6 * n
        i_s, v, i_l = x[b + IS:b + IS + 2], x[b + V:b + V + 2], x[b + IL:b + IL + 2]
        p_bridge += 1.5 * float(vb[n] @ i_s)
        p_loss += 1.5 * (params.R_f * float(i_s @ i_s) + params.R_line * float(i_l @ i_l))
        de += 1.5 * (params.L_g * float(i_s @ dx[b + IS:b + IS + 2])
                     + cap * params.C_g * float(v @ dx[b + V:b + V + 2])
                     + params.L_line * float(i_l @ dx[b + IL:b + IL + 2]))
    p_gfli = 1.5 * (vpa * x[IG] + vpb * x[IG + 1])
    r = params.R_load if params.load_coupling else 0.0
    p_load = 1.5 * (vpa * vpa + vpb * vpb) / r if r > 0.0 else 0.0
    return {
        "bridge": p_bridge, "gfli": p_gfli, "load": p_load, "loss": p_loss, "dE_dt": de,
        "balance": p_bridge + p_gfli - p_load - p_loss - de,
    }
