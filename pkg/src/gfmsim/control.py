"""Per-inverter cascaded grid-forming controller.

Droop with synchronisation and sharing corrections, dq voltage and current
PI loops, duty computation and the relay state machine used when a unit
synchronises onto an existing AC system. Controller state and gains are
flat float64 vectors (index constants below) so the composed control step
compiles with numba; :class:`ControlGains` and :class:`InverterCtrlState`
are the readable views.
"""

import math
from dataclasses import dataclass, fields

import numba
import numpy as np

from gfmsim.transforms import ab_to_dq, clarke, dq_to_ab, inv_clarke

# sync phases
ISOLATED = 0
SYNCING = 1
CONNECTED = 2
PHASE_NAMES = ("Isolated", "Syncing", "Connected")

# gain vector layout
G_KPVD = 0
G_KIVD = 1
G_KPVQ = 2
G_KIVQ = 3
G_KPID = 4
G_KIID = 5
G_KPIQ = 6
G_KIIQ = 7
G_KDRP = 8
G_KDRQ = 9
G_WSTAR = 10
G_VMSTAR = 11
G_KPW = 12
G_KIW = 13
G_KPV = 14
G_KIV = 15
G_KFB = 16
G_LV = 17
G_WC_PQ = 18
G_WC_VFIL = 19
G_CG = 20
G_LG = 21
G_VDC = 22
G_INT_V_MAX = 23
G_INT_I_MAX = 24
G_EPS_TH = 25
G_EPS_V = 26
G_T_HOLD = 27
G_LV_SIGN = 28
G_LV_FILTER_I = 29
G_DT = 30
G_PSTAR = 31
G_QSTAR = 32
N_GAINS = 33

# controller state layout
S_THETA = 0
S_PF = 1
S_QF = 2
S_XVD = 3
S_XVQ = 4
S_XID = 5
S_XIQ = 6
S_DW = 7
S_XW = 8
S_DV = 9
S_XV = 10
S_RELAY = 11
S_VFIL = 12
S_PHASE = 13
S_OMEGA = 14
S_VREFD = 15
S_HOLD = 16
S_SAT = 17
S_TSYNC = 18
S_VQG = 19
S_VD = 20
N_CTRL = 21


@dataclass
class ControlGains:
    """Controller gains and settings (SI units, peak quantities)."""

    k_pvd: float = 0.187
    k_ivd: float = 0.5
    k_pvq: float = 0.52
    k_ivq: float = 1.16
    k_pid: float = 6.25
    k_iid: float = 55.0
    k_piq: float = 1.0
    k_iiq: float = 10.0
    k_drp: float = 2e-4
    k_drq: float = 1e-3
    omega_star: float = 2 * math.pi * 50
    v_m_star: float = 230 * math.sqrt(2)
    k_pw: float = 0.8
    k_iw: float = 0.8
    k_pv: float = 0.02
    k_iv: float = 0.3
    k_fb: float = 0.7
    L_v: float = 0.0
    omega_c_pq: float = 2 * math.pi * 10
    omega_c_vfil: float = 2 * math.pi * 10
    int_v_max: float = 200.0
    int_i_max: float = 0.0  # 0 selects v_dc
    eps_theta: float = 2.0
    eps_v: float = 2.0
    t_hold: float = 0.5
    lv_negate: bool = False
    lv_filter_current: bool = False
    dt: float = 50e-6
    P_star: float = 0.0
    Q_star: float = 0.0

    def validate(self):
        for f in fields(self):
            val = getattr(self, f.name)
            if isinstance(val, bool):
                continue
            if not math.isfinite(val):
                raise ValueError(f"gains.{f.name} must be finite, got {val!r}")
        for name in ("k_pvd", "k_ivd", "k_pvq", "k_ivq", "k_pid", "k_iid", "k_piq", "k_iiq",
                     "k_drp", "k_drq", "k_pw", "k_iw", "k_pv", "k_iv", "k_fb", "L_v", "t_hold"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"gains.{name} must be >= 0, got {getattr(self, name)!r}")
        for name in ("omega_star", "v_m_star", "omega_c_pq", "omega_c_vfil", "dt", "int_v_max"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"gains.{name} must be > 0, got {getattr(self, name)!r}")
        for name in ("omega_c_pq", "omega_c_vfil"):
            if getattr(self, name) * self.dt >= 1.0:
                raise ValueError(f"gains.{name} * dt must be < 1")

    def to_vector(self, plant):
        g = np.zeros(N_GAINS)
        g[G_KPVD], g[G_KIVD], g[G_KPVQ], g[G_KIVQ] = self.k_pvd, self.k_ivd, self.k_pvq, self.k_ivq
        g[G_KPID], g[G_KIID], g[G_KPIQ], g[G_KIIQ] = self.k_pid, self.k_iid, self.k_piq, self.k_iiq
        g[G_KDRP], g[G_KDRQ] = self.k_drp, self.k_drq
        g[G_WSTAR], g[G_VMSTAR] = self.omega_star, self.v_m_star
        g[G_KPW], g[G_KIW], g[G_KPV], g[G_KIV], g[G_KFB] = self.k_pw, self.k_iw, self.k_pv, self.k_iv, self.k_fb
        g[G_LV] = self.L_v
        g[G_WC_PQ], g[G_WC_VFIL] = self.omega_c_pq, self.omega_c_vfil
        g[G_CG], g[G_LG], g[G_VDC] = plant.C_g, plant.L_g, plant.v_dc
        g[G_INT_V_MAX] = self.int_v_max
        g[G_INT_I_MAX] = self.int_i_max if self.int_i_max > 0.0 else plant.v_dc
        g[G_EPS_TH], g[G_EPS_V], g[G_T_HOLD] = self.eps_theta, self.eps_v, self.t_hold
        g[G_LV_SIGN] = -1.0 if self.lv_negate else 1.0
        g[G_LV_FILTER_I] = 1.0 if self.lv_filter_current else 0.0
        g[G_DT] = self.dt
        g[G_PSTAR], g[G_QSTAR] = self.P_star, self.Q_star
        return g


@dataclass
class InverterCtrlState:
    """Readable snapshot of one controller's state vector."""

    theta: float
    P_filt: float
    Q_filt: float
    int_v: tuple
    int_i: tuple
    delta_omega: float
    int_omega: float
    delta_v: float
    int_vmag: float
    S: int
    v_fil: float
    sync_phase: str
    omega: float
    saturation_count: int

    @classmethod
    def from_vector(cls, s):
        return cls(
            theta=s[S_THETA], P_filt=s[S_PF], Q_filt=s[S_QF],
            int_v=(s[S_XVD], s[S_XVQ]), int_i=(s[S_XID], s[S_XIQ]),
            delta_omega=s[S_DW], int_omega=s[S_XW], delta_v=s[S_DV], int_vmag=s[S_XV],
            S=int(s[S_RELAY]), v_fil=s[S_VFIL], sync_phase=PHASE_NAMES[int(s[S_PHASE])],
            omega=s[S_OMEGA], saturation_count=int(s[S_SAT]),
        )


def new_ctrl_state(gains, theta=0.0, phase=CONNECTED):
    s = np.zeros(N_CTRL)
    s[S_THETA] = theta % (2 * math.pi)
    s[S_OMEGA] = gains.omega_star
    s[S_VREFD] = gains.v_m_star
    s[S_PHASE] = phase
    s[S_RELAY] = 1.0 if phase == CONNECTED else 0.0
    return s


@numba.njit(cache=True)
def measure_power(v_d, v_q, i_d, i_q):
    """Instantaneous (p, q); positive q means the unit sources inductive VArs."""
    p = 1.5 * (v_d * i_d + v_q * i_q)
    q = 1.5 * (v_q * i_d - v_d * i_q)
    return p, q


@numba.njit(cache=True)
def _lowpass(y_prev, u, a):
    return y_prev + a * (u - y_prev)


def lowpass_update(y_prev, u, omega_c, dt):
    """One step of the discrete first-order lag ``y += dt*omega_c*(u - y)``."""
    if not (omega_c > 0.0 and dt > 0.0):
        raise ValueError("lowpass needs omega_c > 0 and dt > 0")
    a = dt * omega_c
    if a >= 1.0:
        raise ValueError(f"lowpass dt*omega_c = {a:g} must be < 1")
    return _lowpass(y_prev, u, a)


@numba.njit(cache=True)
def droop(p_filt, q_filt, p_star, q_star, d_omega, d_v, d_q, g):
    omega = g[G_WSTAR] - g[G_KDRP] * (p_filt - p_star) - d_omega
    v_d = g[G_VMSTAR] - g[G_KDRQ] * (q_filt - q_star) - d_v - d_q
    return omega, v_d, 0.0


@numba.njit(cache=True)
def apply_virtual_impedance(v_d, v_q, i_d, i_q, omega, l_v):
    if l_v == 0.0:
        return v_d, v_q
    return v_d + omega * l_v * i_q, v_q - omega * l_v * i_d


@numba.njit(cache=True)
def _clamp(x, lim):
    if x > lim:
        return lim
    if x < -lim:
        return -lim
    return x


@numba.njit(cache=True)
def voltage_loop(vref_d, vref_q, v_d, v_q, i_d, i_q, omega, s, g, dt):
    """Voltage PI with current feedforward; returns the filter current reference.

    The capacitive decoupling term deliberately uses v_d on both rows, matching
    the reference controller rather than the textbook v_q / v_d cross terms.
    """
    ev_d = vref_d - v_d
    ev_q = vref_q - v_q
    lim = g[G_INT_V_MAX]
    s[S_XVD] = _clamp(s[S_XVD] + g[G_KIVD] * ev_d * dt, lim)
    s[S_XVQ] = _clamp(s[S_XVQ] + g[G_KIVQ] * ev_q * dt, lim)
    cw = g[G_CG] * omega
    isd = g[G_KPVD] * ev_d + s[S_XVD] + i_d - v_d * cw
    isq = g[G_KPVQ] * ev_q + s[S_XVQ] + i_q + v_d * cw
    return isd, isq


@numba.njit(cache=True)
def current_loop(isref_d, isref_q, is_d, is_q, v_d, v_q, omega, s, g, dt):
    ei_d = isref_d - is_d
    ei_q = isref_q - is_q
    lim = g[G_INT_I_MAX]
    s[S_XID] = _clamp(s[S_XID] + g[G_KIID] * ei_d * dt, lim)
    s[S_XIQ] = _clamp(s[S_XIQ] + g[G_KIIQ] * ei_q * dt, lim)
    lw = g[G_LG] * omega
    vsd = g[G_KPID] * ei_d + s[S_XID] + v_d - is_q * lw
    vsq = g[G_KPIQ] * ei_q + s[S_XIQ] + v_q + is_d * lw
    return vsd, vsq


@numba.njit(cache=True)
def duty(vs_d, vs_q, theta, v_dc):
    """Per-phase duty ratios clamped to [-1, 1] and the number of clamped phases."""
    alpha, beta = dq_to_ab(vs_d, vs_q, theta)
    a, b, c = inv_clarke(alpha, beta)
    da = a / v_dc
    db = b / v_dc
    dc = c / v_dc
    n_clamped = 0
    if abs(da) > 1.0:
        n_clamped += 1
        da = _clamp(da, 1.0)
    if abs(db) > 1.0:
        n_clamped += 1
        db = _clamp(db, 1.0)
    if abs(dc) > 1.0:
        n_clamped += 1
        dc = _clamp(dc, 1.0)
    return da, db, dc, n_clamped


@numba.njit(cache=True)
def sync_step(vg_alpha, vg_beta, s, g, dt):
    """Advance the phase/magnitude synchronisation PIs and the relay logic.

    Returns 1 when the relay closes on this step, else 0. Errors are taken as
    (own - system) so that, applied with the negative sign in the droop law, the
    corrections pull the unit towards the established system.
    """
    phase = int(s[S_PHASE])
    if phase == ISOLATED:
        return 0
    vgd, vgq = ab_to_dq(vg_alpha, vg_beta, s[S_THETA])
    s[S_VQG] = vgq
    s[S_VFIL] = _lowpass(s[S_VFIL], math.hypot(vg_alpha, vg_beta), dt * g[G_WC_VFIL])
    if s[S_RELAY] == 0.0:
        e_w = -vgq
        e_v = s[S_VREFD] - s[S_VFIL]
    else:
        e_w = -g[G_KFB] * s[S_DW]
        e_v = -g[G_KFB] * s[S_DV]
    s[S_XW] += g[G_KIW] * e_w * dt
    s[S_DW] = g[G_KPW] * e_w + s[S_XW]
    s[S_XV] += g[G_KIV] * e_v * dt
    s[S_DV] = g[G_KPV] * e_v + s[S_XV]

    if phase == SYNCING:
        s[S_TSYNC] += dt
        if abs(vgq) < g[G_EPS_TH] and abs(s[S_VFIL] - s[S_VREFD]) < g[G_EPS_V]:
            s[S_HOLD] += dt
        else:
            s[S_HOLD] = 0.0
        if s[S_HOLD] >= g[G_T_HOLD] - 0.5 * dt:
            s[S_PHASE] = CONNECTED
            s[S_RELAY] = 1.0
            return 1
    return 0
