"""Deterministic virtual-time run loop.

The inner loop (control law, sharing correction and plant substeps) runs
compiled in :func:`advance` for whole stretches of control periods. The
Python scheduler stops it exactly at every boundary where something
discrete happens: scripted events, message sends on the channel's period
grid, and message deliveries. Between boundaries nothing changes outside
the compiled loop, so a chunked run is step-for-step identical to a
period-by-period one.
"""

import math

import numba
import numpy as np

from gfmsim import control as C
from gfmsim import plant as P
from gfmsim import qshare as Q
from gfmsim.harness.record import COLUMNS, RunRecord
from gfmsim.netchan import TIME_EPS, Link
from gfmsim.transforms import ab_to_dq

STATUS_OK = 0
STATUS_DIVERGED = 1
STATUS_SYNC_FAILED = 2

# recorder columns, fixed order (see record.COLUMNS)
R_T, R_W1, R_W2, R_VD1, R_VD2, R_P1, R_P2, R_Q1, R_Q2, R_DQ1, R_DQ2, R_VPCC, R_DELTAQ = range(13)
# extra diagnostic channels stored alongside
R_V1MAG, R_V2MAG, R_DW1, R_DW2, R_DV1, R_DV2 = range(13, 19)
N_REC = 19


@numba.njit(cache=True)
def _seed_noise(seed):
    np.random.seed(seed)


@numba.njit(cache=True)
def advance(k0, n_steps, x, ctrl, gains, pp, gfli_ref, breaker, qstate, qparams, known_q,
            n_sub, decim, rec, rec_idx, bound, sync_timeout, noise_std, closed_at, work, vb):
    """Run ``n_steps`` control periods starting at step index ``k0``.

    ``vb`` receives the bridge voltages held over the last plant substeps.
    Returns ``(status, steps_done, rec_idx)``.
    """
    n_inv = ctrl.shape[0]
    dt = gains[0, C.G_DT]
    meas = np.zeros(P.N_STATE)
    out = np.zeros(2)
    k1, k2, k3, k4, tmp = work[0], work[1], work[2], work[3], work[4]
    for j in range(n_steps):
        k = k0 + j
        for m in range(P.N_STATE):
            meas[m] = x[m]
        if noise_std > 0.0:
            for m in range(P.N_STATE):
                meas[m] += np.random.normal(0.0, noise_std)
        vpa, vpb = P.pcc_voltage(meas, pp)

        for n in range(n_inv):
            s = ctrl[n]
            g = gains[n]
            b = 6 * n
            theta = s[C.S_THETA]
            v_d, v_q = ab_to_dq(meas[b + P.V], meas[b + P.V + 1], theta)
            i_d, i_q = ab_to_dq(meas[b + P.IL], meas[b + P.IL + 1], theta)
            is_d, is_q = ab_to_dq(meas[b + P.IS], meas[b + P.IS + 1], theta)
            p_inst, q_inst = C.measure_power(v_d, v_q, i_d, i_q)
            a_pq = dt * g[C.G_WC_PQ]
            s[C.S_PF] = C._lowpass(s[C.S_PF], p_inst, a_pq)
            s[C.S_QF] = C._lowpass(s[C.S_QF], q_inst, a_pq)
            s[C.S_VD] = v_d

            if C.sync_step(vpa, vpb, s, g, dt) == 1:
                breaker[n] = True
                closed_at[n] = k * dt
            if int(s[C.S_PHASE]) == C.SYNCING and s[C.S_TSYNC] > sync_timeout:
                return STATUS_SYNC_FAILED, j, rec_idx

            Q.node_update(n, qstate[n], known_q[n], s[C.S_QF], qparams, dt)

            omega, vref_d, vref_q = C.droop(s[C.S_PF], s[C.S_QF], g[C.G_PSTAR], g[C.G_QSTAR],
                                            s[C.S_DW], s[C.S_DV], qstate[n, Q.Q_DELTA], g)
            s[C.S_VREFD] = vref_d
            s[C.S_OMEGA] = omega
            lv = g[C.G_LV] * g[C.G_LV_SIGN]
            if g[C.G_LV_FILTER_I] > 0.0:
                vref_d, vref_q = C.apply_virtual_impedance(vref_d, vref_q, is_d, is_q, omega, lv)
            else:
                vref_d, vref_q = C.apply_virtual_impedance(vref_d, vref_q, i_d, i_q, omega, lv)
            isr_d, isr_q = C.voltage_loop(vref_d, vref_q, v_d, v_q, i_d, i_q, omega, s, g, dt)
            vs_d, vs_q = C.current_loop(isr_d, isr_q, is_d, is_q, v_d, v_q, omega, s, g, dt)
            da, db, dc, n_clamped = C.duty(vs_d, vs_q, theta, g[C.G_VDC])
            s[C.S_SAT] += n_clamped
            vdc = g[C.G_VDC]
            vb[n, 0], vb[n, 1] = C.clarke(da * vdc, db * vdc, dc * vdc)

            theta = (theta + omega * dt) % (2.0 * math.pi)
            s[C.S_THETA] = theta

        if k % decim == 0 and rec_idx < rec.shape[0]:
            r = rec[rec_idx]
            r[R_T] = k * dt
            r[R_W1] = ctrl[0, C.S_OMEGA]
            r[R_W2] = ctrl[1, C.S_OMEGA]
            r[R_VD1] = ctrl[0, C.S_VD]
            r[R_VD2] = ctrl[1, C.S_VD]
            r[R_P1] = ctrl[0, C.S_PF]
            r[R_P2] = ctrl[1, C.S_PF]
            r[R_Q1] = ctrl[0, C.S_QF]
            r[R_Q2] = ctrl[1, C.S_QF]
            r[R_DQ1] = qstate[0, Q.Q_DELTA]
            r[R_DQ2] = qstate[1, Q.Q_DELTA]
            r[R_VPCC] = math.hypot(vpa, vpb)
            r[R_DELTAQ] = abs(ctrl[1, C.S_QF] - ctrl[0, C.S_QF])
            r[R_V1MAG] = math.hypot(x[P.V], x[P.V + 1])
            r[R_V2MAG] = math.hypot(x[6 + P.V], x[6 + P.V + 1])
            r[R_DW1] = ctrl[0, C.S_DW]
            r[R_DW2] = ctrl[1, C.S_DW]
            r[R_DV1] = ctrl[0, C.S_DV]
            r[R_DV2] = ctrl[1, C.S_DV]
            rec_idx += 1

        for _ in range(n_sub):
            P.rk4_step_into(x, vb, breaker, gfli_ref, pp, k1, k2, k3, k4, tmp)
        if not P.max_abs(x) <= bound:
            return STATUS_DIVERGED, j + 1, rec_idx
    return STATUS_OK, n_steps, rec_idx


def _gfli_setpoint(args, v_nom):
    if "Q" in args:
        # injector draws the commanded Q from the grid-forming units at nominal voltage
        return float(args.get("i_d", 0.0)), float(args["Q"]) / (1.5 * v_nom)
    return float(args.get("i_d", 0.0)), float(args.get("i_q", 0.0))


class Simulation:
    """Mutable run state for one scenario; :func:`run` drives it to completion."""

    def __init__(self, scenario):
        scenario.validate()
        self.sc = sc = scenario
        self.dt = sc.dt_control
        self.n_sub = int(round(self.dt / sc.plant.dt_plant))
        self.k_end = int(round(sc.t_end / self.dt))
        self.x = np.zeros(P.N_STATE)
        self.pp = P.plant_vector(sc.plant, sc.gfli)
        self.gfli_ref = np.array([sc.gfli.i_d_ref, sc.gfli.i_q_ref])
        self.gains = np.stack([g.to_vector(sc.plant) for g in sc.gains])
        self.ctrl = np.stack([
            C.new_ctrl_state(g, ini.theta0, C.CONNECTED if ini.connected else C.ISOLATED)
            for g, ini in zip(sc.gains, sc.init)
        ])
        self.breaker = np.array([ini.connected for ini in sc.init], dtype=np.bool_)
        self.qparams = sc.qshare.to_vector()
        self.qstate = np.zeros((2, Q.N_QSTATE))
        self.known_q = np.zeros((2, 2))
        self.nodes = [Q.QShareNode(n, sc.qshare, self.qstate[n], self.known_q[n]) for n in range(2)]
        self.links = [Link(0, 1, sc.channel), Link(1, 0, sc.channel)]
        n_rows = self.k_end // sc.decimation + 2
        self.rec = np.zeros((n_rows, N_REC))
        self.rec_idx = 0
        self.closed_at = np.full(2, np.nan)
        self.work = np.zeros((5, P.N_STATE))
        self.vb = np.zeros((2, 2))
        self.k = 0
        self.status = STATUS_OK
        self.max_staleness = 0.0
        self.event_log = []
        self._events = sorted(
            ((int(round(ev.t / self.dt)), i, ev) for i, ev in enumerate(sc.events)),
            key=lambda e: (e[0], e[1]),
        )
        self._next_event = 0
        if sc.noise_std > 0.0:
            _seed_noise(int(np.random.SeedSequence(sc.channel.seed, spawn_key=(99,)).generate_state(1)[0]))

    # -- discrete actions -------------------------------------------------
    def _apply(self, ev):
        a = ev.args
        if ev.kind == "gfli":
            self.gfli_ref[:] = _gfli_setpoint(a, self.sc.gains[0].v_m_star)
        elif ev.kind == "qshare":
            for node in self.nodes:
                node.set_enabled(bool(a["on"]))
        elif ev.kind == "breaker":
            n = int(a["n"])
            self.breaker[n] = bool(a["closed"])
            if not self.breaker[n]:
                self.x[6 * n + P.IL:6 * n + P.IL + 2] = 0.0
        elif ev.kind == "sync":
            self._start_sync(int(a["n"]), float(a.get("phase_offset", 0.0)), float(a.get("v_offset", 0.0)))
        self.event_log.append((self.k * self.dt, ev.kind, dict(a)))

    def _start_sync(self, n, phase_offset, v_offset):
        s = self.ctrl[n]
        vpa, vpb = P.pcc_voltage(self.x, self.pp)
        s[C.S_THETA] = (math.atan2(vpb, vpa) + phase_offset) % (2 * math.pi)
        s[C.S_XV] = v_offset
        s[C.S_DV] = v_offset
        s[C.S_VFIL] = math.hypot(vpa, vpb)
        s[C.S_PHASE] = C.SYNCING
        s[C.S_RELAY] = 0.0
        s[C.S_HOLD] = 0.0
        s[C.S_TSYNC] = 0.0

    def _exchange(self, t):
        for link in self.links:
            link.tick_send(t, self.ctrl[link.sender, C.S_QF])
        for node in self.nodes:
            for i in range(2):
                if i != node.n and not math.isnan(node.last_t_send[i]):
                    self.max_staleness = max(self.max_staleness, t - node.last_t_send[i])
        for link in self.links:
            for msg in link.deliver_due(t):
                self.nodes[link.receiver].receive(msg)

    def _next_boundary(self):
        k_next = self.k_end
        if self._next_event < len(self._events):
            k_next = min(k_next, self._events[self._next_event][0])
        for link in self.links:
            k_next = min(k_next, _step_at_or_after(link.next_send_time(), self.dt))
            k_next = min(k_next, _step_at_or_after(link.next_delivery_time(), self.dt))
        return max(k_next, self.k + 1)

    def run(self):
        self.advance_to(self.k_end)
        return self.record()

    def advance_to(self, k_target):
        """Step until control index ``k_target`` (or a stop condition)."""
        k_target = min(k_target, self.k_end)
        while self.k < k_target and self.status == STATUS_OK:
            while self._next_event < len(self._events) and self._events[self._next_event][0] <= self.k:
                self._apply(self._events[self._next_event][2])
                self._next_event += 1
            self._exchange(self.k * self.dt)
            k_next = min(self._next_boundary(), k_target)
            self.status, done, self.rec_idx = advance(
                self.k, k_next - self.k, self.x, self.ctrl, self.gains, self.pp, self.gfli_ref,
                self.breaker, self.qstate, self.qparams, self.known_q, self.n_sub, self.sc.decimation,
                self.rec, self.rec_idx, self.sc.divergence_bound, self.sc.sync_timeout,
                self.sc.noise_std, self.closed_at, self.work, self.vb,
            )
            self.k += done
        return self.status

    def record(self):
        sc = self.sc
        diagnostics = {
            "status": ("ok", "diverged", "sync-failed")[self.status],
            "diverged": self.status == STATUS_DIVERGED,
            "sync_failed": self.status == STATUS_SYNC_FAILED,
            "t_stop": self.k * self.dt,
            "saturation_counts": [int(s) for s in self.ctrl[:, C.S_SAT]],
            "qshare_clamps": [int(c) for c in self.qstate[:, Q.Q_CLAMPS]],
            "relay_closed_at": [None if math.isnan(t) else float(t) for t in self.closed_at],
            "sync_phase": [C.PHASE_NAMES[int(p)] for p in self.ctrl[:, C.S_PHASE]],
            "max_staleness_s": self.max_staleness,
            "events": self.event_log,
        }
        return RunRecord.from_arrays(
            self.rec[:self.rec_idx].copy(), diagnostics,
            [link.stats() for link in self.links], sc,
        )


def _step_at_or_after(t, dt):
    if math.isinf(t):
        return 2**62
    return int(math.ceil(t / dt - TIME_EPS / dt))


def run(scenario):
    """Execute a scenario and return its :class:`RunRecord`."""
    return Simulation(scenario).run()
