"""Distributed reactive-power-sharing correction.

Each node integrates the gap between its own reactive power and a sharing
target built from the last known outputs of all nodes. The resulting
voltage offset ``delta_q`` is subtracted from the node's droop voltage
reference. Switching the correction off resets the integrator and ramps
the held offset to zero at a fixed rate.
"""

import math
from dataclasses import dataclass, field

import numba
import numpy as np

OFF = 0
ACTIVE = 1
RAMPING_OUT = 2
MODE_NAMES = ("Off", "Active", "RampingOut")

# per-node state vector
Q_DELTA = 0
Q_MODE = 1
Q_CLAMPS = 2
N_QSTATE = 3

# parameter vector: [k_iQ, ramp_rate, delta_q_max, sign, rho_0..rho_{N-1}, Q*_0..Q*_{N-1}]
QP_KI = 0
QP_RAMP = 1
QP_MAX = 2
QP_SIGN = 3
QP_RHO = 4


@dataclass
class QShareParams:
    k_iQ: float = 0.003
    rho: list = field(default_factory=lambda: [0.5, 0.5])
    Q_star: list = field(default_factory=lambda: [0.0, 0.0])
    ramp_rate: float = 2.0
    delta_q_max: float = 30.0
    enabled: bool = True
    # True integrates (target - own) exactly as written in the control law;
    # with the offset subtracted from the voltage reference that loop is unstable.
    literal_sign: bool = False

    def validate(self):
        n = len(self.rho)
        if n < 1 or len(self.Q_star) != n:
            raise ValueError("qshare.rho and qshare.Q_star must have one entry per node")
        if any(not (0.0 < r <= 1.0) for r in self.rho):
            raise ValueError(f"qshare.rho entries must lie in (0, 1], got {self.rho}")
        if abs(sum(self.rho) - 1.0) > 1e-9:
            raise ValueError(f"qshare.rho must sum to 1, got {sum(self.rho)!r}")
        if not (self.k_iQ >= 0.0 and math.isfinite(self.k_iQ)):
            raise ValueError(f"qshare.k_iQ must be finite and >= 0, got {self.k_iQ!r}")
        if not self.ramp_rate > 0.0:
            raise ValueError(f"qshare.ramp_rate must be > 0, got {self.ramp_rate!r}")
        if not self.delta_q_max > 0.0:
            raise ValueError(f"qshare.delta_q_max must be > 0, got {self.delta_q_max!r}")

    def to_vector(self):
        n = len(self.rho)
        v = np.zeros(QP_RHO + 2 * n)
        v[QP_KI] = self.k_iQ
        v[QP_RAMP] = self.ramp_rate
        v[QP_MAX] = self.delta_q_max
        v[QP_SIGN] = 1.0 if self.literal_sign else -1.0
        v[QP_RHO:QP_RHO + n] = self.rho
        v[QP_RHO + n:] = self.Q_star
        return v


@numba.njit(cache=True)
def sharing_target(n, q_star, rho_n, known_q):
    """Target Q_star[n] + rho_n * sum_i(known_q[i] - q_star[i])."""
    acc = 0.0
    for i in range(known_q.shape[0]):
        acc += known_q[i] - q_star[i]
    return q_star[n] + rho_n * acc


@numba.njit(cache=True)
def integrate_correction(st, q_target, q_local, k_iq, sign, dq_max, dt):
    """Euler step of the correction integrator; returns 1 if the clamp engaged."""
    d = st[Q_DELTA] + sign * k_iq * (q_target - q_local) * dt
    if d > dq_max:
        st[Q_DELTA] = dq_max
        st[Q_CLAMPS] += 1
        return 1
    if d < -dq_max:
        st[Q_DELTA] = -dq_max
        st[Q_CLAMPS] += 1
        return 1
    st[Q_DELTA] = d
    return 0


@numba.njit(cache=True)
def ramp_out(st, ramp_rate, dt):
    d = st[Q_DELTA]
    step = ramp_rate * dt
    if abs(d) <= step:
        st[Q_DELTA] = 0.0
        st[Q_MODE] = OFF
    elif d > 0.0:
        st[Q_DELTA] = d - step
    else:
        st[Q_DELTA] = d + step


@numba.njit(cache=True)
def node_update(n, st, known_q, q_local, qp, dt):
    """Per-control-period update of node ``n``; ``known_q`` is this node's view."""
    mode = int(st[Q_MODE])
    if mode == ACTIVE:
        nn = known_q.shape[0]
        known_q[n] = q_local
        q_star = qp[QP_RHO + nn:QP_RHO + 2 * nn]
        target = sharing_target(n, q_star, qp[QP_RHO + n], known_q)
        integrate_correction(st, target, q_local, qp[QP_KI], qp[QP_SIGN], qp[QP_MAX], dt)
    elif mode == RAMPING_OUT:
        ramp_out(st, qp[QP_RAMP], dt)


def set_enabled(st, on):
    """Switch a node's correction on or off (in place); returns ``st``.

    Switching on resumes integrating from the present offset, including a
    partially ramped one. Switching off drops the integrator and hands the
    present offset to the ramp, or goes straight to Off if it is already zero.
    """
    if on:
        st[Q_MODE] = ACTIVE
    elif st[Q_DELTA] == 0.0:
        st[Q_MODE] = OFF
    else:
        st[Q_MODE] = RAMPING_OUT
    return st


class QShareNode:
    """Python-side view of one node: offset, mode and the held peer values."""

    def __init__(self, n, params, state=None, known_q=None):
        self.n = n
        self.params = params
        self.qp = params.to_vector()
        n_nodes = len(params.rho)
        self.state = np.zeros(N_QSTATE) if state is None else state
        self.known_q = np.zeros(n_nodes) if known_q is None else known_q
        # cold start: peers assumed at their setpoints until the first message
        self.known_q[:] = params.Q_star
        self.last_t_send = np.full(n_nodes, np.nan)
        self.known_seq = np.full(n_nodes, -1, dtype=np.int64)
        if params.enabled:
            set_enabled(self.state, True)

    @property
    def delta_q(self):
        return float(self.state[Q_DELTA])

    @property
    def mode(self):
        return MODE_NAMES[int(self.state[Q_MODE])]

    def receive(self, msg):
        """Apply a delivered message; stale or reordered sequence numbers are ignored."""
        if msg.sender == self.n or msg.seq <= self.known_seq[msg.sender]:
            return False
        self.known_seq[msg.sender] = msg.seq
        self.known_q[msg.sender] = msg.Q_value
        self.last_t_send[msg.sender] = msg.t_send
        return True

    def set_enabled(self, on):
        set_enabled(self.state, on)

    def update(self, q_local, dt):
        node_update(self.n, self.state, self.known_q, q_local, self.qp, dt)
        return self.delta_q
