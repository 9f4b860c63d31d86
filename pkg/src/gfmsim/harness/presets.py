"""Named experiment presets and the config -> Scenario builder.

A config is a nested dict (one table per section, see ``SECTIONS``). Presets
are sparse overrides on top of the shipped defaults; ``build_scenario``
turns a fully resolved config into a :class:`Scenario` with its event script.
"""

import math
from dataclasses import dataclass

import numpy as np

from gfmsim.control import ControlGains
from gfmsim.harness.metrics import Thresholds
from gfmsim.harness.scenario import Event, InverterInit, Scenario
from gfmsim.netchan import ChannelParams
from gfmsim.plant import GfliParams, PlantParams
from gfmsim.qshare import QShareParams

PROTOCOL_KINDS = ("static", "step", "sync")
SETPOINT_UNITS = ("VAr", "A")


@dataclass
class Protocol:
    """Experiment script.

    ``static`` holds the injector at ``before`` for the whole run; ``step``
    moves it from ``before`` to ``after`` at ``t_event``; ``sync`` starts
    unit ``sync_unit`` (1-based) isolated and begins synchronising it at
    ``t_sync``. Setpoints are reactive power (``VAr``) or q-axis current (``A``).
    """

    kind: str = "static"
    unit: str = "VAr"
    before: float = 0.0
    after: float = 0.0
    i_d: float = 0.0
    t_event: float = 3.0
    qshare_off_at: float = -1.0  # < 0: never
    sync_unit: int = 2
    t_sync: float = 1.0
    phase_offset: float = -0.5
    v_offset: float = 10.0  # reference lowered by this much at sync start

    def validate(self):
        if self.kind not in PROTOCOL_KINDS:
            raise ValueError(f"protocol.kind must be one of {PROTOCOL_KINDS}, got {self.kind!r}")
        if self.unit not in SETPOINT_UNITS:
            raise ValueError(f"protocol.unit must be one of {SETPOINT_UNITS}, got {self.unit!r}")
        if self.sync_unit not in (1, 2):
            raise ValueError(f"protocol.sync_unit must be 1 or 2, got {self.sync_unit!r}")
        for name in ("before", "after", "i_d", "t_event", "t_sync", "phase_offset", "v_offset"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"protocol.{name} must be finite")


@dataclass
class RunSettings:
    t_end: float = 5.0
    decimation: int = 20
    noise_std: float = 0.0
    sync_timeout: float = 30.0
    divergence_bound: float = 1e6
    seed: int = 0
    stream: int = 0


@dataclass
class SweepSettings:
    replicates: int = 1


SECTIONS = {
    "run": RunSettings,
    "protocol": Protocol,
    "plant": PlantParams,
    "gfli": GfliParams,
    "inv1": ControlGains,
    "inv2": ControlGains,
    "qshare": QShareParams,
    "channel": ChannelParams,
    "thresholds": Thresholds,
    "sweep": SweepSettings,
}
# fields owned by another section (setpoints by the protocol, link seed by run.seed)
HIDDEN = {"gfli": ("i_d_ref", "i_q_ref"), "channel": ("seed",)}

Q_SWEEP = [float(q) for q in range(-6000, 4001, 1000)]
E4_GAINS = [0.001, 0.003, 0.009, 0.03, 0.06, 0.15]
E5_GAINS = [0.001, 0.003, 0.009]
E5_DELAYS = [0.05, 0.06, 0.07, 0.08, 0.09, 0.1]

_step = {"kind": "step", "unit": "VAr", "before": 0.0, "after": 4000.0, "t_event": 3.0}

PRESETS = {
    "e1": {
        "name": "e1",
        "run": {"t_end": 5.0},
        "protocol": {"kind": "static", "unit": "VAr", "before": 0.0},
        "qshare": {"enabled": False},
        "sweep": {"axes": {"protocol.before": Q_SWEEP}},
    },
    "e2": {
        "name": "e2",
        "run": {"t_end": 5.0},
        "protocol": {"kind": "static", "unit": "VAr", "before": 0.0},
        "inv2": {"L_v": 1e-3},
        "qshare": {"enabled": False},
        "sweep": {"axes": {"protocol.before": Q_SWEEP}},
    },
    "e3": {
        "name": "e3",
        "run": {"t_end": 15.0},
        "protocol": {"kind": "step", "unit": "A", "before": 2.0, "after": 10.0, "t_event": 3.0},
        "inv2": {"L_v": 1e-3},
        "qshare": {"enabled": True, "k_iQ": 0.003},
        "sweep": {"axes": {"qshare.k_iQ": [0.003]}},
    },
    "e4": {
        "name": "e4",
        "run": {"t_end": 20.0},
        "protocol": dict(_step),
        "inv2": {"L_v": 1e-3},
        "qshare": {"enabled": True, "k_iQ": 0.003},
        "sweep": {"axes": {"qshare.k_iQ": E4_GAINS}},
    },
    "e5": {
        "name": "e5",
        "run": {"t_end": 25.0},
        "protocol": dict(_step),
        "inv2": {"L_v": 1e-3},
        "qshare": {"enabled": True, "k_iQ": 0.003},
        "channel": {"rate_hz": 5.0, "delay_s": 0.05, "loss_prob": 0.03},
        "sweep": {"axes": {"qshare.k_iQ": E5_GAINS, "channel.delay_s": E5_DELAYS}},
    },
    "sync": {
        "name": "sync",
        "run": {"t_end": 15.0},
        "protocol": {"kind": "sync", "unit": "VAr", "before": 0.0, "sync_unit": 2,
                     "t_sync": 1.0, "phase_offset": -0.5, "v_offset": 10.0},
        "qshare": {"enabled": False},
        "sweep": {"axes": {"protocol.phase_offset": [-0.5]}},
    },
    "loss": {
        "name": "loss",
        "run": {"t_end": 20.0},
        "protocol": dict(_step),
        "inv2": {"L_v": 1e-3},
        "qshare": {"enabled": True, "k_iQ": 0.003},
        "channel": {"rate_hz": 5.0, "delay_s": 0.05, "loss_prob": 0.03},
        "sweep": {"axes": {"channel.loss_prob": [0.0, 0.03]}},
    },
}


def channel_seed(master, stream):
    """Integer seed for one run: stream ``stream`` of ``SeedSequence(master)``."""
    ss = np.random.SeedSequence(int(master), spawn_key=(int(stream),))
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def _setpoint(proto, value):
    if proto.unit == "VAr":
        return {"Q": float(value)}
    return {"i_d": float(proto.i_d), "i_q": float(value)}


def build_scenario(cfg):
    """Scenario from a resolved config dict (see :mod:`gfmsim.config`)."""
    rs = RunSettings(**cfg["run"])
    proto = Protocol(**cfg["protocol"])
    proto.validate()
    chan = ChannelParams(**cfg["channel"], seed=channel_seed(rs.seed, rs.stream))
    gfli = GfliParams(**cfg["gfli"])
    init = [InverterInit(), InverterInit()]
    events = [Event(0.0, "gfli", _setpoint(proto, proto.before))]
    t_event = None
    if proto.kind == "step":
        t_event = proto.t_event
        events.append(Event(proto.t_event, "gfli", _setpoint(proto, proto.after)))
        if proto.qshare_off_at >= 0.0:
            events.append(Event(proto.qshare_off_at, "qshare", {"on": False}))
    elif proto.kind == "sync":
        n = proto.sync_unit - 1
        init[n] = InverterInit(connected=False)
        events.append(Event(proto.t_sync, "sync", {"n": n, "phase_offset": proto.phase_offset,
                                                     "v_offset": proto.v_offset}))
    events.sort(key=lambda e: e.t)
    return Scenario(
        name=cfg.get("name", "custom"),
        plant=PlantParams(**cfg["plant"]),
        gains=[ControlGains(**cfg["inv1"]), ControlGains(**cfg["inv2"])],
        gfli=gfli,
        qshare=QShareParams(**cfg["qshare"]),
        channel=chan,
        init=init,
        events=events,
        thresholds=Thresholds(**cfg["thresholds"]),
        t_end=rs.t_end,
        t_event=t_event,
        decimation=int(rs.decimation),
        noise_std=rs.noise_std,
        sync_timeout=rs.sync_timeout,
        divergence_bound=rs.divergence_bound,
    )
