"""Scenario description: parameters, initial conditions and the event script."""

import math
from dataclasses import dataclass, field

from gfmsim.control import ControlGains
from gfmsim.harness.metrics import Thresholds
from gfmsim.netchan import ChannelParams
from gfmsim.plant import GfliParams, PlantParams
from gfmsim.qshare import QShareParams

EVENT_KINDS = ("gfli", "qshare", "sync", "breaker")


@dataclass
class Event:
    """A timed action.

    kinds and their ``args``:

    * ``gfli``: ``{"i_d": A, "i_q": A}`` or ``{"Q": VAr}`` (injector setpoint)
    * ``qshare``: ``{"on": bool}`` (all nodes simultaneously)
    * ``sync``: ``{"n": idx, "phase_offset": rad, "v_offset": V}`` start
      synchronising unit ``n``, re-seating its angle relative to the PCC
      voltage and offsetting its voltage reference
    * ``breaker``: ``{"n": idx, "closed": bool}``
    """

    t: float
    kind: str
    args: dict = field(default_factory=dict)

    def validate(self):
        if self.kind not in EVENT_KINDS:
            raise ValueError(f"unknown event kind {self.kind!r}")
        if not (math.isfinite(self.t) and self.t >= 0.0):
            raise ValueError(f"event time must be finite and >= 0, got {self.t!r}")


@dataclass
class InverterInit:
    theta0: float = 0.0
    connected: bool = True


@dataclass
class Scenario:
    name: str = "custom"
    plant: PlantParams = field(default_factory=PlantParams)
    gains: list = field(default_factory=lambda: [ControlGains(), ControlGains()])
    gfli: GfliParams = field(default_factory=GfliParams)
    qshare: QShareParams = field(default_factory=lambda: QShareParams(enabled=False))
    channel: ChannelParams = field(default_factory=ChannelParams)
    init: list = field(default_factory=lambda: [InverterInit(), InverterInit()])
    events: list = field(default_factory=list)
    thresholds: Thresholds = field(default_factory=Thresholds)
    t_end: float = 5.0
    t_event: float | None = None
    decimation: int = 20
    noise_std: float = 0.0
    sync_timeout: float = 30.0
    divergence_bound: float = 1e6

    @property
    def dt_control(self):
        return self.gains[0].dt

    def validate(self):
        if not (self.t_end > 0.0 and math.isfinite(self.t_end)):
            raise ValueError(f"t_end must be > 0, got {self.t_end!r}")
        if len(self.gains) != 2 or len(self.init) != 2:
            raise ValueError("exactly two inverters are simulated")
        if len(self.qshare.rho) != 2:
            raise ValueError("qshare.rho must have two entries")
        if int(self.decimation) != self.decimation or self.decimation < 1:
            raise ValueError(f"decimation must be a positive integer, got {self.decimation!r}")
        dt = self.dt_control
        if any(g.dt != dt for g in self.gains):
            raise ValueError("both controllers must share the control period")
        self.plant.validate(dt)
        ratio = dt / self.plant.dt_plant
        if abs(ratio - round(ratio)) > 1e-9:
            raise ValueError(f"control period {dt} is not an integer multiple of dt_plant {self.plant.dt_plant}")
        for g in self.gains:
            g.validate()
        self.gfli.validate()
        self.qshare.validate()
        self.channel.validate()
        prev = -math.inf
        for ev in self.events:
            ev.validate()
            if ev.t < prev:
                raise ValueError("events must be time-ordered")
            prev = ev.t
        if self.noise_std < 0.0:
            raise ValueError("noise_std must be >= 0")
