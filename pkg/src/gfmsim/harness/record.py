"""Run records: decimated series, derived metrics, CSV output."""

import io
from dataclasses import dataclass, field

import numpy as np

from gfmsim.harness import metrics as M

CSV_FMT = "%.10g"
COLUMNS = ("t", "omega1", "omega2", "vd1", "vd2", "P1", "P2", "Q1", "Q2", "dQ1", "dQ2", "vpcc_mag", "deltaQ")
EXTRA_COLUMNS = ("v1_mag", "v2_mag", "d_omega1", "d_omega2", "d_v1", "d_v2")


@dataclass
class RunRecord:
    data: np.ndarray
    diagnostics: dict
    channel_stats: list
    scenario_name: str = "custom"
    t_event: float | None = None
    thresholds: M.Thresholds = field(default_factory=M.Thresholds)
    metrics: dict = field(default_factory=dict)

    @classmethod
    def from_arrays(cls, data, diagnostics, channel_stats, scenario):
        data = data.copy()
        data[:, :len(COLUMNS)] = quantize(data[:, :len(COLUMNS)])
        rec = cls(data, diagnostics, channel_stats, scenario.name, scenario.t_event,
                  getattr(scenario, "thresholds", M.Thresholds()))
        rec.metrics = rec.recompute_metrics()
        return rec

    def __getitem__(self, name):
        if name in COLUMNS:
            return self.data[:, COLUMNS.index(name)]
        if name in EXTRA_COLUMNS:
            return self.data[:, len(COLUMNS) + EXTRA_COLUMNS.index(name)]
        raise KeyError(name)

    @property
    def e_Q(self):
        return M.sharing_error(self["Q1"], self["Q2"])

    def recompute_metrics(self):
        return M.compute_metrics(self["t"], self["Q1"], self["Q2"], self["dQ1"], self["dQ2"],
                                 self.diagnostics["diverged"], self.t_event, self.thresholds)

    def csv_text(self):
        buf = io.StringIO()
        buf.write(",".join(COLUMNS) + "\n")
        np.savetxt(buf, self.data[:, :len(COLUMNS)], delimiter=",", fmt=CSV_FMT)
        return buf.getvalue()

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            fh.write(self.csv_text())

    def summary(self):
        m = self.metrics
        return {
            "scenario": self.scenario_name,
            "status": self.diagnostics["status"],
            "dQ_max": m.get("dQ_max"),
            "dt_r": m.get("dt_r"),
            "behaviour": m.get("behaviour"),
            "stability": m.get("stability"),
            "residual_dQ": m.get("residual_dQ"),
            "voltage_deviation": m.get("voltage_deviation"),
        }


def quantize(a):
    """Round-trip ``a`` through its CSV text so stored and emitted values agree exactly."""
    if a.size == 0:
        return a
    buf = io.StringIO()
    np.savetxt(buf, a, delimiter=",", fmt=CSV_FMT)
    buf.seek(0)
    return np.loadtxt(buf, delimiter=",", ndmin=2)


def read_csv(path):
    return np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
