"""Sharing metrics and run classification, computed from stored series only."""

import math
from dataclasses import dataclass

import numpy as np

BEHAVIOURS = ("Overdamped", "Underdamped", "Oscillating", "Unstable")
STABILITY = ("Stable", "Degraded", "Failed")


@dataclass
class Thresholds:
    """Classification thresholds (VAr, V, s). Defaults are declared choices."""

    restore_band: float = 20.0
    restore_hold: float = 0.2
    peak_window: float = 0.5
    unstable_factor: float = 4.0
    final_window: float = 1.0
    degraded_dq: float = 200.0
    stable_dv: float = 2.0
    degraded_dv: float = 10.0
    min_post_event: float = 1.0


def sharing_error(q1, q2):
    """e_Q = |Q1 - Q2| / 2."""
    return 0.5 * np.abs(np.asarray(q1) - np.asarray(q2))


def restoration_time(t, dq, t_event, threshold=20.0, hold=0.2):
    """Time from ``t_event`` until ``dq`` stays below ``threshold`` for ``hold`` seconds.

    Returns the first ``t >= t_event`` (minus ``t_event``) such that every
    sample on ``[t, t + hold]`` is below the threshold, or ``None``. The
    window must be fully covered by samples.
    """
    t = np.asarray(t, dtype=float)
    dq = np.asarray(dq, dtype=float)
    if t.size == 0:
        return None
    eps = 1e-9
    below = dq < threshold
    start = None
    for i in range(t.size):
        if t[i] < t_event - eps:
            continue
        if below[i]:
            if start is None:
                start = i
            if t[i] - t[start] >= hold - eps:
                return float(t[start] - t_event)
        else:
            start = None
    return None


def _reversals(x, band):
    """Number of sign changes of ``x`` counted with a +/- ``band`` hysteresis."""
    sign = 0
    count = 0
    for v in x:
        if v > band:
            s = 1
        elif v < -band:
            s = -1
        else:
            continue
        if sign != 0 and s != sign:
            count += 1
        sign = s
    return count


def classify_behaviour(t, d, t_event, dt_r, diverged=False, th=Thresholds()):
    """Label the post-event response of the signed sharing deviation ``d = Q2 - Q1``.

    Unstable on divergence, on no restoration, or when ``|d|`` later exceeds
    ``unstable_factor`` times its peak within ``peak_window`` after the
    event. Otherwise the deviation about its settled value (mean over the
    final window) is scanned for sign reversals outside the restoration band:
    none is Overdamped, one or two Underdamped, three or more Oscillating.
    """
    t = np.asarray(t, dtype=float)
    d = np.asarray(d, dtype=float)
    post = t >= t_event - 1e-9
    if not post.any() or t[post][-1] - t_event < th.min_post_event:
        raise ValueError("need at least min_post_event seconds after the event to classify")
    if diverged or dt_r is None:
        return "Unstable"
    tp, dp = t[post], d[post]
    early = tp <= t_event + th.peak_window
    peak = np.max(np.abs(dp[early]))
    if peak > 0.0 and np.any(np.abs(dp[~early]) > th.unstable_factor * peak):
        return "Unstable"
    settled = np.mean(dp[tp >= tp[-1] - th.final_window])
    n_rev = _reversals(dp - settled, th.restore_band)
    if n_rev == 0:
        return "Overdamped"
    if n_rev <= 2:
        return "Underdamped"
    return "Oscillating"


def final_window(t, th):
    t = np.asarray(t)
    return t >= t[-1] - th.final_window


def voltage_deviation(dq1, dq2, mask):
    """Shift of the PCC voltage from its droop-consistent value.

    With the injector holding Q_tot, a common-mode sharing offset moves every
    voltage reference, and hence the PCC voltage, one-for-one; the
    differential part only redistributes Q. The deviation is therefore the
    mean offset over the final window.
    """
    return float(abs(np.mean(0.5 * (np.asarray(dq1)[mask] + np.asarray(dq2)[mask]))))


def classify_stability(metrics, th=Thresholds()):
    if metrics["diverged"]:
        return "Failed"
    res = metrics["residual_dQ"]
    dv = metrics["voltage_deviation"]
    if res > th.degraded_dq or dv > th.degraded_dv:
        return "Failed"
    persistent = metrics["final_dQ_p2p"] > 2.0 * th.restore_band
    if metrics["dt_r"] is not None and res < th.restore_band and dv < th.stable_dv and not persistent:
        return "Stable"
    return "Degraded"


def compute_metrics(t, q1, q2, dq1, dq2, diverged, t_event, th=Thresholds()):
    t = np.asarray(t, dtype=float)
    q1 = np.asarray(q1, dtype=float)
    q2 = np.asarray(q2, dtype=float)
    d = q2 - q1
    dq = np.abs(d)
    m = {"diverged": bool(diverged), "t_event": t_event}
    if t.size == 0:
        m.update(dQ_max=math.nan, dt_r=None, residual_dQ=math.inf, final_dQ_p2p=math.inf,
                 voltage_deviation=math.inf, behaviour="Unstable")
        m["stability"] = classify_stability(m, th)
        return m
    fw = final_window(t, th)
    ref = t_event if t_event is not None else t[0]
    post = t >= ref - 1e-9
    m["dQ_max"] = float(np.max(dq[post])) if post.any() else math.nan
    m["dt_r"] = restoration_time(t, dq, ref, th.restore_band, th.restore_hold)
    m["residual_dQ"] = float(np.mean(dq[fw]))
    m["final_dQ_p2p"] = float(np.ptp(d[fw]))
    m["voltage_deviation"] = voltage_deviation(dq1, dq2, fw)
    if t_event is not None:
        try:
            m["behaviour"] = classify_behaviour(t, d, t_event, m["dt_r"], diverged, th)
        except ValueError:
            m["behaviour"] = "Unstable" if diverged else None
    else:
        m["behaviour"] = None
    m["stability"] = classify_stability(m, th)
    return m
