"""Performance indices computed from simulation records.

Sharing ratios use the per-unit droop (``freq_droop``/``volt_droop``, e.g. 0.01
and 0.05) so that ``m P / s`` is dimensionless:

    eta_p = sum_i P_i / sum_i (s_i / m_p_i)
    MPSI  = sum_i |(m_p_i P_i / s_i - eta_p) / eta_p| / N

and likewise for Q. Only connected inverters count, in N as well. A zero
eta leaves the index undefined; undefined values serialise as ``"undefined"``.
"""
from dataclasses import dataclass, field
from typing import Optional, Sequence
import math

import numpy as np
import pandas as pd

from app.models.record import TimeSeriesRecord

UNDEFINED = "undefined"
DEFAULT_BAND = 1e-3
DEFAULT_HOLD = 0.5


@dataclass
class SharingSnapshot:
    """Connected inverters of one island at one instant."""

    m_p: np.ndarray
    m_q: np.ndarray
    p: np.ndarray
    q: np.ndarray
    s: np.ndarray

    def __post_init__(self) -> None:
        for name in ("m_p", "m_q", "p", "q", "s"):
            setattr(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=float)))


def _eta(x: np.ndarray, s: np.ndarray, m: np.ndarray) -> Optional[float]:
    if len(x) == 0:
        return None
    return float(np.sum(x) / np.sum(s / m))


def _index(x: np.ndarray, s: np.ndarray, m: np.ndarray, eta_x: Optional[float]) -> Optional[float]:
    if eta_x is None or eta_x == 0.0 or not math.isfinite(eta_x):
        return None
    return float(np.sum(np.abs((m * x / s - eta_x) / eta_x)) / len(x))


def eta(snap: SharingSnapshot) -> tuple[Optional[float], Optional[float]]:
    return _eta(snap.p, snap.s, snap.m_p), _eta(snap.q, snap.s, snap.m_q)


def mpsi(snap: SharingSnapshot) -> Optional[float]:
    return _index(snap.p, snap.s, snap.m_p, _eta(snap.p, snap.s, snap.m_p))


def mqsi(snap: SharingSnapshot) -> Optional[float]:
    return _index(snap.q, snap.s, snap.m_q, _eta(snap.q, snap.s, snap.m_q))


def sharing_series(x: np.ndarray, s: np.ndarray, m: np.ndarray, mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise eta and sharing index of a samples x inverters array; NaN where undefined."""
    x = np.atleast_2d(x)
    mask = np.atleast_2d(mask).astype(bool)
    with np.errstate(divide="ignore", invalid="ignore"):
        n = mask.sum(axis=1)
        num = np.where(mask, x, 0.0).sum(axis=1)
        den = np.where(mask, s / m, 0.0).sum(axis=1)
        eta_x = np.where(n > 0, num / den, np.nan)
        dev = np.where(mask, np.abs(m * x / s - eta_x[:, np.newaxis]), 0.0).sum(axis=1)
        index = np.where(np.isfinite(eta_x) & (eta_x != 0.0), dev / (np.abs(eta_x) * n), np.nan)
    return eta_x, index


def v_error(v: np.ndarray, mask: Optional[np.ndarray] = None, v_nom: float = 1.0) -> Optional[float]:
    """Mean over samples of the mean |V_i - V_nom| across connected inverters."""
    v = np.atleast_2d(np.asarray(v, dtype=float))
    mask = np.ones_like(v, dtype=bool) if mask is None else np.atleast_2d(mask).astype(bool)
    n = mask.sum(axis=1)
    if v.size == 0 or np.any(n == 0):
        return None
    per_sample = np.where(mask, np.abs(v - v_nom), 0.0).sum(axis=1) / n
    value = float(np.mean(per_sample))
    return value if math.isfinite(value) else None


def f_deviation(f: np.ndarray, mask: Optional[np.ndarray] = None, f_nom: float = 60.0) -> Optional[float]:
    """Mean over samples of the worst |f_i - f_nom| across connected inverters."""
    f = np.atleast_2d(np.asarray(f, dtype=float))
    mask = np.ones_like(f, dtype=bool) if mask is None else np.atleast_2d(mask).astype(bool)
    if f.size == 0 or np.any(mask.sum(axis=1) == 0):
        return None
    value = float(np.mean(np.where(mask, np.abs(f - f_nom), 0.0).max(axis=1)))
    return value if math.isfinite(value) else None


def convergence_time(
    t: np.ndarray,
    values: np.ndarray,
    band: float = DEFAULT_BAND,
    hold: float = DEFAULT_HOLD,
    start: float = 0.0,
    end: Optional[float] = None,
) -> Optional[float]:
    """Seconds after `start` until `values` enters and stays below `band` for `hold` seconds.

    Only samples in [start, end) are considered; undefined (NaN) samples count
    as outside the band. Returns None when it never happens inside the window.
    """
    if band <= 0 or hold <= 0:
        raise ValueError("band and hold must be positive")
    t = np.asarray(t, dtype=float)
    values = np.asarray(values, dtype=float)
    end = t[-1] + 1e-9 if end is None else end
    sel = (t >= start - 1e-9) & (t < end + 1e-9)
    t, inside = t[sel], np.nan_to_num(values[sel], nan=np.inf) < band
    run_start = None
    for k in range(len(t)):
        if not inside[k]:
            run_start = None
            continue
        if run_start is None:
            run_start = t[k]
        if t[k] - run_start >= hold - 1e-9:
            return float(run_start - start)
    return None


# --- window summaries -------------------------------------------------------


def _clean(value: Optional[float]):
    return UNDEFINED if value is None or not math.isfinite(value) else value


def _restore(value):
    return None if value == UNDEFINED else value


@dataclass
class ScopeMetrics:
    inverters: list[str]
    f_dev_hz: Optional[float]
    mpsi: Optional[float]
    mqsi: Optional[float]
    v_error: Optional[float]
    eta_p: Optional[float]
    eta_q: Optional[float]
    convergence_time_s: Optional[float]

    def to_dict(self) -> dict:
        return {
            "inverters": self.inverters,
            "f_dev_Hz": _clean(self.f_dev_hz),
            "mpsi": _clean(self.mpsi),
            "mqsi": _clean(self.mqsi),
            "v_error_pu": _clean(self.v_error),
            "eta_p": _clean(self.eta_p),
            "eta_q": _clean(self.eta_q),
            "convergence_time_s": _clean(self.convergence_time_s),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ScopeMetrics":
        return cls(
            inverters=list(data["inverters"]),
            f_dev_hz=_restore(data["f_dev_Hz"]),
            mpsi=_restore(data["mpsi"]),
            mqsi=_restore(data["mqsi"]),
            v_error=_restore(data["v_error_pu"]),
            eta_p=_restore(data["eta_p"]),
            eta_q=_restore(data["eta_q"]),
            convergence_time_s=_restore(data["convergence_time_s"]),
        )


@dataclass
class WindowSummary:
    label: str
    start: float
    end: float
    steady_from: float
    scopes: dict[str, ScopeMetrics] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "start": self.start,
            "end": self.end,
            "steady_from": self.steady_from,
            "scopes": {k: v.to_dict() for k, v in self.scopes.items()},
        }


@dataclass
class MetricSummary:
    scenario: str
    mode: str
    windows: list[WindowSummary]

    def to_dict(self) -> dict:
        return {"scenario": self.scenario, "mode": self.mode, "windows": [w.to_dict() for w in self.windows]}

    @classmethod
    def from_dict(cls, data: dict) -> "MetricSummary":
        """Inverse of to_dict, for summaries read back from disk or a worker process."""
        windows = [
            WindowSummary(
                label=w["label"], start=w["start"], end=w["end"], steady_from=w["steady_from"],
                scopes={k: ScopeMetrics.from_dict(v) for k, v in w["scopes"].items()},
            )
            for w in data["windows"]
        ]
        return cls(scenario=data["scenario"], mode=data["mode"], windows=windows)

    def window(self, label: str) -> WindowSummary:
        for w in self.windows:
            if w.label == label:
                return w
        raise KeyError(label)


def event_windows(record: TimeSeriesRecord) -> list[tuple[str, float, float]]:
    """One window per distinct event time, running to the next event or the end."""
    end = record.duration if record.duration is not None else float(record.t[-1])
    times = sorted(set(record.event_times))
    if not times:
        return [("steady", 0.0, end)]
    bounds = times + [end]
    return [(f"event{k + 1}", bounds[k], bounds[k + 1]) for k in range(len(times))]


def _mean_defined(series: np.ndarray) -> Optional[float]:
    if series.size == 0 or not np.all(np.isfinite(series)):
        return None
    return float(np.mean(series))


def scope_metrics(
    record: TimeSeriesRecord,
    mask: np.ndarray,
    steady: np.ndarray,
    window: np.ndarray,
    band: float = DEFAULT_BAND,
    hold: float = DEFAULT_HOLD,
    f_nom: float = 60.0,
) -> ScopeMetrics:
    """Metrics over the inverters selected per sample by `mask`.

    `steady` and `window` are boolean sample selectors for the steady-state
    interval and the whole event window.
    """
    fleet = record.fleet
    s = fleet["rating_kw"].to_numpy(dtype=float)
    m_p = fleet["freq_droop"].to_numpy(dtype=float)
    m_q = fleet["volt_droop"].to_numpy(dtype=float)
    p, q = record.matrix("P"), record.matrix("Q")
    eta_p, index_p = sharing_series(p, s, m_p, mask)
    eta_q, index_q = sharing_series(q, s, m_q, mask)
    t = record.t
    members = [i for i, on in zip(record.inverter_ids, mask[steady][-1] if steady.any() else []) if on]
    return ScopeMetrics(
        inverters=members,
        f_dev_hz=f_deviation(record.matrix("f")[steady], mask[steady], f_nom),
        mpsi=_mean_defined(index_p[steady]),
        mqsi=_mean_defined(index_q[steady]),
        v_error=v_error(record.matrix("V")[steady], mask[steady]),
        eta_p=_mean_defined(eta_p[steady]),
        eta_q=_mean_defined(eta_q[steady]),
        convergence_time_s=convergence_time(t[window], index_p[window], band, hold, start=float(t[window][0]))
        if window.any() else None,
    )


def summarize(
    record: TimeSeriesRecord,
    steady_window: float = 0.5,
    band: float = DEFAULT_BAND,
    hold: float = DEFAULT_HOLD,
    scenario: str = "",
    mode: str = "",
    f_nom: float = 60.0,
) -> MetricSummary:
    """Per event window: the whole system plus every island holding a connected inverter."""
    t = record.t
    connected = record.matrix("connected").astype(bool)
    island = record.matrix("island").astype(int)
    windows = []
    for label, start, end in event_windows(record):
        steady_from = max(start, end - steady_window)
        window = (t >= start - 1e-9) & (t < end - 1e-9)
        steady = (t >= steady_from - 1e-9) & (t < end - 1e-9)
        if end >= t[-1] - 1e-9:
            window |= (t >= t[-1] - 1e-9)
            steady |= (t >= t[-1] - 1e-9)
        summary = WindowSummary(label=label, start=start, end=end, steady_from=steady_from)
        summary.scopes["system"] = scope_metrics(record, connected, steady, window, band, hold, f_nom)
        if steady.any():
            last = np.nonzero(steady)[0][-1]
            for k in sorted(set(island[last][connected[last]].tolist())):
                mask = connected & (island == k)
                summary.scopes[f"island{k}"] = scope_metrics(record, mask, steady, window, band, hold, f_nom)
        windows.append(summary)
    return MetricSummary(scenario=scenario, mode=mode, windows=windows)


def _fmt(value) -> str:
    if value is None or value == UNDEFINED:
        return UNDEFINED
    return f"{value:.4f}"


TABLE_COLUMNS = (("|f-60|", "f_dev_hz"), ("MPSI", "mpsi"), ("V_error", "v_error"), ("MQSI", "mqsi"))


def summary_table(summary: MetricSummary) -> str:
    """Aligned text: one row per (window, scope)."""
    rows = []
    for w in summary.windows:
        for scope, m in w.scopes.items():
            row = {"window": w.label, "scope": scope}
            row.update({title: _fmt(getattr(m, attr)) for title, attr in TABLE_COLUMNS})
            row["t_conv"] = _fmt(m.convergence_time_s)
            rows.append(row)
    return pd.DataFrame(rows).to_string(index=False)


def comparison_table(summaries: Sequence[MetricSummary], scope: str = "system") -> str:
    """One row per case, one column group per event window."""
    rows = []
    for summary in summaries:
        row = {"case": summary.scenario}
        for w in summary.windows:
            m = w.scopes.get(scope)
            for title, attr in TABLE_COLUMNS:
                row[f"{w.label} {title}"] = _fmt(getattr(m, attr) if m else None)
        rows.append(row)
    return pd.DataFrame(rows).to_string(index=False)
