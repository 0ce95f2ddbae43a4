"""Recorded simulation output."""
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd

# quantity -> unit, in column order
INVERTER_QUANTITIES = {
    "f": "Hz",
    "V": "pu",
    "P": "kW",
    "Q": "kvar",
    "Pset": "kW",
    "Vset": "pu",
    "connected": "flag",
    "island": "id",
}
SYSTEM_COLUMNS = ("eta_p_pu", "eta_q_pu", "mpsi_pu", "mqsi_pu", "v_error_pu", "f_dev_Hz")
FLOAT_FORMAT = "%.12g"


def column_name(quantity: str, inverter_id: str) -> str:
    return f"{quantity}_{inverter_id}_{INVERTER_QUANTITIES[quantity]}"


def record_columns(inverter_ids) -> list[str]:
    cols = ["t_s"]
    for quantity in INVERTER_QUANTITIES:
        cols.extend(column_name(quantity, i) for i in inverter_ids)
    return cols + list(SYSTEM_COLUMNS)


@dataclass
class TimeSeriesRecord:
    """Decimated per-step snapshot of the fleet.

    `fleet` is indexed by inverter id and carries what the metrics need besides
    the time series (kind, rating, per-unit droops).
    """

    frame: pd.DataFrame
    fleet: pd.DataFrame
    event_times: list[float] = field(default_factory=list)
    duration: Optional[float] = None

    @property
    def inverter_ids(self) -> list[str]:
        return list(self.fleet.index)

    @property
    def t(self) -> np.ndarray:
        return self.frame["t_s"].to_numpy()

    def matrix(self, quantity: str) -> np.ndarray:
        """Samples x inverters array of one per-inverter quantity."""
        return self.frame[[column_name(quantity, i) for i in self.inverter_ids]].to_numpy(dtype=float)

    def between(self, start: float, end: float) -> "TimeSeriesRecord":
        """Samples with start <= t < end (end inclusive when it is the last sample)."""
        t = self.t
        mask = (t >= start - 1e-9) & (t < end - 1e-9)
        if len(t) and end >= t[-1] - 1e-9:
            mask |= (t >= start - 1e-9) & (t >= t[-1] - 1e-9)
        return TimeSeriesRecord(self.frame[mask].reset_index(drop=True), self.fleet, self.event_times, self.duration)

    def __len__(self) -> int:
        return len(self.frame)

    def to_csv(self, path: Path) -> None:
        self.frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, na_rep="nan", lineterminator="\n")


class RecordBuffer:
    """Preallocated row storage filled by the simulation loop."""

    def __init__(self, inverter_ids, capacity: int):
        self.inverter_ids = list(inverter_ids)
        self.columns = record_columns(self.inverter_ids)
        self.data = np.full((capacity, len(self.columns)), np.nan)
        self.size = 0

    def append(self, t: float, per_inverter: dict[str, np.ndarray], system: dict[str, float]) -> None:
        row = [t]
        for quantity in INVERTER_QUANTITIES:
            row.extend(np.asarray(per_inverter[quantity], dtype=float))
        row.extend(system[name] for name in SYSTEM_COLUMNS)
        self.data[self.size] = row
        self.size += 1

    def to_record(self, fleet: pd.DataFrame, event_times=(), duration: Optional[float] = None) -> TimeSeriesRecord:
        frame = pd.DataFrame(self.data[: self.size].copy(), columns=self.columns)
        for quantity in ("connected", "island"):
            cols = [column_name(quantity, i) for i in self.inverter_ids]
            frame[cols] = frame[cols].astype(int)
        return TimeSeriesRecord(frame=frame, fleet=fleet, event_times=list(event_times), duration=duration)
