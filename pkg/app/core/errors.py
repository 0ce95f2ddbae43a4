"""Exception hierarchy shared by the simulator, CLI and HTTP API."""
from typing import Any, Optional

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_DIVERGENCE = 3


class SimulationError(Exception):
    """Base class; `exit_code` is the CLI contract for the error family."""

    exit_code = 1

    def to_dict(self) -> dict[str, Any]:
        return {"error": type(self).__name__, "message": str(self)}


class ConfigurationError(SimulationError):
    """Inconsistent model or command (unknown switch, bad link, size mismatch...)."""

    exit_code = EXIT_VALIDATION


class ScenarioValidationError(ConfigurationError):
    """A scenario or network file failed validation.

    `pointer` locates the offending field, e.g. ``events[3].target``.
    """

    def __init__(self, message: str, pointer: str = ""):
        super().__init__(f"{pointer}: {message}" if pointer else message)
        self.pointer = pointer
        self.detail = message

    def to_dict(self) -> dict[str, Any]:
        out = super().to_dict()
        out["pointer"] = self.pointer
        out["message"] = self.detail
        return out


class SolverDivergenceError(SimulationError):
    """Newton iteration failed to reach the mismatch tolerance."""

    exit_code = EXIT_DIVERGENCE

    def __init__(self, mismatch: float, iterations: int, time: Optional[float] = None):
        where = f" at t={time:.4f}s" if time is not None else ""
        super().__init__(
            f"power flow did not converge{where} after {iterations} iterations "
            f"(max mismatch {mismatch:.3e} pu)"
        )
        self.mismatch = mismatch
        self.iterations = iterations
        self.time = time
        # filled in by the scenario runner
        self.partial_record = None

    def to_dict(self) -> dict[str, Any]:
        out = super().to_dict()
        out.update({"mismatch": self.mismatch, "iterations": self.iterations, "time": self.time})
        return out


def pointer_from_loc(loc: tuple) -> str:
    """Render a pydantic error location as ``a.b[2].c``."""
    out = ""
    for part in loc:
        if isinstance(part, int):
            out += f"[{part}]"
        else:
            out += ("." if out else "") + str(part)
    return out
