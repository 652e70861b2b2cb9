from typing import TYPE_CHECKING

from pydantic import BaseModel
from rich.table import Table

if TYPE_CHECKING:
    from polymerlab.polymer import PolymerState


class PolymerLabError(Exception):
    """Base class of all polymerlab errors"""


class ConfigError(PolymerLabError):
    """
    Run config violates the schema or a cross-field rule
    """

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        location = f"line {line}: " if line is not None else ""
        super().__init__(f"{location}{message}")


class StepSizeError(PolymerLabError):
    """Explicit scheme would break order preservation: dt·(2 + L_f) > 1"""


class IntegrationError(PolymerLabError):
    """
    State left the finite floats during integration
    """

    def __init__(self, message: str, last_finite: "PolymerState | None", time: float):
        self.last_finite = last_finite
        self.time = time
        super().__init__(f"{message} (last finite state at t={time:g})")


class InfeasibleSteeringError(PolymerLabError):
    """Steering window cannot be realized on the noise grid"""


class OracleError(PolymerLabError):
    """Grid quadrature refused: too many coordinates or the box cuts off mass"""


class ReplayError(PolymerLabError):
    """Report cannot be replayed or did not reproduce"""


class OrderViolationRecord(BaseModel):
    """
    contains information about a coordinate where two chains lost their order
    """

    seed: int
    pair: int
    time: float
    k: int
    gap: float
    crossings: int | None = None

    @classmethod
    def convert_list_to_table(cls, records: list["OrderViolationRecord"], limit: int = 20) -> Table:
        table = Table(title="Order Violations")

        table.add_column("Seed", justify="right", style="cyan", no_wrap=True)
        table.add_column("Pair", justify="right", style="cyan", no_wrap=True)
        table.add_column("t", justify="right", no_wrap=True)
        table.add_column("k", justify="right", no_wrap=True)
        table.add_column(
            "x_k - y_k",
            justify="right",
            style="red",
        )
        table.add_column("Crossings", justify="right", no_wrap=True)
        for record in records[:limit]:
            table.add_row(
                str(record.seed),
                str(record.pair),
                f"{record.time:g}",
                str(record.k),
                f"{record.gap:.3e}",
                "" if record.crossings is None else str(record.crossings),
            )
        return table
