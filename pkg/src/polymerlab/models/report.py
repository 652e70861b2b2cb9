import hashlib
from enum import Enum
from typing import Any

from pydantic import BaseModel, ConfigDict, Field
from rich.table import Table

from polymerlab.models.error import OrderViolationRecord


class Verdict(str, Enum):
    """
    Outcome of a theorem check
    """

    PASS = "pass"
    FAIL = "fail"
    INCONCLUSIVE = "inconclusive"

    @property
    def exit_code(self) -> int:
        return {Verdict.PASS: 0, Verdict.FAIL: 1, Verdict.INCONCLUSIVE: 2}[self]

    @property
    def style(self) -> str:
        return {Verdict.PASS: "green", Verdict.FAIL: "red", Verdict.INCONCLUSIVE: "yellow"}[self]


class Metric(BaseModel):
    """
    Named statistic with an optional confidence interval
    """

    model_config = ConfigDict(frozen=True, ser_json_inf_nan="constants")

    value: float
    ci_low: float | None = None
    ci_high: float | None = None
    stderr: float | None = None
    note: str | None = None


class NegativeControl(BaseModel):
    """
    A deliberately broken variant that the check must flag
    """

    model_config = ConfigDict(frozen=True, ser_json_inf_nan="constants")

    name: str
    expectation: str
    observed: str
    degraded: bool


class ExperimentReport(BaseModel):
    """
    Append-only record of one experiment run
    """

    model_config = ConfigDict(frozen=True, ser_json_inf_nan="constants")

    name: str
    summary: str
    verdict: Verdict
    verdict_rule: str
    config_digest: str
    code_version: str
    seeds: list[int]
    metrics: dict[str, Metric] = Field(default_factory=dict)
    gates: dict[str, float] = Field(default_factory=dict)
    controls: list[NegativeControl] = Field(default_factory=list)
    artifacts: list[str] = Field(default_factory=list)
    notes: list[str] = Field(default_factory=list)
    violations: list[OrderViolationRecord] = Field(default_factory=list)
    wall_time: float = 0.0
    config: dict[str, Any] = Field(default_factory=dict)

    def metrics_digest(self) -> str:
        """Hash over everything that must reproduce bitwise on replay"""
        payload = self.model_dump_json(include={"verdict", "metrics", "controls", "seeds"})
        return hashlib.sha256(payload.encode()).hexdigest()

    def headline(self, report_path: str) -> str:
        return f"{self.name}: {self.verdict.value.upper()} ({report_path})"

    @classmethod
    def convert_list_to_table(cls, reports: list["ExperimentReport"]) -> Table:
        table = Table(title="Experiment Reports")

        table.add_column("Experiment", justify="left", style="cyan", no_wrap=True)
        table.add_column("Verdict", justify="left", no_wrap=True)
        table.add_column("Seeds", justify="right")
        table.add_column("Wall time [s]", justify="right")
        table.add_column(
            "Rule",
            justify="left",
        )
        for report in reports:
            table.add_row(
                report.name,
                f"[{report.verdict.style}]{report.verdict.value}[/{report.verdict.style}]",
                str(len(report.seeds)),
                f"{report.wall_time:.1f}",
                report.verdict_rule,
            )
        return table

    def metrics_table(self) -> Table:
        table = Table(title=f"{self.name} metrics")
        table.add_column("Metric", justify="left", style="cyan", no_wrap=True)
        table.add_column("Value", justify="right")
        table.add_column("CI", justify="right")
        for name, metric in self.metrics.items():
            interval = "" if metric.ci_low is None else f"[{metric.ci_low:.4g}, {metric.ci_high:.4g}]"
            table.add_row(name, f"{metric.value:.6g}", interval)
        return table
