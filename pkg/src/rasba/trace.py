"""Per-round experiment records and their CSV form."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

TRACE_HEADER = "round,sim_time_s,lo,hi,oom_events,updates,loss,accuracy"


@dataclass(frozen=True)
class TraceRow:
    round: int
    sim_time_s: float
    lo: int
    hi: int
    oom_events: int
    updates: int
    loss: float = math.nan
    accuracy: float = math.nan

    def to_csv(self) -> str:
        return (f"{self.round},{_num(self.sim_time_s)},{self.lo},{self.hi},"
                f"{self.oom_events},{self.updates},{_num(self.loss)},{_num(self.accuracy)}")


def _num(x: float) -> str:
    return "" if math.isnan(x) else repr(float(x))


@dataclass
class ExperimentTrace:
    """Everything one run of the protocol produced.

    ``rows[0]`` is the state before the first round.  ``round_times`` holds
    the synchronous-barrier time of each round (max over clients) and
    ``searching`` whether that round still ran the search.
    """

    strategy: str
    rows: list[TraceRow] = field(default_factory=list)
    round_times: list[float] = field(default_factory=list)
    searching: list[bool] = field(default_factory=list)
    conflicts: int = 0
    rounds_to_convergence: int | None = None
    converged_batch: int | None = None
    certified: bool = False
    task_key: str | None = None

    @property
    def total_time(self) -> float:
        return self.rows[-1].sim_time_s if self.rows else 0.0

    @property
    def final_accuracy(self) -> float:
        return self.rows[-1].accuracy if self.rows else math.nan

    @property
    def n_rounds(self) -> int:
        return len(self.round_times)

    def to_csv(self) -> str:
        return "\n".join([TRACE_HEADER, *(r.to_csv() for r in self.rows)]) + "\n"
