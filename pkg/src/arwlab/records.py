"""Plain result records shared by the simulator, the monitors and the harness."""

from dataclasses import asdict, dataclass, field
from enum import IntEnum

import numpy as np


class TauOutcome(IntEnum):
    """How the stopping time resolved. Failure kinds follow the four stop rules."""

    NOT_REACHED = 0
    SUCCESS = 1
    FAIL_BLUE_BAD = 2  # blue bad after having been good
    FAIL_RED_BAD = 3  # red bad at level 0
    FAIL_TIMEOUT = 4  # t reached 3 n^2

    @property
    def label(self):
        return _TAU_LABELS[self]

    @property
    def is_failure(self):
        return self >= TauOutcome.FAIL_BLUE_BAD


_TAU_LABELS = {
    TauOutcome.NOT_REACHED: "not_reached",
    TauOutcome.SUCCESS: "success",
    TauOutcome.FAIL_BLUE_BAD: "failure_ii",
    TauOutcome.FAIL_RED_BAD: "failure_iii",
    TauOutcome.FAIL_TIMEOUT: "failure_iv",
}


@dataclass(frozen=True)
class TimeDecomposition:
    T_blue: int = 0
    T_red: int = 0
    T_late: int = 0
    T_ok: int = 0
    tau_time: int = -1
    tau_outcome: TauOutcome = TauOutcome.NOT_REACHED
    reliable: bool = True

    @property
    def total(self):
        return self.T_blue + self.T_red + self.T_late + self.T_ok

    def covers(self, T):
        return T <= self.total


@dataclass
class TraceStats:
    """Everything one trial reports.

    ``L`` is ``None`` when the red level never rose above its starting value
    of zero. ``genesis_*`` are the last times each colour stopped being good
    (``-1`` if it never did).
    """

    T: int
    decomposition: TimeDecomposition = field(default_factory=TimeDecomposition)
    C: int = 0
    Xi: int = 0
    A: int = 0
    L: int | None = None
    truncated: bool = False
    red_moves: int = 0
    level_ups: int = 0
    max_level: int = 0
    genesis_red: int = -1
    genesis_blue: int = -1
    level_return_violations: int = 0
    watch_events: int = 0
    series: np.ndarray | None = None

    def as_dict(self):
        d = asdict(self)
        d.pop("series")
        d["decomposition"]["tau_outcome"] = int(self.decomposition.tau_outcome)
        return d

    def same_as(self, other):
        """Field-wise equality, ignoring the optional decimated series."""
        return self.as_dict() == other.as_dict()
