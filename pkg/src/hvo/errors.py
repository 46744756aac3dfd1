"""Exception types shared across the package."""


class HvoError(Exception):
    """Base class for all package errors."""


class ParseError(HvoError):
    """A file could not be parsed (malformed CSV/JSON, truncated data)."""


class ValidationError(HvoError):
    """Parsed data violates a structural invariant (e.g. non-increasing time)."""


class InvalidArgument(HvoError):
    """An argument is outside its documented domain."""


class OutOfRange(HvoError):
    """Interpolation query outside the table bounding box."""


class MissionInfeasible(HvoError):
    """The mission cannot be met by the plant (envelope violated)."""


class AllInfeasible(HvoError):
    """Backward DP pass found no finite value at any first-stage state."""


class DeadEnd(HvoError):
    """Forward rollout reached a state with no feasible control."""

    def __init__(self, stage: int, message: str = ""):
        self.stage = stage
        super().__init__(message or f"no feasible control at stage {stage}")


class NoFeasibleRatio(HvoError):
    """No candidate transmission ratio keeps the motor inside its envelope."""
