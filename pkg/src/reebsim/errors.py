"""Exception hierarchy.

Every error raised by the library derives from :class:`ReebSimError` so the
CLI can map it to an exit code in one place.
"""


class ReebSimError(Exception):
    """Base class for all library errors."""


class ConfigInvalid(ReebSimError):
    """Experiment configuration failed validation."""

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


# morse
class DegenerateCritical(ReebSimError):
    pass


class NoConvergence(ReebSimError):
    pass


class OddDimension(ReebSimError):
    pass


# reeb
class NotATree(ReebSimError):
    pass


class VertexCountMismatch(ReebSimError):
    pass


class UnsupportedKinetic(ReebSimError):
    pass


class PDimTooSmall(ReebSimError):
    pass


# coeffs
class DegenerateDiffusion(ReebSimError):
    pass


class EmptyDomain(ReebSimError):
    pass


class ExtrapolationUnstable(ReebSimError):
    pass


class AssumptionA6Violated(ReebSimError):
    pass


class AmbiguousSign(ReebSimError):
    pass


class AssumptionA8Violated(ReebSimError):
    pass


class CycleDetected(ReebSimError):
    pass


# sde
class StepTooLarge(ReebSimError):
    pass


class BoxExit(ReebSimError):
    pass


class LevelDrift(ReebSimError):
    pass


class Timeout(ReebSimError):
    pass


# graphdiff
class CoefficientGap(ReebSimError):
    pass


class ClockStall(ReebSimError):
    pass


class SolverSingular(ReebSimError):
    pass


# limit
class StuckAtZero(ReebSimError):
    pass


class EmptyShell(ReebSimError):
    pass
