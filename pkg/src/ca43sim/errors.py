"""Exception hierarchy shared by all simulator modules."""


class SimulationError(Exception):
    """Base class for physics-domain failures (CLI exit code 3)."""


class StructureError(SimulationError, ValueError):
    """A level, transition or basis is not representable."""


class DomainError(SimulationError, ValueError):
    """An argument lies outside the validity window of a model."""


class DegenerateFitError(SimulationError):
    """The normal matrix of a least-squares fit is singular."""


class ConfigError(Exception):
    """Invalid configuration or constants file (CLI exit code 2).

    ``line`` is the 1-based line number in the offending file when known.
    """

    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where = f"{path}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}" if where else message)
