"""Exception types shared across the checker."""


class ModelError(Exception):
    """Base class for every error raised by the checker."""


class UnknownLocation(ModelError):
    pass


class DropPort(ModelError):
    pass


class TableFull(ModelError):
    """An interner ran out of its declared id budget."""


class NotEnabled(ModelError):
    """An action was fired in a state where its guard is false."""


class CqOverflow(ModelError):
    """A switch control queue grew past the scenario's bound."""


class ReplayDiverged(ModelError):
    pass


class Inconclusive(ModelError):
    """A bounded search stopped before covering the whole state space."""


class ScenarioError(ModelError):
    """Malformed scenario text or an inconsistent scenario."""

    def __init__(self, errors):
        if isinstance(errors, str):
            errors = [errors]
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))
