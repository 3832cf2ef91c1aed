class DHTestError(Exception):
    pass


class UnknownVariableError(DHTestError, KeyError):
    pass


class ShapeMismatchError(DHTestError, ValueError):
    pass


class DomainError(DHTestError, ValueError):
    pass


class CardinalityError(DHTestError):
    pass


class NotConditionallyIndependentError(DHTestError):
    pass


class ChannelConstraintError(DHTestError):
    pass


class UntractableRegionError(DHTestError):
    pass


class InvalidCouplingError(DHTestError):
    pass


class SimulationConfigError(DHTestError):
    pass


class InsufficientDataError(DHTestError):
    pass
