"""Exception types shared across the toolkit."""


class CtktError(Exception):
    """Base class for all toolkit errors."""


class DimensionError(CtktError):
    """Shapes of the operands do not agree."""


class DomainError(CtktError):
    """Value outside the mathematical domain of the operation."""


class ContractError(CtktError):
    """A documented precondition was violated by the caller."""


class DegenerateRowError(CtktError):
    """A softmax row (or attention query) has no finite/allowed entry."""


class DegenerateWeightsError(CtktError):
    """Weight vector sums to (numerically) zero and cannot be rescaled."""


class DegenerateVectorError(CtktError):
    """A vector with ~zero norm was passed where a direction is required."""


class InfeasibleAlignmentError(CtktError):
    """Target cannot be aligned to the given number of frames."""


class InternalInvariantError(CtktError):
    """An internal consistency check failed; indicates a bug."""


class CheckpointError(CtktError):
    """Checkpoint file is malformed or fails its checksum."""


class ConfigError(CtktError):
    """Experiment config file is malformed, unknown or incomplete."""
