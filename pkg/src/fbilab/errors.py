"""Exception hierarchy shared by all fbilab modules."""


class FbiLabError(Exception):
    """Base class for every error raised by fbilab."""


class StructuralError(FbiLabError):
    """Objects that must live on the same grid or jet space do not."""


class DomainError(FbiLabError, ValueError):
    """An argument lies outside the region where an evaluator is valid."""


class DegenerateInputError(FbiLabError, ValueError):
    """Input that makes the requested quantity meaningless (zero norms, etc.)."""


class CapabilityError(FbiLabError):
    """The request exceeds what the supplied evaluators can provide."""


class ConfigurationError(FbiLabError, ValueError):
    """Grid or experiment parameters are inconsistent."""


class PreconditionError(FbiLabError):
    """A smallness gate or other hypothesis of an experiment failed."""


class HypothesisError(PreconditionError):
    """A structural hypothesis of a construction (e.g. a bracket sign) fails."""


class ConstructionError(FbiLabError):
    """A numerical construction finished but missed its own tolerance."""
