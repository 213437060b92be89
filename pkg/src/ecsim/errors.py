"""Exception taxonomy.

Three classes matter to the command line tool, which maps them to exit codes:
config errors -> 2, physics-validity errors -> 3, numeric/solver errors -> 4.
Everything raised by the library derives from EcsimError.
"""


class EcsimError(Exception):
    """Base class for all package errors."""


class ConfigError(EcsimError):
    """Malformed or schema-violating experiment configuration."""

    exit_code = 2


class PhysicsError(EcsimError):
    """Parameter regimes or requests that are physically invalid."""

    exit_code = 3


class NumericError(EcsimError):
    """Numerical trouble: truncation overflow, stiffness, audit failure."""

    exit_code = 4


class InvalidDimensionError(PhysicsError):
    pass


class RegimeError(PhysicsError):
    """Outside the transmon/expansion validity regime."""


class NearNodeError(PhysicsError):
    """Flux bias too close to a node of cos(phi_b); linearization invalid."""


class DomainError(PhysicsError):
    pass


class SequencingError(PhysicsError):
    """Protocol steps inconsistent with the system (e.g. degenerate modes)."""


class ImpossibleOutcomeError(PhysicsError):
    """Projection on an outcome with (numerically) zero probability."""


class TruncationOverflowError(NumericError):
    """State support escaping the truncated Fock space."""


class StiffnessError(NumericError):
    """Adaptive step size underflowed."""


class ReliabilityWarning(UserWarning):
    """Result is produced but part of it falls outside the trusted region.

    Non-fatal (the run still exits 0); the command line layer records these
    in the run manifest.
    """
