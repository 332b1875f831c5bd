"""Exception hierarchy shared by the library and the CLI.

The CLI maps each family onto a process exit code, so new errors should
subclass one of the families below rather than ``Exception`` directly.
"""


class ExpStackError(Exception):
    """Base class for all library errors."""


class DataContractError(ExpStackError):
    """Input data violates a documented contract (shapes, metadata, ranges)."""


class InvalidMetadataError(DataContractError, ValueError):
    pass


class MissingMetadataError(DataContractError):
    pass


class ShapeMismatchError(DataContractError, ValueError):
    pass


class UnreadableFileError(DataContractError, OSError):
    pass


class NoiseDomainError(DataContractError, ValueError):
    """A noise-model function was evaluated outside its domain."""


class UnknownISOError(DataContractError, KeyError):
    def __init__(self, iso, available):
        self.iso = iso
        self.available = sorted(available)
        super().__init__(f"ISO {iso} not in noise profile; available ISOs: {self.available}")

    def __str__(self):
        return self.args[0]


class UnsolvableSystemError(ExpStackError):
    """The exposure graph is disconnected and no prior can pin the solution."""

    def __init__(self, message, unreachable=()):
        self.unreachable = tuple(unreachable)
        super().__init__(message)


class AllTilesRejectedWarning(UserWarning):
    """Every tile failed the outlier test; the estimate fell back to the prior."""


class DisconnectedPairWarning(UserWarning):
    """A consecutive exposure pair has no jointly valid pixel in a tile."""
