"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class ReidError(Exception):
    exit_code = 1


class InvalidImage(ReidError, ValueError):
    exit_code = 3


class FormatError(ReidError, ValueError):
    exit_code = 4


class DegenerateRegions(ReidError, ValueError):
    exit_code = 5


class InvalidBox(ReidError, ValueError):
    exit_code = 5


class FusionError(ReidError, ValueError):
    exit_code = 6


class SelectionError(ReidError, ValueError):
    exit_code = 6


class InsufficientPairs(ReidError):
    exit_code = 7


class NumericalError(ReidError, ArithmeticError):
    exit_code = 8


class DimError(ReidError, ValueError):
    exit_code = 9


class ProtocolError(ReidError):
    exit_code = 10

    def __init__(self, message, identities=()):
        super().__init__(message)
        self.identities = sorted(set(int(i) for i in identities))


class FilenameError(ReidError, ValueError):
    """Image filename does not follow the Market/Duke naming convention."""
    exit_code = 11


class LayoutError(ReidError):
    exit_code = 12


class UnknownKey(ReidError, KeyError):
    exit_code = 13


class ExtractionFailed(ReidError):
    exit_code = 14
