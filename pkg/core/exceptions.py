"""Error hierarchy shared by the domain modules and the management commands.

Every error carries the process exit code the commands report for it.
"""


class TactagError(Exception):
    exit_code = 2

    def __init__(self, message, *, path=None):
        self.path = path
        if path is not None:
            message = f"{message} [{path}]"
        super().__init__(message)


class ConfigurationError(TactagError, ValueError):
    pass


class GridError(TactagError, ValueError):
    pass


class InvalidPatternError(TactagError, ValueError):
    pass


class InfeasiblePatternError(TactagError, ValueError):
    pass


class MaskError(TactagError, ValueError):
    pass


class EmptyMaskError(MaskError):
    pass


class MaskMismatchError(MaskError):
    pass


class MeshError(TactagError, ValueError):
    pass


class ExportError(TactagError, OSError):
    pass


class ImprintOutsideWindowError(TactagError, ValueError):
    pass


class LibraryError(TactagError):
    pass


class LibraryFileError(LibraryError):
    """A manifest or an entry file is missing, unreadable or corrupt."""


class ManifestVersionError(LibraryError):
    pass


class ManifestFormatError(LibraryError):
    pass


class DispersionError(LibraryError):
    pass


class HuConsistencyError(LibraryError):
    pass


class NumericalError(TactagError):
    exit_code = 3


class RegistrationError(NumericalError):
    pass


class DegenerateGeometryError(RegistrationError):
    pass
