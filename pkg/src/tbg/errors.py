"""Exception hierarchy shared by all subpackages."""


class TbgError(Exception):
    """Base class for every error raised by :mod:`tbg`."""


class ContractViolation(TbgError, ValueError):
    """An argument breaks an operation's precondition (shape, length, range)."""


class NumericError(TbgError, ArithmeticError):
    """A NaN (or otherwise unusable number) appeared during a computation.

    ``index`` locates the offending element when known: a tape node index,
    a batch item index, and so on.
    """

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class DivergedIntegration(NumericError):
    """Non-finite state encountered while integrating an ODE."""

    def __init__(self, message, t, last_state=None):
        super().__init__(message)
        self.t = t
        self.last_state = last_state


class DecompositionError(TbgError, ArithmeticError):
    """A matrix factorisation failed (e.g. a non positive-definite metric)."""


class DomainError(TbgError, ValueError):
    """An input lies outside the domain of the requested function."""


class UnknownAtomClass(TbgError, KeyError):
    """An atom has no entry in the atom-class table."""

    def __str__(self):
        return str(self.args[0]) if self.args else "unknown atom class"


class ParseError(TbgError, ValueError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class IntegrityError(TbgError):
    """File content disagrees with its own header (hash, frame count)."""


class VersionError(TbgError):
    """Unsupported file format version."""


class ConfigError(TbgError, ValueError):
    """Inconsistent or incomplete configuration."""


class ConvergenceError(TbgError, RuntimeError):
    """An iterative procedure did not reach its tolerance within budget."""
