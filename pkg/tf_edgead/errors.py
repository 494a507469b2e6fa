"""
Base classes for the errors and warnings raised by :mod:`tf_edgead`.

Concrete errors are declared next to the code raising them. The command line
prints ``error <code>: <message>`` and exits with ``exit_status``.
"""


class EdgeADError(Exception):
    """Root of all library errors."""

    exit_status = 1

    @property
    def code(self):
        return type(self).__name__


class UsageError(EdgeADError):
    """Errors caused by how the program was invoked."""

    exit_status = 2


class EdgeADWarning(UserWarning):
    pass
