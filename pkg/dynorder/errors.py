"""
Exception hierarchy shared by all dynorder modules.

Each base class carries the process exit code the command line reports when
an exception of that family escapes a command.
"""


class DynorderException(Exception):
    exit_code = 1


class DataIOException(DynorderException):
    exit_code = 2


class ValidationException(DynorderException):
    exit_code = 3


class NumericException(DynorderException):
    exit_code = 4
