"""Exception hierarchy. Every class carries the CLI exit code it maps to."""


class GroupReduceError(Exception):
    exit_code = 1


class InvalidInputError(GroupReduceError, ValueError):
    exit_code = 3


class FormatError(GroupReduceError):
    exit_code = 4


class BadMagicError(FormatError):
    exit_code = 5


class BadVersionError(FormatError):
    exit_code = 6


class TruncatedError(FormatError):
    exit_code = 7


class PartitionError(FormatError):
    exit_code = 8


class FrequencyFileError(GroupReduceError):
    exit_code = 9
