class ApertureError(Exception):
    exit_code = 1


class ConfigError(ApertureError):
    exit_code = 2


class DomainError(ConfigError):
    pass


class DatasetIOError(ApertureError):
    exit_code = 3


class NumericError(ApertureError):
    exit_code = 4


class DegenerateInputError(NumericError):
    pass


class SingularityError(NumericError):
    pass
